//! Multi-domain datasets: synthetic generation, CSV feature files, batching.
//!
//! One domain is the target. Its true labels never appear on a [`Sample`];
//! they are kept in a private table that only evaluation code can read.

mod batching;
mod features;
mod synthetic;

use std::collections::BTreeMap;

pub use batching::{make_batches, Batch, BatchPlan};
pub use features::{
    fmt_f64, load_feature_file, parse_feature_file, render_feature_file, write_feature_file, FeatureFile,
    FEATURE_FILE_VERSION,
};
pub use synthetic::{generate_synthetic, DomainTransform, ShiftLevel, SyntheticSpec};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: u64,
    pub features: Vec<f64>,
    pub domain: usize,
    /// `None` for unlabeled (target) samples.
    pub label: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq)]
struct HeldOutLabels(BTreeMap<usize, usize>);

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    n_domains: usize,
    n_classes: usize,
    dim: usize,
    target_domain: usize,
    samples: Vec<Sample>,
    held_out: HeldOutLabels,
}

impl Dataset {
    /// Builds a dataset from fully labeled rows; labels on `target_domain`
    /// rows are moved to the held-out table. Target rows may be unlabeled,
    /// source rows may not.
    pub fn new(
        n_domains: usize,
        n_classes: usize,
        dim: usize,
        target_domain: usize,
        rows: Vec<Sample>,
    ) -> Result<Self> {
        if target_domain >= n_domains {
            return Err(Error::Index {
                what: "target_domain",
                index: target_domain,
                bound: n_domains,
            });
        }
        let mut held_out = HeldOutLabels::default();
        let mut samples = Vec::with_capacity(rows.len());
        for (row, mut s) in rows.into_iter().enumerate() {
            if s.features.len() != dim {
                return Err(Error::dim("Dataset::new", &[dim], &[s.features.len()]));
            }
            if s.domain >= n_domains {
                return Err(Error::Index {
                    what: "domain",
                    index: s.domain,
                    bound: n_domains,
                });
            }
            if let Some(label) = s.label {
                if label >= n_classes {
                    return Err(Error::Label {
                        label,
                        bound: n_classes,
                        row,
                    });
                }
            }
            if s.domain == target_domain {
                if let Some(label) = s.label.take() {
                    held_out.0.insert(samples.len(), label);
                }
            } else if s.label.is_none() {
                return Err(Error::Degenerate(format!(
                    "sample {} in source domain {} has no label",
                    s.id, s.domain
                )));
            }
            samples.push(s);
        }
        Ok(Self {
            n_domains,
            n_classes,
            dim,
            target_domain,
            samples,
            held_out,
        })
    }

    pub fn n_domains(&self) -> usize {
        self.n_domains
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn target_domain(&self) -> usize {
        self.target_domain
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn source_indices(&self) -> Vec<usize> {
        (0..self.samples.len())
            .filter(|&i| self.samples[i].domain != self.target_domain)
            .collect()
    }

    pub fn target_indices(&self) -> Vec<usize> {
        (0..self.samples.len())
            .filter(|&i| self.samples[i].domain == self.target_domain)
            .collect()
    }

    /// Number of target samples that carry an evaluation label.
    pub fn held_out_count(&self) -> usize {
        self.held_out.0.len()
    }

    /// Evaluation-only access to the held-out label of sample `index`.
    pub(crate) fn held_out_label(&self, index: usize) -> Option<usize> {
        self.held_out.0.get(&index).copied()
    }

    /// Label as written to a feature file: held-out labels included.
    pub(crate) fn export_label(&self, index: usize) -> Option<usize> {
        self.samples[index].label.or_else(|| self.held_out_label(index))
    }

    /// Row-stacked features of the given samples.
    pub fn features(&self, indices: &[usize]) -> Tensor {
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            data.extend_from_slice(&self.samples[i].features);
        }
        Tensor::new(&[indices.len(), self.dim], data).expect("non-empty feature selection")
    }
}
