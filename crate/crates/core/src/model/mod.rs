//! Feature extractor plus head, for the graph variants and the linear baseline.
//!
//! Graph forward order: build the adjacency from unperturbed embeddings,
//! normalize it, then perturb per mask state and run the GCN. Images that
//! share a mask state share one GCN pass.

mod checkpoint;
mod extractor;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, parse_checkpoint, render_checkpoint, save_checkpoint, CHECKPOINT_VERSION};
pub use extractor::Extractor;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::graph_head::{predict_activated, prototype_embeddings, GraphHead, GraphHeadConfig, GraphPass, MaskState};
use crate::numerics::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::objectives::linear_head_activated;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelVariant {
    #[default]
    Ssg,
    SsgPrototype,
    SsgNoMask,
    Linear,
}

impl ModelVariant {
    pub fn name(self) -> &'static str {
        match self {
            ModelVariant::Ssg => "ssg",
            ModelVariant::SsgPrototype => "ssg_prototype",
            ModelVariant::SsgNoMask => "ssg_no_mask",
            ModelVariant::Linear => "linear",
        }
    }

    pub fn is_graph(self) -> bool {
        self != ModelVariant::Linear
    }
}

impl fmt::Display for ModelVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ssg" => Ok(Self::Ssg),
            "ssg_prototype" => Ok(Self::SsgPrototype),
            "ssg_no_mask" => Ok(Self::SsgNoMask),
            "linear" => Ok(Self::Linear),
            other => Err(format!(
                "unknown variant `{other}` (ssg, ssg_prototype, ssg_no_mask, linear)"
            )),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub variant: ModelVariant,
    pub input_dim: usize,
    pub extractor_hidden: Vec<usize>,
    pub graph: GraphHeadConfig,
    /// Prototype variant only: keep the category rows fixed at their prototypes.
    pub freeze_prototypes: bool,
}

#[derive(Clone, Debug)]
pub struct LinearHeads {
    pub w_sup: ParamId,
    pub w_ss: ParamId,
}

#[derive(Clone, Debug)]
pub enum Head {
    Graph(GraphHead),
    Linear(LinearHeads),
}

/// Category and domain logits on the tape; categories come first in the
/// node order, so the split is by column block.
#[derive(Clone, Copy, Debug)]
pub struct ForwardOutput {
    pub category: Var,
    pub domain: Var,
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub extractor: Extractor,
    pub head: Head,
}

impl Model {
    /// Initializes every parameter from `rng`. The prototype variant also
    /// needs the dataset, whose source samples define the category rows.
    pub fn init<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R, data: Option<&Dataset>) -> Result<Self> {
        config.graph.validate()?;
        let mut store = ParamStore::new();
        let extractor = Extractor::init(
            config.input_dim,
            &config.extractor_hidden,
            config.graph.feature_dim,
            &mut store,
            rng,
        )?;
        let head = if config.variant.is_graph() {
            Head::Graph(GraphHead::init(config.graph.clone(), &mut store, rng)?)
        } else {
            let (c, n, big_d) = (config.graph.n_classes, config.graph.n_domains, config.graph.feature_dim);
            let std = (1.0 / big_d as f64).sqrt();
            let w_sup = store.add("linear.w_sup", Tensor::randn(&[c, big_d], std, rng));
            let w_ss = store.add("linear.w_ss", Tensor::randn(&[n, big_d], std, rng));
            Head::Linear(LinearHeads { w_sup, w_ss })
        };
        let mut model = Self {
            config,
            store,
            extractor,
            head,
        };
        if model.config.variant == ModelVariant::SsgPrototype {
            let ds = data.ok_or_else(|| {
                Error::Contract("the prototype variant needs source data to initialize".into())
            })?;
            model.set_prototypes(ds)?;
        }
        Ok(model)
    }

    /// Category rows of `Z` become per-class means of extractor outputs
    /// over source samples.
    pub fn set_prototypes(&mut self, ds: &Dataset) -> Result<()> {
        let Head::Graph(head) = &self.head else {
            return Err(Error::Contract("prototypes apply to graph heads only".into()));
        };
        if head.config.embed_dim != head.config.feature_dim {
            return Err(Error::config(
                "embed_dim",
                format!(
                    "prototype embeddings need embed_dim == feature_dim ({} != {})",
                    head.config.embed_dim, head.config.feature_dim
                ),
            ));
        }
        let src = ds.source_indices();
        if src.is_empty() {
            return Err(Error::Degenerate("no source samples for prototypes".into()));
        }
        let labels: Vec<usize> = src
            .iter()
            .map(|&i| ds.samples()[i].label.expect("source samples are labeled"))
            .collect();
        let feats = self.extractor.apply(&self.store, &ds.features(&src))?;
        let protos = prototype_embeddings(&feats, &labels, head.config.n_classes)?;
        let z_cat = head.z_cat;
        self.store.get_mut(z_cat).set_value(protos);
        Ok(())
    }

    pub fn variant(&self) -> ModelVariant {
        self.config.variant
    }

    pub fn n_classes(&self) -> usize {
        self.config.graph.n_classes
    }

    pub fn n_domains(&self) -> usize {
        self.config.graph.n_domains
    }

    /// Parameters the optimizer updates. `S` is never among them.
    pub fn trainable_parameters(&self) -> Vec<ParamId> {
        let mut ids = self.extractor.param_ids();
        match &self.head {
            Head::Graph(g) => {
                let frozen = self.config.variant == ModelVariant::SsgPrototype && self.config.freeze_prototypes;
                if !frozen {
                    ids.push(g.z_cat);
                }
                ids.push(g.z_dom);
                ids.extend(&g.weights);
            }
            Head::Linear(l) => ids.extend([l.w_sup, l.w_ss]),
        }
        ids
    }

    pub fn trainable_scalar_count(&self) -> usize {
        self.trainable_parameters()
            .iter()
            .map(|&id| self.store.value(id).numel())
            .sum()
    }

    fn split(&self, tape: &mut Tape, logits: Var) -> Result<ForwardOutput> {
        let (c, n) = (self.n_classes(), self.n_domains());
        Ok(ForwardOutput {
            category: tape.slice_cols(logits, 0, c)?,
            domain: tape.slice_cols(logits, c, c + n)?,
        })
    }

    /// Extractor output after ReLU, which both head types consume.
    fn activated_features(&self, tape: &mut Tape, store: &ParamStore, x: &Tensor) -> Result<Var> {
        if x.cols() != self.extractor.input_dim || x.shape().len() != 2 {
            return Err(Error::dim("forward", x.shape(), &[self.extractor.input_dim]));
        }
        let xv = tape.constant(x.clone());
        let f = self.extractor.forward(tape, store, xv)?;
        tape.relu(f)
    }

    /// Forward pass for either head type. `masks` is `Some` in training
    /// mode (graph heads only) and must hold one state per row of `x`.
    pub fn forward(&self, tape: &mut Tape, x: &Tensor, masks: Option<&[MaskState]>) -> Result<ForwardOutput> {
        self.forward_with(&self.store, tape, x, masks)
    }

    /// [`Model::forward`] reading parameter values from `store`, which must
    /// have this model's layout.
    pub fn forward_with(
        &self,
        store: &ParamStore,
        tape: &mut Tape,
        x: &Tensor,
        masks: Option<&[MaskState]>,
    ) -> Result<ForwardOutput> {
        match &self.head {
            Head::Graph(g) => self.forward_ssg(store, tape, g, x, masks),
            Head::Linear(l) => self.forward_linear(store, tape, l, x),
        }
    }

    fn forward_ssg(
        &self,
        store: &ParamStore,
        tape: &mut Tape,
        head: &GraphHead,
        x: &Tensor,
        masks: Option<&[MaskState]>,
    ) -> Result<ForwardOutput> {
        let act = self.activated_features(tape, store, x)?;
        let pass = head.begin(tape, store)?;
        let rows = x.rows();
        let logits = match masks {
            None => {
                let zp = head.node_features(tape, &pass, &MaskState::masked(0))?;
                predict_activated(tape, zp, act)?
            }
            Some(masks) => {
                if masks.len() != rows {
                    return Err(Error::dim("forward_ssg", &[rows], &[masks.len()]));
                }
                grouped_logits(tape, head, &pass, act, masks)?
            }
        };
        self.split(tape, logits)
    }

    /// Reference path: one GCN pass per image, no sharing.
    pub fn forward_per_image(&self, tape: &mut Tape, x: &Tensor, masks: &[MaskState]) -> Result<ForwardOutput> {
        let Head::Graph(head) = &self.head else {
            return Err(Error::Contract("per-image forward applies to graph heads only".into()));
        };
        if masks.len() != x.rows() {
            return Err(Error::dim("forward_per_image", &[x.rows()], &[masks.len()]));
        }
        let act = self.activated_features(tape, &self.store, x)?;
        let pass = head.begin(tape, &self.store)?;
        let mut parts = Vec::with_capacity(masks.len());
        for (i, mask) in masks.iter().enumerate() {
            let row = tape.gather_rows(act, &[i])?;
            let zp = head.node_features(tape, &pass, mask)?;
            parts.push(predict_activated(tape, zp, row)?);
        }
        let logits = tape.concat_rows(&parts)?;
        self.split(tape, logits)
    }

    fn forward_linear(
        &self,
        store: &ParamStore,
        tape: &mut Tape,
        heads: &LinearHeads,
        x: &Tensor,
    ) -> Result<ForwardOutput> {
        let act = self.activated_features(tape, store, x)?;
        let w_sup = tape.param(store, heads.w_sup);
        let w_ss = tape.param(store, heads.w_ss);
        let (category, domain) = linear_head_activated(tape, act, w_sup, w_ss)?;
        Ok(ForwardOutput { category, domain })
    }

    /// Normalized adjacency of the current embeddings, as the forward pass sees it.
    pub fn normalized_adjacency(&self) -> Result<Option<Tensor>> {
        let Head::Graph(head) = &self.head else { return Ok(None) };
        let mut tape = Tape::new();
        let pass = head.begin(&mut tape, &self.store)?;
        Ok(Some(tape.value(pass.a_hat).clone()))
    }

    /// Category and domain logits without recording gradients, all images masked.
    pub fn predict(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, x, None)?;
        Ok((tape.value(out.category).clone(), tape.value(out.domain).clone()))
    }

    /// Named parameter values in store order.
    pub fn named_parameters(&self) -> Vec<(String, Tensor)> {
        self.store
            .iter()
            .map(|(_, p)| (p.name().to_string(), p.value().clone()))
            .collect()
    }

    /// Overwrites parameters by name; names and shapes must match exactly.
    pub fn load_parameters(&mut self, named: &[(String, Tensor)]) -> Result<()> {
        if named.len() != self.store.len() {
            return Err(Error::Contract(format!(
                "checkpoint holds {} tensors, model has {}",
                named.len(),
                self.store.len()
            )));
        }
        for (name, value) in named {
            let id = self
                .store
                .find(name)
                .ok_or_else(|| Error::Contract(format!("checkpoint tensor `{name}` not in model")))?;
            let current = self.store.value(id).shape();
            if current != value.shape() {
                return Err(Error::dim("load_parameters", current, value.shape()));
            }
            self.store.get_mut(id).set_value(value.clone());
        }
        Ok(())
    }
}

/// Logits for a batch where each image may have its own perturbation.
fn grouped_logits(tape: &mut Tape, head: &GraphHead, pass: &GraphPass, act: Var, masks: &[MaskState]) -> Result<Var> {
    let mut groups: BTreeMap<Option<(usize, Option<usize>)>, Vec<usize>> = BTreeMap::new();
    for (i, m) in masks.iter().enumerate() {
        groups.entry(m.perturbation_key()).or_default().push(i);
    }
    if groups.len() == 1 {
        let mask = masks[0];
        let zp = head.node_features(tape, pass, &mask)?;
        return predict_activated(tape, zp, act);
    }
    let mut parts = Vec::with_capacity(groups.len());
    let mut position = vec![0usize; masks.len()];
    let mut offset = 0;
    for rows in groups.values() {
        let mask = masks[rows[0]];
        let zp = head.node_features(tape, pass, &mask)?;
        let sub = tape.gather_rows(act, rows)?;
        parts.push(predict_activated(tape, zp, sub)?);
        for (k, &r) in rows.iter().enumerate() {
            position[r] = offset + k;
        }
        offset += rows.len();
    }
    let stacked = tape.concat_rows(&parts)?;
    tape.gather_rows(stacked, &position)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    fn config(variant: ModelVariant) -> ModelConfig {
        ModelConfig {
            variant,
            input_dim: 5,
            extractor_hidden: vec![8],
            graph: GraphHeadConfig {
                n_domains: 3,
                n_classes: 4,
                embed_dim: 8,
                feature_dim: 16,
                layers: 2,
                ..GraphHeadConfig::default()
            },
            freeze_prototypes: true,
        }
    }

    #[test]
    fn embedding_scalar_count() {
        let m = Model::init(config(ModelVariant::Ssg), &mut seed::rng(0, "init"), None).unwrap();
        let Head::Graph(g) = &m.head else { panic!() };
        let z: usize = [g.z_cat, g.z_dom].iter().map(|&id| m.store.value(id).numel()).sum();
        assert_eq!(z, 56);
        let ids = m.trainable_parameters();
        assert!(ids.contains(&g.z_cat) && ids.contains(&g.z_dom));
        assert!(g.weights.iter().all(|w| ids.contains(w)));
    }

    #[test]
    fn linear_excludes_graph_parameters() {
        let m = Model::init(config(ModelVariant::Linear), &mut seed::rng(0, "init"), None).unwrap();
        assert!(m.trainable_parameters().iter().all(|&id| {
            let name = m.store.get(id).name();
            !name.starts_with("graph.")
        }));
        assert_eq!(m.trainable_parameters().len(), m.store.len());
    }

    #[test]
    fn prototype_needs_data_and_square_dims() {
        let err = Model::init(config(ModelVariant::SsgPrototype), &mut seed::rng(0, "init"), None).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn variant_names_round_trip() {
        for v in [
            ModelVariant::Ssg,
            ModelVariant::SsgPrototype,
            ModelVariant::SsgNoMask,
            ModelVariant::Linear,
        ] {
            assert_eq!(v.name().parse::<ModelVariant>().unwrap(), v);
        }
        assert!("gcn".parse::<ModelVariant>().is_err());
    }

    #[test]
    fn mask_count_must_match_batch() {
        let m = Model::init(config(ModelVariant::Ssg), &mut seed::rng(0, "init"), None).unwrap();
        let x = Tensor::zeros(&[3, 5]);
        let mut tape = Tape::new();
        assert!(m.forward(&mut tape, &x, Some(&[MaskState::masked(0)])).is_err());
        let bad_width = Tensor::zeros(&[3, 4]);
        assert!(m.forward(&mut tape, &bad_width, None).is_err());
    }
}
