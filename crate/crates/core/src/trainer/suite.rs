use rayon::prelude::*;

use crate::config::ExperimentConfig;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::ModelVariant;
use crate::trainer::{train, MetricsRecord};

/// The rows of the ablation table.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AblationVariant {
    SourceOnly,
    SourceTarget,
    SourceSelfSupervised,
    Ssg,
    SsgPrototype,
    SsgNoMask,
    Linear,
}

pub fn ablation_variants() -> [AblationVariant; 7] {
    use AblationVariant::*;
    [SourceOnly, SourceTarget, SourceSelfSupervised, Ssg, SsgPrototype, SsgNoMask, Linear]
}

impl AblationVariant {
    pub fn name(self) -> &'static str {
        match self {
            AblationVariant::SourceOnly => "l_src",
            AblationVariant::SourceTarget => "l_src+l_tgt",
            AblationVariant::SourceSelfSupervised => "l_src+l_ss",
            AblationVariant::Ssg => "ssg",
            AblationVariant::SsgPrototype => "ssg_prototype",
            AblationVariant::SsgNoMask => "ssg_no_mask",
            AblationVariant::Linear => "linear",
        }
    }

    /// The base config adjusted for this row. Loss-subset rows keep the
    /// graph head.
    pub fn configure(self, base: &ExperimentConfig) -> ExperimentConfig {
        let mut cfg = base.clone();
        cfg.drop_tgt_loss = false;
        cfg.drop_ss_loss = false;
        cfg.variant = ModelVariant::Ssg;
        match self {
            AblationVariant::SourceOnly => {
                cfg.drop_tgt_loss = true;
                cfg.drop_ss_loss = true;
            }
            AblationVariant::SourceTarget => cfg.drop_ss_loss = true,
            AblationVariant::SourceSelfSupervised => cfg.drop_tgt_loss = true,
            AblationVariant::Ssg => {}
            AblationVariant::SsgPrototype => cfg.variant = ModelVariant::SsgPrototype,
            AblationVariant::SsgNoMask => cfg.variant = ModelVariant::SsgNoMask,
            AblationVariant::Linear => cfg.variant = ModelVariant::Linear,
        }
        cfg
    }
}

#[derive(Clone, Debug)]
pub struct AblationRow {
    pub variant: AblationVariant,
    pub seeds: Vec<u64>,
    /// Final-epoch target accuracy per seed.
    pub accuracies: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation across seeds.
    pub std: f64,
    pub metrics: Vec<Vec<MetricsRecord>>,
}

fn final_target_acc(metrics: &[MetricsRecord]) -> f64 {
    metrics.last().map_or(0.0, |m| m.target_acc)
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

/// Trains every ablation row under every seed; runs execute in parallel.
pub fn run_ablation_suite(base: &ExperimentConfig, ds: &Dataset, seeds: &[u64]) -> Result<Vec<AblationRow>> {
    if seeds.len() < 3 {
        return Err(Error::config("seeds", format!("the ablation suite needs at least 3 seeds, got {}", seeds.len())));
    }
    let jobs: Vec<(AblationVariant, u64)> = ablation_variants()
        .into_iter()
        .flat_map(|v| seeds.iter().map(move |&s| (v, s)))
        .collect();
    let results: Vec<Vec<MetricsRecord>> = jobs
        .par_iter()
        .map(|&(v, s)| {
            let mut cfg = v.configure(base);
            cfg.seed = s;
            train(&cfg, ds)
                .map(|o| o.metrics)
                .map_err(|e| Error::Training(format!("{} (seed {s}): {e}", v.name())))
        })
        .collect::<Result<_>>()?;

    Ok(ablation_variants()
        .iter()
        .zip(results.chunks(seeds.len()))
        .map(|(&variant, runs)| {
            let accuracies: Vec<f64> = runs.iter().map(|m| final_target_acc(m)).collect();
            let (mean, std) = mean_std(&accuracies);
            AblationRow {
                variant,
                seeds: seeds.to_vec(),
                accuracies,
                mean,
                std,
                metrics: runs.to_vec(),
            }
        })
        .collect())
}

#[derive(Clone, Debug)]
pub struct SweepRun {
    pub ratio: f64,
    pub metrics: Vec<MetricsRecord>,
}

/// One run per mask ratio, all with the config's seed.
pub fn run_mask_sweep(config: &ExperimentConfig, ds: &Dataset, ratios: &[f64]) -> Result<Vec<SweepRun>> {
    if ratios.is_empty() {
        return Err(Error::config("ratios", "at least one mask ratio is needed"));
    }
    if let Some(r) = ratios.iter().find(|r| !(0.0..=1.0).contains(*r)) {
        return Err(Error::config("ratios", format!("mask ratios must be in [0, 1], got {r}")));
    }
    ratios
        .par_iter()
        .map(|&ratio| {
            let mut cfg = config.clone();
            cfg.mask_ratio = ratio;
            train(&cfg, ds).map(|o| SweepRun {
                ratio,
                metrics: o.metrics,
            })
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct CompareRun {
    pub variant: ModelVariant,
    pub seed: u64,
    pub metrics: Vec<MetricsRecord>,
}

/// Graph head against the linear head under identical settings, per seed.
pub fn run_compare(config: &ExperimentConfig, ds: &Dataset, seeds: &[u64]) -> Result<Vec<CompareRun>> {
    let jobs: Vec<(ModelVariant, u64)> = [ModelVariant::Ssg, ModelVariant::Linear]
        .into_iter()
        .flat_map(|v| seeds.iter().map(move |&s| (v, s)))
        .collect();
    jobs.par_iter()
        .map(|&(variant, seed)| {
            let mut cfg = config.clone();
            cfg.variant = variant;
            cfg.seed = seed;
            train(&cfg, ds).map(|o| CompareRun {
                variant,
                seed,
                metrics: o.metrics,
            })
        })
        .collect()
}
