//! Training and evaluation loop, plus the suite/sweep/compare harnesses.
//!
//! One master seed fans out into named streams: `init` for parameters,
//! `mask` for reveal draws, `shuffle` for batch order.

mod gradcheck;
mod metrics;
mod suite;

use serde::{Deserialize, Serialize};

pub use gradcheck::{fixed_reveal_pattern, gradient_check, GRADCHECK_STEP, GRADCHECK_TOLERANCE};
pub use metrics::{curves_csv, parse_metrics_jsonl, render_metrics_jsonl, summary_csv, CURVE_COLUMNS};
pub use suite::{
    ablation_variants, run_ablation_suite, run_compare, run_mask_sweep, AblationRow, AblationVariant, CompareRun,
    SweepRun,
};

use crate::config::ExperimentConfig;
use crate::data::{make_batches, Batch, BatchPlan, Dataset};
use crate::error::{Error, Result};
use crate::graph_head::MaskState;
use crate::model::Model;
use crate::numerics::{sgd_step, Tape, Tensor};
use crate::objectives::{combine, multitask_on_tape, source_ce, ss_domain_ce, target_entropy};
use crate::seed;

/// One epoch of training. Losses are sample-weighted means over the
/// epoch's batches; a dropped term is recorded as 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub l_src: f64,
    pub l_tgt: f64,
    pub l_ss: f64,
    pub l_total: f64,
    /// Category accuracy on source images during training.
    pub source_acc: f64,
    /// Domain accuracy on all images during training, masks applied.
    pub domain_acc: f64,
    /// Category accuracy on held-out target labels after the epoch.
    pub target_acc: f64,
    /// Fraction of images whose domain was revealed this epoch.
    pub reveal_rate: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Model,
    pub metrics: Vec<MetricsRecord>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Evaluation {
    /// 0 when no target sample carries a held-out label.
    pub target_acc: f64,
    pub domain_acc: f64,
    pub target_labeled: usize,
}

/// Per-batch loss values and counts, folded into epoch means.
#[derive(Default)]
struct EpochTally {
    src_loss: f64,
    tgt_loss: f64,
    ss_loss: f64,
    n_src: usize,
    n_tgt: usize,
    n_all: usize,
    src_correct: usize,
    dom_correct: usize,
    revealed: usize,
}

pub fn batch_plan(config: &ExperimentConfig) -> BatchPlan {
    BatchPlan {
        batch_size: config.batch_size,
        source_share: config.source_share,
        seed: seed::derive(config.seed, "shuffle"),
    }
}

/// Initializes a model for `config` on `ds` from the `init` stream.
pub fn init_model(config: &ExperimentConfig, ds: &Dataset) -> Result<Model> {
    let mut rng = seed::rng(config.seed, "init");
    Model::init(config.model_config(ds.dim()), &mut rng, Some(ds))
}

fn check_compatible(config: &ExperimentConfig, ds: &Dataset) -> Result<()> {
    if ds.n_domains() != config.n_domains {
        return Err(Error::config(
            "n_domains",
            format!("config says {}, data has {}", config.n_domains, ds.n_domains()),
        ));
    }
    if ds.n_classes() != config.n_classes {
        return Err(Error::config(
            "n_classes",
            format!("config says {}, data has {}", config.n_classes, ds.n_classes()),
        ));
    }
    if ds.source_indices().is_empty() {
        return Err(Error::Degenerate("dataset has no labeled source samples".into()));
    }
    if ds.target_indices().is_empty() {
        return Err(Error::Degenerate("dataset has no target samples".into()));
    }
    Ok(())
}

pub fn train(config: &ExperimentConfig, ds: &Dataset) -> Result<TrainOutcome> {
    config.validate()?;
    check_compatible(config, ds)?;
    let mut model = init_model(config, ds)?;
    let trainable = model.trainable_parameters();
    let plan = batch_plan(config);
    let mut mask_rng = seed::rng(config.seed, "mask");
    let mut metrics = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        let mut tally = EpochTally::default();
        for (b, batch) in make_batches(ds, &plan, epoch as u64)?.iter().enumerate() {
            let masks: Option<Vec<MaskState>> = model.variant().is_graph().then(|| {
                batch
                    .indices()
                    .iter()
                    .map(|&i| {
                        MaskState::sample(
                            ds.samples()[i].domain,
                            config.n_domains,
                            config.effective_mask_ratio(),
                            config.negative_rows,
                            &mut mask_rng,
                        )
                    })
                    .collect()
            });
            let use_tgt = !config.drop_tgt_loss && epoch > config.tgt_warmup_epochs;
            train_step(config, use_tgt, ds, &mut model, &trainable, batch, masks.as_deref(), &mut tally)
                .map_err(|e| Error::Training(format!("epoch {epoch}, batch {}: {e}", b + 1)))?;
        }
        let eval = evaluate(&model, ds)?;
        metrics.push(tally.record(epoch, config, eval.target_acc));
    }
    Ok(TrainOutcome { model, metrics })
}

#[allow(clippy::too_many_arguments)]
fn train_step(
    config: &ExperimentConfig,
    use_tgt: bool,
    ds: &Dataset,
    model: &mut Model,
    trainable: &[crate::numerics::ParamId],
    batch: &Batch,
    masks: Option<&[MaskState]>,
    tally: &mut EpochTally,
) -> Result<()> {
    let indices = batch.indices();
    let (ns, nt) = (batch.source.len(), batch.target.len());
    let labels: Vec<usize> = batch
        .source
        .iter()
        .map(|&i| ds.samples()[i].label.expect("source samples are labeled"))
        .collect();
    let domains: Vec<usize> = indices.iter().map(|&i| ds.samples()[i].domain).collect();

    let mut tape = Tape::new();
    let out = model.forward(&mut tape, &ds.features(&indices), masks)?;
    let src_rows: Vec<usize> = (0..ns).collect();
    let cat_src = tape.gather_rows(out.category, &src_rows)?;
    let l_src = source_ce(&mut tape, cat_src, &labels)?;
    let l_tgt = if use_tgt && nt > 0 {
        let tgt_rows: Vec<usize> = (ns..ns + nt).collect();
        let cat_tgt = tape.gather_rows(out.category, &tgt_rows)?;
        Some(target_entropy(&mut tape, cat_tgt)?)
    } else {
        None
    };
    let l_ss = if config.drop_ss_loss {
        None
    } else {
        Some(ss_domain_ce(&mut tape, out.domain, &domains)?)
    };
    let total = multitask_on_tape(&mut tape, l_src, l_tgt, l_ss, &config.weights)?;

    tally.src_loss += tape.value(l_src).item() * ns as f64;
    if let Some(t) = l_tgt {
        tally.tgt_loss += tape.value(t).item() * nt as f64;
    }
    if let Some(s) = l_ss {
        tally.ss_loss += tape.value(s).item() * indices.len() as f64;
    }
    tally.n_src += ns;
    tally.n_tgt += nt;
    tally.n_all += indices.len();
    tally.src_correct += count_correct(tape.value(cat_src), &labels);
    tally.dom_correct += count_correct(tape.value(out.domain), &domains);
    tally.revealed += masks.map_or(0, |m| m.iter().filter(|s| s.reveal).count());

    tape.backward(total, &mut model.store)?;
    sgd_step(&mut model.store, trainable, config.lr)?;
    model.store.zero_grad();
    Ok(())
}

impl EpochTally {
    fn record(&self, epoch: usize, config: &ExperimentConfig, target_acc: f64) -> MetricsRecord {
        let mean = |sum: f64, n: usize| if n == 0 { 0.0 } else { sum / n as f64 };
        let l_src = mean(self.src_loss, self.n_src);
        let l_tgt = mean(self.tgt_loss, self.n_tgt);
        let l_ss = mean(self.ss_loss, self.n_all);
        MetricsRecord {
            epoch,
            l_src,
            l_tgt,
            l_ss,
            l_total: combine(l_src, l_tgt, l_ss, &config.weights),
            source_acc: mean(self.src_correct as f64, self.n_src),
            domain_acc: mean(self.dom_correct as f64, self.n_all),
            target_acc,
            reveal_rate: mean(self.revealed as f64, self.n_all),
        }
    }
}

fn count_correct(logits: &Tensor, truth: &[usize]) -> usize {
    logits
        .argmax_rows()
        .iter()
        .zip(truth)
        .filter(|(p, t)| p == t)
        .count()
}

/// Target accuracy against held-out labels and domain accuracy over all
/// samples, both without perturbation.
pub fn evaluate(model: &Model, ds: &Dataset) -> Result<Evaluation> {
    let all: Vec<usize> = (0..ds.len()).collect();
    if all.is_empty() {
        return Err(Error::Degenerate("cannot evaluate on an empty dataset".into()));
    }
    let (category, domain) = model.predict(&ds.features(&all))?;
    let domains: Vec<usize> = ds.samples().iter().map(|s| s.domain).collect();
    let domain_acc = count_correct(&domain, &domains) as f64 / ds.len() as f64;

    let preds = category.argmax_rows();
    let (mut correct, mut labeled) = (0, 0);
    for i in ds.target_indices() {
        if let Some(label) = ds.held_out_label(i) {
            labeled += 1;
            correct += usize::from(preds[i] == label);
        }
    }
    Ok(Evaluation {
        target_acc: if labeled == 0 { 0.0 } else { correct as f64 / labeled as f64 },
        domain_acc,
        target_labeled: labeled,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{DataSource, SyntheticData};
    use crate::model::ModelVariant;

    fn small_config() -> ExperimentConfig {
        ExperimentConfig {
            epochs: 3,
            lr: 0.05,
            embed_dim: 8,
            feature_dim: 8,
            extractor_hidden: vec![16],
            data: DataSource::Synthetic(SyntheticData {
                samples_per_class: 10,
                input_dim: 6,
                ..SyntheticData::default()
            }),
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn zero_epochs_rejected() {
        let mut cfg = small_config();
        let ds = cfg.load_dataset().unwrap();
        cfg.epochs = 0;
        assert!(matches!(train(&cfg, &ds), Err(Error::Config { key, .. }) if key == "epochs"));
    }

    #[test]
    fn metrics_obey_loss_identity_and_ranges() {
        let cfg = small_config();
        let ds = cfg.load_dataset().unwrap();
        let out = train(&cfg, &ds).unwrap();
        assert_eq!(out.metrics.len(), 3);
        for m in &out.metrics {
            let expect = combine(m.l_src, m.l_tgt, m.l_ss, &cfg.weights);
            assert!((m.l_total - expect).abs() <= 1e-9);
            for acc in [m.source_acc, m.domain_acc, m.target_acc, m.reveal_rate] {
                assert!((0.0..=1.0).contains(&acc));
            }
        }
    }

    #[test]
    fn zero_lr_keeps_parameters() {
        let mut cfg = small_config();
        cfg.lr = 0.0;
        let ds = cfg.load_dataset().unwrap();
        let before = init_model(&cfg, &ds).unwrap().named_parameters();
        let out = train(&cfg, &ds).unwrap();
        assert_eq!(out.model.named_parameters(), before);
        let accs: Vec<f64> = out.metrics.iter().map(|m| m.target_acc).collect();
        assert!(accs.iter().all(|&a| a == accs[0]));
    }

    #[test]
    fn evaluation_ignores_source_rows() {
        let cfg = small_config();
        let ds = cfg.load_dataset().unwrap();
        let model = init_model(&cfg, &ds).unwrap();
        let e = evaluate(&model, &ds).unwrap();
        assert_eq!(e.target_labeled, ds.target_indices().len());
    }

    #[test]
    fn linear_variant_trains() {
        let mut cfg = small_config();
        cfg.variant = ModelVariant::Linear;
        let ds = cfg.load_dataset().unwrap();
        let out = train(&cfg, &ds).unwrap();
        assert!(out.metrics.iter().all(|m| m.reveal_rate == 0.0));
    }
}
