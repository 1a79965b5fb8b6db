use crate::config::ExperimentConfig;
use crate::data::{make_batches, Dataset};
use crate::error::Result;
use crate::graph_head::{MaskState, NegativeRows};
use crate::numerics::{finite_diff_check, GradCheckReport};
use crate::objectives::{multitask_on_tape, source_ce, ss_domain_ce, target_entropy};
use crate::trainer::{batch_plan, init_model};

pub const GRADCHECK_STEP: f64 = 1e-6;
pub const GRADCHECK_TOLERANCE: f64 = 1e-5;

/// Deterministic reveal flags spread evenly through the batch, revealing
/// a `1 - mask_ratio` share. Under sampled negatives the next domain row
/// (cyclically) is the negative.
pub fn fixed_reveal_pattern(
    domains: &[usize],
    n_domains: usize,
    mask_ratio: f64,
    negatives: NegativeRows,
) -> Vec<MaskState> {
    let share = 1.0 - mask_ratio;
    domains
        .iter()
        .enumerate()
        .map(|(i, &d)| {
            let reveal = ((i + 1) as f64 * share).floor() > (i as f64 * share).floor();
            if !reveal {
                return MaskState::masked(d);
            }
            let mut m = MaskState::revealed(d);
            if negatives == NegativeRows::Sampled {
                m.negative = Some((d + 1) % n_domains);
            }
            m
        })
        .collect()
}

/// Checks analytic gradients of the full training objective against
/// central differences on the first batch, for every trainable parameter.
pub fn gradient_check(config: &ExperimentConfig, ds: &Dataset, h: f64) -> Result<GradCheckReport> {
    config.validate()?;
    let mut model = init_model(config, ds)?;
    let batch = make_batches(ds, &batch_plan(config), 0)?.swap_remove(0);
    let indices = batch.indices();
    let ns = batch.source.len();
    let labels: Vec<usize> = batch
        .source
        .iter()
        .map(|&i| ds.samples()[i].label.expect("source samples are labeled"))
        .collect();
    let domains: Vec<usize> = indices.iter().map(|&i| ds.samples()[i].domain).collect();
    let masks = fixed_reveal_pattern(
        &domains,
        config.n_domains,
        config.effective_mask_ratio(),
        config.negative_rows,
    );
    let masks = model.variant().is_graph().then_some(masks);
    let x = ds.features(&indices);
    let src_rows: Vec<usize> = (0..ns).collect();
    let tgt_rows: Vec<usize> = (ns..indices.len()).collect();

    let ids = model.trainable_parameters();
    let mut store = std::mem::take(&mut model.store);
    finite_diff_check(&mut store, &ids, h, |tape, store| {
        let out = model.forward_with(store, tape, &x, masks.as_deref())?;
        let cat_src = tape.gather_rows(out.category, &src_rows)?;
        let l_src = source_ce(tape, cat_src, &labels)?;
        let l_tgt = if config.drop_tgt_loss || tgt_rows.is_empty() {
            None
        } else {
            let cat_tgt = tape.gather_rows(out.category, &tgt_rows)?;
            Some(target_entropy(tape, cat_tgt)?)
        };
        let l_ss = if config.drop_ss_loss {
            None
        } else {
            Some(ss_domain_ce(tape, out.domain, &domains)?)
        };
        multitask_on_tape(tape, l_src, l_tgt, l_ss, &config.weights)
    })
}
