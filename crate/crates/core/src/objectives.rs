//! Loss terms, their weighted combination, and the linear-head baseline.
//!
//! All losses are batch means. Category and domain logits are normalized
//! separately, each block with its own softmax.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Tape, Var, LOG_CLAMP};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha1: f64,
    pub alpha2: f64,
    pub lambda: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha1: 1.0,
            alpha2: 0.1,
            lambda: 5.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (key, v) in [("alpha1", self.alpha1), ("alpha2", self.alpha2), ("lambda", self.lambda)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(key, format!("must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_src: f64,
    pub l_tgt: f64,
    pub l_ss: f64,
    pub l_total: f64,
}

/// `alpha1 * (l_src + lambda * l_tgt) + alpha2 * l_ss`.
pub fn combine(l_src: f64, l_tgt: f64, l_ss: f64, w: &LossWeights) -> f64 {
    w.alpha1 * (l_src + w.lambda * l_tgt) + w.alpha2 * l_ss
}

pub fn multitask(l_src: f64, l_tgt: f64, l_ss: f64, weights: &LossWeights) -> Result<LossBreakdown> {
    for (name, v) in [("l_src", l_src), ("l_tgt", l_tgt), ("l_ss", l_ss)] {
        if !v.is_finite() {
            return Err(Error::Training(format!("{name} is not finite ({v})")));
        }
    }
    Ok(LossBreakdown {
        l_src,
        l_tgt,
        l_ss,
        l_total: combine(l_src, l_tgt, l_ss, weights),
    })
}

/// The weighted objective on the tape. Absent terms contribute nothing.
pub fn multitask_on_tape(
    tape: &mut Tape,
    l_src: Var,
    l_tgt: Option<Var>,
    l_ss: Option<Var>,
    weights: &LossWeights,
) -> Result<Var> {
    let mut sup = l_src;
    if let Some(t) = l_tgt {
        let weighted = tape.scale(t, weights.lambda)?;
        sup = tape.add(sup, weighted)?;
    }
    let mut total = tape.scale(sup, weights.alpha1)?;
    if let Some(s) = l_ss {
        let weighted = tape.scale(s, weights.alpha2)?;
        total = tape.add(total, weighted)?;
    }
    Ok(total)
}

fn cross_entropy(tape: &mut Tape, logits: Var, labels: &[usize]) -> Result<Var> {
    let (m, k) = tape
        .value(logits)
        .dims2()
        .ok_or_else(|| Error::dim("cross_entropy", tape.value(logits).shape(), &[]))?;
    if m != labels.len() {
        return Err(Error::dim("cross_entropy", tape.value(logits).shape(), &[labels.len()]));
    }
    if let Some((row, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= k) {
        return Err(Error::Label { label, bound: k, row });
    }
    let ls = tape.log_softmax(logits)?;
    let picked = tape.pick(ls, labels)?;
    let mean = tape.mean(picked)?;
    tape.scale(mean, -1.0)
}

/// Mean `-log softmax(logits)[label]` over source images.
pub fn source_ce(tape: &mut Tape, category_logits: Var, labels: &[usize]) -> Result<Var> {
    cross_entropy(tape, category_logits, labels)
}

/// Mean entropy of `softmax(logits)` over target images, log clamped at 1e-12.
pub fn target_entropy(tape: &mut Tape, category_logits: Var) -> Result<Var> {
    let m = tape.value(category_logits).rows();
    let p = tape.softmax(category_logits)?;
    let clamped = tape.clamp_min(p, LOG_CLAMP)?;
    let lp = tape.log(clamped)?;
    let plp = tape.mul(p, lp)?;
    let total = tape.sum(plp)?;
    tape.scale(total, -1.0 / m as f64)
}

/// Mean domain cross-entropy over every image, source and target alike.
pub fn ss_domain_ce(tape: &mut Tape, domain_logits: Var, domains: &[usize]) -> Result<Var> {
    cross_entropy(tape, domain_logits, domains)
}

/// Baseline heads on shared features: `relu(X) W_sup^T` and `relu(X) W_ss^T`.
pub fn linear_head_predict(tape: &mut Tape, x_raw: Var, w_sup: Var, w_ss: Var) -> Result<(Var, Var)> {
    let act = tape.relu(x_raw)?;
    linear_head_activated(tape, act, w_sup, w_ss)
}

/// [`linear_head_predict`] for features that are already activated.
pub fn linear_head_activated(tape: &mut Tape, act: Var, w_sup: Var, w_ss: Var) -> Result<(Var, Var)> {
    let ws = tape.transpose(w_sup)?;
    let cat = tape.matmul(act, ws)?;
    let wd = tape.transpose(w_ss)?;
    let dom = tape.matmul(act, wd)?;
    Ok((cat, dom))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;

    fn logits(tape: &mut Tape, rows: &[Vec<f64>]) -> Var {
        tape.constant(Tensor::from_rows(rows).unwrap())
    }

    #[test]
    fn ce_perfect_and_uniform() {
        let mut tape = Tape::new();
        let perfect = logits(&mut tape, &[vec![0.0, 800.0, 0.0]]);
        let l = source_ce(&mut tape, perfect, &[1]).unwrap();
        assert_eq!(tape.value(l).item(), 0.0);

        let uniform = logits(&mut tape, &[vec![0.3; 4]]);
        let l = source_ce(&mut tape, uniform, &[2]).unwrap();
        assert!((tape.value(l).item() - 4f64.ln()).abs() < 1e-12);
        assert!((tape.value(l).item() - 1.386294).abs() < 1e-6);
    }

    #[test]
    fn ce_batch_mean_is_average() {
        let mut tape = Tape::new();
        let a = vec![0.1, 2.0, -1.0];
        let b = vec![1.5, -0.3, 0.2];
        let la = logits(&mut tape, std::slice::from_ref(&a));
        let la = source_ce(&mut tape, la, &[0]).unwrap();
        let lb = logits(&mut tape, std::slice::from_ref(&b));
        let lb = source_ce(&mut tape, lb, &[2]).unwrap();
        let both = logits(&mut tape, &[a, b]);
        let lab = source_ce(&mut tape, both, &[0, 2]).unwrap();
        let avg = 0.5 * (tape.value(la).item() + tape.value(lb).item());
        assert!((tape.value(lab).item() - avg).abs() < 1e-15);
    }

    #[test]
    fn ce_label_out_of_range() {
        let mut tape = Tape::new();
        let l = logits(&mut tape, &[vec![0.0; 3], vec![0.0; 3]]);
        match source_ce(&mut tape, l, &[0, 3]) {
            Err(Error::Label { label: 3, bound: 3, row: 1 }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn entropy_examples() {
        let mut tape = Tape::new();
        let u = logits(&mut tape, &[vec![-0.7; 10]]);
        let h = target_entropy(&mut tape, u).unwrap();
        assert!((tape.value(h).item() - 10f64.ln()).abs() < 1e-12);
        assert!((tape.value(h).item() - std::f64::consts::LN_10).abs() < 1e-6);

        let onehot = logits(&mut tape, &[vec![900.0, 0.0, 0.0]]);
        let h = target_entropy(&mut tape, onehot).unwrap();
        assert_eq!(tape.value(h).item(), 0.0);
    }

    #[test]
    fn domain_ce_examples() {
        let mut tape = Tape::new();
        let u = logits(&mut tape, &[vec![0.0; 3], vec![5.0; 3]]);
        let l = ss_domain_ce(&mut tape, u, &[0, 2]).unwrap();
        assert!((tape.value(l).item() - 1.098612).abs() < 1e-6);

        let perfect = logits(&mut tape, &[vec![0.0, 0.0, 900.0]]);
        let l = ss_domain_ce(&mut tape, perfect, &[2]).unwrap();
        assert_eq!(tape.value(l).item(), 0.0);
    }

    #[test]
    fn multitask_defaults() {
        let b = multitask(1.0, 0.2, 1.0, &LossWeights::default()).unwrap();
        assert!((b.l_total - 2.1).abs() < 1e-12);

        let sup_only = LossWeights {
            alpha2: 0.0,
            ..LossWeights::default()
        };
        let b = multitask(1.0, 0.2, 1.0, &sup_only).unwrap();
        assert!((b.l_total - 2.0).abs() < 1e-12);

        let src_only = LossWeights {
            alpha2: 0.0,
            lambda: 0.0,
            ..LossWeights::default()
        };
        assert_eq!(multitask(1.0, 0.2, 1.0, &src_only).unwrap().l_total, 1.0);
        assert!(matches!(
            multitask(f64::NAN, 0.0, 0.0, &src_only),
            Err(Error::Training(_))
        ));
    }

    #[test]
    fn multitask_tape_matches_scalar_form() {
        let w = LossWeights::default();
        let mut tape = Tape::new();
        let s = tape.constant(Tensor::scalar(0.7));
        let t = tape.constant(Tensor::scalar(0.3));
        let d = tape.constant(Tensor::scalar(1.9));
        let total = multitask_on_tape(&mut tape, s, Some(t), Some(d), &w).unwrap();
        assert_eq!(tape.value(total).item(), combine(0.7, 0.3, 1.9, &w));
    }

    #[test]
    fn linear_head_examples() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_rows(&[vec![1.0, -2.0, 3.0]]).unwrap());
        let w_sup = tape.constant(Tensor::eye(3));
        let w_ss = tape.constant(Tensor::full(&[2, 3], 1.0));
        let (cat, dom) = linear_head_predict(&mut tape, x, w_sup, w_ss).unwrap();
        assert_eq!(tape.value(cat).data(), &[1.0, 0.0, 3.0]);
        assert_eq!(tape.value(dom).data(), &[4.0, 4.0]);

        let zero = tape.constant(Tensor::zeros(&[2, 3]));
        let (cat, dom) = linear_head_predict(&mut tape, zero, w_sup, w_ss).unwrap();
        assert!(tape.value(cat).data().iter().chain(tape.value(dom).data()).all(|&v| v == 0.0));

        let bad = tape.constant(Tensor::zeros(&[2, 4]));
        assert!(linear_head_predict(&mut tape, x, bad, w_ss).is_err());
    }
}
