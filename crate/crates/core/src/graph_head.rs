//! Graph head: one node per category and per domain.
//!
//! Node embeddings `Z` (categories in rows `0..c`, domains in rows
//! `c..c+n`) define a Gaussian-kernel adjacency. A GCN over that graph maps
//! the embeddings to one `D`-wide classifier row per node, and image
//! features are scored against every row by inner product.
//!
//! During training, domain rows may be shifted by a fixed vector `S` to tell
//! the graph which domain an image belongs to. The shift is applied after
//! the adjacency is built, so the graph structure never sees it.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{ParamId, ParamStore, Tape, Tensor, Var};

/// Lower bound on the kernel exponent before `exp`.
pub const KERNEL_EXPONENT_FLOOR: f64 = -50.0;

/// Which non-true domain rows receive `-S` when an image's domain is revealed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativeRows {
    /// Every other domain row.
    #[default]
    All,
    /// A single other domain row, drawn per image.
    Sampled,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphHeadConfig {
    pub n_domains: usize,
    pub n_classes: usize,
    pub embed_dim: usize,
    pub feature_dim: usize,
    pub layers: usize,
    pub sigma: f64,
    pub add_self_loops: bool,
    pub init_scale: f64,
    pub s_val: f64,
    pub negatives: NegativeRows,
}

impl Default for GraphHeadConfig {
    fn default() -> Self {
        Self {
            n_domains: 4,
            n_classes: 4,
            embed_dim: 16,
            feature_dim: 16,
            layers: 2,
            sigma: 0.005,
            add_self_loops: false,
            init_scale: 0.005,
            s_val: 0.1,
            negatives: NegativeRows::All,
        }
    }
}

impl GraphHeadConfig {
    pub fn nodes(&self) -> usize {
        self.n_domains + self.n_classes
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, detail: &str| Err(Error::config(key, detail));
        if self.n_domains < 2 {
            return bad("n_domains", "must be at least 2");
        }
        if self.n_classes < 2 {
            return bad("n_classes", "must be at least 2");
        }
        if self.embed_dim == 0 {
            return bad("embed_dim", "must be positive");
        }
        if self.feature_dim == 0 {
            return bad("feature_dim", "must be positive");
        }
        if self.layers == 0 {
            return bad("gcn_layers", "must be at least 1");
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return bad("sigma", "must be positive and finite");
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return bad("init_scale", "must be non-negative and finite");
        }
        if !self.s_val.is_finite() {
            return bad("s_val", "must be finite");
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` of each GCN layer: hidden width is `embed_dim`,
    /// the last layer emits `feature_dim`.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        (0..self.layers)
            .map(|l| {
                let out = if l + 1 == self.layers {
                    self.feature_dim
                } else {
                    self.embed_dim
                };
                (self.embed_dim, out)
            })
            .collect()
    }
}

/// Whether an image's domain is revealed to the graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MaskState {
    pub reveal: bool,
    pub true_domain: usize,
    /// The single row that takes `-S` under [`NegativeRows::Sampled`].
    pub negative: Option<usize>,
}

impl MaskState {
    pub fn masked(true_domain: usize) -> Self {
        Self {
            reveal: false,
            true_domain,
            negative: None,
        }
    }

    pub fn revealed(true_domain: usize) -> Self {
        Self {
            reveal: true,
            true_domain,
            negative: None,
        }
    }

    /// Draws a reveal flag with probability `1 - mask_ratio`.
    pub fn sample<R: Rng + ?Sized>(
        true_domain: usize,
        n_domains: usize,
        mask_ratio: f64,
        negatives: NegativeRows,
        rng: &mut R,
    ) -> Self {
        let reveal = rng.random::<f64>() >= mask_ratio;
        let negative = match (reveal, negatives) {
            (true, NegativeRows::Sampled) if n_domains > 1 => {
                let k = rng.random_range(0..n_domains - 1);
                Some(if k >= true_domain { k + 1 } else { k })
            }
            _ => None,
        };
        Self {
            reveal,
            true_domain,
            negative,
        }
    }

    /// Images with equal keys see the same perturbed embeddings.
    pub fn perturbation_key(&self) -> Option<(usize, Option<usize>)> {
        self.reveal.then_some((self.true_domain, self.negative))
    }
}

/// Trainable state of the graph head. Parameters live in a shared [`ParamStore`].
#[derive(Clone, Debug)]
pub struct GraphHead {
    pub config: GraphHeadConfig,
    pub z_cat: ParamId,
    pub z_dom: ParamId,
    pub weights: Vec<ParamId>,
    /// Fixed perturbation vector of length `embed_dim`.
    pub s: Tensor,
}

/// Tape handles for one forward pass over the shared graph structure.
#[derive(Clone, Debug)]
pub struct GraphPass {
    pub z: Var,
    pub a_hat: Var,
    pub weights: Vec<Var>,
}

impl GraphHead {
    /// `Z ~ N(0, init_scale^2)`, `W ~ N(0, 1/fan_in)`, `S = s_val`.
    pub fn init<R: Rng + ?Sized>(config: GraphHeadConfig, store: &mut ParamStore, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let (c, n, d) = (config.n_classes, config.n_domains, config.embed_dim);
        let z_cat = store.add("graph.z_cat", Tensor::randn(&[c, d], config.init_scale, rng));
        let z_dom = store.add("graph.z_dom", Tensor::randn(&[n, d], config.init_scale, rng));
        let weights = config
            .layer_shapes()
            .into_iter()
            .enumerate()
            .map(|(l, (fan_in, fan_out))| {
                let std = (1.0 / fan_in as f64).sqrt();
                store.add(format!("graph.w{l}"), Tensor::randn(&[fan_in, fan_out], std, rng))
            })
            .collect();
        let s = Tensor::full(&[d], config.s_val);
        Ok(Self {
            config,
            z_cat,
            z_dom,
            weights,
            s,
        })
    }

    /// Full embedding matrix `Z`, categories first.
    pub fn embeddings(&self, store: &ParamStore) -> Tensor {
        let mut data = store.value(self.z_cat).data().to_vec();
        data.extend_from_slice(store.value(self.z_dom).data());
        Tensor::new(&[self.config.nodes(), self.config.embed_dim], data).expect("embedding shape")
    }

    /// Records `Z`, the normalized adjacency and the layer weights.
    pub fn begin(&self, tape: &mut Tape, store: &ParamStore) -> Result<GraphPass> {
        let zc = tape.param(store, self.z_cat);
        let zd = tape.param(store, self.z_dom);
        let z = tape.concat_rows(&[zc, zd])?;
        let a = build_adjacency(tape, z, self.config.sigma)?;
        let a_hat = normalize_adjacency(tape, a, self.config.add_self_loops)?;
        let weights = self.weights.iter().map(|&w| tape.param(store, w)).collect();
        Ok(GraphPass { z, a_hat, weights })
    }

    /// Node classifiers `Z'` for one perturbation state.
    pub fn node_features(&self, tape: &mut Tape, pass: &GraphPass, mask: &MaskState) -> Result<Var> {
        let h0 = apply_mask_perturbation(tape, pass.z, mask, &self.s, &self.config)?;
        gcn_forward(tape, h0, pass.a_hat, &pass.weights)
    }
}

/// `A[i][j] = exp(max(-||Z_i - Z_j||^2 / (2 sigma^2), -50))`.
pub fn build_adjacency(tape: &mut Tape, z: Var, sigma: f64) -> Result<Var> {
    if sigma.is_nan() || sigma <= 0.0 {
        return Err(Error::Domain {
            op: "build_adjacency",
            detail: format!("sigma must be positive, got {sigma}"),
        });
    }
    let d2 = tape.pairwise_sq_dist(z)?;
    let expo = tape.scale(d2, -1.0 / (2.0 * sigma * sigma))?;
    let expo = tape.clamp_min(expo, KERNEL_EXPONENT_FLOOR)?;
    tape.exp(expo)
}

/// `D^-1/2 (A [+ I]) D^-1/2` with `D` the row sums of the (possibly
/// self-looped) matrix.
pub fn normalize_adjacency(tape: &mut Tape, a: Var, add_self_loops: bool) -> Result<Var> {
    let av = tape.value(a);
    let (m, k) = av
        .dims2()
        .filter(|&(m, k)| m == k && av.shape().len() == 2)
        .ok_or_else(|| Error::dim("normalize_adjacency", av.shape(), &[]))?;
    debug_assert_eq!(m, k);
    if let Some(neg) = av.data().iter().find(|&&x| x < 0.0) {
        return Err(Error::Domain {
            op: "normalize_adjacency",
            detail: format!("negative edge weight {neg}"),
        });
    }
    let a_tilde = if add_self_loops {
        let eye = tape.constant(Tensor::eye(m));
        tape.add(a, eye)?
    } else {
        a
    };
    let deg = tape.sum_rows(a_tilde)?;
    if let Some(row) = tape.value(deg).data().iter().position(|&s| s <= 0.0) {
        return Err(Error::Degenerate(format!("adjacency row {row} has zero degree")));
    }
    let dinv = tape.powf(deg, -0.5)?;
    let dinv_t = tape.transpose(dinv)?;
    let outer = tape.matmul(dinv, dinv_t)?;
    tape.mul(a_tilde, outer)
}

/// `H <- relu(A_hat H W)` for each layer in turn.
pub fn gcn_forward(tape: &mut Tape, h0: Var, a_hat: Var, weights: &[Var]) -> Result<Var> {
    let mut h = h0;
    for &w in weights {
        let agg = tape.matmul(a_hat, h)?;
        let lin = tape.matmul(agg, w)?;
        h = tape.relu(lin)?;
    }
    Ok(h)
}

/// Scores `relu(X) Z'^T`: row per image, column per node.
pub fn predict(tape: &mut Tape, z_prime: Var, x_raw: Var) -> Result<Var> {
    let act = tape.relu(x_raw)?;
    predict_activated(tape, z_prime, act)
}

/// [`predict`] for features that are already activated.
pub fn predict_activated(tape: &mut Tape, z_prime: Var, act: Var) -> Result<Var> {
    let zt = tape.transpose(z_prime)?;
    tape.matmul(act, zt)
}

/// The constant `(n+c) x d` offset a mask state adds to `Z`, or `None` if masked.
pub fn perturbation(mask: &MaskState, s: &Tensor, config: &GraphHeadConfig) -> Result<Option<Tensor>> {
    let (c, n, d) = (config.n_classes, config.n_domains, config.embed_dim);
    if mask.true_domain >= n {
        return Err(Error::Index {
            what: "true_domain",
            index: mask.true_domain,
            bound: n,
        });
    }
    if !mask.reveal {
        return Ok(None);
    }
    if s.numel() != d {
        return Err(Error::dim("apply_mask_perturbation", s.shape(), &[d]));
    }
    let mut offset = Tensor::zeros(&[n + c, d]);
    for dom in 0..n {
        let sign = if dom == mask.true_domain {
            1.0
        } else {
            match mask.negative {
                None => -1.0,
                Some(neg) if neg == dom => -1.0,
                Some(neg) if neg >= n => {
                    return Err(Error::Index {
                        what: "negative domain",
                        index: neg,
                        bound: n,
                    })
                }
                Some(_) => continue,
            }
        };
        let row = (c + dom) * d;
        for (o, sv) in offset.data_mut()[row..row + d].iter_mut().zip(s.data()) {
            *o = sign * sv;
        }
    }
    Ok(Some(offset))
}

/// `Z + offset` on reveal (true domain row `+S`, negatives `-S`); `Z` otherwise.
pub fn apply_mask_perturbation(
    tape: &mut Tape,
    z: Var,
    mask: &MaskState,
    s: &Tensor,
    config: &GraphHeadConfig,
) -> Result<Var> {
    let zv = tape.value(z);
    if zv.shape() != [config.nodes(), config.embed_dim] {
        return Err(Error::dim(
            "apply_mask_perturbation",
            zv.shape(),
            &[config.nodes(), config.embed_dim],
        ));
    }
    match perturbation(mask, s, config)? {
        None => Ok(z),
        Some(offset) => {
            let off = tape.constant(offset);
            tape.add(z, off)
        }
    }
}

/// Per-class means of `features` (one row per sample).
pub fn prototype_embeddings(features: &Tensor, labels: &[usize], n_classes: usize) -> Result<Tensor> {
    let (m, k) = features
        .dims2()
        .ok_or_else(|| Error::dim("prototype_embeddings", features.shape(), &[]))?;
    if labels.len() != m {
        return Err(Error::dim("prototype_embeddings", features.shape(), &[labels.len()]));
    }
    let mut sums = Tensor::zeros(&[n_classes, k]);
    let mut counts = vec![0usize; n_classes];
    for (row, &label) in labels.iter().enumerate() {
        if label >= n_classes {
            return Err(Error::Label {
                label,
                bound: n_classes,
                row,
            });
        }
        counts[label] += 1;
        for (acc, &v) in sums.data_mut()[label * k..(label + 1) * k].iter_mut().zip(features.row(row)) {
            *acc += v;
        }
    }
    if let Some(empty) = counts.iter().position(|&n| n == 0) {
        return Err(Error::Degenerate(format!("class {empty} has no source samples")));
    }
    for (class, &n) in counts.iter().enumerate() {
        for v in &mut sums.data_mut()[class * k..(class + 1) * k] {
            *v /= n as f64;
        }
    }
    Ok(sums)
}

/// Adjacency values for a plain embedding matrix.
pub fn adjacency_values(z: &Tensor, sigma: f64) -> Result<Tensor> {
    let mut tape = Tape::new();
    let zv = tape.constant(z.clone());
    let a = build_adjacency(&mut tape, zv, sigma)?;
    Ok(tape.value(a).clone())
}

/// Normalized adjacency for a plain matrix.
pub fn normalized_values(a: &Tensor, add_self_loops: bool) -> Result<Tensor> {
    let mut tape = Tape::new();
    let av = tape.constant(a.clone());
    let n = normalize_adjacency(&mut tape, av, add_self_loops)?;
    Ok(tape.value(n).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    fn cfg(n: usize, c: usize, d: usize, big_d: usize) -> GraphHeadConfig {
        GraphHeadConfig {
            n_domains: n,
            n_classes: c,
            embed_dim: d,
            feature_dim: big_d,
            ..GraphHeadConfig::default()
        }
    }

    #[test]
    fn init_shapes_and_determinism() {
        let mut s1 = ParamStore::new();
        let h = GraphHead::init(cfg(3, 4, 8, 16), &mut s1, &mut seed::rng(1, "init")).unwrap();
        assert_eq!(h.embeddings(&s1).shape(), &[7, 8]);
        assert_eq!(s1.value(h.weights[0]).shape(), &[8, 8]);
        assert_eq!(s1.value(h.weights[1]).shape(), &[8, 16]);
        assert_eq!(h.s.data(), &[0.1; 8]);

        let mut s2 = ParamStore::new();
        GraphHead::init(cfg(3, 4, 8, 16), &mut s2, &mut seed::rng(1, "init")).unwrap();
        assert_eq!(s1, s2);
    }

    #[test]
    fn zero_init_scale_gives_all_ones_adjacency() {
        let mut store = ParamStore::new();
        let config = GraphHeadConfig {
            init_scale: 0.0,
            ..cfg(3, 4, 8, 16)
        };
        let h = GraphHead::init(config, &mut store, &mut seed::rng(1, "init")).unwrap();
        let z = h.embeddings(&store);
        assert!(z.data().iter().all(|&v| v == 0.0));
        let a = adjacency_values(&z, 0.005).unwrap();
        assert!(a.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn config_validation() {
        assert!(cfg(1, 4, 8, 8).validate().is_err());
        assert!(cfg(2, 1, 8, 8).validate().is_err());
        let c = GraphHeadConfig {
            sigma: 0.0,
            ..cfg(2, 2, 2, 2)
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn adjacency_scalar_case() {
        let z = Tensor::from_rows(&[vec![0.0], vec![0.01]]).unwrap();
        let a = adjacency_values(&z, 0.005).unwrap();
        assert_eq!(a.get(0, 0), 1.0);
        assert!((a.get(0, 1) - (-2.0f64).exp()).abs() < 1e-12);
        assert!((a.get(0, 1) - 0.135335).abs() < 1e-6);
    }

    #[test]
    fn adjacency_identical_rows() {
        let z = Tensor::from_rows(&[vec![0.3, -0.2], vec![0.3, -0.2]]).unwrap();
        let a = adjacency_values(&z, 0.005).unwrap();
        assert_eq!(a.data(), &[1.0; 4]);
    }

    #[test]
    fn normalize_examples() {
        let i = normalized_values(&Tensor::eye(4), false).unwrap();
        assert_eq!(i, Tensor::eye(4));
        let ones = normalized_values(&Tensor::full(&[2, 2], 1.0), false).unwrap();
        for &v in ones.data() {
            assert!((v - 0.5).abs() < 1e-15);
        }
        let looped = normalized_values(&Tensor::eye(3), true).unwrap();
        assert!(looped.max_abs_diff(&Tensor::eye(3)).unwrap() < 1e-15);
    }

    #[test]
    fn normalize_rejects_zero_degree() {
        let a = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap();
        assert!(matches!(normalized_values(&a, false), Err(Error::Degenerate(_))));
    }

    #[test]
    fn gcn_identity_and_zero_cases() {
        let mut tape = Tape::new();
        let h0v = Tensor::from_rows(&[vec![0.5, 1.0], vec![0.0, 2.0], vec![3.0, 0.25]]).unwrap();
        let h0 = tape.constant(h0v.clone());
        let a = tape.constant(Tensor::eye(3));
        let w = tape.constant(Tensor::eye(2));
        let out = gcn_forward(&mut tape, h0, a, &[w, w]).unwrap();
        assert_eq!(tape.value(out), &h0v);

        let zero = tape.constant(Tensor::zeros(&[2, 3]));
        let out = gcn_forward(&mut tape, h0, a, &[w, zero]).unwrap();
        assert!(tape.value(out).data().iter().all(|&v| v == 0.0));

        let bad = tape.constant(Tensor::zeros(&[3, 3]));
        assert!(matches!(gcn_forward(&mut tape, h0, a, &[bad]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn predict_basis_projection() {
        let mut tape = Tape::new();
        let zp = tape.constant(Tensor::eye(3));
        let x = tape.constant(Tensor::from_rows(&[vec![1.0, -2.0, 3.0]]).unwrap());
        let y = predict(&mut tape, zp, x).unwrap();
        assert_eq!(tape.value(y).data(), &[1.0, 0.0, 3.0]);

        let x0 = tape.constant(Tensor::zeros(&[2, 3]));
        let y = predict(&mut tape, zp, x0).unwrap();
        assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn predict_is_linear_in_node_rows() {
        let mut tape = Tape::new();
        let zpv = Tensor::from_rows(&[vec![0.2, 0.4], vec![-1.0, 0.5]]).unwrap();
        let mut doubled = zpv.clone();
        doubled.set(1, 0, -2.0);
        doubled.set(1, 1, 1.0);
        let x = tape.constant(Tensor::from_rows(&[vec![1.5, 2.0], vec![0.3, 0.7]]).unwrap());
        let z1 = tape.constant(zpv);
        let z2 = tape.constant(doubled);
        let y1 = predict(&mut tape, z1, x).unwrap();
        let y2 = predict(&mut tape, z2, x).unwrap();
        for i in 0..2 {
            assert_eq!(tape.value(y1).get(i, 0), tape.value(y2).get(i, 0));
            assert_eq!(2.0 * tape.value(y1).get(i, 1), tape.value(y2).get(i, 1));
        }
    }

    #[test]
    fn perturbation_arithmetic() {
        // c = 1 category row, n = 2 domain rows, d = 2.
        let config = GraphHeadConfig {
            init_scale: 0.0,
            ..cfg(2, 1, 2, 2)
        };
        let z = Tensor::from_rows(&[vec![0.7, 0.7], vec![0.0, 0.0], vec![0.2, 0.2]]).unwrap();
        let s = Tensor::full(&[2], 0.1);
        let mut tape = Tape::new();
        let zv = tape.constant(z.clone());
        let out = apply_mask_perturbation(&mut tape, zv, &MaskState::revealed(0), &s, &config).unwrap();
        let expected = Tensor::from_rows(&[vec![0.7, 0.7], vec![0.1, 0.1], vec![0.1, 0.1]]).unwrap();
        assert!(tape.value(out).max_abs_diff(&expected).unwrap() < 1e-15);

        let same = apply_mask_perturbation(&mut tape, zv, &MaskState::masked(0), &s, &config).unwrap();
        assert_eq!(tape.value(same), &z);

        assert!(matches!(
            apply_mask_perturbation(&mut tape, zv, &MaskState::revealed(2), &s, &config),
            Err(Error::Index { .. })
        ));
    }

    #[test]
    fn sampled_negative_touches_one_row() {
        let config = cfg(3, 2, 1, 1);
        let s = Tensor::full(&[1], 0.1);
        let mask = MaskState {
            reveal: true,
            true_domain: 1,
            negative: Some(2),
        };
        let off = perturbation(&mask, &s, &config).unwrap().unwrap();
        assert_eq!(off.data(), &[0.0, 0.0, 0.0, 0.1, -0.1]);
    }

    #[test]
    fn reveal_frequency_matches_mask_ratio() {
        let mut rng = seed::rng(11, "mask");
        let draws = 10_000;
        let reveals = (0..draws)
            .filter(|_| MaskState::sample(0, 4, 0.95, NegativeRows::All, &mut rng).reveal)
            .count();
        let rate = reveals as f64 / draws as f64;
        assert!((rate - 0.05).abs() <= 0.01, "reveal rate {rate}");
    }

    #[test]
    fn sampled_negative_is_never_true_domain() {
        let mut rng = seed::rng(3, "mask");
        for _ in 0..500 {
            let m = MaskState::sample(2, 4, 0.0, NegativeRows::Sampled, &mut rng);
            let neg = m.negative.unwrap();
            assert!(neg != 2 && neg < 4);
        }
    }

    #[test]
    fn prototype_means() {
        let f = Tensor::from_rows(&[vec![1.0, 2.0], vec![9.0, 9.0], vec![3.0, 4.0]]).unwrap();
        let p = prototype_embeddings(&f, &[0, 1, 0], 2).unwrap();
        assert_eq!(p.row(0), &[2.0, 3.0]);
        assert_eq!(p.row(1), &[9.0, 9.0]);
        match prototype_embeddings(&f, &[0, 0, 0], 2) {
            Err(Error::Degenerate(msg)) => assert!(msg.contains("class 1"), "{msg}"),
            other => panic!("{other:?}"),
        }
    }
}
