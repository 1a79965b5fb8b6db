use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShiftLevel {
    Low,
    #[default]
    Medium,
    High,
}

impl ShiftLevel {
    /// `(rotation angle in radians, translation norm)` before `shift_scale`.
    pub fn magnitude(self) -> (f64, f64) {
        match self {
            ShiftLevel::Low => (0.15, 0.4),
            ShiftLevel::Medium => (0.5, 1.2),
            ShiftLevel::High => (0.9, 2.4),
        }
    }
}

impl FromStr for ShiftLevel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "low" => Ok(Self::Low),
            "medium" => Ok(Self::Medium),
            "high" => Ok(Self::High),
            other => Err(format!("unknown shift level `{other}` (low, medium, high)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_domains: usize,
    pub n_classes: usize,
    pub samples_per_class_per_domain: usize,
    pub input_dim: usize,
    pub shift_level: ShiftLevel,
    /// Multiplier on the level's rotation and translation; 0 disables shift.
    pub shift_scale: f64,
    /// Norm scale of the class base means.
    pub class_sep: f64,
    /// Per-coordinate standard deviation of the sample noise.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_domains: 4,
            n_classes: 4,
            samples_per_class_per_domain: 50,
            input_dim: 16,
            shift_level: ShiftLevel::Medium,
            shift_scale: 1.0,
            class_sep: 3.0,
            noise: 1.0,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_domains < 2 {
            return Err(Error::config("n_domains", "synthetic data needs at least 2 domains"));
        }
        if self.n_classes < 2 {
            return Err(Error::config("n_classes", "synthetic data needs at least 2 classes"));
        }
        if self.samples_per_class_per_domain == 0 {
            return Err(Error::config("data.samples_per_class", "must be positive"));
        }
        if self.input_dim < 2 {
            return Err(Error::config("data.input_dim", "must be at least 2"));
        }
        for (key, v) in [
            ("data.shift_scale", self.shift_scale),
            ("data.class_sep", self.class_sep),
            ("data.noise", self.noise),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(key, format!("must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }

    /// The last domain is the target.
    pub fn target_domain(&self) -> usize {
        self.n_domains - 1
    }

    /// Base class means, one row per class.
    pub fn class_means(&self) -> Vec<Vec<f64>> {
        let mut rng = seed::rng(self.seed, "synthetic.means");
        let scale = self.class_sep / (self.input_dim as f64).sqrt();
        (0..self.n_classes)
            .map(|_| gaussian_vec(self.input_dim, &mut rng).into_iter().map(|v| v * scale).collect())
            .collect()
    }

    /// Affine map of each domain, derived from the seed alone.
    pub fn transforms(&self) -> Vec<DomainTransform> {
        let mut rng = seed::rng(self.seed, "synthetic.transforms");
        let (angle, shift) = self.shift_level.magnitude();
        (0..self.n_domains)
            .map(|_| DomainTransform::random(self.input_dim, angle * self.shift_scale, shift * self.shift_scale, &mut rng))
            .collect()
    }
}

fn gaussian_vec<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

fn normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `x -> R x + t` with `R` a rotation in two random planes.
#[derive(Clone, Debug, PartialEq)]
pub struct DomainTransform {
    /// Row-major `dim x dim`.
    pub rotation: Vec<f64>,
    pub translation: Vec<f64>,
}

impl DomainTransform {
    pub fn identity(dim: usize) -> Self {
        let mut rotation = vec![0.0; dim * dim];
        for i in 0..dim {
            rotation[i * dim + i] = 1.0;
        }
        Self {
            rotation,
            translation: vec![0.0; dim],
        }
    }

    fn random<R: Rng + ?Sized>(dim: usize, angle: f64, shift: f64, rng: &mut R) -> Self {
        let mut t = Self::identity(dim);
        // Randomness is drawn even when the scale is zero so that streams line up.
        for _ in 0..2 {
            let mut u = gaussian_vec(dim, rng);
            normalize(&mut u);
            let mut v = gaussian_vec(dim, rng);
            let proj = dot(&u, &v);
            v.iter_mut().zip(&u).for_each(|(vi, ui)| *vi -= proj * ui);
            normalize(&mut v);
            let theta = angle * rng.random_range(0.5..1.5) * if rng.random::<bool>() { 1.0 } else { -1.0 };
            if theta != 0.0 {
                t.rotation = compose(&plane_rotation(&u, &v, theta), &t.rotation, dim);
            }
        }
        let mut dir = gaussian_vec(dim, rng);
        normalize(&mut dir);
        t.translation = dir.into_iter().map(|x| x * shift).collect();
        t
    }

    pub fn is_identity(&self) -> bool {
        let dim = self.translation.len();
        *self == Self::identity(dim)
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let dim = x.len();
        (0..dim)
            .map(|i| dot(&self.rotation[i * dim..(i + 1) * dim], x) + self.translation[i])
            .collect()
    }
}

fn plane_rotation(u: &[f64], v: &[f64], theta: f64) -> Vec<f64> {
    let dim = u.len();
    let (c, s) = (theta.cos(), theta.sin());
    let mut r = vec![0.0; dim * dim];
    for i in 0..dim {
        for j in 0..dim {
            let eye = if i == j { 1.0 } else { 0.0 };
            r[i * dim + j] = eye + (c - 1.0) * (u[i] * u[j] + v[i] * v[j]) + s * (v[i] * u[j] - u[i] * v[j]);
        }
    }
    r
}

fn compose(a: &[f64], b: &[f64], dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; dim * dim];
    for i in 0..dim {
        for k in 0..dim {
            let aik = a[i * dim + k];
            for j in 0..dim {
                out[i * dim + j] += aik * b[k * dim + j];
            }
        }
    }
    out
}

/// Gaussian blobs around per-domain transformed class means.
///
/// Samples are ordered by domain, then class; ids are sequential.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let means = spec.class_means();
    let transforms = spec.transforms();
    let mut rng = seed::rng(spec.seed, "synthetic.samples");
    let mut rows = Vec::with_capacity(spec.n_domains * spec.n_classes * spec.samples_per_class_per_domain);
    let mut id = 0u64;
    for (domain, tf) in transforms.iter().enumerate() {
        for (class, mean) in means.iter().enumerate() {
            let center = tf.apply(mean);
            for _ in 0..spec.samples_per_class_per_domain {
                let features = center
                    .iter()
                    .map(|&c| c + spec.noise * { let z: f64 = StandardNormal.sample(&mut rng); z })
                    .collect::<Vec<f64>>();
                rows.push(Sample {
                    id,
                    features,
                    domain,
                    label: Some(class),
                });
                id += 1;
            }
        }
    }
    Dataset::new(spec.n_domains, spec.n_classes, spec.input_dim, spec.target_domain(), rows)
}
