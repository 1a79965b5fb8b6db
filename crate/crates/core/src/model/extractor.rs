use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{ParamId, ParamStore, Tape, Tensor, Var};

/// MLP feature extractor: `input -> hidden... -> output`, ReLU between
/// layers. The output is left un-activated; heads apply their own ReLU.
#[derive(Clone, Debug)]
pub struct Extractor {
    pub input_dim: usize,
    pub output_dim: usize,
    layers: Vec<(ParamId, ParamId)>,
}

impl Extractor {
    /// Weights `N(0, 2/fan_in)`, biases zero.
    pub fn init<R: Rng + ?Sized>(
        input_dim: usize,
        hidden: &[usize],
        output_dim: usize,
        store: &mut ParamStore,
        rng: &mut R,
    ) -> Result<Self> {
        if input_dim == 0 || output_dim == 0 || hidden.contains(&0) {
            return Err(Error::config("extractor_hidden", "layer widths must be positive"));
        }
        let widths: Vec<usize> = std::iter::once(input_dim)
            .chain(hidden.iter().copied())
            .chain(std::iter::once(output_dim))
            .collect();
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(l, pair)| {
                let (fan_in, fan_out) = (pair[0], pair[1]);
                let std = (2.0 / fan_in as f64).sqrt();
                let w = store.add(format!("extractor.w{l}"), Tensor::randn(&[fan_in, fan_out], std, rng));
                let b = store.add(format!("extractor.b{l}"), Tensor::zeros(&[fan_out]));
                (w, b)
            })
            .collect();
        Ok(Self {
            input_dim,
            output_dim,
            layers,
        })
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.layers.iter().flat_map(|&(w, b)| [w, b]).collect()
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let mut h = x;
        for (l, &(w, b)) in self.layers.iter().enumerate() {
            let wv = tape.param(store, w);
            let bv = tape.param(store, b);
            let lin = tape.matmul(h, wv)?;
            h = tape.add_row(lin, bv)?;
            if l + 1 < self.layers.len() {
                h = tape.relu(h)?;
            }
        }
        Ok(h)
    }

    /// Extractor outputs for plain features, without recording gradients.
    pub fn apply(&self, store: &ParamStore, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        // Parameters enter as constants; nothing here is differentiated.
        let mut h = xv;
        for (l, &(w, b)) in self.layers.iter().enumerate() {
            let wv = tape.constant(store.value(w).clone());
            let bv = tape.constant(store.value(b).clone());
            let lin = tape.matmul(h, wv)?;
            h = tape.add_row(lin, bv)?;
            if l + 1 < self.layers.len() {
                h = tape.relu(h)?;
            }
        }
        Ok(tape.value(h).clone())
    }
}
