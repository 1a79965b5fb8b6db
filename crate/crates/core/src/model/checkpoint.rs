//! Plain-text checkpoints.
//!
//! ```text
//! #ssg-checkpoint,version=1,tensors=<k>
//! <name> <d0>x<d1> <v0> <v1> ...
//! ```
//!
//! One line per parameter in store order; values use 17 significant digits.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::data::fmt_f64;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::numerics::Tensor;

pub const CHECKPOINT_VERSION: u32 = 1;

pub fn render_checkpoint(named: &[(String, Tensor)]) -> String {
    let mut out = format!("#ssg-checkpoint,version={CHECKPOINT_VERSION},tensors={}\n", named.len());
    for (name, t) in named {
        let dims: Vec<String> = t.shape().iter().map(usize::to_string).collect();
        let shape = if dims.is_empty() { "scalar".to_string() } else { dims.join("x") };
        let _ = write!(out, "{name} {shape}");
        for &v in t.data() {
            out.push(' ');
            out.push_str(&fmt_f64(v));
        }
        out.push('\n');
    }
    out
}

pub fn parse_checkpoint(text: &str) -> Result<Vec<(String, Tensor)>> {
    let err = |line: usize, detail: String| Error::Parse { line, detail };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (_, header) = lines.next().ok_or_else(|| err(1, "empty checkpoint".into()))?;
    let expected_prefix = format!("#ssg-checkpoint,version={CHECKPOINT_VERSION},tensors=");
    let count: usize = header
        .strip_prefix(&expected_prefix)
        .and_then(|n| n.parse().ok())
        .ok_or_else(|| err(1, format!("expected `{expected_prefix}<k>`")))?;

    let mut named = Vec::with_capacity(count);
    for (lineno, line) in lines {
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(' ');
        let name = fields.next().filter(|n| !n.is_empty()).ok_or_else(|| err(lineno, "missing name".into()))?;
        let shape_str = fields.next().ok_or_else(|| err(lineno, "missing shape".into()))?;
        let shape: Vec<usize> = if shape_str == "scalar" {
            Vec::new()
        } else {
            shape_str
                .split('x')
                .map(|d| d.parse().map_err(|_| err(lineno, format!("bad shape `{shape_str}`"))))
                .collect::<Result<_>>()?
        };
        let values: Vec<f64> = fields
            .map(|v| {
                v.parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| err(lineno, format!("bad value `{v}`")))
            })
            .collect::<Result<_>>()?;
        let t = Tensor::new(&shape, values).map_err(|e| err(lineno, e.to_string()))?;
        named.push((name.to_string(), t));
    }
    if named.len() != count {
        return Err(err(1, format!("header declares {count} tensors, found {}", named.len())));
    }
    Ok(named)
}

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    fs::write(path, render_checkpoint(&model.named_parameters())).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_checkpoint(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let named = vec![
            ("a".to_string(), Tensor::new(&[2, 2], vec![0.1, -1e-300, 3.0, 1.0 / 3.0]).unwrap()),
            ("b".to_string(), Tensor::vector(vec![2.5e17]).unwrap()),
            ("c".to_string(), Tensor::scalar(-0.0)),
        ];
        let parsed = parse_checkpoint(&render_checkpoint(&named)).unwrap();
        assert_eq!(parsed.len(), 3);
        for ((n1, t1), (n2, t2)) in named.iter().zip(&parsed) {
            assert_eq!(n1, n2);
            assert_eq!(t1.shape(), t2.shape());
            let b1: Vec<u64> = t1.data().iter().map(|v| v.to_bits()).collect();
            let b2: Vec<u64> = t2.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(b1, b2);
        }
    }

    #[test]
    fn rejects_wrong_counts_and_versions() {
        assert!(parse_checkpoint("#ssg-checkpoint,version=1,tensors=2\na 1 1.0\n").is_err());
        assert!(parse_checkpoint("#ssg-checkpoint,version=9,tensors=0\n").is_err());
        assert!(matches!(
            parse_checkpoint("#ssg-checkpoint,version=1,tensors=1\na 2 1.0\n"),
            Err(Error::Parse { line: 2, .. })
        ));
    }
}
