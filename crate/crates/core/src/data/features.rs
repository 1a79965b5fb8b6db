//! CSV feature files.
//!
//! ```text
//! #ssg-features,version=1,n_domains=<n>,n_classes=<c>,dim=<F>
//! id,domain,label,f0,...,f{F-1}
//! 0,0,3,1.2500000000000000e0,...
//! ```
//!
//! UTF-8, LF line endings, `label = -1` for unlabeled target rows, floats
//! with 17 significant digits.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::data::{Dataset, Sample};
use crate::error::{Error, Result};

pub const FEATURE_FILE_VERSION: u32 = 1;

/// Formats a float with 17 significant digits, which round-trips every `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Rows of a feature file, before a target domain is chosen.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureFile {
    pub n_domains: usize,
    pub n_classes: usize,
    pub dim: usize,
    pub rows: Vec<Sample>,
}

impl FeatureFile {
    /// Splits into source and target; target labels present in the file
    /// become held-out evaluation labels.
    pub fn into_dataset(self, target_domain: usize) -> Result<Dataset> {
        Dataset::new(self.n_domains, self.n_classes, self.dim, target_domain, self.rows)
    }
}

fn parse_err(line: usize, detail: impl Into<String>) -> Error {
    Error::Parse {
        line,
        detail: detail.into(),
    }
}

fn parse_header(line: &str) -> Result<(usize, usize, usize)> {
    let mut parts = line.split(',');
    if parts.next() != Some("#ssg-features") {
        return Err(parse_err(1, "missing `#ssg-features` marker"));
    }
    let mut fields = [None; 4];
    const KEYS: [&str; 4] = ["version", "n_domains", "n_classes", "dim"];
    for part in parts {
        let (key, value) = part
            .split_once('=')
            .ok_or_else(|| parse_err(1, format!("malformed header field `{part}`")))?;
        let slot = KEYS
            .iter()
            .position(|&k| k == key)
            .ok_or_else(|| parse_err(1, format!("unknown header field `{key}`")))?;
        let v: usize = value
            .parse()
            .map_err(|_| parse_err(1, format!("`{key}` is not a non-negative integer: `{value}`")))?;
        if fields[slot].replace(v).is_some() {
            return Err(parse_err(1, format!("duplicate header field `{key}`")));
        }
    }
    let get = |i: usize| fields[i].ok_or_else(|| parse_err(1, format!("missing header field `{}`", KEYS[i])));
    let version = get(0)?;
    if version != FEATURE_FILE_VERSION as usize {
        return Err(parse_err(1, format!("unsupported version {version}")));
    }
    let (n, c, dim) = (get(1)?, get(2)?, get(3)?);
    if n == 0 || c == 0 || dim == 0 {
        return Err(parse_err(1, "n_domains, n_classes and dim must be positive"));
    }
    Ok((n, c, dim))
}

fn column_header(dim: usize) -> String {
    let mut s = String::from("id,domain,label");
    for i in 0..dim {
        let _ = write!(s, ",f{i}");
    }
    s
}

/// Parses feature-file text. Line numbers in errors are 1-based.
pub fn parse_feature_file(text: &str) -> Result<FeatureFile> {
    let mut lines = text.split('\n').enumerate().map(|(i, l)| (i + 1, l));
    let (_, first) = lines.next().ok_or_else(|| parse_err(1, "empty file"))?;
    let (n_domains, n_classes, dim) = parse_header(first)?;
    let (_, second) = lines.next().ok_or_else(|| parse_err(2, "missing column header"))?;
    if second != column_header(dim) {
        return Err(parse_err(2, format!("expected column header for dim={dim}")));
    }

    let mut rows = Vec::new();
    for (lineno, line) in lines {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 + dim {
            return Err(parse_err(
                lineno,
                format!("expected {} fields, found {}", 3 + dim, fields.len()),
            ));
        }
        let id: u64 = fields[0]
            .parse()
            .map_err(|_| parse_err(lineno, format!("bad id `{}`", fields[0])))?;
        let domain: usize = fields[1]
            .parse()
            .map_err(|_| parse_err(lineno, format!("bad domain `{}`", fields[1])))?;
        if domain >= n_domains {
            return Err(parse_err(lineno, format!("domain {domain} out of range 0..{n_domains}")));
        }
        let raw_label: i64 = fields[2]
            .parse()
            .map_err(|_| parse_err(lineno, format!("bad label `{}`", fields[2])))?;
        let label = match raw_label {
            -1 => None,
            l if l >= 0 && (l as usize) < n_classes => Some(l as usize),
            l => return Err(parse_err(lineno, format!("label {l} out of range -1..{n_classes}"))),
        };
        let features = fields[3..]
            .iter()
            .map(|f| match f.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(parse_err(lineno, format!("bad feature value `{f}`"))),
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(Sample {
            id,
            features,
            domain,
            label,
        });
    }
    Ok(FeatureFile {
        n_domains,
        n_classes,
        dim,
        rows,
    })
}

pub fn load_feature_file(path: &Path) -> Result<FeatureFile> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_feature_file(&text)
}

/// Serializes every sample. Target rows carry their held-out label when
/// one is known, so reloading with the same target domain restores the
/// dataset exactly.
pub fn render_feature_file(ds: &Dataset) -> String {
    let mut out = format!(
        "#ssg-features,version={FEATURE_FILE_VERSION},n_domains={},n_classes={},dim={}\n",
        ds.n_domains(),
        ds.n_classes(),
        ds.dim()
    );
    out.push_str(&column_header(ds.dim()));
    out.push('\n');
    for (i, s) in ds.samples().iter().enumerate() {
        let label = ds.export_label(i).map_or(-1, |l| l as i64);
        let _ = write!(out, "{},{},{}", s.id, s.domain, label);
        for &v in &s.features {
            out.push(',');
            out.push_str(&fmt_f64(v));
        }
        out.push('\n');
    }
    out
}

pub fn write_feature_file(ds: &Dataset, path: &Path) -> Result<()> {
    fs::write(path, render_feature_file(ds)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "#ssg-features,version=1,n_domains=2,n_classes=3,dim=4\nid,domain,label,f0,f1,f2,f3\n";

    #[test]
    fn header_only_is_empty_and_valid() {
        let f = parse_feature_file(HEADER).unwrap();
        assert_eq!((f.n_domains, f.n_classes, f.dim), (2, 3, 4));
        assert!(f.rows.is_empty());
    }

    #[test]
    fn minus_one_is_unlabeled() {
        let text = format!("{HEADER}7,1,-1,1,2,3,4\n");
        let f = parse_feature_file(&text).unwrap();
        assert_eq!(f.rows[0].label, None);
        assert_eq!(f.rows[0].id, 7);
        assert_eq!(f.rows[0].features, vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn short_row_reports_its_line() {
        let text = format!("{HEADER}0,0,1,1,2,3,4\n1,0,1,1,2,3\n");
        match parse_feature_file(&text) {
            Err(Error::Parse { line: 4, .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn out_of_range_indices() {
        for row in ["0,2,0,1,1,1,1", "0,0,3,1,1,1,1", "0,0,-2,1,1,1,1", "0,0,0,1,nan,1,1"] {
            let text = format!("{HEADER}{row}\n");
            assert!(matches!(parse_feature_file(&text), Err(Error::Parse { line: 3, .. })), "{row}");
        }
    }

    #[test]
    fn bad_headers() {
        assert!(parse_feature_file("id,domain\n").is_err());
        assert!(parse_feature_file("#ssg-features,version=2,n_domains=2,n_classes=3,dim=4\n").is_err());
        assert!(parse_feature_file("#ssg-features,version=1,n_domains=2,n_classes=3\n").is_err());
        let wrong_cols = "#ssg-features,version=1,n_domains=2,n_classes=3,dim=2\nid,domain,label,f0\n";
        assert!(matches!(parse_feature_file(wrong_cols), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn floats_use_seventeen_digits() {
        assert_eq!(fmt_f64(0.1), "1.0000000000000001e-1");
        let v = 1.0 / 3.0;
        assert_eq!(fmt_f64(v).parse::<f64>().unwrap(), v);
    }
}
