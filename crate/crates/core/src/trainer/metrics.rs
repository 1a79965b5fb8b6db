use crate::data::fmt_f64;
use crate::error::{Error, Result};
use crate::trainer::{AblationRow, MetricsRecord};

pub const CURVE_COLUMNS: &str = "epoch,l_src,l_tgt,l_ss,l_total,target_acc,domain_acc";

/// One JSON object per line. Floats use the shortest form that reads back
/// to the same bits.
pub fn render_metrics_jsonl(records: &[MetricsRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("metrics serialize"));
        out.push('\n');
    }
    out
}

pub fn parse_metrics_jsonl(text: &str) -> Result<Vec<MetricsRecord>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                line: i + 1,
                detail: e.to_string(),
            })
        })
        .collect()
}

pub fn curves_csv(records: &[MetricsRecord]) -> String {
    let mut out = format!("{CURVE_COLUMNS}\n");
    for r in records {
        let vals = [r.l_src, r.l_tgt, r.l_ss, r.l_total, r.target_acc, r.domain_acc];
        out.push_str(&r.epoch.to_string());
        for v in vals {
            out.push(',');
            out.push_str(&fmt_f64(v));
        }
        out.push('\n');
    }
    out
}

/// `variant,mean,std,seeds`; seeds are `;`-separated.
pub fn summary_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from("variant,mean,std,seeds\n");
    for r in rows {
        let seeds: Vec<String> = r.seeds.iter().map(u64::to_string).collect();
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.variant.name(),
            fmt_f64(r.mean),
            fmt_f64(r.std),
            seeds.join(";")
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(epoch: usize) -> MetricsRecord {
        MetricsRecord {
            epoch,
            l_src: 0.1 + epoch as f64,
            l_tgt: 1.0 / 3.0,
            l_ss: 2.0e-17,
            l_total: 7.25,
            source_acc: 0.5,
            domain_acc: 0.75,
            target_acc: 0.625,
            reveal_rate: 0.05,
        }
    }

    #[test]
    fn jsonl_round_trip() {
        let recs: Vec<_> = (1..=3).map(record).collect();
        assert_eq!(parse_metrics_jsonl(&render_metrics_jsonl(&recs)).unwrap(), recs);
    }

    #[test]
    fn malformed_line_reports_number() {
        let text = format!("{}{{oops\n", render_metrics_jsonl(&[record(1)]));
        assert!(matches!(parse_metrics_jsonl(&text), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn curves_have_header_and_rows() {
        assert_eq!(curves_csv(&[]), format!("{CURVE_COLUMNS}\n"));
        let csv = curves_csv(&[record(1), record(2)]);
        assert_eq!(csv.lines().count(), 3);
        let fields: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
        assert_eq!(fields[2].parse::<f64>().unwrap().to_bits(), (1.0f64 / 3.0).to_bits());
    }
}
