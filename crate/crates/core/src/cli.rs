//! The `ssg` command line.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::{parse_config, ExperimentConfig};
use crate::data::{fmt_f64, write_feature_file};
use crate::error::{Error, Result};
use crate::model::{load_checkpoint, save_checkpoint, ModelVariant};
use crate::trainer::{
    curves_csv, evaluate, gradient_check, init_model, parse_metrics_jsonl, render_metrics_jsonl, run_ablation_suite,
    run_mask_sweep, summary_csv, train, AblationRow, GRADCHECK_STEP, GRADCHECK_TOLERANCE,
};

#[derive(Debug, Parser)]
#[command(name = "ssg", version, about = "Self-supervised graph head for multi-source domain adaptation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct Common {
    /// JSON config file; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// `key=value` override, applied after the file; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the configured dataset as a feature file.
    GenData(Common),
    /// Train one model and write metrics and a checkpoint.
    Train(Common),
    /// Evaluate a checkpoint on the configured dataset.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Compare analytic and finite-difference gradients.
    Gradcheck(Common),
    /// Run the seven-row ablation table.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
        seeds: Vec<u64>,
    },
    /// Train once per mask ratio.
    SweepMask {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "0,0.25,0.5,0.75,0.9,0.95,1")]
        ratios: Vec<f64>,
    },
    /// Convert a metrics JSONL file into a curves CSV.
    Curves {
        #[arg(long)]
        metrics: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Resolves the config and prepares the output directory with the
/// resolved config in it.
fn prepare(common: &Common) -> Result<ExperimentConfig> {
    let cfg = parse_config(common.config.as_deref(), &common.overrides)?;
    fs::create_dir_all(&common.out).map_err(|e| Error::io(&common.out, e))?;
    write(&common.out.join("config.json"), &cfg.to_json_string())?;
    Ok(cfg)
}

/// JSONL metrics to a curves CSV.
pub fn emit_curves(metrics_jsonl: &str) -> Result<String> {
    Ok(curves_csv(&parse_metrics_jsonl(metrics_jsonl)?))
}

fn single_run_summary(variant: &str, acc: f64, seed: u64) -> String {
    format!("variant,mean,std,seeds\n{variant},{},{},{seed}\n", fmt_f64(acc), fmt_f64(0.0))
}

/// Runs one command and returns the text to print on success.
pub fn dispatch(command: Command) -> Result<String> {
    match command {
        Command::GenData(common) => {
            let cfg = prepare(&common)?;
            let ds = cfg.load_dataset()?;
            let path = common.out.join("features.csv");
            write_feature_file(&ds, &path)?;
            Ok(format!("wrote {} samples to {}", ds.len(), path.display()))
        }
        Command::Train(common) => {
            let cfg = prepare(&common)?;
            let ds = cfg.load_dataset()?;
            let outcome = train(&cfg, &ds)?;
            write(&common.out.join("metrics.jsonl"), &render_metrics_jsonl(&outcome.metrics))?;
            write(&common.out.join("curves.csv"), &curves_csv(&outcome.metrics))?;
            let acc = outcome.metrics.last().map_or(0.0, |m| m.target_acc);
            write(
                &common.out.join("summary.csv"),
                &single_run_summary(cfg.variant.name(), acc, cfg.seed),
            )?;
            save_checkpoint(&outcome.model, &common.out.join("checkpoint.txt"))?;
            Ok(format!("{}: final target accuracy {acc:.4} after {} epochs", cfg.variant, cfg.epochs))
        }
        Command::Eval { common, checkpoint } => {
            let cfg = prepare(&common)?;
            let ds = cfg.load_dataset()?;
            let mut model = init_model(&cfg, &ds)?;
            model.load_parameters(&load_checkpoint(&checkpoint)?)?;
            let e = evaluate(&model, &ds)?;
            let report = serde_json::json!({
                "target_acc": e.target_acc,
                "domain_acc": e.domain_acc,
                "target_labeled": e.target_labeled,
            });
            write(&common.out.join("eval.json"), &format!("{report}\n"))?;
            write(
                &common.out.join("summary.csv"),
                &single_run_summary(cfg.variant.name(), e.target_acc, cfg.seed),
            )?;
            Ok(format!(
                "target accuracy {:.4} ({} labeled), domain accuracy {:.4}",
                e.target_acc, e.target_labeled, e.domain_acc
            ))
        }
        Command::Gradcheck(common) => {
            let cfg = prepare(&common)?;
            let ds = cfg.load_dataset()?;
            let mut variants = vec![cfg.variant];
            if cfg.variant != ModelVariant::Linear {
                variants.push(ModelVariant::Linear);
            }
            let mut lines = Vec::new();
            let mut failed = Vec::new();
            for v in variants {
                let mut c = cfg.clone();
                c.variant = v;
                let report = gradient_check(&c, &ds, GRADCHECK_STEP)?;
                let ok = report.passed(GRADCHECK_TOLERANCE);
                lines.push(format!(
                    "{v}: max relative error {:.3e} over {} coordinates ({})",
                    report.max_rel_error,
                    report.checked,
                    if ok { "pass" } else { "FAIL" }
                ));
                if !ok {
                    failed.push(format!("{v}: {report:?}"));
                }
            }
            write(&common.out.join("gradcheck.txt"), &format!("{}\n", lines.join("\n")))?;
            if failed.is_empty() {
                Ok(lines.join("\n"))
            } else {
                Err(Error::Training(format!(
                    "gradient check above {GRADCHECK_TOLERANCE:e}: {}",
                    failed.join("; ")
                )))
            }
        }
        Command::Ablate { common, seeds } => {
            let cfg = prepare(&common)?;
            let ds = cfg.load_dataset()?;
            let rows = run_ablation_suite(&cfg, &ds, &seeds)?;
            write_ablation(&common.out, &rows)?;
            let table: Vec<String> = rows
                .iter()
                .map(|r| format!("{:<14} {:.4} ± {:.4}", r.variant.name(), r.mean, r.std))
                .collect();
            Ok(table.join("\n"))
        }
        Command::SweepMask { common, ratios } => {
            let cfg = prepare(&common)?;
            let ds = cfg.load_dataset()?;
            let runs = run_mask_sweep(&cfg, &ds, &ratios)?;
            let mut csv = String::from("mask_ratio,epoch,l_ss,domain_acc,target_acc\n");
            let mut lines = Vec::new();
            for run in &runs {
                let tag = fmt_f64(run.ratio);
                write(
                    &common.out.join(format!("metrics_ratio_{}.jsonl", run.ratio)),
                    &render_metrics_jsonl(&run.metrics),
                )?;
                for m in &run.metrics {
                    csv.push_str(&format!(
                        "{tag},{},{},{},{}\n",
                        m.epoch,
                        fmt_f64(m.l_ss),
                        fmt_f64(m.domain_acc),
                        fmt_f64(m.target_acc)
                    ));
                }
                if let Some(last) = run.metrics.last() {
                    lines.push(format!(
                        "mask_ratio {}: l_ss {:.4}, domain acc {:.4}, target acc {:.4}",
                        run.ratio, last.l_ss, last.domain_acc, last.target_acc
                    ));
                }
            }
            write(&common.out.join("sweep.csv"), &csv)?;
            Ok(lines.join("\n"))
        }
        Command::Curves { metrics, out } => {
            let text = fs::read_to_string(&metrics).map_err(|e| Error::io(&metrics, e))?;
            let csv = emit_curves(&text).map_err(|e| match e {
                Error::Parse { line, detail } => Error::Parse {
                    line,
                    detail: format!("{}: {detail}", metrics.display()),
                },
                other => other,
            })?;
            write(&out, &csv)?;
            Ok(format!("wrote {} rows to {}", csv.lines().count() - 1, out.display()))
        }
    }
}

fn write_ablation(out: &Path, rows: &[AblationRow]) -> Result<()> {
    write(&out.join("summary.csv"), &summary_csv(rows))?;
    let runs = out.join("runs");
    fs::create_dir_all(&runs).map_err(|e| Error::io(&runs, e))?;
    for row in rows {
        for (seed, metrics) in row.seeds.iter().zip(&row.metrics) {
            let stem = format!("{}_seed{seed}", row.variant.name().replace('+', "_"));
            write(&runs.join(format!("{stem}.jsonl")), &render_metrics_jsonl(metrics))?;
            write(&runs.join(format!("{stem}_curves.csv")), &curves_csv(metrics))?;
        }
    }
    Ok(())
}
