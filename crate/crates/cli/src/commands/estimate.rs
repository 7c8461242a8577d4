use super::Context;
use crate::output;
use clap::Args;
use gls_adapt::distributions::empirical_label_dist;
use gls_adapt::estimator::{self, solve_qp, ConfusionAccumulator, DEFAULT_CONDITION_CAP};
use gls_adapt::io::{self, format_g6};
use gls_adapt::{Categorical, Error, Result, WeightVector};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Debug, Args)]
pub struct EstimateArgs {
    /// Source prediction probabilities, one column per class.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    /// CSV with a `label` column, one row per source prediction.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Target prediction probabilities.
    #[arg(long)]
    pub target_predictions: Option<PathBuf>,
    /// Source label distribution; the empirical one of --labels by default.
    #[arg(long)]
    pub p_source: Option<String>,
    /// Largest condition number at which the exact inverse is also written.
    #[arg(long)]
    pub condition_cap: Option<f64>,
    /// Weights CSV: `method,w_0,...`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run(ctx: &Context, a: &EstimateArgs) -> Result<ExitCode> {
    let s = &ctx.settings;
    let preds_path = super::required(super::path_setting(s, &a.predictions, "predictions")?, "predictions")?;
    let labels_path = super::required(super::path_setting(s, &a.labels, "labels")?, "labels")?;
    let target_path = super::required(super::path_setting(s, &a.target_predictions, "target_predictions")?, "target_predictions")?;
    let out = super::required(super::path_setting(s, &a.out, "out")?, "out")?;

    let preds = io::read_matrix(super::open(&preds_path)?)?;
    let labels = io::read_labels(super::open(&labels_path)?)?;
    let target = io::read_matrix(super::open(&target_path)?)?;
    let k = preds.ncols();
    if target.ncols() != k {
        return Err(Error::ShapeMismatch(format!("{k} source columns vs {} target columns", target.ncols())));
    }
    let p_s = match s.list(a.p_source.as_deref(), "p_source")? {
        Some(p) => Categorical::new(p)?,
        None => empirical_label_dist(&labels, k)?,
    };

    let mut acc = ConfusionAccumulator::new(k);
    acc.accumulate(&preds, &labels, &target)?;
    let est = acc.finalize()?;
    if !est.missing_classes.is_empty() {
        log::warn!("no source samples for classes {:?}", est.missing_classes);
    }
    let w = solve_qp(&est.confusion, &est.mu, &p_s)?;
    let cap = s.get_or(a.condition_cap, "condition_cap", DEFAULT_CONDITION_CAP)?;
    let cond = estimator::condition_number(&est.confusion);
    let exact = if cond <= cap {
        Some(estimator::exact_inverse_weights_capped(&est.confusion, &est.mu, cap)?)
    } else {
        log::info!("confusion condition number {} exceeds {}; exact inverse skipped", format_g6(cond), format_g6(cap));
        None
    };

    let mut rows: Vec<(&str, &WeightVector)> = vec![("qp", &w)];
    if let Some(e) = &exact {
        rows.push(("exact_inverse", e));
    }
    output::write_csv(&out, ctx.full_precision, |wr, fmt| io::write_weights(wr, &rows, fmt))?;
    let text: Vec<String> = w.values().iter().map(|v| format_g6(*v)).collect();
    println!("qp weights [{}], condition number {}", text.join(", "), format_g6(cond));
    Ok(ExitCode::SUCCESS)
}
