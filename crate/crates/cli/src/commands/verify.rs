use super::Context;
use crate::output;
use clap::Args;
use gls_adapt::diagnostics::{self, EpochSnapshot};
use gls_adapt::io::{self, format_g6};
use gls_adapt::{Error, Matrix, Result};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Source representation with a `label` column.
    #[arg(long)]
    pub source: Option<PathBuf>,
    #[arg(long)]
    pub target: Option<PathBuf>,
    /// Source prediction probabilities, row-aligned with --source.
    #[arg(long)]
    pub source_predictions: Option<PathBuf>,
    #[arg(long)]
    pub target_predictions: Option<PathBuf>,
    /// Bounds CSV: `check,epoch,lhs,rhs,holds,slack`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub bins: Option<usize>,
    #[arg(long)]
    pub permutations: Option<usize>,
    /// Exit with status 2 when an applicable check fails.
    #[arg(long)]
    pub strict: bool,
}

fn argmax_rows(m: &Matrix, expected_rows: usize, k: usize) -> Result<Vec<usize>> {
    if m.nrows() != expected_rows || m.ncols() != k {
        return Err(Error::ShapeMismatch(format!(
            "predictions are {}x{}, expected {expected_rows}x{k}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(m.row_iter()
        .map(|r| r.iter().enumerate().fold((0, f64::NEG_INFINITY), |b, (i, &v)| if v > b.1 { (i, v) } else { b }).0)
        .collect())
}

pub fn run(ctx: &Context, a: &VerifyArgs) -> Result<ExitCode> {
    let s = &ctx.settings;
    let source = super::required(super::path_setting(s, &a.source, "source")?, "source")?;
    let target = super::required(super::path_setting(s, &a.target, "target")?, "target")?;
    let sp = super::required(super::path_setting(s, &a.source_predictions, "source_predictions")?, "source_predictions")?;
    let tp = super::required(super::path_setting(s, &a.target_predictions, "target_predictions")?, "target_predictions")?;
    let out = super::required(super::path_setting(s, &a.out, "out")?, "out")?;

    let spm = io::read_matrix(super::open(&sp)?)?;
    let (src, tgt) = super::read_pair(&source, &target, Some(spm.ncols()))?;
    let k = src.k;
    let preds_src = argmax_rows(&spm, src.len(), k)?;
    let preds_tgt = argmax_rows(&io::read_matrix(super::open(&tp)?)?, tgt.len(), k)?;
    let snap = EpochSnapshot {
        k,
        feats_src: &src.features,
        labels_src: &src.labels,
        preds_src: &preds_src,
        feats_tgt: &tgt.features,
        labels_tgt: &tgt.labels,
        preds_tgt: &preds_tgt,
    };
    let spec = super::histogram_spec(s, a.bins, a.permutations)?;
    let reports = diagnostics::bound_suite(&snap, &spec)?;
    let rows: Vec<(usize, _)> = reports.iter().map(|r| (0, r.clone())).collect();
    output::write_csv(&out, ctx.full_precision, |w, fmt| io::write_bounds(w, &rows, fmt))?;

    let mut failed = 0;
    for r in &reports {
        let status = if !r.applicable {
            "n/a"
        } else if r.holds {
            "holds"
        } else {
            failed += 1;
            "FAILS"
        };
        println!("{:<20} {} <= {}  {status}", r.check, format_g6(r.lhs), format_g6(r.rhs));
    }
    if failed > 0 && a.strict {
        return Ok(ExitCode::from(2));
    }
    Ok(ExitCode::SUCCESS)
}
