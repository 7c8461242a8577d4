use super::Context;
use crate::output;
use clap::Args;
use gls_adapt::datagen::{self, subsample_protocol};
use gls_adapt::distributions::{self, empirical_label_dist};
use gls_adapt::io::{self, format_g6};
use gls_adapt::{Categorical, Dataset, DomainSpec, DomainTag, Error, Result};
use std::fmt::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Number of classes (ignored when --p-source is given).
    #[arg(long)]
    pub k: Option<usize>,
    /// Samples per domain.
    #[arg(long)]
    pub n: Option<usize>,
    /// Target samples, when different from --n.
    #[arg(long)]
    pub n_target: Option<usize>,
    /// Per-coordinate noise around the class means.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Source label distribution, e.g. `0.6,0.2,0.2`.
    #[arg(long)]
    pub p_source: Option<String>,
    /// Target label distribution; defaults to the reversed source one.
    #[arg(long)]
    pub p_target: Option<String>,
    /// Keep this fraction of the first half of the source classes.
    #[arg(long)]
    pub subsample: Option<f64>,
    /// Offset of every target class mean along the first axis.
    #[arg(long)]
    pub conditional_shift: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

fn list_text(values: &[f64]) -> String {
    values.iter().map(|v| format_g6(*v)).collect::<Vec<_>>().join(",")
}

pub fn run(ctx: &Context, a: &GenerateArgs) -> Result<ExitCode> {
    let s = &ctx.settings;
    let out = super::required(super::path_setting(s, &a.out, "out")?, "out")?;
    let seed = s.seed(a.seed)?;
    let p_source = match s.list(a.p_source.as_deref(), "p_source")? {
        Some(p) => Categorical::new(p)?,
        None => match s.get_or(a.k, "k", 3)? {
            3 => Categorical::new(vec![0.6, 0.2, 0.2])?,
            k => Categorical::uniform(k)?,
        },
    };
    let k = p_source.k();
    let p_target = match s.list(a.p_target.as_deref(), "p_target")? {
        Some(p) => Categorical::new(p)?,
        None => Categorical::new(p_source.probs().iter().rev().copied().collect())?,
    };
    if p_target.k() != k {
        return Err(Error::LengthMismatch(p_target.k(), k));
    }
    let n = s.get_or(a.n, "n", 2000)?;
    let n_target = s.get_or(a.n_target, "n_target", n)?;
    let sigma = s.get_or(a.sigma, "sigma", 0.4)?;

    let source_spec = DomainSpec::circle(p_source, sigma, n, seed.wrapping_mul(2), DomainTag::Source);
    let mut target_spec = DomainSpec::circle(p_target, sigma, n_target, seed.wrapping_mul(2).wrapping_add(1), DomainTag::Target);
    let shift = s.get_or(a.conditional_shift, "conditional_shift", 0.0)?;
    if shift != 0.0 {
        target_spec.conditional_shift = Some(vec![vec![shift, 0.0]; k]);
    }
    let mut source = datagen::make_gaussian_domain(&source_spec)?;
    let target = datagen::make_gaussian_domain(&target_spec)?;
    if let Some(fraction) = s.get(a.subsample, "subsample")? {
        source = subsample_protocol(&source, fraction, seed ^ 0x5ab5_a3b1_e000_0001)?;
    }

    output::create_dir(&out)?;
    let write = |name: &str, data: &Dataset| {
        output::write_csv(&out.join(name), ctx.full_precision, |w, fmt| io::write_dataset(w, data, fmt))
    };
    write("source.csv", &source)?;
    write("target.csv", &target)?;

    let ls = empirical_label_dist(&source.labels, k)?;
    let lt = empirical_label_dist(&target.labels, k)?;
    let jsd = distributions::jsd(&ls, &lt)?;
    let mut manifest = String::new();
    let _ = writeln!(manifest, "k = {k}");
    let _ = writeln!(manifest, "seed = {seed}");
    let _ = writeln!(manifest, "sigma = {}", format_g6(sigma));
    let _ = writeln!(manifest, "source_n = {}", source.len());
    let _ = writeln!(manifest, "target_n = {}", target.len());
    let _ = writeln!(manifest, "source_label_dist = {}", list_text(ls.probs()));
    let _ = writeln!(manifest, "target_label_dist = {}", list_text(lt.probs()));
    let _ = writeln!(manifest, "jsd = {}", format_g6(jsd));
    if ctx.full_precision {
        let _ = writeln!(manifest, "jsd_raw = {jsd:?}");
    }
    std::fs::write(out.join("manifest.txt"), manifest)?;
    println!("wrote {} source and {} target samples to {} (label jsd {})", source.len(), target.len(), out.display(), format_g6(jsd));
    Ok(ExitCode::SUCCESS)
}
