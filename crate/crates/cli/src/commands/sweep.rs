use super::{Context, TrainArgs};
use crate::output;
use clap::Args;
use gls_adapt::datagen;
use gls_adapt::io::{self, format_g6};
use gls_adapt::sweep::{self as suite, SweepOutcome};
use gls_adapt::{Algorithm, Categorical, Dataset, DomainSpec, DomainTag, Result, TrainConfig};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Base source domain; a balanced 10-class circle task when omitted.
    #[arg(long)]
    pub source: Option<PathBuf>,
    #[arg(long)]
    pub target: Option<PathBuf>,
    /// Scatter CSV: `task_id,jsd,acc_base,acc_variant,gain`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Directory for per-task traces.
    #[arg(long)]
    pub trace_dir: Option<PathBuf>,
    #[arg(long)]
    pub tasks: Option<usize>,
    #[arg(long)]
    pub base: Option<String>,
    /// Defaults to the estimated-weight variant of --base.
    #[arg(long)]
    pub variant: Option<String>,
    /// Seed of the task suite; defaults to the training seed.
    #[arg(long)]
    pub task_seed: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub train: TrainArgs,
}

fn default_pair() -> Result<(Dataset, Dataset)> {
    let u = Categorical::uniform(10)?;
    let s = datagen::make_gaussian_domain(&DomainSpec::circle(u.clone(), 0.13, 6000, 1, DomainTag::Source))?;
    let t = datagen::make_gaussian_domain(&DomainSpec::circle(u, 0.13, 6000, 2, DomainTag::Target))?;
    Ok((s, t))
}

fn write_traces(ctx: &Context, dir: &std::path::Path, outcomes: &[SweepOutcome]) -> Result<()> {
    output::create_dir(dir)?;
    for o in outcomes {
        for trace in [&o.base, &o.variant] {
            let path = dir.join(format!("task{}_{}.csv", o.task_id, trace.algorithm.name()));
            output::write_csv(&path, ctx.full_precision, |w, fmt| io::write_trace(w, trace, fmt))?;
        }
    }
    Ok(())
}

pub fn run(ctx: &Context, a: &SweepArgs) -> Result<ExitCode> {
    let s = &ctx.settings;
    let out = super::required(super::path_setting(s, &a.out, "out")?, "out")?;
    let seed = s.seed(a.seed)?;
    let base: Algorithm = s.get_or(a.base.clone(), "base", "dann".to_string())?.parse()?;
    let variant: Algorithm = match s.get(a.variant.clone(), "variant")? {
        Some(v) => v.parse()?,
        None => base.weighted(),
    };
    let count = s.get_or(a.tasks, "tasks", 20)?;
    let task_seed = s.get_or(a.task_seed, "task_seed", seed)?;
    let source = super::path_setting(s, &a.source, "source")?;
    let target = super::path_setting(s, &a.target, "target")?;
    let (src, tgt) = match (source, target) {
        (Some(sp), Some(tp)) => super::read_pair(&sp, &tp, None)?,
        (None, None) => default_pair()?,
        _ => return Err(gls_adapt::Error::ConfigInvalid("give both --source and --target or neither".into())),
    };
    let tasks = datagen::jsd_task_suite(&src, &tgt, count, task_seed)?;
    let config = TrainConfig {
        algorithm: base,
        seed,
        ..super::train_config(&a.train, s)?
    };
    let outcomes = suite::run_sweep(&tasks, &config, variant, ctx.jobs)?;

    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        output::create_dir(parent)?;
    }
    output::write_csv(&out, ctx.full_precision, |w, fmt| suite::write_sweep(w, &outcomes, fmt))?;
    if let Some(dir) = super::path_setting(s, &a.trace_dir, "trace_dir")? {
        write_traces(ctx, &dir, &outcomes)?;
    }
    let jsds: Vec<f64> = outcomes.iter().map(|o| o.jsd).collect();
    let gains: Vec<f64> = outcomes.iter().map(|o| o.gain()).collect();
    let r = suite::pearson(&jsds, &gains).map_or("undefined".to_string(), format_g6);
    println!(
        "{} tasks, {variant} vs {base}: pearson(jsd, gain) {r}, top-quartile gain {}",
        outcomes.len(),
        format_g6(suite::top_quartile_gain(&outcomes))
    );
    Ok(ExitCode::SUCCESS)
}
