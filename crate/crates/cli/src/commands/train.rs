use super::{Context, TrainArgs};
use crate::output;
use clap::Args;
use gls_adapt::io::{self, NumberFormat};
use gls_adapt::sweep::parallel_map;
use gls_adapt::trainer;
use gls_adapt::{Algorithm, Error, Result, TrainConfig};
use std::collections::HashMap;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Debug, Args)]
pub struct TrainCmdArgs {
    #[arg(long)]
    pub source: Option<PathBuf>,
    #[arg(long)]
    pub target: Option<PathBuf>,
    /// Output directory for traces, bounds and the summary.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Comma-separated algorithms, e.g. `dann,iwdan`; `none` is source-only.
    #[arg(long)]
    pub algorithms: Option<String>,
    /// Explicit seeds, e.g. `0,1,2`.
    #[arg(long)]
    pub seeds: Option<String>,
    /// Number of consecutive seeds from --seed.
    #[arg(long)]
    pub num_seeds: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Class count, when the files do not contain every label.
    #[arg(long)]
    pub k: Option<usize>,
    #[command(flatten)]
    pub train: TrainArgs,
}

struct RunResult {
    algorithm: Algorithm,
    seed: u64,
    best: f64,
}

fn write_summary(
    out: &mut dyn Write,
    fmt: NumberFormat,
    algorithms: &[Algorithm],
    seeds: &[u64],
    best: &HashMap<(Algorithm, u64), f64>,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = ["algorithm", "base", "mean_best_acc", "win_fraction"].map(String::from).into();
    header.extend(seeds.iter().map(|s| format!("seed_{s}")));
    w.write_record(&header)?;
    for &alg in algorithms {
        let accs: Vec<f64> = seeds.iter().map(|s| best[&(alg, *s)]).collect();
        let mean = accs.iter().sum::<f64>() / accs.len() as f64;
        let base = alg.base();
        let (base_name, win) = if base != alg && algorithms.contains(&base) {
            let wins = seeds.iter().filter(|s| best[&(alg, **s)] > best[&(base, **s)]).count();
            (base.name().to_string(), fmt.fmt(wins as f64 / seeds.len() as f64))
        } else {
            (String::new(), String::new())
        };
        let mut row = vec![alg.name().to_string(), base_name, fmt.fmt(mean), win];
        row.extend(accs.iter().map(|v| fmt.fmt(*v)));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn run(ctx: &Context, a: &TrainCmdArgs) -> Result<ExitCode> {
    let s = &ctx.settings;
    let source = super::required(super::path_setting(s, &a.source, "source")?, "source")?;
    let target = super::required(super::path_setting(s, &a.target, "target")?, "target")?;
    let out = super::required(super::path_setting(s, &a.out, "out")?, "out")?;
    let words = s
        .words(a.algorithms.as_deref(), "algorithms")
        .or_else(|| s.words(None, "algorithm"))
        .unwrap_or_else(|| vec!["dann".into(), "iwdan".into()]);
    let mut algorithms: Vec<Algorithm> = Vec::new();
    for word in &words {
        let alg: Algorithm = word.parse()?;
        if !algorithms.contains(&alg) {
            algorithms.push(alg);
        }
    }
    if algorithms.is_empty() {
        return Err(Error::ConfigInvalid("no algorithms given".into()));
    }
    let seeds = super::seed_list(s, a.seeds.as_deref(), a.num_seeds, a.seed)?;
    let base_config = super::train_config(&a.train, s)?;
    let (src, tgt) = super::read_pair(&source, &target, s.get(a.k, "k")?)?;
    output::create_dir(&out)?;

    let runs: Vec<(Algorithm, u64)> = algorithms.iter().flat_map(|&alg| seeds.iter().map(move |&seed| (alg, seed))).collect();
    let results = parallel_map(ctx.jobs, &runs, |_, &(algorithm, seed)| {
        let cfg = TrainConfig { algorithm, seed, ..base_config.clone() };
        let (_, trace) = trainer::train(&cfg, &src, &tgt)?;
        let stem = format!("{}_seed{seed}", algorithm.name());
        output::write_csv(&out.join(format!("trace_{stem}.csv")), ctx.full_precision, |w, fmt| {
            io::write_trace(w, &trace, fmt)
        })?;
        if cfg.record_bounds {
            let rows = io::trace_bounds(&trace);
            output::write_csv(&out.join(format!("bounds_{stem}.csv")), ctx.full_precision, |w, fmt| {
                io::write_bounds(w, &rows, fmt)
            })?;
            let failed = rows.iter().filter(|(_, b)| !b.ok()).count();
            if failed > 0 {
                log::warn!("{stem}: {failed} of {} bound checks failed", rows.len());
            }
        }
        Ok(RunResult { algorithm, seed, best: trace.best_accuracy() })
    })?;

    let best: HashMap<(Algorithm, u64), f64> = results.iter().map(|r| ((r.algorithm, r.seed), r.best)).collect();
    output::write_csv(&out.join("summary.csv"), ctx.full_precision, |w, fmt| {
        write_summary(w, fmt, &algorithms, &seeds, &best)
    })?;
    for alg in &algorithms {
        let mean = seeds.iter().map(|s| best[&(*alg, *s)]).sum::<f64>() / seeds.len() as f64;
        println!("{:<9} mean best target accuracy {}", alg.name(), io::format_g6(mean));
    }
    Ok(ExitCode::SUCCESS)
}
