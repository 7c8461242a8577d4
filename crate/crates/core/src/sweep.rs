//! Base-versus-weighted comparisons over a suite of label-shift tasks.

use crate::datagen::JsdTask;
use crate::io::NumberFormat;
use crate::trainer::{self, Algorithm, TrainConfig, TrainTrace};
use crate::{Error, Result};
use rayon::prelude::*;
use std::io::Write;

/// Result of one task: both traces and the best target accuracies.
#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub task_id: usize,
    pub jsd: f64,
    pub acc_base: f64,
    pub acc_variant: f64,
    pub base: TrainTrace,
    pub variant: TrainTrace,
}

impl SweepOutcome {
    pub fn gain(&self) -> f64 {
        self.acc_variant - self.acc_base
    }
}

/// Maps `f` over `items` on a pool of `jobs` threads, keeping input order.
pub fn parallel_map<T, U, F>(jobs: usize, items: &[T], f: F) -> Result<Vec<U>>
where
    T: Sync,
    U: Send,
    F: Fn(usize, &T) -> Result<U> + Sync + Send,
{
    if jobs <= 1 {
        return items.iter().enumerate().map(|(i, t)| f(i, t)).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::ConfigInvalid(format!("thread pool: {e}")))?;
    pool.install(|| items.par_iter().enumerate().map(|(i, t)| f(i, t)).collect())
}

/// Trains `config.algorithm` and `variant` on every task. Task `i` uses
/// seed `config.seed + i` for both runs, so the two start from the same
/// parameters and draw the same first batch.
pub fn run_sweep(tasks: &[JsdTask], config: &TrainConfig, variant: Algorithm, jobs: usize) -> Result<Vec<SweepOutcome>> {
    if tasks.is_empty() {
        return Err(Error::InvalidCount(0));
    }
    parallel_map(jobs, tasks, |i, task| {
        let base_cfg = TrainConfig {
            seed: config.seed.wrapping_add(i as u64),
            ..config.clone()
        };
        let variant_cfg = TrainConfig {
            algorithm: variant,
            ..base_cfg.clone()
        };
        let (_, base) = trainer::train(&base_cfg, &task.source, &task.target)?;
        let (_, var) = trainer::train(&variant_cfg, &task.source, &task.target)?;
        Ok(SweepOutcome {
            task_id: i,
            jsd: task.jsd_label,
            acc_base: base.best_accuracy(),
            acc_variant: var.best_accuracy(),
            base,
            variant: var,
        })
    })
}

/// Sample Pearson correlation; `None` when either side is constant.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx).powi(2);
        syy += (y - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

/// Mean gain over the `ceil(n / 4)` tasks with the largest JSD.
pub fn top_quartile_gain(outcomes: &[SweepOutcome]) -> f64 {
    let mut sorted: Vec<&SweepOutcome> = outcomes.iter().collect();
    sorted.sort_by(|a, b| b.jsd.total_cmp(&a.jsd));
    let top = outcomes.len().div_ceil(4);
    sorted[..top].iter().map(|o| o.gain()).sum::<f64>() / top as f64
}

/// `task_id, jsd, acc_base, acc_variant, gain`.
pub fn write_sweep<W: Write>(out: W, outcomes: &[SweepOutcome], fmt: NumberFormat) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["task_id", "jsd", "acc_base", "acc_variant", "gain"])?;
    for o in outcomes {
        w.write_record([
            o.task_id.to_string(),
            fmt.fmt(o.jsd),
            fmt.fmt(o.acc_base),
            fmt.fmt(o.acc_variant),
            fmt.fmt(o.gain()),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{self, DomainSpec, DomainTag};
    use crate::network::Architecture;
    use crate::Categorical;

    #[test]
    fn pearson_examples() {
        assert!((pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((pearson(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-15);
        assert_eq!(pearson(&[1.0, 1.0], &[1.0, 2.0]), None);
        // sxy = 1, sxx = syy = 2
        let r = pearson(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap();
        assert!((r - 0.5).abs() < 1e-15);
    }

    #[test]
    fn parallel_map_keeps_order() {
        let items: Vec<u64> = (0..50).collect();
        let a = parallel_map(4, &items, |i, v| Ok(i as u64 * 1000 + v * v)).unwrap();
        let b = parallel_map(1, &items, |i, v| Ok(i as u64 * 1000 + v * v)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn single_task_sweep() {
        let u = Categorical::uniform(3).unwrap();
        let s = datagen::make_gaussian_domain(&DomainSpec::circle(u.clone(), 0.4, 300, 1, DomainTag::Source)).unwrap();
        let t = datagen::make_gaussian_domain(&DomainSpec::circle(u, 0.4, 300, 2, DomainTag::Target)).unwrap();
        let tasks = datagen::jsd_task_suite(&s, &t, 1, 3).unwrap();
        let cfg = TrainConfig {
            algorithm: Algorithm::Dann,
            epochs: 2,
            batches_per_epoch: 5,
            batch_size: 8,
            arch: Architecture {
                feature_layers: vec![4],
                discriminator_hidden: vec![4],
                ..Architecture::default()
            },
            ..TrainConfig::default()
        };
        let out = run_sweep(&tasks, &cfg, Algorithm::Iwdan, 2).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].gain(), out[0].acc_variant - out[0].acc_base);
        assert_eq!(top_quartile_gain(&out), out[0].gain());
        let mut buf = Vec::new();
        write_sweep(&mut buf, &out, NumberFormat::Short).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(text.starts_with("task_id,jsd,acc_base,acc_variant,gain\n0,"));
    }
}
