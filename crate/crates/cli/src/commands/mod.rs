pub mod estimate;
pub mod generate;
pub mod sweep;
pub mod train;
pub mod verify;

use crate::config::Settings;
use clap::Args;
use gls_adapt::diagnostics::HistogramSpec;
use gls_adapt::io;
use gls_adapt::{Dataset, DomainTag, Error, Result, TrainConfig};
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

pub struct Context {
    pub settings: Settings,
    pub full_precision: bool,
    pub jobs: usize,
}

/// Optimization options shared by `train` and `sweep-jsd`.
#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batches_per_epoch: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    /// EMA coefficient of the weight update.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Coefficient of the reversed adaptation gradient.
    #[arg(long)]
    pub da_coef: Option<f64>,
    /// Epochs between weight updates.
    #[arg(long)]
    pub weight_update_period: Option<usize>,
    /// Leave the adaptation loss unweighted.
    #[arg(long)]
    pub no_weight_da: bool,
    /// Use plain cross-entropy in weighted algorithms.
    #[arg(long)]
    pub no_weight_c: bool,
    /// Feature extractor hidden sizes, e.g. `64,32`.
    #[arg(long)]
    pub feature_layers: Option<String>,
    /// Discriminator hidden sizes, e.g. `32`.
    #[arg(long)]
    pub disc_hidden: Option<String>,
    /// Run the bound checks after every epoch.
    #[arg(long)]
    pub bounds: bool,
    /// Histogram bins per dimension for the bound checks.
    #[arg(long)]
    pub bins: Option<usize>,
    /// Permutations of the histogram null baseline.
    #[arg(long)]
    pub permutations: Option<usize>,
}

pub fn histogram_spec(s: &Settings, bins: Option<usize>, permutations: Option<usize>) -> Result<HistogramSpec> {
    let d = HistogramSpec::default();
    Ok(HistogramSpec {
        bins_per_dim: s.get_or(bins, "bins", d.bins_per_dim)?,
        permutations: s.get_or(permutations, "permutations", d.permutations)?,
        ..d
    })
}

/// Everything but the algorithm and seed.
pub fn train_config(a: &TrainArgs, s: &Settings) -> Result<TrainConfig> {
    let d = TrainConfig::default();
    let mut arch = d.arch.clone();
    if let Some(layers) = s.sizes(a.feature_layers.as_deref(), "feature_layers")? {
        arch.feature_layers = layers;
    }
    if let Some(layers) = s.sizes(a.disc_hidden.as_deref(), "disc_hidden")? {
        arch.discriminator_hidden = layers;
    }
    let weight_da_loss = !a.no_weight_da && s.get::<bool>(None, "weight_da_loss")?.unwrap_or(true);
    let weight_c_loss = !a.no_weight_c && s.get::<bool>(None, "weight_c_loss")?.unwrap_or(true);
    Ok(TrainConfig {
        epochs: s.get_or(a.epochs, "epochs", d.epochs)?,
        batches_per_epoch: s.get_or(a.batches_per_epoch, "batches_per_epoch", d.batches_per_epoch)?,
        batch_size: s.get_or(a.batch_size, "batch_size", d.batch_size)?,
        lr: s.get_or(a.lr, "lr", d.lr)?,
        momentum: s.get_or(a.momentum, "momentum", d.momentum)?,
        lambda: s.get_or(a.lambda, "lambda", d.lambda)?,
        da_coef: s.get_or(a.da_coef, "da_coef", d.da_coef)?,
        weight_update_period: s.get_or(a.weight_update_period, "weight_update_period", d.weight_update_period)?,
        weight_da_loss,
        weight_c_loss,
        arch,
        record_bounds: s.switch(a.bounds, "bounds")?,
        histogram: histogram_spec(s, a.bins, a.permutations)?,
        ..d
    })
}

pub fn required(path: Option<PathBuf>, key: &str) -> Result<PathBuf> {
    path.ok_or_else(|| Error::ConfigInvalid(format!("missing --{} (or `{key}` in the config)", key.replace('_', "-"))))
}

pub fn path_setting(s: &Settings, flag: &Option<PathBuf>, key: &str) -> Result<Option<PathBuf>> {
    s.get::<PathBuf>(flag.clone(), key)
}

pub fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

/// Reads a source/target pair and gives both the same class count.
pub fn read_pair(source: &Path, target: &Path, k: Option<usize>) -> Result<(Dataset, Dataset)> {
    let s = io::read_dataset(open(source)?, DomainTag::Source, k)?;
    let t = io::read_dataset(open(target)?, DomainTag::Target, k)?;
    let k = s.k.max(t.k);
    Ok((
        Dataset::new(s.features, s.labels, k, DomainTag::Source)?,
        Dataset::new(t.features, t.labels, k, DomainTag::Target)?,
    ))
}

/// Seeds from `seeds`, else `num_seeds` consecutive values from the base seed.
pub fn seed_list(s: &Settings, seeds: Option<&str>, num_seeds: Option<usize>, seed: Option<u64>) -> Result<Vec<u64>> {
    if let Some(words) = s.words(seeds, "seeds") {
        let list = words
            .iter()
            .map(|w| w.parse::<u64>().map_err(|_| Error::ConfigInvalid(format!("bad seed {w:?}"))))
            .collect::<Result<Vec<_>>>()?;
        if list.is_empty() {
            return Err(Error::ConfigInvalid("empty seed list".into()));
        }
        return Ok(list);
    }
    let base = s.seed(seed)?;
    let n = s.get_or(num_seeds, "num_seeds", 1)?;
    if n == 0 {
        return Err(Error::ConfigInvalid("num_seeds must be positive".into()));
    }
    Ok((0..n as u64).map(|i| base.wrapping_add(i)).collect())
}
