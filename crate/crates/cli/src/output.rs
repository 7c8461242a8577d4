use gls_adapt::io::NumberFormat;
use gls_adapt::Result;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

/// `dir/name.csv` becomes `dir/name.raw.csv`.
pub fn raw_path(path: &Path) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.raw.csv"))
}

/// Writes `path` with short numbers, and its raw sidecar when `full` is set.
pub fn write_csv<F>(path: &Path, full: bool, write: F) -> Result<()>
where
    F: Fn(&mut dyn Write, NumberFormat) -> Result<()>,
{
    let mut targets = vec![(path.to_path_buf(), NumberFormat::Short)];
    if full {
        targets.push((raw_path(path), NumberFormat::Full));
    }
    for (p, fmt) in targets {
        let mut out = BufWriter::new(File::create(&p)?);
        write(&mut out, fmt)?;
        out.flush()?;
    }
    Ok(())
}

pub fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}
