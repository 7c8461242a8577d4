//! CSV readers and writers.
//!
//! Floats are written with 6 significant digits in `%g` style unless
//! [`NumberFormat::Full`] is requested, which writes the shortest string
//! that round-trips. Parse failures report the 1-based line of the
//! offending record (the header is line 1).

use crate::datagen::{Dataset, DomainTag};
use crate::diagnostics::BoundReport;
use crate::estimator::WeightVector;
use crate::trainer::TrainTrace;
use crate::{Error, Matrix, Result};
use std::io::{Read, Write};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NumberFormat {
    /// 6 significant digits.
    #[default]
    Short,
    /// Round-trip precision.
    Full,
}

impl NumberFormat {
    pub fn fmt(self, x: f64) -> String {
        match self {
            NumberFormat::Short => format_g6(x),
            NumberFormat::Full => format!("{x:?}"),
        }
    }
}

fn trim_fraction(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// `printf("%g")` with the default precision of 6.
pub fn format_g6(x: f64) -> String {
    if x == 0.0 {
        return if x.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    if !x.is_finite() {
        return if x.is_nan() {
            "nan".into()
        } else if x > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..6).contains(&exp) {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", trim_fraction(mantissa), exp.abs())
    } else {
        let decimals = (5 - exp) as usize;
        trim_fraction(&format!("{x:.decimals$}")).to_string()
    }
}

fn parse_error(record: &csv::StringRecord, message: String) -> Error {
    Error::Parse {
        line: record.position().map_or(0, |p| p.line() as usize),
        message,
    }
}

fn csv_error(e: csv::Error) -> Error {
    match e.position() {
        Some(p) => Error::Parse { line: p.line() as usize, message: e.to_string() },
        None => Error::Csv(e),
    }
}

fn parse_f64(record: &csv::StringRecord, field: usize) -> Result<f64> {
    let raw = record.get(field).unwrap_or("");
    let v: f64 = raw
        .trim()
        .parse()
        .map_err(|_| parse_error(record, format!("field {} is not a number: {raw:?}", field + 1)))?;
    if !v.is_finite() {
        return Err(parse_error(record, format!("field {} is not finite", field + 1)));
    }
    Ok(v)
}

fn parse_label(record: &csv::StringRecord, field: usize) -> Result<usize> {
    let raw = record.get(field).unwrap_or("");
    raw.trim()
        .parse()
        .map_err(|_| parse_error(record, format!("field {} is not a class index: {raw:?}", field + 1)))
}

fn reader<R: Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(input)
}

fn numbered_header(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}_{i}")).collect()
}

/// Writes `feature_0, ..., feature_{d-1}, label`.
pub fn write_dataset<W: Write>(out: W, data: &Dataset, fmt: NumberFormat) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = numbered_header("feature", data.dim());
    header.push("label".into());
    w.write_record(&header)?;
    for (i, y) in data.labels.iter().enumerate() {
        let mut row: Vec<String> = data.features.row(i).iter().map(|v| fmt.fmt(*v)).collect();
        row.push(y.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a dataset CSV. The class count defaults to `max label + 1`.
pub fn read_dataset<R: Read>(input: R, domain: DomainTag, k: Option<usize>) -> Result<Dataset> {
    let mut rdr = reader(input);
    let header = rdr.headers().map_err(csv_error)?.clone();
    if header.len() < 2 || header.get(header.len() - 1) != Some("label") {
        return Err(Error::Parse { line: 1, message: "expected feature columns followed by `label`".into() });
    }
    let d = header.len() - 1;
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(csv_error)?;
        for c in 0..d {
            values.push(parse_f64(&record, c)?);
        }
        labels.push(parse_label(&record, d)?);
    }
    if labels.is_empty() {
        return Err(Error::EmptyInput);
    }
    let k = k.unwrap_or_else(|| labels.iter().max().map_or(0, |m| m + 1).max(2));
    Dataset::new(Matrix::from_row_slice(labels.len(), d, &values), labels, k, domain)
}

/// Reads a purely numeric CSV with a header into a matrix.
pub fn read_matrix<R: Read>(input: R) -> Result<Matrix> {
    let mut rdr = reader(input);
    let width = rdr.headers().map_err(csv_error)?.len();
    let mut values = Vec::new();
    let mut rows = 0;
    for record in rdr.records() {
        let record = record.map_err(csv_error)?;
        for c in 0..width {
            values.push(parse_f64(&record, c)?);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::EmptyInput);
    }
    Ok(Matrix::from_row_slice(rows, width, &values))
}

/// Reads the `label` column of a CSV.
pub fn read_labels<R: Read>(input: R) -> Result<Vec<usize>> {
    let mut rdr = reader(input);
    let header = rdr.headers().map_err(csv_error)?.clone();
    let col = header
        .iter()
        .position(|h| h == "label")
        .ok_or_else(|| Error::Parse { line: 1, message: "missing `label` column".into() })?;
    let mut labels = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(csv_error)?;
        labels.push(parse_label(&record, col)?);
    }
    if labels.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(labels)
}

/// Writes a matrix with header `prefix_0, ..., prefix_{m-1}`.
pub fn write_matrix<W: Write>(out: W, prefix: &str, m: &Matrix, fmt: NumberFormat) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(numbered_header(prefix, m.ncols()))?;
    for row in m.row_iter() {
        w.write_record(row.iter().map(|v| fmt.fmt(*v)))?;
    }
    w.flush()?;
    Ok(())
}

/// One row per trace record:
/// `epoch, acc_src, acc_tgt, loss_da, loss_c, w_0, ..., w_{k-1}, w_dist, jsd_label`.
pub fn write_trace<W: Write>(out: W, trace: &TrainTrace, fmt: NumberFormat) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = ["epoch", "acc_src", "acc_tgt", "loss_da", "loss_c"].map(String::from).into();
    header.extend(numbered_header("w", trace.k));
    header.extend(["w_dist", "jsd_label"].map(String::from));
    w.write_record(&header)?;
    for r in &trace.records {
        let mut row = vec![r.epoch.to_string()];
        row.extend([r.acc_src, r.acc_tgt, r.loss_da, r.loss_c].map(|v| fmt.fmt(v)));
        row.extend(r.w.values().iter().map(|v| fmt.fmt(*v)));
        row.extend([r.w_dist, r.jsd_label].map(|v| fmt.fmt(v)));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads back the columns of [`write_trace`] as `(epoch, values)` rows.
pub fn read_trace<R: Read>(input: R) -> Result<Vec<(usize, Vec<f64>)>> {
    let mut rdr = reader(input);
    let header = rdr.headers().map_err(csv_error)?.clone();
    if header.get(0) != Some("epoch") {
        return Err(Error::Parse { line: 1, message: "expected an `epoch` column first".into() });
    }
    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(csv_error)?;
        let epoch = parse_label(&record, 0)?;
        let values = (1..header.len()).map(|c| parse_f64(&record, c)).collect::<Result<_>>()?;
        rows.push((epoch, values));
    }
    Ok(rows)
}

/// `check, epoch, lhs, rhs, holds, slack`; checks whose premise failed
/// are written with `holds = na`.
pub fn write_bounds<W: Write>(out: W, rows: &[(usize, BoundReport)], fmt: NumberFormat) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["check", "epoch", "lhs", "rhs", "holds", "slack"])?;
    for (epoch, r) in rows {
        let holds = if !r.applicable { "na" } else if r.holds { "true" } else { "false" };
        w.write_record([
            r.check.to_string(),
            epoch.to_string(),
            fmt.fmt(r.lhs),
            fmt.fmt(r.rhs),
            holds.to_string(),
            fmt.fmt(r.slack),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Every bound report of a trace, tagged with its epoch.
pub fn trace_bounds(trace: &TrainTrace) -> Vec<(usize, BoundReport)> {
    trace
        .records
        .iter()
        .flat_map(|r| r.bounds.iter().map(move |b| (r.epoch, b.clone())))
        .collect()
}

/// `method, w_0, ..., w_{k-1}`, one row per weight vector.
pub fn write_weights<W: Write>(out: W, rows: &[(&str, &WeightVector)], fmt: NumberFormat) -> Result<()> {
    let k = rows.first().map_or(0, |(_, w)| w.k());
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["method".to_string()];
    header.extend(numbered_header("w", k));
    w.write_record(&header)?;
    for (name, weights) in rows {
        if weights.k() != k {
            return Err(Error::LengthMismatch(weights.k(), k));
        }
        let mut row = vec![name.to_string()];
        row.extend(weights.values().iter().map(|v| fmt.fmt(*v)));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Parses a comma-separated list of numbers such as `0.6,0.2,0.2`.
pub fn parse_list(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Error::ConfigInvalid(format!("not a number: {t:?} in {text:?}")))
        })
        .collect()
}
