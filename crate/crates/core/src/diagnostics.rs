//! Numeric checks of the transfer bounds.
//!
//! Every check returns a [`BoundReport`] oriented as `lhs <= rhs`, with
//! `holds` set when `lhs <= rhs + tolerance`. Conditional feature
//! distributions are estimated with histograms on a fixed grid over the
//! pooled bounding box of the first [`HistogramSpec::max_dims`] feature
//! coordinates.

use crate::distributions::{self, Categorical};
use crate::estimator::WeightVector;
use crate::{Error, Matrix, Result};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Absolute slack for inequalities estimated from finite samples.
pub const INEQUALITY_SLACK: f64 = 0.02;
/// Tolerance for checks that are identities.
pub const IDENTITY_TOL: f64 = 1e-8;
/// GLS gap below which the joint error bound is asserted.
pub const GLS_GAP_THRESHOLD: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    pub check: &'static str,
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
    /// `rhs - lhs`.
    pub slack: f64,
    /// False when the premise of the check fails; `holds` is then vacuous.
    pub applicable: bool,
    pub components: Vec<(&'static str, f64)>,
}

impl BoundReport {
    fn new(check: &'static str, lhs: f64, rhs: f64, tol: f64, components: Vec<(&'static str, f64)>) -> Self {
        Self {
            check,
            lhs,
            rhs,
            holds: lhs <= rhs + tol,
            slack: rhs - lhs,
            applicable: true,
            components,
        }
    }

    fn not_applicable(mut self) -> Self {
        self.applicable = false;
        self.holds = true;
        self
    }

    pub fn component(&self, name: &str) -> Option<f64> {
        self.components.iter().find(|(n, _)| *n == name).map(|(_, v)| *v)
    }

    /// Fails only on applicable checks that do not hold.
    pub fn ok(&self) -> bool {
        !self.applicable || self.holds
    }
}

fn check_confusion(conf: &Matrix) -> Result<()> {
    if conf.nrows() != conf.ncols() || conf.nrows() < 2 {
        return Err(Error::MalformedConfusion(format!("shape {}x{}", conf.nrows(), conf.ncols())));
    }
    for (j, row) in conf.row_iter().enumerate() {
        if row.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::MalformedConfusion(format!("row {j} has invalid entries")));
        }
        let sum = row.sum();
        // an all-zero row marks a class absent from the evaluated data
        if sum != 0.0 && (sum - 1.0).abs() > 1e-6 {
            return Err(Error::MalformedConfusion(format!("row {j} sums to {sum}")));
        }
    }
    Ok(())
}

fn row_present(conf: &Matrix, j: usize) -> bool {
    conf.row(j).sum() > 0.0
}

/// `max_j (1 - conf[j, j])` over classes present in the confusion rows
/// (rows are true classes).
pub fn balanced_error_rate(confusion_rows: &Matrix) -> Result<f64> {
    check_confusion(confusion_rows)?;
    Ok((0..confusion_rows.nrows())
        .filter(|&j| row_present(confusion_rows, j))
        .map(|j| 1.0 - confusion_rows[(j, j)])
        .fold(0.0, f64::max))
}

/// `max_{y != y'} |conf_src[y, y'] - conf_tgt[y, y']|` over classes present
/// in both domains.
pub fn conditional_error_gap(conf_src: &Matrix, conf_tgt: &Matrix) -> Result<f64> {
    check_confusion(conf_src)?;
    check_confusion(conf_tgt)?;
    if conf_src.shape() != conf_tgt.shape() {
        return Err(Error::MalformedConfusion("shapes differ".into()));
    }
    let k = conf_src.nrows();
    let mut gap: f64 = 0.0;
    for y in (0..k).filter(|&y| row_present(conf_src, y) && row_present(conf_tgt, y)) {
        for yp in (0..k).filter(|&yp| yp != y) {
            gap = gap.max((conf_src[(y, yp)] - conf_tgt[(y, yp)]).abs());
        }
    }
    Ok(gap)
}

/// Grid used for histogram estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct HistogramSpec {
    pub bins_per_dim: usize,
    /// Only the first `max_dims` feature coordinates are binned.
    pub max_dims: usize,
    /// Minimum per-class sample count in each domain.
    pub min_count: usize,
    /// Permutations for the null baseline; 0 disables the correction.
    pub permutations: usize,
    pub seed: u64,
}

impl Default for HistogramSpec {
    fn default() -> Self {
        Self {
            bins_per_dim: 16,
            max_dims: 2,
            min_count: 50,
            permutations: 20,
            seed: 0,
        }
    }
}

/// Fixed grid over the pooled bounding box of two feature matrices.
struct Grid {
    dims: usize,
    bins: usize,
    lo: Vec<f64>,
    width: Vec<f64>,
}

impl Grid {
    fn fit(a: &Matrix, b: &Matrix, spec: &HistogramSpec) -> Result<Self> {
        if a.ncols() != b.ncols() {
            return Err(Error::DimensionMismatch(format!("feature widths {} vs {}", a.ncols(), b.ncols())));
        }
        if spec.bins_per_dim == 0 || spec.max_dims == 0 {
            return Err(Error::ConfigInvalid("histogram needs at least one bin and one dimension".into()));
        }
        let dims = a.ncols().min(spec.max_dims);
        let mut lo = Vec::with_capacity(dims);
        let mut width = Vec::with_capacity(dims);
        for c in 0..dims {
            let (ca, cb) = (a.column(c), b.column(c));
            let (min, max) = ca.iter().chain(cb.iter()).copied().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
            lo.push(min);
            width.push(if max > min { (max - min) / spec.bins_per_dim as f64 } else { 1.0 });
        }
        Ok(Self { dims, bins: spec.bins_per_dim, lo, width })
    }

    fn cells(&self) -> usize {
        self.bins.pow(self.dims as u32)
    }

    fn cell(&self, m: &Matrix, i: usize) -> usize {
        (0..self.dims).fold(0, |acc, c| {
            let b = ((m[(i, c)] - self.lo[c]) / self.width[c]).floor();
            acc * self.bins + (b.max(0.0) as usize).min(self.bins - 1)
        })
    }

    fn histogram(&self, m: &Matrix, rows: impl Iterator<Item = (usize, f64)>) -> Vec<f64> {
        let mut h = vec![0.0; self.cells()];
        for (i, weight) in rows {
            h[self.cell(m, i)] += weight;
        }
        h
    }
}

fn tv_masses(a: &[f64], b: &[f64]) -> f64 {
    let (sa, sb): (f64, f64) = (a.iter().sum(), b.iter().sum());
    0.5 * a.iter().zip(b).map(|(x, y)| (x / sa - y / sb).abs()).sum::<f64>()
}

/// Per-class total variation between binned conditional feature
/// distributions.
#[derive(Debug, Clone, PartialEq)]
pub struct GapReport {
    pub raw: Vec<f64>,
    /// Mean TV between random splits of the pooled class samples.
    pub baseline: Vec<f64>,
    /// `max(0, raw - baseline)`.
    pub corrected: Vec<f64>,
}

impl GapReport {
    pub fn max(&self) -> f64 {
        self.corrected.iter().copied().fold(0.0, f64::max)
    }
}

/// Estimates `TV(D_S(Z | Y = y), D_T(Z | Y = y))` for every class from
/// histograms, with a permutation baseline subtracted to remove the
/// binning noise of finite samples. Uses target labels.
pub fn gls_conditional_gap(
    feats_src: &Matrix,
    labels_src: &[usize],
    feats_tgt: &Matrix,
    labels_tgt: &[usize],
    k: usize,
    spec: &HistogramSpec,
) -> Result<GapReport> {
    if feats_src.nrows() != labels_src.len() || feats_tgt.nrows() != labels_tgt.len() {
        return Err(Error::ShapeMismatch("feature rows and labels differ".into()));
    }
    let grid = Grid::fit(feats_src, feats_tgt, spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut report = GapReport { raw: vec![], baseline: vec![], corrected: vec![] };
    for y in 0..k {
        let src: Vec<usize> = (0..labels_src.len()).filter(|&i| labels_src[i] == y).collect();
        let tgt: Vec<usize> = (0..labels_tgt.len()).filter(|&i| labels_tgt[i] == y).collect();
        for count in [src.len(), tgt.len()] {
            if count < spec.min_count {
                return Err(Error::InsufficientSamples { class: y, count, min: spec.min_count });
            }
        }
        let cells_src: Vec<usize> = src.iter().map(|&i| grid.cell(feats_src, i)).collect();
        let cells_tgt: Vec<usize> = tgt.iter().map(|&i| grid.cell(feats_tgt, i)).collect();
        let hist = |cells: &[usize]| {
            let mut h = vec![0.0; grid.cells()];
            cells.iter().for_each(|&c| h[c] += 1.0);
            h
        };
        let raw = tv_masses(&hist(&cells_src), &hist(&cells_tgt));
        let mut pooled: Vec<usize> = cells_src.iter().chain(&cells_tgt).copied().collect();
        let mut baseline = 0.0;
        for _ in 0..spec.permutations {
            pooled.shuffle(&mut rng);
            let (a, b) = pooled.split_at(cells_src.len());
            baseline += tv_masses(&hist(a), &hist(b));
        }
        if spec.permutations > 0 {
            baseline /= spec.permutations as f64;
        }
        report.raw.push(raw);
        report.baseline.push(baseline);
        report.corrected.push((raw - baseline).max(0.0));
    }
    Ok(report)
}

/// Plug-in JSD between the binned source features, each sample weighted
/// by `w[y_i]`, and the binned target features.
pub fn binned_weighted_jsd(
    feats_src: &Matrix,
    labels_src: &[usize],
    w: &WeightVector,
    feats_tgt: &Matrix,
    spec: &HistogramSpec,
) -> Result<f64> {
    if feats_src.nrows() != labels_src.len() {
        return Err(Error::ShapeMismatch("feature rows and labels differ".into()));
    }
    if let Some(&label) = labels_src.iter().find(|&&y| y >= w.k()) {
        return Err(Error::LabelOutOfRange { label, k: w.k() });
    }
    let grid = Grid::fit(feats_src, feats_tgt, spec)?;
    let p = grid.histogram(feats_src, labels_src.iter().enumerate().map(|(i, &y)| (i, w[y].max(0.0))));
    let q = grid.histogram(feats_tgt, (0..feats_tgt.nrows()).map(|i| (i, 1.0)));
    distributions::jsd(&Categorical::normalize(p)?, &Categorical::normalize(q)?)
}

/// Lower bound on the joint error:
/// `0.5 (sqrt(jsd_labels) - sqrt(jsd_features))^2 <= eps_s + eps_t`.
/// Not applicable unless `jsd_labels > jsd_features`.
pub fn check_lower_bound(eps_s: f64, eps_t: f64, jsd_labels: f64, jsd_features: f64) -> BoundReport {
    let bound = 0.5 * (jsd_labels.sqrt() - jsd_features.sqrt()).powi(2);
    let report = BoundReport::new(
        "lower_bound",
        bound,
        eps_s + eps_t,
        INEQUALITY_SLACK,
        vec![("eps_s", eps_s), ("eps_t", eps_t), ("jsd_labels", jsd_labels), ("jsd_features", jsd_features)],
    );
    if jsd_labels > jsd_features {
        report
    } else {
        report.not_applicable()
    }
}

/// `|eps_s - eps_t| <= l1_labels * ber + 2 (k - 1) delta_ce`.
pub fn check_error_decomposition(eps_s: f64, eps_t: f64, l1_labels: f64, ber: f64, delta_ce: f64, k: usize) -> BoundReport {
    let rhs = l1_labels * ber + 2.0 * (k as f64 - 1.0) * delta_ce;
    BoundReport::new(
        "error_decomposition",
        (eps_s - eps_t).abs(),
        rhs,
        INEQUALITY_SLACK,
        vec![("eps_s", eps_s), ("eps_t", eps_t), ("l1_labels", l1_labels), ("ber", ber), ("delta_ce", delta_ce)],
    )
}

/// `eps_s + eps_t <= 2 ber`, asserted only when the measured GLS gap is
/// below [`GLS_GAP_THRESHOLD`].
pub fn check_joint_error_bound(eps_s: f64, eps_t: f64, ber: f64, gls_gap: f64) -> BoundReport {
    let report = BoundReport::new(
        "joint_error",
        eps_s + eps_t,
        2.0 * ber,
        INEQUALITY_SLACK,
        vec![("eps_s", eps_s), ("eps_t", eps_t), ("ber", ber), ("gls_gap", gls_gap)],
    );
    if gls_gap < GLS_GAP_THRESHOLD {
        report
    } else {
        report.not_applicable()
    }
}

/// `measured_gap <= (w_M eps_s + eps_t + sqrt(8 jsd_weighted)) / gamma`.
/// The reported rhs is capped at 1; the raw value is kept as a component.
pub fn check_sufficiency_bound(
    eps_s: f64,
    eps_t: f64,
    w: &WeightVector,
    p_t: &Categorical,
    jsd_weighted_feats: f64,
    measured_gap: f64,
) -> Result<BoundReport> {
    let gamma = p_t.min();
    if gamma <= 0.0 {
        return Err(Error::DegenerateGamma);
    }
    let w_m = w.max();
    let raw = (w_m * eps_s + eps_t + (8.0 * jsd_weighted_feats.max(0.0)).sqrt()) / gamma;
    Ok(BoundReport::new(
        "sufficiency",
        measured_gap,
        raw.min(1.0),
        INEQUALITY_SLACK,
        vec![
            ("eps_s", eps_s),
            ("eps_t", eps_t),
            ("w_max", w_m),
            ("gamma", gamma),
            ("jsd_weighted", jsd_weighted_feats),
            ("rhs_raw", raw),
        ],
    ))
}

/// Discriminator loss `-sum_x [p(x) ln d(x) + q(x) ln(1 - d(x))]` over bins,
/// with `0 ln 0 = 0`.
pub fn binned_discriminator_loss(p: &[f64], q: &[f64], d: &[f64]) -> f64 {
    let term = |mass: f64, prob: f64| if mass == 0.0 { 0.0 } else { mass * prob.ln() };
    -p.iter()
        .zip(q)
        .zip(d)
        .map(|((&pi, &qi), &di)| term(pi, di) + term(qi, 1.0 - di))
        .sum::<f64>()
}

/// Evaluates the discriminator loss at `d* = p / (p + q)` and compares it
/// with `ln 4 - 2 jsd(p, q)`; also checks that 100 random perturbations of
/// `d*` never score lower.
pub fn check_discriminator_optimum(p_w: &Categorical, q: &Categorical, seed: u64) -> Result<BoundReport> {
    if p_w.k() != q.k() {
        return Err(Error::LengthMismatch(p_w.k(), q.k()));
    }
    let (p, q_probs) = (p_w.probs(), q.probs());
    let d_star: Vec<f64> = p
        .iter()
        .zip(q_probs)
        .map(|(a, b)| if a + b > 0.0 { a / (a + b) } else { 0.5 })
        .collect();
    let optimum = binned_discriminator_loss(p, q_probs, &d_star);
    let closed_form = 4f64.ln() - 2.0 * distributions::jsd(p_w, q)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut min_excess = f64::INFINITY;
    for t in 0..100 {
        let scale = 10f64.powf(-(t % 5) as f64) * 0.5;
        let d: Vec<f64> = d_star
            .iter()
            .map(|v| (v + scale * rng.gen_range(-1.0..1.0)).clamp(1e-9, 1.0 - 1e-9))
            .collect();
        min_excess = min_excess.min(binned_discriminator_loss(p, q_probs, &d) - optimum);
    }
    let mut report = BoundReport::new(
        "discriminator_optimum",
        (optimum - closed_form).abs(),
        0.0,
        IDENTITY_TOL,
        vec![("optimum", optimum), ("closed_form", closed_form), ("min_perturbed_excess", min_excess)],
    );
    report.holds &= min_excess >= -1e-12;
    Ok(report)
}

/// Per-class contraction towards the true weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ContractionReport {
    pub per_class: Vec<bool>,
    pub fraction: f64,
}

/// `|w_next[y] - w*[y]| <= |w_prev[y] - w*[y]|` for every class.
pub fn check_weight_contraction(w_prev: &WeightVector, w_next: &WeightVector, w_true: &WeightVector) -> Result<ContractionReport> {
    if w_prev.k() != w_next.k() {
        return Err(Error::LengthMismatch(w_prev.k(), w_next.k()));
    }
    if w_prev.k() != w_true.k() {
        return Err(Error::LengthMismatch(w_prev.k(), w_true.k()));
    }
    let per_class: Vec<bool> = (0..w_prev.k())
        .map(|y| (w_next[y] - w_true[y]).abs() <= (w_prev[y] - w_true[y]).abs())
        .collect();
    let fraction = per_class.iter().filter(|b| **b).count() as f64 / per_class.len() as f64;
    Ok(ContractionReport { per_class, fraction })
}

/// Row-normalized confusion (rows = true class) of hard predictions.
/// Classes without samples get an all-zero row.
pub fn confusion_from_predictions(preds: &[usize], labels: &[usize], k: usize) -> Result<Matrix> {
    if preds.len() != labels.len() {
        return Err(Error::LengthMismatch(preds.len(), labels.len()));
    }
    let mut m = Matrix::zeros(k, k);
    for (&p, &y) in preds.iter().zip(labels) {
        if p >= k || y >= k {
            return Err(Error::LabelOutOfRange { label: p.max(y), k });
        }
        m[(y, p)] += 1.0;
    }
    for mut row in m.row_iter_mut() {
        let s = row.sum();
        if s > 0.0 {
            row /= s;
        }
    }
    Ok(m)
}

/// Everything the per-epoch bound suite needs from one evaluated model.
#[derive(Debug, Clone)]
pub struct EpochSnapshot<'a> {
    pub k: usize,
    pub feats_src: &'a Matrix,
    pub labels_src: &'a [usize],
    pub preds_src: &'a [usize],
    pub feats_tgt: &'a Matrix,
    pub labels_tgt: &'a [usize],
    pub preds_tgt: &'a [usize],
}

fn error_rate(preds: &[usize], labels: &[usize]) -> f64 {
    preds.iter().zip(labels).filter(|(p, y)| p != y).count() as f64 / labels.len() as f64
}

/// Runs the lower bound (with the hard predictions as the representation),
/// the error decomposition, the joint error bound and the sufficiency
/// bound on one snapshot, using empirical label distributions and true
/// weights.
pub fn bound_suite(snap: &EpochSnapshot, spec: &HistogramSpec) -> Result<Vec<BoundReport>> {
    let k = snap.k;
    let p_s = distributions::empirical_label_dist(snap.labels_src, k)?;
    let p_t = distributions::empirical_label_dist(snap.labels_tgt, k)?;
    let eps_s = error_rate(snap.preds_src, snap.labels_src);
    let eps_t = error_rate(snap.preds_tgt, snap.labels_tgt);

    let jsd_labels = distributions::jsd(&p_s, &p_t)?;
    let jsd_preds = distributions::jsd(
        &distributions::empirical_label_dist(snap.preds_src, k)?,
        &distributions::empirical_label_dist(snap.preds_tgt, k)?,
    )?;

    let conf_s = confusion_from_predictions(snap.preds_src, snap.labels_src, k)?;
    let conf_t = confusion_from_predictions(snap.preds_tgt, snap.labels_tgt, k)?;
    let ber = balanced_error_rate(&conf_s)?;
    let delta_ce = conditional_error_gap(&conf_s, &conf_t)?;
    let l1 = distributions::l1_distance(&p_s, &p_t)?;

    let gap = gls_conditional_gap(snap.feats_src, snap.labels_src, snap.feats_tgt, snap.labels_tgt, k, spec)?;
    let w_true = crate::estimator::true_weights(&p_s, &p_t)?;
    let jsd_weighted = binned_weighted_jsd(snap.feats_src, snap.labels_src, &w_true, snap.feats_tgt, spec)?;

    Ok(vec![
        check_lower_bound(eps_s, eps_t, jsd_labels, jsd_preds),
        check_error_decomposition(eps_s, eps_t, l1, ber, delta_ce, k),
        check_joint_error_bound(eps_s, eps_t, ber, gap.max()),
        check_sufficiency_bound(eps_s, eps_t, &w_true, &p_t, jsd_weighted, gap.max())?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};
    use std::f64::consts::LN_2;

    fn cat(p: &[f64]) -> Categorical {
        Categorical::new(p.to_vec()).unwrap()
    }

    fn random_confusion(rng: &mut ChaCha8Rng, k: usize) -> Matrix {
        let mut m = Matrix::from_fn(k, k, |_, _| rng.gen::<f64>());
        for mut row in m.row_iter_mut() {
            let s = row.sum();
            row /= s;
        }
        m
    }

    #[test]
    fn ber_examples() {
        assert_eq!(balanced_error_rate(&Matrix::identity(3, 3)).unwrap(), 0.0);
        let m = Matrix::from_row_slice(2, 2, &[0.9, 0.1, 0.3, 0.7]);
        assert!((balanced_error_rate(&m).unwrap() - 0.3).abs() < 1e-15);
        // a row with 63.33% correct contributes a per-class error of 0.3667
        let m = Matrix::from_row_slice(2, 2, &[0.6333, 0.3667, 0.0, 1.0]);
        assert!((balanced_error_rate(&m).unwrap() - 0.3667).abs() < 1e-12);
        let bad = Matrix::from_row_slice(2, 2, &[0.5, 0.1, 0.0, 1.0]);
        assert!(matches!(balanced_error_rate(&bad), Err(Error::MalformedConfusion(_))));
    }

    #[test]
    fn conditional_gap_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_confusion(&mut rng, 4);
        assert_eq!(conditional_error_gap(&a, &a).unwrap(), 0.0);
        let s = Matrix::from_row_slice(2, 2, &[0.9, 0.1, 0.1, 0.9]);
        let t = Matrix::from_row_slice(2, 2, &[0.6, 0.4, 0.1, 0.9]);
        assert!((conditional_error_gap(&s, &t).unwrap() - 0.3).abs() < 1e-15);
        for _ in 0..50 {
            let k = rng.gen_range(2..7);
            let (a, b) = (random_confusion(&mut rng, k), random_confusion(&mut rng, k));
            let mut oracle: f64 = 0.0;
            for y in 0..k {
                for yp in 0..k {
                    if y != yp {
                        oracle = oracle.max((a[(y, yp)] - b[(y, yp)]).abs());
                    }
                }
            }
            assert_eq!(conditional_error_gap(&a, &b).unwrap(), oracle);
        }
    }

    fn gaussian(rng: &mut ChaCha8Rng, n: usize, shift: f64) -> Matrix {
        Matrix::from_fn(n, 2, |_, _| shift + { let v: f64 = StandardNormal.sample(rng); v })
    }

    #[test]
    fn gap_identical_and_disjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let f = gaussian(&mut rng, 200, 0.0);
        let labels: Vec<usize> = (0..200).map(|i| i % 2).collect();
        let spec = HistogramSpec::default();
        let same = gls_conditional_gap(&f, &labels, &f, &labels, 2, &spec).unwrap();
        assert!(same.raw.iter().all(|v| *v == 0.0));
        assert!(same.corrected.iter().all(|v| *v == 0.0));

        let a = Matrix::from_fn(100, 2, |i, _| (i % 3) as f64 * 0.01);
        let b = Matrix::from_fn(100, 2, |i, _| 10.0 + (i % 3) as f64 * 0.01);
        let la = vec![0; 100];
        let r = gls_conditional_gap(&a, &la, &b, &la, 1, &spec).unwrap();
        assert!((r.raw[0] - 1.0).abs() < 1e-12);
        assert!(r.corrected[0] > 0.8);
    }

    #[test]
    fn gap_same_gaussian_is_within_permutation_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let labels = vec![0; 2000];
        let a = gaussian(&mut rng, 2000, 0.0);
        let b = gaussian(&mut rng, 2000, 0.0);
        let r = gls_conditional_gap(&a, &labels, &b, &labels, 1, &HistogramSpec::default()).unwrap();
        assert!(r.raw[0] > 0.0);
        assert!(r.corrected[0] < 0.03, "{r:?}");
        let c = gaussian(&mut rng, 2000, 1.0);
        let r = gls_conditional_gap(&a, &labels, &c, &labels, 1, &HistogramSpec::default()).unwrap();
        assert!(r.corrected[0] > 0.2);
    }

    #[test]
    fn gap_requires_samples() {
        let f = Matrix::zeros(10, 2);
        let labels = vec![0; 10];
        let err = gls_conditional_gap(&f, &labels, &f, &labels, 1, &HistogramSpec::default()).unwrap_err();
        assert!(matches!(err, Error::InsufficientSamples { class: 0, count: 10, min: 50 }));
    }

    #[test]
    fn lower_bound_examples() {
        let r = check_lower_bound(0.0, 0.0, 0.1, 0.1);
        assert_eq!(r.lhs, 0.0);
        let r = check_lower_bound(0.02, 0.03, 0.1, 0.0);
        assert!((r.lhs - 0.05).abs() < 1e-15);
        assert!(r.applicable && r.holds);
        let r = check_lower_bound(0.0, 0.0, 0.1, 0.0);
        assert!(r.applicable && !r.holds);
        let r = check_lower_bound(0.5, 0.5, 0.0, 0.01);
        assert!(!r.applicable && r.ok());
    }

    #[test]
    fn decomposition_examples() {
        let r = check_error_decomposition(0.1, 0.1, 0.0, 0.2, 0.0, 3);
        assert!(r.holds);
        assert_eq!(r.slack, 0.0);
        let r = check_error_decomposition(0.1, 0.3, 0.5, 0.2, 0.0, 3);
        assert!((r.rhs - 0.1).abs() < 1e-15);
        assert!(!r.holds);
    }

    #[test]
    fn joint_error_examples() {
        let r = check_joint_error_bound(0.0, 0.0, 0.0, 0.0);
        assert!(r.holds && r.slack == 0.0);
        let r = check_joint_error_bound(0.5, 0.5, 0.5, 0.0);
        assert!(r.holds && r.slack == 0.0);
        let r = check_joint_error_bound(0.5, 0.5, 0.1, 0.5);
        assert!(!r.applicable && r.ok());
    }

    #[test]
    fn sufficiency_examples() {
        let p_t = cat(&[0.2, 0.3, 0.5]);
        let w = WeightVector::new(vec![3.0, 1.0, 0.5]).unwrap();
        let r = check_sufficiency_bound(0.1, 0.1, &w, &p_t, 0.02, 0.5).unwrap();
        assert!((r.component("rhs_raw").unwrap() - 4.0).abs() < 1e-12);
        assert_eq!(r.rhs, 1.0);
        assert!(r.holds);
        let r = check_sufficiency_bound(0.0, 0.0, &w, &p_t, 0.0, 0.0).unwrap();
        assert_eq!(r.rhs, 0.0);
        assert!(r.holds);
        let degenerate = cat(&[0.0, 1.0]);
        let w2 = WeightVector::ones(2);
        assert!(matches!(check_sufficiency_bound(0.0, 0.0, &w2, &degenerate, 0.0, 0.0), Err(Error::DegenerateGamma)));
    }

    #[test]
    fn discriminator_optimum_examples() {
        let p = cat(&[0.2, 0.3, 0.5]);
        let r = check_discriminator_optimum(&p, &p, 1).unwrap();
        assert!((r.component("optimum").unwrap() - 2.0 * LN_2).abs() < 1e-12);
        assert!(r.holds);
        let r = check_discriminator_optimum(&cat(&[1.0, 0.0]), &cat(&[0.0, 1.0]), 1).unwrap();
        assert!(r.component("optimum").unwrap().abs() < 1e-12);
        assert!(r.holds);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let k = rng.gen_range(2..20);
            let a = Categorical::normalize((0..k).map(|_| rng.gen()).collect()).unwrap();
            let b = Categorical::normalize((0..k).map(|_| rng.gen()).collect()).unwrap();
            let r = check_discriminator_optimum(&a, &b, 9).unwrap();
            assert!(r.holds, "{r:?}");
        }
    }

    #[test]
    fn contraction_examples() {
        let prev = WeightVector::new(vec![1.0, 1.0]).unwrap();
        let truth = WeightVector::new(vec![0.5, 1.5]).unwrap();
        let r = check_weight_contraction(&prev, &truth, &truth).unwrap();
        assert_eq!(r.fraction, 1.0);
        let r = check_weight_contraction(&prev, &prev, &truth).unwrap();
        assert_eq!(r.fraction, 1.0);
        let worse = WeightVector::new(vec![0.9, 1.0]).unwrap();
        let r = check_weight_contraction(&worse, &prev, &truth).unwrap();
        assert_eq!(r.per_class, vec![false, true]);
        let short = WeightVector::ones(3);
        assert!(matches!(check_weight_contraction(&prev, &short, &truth), Err(Error::LengthMismatch(2, 3))));
    }

    #[test]
    fn weighted_jsd_recovers_matched_mixture() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let labels_s: Vec<usize> = (0..4000).map(|i| usize::from(i % 4 == 0)).collect();
        let labels_t: Vec<usize> = (0..4000).map(|i| usize::from(i % 4 != 0)).collect();
        let make = |rng: &mut ChaCha8Rng, labels: &[usize]| {
            Matrix::from_fn(labels.len(), 2, |i, _| 3.0 * labels[i] as f64 + 0.3 * { let v: f64 = StandardNormal.sample(rng); v })
        };
        let fs = make(&mut rng, &labels_s);
        let ft = make(&mut rng, &labels_t);
        let spec = HistogramSpec::default();
        let unweighted = binned_weighted_jsd(&fs, &labels_s, &WeightVector::ones(2), &ft, &spec).unwrap();
        let w = WeightVector::new(vec![1.0 / 3.0, 3.0]).unwrap();
        let weighted = binned_weighted_jsd(&fs, &labels_s, &w, &ft, &spec).unwrap();
        assert!(unweighted > 0.1);
        assert!(weighted < 0.02, "{weighted}");
    }

    #[test]
    fn suite_on_perfect_predictions() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let labels_s: Vec<usize> = (0..600).map(|i| i % 3).collect();
        let labels_t: Vec<usize> = (0..600).map(|i| if i % 5 < 3 { 2 } else { i % 2 }).collect();
        let feats = |rng: &mut ChaCha8Rng, labels: &[usize]| {
            Matrix::from_fn(labels.len(), 2, |i, c| {
                let angle = labels[i] as f64 * 2.0;
                (if c == 0 { angle.cos() } else { angle.sin() }) + 0.05 * { let v: f64 = StandardNormal.sample(rng); v }
            })
        };
        let fs = feats(&mut rng, &labels_s);
        let ft = feats(&mut rng, &labels_t);
        let snap = EpochSnapshot {
            k: 3,
            feats_src: &fs,
            labels_src: &labels_s,
            preds_src: &labels_s,
            feats_tgt: &ft,
            labels_tgt: &labels_t,
            preds_tgt: &labels_t,
        };
        let reports = bound_suite(&snap, &HistogramSpec::default()).unwrap();
        assert_eq!(reports.len(), 4);
        for r in &reports {
            assert!(r.ok(), "{r:?}");
        }
    }
}
