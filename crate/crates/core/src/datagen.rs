//! Synthetic domains with controllable label shift.
//!
//! Class-conditional features are isotropic Gaussians around fixed class
//! means, so two domains generated from the same means and different label
//! distributions satisfy label shift exactly. An optional per-class offset
//! on one domain breaks the shared conditionals.

use crate::distributions::{self, Categorical};
use crate::{Error, Matrix, Result};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, StandardNormal};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DomainTag {
    Source,
    Target,
}

impl DomainTag {
    pub fn name(self) -> &'static str {
        match self {
            DomainTag::Source => "source",
            DomainTag::Target => "target",
        }
    }
}

/// Labeled feature matrix of one domain. Target labels are only read by
/// diagnostics, oracle weights and evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub k: usize,
    pub domain: DomainTag,
}

impl Dataset {
    pub fn new(features: Matrix, labels: Vec<usize>, k: usize, domain: DomainTag) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::EmptyInput);
        }
        if features.nrows() != labels.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} feature rows but {} labels",
                features.nrows(),
                labels.len()
            )));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::LabelOutOfRange { label, k });
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidSpec("non-finite feature".into()));
        }
        Ok(Self { features, labels, k, domain })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn label_dist(&self) -> Result<Categorical> {
        distributions::empirical_label_dist(&self.labels, self.k)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.k];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    /// Rows `indices`, in the given order.
    pub fn rows(&self, indices: &[usize]) -> Matrix {
        self.features.select_rows(indices)
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            features: self.rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            k: self.k,
            domain: self.domain,
        }
    }

    pub fn with_domain(mut self, domain: DomainTag) -> Self {
        self.domain = domain;
        self
    }
}

/// Parameters of a Gaussian domain.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainSpec {
    pub k: usize,
    pub d: usize,
    /// `k x d` class means.
    pub class_means: Vec<Vec<f64>>,
    /// Per-coordinate standard deviation.
    pub sigma: f64,
    pub label_dist: Categorical,
    pub n: usize,
    pub seed: u64,
    /// Per-class mean offset (`k x d`), used to violate shared conditionals.
    pub conditional_shift: Option<Vec<Vec<f64>>>,
    pub domain: DomainTag,
}

/// `k` points evenly spaced on the unit circle.
pub fn circle_means(k: usize) -> Vec<Vec<f64>> {
    (0..k)
        .map(|y| {
            let angle = 2.0 * std::f64::consts::PI * y as f64 / k as f64;
            vec![angle.cos(), angle.sin()]
        })
        .collect()
}

impl DomainSpec {
    /// Two-dimensional domain with unit-circle class means.
    pub fn circle(label_dist: Categorical, sigma: f64, n: usize, seed: u64, domain: DomainTag) -> Self {
        let k = label_dist.k();
        Self {
            k,
            d: 2,
            class_means: circle_means(k),
            sigma,
            label_dist,
            n,
            seed,
            conditional_shift: None,
            domain,
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if self.k < 2 {
            return bad(format!("k = {} < 2", self.k));
        }
        if self.n == 0 {
            return bad("n = 0".into());
        }
        if self.d == 0 {
            return bad("d = 0".into());
        }
        if self.label_dist.k() != self.k {
            return bad(format!("label_dist has {} classes, k = {}", self.label_dist.k(), self.k));
        }
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return bad(format!("sigma = {}", self.sigma));
        }
        let check = |rows: &[Vec<f64>], what: &str| -> Result<()> {
            if rows.len() != self.k || rows.iter().any(|r| r.len() != self.d || r.iter().any(|v| !v.is_finite())) {
                return Err(Error::InvalidSpec(format!("{what} must be {} x {} and finite", self.k, self.d)));
            }
            Ok(())
        };
        check(&self.class_means, "class_means")?;
        if let Some(shift) = &self.conditional_shift {
            check(shift, "conditional_shift")?;
        }
        Ok(())
    }
}

/// Samples labels i.i.d. from `label_dist` and features from
/// `N(mean_y + shift_y, sigma^2 I)`.
pub fn make_gaussian_domain(spec: &DomainSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let probs = spec.label_dist.probs();
    let mut labels = Vec::with_capacity(spec.n);
    let mut features = Matrix::zeros(spec.n, spec.d);
    for i in 0..spec.n {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut y = spec.k - 1;
        for (c, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                y = c;
                break;
            }
        }
        labels.push(y);
        for j in 0..spec.d {
            let noise: f64 = StandardNormal.sample(&mut rng);
            let shift = spec.conditional_shift.as_ref().map_or(0.0, |s| s[y][j]);
            features[(i, j)] = spec.class_means[y][j] + shift + spec.sigma * noise;
        }
    }
    Dataset::new(features, labels, spec.k, spec.domain)
}

/// Keeps `floor(keep[y] * n_y)` uniformly chosen samples of every class
/// (at least `min_keep`), preserving the original order.
fn subsample_by_class(data: &Dataset, keep: &[f64], min_keep: usize, seed: u64) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); data.k];
    for (i, &y) in data.labels.iter().enumerate() {
        by_class[y].push(i);
    }
    let mut retained = Vec::with_capacity(data.len());
    for (y, members) in by_class.iter().enumerate() {
        let n_y = members.len();
        if keep[y] >= 1.0 {
            retained.extend(members);
            continue;
        }
        let target = ((keep[y] * n_y as f64).floor() as usize).max(min_keep).min(n_y);
        if target == 0 && n_y > 0 {
            return Err(Error::EmptyClassAfterSubsample(y));
        }
        retained.extend(index::sample(&mut rng, n_y, target).into_iter().map(|j| members[j]));
    }
    retained.sort_unstable();
    Ok(data.subset(&retained))
}

/// Keeps a fraction of the samples of the first `ceil(k / 2)` classes and
/// leaves the remaining classes untouched.
pub fn subsample_protocol(data: &Dataset, fraction: f64, seed: u64) -> Result<Dataset> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidSpec(format!("fraction {fraction} outside (0, 1]")));
    }
    let first_half = data.k.div_ceil(2);
    let keep: Vec<f64> = (0..data.k).map(|y| if y < first_half { fraction } else { 1.0 }).collect();
    subsample_by_class(data, &keep, 0, seed)
}

/// One task of a [`jsd_task_suite`].
#[derive(Debug, Clone)]
pub struct JsdTask {
    pub source: Dataset,
    pub target: Dataset,
    /// JSD between the empirical source and target label distributions.
    pub jsd_label: f64,
    /// Per-class keep fractions, in `[0.1, 1]`.
    pub keep: Vec<f64>,
    /// Which domain was subsampled.
    pub subsampled: DomainTag,
}

/// Upper edge of the JSD range the suite's rejection step stratifies.
pub const SUITE_JSD_RANGE: f64 = 0.1;
const SUITE_MIN_KEEP: f64 = 0.1;

fn keep_counts(counts: &[usize], keep: &[f64]) -> Vec<f64> {
    counts
        .iter()
        .zip(keep)
        .map(|(&n, &f)| {
            if f >= 1.0 {
                n as f64
            } else {
                ((f * n as f64).floor() as usize).max(1).min(n) as f64
            }
        })
        .collect()
}

/// Generates `count` tasks by subsampling classes of the source (even task
/// ids) or the target (odd ids) with per-class keep fractions in
/// `[0.1, 1]`.
///
/// Keep fractions are `0.1 + 0.9 b_y` with `b_y ~ Beta(a, a)` and `a`
/// log-uniform on `[0.1, 10]`, which covers label JSDs from near zero to
/// about 0.1. Candidates are then accepted by stratified rejection:
/// `[0, 0.1]` is split into `min(count, 10)` equal strata, each accepting at
/// most `ceil(count / strata)` tasks. If the quotas cannot be met within the
/// attempt budget the remaining slots take candidates in draw order.
pub fn jsd_task_suite(base_source: &Dataset, base_target: &Dataset, count: usize, seed: u64) -> Result<Vec<JsdTask>> {
    if count == 0 {
        return Err(Error::InvalidCount(count));
    }
    if base_source.k != base_target.k {
        return Err(Error::DimensionMismatch(format!(
            "source has {} classes, target {}",
            base_source.k, base_target.k
        )));
    }
    let k = base_source.k;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let src_counts = base_source.class_counts();
    let tgt_counts = base_target.class_counts();

    let strata = count.min(10);
    let quota = count.div_ceil(strata);
    let mut filled = vec![0usize; strata];
    let mut accepted: Vec<(Vec<f64>, DomainTag)> = Vec::with_capacity(count);
    let mut rejected: Vec<(Vec<f64>, DomainTag)> = Vec::new();
    let budget = 200 * count;

    for _ in 0..budget {
        if accepted.len() == count {
            break;
        }
        let side = if accepted.len().is_multiple_of(2) { DomainTag::Source } else { DomainTag::Target };
        let concentration = (rng.gen_range(0.1f64.ln()..10f64.ln())).exp();
        let beta = Beta::new(concentration, concentration).expect("positive shape");
        let keep: Vec<f64> = (0..k).map(|_| SUITE_MIN_KEEP + (1.0 - SUITE_MIN_KEEP) * beta.sample(&mut rng)).collect();
        let (s, t) = match side {
            DomainTag::Source => (keep_counts(&src_counts, &keep), tgt_counts.iter().map(|&c| c as f64).collect()),
            DomainTag::Target => (src_counts.iter().map(|&c| c as f64).collect(), keep_counts(&tgt_counts, &keep)),
        };
        let js = distributions::jsd(&Categorical::normalize(s)?, &Categorical::normalize(t)?)?;
        let stratum = ((js / SUITE_JSD_RANGE * strata as f64) as usize).min(strata - 1);
        if filled[stratum] < quota {
            filled[stratum] += 1;
            accepted.push((keep, side));
        } else {
            rejected.push((keep, side));
        }
    }
    let mut leftovers = rejected.into_iter();
    while accepted.len() < count {
        match leftovers.next() {
            Some(c) => accepted.push(c),
            None => break,
        }
    }

    accepted
        .into_iter()
        .enumerate()
        .map(|(i, (keep, side))| {
            let sub_seed = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(i as u64);
            let (source, target) = match side {
                DomainTag::Source => (subsample_by_class(base_source, &keep, 1, sub_seed)?, base_target.clone()),
                DomainTag::Target => (base_source.clone(), subsample_by_class(base_target, &keep, 1, sub_seed)?),
            };
            let jsd_label = distributions::jsd(&source.label_dist()?, &target.label_dist()?)?;
            Ok(JsdTask { source, target, jsd_label, keep, subsampled: side })
        })
        .collect()
}
