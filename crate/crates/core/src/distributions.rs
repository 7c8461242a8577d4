//! Categorical distributions and the divergences between them.
//!
//! All logarithms are natural (nats). Terms of the form `0 * ln(0 / x)` are
//! taken to be zero.

use crate::{Error, Result};

/// Tolerance on the total mass of a validated probability vector.
pub const SUM_TOLERANCE: f64 = 1e-9;

/// A probability vector over `k >= 2` classes.
#[derive(Debug, Clone, PartialEq)]
pub struct Categorical {
    probs: Vec<f64>,
}

impl Categorical {
    /// Validates `probs` without renormalizing it.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.len() < 2 {
            return Err(Error::InvalidDistribution(format!(
                "need at least 2 classes, got {}",
                probs.len()
            )));
        }
        if let Some((i, &p)) = probs
            .iter()
            .enumerate()
            .find(|(_, p)| !p.is_finite() || **p < 0.0)
        {
            return Err(Error::InvalidDistribution(format!(
                "entry {i} is {p}"
            )));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::InvalidDistribution(format!(
                "entries sum to {sum}"
            )));
        }
        Ok(Self { probs })
    }

    /// Rescales nonnegative masses so they sum to one.
    pub fn normalize(masses: Vec<f64>) -> Result<Self> {
        if masses.iter().any(|m| !m.is_finite() || *m < 0.0) {
            return Err(Error::InvalidDistribution(
                "masses must be finite and nonnegative".into(),
            ));
        }
        let total: f64 = masses.iter().sum();
        if total <= 0.0 {
            return Err(Error::InvalidDistribution("total mass is zero".into()));
        }
        Self::new(masses.into_iter().map(|m| m / total).collect())
    }

    pub fn uniform(k: usize) -> Result<Self> {
        Self::new(vec![1.0 / k as f64; k])
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn k(&self) -> usize {
        self.probs.len()
    }

    pub fn min(&self) -> f64 {
        self.probs.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.probs
    }
}

impl std::ops::Index<usize> for Categorical {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.probs[i]
    }
}

fn check_len(p: &Categorical, q: &Categorical) -> Result<()> {
    if p.k() != q.k() {
        return Err(Error::LengthMismatch(p.k(), q.k()));
    }
    Ok(())
}

/// `KL(p || q)`; fails when `p` puts mass where `q` has none.
pub fn kl(p: &Categorical, q: &Categorical) -> Result<f64> {
    check_len(p, q)?;
    let mut total = 0.0;
    for (i, (&pi, &qi)) in p.probs.iter().zip(&q.probs).enumerate() {
        if pi == 0.0 {
            continue;
        }
        if qi == 0.0 {
            return Err(Error::SupportMismatch { index: i, p: pi });
        }
        total += pi * (pi / qi).ln();
    }
    Ok(total.max(0.0))
}

// KL(p || m) where m = (p + q) / 2 always covers the support of p.
fn kl_to_mixture(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(pi, _)| **pi > 0.0)
        .map(|(&pi, &qi)| pi * (pi / (0.5 * (pi + qi))).ln())
        .sum()
}

/// Jensen-Shannon divergence in nats, bounded by `ln 2`.
pub fn jsd(p: &Categorical, q: &Categorical) -> Result<f64> {
    check_len(p, q)?;
    let a = kl_to_mixture(&p.probs, &q.probs);
    let b = kl_to_mixture(&q.probs, &p.probs);
    Ok((0.5 * (a + b)).clamp(0.0, std::f64::consts::LN_2))
}

/// `sqrt(jsd)`, which is a metric on the simplex.
pub fn js_distance(p: &Categorical, q: &Categorical) -> Result<f64> {
    jsd(p, q).map(f64::sqrt)
}

pub fn l1_distance(p: &Categorical, q: &Categorical) -> Result<f64> {
    check_len(p, q)?;
    Ok(p.probs
        .iter()
        .zip(&q.probs)
        .map(|(a, b)| (a - b).abs())
        .sum())
}

pub fn tv_distance(p: &Categorical, q: &Categorical) -> Result<f64> {
    Ok(0.5 * l1_distance(p, q)?)
}

/// Class frequencies of `labels` over `k` classes.
pub fn empirical_label_dist(labels: &[usize], k: usize) -> Result<Categorical> {
    if labels.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut counts = vec![0usize; k];
    for &label in labels {
        if label >= k {
            return Err(Error::LabelOutOfRange { label, k });
        }
        counts[label] += 1;
    }
    let n = labels.len() as f64;
    Categorical::new(counts.into_iter().map(|c| c as f64 / n).collect())
}
