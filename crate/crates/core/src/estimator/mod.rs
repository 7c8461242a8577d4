//! Importance-weight estimation.
//!
//! Under generalized label shift the source joint `C[y, y'] = P_S(Yhat = y, Y = y')`
//! and the target prediction marginal `mu[y] = P_T(Yhat = y)` satisfy
//! `mu = C w` where `w[y] = p_T(y) / p_S(y)`. The weights are recovered either
//! by direct inversion ([`exact_inverse_weights`]) or, more robustly, by the
//! constrained least-squares program solved in [`solve_qp`]:
//!
//! ```text
//! minimize  1/2 ||mu - C w||^2   subject to  w >= 0,  w . p_S = 1
//! ```

mod qp;

pub use qp::{qp_objective, solve_qp};

use crate::distributions::Categorical;
use crate::{Error, Matrix, Result};
use nalgebra::DVector;

/// Condition-number cap above which [`exact_inverse_weights`] refuses to invert.
pub const DEFAULT_CONDITION_CAP: f64 = 1e8;

/// Tolerance on prediction rows fed to the accumulator.
const ROW_SUM_TOLERANCE: f64 = 1e-6;

/// Per-class importance weights.
///
/// Weights produced by [`solve_qp`], [`true_weights`] and [`ema_update`] of
/// feasible inputs are nonnegative and normalized against the source label
/// distribution. [`exact_inverse_weights`] may return negative entries.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector {
    values: Vec<f64>,
}

impl WeightVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyInput);
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidDistribution(format!("non-finite weight {v}")));
        }
        Ok(Self { values })
    }

    pub fn ones(k: usize) -> Self {
        Self { values: vec![1.0; k] }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn k(&self) -> usize {
        self.values.len()
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// `w . p`, which equals one for weights normalized against `p`.
    pub fn dot(&self, p: &Categorical) -> f64 {
        self.values.iter().zip(p.probs()).map(|(w, p)| w * p).sum()
    }

    pub fn is_feasible(&self, p_s: &Categorical, tol: f64) -> bool {
        self.k() == p_s.k()
            && self.values.iter().all(|&w| w >= -tol)
            && (self.dot(p_s) - 1.0).abs() <= tol
    }

    /// Euclidean distance to `other`.
    pub fn distance(&self, other: &WeightVector) -> Result<f64> {
        if self.k() != other.k() {
            return Err(Error::LengthMismatch(self.k(), other.k()));
        }
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt())
    }
}

impl std::ops::Index<usize> for WeightVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.values[i]
    }
}

/// Running soft confusion matrix and target prediction marginal.
///
/// Column `y'` of the confusion sums the full prediction vectors of source
/// samples whose true label is `y'`; rows index the predicted class.
#[derive(Debug, Clone)]
pub struct ConfusionAccumulator {
    k: usize,
    c_hat: Matrix,
    mu_hat: Vec<f64>,
    n_source: usize,
    n_target: usize,
}

/// Normalized output of a [`ConfusionAccumulator`].
#[derive(Debug, Clone)]
pub struct ConfusionEstimate {
    /// Estimated joint `P_S(Yhat = row, Y = col)`.
    pub confusion: Matrix,
    /// Estimated target prediction marginal.
    pub mu: Categorical,
    /// Classes with no source samples; their confusion columns are zero.
    pub missing_classes: Vec<usize>,
}

impl ConfusionAccumulator {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            c_hat: Matrix::zeros(k, k),
            mu_hat: vec![0.0; k],
            n_source: 0,
            n_target: 0,
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n_source(&self) -> usize {
        self.n_source
    }

    pub fn n_target(&self) -> usize {
        self.n_target
    }

    /// Unnormalized soft counts.
    pub fn counts(&self) -> (&Matrix, &[f64]) {
        (&self.c_hat, &self.mu_hat)
    }

    pub fn reset(&mut self) {
        self.c_hat.fill(0.0);
        self.mu_hat.iter_mut().for_each(|m| *m = 0.0);
        self.n_source = 0;
        self.n_target = 0;
    }

    fn check_predictions(&self, preds: &Matrix) -> Result<()> {
        if preds.ncols() != self.k {
            return Err(Error::ShapeMismatch(format!(
                "predictions have {} columns, expected {}",
                preds.ncols(),
                self.k
            )));
        }
        for (i, row) in preds.row_iter().enumerate() {
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE || row.iter().any(|p| *p < 0.0) {
                return Err(Error::ShapeMismatch(format!(
                    "prediction row {i} is not a probability vector (sum {sum})"
                )));
            }
        }
        Ok(())
    }

    /// Adds source predictions into the columns of their true labels.
    pub fn add_source(&mut self, preds: &Matrix, labels: &[usize]) -> Result<()> {
        self.check_predictions(preds)?;
        if preds.nrows() != labels.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} prediction rows but {} labels",
                preds.nrows(),
                labels.len()
            )));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= self.k) {
            return Err(Error::LabelOutOfRange { label, k: self.k });
        }
        for (row, &label) in preds.row_iter().zip(labels) {
            for (y, p) in row.iter().enumerate() {
                self.c_hat[(y, label)] += p;
            }
        }
        self.n_source += labels.len();
        Ok(())
    }

    pub fn add_target(&mut self, preds: &Matrix) -> Result<()> {
        self.check_predictions(preds)?;
        for row in preds.row_iter() {
            for (y, p) in row.iter().enumerate() {
                self.mu_hat[y] += p;
            }
        }
        self.n_target += preds.nrows();
        Ok(())
    }

    pub fn accumulate(
        &mut self,
        source_preds: &Matrix,
        source_labels: &[usize],
        target_preds: &Matrix,
    ) -> Result<()> {
        self.add_source(source_preds, source_labels)?;
        self.add_target(target_preds)
    }

    /// Divides the soft counts by the sample counts.
    pub fn finalize(&self) -> Result<ConfusionEstimate> {
        if self.n_source == 0 {
            return Err(Error::EmptyAccumulator("source"));
        }
        if self.n_target == 0 {
            return Err(Error::EmptyAccumulator("target"));
        }
        let confusion = &self.c_hat / self.n_source as f64;
        let mu = Categorical::normalize(
            self.mu_hat.iter().map(|m| m / self.n_target as f64).collect(),
        )?;
        let missing_classes: Vec<usize> = (0..self.k)
            .filter(|&y| self.c_hat.column(y).iter().all(|v| *v == 0.0))
            .collect();
        if !missing_classes.is_empty() {
            log::warn!(
                "classes {missing_classes:?} absent from source batches; confusion columns are zero"
            );
        }
        Ok(ConfusionEstimate {
            confusion,
            mu,
            missing_classes,
        })
    }
}

fn check_square(c: &Matrix, k: usize) -> Result<()> {
    if c.nrows() != k || c.ncols() != k {
        return Err(Error::ShapeMismatch(format!(
            "confusion is {}x{}, expected {k}x{k}",
            c.nrows(),
            c.ncols()
        )));
    }
    Ok(())
}

/// `C^-1 mu` with the default condition cap.
pub fn exact_inverse_weights(c: &Matrix, mu: &Categorical) -> Result<WeightVector> {
    exact_inverse_weights_capped(c, mu, DEFAULT_CONDITION_CAP)
}

pub fn exact_inverse_weights_capped(
    c: &Matrix,
    mu: &Categorical,
    condition_cap: f64,
) -> Result<WeightVector> {
    check_square(c, mu.k())?;
    let cond = condition_number(c);
    if cond.is_nan() || cond > condition_cap {
        return Err(Error::SingularMatrix(cond));
    }
    let rhs = DVector::from_column_slice(mu.probs());
    let w = c
        .clone()
        .lu()
        .solve(&rhs)
        .ok_or(Error::SingularMatrix(f64::INFINITY))?;
    WeightVector::new(w.iter().copied().collect())
}

/// Ratio of extreme singular values; infinite for singular matrices.
pub fn condition_number(c: &Matrix) -> f64 {
    let sv = c.clone().singular_values();
    let max = sv.max();
    let min = sv.min();
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// `lambda * w_qp + (1 - lambda) * w_prev`.
pub fn ema_update(w_prev: &WeightVector, w_qp: &WeightVector, lambda: f64) -> Result<WeightVector> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::LambdaOutOfRange(lambda));
    }
    if w_prev.k() != w_qp.k() {
        return Err(Error::LengthMismatch(w_prev.k(), w_qp.k()));
    }
    WeightVector::new(
        w_prev
            .values
            .iter()
            .zip(&w_qp.values)
            .map(|(p, q)| lambda * q + (1.0 - lambda) * p)
            .collect(),
    )
}

/// Ground-truth weights `p_T(y) / p_S(y)`.
pub fn true_weights(p_s: &Categorical, p_t: &Categorical) -> Result<WeightVector> {
    if p_s.k() != p_t.k() {
        return Err(Error::LengthMismatch(p_s.k(), p_t.k()));
    }
    if let Some(y) = p_s.probs().iter().position(|p| *p <= 0.0) {
        return Err(Error::ZeroSourceClass(y));
    }
    WeightVector::new(
        p_t.probs()
            .iter()
            .zip(p_s.probs())
            .map(|(t, s)| t / s)
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cat(p: &[f64]) -> Categorical {
        Categorical::new(p.to_vec()).unwrap()
    }

    fn rows(data: &[&[f64]]) -> Matrix {
        let k = data[0].len();
        Matrix::from_row_iterator(data.len(), k, data.iter().flat_map(|r| r.iter().copied()))
    }

    #[test]
    fn accumulate_single_samples() {
        let mut acc = ConfusionAccumulator::new(2);
        acc.add_source(&rows(&[&[1.0, 0.0]]), &[0]).unwrap();
        assert_eq!(acc.counts().0, &rows(&[&[1.0, 0.0], &[0.0, 0.0]]));

        let mut acc = ConfusionAccumulator::new(2);
        acc.add_source(&rows(&[&[0.3, 0.7]]), &[1]).unwrap();
        assert_eq!(acc.counts().0.column(1).as_slice(), &[0.3, 0.7]);
        assert_eq!(acc.counts().0.column(0).as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn finalize_single_pair() {
        let mut acc = ConfusionAccumulator::new(2);
        acc.accumulate(&rows(&[&[1.0, 0.0]]), &[0], &rows(&[&[0.4, 0.6]]))
            .unwrap();
        let est = acc.finalize().unwrap();
        assert_eq!(est.confusion, rows(&[&[1.0, 0.0], &[0.0, 0.0]]));
        assert_eq!(est.mu.probs(), &[0.4, 0.6]);
        assert_eq!(est.missing_classes, vec![1]);
    }

    #[test]
    fn one_hot_batches_give_label_diagonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let labels: Vec<usize> = (0..100).map(|_| rng.gen_range(0..2)).collect();
        let preds = Matrix::from_fn(100, 2, |i, j| if labels[i] == j { 1.0 } else { 0.0 });
        let mut acc = ConfusionAccumulator::new(2);
        acc.accumulate(&preds, &labels, &preds).unwrap();
        let est = acc.finalize().unwrap();
        let emp = crate::distributions::empirical_label_dist(&labels, 2).unwrap();
        for y in 0..2 {
            assert!((est.confusion[(y, y)] - emp[y]).abs() < 1e-12);
            // column sums equal the empirical label distribution
            assert!((est.confusion.column(y).sum() - emp[y]).abs() < 1e-9);
        }
        assert!((est.confusion[(0, 1)]).abs() < 1e-15);
        assert!((est.confusion.sum() - 1.0).abs() < 1e-12);
    }

    fn random_rows(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Matrix {
        let mut m = Matrix::from_fn(n, k, |_, _| rng.gen::<f64>() + 1e-3);
        for mut row in m.row_iter_mut() {
            let s = row.sum();
            row /= s;
        }
        m
    }

    #[test]
    fn finalize_is_batch_linear_and_matches_one_pass_average() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let k = 4;
        let batches: Vec<(Matrix, Vec<usize>, Matrix)> = (0..5)
            .map(|_| {
                let s = random_rows(&mut rng, 16, k);
                let l = (0..16).map(|_| rng.gen_range(0..k)).collect();
                let t = random_rows(&mut rng, 16, k);
                (s, l, t)
            })
            .collect();
        let mut acc = ConfusionAccumulator::new(k);
        for (s, l, t) in &batches {
            acc.accumulate(s, l, t).unwrap();
        }
        let est = acc.finalize().unwrap();

        // one-pass oracle over the concatenated samples
        let mut c = vec![vec![0.0; k]; k];
        let mut mu = vec![0.0; k];
        let mut n = 0.0;
        for (s, l, t) in &batches {
            for i in 0..s.nrows() {
                for y in 0..k {
                    c[y][l[i]] += s[(i, y)];
                    mu[y] += t[(i, y)];
                }
                n += 1.0;
            }
        }
        for y in 0..k {
            assert!((est.mu[y] - mu[y] / n).abs() < 1e-12);
            for yp in 0..k {
                assert!((est.confusion[(y, yp)] - c[y][yp] / n).abs() < 1e-12);
            }
        }

        // two equal halves fed separately equal the concatenated batch
        let mut a = ConfusionAccumulator::new(k);
        let (s, l, t) = &batches[0];
        a.accumulate(s, l, t).unwrap();
        a.accumulate(s, l, t).unwrap();
        let mut b = ConfusionAccumulator::new(k);
        b.accumulate(s, l, t).unwrap();
        let ea = a.finalize().unwrap();
        let eb = b.finalize().unwrap();
        assert!((ea.confusion - eb.confusion).amax() < 1e-15);
    }

    #[test]
    fn accumulator_errors() {
        let mut acc = ConfusionAccumulator::new(2);
        assert!(matches!(acc.finalize(), Err(Error::EmptyAccumulator("source"))));
        assert!(matches!(
            acc.add_source(&rows(&[&[1.0, 0.0]]), &[2]),
            Err(Error::LabelOutOfRange { label: 2, k: 2 })
        ));
        assert!(matches!(
            acc.add_source(&rows(&[&[0.5, 0.6]]), &[0]),
            Err(Error::ShapeMismatch(_))
        ));
        assert!(matches!(
            acc.add_source(&rows(&[&[1.0, 0.0]]), &[0, 1]),
            Err(Error::ShapeMismatch(_))
        ));
        assert!(matches!(
            acc.add_target(&rows(&[&[0.2, 0.3, 0.5]])),
            Err(Error::ShapeMismatch(_))
        ));
        acc.add_source(&rows(&[&[1.0, 0.0]]), &[0]).unwrap();
        assert!(matches!(acc.finalize(), Err(Error::EmptyAccumulator("target"))));
        acc.reset();
        assert_eq!(acc.n_source(), 0);
    }

    #[test]
    fn exact_inverse_examples() {
        let w = exact_inverse_weights(&rows(&[&[0.5, 0.0], &[0.0, 0.5]]), &cat(&[0.7, 0.3])).unwrap();
        assert!((w[0] - 1.4).abs() < 1e-12 && (w[1] - 0.6).abs() < 1e-12);

        let p = [0.2, 0.3, 0.5];
        let c = Matrix::from_diagonal(&DVector::from_column_slice(&p));
        let w = exact_inverse_weights(&c, &cat(&p)).unwrap();
        assert!(w.values().iter().all(|v| (v - 1.0).abs() < 1e-12));

        // 0.4 a + 0.1 b = 0.5 and 0.1 a + 0.4 b = 0.5 give a = b = 1
        let w = exact_inverse_weights(&rows(&[&[0.4, 0.1], &[0.1, 0.4]]), &cat(&[0.5, 0.5])).unwrap();
        assert!((w[0] - 1.0).abs() < 1e-12 && (w[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn exact_inverse_rejects_singular() {
        let c = rows(&[&[0.5, 0.5], &[0.0, 0.0]]);
        assert!(matches!(
            exact_inverse_weights(&c, &cat(&[0.5, 0.5])),
            Err(Error::SingularMatrix(_))
        ));
        let c = rows(&[&[0.5, 0.0], &[0.0, 1e-10]]);
        assert!(matches!(
            exact_inverse_weights(&c, &cat(&[0.5, 0.5])),
            Err(Error::SingularMatrix(_))
        ));
        assert!(exact_inverse_weights_capped(&c, &cat(&[0.5, 0.5]), 1e12).is_ok());
    }

    #[test]
    fn ema_examples() {
        let prev = WeightVector::new(vec![1.0, 1.0]).unwrap();
        let qp = WeightVector::new(vec![2.0, 0.0]).unwrap();
        assert_eq!(ema_update(&prev, &qp, 0.5).unwrap().values(), &[1.5, 0.5]);
        assert_eq!(ema_update(&prev, &qp, 0.0).unwrap(), prev);
        assert_eq!(ema_update(&prev, &qp, 1.0).unwrap(), qp);
        assert!(matches!(ema_update(&prev, &qp, 1.5), Err(Error::LambdaOutOfRange(_))));
        assert!(matches!(
            ema_update(&prev, &WeightVector::ones(3), 0.5),
            Err(Error::LengthMismatch(2, 3))
        ));
    }

    #[test]
    fn true_weight_examples() {
        let p = cat(&[0.2, 0.3, 0.5]);
        assert!(true_weights(&p, &p).unwrap().values().iter().all(|v| (*v - 1.0).abs() < 1e-15));
        let w = true_weights(&cat(&[0.5, 0.5]), &cat(&[0.7, 0.3])).unwrap();
        assert!((w[0] - 1.4).abs() < 1e-15 && (w[1] - 0.6).abs() < 1e-15);
        assert!((w.dot(&cat(&[0.5, 0.5])) - 1.0).abs() < 1e-15);
        assert!(matches!(
            true_weights(&cat(&[1.0, 0.0]), &cat(&[0.5, 0.5])),
            Err(Error::ZeroSourceClass(1))
        ));
    }

    #[test]
    fn subsampled_ten_class_weights_have_reported_structure() {
        // true weights reported for the subsampled digits task
        let reported = [1.19, 1.61, 1.96, 2.24, 2.16, 0.70, 0.64, 0.70, 0.78, 0.66];
        assert!(reported[..5].iter().all(|w| *w > 1.0));
        assert!(reported[5..].iter().all(|w| *w < 1.0));

        // the same structure from keeping 30% of the first five classes
        let masses: Vec<f64> = (0..10).map(|y| if y < 5 { 0.3 } else { 1.0 }).collect();
        let p_s = Categorical::normalize(masses).unwrap();
        let w = true_weights(&p_s, &Categorical::uniform(10).unwrap()).unwrap();
        assert!(w.values()[..5].iter().all(|v| *v > 1.0));
        assert!(w.values()[5..].iter().all(|v| *v < 1.0));
        assert!((w[0] - 0.65 / 0.3).abs() < 1e-12);
    }
}
