//! Adaptation and classification losses.
//!
//! Every weighted loss has an unweighted base version coded separately so
//! the two can be compared: with `w = 1` the weighted adversarial and MMD
//! losses reduce to the DANN/CDAN and JAN losses, and with a uniform source
//! label distribution the balanced classification loss reduces to mean
//! cross-entropy.
//!
//! Gradient helpers return derivatives with respect to the discriminator
//! logits, the classifier logits, the softmax probabilities or the
//! features, whichever the caller needs to continue backpropagation.

use crate::distributions::Categorical;
use crate::estimator::WeightVector;
use crate::network::LOG_CLAMP;
use crate::{Error, Matrix, Result};

/// Loss values of one batch.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BatchLosses {
    pub l_da: f64,
    pub l_c: f64,
}

fn clamped_ln(p: f64) -> f64 {
    p.max(LOG_CLAMP).ln()
}

fn check_disc_outputs(values: &[f64]) -> Result<()> {
    match values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        Some(v) => Err(Error::OutOfRangeDiscriminatorOutput(*v)),
        None => Ok(()),
    }
}

fn check_labels(labels: &[usize], k: usize) -> Result<()> {
    match labels.iter().find(|&&l| l >= k) {
        Some(&label) => Err(Error::LabelOutOfRange { label, k }),
        None => Ok(()),
    }
}

/// Unweighted domain-adversarial loss
/// `-(1/s) sum_i [ln d(src_i) + ln(1 - d(tgt_i))]`.
pub fn da_loss(d_src: &[f64], d_tgt: &[f64]) -> Result<f64> {
    check_disc_outputs(d_src)?;
    check_disc_outputs(d_tgt)?;
    if d_src.len() != d_tgt.len() {
        return Err(Error::BatchSizeMismatch(d_src.len(), d_tgt.len()));
    }
    if d_src.is_empty() {
        return Err(Error::EmptyInput);
    }
    let s = d_src.len() as f64;
    let total: f64 = d_src
        .iter()
        .zip(d_tgt)
        .map(|(a, b)| clamped_ln(*a) + clamped_ln(1.0 - b))
        .sum();
    Ok(-total / s)
}

/// Importance-weighted adversarial loss
/// `-(1/s) sum_i [w[y_i] ln d(src_i) + ln(1 - d(tgt_i))]`.
pub fn weighted_da_loss(d_src: &[f64], d_tgt: &[f64], labels_src: &[usize], w: &WeightVector) -> Result<f64> {
    check_disc_outputs(d_src)?;
    check_disc_outputs(d_tgt)?;
    if d_src.len() != d_tgt.len() {
        return Err(Error::BatchSizeMismatch(d_src.len(), d_tgt.len()));
    }
    if labels_src.len() != d_src.len() {
        return Err(Error::LengthMismatch(labels_src.len(), d_src.len()));
    }
    if d_src.is_empty() {
        return Err(Error::EmptyInput);
    }
    check_labels(labels_src, w.k())?;
    let s = d_src.len() as f64;
    let total: f64 = d_src
        .iter()
        .zip(d_tgt)
        .zip(labels_src)
        .map(|((a, b), &y)| w[y] * clamped_ln(*a) + clamped_ln(1.0 - b))
        .sum();
    Ok(-total / s)
}

/// Gradients of [`weighted_da_loss`] with respect to the discriminator
/// logits of the source and target samples.
pub fn weighted_da_logit_grads(
    d_src: &[f64],
    d_tgt: &[f64],
    labels_src: &[usize],
    w: &WeightVector,
) -> (Vec<f64>, Vec<f64>) {
    let s = d_src.len() as f64;
    let src = d_src
        .iter()
        .zip(labels_src)
        .map(|(d, &y)| -w[y] * (1.0 - d) / s)
        .collect();
    let tgt = d_tgt.iter().map(|d| d / s).collect();
    (src, tgt)
}

/// Mean cross-entropy `-(1/s) sum_i ln p_i[y_i]`.
pub fn classification_loss(preds: &Matrix, labels: &[usize]) -> Result<f64> {
    check_preds(preds, labels)?;
    let s = labels.len() as f64;
    let total: f64 = labels
        .iter()
        .enumerate()
        .map(|(i, &y)| clamped_ln(preds[(i, y)]))
        .sum();
    Ok(-total / s)
}

fn check_preds(preds: &Matrix, labels: &[usize]) -> Result<()> {
    if preds.nrows() != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} prediction rows but {} labels",
            preds.nrows(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::EmptyInput);
    }
    check_labels(labels, preds.ncols())
}

/// Per-class coefficients of the balanced classification loss,
/// `1 / (k p_S(y))`, optionally multiplied by `w[y]`.
pub fn balanced_class_coefficients(p_s: &Categorical, w: Option<&WeightVector>) -> Result<Vec<f64>> {
    if let Some(y) = p_s.probs().iter().position(|p| *p <= 0.0) {
        return Err(Error::ZeroSourceClass(y));
    }
    let k = p_s.k() as f64;
    let mut coef: Vec<f64> = p_s.probs().iter().map(|p| 1.0 / (k * p)).collect();
    if let Some(w) = w {
        if w.k() != p_s.k() {
            return Err(Error::LengthMismatch(w.k(), p_s.k()));
        }
        coef.iter_mut().zip(w.values()).for_each(|(c, w)| *c *= w);
    }
    Ok(coef)
}

/// `-(1/s) sum_i coef[y_i] ln p_i[y_i]`.
pub fn class_weighted_cross_entropy(preds: &Matrix, labels: &[usize], coef: &[f64]) -> Result<f64> {
    check_preds(preds, labels)?;
    if coef.len() != preds.ncols() {
        return Err(Error::LengthMismatch(coef.len(), preds.ncols()));
    }
    let s = labels.len() as f64;
    let total: f64 = labels
        .iter()
        .enumerate()
        .map(|(i, &y)| coef[y] * clamped_ln(preds[(i, y)]))
        .sum();
    Ok(-total / s)
}

/// Gradient of [`class_weighted_cross_entropy`] with respect to the softmax
/// logits: `coef[y_i] (p_i - e_{y_i}) / s`.
pub fn class_weighted_ce_logit_grads(preds: &Matrix, labels: &[usize], coef: &[f64]) -> Matrix {
    let s = labels.len() as f64;
    let mut g = preds.clone();
    for (i, &y) in labels.iter().enumerate() {
        g[(i, y)] -= 1.0;
        let scale = coef[y] / s;
        g.row_mut(i).scale_mut(scale);
    }
    g
}

/// Balanced classification loss with coefficients `1 / (k p_S(y))`.
pub fn weighted_classification_loss(preds: &Matrix, labels: &[usize], p_s: &Categorical) -> Result<f64> {
    if p_s.k() != preds.ncols() {
        return Err(Error::LengthMismatch(p_s.k(), preds.ncols()));
    }
    let coef = balanced_class_coefficients(p_s, None)?;
    class_weighted_cross_entropy(preds, labels, &coef)
}

/// Classification loss of the importance-weighted JAN variant, with
/// coefficients `w[y] / (k p_S(y))`.
pub fn importance_weighted_classification_loss(
    preds: &Matrix,
    labels: &[usize],
    p_s: &Categorical,
    w: &WeightVector,
) -> Result<f64> {
    if p_s.k() != preds.ncols() {
        return Err(Error::LengthMismatch(p_s.k(), preds.ncols()));
    }
    let coef = balanced_class_coefficients(p_s, Some(w))?;
    class_weighted_cross_entropy(preds, labels, &coef)
}

/// Row `i` is the flattened outer product `preds_i ⊗ feats_i`, i.e. the
/// blocks `preds_i[0] * feats_i, ..., preds_i[k-1] * feats_i`.
pub fn cdan_feature_map(preds: &Matrix, feats: &Matrix) -> Result<Matrix> {
    if preds.nrows() != feats.nrows() {
        return Err(Error::ShapeMismatch(format!(
            "{} prediction rows but {} feature rows",
            preds.nrows(),
            feats.nrows()
        )));
    }
    let (n, k) = preds.shape();
    let z = feats.ncols();
    Ok(Matrix::from_fn(n, k * z, |i, c| preds[(i, c / z)] * feats[(i, c % z)]))
}

/// Pulls a gradient on the outer-product map back to the predictions and
/// the features.
pub fn cdan_feature_map_backward(preds: &Matrix, feats: &Matrix, grad: &Matrix) -> (Matrix, Matrix) {
    let (n, k) = preds.shape();
    let z = feats.ncols();
    let mut gp = Matrix::zeros(n, k);
    let mut gf = Matrix::zeros(n, z);
    for i in 0..n {
        for j in 0..k {
            for l in 0..z {
                let g = grad[(i, j * z + l)];
                gp[(i, j)] += g * feats[(i, l)];
                gf[(i, l)] += g * preds[(i, j)];
            }
        }
    }
    (gp, gf)
}

/// Sum of Gaussian kernels `sum_b exp(-||x - y||^2 / (2 sigma_b^2))`.
#[derive(Debug, Clone, PartialEq)]
pub struct RbfKernel {
    pub bandwidths: Vec<f64>,
}

/// Multipliers applied to the median pairwise distance.
pub const DEFAULT_BANDWIDTH_FACTORS: [f64; 3] = [0.5, 1.0, 2.0];

impl RbfKernel {
    pub fn new(bandwidths: Vec<f64>) -> Result<Self> {
        if bandwidths.is_empty() || bandwidths.iter().any(|b| !(b.is_finite() && *b > 0.0)) {
            return Err(Error::ConfigInvalid(format!("invalid bandwidths {bandwidths:?}")));
        }
        Ok(Self { bandwidths })
    }

    /// Bandwidths `factor * median pairwise distance` over the pooled rows.
    /// Falls back to a unit median when all rows coincide.
    pub fn median_heuristic(a: &Matrix, b: &Matrix, factors: &[f64]) -> Result<Self> {
        let rows: Vec<_> = a.row_iter().chain(b.row_iter()).collect();
        let mut d2 = Vec::with_capacity(rows.len() * rows.len() / 2);
        for i in 0..rows.len() {
            for j in (i + 1)..rows.len() {
                d2.push((rows[i] - rows[j]).norm_squared());
            }
        }
        let median = if d2.is_empty() {
            0.0
        } else {
            let mid = d2.len() / 2;
            let (_, m, _) = d2.select_nth_unstable_by(mid, f64::total_cmp);
            m.sqrt()
        };
        let median = if median > 0.0 { median } else { 1.0 };
        Self::new(factors.iter().map(|f| f * median).collect())
    }

    pub fn eval_sq(&self, dist_sq: f64) -> f64 {
        self.bandwidths
            .iter()
            .map(|s| (-dist_sq / (2.0 * s * s)).exp())
            .sum()
    }

    /// `d k(x, y) / d(||x - y||^2)`.
    fn deriv_sq(&self, dist_sq: f64) -> f64 {
        self.bandwidths
            .iter()
            .map(|s| {
                let c = 1.0 / (2.0 * s * s);
                -c * (-dist_sq * c).exp()
            })
            .sum()
    }
}

fn sq_dist(a: &Matrix, i: usize, b: &Matrix, j: usize) -> f64 {
    (0..a.ncols()).map(|c| (a[(i, c)] - b[(j, c)]).powi(2)).sum()
}

fn check_mmd_inputs(src: &Matrix, tgt: &Matrix) -> Result<()> {
    if src.nrows() != tgt.nrows() {
        return Err(Error::BatchSizeMismatch(src.nrows(), tgt.nrows()));
    }
    if src.ncols() != tgt.ncols() {
        return Err(Error::ShapeMismatch(format!(
            "feature widths {} vs {}",
            src.ncols(),
            tgt.ncols()
        )));
    }
    if src.nrows() == 0 {
        return Err(Error::EmptyInput);
    }
    Ok(())
}

/// JAN's loss, the negated biased MMD² estimate:
/// `-(1/s²) Σ k(s_i, s_j) - (1/s²) Σ k(t_i, t_j) + (2/s²) Σ k(s_i, t_j)`.
pub fn mmd_loss(feats_src: &Matrix, feats_tgt: &Matrix, kernel: &RbfKernel) -> Result<f64> {
    check_mmd_inputs(feats_src, feats_tgt)?;
    let s = feats_src.nrows();
    let (mut ss, mut tt, mut st) = (0.0, 0.0, 0.0);
    for i in 0..s {
        for j in 0..s {
            ss += kernel.eval_sq(sq_dist(feats_src, i, feats_src, j));
            tt += kernel.eval_sq(sq_dist(feats_tgt, i, feats_tgt, j));
            st += kernel.eval_sq(sq_dist(feats_src, i, feats_tgt, j));
        }
    }
    let s2 = (s * s) as f64;
    Ok(-ss / s2 - tt / s2 + 2.0 * st / s2)
}

/// Importance-weighted JAN loss:
/// `-(1/s²) Σ w_i w_j k(s_i, s_j) - (1/s²) Σ k(t_i, t_j) + (2/s²) Σ w_i k(s_i, t_j)`
/// with `w_i = w[y_i]`.
pub fn weighted_mmd_loss(
    feats_src: &Matrix,
    labels_src: &[usize],
    feats_tgt: &Matrix,
    w: &WeightVector,
    kernel: &RbfKernel,
) -> Result<f64> {
    check_mmd_inputs(feats_src, feats_tgt)?;
    if labels_src.len() != feats_src.nrows() {
        return Err(Error::LengthMismatch(labels_src.len(), feats_src.nrows()));
    }
    check_labels(labels_src, w.k())?;
    let s = feats_src.nrows();
    let ws: Vec<f64> = labels_src.iter().map(|&y| w[y]).collect();
    let (mut ss, mut tt, mut st) = (0.0, 0.0, 0.0);
    for i in 0..s {
        for j in 0..s {
            ss += ws[i] * ws[j] * kernel.eval_sq(sq_dist(feats_src, i, feats_src, j));
            tt += kernel.eval_sq(sq_dist(feats_tgt, i, feats_tgt, j));
            st += ws[i] * kernel.eval_sq(sq_dist(feats_src, i, feats_tgt, j));
        }
    }
    let s2 = (s * s) as f64;
    Ok(-ss / s2 - tt / s2 + 2.0 * st / s2)
}

/// Gradients of [`weighted_mmd_loss`] with respect to the source and
/// target features (the kernel bandwidths are held fixed).
pub fn weighted_mmd_feature_grads(
    feats_src: &Matrix,
    labels_src: &[usize],
    feats_tgt: &Matrix,
    w: &WeightVector,
    kernel: &RbfKernel,
) -> (Matrix, Matrix) {
    let (s, z) = feats_src.shape();
    let s2 = (s * s) as f64;
    let ws: Vec<f64> = labels_src.iter().map(|&y| w[y]).collect();
    let mut gs = Matrix::zeros(s, z);
    let mut gt = Matrix::zeros(s, z);
    // d k(a, b) / d a = 2 k'(||a - b||^2) (a - b)
    for i in 0..s {
        for j in 0..s {
            let kss = 2.0 * kernel.deriv_sq(sq_dist(feats_src, i, feats_src, j));
            let ktt = 2.0 * kernel.deriv_sq(sq_dist(feats_tgt, i, feats_tgt, j));
            let kst = 2.0 * kernel.deriv_sq(sq_dist(feats_src, i, feats_tgt, j));
            for c in 0..z {
                let dss = feats_src[(i, c)] - feats_src[(j, c)];
                let dtt = feats_tgt[(i, c)] - feats_tgt[(j, c)];
                let dst = feats_src[(i, c)] - feats_tgt[(j, c)];
                // the symmetric double sums contribute twice
                gs[(i, c)] += -2.0 * ws[i] * ws[j] * kss * dss / s2 + 2.0 * ws[i] * kst * dst / s2;
                gt[(i, c)] += -2.0 * ktt * dtt / s2;
                gt[(j, c)] += -2.0 * ws[i] * kst * dst / s2;
            }
        }
    }
    (gs, gt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::LN_2;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random_preds(r: &mut ChaCha8Rng, n: usize, k: usize) -> Matrix {
        let mut m = Matrix::from_fn(n, k, |_, _| r.gen::<f64>() + 0.05);
        for mut row in m.row_iter_mut() {
            let s = row.sum();
            row /= s;
        }
        m
    }

    #[test]
    fn da_loss_examples() {
        let w = WeightVector::ones(2);
        let v = weighted_da_loss(&[0.5, 0.5], &[0.5, 0.5], &[0, 1], &w).unwrap();
        assert!((v - 2.0 * LN_2).abs() < 1e-15);
        assert_eq!(v, da_loss(&[0.5, 0.5], &[0.5, 0.5]).unwrap());

        let w = WeightVector::new(vec![1.0, 2.0]).unwrap();
        let v = weighted_da_loss(&[0.5], &[0.5], &[1], &w).unwrap();
        assert!((v - 3.0 * LN_2).abs() < 1e-15);
    }

    #[test]
    fn da_loss_errors() {
        let w = WeightVector::ones(2);
        assert!(matches!(
            weighted_da_loss(&[1.5], &[0.5], &[0], &w),
            Err(Error::OutOfRangeDiscriminatorOutput(_))
        ));
        assert!(matches!(
            weighted_da_loss(&[f64::NAN], &[0.5], &[0], &w),
            Err(Error::OutOfRangeDiscriminatorOutput(_))
        ));
        assert!(matches!(
            weighted_da_loss(&[0.5, 0.5], &[0.5], &[0, 0], &w),
            Err(Error::BatchSizeMismatch(2, 1))
        ));
        // saturated outputs are clamped, not infinite
        assert!(weighted_da_loss(&[0.0], &[1.0], &[0], &w).unwrap().is_finite());
    }

    #[test]
    fn classification_examples() {
        let mut r = rng(1);
        let preds = random_preds(&mut r, 20, 4);
        let labels: Vec<usize> = (0..20).map(|i| i % 4).collect();
        let uniform = Categorical::uniform(4).unwrap();
        let a = weighted_classification_loss(&preds, &labels, &uniform).unwrap();
        let b = classification_loss(&preds, &labels).unwrap();
        assert!((a - b).abs() < 1e-12);

        let onehot = Matrix::from_fn(4, 4, |i, j| if i == j { 1.0 } else { 0.0 });
        let v = weighted_classification_loss(&onehot, &[0, 1, 2, 3], &uniform).unwrap();
        assert!(v.abs() < 1e-12);

        let p_s = Categorical::new(vec![0.8, 0.2]).unwrap();
        let preds = Matrix::from_row_slice(1, 2, &[0.5, 0.5]);
        let v = weighted_classification_loss(&preds, &[1], &p_s).unwrap();
        assert!((v - 2.5 * LN_2).abs() < 1e-12);

        let p0 = Categorical::new(vec![1.0, 0.0]).unwrap();
        assert!(matches!(
            weighted_classification_loss(&preds, &[1], &p0),
            Err(Error::ZeroSourceClass(1))
        ));
    }

    #[test]
    fn importance_weighted_ce_with_unit_weights_is_balanced_ce() {
        let mut r = rng(2);
        let preds = random_preds(&mut r, 12, 3);
        let labels: Vec<usize> = (0..12).map(|i| (i * 5) % 3).collect();
        let p_s = Categorical::new(vec![0.5, 0.3, 0.2]).unwrap();
        let a = importance_weighted_classification_loss(&preds, &labels, &p_s, &WeightVector::ones(3)).unwrap();
        let b = weighted_classification_loss(&preds, &labels, &p_s).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn ce_gradient_vanishes_at_the_optimum() {
        let onehot = Matrix::from_fn(3, 3, |i, j| if i == j { 1.0 } else { 0.0 });
        let g = class_weighted_ce_logit_grads(&onehot, &[0, 1, 2], &[1.0, 1.0, 1.0]);
        assert!(g.amax() < 1e-15);
    }

    #[test]
    fn outer_product_examples() {
        let m = cdan_feature_map(
            &Matrix::from_row_slice(1, 2, &[1.0, 0.0]),
            &Matrix::from_row_slice(1, 2, &[3.0, -4.0]),
        )
        .unwrap();
        assert_eq!(m.as_slice(), Matrix::from_row_slice(1, 4, &[3.0, -4.0, 0.0, 0.0]).as_slice());
        let m = cdan_feature_map(
            &Matrix::from_row_slice(1, 2, &[0.5, 0.5]),
            &Matrix::from_row_slice(1, 2, &[2.0, 0.0]),
        )
        .unwrap();
        assert_eq!(m, Matrix::from_row_slice(1, 4, &[1.0, 0.0, 1.0, 0.0]));

        let mut r = rng(3);
        let p = random_preds(&mut r, 6, 3);
        let f = Matrix::from_fn(6, 5, |_, _| r.gen_range(-1.0..1.0));
        let m = cdan_feature_map(&p, &f).unwrap();
        for i in 0..6 {
            let lhs = m.row(i).norm();
            let rhs = p.row(i).norm() * f.row(i).norm();
            assert!((lhs - rhs).abs() < 1e-12);
        }
        assert!(cdan_feature_map(&p, &Matrix::zeros(5, 5)).is_err());
    }

    #[test]
    fn mmd_examples() {
        let kernel = RbfKernel::new(vec![1.0]).unwrap();
        let mut r = rng(4);
        let x = Matrix::from_fn(8, 3, |_, _| r.gen_range(-1.0..1.0));
        let v = weighted_mmd_loss(&x, &[0; 8], &x, &WeightVector::ones(2), &kernel).unwrap();
        assert!(v.abs() < 1e-10);

        // one pair: k(a,a) = k(b,b) = 1, k(a,b) = c gives 2c - 2
        let a = Matrix::from_row_slice(1, 2, &[0.0, 0.0]);
        let b = Matrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let c = (-1.0f64).exp();
        let v = weighted_mmd_loss(&a, &[0], &b, &WeightVector::ones(1), &kernel).unwrap();
        assert!((v - (2.0 * c - 2.0)).abs() < 1e-15);
        assert_eq!(v, mmd_loss(&a, &b, &kernel).unwrap());

        assert!(matches!(
            weighted_mmd_loss(&x, &[0; 8], &a, &WeightVector::ones(1), &kernel),
            Err(Error::BatchSizeMismatch(8, 1))
        ));
    }

    #[test]
    fn median_heuristic_scales_with_data() {
        let a = Matrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let b = Matrix::from_row_slice(2, 1, &[2.0, 3.0]);
        // pairwise distances 1,2,3,1,2,1 -> median (upper) 2
        let k = RbfKernel::median_heuristic(&a, &b, &DEFAULT_BANDWIDTH_FACTORS).unwrap();
        assert_eq!(k.bandwidths, vec![1.0, 2.0, 4.0]);
        let same = RbfKernel::median_heuristic(&a, &a.clone(), &[1.0]);
        assert!(same.is_ok());
        let zeros = RbfKernel::median_heuristic(&Matrix::zeros(2, 1), &Matrix::zeros(2, 1), &[1.0]).unwrap();
        assert_eq!(zeros.bandwidths, vec![1.0]);
    }
}
