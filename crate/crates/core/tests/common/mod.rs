//! Reference implementations used by the integration tests.

#![allow(dead_code)]

use gls_adapt::network::{Dense, Mlp};
use gls_adapt::{Categorical, Matrix, ModelState};
use rand::Rng;

/// Random distribution with every entry at least `floor`.
pub fn random_simplex<R: Rng>(rng: &mut R, k: usize, floor: f64) -> Vec<f64> {
    let raw: Vec<f64> = (0..k).map(|_| -rng.gen::<f64>().max(1e-300).ln()).collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|v| floor + (1.0 - k as f64 * floor) * v / total).collect()
}

pub fn categorical(mut probs: Vec<f64>) -> Categorical {
    let total: f64 = probs.iter().sum();
    for p in &mut probs {
        *p /= total;
    }
    Categorical::new(probs).unwrap()
}

/// Column-stochastic `P(pred | true)` with diagonal mass in `[diag_lo, 0.95]`.
pub fn random_conditional<R: Rng>(rng: &mut R, k: usize, diag_lo: f64) -> Matrix {
    let mut m = Matrix::zeros(k, k);
    for y in 0..k {
        let diag = rng.gen_range(diag_lo..0.95);
        let off = random_simplex(rng, k - 1, 0.0);
        let mut it = off.iter();
        for p in 0..k {
            m[(p, y)] = if p == y { diag } else { (1.0 - diag) * it.next().unwrap() };
        }
    }
    m
}

/// Joint `P(pred, true)` of a classifier with conditional `cond` on labels `p`.
pub fn joint(cond: &Matrix, p: &[f64]) -> Matrix {
    let mut c = cond.clone();
    for y in 0..p.len() {
        for r in 0..c.nrows() {
            c[(r, y)] *= p[y];
        }
    }
    c
}

pub fn qp_value(c: &Matrix, mu: &[f64], w: &[f64]) -> f64 {
    let mut total = 0.0;
    for i in 0..mu.len() {
        let mut cw = 0.0;
        for j in 0..w.len() {
            cw += c[(i, j)] * w[j];
        }
        total += (mu[i] - cw).powi(2);
    }
    0.5 * total
}

/// Minimizes a convex function on `[lo, hi]`: a coarse grid, then golden
/// section search around the best grid point.
pub fn minimize_1d<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, grid: usize) -> (f64, f64) {
    if hi <= lo {
        return (lo, f(lo));
    }
    let step = (hi - lo) / grid as f64;
    let mut best = (lo, f(lo));
    for i in 1..=grid {
        let x = lo + step * i as f64;
        let v = f(x);
        if v < best.1 {
            best = (x, v);
        }
    }
    let (mut a, mut b) = ((best.0 - step).max(lo), (best.0 + step).min(hi));
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = b - r * (b - a);
    let mut x2 = a + r * (b - a);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..90 {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - r * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + r * (b - a);
            f2 = f(x2);
        }
    }
    let mid = 0.5 * (a + b);
    let candidate = (mid, f(mid));
    if candidate.1 <= best.1 { candidate } else { best }
}

/// Brute-force minimizer of `½||mu - C w||²` over `{w >= 0, w·p = 1}` for
/// `k` in {2, 3}, parametrized by the first `k - 1` coordinates.
pub fn qp_oracle(c: &Matrix, mu: &[f64], p: &[f64]) -> (Vec<f64>, f64) {
    match p.len() {
        2 => {
            let full = |w0: f64| vec![w0, ((1.0 - p[0] * w0) / p[1]).max(0.0)];
            let (w0, v) = minimize_1d(|w0| qp_value(c, mu, &full(w0)), 0.0, 1.0 / p[0], 2000);
            (full(w0), v)
        }
        3 => {
            let full = |w0: f64, w1: f64| vec![w0, w1, ((1.0 - p[0] * w0 - p[1] * w1) / p[2]).max(0.0)];
            let inner = |w0: f64| {
                let hi = ((1.0 - p[0] * w0) / p[1]).max(0.0);
                minimize_1d(|w1| qp_value(c, mu, &full(w0, w1)), 0.0, hi, 200)
            };
            let (w0, v) = minimize_1d(|w0| inner(w0).1, 0.0, 1.0 / p[0], 200);
            (full(w0, inner(w0).0), v)
        }
        k => panic!("oracle supports k in {{2, 3}}, got {k}"),
    }
}

/// Jensen-Shannon divergence in nats, straight from the definition.
pub fn jsd(p: &[f64], q: &[f64]) -> f64 {
    let mut total = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        let m = 0.5 * (a + b);
        if a > 0.0 {
            total += 0.5 * a * (a / m).ln();
        }
        if b > 0.0 {
            total += 0.5 * b * (b / m).ln();
        }
    }
    total
}

/// Loss of the discriminator `p / (p + q)` on binned distributions.
pub fn optimal_discriminator_loss(p: &[f64], q: &[f64]) -> f64 {
    let mut total = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        let d = a / (a + b);
        if a > 0.0 {
            total -= a * d.ln();
        }
        if b > 0.0 {
            total -= b * (1.0 - d).ln();
        }
    }
    total
}

fn param_mut(layers: &mut [Dense], mut idx: usize) -> &mut f64 {
    for l in layers {
        let nw = l.weights.len();
        if idx < nw {
            let cols = l.weights.ncols();
            return &mut l.weights[(idx / cols, idx % cols)];
        }
        idx -= nw;
        if idx < l.bias.len() {
            return &mut l.bias[idx];
        }
        idx -= l.bias.len();
    }
    panic!("parameter index out of range")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Net {
    G,
    H,
    D,
}

fn net_mut(state: &mut ModelState, net: Net) -> &mut Mlp {
    match net {
        Net::G => &mut state.g,
        Net::H => &mut state.h,
        Net::D => &mut state.d,
    }
}

/// Central difference of `f` along one parameter, in the order of
/// `Mlp::flatten`.
pub fn central_difference<F>(state: &mut ModelState, net: Net, idx: usize, eps: f64, f: F) -> f64
where
    F: Fn(&ModelState) -> f64,
{
    let original = *param_mut(net_mut(state, net).layers_mut(), idx);
    *param_mut(net_mut(state, net).layers_mut(), idx) = original + eps;
    let up = f(state);
    *param_mut(net_mut(state, net).layers_mut(), idx) = original - eps;
    let down = f(state);
    *param_mut(net_mut(state, net).layers_mut(), idx) = original;
    (up - down) / (2.0 * eps)
}

/// `||a - b|| / max(||a||, ||b||)`, or the absolute error when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale < 1e-10 { diff } else { diff / scale }
}
