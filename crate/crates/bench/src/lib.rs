//! Seeded inputs shared by the benchmarks.

use gls_adapt::{Categorical, Matrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
}

pub fn random_categorical(rng: &mut ChaCha8Rng, k: usize) -> Categorical {
    Categorical::normalize((0..k).map(|_| rng.gen_range(0.05..1.0)).collect()).expect("positive masses")
}

/// Joint confusion of a noisy classifier on labels `p`, with target
/// marginal `mu` for the weights `q / p`.
pub fn qp_problem(k: usize, seed: u64) -> (Matrix, Categorical, Categorical) {
    let mut r = rng(seed);
    let p = random_categorical(&mut r, k);
    let q = random_categorical(&mut r, k);
    let mut c = Matrix::zeros(k, k);
    for y in 0..k {
        let diag = r.gen_range(0.6..0.95);
        for row in 0..k {
            let cond = if row == y { diag } else { (1.0 - diag) / (k - 1) as f64 };
            c[(row, y)] = cond * p[y];
        }
    }
    let mu: Vec<f64> = (0..k).map(|row| (0..k).map(|y| c[(row, y)] * q[y] / p[y]).sum()).collect();
    (c, Categorical::normalize(mu).expect("positive marginal"), p)
}
