//! Independent test oracles: a Jacobi eigensolver, finite-difference
//! derivatives, exhaustive corner enumeration and a quadratic-time rank
//! correlation. Deliberately written with different algorithms than the
//! library under test.

#![allow(dead_code)]

use attrcert::numkit::{Matrix, Vector};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Cyclic Jacobi eigensolver for symmetric matrices; returns eigenvalues in
/// descending order.
pub fn jacobi_eigenvalues(m: &Matrix) -> Vec<f64> {
    let n = m.nrows();
    assert_eq!(n, m.ncols(), "jacobi: square input required");
    let mut a = m.clone();
    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += a[[p, q]] * a[[p, q]];
            }
        }
        if off.sqrt() < 1e-14 * (1.0 + a.iter().map(|v| v * v).sum::<f64>().sqrt()) {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[[p, q]];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let tau = (a[[q, q]] - a[[p, p]]) / (2.0 * apq);
                let t = tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[[k, p]];
                    let akq = a[[k, q]];
                    a[[k, p]] = c * akp - s * akq;
                    a[[k, q]] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[[p, k]];
                    let aqk = a[[q, k]];
                    a[[p, k]] = c * apk - s * aqk;
                    a[[q, k]] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut eigs: Vec<f64> = (0..n).map(|i| a[[i, i]]).collect();
    eigs.sort_by(|x, y| y.partial_cmp(x).unwrap());
    eigs
}

/// Central finite-difference gradient of a scalar function.
pub fn fd_grad(f: &dyn Fn(&Vector) -> f64, x: &Vector, h: f64) -> Vector {
    let mut g = Array1::zeros(x.len());
    for j in 0..x.len() {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[j] += h;
        xm[j] -= h;
        g[j] = (f(&xp) - f(&xm)) / (2.0 * h);
    }
    g
}

/// Central finite-difference Jacobian of a vector function (rows = outputs).
pub fn fd_jacobian(f: &dyn Fn(&Vector) -> Vector, x: &Vector, h: f64) -> Matrix {
    let d = x.len();
    let out_dim = f(x).len();
    let mut jac = Array2::zeros((out_dim, d));
    for j in 0..d {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[j] += h;
        xm[j] -= h;
        let col = (f(&xp) - f(&xm)) / (2.0 * h);
        for i in 0..out_dim {
            jac[[i, j]] = col[i];
        }
    }
    jac
}

/// Exhaustive maximum of `sqrt(delta^T P delta)` over the corners of the
/// `eps` box (all `2^d` sign patterns).
pub fn corner_max_quadform(p: &Matrix, eps: f64) -> f64 {
    let d = p.nrows();
    assert!(d <= 20, "corner enumeration is exponential in d");
    let mut best: f64 = 0.0;
    for bits in 0u32..(1u32 << d) {
        let delta: Vector = Array1::from_iter(
            (0..d).map(|j| if bits >> j & 1 == 1 { eps } else { -eps }),
        );
        let q = delta.dot(&p.dot(&delta));
        best = best.max(q.max(0.0).sqrt());
    }
    best
}

/// Quadratic-time tie-corrected Kendall rank correlation.
pub fn kendall_tau_quadratic(u: &Vector, v: &Vector) -> f64 {
    let n = u.len();
    let (mut concordant, mut discordant) = (0f64, 0f64);
    let (mut tie_u, mut tie_v) = (0f64, 0f64);
    for i in 0..n {
        for j in (i + 1)..n {
            let du = u[i] - u[j];
            let dv = v[i] - v[j];
            if du == 0.0 && dv == 0.0 {
                tie_u += 1.0;
                tie_v += 1.0;
            } else if du == 0.0 {
                tie_u += 1.0;
            } else if dv == 0.0 {
                tie_v += 1.0;
            } else if du * dv > 0.0 {
                concordant += 1.0;
            } else {
                discordant += 1.0;
            }
        }
    }
    let n0 = (n * (n - 1) / 2) as f64;
    (concordant - discordant) / ((n0 - tie_u) * (n0 - tie_v)).sqrt()
}

/// Random PSD matrix `B^T B` with entries from a seeded normal stream.
pub fn random_psd(rng: &mut ChaCha8Rng, d: usize) -> Matrix {
    let b: Matrix = Array2::from_shape_fn((d, d), |_| rng.sample::<f64, _>(StandardNormal));
    b.t().dot(&b)
}

/// Random dense matrix (not necessarily symmetric).
pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Array2::from_shape_fn((rows, cols), |_| rng.sample::<f64, _>(StandardNormal))
}

/// Random input in the unit box.
pub fn random_input(rng: &mut ChaCha8Rng, d: usize) -> Vector {
    Array1::from_iter((0..d).map(|_| rng.gen_range(0.0..1.0)))
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Relative error `||a - b||_F / max(1, ||b||_F)`.
pub fn rel_frobenius(a: &Matrix, b: &Matrix) -> f64 {
    let diff = (a - b).iter().map(|v| v * v).sum::<f64>().sqrt();
    let norm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    diff / norm.max(1.0)
}

/// Relative error for vectors.
pub fn rel_l2(a: &Vector, b: &Vector) -> f64 {
    let diff = (a - b).iter().map(|v| v * v).sum::<f64>().sqrt();
    let norm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    diff / norm.max(1.0)
}
