//! Dense real linear algebra and spectral primitives.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vector = Array1<f64>;
pub type Matrix = Array2<f64>;

/// Perturbation norm for bounds and attacks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    L2,
    Linf,
}

impl std::fmt::Display for Norm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Norm::L2 => write!(f, "l2"),
            Norm::Linf => write!(f, "linf"),
        }
    }
}

/// Default convergence tolerance for [`power_iteration`].
pub const DEFAULT_TOL: f64 = 1e-10;
/// Default iteration budget for [`power_iteration`].
pub const DEFAULT_MAX_ITER: usize = 10_000;

/// Relative asymmetry tolerated before a matrix is rejected as input to the
/// eigensolver. Floating-point Jacobians are symmetrized below this level.
const SYMMETRY_TOL: f64 = 1e-8;

/// Dominant eigenpair of a symmetric PSD matrix.
#[derive(Debug, Clone)]
pub struct EigenPair {
    pub value: f64,
    pub vector: Vector,
    pub converged: bool,
}

/// Power iteration for the dominant eigenpair of a symmetric PSD matrix.
///
/// The iterate starts from a fixed seeded random unit vector so results are
/// deterministic. The input is symmetrized as `(P + P^T)/2` before iterating;
/// asymmetry beyond `1e-8` (relative) is a structural error. Convergence is
/// declared when the residual `||Pv - lambda v||` falls below
/// `tol * max(1, lambda)`; if the iteration budget runs out the last iterate
/// is returned with `converged = false`.
pub fn power_iteration(p: &Matrix, tol: f64, max_iter: usize) -> Result<EigenPair> {
    let n = p.nrows();
    if n == 0 || p.ncols() != n {
        return Err(Error::Structural(format!(
            "power_iteration needs a nonempty square matrix, got {}x{}",
            p.nrows(),
            p.ncols()
        )));
    }
    if tol <= 0.0 {
        return Err(Error::Domain("power_iteration tol must be > 0".into()));
    }
    let scale = p.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    let mut max_asym = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            max_asym = max_asym.max((p[[i, j]] - p[[j, i]]).abs());
        }
    }
    if max_asym > SYMMETRY_TOL * scale {
        return Err(Error::Structural(format!(
            "power_iteration input is asymmetric (max |P_ij - P_ji| = {max_asym:.3e})"
        )));
    }
    let sym = 0.5 * (p + &p.t());

    let mut rng = ChaCha8Rng::seed_from_u64(0x9e3779b97f4a7c15);
    let mut v: Vector = Array1::from_iter((0..n).map(|_| rng.gen_range(-1.0..1.0)));
    let norm = l2(&v);
    v.mapv_inplace(|x| x / norm);

    let mut value = v.dot(&sym.dot(&v));
    for _ in 0..max_iter {
        let pv = sym.dot(&v);
        let pv_norm = l2(&pv);
        if pv_norm == 0.0 {
            // P annihilates the iterate; the matrix is (numerically) zero on
            // this subspace and 0 is the dominant eigenvalue of a PSD zero map.
            return Ok(EigenPair {
                value: 0.0,
                vector: v,
                converged: true,
            });
        }
        v = pv.mapv(|x| x / pv_norm);
        let pv = sym.dot(&v);
        value = v.dot(&pv);
        let residual = l2(&(&pv - &(value * &v)));
        if residual <= tol * value.abs().max(1.0) {
            return Ok(EigenPair {
                value,
                vector: v,
                converged: true,
            });
        }
    }
    Ok(EigenPair {
        value,
        vector: v,
        converged: false,
    })
}

/// Sum of absolute values of all entries.
pub fn abs_sum(p: &Matrix) -> f64 {
    p.iter().map(|v| v.abs()).sum()
}

/// The p-norm of a vector for `p in [1, inf]`; `p = f64::INFINITY` gives the
/// max-abs norm.
pub fn lp_norm(v: &Vector, p: f64) -> Result<f64> {
    if p < 1.0 || p.is_nan() {
        return Err(Error::Domain(format!("lp_norm needs p >= 1, got {p}")));
    }
    if p.is_infinite() {
        return Ok(v.iter().fold(0.0f64, |m, x| m.max(x.abs())));
    }
    if p == 1.0 {
        return Ok(v.iter().map(|x| x.abs()).sum());
    }
    if p == 2.0 {
        return Ok(l2(v));
    }
    Ok(v.iter().map(|x| x.abs().powf(p)).sum::<f64>().powf(1.0 / p))
}

/// Euclidean norm.
pub fn l2(v: &Vector) -> f64 {
    v.dot(v).sqrt()
}
