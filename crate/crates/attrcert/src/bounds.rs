//! Certification mathematics: spectral and abs-sum bounds on attribution
//! deviation, label-constraint feasibility, cosine conversion, adaptive
//! scale, the local-linearity diagnostic and the inverse (max-epsilon)
//! formulation.

use serde::{Deserialize, Serialize};

use crate::attrib::{attribute, attribution_grad_dot, attribution_jacobian, AttributionMethod};
use crate::error::{Error, Result};
use crate::metrics::euclid_dist;
use crate::net::Model;
use crate::numkit::{self, l2, Matrix, Norm, Vector};

/// Feasibility witness attached to a label-constrained certificate.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Witness {
    /// `sign * epsilon * v_max` satisfies the half-space constraint.
    Direction { sign: i8 },
    /// The box corner `epsilon * signs` satisfies the constraint.
    Corner { signs: Vec<i8> },
}

/// Per-sample certificate record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundCertificate {
    pub sample_id: usize,
    pub norm: Norm,
    pub epsilon: f64,
    pub xi_max: f64,
    /// Plain Euclidean bound: `xi_max * eps` (l2) or `eps * sqrt(sum|P|)` (linf).
    pub t_e: f64,
    /// Adaptive Taylor-remainder scale, `>= 1`; 1 for the linf bound.
    pub c: f64,
    /// Generalized bound `c * t_e`.
    pub t_prime_e: f64,
    /// Cosine-distance bound derived from `t_prime_e`; 2 when invalid.
    pub t_c: f64,
    pub t_c_valid: bool,
    /// `||g^y(x)||_2` of the unperturbed attribution.
    pub g_norm: f64,
    pub label_constrained: bool,
    /// Set when the label constraint is infeasible (only possible with b <= 0,
    /// i.e. a misranked sample); the certificate falls back to the unlabeled bound.
    pub degenerate: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub witness: Option<Witness>,
}

/// Half-space `M^T delta < b` sufficient for the prediction to stay `y`.
#[derive(Debug, Clone)]
pub struct LabelConstraint {
    pub m: Vector,
    pub b: f64,
    pub second_label: usize,
}

/// Result of the l2 spectral bound.
#[derive(Debug, Clone)]
pub struct L2Bound {
    pub t_e: f64,
    pub xi_max: f64,
    pub v_max: Vector,
}

/// `T_e = xi_max * eps` where `xi_max` is the largest singular value of the
/// attribution Jacobian `H`. With the convention `H_ij = dg_i/dx_j` the
/// linearized deviation is `H delta`, so the quadratic form lives on
/// `P = H^T H` and `v_max` is an input-space direction.
pub fn l2_bound(h: &Matrix, epsilon: f64) -> Result<L2Bound> {
    if epsilon < 0.0 {
        return Err(Error::Domain("l2_bound: epsilon must be >= 0".into()));
    }
    if h.nrows() != h.ncols() {
        return Err(Error::Structural("l2_bound: H must be square".into()));
    }
    let p = h.t().dot(h);
    let pair = numkit::power_iteration(&p, numkit::DEFAULT_TOL, numkit::DEFAULT_MAX_ITER)?;
    let xi_max = pair.value.max(0.0).sqrt();
    Ok(L2Bound {
        t_e: xi_max * epsilon,
        xi_max,
        v_max: pair.vector,
    })
}

/// p-norm relaxation `d^(1/2 - 1/p) * xi_max * eps` for `p > 2`
/// (`p = inf` gives the factor `sqrt(d)`).
pub fn lp_relaxed_bound(xi_max: f64, epsilon: f64, p: f64, d: usize) -> Result<f64> {
    if !(p > 2.0) {
        return Err(Error::Domain(format!(
            "lp_relaxed_bound: requires p > 2, got {p}"
        )));
    }
    let exponent = if p.is_infinite() { 0.5 } else { 0.5 - 1.0 / p };
    Ok((d as f64).powf(exponent) * xi_max * epsilon)
}

/// Abs-sum bound `eps * sqrt(sum_ij |P_ij|)` for linf perturbations.
pub fn linf_bound(p: &Matrix, epsilon: f64) -> Result<f64> {
    if epsilon < 0.0 {
        return Err(Error::Domain("linf_bound: epsilon must be >= 0".into()));
    }
    if p.nrows() != p.ncols() {
        return Err(Error::Structural("linf_bound: P must be square".into()));
    }
    Ok(epsilon * numkit::abs_sum(p).sqrt())
}

/// Adaptive Taylor-remainder scale
/// `c = max(1, ||g(x + eps v) - g(x)|| / (xi_max eps))`, probing both signs
/// of the dominant direction.
pub fn adaptive_scale(
    model: &Model,
    x: &Vector,
    y: usize,
    method: &AttributionMethod,
    epsilon: f64,
    xi_max: f64,
    v_max: &Vector,
) -> Result<f64> {
    if epsilon <= 0.0 {
        return Err(Error::Domain("adaptive_scale: epsilon must be > 0".into()));
    }
    if xi_max == 0.0 {
        // Zero-curvature attribution: the linear bound is exact.
        return Ok(1.0);
    }
    let norm = l2(v_max);
    if (norm - 1.0).abs() > 1e-6 {
        return Err(Error::Structural("adaptive_scale: v_max must be unit norm".into()));
    }
    let g0 = attribute(model, x, y, method)?.values;
    let mut worst: f64 = 0.0;
    for sign in [1.0, -1.0] {
        let xp = x + &(sign * epsilon * v_max);
        let g1 = attribute(model, &xp, y, method)?.values;
        worst = worst.max(euclid_dist(&g0, &g1)?);
    }
    Ok((worst / (xi_max * epsilon)).max(1.0))
}

/// Cosine-distance bound from a Euclidean bound `t` and `||g||_2`. Returns
/// `(t_c, valid)`; when `t > g_norm` the trivial ceiling 2 is returned with
/// `valid = false` so campaigns can still aggregate the sample, flagged.
pub fn cosine_bound(t: f64, g_norm: f64) -> Result<(f64, bool)> {
    if t < 0.0 {
        return Err(Error::Domain("cosine_bound: t must be >= 0".into()));
    }
    if g_norm <= 0.0 {
        return Err(Error::Domain(
            "cosine_bound: zero attribution has no direction".into(),
        ));
    }
    if t <= g_norm {
        let ratio = t / g_norm;
        Ok((1.0 - (1.0 - ratio * ratio).max(0.0).sqrt(), true))
    } else {
        Ok((2.0, false))
    }
}

/// Build the half-space label constraint for the second-best label.
/// Requires a completeness-satisfying method (integrated gradients).
pub fn build_label_constraint(
    model: &Model,
    x: &Vector,
    y: usize,
    method: &AttributionMethod,
) -> Result<LabelConstraint> {
    if !matches!(method, AttributionMethod::IntegratedGradients { .. }) {
        return Err(Error::Domain(
            "label constraint requires a completeness-satisfying method (IG)".into(),
        ));
    }
    let logits = model.forward(x)?;
    if logits.len() < 2 {
        return Err(Error::Structural("label constraint needs >= 2 classes".into()));
    }
    let mut second = usize::MAX;
    for k in 0..logits.len() {
        if k == y {
            continue;
        }
        if second == usize::MAX || logits[k] > logits[second] {
            second = k;
        }
    }
    let ones = Vector::from_elem(x.len(), 1.0);
    let row_sum_second = attribution_grad_dot(model, x, second, method, &ones)?;
    let row_sum_own = attribution_grad_dot(model, x, y, method, &ones)?;
    Ok(LabelConstraint {
        m: &row_sum_second - &row_sum_own,
        b: logits[y] - logits[second],
        second_label: second,
    })
}

/// Label-constrained l2 bound: the unlabeled optimum `xi_max * eps` is still
/// attained at whichever of `+/- eps v_max` lies in the half-space. When
/// `b > 0` a witness always exists (if both signs failed, `0 >= 2b`).
pub fn labeled_l2_bound(
    xi_max: f64,
    epsilon: f64,
    v_max: &Vector,
    lc: &LabelConstraint,
) -> (f64, Option<Witness>, bool) {
    let t_e = xi_max * epsilon;
    let proj = lc.m.dot(v_max) * epsilon;
    if proj < lc.b {
        (t_e, Some(Witness::Direction { sign: 1 }), false)
    } else if -proj < lc.b {
        (t_e, Some(Witness::Direction { sign: -1 }), false)
    } else {
        (t_e, None, true)
    }
}

/// Label-constrained linf bound: the abs-sum optimum is attained at a box
/// corner. The corner `-eps * sign(M)` minimizes `M^T delta`, so it is a
/// witness exactly when the constraint is feasible at all.
pub fn labeled_linf_bound(
    p: &Matrix,
    epsilon: f64,
    lc: &LabelConstraint,
) -> Result<(f64, Option<Witness>, bool)> {
    let t_e = linf_bound(p, epsilon)?;
    let signs: Vec<i8> = lc.m.iter().map(|&mi| if mi > 0.0 { -1 } else { 1 }).collect();
    let min_proj: f64 = lc
        .m
        .iter()
        .zip(signs.iter())
        .map(|(&mi, &s)| mi * s as f64 * epsilon)
        .sum();
    if min_proj < lc.b {
        Ok((t_e, Some(Witness::Corner { signs }), false))
    } else {
        Ok((t_e, None, true))
    }
}

/// Local-linearity diagnostic `eta(x, delta) = ||g(x+delta) - g(x) - H delta||_2`.
pub fn eta(
    model: &Model,
    x: &Vector,
    y: usize,
    method: &AttributionMethod,
    delta: &Vector,
) -> Result<f64> {
    if delta.len() != x.len() {
        return Err(Error::Structural("eta: delta dimension mismatch".into()));
    }
    let g0 = attribute(model, x, y, method)?.values;
    let g1 = attribute(model, &(x + delta), y, method)?.values;
    let h = attribution_jacobian(model, x, y, method)?;
    let linear = h.dot(delta);
    Ok(l2(&(&g1 - &g0 - &linear)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceMetric {
    Euclid,
    Cosine,
}

/// Inverse formulation: the largest certified `eps` such that the attribution
/// deviation stays below `omega`. The cosine case inverts the squared form of
/// the cosine bound with `T = xi_max * eps`.
pub fn max_epsilon_for_threshold(
    omega: f64,
    xi_max: f64,
    g_norm: f64,
    metric: DistanceMetric,
) -> Result<f64> {
    if omega < 0.0 {
        return Err(Error::Domain("max_epsilon_for_threshold: omega must be >= 0".into()));
    }
    if xi_max <= 0.0 {
        return Err(Error::Domain(
            "max_epsilon_for_threshold: xi_max must be > 0".into(),
        ));
    }
    match metric {
        DistanceMetric::Euclid => Ok(omega / xi_max),
        DistanceMetric::Cosine => {
            if omega > 1.0 {
                return Err(Error::Domain(
                    "max_epsilon_for_threshold: cosine omega must be in [0, 1]".into(),
                ));
            }
            let s = 1.0 - (1.0 - omega) * (1.0 - omega);
            Ok(g_norm / xi_max * s.max(0.0).sqrt())
        }
    }
}

/// Full per-sample certification driver used by the campaign and the CLI.
pub fn certify_sample(
    model: &Model,
    x: &Vector,
    y: usize,
    sample_id: usize,
    method: &AttributionMethod,
    norm: Norm,
    epsilon: f64,
    label_constrained: bool,
) -> Result<BoundCertificate> {
    let h = attribution_jacobian(model, x, y, method)?;
    let g = attribute(model, x, y, method)?.values;
    let g_norm = l2(&g);

    let lc = if label_constrained {
        Some(build_label_constraint(model, x, y, method)?)
    } else {
        None
    };

    let (t_e, xi_max, c, witness, degenerate) = match norm {
        Norm::L2 => {
            let sb = l2_bound(&h, epsilon)?;
            let c = if epsilon > 0.0 && sb.xi_max > 0.0 {
                adaptive_scale(model, x, y, method, epsilon, sb.xi_max, &sb.v_max)?
            } else {
                1.0
            };
            let (witness, degenerate) = match &lc {
                None => (None, false),
                Some(lc) => {
                    let (_, w, d) = labeled_l2_bound(sb.xi_max, epsilon, &sb.v_max, lc);
                    (w, d)
                }
            };
            (sb.t_e, sb.xi_max, c, witness, degenerate)
        }
        Norm::Linf => {
            let p = h.t().dot(&h);
            let t_e = linf_bound(&p, epsilon)?;
            let xi_max = l2_bound(&h, 1.0)?.xi_max;
            let (witness, degenerate) = match &lc {
                None => (None, false),
                Some(lc) => {
                    let (_, w, d) = labeled_linf_bound(&p, epsilon, lc)?;
                    (w, d)
                }
            };
            (t_e, xi_max, 1.0, witness, degenerate)
        }
    };

    let t_prime_e = c * t_e;
    let (t_c, t_c_valid) = if g_norm > 0.0 {
        cosine_bound(t_prime_e, g_norm)?
    } else {
        (2.0, false)
    };

    Ok(BoundCertificate {
        sample_id,
        norm,
        epsilon,
        xi_max,
        t_e,
        c,
        t_prime_e,
        t_c,
        t_c_valid,
        g_norm,
        label_constrained,
        degenerate,
        witness,
    })
}
