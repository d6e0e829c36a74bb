//! Gradient-based attribution methods and their exact input-Jacobians.

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::Model;
use crate::numkit::{Matrix, Vector};

/// Attribution method. The integrated-gradients path integral is discretized
/// as a right-Riemann sum over `alpha = 1..m`, which keeps the analytic
/// Jacobian and the attribution a consistent pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AttributionMethod {
    SaliencyMap,
    InputGrad,
    IntegratedGradients {
        steps: usize,
        /// Baseline; `None` means the all-zero (black) baseline.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        baseline: Option<Vec<f64>>,
    },
}

impl AttributionMethod {
    pub fn ig(steps: usize) -> AttributionMethod {
        AttributionMethod::IntegratedGradients {
            steps,
            baseline: None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            AttributionMethod::SaliencyMap => "sm",
            AttributionMethod::InputGrad => "input_grad",
            AttributionMethod::IntegratedGradients { .. } => "ig",
        }
    }

    fn baseline_vec(&self, d: usize) -> Result<Vector> {
        match self {
            AttributionMethod::IntegratedGradients {
                baseline: Some(a), ..
            } => {
                if a.len() != d {
                    return Err(Error::Structural(format!(
                        "IG baseline dim {} does not match input dim {d}",
                        a.len()
                    )));
                }
                Ok(Array1::from_vec(a.clone()))
            }
            _ => Ok(Array1::zeros(d)),
        }
    }
}

/// Per-feature relevance vector `g^y(x)` with its provenance.
#[derive(Debug, Clone)]
pub struct Attribution {
    pub values: Vector,
    pub method: AttributionMethod,
    pub label: usize,
}

/// Compute the attribution of `x` for logit `y`.
pub fn attribute(
    model: &Model,
    x: &Vector,
    y: usize,
    method: &AttributionMethod,
) -> Result<Attribution> {
    let values = match method {
        AttributionMethod::SaliencyMap => model.grad_logit(x, y)?,
        AttributionMethod::InputGrad => {
            let g = model.grad_logit(x, y)?;
            x * &g
        }
        AttributionMethod::IntegratedGradients { steps, .. } => {
            if *steps == 0 {
                return Err(Error::Domain("IG needs at least one step".into()));
            }
            let a = method.baseline_vec(x.len())?;
            let diff = x - &a;
            let m = *steps;
            let mut avg: Vector = Array1::zeros(x.len());
            for alpha in 1..=m {
                let point = &a + &(alpha as f64 / m as f64 * &diff);
                avg = avg + model.grad_logit(&point, y)?;
            }
            avg.mapv_inplace(|v| v / m as f64);
            &diff * &avg
        }
    };
    Ok(Attribution {
        values,
        method: method.clone(),
        label: y,
    })
}

/// `|sum_i g_i - (f_y(x) - f_y(a))|` for an integrated-gradients attribution.
/// The baseline logit is subtracted explicitly rather than assumed zero.
pub fn completeness_residual(
    model: &Model,
    x: &Vector,
    y: usize,
    ig: &Attribution,
) -> Result<f64> {
    if !matches!(ig.method, AttributionMethod::IntegratedGradients { .. }) {
        return Err(Error::Domain(
            "completeness_residual applies to integrated gradients only".into(),
        ));
    }
    let a = ig.method.baseline_vec(x.len())?;
    let fx = model.forward(x)?[y];
    let fa = model.forward(&a)?[y];
    Ok((ig.values.sum() - (fx - fa)).abs())
}

/// Jacobian of the attribution with respect to the input, with the
/// convention `H_ij = d g_i / d x_j`.
pub fn attribution_jacobian(
    model: &Model,
    x: &Vector,
    y: usize,
    method: &AttributionMethod,
) -> Result<Matrix> {
    let d = x.len();
    match method {
        AttributionMethod::SaliencyMap => model.hessian_logit(x, y),
        AttributionMethod::InputGrad => {
            // g = x * grad f => H = diag(grad f) + diag(x) * hess f
            let grad = model.grad_logit(x, y)?;
            let hess = model.hessian_logit(x, y)?;
            let mut h = &hess * &x.view().insert_axis(Axis(1));
            for i in 0..d {
                h[[i, i]] += grad[i];
            }
            Ok(h)
        }
        AttributionMethod::IntegratedGradients { steps, .. } => {
            if *steps == 0 {
                return Err(Error::Domain("IG needs at least one step".into()));
            }
            let a = method.baseline_vec(d)?;
            let diff = x - &a;
            let m = *steps;
            let mut avg_grad: Vector = Array1::zeros(d);
            let mut weighted_hess: Matrix = Array2::zeros((d, d));
            for alpha in 1..=m {
                let t = alpha as f64 / m as f64;
                let point = &a + &(t * &diff);
                avg_grad = avg_grad + model.grad_logit(&point, y)?;
                let hess = model.hessian_logit(&point, y)?;
                weighted_hess = weighted_hess + (alpha as f64 / (m * m) as f64) * &hess;
            }
            avg_grad.mapv_inplace(|v| v / m as f64);
            let mut h = &weighted_hess * &diff.view().insert_axis(Axis(1));
            for i in 0..d {
                h[[i, i]] += avg_grad[i];
            }
            Ok(h)
        }
    }
}

/// Gradient of `<u, g(x)>` with respect to `x`, i.e. `H^T u`, computed with
/// Hessian-vector products instead of materializing the Jacobian. Used inside
/// attack loops and for label-constraint row sums.
pub fn attribution_grad_dot(
    model: &Model,
    x: &Vector,
    y: usize,
    method: &AttributionMethod,
    u: &Vector,
) -> Result<Vector> {
    if u.len() != x.len() {
        return Err(Error::Structural(
            "attribution_grad_dot: weight vector dim mismatch".into(),
        ));
    }
    match method {
        AttributionMethod::SaliencyMap => model.hessian_vec(x, y, u),
        AttributionMethod::InputGrad => {
            // H^T u = u * grad + hess (u * x), using Hessian symmetry.
            let grad = model.grad_logit(x, y)?;
            let hv = model.hessian_vec(x, y, &(u * x))?;
            Ok(&(u * &grad) + &hv)
        }
        AttributionMethod::IntegratedGradients { steps, .. } => {
            if *steps == 0 {
                return Err(Error::Domain("IG needs at least one step".into()));
            }
            let a = method.baseline_vec(x.len())?;
            let diff = x - &a;
            let m = *steps;
            let w = u * &diff;
            let mut avg_grad: Vector = Array1::zeros(x.len());
            let mut hess_term: Vector = Array1::zeros(x.len());
            for alpha in 1..=m {
                let t = alpha as f64 / m as f64;
                let point = &a + &(t * &diff);
                avg_grad = avg_grad + model.grad_logit(&point, y)?;
                let hv = model.hessian_vec(&point, y, &w)?;
                hess_term = hess_term + (alpha as f64 / (m * m) as f64) * &hv;
            }
            avg_grad.mapv_inplace(|v| v / m as f64);
            Ok(&(u * &avg_grad) + &hess_term)
        }
    }
}

/// Diagonal-dominance score `sum_i |H_ii| / sum_ij |H_ij|` in `[0, 1]`.
/// An all-zero matrix scores 1.
pub fn diag_dominance(h: &Matrix) -> Result<f64> {
    if h.nrows() != h.ncols() {
        return Err(Error::Structural("diag_dominance: matrix must be square".into()));
    }
    let total: f64 = h.iter().map(|v| v.abs()).sum();
    if total == 0.0 {
        return Ok(1.0);
    }
    let diag: f64 = (0..h.nrows()).map(|i| h[[i, i]].abs()).sum();
    Ok(diag / total)
}

/// `|H|` grid rows for heat-map export (CSV).
pub fn abs_grid_csv(h: &Matrix) -> String {
    let mut out = String::new();
    for row in h.rows() {
        let cells: Vec<String> = row.iter().map(|v| format!("{}", v.abs())).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::Layer;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn scalar_linear_model(w: Vec<f64>) -> Model {
        let d = w.len();
        Model {
            layers: vec![Layer {
                weight: Array2::from_shape_vec((1, d), w).unwrap(),
                bias: Array1::zeros(1),
            }],
            beta: 1.0,
        }
    }

    #[test]
    fn ig_of_linear_model_is_x_times_w() {
        let m = scalar_linear_model(vec![2.0, -1.0, 0.5]);
        let x = array![0.4, 0.8, 0.1];
        for steps in [1, 7, 64] {
            let attr = attribute(&m, &x, 0, &AttributionMethod::ig(steps)).unwrap();
            for i in 0..3 {
                assert_abs_diff_eq!(
                    attr.values[i],
                    x[i] * m.layers[0].weight[[0, i]],
                    epsilon = 1e-12
                );
            }
        }
    }

    #[test]
    fn input_grad_at_zero_input_is_zero() {
        let m = Model::new_random(&[4, 6, 3], 2.0, 1);
        let attr = attribute(&m, &Array1::zeros(4), 1, &AttributionMethod::InputGrad).unwrap();
        assert!(attr.values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn ig_zero_steps_is_domain_error() {
        let m = scalar_linear_model(vec![1.0]);
        assert!(matches!(
            attribute(&m, &array![1.0], 0, &AttributionMethod::ig(0)),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn completeness_exact_for_linear_model() {
        let m = scalar_linear_model(vec![1.5, -2.0]);
        let x = array![0.3, 0.9];
        for steps in [1, 3, 100] {
            let ig = attribute(&m, &x, 0, &AttributionMethod::ig(steps)).unwrap();
            assert!(completeness_residual(&m, &x, 0, &ig).unwrap() < 1e-12);
        }
    }

    #[test]
    fn completeness_zero_at_baseline() {
        let m = Model::new_random(&[3, 5, 2], 3.0, 2);
        let x = Array1::zeros(3);
        let ig = attribute(&m, &x, 0, &AttributionMethod::ig(16)).unwrap();
        assert!(completeness_residual(&m, &x, 0, &ig).unwrap() < 1e-12);
    }

    #[test]
    fn completeness_rejects_wrong_method() {
        let m = scalar_linear_model(vec![1.0]);
        let sm = attribute(&m, &array![0.5], 0, &AttributionMethod::SaliencyMap).unwrap();
        assert!(matches!(
            completeness_residual(&m, &array![0.5], 0, &sm),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn ig_jacobian_of_linear_model_is_diag_w() {
        let m = scalar_linear_model(vec![2.0, -3.0]);
        let h = attribution_jacobian(&m, &array![0.2, 0.7], 0, &AttributionMethod::ig(5)).unwrap();
        assert_abs_diff_eq!(h[[0, 0]], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(h[[1, 1]], -3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(h[[0, 1]], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(h[[1, 0]], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn sm_jacobian_of_linear_model_is_zero() {
        let m = scalar_linear_model(vec![1.0, 2.0]);
        let h =
            attribution_jacobian(&m, &array![0.1, 0.9], 0, &AttributionMethod::SaliencyMap)
                .unwrap();
        assert!(h.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn ig_at_zero_with_zero_baseline_is_zero() {
        let m = Model::new_random(&[4, 6, 2], 2.0, 3);
        let x = Array1::zeros(4);
        let attr = attribute(&m, &x, 0, &AttributionMethod::ig(8)).unwrap();
        assert!(attr.values.iter().all(|v| *v == 0.0));
        let h = attribution_jacobian(&m, &x, 0, &AttributionMethod::ig(8)).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                if i != j {
                    assert_eq!(h[[i, j]], 0.0);
                }
            }
        }
    }

    #[test]
    fn grad_dot_matches_jacobian_transpose() {
        let m = Model::new_random(&[5, 7, 3], 4.0, 11);
        let x = array![0.2, 0.8, 0.4, 0.6, 0.1];
        let u = array![1.0, -0.5, 0.0, 2.0, 0.3];
        for method in [
            AttributionMethod::SaliencyMap,
            AttributionMethod::InputGrad,
            AttributionMethod::ig(9),
        ] {
            let h = attribution_jacobian(&m, &x, 1, &method).unwrap();
            let expected = h.t().dot(&u);
            let got = attribution_grad_dot(&m, &x, 1, &method, &u).unwrap();
            for i in 0..5 {
                assert_abs_diff_eq!(got[i], expected[i], epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn diag_dominance_hand_values() {
        assert_eq!(diag_dominance(&Array2::eye(4)).unwrap(), 1.0);
        let ones = Array2::from_elem((4, 4), 1.0);
        assert_abs_diff_eq!(diag_dominance(&ones).unwrap(), 0.25);
        assert_eq!(diag_dominance(&Array2::zeros((3, 3))).unwrap(), 1.0);
    }
}
