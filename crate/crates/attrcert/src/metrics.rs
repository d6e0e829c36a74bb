//! Dissimilarity measures and report statistics.

use crate::error::{Error, Result};
use crate::numkit::{l2, Vector};

pub fn euclid_dist(u: &Vector, v: &Vector) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::Structural("euclid_dist: dimension mismatch".into()));
    }
    Ok(l2(&(u - v)))
}

/// Cosine distance `1 - u.v / (|u||v|)`, in `[0, 2]`.
pub fn cosine_dist(u: &Vector, v: &Vector) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::Structural("cosine_dist: dimension mismatch".into()));
    }
    let (nu, nv) = (l2(u), l2(v));
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::Domain("cosine_dist: zero vector has no direction".into()));
    }
    Ok((1.0 - u.dot(v) / (nu * nv)).clamp(0.0, 2.0))
}

/// Convert a cosine distance to an angle in degrees.
pub fn to_degrees(d_c: f64) -> Result<f64> {
    if !(0.0..=2.0).contains(&d_c) {
        return Err(Error::Domain(format!(
            "to_degrees: cosine distance {d_c} outside [0, 2]"
        )));
    }
    Ok((1.0 - d_c).clamp(-1.0, 1.0).acos().to_degrees())
}

/// Kendall's tau-b (tie-corrected) between two feature rankings, computed in
/// `O(n log n)` with Knight's merge-count algorithm.
pub fn kendall_tau(u: &Vector, v: &Vector) -> Result<f64> {
    if u.len() != v.len() || u.len() < 2 {
        return Err(Error::Structural(
            "kendall_tau: need two equal-length vectors of dim >= 2".into(),
        ));
    }
    let n = u.len();
    let mut pairs: Vec<(f64, f64)> = u.iter().cloned().zip(v.iter().cloned()).collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.partial_cmp(&b.1).unwrap()));

    let n0 = (n * (n - 1) / 2) as f64;
    let tie_u = tie_count(pairs.iter().map(|p| p.0));
    let tie_uv = tie_count_pairs(&pairs);

    let mut vs: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let swaps = merge_count(&mut vs) as f64;

    let mut v_sorted: Vec<f64> = v.to_vec();
    v_sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let tie_v = tie_count(v_sorted.iter().cloned());

    let denom = ((n0 - tie_u) * (n0 - tie_v)).sqrt();
    if denom == 0.0 {
        return Err(Error::Domain(
            "kendall_tau: constant vector leaves tau-b undefined".into(),
        ));
    }
    let concordant_minus_discordant = n0 - tie_u - tie_v + tie_uv - 2.0 * swaps;
    Ok(concordant_minus_discordant / denom)
}

fn tie_count(values: impl Iterator<Item = f64>) -> f64 {
    let mut total = 0.0;
    let mut run = 0usize;
    let mut prev: Option<f64> = None;
    for v in values {
        if prev == Some(v) {
            run += 1;
        } else {
            total += (run * (run.saturating_sub(1)) / 2) as f64;
            run = 1;
        }
        prev = Some(v);
    }
    total += (run * (run.saturating_sub(1)) / 2) as f64;
    total
}

fn tie_count_pairs(pairs: &[(f64, f64)]) -> f64 {
    let mut total = 0.0;
    let mut run = 0usize;
    let mut prev: Option<(f64, f64)> = None;
    for &p in pairs {
        if prev == Some(p) {
            run += 1;
        } else {
            total += (run * (run.saturating_sub(1)) / 2) as f64;
            run = 1;
        }
        prev = Some(p);
    }
    total += (run * (run.saturating_sub(1)) / 2) as f64;
    total
}

/// Count inversions (strict) by merge sort; equal elements are not inversions.
fn merge_count(values: &mut [f64]) -> usize {
    let n = values.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let (left, right) = values.split_at_mut(mid);
    let mut count = merge_count(left) + merge_count(right);
    let mut merged = Vec::with_capacity(n);
    let (mut i, mut j) = (0, 0);
    while i < left.len() && j < right.len() {
        if left[i] <= right[j] {
            merged.push(left[i]);
            i += 1;
        } else {
            count += left.len() - i;
            merged.push(right[j]);
            j += 1;
        }
    }
    merged.extend_from_slice(&left[i..]);
    merged.extend_from_slice(&right[j..]);
    values.copy_from_slice(&merged);
    count
}

/// Indices of the `k` largest `|values|`, ties broken by lower index.
pub fn topk_indices(values: &Vector, k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| {
        values[b]
            .abs()
            .partial_cmp(&values[a].abs())
            .unwrap()
            .then(a.cmp(&b))
    });
    idx.truncate(k);
    idx
}

/// `|TopK(|u|) ∩ TopK(|v|)| / k`.
pub fn topk_intersection(u: &Vector, v: &Vector, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::Domain("topk_intersection: k must be positive".into()));
    }
    if k > u.len() || u.len() != v.len() {
        return Err(Error::Structural(
            "topk_intersection: k exceeds dimension or dims mismatch".into(),
        ));
    }
    let a = topk_indices(u, k);
    let b: std::collections::HashSet<usize> = topk_indices(v, k).into_iter().collect();
    let common = a.iter().filter(|i| b.contains(i)).count();
    Ok(common as f64 / k as f64)
}

/// Minimum signed gap `min_i (T^(i) - That^(i))` between per-sample bounds
/// and observed mean attack distances.
pub fn min_gap(bounds: &[f64], observed: &[f64]) -> Result<f64> {
    if bounds.is_empty() || bounds.len() != observed.len() {
        return Err(Error::Structural(
            "min_gap: need nonempty aligned bound/observation lists".into(),
        ));
    }
    Ok(bounds
        .iter()
        .zip(observed.iter())
        .map(|(t, o)| t - o)
        .fold(f64::INFINITY, f64::min))
}
