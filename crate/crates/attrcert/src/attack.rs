//! Adversarial and attribution attacks plus the certification-validation
//! campaign that checks computed bounds against observed deviations.

use ndarray::Array1;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attrib::{attribute, attribution_grad_dot, AttributionMethod};
use crate::bounds::BoundCertificate;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::metrics::{
    cosine_dist, euclid_dist, kendall_tau, to_degrees, topk_indices, topk_intersection,
};
use crate::net::{input_grad_of_loss, Model};
use crate::numkit::{l2, Norm, Vector};

/// Attack campaign configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackConfig {
    pub norm: Norm,
    pub epsilon: f64,
    /// Iterations per attack: 20 is the usual PGD budget, 200 the usual
    /// feature-importance attack budget.
    pub steps: usize,
    /// Explicit step size; `None` selects `2.5 eps / steps` for PGD and
    /// `eps / steps` for the sign-gradient attack.
    #[serde(default)]
    pub step_size: Option<f64>,
    #[serde(default = "default_restarts")]
    pub restarts: usize,
    /// Top-k set size for the feature-importance attack and its metric.
    #[serde(default = "default_top_k")]
    pub top_k: usize,
    pub seed: u64,
}

fn default_restarts() -> usize {
    20
}

fn default_top_k() -> usize {
    5
}

impl AttackConfig {
    pub fn validate(&self, d: usize) -> Result<()> {
        if self.epsilon < 0.0 {
            return Err(Error::Structural("attack: epsilon must be >= 0".into()));
        }
        if self.steps == 0 {
            return Err(Error::Structural("attack: steps must be >= 1".into()));
        }
        if self.top_k == 0 || self.top_k > d {
            return Err(Error::Structural(format!(
                "attack: top_k must be in 1..={d}"
            )));
        }
        Ok(())
    }
}

/// One attack outcome; streams to newline-delimited JSON.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackRecord {
    pub sample_id: usize,
    pub restart_id: usize,
    pub delta: Vec<f64>,
    pub label_preserved: bool,
    pub euclid_dist: f64,
    pub cosine_dist: f64,
    pub kendall: f64,
    pub topk_intersection: f64,
}

/// Mix a campaign seed with sample and restart indices into an independent
/// per-attack stream seed (splitmix64 finalizer).
pub fn stable_hash(seed: u64, i: usize, r: usize) -> u64 {
    let mut z = seed
        .wrapping_add((i as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15))
        .wrapping_add((r as u64).wrapping_mul(0xbf58_476d_1ce4_e5b9));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Uniform draw from the l2 ball of radius `eps`.
fn sample_l2_ball(rng: &mut ChaCha8Rng, d: usize, eps: f64) -> Vector {
    let mut v: Vector = Array1::from_iter((0..d).map(|_| rng.sample::<f64, _>(StandardNormal)));
    let n = l2(&v);
    if n > 0.0 {
        let u: f64 = rng.gen_range(0.0..1.0);
        let radius = eps * u.powf(1.0 / d as f64);
        v.mapv_inplace(|x| x / n * radius);
    }
    v
}

/// Project `delta` so that `||delta||_2 <= eps`.
fn project_l2(delta: &mut Vector, eps: f64) {
    let n = l2(delta);
    if n > eps && n > 0.0 {
        let s = eps / n;
        delta.mapv_inplace(|x| x * s);
    }
}

/// Clip `x + delta` to the `[0,1]` box by adjusting `delta`.
fn clip_box(delta: &mut Vector, x: &Vector) {
    for (di, &xi) in delta.iter_mut().zip(x.iter()) {
        *di = (xi + *di).clamp(0.0, 1.0) - xi;
    }
}

/// l2 PGD ascent on the cross-entropy loss, random ball initialization.
pub fn pgd_l2(
    model: &Model,
    x: &Vector,
    y: usize,
    cfg: &AttackConfig,
    seed: u64,
) -> Result<Vector> {
    if cfg.epsilon == 0.0 {
        return Ok(Array1::zeros(x.len()));
    }
    let step = cfg.step_size.unwrap_or(2.5 * cfg.epsilon / cfg.steps as f64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut delta = sample_l2_ball(&mut rng, x.len(), cfg.epsilon);
    clip_box(&mut delta, x);
    for _ in 0..cfg.steps {
        let grad = input_grad_of_loss(model, &(x + &delta), y)?;
        let gnorm = l2(&grad);
        if gnorm > 0.0 {
            delta.scaled_add(step / gnorm, &grad);
        }
        project_l2(&mut delta, cfg.epsilon);
        clip_box(&mut delta, x);
    }
    Ok(delta)
}

/// linf sign-gradient PGD on the cross-entropy loss (used for adversarial
/// inner maximization during training).
fn pgd_linf(
    model: &Model,
    x: &Vector,
    y: usize,
    epsilon: f64,
    steps: usize,
    seed: u64,
) -> Result<Vector> {
    if epsilon == 0.0 {
        return Ok(Array1::zeros(x.len()));
    }
    let step = 2.5 * epsilon / steps as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut delta: Vector =
        Array1::from_iter((0..x.len()).map(|_| rng.gen_range(-epsilon..=epsilon)));
    clip_box(&mut delta, x);
    for _ in 0..steps {
        let grad = input_grad_of_loss(model, &(x + &delta), y)?;
        for (di, &gi) in delta.iter_mut().zip(grad.iter()) {
            *di = (*di + step * gi.signum()).clamp(-epsilon, epsilon);
        }
        clip_box(&mut delta, x);
    }
    Ok(delta)
}

/// Inner adversarial perturbation for training loops; dispatches on norm.
pub fn pgd_perturb(
    model: &Model,
    x: &Vector,
    y: usize,
    norm: Norm,
    epsilon: f64,
    steps: usize,
    seed: u64,
) -> Result<Vector> {
    match norm {
        Norm::L2 => {
            let cfg = AttackConfig {
                norm,
                epsilon,
                steps,
                step_size: None,
                restarts: 1,
                top_k: 1,
                seed,
            };
            pgd_l2(model, x, y, &cfg, seed)
        }
        Norm::Linf => pgd_linf(model, x, y, epsilon, steps, seed),
    }
}

/// Cheaper stand-in for the attribution recomputed inside the attack loop:
/// integrated gradients drop to 32 steps; other methods are unchanged.
fn loop_method(method: &AttributionMethod) -> AttributionMethod {
    match method {
        AttributionMethod::IntegratedGradients { steps, baseline } => {
            AttributionMethod::IntegratedGradients {
                steps: (*steps).min(32),
                baseline: baseline.clone(),
            }
        }
        other => other.clone(),
    }
}

/// linf feature-importance attack: sign-gradient descent on the summed
/// attribution of the originally most-important features, with per-step
/// rollback whenever the prediction would change (so the returned `delta`
/// always preserves the label).
pub fn ifia_linf(
    model: &Model,
    x: &Vector,
    y: usize,
    method: &AttributionMethod,
    cfg: &AttackConfig,
    seed: u64,
) -> Result<Vector> {
    if cfg.epsilon == 0.0 {
        return Ok(Array1::zeros(x.len()));
    }
    let step = cfg.step_size.unwrap_or(cfg.epsilon / cfg.steps as f64);
    let inner = loop_method(method);
    let pred0 = model.predict(x)?;
    let g0 = attribute(model, x, y, &inner)?.values;
    let top = topk_indices(&g0, cfg.top_k.min(x.len()));
    // Weight each suppressed feature by the sign of its original attribution
    // so the descent shrinks |g_i| rather than the signed value.
    let mut mask: Vector = Array1::zeros(x.len());
    for i in top {
        mask[i] = g0[i].signum();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut delta: Vector =
        Array1::from_iter((0..x.len()).map(|_| rng.gen_range(-cfg.epsilon..=cfg.epsilon) * 0.5));
    clip_box(&mut delta, x);
    if model.predict(&(x + &delta))? != pred0 {
        delta.fill(0.0);
    }
    for _ in 0..cfg.steps {
        // Gradient of sum_{i in top} g_i at x + delta; we step against it.
        let grad = attribution_grad_dot(model, &(x + &delta), y, &inner, &mask)?;
        let mut candidate = delta.clone();
        for (di, &gi) in candidate.iter_mut().zip(grad.iter()) {
            *di = (*di - step * gi.signum()).clamp(-cfg.epsilon, cfg.epsilon);
        }
        clip_box(&mut candidate, x);
        if model.predict(&(x + &candidate))? == pred0 {
            delta = candidate;
        }
    }
    Ok(delta)
}

/// Per-sample campaign statistics. Labeled fields aggregate only
/// label-preserved records; `None` when no record preserved the label
/// (or when `restarts = 0`).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleStats {
    pub sample_id: usize,
    pub t_e: f64,
    pub t_prime_e: f64,
    pub t_c: f64,
    pub n_records: usize,
    pub n_label_preserved: usize,
    pub that_e: Option<f64>,
    pub that_c: Option<f64>,
    pub kendall_mean: Option<f64>,
    pub topk_mean: Option<f64>,
    /// Mean Euclidean deviation over all records, label-preserving or not.
    pub that_e_all: Option<f64>,
    pub outside_te: bool,
    pub violations_tprime: usize,
}

/// Campaign-level report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CampaignReport {
    /// Display names filled in by the CLI layer; empty when run as a library.
    #[serde(default)]
    pub model: String,
    #[serde(default)]
    pub dataset: String,
    pub norm: Norm,
    pub epsilon: f64,
    pub method: String,
    pub n_samples: usize,
    pub restarts: usize,
    pub t_e_mean: f64,
    pub t_prime_e_mean: f64,
    pub t_c_deg_mean: f64,
    pub that_e_mean: Option<f64>,
    pub that_c_deg_mean: Option<f64>,
    pub kendall_mean: Option<f64>,
    pub topk_mean: Option<f64>,
    /// Fraction (percent) of samples whose mean observed deviation exceeds
    /// the plain bound `T_e`.
    pub pct_outside_te: f64,
    /// Record-level count of label-preserved deviations exceeding the
    /// generalized bound; a valid run has zero.
    pub n_violations_tprime: usize,
    /// Minimum signed gap between the per-sample bound and the mean observed
    /// deviation (`T'_e` substituted for `T_e` in l2 cases).
    pub min_gap_r: Option<f64>,
    /// Per-sample gaps backing the gap-distribution export.
    pub gaps: Vec<f64>,
    pub per_sample: Vec<SampleStats>,
}

fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

fn attack_sample(
    model: &Model,
    x: &Vector,
    y: usize,
    sample_idx: usize,
    cfg: &AttackConfig,
    method: &AttributionMethod,
    cert: &BoundCertificate,
) -> Result<(SampleStats, Vec<AttackRecord>)> {
    let g0 = attribute(model, x, y, method)?.values;
    let pred0 = model.predict(x)?;
    let mut records = Vec::with_capacity(cfg.restarts);
    for r in 0..cfg.restarts {
        let seed = stable_hash(cfg.seed, sample_idx, r);
        let delta = match cfg.norm {
            Norm::L2 => pgd_l2(model, x, y, cfg, seed)?,
            Norm::Linf => ifia_linf(model, x, y, method, cfg, seed)?,
        };
        let xp = x + &delta;
        let label_preserved = model.predict(&xp)? == pred0;
        let g1 = attribute(model, &xp, y, method)?.values;
        // Constant or zero attributions make the rank and angle metrics
        // undefined; substitute neutral values to keep records finite.
        let kendall = kendall_tau(&g0, &g1).unwrap_or(0.0);
        let cosine = cosine_dist(&g0, &g1).unwrap_or(0.0);
        records.push(AttackRecord {
            sample_id: sample_idx,
            restart_id: r,
            delta: delta.to_vec(),
            label_preserved,
            euclid_dist: euclid_dist(&g0, &g1)?,
            cosine_dist: cosine,
            kendall,
            topk_intersection: topk_intersection(&g0, &g1, cfg.top_k.min(x.len()))?,
        });
    }

    let labeled: Vec<&AttackRecord> = records.iter().filter(|r| r.label_preserved).collect();
    let euclids: Vec<f64> = labeled.iter().map(|r| r.euclid_dist).collect();
    let that_e = mean(&euclids);
    let that_c = mean(&labeled.iter().map(|r| r.cosine_dist).collect::<Vec<_>>());
    let kendall_mean = mean(&labeled.iter().map(|r| r.kendall).collect::<Vec<_>>());
    let topk_mean = mean(
        &labeled
            .iter()
            .map(|r| r.topk_intersection)
            .collect::<Vec<_>>(),
    );
    let that_e_all = mean(&records.iter().map(|r| r.euclid_dist).collect::<Vec<_>>());
    let violations_tprime = euclids.iter().filter(|&&e| e > cert.t_prime_e).count();
    let outside_te = that_e.map(|m| m > cert.t_e).unwrap_or(false);

    Ok((
        SampleStats {
            sample_id: sample_idx,
            t_e: cert.t_e,
            t_prime_e: cert.t_prime_e,
            t_c: cert.t_c,
            n_records: records.len(),
            n_label_preserved: labeled.len(),
            that_e,
            that_c,
            kendall_mean,
            topk_mean,
            that_e_all,
            outside_te,
            violations_tprime,
        },
        records,
    ))
}

/// Run the validation campaign: `restarts` attacks per sample, labeled
/// statistics over label-preserved records, and bound-violation accounting
/// against the precomputed certificates.
pub fn run_campaign(
    model: &Model,
    data: &Dataset,
    cfg: &AttackConfig,
    method: &AttributionMethod,
    certs: &[BoundCertificate],
) -> Result<(CampaignReport, Vec<AttackRecord>)> {
    if data.len() == 0 {
        return Err(Error::Structural("run_campaign: empty dataset".into()));
    }
    cfg.validate(data.dim())?;
    if certs.len() != data.len() {
        return Err(Error::Structural(format!(
            "run_campaign: {} certificates for {} samples",
            certs.len(),
            data.len()
        )));
    }
    for (i, c) in certs.iter().enumerate() {
        if c.sample_id != i || c.norm != cfg.norm || (c.epsilon - cfg.epsilon).abs() > 1e-12 {
            return Err(Error::Structural(format!(
                "run_campaign: certificate {i} does not match campaign norm/epsilon"
            )));
        }
    }

    let results: Vec<(SampleStats, Vec<AttackRecord>)> = (0..data.len())
        .into_par_iter()
        .map(|i| {
            attack_sample(
                model,
                &data.inputs[i],
                data.labels[i],
                i,
                cfg,
                method,
                &certs[i],
            )
        })
        .collect::<Result<_>>()?;

    let mut per_sample = Vec::with_capacity(results.len());
    let mut all_records = Vec::new();
    for (stats, records) in results {
        per_sample.push(stats);
        all_records.extend(records);
    }

    let attacked: Vec<&SampleStats> = per_sample.iter().filter(|s| s.that_e.is_some()).collect();
    let t_e_mean = per_sample.iter().map(|s| s.t_e).sum::<f64>() / per_sample.len() as f64;
    let t_prime_e_mean =
        per_sample.iter().map(|s| s.t_prime_e).sum::<f64>() / per_sample.len() as f64;
    let t_c_deg_mean = per_sample
        .iter()
        .map(|s| to_degrees(s.t_c.min(2.0)).unwrap_or(180.0))
        .sum::<f64>()
        / per_sample.len() as f64;

    let that_e_mean = mean(&attacked.iter().filter_map(|s| s.that_e).collect::<Vec<_>>());
    let that_c_deg_mean = mean(
        &attacked
            .iter()
            .filter_map(|s| s.that_c)
            .map(|c| to_degrees(c.min(2.0)).unwrap_or(180.0))
            .collect::<Vec<_>>(),
    );
    let kendall_mean = mean(
        &attacked
            .iter()
            .filter_map(|s| s.kendall_mean)
            .collect::<Vec<_>>(),
    );
    let topk_mean = mean(
        &attacked
            .iter()
            .filter_map(|s| s.topk_mean)
            .collect::<Vec<_>>(),
    );

    let pct_outside_te = if attacked.is_empty() {
        0.0
    } else {
        100.0 * attacked.iter().filter(|s| s.outside_te).count() as f64 / attacked.len() as f64
    };
    let n_violations_tprime = per_sample.iter().map(|s| s.violations_tprime).sum();

    // Gap uses the generalized bound in l2 cases (the plain bound otherwise).
    let gaps: Vec<f64> = attacked
        .iter()
        .map(|s| {
            let bound = match cfg.norm {
                Norm::L2 => s.t_prime_e,
                Norm::Linf => s.t_e,
            };
            bound - s.that_e.unwrap()
        })
        .collect();
    let min_gap_r = gaps.iter().cloned().fold(None, |acc: Option<f64>, g| {
        Some(acc.map_or(g, |a| a.min(g)))
    });

    Ok((
        CampaignReport {
            model: String::new(),
            dataset: String::new(),
            norm: cfg.norm,
            epsilon: cfg.epsilon,
            method: method.name().to_string(),
            n_samples: data.len(),
            restarts: cfg.restarts,
            t_e_mean,
            t_prime_e_mean,
            t_c_deg_mean,
            that_e_mean,
            that_c_deg_mean,
            kendall_mean,
            topk_mean,
            pct_outside_te,
            n_violations_tprime,
            min_gap_r,
            gaps,
            per_sample,
        },
        all_records,
    ))
}

/// Serialize attack records as newline-delimited JSON.
pub fn records_to_ndjson(records: &[AttackRecord]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_blobs;
    use crate::net::{argmax, cross_entropy, train, Optimizer, TrainConfig};
    use ndarray::array;

    fn toy_cfg(norm: Norm, epsilon: f64, steps: usize) -> AttackConfig {
        AttackConfig {
            norm,
            epsilon,
            steps,
            step_size: None,
            restarts: 3,
            top_k: 2,
            seed: 11,
        }
    }

    fn trained_toy() -> (Model, Dataset) {
        let data = gen_blobs(80, 4, 3, 6.0, 5).unwrap();
        let model = Model::new_random(&[4, 8, 3], 3.0, 1);
        let cfg = TrainConfig {
            epochs: 30,
            batch_size: 16,
            learning_rate: 0.3,
            optimizer: Optimizer::Momentum,
            momentum: 0.9,
            seed: 2,
            adversarial: None,
        };
        (train(&model, &data, &cfg).unwrap(), data)
    }

    #[test]
    fn zero_epsilon_gives_zero_delta() {
        let (model, data) = trained_toy();
        let cfg = toy_cfg(Norm::L2, 0.0, 5);
        let d = pgd_l2(&model, &data.inputs[0], data.labels[0], &cfg, 7).unwrap();
        assert!(d.iter().all(|&v| v == 0.0));
        let cfg = toy_cfg(Norm::Linf, 0.0, 5);
        let d = ifia_linf(
            &model,
            &data.inputs[0],
            data.labels[0],
            &AttributionMethod::SaliencyMap,
            &cfg,
            7,
        )
        .unwrap();
        assert!(d.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn pgd_respects_ball_and_box_and_ascends() {
        let (model, data) = trained_toy();
        let cfg = toy_cfg(Norm::L2, 0.3, 20);
        let mut ascended = 0;
        let n = 30.min(data.len());
        for i in 0..n {
            let (x, y) = (&data.inputs[i], data.labels[i]);
            let d = pgd_l2(&model, x, y, &cfg, stable_hash(cfg.seed, i, 0)).unwrap();
            assert!(l2(&d) <= cfg.epsilon + 1e-9);
            let xp = x + &d;
            assert!(xp.iter().all(|&v| (-1e-9..=1.0 + 1e-9).contains(&v)));
            let l0 = cross_entropy(&model.forward(x).unwrap(), y).0;
            let l1 = cross_entropy(&model.forward(&xp).unwrap(), y).0;
            if l1 >= l0 {
                ascended += 1;
            }
        }
        assert!(
            ascended as f64 >= 0.95 * n as f64,
            "loss ascended in only {ascended}/{n} attacks"
        );
    }

    #[test]
    fn ifia_preserves_label_and_degrades_topk() {
        // Image-like inputs have many near-tied feature importances, which is
        // the regime the feature-importance attack targets.
        let data = crate::data::gen_digit_like(80, 8, 4, 5).unwrap();
        let model = {
            let init = Model::new_random(&[64, 16, 4], 4.0, 1);
            let cfg = TrainConfig {
                epochs: 30,
                batch_size: 16,
                learning_rate: 0.3,
                optimizer: Optimizer::Momentum,
                momentum: 0.9,
                seed: 2,
                adversarial: None,
            };
            train(&init, &data, &cfg).unwrap()
        };
        let mut cfg = toy_cfg(Norm::Linf, 0.05, 100);
        cfg.top_k = 5;
        let method = AttributionMethod::ig(16);
        let mut inters = Vec::new();
        for i in 0..20.min(data.len()) {
            let (x, y) = (&data.inputs[i], data.labels[i]);
            let d = ifia_linf(&model, x, y, &method, &cfg, stable_hash(cfg.seed, i, 0)).unwrap();
            assert!(d.iter().all(|&v| v.abs() <= cfg.epsilon + 1e-9));
            let xp = x + &d;
            assert!(xp.iter().all(|&v| (-1e-9..=1.0 + 1e-9).contains(&v)));
            assert_eq!(model.predict(&xp).unwrap(), model.predict(x).unwrap());
            let g0 = attribute(&model, x, y, &method).unwrap().values;
            let g1 = attribute(&model, &xp, y, &method).unwrap().values;
            inters.push(topk_intersection(&g0, &g1, cfg.top_k).unwrap());
        }
        inters.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = inters[inters.len() / 2];
        assert!(median < 1.0, "median top-k intersection {median} not degraded");
    }

    #[test]
    fn attacks_are_deterministic() {
        let (model, data) = trained_toy();
        let cfg = toy_cfg(Norm::L2, 0.2, 10);
        let s = stable_hash(cfg.seed, 3, 2);
        let d1 = pgd_l2(&model, &data.inputs[3], data.labels[3], &cfg, s).unwrap();
        let d2 = pgd_l2(&model, &data.inputs[3], data.labels[3], &cfg, s).unwrap();
        assert_eq!(d1, d2);
        assert_ne!(stable_hash(0, 1, 2), stable_hash(0, 2, 1));
    }

    #[test]
    fn campaign_zero_restarts_gives_certificates_only() {
        let (model, data) = trained_toy();
        let mut small = data.clone();
        small.truncate(5);
        let method = AttributionMethod::SaliencyMap;
        let mut cfg = toy_cfg(Norm::L2, 0.1, 5);
        cfg.restarts = 0;
        let certs: Vec<_> = (0..small.len())
            .map(|i| {
                crate::bounds::certify_sample(
                    &model,
                    &small.inputs[i],
                    small.labels[i],
                    i,
                    &method,
                    Norm::L2,
                    0.1,
                    false,
                )
                .unwrap()
            })
            .collect();
        let (report, records) = run_campaign(&model, &small, &cfg, &method, &certs).unwrap();
        assert!(records.is_empty());
        assert!(report.that_e_mean.is_none());
        assert!(report.min_gap_r.is_none());
        assert_eq!(report.n_violations_tprime, 0);
        assert!(report.t_e_mean > 0.0);
    }

    #[test]
    fn campaign_rejects_mismatched_certificates() {
        let (model, data) = trained_toy();
        let mut small = data.clone();
        small.truncate(3);
        let method = AttributionMethod::SaliencyMap;
        let cfg = toy_cfg(Norm::L2, 0.1, 5);
        let certs: Vec<_> = (0..small.len())
            .map(|i| {
                crate::bounds::certify_sample(
                    &model,
                    &small.inputs[i],
                    small.labels[i],
                    i,
                    &method,
                    Norm::L2,
                    0.2, // wrong epsilon
                    false,
                )
                .unwrap()
            })
            .collect();
        assert!(run_campaign(&model, &small, &cfg, &method, &certs).is_err());
    }

    #[test]
    fn campaign_no_tprime_violations_on_toy_model() {
        let (model, data) = trained_toy();
        let mut small = data.clone();
        small.truncate(20);
        let method = AttributionMethod::SaliencyMap;
        let cfg = toy_cfg(Norm::L2, 0.1, 20);
        let certs: Vec<_> = (0..small.len())
            .map(|i| {
                crate::bounds::certify_sample(
                    &model,
                    &small.inputs[i],
                    small.labels[i],
                    i,
                    &method,
                    Norm::L2,
                    cfg.epsilon,
                    false,
                )
                .unwrap()
            })
            .collect();
        let (report, records) = run_campaign(&model, &small, &cfg, &method, &certs).unwrap();
        assert_eq!(report.n_violations_tprime, 0);
        assert_eq!(records.len(), 20 * cfg.restarts);
        for r in &records {
            let d = Array1::from(r.delta.clone());
            assert!(l2(&d) <= cfg.epsilon + 1e-9);
            assert!(r.euclid_dist.is_finite() && r.kendall.is_finite());
        }
        if let Some(r) = report.min_gap_r {
            assert!(r > 0.0, "min gap {r} not positive");
        }
    }

    #[test]
    fn ndjson_round_trip() {
        let rec = AttackRecord {
            sample_id: 1,
            restart_id: 2,
            delta: vec![0.1, -0.2],
            label_preserved: true,
            euclid_dist: 0.5,
            cosine_dist: 0.01,
            kendall: 0.9,
            topk_intersection: 1.0,
        };
        let text = records_to_ndjson(&[rec.clone(), rec]).unwrap();
        assert_eq!(text.lines().count(), 2);
        let back: AttackRecord = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(back.sample_id, 1);
        assert_eq!(back.delta, vec![0.1, -0.2]);
    }

    #[test]
    fn config_validation() {
        let mut cfg = toy_cfg(Norm::L2, 0.1, 5);
        assert!(cfg.validate(4).is_ok());
        cfg.top_k = 9;
        assert!(cfg.validate(4).is_err());
        cfg.top_k = 2;
        cfg.steps = 0;
        assert!(cfg.validate(4).is_err());
    }

    #[test]
    fn linear_model_bound_is_never_violated() {
        // Single linear layer: attribution Jacobian is constant, c = 1, and
        // the spectral bound is the exact worst case.
        let model = Model {
            layers: vec![crate::net::Layer {
                weight: array![[1.0, -0.5, 0.2], [-0.3, 0.8, 0.1]],
                bias: array![0.05, -0.05],
            }],
            beta: 1.0,
        };
        let data = Dataset {
            inputs: vec![array![0.2, 0.8, 0.5], array![0.6, 0.1, 0.9]],
            labels: vec![argmax(&model.forward(&array![0.2, 0.8, 0.5]).unwrap()), 1],
            num_classes: 2,
        };
        let method = AttributionMethod::InputGrad;
        let cfg = AttackConfig {
            norm: Norm::L2,
            epsilon: 0.1,
            steps: 10,
            step_size: None,
            restarts: 4,
            top_k: 2,
            seed: 3,
        };
        let certs: Vec<_> = (0..data.len())
            .map(|i| {
                crate::bounds::certify_sample(
                    &model,
                    &data.inputs[i],
                    data.labels[i],
                    i,
                    &method,
                    Norm::L2,
                    cfg.epsilon,
                    false,
                )
                .unwrap()
            })
            .collect();
        let (report, _) = run_campaign(&model, &data, &cfg, &method, &certs).unwrap();
        for s in &report.per_sample {
            if let Some(e) = s.that_e {
                assert!(e <= s.t_e + 1e-12, "observed {e} above exact bound {}", s.t_e);
            }
        }
    }
}
