//! End-to-end harness: data generation, training, certification, attack
//! campaigns, reporting and diagnostics, driven by a JSON run manifest.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attack::{records_to_ndjson, run_campaign, AttackConfig, CampaignReport};
use crate::attrib::{attribute, attribution_jacobian, diag_dominance, AttributionMethod};
use crate::bounds::{certify_sample, eta, BoundCertificate};
use crate::data::{
    gen_blobs, gen_digit_like, load_idx_dataset, save_dataset, write_idx_images, write_idx_labels,
    Dataset,
};
use crate::error::{Error, Result};
use crate::net::{accuracy, train, Model, TrainConfig};
use crate::numkit::{l2, Norm};

// --- Run manifest -----------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSpec {
    /// Synthetic Gaussian blobs in the unit box.
    Blobs {
        n: usize,
        d: usize,
        classes: usize,
        separation: f64,
        seed: u64,
    },
    /// Synthetic digit-like images, written/read through the IDX format.
    Digits {
        n: usize,
        side: usize,
        classes: usize,
        seed: u64,
    },
    /// IDX image/label pair on disk (the standard handwritten-digit layout).
    Idx {
        images: PathBuf,
        labels: PathBuf,
        #[serde(default)]
        subset: Option<usize>,
        #[serde(default = "default_downscale")]
        downscale: usize,
    },
}

fn default_downscale() -> usize {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelSpec {
    /// Layer widths, input first, logits last.
    pub dims: Vec<usize>,
    pub beta: f64,
    pub init_seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CertifySpec {
    pub norm: Norm,
    pub epsilons: Vec<f64>,
    pub method: AttributionMethod,
    #[serde(default)]
    pub label_constrained: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub dataset: DatasetSpec,
    pub model: ModelSpec,
    pub train: TrainConfig,
    pub attack: AttackConfig,
    pub certify: CertifySpec,
    #[serde(default = "default_out")]
    pub output_dir: PathBuf,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Structural(format!("{}: {e}", path.display())))?;
        let cfg: RunConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.certify.epsilons.is_empty() {
            return Err(Error::Structural("config: epsilon list is empty".into()));
        }
        if self.model.dims.len() < 2 {
            return Err(Error::Structural(
                "config: model needs at least input and output widths".into(),
            ));
        }
        if let DatasetSpec::Idx { images, labels, .. } = &self.dataset {
            for p in [images, labels] {
                if !p.exists() {
                    return Err(Error::Structural(format!(
                        "config: referenced path {} does not exist",
                        p.display()
                    )));
                }
            }
        }
        Ok(())
    }

    fn dataset_name(&self) -> String {
        match &self.dataset {
            DatasetSpec::Blobs { n, d, classes, .. } => format!("blobs-n{n}-d{d}-c{classes}"),
            DatasetSpec::Digits { n, side, classes, .. } => {
                format!("digits-n{n}-s{side}-c{classes}")
            }
            DatasetSpec::Idx { images, .. } => images
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "idx".into()),
        }
    }

    fn model_name(&self) -> String {
        let dims: Vec<String> = self.model.dims.iter().map(|d| d.to_string()).collect();
        format!("mlp-{}", dims.join("x"))
    }
}

/// Materialize the configured dataset (generating synthetic data in memory).
pub fn load_configured_dataset(cfg: &RunConfig) -> Result<Dataset> {
    match &cfg.dataset {
        DatasetSpec::Blobs {
            n,
            d,
            classes,
            separation,
            seed,
        } => gen_blobs(*n, *d, *classes, *separation, *seed),
        DatasetSpec::Digits {
            n,
            side,
            classes,
            seed,
        } => gen_digit_like(*n, *side, *classes, *seed),
        DatasetSpec::Idx {
            images,
            labels,
            subset,
            downscale,
        } => load_idx_dataset(images, labels, *subset, *downscale),
    }
}

// --- Command line -----------------------------------------------------------

#[derive(Parser, Debug)]
#[command(
    name = "attrcert",
    about = "Certified bounds on attribution deviations under norm-bounded input perturbations"
)]
pub struct Cli {
    /// JSON run manifest.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override every seed in the manifest.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for certification/attack fan-out.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Override the manifest output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write the configured synthetic dataset to the output directory.
    GenData,
    /// Train the configured model and write its JSON file.
    Train,
    /// Compute per-sample certificates for every configured epsilon.
    Certify,
    /// Attack each certified sample and write campaign reports.
    Attack,
    /// Collate campaign reports into a CSV table and JSON summary.
    Report,
    /// Emit local-linearity and curvature diagnostics.
    Validate,
}

/// Entry point used by `main`; returns the process exit code.
pub fn run(cli: Cli) -> Result<()> {
    if let Some(w) = cli.workers {
        // A later global pool request is harmless if one already exists.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(w).build_global();
    }
    let config_path = cli
        .config
        .ok_or_else(|| Error::Structural("missing --config".into()))?;
    let mut cfg = RunConfig::load(&config_path)?;
    if let Some(seed) = cli.seed {
        cfg.train.seed = seed;
        cfg.attack.seed = seed;
    }
    if let Some(out) = cli.out {
        cfg.output_dir = out;
    }
    fs::create_dir_all(&cfg.output_dir)?;
    match cli.command {
        Command::GenData => cmd_gen_data(&cfg),
        Command::Train => cmd_train(&cfg),
        Command::Certify => cmd_certify(&cfg),
        Command::Attack => cmd_attack(&cfg),
        Command::Report => cmd_report(&cfg),
        Command::Validate => cmd_validate(&cfg),
    }
}

fn eps_tag(eps: f64) -> String {
    format!("{eps:.4}").replace('.', "p")
}

fn model_path(cfg: &RunConfig) -> PathBuf {
    cfg.output_dir.join("model.json")
}

fn certs_path(cfg: &RunConfig, eps: f64) -> PathBuf {
    cfg.output_dir
        .join(format!("certs_{}_{}.ndjson", cfg.certify.norm, eps_tag(eps)))
}

fn campaign_path(cfg: &RunConfig, eps: f64) -> PathBuf {
    cfg.output_dir
        .join(format!("campaign_{}_{}.json", cfg.certify.norm, eps_tag(eps)))
}

pub fn cmd_gen_data(cfg: &RunConfig) -> Result<()> {
    match &cfg.dataset {
        DatasetSpec::Blobs { .. } => {
            let data = load_configured_dataset(cfg)?;
            let path = cfg.output_dir.join("dataset.json");
            save_dataset(&data, &path)?;
            println!("wrote {} ({} samples)", path.display(), data.len());
        }
        DatasetSpec::Digits { side, .. } => {
            let data = load_configured_dataset(cfg)?;
            let images = cfg.output_dir.join("images.idx");
            let labels = cfg.output_dir.join("labels.idx");
            write_idx_images(&images, &data.inputs, *side, *side)?;
            write_idx_labels(&labels, &data.labels)?;
            println!(
                "wrote {} and {} ({} samples)",
                images.display(),
                labels.display(),
                data.len()
            );
        }
        DatasetSpec::Idx { .. } => {
            return Err(Error::Structural(
                "gen-data: dataset is already on disk (idx spec)".into(),
            ));
        }
    }
    Ok(())
}

pub fn cmd_train(cfg: &RunConfig) -> Result<()> {
    let data = load_configured_dataset(cfg)?;
    if data.dim() != cfg.model.dims[0] {
        return Err(Error::Structural(format!(
            "train: dataset dim {} != model input width {}",
            data.dim(),
            cfg.model.dims[0]
        )));
    }
    let init = Model::new_random(&cfg.model.dims, cfg.model.beta, cfg.model.init_seed);
    let model = train(&init, &data, &cfg.train)?;
    let acc = accuracy(&model, &data)?;
    let path = model_path(cfg);
    model.save(&path)?;
    println!("wrote {} (train accuracy {acc:.4})", path.display());
    Ok(())
}

/// Certify every sample at a given epsilon, fanning out across workers and
/// writing records in sample order.
pub fn certify_all(
    model: &Model,
    data: &Dataset,
    spec: &CertifySpec,
    eps: f64,
) -> Result<Vec<BoundCertificate>> {
    (0..data.len())
        .into_par_iter()
        .map(|i| {
            certify_sample(
                model,
                &data.inputs[i],
                data.labels[i],
                i,
                &spec.method,
                spec.norm,
                eps,
                spec.label_constrained,
            )
        })
        .collect()
}

pub fn cmd_certify(cfg: &RunConfig) -> Result<()> {
    let model = Model::load(&model_path(cfg))?;
    let data = load_configured_dataset(cfg)?;
    for &eps in &cfg.certify.epsilons {
        let certs = certify_all(&model, &data, &cfg.certify, eps)?;
        let mut text = String::new();
        for c in &certs {
            text.push_str(&serde_json::to_string(c)?);
            text.push('\n');
        }
        let path = certs_path(cfg, eps);
        fs::write(&path, text)?;
        println!("wrote {} ({} certificates)", path.display(), certs.len());
    }
    Ok(())
}

fn read_certs(path: &Path) -> Result<Vec<BoundCertificate>> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Structural(format!("{}: {e}", path.display())))?;
    text.lines()
        .map(|line| serde_json::from_str(line).map_err(Error::from))
        .collect()
}

pub fn cmd_attack(cfg: &RunConfig) -> Result<()> {
    let model = Model::load(&model_path(cfg))?;
    let data = load_configured_dataset(cfg)?;
    for &eps in &cfg.certify.epsilons {
        let certs = read_certs(&certs_path(cfg, eps))?;
        let mut attack_cfg = cfg.attack.clone();
        attack_cfg.norm = cfg.certify.norm;
        attack_cfg.epsilon = eps;
        let (mut report, records) =
            run_campaign(&model, &data, &attack_cfg, &cfg.certify.method, &certs)?;
        report.model = cfg.model_name();
        report.dataset = cfg.dataset_name();
        let path = campaign_path(cfg, eps);
        fs::write(&path, serde_json::to_string_pretty(&report)?)?;
        let rec_path = cfg
            .output_dir
            .join(format!("records_{}_{}.ndjson", cfg.certify.norm, eps_tag(eps)));
        fs::write(&rec_path, records_to_ndjson(&records)?)?;
        println!(
            "wrote {} ({} samples, {} violations of the generalized bound)",
            path.display(),
            report.n_samples,
            report.n_violations_tprime
        );
    }
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_else(|| "na".into())
}

/// Build the summary CSV for a set of campaign reports.
pub fn report_csv(reports: &[CampaignReport]) -> String {
    let mut csv = String::from(
        "model,dataset,norm,epsilon,method,That_e,T_e_mean,Tprime_e_mean,pct_outside_Te,\
         That_c_deg,T_c_deg_mean,kendall_mean,min_gap_r,n_violations_Tprime\n",
    );
    for r in reports {
        csv.push_str(&format!(
            "{},{},{},{:.6},{},{},{:.6},{:.6},{:.4},{},{:.6},{},{},{}\n",
            r.model,
            r.dataset,
            r.norm,
            r.epsilon,
            r.method,
            fmt_opt(r.that_e_mean),
            r.t_e_mean,
            r.t_prime_e_mean,
            r.pct_outside_te,
            fmt_opt(r.that_c_deg_mean),
            r.t_c_deg_mean,
            fmt_opt(r.kendall_mean),
            fmt_opt(r.min_gap_r),
            r.n_violations_tprime
        ));
    }
    csv
}

/// Fixed-width histogram of per-sample gaps, as CSV rows.
pub fn gap_histogram_csv(reports: &[CampaignReport], bins: usize) -> String {
    let mut csv = String::from("norm,epsilon,bin_lo,bin_hi,count\n");
    for r in reports {
        if r.gaps.is_empty() {
            continue;
        }
        let lo = r.gaps.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = r.gaps.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let width = ((hi - lo) / bins as f64).max(1e-12);
        let mut counts = vec![0usize; bins];
        for &g in &r.gaps {
            let b = (((g - lo) / width) as usize).min(bins - 1);
            counts[b] += 1;
        }
        for (b, &c) in counts.iter().enumerate() {
            csv.push_str(&format!(
                "{},{:.6},{:.6},{:.6},{}\n",
                r.norm,
                r.epsilon,
                lo + b as f64 * width,
                lo + (b + 1) as f64 * width,
                c
            ));
        }
    }
    csv
}

pub fn cmd_report(cfg: &RunConfig) -> Result<()> {
    let mut reports = Vec::new();
    for &eps in &cfg.certify.epsilons {
        let path = campaign_path(cfg, eps);
        let text = fs::read_to_string(&path)
            .map_err(|e| Error::Structural(format!("{}: {e}", path.display())))?;
        reports.push(serde_json::from_str::<CampaignReport>(&text)?);
    }
    if reports.is_empty() {
        return Err(Error::Structural("report: no campaign files".into()));
    }
    let csv_path = cfg.output_dir.join("report.csv");
    fs::write(&csv_path, report_csv(&reports))?;
    let gaps_path = cfg.output_dir.join("gap_histogram.csv");
    fs::write(&gaps_path, gap_histogram_csv(&reports, 20))?;
    let summary_path = cfg.output_dir.join("summary.json");
    fs::write(&summary_path, serde_json::to_string_pretty(&reports)?)?;
    println!(
        "wrote {}, {}, {}",
        csv_path.display(),
        gaps_path.display(),
        summary_path.display()
    );
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Diagnostics {
    /// `(epsilon, mean eta)` rows, epsilon strictly increasing; eta measured
    /// at a deterministic corner of each linf epsilon-box.
    pub eta_curve: Vec<(f64, f64)>,
    pub mean_attr_norm: f64,
    pub diag_dominance_mean: f64,
    /// Max abs residual between the analytic curvature matrix and a central
    /// finite difference of the input gradient.
    pub hessian_fd_residual: f64,
}

pub fn diagnostics(
    model: &Model,
    data: &Dataset,
    method: &AttributionMethod,
    epsilons: &[f64],
    n_probe: usize,
) -> Result<Diagnostics> {
    let n = n_probe.min(data.len());
    let mut eps_sorted: Vec<f64> = epsilons.to_vec();
    eps_sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    eps_sorted.dedup();

    let mut eta_curve = Vec::new();
    for &eps in &eps_sorted {
        let mut total = 0.0;
        for i in 0..n {
            let x = &data.inputs[i];
            // Deterministic corner: push every pixel toward mid-gray.
            let delta = x.mapv(|v| if v > 0.5 { -eps } else { eps });
            total += eta(model, x, data.labels[i], method, &delta)?;
        }
        eta_curve.push((eps, total / n as f64));
    }

    let mut norm_total = 0.0;
    let mut dom_total = 0.0;
    let mut fd_res: f64 = 0.0;
    for i in 0..n {
        let x = &data.inputs[i];
        let y = data.labels[i];
        norm_total += l2(&attribute(model, x, y, method)?.values);
        dom_total += diag_dominance(&attribution_jacobian(model, x, y, method)?)?;
        if i < 3 {
            fd_res = fd_res.max(hessian_fd_max_residual(model, x, y)?);
        }
    }

    Ok(Diagnostics {
        eta_curve,
        mean_attr_norm: norm_total / n as f64,
        diag_dominance_mean: dom_total / n as f64,
        hessian_fd_residual: fd_res,
    })
}

fn hessian_fd_max_residual(model: &Model, x: &crate::numkit::Vector, y: usize) -> Result<f64> {
    let h = model.hessian_logit(x, y)?;
    let step = 1e-5;
    let mut worst: f64 = 0.0;
    for j in 0..x.len() {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[j] += step;
        xm[j] -= step;
        let gp = model.grad_logit(&xp, y)?;
        let gm = model.grad_logit(&xm, y)?;
        for i in 0..x.len() {
            let fd = (gp[i] - gm[i]) / (2.0 * step);
            worst = worst.max((h[[i, j]] - fd).abs());
        }
    }
    Ok(worst)
}

pub fn cmd_validate(cfg: &RunConfig) -> Result<()> {
    let model = Model::load(&model_path(cfg))?;
    let data = load_configured_dataset(cfg)?;
    let diag = diagnostics(&model, &data, &cfg.certify.method, &cfg.certify.epsilons, 20)?;
    let path = cfg.output_dir.join("diagnostics.json");
    fs::write(&path, serde_json::to_string_pretty(&diag)?)?;
    println!(
        "wrote {} (mean eta at largest eps {:.6}, mean |g| {:.6})",
        path.display(),
        diag.eta_curve.last().map(|p| p.1).unwrap_or(0.0),
        diag.mean_attr_norm
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example_config(dir: &Path) -> RunConfig {
        RunConfig {
            dataset: DatasetSpec::Blobs {
                n: 40,
                d: 4,
                classes: 2,
                separation: 6.0,
                seed: 9,
            },
            model: ModelSpec {
                dims: vec![4, 6, 2],
                beta: 4.0,
                init_seed: 1,
            },
            train: TrainConfig {
                epochs: 15,
                batch_size: 8,
                learning_rate: 0.5,
                optimizer: crate::net::Optimizer::Momentum,
                momentum: 0.9,
                seed: 2,
                adversarial: None,
            },
            attack: AttackConfig {
                norm: Norm::L2,
                epsilon: 0.1,
                steps: 5,
                step_size: None,
                restarts: 2,
                top_k: 2,
                seed: 3,
            },
            certify: CertifySpec {
                norm: Norm::L2,
                epsilons: vec![0.1],
                method: AttributionMethod::SaliencyMap,
                label_constrained: false,
            },
            output_dir: dir.to_path_buf(),
        }
    }

    #[test]
    fn config_round_trip_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = example_config(dir.path());
        let path = dir.path().join("cfg.json");
        fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
        let loaded = RunConfig::load(&path).unwrap();
        assert_eq!(loaded.certify.epsilons, vec![0.1]);

        let mut bad = cfg;
        bad.certify.epsilons.clear();
        assert!(bad.validate().is_err());
    }

    #[test]
    fn full_pipeline_runs_end_to_end() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = example_config(dir.path());
        cmd_gen_data(&cfg).unwrap();
        cmd_train(&cfg).unwrap();
        cmd_certify(&cfg).unwrap();
        cmd_attack(&cfg).unwrap();
        cmd_report(&cfg).unwrap();
        cmd_validate(&cfg).unwrap();
        let csv = fs::read_to_string(dir.path().join("report.csv")).unwrap();
        assert_eq!(csv.lines().count(), 2);
        assert!(csv.starts_with("model,dataset,norm,epsilon,method,That_e"));
        let diag: Diagnostics =
            serde_json::from_str(&fs::read_to_string(dir.path().join("diagnostics.json")).unwrap())
                .unwrap();
        assert_eq!(diag.eta_curve.len(), 1);
        assert!(diag.hessian_fd_residual < 1e-4);
    }

    #[test]
    fn pct_outside_matches_hand_count() {
        // Five synthetic per-sample stats: 2 of 5 above their T_e.
        use crate::attack::SampleStats;
        let mk = |id: usize, t_e: f64, that: f64| SampleStats {
            sample_id: id,
            t_e,
            t_prime_e: t_e * 1.1,
            t_c: 0.1,
            n_records: 1,
            n_label_preserved: 1,
            that_e: Some(that),
            that_c: Some(0.01),
            kendall_mean: Some(0.9),
            topk_mean: Some(1.0),
            that_e_all: Some(that),
            outside_te: that > t_e,
            violations_tprime: 0,
        };
        let stats = [
            mk(0, 1.0, 0.5),
            mk(1, 1.0, 1.2),
            mk(2, 1.0, 0.9),
            mk(3, 1.0, 1.01),
            mk(4, 1.0, 0.2),
        ];
        let outside = stats.iter().filter(|s| s.outside_te).count();
        assert_eq!(outside, 2);
        assert_eq!(100.0 * outside as f64 / stats.len() as f64, 40.0);
    }

    #[test]
    fn digits_gen_data_round_trips_through_idx() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = example_config(dir.path());
        cfg.dataset = DatasetSpec::Digits {
            n: 12,
            side: 8,
            classes: 3,
            seed: 4,
        };
        cmd_gen_data(&cfg).unwrap();
        let loaded = load_idx_dataset(
            &dir.path().join("images.idx"),
            &dir.path().join("labels.idx"),
            None,
            1,
        )
        .unwrap();
        assert_eq!(loaded.len(), 12);
        assert_eq!(loaded.dim(), 64);
    }
}
