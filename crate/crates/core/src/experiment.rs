//! Runs a configured pipeline and writes its report bundle.
//!
//! Bundle layout in the output directory:
//! - `manifest.json`: config echo and hash, versions, wall times, file hashes
//! - `truth_<k>_<n>.csv`: truth snapshots (truth-only, or with `write_trajectories`)
//! - `reduced_<k>_<n>.csv`: lifted reduced snapshots (with `write_trajectories`)
//! - `certify_<k>.json`: estimator breakdowns at `parameters.solve[k]`
//! - `decay.csv`, `greedy.json`, `model.lrbms`: greedy results

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use log::info;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{build_problem, Mode, ProblemConfig, ReconstructionSpace};
use crate::error::Result;
use crate::estimator::{
    space_time_error, total_estimate, ApproximationSpace, EstimatorBreakdown, Indicator, IndicatorMode, NormEvaluator,
};
use crate::greedy::{run_greedy, write_decay_csv, GreedyRecord, GreedySettings};
use crate::reduction::{ReducedModel, Reductor};
use crate::truth::{Discretization, EllipticReconstructor, Trajectory};

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub name: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub mode: Mode,
    /// The effective config as TOML; parses back to the same config.
    pub config: String,
    pub config_sha256: String,
    pub seed: u64,
    pub versions: BTreeMap<String, String>,
    pub started_unix: u64,
    pub wall_seconds: BTreeMap<String, f64>,
    pub truth_dim: usize,
    pub files: Vec<FileEntry>,
}

/// Breakdowns of one certified parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub mu: f64,
    pub reduced_dim: usize,
    /// `‖p_h − lift(p_red)‖_{L²(0,T;|||·|||_μ̄)}` against the truth solution.
    pub truth_error: f64,
    pub estimates: BTreeMap<IndicatorMode, EstimatorBreakdown>,
    /// Configured total over `truth_error`, per indicator.
    pub effectivity: BTreeMap<IndicatorMode, f64>,
    pub oracle_over_surrogate: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct GreedySummary {
    training: Vec<f64>,
    test: Vec<f64>,
    log: Vec<GreedyRecord>,
    last: GreedyRecord,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Files written so far, removed again if the run fails.
struct Bundle {
    root: PathBuf,
    created_root: bool,
    files: Vec<FileEntry>,
}

impl Bundle {
    fn open(root: &Path) -> Result<Self> {
        let created_root = !root.exists();
        fs::create_dir_all(root)?;
        Ok(Self {
            root: root.to_path_buf(),
            created_root,
            files: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.root.join(name);
        // registered first so a failed write is cleaned up too
        self.files.push(FileEntry {
            name: name.to_string(),
            sha256: sha256_hex(bytes),
        });
        fs::write(path, bytes)?;
        Ok(())
    }

    fn discard(self) {
        for f in &self.files {
            let _ = fs::remove_file(self.root.join(&f.name));
        }
        let _ = fs::remove_file(self.root.join(MANIFEST_NAME));
        if self.created_root {
            let _ = fs::remove_dir(&self.root);
        }
    }
}

#[derive(Debug, Clone)]
pub struct Report {
    pub output_dir: PathBuf,
    pub manifest: Manifest,
    pub certificates: Vec<Certificate>,
    pub greedy: Option<(Vec<GreedyRecord>, GreedyRecord)>,
}

/// Executes `config.mode`. On error every file written by this run is removed.
pub fn run_experiment(config: &ProblemConfig) -> Result<Report> {
    config.validate()?;
    let mut bundle = Bundle::open(&config.output_dir)?;
    match run_into(config, &mut bundle) {
        Ok(report) => Ok(report),
        Err(e) => {
            bundle.discard();
            Err(e)
        }
    }
}

fn timed<T>(times: &mut BTreeMap<String, f64>, name: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let start = Instant::now();
    let out = f()?;
    times.insert(name.to_string(), start.elapsed().as_secs_f64());
    Ok(out)
}

fn run_into(config: &ProblemConfig, bundle: &mut Bundle) -> Result<Report> {
    let started_unix = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let mut times = BTreeMap::new();
    let echo = config.to_toml()?;
    let disc = timed(&mut times, "build", || build_problem(config))?;
    info!("truth space: {} DoFs, {} subdomains", disc.dim(), disc.mesh().num_subdomains());
    let anchors = config.anchors();
    let mut certificates = Vec::new();
    let mut greedy = None;

    if config.mode == Mode::TruthOnly {
        timed(&mut times, "truth", || {
            for (k, &mu) in config.parameters.solve.iter().enumerate() {
                let traj = disc.solve(mu)?;
                write_trajectory(bundle, &disc, &format!("truth_{k}"), &traj)?;
            }
            Ok(())
        })?;
    } else {
        let reductor = Reductor::new(&disc, anchors.mu_tilde)?;
        let mut model = timed(&mut times, "offline", || reductor.project(reductor.initial_bases()))?;
        if matches!(config.mode, Mode::Greedy | Mode::Full) {
            let settings = GreedySettings {
                training: config.training_set()?,
                test: config.test_set(),
                max_iterations: config.greedy.max_iterations,
                tolerance: config.greedy.tolerance,
                anchors,
            };
            let (state, last) = timed(&mut times, "greedy", || run_greedy(&reductor, model, settings))?;
            let mut csv = Vec::new();
            write_decay_csv(&mut csv, &echo, &state.log, &last)?;
            bundle.write("decay.csv", &csv)?;
            let summary = GreedySummary {
                training: state.settings.training.clone(),
                test: state.settings.test.clone(),
                log: state.log.clone(),
                last: last.clone(),
            };
            bundle.write("greedy.json", &serde_json::to_vec_pretty(&summary)?)?;
            let mut bin = Vec::new();
            state.model.save(&mut bin)?;
            bundle.write("model.lrbms", &bin)?;
            greedy = Some((state.log, last));
            model = state.model;
        }
        if matches!(config.mode, Mode::Certify | Mode::Full) {
            certificates = timed(&mut times, "certify", || certify_all(config, &disc, &model, bundle))?;
        }
    }

    let manifest = Manifest {
        mode: config.mode,
        config_sha256: sha256_hex(echo.as_bytes()),
        config: echo,
        seed: config.seed,
        versions: BTreeMap::from([
            ("lrbms".to_string(), env!("CARGO_PKG_VERSION").to_string()),
            ("model_format".to_string(), "1".to_string()),
        ]),
        started_unix,
        wall_seconds: times,
        truth_dim: disc.dim(),
        files: bundle.files.clone(),
    };
    fs::write(bundle.root.join(MANIFEST_NAME), serde_json::to_vec_pretty(&manifest)?)?;
    Ok(Report {
        output_dir: bundle.root.clone(),
        manifest,
        certificates,
        greedy,
    })
}

fn write_trajectory(bundle: &mut Bundle, disc: &Discretization, prefix: &str, traj: &Trajectory) -> Result<()> {
    for n in 0..traj.snapshots.len() {
        let mut csv = Vec::new();
        disc.space.write_csv(&traj.snapshot(n), &mut csv)?;
        bundle.write(&format!("{prefix}_{n:03}.csv"), &csv)?;
    }
    Ok(())
}

fn certify_all(
    config: &ProblemConfig,
    disc: &Discretization,
    model: &ReducedModel,
    bundle: &mut Bundle,
) -> Result<Vec<Certificate>> {
    let anchors = config.anchors();
    let modes = config.estimator.mode.modes();
    let reference = match (modes.contains(&IndicatorMode::Oracle), config.estimator.reconstruction) {
        (true, ReconstructionSpace::Refined) => Some(disc.refined(disc.time.steps)?),
        _ => None,
    };
    let (ref_disc, transfer) = match &reference {
        Some((d, t)) => (d, Some(t)),
        None => (disc, None),
    };
    let ref_norms = NormEvaluator::from_discretization(ref_disc);
    let norms = NormEvaluator::from_discretization(disc);
    let error_norm = norms.dg_matrix(anchors.mu_bar)?;
    let space = ApproximationSpace::reduced(model.basis_matrix(), &disc.ops.mass);

    let mut out = Vec::new();
    for (k, &mu) in config.parameters.solve.iter().enumerate() {
        let reduced = model.solve(mu)?;
        let lifted = model.lift_trajectory(&reduced)?;
        let truth = disc.solve(mu)?;
        let truth_error = space_time_error(&error_norm, &truth, &lifted)?;
        let mut estimates = BTreeMap::new();
        for &mode in &modes {
            let b = match mode {
                IndicatorMode::Surrogate => model.online_estimate(&reduced, mu, anchors, mode)?,
                IndicatorMode::Oracle => {
                    let rec = EllipticReconstructor::new(ref_disc, mu, transfer.cloned())?;
                    let indicator = Indicator::Oracle {
                        reconstructor: &rec,
                        norms: &ref_norms,
                    };
                    total_estimate(disc, &space, &lifted, mu, anchors, &indicator)?
                }
            };
            estimates.insert(mode, b);
        }
        let effectivity = estimates
            .iter()
            .map(|(m, b)| (*m, b.value(config.estimator.constant) / truth_error))
            .collect();
        let oracle_over_surrogate = match (
            estimates.get(&IndicatorMode::Oracle),
            estimates.get(&IndicatorMode::Surrogate),
        ) {
            (Some(o), Some(s)) => Some(o.value(config.estimator.constant) / s.value(config.estimator.constant)),
            _ => None,
        };
        let cert = Certificate {
            mu,
            reduced_dim: model.dim(),
            truth_error,
            estimates,
            effectivity,
            oracle_over_surrogate,
        };
        bundle.write(&format!("certify_{k}.json"), &serde_json::to_vec_pretty(&cert)?)?;
        if config.write_trajectories {
            write_trajectory(bundle, disc, &format!("truth_{k}"), &truth)?;
            write_trajectory(bundle, disc, &format!("reduced_{k}"), &lifted)?;
        }
        info!("certified mu = {mu}: error {truth_error:.3e}, estimates {:?}", cert.effectivity);
        out.push(cert);
    }
    Ok(out)
}
