//! End-to-end runs: the binary's exit codes and the greedy loop on a small problem.

mod common;

use std::process::Command;

use lrbms::config::build_problem;
use lrbms::estimator::{space_time_error, Anchors, NormEvaluator};
use lrbms::greedy::{greedy_step, run_greedy, GreedySettings, GreedyState, StepOutcome};
use lrbms::reduction::Reductor;

use common::unit_square_config;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_lrbms"))
}

fn write_config(dir: &std::path::Path, body: &str) -> std::path::PathBuf {
    let path = dir.join("config.toml");
    std::fs::write(&path, body).unwrap();
    path
}

const SMALL: &str = r#"
[domain]
x = [0.0, 1.0]
fine_cells = [8, 8]
subdomains = [2, 1]

[field]
channel_x = [0.5, 1.0]
channel_y = [0.35, 0.65]

[[forcing.discs]]
center = [0.3, 0.5]
radius = 0.2
value = 1.0

[greedy]
training = 4
test = 2
max_iterations = 2
"#;

#[test]
fn binary_succeeds_on_every_verb() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMALL);
    for verb in ["solve", "certify", "greedy", "full"] {
        let out = dir.path().join(verb);
        let status = bin()
            .args([verb, "--config"])
            .arg(&config)
            .arg("--out")
            .arg(&out)
            .args(["--estimator", "both", "--seed", "5"])
            .env("RUST_LOG", "warn")
            .status()
            .unwrap();
        assert_eq!(status.code(), Some(0), "{verb}");
        assert!(out.join("manifest.json").is_file(), "{verb}");
    }
}

#[test]
fn config_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let missing = bin().args(["solve", "--config", "/nonexistent/config.toml"]).status().unwrap();
    assert_eq!(missing.code(), Some(2));

    let unknown = write_config(dir.path(), "[domain]\nfine_cels = [4, 4]\n");
    let status = bin().arg("solve").arg("--config").arg(&unknown).status().unwrap();
    assert_eq!(status.code(), Some(2));

    // θ₂(1) = 0 has no norm equivalence with the anchors
    let incompatible = write_config(dir.path(), &format!("{SMALL}\n[parameters]\nsolve = [1.0]\n"));
    let out = dir.path().join("incompatible");
    let status = bin().arg("certify").arg("--config").arg(&incompatible).arg("--out").arg(&out).status().unwrap();
    assert_eq!(status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn numerical_failure_exits_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &format!("{SMALL}\n[discretization]\npenalty = 1.0\n"));
    let status = bin()
        .arg("solve")
        .arg("--config")
        .arg(&config)
        .arg("--out")
        .arg(dir.path().join("out"))
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(3));
}

fn settings(training: Vec<f64>, iterations: usize) -> GreedySettings {
    GreedySettings {
        training,
        test: vec![0.33, 0.77],
        max_iterations: iterations,
        tolerance: None,
        anchors: Anchors::uniform(0.1),
    }
}

#[test]
fn greedy_is_deterministic() {
    let disc = build_problem(&unit_square_config([8, 8], [2, 2])).unwrap();
    let reductor = Reductor::new(&disc, 0.1).unwrap();
    let run = || {
        let model = reductor.project(reductor.initial_bases()).unwrap();
        let (state, last) = run_greedy(&reductor, model, settings(vec![0.2, 0.5, 0.8], 3)).unwrap();
        (state.log, last, state.model.mass, state.model.rhs)
    };
    assert_eq!(run(), run());
}

#[test]
fn greedy_keeps_constants_and_reduces_the_error() {
    let disc = build_problem(&unit_square_config([8, 8], [2, 1])).unwrap();
    let reductor = Reductor::new(&disc, 0.1).unwrap();
    let norm = NormEvaluator::from_discretization(&disc).dg_matrix(0.1).unwrap();
    let training = vec![0.15, 0.45, 0.75];
    let truths: Vec<_> = training.iter().map(|&mu| disc.solve(mu).unwrap()).collect();
    let mut state = GreedyState {
        model: reductor.project(reductor.initial_bases()).unwrap(),
        settings: settings(training.clone(), 3),
        log: Vec::new(),
    };
    let max_error = |state: &GreedyState| {
        training
            .iter()
            .zip(&truths)
            .map(|(&mu, t)| {
                let m = &state.model;
                space_time_error(&norm, t, &m.lift_trajectory(&m.solve(mu).unwrap()).unwrap()).unwrap()
            })
            .fold(0.0, f64::max)
    };
    let mut errors = vec![max_error(&state)];
    for _ in 0..3 {
        let before = state.model.basis_sizes();
        match greedy_step(&reductor, &mut state).unwrap() {
            StepOutcome::Extended(_) => {}
            StepOutcome::Stopped(_) => break,
        }
        let after = state.model.basis_sizes();
        assert!(after.iter().zip(&before).all(|(a, b)| a >= b && a - b <= 1));
        errors.push(max_error(&state));
    }
    assert!(errors.len() > 1);
    assert!(errors.last().unwrap() < &errors[0], "{errors:?}");
    for basis in &state.model.bases {
        let ones = nalgebra::DVector::from_element(basis.dofs.len(), 1.0);
        let g = reductor.local_product(basis.subdomain);
        assert!(g.quadratic(&basis.projection_error(&ones, &g)).sqrt() <= 1e-10);
    }
}
