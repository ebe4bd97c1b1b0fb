//! Experiment configuration and the synthetic channel problem.
//!
//! Configs are TOML. Every table and key is optional; unknown keys are
//! rejected. See `examples/configs/` for annotated files.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::Matrix2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{Anchors, ConstantVariant, IndicatorMode};
use crate::forms::{CoefficientField, ParameterSpec, DEFAULT_PENALTY};
use crate::grid::{Mesh, Point, Rect};
use crate::space::DgSpace;
use crate::truth::{Discretization, TimeGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    TruthOnly,
    Certify,
    Greedy,
    #[default]
    Full,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::TruthOnly => "truth-only",
            Mode::Certify => "certify",
            Mode::Greedy => "greedy",
            Mode::Full => "full",
        })
    }
}

/// Which indicator(s) a certification evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorSelection {
    Oracle,
    #[default]
    Surrogate,
    Both,
}

impl EstimatorSelection {
    pub fn modes(self) -> Vec<IndicatorMode> {
        match self {
            EstimatorSelection::Oracle => vec![IndicatorMode::Oracle],
            EstimatorSelection::Surrogate => vec![IndicatorMode::Surrogate],
            EstimatorSelection::Both => vec![IndicatorMode::Oracle, IndicatorMode::Surrogate],
        }
    }
}

impl FromStr for EstimatorSelection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "oracle" => Ok(EstimatorSelection::Oracle),
            "surrogate" => Ok(EstimatorSelection::Surrogate),
            "both" => Ok(EstimatorSelection::Both),
            other => Err(Error::Config(format!("unknown estimator selection '{other}'"))),
        }
    }
}

/// Where the oracle reconstruction is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReconstructionSpace {
    /// Conforming P1 on the truth mesh.
    #[default]
    Same,
    /// Conforming P1 on the once-refined mesh.
    Refined,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DomainConfig {
    pub x: [f64; 2],
    pub y: [f64; 2],
    pub fine_cells: [usize; 2],
    pub subdomains: [usize; 2],
}

impl Default for DomainConfig {
    fn default() -> Self {
        Self {
            x: [0.0, 5.0],
            y: [0.0, 1.0],
            fine_cells: [64, 16],
            subdomains: [4, 1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimeConfig {
    pub t_end: f64,
    pub steps: usize,
}

impl Default for TimeConfig {
    fn default() -> Self {
        Self { t_end: 0.05, steps: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParameterConfig {
    pub range: [f64; 2],
    /// Parameters for truth solves and certification.
    pub solve: Vec<f64>,
}

impl Default for ParameterConfig {
    fn default() -> Self {
        Self {
            range: [0.1, 1.0],
            solve: vec![0.1, 0.5, 0.9],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscretizationConfig {
    pub penalty: f64,
}

impl Default for DiscretizationConfig {
    fn default() -> Self {
        Self { penalty: DEFAULT_PENALTY }
    }
}

/// Synthetic permeability and channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FieldConfig {
    /// Smallest value of the isotropic `κ`.
    pub background: f64,
    /// `max κ / min κ` of the log-uniform random field, one value per fine cell.
    pub kappa_contrast: f64,
    /// `λ(0) = channel_contrast` inside the channel.
    pub channel_contrast: f64,
    pub channel_x: [f64; 2],
    pub channel_y: [f64; 2],
}

impl Default for FieldConfig {
    fn default() -> Self {
        Self {
            background: 1.0,
            kappa_contrast: 1e3,
            channel_contrast: 1e3,
            channel_x: [2.5, 5.0],
            channel_y: [0.4, 0.6],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Disc {
    pub center: [f64; 2],
    pub radius: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForcingConfig {
    pub discs: Vec<Disc>,
}

impl Default for ForcingConfig {
    fn default() -> Self {
        Self {
            discs: vec![
                Disc { center: [0.5, 0.5], radius: 0.2, value: 1.0 },
                Disc { center: [4.4, 0.2], radius: 0.2, value: -0.5 },
                Disc { center: [4.4, 0.8], radius: 0.2, value: -0.5 },
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorConfig {
    pub mode: EstimatorSelection,
    /// Anchors default to the lower end of the parameter range.
    pub mu_hat: Option<f64>,
    pub mu_bar: Option<f64>,
    pub mu_tilde: Option<f64>,
    pub reconstruction: ReconstructionSpace,
    pub constant: ConstantVariant,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            mode: EstimatorSelection::Surrogate,
            mu_hat: None,
            mu_bar: None,
            mu_tilde: None,
            reconstruction: ReconstructionSpace::Same,
            constant: ConstantVariant::Literal,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GreedyConfig {
    /// Number of training parameters, at the midpoints of equal cells.
    pub training: usize,
    /// Number of random test parameters.
    pub test: usize,
    pub max_iterations: usize,
    pub tolerance: Option<f64>,
}

impl Default for GreedyConfig {
    fn default() -> Self {
        Self {
            training: 10,
            test: 10,
            max_iterations: 8,
            tolerance: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProblemConfig {
    pub mode: Mode,
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Write snapshot CSVs in modes other than truth-only.
    pub write_trajectories: bool,
    pub domain: DomainConfig,
    pub time: TimeConfig,
    pub parameters: ParameterConfig,
    pub discretization: DiscretizationConfig,
    pub field: FieldConfig,
    pub forcing: ForcingConfig,
    pub estimator: EstimatorConfig,
    pub greedy: GreedyConfig,
}

impl Default for ProblemConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Full,
            seed: 0,
            output_dir: PathBuf::from("out"),
            write_trajectories: false,
            domain: DomainConfig::default(),
            time: TimeConfig::default(),
            parameters: ParameterConfig::default(),
            discretization: DiscretizationConfig::default(),
            field: FieldConfig::default(),
            forcing: ForcingConfig::default(),
            estimator: EstimatorConfig::default(),
            greedy: GreedyConfig::default(),
        }
    }
}

fn check(ok: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Config(msg()))
    }
}

impl ProblemConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.domain;
        check(d.x[1] > d.x[0] && d.y[1] > d.y[0], || format!("empty domain {:?} x {:?}", d.x, d.y))?;
        check(d.fine_cells.iter().chain(&d.subdomains).all(|&n| n > 0), || {
            "cell counts must be positive".into()
        })?;
        check(self.time.t_end > 0.0 && self.time.steps > 0, || {
            format!("need t_end > 0 and steps > 0, got {} and {}", self.time.t_end, self.time.steps)
        })?;
        let params = self.parameter_spec()?;
        for &mu in &self.parameters.solve {
            params.check(mu).map_err(|e| Error::Config(e.to_string()))?;
        }
        params.check_anchors(self.anchors())?;
        check(self.discretization.penalty >= 1.0, || {
            format!("penalty must be at least 1, got {}", self.discretization.penalty)
        })?;
        let f = &self.field;
        check(f.background > 0.0 && f.background.is_finite(), || {
            format!("background must be positive, got {}", f.background)
        })?;
        check(f.kappa_contrast >= 1.0 && f.channel_contrast >= 1.0, || {
            format!("contrasts must be at least 1, got {} and {}", f.kappa_contrast, f.channel_contrast)
        })?;
        check(f.channel_x[0] <= f.channel_x[1] && f.channel_y[0] <= f.channel_y[1], || {
            "channel bounds must be ordered".into()
        })?;
        for disc in &self.forcing.discs {
            check(disc.radius > 0.0 && disc.value.is_finite(), || format!("bad forcing disc {disc:?}"))?;
        }
        let g = &self.greedy;
        check(g.training > 0, || "greedy.training must be positive".into())?;
        check(g.tolerance.map_or(true, |t| t >= 0.0), || "greedy.tolerance must be nonnegative".into())?;
        Ok(())
    }

    pub fn parameter_spec(&self) -> Result<ParameterSpec> {
        let [a, b] = self.parameters.range;
        ParameterSpec::channel((a, b)).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn anchors(&self) -> Anchors {
        let low = self.parameters.range[0];
        let e = &self.estimator;
        Anchors {
            mu_hat: e.mu_hat.unwrap_or(low),
            mu_bar: e.mu_bar.unwrap_or(low),
            mu_tilde: e.mu_tilde.unwrap_or(low),
        }
    }

    pub fn training_set(&self) -> Result<Vec<f64>> {
        Ok(self.parameter_spec()?.midpoints(self.greedy.training))
    }

    /// Uniform random test parameters from a stream independent of the field's.
    pub fn test_set(&self) -> Vec<f64> {
        let [a, b] = self.parameters.range;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(1);
        (0..self.greedy.test).map(|_| rng.gen_range(a..=b)).collect()
    }
}

trait CheckAnchors {
    fn check_anchors(&self, anchors: Anchors) -> Result<()>;
}

impl CheckAnchors for ParameterSpec {
    fn check_anchors(&self, anchors: Anchors) -> Result<()> {
        anchors
            .check(self)
            .map_err(|e| Error::Config(format!("estimator anchors: {e}")))
    }
}

/// Isotropic log-uniform `κ`, constant on fine cells, scaled so that its
/// minimum is `background` and its maximum `background · contrast`.
pub fn random_permeability(mesh: &Mesh, background: f64, contrast: f64, seed: u64) -> Vec<Matrix2<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u: Vec<f64> = (0..mesh.num_cells()).map(|_| rng.gen::<f64>()).collect();
    let (lo, hi) = u.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    let mut kappa = vec![Matrix2::identity() * background; mesh.num_triangles()];
    if hi > lo && contrast > 1.0 {
        for (cell, &v) in u.iter().enumerate() {
            let value = background * contrast.powf((v - lo) / (hi - lo));
            for t in mesh.cell_triangles(cell) {
                kappa[t] = Matrix2::identity() * value;
            }
        }
    }
    kappa
}

fn inside(p: Point, x: [f64; 2], y: [f64; 2]) -> bool {
    p[0] >= x[0] && p[0] <= x[1] && p[1] >= y[0] && p[1] <= y[1]
}

/// Piecewise constant source: the sum of the disc values at `p`.
pub fn forcing_value(discs: &[Disc], p: Point) -> f64 {
    discs
        .iter()
        .filter(|d| (p[0] - d.center[0]).hypot(p[1] - d.center[1]) <= d.radius)
        .map(|d| d.value)
        .sum()
}

/// Mesh, fields and data of the configured problem, assembled.
pub fn build_problem(config: &ProblemConfig) -> Result<Discretization> {
    config.validate()?;
    let d = &config.domain;
    let domain = Rect::new(d.x[0], d.x[1], d.y[0], d.y[1]);
    let mesh = Arc::new(Mesh::build(
        domain,
        (d.fine_cells[0], d.fine_cells[1]),
        (d.subdomains[0], d.subdomains[1]),
    )?);
    let space = DgSpace::new(mesh);
    let m = space.mesh();
    let f = &config.field;
    let kappa = random_permeability(m, f.background, f.kappa_contrast, config.seed);
    let channel = m
        .triangles
        .iter()
        .map(|t| {
            if inside(t.centroid, f.channel_x, f.channel_y) {
                f.channel_contrast - 1.0
            } else {
                0.0
            }
        })
        .collect();
    let fields = CoefficientField::new(kappa, vec![vec![1.0; m.num_triangles()], channel])?;
    let source = space.interpolate_per_triangle(|t, _| forcing_value(&config.forcing.discs, m.triangles[t].centroid))?;
    let p0 = space.zeros();
    Discretization::new(
        space,
        fields,
        config.parameter_spec()?,
        config.discretization.penalty,
        source,
        p0,
        TimeGrid::new(config.time.t_end, config.time.steps)?,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ProblemConfig {
        let mut c = ProblemConfig::default();
        c.domain.fine_cells = [10, 2];
        c.domain.subdomains = [2, 1];
        c
    }

    #[test]
    fn defaults_parse_from_empty_file() {
        assert_eq!(ProblemConfig::from_toml("").unwrap(), ProblemConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(ProblemConfig::from_toml("colour = 1"), Err(Error::Config(_))));
        assert!(matches!(ProblemConfig::from_toml("[time]\nstep = 3"), Err(Error::Config(_))));
    }

    #[test]
    fn invalid_values_are_config_errors() {
        for text in [
            "[field]\nkappa_contrast = 0.5",
            "[time]\nsteps = 0",
            "[domain]\nfine_cells = [10, 3]\nsubdomains = [1, 2]",
            "[estimator]\nmu_bar = 2.0",
            "[parameters]\nsolve = [0.05]",
            "[discretization]\npenalty = 0.5",
        ] {
            let r = ProblemConfig::from_toml(text).and_then(|c| build_problem(&c).map(|_| ()));
            assert!(matches!(r, Err(Error::Config(_))), "{text}: {r:?}");
        }
    }

    #[test]
    fn echo_reparses_to_the_same_config() {
        let mut c = tiny();
        c.greedy.tolerance = Some(1e-3);
        c.estimator.mu_bar = Some(0.25);
        c.field.kappa_contrast = 1e6;
        let back = ProblemConfig::from_toml(&c.to_toml().unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn unit_contrast_gives_constant_kappa() {
        let mut c = tiny();
        c.field.kappa_contrast = 1.0;
        c.field.background = 2.5;
        let d = build_problem(&c).unwrap();
        assert!(d.fields.kappa.iter().all(|k| *k == Matrix2::identity() * 2.5));
    }

    #[test]
    fn kappa_spans_the_contrast_and_is_seeded() {
        let c = tiny();
        let d = build_problem(&c).unwrap();
        let v: Vec<f64> = d.fields.kappa.iter().map(|k| k[(0, 0)]).collect();
        let (lo, hi) = v.iter().fold((f64::INFINITY, 0.0f64), |(l, h), &x| (l.min(x), h.max(x)));
        assert!((lo - 1.0).abs() < 1e-12 && (hi - 1e3).abs() < 1e-9);
        assert_eq!(build_problem(&c).unwrap().fields.kappa, d.fields.kappa);
        let mut other = c.clone();
        other.seed = 7;
        assert_ne!(build_problem(&other).unwrap().fields.kappa, d.fields.kappa);
    }

    #[test]
    fn channel_vanishes_at_mu_one() {
        let mut c = tiny();
        c.domain.fine_cells = [10, 10];
        let d = build_problem(&c).unwrap();
        let theta = d.params.coefficients(1.0).unwrap();
        for t in 0..d.mesh().num_triangles() {
            assert_eq!(d.fields.lambda_at(t, &theta), 1.0);
        }
        let theta = d.params.coefficients(0.1).unwrap();
        let max = (0..d.mesh().num_triangles()).map(|t| d.fields.lambda_at(t, &theta)).fold(0.0, f64::max);
        assert!((max - (1.0 + 0.9 * 999.0)).abs() < 1e-9);
    }

    #[test]
    fn source_balance_matches_the_discs() {
        let mut c = ProblemConfig::default();
        c.domain.fine_cells = [160, 32];
        c.field.kappa_contrast = 1.0;
        c.forcing.discs[1].value = -0.25;
        let d = build_problem(&c).unwrap();
        let total: f64 = d.rhs.iter().sum();
        let area = std::f64::consts::PI * 0.2 * 0.2;
        let expected = area * (1.0 - 0.25 - 0.5);
        assert!((total - expected).abs() < 0.05 * area, "{total} vs {expected}");
    }

    #[test]
    fn test_set_is_seeded_and_inside_the_range() {
        let c = tiny();
        let t = c.test_set();
        assert_eq!(t.len(), 10);
        assert!(t.iter().all(|&m| (0.1..=1.0).contains(&m)));
        assert_eq!(c.test_set(), t);
        assert_eq!(c.training_set().unwrap().len(), 10);
    }
}
