//! Experiment configuration, scenario pipelines and reproducible records.
//!
//! A run writes, per scenario, `<scenario>.ndjson` (one JSON record per line, each carrying
//! the config hash and module versions; the first embeds the resolved config),
//! `<scenario>_summary.csv` (`stage,key,value`) and binary field snapshots.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::cone_sac::{
    band_annihilation_check, lipschitz_samples, monitor_pairs, prepared_lipschitz, sac_estimate,
    sac_estimate_with_scalar, sac_samples, zero_mean_audit, ConeCoefficients, ConeForm, ConeSummary,
    ConeTrace, PowerOptions,
};
use crate::cutoff::{CutoffSpec, StationaryContext};
use crate::error::{Error, Result};
use crate::evolution::{
    estimate_absorbing_radius, evolve, stokes_spectrum, AbstractModel, AbstractNonlinearity, FieldModel,
    RadiusEstimate, RadiusOptions, RecordSpec,
};
use crate::gap_search::{
    check_abstract_gap, enumerate_levels, find_annulus, find_gap_2d, gap_growth, AnnulusCertificate,
    AnnulusOptions, AnnulusSearch, GapSearch,
};
use crate::manifold::{base_grid, build_chart, invariance_check, measure_tracking, Manifold, ManifoldOptions};
use crate::operators::BandProjectorSpec;
use crate::spectral_field::{random_field, write_snapshot, GridSpec, SpectralField};
use crate::stationary::{solve_stationary, StationaryOptions};

/// Named pipelines.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    Gaps,
    Annulus,
    Stationary,
    Evolve,
    Radius,
    ConeCheck,
    SacCheck,
    Manifold,
    InertialForm,
    Tracking,
    Full2d,
    Full3d,
}

impl Scenario {
    pub const ALL: [Scenario; 12] = [
        Scenario::Gaps,
        Scenario::Annulus,
        Scenario::Stationary,
        Scenario::Evolve,
        Scenario::Radius,
        Scenario::ConeCheck,
        Scenario::SacCheck,
        Scenario::Manifold,
        Scenario::InertialForm,
        Scenario::Tracking,
        Scenario::Full2d,
        Scenario::Full3d,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Scenario::Gaps => "gaps",
            Scenario::Annulus => "annulus",
            Scenario::Stationary => "stationary",
            Scenario::Evolve => "evolve",
            Scenario::Radius => "radius",
            Scenario::ConeCheck => "cone-check",
            Scenario::SacCheck => "sac-check",
            Scenario::Manifold => "manifold",
            Scenario::InertialForm => "inertial-form",
            Scenario::Tracking => "tracking",
            Scenario::Full2d => "full2d",
            Scenario::Full3d => "full3d",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|s| s.name() == name)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForcingConfig {
    /// `||f||_H`.
    pub amplitude: f64,
    /// Decay exponent of the random forcing field.
    pub decay: f64,
    pub seed: u64,
}

impl Default for ForcingConfig {
    fn default() -> Self {
        Self {
            amplitude: 0.005,
            decay: 3.0,
            seed: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub dim: usize,
    pub nu: f64,
    /// Defaults to `1` for `d = 2` and `5/4` for `d = 3`.
    pub theta: Option<f64>,
    pub forcing: ForcingConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            dim: 2,
            nu: 1.0,
            theta: None,
            forcing: ForcingConfig::default(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    /// Defaults to `32` for `d = 2` and `8` for `d = 3`.
    pub max_mode: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProjectorConfig {
    /// Explicit `lambda_N`.
    pub lambda_n: Option<i64>,
    /// Explicit `N`, which must be a cumulative eigenvalue count.
    pub modes: Option<usize>,
    /// Band half-width.
    pub k: f64,
}

impl Default for ProjectorConfig {
    fn default() -> Self {
        Self {
            lambda_n: None,
            modes: None,
            k: 0.5,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Empirical {
    Empirical,
}

/// Truncation radius, or `"empirical"` for the absorbing-radius estimate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CutoffChoice {
    Radius(f64),
    Empirical(Empirical),
}

impl Default for CutoffChoice {
    fn default() -> Self {
        CutoffChoice::Radius(0.005)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub zero_mean: f64,
    pub chart_lipschitz: f64,
    /// Changes under `T` doubling below this are not required to halve.
    pub doubling_floor: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            zero_mean: 1e-15,
            chart_lipschitz: 1.05,
            doubling_floor: 1e-12,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvolveConfig {
    pub t_end: f64,
    pub dt: f64,
    /// `||w(0)||_H`.
    pub init_norm: f64,
    pub init_decay: f64,
}

impl Default for EvolveConfig {
    fn default() -> Self {
        Self {
            t_end: 1.0,
            dt: 1e-2,
            init_norm: 0.01,
            init_decay: 3.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GapsConfig {
    pub lipschitz: Vec<f64>,
    pub lambda_max: i64,
    pub growth_dims: Vec<usize>,
    pub growth_bounds: Vec<i64>,
}

impl Default for GapsConfig {
    fn default() -> Self {
        Self {
            lipschitz: vec![1.0, 2.0],
            lambda_max: 100_000,
            growth_dims: vec![2, 3],
            growth_bounds: vec![100, 1_000, 10_000],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnnulusConfig {
    pub b: f64,
    pub lambda_start: i64,
    pub budget: usize,
    pub c_hat: f64,
    pub require_nonempty: bool,
}

impl Default for AnnulusConfig {
    fn default() -> Self {
        let o = AnnulusOptions::default();
        Self {
            b: 3.0,
            lambda_start: 2,
            budget: 200,
            c_hat: o.c_hat,
            require_nonempty: o.require_nonempty,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConeConfig {
    /// Pairs on the abstract model.
    pub pairs: usize,
    pub t_end: f64,
    pub dt: f64,
    /// Pairs on the prepared field model.
    pub field_pairs: usize,
    pub field_t_end: f64,
    pub field_dt: f64,
}

impl Default for ConeConfig {
    fn default() -> Self {
        Self {
            pairs: 100,
            t_end: 0.2,
            dt: 1e-3,
            field_pairs: 4,
            field_t_end: 0.5,
            field_dt: 1e-2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SacConfig {
    pub samples: usize,
    pub power: PowerOptions,
    /// Subtract the fitted scalar on the band.
    pub with_scalar: bool,
}

impl Default for SacConfig {
    fn default() -> Self {
        Self {
            samples: 4,
            power: PowerOptions::default(),
            with_scalar: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ManifoldConfig {
    pub dt: f64,
    pub bvp_tol: f64,
    pub tol: f64,
    pub t_initial: f64,
    pub t_max: f64,
    pub max_iterations: usize,
    pub fd_step: f64,
    /// Base coordinates varied by the chart.
    pub axes: Vec<usize>,
    /// Half-width of the chart; defaults to three times the truncation radius.
    pub extent: Option<f64>,
    /// Points per axis.
    pub count: usize,
    /// States sampled for the empirical Lipschitz constant.
    pub lipschitz_samples: usize,
    pub inertial_t_end: f64,
    /// Defaults to `dt`.
    pub inertial_dt: Option<f64>,
    pub tracking_horizon: f64,
    pub tracking_seeds: usize,
    /// `||u(0)||_H` of the tracked trajectories.
    pub tracking_init_norm: f64,
}

impl Default for ManifoldConfig {
    fn default() -> Self {
        let o = ManifoldOptions::default();
        Self {
            dt: 0.05,
            bvp_tol: o.bvp_tol,
            tol: o.tol,
            t_initial: o.t_initial,
            t_max: o.t_max,
            max_iterations: o.max_iterations,
            fd_step: o.fd_step,
            axes: vec![0, 1],
            extent: None,
            count: 5,
            lipschitz_samples: 8,
            inertial_t_end: 1.0,
            inertial_dt: None,
            tracking_horizon: 4.0,
            tracking_seeds: 3,
            tracking_init_norm: 0.01,
        }
    }
}

impl ManifoldConfig {
    pub fn options(&self) -> ManifoldOptions {
        ManifoldOptions {
            dt: self.dt,
            bvp_tol: self.bvp_tol,
            tol: self.tol,
            t_initial: self.t_initial,
            t_max: self.t_max,
            max_iterations: self.max_iterations,
            fd_step: self.fd_step,
        }
    }
}

/// Abstract model `du/dt + nu A^{1+alpha} u + A^alpha F(u) = 0` on the 2D Stokes spectrum
/// with `F(u) = L M sin(u)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AbstractConfig {
    pub alpha: f64,
    pub nu: f64,
    pub lambda_max: i64,
    pub lipschitz: f64,
    pub seed: u64,
    pub lambda_n: i64,
}

impl Default for AbstractConfig {
    fn default() -> Self {
        Self {
            alpha: 0.25,
            nu: 1.0,
            lambda_max: 20,
            lipschitz: 1.0,
            seed: 3,
            lambda_n: 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenarios: Vec<Scenario>,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub model: ModelConfig,
    pub grid: GridConfig,
    pub projector: ProjectorConfig,
    pub cutoff: CutoffChoice,
    pub record: RecordSpec,
    pub tolerances: Tolerances,
    pub stationary: StationaryOptions,
    pub evolve: EvolveConfig,
    pub radius: RadiusOptions,
    pub gaps: GapsConfig,
    pub annulus: AnnulusConfig,
    pub cone: ConeConfig,
    pub sac: SacConfig,
    pub manifold: ManifoldConfig,
    pub abstract_model: AbstractConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scenarios: Vec::new(),
            seed: 0,
            output_dir: PathBuf::from("imlab-out"),
            model: ModelConfig::default(),
            grid: GridConfig::default(),
            projector: ProjectorConfig::default(),
            cutoff: CutoffChoice::default(),
            record: RecordSpec::default(),
            tolerances: Tolerances::default(),
            stationary: StationaryOptions::default(),
            evolve: EvolveConfig::default(),
            radius: RadiusOptions::default(),
            gaps: GapsConfig::default(),
            annulus: AnnulusConfig::default(),
            cone: ConeConfig::default(),
            sac: SacConfig::default(),
            manifold: ManifoldConfig::default(),
            abstract_model: AbstractConfig::default(),
        }
    }
}

fn positive(errors: &mut Vec<String>, field: &str, x: f64) {
    if !(x > 0.0 && x.is_finite()) {
        errors.push(format!("{field}: must be positive (got {x})"));
    }
}

fn nonnegative(errors: &mut Vec<String>, field: &str, x: f64) {
    if !(x >= 0.0 && x.is_finite()) {
        errors.push(format!("{field}: must be nonnegative (got {x})"));
    }
}

impl ExperimentConfig {
    pub fn theta(&self) -> f64 {
        self.model.theta.unwrap_or(if self.model.dim == 3 { 1.25 } else { 1.0 })
    }

    pub fn max_mode(&self) -> usize {
        self.grid.max_mode.unwrap_or(if self.model.dim == 3 { 8 } else { 32 })
    }

    /// Every violated constraint, each naming its field.
    pub fn validate(&self) -> Vec<String> {
        let mut e = Vec::new();
        let mut seen = Vec::new();
        for s in &self.scenarios {
            if seen.contains(s) {
                e.push(format!("scenarios: `{}` listed twice", s.name()));
            }
            seen.push(*s);
        }
        let m = &self.model;
        let dim_ok = matches!(m.dim, 2 | 3);
        if !dim_ok {
            e.push(format!("model.dim: must be 2 or 3 (got {})", m.dim));
        }
        positive(&mut e, "model.nu", m.nu);
        if let Some(theta) = m.theta {
            if m.dim == 3 && theta != 1.25 {
                e.push(format!("model.theta: 3D requires θ = 5/4 per model scope (got {theta})"));
            }
            if m.dim == 2 && theta != 1.0 {
                e.push(format!("model.theta: 2D requires θ = 1 per model scope (got {theta})"));
            }
        }
        nonnegative(&mut e, "model.forcing.amplitude", m.forcing.amplitude);
        nonnegative(&mut e, "model.forcing.decay", m.forcing.decay);
        if dim_ok {
            if let Err(err) = GridSpec::new(m.dim, self.max_mode()) {
                e.push(format!("grid.max_mode: {err}"));
            }
        }
        positive(&mut e, "projector.k", self.projector.k);
        if self.projector.lambda_n.is_some() && self.projector.modes.is_some() {
            e.push("projector: give at most one of `lambda_n` and `modes`".into());
        }
        if let Some(l) = self.projector.lambda_n {
            if l < 1 {
                e.push(format!("projector.lambda_n: must be at least 1 (got {l})"));
            }
        }
        if self.projector.modes == Some(0) {
            e.push("projector.modes: must be positive".into());
        }
        if let CutoffChoice::Radius(r) = self.cutoff {
            positive(&mut e, "cutoff", r);
        }
        positive(&mut e, "record.blowup_norm", self.record.blowup_norm);
        positive(&mut e, "tolerances.zero_mean", self.tolerances.zero_mean);
        positive(&mut e, "tolerances.chart_lipschitz", self.tolerances.chart_lipschitz);
        nonnegative(&mut e, "tolerances.doubling_floor", self.tolerances.doubling_floor);
        positive(&mut e, "stationary.tol", self.stationary.tol);
        positive(&mut e, "stationary.damping", self.stationary.damping);
        nonnegative(&mut e, "evolve.t_end", self.evolve.t_end);
        positive(&mut e, "evolve.dt", self.evolve.dt);
        nonnegative(&mut e, "evolve.init_norm", self.evolve.init_norm);
        nonnegative(&mut e, "evolve.init_decay", self.evolve.init_decay);
        let r = &self.radius;
        if r.ensemble_size == 0 {
            e.push("radius.ensemble_size: must be positive".into());
        }
        positive(&mut e, "radius.dt", r.dt);
        nonnegative(&mut e, "radius.burn_in", r.burn_in);
        if !(r.horizon >= r.burn_in) {
            e.push(format!("radius.horizon: must be at least burn_in (got {})", r.horizon));
        }
        positive(&mut e, "radius.safety_factor", r.safety_factor);
        nonnegative(&mut e, "radius.init_norm", r.init_norm);
        if self.gaps.lipschitz.is_empty() {
            e.push("gaps.lipschitz: must not be empty".into());
        }
        for l in &self.gaps.lipschitz {
            positive(&mut e, "gaps.lipschitz", *l);
        }
        if self.gaps.lambda_max < 2 {
            e.push(format!("gaps.lambda_max: must be at least 2 (got {})", self.gaps.lambda_max));
        }
        if self.gaps.growth_dims.iter().any(|d| !matches!(d, 2 | 3)) {
            e.push("gaps.growth_dims: entries must be 2 or 3".into());
        }
        if self.gaps.growth_bounds.iter().any(|&b| b < 2) {
            e.push("gaps.growth_bounds: entries must be at least 2".into());
        }
        positive(&mut e, "annulus.b", self.annulus.b);
        positive(&mut e, "annulus.c_hat", self.annulus.c_hat);
        if self.annulus.lambda_start < 2 {
            e.push("annulus.lambda_start: must be at least 2".into());
        }
        if self.annulus.budget == 0 {
            e.push("annulus.budget: must be positive".into());
        }
        positive(&mut e, "cone.t_end", self.cone.t_end);
        positive(&mut e, "cone.dt", self.cone.dt);
        positive(&mut e, "cone.field_t_end", self.cone.field_t_end);
        positive(&mut e, "cone.field_dt", self.cone.field_dt);
        if self.sac.samples == 0 {
            e.push("sac.samples: must be positive".into());
        }
        if self.sac.power.iterations == 0 || self.sac.power.restarts == 0 {
            e.push("sac.power: iterations and restarts must be positive".into());
        }
        let mf = &self.manifold;
        positive(&mut e, "manifold.dt", mf.dt);
        positive(&mut e, "manifold.bvp_tol", mf.bvp_tol);
        positive(&mut e, "manifold.tol", mf.tol);
        positive(&mut e, "manifold.t_initial", mf.t_initial);
        if !(mf.t_max >= mf.t_initial) {
            e.push(format!("manifold.t_max: must be at least t_initial (got {})", mf.t_max));
        }
        positive(&mut e, "manifold.fd_step", mf.fd_step);
        if mf.max_iterations == 0 {
            e.push("manifold.max_iterations: must be positive".into());
        }
        if mf.axes.is_empty() {
            e.push("manifold.axes: must not be empty".into());
        }
        if let Some(x) = mf.extent {
            positive(&mut e, "manifold.extent", x);
        }
        if mf.count == 0 {
            e.push("manifold.count: must be positive".into());
        }
        if mf.lipschitz_samples == 0 {
            e.push("manifold.lipschitz_samples: must be positive".into());
        }
        positive(&mut e, "manifold.inertial_t_end", mf.inertial_t_end);
        if let Some(x) = mf.inertial_dt {
            positive(&mut e, "manifold.inertial_dt", x);
        }
        positive(&mut e, "manifold.tracking_horizon", mf.tracking_horizon);
        positive(&mut e, "manifold.tracking_init_norm", mf.tracking_init_norm);
        let a = &self.abstract_model;
        if !(a.alpha > 0.0 && a.alpha < 1.0) {
            e.push(format!("abstract_model.alpha: must lie in (0, 1) (got {})", a.alpha));
        }
        positive(&mut e, "abstract_model.nu", a.nu);
        nonnegative(&mut e, "abstract_model.lipschitz", a.lipschitz);
        if a.lambda_max < 2 {
            e.push("abstract_model.lambda_max: must be at least 2".into());
        }
        if !(a.lambda_n >= 1 && a.lambda_n < a.lambda_max) {
            e.push(format!("abstract_model.lambda_n: must lie in [1, lambda_max) (got {})", a.lambda_n));
        }
        e
    }

    /// Fills every default that depends on other fields.
    pub fn resolved(mut self) -> Self {
        self.model.theta = Some(self.theta());
        self.grid.max_mode = Some(self.max_mode());
        if self.manifold.extent.is_none() {
            if let CutoffChoice::Radius(r) = self.cutoff {
                self.manifold.extent = Some(3.0 * r);
            }
        }
        if self.manifold.inertial_dt.is_none() {
            self.manifold.inertial_dt = Some(self.manifold.dt);
        }
        self
    }

    /// Hex SHA-256 of the compact JSON serialization.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

/// Parses, validates and resolves a JSON config; unknown keys are errors.
pub fn validate_config(text: &str) -> std::result::Result<ExperimentConfig, Vec<String>> {
    let value: Value = serde_json::from_str(text).map_err(|e| vec![format!("parse: {e}")])?;
    validate_value(value)
}

pub fn validate_value(value: Value) -> std::result::Result<ExperimentConfig, Vec<String>> {
    let config: ExperimentConfig = serde_json::from_value(value).map_err(|e| vec![e.to_string()])?;
    let errors = config.validate();
    if errors.is_empty() {
        Ok(config.resolved())
    } else {
        Err(errors)
    }
}

/// Short command-line names for config keys.
pub const OVERRIDE_ALIASES: [(&str, &str); 8] = [
    ("N", "projector.modes"),
    ("grid", "grid.max_mode"),
    ("tol", "manifold.tol"),
    ("nu", "model.nu"),
    ("dim", "model.dim"),
    ("theta", "model.theta"),
    ("out", "output_dir"),
    ("seed", "seed"),
];

/// Sets the dotted `key` (or an alias) in `config` to `raw`, read as JSON when it parses
/// and as a string otherwise. Dashes in key segments map to underscores.
pub fn apply_override(config: &mut Value, key: &str, raw: &str) -> std::result::Result<(), String> {
    let key = OVERRIDE_ALIASES
        .iter()
        .find(|(a, _)| *a == key)
        .map(|(_, k)| k.to_string())
        .unwrap_or_else(|| key.replace('-', "_"));
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = config;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if part.is_empty() {
            return Err(format!("{key}: empty key segment"));
        }
        if !node.is_object() {
            if node.is_null() {
                *node = Value::Object(Default::default());
            } else {
                return Err(format!("{key}: `{}` is not a table", parts[..i].join(".")));
            }
        }
        let map = node.as_object_mut().expect("object");
        if i + 1 == parts.len() {
            map.insert(part.to_string(), value);
            return Ok(());
        }
        node = map.entry(part.to_string()).or_insert(Value::Null);
    }
    Ok(())
}

/// Crate version for each module that contributes records.
pub fn module_versions() -> BTreeMap<&'static str, &'static str> {
    let v = env!("CARGO_PKG_VERSION");
    [
        "spectral_field",
        "operators",
        "cutoff",
        "stationary",
        "evolution",
        "gap_search",
        "cone_sac",
        "manifold",
        "harness",
    ]
    .into_iter()
    .map(|m| (m, v))
    .collect()
}

#[derive(Serialize)]
struct Record<'a, D: Serialize> {
    kind: &'a str,
    scenario: &'a str,
    config_hash: &'a str,
    versions: &'a BTreeMap<&'static str, &'static str>,
    data: D,
}

struct Recorder {
    scenario: Scenario,
    hash: String,
    versions: BTreeMap<&'static str, &'static str>,
    lines: Vec<u8>,
    count: usize,
    summary: Vec<(String, String, String)>,
    snapshots: Vec<(String, Vec<u8>)>,
}

impl Recorder {
    fn new(scenario: Scenario, hash: &str) -> Self {
        Self {
            scenario,
            hash: hash.to_string(),
            versions: module_versions(),
            lines: Vec::new(),
            count: 0,
            summary: Vec::new(),
            snapshots: Vec::new(),
        }
    }

    fn record(&mut self, kind: &str, data: impl Serialize) -> Result<()> {
        let r = Record {
            kind,
            scenario: self.scenario.name(),
            config_hash: &self.hash,
            versions: &self.versions,
            data,
        };
        serde_json::to_writer(&mut self.lines, &r)?;
        self.lines.push(b'\n');
        self.count += 1;
        Ok(())
    }

    fn summary(&mut self, stage: &str, key: &str, value: impl ToString) {
        self.summary.push((stage.to_string(), key.to_string(), value.to_string()));
    }

    fn snapshot(&mut self, name: &str, field: &SpectralField<f64>) -> Result<()> {
        let mut bytes = Vec::new();
        write_snapshot(field, &mut bytes)?;
        self.snapshots.push((format!("{}_{name}.snap", self.scenario.name()), bytes));
        Ok(())
    }
}

/// One stage summary row: `(stage, key, value)`.
pub type SummaryRow = (String, String, String);

/// Output of one scenario.
#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioOutput {
    pub scenario: Scenario,
    pub records: usize,
    pub summary: Vec<SummaryRow>,
    pub files: Vec<PathBuf>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunReport {
    pub config_hash: String,
    pub outputs: Vec<ScenarioOutput>,
}

/// Runs every configured scenario in parallel and writes its records under `output_dir`.
pub fn run_scenario(config: &ExperimentConfig) -> Result<RunReport> {
    let errors = config.validate();
    if !errors.is_empty() {
        return Err(Error::Config(errors));
    }
    let config = config.clone().resolved();
    let hash = config.hash();
    if !config.scenarios.is_empty() {
        std::fs::create_dir_all(&config.output_dir)?;
    }
    let outputs = config
        .scenarios
        .par_iter()
        .map(|&s| run_one(&config, s, &hash))
        .collect::<Result<Vec<_>>>()?;
    Ok(RunReport {
        config_hash: hash,
        outputs,
    })
}

fn run_one(config: &ExperimentConfig, scenario: Scenario, hash: &str) -> Result<ScenarioOutput> {
    let mut rec = Recorder::new(scenario, hash);
    rec.record("config", config)?;
    let mut lab = Lab::new(config, scenario)?;
    match scenario {
        Scenario::Gaps => lab.gaps(&mut rec)?,
        Scenario::Annulus => {
            lab.annulus(&mut rec)?;
        }
        Scenario::Stationary => {
            lab.stationary(&mut rec)?;
        }
        Scenario::Evolve => lab.evolve(&mut rec)?,
        Scenario::Radius => {
            lab.radius(&mut rec)?;
        }
        Scenario::ConeCheck => lab.cone(&mut rec)?,
        Scenario::SacCheck => lab.sac(&mut rec)?,
        Scenario::Manifold => lab.manifold(&mut rec)?,
        Scenario::InertialForm => lab.inertial_form(&mut rec)?,
        Scenario::Tracking => lab.tracking(&mut rec)?,
        Scenario::Full2d => {
            lab.require_dim(2)?;
            lab.stationary(&mut rec)?;
            lab.radius(&mut rec)?;
            lab.evolve(&mut rec)?;
            lab.projector(&mut rec)?;
            lab.cone(&mut rec)?;
            lab.manifold(&mut rec)?;
            lab.inertial_form(&mut rec)?;
        }
        Scenario::Full3d => {
            lab.require_dim(3)?;
            lab.stationary(&mut rec)?;
            lab.radius(&mut rec)?;
            lab.evolve(&mut rec)?;
            lab.annulus(&mut rec)?;
            lab.sac(&mut rec)?;
        }
    }
    write_outputs(config, rec)
}

fn write_outputs(config: &ExperimentConfig, rec: Recorder) -> Result<ScenarioOutput> {
    let dir = &config.output_dir;
    let name = rec.scenario.name();
    let mut files = Vec::new();
    let ndjson = dir.join(format!("{name}.ndjson"));
    std::fs::write(&ndjson, &rec.lines)?;
    files.push(ndjson);
    let csv_path = dir.join(format!("{name}_summary.csv"));
    let mut w = csv::Writer::from_path(&csv_path).map_err(csv_error)?;
    w.write_record(["stage", "key", "value"]).map_err(csv_error)?;
    for row in &rec.summary {
        w.write_record([&row.0, &row.1, &row.2]).map_err(csv_error)?;
    }
    w.flush()?;
    files.push(csv_path);
    for (file, bytes) in &rec.snapshots {
        let p = dir.join(file);
        std::fs::write(&p, bytes)?;
        files.push(p);
    }
    Ok(ScenarioOutput {
        scenario: rec.scenario,
        records: rec.count,
        summary: rec.summary,
        files,
    })
}

fn csv_error(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

fn staged<R>(scenario: Scenario, stage: &str, r: Result<R>) -> Result<R> {
    r.map_err(|e| Error::Stage {
        stage: format!("{}/{stage}", scenario.name()),
        source: Box::new(e),
    })
}

#[derive(Serialize)]
struct StationaryData<'a> {
    forcing_norm: f64,
    v_norm: f64,
    v_norm_h9_2: f64,
    report: &'a crate::stationary::StationaryReport,
}

#[derive(Serialize)]
struct GapData {
    source: &'static str,
    lipschitz: Option<f64>,
    spec: BandProjectorSpec,
}

#[derive(Serialize)]
struct PairData {
    pair: usize,
    starts_outside: bool,
    stays_outside: bool,
    invariance_violations: usize,
    residual_violations: usize,
    max_residual_excess: f64,
    squeeze_rate: Option<f64>,
}

fn pair_data(traces: &[ConeTrace]) -> Vec<PairData> {
    traces
        .iter()
        .enumerate()
        .map(|(i, t)| PairData {
            pair: i,
            starts_outside: t.starts_outside(),
            stays_outside: t.stays_outside(),
            invariance_violations: t.invariance_violations.len(),
            residual_violations: t.residual_violations.len(),
            max_residual_excess: t.max_residual_excess(),
            squeeze_rate: t.squeeze.map(|s| s.theta),
        })
        .collect()
}

/// Stage runner with results shared between the stages of one scenario.
struct Lab<'c> {
    cfg: &'c ExperimentConfig,
    scenario: Scenario,
    grid: GridSpec,
    stationary: Option<StationaryContext<f64>>,
    radius: Option<RadiusEstimate>,
    cutoff: Option<CutoffSpec>,
    lipschitz: Option<f64>,
    spec: Option<BandProjectorSpec>,
    annulus: Option<AnnulusCertificate>,
}

impl<'c> Lab<'c> {
    fn new(cfg: &'c ExperimentConfig, scenario: Scenario) -> Result<Self> {
        Ok(Self {
            cfg,
            scenario,
            grid: GridSpec::new(cfg.model.dim, cfg.max_mode())?,
            stationary: None,
            radius: None,
            cutoff: None,
            lipschitz: None,
            spec: None,
            annulus: None,
        })
    }

    fn stage<R>(&self, stage: &str, r: Result<R>) -> Result<R> {
        staged(self.scenario, stage, r)
    }

    fn require_dim(&self, dim: usize) -> Result<()> {
        if self.cfg.model.dim != dim {
            return Err(Error::invalid(
                "model.dim",
                format!("scenario `{}` needs d = {dim}", self.scenario.name()),
            ));
        }
        Ok(())
    }

    fn scaled_field(&self, seed: u64, decay: f64, norm: f64) -> Result<SpectralField<f64>> {
        let f = random_field::<f64>(&self.grid, seed, decay)?;
        let n = f.norm();
        Ok(if n > 0.0 { f.scaled(norm / n) } else { f })
    }

    fn stationary(&mut self, rec: &mut Recorder) -> Result<StationaryContext<f64>> {
        if let Some(c) = &self.stationary {
            return Ok(c.clone());
        }
        let m = &self.cfg.model;
        let f = self.scaled_field(m.forcing.seed, m.forcing.decay, m.forcing.amplitude)?;
        let (ctx, report) = self.stage(
            "stationary",
            solve_stationary(&f, self.cfg.theta(), m.nu, &self.cfg.stationary),
        )?;
        rec.record(
            "stationary",
            StationaryData {
                forcing_norm: f.norm(),
                v_norm: ctx.v.norm(),
                v_norm_h9_2: ctx.v.sobolev_norm(4.5),
                report: &report,
            },
        )?;
        rec.summary("stationary", "final_residual", report.final_residual);
        rec.summary("stationary", "v_norm", ctx.v.norm());
        rec.snapshot("stationary", &ctx.v)?;
        self.stationary = Some(ctx.clone());
        Ok(ctx)
    }

    fn radius(&mut self, rec: &mut Recorder) -> Result<RadiusEstimate> {
        if let Some(r) = &self.radius {
            return Ok(r.clone());
        }
        let ctx = self.stationary(rec)?;
        let model = FieldModel::difference(ctx)?;
        let mut opts = self.cfg.radius.clone();
        opts.seed = opts.seed.wrapping_add(self.cfg.seed);
        let est = self.stage("radius", estimate_absorbing_radius(&model, &opts))?;
        rec.record("radius", &est)?;
        rec.summary("radius", "radius", est.radius);
        rec.summary("radius", "sup_norm", est.sup_norm);
        self.radius = Some(est.clone());
        Ok(est)
    }

    fn cutoff(&mut self, rec: &mut Recorder) -> Result<CutoffSpec> {
        if let Some(c) = self.cutoff {
            return Ok(c);
        }
        let (c, source) = match self.cfg.cutoff {
            CutoffChoice::Radius(r) => (CutoffSpec::new(r)?, "config"),
            CutoffChoice::Empirical(_) => {
                let est = self.radius(rec)?;
                (self.stage("cutoff", CutoffSpec::new(est.radius))?, "empirical")
            }
        };
        rec.record("cutoff", serde_json::json!({ "radius": c.radius, "source": source }))?;
        rec.summary("cutoff", "radius", c.radius);
        self.cutoff = Some(c);
        Ok(c)
    }

    fn prepared(&mut self, rec: &mut Recorder) -> Result<FieldModel<f64>> {
        let ctx = self.stationary(rec)?;
        let cutoff = self.cutoff(rec)?;
        FieldModel::prepared(ctx, cutoff)
    }

    fn evolve(&mut self, rec: &mut Recorder) -> Result<()> {
        let model = self.prepared(rec)?;
        let e = &self.cfg.evolve;
        let w0 = self.scaled_field(self.cfg.seed.wrapping_add(101), e.init_decay, e.init_norm)?;
        let (w, traj) = self.stage("evolve", evolve(&model, &w0, e.t_end, e.dt, &self.cfg.record))?;
        for s in &traj.samples {
            rec.record("trajectory", s)?;
        }
        rec.summary("evolve", "steps", traj.steps);
        rec.summary("evolve", "final_norm", w.norm());
        rec.snapshot("evolve_final", &w)?;
        Ok(())
    }

    fn lipschitz(&mut self, rec: &mut Recorder) -> Result<f64> {
        if let Some(l) = self.lipschitz {
            return Ok(l);
        }
        let ctx = self.stationary(rec)?;
        let cutoff = self.cutoff(rec)?;
        let states = lipschitz_samples::<f64>(
            &self.grid,
            &cutoff,
            self.cfg.manifold.lipschitz_samples,
            self.cfg.seed.wrapping_add(3),
        )?;
        let est = self.stage(
            "lipschitz",
            prepared_lipschitz(&ctx, &cutoff, &states, &PowerOptions::default()),
        )?;
        rec.record("lipschitz", &est)?;
        rec.summary("lipschitz", "lipschitz", est.lipschitz);
        self.lipschitz = Some(est.lipschitz);
        Ok(est.lipschitz)
    }

    /// `P_N` from the config, or from the smallest 2D gap above twice the empirical `L / nu`.
    fn projector(&mut self, rec: &mut Recorder) -> Result<BandProjectorSpec> {
        if let Some(s) = self.spec {
            return Ok(s);
        }
        let p = &self.cfg.projector;
        let dim = self.cfg.model.dim;
        let lambda_max = self.cfg.gaps.lambda_max;
        let (spec, data) = if p.lambda_n.is_some() || p.modes.is_some() {
            let levels = enumerate_levels(dim, lambda_max)?;
            let level = match (p.lambda_n, p.modes) {
                (Some(l), _) => levels
                    .iter()
                    .find(|r| r.lambda == l)
                    .ok_or_else(|| Error::invalid("projector.lambda_n", format!("{l} is not a level up to {lambda_max}")))?,
                (None, Some(n)) => levels.iter().find(|r| r.cumulative == n).ok_or_else(|| {
                    let near: Vec<usize> = levels
                        .iter()
                        .map(|r| r.cumulative)
                        .filter(|c| c.abs_diff(n) <= 2 * n.max(4))
                        .take(6)
                        .collect();
                    Error::invalid("projector.modes", format!("{n} is not a cumulative eigenvalue count (nearby: {near:?})"))
                })?,
                (None, None) => unreachable!(),
            };
            let spec = BandProjectorSpec::new(level.cumulative, level.lambda, level.next_lambda, p.k)?;
            (spec, GapData { source: "config", lipschitz: None, spec })
        } else {
            if dim != 2 {
                return Err(Error::invalid("projector.lambda_n", "required for d = 3"));
            }
            let l = self.lipschitz(rec)?;
            let rel = l / self.cfg.model.nu;
            let level = match self.stage("gap", find_gap_2d(rel, lambda_max))? {
                GapSearch::Found(r) => r,
                GapSearch::Exhausted { largest } => {
                    return Err(Error::Stage {
                        stage: format!("{}/gap", self.scenario.name()),
                        source: Box::new(Error::NoConvergence {
                            what: format!("gap search for L/nu = {rel} (largest gap {} at {})", largest.gap, largest.lambda),
                            iterations: lambda_max as usize,
                            residual: 2.0 * rel - largest.gap as f64,
                        }),
                    });
                }
            };
            let spec = BandProjectorSpec::new(level.cumulative, level.lambda, level.next_lambda, p.k)?;
            (spec, GapData { source: "empirical", lipschitz: Some(l), spec })
        };
        rec.record("projector", &data)?;
        rec.summary("projector", "lambda_n", spec.lambda_n);
        rec.summary("projector", "modes", spec.n);
        self.spec = Some(spec);
        Ok(spec)
    }

    fn gaps(&mut self, rec: &mut Recorder) -> Result<()> {
        let g = &self.cfg.gaps;
        for &l in &g.lipschitz {
            let r = find_gap_2d(l, g.lambda_max)?;
            rec.record("gap_search", serde_json::json!({ "lipschitz": l, "result": r }))?;
            if let GapSearch::Found(r) = r {
                rec.summary("gaps", &format!("lambda_n(L={l})"), r.lambda);
                rec.summary("gaps", &format!("gap(L={l})"), r.gap);
                rec.summary("gaps", &format!("modes(L={l})"), r.cumulative);
            } else {
                rec.summary("gaps", &format!("lambda_n(L={l})"), "exhausted");
            }
        }
        let levels = enumerate_levels(2, g.lambda_max)?;
        rec.record("levels", serde_json::json!({ "dim": 2, "lambda_max": g.lambda_max, "count": levels.len() }))?;
        rec.summary("gaps", "levels_2d", levels.len());
        if !g.growth_bounds.is_empty() {
            for &d in &g.growth_dims {
                let fit = gap_growth(d, &g.growth_bounds)?;
                rec.summary("gaps", &format!("growth_c_{d}d"), fit.c);
                rec.record("gap_growth", serde_json::json!({ "dim": d, "fit": fit }))?;
            }
        }
        Ok(())
    }

    fn annulus(&mut self, rec: &mut Recorder) -> Result<AnnulusCertificate> {
        if let Some(c) = &self.annulus {
            return Ok(c.clone());
        }
        let a = &self.cfg.annulus;
        let opts = AnnulusOptions {
            c_hat: a.c_hat,
            require_nonempty: a.require_nonempty,
        };
        let search = find_annulus(a.b, a.lambda_start, a.budget, &opts)?;
        rec.record("annulus", &search)?;
        match search {
            AnnulusSearch::Found(c) => {
                rec.summary("annulus", "lambda", c.lambda);
                rec.summary("annulus", "k", c.k);
                rec.summary("annulus", "points", c.points.len());
                rec.summary("annulus", "min_separation", c.min_separation);
                self.annulus = Some(c.clone());
                Ok(c)
            }
            AnnulusSearch::Exhausted { tried, .. } => self.stage(
                "annulus",
                Err(Error::NoConvergence {
                    what: format!("annulus search with b = {}", a.b),
                    iterations: tried,
                    residual: f64::NAN,
                }),
            ),
        }
    }

    fn cone(&mut self, rec: &mut Recorder) -> Result<()> {
        let a = &self.cfg.abstract_model;
        let spectrum = stokes_spectrum::<f64>(2, a.lambda_max);
        let nl = AbstractNonlinearity::householder_sine(spectrum.len(), a.lipschitz, a.seed);
        let model = AbstractModel::new(a.alpha, a.nu, spectrum.clone(), nl, None)?;
        let n = model
            .cut_for(a.lambda_n as f64)
            .ok_or_else(|| Error::invalid("abstract_model.lambda_n", "leaves no high modes"))?;
        let spec = BandProjectorSpec::new(n, a.lambda_n, spectrum[n] as i64, 0.5)?;
        let gap = check_abstract_gap(a.lambda_n as f64, spectrum[n], a.alpha, a.lipschitz / a.nu)?;
        rec.record("abstract_gap", &gap)?;
        rec.summary("cone_abstract", "gap_margin", gap.margin);
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed.wrapping_add(5));
        let dim = model.dim();
        let mut random_vec = |scale: f64| -> Vec<f64> { (0..dim).map(|_| scale * (rng.random::<f64>() - 0.5)).collect() };
        let pairs: Vec<(Vec<f64>, Vec<f64>)> = (0..self.cfg.cone.pairs)
            .map(|i| {
                let x = random_vec(2.0);
                let mut d = random_vec(0.5);
                for (k, v) in d.iter_mut().enumerate() {
                    if (k < n) == (i % 2 == 0) {
                        *v *= 0.05;
                    }
                }
                let y = x.iter().zip(&d).map(|(p, q)| p + q).collect();
                (x, y)
            })
            .collect();
        let form = ConeForm::new(spec, -a.alpha)?;
        let coeffs = ConeCoefficients::FractionalGap { lipschitz: a.lipschitz };
        let traces = self.stage(
            "cone",
            monitor_pairs(&model, &pairs, &form, &coeffs, self.cfg.cone.t_end, self.cfg.cone.dt),
        )?;
        let summary = ConeSummary::of(&traces);
        rec.record("cone_pairs", serde_json::json!({ "model": "abstract", "pairs": pair_data(&traces) }))?;
        rec.record("cone_summary", serde_json::json!({ "model": "abstract", "summary": &summary }))?;
        cone_rows(rec, "cone_abstract", &summary);

        if self.cfg.cone.field_pairs == 0 || self.cfg.model.dim != 2 {
            return Ok(());
        }
        let model = self.prepared(rec)?;
        let spec = self.projector(rec)?;
        let l = self.lipschitz(rec)?;
        let cutoff = self.cutoff(rec)?;
        let pairs = (0..self.cfg.cone.field_pairs)
            .map(|i| {
                let seed = self.cfg.seed.wrapping_add(300 + 2 * i as u64);
                let x = random_field::<f64>(&self.grid, seed, 3.0)?;
                let x = x.scaled(2.0 * cutoff.radius / x.sobolev_norm(4.5));
                let mut d = random_field::<f64>(&self.grid, seed + 1, 3.0)?;
                d.scale(0.1 * x.norm() / d.norm());
                let low_small = i % 2 == 0;
                d.scale_by_norm_sq(|m| if (m <= spec.lambda_n) == low_small { 0.05 } else { 1.0 });
                let y = &x + &d;
                Ok((x, y))
            })
            .collect::<Result<Vec<_>>>()?;
        let form = ConeForm::new(spec, 0.0)?;
        let coeffs = ConeCoefficients::FractionalGap { lipschitz: l };
        let traces = self.stage(
            "cone",
            monitor_pairs(&model, &pairs, &form, &coeffs, self.cfg.cone.field_t_end, self.cfg.cone.field_dt),
        )?;
        let summary = ConeSummary::of(&traces);
        rec.record("cone_pairs", serde_json::json!({ "model": "prepared", "pairs": pair_data(&traces) }))?;
        rec.record("cone_summary", serde_json::json!({ "model": "prepared", "summary": &summary }))?;
        cone_rows(rec, "cone_prepared", &summary);
        Ok(())
    }

    fn sac(&mut self, rec: &mut Recorder) -> Result<()> {
        self.require_dim(3)?;
        let cert = self.annulus(rec)?;
        let cutoff_box = self.grid.cutoff() as i32;
        if cert.points.iter().any(|p| p.iter().any(|c| c.abs() > cutoff_box)) {
            return Err(Error::invalid(
                "grid.max_mode",
                format!("annulus at lambda = {} leaves the coefficient box |j| <= {cutoff_box}", cert.lambda),
            ));
        }
        let lambda = cert.lambda.round() as i64;
        let spec = BandProjectorSpec::new(0, lambda, lambda + 1, cert.k)?;
        let ctx = self.stationary(rec)?;
        let cutoff = self.cutoff(rec)?;

        let b2 = cert.b * cert.b;
        let generator = ctx.v.restrict(|n| (n as f64) < b2);
        let ann = band_annihilation_check(&generator, &spec, self.cfg.seed.wrapping_add(9))?;
        rec.record("band_annihilation", &ann)?;
        rec.summary("sac", "coupling_pairs", ann.coupling_pairs);
        rec.summary("sac", "annihilation_max_coefficient", ann.max_coefficient);

        let samples = sac_samples::<f64>(&self.grid, &cutoff, self.cfg.sac.samples, self.cfg.seed.wrapping_add(4))?;
        let report = self.stage(
            "sac",
            if self.cfg.sac.with_scalar {
                sac_estimate_with_scalar(&ctx, &cutoff, &spec, &samples, &self.cfg.sac.power)
            } else {
                sac_estimate(&ctx, &cutoff, &spec, &samples, &self.cfg.sac.power)
            },
        )?;
        rec.record("sac", &report)?;
        rec.summary("sac", "delta_hat", report.delta_hat);
        rec.summary("sac", "meets_target", report.meets_target);

        let mut audit_pass = true;
        for (i, (_, w)) in samples.iter().enumerate() {
            let audit = zero_mean_audit(&ctx, w, &cutoff)?;
            let pass = audit.passes(self.cfg.tolerances.zero_mean);
            audit_pass &= pass;
            rec.record("zero_mean_audit", serde_json::json!({ "sample": i, "audit": audit, "pass": pass }))?;
        }
        rec.summary("sac", "zero_mean_audits_pass", audit_pass);
        Ok(())
    }

    fn manifold_inputs(&mut self, rec: &mut Recorder) -> Result<(FieldModel<f64>, BandProjectorSpec, f64)> {
        let model = self.prepared(rec)?;
        let spec = self.projector(rec)?;
        let extent = match self.cfg.manifold.extent {
            Some(x) => x,
            None => 3.0 * self.cutoff(rec)?.radius,
        };
        Ok((model, spec, extent))
    }

    fn manifold(&mut self, rec: &mut Recorder) -> Result<()> {
        let (model, spec, extent) = self.manifold_inputs(rec)?;
        let mc = &self.cfg.manifold;
        let m = Manifold::new(&model, spec, mc.options())?;
        if let Some(&a) = mc.axes.iter().find(|&&a| a >= m.low_dim()) {
            return Err(Error::invalid("manifold.axes", format!("axis {a} exceeds dim P_N = {}", m.low_dim())));
        }
        let points = base_grid(m.low_dim(), &mc.axes, extent, mc.count);
        let chart = self.stage("manifold", build_chart(&m, &points))?;
        for r in chart.records(&model) {
            rec.record("chart_point", &r)?;
        }
        let geometric = chart.doubling_is_geometric(self.cfg.tolerances.doubling_floor);
        let t_max = chart.t_used.iter().copied().fold(0.0, f64::max);
        rec.record(
            "chart",
            serde_json::json!({
                "spec": spec,
                "low_dim": m.low_dim(),
                "extent": extent,
                "points": points.len(),
                "lipschitz": chart.lipschitz,
                "lipschitz_pass": chart.lipschitz <= self.cfg.tolerances.chart_lipschitz,
                "doubling_geometric": geometric,
                "t_used_max": t_max,
            }),
        )?;
        rec.summary("manifold", "low_dim", m.low_dim());
        rec.summary("manifold", "points", points.len());
        rec.summary("manifold", "lipschitz", chart.lipschitz);
        rec.summary("manifold", "doubling_geometric", geometric);
        rec.summary("manifold", "t_used_max", t_max);
        Ok(())
    }

    fn inertial_form(&mut self, rec: &mut Recorder) -> Result<()> {
        let (model, spec, extent) = self.manifold_inputs(rec)?;
        let mc = &self.cfg.manifold;
        let m = Manifold::new(&model, spec, mc.options())?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed.wrapping_add(17));
        let p0: Vec<f64> = (0..m.low_dim()).map(|_| extent * (rng.random::<f64>() - 0.5)).collect();
        let dt = mc.inertial_dt.unwrap_or(mc.dt);
        let report = self.stage("inertial-form", invariance_check(&m, &p0, mc.inertial_t_end, dt))?;
        rec.record("invariance", serde_json::json!({ "p0": p0, "report": &report, "pass": report.passes() }))?;
        rec.summary("inertial_form", "max_low_gap", report.max_low_gap());
        rec.summary("inertial_form", "max_graph_gap", report.max_graph_gap());
        rec.summary("inertial_form", "budget", report.budget);
        rec.summary("inertial_form", "pass", report.passes());
        Ok(())
    }

    fn tracking(&mut self, rec: &mut Recorder) -> Result<()> {
        let (model, spec, _) = self.manifold_inputs(rec)?;
        let mc = &self.cfg.manifold;
        let m = Manifold::new(&model, spec, mc.options())?;
        let starts = (0..mc.tracking_seeds)
            .map(|i| self.scaled_field(self.cfg.seed.wrapping_add(1000 + i as u64), 3.0, mc.tracking_init_norm))
            .collect::<Result<Vec<_>>>()?;
        let fits = self.stage(
            "tracking",
            starts
                .par_iter()
                .map(|u0| measure_tracking(&m, u0, mc.tracking_horizon, mc.dt))
                .collect::<Result<Vec<_>>>(),
        )?;
        let mut min_omega = f64::INFINITY;
        for (i, fit) in fits.iter().enumerate() {
            min_omega = min_omega.min(fit.omega);
            rec.record("tracking", serde_json::json!({ "start": i, "fit": fit }))?;
        }
        rec.summary("tracking", "min_omega", min_omega);
        Ok(())
    }
}

fn cone_rows(rec: &mut Recorder, stage: &str, s: &ConeSummary) {
    rec.summary(stage, "runs", s.runs);
    rec.summary(stage, "invariance_violations", s.runs_with_invariance_violations);
    rec.summary(stage, "residual_violations", s.runs_with_residual_violations);
    rec.summary(stage, "staying_outside", s.runs_staying_outside);
    rec.summary(
        stage,
        "min_squeeze_rate",
        s.min_squeeze_rate.map_or("none".to_string(), |x| x.to_string()),
    );
}

/// Reads and validates a config file.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)?;
    validate_config(&text).map_err(Error::Config)
}
