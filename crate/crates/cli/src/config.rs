//! Experiment configuration files.
//!
//! Configs are TOML in laboratory units; every key carries its unit in its
//! name (`_um`, `_cm_s`, `_msi` for 10^6 s^-1, `_per_s`, `_us`, `_u` for
//! atomic mass units). Conversion to the internal micrometer/microsecond
//! system happens when the experiment is built.

use std::path::{Path, PathBuf};

use atom_diode::diode::WindowSearch;
use atom_diode::dynamics::{Grid, InitialCondition, OpenSystemParams, Scenario, StepControl};
use atom_diode::physics::{
    build_three_level, build_two_level, cm_per_s, per_second, Geometry, Interpolation, PotentialSpec, Tabulated,
    UnitSystem,
};
use atom_diode::scattering::{Method, SolverConfig};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Master seed for stochastic commands; `--seed` overrides it.
    #[serde(default, with = "seed_format")]
    pub seed: u64,
    #[serde(default)]
    pub atom: AtomConfig,
    pub potential: PotentialConfig,
    #[serde(default)]
    pub geometry: GeometryConfig,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scan: Option<ScanConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vmax: Option<VmaxConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ensemble: Option<EnsembleConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle: Option<OracleSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<OutputConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtomConfig {
    pub mass_u: f64,
}

impl Default for AtomConfig {
    fn default() -> Self {
        Self { mass_u: 20.1797 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PotentialKind {
    /// Pump and Stokes with equal peak Rabi frequency `rabi_msi` plus the
    /// barrier `barrier_msi` on level 1.
    ThreeLevel,
    /// Rank-one two-level potential with squared amplitude `f_hat_sq_msi`.
    TwoLevel,
    /// CSV table `file`: position in um, then the upper triangle of the
    /// `dim x dim` matrix `V / hbar` in Msi, row by row. Linear
    /// interpolation, or piecewise constant with `step = true`. Relative
    /// paths are resolved against the config file.
    Tabulated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialConfig {
    pub kind: PotentialKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rabi_msi: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub barrier_msi: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f_hat_sq_msi: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub step: bool,
}

impl PotentialConfig {
    pub fn three_level(rabi_msi: f64, barrier_msi: f64) -> Self {
        Self {
            kind: PotentialKind::ThreeLevel,
            rabi_msi: Some(rabi_msi),
            barrier_msi: Some(barrier_msi),
            f_hat_sq_msi: None,
            file: None,
            dim: None,
            step: false,
        }
    }

    fn require(value: Option<f64>, name: &str) -> Result<f64, CliError> {
        let v = value.ok_or_else(|| field(name, "is required for this potential kind"))?;
        non_negative(name, v)?;
        Ok(v)
    }

    fn validate(&self) -> Result<(), CliError> {
        let allowed: &[&str] = match self.kind {
            PotentialKind::ThreeLevel => {
                Self::require(self.rabi_msi, "potential.rabi_msi")?;
                Self::require(self.barrier_msi, "potential.barrier_msi")?;
                &["rabi_msi", "barrier_msi"]
            }
            PotentialKind::TwoLevel => {
                Self::require(self.f_hat_sq_msi, "potential.f_hat_sq_msi")?;
                &["f_hat_sq_msi"]
            }
            PotentialKind::Tabulated => {
                let file = self.file.as_ref().ok_or_else(|| field("potential.file", "is required for a table"))?;
                if !file.is_file() {
                    return Err(field("potential.file", format!("{} does not exist", file.display())));
                }
                let dim = self.dim.ok_or_else(|| field("potential.dim", "is required for a table"))?;
                if !(1..=3).contains(&dim) {
                    return Err(field("potential.dim", format!("must be 1, 2 or 3, got {dim}")));
                }
                &["file", "dim", "step"]
            }
        };
        let present = [
            ("rabi_msi", self.rabi_msi.is_some()),
            ("barrier_msi", self.barrier_msi.is_some()),
            ("f_hat_sq_msi", self.f_hat_sq_msi.is_some()),
            ("file", self.file.is_some()),
            ("dim", self.dim.is_some()),
            ("step", self.step),
        ];
        for (name, set) in present {
            if set && !allowed.contains(&name) {
                return Err(field(&format!("potential.{name}"), "does not apply to this potential kind"));
            }
        }
        Ok(())
    }
}

/// Seeds are written as TOML integers when they fit and as decimal strings
/// otherwise; both forms are accepted.
mod seed_format {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(seed: &u64, s: S) -> Result<S::Ok, S::Error> {
        match i64::try_from(*seed) {
            Ok(v) => s.serialize_i64(v),
            Err(_) => s.serialize_str(&seed.to_string()),
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Int(i64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u64, D::Error> {
        use serde::de::Error;
        match Raw::deserialize(d)? {
            Raw::Int(v) => u64::try_from(v).map_err(|_| D::Error::custom(format!("seed must be non-negative, got {v}"))),
            Raw::Text(t) => t.parse().map_err(|_| D::Error::custom(format!("seed must be an unsigned integer, got {t:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryConfig {
    pub x_p_um: f64,
    pub x_s_um: f64,
    pub x_w_um: f64,
    pub width_um: f64,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        let g = Geometry::reference();
        Self {
            x_p_um: g.x_p,
            x_s_um: g.x_s,
            x_w_um: g.x_w,
            width_um: g.width,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_steps: usize,
    pub method: Method,
}

impl Default for SolverSection {
    fn default() -> Self {
        let s = SolverConfig::default();
        Self {
            rel_tol: s.rel_tol,
            abs_tol: s.abs_tol,
            max_steps: s.max_steps,
            method: s.method,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Spacing {
    #[default]
    Linear,
    Log,
}

/// Velocities either listed or generated as `count` points from `v_min`
/// to `v_max`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub velocities_cm_s: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_min_cm_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_max_cm_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub count: Option<usize>,
    #[serde(default)]
    pub spacing: Spacing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VmaxConfig {
    pub rabi_msi: Vec<f64>,
    pub barrier_msi: Vec<f64>,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_v_min")]
    pub v_min_cm_s: f64,
    #[serde(default = "default_v_top")]
    pub v_max_cm_s: f64,
    /// Largest grid spacing; the grid is geometric below it.
    #[serde(default = "default_v_min")]
    pub step_cm_s: f64,
    /// Relative solver tolerance used during the search.
    #[serde(default = "default_search_tol")]
    pub tolerance: f64,
}

fn default_epsilon() -> f64 {
    0.01
}
fn default_v_min() -> f64 {
    0.25
}
fn default_v_top() -> f64 {
    100.0
}
fn default_search_tol() -> f64 {
    1e-7
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleConfig {
    pub v0_cm_s: Vec<f64>,
    /// Start position for positive `v0`.
    #[serde(default = "default_x0_left")]
    pub x0_left_um: f64,
    /// Start position for negative `v0`.
    #[serde(default = "default_x0_right")]
    pub x0_right_um: f64,
    pub dv0_cm_s: f64,
    pub gamma_per_s: f64,
    pub v_rec_cm_s: f64,
    /// `t_max = distance_um / |v0|`.
    pub distance_um: f64,
    pub trajectories: usize,
    /// Fixed step; adaptive when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt_us: Option<f64>,
    /// Explicit grid; derived from the packet and potential when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridConfig>,
    /// Write the averaged momentum density of every `v0` next to the output.
    #[serde(default)]
    pub density_dump: bool,
}

fn default_x0_left() -> f64 {
    40.0
}
fn default_x0_right() -> f64 {
    360.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub x_min_um: f64,
    pub x_max_um: f64,
    pub points: usize,
}

/// Small-grid comparison of trajectories against the density matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleSection {
    pub grid: GridConfig,
    pub x0_um: f64,
    pub v0_cm_s: f64,
    pub dv0_cm_s: f64,
    pub gamma_per_s: f64,
    pub v_rec_cm_s: f64,
    pub t_max_us: f64,
    pub dt_us: f64,
    pub trajectories: usize,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "default_nodes")]
    pub quadrature_nodes: usize,
}

fn default_samples() -> usize {
    10
}
fn default_nodes() -> usize {
    32
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub path: PathBuf,
}

fn field(name: &str, reason: impl Into<String>) -> CliError {
    CliError::Config(format!("`{name}`: {}", reason.into()))
}

fn non_negative(name: &str, v: f64) -> Result<(), CliError> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(field(name, format!("must be a non-negative number, got {v}")))
    }
}

fn positive(name: &str, v: f64) -> Result<(), CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(field(name, format!("must be positive, got {v}")))
    }
}

fn finite(name: &str, v: f64) -> Result<(), CliError> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(field(name, format!("must be finite, got {v}")))
    }
}

impl ExperimentConfig {
    /// Parses and validates `text`; `base` resolves relative file paths.
    pub fn parse(text: &str, base: &Path) -> Result<Self, CliError> {
        let mut cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        if let Some(file) = &mut cfg.potential.file {
            if file.is_relative() {
                *file = base.join(&*file);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configs always serialize")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        positive("atom.mass_u", self.atom.mass_u)?;
        self.potential.validate()?;
        let g = &self.geometry;
        finite("geometry.x_p_um", g.x_p_um)?;
        finite("geometry.x_s_um", g.x_s_um)?;
        finite("geometry.x_w_um", g.x_w_um)?;
        positive("geometry.width_um", g.width_um)?;
        positive("solver.rel_tol", self.solver.rel_tol)?;
        positive("solver.abs_tol", self.solver.abs_tol)?;
        if self.solver.max_steps < 16 {
            return Err(field("solver.max_steps", "must be at least 16"));
        }
        if let Some(s) = &self.scan {
            s.velocities()?;
        }
        if let Some(v) = &self.vmax {
            for (i, &o) in v.rabi_msi.iter().enumerate() {
                non_negative(&format!("vmax.rabi_msi[{i}]"), o)?;
            }
            for (i, &w) in v.barrier_msi.iter().enumerate() {
                non_negative(&format!("vmax.barrier_msi[{i}]"), w)?;
            }
            positive("vmax.epsilon", v.epsilon)?;
            positive("vmax.v_min_cm_s", v.v_min_cm_s)?;
            positive("vmax.step_cm_s", v.step_cm_s)?;
            positive("vmax.tolerance", v.tolerance)?;
            if !(v.v_max_cm_s >= v.v_min_cm_s) {
                return Err(field("vmax.v_max_cm_s", "must not be below v_min_cm_s"));
            }
        }
        if let Some(e) = &self.ensemble {
            for (i, &v) in e.v0_cm_s.iter().enumerate() {
                if !(v != 0.0 && v.is_finite()) {
                    return Err(field(&format!("ensemble.v0_cm_s[{i}]"), format!("must be non-zero, got {v}")));
                }
            }
            finite("ensemble.x0_left_um", e.x0_left_um)?;
            finite("ensemble.x0_right_um", e.x0_right_um)?;
            positive("ensemble.dv0_cm_s", e.dv0_cm_s)?;
            non_negative("ensemble.gamma_per_s", e.gamma_per_s)?;
            non_negative("ensemble.v_rec_cm_s", e.v_rec_cm_s)?;
            positive("ensemble.distance_um", e.distance_um)?;
            if e.trajectories < 2 || e.trajectories % 2 != 0 {
                return Err(field("ensemble.trajectories", format!("must be even and >= 2, got {}", e.trajectories)));
            }
            if let Some(dt) = e.dt_us {
                positive("ensemble.dt_us", dt)?;
            }
            if let Some(g) = &e.grid {
                g.validate("ensemble.grid")?;
            }
        }
        if let Some(o) = &self.oracle {
            o.grid.validate("oracle.grid")?;
            finite("oracle.x0_um", o.x0_um)?;
            finite("oracle.v0_cm_s", o.v0_cm_s)?;
            positive("oracle.dv0_cm_s", o.dv0_cm_s)?;
            non_negative("oracle.gamma_per_s", o.gamma_per_s)?;
            non_negative("oracle.v_rec_cm_s", o.v_rec_cm_s)?;
            positive("oracle.t_max_us", o.t_max_us)?;
            positive("oracle.dt_us", o.dt_us)?;
            if o.trajectories < 2 || o.trajectories % 2 != 0 {
                return Err(field("oracle.trajectories", format!("must be even and >= 2, got {}", o.trajectories)));
            }
            if o.samples == 0 {
                return Err(field("oracle.samples", "must be at least 1"));
            }
        }
        Ok(())
    }

    pub fn units(&self) -> Result<UnitSystem, CliError> {
        UnitSystem::from_mass_u(self.atom.mass_u).map_err(|e| field("atom.mass_u", e.to_string()))
    }

    pub fn geometry(&self) -> Geometry {
        Geometry {
            x_p: self.geometry.x_p_um,
            x_s: self.geometry.x_s_um,
            x_w: self.geometry.x_w_um,
            width: self.geometry.width_um,
        }
    }

    pub fn solver(&self) -> SolverConfig {
        SolverConfig {
            rel_tol: self.solver.rel_tol,
            abs_tol: self.solver.abs_tol,
            max_steps: self.solver.max_steps,
            method: self.solver.method,
        }
    }

    /// The configured potential in internal units.
    pub fn potential(&self) -> Result<PotentialSpec, CliError> {
        let geometry = self.geometry();
        let p = &self.potential;
        let missing = || field("potential", "incomplete; validate the config first");
        match p.kind {
            PotentialKind::ThreeLevel => build_three_level(
                p.rabi_msi.ok_or_else(missing)?,
                p.barrier_msi.ok_or_else(missing)?,
                geometry,
            )
            .map_err(|e| field("potential", e.to_string())),
            PotentialKind::TwoLevel => build_two_level(p.f_hat_sq_msi.ok_or_else(missing)?, geometry)
                .map_err(|e| field("potential", e.to_string())),
            PotentialKind::Tabulated => load_table(
                p.file.as_deref().ok_or_else(missing)?,
                p.dim.ok_or_else(missing)?,
                p.step,
            ),
        }
    }

    pub fn window_search(&self) -> Result<WindowSearch, CliError> {
        let v = self.vmax.as_ref().ok_or_else(|| field("vmax", "section is missing"))?;
        let velocities = WindowSearch::default_grid(cm_per_s(v.v_min_cm_s), cm_per_s(v.v_max_cm_s), cm_per_s(v.step_cm_s))
            .map_err(|e| field("vmax", e.to_string()))?;
        Ok(WindowSearch {
            epsilon: v.epsilon,
            velocities,
            solver: SolverConfig::with_tolerance(v.tolerance),
            units: self.units()?,
        })
    }

    /// Scenario and step control for one initial velocity of the ensemble.
    pub fn ensemble_scenario(&self, v0_cm_s: f64) -> Result<(Scenario, StepControl), CliError> {
        let e = self.ensemble.as_ref().ok_or_else(|| field("ensemble", "section is missing"))?;
        let units = self.units()?;
        let spec = self.potential()?;
        let v0 = cm_per_s(v0_cm_s);
        let x0 = if v0 > 0.0 { e.x0_left_um } else { e.x0_right_um };
        let initial =
            InitialCondition::new(x0, v0, cm_per_s(e.dv0_cm_s)).map_err(|err| field("ensemble", err.to_string()))?;
        let params = OpenSystemParams::new(per_second(e.gamma_per_s), cm_per_s(e.v_rec_cm_s), e.distance_um / v0.abs())
            .map_err(|err| field("ensemble", err.to_string()))?;
        let scenario = match &e.grid {
            Some(g) => Scenario {
                spec,
                units,
                grid: g.build("ensemble.grid")?,
                initial,
                params,
            },
            None => Scenario::on_run_grid(spec, units, initial, params).map_err(CliError::Numerical)?,
        };
        let control = match e.dt_us {
            Some(dt) => StepControl::fixed(dt),
            None => StepControl::default(),
        };
        Ok((scenario, control))
    }

    pub fn oracle_scenario(&self) -> Result<Scenario, CliError> {
        let o = self.oracle.as_ref().ok_or_else(|| field("oracle", "section is missing"))?;
        Ok(Scenario {
            spec: self.potential()?,
            units: self.units()?,
            grid: o.grid.build("oracle.grid")?,
            initial: InitialCondition::new(o.x0_um, cm_per_s(o.v0_cm_s), cm_per_s(o.dv0_cm_s))
                .map_err(|e| field("oracle", e.to_string()))?,
            params: OpenSystemParams::new(per_second(o.gamma_per_s), cm_per_s(o.v_rec_cm_s), o.t_max_us)
                .map_err(|e| field("oracle", e.to_string()))?,
        })
    }
}

impl ScanConfig {
    /// Scan velocities in cm/s.
    pub fn velocities(&self) -> Result<Vec<f64>, CliError> {
        let range = (self.v_min_cm_s, self.v_max_cm_s, self.count);
        let vs = match (&self.velocities_cm_s, range) {
            (Some(list), (None, None, None)) => list.clone(),
            (None, (Some(a), Some(b), Some(n))) => {
                positive("scan.v_min_cm_s", a)?;
                positive("scan.v_max_cm_s", b)?;
                if b < a {
                    return Err(field("scan.v_max_cm_s", "must not be below v_min_cm_s"));
                }
                match n {
                    0 => Vec::new(),
                    1 => vec![a],
                    _ => (0..n)
                        .map(|i| {
                            let t = i as f64 / (n - 1) as f64;
                            match self.spacing {
                                Spacing::Linear => a + (b - a) * t,
                                Spacing::Log => a * (b / a).powf(t),
                            }
                        })
                        .collect(),
                }
            }
            _ => {
                return Err(field(
                    "scan",
                    "give either velocities_cm_s or all of v_min_cm_s, v_max_cm_s and count",
                ))
            }
        };
        for (i, &v) in vs.iter().enumerate() {
            positive(&format!("scan.velocities_cm_s[{i}]"), v)?;
        }
        Ok(vs)
    }
}

impl GridConfig {
    fn validate(&self, name: &str) -> Result<(), CliError> {
        finite(&format!("{name}.x_min_um"), self.x_min_um)?;
        finite(&format!("{name}.x_max_um"), self.x_max_um)?;
        if !(self.x_max_um > self.x_min_um) {
            return Err(field(&format!("{name}.x_max_um"), "must exceed x_min_um"));
        }
        if self.points < 4 || self.points % 2 != 0 {
            return Err(field(&format!("{name}.points"), format!("must be even and >= 4, got {}", self.points)));
        }
        Ok(())
    }

    fn build(&self, name: &str) -> Result<Grid, CliError> {
        Grid::new(self.x_min_um, self.x_max_um, self.points).map_err(|e| field(name, e.to_string()))
    }
}

fn load_table(path: &Path, dim: usize, step: bool) -> Result<PotentialSpec, CliError> {
    let bad = |reason: String| field("potential.file", format!("{}: {reason}", path.display()));
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| bad(e.to_string()))?;
    let mut xs = Vec::new();
    let mut rows = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| bad(e.to_string()))?;
        let values: Vec<f64> = record
            .iter()
            .map(|s| s.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| bad(format!("record {}: {e}", line + 1)))?;
        let (x, rest) = values.split_first().ok_or_else(|| bad(format!("record {} is empty", line + 1)))?;
        xs.push(*x);
        rows.push(rest.to_vec());
    }
    let interpolation = if step { Interpolation::Step } else { Interpolation::Linear };
    Tabulated::with_interpolation(dim, xs, rows, interpolation)
        .map(PotentialSpec::Tabulated)
        .map_err(|e| bad(e.to_string()))
}
