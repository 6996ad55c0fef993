//! Diode figures of merit built from scattering amplitudes.
//!
//! For incidence in the ground state (channel 1) the wanted outcomes are
//! transmission into the last channel from the left and reflection into
//! channel 1 from the right. Everything else counts against the diode.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::physics::{build_three_level, cm_per_s, Geometry, PotentialSpec, UnitSystem};
use crate::scattering::{solve_scattering, ScatteringResult, SolverConfig};

/// Incidence side. Right incidence is reported with a negative velocity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Side {
    Left,
    Right,
}

/// Ground-state diode quantities at one signed velocity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiodePoint {
    /// Signed velocity, um/us; negative for right incidence.
    pub v: f64,
    /// `|R_hat|^2`: `|R^l_11|^2` for left incidence, `|R^r_11|^2` for right.
    pub reflection: f64,
    /// `|T_hat|^2`: transmission from channel 1 into the last channel.
    pub transmission: f64,
    /// This side's share of the failure functional; see [`failure_functional`].
    pub failure: f64,
}

/// Which group of terms dominates the failure functional.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LimitingSide {
    /// Left-incidence terms: the adiabatic transfer does not complete.
    StirapFailure,
    /// Right-incidence terms: the barrier no longer reflects.
    ReflectionFailure,
}

impl LimitingSide {
    pub fn as_str(&self) -> &'static str {
        match self {
            LimitingSide::StirapFailure => "stirap-failure",
            LimitingSide::ReflectionFailure => "reflection-failure",
        }
    }

    /// Ties go to reflection failure, the more common limitation.
    pub fn classify(left_terms: f64, right_terms: f64) -> Self {
        if left_terms > right_terms {
            LimitingSide::StirapFailure
        } else {
            LimitingSide::ReflectionFailure
        }
    }
}

fn prob(m: &nalgebra::DMatrix<num_complex::Complex64>, row: usize, col: usize) -> f64 {
    m[(row, col)].norm_sqr()
}

/// Diode quantities for ground-state incidence from `side`.
///
/// `failure` holds the terms of the failure functional that belong to this
/// side, so the functional is the sum of the left and right values.
pub fn diode_quantities(res: &ScatteringResult, side: Side) -> DiodePoint {
    let d = res.dim();
    let last = d - 1;
    match side {
        Side::Left => {
            let transmission = prob(&res.t_left, last, 0);
            let unwanted: f64 = (0..d).map(|a| prob(&res.r_left, a, 0)).sum::<f64>()
                + (0..last).map(|a| prob(&res.t_left, a, 0)).sum::<f64>();
            DiodePoint {
                v: res.v,
                reflection: prob(&res.r_left, 0, 0),
                transmission,
                failure: unwanted + (1.0 - transmission),
            }
        }
        Side::Right => {
            let reflection = prob(&res.r_right, 0, 0);
            let unwanted: f64 = (0..d).map(|a| prob(&res.t_right, a, 0)).sum::<f64>()
                + (1..d).map(|a| prob(&res.r_right, a, 0)).sum::<f64>();
            DiodePoint {
                v: -res.v,
                reflection,
                transmission: prob(&res.t_right, last, 0),
                failure: unwanted + (1.0 - reflection),
            }
        }
    }
}

/// Sum of all unwanted ground-state scattering probabilities plus the
/// deficits of the two wanted ones.
///
/// `left` supplies the left-incidence amplitudes and `right` the
/// right-incidence ones; usually both are the same solve.
pub fn failure_functional(left: &ScatteringResult, right: &ScatteringResult) -> Result<f64> {
    Ok(failure_terms(left, right)?.iter().sum())
}

/// The (left, right) term groups of the failure functional.
pub fn failure_terms(left: &ScatteringResult, right: &ScatteringResult) -> Result<[f64; 2]> {
    if left.dim() != right.dim() {
        return Err(Error::DimensionMismatch {
            expected: left.dim(),
            found: right.dim(),
        });
    }
    if (left.v - right.v).abs() > 1e-12 * left.v.abs().max(right.v.abs()) {
        return Err(Error::invalid(
            "velocity",
            format!("failure functional needs one speed, got {} and {}", left.v, right.v),
        ));
    }
    Ok([
        diode_quantities(left, Side::Left).failure,
        diode_quantities(right, Side::Right).failure,
    ])
}

/// One row of a velocity scan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiodeScanRow {
    pub v: f64,
    pub left: DiodePoint,
    pub right: DiodePoint,
    pub failure: f64,
}

impl DiodeScanRow {
    pub fn from_result(res: &ScatteringResult) -> Self {
        let left = diode_quantities(res, Side::Left);
        let right = diode_quantities(res, Side::Right);
        Self {
            v: res.v,
            left,
            right,
            failure: left.failure + right.failure,
        }
    }

    pub fn limiting(&self) -> LimitingSide {
        LimitingSide::classify(self.left.failure, self.right.failure)
    }
}

/// Solves every velocity (in parallel) and reduces each to diode quantities.
pub fn diode_scan(
    spec: &PotentialSpec,
    units: UnitSystem,
    velocities: &[f64],
    cfg: &SolverConfig,
) -> Vec<Result<DiodeScanRow>> {
    velocities
        .par_iter()
        .map(|&v| solve_scattering(spec, units, v, cfg).map(|r| DiodeScanRow::from_result(&r)))
        .collect()
}

/// Settings for the operating-window search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowSearch {
    /// Threshold on the failure functional.
    pub epsilon: f64,
    /// Ascending velocities, um/us, starting at the lower window edge `v_min`.
    pub velocities: Vec<f64>,
    pub solver: SolverConfig,
    pub units: UnitSystem,
}

/// Finest relative spacing accepted for a window search: 100 points per decade.
pub const MAX_GRID_RATIO: f64 = 1.023_292_992_280_754_2;

impl WindowSearch {
    /// Velocities from `v_min` to `v_max` (um/us), geometric at 100 points
    /// per decade until that spacing exceeds `step`, then the multiples of
    /// `step`.
    pub fn default_grid(v_min: f64, v_max: f64, step: f64) -> Result<Vec<f64>> {
        if !(v_min > 0.0 && v_max >= v_min && step > 0.0) {
            return Err(Error::invalid("velocity grid", "need 0 < v_min <= v_max and step > 0"));
        }
        let ratio = 10f64.powf(0.01);
        let mut grid = vec![v_min];
        let mut v = v_min;
        loop {
            let next = if v * (ratio - 1.0) < step {
                v * ratio
            } else {
                ((v / step + 1e-9).floor() + 1.0) * step
            };
            if next > v_max * (1.0 + 1e-12) {
                break;
            }
            grid.push(next);
            v = next;
        }
        Ok(grid)
    }

    /// Reference window search: epsilon 0.01, grid
    /// 0.25 to 100 cm/s with 0.25 cm/s steps where they are dense enough.
    pub fn reference() -> Self {
        Self {
            epsilon: 0.01,
            velocities: Self::default_grid(cm_per_s(0.25), cm_per_s(100.0), cm_per_s(0.25))
                .expect("reference grid is valid"),
            solver: SolverConfig::with_tolerance(1e-7),
            units: UnitSystem::neon(),
        }
    }

    pub fn v_min(&self) -> f64 {
        self.velocities[0]
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::invalid("epsilon", "must be positive"));
        }
        if self.velocities.is_empty() {
            return Err(Error::invalid("velocities", "grid is empty"));
        }
        if !(self.velocities[0] > 0.0) {
            return Err(Error::NonPositiveVelocity(self.velocities[0]));
        }
        for w in self.velocities.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::invalid("velocities", "grid must be strictly increasing"));
            }
            if w[1] / w[0] > MAX_GRID_RATIO * (1.0 + 1e-9) {
                return Err(Error::invalid(
                    "velocities",
                    format!("gap {} -> {} is coarser than 100 points per decade", w[0], w[1]),
                ));
            }
        }
        self.solver.validate()
    }
}

/// Operating window of one potential.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Window {
    /// Largest grid velocity below which every grid point passes; `None`
    /// when the lowest velocity already fails.
    pub v_max: Option<f64>,
    /// Group dominating the failure at the first failing grid velocity (or
    /// at the top of the grid if none fails).
    pub limiting: LimitingSide,
    /// Velocity at which `limiting` was evaluated.
    pub probe_v: f64,
    /// Failure functional there.
    pub probe_failure: f64,
}

/// Scans the grid upward and stops at the first velocity where the failure
/// functional reaches `epsilon`.
pub fn find_window(spec: &PotentialSpec, search: &WindowSearch) -> Result<Window> {
    search.validate()?;
    let chunk = rayon::current_num_threads().max(1);
    let mut last_pass: Option<DiodeScanRow> = None;
    for block in search.velocities.chunks(chunk) {
        let rows = diode_scan(spec, search.units, block, &search.solver);
        for row in rows {
            let row = row?;
            if row.failure >= search.epsilon {
                return Ok(Window {
                    v_max: last_pass.map(|r| r.v),
                    limiting: row.limiting(),
                    probe_v: row.v,
                    probe_failure: row.failure,
                });
            }
            last_pass = Some(row);
        }
    }
    let top = last_pass.expect("grid is non-empty and every point passed");
    Ok(Window {
        v_max: Some(top.v),
        limiting: top.limiting(),
        probe_v: top.v,
        probe_failure: top.failure,
    })
}

/// One point of the `v_max(Omega_hat, W_hat)` surface.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VmaxSurfacePoint {
    /// Peak Rabi frequency, us^-1.
    pub rabi: f64,
    /// Peak barrier, us^-1.
    pub barrier: f64,
    /// um/us.
    pub v_max: Option<f64>,
    pub limiting: LimitingSide,
}

/// Operating window of the three-level potential with peak Rabi frequency
/// `rabi` and barrier `barrier` (both us^-1).
pub fn find_v_max(rabi: f64, barrier: f64, geometry: Geometry, search: &WindowSearch) -> Result<VmaxSurfacePoint> {
    let spec = build_three_level(rabi, barrier, geometry)?;
    let w = find_window(&spec, search)?;
    Ok(VmaxSurfacePoint {
        rabi,
        barrier,
        v_max: w.v_max,
        limiting: w.limiting,
    })
}

/// `find_v_max` over a grid, row-major in `rabis` (outer) and `barriers`
/// (inner). Failed points keep their error.
pub fn sweep_vmax_surface(
    rabis: &[f64],
    barriers: &[f64],
    geometry: Geometry,
    search: &WindowSearch,
) -> Result<Vec<Result<VmaxSurfacePoint>>> {
    if rabis.is_empty() || barriers.is_empty() {
        return Err(Error::invalid("grid", "Rabi and barrier grids must be non-empty"));
    }
    search.validate()?;
    let pairs: Vec<(f64, f64)> = rabis
        .iter()
        .flat_map(|&o| barriers.iter().map(move |&w| (o, w)))
        .collect();
    Ok(pairs
        .par_iter()
        .map(|&(o, w)| find_v_max(o, w, geometry, search))
        .collect())
}

/// Excited-state incidence on a two-level potential.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReverseDiode {
    pub v: f64,
    /// `|T^r_12|^2`: from the right in channel 2, out on the left in channel 1.
    pub transmission_right: f64,
    /// `|R^r_22|^2`.
    pub reflection_right: f64,
    /// `|T^l_12|^2`: from the left in channel 2, out on the right in channel 1.
    pub transmission_left: f64,
    /// `|R^l_22|^2`.
    pub reflection_left: f64,
}

/// Reverse-direction diode quantities of a two-level potential.
pub fn reverse_diode_check(left: &ScatteringResult, right: &ScatteringResult) -> Result<ReverseDiode> {
    for r in [left, right] {
        if r.dim() != 2 {
            return Err(Error::DimensionMismatch {
                expected: 2,
                found: r.dim(),
            });
        }
    }
    Ok(ReverseDiode {
        v: left.v,
        transmission_right: prob(&right.t_right, 0, 1),
        reflection_right: prob(&right.r_right, 1, 1),
        transmission_left: prob(&left.t_left, 0, 1),
        reflection_left: prob(&left.r_left, 1, 1),
    })
}
