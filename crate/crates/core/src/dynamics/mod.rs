//! Time-dependent wavepacket dynamics with decay from level 3 and photon recoil.
//!
//! Trajectories follow the quantum-jump unraveling of the master equation:
//! deterministic evolution under `H_eff = V - i (gamma / 2) |3><3|` with a
//! split-step Fourier integrator, interrupted by jumps `3 -> 1` that carry a
//! recoil kick `m v_rec u` with `u` drawn from `(3/8)(1 + u^2)`. A direct
//! density-matrix integrator on small grids cross-checks the unraveling.
//!
//! Channel indices are zero-based: level 1 is channel 0 and the decaying
//! level 3 is channel [`EXCITED`].

mod engine;
mod ensemble;
mod oracle;

pub use engine::{run_trajectory, JumpRecord, Propagator, StepControl, Trajectory};
pub use ensemble::{run_ensemble, trajectory_rng, EnsembleResult, SampleStats};
pub use oracle::{master_equation_oracle, DensityMatrix, OracleConfig, OracleResult, MAX_ORACLE_POINTS};

use std::f64::consts::PI;

use nalgebra::Matrix3;
use num_complex::Complex64;
use rand::Rng;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::physics::{PotentialSpec, UnitSystem};

/// Channel of the decaying level.
pub const EXCITED: usize = 2;

/// Largest `k dx` the grid may be asked to resolve.
pub const RESOLUTION_LIMIT: f64 = PI / 4.0;

/// Largest phase (rad) a single split substep may accumulate.
pub const STABILITY_LIMIT: f64 = 0.1;

/// Edge-to-peak amplitude ratio above which a packet counts as clipped.
const CLIP_RATIO: f64 = 1e-10;

/// Momentum components weaker than this fraction of the peak density do not
/// count toward the kinetic stability bound.
const SPECTRUM_FLOOR: f64 = 1e-10;

/// Uniform spatial grid with periodic Fourier conjugate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    /// um.
    pub x_min: f64,
    /// um, exclusive.
    pub x_max: f64,
    pub n: usize,
}

impl Grid {
    pub fn new(x_min: f64, x_max: f64, n: usize) -> Result<Self> {
        if !(x_min.is_finite() && x_max.is_finite() && x_max > x_min) {
            return Err(Error::invalid("grid", format!("need x_min < x_max, got [{x_min}, {x_max}]")));
        }
        if n < 4 || n % 2 != 0 {
            return Err(Error::invalid("grid", format!("point count must be even and >= 4, got {n}")));
        }
        Ok(Self { x_min, x_max, n })
    }

    /// Smallest grid on `[x_min, x_max)` whose size factors into 2, 3 and 5
    /// and whose spacing keeps `k_max dx` at 90% of [`RESOLUTION_LIMIT`].
    pub fn covering(x_min: f64, x_max: f64, k_max: f64) -> Result<Self> {
        if !(k_max > 0.0 && k_max.is_finite()) {
            return Err(Error::invalid("k_max", format!("must be positive, got {k_max}")));
        }
        let dx = 0.9 * RESOLUTION_LIMIT / k_max;
        let n = smooth_ceil(((x_max - x_min) / dx).ceil() as usize);
        Self::new(x_min, x_max, n)
    }

    pub fn dx(&self) -> f64 {
        (self.x_max - self.x_min) / self.n as f64
    }

    pub fn x(&self, j: usize) -> f64 {
        self.x_min + j as f64 * self.dx()
    }

    pub fn positions(&self) -> Vec<f64> {
        (0..self.n).map(|j| self.x(j)).collect()
    }

    /// Wavenumbers in FFT order; the Nyquist bin is reported as negative.
    pub fn wavenumbers(&self) -> Vec<f64> {
        fft_wavenumbers(self.n, self.dx())
    }

    pub fn length(&self) -> f64 {
        self.x_max - self.x_min
    }

    /// Fails with [`Error::StepTooCoarse`] unless `k_max dx < pi / 4`.
    pub fn check_resolution(&self, k_max: f64) -> Result<()> {
        if k_max * self.dx() >= RESOLUTION_LIMIT {
            return Err(Error::StepTooCoarse {
                step: self.dx(),
                wavenumber: k_max,
            });
        }
        Ok(())
    }
}

pub(crate) fn fft_wavenumbers(n: usize, dx: f64) -> Vec<f64> {
    let dk = 2.0 * PI / (n as f64 * dx);
    (0..n)
        .map(|j| if j < n / 2 { j as f64 * dk } else { (j as f64 - n as f64) * dk })
        .collect()
}

/// Smallest even integer `>= n` with no prime factor above 5.
pub(crate) fn smooth_ceil(n: usize) -> usize {
    let smooth = |mut m: usize| {
        for p in [2, 3, 5] {
            while m % p == 0 {
                m /= p;
            }
        }
        m == 1
    };
    let mut m = n.max(4);
    loop {
        if m % 2 == 0 && smooth(m) {
            return m;
        }
        m += 1;
    }
}

/// Gaussian initial state `exp(-(dv0 m / 2 hbar)(x - x0)^2 + i v0 m x / hbar)`
/// in channel 1.
///
/// `dv0` is the coefficient in the exponent, not a standard deviation; the
/// velocity spread of the density is [`InitialCondition::sigma_v`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitialCondition {
    /// um.
    pub x0: f64,
    /// um/us.
    pub v0: f64,
    /// um/us.
    pub dv0: f64,
}

impl InitialCondition {
    pub fn new(x0: f64, v0: f64, dv0: f64) -> Result<Self> {
        if !x0.is_finite() || !v0.is_finite() {
            return Err(Error::invalid("x0/v0", "must be finite"));
        }
        if !(dv0 > 0.0 && dv0.is_finite()) {
            return Err(Error::invalid("dv0", format!("must be positive, got {dv0}")));
        }
        Ok(Self { x0, v0, dv0 })
    }

    /// Coefficient `a` of `exp(-a (x - x0)^2)`, um^-2.
    pub fn exponent(&self, units: UnitSystem) -> f64 {
        0.5 * self.dv0 * units.m_over_hbar
    }

    /// Standard deviation of `|psi|^2` in position, um.
    pub fn sigma_x(&self, units: UnitSystem) -> f64 {
        0.5 / self.exponent(units).sqrt()
    }

    /// Standard deviation of the velocity distribution, um/us.
    pub fn sigma_v(&self, units: UnitSystem) -> f64 {
        (self.dv0 / (2.0 * units.m_over_hbar)).sqrt()
    }

    /// `m/hbar (|v0| + 4 sigma_v + v_rec)`, the largest wavenumber a run must resolve.
    pub fn k_max(&self, units: UnitSystem, v_rec: f64) -> f64 {
        units.m_over_hbar * (self.v0.abs() + 4.0 * self.sigma_v(units) + v_rec)
    }

    /// Grid for a full run: wide enough that no component moving at most
    /// `|v0| + 4 sigma_v + 2 v_rec` gets within `5 sigma_x` of an edge by
    /// `t_max`, fine enough for [`Self::k_max`].
    pub fn run_grid(&self, spec: &PotentialSpec, units: UnitSystem, params: &OpenSystemParams) -> Result<Grid> {
        params.validate()?;
        let (a, b) = spec.support();
        let reach = (self.v0.abs() + 4.0 * self.sigma_v(units) + 2.0 * params.v_rec) * params.t_max;
        let pad = 15.0 * self.sigma_x(units);
        Grid::covering(
            self.x0.min(a) - reach - pad,
            self.x0.max(b) + reach + pad,
            self.k_max(units, params.v_rec),
        )
    }
}

/// Decay and recoil parameters of an open-system run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpenSystemParams {
    /// Decay rate 3 -> 1, us^-1.
    pub gamma: f64,
    /// Recoil velocity, um/us.
    pub v_rec: f64,
    /// us.
    pub t_max: f64,
}

impl OpenSystemParams {
    pub fn new(gamma: f64, v_rec: f64, t_max: f64) -> Result<Self> {
        let p = Self { gamma, v_rec, t_max };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::invalid("gamma", format!("must be non-negative, got {}", self.gamma)));
        }
        if !(self.v_rec >= 0.0 && self.v_rec.is_finite()) {
            return Err(Error::invalid("v_rec", format!("must be non-negative, got {}", self.v_rec)));
        }
        if !(self.t_max > 0.0 && self.t_max.is_finite()) {
            return Err(Error::invalid("t_max", format!("must be positive, got {}", self.t_max)));
        }
        Ok(())
    }
}

/// Time to cover `distance` at speed `|v0|`.
pub fn crossing_time(distance: f64, v0: f64) -> Result<f64> {
    if v0 == 0.0 || !v0.is_finite() {
        return Err(Error::NonPositiveVelocity(v0.abs()));
    }
    Ok(distance / v0.abs())
}

/// A complete open-system run: potential, grid, initial packet and decay.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub spec: PotentialSpec,
    pub units: UnitSystem,
    pub grid: Grid,
    pub initial: InitialCondition,
    pub params: OpenSystemParams,
}

impl Scenario {
    /// Neon crossing the reference layout with Omega 0.2 Msi and W 10 Msi;
    /// the packet (dv0 = 0.1 cm/s) starts at 40 um for `v0 > 0` and at
    /// 360 um for `v0 < 0`, and runs for `400 um / |v0|`.
    pub fn reference(v0: f64, gamma: f64, v_rec: f64) -> Result<Self> {
        let units = UnitSystem::neon();
        let spec = crate::physics::build_three_level(0.2, 10.0, crate::physics::Geometry::reference())?;
        let x0 = if v0 > 0.0 { 40.0 } else { 360.0 };
        let initial = InitialCondition::new(x0, v0, crate::physics::cm_per_s(0.1))?;
        let params = OpenSystemParams::new(gamma, v_rec, crossing_time(400.0, v0)?)?;
        Self::on_run_grid(spec, units, initial, params)
    }

    /// Builds the scenario on [`InitialCondition::run_grid`].
    pub fn on_run_grid(
        spec: PotentialSpec,
        units: UnitSystem,
        initial: InitialCondition,
        params: OpenSystemParams,
    ) -> Result<Self> {
        let grid = initial.run_grid(&spec, units, &params)?;
        Ok(Self {
            spec,
            units,
            grid,
            initial,
            params,
        })
    }

    /// Shrunken layout for the density-matrix cross-check: 256 points on
    /// `[-10.4, 15.2)` um, 1 um profiles, Omega 1 Msi, W 1 Msi,
    /// gamma = 3000 s^-1, v_rec = 0.3 cm/s, v0 = 1.2 cm/s, t_max = 1350 us.
    pub fn miniature() -> Result<Self> {
        let geometry = crate::physics::Geometry {
            x_p: 6.0,
            x_s: 4.0,
            x_w: 10.0,
            width: 1.0,
        };
        let units = UnitSystem::neon();
        Ok(Self {
            spec: crate::physics::build_three_level(1.0, 1.0, geometry)?,
            units,
            grid: Grid::new(-10.4, 15.2, 256)?,
            initial: InitialCondition::new(-3.5, 0.012, 2.0 * 0.5 / units.m_over_hbar)?,
            params: OpenSystemParams::new(3e-3, 0.003, 1350.0)?,
        })
    }

    pub fn packet(&self) -> Result<WavePacket> {
        let ic = self.initial;
        initial_wavepacket(self.grid, self.units, ic.x0, ic.v0, ic.dv0)
    }

    pub fn k_max(&self) -> f64 {
        self.initial.k_max(self.units, self.params.v_rec)
    }

    /// Propagator for this scenario. The edge guard defaults to five
    /// position widths when the control leaves it unset and steps adapt.
    pub fn propagator(&self, mut control: StepControl) -> Result<Propagator> {
        if control.edge_guard.is_none() && control.fixed_dt.is_none() {
            control.edge_guard = Some(5.0 * self.initial.sigma_x(self.units));
        }
        Propagator::new(&self.spec, self.units, self.grid, self.params, self.k_max(), control)
    }
}

/// Three-channel wavefunction on a grid. Norms use `sum |psi|^2 dx`.
#[derive(Debug, Clone, PartialEq)]
pub struct WavePacket {
    pub grid: Grid,
    pub psi: [Vec<Complex64>; 3],
    /// us.
    pub t: f64,
}

impl WavePacket {
    pub fn zeros(grid: Grid) -> Self {
        let z = vec![Complex64::new(0.0, 0.0); grid.n];
        Self {
            grid,
            psi: [z.clone(), z.clone(), z],
            t: 0.0,
        }
    }

    pub fn populations(&self) -> [f64; 3] {
        let dx = self.grid.dx();
        std::array::from_fn(|c| self.psi[c].iter().map(|z| z.norm_sqr()).sum::<f64>() * dx)
    }

    pub fn norm_sqr(&self) -> f64 {
        self.populations().iter().sum()
    }

    pub fn normalize(&mut self) -> Result<()> {
        let n = self.norm_sqr();
        if !(n > 0.0 && n.is_finite()) {
            return Err(Error::invalid("wave packet", format!("cannot normalize norm^2 {n}")));
        }
        let s = 1.0 / n.sqrt();
        self.psi.iter_mut().flatten().for_each(|z| *z *= s);
        Ok(())
    }

    /// `<x>` over all channels, normalized by the current norm.
    pub fn mean_position(&self) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for ch in &self.psi {
            for (j, z) in ch.iter().enumerate() {
                num += self.grid.x(j) * z.norm_sqr();
                den += z.norm_sqr();
            }
        }
        num / den
    }

    /// Probability per FFT bin of channel `c`; sums to that channel's population.
    pub fn momentum_spectrum(&self, c: usize) -> Vec<f64> {
        let mut buf = self.psi[c].clone();
        FftPlanner::new().plan_fft_forward(self.grid.n).process(&mut buf);
        let scale = self.grid.dx() / self.grid.n as f64;
        buf.iter().map(|z| z.norm_sqr() * scale).collect()
    }

    /// First momentum moment over all channels divided by `m / hbar`.
    pub fn mean_velocity(&self, units: UnitSystem) -> f64 {
        let k = self.grid.wavenumbers();
        let mut num = 0.0;
        let mut den = 0.0;
        for c in 0..3 {
            for (p, kk) in self.momentum_spectrum(c).iter().zip(&k) {
                num += p * kk;
                den += p;
            }
        }
        num / den / units.m_over_hbar
    }

    /// Largest `|k|` whose density exceeds `1e-10` of the peak.
    pub fn significant_wavenumber(&self) -> f64 {
        let k = self.grid.wavenumbers();
        let spectra: Vec<Vec<f64>> = (0..3).map(|c| self.momentum_spectrum(c)).collect();
        let peak = spectra.iter().flatten().cloned().fold(0.0, f64::max);
        let mut k_sig: f64 = 0.0;
        for s in &spectra {
            for (p, kk) in s.iter().zip(&k) {
                if *p > SPECTRUM_FLOOR * peak {
                    k_sig = k_sig.max(kk.abs());
                }
            }
        }
        k_sig
    }
}

/// Normalized Gaussian packet in channel 1.
pub fn initial_wavepacket(grid: Grid, units: UnitSystem, x0: f64, v0: f64, dv0: f64) -> Result<WavePacket> {
    let ic = InitialCondition::new(x0, v0, dv0)?;
    let a = ic.exponent(units);
    let k0 = units.wavenumber(v0);
    let mut wp = WavePacket::zeros(grid);
    for (j, z) in wp.psi[0].iter_mut().enumerate() {
        let x = grid.x(j);
        *z = Complex64::from_polar((-a * (x - x0).powi(2)).exp(), k0 * x);
    }
    let amp = |j: usize| wp.psi[0][j].norm();
    let peak = wp.psi[0].iter().map(|z| z.norm()).fold(0.0, f64::max);
    let edge = amp(0).max(amp(grid.n - 1));
    let ratio = if peak > 0.0 { edge / peak } else { 1.0 };
    if !(ratio < CLIP_RATIO) {
        return Err(Error::PacketClipped(ratio));
    }
    wp.normalize()?;
    Ok(wp)
}

/// `exp(-i H_eff dt)` for `H_eff = V - i (gamma / 2) |3><3|`.
pub fn local_propagator(v: &Matrix3<f64>, gamma: f64, dt: f64) -> Matrix3<Complex64> {
    let decay = Complex64::new((-0.5 * gamma * dt).exp(), 0.0);
    if v.iter().all(|&x| x == 0.0) {
        let one = Complex64::new(1.0, 0.0);
        return Matrix3::from_diagonal(&nalgebra::Vector3::new(one, one, decay));
    }
    let mut h: Matrix3<Complex64> = v.map(|x| Complex64::new(x, 0.0));
    h[(EXCITED, EXCITED)] -= Complex64::new(0.0, 0.5 * gamma);
    (h * Complex64::new(0.0, -dt)).exp()
}

pub(crate) fn kinetic_phase(units: UnitSystem, k: f64, dt: f64) -> f64 {
    0.5 * k * k / units.m_over_hbar * dt
}

/// One Strang step: half kinetic, full `exp(-i H_eff dt)` pointwise, half
/// kinetic.
///
/// Requires both the potential phase `dt max|V|` and the half-step kinetic
/// phase at the packet's largest significant wavenumber to stay below
/// [`STABILITY_LIMIT`].
pub fn effective_step(
    wp: &WavePacket,
    spec: &PotentialSpec,
    units: UnitSystem,
    gamma: f64,
    dt: f64,
) -> Result<WavePacket> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::invalid("dt", format!("must be positive, got {dt}")));
    }
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return Err(Error::invalid("gamma", format!("must be non-negative, got {gamma}")));
    }
    let grid = wp.grid;
    let potentials: Vec<Matrix3<f64>> = (0..grid.n).map(|j| spec.eval(grid.x(j))).collect();
    let v_max = potentials.iter().map(crate::physics::spectral_radius).fold(0.0, f64::max);
    let kinetic = kinetic_phase(units, wp.significant_wavenumber(), 0.5 * dt);
    let phase = (v_max * dt).max(kinetic);
    if !(phase < STABILITY_LIMIT) {
        return Err(Error::StabilityBound { dt, phase });
    }

    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(grid.n);
    let inv = planner.plan_fft_inverse(grid.n);
    let half: Vec<Complex64> = grid
        .wavenumbers()
        .iter()
        .map(|&k| Complex64::from_polar(1.0 / grid.n as f64, -kinetic_phase(units, k, 0.5 * dt)))
        .collect();
    let mut out = wp.clone();
    let kick = |psi: &mut [Vec<Complex64>; 3]| {
        for ch in psi.iter_mut() {
            fwd.process(ch);
            ch.iter_mut().zip(&half).for_each(|(z, m)| *z *= m);
            inv.process(ch);
        }
    };
    kick(&mut out.psi);
    for (j, v) in potentials.iter().enumerate() {
        let u = local_propagator(v, gamma, dt);
        let s = nalgebra::Vector3::new(out.psi[0][j], out.psi[1][j], out.psi[2][j]);
        let s = u * s;
        for c in 0..3 {
            out.psi[c][j] = s[c];
        }
    }
    kick(&mut out.psi);
    out.t += dt;
    Ok(out)
}

/// CDF of the emission-direction density `(3/8)(1 + u^2)` on `[-1, 1]`.
pub fn recoil_cdf(u: f64) -> f64 {
    let u = u.clamp(-1.0, 1.0);
    0.5 + 0.375 * (u + u * u * u / 3.0)
}

/// Inverse of [`recoil_cdf`]: the real root of `u^3 + 3u = 8 (y - 1/2)`.
pub fn recoil_quantile(y: f64) -> f64 {
    let c = 8.0 * (y.clamp(0.0, 1.0) - 0.5);
    // Cardano for u^3 + 3u - c = 0; one Newton step cleans up the rounding
    let h = 0.5 * c;
    let s = (h * h + 1.0).sqrt();
    let mut u = (h + s).cbrt() + (h - s).cbrt();
    u -= (u * u * u + 3.0 * u - c) / (3.0 * u * u + 3.0);
    u.clamp(-1.0, 1.0)
}

/// Emission-direction cosine drawn by inverting [`recoil_cdf`].
pub fn sample_recoil_u<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    recoil_quantile(rng.random::<f64>())
}

/// Collapse into channel 1 with a recoil kick:
/// `psi_1' = exp(i m v_rec u x / hbar) psi_3 / |psi_3|`.
pub fn apply_jump(wp: &WavePacket, u: f64, v_rec: f64, units: UnitSystem) -> Result<WavePacket> {
    let mut out = wp.clone();
    jump_in_place(&mut out.psi, &wp.grid, 0..wp.grid.n, units.wavenumber(v_rec * u))?;
    Ok(out)
}

pub(crate) fn jump_in_place(
    psi: &mut [Vec<Complex64>; 3],
    grid: &Grid,
    range: std::ops::Range<usize>,
    kick: f64,
) -> Result<()> {
    let norm = psi[EXCITED][range.clone()].iter().map(|z| z.norm_sqr()).sum::<f64>() * grid.dx();
    if !(norm > 0.0) {
        return Err(Error::EmptyExcitedChannel);
    }
    let s = 1.0 / norm.sqrt();
    for j in range {
        let z = psi[EXCITED][j];
        psi[0][j] = z * Complex64::from_polar(s, kick * grid.x(j));
        psi[1][j] = Complex64::new(0.0, 0.0);
        psi[EXCITED][j] = Complex64::new(0.0, 0.0);
    }
    Ok(())
}

/// Weight of FFT bin `j` in a right-moving sum: full for `0 < k < k_Nyquist`,
/// half for `k = 0` and the Nyquist bin.
pub(crate) fn right_weight(j: usize, n: usize) -> f64 {
    if j == 0 || j == n / 2 {
        0.5
    } else if j < n / 2 {
        1.0
    } else {
        0.0
    }
}

/// Probability of moving right in channels 1 or 3, relative to the packet's
/// total norm. Channel 2 counts only in the normalization.
pub fn p_r(wp: &WavePacket) -> f64 {
    let n = wp.grid.n;
    let mut right = 0.0;
    let mut total = 0.0;
    for c in 0..3 {
        let s = wp.momentum_spectrum(c);
        total += s.iter().sum::<f64>();
        if c != 1 {
            right += s.iter().enumerate().map(|(j, p)| p * right_weight(j, n)).sum::<f64>();
        }
    }
    right / total
}
