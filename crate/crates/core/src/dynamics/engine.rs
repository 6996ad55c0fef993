//! Quantum-jump trajectory engine.
//!
//! Steps are Strang splits with consecutive half-kinetic factors fused, so a
//! step costs one forward and one inverse transform per channel. Step sizes
//! are dyadic fractions of a top step fixed by the kinetic bound; a finer
//! level is used only while the occupied part of the wavefunction overlaps
//! strong coupling. Time is counted in integer ticks, which keeps every
//! level boundary exact.
//!
//! Away from the potential the wavefunction usually occupies a small part of
//! the grid. The engine transforms only padded windows around the occupied
//! clusters and zeroes amplitudes below `1e-13` outside them.

use std::collections::HashMap;
use std::ops::Range;
use std::sync::Arc;

use nalgebra::{Matrix3, Vector3};
use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::{
    kinetic_phase, local_propagator, right_weight, sample_recoil_u, smooth_ceil, Grid,
    OpenSystemParams, WavePacket, EXCITED, STABILITY_LIMIT,
};
use crate::error::{Error, Result};
use crate::physics::{spectral_radius, PotentialSpec, UnitSystem};

/// Point density `sum_c |psi_c|^2`, relative to the peak density, below
/// which amplitudes are dropped.
const TRUNCATION: f64 = 1e-20;

/// Channel density (um^-1) below which a channel does not constrain the step.
const DENSITY_FLOOR: f64 = 1e-6;

/// Steps between window updates.
const RESCAN: u64 = 8;

/// Extra points around each occupied cluster on top of the drift allowance.
const BASE_MARGIN: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepControl {
    /// Largest potential phase per step over the occupied region, rad.
    pub phase_bound: f64,
    /// Largest kinetic phase per half step at `k_max`, rad.
    pub kinetic_bound: f64,
    /// Halvings used to place a jump inside the step where it occurs.
    pub bisections: u32,
    /// Use this step everywhere instead of adapting, us.
    pub fixed_dt: Option<f64>,
    /// Transform only the occupied parts of the grid.
    pub windows: bool,
    /// Fail once the packet comes within this distance (um) of a grid edge.
    /// `None` treats the grid as a ring.
    pub edge_guard: Option<f64>,
    /// Record populations at `t_max * i / samples` for `i = 1..=samples`.
    pub samples: usize,
}

impl Default for StepControl {
    fn default() -> Self {
        Self {
            phase_bound: 0.05,
            kinetic_bound: STABILITY_LIMIT,
            bisections: 4,
            fixed_dt: None,
            windows: true,
            edge_guard: None,
            samples: 0,
        }
    }
}

impl StepControl {
    pub fn fixed(dt: f64) -> Self {
        Self {
            fixed_dt: Some(dt),
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.phase_bound > 0.0 && self.phase_bound < STABILITY_LIMIT) {
            return Err(Error::invalid("phase_bound", format!("must lie in (0, {STABILITY_LIMIT}), got {}", self.phase_bound)));
        }
        if !(self.kinetic_bound > 0.0 && self.kinetic_bound <= STABILITY_LIMIT) {
            return Err(Error::invalid("kinetic_bound", format!("must lie in (0, {STABILITY_LIMIT}], got {}", self.kinetic_bound)));
        }
        if self.bisections > 12 {
            return Err(Error::invalid("bisections", format!("at most 12, got {}", self.bisections)));
        }
        if let Some(dt) = self.fixed_dt {
            if !(dt > 0.0 && dt.is_finite()) {
                return Err(Error::invalid("dt", format!("must be positive, got {dt}")));
            }
        }
        if let Some(g) = self.edge_guard {
            if !(g >= 0.0 && g.is_finite()) {
                return Err(Error::invalid("edge_guard", format!("must be non-negative, got {g}")));
            }
        }
        Ok(())
    }
}

/// One spontaneous emission.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JumpRecord {
    /// us.
    pub t: f64,
    /// Emission-direction cosine.
    pub u: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// Normalized state at `t_max`.
    pub state: WavePacket,
    pub jumps: Vec<JumpRecord>,
    pub p_r: f64,
    /// Probability per FFT bin in channels 1 and 3 of the final state.
    pub spectrum: Vec<f64>,
    /// Normalized channel populations at the sample times.
    pub samples: Vec<[f64; 3]>,
    pub steps: u64,
}

/// Immutable propagation tables for one potential, grid and step plan.
/// Shared by all trajectories of an ensemble.
pub struct Propagator {
    grid: Grid,
    units: UnitSystem,
    params: OpenSystemParams,
    control: StepControl,
    dt0: f64,
    top_steps: u64,
    depth: usize,
    shift: u32,
    support: Range<usize>,
    /// Column norms of `V` at each support point.
    reach: Vec<[f64; 3]>,
    /// `exp(-i H_eff dt_l)` per level, over the support.
    local: Vec<Vec<Matrix3<Complex64>>>,
    decay: Vec<Complex64>,
    margin: usize,
    guard: Option<usize>,
}

impl Propagator {
    /// `k_max` is the largest wavenumber the run must resolve; it sets the
    /// grid check and the top step.
    pub fn new(
        spec: &PotentialSpec,
        units: UnitSystem,
        grid: Grid,
        params: OpenSystemParams,
        k_max: f64,
        control: StepControl,
    ) -> Result<Self> {
        params.validate()?;
        control.validate()?;
        grid.check_resolution(k_max)?;
        let dx = grid.dx();
        let support = if spec.is_zero() {
            0..0
        } else {
            let (a, b) = spec.support();
            let lo = ((a - grid.x_min) / dx).ceil().clamp(0.0, grid.n as f64) as usize;
            let hi = (((b - grid.x_min) / dx).floor() + 1.0).clamp(0.0, grid.n as f64) as usize;
            lo..hi.max(lo)
        };
        let potentials: Vec<Matrix3<f64>> = support.clone().map(|j| spec.eval(grid.x(j))).collect();
        let reach: Vec<[f64; 3]> = potentials
            .iter()
            .map(|v| std::array::from_fn(|c| v.column(c).norm()))
            .collect();
        let reach_peak = reach.iter().flatten().cloned().fold(0.0, f64::max);
        let kinetic_top = kinetic_phase(units, k_max, 1.0);

        let samples = control.samples.max(1) as u64;
        let (dt0, top_steps, depth) = match control.fixed_dt {
            Some(dt) => {
                let steps = (params.t_max / dt).round();
                if steps < 1.0 || (steps * dt - params.t_max).abs() > 1e-9 * params.t_max {
                    return Err(Error::invalid("dt", format!("t_max {} is not a multiple of dt {dt}", params.t_max)));
                }
                let steps = steps as u64;
                if steps % samples != 0 {
                    return Err(Error::invalid("samples", format!("{samples} does not divide the {steps} steps")));
                }
                let v_peak = potentials.iter().map(spectral_radius).fold(0.0, f64::max);
                let phase = (v_peak * dt).max(kinetic_top * 0.5 * dt);
                if !(phase < STABILITY_LIMIT) {
                    return Err(Error::StabilityBound { dt, phase });
                }
                (dt, steps, 0)
            }
            None => {
                let dt_kin = 2.0 * control.kinetic_bound / kinetic_top;
                let steps = ((params.t_max / dt_kin).ceil() as u64).max(1).div_ceil(samples) * samples;
                let dt0 = params.t_max / steps as f64;
                let ratio = dt0 * reach_peak / control.phase_bound;
                let depth = if ratio > 1.0 { ratio.log2().ceil() as usize } else { 0 };
                if depth > 40 {
                    return Err(Error::ResourceBound(format!("{depth} step levels")));
                }
                (dt0, steps, depth)
            }
        };
        let levels = depth + control.bisections as usize + 1;
        let shift = (levels - 1) as u32;
        if top_steps.checked_shl(shift + 1).is_none_or(|t| t >> (shift + 1) != top_steps) {
            return Err(Error::ResourceBound("time ticks overflow".into()));
        }
        let dts: Vec<f64> = (0..levels).map(|l| dt0 / (1u64 << l) as f64).collect();
        let local: Vec<Vec<Matrix3<Complex64>>> = dts
            .iter()
            .map(|&dt| potentials.par_iter().map(|v| local_propagator(v, params.gamma, dt)).collect())
            .collect();
        let decay = dts
            .iter()
            .map(|&dt| Complex64::new((-0.5 * params.gamma * dt).exp(), 0.0))
            .collect();

        // fastest significant drift is about k_max; allow double over a rescan interval
        let drift = 2.0 * k_max / units.m_over_hbar * dt0 * RESCAN as f64;
        let margin = BASE_MARGIN + (drift / dx).ceil() as usize;
        let guard = control.edge_guard.map(|g| (g / dx).ceil() as usize);
        Ok(Self {
            grid,
            units,
            params,
            control,
            dt0,
            top_steps,
            depth,
            shift,
            support,
            reach,
            local,
            decay,
            margin,
            guard,
        })
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn params(&self) -> OpenSystemParams {
        self.params
    }

    pub fn control(&self) -> StepControl {
        self.control
    }

    /// Largest step, us.
    pub fn top_step(&self) -> f64 {
        self.dt0
    }

    /// Number of halvings available below the top step for potential
    /// resolution (bisection levels come on top).
    pub fn depth(&self) -> usize {
        self.depth
    }

    fn levels(&self) -> usize {
        self.local.len()
    }

    fn step_ticks(&self, level: usize) -> u64 {
        1u64 << (self.shift as usize + 1 - level)
    }

    fn tick(&self) -> f64 {
        self.dt0 / (1u64 << (self.shift + 1)) as f64
    }

    fn total_ticks(&self) -> u64 {
        self.top_steps << (self.shift + 1)
    }

    /// Sample time stamps, us.
    pub fn sample_times(&self) -> Vec<f64> {
        let s = self.control.samples;
        (1..=s).map(|i| self.params.t_max * i as f64 / s as f64).collect()
    }

    /// Runs one trajectory from `wp0` (normalized first) to `t_max`.
    pub fn run<R: Rng + ?Sized>(&self, wp0: &WavePacket, rng: &mut R) -> Result<Trajectory> {
        if wp0.grid != self.grid {
            return Err(Error::invalid("wave packet", "grid differs from the propagator grid"));
        }
        let mut start = wp0.clone();
        start.normalize()?;
        let mut run = Run::new(self, start.psi);
        run.rescan()?;
        let gamma = self.params.gamma;
        let total = self.total_ticks();
        let sample_ticks = (self.control.samples > 0).then(|| total / self.control.samples as u64);
        let draw = |rng: &mut R| 1.0 - rng.random::<f64>();

        let mut t = 0u64;
        let mut r = draw(rng);
        let mut norm = 1.0;
        let mut since = 0u64;
        let mut steps = 0u64;
        let mut jumps = Vec::new();
        let mut samples = Vec::new();
        while t < total {
            if since >= RESCAN {
                run.rescan()?;
                since = 0;
            }
            let barrier = sample_ticks.map_or(total, |s| (t / s + 1) * s);
            let level = run.choose_level(t, barrier);
            let dt = self.dt0 / (1u64 << level) as f64;
            since += 1;
            steps += 1;
            if gamma > 0.0 && norm * (-gamma * dt).exp() * (1.0 - 1e-12) <= r {
                let saved = run.snapshot();
                run.step(level);
                let after = run.norm();
                if after > r {
                    t += self.step_ticks(level);
                    norm = after;
                } else {
                    run.restore(saved);
                    let deepest = (level + self.control.bisections as usize).min(self.levels() - 1);
                    let mut sub = level;
                    while sub < deepest {
                        sub += 1;
                        let snap = run.snapshot();
                        run.step(sub);
                        steps += 1;
                        if run.norm() > r {
                            t += self.step_ticks(sub);
                        } else {
                            run.restore(snap);
                        }
                    }
                    run.step(sub);
                    steps += 1;
                    t += self.step_ticks(sub);
                    run.flush();
                    let u = sample_recoil_u(rng);
                    run.jump(self.units.wavenumber(self.params.v_rec * u))?;
                    jumps.push(JumpRecord {
                        t: t as f64 * self.tick(),
                        u,
                    });
                    r = draw(rng);
                    norm = 1.0;
                    run.rescan()?;
                    since = 0;
                }
            } else {
                run.step(level);
                t += self.step_ticks(level);
                if gamma > 0.0 {
                    norm = run.norm();
                }
            }
            if sample_ticks.is_some_and(|s| t % s == 0) {
                let p = run.populations();
                let sum: f64 = p.iter().sum();
                samples.push(p.map(|x| x / sum));
            }
        }
        run.flush();
        run.check_edges(run.peak_density())?;
        let mut state = WavePacket {
            grid: self.grid,
            psi: run.psi,
            t: self.params.t_max,
        };
        state.normalize()?;
        let (p_r, spectrum) = final_spectrum(&state);
        Ok(Trajectory {
            state,
            jumps,
            p_r,
            spectrum,
            samples,
            steps,
        })
    }
}

/// `p_r` and the channel 1 + 3 spectrum of a normalized state.
fn final_spectrum(state: &WavePacket) -> (f64, Vec<f64>) {
    let n = state.grid.n;
    let s1 = state.momentum_spectrum(0);
    let s3 = state.momentum_spectrum(EXCITED);
    let spectrum: Vec<f64> = s1.iter().zip(&s3).map(|(a, b)| a + b).collect();
    let p = spectrum.iter().enumerate().map(|(j, p)| p * right_weight(j, n)).sum();
    (p, spectrum)
}

/// Runs a single trajectory with default step control. The kinetic bound
/// uses the packet's largest significant wavenumber plus the recoil kick;
/// the jump stream is stream 0 of `seed` (see `trajectory_rng`).
pub fn run_trajectory(
    spec: &PotentialSpec,
    units: UnitSystem,
    params: &OpenSystemParams,
    wp0: &WavePacket,
    seed: u64,
) -> Result<Trajectory> {
    let k_max = wp0.significant_wavenumber() + units.wavenumber(params.v_rec);
    let prop = Propagator::new(spec, units, wp0.grid, *params, k_max, StepControl::default())?;
    prop.run(wp0, &mut super::trajectory_rng(seed, 0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Span {
    start: usize,
    len: usize,
}

impl Span {
    fn end(&self) -> usize {
        self.start + self.len
    }

    fn range(&self) -> Range<usize> {
        self.start..self.end()
    }
}

#[derive(Clone)]
struct Snapshot {
    psi: [Vec<Complex64>; 3],
    pending: u64,
    spans: Vec<Span>,
    active: Vec<[bool; 3]>,
    full: bool,
    level: usize,
}

type Plan = (Arc<dyn Fft<f64>>, Arc<dyn Fft<f64>>);

struct Run<'a> {
    prop: &'a Propagator,
    psi: [Vec<Complex64>; 3],
    /// Kinetic ticks owed from the last half step.
    pending: u64,
    spans: Vec<Span>,
    active: Vec<[bool; 3]>,
    full: bool,
    level: usize,
    planner: FftPlanner<f64>,
    plans: HashMap<usize, Plan>,
    multipliers: HashMap<(usize, u64), Arc<Vec<Complex64>>>,
    scratch: Vec<Complex64>,
}

impl<'a> Run<'a> {
    fn new(prop: &'a Propagator, psi: [Vec<Complex64>; 3]) -> Self {
        let n = prop.grid.n;
        Self {
            prop,
            psi,
            pending: 0,
            spans: vec![Span { start: 0, len: n }],
            active: vec![[true; 3]],
            full: true,
            level: 0,
            planner: FftPlanner::new(),
            plans: HashMap::new(),
            multipliers: HashMap::new(),
            scratch: Vec::new(),
        }
    }

    fn plan(&mut self, len: usize) -> Plan {
        let planner = &mut self.planner;
        self.plans
            .entry(len)
            .or_insert_with(|| (planner.plan_fft_forward(len), planner.plan_fft_inverse(len)))
            .clone()
    }

    fn multiplier(&mut self, len: usize, ticks: u64) -> Arc<Vec<Complex64>> {
        let prop = self.prop;
        self.multipliers
            .entry((len, ticks))
            .or_insert_with(|| {
                let tau = ticks as f64 * prop.tick();
                let scale = 1.0 / len as f64;
                Arc::new(
                    super::fft_wavenumbers(len, prop.grid.dx())
                        .iter()
                        .map(|&k| Complex64::from_polar(scale, -kinetic_phase(prop.units, k, tau)))
                        .collect(),
                )
            })
            .clone()
    }

    fn kinetic(&mut self, ticks: u64) {
        if ticks == 0 {
            return;
        }
        for w in 0..self.spans.len() {
            let span = self.spans[w];
            let (fwd, inv) = self.plan(span.len);
            let mult = self.multiplier(span.len, ticks);
            let need = fwd.get_inplace_scratch_len().max(inv.get_inplace_scratch_len());
            if self.scratch.len() < need {
                self.scratch.resize(need, Complex64::new(0.0, 0.0));
            }
            for c in 0..3 {
                if !self.active[w][c] {
                    continue;
                }
                let seg = &mut self.psi[c][span.range()];
                fwd.process_with_scratch(seg, &mut self.scratch[..need]);
                seg.iter_mut().zip(mult.iter()).for_each(|(z, m)| *z *= m);
                inv.process_with_scratch(seg, &mut self.scratch[..need]);
            }
        }
    }

    fn potential(&mut self, level: usize) {
        let prop = self.prop;
        let table = &prop.local[level];
        let decay = prop.decay[level];
        let sup = prop.support.clone();
        let [p0, p1, p2] = &mut self.psi;
        for (w, span) in self.spans.iter().enumerate() {
            let inner = span.start.max(sup.start)..span.end().min(sup.end);
            for j in inner.clone() {
                let s = table[j - sup.start] * Vector3::new(p0[j], p1[j], p2[j]);
                p0[j] = s[0];
                p1[j] = s[1];
                p2[j] = s[2];
            }
            if self.active[w][EXCITED] && decay.re != 1.0 {
                let (a, b) = if inner.is_empty() { (span.end(), span.end()) } else { (inner.start, inner.end) };
                p2[span.start..a].iter_mut().for_each(|z| *z *= decay);
                p2[b..span.end()].iter_mut().for_each(|z| *z *= decay);
            }
        }
    }

    fn step(&mut self, level: usize) {
        let half = self.prop.step_ticks(level) / 2;
        self.kinetic(self.pending + half);
        self.potential(level);
        self.pending = half;
    }

    fn flush(&mut self) {
        let p = self.pending;
        self.kinetic(p);
        self.pending = 0;
    }

    fn populations(&self) -> [f64; 3] {
        let dx = self.prop.grid.dx();
        std::array::from_fn(|c| {
            self.spans
                .iter()
                .map(|s| self.psi[c][s.range()].iter().map(|z| z.norm_sqr()).sum::<f64>())
                .sum::<f64>()
                * dx
        })
    }

    fn norm(&self) -> f64 {
        self.populations().iter().sum()
    }

    fn jump(&mut self, kick: f64) -> Result<()> {
        let grid = self.prop.grid;
        let norm: f64 = self
            .spans
            .iter()
            .map(|s| self.psi[EXCITED][s.range()].iter().map(|z| z.norm_sqr()).sum::<f64>())
            .sum::<f64>()
            * grid.dx();
        if !(norm > 0.0) {
            return Err(Error::EmptyExcitedChannel);
        }
        let scale = 1.0 / norm.sqrt();
        let zero = Complex64::new(0.0, 0.0);
        let [p0, p1, p2] = &mut self.psi;
        for s in &self.spans {
            for j in s.range() {
                p0[j] = p2[j] * Complex64::from_polar(scale, kick * grid.x(j));
                p1[j] = zero;
                p2[j] = zero;
            }
        }
        Ok(())
    }

    fn snapshot(&self) -> Snapshot {
        Snapshot {
            psi: self.psi.clone(),
            pending: self.pending,
            spans: self.spans.clone(),
            active: self.active.clone(),
            full: self.full,
            level: self.level,
        }
    }

    fn restore(&mut self, s: Snapshot) {
        self.psi = s.psi;
        self.pending = s.pending;
        self.spans = s.spans;
        self.active = s.active;
        self.full = s.full;
        self.level = s.level;
    }

    /// Smallest level allowed by the occupied region, aligned with `t` and
    /// not crossing `barrier`.
    fn choose_level(&self, t: u64, barrier: u64) -> usize {
        let mut level = self.level;
        loop {
            let s = self.prop.step_ticks(level);
            if t % s == 0 && t + s <= barrier {
                return level;
            }
            level += 1;
        }
    }

    fn density(&self, j: usize) -> f64 {
        self.psi[0][j].norm_sqr() + self.psi[1][j].norm_sqr() + self.psi[2][j].norm_sqr()
    }

    fn peak_density(&self) -> f64 {
        self.spans
            .iter()
            .flat_map(|s| s.range())
            .map(|j| self.density(j))
            .fold(0.0, f64::max)
    }

    fn check_edges(&self, peak: f64) -> Result<()> {
        let Some(g) = self.prop.guard else {
            return Ok(());
        };
        let n = self.prop.grid.n;
        let g = g.min(n / 2);
        let edge = (0..g).chain(n - g..n).map(|j| self.density(j)).fold(0.0, f64::max);
        if edge > TRUNCATION * peak {
            return Err(Error::PacketClipped((edge / peak).sqrt()));
        }
        Ok(())
    }

    /// Recomputes the windows, drops amplitudes outside them and updates the
    /// step level from the coupling seen by each occupied channel.
    fn rescan(&mut self) -> Result<()> {
        let peak = self.peak_density();
        self.check_edges(peak)?;
        let floor = TRUNCATION * peak;
        let prop = self.prop;
        let n = prop.grid.n;
        let m = prop.margin;

        let mut clusters: Vec<(usize, usize)> = Vec::new();
        for span in &self.spans {
            for j in span.range() {
                if self.density(j) > floor {
                    match clusters.last_mut() {
                        Some(last) if j <= last.1 + 2 * m + 1 => last.1 = j,
                        _ => clusters.push((j, j)),
                    }
                }
            }
        }
        if clusters.is_empty() {
            return Err(Error::invalid("wave packet", "no amplitude left on the grid"));
        }

        let fitted = self.fit_spans(&clusters).filter(|spans| {
            prop.control.windows && spans.iter().map(|s| s.len).sum::<usize>() <= n / 2
        });
        let full = fitted.is_none();
        let spans = fitted.unwrap_or_else(|| vec![Span { start: 0, len: n }]);

        let old = std::mem::replace(&mut self.spans, spans);
        if !full {
            let mut k = 0;
            for s in &old {
                for j in s.range() {
                    while k < self.spans.len() && self.spans[k].end() <= j {
                        k += 1;
                    }
                    let covered = k < self.spans.len() && self.spans[k].start <= j;
                    if !covered {
                        for c in 0..3 {
                            self.psi[c][j] = Complex64::new(0.0, 0.0);
                        }
                    }
                }
            }
        }
        self.full = full;

        let sup = prop.support.clone();
        let mut active = Vec::with_capacity(self.spans.len());
        let mut reach: f64 = 0.0;
        for span in &self.spans {
            let coupled = span.start < sup.end && sup.start < span.end();
            let mut flags = [coupled; 3];
            for (c, flag) in flags.iter_mut().enumerate() {
                let ch = &self.psi[c][span.range()];
                let mut dense = false;
                let mut j = 0;
                while j < ch.len() {
                    if ch[j].norm_sqr() <= DENSITY_FLOOR {
                        j += 1;
                        continue;
                    }
                    let first = j;
                    // runs closer than the margin share one dilated range
                    let mut last = j;
                    while j < ch.len() && j <= last + m {
                        if ch[j].norm_sqr() > DENSITY_FLOOR {
                            last = j;
                        }
                        j += 1;
                    }
                    dense = true;
                    let lo = (span.start + first).saturating_sub(m).max(sup.start);
                    let hi = (span.start + last + m + 1).min(sup.end);
                    for k in lo..hi.max(lo) {
                        reach = reach.max(prop.reach[k - sup.start][c]);
                    }
                }
                if dense {
                    *flag = true;
                } else if !*flag {
                    *flag = ch.iter().any(|z| z.norm_sqr() > 0.0);
                }
            }
            active.push(flags);
        }
        self.active = active;
        self.level = if prop.control.fixed_dt.is_some() {
            0
        } else {
            let ratio = prop.dt0 * reach / prop.control.phase_bound;
            if ratio > 1.0 {
                (ratio.log2().ceil() as usize).min(prop.depth)
            } else {
                0
            }
        };
        Ok(())
    }

    /// Padded, size-rounded, non-overlapping spans around the clusters, or
    /// `None` when one would leave the grid.
    fn fit_spans(&self, clusters: &[(usize, usize)]) -> Option<Vec<Span>> {
        let n = self.prop.grid.n as isize;
        let m = self.prop.margin as isize;
        let round = |&(a, b): &(isize, isize)| {
            let len = smooth_ceil((b - a) as usize) as isize;
            let start = a - (len - (b - a)) / 2;
            (start, start + len)
        };
        let mut raw: Vec<(isize, isize)> = clusters.iter().map(|&(a, b)| (a as isize - m, b as isize + m + 1)).collect();
        loop {
            let rounded: Vec<(isize, isize)> = raw.iter().map(round).collect();
            let mut merged: Vec<(isize, isize)> = Vec::with_capacity(raw.len());
            let mut last_end = isize::MIN;
            for (r, q) in raw.iter().zip(&rounded) {
                match merged.last_mut() {
                    Some(last) if q.0 < last_end => last.1 = last.1.max(r.1),
                    _ => merged.push(*r),
                }
                last_end = last_end.max(q.1);
            }
            if merged.len() == raw.len() {
                if rounded[0].0 < 0 || rounded[rounded.len() - 1].1 > n {
                    return None;
                }
                return Some(
                    rounded
                        .into_iter()
                        .map(|(a, b)| Span {
                            start: a as usize,
                            len: (b - a) as usize,
                        })
                        .collect(),
                );
            }
            raw = merged;
        }
    }
}
