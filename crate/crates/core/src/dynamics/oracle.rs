//! Direct master-equation integrator for small grids.
//!
//! The density matrix is stored as nine `N x N` channel blocks. Each step is
//! a Strang split: kinetic conjugation `U rho U^dag` in Fourier space, and an
//! exact local step that maps the nine values `rho_ab(x, x')` through
//! `exp(L dt)`, where `L` contains the effective Hamiltonian on both sides
//! and the recoil feeding `gamma K(x - x') rho_33 -> rho_11`. `K` is the
//! emission kernel integrated by Gauss-Legendre quadrature; the quadrature
//! reproduces `K(0) = 1` exactly, so the trace is conserved.

use std::num::NonZeroUsize;
use std::sync::Arc;

use gauss_quad::legendre::GaussLegendre;
use nalgebra::{Matrix3, SMatrix};
use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::{kinetic_phase, right_weight, Grid, OpenSystemParams, WavePacket, EXCITED, STABILITY_LIMIT};
use crate::error::{Error, Result};
use crate::physics::{spectral_radius, PotentialSpec, UnitSystem};

/// Largest grid the oracle accepts.
pub const MAX_ORACLE_POINTS: usize = 256;

type Super = SMatrix<Complex64, 9, 9>;

/// Density matrix on a grid. Block `3a + b` holds `rho_ab(x_i, x_j)` at
/// `i + N j`; the trace is `sum_c sum_i rho_cc(x_i, x_i) dx`.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    pub grid: Grid,
    blocks: Vec<Vec<Complex64>>,
}

impl DensityMatrix {
    /// `|psi><psi|`.
    pub fn pure(wp: &WavePacket) -> Result<Self> {
        let n = wp.grid.n;
        check_size(n)?;
        let blocks = (0..9)
            .map(|p| {
                let (a, b) = (p / 3, p % 3);
                let mut m = vec![Complex64::new(0.0, 0.0); n * n];
                for j in 0..n {
                    let right = wp.psi[b][j].conj();
                    for i in 0..n {
                        m[i + n * j] = wp.psi[a][i] * right;
                    }
                }
                m
            })
            .collect();
        Ok(Self { grid: wp.grid, blocks })
    }

    pub fn element(&self, a: usize, b: usize, i: usize, j: usize) -> Complex64 {
        self.blocks[3 * a + b][i + self.grid.n * j]
    }

    pub fn populations(&self) -> [f64; 3] {
        let n = self.grid.n;
        let dx = self.grid.dx();
        std::array::from_fn(|c| (0..n).map(|i| self.blocks[4 * c][i + n * i].re).sum::<f64>() * dx)
    }

    pub fn trace(&self) -> f64 {
        self.populations().iter().sum()
    }

    /// Right-moving probability in channels 1 and 3 relative to the trace.
    pub fn p_r(&self) -> f64 {
        let n = self.grid.n;
        let fft = FftPlanner::new().plan_fft_forward(n);
        let mut right = 0.0;
        for c in [0, EXCITED] {
            // F rho F^dag = F (F rho)^dag for Hermitian rho
            let mut m = self.blocks[4 * c].clone();
            fft.process(&mut m);
            conj_transpose(&mut m, n);
            fft.process(&mut m);
            right += (0..n).map(|k| m[k + n * k].re * right_weight(k, n)).sum::<f64>();
        }
        right * self.grid.dx() / n as f64 / self.trace()
    }

    /// `max |rho - psi psi^dag|` over all elements.
    pub fn distance_to_pure(&self, wp: &WavePacket) -> f64 {
        let n = self.grid.n;
        let mut d: f64 = 0.0;
        for p in 0..9 {
            let (a, b) = (p / 3, p % 3);
            for j in 0..n {
                for i in 0..n {
                    d = d.max((self.blocks[p][i + n * j] - wp.psi[a][i] * wp.psi[b][j].conj()).norm());
                }
            }
        }
        d
    }

    /// `max |rho - rho^dag|`.
    pub fn hermiticity_defect(&self) -> f64 {
        let n = self.grid.n;
        let mut d: f64 = 0.0;
        for a in 0..3 {
            for b in 0..3 {
                for j in 0..n {
                    for i in 0..n {
                        d = d.max((self.element(a, b, i, j) - self.element(b, a, j, i).conj()).norm());
                    }
                }
            }
        }
        d
    }
}

fn check_size(n: usize) -> Result<()> {
    if n > MAX_ORACLE_POINTS {
        return Err(Error::ResourceBound(format!(
            "density-matrix oracle needs N <= {MAX_ORACLE_POINTS}, got {n}"
        )));
    }
    Ok(())
}

/// In-place conjugate transpose of a column-major `n x n` matrix, in tiles.
fn conj_transpose(m: &mut [Complex64], n: usize) {
    const TILE: usize = 16;
    for jb in (0..n).step_by(TILE) {
        for ib in (jb..n).step_by(TILE) {
            for j in jb..(jb + TILE).min(n) {
                let start = if ib == jb { j } else { ib };
                for i in start..(ib + TILE).min(n) {
                    let a = m[i + n * j];
                    m[i + n * j] = m[j + n * i].conj();
                    m[j + n * i] = a.conj();
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    /// Fixed step, us; must divide `t_max`.
    pub dt: f64,
    /// Gauss-Legendre nodes for the recoil kernel, at least 8.
    pub quadrature_nodes: usize,
    /// Record populations at `t_max * i / samples`, `i = 1..=samples`.
    pub samples: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            dt: 0.1,
            quadrature_nodes: 32,
            samples: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    pub rho: DensityMatrix,
    /// us.
    pub times: Vec<f64>,
    pub populations: Vec<[f64; 3]>,
    pub traces: Vec<f64>,
}

/// Recoil kernel `K(s) = int (3/8)(1 + u^2) exp(i kappa u s) du` by quadrature.
fn recoil_kernel(nodes: usize, kappa: f64) -> Result<impl Fn(f64) -> Complex64> {
    let nodes = NonZeroUsize::new(nodes)
        .filter(|n| n.get() >= 8)
        .ok_or_else(|| Error::invalid("quadrature_nodes", format!("need at least 8, got {nodes}")))?;
    let rule: Vec<(f64, f64)> = GaussLegendre::new(nodes)
        .as_node_weight_pairs()
        .iter()
        .map(|&(u, w)| (u, w * 0.375 * (1.0 + u * u)))
        .collect();
    Ok(move |s: f64| {
        rule.iter()
            .map(|&(u, w)| Complex64::from_polar(w, kappa * u * s))
            .sum()
    })
}

/// Generator of the local step at the point pair `(x_i, x_j)` acting on
/// `rho_ab` stored at `3a + b`.
fn local_generator(hi: &Matrix3<Complex64>, hj: &Matrix3<Complex64>, feed: Complex64) -> Super {
    let mi = Complex64::new(0.0, -1.0);
    let mut l = Super::zeros();
    for a in 0..3 {
        for b in 0..3 {
            for c in 0..3 {
                l[(3 * a + b, 3 * c + b)] += mi * hi[(a, c)];
                l[(3 * a + b, 3 * a + c)] -= mi * hj[(b, c)].conj();
            }
        }
    }
    l[(0, 3 * EXCITED + EXCITED)] += feed;
    l
}

struct Kinetic {
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    /// Per-column phase including the `1/N` normalization.
    half: Vec<Complex64>,
    full: Vec<Complex64>,
}

impl Kinetic {
    /// `U X` column by column; rustfft batches all columns in one call.
    fn left(&self, m: &mut [Complex64], phase: &[Complex64], n: usize) {
        self.fwd.process(m);
        for col in m.chunks_exact_mut(n) {
            col.iter_mut().zip(phase).for_each(|(z, p)| *z *= p);
        }
        self.inv.process(m);
    }

    /// `U X U^dag`.
    fn conjugate(&self, m: &mut [Complex64], phase: &[Complex64], n: usize) {
        self.left(m, phase, n);
        conj_transpose(m, n);
        self.left(m, phase, n);
        conj_transpose(m, n);
    }
}

/// `rho(x_i, x_j) <- M_ij rho(x_i, x_j)` with `M_ij` stored row-major.
fn apply_local(blocks: &mut [Vec<Complex64>], local: &[[Complex64; 81]]) {
    let [b0, b1, b2, b3, b4, b5, b6, b7, b8] = blocks else {
        unreachable!("a density matrix has nine blocks");
    };
    let cols = [b0, b1, b2, b3, b4, b5, b6, b7, b8];
    for (p, m) in local.iter().enumerate() {
        let v: [Complex64; 9] = std::array::from_fn(|q| cols[q][p]);
        for (r, row) in m.chunks_exact(9).enumerate() {
            let mut acc = Complex64::new(0.0, 0.0);
            for q in 0..9 {
                acc += row[q] * v[q];
            }
            cols[r][p] = acc;
        }
    }
}

/// Integrates the master equation from `rho0` to `params.t_max`.
pub fn master_equation_oracle(
    spec: &PotentialSpec,
    units: UnitSystem,
    params: &OpenSystemParams,
    rho0: &DensityMatrix,
    cfg: &OracleConfig,
) -> Result<OracleResult> {
    params.validate()?;
    let grid = rho0.grid;
    let n = grid.n;
    check_size(n)?;
    let dt = cfg.dt;
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::invalid("dt", format!("must be positive, got {dt}")));
    }
    let steps = (params.t_max / dt).round();
    if steps < 1.0 || (steps * dt - params.t_max).abs() > 1e-9 * params.t_max {
        return Err(Error::invalid("dt", format!("t_max {} is not a multiple of dt {dt}", params.t_max)));
    }
    let steps = steps as usize;
    let samples = cfg.samples.max(1);
    if steps % samples != 0 {
        return Err(Error::invalid("samples", format!("{samples} does not divide the {steps} steps")));
    }
    let potentials: Vec<Matrix3<f64>> = (0..n).map(|j| spec.eval(grid.x(j))).collect();
    let v_peak = potentials.iter().map(spectral_radius).fold(0.0, f64::max);
    if !(v_peak * dt < STABILITY_LIMIT) {
        return Err(Error::StabilityBound { dt, phase: v_peak * dt });
    }

    let kernel = recoil_kernel(cfg.quadrature_nodes, units.wavenumber(params.v_rec))?;
    let gamma = params.gamma;
    let h: Vec<Matrix3<Complex64>> = potentials
        .iter()
        .map(|v| {
            let mut m = v.map(|x| Complex64::new(x, 0.0));
            m[(EXCITED, EXCITED)] -= Complex64::new(0.0, 0.5 * gamma);
            m
        })
        .collect();
    let dtc = Complex64::new(dt, 0.0);
    let local: Vec<[Complex64; 81]> = (0..n * n)
        .into_par_iter()
        .map(|p| {
            let (i, j) = (p % n, p / n);
            let feed = kernel(grid.x(i) - grid.x(j)) * gamma;
            let m = (local_generator(&h[i], &h[j], feed) * dtc).exp();
            std::array::from_fn(|e| m[(e / 9, e % 9)])
        })
        .collect();

    let mut planner = FftPlanner::new();
    let k = grid.wavenumbers();
    let phases = |tau: f64| -> Vec<Complex64> {
        k.iter()
            .map(|&kk| Complex64::from_polar(1.0 / n as f64, -kinetic_phase(units, kk, tau)))
            .collect()
    };
    let kin = Kinetic {
        fwd: planner.plan_fft_forward(n),
        inv: planner.plan_fft_inverse(n),
        half: phases(0.5 * dt),
        full: phases(dt),
    };

    let mut blocks = rho0.blocks.clone();
    let record_every = steps / samples;
    let mut times = Vec::new();
    let mut populations = Vec::new();
    let mut traces = Vec::new();
    for step in 0..steps {
        let phase = if step == 0 { &kin.half } else { &kin.full };
        blocks.par_iter_mut().for_each(|b| kin.conjugate(b, phase, n));
        apply_local(&mut blocks, &local);
        if cfg.samples > 0 && (step + 1) % record_every == 0 {
            let rho = DensityMatrix { grid, blocks: blocks.clone() };
            let pops = rho.populations();
            times.push(params.t_max * (step + 1) as f64 / steps as f64);
            traces.push(pops.iter().sum());
            populations.push(pops);
        }
    }
    blocks.par_iter_mut().for_each(|b| kin.conjugate(b, &kin.half, n));
    Ok(OracleResult {
        rho: DensityMatrix { grid, blocks },
        times,
        populations,
        traces,
    })
}
