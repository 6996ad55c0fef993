//! Stationary coupled-channel scattering.
//!
//! The potential is replaced by a staircase of thin slabs. Inside a slab the
//! matrix `U = 2 (m/hbar) V/hbar` is constant, so it is diagonalized once and
//! every eigenchannel is solved in closed form; slabs are then chained with
//! the Redheffer star product, which only ever multiplies decaying
//! exponentials and is therefore stable through classically forbidden
//! regions. The midpoint staircase is a symmetric scheme, so its error
//! expands in even powers of the slab width; successive halvings are
//! combined in a Romberg table and the spread of its last row is the error
//! estimate.
//!
//! All channels share the same asymptotic wavenumber (the potential vanishes
//! at both ends), which lets the free-space basis be rotated into each
//! slab's eigenbasis without touching the propagation phases.

use std::f64::consts::PI;

use nalgebra::{DMatrix, Matrix3, SymmetricEigen};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::physics::{PotentialSpec, UnitSystem};

type CMatrix3 = Matrix3<Complex64>;

/// Highest Romberg column kept (the last one cancels up to `h^6`).
const ROMBERG_COLUMNS: usize = 4;

/// Padding added on both sides of the potential support.
pub const DOMAIN_PADDING: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Plain staircase, refined until two resolutions agree.
    Staircase,
    /// Staircase with Romberg extrapolation over successive halvings.
    #[default]
    Extrapolated,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Upper bound on the number of slabs in the finest staircase.
    pub max_steps: usize,
    pub method: Method,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            rel_tol: 1e-10,
            abs_tol: 1e-12,
            max_steps: 1 << 22,
            method: Method::Extrapolated,
        }
    }
}

impl SolverConfig {
    pub fn with_tolerance(tol: f64) -> Self {
        Self {
            rel_tol: tol,
            abs_tol: tol * 1e-2,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0) {
            return Err(Error::invalid("rel_tol", "must be positive"));
        }
        if !(self.abs_tol > 0.0) {
            return Err(Error::invalid("abs_tol", "must be positive"));
        }
        if self.max_steps < 16 {
            return Err(Error::invalid("max_steps", "must be at least 16"));
        }
        Ok(())
    }
}

/// Amplitude matrices at one incidence speed.
///
/// Entry `(beta, alpha)` is the amplitude for incidence in channel `alpha`
/// and outgoing channel `beta`. All waves are plane waves `exp(+-i k x)` in
/// absolute position, so a vanishing potential gives `T = I` and `R = 0`
/// and shifting the potential by `c` multiplies `R_left` by `exp(2 i k c)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScatteringResult {
    /// Incidence speed, um/us.
    pub v: f64,
    pub r_left: DMatrix<Complex64>,
    pub t_left: DMatrix<Complex64>,
    pub r_right: DMatrix<Complex64>,
    pub t_right: DMatrix<Complex64>,
    /// Estimated maximum absolute error over all amplitudes.
    pub error_estimate: f64,
    /// Slabs in the finest staircase used.
    pub steps: usize,
}

impl ScatteringResult {
    pub fn dim(&self) -> usize {
        self.r_left.nrows()
    }

    /// The `2d x 2d` S-matrix mapping incoming (left, right) to outgoing (left, right).
    pub fn s_matrix(&self) -> DMatrix<Complex64> {
        let d = self.dim();
        let mut s = DMatrix::zeros(2 * d, 2 * d);
        s.view_mut((0, 0), (d, d)).copy_from(&self.r_left);
        s.view_mut((0, d), (d, d)).copy_from(&self.t_right);
        s.view_mut((d, 0), (d, d)).copy_from(&self.t_left);
        s.view_mut((d, d), (d, d)).copy_from(&self.r_right);
        s
    }

    /// `max |S^dagger S - I|`.
    pub fn unitarity_defect(&self) -> f64 {
        let s = self.s_matrix();
        let n = s.nrows();
        let p = s.adjoint() * &s - DMatrix::identity(n, n);
        p.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// `max |S - S^T|`.
    pub fn reciprocity_defect(&self) -> f64 {
        let s = self.s_matrix();
        (&s - s.transpose()).iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    fn free(v: f64, d: usize) -> Self {
        Self {
            v,
            r_left: DMatrix::zeros(d, d),
            t_left: DMatrix::identity(d, d),
            r_right: DMatrix::zeros(d, d),
            t_right: DMatrix::identity(d, d),
            error_estimate: 0.0,
            steps: 0,
        }
    }
}

/// Accumulated scattering matrix of a stack of slabs.
#[derive(Clone, Copy)]
struct Stack {
    r_left: CMatrix3,
    t_left: CMatrix3,
    r_right: CMatrix3,
    t_right: CMatrix3,
}

impl Stack {
    fn identity() -> Self {
        Self {
            r_left: CMatrix3::zeros(),
            t_left: CMatrix3::identity(),
            r_right: CMatrix3::zeros(),
            t_right: CMatrix3::identity(),
        }
    }

    /// Appends an element with blocks `(r, t, r', t')` on the right.
    #[inline]
    fn push(&mut self, r: &CMatrix3, t: &CMatrix3, r_back: &CMatrix3, t_back: &CMatrix3) {
        let one = CMatrix3::identity();
        let gap = one - self.r_right * r;
        let m1 = gap.try_inverse().unwrap_or_else(|| pseudo_inverse(&gap));
        let m1_t = m1 * self.t_left;
        let m1_r = m1 * self.r_right;
        // (I - r R')^-1 = I + r (I - R' r)^-1 R'
        let m2 = one + r * m1_r;
        self.r_left += self.t_right * r * m1_t;
        self.t_left = t * m1_t;
        self.r_right = r_back + t * m1_r * t_back;
        self.t_right = self.t_right * m2 * t_back;
    }

    #[inline]
    fn push_symmetric(&mut self, r: &CMatrix3, t: &CMatrix3) {
        self.push(r, t, r, t);
    }

    fn max_diff(&self, other: &Stack, d: usize) -> f64 {
        let pairs = [
            (&self.r_left, &other.r_left),
            (&self.t_left, &other.t_left),
            (&self.r_right, &other.r_right),
            (&self.t_right, &other.t_right),
        ];
        pairs
            .iter()
            .map(|(a, b)| {
                let mut m: f64 = 0.0;
                for i in 0..d {
                    for j in 0..d {
                        m = m.max((a[(i, j)] - b[(i, j)]).norm());
                    }
                }
                m
            })
            .fold(0.0, f64::max)
    }

    /// Eliminates the `h^(2 order)` error term: `self + (self - coarse) / (4^order - 1)`.
    fn extrapolate(&self, coarse: &Stack, order: i32) -> Stack {
        let div = Complex64::from(4f64.powi(order) - 1.0);
        let f = |a: &CMatrix3, b: &CMatrix3| a + (a - b) / div;
        Stack {
            r_left: f(&self.r_left, &coarse.r_left),
            t_left: f(&self.t_left, &coarse.t_left),
            r_right: f(&self.r_right, &coarse.r_right),
            t_right: f(&self.t_right, &coarse.t_right),
        }
    }
}

fn pseudo_inverse(m: &CMatrix3) -> CMatrix3 {
    m.pseudo_inverse(1e-300).unwrap_or_else(|_| CMatrix3::identity())
}

/// Reflection and transmission of a single channel through a slab of width
/// `h` with constant `u = 2 (m/hbar) V/hbar`, embedded in free space of
/// wavenumber `k`.
#[inline]
pub(crate) fn slab_amplitudes(u: f64, k: f64, h: f64) -> (Complex64, Complex64) {
    if u == 0.0 {
        return (Complex64::new(0.0, 0.0), Complex64::from_polar(1.0, k * h));
    }
    let q2 = k * k - u;
    let two_ik = Complex64::new(0.0, 2.0 * k);
    if q2 >= 0.0 {
        let q = q2.sqrt();
        let x = q * h;
        let c = x.cos();
        let s = if x.abs() < 1e-4 {
            h * (1.0 - x * x / 6.0)
        } else {
            x.sin() / q
        };
        let d = Complex64::new((2.0 * k * k - u) * s, 2.0 * k * c);
        (u * s / d, two_ik / d)
    } else {
        // divide through by sinh(kappa h) / kappa so that nothing overflows
        let kappa = (-q2).sqrt();
        let x = kappa * h;
        let (ratio, inv_s) = if x < 1e-4 {
            (1.0 / h * (1.0 + x * x / 3.0), 1.0 / h * (1.0 - x * x / 6.0))
        } else {
            (kappa / x.tanh(), kappa / x.sinh())
        };
        let d = Complex64::new(2.0 * k * k - u, 2.0 * k * ratio);
        (u / d, two_ik * inv_s / d)
    }
}

/// Builds the slab matrices for a constant `U` block embedded in free space.
#[inline]
fn slab_matrices(u: &Matrix3<f64>, k: f64, h: f64) -> (CMatrix3, CMatrix3) {
    if u[(0, 1)] == 0.0 && u[(0, 2)] == 0.0 && u[(1, 2)] == 0.0 {
        let mut r = CMatrix3::zeros();
        let mut t = CMatrix3::zeros();
        for j in 0..3 {
            let (rj, tj) = slab_amplitudes(u[(j, j)], k, h);
            r[(j, j)] = rj;
            t[(j, j)] = tj;
        }
        return (r, t);
    }
    let eig = SymmetricEigen::new(*u);
    let q = eig.eigenvectors.map(Complex64::from);
    let mut r_diag = CMatrix3::zeros();
    let mut t_diag = CMatrix3::zeros();
    for j in 0..3 {
        let (r, t) = slab_amplitudes(eig.eigenvalues[j], k, h);
        r_diag[(j, j)] = r;
        t_diag[(j, j)] = t;
    }
    let qt = q.transpose();
    (q * r_diag * qt, q * t_diag * qt)
}

/// Integration interval: potential support padded on both sides.
pub fn domain(spec: &PotentialSpec) -> (f64, f64) {
    let (a, b) = spec.support();
    (a - DOMAIN_PADDING, b + DOMAIN_PADDING)
}

/// A fixed-velocity problem, ready to be discretized at any resolution.
struct Staircase<'a> {
    spec: &'a PotentialSpec,
    /// `2 m / hbar`, turns `V / hbar` into `U`.
    scale: f64,
    k: f64,
    /// Segment edges; the potential is smooth inside each segment.
    edges: Vec<f64>,
    /// Slab width of the coarsest level.
    h0: f64,
}

impl<'a> Staircase<'a> {
    fn new(spec: &'a PotentialSpec, units: UnitSystem, v: f64) -> Self {
        let k = units.wavenumber(v);
        let scale = 2.0 * units.m_over_hbar;
        let (a, b) = domain(spec);
        let u_min = spec.eigenvalue_range().0 * scale;
        // fastest local oscillation; the sampling wavenumber 2 pi / h must
        // stay well clear of twice this to avoid spurious Bragg reflection
        let q_max = (k * k - u_min.min(0.0)).sqrt();
        let h0 = (0.45 * PI / q_max).min(0.25);
        let mut edges = vec![a];
        edges.extend(spec.breakpoints().into_iter().filter(|&x| x > a && x < b));
        edges.push(b);
        Self {
            spec,
            scale,
            k,
            edges,
            h0,
        }
    }

    /// Slab counts per segment at refinement level `level`.
    fn slabs(&self, level: u32) -> Vec<usize> {
        self.edges
            .windows(2)
            .map(|w| (((w[1] - w[0]) / self.h0).ceil() as usize).max(1) << level)
            .collect()
    }

    fn total_slabs(&self, level: u32) -> usize {
        self.slabs(level).iter().sum()
    }

    fn solve(&self, level: u32) -> Stack {
        let mut stack = Stack::identity();
        for (w, n) in self.edges.windows(2).zip(self.slabs(level)) {
            let h = (w[1] - w[0]) / n as f64;
            for i in 0..n {
                let x = w[0] + (i as f64 + 0.5) * h;
                let u = self.spec.eval(x) * self.scale;
                let (r, t) = slab_matrices(&u, self.k, h);
                stack.push_symmetric(&r, &t);
            }
        }
        stack
    }

    fn bounds(&self) -> (f64, f64) {
        (self.edges[0], self.edges[self.edges.len() - 1])
    }

    fn length(&self) -> f64 {
        self.edges[self.edges.len() - 1] - self.edges[0]
    }
}

/// Solves the stationary problem for incidence speed `v` (um/us) from both sides.
pub fn solve_scattering(
    spec: &PotentialSpec,
    units: UnitSystem,
    v: f64,
    cfg: &SolverConfig,
) -> Result<ScatteringResult> {
    if !(v > 0.0 && v.is_finite()) {
        return Err(Error::NonPositiveVelocity(v));
    }
    cfg.validate()?;
    let d = spec.dim();
    if spec.is_zero() {
        return Ok(ScatteringResult::free(v, d));
    }
    let problem = Staircase::new(spec, units, v);
    if 2 * problem.total_slabs(0) > cfg.max_steps {
        return Err(Error::StepTooCoarse {
            step: problem.length() / cfg.max_steps as f64,
            wavenumber: problem.k,
        });
    }

    let tolerance = cfg.abs_tol + cfg.rel_tol;
    // previous Romberg row, highest order last
    let mut row = vec![problem.solve(0)];
    let mut estimate = f64::INFINITY;
    let mut level = 0;
    loop {
        level += 1;
        let steps = problem.total_slabs(level);
        if steps > cfg.max_steps {
            return Err(Error::NonConvergence {
                tolerance,
                max_steps: cfg.max_steps,
                estimate,
            });
        }
        let fine = problem.solve(level);
        let next = match cfg.method {
            Method::Staircase => {
                estimate = fine.max_diff(&row[0], d) / 3.0;
                vec![fine]
            }
            Method::Extrapolated => {
                let mut next = vec![fine];
                for (j, coarse) in row.iter().enumerate().take(ROMBERG_COLUMNS - 1) {
                    let refined = next[j].extrapolate(coarse, j as i32 + 1);
                    next.push(refined);
                }
                let m = next.len();
                estimate = next[m - 1].max_diff(&next[m - 2], d);
                next
            }
        };
        if estimate <= tolerance {
            let best = next.last().expect("row is never empty");
            return Ok(finish(best, v, problem.k, problem.bounds(), d, estimate, steps));
        }
        row = next;
    }
}

fn finish(stack: &Stack, v: f64, k: f64, (a, b): (f64, f64), d: usize, estimate: f64, steps: usize) -> ScatteringResult {
    let transit = Complex64::from_polar(1.0, -k * (b - a));
    let take = |m: &CMatrix3, factor: Complex64| DMatrix::from_fn(d, d, |i, j| m[(i, j)] * factor);
    ScatteringResult {
        v,
        r_left: take(&stack.r_left, Complex64::from_polar(1.0, 2.0 * k * a)),
        t_left: take(&stack.t_left, transit),
        r_right: take(&stack.r_right, Complex64::from_polar(1.0, -2.0 * k * b)),
        t_right: take(&stack.t_right, transit),
        error_estimate: estimate,
        steps,
    }
}

/// Per-velocity outcome of a scan; failed points keep their error.
pub type ScanPoint = Result<ScatteringResult>;

/// Solves every velocity in `velocities`, in parallel, preserving input order.
pub fn scan_velocities(
    spec: &PotentialSpec,
    units: UnitSystem,
    velocities: &[f64],
    cfg: &SolverConfig,
) -> Vec<ScanPoint> {
    velocities
        .par_iter()
        .map(|&v| solve_scattering(spec, units, v, cfg))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::physics::{build_three_level, build_two_level, cm_per_s, Geometry, Tabulated};

    /// Single-channel plane-wave matching through a slab, solved as a 4x4
    /// linear system; independent of the closed forms above.
    fn slab_by_matching(u: f64, k: f64, h: f64) -> (Complex64, Complex64) {
        let q = Complex64::new(k * k - u, 0.0).sqrt();
        let i = Complex64::i();
        let one = Complex64::from(1.0);
        // unknowns: r, A, B, t with interior A e^{iqx} + B e^{-iqx}
        let e = (i * q * h).exp();
        let m = nalgebra::Matrix4::new(
            -one, one, one, Complex64::from(0.0),
            i * k, i * q, -i * q, Complex64::from(0.0),
            Complex64::from(0.0), e, one / e, -one,
            Complex64::from(0.0), i * q * e, -i * q / e, -i * k,
        );
        let rhs = nalgebra::Vector4::new(one, i * k, Complex64::from(0.0), Complex64::from(0.0));
        let sol = m.lu().solve(&rhs).unwrap();
        (sol[0], sol[3])
    }

    #[test]
    fn slab_closed_form_matches_matching() {
        let k = 3.0;
        for &u in &[-20.0, -1.0, 0.5, 8.9, 9.0 - 1e-9, 9.0 + 1e-9, 12.0, 400.0] {
            for &h in &[0.01, 0.3, 2.0] {
                let (r, t) = slab_amplitudes(u, k, h);
                let (r2, t2) = slab_by_matching(u, k, h);
                assert!((r - r2).norm() < 1e-9, "u={u} h={h} r={r} r2={r2}");
                assert!((t - t2).norm() < 1e-9, "u={u} h={h} t={t} t2={t2}");
                assert!((r.norm_sqr() + t.norm_sqr() - 1.0).abs() < 1e-12);
            }
        }
        // deep evanescence stays finite
        let (r, t) = slab_amplitudes(1e12, 1.0, 10.0);
        assert!(r.is_finite() && t.is_finite());
        assert!(t.norm() < 1e-300);
    }

    #[test]
    fn zero_potential_is_identity() {
        let spec = build_three_level(0.0, 0.0, Geometry::reference()).unwrap();
        let res = solve_scattering(&spec, UnitSystem::neon(), 0.1, &SolverConfig::default()).unwrap();
        assert_eq!(res.t_left, DMatrix::identity(3, 3));
        assert_eq!(res.r_right, DMatrix::zeros(3, 3));
    }

    #[test]
    fn negligible_potential_is_identity() {
        // nonzero but tiny: exercises the full staircase path and the phase convention
        let t = Tabulated::new(2, vec![0.0, 10.0], vec![vec![1e-14, 0.0, 1e-14], vec![1e-14, 0.0, 1e-14]]).unwrap();
        let spec = PotentialSpec::Tabulated(t);
        let res = solve_scattering(&spec, UnitSystem::neon(), 0.05, &SolverConfig::default()).unwrap();
        for m in [&res.t_left, &res.t_right] {
            assert!((m - DMatrix::identity(2, 2)).iter().all(|z| z.norm() < 1e-9));
        }
        assert!(res.r_left.iter().all(|z| z.norm() < 1e-9));
    }

    #[test]
    fn rejects_bad_velocity() {
        let spec = build_two_level(100.0, Geometry::reference()).unwrap();
        let cfg = SolverConfig::default();
        assert!(matches!(
            solve_scattering(&spec, UnitSystem::neon(), 0.0, &cfg),
            Err(Error::NonPositiveVelocity(_))
        ));
        assert!(solve_scattering(&spec, UnitSystem::neon(), -0.1, &cfg).is_err());
    }

    #[test]
    fn reports_non_convergence() {
        let spec = build_two_level(100.0, Geometry::reference()).unwrap();
        let cfg = SolverConfig {
            max_steps: 8000,
            ..SolverConfig::default()
        };
        let err = solve_scattering(&spec, UnitSystem::neon(), cm_per_s(50.0), &cfg).unwrap_err();
        assert!(matches!(err, Error::NonConvergence { .. } | Error::StepTooCoarse { .. }));
    }

    #[test]
    fn scan_matches_single_solves() {
        let spec = build_two_level(100.0, Geometry::reference()).unwrap();
        let cfg = SolverConfig::with_tolerance(1e-8);
        let units = UnitSystem::neon();
        assert!(scan_velocities(&spec, units, &[], &cfg).is_empty());
        let vs = [cm_per_s(3.0), cm_per_s(1.0), -1.0];
        let scan = scan_velocities(&spec, units, &vs, &cfg);
        assert_eq!(scan.len(), 3);
        assert_eq!(scan[0].as_ref().unwrap(), &solve_scattering(&spec, units, vs[0], &cfg).unwrap());
        assert_eq!(scan[1].as_ref().unwrap(), &solve_scattering(&spec, units, vs[1], &cfg).unwrap());
        assert!(scan[2].is_err());
    }

    /// Closed-form single-channel transmission through a square step of
    /// height `v0` (us^-1, may be negative) and width `l`, at energy `e` (us^-1).
    fn square_oracle(v0: f64, l: f64, e: f64, m_over_hbar: f64) -> f64 {
        let diff = e - v0;
        let s2 = if diff > 0.0 {
            let q = (2.0 * m_over_hbar * diff).sqrt();
            (q * l).sin().powi(2)
        } else {
            let kappa = (-2.0 * m_over_hbar * diff).sqrt();
            -(kappa * l).sinh().powi(2)
        };
        1.0 / (1.0 + v0 * v0 * s2 / (4.0 * e * diff))
    }

    #[test]
    fn square_barrier_and_well_match_closed_form() {
        let units = UnitSystem::neon();
        for &v0 in &[2.0, -2.0] {
            let spec = crate::physics::square_barrier(v0, 1.0).unwrap();
            for &ratio in &[0.25, 0.5, 0.9, 1.5, 4.0] {
                let e = ratio * v0.abs();
                let v = (2.0 * e / units.m_over_hbar).sqrt();
                let res = solve_scattering(&spec, units, v, &SolverConfig::default()).unwrap();
                let t2 = res.t_left[(0, 0)].norm_sqr();
                let expected = square_oracle(v0, 1.0, e, units.m_over_hbar);
                assert!((t2 - expected).abs() < 1e-10, "v0={v0} ratio={ratio}: {t2} vs {expected}");
                assert!((res.r_left[(0, 0)].norm_sqr() + t2 - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn built_in_potentials_are_unitary_and_reciprocal() {
        let units = UnitSystem::neon();
        let cfg = SolverConfig::with_tolerance(1e-9);
        let specs = [
            build_three_level(1.0, 100.0, Geometry::reference()).unwrap(),
            build_two_level(100.0, Geometry::reference()).unwrap(),
        ];
        for spec in &specs {
            for &v in &[0.25, 3.0, 40.0] {
                let res = solve_scattering(spec, units, cm_per_s(v), &cfg).unwrap();
                assert!(res.unitarity_defect() < 1e-8, "v={v}: {}", res.unitarity_defect());
                assert!(res.reciprocity_defect() < 1e-8, "v={v}: {}", res.reciprocity_defect());
                assert!(res.error_estimate <= cfg.rel_tol + cfg.abs_tol);
            }
        }
    }

    #[test]
    fn reference_potential_is_diodic_at_ten_cm_per_s() {
        let spec = build_three_level(1.0, 100.0, Geometry::reference()).unwrap();
        let res = solve_scattering(&spec, UnitSystem::neon(), cm_per_s(10.0), &SolverConfig::with_tolerance(1e-8)).unwrap();
        assert!(res.t_left[(2, 0)].norm_sqr() > 0.99);
        assert!(res.r_right[(0, 0)].norm_sqr() > 0.99);
    }

    #[test]
    fn halving_the_step_changes_little() {
        let spec = build_two_level(100.0, Geometry::reference()).unwrap();
        let units = UnitSystem::neon();
        let v = cm_per_s(5.0);
        let cfg = SolverConfig::with_tolerance(1e-8);
        let res = solve_scattering(&spec, units, v, &cfg).unwrap();
        let problem = Staircase::new(&spec, units, v);
        let level = (0..30).find(|&l| problem.total_slabs(l) == res.steps).unwrap();
        let finer = problem.solve(level + 1).extrapolate(&problem.solve(level), 1);
        let finer = finish(&finer, v, problem.k, problem.bounds(), 2, 0.0, 0);
        let probs = |r: &ScatteringResult| -> Vec<f64> {
            [&r.r_left, &r.t_left, &r.r_right, &r.t_right]
                .iter()
                .flat_map(|m| m.iter().map(|z| z.norm_sqr()).collect::<Vec<_>>())
                .collect()
        };
        for (a, b) in probs(&res).iter().zip(probs(&finer)) {
            assert!((a - b).abs() < 10.0 * (cfg.rel_tol + cfg.abs_tol), "{a} vs {b}");
        }
    }

    #[test]
    fn shift_only_changes_reflection_phases() {
        let units = UnitSystem::neon();
        let v = cm_per_s(20.0);
        let k = units.wavenumber(v);
        let table = |x0: f64| {
            Tabulated::new(2, vec![x0, x0 + 1.0, x0 + 2.0], vec![vec![0.0, 0.0, 0.0], vec![0.3, 0.2, -0.1], vec![0.0, 0.0, 0.0]])
                .map(PotentialSpec::Tabulated)
                .unwrap()
        };
        let cfg = SolverConfig::with_tolerance(1e-9);
        let a = solve_scattering(&table(0.0), units, v, &cfg).unwrap();
        let b = solve_scattering(&table(5.0), units, v, &cfg).unwrap();
        let phase = Complex64::from_polar(1.0, 2.0 * k * 5.0);
        assert!((&a.t_left - &b.t_left).iter().all(|z| z.norm() < 1e-8));
        assert!((a.r_left.map(|z| z * phase) - &b.r_left).iter().all(|z| z.norm() < 1e-8));
        assert!((a.r_right.map(|z| z / phase) - &b.r_right).iter().all(|z| z.norm() < 1e-8));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]

            #[test]
            fn random_tables_conserve_flux(
                entries in proptest::collection::vec(-3.0f64..3.0, 18),
                v_cm in 0.5f64..50.0,
            ) {
                let rows: Vec<Vec<f64>> = entries.chunks(6).map(|c| c.to_vec()).collect();
                let mut rows = rows;
                rows.insert(0, vec![0.0; 6]);
                rows.push(vec![0.0; 6]);
                let xs = vec![0.0, 1.0, 2.5, 3.0, 4.0];
                let spec = PotentialSpec::Tabulated(Tabulated::new(3, xs, rows).unwrap());
                let res = solve_scattering(&spec, UnitSystem::neon(), cm_per_s(v_cm), &SolverConfig::with_tolerance(1e-9)).unwrap();
                prop_assert!(res.unitarity_defect() < 1e-8);
                prop_assert!(res.reciprocity_defect() < 1e-8);
            }

            #[test]
            fn random_square_barriers_match_closed_form(
                height in -5.0f64..5.0,
                width in 0.1f64..2.0,
                v_cm in 1.0f64..30.0,
            ) {
                prop_assume!(height.abs() > 1e-3);
                let units = UnitSystem::neon();
                let v = cm_per_s(v_cm);
                let e = units.energy(v);
                prop_assume!((e - height).abs() > 1e-6);
                let spec = crate::physics::square_barrier(height, width).unwrap();
                let res = solve_scattering(&spec, units, v, &SolverConfig::default()).unwrap();
                let expected = square_oracle(height, width, e, units.m_over_hbar);
                prop_assert!((res.t_left[(0, 0)].norm_sqr() - expected).abs() < 1e-10);
            }
        }
    }
}


