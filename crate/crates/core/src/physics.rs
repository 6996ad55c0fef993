//! Units, laser profiles and the channel-coupling potentials.
//!
//! Every potential is stored as `V(x) / hbar` in inverse microseconds.
//! Matrices are always [`Matrix3`]; a two- or single-channel potential only
//! fills its leading block and leaves the rest zero.

use nalgebra::{Matrix3, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Profiles are cut to zero beyond this many widths from their center.
pub const SUPPORT_WIDTHS: f64 = 8.0;

const ATOMIC_MASS_UNIT_KG: f64 = 1.660_539_066_60e-27;
const HBAR_JS: f64 = 1.054_571_817e-34;
const NEON_MASS_U: f64 = 20.1797;

/// Micrometer / microsecond unit system with hbar absorbed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitSystem {
    /// `m / hbar` in us/um^2.
    pub m_over_hbar: f64,
}

impl UnitSystem {
    pub fn new(m_over_hbar: f64) -> Result<Self> {
        if !(m_over_hbar > 0.0 && m_over_hbar.is_finite()) {
            return Err(Error::invalid("m_over_hbar", format!("must be positive, got {m_over_hbar}")));
        }
        Ok(Self { m_over_hbar })
    }

    /// Atom of the given mass in atomic mass units.
    pub fn from_mass_u(mass_u: f64) -> Result<Self> {
        // s/m^2 -> us/um^2 is a factor 1e-6
        Self::new(mass_u * ATOMIC_MASS_UNIT_KG / HBAR_JS * 1e-6)
    }

    pub fn neon() -> Self {
        Self::from_mass_u(NEON_MASS_U).expect("neon mass is positive")
    }

    /// Wavenumber (um^-1) of an atom moving at `v` um/us.
    pub fn wavenumber(&self, v: f64) -> f64 {
        self.m_over_hbar * v
    }

    /// Kinetic energy over hbar (us^-1) at velocity `v`.
    pub fn energy(&self, v: f64) -> f64 {
        0.5 * self.m_over_hbar * v * v
    }
}

impl Default for UnitSystem {
    fn default() -> Self {
        Self::neon()
    }
}

/// cm/s to um/us.
pub fn cm_per_s(v: f64) -> f64 {
    v * 1e-2
}

/// um/us to cm/s.
pub fn to_cm_per_s(v: f64) -> f64 {
    v * 1e2
}

/// 10^6 s^-1 to us^-1 (the identity, kept for readability at call sites).
pub fn msi(rate: f64) -> f64 {
    rate
}

/// s^-1 to us^-1.
pub fn per_second(rate: f64) -> f64 {
    rate * 1e-6
}

/// Unit-height Gaussian `exp(-(x - x0)^2 / (2 dx^2))`.
pub fn gaussian_profile(x: f64, x0: f64, dx: f64) -> Result<f64> {
    if !(dx > 0.0) {
        return Err(Error::invalid("dx", format!("width must be positive, got {dx}")));
    }
    Ok(unit_gaussian(x, x0, dx))
}

#[inline]
fn unit_gaussian(x: f64, x0: f64, dx: f64) -> f64 {
    let s = (x - x0) / dx;
    (-0.5 * s * s).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianProfile {
    pub center: f64,
    pub width: f64,
    pub amplitude: f64,
}

impl GaussianProfile {
    pub fn new(center: f64, width: f64, amplitude: f64) -> Result<Self> {
        if !(width > 0.0) {
            return Err(Error::invalid("width", format!("must be positive, got {width}")));
        }
        if !(amplitude >= 0.0) {
            return Err(Error::invalid("amplitude", format!("must be non-negative, got {amplitude}")));
        }
        Ok(Self {
            center,
            width,
            amplitude,
        })
    }

    /// Value with the support cutoff applied.
    #[inline]
    pub fn value(&self, x: f64) -> f64 {
        if (x - self.center).abs() > SUPPORT_WIDTHS * self.width {
            0.0
        } else {
            self.amplitude * unit_gaussian(x, self.center, self.width)
        }
    }

    pub fn support(&self) -> (f64, f64) {
        let half = SUPPORT_WIDTHS * self.width;
        (self.center - half, self.center + half)
    }
}

/// Pump/Stokes/barrier layout shared by the built-in potentials.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub x_p: f64,
    pub x_s: f64,
    pub x_w: f64,
    pub width: f64,
}

impl Geometry {
    /// Positions used for the reference stationary scattering runs.
    pub fn reference() -> Self {
        Self {
            x_p: 170.0,
            x_s: 140.0,
            x_w: 260.0,
            width: 15.0,
        }
    }
}

impl Default for Geometry {
    fn default() -> Self {
        Self::reference()
    }
}

/// Three-level STIRAP potential with a barrier on the ground state.
#[derive(Debug, Clone, PartialEq)]
pub struct ThreeLevel {
    pub pump: GaussianProfile,
    pub stokes: GaussianProfile,
    pub barrier: GaussianProfile,
}

/// Two-level potential built from its adiabatic eigenvectors.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoLevel {
    /// `f_P` profile (amplitude `f_hat`, in us^-1/2).
    pub pump: GaussianProfile,
    /// `f_S` profile.
    pub stokes: GaussianProfile,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Interpolation {
    #[default]
    Linear,
    /// Row `i` holds on `[x_i, x_{i+1})`; the last row only marks the end.
    Step,
}

/// User-supplied symmetric matrix table, zero outside its first and last rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Tabulated {
    dim: usize,
    xs: Vec<f64>,
    values: Vec<Matrix3<f64>>,
    interpolation: Interpolation,
}

impl Tabulated {
    /// `rows[i]` holds the upper triangle of the `dim x dim` matrix at
    /// `xs[i]`, row by row.
    pub fn new(dim: usize, xs: Vec<f64>, rows: Vec<Vec<f64>>) -> Result<Self> {
        Self::with_interpolation(dim, xs, rows, Interpolation::Linear)
    }

    pub fn with_interpolation(
        dim: usize,
        xs: Vec<f64>,
        rows: Vec<Vec<f64>>,
        interpolation: Interpolation,
    ) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(Error::invalid("dim", format!("must be 1, 2 or 3, got {dim}")));
        }
        if xs.len() < 2 || xs.len() != rows.len() {
            return Err(Error::invalid("table", "need at least two rows with one position each"));
        }
        if xs.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("table", "positions must be strictly increasing"));
        }
        let entries = dim * (dim + 1) / 2;
        let mut values = Vec::with_capacity(rows.len());
        for row in &rows {
            if row.len() != entries {
                return Err(Error::DimensionMismatch {
                    expected: entries,
                    found: row.len(),
                });
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid("table", "entries must be finite"));
            }
            let mut m = Matrix3::zeros();
            let mut it = row.iter();
            for i in 0..dim {
                for j in i..dim {
                    let v = *it.next().unwrap();
                    m[(i, j)] = v;
                    m[(j, i)] = v;
                }
            }
            values.push(m);
        }
        Ok(Self {
            dim,
            xs,
            values,
            interpolation,
        })
    }

    fn eval(&self, x: f64) -> Matrix3<f64> {
        let (first, last) = (self.xs[0], self.xs[self.xs.len() - 1]);
        if x < first || x > last {
            return Matrix3::zeros();
        }
        let hi = self.xs.partition_point(|&p| p <= x).min(self.xs.len() - 1).max(1);
        let lo = hi - 1;
        if self.interpolation == Interpolation::Step {
            return self.values[lo];
        }
        let t = (x - self.xs[lo]) / (self.xs[hi] - self.xs[lo]);
        self.values[lo] * (1.0 - t) + self.values[hi] * t
    }
}

/// A Hermitian matrix-valued function of position, `V(x) / hbar`.
#[derive(Debug, Clone, PartialEq)]
pub enum PotentialSpec {
    ThreeLevel(ThreeLevel),
    TwoLevel(TwoLevel),
    Tabulated(Tabulated),
}

impl PotentialSpec {
    pub fn dim(&self) -> usize {
        match self {
            PotentialSpec::ThreeLevel(_) => 3,
            PotentialSpec::TwoLevel(_) => 2,
            PotentialSpec::Tabulated(t) => t.dim,
        }
    }

    /// `V(x) / hbar` padded to 3x3.
    #[inline]
    pub fn eval(&self, x: f64) -> Matrix3<f64> {
        match self {
            PotentialSpec::ThreeLevel(p) => {
                let op = p.pump.value(x);
                let os = p.stokes.value(x);
                let w = p.barrier.value(x);
                Matrix3::new(w, op, 0.0, op, 0.0, os, 0.0, os, 0.0) * 0.5
            }
            PotentialSpec::TwoLevel(p) => {
                let fp = p.pump.value(x);
                let fs = p.stokes.value(x);
                Matrix3::new(fp * fp, fp * fs, 0.0, fp * fs, fs * fs, 0.0, 0.0, 0.0, 0.0) * 0.5
            }
            PotentialSpec::Tabulated(t) => t.eval(x),
        }
    }

    /// Interval outside which the potential is exactly zero.
    pub fn support(&self) -> (f64, f64) {
        let union = |profiles: &[&GaussianProfile]| {
            profiles
                .iter()
                .filter(|p| p.amplitude > 0.0)
                .map(|p| p.support())
                .fold(None, |acc: Option<(f64, f64)>, (a, b)| match acc {
                    None => Some((a, b)),
                    Some((lo, hi)) => Some((lo.min(a), hi.max(b))),
                })
                // an all-zero potential still gets a nominal interval
                .unwrap_or_else(|| profiles[0].support())
        };
        match self {
            PotentialSpec::ThreeLevel(p) => union(&[&p.pump, &p.stokes, &p.barrier]),
            PotentialSpec::TwoLevel(p) => union(&[&p.pump, &p.stokes]),
            PotentialSpec::Tabulated(t) => (t.xs[0], t.xs[t.xs.len() - 1]),
        }
    }

    /// Largest spectral radius of `V / hbar` over the support, sampled.
    pub fn peak_norm(&self) -> f64 {
        self.samples(4096).map(|x| spectral_radius(&self.eval(x))).fold(0.0, f64::max)
    }

    /// Gershgorin bounds on the eigenvalues of `V / hbar` over the support.
    pub fn eigenvalue_range(&self) -> (f64, f64) {
        let mut lo: f64 = 0.0;
        let mut hi: f64 = 0.0;
        let nodes = self.breakpoints();
        for x in self.samples(2048).chain(nodes) {
            let m = self.eval(x);
            for i in 0..3 {
                let off: f64 = (0..3).filter(|&j| j != i).map(|j| m[(i, j)].abs()).sum();
                lo = lo.min(m[(i, i)] - off);
                hi = hi.max(m[(i, i)] + off);
            }
        }
        (lo, hi)
    }

    /// Positions where the potential or its derivative may jump.
    pub fn breakpoints(&self) -> Vec<f64> {
        match self {
            PotentialSpec::Tabulated(t) => t.xs.clone(),
            _ => Vec::new(),
        }
    }

    fn samples(&self, n: usize) -> impl Iterator<Item = f64> {
        let (a, b) = self.support();
        (0..=n).map(move |i| a + (b - a) * i as f64 / n as f64)
    }

    pub fn is_zero(&self) -> bool {
        match self {
            PotentialSpec::ThreeLevel(p) => {
                p.pump.amplitude == 0.0 && p.stokes.amplitude == 0.0 && p.barrier.amplitude == 0.0
            }
            PotentialSpec::TwoLevel(p) => p.pump.amplitude == 0.0 && p.stokes.amplitude == 0.0,
            PotentialSpec::Tabulated(t) => t.values.iter().all(|m| m.iter().all(|&v| v == 0.0)),
        }
    }
}

/// Single-channel square barrier of height `height` (us^-1) on `[0, width]`.
pub fn square_barrier(height: f64, width: f64) -> Result<PotentialSpec> {
    if !(width > 0.0) {
        return Err(Error::invalid("width", format!("must be positive, got {width}")));
    }
    let table = Tabulated::with_interpolation(
        1,
        vec![0.0, width],
        vec![vec![height], vec![height]],
        Interpolation::Step,
    )?;
    Ok(PotentialSpec::Tabulated(table))
}

/// Largest absolute eigenvalue of a real symmetric 3x3 matrix.
pub(crate) fn spectral_radius(m: &Matrix3<f64>) -> f64 {
    m.symmetric_eigenvalues().amax()
}

fn warn_ordering(x_s: f64, x_p: f64) {
    if x_s >= x_p {
        log::warn!("Stokes profile at {x_s} um is not left of the pump at {x_p} um; transfer will be intuitive-order");
    }
}

/// Three-level potential `(1/2) [[W, O_P, 0], [O_P, 0, O_S], [0, O_S, 0]]`.
///
/// `rabi` and `barrier` are peak values in us^-1.
pub fn build_three_level(rabi: f64, barrier: f64, geometry: Geometry) -> Result<PotentialSpec> {
    if !(rabi >= 0.0) {
        return Err(Error::invalid("rabi", format!("must be non-negative, got {rabi}")));
    }
    if !(barrier >= 0.0) {
        return Err(Error::invalid("barrier", format!("must be non-negative, got {barrier}")));
    }
    warn_ordering(geometry.x_s, geometry.x_p);
    Ok(PotentialSpec::ThreeLevel(ThreeLevel {
        pump: GaussianProfile::new(geometry.x_p, geometry.width, rabi)?,
        stokes: GaussianProfile::new(geometry.x_s, geometry.width, rabi)?,
        barrier: GaussianProfile::new(geometry.x_w, geometry.width, barrier)?,
    }))
}

/// Two-level potential `(1/2) [[f_P^2, f_P f_S], [f_P f_S, f_S^2]]`.
///
/// Takes the squared amplitude `f_hat^2` (us^-1); `geometry.x_w` is unused.
pub fn build_two_level(f_hat_sq: f64, geometry: Geometry) -> Result<PotentialSpec> {
    if !(f_hat_sq >= 0.0) {
        return Err(Error::invalid("f_hat_sq", format!("must be non-negative, got {f_hat_sq}")));
    }
    warn_ordering(geometry.x_s, geometry.x_p);
    let f_hat = f_hat_sq.sqrt();
    Ok(PotentialSpec::TwoLevel(TwoLevel {
        pump: GaussianProfile::new(geometry.x_p, geometry.width, f_hat)?,
        stokes: GaussianProfile::new(geometry.x_s, geometry.width, f_hat)?,
    }))
}

/// Adiabatic eigenvectors and eigenvalues of the two-level potential at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoLevelEigensystem {
    /// Dark vector `(f_S, -f_P) / norm`, eigenvalue 0.
    pub zeta1: Vector2<f64>,
    /// Bright vector `(f_P, f_S) / norm`.
    pub zeta2: Vector2<f64>,
    pub lambda1: f64,
    /// `(f_P^2 + f_S^2) / 2` in us^-1.
    pub lambda2: f64,
}

/// Eigensystem of a [`PotentialSpec::TwoLevel`] at `x`.
///
/// The vectors depend only on the ratio `f_P / f_S`, which is evaluated in
/// log space so they stay defined far outside the profile support.
pub fn two_level_eigensystem(spec: &PotentialSpec, x: f64) -> Result<TwoLevelEigensystem> {
    let p = match spec {
        PotentialSpec::TwoLevel(p) => p,
        other => {
            return Err(Error::DimensionMismatch {
                expected: 2,
                found: other.dim(),
            })
        }
    };
    if p.pump.amplitude == 0.0 || p.stokes.amplitude == 0.0 {
        return Err(Error::AsymptoticRegion(x));
    }
    let log_fp = p.pump.amplitude.ln() - 0.5 * ((x - p.pump.center) / p.pump.width).powi(2);
    let log_fs = p.stokes.amplitude.ln() - 0.5 * ((x - p.stokes.center) / p.stokes.width).powi(2);
    // normalize by the larger component
    let (a, b) = if log_fs >= log_fp {
        (1.0, (log_fp - log_fs).exp())
    } else {
        ((log_fs - log_fp).exp(), 1.0)
    };
    let norm = a.hypot(b);
    let (s, pp) = (a / norm, b / norm);
    let fp = p.pump.value(x);
    let fs = p.stokes.value(x);
    Ok(TwoLevelEigensystem {
        zeta1: Vector2::new(s, -pp),
        zeta2: Vector2::new(pp, s),
        lambda1: 0.0,
        lambda2: 0.5 * (fp * fp + fs * fs),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn thick_three_level() -> PotentialSpec {
        build_three_level(1.0, 100.0, Geometry::reference()).unwrap()
    }

    #[test]
    fn neon_mass_ratio() {
        let u = UnitSystem::neon();
        assert!((u.m_over_hbar - 317.7).abs() < 0.1, "{}", u.m_over_hbar);
    }

    #[test]
    fn gaussian_values() {
        assert_eq!(gaussian_profile(140.0, 140.0, 15.0).unwrap(), 1.0);
        assert_relative_eq!(gaussian_profile(155.0, 140.0, 15.0).unwrap(), (-0.5f64).exp(), max_relative = 1e-15);
        assert_eq!(
            gaussian_profile(155.0, 140.0, 15.0).unwrap(),
            gaussian_profile(125.0, 140.0, 15.0).unwrap()
        );
        assert!(gaussian_profile(0.0, 0.0, 0.0).is_err());
        assert!(gaussian_profile(0.0, 0.0, -1.0).is_err());
    }

    #[test]
    fn three_level_structure() {
        let spec = thick_three_level();
        assert_eq!(spec.dim(), 3);
        let m = spec.eval(170.0);
        assert_eq!(m[(0, 1)], 0.5);
        for x in [0.0, 100.0, 140.0, 170.0, 200.0, 260.0, 400.0] {
            let m = spec.eval(x);
            assert_eq!(m[(0, 2)], 0.0);
            assert_eq!(m, m.transpose());
        }
        let zero = build_three_level(0.0, 0.0, Geometry::reference()).unwrap();
        assert_eq!(zero.eval(170.0), Matrix3::zeros());
        assert!(build_three_level(-1.0, 1.0, Geometry::reference()).is_err());
        assert!(build_three_level(1.0, -1.0, Geometry::reference()).is_err());
    }

    #[test]
    fn support_boundary_is_negligible() {
        for spec in [thick_three_level(), build_two_level(100.0, Geometry::reference()).unwrap()] {
            let (a, b) = spec.support();
            let peak = spec.peak_norm();
            for x in [a, b] {
                assert!(spectral_radius(&spec.eval(x)) < 1e-12 * peak);
            }
            assert_eq!(spec.eval(a - 1.0), Matrix3::zeros());
            assert_eq!(spec.eval(b + 1.0), Matrix3::zeros());
        }
    }

    #[test]
    fn two_level_is_rank_one() {
        let spec = build_two_level(100.0, Geometry::reference()).unwrap();
        for i in 0..200 {
            let x = 20.0 + 1.5 * i as f64;
            let m = spec.eval(x).fixed_view::<2, 2>(0, 0).into_owned();
            let scale = m.abs().max().max(1e-300);
            assert!(m.determinant().abs() <= 1e-13 * scale * scale);
        }
        let trace = spec.eval(140.0).trace();
        assert!(trace >= 50.0);
        let zero = build_two_level(0.0, Geometry::reference()).unwrap();
        assert_eq!(zero.eval(150.0), Matrix3::zeros());
        assert!(build_two_level(-1.0, Geometry::reference()).is_err());
    }

    #[test]
    fn eigensystem_asymptotics() {
        let spec = build_two_level(100.0, Geometry::reference()).unwrap();
        let far_left = two_level_eigensystem(&spec, -1.0e4).unwrap();
        assert_relative_eq!(far_left.zeta1, Vector2::new(1.0, 0.0), epsilon = 1e-15);
        assert_relative_eq!(far_left.zeta2, Vector2::new(0.0, 1.0), epsilon = 1e-15);
        let far_right = two_level_eigensystem(&spec, 1.0e4).unwrap();
        assert_relative_eq!(far_right.zeta1, Vector2::new(0.0, -1.0), epsilon = 1e-15);
        assert_relative_eq!(far_right.zeta2, Vector2::new(1.0, 0.0), epsilon = 1e-15);
        let mid = two_level_eigensystem(&spec, 155.0).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert_relative_eq!(mid.zeta1, Vector2::new(h, -h), epsilon = 1e-15);
    }

    #[test]
    fn eigensystem_diagonalizes() {
        let spec = build_two_level(100.0, Geometry::reference()).unwrap();
        for i in 0..100 {
            let x = 60.0 + 2.0 * i as f64;
            let es = two_level_eigensystem(&spec, x).unwrap();
            let m = spec.eval(x).fixed_view::<2, 2>(0, 0).into_owned();
            let scale = m.abs().max();
            assert!((m * es.zeta1).amax() <= 1e-15 * scale.max(1e-300) * 4.0);
            assert!((m * es.zeta2 - es.zeta2 * es.lambda2).amax() <= 1e-12 * es.lambda2.max(1e-300));
            assert!(es.zeta1.dot(&es.zeta2).abs() < 1e-15);
            assert_relative_eq!(es.zeta1.norm(), 1.0, epsilon = 1e-15);
            let eig = m.symmetric_eigenvalues();
            let (lo, hi) = (eig.min(), eig.max());
            assert!(lo.abs() <= 1e-12 * es.lambda2.max(1e-300));
            assert_relative_eq!(hi, es.lambda2, max_relative = 1e-12);
        }
        let zero = build_two_level(0.0, Geometry::reference()).unwrap();
        assert!(matches!(two_level_eigensystem(&zero, 150.0), Err(Error::AsymptoticRegion(_))));
        assert!(two_level_eigensystem(&thick_three_level(), 150.0).is_err());
    }

    /// Follows the zero-eigenvalue vector continuously across a dense grid
    /// and checks which bare channel it ends in.
    fn track_dark_vector(spec: &PotentialSpec, dim: usize) -> (Vec<f64>, Vec<f64>) {
        let mut prev: Option<Vec<f64>> = None;
        let mut first = None;
        let (a, b) = spec.support();
        let n = 20_000;
        for i in 0..=n {
            let x = a + 1.0 + (b - a - 2.0) * i as f64 / n as f64;
            let m = spec.eval(x);
            let sub = nalgebra::DMatrix::from_fn(dim, dim, |r, c| m[(r, c)]);
            let eig = sub.symmetric_eigen();
            let candidates: Vec<Vec<f64>> = (0..dim)
                .filter(|&j| eig.eigenvalues[j].abs() < 1e-9 * spectral_radius(&m).max(1e-300) + 1e-300)
                .map(|j| eig.eigenvectors.column(j).iter().copied().collect())
                .collect();
            let dot = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
            let next = match &prev {
                None => candidates.into_iter().next().unwrap(),
                Some(p) => {
                    let mut best = candidates
                        .into_iter()
                        .max_by(|u, v| dot(u, p).abs().partial_cmp(&dot(v, p).abs()).unwrap())
                        .unwrap();
                    if dot(&best, p) < 0.0 {
                        best.iter_mut().for_each(|c| *c = -*c);
                    }
                    best
                }
            };
            if first.is_none() {
                first = Some(next.clone());
            }
            prev = Some(next);
        }
        (first.unwrap(), prev.unwrap())
    }

    #[test]
    fn dark_state_connects_ground_to_excited() {
        let three = build_three_level(1.0, 0.0, Geometry::reference()).unwrap();
        let (start, end) = track_dark_vector(&three, 3);
        assert!(start[0].abs() > 1.0 - 1e-9);
        assert!(end[2].abs() > 1.0 - 1e-9);

        let two = build_two_level(100.0, Geometry::reference()).unwrap();
        let (start, end) = track_dark_vector(&two, 2);
        assert!(start[0].abs() > 1.0 - 1e-9);
        assert!(end[1].abs() > 1.0 - 1e-9);
        // the sign flips relative to the start: ends in -channel 2
        assert!(start[0].signum() != end[1].signum());
    }

    #[test]
    fn tabulated_interpolates() {
        let t = Tabulated::new(1, vec![0.0, 1.0, 2.0], vec![vec![0.0], vec![2.0], vec![0.0]]).unwrap();
        let spec = PotentialSpec::Tabulated(t);
        assert_eq!(spec.eval(0.5)[(0, 0)], 1.0);
        assert_eq!(spec.eval(3.0)[(0, 0)], 0.0);
        assert_eq!(spec.support(), (0.0, 2.0));
        assert!(Tabulated::new(2, vec![0.0, 1.0], vec![vec![0.0], vec![1.0]]).is_err());
        assert!(Tabulated::new(1, vec![1.0, 0.0], vec![vec![0.0], vec![1.0]]).is_err());
    }
}
