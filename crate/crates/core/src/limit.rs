//! The limiting spectral distribution of the Gram matrix `B_N`.
//!
//! The companion transform S̲ of the limit solves
//!
//! ```text
//! z = −1/S̲ + (c/2π) ∫_{−π}^{π} dλ / (S̲ + (2πf(λ))^{−1})
//!   = −1/S̲ + c ∫ x/(1 + xS̲) dH(x),
//! ```
//!
//! with H the law of 2πf(U). Solves combine a Newton step with the damped
//! fixed-point map as a fallback; densities come from Stieltjes inversion
//! with Richardson extrapolation in Im z.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{self, Cdf, MetricsError};
use crate::quad::{self, QuadError, QuadSettings};
use crate::spectral::{self, PushforwardLaw, SpectralDensity, SpectralError};

const HERGLOTZ_FLOOR: f64 = 1e-14;
const START_AGREEMENT: f64 = 1e-9;
/// Extrapolated density level defining a support edge.
pub const EDGE_LEVEL: f64 = 1e-4;
pub const DEFAULT_EPS_LADDER: [f64; 4] = [0.05, 0.02, 0.01, 0.005];

#[derive(Debug, Error)]
pub enum LimitError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("Im z must be positive, got {0}")]
    Domain(Complex64),
    #[error("no convergence after {iterations} iterations (last residual {residual:.3e})")]
    NonConvergence { iterations: usize, residual: f64 },
    #[error("iterate left the upper half-plane at z = {z} even with damping {damping:.3e}")]
    LostHerglotz { z: Complex64, damping: f64 },
    #[error("solutions from two starting points differ by {gap:.3e} at z = {z}")]
    StartDependence { z: Complex64, gap: f64 },
    #[error(transparent)]
    Quadrature(#[from] QuadError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

pub type Result<T> = std::result::Result<T, LimitError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSettings {
    /// Residual tolerance for the limit equation.
    pub tol: f64,
    pub max_iter: usize,
    /// Weight δ of the fixed-point update.
    pub damping: f64,
    /// Relative tolerance of the λ-integral.
    pub quad_tol: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_iter: 10_000,
            damping: 0.5,
            quad_tol: 1e-10,
        }
    }
}

impl SolverSettings {
    pub fn validate(&self) -> Result<()> {
        let ok =
            self.tol > 0.0 && self.quad_tol > 0.0 && self.damping > 0.0 && self.damping <= 1.0 && self.max_iter > 0;
        if ok {
            Ok(())
        } else {
            Err(LimitError::InvalidArgument(
                "need tol, quad_tol > 0, 0 < damping <= 1 and max_iter >= 1".into(),
            ))
        }
    }
}

/// `S̲ = −(1−c)/z + cS`.
pub fn companion(s: Complex64, c: f64, z: Complex64) -> Complex64 {
    -(1.0 - c) / z + c * s
}

/// Inverse of [`companion`]: `S = (S̲ + (1−c)/z)/c`.
pub fn companion_inverse(s_under: Complex64, c: f64, z: Complex64) -> Complex64 {
    (s_under + (1.0 - c) / z) / c
}

/// An H law: point masses plus a continuous part tabulated as a CDF on a
/// grid. Mass the grid does not account for sits at +∞, where the kernel
/// `x/(1+xS̲)` tends to `1/S̲`.
#[derive(Debug, Clone, PartialEq)]
pub struct HLaw {
    atoms: Vec<(f64, f64)>,
    /// Continuous mass per cell, placed at the cell midpoint; the first
    /// entry is the mass below the first node, placed at that node.
    cells: Vec<(f64, f64)>,
    at_infinity: f64,
}

impl HLaw {
    /// `cdf` is the full CDF (atoms included) on `grid`.
    pub fn new(grid: &[f64], cdf: &[f64], atoms: &[(f64, f64)]) -> Result<Self> {
        let bad = |m: &str| Err(LimitError::InvalidArgument(m.into()));
        if grid.len() != cdf.len() {
            return bad("grid and cdf lengths differ");
        }
        if !grid.windows(2).all(|w| w[1] > w[0]) || grid.iter().any(|x| !(*x >= 0.0) || !x.is_finite()) {
            return bad("H grid must be increasing, finite and nonnegative");
        }
        if !cdf.windows(2).all(|w| w[1] >= w[0] - 1e-12) || cdf.iter().any(|v| !(-1e-12..=1.0 + 1e-12).contains(v)) {
            return bad("H cdf must be nondecreasing in [0,1]");
        }
        if atoms.iter().any(|(x, m)| !(*x >= 0.0) || !(*m >= 0.0)) {
            return bad("atoms need nonnegative location and mass");
        }
        let atom_mass: f64 = atoms.iter().filter(|(x, _)| x.is_finite()).map(|a| a.1).sum();
        let inf_atoms: f64 = atoms.iter().filter(|(x, _)| x.is_infinite()).map(|a| a.1).sum();
        if atom_mass + inf_atoms > 1.0 + 1e-9 {
            return bad("atom masses exceed one");
        }
        // Continuous CDF = full CDF minus atoms at or below x.
        let cont = |i: usize| {
            let below: f64 = atoms.iter().filter(|(x, _)| *x <= grid[i]).map(|a| a.1).sum();
            (cdf[i] - below).max(0.0)
        };
        let mut cells = Vec::with_capacity(grid.len());
        let mut prev = 0.0;
        for i in 0..grid.len() {
            let v = cont(i).max(prev);
            let x = if i == 0 { grid[0] } else { 0.5 * (grid[i - 1] + grid[i]) };
            if v > prev {
                cells.push((x, v - prev));
            }
            prev = v;
        }
        let finite_atoms: Vec<(f64, f64)> = atoms.iter().copied().filter(|(x, _)| x.is_finite()).collect();
        let at_infinity = (1.0 - prev - atom_mass).max(0.0);
        Ok(Self {
            atoms: finite_atoms,
            cells,
            at_infinity,
        })
    }

    /// Point mass at `x`.
    pub fn point_mass(x: f64) -> Result<Self> {
        Self::new(&[], &[], &[(x, 1.0)])
    }

    pub fn from_pushforward(law: &PushforwardLaw) -> Result<Self> {
        Self::new(&law.grid, &law.cdf, &law.atoms)
    }

    pub fn mass_at_infinity(&self) -> f64 {
        self.at_infinity
    }

    fn integrals(&self, s: Complex64) -> (Complex64, Complex64) {
        let mut i = self.at_infinity / s;
        let mut j = self.at_infinity / (s * s);
        for &(x, m) in self.atoms.iter().chain(&self.cells) {
            let k = x / (1.0 + x * s);
            i += m * k;
            j += m * k * k;
        }
        (i, j)
    }
}

/// Source of the integral `I(S̲) = ∫ x/(1+xS̲) dH` and its derivative data
/// `J(S̲) = ∫ x²/(1+xS̲)² dH`.
#[derive(Debug, Clone, Copy)]
pub enum Kernel<'a> {
    Density(&'a SpectralDensity),
    Law(&'a HLaw),
}

impl Kernel<'_> {
    fn integrals(&self, s: Complex64, quad_tol: f64) -> Result<(Complex64, Complex64, f64)> {
        match self {
            Kernel::Law(h) => {
                let (i, j) = h.integrals(s);
                Ok((i, j, 0.0))
            }
            Kernel::Density(f) => {
                let term = |lambda: f64| {
                    let g = 2.0 * PI * f.value(lambda);
                    if g.is_infinite() {
                        let k = 1.0 / s;
                        (k, k * k)
                    } else {
                        let k = g / (1.0 + g * s);
                        (k, k * k)
                    }
                };
                let est = quad::integrate(
                    term,
                    0.0,
                    PI,
                    &f.singular_points(),
                    &f.breakpoints(),
                    &QuadSettings::with_tol(quad_tol),
                )?;
                let (i, j) = est.value;
                Ok((i / PI, j / PI, est.error / PI))
            }
        }
    }
}

/// An accepted solve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LimitSolution {
    #[serde(serialize_with = "ser_complex")]
    pub s_under: Complex64,
    #[serde(serialize_with = "ser_complex")]
    pub s: Complex64,
    /// Equation residual recomputed with a 10× finer quadrature tolerance.
    pub residual: f64,
    pub iterations: usize,
}

fn ser_complex<S: serde::Serializer>(z: &Complex64, ser: S) -> std::result::Result<S::Ok, S::Error> {
    use serde::ser::SerializeTuple;
    let mut t = ser.serialize_tuple(2)?;
    t.serialize_element(&z.re)?;
    t.serialize_element(&z.im)?;
    t.end()
}

fn check_args(c: f64, z: Complex64, s: &SolverSettings) -> Result<()> {
    s.validate()?;
    if !(c > 0.0 && c.is_finite()) {
        return Err(LimitError::InvalidArgument("c must be positive".into()));
    }
    if !(z.im > 0.0) || !z.re.is_finite() || !z.im.is_finite() {
        return Err(LimitError::Domain(z));
    }
    Ok(())
}

/// Solves from one starting point. Each step tries Newton on
/// `R(S̲) = z + 1/S̲ − cI(S̲)` and keeps it if it stays in the upper
/// half-plane and lowers |R|; otherwise it takes the damped fixed-point
/// step `S̲ ← (1−δ)S̲ + δ·(−1/(z − cI))`, halving δ whenever that step
/// would leave the half-plane.
pub fn solve_from(kernel: Kernel, c: f64, z: Complex64, start: Complex64, s: &SolverSettings) -> Result<LimitSolution> {
    check_args(c, z, s)?;
    if !(start.im > 0.0) {
        return Err(LimitError::InvalidArgument(
            "start must lie in the upper half-plane".into(),
        ));
    }
    let resid = |su: Complex64, i: Complex64| (z + 1.0 / su - c * i).norm();
    let mut su = start;
    let (mut i, mut j, mut qerr) = kernel.integrals(su, s.quad_tol)?;
    let mut r = resid(su, i);
    let mut delta = s.damping;
    let mut stalled = 0;
    for iter in 0..s.max_iter {
        // The quadrature error caps the residual any solve can certify.
        if r <= s.tol || (stalled >= 3 && r <= s.tol + 10.0 * c * qerr) {
            let (fi, _, _) = kernel.integrals(su, s.quad_tol / 10.0)?;
            return Ok(LimitSolution {
                s_under: su,
                s: companion_inverse(su, c, z),
                residual: resid(su, fi),
                iterations: iter,
            });
        }
        let deriv = -1.0 / (su * su) + c * j;
        let rv = z + 1.0 / su - c * i;
        let newton = su - rv / deriv;
        if newton.im > HERGLOTZ_FLOOR && newton.re.is_finite() && newton.im.is_finite() {
            let (ni, nj, nq) = kernel.integrals(newton, s.quad_tol)?;
            let nr = resid(newton, ni);
            if nr < r {
                stalled = if nr > 0.5 * r { stalled + 1 } else { 0 };
                (su, i, j, qerr, r) = (newton, ni, nj, nq, nr);
                continue;
            }
        }
        stalled += 1;
        loop {
            let next = (1.0 - delta) * su + delta * (-1.0 / (z - c * i));
            if next.im > HERGLOTZ_FLOOR {
                su = next;
                break;
            }
            delta *= 0.5;
            if delta < 1e-8 {
                return Err(LimitError::LostHerglotz { z, damping: delta });
            }
        }
        (i, j, qerr) = kernel.integrals(su, s.quad_tol)?;
        r = resid(su, i);
    }
    Err(LimitError::NonConvergence {
        iterations: s.max_iter,
        residual: r,
    })
}

/// Solves from `−1/z` and from `i` and requires agreement to 1e−9.
pub fn solve_checked(kernel: Kernel, c: f64, z: Complex64, s: &SolverSettings) -> Result<LimitSolution> {
    check_args(c, z, s)?;
    // Close to the real axis a start can sit in the basin of a spurious
    // attractor; walking Im z down from O(1) avoids it.
    let rescue = |e: LimitError| match e {
        LimitError::NonConvergence { .. } | LimitError::LostHerglotz { .. } => solve_homotopy(kernel, c, z.re, z.im, s),
        other => Err(other),
    };
    let a = solve_from(kernel, c, z, -1.0 / z, s).or_else(rescue)?;
    let b = solve_from(kernel, c, z, Complex64::i(), s).or_else(rescue)?;
    let gap = (a.s_under - b.s_under).norm();
    if gap > START_AGREEMENT * (1.0 + a.s_under.norm()) {
        return Err(LimitError::StartDependence { z, gap });
    }
    Ok(a)
}

/// `(S̲, S)` for the Gram limit of a stationary density `f`.
pub fn solve_limit_density(f: &SpectralDensity, c: f64, z: Complex64, s: &SolverSettings) -> Result<LimitSolution> {
    solve_checked(Kernel::Density(f), c, z, s)
}

/// `(S̲, S)` for a general H law.
pub fn solve_limit_h(h: &HLaw, c: f64, z: Complex64, s: &SolverSettings) -> Result<LimitSolution> {
    solve_checked(Kernel::Law(h), c, z, s)
}

/// Closed-form S̲ for constant `f` with variance σ²: the upper-half-plane
/// root of `σ²z S̲² + (z + σ²(1−c)) S̲ + 1 = 0`.
pub fn marchenko_pastur_companion(variance: f64, c: f64, z: Complex64) -> Complex64 {
    let a = variance * z;
    let b = z + variance * (1.0 - c);
    let disc = (b * b - 4.0 * a).sqrt();
    let r1 = (-b + disc) / (2.0 * a);
    let r2 = (-b - disc) / (2.0 * a);
    if r1.im >= r2.im {
        r1
    } else {
        r2
    }
}

/// Limiting law on a grid of the continuous part plus the analytic atom at 0.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LimitDistribution {
    pub x_grid: Vec<f64>,
    pub density: Vec<f64>,
    pub cdf: Vec<f64>,
    pub atom0: f64,
    pub c: f64,
    pub family: String,
    pub params: Vec<(String, f64)>,
    pub eps_ladder: Vec<f64>,
    pub settings: SolverSettings,
    /// Largest post-hoc residual over all solves.
    pub max_residual: f64,
    /// Points where the last two ε estimates differ by more than 10%.
    pub unstable_points: Vec<f64>,
    /// Crossings of ρ through [`EDGE_LEVEL`], alternating up/down.
    pub edges: Vec<f64>,
}

impl LimitDistribution {
    /// Trapezoid mass of ρ plus the atom.
    pub fn total_mass(&self) -> f64 {
        self.atom0 + trapezoid_mass(&self.x_grid, &self.density)
    }

    /// Support intervals from the detected edges.
    pub fn support_intervals(&self) -> Vec<(f64, f64)> {
        self.edges
            .chunks(2)
            .filter(|p| p.len() == 2)
            .map(|p| (p[0], p[1]))
            .collect()
    }

    pub fn to_cdf(&self) -> Result<Cdf> {
        Ok(Cdf::from_grid(&self.x_grid, &self.cdf, self.atom0)?)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("x,density,cdf\n");
        for ((x, r), f) in self.x_grid.iter().zip(&self.density).zip(&self.cdf) {
            s.push_str(&format!("{x:.12e},{r:.12e},{f:.12e}\n"));
        }
        s
    }

    /// JSON sidecar: everything but the tabulated columns.
    pub fn sidecar_json(&self) -> String {
        let v = serde_json::json!({
            "c": self.c,
            "family": self.family,
            "params": self.params,
            "atom0": self.atom0,
            "total_mass": self.total_mass(),
            "eps_ladder": self.eps_ladder,
            "settings": self.settings,
            "max_residual": self.max_residual,
            "unstable_points": self.unstable_points.len(),
            "edges": self.edges,
            "grid_points": self.x_grid.len(),
        });
        serde_json::to_string_pretty(&v).expect("plain JSON values")
    }
}

fn trapezoid_mass(x: &[f64], rho: &[f64]) -> f64 {
    // The first node carries x_0·ρ_0 for the sliver (0, x_0).
    let head = x.first().zip(rho.first()).map(|(a, b)| a * b).unwrap_or(0.0);
    head + x
        .windows(2)
        .zip(rho.windows(2))
        .map(|(w, r)| 0.5 * (w[1] - w[0]) * (r[0] + r[1]))
        .sum::<f64>()
}

/// `max(0, 1 − 1/c)`: the rank deficit of `B_N` when p > N.
pub fn atom_at_zero(c: f64) -> f64 {
    (1.0 - 1.0 / c).max(0.0)
}

/// Density of the continuous part from the companion at `z`. For c > 1 the
/// atom of S is exactly `−(1−1/c)/z`, so `S̲/c` is the continuous part.
fn continuous_density(su: Complex64, c: f64, z: Complex64) -> f64 {
    let s = if c > 1.0 { su / c } else { companion_inverse(su, c, z) };
    s.im / PI
}

struct PointEstimate {
    rho: f64,
    residual: f64,
    unstable: bool,
}

/// ε ladder at `x`, shrunk near the origin so the hard edge at c = 1 stays
/// resolved.
fn ladder_at(x: f64, eps: &[f64], scale: f64) -> Vec<f64> {
    let k = (x / scale).min(1.0);
    eps.iter().map(|e| e * k).collect()
}

/// Walks Im z down from 1 to `y` in factors of 4, warm-starting each solve;
/// used where `−1/z` is a poor start (near the origin or a hard edge).
fn solve_homotopy(kernel: Kernel, c: f64, x: f64, y: f64, s: &SolverSettings) -> Result<LimitSolution> {
    let mut rungs = vec![y];
    let mut t = y;
    while t < 0.25 {
        t *= 4.0;
        rungs.push(t);
    }
    let mut su: Option<Complex64> = None;
    let mut last = None;
    for &im in rungs.iter().rev() {
        let z = Complex64::new(x, im);
        let sol = solve_from(kernel, c, z, su.unwrap_or(-1.0 / z), s)?;
        su = Some(sol.s_under);
        last = Some(sol);
    }
    Ok(last.expect("at least one rung"))
}

fn estimate_at(
    kernel: Kernel,
    c: f64,
    x: f64,
    eps: &[f64],
    start: Option<Complex64>,
    near_origin: bool,
    s: &SolverSettings,
) -> Result<PointEstimate> {
    let mut su = start;
    let mut rhos = Vec::with_capacity(eps.len());
    let mut residual: f64 = 0.0;
    // Homotopy: each ε starts from the previous (larger-ε) solution.
    for &e in eps {
        let z = Complex64::new(x, e);
        let sol = match (su, near_origin) {
            (None, true) => solve_homotopy(kernel, c, x, e, s)?,
            _ => match solve_from(kernel, c, z, su.unwrap_or(-1.0 / z), s) {
                Ok(v) => v,
                Err(_) => solve_homotopy(kernel, c, x, e, s)?,
            },
        };
        su = Some(sol.s_under);
        residual = residual.max(sol.residual);
        rhos.push(continuous_density(sol.s_under, c, z));
    }
    let n = eps.len();
    let rho = if n >= 2 {
        let (ea, eb) = (eps[n - 2], eps[n - 1]);
        let (ra, rb) = (rhos[n - 2], rhos[n - 1]);
        ((ea * rb - eb * ra) / (ea - eb)).max(0.0)
    } else {
        rhos[0].max(0.0)
    };
    let unstable = n >= 2 && {
        let (ra, rb) = (rhos[n - 2], rhos[n - 1]);
        rb > 10.0 * EDGE_LEVEL && (ra - rb).abs() > 0.1 * rb
    };
    Ok(PointEstimate {
        rho,
        residual,
        unstable,
    })
}

/// Uniform points across the bulk of the automatic grid; square-root edges
/// need this many to keep the trapezoid mass within 1e-3.
const BULK_POINTS: usize = 1500;

/// Default inversion grid: a geometric head toward 0 when the spectrum may
/// reach the origin, a uniform bulk, and a geometric tail for unbounded f.
pub fn auto_grid(f: &SpectralDensity, c: f64) -> Result<Vec<f64>> {
    if !(c > 0.0) {
        return Err(LimitError::InvalidArgument("c must be positive".into()));
    }
    let c0 = spectral::covariance_from_density(f, 0)?;
    let g_min = spectral::h_quantile(f, 0.0);
    let rc = c.sqrt();
    let lo = 0.9 * g_min * (1.0 - rc).powi(2);
    let bulk_top = if f.is_bounded() {
        2.0 * PI * f.supremum()
    } else {
        spectral::h_quantile(f, 0.9)
    } * (1.0 + rc).powi(2)
        * 1.05;
    let top = if f.is_bounded() {
        bulk_top
    } else {
        spectral::h_quantile(f, 1.0 - 1e-5) * (1.0 + rc).powi(2) * 1.05
    };
    let mut grid = Vec::new();
    let bulk_start = if lo < 1e-3 * c0 {
        let head_end = 0.01 * bulk_top;
        grid.extend(geomspace(1e-8 * c0, head_end, 200));
        grid.pop();
        head_end
    } else {
        lo
    };
    grid.extend((0..=BULK_POINTS).map(|k| bulk_start + (bulk_top - bulk_start) * k as f64 / BULK_POINTS as f64));
    if top > bulk_top * 1.001 {
        grid.extend(geomspace(bulk_top, top, 200).into_iter().skip(1));
    }
    Ok(grid)
}

pub fn geomspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    let r = (b / a).ln() / (n - 1) as f64;
    (0..n).map(|k| a * (r * k as f64).exp()).collect()
}

/// Recovers ρ on `x_grid` by Stieltjes inversion of the companion solution
/// along a decreasing ε ladder, then integrates the CDF.
pub fn invert_to_distribution(
    f: &SpectralDensity,
    c: f64,
    x_grid: &[f64],
    eps_ladder: &[f64],
    s: &SolverSettings,
) -> Result<LimitDistribution> {
    let scale = spectral::covariance_from_density(f, 0)?;
    let mut d = invert_kernel(Kernel::Density(f), c, x_grid, eps_ladder, scale, s)?;
    d.family = f.family_name().to_string();
    d.params = f.params().into_iter().map(|(k, v)| (k.to_string(), v)).collect();
    Ok(d)
}

/// As [`invert_to_distribution`] for an explicit H law; `scale` sets where
/// the ε ladder starts shrinking.
pub fn invert_kernel(
    kernel: Kernel,
    c: f64,
    x_grid: &[f64],
    eps_ladder: &[f64],
    scale: f64,
    s: &SolverSettings,
) -> Result<LimitDistribution> {
    s.validate()?;
    if !(c > 0.0) {
        return Err(LimitError::InvalidArgument("c must be positive".into()));
    }
    if x_grid.is_empty() || !x_grid.windows(2).all(|w| w[1] > w[0]) || !(x_grid[0] > 0.0) {
        return Err(LimitError::InvalidArgument(
            "x grid must be positive and increasing".into(),
        ));
    }
    if eps_ladder.is_empty() || !eps_ladder.windows(2).all(|w| w[1] < w[0]) || !(eps_ladder[eps_ladder.len() - 1] > 0.0)
    {
        return Err(LimitError::InvalidArgument(
            "ε ladder must be positive and decreasing".into(),
        ));
    }
    let estimates: Vec<PointEstimate> = x_grid
        .par_iter()
        .map(|&x| {
            estimate_at(
                kernel,
                c,
                x,
                &ladder_at(x, eps_ladder, scale),
                None,
                x < 0.01 * scale,
                s,
            )
        })
        .collect::<Result<_>>()?;
    let density: Vec<f64> = estimates.iter().map(|e| e.rho).collect();
    let atom0 = atom_at_zero(c);
    let mut cdf = Vec::with_capacity(x_grid.len());
    let mut acc = atom0 + x_grid[0] * density[0];
    cdf.push(acc);
    for k in 1..x_grid.len() {
        acc += 0.5 * (x_grid[k] - x_grid[k - 1]) * (density[k] + density[k - 1]);
        cdf.push(acc);
    }
    let mut edges = Vec::new();
    for k in 1..x_grid.len() {
        let (a, b) = (density[k - 1] >= EDGE_LEVEL, density[k] >= EDGE_LEVEL);
        if a != b {
            edges.push(refine_edge(kernel, c, x_grid, k, !a, eps_ladder, scale, s)?);
        }
    }
    Ok(LimitDistribution {
        x_grid: x_grid.to_vec(),
        density,
        cdf,
        atom0,
        c,
        family: String::new(),
        params: Vec::new(),
        eps_ladder: eps_ladder.to_vec(),
        settings: *s,
        max_residual: estimates.iter().map(|e| e.residual).fold(0.0, f64::max),
        unstable_points: x_grid
            .iter()
            .zip(&estimates)
            .filter(|(_, e)| e.unstable)
            .map(|(x, _)| *x)
            .collect(),
        edges,
    })
}

/// Locates a crossing of ρ through [`EDGE_LEVEL`] flagged between grid
/// nodes `k−1` and `k`. Densities are re-estimated with the ε ladder scaled
/// by 1/10, which shrinks the smearing of a square-root edge; the crossing
/// moves inward, so the search walks toward the support until the fine
/// estimates bracket the level, splits that cell into four and interpolates
/// linearly inside the sub-cell that brackets it.
#[allow(clippy::too_many_arguments)]
fn refine_edge(
    kernel: Kernel,
    c: f64,
    x_grid: &[f64],
    k: usize,
    upward: bool,
    eps: &[f64],
    scale: f64,
    s: &SolverSettings,
) -> Result<f64> {
    let fine: Vec<f64> = eps.iter().map(|e| e / 10.0).collect();
    let rho = |x: f64| -> Result<f64> {
        Ok(estimate_at(kernel, c, x, &ladder_at(x, &fine, scale), None, x < 0.01 * scale, s)?.rho)
    };
    let inside = |r: f64| r >= EDGE_LEVEL;
    // Indices (outer, inner) of the current cell, oriented toward the support.
    let (mut outer, mut inner) = if upward { (k - 1, k) } else { (k, k - 1) };
    let mut r_outer = rho(x_grid[outer])?;
    let mut r_inner = rho(x_grid[inner])?;
    for _ in 0..64 {
        if inside(r_outer) {
            // Fine crossing lies further out.
            let next = if upward {
                outer.checked_sub(1)
            } else {
                Some(outer + 1).filter(|&i| i < x_grid.len())
            };
            match next {
                Some(i) => {
                    (inner, r_inner) = (outer, r_outer);
                    outer = i;
                    r_outer = rho(x_grid[outer])?;
                }
                None => break,
            }
        } else if !inside(r_inner) {
            let next = if upward {
                Some(inner + 1).filter(|&i| i < x_grid.len())
            } else {
                inner.checked_sub(1)
            };
            match next {
                Some(i) => {
                    (outer, r_outer) = (inner, r_inner);
                    inner = i;
                    r_inner = rho(x_grid[inner])?;
                }
                None => break,
            }
        } else {
            break;
        }
    }
    let (x0, x1) = (x_grid[outer], x_grid[inner]);
    let mut xs = vec![x0];
    let mut rs = vec![r_outer];
    for j in 1..4 {
        let x = x0 + (x1 - x0) * j as f64 / 4.0;
        xs.push(x);
        rs.push(rho(x)?);
    }
    xs.push(x1);
    rs.push(r_inner);
    for j in 1..xs.len() {
        if inside(rs[j]) && !inside(rs[j - 1]) {
            let t = (EDGE_LEVEL - rs[j - 1]) / (rs[j] - rs[j - 1]);
            return Ok(xs[j - 1] + t.clamp(0.0, 1.0) * (xs[j] - xs[j - 1]));
        }
    }
    Ok(0.5 * (x0 + x1))
}

/// One rung of the truncation ladder.
#[derive(Debug, Clone, PartialEq)]
pub struct LadderEntry {
    pub b: f64,
    /// `∫ f_b` over [−π, π], i.e. the variance c_0 of the truncated density.
    pub mass: f64,
    pub limit: LimitDistribution,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TruncationLadder {
    pub entries: Vec<LadderEntry>,
    /// Lévy distances between consecutive entries.
    pub gaps: Vec<f64>,
}

impl TruncationLadder {
    pub fn final_gap(&self) -> Option<f64> {
        self.gaps.last().copied()
    }

    pub fn gaps_weakly_decreasing(&self, slack: f64) -> bool {
        self.gaps.windows(2).all(|w| w[1] <= w[0] + slack)
    }
}

/// Limits of `f_b = f ∧ b` along `b_list` and the Lévy gaps between
/// consecutive rungs.
pub fn truncation_ladder(
    f: &SpectralDensity,
    c: f64,
    b_list: &[f64],
    x_grid: &[f64],
    eps_ladder: &[f64],
    s: &SolverSettings,
) -> Result<TruncationLadder> {
    if b_list.is_empty() || !b_list.windows(2).all(|w| w[1] > w[0]) || !(b_list[0] > 0.0) {
        return Err(LimitError::InvalidArgument(
            "b list must be positive and increasing".into(),
        ));
    }
    let mut entries = Vec::with_capacity(b_list.len());
    for &b in b_list {
        let fb = spectral::truncate_density(f, b)?;
        let mass = spectral::covariance_from_density(&fb, 0)?;
        let limit = invert_to_distribution(&fb, c, x_grid, eps_ladder, s)?;
        entries.push(LadderEntry { b, mass, limit });
    }
    let mut gaps = Vec::with_capacity(entries.len().saturating_sub(1));
    for w in entries.windows(2) {
        gaps.push(metrics::levy_distance(&w[0].limit.to_cdf()?, &w[1].limit.to_cdf()?));
    }
    Ok(TruncationLadder { entries, gaps })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn companion_examples() {
        let z = Complex64::new(0.3, 0.7);
        let s = Complex64::new(-0.2, 1.1);
        assert_eq!(companion(s, 1.0, z), s);
        let v = companion(Complex64::i(), 0.5, Complex64::i());
        assert!((v - Complex64::i()).norm() < 1e-15);
        assert!((companion_inverse(companion(s, 0.3, z), 0.3, z) - s).norm() < 1e-15);
    }

    #[test]
    fn mp_root_satisfies_equation() {
        for c in [0.25, 1.0, 3.0] {
            let z = Complex64::new(0.7, 0.2);
            let su = marchenko_pastur_companion(2.0, c, z);
            assert!(su.im > 0.0);
            let r = z + 1.0 / su - c * 2.0 / (1.0 + 2.0 * su);
            assert!(r.norm() < 1e-13);
        }
    }

    #[test]
    fn point_mass_law_matches_constant_density() {
        let h = HLaw::point_mass(1.0).unwrap();
        let f = SpectralDensity::constant(1.0).unwrap();
        let z = Complex64::new(1.2, 0.3);
        let s = SolverSettings::default();
        let a = solve_limit_h(&h, 0.5, z, &s).unwrap();
        let b = solve_limit_density(&f, 0.5, z, &s).unwrap();
        assert!((a.s_under - b.s_under).norm() < 1e-10);
        assert!(a.s.im > 0.0 && a.s_under.im > 0.0);
    }

    #[test]
    fn rejects_bad_arguments() {
        let f = SpectralDensity::constant(1.0).unwrap();
        let s = SolverSettings::default();
        assert!(matches!(
            solve_limit_density(&f, 0.5, Complex64::new(1.0, 0.0), &s),
            Err(LimitError::Domain(_))
        ));
        assert!(solve_limit_density(&f, -1.0, Complex64::i(), &s).is_err());
        let bad = SolverSettings { damping: 0.0, ..s };
        assert!(solve_limit_density(&f, 0.5, Complex64::i(), &bad).is_err());
        assert!(invert_to_distribution(&f, 0.5, &[1.0, 0.5], &DEFAULT_EPS_LADDER, &s).is_err());
        assert!(invert_to_distribution(&f, 0.5, &[1.0], &[0.01, 0.02], &s).is_err());
    }

    #[test]
    fn hlaw_tail_goes_to_infinity() {
        let h = HLaw::new(&[1.0, 2.0], &[0.25, 0.75], &[]).unwrap();
        assert!((h.mass_at_infinity() - 0.25).abs() < 1e-15);
        assert!(HLaw::new(&[2.0, 1.0], &[0.0, 1.0], &[]).is_err());
    }

    #[test]
    fn atom_formula() {
        assert_eq!(atom_at_zero(0.5), 0.0);
        assert_eq!(atom_at_zero(2.0), 0.5);
        assert_eq!(atom_at_zero(1.0), 0.0);
    }
}
