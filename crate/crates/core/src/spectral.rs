//! Spectral densities on [-π, π] and the objects derived from them:
//! autocovariances, square-root linear filters, truncations, the
//! Toeplitz pushforward law `H` and the regularity profile of causal filters.
//!
//! Covariances use the un-normalised convention
//! `c_k = ∫_{-π}^{π} e^{ikθ} f(θ) dθ`, so a constant density `σ²/(2π)`
//! has `c_0 = σ²`.

use std::f64::consts::PI;
use std::fmt;
use std::path::Path;

use thiserror::Error;

use crate::quad::{self, FixedRule, QuadError, QuadSettings, Singularity};

const TWO_PI: f64 = 2.0 * PI;
/// Slack allowed when checking λ ∈ [-π, π].
const DOMAIN_SLACK: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum SpectralError {
    #[error("λ = {0} lies outside [-π, π]")]
    Domain(f64),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Quadrature(#[from] QuadError),
    #[error("filter tail {tail:.3e} still above target {target:.3e} at the half-length cap {cap}")]
    TailUnreachable { cap: usize, tail: f64, target: f64 },
    #[error("regularity profile needs a causal filter (offset {offset}); call to_causal() to relabel innovations")]
    TwoSidedFilter { offset: usize },
    #[error("density table: {0}")]
    Table(String),
    #[error("io error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, SpectralError>;

#[derive(Debug, Clone, PartialEq)]
enum Family {
    Constant {
        variance: f64,
    },
    Ar1 {
        phi: f64,
        variance: f64,
    },
    Ma1 {
        theta: f64,
        variance: f64,
    },
    Fractional {
        d: f64,
        variance: f64,
    },
    Tabulated {
        lambda: Vec<f64>,
        values: Vec<f64>,
    },
    Truncated {
        inner: Box<SpectralDensity>,
        cap: f64,
        /// Points of (0, π) where the inner density crosses the cap.
        crossings: Vec<f64>,
    },
}

/// Even, nonnegative, integrable density on [-π, π].
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralDensity {
    family: Family,
}

fn check(cond: bool, msg: &str) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(SpectralError::InvalidParameter(msg.to_string()))
    }
}

impl SpectralDensity {
    /// White noise with marginal variance `variance`: f = variance/(2π).
    pub fn constant(variance: f64) -> Result<Self> {
        check(variance.is_finite() && variance > 0.0, "variance must be positive")?;
        Ok(Self {
            family: Family::Constant { variance },
        })
    }

    /// AR(1) `X_t = φX_{t-1} + ε_t` with innovation variance `variance`.
    pub fn ar1(phi: f64, variance: f64) -> Result<Self> {
        check(phi > -1.0 && phi < 1.0, "phi must lie in (-1, 1)")?;
        check(variance.is_finite() && variance > 0.0, "variance must be positive")?;
        Ok(Self {
            family: Family::Ar1 { phi, variance },
        })
    }

    /// MA(1) `X_t = ε_t + θε_{t-1}` with innovation variance `variance`.
    pub fn ma1(theta: f64, variance: f64) -> Result<Self> {
        check(theta.is_finite(), "theta must be finite")?;
        check(variance.is_finite() && variance > 0.0, "variance must be positive")?;
        Ok(Self {
            family: Family::Ma1 { theta, variance },
        })
    }

    /// Fractionally integrated noise: f = variance/(2π)·|2 sin(λ/2)|^{-2d}.
    pub fn fractional(d: f64, variance: f64) -> Result<Self> {
        check(d > 0.0 && d < 0.5, "d must lie in (0, 1/2)")?;
        check(variance.is_finite() && variance > 0.0, "variance must be positive")?;
        Ok(Self {
            family: Family::Fractional { d, variance },
        })
    }

    /// Piecewise-linear density through `(λ_i, f_i)` on [0, π], mirrored to
    /// negative frequencies.
    pub fn tabulated(lambda: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if lambda.len() != values.len() {
            return Err(SpectralError::Table(format!(
                "{} frequencies but {} values",
                lambda.len(),
                values.len()
            )));
        }
        if lambda.len() < 2 {
            return Err(SpectralError::Table("need at least two rows".into()));
        }
        if lambda[0].abs() > 1e-9 || (lambda[lambda.len() - 1] - PI).abs() > 1e-9 {
            return Err(SpectralError::Table("frequencies must start at 0 and end at π".into()));
        }
        if lambda.windows(2).any(|w| w[1] <= w[0]) {
            return Err(SpectralError::Table("frequencies must be strictly increasing".into()));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(SpectralError::Table("values must be finite and nonnegative".into()));
        }
        if values.iter().all(|v| *v == 0.0) {
            return Err(SpectralError::Table("density is identically zero".into()));
        }
        let mut lambda = lambda;
        let last = lambda.len() - 1;
        lambda[0] = 0.0;
        lambda[last] = PI;
        Ok(Self {
            family: Family::Tabulated { lambda, values },
        })
    }

    /// Reads a two-column `λ f(λ)` table (whitespace or comma separated,
    /// `#` comments).
    pub fn from_table_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| SpectralError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut lambda = Vec::new();
        let mut values = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let cols: Vec<&str> = line
                .split(|c: char| c == ',' || c.is_whitespace())
                .filter(|s| !s.is_empty())
                .collect();
            if cols.len() != 2 {
                return Err(SpectralError::Table(format!(
                    "line {}: expected two columns",
                    lineno + 1
                )));
            }
            let parse = |s: &str| {
                s.parse::<f64>()
                    .map_err(|e| SpectralError::Table(format!("line {}: {e}", lineno + 1)))
            };
            lambda.push(parse(cols[0])?);
            values.push(parse(cols[1])?);
        }
        Self::tabulated(lambda, values)
    }

    /// Pointwise `min(self, cap)`.
    pub fn truncate(&self, cap: f64) -> Result<Self> {
        check(cap.is_finite() && cap > 0.0, "truncation cap must be positive")?;
        let crossings = cap_crossings(self, cap);
        Ok(Self {
            family: Family::Truncated {
                inner: Box::new(self.clone()),
                cap,
                crossings,
            },
        })
    }

    pub fn family_name(&self) -> &'static str {
        match self.family {
            Family::Constant { .. } => "constant",
            Family::Ar1 { .. } => "ar1",
            Family::Ma1 { .. } => "ma1",
            Family::Fractional { .. } => "fractional",
            Family::Tabulated { .. } => "tabulated",
            Family::Truncated { .. } => "truncated",
        }
    }

    /// Named numeric parameters, for manifests and sidecars.
    pub fn params(&self) -> Vec<(&'static str, f64)> {
        match &self.family {
            Family::Constant { variance } => vec![("variance", *variance)],
            Family::Ar1 { phi, variance } => vec![("phi", *phi), ("variance", *variance)],
            Family::Ma1 { theta, variance } => vec![("theta", *theta), ("variance", *variance)],
            Family::Fractional { d, variance } => vec![("d", *d), ("variance", *variance)],
            Family::Tabulated { lambda, .. } => vec![("rows", lambda.len() as f64)],
            Family::Truncated { inner, cap, .. } => {
                let mut p = vec![("cap", *cap)];
                p.extend(inner.params());
                p
            }
        }
    }

    /// Points of [-π, π] where the density diverges, with their power.
    pub fn singular_points(&self) -> Vec<Singularity> {
        match &self.family {
            Family::Fractional { d, .. } => vec![Singularity {
                at: 0.0,
                exponent: 2.0 * d,
            }],
            _ => Vec::new(),
        }
    }

    /// Kinks of the density in (0, π).
    pub fn breakpoints(&self) -> Vec<f64> {
        match &self.family {
            Family::Tabulated { lambda, .. } => lambda[1..lambda.len() - 1].to_vec(),
            Family::Truncated { inner, crossings, .. } => {
                let mut b = inner.breakpoints();
                b.extend_from_slice(crossings);
                b.sort_by(f64::total_cmp);
                b
            }
            _ => Vec::new(),
        }
    }

    pub fn is_bounded(&self) -> bool {
        self.singular_points().is_empty()
    }

    /// Supremum of the density (infinite for singular families).
    pub fn supremum(&self) -> f64 {
        match &self.family {
            Family::Constant { variance } => variance / TWO_PI,
            Family::Ar1 { phi, variance } => variance / (TWO_PI * (1.0 - phi.abs()).powi(2)),
            Family::Ma1 { theta, variance } => variance * (1.0 + theta.abs()).powi(2) / TWO_PI,
            Family::Fractional { .. } => f64::INFINITY,
            Family::Tabulated { values, .. } => values.iter().copied().fold(0.0, f64::max),
            Family::Truncated { inner, cap, .. } => inner.supremum().min(*cap),
        }
    }

    /// Density at `|λ|` without domain checks; `+∞` at singular points.
    pub fn value(&self, lambda: f64) -> f64 {
        let l = lambda.abs();
        match &self.family {
            Family::Constant { variance } => variance / TWO_PI,
            Family::Ar1 { phi, variance } => variance / (TWO_PI * (1.0 - 2.0 * phi * l.cos() + phi * phi)),
            Family::Ma1 { theta, variance } => {
                (variance / TWO_PI * (1.0 + 2.0 * theta * l.cos() + theta * theta)).max(0.0)
            }
            Family::Fractional { d, variance } => {
                if l == 0.0 {
                    f64::INFINITY
                } else {
                    variance / TWO_PI * (2.0 * (0.5 * l).sin()).powf(-2.0 * d)
                }
            }
            Family::Tabulated { lambda, values } => interpolate(lambda, values, l.min(PI)),
            Family::Truncated { inner, cap, .. } => inner.value(l).min(*cap),
        }
    }

    /// Checked evaluation of the density at λ ∈ [-π, π].
    pub fn eval(&self, lambda: f64) -> Result<f64> {
        if !(lambda.abs() <= PI + DOMAIN_SLACK) {
            return Err(SpectralError::Domain(lambda));
        }
        Ok(self.value(lambda))
    }

    /// Singularities seen from the half-domain [0, π].
    fn half_singularities(&self, power: f64) -> Vec<Singularity> {
        self.singular_points()
            .into_iter()
            .filter(|s| s.at >= 0.0)
            .map(|s| Singularity {
                at: s.at,
                exponent: s.exponent * power,
            })
            .collect()
    }
}

impl fmt::Display for SpectralDensity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(", self.family_name())?;
        for (i, (k, v)) in self.params().iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{k}={v}")?;
        }
        write!(f, ")")
    }
}

fn interpolate(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let i = xs.partition_point(|&v| v <= x);
    if i == 0 {
        return ys[0];
    }
    if i >= xs.len() {
        return ys[ys.len() - 1];
    }
    let (x0, x1) = (xs[i - 1], xs[i]);
    let t = (x - x0) / (x1 - x0);
    ys[i - 1] + t * (ys[i] - ys[i - 1])
}

/// Sample points on [0, π], graded geometrically toward singular points.
fn half_domain_samples(f: &SpectralDensity, uniform: usize) -> Vec<f64> {
    let mut pts: Vec<f64> = (0..=uniform).map(|i| PI * i as f64 / uniform as f64).collect();
    if !f.is_bounded() {
        let lo: f64 = 1e-15;
        let hi = PI / uniform as f64;
        let n = 240;
        for i in 0..n {
            pts.push(lo * (hi / lo).powf(i as f64 / (n - 1) as f64));
        }
    }
    pts.extend(f.breakpoints());
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    pts
}

fn bisect_crossing<P: Fn(f64) -> bool>(mut lo: f64, mut hi: f64, below_at_lo: bool, pred: P) -> f64 {
    // pred(lo) == below_at_lo, pred(hi) != below_at_lo
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if pred(mid) == below_at_lo {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn cap_crossings(f: &SpectralDensity, cap: f64) -> Vec<f64> {
    let pts = half_domain_samples(f, 4096);
    let above = |l: f64| f.value(l) > cap;
    let mut out = Vec::new();
    for w in pts.windows(2) {
        let (a, b) = (above(w[0]), above(w[1]));
        if a != b {
            let x = bisect_crossing(w[0], w[1], a, above);
            if x > 0.0 && x < PI {
                out.push(x);
            }
        }
    }
    out
}

/// `eval_density`: checked density value, `+∞` at singular points.
pub fn eval_density(f: &SpectralDensity, lambda: f64) -> Result<f64> {
    f.eval(lambda)
}

/// Lag-`k` autocovariance `c_k = 2∫_0^π cos(kθ) f(θ) dθ`.
pub fn covariance_from_density(f: &SpectralDensity, k: i64) -> Result<f64> {
    covariance_with(f, k, &QuadSettings::default())
}

pub fn covariance_with(f: &SpectralDensity, k: i64, settings: &QuadSettings) -> Result<f64> {
    let k = k.unsigned_abs() as f64;
    let sing = f.half_singularities(1.0);
    let mut breaks = f.breakpoints();
    if !sing.is_empty() && k > 0.0 {
        breaks.push(PI / (k + 1.0));
    }
    let settings = settings.with_min_panels(settings.min_panels.max((k / 2.0) as usize + 2));
    let r = quad::integrate(|t: f64| f.value(t) * (k * t).cos(), 0.0, PI, &sing, &breaks, &settings)?;
    Ok(2.0 * r.value)
}

/// Composite rule for ∫_0^π g(θ)cos(kθ)dθ, k ≤ max_freq, adapted to
/// the singularities of `f^power`.
fn fourier_rule(f: &SpectralDensity, power: f64, max_freq: usize, refine: u32) -> Result<FixedRule> {
    let sing = f.half_singularities(power);
    let breaks = f.breakpoints();
    let max_width = (1.5 * TWO_PI / (max_freq as f64 + 1.0)).min(PI / 8.0);
    let g = |t: f64| f.value(t).powf(power);
    Ok(quad::adapted_rule(
        g,
        0.0,
        PI,
        &sing,
        &breaks,
        &QuadSettings::default(),
        max_width,
        refine,
    )?)
}

/// `2·Σ_i w_i g(x_i) cos(k x_i)` for k = 0..=max_freq.
fn cosine_moments(rule: &FixedRule, g: impl Fn(f64) -> f64, max_freq: usize) -> Vec<f64> {
    let mut acc = vec![0.0; max_freq + 1];
    for (&x, &w) in rule.nodes.iter().zip(&rule.weights) {
        let wg = w * g(x);
        if wg == 0.0 || !wg.is_finite() {
            continue;
        }
        let c1 = x.cos();
        let two_c1 = 2.0 * c1;
        let (mut prev, mut cur) = (1.0, c1);
        acc[0] += wg;
        if max_freq >= 1 {
            acc[1] += wg * c1;
        }
        for a in acc.iter_mut().skip(2) {
            let next = two_c1 * cur - prev;
            prev = cur;
            cur = next;
            *a += wg * cur;
        }
    }
    acc.iter_mut().for_each(|a| *a *= 2.0);
    acc
}

/// Autocovariances `c_0..=c_{max_lag}` from one shared quadrature rule.
pub fn covariances(f: &SpectralDensity, max_lag: usize) -> Result<Vec<f64>> {
    let rule = fourier_rule(f, 1.0, max_lag, 0)?;
    Ok(cosine_moments(&rule, |t| f.value(t), max_lag))
}

/// Square-summable real filter `a_k`, k ∈ [-offset, len-1-offset].
#[derive(Debug, Clone, PartialEq)]
pub struct LinearFilter {
    offset: usize,
    coeffs: Vec<f64>,
    tail_bound: f64,
}

impl LinearFilter {
    pub fn new(offset: usize, coeffs: Vec<f64>, tail_bound: f64) -> Result<Self> {
        check(!coeffs.is_empty(), "filter needs at least one coefficient")?;
        check(offset < coeffs.len(), "filter offset must index a stored coefficient")?;
        check(
            coeffs.iter().all(|c| c.is_finite()),
            "filter coefficients must be finite",
        )?;
        check(
            tail_bound >= 0.0 && tail_bound.is_finite(),
            "tail bound must be nonnegative",
        )?;
        Ok(Self {
            offset,
            coeffs,
            tail_bound,
        })
    }

    /// Causal filter `a_0, a_1, ...` with no discarded tail.
    pub fn causal(coeffs: Vec<f64>) -> Result<Self> {
        Self::new(0, coeffs, 0.0)
    }

    pub fn offset(&self) -> usize {
        self.offset
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn tail_bound(&self) -> f64 {
        self.tail_bound
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn is_causal(&self) -> bool {
        self.offset == 0
    }

    /// Smallest and largest lag with a stored coefficient.
    pub fn lag_range(&self) -> (i64, i64) {
        (-(self.offset as i64), (self.coeffs.len() - 1 - self.offset) as i64)
    }

    pub fn coefficient(&self, k: i64) -> f64 {
        let i = k + self.offset as i64;
        if i < 0 || i >= self.coeffs.len() as i64 {
            0.0
        } else {
            self.coeffs[i as usize]
        }
    }

    pub fn sum_squares(&self) -> f64 {
        self.coeffs.iter().map(|a| a * a).sum()
    }

    /// `Σ_k a_k a_{k+h}`: lag-h covariance of the filtered unit-variance noise.
    pub fn autocovariance(&self, h: i64) -> f64 {
        let h = h.unsigned_abs() as usize;
        if h >= self.coeffs.len() {
            return 0.0;
        }
        self.coeffs.iter().zip(&self.coeffs[h..]).map(|(a, b)| a * b).sum()
    }

    /// Same coefficients re-indexed from lag 0. Driving it with the same
    /// innovations shifted by `offset` gives the same process.
    pub fn to_causal(&self) -> Self {
        Self {
            offset: 0,
            coeffs: self.coeffs.clone(),
            tail_bound: self.tail_bound,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterSettings {
    pub tail_tol: f64,
    /// Hard cap on the half-length K.
    pub max_half_length: usize,
}

impl Default for FilterSettings {
    fn default() -> Self {
        Self {
            tail_tol: 1e-6,
            max_half_length: 1 << 15,
        }
    }
}

/// Symmetric filter `a_k = (2π)^{-1/2} ∫ e^{ikx} √f(x) dx`, |k| ≤ K, with K
/// doubled until the discarded Parseval mass `c_0 − Σ_{|k|≤K} a_k²` is at
/// most `tail_tol·c_0`.
pub fn filter_from_density(f: &SpectralDensity, tail_tol: f64) -> Result<LinearFilter> {
    filter_with(
        f,
        &FilterSettings {
            tail_tol,
            ..FilterSettings::default()
        },
    )
}

pub fn filter_with(f: &SpectralDensity, settings: &FilterSettings) -> Result<LinearFilter> {
    check(settings.tail_tol > 0.0, "tail_tol must be positive")?;
    let c0 = covariance_from_density(f, 0)?;
    let norm = 1.0 / TWO_PI.sqrt();
    let mut half = 16usize.min(settings.max_half_length.max(1));
    loop {
        let rule = fourier_rule(f, 0.5, half, 0)?;
        let a: Vec<f64> = cosine_moments(&rule, |t| f.value(t).sqrt(), half)
            .into_iter()
            .map(|m| m * norm)
            .collect();
        let partial = a[0] * a[0] + 2.0 * a[1..].iter().map(|x| x * x).sum::<f64>();
        let tail = (c0 - partial).max(0.0);
        if tail <= settings.tail_tol * c0 {
            let mut coeffs = Vec::with_capacity(2 * half + 1);
            coeffs.extend(a[1..].iter().rev());
            coeffs.extend_from_slice(&a);
            return LinearFilter::new(half, coeffs, tail);
        }
        if half >= settings.max_half_length {
            return Err(SpectralError::TailUnreachable {
                cap: settings.max_half_length,
                tail,
                target: settings.tail_tol * c0,
            });
        }
        half = (2 * half).min(settings.max_half_length);
    }
}

/// `f ∧ b`.
pub fn truncate_density(f: &SpectralDensity, b: f64) -> Result<SpectralDensity> {
    f.truncate(b)
}

/// Law `H` of `2πf(U)`, U uniform on [-π, π]: its CDF on a grid together
/// with the atoms carried by level sets of positive measure.
#[derive(Debug, Clone, PartialEq)]
pub struct PushforwardLaw {
    pub grid: Vec<f64>,
    pub cdf: Vec<f64>,
    /// `(location, mass)` pairs.
    pub atoms: Vec<(f64, f64)>,
}

/// Sub-level measure of `g = 2πf` on [0, π], piece by piece.
struct LevelMeasure<'a> {
    f: &'a SpectralDensity,
    pts: Vec<f64>,
    vals: Vec<f64>,
}

impl<'a> LevelMeasure<'a> {
    fn new(f: &'a SpectralDensity) -> Self {
        let pts = half_domain_samples(f, 4096);
        let vals = pts.iter().map(|&l| TWO_PI * f.value(l)).collect();
        Self { f, pts, vals }
    }

    fn g(&self, l: f64) -> f64 {
        TWO_PI * self.f.value(l)
    }

    /// (1/π)·|{λ ∈ [0,π] : g(λ) ≤ x}|
    fn cdf(&self, x: f64) -> f64 {
        let mut m = 0.0;
        for i in 0..self.pts.len() - 1 {
            let (a, b) = (self.pts[i], self.pts[i + 1]);
            let (ga, gb) = (self.vals[i] <= x, self.vals[i + 1] <= x);
            match (ga, gb) {
                (true, true) => m += b - a,
                (false, false) => {}
                _ => {
                    let cross = bisect_crossing(a, b, ga, |l| self.g(l) <= x);
                    m += if ga { cross - a } else { b - cross };
                }
            }
        }
        (m / PI).clamp(0.0, 1.0)
    }

    fn atoms(&self) -> Vec<(f64, f64)> {
        let mut atoms: Vec<(f64, f64)> = Vec::new();
        let n = self.pts.len();
        for i in 0..n - 1 {
            let v = self.vals[i];
            if v != self.vals[i + 1] || !v.is_finite() {
                continue;
            }
            let mut len = self.pts[i + 1] - self.pts[i];
            // Extend into neighbouring pieces that only partly sit on the level.
            if i > 0 && self.vals[i - 1] != v {
                let c = bisect_crossing(self.pts[i], self.pts[i - 1], true, |l| self.g(l) == v);
                len += self.pts[i] - c;
            }
            if i + 2 < n && self.vals[i + 2] != v {
                let c = bisect_crossing(self.pts[i + 1], self.pts[i + 2], true, |l| self.g(l) == v);
                len += c - self.pts[i + 1];
            }
            match atoms.iter_mut().find(|(x, _)| *x == v) {
                Some(a) => a.1 += len,
                None => atoms.push((v, len)),
            }
        }
        atoms.into_iter().map(|(x, len)| (x, (len / PI).min(1.0))).collect()
    }
}

/// `H(x) = (1/2π)|{λ : 2πf(λ) ≤ x}|` on an increasing grid.
pub fn h_pushforward(f: &SpectralDensity, x_grid: &[f64]) -> Result<PushforwardLaw> {
    check(!x_grid.is_empty(), "x grid must be nonempty")?;
    check(
        x_grid.windows(2).all(|w| w[1] > w[0]),
        "x grid must be strictly increasing",
    )?;
    let lm = LevelMeasure::new(f);
    let mut cdf: Vec<f64> = x_grid.iter().map(|&x| lm.cdf(x)).collect();
    for i in 1..cdf.len() {
        cdf[i] = cdf[i].max(cdf[i - 1]);
    }
    Ok(PushforwardLaw {
        grid: x_grid.to_vec(),
        cdf,
        atoms: lm.atoms(),
    })
}

/// Quantile of `H` by bisection on the level measure.
pub fn h_quantile(f: &SpectralDensity, q: f64) -> f64 {
    let lm = LevelMeasure::new(f);
    let finite: Vec<f64> = lm.vals.iter().copied().filter(|v| v.is_finite()).collect();
    let mut lo = finite.iter().copied().fold(f64::INFINITY, f64::min);
    let mut hi = finite.iter().copied().fold(0.0, f64::max);
    if lm.cdf(lo) >= q {
        return lo;
    }
    while lm.cdf(hi) < q {
        hi *= 2.0;
        if !hi.is_finite() {
            return hi;
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if lm.cdf(mid) >= q {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= 1e-12 * hi {
            break;
        }
    }
    hi
}

/// `η_m = (Σ_{k≥m} a_k²)^{1/2}` for a causal filter.
pub fn regularity_profile(filter: &LinearFilter, m: usize) -> Result<f64> {
    if !filter.is_causal() {
        return Err(SpectralError::TwoSidedFilter {
            offset: filter.offset(),
        });
    }
    Ok(filter.coeffs().iter().skip(m).map(|a| a * a).sum::<f64>().sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frac() -> SpectralDensity {
        SpectralDensity::fractional(0.3, 1.0).unwrap()
    }

    #[test]
    fn eval_examples() {
        let c = SpectralDensity::constant(1.0).unwrap();
        assert!((eval_density(&c, 0.7).unwrap() - 0.159_154_943_091_895_3).abs() < 1e-15);
        assert_eq!(eval_density(&frac(), 0.0).unwrap(), f64::INFINITY);
        let expected = 2f64.powf(-0.6) / TWO_PI;
        assert!((eval_density(&frac(), PI).unwrap() - expected).abs() < 1e-15);
        assert!((expected - 0.1050).abs() < 5e-5);
    }

    #[test]
    fn eval_outside_domain_is_an_error() {
        let c = SpectralDensity::constant(1.0).unwrap();
        assert!(matches!(c.eval(3.2), Err(SpectralError::Domain(_))));
        assert!(matches!(c.eval(f64::NAN), Err(SpectralError::Domain(_))));
    }

    #[test]
    fn parameter_validation() {
        assert!(SpectralDensity::fractional(0.7, 1.0).is_err());
        assert!(SpectralDensity::ar1(1.0, 1.0).is_err());
        assert!(SpectralDensity::constant(0.0).is_err());
        let e = SpectralDensity::fractional(0.5, 1.0).unwrap_err();
        assert!(e.to_string().contains("d must lie in (0, 1/2)"));
    }

    #[test]
    fn constant_covariances() {
        let c = SpectralDensity::constant(1.0).unwrap();
        assert!((covariance_from_density(&c, 0).unwrap() - 1.0).abs() < 1e-14);
        assert!(covariance_from_density(&c, 3).unwrap().abs() < 1e-14);
    }

    #[test]
    fn ar1_lag_one() {
        let f = SpectralDensity::ar1(0.5, 1.0).unwrap();
        assert!((covariance_from_density(&f, 1).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert!((covariance_from_density(&f, 0).unwrap() - 4.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn ma1_covariances() {
        let f = SpectralDensity::ma1(0.4, 2.0).unwrap();
        let c = covariances(&f, 3).unwrap();
        assert!((c[0] - 2.0 * 1.16).abs() < 1e-12);
        assert!((c[1] - 0.8).abs() < 1e-12);
        assert!(c[2].abs() < 1e-12 && c[3].abs() < 1e-12);
    }

    #[test]
    fn constant_filter_is_a_delta() {
        let f = SpectralDensity::constant(1.0).unwrap();
        let filt = filter_from_density(&f, 1e-6).unwrap();
        assert!((filt.coefficient(0) - 1.0).abs() < 1e-12);
        for k in 1..=filt.lag_range().1 {
            assert!(filt.coefficient(k).abs() < 1e-12);
        }
        let f4 = SpectralDensity::constant(4.0).unwrap();
        assert!((filter_from_density(&f4, 1e-6).unwrap().coefficient(0) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn filter_is_exactly_symmetric() {
        let f = SpectralDensity::ar1(0.7, 1.0).unwrap();
        let filt = filter_from_density(&f, 1e-8).unwrap();
        let (lo, hi) = filt.lag_range();
        assert_eq!(lo, -hi);
        for k in 1..=hi {
            assert_eq!(filt.coefficient(k), filt.coefficient(-k));
        }
    }

    #[test]
    fn fractional_filter_hits_the_hard_cap_at_tight_tolerance() {
        let settings = FilterSettings {
            tail_tol: 1e-6,
            max_half_length: 1 << 10,
        };
        match filter_with(&frac(), &settings) {
            Err(SpectralError::TailUnreachable { cap, tail, target }) => {
                assert_eq!(cap, 1 << 10);
                assert!(tail > target);
            }
            other => panic!("expected TailUnreachable, got {other:?}"),
        }
    }

    #[test]
    fn truncation_examples() {
        let c = SpectralDensity::constant(1.0).unwrap();
        let t = truncate_density(&c, 0.1).unwrap();
        assert_eq!(t.value(0.3), 0.1);
        let t = truncate_density(&c, 1.0).unwrap();
        assert_eq!(t.value(0.3), 1.0 / TWO_PI);
        let t = truncate_density(&frac(), 5.0).unwrap();
        assert!(t.singular_points().is_empty());
        assert_eq!(t.value(0.0), 5.0);
        assert_eq!(t.value(1e-6), 5.0);
        assert_eq!(t.value(2.0), frac().value(2.0));
        assert_eq!(t.breakpoints().len(), 1);
    }

    #[test]
    fn constant_pushforward_is_a_point_mass() {
        let c = SpectralDensity::constant(2.0).unwrap();
        let h = h_pushforward(&c, &[1.0, 1.999, 2.0, 3.0]).unwrap();
        assert_eq!(h.cdf, vec![0.0, 0.0, 1.0, 1.0]);
        assert_eq!(h.atoms, vec![(2.0, 1.0)]);
    }

    #[test]
    fn truncated_pushforward_has_an_atom_at_the_cap() {
        let t = frac().truncate(1.0).unwrap();
        let h = h_pushforward(&t, &[1.0]).unwrap();
        assert_eq!(h.atoms.len(), 1);
        let (x, m) = h.atoms[0];
        assert_eq!(x, TWO_PI);
        // |{λ : |2 sin(λ/2)|^{-0.6} > 2π}| / (2π)
        let lam = 2.0 * (0.5 * TWO_PI.powf(-1.0 / 0.6)).asin();
        assert!((m - lam / PI).abs() < 1e-10, "{m} vs {}", lam / PI);
    }

    #[test]
    fn regularity_profile_examples() {
        let f = LinearFilter::causal(vec![3.0, 4.0]).unwrap();
        assert_eq!(regularity_profile(&f, 2).unwrap(), 0.0);
        assert_eq!(regularity_profile(&f, 1).unwrap(), 4.0);
        assert_eq!(regularity_profile(&f, 0).unwrap(), 5.0);
        let two_sided = LinearFilter::new(1, vec![1.0, 2.0, 1.0], 0.0).unwrap();
        assert!(matches!(
            regularity_profile(&two_sided, 0),
            Err(SpectralError::TwoSidedFilter { offset: 1 })
        ));
    }

    #[test]
    fn table_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.txt");
        std::fs::write(&p, format!("# lambda f\n0 0\n{} {}\n", PI, 0.5)).unwrap();
        let f = SpectralDensity::from_table_file(&p).unwrap();
        assert!((f.value(-PI / 2.0) - 0.25).abs() < 1e-15);
        std::fs::write(&p, "0 1\n1 1\n").unwrap();
        assert!(SpectralDensity::from_table_file(&p).is_err());
    }
}
