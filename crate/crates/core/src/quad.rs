//! Adaptive composite Gauss–Legendre quadrature.
//!
//! Intervals are cut at declared breakpoints and singular points. A segment
//! that ends at an integrable power singularity `|x - s|^{-α}` is mapped
//! through `x = s + h·u^m` so the pulled-back integrand is bounded, and the
//! panels of every segment are then bisected adaptively (largest error
//! first) until the summed error estimate drops below the tolerance.
//! Repeated bisection of the panel touching a singular point is the dyadic
//! refinement toward that point.
//!
//! Error estimates compare a 20-point rule on a panel with the same rule on
//! its two halves. The tolerance is relative to the L¹ mass of the integrand
//! so that integrals which cancel (Fourier coefficients) are controlled on
//! the scale of their absolute mass.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::sync::OnceLock;

use num_complex::Complex64;
use thiserror::Error;

const GL_ORDER: usize = 20;
const MAX_POWER: f64 = 12.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QuadError {
    #[error("quadrature did not converge after {evals} evaluations (error estimate {error:.3e}, target {target:.3e})")]
    NonConvergence { evals: usize, error: f64, target: f64 },
    #[error("integrand is not finite at x = {at}")]
    NonFinite { at: f64 },
}

/// Integrable power singularity `|x - at|^{-exponent}` with `0 <= exponent < 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Singularity {
    pub at: f64,
    pub exponent: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadSettings {
    pub rel_tol: f64,
    pub max_evals: usize,
    /// Initial panels per segment; raise it for oscillatory integrands.
    pub min_panels: usize,
}

impl Default for QuadSettings {
    fn default() -> Self {
        Self {
            rel_tol: 1e-10,
            max_evals: 1 << 20,
            min_panels: 2,
        }
    }
}

impl QuadSettings {
    pub fn with_tol(rel_tol: f64) -> Self {
        Self {
            rel_tol,
            ..Self::default()
        }
    }

    pub fn with_min_panels(mut self, min_panels: usize) -> Self {
        self.min_panels = min_panels.max(1);
        self
    }
}

#[derive(Debug, Clone, Copy)]
pub struct QuadEstimate<T> {
    pub value: T,
    pub error: f64,
    /// ∫|integrand|, used as the tolerance scale.
    pub abs_mass: f64,
    pub evals: usize,
}

/// Values that can be integrated: real scalars, complex scalars, pairs.
pub trait QuadValue: Copy {
    fn zero() -> Self;
    fn add(self, other: Self) -> Self;
    fn scale(self, w: f64) -> Self;
    fn norm(self) -> f64;
    fn is_finite(self) -> bool;
}

impl QuadValue for f64 {
    fn zero() -> Self {
        0.0
    }
    fn add(self, other: Self) -> Self {
        self + other
    }
    fn scale(self, w: f64) -> Self {
        self * w
    }
    fn norm(self) -> f64 {
        self.abs()
    }
    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }
}

impl QuadValue for Complex64 {
    fn zero() -> Self {
        Complex64::new(0.0, 0.0)
    }
    fn add(self, other: Self) -> Self {
        self + other
    }
    fn scale(self, w: f64) -> Self {
        self * w
    }
    fn norm(self) -> f64 {
        Complex64::norm(self)
    }
    fn is_finite(self) -> bool {
        self.re.is_finite() && self.im.is_finite()
    }
}

impl<A: QuadValue, B: QuadValue> QuadValue for (A, B) {
    fn zero() -> Self {
        (A::zero(), B::zero())
    }
    fn add(self, other: Self) -> Self {
        (self.0.add(other.0), self.1.add(other.1))
    }
    fn scale(self, w: f64) -> Self {
        (self.0.scale(w), self.1.scale(w))
    }
    fn norm(self) -> f64 {
        self.0.norm().max(self.1.norm())
    }
    fn is_finite(self) -> bool {
        self.0.is_finite() && self.1.is_finite()
    }
}

/// Gauss–Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        dp = if d != 0.0 { d } else { dp };
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

fn gl20() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre(GL_ORDER))
}

#[derive(Debug, Clone, Copy)]
enum Map {
    Linear,
    PowerFromLeft(f64),
    PowerFromRight(f64),
}

#[derive(Debug, Clone, Copy)]
struct Segment {
    lo: f64,
    hi: f64,
    map: Map,
}

impl Segment {
    /// Maps u in [0,1] to (x, dx/du). `None` when x lands on the singular
    /// endpoint through underflow; such nodes carry no mass.
    #[inline]
    fn point(&self, u: f64) -> Option<(f64, f64)> {
        let h = self.hi - self.lo;
        match self.map {
            Map::Linear => Some((self.lo + h * u, h)),
            Map::PowerFromLeft(m) => {
                let um = u.powf(m);
                let x = self.lo + h * um;
                (x > self.lo).then(|| (x, h * m * um / u))
            }
            Map::PowerFromRight(m) => {
                let um = u.powf(m);
                let x = self.hi - h * um;
                (x < self.hi).then(|| (x, h * m * um / u))
            }
        }
    }
}

fn power_for(exponent: f64) -> f64 {
    let e = exponent.clamp(0.0, 0.999);
    (2.0 / (1.0 - e)).ceil().clamp(2.0, MAX_POWER)
}

fn build_segments(a: f64, b: f64, singular: &[Singularity], breakpoints: &[f64]) -> Vec<Segment> {
    let scale = a.abs().max(b.abs()).max(1.0);
    let near = |x: f64, y: f64| (x - y).abs() <= 1e-14 * scale;
    let mut cuts = vec![a, b];
    for s in singular {
        if s.at > a && s.at < b {
            cuts.push(s.at);
        }
    }
    for &p in breakpoints {
        if p > a && p < b {
            cuts.push(p);
        }
    }
    cuts.sort_by(f64::total_cmp);
    cuts.dedup_by(|x, y| near(*x, *y));
    let exponent_at = |x: f64| {
        singular
            .iter()
            .filter(|s| near(s.at, x))
            .map(|s| s.exponent)
            .fold(None, |acc: Option<f64>, e| Some(acc.map_or(e, |v| v.max(e))))
    };
    let mut segments = Vec::new();
    for w in cuts.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        match (exponent_at(lo), exponent_at(hi)) {
            (None, None) => segments.push(Segment {
                lo,
                hi,
                map: Map::Linear,
            }),
            (Some(e), None) => segments.push(Segment {
                lo,
                hi,
                map: Map::PowerFromLeft(power_for(e)),
            }),
            (None, Some(e)) => segments.push(Segment {
                lo,
                hi,
                map: Map::PowerFromRight(power_for(e)),
            }),
            (Some(el), Some(er)) => {
                let mid = 0.5 * (lo + hi);
                segments.push(Segment {
                    lo,
                    hi: mid,
                    map: Map::PowerFromLeft(power_for(el)),
                });
                segments.push(Segment {
                    lo: mid,
                    hi,
                    map: Map::PowerFromRight(power_for(er)),
                });
            }
        }
    }
    segments
}

#[derive(Clone, Copy)]
struct Panel<T> {
    seg: usize,
    u0: f64,
    u1: f64,
    left: T,
    right: T,
    abs: f64,
    err: f64,
}

struct HeapEntry {
    err: f64,
    idx: usize,
}

impl PartialEq for HeapEntry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for HeapEntry {}
impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        self.err.total_cmp(&other.err).then_with(|| other.idx.cmp(&self.idx))
    }
}

struct Engine<'a, T, F> {
    f: &'a F,
    segments: Vec<Segment>,
    evals: usize,
    _marker: std::marker::PhantomData<T>,
}

impl<'a, T: QuadValue, F: Fn(f64) -> T> Engine<'a, T, F> {
    /// 20-point rule on [u0,u1] of segment `seg`: (∫g, ∫|g|).
    fn rule(&mut self, seg: usize, u0: f64, u1: f64) -> Result<(T, f64), QuadError> {
        let (nodes, weights) = gl20();
        let s = self.segments[seg];
        let half = 0.5 * (u1 - u0);
        let mid = 0.5 * (u1 + u0);
        let mut acc = T::zero();
        let mut abs = 0.0;
        for (t, w) in nodes.iter().zip(weights) {
            let Some((x, jac)) = s.point(mid + half * t) else {
                continue;
            };
            let v = (self.f)(x);
            if !v.is_finite() {
                return Err(QuadError::NonFinite { at: x });
            }
            let wj = w * half * jac;
            acc = acc.add(v.scale(wj));
            abs += v.norm() * wj.abs();
        }
        self.evals += GL_ORDER;
        Ok((acc, abs))
    }

    fn panel(&mut self, seg: usize, u0: f64, u1: f64, whole: Option<T>) -> Result<Panel<T>, QuadError> {
        let whole = match whole {
            Some(w) => w,
            None => self.rule(seg, u0, u1)?.0,
        };
        let um = 0.5 * (u0 + u1);
        let (left, al) = self.rule(seg, u0, um)?;
        let (right, ar) = self.rule(seg, um, u1)?;
        let err = whole.add(left.add(right).scale(-1.0)).norm();
        Ok(Panel {
            seg,
            u0,
            u1,

            left,
            right,
            abs: al + ar,
            err,
        })
    }
}

/// Accepted panels, the segments they came from, evaluation count and
/// error estimate.
type Adapted<T> = (Vec<Panel<T>>, Vec<Segment>, usize, f64);

fn adaptive<T: QuadValue, F: Fn(f64) -> T>(
    f: &F,
    a: f64,
    b: f64,
    singular: &[Singularity],
    breakpoints: &[f64],
    settings: &QuadSettings,
) -> Result<Adapted<T>, QuadError> {
    let segments = if b > a {
        build_segments(a, b, singular, breakpoints)
    } else {
        Vec::new()
    };
    let mut engine = Engine {
        f,
        segments,
        evals: 0,
        _marker: std::marker::PhantomData,
    };
    let mut panels: Vec<Panel<T>> = Vec::new();
    let per_segment = settings.min_panels.max(1);
    for seg in 0..engine.segments.len() {
        for i in 0..per_segment {
            let u0 = i as f64 / per_segment as f64;
            let u1 = (i + 1) as f64 / per_segment as f64;
            panels.push(engine.panel(seg, u0, u1, None)?);
        }
    }
    let mut heap: BinaryHeap<HeapEntry> = panels
        .iter()
        .enumerate()
        .map(|(idx, p)| HeapEntry { err: p.err, idx })
        .collect();
    let mut alive = vec![true; panels.len()];
    let mut frozen_err = 0.0;
    loop {
        let mut err_sum = frozen_err;
        let mut abs_sum = 0.0;
        for (p, _) in panels.iter().zip(&alive).filter(|(_, a)| **a) {
            err_sum += p.err;
            abs_sum += p.abs;
        }
        let target = settings.rel_tol * abs_sum;
        if err_sum <= target {
            let kept: Vec<Panel<T>> = panels
                .into_iter()
                .zip(alive)
                .filter_map(|(p, a)| a.then_some(p))
                .collect();
            return Ok((kept, engine.segments, engine.evals, err_sum));
        }
        // Bisect a batch of the worst panels before re-summing.
        let batch = (heap.len() / 8).clamp(1, 64);
        let mut progressed = false;
        for _ in 0..batch {
            if engine.evals >= settings.max_evals {
                return Err(QuadError::NonConvergence {
                    evals: engine.evals,
                    error: err_sum,
                    target,
                });
            }
            let Some(HeapEntry { idx, .. }) = heap.pop() else {
                break;
            };
            let p = panels[idx];
            let um = 0.5 * (p.u0 + p.u1);
            if !(um > p.u0 && um < p.u1) || (p.u1 - p.u0) < 1e-15 {
                alive[idx] = false;
                frozen_err += p.err;
                continue;
            }
            alive[idx] = false;
            let l = engine.panel(p.seg, p.u0, um, Some(p.left))?;
            let r = engine.panel(p.seg, um, p.u1, Some(p.right))?;
            for child in [l, r] {
                let ci = panels.len();
                heap.push(HeapEntry {
                    err: child.err,
                    idx: ci,
                });
                panels.push(child);
                alive.push(true);
            }
            progressed = true;
        }
        if !progressed {
            return Err(QuadError::NonConvergence {
                evals: engine.evals,
                error: err_sum,
                target,
            });
        }
    }
}

/// Integrates `f` over `[a, b]`.
pub fn integrate<T: QuadValue, F: Fn(f64) -> T>(
    f: F,
    a: f64,
    b: f64,
    singular: &[Singularity],
    breakpoints: &[f64],
    settings: &QuadSettings,
) -> Result<QuadEstimate<T>, QuadError> {
    let (panels, _, evals, error) = adaptive(&f, a, b, singular, breakpoints, settings)?;
    let mut value = T::zero();
    let mut abs_mass = 0.0;
    for p in &panels {
        value = value.add(p.left.add(p.right));
        abs_mass += p.abs;
    }
    Ok(QuadEstimate {
        value,
        error,
        abs_mass,
        evals,
    })
}

/// A frozen composite rule: `∫ g ≈ Σ weights[i]·g(nodes[i])`.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl FixedRule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn apply<F: Fn(f64) -> f64>(&self, g: F) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * g(x)).sum()
    }
}

/// Builds a composite rule adapted to `f` (resolving its singularities to
/// `settings.rel_tol`) whose panels are additionally no wider than
/// `max_width` in x, so that it also resolves factors oscillating on that
/// scale. `refine` extra bisection levels are applied to every panel.
#[allow(clippy::too_many_arguments)]
pub fn adapted_rule<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    singular: &[Singularity],
    breakpoints: &[f64],
    settings: &QuadSettings,
    max_width: f64,
    refine: u32,
) -> Result<FixedRule, QuadError> {
    let (panels, segments, _, _) = adaptive(&f, a, b, singular, breakpoints, settings)?;
    let (nodes, weights) = gl20();
    let mut rule = FixedRule {
        nodes: Vec::new(),
        weights: Vec::new(),
    };
    let mut bounds: Vec<(usize, f64, f64)> = panels.iter().map(|p| (p.seg, p.u0, p.u1)).collect();
    bounds.sort_by(|x, y| x.0.cmp(&y.0).then(x.1.total_cmp(&y.1)));
    for (seg_idx, u0, u1) in bounds {
        let seg = segments[seg_idx];
        let x_extent = match (seg.point(u0), seg.point(u1)) {
            (Some((x0, _)), Some((x1, _))) => (x1 - x0).abs(),
            _ => (seg.hi - seg.lo) * (u1 - u0),
        };
        let mut pieces = ((x_extent / max_width).ceil() as usize).max(1);
        pieces <<= refine.min(16);
        let du = (u1 - u0) / pieces as f64;
        for k in 0..pieces {
            let a_u = u0 + du * k as f64;
            let half = 0.5 * du;
            let mid = a_u + half;
            for (t, w) in nodes.iter().zip(weights) {
                if let Some((x, jac)) = seg.point(mid + half * t) {
                    rule.nodes.push(x);
                    rule.weights.push(w * half * jac);
                }
            }
        }
    }
    Ok(rule)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn gauss_legendre_integrates_polynomials_exactly() {
        let (x, w) = gauss_legendre(20);
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-14);
        // ∫_{-1}^{1} x^38 = 2/39
        let v: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(38)).sum();
        assert!((v - 2.0 / 39.0).abs() < 1e-14);
    }

    #[test]
    fn smooth_integral() {
        let r = integrate(|x: f64| x.cos(), 0.0, PI / 2.0, &[], &[], &QuadSettings::default()).unwrap();
        assert!((r.value - 1.0).abs() < 1e-14);
    }

    #[test]
    fn endpoint_power_singularity() {
        // ∫_0^1 x^{-0.6} dx = 2.5
        let s = [Singularity { at: 0.0, exponent: 0.6 }];
        let r = integrate(|x: f64| x.powf(-0.6), 0.0, 1.0, &s, &[], &QuadSettings::default()).unwrap();
        assert!((r.value - 2.5).abs() < 1e-10, "{}", r.value);
    }

    #[test]
    fn interior_singularity_is_split() {
        // ∫_{-1}^{1} |x|^{-0.5} dx = 4
        let s = [Singularity { at: 0.0, exponent: 0.5 }];
        let r = integrate(
            |x: f64| x.abs().powf(-0.5),
            -1.0,
            1.0,
            &s,
            &[],
            &QuadSettings::default(),
        )
        .unwrap();
        assert!((r.value - 4.0).abs() < 1e-10);
    }

    #[test]
    fn strong_singularity_refines_dyadically() {
        // ∫_0^1 x^{-0.95} dx = 20
        let s = [Singularity {
            at: 0.0,
            exponent: 0.95,
        }];
        let r = integrate(|x: f64| x.powf(-0.95), 0.0, 1.0, &s, &[], &QuadSettings::default()).unwrap();
        assert!((r.value - 20.0).abs() < 1e-8 * 20.0, "{}", r.value);
    }

    #[test]
    fn kink_at_breakpoint() {
        let r = integrate(
            |x: f64| (x - 0.3).abs(),
            0.0,
            1.0,
            &[],
            &[0.3],
            &QuadSettings::default(),
        )
        .unwrap();
        assert!((r.value - (0.045 + 0.245)).abs() < 1e-14);
    }

    #[test]
    fn complex_integrand() {
        let r = integrate(
            |x: f64| Complex64::new(0.0, x).exp(),
            0.0,
            PI,
            &[],
            &[],
            &QuadSettings::default(),
        )
        .unwrap();
        assert!((r.value - Complex64::new(0.0, 2.0)).norm() < 1e-13);
    }

    #[test]
    fn eval_cap_reports_nonconvergence() {
        let settings = QuadSettings {
            rel_tol: 1e-14,
            max_evals: 200,
            min_panels: 1,
        };
        let r = integrate(|x: f64| (50.0 * x).sin().abs(), 0.0, 1.0, &[], &[], &settings);
        assert!(matches!(r, Err(QuadError::NonConvergence { .. })));
    }

    #[test]
    fn adapted_rule_resolves_oscillation_and_singularity() {
        let s = [Singularity { at: 0.0, exponent: 0.6 }];
        let f = |x: f64| x.powf(-0.6);
        let rule = adapted_rule(f, 0.0, 1.0, &s, &[], &QuadSettings::default(), 0.05, 0).unwrap();
        assert!((rule.apply(f) - 2.5).abs() < 1e-10);
        let coarse = rule.apply(|x| f(x) * (40.0 * x).cos());
        let adaptive = integrate(
            |x: f64| f(x) * (40.0 * x).cos(),
            0.0,
            1.0,
            &s,
            &[],
            &QuadSettings::default().with_min_panels(16),
        )
        .unwrap();
        assert!((coarse - adaptive.value).abs() < 1e-9);
    }
}
