//! Distances between distribution functions, the two comparison-lemma
//! bounds as checkable inequalities, and the Lindeberg statistic.

use num_complex::Complex64;
use thiserror::Error;

use crate::ensemble::DataMatrix;
use crate::matrixops::{self, MatrixError, SymMatrix};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("invalid distribution: {0}")]
    InvalidCdf(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("Im z must be nonzero")]
    RealArgument,
    #[error(transparent)]
    Matrix(#[from] MatrixError),
}

pub type Result<T> = std::result::Result<T, MetricsError>;

/// Breakpoint of a piecewise-linear CDF with left and right limits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Knot {
    pub x: f64,
    pub left: f64,
    pub right: f64,
}

/// A CDF given by knots: 0 before the first knot, 1 after the last, linear
/// from one knot's right limit to the next knot's left limit. Step CDFs
/// have `right_i == left_{i+1}`; grid CDFs interpolate between nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct Cdf {
    knots: Vec<Knot>,
}

impl Cdf {
    pub fn from_knots(knots: Vec<Knot>) -> Result<Self> {
        if knots.is_empty() {
            return Err(MetricsError::InvalidCdf("no knots".into()));
        }
        let tol = 1e-9;
        let mut prev_x = f64::NEG_INFINITY;
        let mut prev_v = 0.0;
        for k in &knots {
            if !(k.x > prev_x) || !k.x.is_finite() {
                return Err(MetricsError::InvalidCdf(
                    "knots must be strictly increasing and finite".into(),
                ));
            }
            if !(k.left >= prev_v - tol && k.right >= k.left - tol && k.right <= 1.0 + tol && k.left >= -tol) {
                return Err(MetricsError::InvalidCdf(format!(
                    "not nondecreasing in [0,1] at x = {}",
                    k.x
                )));
            }
            prev_x = k.x;
            prev_v = k.right;
        }
        Ok(Self { knots })
    }

    /// Empirical CDF with mass 1/n per sample; ties are merged.
    pub fn from_samples(samples: &[f64]) -> Result<Self> {
        let w = vec![1.0 / samples.len() as f64; samples.len()];
        Self::from_weighted(samples, &w)
    }

    /// Step CDF with explicit weights summing to one.
    pub fn from_weighted(points: &[f64], weights: &[f64]) -> Result<Self> {
        if points.is_empty() || points.len() != weights.len() {
            return Err(MetricsError::InvalidCdf(
                "need matching nonempty points and weights".into(),
            ));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(MetricsError::InvalidCdf("weights must be nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(MetricsError::InvalidCdf(format!("weights sum to {total}")));
        }
        let mut idx: Vec<usize> = (0..points.len()).collect();
        idx.sort_by(|&a, &b| points[a].total_cmp(&points[b]));
        let mut knots: Vec<Knot> = Vec::with_capacity(points.len());
        let mut acc = 0.0;
        for i in idx {
            let x = points[i];
            if !x.is_finite() {
                return Err(MetricsError::InvalidCdf("points must be finite".into()));
            }
            acc += weights[i];
            match knots.last_mut() {
                Some(k) if k.x == x => k.right = acc.min(1.0),
                _ => knots.push(Knot {
                    x,
                    left: (acc - weights[i]).max(0.0),
                    right: acc.min(1.0),
                }),
            }
        }
        let last = knots.last_mut().expect("nonempty");
        last.right = 1.0;
        Self::from_knots(knots)
    }

    /// Grid CDF of a law with an atom `atom0` at the origin and a continuous
    /// part tabulated as `cdf` on positive `grid` nodes (`cdf` includes the
    /// atom). Linear between nodes, from `atom0` at 0 to `cdf[0]` at the
    /// first node, and jumps to 1 after the last node.
    pub fn from_grid(grid: &[f64], cdf: &[f64], atom0: f64) -> Result<Self> {
        if grid.is_empty() || grid.len() != cdf.len() {
            return Err(MetricsError::InvalidCdf("need matching nonempty grid and cdf".into()));
        }
        if !(grid[0] > 0.0) {
            return Err(MetricsError::InvalidCdf("grid nodes must be positive".into()));
        }
        let mut knots = Vec::with_capacity(grid.len() + 1);
        knots.push(Knot {
            x: 0.0,
            left: 0.0,
            right: atom0,
        });
        let mut running = atom0;
        for (&x, &v) in grid.iter().zip(cdf) {
            // Monotone repair of round-off-level dips.
            running = v.max(running).min(1.0);
            knots.push(Knot {
                x,
                left: running,
                right: running,
            });
        }
        knots.last_mut().expect("nonempty").right = 1.0;
        Self::from_knots(knots)
    }

    /// Grid CDF whose atoms sit on grid nodes: `cdf` is the full CDF, the
    /// continuous part is linear between nodes, and a node carrying an
    /// atom jumps by its mass. Mass beyond the grid lands after the last node.
    pub fn from_grid_with_atoms(grid: &[f64], cdf: &[f64], atoms: &[(f64, f64)]) -> Result<Self> {
        if grid.is_empty() || grid.len() != cdf.len() {
            return Err(MetricsError::InvalidCdf("need matching nonempty grid and cdf".into()));
        }
        let mut knots = Vec::with_capacity(grid.len());
        let mut running: f64 = 0.0;
        for (&x, &v) in grid.iter().zip(cdf) {
            let jump: f64 = atoms.iter().filter(|a| a.0 == x).map(|a| a.1).sum();
            let right = v.max(running).min(1.0);
            let left = (right - jump).max(running);
            knots.push(Knot { x, left, right });
            running = right;
        }
        knots.last_mut().expect("nonempty").right = 1.0;
        Self::from_knots(knots)
    }

    pub fn knots(&self) -> &[Knot] {
        &self.knots
    }

    fn locate(&self, x: f64) -> usize {
        // Number of knots with knot.x <= x.
        self.knots.partition_point(|k| k.x <= x)
    }

    fn between(&self, i: usize, x: f64) -> f64 {
        // x strictly between knots i-1 and i.
        if i == 0 {
            return 0.0;
        }
        if i == self.knots.len() {
            return 1.0;
        }
        let (a, b) = (self.knots[i - 1], self.knots[i]);
        if a.right == b.left {
            return a.right;
        }
        let t = (x - a.x) / (b.x - a.x);
        a.right + t * (b.left - a.right)
    }

    /// Right-continuous value F(x).
    pub fn value(&self, x: f64) -> f64 {
        let i = self.locate(x);
        if i > 0 && self.knots[i - 1].x == x {
            return self.knots[i - 1].right;
        }
        self.between(i, x)
    }

    /// Left limit F(x−).
    pub fn left_limit(&self, x: f64) -> f64 {
        let i = self.locate(x);
        if i > 0 && self.knots[i - 1].x == x {
            return self.knots[i - 1].left;
        }
        self.between(i, x)
    }
}

/// One-sided envelope check: `G(x) ≤ F(x+ε) + ε` for all x. Both sides are
/// piecewise linear in x, so it suffices to test both one-sided limits at
/// the merged breakpoints {G knots} ∪ {F knots − ε}.
fn upper_ok(f: &Cdf, g: &Cdf, eps: f64) -> bool {
    let slack = 1e-12;
    let test =
        |x: f64| g.value(x) <= f.value(x + eps) + eps + slack && g.left_limit(x) <= f.left_limit(x + eps) + eps + slack;
    g.knots.iter().all(|k| test(k.x)) && f.knots.iter().all(|k| test(k.x - eps))
}

fn envelope_ok(f: &Cdf, g: &Cdf, eps: f64) -> bool {
    // F(x−ε) − ε ≤ G(x) is G(y) ≥ F(y−ε)−ε, i.e. F(y) ≤ G(y+ε)+ε.
    upper_ok(f, g, eps) && upper_ok(g, f, eps)
}

/// Lévy distance `inf{ε > 0 : F(x−ε)−ε ≤ G(x) ≤ F(x+ε)+ε ∀x}`, by
/// bisection on ε ∈ [0, 1] to absolute accuracy below 1e−12.
pub fn levy_distance(f: &Cdf, g: &Cdf) -> f64 {
    if envelope_ok(f, g, 0.0) {
        return 0.0;
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if envelope_ok(f, g, mid) {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo < 1e-13 {
            break;
        }
    }
    hi
}

/// `sup_x |F(x) − G(x)|`, exact: the difference is linear between merged
/// knots, so both one-sided limits at every knot suffice.
pub fn kolmogorov_distance(f: &Cdf, g: &Cdf) -> f64 {
    let mut worst: f64 = 0.0;
    for k in f.knots.iter().chain(&g.knots) {
        worst = worst
            .max((f.value(k.x) - g.value(k.x)).abs())
            .max((f.left_limit(k.x) - g.left_limit(k.x)).abs());
    }
    worst
}

/// Two sides of an inequality `lhs ≤ rhs`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundCheck {
    pub lhs: f64,
    pub rhs: f64,
}

impl BoundCheck {
    pub fn holds(&self) -> bool {
        self.lhs <= self.rhs * (1.0 + 1e-12) + 1e-15
    }
}

/// Stieltjes-difference bound in both forms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StieltjesBound {
    /// `|S_A(z) − S_B(z)|` against `|Tr(A−B)|^{1/2}/(y²√n)`. Fails in
    /// general: A = diag(1, −1), B = 0 has a zero right side.
    pub trace: BoundCheck,
    /// Same left side against `Tr((A−B)²)^{1/2}/(y²√n)`, which follows from
    /// the Hoffman–Wielandt inequality.
    pub frobenius: BoundCheck,
}

pub fn stieltjes_diff_bound(a: &SymMatrix, b: &SymMatrix, z: Complex64) -> Result<StieltjesBound> {
    if z.im == 0.0 {
        return Err(MetricsError::RealArgument);
    }
    let diff = a.sub(b)?;
    let n = a.order() as f64;
    // S(z̄) = conj S(z), so the lower half-plane needs no special casing.
    let lhs = (matrixops::symmetric_eigenvalues(a)?.stieltjes(upper(z))?
        - matrixops::symmetric_eigenvalues(b)?.stieltjes(upper(z))?)
    .norm();
    let scale = 1.0 / (z.im * z.im * n.sqrt());
    Ok(StieltjesBound {
        trace: BoundCheck {
            lhs,
            rhs: diff.trace().abs().sqrt() * scale,
        },
        frobenius: BoundCheck {
            lhs,
            rhs: diff.frobenius_norm() * scale,
        },
    })
}

fn upper(z: Complex64) -> Complex64 {
    if z.im > 0.0 {
        z
    } else {
        z.conj()
    }
}

/// `d²(F_{AAᵀ}, F_{BBᵀ}) ≤ (√2/n)[Tr(AAᵀ+BBᵀ)·Tr((A−B)(A−B)ᵀ)]^{1/2}` with
/// n = N the order of `AAᵀ`.
pub fn levy_gram_bound(a: &DataMatrix, b: &DataMatrix) -> Result<BoundCheck> {
    if a.rows() != b.rows() || a.cols() != b.cols() {
        return Err(MetricsError::ShapeMismatch(format!(
            "{}×{} vs {}×{}",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    let n = a.rows() as f64;
    let spectrum = |m: &DataMatrix| -> Result<Vec<f64>> {
        // gram_dual is (1/N)·mmᵀ.
        let e = matrixops::symmetric_eigenvalues(&matrixops::gram_dual(m))?;
        Ok(e.eigenvalues().iter().map(|v| v * n).collect())
    };
    let fa = Cdf::from_samples(&spectrum(a)?)?;
    let fb = Cdf::from_samples(&spectrum(b)?)?;
    let d = levy_distance(&fa, &fb);
    let sq = |m: &[f64]| m.iter().map(|v| v * v).sum::<f64>();
    let tr_sum = sq(a.as_slice()) + sq(b.as_slice());
    let tr_diff: f64 = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok(BoundCheck {
        lhs: d * d,
        rhs: 2f64.sqrt() / n * (tr_sum * tr_diff).sqrt(),
    })
}

/// `L(A) = (1/n²) Σ_{j≤i} x_{ij}² 1(|x_{ij}| > A)` over the lower triangle
/// listed row by row; n is recovered from the length.
pub fn lindeberg_statistic(lower_entries: &[f64], threshold: f64) -> Result<f64> {
    let len = lower_entries.len();
    let n = (((8 * len + 1) as f64).sqrt() as usize).saturating_sub(1) / 2;
    if n == 0 || n * (n + 1) / 2 != len {
        return Err(MetricsError::ShapeMismatch(format!("{len} is not a triangular number")));
    }
    if !(threshold > 0.0) {
        return Err(MetricsError::ShapeMismatch("threshold must be positive".into()));
    }
    let s: f64 = lower_entries
        .iter()
        .filter(|x| x.abs() > threshold)
        .map(|x| x * x)
        .sum();
    Ok(s / (n * n) as f64)
}

/// One row of a distance report.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceRow {
    pub metric: String,
    pub lhs: f64,
    pub bound: Option<f64>,
    pub pass: bool,
}

pub fn distance_csv(rows: &[DistanceRow]) -> String {
    let mut s = String::from("metric,lhs,rhs,pass\n");
    for r in rows {
        let rhs = r.bound.map(|b| format!("{b:.12e}")).unwrap_or_default();
        s.push_str(&format!("{},{:.12e},{},{}\n", r.metric, r.lhs, rhs, r.pass));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn delta(t: f64) -> Cdf {
        Cdf::from_samples(&[t]).unwrap()
    }

    #[test]
    fn point_masses() {
        assert_eq!(levy_distance(&delta(0.0), &delta(0.0)), 0.0);
        assert!((levy_distance(&delta(0.0), &delta(0.3)) - 0.3).abs() < 1e-12);
        assert!((levy_distance(&delta(0.0), &delta(5.0)) - 1.0).abs() < 1e-12);
        assert_eq!(kolmogorov_distance(&delta(0.0), &delta(0.3)), 1.0);
    }

    #[test]
    fn step_values_and_ties() {
        let f = Cdf::from_samples(&[1.0, 2.0, 2.0, 3.0]).unwrap();
        assert_eq!(f.value(0.5), 0.0);
        assert_eq!(f.value(1.0), 0.25);
        assert_eq!(f.left_limit(2.0), 0.25);
        assert_eq!(f.value(2.0), 0.75);
        assert_eq!(f.value(2.5), 0.75);
        assert_eq!(f.value(3.0), 1.0);
        assert_eq!(f.knots().len(), 3);
    }

    #[test]
    fn grid_cdf_shape() {
        let g = Cdf::from_grid(&[1.0, 2.0], &[0.5, 0.9], 0.25).unwrap();
        assert_eq!(g.left_limit(0.0), 0.0);
        assert_eq!(g.value(0.0), 0.25);
        assert!((g.value(0.5) - 0.375).abs() < 1e-15);
        assert!((g.value(1.5) - 0.7).abs() < 1e-15);
        assert!((g.left_limit(2.0) - 0.9).abs() < 1e-15);
        assert_eq!(g.value(2.0), 1.0);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(Cdf::from_weighted(&[1.0, 2.0], &[0.5, 0.4]).is_err());
        assert!(Cdf::from_grid(&[1.0, 2.0], &[0.5, 0.4], 0.0).is_ok()); // repaired dip
        assert!(Cdf::from_grid(&[0.0], &[1.0], 0.0).is_err());
        assert!(Cdf::from_samples(&[f64::NAN]).is_err());
    }

    #[test]
    fn lindeberg_examples() {
        assert_eq!(lindeberg_statistic(&[0.5, -1.0, 0.2], 1.0).unwrap(), 0.0);
        let mut x = vec![0.0; 10];
        x[7] = 3.0;
        assert!((lindeberg_statistic(&x, 1.0).unwrap() - 9.0 / 16.0).abs() < 1e-15);
        assert!(lindeberg_statistic(&[1.0, 2.0], 1.0).is_err());
    }

    #[test]
    fn trace_form_counterexample() {
        // A = diag(1, −1), B = 0, z = i: Tr(A−B) = 0 but S_A(i) ≠ S_B(i).
        let a = SymMatrix::from_lower_fn(2, |i, j| {
            if i != j {
                0.0
            } else if i == 0 {
                1.0
            } else {
                -1.0
            }
        });
        let b = SymMatrix::zeros(2);
        let r = stieltjes_diff_bound(&a, &b, Complex64::new(0.0, 1.0)).unwrap();
        assert!((r.trace.lhs - 0.5).abs() < 1e-15);
        assert_eq!(r.trace.rhs, 0.0);
        assert!(!r.trace.holds());
        assert!(r.frobenius.holds());
    }

    #[test]
    fn csv_rows() {
        let s = distance_csv(&[DistanceRow {
            metric: "levy".into(),
            lhs: 0.1,
            bound: None,
            pass: true,
        }]);
        assert!(s.lines().nth(1).unwrap().starts_with("levy,1.0"));
    }
}
