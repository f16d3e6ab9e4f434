//! Eigensolver and Gram identities checked against an independent cyclic
//! Jacobi solver and exact trace identities.

use gramlimit::ensemble::{DataMatrix, InnovationLaw};
use gramlimit::matrixops::{
    gram, gram_dual, gram_stieltjes_identity, symmetric_eigen, symmetric_eigenvalues, symmetrize_gram, SymMatrix,
};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Cyclic Jacobi rotations until the off-diagonal mass vanishes.
fn jacobi_eigenvalues(a: &SymMatrix) -> Vec<f64> {
    let n = a.order();
    let mut m: Vec<Vec<f64>> = (0..n).map(|i| a.row(i).to_vec()).collect();
    for _ in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i][j] * m[i][j])
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if m[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m[k][p], m[k][q]);
                    m[k][p] = c * mkp - s * mkq;
                    m[k][q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[p][k], m[q][k]);
                    m[p][k] = c * mpk - s * mqk;
                    m[q][k] = s * mpk + c * mqk;
                }
            }
        }
    }
    let mut d: Vec<f64> = (0..n).map(|i| m[i][i]).collect();
    d.sort_by(f64::total_cmp);
    d
}

fn random_sym(n: usize, seed: u64) -> SymMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    SymMatrix::from_lower_fn(n, |_, _| rng.gen_range(-1.0..1.0))
}

fn random_data(rows: usize, cols: usize, seed: u64) -> DataMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = vec![0.0; rows * cols];
    InnovationLaw::Gaussian.fill(&mut rng, &mut v);
    DataMatrix::from_rows(rows, cols, v).unwrap()
}

#[test]
fn matches_jacobi_on_small_matrices() {
    for seed in 0..20 {
        let a = random_sym(5, seed);
        let got = symmetric_eigenvalues(&a).unwrap();
        let want = jacobi_eigenvalues(&a);
        for (g, w) in got.eigenvalues().iter().zip(&want) {
            assert!((g - w).abs() < 1e-8, "seed {seed}: {g} vs {w}");
        }
    }
}

#[test]
fn matches_jacobi_with_clustered_spectrum() {
    // Q diag(1, 1, 1+1e-9, 2, 2) Qᵀ from a random orthogonal basis.
    let base = symmetric_eigen(&random_sym(5, 77)).unwrap();
    let lams = [1.0, 1.0, 1.0 + 1e-9, 2.0, 2.0];
    let a = base.reconstruct(|l| {
        let i = base.values.iter().position(|v| *v == l).unwrap();
        lams[i]
    });
    let got = symmetric_eigenvalues(&a).unwrap();
    for (g, w) in got.eigenvalues().iter().zip(&jacobi_eigenvalues(&a)) {
        assert!((g - w).abs() < 1e-8);
    }
}

#[test]
fn trace_identities_up_to_512() {
    for n in [2, 3, 17, 64, 200, 512] {
        let a = random_sym(n, n as u64);
        let e = symmetric_eigenvalues(&a).unwrap();
        let s1: f64 = e.eigenvalues().iter().sum();
        let s2: f64 = e.eigenvalues().iter().map(|l| l * l).sum();
        let fro2 = a.frobenius_norm().powi(2);
        assert!(
            (s1 - a.trace()).abs() < 1e-10 * n as f64 * (1.0 + a.trace().abs()),
            "n={n}"
        );
        assert!((s2 - fro2).abs() < 1e-10 * n as f64 * fro2, "n={n}");
    }
}

#[test]
fn backward_stable_decomposition() {
    let n = 300;
    let a = random_sym(n, 5);
    let dec = symmetric_eigen(&a).unwrap();
    let q = &dec.vectors;
    let norm = a.frobenius_norm();
    let mut worst: f64 = 0.0;
    for k in 0..n {
        let v = &q[k * n..(k + 1) * n];
        for i in 0..n {
            let av: f64 = a.row(i).iter().zip(v).map(|(x, y)| x * y).sum();
            worst = worst.max((av - dec.values[k] * v[i]).abs());
        }
    }
    assert!(worst < 1e-12 * n as f64 * norm, "residual {worst}");
    // Orthonormality.
    for k in [0, 17, n - 1] {
        for l in [0, 17, n - 1] {
            let d: f64 = (0..n).map(|i| q[k * n + i] * q[l * n + i]).sum();
            let want = if k == l { 1.0 } else { 0.0 };
            assert!((d - want).abs() < 1e-12);
        }
    }
    let back = dec.reconstruct(|l| l);
    assert!(back.sub(&a).unwrap().frobenius_norm() < 1e-11 * norm);
}

#[test]
fn gram_and_dual_share_nonzero_spectrum() {
    let x = random_data(30, 12, 3);
    let b = symmetric_eigenvalues(&gram(&x)).unwrap();
    let d = symmetric_eigenvalues(&gram_dual(&x)).unwrap();
    let tail = &d.eigenvalues()[30 - 12..];
    for (u, v) in b.eigenvalues().iter().zip(tail) {
        assert!((u - v).abs() < 1e-10);
    }
    assert!(d.eigenvalues()[..18].iter().all(|v| v.abs() < 1e-10));
}

#[test]
fn symmetrization_spectrum_is_signed_singular_values() {
    let x = random_data(9, 4, 8);
    let b = symmetric_eigenvalues(&gram(&x)).unwrap();
    let s = symmetric_eigenvalues(&symmetrize_gram(&x)).unwrap();
    let e = s.eigenvalues();
    assert_eq!(e.len(), 13);
    // ±√λ_j(B_N) plus N − p zeros.
    for (k, l) in b.eigenvalues().iter().enumerate() {
        assert!((e[9 + k] - l.sqrt()).abs() < 1e-10);
        assert!((e[3 - k] + l.sqrt()).abs() < 1e-10);
    }
    assert!(e[4..9].iter().all(|v| v.abs() < 1e-10));
}

#[test]
fn gram_stieltjes_identity_holds() {
    for (rows, cols, seed) in [(40, 20, 1), (20, 40, 2), (33, 33, 3)] {
        let x = random_data(rows, cols, seed);
        for z in [
            Complex64::new(0.5, 0.1),
            Complex64::new(2.0, 1.0),
            Complex64::new(-1.0, 0.01),
        ] {
            let id = gram_stieltjes_identity(&x, z).unwrap();
            assert!(id.gap() < 1e-10 * (1.0 + id.lhs.norm()), "{rows}x{cols} {z}: {:?}", id);
        }
    }
}
