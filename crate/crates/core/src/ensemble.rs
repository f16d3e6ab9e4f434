//! Seeded generation of N×p data matrices with independent stationary rows.
//!
//! Every row draws from its own ChaCha stream keyed by `(seed, row index)`,
//! so a matrix is bit-identical however many threads produce it.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use rayon::prelude::*;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::matrixops::{self, MatrixError, SymMatrix};
use crate::spectral::{self, FilterSettings, LinearFilter, SpectralDensity, SpectralError};

pub const MATRIX_MAGIC: &[u8; 8] = b"GLDMATRX";
pub const MATRIX_FORMAT_VERSION: u32 = 1;
/// Default cap on N·(p + filter length) innovations per matrix.
pub const DEFAULT_MEMORY_BUDGET: usize = 1 << 30;
/// Eigenvalues of Γ_p below `-PSD_TOLERANCE·c_0` are rejected; the rest of
/// the negative ones are clamped to zero before rooting.
pub const PSD_TOLERANCE: f64 = 1e-8;
/// Modulation depth of the martingale-difference innovations.
const MARTINGALE_DEPTH: f64 = 0.5;

#[derive(Debug, Error)]
pub enum EnsembleError {
    #[error("invalid ensemble configuration: {0}")]
    InvalidConfig(String),
    #[error("generation needs {needed} innovations, above the memory budget {budget}")]
    Overflow { needed: usize, budget: usize },
    #[error("Toeplitz matrix is not positive semidefinite: min eigenvalue {min_eig:.3e} < -{threshold:.3e}")]
    NotPsd { min_eig: f64, threshold: f64 },
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Matrix(#[from] MatrixError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad matrix file: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, EnsembleError>;

/// Centered, unit-variance innovation laws.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InnovationLaw {
    Gaussian,
    Rademacher,
    /// Uniform on [-√3, √3].
    Uniform,
    /// Student t with ν > 4 degrees of freedom, divided by √(ν/(ν−2)).
    StudentT(f64),
    /// `ε_t = η_t·(1 + ½η_{t−1})^{1/2}` with η i.i.d. signs: a martingale
    /// difference sequence whose conditional variance depends on the past.
    MartingaleSign,
}

impl InnovationLaw {
    pub fn name(&self) -> String {
        match self {
            Self::Gaussian => "gaussian".into(),
            Self::Rademacher => "rademacher".into(),
            Self::Uniform => "uniform".into(),
            Self::StudentT(nu) => format!("student_t({nu})"),
            Self::MartingaleSign => "martingale_sign".into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::StudentT(nu) if !(*nu > 4.0 && nu.is_finite()) => {
                Err(EnsembleError::InvalidConfig("student_t needs nu > 4".into()))
            }
            _ => Ok(()),
        }
    }

    /// Fills `out` with consecutive innovations of one row.
    pub fn fill<R: Rng>(&self, rng: &mut R, out: &mut [f64]) {
        match *self {
            Self::Gaussian => out.iter_mut().for_each(|v| *v = rng.sample(StandardNormal)),
            Self::Rademacher => out
                .iter_mut()
                .for_each(|v| *v = if rng.gen::<bool>() { 1.0 } else { -1.0 }),
            Self::Uniform => {
                let r = 3f64.sqrt();
                out.iter_mut().for_each(|v| *v = rng.gen_range(-r..r));
            }
            Self::StudentT(nu) => {
                let t = StudentT::new(nu).expect("validated nu");
                let scale = ((nu - 2.0) / nu).sqrt();
                out.iter_mut().for_each(|v| *v = t.sample(rng) * scale);
            }
            Self::MartingaleSign => {
                let sign = |rng: &mut R| if rng.gen::<bool>() { 1.0 } else { -1.0 };
                let mut prev = sign(rng);
                for v in out.iter_mut() {
                    let eta = sign(rng);
                    *v = eta * (1.0 + MARTINGALE_DEPTH * prev).sqrt();
                    prev = eta;
                }
            }
        }
    }
}

/// Where the rows come from.
#[derive(Debug, Clone, PartialEq)]
pub enum RowSource {
    /// `X_j = Σ_k a_k ε_{j−k}` with i.i.d. (or martingale) innovations.
    Linear {
        filter: LinearFilter,
        innovation: InnovationLaw,
    },
    /// Gaussian rows through the square-root filter of a density.
    GaussianFromDensity { density: SpectralDensity, tail_tol: f64 },
    /// Gaussian rows `g Γ_p^{1/2}` with the exact Toeplitz covariance.
    ToeplitzGaussian { density: SpectralDensity },
}

impl RowSource {
    fn describe(&self) -> String {
        match self {
            Self::Linear { filter, innovation } => {
                let mut s = format!(
                    "linear;offset={};innovation={};coeffs=",
                    filter.offset(),
                    innovation.name()
                );
                for c in filter.coeffs() {
                    s.push_str(&format!("{:016x}", c.to_bits()));
                }
                s
            }
            Self::GaussianFromDensity { density, tail_tol } => {
                format!(
                    "gaussian-from-density;{};tail_tol={:016x}",
                    describe_density(density),
                    tail_tol.to_bits()
                )
            }
            Self::ToeplitzGaussian { density } => format!("toeplitz-gaussian;{}", describe_density(density)),
        }
    }
}

fn describe_density(f: &SpectralDensity) -> String {
    let mut s = f.family_name().to_string();
    for (k, v) in f.params() {
        s.push_str(&format!(";{k}={:016x}", v.to_bits()));
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleConfig {
    pub n_rows: usize,
    pub n_cols: usize,
    pub source: RowSource,
    pub seed: u64,
    pub memory_budget: usize,
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

impl EnsembleConfig {
    pub fn new(n_rows: usize, n_cols: usize, source: RowSource, seed: u64) -> Result<Self> {
        if n_rows == 0 || n_cols == 0 {
            return Err(EnsembleError::InvalidConfig("N and p must be at least 1".into()));
        }
        if let RowSource::Linear { innovation, .. } = &source {
            innovation.validate()?;
        }
        Ok(Self {
            n_rows,
            n_cols,
            source,
            seed,
            memory_budget: DEFAULT_MEMORY_BUDGET,
        })
    }

    /// `c = p/N` as a reduced fraction.
    pub fn aspect_ratio(&self) -> (u64, u64) {
        let (p, n) = (self.n_cols as u64, self.n_rows as u64);
        let g = gcd(p, n);
        (p / g, n / g)
    }

    pub fn source_hash(&self) -> [u8; 32] {
        Sha256::digest(self.source.describe().as_bytes()).into()
    }

    pub fn generate(&self) -> Result<DataMatrix> {
        match &self.source {
            RowSource::Linear { filter, innovation } => generate_linear_rows(self, filter, *innovation),
            RowSource::GaussianFromDensity { density, tail_tol } => {
                let filter = spectral::filter_with(
                    density,
                    &FilterSettings {
                        tail_tol: *tail_tol,
                        ..FilterSettings::default()
                    },
                )?;
                generate_linear_rows(self, &filter, InnovationLaw::Gaussian)
            }
            RowSource::ToeplitzGaussian { density } => {
                let root = toeplitz_root(density, self.n_cols)?;
                self.generate_with_root(&root)
            }
        }
    }

    /// Toeplitz-Gaussian rows from a precomputed `Γ_p^{1/2}`, so one root
    /// serves many seeds.
    pub fn generate_with_root(&self, root: &SymMatrix) -> Result<DataMatrix> {
        if root.order() != self.n_cols {
            return Err(EnsembleError::InvalidConfig(format!(
                "root has order {} but p = {}",
                root.order(),
                self.n_cols
            )));
        }
        generate_toeplitz_rows(self, root)
    }
}

/// Dense N×p matrix, row-major, tagged with the seed and source hash that
/// produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    seed: u64,
    source_hash: [u8; 32],
}

impl DataMatrix {
    pub fn from_rows(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(EnsembleError::InvalidConfig("matrix must be at least 1×1".into()));
        }
        if data.len() != rows * cols {
            return Err(EnsembleError::InvalidConfig(format!(
                "{} entries for a {rows}×{cols} matrix",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(EnsembleError::InvalidConfig("entries must be finite".into()));
        }
        Ok(Self {
            rows,
            cols,
            data,
            seed: 0,
            source_hash: [0; 32],
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn source_hash(&self) -> &[u8; 32] {
        &self.source_hash
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Column-major copy (p×N row-major).
    pub fn transposed(&self) -> Vec<f64> {
        let mut t = vec![0.0; self.data.len()];
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        t
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::with_capacity(self.data.len() * 24);
        for i in 0..self.rows {
            let row: Vec<String> = self.row(i).iter().map(|v| format!("{v:.17e}")).collect();
            s.push_str(&row.join(","));
            s.push('\n');
        }
        s
    }

    /// Header (magic, version, N, p, seed, source hash) then the entries as
    /// little-endian f64, row-major.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MATRIX_MAGIC)?;
        w.write_all(&MATRIX_FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(self.rows as u64).to_le_bytes())?;
        w.write_all(&(self.cols as u64).to_le_bytes())?;
        w.write_all(&self.seed.to_le_bytes())?;
        w.write_all(&self.source_hash)?;
        for v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MATRIX_MAGIC {
            return Err(EnsembleError::Format("bad magic".into()));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        let version = u32::from_le_bytes(b4);
        if version != MATRIX_FORMAT_VERSION {
            return Err(EnsembleError::Format(format!("unsupported version {version}")));
        }
        let mut b8 = [0u8; 8];
        let mut next_u64 = |r: &mut R| -> Result<u64> {
            r.read_exact(&mut b8)?;
            Ok(u64::from_le_bytes(b8))
        };
        let rows = next_u64(&mut r)? as usize;
        let cols = next_u64(&mut r)? as usize;
        let seed = next_u64(&mut r)?;
        let mut source_hash = [0u8; 32];
        r.read_exact(&mut source_hash)?;
        let count = rows
            .checked_mul(cols)
            .ok_or_else(|| EnsembleError::Format("dimensions overflow".into()))?;
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        if bytes.len() != count * 8 {
            return Err(EnsembleError::Format(format!(
                "expected {} data bytes, found {}",
                count * 8,
                bytes.len()
            )));
        }
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let mut m = Self::from_rows(rows, cols, data)?;
        m.seed = seed;
        m.source_hash = source_hash;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_binary(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_binary(BufReader::new(File::open(path)?))
    }
}

fn row_rng(seed: u64, row: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(row as u64);
    rng
}

fn finish(config: &EnsembleConfig, data: Vec<f64>) -> Result<DataMatrix> {
    let mut m = DataMatrix::from_rows(config.n_rows, config.n_cols, data)?;
    m.seed = config.seed;
    m.source_hash = config.source_hash();
    Ok(m)
}

/// Rows `X_{ij} = Σ_k a_k ε_{i,j−k}`. Each row draws `p + len − 1` fresh
/// innovations, covering every lag the filter reaches, so no wrap-around.
pub fn generate_linear_rows(
    config: &EnsembleConfig,
    filter: &LinearFilter,
    innovation: InnovationLaw,
) -> Result<DataMatrix> {
    innovation.validate()?;
    let (n, p, len) = (config.n_rows, config.n_cols, filter.len());
    let needed = n.checked_mul(p + len).ok_or(EnsembleError::Overflow {
        needed: usize::MAX,
        budget: config.memory_budget,
    })?;
    if needed > config.memory_budget {
        return Err(EnsembleError::Overflow {
            needed,
            budget: config.memory_budget,
        });
    }
    let reversed: Vec<f64> = filter.coeffs().iter().rev().copied().collect();
    let mut data = vec![0.0; n * p];
    data.par_chunks_mut(p).enumerate().for_each_init(
        || vec![0.0; p + len - 1],
        |eps, (i, row)| {
            let mut rng = row_rng(config.seed, i);
            innovation.fill(&mut rng, eps);
            for (j, x) in row.iter_mut().enumerate() {
                *x = reversed.iter().zip(&eps[j..j + len]).map(|(a, e)| a * e).sum();
            }
        },
    );
    finish(config, data)
}

/// Gaussian rows through `filter_from_density(f, tail_tol)`.
pub fn generate_gaussian_rows(
    density: &SpectralDensity,
    tail_tol: f64,
    n_rows: usize,
    n_cols: usize,
    seed: u64,
) -> Result<DataMatrix> {
    EnsembleConfig::new(
        n_rows,
        n_cols,
        RowSource::GaussianFromDensity {
            density: density.clone(),
            tail_tol,
        },
        seed,
    )?
    .generate()
}

/// Γ_p with entries `c_{|i−j|}`.
pub fn toeplitz_matrix(f: &SpectralDensity, p: usize) -> Result<SymMatrix> {
    if p == 0 {
        return Err(EnsembleError::InvalidConfig("p must be at least 1".into()));
    }
    if f.family_name() == "constant" {
        // White noise: exact identity rather than quadrature-level zeros.
        let c0 = f.params().iter().find(|(k, _)| *k == "variance").map_or(1.0, |kv| kv.1);
        return Ok(SymMatrix::from_lower_fn(p, |i, j| if i == j { c0 } else { 0.0 }));
    }
    let c = spectral::covariances(f, p - 1)?;
    Ok(SymMatrix::from_lower_fn(p, |i, j| c[i - j]))
}

/// Symmetric nonnegative square root of Γ_p.
pub fn toeplitz_root(f: &SpectralDensity, p: usize) -> Result<SymMatrix> {
    let gamma = toeplitz_matrix(f, p)?;
    let c0 = gamma.get(0, 0);
    let dec = matrixops::symmetric_eigen(&gamma)?;
    let min_eig = dec.values[0];
    let threshold = PSD_TOLERANCE * c0;
    if min_eig < -threshold {
        return Err(EnsembleError::NotPsd { min_eig, threshold });
    }
    Ok(dec.reconstruct(|l| l.max(0.0).sqrt()))
}

fn generate_toeplitz_rows(config: &EnsembleConfig, root: &SymMatrix) -> Result<DataMatrix> {
    let (n, p) = (config.n_rows, config.n_cols);
    let mut data = vec![0.0; n * p];
    data.par_chunks_mut(p).enumerate().for_each_init(
        || vec![0.0; p],
        |g, (i, row)| {
            let mut rng = row_rng(config.seed, i);
            InnovationLaw::Gaussian.fill(&mut rng, g);
            for (k, gk) in g.iter().enumerate() {
                for (x, r) in row.iter_mut().zip(root.row(k)) {
                    *x += gk * r;
                }
            }
        },
    );
    finish(config, data)
}

/// Rows distributed as `g_i Γ_p^{1/2}` with `g_i` i.i.d. standard normal.
pub fn generate_toeplitz_gaussian_rows(
    density: &SpectralDensity,
    n_rows: usize,
    n_cols: usize,
    seed: u64,
) -> Result<DataMatrix> {
    EnsembleConfig::new(
        n_rows,
        n_cols,
        RowSource::ToeplitzGaussian {
            density: density.clone(),
        },
        seed,
    )?
    .generate()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear(coeffs: Vec<f64>, law: InnovationLaw, n: usize, p: usize, seed: u64) -> DataMatrix {
        let filter = LinearFilter::causal(coeffs).unwrap();
        EnsembleConfig::new(
            n,
            p,
            RowSource::Linear {
                filter,
                innovation: law,
            },
            seed,
        )
        .unwrap()
        .generate()
        .unwrap()
    }

    #[test]
    fn same_seed_same_matrix() {
        for law in [
            InnovationLaw::Gaussian,
            InnovationLaw::MartingaleSign,
            InnovationLaw::StudentT(6.0),
        ] {
            let a = linear(vec![0.7], law, 5, 9, 11);
            let b = linear(vec![0.7], law, 5, 9, 11);
            assert_eq!(a, b);
            let c = linear(vec![0.7], law, 5, 9, 12);
            assert_ne!(a.as_slice(), c.as_slice());
        }
    }

    #[test]
    fn rows_do_not_depend_on_row_count() {
        let small = linear(vec![1.0, 0.5], InnovationLaw::Rademacher, 3, 6, 4);
        let big = linear(vec![1.0, 0.5], InnovationLaw::Rademacher, 10, 6, 4);
        assert_eq!(small.as_slice(), &big.as_slice()[..18]);
    }

    #[test]
    fn aspect_ratio_is_reduced() {
        let filter = LinearFilter::causal(vec![1.0]).unwrap();
        let cfg = EnsembleConfig::new(
            800,
            400,
            RowSource::Linear {
                filter,
                innovation: InnovationLaw::Gaussian,
            },
            0,
        )
        .unwrap();
        assert_eq!(cfg.aspect_ratio(), (1, 2));
    }

    #[test]
    fn budget_overflow_is_reported() {
        let filter = LinearFilter::causal(vec![1.0; 100]).unwrap();
        let mut cfg = EnsembleConfig::new(
            100,
            100,
            RowSource::Linear {
                filter,
                innovation: InnovationLaw::Gaussian,
            },
            0,
        )
        .unwrap();
        cfg.memory_budget = 1000;
        assert!(matches!(
            cfg.generate(),
            Err(EnsembleError::Overflow { needed: 20000, .. })
        ));
    }

    #[test]
    fn invalid_configs() {
        let filter = LinearFilter::causal(vec![1.0]).unwrap();
        let src = RowSource::Linear {
            filter,
            innovation: InnovationLaw::StudentT(3.0),
        };
        assert!(EnsembleConfig::new(1, 1, src.clone(), 0).is_err());
        assert!(EnsembleConfig::new(0, 1, src, 0).is_err());
    }

    #[test]
    fn toeplitz_examples() {
        let c = SpectralDensity::constant(1.0).unwrap();
        let g = toeplitz_matrix(&c, 3).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((g.get(i, j) - want).abs() < 1e-14);
            }
        }
        let ar = SpectralDensity::ar1(0.5, 1.0).unwrap();
        let g = toeplitz_matrix(&ar, 2).unwrap();
        assert!((g.get(0, 0) - 4.0 / 3.0).abs() < 1e-12);
        assert!((g.get(1, 0) - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(g.get(0, 1), g.get(1, 0));
    }

    #[test]
    fn binary_round_trip_and_corruption() {
        let m = linear(vec![1.0, -0.3], InnovationLaw::Uniform, 4, 3, 99);
        let mut buf = Vec::new();
        m.write_binary(&mut buf).unwrap();
        assert_eq!(buf.len(), 8 + 4 + 24 + 32 + 12 * 8);
        assert_eq!(DataMatrix::read_binary(buf.as_slice()).unwrap(), m);
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(
            DataMatrix::read_binary(bad.as_slice()),
            Err(EnsembleError::Format(_))
        ));
        buf.truncate(buf.len() - 3);
        assert!(DataMatrix::read_binary(buf.as_slice()).is_err());
    }

    #[test]
    fn csv_has_one_line_per_row() {
        let m = linear(vec![1.0], InnovationLaw::Gaussian, 3, 2, 1);
        let csv = m.to_csv();
        assert_eq!(csv.lines().count(), 3);
        assert_eq!(csv.lines().next().unwrap().split(',').count(), 2);
    }
}
