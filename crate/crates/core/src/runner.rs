//! Experiment runs: generation, eigen-analysis, limit solving and metrics
//! tied together, persisted through a staging directory that is renamed
//! into place only when the run ends.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::time::Instant;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::{hex, parse_innovation, Command, ConfigError, ExperimentConfig};
use crate::ensemble::{self, DataMatrix, EnsembleConfig, InnovationLaw, RowSource};
use crate::limit::{self, LimitDistribution, SolverSettings};
use crate::matrixops::{self, Esd, SymMatrix};
use crate::metrics::{self, Cdf, DistanceRow};
use crate::spectral::{self, FilterSettings, LinearFilter, SpectralDensity};

/// Environment variable naming the default output root.
pub const OUTPUT_ROOT_ENV: &str = "GRAMLIMIT_OUTPUT_ROOT";

pub const DEFAULT_KOLMOGOROV: f64 = 0.03;
pub const DEFAULT_LEVY_LONG_MEMORY: f64 = 0.08;
pub const DEFAULT_UNIVERSALITY: f64 = 0.05;
pub const DEFAULT_TOEPLITZ: f64 = 0.05;
pub const DEFAULT_FINAL_GAP: f64 = 0.01;
pub const DEFAULT_MASS: f64 = 2e-3;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("io error at {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("could not build worker pool: {0}")]
    Pool(String),
}

type StageResult<T> = std::result::Result<T, String>;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Artifact {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Failure {
    pub stage: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub artifact_version: String,
    pub seeds: Vec<u64>,
    /// Aspect ratios as reduced fractions `p/N` when sizes are given.
    pub aspect_ratios: Vec<String>,
    pub timings: Vec<StageTiming>,
    pub checks: Vec<Check>,
    pub artifacts: Vec<Artifact>,
    /// SHA-256 over the sorted artifact hashes: equal for equal numerics.
    pub artifact_hash: String,
    pub failure: Option<Failure>,
}

impl RunManifest {
    pub fn passed(&self) -> bool {
        self.failure.is_none() && self.checks.iter().all(|c| c.pass)
    }
}

#[derive(Debug)]
pub struct RunOutcome {
    pub manifest: RunManifest,
    pub output_dir: PathBuf,
}

/// Files written so far plus bookkeeping; lives in a sibling staging
/// directory of the final output.
struct Staging {
    dir: PathBuf,
    artifacts: BTreeMap<String, String>,
    timings: Vec<StageTiming>,
    checks: Vec<Check>,
    emit_plots: bool,
}

impl Staging {
    fn write(&mut self, rel: &str, bytes: &[u8]) -> StageResult<()> {
        let path = self.dir.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| format!("{}: {e}", parent.display()))?;
        }
        fs::write(&path, bytes).map_err(|e| format!("{}: {e}", path.display()))?;
        self.artifacts.insert(rel.to_string(), hex(&Sha256::digest(bytes)));
        Ok(())
    }

    fn plot(&mut self, rel: &str, svg: impl FnOnce() -> String) -> StageResult<()> {
        if self.emit_plots {
            self.write(rel, svg().as_bytes())?;
        }
        Ok(())
    }

    fn check(&mut self, name: impl Into<String>, value: f64, threshold: f64, pass: bool) {
        self.checks.push(Check {
            name: name.into(),
            value,
            threshold,
            pass,
        });
    }

    fn at_most(&mut self, name: impl Into<String>, value: f64, threshold: f64) {
        self.check(name, value, threshold, value <= threshold);
    }
}

/// Runs a stage, recording its wall time; the error is tagged with the name.
fn stage<T>(st: &mut Staging, name: &str, f: impl FnOnce(&mut Staging) -> StageResult<T>) -> Result<T, Failure> {
    let t = Instant::now();
    let r = f(st);
    st.timings.push(StageTiming {
        stage: name.into(),
        seconds: t.elapsed().as_secs_f64(),
    });
    r.map_err(|message| Failure {
        stage: name.into(),
        message,
    })
}

fn e2s<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

/// Resolves the output directory: explicit override, then the config,
/// then `$GRAMLIMIT_OUTPUT_ROOT/<command>-<hash>`, then `runs/...`.
pub fn output_dir_for(config: &ExperimentConfig, override_dir: Option<&Path>) -> PathBuf {
    if let Some(d) = override_dir {
        return d.to_path_buf();
    }
    if let Some(d) = &config.output_dir {
        return d.clone();
    }
    let root = std::env::var_os(OUTPUT_ROOT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"));
    root.join(format!("{}-{}", config.command, &config.hash()[..12]))
}

/// Validates, runs and commits one experiment. Check failures and stage
/// errors are reported in the manifest; only configuration and staging
/// problems are returned as errors.
pub fn run_experiment(config: &ExperimentConfig, override_dir: Option<&Path>) -> Result<RunOutcome, RunError> {
    let errors = config.validate();
    if !errors.is_empty() {
        return Err(ConfigError::Invalid(errors).into());
    }
    let out = output_dir_for(config, override_dir);
    let staging_dir = sibling(&out, &format!("staging-{}", std::process::id()));
    let io_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source| RunError::Io { path, source }
    };
    if staging_dir.exists() {
        fs::remove_dir_all(&staging_dir).map_err(io_err(&staging_dir))?;
    }
    fs::create_dir_all(&staging_dir).map_err(io_err(&staging_dir))?;
    let mut st = Staging {
        dir: staging_dir.clone(),
        artifacts: BTreeMap::new(),
        timings: Vec::new(),
        checks: Vec::new(),
        emit_plots: config.emit_plots,
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if config.workers > 0 {
        builder = builder.num_threads(config.workers);
    }
    let pool = builder.build().map_err(|e| RunError::Pool(e.to_string()))?;
    let result = pool.install(|| match config.command {
        Command::Solve => run_solve(config, &mut st),
        Command::Simulate => run_simulate(config, &mut st),
        Command::Compare => run_compare_stages(config, &mut st),
        Command::Toeplitz => run_toeplitz_stages(config, &mut st),
        Command::Universality => run_universality_stages(config, &mut st),
        Command::Truncation => run_truncation(config, &mut st),
    });
    let failure = result.err();
    if failure.is_some() {
        // No partial artifacts: a failed run keeps only its manifest.
        fs::remove_dir_all(&staging_dir).map_err(io_err(&staging_dir))?;
        fs::create_dir_all(&staging_dir).map_err(io_err(&staging_dir))?;
        st.artifacts.clear();
    }
    let mut all = Sha256::new();
    for (path, h) in &st.artifacts {
        all.update(path.as_bytes());
        all.update(h.as_bytes());
    }
    let manifest = RunManifest {
        command: config.command.name().into(),
        config_hash: config.hash(),
        artifact_version: env!("CARGO_PKG_VERSION").into(),
        seeds: config.seeds.clone(),
        aspect_ratios: config.size_list().iter().map(|&(n, p)| reduced(p, n)).collect(),
        timings: st.timings,
        checks: st.checks,
        artifacts: st
            .artifacts
            .iter()
            .map(|(p, h)| Artifact {
                path: p.clone(),
                sha256: h.clone(),
            })
            .collect(),
        artifact_hash: hex(&all.finalize()),
        failure,
    };
    let manifest_path = staging_dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).expect("serializable manifest");
    fs::write(&manifest_path, text).map_err(io_err(&manifest_path))?;
    commit(&staging_dir, &out)?;
    Ok(RunOutcome {
        manifest,
        output_dir: out,
    })
}

fn sibling(dir: &Path, tag: &str) -> PathBuf {
    let name = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "run".into());
    dir.with_file_name(format!(".{name}.{tag}"))
}

/// Swaps the staging directory into place with renames only.
fn commit(staging: &Path, out: &Path) -> Result<(), RunError> {
    let err = |path: &Path| {
        let path = path.to_path_buf();
        move |source| RunError::Io { path, source }
    };
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(err(parent))?;
    }
    if out.exists() {
        let old = sibling(out, &format!("old-{}", std::process::id()));
        fs::rename(out, &old).map_err(err(out))?;
        fs::rename(staging, out).map_err(err(out))?;
        fs::remove_dir_all(&old).map_err(err(&old))?;
    } else {
        fs::rename(staging, out).map_err(err(out))?;
    }
    Ok(())
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn reduced(p: usize, n: usize) -> String {
    let g = gcd(p, n).max(1);
    format!("{}/{}", p / g, n / g)
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Splitmix64 finaliser; derives independent seeds for paired ensembles.
fn mix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Eigenvalues of `B_N`. Gram matrices are positive semidefinite, so values
/// within round-off of zero (|λ| ≤ 1e−10·λ_max) are set to exactly 0; they
/// are the rank-deficit eigenvalues when p > N.
pub fn gram_spectrum(x: &DataMatrix) -> StageResult<Esd> {
    let e = matrixops::symmetric_eigenvalues(&matrixops::gram(x)).map_err(e2s)?;
    let top = e.eigenvalues().last().copied().unwrap_or(0.0).abs();
    Ok(Esd::new(
        e.eigenvalues()
            .iter()
            .map(|&v| if v.abs() <= 1e-10 * top { 0.0 } else { v.max(0.0) })
            .collect(),
    ))
}

/// Row generator shared across seeds: the filter or Toeplitz roots are
/// built once.
struct Generator {
    density: SpectralDensity,
    filter: Option<LinearFilter>,
    roots: BTreeMap<usize, SymMatrix>,
    budget: usize,
    cache_dir: Option<PathBuf>,
}

impl Generator {
    fn new(config: &ExperimentConfig, sizes: &[(usize, usize)]) -> StageResult<Self> {
        let density = config.density();
        let mut g = Self {
            density,
            filter: None,
            roots: BTreeMap::new(),
            budget: config.ensemble.memory_budget,
            cache_dir: config.ensemble.cache_dir.clone(),
        };
        if config.ensemble.source == "toeplitz" {
            let ps: std::collections::BTreeSet<usize> = sizes.iter().map(|s| s.1).collect();
            for p in ps {
                let root = ensemble::toeplitz_root(&g.density, p).map_err(e2s)?;
                g.roots.insert(p, root);
            }
        } else {
            let settings = FilterSettings {
                tail_tol: config.ensemble.tail_tol,
                ..FilterSettings::default()
            };
            g.filter = Some(spectral::filter_with(&g.density, &settings).map_err(e2s)?);
        }
        Ok(g)
    }

    fn source(&self, law: InnovationLaw) -> RowSource {
        match &self.filter {
            Some(filter) => RowSource::Linear {
                filter: filter.clone(),
                innovation: law,
            },
            None => RowSource::ToeplitzGaussian {
                density: self.density.clone(),
            },
        }
    }

    fn matrix(&self, n: usize, p: usize, seed: u64, law: InnovationLaw) -> StageResult<DataMatrix> {
        let mut cfg = EnsembleConfig::new(n, p, self.source(law), seed).map_err(e2s)?;
        cfg.memory_budget = self.budget;
        let cached = self
            .cache_dir
            .as_ref()
            .map(|d| d.join(format!("{}_N{n}_p{p}_s{seed}.bin", &hex(&cfg.source_hash())[..16])));
        if let Some(path) = &cached {
            if let Ok(m) = DataMatrix::load(path) {
                if m.rows() == n && m.cols() == p && m.seed() == seed && m.source_hash() == &cfg.source_hash() {
                    return Ok(m);
                }
            }
        }
        let m = match self.roots.get(&p) {
            Some(root) => cfg.generate_with_root(root),
            None => cfg.generate(),
        }
        .map_err(e2s)?;
        if let Some(path) = &cached {
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent).map_err(e2s)?;
            }
            m.save(path).map_err(e2s)?;
        }
        Ok(m)
    }
}

fn grid_for(config: &ExperimentConfig, f: &SpectralDensity, c: f64) -> StageResult<Vec<f64>> {
    match &config.grids.x {
        Some(x) => Ok(x.clone()),
        None => limit::auto_grid(f, c).map_err(e2s),
    }
}

fn solve_distribution(config: &ExperimentConfig, f: &SpectralDensity, c: f64) -> StageResult<LimitDistribution> {
    let grid = grid_for(config, f, c)?;
    limit::invert_to_distribution(f, c, &grid, &config.grids.eps_ladder, &config.solver).map_err(e2s)
}

fn file_tag(c: f64) -> String {
    format!("{c}").replace('.', "p")
}

fn run_solve(config: &ExperimentConfig, st: &mut Staging) -> Result<(), Failure> {
    let f = config.density();
    let c = config.aspect_ratio().expect("validated");
    let s: SolverSettings = config.solver;
    stage(st, "stieltjes", |st| {
        let sols: Vec<_> = config
            .grids
            .z
            .par_iter()
            .map(|z| limit::solve_limit_density(&f, c, Complex64::new(z[0], z[1]), &s))
            .collect::<Result<_, _>>()
            .map_err(e2s)?;
        let mut csv = String::from("z_re,z_im,s_under_re,s_under_im,s_re,s_im,residual\n");
        let mut min_im = f64::INFINITY;
        for (z, v) in config.grids.z.iter().zip(&sols) {
            min_im = min_im.min(v.s.im).min(v.s_under.im);
            csv.push_str(&format!(
                "{},{},{:.15e},{:.15e},{:.15e},{:.15e},{:.3e}\n",
                z[0], z[1], v.s_under.re, v.s_under.im, v.s.re, v.s.im, v.residual
            ));
        }
        st.check("herglotz_min_im", min_im, 0.0, min_im > 0.0);
        st.write("stieltjes.csv", csv.as_bytes())
    })?;
    stage(st, "invert", |st| {
        let d = solve_distribution(config, &f, c)?;
        let err = (d.total_mass() - 1.0).abs();
        st.at_most("mass_error", err, config.thresholds.mass.unwrap_or(DEFAULT_MASS));
        st.write("limit.csv", d.to_csv().as_bytes())?;
        st.write("limit.json", d.sidecar_json().as_bytes())?;
        st.plot("limit.svg", || overlay_svg("limiting density", None, Some(&d)))
    })
}

fn run_simulate(config: &ExperimentConfig, st: &mut Staging) -> Result<(), Failure> {
    let sizes = config.size_list();
    let law = parse_innovation(&config.ensemble.innovation).expect("validated");
    let gen = stage(st, "prepare", |_| Generator::new(config, &sizes))?;
    let items: Vec<(usize, usize, u64)> = sizes
        .iter()
        .flat_map(|&(n, p)| config.seeds.iter().map(move |&s| (n, p, s)))
        .collect();
    let results = stage(st, "simulate", |_| {
        items
            .par_iter()
            .map(|&(n, p, s)| {
                let m = gen.matrix(n, p, s, law)?;
                let esd = gram_spectrum(&m)?;
                let mut bin = Vec::new();
                m.write_binary(&mut bin).map_err(e2s)?;
                Ok((bin, esd))
            })
            .collect::<StageResult<Vec<_>>>()
    })?;
    stage(st, "write", |st| {
        for ((n, p, s), (bin, esd)) in items.iter().zip(&results) {
            st.write(&format!("matrices/N{n}_p{p}_s{s}.bin"), bin)?;
            st.write(&format!("esd/N{n}_p{p}_s{s}.csv"), esd.to_csv().as_bytes())?;
        }
        Ok(())
    })
}

/// Compares ESDs of simulated Gram matrices with the solved limit across
/// the size ladder.
pub fn run_compare(config: &ExperimentConfig, output: Option<&Path>) -> Result<RunOutcome, RunError> {
    expect_command(config, Command::Compare)?;
    run_experiment(config, output)
}

/// Matched non-Gaussian vs Gaussian ensembles with the same filter.
pub fn run_universality(config: &ExperimentConfig, output: Option<&Path>) -> Result<RunOutcome, RunError> {
    expect_command(config, Command::Universality)?;
    run_experiment(config, output)
}

/// ESD of Γ_p against the pushforward law H.
pub fn run_toeplitz(config: &ExperimentConfig, output: Option<&Path>) -> Result<RunOutcome, RunError> {
    expect_command(config, Command::Toeplitz)?;
    run_experiment(config, output)
}

fn expect_command(config: &ExperimentConfig, want: Command) -> Result<(), RunError> {
    if config.command == want {
        Ok(())
    } else {
        Err(ConfigError::Invalid(vec![format!("expected command {want}, config says {}", config.command)]).into())
    }
}

/// Summary gaps by size; adds the threshold check on the largest size and
/// the trend check when there are at least two sizes.
fn size_checks(
    st: &mut Staging,
    config: &ExperimentConfig,
    name: &str,
    medians: &[f64],
    threshold: f64,
    monotone: bool,
) {
    if let Some(&last) = medians.last() {
        st.at_most(format!("{name}_at_largest_size"), last, threshold);
    }
    if config.thresholds.require_decreasing && medians.len() >= 2 {
        let ok = if monotone {
            medians.windows(2).all(|w| w[1] < w[0])
        } else {
            medians[medians.len() - 1] < medians[0]
        };
        let (first, last) = (medians[0], medians[medians.len() - 1]);
        st.check(format!("{name}_decreasing"), last, first, ok);
    }
}

fn run_compare_stages(config: &ExperimentConfig, st: &mut Staging) -> Result<(), Failure> {
    let sizes = config.size_list();
    let law = parse_innovation(&config.ensemble.innovation).expect("validated");
    let f = config.density();
    let mut ratios: Vec<(usize, usize)> = sizes
        .iter()
        .map(|&(n, p)| {
            let g = gcd(p, n);
            (p / g, n / g)
        })
        .collect();
    ratios.sort();
    ratios.dedup();
    let limits: BTreeMap<(usize, usize), (LimitDistribution, Cdf)> = stage(st, "limit", |st| {
        let mut out = BTreeMap::new();
        for &(a, b) in &ratios {
            let c = a as f64 / b as f64;
            let d = solve_distribution(config, &f, c)?;
            st.write(&format!("limit_c{a}_{b}.csv"), d.to_csv().as_bytes())?;
            st.write(&format!("limit_c{a}_{b}.json"), d.sidecar_json().as_bytes())?;
            let cdf = d.to_cdf().map_err(e2s)?;
            out.insert((a, b), (d, cdf));
        }
        Ok(out)
    })?;
    let gen = stage(st, "prepare", |_| Generator::new(config, &sizes))?;
    let items: Vec<(usize, usize, u64)> = sizes
        .iter()
        .flat_map(|&(n, p)| config.seeds.iter().map(move |&s| (n, p, s)))
        .collect();
    let esds = stage(st, "simulate", |_| {
        items
            .par_iter()
            .map(|&(n, p, s)| gram_spectrum(&gen.matrix(n, p, s, law)?))
            .collect::<StageResult<Vec<_>>>()
    })?;
    stage(st, "distances", |st| {
        let mut table = String::from("N,p,seed,levy,kolmogorov\n");
        let mut per_size: BTreeMap<(usize, usize), (Vec<f64>, Vec<f64>)> = BTreeMap::new();
        for ((n, p, s), esd) in items.iter().zip(&esds) {
            let g = gcd(*p, *n);
            let (_, lim) = &limits[&(p / g, n / g)];
            let emp = Cdf::from_samples(esd.eigenvalues()).map_err(e2s)?;
            let levy = metrics::levy_distance(&emp, lim);
            let kol = metrics::kolmogorov_distance(&emp, lim);
            st.write(&format!("esd/N{n}_p{p}_s{s}.csv"), esd.to_csv().as_bytes())?;
            let rows = [
                DistanceRow {
                    metric: "levy".into(),
                    lhs: levy,
                    bound: None,
                    pass: true,
                },
                DistanceRow {
                    metric: "kolmogorov".into(),
                    lhs: kol,
                    bound: None,
                    pass: true,
                },
            ];
            st.write(
                &format!("distance/N{n}_p{p}_s{s}.csv"),
                metrics::distance_csv(&rows).as_bytes(),
            )?;
            table.push_str(&format!("{n},{p},{s},{levy:.12e},{kol:.12e}\n"));
            let e = per_size.entry((*n, *p)).or_default();
            e.0.push(levy);
            e.1.push(kol);
        }
        st.write("distances.csv", table.as_bytes())?;
        let mut summary = String::from("N,p,c,median_levy,median_kolmogorov\n");
        let (mut ml, mut mk) = (Vec::new(), Vec::new());
        for &(n, p) in &sizes {
            let (l, k) = per_size.get_mut(&(n, p)).expect("every size simulated");
            let (a, b) = (median(l), median(k));
            summary.push_str(&format!("{n},{p},{},{a:.12e},{b:.12e}\n", reduced(p, n)));
            ml.push(a);
            mk.push(b);
        }
        st.write("summary.csv", summary.as_bytes())?;
        let t = &config.thresholds;
        let (use_k, use_l) = match (t.kolmogorov, t.levy) {
            (None, None) => (f.is_bounded(), !f.is_bounded()),
            (k, l) => (k.is_some(), l.is_some()),
        };
        if use_k {
            size_checks(
                st,
                config,
                "median_kolmogorov",
                &mk,
                t.kolmogorov.unwrap_or(DEFAULT_KOLMOGOROV),
                true,
            );
        }
        if use_l {
            size_checks(
                st,
                config,
                "median_levy",
                &ml,
                t.levy.unwrap_or(DEFAULT_LEVY_LONG_MEMORY),
                true,
            );
        }
        // Overlay for the largest size, first seed.
        if let (Some(&(n, p)), Some(&s0)) = (sizes.last(), config.seeds.first()) {
            let idx = items.iter().position(|&it| it == (n, p, s0)).expect("item exists");
            let g = gcd(p, n);
            let (d, _) = &limits[&(p / g, n / g)];
            st.plot(&format!("overlay_N{n}_p{p}.svg"), || {
                overlay_svg(&format!("N = {n}, p = {p}"), Some(esds[idx].eigenvalues()), Some(d))
            })?;
        }
        Ok(())
    })
}

fn run_universality_stages(config: &ExperimentConfig, st: &mut Staging) -> Result<(), Failure> {
    let sizes = config.size_list();
    let law_x = parse_innovation(&config.ensemble.innovation).expect("validated");
    let law_y = parse_innovation(&config.ensemble.reference).expect("validated");
    if config.ensemble.source != "filter" {
        return Err(Failure {
            stage: "prepare".into(),
            message: "universality compares innovation laws and needs ensemble.source = filter".into(),
        });
    }
    let gen = stage(st, "prepare", |_| Generator::new(config, &sizes))?;
    let items: Vec<(usize, usize, u64)> = sizes
        .iter()
        .flat_map(|&(n, p)| config.seeds.iter().map(move |&s| (n, p, s)))
        .collect();
    let pairs = stage(st, "simulate", |_| {
        items
            .par_iter()
            .map(|&(n, p, s)| {
                let x = gram_spectrum(&gen.matrix(n, p, s, law_x)?)?;
                let y = gram_spectrum(&gen.matrix(n, p, mix(s), law_y)?)?;
                Ok((x, y))
            })
            .collect::<StageResult<Vec<_>>>()
    })?;
    stage(st, "distances", |st| {
        let zs: Vec<Complex64> = config.grids.z.iter().map(|z| Complex64::new(z[0], z[1])).collect();
        let mut levy_rows = String::from("N,p,seed,levy\n");
        let mut stj_rows = String::from("N,p,seed,z_re,z_im,abs_gap\n");
        let mut summary = String::from("N,p,median_levy,max_stieltjes_gap\n");
        let mut medians = Vec::new();
        for &(n, p) in &sizes {
            let idx: Vec<usize> = (0..items.len())
                .filter(|&i| (items[i].0, items[i].1) == (n, p))
                .collect();
            let mut mean_y = vec![Complex64::new(0.0, 0.0); zs.len()];
            for &i in &idx {
                for (k, z) in zs.iter().enumerate() {
                    mean_y[k] += pairs[i].1.stieltjes(*z).map_err(e2s)? / idx.len() as f64;
                }
            }
            let mut levys = Vec::new();
            let mut worst: f64 = 0.0;
            for &i in &idx {
                let (x, y) = &pairs[i];
                let s = items[i].2;
                let fx = Cdf::from_samples(x.eigenvalues()).map_err(e2s)?;
                let fy = Cdf::from_samples(y.eigenvalues()).map_err(e2s)?;
                let l = metrics::levy_distance(&fx, &fy);
                levys.push(l);
                levy_rows.push_str(&format!("{n},{p},{s},{l:.12e}\n"));
                for (k, z) in zs.iter().enumerate() {
                    let gap = (x.stieltjes(*z).map_err(e2s)? - mean_y[k]).norm();
                    worst = worst.max(gap);
                    stj_rows.push_str(&format!("{n},{p},{s},{},{},{gap:.12e}\n", z.re, z.im));
                }
            }
            let m = median(&mut levys);
            summary.push_str(&format!("{n},{p},{m:.12e},{worst:.12e}\n"));
            medians.push(m);
        }
        st.write("levy.csv", levy_rows.as_bytes())?;
        st.write("stieltjes.csv", stj_rows.as_bytes())?;
        st.write("summary.csv", summary.as_bytes())?;
        let thr = config.thresholds.levy.unwrap_or(DEFAULT_UNIVERSALITY);
        size_checks(st, config, "median_levy", &medians, thr, false);
        Ok(())
    })
}

/// `H` as a CDF with its atoms placed on grid nodes.
pub fn pushforward_cdf(f: &SpectralDensity, points: usize) -> StageResult<Cdf> {
    let lo = spectral::h_quantile(f, 0.0);
    let hi = if f.is_bounded() {
        2.0 * std::f64::consts::PI * f.supremum()
    } else {
        spectral::h_quantile(f, 1.0 - 1e-6)
    };
    let mut grid: Vec<f64> = if hi > lo {
        (0..points)
            .map(|k| lo + (hi - lo) * k as f64 / (points - 1) as f64)
            .collect()
    } else {
        vec![lo]
    };
    let atoms = spectral::h_pushforward(f, &grid).map_err(e2s)?.atoms;
    grid.extend(atoms.iter().map(|a| a.0).filter(|x| x.is_finite()));
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let law = spectral::h_pushforward(f, &grid).map_err(e2s)?;
    Cdf::from_grid_with_atoms(&law.grid, &law.cdf, &law.atoms).map_err(e2s)
}

fn run_toeplitz_stages(config: &ExperimentConfig, st: &mut Staging) -> Result<(), Failure> {
    let f = config.density();
    let h = stage(st, "pushforward", |_| pushforward_cdf(&f, 4001))?;
    let spectra = stage(st, "eigen", |_| {
        config
            .p_list
            .par_iter()
            .map(|&p| {
                let g = ensemble::toeplitz_matrix(&f, p).map_err(e2s)?;
                matrixops::symmetric_eigenvalues(&g).map_err(e2s)
            })
            .collect::<StageResult<Vec<_>>>()
    })?;
    stage(st, "distances", |st| {
        let mut summary = String::from("p,kolmogorov,levy\n");
        let mut gaps = Vec::new();
        for (&p, esd) in config.p_list.iter().zip(&spectra) {
            let emp = Cdf::from_samples(esd.eigenvalues()).map_err(e2s)?;
            let k = metrics::kolmogorov_distance(&emp, &h);
            let l = metrics::levy_distance(&emp, &h);
            summary.push_str(&format!("{p},{k:.12e},{l:.12e}\n"));
            st.write(&format!("esd/p{p}.csv"), esd.to_csv().as_bytes())?;
            gaps.push(k);
        }
        st.write("summary.csv", summary.as_bytes())?;
        let thr = config.thresholds.kolmogorov.unwrap_or(DEFAULT_TOEPLITZ);
        size_checks(st, config, "kolmogorov", &gaps, thr, false);
        Ok(())
    })
}

fn run_truncation(config: &ExperimentConfig, st: &mut Staging) -> Result<(), Failure> {
    let f = config.density();
    let c = config.aspect_ratio().expect("validated");
    let ladder = stage(st, "ladder", |_| {
        let grid = grid_for(config, &f, c)?;
        limit::truncation_ladder(&f, c, &config.b_list, &grid, &config.grids.eps_ladder, &config.solver).map_err(e2s)
    })?;
    stage(st, "write", |st| {
        let mut csv = String::from("b,mass,total_mass,gap_to_next\n");
        for (i, e) in ladder.entries.iter().enumerate() {
            let gap = ladder.gaps.get(i).map(|g| format!("{g:.12e}")).unwrap_or_default();
            csv.push_str(&format!(
                "{},{:.12e},{:.12e},{gap}\n",
                e.b,
                e.mass,
                e.limit.total_mass()
            ));
            let tag = file_tag(e.b);
            st.write(&format!("limit_b{tag}.csv"), e.limit.to_csv().as_bytes())?;
            st.write(&format!("limit_b{tag}.json"), e.limit.sidecar_json().as_bytes())?;
        }
        st.write("ladder.csv", csv.as_bytes())?;
        if let Some(g) = ladder.final_gap() {
            st.at_most(
                "final_levy_gap",
                g,
                config.thresholds.final_gap.unwrap_or(DEFAULT_FINAL_GAP),
            );
        }
        let worst_rise = ladder
            .gaps
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::NEG_INFINITY, f64::max);
        if ladder.gaps.len() >= 2 {
            st.check(
                "gaps_weakly_decreasing",
                worst_rise,
                0.0,
                ladder.gaps_weakly_decreasing(0.0),
            );
        }
        let masses_ok = ladder.entries.windows(2).all(|w| w[1].mass >= w[0].mass - 1e-12);
        st.check("mass_nondecreasing", 0.0, 0.0, masses_ok);
        if let Some(last) = ladder.entries.last() {
            let d = &last.limit;
            st.plot("limit_last.svg", || {
                overlay_svg(&format!("b = {}", last.b), None, Some(d))
            })?;
        }
        Ok(())
    })
}

/// Minimal static SVG: ESD histogram bars (if any) under the limiting
/// density curve (if any).
pub fn overlay_svg(title: &str, eigs: Option<&[f64]>, limit: Option<&LimitDistribution>) -> String {
    let (w, h, m) = (640.0, 400.0, 40.0);
    let mut x_max: f64 = 0.0;
    if let Some(e) = eigs {
        x_max = x_max.max(e.iter().copied().fold(0.0, f64::max));
    }
    if let Some(d) = limit {
        let top = d
            .x_grid
            .iter()
            .zip(&d.density)
            .filter(|(_, r)| **r > limit::EDGE_LEVEL)
            .map(|(x, _)| *x)
            .fold(0.0, f64::max);
        x_max = x_max.max(top);
    }
    if x_max <= 0.0 {
        x_max = 1.0;
    }
    let bins = 60usize;
    let bw = x_max / bins as f64;
    let mut heights = vec![0.0; bins];
    if let Some(e) = eigs {
        // Only positive eigenvalues: the atom at zero is not a density.
        for &v in e.iter().filter(|v| **v > 0.0) {
            let k = ((v / bw) as usize).min(bins - 1);
            heights[k] += 1.0 / (e.len() as f64 * bw);
        }
    }
    let mut y_max = heights.iter().copied().fold(0.0, f64::max);
    if let Some(d) = limit {
        y_max = y_max.max(d.density.iter().copied().fold(0.0, f64::max));
    }
    if y_max <= 0.0 {
        y_max = 1.0;
    }
    let sx = |x: f64| m + (w - 2.0 * m) * x / x_max;
    let sy = |y: f64| h - m - (h - 2.0 * m) * (y / y_max).min(1.0);
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{m}\" y=\"24\" font-family=\"sans-serif\" font-size=\"14\">{}</text>\n\
         <line x1=\"{m}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n\
         <line x1=\"{m}\" y1=\"{m}\" x2=\"{m}\" y2=\"{}\" stroke=\"black\"/>\n",
        escape(title),
        h - m,
        w - m,
        h - m,
        h - m
    );
    if eigs.is_some() {
        for (k, &ht) in heights.iter().enumerate() {
            if ht > 0.0 {
                let (x0, x1) = (sx(k as f64 * bw), sx((k + 1) as f64 * bw));
                s.push_str(&format!(
                    "<rect x=\"{x0:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"#9ecae1\"/>\n",
                    sy(ht),
                    x1 - x0,
                    h - m - sy(ht)
                ));
            }
        }
    }
    if let Some(d) = limit {
        let pts: Vec<String> = d
            .x_grid
            .iter()
            .zip(&d.density)
            .filter(|(x, _)| **x <= x_max)
            .map(|(x, r)| format!("{:.2},{:.2}", sx(*x), sy(*r)))
            .collect();
        s.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"#d62728\" stroke-width=\"1.5\"/>\n",
            pts.join(" ")
        ));
    }
    s.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\">{x_max:.3}</text>\n</svg>\n",
        w - m - 20.0,
        h - m + 16.0
    ));
    s
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
