//! Experiment configuration: JSON text, `key=value` overrides, and
//! validation that reports every problem at once.

use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::ensemble::InnovationLaw;
use crate::limit::{SolverSettings, DEFAULT_EPS_LADDER};
use crate::spectral::SpectralDensity;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("bad override `{0}`: expected key=value")]
    Override(String),
    #[error("invalid config:\n  {}", .0.join("\n  "))]
    Invalid(Vec<String>),
}

impl ConfigError {
    /// All validation messages (one for parse errors).
    pub fn messages(&self) -> Vec<String> {
        match self {
            Self::Invalid(v) => v.clone(),
            other => vec![other.to_string()],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Solve,
    Simulate,
    Compare,
    Toeplitz,
    Universality,
    Truncation,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Solve => "solve",
            Self::Simulate => "simulate",
            Self::Compare => "compare",
            Self::Toeplitz => "toeplitz",
            Self::Universality => "universality",
            Self::Truncation => "truncation",
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DensityConfig {
    /// constant | ar1 | ma1 | fractional | table
    pub family: String,
    #[serde(default = "one")]
    pub variance: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    /// Replace f by f ∧ b.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truncate: Option<f64>,
}

fn one() -> f64 {
    1.0
}

impl Default for DensityConfig {
    fn default() -> Self {
        Self {
            family: "constant".into(),
            variance: 1.0,
            phi: None,
            theta: None,
            d: None,
            path: None,
            truncate: None,
        }
    }
}

impl DensityConfig {
    pub fn build(&self) -> Result<SpectralDensity, String> {
        let need = |v: Option<f64>, name: &str| {
            v.ok_or_else(|| format!("density.{name} is required for family {}", self.family))
        };
        let base = match self.family.as_str() {
            "constant" => SpectralDensity::constant(self.variance),
            "ar1" => SpectralDensity::ar1(need(self.phi, "phi")?, self.variance),
            "ma1" => SpectralDensity::ma1(need(self.theta, "theta")?, self.variance),
            "fractional" => SpectralDensity::fractional(need(self.d, "d")?, self.variance),
            "table" => match &self.path {
                Some(p) => SpectralDensity::from_table_file(p),
                None => return Err("density.path is required for family table".into()),
            },
            other => return Err(format!("unknown density family `{other}`")),
        }
        .map_err(|e| format!("density: {e}"))?;
        match self.truncate {
            Some(b) => base.truncate(b).map_err(|e| format!("density.truncate: {e}")),
            None => Ok(base),
        }
    }
}

/// Aspect ratio given as a number or as text `"p/N"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AspectRatio {
    Number(f64),
    Text(String),
}

impl AspectRatio {
    pub fn value(&self) -> Result<f64, String> {
        match self {
            Self::Number(v) => Ok(*v),
            Self::Text(t) => match t.split_once('/') {
                Some((a, b)) => {
                    let a: f64 = a.trim().parse().map_err(|_| format!("c: cannot parse `{t}`"))?;
                    let b: f64 = b.trim().parse().map_err(|_| format!("c: cannot parse `{t}`"))?;
                    Ok(a / b)
                }
                None => t.trim().parse().map_err(|_| format!("c: cannot parse `{t}`")),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnsembleSection {
    /// `filter` (linear filter of f with i.i.d. innovations) or `toeplitz`
    /// (exact Gaussian rows).
    pub source: String,
    /// gaussian | rademacher | uniform | martingale_sign | `student_t:<nu>`
    pub innovation: String,
    /// Reference law of the universality comparison.
    pub reference: String,
    pub tail_tol: f64,
    pub memory_budget: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<PathBuf>,
}

impl Default for EnsembleSection {
    fn default() -> Self {
        Self {
            source: "filter".into(),
            innovation: "gaussian".into(),
            reference: "gaussian".into(),
            tail_tol: 1e-2,
            memory_budget: crate::ensemble::DEFAULT_MEMORY_BUDGET,
            cache_dir: None,
        }
    }
}

pub fn parse_innovation(text: &str) -> Result<InnovationLaw, String> {
    let law = match text {
        "gaussian" => InnovationLaw::Gaussian,
        "rademacher" => InnovationLaw::Rademacher,
        "uniform" => InnovationLaw::Uniform,
        "martingale_sign" => InnovationLaw::MartingaleSign,
        t => match t.strip_prefix("student_t:") {
            Some(nu) => InnovationLaw::StudentT(nu.parse().map_err(|_| format!("bad degrees of freedom in `{t}`"))?),
            None => return Err(format!("unknown innovation law `{t}`")),
        },
    };
    law.validate().map_err(|e| e.to_string())?;
    Ok(law)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    /// Explicit inversion grid; the automatic grid when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x: Option<Vec<f64>>,
    /// Points `[re, im]` where Stieltjes transforms are reported.
    pub z: Vec<[f64; 2]>,
    pub eps_ladder: Vec<f64>,
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            x: None,
            z: vec![[0.5, 0.1], [1.0, 0.1], [2.0, 0.1], [1.0, 1.0]],
            eps_ladder: DEFAULT_EPS_LADDER.to_vec(),
        }
    }
}

/// Pass/fail thresholds; unset entries take command defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Thresholds {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kolmogorov: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub levy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_gap: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mass: Option<f64>,
    /// Also require the summary gap to shrink from the smallest to the
    /// largest size (on by default; needs at least two sizes).
    pub require_decreasing: bool,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            kolmogorov: None,
            levy: None,
            final_gap: None,
            mass: None,
            require_decreasing: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub command: Command,
    #[serde(default)]
    pub density: DensityConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<AspectRatio>,
    /// Explicit (N, p) pairs.
    #[serde(default)]
    pub sizes: Vec<(usize, usize)>,
    /// Row counts N, with p = cN.
    #[serde(default)]
    pub n_rows: Vec<usize>,
    /// Toeplitz orders.
    #[serde(default)]
    pub p_list: Vec<usize>,
    /// Truncation levels.
    #[serde(default)]
    pub b_list: Vec<f64>,
    #[serde(default)]
    pub ensemble: EnsembleSection,
    #[serde(default)]
    pub solver: SolverSettings,
    #[serde(default)]
    pub grids: GridSection,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub thresholds: Thresholds,
    /// Not part of the config hash.
    #[serde(default, skip_serializing)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub emit_plots: bool,
    /// Worker threads; 0 uses every core. Not part of the config hash.
    #[serde(default, skip_serializing)]
    pub workers: usize,
}

fn default_seeds() -> Vec<u64> {
    vec![1]
}

/// Parses JSON text, applies `key.path=value` overrides and validates.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    parse_with_overrides(text, &[])
}

pub fn parse_with_overrides(text: &str, overrides: &[String]) -> Result<ExperimentConfig, ConfigError> {
    let mut tree: Value = serde_json::from_str(text).map_err(parse_error)?;
    for o in overrides {
        apply_override(&mut tree, o)?;
    }
    let config: ExperimentConfig =
        serde_json::from_value(tree).map_err(|e| ConfigError::Invalid(vec![e.to_string()]))?;
    let errors = config.validate();
    if errors.is_empty() {
        Ok(config)
    } else {
        Err(ConfigError::Invalid(errors))
    }
}

fn parse_error(e: serde_json::Error) -> ConfigError {
    ConfigError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    }
}

/// `a.b.c=value`; the value is read as JSON when it parses, as a string
/// otherwise.
pub fn apply_override(tree: &mut Value, text: &str) -> Result<(), ConfigError> {
    let (key, raw) = text.split_once('=').ok_or_else(|| ConfigError::Override(text.into()))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(ConfigError::Override(text.into()));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.into()));
    let mut node = tree;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = match node {
            Value::Object(m) => m,
            _ => {
                return Err(ConfigError::Override(format!(
                    "{text} (`{part}` is not inside an object)"
                )))
            }
        };
        if i + 1 == parts.len() {
            obj.insert((*part).into(), value);
            return Ok(());
        }
        node = obj.entry(*part).or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!("split yields at least one part")
}

impl ExperimentConfig {
    /// Every validation problem, in field order.
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        let density = self.density.build();
        if let Err(e) = &density {
            errs.push(e.clone());
        }
        if let Err(e) = self.solver.validate() {
            errs.push(format!("solver: {e}"));
        }
        let c = match &self.c {
            Some(c) => match c.value() {
                Ok(v) if v > 0.0 && v.is_finite() => Some(v),
                Ok(v) => {
                    errs.push(format!("c must be positive, got {v}"));
                    None
                }
                Err(e) => {
                    errs.push(e);
                    None
                }
            },
            None => None,
        };
        for (n, p) in &self.sizes {
            if *n == 0 || *p == 0 {
                errs.push(format!("sizes: ({n}, {p}) must be positive"));
            }
        }
        if !self.n_rows.is_empty() {
            match c {
                None => errs.push("n_rows requires c".into()),
                Some(c) => {
                    for &n in &self.n_rows {
                        let p = c * n as f64;
                        if n == 0 || (p - p.round()).abs() > 1e-9 || p.round() < 1.0 {
                            errs.push(format!("n_rows: c·N = {p} is not a positive integer for N = {n}"));
                        }
                    }
                }
            }
        }
        if let Err(e) = parse_innovation(&self.ensemble.innovation) {
            errs.push(format!("ensemble.innovation: {e}"));
        }
        if let Err(e) = parse_innovation(&self.ensemble.reference) {
            errs.push(format!("ensemble.reference: {e}"));
        }
        if !matches!(self.ensemble.source.as_str(), "filter" | "toeplitz") {
            errs.push(format!(
                "ensemble.source must be `filter` or `toeplitz`, got `{}`",
                self.ensemble.source
            ));
        }
        if self.ensemble.source == "toeplitz" && self.ensemble.innovation != "gaussian" {
            errs.push("ensemble.source `toeplitz` produces Gaussian rows only".into());
        }
        if !(self.ensemble.tail_tol > 0.0 && self.ensemble.tail_tol < 1.0) {
            errs.push("ensemble.tail_tol must lie in (0, 1)".into());
        }
        if let Some(x) = &self.grids.x {
            if x.is_empty() || !x.windows(2).all(|w| w[1] > w[0]) || !(x[0] > 0.0) {
                errs.push("grids.x must be positive and strictly increasing".into());
            }
        }
        if self.grids.z.iter().any(|z| !(z[1] > 0.0) || !z[0].is_finite()) {
            errs.push("grids.z points need Im z > 0".into());
        }
        let eps = &self.grids.eps_ladder;
        if eps.is_empty() || !eps.windows(2).all(|w| w[1] < w[0]) || !(eps[eps.len() - 1] > 0.0) {
            errs.push("grids.eps_ladder must be positive and strictly decreasing".into());
        }
        if self.seeds.is_empty() {
            errs.push("seeds must not be empty".into());
        }
        let t = &self.thresholds;
        for (name, v) in [
            ("kolmogorov", t.kolmogorov),
            ("levy", t.levy),
            ("final_gap", t.final_gap),
            ("mass", t.mass),
        ] {
            if let Some(v) = v {
                if !(v > 0.0) {
                    errs.push(format!("thresholds.{name} must be positive"));
                }
            }
        }
        match self.command {
            Command::Solve | Command::Truncation => {
                if c.is_none() {
                    errs.push(format!("{} needs c", self.command));
                }
            }
            Command::Simulate | Command::Compare | Command::Universality => {
                if self.sizes.is_empty() && self.n_rows.is_empty() {
                    errs.push(format!("{} needs sizes or n_rows", self.command));
                }
            }
            Command::Toeplitz => {
                if self.p_list.is_empty() || self.p_list.contains(&0) {
                    errs.push("toeplitz needs a nonempty p_list of positive orders".into());
                }
                if let Ok(f) = &density {
                    if !f.is_bounded() {
                        errs.push("toeplitz needs a bounded density; set density.truncate = b to use f ∧ b".into());
                    }
                }
            }
        }
        if self.command == Command::Truncation
            && (self.b_list.is_empty() || !self.b_list.windows(2).all(|w| w[1] > w[0]) || !(self.b_list[0] > 0.0))
        {
            errs.push("truncation needs an increasing b_list of positive levels".into());
        }
        errs
    }

    pub fn density(&self) -> SpectralDensity {
        self.density.build().expect("validated config")
    }

    pub fn aspect_ratio(&self) -> Option<f64> {
        self.c.as_ref().and_then(|c| c.value().ok())
    }

    /// All (N, p) pairs: explicit sizes first, then `n_rows` scaled by c.
    pub fn size_list(&self) -> Vec<(usize, usize)> {
        let mut out = self.sizes.clone();
        if let Some(c) = self.aspect_ratio() {
            out.extend(self.n_rows.iter().map(|&n| (n, (c * n as f64).round() as usize)));
        }
        out
    }

    /// SHA-256 of the canonical JSON form (sorted keys, outputs and worker
    /// count excluded).
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_value(self).expect("serializable config").to_string();
        hex(&Sha256::digest(canonical.as_bytes()))
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_solve_gets_defaults() {
        let c = parse_config(r#"{"command": "solve", "c": 0.5}"#).unwrap();
        assert_eq!(c.density.family, "constant");
        assert_eq!(c.solver, SolverSettings::default());
        assert_eq!(c.grids.eps_ladder, DEFAULT_EPS_LADDER.to_vec());
        assert_eq!(c.seeds, vec![1]);
    }

    #[test]
    fn all_errors_are_reported() {
        let text = r#"{"command": "compare", "density": {"family": "fractional", "d": 0.7},
                       "solver": {"tol": 1e-12, "max_iter": 10, "damping": 2.0, "quad_tol": 1e-10},
                       "ensemble": {"innovation": "cauchy"}}"#;
        let errs = parse_config(text).unwrap_err().messages();
        assert!(errs.iter().any(|e| e.contains("d must lie in (0, 1/2)")), "{errs:?}");
        assert!(errs.iter().any(|e| e.contains("damping")));
        assert!(errs.iter().any(|e| e.contains("cauchy")));
        assert!(errs.iter().any(|e| e.contains("needs sizes")));
    }

    #[test]
    fn parse_errors_carry_position() {
        match parse_config("{\n  \"command\": }") {
            Err(ConfigError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn hash_is_deterministic_and_ignores_output() {
        let text = r#"{"command": "solve", "c": "1/2"}"#;
        let a = parse_config(text).unwrap();
        let b = parse_config(text).unwrap();
        assert_eq!(a.hash(), b.hash());
        let mut c = a.clone();
        c.output_dir = Some("/elsewhere".into());
        assert_eq!(a.hash(), c.hash());
        let d = parse_with_overrides(text, &["solver.tol=1e-11".into()]).unwrap();
        assert_ne!(a.hash(), d.hash());
        assert_eq!(d.solver.tol, 1e-11);
    }

    #[test]
    fn overrides_create_paths_and_strings() {
        let c = parse_with_overrides(
            r#"{"command": "solve", "c": 0.5}"#,
            &["density.family=ar1".into(), "density.phi=0.5".into()],
        )
        .unwrap();
        assert_eq!(c.density.family, "ar1");
        assert_eq!(c.density.phi, Some(0.5));
        assert!(parse_with_overrides("{}", &["novalue".into()]).is_err());
    }

    #[test]
    fn c_times_n_must_be_integral() {
        let errs = parse_config(r#"{"command": "compare", "c": 0.3, "n_rows": [5]}"#)
            .unwrap_err()
            .messages();
        assert!(errs[0].contains("not a positive integer"));
        let ok = parse_config(r#"{"command": "compare", "c": "1/2", "n_rows": [800]}"#).unwrap();
        assert_eq!(ok.size_list(), vec![(800, 400)]);
    }

    #[test]
    fn toeplitz_rejects_unbounded_density() {
        let text = r#"{"command": "toeplitz", "p_list": [10], "density": {"family": "fractional", "d": 0.3}}"#;
        let errs = parse_config(text).unwrap_err().messages();
        assert!(errs.iter().any(|e| e.contains("truncate")));
        let ok =
            r#"{"command": "toeplitz", "p_list": [10], "density": {"family": "fractional", "d": 0.3, "truncate": 8}}"#;
        assert!(parse_config(ok).is_ok());
    }
}
