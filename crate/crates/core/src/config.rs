//! Experiment configuration: flat `key = value` files plus overrides.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::analysis::NormConvention;
use crate::atlas::BuiltinAtlas;
use crate::ddm::DdmConfig;
use crate::error::{Error, Result};
use crate::quadrature::CoefficientSampling;
use crate::solver::CgOptions;

/// Largest `n2` accepted without `force`.
pub const MAX_N2: usize = 80;

/// Everything needed to run one sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub manifold: Option<String>,
    pub s: Option<f64>,
    pub delta: Option<f64>,
    pub r: Option<f64>,
    pub overlap: Option<f64>,
    /// Overrides the atlas's reaction coefficient.
    pub b: Option<f64>,
    pub n2: Vec<usize>,
    pub n1_ratio: f64,
    pub cg_tol: f64,
    pub max_outer: usize,
    pub workers: Option<usize>,
    pub out: PathBuf,
    pub force: bool,
    pub quad_points: usize,
    pub jacobi: bool,
    pub coefficients: CoefficientSampling,
    pub norms: NormConvention,
    /// Write per-chart solution dumps.
    pub dump: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let ddm = DdmConfig::default();
        Self {
            manifold: None,
            s: None,
            delta: None,
            r: None,
            overlap: None,
            b: None,
            n2: vec![10, 20],
            n1_ratio: ddm.n1_ratio,
            cg_tol: ddm.cg.tolerance,
            max_outer: ddm.max_outer,
            workers: None,
            out: PathBuf::from("out"),
            force: false,
            quad_points: ddm.quad_points,
            jacobi: false,
            coefficients: ddm.coefficients,
            norms: NormConvention::Coordinate,
            dump: true,
        }
    }
}

pub const KEYS: [&str; 18] = [
    "manifold",
    "s",
    "delta",
    "r",
    "overlap",
    "b",
    "n2",
    "n1_ratio",
    "cg_tol",
    "max_outer",
    "workers",
    "out",
    "force",
    "quad_points",
    "jacobi",
    "coefficients",
    "norms",
    "dump",
];

fn bad(key: &str, value: &str, what: &str) -> Error {
    Error::InvalidConfig(format!("`{key}`: expected {what}, got `{value}`"))
}

fn real(key: &str, value: &str) -> Result<f64> {
    value
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| bad(key, value, "a finite number"))
}

fn count(key: &str, value: &str) -> Result<usize> {
    value.parse().map_err(|_| bad(key, value, "a non-negative integer"))
}

fn flag(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(bad(key, value, "a boolean")),
    }
}

pub fn parse_sampling(value: &str) -> Result<CoefficientSampling> {
    match value {
        "cell-center" | "cell_center" => Ok(CoefficientSampling::CellCenter),
        "quadrature" => Ok(CoefficientSampling::QuadraturePoints),
        _ => Err(bad("coefficients", value, "`cell-center` or `quadrature`")),
    }
}

pub fn parse_norms(value: &str) -> Result<NormConvention> {
    match value {
        "coordinate" => Ok(NormConvention::Coordinate),
        "metric" => Ok(NormConvention::Metric),
        _ => Err(bad("norms", value, "`coordinate` or `metric`")),
    }
}

fn sampling_name(s: CoefficientSampling) -> &'static str {
    match s {
        CoefficientSampling::CellCenter => "cell-center",
        CoefficientSampling::QuadraturePoints => "quadrature",
    }
}

fn norms_name(n: NormConvention) -> &'static str {
    match n {
        NormConvention::Coordinate => "coordinate",
        NormConvention::Metric => "metric",
    }
}

impl ExperimentConfig {
    /// Sets one key from its text value.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "manifold" => self.manifold = Some(value.to_string()),
            "s" => self.s = Some(real(key, value)?),
            "delta" => self.delta = Some(real(key, value)?),
            "r" => self.r = Some(real(key, value)?),
            "overlap" => self.overlap = Some(real(key, value)?),
            "b" => self.b = Some(real(key, value)?),
            "n2" => {
                self.n2 = value
                    .split(',')
                    .map(|v| count(key, v.trim()))
                    .collect::<Result<_>>()?;
            }
            "n1_ratio" => self.n1_ratio = real(key, value)?,
            "cg_tol" => self.cg_tol = real(key, value)?,
            "max_outer" => self.max_outer = count(key, value)?,
            "workers" => self.workers = Some(count(key, value)?),
            "out" => self.out = PathBuf::from(value),
            "force" => self.force = flag(key, value)?,
            "quad_points" => self.quad_points = count(key, value)?,
            "jacobi" => self.jacobi = flag(key, value)?,
            "coefficients" => self.coefficients = parse_sampling(value)?,
            "norms" => self.norms = parse_norms(value)?,
            "dump" => self.dump = flag(key, value)?,
            other => {
                return Err(Error::InvalidConfig(format!(
                    "unknown key `{other}` (known keys: {})",
                    KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    /// Applies a `key = value` file; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::InvalidConfig(format!("line {}: expected `key = value`, got `{line}`", lineno + 1))
            })?;
            self.apply(key.trim(), value)
                .map_err(|e| Error::InvalidConfig(format!("line {}: {e}", lineno + 1)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidConfig(format!("cannot read {}: {e}", path.display())))?;
        self.apply_text(&text)
    }

    pub fn atlas_kind(&self) -> Result<BuiltinAtlas> {
        let name = self
            .manifold
            .as_deref()
            .ok_or_else(|| Error::InvalidConfig("no manifold given".into()))?;
        BuiltinAtlas::from_name(name, self.s, self.delta, self.r, self.overlap)
            .map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    /// Solver parameters for one sweep entry.
    pub fn ddm_config(&self, n2: usize) -> DdmConfig {
        DdmConfig {
            n2,
            n1_ratio: self.n1_ratio,
            cg: CgOptions {
                tolerance: self.cg_tol,
                max_iterations: None,
                jacobi: self.jacobi,
            },
            max_outer: self.max_outer,
            workers: self.workers,
            quad_points: self.quad_points,
            coefficients: self.coefficients,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.atlas_kind()?;
        if self.n2.is_empty() {
            return Err(Error::InvalidConfig("n2 list is empty".into()));
        }
        for &n2 in &self.n2 {
            if n2 > MAX_N2 && !self.force {
                return Err(Error::InvalidConfig(format!(
                    "n2 = {n2} exceeds {MAX_N2}; pass force to run it anyway"
                )));
            }
            self.ddm_config(n2).validate()?;
        }
        Ok(())
    }

    /// The resolved parameters as `key = value` lines.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let kind = self.atlas_kind().ok();
        let _ = writeln!(s, "manifold = {}", self.manifold.as_deref().unwrap_or(""));
        match kind {
            Some(BuiltinAtlas::B4 { s: a, delta, r }) | Some(BuiltinAtlas::B2xS2 { s: a, delta, r }) => {
                let _ = writeln!(s, "s = {a}\ndelta = {delta}\nr = {r}");
            }
            Some(BuiltinAtlas::Cp2 { r }) => {
                let _ = writeln!(s, "r = {r}");
            }
            Some(BuiltinAtlas::FlatSquare { overlap }) | Some(BuiltinAtlas::FlatInterval { overlap }) => {
                let _ = writeln!(s, "overlap = {overlap}");
            }
            _ => {}
        }
        let b = self.b.or_else(|| kind.map(|k| k.default_b()));
        if let Some(b) = b {
            let _ = writeln!(s, "b = {b}");
        }
        let n2: Vec<String> = self.n2.iter().map(|n| n.to_string()).collect();
        let _ = writeln!(s, "n2 = {}", n2.join(","));
        let _ = writeln!(s, "n1_ratio = {}", self.n1_ratio);
        let _ = writeln!(s, "cg_tol = {:e}", self.cg_tol);
        let _ = writeln!(s, "max_outer = {}", self.max_outer);
        if let Some(w) = self.workers {
            let _ = writeln!(s, "workers = {w}");
        }
        let _ = writeln!(s, "quad_points = {}", self.quad_points);
        let _ = writeln!(s, "jacobi = {}", self.jacobi);
        let _ = writeln!(s, "coefficients = {}", sampling_name(self.coefficients));
        let _ = writeln!(s, "norms = {}", norms_name(self.norms));
        s
    }
}
