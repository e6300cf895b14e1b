//! Run configuration: strict JSON parsing, defaults and validation.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use kernelrn::kernel::Word;
use kernelrn::{Complex64, ComplexMatrix, Enforcement, EnsembleSpec, NcPolynomial, SubalgebraSpec, Tolerances};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub ensemble: EnsembleSpec,
    pub samples: u64,
    pub seed: u64,
    /// Size of the sampling thread pool; results do not depend on it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    #[serde(default)]
    pub analysis: AnalysisConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vn: Option<VnConfig>,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisConfig {
    pub max_order: usize,
    pub subalgebra: SubalgebraSpec,
    pub enforce: Enforcement,
    pub z: f64,
    pub tolerances: ToleranceConfig,
    /// Also compute `d_m` and `c_m - d_m`.
    pub d_sequence: bool,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            max_order: 3,
            subalgebra: SubalgebraSpec::Full,
            enforce: Enforcement::None,
            z: 3.0,
            tolerances: ToleranceConfig::default(),
            d_sequence: false,
        }
    }
}

/// Tolerances as written in the config; unset values are resolved per run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToleranceConfig {
    /// Unset: the Monte Carlo error bound of the Gram matrix, at least `1e-8`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub psd_clip_tol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rank_tol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub density_tol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub leak_tol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub factor_tol: Option<f64>,
}

impl ToleranceConfig {
    fn entries(&self) -> [(&'static str, Option<f64>); 5] {
        [
            ("psd_clip_tol", self.psd_clip_tol),
            ("rank_tol", self.rank_tol),
            ("density_tol", self.density_tol),
            ("leak_tol", self.leak_tol),
            ("factor_tol", self.factor_tol),
        ]
    }

    /// Fills unset values; `auto_clip` stands in for a missing `psd_clip_tol`.
    pub fn resolve(&self, auto_clip: f64) -> Tolerances {
        let d = Tolerances::default();
        Tolerances {
            psd_clip_tol: self.psd_clip_tol.unwrap_or(auto_clip.max(d.psd_clip_tol)),
            rank_tol: self.rank_tol.unwrap_or(d.rank_tol),
            density_tol: self.density_tol.unwrap_or(d.density_tol),
            leak_tol: self.leak_tol.unwrap_or(d.leak_tol),
            factor_tol: self.factor_tol.unwrap_or(d.factor_tol),
        }
    }
}

/// A coefficient written as a real number or as `[re, im]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Coefficient {
    Real(f64),
    Complex([f64; 2]),
}

impl Coefficient {
    pub fn value(self) -> Complex64 {
        match self {
            Coefficient::Real(re) => Complex64::new(re, 0.0),
            Coefficient::Complex([re, im]) => Complex64::new(re, im),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermConfig {
    /// Letters `1..=d`; empty for the constant term.
    pub word: Vec<u32>,
    pub coeff: Coefficient,
}

/// The weight `Y` of the localized bound.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum WeightConfig {
    #[default]
    Identity,
    Diagonal {
        values: Vec<f64>,
    },
}

impl WeightConfig {
    pub fn matrix(&self, n: usize) -> Option<ComplexMatrix> {
        match self {
            WeightConfig::Identity => None,
            WeightConfig::Diagonal { values } => {
                debug_assert_eq!(values.len(), n);
                Some(ComplexMatrix::from_diag(values))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VnConfig {
    pub terms: Vec<TermConfig>,
    #[serde(default, alias = "Y")]
    pub y: WeightConfig,
    /// Fock truncation depth; unset selects it automatically.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth: Option<usize>,
    /// Also check `E ||f(A)^* v||^2 <= ||f(L)||^2 ||v||^2` for this vector.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vector: Option<Vec<Coefficient>>,
}

impl VnConfig {
    pub fn polynomial(&self, d: usize) -> kernelrn::Result<NcPolynomial> {
        NcPolynomial::new(
            d,
            self.terms.iter().map(|t| (Word::new(t.word.clone()), t.coeff.value())),
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Json,
    Csv,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub directory: PathBuf,
    pub formats: Vec<Format>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            directory: PathBuf::from("kernelrn-out"),
            formats: vec![Format::Json, Format::Csv],
        }
    }
}

/// One validation failure, located by its field path.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfigIssue {
    pub path: String,
    pub message: String,
}

impl fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

fn issue(path: impl Into<String>, message: impl Into<String>) -> ConfigIssue {
    ConfigIssue {
        path: path.into(),
        message: message.into(),
    }
}

impl RunConfig {
    /// Parses JSON, reporting the field path of the first syntax or type error.
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            CliError::Invalid(vec![issue(
                if path.is_empty() { ".".into() } else { path },
                e.into_inner().to_string(),
            )])
        })
    }

    /// Every invariant violation, in field order.
    pub fn issues(&self) -> Vec<ConfigIssue> {
        let mut out = Vec::new();
        let ensemble_ok = match self.ensemble.validate() {
            Ok(()) => true,
            Err(e) => {
                out.push(issue("ensemble", e.to_string()));
                false
            }
        };
        if self.samples < 2 {
            out.push(issue("samples", format!("must be at least 2, got {}", self.samples)));
        }
        if self.workers == Some(0) {
            out.push(issue("workers", "must be at least 1"));
        }

        let a = &self.analysis;
        if !(a.z.is_finite() && a.z > 0.0) {
            out.push(issue("analysis.z", format!("must be finite and > 0, got {}", a.z)));
        }
        for (name, value) in a.tolerances.entries() {
            if let Some(v) = value {
                if !(v.is_finite() && v > 0.0) {
                    out.push(issue(
                        format!("analysis.tolerances.{name}"),
                        format!("must be finite and > 0, got {v}"),
                    ));
                }
            }
        }
        if let SubalgebraSpec::Blocks { sizes } = &a.subalgebra {
            if sizes.is_empty() || sizes.contains(&0) {
                out.push(issue("analysis.subalgebra.sizes", "block sizes must be positive"));
            } else if ensemble_ok {
                let n = self.ensemble.dim();
                let total: usize = sizes.iter().sum();
                if total != n {
                    out.push(issue(
                        "analysis.subalgebra.sizes",
                        format!("sizes must sum to n (sum {total}, n = {n})"),
                    ));
                }
            }
        }
        if a.enforce == Enforcement::Block && !matches!(a.subalgebra, SubalgebraSpec::Blocks { .. }) {
            out.push(issue("analysis.enforce", "block enforcement needs a blocks subalgebra"));
        }

        if let Some(vn) = &self.vn {
            if vn.terms.is_empty() {
                out.push(issue("vn.terms", "at least one term is required"));
            } else if ensemble_ok {
                if let Err(e) = vn.polynomial(self.ensemble.generators()) {
                    out.push(issue("vn.terms", e.to_string()));
                }
            }
            if ensemble_ok {
                let n = self.ensemble.dim();
                if let WeightConfig::Diagonal { values } = &vn.y {
                    if values.len() != n {
                        out.push(issue(
                            "vn.y.values",
                            format!("expected {n} entries, got {}", values.len()),
                        ));
                    }
                    if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                        out.push(issue("vn.y.values", "entries must be finite and >= 0"));
                    }
                    if values.iter().all(|&v| v == 0.0) {
                        out.push(issue("vn.y.values", "weight must be nonzero"));
                    }
                }
                if let Some(v) = &vn.vector {
                    if v.len() != n {
                        out.push(issue("vn.vector", format!("expected {n} entries, got {}", v.len())));
                    } else if v.iter().all(|c| c.value().norm() == 0.0) {
                        out.push(issue("vn.vector", "vector must be nonzero"));
                    }
                }
            }
        }

        if self.output.formats.is_empty() {
            out.push(issue("output.formats", "at least one format is required"));
        }
        out
    }

    pub fn validated(self) -> Result<Self, CliError> {
        let issues = self.issues();
        if issues.is_empty() {
            Ok(self)
        } else {
            Err(CliError::Invalid(issues))
        }
    }
}

/// Reads, parses and validates a config file.
pub fn validate_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = fs::read_to_string(path).map_err(|source| CliError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    RunConfig::from_json(&text)?.validated()
}
