//! Report types and their JSON/CSV serialization.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use kernelrn::moments::{ratio_test, AsymptoticRow, Flag, MomentTables, RatioVerdict};
use kernelrn::rn::OrderTest;
use kernelrn::vn::{VectorCheck, VnCheck};
use kernelrn::{DensityReport, DensityVerdict, Enforcement, MomentSequence, NcPolynomial, Tolerances, VnVerdict};
use serde::Serialize;

use crate::config::{Format, RunConfig};
use crate::error::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Pass,
    Inconclusive,
    Fail,
}

impl Outcome {
    /// 0 pass, 1 fail, 2 inconclusive.
    pub fn exit_code(self) -> i32 {
        match self {
            Outcome::Pass => 0,
            Outcome::Fail => 1,
            Outcome::Inconclusive => 2,
        }
    }

    /// Any fail dominates, then any inconclusive.
    pub fn combine(items: impl IntoIterator<Item = Outcome>) -> Outcome {
        items.into_iter().max().unwrap_or(Outcome::Pass)
    }
}

impl From<Flag> for Outcome {
    fn from(f: Flag) -> Self {
        match f {
            Flag::Pass => Outcome::Pass,
            Flag::Fail => Outcome::Fail,
            Flag::Inconclusive => Outcome::Inconclusive,
        }
    }
}

impl From<DensityVerdict> for Outcome {
    fn from(v: DensityVerdict) -> Self {
        match v {
            DensityVerdict::Dominated => Outcome::Pass,
            DensityVerdict::NotDominated => Outcome::Fail,
            DensityVerdict::Inconclusive => Outcome::Inconclusive,
        }
    }
}

impl From<VnVerdict> for Outcome {
    fn from(v: VnVerdict) -> Self {
        match v {
            VnVerdict::CertifiedPass => Outcome::Pass,
            VnVerdict::CertifiedFail => Outcome::Fail,
            VnVerdict::Inconclusive => Outcome::Inconclusive,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Moments,
    Rn,
    Vn,
}

#[derive(Clone, Debug, Serialize)]
pub struct ToolInfo {
    pub name: &'static str,
    pub version: &'static str,
}

impl Default for ToolInfo {
    fn default() -> Self {
        Self {
            name: "kernelrn",
            version: env!("CARGO_PKG_VERSION"),
        }
    }
}

/// Everything a run computes. Contains no timing or pool size, so reruns
/// of the same config and seed serialize identically.
#[derive(Clone, Debug, Serialize)]
pub struct RunReport {
    pub tool: ToolInfo,
    pub command: Command,
    pub seed: u64,
    pub config: RunConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub moments: Option<MomentsReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rn: Option<RnReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vn: Option<VnReport>,
    pub outcome: Outcome,
}

#[derive(Clone, Debug, Serialize)]
pub struct BlockVerdict {
    /// Numbered from 1.
    pub block: usize,
    pub size: usize,
    pub verdict: RatioVerdict,
}

#[derive(Clone, Debug, Serialize)]
pub struct AsymptoticSection {
    pub tau: f64,
    pub c: Vec<AsymptoticRow>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d: Option<Vec<AsymptoticRow>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c_minus_d: Option<Vec<AsymptoticRow>>,
}

#[derive(Clone, Debug, Serialize)]
pub struct MomentsReport {
    pub order: usize,
    pub samples: u64,
    pub z: f64,
    pub tables: MomentTables,
    pub c_verdict: RatioVerdict,
    pub block_verdicts: Vec<BlockVerdict>,
    /// The block whose ratio test fails earliest, most decisively on ties.
    pub worst_block: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub asymptotic: Option<AsymptoticSection>,
    pub outcome: Outcome,
}

#[derive(Clone, Debug, Serialize)]
pub struct GramSummary {
    pub dim: usize,
    pub min_eig: f64,
    pub clipped: bool,
    pub se: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct RnReport {
    pub order: usize,
    pub subalgebra: String,
    pub enforce: Enforcement,
    pub enforcement_valid: bool,
    pub z: f64,
    pub tolerances: Tolerances,
    pub gram: GramSummary,
    pub shifted: GramSummary,
    pub density: DensityReport,
    pub order_test: OrderTest,
    pub verdicts_agree: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub discrepancy: Option<String>,
    pub outcome: Outcome,
}

#[derive(Clone, Debug, Serialize)]
pub struct VnReport {
    pub polynomial: NcPolynomial,
    pub subalgebra: String,
    pub z: f64,
    pub check: VnCheck,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vector: Option<VectorCheck>,
    pub outcome: Outcome,
}

/// Wall-clock statistics, kept out of the deterministic report.
#[derive(Clone, Debug, Serialize)]
pub struct Timing {
    pub command: Command,
    pub workers: usize,
    pub wall_seconds: f64,
    pub samples: u64,
    pub samples_per_second: f64,
}

fn write_atomic(dir: &Path, name: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
    let target = dir.join(name);
    let tmp = dir.join(format!(".{name}.{}.tmp", std::process::id()));
    let wrap = |source| CliError::Write {
        path: target.clone(),
        source,
    };
    let mut file = fs::File::create(&tmp).map_err(wrap)?;
    file.write_all(bytes).map_err(wrap)?;
    file.sync_all().map_err(wrap)?;
    drop(file);
    fs::rename(&tmp, &target).map_err(wrap)?;
    Ok(target)
}

fn num(x: f64) -> String {
    format!("{x:?}")
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

fn flag(f: Flag) -> &'static str {
    match f {
        Flag::Pass => "pass",
        Flag::Fail => "fail",
        Flag::Inconclusive => "inconclusive",
    }
}

/// `m,value,se,limit,ratio,margin,pass`; the last three describe the step
/// from `m` to `m + 1` and are empty on the final row.
pub fn moments_csv(seq: &MomentSequence, verdict: &RatioVerdict, limits: Option<&[AsymptoticRow]>) -> String {
    let mut out = String::from("m,value,se,limit,ratio,margin,pass\n");
    for m in 0..seq.values.len() {
        let limit = limits.and_then(|rows| rows.get(m)).map(|r| r.limit);
        let step = verdict.steps.get(m);
        let _ = writeln!(
            out,
            "{m},{},{},{},{},{},{}",
            num(seq.values[m]),
            num(seq.se[m]),
            opt(limit),
            opt(step.and_then(|s| s.ratio)),
            opt(step.map(|s| s.margin)),
            step.map(|s| flag(s.flag)).unwrap_or_default()
        );
    }
    out
}

pub fn density_csv(density: &DensityReport) -> String {
    let mut out = String::from("index,eigenvalue\n");
    for (i, x) in density.eigenvalues.iter().enumerate() {
        let _ = writeln!(out, "{i},{}", num(*x));
    }
    out
}

/// Writes report.json, timing.json and the CSV tables; returns the paths.
pub fn write_outputs(
    report: &RunReport,
    timing: &Timing,
    dir: &Path,
    formats: &[Format],
) -> Result<Vec<PathBuf>, CliError> {
    fs::create_dir_all(dir).map_err(|source| CliError::Write {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut written = Vec::new();
    if formats.contains(&Format::Json) {
        let mut json = serde_json::to_string_pretty(report)?;
        json.push('\n');
        written.push(write_atomic(dir, "report.json", json.as_bytes())?);
        let mut json = serde_json::to_string_pretty(timing)?;
        json.push('\n');
        written.push(write_atomic(dir, "timing.json", json.as_bytes())?);
    }
    if formats.contains(&Format::Csv) {
        if let Some(m) = &report.moments {
            let limits = m.asymptotic.as_ref();
            let csv = moments_csv(&m.tables.c, &m.c_verdict, limits.map(|a| a.c.as_slice()));
            written.push(write_atomic(dir, "moments.csv", csv.as_bytes())?);
            if let Some(d) = &m.tables.d {
                let csv = moments_csv(d, &ratio_test(d, m.z), limits.and_then(|a| a.d.as_deref()));
                written.push(write_atomic(dir, "moments_d.csv", csv.as_bytes())?);
            }
            for b in &m.block_verdicts {
                let csv = moments_csv(&m.tables.blocks[b.block - 1], &b.verdict, None);
                written.push(write_atomic(
                    dir,
                    &format!("moments_block{}.csv", b.block),
                    csv.as_bytes(),
                )?);
            }
        }
        if let Some(rn) = &report.rn {
            written.push(write_atomic(dir, "density.csv", density_csv(&rn.density).as_bytes())?);
        }
    }
    Ok(written)
}
