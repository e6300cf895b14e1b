use std::path::Path;
use std::time::Instant;

use kernelrn::kernel::{estimate_kernel, word_count};
use kernelrn::moments::{asymptotic_report, moment_tables, ratio_test, MomentRequest, RatioVerdict};
use kernelrn::rn::shift_analysis;
use kernelrn::vn::{vector_bound_check, vn_check, VnSettings};
use kernelrn::{DensityVerdict, EnsembleSpec, MomentKind, SubalgebraSpec};

use crate::config::RunConfig;
use crate::error::CliError;
use crate::report::{
    write_outputs, AsymptoticSection, BlockVerdict, Command, GramSummary, MomentsReport, Outcome, RnReport, RunReport,
    Timing, ToolInfo, VnReport,
};

fn log(line: &str) {
    eprintln!("kernelrn: {line}");
}

fn report(cfg: &RunConfig, command: Command) -> RunReport {
    // the pool size is not part of the result
    let mut echo = cfg.clone();
    echo.workers = None;
    RunReport {
        tool: ToolInfo::default(),
        command,
        seed: cfg.seed,
        config: echo,
        moments: None,
        rn: None,
        vn: None,
        outcome: Outcome::Pass,
    }
}

fn block_sizes(cfg: &RunConfig) -> Option<Vec<usize>> {
    match (&cfg.analysis.subalgebra, &cfg.ensemble) {
        (SubalgebraSpec::Blocks { sizes }, _) => Some(sizes.clone()),
        (_, EnsembleSpec::BlockGinibre { sizes, .. }) => Some(sizes.clone()),
        _ => None,
    }
}

/// Earliest failing step first; ties go to the most negative `margin / se`.
fn worst_block(verdicts: &[BlockVerdict]) -> Option<usize> {
    let severity = |v: &RatioVerdict| {
        let m = v.first_failing?;
        let step = &v.steps[m];
        let z = if step.margin_se > 0.0 {
            step.margin / step.margin_se
        } else {
            f64::NEG_INFINITY
        };
        Some((m, z))
    };
    verdicts
        .iter()
        .filter_map(|b| severity(&b.verdict).map(|s| (s, b.block)))
        .min_by(|(a, _), (b, _)| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)))
        .map(|(_, block)| block)
}

/// Moment sequences and their ratio tests.
pub fn run_moments(cfg: &RunConfig) -> Result<RunReport, CliError> {
    let spec = &cfg.ensemble;
    let a = &cfg.analysis;
    let sizes = block_sizes(cfg);
    let req = MomentRequest {
        order: a.max_order,
        with_d: a.d_sequence,
        block_sizes: sizes.clone(),
    };
    log(&format!(
        "sampling moments of {} up to m = {}",
        spec.label(),
        a.max_order
    ));
    let tables = moment_tables(spec, &req, cfg.samples, cfg.seed)?;
    let c_verdict = ratio_test(&tables.c, a.z);
    let block_verdicts: Vec<BlockVerdict> = tables
        .blocks
        .iter()
        .zip(sizes.unwrap_or_default())
        .enumerate()
        .map(|(r, (seq, size))| BlockVerdict {
            block: r + 1,
            size,
            verdict: ratio_test(seq, a.z),
        })
        .collect();
    let asymptotic = match spec.tau() {
        Some(tau) => Some(AsymptoticSection {
            tau,
            c: asymptotic_report(&tables.c, tau, MomentKind::C)?,
            d: tables
                .d
                .as_ref()
                .map(|d| asymptotic_report(d, tau, MomentKind::D))
                .transpose()?,
            c_minus_d: tables
                .c_minus_d
                .as_ref()
                .map(|s| asymptotic_report(s, tau, MomentKind::CMinusD))
                .transpose()?,
        }),
        None => None,
    };
    let outcome = if block_verdicts.is_empty() {
        c_verdict.overall.into()
    } else {
        Outcome::combine(block_verdicts.iter().map(|b| Outcome::from(b.verdict.overall)))
    };
    let worst = worst_block(&block_verdicts);
    match worst {
        Some(b) => log(&format!("ratio test: {outcome:?}, worst block {b}")),
        None => log(&format!("ratio test: {outcome:?}")),
    }
    let mut r = report(cfg, Command::Moments);
    r.outcome = outcome;
    r.moments = Some(MomentsReport {
        order: a.max_order,
        samples: cfg.samples,
        z: a.z,
        tables,
        c_verdict,
        block_verdicts,
        worst_block: worst,
        asymptotic,
        outcome,
    });
    Ok(r)
}

/// Density of the shifted kernel and the kernel-order cross-check.
pub fn run_rn(cfg: &RunConfig) -> Result<RunReport, CliError> {
    let spec = &cfg.ensemble;
    let a = &cfg.analysis;
    log(&format!(
        "sampling kernel of {} to length {}",
        spec.label(),
        a.max_order + 1
    ));
    let k = estimate_kernel(spec, a.max_order + 1, cfg.samples, cfg.seed)?;
    // ||E||_2 <= ||E||_F <= (number of word blocks) * max block error
    let words = word_count(spec.generators(), a.max_order).unwrap_or(usize::MAX) as f64;
    let tols = a.tolerances.resolve(a.z * words * k.max_se());
    log("assembling Gram matrices");
    let run = shift_analysis(&k, &a.subalgebra, a.max_order, a.enforce, &tols, a.z)?;
    let dominated = run.density.verdict == DensityVerdict::Dominated;
    let verdicts_agree = dominated == run.order.passes;
    let discrepancy = (!verdicts_agree).then(|| {
        format!(
            "density verdict {:?} but order test {}",
            run.density.verdict,
            if run.order.passes { "passes" } else { "fails" }
        )
    });
    let outcome = if verdicts_agree {
        run.density.verdict.into()
    } else {
        Outcome::Inconclusive
    };
    log(&format!(
        "density: {:?}, lambda_max {:.6}, order test {}",
        run.density.verdict,
        run.density.lambda_max,
        if run.order.passes { "passes" } else { "fails" }
    ));
    let mut r = report(cfg, Command::Rn);
    r.outcome = outcome;
    r.rn = Some(RnReport {
        order: a.max_order,
        subalgebra: a.subalgebra.label(),
        enforce: a.enforce,
        enforcement_valid: run.gram.enforcement_valid,
        z: a.z,
        tolerances: tols,
        gram: GramSummary {
            dim: run.gram.matrix.rows(),
            min_eig: run.gram.min_eig,
            clipped: run.gram.clipped,
            se: run.gram.se,
        },
        shifted: GramSummary {
            dim: run.shifted.matrix.rows(),
            min_eig: run.shifted.min_eig,
            clipped: run.shifted.clipped,
            se: run.shifted.se,
        },
        density: run.density,
        order_test: run.order,
        verdicts_agree,
        discrepancy,
        outcome,
    });
    Ok(r)
}

/// Localized von Neumann bound and the optional vector bound.
pub fn run_vn(cfg: &RunConfig) -> Result<RunReport, CliError> {
    let vn = cfg.vn.as_ref().ok_or(CliError::Unsupported {
        command: "vn",
        what: "a vn section in the config".into(),
    })?;
    let spec = &cfg.ensemble;
    let a = &cfg.analysis;
    let f = vn.polynomial(spec.generators())?;
    let settings = VnSettings {
        samples: cfg.samples,
        seed: cfg.seed,
        depth: vn.depth,
        z: a.z,
    };
    log(&format!("checking von Neumann bound for {}", spec.label()));
    let y = vn.y.matrix(spec.dim());
    let check = vn_check(spec, &f, &a.subalgebra, y.as_ref(), &settings)?;
    let vector = match &vn.vector {
        Some(v) => {
            let v: Vec<_> = v.iter().map(|c| c.value()).collect();
            Some(vector_bound_check(spec, &f, &v, &settings)?)
        }
        None => None,
    };
    let outcome = Outcome::combine(
        std::iter::once(Outcome::from(check.verdict)).chain(vector.iter().map(|v| Outcome::from(v.verdict))),
    );
    log(&format!(
        "von Neumann: {:?}, lambda_max {:.6}",
        check.verdict, check.lambda_max
    ));
    let mut r = report(cfg, Command::Vn);
    r.outcome = outcome;
    r.vn = Some(VnReport {
        polynomial: f,
        subalgebra: a.subalgebra.label(),
        z: a.z,
        check,
        vector,
        outcome,
    });
    Ok(r)
}

/// Runs `command` on a pool of `workers` threads and writes the outputs to `out`.
pub fn execute(command: Command, cfg: &RunConfig, workers: usize, out: &Path) -> Result<RunReport, CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .expect("thread pool");
    let start = Instant::now();
    let report = pool.install(|| match command {
        Command::Moments => run_moments(cfg),
        Command::Rn => run_rn(cfg),
        Command::Vn => run_vn(cfg),
    })?;
    let wall_seconds = start.elapsed().as_secs_f64();
    let timing = Timing {
        command,
        workers,
        wall_seconds,
        samples: cfg.samples,
        samples_per_second: cfg.samples as f64 / wall_seconds.max(f64::MIN_POSITIVE),
    };
    for path in write_outputs(&report, &timing, out, &cfg.output.formats)? {
        log(&format!("wrote {}", path.display()));
    }
    Ok(report)
}
