//! Acceptance suite: one line per criterion, nonzero exit if any fails.
//!
//! Reference values come from closed forms computed here (Catalan numbers,
//! first-moment Wick sums, constructed spectra), never from the code under
//! test.

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use kernelrn::kernel::{conditional_expectation, estimate_kernel};
use kernelrn::moments::{c_sequence, moment_tables, ratio_test, Flag, MomentRequest};
use kernelrn::numerics::{hermitian_eig, psd_verdict};
use kernelrn::rn::{order_test, rn_density, shift_analysis};
use kernelrn::synthetic::{random_matrix, random_psd, random_unitary};
use kernelrn::vn::{creation_norm, vn_check, VnSettings};
use kernelrn::{
    Complex64, ComplexMatrix, DensityVerdict, Enforcement, EnsembleSpec, NcPolynomial, SubalgebraSpec, Tolerances,
    VnVerdict, Word,
};
use kernelrn_cli::config::RunConfig;
use kernelrn_cli::run_moments;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Check {
    failures: Vec<String>,
}

impl Check {
    fn new() -> Self {
        Self { failures: vec![] }
    }

    fn that(&mut self, ok: bool, what: impl Into<String>) {
        if !ok {
            self.failures.push(what.into());
        }
    }
}

fn c1(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

/// Exact Catalan numbers from the recurrence `C_{m+1} = sum C_i C_{m-i}`.
fn catalan_oracle(m: usize) -> f64 {
    let mut c = vec![1u64];
    for k in 0..m {
        c.push((0..=k).map(|i| c[i] * c[k - i]).sum());
    }
    c[m] as f64
}

fn haar_exactness(ch: &mut Check) {
    let spec = EnsembleSpec::HaarUnitary { n: 50 };
    let c = c_sequence(&spec, 5, 50, 1).unwrap();
    ch.that(c.values.iter().all(|&v| v == 1.0), format!("c_m = {:?}", c.values));
    let k = estimate_kernel(&spec, 6, 50, 1).unwrap();
    let run = shift_analysis(
        &k,
        &SubalgebraSpec::Full,
        5,
        Enforcement::Phase,
        &Tolerances::default(),
        3.0,
    )
    .unwrap();
    let worst = run
        .density
        .eigenvalues
        .iter()
        .map(|x| (x - 1.0).abs())
        .fold(0.0, f64::max);
    ch.that(worst <= 1e-10, format!("density spectrum deviates from 1 by {worst:e}"));
    ch.that(run.density.eigenvalues.len() == 6 * 50, "density rank");
    let m = run.order.min_eig_of_difference;
    ch.that(m.abs() <= 1e-8, format!("order-test min eigenvalue {m:e}"));
}

fn base_threshold(ch: &mut Check) {
    for (tau, seed) in [(0.5, 11), (0.9, 12), (1.1, 13)] {
        let spec = EnsembleSpec::Ginibre { n: 200, tau };
        let c = c_sequence(&spec, 4, 400, seed).unwrap();
        let dev = (c.values[1] - tau).abs();
        ch.that(
            dev <= 3.0 * c.se[1],
            format!("tau {tau}: |c_1 - tau| = {dev:e} > 3 se = {:e}", 3.0 * c.se[1]),
        );
        let v = ratio_test(&c, 3.0);
        if tau == 0.9 {
            ch.that(v.overall == Flag::Pass, format!("tau 0.9 ratio test {:?}", v.overall));
        }
        if tau == 1.1 {
            ch.that(
                v.overall == Flag::Fail && v.first_failing == Some(0),
                format!("tau 1.1 ratio test {:?} at {:?}", v.overall, v.first_failing),
            );
        }
    }
}

fn fuss_catalan_limit(ch: &mut Check) {
    let tau: f64 = 0.5;
    let c = c_sequence(&EnsembleSpec::Ginibre { n: 200, tau }, 4, 400, 21).unwrap();
    for m in 0..=4 {
        let want = tau.powi(m as i32);
        let tol = (4.0 * c.se[m]).max(0.05 * want);
        let dev = (c.values[m] - want).abs();
        ch.that(dev <= tol, format!("m {m}: |c_m - tau^m| = {dev:e} > {tol:e}"));
    }
}

fn marchenko_pastur(ch: &mut Check) {
    let req = MomentRequest {
        order: 3,
        with_d: true,
        block_sizes: None,
    };
    let t = moment_tables(&EnsembleSpec::Ginibre { n: 200, tau: 1.0 }, &req, 400, 31).unwrap();
    let d = t.d.unwrap();
    let diff = t.c_minus_d.unwrap();
    let (c2, c3) = (catalan_oracle(2), catalan_oracle(3));
    ch.that((d.values[2] - c2).abs() <= 0.05 * c2, format!("d_2 = {}", d.values[2]));
    ch.that((d.values[3] - c3).abs() <= 0.10 * c3, format!("d_3 = {}", d.values[3]));
    let want = 1.0 - c2;
    ch.that(
        (diff.values[2] - want).abs() <= 0.10 * want.abs(),
        format!("c_2 - d_2 = {}", diff.values[2]),
    );
}

fn biunitary_structure(ch: &mut Check) {
    let (n, order, samples) = (100, 3, 200);
    let spec = EnsembleSpec::Ginibre { n, tau: 0.5 };
    let k = estimate_kernel(&spec, order + 1, samples, 41).unwrap();
    let run = shift_analysis(
        &k,
        &SubalgebraSpec::Full,
        order,
        Enforcement::Biunitary,
        &Tolerances::default(),
        3.0,
    )
    .unwrap();
    let eig = &run.density.eigenvalues;
    ch.that(eig.len() == (order + 1) * n, "density rank");

    let ratio = |c: &kernelrn::MomentSequence, m: usize| {
        let r = c.values[m + 1] / c.values[m];
        let rel = ((c.se[m + 1] / c.values[m + 1]).powi(2) + (c.se[m] / c.values[m]).powi(2)).sqrt();
        (r, r * rel)
    };
    let same = c_sequence(&spec, order + 1, samples, 41).unwrap();
    let fresh = c_sequence(&spec, order + 1, samples, 42).unwrap();
    let mut expected: Vec<(f64, f64, f64)> = (0..=order)
        .map(|m| {
            let (r, se) = ratio(&same, m);
            let (r2, se2) = ratio(&fresh, m);
            (r, r2, 3.0 * se.hypot(se2))
        })
        .collect();
    expected.sort_by(|a, b| a.0.total_cmp(&b.0));
    for (level, chunk) in eig.chunks(n).enumerate() {
        let (r, r_fresh, tol) = expected[level];
        let spread = chunk.iter().map(|x| (x - r).abs()).fold(0.0, f64::max);
        ch.that(
            spread <= 1e-9,
            format!("level {level}: eigenvalues off c_(m+1)/c_m by {spread:e}"),
        );
        ch.that(
            (r - r_fresh).abs() <= tol,
            format!("level {level}: ratio {r} vs independent {r_fresh} beyond {tol:e}"),
        );
    }
    let dominated = run.density.verdict == DensityVerdict::Dominated;
    ch.that(dominated == run.order.passes, "order test and density verdict disagree");
    ch.that(dominated, format!("verdict {:?}", run.density.verdict));
}

/// `G_L = U diag(Λ, 0) U^*` and `A_0 = U [[V D V^*, C], [C^*, E]] U^*`, so the
/// compression of `A_0` to range(`G_L`) has spectrum `D` by construction.
fn rn_oracle(ch: &mut Check) {
    let mut rng = ChaCha8Rng::seed_from_u64(61);
    for case in 0..50 {
        let dim = rng.random_range(2..=64);
        let rank = rng.random_range(1..=dim);
        let u = random_unitary(dim, &mut rng);
        let v = random_unitary(rank, &mut rng);
        let w = random_unitary(rank, &mut rng);
        let d: Vec<f64> = (0..rank).map(|_| rng.random_range(0.1..0.9)).collect();
        let lam: Vec<f64> = (0..rank).map(|_| 10f64.powf(rng.random_range(-2.0..1.0))).collect();

        let embed = |inner: &ComplexMatrix| {
            let mut full = ComplexMatrix::zeros(dim, dim);
            full.set_block(0, 0, inner);
            full
        };
        let mut a0 = embed(&v.matmul(&ComplexMatrix::from_diag(&d)).mul_adjoint(&v));
        if rank < dim {
            let c = random_matrix(rank, dim - rank, &mut rng);
            let c = c.scale(0.05 / c.frobenius_norm());
            a0.set_block(0, rank, &c);
            a0.set_block(rank, 0, &c.adjoint());
            a0.set_block(rank, rank, &ComplexMatrix::identity(dim - rank).scale(0.5));
        }
        let a0 = u.matmul(&a0).mul_adjoint(&u);
        let sqrt_lam: Vec<f64> = lam.iter().map(|x| x.sqrt()).collect();
        let g_l = u
            .matmul(&embed(&w.matmul(&ComplexMatrix::from_diag(&lam)).mul_adjoint(&w)))
            .mul_adjoint(&u);
        let root = u
            .matmul(&embed(&w.matmul(&ComplexMatrix::from_diag(&sqrt_lam)).mul_adjoint(&w)))
            .mul_adjoint(&u);
        let g_k = root.matmul(&a0).matmul(&root);

        let report = rn_density(&g_k, &g_l, &Tolerances::default()).unwrap();
        let mut want = d.clone();
        want.sort_by(f64::total_cmp);
        ch.that(
            report.rank == rank,
            format!("case {case}: rank {} vs {rank}", report.rank),
        );
        if report.rank == rank {
            let dev = report
                .eigenvalues
                .iter()
                .zip(&want)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            ch.that(
                dev <= 1e-8,
                format!("case {case} (dim {dim}, rank {rank}): spectrum off by {dev:e}"),
            );
        }
        for t in [0.5, 2.0, 4.0] {
            let scaled = rn_density(&g_k.scale(t), &g_l, &Tolerances::default()).unwrap();
            let exact = scaled
                .eigenvalues
                .iter()
                .zip(&report.eigenvalues)
                .all(|(a, b)| *a == t * b);
            ch.that(exact, format!("case {case}: scaling by {t} is not exact"));
        }
    }
}

fn blockwise_detection(ch: &mut Check) {
    let cfg = RunConfig::from_json(
        r#"{"ensemble": {"kind": "block_ginibre", "sizes": [50, 50], "tau": [[0.8, 0.8], [0.8, 1.6]]},
            "samples": 400, "seed": 71, "analysis": {"max_order": 1}}"#,
    )
    .unwrap()
    .validated()
    .unwrap();
    let report = run_moments(&cfg).unwrap();
    let m = report.moments.unwrap();
    // first moment of block r is sum_s (k_s / N) tau_rs
    for (seq, want) in m
        .tables
        .blocks
        .iter()
        .zip([0.5 * 0.8 + 0.5 * 0.8, 0.5 * 0.8 + 0.5 * 1.6])
    {
        let dev = (seq.values[1] - want).abs();
        ch.that(
            dev <= 3.0 * seq.se[1],
            format!("block first moment {} vs {want}", seq.values[1]),
        );
    }
    let b = &m.block_verdicts;
    ch.that(
        b[0].verdict.overall == Flag::Pass,
        format!("block 1 {:?}", b[0].verdict.overall),
    );
    ch.that(
        b[1].verdict.overall == Flag::Fail && b[1].verdict.first_failing == Some(0),
        format!("block 2 {:?} at {:?}", b[1].verdict.overall, b[1].verdict.first_failing),
    );
    ch.that(m.worst_block == Some(2), format!("worst block {:?}", m.worst_block));
    ch.that(report.outcome.exit_code() == 1, "overall verdict is not fail");
}

fn creation_norms(ch: &mut Check) {
    let monomials = [(1, vec![1]), (1, vec![1, 1, 1]), (2, vec![2]), (2, vec![1, 2])];
    for (d, word) in monomials {
        let f = NcPolynomial::monomial(d, Word::new(word.clone()), c1(1.0)).unwrap();
        for depth in 0..=8 {
            let b = creation_norm(&f, depth).unwrap();
            ch.that(
                (b.lower - 1.0).abs() <= 1e-12 && b.best_lower() == 1.0,
                format!("monomial {word:?} at depth {depth}: {}", b.lower),
            );
        }
    }
    let coeffs = [c1(3.0), Complex64::new(-1.0, 2.0)];
    let l2 = (9.0f64 + 1.0 + 4.0).sqrt();
    let f = NcPolynomial::linear(&coeffs).unwrap();
    for depth in 0..=8 {
        let b = creation_norm(&f, depth).unwrap();
        ch.that(
            (b.lower - l2).abs() <= 1e-12 && (b.best_lower() - l2).abs() <= 1e-12,
            format!("linear at depth {depth}: {} vs {l2}", b.lower),
        );
    }
    let f = NcPolynomial::new(1, [(Word::new(vec![1]), c1(1.0)), (Word::new(vec![1, 1]), c1(1.0))]).unwrap();
    let mut prev = f64::NEG_INFINITY;
    for depth in 0..=8 {
        let b = creation_norm(&f, depth).unwrap();
        ch.that(
            b.lower >= prev - 1e-12,
            format!("Z + Z^2 lower bound decreases at depth {depth}"),
        );
        ch.that(
            b.lower <= 2.0 + 1e-12 && b.upper == 2.0,
            format!("Z + Z^2 bound {} at depth {depth}", b.lower),
        );
        prev = b.lower;
    }
}

fn localized_vn(ch: &mut Check) {
    let spec = EnsembleSpec::GinibreTuple { d: 2, n: 100, tau: 0.9 };
    let f = NcPolynomial::linear(&[c1(0.6), c1(0.8)]).unwrap();
    let settings = VnSettings {
        samples: 400,
        seed: 91,
        depth: Some(4),
        z: 3.0,
    };
    let r = vn_check(&spec, &f, &SubalgebraSpec::Diagonal, None, &settings).unwrap();
    ch.that(
        r.verdict == VnVerdict::CertifiedPass,
        format!("Ginibre tuple verdict {:?}", r.verdict),
    );
    // E[A_i A_i^*] = tau I and |c|_2 = 1
    let dev = (r.lambda_max - 0.9).abs();
    ch.that(
        dev <= 3.0 * r.se_frob,
        format!("lambda_max {} vs 0.9 (3 se = {:e})", r.lambda_max, 3.0 * r.se_frob),
    );

    let spec = EnsembleSpec::Deterministic {
        matrices: vec![ComplexMatrix::identity(4).scale(2.0)],
    };
    let f = NcPolynomial::monomial(1, Word::new(vec![1]), c1(1.0)).unwrap();
    let r = vn_check(
        &spec,
        &f,
        &SubalgebraSpec::Full,
        None,
        &VnSettings { samples: 2, ..settings },
    )
    .unwrap();
    ch.that(
        r.verdict == VnVerdict::CertifiedFail,
        format!("A = 2I verdict {:?}", r.verdict),
    );
}

fn random_subalgebra(rng: &mut ChaCha8Rng, n: usize) -> SubalgebraSpec {
    match rng.random_range(0..4) {
        0 => SubalgebraSpec::Full,
        1 => SubalgebraSpec::Diagonal,
        2 => SubalgebraSpec::Scalar,
        _ => {
            let split = rng.random_range(0..n);
            let sizes = if split == 0 { vec![n] } else { vec![split, n - split] };
            SubalgebraSpec::Blocks { sizes }
        }
    }
}

fn cli_run(dir: &Path, workers: &str, command: &str) -> Vec<(String, Vec<u8>)> {
    let out = dir.join(format!("{command}-{workers}"));
    let status = Command::new(env!("CARGO_BIN_EXE_kernelrn"))
        .args([command, "--config"])
        .arg(dir.join(format!("{command}.json")))
        .args(["--workers", workers, "--out"])
        .arg(&out)
        .stderr(std::process::Stdio::null())
        .status()
        .unwrap();
    assert!(status.code().is_some_and(|c| c < 3), "{command} failed");
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap())
        .filter(|e| e.file_name() != "timing.json")
        .map(|e| {
            (
                e.file_name().to_string_lossy().into_owned(),
                fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

fn property_suites(ch: &mut Check) {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    for case in 0..200 {
        let n = rng.random_range(1..=8);
        let b = random_subalgebra(&mut rng, n);
        let x = random_psd(n, rng.random_range(1..=n), &mut rng);
        let e = conditional_expectation(&x, &b).unwrap();
        let scale = x.max_abs().max(1.0);
        ch.that(
            psd_verdict(&e, 1e-12).unwrap().is_psd,
            format!("case {case}: E_B(X) not PSD"),
        );
        let ee = conditional_expectation(&e, &b).unwrap();
        ch.that(
            ee.max_abs_diff(&e) <= 1e-14 * scale,
            format!("case {case}: not idempotent"),
        );
        let one = conditional_expectation(&ComplexMatrix::identity(n), &b).unwrap();
        ch.that(one == ComplexMatrix::identity(n), format!("case {case}: not unital"));
        let b1 = conditional_expectation(&random_matrix(n, n, &mut rng), &b).unwrap();
        let b2 = conditional_expectation(&random_matrix(n, n, &mut rng), &b).unwrap();
        let y = random_matrix(n, n, &mut rng);
        let lhs = conditional_expectation(&b1.matmul(&y).matmul(&b2), &b).unwrap();
        let rhs = b1.matmul(&conditional_expectation(&y, &b).unwrap()).matmul(&b2);
        let tol = 1e-12 * (1.0 + b1.max_abs() * b2.max_abs() * y.max_abs() * n as f64);
        ch.that(lhs.max_abs_diff(&rhs) <= tol, format!("case {case}: not bimodular"));
    }

    // kernel-order test versus density contraction
    let tols = Tolerances::default();
    for case in 0..50 {
        let dim = rng.random_range(2..=24);
        let rank = rng.random_range(1..=dim);
        let g = random_psd(dim, rank, &mut rng);
        let eig = hermitian_eig(&g).unwrap();
        let basis = eig.eigenvectors.select_columns(&eig.retained(tols.rank_tol));
        let top = if rng.random_bool(0.5) {
            rng.random_range(0.2..0.95)
        } else {
            rng.random_range(1.05..2.0)
        };
        let spectrum: Vec<f64> = (0..rank)
            .map(|t| if t == 0 { top } else { rng.random_range(0.0..top) })
            .collect();
        let q = random_unitary(rank, &mut rng);
        let a = q.matmul(&ComplexMatrix::from_diag(&spectrum)).mul_adjoint(&q);
        let root = eig.apply(|x| x.max(0.0).sqrt());
        let lifted = basis.matmul(&a).mul_adjoint(&basis);
        let g_sigma = root.matmul(&lifted).matmul(&root);
        let report = rn_density(&g_sigma, &g, &tols).unwrap();
        let smallest = eig.eigenvalues[eig.retained(tols.rank_tol)[0]];
        let order = order_test(&g, &g_sigma, tols.density_tol * smallest).unwrap();
        let dominated = report.verdict == DensityVerdict::Dominated;
        ch.that(
            dominated == order.passes,
            format!("kernel {case}: density {:?}, order {}", report.verdict, order.passes),
        );
        ch.that(
            dominated == (top < 1.0),
            format!("kernel {case}: verdict {:?} for top {top}", report.verdict),
        );
    }

    let dir = tempfile::tempdir().unwrap();
    let configs = [
        (
            "moments",
            r#"{"ensemble": {"kind": "ginibre", "n": 30, "tau": 0.7}, "samples": 300, "seed": 5,
                       "analysis": {"max_order": 4, "d_sequence": true}}"#,
        ),
        (
            "rn",
            r#"{"ensemble": {"kind": "ginibre", "n": 16, "tau": 0.5}, "samples": 300, "seed": 5,
                  "analysis": {"max_order": 2, "subalgebra": {"kind": "diagonal"}}}"#,
        ),
        (
            "vn",
            r#"{"ensemble": {"kind": "ginibre_tuple", "d": 2, "n": 20, "tau": 0.9}, "samples": 300, "seed": 5,
                  "vn": {"terms": [{"word": [1], "coeff": 0.6}, {"word": [2, 1], "coeff": 0.8}], "depth": 4}}"#,
        ),
    ];
    for (command, text) in configs {
        fs::write(dir.path().join(format!("{command}.json")), text).unwrap();
        let one = cli_run(dir.path(), "1", command);
        let four = cli_run(dir.path(), "4", command);
        ch.that(
            !one.is_empty() && one == four,
            format!("{command}: outputs differ between 1 and 4 workers"),
        );
    }
}

type Criterion = (&'static str, fn(&mut Check));

fn main() {
    let criteria: [Criterion; 10] = [
        ("Haar exactness", haar_exactness),
        ("base-case threshold", base_threshold),
        ("Fuss-Catalan limit", fuss_catalan_limit),
        ("Marchenko-Pastur moments", marchenko_pastur),
        ("bi-unitary density structure", biunitary_structure),
        ("RN oracle recovery", rn_oracle),
        ("blockwise detection", blockwise_detection),
        ("creation-operator norms", creation_norms),
        ("localized von Neumann bounds", localized_vn),
        ("property suites", property_suites),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let mut ch = Check::new();
        run(&mut ch);
        let secs = start.elapsed().as_secs_f64();
        if ch.failures.is_empty() {
            println!("criterion {:>2} {name}: PASS ({secs:.1}s)", i + 1);
        } else {
            failed += 1;
            println!("criterion {:>2} {name}: FAIL ({secs:.1}s)", i + 1);
            for f in &ch.failures {
                println!("    {f}");
            }
        }
    }
    println!(
        "acceptance: {} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
