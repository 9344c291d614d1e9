//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use minpen_core::sim::{
    estimate_min_penalty, generate_sample, Experiment, ExperimentKind, ExperimentReport,
    ExperimentSettings, MinPenaltyEstimate,
};
use minpen_core::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

fn within_budget(outcome: Outcome, elapsed: Duration, budget: Duration) -> Outcome {
    let pass = outcome.pass && elapsed <= budget;
    let detail = format!(
        "{}; {:.1}s of {}s",
        outcome.detail,
        elapsed.as_secs_f64(),
        budget.as_secs()
    );
    Outcome::new(pass, detail)
}

// ---------------------------------------------------------------------------
// 1. algebraic identities

fn random_truth(rng: &mut ChaCha8Rng) -> RegressionSpec {
    let regression = match rng.random_range(0..4) {
        0 => RegressionFunction::Polynomial {
            coefficients: (0..rng.random_range(1..6))
                .map(|_| rng.random_range(-2.0..2.0))
                .collect(),
        },
        1 => RegressionFunction::Sine {
            amplitude: rng.random_range(0.1..2.0),
            frequency: rng.random_range(0.5..4.0),
            phase: rng.random_range(0.0..6.3),
        },
        2 => RegressionFunction::HolderCusp {
            alpha: rng.random_range(0.1..1.0),
            center: rng.random_range(0.1..0.9),
        },
        _ => RegressionFunction::PiecewiseSmooth {
            jump_at: rng.random_range(0.1..0.9),
            jump: rng.random_range(-2.0..2.0),
            frequency: rng.random_range(0.5..3.0),
        },
    };
    let noise_level = match rng.random_range(0..3) {
        0 => NoiseLevel::Constant {
            value: rng.random_range(0.01..1.0),
        },
        1 => NoiseLevel::Affine {
            intercept: rng.random_range(0.05..0.5),
            slope: rng.random_range(-0.04..1.0),
        },
        _ => NoiseLevel::SineModulated {
            base: rng.random_range(0.3..1.0),
            amplitude: rng.random_range(0.0..0.25),
            frequency: rng.random_range(0.5..3.0),
        },
    };
    let design = match rng.random_range(0..3) {
        0 => DesignDensity::Uniform,
        1 => DesignDensity::Linear {
            slope: rng.random_range(-1.9..1.9),
        },
        _ => {
            let pieces = rng.random_range(2..5);
            let mut inner: Vec<f64> = (0..pieces - 1)
                .map(|_| rng.random_range(0.05..0.95))
                .collect();
            inner.sort_by(f64::total_cmp);
            inner.dedup_by(|a, b| (*a - *b).abs() < 0.01);
            let mut breakpoints = vec![0.0];
            breakpoints.extend(inner);
            breakpoints.push(1.0);
            let raw: Vec<f64> = (1..breakpoints.len())
                .map(|_| rng.random_range(0.2..1.0))
                .collect();
            let total: f64 = raw.iter().sum();
            DesignDensity::PiecewiseConstant {
                breakpoints,
                masses: raw.iter().map(|m| m / total).collect(),
            }
        }
    };
    let noise = match rng.random_range(0..3) {
        0 => NoiseLaw::Uniform,
        1 => NoiseLaw::Rademacher,
        _ => NoiseLaw::TruncatedGaussian {
            cutoff: rng.random_range(1.0..4.0),
        },
    };
    RegressionSpec::new(regression, noise_level, design, noise).expect("valid random truth")
}

fn random_model(rng: &mut ChaCha8Rng) -> PartitionModel {
    let degree = rng.random_range(0..4);
    let cells = rng.random_range(1..17);
    if rng.random_bool(0.5) {
        return PartitionModel::regular(cells, degree).unwrap();
    }
    let mut inner: Vec<f64> = (0..cells - 1)
        .map(|_| rng.random_range(0.01..0.99))
        .collect();
    inner.sort_by(f64::total_cmp);
    inner.dedup_by(|a, b| (*a - *b).abs() < 1e-3);
    let mut breakpoints = vec![0.0];
    breakpoints.extend(inner);
    breakpoints.push(1.0);
    PartitionModel::new(breakpoints, degree).unwrap()
}

fn criterion_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut worst_decomp, mut worst_pyth, mut min_p) = (0.0f64, 0.0f64, f64::INFINITY);
    for _ in 0..1000 {
        let truth = random_truth(&mut rng);
        let model = random_model(&mut rng);
        let n = rng.random_range(model.dimension().max(10)..400);
        let sample = generate_sample(&truth, n, rng.random()).unwrap();
        let rb = risk_breakdown(&model, &sample, &truth).unwrap();
        let scale = [
            rb.excess_risk,
            rb.empirical_risk,
            rb.empirical_risk_truth,
            rb.p1,
            rb.p2,
            rb.delta_bar,
        ]
        .iter()
        .fold(f64::MIN_POSITIVE, |m, v| m.max(v.abs()));
        worst_decomp = worst_decomp.max(rb.decomposition_residual().abs() / scale);
        worst_pyth =
            worst_pyth.max(rb.pythagorean_residual().abs() / rb.excess_risk.max(f64::MIN_POSITIVE));
        min_p = min_p.min(rb.p1.min(rb.p2));
    }
    Outcome::new(
        worst_decomp <= 1e-9 && worst_pyth <= 1e-9 && min_p >= -1e-12,
        format!("max decomposition {worst_decomp:.2e}, max pythagorean {worst_pyth:.2e}, min(p1,p2) {min_p:.2e}"),
    )
}

// ---------------------------------------------------------------------------
// 2. exact recovery

fn criterion_exact_recovery() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut worst_risk, mut worst_sup) = (0.0f64, 0.0f64);
    for degree in 0..=3usize {
        for cells in [1usize, 2, 3, 4, 7, 8, 16, 32] {
            let coefficients: Vec<f64> =
                (0..=degree).map(|_| rng.random_range(-2.0..2.0)).collect();
            let truth = RegressionSpec::simple(
                RegressionFunction::Polynomial { coefficients },
                NoiseLevel::Constant { value: 1.0 },
            )
            .unwrap();
            let model = PartitionModel::regular(cells, degree).unwrap();
            let n = 8 * model.dimension();
            let pts: Vec<(f64, f64)> = (0..n)
                .map(|_| {
                    let x: f64 = rng.random();
                    (x, truth.s_star(x))
                })
                .collect();
            let sample = Sample::from_pairs(&pts).unwrap();
            let fit = fit_least_squares(&model, &sample).unwrap();
            let proj = project_l2(&model, &truth).unwrap();
            worst_risk = worst_risk.max(empirical_risk(&fit, &sample).unwrap());
            worst_sup = worst_sup.max(sup_distance(&fit, &proj).unwrap());
        }
    }
    Outcome::new(
        worst_risk <= 1e-18 && worst_sup <= 1e-9,
        format!("max empirical risk {worst_risk:.2e}, max sup_dev {worst_sup:.2e}"),
    )
}

// ---------------------------------------------------------------------------
// 3. closed-form risks

fn criterion_closed_form() -> Outcome {
    let identity = RegressionSpec::simple(
        RegressionFunction::Polynomial {
            coefficients: vec![0.0, 1.0],
        },
        NoiseLevel::Constant { value: 1.0 },
    )
    .unwrap();
    let proj = project_l2(&PartitionModel::regular(2, 0).unwrap(), &identity).unwrap();
    let bias_err = (true_excess_risk(&proj, &identity) - 1.0 / 48.0).abs();
    let sine = RegressionSpec::simple(
        RegressionFunction::Sine {
            amplitude: 1.0,
            frequency: 1.0,
            phase: 0.0,
        },
        NoiseLevel::Constant { value: 1.0 },
    )
    .unwrap();
    let flat = project_l2(&PartitionModel::regular(1, 0).unwrap(), &sine).unwrap();
    let sine_err = flat.evaluate(0.5).unwrap().abs();
    Outcome::new(
        bias_err <= 1e-10 && sine_err <= 1e-8,
        format!("|bias - 1/48| {bias_err:.2e}, |s_M| for sine {sine_err:.2e}"),
    )
}

// ---------------------------------------------------------------------------
// 4-5. minimal-penalty scale and p1/p2 equivalence

fn homoscedastic_estimate() -> &'static MinPenaltyEstimate {
    static EST: OnceLock<MinPenaltyEstimate> = OnceLock::new();
    EST.get_or_init(|| {
        let truth = RegressionSpec::simple(
            RegressionFunction::Polynomial {
                coefficients: vec![0.0],
            },
            NoiseLevel::Constant { value: 0.5 },
        )
        .unwrap();
        let c = build_regular_collection(1000, &[0], 6).unwrap();
        estimate_min_penalty(&truth, &c, 1000, 500, 4).unwrap()
    })
}

fn criterion_min_penalty_scale() -> Outcome {
    let est = homoscedastic_estimate();
    let mut worst_z = 0.0f64;
    for (i, &d) in est.dimensions.iter().enumerate() {
        let target = 0.25 * d as f64 / 1000.0;
        worst_z = worst_z.max((est.mean_p2[i] - target).abs() / est.se_p2[i]);
    }
    Outcome::new(worst_z <= 3.0, format!("max |z| {worst_z:.2} over D <= 64"))
}

fn criterion_p1_p2() -> Outcome {
    let est = homoscedastic_estimate();
    let mut worst = 0.0f64;
    for (i, &d) in est.dimensions.iter().enumerate() {
        if (10..=64).contains(&d) {
            worst = worst.max((est.mean_p1[i] - est.mean_p2[i]).abs() / est.mean_p2[i]);
        }
    }
    Outcome::new(
        worst <= 0.2,
        format!("max |p1 - p2| / p2 {worst:.3} over 10 <= D <= 64"),
    )
}

// ---------------------------------------------------------------------------
// 6-8. theorem experiments and calibration

fn sine_experiment() -> &'static Experiment {
    static EXP: OnceLock<Experiment> = OnceLock::new();
    EXP.get_or_init(|| {
        let truth = RegressionSpec::simple(
            RegressionFunction::Sine {
                amplitude: 1.0,
                frequency: 1.0,
                phase: 0.0,
            },
            NoiseLevel::Constant { value: 0.3 },
        )
        .unwrap();
        let c = build_regular_collection(2000, &[0], 8).unwrap();
        let settings = ExperimentSettings {
            n: 2000,
            replicates: 100,
            seed: 6,
            minpen_replicates: 500,
            blowup_threshold: Some(64),
            ..Default::default()
        };
        let exp = Experiment::new(truth, c, settings).unwrap();
        exp.min_penalty().unwrap();
        exp
    })
}

fn criterion_theorem1() -> Outcome {
    let report = sine_experiment().theorem1(0.5).unwrap();
    let t = report.theorem1.unwrap();
    Outcome::new(
        t.fraction_above_threshold >= 0.9 && t.median_ratio >= 3.0,
        format!(
            "fraction D >= 64: {:.2}, median ratio {:.2}, median D {}",
            t.fraction_above_threshold, t.median_ratio, t.median_dimension
        ),
    )
}

fn criterion_theorem2() -> Outcome {
    let report = sine_experiment().theorem2(2.0).unwrap();
    let t = report.theorem2.unwrap();
    Outcome::new(
        t.median_ratio <= 1.5 && t.q90_ratio <= 2.5 && (4.0..=64.0).contains(&t.median_dimension),
        format!(
            "median ratio {:.3}, q90 ratio {:.3}, median D {}",
            t.median_ratio, t.q90_ratio, t.median_dimension
        ),
    )
}

fn criterion_calibration() -> Outcome {
    let exp = sine_experiment();
    let shape = exp.shape(ShapeKind::OracleMeanP2).unwrap();
    let report: ExperimentReport = exp
        .run_with_shape(ExperimentKind::Calibration, &shape, &[0.9, 1.1, 2.0], true)
        .unwrap();
    let dim = |label: &str| report.regime(label).unwrap().median_dimension;
    let jump = dim("x0.9") / dim("x1.1");
    let cal = report.calibration.as_ref().unwrap();
    let fixed = report.regime("x2").unwrap().median_ratio;
    let calibrated = report
        .regime(minpen_core::sim::CALIBRATED)
        .unwrap()
        .median_ratio;
    let rel = (calibrated / fixed - 1.0).abs();
    Outcome::new(
        jump >= 2.0 && (0.5..=1.5).contains(&cal.median_a_min) && rel <= 0.1,
        format!(
            "median D {} -> {} (factor {jump:.2}), median A_min {:.3}, calibrated ratio {calibrated:.3} vs fixed {fixed:.3} ({:.1}%), no-jump {}",
            dim("x0.9"),
            dim("x1.1"),
            cal.median_a_min,
            100.0 * rel,
            cal.no_jump_count
        ),
    )
}

// ---------------------------------------------------------------------------
// 9. jump detector against an exhaustive scan

fn scan_max_jump(dims: &[usize]) -> Option<usize> {
    let drops: Vec<i64> = dims.windows(2).map(|w| w[0] as i64 - w[1] as i64).collect();
    let best = *drops.iter().max()?;
    if best <= 0 {
        return None;
    }
    drops.iter().position(|&d| d == best).map(|i| i + 1)
}

fn criterion_jump_detector() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut mismatches = 0usize;
    for trial in 0..10_000 {
        let len = rng.random_range(2..60);
        let mut dims: Vec<usize> = (0..len).map(|_| 1usize << rng.random_range(0..9)).collect();
        if trial % 2 == 0 {
            dims.sort_unstable_by(|a, b| b.cmp(a));
        }
        let grid: Vec<f64> = (0..len).map(|i| 0.01 * (i + 1) as f64).collect();
        let path = SelectionPath {
            criterion_min: vec![0.0; len],
            criterion_values: vec![vec![0.0]; len],
            selected_index: vec![0; len],
            selected_dimension: dims.clone(),
            grid: grid.clone(),
            sample_size: 1000,
        };
        let got = match detect_jump(&path, JumpMethod::MaxJump, None) {
            Ok(r) => Some((r.jump_index, r.a_min_hat, r.jump_from_dim, r.jump_to_dim)),
            Err(Error::NoJump) => None,
            Err(e) => panic!("unexpected error {e}"),
        };
        let want = scan_max_jump(&dims).map(|j| (j, grid[j], dims[j - 1], dims[j]));
        if got != want {
            mismatches += 1;
        }
    }
    Outcome::new(
        mismatches == 0,
        format!("{mismatches} mismatches in 10000 paths"),
    )
}

// ---------------------------------------------------------------------------
// 10. determinism across thread counts

const DETERMINISM_CONFIG: &str = r#"{
  "truth": {
    "regression": {"kind": "holder_cusp", "alpha": 0.5, "center": 0.4},
    "noise_level": {"kind": "affine", "intercept": 0.2, "slope": 0.4},
    "design": {"kind": "linear", "slope": 0.5},
    "noise": {"kind": "truncated_gaussian", "cutoff": 3.0}
  },
  "collection": {"degrees": [0, 1], "dyadic_max": 6},
  "n": 500,
  "replicates": 24,
  "seed": 77,
  "minpen_replicates": 60,
  "penalty": {"kind": "calibration", "shape": "oracle_mean_p2"},
  "check_assumptions": true
}"#;

fn run_cli(args: &[&str], config: &Path, out: &Path, threads: usize) -> Result<(), String> {
    let status = Command::new(env!("CARGO_BIN_EXE_minpen"))
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .arg("--threads")
        .arg(threads.to_string())
        .output()
        .map_err(|e| e.to_string())?;
    if status.status.success() {
        Ok(())
    } else {
        Err(String::from_utf8_lossy(&status.stderr).into_owned())
    }
}

fn criterion_determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.json");
    std::fs::write(&config, DETERMINISM_CONFIG).unwrap();
    let mut compared = 0usize;
    let mut differing = Vec::new();
    for command in [
        &["run"][..],
        &["theorem1"],
        &["theorem2"],
        &["minpen"],
        &["path"],
    ] {
        let outs: Vec<_> = [1usize, 2, 4]
            .iter()
            .map(|&t| {
                let out = dir.path().join(format!("{}-{t}", command[0]));
                run_cli(command, &config, &out, t).map(|_| out)
            })
            .collect();
        let outs: Vec<_> = match outs.into_iter().collect::<Result<Vec<_>, _>>() {
            Ok(o) => o,
            Err(e) => return Outcome::new(false, format!("{} failed: {e}", command[0])),
        };
        let mut names: Vec<_> = std::fs::read_dir(&outs[0])
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .collect();
        names.sort();
        for name in names {
            let reference = std::fs::read(outs[0].join(&name)).unwrap();
            for other in &outs[1..] {
                compared += 1;
                if std::fs::read(other.join(&name)).ok().as_deref() != Some(&reference[..]) {
                    differing.push(format!("{}/{}", command[0], name.to_string_lossy()));
                }
            }
        }
    }
    Outcome::new(
        differing.is_empty() && compared > 0,
        format!("{compared} file comparisons across --threads 1/2/4, differing: {differing:?}"),
    )
}

type Criterion = (u32, &'static str, Duration, fn() -> Outcome);

fn main() {
    let minute = Duration::from_secs(60);
    let criteria: Vec<Criterion> = vec![
        (1, "algebraic identities", minute, criterion_identities),
        (2, "exact recovery", minute, criterion_exact_recovery),
        (3, "closed-form risk values", minute, criterion_closed_form),
        (
            4,
            "minimal-penalty scale",
            5 * minute,
            criterion_min_penalty_scale,
        ),
        (5, "p1/p2 equivalence", 5 * minute, criterion_p1_p2),
        (
            6,
            "blow-up under half the minimal penalty",
            10 * minute,
            criterion_theorem1,
        ),
        (
            7,
            "near-optimality at twice the minimal penalty",
            10 * minute,
            criterion_theorem2,
        ),
        (
            8,
            "dimension jump and calibration",
            10 * minute,
            criterion_calibration,
        ),
        (
            9,
            "jump detector against exhaustive scan",
            minute,
            criterion_jump_detector,
        ),
        (
            10,
            "determinism across thread counts",
            10 * minute,
            criterion_determinism,
        ),
    ];
    let mut failed = Vec::new();
    for (id, name, budget, run) in criteria {
        let start = Instant::now();
        let outcome = match catch_unwind(AssertUnwindSafe(run)) {
            Ok(o) => within_budget(o, start.elapsed(), budget),
            Err(_) => Outcome::new(false, "panicked"),
        };
        let verdict = if outcome.pass { "PASS" } else { "FAIL" };
        println!("criterion {id:>2} {verdict}  {name}: {}", outcome.detail);
        if !outcome.pass {
            failed.push(id);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all 10 criteria passed");
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
