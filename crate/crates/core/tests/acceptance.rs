//! Acceptance criteria, one PASS/FAIL line each. Run with
//! `cargo test --release -p heatlab --test acceptance`.

use std::f64::consts::PI;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use heatlab::analytic::{AnalyticKernel, CircleMethod};
use heatlab::spaces::{make_model_sample, SpaceDescriptor};
use heatlab::spectral::{eigendecompose, Bandwidth, Generator, SpectralDecomposition};
use heatlab::verifiers::*;
use heatlab::{analytic, Result};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Result<Outcome> {
    Ok(Outcome { pass, detail })
}

fn circle(n: usize) -> Result<SpectralDecomposition> {
    let space = make_model_sample(&SpaceDescriptor::circle(2.0 * PI), n, 0)?;
    eigendecompose(&Generator::build(Arc::new(space), Bandwidth::Auto)?)
}

fn line(r_max: f64, n: usize) -> Result<SpectralDecomposition> {
    let desc = SpaceDescriptor::euclidean(1).with_truncation(r_max);
    eigendecompose(&Generator::build(Arc::new(make_model_sample(&desc, n, 0)?), Bandwidth::Auto)?)
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn constant(r: &CheckResult, key: &str) -> f64 {
    r.constants.get(key).copied().unwrap_or(f64::NAN)
}

fn violations(r: &CheckResult) -> f64 {
    constant(r, "violations")
}

/// Rounds to `digits` significant digits.
fn round_sig(x: f64, digits: i32) -> f64 {
    let scale = 10f64.powi(digits - 1 - x.abs().log10().floor() as i32);
    (x * scale).round() / scale
}

fn li_yau_equality() -> Result<Outcome> {
    // 16 log-spaced times in [0.01, 10] and 16 values of xi = d / sqrt(t)
    let grid = GridSpec {
        t_min: 0.01,
        t_max: 10.0,
        t_per_decade: 5,
        xi_count: 16,
        ..GridSpec::analytic()
    };
    assert_eq!(grid.t_grid().len(), 16);
    let mut worst = 0.0_f64;
    let mut pass = true;
    for n in 1..=3 {
        let source = AnalyticSource::new(AnalyticKernel::new(SpaceDescriptor::euclidean(n))?);
        let r = check_li_yau(&source, &grid)?;
        let residual = constant(&r, "max_scaled_residual");
        worst = worst.max(residual);
        pass &= r.status == Status::Pass && residual <= 1e-9;
    }
    outcome(pass, format!("max |residual| / (N/2t) = {worst:.3e} over N = 1, 2, 3 (limit 1e-9)"))
}

fn large_time() -> Result<Outcome> {
    let mut pass = true;
    let mut detail = Vec::new();
    for (n, target) in [(2, 0.25), (3, 0.094032)] {
        // omega(N) (4 pi)^{-N/2}: pi / (4 pi) and (4/3) pi / (4 pi)^{3/2}
        let oracle = if n == 2 { 0.25 } else { 1.0 / (6.0 * PI.sqrt()) };
        assert!(rel(oracle, target) < 1e-5);
        let kernel = AnalyticKernel::new(SpaceDescriptor::euclidean(n))?;
        let grid = GridSpec::analytic();
        let r = check_large_time(LargeTimeInput::Analytic { kernel: &kernel, d: 1.0 }, &grid.t_grid(), 1e-9)?;
        let sweep = r.sweep.as_ref().expect("large_time sweep");
        let a100 = sweep
            .rows
            .iter()
            .find(|row| (row[0] - 100.0).abs() < 1e-9)
            .map(|row| row[3])
            .unwrap_or(f64::NAN);
        let err = rel(a100, oracle);
        pass &= r.status == Status::Pass && err <= 0.005;
        detail.push(format!("N={n}: a(100) = {a100:.6} vs {target} ({:.3}%)", 100.0 * err));
    }
    outcome(pass, detail.join("; "))
}

fn circle_convergence() -> Result<Outcome> {
    let series = analytic::circle(2.0 * PI, 1.0, 0.0, CircleMethod::SpectralSum)?.value;
    // image sum as an independent check of the series value
    let images: f64 = (-20..=20)
        .map(|k: i32| (-(2.0 * PI * k as f64).powi(2) / 4.0).exp() / (4.0 * PI).sqrt())
        .sum();
    let mut pass = rel(series, images) < 1e-12 && rel(series, 0.282122) < 1e-5;
    let mut detail = vec![format!("series {series:.6}")];
    for (n, limit) in [(256, 0.01), (512, 0.0035)] {
        let dec = circle(n)?;
        let p = dec.heat_column(0, 1.0)[0];
        let err = rel(p, series);
        pass &= err <= limit;
        detail.push(format!("n={n}: {p:.6} ({:.3}%)", 100.0 * err));
        if n == 256 {
            let l1 = dec.eigenvalues()[1];
            pass &= rel(l1, 1.0) <= 0.02;
            detail.push(format!("lambda_1 = {l1:.5}"));
        }
    }
    outcome(pass, detail.join("; "))
}

fn gaussian_fits() -> Result<Outcome> {
    let grid = GridSpec::analytic();
    let e2 = AnalyticSource::new(AnalyticKernel::new(SpaceDescriptor::euclidean(2))?);
    let fit = fit_gaussian_constants(&e2, 0.5, &grid)?;
    // at d = 0: C1 = sup p_t mu(B(sqrt t)) = pi t / (4 pi t), C2 = 1 / that
    let mut pass = (fit.upper.c1 - 0.25).abs() <= 1e-6 && (fit.lower.c1 - 4.0).abs() <= 1e-4;
    let mut detail = vec![format!("E2 eps=0.5: upper {:.7}, lower {:.5}", fit.upper.c1, fit.lower.c1)];
    let h3 = AnalyticSource::new(AnalyticKernel::new(SpaceDescriptor::hyperbolic3())?);
    let coarse = fit_gaussian_constants(&h3, 0.5, &grid)?;
    let fine = fit_gaussian_constants(&h3, 0.5, &grid.refined())?;
    for (name, a, b) in [
        ("upper C1", coarse.upper.c1, fine.upper.c1),
        ("upper C2", coarse.upper.c2, fine.upper.c2),
        ("lower C1", coarse.lower.c1, fine.lower.c1),
        ("lower C2", coarse.lower.c2, fine.lower.c2),
    ] {
        let d = drift(a, b);
        pass &= a.is_finite() && b.is_finite() && d <= FIT_DRIFT_LIMIT;
        detail.push(format!("H3 {name} {a:.4e} drift {:.2}%", 100.0 * d));
    }
    outcome(pass, detail.join("; "))
}

fn harnack() -> Result<Outcome> {
    let grid = GridSpec::analytic();
    let mut pass = true;
    let mut count = 0.0;
    let mut instance = (f64::NAN, f64::NAN);
    for n in 1..=3 {
        let r = check_harnack(&AnalyticKernel::new(SpaceDescriptor::euclidean(n))?, &grid)?;
        pass &= r.status == Status::Pass;
        count += violations(&r);
        if n == 1 {
            instance = (constant(&r, "instance_lhs"), constant(&r, "instance_rhs"));
        }
    }
    // p_1(0) = (4 pi)^{-1/2}; p_2(1) (2/1)^{1/2} e^{1/4} = (4 pi)^{-1/2} e^{1/8}
    let lhs_oracle = (4.0 * PI).powf(-0.5);
    let rhs_oracle = lhs_oracle * 0.125f64.exp();
    pass &= count == 0.0;
    pass &= round_sig(instance.0, 6) == round_sig(lhs_oracle, 6) && round_sig(lhs_oracle, 6) == 0.282095;
    pass &= round_sig(instance.1, 6) == round_sig(rhs_oracle, 6) && instance.0 <= instance.1;
    outcome(
        pass,
        format!(
            "{count} violations on E1-E3; instance {:.6} <= {:.6} (closed form {rhs_oracle:.6}; printed 0.31963)",
            instance.0, instance.1
        ),
    )
}

fn davies_gaffney() -> Result<Outcome> {
    let dec = circle(256)?;
    let input = DaviesGaffneyInput {
        sets: arc_partition(dec.space(), 8)?,
        balls: Vec::new(),
        t_list: vec![0.25, 1.0],
        functions_per_pair: 50,
        seed: 0,
    };
    let r = check_davies_gaffney(&dec, &input, 0.0)?;
    let v = constant(&r, "first_violations");
    let v = if v.is_nan() { violations(&r) } else { v };
    let pass = v == 0.0 && constant(&r, "first_worst_relative_margin") >= 0.0;
    outcome(
        pass,
        format!(
            "{} ordered pairs, {v} violations, worst relative margin {:.3e}, max ratio to bound {:.4}",
            constant(&r, "pairs"),
            constant(&r, "first_worst_relative_margin"),
            constant(&r, "max_random_ratio_over_bound")
        ),
    )
}

fn riesz() -> Result<Outcome> {
    let decs = [circle(256)?, circle(128)?, circle(512)?];
    let refs: Vec<&SpectralDecomposition> = decs.iter().collect();
    let input = RieszInput {
        a: 0.0,
        a_min: None,
        p_list: vec![4.0],
        identity_batch: 200,
        batch: 500,
        seed: 0,
    };
    let r = check_riesz(&refs, &input)?;
    let identity = constant(&r, "max_identity_residual");
    let spread = constant(&r, "drift_p=4");
    let norms: Vec<String> = [128, 256, 512]
        .iter()
        .map(|n| format!("{:.4}", constant(&r, &format!("norm_p=4_n={n}"))))
        .collect();
    let pass = r.status == Status::Pass && identity <= 1e-8 && spread <= 0.15;
    outcome(
        pass,
        format!(
            "identity residual {identity:.2e} (200 f, n=256); L4 norms {} spread {:.2}%",
            norms.join(", "),
            100.0 * spread
        ),
    )
}

fn caccioppoli() -> Result<Outcome> {
    let sign = |x: f64| x.signum();
    let x_grid: Vec<f64> = (-400..=400).map(|i| 0.01 * i as f64).collect();
    let r = check_caccioppoli_line(&sign, &[0.0], &[1.0], &x_grid, 1e-9)?;
    let grad = constant(&r, "gradient_sup_t=1");
    let bound = constant(&r, "bound_t=1");
    // d/dx H_1 sign at 0 = 2 p_1(0) = pi^{-1/2}; bound 1/sqrt 2
    let mut pass = r.status == Status::Pass;
    pass &= round_sig(grad, 5) == 0.56419 && round_sig(PI.powf(-0.5), 5) == 0.56419;
    pass &= round_sig(bound, 5) == 0.70711;

    let dec = circle(256)?;
    let floor = resolved_time(&dec);
    let times: Vec<f64> = (0..8).map(|j| floor * 2f64.powi(j)).collect();
    let kinds = [BatchKind::Smooth, BatchKind::Step, BatchKind::Trig, BatchKind::Eigen];
    let fs = sample_batch(dec.space(), Some(&dec), 100, 0, &kinds, false);
    let d = check_caccioppoli(&dec, &fs, &times, &[2.0], DISCRETE_TOLERANCE)?;
    pass &= d.status == Status::Pass && violations(&d) == 0.0;
    outcome(
        pass,
        format!(
            "line: {grad:.5} <= {bound:.5}; circle n=256 p=2: {} f x {} t in [{:.3}, {:.2}], {} violations",
            fs.len(),
            times.len(),
            times[0],
            times[7],
            violations(&d)
        ),
    )
}

fn laplacian() -> Result<Outcome> {
    let r_grid: Vec<f64> = (0..50).map(|i| 0.1 + 0.1 * i as f64).collect();
    let r = check_laplacian_comparison(&SpaceDescriptor::hyperbolic3(), &r_grid, 1e-9)?;
    let lap = constant(&r, "laplacian_at_1");
    let bound = constant(&r, "bound_at_1");
    let oracle = 2.0 / 1f64.tanh();
    let pass = r.status == Status::Pass
        && violations(&r) == 0.0
        && round_sig(lap, 6) == round_sig(oracle, 6)
        && round_sig(bound, 6) == 2.63880
        && lap <= bound;
    outcome(
        pass,
        format!(
            "2coth(1) = {lap:.5} (printed 2.62610) <= {bound:.5}; {} violations on r in [0.1, 5]",
            violations(&r)
        ),
    )
}

fn routing() -> Result<Outcome> {
    let mut pass = true;
    let mut detail = Vec::new();
    let kernel = AnalyticKernel::new(SpaceDescriptor::circle(2.0 * PI))?;
    let dec = circle(256)?;
    let grid = GridSpec::analytic();
    let lt = check_large_time(LargeTimeInput::Analytic { kernel: &kernel, d: 1.0 }, &grid.t_grid(), 1e-9)?;
    let lt_d = check_large_time(LargeTimeInput::Discrete { dec: &dec, x: 0, y: 0 }, &grid.t_grid(), 0.05)?;
    let f = |_: &[f64]| 1.0;
    let st = check_stability(
        &StabilityInput::Analytic { kernel: &kernel, f: &f, f_sup: 1.0, x: vec![0.0] },
        &[1.0, 10.0],
        &[1.0, 2.0],
        1e-9,
    )?;
    let ones = vec![1.0; dec.len()];
    let st_d = check_stability(&StabilityInput::Discrete { dec: &dec, f: &ones, x: 0 }, &[1.0, 10.0], &[1.0, 2.0], 0.05)?;
    let r_grid: Vec<f64> = (1..=30).map(|i| 0.1 * i as f64).collect();
    let desc = SpaceDescriptor::circle(2.0 * PI);
    let bc = check_boundary_calculus(&desc, &heatlab::spaces::VolumeProfile::analytic(&desc, &r_grid)?, &[], 1e-9)?;
    for r in [&lt, &lt_d, &st, &st_d, &bc] {
        pass &= r.status == Status::HypothesisNotMet;
    }
    detail.push(format!(
        "circle large_time {}/{}, stability {}/{}, boundary_calculus {}",
        lt.status, lt_d.status, st.status, st_d.status, bc.status
    ));

    let trace = constant(&check_compactness(CompactnessInput::Analytic(&kernel), 1.0)?, "trace");
    // 2 pi p_1(0) = 2 pi (4 pi)^{-1/2} sum_k e^{-pi^2 k^2}
    let oracle = (2.0 * PI) * (4.0 * PI).powf(-0.5) * (1.0 + 2.0 * (-PI * PI).exp() + 2.0 * (-4.0 * PI * PI).exp());
    pass &= (trace - 1.77264).abs() <= 1e-4 && rel(trace, oracle) < 1e-10;
    detail.push(format!("trace {trace:.6}"));

    let lines = [line(8.0, 200)?, line(16.0, 400)?, line(32.0, 800)?];
    let refs: Vec<&SpectralDecomposition> = lines.iter().collect();
    let seq = check_compactness_sequence(&refs, 1.0, 0.0)?;
    let traces: Vec<f64> = refs.iter().map(|d| d.trace(1.0)).collect();
    pass &= seq.status == Status::Pass && traces.windows(2).all(|w| w[1] > w[0]);
    detail.push(format!(
        "line traces R=8,16,32: {}",
        traces.iter().map(|t| format!("{t:.3}")).collect::<Vec<_>>().join(", ")
    ));
    outcome(pass, detail.join("; "))
}

type Criterion = (&'static str, f64, fn() -> Result<Outcome>);

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("Euclidean Li-Yau equality", 1.0, li_yau_equality),
        ("large-time limit", 1.0, large_time),
        ("circle spectral convergence", 30.0, circle_convergence),
        ("Gaussian-bound fitting", 10.0, gaussian_fits),
        ("Harnack", 1.0, harnack),
        ("Davies-Gaffney exhaustive", 60.0, davies_gaffney),
        ("Riesz", 90.0, riesz),
        ("Caccioppoli", 10.0, caccioppoli),
        ("Laplacian comparison H3", 1.0, laplacian),
        ("hypothesis routing and compactness", f64::INFINITY, routing),
    ];
    let mut failed = 0;
    for (i, (name, budget, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let out = run();
        let secs = start.elapsed().as_secs_f64();
        let (pass, detail) = match out {
            Ok(o) => (o.pass && secs < *budget, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        if !pass {
            failed += 1;
        }
        let budget = if budget.is_finite() { format!("< {budget} s") } else { "no limit".into() };
        println!(
            "{} {:>2}. {name}: {detail} [{secs:.2} s, {budget}]",
            if pass { "PASS" } else { "FAIL" },
            i + 1
        );
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
