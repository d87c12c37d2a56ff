//! Acceptance checks, one PASS/FAIL line per criterion.
//!
//! Every tolerance is pinned below. A failing criterion is reported, not
//! hidden: the process exits with status 0 so the rest of the test suite
//! still runs, unless `ACCEPTANCE_STRICT` is set, in which case any FAIL
//! makes it exit with status 1.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use oed_core::confidence;
use oed_core::design::{self, Criterion, DesignObjective};
use oed_core::estimators::{self, EstimatorKind, InfoKind, InfoMatrix};
use oed_core::features::{Domain, FeatureMap, PriorOperator};
use oed_core::functionals::{self, LinearFunctional};
use oed_core::linalg;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rkhs_oed::config::SetKind;
use rkhs_oed::contamination::DesignKind;
use rkhs_oed::ellipse::{CircleDesign, IntervalSet};
use rkhs_oed::lyapunov::{SetKind as LyapunovSet, Strategy};
use rkhs_oed::pharma::PharmaDesignKind;
use rkhs_oed::{contamination, coverage, ellipse, gradient, lyapunov, pharma, ScenarioConfig, ScenarioKind};

const ALLOCATION_TARGET: [f64; 5] = [0.37, 0.09, 0.08, 0.09, 0.38];
const ALLOCATION_TOL: f64 = 0.03;
const ALLOCATION_SECONDS: f64 = 60.0;
const EXACT_TOL: f64 = 1e-12;
const COVERAGE_SLACK: f64 = 0.02;
const COVERAGE_SECONDS: f64 = 180.0;
const COVERAGE_DELTA: f64 = 0.1;
const EIG_TOL: f64 = 1e-8;
const ORDERING_INSTANCES: usize = 100;
const LOWNER_INSTANCES: usize = 200;
const BALANCE_TOL: f64 = 0.5;
const CONTAMINATION_MIN_SEEDS: usize = 50;
const PHARMA_MIN_SEEDS: usize = 20;
const PHARMA_RECOVERY_TOL: f64 = 1e-3;
const LYAPUNOV_MIN_SEEDS: usize = 10;
const ORACLE_REL_TOL: f64 = 0.02;
const ORACLE_RESOLUTION: usize = 200;
const MONOTONE_TOL: f64 = 1e-9;

struct Report {
    results: Vec<(usize, bool)>,
}

impl Report {
    fn record(&mut self, id: usize, name: &str, outcome: Result<(bool, String), String>) {
        let (ok, detail) = outcome.unwrap_or_else(|e| (false, format!("error: {e}")));
        println!("{} {id:>2} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
        self.results.push((id, ok));
    }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn gradient_allocation() -> Result<(bool, String), String> {
    let start = Instant::now();
    let cfg = ScenarioConfig::defaults(ScenarioKind::Gradient);
    let out = gradient::run(&cfg).map_err(err)?;
    let secs = start.elapsed().as_secs_f64();
    let eta: Vec<f64> = out.design.iter().map(|r| r.eta).collect();
    let interior: Vec<f64> = out.design.iter().map(|r| r.eta_interior).collect();
    let worst = eta.iter().zip(ALLOCATION_TARGET).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let ok = worst <= ALLOCATION_TOL && secs < ALLOCATION_SECONDS;
    Ok((ok, format!("eta {eta:.3?} (interior ascent {interior:.3?}), max deviation {worst:.3} vs {ALLOCATION_TOL}, {secs:.1}s")))
}

fn xi_exactness() -> Result<(bool, String), String> {
    let mut worst: f64 = 0.0;
    for &delta in &[0.01, 0.05, 0.1, 0.3, 0.5] {
        for &p in &[1usize, 2, 5, 10] {
            let expect = p as f64 + 2.0 * (p as f64 * (1.0 / delta as f64).ln()).sqrt();
            let xi = confidence::xi(delta, p).map_err(err)?;
            worst = worst.max((xi - expect).abs());

            let w = InfoMatrix { matrix: DMatrix::identity(p, p), kind: InfoKind::RidgeLambda };
            let ridge = confidence::fixed_ridge_ellipsoid(DVector::zeros(p), &w, delta).map_err(err)?;
            worst = worst.max((ridge.radius - (expect.sqrt() + 1.0)).abs());

            let (sigma, nu, lam) = (0.3, 0.02, 4.0);
            let w = InfoMatrix { matrix: DMatrix::identity(p, p), kind: InfoKind::InterpDagger };
            let interp = confidence::fixed_interp_ellipsoid(DVector::zeros(p), &w, nu, lam, sigma, 1, delta).map_err(err)?;
            worst = worst.max((interp.radius - (sigma * expect.sqrt() + nu / lam.sqrt())).abs());
        }
    }
    Ok((worst <= EXACT_TOL, format!("20-point grid, max abs difference {worst:.2e}")))
}

fn coverage_check() -> Result<(bool, String), String> {
    let mut cfg = ScenarioConfig::defaults(ScenarioKind::Coverage);
    cfg.delta = COVERAGE_DELTA;
    let mut ok = true;
    let mut parts = Vec::new();
    for kind in [SetKind::FixedInterp, SetKind::FixedRidge, SetKind::Adaptive] {
        let mut c = cfg.clone();
        c.coverage.as_mut().expect("coverage block").kinds = vec![kind];
        let start = Instant::now();
        let out = coverage::run(&c).map_err(err)?;
        let secs = start.elapsed().as_secs_f64();
        let s = &out.summary[0];
        let pass = s.coverage >= 1.0 - COVERAGE_DELTA - COVERAGE_SLACK && s.replicas >= 1000 && secs < COVERAGE_SECONDS;
        ok &= pass;
        parts.push(format!("{kind:?} {:.3} over {} ({secs:.1}s)", s.coverage, s.replicas));
    }
    Ok((ok, format!("{} vs {:.2}", parts.join(", "), 1.0 - COVERAGE_DELTA - COVERAGE_SLACK)))
}

fn rand_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
}

fn rand_functional(rng: &mut ChaCha8Rng, p: usize, m: usize) -> LinearFunctional {
    loop {
        if let Ok(c) = LinearFunctional::new(rand_matrix(rng, p, m), "random") {
            return c;
        }
    }
}

fn information_ordering() -> Result<(bool, String), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = f64::INFINITY;
    for _ in 0..ORDERING_INSTANCES {
        let m = rng.random_range(2..=12);
        let p = rng.random_range(1..=4usize.min(m));
        let n = rng.random_range(1..=30);
        let x = rand_matrix(&mut rng, n, m);
        let c = rand_functional(&mut rng, p, m);
        let v0 = PriorOperator::identity(m);
        let (lam, sigma) = (rng.random_range(0.1..2.0), rng.random_range(0.1..2.0));
        let w = estimators::info_matrix_ridge(&x, &c, &v0, lam, sigma).map_err(err)?;
        let om = estimators::info_matrix_adaptive(&functionals::project_data(&x, &c, &v0).map_err(err)?, lam, sigma);
        worst = worst.min(linalg::min_eig(&(&om.matrix - &w.matrix)));
    }
    Ok((worst >= -EIG_TOL, format!("min eigenvalue of Omega - W over {ORDERING_INSTANCES} instances {worst:.3e}")))
}

fn geometry_bound() -> Result<(bool, String), String> {
    let hs: Vec<f64> = (0..9).map(|i| 1e-3 * 100f64.powf(i as f64 / 8.0)).collect();
    let mut ok = true;
    let mut parts = Vec::new();
    for (d, m) in [(1usize, 128usize), (2, 256)] {
        let map = FeatureMap::qff_squared_exponential(0.1, m, Domain::cube(d, -1.0, 1.0).map_err(err)?).map_err(err)?;
        let t = design::gradient_design_geometry_check(&map, &vec![0.0; d], &hs).map_err(err)?;
        ok &= t.all_hold;
        let tight = t.rows.iter().map(|r| r.value / r.bound).fold(0.0, f64::max);
        parts.push(format!("d={d}: c={:.3e}, max value/bound {tight:.3}", t.c_fit));
    }
    Ok((ok, parts.join("; ")))
}

fn loewner_inequality() -> Result<(bool, String), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut tall, mut tall_fail, mut wide, mut wide_fail) = (0, 0, 0, 0);
    let mut worst = f64::INFINITY;
    let mut done = 0;
    while done < LOWNER_INSTANCES {
        let m = rng.random_range(2..=8);
        let p = rng.random_range(1..=3usize.min(m));
        let n = rng.random_range(p..=12);
        let x = rand_matrix(&mut rng, n, m);
        let c = rand_matrix(&mut rng, p, m);
        // The hypotheses need rank(C) = p and full-rank least-squares
        // coefficients; random draws satisfy both almost surely.
        let a = &c * linalg::pinv(&x);
        if linalg::pinv_with_rank(&c).1 < p || linalg::pinv_with_rank(&a).1 < p {
            continue;
        }
        let gap = functionals::least_squares_lowner_gap(&x, &c).map_err(err)?;
        worst = worst.min(gap);
        let fail = gap < -EIG_TOL;
        if n >= m {
            tall += 1;
            tall_fail += fail as usize;
        } else {
            wide += 1;
            wide_fail += fail as usize;
        }
        done += 1;
    }
    let ok = tall_fail + wide_fail == 0;
    Ok((ok, format!("violations: {tall_fail}/{tall} with n >= m, {wide_fail}/{wide} with n < m; worst gap {worst:.3e}")))
}

fn bias_variance_crossing() -> Result<(bool, String), String> {
    let cfg = ScenarioConfig::defaults(ScenarioKind::Gradient);
    let out = gradient::run(&cfg).map_err(err)?;
    let mut mins = out.minimizers.clone();
    mins.sort_by_key(|r| r.t);
    let budgets: Vec<usize> = mins.iter().map(|r| r.t).collect();
    let decreasing = mins.windows(2).all(|w| w[1].h_star < w[0].h_star);
    let worst = mins
        .iter()
        .map(|r| (r.variance_term - r.bias_term).abs() / r.variance_term.max(r.bias_term))
        .fold(0.0, f64::max);
    let hs: Vec<f64> = mins.iter().map(|r| r.h_star).collect();
    let ok = budgets == [100, 1_000, 10_000] && decreasing && worst <= BALANCE_TOL;
    Ok((ok, format!("T {budgets:?}, h* {hs:.4?}, max relative term gap {worst:.3}")))
}

fn contamination_check() -> Result<(bool, String), String> {
    let cfg = ScenarioConfig::defaults(ScenarioKind::Contamination);
    let out = contamination::run(&cfg).map_err(err)?;
    let mut ok = true;
    let mut parts = Vec::new();
    for budget in cfg.contamination.as_ref().expect("block").budgets.iter() {
        let get = |k: DesignKind| out.rows.iter().find(|r| r.budget == *budget && r.design_kind == k).expect("row");
        let (a, f) = (get(DesignKind::Aware), get(DesignKind::Full));
        ok &= a.mse <= f.mse && a.seeds >= CONTAMINATION_MIN_SEEDS;
        parts.push(format!("T={budget}: {:.3} vs {:.3}", a.mse, f.mse));
    }
    Ok((ok, format!("aware vs full MSE over {} seeds: {}", out.rows[0].seeds, parts.join(", "))))
}

fn pharma_check() -> Result<(bool, String), String> {
    let cfg = ScenarioConfig::defaults(ScenarioKind::Pharma);
    let out = pharma::run(&cfg).map_err(err)?;
    let seeds = cfg.pharma.as_ref().expect("block").seeds;
    let mut ok = seeds >= PHARMA_MIN_SEEDS;
    let mut parts = Vec::new();
    for n in cfg.pharma.as_ref().expect("block").sample_counts.iter() {
        let get = |k: PharmaDesignKind| out.rows.iter().find(|r| r.n_samples == *n && r.design_kind == k).expect("row");
        let (r, s) = (get(PharmaDesignKind::Robust), get(PharmaDesignKind::EquallySpaced));
        ok &= r.gamma_mse < s.gamma_mse;
        parts.push(format!("n={n}: {:.3} vs {:.3}", r.gamma_mse, s.gamma_mse));
    }
    // Noiseless recovery from a box whose centre is not the true value, so
    // the optimizer has to move.
    let mut quiet = cfg.clone();
    quiet.sigma = 0.0;
    let block = quiet.pharma.as_mut().expect("block");
    block.seeds = 1;
    block.gamma_box = vec![[4.2, 6.2], [9.3, 11.1], [8.8, 10.9]];
    let rec = pharma::run(&quiet).map_err(err)?;
    let worst = rec.rows.iter().map(|r| r.gamma_mse.sqrt()).fold(0.0, f64::max);
    ok &= worst <= PHARMA_RECOVERY_TOL;
    Ok((ok, format!("robust vs spaced MSE over {seeds} seeds: {}; noiseless max |gamma error| {worst:.2e}", parts.join(", "))))
}

fn lyapunov_check() -> Result<(bool, String), String> {
    let cfg = ScenarioConfig::defaults(ScenarioKind::Lyapunov);
    let out = lyapunov::run(&cfg).map_err(err)?;
    let get = |k: LyapunovSet| {
        out.summary.iter().find(|s| s.strategy == Strategy::UncRef && s.set_kind == k).expect("summary row")
    };
    let (ours, base) = (get(LyapunovSet::Ours), get(LyapunovSet::ProjectedClassical));
    let ok = ours.mean_certification_step <= base.mean_certification_step && ours.seeds >= LYAPUNOV_MIN_SEEDS && out.ground_truth_sup < 0.0;
    Ok((
        ok,
        format!(
            "unc-ref mean certification step {:.1} (ours) vs {:.1} (projected) over {} seeds; ground-truth sup dV/dt {:.4}",
            ours.mean_certification_step, base.mean_certification_step, ours.seeds, out.ground_truth_sup
        ),
    ))
}

fn optimizer_oracle() -> Result<(bool, String), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for criterion in [Criterion::E, Criterion::A] {
        for estimator in [EstimatorKind::Interp, EstimatorKind::Ridge] {
            for n in 2..=4 {
                let m = n + 2;
                let p = if estimator == EstimatorKind::Interp { 1 } else { 2 };
                let x = rand_matrix(&mut rng, n, m);
                let c = rand_functional(&mut rng, p, m);
                let obj = DesignObjective::new(criterion, estimator, c, 0.7, 0.4, PriorOperator::identity(m));
                let md = design::mirror_descent_design(&obj, &x, 1000, 1.0).map_err(err)?;
                let grid = design::grid_search_design(&obj, &x, ORACLE_RESOLUTION).map_err(err)?;
                worst = worst.max((grid.value - md.value) / grid.value.abs().max(f64::MIN_POSITIVE));
                count += 1;
            }
        }
    }
    let mut monotone = true;
    for criterion in [Criterion::E, Criterion::A] {
        let x = rand_matrix(&mut rng, 15, 6);
        let c = rand_functional(&mut rng, 3, 6);
        let obj = DesignObjective::new(criterion, EstimatorKind::Ridge, c, 0.5, 0.2, PriorOperator::identity(6));
        let r = design::greedy_design(&obj, &x, 30, &[0, 1, 2, 3]).map_err(err)?;
        monotone &= r.trace.windows(2).all(|w| w[1] >= w[0] - MONOTONE_TOL);
    }
    let ok = worst <= ORACLE_REL_TOL && monotone;
    Ok((ok, format!("{count} instances, worst shortfall vs grid {:.3}%, greedy trace monotone {monotone}", 100.0 * worst)))
}

fn ellipse_check() -> Result<(bool, String), String> {
    let cfg = ScenarioConfig::defaults(ScenarioKind::Ellipse);
    let rows = ellipse::run(&cfg).map_err(err)?;
    let mut ok = true;
    let mut parts = Vec::new();
    for design in [CircleDesign::Equispaced, CircleDesign::Random] {
        let get = |k: IntervalSet| rows.iter().find(|r| r.design_kind == design && r.set_kind == k).expect("row");
        for (ours, proj) in [(IntervalSet::OursFixed, IntervalSet::ProjectedFixed), (IntervalSet::OursAdaptive, IntervalSet::ProjectedAdaptive)] {
            let (a, b) = (get(ours), get(proj));
            let inside = a.interval_lo >= b.interval_lo && a.interval_hi <= b.interval_hi;
            let zero = a.interval_lo <= 0.0 && a.interval_hi >= 0.0;
            ok &= inside && zero;
            parts.push(format!("{design:?}/{ours:?} width {:.3} vs {:.3}", a.interval_hi - a.interval_lo, b.interval_hi - b.interval_lo));
        }
    }
    Ok((ok, parts.join(", ")))
}

fn main() {
    let mut report = Report { results: Vec::new() };
    report.record(1, "gradient design allocation", gradient_allocation());
    report.record(2, "xi and fixed radii exactness", xi_exactness());
    report.record(3, "coverage of fixed and adaptive sets", coverage_check());
    report.record(4, "ordering of adaptive and ridge information", information_ordering());
    report.record(5, "finite-difference geometry bound", geometry_bound());
    report.record(6, "least-squares Loewner inequality", loewner_inequality());
    report.record(7, "bias-variance crossing", bias_variance_crossing());
    report.record(8, "contamination-aware design", contamination_check());
    report.record(9, "pharmacokinetic robust design", pharma_check());
    report.record(10, "Lyapunov certification", lyapunov_check());
    report.record(11, "optimizer against grid oracle", optimizer_oracle());
    report.record(12, "interval nesting", ellipse_check());
    let failed: Vec<usize> = report.results.iter().filter(|r| !r.1).map(|r| r.0).collect();
    println!("acceptance: {}/{} passed, failed {:?}", report.results.len() - failed.len(), report.results.len(), failed);
    if !failed.is_empty() && std::env::var_os("ACCEPTANCE_STRICT").is_some() {
        std::process::exit(1);
    }
}
