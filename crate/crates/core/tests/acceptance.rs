//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::process::ExitCode;
use std::time::Instant;

use nbfusion::correlation::{sample_grid, SamplerMethod, SamplerOptions, ShiftDensityKind};
use nbfusion::harness::ExperimentConfig;
use nbfusion::metrics::{bundle_const, dis_report, distance, EnsembleStats};
use nbfusion::scenario::{
    lambda_of_k, realize_scenario, sample_alpha, solve_k, AlphaDistribution, AlphaMode,
};
use nbfusion::seed::{rng, trial_seed};
use nbfusion::{
    naive_fuse_multi, naive_fuse_two, run_verification, AlphaCurve, CombinerId, CorrelationGrid,
    PosteriorMatrix, PriorVector, ScenarioBundle, UnitProb, VerificationReport,
};
use rand::Rng;
use rayon::prelude::*;

const THETAS: [f64; 3] = [0.2, 0.5, 0.8];
const BASELINES: [CombinerId; 4] = [
    CombinerId::NoPriorProduct,
    CombinerId::LinearPool,
    CombinerId::LogPool,
    CombinerId::FirstOnly,
];

struct Outcome {
    passed: bool,
    details: Vec<String>,
}

impl Outcome {
    fn new() -> Self {
        Self {
            passed: true,
            details: Vec::new(),
        }
    }

    fn check(&mut self, ok: bool, line: String) {
        if !ok {
            self.passed = false;
        }
        self.details
            .push(format!("{} {line}", if ok { "ok  " } else { "FAIL" }));
    }

    fn info(&mut self, line: String) {
        self.details.push(format!("info {line}"));
    }
}

fn p(x: f64) -> UnitProb {
    UnitProb::new(x).unwrap()
}

fn config(theta: f64, sampler: SamplerMethod, mode: AlphaMode) -> ExperimentConfig {
    ExperimentConfig {
        theta,
        n: 64,
        trials: 1000,
        j_sampler: sampler,
        alpha_mode: mode,
        master_seed: 20_240_601,
        ..ExperimentConfig::default()
    }
}

/// Runs the six large experiments once; criteria 1, 3 and 4 read from them.
fn large_runs() -> Vec<(String, f64, VerificationReport)> {
    let mut out = Vec::new();
    for (sampler, mode) in [
        (SamplerMethod::HitAndRun, AlphaMode::Microcanonical),
        (SamplerMethod::SinkhornIid, AlphaMode::Canonical),
    ] {
        for theta in THETAS {
            let t0 = Instant::now();
            let report = run_verification(&config(theta, sampler, mode)).unwrap();
            let label = format!("{}+{}", sampler.as_str(), mode.as_str());
            eprintln!(
                "  ran {label} theta={theta} in {:.1}s",
                t0.elapsed().as_secs_f64()
            );
            out.push((label, theta, report));
        }
    }
    out
}

fn criterion_optimality(runs: &[(String, f64, VerificationReport)]) -> Outcome {
    let mut o = Outcome::new();
    for (label, theta, report) in runs {
        let naive = report.summary(CombinerId::Naive).unwrap();
        for c in BASELINES {
            let s = report.summary(c).unwrap();
            let gap = s.mean - naive.mean;
            let se = s.stderr.hypot(naive.stderr);
            if c.coincides_with_naive(*theta) {
                // Same function as naive at this prior: distances must agree exactly.
                o.check(
                    gap == 0.0,
                    format!(
                        "{label} theta={theta} {} identical to naive (gap {gap:e})",
                        c.as_str()
                    ),
                );
            } else {
                o.check(
                    gap > 2.0 * se,
                    format!(
                        "{label} theta={theta} {}: gap {gap:.3e} = {:.1} se",
                        c.as_str(),
                        gap / se
                    ),
                );
            }
        }
    }
    o
}

fn criterion_lemma() -> Outcome {
    let mut o = Outcome::new();
    const SAMPLES: usize = 10_000;
    let methods = [
        (SamplerMethod::SinkhornIid, ShiftDensityKind::Uniform),
        (SamplerMethod::HitAndRun, ShiftDensityKind::Uniform),
        (SamplerMethod::Shift, ShiftDensityKind::Random),
    ];
    for (mi, (method, density)) in methods.into_iter().enumerate() {
        for n in [2usize, 4, 8] {
            let opts = SamplerOptions {
                shift_density: density,
                ..SamplerOptions::default()
            };
            let grids: Vec<CorrelationGrid> = (0..SAMPLES)
                .into_par_iter()
                .map(|i| {
                    let seed = trial_seed(1_000 + (mi * 10 + n) as u64, i as u64);
                    sample_grid(method, n, &opts, &mut rng(seed)).unwrap()
                })
                .collect();
            let mut worst = 0.0f64;
            for cell in 0..n * n {
                let vals: Vec<f64> = grids.iter().map(|g| g.entries()[cell]).collect();
                let s = EnsembleStats::from_values(&vals).unwrap();
                if s.stderr > 0.0 {
                    worst = worst.max((s.mean - 1.0).abs() / s.stderr);
                } else if s.mean != 1.0 {
                    worst = f64::INFINITY;
                }
            }
            o.check(
                worst <= 4.0,
                format!(
                    "{} n={n}: worst cell |mean-1| = {worst:.2} se",
                    method.as_str()
                ),
            );
            if method == SamplerMethod::HitAndRun && n == 2 {
                // The 2x2 polytope is the segment [[1+t,1-t],[1-t,1+t]], t uniform on [-1,1].
                let mut ts: Vec<f64> = grids.iter().map(|g| g.get(0, 0) - 1.0).collect();
                ts.sort_by(f64::total_cmp);
                let m = ts.len() as f64;
                let ks = ts
                    .iter()
                    .enumerate()
                    .map(|(i, &t)| {
                        let f = (t + 1.0) / 2.0;
                        (f - i as f64 / m).abs().max(((i + 1) as f64 / m - f).abs())
                    })
                    .fold(0.0, f64::max);
                let crit = 1.628 / m.sqrt();
                o.check(ks < crit, format!("hitrun n=2 KS {ks:.4} < {crit:.4}"));
            }
        }
    }
    o
}

fn criterion_pointwise(runs: &[(String, f64, VerificationReport)]) -> Outcome {
    let mut o = Outcome::new();
    for (label, theta, report) in runs.iter().filter(|r| r.1 == 0.5) {
        let table = &report.pointwise;
        let dev = table.max_deviation();
        let line = format!(
            "{label} theta={theta}: max deviation {dev:.4} over {} of {} bins",
            table.unflagged(),
            table.cells.len()
        );
        if report.config.alpha_mode == AlphaMode::Microcanonical {
            o.check(dev <= 0.02 && table.unflagged() > 0, line);
        } else {
            // The exact-mean projection shifts bin centroids by O(1/sqrt(n)).
            o.info(line);
        }
    }
    o
}

fn criterion_const(runs: &[(String, f64, VerificationReport)]) -> Outcome {
    let mut o = Outcome::new();
    for (label, theta, report) in runs {
        let c = &report.const_check;
        let lo = theta * theta - 4.0 * c.estimate.stderr;
        let hi = theta + 4.0 * c.estimate.stderr;
        let m = c.estimate.mean;
        o.check(
            lo <= m && m <= hi,
            format!("{label} theta={theta}: Const {m:.5} in [{lo:.5}, {hi:.5}]"),
        );
    }
    for theta in THETAS {
        let t = p(theta);
        let bundle = ScenarioBundle::assemble(
            AlphaCurve::constant(t, 8),
            AlphaCurve::constant(t, 8),
            CorrelationGrid::ones(8),
            CorrelationGrid::ones(8),
        )
        .unwrap();
        let k = bundle_const(&bundle);
        let rep = dis_report(CombinerId::Naive, std::slice::from_ref(&bundle)).unwrap();
        o.check(
            (k - theta * theta).abs() <= 1e-12 && rep.const_within_bounds,
            format!("degenerate theta={theta}: Const {k} vs {}", theta * theta),
        );
    }
    o
}

fn criterion_quadrature() -> Outcome {
    let mut o = Outcome::new();
    let plan: [(usize, usize, SamplerMethod, AlphaMode); 6] = [
        (
            2,
            2_000,
            SamplerMethod::HitAndRun,
            AlphaMode::Microcanonical,
        ),
        (2, 2_000, SamplerMethod::SinkhornIid, AlphaMode::Canonical),
        (
            8,
            2_000,
            SamplerMethod::HitAndRun,
            AlphaMode::Microcanonical,
        ),
        (8, 2_000, SamplerMethod::SinkhornIid, AlphaMode::Canonical),
        (64, 1_000, SamplerMethod::SinkhornIid, AlphaMode::Canonical),
        (64, 1_000, SamplerMethod::Shift, AlphaMode::Microcanonical),
    ];
    let mut total = 0;
    for (pi, (n, count, sampler, mode)) in plan.into_iter().enumerate() {
        // (weight error, class error, decomposition error)
        let worst = (0..count)
            .into_par_iter()
            .map(|i| {
                let seed = trial_seed(5_000 + pi as u64, i as u64);
                let theta = 0.05 + 0.9 * rng(seed ^ 0xA5A5).random::<f64>();
                let b = realize_scenario(p(theta), n, sampler, mode, seed).unwrap();
                let mut dec = 0.0f64;
                for c in CombinerId::ALL {
                    let d = distance(c, &b).unwrap();
                    let direct = direct_distance(c, &b);
                    dec = dec
                        .max((d.value - (d.cross_term + d.const_term)).abs())
                        .max((d.value - direct).abs());
                }
                dec = dec.max(
                    (distance(CombinerId::Naive, &b).unwrap().const_term - bundle_const(&b)).abs(),
                );
                (
                    (b.total_weight() - 1.0).abs(),
                    (b.class_weight() - theta).abs(),
                    dec,
                )
            })
            .reduce(
                || (0.0, 0.0, 0.0),
                |a, b| (a.0.max(b.0), a.1.max(b.1), a.2.max(b.2)),
            );
        total += count;
        o.check(
            worst.0 <= 1e-10 && worst.1 <= 1e-10 && worst.2 <= 1e-12,
            format!(
                "n={n} {}+{} x{count}: |sumC/N^2-1| {:.1e}, |sumD/N^2-theta| {:.1e}, decomposition {:.1e}",
                sampler.as_str(),
                mode.as_str(),
                worst.0,
                worst.1,
                worst.2
            ),
        );
    }
    o.check(total >= 10_000, format!("{total} bundles"));
    o
}

/// `(1/N^2) sum C (Gamma - P)^2`, summed directly.
fn direct_distance(c: CombinerId, b: &ScenarioBundle) -> f64 {
    let t = p(b.theta);
    let mut s = 0.0;
    for k in 0..b.n {
        for l in 0..b.n {
            let (post, w, _) = b.cell(k, l);
            if w > 0.0 {
                let a = p(b.alpha_curve.values()[k]);
                let be = p(b.beta_curve.values()[l]);
                let g = c.combine(a, be, t).unwrap().get();
                s += w * (g - post) * (g - post);
            }
        }
    }
    s / (b.n * b.n) as f64
}

fn criterion_lambda() -> Outcome {
    let mut o = Outcome::new();
    let mut worst_fit = 0.0f64;
    let mut worst_anti = 0.0f64;
    for i in 1..100 {
        let theta = i as f64 / 100.0;
        let k = solve_k(p(theta), 1e-10).unwrap();
        worst_fit = worst_fit.max((lambda_of_k(k) - theta).abs());
        let km = solve_k(p(1.0 - theta), 1e-10).unwrap();
        worst_anti = worst_anti.max((km + k).abs());
    }
    o.check(
        worst_fit < 1e-10,
        format!("max |Lambda(solve_k(theta)) - theta| = {worst_fit:.1e}"),
    );
    o.check(
        worst_anti <= 1e-9,
        format!("max |solve_k(1-theta) + solve_k(theta)| = {worst_anti:.1e}"),
    );

    const DRAWS: usize = 100_000;
    for (ki, k) in [-5.0, -1.0, 0.0, 1.0, 5.0].into_iter().enumerate() {
        let dist = AlphaDistribution::from_k(k);
        let mut xs: Vec<f64> = (0..DRAWS)
            .into_par_iter()
            .map(|i| sample_alpha(&dist, trial_seed(9_000 + ki as u64, i as u64)))
            .collect();
        let s = EnsembleStats::from_values(&xs).unwrap();
        let z = (s.mean - lambda_of_k(k)).abs() / s.stderr;
        o.check(
            z <= 4.0,
            format!(
                "K={k}: mean {:.5} vs Lambda {:.5} ({z:.2} se)",
                s.mean,
                lambda_of_k(k)
            ),
        );
        xs.sort_by(f64::total_cmp);
        let m = xs.len() as f64;
        let ks = xs
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let f = dist.cdf(x);
                (f - i as f64 / m).abs().max(((i + 1) as f64 / m - f).abs())
            })
            .fold(0.0, f64::max);
        let crit = 1.628 / m.sqrt();
        o.check(ks < crit, format!("K={k}: KS {ks:.4} < {crit:.4}"));
    }
    o
}

fn criterion_n2_oracle() -> Outcome {
    let mut o = Outcome::new();
    let theta = p(0.3);
    let bundle = ScenarioBundle::assemble(
        AlphaCurve::new(theta, vec![0.1, 0.5]).unwrap(),
        AlphaCurve::new(theta, vec![0.45, 0.15]).unwrap(),
        CorrelationGrid::from_rows(&[vec![1.5, 0.5], vec![0.5, 1.5]]).unwrap(),
        CorrelationGrid::from_rows(&[vec![0.2, 1.8], vec![1.8, 0.2]]).unwrap(),
    )
    .unwrap();
    // Exact rational arithmetic, computed independently.
    let cells = [
        ((0, 0), 0.3081761006289308, 0.5678571428571428, 0.175),
        ((0, 1), 0.017456359102244388, 1.4321428571428572, 0.025),
        ((1, 0), 0.5062344139650873, 1.4321428571428572, 0.725),
        ((1, 1), 0.48427672955974843, 0.5678571428571428, 0.275),
    ];
    let knots = [
        (&bundle.h1.knots, [0.0, 1.0 / 6.0, 1.0]),
        (&bundle.h1.bar_knots, [0.0, 9.0 / 14.0, 1.0]),
        (&bundle.h2.knots, [0.0, 0.75, 1.0]),
        (&bundle.h2.bar_knots, [0.0, 11.0 / 28.0, 1.0]),
    ];
    let mut worst = 0.0f64;
    for (got, want) in knots {
        for (g, w) in got.iter().zip(want) {
            worst = worst.max((g - w).abs());
        }
    }
    o.check(worst <= 1e-12, format!("marginal knots within {worst:.1e}"));
    let mut worst = 0.0f64;
    for ((k, l), pp, c, d) in cells {
        let (gp, gc, gd) = bundle.cell(k, l);
        worst = worst
            .max((gp - pp).abs())
            .max((gc - c).abs())
            .max((gd - d).abs());
    }
    o.check(worst <= 1e-12, format!("P, C, D within {worst:.1e}"));
    let expected = [
        (CombinerId::Naive, 0.016089549804059525),
        (CombinerId::NoPriorProduct, 0.024173469377574953),
        (CombinerId::LinearPool, 0.008247962192452381),
        (CombinerId::LogPool, 0.010199379138482813),
        (CombinerId::FirstOnly, 0.008640819335309524),
        (CombinerId::SecondOnly, 0.026140819335309526),
    ];
    for (c, want) in expected {
        let got = distance(c, &bundle).unwrap().value;
        o.check(
            (got - want).abs() <= 1e-12,
            format!("distance {} = {got} vs {want}", c.as_str()),
        );
    }
    let k = bundle_const(&bundle);
    let want = 44_198.0 / 318_795.0;
    o.check((k - want).abs() <= 1e-12, format!("Const {k} vs {want}"));
    o
}

fn criterion_reductions() -> Outcome {
    let mut o = Outcome::new();
    let mut r = rng(77);
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let (a, b, t) = (
            r.random::<f64>(),
            r.random::<f64>(),
            0.01 + 0.98 * r.random::<f64>(),
        );
        let m = PosteriorMatrix::from_rows(vec![vec![a, b], vec![1.0 - a, 1.0 - b]]).unwrap();
        let priors = PriorVector::new(vec![t, 1.0 - t]).unwrap();
        let Ok(two) = naive_fuse_two(p(a), p(b), p(t)) else {
            continue;
        };
        let multi = naive_fuse_multi(&m, &priors, 0).unwrap().get();
        worst = worst.max((multi - two.get()).abs());
    }
    o.check(
        worst <= 1e-15,
        format!("multi(L=2,K=2) vs two-input rule: {worst:.1e}"),
    );

    let (mut fixed, mut sym, mut comp, mut mono) = (0.0f64, 0.0f64, 0.0f64, 0usize);
    for _ in 0..100_000 {
        let a = r.random_range(0.001..0.999);
        let b = r.random_range(0.001..0.999);
        let t = r.random_range(0.01..0.99);
        let g = naive_fuse_two(p(a), p(b), p(t)).unwrap().get();
        fixed = fixed.max((naive_fuse_two(p(a), p(t), p(t)).unwrap().get() - a).abs());
        sym = sym.max((naive_fuse_two(p(b), p(a), p(t)).unwrap().get() - g).abs());
        let gc = naive_fuse_two(p(1.0 - a), p(1.0 - b), p(1.0 - t))
            .unwrap()
            .get();
        comp = comp.max((gc - (1.0 - g)).abs());
        let a2 = (a + r.random_range(0.0..0.2)).min(0.999);
        if naive_fuse_two(p(a2), p(b), p(t)).unwrap().get() < g {
            mono += 1;
        }
    }
    o.check(
        fixed <= 1e-14,
        format!("fixed point Gamma(a, theta, theta) = a: {fixed:.1e}"),
    );
    o.check(sym == 0.0, format!("symmetry: {sym:.1e}"));
    o.check(comp <= 1e-14, format!("complement: {comp:.1e}"));
    o.check(mono == 0, format!("monotonicity violations: {mono}"));
    o
}

fn criterion_determinism() -> Outcome {
    let mut o = Outcome::new();
    let cfg = ExperimentConfig {
        theta: 0.3,
        n: 16,
        trials: 200,
        j_sampler: SamplerMethod::HitAndRun,
        alpha_mode: AlphaMode::Microcanonical,
        master_seed: 99,
        ..ExperimentConfig::default()
    };
    let a = serde_json::to_string(&run_verification(&cfg).unwrap().without_timing()).unwrap();
    let b = serde_json::to_string(&run_verification(&cfg).unwrap().without_timing()).unwrap();
    o.check(a == b, format!("identical reports ({} bytes)", a.len()));
    o
}

fn main() -> ExitCode {
    let started = Instant::now();
    let runs = large_runs();
    let criteria: Vec<(&str, Outcome)> = vec![
        (
            "1 naive beats every baseline by 2 se",
            criterion_optimality(&runs),
        ),
        ("2 sampled grids have unit cell means", criterion_lemma()),
        (
            "3 binned optimum matches naive within 0.02",
            criterion_pointwise(&runs),
        ),
        ("4 Const within [theta^2, theta]", criterion_const(&runs)),
        ("5 quadrature identities", criterion_quadrature()),
        ("6 Lambda machinery", criterion_lambda()),
        ("7 N=2 end-to-end oracle", criterion_n2_oracle()),
        ("8 reductions and invariants", criterion_reductions()),
        ("9 deterministic reports", criterion_determinism()),
    ];
    let mut all = true;
    for (name, outcome) in &criteria {
        for d in &outcome.details {
            eprintln!("    {d}");
        }
        println!("{} {name}", if outcome.passed { "PASS" } else { "FAIL" });
        all &= outcome.passed;
    }
    eprintln!(
        "acceptance finished in {:.1}s",
        started.elapsed().as_secs_f64()
    );
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
