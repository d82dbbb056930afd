//! Acceptance criteria. Each test prints one `criterion N ... PASS|FAIL` line
//! with the measured values, then asserts. Reference values are recomputed
//! here from m and delta rather than read back from the library.

use std::time::Instant;

use pacrit_core::elbow;
use pacrit_core::expander::{self, CutMethod};
use pacrit_core::harness::{self, Command, ExperimentSpec};
use pacrit_core::pa_models::{self, MultiGraph, PaConfig, Variant};
use pacrit_core::percolation;
use pacrit_core::ppt::{self, PptParams, RootStrength, Thinning};
use pacrit_core::spectral::{self, GridSpec, ResidualMethod};
use pacrit_core::spine;
use pacrit_core::StreamRng;

fn verdict(n: u32, name: &str, pass: bool, started: Instant, detail: String) {
    println!(
        "criterion {n} [{name}] ... {} ({:.1}s)\n    {detail}",
        if pass { "PASS" } else { "FAIL" },
        started.elapsed().as_secs_f64()
    );
    assert!(pass, "criterion {n} failed: {detail}");
}

struct Consts {
    chi: f64,
    c: [[f64; 2]; 2],
}

fn consts(m: u32, delta: f64) -> Consts {
    let m = m as f64;
    let den = 2.0 * m + delta;
    Consts {
        chi: (m + delta) / den,
        c: [
            [m * (m + delta) / den, m * (m + 1.0 + delta) / den],
            [(m - 1.0) * (m + delta) / den, m * (m + delta) / den],
        ],
    }
}

/// Perron root of a positive 2x2 matrix by plain iteration.
fn perron(a: [[f64; 2]; 2]) -> (f64, [f64; 2]) {
    let mut v = [1.0, 1.0];
    let mut lambda = 0.0;
    for _ in 0..10_000 {
        let w = [a[0][0] * v[0] + a[0][1] * v[1], a[1][0] * v[0] + a[1][1] * v[1]];
        let s = w[0] + w[1];
        let next = [w[0] / s, w[1] / s];
        lambda = s / (v[0] + v[1]);
        if (next[0] - v[0]).abs() < 1e-17 {
            v = next;
            break;
        }
        v = next;
    }
    (lambda, v)
}

fn oracle_r(m: u32, delta: f64) -> f64 {
    let k = consts(m, delta);
    2.0 * (k.c[0][0] + (k.c[0][1] * k.c[1][0]).sqrt()) / (2.0 * k.chi - 1.0)
}

fn oracle_r_b(m: u32, delta: f64, b: f64) -> f64 {
    let k = consts(m, delta);
    let q = 1.0 - b.powf(0.5 - k.chi);
    let (lambda, _) = perron([[k.c[0][0], k.c[0][1] * q], [k.c[1][0], k.c[1][1] * q]]);
    lambda / (k.chi - 0.5)
}

fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    let n = panels * 2;
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

#[test]
fn criterion_01_closed_form_threshold() {
    let t = Instant::now();
    let mut rng = StreamRng::new(2024);
    let mut grid = vec![(2, 1.0), (3, 2.0)];
    for _ in 0..18 {
        let m = 1 + (rng.uniform() * 6.0) as u32;
        let delta = 0.01 + rng.uniform() * 20.0;
        grid.push((m, delta));
    }
    let mut worst_product = 0.0f64;
    let mut worst_oracle = 0.0f64;
    for &(m, delta) in &grid {
        let pc = spectral::pi_c(m, delta).unwrap();
        let r = spectral::spectral_norm(m, delta).unwrap().r;
        worst_product = worst_product.max((pc * r - 1.0).abs());
        worst_oracle = worst_oracle.max((pc - 1.0 / oracle_r(m, delta)).abs());
    }
    let pc21 = spectral::pi_c(2, 1.0).unwrap();
    let pc32 = spectral::pi_c(3, 2.0).unwrap();
    let pass = worst_product < 1e-12
        && worst_oracle < 1e-9
        && (pc21 - 0.04587585).abs() < 1e-8
        && t.elapsed().as_secs_f64() < 1.0;
    verdict(
        1,
        "closed-form pi_c",
        pass,
        t,
        format!(
            "max |pi_c r - 1| = {worst_product:.2e}, max |pi_c - oracle| = {worst_oracle:.2e} over {} points; \
             pi_c(2,1) = {pc21:.10}, pi_c(3,2) = {pc32:.10} (oracle {:.10}; the literal 0.03519110 differs by {:.2e})",
            grid.len(),
            1.0 / oracle_r(3, 2.0),
            (pc32 - 0.03519110f64).abs()
        ),
    );
}

#[test]
fn criterion_02_eigenfunction_residual() {
    let t = Instant::now();
    let ages = [1e-3, 1e-1, 1.0, 10.0];
    let trunc = spectral::eigen_residual(2, 1.0, Some(16.0), &ages, ResidualMethod::Quadrature).unwrap();
    let full = spectral::eigen_residual(2, 1.0, None, &ages, ResidualMethod::Quadrature).unwrap();
    let (rb, r) = (oracle_r_b(2, 1.0, 16.0), oracle_r(2, 1.0));
    let pass = trunc.max_rel_residual < 1e-8
        && full.max_rel_residual < 1e-8
        && (trunc.eigenvalue - rb).abs() < 1e-9 * rb
        && (full.eigenvalue - r).abs() < 1e-9 * r
        && (rb - 14.08023).abs() < 1e-5
        && (r - 21.79796).abs() < 1e-5
        && t.elapsed().as_secs_f64() < 10.0;
    verdict(
        2,
        "eigenfunction residual",
        pass,
        t,
        format!(
            "b=16: r_b = {:.6} (oracle {rb:.6}), max residual {:.2e}; untruncated: r = {:.6} (oracle {r:.6}), max residual {:.2e}",
            trunc.eigenvalue, trunc.max_rel_residual, full.eigenvalue, full.max_rel_residual
        ),
    );
}

#[test]
fn criterion_03_power_iteration() {
    let t = Instant::now();
    let grid = GridSpec {
        x_min: 1e-6,
        x_max: 1.0,
        n: 2000,
    };
    let res = spectral::power_iteration_norm(2, 1.0, 16.0, grid).unwrap();
    let target = oracle_r_b(2, 1.0, 16.0);
    let rel = (res.estimate - target).abs() / target;
    let (a, limit) = spectral::finite_section_limit(2, 1.0, 16.0).unwrap();
    let pass = rel < 0.01 && t.elapsed().as_secs_f64() < 60.0;
    verdict(
        3,
        "power iteration",
        pass,
        t,
        format!(
            "estimate {:.6} after {} iterations vs r_b = {target:.6} (rel. error {rel:.3}); \
             finite sections of the age-cut operator converge to {limit:.4} (weight exponent {a:.3}), not r_b",
            res.estimate, res.iterations
        ),
    );
}

#[test]
fn criterion_04_graph_transition() {
    let t = Instant::now();
    let cfg = PaConfig::new(Variant::B, 2, 1.0, 100_000, 0);
    let grid = [0.02, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3];
    let table = percolation::sweep(&cfg, &grid, 20, 41).unwrap();
    let low = &table.rows[0];
    let high = &table.rows[grid.len() - 1];
    let pass = low.c1.mean() < 0.01
        && high.c1.mean() > 0.05
        && low.c2.mean() < 0.02
        && high.c2.mean() < 0.02
        && table.monotonicity_violations == 0
        && t.elapsed().as_secs_f64() < 600.0;
    verdict(
        4,
        "graph percolation transition",
        pass,
        t,
        format!(
            "pi=0.02: C1/n = {:.5}, C2/n = {:.5}; pi=0.30: C1/n = {:.5}, C2/n = {:.5}; monotonicity violations {}",
            low.c1.mean(),
            low.c2.mean(),
            high.c1.mean(),
            high.c2.mean(),
            table.monotonicity_violations
        ),
    );
}

#[test]
fn criterion_05_nonpositive_delta() {
    let t = Instant::now();
    let small = percolation::sweep(&PaConfig::new(Variant::B, 2, -1.0, 10_000, 0), &[0.1], 20, 51).unwrap();
    let large = percolation::sweep(&PaConfig::new(Variant::B, 2, -1.0, 100_000, 0), &[0.1], 20, 52).unwrap();
    let (s, l) = (&small.rows[0].c1, &large.rows[0].c1);
    let se = (s.se().powi(2) + l.se().powi(2)).sqrt();
    let pass = l.mean() >= s.mean() - 2.0 * se && t.elapsed().as_secs_f64() < 600.0;
    verdict(
        5,
        "giant component for delta <= 0",
        pass,
        t,
        format!(
            "pi=0.1, delta=-1: C1/n = {:.5} ± {:.5} at n=1e4, {:.5} ± {:.5} at n=1e5 (combined s.e. {se:.5})",
            s.mean(),
            s.se(),
            l.mean(),
            l.se()
        ),
    );
}

/// Mean elbow offspring: the inner O-children integral in closed form,
/// the outer Y-children integral by Simpson in log age.
fn oracle_elbow_mean(pi: f64, h: f64, m: u32, delta: f64) -> f64 {
    let k = consts(m, delta);
    let chi = k.chi;
    let integrand = |u: f64| {
        let y = u.exp();
        let y_density = k.c[0][1] / (y.powf(chi) * h.powf(1.0 - chi));
        let o_children = k.c[1][0] * h.powf(chi) / (chi * y.powf(chi));
        pi * y_density * pi * o_children * y
    };
    simpson(integrand, h.ln(), 0.0, 20_000)
}

#[test]
fn criterion_06_tree_threshold_straddle() {
    let t = Instant::now();
    let base = PptParams::new(2, 1.0, 0.02).unwrap();
    let below = ppt::estimate_survival(&base, 30, 10_000, 10_000, 61).unwrap();
    let above = ppt::estimate_survival(&base.with_pi(0.15).unwrap(), 30, 10_000, 10_000, 62).unwrap();
    let h = 1e-6;
    let target = oracle_elbow_mean(0.1, h, 2, -1.0);
    let off = elbow::offspring_moments(0.1, h, 2, -1.0, 200_000, 63).unwrap();
    let z = (off.mean() - target) / off.se();
    let pass = below.survival_frac < 0.005
        && above.survival_frac > 0.05
        && z.abs() <= 3.0
        && (target - 3.96).abs() < 1e-6
        && t.elapsed().as_secs_f64() < 900.0;
    verdict(
        6,
        "tree threshold straddle",
        pass,
        t,
        format!(
            "survival {:.4} at pi=0.02 and {:.4} at pi=0.15 (R=1e4, G=30, K=1e4); \
             elbow offspring mean {:.4} ± {:.4} vs {target:.4} (z = {z:.2})",
            below.survival_frac,
            above.survival_frac,
            off.mean(),
            off.se()
        ),
    );
}

#[test]
fn criterion_07_martingales() {
    let t = Instant::now();
    let pc = 1.0 / oracle_r(2, 1.0);
    let score = ppt::score_trajectory(&PptParams::new(2, 1.0, pc).unwrap(), 10, 100_000, 71).unwrap();
    let mut score_ok = true;
    let mut worst_up = f64::NEG_INFINITY;
    for inc in score.increments.iter().filter(|i| (2..=10).contains(&i.generation)) {
        worst_up = worst_up.max(inc.mean / inc.se.max(f64::MIN_POSITIVE));
        score_ok &= inc.mean <= 2.0 * inc.se;
    }
    let mart_params = PptParams::new(2, 1.0, 0.15).unwrap().with_b(16.0).unwrap();
    let mart = ppt::martingale_trajectory(&mart_params, 8, 100_000, 72).unwrap();
    let mut mart_ok = true;
    let mut cells = Vec::new();
    for row in mart.rows.iter().filter(|r| (1..=8).contains(&r.generation)) {
        let (mean, se) = (row.martingale_mean.unwrap(), row.martingale_se.unwrap());
        let z = (mean - 1.0) / se;
        mart_ok &= z.abs() <= 3.0;
        cells.push(format!("n={} {mean:.3}±{se:.3}", row.generation));
    }
    let pass = score_ok && mart_ok && t.elapsed().as_secs_f64() < 1200.0;
    verdict(
        7,
        "martingale suite",
        pass,
        t,
        format!(
            "score at pi_c: {} (largest increment {worst_up:.2} s.e.); martingale b=16, pi=0.15: {} [{}]",
            if score_ok { "non-increasing" } else { "increases" },
            if mart_ok {
                "within 3 s.e. of 1"
            } else {
                "departs from 1"
            },
            cells.join(", ")
        ),
    );
}

#[test]
fn criterion_08_spine() {
    let t = Instant::now();
    let (m, delta, b) = (2u32, 1.0f64, 16.0f64);
    let k = consts(m, delta);
    let chi = k.chi;
    let q = 1.0 - b.powf(0.5 - chi);
    let mb = [[k.c[0][0], k.c[0][1] * q], [k.c[1][0], k.c[1][1] * q]];
    let (lambda, u) = perron(mb);
    let p = |s: usize, tt: usize| mb[s][tt] * u[tt] / (lambda * u[s]);
    let ups_o = p(1, 0) / (p(0, 1) + p(1, 0));
    let log_o = -2.0 / (2.0 * chi - 1.0);
    let tail_y = |s: f64| 1.0 - (1.0 - (-s * (chi - 0.5)).exp()) / q;
    let log_y = simpson(tail_y, 0.0, b.ln(), 20_000);
    let drift = ups_o * log_o + (1.0 - ups_o) * log_y;

    let report = spine::empirical_vs_analytic_report(m, delta, b, 100_000, 81).unwrap();
    let check = |name: &str| report.checks.iter().find(|c| c.name == name).unwrap().clone();
    let st = check("stationary_old");
    let lo = check("log_ratio_old");
    let ly = check("log_ratio_young");
    let traj = spine::simulate_spine(m, delta, b, 100_000, 82).unwrap();
    let rate = traj.rate.unwrap();
    let sum = p(0, 0) + p(1, 0);

    let stat_ok = (st.empirical - ups_o).abs() <= 0.01 && (ups_o - 0.843058).abs() < 1e-6;
    let lo_ok = (lo.empirical - (-10.0)).abs() <= 3.0 * lo.se.unwrap() && (log_o + 10.0).abs() < 1e-12;
    let ly_ok = (ly.empirical - log_y).abs() <= 3.0 * ly.se.unwrap();
    let drift_ok = (rate - drift).abs() <= (0.05 * drift.abs()).max(0.05);
    let sum_ok = sum > 1.0 && (report.transition.unwrap()[0][0] + report.transition.unwrap()[1][0] - sum).abs() < 1e-12;
    let pass = stat_ok && lo_ok && ly_ok && drift_ok && sum_ok && t.elapsed().as_secs_f64() < 120.0;
    verdict(
        8,
        "spine closed forms",
        pass,
        t,
        format!(
            "upsilon_O {:.5} vs {ups_o:.6}; E log R(O) {:.4} ± {:.4} vs -10; E log R(Y) {:.5} ± {:.5} vs {log_y:.7} \
             (literal 1.322370); log(X_n)/n {rate:.4} vs {drift:.7} (literal -8.223035); p_OO + p_YO = {sum:.7}",
            st.empirical,
            lo.empirical,
            lo.se.unwrap(),
            ly.empirical,
            ly.se.unwrap()
        ),
    );
}

/// Minimum of cut/|S| over `ceil(eps n) <= |S| <= floor(n/2)` by plain bitmask enumeration.
fn brute_alpha(g: &MultiGraph, eps: f64) -> f64 {
    let n = g.n_vertices;
    let lo = ((eps * n as f64).ceil() as usize).max(1);
    let hi = n / 2;
    let mut best = f64::INFINITY;
    for mask in 1u32..(1u32 << n) {
        let size = mask.count_ones() as usize;
        if size < lo || size > hi {
            continue;
        }
        let cut = g
            .edges
            .iter()
            .filter(|&&(u, v)| ((mask >> u) & 1) != ((mask >> v) & 1))
            .count();
        best = best.min(cut as f64 / size as f64);
    }
    best
}

#[test]
fn criterion_09_expander() {
    let t = Instant::now();
    let cycle = MultiGraph::from_edges(4, [(0, 1), (1, 2), (2, 3), (3, 0)]);
    let k4 = MultiGraph::from_edges(4, [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]);
    let a_cycle = expander::exact_alpha(&cycle, 0.25).unwrap().alpha;
    let a_k4 = expander::exact_alpha(&k4, 0.25).unwrap().alpha;
    let small_ok = a_cycle == 1.0 && a_k4 == 2.0 && brute_alpha(&cycle, 0.25) == 1.0 && brute_alpha(&k4, 0.25) == 2.0;

    let mut bound_ok = 0;
    let mut oracle_ok = 0;
    let mut rng = StreamRng::new(90);
    for i in 0..100 {
        let n = 6 + (rng.uniform() * 15.0) as usize;
        let variant = [Variant::A, Variant::B, Variant::D][i % 3];
        let g = pa_models::generate(&PaConfig::new(variant, 2, 0.5 + rng.uniform() * 3.0, n, 900 + i as u64)).unwrap();
        let exact = expander::exact_alpha(&g, 0.25).unwrap().alpha;
        if (exact - brute_alpha(&g, 0.25)).abs() < 1e-12 {
            oracle_ok += 1;
        }
        let bound = if expander::is_connected(&g) {
            expander::spectral_alpha_bound(&g, 0.25).unwrap().alpha
        } else {
            0.0
        };
        if bound <= exact + 1e-12 {
            bound_ok += 1;
        }
    }
    let n_grid: Vec<usize> = (10..=20).collect();
    let rows =
        expander::expansion_experiment(&PaConfig::new(Variant::B, 2, 1.0, 2, 0), 0.25, 0.05, &n_grid, 200, 91).unwrap();
    let fails: Vec<f64> = rows.iter().map(|r| r.fail_frac).collect();
    let monotone = fails.windows(2).all(|w| w[1] <= w[0]) && rows.iter().all(|r| r.method == CutMethod::Exact);
    let pass = small_ok && bound_ok == 100 && oracle_ok == 100 && monotone && t.elapsed().as_secs_f64() < 600.0;
    verdict(
        9,
        "expander",
        pass,
        t,
        format!(
            "alpha(C4) = {a_cycle}, alpha(K4) = {a_k4}; spectral <= exact on {bound_ok}/100, exact = brute force on {oracle_ok}/100; \
             fail fractions n=10..20: {fails:?}"
        ),
    );
}

fn determinism_specs() -> Vec<ExperimentSpec> {
    use Command::*;
    let cmds = vec![
        Generate {
            variant: Variant::D,
            m: 3,
            delta: -1.5,
            n: 2_000,
        },
        Sweep {
            variant: Variant::B,
            m: 2,
            delta: 1.0,
            n: 20_000,
            pis: vec![0.02, 0.1, 0.3],
            replicas: 8,
        },
        PptSurvival {
            m: 2,
            delta: 1.0,
            pi: 0.15,
            b: None,
            generations: 20,
            cap: 2_000,
            replicas: 2_000,
            thinning: Thinning::Intensity,
            root_strength: RootStrength::Plain,
        },
        PptSurvival {
            m: 2,
            delta: 1.0,
            pi: 0.15,
            b: Some(16.0),
            generations: 10,
            cap: 500,
            replicas: 500,
            thinning: Thinning::PerEdge,
            root_strength: RootStrength::SizeBiased,
        },
        Elbow {
            m: 2,
            delta: -1.0,
            pi: 0.1,
            h: None,
            generations: 8,
            cap: 500,
            replicas: 300,
            draws: 20_000,
        },
        Spectral {
            m: 2,
            delta: 1.0,
            b: Some(16.0),
            grid: vec![200, 400],
            x_min: 1e-6,
            x_max: 1.0,
            test_ages: vec![1e-3, 1.0],
        },
        Threshold { m: 2, delta: 1.0 },
        Spine {
            m: 2,
            delta: 1.0,
            b: 16.0,
            steps: 1_000,
            budget: 20_000,
        },
        Expander {
            variant: Variant::B,
            m: 2,
            delta: 1.0,
            epsilon: 0.25,
            alpha_probe: 0.05,
            n_grid: vec![10, 14, 30],
            replicas: 20,
        },
        Scores {
            m: 2,
            delta: 1.0,
            pi: 0.15,
            b: Some(16.0),
            generations: 5,
            replicas: 2_000,
        },
    ];
    let mut specs: Vec<ExperimentSpec> = cmds.into_iter().map(|c| ExperimentSpec::new(c, 1234)).collect();
    specs.push(
        ExperimentSpec::new(
            Spine {
                m: 2,
                delta: 1.0,
                b: 16.0,
                steps: 1_000,
                budget: 10,
            },
            1234,
        )
        .with_format(harness::Format::Csv),
    );
    specs
}

#[test]
fn criterion_10_determinism() {
    let t = Instant::now();
    let specs = determinism_specs();
    let mut differing = Vec::new();
    for spec in &specs {
        let a = harness::run_in_pool(&spec.clone().with_threads(1)).unwrap();
        let b = harness::run_in_pool(&spec.clone().with_threads(1)).unwrap();
        let c = harness::run_in_pool(&spec.clone().with_threads(8)).unwrap();
        if a != b || a != c || a.bytes.is_empty() {
            differing.push(spec.command.name());
        }
    }
    let covered: std::collections::BTreeSet<_> = specs.iter().map(|s| s.command.name()).collect();
    let pass = differing.is_empty() && covered.len() == 9 && t.elapsed().as_secs_f64() < 300.0;
    verdict(
        10,
        "determinism",
        pass,
        t,
        format!(
            "{} specs over {} subcommands, each run twice at 1 thread and once at 8; differing: {differing:?}",
            specs.len(),
            covered.len()
        ),
    );
}
