//! The spine of the size-biased b-truncated tree: a two-state label chain
//! with multiplicative age steps.
//!
//! Along the spine, labels move by `p_st = (M_b)_st u_t / (λ u_s)` and the age
//! is multiplied at each step by an independent ratio `R(t)` whose law
//! depends only on the new label: `P(R(O) <= a) = a^{χ-1/2}` on `(0, 1]`, and
//! `P(R(Y) > a) = (a^{1/2-χ} - b^{1/2-χ}) / (1 - b^{1/2-χ})` on `(1, b)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{seed_stream, StreamRng};
use crate::spectral::{self, Label};
use crate::stats::Moments;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpineParams {
    pub m: u32,
    pub delta: f64,
    pub b: f64,
    pub chi: f64,
    pub u_b: [f64; 2],
    /// Row-stochastic, indexed by [`Label::index`].
    pub p: [[f64; 2]; 2],
    pub stationary: [f64; 2],
}

impl SpineParams {
    pub fn new(m: u32, delta: f64, b: f64) -> Result<Self> {
        let p = transition_matrix(m, delta, b)?;
        let t = spectral::truncated_spectral(m, delta, b)?;
        Ok(SpineParams {
            m,
            delta,
            b,
            chi: spectral::chi(m, delta),
            u_b: t.u_b,
            p,
            stationary: stationary_of(&p),
        })
    }
}

fn check(m: u32, delta: f64, b: f64) -> Result<()> {
    spectral::constants(m, delta)?;
    if !(b > 1.0) || !b.is_finite() {
        return Err(Error::Parameter(format!("b must exceed 1 (got {b})")));
    }
    if delta <= 0.0 {
        return Err(Error::Domain("the spine needs delta > 0".into()));
    }
    Ok(())
}

/// Label transition matrix. For `m = 1` there are no O-children of Y nodes,
/// `u_Y = 0`, and the chain is absorbed in O (the Y row is set to `(1, 0)`).
pub fn transition_matrix(m: u32, delta: f64, b: f64) -> Result<[[f64; 2]; 2]> {
    check(m, delta, b)?;
    let k = spectral::constants(m, delta)?;
    let t = spectral::truncated_spectral(m, delta, b)?;
    if k.c_yo == 0.0 {
        return Ok([[1.0, 0.0], [1.0, 0.0]]);
    }
    let mb = k.matrix(t.q);
    let u = t.u_b;
    let mut p = [[0.0; 2]; 2];
    for s in 0..2 {
        for tt in 0..2 {
            p[s][tt] = mb[s][tt] * u[tt] / (t.lambda_m_b * u[s]);
        }
    }
    Ok(p)
}

fn stationary_of(p: &[[f64; 2]; 2]) -> [f64; 2] {
    let (oy, yo) = (p[0][1], p[1][0]);
    if oy + yo == 0.0 {
        return [0.5, 0.5];
    }
    [yo / (oy + yo), oy / (oy + yo)]
}

/// Stationary law `(υ_O, υ_Y)`, from `υ_O / υ_Y = p_YO / p_OY`.
pub fn stationary(m: u32, delta: f64, b: f64) -> Result<[f64; 2]> {
    Ok(stationary_of(&transition_matrix(m, delta, b)?))
}

/// One age ratio for a step onto `label`, by inversion.
pub fn sample_ratio(label: Label, chi: f64, b: f64, rng: &mut StreamRng) -> f64 {
    let e = 2.0 / (2.0 * chi - 1.0);
    match label {
        Label::O => (1.0 - rng.uniform()).powf(e),
        Label::Y => (1.0 - rng.uniform_open() * (1.0 - b.powf(0.5 - chi))).powf(-e),
    }
}

/// `E[log R(O)] = -1/(χ - 1/2)`.
pub fn expected_log_ratio_old(chi: f64) -> f64 {
    -1.0 / (chi - 0.5)
}

/// `E[log R(Y)] = 1/(χ - 1/2) - b^{1/2-χ} log b / (1 - b^{1/2-χ})`.
pub fn expected_log_ratio_young(chi: f64, b: f64) -> f64 {
    let t = b.powf(0.5 - chi);
    1.0 / (chi - 0.5) - t * b.ln() / (1.0 - t)
}

/// The same quantity integrated from the tail: `∫_0^{log b} P(log R(Y) > s) ds`.
pub fn expected_log_ratio_young_from_tail(chi: f64, b: f64) -> f64 {
    let t = b.powf(0.5 - chi);
    ((1.0 - t) / (chi - 0.5) - b.ln() * t) / (1.0 - t)
}

/// Almost-sure limit of `log(X_n) / n`: `υ_O E[log R(O)] + υ_Y E[log R(Y)]`.
pub fn lyapunov_drift(m: u32, delta: f64, b: f64) -> Result<f64> {
    let v = stationary(m, delta, b)?;
    let chi = spectral::chi(m, delta);
    Ok(v[0] * expected_log_ratio_old(chi) + v[1] * expected_log_ratio_young(chi, b))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpineTrajectory {
    /// `t_0 = O`, then the label of each step.
    pub labels: Vec<Label>,
    /// `log X_0 = 0`, then the running log-age.
    pub log_ages: Vec<f64>,
    pub steps: usize,
    /// `log(X_n) / n`; absent for `steps = 0`.
    pub rate: Option<f64>,
}

impl SpineTrajectory {
    /// Fraction of steps `1..=n` spent in each label.
    pub fn label_frequencies(&self) -> [f64; 2] {
        if self.steps == 0 {
            return [0.0, 0.0];
        }
        let o = self.labels[1..].iter().filter(|&&l| l == Label::O).count() as f64;
        let n = self.steps as f64;
        [o / n, 1.0 - o / n]
    }
}

pub fn simulate_spine(m: u32, delta: f64, b: f64, steps: usize, seed: u64) -> Result<SpineTrajectory> {
    let sp = SpineParams::new(m, delta, b)?;
    let mut rng = StreamRng::new(seed);
    let mut labels = Vec::with_capacity(steps + 1);
    let mut log_ages = Vec::with_capacity(steps + 1);
    let mut label = Label::O;
    let mut log_x = 0.0;
    labels.push(label);
    log_ages.push(log_x);
    for _ in 0..steps {
        label = if rng.uniform() < sp.p[label.index()][0] {
            Label::O
        } else {
            Label::Y
        };
        log_x += sample_ratio(label, sp.chi, b, &mut rng).ln();
        labels.push(label);
        log_ages.push(log_x);
    }
    Ok(SpineTrajectory {
        labels,
        log_ages,
        steps,
        rate: (steps > 0).then(|| log_x / steps as f64),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub analytic: f64,
    pub empirical: f64,
    /// Standard error of `empirical`, where meaningful.
    pub se: Option<f64>,
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpineReport {
    pub m: u32,
    pub delta: f64,
    pub b: f64,
    pub applicable: bool,
    pub note: Option<String>,
    pub transition: Option<[[f64; 2]; 2]>,
    pub stationary: Option<[f64; 2]>,
    pub drift: Option<f64>,
    pub checks: Vec<Check>,
    pub all_pass: bool,
}

fn ratio_moments(label: Label, chi: f64, b: f64, draws: usize, seed: u64) -> Moments {
    let chunks = 64;
    let per = draws.div_ceil(chunks);
    let parts: Vec<Moments> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = StreamRng::new(seed_stream(seed, c as u64));
            let n = per.min(draws.saturating_sub(c * per));
            (0..n).map(|_| sample_ratio(label, chi, b, &mut rng).ln()).collect()
        })
        .collect();
    parts.iter().fold(Moments::default(), |mut acc, p| {
        acc.merge(p);
        acc
    })
}

/// Compares the stationary law, the two log-ratio means, the drift and the
/// supercriticality inequality against their closed forms. `budget` is the
/// number of ratio draws per label and of spine steps.
pub fn empirical_vs_analytic_report(m: u32, delta: f64, b: f64, budget: usize, seed: u64) -> Result<SpineReport> {
    if !(b > 1.0) || !b.is_finite() {
        return Err(Error::Parameter(format!("b must exceed 1 (got {b})")));
    }
    spectral::constants(m, delta)?;
    if delta <= 0.0 {
        return Ok(SpineReport {
            m,
            delta,
            b,
            applicable: false,
            note: Some("not applicable: the spine analysis needs delta > 0".into()),
            transition: None,
            stationary: None,
            drift: None,
            checks: Vec::new(),
            all_pass: false,
        });
    }
    let sp = SpineParams::new(m, delta, b)?;
    let chi = sp.chi;
    let drift = lyapunov_drift(m, delta, b)?;
    let root = StreamRng::new(seed);
    let traj = simulate_spine(m, delta, b, budget, root.child(0).key())?;
    let freq = traj.label_frequencies();
    let mut checks = Vec::new();
    checks.push(Check {
        name: "stationary_old".into(),
        analytic: sp.stationary[0],
        empirical: freq[0],
        se: None,
        tolerance: 0.01,
        pass: (freq[0] - sp.stationary[0]).abs() <= 0.01,
    });
    for (name, label, analytic, tag) in [
        ("log_ratio_old", Label::O, expected_log_ratio_old(chi), 1),
        ("log_ratio_young", Label::Y, expected_log_ratio_young(chi, b), 2),
    ] {
        let mo = ratio_moments(label, chi, b, budget, root.child(tag).key());
        checks.push(Check {
            name: name.into(),
            analytic,
            empirical: mo.mean(),
            se: Some(mo.se()),
            tolerance: 3.0 * mo.se(),
            pass: (mo.mean() - analytic).abs() <= 3.0 * mo.se(),
        });
    }
    let rate = traj.rate.unwrap_or(f64::NAN);
    let tol = (0.05 * drift.abs()).max(0.05);
    checks.push(Check {
        name: "drift".into(),
        analytic: drift,
        empirical: rate,
        se: None,
        tolerance: tol,
        pass: (rate - drift).abs() <= tol,
    });
    let sum = sp.p[0][0] + sp.p[1][0];
    checks.push(Check {
        name: "p_oo_plus_p_yo".into(),
        analytic: sum,
        empirical: sum,
        se: None,
        tolerance: 0.0,
        pass: sum > 1.0,
    });
    let all_pass = checks.iter().all(|c| c.pass);
    Ok(SpineReport {
        m,
        delta,
        b,
        applicable: true,
        note: None,
        transition: Some(sp.p),
        stationary: Some(sp.stationary),
        drift: Some(drift),
        checks,
        all_pass,
    })
}
