//! Single-type lower-bound branching process for `delta <= 0`.
//!
//! A particle stands for a node at age `h` with O-strength. Its offspring are
//! its elbow children: O-children, kept with probability π and only if their
//! age is at most `h`, of its retained Y-children on `[h, 1]`. Larger `h`
//! cannot increase the offspring of a real tree node, so survival of this
//! process bounds the percolated tree from below.

use rand_distr::{Binomial, Distribution, Gamma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ppt::SurvivalEstimate;
use crate::rng::{seed_stream, StreamRng};
use crate::spectral;
use crate::stats::Moments;

fn check(pi: f64, m: u32, delta: f64) -> Result<spectral::KernelConstants> {
    let k = spectral::constants(m, delta)?;
    if delta > 0.0 {
        return Err(Error::Domain("the elbow process needs delta <= 0".into()));
    }
    if !(0.0..=1.0).contains(&pi) {
        return Err(Error::Parameter(format!("pi must lie in [0, 1] (got {pi})")));
    }
    Ok(k)
}

/// Mean offspring as a function of `log h`, valid for any `log h < 0`.
fn mean_at_log(k: &spectral::KernelConstants, pi: f64, log_h: f64) -> f64 {
    let chi = k.chi;
    let scale = k.c_oy * k.c_yo * pi * pi / chi;
    let e = 1.0 - 2.0 * chi;
    if e.abs() < 1e-12 {
        scale * -log_h
    } else {
        // h^{2χ-1} (1 - h^{1-2χ}) / (1 - 2χ) = (h^{-e} - 1) / e
        scale * (-e * log_h).exp_m1() / e
    }
}

/// Expected number of elbow children of a particle at age `h_cut`.
///
/// `c_OY c_YO π² h^{2χ-1} (1 - h^{1-2χ}) / (χ (1 - 2χ))` for `delta < 0`, and
/// its limit `c_OY c_YO π² log(1/h) / χ` at `delta = 0`.
pub fn elbow_bp_mean(pi: f64, h_cut: f64, m: u32, delta: f64) -> Result<f64> {
    let k = check(pi, m, delta)?;
    if !(h_cut > 0.0 && h_cut < 1.0) {
        return Err(Error::Parameter(format!("h must lie in (0, 1) (got {h_cut})")));
    }
    Ok(mean_at_log(&k, pi, h_cut.ln()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElbowThreshold {
    /// `log` of the age at which the mean offspring equals 1.
    pub log_h_critical: f64,
    pub h_critical: f64,
    /// Recommended cut, `h_critical / 2` (may underflow to 0 in `h`; use the log).
    pub log_h_cut: f64,
    pub h_cut: f64,
    pub mean_at_cut: f64,
}

/// Finds the age where the mean offspring crosses 1 by bisection in `log h`,
/// and returns a cut below it (supercritical lower-bound process).
pub fn choose_elbow_threshold(pi: f64, m: u32, delta: f64) -> Result<ElbowThreshold> {
    let k = check(pi, m, delta)?;
    if !(pi > 0.0) {
        return Err(Error::Domain("no threshold exists at pi = 0".into()));
    }
    if k.c_yo == 0.0 {
        return Err(Error::Domain("m = 1 has no elbow children".into()));
    }
    let f = |l: f64| mean_at_log(&k, pi, l) - 1.0;
    let mut hi = 0.0f64;
    let mut lo = -1.0f64;
    while f(lo) <= 0.0 {
        hi = lo;
        lo *= 2.0;
        if !lo.is_finite() {
            return Err(Error::NonConvergence {
                method: "elbow threshold bracketing",
                iterations: 0,
                last: [hi, lo],
            });
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * lo.abs() {
            break;
        }
    }
    let log_h_critical = 0.5 * (lo + hi);
    let log_h_cut = log_h_critical - std::f64::consts::LN_2;
    Ok(ElbowThreshold {
        log_h_critical,
        h_critical: log_h_critical.exp(),
        log_h_cut,
        h_cut: log_h_cut.exp(),
        mean_at_cut: mean_at_log(&k, pi, log_h_cut),
    })
}

/// Offspring sampler for the elbow process.
///
/// Candidates form a Poisson process on `[h, 1]` with intensity
/// `Γ π² (1-χ)(m-1) h^{2χ-1} t^{-2χ}`, the expected number of retained
/// elbow children routed through a Y-child at age `t`. A candidate at `t` is
/// accepted with probability `P(B >= 1) / E[B]`, `B ~ Bin(m-1, p)`,
/// `p = π (h/t)^χ`, and then contributes `B` conditioned on `B >= 1`. This
/// reproduces the exact offspring law at a cost proportional to the mean.
#[derive(Debug, Clone)]
pub struct ElbowSampler {
    pi: f64,
    h: f64,
    chi: f64,
    slots: u32,
    strength: Gamma<f64>,
}

impl ElbowSampler {
    pub fn new(pi: f64, h_cut: f64, m: u32, delta: f64) -> Result<Self> {
        let k = check(pi, m, delta)?;
        if !(h_cut > 0.0 && h_cut < 1.0) {
            return Err(Error::Parameter(format!("h must lie in (0, 1) (got {h_cut})")));
        }
        Ok(ElbowSampler {
            pi,
            h: h_cut,
            chi: k.chi,
            slots: m - 1,
            strength: Gamma::new(m as f64 + delta + 1.0, 1.0).map_err(|e| Error::Parameter(e.to_string()))?,
        })
    }

    pub fn sample(&self, rng: &mut StreamRng) -> u64 {
        if self.slots == 0 || self.pi == 0.0 {
            return 0;
        }
        let gamma = self.strength.sample(rng);
        let (h, chi, pi) = (self.h, self.chi, self.pi);
        let slots = self.slots as f64;
        let c = gamma * pi * pi * (1.0 - chi) * slots * h.powf(2.0 * chi - 1.0);
        let e = 1.0 - 2.0 * chi;
        let mut s = 0.0;
        let mut total = 0;
        loop {
            s += rng.exp1();
            // invert the cumulative envelope c ∫_h^t u^{-2χ} du
            let t = if e.abs() < 1e-12 {
                h * (s / c).exp()
            } else {
                (h.powf(e) + e * s / c).powf(1.0 / e)
            };
            if !(t <= 1.0) {
                break;
            }
            let p = pi * (h / t).powf(chi);
            let hit = 1.0 - (1.0 - p).powi(self.slots as i32);
            if rng.uniform() * slots * p < hit {
                total += self.conditioned_binomial(p, rng);
            }
        }
        total
    }

    fn conditioned_binomial(&self, p: f64, rng: &mut StreamRng) -> u64 {
        if self.slots == 1 {
            return 1;
        }
        let bin = Binomial::new(self.slots as u64, p).expect("valid binomial");
        loop {
            let b = bin.sample(rng);
            if b >= 1 {
                return b;
            }
        }
    }
}

/// Sample mean of the offspring count over `draws` independent particles.
pub fn offspring_moments(pi: f64, h_cut: f64, m: u32, delta: f64, draws: usize, seed: u64) -> Result<Moments> {
    let sampler = ElbowSampler::new(pi, h_cut, m, delta)?;
    let counts: Vec<f64> = (0..draws)
        .into_par_iter()
        .map(|i| sampler.sample(&mut StreamRng::new(seed_stream(seed, i as u64))) as f64)
        .collect();
    Ok(counts.into_iter().collect())
}

#[allow(clippy::too_many_arguments)]
pub fn simulate_elbow_bp(
    pi: f64,
    h_cut: f64,
    m: u32,
    delta: f64,
    generations: u32,
    cap: usize,
    replicas: usize,
    seed: u64,
) -> Result<SurvivalEstimate> {
    let sampler = ElbowSampler::new(pi, h_cut, m, delta)?;
    if generations < 1 || cap < 1 || replicas < 1 {
        return Err(Error::Parameter(
            "generations, cap and replicas must all be at least 1".into(),
        ));
    }
    let outcomes: Vec<bool> = (0..replicas)
        .into_par_iter()
        .map(|r| {
            let mut rng = StreamRng::new(seed_stream(seed, r as u64));
            let mut z: u64 = 1;
            if cap <= 1 {
                return true;
            }
            for _ in 0..generations {
                let mut next = 0;
                for _ in 0..z {
                    next += sampler.sample(&mut rng);
                    if next >= cap as u64 {
                        return true;
                    }
                }
                if next == 0 {
                    return false;
                }
                z = next;
            }
            true
        })
        .collect();
    let survivals = outcomes.iter().filter(|&&s| s).count();
    Ok(SurvivalEstimate::from_counts(pi, generations, cap, replicas, survivals))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Offspring of one particle built node by node: Y-children at intensity
    /// π Γ (1-χ) t^{-χ} / h^{1-χ} on [h, 1], each with m-1 O-children at
    /// ages U^{1/χ} t, retained with probability π when at most h.
    fn naive_offspring(pi: f64, h: f64, m: u32, delta: f64, rng: &mut StreamRng) -> u64 {
        let chi = spectral::chi(m, delta);
        let gamma = Gamma::new(m as f64 + delta + 1.0, 1.0).unwrap().sample(rng);
        let rate = pi * gamma;
        let mut s = 0.0;
        let mut total = 0;
        loop {
            s += rng.exp1();
            let t = h * (1.0 + s / rate).powf(1.0 / (1.0 - chi));
            if t > 1.0 {
                break;
            }
            for _ in 0..m - 1 {
                let age = rng.uniform_open().powf(1.0 / chi) * t;
                if rng.uniform() < pi && age <= h {
                    total += 1;
                }
            }
        }
        total
    }

    #[test]
    fn closed_form_examples() {
        let v = elbow_bp_mean(0.1, 1e-6, 2, -1.0).unwrap();
        assert!((v - 3.96).abs() < 1e-10, "{v}");
        let k = spectral::constants(2, 0.0).unwrap();
        let h = (-16.0f64 / 3.0).exp();
        let v = elbow_bp_mean(0.5, h, 2, 0.0).unwrap();
        assert!((v - k.c_oy * k.c_yo * 0.25 * (16.0 / 3.0) / 0.5).abs() < 1e-12);
        assert!(elbow_bp_mean(0.5, 1.0 - 1e-12, 2, -1.0).unwrap() < 1e-9);
        assert!(matches!(elbow_bp_mean(0.5, 0.1, 2, 0.5), Err(Error::Domain(_))));
    }

    #[test]
    fn delta_zero_is_the_limit() {
        let at0 = elbow_bp_mean(0.3, 1e-4, 2, 0.0).unwrap();
        let near = elbow_bp_mean(0.3, 1e-4, 2, -1e-7).unwrap();
        assert!((at0 - near).abs() / at0 < 1e-5);
    }

    #[test]
    fn threshold_inverts_mean() {
        let t = choose_elbow_threshold(0.1, 2, -1.0).unwrap();
        assert!((elbow_bp_mean(0.1, t.h_critical, 2, -1.0).unwrap() - 1.0).abs() < 1e-9);
        // closed form: h^{-1/3} = 1 + 1/(4 π²)
        let exact = (1.0 + 1.0 / (4.0 * 0.01f64)).powf(-3.0);
        assert!((t.h_critical - exact).abs() / exact < 1e-10);
        assert!(t.mean_at_cut > 1.0);

        let k = spectral::constants(2, 0.0).unwrap();
        let t1 = choose_elbow_threshold(1.0, 2, 0.0).unwrap();
        let exact = -k.chi / (k.c_oy * k.c_yo);
        assert!((t1.log_h_critical - exact).abs() < 1e-12);
        let t2 = choose_elbow_threshold(0.5, 2, 0.0).unwrap();
        assert!(t2.log_h_critical < t1.log_h_critical);
        // tiny pi still yields a threshold, in log scale
        let t3 = choose_elbow_threshold(1e-3, 2, 0.0).unwrap();
        assert!(t3.log_h_critical < -1e5 && t3.h_critical == 0.0);
        assert!(choose_elbow_threshold(0.5, 2, 1.0).is_err());
        assert!(choose_elbow_threshold(0.5, 1, -0.5).is_err());
    }

    #[test]
    fn envelope_matches_naive_law() {
        let (pi, h, m, delta) = (0.3, 1e-3, 3, -1.0);
        let s = ElbowSampler::new(pi, h, m, delta).unwrap();
        let mut fast = [0u64; 12];
        let mut slow = [0u64; 12];
        let draws = 40_000;
        for i in 0..draws {
            fast[(s.sample(&mut StreamRng::new(seed_stream(1, i))) as usize).min(11)] += 1;
            slow[(naive_offspring(pi, h, m, delta, &mut StreamRng::new(seed_stream(2, i))) as usize).min(11)] += 1;
        }
        for i in 0..12 {
            let (a, b) = (fast[i] as f64 / draws as f64, slow[i] as f64 / draws as f64);
            let se = ((a * (1.0 - a) + b * (1.0 - b)) / draws as f64).sqrt();
            assert!((a - b).abs() < 4.5 * se.max(1e-4), "bin {i}: {a} vs {b}");
        }
    }

    #[test]
    fn envelope_mean_matches_closed_form_at_delta_zero() {
        let (pi, h) = (0.6, 1e-3);
        let est = offspring_moments(pi, h, 2, 0.0, 100_000, 8).unwrap();
        let target = elbow_bp_mean(pi, h, 2, 0.0).unwrap();
        assert!(
            (est.mean() - target).abs() < 3.0 * est.se(),
            "{} vs {target}",
            est.mean()
        );
    }

    #[test]
    fn trivial_survival() {
        assert_eq!(simulate_elbow_bp(0.0, 0.1, 2, -1.0, 3, 10, 50, 1).unwrap().survivals, 0);
        // mean 0.5 subcritical
        let t = choose_elbow_threshold(0.2, 2, -1.0).unwrap();
        let h = (t.log_h_critical + 2.0).exp();
        assert!(elbow_bp_mean(0.2, h, 2, -1.0).unwrap() < 0.5);
        let short = simulate_elbow_bp(0.2, h, 2, -1.0, 2, 10_000, 2000, 3).unwrap();
        let long = simulate_elbow_bp(0.2, h, 2, -1.0, 12, 10_000, 2000, 3).unwrap();
        assert!(long.survival_frac <= short.survival_frac && long.survival_frac < 0.01);
    }
}
