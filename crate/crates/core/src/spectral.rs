//! Closed-form spectral quantities of the Pólya point tree mean-offspring
//! operator, with independent numerical routes (quadrature residuals and
//! power iteration on a discretized kernel).
//!
//! The kernel on ages `x, y > 0` and labels `s, t ∈ {O, Y}` is
//!
//! ```text
//! κ((x,s),(y,t)) = c_st (1{y<x, t=O} + 1{y>x, t=Y}) / (max(x,y)^χ · min(x,y)^(1-χ))
//! ```
//!
//! with `χ = (m+δ)/(2m+δ)`. Functions `p_s/√x` are eigenfunctions whenever `p`
//! is a right eigenvector of the 2×2 matrix `M = (c_st)`, with eigenvalue
//! `λ/(χ - 1/2)`. The b-truncated kernel multiplies by `1{y <= b x}`, which
//! scales the Y column of `M` by `q = 1 - b^(1/2-χ)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quad;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    O,
    Y,
}

impl Label {
    pub fn index(self) -> usize {
        match self {
            Label::O => 0,
            Label::Y => 1,
        }
    }

    pub const BOTH: [Label; 2] = [Label::O, Label::Y];
}

pub fn chi(m: u32, delta: f64) -> f64 {
    let m = m as f64;
    (m + delta) / (2.0 * m + delta)
}

fn check_params(m: u32, delta: f64) -> Result<()> {
    if m < 1 {
        return Err(Error::Parameter("m must be at least 1".into()));
    }
    if !delta.is_finite() || delta <= -(m as f64) {
        return Err(Error::Parameter(format!("delta must exceed -m (got {delta})")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelConstants {
    pub chi: f64,
    pub c_oo: f64,
    pub c_oy: f64,
    pub c_yo: f64,
    pub c_yy: f64,
}

impl KernelConstants {
    pub fn c(&self, s: Label, t: Label) -> f64 {
        match (s, t) {
            (Label::O, Label::O) => self.c_oo,
            (Label::O, Label::Y) => self.c_oy,
            (Label::Y, Label::O) => self.c_yo,
            (Label::Y, Label::Y) => self.c_yy,
        }
    }

    /// `M_b` for truncation factor `q` (`q = 1` is the untruncated `M`).
    pub fn matrix(&self, q: f64) -> [[f64; 2]; 2] {
        [[self.c_oo, self.c_oy * q], [self.c_yo, self.c_yy * q]]
    }
}

pub fn constants(m: u32, delta: f64) -> Result<KernelConstants> {
    check_params(m, delta)?;
    let mf = m as f64;
    let den = 2.0 * mf + delta;
    Ok(KernelConstants {
        chi: chi(m, delta),
        c_oo: mf * (mf + delta) / den,
        c_oy: mf * (mf + 1.0 + delta) / den,
        c_yo: (mf - 1.0) * (mf + delta) / den,
        c_yy: mf * (mf + delta) / den,
    })
}

/// Kernel value; `b = Some(b)` applies the truncation `1{y <= b x}`.
pub fn kernel_eval(x: f64, s: Label, y: f64, t: Label, k: &KernelConstants, b: Option<f64>) -> Result<f64> {
    if !(x > 0.0 && y > 0.0) {
        return Err(Error::Domain(format!("ages must be positive (x = {x}, y = {y})")));
    }
    Ok(kernel_unchecked(x, s, y, t, k, b))
}

#[inline]
fn kernel_unchecked(x: f64, s: Label, y: f64, t: Label, k: &KernelConstants, b: Option<f64>) -> f64 {
    let admissible = match t {
        Label::O => y < x,
        Label::Y => y > x && b.is_none_or(|b| y <= b * x),
    };
    if !admissible {
        return 0.0;
    }
    let (hi, lo) = if x > y { (x, y) } else { (y, x) };
    k.c(s, t) / (hi.powf(k.chi) * lo.powf(1.0 - k.chi))
}

/// Perron root and its right eigenvector (normalized to sum 1) of a
/// nonnegative 2×2 matrix, by the quadratic formula.
pub fn perron_2x2(a: [[f64; 2]; 2]) -> (f64, [f64; 2]) {
    let half_tr = 0.5 * (a[0][0] + a[1][1]);
    let half_diff = 0.5 * (a[0][0] - a[1][1]);
    let lambda = half_tr + (half_diff * half_diff + a[0][1] * a[1][0]).sqrt();
    let v = if a[0][1] != 0.0 {
        [a[0][1], lambda - a[0][0]]
    } else if a[1][0] != 0.0 {
        [lambda - a[1][1], a[1][0]]
    } else if a[0][0] >= a[1][1] {
        [1.0, 0.0]
    } else {
        [0.0, 1.0]
    };
    let s = v[0] + v[1];
    (lambda, [v[0] / s, v[1] / s])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralNorm {
    pub lambda_m: f64,
    /// `+inf` when `delta <= 0`.
    pub r: f64,
    pub p: [f64; 2],
}

pub fn spectral_norm(m: u32, delta: f64) -> Result<SpectralNorm> {
    let k = constants(m, delta)?;
    let (lambda_m, p) = perron_2x2(k.matrix(1.0));
    let r = if delta > 0.0 {
        2.0 * lambda_m / (2.0 * k.chi - 1.0)
    } else {
        f64::INFINITY
    };
    Ok(SpectralNorm { lambda_m, r, p })
}

/// `2 (m(m+δ) + sqrt(m(m-1)(m+δ)(m+1+δ))) / δ`, written directly in `m, δ`.
pub fn spectral_norm_direct(m: u32, delta: f64) -> f64 {
    let mf = m as f64;
    2.0 * (mf * (mf + delta) + (mf * (mf - 1.0) * (mf + delta) * (mf + 1.0 + delta)).sqrt()) / delta
}

/// Critical retention probability: 0 for `delta <= 0`, else the inverse
/// spectral norm written in closed form.
pub fn pi_c(m: u32, delta: f64) -> Result<f64> {
    check_params(m, delta)?;
    if delta <= 0.0 {
        return Ok(0.0);
    }
    let mf = m as f64;
    Ok(delta / (2.0 * (mf * (mf + delta) + (mf * (mf - 1.0) * (mf + delta) * (mf + 1.0 + delta)).sqrt())))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruncatedSpectral {
    pub b: f64,
    pub q: f64,
    pub lambda_m_b: f64,
    pub r_b: f64,
    pub u_b: [f64; 2],
}

pub fn truncated_spectral(m: u32, delta: f64, b: f64) -> Result<TruncatedSpectral> {
    let k = constants(m, delta)?;
    if delta <= 0.0 {
        return Err(Error::Domain("truncated spectrum requires delta > 0".into()));
    }
    if !(b > 1.0) {
        return Err(Error::Domain(format!("truncation factor b must exceed 1 (got {b})")));
    }
    let q = 1.0 - b.powf(0.5 - k.chi);
    let (lambda_m_b, u_b) = perron_2x2(k.matrix(q));
    Ok(TruncatedSpectral {
        b,
        q,
        lambda_m_b,
        r_b: lambda_m_b / (k.chi - 0.5),
        u_b,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralReport {
    pub m: u32,
    pub delta: f64,
    pub constants: KernelConstants,
    pub lambda_m: f64,
    /// Serialized as `null` when infinite.
    pub r: f64,
    pub pi_c: f64,
    pub p: [f64; 2],
    pub truncated: Option<TruncatedSpectral>,
}

pub fn report(m: u32, delta: f64, b: Option<f64>) -> Result<SpectralReport> {
    let k = constants(m, delta)?;
    let sn = spectral_norm(m, delta)?;
    let truncated = match b {
        Some(b) if delta > 0.0 => Some(truncated_spectral(m, delta, b)?),
        Some(b) if !(b > 1.0) => return Err(Error::Domain(format!("b must exceed 1 (got {b})"))),
        _ => None,
    };
    Ok(SpectralReport {
        m,
        delta,
        constants: k,
        lambda_m: sn.lambda_m,
        r: sn.r,
        pi_c: pi_c(m, delta)?,
        p: sn.p,
        truncated,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResidualMethod {
    ClosedForm,
    Quadrature,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualPoint {
    pub age: f64,
    pub label: Label,
    /// `(T h)(x, s)`
    pub applied: f64,
    /// `r h(x, s)`
    pub expected: f64,
    pub rel_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub method: ResidualMethod,
    pub b: Option<f64>,
    pub eigenvalue: f64,
    pub max_rel_residual: f64,
    pub points: Vec<ResidualPoint>,
}

/// Relative residual of `T h = r h` at each test age and label.
///
/// With `b = Some(b)` this checks `h(x,s) = u_s^b/√x` against `r_b`; with
/// `b = None`, `f(x,s) = p_s/√x` against `r`. The quadrature route
/// integrates [`kernel_eval`] numerically on geometric panels, with the
/// innermost (or outermost, for the untruncated Y integral) remainder taken
/// from the power-law antiderivative.
pub fn eigen_residual(
    m: u32,
    delta: f64,
    b: Option<f64>,
    test_ages: &[f64],
    method: ResidualMethod,
) -> Result<ResidualReport> {
    let k = constants(m, delta)?;
    if delta <= 0.0 {
        return Err(Error::Domain("eigenfunction residual requires delta > 0".into()));
    }
    let (q, eigenvalue, vec) = match b {
        Some(b) => {
            let t = truncated_spectral(m, delta, b)?;
            (t.q, t.r_b, t.u_b)
        }
        None => {
            let s = spectral_norm(m, delta)?;
            (1.0, s.r, s.p)
        }
    };
    let efun = |y: f64, t: Label| vec[t.index()] / y.sqrt();
    let mut points = Vec::new();
    for &x in test_ages {
        if !(x > 0.0) {
            return Err(Error::Domain(format!("test ages must be positive (got {x})")));
        }
        for s in Label::BOTH {
            let applied = match method {
                ResidualMethod::ClosedForm => {
                    (k.c(s, Label::O) * vec[0] + k.c(s, Label::Y) * q * vec[1]) / ((k.chi - 0.5) * x.sqrt())
                }
                ResidualMethod::Quadrature => quadrature_apply(&k, b, x, s, &efun)?,
            };
            let expected = eigenvalue * efun(x, s);
            points.push(ResidualPoint {
                age: x,
                label: s,
                applied,
                expected,
                rel_residual: ((applied - expected) / expected).abs(),
            });
        }
    }
    let max_rel_residual = points.iter().map(|p| p.rel_residual).fold(0.0, f64::max);
    Ok(ResidualReport {
        method,
        b,
        eigenvalue,
        max_rel_residual,
        points,
    })
}

const QUAD_TOL: f64 = 1e-12;
const GEOMETRIC_PANELS: i32 = 240;

fn quadrature_apply(
    k: &KernelConstants,
    b: Option<f64>,
    x: f64,
    s: Label,
    efun: &impl Fn(f64, Label) -> f64,
) -> Result<f64> {
    // O children: y in (0, x). Panels [x 2^-(i+1), x 2^-i], then the power law on (0, eps).
    let f_o = |y: f64| kernel_unchecked(x, s, y, Label::O, k, b) * efun(y, Label::O);
    let mut total = 0.0;
    for i in 0..GEOMETRIC_PANELS {
        let hi = x * 0.5f64.powi(i);
        total += quad::integrate(f_o, 0.5 * hi, hi, QUAD_TOL)?;
    }
    let eps = x * 0.5f64.powi(GEOMETRIC_PANELS);
    // integrand = c_sO p_O x^{-χ} y^{χ-3/2}
    total += k.c(s, Label::O) * efun(1.0, Label::O) * x.powf(-k.chi) * eps.powf(k.chi - 0.5) / (k.chi - 0.5);

    // Y children: y in (x, b x], or (x, ∞) untruncated.
    let f_y = |y: f64| kernel_unchecked(x, s, y, Label::Y, k, b) * efun(y, Label::Y);
    match b {
        Some(b) => {
            let mut lo = x;
            while lo < b * x {
                let hi = (2.0 * lo).min(b * x);
                total += quad::integrate(f_y, lo, hi, QUAD_TOL)?;
                lo = hi;
            }
        }
        None => {
            for i in 0..GEOMETRIC_PANELS {
                let lo = x * 2f64.powi(i);
                total += quad::integrate(f_y, lo, 2.0 * lo, QUAD_TOL)?;
            }
            let big = x * 2f64.powi(GEOMETRIC_PANELS);
            // integrand = c_sY p_Y x^{χ-1} y^{-χ-1/2}
            total +=
                k.c(s, Label::Y) * efun(1.0, Label::Y) * x.powf(k.chi - 1.0) * big.powf(0.5 - k.chi) / (k.chi - 0.5);
        }
    }
    Ok(total)
}

/// Log-spaced discretization `x_i`, `i < n`, of `[x_min, x_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub n: usize,
}

/// The `2n × 2n` operator `K[(i,s),(j,t)] = κ_b((x_i,s),(x_j,t)) w_j` with
/// log-trapezoid weights `w_j = x_j Δ` (halved at both ends).
///
/// Matrix-vector products use prefix sums over the separable kernel, O(n)
/// per product and the same matrix entrywise as [`DiscretizedKernel::dense`].
#[derive(Debug, Clone)]
pub struct DiscretizedKernel {
    k: KernelConstants,
    ages: Vec<f64>,
    weights: Vec<f64>,
    /// Last index `j` with `x_j <= b x_i`.
    y_reach: Vec<usize>,
    b: f64,
}

impl DiscretizedKernel {
    pub fn new(m: u32, delta: f64, b: f64, grid: GridSpec) -> Result<Self> {
        let k = constants(m, delta)?;
        if !(grid.x_min > 0.0 && grid.x_max > grid.x_min && grid.n >= 2) {
            return Err(Error::Parameter("grid needs 0 < x_min < x_max and n >= 2".into()));
        }
        if !(b > 1.0) {
            return Err(Error::Domain(format!("b must exceed 1 (got {b})")));
        }
        let n = grid.n;
        let (l0, l1) = (grid.x_min.ln(), grid.x_max.ln());
        let dl = (l1 - l0) / (n - 1) as f64;
        let ages: Vec<f64> = (0..n).map(|i| (l0 + dl * i as f64).exp()).collect();
        let mut weights: Vec<f64> = ages.iter().map(|x| x * dl).collect();
        weights[0] *= 0.5;
        weights[n - 1] *= 0.5;
        let mut y_reach = Vec::with_capacity(n);
        let mut j = 0;
        for i in 0..n {
            while j + 1 < n && ages[j + 1] <= b * ages[i] {
                j += 1;
            }
            y_reach.push(j.max(i));
        }
        Ok(DiscretizedKernel {
            k,
            ages,
            weights,
            y_reach,
            b,
        })
    }

    pub fn dim(&self) -> usize {
        2 * self.ages.len()
    }

    pub fn ages(&self) -> &[f64] {
        &self.ages
    }

    /// `out = K v`, with `v = (v_O, v_Y)` stacked.
    pub fn apply(&self, v: &[f64], out: &mut [f64]) {
        let n = self.ages.len();
        let chi = self.k.chi;
        let (v_o, v_y) = v.split_at(n);
        // prefix_o[i] = Σ_{j<i} x_j^{χ-1} w_j v_O[j]
        let mut prefix_o = vec![0.0; n + 1];
        let mut prefix_y = vec![0.0; n + 1];
        for j in 0..n {
            let x = self.ages[j];
            prefix_o[j + 1] = prefix_o[j] + x.powf(chi - 1.0) * self.weights[j] * v_o[j];
            prefix_y[j + 1] = prefix_y[j] + x.powf(-chi) * self.weights[j] * v_y[j];
        }
        for i in 0..n {
            let x = self.ages[i];
            let older = x.powf(-chi) * prefix_o[i];
            let younger = x.powf(chi - 1.0) * (prefix_y[self.y_reach[i] + 1] - prefix_y[i + 1]);
            for s in Label::BOTH {
                out[s.index() * n + i] = self.k.c(s, Label::O) * older + self.k.c(s, Label::Y) * younger;
            }
        }
    }

    /// Dense row-major matrix, for small grids and cross-checks.
    pub fn dense(&self) -> Vec<f64> {
        let n = self.ages.len();
        let dim = 2 * n;
        let mut a = vec![0.0; dim * dim];
        for s in Label::BOTH {
            for t in Label::BOTH {
                for i in 0..n {
                    for j in 0..n {
                        a[(s.index() * n + i) * dim + t.index() * n + j] =
                            kernel_unchecked(self.ages[i], s, self.ages[j], t, &self.k, Some(self.b)) * self.weights[j];
                    }
                }
            }
        }
        a
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerIterationResult {
    pub grid: GridSpec,
    pub b: f64,
    pub estimate: f64,
    pub iterations: usize,
}

pub const POWER_MAX_ITERATIONS: usize = 10_000;
pub const POWER_REL_TOL: f64 = 1e-10;
pub const POWER_STABLE_STEPS: usize = 5;

/// Largest eigenvalue of the discretized truncated operator by power
/// iteration. Converged once the Rayleigh quotient changes by less than
/// `1e-10` (relative) on 5 consecutive iterations.
///
/// The grid is a finite section of an operator that is not self-adjoint, and
/// finite sections converge to [`finite_section_limit`], not to `r_b`.
pub fn power_iteration_norm(m: u32, delta: f64, b: f64, grid: GridSpec) -> Result<PowerIterationResult> {
    if delta <= 0.0 {
        return Err(Error::Domain("power iteration target requires delta > 0".into()));
    }
    let op = DiscretizedKernel::new(m, delta, b, grid)?;
    let dim = op.dim();
    let mut v = vec![1.0 / (dim as f64).sqrt(); dim];
    let mut w = vec![0.0; dim];
    let mut prev = f64::NAN;
    let mut stable = 0;
    for it in 1..=POWER_MAX_ITERATIONS {
        op.apply(&v, &mut w);
        let rq: f64 = v.iter().zip(&w).map(|(a, b)| a * b).sum();
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::NonConvergence {
                method: "power iteration",
                iterations: it,
                last: [prev, rq],
            });
        }
        for (vi, wi) in v.iter_mut().zip(&w) {
            *vi = wi / norm;
        }
        if ((rq - prev) / rq).abs() < POWER_REL_TOL {
            stable += 1;
            if stable >= POWER_STABLE_STEPS {
                return Ok(PowerIterationResult {
                    grid,
                    b,
                    estimate: rq,
                    iterations: it,
                });
            }
        } else {
            stable = 0;
        }
        if it == POWER_MAX_ITERATIONS {
            return Err(Error::NonConvergence {
                method: "power iteration",
                iterations: it,
                last: [prev, rq],
            });
        }
        prev = rq;
    }
    unreachable!()
}

/// Perron root of the 2×2 matrix obtained by applying the truncated operator
/// to power functions `g_s(x) = w_s x^{-a}` (requires `a < χ`).
pub fn power_weight_radius(k: &KernelConstants, b: f64, a: f64) -> f64 {
    let older = 1.0 / (k.chi - a);
    let e = 1.0 - k.chi - a;
    let younger = if e.abs() < 1e-12 { b.ln() } else { (b.powf(e) - 1.0) / e };
    perron_2x2([[k.c_oo * older, k.c_oy * younger], [k.c_yo * older, k.c_yy * younger]]).0
}

/// Large-interval limit of the top eigenvalue of finite sections
/// `[x_min, x_max]` of the truncated operator: `min_a` of
/// [`power_weight_radius`]. Equal to `r_b` only if the minimum sits at `a = 1/2`.
pub fn finite_section_limit(m: u32, delta: f64, b: f64) -> Result<(f64, f64)> {
    let k = constants(m, delta)?;
    if !(b > 1.0) {
        return Err(Error::Domain(format!("b must exceed 1 (got {b})")));
    }
    // log-convex in a; golden-section search
    let f = |a: f64| power_weight_radius(&k, b, a);
    let (mut lo, mut hi) = (k.chi - 60.0, k.chi - 1e-9);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = hi - g * (hi - lo);
    let mut d = lo + g * (hi - lo);
    for _ in 0..200 {
        if f(c) < f(d) {
            hi = d;
        } else {
            lo = c;
        }
        c = hi - g * (hi - lo);
        d = lo + g * (hi - lo);
    }
    let a = 0.5 * (lo + hi);
    Ok((a, f(a)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementRow {
    pub n: usize,
    pub x_min: f64,
    pub x_max: f64,
    pub estimate: f64,
    pub iterations: usize,
    pub r_b: f64,
    pub rel_gap: f64,
}

/// Power-iteration estimates over a sequence of grid sizes.
pub fn refinement_study(
    m: u32,
    delta: f64,
    b: f64,
    x_min: f64,
    x_max: f64,
    sizes: &[usize],
) -> Result<Vec<RefinementRow>> {
    let r_b = truncated_spectral(m, delta, b)?.r_b;
    sizes
        .iter()
        .map(|&n| {
            let res = power_iteration_norm(m, delta, b, GridSpec { x_min, x_max, n })?;
            Ok(RefinementRow {
                n,
                x_min,
                x_max,
                estimate: res.estimate,
                iterations: res.iterations,
                r_b,
                rel_gap: (res.estimate - r_b) / r_b,
            })
        })
        .collect()
}
