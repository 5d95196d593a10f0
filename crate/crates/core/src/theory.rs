//! Growth-rate function `K`, the optimal bias ratio `D*`, single-neuron
//! replay of the small-output dynamics, and a certified lower bound on the
//! single-coordinate LDR of a two-layer network.
//!
//! Throughout, `x = √ᾱ x₀ + √(1−ᾱ) ξ` with `x₀ ~ p` and `ξ ~ N(0, I)`, and
//! `K(w, b) = E[ξ^{(i)} ReLU(wᵀx + b)]` on the unit sphere `‖w‖² + b² = 1`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::diffusion::sample_xt;
use crate::dist::HypercubeDensity;
use crate::error::{invalid, LabError, Result};
use crate::net::TwoLayerScoreNet;
use crate::numeric::{erf, gauss_hermite, golden_section_max, mean_stderr, rng_from_seed};

/// Tolerance on `‖w‖² + b² = 1` accepted by [`k_eval`].
pub const SPHERE_TOL: f64 = 1e-10;
pub const DEFAULT_GH_NODES: usize = 24;
/// Upper end of the `D*` search interval.
pub const D_MAX: f64 = 50.0;
const D_GRID_STEP: f64 = 1e-2;

#[derive(Debug, Clone)]
pub struct GrowthContext {
    pub coord: usize,
    pub alpha_bar: f64,
    pub dist: HypercubeDensity,
}

impl GrowthContext {
    pub fn new(coord: usize, alpha_bar: f64, dist: HypercubeDensity) -> Result<Self> {
        if !(alpha_bar > 0.0 && alpha_bar < 1.0) {
            return Err(invalid(format!("alpha_bar must lie in (0, 1), got {alpha_bar}")));
        }
        if coord >= dist.d() {
            return Err(invalid(format!("coordinate {coord} out of range for d = {}", dist.d())));
        }
        Ok(Self { coord, alpha_bar, dist })
    }

    pub fn d(&self) -> usize {
        self.dist.d()
    }

    fn noise_scale(&self) -> f64 {
        (1.0 - self.alpha_bar).sqrt()
    }

    /// `√ᾱ wᵀx₀ + b` for every support point.
    fn means(&self, w: &[f64], b: f64) -> Vec<f64> {
        let sa = self.alpha_bar.sqrt();
        self.dist.support().map(|x0| sa * dot(w, x0) + b).collect()
    }

    fn off_axis_norm(&self, w: &[f64]) -> f64 {
        w.iter().enumerate().filter(|&(k, _)| k != self.coord).map(|(_, v)| v * v).sum::<f64>().sqrt()
    }

    fn check_direction(&self, w: &[f64], b: f64) -> Result<()> {
        if w.len() != self.d() {
            return Err(LabError::ShapeMismatch { expected: self.d(), got: w.len() });
        }
        let norm = dot(w, w) + b * b;
        if (norm - 1.0).abs() > SPHERE_TOL {
            return Err(invalid(format!("(w, b) must lie on the unit sphere, ‖w‖² + b² = {norm}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KEstimate {
    pub value: f64,
    pub stderr: f64,
}

/// `½(B + |B| erf(A / (√2 B)))` averaged over the support, for one off-axis
/// offset `off = √(1−ᾱ) wᵀP_iξ`.
fn k_integrand(means: &[f64], mass: &[f64], big_b: f64, off: f64) -> f64 {
    let scale = std::f64::consts::SQRT_2 * big_b.abs();
    means.iter().zip(mass).map(|(mu, p)| p * 0.5 * big_b * (1.0 + erf((mu + off) / scale))).sum()
}

/// Monte Carlo estimate of `K(w, b)`: exact enumeration over the support of
/// `x₀` and `n_mc` draws of `ξ`.
pub fn k_eval<R: Rng + ?Sized>(ctx: &GrowthContext, w: &[f64], b: f64, n_mc: usize, rng: &mut R) -> Result<KEstimate> {
    ctx.check_direction(w, b)?;
    if n_mc == 0 {
        return Err(invalid("n_mc must be at least 1"));
    }
    let c = ctx.noise_scale();
    let big_b = c * w[ctx.coord];
    if big_b == 0.0 {
        return Ok(KEstimate { value: 0.0, stderr: 0.0 });
    }
    let means = ctx.means(w, b);
    let mass = ctx.dist.point_mass();
    let mut xi = vec![0.0; ctx.d()];
    let draws: Vec<f64> = (0..n_mc)
        .map(|_| {
            xi.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
            let proj: f64 = w.iter().zip(&xi).enumerate().filter(|&(k, _)| k != ctx.coord).map(|(_, (w, x))| w * x).sum();
            k_integrand(&means, mass, big_b, c * proj)
        })
        .collect();
    let (value, stderr) = mean_stderr(&draws);
    Ok(KEstimate { value, stderr })
}

/// `K(w, b)` by Gauss–Hermite. The off-axis projection is a scalar
/// Gaussian of standard deviation `s = √(1−ᾱ)‖P_i w‖`; of it and `ξ^{(i)}`,
/// the one with the larger scale is integrated in closed form so that the
/// remaining one-dimensional integrand stays smooth.
pub fn k_eval_gh(ctx: &GrowthContext, w: &[f64], b: f64, nodes: usize) -> Result<f64> {
    ctx.check_direction(w, b)?;
    let c = ctx.noise_scale();
    let big_b = c * w[ctx.coord];
    if big_b == 0.0 {
        return Ok(0.0);
    }
    let means = ctx.means(w, b);
    let mass = ctx.dist.point_mass();
    let spread = c * ctx.off_axis_norm(w);
    if spread == 0.0 {
        return Ok(k_integrand(&means, mass, big_b, 0.0));
    }
    let (z, wt) = gauss_hermite(nodes.max(1));
    if spread < big_b.abs() {
        return Ok(z.iter().zip(&wt).map(|(z, q)| q * k_integrand(&means, mass, big_b, spread * z)).sum());
    }
    // E[ξ E_Z ReLU(μ + Bξ + sZ)] with E_Z ReLU(u + sZ) = u Φ(u/s) + s φ(u/s)
    let smooth_relu = |u: f64| {
        let r = u / spread;
        u * 0.5 * (1.0 + erf(r / std::f64::consts::SQRT_2)) + spread * (-0.5 * r * r).exp() / (2.0 * std::f64::consts::PI).sqrt()
    };
    Ok(z.iter()
        .zip(&wt)
        .map(|(xi, q)| q * xi * means.iter().zip(mass).map(|(mu, p)| p * smooth_relu(mu + big_b * xi)).sum::<f64>())
        .sum())
}

/// `(1+D²)^{-1/2}(1 + ½erf((D+√ᾱ)/√(2(1−ᾱ))) + ½erf((D−√ᾱ)/√(2(1−ᾱ))))`.
pub fn f_of_d(alpha_bar: f64, d: f64) -> f64 {
    let s = (2.0 * (1.0 - alpha_bar)).sqrt();
    let shift = alpha_bar.sqrt();
    (1.0 + 0.5 * erf((d + shift) / s) + 0.5 * erf((d - shift) / s)) / (1.0 + d * d).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DStar {
    pub d_star: f64,
    pub f_max: f64,
    /// `|f'(D*)|` by central differences.
    pub residual: f64,
}

pub fn solve_d_star(alpha_bar: f64) -> Result<DStar> {
    if !(alpha_bar > 0.0 && alpha_bar < 1.0) {
        return Err(invalid(format!("alpha_bar must lie in (0, 1), got {alpha_bar}")));
    }
    let f = |d: f64| f_of_d(alpha_bar, d);
    // f is not unimodal for ᾱ near 1 (a second, lower peak appears near 0),
    // so the golden-section search runs inside the best cell of a grid.
    let cells = (D_MAX / D_GRID_STEP).round() as usize;
    let best =
        (0..=cells).map(|k| (k, f(k as f64 * D_GRID_STEP))).max_by(|x, y| x.1.total_cmp(&y.1)).map(|(k, _)| k).unwrap_or(0);
    if best == 0 || best == cells {
        return Err(LabError::BoundaryMaximizer(best as f64 * D_GRID_STEP));
    }
    let (lo, hi) = ((best - 1) as f64 * D_GRID_STEP, (best + 1) as f64 * D_GRID_STEP);
    let (d_star, f_max) = golden_section_max(f, lo, hi, 1e-10);
    let h = 1e-5;
    let residual = ((f(d_star + h) - f(d_star - h)) / (2.0 * h)).abs();
    Ok(DStar { d_star, f_max, residual })
}

/// Unit direction `(±e_i, D) / √(1+D²)`.
pub fn ray_direction(d: usize, coord: usize, d_value: f64, positive: bool) -> (Vec<f64>, f64) {
    let norm = (1.0 + d_value * d_value).sqrt();
    let mut w = vec![0.0; d];
    w[coord] = if positive { 1.0 } else { -1.0 } / norm;
    (w, d_value / norm)
}

/// `G(w, b) = E[ξ^{(i)} ReLU(wᵀx + b)]` for unnormalized `(w, b)` and its
/// gradient, from the Gaussian identity `E[ξ σ(u + βξ)] = β E[σ'(u + βξ)]`.
fn surrogate_moments(ctx: &GrowthContext, w: &[f64], b: f64) -> (f64, Vec<f64>, f64) {
    let d = ctx.d();
    let i = ctx.coord;
    let c = ctx.noise_scale();
    let sa = ctx.alpha_bar.sqrt();
    let r = dot(w, w).sqrt();
    let mass = ctx.dist.point_mass();
    let mut gw = vec![0.0; d];
    if r < 1e-300 {
        if b > 0.0 {
            gw[i] = c;
        }
        return (0.0, gw, 0.0);
    }
    let cr = c * r;
    let (mut g, mut gb) = (0.0, 0.0);
    let mut phi_x = vec![0.0; d];
    let (mut phi_sum, mut phi_mu) = (0.0, 0.0);
    for (x0, p) in ctx.dist.support().zip(mass) {
        let mu = sa * dot(w, x0) + b;
        let z = mu / cr;
        let cdf = 0.5 * (1.0 + erf(z / std::f64::consts::SQRT_2));
        let phi = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
        g += p * cdf;
        phi_sum += p * phi;
        phi_mu += p * phi * mu;
        for (acc, x) in phi_x.iter_mut().zip(x0) {
            *acc += p * phi * x;
        }
    }
    let wi = w[i];
    // ∂z/∂w = √ᾱ x₀/(c r) − μ w/(c r³), ∂z/∂b = 1/(c r)
    for k in 0..d {
        gw[k] = c * wi * (sa * phi_x[k] / cr - phi_mu * w[k] / (cr * r * r));
    }
    gw[i] += c * g;
    gb += wi * phi_sum / r;
    (c * wi * g, gw, gb)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplayConfig {
    /// Total flow time `s`.
    pub horizon: f64,
    pub eta: f64,
    pub record_every: usize,
    pub gh_nodes: usize,
}

impl Default for ReplayConfig {
    fn default() -> Self {
        Self { horizon: 4.0, eta: 1e-3, record_every: 10, gh_nodes: DEFAULT_GH_NODES }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeuronState {
    pub a: f64,
    pub b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayPoint {
    pub s: f64,
    pub a: f64,
    pub b: f64,
    pub w: Vec<f64>,
    /// `|a₀| exp(2 sgn(a₀) ∫K)`.
    pub predicted: f64,
    pub k: f64,
    /// Distance of the normalized `(w, b)` from the invariant ray of the same sign.
    pub ray_distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthReplay {
    pub d_star: f64,
    pub trajectory: Vec<ReplayPoint>,
    /// Over recorded points with `|a| ≤ 10|a₀|`.
    pub max_rel_dev: f64,
    pub max_ray_drift: f64,
    /// Minimum over consecutive records of `a · ΔK/Δs`.
    pub min_rate_change: f64,
}

/// Euler integration of the single-neuron surrogate flow
/// `ȧ = 2G(w,b)`, `ẇ = 2a∇_wG`, `ḃ = 2a∂_bG` next to the prediction
/// `|a(s)| = |a₀| exp(2 sgn(a₀) ∫₀ˢ K(w/|a|, b/|a|) dτ)`.
pub fn growth_replay(ctx: &GrowthContext, a0: f64, w0: &[f64], b0: f64, cfg: &ReplayConfig) -> Result<GrowthReplay> {
    if w0.len() != ctx.d() {
        return Err(LabError::ShapeMismatch { expected: ctx.d(), got: w0.len() });
    }
    let rho0 = (dot(w0, w0) + b0 * b0).sqrt();
    if a0 == 0.0 || ((a0.abs() - rho0) / a0.abs()).abs() > 1e-9 {
        return Err(invalid("growth replay needs a balanced neuron, |a₀|² = ‖w₀‖² + b₀²"));
    }
    if !(cfg.eta > 0.0 && cfg.horizon > 0.0) {
        return Err(invalid("eta and horizon must be positive"));
    }
    let ds = solve_d_star(ctx.alpha_bar)?;
    let sign = a0.signum();
    let (ray_w, ray_b) = ray_direction(ctx.d(), ctx.coord, ds.d_star, sign > 0.0);
    let steps = (cfg.horizon / cfg.eta).round() as usize;
    let every = cfg.record_every.max(1);
    let k_at = |w: &[f64], b: f64| -> Result<f64> {
        let rho = (dot(w, w) + b * b).sqrt();
        let wn: Vec<f64> = w.iter().map(|v| v / rho).collect();
        k_eval_gh(ctx, &wn, b / rho, cfg.gh_nodes)
    };
    let ray_distance = |w: &[f64], b: f64| {
        let rho = (dot(w, w) + b * b).sqrt();
        let dw: f64 = w.iter().zip(&ray_w).map(|(v, r)| (v / rho - r).powi(2)).sum();
        (dw + (b / rho - ray_b).powi(2)).sqrt()
    };

    let (mut a, mut w, mut b) = (a0, w0.to_vec(), b0);
    let mut k = k_at(&w, b)?;
    let mut integral = 0.0;
    let mut trajectory = Vec::with_capacity(steps / every + 2);
    let record = |step: usize, a: f64, w: &[f64], b: f64, k: f64, integral: f64| ReplayPoint {
        s: step as f64 * cfg.eta,
        a,
        b,
        w: w.to_vec(),
        predicted: a0.abs() * (2.0 * sign * integral).exp(),
        k,
        ray_distance: ray_distance(w, b),
    };
    trajectory.push(record(0, a, &w, b, k, integral));
    for step in 1..=steps {
        let (g, gw, gb) = surrogate_moments(ctx, &w, b);
        let scale = 2.0 * cfg.eta;
        let a_next = a + scale * g;
        for (wk, gk) in w.iter_mut().zip(&gw) {
            *wk += scale * a * gk;
        }
        b += scale * a * gb;
        a = a_next;
        let k_next = k_at(&w, b)?;
        integral += 0.5 * cfg.eta * (k + k_next);
        k = k_next;
        if !(a.is_finite() && k.is_finite()) {
            return Err(LabError::NonFiniteLoss { step });
        }
        if step % every == 0 || step == steps {
            trajectory.push(record(step, a, &w, b, k, integral));
        }
    }

    let limit = 10.0 * a0.abs();
    let max_rel_dev = trajectory
        .iter()
        .filter(|p| p.a.abs() <= limit)
        .map(|p| (p.a.abs() - p.predicted).abs() / p.predicted)
        .fold(0.0, f64::max);
    let max_ray_drift = trajectory.iter().map(|p| p.ray_distance).fold(0.0, f64::max);
    let min_rate_change =
        trajectory.windows(2).map(|p| p[1].a * (p[1].k - p[0].k) / (p[1].s - p[0].s)).fold(f64::INFINITY, f64::min);
    Ok(GrowthReplay { d_star: ds.d_star, trajectory, max_rel_dev, max_ray_drift, min_rate_change })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LdrBoundInputs {
    pub k0: f64,
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub k4: f64,
    /// Witness neurons with positive and negative output weight.
    pub witness_pos: usize,
    pub witness_neg: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdrBound {
    pub bound: f64,
    pub bound_stderr: f64,
    /// Estimated probability that at least one witness is active.
    pub prob: f64,
    pub prob_stderr: f64,
    /// The squared ratio factor multiplying `prob`.
    pub ratio_factor: f64,
    pub inputs: Option<LdrBoundInputs>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostic: Option<String>,
}

impl LdrBound {
    fn empty(diagnostic: String) -> Self {
        Self {
            bound: 0.0,
            bound_stderr: 0.0,
            prob: 0.0,
            prob_stderr: 0.0,
            ratio_factor: 0.0,
            inputs: None,
            diagnostic: Some(diagnostic),
        }
    }
}

/// Lower bound on `LDR(θ, {i})` with the witness window `[D*/2, 2D*]`.
pub fn ldr_lower_bound<R: Rng + ?Sized>(
    net: &TwoLayerScoreNet,
    ctx: &GrowthContext,
    k0: f64,
    n_mc: usize,
    rng: &mut R,
) -> Result<LdrBound> {
    let ds = solve_d_star(ctx.alpha_bar)?;
    ldr_lower_bound_in_window(net, ctx, k0, (0.5 * ds.d_star, 2.0 * ds.d_star), n_mc, rng)
}

/// Lower bound on `LDR(θ, {i})` for a balanced network.
///
/// Every neuron with `|a| > k0` must satisfy `‖w − w^{(i)}e_i‖ ≤ k1 sgn(a) w^{(i)}`;
/// the witnesses are the largest positive-`a` and negative-`a` such neurons
/// with `b/|w^{(i)}|` inside `window`. With `c = √(1 + k1² + k4²)` the bound is
/// `P · max((k2² − m k0² c) / (k2²(1+k1) + m k0² c), 0)²`, where `P`, the
/// probability under `p_t` that a witness is active, is estimated by Monte
/// Carlo.
pub fn ldr_lower_bound_in_window<R: Rng + ?Sized>(
    net: &TwoLayerScoreNet,
    ctx: &GrowthContext,
    k0: f64,
    window: (f64, f64),
    n_mc: usize,
    rng: &mut R,
) -> Result<LdrBound> {
    if !(k0 >= 0.0) {
        return Err(invalid("k0 must be nonnegative"));
    }
    let (k3, k4) = window;
    if !(k3 > 0.0 && k4 > k3) {
        return Err(invalid(format!("witness window must satisfy 0 < k3 < k4, got ({k3}, {k4})")));
    }
    if net.dim() != ctx.d() {
        return Err(LabError::ShapeMismatch { expected: ctx.d(), got: net.dim() });
    }
    if n_mc == 0 {
        return Err(invalid("n_mc must be at least 1"));
    }
    let i = ctx.coord;
    let m = net.width();
    let mut k1: f64 = 0.0;
    let mut pos: Option<(usize, f64)> = None;
    let mut neg: Option<(usize, f64)> = None;
    for j in 0..m {
        let (a, w, b) = net.neuron(i, j);
        if a.abs() <= k0 {
            continue;
        }
        let along = a.signum() * w[i];
        if along <= 0.0 {
            return Ok(LdrBound::empty(format!("neuron {j} has |a| > k0 but sgn(a) w^(i) = {along:e}")));
        }
        let off: f64 = w.iter().enumerate().filter(|&(k, _)| k != i).map(|(_, v)| v * v).sum::<f64>().sqrt();
        k1 = k1.max(off / along);
        let ratio = b / w[i].abs();
        if ratio < k3 || ratio > k4 {
            continue;
        }
        let slot = if a > 0.0 { &mut pos } else { &mut neg };
        if slot.is_none_or(|(_, best)| a.abs() > best) {
            *slot = Some((j, a.abs()));
        }
    }
    let (Some((jp, ap)), Some((jn, an))) = (pos, neg) else {
        return Ok(LdrBound::empty(format!("no witness pair with |a| > {k0:e} and b/|w^(i)| in [{k3}, {k4}]")));
    };
    let k2 = ap.min(an);
    let mk0 = m as f64 * k0 * k0 * (1.0 + k1 * k1 + k4 * k4).sqrt();
    let ratio = ((k2 * k2 - mk0) / (k2 * k2 * (1.0 + k1) + mk0)).max(0.0);
    let ratio_factor = ratio * ratio;

    let (ap_, wp, bp) = net.neuron(i, jp);
    let (an_, wn, bn) = net.neuron(i, jn);
    debug_assert!(ap_ > 0.0 && an_ < 0.0);
    let hits: Vec<f64> = (0..n_mc)
        .map(|_| {
            let x = sample_xt(ctx.dist.as_ambient(), ctx.alpha_bar, rng);
            f64::from(u8::from(dot(wp, &x) + bp > 0.0 || dot(wn, &x) + bn > 0.0))
        })
        .collect();
    let (prob, prob_stderr) = mean_stderr(&hits);
    Ok(LdrBound {
        bound: prob * ratio_factor,
        bound_stderr: prob_stderr * ratio_factor,
        prob,
        prob_stderr,
        ratio_factor,
        inputs: Some(LdrBoundInputs { k0, k1, k2, k3, k4, witness_pos: jp, witness_neg: jn }),
        diagnostic: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KCheck {
    #[serde(rename = "D")]
    pub d_value: f64,
    pub k_eval: f64,
    pub k_from_f: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplaySummary {
    pub max_rel_dev: f64,
    pub max_ray_drift: f64,
    pub min_rate_change: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryReport {
    pub alpha_bar: f64,
    #[serde(rename = "D_star")]
    pub d_star: f64,
    pub residual: f64,
    #[serde(rename = "K_checks")]
    pub k_checks: Vec<KCheck>,
    pub growth_replay: ReplaySummary,
}

impl TheoryReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoryConfig {
    /// Number of `D` values in `(0, 4]` at which `K` on the aligned ray is
    /// compared with `f(D)`.
    pub n_checks: usize,
    pub replay: ReplayConfig,
    /// Scale of the random replay neuron.
    pub sigma_init: f64,
    pub seed: u64,
}

impl Default for TheoryConfig {
    fn default() -> Self {
        Self { n_checks: 20, replay: ReplayConfig::default(), sigma_init: 1e-3, seed: 0 }
    }
}

pub fn theory_report(ctx: &GrowthContext, cfg: &TheoryConfig) -> Result<TheoryReport> {
    let ds = solve_d_star(ctx.alpha_bar)?;
    let half_c = 0.5 * ctx.noise_scale();
    let k_checks = (1..=cfg.n_checks)
        .map(|k| {
            let d_value = 4.0 * k as f64 / cfg.n_checks as f64;
            let (w, b) = ray_direction(ctx.d(), ctx.coord, d_value, true);
            let k_eval = k_eval_gh(ctx, &w, b, cfg.replay.gh_nodes)?;
            let k_from_f = half_c * f_of_d(ctx.alpha_bar, d_value);
            Ok(KCheck { d_value, k_eval, k_from_f, rel_error: (k_eval - k_from_f).abs() / k_from_f.abs() })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut rng = rng_from_seed(cfg.seed);
    let mut w: Vec<f64> = (0..ctx.d()).map(|_| cfg.sigma_init * rng.sample::<f64, _>(StandardNormal)).collect();
    w[ctx.coord] = w[ctx.coord].abs();
    let b = cfg.sigma_init * rng.sample::<f64, _>(StandardNormal);
    let a = (dot(&w, &w) + b * b).sqrt();
    let replay = growth_replay(ctx, a, &w, b, &cfg.replay)?;
    Ok(TheoryReport {
        alpha_bar: ctx.alpha_bar,
        d_star: ds.d_star,
        residual: ds.residual,
        k_checks,
        growth_replay: ReplaySummary {
            max_rel_dev: replay.max_rel_dev,
            max_ray_drift: replay.max_ray_drift,
            min_rate_change: replay.min_rate_change,
        },
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
