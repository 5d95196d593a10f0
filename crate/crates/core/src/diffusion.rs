//! DDPM forward and reverse processes with exact posterior means and score
//! targets for finite-support distributions.
//!
//! Timesteps run `1..=T`; `ᾱ_0 := 1` by convention. The reverse chain uses
//! the posterior variance `β̃_t = β_t (1 - ᾱ_{t-1}) / (1 - ᾱ_t)` and returns
//! the mean without noise at `t = 1`.

use std::fmt::Write as _;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dist::AmbientDensity;
use crate::error::{invalid, LabError, Result};
use crate::numeric::{child_seed, mean_stderr, rng_from_seed};

/// Default bound on `√ᾱ_T` for a schedule to count as fully noised.
pub const DEFAULT_TERMINAL_THRESHOLD: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    /// Builds a schedule from `β_1..β_T`. `ᾱ` is accumulated in log space.
    pub fn from_betas(beta: Vec<f64>) -> Result<Self> {
        if beta.is_empty() {
            return Err(invalid("schedule needs at least one step"));
        }
        if let Some(b) = beta.iter().find(|b| !(**b > 0.0 && **b < 1.0)) {
            return Err(invalid(format!("beta = {b} outside (0, 1)")));
        }
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let mut log_acc = 0.0;
        let alpha_bar = beta
            .iter()
            .map(|b| {
                log_acc += (-b).ln_1p();
                log_acc.exp()
            })
            .collect();
        Ok(Self { beta, alpha, alpha_bar })
    }

    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t - 1]
    }

    /// `ᾱ_t` for `t ∈ [0, T]`, with `ᾱ_0 = 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bar[t - 1]
        }
    }

    pub fn posterior_variance(&self, t: usize) -> f64 {
        self.beta(t) * (1.0 - self.alpha_bar(t - 1)) / (1.0 - self.alpha_bar(t))
    }

    /// Whether `√ᾱ_T` is below `threshold`.
    pub fn is_terminal_noised(&self, threshold: f64) -> bool {
        self.alpha_bar(self.steps()).sqrt() < threshold
    }

    /// Timestep whose `√ᾱ_t` is nearest to `target`, by bisection on the
    /// strictly decreasing table.
    pub fn timestep_for_sqrt_alpha_bar(&self, target: f64) -> usize {
        let sq = |t: usize| self.alpha_bar(t).sqrt();
        let (mut lo, mut hi) = (1usize, self.steps());
        if target >= sq(lo) {
            return lo;
        }
        if target <= sq(hi) {
            return hi;
        }
        // invariant: sq(lo) > target >= sq(hi)
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if sq(mid) > target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        if (sq(lo) - target).abs() <= (sq(hi) - target).abs() {
            lo
        } else {
            hi
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,beta,alpha,alpha_bar\n");
        for t in 1..=self.steps() {
            writeln!(out, "{t},{:e},{:e},{:e}", self.beta(t), self.alpha(t), self.alpha_bar(t)).expect("write to String");
        }
        out
    }
}

/// Linear `β` from `beta_start` to `beta_end` over `T` steps.
pub fn make_linear_schedule(steps: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule> {
    if steps == 0 {
        return Err(invalid("T must be at least 1"));
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(invalid(format!("need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})")));
    }
    let beta = if steps == 1 {
        vec![beta_start]
    } else {
        (0..steps).map(|k| beta_start + (beta_end - beta_start) * k as f64 / (steps - 1) as f64).collect()
    };
    NoiseSchedule::from_betas(beta)
}

/// The default schedule: linear, `T = 1000`, `β ∈ [1e-4, 0.02]`.
pub fn default_schedule() -> NoiseSchedule {
    make_linear_schedule(1000, 1e-4, 0.02).expect("default schedule is valid")
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionSample {
    pub x: Vec<f64>,
    pub t: usize,
}

/// `x_t = √ᾱ x0 + √(1-ᾱ) ξ` at an explicit `ᾱ`; `noise` receives `ξ`.
pub fn forward_sample_at<R: Rng + ?Sized>(x0: &[f64], alpha_bar: f64, rng: &mut R, noise: &mut [f64]) -> Vec<f64> {
    let (s, n) = (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt());
    x0.iter()
        .zip(noise.iter_mut())
        .map(|(x, xi)| {
            *xi = rng.sample(StandardNormal);
            s * x + n * *xi
        })
        .collect()
}

/// Draws `x_t ~ p_t` at an explicit `ᾱ`: a support point followed by the
/// forward noising.
pub fn sample_xt<R: Rng + ?Sized>(p: &AmbientDensity, alpha_bar: f64, rng: &mut R) -> Vec<f64> {
    let k = p.sample_index(rng);
    let mut noise = vec![0.0; p.dim()];
    forward_sample_at(p.point_at(k), alpha_bar, rng, &mut noise)
}

pub fn forward_sample<R: Rng + ?Sized>(x0: &[f64], t: usize, schedule: &NoiseSchedule, rng: &mut R) -> Result<DiffusionSample> {
    if t > schedule.steps() {
        return Err(invalid(format!("t = {t} outside [0, {}]", schedule.steps())));
    }
    let mut noise = vec![0.0; x0.len()];
    let x = forward_sample_at(x0, schedule.alpha_bar(t), rng, &mut noise);
    Ok(DiffusionSample { x, t })
}

/// Posterior weights `w_k ∝ mass_k exp(-‖x - √ᾱ x0_k‖² / (2(1-ᾱ)))`,
/// written into `weights` (length = support size), max-subtracted.
pub fn posterior_weights(p: &AmbientDensity, x: &[f64], alpha_bar: f64, weights: &mut [f64]) {
    let s = alpha_bar.sqrt();
    let inv = 1.0 / (2.0 * (1.0 - alpha_bar));
    let mut max = f64::NEG_INFINITY;
    for (k, (x0, m)) in p.points().zip(p.mass()).enumerate() {
        let logit = if *m > 0.0 {
            let d2: f64 = x0.iter().zip(x).map(|(a, b)| (b - s * a) * (b - s * a)).sum();
            m.ln() - d2 * inv
        } else {
            f64::NEG_INFINITY
        };
        weights[k] = logit;
        max = max.max(logit);
    }
    let mut total = 0.0;
    for w in weights.iter_mut() {
        *w = (*w - max).exp();
        total += *w;
    }
    for w in weights.iter_mut() {
        *w /= total;
    }
}

/// `E[x0 | x_t = x]` at an explicit `ᾱ`.
pub fn posterior_mean_at(p: &AmbientDensity, x: &[f64], alpha_bar: f64) -> Vec<f64> {
    let mut weights = vec![0.0; p.len()];
    let mut out = vec![0.0; p.dim()];
    posterior_mean_into(p, x, alpha_bar, &mut weights, &mut out);
    out
}

pub(crate) fn posterior_mean_into(p: &AmbientDensity, x: &[f64], alpha_bar: f64, weights: &mut [f64], out: &mut [f64]) {
    posterior_weights(p, x, alpha_bar, weights);
    out.iter_mut().for_each(|v| *v = 0.0);
    for (x0, w) in p.points().zip(weights.iter()) {
        if *w == 0.0 {
            continue;
        }
        for (o, a) in out.iter_mut().zip(x0) {
            *o += w * a;
        }
    }
}

/// Target score `y = (x - √ᾱ E[x0|x]) / √(1-ᾱ)` at an explicit `ᾱ`.
pub fn score_target_at(p: &AmbientDensity, x: &[f64], alpha_bar: f64) -> Vec<f64> {
    let mean = posterior_mean_at(p, x, alpha_bar);
    let (s, n) = (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt());
    x.iter().zip(&mean).map(|(xi, m)| (xi - s * m) / n).collect()
}

pub fn exact_posterior_mean(p: &AmbientDensity, x: &[f64], t: usize, schedule: &NoiseSchedule) -> Result<Vec<f64>> {
    check_t(t, schedule)?;
    check_dim(p.dim(), x.len())?;
    Ok(posterior_mean_at(p, x, schedule.alpha_bar(t)))
}

pub fn exact_score_target(p: &AmbientDensity, x: &[f64], t: usize, schedule: &NoiseSchedule) -> Result<Vec<f64>> {
    check_t(t, schedule)?;
    check_dim(p.dim(), x.len())?;
    Ok(score_target_at(p, x, schedule.alpha_bar(t)))
}

fn check_t(t: usize, schedule: &NoiseSchedule) -> Result<()> {
    if t == 0 || t > schedule.steps() {
        return Err(invalid(format!("t = {t} outside [1, {}]", schedule.steps())));
    }
    Ok(())
}

fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(LabError::ShapeMismatch { expected, got });
    }
    Ok(())
}

/// One ancestral step `x_t → x_{t-1}` given `s(x_t, t)`.
pub fn reverse_step<R: Rng + ?Sized>(
    x: &[f64],
    t: usize,
    score_value: &[f64],
    schedule: &NoiseSchedule,
    rng: &mut R,
) -> Vec<f64> {
    let alpha = schedule.alpha(t);
    let coef = (1.0 - alpha) / (1.0 - schedule.alpha_bar(t)).sqrt();
    let scale = 1.0 / alpha.sqrt();
    let mean = x.iter().zip(score_value).map(|(xi, si)| scale * (xi - coef * si));
    if t == 1 {
        return mean.collect();
    }
    let sd = schedule.posterior_variance(t).sqrt();
    mean.map(|m| m + sd * rng.sample::<f64, _>(StandardNormal)).collect()
}

/// A score predictor `s(x, t)` usable by the sampler.
pub trait ScoreModel {
    fn dim(&self) -> usize;
    fn score_into(&self, x: &[f64], t: usize, out: &mut [f64]);

    fn score(&self, x: &[f64], t: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.score_into(x, t, &mut out);
        out
    }
}

/// The exact score of a finite-support distribution under a schedule.
#[derive(Debug, Clone)]
pub struct ExactScore<'a> {
    pub density: &'a AmbientDensity,
    pub schedule: &'a NoiseSchedule,
}

impl ScoreModel for ExactScore<'_> {
    fn dim(&self) -> usize {
        self.density.dim()
    }

    fn score_into(&self, x: &[f64], t: usize, out: &mut [f64]) {
        let ab = self.schedule.alpha_bar(t);
        let mut weights = vec![0.0; self.density.len()];
        posterior_mean_into(self.density, x, ab, &mut weights, out);
        let (s, n) = (ab.sqrt(), (1.0 - ab).sqrt());
        for (o, xi) in out.iter_mut().zip(x) {
            *o = (xi - s * *o) / n;
        }
    }
}

/// Wraps a closure `(x, t) -> s(x, t)` of fixed dimension.
pub struct FnScore<F> {
    dim: usize,
    f: F,
}

impl<F: Fn(&[f64], usize) -> Vec<f64>> FnScore<F> {
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F: Fn(&[f64], usize) -> Vec<f64>> ScoreModel for FnScore<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn score_into(&self, x: &[f64], t: usize, out: &mut [f64]) {
        out.copy_from_slice(&(self.f)(x, t));
    }
}

/// Runs one ancestral chain from `x_T ~ N(0, I)` to `x_0`.
pub fn generate_chain<M: ScoreModel + ?Sized>(
    model: &M,
    schedule: &NoiseSchedule,
    chain_seed: u64,
    chain: usize,
) -> Result<Vec<f64>> {
    let d = model.dim();
    let mut rng = rng_from_seed(chain_seed);
    let mut x: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    let mut s = vec![0.0; d];
    for t in (1..=schedule.steps()).rev() {
        model.score_into(&x, t, &mut s);
        if s.iter().any(|v| !v.is_finite()) {
            return Err(LabError::NonFiniteScore { timestep: t, chain });
        }
        x = reverse_step(&x, t, &s, schedule, &mut rng);
    }
    Ok(x)
}

/// `n` independent ancestral chains; chain `k` uses the seed
/// `child_seed(seed, k)` so results do not depend on execution order.
pub fn generate<M: ScoreModel + ?Sized>(model: &M, schedule: &NoiseSchedule, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    if n == 0 {
        return Err(invalid("n must be at least 1"));
    }
    (0..n).map(|k| generate_chain(model, schedule, child_seed(seed, k as u64), k)).collect()
}

/// CSV matrix, one sample per row, no header.
pub fn samples_csv(samples: &[Vec<f64>]) -> String {
    let mut out = String::new();
    for s in samples {
        let row: Vec<String> = s.iter().map(|v| format!("{v:e}")).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// Monte Carlo estimate of `E‖ξ - s(x_t)‖²` and its split into the excess
/// (`E‖y - s‖²`) and irreducible parts, all on the same draws.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossDecomposition {
    pub total: f64,
    pub irreducible: f64,
    pub excess: f64,
    pub total_stderr: f64,
    pub irreducible_stderr: f64,
    pub excess_stderr: f64,
    /// Standard error of the per-draw gap `total - excess - irreducible`.
    pub gap_stderr: f64,
}

pub fn denoising_loss<M: ScoreModel + ?Sized, R: Rng + ?Sized>(
    model: &M,
    p: &AmbientDensity,
    t: usize,
    schedule: &NoiseSchedule,
    n_mc: usize,
    rng: &mut R,
) -> Result<LossDecomposition> {
    check_t(t, schedule)?;
    if n_mc == 0 {
        return Err(invalid("n_mc must be at least 1"));
    }
    let d = p.dim();
    let ab = schedule.alpha_bar(t);
    let (s, n) = (ab.sqrt(), (1.0 - ab).sqrt());
    let mut noise = vec![0.0; d];
    let mut weights = vec![0.0; p.len()];
    let mut mean = vec![0.0; d];
    let mut pred = vec![0.0; d];
    let (mut total, mut irr, mut exc, mut gap) =
        (Vec::with_capacity(n_mc), Vec::with_capacity(n_mc), Vec::with_capacity(n_mc), Vec::with_capacity(n_mc));
    for _ in 0..n_mc {
        let x0 = p.point_at(p.sample_index(rng));
        let xt = forward_sample_at(x0, ab, rng, &mut noise);
        model.score_into(&xt, t, &mut pred);
        posterior_mean_into(p, &xt, ab, &mut weights, &mut mean);
        let (mut tot, mut ir, mut ex) = (0.0, 0.0, 0.0);
        for k in 0..d {
            let y = (xt[k] - s * mean[k]) / n;
            tot += (noise[k] - pred[k]).powi(2);
            ex += (y - pred[k]).powi(2);
            ir += (s / n * (x0[k] - mean[k])).powi(2);
        }
        total.push(tot);
        irr.push(ir);
        exc.push(ex);
        gap.push(tot - ex - ir);
    }
    let (total, total_stderr) = mean_stderr(&total);
    let (irreducible, irreducible_stderr) = mean_stderr(&irr);
    let (excess, excess_stderr) = mean_stderr(&exc);
    let (_, gap_stderr) = mean_stderr(&gap);
    Ok(LossDecomposition { total, irreducible, excess, total_stderr, irreducible_stderr, excess_stderr, gap_stderr })
}

/// Sign decoding onto `{±1}` with `sgn(0) := +1`.
pub fn sign_decode(x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| if *v >= 0.0 { 1.0 } else { -1.0 }).collect()
}
