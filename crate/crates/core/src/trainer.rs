//! Euler-discretized gradient flow for the two-layer score network against
//! exact diffusion targets, the linear and univariate reference losses, and
//! plateau detection on the recorded loss.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::diffusion::{posterior_mean_into, NoiseSchedule};
use crate::dist::AmbientDensity;
use crate::error::{invalid, LabError, Result};
use crate::ldr::{ldr_exact_at, Region};
use crate::net::{Batch, GradientMode, Gradients, Scratch, TwoLayerScoreNet};
use crate::numeric::{child_seed, gauss_hermite, mean_stderr, rng_from_seed, LabRng};
use rand::Rng;
use rand_distr::StandardNormal;

/// Largest dimension for which the tensor-product quadrature is built.
pub const MAX_EXACT_DIM: usize = 4;
pub const QUADRATURE_NODES: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Expectation {
    /// Fresh `(x0, ξ)` batch every step.
    #[default]
    MonteCarlo,
    /// Support enumeration times a Gauss–Hermite grid over the noise;
    /// deterministic, `d ≤ 4` only.
    Exact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(default)]
    pub mode: GradientMode,
    pub eta: f64,
    pub steps: usize,
    #[serde(default = "default_batch")]
    pub batch: usize,
    #[serde(default = "default_record_every")]
    pub record_every: usize,
    /// Diffusion timestep the network is trained for.
    pub t: usize,
    /// Train only this output; `None` trains every coordinate.
    #[serde(default)]
    pub target_coord: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    /// Fixed draws used for the recorded loss.
    #[serde(default = "default_eval_samples")]
    pub eval_samples: usize,
    #[serde(default)]
    pub expectation: Expectation,
    /// Points for the recorded LDR of the focus coordinate; 0 disables it.
    #[serde(default)]
    pub ldr_samples: usize,
}

fn default_batch() -> usize {
    1024
}

fn default_record_every() -> usize {
    100
}

fn default_eval_samples() -> usize {
    4096
}

impl TrainConfig {
    pub fn new(eta: f64, steps: usize, t: usize) -> Self {
        Self {
            mode: GradientMode::FullLoss,
            eta,
            steps,
            batch: default_batch(),
            record_every: default_record_every(),
            t,
            target_coord: None,
            seed: 0,
            eval_samples: default_eval_samples(),
            expectation: Expectation::MonteCarlo,
            ldr_samples: 0,
        }
    }

    pub fn validate(&self, d: usize, schedule: &NoiseSchedule) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(invalid(format!("eta must be positive, got {}", self.eta)));
        }
        if self.batch == 0 || self.record_every == 0 || self.eval_samples == 0 {
            return Err(invalid("batch, record_every and eval_samples must be at least 1"));
        }
        if self.t == 0 || self.t > schedule.steps() {
            return Err(invalid(format!("t = {} outside [1, {}]", self.t, schedule.steps())));
        }
        if let Some(i) = self.target_coord {
            if i >= d {
                return Err(invalid(format!("target_coord {i} out of range for d = {d}")));
            }
        }
        if self.expectation == Expectation::Exact && d > MAX_EXACT_DIM {
            return Err(invalid(format!("exact expectation supports d <= {MAX_EXACT_DIM}, got {d}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub step: usize,
    /// `step · η`.
    pub gf_time: f64,
    /// `E(s - y)²` summed over the trained coordinates.
    pub loss: f64,
    pub balance_residual: f64,
    pub m_set_distance: Vec<f64>,
    pub aligned_norm: f64,
    pub off_axis_norm: f64,
    pub ldr: Option<f64>,
}

impl HistoryRow {
    pub fn alignment_ratio(&self) -> f64 {
        self.aligned_norm / self.off_axis_norm
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    /// Trained coordinates, in the order of `m_set_distance`.
    pub coords: Vec<usize>,
    /// Coordinate used for the alignment norms and the LDR.
    pub focus: usize,
    pub rows: Vec<HistoryRow>,
}

impl TrainHistory {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,gf_time,loss,balance_residual");
        for i in &self.coords {
            write!(out, ",m_set_distance_{i}").expect("write to String");
        }
        out.push_str(",aligned_norm,off_axis_norm,ldr\n");
        for r in &self.rows {
            write!(out, "{},{:e},{:e},{:e}", r.step, r.gf_time, r.loss, r.balance_residual).expect("write to String");
            for v in &r.m_set_distance {
                write!(out, ",{v:e}").expect("write to String");
            }
            let ldr = r.ldr.map(|v| format!("{v:e}")).unwrap_or_default();
            writeln!(out, ",{:e},{:e},{ldr}", r.aligned_norm, r.off_axis_norm).expect("write to String");
        }
        out
    }

    pub fn losses(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.loss).collect()
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// The last network whose parameters and loss were finite.
    pub net: TwoLayerScoreNet,
    pub history: TrainHistory,
    /// Step at which a non-finite loss or gradient stopped the run.
    pub aborted_at: Option<usize>,
}

impl TrainOutcome {
    pub fn into_result(self) -> Result<(TwoLayerScoreNet, TrainHistory)> {
        match self.aborted_at {
            Some(step) => Err(LabError::NonFiniteLoss { step }),
            None => Ok((self.net, self.history)),
        }
    }
}

/// Draws `(x_t, y(x_t))` pairs; targets are returned per coordinate.
fn draw_batch(p: &AmbientDensity, alpha_bar: f64, n: usize, rng: &mut LabRng) -> Result<(Batch, Vec<Vec<f64>>)> {
    let (s, sn) = (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt());
    let mut rows = Vec::with_capacity(n);
    for _ in 0..n {
        let x0 = p.point_at(p.sample_index(rng));
        rows.push(x0.iter().map(|v| s * v + sn * rng.sample::<f64, _>(StandardNormal)).collect::<Vec<f64>>());
    }
    let targets = targets_for(p, alpha_bar, &rows);
    Ok((Batch::from_rows(&rows)?, targets))
}

fn targets_for(p: &AmbientDensity, alpha_bar: f64, rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let d = p.dim();
    let (s, sn) = (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt());
    let mut targets = vec![Vec::with_capacity(rows.len()); d];
    let mut weights = vec![0.0; p.len()];
    let mut mean = vec![0.0; d];
    for x in rows {
        posterior_mean_into(p, x, alpha_bar, &mut weights, &mut mean);
        for k in 0..d {
            targets[k].push((x[k] - s * mean[k]) / sn);
        }
    }
    targets
}

/// Support × tensor Gauss–Hermite grid with product weights.
fn quadrature_batch(p: &AmbientDensity, alpha_bar: f64) -> Result<(Batch, Vec<Vec<f64>>)> {
    let d = p.dim();
    let (nodes, weights) = gauss_hermite(QUADRATURE_NODES);
    let (s, sn) = (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt());
    let grid = QUADRATURE_NODES.pow(d as u32);
    let mut rows = Vec::with_capacity(p.len() * grid);
    let mut wts = Vec::with_capacity(p.len() * grid);
    for (x0, mass) in p.points().zip(p.mass()) {
        for g in 0..grid {
            let mut idx = g;
            let mut w = *mass;
            let mut x = Vec::with_capacity(d);
            for v in x0 {
                let q = idx % QUADRATURE_NODES;
                idx /= QUADRATURE_NODES;
                w *= weights[q];
                x.push(s * v + sn * nodes[q]);
            }
            rows.push(x);
            wts.push(w);
        }
    }
    let targets = targets_for(p, alpha_bar, &rows);
    Ok((Batch::weighted(&rows, wts)?, targets))
}

/// Trains at the timestep `cfg.t` of `schedule`.
pub fn train(net: TwoLayerScoreNet, p: &AmbientDensity, schedule: &NoiseSchedule, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate(net.dim(), schedule)?;
    train_at(net, p, schedule.alpha_bar(cfg.t), cfg)
}

/// Trains at an explicit `ᾱ`; `cfg.t` is only used as the network tag.
pub fn train_at(mut net: TwoLayerScoreNet, p: &AmbientDensity, alpha_bar: f64, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let d = net.dim();
    if p.dim() != d {
        return Err(LabError::ShapeMismatch { expected: d, got: p.dim() });
    }
    if !(alpha_bar > 0.0 && alpha_bar < 1.0) {
        return Err(invalid(format!("alpha_bar must lie in (0, 1), got {alpha_bar}")));
    }
    let coords: Vec<usize> = match cfg.target_coord {
        Some(i) => vec![i],
        None => (0..d).collect(),
    };
    let focus = coords[0];
    let mut history = TrainHistory { coords: coords.clone(), focus, rows: Vec::new() };
    if cfg.steps == 0 {
        return Ok(TrainOutcome { net, history, aborted_at: None });
    }
    net.t_tag = cfg.t;

    let mut rng = rng_from_seed(cfg.seed);
    let fixed = match cfg.expectation {
        Expectation::Exact => Some(quadrature_batch(p, alpha_bar)?),
        Expectation::MonteCarlo => None,
    };
    let (eval_batch, eval_targets) = match &fixed {
        Some(b) => b.clone(),
        None => draw_batch(p, alpha_bar, cfg.eval_samples, &mut rng_from_seed(child_seed(cfg.seed, 1)))?,
    };
    let ldr_points: Vec<Vec<f64>> = {
        let mut r = rng_from_seed(child_seed(cfg.seed, 2));
        let (s, sn) = (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt());
        (0..cfg.ldr_samples)
            .map(|_| {
                let x0 = p.point_at(p.sample_index(&mut r)).to_vec();
                x0.iter().map(|v| s * v + sn * r.sample::<f64, _>(StandardNormal)).collect()
            })
            .collect()
    };
    let region = Region::single(focus, d)?;

    let mut scratch = Scratch::default();
    let mut grads = Gradients::zeros(d, net.width());
    let mut last_good = net.clone();
    let mut aborted_at = None;

    let record = |net: &TwoLayerScoreNet, scratch: &mut Scratch, step: usize| {
        let loss: f64 = net.batch_loss(&eval_batch, &eval_targets, &coords, scratch).iter().sum();
        let ldr = if ldr_points.is_empty() {
            None
        } else {
            ldr_exact_at(|x| net.input_jacobian(x).expect("dimension checked"), &region, &ldr_points).ok().map(|r| r.ldr_mean)
        };
        HistoryRow {
            step,
            gf_time: step as f64 * cfg.eta,
            loss,
            balance_residual: net.balance_residual(),
            m_set_distance: coords.iter().map(|&i| net.m_set_distance(i)).collect(),
            aligned_norm: net.aligned_norm(focus),
            off_axis_norm: net.off_axis_norm(focus),
            ldr,
        }
    };

    for step in 0..cfg.steps {
        if step % cfg.record_every == 0 {
            history.rows.push(record(&net, &mut scratch, step));
        }
        let drawn;
        let (batch, targets) = match &fixed {
            Some((b, t)) => (b, t),
            None => {
                drawn = draw_batch(p, alpha_bar, cfg.batch, &mut rng)?;
                (&drawn.0, &drawn.1)
            }
        };
        let losses = net.loss_gradients_batch(batch, targets, &coords, cfg.mode, &mut scratch, &mut grads);
        if losses.iter().any(|l| !l.is_finite()) || !grads.max_abs().is_finite() {
            aborted_at = Some(step);
            break;
        }
        last_good.clone_from(&net);
        net.apply_gradients(&grads, cfg.eta, &coords);
        if !net.is_finite() {
            net.clone_from(&last_good);
            aborted_at = Some(step);
            break;
        }
        net.step += 1;
    }
    let done = aborted_at.unwrap_or(cfg.steps);
    if history.rows.last().map(|r| r.step) != Some(done) {
        history.rows.push(record(&net, &mut scratch, done));
    }
    if history.rows.iter().any(|r| !r.loss.is_finite()) {
        aborted_at = aborted_at.or(Some(done));
    }
    Ok(TrainOutcome { net, history, aborted_at })
}

/// Draws `n` pairs `(x_t, y_coord(x_t))`.
fn draw_pairs<R: Rng + ?Sized>(
    p: &AmbientDensity,
    alpha_bar: f64,
    coord: usize,
    n: usize,
    rng: &mut R,
) -> (Vec<Vec<f64>>, Vec<f64>) {
    let d = p.dim();
    let (s, sn) = (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt());
    let mut weights = vec![0.0; p.len()];
    let mut mean = vec![0.0; d];
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for _ in 0..n {
        let x0 = p.point_at(p.sample_index(rng));
        let x: Vec<f64> = x0.iter().map(|v| s * v + sn * rng.sample::<f64, _>(StandardNormal)).collect();
        posterior_mean_into(p, &x, alpha_bar, &mut weights, &mut mean);
        ys.push((x[coord] - s * mean[coord]) / sn);
        xs.push(x);
    }
    (xs, ys)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub loss: f64,
    pub coef: Vec<f64>,
    pub intercept: f64,
    pub intercept_stderr: f64,
    /// The normal equations were singular and a ridge of 1e-10 was added.
    pub ridge_fallback: bool,
}

/// Least-squares fit `(x, y)`, with a ridge fallback when `XᵀX` is singular.
pub fn fit_affine(xs: &[Vec<f64>], ys: &[f64]) -> Result<LinearFit> {
    let n = xs.len();
    if n == 0 || ys.len() != n {
        return Err(invalid("need matching, nonempty samples"));
    }
    let d = xs[0].len();
    let design = DMatrix::from_fn(n, d + 1, |r, c| if c == 0 { 1.0 } else { xs[r][c - 1] });
    let y = DVector::from_column_slice(ys);
    let gram = design.transpose() * &design;
    let rhs = design.transpose() * &y;
    let (chol, ridge) = match gram.clone().cholesky() {
        Some(c) => (c, false),
        None => {
            let ridged = gram + DMatrix::identity(d + 1, d + 1) * 1e-10;
            let c = ridged.cholesky().ok_or_else(|| invalid("normal equations are singular even with ridge"))?;
            (c, true)
        }
    };
    let beta = chol.solve(&rhs);
    let resid = &y - &design * &beta;
    let loss = resid.norm_squared() / n as f64;
    let dof = (n as f64 - (d + 1) as f64).max(1.0);
    let sigma2 = resid.norm_squared() / dof;
    let inv00 = chol.inverse()[(0, 0)];
    Ok(LinearFit {
        loss,
        coef: beta.iter().skip(1).copied().collect(),
        intercept: beta[0],
        intercept_stderr: (sigma2 * inv00).sqrt(),
        ridge_fallback: ridge,
    })
}

/// Minimal `E(⟨u, x_t⟩ + c - y_coord)²` over affine maps, by least squares
/// on `n_mc` draws.
pub fn best_linear_loss_at<R: Rng + ?Sized>(
    p: &AmbientDensity,
    alpha_bar: f64,
    coord: usize,
    n_mc: usize,
    rng: &mut R,
) -> Result<LinearFit> {
    check_coord(p, coord)?;
    let (xs, ys) = draw_pairs(p, alpha_bar, coord, n_mc, rng);
    fit_affine(&xs, &ys)
}

pub fn best_linear_loss<R: Rng + ?Sized>(
    p: &AmbientDensity,
    schedule: &NoiseSchedule,
    t: usize,
    coord: usize,
    n_mc: usize,
    rng: &mut R,
) -> Result<LinearFit> {
    best_linear_loss_at(p, alpha_at(schedule, t)?, coord, n_mc, rng)
}

fn alpha_at(schedule: &NoiseSchedule, t: usize) -> Result<f64> {
    if t == 0 || t > schedule.steps() {
        return Err(invalid(format!("t = {t} outside [1, {}]", schedule.steps())));
    }
    Ok(schedule.alpha_bar(t))
}

fn check_coord(p: &AmbientDensity, coord: usize) -> Result<()> {
    if coord >= p.dim() {
        return Err(invalid(format!("coordinate {coord} out of range for d = {}", p.dim())));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnivariateFit {
    pub loss: f64,
    /// Loss with twice as many bins.
    pub refined_loss: f64,
    pub n_bins: usize,
    /// Relative change under bin doubling is below 2%.
    pub converged: bool,
    pub merged_bins: usize,
}

/// Residual of the bin-wise conditional mean of `ys` given `xs` on
/// `n_bins` equal-width bins; empty bins are merged into a neighbor.
/// Returns `(loss, number of empty bins merged)`.
pub fn binned_residual(xs: &[f64], ys: &[f64], n_bins: usize) -> (f64, usize) {
    let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = (hi - lo) / n_bins as f64;
    let bin_of = |x: f64| if width > 0.0 { (((x - lo) / width) as usize).min(n_bins - 1) } else { 0 };
    let mut count = vec![0usize; n_bins];
    for x in xs {
        count[bin_of(*x)] += 1;
    }
    // empty bins join the next nonempty bin to the left (or right at the start)
    let mut group = vec![0usize; n_bins];
    let mut merged = 0;
    let mut current = None;
    for b in 0..n_bins {
        if count[b] > 0 {
            current = Some(b);
        } else {
            merged += 1;
        }
        group[b] = current.unwrap_or(usize::MAX);
    }
    let first = count.iter().position(|c| *c > 0).unwrap_or(0);
    group.iter_mut().for_each(|g| {
        if *g == usize::MAX {
            *g = first;
        }
    });
    let mut sum = vec![0.0; n_bins];
    let mut cnt = vec![0usize; n_bins];
    for (x, y) in xs.iter().zip(ys) {
        let g = group[bin_of(*x)];
        sum[g] += y;
        cnt[g] += 1;
    }
    let loss = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| {
            let g = group[bin_of(*x)];
            (y - sum[g] / cnt[g] as f64).powi(2)
        })
        .sum::<f64>()
        / xs.len() as f64;
    (loss, merged)
}

/// Minimal `E(g(x_t^coord) - y_coord)²` over bin-wise constant `g`.
pub fn best_univariate_loss_at<R: Rng + ?Sized>(
    p: &AmbientDensity,
    alpha_bar: f64,
    coord: usize,
    n_mc: usize,
    n_bins: usize,
    rng: &mut R,
) -> Result<UnivariateFit> {
    check_coord(p, coord)?;
    if n_bins < 32 {
        return Err(invalid(format!("n_bins must be at least 32, got {n_bins}")));
    }
    if n_mc == 0 {
        return Err(invalid("n_mc must be at least 1"));
    }
    let (xs, ys) = draw_pairs(p, alpha_bar, coord, n_mc, rng);
    let xc: Vec<f64> = xs.iter().map(|x| x[coord]).collect();
    Ok(univariate_from_samples(&xc, &ys, n_bins))
}

pub fn univariate_from_samples(xs: &[f64], ys: &[f64], n_bins: usize) -> UnivariateFit {
    let (loss, merged) = binned_residual(xs, ys, n_bins);
    let (refined, _) = binned_residual(xs, ys, 2 * n_bins);
    let converged = (loss - refined).abs() <= 0.02 * loss.abs().max(f64::MIN_POSITIVE);
    UnivariateFit { loss, refined_loss: refined, n_bins, converged, merged_bins: merged }
}

pub fn best_univariate_loss<R: Rng + ?Sized>(
    p: &AmbientDensity,
    schedule: &NoiseSchedule,
    t: usize,
    coord: usize,
    n_mc: usize,
    n_bins: usize,
    rng: &mut R,
) -> Result<UnivariateFit> {
    best_univariate_loss_at(p, alpha_at(schedule, t)?, coord, n_mc, n_bins, rng)
}

/// `E[y_coord²]`, the loss of the zero predictor.
pub fn zero_predictor_loss_at<R: Rng + ?Sized>(
    p: &AmbientDensity,
    alpha_bar: f64,
    coord: usize,
    n_mc: usize,
    rng: &mut R,
) -> Result<(f64, f64)> {
    check_coord(p, coord)?;
    let (_, ys) = draw_pairs(p, alpha_bar, coord, n_mc, rng);
    let sq: Vec<f64> = ys.iter().map(|y| y * y).collect();
    Ok(mean_stderr(&sq))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseConfig {
    /// A window is flat when its relative loss change, rescaled to
    /// `slope_span` steps, is below this.
    pub slope_threshold: f64,
    pub slope_span: f64,
    /// Window length in record intervals.
    pub window: usize,
    /// Relative tolerance for matching a plateau to a reference level.
    pub tolerance: f64,
}

impl Default for PhaseConfig {
    fn default() -> Self {
        Self { slope_threshold: 1e-3, slope_span: 1000.0, window: 5, tolerance: 0.15 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseOracles {
    pub linear: f64,
    pub univariate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseLabel {
    /// The plateau at the starting loss.
    Initial,
    Linear,
    Univariate,
    Unmatched,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plateau {
    pub start_step: usize,
    pub end_step: usize,
    /// Median recorded loss over the plateau.
    pub level: f64,
    pub label: PhaseLabel,
    /// Relative distance to the matched reference (or to the nearest one).
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseReport {
    pub oracles: PhaseOracles,
    pub config: PhaseConfig,
    pub plateaus: Vec<Plateau>,
    /// Index into `plateaus` of the first linear-level plateau.
    pub linear: Option<usize>,
    /// Index of the first univariate-level plateau after the linear one.
    pub univariate: Option<usize>,
    pub final_loss: f64,
}

impl PhaseReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Plateau search over `(step, loss)` records.
pub fn detect_phases(steps: &[usize], losses: &[f64], oracles: PhaseOracles, cfg: PhaseConfig) -> Result<PhaseReport> {
    if steps.is_empty() || steps.len() != losses.len() {
        return Err(invalid("history must be nonempty with one loss per step"));
    }
    let n = steps.len();
    let w = cfg.window.max(1);
    let mut flat = vec![false; n.saturating_sub(w)];
    for (k, f) in flat.iter_mut().enumerate() {
        let span = (steps[k + w] - steps[k]) as f64;
        let level = losses[k..=k + w].iter().sum::<f64>() / (w + 1) as f64;
        let change = (losses[k + w] - losses[k]).abs() / level.abs().max(f64::MIN_POSITIVE);
        *f = span > 0.0 && change * cfg.slope_span / span < cfg.slope_threshold;
    }
    let mut plateaus = Vec::new();
    let mut k = 0;
    while k < flat.len() {
        if !flat[k] {
            k += 1;
            continue;
        }
        let start = k;
        while k < flat.len() && flat[k] {
            k += 1;
        }
        let (first, last) = (start, k - 1 + w);
        let mut vals: Vec<f64> = losses[first..=last].to_vec();
        vals.sort_by(|a, b| a.total_cmp(b));
        let level = vals[vals.len() / 2];
        let rel = |r: f64| (level - r).abs() / r.abs().max(f64::MIN_POSITIVE);
        let (label, rel_error) = if first == 0 && rel(losses[0]) <= cfg.tolerance {
            (PhaseLabel::Initial, rel(losses[0]))
        } else {
            let (l, u) = (rel(oracles.linear), rel(oracles.univariate));
            let (best, err) = if l <= u { (PhaseLabel::Linear, l) } else { (PhaseLabel::Univariate, u) };
            if err <= cfg.tolerance {
                (best, err)
            } else {
                (PhaseLabel::Unmatched, err)
            }
        };
        plateaus.push(Plateau { start_step: steps[first], end_step: steps[last], level, label, rel_error });
    }
    let linear = plateaus.iter().position(|p| p.label == PhaseLabel::Linear);
    let univariate = plateaus
        .iter()
        .enumerate()
        .skip(linear.map_or(0, |i| i + 1))
        .find(|(_, p)| p.label == PhaseLabel::Univariate)
        .map(|(i, _)| i);
    Ok(PhaseReport { oracles, config: cfg, plateaus, linear, univariate, final_loss: losses[n - 1] })
}

pub fn detect_phases_in(history: &TrainHistory, oracles: PhaseOracles, cfg: PhaseConfig) -> Result<PhaseReport> {
    let steps: Vec<usize> = history.rows.iter().map(|r| r.step).collect();
    detect_phases(&steps, &history.losses(), oracles, cfg)
}
