//! Local Dependency Ratio: the share of a region's output-gradient energy
//! that comes from inputs inside the same region.
//!
//! For a Jacobian `J` and region `R`, the per-sample ratio is
//! `Σ_{i∈R, k∈R} J_ik² / Σ_{i∈R, k} J_ik²`; reports average it over
//! `x ~ p_t`.

use std::fmt::Write as _;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, LabError, Result};
use crate::numeric::mean_stderr;

/// Samples whose region trace falls below this are treated as degenerate.
pub const DEGENERATE_TRACE: f64 = 1e-18;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Region {
    indices: Vec<usize>,
    d: usize,
}

impl Region {
    pub fn new(indices: &[usize], d: usize) -> Result<Self> {
        if indices.is_empty() {
            return Err(invalid("region must be nonempty"));
        }
        let mut sorted = indices.to_vec();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(invalid(format!("duplicate index in region {indices:?}")));
        }
        if let Some(k) = sorted.iter().find(|k| **k >= d) {
            return Err(invalid(format!("region index {k} out of range for d = {d}")));
        }
        Ok(Self { indices: sorted, d })
    }

    pub fn single(i: usize, d: usize) -> Result<Self> {
        Self::new(&[i], d)
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, k: usize) -> bool {
        self.indices.binary_search(&k).is_ok()
    }

    /// Parses `"0,1,3"`.
    pub fn parse(text: &str, d: usize) -> Result<Self> {
        let idx = text
            .split(',')
            .map(|s| s.trim().parse::<usize>().map_err(|_| invalid(format!("bad region index '{s}'"))))
            .collect::<Result<Vec<_>>>()?;
        Self::new(&idx, d)
    }

    pub fn union(&self, other: &Region) -> Result<Region> {
        let mut all = self.indices.clone();
        all.extend_from_slice(&other.indices);
        Region::new(&all, self.d)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdrReport {
    pub region: Vec<usize>,
    pub t: Option<usize>,
    pub n_samples: usize,
    pub n_skipped: usize,
    pub ldr_mean: f64,
    pub ldr_stderr: f64,
    /// Mean over samples of `Σ_{i∈R} J_ik²` for each input `k`.
    pub saliency: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

impl LdrReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// `(Σ_{i∈R,k∈R} J_ik², Σ_{i∈R,k} J_ik²)` for a row-major `d×d` Jacobian.
pub fn region_traces(jac: &[f64], region: &Region) -> (f64, f64) {
    let d = region.dim();
    let (mut inside, mut total) = (0.0, 0.0);
    for &i in region.indices() {
        for k in 0..d {
            let v = jac[i * d + k] * jac[i * d + k];
            total += v;
            if region.contains(k) {
                inside += v;
            }
        }
    }
    (inside, total)
}

/// Per-sample ratio, or `None` for a degenerate sample.
pub fn ldr_of_jacobian(jac: &[f64], region: &Region) -> Option<f64> {
    let (inside, total) = region_traces(jac, region);
    (total >= DEGENERATE_TRACE).then(|| inside / total)
}

/// Entry `k` is `Σ_{i∈R} J_ik²`.
pub fn saliency(jac: &[f64], region: &Region) -> Vec<f64> {
    let d = region.dim();
    let mut out = vec![0.0; d];
    for &i in region.indices() {
        for (k, o) in out.iter_mut().enumerate() {
            *o += jac[i * d + k] * jac[i * d + k];
        }
    }
    out
}

pub fn saliency_csv(values: &[f64]) -> String {
    let mut out = String::from("index,value\n");
    for (k, v) in values.iter().enumerate() {
        writeln!(out, "{k},{v:e}").expect("write to String");
    }
    out
}

/// Exact LDR at fixed evaluation points.
pub fn ldr_exact_at<J: Fn(&[f64]) -> Vec<f64>>(jacobian_fn: J, region: &Region, points: &[Vec<f64>]) -> Result<LdrReport> {
    let d = region.dim();
    let mut ratios = Vec::with_capacity(points.len());
    let mut sal = vec![0.0; d];
    for x in points {
        let jac = jacobian_fn(x);
        if jac.len() != d * d {
            return Err(LabError::ShapeMismatch { expected: d * d, got: jac.len() });
        }
        for (s, v) in sal.iter_mut().zip(saliency(&jac, region)) {
            *s += v;
        }
        if let Some(r) = ldr_of_jacobian(&jac, region) {
            ratios.push(r);
        }
    }
    let skipped = points.len() - ratios.len();
    if ratios.is_empty() {
        return Err(LabError::ZeroJacobian { skipped, total: points.len() });
    }
    let (mean, stderr) = mean_stderr(&ratios);
    sal.iter_mut().for_each(|s| *s /= points.len() as f64);
    Ok(LdrReport {
        region: region.indices().to_vec(),
        t: None,
        n_samples: points.len(),
        n_skipped: skipped,
        ldr_mean: mean,
        ldr_stderr: stderr,
        saliency: sal,
        warning: None,
    })
}

/// Exact LDR over `n` draws from `sampler`. Points are drawn before any
/// Jacobian is evaluated.
pub fn ldr_exact<J, S, R>(jacobian_fn: J, region: &Region, mut sampler: S, n: usize, rng: &mut R) -> Result<LdrReport>
where
    J: Fn(&[f64]) -> Vec<f64>,
    S: FnMut(&mut R) -> Vec<f64>,
    R: Rng + ?Sized,
{
    if n == 0 {
        return Err(invalid("n must be at least 1"));
    }
    let points: Vec<Vec<f64>> = (0..n).map(|_| sampler(rng)).collect();
    ldr_exact_at(jacobian_fn, region, &points)
}

/// Both sides of `LDR(R₁ ∪ R₂) ≥ LDR(R₁) + LDR(R₂)` for disjoint regions,
/// under the region-normalized ratio and under a ratio normalized by the
/// trace of the full Jacobian.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnionCheck {
    pub normalized: [f64; 3],
    pub full_trace: [f64; 3],
    pub normalized_holds: bool,
    pub full_trace_holds: bool,
}

pub fn union_check<J: Fn(&[f64]) -> Vec<f64>>(
    jacobian_fn: J,
    r1: &Region,
    r2: &Region,
    points: &[Vec<f64>],
) -> Result<UnionCheck> {
    if r1.indices().iter().any(|k| r2.contains(*k)) {
        return Err(invalid("regions must be disjoint"));
    }
    let ru = r1.union(r2)?;
    let d = r1.dim();
    let all = Region::new(&(0..d).collect::<Vec<_>>(), d)?;
    let mut norm = [Vec::new(), Vec::new(), Vec::new()];
    let mut full = [Vec::new(), Vec::new(), Vec::new()];
    for x in points {
        let jac = jacobian_fn(x);
        let (_, whole) = region_traces(&jac, &all);
        if whole < DEGENERATE_TRACE {
            continue;
        }
        for (slot, r) in [r1, r2, &ru].into_iter().enumerate() {
            let (inside, total) = region_traces(&jac, r);
            if total >= DEGENERATE_TRACE {
                norm[slot].push(inside / total);
            }
            full[slot].push(inside / whole);
        }
    }
    let mean = |v: &Vec<f64>| if v.is_empty() { f64::NAN } else { mean_stderr(v).0 };
    let normalized = [mean(&norm[0]), mean(&norm[1]), mean(&norm[2])];
    let full_trace = [mean(&full[0]), mean(&full[1]), mean(&full[2])];
    let tol = 1e-12;
    Ok(UnionCheck {
        normalized,
        full_trace,
        normalized_holds: normalized[2] + tol >= normalized[0] + normalized[1],
        full_trace_holds: full_trace[2] + tol >= full_trace[0] + full_trace[1],
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZerothOrderConfig {
    pub eps: f64,
    pub n_probes: usize,
    pub n_points: usize,
}

impl Default for ZerothOrderConfig {
    fn default() -> Self {
        Self { eps: 1e-4, n_probes: 4096, n_points: 64 }
    }
}

/// Black-box LDR from forward differences.
///
/// At each point, `E‖f(x+ε₁) - f(x)‖²` with `ε₁ ~ N(0, eps²I)` estimates
/// `eps² Σ_{i∈R,k} J_ik²`, and the same with `ε₂ = P_R ε₁` estimates
/// `eps² Σ_{i∈R,k∈R} J_ik²`; `f` is the output restricted to `R`. The ratio
/// of the two is the pointwise LDR. Both use the same probes, which also
/// give the Gaussian-smoothing gradient estimate used for the saliency. The whole
/// estimate is repeated at `eps/2`; a relative change above 20% sets the
/// report's warning.
pub fn ldr_zeroth_order<F, S, R>(
    score_fn: F,
    region: &Region,
    mut sampler: S,
    cfg: ZerothOrderConfig,
    rng: &mut R,
) -> Result<LdrReport>
where
    F: Fn(&[f64]) -> Vec<f64>,
    S: FnMut(&mut R) -> Vec<f64>,
    R: Rng + ?Sized,
{
    if !(cfg.eps > 0.0) {
        return Err(invalid("eps must be positive"));
    }
    if cfg.n_probes < 2 {
        return Err(invalid("n_probes must be at least 2"));
    }
    if cfg.n_points == 0 {
        return Err(invalid("n_points must be at least 1"));
    }
    let d = region.dim();
    let points: Vec<Vec<f64>> = (0..cfg.n_points).map(|_| sampler(rng)).collect();
    let restricted = |x: &[f64]| -> Vec<f64> {
        let out = score_fn(x);
        region.indices().iter().map(|&i| out[i]).collect()
    };
    let sq_diff = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>();

    let mut ratios = Vec::with_capacity(points.len());
    let mut ratios_half = Vec::with_capacity(points.len());
    let mut sal = vec![0.0; d];
    let mut xp = vec![0.0; d];
    let mut z = vec![0.0; d];
    for x in &points {
        if x.len() != d {
            return Err(LabError::ShapeMismatch { expected: d, got: x.len() });
        }
        let f0 = restricted(x);
        // [iso, region] at eps and eps/2
        let mut acc = [[0.0f64; 2]; 2];
        // Gaussian-smoothing estimate of the region rows of J, for saliency
        let mut grad = vec![vec![0.0; region.len()]; d];
        for _ in 0..cfg.n_probes {
            z.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
            for (h, scale) in [cfg.eps, 0.5 * cfg.eps].into_iter().enumerate() {
                for (k, xk) in xp.iter_mut().enumerate() {
                    *xk = x[k] + scale * z[k];
                }
                let fx = restricted(&xp);
                acc[h][0] += sq_diff(&fx, &f0);
                if h == 0 {
                    for (k, g) in grad.iter_mut().enumerate() {
                        for (gi, (a, b)) in g.iter_mut().zip(fx.iter().zip(&f0)) {
                            *gi += (a - b) * z[k] / cfg.eps;
                        }
                    }
                }
                for (k, xk) in xp.iter_mut().enumerate() {
                    *xk = x[k] + if region.contains(k) { scale * z[k] } else { 0.0 };
                }
                acc[h][1] += sq_diff(&restricted(&xp), &f0);
            }
        }
        let probes = cfg.n_probes as f64;
        let iso = acc[0][0] / (probes * cfg.eps * cfg.eps);
        for (k, s) in sal.iter_mut().enumerate() {
            *s += grad[k].iter().map(|g| (g / probes).powi(2)).sum::<f64>();
        }
        if iso * cfg.eps * cfg.eps >= DEGENERATE_TRACE {
            ratios.push((acc[0][1] / acc[0][0]).min(1.0));
        }
        if acc[1][0] > 0.0 {
            ratios_half.push((acc[1][1] / acc[1][0]).min(1.0));
        }
    }
    let skipped = points.len() - ratios.len();
    if ratios.is_empty() {
        return Err(LabError::ZeroJacobian { skipped, total: points.len() });
    }
    let (mean, stderr) = mean_stderr(&ratios);
    let warning = if ratios_half.is_empty() {
        None
    } else {
        let (half, _) = mean_stderr(&ratios_half);
        ((mean - half).abs() > 0.2 * half.abs()).then(|| {
            format!("estimate moved from {half:.4} to {mean:.4} between eps/2 and eps; eps is outside the linear regime")
        })
    };
    sal.iter_mut().for_each(|s| *s /= points.len() as f64);
    Ok(LdrReport {
        region: region.indices().to_vec(),
        t: None,
        n_samples: points.len(),
        n_skipped: skipped,
        ldr_mean: mean,
        ldr_stderr: stderr,
        saliency: sal,
        warning,
    })
}
