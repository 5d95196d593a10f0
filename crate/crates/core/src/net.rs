//! Per-coordinate two-layer ReLU score network
//! `s_i(x) = Σ_j a_ij ReLU(w_ijᵀx + b_ij)` with analytic Jacobian and
//! parameter gradients.
//!
//! Parameters are stored flat: `a[i*m + j]`, `b[i*m + j]` and
//! `w[(i*m + j)*d + k]`. The subgradient at the kink is taken to be zero.

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, LabError, Result};
use crate::numeric::rng_from_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    /// `w ~ N(0, σ²I)`, `b ~ N(0, σ²r²)`, `a = ±√(‖w‖² + b²)` with a random sign.
    #[default]
    Balanced,
    /// `w ~ N(0, σ²I)`, `b = 0`, `a = ‖w‖²`. Used by the stair-loss replication.
    SquaredNorm,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitConfig {
    pub sigma_init: f64,
    pub r: f64,
    pub seed: u64,
    #[serde(default)]
    pub scheme: InitScheme,
}

impl InitConfig {
    pub fn new(sigma_init: f64, r: f64, seed: u64) -> Result<Self> {
        let cfg = Self { sigma_init, r, seed, scheme: InitScheme::Balanced };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_scheme(mut self, scheme: InitScheme) -> Self {
        self.scheme = scheme;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_init > 0.0 && self.sigma_init.is_finite()) {
            return Err(invalid(format!("sigma_init must be positive, got {}", self.sigma_init)));
        }
        if !(self.r > 0.0 && self.r.is_finite()) {
            return Err(invalid(format!("r must be positive, got {}", self.r)));
        }
        Ok(())
    }
}

/// Gradients with the same layout as the network parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub a: Vec<f64>,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Gradients {
    pub fn zeros(d: usize, m: usize) -> Self {
        Self { a: vec![0.0; d * m], w: vec![0.0; d * m * d], b: vec![0.0; d * m] }
    }

    pub fn max_abs(&self) -> f64 {
        self.a.iter().chain(&self.w).chain(&self.b).fold(0.0, |acc, v| acc.max(v.abs()))
    }
}

/// A weighted batch of inputs stored column-major (`x_k` over the batch is
/// contiguous), which keeps the per-neuron inner loops vectorizable.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    d: usize,
    n: usize,
    cols: Vec<f64>,
    /// Row-major copy, `x_n` contiguous.
    rows: Vec<f64>,
    /// Row-major `[x_n, 1]`.
    rows_ext: Vec<f64>,
    weights: Vec<f64>,
}

impl Batch {
    /// Uniform weights `1/n`.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        Self::weighted(rows, vec![1.0 / n as f64; n])
    }

    pub fn weighted(rows: &[Vec<f64>], weights: Vec<f64>) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(invalid("batch must be nonempty"));
        }
        if weights.len() != n {
            return Err(LabError::ShapeMismatch { expected: n, got: weights.len() });
        }
        let d = rows[0].len();
        let mut cols = vec![0.0; d * n];
        for (s, row) in rows.iter().enumerate() {
            if row.len() != d {
                return Err(LabError::ShapeMismatch { expected: d, got: row.len() });
            }
            for (k, v) in row.iter().enumerate() {
                cols[k * n + s] = *v;
            }
        }
        let rows_ext = rows.iter().flat_map(|r| r.iter().copied().chain([1.0])).collect();
        let rows = rows.concat();
        Ok(Self { d, n, cols, rows, rows_ext, weights })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn column(&self, k: usize) -> &[f64] {
        &self.cols[k * self.n..(k + 1) * self.n]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.rows[s * self.d..(s + 1) * self.d]
    }
}

/// Reusable buffers for the batch kernels.
#[derive(Debug, Default, Clone)]
pub struct Scratch {
    z: Vec<f64>,
    out: Vec<f64>,
    resid: Vec<f64>,
    masked: Vec<f64>,
    moments: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoLayerScoreNet {
    d: usize,
    m: usize,
    pub t_tag: usize,
    a: Vec<f64>,
    w: Vec<f64>,
    b: Vec<f64>,
    /// `a² - ‖w‖² - b²` per neuron, recorded at construction.
    balance_ref: Vec<f64>,
    pub init: Option<InitConfig>,
    pub step: usize,
}

impl TwoLayerScoreNet {
    pub fn zeros(d: usize, m: usize, t_tag: usize) -> Result<Self> {
        Self::from_params(d, m, t_tag, vec![0.0; d * m], vec![0.0; d * m * d], vec![0.0; d * m])
    }

    pub fn from_params(d: usize, m: usize, t_tag: usize, a: Vec<f64>, w: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        if d == 0 || m == 0 {
            return Err(invalid("d and m must be at least 1"));
        }
        for (len, want) in [(a.len(), d * m), (w.len(), d * m * d), (b.len(), d * m)] {
            if len != want {
                return Err(LabError::ShapeMismatch { expected: want, got: len });
            }
        }
        if a.iter().chain(&w).chain(&b).any(|v| !v.is_finite()) {
            return Err(invalid("parameters must be finite"));
        }
        let mut net = Self { d, m, t_tag, a, w, b, balance_ref: Vec::new(), init: None, step: 0 };
        net.reset_balance_reference();
        Ok(net)
    }

    pub fn init(d: usize, m: usize, t_tag: usize, cfg: InitConfig) -> Result<Self> {
        cfg.validate()?;
        if d == 0 || m == 0 {
            return Err(invalid("d and m must be at least 1"));
        }
        let mut rng = rng_from_seed(cfg.seed);
        let nw = Normal::new(0.0, cfg.sigma_init).expect("positive sigma");
        let nb = Normal::new(0.0, cfg.sigma_init * cfg.r).expect("positive sigma");
        let n = d * m;
        let mut a = vec![0.0; n];
        let mut w = vec![0.0; n * d];
        let mut b = vec![0.0; n];
        for u in 0..n {
            let wu = &mut w[u * d..(u + 1) * d];
            wu.iter_mut().for_each(|v| *v = nw.sample(&mut rng));
            let wsq: f64 = wu.iter().map(|v| v * v).sum();
            match cfg.scheme {
                InitScheme::Balanced => {
                    b[u] = nb.sample(&mut rng);
                    let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                    a[u] = sign * (wsq + b[u] * b[u]).sqrt();
                }
                InitScheme::SquaredNorm => a[u] = wsq,
            }
        }
        let mut net = Self::from_params(d, m, t_tag, a, w, b)?;
        net.init = Some(cfg);
        Ok(net)
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn width(&self) -> usize {
        self.m
    }

    pub fn a(&self) -> &[f64] {
        &self.a
    }

    pub fn w(&self) -> &[f64] {
        &self.w
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    pub fn a_mut(&mut self) -> &mut [f64] {
        &mut self.a
    }

    pub fn w_mut(&mut self) -> &mut [f64] {
        &mut self.w
    }

    pub fn b_mut(&mut self) -> &mut [f64] {
        &mut self.b
    }

    /// Weight vector of neuron `j` of output `i`.
    pub fn neuron_w(&self, i: usize, j: usize) -> &[f64] {
        let u = i * self.m + j;
        &self.w[u * self.d..(u + 1) * self.d]
    }

    pub fn neuron(&self, i: usize, j: usize) -> (f64, &[f64], f64) {
        let u = i * self.m + j;
        (self.a[u], self.neuron_w(i, j), self.b[u])
    }

    pub fn reset_balance_reference(&mut self) {
        self.balance_ref = (0..self.d * self.m).map(|u| self.balance_of(u)).collect();
    }

    fn balance_of(&self, u: usize) -> f64 {
        let wsq: f64 = self.w[u * self.d..(u + 1) * self.d].iter().map(|v| v * v).sum();
        self.a[u] * self.a[u] - wsq - self.b[u] * self.b[u]
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.d {
            return Err(LabError::ShapeMismatch { expected: self.d, got: x.len() });
        }
        Ok(())
    }

    fn pre_activation(&self, u: usize, x: &[f64]) -> f64 {
        let wu = &self.w[u * self.d..(u + 1) * self.d];
        wu.iter().zip(x).map(|(w, x)| w * x).sum::<f64>() + self.b[u]
    }

    pub fn forward_coord(&self, i: usize, x: &[f64]) -> f64 {
        (i * self.m..(i + 1) * self.m).map(|u| self.a[u] * self.pre_activation(u, x).max(0.0)).sum()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok((0..self.d).map(|i| self.forward_coord(i, x)).collect())
    }

    /// `J[i*d + k] = ∂s_i/∂x_k`.
    pub fn input_jacobian(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let d = self.d;
        let mut jac = vec![0.0; d * d];
        for i in 0..d {
            let row = &mut jac[i * d..(i + 1) * d];
            for u in i * self.m..(i + 1) * self.m {
                if self.pre_activation(u, x) > 0.0 {
                    for (r, w) in row.iter_mut().zip(&self.w[u * d..(u + 1) * d]) {
                        *r += self.a[u] * w;
                    }
                }
            }
        }
        Ok(jac)
    }

    /// Output `i` over the whole batch, leaving pre-activations in `scratch`.
    fn forward_batch_coord(&self, i: usize, batch: &Batch, scratch: &mut Scratch) {
        let (n, d, m) = (batch.n, self.d, self.m);
        scratch.z.resize(m * n, 0.0);
        scratch.out.clear();
        scratch.out.resize(n, 0.0);
        let w = &self.w[i * m * d..(i + 1) * m * d];
        // Z (m×n) = W_i (m×d) · X (d×n)
        // SAFETY: all pointers cover the m×d, d×n and m×n extents given by the strides.
        unsafe {
            matrixmultiply::dgemm(
                m,
                d,
                n,
                1.0,
                w.as_ptr(),
                d as isize,
                1,
                batch.cols.as_ptr(),
                n as isize,
                1,
                0.0,
                scratch.z.as_mut_ptr(),
                n as isize,
                1,
            );
        }
        for j in 0..m {
            let u = i * m + j;
            let (a, b) = (self.a[u], self.b[u]);
            let z = &mut scratch.z[j * n..(j + 1) * n];
            for (o, zv) in scratch.out.iter_mut().zip(z.iter_mut()) {
                *zv += b;
                *o += a * if *zv > 0.0 { *zv } else { 0.0 };
            }
        }
    }

    /// Gradient of `Σ_n r_n s_i(x_n)` with the (already weighted) residual
    /// `r` held fixed.
    ///
    /// With `M_jn = r_n 1[z_jn > 0]`, one product `M · [X | 1]ᵀ` gives
    /// `Σ_n M_jn x_n` and `Σ_n M_jn`; the `a`-gradient follows from them by
    /// homogeneity, `Σ_n M_jn z_jn = w_j·Σ_n M_jn x_n + b_j Σ_n M_jn`.
    fn backward_coord(&self, i: usize, batch: &Batch, resid: &[f64], scratch: &mut Scratch, grads: &mut Gradients) {
        let (n, d, m) = (batch.n, self.d, self.m);
        let e = d + 1;
        scratch.masked.resize(m * n, 0.0);
        scratch.moments.resize(m * e, 0.0);
        for (masked, z) in scratch.masked.chunks_exact_mut(n).zip(scratch.z.chunks_exact(n)) {
            for ((mr, zv), r) in masked.iter_mut().zip(z).zip(resid) {
                *mr = f64::from(u8::from(*zv > 0.0)) * r;
            }
        }
        // SAFETY: M is m×n, [X | 1] is n×(d+1) and the output m×(d+1), all
        // row-major with the given strides.
        unsafe {
            matrixmultiply::dgemm(
                m,
                n,
                e,
                1.0,
                scratch.masked.as_ptr(),
                n as isize,
                1,
                batch.rows_ext.as_ptr(),
                e as isize,
                1,
                0.0,
                scratch.moments.as_mut_ptr(),
                e as isize,
                1,
            );
        }
        for j in 0..m {
            let u = i * m + j;
            let mom = &scratch.moments[j * e..(j + 1) * e];
            let (sx, s1) = (&mom[..d], mom[d]);
            let w = &self.w[u * d..(u + 1) * d];
            let a = self.a[u];
            grads.a[u] = w.iter().zip(sx).map(|(w, v)| w * v).sum::<f64>() + self.b[u] * s1;
            grads.b[u] = a * s1;
            for (g, v) in grads.w[u * d..(u + 1) * d].iter_mut().zip(sx) {
                *g = a * v;
            }
        }
    }

    /// Gradient of the weighted squared error `Σ_n c_n (s_i(x_n) - y_n)²` for
    /// the outputs in `coords`; returns the per-coordinate losses.
    /// `targets[i]` holds `y_i` over the batch.
    pub fn loss_gradients_batch(
        &self,
        batch: &Batch,
        targets: &[Vec<f64>],
        coords: &[usize],
        mode: GradientMode,
        scratch: &mut Scratch,
        grads: &mut Gradients,
    ) -> Vec<f64> {
        let mut losses = Vec::with_capacity(coords.len());
        let mut resid = std::mem::take(&mut scratch.resid);
        for &i in coords {
            self.forward_batch_coord(i, batch, scratch);
            let y = &targets[i];
            resid.clear();
            let mut loss = 0.0;
            for ((s, yv), c) in scratch.out.iter().zip(y).zip(&batch.weights) {
                loss += c * (s - yv) * (s - yv);
                resid.push(match mode {
                    GradientMode::FullLoss => 2.0 * c * (s - yv),
                    GradientMode::Surrogate => -2.0 * c * yv,
                });
            }
            losses.push(loss);
            self.backward_coord(i, batch, &resid, scratch, grads);
        }
        scratch.resid = resid;
        losses
    }

    /// Per-coordinate weighted squared error without gradients.
    pub fn batch_loss(&self, batch: &Batch, targets: &[Vec<f64>], coords: &[usize], scratch: &mut Scratch) -> Vec<f64> {
        coords
            .iter()
            .map(|&i| {
                self.forward_batch_coord(i, batch, scratch);
                scratch.out.iter().zip(&targets[i]).zip(&batch.weights).map(|((s, y), c)| c * (s - y) * (s - y)).sum()
            })
            .collect()
    }

    /// Gradients of the mean over the batch of `‖s(x) - y(x)‖²`.
    pub fn loss_gradients(&self, xs: &[Vec<f64>], ys: &[Vec<f64>]) -> Result<Gradients> {
        self.row_gradients(xs, ys, GradientMode::FullLoss)
    }

    /// Gradients of the mean over the batch of `-2 s(x)ᵀy(x)`.
    pub fn surrogate_gradients(&self, xs: &[Vec<f64>], ys: &[Vec<f64>]) -> Result<Gradients> {
        self.row_gradients(xs, ys, GradientMode::Surrogate)
    }

    fn row_gradients(&self, xs: &[Vec<f64>], ys: &[Vec<f64>], mode: GradientMode) -> Result<Gradients> {
        if xs.len() != ys.len() {
            return Err(LabError::ShapeMismatch { expected: xs.len(), got: ys.len() });
        }
        for row in xs.iter().chain(ys) {
            self.check_input(row)?;
        }
        let batch = Batch::from_rows(xs)?;
        let targets: Vec<Vec<f64>> = (0..self.d).map(|i| ys.iter().map(|y| y[i]).collect()).collect();
        let coords: Vec<usize> = (0..self.d).collect();
        let mut grads = Gradients::zeros(self.d, self.m);
        self.loss_gradients_batch(&batch, &targets, &coords, mode, &mut Scratch::default(), &mut grads);
        Ok(grads)
    }

    /// Euler step `θ ← θ - η g` on the neurons of the listed outputs.
    pub fn apply_gradients(&mut self, grads: &Gradients, eta: f64, coords: &[usize]) {
        let (d, m) = (self.d, self.m);
        for &i in coords {
            for u in i * m..(i + 1) * m {
                self.a[u] -= eta * grads.a[u];
                self.b[u] -= eta * grads.b[u];
                for k in u * d..(u + 1) * d {
                    self.w[k] -= eta * grads.w[k];
                }
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.a.iter().chain(&self.w).chain(&self.b).all(|v| v.is_finite())
    }

    /// `max |a² - ‖w‖² - b² - c|` with `c` recorded at construction.
    pub fn balance_residual(&self) -> f64 {
        (0..self.d * self.m).map(|u| (self.balance_of(u) - self.balance_ref[u]).abs()).fold(0.0, f64::max)
    }

    /// `Σ_j |a_ij| ‖(I - e_i e_iᵀ) w_ij‖`.
    pub fn m_set_distance(&self, i: usize) -> f64 {
        self.off_axis_norm(i)
    }

    /// `Σ_j |a_ij w_ij^(i)|`.
    pub fn aligned_norm(&self, i: usize) -> f64 {
        (0..self.m).map(|j| (self.a[i * self.m + j] * self.neuron_w(i, j)[i]).abs()).sum()
    }

    pub fn off_axis_norm(&self, i: usize) -> f64 {
        (0..self.m)
            .map(|j| {
                let w = self.neuron_w(i, j);
                let off: f64 = w.iter().enumerate().filter(|(k, _)| *k != i).map(|(_, v)| v * v).sum();
                self.a[i * self.m + j].abs() * off.sqrt()
            })
            .sum()
    }

    /// Zeroes every off-axis weight component; `a` and `b` are unchanged.
    pub fn project_to_m(&self) -> Self {
        let mut out = self.clone();
        for i in 0..self.d {
            for j in 0..self.m {
                let u = i * self.m + j;
                for k in 0..self.d {
                    if k != i {
                        out.w[u * self.d + k] = 0.0;
                    }
                }
            }
        }
        out
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut bytes = Vec::with_capacity(8 * (self.a.len() + self.w.len() + self.b.len()));
        for v in self.a.iter().chain(&self.w).chain(&self.b) {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let mut reference = Vec::with_capacity(8 * self.balance_ref.len());
        for v in &self.balance_ref {
            reference.extend_from_slice(&v.to_le_bytes());
        }
        Checkpoint {
            d: self.d,
            m: self.m,
            t_tag: self.t_tag,
            init: self.init,
            step: self.step,
            params: B64.encode(bytes),
            balance_reference: Some(B64.encode(reference)),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let (d, m) = (ck.d, ck.m);
        let values = decode_f64s(&ck.params)?;
        let (na, nw) = (d * m, d * m * d);
        if values.len() != 2 * na + nw {
            return Err(LabError::Checkpoint(format!(
                "expected {} parameters for d={d}, m={m}, found {}",
                2 * na + nw,
                values.len()
            )));
        }
        let a = values[..na].to_vec();
        let w = values[na..na + nw].to_vec();
        let b = values[na + nw..].to_vec();
        let mut net = Self::from_params(d, m, ck.t_tag, a, w, b).map_err(|e| LabError::Checkpoint(e.to_string()))?;
        if let Some(r) = &ck.balance_reference {
            let reference = decode_f64s(r)?;
            if reference.len() != na {
                return Err(LabError::Checkpoint("balance reference has the wrong length".into()));
            }
            net.balance_ref = reference;
        }
        net.init = ck.init;
        net.step = ck.step;
        Ok(net)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_checkpoint())?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text).map_err(|e| LabError::Checkpoint(e.to_string()))?;
        Self::from_checkpoint(&ck)
    }
}

fn decode_f64s(text: &str) -> Result<Vec<f64>> {
    let bytes = B64.decode(text).map_err(|e| LabError::Checkpoint(e.to_string()))?;
    if bytes.len() % 8 != 0 {
        return Err(LabError::Checkpoint("payload length is not a multiple of 8".into()));
    }
    Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GradientMode {
    #[default]
    FullLoss,
    Surrogate,
}

/// On-disk form: a JSON header plus base64 little-endian `f64` parameters in
/// `(a, w, b)` order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub d: usize,
    pub m: usize,
    pub t_tag: usize,
    pub init: Option<InitConfig>,
    pub step: usize,
    pub params: String,
    #[serde(default)]
    pub balance_reference: Option<String>,
}
