//! Decoding generated vectors back to symbols and sorting them into
//! invalid / hallucination / in-dataset / extrapolation.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffusion::NoiseSchedule;
use crate::diffusion::{generate, ScoreModel};
use crate::dist::{sq_dist, AmbientDensity, Renderer, SymbolicDistribution};
use crate::error::{invalid, LabError, Result};
use crate::net::TwoLayerScoreNet;
use crate::numeric::rng_from_seed;

pub const DEFAULT_TAU: f64 = 0.5;

/// Nearest template per symbol slot, or `None` when some slot is farther
/// than `tau` from every template.
pub fn decode(x: &[f64], renderer: &Renderer, tau: f64) -> Option<Vec<usize>> {
    let k = renderer.symbol_dim();
    if !x.len().is_multiple_of(k) {
        return None;
    }
    let tau2 = tau * tau;
    x.chunks_exact(k)
        .map(|slot| {
            let (best, d2) =
                renderer.templates().iter().enumerate().map(|(s, t)| (s, sq_dist(slot, t))).min_by(|a, b| a.1.total_cmp(&b.1))?;
            (d2 <= tau2).then_some(best)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Invalid,
    Hallucination,
    InDataset,
    Extrapolation,
}

/// Training sequences, held out from the rest of the support.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSplit {
    pub fraction: f64,
    pub seed: u64,
    pub train: Vec<Vec<usize>>,
    pub held_out: Vec<Vec<usize>>,
    #[serde(skip)]
    index: HashSet<Vec<usize>>,
}

impl TrainSplit {
    /// Uniformly random subset of `round(fraction · |support|)` sequences
    /// (at least one).
    pub fn random(dist: &SymbolicDistribution, fraction: f64, seed: u64) -> Result<Self> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(invalid(format!("train fraction must lie in (0, 1], got {fraction}")));
        }
        let mut all = dist.support().to_vec();
        all.shuffle(&mut rng_from_seed(seed));
        let n = ((fraction * all.len() as f64).round() as usize).clamp(1, all.len());
        let held_out = all.split_off(n);
        Ok(Self::from_parts(fraction, seed, all, held_out))
    }

    /// Every support sequence is a training sequence.
    pub fn full(dist: &SymbolicDistribution) -> Self {
        Self::from_parts(1.0, 0, dist.support().to_vec(), Vec::new())
    }

    fn from_parts(fraction: f64, seed: u64, train: Vec<Vec<usize>>, held_out: Vec<Vec<usize>>) -> Self {
        let index = train.iter().cloned().collect();
        Self { fraction, seed, train, held_out, index }
    }

    pub fn contains(&self, seq: &[usize]) -> bool {
        if self.index.len() == self.train.len() {
            self.index.contains(seq)
        } else {
            self.train.iter().any(|s| s == seq)
        }
    }

    /// The training sequences rendered as an ambient density with equal mass.
    pub fn density(&self, renderer: &Renderer) -> Result<AmbientDensity> {
        let points: Vec<Vec<f64>> = self.train.iter().map(|s| renderer.render_sequence(s)).collect();
        let dim = points[0].len();
        let mass = vec![1.0 / points.len() as f64; points.len()];
        AmbientDensity::new(dim, points, mass)
    }
}

pub fn classify_decoded(decoded: Option<&[usize]>, dist: &SymbolicDistribution, train: &TrainSplit) -> Category {
    match decoded {
        None => Category::Invalid,
        Some(seq) if !dist.satisfies(seq) => Category::Hallucination,
        Some(seq) if train.contains(seq) => Category::InDataset,
        Some(_) => Category::Extrapolation,
    }
}

pub fn classify(x: &[f64], dist: &SymbolicDistribution, train: &TrainSplit, renderer: &Renderer, tau: f64) -> Category {
    classify_decoded(decode(x, renderer, tau).as_deref(), dist, train)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CategoryCounts {
    pub invalid: usize,
    pub hallucination: usize,
    pub in_dataset: usize,
    pub extrapolation: usize,
}

impl CategoryCounts {
    pub fn add(&mut self, c: Category) {
        match c {
            Category::Invalid => self.invalid += 1,
            Category::Hallucination => self.hallucination += 1,
            Category::InDataset => self.in_dataset += 1,
            Category::Extrapolation => self.extrapolation += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.invalid + self.hallucination + self.in_dataset + self.extrapolation
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CategoryProportions {
    pub invalid: f64,
    pub hallucination: f64,
    pub in_dataset: f64,
    pub extrapolation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub x: Vec<f64>,
    pub decoded: Option<Vec<usize>>,
    pub category: Category,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationReport {
    pub checkpoint: String,
    pub checkpoint_step: Option<usize>,
    pub n_total: usize,
    pub counts: CategoryCounts,
    pub proportions: CategoryProportions,
    pub tau: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub samples: Vec<SampleRecord>,
}

impl GenerationReport {
    /// Classifies `samples`; per-sample records are kept when `keep_samples`.
    #[allow(clippy::too_many_arguments)]
    pub fn from_samples(
        checkpoint: impl Into<String>,
        checkpoint_step: Option<usize>,
        samples: &[Vec<f64>],
        dist: &SymbolicDistribution,
        train: &TrainSplit,
        renderer: &Renderer,
        tau: f64,
        keep_samples: bool,
    ) -> Result<Self> {
        if !(tau > 0.0) {
            return Err(invalid("tau must be positive"));
        }
        if samples.is_empty() {
            return Err(invalid("no samples to classify"));
        }
        let mut counts = CategoryCounts::default();
        let mut records = Vec::new();
        for x in samples {
            let decoded = decode(x, renderer, tau);
            let category = classify_decoded(decoded.as_deref(), dist, train);
            counts.add(category);
            if keep_samples {
                records.push(SampleRecord { x: x.clone(), decoded, category });
            }
        }
        let n = samples.len() as f64;
        let proportions = CategoryProportions {
            invalid: counts.invalid as f64 / n,
            hallucination: counts.hallucination as f64 / n,
            in_dataset: counts.in_dataset as f64 / n,
            extrapolation: counts.extrapolation as f64 / n,
        };
        Ok(Self {
            checkpoint: checkpoint.into(),
            checkpoint_step,
            n_total: samples.len(),
            counts,
            proportions,
            tau,
            samples: records,
        })
    }
}

/// `checkpoint_step,invalid,hallucination,in_dataset,extrapolation` with
/// proportions.
pub fn reports_csv(reports: &[GenerationReport]) -> String {
    let mut out = String::from("checkpoint_step,invalid,hallucination,in_dataset,extrapolation\n");
    for r in reports {
        let step = r.checkpoint_step.map(|s| s.to_string()).unwrap_or_default();
        let p = &r.proportions;
        writeln!(out, "{step},{},{},{},{}", p.invalid, p.hallucination, p.in_dataset, p.extrapolation).expect("write to String");
    }
    out
}

/// Exact score of the product of the coordinate marginals of a density.
///
/// Every output coordinate depends on its own input only, so the sampler
/// draws each coordinate independently from its marginal.
#[derive(Debug, Clone)]
pub struct MarginalScore<'a> {
    /// Per coordinate: distinct values and their masses.
    marginals: Vec<(Vec<f64>, Vec<f64>)>,
    schedule: &'a NoiseSchedule,
}

impl<'a> MarginalScore<'a> {
    pub fn new(density: &AmbientDensity, schedule: &'a NoiseSchedule) -> Self {
        let marginals = (0..density.dim())
            .map(|i| {
                let (mut values, mut mass): (Vec<f64>, Vec<f64>) = (Vec::new(), Vec::new());
                for (x, m) in density.points().zip(density.mass()) {
                    match values.iter().position(|v| *v == x[i]) {
                        Some(k) => mass[k] += m,
                        None => {
                            values.push(x[i]);
                            mass.push(*m);
                        }
                    }
                }
                (values, mass)
            })
            .collect();
        Self { marginals, schedule }
    }
}

impl ScoreModel for MarginalScore<'_> {
    fn dim(&self) -> usize {
        self.marginals.len()
    }

    fn score_into(&self, x: &[f64], t: usize, out: &mut [f64]) {
        let ab = self.schedule.alpha_bar(t);
        let (s, n) = (ab.sqrt(), (1.0 - ab).sqrt());
        for ((o, xi), (values, mass)) in out.iter_mut().zip(x).zip(&self.marginals) {
            let logits: Vec<f64> = values.iter().map(|v| -(xi - s * v).powi(2) / (2.0 * n * n)).collect();
            let top = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let (mut num, mut den) = (0.0, 0.0);
            for ((l, v), m) in logits.iter().zip(values).zip(mass) {
                let w = m * (l - top).exp();
                num += w * v;
                den += w;
            }
            *o = (xi - s * num / den) / n;
        }
    }
}

/// Uniform draws from the template set, independently per slot.
pub fn random_symbol_samples<R: Rng + ?Sized>(renderer: &Renderer, length: usize, n: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let k = renderer.alphabet_size();
    (0..n)
        .map(|_| {
            let seq: Vec<usize> = (0..length).map(|_| rng.random_range(0..k)).collect();
            renderer.render_sequence(&seq)
        })
        .collect()
}

/// Networks trained at several timesteps; timestep `t` is served by the net
/// whose tag is nearest (the smaller tag on ties).
#[derive(Debug, Clone)]
pub struct NetBank {
    pub step: usize,
    nets: Vec<TwoLayerScoreNet>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct NetBankFile {
    step: usize,
    nets: Vec<crate::net::Checkpoint>,
}

impl NetBank {
    pub fn new(step: usize, mut nets: Vec<TwoLayerScoreNet>) -> Result<Self> {
        let Some(first) = nets.first() else {
            return Err(invalid("a net bank needs at least one network"));
        };
        let d = first.dim();
        if let Some(n) = nets.iter().find(|n| n.dim() != d) {
            return Err(LabError::ShapeMismatch { expected: d, got: n.dim() });
        }
        nets.sort_by_key(|n| n.t_tag);
        Ok(Self { step, nets })
    }

    pub fn nets(&self) -> &[TwoLayerScoreNet] {
        &self.nets
    }

    pub fn net_for(&self, t: usize) -> &TwoLayerScoreNet {
        self.nets.iter().min_by_key(|n| (n.t_tag.abs_diff(t), n.t_tag)).expect("bank is nonempty")
    }

    pub fn to_json(&self) -> Result<String> {
        let file = NetBankFile { step: self.step, nets: self.nets.iter().map(|n| n.to_checkpoint()).collect() };
        Ok(serde_json::to_string(&file)?)
    }

    /// Reads a bank, or a single network checkpoint as a bank of one.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| LabError::Checkpoint(e.to_string()))?;
        if value.get("nets").is_some() {
            let file: NetBankFile = serde_json::from_value(value).map_err(|e| LabError::Checkpoint(e.to_string()))?;
            let nets = file.nets.iter().map(TwoLayerScoreNet::from_checkpoint).collect::<Result<Vec<_>>>()?;
            Self::new(file.step, nets)
        } else {
            let net = TwoLayerScoreNet::from_json(text)?;
            Self::new(net.step, vec![net])
        }
    }
}

impl ScoreModel for NetBank {
    fn dim(&self) -> usize {
        self.nets[0].dim()
    }

    fn score_into(&self, x: &[f64], t: usize, out: &mut [f64]) {
        let net = self.net_for(t);
        for (i, o) in out.iter_mut().enumerate() {
            *o = net.forward_coord(i, x);
        }
    }
}

#[derive(Debug, Clone)]
pub enum CheckpointSource {
    File(PathBuf),
    Bank { id: String, bank: NetBank },
}

impl CheckpointSource {
    fn id(&self) -> String {
        match self {
            CheckpointSource::File(p) => p.display().to_string(),
            CheckpointSource::Bank { id, .. } => id.clone(),
        }
    }

    fn load(&self) -> Result<NetBank> {
        match self {
            CheckpointSource::File(p) => NetBank::from_json(&std::fs::read_to_string(p)?),
            CheckpointSource::Bank { bank, .. } => Ok(bank.clone()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub n_samples: usize,
    pub tau: f64,
    pub seed: u64,
    /// Keep per-sample decodes in the reports.
    pub keep_samples: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { n_samples: 1000, tau: DEFAULT_TAU, seed: 0, keep_samples: false }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub reports: Vec<GenerationReport>,
    /// One entry per checkpoint that could not be loaded or sampled.
    pub diagnostics: Vec<String>,
}

/// Generates from every checkpoint and classifies the samples. Checkpoints
/// that fail to load or produce non-finite scores are skipped with a
/// diagnostic.
pub fn evaluate_checkpoints(
    checkpoints: &[CheckpointSource],
    dist: &SymbolicDistribution,
    renderer: &Renderer,
    train: &TrainSplit,
    schedule: &NoiseSchedule,
    cfg: &EvalConfig,
) -> Result<Evaluation> {
    if checkpoints.is_empty() {
        return Err(invalid("no checkpoints to evaluate"));
    }
    let dim = renderer.ambient_dim(dist.length());
    let mut reports = Vec::new();
    let mut diagnostics = Vec::new();
    for source in checkpoints {
        let id = source.id();
        let bank = match source.load() {
            Ok(b) if b.dim() == dim => b,
            Ok(b) => {
                diagnostics.push(format!("{id}: network dimension {} does not match ambient dimension {dim}", b.dim()));
                continue;
            }
            Err(e) => {
                diagnostics.push(format!("{id}: {e}"));
                continue;
            }
        };
        let samples = match generate(&bank, schedule, cfg.n_samples, cfg.seed) {
            Ok(s) => s,
            Err(e) => {
                diagnostics.push(format!("{id}: {e}"));
                continue;
            }
        };
        reports.push(GenerationReport::from_samples(
            id,
            Some(bank.step),
            &samples,
            dist,
            train,
            renderer,
            cfg.tau,
            cfg.keep_samples,
        )?);
    }
    Ok(Evaluation { reports, diagnostics })
}
