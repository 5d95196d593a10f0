use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use ldrlab::diffusion::{make_linear_schedule, NoiseSchedule};
use ldrlab::dist::{render, AmbientDensity, HypercubeDensity, Renderer, SymbolicDistribution};
use ldrlab::ldr::ZerothOrderConfig;
use ldrlab::net::{GradientMode, InitConfig, InitScheme};
use ldrlab::replication::{HallucinationConfig, ReplicationConfig};
use ldrlab::theory::TheoryConfig;
use ldrlab::trainer::{Expectation, PhaseConfig, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub threads: usize,
    pub distribution: DistSpec,
    pub renderer: RendererSpec,
    pub schedule: ScheduleSpec,
    pub train: TrainSpec,
    pub probe: ProbeSpec,
    pub theory: TheorySpec,
    pub sample: SampleSpec,
    pub eval: EvalSpec,
    pub replicate: ReplicateSpec,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("out"),
            threads: 1,
            distribution: DistSpec::default(),
            renderer: RendererSpec::default(),
            schedule: ScheduleSpec::default(),
            train: TrainSpec::default(),
            probe: ProbeSpec::default(),
            theory: TheorySpec::default(),
            sample: SampleSpec::default(),
            eval: EvalSpec::default(),
            replicate: ReplicateSpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DistSpec {
    Parity {
        d: usize,
    },
    Dyck {
        half_length: usize,
    },
    SumRule {
        base: usize,
    },
    /// A distribution JSON as written by `dist`.
    File {
        path: PathBuf,
    },
}

impl Default for DistSpec {
    fn default() -> Self {
        DistSpec::Parity { d: 8 }
    }
}

impl DistSpec {
    /// `parity:8`, `dyck:4`, `sum_rule:10` or `file:PATH`.
    pub fn parse(text: &str) -> anyhow::Result<Self> {
        let (kind, arg) = text.split_once(':').with_context(|| format!("expected KIND:ARG, got `{text}`"))?;
        let num = || arg.parse::<usize>().with_context(|| format!("`{arg}` is not a nonnegative integer"));
        Ok(match kind {
            "parity" => DistSpec::Parity { d: num()? },
            "dyck" => DistSpec::Dyck { half_length: num()? },
            "sum_rule" => DistSpec::SumRule { base: num()? },
            "file" => DistSpec::File { path: PathBuf::from(arg) },
            _ => bail!("unknown distribution kind `{kind}`"),
        })
    }

    pub fn build(&self) -> anyhow::Result<SymbolicDistribution> {
        Ok(match self {
            DistSpec::Parity { d } => SymbolicDistribution::parity(*d)?,
            DistSpec::Dyck { half_length } => SymbolicDistribution::dyck(*half_length)?,
            DistSpec::SumRule { base } => SymbolicDistribution::sum_rule(*base)?,
            DistSpec::File { path } => {
                let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                SymbolicDistribution::from_json(&text)?
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RendererSpec {
    /// Hypercube for binary alphabets, one-hot otherwise.
    #[default]
    Auto,
    Hypercube,
    OneHot,
}

impl RendererSpec {
    pub fn build(self, alphabet_size: usize) -> anyhow::Result<Renderer> {
        Ok(match self {
            RendererSpec::Auto if alphabet_size == 2 => Renderer::hypercube(),
            RendererSpec::Hypercube => Renderer::hypercube(),
            RendererSpec::Auto | RendererSpec::OneHot => Renderer::one_hot(alphabet_size)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleSpec {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        Self { steps: 1000, beta_start: 1e-4, beta_end: 0.02 }
    }
}

impl ScheduleSpec {
    pub fn build(&self) -> anyhow::Result<NoiseSchedule> {
        Ok(make_linear_schedule(self.steps, self.beta_start, self.beta_end)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSpec {
    pub m: usize,
    pub sigma_init: f64,
    pub r: f64,
    pub scheme: InitScheme,
    pub mode: GradientMode,
    pub eta: f64,
    pub steps: usize,
    pub batch: usize,
    pub record_every: usize,
    pub target_coord: Option<usize>,
    pub eval_samples: usize,
    pub expectation: Expectation,
    pub ldr_samples: usize,
    /// One network per target `√ᾱ_t`, at the nearest timestep.
    pub sqrt_alpha_bars: Vec<f64>,
    /// Used for the phase report when `target_coord` is set.
    pub phases: PhaseConfig,
    pub oracle_samples: usize,
    pub univariate_bins: usize,
}

impl Default for TrainSpec {
    fn default() -> Self {
        let base = TrainConfig::new(0.05, 2000, 1);
        Self {
            m: 256,
            sigma_init: 1e-2,
            r: 1.0,
            scheme: InitScheme::Balanced,
            mode: base.mode,
            eta: base.eta,
            steps: base.steps,
            batch: base.batch,
            record_every: base.record_every,
            target_coord: None,
            eval_samples: base.eval_samples,
            expectation: base.expectation,
            ldr_samples: 0,
            sqrt_alpha_bars: vec![0.1, 0.3, 0.5, 0.7, 0.9],
            phases: PhaseConfig::default(),
            oracle_samples: 200_000,
            univariate_bins: 256,
        }
    }
}

impl TrainSpec {
    pub fn init(&self, seed: u64) -> anyhow::Result<InitConfig> {
        Ok(InitConfig::new(self.sigma_init, self.r, seed)?.with_scheme(self.scheme))
    }

    pub fn train_config(&self, t: usize, seed: u64) -> TrainConfig {
        TrainConfig {
            mode: self.mode,
            eta: self.eta,
            steps: self.steps,
            batch: self.batch,
            record_every: self.record_every,
            t,
            target_coord: self.target_coord,
            seed,
            eval_samples: self.eval_samples,
            expectation: self.expectation,
            ldr_samples: self.ldr_samples,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeMethod {
    #[default]
    Exact,
    ZerothOrder,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeSpec {
    pub checkpoint: Option<PathBuf>,
    /// Comma-separated 0-based input indices, one region per entry.
    pub regions: Vec<String>,
    pub sqrt_alpha_bars: Vec<f64>,
    pub n: usize,
    pub method: ProbeMethod,
    pub eps: f64,
    pub n_probes: usize,
}

impl Default for ProbeSpec {
    fn default() -> Self {
        let zo = ZerothOrderConfig::default();
        Self {
            checkpoint: None,
            regions: vec!["0".into()],
            sqrt_alpha_bars: vec![0.1],
            n: 256,
            method: ProbeMethod::Exact,
            eps: zo.eps,
            n_probes: zo.n_probes,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TheorySpec {
    pub coord: usize,
    pub alpha_bar: f64,
    pub report: TheoryConfig,
}

impl Default for TheorySpec {
    fn default() -> Self {
        Self { coord: 0, alpha_bar: 0.5, report: TheoryConfig::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Generator {
    #[default]
    Exact,
    /// Exact score of the product of the coordinate marginals.
    Marginal,
    Checkpoint,
    /// Uniformly random symbols, no diffusion.
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleSpec {
    pub generator: Generator,
    pub checkpoint: Option<PathBuf>,
    pub n: usize,
    pub tau: f64,
}

impl Default for SampleSpec {
    fn default() -> Self {
        Self { generator: Generator::Exact, checkpoint: None, n: 1000, tau: ldrlab::gen_eval::DEFAULT_TAU }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSpec {
    pub checkpoints: Vec<PathBuf>,
    pub n_samples: usize,
    pub tau: f64,
    /// Fraction of the support treated as training data; 1 uses it all.
    pub split_fraction: f64,
    /// Defaults to the master seed.
    pub split_seed: Option<u64>,
}

impl Default for EvalSpec {
    fn default() -> Self {
        Self {
            checkpoints: Vec::new(),
            n_samples: 1000,
            tau: ldrlab::gen_eval::DEFAULT_TAU,
            split_fraction: 1.0,
            split_seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ReplicateSpec {
    pub quick: bool,
    pub stairs: Option<ReplicationConfig>,
    pub hallucination: Option<HallucinationConfig>,
}

impl ReplicateSpec {
    pub fn stairs(&self, seed: u64) -> ReplicationConfig {
        let base = if self.quick { ReplicationConfig::quick() } else { ReplicationConfig::full() };
        ReplicationConfig { seed, ..self.stairs.unwrap_or(base) }
    }

    pub fn hallucination(&self, seed: u64) -> HallucinationConfig {
        let base = if self.quick {
            HallucinationConfig { n_samples: 2000, m: 128, eta: 0.1, ..HallucinationConfig::default() }
        } else {
            HallucinationConfig::default()
        };
        HallucinationConfig { seed, ..self.hallucination.clone().unwrap_or(base) }
    }
}

impl ExperimentConfig {
    /// Reads TOML or JSON by extension.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
        match ext {
            "toml" => toml::from_str(&text).map_err(|e| anyhow::anyhow!("{}: {e}", path.display())),
            "json" => serde_json::from_str(&text).map_err(|e| anyhow::anyhow!("{}: {e}", path.display())),
            _ => bail!("{}: config must end in .toml or .json", path.display()),
        }
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if self.threads == 0 {
            bail!("threads must be at least 1");
        }
        let t = &self.train;
        if t.m == 0 {
            bail!("train.m must be positive");
        }
        if t.sqrt_alpha_bars.is_empty() || self.probe.sqrt_alpha_bars.is_empty() {
            bail!("sqrt_alpha_bars lists must not be empty");
        }
        for s in t.sqrt_alpha_bars.iter().chain(&self.probe.sqrt_alpha_bars) {
            if !(*s > 0.0 && *s < 1.0) {
                bail!("sqrt_alpha_bar targets must lie in (0, 1), got {s}");
            }
        }
        if !(self.theory.alpha_bar > 0.0 && self.theory.alpha_bar < 1.0) {
            bail!("theory.alpha_bar must lie in (0, 1), got {}", self.theory.alpha_bar);
        }
        if !(self.eval.split_fraction > 0.0 && self.eval.split_fraction <= 1.0) {
            bail!("eval.split_fraction must lie in (0, 1], got {}", self.eval.split_fraction);
        }
        if self.probe.n == 0 || self.sample.n == 0 || self.eval.n_samples == 0 {
            bail!("sample counts must be positive");
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, without `out` and `threads`,
    /// which do not affect results.
    pub fn hash(&self) -> anyhow::Result<String> {
        let mut v = serde_json::to_value(self)?;
        if let Some(obj) = v.as_object_mut() {
            obj.remove("out");
            obj.remove("threads");
        }
        let digest = Sha256::digest(serde_json::to_vec(&v)?);
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }

    pub fn distribution(&self) -> anyhow::Result<(SymbolicDistribution, Renderer, AmbientDensity)> {
        let dist = self.distribution.build()?;
        let renderer = self.renderer.build(dist.alphabet_size())?;
        let density = render(&dist, &renderer)?;
        Ok((dist, renderer, density))
    }

    /// The distribution on `{±1}^d`; needs a binary alphabet and the
    /// hypercube renderer.
    pub fn hypercube(&self) -> anyhow::Result<HypercubeDensity> {
        let dist = self.distribution.build()?;
        if self.renderer == RendererSpec::OneHot || dist.alphabet_size() != 2 {
            bail!("this subcommand needs a binary alphabet on the hypercube renderer");
        }
        Ok(HypercubeDensity::try_from(render(&dist, &Renderer::hypercube())?)?)
    }
}
