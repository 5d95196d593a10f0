//! End-to-end runs on parity: the stair-shaped loss of a single trained
//! coordinate with its alignment and LDR history, and the hallucination
//! rates of exact, coordinate-independent, trained and random generators.

use serde::{Deserialize, Serialize};

use crate::diffusion::{default_schedule, generate, ExactScore, NoiseSchedule};
use crate::dist::{make_parity, AmbientDensity, Renderer, SymbolicDistribution};
use crate::error::{invalid, Result};
use crate::gen_eval::{random_symbol_samples, GenerationReport, MarginalScore, NetBank, TrainSplit};
use crate::net::{InitConfig, InitScheme, TwoLayerScoreNet};
use crate::numeric::{child_seed, rng_from_seed};
use crate::trainer::{
    best_linear_loss_at, best_univariate_loss_at, detect_phases_in, train, train_at, PhaseConfig, PhaseOracles, PhaseReport,
    TrainConfig, TrainHistory,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplicationConfig {
    pub d: usize,
    pub m: usize,
    pub sigma_init: f64,
    pub sqrt_alpha_bar: f64,
    pub eta: f64,
    pub steps: usize,
    pub batch: usize,
    pub record_every: usize,
    pub eval_samples: usize,
    /// Points for the LDR column of the history.
    pub ldr_samples: usize,
    pub coord: usize,
    pub oracle_samples: usize,
    pub univariate_bins: usize,
    pub phases: PhaseConfig,
    pub seed: u64,
}

impl ReplicationConfig {
    /// Parity d=8, m=2000, σ_init=1e-3 on coordinate 0 at `√ᾱ = 0.8`.
    pub fn full() -> Self {
        Self {
            d: 8,
            m: 2000,
            sigma_init: 1e-3,
            sqrt_alpha_bar: 0.8,
            eta: 1e-2,
            steps: 16_000,
            batch: 1024,
            record_every: 50,
            eval_samples: 4096,
            ldr_samples: 64,
            coord: 0,
            oracle_samples: 200_000,
            univariate_bins: 256,
            phases: PhaseConfig { slope_threshold: 0.2, ..PhaseConfig::default() },
            seed: 7,
        }
    }

    /// Parity d=6, m=512.
    pub fn quick() -> Self {
        Self { d: 6, m: 512, steps: 12_000, ..Self::full() }
    }

    pub fn alpha_bar(&self) -> f64 {
        self.sqrt_alpha_bar * self.sqrt_alpha_bar
    }

    pub fn validate(&self) -> Result<()> {
        if self.d < 2 || self.m == 0 {
            return Err(invalid("replication needs d >= 2 and m >= 1"));
        }
        if !(self.sqrt_alpha_bar > 0.0 && self.sqrt_alpha_bar < 1.0) {
            return Err(invalid("sqrt_alpha_bar must lie in (0, 1)"));
        }
        if self.coord >= self.d {
            return Err(invalid("coord out of range"));
        }
        if self.oracle_samples < 2 * self.d + 2 {
            return Err(invalid("oracle_samples too small"));
        }
        Ok(())
    }

    fn train_config(&self, eta: f64, steps: usize) -> TrainConfig {
        let mut cfg = TrainConfig::new(eta, steps, 1);
        cfg.batch = self.batch;
        cfg.record_every = self.record_every;
        cfg.eval_samples = self.eval_samples;
        cfg.ldr_samples = self.ldr_samples;
        cfg.target_coord = Some(self.coord);
        cfg.seed = child_seed(self.seed, 1);
        cfg
    }

    fn init_net(&self) -> Result<TwoLayerScoreNet> {
        let init = InitConfig::new(self.sigma_init, 1.0, child_seed(self.seed, 0))?.with_scheme(InitScheme::SquaredNorm);
        TwoLayerScoreNet::init(self.d, self.m, 1, init)
    }
}

/// Alignment over the steps up to the end of the linear plateau.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignmentSummary {
    pub window_end_step: usize,
    pub ratio_initial: f64,
    pub ratio_max: f64,
    pub ratio_max_step: usize,
    /// `ratio_max / ratio_initial`.
    pub growth: f64,
    pub ldr_at_max: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StairReport {
    pub config: ReplicationConfig,
    pub oracles: PhaseOracles,
    pub univariate_converged: bool,
    pub phases: PhaseReport,
    pub alignment: Option<AlignmentSummary>,
    pub aborted_at: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct StairRun {
    pub report: StairReport,
    pub history: TrainHistory,
    pub net: TwoLayerScoreNet,
}

pub fn phase_oracles(cfg: &ReplicationConfig) -> Result<(PhaseOracles, bool)> {
    let p = make_parity(cfg.d)?;
    let ab = cfg.alpha_bar();
    let lin = best_linear_loss_at(&p, ab, cfg.coord, cfg.oracle_samples, &mut rng_from_seed(child_seed(cfg.seed, 10)))?;
    let uni = best_univariate_loss_at(
        &p,
        ab,
        cfg.coord,
        cfg.oracle_samples,
        cfg.univariate_bins,
        &mut rng_from_seed(child_seed(cfg.seed, 11)),
    )?;
    Ok((PhaseOracles { linear: lin.loss, univariate: uni.loss }, uni.converged))
}

/// Trains one coordinate of the parity score network from small
/// initialization and labels the plateaus of its loss.
pub fn run_stairs(cfg: &ReplicationConfig) -> Result<StairRun> {
    cfg.validate()?;
    let p = make_parity(cfg.d)?;
    let (oracles, univariate_converged) = phase_oracles(cfg)?;
    let outcome = train_at(cfg.init_net()?, &p, cfg.alpha_bar(), &cfg.train_config(cfg.eta, cfg.steps))?;
    let phases = detect_phases_in(&outcome.history, oracles, cfg.phases)?;
    let alignment = alignment_summary(&outcome.history, &phases);
    Ok(StairRun {
        report: StairReport { config: *cfg, oracles, univariate_converged, phases, alignment, aborted_at: outcome.aborted_at },
        history: outcome.history,
        net: outcome.net,
    })
}

pub fn alignment_summary(history: &TrainHistory, phases: &PhaseReport) -> Option<AlignmentSummary> {
    let end = phases.plateaus.get(phases.linear?)?.end_step;
    let first = history.rows.first()?;
    let ratio_initial = first.alignment_ratio();
    let best =
        history.rows.iter().filter(|r| r.step <= end).max_by(|a, b| a.alignment_ratio().total_cmp(&b.alignment_ratio()))?;
    Some(AlignmentSummary {
        window_end_step: end,
        ratio_initial,
        ratio_max: best.alignment_ratio(),
        ratio_max_step: best.step,
        growth: best.alignment_ratio() / ratio_initial,
        ldr_at_max: best.ldr,
    })
}

/// Balance drift of the replication network after `steps` steps at `eta`.
pub fn balance_drift(cfg: &ReplicationConfig, eta: f64, steps: usize) -> Result<f64> {
    cfg.validate()?;
    let p = make_parity(cfg.d)?;
    let mut tc = cfg.train_config(eta, steps);
    tc.ldr_samples = 0;
    tc.record_every = steps.max(1);
    let (net, _) = train_at(cfg.init_net()?, &p, cfg.alpha_bar(), &tc)?.into_result()?;
    Ok(net.balance_residual())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HallucinationConfig {
    pub d: usize,
    pub n_samples: usize,
    pub tau: f64,
    /// Width of the trained networks; 0 skips the trained generator.
    pub m: usize,
    /// Targets `√ᾱ_t` of the trained networks; sampling uses the nearest.
    pub sqrt_alpha_bars: Vec<f64>,
    pub train_steps: usize,
    pub eta: f64,
    pub seed: u64,
}

impl Default for HallucinationConfig {
    fn default() -> Self {
        // ten targets evenly spaced in [0.05, 0.99]
        let sqrt_alpha_bars = (0..10).map(|k| 0.05 + 0.94 * k as f64 / 9.0).collect();
        Self { d: 8, n_samples: 10_000, tau: 0.5, m: 256, sqrt_alpha_bars, train_steps: 2000, eta: 0.05, seed: 7 }
    }
}

/// Reports for the exact score, the coordinate-independent score, a bank of
/// trained networks and uniformly random symbols, in that order.
pub fn run_hallucination(cfg: &HallucinationConfig) -> Result<Vec<GenerationReport>> {
    let schedule = default_schedule();
    let dist = SymbolicDistribution::parity(cfg.d)?;
    let p = make_parity(cfg.d)?;
    let renderer = Renderer::hypercube();
    let full = TrainSplit::full(&dist);
    let classify = |id: &str, step: Option<usize>, samples: &[Vec<f64>]| {
        GenerationReport::from_samples(id, step, samples, &dist, &full, &renderer, cfg.tau, false)
    };
    let mut reports = Vec::new();
    let exact = generate(&ExactScore { density: &p, schedule: &schedule }, &schedule, cfg.n_samples, child_seed(cfg.seed, 20))?;
    reports.push(classify("exact_score", None, &exact)?);
    let marginal = generate(&MarginalScore::new(&p, &schedule), &schedule, cfg.n_samples, child_seed(cfg.seed, 21))?;
    reports.push(classify("independent_coordinates", None, &marginal)?);
    if cfg.m > 0 {
        let bank = train_bank(cfg, &p, &schedule)?;
        let trained = generate(&bank, &schedule, cfg.n_samples, child_seed(cfg.seed, 22))?;
        reports.push(classify("trained", Some(cfg.train_steps), &trained)?);
    }
    let random = random_symbol_samples(&renderer, cfg.d, cfg.n_samples, &mut rng_from_seed(child_seed(cfg.seed, 23)));
    reports.push(classify("random", None, &random)?);
    Ok(reports)
}

fn train_bank(cfg: &HallucinationConfig, p: &AmbientDensity, schedule: &NoiseSchedule) -> Result<NetBank> {
    let nets = cfg
        .sqrt_alpha_bars
        .iter()
        .enumerate()
        .map(|(k, &s)| {
            let t = schedule.timestep_for_sqrt_alpha_bar(s);
            let init = InitConfig::new(1e-2, 1.0, child_seed(cfg.seed, 30 + k as u64))?;
            let net = TwoLayerScoreNet::init(cfg.d, cfg.m, t, init)?;
            let mut tc = TrainConfig::new(cfg.eta, cfg.train_steps, t);
            tc.batch = 512;
            tc.eval_samples = 512;
            tc.record_every = cfg.train_steps.max(1);
            tc.seed = child_seed(cfg.seed, 40 + k as u64);
            Ok(train(net, p, schedule, &tc)?.into_result()?.0)
        })
        .collect::<Result<Vec<_>>>()?;
    NetBank::new(cfg.train_steps, nets)
}
