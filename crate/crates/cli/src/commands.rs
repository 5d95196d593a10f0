use std::fmt::Write as _;
use std::path::PathBuf;

use anyhow::{bail, Context};
use ldrlab::diffusion::{generate, sample_xt, samples_csv, ExactScore, ScoreModel};
use ldrlab::dist::{check_assumption1, fourier_csv, low_order_subsets};
use ldrlab::gen_eval::{
    evaluate_checkpoints, random_symbol_samples, reports_csv, CheckpointSource, EvalConfig, GenerationReport, MarginalScore,
    NetBank, TrainSplit,
};
use ldrlab::ldr::{ldr_exact, ldr_zeroth_order, saliency_csv, LdrReport, Region, ZerothOrderConfig};
use ldrlab::net::TwoLayerScoreNet;
use ldrlab::numeric::{child_seed, rng_from_seed, LabRng};
use ldrlab::replication::{run_hallucination, run_stairs};
use ldrlab::theory::{theory_report, GrowthContext, TheoryConfig};
use ldrlab::trainer::{best_linear_loss_at, best_univariate_loss_at, detect_phases_in, train, PhaseOracles, TrainHistory};
use serde::Serialize;

use crate::config::{ExperimentConfig, Generator, ProbeMethod};
use crate::output::{pool_map, Output};

// Seed-stream offsets per subcommand, so jobs of different subcommands
// never share a stream.
const TRAIN_INIT: u64 = 100;
const TRAIN_DATA: u64 = 200;
const TRAIN_ORACLE: u64 = 300;
const PROBE: u64 = 400;
const SAMPLE: u64 = 500;
const EVAL: u64 = 600;

fn json(value: &impl Serialize) -> anyhow::Result<String> {
    Ok(serde_json::to_string_pretty(value)?)
}

#[derive(Serialize)]
struct DistSummary {
    rule: ldrlab::dist::Rule,
    alphabet_size: usize,
    length: usize,
    support_size: usize,
    ambient_dim: usize,
}

pub fn dist(cfg: &ExperimentConfig, out: &mut Output) -> anyhow::Result<()> {
    let (dist, renderer, _) = cfg.distribution()?;
    out.write("distribution.json", dist.to_json()?)?;
    let summary = DistSummary {
        rule: dist.rule(),
        alphabet_size: dist.alphabet_size(),
        length: dist.length(),
        support_size: dist.support().len(),
        ambient_dim: renderer.ambient_dim(dist.length()),
    };
    out.write("distribution_summary.json", json(&summary)?)
}

pub fn fourier(cfg: &ExperimentConfig, out: &mut Output) -> anyhow::Result<()> {
    let p = cfg.hypercube()?;
    out.write("fourier.csv", fourier_csv(&p, &low_order_subsets(p.d()))?)?;
    out.write("assumption1.json", json(&check_assumption1(&p, 1e-12)?)?)
}

struct TrainJob {
    t: usize,
    history: TrainHistory,
    net: TwoLayerScoreNet,
    phases: Option<String>,
    aborted_at: Option<usize>,
}

pub fn train_cmd(cfg: &ExperimentConfig, out: &mut Output) -> anyhow::Result<()> {
    let (_, _, density) = cfg.distribution()?;
    let schedule = cfg.schedule.build()?;
    let spec = &cfg.train;
    let jobs = pool_map(spec.sqrt_alpha_bars.len(), cfg.threads, |k| -> anyhow::Result<TrainJob> {
        let t = schedule.timestep_for_sqrt_alpha_bar(spec.sqrt_alpha_bars[k]);
        let net = TwoLayerScoreNet::init(density.dim(), spec.m, t, spec.init(child_seed(cfg.seed, TRAIN_INIT + k as u64))?)?;
        let tc = spec.train_config(t, child_seed(cfg.seed, TRAIN_DATA + k as u64));
        let outcome = train(net, &density, &schedule, &tc)?;
        let phases = match spec.target_coord {
            Some(coord) => {
                let ab = schedule.alpha_bar(t);
                let mut rng = rng_from_seed(child_seed(cfg.seed, TRAIN_ORACLE + k as u64));
                let linear = best_linear_loss_at(&density, ab, coord, spec.oracle_samples, &mut rng)?.loss;
                let univariate =
                    best_univariate_loss_at(&density, ab, coord, spec.oracle_samples, spec.univariate_bins, &mut rng)?.loss;
                let report = detect_phases_in(&outcome.history, PhaseOracles { linear, univariate }, spec.phases)?;
                Some(report.to_json()?)
            }
            None => None,
        };
        Ok(TrainJob { t, history: outcome.history, net: outcome.net, phases, aborted_at: outcome.aborted_at })
    });
    let mut nets = Vec::new();
    for job in jobs {
        let job = job?;
        let t = job.t;
        if let Some(step) = job.aborted_at {
            out.diagnostic(format!("t = {t}: non-finite loss at step {step}; the checkpoint is the last finite network"));
        }
        out.write(&format!("history_t{t}.csv"), job.history.to_csv())?;
        if let Some(p) = job.phases {
            out.write(&format!("phases_t{t}.json"), p)?;
        }
        out.write(&format!("net_t{t}.json"), job.net.to_json()?)?;
        nets.push(job.net);
    }
    out.write("bank.json", NetBank::new(spec.steps, nets)?.to_json()?)
}

fn load_bank(path: &PathBuf) -> anyhow::Result<NetBank> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    NetBank::from_json(&text).with_context(|| format!("loading {}", path.display()))
}

#[derive(Serialize)]
struct ProbeRow {
    region: String,
    sqrt_alpha_bar: f64,
    t: usize,
    ldr_mean: f64,
    ldr_stderr: f64,
    n_skipped: usize,
}

pub fn ldr(cfg: &ExperimentConfig, out: &mut Output) -> anyhow::Result<()> {
    let spec = &cfg.probe;
    let Some(path) = &spec.checkpoint else { bail!("ldr needs a checkpoint (--checkpoint or probe.checkpoint)") };
    let bank = load_bank(path)?;
    let (_, _, density) = cfg.distribution()?;
    if bank.dim() != density.dim() {
        bail!("checkpoint dimension {} does not match the distribution's ambient dimension {}", bank.dim(), density.dim());
    }
    let schedule = cfg.schedule.build()?;
    let regions = spec.regions.iter().map(|r| Region::parse(r, density.dim())).collect::<Result<Vec<_>, _>>()?;
    let pairs: Vec<(usize, f64)> = (0..regions.len()).flat_map(|r| spec.sqrt_alpha_bars.iter().map(move |&s| (r, s))).collect();
    let reports = pool_map(pairs.len(), cfg.threads, |k| -> anyhow::Result<LdrReport> {
        let (r, s) = pairs[k];
        let t = schedule.timestep_for_sqrt_alpha_bar(s);
        let ab = schedule.alpha_bar(t);
        let net = bank.net_for(t);
        let sampler = |rng: &mut LabRng| sample_xt(&density, ab, rng);
        let mut rng = rng_from_seed(child_seed(cfg.seed, PROBE + k as u64));
        let mut report = match spec.method {
            ProbeMethod::Exact => {
                ldr_exact(|x| net.input_jacobian(x).expect("dimension checked"), &regions[r], sampler, spec.n, &mut rng)?
            }
            ProbeMethod::ZerothOrder => {
                let zo = ZerothOrderConfig { eps: spec.eps, n_probes: spec.n_probes, n_points: spec.n };
                ldr_zeroth_order(|x| net.forward(x).expect("dimension checked"), &regions[r], sampler, zo, &mut rng)?
            }
        };
        report.t = Some(t);
        Ok(report)
    });
    let mut rows = Vec::new();
    for (k, report) in reports.into_iter().enumerate() {
        let report = report?;
        let (r, s) = pairs[k];
        let t = report.t.expect("set above");
        let label: Vec<String> = regions[r].indices().iter().map(usize::to_string).collect();
        let stem = format!("r{}_t{t}", label.join("-"));
        if let Some(w) = &report.warning {
            out.diagnostic(format!("region {}, t = {t}: {w}", label.join(",")));
        }
        out.write(&format!("ldr_{stem}.json"), report.to_json()?)?;
        out.write(&format!("saliency_{stem}.csv"), saliency_csv(&report.saliency))?;
        rows.push(ProbeRow {
            region: label.join(";"),
            sqrt_alpha_bar: s,
            t,
            ldr_mean: report.ldr_mean,
            ldr_stderr: report.ldr_stderr,
            n_skipped: report.n_skipped,
        });
    }
    let mut csv = String::from("region,sqrt_alpha_bar,t,ldr_mean,ldr_stderr,n_skipped\n");
    for r in &rows {
        writeln!(csv, "{},{},{},{},{},{}", r.region, r.sqrt_alpha_bar, r.t, r.ldr_mean, r.ldr_stderr, r.n_skipped)?;
    }
    out.write("ldr.csv", csv)
}

pub fn theory(cfg: &ExperimentConfig, out: &mut Output) -> anyhow::Result<()> {
    let spec = &cfg.theory;
    let ctx = GrowthContext::new(spec.coord, spec.alpha_bar, cfg.hypercube()?)?;
    let report = theory_report(&ctx, &TheoryConfig { seed: cfg.seed, ..spec.report })?;
    out.write("theory.json", report.to_json()?)
}

pub fn sample(cfg: &ExperimentConfig, out: &mut Output) -> anyhow::Result<()> {
    let spec = &cfg.sample;
    let (dist, renderer, density) = cfg.distribution()?;
    let schedule = cfg.schedule.build()?;
    let seed = child_seed(cfg.seed, SAMPLE);
    let (samples, id, step) = match spec.generator {
        Generator::Exact => (
            generate(&ExactScore { density: &density, schedule: &schedule }, &schedule, spec.n, seed)?,
            "exact_score".to_string(),
            None,
        ),
        Generator::Marginal => (
            generate(&MarginalScore::new(&density, &schedule), &schedule, spec.n, seed)?,
            "independent_coordinates".to_string(),
            None,
        ),
        Generator::Random => {
            (random_symbol_samples(&renderer, dist.length(), spec.n, &mut rng_from_seed(seed)), "random".to_string(), None)
        }
        Generator::Checkpoint => {
            let Some(path) = &spec.checkpoint else { bail!("the checkpoint generator needs sample.checkpoint or --checkpoint") };
            let bank = load_bank(path)?;
            if bank.dim() != density.dim() {
                bail!(
                    "checkpoint dimension {} does not match the distribution's ambient dimension {}",
                    bank.dim(),
                    density.dim()
                );
            }
            (generate(&bank, &schedule, spec.n, seed)?, path.display().to_string(), Some(bank.step))
        }
    };
    out.write("samples.csv", samples_csv(&samples))?;
    let report = GenerationReport::from_samples(id, step, &samples, &dist, &TrainSplit::full(&dist), &renderer, spec.tau, false)?;
    out.write("sample_report.json", json(&report)?)
}

pub fn eval(cfg: &ExperimentConfig, dump: bool, out: &mut Output) -> anyhow::Result<()> {
    let spec = &cfg.eval;
    if spec.checkpoints.is_empty() {
        bail!("eval needs at least one checkpoint (--checkpoint or eval.checkpoints)");
    }
    let (dist, renderer, _) = cfg.distribution()?;
    let schedule = cfg.schedule.build()?;
    let split_seed = spec.split_seed.unwrap_or(cfg.seed);
    let split = if spec.split_fraction >= 1.0 {
        TrainSplit::full(&dist)
    } else {
        TrainSplit::random(&dist, spec.split_fraction, split_seed)?
    };
    // every checkpoint sees the same noise
    let ec = EvalConfig { n_samples: spec.n_samples, tau: spec.tau, seed: child_seed(cfg.seed, EVAL), keep_samples: dump };
    let results = pool_map(spec.checkpoints.len(), cfg.threads, |k| {
        evaluate_checkpoints(&[CheckpointSource::File(spec.checkpoints[k].clone())], &dist, &renderer, &split, &schedule, &ec)
    });
    let mut reports = Vec::new();
    for r in results {
        let r = r?;
        reports.extend(r.reports);
        r.diagnostics.into_iter().for_each(|d| out.diagnostic(d));
    }
    if reports.is_empty() {
        bail!("no checkpoint could be evaluated");
    }
    out.write("split.json", json(&split)?)?;
    out.write("eval.csv", reports_csv(&reports))?;
    if dump {
        out.write("eval_dump.json", json(&reports)?)?;
    }
    Ok(())
}

pub fn replicate(cfg: &ExperimentConfig, out: &mut Output) -> anyhow::Result<()> {
    let stairs_cfg = cfg.replicate.stairs(cfg.seed);
    let hall_cfg = cfg.replicate.hallucination(cfg.seed);
    let (stairs, hall) = if cfg.threads > 1 {
        std::thread::scope(|s| {
            let h = s.spawn(|| run_hallucination(&hall_cfg));
            let st = run_stairs(&stairs_cfg);
            (st, h.join().expect("hallucination worker panicked"))
        })
    } else {
        (run_stairs(&stairs_cfg), run_hallucination(&hall_cfg))
    };
    let stairs = stairs?;
    if let Some(step) = stairs.report.aborted_at {
        out.diagnostic(format!("stair run hit a non-finite loss at step {step}"));
    }
    if stairs.report.alignment.is_none() {
        out.diagnostic("no linear plateau detected; alignment summary is empty");
    }
    out.write("stairs.csv", stairs.history.to_csv())?;
    out.write("stairs.json", json(&stairs.report)?)?;
    out.write("stairs_net.json", stairs.net.to_json()?)?;
    let hall = hall?;
    let mut csv = String::from("generator,invalid,hallucination,in_dataset,extrapolation\n");
    for r in &hall {
        let p = &r.proportions;
        writeln!(csv, "{},{},{},{},{}", r.checkpoint, p.invalid, p.hallucination, p.in_dataset, p.extrapolation)?;
    }
    out.write("hallucination.csv", csv)?;
    out.write("hallucination.json", json(&hall)?)
}
