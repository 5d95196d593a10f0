use ldrlab::diffusion::{default_schedule, generate, ExactScore};
use ldrlab::dist::{make_parity, Renderer, SymbolicDistribution};
use ldrlab::gen_eval::*;
use ldrlab::net::{InitConfig, TwoLayerScoreNet};
use ldrlab::numeric::rng_from_seed;
use rand::Rng;
use rand_distr::StandardNormal;

#[test]
fn noisy_rendered_points_decode() {
    let dist = SymbolicDistribution::parity(8).unwrap();
    let r = Renderer::hypercube();
    let mut rng = rng_from_seed(1);
    let mut ok = 0;
    for k in 0..10_000 {
        let seq = &dist.support()[k % dist.support().len()];
        let x: Vec<f64> = r.render_sequence(seq).iter().map(|v| v + 0.1 * rng.sample::<f64, _>(StandardNormal)).collect();
        if decode(&x, &r, 0.5).as_deref() == Some(seq.as_slice()) {
            ok += 1;
        }
    }
    assert!(ok as f64 / 1e4 >= 0.999, "{ok}");
}

#[test]
fn one_hot_decoding() {
    let r = Renderer::one_hot(3).unwrap();
    let x = r.render_sequence(&[2, 0, 1, 1]);
    assert_eq!(decode(&x, &r, 0.5), Some(vec![2, 0, 1, 1]));
    assert_eq!(decode(&[0.5, 0.5, 0.0, 1.0, 0.0, 0.0], &r, 0.5), None);
}

#[test]
fn marginal_generator_hallucinates_half_the_time() {
    let schedule = default_schedule();
    for d in [3, 8] {
        let dist = SymbolicDistribution::parity(d).unwrap();
        let p = make_parity(d).unwrap();
        let model = MarginalScore::new(&p, &schedule);
        let samples = generate(&model, &schedule, 10_000, 5).unwrap();
        let report = GenerationReport::from_samples(
            "marginal",
            None,
            &samples,
            &dist,
            &TrainSplit::full(&dist),
            &Renderer::hypercube(),
            0.5,
            false,
        )
        .unwrap();
        assert_eq!(report.counts.invalid, 0);
        assert!((report.proportions.hallucination - 0.5).abs() <= 0.02, "d {d}: {:?}", report.proportions);
    }
}

#[test]
fn exact_score_generator_respects_parity() {
    let schedule = default_schedule();
    let dist = SymbolicDistribution::parity(8).unwrap();
    let p = make_parity(8).unwrap();
    let samples = generate(&ExactScore { density: &p, schedule: &schedule }, &schedule, 2000, 9).unwrap();
    let report = GenerationReport::from_samples(
        "exact",
        None,
        &samples,
        &dist,
        &TrainSplit::full(&dist),
        &Renderer::hypercube(),
        0.5,
        false,
    )
    .unwrap();
    assert!(report.proportions.hallucination <= 0.01, "{:?}", report.proportions);
    assert_eq!(report.counts.extrapolation, 0);
}

#[test]
fn random_baseline_satisfies_parity_half_the_time() {
    let dist = SymbolicDistribution::parity(8).unwrap();
    let r = Renderer::hypercube();
    let samples = random_symbol_samples(&r, 8, 10_000, &mut rng_from_seed(2));
    let report =
        GenerationReport::from_samples("random", None, &samples, &dist, &TrainSplit::full(&dist), &r, 0.5, false).unwrap();
    let valid = report.proportions.in_dataset + report.proportions.extrapolation;
    assert!((valid - 0.5).abs() <= 0.02, "{valid}");
}

#[test]
fn classification_is_total_and_threshold_monotone() {
    let dist = SymbolicDistribution::parity(6).unwrap();
    let r = Renderer::hypercube();
    let train = TrainSplit::random(&dist, 0.3, 4).unwrap();
    let mut rng = rng_from_seed(3);
    let samples: Vec<Vec<f64>> =
        (0..2000).map(|_| (0..6).map(|_| 1.5 * rng.sample::<f64, _>(StandardNormal)).collect()).collect();
    let mut last_invalid = 0;
    for tau in [2.0, 1.0, 0.7, 0.5, 0.3, 0.1] {
        let rep = GenerationReport::from_samples("noise", None, &samples, &dist, &train, &r, tau, false).unwrap();
        assert_eq!(rep.counts.total(), rep.n_total);
        let p = rep.proportions;
        assert!((p.invalid + p.hallucination + p.in_dataset + p.extrapolation - 1.0).abs() <= 1e-12);
        assert!(rep.counts.invalid >= last_invalid);
        last_invalid = rep.counts.invalid;
    }
    let full = GenerationReport::from_samples("noise", None, &samples, &dist, &TrainSplit::full(&dist), &r, 1.0, false).unwrap();
    assert_eq!(full.counts.extrapolation, 0);
}

#[test]
fn checkpoint_evaluation_skips_unreadable_files() {
    let dir = tempfile::tempdir().unwrap();
    let dist = SymbolicDistribution::parity(4).unwrap();
    let r = Renderer::hypercube();
    let nets: Vec<TwoLayerScoreNet> = [50, 500]
        .iter()
        .map(|&t| TwoLayerScoreNet::init(4, 8, t, InitConfig::new(1e-2, 1.0, t as u64).unwrap()).unwrap())
        .collect();
    let bank = NetBank::new(7, nets).unwrap();
    let good = dir.path().join("bank.json");
    std::fs::write(&good, bank.to_json().unwrap()).unwrap();
    let bad = dir.path().join("broken.json");
    std::fs::write(&bad, "{not json").unwrap();
    let sources = vec![
        CheckpointSource::File(good),
        CheckpointSource::File(bad),
        CheckpointSource::File(dir.path().join("missing.json")),
        CheckpointSource::Bank { id: "mem".into(), bank },
    ];
    let cfg = EvalConfig { n_samples: 50, keep_samples: true, ..EvalConfig::default() };
    let eval = evaluate_checkpoints(&sources, &dist, &r, &TrainSplit::full(&dist), &default_schedule(), &cfg).unwrap();
    assert_eq!(eval.reports.len(), 2);
    assert_eq!(eval.diagnostics.len(), 2);
    assert_eq!(eval.reports[0].checkpoint_step, Some(7));
    assert_eq!(eval.reports[0].counts, eval.reports[1].counts);
    assert_eq!(eval.reports[0].samples.len(), 50);
    let csv = reports_csv(&eval.reports);
    assert!(csv.starts_with("checkpoint_step,invalid,hallucination,in_dataset,extrapolation\n7,"));
}

#[test]
fn single_net_checkpoint_loads_as_bank() {
    let net = TwoLayerScoreNet::init(3, 4, 20, InitConfig::new(1e-2, 1.0, 1).unwrap()).unwrap();
    let bank = NetBank::from_json(&net.to_json().unwrap()).unwrap();
    assert_eq!(bank.nets().len(), 1);
    assert_eq!(bank.nets()[0].t_tag, 20);
}
