use asa_core::aggregation::GlobalModel;
use asa_core::data::ShardPlan;
use asa_core::models::{loss_and_grad, Rung};
use asa_core::profiles::ResourceProfile;
use asa_core::rng::{self, purpose};
use asa_core::simulator::{apply_dropout, build_datasets, predicted_times, run_experiment};
use asa_core::{AsaError, ExperimentConfig, Method, Simulator};
use rand::seq::SliceRandom;

fn config(extra: &str) -> ExperimentConfig {
    ExperimentConfig::from_toml_str(&format!(
        r#"
[fleet]
n_devices = 6
[clustering]
n_min = 1
tau_max = inf
sigma2_max = inf
[data]
n_samples = 600
classes = 3
dim = 8
[model]
hidden = [[4], [8], [16]]
[training]
lr0 = 0.1
batch_size = 16
[simulation]
rounds = 4
{extra}
"#
    ))
    .unwrap()
}

#[test]
fn zero_rounds_returns_initial_model() {
    let mut cfg = config("");
    cfg.simulation.rounds = 0;
    let (model, logs) = run_experiment(&cfg, Method::Asa).unwrap();
    let sim = Simulator::new(&cfg, Method::Asa).unwrap();
    let init = sim.initial_state().unwrap();
    assert!(logs.is_empty());
    assert_eq!(
        model,
        GlobalModel {
            params: init.global,
            round: 0,
            loss_history: vec![]
        }
    );
}

#[test]
fn single_device_matches_centralized_sgd() {
    let cfg = ExperimentConfig::from_toml_str(
        r#"
[fleet]
n_devices = 1
[clustering]
k = 1
n_min = 1
tau_max = inf
sigma2_max = inf
[data]
n_samples = 300
classes = 3
dim = 6
[model]
hidden = [[4], [8], [16]]
[training]
adapt = false
lr0 = 0.2
batch_size = 10
[simulation]
fixed_rung = "Complex"
rounds = 5
"#,
    )
    .unwrap();
    let sim = Simulator::new(&cfg, Method::Asa).unwrap();
    let init = sim.initial_state().unwrap();
    let (end, _) = sim.run_until(init.clone(), 5, |_, _| Ok(())).unwrap();

    let arch = sim.family.arch(Rung::Complex);
    let shard = &sim.shards.shards[0];
    let mut w = init.global.values.clone();
    let mut g = vec![0.0; w.len()];
    for t in 1..=5u64 {
        let mut order = shard.clone();
        order.shuffle(&mut rng::stream(cfg.simulation.seed, &[purpose::SHUFFLE, 0, t, 0]));
        for batch in order.chunks(10) {
            let rows: Vec<&[f64]> = batch.iter().map(|&i| sim.train.row(i)).collect();
            let labels: Vec<usize> = batch.iter().map(|&i| sim.train.labels[i]).collect();
            loss_and_grad(arch, &w, &rows, &labels, &mut g).unwrap();
            for (wi, gi) in w.iter_mut().zip(&g) {
                *wi -= 0.2 * gi;
            }
        }
        // Models travel as f32.
        for v in &mut w {
            *v = *v as f32 as f64;
        }
    }
    assert_eq!(w, end.global.values);
}

#[test]
fn dropout_examples() {
    let ids: Vec<usize> = (0..1000).collect();
    assert_eq!(apply_dropout(&ids, 0.0, 1, 1).unwrap(), ids);
    assert!(apply_dropout(&ids, 1.0, 1, 1).unwrap().is_empty());
    assert!(apply_dropout(&ids, 1.5, 1, 1).is_err());
    let kept: usize = (1..=100).map(|t| apply_dropout(&ids, 0.3, 9, t).unwrap().len()).sum();
    let dropped = 1.0 - kept as f64 / 100_000.0;
    assert!((dropped - 0.3).abs() <= 0.01, "{dropped}");
}

#[test]
fn full_dropout_leaves_global_unchanged() {
    let cfg = config("dropout_p = 1.0");
    let sim = Simulator::new(&cfg, Method::Asa).unwrap();
    let init = sim.initial_state().unwrap();
    let (end, logs) = sim.run_until(init.clone(), 3, |_, _| Ok(())).unwrap();
    assert_eq!(end.global, init.global);
    assert!(logs.iter().all(|l| l.active.is_empty() && l.bytes_total == 0));
}

#[test]
fn time_model_examples() {
    let mid = ResourceProfile::canonical_mid();
    // Rung 1 of the 20 -> 4 family with hidden 32 has 804 parameters.
    let (c, m) = predicted_times(&mid, 804, 100, 1, 6.0);
    assert!((c - 6.0 * 100.0 * 804.0 / 1.0e10).abs() < 1e-15);
    assert!((m - 8.0 * 804.0 / 2.5e6).abs() < 1e-15);

    let slow = ResourceProfile {
        bandwidth_mbps: 10.0,
        ..mid
    };
    let (_, m2) = predicted_times(&slow, 804, 100, 1, 6.0);
    assert_eq!(m2, 2.0 * m);
}

#[test]
fn identical_devices_do_not_wait() {
    let cfg = ExperimentConfig::from_toml_str(
        r#"
[fleet]
n_devices = 2
[clustering]
k = 1
n_min = 1
tau_max = inf
sigma2_max = inf
[data]
n_samples = 200
classes = 2
dim = 4
[model]
hidden = [[2], [4], [8]]
[training]
adapt = false
[simulation]
fixed_rung = "Medium"
rounds = 2
"#,
    )
    .unwrap();
    let (train, test) = build_datasets(&cfg.data, 1).unwrap();
    let half = train.len() / 2;
    let shards = ShardPlan {
        shards: vec![(0..half).collect(), (half..2 * half).collect()],
        dirichlet_alpha: None,
    };
    let p = ResourceProfile::canonical_mid();
    let sim = Simulator::from_parts(&cfg, Method::Asa, &[p.clone(), p], train, test, shards).unwrap();
    let (_, logs) = sim.run_until(sim.initial_state().unwrap(), 2, |_, _| Ok(())).unwrap();
    for d in logs.iter().flat_map(|l| &l.devices) {
        assert_eq!(d.times.synchronization, 0.0);
    }
}

#[test]
fn objective_components() {
    let cfg = config("objective_weights = [1.0, 0.0, 0.0]");
    let (_, logs) = run_experiment(&cfg, Method::Asa).unwrap();
    assert!(logs.iter().all(|l| l.objective == l.global_loss));

    let (_, logs) = run_experiment(&config(""), Method::FedAvg).unwrap();
    assert!(logs
        .iter()
        .all(|l| l.comm_ratio == 1.0 && l.bytes_total == l.fedavg_bytes));
}

#[test]
fn failed_round_is_retried_once() {
    let cfg = config("");
    let clean = Simulator::new(&cfg, Method::Asa).unwrap();
    let (expected, _) = clean
        .run_until(clean.initial_state().unwrap(), 3, |_, _| Ok(()))
        .unwrap();

    let mut sim = Simulator::new(&cfg, Method::Asa).unwrap();
    sim.inject_fault(2, 1);
    let (end, logs) = sim.run_until(sim.initial_state().unwrap(), 3, |_, _| Ok(())).unwrap();
    assert_eq!(end, expected);
    assert_eq!(logs.iter().map(|l| l.retried).collect::<Vec<_>>(), [false, true, false]);

    let mut sim = Simulator::new(&cfg, Method::Asa).unwrap();
    sim.inject_fault(2, 2);
    let err = sim
        .run_until(sim.initial_state().unwrap(), 3, |_, _| Ok(()))
        .unwrap_err();
    assert!(matches!(err, AsaError::RoundFailed { round: 2, .. }), "{err}");
}

#[test]
fn baselines_share_fleet_and_shards() {
    let cfg = config("");
    let sims: Vec<Simulator> = Method::ALL.iter().map(|&m| Simulator::new(&cfg, m).unwrap()).collect();
    for s in &sims[1..] {
        assert_eq!(s.records, sims[0].records);
        assert_eq!(s.shards.shards, sims[0].shards.shards);
    }
    // HierFL keeps tiers for clustering but trains everything at Complex.
    let hier = &sims[3];
    let state = hier.initial_state().unwrap();
    assert_eq!(state.cluster_rungs.len(), 3);
    assert!(state.devices.iter().all(|d| d.rung == Rung::Complex));
    let (_, logs) = run_experiment(&cfg, Method::FedProx).unwrap();
    assert_eq!(logs.len(), 4);
    assert!(logs.iter().all(|l| l.global_loss.is_finite()));
}

#[test]
fn reclustering_is_logged() {
    let mut cfg = config("");
    cfg.clustering.recluster_every = 2;
    let (_, logs) = run_experiment(&cfg, Method::Asa).unwrap();
    let flags: Vec<bool> = logs.iter().map(|l| l.reclustered).collect();
    assert_eq!(flags, [false, false, true, false]);
    assert!(logs[2].distance_computations > 0);
}
