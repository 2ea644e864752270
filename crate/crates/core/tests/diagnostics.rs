use asa_core::config::OracleConfig;
use asa_core::diagnostics::{
    auc_rank_sum, column_stats, device_gradients, efficiency_metrics, lyapunov_check, simulate_quadratic,
    telescoping_check, variance_estimate, Quadratic,
};
use asa_core::rng::{self, purpose};
use asa_core::{ExecMode, ExperimentConfig, Method, Rung, Simulator};
use rand::Rng;

fn oracle(mu: f64, l: f64, sigma2: f64) -> Quadratic {
    Quadratic::from_config(&OracleConfig {
        mu,
        l,
        sigma2,
        dim: 10,
        seeds: 200,
        horizon: 500,
        d: 1.0,
    })
    .unwrap()
}

#[test]
fn noiseless_lyapunov_trajectory() {
    let q = oracle(1.0, 1.0, 0.0);
    let etas: Vec<f64> = (1..=50).map(|t| 1.0 / t as f64).collect();
    let trace = simulate_quadratic(&q, &etas, 3, false, 0, ExecMode::default()).unwrap();
    let rep = lyapunov_check(&q, &trace, 1.0, 3.0).unwrap();
    assert!(rep.steps.iter().all(|s| s.decreased));
    assert_eq!(rep.corrected_violations, 0);
    // The first step lands on the optimum while the stated bound is -V_0.
    assert_eq!((rep.violations, rep.first_violation), (1, Some(1)));
    assert!(rep.final_gap_holds);
}

#[test]
fn starting_at_the_optimum_stays_at_the_noise_floor() {
    let q = oracle(1.0, 1.0, 0.01);
    let etas: Vec<f64> = (1..=100).map(|t| 1.0 / t as f64).collect();
    let trace = simulate_quadratic(&q, &etas, 400, true, 3, ExecMode::default()).unwrap();
    let (m, se) = column_stats(&trace.v);
    let mut floor = 0.0;
    for t in 1..=100 {
        floor += etas[t - 1].powi(2) * q.sigma2;
        assert!(m[t] <= floor + 3.0 * se[t], "t {t}: {} > {floor}", m[t]);
    }
}

#[test]
fn telescoping_bound_depends_on_step_size() {
    let q = oracle(1.0, 1.0, 0.01);
    let half = simulate_quadratic(&q, &[0.5; 500], 200, false, 5, ExecMode::default()).unwrap();
    let rep = telescoping_check(&q, &half, 3.0).unwrap();
    assert!(rep.holds && rep.corrected_holds, "{rep:?}");

    // At η = 1/L the stated noise term is half of what the summation gives.
    let full = simulate_quadratic(&q, &[1.0; 500], 200, false, 5, ExecMode::default()).unwrap();
    let rep = telescoping_check(&q, &full, 3.0).unwrap();
    assert!(!rep.holds && rep.corrected_holds, "{rep:?}");
}

#[test]
fn gradient_variance_grows_with_heterogeneity() {
    let mean_var = |alpha: f64| {
        let v: f64 = (0..3u64)
            .map(|seed| {
                let cfg = ExperimentConfig::from_toml_str(&format!(
                    r#"
[clustering]
tau_max = inf
sigma2_max = inf
[data]
n_samples = 2000
classes = 10
dim = 10
dirichlet_alpha = {alpha}
[model]
hidden = [[8], [16], [32]]
[simulation]
seed = {seed}
"#
                ))
                .unwrap();
                let sim = Simulator::new(&cfg, Method::Asa).unwrap();
                let state = sim.initial_state().unwrap();
                let g = device_gradients(
                    &sim.family,
                    Rung::Complex,
                    &state.global,
                    &sim.train,
                    &sim.shards.shards,
                )
                .unwrap();
                variance_estimate(&g).unwrap()
            })
            .sum();
        v / 3.0
    };
    let (hi, mid, lo) = (mean_var(10.0), mean_var(1.0), mean_var(0.1));
    assert!(hi < mid && mid < lo, "{hi} {mid} {lo}");
}

#[test]
fn auc_of_uninformative_scores_is_one_half() {
    let mut r = rng::stream(11, &[purpose::ORACLE]);
    let scores: Vec<f64> = (0..10_000).map(|_| r.random()).collect();
    let labels: Vec<bool> = (0..10_000).map(|i| i % 2 == 0).collect();
    let auc = auc_rank_sum(&scores, &labels).unwrap();
    assert!((auc - 0.5).abs() <= 0.02, "{auc}");
}

#[test]
fn efficiency_bound_examples() {
    let cfg = ExperimentConfig::from_toml_str(
        r#"
[clustering]
tau_max = inf
sigma2_max = inf
[data]
n_samples = 400
classes = 3
dim = 5
[model]
hidden = [[2], [4], [8]]
[simulation]
rounds = 2
"#,
    )
    .unwrap();
    let (_, logs) = asa_core::simulator::run_experiment(&cfg, Method::Asa).unwrap();
    let zero = efficiency_metrics(&logs, &[0.0; 10]).unwrap();
    assert_eq!(zero.exp_bound, 0.0);
    assert!(zero.bound_met);
    let one = efficiency_metrics(&logs, &[1.0; 10]).unwrap();
    assert!((one.exp_bound - (1.0 - (-1.0f64).exp())).abs() < 1e-15);
    assert!((0.0..=1.0).contains(&one.eta_resource) && (0.0..=1.0).contains(&one.c_efficiency));
}
