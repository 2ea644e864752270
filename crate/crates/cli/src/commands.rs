use std::io::{BufReader, Write};
use std::path::Path;

use asa_core::aggregation::GlobalModel;
use asa_core::clustering::{adjusted_rand_index, write_assignment_csv, Tier};
use asa_core::config::ExperimentConfig;
use asa_core::diagnostics::{
    column_stats, comm_cost, efficiency_metrics, fit_convergence, lyapunov_check, simulate_quadratic, stability_report,
    telescoping_check, Quadratic,
};
use asa_core::profiles::{build_records, write_fleet_csv};
use asa_core::simulator::log::{read_rounds, write_round};
use asa_core::simulator::{build_datasets, build_fleet, build_shards, checkpoint, RoundLog};
use asa_core::{AsaError, Method, Rung, Simulator};
use serde::Serialize;
use serde_json::json;
use thiserror::Error;

use crate::output::{create, csv_writer, write_ndjson};
use crate::{Cli, Command};

/// Exit status 2 for configuration problems, 3 for everything else.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl From<AsaError> for CliError {
    fn from(e: AsaError) -> Self {
        match e {
            AsaError::Config(_) => CliError::Config(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

fn load_config(cli: &Cli) -> CliResult<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.simulation.seed = s;
    }
    if let Some(r) = cli.rounds {
        cfg.simulation.rounds = r;
    }
    if let Some(o) = &cli.out {
        cfg.output.dir = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn run(cli: &Cli) -> CliResult<()> {
    let cfg = load_config(cli)?;
    let out = cfg.output.dir.clone();
    match &cli.command {
        Command::Bench => bench(&cfg, &out),
        Command::Cluster => cluster(&cfg, &out),
        Command::Train { resume } => train(&cfg, &out, resume.as_deref()),
        Command::Compare { methods, target } => {
            let methods = methods
                .iter()
                .map(|m| m.parse::<Method>().map_err(|e| CliError::Config(e.to_string())))
                .collect::<CliResult<Vec<_>>>()?;
            if methods.is_empty() {
                return Err(CliError::Config("--methods needs at least one method".into()));
            }
            compare(&cfg, &out, &methods, *target)
        }
        Command::Diagnose { log, sigma2 } => diagnose(&cfg, &out, log.as_deref(), *sigma2),
        Command::SweepWeights { step, train_rounds } => sweep_weights(&cfg, &out, *step, *train_rounds),
    }
}

// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct ScoreRow {
    device_id: usize,
    score: f64,
    cpu_capacity: f64,
    matmul_time: f64,
    memory_pass_time: f64,
    roundtrip_time: f64,
}

fn bench(cfg: &ExperimentConfig, out: &Path) -> CliResult<()> {
    let hash = cfg.dynamics_hash();
    let fleet = build_fleet(cfg)?;
    let weights = cfg.weights.scoring_weights()?;
    let records = build_records(
        &fleet,
        &cfg.benchmark,
        &weights,
        cfg.weights.include_benchmark,
        cfg.simulation.exec,
    )?;

    let mut w = csv_writer(&out.join("fleet.csv"), hash)?;
    write_fleet_csv(&mut w, &fleet)?;
    w.flush()?;

    let mut w = csv::Writer::from_writer(csv_writer(&out.join("scores.csv"), hash)?);
    for r in &records {
        w.serialize(ScoreRow {
            device_id: r.id,
            score: r.score,
            cpu_capacity: r.profile.cpu_capacity(),
            matmul_time: r.benchmark.matmul_time,
            memory_pass_time: r.benchmark.memory_pass_time,
            roundtrip_time: r.benchmark.roundtrip_time,
        })?;
    }
    w.flush()?;
    log::info!("benchmarked {} devices", records.len());
    Ok(())
}

fn rung_tier(r: Rung) -> Tier {
    match r {
        Rung::Complex => Tier::High,
        Rung::Medium => Tier::Mid,
        Rung::Simple => Tier::Low,
    }
}

fn cluster(cfg: &ExperimentConfig, out: &Path) -> CliResult<()> {
    let sim = Simulator::new(cfg, Method::Asa)?;
    let hash = cfg.dynamics_hash();
    let state = sim.initial_state()?;
    let (assignment, rungs) = sim.cluster(cfg.simulation.seed)?;
    let tiers: Vec<Tier> = rungs.iter().copied().map(rung_tier).collect();
    let scores: Vec<f64> = sim.records.iter().map(|r| r.score).collect();

    let mut w = csv_writer(&out.join("assignment.csv"), hash)?;
    write_assignment_csv(&mut w, &assignment, &tiers, &scores)?;
    w.flush()?;

    let report = sim.constraint_report(&state)?;
    write_ndjson(
        &out.join("constraints.ndjson"),
        hash,
        &[json!({
            "sizes": assignment.sizes(),
            "objective": assignment.objective,
            "iterations": assignment.iterations_used,
            "repairs": assignment.repairs,
            "feasible": report.is_feasible(),
            "report": report,
        })],
    )
}

// ---------------------------------------------------------------------------

fn train(cfg: &ExperimentConfig, out: &Path, resume: Option<&Path>) -> CliResult<()> {
    let sim = Simulator::new(cfg, Method::Asa)?;
    let hash = sim.config_hash();
    let log_path = out.join("rounds.ndjson");
    let ckpt_path = out.join("checkpoint.bin");

    let (state, prior) = match resume {
        Some(p) => {
            let state = checkpoint::restore(p, hash).map_err(|e| CliError::Runtime(format!("{}: {e}", p.display())))?;
            // Keep the rounds the checkpoint already covers so the resumed log
            // matches an uninterrupted one.
            // Lines are copied verbatim; re-encoding parsed floats need not
            // reproduce the same text.
            let prior = match std::fs::read_to_string(&log_path) {
                Ok(text) => {
                    let parsed = read_rounds(BufReader::new(text.as_bytes()))?;
                    let body = text.lines().filter(|l| !l.trim().is_empty()).skip(1);
                    body.zip(parsed)
                        .filter(|(_, l)| l.round <= state.round)
                        .map(|(line, _)| line.to_owned())
                        .collect()
                }
                Err(_) => Vec::new(),
            };
            (state, prior)
        }
        None => (sim.initial_state()?, Vec::new()),
    };

    let mut w = create(&log_path)?;
    writeln!(w, "{}", asa_core::simulator::FileHeader::new(hash).to_line())?;
    for line in &prior {
        writeln!(w, "{line}")?;
    }
    w.flush()?;

    let every = cfg.output.checkpoint_every;
    let result = sim.run_until(state, cfg.simulation.rounds, |s, l| {
        write_round(&mut w, l)?;
        w.flush()?;
        if every > 0 && s.round % every == 0 {
            checkpoint::save(&ckpt_path, s, hash)?;
        }
        Ok(())
    });
    let (end, _) = result
        .map_err(|e| CliError::Runtime(format!("{e}; the last checkpoint is kept at {}", ckpt_path.display())))?;
    checkpoint::save(&ckpt_path, &end, hash).map_err(|e| CliError::Runtime(e.to_string()))?;

    let model = GlobalModel {
        params: end.global,
        round: end.round,
        loss_history: end.loss_history,
    };
    write_ndjson(&out.join("model.ndjson"), hash, &[model])
}

// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct SummaryRow {
    method: &'static str,
    rounds: u64,
    accuracy: f64,
    global_loss: f64,
    bytes_total: u64,
    fedavg_bytes: u64,
    comm_reduction: f64,
    compute_s: f64,
    communication_s: f64,
    synchronization_s: f64,
    overhead_s: f64,
    total_s: f64,
    rounds_to_target: Option<u64>,
}

fn summarize(sim: &Simulator, logs: &[RoundLog], target: f64) -> CliResult<SummaryRow> {
    let comm = comm_cost(&sim.family, logs)?;
    let mut times = [0.0f64; 4];
    for l in logs {
        // Devices finish together after synchronization, so the mean split
        // over participants adds up to the round's wall time.
        let n = l.devices.len().max(1) as f64;
        for d in &l.devices {
            let t = &d.times;
            for (acc, v) in times
                .iter_mut()
                .zip([t.compute, t.communication, t.synchronization, t.overhead])
            {
                *acc += v / n;
            }
        }
    }
    let last = logs.last();
    Ok(SummaryRow {
        method: sim.method.as_str(),
        rounds: last.map_or(0, |l| l.round),
        accuracy: last.map_or(f64::NAN, |l| l.accuracy),
        global_loss: last.map_or(f64::NAN, |l| l.global_loss),
        bytes_total: comm.total,
        fedavg_bytes: comm.total_fedavg,
        comm_reduction: comm.reduction,
        compute_s: times[0],
        communication_s: times[1],
        synchronization_s: times[2],
        overhead_s: times[3],
        total_s: times.iter().sum(),
        rounds_to_target: logs.iter().find(|l| l.accuracy >= target).map(|l| l.round),
    })
}

fn compare(cfg: &ExperimentConfig, out: &Path, methods: &[Method], target: f64) -> CliResult<()> {
    let hash = cfg.dynamics_hash();
    let mut rows = Vec::new();
    for &m in methods {
        let sim = Simulator::new(cfg, m)?;
        let (_, logs) = sim.run_until(sim.initial_state()?, cfg.simulation.rounds, |_, _| Ok(()))?;
        write_ndjson(&out.join(m.as_str()).join("rounds.ndjson"), sim.config_hash(), &logs)?;
        rows.push(summarize(&sim, &logs, target)?);
        log::info!("{} finished {} rounds", m.as_str(), logs.len());
    }
    let mut w = csv::Writer::from_writer(csv_writer(&out.join("summary.csv"), hash)?);
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------

fn diagnose(cfg: &ExperimentConfig, out: &Path, log_path: Option<&Path>, sigma2: f64) -> CliResult<()> {
    let diag = cfg
        .diagnostics
        .as_ref()
        .ok_or_else(|| CliError::Config("missing [diagnostics.oracle] section (diagnostics.oracle)".into()))?;
    let hash = cfg.full_hash();
    let o = &diag.oracle;
    let q = Quadratic::from_config(o)?;
    let seed = cfg.simulation.seed;
    let exec = cfg.simulation.exec;

    let decaying: Vec<f64> = (1..=o.horizon).map(|t| 1.0 / (q.mu() * t as f64)).collect();
    let trace = simulate_quadratic(&q, &decaying, o.seeds, false, seed, exec)?;
    let lyapunov = lyapunov_check(&q, &trace, o.d, 3.0)?;

    // At η = 1/L the stated noise term is too small by half; 1/(2L) keeps
    // the transient slack large enough for it to hold at desk horizons.
    let constant = vec![0.5 / q.l(); o.horizon];
    let flat = simulate_quadratic(&q, &constant, o.seeds, false, seed, exec)?;
    let telescoping = telescoping_check(&q, &flat, 3.0)?;

    let stability = stability_report(
        &trace,
        diag.stability_epsilon,
        diag.stability_delta,
        diag.stability_t0.min(o.horizon),
    )?;
    let (gap_mean, _) = column_stats(&trace.gap);
    let fit = fit_convergence(&gap_mean[1..], o.sigma2.max(f64::MIN_POSITIVE))?;

    let mut w = csv::Writer::from_writer(csv_writer(&out.join("lyapunov.csv"), hash)?);
    for s in &lyapunov.steps {
        w.serialize(s)?;
    }
    w.flush()?;

    let mut reports = vec![
        json!({
            "report": "lyapunov",
            "violations": lyapunov.violations,
            "first_violation": lyapunov.first_violation,
            "corrected_violations": lyapunov.corrected_violations,
            "final_gap_mean": lyapunov.final_gap_mean,
            "final_gap_se": lyapunov.final_gap_se,
            "final_gap_bound": lyapunov.final_gap_bound,
            "final_gap_holds": lyapunov.final_gap_holds,
        }),
        json!({ "report": "telescoping", "result": telescoping }),
        json!({ "report": "stability", "result": stability }),
        json!({ "report": "oracle_convergence_fit", "result": fit }),
    ];

    if let Some(p) = log_path {
        let f = std::fs::File::open(p).map_err(|e| CliError::Runtime(format!("{}: {e}", p.display())))?;
        let logs = read_rounds(BufReader::new(f))?;
        let history: Vec<f64> = logs.iter().map(|l| l.global_loss).collect();
        let fit = fit_convergence(&history, sigma2)?;
        let fleet = build_fleet(cfg)?;
        let weights = cfg.weights.scoring_weights()?;
        let records = build_records(&fleet, &cfg.benchmark, &weights, cfg.weights.include_benchmark, exec)?;
        let scores: Vec<f64> = records.iter().map(|r| r.score).collect();
        let efficiency = efficiency_metrics(&logs, &scores)?;
        let sent: u64 = logs.iter().map(|l| l.bytes_total).sum();
        let baseline: u64 = logs.iter().map(|l| l.fedavg_bytes).sum();
        reports.push(json!({ "report": "loss_convergence_fit", "rounds": logs.len(), "result": fit }));
        reports.push(json!({ "report": "efficiency", "result": efficiency }));
        reports.push(json!({
            "report": "communication",
            "bytes_total": sent,
            "fedavg_bytes": baseline,
            "reduction": if baseline > 0 { 1.0 - sent as f64 / baseline as f64 } else { 0.0 },
        }));
    }
    write_ndjson(&out.join("diagnostics.ndjson"), hash, &reports)
}

// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct SweepRow {
    compute: f64,
    memory: f64,
    network: f64,
    simple: usize,
    medium: usize,
    complex: usize,
    ari_vs_config: f64,
    score_mean: f64,
    score_sd: f64,
    accuracy: Option<f64>,
    objective: Option<f64>,
}

fn sweep_weights(cfg: &ExperimentConfig, out: &Path, step: f64, train_rounds: u64) -> CliResult<()> {
    if !(step > 0.0 && step <= 1.0) {
        return Err(CliError::Config(format!("--step must lie in (0, 1], got {step}")));
    }
    let n = (1.0 / step).round() as usize;
    let hash = cfg.dynamics_hash();
    let fleet = build_fleet(cfg)?;
    let seed = cfg.simulation.seed;
    let (train, test) = build_datasets(&cfg.data, seed)?;
    let shards = build_shards(&cfg.data, &train, fleet.len(), seed)?;
    let make = |c: &ExperimentConfig| {
        Simulator::from_parts(c, Method::Asa, &fleet, train.clone(), test.clone(), shards.clone())
    };
    let (reference, _) = make(cfg)?.cluster(seed)?;

    let mut w = csv::Writer::from_writer(csv_writer(&out.join("sweep.csv"), hash)?);
    for i in 0..=n {
        for j in 0..=n - i {
            let mut c = cfg.clone();
            c.weights.compute = i as f64 / n as f64;
            c.weights.memory = j as f64 / n as f64;
            c.weights.network = (n - i - j) as f64 / n as f64;
            let sim = make(&c)?;
            let (a, rungs) = sim.cluster(seed)?;
            let mut sizes = [0usize; 3];
            for &l in &a.labels {
                sizes[rungs[l].index()] += 1;
            }
            let scores: Vec<f64> = sim.records.iter().map(|r| r.score).collect();
            let mean = scores.iter().sum::<f64>() / scores.len() as f64;
            let sd = (scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / scores.len() as f64).sqrt();
            let (accuracy, objective) = if train_rounds > 0 {
                let (_, logs) = sim.run_until(sim.initial_state()?, train_rounds, |_, _| Ok(()))?;
                (logs.last().map(|l| l.accuracy), logs.last().map(|l| l.objective))
            } else {
                (None, None)
            };
            w.serialize(SweepRow {
                compute: c.weights.compute,
                memory: c.weights.memory,
                network: c.weights.network,
                simple: sizes[0],
                medium: sizes[1],
                complex: sizes[2],
                ari_vs_config: adjusted_rand_index(&a.labels, &reference.labels)?,
                score_mean: mean,
                score_sd: sd,
                accuracy,
                objective,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}
