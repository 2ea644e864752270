//! Experiment orchestration.
//!
//! A round is a pure function of the previous [`SimState`]: every random draw
//! comes from a stream keyed by `(seed, purpose, device, round, epoch)`, so a
//! round can be retried, resumed from a checkpoint or run in parallel without
//! changing any result.

pub mod checkpoint;
pub mod log;

use std::str::FromStr;
use std::sync::atomic::{AtomicU32, Ordering};

use serde::{Deserialize, Serialize};

use crate::aggregation::{check_convergence, hierarchical_merge, intra_cluster_aggregate, GlobalModel, Update};
use crate::clustering::{
    check_constraints, kmeans, map_tiers, repair_min_size, Allocation, ClusterAssignment, ConstraintReport, Tier,
};
use crate::config::{DataConfig, DataSource, ExperimentConfig, PartitionMode};
use crate::data::{self, Dataset, ShardPlan};
use crate::error::{check_dim, invalid, AsaError, Result};
use crate::models::{adjust_complexity, build_family, forward, Direction, NestedModelFamily, ParamVector, Rung};
use crate::profiles::{build_records, generate_fleet, read_fleet_csv, DeviceRecord, ResourceProfile};
use crate::rng::{self, purpose};
use crate::training::{lr_schedule, monitor_and_adjust, sgd_epoch, simulate_usage, MonitorState};

pub use log::{DeviceRoundLog, FileHeader, RoundLog, SimTimes};

/// Bytes per transmitted parameter.
pub const BYTES_PER_PARAM: u64 = 4;

/// Proximal coefficient used by the FedProx baseline when the config leaves
/// `training.prox_mu` at zero.
pub const DEFAULT_FEDPROX_MU: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Asa,
    FedAvg,
    FedProx,
    HierFl,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Asa, Method::FedAvg, Method::FedProx, Method::HierFl];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Asa => "asa",
            Method::FedAvg => "fedavg",
            Method::FedProx => "fedprox",
            Method::HierFl => "hierfl",
        }
    }
}

impl FromStr for Method {
    type Err = AsaError;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| invalid(format!("unknown method {s:?}; expected asa, fedavg, fedprox or hierfl")))
    }
}

/// How a method uses the shared machinery.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Plan {
    /// One cluster holding every device.
    flat: bool,
    fixed_rung: Option<Rung>,
    adapt: bool,
    prox_mu: f64,
}

fn plan_for(method: Method, cfg: &ExperimentConfig) -> Plan {
    let t = &cfg.training;
    match method {
        Method::Asa => Plan {
            flat: false,
            fixed_rung: cfg.simulation.fixed_rung,
            adapt: t.adapt,
            prox_mu: t.prox_mu,
        },
        Method::FedAvg => Plan {
            flat: true,
            fixed_rung: Some(Rung::Complex),
            adapt: false,
            prox_mu: 0.0,
        },
        Method::FedProx => Plan {
            flat: true,
            fixed_rung: Some(Rung::Complex),
            adapt: false,
            prox_mu: if t.prox_mu > 0.0 { t.prox_mu } else { DEFAULT_FEDPROX_MU },
        },
        Method::HierFl => Plan {
            flat: false,
            fixed_rung: Some(Rung::Complex),
            adapt: false,
            prox_mu: 0.0,
        },
    }
}

fn tier_rung(t: Tier) -> Rung {
    match t {
        Tier::High => Rung::Complex,
        Tier::Mid => Rung::Medium,
        Tier::Low => Rung::Simple,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceState {
    pub rung: Rung,
    pub monitor: MonitorState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    /// Rounds completed.
    pub round: u64,
    /// Complex-layout global model, kept at `f32` precision.
    pub global: ParamVector,
    pub loss_history: Vec<f64>,
    pub devices: Vec<DeviceState>,
    pub labels: Vec<usize>,
    /// Nominal rung of each cluster.
    pub cluster_rungs: Vec<Rung>,
    /// Test accuracy of the global model at each rung, from the latest evaluation.
    pub rung_accuracy: [f64; 3],
    pub stopped: bool,
}

/// Builds the train and test sets described by `cfg`.
pub fn build_datasets(cfg: &DataConfig, seed: u64) -> Result<(Dataset, Dataset)> {
    match cfg.source {
        DataSource::Synthetic => {
            let all = data::gen_synthetic(cfg.n_samples, cfg.classes, cfg.dim, cfg.separation, seed)?;
            let (train, test) = data::train_test_split(all.len(), cfg.test_fraction, seed)?;
            Ok((all.subset(&train), all.subset(&test)))
        }
        DataSource::Idx => {
            let need = |p: &Option<std::path::PathBuf>, name: &str| {
                p.clone()
                    .ok_or_else(|| AsaError::Config(format!("data.{name} is required")))
            };
            let mut train = data::load_idx(
                &need(&cfg.train_images, "train_images")?,
                &need(&cfg.train_labels, "train_labels")?,
                cfg.train_limit,
            )?;
            let mut test = data::load_idx(
                &need(&cfg.test_images, "test_images")?,
                &need(&cfg.test_labels, "test_labels")?,
                cfg.test_limit,
            )?;
            let classes = train.classes.max(test.classes);
            train.classes = classes;
            test.classes = classes;
            Ok((train, test))
        }
    }
}

pub fn build_shards(cfg: &DataConfig, train: &Dataset, n_clients: usize, seed: u64) -> Result<ShardPlan> {
    match cfg.partition {
        PartitionMode::Dirichlet => data::partition_noniid(train, n_clients, cfg.dirichlet_alpha, seed),
        PartitionMode::LabelShards => data::partition_label_shards(train, n_clients, cfg.shards_per_client, seed),
    }
}

pub fn build_fleet(cfg: &ExperimentConfig) -> Result<Vec<ResourceProfile>> {
    match &cfg.fleet.csv {
        Some(p) => read_fleet_csv(std::fs::File::open(p)?),
        None => generate_fleet(cfg.fleet.n_devices, cfg.fleet.mix, cfg.simulation.seed),
    }
}

/// Mean cross-entropy and accuracy of `params` at `rung` on `data`.
pub fn evaluate(family: &NestedModelFamily, rung: Rung, global: &ParamVector, data: &Dataset) -> Result<(f64, f64)> {
    let p = family.extract(rung, &global.values)?;
    let (logits, loss) = forward(family.arch(rung), &p.values, &data.all_rows(), &data.labels)?;
    let correct = logits
        .iter()
        .zip(&data.labels)
        .filter(|(z, &y)| (0..z.len()).fold(0, |b, c| if z[c] > z[b] { c } else { b }) == y)
        .count();
    Ok((loss, correct as f64 / data.len() as f64))
}

/// Device ids kept after independent Bernoulli(`p`) dropout for `round`.
pub fn apply_dropout(active: &[usize], p: f64, seed: u64, round: u64) -> Result<Vec<usize>> {
    use rand::Rng;
    if !(0.0..=1.0).contains(&p) {
        return Err(invalid("dropout probability must lie in [0, 1]"));
    }
    let mut r = rng::stream(seed, &[purpose::DROPOUT, round]);
    Ok(active.iter().copied().filter(|_| r.random::<f64>() >= p).collect())
}

/// Compute and communication seconds for one round at `rung`:
/// `κ · epochs · shard · params / flops` and `2 · 4 · params / bandwidth`.
pub fn predicted_times(
    profile: &ResourceProfile,
    params: usize,
    shard: usize,
    epochs: usize,
    kappa: f64,
) -> (f64, f64) {
    let compute = kappa * (epochs * shard) as f64 * params as f64 / profile.effective_flops();
    let comm = 2.0 * (BYTES_PER_PARAM as f64) * params as f64 / profile.bandwidth_bytes_per_s();
    (compute, comm)
}

struct Fault {
    round: u64,
    remaining: AtomicU32,
}

struct DeviceOutcome {
    update: Update,
    log: DeviceRoundLog,
    state: DeviceState,
}

pub struct Simulator {
    pub config: ExperimentConfig,
    pub method: Method,
    pub family: NestedModelFamily,
    pub records: Vec<DeviceRecord>,
    pub train: Dataset,
    pub test: Dataset,
    pub shards: ShardPlan,
    plan: Plan,
    fault: Option<Fault>,
}

impl Simulator {
    /// Builds the fleet, data and shards from the configuration.
    pub fn new(config: &ExperimentConfig, method: Method) -> Result<Self> {
        config.validate()?;
        let fleet = build_fleet(config)?;
        let seed = config.simulation.seed;
        let (train, test) = build_datasets(&config.data, seed)?;
        let shards = build_shards(&config.data, &train, fleet.len(), seed)?;
        Self::from_parts(config, method, &fleet, train, test, shards)
    }

    pub fn from_parts(
        config: &ExperimentConfig,
        method: Method,
        fleet: &[ResourceProfile],
        train: Dataset,
        test: Dataset,
        shards: ShardPlan,
    ) -> Result<Self> {
        config.validate()?;
        check_dim(fleet.len(), shards.shards.len())?;
        shards.validate(train.len())?;
        if test.is_empty() {
            return Err(invalid("test set is empty"));
        }
        let h = &config.model.hidden;
        let mut family = build_family(train.dim, train.classes, [&h[0], &h[1], &h[2]])?;
        if config.model.width_scaling {
            family = family.with_width_scaling()?;
        }
        let weights = config.weights.scoring_weights()?;
        let records = build_records(
            fleet,
            &config.benchmark,
            &weights,
            config.weights.include_benchmark,
            config.simulation.exec,
        )?;
        Ok(Self {
            plan: plan_for(method, config),
            config: config.clone(),
            method,
            family,
            records,
            train,
            test,
            shards,
            fault: None,
        })
    }

    /// Makes round `round` fail `times` times before succeeding. Test hook
    /// for the retry path.
    pub fn inject_fault(&mut self, round: u64, times: u32) {
        self.fault = Some(Fault {
            round,
            remaining: AtomicU32::new(times),
        });
    }

    pub fn n_devices(&self) -> usize {
        self.records.len()
    }

    /// Identifies the run's dynamics, including the method. Checkpoints and
    /// log headers carry it.
    pub fn config_hash(&self) -> u64 {
        rng::derive_seed(self.config.dynamics_hash(), &[self.method as u64])
    }

    fn cluster_points(&self) -> Vec<Vec<f64>> {
        if self.config.clustering.use_full_features {
            self.records.iter().map(|r| r.normalized_features.clone()).collect()
        } else {
            self.records.iter().map(|r| vec![r.score]).collect()
        }
    }

    /// Runs clustering with the given seed and maps clusters to rungs.
    pub fn cluster(&self, seed: u64) -> Result<(ClusterAssignment, Vec<Rung>)> {
        let n = self.n_devices();
        if self.plan.flat {
            let a = ClusterAssignment {
                k: 1,
                labels: vec![0; n],
                centroids: vec![vec![0.0]],
                objective: 0.0,
                iterations_used: 0,
                repairs: vec![],
                objective_trace: vec![],
                distance_computations: 0,
            };
            return Ok((a, vec![self.plan.fixed_rung.unwrap_or(Rung::Complex)]));
        }
        let c = &self.config.clustering;
        let points = self.cluster_points();
        let a = kmeans(&points, c.k, seed, c.max_iter, c.tol, self.config.simulation.exec)?;
        let a = repair_min_size(&a, &points, c.n_min)?;
        let rungs = match self.plan.fixed_rung {
            Some(r) => vec![r; c.k],
            None => {
                let scores: Vec<f64> = self.records.iter().map(|r| r.score).collect();
                map_tiers(&a, &scores)?.into_iter().map(tier_rung).collect()
            }
        };
        Ok((a, rungs))
    }

    pub fn initial_state(&self) -> Result<SimState> {
        let seed = self.config.simulation.seed;
        let (a, cluster_rungs) = self.cluster(seed)?;
        let devices = a
            .labels
            .iter()
            .map(|&l| DeviceState {
                rung: cluster_rungs[l],
                monitor: MonitorState::default(),
            })
            .collect();
        Ok(SimState {
            round: 0,
            global: self.family.init_params(seed),
            loss_history: Vec::new(),
            devices,
            labels: a.labels,
            cluster_rungs,
            rung_accuracy: [0.5; 3],
            stopped: false,
        })
    }

    fn train_device(&self, state: &SimState, dev: usize, t: u64) -> Result<DeviceOutcome> {
        let cfg = &self.config;
        let seed = cfg.simulation.seed;
        let tc = cfg.training.train_config();
        let shard = &self.shards.shards[dev];
        let record = &self.records[dev];
        let rung_start = state.devices[dev].rung;
        let mut rung = rung_start;
        let mut monitor = state.devices[dev].monitor;
        let mut params = self.family.extract(rung, &state.global.values)?;
        let mut anchor = params.values.clone();
        let lr = lr_schedule(t, &tc)?;
        let epochs = tc.effective_epochs();

        let (mut loss, mut grad_sq, mut steps, mut work) = (0.0, 0.0, 0u64, 0u64);
        let (mut cpu_sum, mut mem_sum) = (0.0, 0.0);
        let mut adjustments = Vec::new();
        for e in 0..epochs.max(1) {
            if epochs == 0 {
                let (_, l) = forward(
                    self.family.arch(rung),
                    &params.values,
                    &self.train.rows(shard),
                    &shard.iter().map(|&i| self.train.labels[i]).collect::<Vec<_>>(),
                )?;
                loss = l;
            } else {
                let prox = (self.plan.prox_mu > 0.0).then_some((self.plan.prox_mu, anchor.as_slice()));
                let mut r = rng::stream(seed, &[purpose::SHUFFLE, dev as u64, t, e as u64]);
                let s = sgd_epoch(
                    self.family.arch(rung),
                    &mut params.values,
                    &self.train,
                    shard,
                    tc.batch_size,
                    lr,
                    prox,
                    &mut r,
                )?;
                loss = s.loss;
                grad_sq = s.grad_sq;
                steps += s.steps;
                work += (shard.len() * self.family.param_count(rung)) as u64;
            }
            let mut r = rng::stream(seed, &[purpose::USAGE, dev as u64, t, e as u64]);
            let usage = simulate_usage(
                &record.profile,
                rung,
                &cfg.training.demand,
                cfg.training.usage_noise_sd,
                &mut r,
            );
            cpu_sum += usage.cpu;
            mem_sum += usage.memory;
            if self.plan.adapt && epochs > 0 {
                let (dir, next) = monitor_and_adjust(usage, &cfg.training.thresholds, monitor);
                monitor = next;
                if dir != Direction::Hold {
                    adjustments.push(dir);
                    let target = adjust_complexity(rung, dir);
                    if target != rung {
                        params = self.family.project_params(target, &params, Some(&state.global))?;
                        anchor = self.family.extract(target, &state.global.values)?.values;
                        rung = target;
                    }
                }
            }
        }
        params.round_to_f32();
        let n_epochs = epochs.max(1) as f64;
        let utility = self.family.utility(
            rung,
            record.score,
            state.rung_accuracy[rung.index()],
            cfg.model.alpha,
            cfg.model.beta,
        )?;
        let compute = cfg.simulation.kappa * work as f64 / record.profile.effective_flops();
        let bytes_down = BYTES_PER_PARAM * self.family.param_count(rung_start) as u64;
        let bytes_up = BYTES_PER_PARAM * self.family.param_count(rung) as u64;
        let communication = (bytes_down + bytes_up) as f64 / record.profile.bandwidth_bytes_per_s();
        let log = DeviceRoundLog {
            device_id: dev,
            cluster: state.labels[dev],
            rung_start,
            rung_end: rung,
            loss,
            grad_sq,
            cpu_usage: cpu_sum / n_epochs,
            memory_usage: mem_sum / n_epochs,
            adjustments,
            utility,
            n_samples: shard.len(),
            sgd_steps: steps,
            train_work: work,
            bytes_up,
            bytes_down,
            times: SimTimes {
                compute,
                communication,
                synchronization: 0.0,
                overhead: cfg.simulation.overhead_s,
            },
        };
        Ok(DeviceOutcome {
            update: Update {
                device_id: dev,
                rung,
                params,
                n_samples: shard.len(),
                loss,
            },
            log,
            state: DeviceState { rung, monitor },
        })
    }

    fn recluster(&self, state: &mut SimState, t: u64) -> Result<u64> {
        let seed = rng::derive_seed(self.config.simulation.seed, &[purpose::RECLUSTER, t]);
        let (a, rungs) = self.cluster(seed)?;
        for (dev, d) in state.devices.iter_mut().enumerate() {
            let old = state.cluster_rungs[state.labels[dev]];
            let new = rungs[a.labels[dev]];
            if old != new {
                *d = DeviceState {
                    rung: new,
                    monitor: MonitorState::default(),
                };
            }
        }
        state.labels = a.labels;
        state.cluster_rungs = rungs;
        Ok(a.distance_computations)
    }

    fn try_round(&self, prev: &SimState) -> Result<(SimState, RoundLog)> {
        let t = prev.round + 1;
        if let Some(f) = &self.fault {
            if f.round == t
                && f.remaining
                    .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |r| r.checked_sub(1))
                    .is_ok()
            {
                return Err(AsaError::RoundFailed {
                    round: t,
                    reason: "injected fault".into(),
                });
            }
        }
        let cfg = &self.config;
        let sim = &cfg.simulation;
        let mut state = prev.clone();

        let every = cfg.clustering.recluster_every;
        let reclustered = !self.plan.flat && every > 0 && t > 1 && (t - 1).is_multiple_of(every);
        let distance_computations = if reclustered { self.recluster(&mut state, t)? } else { 0 };

        let all: Vec<usize> = (0..self.n_devices()).collect();
        let kept = apply_dropout(&all, sim.dropout_p, sim.seed, t)?;
        let dropped: Vec<usize> = all.iter().copied().filter(|d| kept.binary_search(d).is_err()).collect();
        let epochs = cfg.training.train_config().effective_epochs();
        let (participants, stragglers): (Vec<usize>, Vec<usize>) = kept.iter().partition(|&&d| {
            let pc = self.family.param_count(state.devices[d].rung);
            let (c, m) = predicted_times(
                &self.records[d].profile,
                pc,
                self.shards.shards[d].len(),
                epochs,
                sim.kappa,
            );
            c + m <= cfg.clustering.tau_max
        });

        let outcomes = sim
            .exec
            .map(&participants, |&d| self.train_device(&state, d, t))
            .into_iter()
            .collect::<Result<Vec<_>>>()?;

        let k = state.cluster_rungs.len();
        let mut slowest = vec![0.0f64; k];
        for o in &outcomes {
            let c = o.log.cluster;
            slowest[c] = slowest[c].max(o.log.times.compute + o.log.times.communication);
        }
        let mut device_logs = Vec::with_capacity(outcomes.len());
        let mut per_cluster: Vec<Vec<Update>> = vec![Vec::new(); k];
        for o in outcomes {
            let mut log = o.log;
            let own = log.times.compute + log.times.communication;
            log.times.synchronization = (slowest[log.cluster] - own).max(0.0);
            state.devices[log.device_id] = o.state;
            per_cluster[log.cluster].push(o.update);
            device_logs.push(log);
        }

        let mut cluster_models = Vec::new();
        let mut cluster_losses = Vec::with_capacity(k);
        for (c, updates) in per_cluster.iter().enumerate() {
            match intra_cluster_aggregate(&self.family, c, state.cluster_rungs[c], updates, &prev.global)? {
                Some(m) => {
                    cluster_losses.push(Some(m.loss));
                    cluster_models.push(m);
                }
                None => cluster_losses.push(None),
            }
        }
        let mut global = hierarchical_merge(&self.family, &cluster_models, &prev.global)?;
        global.round_to_f32();
        if global.values.iter().any(|v| !v.is_finite()) {
            return Err(AsaError::RoundFailed {
                round: t,
                reason: "global model diverged".into(),
            });
        }
        state.global = global;

        let (global_loss, accuracy) = evaluate(&self.family, Rung::Complex, &state.global, &self.test)?;
        if t.is_multiple_of(sim.eval_every) {
            for r in Rung::ALL {
                state.rung_accuracy[r.index()] = if r == Rung::Complex {
                    accuracy
                } else {
                    evaluate(&self.family, r, &state.global, &self.test)?.1
                };
            }
        }
        state.loss_history.push(global_loss);
        state.round = t;

        let bytes_total: u64 = device_logs.iter().map(|d| d.bytes_up + d.bytes_down).sum();
        let fedavg_bytes =
            device_logs.len() as u64 * 2 * BYTES_PER_PARAM * self.family.param_count(Rung::Complex) as u64;
        let usages: Vec<f64> = device_logs.iter().map(|d| d.cpu_usage).collect();
        let resource_imbalance = if usages.is_empty() {
            0.0
        } else {
            let m = usages.iter().sum::<f64>() / usages.len() as f64;
            usages.iter().map(|u| (u - m) * (u - m)).sum::<f64>() / usages.len() as f64
        };
        let comm_ratio = if fedavg_bytes == 0 {
            0.0
        } else {
            bytes_total as f64 / fedavg_bytes as f64
        };
        let [a1, a2, a3] = sim.objective_weights;
        let objective = a1 * global_loss + a2 * resource_imbalance + a3 * comm_ratio;

        let (rate, converged) =
            check_convergence(&state.loss_history, sim.convergence_window, sim.convergence_threshold)?;
        state.stopped = sim.early_stop && converged;

        let log = RoundLog {
            round: t,
            active: participants,
            dropped,
            stragglers,
            devices: device_logs,
            cluster_losses,
            global_loss,
            accuracy,
            rung_accuracy: state.rung_accuracy,
            objective,
            resource_imbalance,
            comm_ratio,
            convergence_rate: rate.is_finite().then_some(rate),
            stopped: state.stopped,
            reclustered,
            retried: false,
            bytes_total,
            fedavg_bytes,
            distance_computations,
        };
        Ok((state, log))
    }

    /// Runs one round. A failed round is retried once from the unchanged
    /// previous state before the error is reported.
    pub fn step_round(&self, state: &SimState) -> Result<(SimState, RoundLog)> {
        match self.try_round(state) {
            Ok(r) => Ok(r),
            Err(first) => {
                ::log::warn!(
                    "round {} failed ({first}); retrying from the last state",
                    state.round + 1
                );
                let (s, mut l) = self.try_round(state).map_err(|e| AsaError::RoundFailed {
                    round: state.round + 1,
                    reason: format!("failed twice: {first}; then {e}"),
                })?;
                l.retried = true;
                Ok((s, l))
            }
        }
    }

    /// Advances until `until_round` rounds are complete or early stopping
    /// fires, calling `on_round` after every round.
    pub fn run_until<F>(
        &self,
        mut state: SimState,
        until_round: u64,
        mut on_round: F,
    ) -> Result<(SimState, Vec<RoundLog>)>
    where
        F: FnMut(&SimState, &RoundLog) -> Result<()>,
    {
        let mut logs = Vec::new();
        while state.round < until_round && !state.stopped {
            let (next, log) = self.step_round(&state)?;
            ::log::info!(
                "{} round {} loss {:.4} acc {:.4} bytes {}",
                self.method.as_str(),
                log.round,
                log.global_loss,
                log.accuracy,
                log.bytes_total
            );
            on_round(&next, &log)?;
            logs.push(log);
            state = next;
        }
        Ok((state, logs))
    }

    /// Constraint report for the current placement: each device carries its
    /// own training job with the cpu demand of its rung.
    pub fn constraint_report(&self, state: &SimState) -> Result<ConstraintReport> {
        let n = self.n_devices();
        let mut alloc = Allocation::empty(n, n);
        for i in 0..n {
            alloc.x[i][i] = 1.0;
            alloc.u[i][i] = 1.0;
        }
        let demands: Vec<f64> = state
            .devices
            .iter()
            .map(|d| self.config.training.demand.cpu[d.rung.index()])
            .collect();
        let caps: Vec<f64> = self.records.iter().map(|r| r.profile.cpu_capacity()).collect();
        let epochs = self.config.training.train_config().effective_epochs();
        let delays: Vec<f64> = (0..n)
            .map(|d| {
                let pc = self.family.param_count(state.devices[d].rung);
                let (c, m) = predicted_times(
                    &self.records[d].profile,
                    pc,
                    self.shards.shards[d].len(),
                    epochs,
                    self.config.simulation.kappa,
                );
                c + m
            })
            .collect();
        check_constraints(
            &alloc,
            &demands,
            &caps,
            &state.labels,
            state.cluster_rungs.len(),
            &delays,
            &self.config.constraint_params(),
        )
    }
}

/// Runs a whole experiment from scratch.
pub fn run_experiment(config: &ExperimentConfig, method: Method) -> Result<(GlobalModel, Vec<RoundLog>)> {
    let sim = Simulator::new(config, method)?;
    let state = sim.initial_state()?;
    let (state, logs) = sim.run_until(state, config.simulation.rounds, |_, _| Ok(()))?;
    Ok((
        GlobalModel {
            params: state.global,
            round: state.round,
            loss_history: state.loss_history,
        },
        logs,
    ))
}
