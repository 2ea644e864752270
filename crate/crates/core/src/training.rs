//! Local SGD, simulated resource telemetry and the monitor that moves devices
//! along the model ladder.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{check_dim, invalid, Result};
use crate::models::{loss_and_grad, Direction, ModelArch, ParamVector, Rung};
use crate::profiles::ResourceProfile;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    Constant,
    InvSqrt,
    InvT,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub lr0: f64,
    pub schedule: Schedule,
    pub batch_size: usize,
    pub local_epochs: usize,
    /// Proximal coefficient; zero disables the term.
    pub prox_mu: f64,
    /// Optional cap on local epochs per round (the epoch-budget reading of
    /// the delay constraint).
    pub epoch_budget: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr0: 0.01,
            schedule: Schedule::Constant,
            batch_size: 128,
            local_epochs: 1,
            prox_mu: 0.0,
            epoch_budget: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(invalid("lr0 must be positive"));
        }
        if self.batch_size == 0 {
            return Err(invalid("batch size must be at least 1"));
        }
        if !(self.prox_mu >= 0.0 && self.prox_mu.is_finite()) {
            return Err(invalid("prox_mu must be non-negative"));
        }
        Ok(())
    }

    pub fn effective_epochs(&self) -> usize {
        self.epoch_budget
            .map_or(self.local_epochs, |b| b.min(self.local_epochs))
    }
}

/// Step size for round `t ≥ 1`.
pub fn lr_schedule(t: u64, cfg: &TrainConfig) -> Result<f64> {
    if t == 0 {
        return Err(invalid("rounds are numbered from 1"));
    }
    let t = t as f64;
    Ok(match cfg.schedule {
        Schedule::Constant => cfg.lr0,
        Schedule::InvSqrt => cfg.lr0 / t.sqrt(),
        Schedule::InvT => cfg.lr0 / t,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    /// Mean mini-batch loss over the epoch (data term only).
    pub loss: f64,
    /// Mean squared norm of the update gradient over mini-batches.
    pub grad_sq: f64,
    pub steps: u64,
}

/// One shuffled pass of mini-batch SGD over `shard`. With `prox` set to
/// `(mu, anchor)` the update gradient gains `mu · (w − anchor)`.
pub fn sgd_epoch<R: Rng>(
    arch: &ModelArch,
    params: &mut [f64],
    data: &Dataset,
    shard: &[usize],
    batch_size: usize,
    lr: f64,
    prox: Option<(f64, &[f64])>,
    rng: &mut R,
) -> Result<EpochStats> {
    if shard.is_empty() {
        return Err(invalid("cannot train on an empty shard"));
    }
    if let Some((_, anchor)) = prox {
        check_dim(params.len(), anchor.len())?;
    }
    let mut order = shard.to_vec();
    order.shuffle(rng);
    let mut grad = vec![0.0; params.len()];
    let (mut loss_sum, mut grad_sum, mut steps) = (0.0, 0.0, 0u64);
    for batch in order.chunks(batch_size.max(1)) {
        let rows = data.rows(batch);
        let labels: Vec<usize> = batch.iter().map(|&i| data.labels[i]).collect();
        loss_sum += loss_and_grad(arch, params, &rows, &labels, &mut grad)?;
        if let Some((mu, anchor)) = prox.filter(|(mu, _)| *mu > 0.0) {
            for ((g, w), a) in grad.iter_mut().zip(params.iter()).zip(anchor) {
                *g += mu * (w - a);
            }
        }
        grad_sum += grad.iter().map(|g| g * g).sum::<f64>();
        for (w, g) in params.iter_mut().zip(&grad) {
            *w -= lr * g;
        }
        steps += 1;
    }
    Ok(EpochStats {
        loss: loss_sum / steps as f64,
        grad_sq: grad_sum / steps as f64,
        steps,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalResult {
    pub params: ParamVector,
    pub loss: f64,
    pub grad_sq: f64,
    pub steps: u64,
}

/// Runs the configured number of local epochs at the learning rate of round
/// `round_t`. The caller supplies one rng per epoch via `epoch_rng`, so the
/// shuffles are reproducible regardless of scheduling. With zero epochs the
/// parameters are returned unchanged together with the full-shard loss.
pub fn local_train<F, R>(
    arch: &ModelArch,
    params: &ParamVector,
    data: &Dataset,
    shard: &[usize],
    cfg: &TrainConfig,
    global_ref: &ParamVector,
    round_t: u64,
    mut epoch_rng: F,
) -> Result<LocalResult>
where
    F: FnMut(usize) -> R,
    R: Rng,
{
    cfg.validate()?;
    check_dim(arch.param_count(), params.values.len())?;
    if shard.is_empty() {
        return Err(invalid("cannot train on an empty shard"));
    }
    let lr = lr_schedule(round_t, cfg)?;
    let mut w = params.values.clone();
    let prox = (cfg.prox_mu > 0.0).then_some((cfg.prox_mu, global_ref.values.as_slice()));
    let epochs = cfg.effective_epochs();
    if epochs == 0 {
        let rows = data.rows(shard);
        let labels: Vec<usize> = shard.iter().map(|&i| data.labels[i]).collect();
        let mut g = vec![0.0; w.len()];
        let loss = loss_and_grad(arch, &w, &rows, &labels, &mut g)?;
        return Ok(LocalResult {
            params: params.clone(),
            loss,
            grad_sq: g.iter().map(|v| v * v).sum(),
            steps: 0,
        });
    }
    let mut last = None;
    let mut steps = 0;
    for e in 0..epochs {
        let s = sgd_epoch(arch, &mut w, data, shard, cfg.batch_size, lr, prox, &mut epoch_rng(e))?;
        steps += s.steps;
        last = Some(s);
    }
    let last = last.expect("at least one epoch");
    Ok(LocalResult {
        params: ParamVector {
            rung: params.rung,
            values: w,
        },
        loss: last.loss,
        grad_sq: last.grad_sq,
        steps,
    })
}

/// Per-rung resource demand: compute in core-GHz and memory in GB.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemandTable {
    pub cpu: [f64; 3],
    pub memory: [f64; 3],
}

impl Default for DemandTable {
    fn default() -> Self {
        Self {
            cpu: [1.0, 4.75, 9.5],
            memory: [0.25, 1.5, 2.85],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UsageSample {
    pub cpu: f64,
    pub memory: f64,
}

/// Demand-to-capacity ratios plus Gaussian noise of standard deviation
/// `noise_sd`, clipped to `[0, 1]`.
pub fn simulate_usage<R: Rng>(
    profile: &ResourceProfile,
    rung: Rung,
    demand: &DemandTable,
    noise_sd: f64,
    rng: &mut R,
) -> UsageSample {
    let mut noise = || {
        if noise_sd > 0.0 {
            Normal::new(0.0, noise_sd).expect("positive sd").sample(rng)
        } else {
            0.0
        }
    };
    let cpu = demand.cpu[rung.index()] / profile.cpu_capacity() + noise();
    let memory = demand.memory[rung.index()] / profile.ram_gb + noise();
    UsageSample {
        cpu: cpu.clamp(0.0, 1.0),
        memory: memory.clamp(0.0, 1.0),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResourceThresholds {
    pub cpu: f64,
    pub memory: f64,
    /// Accepted for completeness; the adjustment rule only reads cpu and memory.
    pub network: f64,
}

impl Default for ResourceThresholds {
    fn default() -> Self {
        Self {
            cpu: 0.9,
            memory: 0.9,
            network: 0.9,
        }
    }
}

impl ResourceThresholds {
    pub fn validate(&self) -> Result<()> {
        for v in [self.cpu, self.memory, self.network] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(invalid(format!("threshold {v} outside (0, 1]")));
            }
        }
        Ok(())
    }
}

/// Epochs of stable usage needed before moving up a rung.
pub const STABLE_EPOCHS_FOR_UP: u32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonitorState {
    pub stable_epochs: u32,
    pub last_direction: Direction,
}

impl Default for MonitorState {
    fn default() -> Self {
        Self {
            stable_epochs: 0,
            last_direction: Direction::Hold,
        }
    }
}

/// A strict breach of the cpu or memory threshold steps down and clears the
/// streak. Otherwise the streak grows, and on reaching three epochs the device
/// steps up and the streak restarts.
pub fn monitor_and_adjust(
    usage: UsageSample,
    th: &ResourceThresholds,
    state: MonitorState,
) -> (Direction, MonitorState) {
    let direction;
    let mut stable = state.stable_epochs;
    if usage.cpu > th.cpu || usage.memory > th.memory {
        direction = Direction::Down;
        stable = 0;
    } else {
        stable += 1;
        if stable >= STABLE_EPOCHS_FOR_UP {
            direction = Direction::Up;
            stable = 0;
        } else {
            direction = Direction::Hold;
        }
    }
    (
        direction,
        MonitorState {
            stable_epochs: stable,
            last_direction: direction,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_synthetic;
    use crate::rng;

    #[test]
    fn schedules() {
        let mut c = TrainConfig {
            lr0: 0.01,
            ..TrainConfig::default()
        };
        for s in [Schedule::Constant, Schedule::InvSqrt, Schedule::InvT] {
            c.schedule = s;
            assert_eq!(lr_schedule(1, &c).unwrap(), 0.01);
        }
        c.schedule = Schedule::InvSqrt;
        assert!((lr_schedule(4, &c).unwrap() - 0.005).abs() < 1e-15);
        c.schedule = Schedule::InvT;
        assert!((lr_schedule(10, &c).unwrap() - 0.001).abs() < 1e-15);
        assert!(lr_schedule(0, &c).is_err());
    }

    fn linear_setup() -> (ModelArch, Dataset, Vec<usize>) {
        let d = gen_synthetic(60, 2, 2, 6.0, 3).unwrap();
        let arch = ModelArch::new(Rung::Simple, vec![2, 2]).unwrap();
        (arch, d, (0..60).collect())
    }

    #[test]
    fn zero_epochs_is_a_no_op() {
        let (arch, d, shard) = linear_setup();
        let p = ParamVector {
            rung: Rung::Simple,
            values: vec![0.1; 6],
        };
        let cfg = TrainConfig {
            local_epochs: 0,
            ..TrainConfig::default()
        };
        let r = local_train(&arch, &p, &d, &shard, &cfg, &p, 1, |e| rng::stream(0, &[e as u64])).unwrap();
        assert_eq!(r.params, p);
        assert!(r.loss.is_finite() && r.steps == 0);
    }

    #[test]
    fn training_reduces_loss_and_is_deterministic() {
        let (arch, d, shard) = linear_setup();
        let p = ParamVector {
            rung: Rung::Simple,
            values: vec![0.0; 6],
        };
        let cfg = TrainConfig {
            lr0: 0.05,
            batch_size: 8,
            local_epochs: 5,
            ..TrainConfig::default()
        };
        let run = || local_train(&arch, &p, &d, &shard, &cfg, &p, 1, |e| rng::stream(1, &[e as u64])).unwrap();
        let r = run();
        let (_, before) = crate::models::forward(&arch, &p.values, &d.all_rows(), &d.labels).unwrap();
        let (_, after) = crate::models::forward(&arch, &r.params.values, &d.all_rows(), &d.labels).unwrap();
        assert!(after < before);
        assert_eq!(r, run());
        assert!(local_train(&arch, &p, &d, &[], &cfg, &p, 1, |e| rng::stream(1, &[e as u64])).is_err());
    }

    #[test]
    fn proximal_term_vanishes_at_anchor() {
        let (arch, d, shard) = linear_setup();
        let p = ParamVector {
            rung: Rung::Simple,
            values: vec![0.2, -0.1, 0.0, 0.3, 0.0, 0.0],
        };
        let base = TrainConfig {
            lr0: 1e-3,
            batch_size: 60,
            local_epochs: 1,
            ..TrainConfig::default()
        };
        let prox = TrainConfig {
            prox_mu: 1e6,
            ..base.clone()
        };
        // One full-batch step from the anchor: the proximal gradient is zero.
        let a = local_train(&arch, &p, &d, &shard, &base, &p, 1, |_| rng::stream(2, &[])).unwrap();
        let b = local_train(&arch, &p, &d, &shard, &prox, &p, 1, |_| rng::stream(2, &[])).unwrap();
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn usage_examples() {
        let mid = ResourceProfile::canonical_mid();
        let demand = DemandTable::default();
        let mut r = rng::stream(0, &[]);
        let u = simulate_usage(&mid, Rung::Complex, &demand, 0.0, &mut r);
        assert!((u.cpu - 0.95).abs() < 1e-12 && (u.memory - 0.95).abs() < 1e-12);

        let exact = DemandTable {
            cpu: [10.0; 3],
            memory: [3.0; 3],
        };
        let u = simulate_usage(&mid, Rung::Simple, &exact, 0.0, &mut r);
        assert_eq!((u.cpu, u.memory), (1.0, 1.0));
        let none = DemandTable {
            cpu: [0.0; 3],
            memory: [0.0; 3],
        };
        let u = simulate_usage(&mid, Rung::Simple, &none, 0.0, &mut r);
        assert_eq!((u.cpu, u.memory), (0.0, 0.0));
    }

    #[test]
    fn monitor_examples() {
        let th = ResourceThresholds::default();
        let s0 = MonitorState::default();
        let (d, s) = monitor_and_adjust(UsageSample { cpu: 0.95, memory: 0.1 }, &th, s0);
        assert_eq!((d, s.stable_epochs), (Direction::Down, 0));

        let calm = UsageSample { cpu: 0.5, memory: 0.5 };
        let (d1, s1) = monitor_and_adjust(calm, &th, s0);
        let (d2, s2) = monitor_and_adjust(calm, &th, s1);
        let (d3, s3) = monitor_and_adjust(calm, &th, s2);
        assert_eq!([d1, d2, d3], [Direction::Hold, Direction::Hold, Direction::Up]);
        assert_eq!(s3.stable_epochs, 0);

        let (d, _) = monitor_and_adjust(UsageSample { cpu: 0.9, memory: 0.9 }, &th, s0);
        assert_eq!(d, Direction::Hold);
    }
}
