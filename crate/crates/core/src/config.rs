//! Experiment configuration.
//!
//! One TOML file with namespaced sections. Unknown keys are rejected and every
//! section is validated on load. Defaults follow the reference experiment:
//! learning rate 0.01, batch 128, 10 clients, 3 tiers, 250 rounds.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::clustering::ConstraintParams;
use crate::error::{AsaError, Result};
use crate::exec::ExecMode;
use crate::models::Rung;
use crate::profiles::{feature_layout, ScoringWeights, Workload};
use crate::training::{DemandTable, ResourceThresholds, Schedule, TrainConfig};

fn cfg_err(msg: impl Into<String>) -> AsaError {
    AsaError::Config(msg.into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FleetConfig {
    pub n_devices: usize,
    /// High / Mid / Low proportions.
    pub mix: [f64; 3],
    /// Optional fleet CSV replacing the generated fleet.
    pub csv: Option<PathBuf>,
}

impl Default for FleetConfig {
    fn default() -> Self {
        Self {
            n_devices: 10,
            mix: [0.3, 0.4, 0.3],
            csv: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WeightsConfig {
    pub compute: f64,
    pub memory: f64,
    pub network: f64,
    pub include_benchmark: bool,
}

impl Default for WeightsConfig {
    fn default() -> Self {
        Self {
            compute: 0.5,
            memory: 0.3,
            network: 0.2,
            include_benchmark: true,
        }
    }
}

impl WeightsConfig {
    pub fn scoring_weights(&self) -> Result<ScoringWeights> {
        let sum = self.compute + self.memory + self.network;
        if (sum - 1.0).abs() > 1e-9 || [self.compute, self.memory, self.network].iter().any(|w| *w < 0.0) {
            return Err(cfg_err(format!(
                "weights: compute + memory + network must be non-negative and sum to 1, got {sum}"
            )));
        }
        ScoringWeights::from_categories(
            self.compute,
            self.memory,
            self.network,
            &feature_layout(self.include_benchmark),
        )
        .map_err(|e| cfg_err(format!("weights: {e}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusteringConfig {
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_n_min")]
    pub n_min: usize,
    #[serde(default)]
    pub n_max: Option<usize>,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
    /// Cluster on the full normalized feature vector instead of the score.
    #[serde(default)]
    pub use_full_features: bool,
    /// Re-run clustering every this many rounds; 0 disables it.
    #[serde(default = "default_recluster")]
    pub recluster_every: u64,
    /// Round-delay bound in simulated seconds. Devices predicted to exceed it
    /// are excluded from the round.
    pub tau_max: f64,
    /// Load-variance bound reported per cluster.
    pub sigma2_max: f64,
}

fn default_k() -> usize {
    3
}
fn default_n_min() -> usize {
    2
}
fn default_max_iter() -> usize {
    100
}
fn default_tol() -> f64 {
    1e-9
}
fn default_recluster() -> u64 {
    10
}

impl Default for ClusteringConfig {
    fn default() -> Self {
        Self {
            k: 3,
            n_min: 2,
            n_max: None,
            max_iter: 100,
            tol: 1e-9,
            use_full_features: false,
            recluster_every: 10,
            tau_max: f64::INFINITY,
            sigma2_max: f64::INFINITY,
        }
    }
}

impl ClusteringConfig {
    pub fn constraint_params(&self) -> ConstraintParams {
        ConstraintParams {
            n_min: self.n_min,
            n_max: self.n_max,
            tau_max: self.tau_max,
            sigma2_max: self.sigma2_max,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Hidden widths for the Simple, Medium and Complex rungs.
    pub hidden: [Vec<usize>; 3],
    pub alpha: f64,
    pub beta: f64,
    /// Rescale narrower rungs' hidden activations to the Complex width.
    pub width_scaling: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: [vec![32], vec![64], vec![128]],
            alpha: 0.9,
            beta: 0.6,
            width_scaling: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Synthetic,
    Idx,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionMode {
    Dirichlet,
    LabelShards,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub source: DataSource,
    // Synthetic source.
    pub n_samples: usize,
    pub classes: usize,
    pub dim: usize,
    pub separation: f64,
    /// Held-out fraction for synthetic data.
    pub test_fraction: f64,
    // IDX source.
    pub train_images: Option<PathBuf>,
    pub train_labels: Option<PathBuf>,
    pub test_images: Option<PathBuf>,
    pub test_labels: Option<PathBuf>,
    pub train_limit: Option<usize>,
    pub test_limit: Option<usize>,
    // Sharding.
    pub partition: PartitionMode,
    pub dirichlet_alpha: f64,
    pub shards_per_client: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: DataSource::Synthetic,
            n_samples: 2000,
            classes: 10,
            dim: 20,
            separation: 4.0,
            test_fraction: 0.2,
            train_images: None,
            train_labels: None,
            test_images: None,
            test_labels: None,
            train_limit: None,
            test_limit: None,
            partition: PartitionMode::Dirichlet,
            dirichlet_alpha: 0.5,
            shards_per_client: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub lr0: f64,
    pub schedule: Schedule,
    pub batch_size: usize,
    pub local_epochs: usize,
    pub prox_mu: f64,
    pub epoch_budget: Option<usize>,
    /// Let the resource monitor move devices between rungs.
    pub adapt: bool,
    pub usage_noise_sd: f64,
    pub thresholds: ResourceThresholds,
    pub demand: DemandTable,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            lr0: t.lr0,
            schedule: t.schedule,
            batch_size: t.batch_size,
            local_epochs: t.local_epochs,
            prox_mu: t.prox_mu,
            epoch_budget: t.epoch_budget,
            adapt: true,
            usage_noise_sd: 0.02,
            thresholds: ResourceThresholds::default(),
            demand: DemandTable::default(),
        }
    }
}

impl TrainingConfig {
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            lr0: self.lr0,
            schedule: self.schedule,
            batch_size: self.batch_size,
            local_epochs: self.local_epochs,
            prox_mu: self.prox_mu,
            epoch_budget: self.epoch_budget,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationConfig {
    pub seed: u64,
    pub rounds: u64,
    pub dropout_p: f64,
    /// Floating point operations per parameter per training sample.
    pub kappa: f64,
    /// Fixed per-round overhead, seconds.
    pub overhead_s: f64,
    /// Weights of task loss, resource imbalance and communication in the
    /// reported objective.
    pub objective_weights: [f64; 3],
    pub early_stop: bool,
    pub convergence_window: usize,
    pub convergence_threshold: f64,
    /// Put every device and cluster on this rung and ignore tiers.
    pub fixed_rung: Option<Rung>,
    pub exec: ExecMode,
    /// Evaluate per-rung test accuracy every this many rounds.
    pub eval_every: u64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            rounds: 250,
            dropout_p: 0.0,
            kappa: 6.0,
            overhead_s: 0.05,
            objective_weights: [0.6, 0.2, 0.2],
            early_stop: false,
            convergence_window: 10,
            convergence_threshold: 1e-3,
            fixed_rung: None,
            exec: ExecMode::default(),
            eval_every: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleConfig {
    pub mu: f64,
    pub l: f64,
    pub sigma2: f64,
    pub dim: usize,
    pub seeds: usize,
    pub horizon: usize,
    /// Initial distance from the optimum.
    pub d: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsConfig {
    pub oracle: OracleConfig,
    #[serde(default = "default_accuracy_constant")]
    pub accuracy_bound_constant: f64,
    #[serde(default = "default_stability_epsilon")]
    pub stability_epsilon: f64,
    #[serde(default = "default_stability_delta")]
    pub stability_delta: f64,
    #[serde(default = "default_stability_t0")]
    pub stability_t0: usize,
    #[serde(default = "default_step_delta")]
    pub step_delta: f64,
    #[serde(default = "default_step_epsilon")]
    pub step_epsilon: f64,
}

fn default_accuracy_constant() -> f64 {
    1.0
}
fn default_stability_epsilon() -> f64 {
    0.1
}
fn default_stability_delta() -> f64 {
    0.05
}
fn default_stability_t0() -> usize {
    100
}
fn default_step_delta() -> f64 {
    1.0
}
fn default_step_epsilon() -> f64 {
    1e-3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Write a checkpoint every this many rounds; 0 disables checkpoints.
    pub checkpoint_every: u64,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            checkpoint_every: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[derive(Default)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub fleet: FleetConfig,
    #[serde(default)]
    pub weights: WeightsConfig,
    #[serde(default)]
    pub benchmark: Workload,
    pub clustering: ClusteringConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default)]
    pub simulation: SimulationConfig,
    #[serde(default)]
    pub diagnostics: Option<DiagnosticsConfig>,
    #[serde(default)]
    pub output: OutputConfig,
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| cfg_err(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads and validates a file. Relative data paths are resolved against
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| cfg_err(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut Option<PathBuf>| {
            if let Some(q) = p.as_mut() {
                if q.is_relative() {
                    *q = base.join(&*q);
                }
            }
        };
        resolve(&mut cfg.data.train_images);
        resolve(&mut cfg.data.train_labels);
        resolve(&mut cfg.data.test_images);
        resolve(&mut cfg.data.test_labels);
        resolve(&mut cfg.fleet.csv);
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let f = &self.fleet;
        if f.n_devices == 0 && f.csv.is_none() {
            return Err(cfg_err("fleet.n_devices must be at least 1"));
        }
        if (f.mix.iter().sum::<f64>() - 1.0).abs() > 1e-9 || f.mix.iter().any(|m| *m < 0.0) {
            return Err(cfg_err("fleet.mix must be non-negative and sum to 1"));
        }
        self.weights.scoring_weights()?;
        if self.benchmark.matmul_dim == 0 || self.benchmark.memory_bytes == 0 || self.benchmark.probe_bytes == 0 {
            return Err(cfg_err("benchmark sizes must be at least 1"));
        }

        let c = &self.clustering;
        if c.k == 0 {
            return Err(cfg_err("clustering.k must be at least 1"));
        }
        if c.tau_max.is_nan() || c.tau_max <= 0.0 || c.sigma2_max.is_nan() || c.sigma2_max < 0.0 {
            return Err(cfg_err(
                "clustering.tau_max must be positive and sigma2_max non-negative",
            ));
        }
        if self.simulation.fixed_rung.is_none() && c.k != 3 {
            return Err(cfg_err("clustering.k must be 3 unless simulation.fixed_rung is set"));
        }

        let m = &self.model;
        if m.alpha < 0.0 || m.beta < 0.0 {
            return Err(cfg_err("model.alpha and model.beta must be non-negative"));
        }

        let d = &self.data;
        match d.source {
            DataSource::Synthetic => {
                if d.n_samples == 0 || d.classes == 0 || d.dim == 0 || !(0.0..1.0).contains(&d.test_fraction) {
                    return Err(cfg_err(
                        "data: synthetic sizes must be positive and test_fraction in [0, 1)",
                    ));
                }
            }
            DataSource::Idx => {
                for (name, p) in [
                    ("train_images", &d.train_images),
                    ("train_labels", &d.train_labels),
                    ("test_images", &d.test_images),
                    ("test_labels", &d.test_labels),
                ] {
                    if p.is_none() {
                        return Err(cfg_err(format!("data.{name} is required when data.source = \"idx\"")));
                    }
                }
            }
        }
        if !(d.dirichlet_alpha > 0.0) {
            return Err(cfg_err("data.dirichlet_alpha must be positive"));
        }

        self.training
            .train_config()
            .validate()
            .map_err(|e| cfg_err(format!("training: {e}")))?;
        self.training
            .thresholds
            .validate()
            .map_err(|e| cfg_err(format!("training.thresholds: {e}")))?;
        if !(self.training.usage_noise_sd >= 0.0) {
            return Err(cfg_err("training.usage_noise_sd must be non-negative"));
        }

        let s = &self.simulation;
        if !(0.0..=1.0).contains(&s.dropout_p) {
            return Err(cfg_err("simulation.dropout_p must lie in [0, 1]"));
        }
        let a = s.objective_weights;
        if a.iter().any(|w| *w < 0.0) || (a.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(cfg_err(format!(
                "simulation.objective_weights must be non-negative and sum to 1 (convex combination), got {a:?}"
            )));
        }
        if s.convergence_window < 2 {
            return Err(cfg_err("simulation.convergence_window must be at least 2"));
        }
        if s.eval_every == 0 {
            return Err(cfg_err("simulation.eval_every must be at least 1"));
        }
        if let Some(diag) = &self.diagnostics {
            let o = &diag.oracle;
            if !(o.mu > 0.0 && o.l >= o.mu && o.sigma2 >= 0.0 && o.dim > 0 && o.seeds > 1 && o.horizon >= 4) {
                return Err(cfg_err(
                    "diagnostics.oracle needs mu > 0, l >= mu, sigma2 >= 0, dim > 0, seeds > 1, horizon >= 4",
                ));
            }
        }
        Ok(())
    }

    /// Hash of everything that determines the run's dynamics. The round count
    /// and output settings are excluded so a run can be extended or resumed.
    pub fn dynamics_hash(&self) -> u64 {
        let mut c = self.clone();
        c.simulation.rounds = 0;
        c.output = OutputConfig::default();
        c.diagnostics = None;
        c.simulation.exec = ExecMode::Sequential;
        let json = serde_json::to_vec(&c).expect("config serializes");
        let digest = Sha256::digest(&json);
        u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
    }

    /// Hash of the full configuration.
    pub fn full_hash(&self) -> u64 {
        let json = serde_json::to_vec(self).expect("config serializes");
        let digest = Sha256::digest(&json);
        u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
    }

    pub fn constraint_params(&self) -> ConstraintParams {
        self.clustering.constraint_params()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_reference_table() {
        let c = ExperimentConfig::default();
        assert_eq!(c.training.lr0, 0.01);
        assert_eq!(c.training.batch_size, 128);
        assert_eq!(c.fleet.n_devices, 10);
        assert_eq!(c.clustering.k, 3);
        assert_eq!(c.simulation.rounds, 250);
        assert_eq!((c.model.alpha, c.model.beta), (0.9, 0.6));
        assert_eq!(c.training.thresholds.cpu, 0.9);
        c.validate().unwrap();
    }

    #[test]
    fn parses_minimal_file_and_rejects_unknown_keys() {
        let c = ExperimentConfig::from_toml_str("[clustering]\ntau_max = inf\nsigma2_max = 10.0\n").unwrap();
        assert!(c.clustering.tau_max.is_infinite());
        assert!(ExperimentConfig::from_toml_str("[fleet]\nbogus = 1\n").is_err());
        assert!(ExperimentConfig::from_toml_str("[clustering]\nk = 3\n").is_err());
    }

    #[test]
    fn rejects_bad_weight_sums() {
        let err = ExperimentConfig::from_toml_str(
            "[clustering]\ntau_max = 1.0\nsigma2_max = 1.0\n[simulation]\nobjective_weights = [0.5, 0.3, 0.3]\n",
        )
        .unwrap_err();
        assert!(err.to_string().contains("sum to 1"));
        let err = ExperimentConfig::from_toml_str(
            "[clustering]\ntau_max = 1.0\nsigma2_max = 1.0\n[weights]\ncompute = 0.6\n",
        )
        .unwrap_err();
        assert!(err.to_string().contains("sum to 1"));
    }

    #[test]
    fn dynamics_hash_ignores_round_count() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        b.simulation.rounds = 7;
        b.output.dir = PathBuf::from("elsewhere");
        assert_eq!(a.dynamics_hash(), b.dynamics_hash());
        b.simulation.seed = 1;
        assert_ne!(a.dynamics_hash(), b.dynamics_hash());
    }
}
