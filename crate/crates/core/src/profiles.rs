//! Device resource profiles, simulated benchmarking and capability scoring.
//!
//! A profile groups compute `[cores, GHz, gpu]`, memory `[RAM GB, storage GB]`
//! and network `[bandwidth Mbit/s, latency ms, reliability]`. Benchmarks are
//! evaluated from a closed-form cost model rather than measured, and scores are
//! weighted sums of min-max normalized features over the current fleet.

use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, invalid, Result};
use crate::exec::ExecMode;
use crate::rng::{self, purpose};

/// Throughput multiplier applied to a device that has a GPU.
pub const GPU_MULTIPLIER: f64 = 8.0;
/// Memory streaming throughput per installed GB of RAM, bytes/s.
pub const MEMORY_THROUGHPUT_PER_GB: f64 = 1.0e9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResourceProfile {
    pub cores: f64,
    pub ghz: f64,
    pub gpu: bool,
    pub ram_gb: f64,
    pub storage_gb: f64,
    pub bandwidth_mbps: f64,
    pub latency_ms: f64,
    pub reliability: f64,
}

impl ResourceProfile {
    /// A representative mid-range device used in documentation and tests.
    pub fn canonical_mid() -> Self {
        Self {
            cores: 4.0,
            ghz: 2.5,
            gpu: false,
            ram_gb: 3.0,
            storage_gb: 32.0,
            bandwidth_mbps: 20.0,
            latency_ms: 40.0,
            reliability: 0.95,
        }
    }

    pub fn compute(&self) -> [f64; 3] {
        [self.cores, self.ghz, if self.gpu { 1.0 } else { 0.0 }]
    }

    pub fn memory(&self) -> [f64; 2] {
        [self.ram_gb, self.storage_gb]
    }

    pub fn network(&self) -> [f64; 3] {
        [self.bandwidth_mbps, self.latency_ms, self.reliability]
    }

    /// Checks the profile invariants. Quantities used as divisors by the cost
    /// model (cores, clock, RAM, bandwidth, reliability) must be positive.
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.cores,
            self.ghz,
            self.ram_gb,
            self.storage_gb,
            self.bandwidth_mbps,
            self.latency_ms,
            self.reliability,
        ];
        if all.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(invalid(format!("profile has negative or non-finite entry: {self:?}")));
        }
        if self.cores <= 0.0 || self.ghz <= 0.0 || self.ram_gb <= 0.0 || self.bandwidth_mbps <= 0.0 {
            return Err(invalid("cores, ghz, ram and bandwidth must be positive"));
        }
        if !(self.reliability > 0.0 && self.reliability <= 1.0) {
            return Err(invalid("reliability must lie in (0, 1]"));
        }
        Ok(())
    }

    /// Sustained floating point throughput, FLOP/s.
    pub fn effective_flops(&self) -> f64 {
        let gpu = if self.gpu { GPU_MULTIPLIER } else { 1.0 };
        self.cores * self.ghz * 1.0e9 * gpu
    }

    /// Compute capacity in core-GHz, the unit of the per-rung demand table.
    pub fn cpu_capacity(&self) -> f64 {
        let gpu = if self.gpu { GPU_MULTIPLIER } else { 1.0 };
        self.cores * self.ghz * gpu
    }

    pub fn bandwidth_bytes_per_s(&self) -> f64 {
        self.bandwidth_mbps * 1.0e6 / 8.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Archetype {
    High,
    Mid,
    Low,
}

impl Archetype {
    pub const ALL: [Archetype; 3] = [Archetype::High, Archetype::Mid, Archetype::Low];
}

/// (mean, sd, lo, hi) of a truncated Gaussian.
type Spec = (f64, f64, f64, f64);

struct ArchetypeSpec {
    cores: Spec,
    ghz: Spec,
    gpu: bool,
    ram: Spec,
    storage: Spec,
    bandwidth: Spec,
    latency: Spec,
    reliability: Spec,
}

fn archetype_spec(a: Archetype) -> ArchetypeSpec {
    match a {
        // GPU-equipped, at least 8 GB of RAM.
        Archetype::High => ArchetypeSpec {
            cores: (8.0, 2.0, 4.0, 16.0),
            ghz: (3.2, 0.3, 2.5, 4.0),
            gpu: true,
            ram: (16.0, 4.0, 8.0, 64.0),
            storage: (256.0, 64.0, 64.0, 1024.0),
            bandwidth: (100.0, 20.0, 50.0, 1000.0),
            latency: (10.0, 3.0, 1.0, 30.0),
            reliability: (0.99, 0.005, 0.95, 1.0),
        },
        // RAM between 2 and 4 GB.
        Archetype::Mid => ArchetypeSpec {
            cores: (4.0, 1.0, 2.0, 8.0),
            ghz: (2.0, 0.3, 1.4, 2.8),
            gpu: false,
            ram: (3.0, 0.5, 2.0, 4.0),
            storage: (32.0, 8.0, 8.0, 128.0),
            bandwidth: (20.0, 5.0, 5.0, 60.0),
            latency: (40.0, 10.0, 10.0, 100.0),
            reliability: (0.95, 0.02, 0.85, 1.0),
        },
        Archetype::Low => ArchetypeSpec {
            cores: (1.5, 0.5, 1.0, 2.0),
            ghz: (1.0, 0.2, 0.6, 1.4),
            gpu: false,
            ram: (1.0, 0.3, 0.25, 1.9),
            storage: (8.0, 2.0, 2.0, 16.0),
            bandwidth: (2.0, 0.5, 0.5, 5.0),
            latency: (120.0, 30.0, 50.0, 300.0),
            reliability: (0.85, 0.05, 0.6, 0.95),
        },
    }
}

fn truncated<R: Rng>(rng: &mut R, (mean, sd, lo, hi): Spec) -> f64 {
    let normal = Normal::new(mean, sd).expect("valid archetype spec");
    for _ in 0..64 {
        let v = normal.sample(rng);
        if (lo..=hi).contains(&v) {
            return v;
        }
    }
    mean.clamp(lo, hi)
}

fn sample_profile<R: Rng>(rng: &mut R, a: Archetype) -> ResourceProfile {
    let s = archetype_spec(a);
    ResourceProfile {
        cores: truncated(rng, s.cores).round().max(1.0),
        ghz: truncated(rng, s.ghz),
        gpu: s.gpu,
        ram_gb: truncated(rng, s.ram),
        storage_gb: truncated(rng, s.storage),
        bandwidth_mbps: truncated(rng, s.bandwidth),
        latency_ms: truncated(rng, s.latency),
        reliability: truncated(rng, s.reliability),
    }
}

/// Splits `n` into per-archetype counts: floors first, then the remainder goes
/// to the largest fractional parts (lowest index on ties).
pub fn tier_quotas(n: usize, mix: [f64; 3]) -> Result<[usize; 3]> {
    if mix.iter().any(|f| !f.is_finite() || *f < 0.0) || (mix.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(invalid(format!("tier mix {mix:?} must be non-negative and sum to 1")));
    }
    let exact: Vec<f64> = mix.iter().map(|f| f * n as f64).collect();
    let mut counts = [0usize; 3];
    for (c, e) in counts.iter_mut().zip(&exact) {
        *c = e.floor() as usize;
    }
    let mut remaining = n - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if remaining == 0 {
            break;
        }
        if mix[i] > 0.0 {
            counts[i] += 1;
            remaining -= 1;
        }
    }
    Ok(counts)
}

/// Generates a fleet and returns each device's ground-truth archetype.
pub fn generate_fleet_with_archetypes(
    n: usize,
    mix: [f64; 3],
    seed: u64,
) -> Result<(Vec<ResourceProfile>, Vec<Archetype>)> {
    if n == 0 {
        return Err(invalid("fleet size must be at least 1"));
    }
    let counts = tier_quotas(n, mix)?;
    let mut kinds: Vec<Archetype> = Archetype::ALL
        .iter()
        .zip(counts)
        .flat_map(|(&a, c)| std::iter::repeat_n(a, c))
        .collect();
    kinds.shuffle(&mut rng::stream(seed, &[purpose::FLEET_ORDER]));
    let profiles = kinds
        .iter()
        .enumerate()
        .map(|(i, &a)| sample_profile(&mut rng::stream(seed, &[purpose::FLEET_DEVICE, i as u64]), a))
        .collect();
    Ok((profiles, kinds))
}

/// Draws `n` profiles from the three archetypes in proportions `mix`.
pub fn generate_fleet(n: usize, mix: [f64; 3], seed: u64) -> Result<Vec<ResourceProfile>> {
    generate_fleet_with_archetypes(n, mix, seed).map(|(p, _)| p)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Workload {
    pub matmul_dim: u32,
    pub memory_bytes: u64,
    pub probe_bytes: u64,
}

impl Default for Workload {
    fn default() -> Self {
        Self {
            matmul_dim: 64,
            memory_bytes: 64 << 20,
            probe_bytes: 64 << 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkResult {
    pub matmul_time: f64,
    pub memory_pass_time: f64,
    pub roundtrip_time: f64,
}

/// Evaluates the benchmark cost model:
///
/// * `matmul_time = 2·dim³ / effective_flops`
/// * `memory_pass_time = memory_bytes / (ram_gb · 1e9)`
/// * `roundtrip_time = (2·latency + 2·8·probe_bytes / bandwidth_bits) / reliability`
pub fn run_benchmark(profile: &ResourceProfile, workload: &Workload) -> Result<BenchmarkResult> {
    profile.validate()?;
    if workload.matmul_dim == 0 || workload.memory_bytes == 0 || workload.probe_bytes == 0 {
        return Err(invalid("workload dimensions must be at least 1"));
    }
    let dim = workload.matmul_dim as f64;
    let matmul_time = 2.0 * dim * dim * dim / profile.effective_flops();
    let memory_pass_time = workload.memory_bytes as f64 / (profile.ram_gb * MEMORY_THROUGHPUT_PER_GB);
    let transfer = 2.0 * 8.0 * workload.probe_bytes as f64 / (profile.bandwidth_mbps * 1.0e6);
    let roundtrip_time = (2.0 * profile.latency_ms / 1.0e3 + transfer) / profile.reliability;
    Ok(BenchmarkResult {
        matmul_time,
        memory_pass_time,
        roundtrip_time,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Category {
    Compute,
    Memory,
    Network,
}

/// One scored feature dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Feature {
    pub name: &'static str,
    pub category: Category,
    pub lower_is_better: bool,
}

const PROFILE_FEATURES: [Feature; 8] = [
    Feature {
        name: "cores",
        category: Category::Compute,
        lower_is_better: false,
    },
    Feature {
        name: "ghz",
        category: Category::Compute,
        lower_is_better: false,
    },
    Feature {
        name: "gpu",
        category: Category::Compute,
        lower_is_better: false,
    },
    Feature {
        name: "ram",
        category: Category::Memory,
        lower_is_better: false,
    },
    Feature {
        name: "storage",
        category: Category::Memory,
        lower_is_better: false,
    },
    Feature {
        name: "bw",
        category: Category::Network,
        lower_is_better: false,
    },
    Feature {
        name: "lat",
        category: Category::Network,
        lower_is_better: true,
    },
    Feature {
        name: "rel",
        category: Category::Network,
        lower_is_better: false,
    },
];

const BENCHMARK_FEATURES: [Feature; 3] = [
    Feature {
        name: "matmul_time",
        category: Category::Compute,
        lower_is_better: true,
    },
    Feature {
        name: "memory_pass_time",
        category: Category::Memory,
        lower_is_better: true,
    },
    Feature {
        name: "roundtrip_time",
        category: Category::Network,
        lower_is_better: true,
    },
];

/// Feature layout: the eight profile dimensions, then the three benchmark
/// times when `include_benchmark` is set.
pub fn feature_layout(include_benchmark: bool) -> Vec<Feature> {
    let mut v = PROFILE_FEATURES.to_vec();
    if include_benchmark {
        v.extend_from_slice(&BENCHMARK_FEATURES);
    }
    v
}

pub fn raw_features(profile: &ResourceProfile, bench: Option<&BenchmarkResult>) -> Vec<f64> {
    let mut v = Vec::with_capacity(11);
    v.extend_from_slice(&profile.compute());
    v.extend_from_slice(&profile.memory());
    v.extend_from_slice(&profile.network());
    if let Some(b) = bench {
        v.extend_from_slice(&[b.matmul_time, b.memory_pass_time, b.roundtrip_time]);
    }
    v
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoringWeights {
    weights: Vec<f64>,
}

impl ScoringWeights {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() || weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(invalid("weights must be non-negative and finite"));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(invalid(format!("weights sum to {sum}, expected 1")));
        }
        Ok(Self { weights })
    }

    /// Spreads per-category weights evenly over that category's dimensions.
    pub fn from_categories(compute: f64, memory: f64, network: f64, layout: &[Feature]) -> Result<Self> {
        let count = |c: Category| layout.iter().filter(|f| f.category == c).count() as f64;
        let per = |c: Category| match c {
            Category::Compute => compute / count(c),
            Category::Memory => memory / count(c),
            Category::Network => network / count(c),
        };
        Self::new(layout.iter().map(|f| per(f.category)).collect())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// Per-dimension min-max scaling over the fleet. Lower-is-better dimensions
/// are inverted; constant dimensions map to 0.5.
pub fn normalize_features(raw: &[Vec<f64>], lower_is_better: &[bool]) -> Result<Vec<Vec<f64>>> {
    let first = raw.first().ok_or_else(|| invalid("cannot normalize an empty fleet"))?;
    let dims = first.len();
    check_dim(dims, lower_is_better.len())?;
    for row in raw {
        check_dim(dims, row.len())?;
    }
    let mut out = vec![vec![0.0; dims]; raw.len()];
    for j in 0..dims {
        let (lo, hi) = raw.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| {
            (lo.min(r[j]), hi.max(r[j]))
        });
        for (o, r) in out.iter_mut().zip(raw) {
            o[j] = if hi == lo {
                0.5
            } else if lower_is_better[j] {
                (hi - r[j]) / (hi - lo)
            } else {
                (r[j] - lo) / (hi - lo)
            };
        }
    }
    Ok(out)
}

/// Weighted capability score `Σ w_j · feature_j`.
pub fn compute_score(features: &[f64], weights: &ScoringWeights) -> Result<f64> {
    check_dim(weights.len(), features.len())?;
    Ok(features.iter().zip(weights.as_slice()).map(|(f, w)| f * w).sum())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceRecord {
    pub id: usize,
    pub profile: ResourceProfile,
    pub benchmark: BenchmarkResult,
    pub normalized_features: Vec<f64>,
    pub score: f64,
}

/// Benchmarks every device, normalizes features over the fleet and scores.
/// Ids are assigned densely in input order.
pub fn build_records(
    profiles: &[ResourceProfile],
    workload: &Workload,
    weights: &ScoringWeights,
    include_benchmark: bool,
    exec: ExecMode,
) -> Result<Vec<DeviceRecord>> {
    let layout = feature_layout(include_benchmark);
    check_dim(layout.len(), weights.len())?;
    let benches = exec
        .map(profiles, |p| run_benchmark(p, workload))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let raw: Vec<Vec<f64>> = profiles
        .iter()
        .zip(&benches)
        .map(|(p, b)| raw_features(p, include_benchmark.then_some(b)))
        .collect();
    let lower: Vec<bool> = layout.iter().map(|f| f.lower_is_better).collect();
    let normalized = normalize_features(&raw, &lower)?;
    profiles
        .iter()
        .zip(benches)
        .zip(normalized)
        .enumerate()
        .map(|(id, ((p, b), f))| {
            let score = compute_score(&f, weights)?;
            Ok(DeviceRecord {
                id,
                profile: p.clone(),
                benchmark: b,
                normalized_features: f,
                score,
            })
        })
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct FleetRow {
    id: usize,
    cores: f64,
    ghz: f64,
    gpu: u8,
    ram: f64,
    storage: f64,
    bw: f64,
    lat: f64,
    rel: f64,
}

/// Writes `id,cores,ghz,gpu,ram,storage,bw,lat,rel` rows.
pub fn write_fleet_csv<W: Write>(w: W, profiles: &[ResourceProfile]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for (id, p) in profiles.iter().enumerate() {
        out.serialize(FleetRow {
            id,
            cores: p.cores,
            ghz: p.ghz,
            gpu: p.gpu as u8,
            ram: p.ram_gb,
            storage: p.storage_gb,
            bw: p.bandwidth_mbps,
            lat: p.latency_ms,
            rel: p.reliability,
        })?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a fleet CSV; `#` lines are comments. Rows must carry ids `0..n` in order.
pub fn read_fleet_csv<R: Read>(r: R) -> Result<Vec<ResourceProfile>> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(r);
    let mut out = Vec::new();
    for (i, row) in rdr.deserialize::<FleetRow>().enumerate() {
        let row = row?;
        if row.id != i {
            return Err(invalid(format!("fleet csv row {i} has id {}", row.id)));
        }
        if row.gpu > 1 {
            return Err(invalid(format!("gpu flag must be 0 or 1, got {}", row.gpu)));
        }
        let p = ResourceProfile {
            cores: row.cores,
            ghz: row.ghz,
            gpu: row.gpu == 1,
            ram_gb: row.ram,
            storage_gb: row.storage,
            bandwidth_mbps: row.bw,
            latency_ms: row.lat,
            reliability: row.rel,
        };
        p.validate()?;
        out.push(p);
    }
    Ok(out)
}
