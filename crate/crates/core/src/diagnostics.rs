//! Analytical checks and reports: communication accounting, complexity
//! estimates, convergence fits, a quadratic Monte-Carlo oracle and
//! classification metrics.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::config::OracleConfig;
use crate::data::Dataset;
use crate::error::{check_dim, invalid, Result};
use crate::exec::ExecMode;
use crate::models::{loss_and_grad, predict_proba, NestedModelFamily, ParamVector, Rung};
use crate::rng::{self, purpose};
use crate::simulator::{RoundLog, BYTES_PER_PARAM};

// ---------------------------------------------------------------------------
// Communication

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommReport {
    pub per_round: Vec<u64>,
    pub total: u64,
    pub total_fedavg: u64,
    pub reduction: f64,
}

/// Recomputes transferred bytes from the logged rung history: the download
/// at the starting rung plus the upload at the final rung of every active
/// device. The baseline sends the Complex model both ways.
pub fn comm_cost(family: &NestedModelFamily, logs: &[RoundLog]) -> Result<CommReport> {
    if logs.is_empty() {
        return Err(invalid("comm_cost needs at least one round"));
    }
    let full = family.param_count(Rung::Complex) as u64;
    let mut per_round = Vec::with_capacity(logs.len());
    let mut total_fedavg = 0;
    for l in logs {
        per_round.push(
            l.devices
                .iter()
                .map(|d| BYTES_PER_PARAM * (family.param_count(d.rung_start) + family.param_count(d.rung_end)) as u64)
                .sum(),
        );
        total_fedavg += 2 * BYTES_PER_PARAM * full * l.devices.len() as u64;
    }
    let total: u64 = per_round.iter().sum();
    let reduction = if total_fedavg == 0 {
        0.0
    } else {
        1.0 - total as f64 / total_fedavg as f64
    };
    Ok(CommReport {
        per_round,
        total,
        total_fedavg,
        reduction,
    })
}

// ---------------------------------------------------------------------------
// Complexity

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComplexityEstimate {
    pub t_bench: f64,
    pub t_clust: f64,
    pub t_train: f64,
    pub s_device: f64,
    pub s_global: f64,
    pub comm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComplexityInputs<'a> {
    pub n: usize,
    pub k: usize,
    /// Lloyd iterations.
    pub t: usize,
    pub epochs: usize,
    /// Samples per device.
    pub m: usize,
    pub p: usize,
    /// Bytes per second of bandwidth.
    pub b: f64,
    /// Benchmark problem sizes.
    pub s: &'a [f64],
}

/// Evaluates the asymptotic cost formulas with unit constants.
pub fn complexity_estimates(x: &ComplexityInputs) -> Result<ComplexityEstimate> {
    if x.n == 0 || x.k == 0 || x.p == 0 || !(x.b > 0.0) || x.s.iter().any(|&s| s < 0.0) {
        return Err(invalid("complexity inputs must be positive"));
    }
    let n = x.n as f64;
    let p = x.p as f64;
    let nlogn = n * n.ln();
    Ok(ComplexityEstimate {
        t_bench: nlogn + x.s.iter().map(|s| s.powi(3)).sum::<f64>(),
        t_clust: n * x.k as f64 * x.t as f64,
        t_train: n * (x.epochs * x.m) as f64 * p + nlogn,
        s_device: p + p.sqrt(),
        s_global: n * p + x.k as f64 * p.sqrt(),
        comm: n * x.epochs as f64 * p / x.b,
    })
}

// ---------------------------------------------------------------------------
// Convergence fits

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceFit {
    /// Coefficient of `1/T`.
    pub c_hat: f64,
    /// Coefficient of `σ²/√T`.
    pub d_hat: f64,
    /// Root-mean-square residual.
    pub residual: f64,
    pub non_convergent: bool,
}

impl ConvergenceFit {
    pub fn envelope(&self, t: f64, sigma2: f64) -> f64 {
        self.c_hat / t + self.d_hat * sigma2 / t.sqrt()
    }
}

fn basis(t: usize) -> (f64, f64) {
    let t = t as f64;
    (1.0 / t, 1.0 / t.sqrt())
}

fn rms_residual(g: &[f64], a: f64, b: f64) -> f64 {
    let ss: f64 = g
        .iter()
        .enumerate()
        .map(|(i, &y)| {
            let (x1, x2) = basis(i + 1);
            (y - a * x1 - b * x2).powi(2)
        })
        .sum();
    (ss / g.len() as f64).sqrt()
}

/// Non-negative least squares of `g_T ≈ a/T + b/√T` over `T = 1..`.
/// Returns `(a, b)`.
fn nnls2(g: &[f64]) -> (f64, f64) {
    let (mut s11, mut s12, mut s22, mut y1, mut y2) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (i, &y) in g.iter().enumerate() {
        let (x1, x2) = basis(i + 1);
        s11 += x1 * x1;
        s12 += x1 * x2;
        s22 += x2 * x2;
        y1 += x1 * y;
        y2 += x2 * y;
    }
    let det = s11 * s22 - s12 * s12;
    let mut candidates = vec![(0.0, 0.0), ((y1 / s11).max(0.0), 0.0), (0.0, (y2 / s22).max(0.0))];
    if det.abs() > 1e-300 {
        let a = (s22 * y1 - s12 * y2) / det;
        let b = (s11 * y2 - s12 * y1) / det;
        if a >= 0.0 && b >= 0.0 {
            candidates.push((a, b));
        }
    }
    candidates
        .into_iter()
        .min_by(|p, q| rms_residual(g, p.0, p.1).total_cmp(&rms_residual(g, q.0, q.1)))
        .unwrap()
}

/// Least-squares fit of `g_T ≈ C/T + D σ²/√T`.
///
/// The fit is flagged non-convergent when the residual exceeds 10% of the
/// history's RMS or the last quarter does not sit below the first.
pub fn fit_convergence(history: &[f64], sigma2: f64) -> Result<ConvergenceFit> {
    if history.len() < 4 {
        return Err(invalid("convergence fit needs at least 4 points"));
    }
    if history.iter().any(|g| !g.is_finite()) {
        return Err(invalid("history contains non-finite values"));
    }
    let (a, b) = nnls2(history);
    let residual = rms_residual(history, a, b);
    let rms = (history.iter().map(|g| g * g).sum::<f64>() / history.len() as f64).sqrt();
    let q = history.len() / 4;
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    let decreasing = mean(&history[history.len() - q..]) < mean(&history[..q]);
    Ok(ConvergenceFit {
        c_hat: a,
        d_hat: if sigma2 > 0.0 { b / sigma2 } else { b },
        residual,
        non_convergent: residual > 0.1 * rms || !decreasing,
    })
}

/// Tightest envelope `C/T + b/√T` (smallest area over the fitted range)
/// lying on or above `history[T-1]` for every `T ≥ t_min`.
///
/// For fixed `C` the smallest feasible `b` is `max_T (g_T − C/T)√T`, a convex
/// function of `C`, so the area is convex and a ternary search suffices.
pub fn fit_envelope(history: &[f64], t_min: usize, sigma2: f64) -> Result<ConvergenceFit> {
    let t_min = t_min.max(1);
    if history.len() < t_min.max(4) {
        return Err(invalid("history shorter than the envelope range"));
    }
    let range = t_min..=history.len();
    let b_of = |c: f64| {
        range
            .clone()
            .map(|t| (history[t - 1] - c / t as f64) * (t as f64).sqrt())
            .fold(0.0f64, f64::max)
    };
    let area = |c: f64| {
        let b = b_of(c);
        range.clone().map(|t| c / t as f64 + b / (t as f64).sqrt()).sum::<f64>()
    };
    let (mut lo, mut hi) = (
        0.0,
        range
            .clone()
            .map(|t| history[t - 1].max(0.0) * t as f64)
            .fold(0.0, f64::max),
    );
    for _ in 0..200 {
        let m1 = lo + (hi - lo) / 3.0;
        let m2 = hi - (hi - lo) / 3.0;
        if area(m1) <= area(m2) {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    let c = 0.5 * (lo + hi);
    let b = b_of(c);
    let tail = &history[t_min - 1..];
    let residual = (tail
        .iter()
        .enumerate()
        .map(|(i, &y)| {
            let t = (i + t_min) as f64;
            (c / t + b / t.sqrt() - y).powi(2)
        })
        .sum::<f64>()
        / tail.len() as f64)
        .sqrt();
    Ok(ConvergenceFit {
        c_hat: c,
        d_hat: if sigma2 > 0.0 { b / sigma2 } else { b },
        residual,
        non_convergent: false,
    })
}

// ---------------------------------------------------------------------------
// Quadratic oracle

/// `f(w) = ½ Σ λ_j w_j²` with eigenvalues spread evenly over `[μ, L]`,
/// minimiser `w* = 0`, and additive gradient noise with `E‖ξ‖² = σ²`.
#[derive(Debug, Clone, PartialEq)]
pub struct Quadratic {
    pub eigen: Vec<f64>,
    pub sigma2: f64,
    /// Starting point, at distance `d` from the optimum.
    pub w0: Vec<f64>,
}

impl Quadratic {
    pub fn from_config(o: &OracleConfig) -> Result<Self> {
        if o.dim == 0 || !(o.mu > 0.0) || o.l < o.mu || o.sigma2 < 0.0 || o.d < 0.0 {
            return Err(invalid("oracle needs dim ≥ 1, 0 < mu ≤ l, sigma2 ≥ 0, d ≥ 0"));
        }
        let eigen = (0..o.dim)
            .map(|j| {
                if o.dim == 1 {
                    o.mu
                } else {
                    o.mu + (o.l - o.mu) * j as f64 / (o.dim - 1) as f64
                }
            })
            .collect();
        Ok(Self {
            eigen,
            sigma2: o.sigma2,
            w0: vec![o.d / (o.dim as f64).sqrt(); o.dim],
        })
    }

    pub fn mu(&self) -> f64 {
        self.eigen.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn l(&self) -> f64 {
        self.eigen.iter().copied().fold(0.0, f64::max)
    }

    pub fn value(&self, w: &[f64]) -> f64 {
        0.5 * self.eigen.iter().zip(w).map(|(l, x)| l * x * x).sum::<f64>()
    }

    pub fn grad_sq(&self, w: &[f64]) -> f64 {
        self.eigen.iter().zip(w).map(|(l, x)| (l * x).powi(2)).sum()
    }
}

/// Per-seed trajectories of SGD on the quadratic. Row `s`, column `t`
/// holds the value at iterate `w_t`, `t = 0..=horizon`.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleTrace {
    /// `‖w_t − w*‖²`.
    pub v: Vec<Vec<f64>>,
    /// `f(w_t) − f*`.
    pub gap: Vec<Vec<f64>>,
    /// `‖∇F(w_t)‖²`.
    pub grad_sq: Vec<Vec<f64>>,
    /// Step sizes `η_1..=η_horizon`; `w_t = w_{t-1} − η_t g_{t-1}`.
    pub etas: Vec<f64>,
}

/// Mean and standard error per column.
pub fn column_stats(rows: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let n = rows.len() as f64;
    let cols = rows.first().map_or(0, Vec::len);
    let mut mean = vec![0.0; cols];
    let mut se = vec![0.0; cols];
    for c in 0..cols {
        let m = rows.iter().map(|r| r[c]).sum::<f64>() / n;
        let var = if rows.len() > 1 {
            rows.iter().map(|r| (r[c] - m).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        mean[c] = m;
        se[c] = (var / n).sqrt();
    }
    (mean, se)
}

/// Runs `seeds` independent SGD trajectories of `horizon` steps.
pub fn simulate_quadratic(
    q: &Quadratic,
    etas: &[f64],
    seeds: usize,
    start_at_optimum: bool,
    seed: u64,
    exec: ExecMode,
) -> Result<OracleTrace> {
    if seeds == 0 {
        return Err(invalid("need at least one seed"));
    }
    if etas.iter().any(|e| !(*e > 0.0) || !e.is_finite()) {
        return Err(invalid("step sizes must be positive"));
    }
    let dim = q.eigen.len();
    let noise_sd = (q.sigma2 / dim as f64).sqrt();
    let runs = exec.map_range(seeds, |s| {
        let mut r = rng::stream(seed, &[purpose::ORACLE, s as u64]);
        let mut w = if start_at_optimum { vec![0.0; dim] } else { q.w0.clone() };
        let mut v = Vec::with_capacity(etas.len() + 1);
        let mut gap = Vec::with_capacity(etas.len() + 1);
        let mut gs = Vec::with_capacity(etas.len() + 1);
        let record = |w: &[f64], v: &mut Vec<f64>, gap: &mut Vec<f64>, gs: &mut Vec<f64>| {
            v.push(w.iter().map(|x| x * x).sum());
            gap.push(q.value(w));
            gs.push(q.grad_sq(w));
        };
        record(&w, &mut v, &mut gap, &mut gs);
        for &eta in etas {
            for (x, l) in w.iter_mut().zip(&q.eigen) {
                let xi: f64 = if noise_sd > 0.0 {
                    noise_sd * r.sample::<f64, _>(StandardNormal)
                } else {
                    0.0
                };
                *x -= eta * (l * *x + xi);
            }
            record(&w, &mut v, &mut gap, &mut gs);
        }
        (v, gap, gs)
    });
    let mut t = OracleTrace {
        v: vec![],
        gap: vec![],
        grad_sq: vec![],
        etas: etas.to_vec(),
    };
    for (v, g, s) in runs {
        t.v.push(v);
        t.gap.push(g);
        t.grad_sq.push(s);
    }
    Ok(t)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovStep {
    /// Index of the iterate being bounded.
    pub t: usize,
    pub v_mean: f64,
    pub v_se: f64,
    /// `(1 − 2μη_t) E[V_{t-1}] + η_t² σ²`.
    pub bound: f64,
    /// `max_λ (1 − λη_t)² E[V_{t-1}] + η_t² σ²`, the exact one-step recursion
    /// for the quadratic.
    pub corrected_bound: f64,
    pub holds: bool,
    pub corrected_holds: bool,
    /// `V_t ≤ V_{t-1}` on the mean trajectory.
    pub decreased: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovReport {
    pub steps: Vec<LyapunovStep>,
    pub violations: usize,
    pub first_violation: Option<usize>,
    pub corrected_violations: usize,
    pub final_gap_mean: f64,
    pub final_gap_se: f64,
    /// `L D² ln T / (2T) + σ²/(2√T)`.
    pub final_gap_bound: f64,
    pub final_gap_holds: bool,
}

/// Checks the mean Lyapunov trajectory against the one-step recursion, with
/// a band of `se_band` standard errors.
pub fn lyapunov_check(q: &Quadratic, trace: &OracleTrace, d: f64, se_band: f64) -> Result<LyapunovReport> {
    let (v_mean, v_se) = column_stats(&trace.v);
    check_dim(trace.etas.len() + 1, v_mean.len())?;
    let (mu, l) = (q.mu(), q.l());
    let mut steps = Vec::with_capacity(trace.etas.len());
    for (i, &eta) in trace.etas.iter().enumerate() {
        let t = i + 1;
        let prev = v_mean[i];
        let noise = eta * eta * q.sigma2;
        let bound = (1.0 - 2.0 * mu * eta) * prev + noise;
        let rho = (1.0 - mu * eta).powi(2).max((1.0 - l * eta).powi(2));
        let corrected_bound = rho * prev + noise;
        let band = se_band * v_se[t] + 1e-12 * prev.abs().max(1.0);
        steps.push(LyapunovStep {
            t,
            v_mean: v_mean[t],
            v_se: v_se[t],
            bound,
            corrected_bound,
            holds: v_mean[t] <= bound + band,
            corrected_holds: v_mean[t] <= corrected_bound + band,
            decreased: v_mean[t] <= prev,
        });
    }
    let (gap_mean, gap_se) = column_stats(&trace.gap);
    let horizon = trace.etas.len().max(1) as f64;
    let final_gap_bound = l * d * d * horizon.ln() / (2.0 * horizon) + q.sigma2 / (2.0 * horizon.sqrt());
    let final_gap_mean = *gap_mean.last().unwrap();
    Ok(LyapunovReport {
        violations: steps.iter().filter(|s| !s.holds).count(),
        first_violation: steps.iter().find(|s| !s.holds).map(|s| s.t),
        corrected_violations: steps.iter().filter(|s| !s.corrected_holds).count(),
        steps,
        final_gap_mean,
        final_gap_se: *gap_se.last().unwrap(),
        final_gap_bound,
        final_gap_holds: final_gap_mean <= final_gap_bound,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TelescopingReport {
    pub mean: f64,
    pub se: f64,
    /// `2(F(w_0) − F*)/(ηT) + Lησ²/2`.
    pub bound: f64,
    pub holds: bool,
    /// Same with `Lησ²`, which is what summing the descent inequality gives
    /// for `η ≤ 1/L`.
    pub corrected_bound: f64,
    pub corrected_holds: bool,
}

/// Averaged squared gradient norm over the first `T` iterates of a
/// constant-step trace against the telescoping bound.
pub fn telescoping_check(q: &Quadratic, trace: &OracleTrace, se_band: f64) -> Result<TelescopingReport> {
    let eta = *trace.etas.first().ok_or_else(|| invalid("empty trace"))?;
    if trace.etas.iter().any(|&e| e != eta) {
        return Err(invalid("telescoping check needs a constant step size"));
    }
    let t = trace.etas.len();
    let per_seed: Vec<Vec<f64>> = trace
        .grad_sq
        .iter()
        .map(|g| vec![g[..t].iter().sum::<f64>() / t as f64])
        .collect();
    let (m, se) = column_stats(&per_seed);
    let f0 = trace.gap.first().map_or(0.0, |g| g[0]);
    let bound = 2.0 * f0 / (eta * t as f64) + q.l() * eta * q.sigma2 / 2.0;
    let corrected_bound = bound + q.l() * eta * q.sigma2 / 2.0;
    let band = se_band * se[0];
    Ok(TelescopingReport {
        mean: m[0],
        se: se[0],
        bound,
        holds: m[0] <= bound + band,
        corrected_bound,
        corrected_holds: m[0] <= corrected_bound + band,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub epsilon: f64,
    pub delta: f64,
    pub t0: usize,
    /// Fraction of seeds with `‖w_t − w*‖ ≤ ε` for every `t ≥ T₀`.
    pub empirical_prob: f64,
    pub meets_target: bool,
}

pub fn stability_report(trace: &OracleTrace, epsilon: f64, delta: f64, t0: usize) -> Result<StabilityReport> {
    if trace.v.is_empty() {
        return Err(invalid("empty trace"));
    }
    let ok = trace
        .v
        .iter()
        .filter(|v| v.iter().skip(t0).all(|&x| x.sqrt() <= epsilon))
        .count();
    let empirical_prob = ok as f64 / trace.v.len() as f64;
    Ok(StabilityReport {
        epsilon,
        delta,
        t0,
        empirical_prob,
        meets_target: empirical_prob >= 1.0 - delta,
    })
}

// ---------------------------------------------------------------------------
// Gradient variance

/// Mean squared deviation of per-device gradients from their mean.
pub fn variance_estimate(grads: &[Vec<f64>]) -> Result<f64> {
    if grads.len() < 2 {
        return Err(invalid("variance needs at least two devices"));
    }
    let dim = grads[0].len();
    for g in grads {
        check_dim(dim, g.len())?;
    }
    let n = grads.len() as f64;
    let mean: Vec<f64> = (0..dim).map(|j| grads.iter().map(|g| g[j]).sum::<f64>() / n).collect();
    Ok(grads
        .iter()
        .map(|g| g.iter().zip(&mean).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
        .sum::<f64>()
        / n)
}

/// Full-shard gradient of every device at the common parameters `params`.
pub fn device_gradients(
    family: &NestedModelFamily,
    rung: Rung,
    params: &ParamVector,
    data: &Dataset,
    shards: &[Vec<usize>],
) -> Result<Vec<Vec<f64>>> {
    let p = family.extract(rung, &params.values)?;
    shards
        .iter()
        .map(|s| {
            let mut g = vec![0.0; p.values.len()];
            let labels: Vec<usize> = s.iter().map(|&i| data.labels[i]).collect();
            loss_and_grad(family.arch(rung), &p.values, &data.rows(s), &labels, &mut g)?;
            Ok(g)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Efficiency

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyReport {
    /// Mean served fraction of cpu capacity.
    pub eta_resource: f64,
    /// Transfer time over transfer plus waiting time.
    pub c_efficiency: f64,
    /// `1 − exp(−mean score)`.
    pub exp_bound: f64,
    pub bound_met: bool,
}

pub fn efficiency_metrics(logs: &[RoundLog], scores: &[f64]) -> Result<EfficiencyReport> {
    let devs: Vec<_> = logs.iter().flat_map(|l| &l.devices).collect();
    if devs.is_empty() || scores.is_empty() {
        return Err(invalid("efficiency metrics need device logs and scores"));
    }
    let eta_resource = devs.iter().map(|d| d.cpu_usage.clamp(0.0, 1.0)).sum::<f64>() / devs.len() as f64;
    let comm: f64 = devs.iter().map(|d| d.times.communication).sum();
    let wait: f64 = devs.iter().map(|d| d.times.synchronization).sum();
    let c_efficiency = if comm + wait > 0.0 { comm / (comm + wait) } else { 1.0 };
    let mean_score = scores.iter().sum::<f64>() / scores.len() as f64;
    let exp_bound = 1.0 - (-mean_score).exp();
    Ok(EfficiencyReport {
        eta_resource,
        c_efficiency,
        exp_bound,
        bound_met: eta_resource >= exp_bound,
    })
}

// ---------------------------------------------------------------------------
// Evaluation

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub accuracy: f64,
    pub f1: Vec<f64>,
    pub macro_f1: f64,
    /// Macro one-vs-rest AUC over classes having both positives and negatives.
    pub auc: f64,
}

/// Area under the ROC curve by the rank-sum statistic, ties given average
/// ranks. `None` if either class is absent.
pub fn auc_rank_sum(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let r: f64 = ranks.iter().zip(positive).filter(|(_, &p)| p).map(|(r, _)| r).sum();
    Some((r - (n_pos * (n_pos + 1)) as f64 / 2.0) / (n_pos * n_neg) as f64)
}

/// Metrics from per-class scores. Classes with no true and no predicted
/// members get F1 0.
pub fn metrics_from_scores(scores: &[Vec<f64>], labels: &[usize], classes: usize) -> Result<EvalMetrics> {
    if scores.is_empty() {
        return Err(invalid("metrics need at least one sample"));
    }
    check_dim(scores.len(), labels.len())?;
    let pred: Vec<usize> = scores
        .iter()
        .map(|s| (0..s.len()).fold(0, |b, c| if s[c] > s[b] { c } else { b }))
        .collect();
    let accuracy = pred.iter().zip(labels).filter(|(p, y)| p == y).count() as f64 / labels.len() as f64;
    let mut f1 = Vec::with_capacity(classes);
    let mut aucs = Vec::new();
    for c in 0..classes {
        let tp = pred.iter().zip(labels).filter(|&(&p, &y)| p == c && y == c).count() as f64;
        let fp = pred.iter().zip(labels).filter(|&(&p, &y)| p == c && y != c).count() as f64;
        let fnn = pred.iter().zip(labels).filter(|&(&p, &y)| p != c && y == c).count() as f64;
        f1.push(if tp == 0.0 {
            0.0
        } else {
            2.0 * tp / (2.0 * tp + fp + fnn)
        });
        let col: Vec<f64> = scores.iter().map(|s| s[c]).collect();
        let pos: Vec<bool> = labels.iter().map(|&y| y == c).collect();
        if let Some(a) = auc_rank_sum(&col, &pos) {
            aucs.push(a);
        }
    }
    let macro_f1 = f1.iter().sum::<f64>() / classes.max(1) as f64;
    let auc = if aucs.is_empty() {
        f64::NAN
    } else {
        aucs.iter().sum::<f64>() / aucs.len() as f64
    };
    Ok(EvalMetrics {
        accuracy,
        f1,
        macro_f1,
        auc,
    })
}

pub fn eval_metrics(
    family: &NestedModelFamily,
    rung: Rung,
    global: &ParamVector,
    test: &Dataset,
) -> Result<EvalMetrics> {
    if test.is_empty() {
        return Err(invalid("test set is empty"));
    }
    let p = family.extract(rung, &global.values)?;
    let probs = predict_proba(family.arch(rung), &p.values, &test.all_rows())?;
    metrics_from_scores(&probs, &test.labels, test.classes)
}

// ---------------------------------------------------------------------------
// Descriptive bound reports

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccuracyBound {
    pub local: f64,
    pub epsilon: f64,
    pub satisfied: bool,
}

/// `Acc_i ≥ Acc_global − c·√Var_i` per device.
pub fn accuracy_bound_check(local: &[f64], global: f64, score_var: &[f64], c: f64) -> Result<Vec<AccuracyBound>> {
    check_dim(local.len(), score_var.len())?;
    if score_var.iter().any(|&v| v < 0.0) {
        return Err(invalid("variance must be non-negative"));
    }
    Ok(local
        .iter()
        .zip(score_var)
        .map(|(&a, &v)| {
            let epsilon = c * v.sqrt();
            AccuracyBound {
                local: a,
                epsilon,
                satisfied: a >= global - epsilon,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    /// `steps[i] = ‖w_{i+1} − w_i‖`.
    pub steps: Vec<f64>,
    /// First `t ≥ 2` with `‖w_t − w_{t-1}‖ > δ‖w_{t-1} − w_{t-2}‖ + ε`.
    pub first_violation: Option<usize>,
    pub violations: usize,
}

pub fn model_convergence_check(history: &[Vec<f64>], delta: f64, epsilon: f64) -> Result<StepReport> {
    if history.len() < 3 {
        return Err(invalid("need at least three parameter snapshots"));
    }
    let dim = history[0].len();
    for w in history {
        check_dim(dim, w.len())?;
    }
    let steps: Vec<f64> = history
        .windows(2)
        .map(|p| p[0].iter().zip(&p[1]).map(|(a, b)| (b - a).powi(2)).sum::<f64>().sqrt())
        .collect();
    let bad: Vec<usize> = (1..steps.len())
        .filter(|&i| steps[i] > delta * steps[i - 1] + epsilon * (1.0 + 1e-12) + 1e-15)
        .map(|i| i + 1)
        .collect();
    Ok(StepReport {
        first_violation: bad.first().copied(),
        violations: bad.len(),
        steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fit_recovers_exact_model() {
        let g: Vec<f64> = (1..=200).map(|t| 3.0 / t as f64 + 0.5 / (t as f64).sqrt()).collect();
        let f = fit_convergence(&g, 1.0).unwrap();
        assert!((f.c_hat - 3.0).abs() < 1e-6 && (f.d_hat - 0.5).abs() < 1e-6, "{f:?}");
        assert!(f.residual < 1e-9 && !f.non_convergent);
    }

    #[test]
    fn constant_history_is_flagged() {
        let f = fit_convergence(&[1.0; 50], 1.0).unwrap();
        assert!(f.non_convergent && f.residual > 0.1);
    }

    #[test]
    fn envelope_covers_history() {
        let g: Vec<f64> = (1..=100)
            .map(|t| 2.0 / t as f64 + if t % 7 == 0 { 0.3 } else { 0.0 } / (t as f64).sqrt())
            .collect();
        let e = fit_envelope(&g, 10, 1.0).unwrap();
        for t in 10..=100 {
            assert!(e.envelope(t as f64, 1.0) >= g[t - 1] - 1e-9);
        }
    }

    #[test]
    fn variance_examples() {
        let g = vec![1.0, -2.0, 3.0];
        let neg: Vec<f64> = g.iter().map(|x| -x).collect();
        assert!((variance_estimate(&[g.clone(), neg]).unwrap() - 14.0).abs() < 1e-12);
        assert_eq!(variance_estimate(&[g.clone(), g.clone(), g]).unwrap(), 0.0);
    }

    #[test]
    fn auc_and_f1_examples() {
        assert_eq!(auc_rank_sum(&[0.1, 0.2, 0.9], &[false, false, true]), Some(1.0));
        assert_eq!(auc_rank_sum(&[0.5, 0.5], &[false, true]), Some(0.5));
        assert_eq!(auc_rank_sum(&[0.5], &[true]), None);
        // Predictions 0, 1, 1 for labels 0, 0, 1.
        let s = vec![vec![0.9, 0.1], vec![0.4, 0.6], vec![0.2, 0.8]];
        let m = metrics_from_scores(&s, &[0, 0, 1], 2).unwrap();
        assert!((m.f1[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((m.f1[1] - 2.0 / 3.0).abs() < 1e-12);
        assert!((m.accuracy - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn step_report_examples() {
        let geo: Vec<Vec<f64>> = (0..8).map(|i| vec![1.0 - 0.5f64.powi(i)]).collect();
        assert_eq!(model_convergence_check(&geo, 0.6, 0.0).unwrap().first_violation, None);
        let lin: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64]).collect();
        assert_eq!(
            model_convergence_check(&lin, 0.5, 0.0).unwrap().first_violation,
            Some(2)
        );
    }

    #[test]
    fn accuracy_bound_examples() {
        let r = accuracy_bound_check(&[0.72, 0.5, 0.9], 0.8, &[0.01, 0.04, 0.0], 1.0).unwrap();
        let flags: Vec<bool> = r.iter().map(|b| b.satisfied).collect();
        assert_eq!(flags, vec![true, false, true]);
        assert!(accuracy_bound_check(&[0.0, 0.1], 0.0, &[0.0, 0.0], 1.0)
            .unwrap()
            .iter()
            .all(|b| b.satisfied));
    }

    #[test]
    fn complexity_scaling() {
        let s = [2.0, 3.0];
        let base = ComplexityInputs {
            n: 100,
            k: 3,
            t: 10,
            epochs: 2,
            m: 50,
            p: 1000,
            b: 1e6,
            s: &s,
        };
        let a = complexity_estimates(&base).unwrap();
        let b = complexity_estimates(&ComplexityInputs { n: 200, ..base.clone() }).unwrap();
        assert_eq!(b.t_clust, 2.0 * a.t_clust);
        let s2 = [4.0, 3.0];
        let c = complexity_estimates(&ComplexityInputs { s: &s2, ..base.clone() }).unwrap();
        assert!((c.t_bench - a.t_bench - (64.0 - 8.0)).abs() < 1e-9);
    }
}
