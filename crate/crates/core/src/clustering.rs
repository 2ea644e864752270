//! Capability clustering, tier ranking, constraint validation and greedy task
//! allocation.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, invalid, AsaError, Result};
use crate::exec::ExecMode;
use crate::rng::{self, purpose};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub k: usize,
    pub labels: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    /// Within-cluster sum of squared distances.
    pub objective: f64,
    pub iterations_used: usize,
    /// `(device, from, to)` moves made by [`repair_min_size`].
    pub repairs: Vec<(usize, usize, usize)>,
    /// Objective after each Lloyd update, starting with the seeded assignment.
    pub objective_trace: Vec<f64>,
    /// Point-to-centroid distance evaluations, seeding included.
    pub distance_computations: u64,
}

impl ClusterAssignment {
    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k];
        for &l in &self.labels {
            s[l] += 1;
        }
        s
    }

    pub fn members(&self, cluster: usize) -> Vec<usize> {
        (0..self.labels.len()).filter(|&i| self.labels[i] == cluster).collect()
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest centroid; ties go to the lowest cluster id.
fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, mu) in centroids.iter().enumerate() {
        let d = sq_dist(p, mu);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// Within-cluster sum of squares recomputed from labels.
pub fn wcss(points: &[Vec<f64>], labels: &[usize], centroids: &[Vec<f64>]) -> f64 {
    points.iter().zip(labels).map(|(p, &l)| sq_dist(p, &centroids[l])).sum()
}

fn centroid_means(points: &[Vec<f64>], labels: &[usize], previous: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let dim = previous[0].len();
    let mut sums = vec![vec![0.0; dim]; previous.len()];
    let mut counts = vec![0usize; previous.len()];
    for (p, &l) in points.iter().zip(labels) {
        counts[l] += 1;
        for (s, x) in sums[l].iter_mut().zip(p) {
            *s += x;
        }
    }
    sums.into_iter()
        .zip(counts)
        .zip(previous)
        .map(|((s, n), prev)| {
            if n == 0 {
                // Empty clusters keep their centroid.
                prev.clone()
            } else {
                s.into_iter().map(|v| v / n as f64).collect()
            }
        })
        .collect()
}

fn seed_plus_plus(points: &[Vec<f64>], k: usize, seed: u64, distances: &mut u64) -> Vec<Vec<f64>> {
    let mut rng = rng::stream(seed, &[purpose::KMEANS]);
    let n = points.len();
    let mut centroids = vec![points[rng.random_range(0..n)].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    *distances += n as u64;
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut idx = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if target < d {
                    idx = i;
                    break;
                }
                target -= d;
            }
            idx
        } else {
            // Every point coincides with a centroid already.
            rng.random_range(0..n)
        };
        let c = points[pick].clone();
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &c));
        }
        *distances += n as u64;
        centroids.push(c);
    }
    centroids
}

/// Lloyd's algorithm with k-means++ seeding.
pub fn kmeans(
    points: &[Vec<f64>],
    k: usize,
    seed: u64,
    max_iter: usize,
    tol: f64,
    exec: ExecMode,
) -> Result<ClusterAssignment> {
    if k == 0 {
        return Err(invalid("k must be at least 1"));
    }
    if points.len() < k {
        return Err(invalid(format!("{} points cannot form {k} clusters", points.len())));
    }
    let dim = points[0].len();
    for p in points {
        check_dim(dim, p.len())?;
        if p.iter().any(|v| !v.is_finite()) {
            return Err(invalid("points must be finite"));
        }
    }
    let n = points.len() as u64;
    let mut distances = 0u64;
    let mut centroids = seed_plus_plus(points, k, seed, &mut distances);

    let assign = |c: &[Vec<f64>]| -> Vec<usize> { exec.map(points, |p| nearest(p, c).0) };
    let mut labels = assign(&centroids);
    distances += n * k as u64;
    let mut trace = vec![wcss(points, &labels, &centroids)];
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        let updated = centroid_means(points, &labels, &centroids);
        let shift = updated
            .iter()
            .zip(&centroids)
            .map(|(a, b)| sq_dist(a, b).sqrt())
            .fold(0.0, f64::max);
        centroids = updated;
        trace.push(wcss(points, &labels, &centroids));
        if shift < tol {
            break;
        }
        labels = assign(&centroids);
        distances += n * k as u64;
    }
    let objective = wcss(points, &labels, &centroids);
    log::debug!("kmeans k={k} iterations={iterations} objective={objective:.6e}");
    Ok(ClusterAssignment {
        k,
        labels,
        centroids,
        objective,
        iterations_used: iterations,
        repairs: Vec::new(),
        objective_trace: trace,
        distance_computations: distances,
    })
}

/// Moves devices until every cluster has at least `n_min` members. The
/// receiver is the smallest cluster; the donor is the largest cluster that can
/// spare a member, and it gives up the member closest to the receiver's
/// centroid (lower device id on ties).
pub fn repair_min_size(assignment: &ClusterAssignment, points: &[Vec<f64>], n_min: usize) -> Result<ClusterAssignment> {
    check_dim(assignment.labels.len(), points.len())?;
    let k = assignment.k;
    if k * n_min > points.len() {
        return Err(AsaError::Infeasible(format!(
            "{k} clusters of at least {n_min} need more than {} devices",
            points.len()
        )));
    }
    let mut out = assignment.clone();
    let mut sizes = out.sizes();
    loop {
        let receiver = (0..k).min_by_key(|&c| (sizes[c], c)).expect("k >= 1");
        if sizes[receiver] >= n_min {
            break;
        }
        let donor = (0..k)
            .filter(|&c| sizes[c] > n_min)
            .max_by_key(|&c| (sizes[c], std::cmp::Reverse(c)))
            .ok_or_else(|| AsaError::Infeasible("no cluster can donate".into()))?;
        let target = &out.centroids[receiver];
        let moved = (0..points.len())
            .filter(|&i| out.labels[i] == donor)
            .min_by(|&a, &b| {
                sq_dist(&points[a], target)
                    .total_cmp(&sq_dist(&points[b], target))
                    .then(a.cmp(&b))
            })
            .expect("donor is non-empty");
        out.labels[moved] = receiver;
        sizes[donor] -= 1;
        sizes[receiver] += 1;
        out.repairs.push((moved, donor, receiver));
    }
    if !out.repairs.is_empty() {
        out.centroids = centroid_means(points, &out.labels, &out.centroids);
        out.objective = wcss(points, &out.labels, &out.centroids);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Tier {
    High,
    Mid,
    Low,
}

impl Tier {
    pub fn as_str(self) -> &'static str {
        match self {
            Tier::High => "high",
            Tier::Mid => "mid",
            Tier::Low => "low",
        }
    }
}

/// Tier per cluster id.
pub type TierMap = Vec<Tier>;

/// Ranks the three clusters by mean member score (ties to the lower id).
pub fn map_tiers(assignment: &ClusterAssignment, scores: &[f64]) -> Result<TierMap> {
    if assignment.k != 3 {
        return Err(invalid(format!("tier mapping needs k = 3, got {}", assignment.k)));
    }
    check_dim(assignment.labels.len(), scores.len())?;
    let mut sum = [0.0; 3];
    let mut count = [0usize; 3];
    for (&l, &s) in assignment.labels.iter().zip(scores) {
        sum[l] += s;
        count[l] += 1;
    }
    if count.contains(&0) {
        return Err(invalid("cannot rank an empty cluster"));
    }
    let mean: Vec<f64> = (0..3).map(|c| sum[c] / count[c] as f64).collect();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| mean[b].total_cmp(&mean[a]).then(a.cmp(&b)));
    let mut tiers = vec![Tier::Low; 3];
    for (rank, &c) in order.iter().enumerate() {
        tiers[c] = [Tier::High, Tier::Mid, Tier::Low][rank];
    }
    Ok(tiers)
}

/// Writes `device_id,cluster_id,tier,score` rows.
pub fn write_assignment_csv<W: Write>(
    w: W,
    assignment: &ClusterAssignment,
    tiers: &TierMap,
    scores: &[f64],
) -> Result<()> {
    check_dim(assignment.labels.len(), scores.len())?;
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["device_id", "cluster_id", "tier", "score"])?;
    for (i, (&l, s)) in assignment.labels.iter().zip(scores).enumerate() {
        out.write_record([
            i.to_string(),
            l.to_string(),
            tiers[l].as_str().to_string(),
            s.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstraintParams {
    pub n_min: usize,
    /// Optional upper bound on cluster size.
    pub n_max: Option<usize>,
    pub tau_max: f64,
    pub sigma2_max: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConstraintReport {
    /// `(device, load, cap)`
    pub c1_violations: Vec<(usize, f64, f64)>,
    /// `(cluster, size, n_min)`
    pub c2_violations: Vec<(usize, usize, usize)>,
    /// `(cluster, size, n_max)`; only populated when an upper bound is set.
    pub c2_upper_violations: Vec<(usize, usize, usize)>,
    /// `(device, expected_delay, tau_max)`
    pub c3_violations: Vec<(usize, f64, f64)>,
    /// `(cluster, load_variance, sigma2_max)`
    pub c4_violations: Vec<(usize, f64, f64)>,
}

impl ConstraintReport {
    pub fn is_feasible(&self) -> bool {
        self.c1_violations.is_empty()
            && self.c2_violations.is_empty()
            && self.c2_upper_violations.is_empty()
            && self.c3_violations.is_empty()
            && self.c4_violations.is_empty()
    }
}

/// An allocation: `x[i][j] ∈ {0,1}` places task `j` on device `i`, `u[i][j]`
/// is the fraction of the task's demand that device uses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub x: Vec<Vec<f64>>,
    pub u: Vec<Vec<f64>>,
}

impl Allocation {
    pub fn empty(n_dev: usize, n_task: usize) -> Self {
        Self {
            x: vec![vec![0.0; n_task]; n_dev],
            u: vec![vec![0.0; n_task]; n_dev],
        }
    }

    /// Device carrying each task, if any.
    pub fn owners(&self) -> Vec<Option<usize>> {
        let n_task = self.x.first().map_or(0, Vec::len);
        (0..n_task)
            .map(|j| (0..self.x.len()).find(|&i| self.x[i][j] == 1.0))
            .collect()
    }
}

/// Per-device load `Σ_j C_j · u_ij · x_ij`, summed in task order.
pub fn device_loads(alloc: &Allocation, demands: &[f64]) -> Vec<f64> {
    alloc
        .x
        .iter()
        .zip(&alloc.u)
        .map(|(xr, ur)| {
            xr.iter()
                .zip(ur)
                .zip(demands)
                .fold(0.0, |acc, ((x, u), c)| acc + c * u * x)
        })
        .collect()
}

fn population_variance(v: &[f64]) -> f64 {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / v.len() as f64
}

/// Validates capacity, cluster size, delay and load-balance constraints.
#[allow(clippy::too_many_arguments)]
pub fn check_constraints(
    alloc: &Allocation,
    demands: &[f64],
    caps: &[f64],
    labels: &[usize],
    k: usize,
    delays: &[f64],
    params: &ConstraintParams,
) -> Result<ConstraintReport> {
    let n_dev = caps.len();
    check_dim(n_dev, alloc.x.len())?;
    check_dim(n_dev, alloc.u.len())?;
    check_dim(n_dev, labels.len())?;
    check_dim(n_dev, delays.len())?;
    for (xr, ur) in alloc.x.iter().zip(&alloc.u) {
        check_dim(demands.len(), xr.len())?;
        check_dim(demands.len(), ur.len())?;
        if xr.iter().any(|&x| x != 0.0 && x != 1.0) {
            return Err(invalid("x entries must be 0 or 1"));
        }
        if ur.iter().any(|u| !(0.0..=1.0).contains(u)) {
            return Err(invalid("u entries must lie in [0, 1]"));
        }
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= k) {
        return Err(invalid(format!("label {l} out of range for k = {k}")));
    }

    let loads = device_loads(alloc, demands);
    let mut report = ConstraintReport::default();
    for (i, (&load, &cap)) in loads.iter().zip(caps).enumerate() {
        if load > cap {
            report.c1_violations.push((i, load, cap));
        }
    }
    for c in 0..k {
        let member_loads: Vec<f64> = (0..n_dev).filter(|&i| labels[i] == c).map(|i| loads[i]).collect();
        let size = member_loads.len();
        if size < params.n_min {
            report.c2_violations.push((c, size, params.n_min));
        }
        if let Some(n_max) = params.n_max {
            if size > n_max {
                report.c2_upper_violations.push((c, size, n_max));
            }
        }
        if size > 0 {
            let var = population_variance(&member_loads);
            if var > params.sigma2_max {
                report.c4_violations.push((c, var, params.sigma2_max));
            }
        }
    }
    for (i, &d) in delays.iter().enumerate() {
        if d > params.tau_max {
            report.c3_violations.push((i, d, params.tau_max));
        }
    }
    Ok(report)
}

/// Allocation utility `Σ_i score_i · √load_i`. It is monotone and submodular
/// in the set of placed tasks, which is what the greedy guarantee rests on.
pub fn allocation_utility(alloc: &Allocation, demands: &[f64], scores: &[f64]) -> f64 {
    device_loads(alloc, demands)
        .iter()
        .zip(scores)
        .map(|(l, s)| s * l.sqrt())
        .sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GreedyResult {
    pub allocation: Allocation,
    pub unassigned: Vec<usize>,
    pub utility: f64,
}

/// Greedy placement by marginal utility gain. At each step the feasible
/// `(task, device)` pair with the largest gain is committed; ties prefer the
/// larger demand, then lower task index, then lower device index. Tasks that
/// fit nowhere are returned unassigned, and the result is always
/// capacity-feasible.
pub fn greedy_allocate(demands: &[f64], caps: &[f64], scores: &[f64]) -> Result<GreedyResult> {
    check_dim(caps.len(), scores.len())?;
    if demands.iter().chain(caps).any(|v| !v.is_finite() || *v <= 0.0) {
        return Err(invalid("demands and capacities must be positive"));
    }
    if scores.iter().any(|s| !s.is_finite() || *s < 0.0) {
        return Err(invalid("scores must be non-negative"));
    }
    let (n_dev, n_task) = (caps.len(), demands.len());
    let mut alloc = Allocation::empty(n_dev, n_task);
    let mut load = vec![0.0; n_dev];
    let mut placed = vec![false; n_task];
    loop {
        let mut best: Option<(f64, usize, usize)> = None;
        for j in (0..n_task).filter(|&j| !placed[j]) {
            for i in 0..n_dev {
                if load[i] + demands[j] > caps[i] {
                    continue;
                }
                let gain = scores[i] * ((load[i] + demands[j]).sqrt() - load[i].sqrt());
                let better = match best {
                    None => true,
                    Some((g, bj, _)) => gain > g || (gain == g && demands[j] > demands[bj]),
                };
                if better {
                    best = Some((gain, j, i));
                }
            }
        }
        let Some((_, j, i)) = best else { break };
        placed[j] = true;
        load[i] += demands[j];
        alloc.x[i][j] = 1.0;
        alloc.u[i][j] = 1.0;
    }
    let unassigned = (0..n_task).filter(|&j| !placed[j]).collect();
    let utility = allocation_utility(&alloc, demands, scores);
    Ok(GreedyResult {
        allocation: alloc,
        unassigned,
        utility,
    })
}

/// Adjusted Rand index between two labelings of the same items.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> Result<f64> {
    check_dim(a.len(), b.len())?;
    let n = a.len();
    let ka = a.iter().max().map_or(0, |m| m + 1);
    let kb = b.iter().max().map_or(0, |m| m + 1);
    let mut table = vec![vec![0u64; kb]; ka];
    for (&x, &y) in a.iter().zip(b) {
        table[x][y] += 1;
    }
    let c2 = |m: u64| (m * m.saturating_sub(1)) as f64 / 2.0;
    let sum_ij: f64 = table.iter().flatten().map(|&m| c2(m)).sum();
    let sum_a: f64 = table.iter().map(|r| c2(r.iter().sum())).sum();
    let sum_b: f64 = (0..kb).map(|j| c2(table.iter().map(|r| r[j]).sum())).sum();
    let total = c2(n as u64);
    let expected = if total > 0.0 { sum_a * sum_b / total } else { 0.0 };
    let max = (sum_a + sum_b) / 2.0;
    if max == expected {
        return Ok(1.0);
    }
    Ok((sum_ij - expected) / (max - expected))
}
