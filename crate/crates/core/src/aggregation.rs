//! Sample-weighted averaging within clusters and across the nested family.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, invalid, Result};
use crate::models::{NestedModelFamily, ParamVector, Rung};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Update {
    /// Device id for local updates, cluster id for cluster models.
    pub device_id: usize,
    pub rung: Rung,
    pub params: ParamVector,
    pub n_samples: usize,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalModel {
    pub params: ParamVector,
    pub round: u64,
    pub loss_history: Vec<f64>,
}

/// `Σ n_i · w_i / Σ n_i`, accumulated in input order.
pub fn fedavg(updates: &[Update]) -> Result<ParamVector> {
    let first = updates
        .first()
        .ok_or_else(|| invalid("fedavg needs at least one update"))?;
    let len = first.params.values.len();
    let mut acc = vec![0.0; len];
    let mut total = 0usize;
    for u in updates {
        if u.rung != first.rung || u.params.rung != first.rung {
            return Err(invalid("fedavg requires updates at one rung"));
        }
        check_dim(len, u.params.values.len())?;
        if u.n_samples == 0 {
            return Err(invalid("update carries no samples"));
        }
        let n = u.n_samples as f64;
        for (a, w) in acc.iter_mut().zip(&u.params.values) {
            *a += n * w;
        }
        total += u.n_samples;
    }
    let total = total as f64;
    for a in &mut acc {
        *a /= total;
    }
    Ok(ParamVector {
        rung: first.rung,
        values: acc,
    })
}

/// Projects every member update to the cluster's nominal rung (new
/// coordinates from `global`), then averages. `None` when the cluster sent
/// nothing this round.
pub fn intra_cluster_aggregate(
    family: &NestedModelFamily,
    cluster_id: usize,
    nominal: Rung,
    updates: &[Update],
    global: &ParamVector,
) -> Result<Option<Update>> {
    if updates.is_empty() {
        return Ok(None);
    }
    let projected = updates
        .iter()
        .map(|u| {
            Ok(Update {
                rung: nominal,
                params: family.project_params(nominal, &u.params, Some(global))?,
                ..u.clone()
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let n: usize = updates.iter().map(|u| u.n_samples).sum();
    let loss = updates.iter().map(|u| u.n_samples as f64 * u.loss).sum::<f64>() / n as f64;
    Ok(Some(Update {
        device_id: cluster_id,
        rung: nominal,
        params: fedavg(&projected)?,
        n_samples: n,
        loss,
    }))
}

/// Per Complex-layout coordinate, the sample-weighted mean over the cluster
/// models covering it. Coordinates with a single contributor take its value
/// as is; uncovered coordinates keep the previous global value.
pub fn hierarchical_merge(
    family: &NestedModelFamily,
    clusters: &[Update],
    previous: &ParamVector,
) -> Result<ParamVector> {
    let len = family.param_count(Rung::Complex);
    check_dim(len, previous.values.len())?;
    let mut sum = vec![0.0; len];
    let mut weight = vec![0usize; len];
    let mut count = vec![0u32; len];
    let mut single = previous.values.clone();
    for c in clusters {
        check_dim(family.param_count(c.rung), c.params.values.len())?;
        let n = c.n_samples as f64;
        for (&i, &v) in family.coord_map(c.rung).iter().zip(&c.params.values) {
            sum[i] += n * v;
            weight[i] += c.n_samples;
            count[i] += 1;
            single[i] = v;
        }
    }
    let values = (0..len)
        .map(|i| match count[i] {
            0 | 1 => single[i],
            _ => sum[i] / weight[i] as f64,
        })
        .collect();
    Ok(ParamVector {
        rung: Rung::Complex,
        values,
    })
}

/// Relative change between the two halves of the last `window` losses, and
/// whether it is at most `threshold`.
pub fn check_convergence(history: &[f64], window: usize, threshold: f64) -> Result<(f64, bool)> {
    if window < 2 {
        return Err(invalid("convergence window must be at least 2"));
    }
    if history.len() < window {
        return Ok((f64::INFINITY, false));
    }
    let recent = &history[history.len() - window..];
    let half = window / 2;
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    let prior = mean(&recent[..window - half]);
    let last = mean(&recent[window - half..]);
    let rate = (last - prior).abs() / prior.abs().max(1e-12);
    Ok((rate, rate <= threshold))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::build_family;

    fn upd(rung: Rung, values: Vec<f64>, n: usize) -> Update {
        Update {
            device_id: 0,
            rung,
            params: ParamVector { rung, values },
            n_samples: n,
            loss: 0.0,
        }
    }

    #[test]
    fn fedavg_examples() {
        let a = fedavg(&[
            upd(Rung::Complex, vec![1.0, 3.0], 5),
            upd(Rung::Complex, vec![3.0, 5.0], 5),
        ])
        .unwrap();
        assert_eq!(a.values, vec![2.0, 4.0]);
        let one = fedavg(&[upd(Rung::Complex, vec![0.3, -1.7], 9)]).unwrap();
        assert_eq!(one.values, vec![0.3, -1.7]);
        let w = fedavg(&[
            upd(Rung::Complex, vec![0.0, 0.0], 1),
            upd(Rung::Complex, vec![4.0, 8.0], 3),
        ])
        .unwrap();
        assert_eq!(w.values, vec![3.0, 6.0]);
        assert!(fedavg(&[]).is_err());
        assert!(fedavg(&[upd(Rung::Simple, vec![0.0], 1), upd(Rung::Complex, vec![0.0], 1)]).is_err());
    }

    // Input 1, output 1, hidden widths 1/1/2: Simple has 4 coordinates
    // (w1, b1, w2, b2) and Complex 7 (w1[0..2], b1[0..2], w2[0..2], b2).
    fn tiny() -> NestedModelFamily {
        build_family(1, 1, [&[1], &[1], &[2]]).unwrap()
    }

    #[test]
    fn cluster_aggregate_fills_from_global() {
        let f = tiny();
        assert_eq!(f.coord_map(Rung::Simple), &[0, 2, 4, 6]);
        let global = ParamVector {
            rung: Rung::Complex,
            values: vec![9.0; 7],
        };
        let full = upd(Rung::Complex, vec![1.0; 7], 1);
        let down = upd(Rung::Simple, vec![3.0; 4], 1);
        let c = intra_cluster_aggregate(&f, 4, Rung::Complex, &[full.clone(), down], &global)
            .unwrap()
            .unwrap();
        assert_eq!(c.params.values, vec![2.0, 5.0, 2.0, 5.0, 2.0, 5.0, 2.0]);
        assert_eq!((c.device_id, c.n_samples), (4, 2));

        let same = intra_cluster_aggregate(&f, 0, Rung::Complex, std::slice::from_ref(&full), &global)
            .unwrap()
            .unwrap();
        assert_eq!(same.params, fedavg(&[full]).unwrap());
        assert!(intra_cluster_aggregate(&f, 0, Rung::Complex, &[], &global)
            .unwrap()
            .is_none());
    }

    #[test]
    fn merge_examples() {
        let f = tiny();
        let prev = ParamVector {
            rung: Rung::Complex,
            values: vec![-1.0; 7],
        };
        let small = upd(Rung::Simple, vec![2.0; 4], 10);
        let big = upd(Rung::Complex, vec![4.0; 7], 10);
        let m = hierarchical_merge(&f, &[small.clone(), big.clone()], &prev).unwrap();
        assert_eq!(m.values, vec![3.0, 4.0, 3.0, 4.0, 3.0, 4.0, 3.0]);

        let only = hierarchical_merge(&f, &[small], &prev).unwrap();
        assert_eq!(only.values, vec![2.0, -1.0, 2.0, -1.0, 2.0, -1.0, 2.0]);

        let none = hierarchical_merge(&f, &[], &prev).unwrap();
        assert_eq!(none, prev);

        let b2 = upd(Rung::Complex, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0], 3);
        let via_merge = hierarchical_merge(&f, &[big.clone(), b2.clone()], &prev).unwrap();
        let via_avg = fedavg(&[big, b2]).unwrap();
        assert_eq!(via_merge.values, via_avg.values);
    }

    #[test]
    fn convergence_examples() {
        let (r, stop) = check_convergence(&[0.5; 6], 4, 1e-9).unwrap();
        assert_eq!((r, stop), (0.0, true));
        let (_, stop) = check_convergence(&[1.0, 2.0, 4.0, 8.0, 16.0], 4, 0.01).unwrap();
        assert!(!stop);
        let (r, stop) = check_convergence(&[1.0, 0.9, 0.81, 0.80, 0.80, 0.80], 4, 0.01).unwrap();
        assert!((r - 0.005 / 0.805).abs() < 1e-12 && stop);
        assert!(!check_convergence(&[1.0], 4, 1.0).unwrap().1);
        assert!(check_convergence(&[1.0], 1, 1.0).is_err());
    }
}
