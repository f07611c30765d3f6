//! Drift measures over recorded traces and the total-variation primitive.

use serde::{Deserialize, Serialize};

use crate::cascade::{max_probe_tv, PolicyParams};
use crate::error::{Error, Result};
use crate::linalg::dist;
use crate::sim::Trace;

/// `0.5 * sum |p_a - q_a|`
pub fn tv_distance(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::Dimension {
            context: "tv_distance",
            expected: p.len(),
            actual: q.len(),
        });
    }
    Ok(0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

fn max_pairwise(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter().zip(b).map(|(x, y)| dist(x, y)).fold(0.0, f64::max)
}

/// `D_w`: largest per-agent weight displacement between two snapshots.
pub fn weight_drift(trace: &Trace, t1: f64, t2: f64) -> Result<f64> {
    let (a, b) = (trace.snapshot_at(t1)?, trace.snapshot_at(t2)?);
    Ok(max_pairwise(&a.weights, &b.weights))
}

/// `D_phi`: largest per-agent ideal-embedding displacement.
pub fn embedding_drift(trace: &Trace, t1: f64, t2: f64) -> Result<f64> {
    let (a, b) = (trace.snapshot_at(t1)?, trace.snapshot_at(t2)?);
    Ok(max_pairwise(&a.phi_star, &b.phi_star))
}

/// `D_pi`: largest TV between the two recorded policies over the probe set.
pub fn policy_drift(trace: &Trace, probe_states: &[Vec<f64>], t1: f64, t2: f64) -> Result<f64> {
    if probe_states.is_empty() {
        return Err(Error::InvalidArgument("policy drift needs at least one probe state".into()));
    }
    let (a, b) = (trace.snapshot_at(t1)?, trace.snapshot_at(t2)?);
    let pa = PolicyParams { theta_pi: a.policy.clone() };
    let pb = PolicyParams { theta_pi: b.policy.clone() };
    Ok(max_probe_tv(&pa, &pb, probe_states, &trace.config))
}

/// `D_theta`: meta-parameter displacement.
pub fn meta_drift(trace: &Trace, t1: f64, t2: f64) -> Result<f64> {
    let (a, b) = (trace.snapshot_at(t1)?, trace.snapshot_at(t2)?);
    Ok(dist(&a.theta, &b.theta))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftReport {
    pub t1: f64,
    pub t2: f64,
    pub d_w: f64,
    pub d_phi: f64,
    pub d_pi: f64,
    pub d_theta: f64,
}

pub fn drift_report(trace: &Trace, t1: f64, t2: f64) -> Result<DriftReport> {
    Ok(DriftReport {
        t1,
        t2,
        d_w: weight_drift(trace, t1, t2)?,
        d_phi: embedding_drift(trace, t1, t2)?,
        d_pi: policy_drift(trace, &trace.probe_states, t1, t2)?,
        d_theta: meta_drift(trace, t1, t2)?,
    })
}
