//! Empirical-versus-analytic dominance checks on a recorded trace.

use serde::{Deserialize, Serialize};

use crate::bounds::BoundReport;
use crate::drift::{embedding_drift, weight_drift};
use crate::error::Result;
use crate::linalg::ls_slope;
use crate::sim::Trace;

/// Absolute slack on every dominance comparison.
pub const DOMINANCE_SLACK: f64 = 1e-12;
/// Largest admissible upward trend (per second) over the final half.
pub const SLOPE_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckStatus {
    Pass,
    Fail,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DominanceCheck {
    pub name: String,
    pub status: CheckStatus,
    pub worst: f64,
    pub bound: f64,
    pub samples: usize,
    pub violations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub scenario: String,
    pub seed: u64,
    pub checks: Vec<DominanceCheck>,
    pub pass: bool,
}

impl VerificationReport {
    pub fn check(&self, name: &str) -> Option<&DominanceCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

fn dominance(name: &str, values: impl IntoIterator<Item = f64>, bound: f64) -> DominanceCheck {
    let mut worst = f64::NEG_INFINITY;
    let (mut samples, mut violations) = (0, 0);
    for v in values {
        samples += 1;
        worst = worst.max(v);
        if !(v <= bound + DOMINANCE_SLACK) {
            violations += 1;
        }
    }
    let status = if samples == 0 {
        CheckStatus::Inconclusive
    } else if violations == 0 {
        CheckStatus::Pass
    } else {
        CheckStatus::Fail
    };
    DominanceCheck {
        name: name.to_string(),
        status,
        worst: if samples == 0 { 0.0 } else { worst },
        bound,
        samples,
        violations,
    }
}

fn slope_check(name: &str, trace: &Trace, value: impl Fn(&crate::sim::Snapshot) -> f64) -> DominanceCheck {
    let half = trace.metadata.duration / 2.0;
    let (xs, ys): (Vec<f64>, Vec<f64>) = trace
        .snapshots
        .iter()
        .filter(|s| s.t >= half - 1e-9)
        .map(|s| (s.t, value(s)))
        .unzip();
    let mut c = dominance(name, ls_slope(&xs, &ys), SLOPE_TOLERANCE);
    c.samples = xs.len();
    c
}

/// Checks:
/// - `step_norm`: per-tick step norm against the step bound in force
/// - `weight_drift`: `D_w` per coordination window against `n12 * step bound`
/// - `embedding_drift`: `D_phi` per window against `Phi_max`
/// - `induced_policy_tv`: per-tick TV from one Hebbian step against `L_pi L_phi step bound`
/// - `meta_policy_drift`: `L_pi L_phi L_{H->w} |dH|` per meta update against `K eta3 g_max`
/// - `weight_norm_trend`, `subopt_trend`: least-squares slope over the final half
pub fn verify(trace: &Trace, bounds: &BoundReport) -> Result<VerificationReport> {
    let c = &trace.config;
    let step = bounds.delta1_eff;
    let mut checks = vec![dominance("step_norm", trace.step_norms.iter().copied(), step)];

    let times = trace.snapshot_times();
    let mut dw = Vec::new();
    let mut dphi = Vec::new();
    for pair in times.windows(2) {
        dw.push(weight_drift(trace, pair[0], pair[1])?);
        dphi.push(embedding_drift(trace, pair[0], pair[1])?);
    }
    checks.push(dominance("weight_drift", dw, bounds.n12 as f64 * step));
    checks.push(dominance("embedding_drift", dphi, bounds.phi_max));
    checks.push(dominance(
        "induced_policy_tv",
        trace.induced_tv.iter().copied(),
        c.lip_pi * c.lip_phi * step,
    ));
    let chain = c.lip_pi * c.lip_phi * c.lip_h_to_w;
    // Operator norms are calibrated numerically; allow their relative error.
    let meta_bound = bounds.k_cascade * c.eta3 * c.g_max * (1.0 + 1e-9);
    let meta = dominance(
        "meta_policy_drift",
        trace.meta_records.iter().filter(|r| r.applied).map(|r| chain * r.rule_change_norm),
        meta_bound,
    );
    checks.push(meta);
    checks.push(slope_check("weight_norm_trend", trace, |s| s.max_weight_norm));
    checks.push(slope_check("subopt_trend", trace, |s| s.subopt_proxy));

    let pass = checks.iter().all(|c| c.status != CheckStatus::Fail);
    Ok(VerificationReport {
        scenario: trace.metadata.scenario.clone(),
        seed: trace.metadata.seed,
        checks,
        pass,
    })
}
