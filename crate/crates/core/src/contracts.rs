//! Runtime contract monitors, robustness margins, and the stub adaptation
//! trial used by the meta-learning contracts.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::cascade::{max_probe_tv, CoordinationTarget, PolicyParams};
use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::linalg::{dot, norm};
use crate::meta::MetaCascade;
use crate::rng::{self, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ContractId {
    #[serde(rename = "NP-C1")]
    NpC1,
    #[serde(rename = "NP-C2")]
    NpC2,
    #[serde(rename = "MARL-C1")]
    MarlC1,
    #[serde(rename = "GNN-C1")]
    GnnC1,
    #[serde(rename = "ML-C1")]
    MlC1,
    #[serde(rename = "ML-C2")]
    MlC2,
}

impl ContractId {
    pub const ALL: [ContractId; 6] = [
        ContractId::NpC1,
        ContractId::NpC2,
        ContractId::MarlC1,
        ContractId::GnnC1,
        ContractId::MlC1,
        ContractId::MlC2,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ContractId::NpC1 => "NP-C1",
            ContractId::NpC2 => "NP-C2",
            ContractId::MarlC1 => "MARL-C1",
            ContractId::GnnC1 => "GNN-C1",
            ContractId::MlC1 => "ML-C1",
            ContractId::MlC2 => "ML-C2",
        }
    }
}

impl fmt::Display for ContractId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractSpec {
    pub id: ContractId,
    pub threshold: f64,
    /// Window size (ML-C2 only).
    pub window: usize,
    pub margin_alarm: f64,
}

impl ContractSpec {
    pub fn from_config(id: ContractId, config: &SystemConfig) -> Self {
        let threshold = match id {
            ContractId::NpC1 => config.delta_np,
            ContractId::NpC2 => 1e-12,
            ContractId::MarlC1 => config.delta_pi,
            ContractId::GnnC1 => config.eps_gnn,
            ContractId::MlC1 => config.t_critical,
            ContractId::MlC2 => 0.0,
        };
        Self {
            id,
            threshold,
            window: config.ml_c2_window,
            margin_alarm: config.margin_alarm,
        }
    }

    pub fn all(config: &SystemConfig) -> Vec<Self> {
        ContractId::ALL.iter().map(|&id| Self::from_config(id, config)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictStatus {
    Pass,
    Fail,
    /// Not enough evidence to decide; never counted as a pass.
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractVerdict {
    pub id: ContractId,
    pub t: f64,
    pub pass: bool,
    pub status: VerdictStatus,
    pub measured: f64,
    pub threshold: f64,
    pub margin: f64,
    pub alarm: bool,
}

/// Records a contract is evaluated on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Evidence<'a> {
    /// NP-C1: Hebbian step norms.
    StepNorms(&'a [f64]),
    /// NP-C2: per-probe `|safety_output(t) - safety_output(0)|`.
    SafetyDeviations(&'a [f64]),
    /// MARL-C1: realised TV steps.
    TvSteps(&'a [f64]),
    /// GNN-C1: approximation errors of admissible weight vectors.
    ApproxErrors(&'a [f64]),
    /// ML-C1: latest adaptation trial.
    Adaptation(Option<&'a AdaptationTrial>),
    /// ML-C2: inner-step counts in trial order.
    InnerCounts(&'a [u64]),
}

impl Evidence<'_> {
    fn contract(&self) -> ContractId {
        match self {
            Evidence::StepNorms(_) => ContractId::NpC1,
            Evidence::SafetyDeviations(_) => ContractId::NpC2,
            Evidence::TvSteps(_) => ContractId::MarlC1,
            Evidence::ApproxErrors(_) => ContractId::GnnC1,
            Evidence::Adaptation(_) => ContractId::MlC1,
            Evidence::InnerCounts(_) => ContractId::MlC2,
        }
    }
}

fn max_of(xs: &[f64]) -> Option<f64> {
    xs.iter().copied().reduce(f64::max)
}

/// Largest increase between consecutive rolling-window means.
pub fn windowed_increase(counts: &[u64], window: usize) -> Option<f64> {
    if window == 0 || counts.len() < window + 1 {
        return None;
    }
    let means: Vec<f64> = counts
        .windows(window)
        .map(|w| w.iter().sum::<u64>() as f64 / window as f64)
        .collect();
    means.windows(2).map(|m| m[1] - m[0]).reduce(f64::max)
}

/// Evaluate one contract. `state_margin` is the meta-space margin of the
/// current state; without it the quantity-space margin is reported.
pub fn check_contract(
    spec: &ContractSpec,
    evidence: &Evidence<'_>,
    t: f64,
    state_margin: Option<f64>,
) -> Result<ContractVerdict> {
    if evidence.contract() != spec.id {
        return Err(Error::InvalidArgument(format!(
            "evidence for {} passed to the {} monitor",
            evidence.contract(),
            spec.id
        )));
    }
    let measured = match evidence {
        Evidence::StepNorms(x) | Evidence::SafetyDeviations(x) | Evidence::TvSteps(x) | Evidence::ApproxErrors(x) => {
            max_of(x)
        }
        Evidence::Adaptation(trial) => trial.map(|a| if a.converged { a.t_adapt } else { f64::INFINITY }),
        Evidence::InnerCounts(k) => windowed_increase(k, spec.window),
    };
    let (status, measured) = match measured {
        None => (VerdictStatus::Inconclusive, f64::NAN),
        Some(m) if m <= spec.threshold => (VerdictStatus::Pass, m),
        Some(m) => (VerdictStatus::Fail, m),
    };
    let margin = match status {
        VerdictStatus::Fail => 0.0,
        _ => match state_margin {
            Some(m) => m.max(0.0),
            None if measured.is_nan() => 0.0,
            None => margin(spec, &MarginState::Measured(measured))?,
        },
    };
    Ok(ContractVerdict {
        id: spec.id,
        t,
        pass: status == VerdictStatus::Pass,
        status,
        measured,
        threshold: spec.threshold,
        margin,
        alarm: margin < spec.margin_alarm,
    })
}

/// Failure-set geometry in meta-parameter space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginGeometry {
    pub meta_bound: f64,
    /// NP-C1 fails where `delta_offset + delta_row . theta >= 0`.
    pub delta_row: Vec<f64>,
    pub delta_offset: f64,
}

impl MarginGeometry {
    pub fn new(cascade: &MetaCascade, config: &SystemConfig) -> Self {
        Self {
            meta_bound: config.meta_bound,
            delta_row: cascade.delta_row().to_vec(),
            delta_offset: cascade.base.delta + config.delta_guard,
        }
    }

    fn box_margin(&self, theta: &[f64]) -> f64 {
        theta
            .iter()
            .map(|t| self.meta_bound - t.abs())
            .fold(f64::INFINITY, f64::min)
            .max(0.0)
    }

    fn decay_margin(&self, theta: &[f64]) -> f64 {
        let s = self.delta_offset + dot(&self.delta_row, theta);
        let r = norm(&self.delta_row);
        if r == 0.0 {
            return if s < 0.0 { f64::INFINITY } else { 0.0 };
        }
        (-s / r).max(0.0)
    }
}

pub enum MarginState<'a> {
    /// Monitored quantity value; margin is `threshold - measured`.
    Measured(f64),
    Meta {
        theta: &'a [f64],
        geometry: &'a MarginGeometry,
    },
}

/// Robustness margin `m_k`, floored at zero. 1-Lipschitz in the state.
pub fn margin(spec: &ContractSpec, state: &MarginState<'_>) -> Result<f64> {
    match state {
        MarginState::Measured(x) => {
            if x.is_nan() {
                return Err(Error::InvalidArgument("margin of an undefined measurement".into()));
            }
            Ok((spec.threshold - x).max(0.0))
        }
        MarginState::Meta { theta, geometry } => {
            let b = geometry.box_margin(theta);
            Ok(match spec.id {
                ContractId::NpC1 => b.min(geometry.decay_margin(theta)),
                _ => b,
            })
        }
    }
}

/// Meta-space margins of all six contracts.
pub fn meta_margins(theta: &[f64], geometry: &MarginGeometry, config: &SystemConfig) -> Vec<(ContractId, f64)> {
    ContractSpec::all(config)
        .iter()
        .map(|spec| {
            let m = margin(spec, &MarginState::Meta { theta, geometry }).expect("meta margins are always defined");
            (spec.id, m)
        })
        .collect()
}

/// Evaluate every contract for which evidence is due at `t`.
pub fn monitor_tick(
    specs: &[ContractSpec],
    evidence: &[Evidence<'_>],
    t: f64,
    margins: &[(ContractId, f64)],
) -> Result<Vec<ContractVerdict>> {
    let mut out = Vec::new();
    for ev in evidence {
        let id = ev.contract();
        let Some(spec) = specs.iter().find(|s| s.id == id) else {
            continue;
        };
        let m = margins.iter().find(|(k, _)| *k == id).map(|(_, m)| *m);
        out.push(check_contract(spec, ev, t, m)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaptationTrial {
    /// Simulated seconds to re-converge (`k_inner * tau1`).
    pub t_adapt: f64,
    pub k_inner: u64,
    pub converged: bool,
}

/// Stub adaptation trial. Starting from the optimum for the reference
/// aggregate `z = 0`, the coordination target is displaced by
/// `adapt_perturbation` along a fixed seeded direction; inner steps of rate
/// `adapt_rate / (1 + meta_loss)` run until the probe-set TV to the new
/// optimum is at most `adapt_tolerance`, or `adapt_cap` steps elapse.
pub fn adaptation_trial(
    config: &SystemConfig,
    changed_environment: bool,
    meta_loss: f64,
    target: &CoordinationTarget,
    probes: &[Vec<f64>],
) -> AdaptationTrial {
    let done = |k: u64| AdaptationTrial {
        t_adapt: k as f64 * config.tau1,
        k_inner: k,
        converged: true,
    };
    if !changed_environment || config.adapt_perturbation == 0.0 {
        return done(0);
    }
    let b = config.policy_bound;
    let start: Vec<f64> = target.offset.iter().map(|x| x.clamp(-b, b)).collect();
    let mut r = rng::stream(config.seed, Stream::Adaptation);
    let dir = rng::unit_vec(&mut r, start.len());
    let goal = PolicyParams {
        theta_pi: start
            .iter()
            .zip(&dir)
            .map(|(s, d)| (s + config.adapt_perturbation * d).clamp(-b, b))
            .collect(),
    };
    let rate = config.adapt_rate / (1.0 + meta_loss.max(0.0));
    let mut current = PolicyParams { theta_pi: start };
    for k in 0..config.adapt_cap {
        if max_probe_tv(&current, &goal, probes, config) <= config.adapt_tolerance {
            return done(k);
        }
        for (c, g) in current.theta_pi.iter_mut().zip(&goal.theta_pi) {
            *c += rate * 2.0 * (g - *c);
        }
    }
    if max_probe_tv(&current, &goal, probes, config) <= config.adapt_tolerance {
        return done(config.adapt_cap);
    }
    AdaptationTrial {
        t_adapt: config.adapt_cap as f64 * config.tau1,
        k_inner: config.adapt_cap,
        converged: false,
    }
}
