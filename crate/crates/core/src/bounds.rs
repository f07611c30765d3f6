//! Closed-form bound calculator: weight and step bounds, drift per
//! coordination cycle, the three suboptimality components, the effective
//! horizon, rate caps, and the elasticity sweep.
//!
//! Quantities that are undefined outside the stable regime (`delta >= 0`)
//! are reported as `+inf` (serialised as JSON `null`).

use serde::{Deserialize, Serialize};

use crate::config::SystemConfig;
use crate::contracts::{meta_margins, MarginGeometry};
use crate::error::{Error, Result};
use crate::hebbian::{eta1_threshold, intrinsic_step_bound, weight_bounds};
use crate::meta::{cascading_sensitivity, MetaCascade, MetaParams};

fn ceil_ratio(x: f64) -> u64 {
    (x - 1e-9).ceil().max(0.0) as u64
}

/// Hebbian ticks per coordination cycle, `ceil(tau2 / tau1)`.
pub fn n12(config: &SystemConfig) -> u64 {
    ceil_ratio(config.tau2 / config.tau1)
}

/// `min(ceil(1/(1-gamma)), ceil(tau3/tau2), h_mission)`.
pub fn effective_horizon(config: &SystemConfig) -> u64 {
    ceil_ratio(1.0 / (1.0 - config.gamma_disc))
        .min(ceil_ratio(config.tau3 / config.tau2))
        .min(config.h_mission)
}

/// Per-tick step bound in force: the clamp-limited bound when NP-C1 is
/// enforced, otherwise the intrinsic bound.
pub fn step_bound(config: &SystemConfig) -> f64 {
    let intrinsic = intrinsic_step_bound(&config.rule(), config).unwrap_or(f64::INFINITY);
    if config.enforce_clamp {
        intrinsic.min(config.delta_np)
    } else {
        intrinsic
    }
}

/// Step size entering the direct plasticity term: the clamp when enforced.
fn hebb_step_cap(config: &SystemConfig) -> f64 {
    if config.enforce_clamp {
        config.delta_np
    } else {
        intrinsic_step_bound(&config.rule(), config).unwrap_or(f64::INFINITY)
    }
}

pub fn phi_max(config: &SystemConfig) -> f64 {
    config.lip_phi * n12(config) as f64 * step_bound(config)
}

pub fn eps_hebb(config: &SystemConfig) -> f64 {
    2.0 * config.lip_pi * config.lip_phi * hebb_step_cap(config) * config.value_grad_bound
        / (1.0 - config.gamma_disc)
}

fn eps_coord_with(config: &SystemConfig, h_eff: u64) -> f64 {
    let n = config.n_agents as f64;
    2.0 * h_eff as f64
        * config.lip_pi
        * (config.lip_gnn * n.sqrt() * phi_max(config) + config.eps_gnn)
        * config.r_max
}

fn eps_meta_with(config: &SystemConfig, h_eff: u64) -> f64 {
    2.0 * h_eff as f64
        * cascading_sensitivity(config)
        * config.eta3
        * config.g_max
        * (config.tau3 / config.tau1)
        * config.r_max
}

pub fn eps_coord(config: &SystemConfig) -> f64 {
    eps_coord_with(config, effective_horizon(config))
}

pub fn eps_meta(config: &SystemConfig) -> f64 {
    eps_meta_with(config, effective_horizon(config))
}

/// Largest Hebbian rate keeping one cycle's embedding drift within `eps_phi_star`.
pub fn eta1_max(config: &SystemConfig) -> f64 {
    let rule = config.rule();
    let w_max = weight_bounds(&rule).map(|(_, m)| m).unwrap_or(f64::INFINITY);
    config.eps_phi_star * config.tau1
        / (config.lip_phi * config.tau2 * config.sigma_max * (rule.drive() + rule.delta.abs() * w_max))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub n_agents: usize,
    pub clamp_enforced: bool,
    pub w0: f64,
    pub w_max: f64,
    pub eta1_bar: f64,
    pub delta1_int: f64,
    pub delta1_eff: f64,
    pub n12: u64,
    pub h_eff: u64,
    pub phi_max: f64,
    pub eps_hebb: f64,
    pub eps_coord: f64,
    pub eps_meta: f64,
    pub eps_total: f64,
    /// `eps_coord / eps_total`.
    pub coord_share: f64,
    pub k_cascade: f64,
    pub eta1_max_rec: f64,
    pub eta3_max_rec: f64,
    pub j_star: f64,
    pub relative_subopt: f64,
}

/// Manual overrides applied on top of a configuration.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BoundOverrides {
    pub h_eff: Option<u64>,
}

pub fn total_bound(config: &SystemConfig) -> Result<BoundReport> {
    total_bound_with(config, BoundOverrides::default())
}

pub fn total_bound_with(config: &SystemConfig, overrides: BoundOverrides) -> Result<BoundReport> {
    let rule = config.rule();
    let (w0, w_max) = weight_bounds(&rule).unwrap_or((f64::INFINITY, f64::INFINITY));
    let eta1_bar = eta1_threshold(&rule, config).unwrap_or(0.0);
    let delta1_int = intrinsic_step_bound(&rule, config).unwrap_or(f64::INFINITY);
    let h_eff = overrides.h_eff.unwrap_or_else(|| effective_horizon(config));
    let eps_hebb = eps_hebb(config);
    let eps_coord = eps_coord_with(config, h_eff);
    let eps_meta = eps_meta_with(config, h_eff);
    let eps_total = eps_hebb + eps_coord + eps_meta;
    let j_star = h_eff as f64 * config.n_agents as f64 * config.r_max;

    let cascade = MetaCascade::new(config)?;
    let geometry = MarginGeometry::new(&cascade, config);
    let min_margin = meta_margins(&MetaParams::zeros(config).theta, &geometry, config)
        .into_iter()
        .map(|(_, m)| m)
        .fold(f64::INFINITY, f64::min);

    Ok(BoundReport {
        n_agents: config.n_agents,
        clamp_enforced: config.enforce_clamp,
        w0,
        w_max,
        eta1_bar,
        delta1_int,
        delta1_eff: step_bound(config),
        n12: n12(config),
        h_eff,
        phi_max: phi_max(config),
        eps_hebb,
        eps_coord,
        eps_meta,
        eps_total,
        coord_share: eps_coord / eps_total,
        k_cascade: cascading_sensitivity(config),
        eta1_max_rec: eta1_max(config),
        eta3_max_rec: min_margin / config.g_max,
        j_star,
        relative_subopt: eps_total / j_star,
    })
}

/// Parameters accepted by [`elasticity_sweep`], in table order.
pub const SWEEP_PARAMETERS: [&str; 7] = ["delta_np", "h_eff", "lip_phi", "lip_pi", "n_agents", "eta1", "eta3"];

/// Published reference totals at `x2` and `x0.5` for the baseline with N = 30.
pub const REFERENCE_BASE_TOTAL: f64 = 75.1;

pub fn reference_total(parameter: &str, factor: f64) -> Option<f64> {
    let (up, down) = match parameter {
        "delta_np" | "h_eff" | "lip_phi" => (143.9, 41.3),
        "lip_pi" => (150.2, 37.6),
        "n_agents" => (97.2, 55.6),
        "eta1" => (75.1, 75.1),
        "eta3" => (81.1, 72.1),
        _ => return None,
    };
    if factor == 2.0 {
        Some(up)
    } else if factor == 0.5 {
        Some(down)
    } else {
        None
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityRow {
    pub parameter: String,
    pub factor: f64,
    /// Parameter value actually used (integers after rounding).
    pub value: f64,
    pub eps_total: f64,
    /// `(d eps / eps) / (d p / p)` against the unscaled configuration.
    pub elasticity: f64,
    pub reference: Option<f64>,
    /// `(eps_total - reference) / reference`.
    pub deviation: Option<f64>,
}

/// Recompute the total bound with one parameter scaled by each factor.
/// `eta1` is scaled with `delta_np` held fixed; `h_eff` is overridden
/// directly because the coordination-per-meta ratio caps it.
pub fn elasticity_sweep(config: &SystemConfig, parameter: &str, factors: &[f64]) -> Result<Vec<SensitivityRow>> {
    if !SWEEP_PARAMETERS.contains(&parameter) {
        return Err(Error::UnknownParameter(parameter.to_string()));
    }
    let base = total_bound(config)?;
    factors
        .iter()
        .map(|&f| {
            if !(f.is_finite() && f > 0.0) {
                return Err(Error::InvalidArgument(format!("sweep factor {f} must be positive")));
            }
            let mut c = config.clone();
            let mut ov = BoundOverrides::default();
            let (value, base_value) = match parameter {
                "delta_np" => {
                    c.delta_np *= f;
                    (c.delta_np, config.delta_np)
                }
                "lip_phi" => {
                    c.lip_phi *= f;
                    (c.lip_phi, config.lip_phi)
                }
                "lip_pi" => {
                    c.lip_pi *= f;
                    (c.lip_pi, config.lip_pi)
                }
                "eta1" => {
                    c.eta1 *= f;
                    (c.eta1, config.eta1)
                }
                "eta3" => {
                    c.eta3 *= f;
                    (c.eta3, config.eta3)
                }
                "n_agents" => {
                    c.n_agents = ((config.n_agents as f64 * f).round() as usize).max(1);
                    (c.n_agents as f64, config.n_agents as f64)
                }
                "h_eff" => {
                    let h = ((base.h_eff as f64 * f).round() as u64).max(1);
                    ov.h_eff = Some(h);
                    (h as f64, base.h_eff as f64)
                }
                _ => unreachable!(),
            };
            let r = total_bound_with(&c, ov)?;
            let rel_p = value / base_value - 1.0;
            let rel_e = r.eps_total / base.eps_total - 1.0;
            // Adding 0.0 turns a signed zero into +0.
            let elasticity = if rel_p == 0.0 { 0.0 } else { rel_e / rel_p + 0.0 };
            let reference = reference_total(parameter, f);
            Ok(SensitivityRow {
                parameter: parameter.to_string(),
                factor: f,
                value,
                eps_total: r.eps_total,
                elasticity,
                reference,
                deviation: reference.map(|x| (r.eps_total - x) / x),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> SystemConfig {
        SystemConfig::default()
    }

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    #[test]
    fn horizon_examples() {
        let mut c = cfg();
        assert_eq!(effective_horizon(&c), 10);
        c.gamma_disc = 0.5;
        c.tau3 = 2000.0;
        c.h_mission = 1000;
        assert_eq!(effective_horizon(&c), 2);
        let mut c = cfg();
        c.h_mission = 1;
        assert_eq!(effective_horizon(&c), 1);
    }

    #[test]
    fn drift_examples() {
        let mut c = cfg();
        assert!(rel(phi_max(&c), 0.05) < 1e-12);
        c.enforce_clamp = false;
        assert!(rel(phi_max(&c), 1.0575) < 1e-12);
        let mut c = cfg();
        c.tau2 = 20.0;
        c.tau3 = 200.0;
        assert!(rel(phi_max(&c), 0.5) < 1e-12);
    }

    #[test]
    fn component_examples() {
        let mut c = cfg();
        assert!(rel(eps_hebb(&c), 0.30) < 1e-12);
        c.gamma_disc = 0.9;
        assert!(rel(eps_hebb(&c), 0.03) < 1e-12);
        let mut c = cfg();
        c.delta_np = 0.0;
        assert_eq!(eps_hebb(&c), 0.0);

        let c = cfg();
        assert!(rel(eps_meta(&c), 6.0) < 1e-12);
        let mut z = c.clone();
        z.eta3 = 0.0;
        assert_eq!(eps_meta(&z), 0.0);
        z.eta3 = 2e-5;
        assert!(rel(eps_meta(&z), 12.0) < 1e-12);

        for (n, expect) in [(10, 40.9), (30, 68.8), (100, 123.0)] {
            let mut c = cfg();
            c.n_agents = n;
            assert!(rel(eps_coord(&c), expect) < 5e-3, "N={n}: {}", eps_coord(&c));
        }
    }

    #[test]
    fn report_is_additive_and_ordered() {
        let r = total_bound(&cfg()).unwrap();
        assert_eq!(r.eps_total, r.eps_hebb + r.eps_coord + r.eps_meta);
        assert!(r.delta1_eff <= r.delta1_int);
        assert_eq!(r.k_cascade, 30.0);
        assert_eq!(r.j_star, 300.0);
        assert!(r.eta3_max_rec > 1e-5);
    }

    #[test]
    fn rate_cap_examples() {
        let mut c = cfg();
        assert!((eta1_max(&c) - 4.7281e-5).abs() < 1e-9);
        let base = eta1_max(&c);
        c.tau2 = 4.0;
        assert!(rel(eta1_max(&c), base / 2.0) < 1e-12);
        c.eps_phi_star = 1e-300;
        assert!(eta1_max(&c) < 1e-290);
    }

    #[test]
    fn unbounded_regime_reports_infinities() {
        let mut c = cfg();
        c.delta = 0.0;
        c.enforce_clamp = false;
        let r = total_bound(&c).unwrap();
        assert!(r.w_max.is_infinite() && r.phi_max.is_infinite() && r.eps_total.is_infinite());
        let json = serde_json::to_value(&r).unwrap();
        assert!(json["w_max"].is_null());
    }

    #[test]
    fn sweep_examples() {
        let c = cfg();
        let pi = elasticity_sweep(&c, "lip_pi", &[2.0]).unwrap();
        assert!(rel(pi[0].eps_total, 150.2) < 5e-3);
        assert_eq!(pi[0].elasticity, 1.0);
        let e1 = elasticity_sweep(&c, "eta1", &[2.0, 0.5]).unwrap();
        assert!(e1.iter().all(|r| r.elasticity == 0.0));
        let np = elasticity_sweep(&c, "delta_np", &[2.0]).unwrap();
        assert!(rel(np[0].eps_total, 141.1) < 5e-3);
        assert!(matches!(elasticity_sweep(&c, "gamma", &[2.0]), Err(Error::UnknownParameter(_))));
    }
}
