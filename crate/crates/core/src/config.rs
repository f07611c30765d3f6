//! System configuration, loading, and the boundedness-condition report.
//!
//! Config files are flat key/value documents. TOML is the primary syntax
//! (`eta1 = 1e-3`); a JSON object with the same keys is accepted as well.
//! Every key is optional and falls back to the documented baseline; unknown
//! keys are rejected so that a typo in a bound-critical parameter cannot
//! silently revert to its default.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hebbian::{eta1_threshold, HebbianRule};

/// Communication topology used by the aggregation layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Topology {
    /// Each agent talks to its `ring_neighbors` nearest indices (half on each side).
    Ring,
    Complete,
}

/// Smoothness constant of the surrogate meta-loss `0.5 * |theta - theta*|^2`.
pub const META_LOSS_SMOOTHNESS: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemConfig {
    pub n_agents: usize,
    pub weight_dim: usize,
    pub embed_dim: usize,
    pub action_count: usize,
    pub meta_dim: usize,

    pub eta1: f64,
    pub eta2: f64,
    pub eta3: f64,
    pub tau1: f64,
    pub tau2: f64,
    pub tau3: f64,

    pub alpha: f64,
    pub beta: f64,
    pub gamma_h: f64,
    pub delta: f64,
    /// Modulation gain at saturation, `sigma(M_max)`.
    pub sigma_max: f64,
    pub m_max: f64,

    pub lip_phi: f64,
    pub lip_pi: f64,
    pub lip_gnn: f64,
    pub eps_gnn: f64,
    pub delta_np: f64,
    pub delta_pi: f64,

    pub gamma_disc: f64,
    pub r_max: f64,
    pub g_max: f64,
    pub lip_theta_to_h: f64,
    pub lip_h_to_w: f64,
    pub h_mission: u64,
    pub value_grad_bound: f64,

    pub rho12: f64,
    pub rho23: f64,
    pub eps_phi_star: f64,
    pub eps_coord_star: f64,
    pub eps_meta_star: f64,

    pub t_critical: f64,
    pub margin_alarm: f64,

    pub seed: u64,
    pub probe_state_count: usize,
    pub danger_probe_count: usize,
    pub frozen_fraction: f64,

    /// Half-width of the admissible policy box.
    pub policy_bound: f64,
    /// Half-width of the meta-parameter box used for margin geometry.
    pub meta_bound: f64,
    /// Meta-produced rules always satisfy `delta <= -delta_guard`.
    pub delta_guard: f64,
    pub graph: Topology,
    pub ring_neighbors: usize,
    pub encoder_squash: bool,
    /// Norm of every agent's initial weight vector.
    pub init_weight_norm: f64,
    /// NP-C1 enforcement: rescale oversized Hebbian steps.
    pub enforce_clamp: bool,
    pub marl_backtrack_cap: u32,

    /// Inner-loop rate of the adaptation trial behind ML-C1/ML-C2.
    pub adapt_rate: f64,
    pub adapt_perturbation: f64,
    pub adapt_tolerance: f64,
    pub adapt_cap: u64,
    pub ml_c2_window: usize,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            n_agents: 30,
            weight_dim: 64,
            embed_dim: 16,
            action_count: 8,
            meta_dim: 4,

            eta1: 1e-3,
            eta2: 1e-4,
            eta3: 1e-5,
            tau1: 0.02,
            tau2: 2.0,
            tau3: 20.0,

            alpha: 0.5,
            beta: 0.1,
            gamma_h: 0.1,
            delta: -0.01,
            sigma_max: 1.5,
            m_max: 4.0,

            lip_phi: 5.0,
            lip_pi: 3.0,
            lip_gnn: 4.0,
            eps_gnn: 0.05,
            delta_np: 1e-4,
            delta_pi: 0.01,

            gamma_disc: 0.99,
            r_max: 1.0,
            g_max: 1.0,
            lip_theta_to_h: 2.0,
            lip_h_to_w: 1.0,
            h_mission: 100,
            value_grad_bound: 1.0,

            rho12: 0.1,
            rho23: 0.1,
            eps_phi_star: 0.05,
            eps_coord_star: 3.0 * 5.0 * 1e-4 * 1.01,
            eps_meta_star: 1e-5 * 1.01,

            t_critical: 5.0,
            margin_alarm: 1e-3,

            seed: 7,
            probe_state_count: 32,
            danger_probe_count: 16,
            frozen_fraction: 0.125,

            policy_bound: 10.0,
            meta_bound: 1.0,
            delta_guard: 1e-3,
            graph: Topology::Ring,
            ring_neighbors: 4,
            encoder_squash: false,
            init_weight_norm: 1.0,
            enforce_clamp: true,
            marl_backtrack_cap: 60,

            adapt_rate: 0.05,
            adapt_perturbation: 0.5,
            adapt_tolerance: 1e-3,
            adapt_cap: 10_000,
            ml_c2_window: 3,
        }
    }
}

impl SystemConfig {
    /// Baseline Hebbian rule `(alpha, beta, gamma_h, delta)`.
    pub fn rule(&self) -> HebbianRule {
        HebbianRule {
            alpha: self.alpha,
            beta: self.beta,
            gamma_h: self.gamma_h,
            delta: self.delta,
        }
    }

    /// Number of frozen safety coordinates, `ceil(frozen_fraction * d)`.
    pub fn frozen_count(&self) -> usize {
        let n = (self.frozen_fraction * self.weight_dim as f64 - 1e-9).ceil();
        (n.max(0.0) as usize).min(self.weight_dim)
    }

    pub fn policy_dim(&self) -> usize {
        self.action_count * self.embed_dim
    }

    /// Check every structural invariant. Condition verdicts (S1-S5) are not
    /// errors; see [`validate_conditions`].
    pub fn validate(&self) -> Result<()> {
        let positive_ints = [
            ("n_agents", self.n_agents),
            ("weight_dim", self.weight_dim),
            ("embed_dim", self.embed_dim),
            ("meta_dim", self.meta_dim),
            ("probe_state_count", self.probe_state_count),
            ("danger_probe_count", self.danger_probe_count),
            ("ml_c2_window", self.ml_c2_window),
        ];
        for (name, v) in positive_ints {
            if v == 0 {
                return Err(Error::validation(name, format!("{name} must be positive")));
            }
        }
        if self.action_count < 2 {
            return Err(Error::validation("action_count", "action_count must be at least 2"));
        }
        if self.h_mission == 0 {
            return Err(Error::validation("h_mission", "h_mission must be positive"));
        }
        if self.adapt_cap == 0 {
            return Err(Error::validation("adapt_cap", "adapt_cap must be positive"));
        }
        if self.marl_backtrack_cap == 0 {
            return Err(Error::validation(
                "marl_backtrack_cap",
                "marl_backtrack_cap must be positive",
            ));
        }

        let finite = [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma_h", self.gamma_h),
            ("delta", self.delta),
        ];
        for (name, v) in finite {
            if !v.is_finite() {
                return Err(Error::validation(name, format!("{name} must be finite")));
            }
        }

        let strictly_positive = [
            ("eta1", self.eta1),
            ("eta2", self.eta2),
            ("eta3", self.eta3),
            ("tau1", self.tau1),
            ("tau2", self.tau2),
            ("tau3", self.tau3),
            ("sigma_max", self.sigma_max),
            ("m_max", self.m_max),
            ("lip_phi", self.lip_phi),
            ("lip_pi", self.lip_pi),
            ("lip_gnn", self.lip_gnn),
            ("delta_np", self.delta_np),
            ("delta_pi", self.delta_pi),
            ("r_max", self.r_max),
            ("g_max", self.g_max),
            ("lip_theta_to_h", self.lip_theta_to_h),
            ("lip_h_to_w", self.lip_h_to_w),
            ("value_grad_bound", self.value_grad_bound),
            ("rho12", self.rho12),
            ("rho23", self.rho23),
            ("eps_phi_star", self.eps_phi_star),
            ("eps_coord_star", self.eps_coord_star),
            ("eps_meta_star", self.eps_meta_star),
            ("t_critical", self.t_critical),
            ("policy_bound", self.policy_bound),
            ("meta_bound", self.meta_bound),
            ("adapt_rate", self.adapt_rate),
            ("adapt_tolerance", self.adapt_tolerance),
        ];
        for (name, v) in strictly_positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::validation(
                    name,
                    format!("{name} must be a finite positive number, got {v}"),
                ));
            }
        }
        // An infinite alarm threshold is allowed: it turns every verdict into an alarm.
        if !(self.margin_alarm > 0.0) {
            return Err(Error::validation("margin_alarm", "margin_alarm must be positive"));
        }

        let nonnegative = [
            ("eps_gnn", self.eps_gnn),
            ("delta_guard", self.delta_guard),
            ("init_weight_norm", self.init_weight_norm),
            ("adapt_perturbation", self.adapt_perturbation),
        ];
        for (name, v) in nonnegative {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::validation(
                    name,
                    format!("{name} must be a finite non-negative number, got {v}"),
                ));
            }
        }

        if !(self.gamma_disc > 0.0 && self.gamma_disc < 1.0) {
            return Err(Error::validation(
                "gamma_disc",
                format!("gamma_disc must lie in (0, 1), got {}", self.gamma_disc),
            ));
        }
        if !(self.frozen_fraction >= 0.0 && self.frozen_fraction < 1.0) {
            return Err(Error::validation(
                "frozen_fraction",
                format!("frozen_fraction must lie in [0, 1), got {}", self.frozen_fraction),
            ));
        }
        if self.adapt_rate >= 0.5 {
            return Err(Error::validation(
                "adapt_rate",
                "adapt_rate must be below 0.5 for the inner loop to contract",
            ));
        }
        if self.tau1 >= self.tau2 {
            return Err(Error::validation(
                "tau2",
                format!("tau1 < tau2 violated (tau1 = {}, tau2 = {})", self.tau1, self.tau2),
            ));
        }
        if self.tau2 >= self.tau3 {
            return Err(Error::validation(
                "tau3",
                format!("tau2 < tau3 violated (tau2 = {}, tau3 = {})", self.tau2, self.tau3),
            ));
        }
        Ok(())
    }

    /// Non-fatal observations about the configuration.
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.eta1 > self.eta2 && self.eta2 > self.eta3) {
            out.push(format!(
                "learning rates are not strictly decreasing across levels (eta1 = {}, eta2 = {}, eta3 = {})",
                self.eta1, self.eta2, self.eta3
            ));
        }
        out
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config fields are TOML-representable")
    }

    /// SHA-256 of the canonical JSON encoding, hex-encoded.
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Parse and validate a configuration document.
pub fn load_config(source: &str) -> Result<SystemConfig> {
    let config = parse_document(source)?;
    config.validate()?;
    Ok(config)
}

/// Like [`load_config`], then applies `key=value` overrides (values use TOML
/// literal syntax; bare words are taken as strings).
pub fn load_config_with_overrides<S: AsRef<str>>(
    source: &str,
    overrides: &[S],
) -> Result<SystemConfig> {
    let base = parse_document(source)?;
    let config = apply_overrides(&base, overrides)?;
    config.validate()?;
    Ok(config)
}

/// Apply `key=value` overrides to an existing configuration. The result is
/// not validated.
pub fn apply_overrides<S: AsRef<str>>(base: &SystemConfig, overrides: &[S]) -> Result<SystemConfig> {
    if overrides.is_empty() {
        return Ok(base.clone());
    }
    let mut table: toml::Table =
        toml::Table::try_from(base).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    for raw in overrides {
        let raw = raw.as_ref();
        let (key, value) = raw
            .split_once('=')
            .ok_or_else(|| Error::InvalidArgument(format!("override `{raw}` is not key=value")))?;
        let key = key.trim();
        let value = value.trim();
        if !table.contains_key(key) {
            return Err(Error::validation(key, format!("unknown config key `{key}`")));
        }
        let parsed = format!("v = {value}")
            .parse::<toml::Table>()
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(value.to_string()));
        table.insert(key.to_string(), parsed);
    }
    table
        .try_into()
        .map_err(|e: toml::de::Error| Error::validation("override", e.message().to_string()))
}

fn parse_document(source: &str) -> Result<SystemConfig> {
    if source.trim_start().starts_with('{') {
        return serde_json::from_str(source).map_err(|e| Error::ConfigParse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        });
    }
    toml::from_str(source).map_err(|e| {
        let (line, column) = e
            .span()
            .map(|span| line_column(source, span.start))
            .unwrap_or((0, 0));
        Error::ConfigParse {
            line,
            column,
            message: e.message().to_string(),
        }
    })
}

fn line_column(source: &str, offset: usize) -> (usize, usize) {
    let prefix = &source[..offset.min(source.len())];
    let line = prefix.matches('\n').count() + 1;
    let column = prefix.rfind('\n').map_or(prefix.len(), |i| prefix.len() - i - 1) + 1;
    (line, column)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditionStatus {
    Pass,
    Fail,
    /// Holds by assumption at start-up; checked at runtime by the monitors.
    Assumed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionCheck {
    pub quantity: String,
    pub measured: f64,
    pub threshold: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionVerdict {
    pub id: String,
    pub status: ConditionStatus,
    pub checks: Vec<ConditionCheck>,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub conditions: Vec<ConditionVerdict>,
    pub warnings: Vec<String>,
}

impl ConditionReport {
    pub fn get(&self, id: &str) -> Option<&ConditionVerdict> {
        self.conditions.iter().find(|c| c.id == id)
    }

    /// True when every checkable condition (S1-S4) passes.
    pub fn all_pass(&self) -> bool {
        self.conditions
            .iter()
            .all(|c| c.status != ConditionStatus::Fail)
    }
}

fn check(quantity: &str, measured: f64, threshold: f64) -> ConditionCheck {
    ConditionCheck {
        quantity: quantity.to_string(),
        measured,
        threshold,
        pass: measured <= threshold,
    }
}

fn verdict(id: &str, checks: Vec<ConditionCheck>, note: &str) -> ConditionVerdict {
    let status = if checks.iter().all(|c| c.pass) {
        ConditionStatus::Pass
    } else {
        ConditionStatus::Fail
    };
    ConditionVerdict {
        id: id.to_string(),
        status,
        checks,
        note: note.to_string(),
    }
}

/// Evaluate the five boundedness conditions for a configuration.
pub fn validate_conditions(config: &SystemConfig) -> ConditionReport {
    let rule = config.rule();
    // The threshold is undefined for delta >= 0; NaN makes the comparison fail.
    let eta_bar = eta1_threshold(&rule, config).unwrap_or(f64::NAN);
    let s1 = verdict(
        "S1",
        vec![
            ConditionCheck {
                quantity: "delta".into(),
                measured: config.delta,
                threshold: 0.0,
                pass: config.delta < 0.0,
            },
            check("eta1", config.eta1, eta_bar),
        ],
        "weight stabilization: delta < 0 and eta1 <= eta1_bar",
    );
    let s2 = verdict(
        "S2",
        vec![
            check("tau1/tau2", config.tau1 / config.tau2, config.rho12),
            check("tau2/tau3", config.tau2 / config.tau3, config.rho23),
        ],
        "timescale separation",
    );
    let s3 = verdict(
        "S3",
        vec![check(
            "lip_pi*lip_phi*delta_np",
            config.lip_pi * config.lip_phi * config.delta_np,
            config.eps_coord_star,
        )],
        "bounded fast-to-coordination impact",
    );
    let s4 = verdict(
        "S4",
        vec![check(
            "eta3*L_meta",
            config.eta3 * META_LOSS_SMOOTHNESS,
            config.eps_meta_star,
        )],
        "bounded meta step (surrogate meta-loss smoothness 1)",
    );
    let s5 = ConditionVerdict {
        id: "S5".into(),
        status: ConditionStatus::Assumed,
        checks: Vec::new(),
        note: "contracts assumed to hold at t0; verified at runtime by the contract monitors"
            .into(),
    };
    ConditionReport {
        conditions: vec![s1, s2, s3, s4, s5],
        warnings: config.warnings(),
    }
}
