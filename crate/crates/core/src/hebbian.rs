//! Fast-timescale Hebbian dynamics with norm clamping and a frozen safety
//! prefix, plus the closed-form weight and step bounds of the stable regime.

use serde::{Deserialize, Serialize};

use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::linalg::{dot, norm};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HebbianRule {
    pub alpha: f64,
    pub beta: f64,
    pub gamma_h: f64,
    pub delta: f64,
}

impl HebbianRule {
    /// `|alpha| + |beta| + |gamma_h|`.
    pub fn drive(&self) -> f64 {
        self.alpha.abs() + self.beta.abs() + self.gamma_h.abs()
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.alpha, self.beta, self.gamma_h, self.delta]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self {
            alpha: a[0],
            beta: a[1],
            gamma_h: a[2],
            delta: a[3],
        }
    }

    /// Euclidean distance in `(alpha, beta, gamma_h, delta)` space.
    pub fn distance(&self, other: &HebbianRule) -> f64 {
        crate::linalg::dist(&self.as_array(), &other.as_array())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub x_pre: Vec<f64>,
    pub x_post: Vec<f64>,
}

impl Observation {
    pub fn zeros(d: usize) -> Self {
        Self {
            x_pre: vec![0.0; d],
            x_post: vec![0.0; d],
        }
    }

    pub fn is_admissible(&self) -> bool {
        norm(&self.x_pre) <= 1.0 + 1e-12 && norm(&self.x_post) <= 1.0 + 1e-12
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub id: usize,
    pub weights: Vec<f64>,
    /// `true` marks a safety synapse that never changes.
    pub frozen_mask: Vec<bool>,
}

impl AgentState {
    /// Agent whose first `frozen` coordinates are safety synapses.
    pub fn new(id: usize, weights: Vec<f64>, frozen: usize) -> Self {
        let frozen_mask = (0..weights.len()).map(|i| i < frozen).collect();
        Self {
            id,
            weights,
            frozen_mask,
        }
    }

    pub fn weight_norm(&self) -> f64 {
        norm(&self.weights)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub agent_id: usize,
    pub tick: u64,
    pub step_norm: f64,
    pub clamped: bool,
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Modulation gain `sigma(M)`, normalised so that `sigma(m_max) = sigma_max`.
pub fn modulation_gain(m_signal: f64, config: &SystemConfig) -> Result<f64> {
    if !(m_signal.abs() <= config.m_max) {
        return Err(Error::ModulationBound {
            value: m_signal,
            bound: config.m_max,
        });
    }
    if m_signal == config.m_max {
        return Ok(config.sigma_max);
    }
    Ok(config.sigma_max * logistic(m_signal) / logistic(config.m_max))
}

/// Hebbian direction for a fixed gain. Coordinates flagged in `skip` get 0.
pub fn hebbian_direction(
    obs: &Observation,
    w: &[f64],
    gain: f64,
    rule: &HebbianRule,
    skip: Option<&[bool]>,
) -> Result<Vec<f64>> {
    let d = w.len();
    for (context, len) in [("x_pre", obs.x_pre.len()), ("x_post", obs.x_post.len())] {
        if len != d {
            return Err(Error::Dimension {
                context,
                expected: d,
                actual: len,
            });
        }
    }
    if let Some(mask) = skip {
        if mask.len() != d {
            return Err(Error::Dimension {
                context: "frozen mask",
                expected: d,
                actual: mask.len(),
            });
        }
    }
    let mut h = vec![0.0; d];
    for (i, out) in h.iter_mut().enumerate() {
        if skip.is_some_and(|m| m[i]) {
            continue;
        }
        let (x, y) = (obs.x_pre[i], obs.x_post[i]);
        *out = gain * (rule.alpha * x * y + rule.beta * x + rule.gamma_h * y + rule.delta * w[i]);
    }
    Ok(h)
}

/// `h = sigma(M) (alpha x_pre*x_post + beta x_pre + gamma x_post + delta w)`.
pub fn hebbian_delta(
    obs: &Observation,
    w: &[f64],
    m_signal: f64,
    rule: &HebbianRule,
    config: &SystemConfig,
) -> Result<Vec<f64>> {
    let gain = modulation_gain(m_signal, config)?;
    hebbian_direction(obs, w, gain, rule, None)
}

/// One in-place Hebbian update of the plastic coordinates.
pub fn hebbian_step_in_place(
    agent: &mut AgentState,
    obs: &Observation,
    m_signal: f64,
    rule: &HebbianRule,
    config: &SystemConfig,
    enforce_clamp: bool,
    tick: u64,
) -> Result<StepRecord> {
    let gain = modulation_gain(m_signal, config)?;
    let mut dw = hebbian_direction(obs, &agent.weights, gain, rule, Some(&agent.frozen_mask))?;
    dw.iter_mut().for_each(|x| *x *= config.eta1);
    let raw = norm(&dw);
    let (step_norm, clamped) = if enforce_clamp && raw > config.delta_np {
        let s = config.delta_np / raw;
        dw.iter_mut().for_each(|x| *x *= s);
        (norm(&dw).min(config.delta_np), true)
    } else {
        (raw, false)
    };
    for (w, d) in agent.weights.iter_mut().zip(&dw) {
        *w += d;
    }
    Ok(StepRecord {
        agent_id: agent.id,
        tick,
        step_norm,
        clamped,
    })
}

pub fn hebbian_step(
    agent: &AgentState,
    obs: &Observation,
    m_signal: f64,
    rule: &HebbianRule,
    config: &SystemConfig,
    enforce_clamp: bool,
    tick: u64,
) -> Result<(AgentState, StepRecord)> {
    let mut next = agent.clone();
    let record = hebbian_step_in_place(&mut next, obs, m_signal, rule, config, enforce_clamp, tick)?;
    Ok((next, record))
}

/// `(W0, W_max) = (A/|delta|, A/|delta| + 1)`.
pub fn weight_bounds(rule: &HebbianRule) -> Result<(f64, f64)> {
    if !(rule.delta < 0.0) {
        return Err(Error::UnboundedRegime { delta: rule.delta });
    }
    let w0 = rule.drive() / rule.delta.abs();
    Ok((w0, w0 + 1.0))
}

/// Sufficient Hebbian rate threshold. `+inf` when the rule has no drive.
pub fn eta1_threshold(rule: &HebbianRule, config: &SystemConfig) -> Result<f64> {
    let (w0, _) = weight_bounds(rule)?;
    let a = rule.drive();
    if a == 0.0 {
        return Ok(f64::INFINITY);
    }
    let d = rule.delta.abs();
    let s = a + d * w0;
    Ok(2.0 * d / (s * s * config.sigma_max * config.sigma_max))
}

/// Largest unclamped step while `|w| <= W_max`.
pub fn intrinsic_step_bound(rule: &HebbianRule, config: &SystemConfig) -> Result<f64> {
    let (_, w_max) = weight_bounds(rule)?;
    Ok(config.eta1 * config.sigma_max * (rule.drive() + rule.delta.abs() * w_max))
}

/// `min(intrinsic bound, delta_np)`; the clamp alone bounds the step when the
/// rule is not stabilising.
pub fn effective_step_bound(rule: &HebbianRule, config: &SystemConfig) -> f64 {
    intrinsic_step_bound(rule, config)
        .unwrap_or(f64::INFINITY)
        .min(config.delta_np)
}

/// Probe response restricted to the frozen synapses.
pub fn safety_output(agent: &AgentState, probe: &[f64]) -> Result<f64> {
    if probe.len() != agent.weights.len() {
        return Err(Error::Dimension {
            context: "safety probe",
            expected: agent.weights.len(),
            actual: probe.len(),
        });
    }
    Ok(agent
        .weights
        .iter()
        .zip(probe)
        .zip(&agent.frozen_mask)
        .filter(|(_, &frozen)| frozen)
        .map(|((w, p), _)| w * p)
        .sum())
}

/// Plain inner product, used to cross-check `safety_output` on fully frozen agents.
pub fn full_response(agent: &AgentState, probe: &[f64]) -> f64 {
    dot(&agent.weights, probe)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> SystemConfig {
        SystemConfig::default()
    }

    fn basis(d: usize, i: usize) -> Vec<f64> {
        let mut v = vec![0.0; d];
        v[i] = 1.0;
        v
    }

    #[test]
    fn gain_values() {
        let c = cfg();
        assert_eq!(modulation_gain(4.0, &c).unwrap(), 1.5);
        let g0 = modulation_gain(0.0, &c).unwrap();
        let oracle = 1.5 * 0.5 / (1.0 / (1.0 + (-4.0f64).exp()));
        assert!((g0 - oracle).abs() < 1e-15);
        assert!((g0 - 0.7637).abs() < 1e-4);
        assert!(modulation_gain(4.0001, &c).is_err());
        assert!(modulation_gain(f64::NAN, &c).is_err());
    }

    #[test]
    fn delta_examples() {
        let c = cfg();
        let rule = c.rule();
        let z = hebbian_delta(&Observation::zeros(4), &[0.0; 4], 0.0, &rule, &c).unwrap();
        assert!(z.iter().all(|&x| x == 0.0));

        let hebb_only = HebbianRule { alpha: 1.0, beta: 0.0, gamma_h: 0.0, delta: 0.0 };
        let e1 = basis(4, 0);
        let obs = Observation { x_pre: e1.clone(), x_post: e1.clone() };
        assert_eq!(hebbian_direction(&obs, &[0.0; 4], 1.0, &hebb_only, None).unwrap(), e1);

        let h = hebbian_delta(&obs, &e1, c.m_max, &rule, &c).unwrap();
        assert!((h[0] - 1.035).abs() < 1e-12);
        assert!(h[1..].iter().all(|&x| x == 0.0));

        let bad = Observation { x_pre: vec![0.0; 3], x_post: vec![0.0; 4] };
        assert!(hebbian_delta(&bad, &e1, 0.0, &rule, &c).is_err());
    }

    #[test]
    fn pure_decay_step() {
        // Gain pinned to 1 so only delta*w remains.
        let mut c = cfg();
        c.sigma_max = 1.0;
        let agent = AgentState::new(0, basis(4, 1), 0);
        let (next, rec) =
            hebbian_step(&agent, &Observation::zeros(4), c.m_max, &c.rule(), &c, true, 0).unwrap();
        assert!((next.weights[1] - (1.0 - 1e-5)).abs() < 1e-15);
        assert!((rec.step_norm - 1e-5).abs() < 1e-15);
        assert!(!rec.clamped);
    }

    #[test]
    fn clamp_rescales_to_cap() {
        // Unit aligned observation on a plastic coordinate gives
        // 1e-3 * 1.5 * (0.5 + 0.1 + 0.1 + 0.01 * 70) = 2.1e-3 unclamped.
        let c = cfg();
        let d = 64;
        let e = basis(d, 10);
        let mut w = vec![0.0; d];
        w[10] = -70.0;
        let agent = AgentState::new(0, w, 8);
        let obs = Observation { x_pre: e.clone(), x_post: e };
        let (_, free) = hebbian_step(&agent, &obs, c.m_max, &c.rule(), &c, false, 0).unwrap();
        let (_, clamped) = hebbian_step(&agent, &obs, c.m_max, &c.rule(), &c, true, 0).unwrap();
        assert!(free.step_norm > c.delta_np);
        assert!(clamped.clamped);
        assert!((clamped.step_norm - 1e-4).abs() < 1e-18);
    }

    #[test]
    fn fully_frozen_agent_never_moves() {
        let c = cfg();
        let agent = AgentState::new(0, vec![0.3; 8], 8);
        let obs = Observation { x_pre: vec![0.3; 8], x_post: vec![0.2; 8] };
        let (next, rec) = hebbian_step(&agent, &obs, 2.0, &c.rule(), &c, true, 0).unwrap();
        assert_eq!(next.weights, agent.weights);
        assert_eq!(rec.step_norm, 0.0);
    }

    #[test]
    fn closed_form_bounds() {
        let c = cfg();
        let rule = c.rule();
        let (w0, wm) = weight_bounds(&rule).unwrap();
        assert!((w0 - 70.0).abs() < 1e-12 && (wm - 71.0).abs() < 1e-12);
        let zero = HebbianRule { alpha: 0.0, beta: 0.0, gamma_h: 0.0, delta: -1.0 };
        assert_eq!(weight_bounds(&zero).unwrap(), (0.0, 1.0));
        let other = HebbianRule { alpha: 0.2, beta: 0.1, gamma_h: 0.1, delta: -0.05 };
        let (a, b) = weight_bounds(&other).unwrap();
        assert!((a - 8.0).abs() < 1e-12 && (b - 9.0).abs() < 1e-12);
        assert!(weight_bounds(&HebbianRule { delta: 0.0, ..rule }).is_err());

        assert!((eta1_threshold(&rule, &c).unwrap() - 0.02 / (1.96 * 2.25)).abs() < 1e-15);
        let mut flat = c.clone();
        flat.sigma_max = 1.0;
        assert!((eta1_threshold(&rule, &flat).unwrap() - 1.0204e-2).abs() < 1e-6);
        assert_eq!(eta1_threshold(&HebbianRule { delta: -0.02, ..zero }, &c).unwrap(), f64::INFINITY);

        assert!((intrinsic_step_bound(&rule, &c).unwrap() - 2.115e-3).abs() < 1e-15);
        let mut fast = c.clone();
        fast.eta1 = 2e-3;
        assert!((intrinsic_step_bound(&rule, &fast).unwrap() - 4.23e-3).abs() < 1e-15);
        fast.eta1 = 0.0;
        assert_eq!(intrinsic_step_bound(&rule, &fast).unwrap(), 0.0);

        assert_eq!(effective_step_bound(&rule, &c), 1e-4);
        let mut loose = c.clone();
        loose.delta_np = 1.0;
        assert!((effective_step_bound(&rule, &loose) - 2.115e-3).abs() < 1e-15);
        loose.delta_np = intrinsic_step_bound(&rule, &c).unwrap();
        assert_eq!(effective_step_bound(&rule, &loose), loose.delta_np);
    }

    #[test]
    fn safety_output_sees_only_frozen() {
        let frozen = AgentState::new(0, vec![1.0, 2.0, 3.0], 3);
        assert_eq!(safety_output(&frozen, &[1.0, 2.0, 3.0]).unwrap(), 14.0);
        assert_eq!(full_response(&frozen, &[1.0, 2.0, 3.0]), 14.0);
        let mixed = AgentState::new(0, vec![5.0, 6.0, 7.0], 1);
        assert_eq!(safety_output(&mixed, &[0.0, 1.0, 1.0]).unwrap(), 0.0);
        assert!(safety_output(&mixed, &[1.0]).is_err());
    }
}
