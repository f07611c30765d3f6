//! Slow meta layer: clipped gradient descent on a quadratic meta-loss, the
//! affine map from meta-parameters to the Hebbian rule, and the step
//! admissibility check against contract margins.

use serde::{Deserialize, Serialize};

use crate::config::SystemConfig;
use crate::contracts::ContractId;
use crate::error::{Error, Result};
use crate::hebbian::HebbianRule;
use crate::linalg::{dist, norm, Matrix};
use crate::rng::{self, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaParams {
    pub theta: Vec<f64>,
}

impl MetaParams {
    pub fn zeros(config: &SystemConfig) -> Self {
        Self {
            theta: vec![0.0; config.meta_dim],
        }
    }
}

/// Minimiser `theta*` of the surrogate meta-loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaObjective {
    pub target: Vec<f64>,
}

impl MetaObjective {
    pub fn seeded(config: &SystemConfig) -> Self {
        let mut r = rng::stream(config.seed, Stream::MetaTarget);
        Self {
            target: rng::uniform_vec(&mut r, config.meta_dim, 0.5),
        }
    }

    /// `0.5 * |theta - theta*|^2`
    pub fn loss(&self, theta: &MetaParams) -> f64 {
        let d = dist(&theta.theta, &self.target);
        0.5 * d * d
    }
}

/// Gradient step of size `eta3` with the gradient clipped to norm `g_max`.
/// Returns the new parameters and the unclipped gradient norm.
pub fn meta_step(theta: &MetaParams, objective: &MetaObjective, config: &SystemConfig) -> (MetaParams, f64) {
    let grad: Vec<f64> = theta
        .theta
        .iter()
        .zip(&objective.target)
        .map(|(t, s)| t - s)
        .collect();
    let g = norm(&grad);
    if g == 0.0 {
        return (theta.clone(), 0.0);
    }
    let clip = if g > config.g_max { config.g_max / g } else { 1.0 };
    let next = theta
        .theta
        .iter()
        .zip(&grad)
        .map(|(t, d)| t - config.eta3 * clip * d)
        .collect();
    (MetaParams { theta: next }, g)
}

/// Affine map `theta -> base rule + A theta`, `|A| = lip_theta_to_h`, with
/// the resulting decay clamped to at most `-delta_guard`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaCascade {
    /// `4 x d_theta`; rows are offsets for alpha, beta, gamma_h, delta.
    pub map: Matrix,
    pub base: HebbianRule,
    pub delta_guard: f64,
}

impl MetaCascade {
    pub fn new(config: &SystemConfig) -> Result<Self> {
        let mut r = rng::stream(config.seed, Stream::Cascade);
        let mut map = Matrix::from_vec(4, config.meta_dim, rng::gaussian_vec(&mut r, 4 * config.meta_dim))?;
        map.calibrate(config.lip_theta_to_h)?;
        Ok(Self {
            map,
            base: config.rule(),
            delta_guard: config.delta_guard,
        })
    }

    /// Row mapping `theta` to the decay offset.
    pub fn delta_row(&self) -> &[f64] {
        self.map.row(3)
    }

    /// Decay before the guard is applied.
    pub fn raw_delta(&self, theta: &MetaParams) -> f64 {
        self.base.delta + crate::linalg::dot(self.delta_row(), &theta.theta)
    }
}

pub fn theta_to_rule(theta: &MetaParams, cascade: &MetaCascade) -> Result<HebbianRule> {
    if theta.theta.len() != cascade.map.cols {
        return Err(Error::Dimension {
            context: "meta parameters",
            expected: cascade.map.cols,
            actual: theta.theta.len(),
        });
    }
    let off = cascade.map.mul_vec(&theta.theta);
    let b = cascade.base;
    Ok(HebbianRule {
        alpha: b.alpha + off[0],
        beta: b.beta + off[1],
        gamma_h: b.gamma_h + off[2],
        delta: (b.delta + off[3]).min(-cascade.delta_guard),
    })
}

/// `K = L_pi * L_phi * L_{H->w} * L_{theta->H}`.
pub fn cascading_sensitivity(config: &SystemConfig) -> f64 {
    config.lip_pi * config.lip_phi * config.lip_h_to_w * config.lip_theta_to_h
}

/// Largest admissible meta rate for a given minimum margin.
pub fn max_meta_rate(min_margin: f64, config: &SystemConfig) -> Result<f64> {
    if !(min_margin > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "minimum margin {min_margin} is not positive: the state already lies in a failure set"
        )));
    }
    Ok(min_margin / config.g_max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompatibilityVerdict {
    /// Every margin strictly positive.
    pub m1: bool,
    /// Step within `eta3 * g_max`.
    pub m2: bool,
    /// Step strictly below the smallest margin.
    pub m3: bool,
    pub pass: bool,
    pub step_norm: f64,
    pub min_margin: f64,
    pub predicted_dpi: f64,
}

pub fn compatibility_check(
    delta_theta_norm: f64,
    margins: &[(ContractId, f64)],
    config: &SystemConfig,
) -> Result<CompatibilityVerdict> {
    if margins.is_empty() {
        return Err(Error::InvalidArgument("compatibility check needs at least one margin".into()));
    }
    let min_margin = margins.iter().map(|(_, m)| *m).fold(f64::INFINITY, f64::min);
    let m1 = margins.iter().all(|(_, m)| *m > 0.0);
    let m2 = delta_theta_norm <= config.eta3 * config.g_max + 1e-12;
    let m3 = delta_theta_norm < min_margin;
    Ok(CompatibilityVerdict {
        m1,
        m2,
        m3,
        pass: m1 && m2 && m3,
        step_norm: delta_theta_norm,
        min_margin,
        predicted_dpi: cascading_sensitivity(config) * delta_theta_norm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> SystemConfig {
        SystemConfig::default()
    }

    #[test]
    fn meta_step_examples() {
        let c = cfg();
        let obj = MetaObjective { target: vec![0.1, 0.2, 0.3, 0.4] };
        let at = MetaParams { theta: obj.target.clone() };
        let (next, g) = meta_step(&at, &obj, &c);
        assert_eq!((next, g), (at, 0.0));

        let far = MetaParams { theta: vec![10.1, 0.2, 0.3, 0.4] };
        let (next, g) = meta_step(&far, &obj, &c);
        assert!((g - 10.0).abs() < 1e-12);
        // One ulp at |theta| = 10 is ~1.8e-15.
        assert!((dist(&next.theta, &far.theta) - 1e-5).abs() < 1e-14);
    }

    #[test]
    fn seeded_objective_in_box() {
        let obj = MetaObjective::seeded(&cfg());
        assert_eq!(obj.target.len(), 4);
        assert!(obj.target.iter().all(|x| x.abs() <= 0.5));
    }

    #[test]
    fn cascade_examples() {
        let c = cfg();
        let casc = MetaCascade::new(&c).unwrap();
        assert_eq!(theta_to_rule(&MetaParams::zeros(&c), &casc).unwrap(), c.rule());
        let s = casc.map.spectral_norm().unwrap();
        assert!((s - 2.0).abs() < 2e-9);
        assert!(theta_to_rule(&MetaParams { theta: vec![0.0; 3] }, &casc).is_err());
        // Guard keeps the decay negative even far outside the meta box.
        let big = MetaParams { theta: vec![100.0; 4] };
        let neg = MetaParams { theta: vec![-100.0; 4] };
        assert!(theta_to_rule(&big, &casc).unwrap().delta <= -1e-3);
        assert!(theta_to_rule(&neg, &casc).unwrap().delta <= -1e-3);
    }

    #[test]
    fn sensitivity_and_rate_cap() {
        let mut c = cfg();
        assert_eq!(cascading_sensitivity(&c), 30.0);
        assert!((cascading_sensitivity(&c) * c.eta3 * c.g_max - 3e-4).abs() < 1e-18);
        assert_eq!(max_meta_rate(0.01, &c).unwrap(), 0.01);
        assert!(max_meta_rate(0.0, &c).is_err());
        c.g_max = 2.0;
        assert_eq!(max_meta_rate(0.01, &c).unwrap(), 0.005);
        c.lip_pi = 0.0;
        assert_eq!(cascading_sensitivity(&c), 0.0);
    }

    #[test]
    fn compatibility_examples() {
        let c = cfg();
        let m = |v: f64| vec![(ContractId::NpC1, v), (ContractId::MarlC1, 0.01)];
        let ok = compatibility_check(1e-5, &m(0.01), &c).unwrap();
        assert!(ok.pass);
        assert!((ok.predicted_dpi - 3e-4).abs() < 1e-18);
        assert!(!compatibility_check(1e-5, &m(0.0), &c).unwrap().m1);
        let edge = compatibility_check(1e-5, &m(1e-5), &c).unwrap();
        assert!(edge.m1 && edge.m2 && !edge.m3 && !edge.pass);
        assert!(!compatibility_check(2e-5, &m(0.01), &c).unwrap().m2);
        assert!(compatibility_check(1e-5, &[], &c).is_err());
    }
}
