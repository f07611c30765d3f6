//! Coordination-level surrogates: a Lipschitz encoder, bounded GNN
//! approximation error, neighbourhood aggregation, a TV-Lipschitz softmax
//! policy, the modulation signal, and the projected trust-region MARL step.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{SystemConfig, Topology};
use crate::contracts::ContractId;
use crate::error::{Error, Result};
use crate::hebbian::{weight_bounds, HebbianRule};
use crate::linalg::{dist, mean_of, norm, Matrix};
use crate::rng::{self, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingEncoder {
    /// `p x d`, operator norm `lip_phi`.
    pub matrix: Matrix,
    pub squash: bool,
    pub seed: u64,
}

pub fn make_encoder(config: &SystemConfig) -> Result<EmbeddingEncoder> {
    let mut r = rng::stream(config.seed, Stream::Encoder);
    let data = rng::gaussian_vec(&mut r, config.embed_dim * config.weight_dim);
    let mut matrix = Matrix::from_vec(config.embed_dim, config.weight_dim, data)?;
    matrix.calibrate(config.lip_phi)?;
    Ok(EmbeddingEncoder {
        matrix,
        squash: config.encoder_squash,
        seed: config.seed,
    })
}

/// `phi(w)`: linear map followed by an optional coordinate-wise `tanh`.
pub fn embed(w: &[f64], encoder: &EmbeddingEncoder) -> Result<Vec<f64>> {
    if w.len() != encoder.matrix.cols {
        return Err(Error::Dimension {
            context: "embed input",
            expected: encoder.matrix.cols,
            actual: w.len(),
        });
    }
    let mut out = encoder.matrix.mul_vec(w);
    if encoder.squash {
        out.iter_mut().for_each(|x| *x = x.tanh());
    }
    Ok(out)
}

/// The ideal embedding `phi*`; identical to [`embed`].
pub fn ideal_embed(w: &[f64], encoder: &EmbeddingEncoder) -> Result<Vec<f64>> {
    embed(w, encoder)
}

/// Deterministic perturbation `e(w)` with `|e(w)| <= eps_gnn`.
pub fn gnn_error(w: &[f64], config: &SystemConfig) -> Vec<f64> {
    let p = config.embed_dim;
    if config.eps_gnn == 0.0 {
        return vec![0.0; p];
    }
    let mut hasher = Sha256::new();
    hasher.update(config.seed.to_le_bytes());
    for x in w {
        hasher.update(x.to_bits().to_le_bytes());
    }
    let digest = hasher.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest[..32]);
    let mut r = ChaCha8Rng::from_seed(key);
    let frac: f64 = r.random::<f64>().min(1.0 - 1e-12);
    let dir = rng::unit_vec(&mut r, p);
    let mag = config.eps_gnn * frac;
    dir.into_iter().map(|x| x * mag).collect()
}

/// Realised encoder output `phi(w) = phi*(w) + e(w)`.
pub fn realized_embed(w: &[f64], encoder: &EmbeddingEncoder, config: &SystemConfig) -> Result<Vec<f64>> {
    let mut phi = embed(w, encoder)?;
    for (a, e) in phi.iter_mut().zip(gnn_error(w, config)) {
        *a += e;
    }
    Ok(phi)
}

fn w_max_for(rule: &HebbianRule) -> f64 {
    weight_bounds(rule).map(|(_, m)| m).unwrap_or(f64::INFINITY)
}

/// `|phi(w) - phi*(w)|`. Requires `|w| <= W_max` of the configured rule.
pub fn approx_error(w: &[f64], encoder: &EmbeddingEncoder, config: &SystemConfig) -> Result<f64> {
    let w_max = w_max_for(&config.rule());
    let wn = norm(w);
    if wn > w_max {
        return Err(Error::Precondition {
            contract: ContractId::GnnC1,
            message: format!("|w| = {wn} exceeds W_max = {w_max}"),
        });
    }
    let ideal = ideal_embed(w, encoder)?;
    let real = realized_embed(w, encoder, config)?;
    Ok(dist(&ideal, &real))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjacencyGraph {
    pub neighbors: Vec<Vec<usize>>,
}

impl AdjacencyGraph {
    /// Ring in which each node links to `k/2` nodes on each side.
    pub fn ring(n: usize, k: usize) -> Self {
        let neighbors = (0..n)
            .map(|i| {
                let mut list: Vec<usize> = (1..=k / 2)
                    .flat_map(|off| [(i + off) % n, (i + n - off % n) % n])
                    .filter(|&j| j != i)
                    .collect();
                list.sort_unstable();
                list.dedup();
                list
            })
            .collect();
        Self { neighbors }
    }

    pub fn complete(n: usize) -> Self {
        Self {
            neighbors: (0..n).map(|i| (0..n).filter(|&j| j != i).collect()).collect(),
        }
    }

    pub fn from_config(config: &SystemConfig) -> Self {
        match config.graph {
            Topology::Ring => Self::ring(config.n_agents, config.ring_neighbors),
            Topology::Complete => Self::complete(config.n_agents),
        }
    }

    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    pub fn max_degree(&self) -> usize {
        self.neighbors.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn is_symmetric(&self) -> bool {
        self.neighbors.iter().enumerate().all(|(i, list)| {
            list.iter().all(|&j| j != i && self.neighbors[j].contains(&i))
        })
    }
}

/// Aggregation scale `lip_gnn / sqrt(deg_max + 1)`.
pub fn aggregation_scale(graph: &AdjacencyGraph, config: &SystemConfig) -> f64 {
    config.lip_gnn / ((graph.max_degree() + 1) as f64).sqrt()
}

/// `z_i = c * sum over N(i) and i of phi_j`.
pub fn aggregate(embeddings: &[Vec<f64>], graph: &AdjacencyGraph, config: &SystemConfig) -> Result<Vec<Vec<f64>>> {
    if embeddings.len() != graph.len() {
        return Err(Error::Dimension {
            context: "aggregate agent count",
            expected: graph.len(),
            actual: embeddings.len(),
        });
    }
    let c = aggregation_scale(graph, config);
    let p = embeddings.first().map_or(0, Vec::len);
    Ok(graph
        .neighbors
        .iter()
        .enumerate()
        .map(|(i, list)| {
            let mut z = embeddings[i].clone();
            for &j in list {
                for (a, b) in z.iter_mut().zip(&embeddings[j]) {
                    *a += b;
                }
            }
            z.truncate(p);
            z.iter_mut().for_each(|x| *x *= c);
            z
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    /// `action_count x p`, row-major.
    pub theta_pi: Vec<f64>,
}

impl PolicyParams {
    pub fn zeros(config: &SystemConfig) -> Self {
        Self {
            theta_pi: vec![0.0; config.policy_dim()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionDistribution {
    pub probs: Vec<f64>,
}

/// Logit gain `kappa = min(1, 2 L_pi / sum_a |row_a|)`.
pub fn logit_gain(params: &PolicyParams, config: &SystemConfig) -> f64 {
    let p = config.embed_dim;
    let row_sum: f64 = params.theta_pi.chunks(p).map(norm).sum();
    if row_sum == 0.0 {
        1.0
    } else {
        (2.0 * config.lip_pi / row_sum).min(1.0)
    }
}

pub fn policy_logits(z: &[f64], params: &PolicyParams, config: &SystemConfig) -> Vec<f64> {
    let kappa = logit_gain(params, config);
    params
        .theta_pi
        .chunks(config.embed_dim)
        .map(|row| kappa * crate::linalg::dot(row, z))
        .collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter_mut().for_each(|x| *x /= s);
    e
}

/// Softmax policy whose TV distance is `lip_pi`-Lipschitz in `z`.
pub fn policy_dist(z: &[f64], params: &PolicyParams, config: &SystemConfig) -> ActionDistribution {
    ActionDistribution {
        probs: softmax(&policy_logits(z, params, config)),
    }
}

/// `m_max * tanh(|z_i - z_mean|)`.
pub fn modulation(z_i: &[f64], z_mean: &[f64], config: &SystemConfig) -> f64 {
    (config.m_max * dist(z_i, z_mean).tanh()).min(config.m_max)
}

/// Affine coordination target `T z + b` with `|T| = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordinationTarget {
    pub map: Matrix,
    pub offset: Vec<f64>,
}

impl CoordinationTarget {
    pub fn new(config: &SystemConfig) -> Result<Self> {
        let mut r = rng::stream(config.seed, Stream::Target);
        let dim = config.policy_dim();
        let mut map = Matrix::from_vec(dim, config.embed_dim, rng::gaussian_vec(&mut r, dim * config.embed_dim))?;
        map.calibrate(1.0)?;
        let offset = rng::uniform_vec(&mut r, dim, 1.0);
        Ok(Self { map, offset })
    }

    pub fn eval(&self, z_mean: &[f64]) -> Vec<f64> {
        let mut t = self.map.mul_vec(z_mean);
        for (a, b) in t.iter_mut().zip(&self.offset) {
            *a += b;
        }
        t
    }
}

/// Fixed aggregate vectors over which policy TV maxima are taken.
pub fn probe_states(config: &SystemConfig) -> Vec<Vec<f64>> {
    let mut r = rng::stream(config.seed, Stream::ProbeStates);
    (0..config.probe_state_count)
        .map(|_| rng::gaussian_vec(&mut r, config.embed_dim))
        .collect()
}

pub fn max_probe_tv(a: &PolicyParams, b: &PolicyParams, probes: &[Vec<f64>], config: &SystemConfig) -> f64 {
    probes
        .iter()
        .map(|z| {
            let p = policy_dist(z, a, config);
            let q = policy_dist(z, b, config);
            0.5 * p.probs.iter().zip(&q.probs).map(|(x, y)| (x - y).abs()).sum::<f64>()
        })
        .fold(0.0, f64::max)
}

/// One projected gradient step on `J = -|theta - target(z_mean)|^2`, with
/// step halving until the probe-set TV change is at most `delta_pi`.
pub fn marl_step(
    params: &PolicyParams,
    aggregated: &[Vec<f64>],
    target: &CoordinationTarget,
    probes: &[Vec<f64>],
    config: &SystemConfig,
) -> Result<(PolicyParams, f64)> {
    if config.eta2 == 0.0 {
        return Ok((params.clone(), 0.0));
    }
    let z_mean = mean_of(aggregated, config.embed_dim);
    let goal = target.eval(&z_mean);
    let b = config.policy_bound;
    let mut scale = 1.0;
    for _ in 0..=config.marl_backtrack_cap {
        let theta_pi: Vec<f64> = params
            .theta_pi
            .iter()
            .zip(&goal)
            .map(|(t, g)| (t + config.eta2 * scale * 2.0 * (g - t)).clamp(-b, b))
            .collect();
        let next = PolicyParams { theta_pi };
        let tv = max_probe_tv(params, &next, probes, config);
        if tv <= config.delta_pi {
            return Ok((next, tv));
        }
        scale *= 0.5;
    }
    Err(Error::Enforcement {
        contract: ContractId::MarlC1,
        message: format!(
            "trust-region backtracking exceeded {} halvings",
            config.marl_backtrack_cap
        ),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> SystemConfig {
        SystemConfig::default()
    }

    #[test]
    fn encoder_is_deterministic_and_calibrated() {
        let c = cfg();
        let a = make_encoder(&c).unwrap();
        let b = make_encoder(&c).unwrap();
        assert_eq!(a, b);
        let s = a.matrix.spectral_norm().unwrap();
        assert!((s - 5.0).abs() <= 5.0 * 1e-9);
    }

    #[test]
    fn embed_zero_and_linearity() {
        let c = cfg();
        let enc = make_encoder(&c).unwrap();
        assert!(embed(&vec![0.0; 64], &enc).unwrap().iter().all(|&x| x == 0.0));
        let w: Vec<f64> = (0..64).map(|i| (i as f64).cos()).collect();
        let w2: Vec<f64> = w.iter().map(|x| 2.0 * x).collect();
        let (e1, e2) = (embed(&w, &enc).unwrap(), embed(&w2, &enc).unwrap());
        for (a, b) in e1.iter().zip(&e2) {
            assert!((2.0 * a - b).abs() < 1e-12);
        }
        assert!(embed(&[1.0], &enc).is_err());
    }

    #[test]
    fn gnn_error_bounds() {
        let mut c = cfg();
        let enc = make_encoder(&c).unwrap();
        let w: Vec<f64> = (0..64).map(|i| 0.1 * (i as f64).sin()).collect();
        let e = approx_error(&w, &enc, &c).unwrap();
        assert!(e <= 0.05);
        assert_eq!(e, approx_error(&w, &enc, &c).unwrap());
        c.eps_gnn = 0.0;
        assert_eq!(approx_error(&w, &enc, &c).unwrap(), 0.0);
        let huge = vec![100.0; 64];
        assert!(matches!(approx_error(&huge, &enc, &c), Err(Error::Precondition { .. })));
    }

    #[test]
    fn graphs() {
        let ring = AdjacencyGraph::ring(30, 4);
        assert!(ring.is_symmetric());
        assert_eq!(ring.max_degree(), 4);
        assert_eq!(ring.neighbors[0], vec![1, 2, 28, 29]);
        let small = AdjacencyGraph::ring(3, 4);
        assert!(small.is_symmetric());
        assert_eq!(small.max_degree(), 2);
        let single = AdjacencyGraph::ring(1, 4);
        assert!(single.neighbors[0].is_empty());
        let full = AdjacencyGraph::complete(30);
        assert!(full.is_symmetric());
        assert_eq!(full.max_degree(), 29);
    }

    #[test]
    fn aggregation_examples() {
        let c = cfg();
        let single = AdjacencyGraph::ring(1, 4);
        let phi = vec![vec![1.0, 2.0]];
        let z = aggregate(&phi, &single, &c).unwrap();
        assert!(norm(&z[0]) <= 4.0 * norm(&phi[0]) + 1e-12);

        let full = AdjacencyGraph::complete(30);
        let v = vec![0.3, -0.4];
        let all = vec![v.clone(); 30];
        let z = aggregate(&all, &full, &c).unwrap();
        let expect = 4.0 / 30f64.sqrt() * 30.0;
        for zi in &z {
            assert!((zi[0] - expect * 0.3).abs() < 1e-12);
            assert!(norm(zi) <= 4.0 * 30f64.sqrt() * norm(&v) + 1e-12);
        }
        assert!(aggregate(&all[..3], &full, &c).is_err());
    }

    #[test]
    fn policy_examples() {
        let c = cfg();
        let zero = PolicyParams::zeros(&c);
        let d = policy_dist(&[1.0; 16], &zero, &c);
        assert!(d.probs.iter().all(|&p| (p - 0.125).abs() < 1e-15));
    }

    #[test]
    fn modulation_examples() {
        let c = cfg();
        assert_eq!(modulation(&[1.0, 2.0], &[1.0, 2.0], &c), 0.0);
        assert!((modulation(&[1.0, 0.0], &[0.0, 0.0], &c) - 3.0463).abs() < 1e-4);
        assert!(modulation(&[1e6, 0.0], &[0.0, 0.0], &c) <= 4.0);
    }

    #[test]
    fn marl_step_fixed_points() {
        let mut c = cfg();
        let target = CoordinationTarget::new(&c).unwrap();
        let probes = probe_states(&c);
        let z = vec![vec![0.0; 16]; 3];
        let at_goal = PolicyParams { theta_pi: target.eval(&[0.0; 16]) };
        let (next, tv) = marl_step(&at_goal, &z, &target, &probes, &c).unwrap();
        assert_eq!(next, at_goal);
        assert_eq!(tv, 0.0);
        c.eta2 = 0.0;
        let p = PolicyParams::zeros(&c);
        let (next, tv) = marl_step(&p, &z, &target, &probes, &c).unwrap();
        assert_eq!((next, tv), (p, 0.0));
    }

    #[test]
    fn marl_step_respects_trust_region() {
        let mut c = cfg();
        c.eta2 = 0.4;
        let target = CoordinationTarget::new(&c).unwrap();
        let probes = probe_states(&c);
        let z = vec![vec![0.5; 16]; 4];
        let p = PolicyParams::zeros(&c);
        let (next, tv) = marl_step(&p, &z, &target, &probes, &c).unwrap();
        assert!(tv <= c.delta_pi);
        assert!(tv > 0.0);
        assert!(next.theta_pi.iter().all(|x| x.abs() <= c.policy_bound));
    }
}
