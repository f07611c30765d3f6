//! Multi-rate simulation engine and scenario library.
//!
//! Level-1 ticks run every `tau1`; coordination updates every `tau2`; meta
//! updates every `tau3`. Updates fire at `t = k * tau` for `k >= 1`. When
//! boundaries coincide the tick completes first, then the coordination
//! update, then the meta update, and a snapshot is taken last.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cascade::{
    aggregate, embed, gnn_error, make_encoder, marl_step, modulation, policy_dist, probe_states,
    AdjacencyGraph, CoordinationTarget, EmbeddingEncoder, PolicyParams,
};
use crate::config::SystemConfig;
use crate::contracts::{
    adaptation_trial, check_contract, meta_margins, AdaptationTrial, ContractId, ContractSpec,
    ContractVerdict, Evidence, MarginGeometry, VerdictStatus,
};
use crate::drift::tv_distance;
use crate::error::{Error, Result};
use crate::hebbian::{
    hebbian_step_in_place, safety_output, weight_bounds, AgentState, HebbianRule, Observation,
};
use crate::linalg::{dist, mean_of, norm};
use crate::meta::{
    compatibility_check, meta_step, theta_to_rule, CompatibilityVerdict, MetaCascade,
    MetaObjective, MetaParams,
};
use crate::rng::{self, Stream};

const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    Baseline,
    DeltaZero,
    NoClamp,
    SlowMarl,
    CraftedMarginBreach,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 5] = [
        ScenarioKind::Baseline,
        ScenarioKind::DeltaZero,
        ScenarioKind::NoClamp,
        ScenarioKind::SlowMarl,
        ScenarioKind::CraftedMarginBreach,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioKind::Baseline => "baseline",
            ScenarioKind::DeltaZero => "delta_zero",
            ScenarioKind::NoClamp => "no_clamp",
            ScenarioKind::SlowMarl => "slow_marl",
            ScenarioKind::CraftedMarginBreach => "crafted_margin_breach",
        }
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScenarioKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ScenarioKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::UnknownScenario(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObservationMode {
    /// Independent uniform-direction, uniform-radius draws for pre and post.
    Random,
    /// `x_pre = x_post = w / |w|` on the plastic coordinates.
    Aligned,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModulationMode {
    /// From the previous cycle's aggregates.
    Coupled,
    /// Pinned at `m_max`.
    Saturated,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetaInit {
    Zero,
    /// Start at distance `gap` from the NP-C1 failure half-space, with the
    /// meta target one unit beyond it along the half-space normal.
    CraftedBreach { gap: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub kind: ScenarioKind,
    pub duration: f64,
    pub observation: ObservationMode,
    pub modulation: ModulationMode,
    pub freeze_meta: bool,
    /// Apply meta steps even when the compatibility check rejects them.
    pub force_meta: bool,
    pub meta_init: MetaInit,
}

impl Scenario {
    pub fn new(kind: ScenarioKind) -> Self {
        let base = Scenario {
            kind,
            duration: 100.0,
            observation: ObservationMode::Random,
            modulation: ModulationMode::Coupled,
            freeze_meta: false,
            force_meta: false,
            meta_init: MetaInit::Zero,
        };
        match kind {
            ScenarioKind::Baseline | ScenarioKind::NoClamp => base,
            ScenarioKind::DeltaZero => Scenario {
                duration: 10_000.0,
                observation: ObservationMode::Aligned,
                modulation: ModulationMode::Saturated,
                freeze_meta: true,
                ..base
            },
            ScenarioKind::SlowMarl => Scenario { duration: 400.0, ..base },
            ScenarioKind::CraftedMarginBreach => Scenario {
                duration: 60.0,
                force_meta: true,
                meta_init: MetaInit::CraftedBreach { gap: 5e-6 },
                ..base
            },
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        Ok(Self::new(name.parse()?))
    }

    pub fn with_duration(mut self, duration: f64) -> Self {
        self.duration = duration;
        self
    }

    pub fn name(&self) -> &'static str {
        self.kind.as_str()
    }

    /// Scenarios built to break a boundedness condition.
    pub fn is_counterexample(&self) -> bool {
        matches!(
            self.kind,
            ScenarioKind::DeltaZero | ScenarioKind::NoClamp | ScenarioKind::SlowMarl
        )
    }

    /// The scenario's parameter overrides applied to `base`.
    pub fn configure(&self, base: &SystemConfig) -> SystemConfig {
        let mut c = base.clone();
        match self.kind {
            ScenarioKind::Baseline | ScenarioKind::CraftedMarginBreach => {}
            ScenarioKind::DeltaZero => {
                c.delta = 0.0;
                c.enforce_clamp = false;
                c.sigma_max = 1.0;
                c.init_weight_norm = 0.0;
            }
            ScenarioKind::NoClamp => c.enforce_clamp = false,
            ScenarioKind::SlowMarl => {
                c.tau2 = 20.0;
                // Keeps tau2 < tau3 and the coordination-per-meta ratio at 10.
                c.tau3 = 200.0;
            }
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceMetadata {
    pub scenario: String,
    pub seed: u64,
    pub config_hash: String,
    pub duration: f64,
    pub n_agents: usize,
    pub weight_dim: usize,
    pub embed_dim: usize,
    pub ticks: u64,
    pub marl_cycles: u64,
    pub meta_cycles: u64,
    pub halted: Option<String>,
    /// Time of the first tick whose step exceeded `delta_np`.
    pub first_np_c1_violation: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub t: f64,
    pub weights: Vec<Vec<f64>>,
    /// Ideal embeddings `phi*(w_i)`.
    pub phi_star: Vec<Vec<f64>>,
    pub policy: Vec<f64>,
    pub z_mean: Vec<f64>,
    pub theta: Vec<f64>,
    pub max_weight_norm: f64,
    /// `lip_pi * |theta_pi - target(z_mean)|`.
    pub subopt_proxy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaRecord {
    pub t: f64,
    pub theta_before: Vec<f64>,
    pub theta: Vec<f64>,
    pub rule: HebbianRule,
    pub grad_norm: f64,
    /// Norm of the proposed meta step.
    pub step_norm: f64,
    pub rule_change_norm: f64,
    pub compatibility: CompatibilityVerdict,
    pub margins_before: Vec<(ContractId, f64)>,
    pub margins_after: Vec<(ContractId, f64)>,
    pub applied: bool,
    /// Every contract invariant holds (all margins positive) after the step.
    pub invariants_after: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptationRecord {
    pub t: f64,
    pub meta_loss: f64,
    pub trial: AdaptationTrial,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub metadata: TraceMetadata,
    pub config: SystemConfig,
    /// Tick-major: entry `(k - 1) * N + i` is agent `i` at tick `k`.
    pub step_norms: Vec<f64>,
    pub clamped: Vec<bool>,
    /// Per tick, the largest policy TV induced by one agent's Hebbian step
    /// through its ideal embedding.
    pub induced_tv: Vec<f64>,
    /// `(t, realised TV)` per coordination update.
    pub tv_steps: Vec<(f64, f64)>,
    pub snapshots: Vec<Snapshot>,
    pub meta_records: Vec<MetaRecord>,
    pub adaptation: Vec<AdaptationRecord>,
    pub contracts: Vec<ContractVerdict>,
    pub probe_states: Vec<Vec<f64>>,
    pub danger_probes: Vec<Vec<f64>>,
    /// `[agent][probe]` safety outputs at t = 0.
    pub safety_baseline: Vec<Vec<f64>>,
    pub final_agents: Vec<AgentState>,
}

impl Trace {
    pub fn n_agents(&self) -> usize {
        self.metadata.n_agents
    }

    pub fn ticks(&self) -> u64 {
        self.metadata.ticks
    }

    pub fn tick_time(&self, k: u64) -> f64 {
        k as f64 * self.config.tau1
    }

    /// Step norms of tick `k` (1-based).
    pub fn tick_steps(&self, k: u64) -> &[f64] {
        let n = self.n_agents();
        let start = (k as usize - 1) * n;
        &self.step_norms[start..start + n]
    }

    pub fn snapshot_times(&self) -> Vec<f64> {
        self.snapshots.iter().map(|s| s.t).collect()
    }

    pub fn snapshot_at(&self, t: f64) -> Result<&Snapshot> {
        self.snapshots
            .iter()
            .find(|s| (s.t - t).abs() <= TIME_EPS)
            .ok_or_else(|| {
                let mut times = self.snapshot_times();
                times.sort_by(|a, b| (a - t).abs().total_cmp(&(b - t).abs()));
                times.truncate(2);
                Error::MissingSnapshot {
                    requested: t,
                    nearest: times,
                }
            })
    }

    pub fn verdicts_for(&self, id: ContractId) -> impl Iterator<Item = &ContractVerdict> {
        self.contracts.iter().filter(move |v| v.id == id)
    }

    pub fn failures(&self) -> usize {
        self.contracts
            .iter()
            .filter(|v| v.status == VerdictStatus::Fail)
            .count()
    }

    pub fn alarms(&self) -> usize {
        self.contracts.iter().filter(|v| v.alarm).count()
    }

    /// Largest `|safety_output(final) - safety_output(0)|` over agents and probes.
    pub fn final_safety_deviation(&self) -> f64 {
        safety_deviations(&self.final_agents, &self.danger_probes, &self.safety_baseline)
            .into_iter()
            .fold(0.0, f64::max)
    }
}

fn safety_outputs(agents: &[AgentState], probes: &[Vec<f64>]) -> Vec<Vec<f64>> {
    agents
        .iter()
        .map(|a| {
            probes
                .iter()
                .map(|p| safety_output(a, p).expect("probe length matches weight_dim"))
                .collect()
        })
        .collect()
}

/// Per-probe deviation, maximised over agents.
fn safety_deviations(agents: &[AgentState], probes: &[Vec<f64>], baseline: &[Vec<f64>]) -> Vec<f64> {
    let now = safety_outputs(agents, probes);
    (0..probes.len())
        .map(|j| {
            now.iter()
                .zip(baseline)
                .map(|(a, b)| (a[j] - b[j]).abs())
                .fold(0.0, f64::max)
        })
        .collect()
}

fn initial_agents(config: &SystemConfig) -> Vec<AgentState> {
    let mut r = rng::stream(config.seed, Stream::InitialWeights);
    let frozen = config.frozen_count();
    (0..config.n_agents)
        .map(|i| {
            let w: Vec<f64> = rng::unit_vec(&mut r, config.weight_dim)
                .into_iter()
                .map(|x| x * config.init_weight_norm)
                .collect();
            AgentState::new(i, w, frozen)
        })
        .collect()
}

fn aligned_observation(agent: &AgentState) -> Observation {
    let d = agent.weights.len();
    let mut x: Vec<f64> = agent
        .weights
        .iter()
        .zip(&agent.frozen_mask)
        .map(|(w, &f)| if f { 0.0 } else { *w })
        .collect();
    let n = norm(&x);
    if n > 0.0 {
        x.iter_mut().for_each(|v| *v /= n);
    } else if let Some(first) = agent.frozen_mask.iter().position(|f| !f) {
        x[first] = 1.0;
    }
    debug_assert_eq!(x.len(), d);
    Observation {
        x_pre: x.clone(),
        x_post: x,
    }
}

fn crafted_meta_start(
    gap: f64,
    cascade: &MetaCascade,
    config: &SystemConfig,
) -> (MetaParams, MetaObjective) {
    let r = cascade.delta_row();
    let rn = norm(r);
    let unit: Vec<f64> = r.iter().map(|x| x / rn).collect();
    let slack = -(cascade.base.delta + config.delta_guard);
    let along = slack / rn - gap;
    let theta: Vec<f64> = unit.iter().map(|u| u * along).collect();
    let target = theta.iter().zip(&unit).map(|(t, u)| t + u).collect();
    (MetaParams { theta }, MetaObjective { target })
}

struct Engine<'a> {
    config: &'a SystemConfig,
    scenario: &'a Scenario,
    encoder: EmbeddingEncoder,
    graph: AdjacencyGraph,
    target: CoordinationTarget,
    cascade: MetaCascade,
    geometry: MarginGeometry,
    objective: MetaObjective,
    specs: Vec<ContractSpec>,
    agents: Vec<AgentState>,
    obs_rngs: Vec<rand_chacha::ChaCha8Rng>,
    rule: HebbianRule,
    policy: PolicyParams,
    theta: MetaParams,
    prev_z: Vec<Vec<f64>>,
    prev_z_mean: Vec<f64>,
    phi_cache: Vec<Vec<f64>>,
    policy_cache: Vec<Vec<f64>>,
    batch_steps: Vec<f64>,
    inner_counts: Vec<u64>,
    trace: Trace,
}

impl<'a> Engine<'a> {
    fn new(scenario: &'a Scenario, config: &'a SystemConfig) -> Result<Self> {
        let encoder = make_encoder(config)?;
        let graph = AdjacencyGraph::from_config(config);
        let target = CoordinationTarget::new(config)?;
        let cascade = MetaCascade::new(config)?;
        let geometry = MarginGeometry::new(&cascade, config);
        let (theta, objective) = match scenario.meta_init {
            MetaInit::Zero => (MetaParams::zeros(config), MetaObjective::seeded(config)),
            MetaInit::CraftedBreach { gap } => crafted_meta_start(gap, &cascade, config),
        };
        let rule = if scenario.freeze_meta {
            config.rule()
        } else {
            theta_to_rule(&theta, &cascade)?
        };
        let agents = initial_agents(config);
        let probes = probe_states(config);
        let mut dr = rng::stream(config.seed, Stream::DangerProbes);
        let danger: Vec<Vec<f64>> = (0..config.danger_probe_count)
            .map(|_| rng::gaussian_vec(&mut dr, config.weight_dim))
            .collect();
        let safety_baseline = safety_outputs(&agents, &danger);
        let obs_rngs = (0..config.n_agents)
            .map(|i| rng::stream(config.seed, Stream::Observation(i)))
            .collect();
        let policy = PolicyParams::zeros(config);
        let phi_cache = agents
            .iter()
            .map(|a| embed(&a.weights, &encoder))
            .collect::<Result<Vec<_>>>()?;
        let policy_cache = phi_cache
            .iter()
            .map(|z| policy_dist(z, &policy, config).probs)
            .collect();
        let p = config.embed_dim;
        let metadata = TraceMetadata {
            scenario: scenario.name().to_string(),
            seed: config.seed,
            config_hash: config.fingerprint(),
            duration: scenario.duration,
            n_agents: config.n_agents,
            weight_dim: config.weight_dim,
            embed_dim: p,
            ticks: 0,
            marl_cycles: 0,
            meta_cycles: 0,
            halted: None,
            first_np_c1_violation: None,
        };
        let trace = Trace {
            metadata,
            config: config.clone(),
            step_norms: Vec::new(),
            clamped: Vec::new(),
            induced_tv: Vec::new(),
            tv_steps: Vec::new(),
            snapshots: Vec::new(),
            meta_records: Vec::new(),
            adaptation: Vec::new(),
            contracts: Vec::new(),
            probe_states: probes,
            danger_probes: danger,
            safety_baseline,
            final_agents: Vec::new(),
        };
        Ok(Self {
            config,
            scenario,
            encoder,
            graph,
            target,
            cascade,
            geometry,
            objective,
            specs: ContractSpec::all(config),
            agents,
            obs_rngs,
            rule,
            policy,
            theta,
            prev_z: vec![vec![0.0; p]; config.n_agents],
            prev_z_mean: vec![0.0; p],
            phi_cache,
            policy_cache,
            batch_steps: Vec::new(),
            inner_counts: Vec::new(),
            trace,
        })
    }

    fn margins(&self) -> Vec<(ContractId, f64)> {
        meta_margins(&self.theta.theta, &self.geometry, self.config)
    }

    fn margin_of(margins: &[(ContractId, f64)], id: ContractId) -> f64 {
        margins.iter().find(|(k, _)| *k == id).map_or(0.0, |(_, m)| *m)
    }

    fn verdict(&mut self, id: ContractId, ev: Evidence<'_>, t: f64, margins: &[(ContractId, f64)]) -> Result<()> {
        let spec = self.specs.iter().find(|s| s.id == id).expect("all specs present");
        let v = check_contract(spec, &ev, t, Some(Self::margin_of(margins, id)))?;
        self.trace.contracts.push(v);
        Ok(())
    }

    fn tick(&mut self, k: u64) -> Result<()> {
        let c = self.config;
        let t = k as f64 * c.tau1;
        let mut max_tv: f64 = 0.0;
        for i in 0..self.agents.len() {
            let obs = match self.scenario.observation {
                ObservationMode::Random => {
                    let r = &mut self.obs_rngs[i];
                    let x_pre = rng::ball_sample(r, c.weight_dim);
                    let x_post = rng::ball_sample(r, c.weight_dim);
                    Observation { x_pre, x_post }
                }
                ObservationMode::Aligned => aligned_observation(&self.agents[i]),
            };
            let m = match self.scenario.modulation {
                ModulationMode::Coupled => modulation(&self.prev_z[i], &self.prev_z_mean, c),
                ModulationMode::Saturated => c.m_max,
            };
            let rec = hebbian_step_in_place(&mut self.agents[i], &obs, m, &self.rule, c, c.enforce_clamp, k)?;
            if rec.step_norm > c.delta_np && self.trace.metadata.first_np_c1_violation.is_none() {
                self.trace.metadata.first_np_c1_violation = Some(t);
            }
            self.trace.step_norms.push(rec.step_norm);
            self.trace.clamped.push(rec.clamped);
            self.batch_steps.push(rec.step_norm);

            let phi = embed(&self.agents[i].weights, &self.encoder)?;
            let probs = policy_dist(&phi, &self.policy, c).probs;
            max_tv = max_tv.max(tv_distance(&self.policy_cache[i], &probs)?);
            self.phi_cache[i] = phi;
            self.policy_cache[i] = probs;
        }
        self.trace.induced_tv.push(max_tv);
        Ok(())
    }

    fn aggregates(&self) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
        let realized: Vec<Vec<f64>> = self
            .agents
            .iter()
            .zip(&self.phi_cache)
            .map(|(a, phi)| {
                phi.iter()
                    .zip(gnn_error(&a.weights, self.config))
                    .map(|(x, e)| x + e)
                    .collect()
            })
            .collect();
        let z = aggregate(&realized, &self.graph, self.config)?;
        let z_mean = mean_of(&z, self.config.embed_dim);
        Ok((z, z_mean))
    }

    /// Returns `false` when the run must halt.
    fn coordination(&mut self, t: f64) -> Result<bool> {
        let c = self.config;
        let (z, z_mean) = self.aggregates()?;
        let margins = self.margins();
        let outcome = marl_step(&self.policy, &z, &self.target, &self.trace.probe_states, c);
        self.prev_z = z;
        self.prev_z_mean = z_mean;

        let steps = std::mem::take(&mut self.batch_steps);
        self.verdict(ContractId::NpC1, Evidence::StepNorms(&steps), t, &margins)?;
        let dev = safety_deviations(&self.agents, &self.trace.danger_probes, &self.trace.safety_baseline);
        self.verdict(ContractId::NpC2, Evidence::SafetyDeviations(&dev), t, &margins)?;

        let w_max = weight_bounds(&self.rule).map(|(_, m)| m).unwrap_or(f64::INFINITY);
        let errors: Vec<f64> = self
            .agents
            .iter()
            .filter(|a| a.weight_norm() <= w_max)
            .map(|a| norm(&gnn_error(&a.weights, c)))
            .collect();
        self.verdict(ContractId::GnnC1, Evidence::ApproxErrors(&errors), t, &margins)?;

        match outcome {
            Ok((next, tv)) => {
                self.trace.tv_steps.push((t, tv));
                self.verdict(ContractId::MarlC1, Evidence::TvSteps(&[tv]), t, &margins)?;
                if next != self.policy {
                    self.policy = next;
                    self.policy_cache = self
                        .phi_cache
                        .iter()
                        .map(|phi| policy_dist(phi, &self.policy, c).probs)
                        .collect();
                }
                self.trace.metadata.marl_cycles += 1;
                Ok(true)
            }
            Err(e @ Error::Enforcement { .. }) => {
                self.verdict(ContractId::MarlC1, Evidence::TvSteps(&[f64::INFINITY]), t, &margins)?;
                self.trace.metadata.halted = Some(format!("t = {t}: {e}"));
                Ok(false)
            }
            Err(e) => Err(e),
        }
    }

    fn meta(&mut self, t: f64) -> Result<()> {
        let c = self.config;
        if !self.scenario.freeze_meta {
            let margins_before = self.margins();
            let (proposal, grad_norm) = meta_step(&self.theta, &self.objective, c);
            let step_norm = dist(&proposal.theta, &self.theta.theta);
            let compatibility = compatibility_check(step_norm, &margins_before, c)?;
            let applied = compatibility.pass || self.scenario.force_meta;
            let theta_before = self.theta.theta.clone();
            let mut rule_change_norm = 0.0;
            if applied {
                self.theta = proposal;
                let next_rule = theta_to_rule(&self.theta, &self.cascade)?;
                rule_change_norm = next_rule.distance(&self.rule);
                self.rule = next_rule;
            }
            let margins_after = self.margins();
            let invariants_after = margins_after.iter().all(|(_, m)| *m > 0.0);
            self.trace.meta_records.push(MetaRecord {
                t,
                theta_before,
                theta: self.theta.theta.clone(),
                rule: self.rule,
                grad_norm,
                step_norm,
                rule_change_norm,
                compatibility,
                margins_before,
                margins_after,
                applied,
                invariants_after,
            });
        }
        let meta_loss = self.objective.loss(&self.theta);
        let trial = adaptation_trial(c, true, meta_loss, &self.target, &self.trace.probe_states);
        self.inner_counts.push(trial.k_inner);
        self.trace.adaptation.push(AdaptationRecord { t, meta_loss, trial });
        let margins = self.margins();
        self.verdict(ContractId::MlC1, Evidence::Adaptation(Some(&trial)), t, &margins)?;
        let counts = self.inner_counts.clone();
        self.verdict(ContractId::MlC2, Evidence::InnerCounts(&counts), t, &margins)?;
        self.trace.metadata.meta_cycles += 1;
        Ok(())
    }

    fn snapshot(&mut self, t: f64) -> Result<()> {
        let z_mean = if self.trace.snapshots.is_empty() {
            self.aggregates()?.1
        } else {
            self.prev_z_mean.clone()
        };
        let goal = self.target.eval(&z_mean);
        let weights: Vec<Vec<f64>> = self.agents.iter().map(|a| a.weights.clone()).collect();
        let max_weight_norm = weights.iter().map(|w| norm(w)).fold(0.0, f64::max);
        self.trace.snapshots.push(Snapshot {
            t,
            max_weight_norm,
            subopt_proxy: self.config.lip_pi * dist(&self.policy.theta_pi, &goal),
            weights,
            phi_star: self.phi_cache.clone(),
            policy: self.policy.theta_pi.clone(),
            z_mean,
            theta: self.theta.theta.clone(),
        });
        Ok(())
    }

    fn run(mut self) -> Result<Trace> {
        let c = self.config;
        let d = self.scenario.duration;
        let ticks = (d / c.tau1 + TIME_EPS).floor() as u64;
        let n_marl = (d / c.tau2 + TIME_EPS).floor() as u64;
        let n_meta = (d / c.tau3 + TIME_EPS).floor() as u64;
        self.trace.step_norms.reserve(ticks as usize * c.n_agents);
        self.snapshot(0.0)?;
        let (mut next_marl, mut next_meta) = (1u64, 1u64);
        let mut halted = false;
        for k in 1..=ticks + 1 {
            let horizon = if k <= ticks {
                self.tick(k)?;
                self.trace.metadata.ticks = k;
                k as f64 * c.tau1
            } else {
                d
            };
            loop {
                let tm = (next_marl <= n_marl).then_some(next_marl as f64 * c.tau2);
                let tg = (next_meta <= n_meta).then_some(next_meta as f64 * c.tau3);
                let group = match (tm, tg) {
                    (Some(a), Some(b)) => a.min(b),
                    (Some(a), None) | (None, Some(a)) => a,
                    (None, None) => break,
                };
                if group > horizon + TIME_EPS {
                    break;
                }
                let mut did_marl = false;
                if tm.is_some_and(|a| (a - group).abs() <= TIME_EPS) {
                    next_marl += 1;
                    did_marl = true;
                    if !self.coordination(group)? {
                        halted = true;
                    }
                }
                if !halted && tg.is_some_and(|b| (b - group).abs() <= TIME_EPS) {
                    next_meta += 1;
                    self.meta(group)?;
                }
                if did_marl {
                    self.snapshot(group)?;
                }
                if halted {
                    break;
                }
            }
            if halted {
                break;
            }
        }
        self.trace.final_agents = self.agents;
        Ok(self.trace)
    }
}

/// Run a scenario on an already-configured system (see [`Scenario::configure`]).
/// Deterministic in `(scenario, config, seed)`; `seed` replaces `config.seed`.
pub fn run(scenario: &Scenario, config: &SystemConfig, seed: u64) -> Result<Trace> {
    if !(scenario.duration.is_finite() && scenario.duration >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "duration {} must be a finite non-negative number of seconds",
            scenario.duration
        )));
    }
    let mut config = config.clone();
    config.seed = seed;
    config.validate()?;
    Engine::new(scenario, &config)?.run()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SystemConfig {
        SystemConfig {
            n_agents: 4,
            ..SystemConfig::default()
        }
    }

    #[test]
    fn scenario_names_round_trip() {
        for k in ScenarioKind::ALL {
            assert_eq!(k.as_str().parse::<ScenarioKind>().unwrap(), k);
        }
        assert!(matches!(Scenario::by_name("nope"), Err(Error::UnknownScenario(_))));
    }

    #[test]
    fn counts_for_twenty_seconds() {
        let trace = run(&Scenario::new(ScenarioKind::Baseline).with_duration(20.0), &small(), 1).unwrap();
        assert_eq!(trace.metadata.ticks, 1000);
        assert_eq!(trace.metadata.marl_cycles, 10);
        assert_eq!(trace.metadata.meta_cycles, 1);
        assert_eq!(trace.snapshots.len(), 11);
        assert_eq!(trace.step_norms.len(), 4000);
    }

    #[test]
    fn zero_duration_is_empty() {
        let trace = run(&Scenario::new(ScenarioKind::Baseline).with_duration(0.0), &small(), 1).unwrap();
        assert_eq!(trace.metadata.ticks, 0);
        assert!(trace.step_norms.is_empty());
        assert_eq!(trace.snapshots.len(), 1);
        assert_eq!(trace.metadata.config_hash.len(), 64);
    }

    #[test]
    fn rule_swap_takes_effect_after_boundary() {
        let trace = run(&Scenario::new(ScenarioKind::Baseline).with_duration(20.1), &small(), 2).unwrap();
        let rec = &trace.meta_records[0];
        assert!(rec.applied);
        assert!((rec.t - 20.0).abs() < 1e-9);
        assert!(rec.rule_change_norm > 0.0);
        // Meta update happened after tick 1000 and before tick 1001.
        assert_eq!(trace.metadata.ticks, 1005);
    }

    #[test]
    fn crafted_breach_is_detected() {
        let c = small();
        let trace = run(&Scenario::new(ScenarioKind::CraftedMarginBreach), &c, 3).unwrap();
        let first = &trace.meta_records[0];
        let np = first.margins_before.iter().find(|(k, _)| *k == ContractId::NpC1).unwrap().1;
        assert!((np - 5e-6).abs() < 1e-9);
        assert!(first.compatibility.m1 && first.compatibility.m2 && !first.compatibility.m3);
        assert!(first.applied);
        assert!(!first.invariants_after);
        assert!(trace.verdicts_for(ContractId::NpC1).any(|v| v.alarm && v.t > 20.0));
    }
}
