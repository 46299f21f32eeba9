//! End-to-end training runs: the decoupled imitation loop, its ablations and
//! baselines, reward-driven (non-imitation) mode, planner transfer, and
//! multi-environment co-training with a shared planner.
//!
//! One [`ChaCha8Rng`] seeded from the experiment seed drives every stochastic
//! choice in a fixed order (agent construction, demonstration collection,
//! exploration, minibatch sampling, evaluation), so a rerun of the same
//! configuration reproduces the metrics log byte for byte.
//!
//! Co-training keeps a single *master* planner parameter vector: every
//! gradient step averages the per-environment planner gradients elementwise,
//! applies one optimizer step to the master, and copies the master back into
//! each agent. With one environment the average is the gradient itself, so a
//! single-agent co-training run is bitwise identical to a plain run.

use super::actor::{composed_actor_grad, monolithic_actor_grad};
use super::buffer::ReplayBuffer;
use super::config::{
    config_hash, AlgorithmVariant, EnvConfig, ExperimentConfig, RewardSource,
};
use super::metrics::{MetricsLog, MetricsRow};
use super::soft_q::{ActingPolicy, QFunction, SoftQLearner, SoftQSettings};
use super::TrainerError;
use crate::adversarial::{Discriminator, DiscriminatorSettings};
use crate::approx::{Adam, Checkpoint, ParamVector};
use crate::depo::{
    bc_loss_grad, bco_label_pairs, cdepg_grad, depg_grad_dropping_unsupported,
    inverse_dynamics_loss_grad, supervised_planner_grad, DecoupledPolicy, MonolithicPolicy,
    PlannerUpdateSpec,
};
use crate::envs::{expert_demonstrations, Demonstration, EnvKind, Transition, GRID_SIDE};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Minibatches per inner epoch of inverse-dynamics training; the stopping
/// rule compares mean losses across inner epochs.
const INVDYN_BATCHES_PER_EPOCH: usize = 50;
/// Stop inverse-dynamics training once the mean inner-epoch loss improves by
/// less than this for [`INVDYN_PATIENCE`] consecutive inner epochs.
const INVDYN_MIN_IMPROVEMENT: f64 = 1e-5;
const INVDYN_PATIENCE: usize = 5;

/// The policy that comes out of a run.
#[derive(Debug, Clone)]
pub enum TrainedPolicy {
    Decoupled(DecoupledPolicy),
    Monolithic(MonolithicPolicy),
}

impl TrainedPolicy {
    pub fn as_decoupled(&self) -> Option<&DecoupledPolicy> {
        match self {
            TrainedPolicy::Decoupled(p) => Some(p),
            TrainedPolicy::Monolithic(_) => None,
        }
    }

    pub fn as_monolithic(&self) -> Option<&MonolithicPolicy> {
        match self {
            TrainedPolicy::Monolithic(p) => Some(p),
            TrainedPolicy::Decoupled(_) => None,
        }
    }

    /// The action-selection view used for exploration, evaluation and
    /// soft value targets.
    pub fn acting(&self) -> &dyn ActingPolicy {
        match self {
            TrainedPolicy::Decoupled(p) => p,
            TrainedPolicy::Monolithic(p) => p,
        }
    }

    /// Serializable snapshot of all parameter sections.
    pub fn checkpoint(&self, meta: &str) -> Checkpoint {
        match self {
            TrainedPolicy::Decoupled(p) => p.checkpoint(meta),
            TrainedPolicy::Monolithic(p) => {
                let mut c = Checkpoint::new(meta.to_string());
                c.push("policy", p.params().clone());
                c
            }
        }
    }
}

/// What a finished run hands back: the metrics log, the trained policy, and
/// whichever auxiliary models the algorithm variant maintained.
#[derive(Debug)]
pub struct RunArtifacts {
    pub metrics: MetricsLog,
    pub policy: TrainedPolicy,
    pub discriminator: Option<Discriminator>,
    pub q: Option<QFunction>,
    /// The demonstrations this agent imitated (absent in reward-driven mode).
    pub demos: Option<Demonstration>,
}

/// Iterates the deterministic planner `n` times from `s0` with no environment
/// interaction, returning the `n + 1` imagined states (including `s0`).
pub fn multi_step_rollout(policy: &DecoupledPolicy, s0: &[f64], n: usize) -> Vec<Vec<f64>> {
    let mut states = Vec::with_capacity(n + 1);
    states.push(s0.to_vec());
    for _ in 0..n {
        let next = policy.plan_deterministic(states.last().expect("nonempty"));
        states.push(next);
    }
    states
}

/// Mean squared one-step planning error of the deterministic planner over
/// realized `(s, s')` pairs.
pub fn planner_mse(
    policy: &DecoupledPolicy,
    pairs: &[(Vec<f64>, Vec<f64>)],
) -> Result<f64, TrainerError> {
    if pairs.is_empty() {
        return Err(TrainerError::EmptyBatch {
            context: "planner_mse",
        });
    }
    let mut total = 0.0;
    for (s, s_next) in pairs {
        let planned = policy.plan_deterministic(s);
        if planned.len() != s_next.len() {
            return Err(TrainerError::LengthMismatch {
                context: "planner_mse pair",
                expected: planned.len(),
                got: s_next.len(),
            });
        }
        total += planned
            .iter()
            .zip(s_next)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>();
    }
    Ok(total / pairs.len() as f64)
}

/// Elementwise uniform mean of per-agent planner gradients, in agent order.
/// With one gradient the result is that gradient divided by `1.0`, i.e.
/// bitwise unchanged.
pub fn aggregate_planner_gradients(grads: &[Vec<f64>]) -> Vec<f64> {
    assert!(!grads.is_empty(), "no gradients to aggregate");
    let n = grads.len() as f64;
    let mut out = vec![0.0; grads[0].len()];
    for g in grads {
        assert_eq!(g.len(), out.len(), "planner gradient length mismatch");
        for (acc, v) in out.iter_mut().zip(g) {
            *acc += v;
        }
    }
    for v in &mut out {
        *v /= n;
    }
    out
}

/// The run described by the configuration's single `[env]` section: collect
/// demonstrations (in imitation mode), pretrain the inverse-dynamics model on
/// random-policy data, then alternate environment collection with gradient
/// steps on the discriminator, value function and policy.
pub fn run_algorithm1(config: &ExperimentConfig) -> Result<RunArtifacts, TrainerError> {
    if !config.cotrain.is_empty() {
        return Err(TrainerError::InvalidConfig {
            reason: "config declares co-training environments; use cotrain_run".into(),
        });
    }
    if config.transfer.is_some() {
        return Err(TrainerError::InvalidConfig {
            reason: "config declares a transfer section; use transfer_run".into(),
        });
    }
    let mut artifacts = run_shared(config, std::slice::from_ref(&config.env), None)?;
    Ok(artifacts.pop().expect("one agent"))
}

/// Reward-driven mode: identical to [`run_algorithm1`] except rewards come
/// from the environment, so no demonstrations are collected, no discriminator
/// exists, and the supervised planner loss is unavailable.
pub fn rl_mode_run(config: &ExperimentConfig) -> Result<RunArtifacts, TrainerError> {
    if config.reward_source != RewardSource::Environment {
        return Err(TrainerError::InvalidConfig {
            reason: "reward-driven mode requires reward_source = \"environment\"".into(),
        });
    }
    run_algorithm1(config)
}

/// Run with the planner loaded from `planner_source` and frozen: the planner
/// receives no gradient updates, while the inverse-dynamics model, value
/// function and (in imitation mode) discriminator train from scratch.
pub fn transfer_run(
    planner_source: &ParamVector,
    config: &ExperimentConfig,
) -> Result<RunArtifacts, TrainerError> {
    if !config.cotrain.is_empty() {
        return Err(TrainerError::InvalidConfig {
            reason: "transfer runs train a single environment".into(),
        });
    }
    let mut artifacts = run_shared(config, std::slice::from_ref(&config.env), Some(planner_source))?;
    Ok(artifacts.pop().expect("one agent"))
}

/// Co-train one shared planner across the configured environment list
/// (`[env]` followed by each `[[cotrain]]` entry). Each environment keeps its
/// own inverse-dynamics model, value function, discriminator, demonstrations
/// and replay buffer; only the planner is shared, updated with the uniform
/// mean of the per-environment planner gradients.
pub fn cotrain_run(config: &ExperimentConfig) -> Result<Vec<RunArtifacts>, TrainerError> {
    let mut envs = Vec::with_capacity(1 + config.cotrain.len());
    envs.push(config.env.clone());
    envs.extend(config.cotrain.iter().cloned());
    run_shared(config, &envs, None)
}

/// How the planner parameters evolve during a run.
enum PlannerDriver {
    /// The variant has no planner (monolithic policies).
    Absent,
    /// Loaded from a checkpoint; never updated.
    Frozen,
    /// One shared vector stepped with the mean gradient and copied back into
    /// every agent after each step.
    Trained { master: ParamVector, opt: Adam },
}

fn run_shared(
    config: &ExperimentConfig,
    agent_envs: &[EnvConfig],
    frozen_planner: Option<&ParamVector>,
) -> Result<Vec<RunArtifacts>, TrainerError> {
    config.validate()?;
    assert!(!agent_envs.is_empty(), "at least one environment");
    let envs: Vec<EnvKind> = agent_envs.iter().map(EnvConfig::build).collect();
    let first = &envs[0];
    for env in &envs[1..] {
        if env.state_dim() != first.state_dim() || env.is_discrete() != first.is_discrete() {
            return Err(TrainerError::IncompatibleStateSpaces {
                detail: format!(
                    "a shared planner needs one state space, got {} and {}",
                    first.id(),
                    env.id()
                ),
            });
        }
    }

    let variant = config.algorithm;
    let imitation = config.reward_source == RewardSource::Discriminator;
    let cfg_hash = config_hash(config.to_toml().as_bytes());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut agents: Vec<Agent> = Vec::with_capacity(envs.len());
    for env in envs {
        agents.push(Agent::build(env, config, imitation, &cfg_hash, &mut rng)?);
    }

    // Align planner starts and set up the update driver.
    let mut driver = if variant.uses_decoupled_policy() {
        let initial = match frozen_planner {
            Some(p) => p.clone(),
            None => agents[0].decoupled()?.planner_params().clone(),
        };
        for agent in &mut agents {
            agent.decoupled_mut()?.load_planner_params(&initial)?;
        }
        if frozen_planner.is_some() {
            PlannerDriver::Frozen
        } else {
            let opt = Adam::new(config.rates.policy, initial.len());
            PlannerDriver::Trained {
                master: initial,
                opt,
            }
        }
    } else {
        if frozen_planner.is_some() {
            return Err(TrainerError::InvalidConfig {
                reason: format!(
                    "algorithm '{}' has no planner to transfer",
                    variant.name()
                ),
            });
        }
        PlannerDriver::Absent
    };
    let planner_live = matches!(driver, PlannerDriver::Trained { .. });

    if config.epochs > 0 {
        // Random-policy pretraining data, then inverse-dynamics pretraining.
        for agent in &mut agents {
            agent.collect_steps(config.pretrain_steps, CollectMode::Random, &mut rng);
        }
        for agent in &mut agents {
            agent.train_invdyn(config.invdyn_pretrain_epochs, config, &mut rng)?;
            agent.refresh_bco_labels()?;
        }
        for agent in &mut agents {
            agent.evaluate_and_push_row(0, config, &mut rng)?;
        }

        for epoch in 1..=config.epochs {
            for agent in &mut agents {
                agent.collect_steps(config.steps_per_epoch, CollectMode::Policy, &mut rng);
            }
            if (epoch - 1) % config.invdyn_interval_epochs == 0 && epoch > 1 {
                for agent in &mut agents {
                    agent.train_invdyn(config.invdyn_online_epochs, config, &mut rng)?;
                    agent.refresh_bco_labels()?;
                }
            }
            for _ in 0..config.grad_steps_per_epoch {
                let mut planner_grads: Vec<Vec<f64>> = Vec::with_capacity(agents.len());
                for agent in &mut agents {
                    if let Some(g) = agent.grad_step(config, planner_live, &mut rng)? {
                        planner_grads.push(g);
                    }
                }
                if let PlannerDriver::Trained { master, opt } = &mut driver {
                    assert_eq!(
                        planner_grads.len(),
                        agents.len(),
                        "every agent contributes a planner gradient"
                    );
                    let mean = aggregate_planner_gradients(&planner_grads);
                    if !mean.iter().all(|v| v.is_finite()) {
                        return Err(TrainerError::NonFinite {
                            context: "aggregated planner gradient",
                        });
                    }
                    opt.step(&mut master.values, &mean);
                    for agent in &mut agents {
                        agent.decoupled_mut()?.load_planner_params(master)?;
                        agent.log.counters.planner += 1;
                    }
                }
            }
            if epoch % config.eval_every_epochs == 0 || epoch == config.epochs {
                for agent in &mut agents {
                    agent.evaluate_and_push_row(epoch, config, &mut rng)?;
                }
            }
        }
    }

    Ok(agents.into_iter().map(Agent::into_artifacts).collect())
}

enum CollectMode {
    Random,
    Policy,
}

/// Running mean that renders as NaN (a "not applicable" column) when nothing
/// was recorded during the epoch.
#[derive(Debug, Default, Clone, Copy)]
struct MeanAcc {
    sum: f64,
    count: u64,
}

impl MeanAcc {
    fn add(&mut self, v: f64) {
        self.sum += v;
        self.count += 1;
    }

    fn mean_or_nan(&self) -> f64 {
        if self.count == 0 {
            f64::NAN
        } else {
            self.sum / self.count as f64
        }
    }
}

/// Per-epoch loss accumulators, reset after each metrics row.
#[derive(Debug, Default, Clone, Copy)]
struct LossAccum {
    discriminator: MeanAcc,
    q: MeanAcc,
    depg: MeanAcc,
    supervised: MeanAcc,
    cdepg: MeanAcc,
    invdyn: MeanAcc,
    policy: MeanAcc,
}

/// One environment's training state: its policy, auxiliary models,
/// demonstrations, replay buffer and metrics log.
struct Agent {
    env: EnvKind,
    variant: AlgorithmVariant,
    policy: TrainedPolicy,
    /// `bco` keeps its inverse-dynamics model here (its acting policy is
    /// monolithic); decoupled variants use `policy` itself.
    labeler: Option<DecoupledPolicy>,
    q: Option<SoftQLearner>,
    discriminator: Option<Discriminator>,
    d_opt: Option<Adam>,
    invdyn_opt: Option<Adam>,
    policy_opt: Option<Adam>,
    buffer: ReplayBuffer,
    demos: Option<Demonstration>,
    /// Owned copies of the expert's consecutive state pairs.
    demo_pairs: Vec<(Vec<f64>, Vec<f64>)>,
    /// Inverse-dynamics labels for `demo_pairs`, refreshed whenever the
    /// labeling model is retrained (`bco` only).
    bco_labels: Option<Vec<crate::envs::ActionVal>>,
    log: MetricsLog,
    acc: LossAccum,
    env_steps: u64,
    cur_state: Vec<f64>,
    steps_in_episode: usize,
}

impl Agent {
    fn build(
        env: EnvKind,
        config: &ExperimentConfig,
        imitation: bool,
        cfg_hash: &str,
        rng: &mut ChaCha8Rng,
    ) -> Result<Agent, TrainerError> {
        let variant = config.algorithm;
        let state_dim = env.state_dim();
        let discrete = env.is_discrete();
        let (n_actions, action_dim) = match &env {
            EnvKind::Grid(g) => (g.n_actions(), 0),
            EnvKind::PointMass(p) => (0, p.raw_action_dim()),
        };

        let demos = if imitation {
            let seed = rng.random::<u64>();
            Some(expert_demonstrations(&env, config.demo_trajectories, seed))
        } else {
            None
        };
        let demo_pairs: Vec<(Vec<f64>, Vec<f64>)> = demos
            .as_ref()
            .map(|d| {
                d.pairs()
                    .into_iter()
                    .map(|(s, nx)| (s.to_vec(), nx.to_vec()))
                    .collect()
            })
            .unwrap_or_default();

        let policy = if variant.uses_decoupled_policy() {
            TrainedPolicy::Decoupled(if discrete {
                DecoupledPolicy::tabular(GRID_SIDE, n_actions)
            } else {
                DecoupledPolicy::continuous(
                    state_dim,
                    action_dim,
                    &config.hidden.planner,
                    &config.hidden.invdyn,
                    rng,
                )
            })
        } else {
            TrainedPolicy::Monolithic(if discrete {
                MonolithicPolicy::tabular(GRID_SIDE, n_actions)
            } else {
                MonolithicPolicy::gaussian(state_dim, action_dim, &config.hidden.policy, rng)
            })
        };

        let labeler = if variant == AlgorithmVariant::Bco {
            Some(if discrete {
                DecoupledPolicy::tabular(GRID_SIDE, n_actions)
            } else {
                DecoupledPolicy::continuous(
                    state_dim,
                    action_dim,
                    &config.hidden.planner,
                    &config.hidden.invdyn,
                    rng,
                )
            })
        } else {
            None
        };

        let q = if variant.uses_q() {
            let qf = if discrete {
                QFunction::tabular(GRID_SIDE, n_actions)
            } else {
                QFunction::twin(state_dim, action_dim, &config.hidden.q, rng)
            };
            Some(SoftQLearner::new(
                qf,
                config.rates.q,
                config.target_mix,
                SoftQSettings {
                    gamma: config.gamma,
                    entropy_weight: config.entropy_weight,
                },
            ))
        } else {
            None
        };

        let discriminator = if imitation && variant.uses_discriminator() {
            Some(if discrete {
                Discriminator::tabular(GRID_SIDE)
            } else {
                Discriminator::mlp(state_dim, &config.hidden.discriminator, rng)
            })
        } else {
            None
        };
        let d_opt = discriminator
            .as_ref()
            .map(|d| Adam::new(config.rates.discriminator, d.n_params()));

        let invdyn_params_len = match (&policy, &labeler) {
            (TrainedPolicy::Decoupled(p), _) => Some(p.invdyn_params().len()),
            (_, Some(l)) => Some(l.invdyn_params().len()),
            _ => None,
        };
        let invdyn_opt = invdyn_params_len.map(|n| Adam::new(config.rates.invdyn, n));
        let policy_opt = match &policy {
            TrainedPolicy::Monolithic(p) => Some(Adam::new(config.rates.policy, p.params().len())),
            TrainedPolicy::Decoupled(_) => None,
        };

        let cur_state = env.sample_start(rng);
        let log = MetricsLog::new(
            env.id(),
            variant.name().to_string(),
            config.seed,
            cfg_hash.to_string(),
        );
        Ok(Agent {
            env,
            variant,
            policy,
            labeler,
            q,
            discriminator,
            d_opt,
            invdyn_opt,
            policy_opt,
            buffer: ReplayBuffer::new(config.buffer_capacity),
            demos,
            demo_pairs,
            bco_labels: None,
            log,
            acc: LossAccum::default(),
            env_steps: 0,
            cur_state,
            steps_in_episode: 0,
        })
    }

    fn decoupled(&self) -> Result<&DecoupledPolicy, TrainerError> {
        self.policy
            .as_decoupled()
            .ok_or(TrainerError::ModeMismatch {
                context: "runner",
                expected: "a decoupled policy",
                detail: "this algorithm variant trains a monolithic policy".into(),
            })
    }

    fn decoupled_mut(&mut self) -> Result<&mut DecoupledPolicy, TrainerError> {
        match &mut self.policy {
            TrainedPolicy::Decoupled(p) => Ok(p),
            TrainedPolicy::Monolithic(_) => Err(TrainerError::ModeMismatch {
                context: "runner",
                expected: "a decoupled policy",
                detail: "this algorithm variant trains a monolithic policy".into(),
            }),
        }
    }

    /// Roll the environment `n` steps. Training episodes reset only at the
    /// horizon — reaching the goal sets the stored `done` flag (so value
    /// bootstrapping stops there) but collection keeps going, which leaves
    /// off-goal data in the buffer for the inverse-dynamics model.
    fn collect_steps(&mut self, n: usize, mode: CollectMode, rng: &mut ChaCha8Rng) {
        for _ in 0..n {
            if self.steps_in_episode >= self.env.horizon() {
                self.cur_state = self.env.sample_start(rng);
                self.steps_in_episode = 0;
            }
            let action = match mode {
                CollectMode::Random => self.env.random_action(rng),
                CollectMode::Policy => self.policy.acting().sample_action(&self.cur_state, rng),
            };
            let next = self.env.step(&self.cur_state, &action);
            let reward = self.env.reward(&self.cur_state, &next);
            let done = self.env.reached_goal(&next);
            self.buffer.push(Transition {
                state: self.cur_state.clone(),
                action,
                next_state: next.clone(),
                reward,
                done,
            });
            self.cur_state = next;
            self.steps_in_episode += 1;
            self.env_steps += 1;
        }
    }

    /// Maximum-likelihood inverse-dynamics training on replay data, with an
    /// early stop once the mean loss per inner epoch plateaus.
    fn train_invdyn(
        &mut self,
        max_epochs: usize,
        config: &ExperimentConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<(), TrainerError> {
        let Agent {
            policy,
            labeler,
            buffer,
            invdyn_opt,
            log,
            acc,
            ..
        } = self;
        let model: &mut DecoupledPolicy = match (policy, labeler) {
            (TrainedPolicy::Decoupled(p), _) => p,
            (_, Some(l)) => l,
            _ => return Ok(()),
        };
        let Some(opt) = invdyn_opt else {
            return Ok(());
        };
        if buffer.iter().next().is_none() {
            return Ok(());
        }
        let mut prev: Option<f64> = None;
        let mut plateau = 0;
        for _ in 0..max_epochs {
            let mut sum = 0.0;
            for _ in 0..INVDYN_BATCHES_PER_EPOCH {
                let batch = buffer.sample(config.batch_size, rng);
                let (loss, grad) = inverse_dynamics_loss_grad(model, &batch)?;
                if !grad.iter().all(|v| v.is_finite()) {
                    return Err(TrainerError::NonFinite {
                        context: "inverse-dynamics gradient",
                    });
                }
                opt.step(&mut model.invdyn_params_mut().values, &grad);
                log.counters.invdyn += 1;
                sum += loss;
            }
            let mean = sum / INVDYN_BATCHES_PER_EPOCH as f64;
            acc.invdyn.add(mean);
            if let Some(p) = prev {
                if p - mean < INVDYN_MIN_IMPROVEMENT {
                    plateau += 1;
                    if plateau >= INVDYN_PATIENCE {
                        break;
                    }
                } else {
                    plateau = 0;
                }
            }
            prev = Some(mean);
        }
        Ok(())
    }

    /// Relabel the expert's state pairs with the current inverse-dynamics
    /// model (`bco` only).
    fn refresh_bco_labels(&mut self) -> Result<(), TrainerError> {
        if self.variant != AlgorithmVariant::Bco {
            return Ok(());
        }
        let model = self.labeler.as_ref().expect("bco keeps a labeling model");
        let pairs: Vec<(&[f64], &[f64])> = self
            .demo_pairs
            .iter()
            .map(|(s, nx)| (s.as_slice(), nx.as_slice()))
            .collect();
        self.bco_labels = Some(bco_label_pairs(model, &pairs)?);
        Ok(())
    }

    /// One gradient step for this agent: discriminator, value function and
    /// the variant's policy objective, in that fixed order. Returns the
    /// planner gradient for decoupled variants when the planner is live, so
    /// the caller can aggregate it across agents.
    fn grad_step(
        &mut self,
        config: &ExperimentConfig,
        planner_live: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<Option<Vec<f64>>, TrainerError> {
        if self.variant == AlgorithmVariant::Bco {
            self.bco_step(config, rng)?;
            return Ok(None);
        }

        let Agent {
            policy,
            q,
            discriminator,
            d_opt,
            invdyn_opt,
            policy_opt,
            buffer,
            demo_pairs,
            log,
            acc,
            variant,
            ..
        } = self;
        let batch = buffer.sample(config.batch_size, rng);
        if batch.is_empty() {
            return Ok(None);
        }

        // Discriminator step (imitation mode only), before rewards are read.
        if let (Some(d), Some(opt)) = (discriminator.as_mut(), d_opt.as_mut()) {
            let agent_pairs: Vec<(&[f64], &[f64])> = batch
                .iter()
                .map(|t| (t.state.as_slice(), t.next_state.as_slice()))
                .collect();
            let take = config.batch_size.min(demo_pairs.len());
            let idx = rand::seq::index::sample(rng, demo_pairs.len(), take);
            let expert: Vec<(&[f64], &[f64])> = idx
                .iter()
                .map(|i| (demo_pairs[i].0.as_slice(), demo_pairs[i].1.as_slice()))
                .collect();
            let settings = DiscriminatorSettings {
                swap_labels: config.swap_discriminator_labels,
                gradient_penalty_weight: config.gradient_penalty_weight,
            };
            let report = d.loss_and_grad(&agent_pairs, &expert, &settings, rng)?;
            d.apply_step(&report.grad, opt)?;
            log.counters.discriminator += 1;
            acc.discriminator.add(report.loss);
        }

        // Rewards for the value update, recomputed from the current
        // discriminator in imitation mode.
        let rewards: Vec<f64> = match config.reward_source {
            RewardSource::Environment => batch.iter().map(|t| t.reward).collect(),
            RewardSource::Discriminator => {
                let d = discriminator
                    .as_ref()
                    .expect("imitation mode keeps a discriminator");
                batch
                    .iter()
                    .map(|t| d.reward(&t.state, &t.next_state, config.reward_scale))
                    .collect::<Result<_, _>>()?
            }
        };

        // Soft value-function step.
        if let Some(learner) = q.as_mut() {
            let loss = learner.td_step(&batch, &rewards, policy.acting(), rng)?;
            log.counters.q += 1;
            acc.q.add(loss);
        }

        // Variant-specific policy objective.
        match variant {
            AlgorithmVariant::Gaifo => {
                let TrainedPolicy::Monolithic(p) = policy else {
                    unreachable!("gaifo acts through a monolithic policy");
                };
                let learner = q.as_ref().expect("gaifo trains a value function");
                let states: Vec<&[f64]> = batch.iter().map(|t| t.state.as_slice()).collect();
                let (loss, grad) =
                    monolithic_actor_grad(p, learner.online(), &states, config.entropy_weight, rng)?;
                let opt = policy_opt.as_mut().expect("monolithic optimizer");
                step_params(p.params_mut(), &grad, opt, "policy gradient")?;
                log.counters.policy += 1;
                acc.policy.add(loss);
                Ok(None)
            }
            AlgorithmVariant::GaifoDp => {
                let TrainedPolicy::Decoupled(p) = policy else {
                    unreachable!("gaifo_dp acts through a decoupled policy");
                };
                let learner = q.as_ref().expect("gaifo_dp trains a value function");
                let states: Vec<&[f64]> = batch.iter().map(|t| t.state.as_slice()).collect();
                let report =
                    composed_actor_grad(p, learner.online(), &states, config.entropy_weight, rng)?;
                let opt = invdyn_opt.as_mut().expect("inverse-dynamics optimizer");
                step_params(p.invdyn_params_mut(), &report.invdyn, opt, "composed actor")?;
                log.counters.invdyn += 1;
                acc.policy.add(report.loss);
                Ok(if planner_live {
                    Some(report.planner)
                } else {
                    None
                })
            }
            AlgorithmVariant::Depo
            | AlgorithmVariant::DepoSupervised
            | AlgorithmVariant::AgnosticDepg => {
                if !planner_live {
                    return Ok(None);
                }
                let TrainedPolicy::Decoupled(p) = policy else {
                    unreachable!("decoupled variants act through a decoupled policy");
                };
                let learner = q.as_ref().expect("decoupled variants train a value function");
                let imitation = config.reward_source == RewardSource::Discriminator;
                let (use_depg, use_supervised, use_cdepg) = match variant {
                    AlgorithmVariant::Depo => (true, imitation, true),
                    AlgorithmVariant::DepoSupervised => (false, true, false),
                    AlgorithmVariant::AgnosticDepg => (true, false, false),
                    _ => unreachable!(),
                };
                let spec = PlannerUpdateSpec {
                    lambda_h: config.lambda_h,
                    use_depg,
                    use_supervised,
                    use_cdepg,
                    importance_clip: config.importance_clip,
                    ..PlannerUpdateSpec::default()
                };
                let n = p.planner_params().len();
                let q_values: Vec<f64> = batch
                    .iter()
                    .map(|t| learner.value(&t.state, &t.action))
                    .collect();

                let (depg_loss, depg) = if use_depg {
                    let (loss, grad, kept) =
                        depg_grad_dropping_unsupported(p, &batch, &q_values, &spec, rng)?;
                    if kept > 0 {
                        acc.depg.add(loss);
                    }
                    (loss, grad)
                } else {
                    (0.0, vec![0.0; n])
                };
                let (sup_loss, sup) = if use_supervised {
                    let take = config.batch_size.min(demo_pairs.len());
                    let idx = rand::seq::index::sample(rng, demo_pairs.len(), take);
                    let pairs: Vec<(&[f64], &[f64])> = idx
                        .iter()
                        .map(|i| (demo_pairs[i].0.as_slice(), demo_pairs[i].1.as_slice()))
                        .collect();
                    let (loss, grad) = supervised_planner_grad(p, &pairs)?;
                    acc.supervised.add(loss);
                    (loss, grad)
                } else {
                    (0.0, vec![0.0; n])
                };
                let (cdepg_loss, cd) = if use_cdepg {
                    let (loss, grad) = cdepg_grad(p, &batch, &q_values)?;
                    acc.cdepg.add(loss);
                    (loss, grad)
                } else {
                    (0.0, vec![0.0; n])
                };
                let _ = (depg_loss, sup_loss, cdepg_loss);

                let lambda = config.lambda_h;
                let combined: Vec<f64> = depg
                    .iter()
                    .zip(sup.iter().zip(&cd))
                    .map(|(d, (s, c))| d + lambda * (s + c))
                    .collect();
                Ok(Some(combined))
            }
            AlgorithmVariant::Bco => unreachable!("handled above"),
        }
    }

    /// Behavioral cloning on inverse-dynamics-labeled expert pairs, the whole
    /// per-step update for `bco` (no discriminator, no value function).
    fn bco_step(
        &mut self,
        config: &ExperimentConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<(), TrainerError> {
        let Agent {
            policy,
            policy_opt,
            demo_pairs,
            bco_labels,
            log,
            acc,
            ..
        } = self;
        let TrainedPolicy::Monolithic(p) = policy else {
            unreachable!("bco acts through a monolithic policy");
        };
        let labels = bco_labels.as_ref().expect("labels refreshed before training");
        let take = config.batch_size.min(demo_pairs.len());
        let idx = rand::seq::index::sample(rng, demo_pairs.len(), take);
        let states: Vec<&[f64]> = idx.iter().map(|i| demo_pairs[i].0.as_slice()).collect();
        let actions: Vec<crate::envs::ActionVal> =
            idx.iter().map(|i| labels[i].clone()).collect();
        let (loss, grad) = bc_loss_grad(p, &states, &actions)?;
        let opt = policy_opt.as_mut().expect("monolithic optimizer");
        step_params(p.params_mut(), &grad, opt, "behavioral cloning")?;
        log.counters.policy += 1;
        acc.policy.add(loss);
        Ok(())
    }

    /// Deterministic evaluation episodes with true goal termination; appends
    /// a metrics row and resets the epoch's loss accumulators.
    fn evaluate_and_push_row(
        &mut self,
        epoch: usize,
        config: &ExperimentConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<(), TrainerError> {
        let episodes = config.eval_episodes;
        let mut total_return = 0.0;
        let mut successes = 0usize;
        let mut total_len = 0usize;
        let mut pairs: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
        for _ in 0..episodes {
            let mut s = self.env.sample_start(rng);
            let mut steps = 0usize;
            while steps < self.env.horizon() {
                let a = self.policy.acting().greedy_action(&s);
                let next = self.env.step(&s, &a);
                total_return += self.env.reward(&s, &next);
                pairs.push((s.clone(), next.clone()));
                s = next;
                steps += 1;
                if self.env.reached_goal(&s) {
                    successes += 1;
                    break;
                }
            }
            total_len += steps;
        }
        let eps = episodes as f64;
        let mse = match &self.policy {
            TrainedPolicy::Decoupled(p) => planner_mse(p, &pairs)?,
            TrainedPolicy::Monolithic(_) => f64::NAN,
        };
        let row = MetricsRow {
            epoch,
            env_steps: self.env_steps,
            mean_return: total_return / eps,
            success_rate: successes as f64 / eps,
            mean_episode_len: total_len as f64 / eps,
            planner_mse: mse,
            discriminator_loss: self.acc.discriminator.mean_or_nan(),
            q_loss: self.acc.q.mean_or_nan(),
            planner_depg_loss: self.acc.depg.mean_or_nan(),
            planner_supervised_loss: self.acc.supervised.mean_or_nan(),
            planner_cdepg_loss: self.acc.cdepg.mean_or_nan(),
            invdyn_loss: self.acc.invdyn.mean_or_nan(),
            policy_loss: self.acc.policy.mean_or_nan(),
        };
        self.log.push_row(row);
        self.acc = LossAccum::default();
        Ok(())
    }

    fn into_artifacts(self) -> RunArtifacts {
        RunArtifacts {
            metrics: self.log,
            policy: self.policy,
            discriminator: self.discriminator,
            q: self.q.map(SoftQLearner::into_online),
            demos: self.demos,
        }
    }
}

/// One optimizer step on a parameter vector, refusing non-finite gradients.
fn step_params(
    params: &mut ParamVector,
    grad: &[f64],
    opt: &mut Adam,
    context: &'static str,
) -> Result<(), TrainerError> {
    if grad.len() != params.len() {
        return Err(TrainerError::LengthMismatch {
            context: "optimizer step",
            expected: params.len(),
            got: grad.len(),
        });
    }
    if !grad.iter().all(|v| v.is_finite()) {
        return Err(TrainerError::NonFinite { context });
    }
    opt.step(&mut params.values, grad);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::GridWorld;

    fn tiny_grid_config(variant: AlgorithmVariant) -> ExperimentConfig {
        let mut c = ExperimentConfig::new(EnvConfig::grid(1), variant, 7);
        c.epochs = 2;
        c.steps_per_epoch = 30;
        c.grad_steps_per_epoch = 10;
        c.pretrain_steps = 50;
        c.batch_size = 16;
        c.buffer_capacity = 1000;
        c.eval_every_epochs = 1;
        c.eval_episodes = 2;
        c.demo_trajectories = 2;
        c.invdyn_pretrain_epochs = 2;
        c.invdyn_online_epochs = 1;
        c
    }

    #[test]
    fn zero_epoch_run_yields_an_empty_log() {
        let mut c = tiny_grid_config(AlgorithmVariant::Depo);
        c.epochs = 0;
        let artifacts = run_algorithm1(&c).expect("zero-budget run");
        assert!(artifacts.metrics.rows.is_empty());
        assert_eq!(artifacts.metrics.counters.planner, 0);
        assert_eq!(artifacts.metrics.counters.q, 0);
    }

    #[test]
    fn tiny_grid_run_is_deterministic_and_counts_updates() {
        let c = tiny_grid_config(AlgorithmVariant::Depo);
        let a = run_algorithm1(&c).expect("first run");
        let b = run_algorithm1(&c).expect("second run");
        assert_eq!(a.metrics.to_csv(), b.metrics.to_csv(), "reruns must match bytes");

        // 2 epochs x 10 grad steps, every component updated each step.
        assert_eq!(a.metrics.counters.planner, 20);
        assert_eq!(a.metrics.counters.q, 20);
        assert_eq!(a.metrics.counters.discriminator, 20);
        assert!(a.metrics.counters.invdyn > 0, "pretraining ran");
        assert_eq!(a.metrics.counters.policy, 0, "no monolithic updates");
        assert!(a.discriminator.is_some());
        assert!(a.q.is_some());
        assert!(a.demos.is_some());
        // Rows: epoch 0 plus one per epoch (eval cadence 1).
        assert_eq!(a.metrics.rows.len(), 3);
        let last = a.metrics.final_row().unwrap();
        assert!(last.planner_mse.is_finite());
        assert!(last.q_loss.is_finite());
    }

    #[test]
    fn variant_counters_reflect_which_models_train() {
        let g = run_algorithm1(&tiny_grid_config(AlgorithmVariant::Gaifo)).expect("gaifo");
        assert_eq!(g.metrics.counters.planner, 0);
        assert_eq!(g.metrics.counters.invdyn, 0);
        assert_eq!(g.metrics.counters.policy, 20);
        assert_eq!(g.metrics.counters.q, 20);
        assert!(g.policy.as_monolithic().is_some());

        let b = run_algorithm1(&tiny_grid_config(AlgorithmVariant::Bco)).expect("bco");
        assert_eq!(b.metrics.counters.q, 0);
        assert_eq!(b.metrics.counters.discriminator, 0);
        assert_eq!(b.metrics.counters.planner, 0);
        assert!(b.metrics.counters.invdyn > 0, "labeling model trains");
        assert_eq!(b.metrics.counters.policy, 20);
        assert!(b.q.is_none());
        assert!(b.discriminator.is_none());

        let d = run_algorithm1(&tiny_grid_config(AlgorithmVariant::GaifoDp)).expect("gaifo_dp");
        assert_eq!(d.metrics.counters.planner, 20, "planner learns through the actor");
        assert!(d.metrics.counters.invdyn >= 20, "composed actor also steps the inverse dynamics");
        assert_eq!(d.metrics.counters.policy, 0);
    }

    #[test]
    fn single_agent_cotrain_matches_the_plain_runner_bitwise() {
        let c = tiny_grid_config(AlgorithmVariant::Depo);
        let plain = run_algorithm1(&c).expect("plain");
        let co = cotrain_run(&c).expect("cotrain");
        assert_eq!(co.len(), 1);
        assert_eq!(plain.metrics.to_csv(), co[0].metrics.to_csv());
    }

    #[test]
    fn rl_mode_trains_without_demonstrations_or_discriminator() {
        let mut c = tiny_grid_config(AlgorithmVariant::Depo);
        c.reward_source = RewardSource::Environment;
        let a = rl_mode_run(&c).expect("reward-driven run");
        assert_eq!(a.metrics.counters.discriminator, 0);
        assert!(a.discriminator.is_none());
        assert!(a.demos.is_none());
        assert_eq!(a.metrics.counters.planner, 20);
        let row = a.metrics.final_row().unwrap();
        assert!(row.planner_supervised_loss.is_nan(), "no supervised term without demos");
    }

    #[test]
    fn transfer_keeps_planner_parameters_bitwise_frozen() {
        let source = run_algorithm1(&tiny_grid_config(AlgorithmVariant::Depo)).expect("source");
        let planner = source
            .policy
            .as_decoupled()
            .unwrap()
            .planner_params()
            .clone();
        let mut c = tiny_grid_config(AlgorithmVariant::Depo);
        c.env = EnvConfig::grid(4);
        let transferred = transfer_run(&planner, &c).expect("transfer");
        assert_eq!(transferred.metrics.counters.planner, 0);
        let after = transferred.policy.as_decoupled().unwrap().planner_params();
        assert_eq!(after.values, planner.values, "frozen planner must not move");
        assert!(transferred.metrics.counters.q > 0, "value function still trains");
        assert!(transferred.metrics.counters.invdyn > 0, "inverse dynamics still trains");
    }

    #[test]
    fn transfer_rejects_variants_without_a_planner() {
        let c = tiny_grid_config(AlgorithmVariant::Gaifo);
        let planner = ParamVector::from_values(
            crate::approx::Layout::new(&[("logits", 4)]),
            vec![0.0; 4],
        )
        .unwrap();
        let err = transfer_run(&planner, &c).unwrap_err();
        assert!(matches!(err, TrainerError::InvalidConfig { .. }));
    }

    #[test]
    fn cotrain_rejects_mismatched_state_spaces() {
        let mut c = tiny_grid_config(AlgorithmVariant::Depo);
        c.cotrain = vec![EnvConfig::point_mass(
            crate::trainer::config::TransformName::Normal,
        )];
        let err = cotrain_run(&c).unwrap_err();
        assert!(matches!(err, TrainerError::IncompatibleStateSpaces { .. }));
    }

    #[test]
    fn rollout_of_an_exact_planner_reproduces_the_expert_route() {
        let grid = GridWorld::new(1);
        let mut policy = DecoupledPolicy::tabular(GRID_SIDE, grid.n_actions());
        // Point each cell's planner row at the expert path's successor.
        let path = grid.expert_path();
        if let DecoupledPolicy::Tabular(t) = &mut policy {
            let logits = t.planner.slice_mut("logits").unwrap();
            for w in path.windows(2) {
                let s = w[0].1 * GRID_SIDE + w[0].0;
                let nx = w[1].1 * GRID_SIDE + w[1].0;
                logits[s * GRID_CELLS_LOCAL + nx] = 25.0;
            }
        }
        let start = grid.state_vec(path[0]);
        let imagined = multi_step_rollout(&policy, &start, path.len() - 1);
        for (im, cell) in imagined.iter().zip(&path) {
            assert_eq!(im, &grid.state_vec(*cell));
        }

        let pairs: Vec<(Vec<f64>, Vec<f64>)> = path
            .windows(2)
            .map(|w| (grid.state_vec(w[0]), grid.state_vec(w[1])))
            .collect();
        assert_eq!(planner_mse(&policy, &pairs).unwrap(), 0.0);
        assert!(matches!(
            planner_mse(&policy, &[]),
            Err(TrainerError::EmptyBatch { .. })
        ));
        assert_eq!(multi_step_rollout(&policy, &start, 0), vec![start.clone()]);
    }

    const GRID_CELLS_LOCAL: usize = GRID_SIDE * GRID_SIDE;

    #[test]
    fn aggregation_is_the_elementwise_mean() {
        let mean = aggregate_planner_gradients(&[vec![1.0, -2.0], vec![3.0, 4.0]]);
        assert_eq!(mean, vec![2.0, 1.0]);
        let single = vec![0.1, -0.7, 3.5];
        assert_eq!(aggregate_planner_gradients(&[single.clone()]), single);
    }

    #[test]
    fn tiny_point_mass_run_exercises_the_continuous_path() {
        let mut c = ExperimentConfig::new(
            EnvConfig::point_mass(crate::trainer::config::TransformName::Normal),
            AlgorithmVariant::Depo,
            11,
        );
        c.epochs = 1;
        c.steps_per_epoch = 30;
        c.grad_steps_per_epoch = 3;
        c.pretrain_steps = 40;
        c.batch_size = 8;
        c.buffer_capacity = 500;
        c.eval_every_epochs = 1;
        c.eval_episodes = 1;
        c.demo_trajectories = 1;
        c.invdyn_pretrain_epochs = 1;
        c.invdyn_online_epochs = 1;
        c.hidden.planner = vec![8];
        c.hidden.invdyn = vec![8];
        c.hidden.q = vec![8];
        c.hidden.discriminator = vec![8];
        let a = run_algorithm1(&c).expect("continuous run");
        assert_eq!(a.metrics.counters.planner, 3);
        assert_eq!(a.metrics.counters.q, 3);
        let row = a.metrics.final_row().unwrap();
        assert!(row.planner_mse.is_finite());
        assert!(row.mean_return.is_finite());
    }
}
