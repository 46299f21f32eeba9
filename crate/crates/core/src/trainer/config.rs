//! Declarative experiment configuration.
//!
//! Runs are described by a TOML document deserialized into
//! [`ExperimentConfig`]. Unknown keys are rejected (fail-fast against
//! typos), every hyperparameter has a documented default, and
//! [`ExperimentConfig::validate`] checks the cross-field rules before any
//! environment or network is constructed. [`config_hash`] fingerprints the
//! canonical serialization so metric tables can state exactly which
//! configuration produced them.

use super::TrainerError;
use crate::envs::{ActionTransform, EnvKind, GridWorld, PointMass};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Which environment a run (or co-training agent) interacts with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvName {
    Grid,
    PointMass,
}

/// Action-to-acceleration mapping for the point mass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TransformName {
    #[default]
    Normal,
    Inverted,
    ComplexDouble,
}

impl TransformName {
    pub fn to_transform(self) -> ActionTransform {
        match self {
            TransformName::Normal => ActionTransform::Normal,
            TransformName::Inverted => ActionTransform::Inverted,
            TransformName::ComplexDouble => ActionTransform::ComplexDouble,
        }
    }
}

/// Environment section of a configuration: the environment family plus its
/// action-dynamics knob (`k` redundant copies per direction on the grid, the
/// acceleration transform for the point mass).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvConfig {
    pub kind: EnvName,
    /// Redundant actions per direction (grid only).
    #[serde(default = "default_k")]
    pub k: usize,
    /// Acceleration transform (point mass only).
    #[serde(default)]
    pub transform: TransformName,
}

impl EnvConfig {
    pub fn grid(k: usize) -> Self {
        EnvConfig {
            kind: EnvName::Grid,
            k,
            transform: TransformName::Normal,
        }
    }

    pub fn point_mass(transform: TransformName) -> Self {
        EnvConfig {
            kind: EnvName::PointMass,
            k: 1,
            transform,
        }
    }

    pub fn build(&self) -> EnvKind {
        match self.kind {
            EnvName::Grid => EnvKind::Grid(GridWorld::new(self.k)),
            EnvName::PointMass => {
                EnvKind::PointMass(PointMass::new(self.transform.to_transform()))
            }
        }
    }
}

/// The trainable policy architectures and objectives a run can use.
///
/// * `depo` — decoupled policy; planner trained by the importance-weighted
///   pathwise gradient plus the calibrated and supervised terms.
/// * `depo_supervised` — decoupled policy; planner trained by the supervised
///   expert-pair likelihood alone.
/// * `agnostic_depg` — decoupled policy; planner trained by the
///   importance-weighted pathwise gradient alone (no calibration, no
///   supervision) — the ablation that exposes arbitrary-state planning.
/// * `gaifo` — monolithic state-to-action policy trained by soft policy
///   improvement against the discriminator reward.
/// * `gaifo_dp` — the decoupled architecture trained end-to-end by the same
///   monolithic policy improvement (gradients reach both halves; none of the
///   planner-specific objectives are used).
/// * `bco` — behavioral cloning from observation: an inverse-dynamics model
///   labels expert state pairs and a monolithic policy clones the labels
///   (no discriminator, no value function).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlgorithmVariant {
    Depo,
    DepoSupervised,
    AgnosticDepg,
    Gaifo,
    GaifoDp,
    Bco,
}

impl AlgorithmVariant {
    pub fn name(&self) -> &'static str {
        match self {
            AlgorithmVariant::Depo => "depo",
            AlgorithmVariant::DepoSupervised => "depo_supervised",
            AlgorithmVariant::AgnosticDepg => "agnostic_depg",
            AlgorithmVariant::Gaifo => "gaifo",
            AlgorithmVariant::GaifoDp => "gaifo_dp",
            AlgorithmVariant::Bco => "bco",
        }
    }

    /// Does the agent *act* through the decoupled (planner + inverse
    /// dynamics) architecture? `bco` keeps an inverse-dynamics model for
    /// labeling but acts through its monolithic clone.
    pub fn uses_decoupled_policy(&self) -> bool {
        matches!(
            self,
            AlgorithmVariant::Depo
                | AlgorithmVariant::DepoSupervised
                | AlgorithmVariant::AgnosticDepg
                | AlgorithmVariant::GaifoDp
        )
    }

    /// Does the run maintain a value function?
    pub fn uses_q(&self) -> bool {
        !matches!(self, AlgorithmVariant::Bco)
    }

    /// Does the run maintain a discriminator (in imitation mode)?
    pub fn uses_discriminator(&self) -> bool {
        !matches!(self, AlgorithmVariant::Bco)
    }
}

/// Where the scalar reward fed to the value function comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RewardSource {
    /// Imitation: the discriminator scores realized state pairs.
    #[default]
    Discriminator,
    /// Reinforcement mode: the environment's own reward; no discriminator
    /// exists and the supervised planner term is disabled.
    Environment,
}

/// Per-component optimizer step sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearningRates {
    #[serde(default = "default_lr_q")]
    pub q: f64,
    #[serde(default = "default_lr_policy")]
    pub policy: f64,
    #[serde(default = "default_lr_d")]
    pub discriminator: f64,
    #[serde(default = "default_lr_invdyn")]
    pub invdyn: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        LearningRates {
            q: default_lr_q(),
            policy: default_lr_policy(),
            discriminator: default_lr_d(),
            invdyn: default_lr_invdyn(),
        }
    }
}

/// Hidden-layer widths for the continuous-mode networks (ignored in tabular
/// mode).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HiddenSizes {
    #[serde(default = "default_hidden")]
    pub planner: Vec<usize>,
    #[serde(default = "default_hidden")]
    pub invdyn: Vec<usize>,
    #[serde(default = "default_hidden")]
    pub q: Vec<usize>,
    #[serde(default = "default_hidden")]
    pub policy: Vec<usize>,
    #[serde(default = "default_hidden")]
    pub discriminator: Vec<usize>,
}

impl Default for HiddenSizes {
    fn default() -> Self {
        HiddenSizes {
            planner: default_hidden(),
            invdyn: default_hidden(),
            q: default_hidden(),
            policy: default_hidden(),
            discriminator: default_hidden(),
        }
    }
}

/// Transfer section: start from a previously trained planner and keep it
/// frozen while the inverse dynamics, value function, and discriminator are
/// retrained under new action dynamics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransferSection {
    /// Path to a policy checkpoint whose planner section is loaded.
    pub planner_checkpoint: String,
}

/// A complete, validated run description.
///
/// An *epoch* is `steps_per_epoch` environment interactions followed by
/// `grad_steps_per_epoch` gradient iterations; evaluation (deterministic
/// episodes) happens every `eval_every_epochs` epochs and always at the end.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: EnvConfig,
    pub algorithm: AlgorithmVariant,
    pub seed: u64,
    #[serde(default)]
    pub reward_source: RewardSource,
    /// Weight of the calibrated + supervised planner terms relative to the
    /// importance-weighted term.
    #[serde(default = "default_lambda_h")]
    pub lambda_h: f64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    /// Scale on the discriminator log-score reward.
    #[serde(default = "default_reward_scale")]
    pub reward_scale: f64,
    #[serde(default = "default_gp_weight")]
    pub gradient_penalty_weight: f64,
    /// Label convention for the discriminator loss; `true` trains expert
    /// pairs toward 1 (the standard imitation convention).
    #[serde(default = "default_true")]
    pub swap_discriminator_labels: bool,
    #[serde(default = "default_entropy_weight")]
    pub entropy_weight: f64,
    /// Soft target-network mixing coefficient.
    #[serde(default = "default_target_mix")]
    pub target_mix: f64,
    /// Symmetric clip on the importance weight of the pathwise planner
    /// gradient.
    #[serde(default = "default_importance_clip")]
    pub importance_clip: f64,
    #[serde(default)]
    pub rates: LearningRates,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_steps_per_epoch")]
    pub steps_per_epoch: usize,
    #[serde(default = "default_grad_steps")]
    pub grad_steps_per_epoch: usize,
    #[serde(default = "default_buffer_capacity")]
    pub buffer_capacity: usize,
    /// Random-action environment steps collected before any training.
    #[serde(default = "default_pretrain_steps")]
    pub pretrain_steps: usize,
    /// Expert trajectories collected for imitation.
    #[serde(default = "default_demo_trajectories")]
    pub demo_trajectories: usize,
    #[serde(default = "default_eval_every")]
    pub eval_every_epochs: usize,
    #[serde(default = "default_eval_episodes")]
    pub eval_episodes: usize,
    /// Online inverse-dynamics retraining cadence (in epochs).
    #[serde(default = "default_invdyn_interval")]
    pub invdyn_interval_epochs: usize,
    /// Inner-epoch cap for the pre-training inverse-dynamics fit.
    #[serde(default = "default_invdyn_pretrain_epochs")]
    pub invdyn_pretrain_epochs: usize,
    /// Inner-epoch cap for each online inverse-dynamics refit.
    #[serde(default = "default_invdyn_online_epochs")]
    pub invdyn_online_epochs: usize,
    #[serde(default)]
    pub hidden: HiddenSizes,
    /// Additional agents for shared-planner co-training (empty for a plain
    /// run). Each entry gets its own environment, inverse dynamics, value
    /// function, discriminator, and buffer; the planner is shared.
    #[serde(default)]
    pub cotrain: Vec<EnvConfig>,
    #[serde(default)]
    pub transfer: Option<TransferSection>,
}

impl ExperimentConfig {
    /// A configuration with every optional field at its default.
    pub fn new(env: EnvConfig, algorithm: AlgorithmVariant, seed: u64) -> Self {
        ExperimentConfig {
            env,
            algorithm,
            seed,
            reward_source: RewardSource::default(),
            lambda_h: default_lambda_h(),
            gamma: default_gamma(),
            batch_size: default_batch_size(),
            reward_scale: default_reward_scale(),
            gradient_penalty_weight: default_gp_weight(),
            swap_discriminator_labels: true,
            entropy_weight: default_entropy_weight(),
            target_mix: default_target_mix(),
            importance_clip: default_importance_clip(),
            rates: LearningRates::default(),
            epochs: default_epochs(),
            steps_per_epoch: default_steps_per_epoch(),
            grad_steps_per_epoch: default_grad_steps(),
            buffer_capacity: default_buffer_capacity(),
            pretrain_steps: default_pretrain_steps(),
            demo_trajectories: default_demo_trajectories(),
            eval_every_epochs: default_eval_every(),
            eval_episodes: default_eval_episodes(),
            invdyn_interval_epochs: default_invdyn_interval(),
            invdyn_pretrain_epochs: default_invdyn_pretrain_epochs(),
            invdyn_online_epochs: default_invdyn_online_epochs(),
            hidden: HiddenSizes::default(),
            cotrain: Vec::new(),
            transfer: None,
        }
    }

    /// Parses a TOML document, rejecting unknown keys, then validates.
    pub fn from_toml(text: &str) -> Result<Self, TrainerError> {
        let cfg: ExperimentConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical serialization (used for hashing and manifests).
    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serialization cannot fail")
    }

    /// Cross-field validation; every runner calls this first.
    pub fn validate(&self) -> Result<(), TrainerError> {
        let fail = |reason: String| Err(TrainerError::InvalidConfig { reason });
        for (name, v) in [
            ("rates.q", self.rates.q),
            ("rates.policy", self.rates.policy),
            ("rates.discriminator", self.rates.discriminator),
            ("rates.invdyn", self.rates.invdyn),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return fail(format!("{name} must be positive and finite, got {v}"));
            }
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return fail(format!("gamma must lie in (0,1), got {}", self.gamma));
        }
        if self.batch_size == 0 {
            return fail("batch_size must be positive".into());
        }
        if self.buffer_capacity < self.batch_size {
            return fail(format!(
                "buffer_capacity {} is smaller than batch_size {}",
                self.buffer_capacity, self.batch_size
            ));
        }
        if !(self.reward_scale > 0.0) {
            return fail(format!(
                "reward_scale must be positive, got {}",
                self.reward_scale
            ));
        }
        if self.gradient_penalty_weight < 0.0 {
            return fail(format!(
                "gradient_penalty_weight must be nonnegative, got {}",
                self.gradient_penalty_weight
            ));
        }
        if self.entropy_weight < 0.0 {
            return fail(format!(
                "entropy_weight must be nonnegative, got {}",
                self.entropy_weight
            ));
        }
        if !(self.target_mix > 0.0 && self.target_mix <= 1.0) {
            return fail(format!(
                "target_mix must lie in (0,1], got {}",
                self.target_mix
            ));
        }
        if !(self.importance_clip > 0.0) {
            return fail(format!(
                "importance_clip must be positive, got {}",
                self.importance_clip
            ));
        }
        if self.lambda_h < 0.0 {
            return fail(format!("lambda_h must be nonnegative, got {}", self.lambda_h));
        }
        if self.steps_per_epoch == 0 {
            return fail("steps_per_epoch must be positive".into());
        }
        if self.eval_every_epochs == 0 || self.eval_episodes == 0 {
            return fail("eval cadence and episode count must be positive".into());
        }
        if self.invdyn_interval_epochs == 0 {
            return fail("invdyn_interval_epochs must be positive".into());
        }
        if self.env.k == 0 {
            return fail("env.k must be at least 1".into());
        }
        for (i, e) in self.cotrain.iter().enumerate() {
            if e.k == 0 {
                return fail(format!("cotrain[{i}].k must be at least 1"));
            }
        }
        let imitation = self.reward_source == RewardSource::Discriminator;
        if imitation && self.demo_trajectories == 0 {
            return fail("imitation mode needs at least one demonstration trajectory".into());
        }
        if self.reward_source == RewardSource::Environment
            && self.algorithm == AlgorithmVariant::Bco
        {
            return fail(
                "bco clones demonstration labels and has no use for an environment reward"
                    .into(),
            );
        }
        if self.reward_source == RewardSource::Environment
            && self.algorithm == AlgorithmVariant::DepoSupervised
        {
            return fail(
                "the supervised-planner ablation trains only on demonstrations; \
                 use reward_source = \"discriminator\""
                    .into(),
            );
        }
        if self.transfer.is_some()
            && matches!(
                self.algorithm,
                AlgorithmVariant::Gaifo | AlgorithmVariant::Bco
            )
        {
            return fail(format!(
                "transfer requires a planner, but variant {} has none",
                self.algorithm.name()
            ));
        }
        if self.transfer.is_some() && !self.cotrain.is_empty() {
            return fail("transfer and co-training cannot be combined".into());
        }
        Ok(())
    }
}

/// Hex SHA-256 of a configuration document (or any byte string); recorded in
/// metric tables and run manifests so outputs state their exact inputs.
pub fn config_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    let digest = h.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

fn default_k() -> usize {
    1
}
fn default_lambda_h() -> f64 {
    1.0
}
fn default_gamma() -> f64 {
    0.99
}
fn default_batch_size() -> usize {
    256
}
fn default_reward_scale() -> f64 {
    2.0
}
fn default_gp_weight() -> f64 {
    4.0
}
fn default_true() -> bool {
    true
}
fn default_entropy_weight() -> f64 {
    0.2
}
fn default_target_mix() -> f64 {
    0.005
}
fn default_importance_clip() -> f64 {
    50.0
}
fn default_lr_q() -> f64 {
    3e-4
}
fn default_lr_policy() -> f64 {
    3e-4
}
fn default_lr_d() -> f64 {
    3e-4
}
fn default_lr_invdyn() -> f64 {
    1e-4
}
fn default_epochs() -> usize {
    50
}
fn default_steps_per_epoch() -> usize {
    1000
}
fn default_grad_steps() -> usize {
    1000
}
fn default_buffer_capacity() -> usize {
    200_000
}
fn default_pretrain_steps() -> usize {
    10_000
}
fn default_demo_trajectories() -> usize {
    20
}
fn default_eval_every() -> usize {
    5
}
fn default_eval_episodes() -> usize {
    20
}
fn default_invdyn_interval() -> usize {
    10
}
fn default_invdyn_pretrain_epochs() -> usize {
    200
}
fn default_invdyn_online_epochs() -> usize {
    50
}
fn default_hidden() -> Vec<usize> {
    vec![64]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_toml_parses_with_defaults() {
        let cfg = ExperimentConfig::from_toml(
            "seed = 7\nalgorithm = \"depo\"\n[env]\nkind = \"grid\"\nk = 2\n",
        )
        .unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.algorithm, AlgorithmVariant::Depo);
        assert_eq!(cfg.env.kind, EnvName::Grid);
        assert_eq!(cfg.env.k, 2);
        assert_eq!(cfg.lambda_h, 1.0);
        assert_eq!(cfg.gamma, 0.99);
        assert_eq!(cfg.batch_size, 256);
        assert_eq!(cfg.rates.q, 3e-4);
        assert_eq!(cfg.rates.invdyn, 1e-4);
        assert!(cfg.swap_discriminator_labels);
        assert_eq!(cfg.reward_source, RewardSource::Discriminator);
        assert!(cfg.cotrain.is_empty());
        assert!(cfg.transfer.is_none());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = ExperimentConfig::from_toml(
            "seed = 1\nalgorithm = \"depo\"\nlerning_rate = 0.1\n[env]\nkind = \"grid\"\n",
        )
        .unwrap_err();
        assert!(matches!(err, TrainerError::ConfigParse(_)));
    }

    #[test]
    fn unknown_variant_is_rejected() {
        let err = ExperimentConfig::from_toml(
            "seed = 1\nalgorithm = \"depo2\"\n[env]\nkind = \"grid\"\n",
        )
        .unwrap_err();
        assert!(matches!(err, TrainerError::ConfigParse(_)));
    }

    #[test]
    fn validation_rejects_bad_fields() {
        let base = ExperimentConfig::new(EnvConfig::grid(1), AlgorithmVariant::Depo, 0);
        let mut c = base.clone();
        c.gamma = 1.0;
        assert!(c.validate().is_err());
        let mut c = base.clone();
        c.rates.q = 0.0;
        assert!(c.validate().is_err());
        let mut c = base.clone();
        c.batch_size = 0;
        assert!(c.validate().is_err());
        let mut c = base.clone();
        c.buffer_capacity = c.batch_size - 1;
        assert!(c.validate().is_err());
        let mut c = base.clone();
        c.reward_source = RewardSource::Environment;
        c.algorithm = AlgorithmVariant::Bco;
        assert!(c.validate().is_err());
        let mut c = base.clone();
        c.algorithm = AlgorithmVariant::Gaifo;
        c.transfer = Some(TransferSection {
            planner_checkpoint: "x".into(),
        });
        assert!(c.validate().is_err());
        assert!(base.validate().is_ok());
    }

    #[test]
    fn round_trip_preserves_the_configuration() {
        let mut cfg = ExperimentConfig::new(
            EnvConfig::point_mass(TransformName::Inverted),
            AlgorithmVariant::GaifoDp,
            42,
        );
        cfg.cotrain = vec![EnvConfig::point_mass(TransformName::Normal)];
        cfg.hidden.planner = vec![32, 32];
        let text = cfg.to_toml();
        let back = ExperimentConfig::from_toml(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn hash_is_stable_and_input_sensitive() {
        let cfg = ExperimentConfig::new(EnvConfig::grid(1), AlgorithmVariant::Depo, 1);
        let h1 = config_hash(cfg.to_toml().as_bytes());
        let h2 = config_hash(cfg.to_toml().as_bytes());
        assert_eq!(h1, h2);
        assert_eq!(h1.len(), 64);
        let mut other = cfg.clone();
        other.seed = 2;
        assert_ne!(h1, config_hash(other.to_toml().as_bytes()));
    }

    #[test]
    fn env_configs_build_the_right_environments() {
        let g = EnvConfig::grid(4).build();
        assert_eq!(g.id(), "grid6x6-k4");
        assert!(g.is_discrete());
        let p = EnvConfig::point_mass(TransformName::ComplexDouble).build();
        assert_eq!(p.id(), "point_mass-complex_double");
        assert_eq!(p.state_dim(), 4);
    }
}
