//! Experiment configuration: TOML-backed, one document per experiment.
//! Unknown keys are rejected; a resolved copy is written next to outputs.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::adversary::{AttackMode, AttackPlan, TriggerMode, TriggerPattern};
use crate::aggregation::AggregatorKind;
use crate::defense::DefenseParams;
use crate::error::{Result, SimError};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Total number of clients N.
    pub clients: usize,
    /// Fraction of clients sampled per round.
    pub sample_fraction: f64,
    /// Global communication rounds R.
    pub rounds: usize,
    /// Local epochs E per selected client per round.
    pub local_epochs: usize,
    pub batch_size: usize,
    pub aggregator: AggregatorKind,
    /// Assumed byzantine count for the Krum baseline.
    pub krum_byzantine: usize,
    /// When false, the timing columns are written as zero so metrics files
    /// are byte-reproducible.
    pub record_timings: bool,
    /// ENL grid of the robustness-accuracy curve.
    pub eval_enls: Vec<f64>,
    pub dataset: DatasetConfig,
    pub attack: AttackConfig,
    pub defense: DefenseConfig,
    pub optimizer: OptimizerConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            clients: 10,
            sample_fraction: 0.5,
            rounds: 60,
            local_epochs: 2,
            batch_size: 32,
            aggregator: AggregatorKind::Nadafd,
            krum_byzantine: 1,
            record_timings: true,
            eval_enls: vec![8.0, 4.0, 2.0, 1.0],
            dataset: DatasetConfig::default(),
            attack: AttackConfig::default(),
            defense: DefenseConfig::default(),
            optimizer: OptimizerConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub classes: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub chip_size: usize,
    /// Equivalent number of looks of the generation speckle.
    pub looks: f64,
    /// Dirichlet concentration of the label-skewed partition.
    pub alpha: f64,
    pub min_per_client: usize,
    pub probe_size: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            classes: 10,
            train_per_class: 100,
            test_per_class: 40,
            chip_size: 32,
            looks: 3.0,
            alpha: 0.5,
            min_per_client: 10,
            probe_size: 20,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackConfig {
    /// Ids of compromised clients; empty disables the attack.
    pub malicious_clients: Vec<usize>,
    pub poison_ratio: f64,
    pub target_label: usize,
    pub mode: AttackMode,
    /// Round at which a one-shot attack fires.
    pub one_shot_round: usize,
    pub trigger_mode: TriggerMode,
    /// Trigger amplitude as a multiple of the intensity ceiling.
    pub trigger_amplitude: f64,
    pub trigger_row: usize,
    pub trigger_col: usize,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            malicious_clients: Vec::new(),
            poison_ratio: 0.3,
            target_label: 0,
            mode: AttackMode::Persistent,
            one_shot_round: 5,
            trigger_mode: TriggerMode::SpectralLl,
            trigger_amplitude: 0.8,
            trigger_row: 8,
            trigger_col: 8,
        }
    }
}

impl AttackConfig {
    pub fn plan(&self) -> AttackPlan {
        AttackPlan {
            malicious_clients: self.malicious_clients.clone(),
            poison_ratio: self.poison_ratio,
            target_label: self.target_label,
            mode: self.mode,
            one_shot_round: self.one_shot_round,
            trigger: TriggerPattern::uniform(
                self.trigger_mode,
                (self.trigger_row, self.trigger_col),
                self.trigger_amplitude,
            ),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DefenseConfig {
    pub zeta: f64,
    pub gamma: f64,
    pub delta: f64,
    pub xi: f64,
    pub beta: f64,
    pub wavelet_levels: usize,
    /// Equivalent number of looks of the adversarial speckle.
    pub naat_looks: f64,
    pub tau_percentile: u8,
    /// Forces the frequency mask to all-zero every round.
    pub ablate_fdci: bool,
    /// Forces beta to zero and suppresses the adversarial broadcast.
    pub ablate_naat: bool,
    /// Forces aggregation weights to FedAvg's data proportions.
    pub ablate_dhat: bool,
}

impl Default for DefenseConfig {
    fn default() -> Self {
        let p = DefenseParams::default();
        Self {
            zeta: p.zeta,
            gamma: p.gamma,
            delta: p.delta,
            xi: p.xi,
            beta: p.beta,
            wavelet_levels: p.levels,
            naat_looks: p.looks,
            tau_percentile: p.tau_percentile,
            ablate_fdci: false,
            ablate_naat: false,
            ablate_dhat: false,
        }
    }
}

impl DefenseConfig {
    pub fn params(&self) -> DefenseParams {
        DefenseParams {
            zeta: self.zeta,
            gamma: self.gamma,
            delta: self.delta,
            xi: self.xi,
            beta: self.beta,
            levels: self.wavelet_levels,
            looks: self.naat_looks,
            tau_percentile: self.tau_percentile,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for OptimizerConfig {
    // The published recipe pairs lr 0.02 with a full-scale backbone and
    // hundreds of rounds; this surrogate needs a larger step to converge
    // within the desk-scale round budget. Momentum and decay are unchanged.
    fn default() -> Self {
        Self {
            learning_rate: 0.12,
            momentum: 0.9,
            weight_decay: 1e-4,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| SimError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| SimError::Parse(e.to_string()))
    }

    /// Number of clients selected each round.
    pub fn selected_per_round(&self) -> usize {
        (self.sample_fraction * self.clients as f64).ceil() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sample_fraction > 0.0 && self.sample_fraction <= 1.0) {
            return Err(SimError::Config(format!(
                "sample fraction must lie in (0, 1], got {}",
                self.sample_fraction
            )));
        }
        if self.rounds == 0 {
            return Err(SimError::Config("rounds must be >= 1".into()));
        }
        if self.clients < 2 {
            return Err(SimError::Config("need at least 2 clients".into()));
        }
        if self.local_epochs == 0 || self.batch_size == 0 {
            return Err(SimError::Config(
                "local epochs and batch size must be >= 1".into(),
            ));
        }
        let d = &self.dataset;
        if d.classes < 2 {
            return Err(SimError::Config("need at least 2 classes".into()));
        }
        if d.train_per_class == 0 || d.test_per_class == 0 {
            return Err(SimError::Config("per-class counts must be >= 1".into()));
        }
        if d.probe_size < d.classes {
            return Err(SimError::Config(format!(
                "probe size {} must cover all {} classes",
                d.probe_size, d.classes
            )));
        }
        if !(d.looks > 0.0) {
            return Err(SimError::Config("dataset looks must be positive".into()));
        }
        if !(d.alpha > 0.0) {
            return Err(SimError::Config("dirichlet alpha must be positive".into()));
        }
        let block = 1usize << self.defense.wavelet_levels;
        if d.chip_size % block != 0 {
            return Err(SimError::Config(format!(
                "chip size {} is not divisible by 2^{}",
                d.chip_size, self.defense.wavelet_levels
            )));
        }
        let a = &self.attack;
        if !(0.0..=1.0).contains(&a.poison_ratio) {
            return Err(SimError::Config("poison ratio must lie in [0, 1]".into()));
        }
        if a.target_label >= d.classes {
            return Err(SimError::Config(format!(
                "target label {} out of range for {} classes",
                a.target_label, d.classes
            )));
        }
        if let Some(&bad) = a.malicious_clients.iter().find(|&&m| m >= self.clients) {
            return Err(SimError::Config(format!(
                "malicious client id {bad} out of range for {} clients",
                self.clients
            )));
        }
        self.defense.params().validate()?;
        let selected = self.selected_per_round();
        if self.aggregator == AggregatorKind::Nadafd && selected < 2 {
            return Err(SimError::Config(
                "the defense needs at least 2 selected clients per round".into(),
            ));
        }
        if self.aggregator == AggregatorKind::Krum && selected < self.krum_byzantine + 3 {
            return Err(SimError::Config(format!(
                "krum needs at least f + 3 = {} selected clients, got {selected}",
                self.krum_byzantine + 3
            )));
        }
        if self.eval_enls.len() < 2 {
            return Err(SimError::Config(
                "robustness evaluation needs at least 2 ENL values".into(),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        ExperimentConfig::default().validate().unwrap();
    }

    #[test]
    fn toml_round_trip() {
        let cfg = ExperimentConfig::default();
        let text = cfg.to_toml_string().unwrap();
        let back = ExperimentConfig::from_toml_str(&text).unwrap();
        assert_eq!(back.seed, cfg.seed);
        assert_eq!(back.dataset.classes, cfg.dataset.classes);
        assert_eq!(back.defense.tau_percentile, cfg.defense.tau_percentile);
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = ExperimentConfig::from_toml_str("surprise_knob = 3\n").unwrap_err();
        assert!(err.to_string().contains("surprise_knob"));
    }

    #[test]
    fn unknown_nested_keys_rejected() {
        let err =
            ExperimentConfig::from_toml_str("[defense]\nmystery = 1.0\n").unwrap_err();
        assert!(err.to_string().contains("mystery"));
    }

    #[test]
    fn partial_config_fills_defaults() {
        let cfg = ExperimentConfig::from_toml_str("seed = 9\n[dataset]\nclasses = 4\n").unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.dataset.classes, 4);
        assert_eq!(cfg.rounds, 60);
    }

    #[test]
    fn bad_values_rejected() {
        let mut cfg = ExperimentConfig::default();
        cfg.sample_fraction = 0.0;
        assert!(cfg.validate().is_err());

        let mut cfg = ExperimentConfig::default();
        cfg.dataset.chip_size = 20;
        assert!(cfg.validate().is_err());

        let mut cfg = ExperimentConfig::default();
        cfg.attack.malicious_clients = vec![99];
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn half_of_ten_selects_five() {
        let cfg = ExperimentConfig::default();
        assert_eq!(cfg.selected_per_round(), 5);
    }
}
