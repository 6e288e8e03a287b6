use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dblrnet::{DblrnetConfig, RefineMode};
use crate::diffcore::AdamConfig;
use crate::error::{config_err, Error, Result};
use crate::gppnet::{FusionStrategy, GppnetConfig};
use crate::losses::{DiscriminatorConfig, LossWeights};
use crate::synthdoc::DegradeConfig;

/// Reference values of the full-scale training protocol.
pub const FULL_SCALE_BATCH: usize = 16;
pub const FULL_SCALE_GPP_INPUT: usize = 224;
pub const FULL_SCALE_CROP: usize = 512;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageOrder {
    #[default]
    GlobalThenLocal,
    LocalThenGlobal,
    GlobalOnly,
}

impl StageOrder {
    pub const ALL: [StageOrder; 3] = [
        StageOrder::LocalThenGlobal,
        StageOrder::GlobalThenLocal,
        StageOrder::GlobalOnly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StageOrder::GlobalThenLocal => "global_then_local",
            StageOrder::LocalThenGlobal => "local_then_global",
            StageOrder::GlobalOnly => "global_only",
        }
    }

    /// Row label used in ablation tables.
    pub fn label(self) -> &'static str {
        match self {
            StageOrder::GlobalThenLocal => "Global + Local",
            StageOrder::LocalThenGlobal => "Local + Global",
            StageOrder::GlobalOnly => "Global",
        }
    }
}

impl fmt::Display for StageOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StageOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        StageOrder::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| config_err!("unknown stage order {s:?}"))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InferenceMode {
    #[default]
    Baseline,
    /// Coefficient maps predicted at reduced resolution.
    Fast,
}

impl FromStr for InferenceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(InferenceMode::Baseline),
            "fast" => Ok(InferenceMode::Fast),
            _ => Err(config_err!("unknown inference mode {s:?}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Full-scale runs use [`FULL_SCALE_BATCH`].
    pub batch_size: usize,
    pub gpp_steps: usize,
    pub joint_steps: usize,
    pub finetune_steps: usize,
    /// Square training crop for the refinement stage; full scale is
    /// [`FULL_SCALE_CROP`].
    pub crop: usize,
    pub adam: AdamConfig,
    pub weights: LossWeights,
    pub finetune_weights: LossWeights,
    pub stage_order: StageOrder,
    pub refine_mode: RefineMode,
    pub fusion: FusionStrategy,
    /// Down-factor of the fast inference path.
    pub k_fast: usize,
    pub log_every: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 4,
            gpp_steps: 300,
            joint_steps: 2000,
            finetune_steps: 200,
            crop: 128,
            adam: AdamConfig::default(),
            weights: LossWeights::default(),
            finetune_weights: LossWeights::finetune(),
            stage_order: StageOrder::GlobalThenLocal,
            refine_mode: RefineMode::Parametric,
            fusion: FusionStrategy::Concatenation,
            k_fast: 2,
            log_every: 50,
            seed: 1,
        }
    }
}

/// Dataset synthesis settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub count: usize,
    pub size: usize,
    pub intensity_min: f64,
    pub intensity_max: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            count: 200,
            size: 128,
            intensity_min: 0.5,
            intensity_max: 0.5,
            seed: 2024,
        }
    }
}

/// Everything a run needs; the on-disk JSON config mirrors this.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub train: TrainConfig,
    pub gppnet: GppnetConfig,
    pub dblrnet: DblrnetConfig,
    pub disc: DiscriminatorConfig,
    pub degrade: DegradeConfig,
    pub synth: SynthConfig,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            train: TrainConfig::default(),
            gppnet: GppnetConfig::toy(),
            dblrnet: DblrnetConfig::toy(),
            disc: DiscriminatorConfig::default(),
            degrade: DegradeConfig::default(),
            synth: SynthConfig::default(),
        }
    }
}

impl Config {
    /// Full-size architectures with desk-scale training settings.
    pub fn full() -> Self {
        Config {
            gppnet: GppnetConfig::default(),
            dblrnet: DblrnetConfig::default(),
            ..Self::default()
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Config = serde_json::from_str(text).map_err(|e| config_err!("{e}"))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let t = &self.train;
        if t.batch_size == 0 || t.crop == 0 || t.k_fast == 0 {
            return Err(config_err!("batch_size, crop and k_fast must be positive"));
        }
        t.weights.validate()?;
        t.finetune_weights.validate()?;
        let a = &t.adam;
        if !(a.lr > 0.0 && (0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.eps > 0.0) {
            return Err(config_err!("invalid optimizer settings {a:?}"));
        }
        let s = &self.synth;
        if !(0.0 <= s.intensity_min && s.intensity_min <= s.intensity_max && s.intensity_max <= 1.0) {
            return Err(config_err!("synth intensity range must satisfy 0 ≤ min ≤ max ≤ 1"));
        }
        Ok(())
    }

    /// Derives every stochastic component's seed from one value.
    pub fn reseed(&mut self, seed: u64) {
        self.train.seed = seed;
        self.synth.seed = seed;
        self.degrade.seed = seed;
        self.gppnet.seed = seed.wrapping_add(1);
        self.dblrnet.seed = seed.wrapping_add(2);
        self.disc.seed = seed.wrapping_add(3);
    }

    /// Hash of the architecture configs, which fix the weight layout.
    /// Initialization seeds are left out.
    pub fn model_hash(&self) -> String {
        let mut h = Sha256::new();
        let gpp = GppnetConfig {
            seed: 0,
            ..self.gppnet.clone()
        };
        let dbl = DblrnetConfig {
            seed: 0,
            ..self.dblrnet.clone()
        };
        let disc = DiscriminatorConfig {
            seed: 0,
            ..self.disc.clone()
        };
        for part in [
            serde_json::to_string(&gpp),
            serde_json::to_string(&dbl),
            serde_json::to_string(&disc),
        ] {
            h.update(part.expect("config serializes").as_bytes());
            h.update([0u8]);
        }
        hex::encode(h.finalize())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_roundtrip() {
        let cfg = Config::default();
        assert_eq!(Config::from_json(&cfg.to_json()).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(Config::from_json(r#"{"train": {"batch": 3}}"#).is_err());
        assert!(Config::from_json(r#"{"trian": {}}"#).is_err());
    }

    #[test]
    fn partial_documents_fill_defaults() {
        let cfg = Config::from_json(r#"{"train": {"batch_size": 2}}"#).unwrap();
        assert_eq!(cfg.train.batch_size, 2);
        assert_eq!(cfg.train.adam, AdamConfig::default());
    }

    #[test]
    fn model_hash_ignores_seeds_but_not_layout() {
        let a = Config::default();
        let mut b = a.clone();
        b.dblrnet.seed += 1;
        b.train.seed += 1;
        assert_eq!(a.model_hash(), b.model_hash());
        b.dblrnet.smooth_width += 1;
        assert_ne!(a.model_hash(), b.model_hash());
    }

    #[test]
    fn full_scale_reference_values() {
        let t = TrainConfig::default();
        assert_eq!((t.adam.lr, t.adam.beta1, t.adam.beta2), (1e-4, 0.9, 0.99));
        assert_eq!(
            (FULL_SCALE_BATCH, FULL_SCALE_GPP_INPUT, FULL_SCALE_CROP),
            (16, 224, 512)
        );
        assert_eq!(GppnetConfig::default().thumbnail, FULL_SCALE_GPP_INPUT);
    }
}
