use std::path::Path;

use copert_core::discrepancy::{DiscrepancyModel, Mode, ModelInit};
use copert_core::lti::{observer_gain, LqrWeights};
use copert_core::plants::{DataGenConfig, Plant, PlantKind};
use copert_core::training::TrainConfig;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::manifest::sha256_hex;

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

/// Everything needed to reproduce one experiment. Loss weights and the
/// training mode live in `train`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub plant: PlantKind,
    pub data: DataGenConfig,
    pub train: TrainConfig,
    pub model: ModelInit,
    /// Dual LQR weights for the observer gain `L_P`.
    pub observer: LqrWeights,
    #[serde(default)]
    pub output_dir: Option<String>,
}

impl ExperimentConfig {
    /// Benchmark defaults: `N = 10` for the pendulum and Van der Pol
    /// oscillator, `N = 20` for the UAS.
    pub fn preset(kind: PlantKind) -> Self {
        let plant = Plant::new(kind);
        let n = plant.state_dim();
        let lifted_dim = if kind == PlantKind::Uas { 20 } else { 10 };
        Self {
            schema_version: CONFIG_SCHEMA_VERSION,
            plant: kind,
            data: DataGenConfig::benchmark(kind),
            train: TrainConfig::benchmark(Mode::Perturbation),
            model: ModelInit::new(lifted_dim),
            observer: LqrWeights::identity(n, n),
            output_dir: None,
        }
    }

    pub fn mode(&self) -> Mode {
        self.train.mode
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(CliError::Config(format!(
                "schema_version {} is not supported (expected {CONFIG_SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        let plant = Plant::new(self.plant);
        self.data.validate(&plant)?;
        self.train.validate()?;
        self.model.validate()?;
        self.train.weights.validate()?;
        let n = plant.state_dim();
        if self.observer.q.len() != n || self.observer.r.len() != n {
            return Err(CliError::Config(format!(
                "observer weights need {n} state and {n} output entries"
            )));
        }
        if self.train.horizon > self.data.horizon {
            return Err(CliError::Config(format!(
                "training horizon {} exceeds data horizon {}",
                self.train.horizon, self.data.horizon
            )));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let cfg: Self =
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    /// SHA-256 of the compact JSON encoding.
    pub fn hash(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("config serializes").as_bytes())
    }

    /// Nominal model, observer gain and a freshly initialized perturbation.
    /// The initialization draws from stream 2 of `seed`.
    pub fn build_model(&self, seed: u64) -> CliResult<DiscrepancyModel> {
        let plant = Plant::new(self.plant);
        let nominal = plant.nominal_model(self.data.dt)?;
        let gain = observer_gain(
            &nominal.a,
            &nominal.c,
            &self.observer.q_matrix(),
            &self.observer.r_matrix(),
        )?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(2);
        Ok(DiscrepancyModel::initialize(
            nominal,
            gain,
            plant.trim(),
            self.mode(),
            &self.model,
            &mut rng,
        )?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_are_valid_and_round_trip() {
        for kind in [PlantKind::Pendulum, PlantKind::Vdp, PlantKind::Uas] {
            let cfg = ExperimentConfig::preset(kind);
            cfg.validate().unwrap();
            let back: ExperimentConfig = serde_json::from_str(&cfg.to_json()).unwrap();
            assert_eq!(back, cfg);
            assert_eq!(back.hash(), cfg.hash());
        }
        assert_eq!(ExperimentConfig::preset(PlantKind::Uas).model.lifted_dim, 20);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = ExperimentConfig::preset(PlantKind::Pendulum);
        cfg.model.lifted_dim = 0;
        assert!(matches!(cfg.validate(), Err(CliError::Core(_))));
        let mut cfg = ExperimentConfig::preset(PlantKind::Pendulum);
        cfg.train.horizon = 500;
        assert!(matches!(cfg.validate(), Err(CliError::Config(_))));
        let mut cfg = ExperimentConfig::preset(PlantKind::Pendulum);
        cfg.schema_version = 9;
        assert!(cfg.validate().is_err());
        let err = serde_json::from_str::<ExperimentConfig>("{\"schema_version\": 1}");
        assert!(err.is_err());
    }

    #[test]
    fn model_initialization_is_seeded() {
        let cfg = ExperimentConfig::preset(PlantKind::Vdp);
        let a = cfg.build_model(5).unwrap();
        assert_eq!(a, cfg.build_model(5).unwrap());
        assert_ne!(a, cfg.build_model(6).unwrap());
        assert_eq!(a.lifted_dim(), 10);
    }
}
