//! Experiment configuration: a flat TOML file validated against a
//! closed schema, command-line `key=value` overrides, and the named
//! presets for the compared model variants.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::coding::CodingParams;
use crate::error::{Error, Result};
use crate::lif::LifParams;
use crate::losses::RegWeights;
use crate::models::{Family, Model, ModelDims};
use crate::tensor::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// "sae", "ae", or "vae"
    pub family: String,
    pub n_z: usize,
    /// Square input side; convolution channel widths; kernel size.
    pub input_hw: usize,
    pub ch1: usize,
    pub ch2: usize,
    pub kernel: usize,
    /// Membrane decay and spike threshold.
    pub tau: f64,
    pub omega: f64,
    /// Encoding: intensity scale, corruption level, simulation length,
    /// and the first step eligible for decoding.
    pub s: f64,
    pub epsilon: f64,
    pub t_steps: usize,
    pub t_min: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Regularization weights; zero disables a term.
    pub l2: f64,
    pub p1: f64,
    pub p2: f64,
    pub a1: f64,
    pub a1_l3: f64,
    pub beta: f64,
    /// How many repetitions to run when no explicit seed list is given.
    pub repetitions: usize,
    /// Explicit per-run seeds; empty means derive `repetitions` seeds
    /// from the command-line base seed.
    pub seeds: Vec<u64>,
    pub data_dir: Option<String>,
    /// Optional caps on the number of training / validation examples
    /// (desk-scale runs); absent means the full split.
    pub train_limit: Option<usize>,
    pub val_limit: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            family: "sae".into(),
            n_z: 100,
            input_hw: 28,
            ch1: 16,
            ch2: 32,
            kernel: 5,
            tau: 0.99,
            omega: 1.0,
            s: 0.2,
            epsilon: 0.0,
            t_steps: 100,
            t_min: 0,
            lr: 0.0005,
            batch_size: 64,
            epochs: 10,
            l2: 0.0,
            p1: 0.0,
            p2: 0.0,
            a1: 0.0,
            a1_l3: 0.0,
            beta: 0.0,
            repetitions: 5,
            seeds: Vec::new(),
            data_dir: None,
            train_limit: None,
            val_limit: None,
        }
    }
}

/// The model variants compared in the experiments, with their exact
/// regularization weights.
pub const PRESETS: [&str; 7] = [
    "sae",
    "sae-sparse",
    "sae-dense",
    "ae",
    "ae-l2",
    "vae",
    "beta-vae",
];

fn finish(mut table: toml::Table, overrides: &[String]) -> Result<ExperimentConfig> {
    for item in overrides {
        let (key, value) = item.split_once('=').ok_or_else(|| {
            Error::Config(format!("override {item:?} is not of the form key=value"))
        })?;
        table.insert(key.trim().to_string(), parse_override_value(value));
    }
    let cfg: ExperimentConfig = table
        .try_into()
        .map_err(|e| Error::Config(format!("config: {e}")))?;
    cfg.validate()?;
    Ok(cfg)
}

fn parse_override_value(raw: &str) -> toml::Value {
    let trimmed = raw.trim();
    // try the TOML value grammar first so numbers, booleans, and
    // arrays work; fall back to a bare string
    if let Ok(table) = format!("v = {trimmed}").parse::<toml::Table>() {
        if let Some(v) = table.get("v") {
            return v.clone();
        }
    }
    toml::Value::String(trimmed.to_string())
}

impl ExperimentConfig {
    pub fn preset(name: &str) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::default();
        match name {
            "sae" => {}
            "sae-sparse" => {
                cfg.p1 = 0.005;
                cfg.p2 = 0.005;
                cfg.a1 = 0.01;
            }
            "sae-dense" => {
                cfg.p2 = 0.01;
                cfg.a1_l3 = 0.1;
            }
            "ae" => cfg.family = "ae".into(),
            "ae-l2" | "ae_l2" => {
                cfg.family = "ae".into();
                cfg.l2 = 0.00001;
            }
            "vae" => {
                cfg.family = "vae".into();
                cfg.l2 = 0.01;
                cfg.beta = 1.0;
            }
            "beta-vae" | "betavae" => {
                cfg.family = "vae".into();
                cfg.l2 = 0.01;
                cfg.beta = 0.1;
            }
            other => {
                return Err(Error::Config(format!(
                    "unknown preset {other:?}; expected one of {PRESETS:?}"
                )))
            }
        }
        Ok(cfg)
    }

    pub fn from_toml_str(text: &str) -> Result<ExperimentConfig> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file and applies `key=value` overrides. Both the
    /// file and the overrides are checked against the closed schema,
    /// so an unknown key is rejected wherever it appears.
    pub fn load(path: &Path, overrides: &[String]) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let table: toml::Table = text
            .parse()
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        finish(table, overrides)
    }

    /// Applies `key=value` overrides to an existing config (the eval
    /// and analyze paths, which start from a checkpoint's embedded
    /// config rather than a file).
    pub fn with_overrides(&self, overrides: &[String]) -> Result<ExperimentConfig> {
        if overrides.is_empty() {
            return Ok(self.clone());
        }
        let table = toml::Table::try_from(self.clone())
            .map_err(|e| Error::Config(format!("config: {e}")))?;
        finish(table, overrides)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.family()?;
        self.dims().validate()?;
        let _: LifParams<f64> = self.lif()?;
        let _: CodingParams<f64> = self.coding()?;
        self.reg_weights().validate(self.family()?)?;
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.repetitions == 0 && self.seeds.is_empty() {
            return Err(Error::Config(
                "repetitions must be >= 1 when no seed list is given".into(),
            ));
        }
        Ok(())
    }

    pub fn family(&self) -> Result<Family> {
        Family::parse(&self.family)
    }

    pub fn dims(&self) -> ModelDims {
        ModelDims {
            input_hw: self.input_hw,
            in_ch: 1,
            ch1: self.ch1,
            ch2: self.ch2,
            kernel: self.kernel,
            n_z: self.n_z,
        }
    }

    pub fn lif<S: Scalar>(&self) -> Result<LifParams<S>> {
        LifParams::new(S::from_f64(self.tau), S::from_f64(self.omega))
    }

    pub fn coding<S: Scalar>(&self) -> Result<CodingParams<S>> {
        CodingParams::new(
            S::from_f64(self.epsilon),
            S::from_f64(self.s),
            self.t_steps,
            self.t_min,
        )
    }

    pub fn reg_weights(&self) -> RegWeights {
        RegWeights {
            l2: self.l2,
            p1: self.p1,
            p2: self.p2,
            a1: self.a1,
            a1_l3: self.a1_l3,
            beta: self.beta,
        }
    }

    /// The seeds this experiment runs with: the explicit list if one
    /// was configured, otherwise `repetitions` seeds counting up from
    /// the command-line base seed.
    pub fn run_seeds(&self, base_seed: u64) -> Vec<u64> {
        if self.seeds.is_empty() {
            (0..self.repetitions as u64).map(|i| base_seed + i).collect()
        } else {
            self.seeds.clone()
        }
    }

    pub fn build_model<S: Scalar, R: rand::Rng>(&self, rng: &mut R) -> Result<Model<S>> {
        Model::build(self.family()?, self.dims(), self.lif()?, self.coding()?, rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_the_documented_table() {
        let cfg = ExperimentConfig::default();
        assert_eq!(cfg.family, "sae");
        assert_eq!(cfg.n_z, 100);
        assert_eq!(cfg.kernel, 5);
        assert_eq!((cfg.ch1, cfg.ch2), (16, 32));
        assert_eq!(cfg.epochs, 10);
        assert_eq!(cfg.batch_size, 64);
        assert_eq!(cfg.lr, 0.0005);
        assert_eq!(cfg.epsilon, 0.0);
        assert_eq!(cfg.s, 0.2);
        assert_eq!(cfg.t_steps, 100);
        assert_eq!(cfg.tau, 0.99);
        assert_eq!(cfg.repetitions, 5);
        cfg.validate().unwrap();
    }

    #[test]
    fn presets_set_exactly_the_documented_weights() {
        let w = |name: &str| {
            let c = ExperimentConfig::preset(name).unwrap();
            c.validate().unwrap();
            (c.family.clone(), c.reg_weights())
        };
        let (f, r) = w("sae");
        assert_eq!(f, "sae");
        assert_eq!(r, RegWeights::default());
        let (_, r) = w("sae-sparse");
        assert_eq!((r.p1, r.p2, r.a1), (0.005, 0.005, 0.01));
        assert_eq!((r.l2, r.a1_l3, r.beta), (0.0, 0.0, 0.0));
        let (_, r) = w("sae-dense");
        assert_eq!((r.p2, r.a1_l3), (0.01, 0.1));
        assert_eq!((r.l2, r.p1, r.a1, r.beta), (0.0, 0.0, 0.0, 0.0));
        let (f, r) = w("ae");
        assert_eq!(f, "ae");
        assert_eq!(r, RegWeights::default());
        let (f, r) = w("ae-l2");
        assert_eq!(f, "ae");
        assert_eq!(r.l2, 0.00001);
        let (f, r) = w("vae");
        assert_eq!(f, "vae");
        assert_eq!((r.l2, r.beta), (0.01, 1.0));
        let (f, r) = w("beta-vae");
        assert_eq!(f, "vae");
        assert_eq!((r.l2, r.beta), (0.01, 0.1));
        assert!(ExperimentConfig::preset("sae-doubledense").is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = ExperimentConfig::from_toml_str("n_z = 10\nlearning_rate = 0.1\n").unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
        assert!(err.to_string().contains("learning_rate"), "{err}");
    }

    #[test]
    fn overrides_apply_after_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.toml");
        std::fs::write(&path, "family = \"ae\"\nn_z = 20\n").unwrap();
        let cfg = ExperimentConfig::load(
            &path,
            &["n_z=50".into(), "lr=0.001".into(), "seeds=[7, 9]".into()],
        )
        .unwrap();
        assert_eq!(cfg.family, "ae");
        assert_eq!(cfg.n_z, 50);
        assert_eq!(cfg.lr, 0.001);
        assert_eq!(cfg.seeds, vec![7, 9]);

        let err = ExperimentConfig::load(&path, &["nz=50".into()]).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
        let err = ExperimentConfig::load(&path, &["n_z".into()]).unwrap_err();
        assert!(err.to_string().contains("key=value"), "{err}");
    }

    #[test]
    fn string_overrides_work_for_string_fields() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.toml");
        std::fs::write(&path, "").unwrap();
        let cfg = ExperimentConfig::load(&path, &["family=vae".into()]).unwrap();
        assert_eq!(cfg.family, "vae");
        let cfg = ExperimentConfig::load(&path, &["data_dir=\"/tmp/x\"".into()]).unwrap();
        assert_eq!(cfg.data_dir.as_deref(), Some("/tmp/x"));
    }

    #[test]
    fn invalid_values_fail_validation() {
        assert!(ExperimentConfig::from_toml_str("family = \"gan\"").is_err());
        assert!(ExperimentConfig::from_toml_str("tau = 1.5").is_err());
        assert!(ExperimentConfig::from_toml_str("l2 = -0.1").is_err());
        assert!(ExperimentConfig::from_toml_str("lr = 0.0").is_err());
        assert!(ExperimentConfig::from_toml_str("batch_size = 0").is_err());
        // spiking regularizers are not meaningful for the plain AE
        assert!(ExperimentConfig::from_toml_str("family = \"ae\"\np1 = 0.1").is_err());
    }

    #[test]
    fn toml_round_trip_preserves_the_config() {
        let mut cfg = ExperimentConfig::preset("sae-dense").unwrap();
        cfg.seeds = vec![3, 5];
        cfg.train_limit = Some(2000);
        let text = cfg.to_toml();
        let back = ExperimentConfig::from_toml_str(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn run_seeds_prefer_the_explicit_list() {
        let mut cfg = ExperimentConfig::default();
        cfg.repetitions = 3;
        assert_eq!(cfg.run_seeds(10), vec![10, 11, 12]);
        cfg.seeds = vec![42, 7];
        assert_eq!(cfg.run_seeds(10), vec![42, 7]);
    }

    #[test]
    fn config_builds_a_model() {
        let mut cfg = ExperimentConfig::default();
        cfg.n_z = 10;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        use rand::SeedableRng;
        let m: Model<f32> = cfg.build_model(&mut rng).unwrap();
        assert_eq!(m.param_count(), 282_400);
    }
}
