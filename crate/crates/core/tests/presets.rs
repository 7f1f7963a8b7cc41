//! The TOML files under configs/ must stay in lockstep with the
//! built-in presets: same weights, same defaults everywhere else.

use std::path::Path;

use rand::SeedableRng;
use spiking_ae::config::{ExperimentConfig, PRESETS};

#[test]
fn config_files_match_builtin_presets() {
    let dir = Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs"));
    for name in PRESETS {
        let path = dir.join(format!("{name}.toml"));
        let from_file = ExperimentConfig::load(&path, &[]).unwrap();
        let builtin = ExperimentConfig::preset(name).unwrap();
        assert_eq!(
            from_file.to_toml(),
            builtin.to_toml(),
            "{name}.toml drifted from the builtin preset"
        );
    }
}

#[test]
fn every_preset_validates_and_builds() {
    for name in PRESETS {
        let cfg = ExperimentConfig::preset(name).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let model: spiking_ae::models::Model<f32> = cfg.build_model(&mut rng).unwrap();
        assert_eq!(model.dims.n_z, 100, "{name}");
    }
}
