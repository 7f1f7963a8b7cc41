//! Checkpoint container round-trip: save a model, peek at the layout,
//! load it back bit-identically.
//!
//! The format is a magic tag, a little-endian header length, a TOML
//! header (experiment config plus tensor directory), then the raw f32
//! payload in directory order.
//!
//! ```bash
//! cargo run --example checkpoint_io
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use spiking_ae::checkpoint;
use spiking_ae::config::ExperimentConfig;
use spiking_ae::models::Model;
use spiking_ae::Result;

fn main() -> Result<()> {
    let mut cfg = ExperimentConfig::default();
    cfg.input_hw = 8;
    cfg.ch1 = 2;
    cfg.ch2 = 4;
    cfg.kernel = 3;
    cfg.n_z = 8;
    cfg.t_steps = 5;

    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let model: Model<f32> = cfg.build_model(&mut rng)?;
    let path = std::env::temp_dir().join("spiking-ae-demo.ckpt");
    checkpoint::save(&path, &model, &cfg)?;

    let bytes = std::fs::read(&path)?;
    let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    println!("wrote {} ({} bytes)", path.display(), bytes.len());
    println!("  magic        {:?}", std::str::from_utf8(&bytes[..8]).unwrap());
    println!("  header       {header_len} bytes of TOML");
    println!("  payload      {} bytes of f32", bytes.len() - 12 - header_len);

    let (loaded, loaded_cfg) = checkpoint::load(&path)?;
    assert_eq!(loaded_cfg.n_z, cfg.n_z);
    for (a, b) in model.param_values().iter().zip(loaded.param_values()) {
        assert_eq!(a.data(), b.data(), "round-trip must be bit-exact");
    }
    println!("\nreloaded {} tensors bit-identically:", loaded.num_params());
    for (name, v) in loaded.param_names().iter().zip(loaded.param_values()) {
        println!("  {:<22} {:?}", name, v.shape());
    }

    // Container damage is detected before any tensor is built.
    let mut bad = bytes.clone();
    bad[3] ^= 0x40;
    let bad_path = std::env::temp_dir().join("spiking-ae-demo-bad.ckpt");
    std::fs::write(&bad_path, &bad)?;
    match checkpoint::load(&bad_path) {
        Err(e) => println!("\ntampered magic rejected: {e}"),
        Ok(_) => panic!("tampered checkpoint must not load"),
    }
    Ok(())
}
