//! End-to-end desk-scale training run: a narrow spiking autoencoder on
//! a 512-image MNIST slice, then evaluation from the saved checkpoint.
//!
//! Needs the four IDX files under `SAE_DATA_DIR` (or ./data); see the
//! README for how to fetch them. Takes well under a minute.
//!
//! ```bash
//! cargo run --release --example train_small_mnist
//! ```

use spiking_ae::checkpoint;
use spiking_ae::config::ExperimentConfig;
use spiking_ae::experiment::{cmd_eval, cmd_train};
use spiking_ae::Result;

fn main() -> Result<()> {
    let mut cfg = ExperimentConfig::default();
    cfg.n_z = 16;
    cfg.t_steps = 10;
    cfg.epochs = 2;
    cfg.repetitions = 1;
    cfg.train_limit = Some(512);
    cfg.val_limit = Some(256);

    let out = std::env::temp_dir().join("spiking-ae-demo");
    println!("training into {}", out.display());
    let runs = cmd_train(&cfg, &out, 1)?;
    let run = &runs[0];
    println!(
        "\nbest val mse {:.4} at epoch {} (seed {})",
        run.best_val_mse, run.best_epoch, run.seed
    );

    println!("\nmetrics.csv:");
    print!("{}", std::fs::read_to_string(run.run_dir.join("metrics.csv"))?);

    // Reload the best checkpoint and score it. Evaluation re-encodes
    // the images with its own spike stream, so this lands near
    // best_val_mse without matching it exactly — but the command itself
    // is deterministic: a second identical call must agree to the bit.
    let (model, ckpt_cfg) = checkpoint::load(&run.run_dir.join("best.ckpt"))?;
    let eval = cmd_eval(&model, &ckpt_cfg, &out.join("eval"), 1)?;
    let again = cmd_eval(&model, &ckpt_cfg, &out.join("eval"), 1)?;
    assert_eq!(eval.mse.to_bits(), again.mse.to_bits());
    println!("reloaded best.ckpt -> val mse {:.4} over {} examples (repeatable)", eval.mse, eval.examples);
    println!("reconstruction dumps in {}", out.join("eval").join("recon").display());
    Ok(())
}
