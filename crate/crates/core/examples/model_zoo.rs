//! Builds every model family at several bottleneck widths and prints
//! the trainable-parameter table.
//!
//! The spiking nets have no biases, so they sit a little under the
//! plain autoencoder at equal n_z; the variational models double the
//! latent head (mu and log-variance) and add the widest rows.
//!
//! ```bash
//! cargo run --example model_zoo
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use spiking_ae::coding::CodingParams;
use spiking_ae::lif::LifParams;
use spiking_ae::models::{Family, Model, ModelDims};
use spiking_ae::Result;

fn main() -> Result<()> {
    let families = [Family::Sae, Family::Ae, Family::Vae];
    let widths = [10usize, 20, 50, 100];

    println!("{:>6} {:>12} {:>12} {:>12}", "n_z", "SAE", "AE", "VAE");
    for &n_z in &widths {
        let mut row = format!("{n_z:>6}");
        for &family in &families {
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let model: Model<f32> = Model::build(
                family,
                ModelDims::mnist(n_z),
                LifParams::default(),
                CodingParams::default(),
                &mut rng,
            )?;
            row.push_str(&format!(" {:>12}", model.param_count()));
        }
        println!("{row}");
    }

    // Layer-by-layer breakdown for one representative model.
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let model: Model<f32> = Model::build(
        Family::Sae,
        ModelDims::mnist(100),
        LifParams::default(),
        CodingParams::default(),
        &mut rng,
    )?;
    println!("\nSAE n_z=100, by tensor:");
    for (name, value) in model.param_names().iter().zip(model.param_values()) {
        println!("  {:<22} {:>10}  {:?}", name, value.numel(), value.shape());
    }
    println!("  {:<22} {:>10}", "total", model.param_count());
    Ok(())
}
