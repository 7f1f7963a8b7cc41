//! Finite-difference validation of backpropagation through the full
//! spiking autoencoder.
//!
//! The binary threshold is not differentiable, so the check runs the
//! network's identity twin: thresholds and resets replaced by identity,
//! exactly the graph the straight-through backward pass differentiates.
//! On a micro model (8x8 input, 2/4 channels, n_z = 8, T = 5) every
//! analytic gradient is compared against 64-bit central differences.
//!
//! ```bash
//! cargo run --example gradient_check
//! ```

use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use spiking_ae::coding::CodingParams;
use spiking_ae::gradcheck::{grad_check, DEFAULT_H};
use spiking_ae::lif::{LifParams, SpikeMode};
use spiking_ae::losses::reconstruction_loss;
use spiking_ae::models::{Family, ForwardOpts, Model, ModelDims};
use spiking_ae::{Result, Tensor};

fn main() -> Result<()> {
    let dims = ModelDims::micro();
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let model: Model<f64> = Model::build(
        Family::Sae,
        dims,
        LifParams::default(),
        CodingParams::new(0.0, 0.6, 5, 0)?,
        &mut rng,
    )?;
    println!(
        "micro SAE: {} tensors, {} parameters, T = {}",
        model.num_params(),
        model.param_count(),
        model.coding.t_steps
    );

    // A fixed batch of two random images. The input spike trains are
    // drawn from a generator re-seeded on every evaluation, so the
    // perturbed forward passes see the same encoding and the finite
    // differences measure only the parameters.
    let hw = dims.input_hw;
    let x: Vec<f64> = (0..2 * hw * hw).map(|_| rng.random::<f64>()).collect();
    let x = Tensor::from_vec(&[2, 1, hw, hw], x)?;

    let params: Vec<Tensor<f64>> = model.param_values().into_iter().cloned().collect();
    let start = Instant::now();
    let report = grad_check(
        &params,
        |tape, leaves| {
            let mut enc = ChaCha8Rng::seed_from_u64(9);
            let fwd = model.forward(
                tape,
                leaves,
                &x,
                &mut enc,
                ForwardOpts {
                    mode: SpikeMode::IdentityTwin,
                    sample_latent: false,
                    want_a1_all: false,
                    want_a1_l3: false,
                },
            )?;
            reconstruction_loss(tape, &fwd.x_hat, &x)
        },
        DEFAULT_H,
    )?;
    println!(
        "checked {} parameters in {:.1?}",
        params.iter().map(|p| p.numel()).sum::<usize>(),
        start.elapsed()
    );
    println!(
        "max relative error {:.3e} at tensor {} element {} (analytic {:.6e}, numeric {:.6e})",
        report.max_rel_err, report.worst_param, report.worst_elem, report.analytic, report.numeric
    );
    assert!(report.max_rel_err < 1e-4);
    println!("analytic gradients match central differences");
    Ok(())
}
