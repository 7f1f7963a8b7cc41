//! Poisson rate coding: pixels to spike trains and back.
//!
//! Each pixel of intensity x in [0, 1] fires per step with probability
//! s * x, so the empirical firing rate divided by s recovers the pixel.
//! The example encodes one image, reports the mean spike rate against
//! the predicted s * mean(x), and shows how the rate-decoded image
//! sharpens as the window T grows.
//!
//! Uses the first training digit when an MNIST directory is found
//! (`SAE_DATA_DIR` or ./data), otherwise a synthetic blob.
//!
//! ```bash
//! cargo run --example poisson_coding
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use spiking_ae::coding::{poisson_encode, CodingParams};
use spiking_ae::config::ExperimentConfig;
use spiking_ae::data::{mnist_paths, Dataset};
use spiking_ae::experiment::resolve_data_dir;
use spiking_ae::{Result, Tensor};

const SHADES: &[u8] = b" .:-=+*#%@";

fn ascii(img: &[f64], side: usize) -> String {
    let mut out = String::new();
    for r in 0..side {
        for c in 0..side {
            let v = img[r * side + c].clamp(0.0, 1.0);
            let i = ((v * (SHADES.len() - 1) as f64).round()) as usize;
            out.push(SHADES[i] as char);
        }
        out.push('\n');
    }
    out
}

fn load_image() -> Result<(Tensor<f64>, String)> {
    let dir = resolve_data_dir(&ExperimentConfig::default());
    let [imgs, labels, _, _] = mnist_paths(&dir);
    if imgs.exists() && labels.exists() {
        let train = Dataset::load_idx(&imgs, &labels)?;
        let x = train.gather::<f64>(&[0])?;
        return Ok((x, format!("digit {} from {}", train.labels()[0], dir.display())));
    }
    // No dataset around: a soft radial blob works just as well.
    let side = 28;
    let mut data = vec![0.0; side * side];
    for r in 0..side {
        for c in 0..side {
            let (dr, dc) = (r as f64 - 13.5, c as f64 - 13.5);
            let d2 = (dr * dr + dc * dc) / 40.0;
            data[r * side + c] = (-d2).exp();
        }
    }
    Ok((Tensor::from_vec(&[1, 1, side, side], data)?, "synthetic blob (no MNIST found)".into()))
}

fn main() -> Result<()> {
    let (x, source) = load_image()?;
    let side = x.shape()[2];
    let n = x.numel() as f64;
    let s = 0.2;
    let t_steps = 100;
    println!("encoding {source}, s = {s}, T = {t_steps}\n");

    let p = CodingParams::new(0.0, s, t_steps, 0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let spikes = poisson_encode(&x, &p, &mut rng);

    let total: f64 = spikes.iter().map(|t| t.data().iter().sum::<f64>()).sum();
    let rate = total / (n * t_steps as f64);
    let predicted = s * x.data().iter().sum::<f64>() / n;
    println!("mean spike rate {rate:.5}  vs  s * mean(x) = {predicted:.5}");

    // Rate decode: x_hat = (spikes per step) / s, at increasing T.
    let mut counts = vec![0.0f64; x.numel()];
    let mut mae_at = Vec::new();
    for (t, frame) in spikes.iter().enumerate() {
        for (c, &v) in counts.iter_mut().zip(frame.data()) {
            *c += v;
        }
        let t_used = (t + 1) as f64;
        let mae: f64 = counts
            .iter()
            .zip(x.data())
            .map(|(&c, &xv)| (c / (t_used * s) - xv).abs())
            .sum::<f64>()
            / n;
        if [1, 10, 100].contains(&(t + 1)) {
            mae_at.push(((t + 1), mae));
        }
    }
    for (t, mae) in &mae_at {
        println!("T = {t:>3}: decode MAE {mae:.4}");
    }

    let decoded: Vec<f64> = counts.iter().map(|&c| c / (t_steps as f64 * s)).collect();
    println!("\noriginal:");
    print!("{}", ascii(x.data(), side));
    println!("rate-decoded at T = {t_steps}:");
    print!("{}", ascii(&decoded, side));
    Ok(())
}
