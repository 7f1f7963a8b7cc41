//! The latent-geometry toolkit on a synthetic code with known
//! structure: three Gaussian clusters in 24 dimensions, 12 points each.
//!
//! Walks the whole battery — min-max scaling, all five pairwise
//! distances, intra/inter class-distance ratios, average-linkage
//! clustering, and example/neuron correlation maps — and checks the
//! outputs against what planted clusters must produce: ratios well
//! below 1, leaves grouped by class, and a shuffled-label control
//! ratio near 1.
//!
//! ```bash
//! cargo run --example latent_battery
//! ```

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use spiking_ae::analysis::{
    correlation_maps, hierarchical_order, intra_inter_ratio, pairwise_distance, DistanceMetric,
    LatentMatrix, ScaleRange,
};
use spiking_ae::{Result, Tensor};

const CLASSES: usize = 3;
const PER_CLASS: usize = 12;
const DIMS: usize = 24;

fn planted_clusters(rng: &mut ChaCha8Rng) -> Result<(Tensor<f64>, Vec<u8>)> {
    let noise = Normal::new(0.0, 0.35).unwrap();
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    // Each class gets its own random unit-ish center; members jitter
    // around it.
    let centers: Vec<Vec<f64>> = (0..CLASSES)
        .map(|_| (0..DIMS).map(|_| rng.random::<f64>() * 4.0).collect())
        .collect();
    for (c, center) in centers.iter().enumerate() {
        for _ in 0..PER_CLASS {
            rows.extend(center.iter().map(|&m| m + noise.sample(rng)));
            labels.push(c as u8);
        }
    }
    Ok((Tensor::from_vec(&[CLASSES * PER_CLASS, DIMS], rows)?, labels))
}

fn main() -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (raw, labels) = planted_clusters(&mut rng)?;
    let latents = LatentMatrix::new(&raw, labels.clone(), ScaleRange::ZeroOne)?;
    println!(
        "{} points, {} dims, scaled to [0, 1] (degenerate: {})\n",
        raw.shape()[0],
        raw.shape()[1],
        latents.degenerate
    );

    let mut shuffled = labels.clone();
    shuffled.shuffle(&mut rng);

    println!("{:<24} {:>12} {:>16}", "metric", "intra/inter", "shuffled labels");
    for metric in DistanceMetric::ALL {
        let dist = pairwise_distance(&latents.values, metric)?;
        let ratio = intra_inter_ratio(&dist, &labels)?;
        let control = intra_inter_ratio(&dist, &shuffled)?;
        println!("{:<24} {:>12.4} {:>16.4}", metric.name(), ratio, control);
        assert!(ratio < 0.6, "planted clusters should be tight");
        assert!((control - 1.0).abs() < 0.15, "random labels should give ~1");
    }

    // Average-linkage clustering on euclidean distances: reading the
    // dendrogram's leaves left to right must keep each class contiguous.
    let dist = pairwise_distance(&latents.values, DistanceMetric::Euclidean)?;
    let tree = hierarchical_order(&dist)?;
    let leaf_classes: Vec<u8> = tree.leaf_order.iter().map(|&i| labels[i]).collect();
    println!("\nleaf order by class: {leaf_classes:?}");
    let blocks = leaf_classes.windows(2).filter(|w| w[0] != w[1]).count() + 1;
    assert_eq!(blocks, CLASSES, "each planted class should form one block");
    let last = tree.merges.last().unwrap();
    println!(
        "final merge joins {} points at distance {:.4}",
        last.size, last.distance
    );

    let maps = correlation_maps(&latents.values)?;
    let ec = &maps.example_corr;
    let n = ec.shape()[0];
    // Same-class pairs should correlate more strongly than cross-class.
    let (mut same, mut cross, mut ns, mut nc) = (0.0, 0.0, 0usize, 0usize);
    for i in 0..n {
        for j in 0..i {
            let r = ec.data()[i * n + j];
            if labels[i] == labels[j] {
                same += r;
                ns += 1;
            } else {
                cross += r;
                nc += 1;
            }
        }
    }
    println!(
        "\nexample correlations: same-class mean {:.3}, cross-class mean {:.3} ({} active neurons)",
        same / ns as f64,
        cross / nc as f64,
        maps.active_neurons.len()
    );
    assert!(same / ns as f64 > cross / nc as f64);
    Ok(())
}
