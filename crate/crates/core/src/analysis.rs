//! Latent-representation battery: min-max scaling, pairwise distance
//! matrices, intra/inter-class ratios, average-linkage ordering, and
//! example/neuron correlation maps.

use crate::error::{Error, Result};
use crate::models::Family;
use crate::tensor::Tensor;

/// Target range for min-max scaling a latent matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScaleRange {
    /// [0, 1]
    ZeroOne,
    /// [-1, 1]
    SymmetricOne,
}

pub fn latent_range(family: Family) -> ScaleRange {
    match family {
        Family::Sae | Family::Ae => ScaleRange::ZeroOne,
        Family::Vae => ScaleRange::SymmetricOne,
    }
}

/// Global (whole-matrix) min-max scaling into the given range. A
/// constant matrix has no spread to scale; every value maps to 0 and
/// the degeneracy flag is returned.
pub fn scale_latents(raw: &Tensor<f64>, range: ScaleRange) -> (Tensor<f64>, bool) {
    let data = raw.data();
    let lo = data.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return (Tensor::zeros(raw.shape()), true);
    }
    let span = hi - lo;
    let scaled: Vec<f64> = data
        .iter()
        .map(|&v| {
            let t = (v - lo) / span;
            match range {
                ScaleRange::ZeroOne => t,
                ScaleRange::SymmetricOne => 2.0 * t - 1.0,
            }
        })
        .collect();
    (Tensor::from_vec(raw.shape(), scaled).unwrap(), false)
}

/// A scaled examples-by-units matrix with aligned class labels.
#[derive(Debug, Clone)]
pub struct LatentMatrix {
    pub values: Tensor<f64>,
    pub labels: Vec<u8>,
    pub degenerate: bool,
}

impl LatentMatrix {
    pub fn new(raw: &Tensor<f64>, labels: Vec<u8>, range: ScaleRange) -> Result<LatentMatrix> {
        let shape = raw.shape();
        if shape.len() != 2 || shape[0] != labels.len() {
            return Err(Error::Contract(format!(
                "latent matrix {shape:?} does not align with {} labels",
                labels.len()
            )));
        }
        let (values, degenerate) = scale_latents(raw, range);
        Ok(LatentMatrix {
            values,
            labels,
            degenerate,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DistanceMetric {
    Euclidean,
    StandardizedEuclidean,
    SquaredEuclidean,
    Manhattan,
    Correlation,
}

impl DistanceMetric {
    pub const ALL: [DistanceMetric; 5] = [
        DistanceMetric::Euclidean,
        DistanceMetric::StandardizedEuclidean,
        DistanceMetric::SquaredEuclidean,
        DistanceMetric::Manhattan,
        DistanceMetric::Correlation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DistanceMetric::Euclidean => "euclidean",
            DistanceMetric::StandardizedEuclidean => "standardized_euclidean",
            DistanceMetric::SquaredEuclidean => "squared_euclidean",
            DistanceMetric::Manhattan => "manhattan",
            DistanceMetric::Correlation => "correlation",
        }
    }
}

/// Symmetric distance matrix with zero diagonal. `flagged_pairs` counts
/// correlation pairs that involved a constant row and fell back to the
/// zero-correlation convention (distance 1).
#[derive(Debug, Clone)]
pub struct DistanceMatrix {
    pub d: Tensor<f64>,
    pub metric: DistanceMetric,
    pub flagged_pairs: usize,
}

/// Pearson correlation, or None when either vector is constant.
fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        dot += dx * dy;
        na += dx * dx;
        nb += dy * dy;
    }
    if na == 0.0 || nb == 0.0 {
        None
    } else {
        Some(dot / (na.sqrt() * nb.sqrt()))
    }
}

pub fn pairwise_distance(m: &Tensor<f64>, metric: DistanceMetric) -> Result<DistanceMatrix> {
    let shape = m.shape();
    if shape.len() != 2 || shape[0] < 2 {
        return Err(Error::Contract(format!(
            "pairwise distances need at least 2 rows, got shape {shape:?}"
        )));
    }
    let (n, k) = (shape[0], shape[1]);
    let data = m.data();
    let row = |i: usize| &data[i * k..(i + 1) * k];

    // Standardized euclidean weights: inverse sample variance per
    // dimension (n-1 denominator), zero-variance dimensions dropped.
    let inv_var: Vec<f64> = if metric == DistanceMetric::StandardizedEuclidean {
        (0..k)
            .map(|j| {
                let mean = (0..n).map(|i| data[i * k + j]).sum::<f64>() / n as f64;
                let var = (0..n)
                    .map(|i| (data[i * k + j] - mean).powi(2))
                    .sum::<f64>()
                    / (n as f64 - 1.0);
                if var > 0.0 {
                    1.0 / var
                } else {
                    0.0
                }
            })
            .collect()
    } else {
        Vec::new()
    };

    let mut out = vec![0.0_f64; n * n];
    let mut flagged_pairs = 0usize;
    for i in 0..n {
        for j in (i + 1)..n {
            let (a, b) = (row(i), row(j));
            let d = match metric {
                DistanceMetric::Euclidean => a
                    .iter()
                    .zip(b)
                    .map(|(&x, &y)| (x - y) * (x - y))
                    .sum::<f64>()
                    .sqrt(),
                DistanceMetric::SquaredEuclidean => a
                    .iter()
                    .zip(b)
                    .map(|(&x, &y)| (x - y) * (x - y))
                    .sum::<f64>(),
                DistanceMetric::StandardizedEuclidean => a
                    .iter()
                    .zip(b)
                    .zip(&inv_var)
                    .map(|((&x, &y), &w)| (x - y) * (x - y) * w)
                    .sum::<f64>()
                    .sqrt(),
                DistanceMetric::Manhattan => {
                    a.iter().zip(b).map(|(&x, &y)| (x - y).abs()).sum::<f64>()
                }
                DistanceMetric::Correlation => match pearson(a, b) {
                    Some(r) => (1.0 - r).max(0.0),
                    None => {
                        flagged_pairs += 1;
                        1.0
                    }
                },
            };
            out[i * n + j] = d;
            out[j * n + i] = d;
        }
    }

    Ok(DistanceMatrix {
        d: Tensor::from_vec(&[n, n], out)?,
        metric,
        flagged_pairs,
    })
}

/// Mean within-class pairwise distance over mean between-class pairwise
/// distance (diagonal excluded).
pub fn intra_inter_ratio(dist: &DistanceMatrix, labels: &[u8]) -> Result<f64> {
    let n = dist.d.shape()[0];
    if labels.len() != n {
        return Err(Error::Contract(format!(
            "{} labels for a {n}x{n} distance matrix",
            labels.len()
        )));
    }
    let mut class_sizes = std::collections::BTreeMap::new();
    for &l in labels {
        *class_sizes.entry(l).or_insert(0usize) += 1;
    }
    if class_sizes.len() < 2 || class_sizes.values().any(|&c| c < 2) {
        return Err(Error::Contract(
            "intra/inter ratio needs at least 2 classes with 2 members each".into(),
        ));
    }
    let d = dist.d.data();
    let (mut intra, mut intra_n, mut inter, mut inter_n) = (0.0, 0usize, 0.0, 0usize);
    for i in 0..n {
        for j in (i + 1)..n {
            if labels[i] == labels[j] {
                intra += d[i * n + j];
                intra_n += 1;
            } else {
                inter += d[i * n + j];
                inter_n += 1;
            }
        }
    }
    Ok((intra / intra_n as f64) / (inter / inter_n as f64))
}

/// One agglomerative merge: clusters `a` and `b` (lowest id first) at
/// the given average-linkage distance, producing a cluster of `size`
/// leaves. Leaves are ids `0..n`; the k-th merge creates id `n + k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Merge {
    pub a: usize,
    pub b: usize,
    pub distance: f64,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dendrogram {
    pub merges: Vec<Merge>,
    pub leaf_order: Vec<usize>,
}

/// Average-linkage (UPGMA) agglomeration. Ties are broken by lowest
/// cluster-id pair, so the leaf order is a pure function of the
/// distance matrix.
pub fn hierarchical_order(dist: &DistanceMatrix) -> Result<Dendrogram> {
    let n = dist.d.shape()[0];
    if n < 2 {
        return Err(Error::Contract(format!("clustering needs n >= 2, got {n}")));
    }
    let dd = dist.d.data();

    struct Cluster {
        id: usize,
        leaves: Vec<usize>,
    }
    let mut active: Vec<Cluster> = (0..n)
        .map(|i| Cluster {
            id: i,
            leaves: vec![i],
        })
        .collect();
    // pairwise average-linkage distances between active clusters,
    // indexed by position in `active`
    let mut d: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| dd[i * n + j]).collect())
        .collect();

    let mut merges = Vec::with_capacity(n - 1);
    for step in 0..n - 1 {
        let mut best: Option<(f64, usize, usize)> = None;
        for p in 0..active.len() {
            for q in (p + 1)..active.len() {
                let cand = d[p][q];
                let better = match best {
                    None => true,
                    Some((bd, bp, bq)) => {
                        cand < bd
                            || (cand == bd
                                && (active[p].id, active[q].id)
                                    < (active[bp].id, active[bq].id))
                    }
                };
                if better {
                    best = Some((cand, p, q));
                }
            }
        }
        let (dist_ab, p, q) = best.unwrap();
        let (sa, sb) = (active[p].leaves.len(), active[q].leaves.len());
        let merged_id = n + step;
        merges.push(Merge {
            a: active[p].id.min(active[q].id),
            b: active[p].id.max(active[q].id),
            distance: dist_ab,
            size: sa + sb,
        });

        // new cluster's distance to every other active cluster is the
        // size-weighted mean of its parts
        let new_row: Vec<f64> = (0..active.len())
            .filter(|&r| r != p && r != q)
            .map(|r| (sa as f64 * d[p][r] + sb as f64 * d[q][r]) / (sa + sb) as f64)
            .collect();

        // lower id's leaves come first in the merged ordering
        let (first, second) = if active[p].id < active[q].id { (p, q) } else { (q, p) };
        let mut leaves = std::mem::take(&mut active[first].leaves);
        leaves.append(&mut active[second].leaves);

        // remove q then p (q > p), append merged cluster
        active.remove(q);
        active.remove(p);
        for row in &mut d {
            row.remove(q);
            row.remove(p);
        }
        d.remove(q);
        d.remove(p);
        active.push(Cluster {
            id: merged_id,
            leaves,
        });
        for (row, &v) in d.iter_mut().zip(&new_row) {
            row.push(v);
        }
        let mut last: Vec<f64> = new_row;
        last.push(0.0);
        d.push(last);
    }

    Ok(Dendrogram {
        leaf_order: active.pop().unwrap().leaves,
        merges,
    })
}

/// Pearson maps across examples (rows) and across active units
/// (columns). A unit is active when its column is not identically
/// zero; with fewer than two active units the unit map is skipped.
#[derive(Debug, Clone)]
pub struct CorrelationMaps {
    pub example_corr: Tensor<f64>,
    pub neuron_corr: Option<Tensor<f64>>,
    pub active_neurons: Vec<usize>,
    pub neuron_map_skipped: bool,
}

fn corr_matrix(vectors: &[Vec<f64>]) -> Tensor<f64> {
    let n = vectors.len();
    let mut out = vec![0.0_f64; n * n];
    for i in 0..n {
        out[i * n + i] = 1.0;
        for j in (i + 1)..n {
            let r = pearson(&vectors[i], &vectors[j]).unwrap_or(0.0);
            out[i * n + j] = r;
            out[j * n + i] = r;
        }
    }
    Tensor::from_vec(&[n, n], out).unwrap()
}

pub fn correlation_maps(values: &Tensor<f64>) -> Result<CorrelationMaps> {
    let shape = values.shape();
    if shape.len() != 2 || shape[0] < 2 {
        return Err(Error::Contract(format!(
            "correlation maps need at least 2 example rows, got shape {shape:?}"
        )));
    }
    let (n, k) = (shape[0], shape[1]);
    let data = values.data();

    let rows: Vec<Vec<f64>> = (0..n)
        .map(|i| data[i * k..(i + 1) * k].to_vec())
        .collect();
    let example_corr = corr_matrix(&rows);

    let active_neurons: Vec<usize> = (0..k)
        .filter(|&j| (0..n).any(|i| data[i * k + j] != 0.0))
        .collect();
    let (neuron_corr, neuron_map_skipped) = if active_neurons.len() < 2 {
        (None, true)
    } else {
        let cols: Vec<Vec<f64>> = active_neurons
            .iter()
            .map(|&j| (0..n).map(|i| data[i * k + j]).collect())
            .collect();
        (Some(corr_matrix(&cols)), false)
    };

    Ok(CorrelationMaps {
        example_corr,
        neuron_corr,
        active_neurons,
        neuron_map_skipped,
    })
}
