//! Population activity statistics over per-example spike counts.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const HIST_BINS: usize = 50;

/// Summary of a spiking layer's behaviour over an evaluation set.
///
/// A neuron is *active* if it spiked at least once on at least one
/// example. With `A` active neurons out of `N`:
///
/// - `anr` = A / N (active neuron ratio)
/// - `afr` = mean over active neurons of spikes / (T * examples)
/// - `rae` = mean over examples of (neurons active on that example) / A
/// - `inp` = 1 - anr (inactive proportion)
///
/// With no active neurons `afr` and `rae` are reported as 0 and
/// `degenerate` is set. `histogram` counts all neurons by normalized
/// firing rate in 50 equal bins over [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct ActivityStats {
    pub total_neurons: usize,
    pub active_neurons: usize,
    pub anr: f64,
    pub afr: f64,
    pub rae: f64,
    pub inp: f64,
    pub spikes_per_example: f64,
    pub degenerate: bool,
    pub histogram: [u32; HIST_BINS],
}

/// `counts` is `[examples, neurons]` with total spikes emitted by each
/// neuron on each example; `t_steps` is the simulation length those
/// counts were accumulated over.
pub fn activity_stats(counts: &Tensor<f64>, t_steps: usize) -> Result<ActivityStats> {
    let shape = counts.shape();
    if shape.len() != 2 || shape[0] == 0 || shape[1] == 0 {
        return Err(Error::Contract(format!(
            "activity_stats needs a non-empty [examples, neurons] matrix, got {shape:?}"
        )));
    }
    if t_steps == 0 {
        return Err(Error::Contract("t_steps must be >= 1".into()));
    }
    let (n_ex, n_neu) = (shape[0], shape[1]);
    let data = counts.data();

    let mut neuron_total = vec![0.0_f64; n_neu];
    let mut per_example_active = vec![0usize; n_ex];
    for e in 0..n_ex {
        for j in 0..n_neu {
            let c = data[e * n_neu + j];
            if c < 0.0 {
                return Err(Error::Contract(format!(
                    "negative spike count {c} for example {e}, neuron {j}"
                )));
            }
            neuron_total[j] += c;
            if c > 0.0 {
                per_example_active[e] += 1;
            }
        }
    }

    let active_neurons = neuron_total.iter().filter(|&&t| t > 0.0).count();
    let anr = active_neurons as f64 / n_neu as f64;
    let inp = 1.0 - anr;
    let denom = (t_steps * n_ex) as f64;
    let degenerate = active_neurons == 0;

    let afr = if degenerate {
        0.0
    } else {
        neuron_total.iter().filter(|&&t| t > 0.0).sum::<f64>()
            / (active_neurons as f64 * denom)
    };
    let rae = if degenerate {
        0.0
    } else {
        per_example_active.iter().map(|&a| a as f64).sum::<f64>()
            / (n_ex as f64 * active_neurons as f64)
    };
    let spikes_per_example = neuron_total.iter().sum::<f64>() / n_ex as f64;

    let mut histogram = [0u32; HIST_BINS];
    for &total in &neuron_total {
        let rate = (total / denom).clamp(0.0, 1.0);
        let bin = ((rate * HIST_BINS as f64) as usize).min(HIST_BINS - 1);
        histogram[bin] += 1;
    }

    Ok(ActivityStats {
        total_neurons: n_neu,
        active_neurons,
        anr,
        afr,
        rae,
        inp,
        spikes_per_example,
        degenerate,
        histogram,
    })
}
