//! Single leaky integrate-and-fire neuron driven by a constant input.
//!
//! Prints the membrane potential u, the post-reset potential u', the
//! leaky cumulative potential U and the spike train for a few drive
//! levels. With tau = 0.99 and threshold 1.0, a constant drive of 0.5
//! crosses threshold at t = 3: u goes 0.5, 0.995, 1.485...
//!
//! ```bash
//! cargo run --example lif_neuron
//! ```

use std::rc::Rc;

use spiking_ae::lif::{lif_step, LifParams, LifState, SpikeMode};
use spiking_ae::tape::Tape;
use spiking_ae::{Result, Tensor};

fn raster(spikes: &[f64]) -> String {
    spikes.iter().map(|&s| if s > 0.5 { '|' } else { '.' }).collect()
}

struct Trace {
    u: Vec<f64>,
    u_post: Vec<f64>,
    u_cum: Vec<f64>,
    phi: Vec<f64>,
}

fn simulate(drive: f64, t_steps: usize) -> Result<Trace> {
    let p = LifParams::new(0.99, 1.0)?;
    let mut tape = Tape::new_inference();
    let w_in = tape.leaf(Rc::new(Tensor::scalar(drive)), false);
    let mut state = LifState::fresh();
    let mut tr = Trace { u: Vec::new(), u_post: Vec::new(), u_cum: Vec::new(), phi: Vec::new() };
    for _ in 0..t_steps {
        let step = lif_step(&mut tape, state, &w_in, &p, SpikeMode::Binary)?;
        tr.u.push(step.u.val().item());
        tr.u_cum.push(step.u_cum.val().item());
        tr.phi.push(step.phi.val().item());
        state = step.state;
        tr.u_post.push(state.u_post().unwrap().val().item());
    }
    Ok(tr)
}

fn main() -> Result<()> {
    let t_steps = 24;

    for &drive in &[0.1, 0.3, 0.5, 0.9, 1.2] {
        let tr = simulate(drive, t_steps)?;
        let first = tr.phi.iter().position(|&s| s > 0.5);
        println!("drive {drive:>4}: {}  spikes {:>2}  first {}",
            raster(&tr.phi),
            tr.phi.iter().filter(|&&s| s > 0.5).count(),
            first.map_or("-".into(), |t| format!("t={}", t + 1)),
        );
        if (drive - 0.5).abs() < 1e-12 {
            println!("           u: {}", tr.u[..6].iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>().join(" "));
            println!("           U: {}", tr.u_cum[..6].iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>().join(" "));
            assert_eq!(first, Some(2), "0.5 drive should first cross threshold at t=3");
        }
    }

    // Inhibition: the post-reset potential clamps at -omega instead of
    // integrating further down.
    let tr = simulate(-2.0, t_steps)?;
    println!("drive -2.0: {}  (u' floor {})", raster(&tr.phi), tr.u_post.last().unwrap());
    assert!(tr.u_post.iter().all(|&v| v >= -1.0));
    Ok(())
}
