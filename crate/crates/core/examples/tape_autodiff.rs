//! Reverse-mode autodiff on the tape, checked against central
//! differences.
//!
//! Builds `loss = sum((relu(x W) - y)^2)` for a 2x3 input, runs one
//! backward pass, then nudges a single weight by +/-h and re-evaluates
//! to confirm the tape's gradient matches the finite-difference slope.
//!
//! ```bash
//! cargo run --example tape_autodiff
//! ```

use std::rc::Rc;

use spiking_ae::tape::{Tape, Var};
use spiking_ae::{Result, Tensor};

fn loss_value(x: &Tensor<f64>, w: &Tensor<f64>, y: &Tensor<f64>) -> Result<f64> {
    let mut tape = Tape::new_inference();
    let xv = tape.leaf(Rc::new(x.clone()), false);
    let wv = tape.leaf(Rc::new(w.clone()), false);
    let yv = tape.leaf(Rc::new(y.clone()), false);
    Ok(build(&mut tape, &xv, &wv, &yv)?.val().item())
}

fn build(
    tape: &mut Tape<f64>,
    x: &Var<f64>,
    w: &Var<f64>,
    y: &Var<f64>,
) -> Result<Var<f64>> {
    let h = tape.affine(x, w, None)?;
    let a = tape.relu(&h);
    let err = tape.sub(&a, y)?;
    Ok(tape.sum_sq(&err))
}

fn main() -> Result<()> {
    let x = Tensor::from_vec(&[2, 3], vec![0.4, -1.2, 0.7, 1.5, 0.3, -0.6])?;
    let w = Tensor::from_vec(&[3, 2], vec![0.9, -0.5, 0.2, 1.1, -0.7, 0.4])?;
    let y = Tensor::from_vec(&[2, 2], vec![0.5, 0.0, 1.0, -0.5])?;

    let mut tape = Tape::new();
    let xv = tape.leaf(Rc::new(x.clone()), false);
    let wv = tape.leaf(Rc::new(w.clone()), true);
    let yv = tape.leaf(Rc::new(y.clone()), false);
    let loss = build(&mut tape, &xv, &wv, &yv)?;
    println!("loss      = {:.12}", loss.val().item());
    println!("tape size = {} nodes", tape.num_nodes());

    let grads = tape.backward(&loss)?;
    let gw = grads.get(&wv).expect("w requires grad");
    println!("\ndL/dW:");
    for r in 0..3 {
        let row: Vec<String> = (0..2).map(|c| format!("{:>12.8}", gw.data()[r * 2 + c])).collect();
        println!("  [{}]", row.join(", "));
    }

    // Spot-check every weight against a central difference.
    let h = 1e-6;
    let mut worst = 0.0f64;
    for i in 0..w.numel() {
        let mut wp = w.clone();
        wp.data_mut()[i] += h;
        let mut wm = w.clone();
        wm.data_mut()[i] -= h;
        let numeric = (loss_value(&x, &wp, &y)? - loss_value(&x, &wm, &y)?) / (2.0 * h);
        let analytic = gw.data()[i];
        let rel = (analytic - numeric).abs() / numeric.abs().max(1.0);
        worst = worst.max(rel);
    }
    println!("\nworst relative error vs central differences: {worst:.3e}");
    assert!(worst < 1e-7, "tape gradient disagrees with finite differences");
    println!("tape gradients agree with finite differences");
    Ok(())
}
