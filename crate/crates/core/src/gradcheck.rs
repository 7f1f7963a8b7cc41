//! Central finite-difference validation of tape gradients.
//!
//! The checked function is handed a tape plus one leaf [`Var`] per
//! parameter tensor and must return a scalar loss. It is re-evaluated
//! 2·numel times at 64-bit with elementwise `±h` bumps; the report
//! carries the worst relative error `|analytic - numeric| / max(1,
//! |analytic|)` and where it occurred.

use std::rc::Rc;

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const DEFAULT_H: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// index of the offending parameter tensor (0 when vacuous)
    pub worst_param: usize,
    /// flat element index within that tensor
    pub worst_elem: usize,
    pub analytic: f64,
    pub numeric: f64,
}

fn eval_scalar<F>(params: &[Tensor<f64>], f: &F) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &[Var<f64>]) -> Result<Var<f64>>,
{
    let mut tape = Tape::new_inference();
    let vars: Vec<Var<f64>> = params
        .iter()
        .map(|p| tape.leaf(Rc::new(p.clone()), true))
        .collect();
    let loss = f(&mut tape, &vars)?;
    if loss.val().numel() != 1 {
        return Err(Error::Contract(format!(
            "grad_check: loss must be scalar, got {:?}",
            loss.shape()
        )));
    }
    let v = loss.val().item();
    if !v.is_finite() {
        return Err(Error::Numeric("grad_check: non-finite loss".into()));
    }
    Ok(v)
}

/// Compares tape gradients of `f` against central differences with
/// step `h` at the given parameter values. An empty parameter list is
/// vacuously exact (error 0).
pub fn grad_check<F>(params: &[Tensor<f64>], f: F, h: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var<f64>]) -> Result<Var<f64>>,
{
    // Analytic pass.
    let mut tape = Tape::new();
    let vars: Vec<Var<f64>> = params
        .iter()
        .map(|p| tape.leaf(Rc::new(p.clone()), true))
        .collect();
    let loss = f(&mut tape, &vars)?;
    if loss.val().numel() != 1 {
        return Err(Error::Contract(format!(
            "grad_check: loss must be scalar, got {:?}",
            loss.shape()
        )));
    }
    if !loss.val().item().is_finite() {
        return Err(Error::Numeric("grad_check: non-finite loss".into()));
    }
    let mut grads = tape.backward(&loss)?;
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .zip(params)
        .map(|(v, p)| grads.take(v).unwrap_or_else(|| Tensor::zeros(p.shape())))
        .collect();
    drop(tape);

    // Numeric passes on a mutable working copy.
    let mut work: Vec<Tensor<f64>> = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_param: 0,
        worst_elem: 0,
        analytic: 0.0,
        numeric: 0.0,
    };
    for pi in 0..work.len() {
        for e in 0..work[pi].numel() {
            let orig = work[pi].data()[e];
            work[pi].data_mut()[e] = orig + h;
            let l_plus = eval_scalar(&work, &f)?;
            work[pi].data_mut()[e] = orig - h;
            let l_minus = eval_scalar(&work, &f)?;
            work[pi].data_mut()[e] = orig;
            let fd = (l_plus - l_minus) / (2.0 * h);
            let a = analytic[pi].data()[e];
            let rel = (a - fd).abs() / 1.0_f64.max(a.abs());
            if rel > report.max_rel_err {
                report = GradCheckReport {
                    max_rel_err: rel,
                    worst_param: pi,
                    worst_elem: e,
                    analytic: a,
                    numeric: fd,
                };
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn randn(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n)
            .map(|_| (rng.random::<f64>() * 2.0 - 1.0) * scale)
            .collect();
        Tensor::from_vec(shape, data).unwrap()
    }

    #[test]
    fn quadratic_is_nearly_exact() {
        let w = Tensor::from_vec(&[3], vec![0.7, -1.3, 2.0]).unwrap();
        let rep = grad_check(
            &[w],
            |tape, vars| Ok(tape.sum_sq(&vars[0])),
            DEFAULT_H,
        )
        .unwrap();
        assert!(rep.max_rel_err < 1e-7, "err = {}", rep.max_rel_err);
    }

    #[test]
    fn zero_parameter_function_is_vacuously_exact() {
        let rep = grad_check(
            &[],
            |tape, _| {
                let c = Var::constant(Tensor::scalar(3.0));
                Ok(tape.sum(&c))
            },
            DEFAULT_H,
        )
        .unwrap();
        assert_eq!(rep.max_rel_err, 0.0);
    }

    #[test]
    fn affine_relu_chain_matches() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let w1 = randn(&mut rng, &[4, 6], 0.8);
        let b1 = randn(&mut rng, &[6], 0.5);
        let w2 = randn(&mut rng, &[6, 2], 0.8);
        let x = randn(&mut rng, &[3, 4], 1.0);
        let rep = grad_check(
            &[w1, b1, w2],
            move |tape, vars| {
                let xin = Var::constant(x.clone());
                let h = tape.affine(&xin, &vars[0], Some(&vars[1]))?;
                let h = tape.relu(&h);
                let y = tape.affine(&h, &vars[2], None)?;
                Ok(tape.sum_sq(&y))
            },
            DEFAULT_H,
        )
        .unwrap();
        assert!(rep.max_rel_err < 1e-4, "report: {rep:?}");
    }

    #[test]
    fn conv_deconv_chain_matches() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let k1 = randn(&mut rng, &[3, 2, 3, 3], 0.5);
        let k2 = randn(&mut rng, &[3, 2, 3, 3], 0.5); // deconv layout [c_in=3, c_out=2]
        let x = randn(&mut rng, &[2, 2, 6, 6], 1.0);
        let rep = grad_check(
            &[k1, k2],
            move |tape, vars| {
                let xin = Var::constant(x.clone());
                let h = tape.conv2d(&xin, &vars[0])?; // [2,3,4,4]
                let h = tape.relu(&h);
                let y = tape.deconv2d(&h, &vars[1])?; // [2,2,6,6]
                Ok(tape.sum_sq(&y))
            },
            DEFAULT_H,
        )
        .unwrap();
        assert!(rep.max_rel_err < 1e-4, "report: {rep:?}");
    }

    #[test]
    fn exp_mul_and_slice_match() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let a = randn(&mut rng, &[2, 4], 0.7);
        let b = randn(&mut rng, &[2, 2], 0.9);
        let rep = grad_check(
            &[a, b],
            |tape, vars| {
                let left = tape.slice_cols(&vars[0], 0, 2)?;
                let right = tape.slice_cols(&vars[0], 2, 2)?;
                let e = tape.exp(&right);
                let m = tape.mul(&e, &vars[1])?;
                let s = tape.add(&left, &m)?;
                Ok(tape.sum_sq(&s))
            },
            DEFAULT_H,
        )
        .unwrap();
        assert!(rep.max_rel_err < 1e-4, "report: {rep:?}");
    }

    #[test]
    fn leaky_chain_and_sum_abs_match() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let w = randn(&mut rng, &[2, 3], 0.8);
        let x = randn(&mut rng, &[1, 2], 1.0);
        let rep = grad_check(
            &[w],
            move |tape, vars| {
                let xin = Var::constant(x.clone());
                let tau = 0.99;
                let c1 = tape.affine(&xin, &vars[0], None)?;
                let u1 = c1.clone();
                let u2 = tape.leaky_step(&u1, &c1, tau)?;
                let u3 = tape.leaky_step(&u2, &c1, tau)?;
                Ok(tape.sum_abs(&u3))
            },
            DEFAULT_H,
        )
        .unwrap();
        assert!(rep.max_rel_err < 1e-4, "report: {rep:?}");
    }

    #[test]
    fn decode_max_matches_away_from_ties() {
        let u1 = Tensor::from_vec(&[1, 3], vec![0.5, -0.4, 2.0]).unwrap();
        let u2 = Tensor::from_vec(&[1, 3], vec![1.9, -0.2, 0.3]).unwrap();
        let rep = grad_check(
            &[u1, u2],
            |tape, vars| {
                let xh = tape.decode_max(&[vars[0].clone(), vars[1].clone()], 0.2)?;
                Ok(tape.sum_sq(&xh))
            },
            DEFAULT_H,
        )
        .unwrap();
        assert!(rep.max_rel_err < 1e-4, "report: {rep:?}");
    }
}
