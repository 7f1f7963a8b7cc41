//! Fan-in-scaled normal initialization and the Adam optimizer.

use std::rc::Rc;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Standard deviation `sqrt(2 / n_l)` for a layer with fan-in `n_l`.
pub fn he_std(n_l: usize) -> f64 {
    (2.0 / n_l as f64).sqrt()
}

/// Zero-mean normal init with the given standard deviation. Draws are
/// taken at f64 in row-major element order, so f32 and f64 models built
/// from the same seed hold the same values (up to rounding).
pub fn init_normal<S: Scalar, R: Rng>(shape: &[usize], std: f64, rng: &mut R) -> Tensor<S> {
    let dist = Normal::new(0.0, std).expect("std must be finite and nonnegative");
    let n: usize = shape.iter().product();
    let data: Vec<S> = (0..n).map(|_| S::from_f64(dist.sample(rng))).collect();
    Tensor::from_vec(shape, data).unwrap()
}

/// Adam with bias correction. Moment tensors are allocated per
/// parameter up front; `step` applies one update given the gradient
/// list aligned with the parameter list (a `None` gradient is treated
/// as zero).
pub struct Adam<S> {
    pub lr: S,
    pub beta1: S,
    pub beta2: S,
    pub eps: S,
    t: u64,
    m: Vec<Tensor<S>>,
    v: Vec<Tensor<S>>,
}

impl<S: Scalar> Adam<S> {
    pub fn new(lr: S, param_shapes: &[&[usize]]) -> Self {
        Adam {
            lr,
            beta1: S::from_f64(0.9),
            beta2: S::from_f64(0.999),
            eps: S::from_f64(1e-8),
            t: 0,
            m: param_shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            v: param_shapes.iter().map(|s| Tensor::zeros(s)).collect(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// One update over all parameters. `names` is used only for error
    /// reporting on non-finite gradients. Parameters are updated
    /// in place via `Rc::make_mut`; callers must have dropped any tape
    /// that still references them, or the update copies the tensor.
    pub fn step(
        &mut self,
        params: &mut [Rc<Tensor<S>>],
        grads: &[Option<Tensor<S>>],
        names: &[String],
    ) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(Error::Contract(format!(
                "adam: {} params vs {} states vs {} grads",
                params.len(),
                self.m.len(),
                grads.len()
            )));
        }
        self.t += 1;
        let bc1 = S::one() - self.beta1.powi(self.t as i32);
        let bc2 = S::one() - self.beta2.powi(self.t as i32);
        let one_m_b1 = S::one() - self.beta1;
        let one_m_b2 = S::one() - self.beta2;
        for (pi, param) in params.iter_mut().enumerate() {
            if let Some(g) = &grads[pi] {
                if g.shape() != param.shape() {
                    return Err(Error::Contract(format!(
                        "adam: gradient shape {:?} vs parameter {:?} ({})",
                        g.shape(),
                        param.shape(),
                        names.get(pi).map(String::as_str).unwrap_or("?")
                    )));
                }
                if let Err(e) = g.check_finite("gradient") {
                    return Err(Error::Numeric(format!(
                        "non-finite gradient for {}: {e}",
                        names.get(pi).map(String::as_str).unwrap_or("?")
                    )));
                }
            }
            let theta = Rc::make_mut(param);
            let m = self.m[pi].data_mut();
            let v = self.v[pi].data_mut();
            let zero = S::zero();
            for e in 0..theta.numel() {
                let g = grads[pi].as_ref().map_or(zero, |g| g.data()[e]);
                m[e] = self.beta1 * m[e] + one_m_b1 * g;
                v[e] = self.beta2 * v[e] + one_m_b2 * g * g;
                let m_hat = m[e] / bc1;
                let v_hat = v[e] / bc2;
                theta.data_mut()[e] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn single(v: f64) -> Vec<Rc<Tensor<f64>>> {
        vec![Rc::new(Tensor::from_vec(&[1], vec![v]).unwrap())]
    }

    #[test]
    fn he_std_for_first_conv_layer() {
        // 1 input channel, 5x5 kernel: n_l = 25
        assert!((he_std(25) - (2.0_f64 / 25.0).sqrt()).abs() < 1e-15);
        assert!((he_std(25) - 0.2828).abs() < 1e-4);
    }

    #[test]
    fn init_matches_target_std_empirically() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let t: Tensor<f64> = init_normal(&[100000], he_std(25), &mut rng);
        let n = t.numel() as f64;
        let mean = t.sum() / n;
        let var = t.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let std = var.sqrt();
        assert!(mean.abs() < 0.01, "mean = {mean}");
        assert!((std / he_std(25) - 1.0).abs() < 0.02, "std = {std}");
    }

    #[test]
    fn zero_gradient_leaves_fresh_parameters_unchanged() {
        let mut params = single(0.7);
        let mut adam = Adam::new(0.001, &[&[1]]);
        adam.step(
            &mut params,
            &[Some(Tensor::zeros(&[1]))],
            &["w".into()],
        )
        .unwrap();
        assert_eq!(params[0].data()[0], 0.7);
        // a None gradient behaves the same way
        adam.step(&mut params, &[None], &["w".into()]).unwrap();
        assert_eq!(params[0].data()[0], 0.7);
    }

    #[test]
    fn two_steps_match_hand_computed_values() {
        let mut params = single(0.0);
        let lr = 0.001;
        let mut adam = Adam::new(lr, &[&[1]]);
        let g = || Some(Tensor::from_vec(&[1], vec![1.0]).unwrap());

        adam.step(&mut params, &[g()], &["w".into()]).unwrap();
        // hand: m=0.1, v=0.001, m_hat=m/(1-0.9), v_hat=v/(1-0.999)
        let (m1, v1) = (0.1, 0.001);
        let h1 = -lr * (m1 / (1.0 - 0.9_f64)) / ((v1 / (1.0 - 0.999_f64)).sqrt() + 1e-8);
        assert!((params[0].data()[0] - h1).abs() < 1e-12);
        assert!((params[0].data()[0] - (-0.001)).abs() < 1e-6);

        adam.step(&mut params, &[g()], &["w".into()]).unwrap();
        let (m2, v2) = (0.9 * m1 + 0.1, 0.999 * v1 + 0.001);
        let h2 = h1
            - lr * (m2 / (1.0 - 0.9_f64.powi(2)))
                / ((v2 / (1.0 - 0.999_f64.powi(2))).sqrt() + 1e-8);
        assert!((params[0].data()[0] - h2).abs() < 1e-12);
        assert!((params[0].data()[0] - (-0.002)).abs() < 1e-6);
    }

    #[test]
    fn update_magnitude_stays_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let mut params = single(0.0);
        let mut adam = Adam::new(0.001, &[&[1]]);
        for _ in 0..500 {
            let before = params[0].data()[0];
            let g = (rng.random::<f64>() - 0.5) * 200.0;
            adam.step(
                &mut params,
                &[Some(Tensor::from_vec(&[1], vec![g]).unwrap())],
                &["w".into()],
            )
            .unwrap();
            let delta = (params[0].data()[0] - before).abs();
            assert!(delta <= 10.0 * 0.001, "step {delta} too large");
        }
    }

    #[test]
    fn identical_state_and_gradients_give_identical_updates() {
        let grad = Some(Tensor::from_vec(&[2], vec![0.3, -1.7]).unwrap());
        let run = || {
            let mut params = vec![Rc::new(
                Tensor::from_vec(&[2], vec![0.5, -0.25]).unwrap(),
            )];
            let mut adam = Adam::new(0.001, &[&[2]]);
            for _ in 0..3 {
                adam.step(&mut params, &[grad.clone()], &["w".into()]).unwrap();
            }
            params[0].data().to_vec()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn converges_on_a_quadratic() {
        // f(x, y) = 0.5((x-3)^2 + (y+2)^2), minimum 0 at (3, -2)
        let mut params = vec![Rc::new(Tensor::<f64>::from_vec(&[2], vec![0.0, 0.0]).unwrap())];
        let mut adam = Adam::new(0.01, &[&[2]]);
        let mut loss = f64::INFINITY;
        for _ in 0..2000 {
            let (x, y) = (params[0].data()[0], params[0].data()[1]);
            loss = 0.5 * ((x - 3.0).powi(2) + (y + 2.0).powi(2));
            if loss < 1e-6 {
                break;
            }
            let g = Tensor::from_vec(&[2], vec![x - 3.0, y + 2.0]).unwrap();
            adam.step(&mut params, &[Some(g)], &["w".into()]).unwrap();
        }
        assert!(loss < 1e-6, "final loss {loss}");
    }

    #[test]
    fn non_finite_gradient_is_a_numeric_error_naming_the_parameter() {
        let mut params = single(0.0);
        let mut adam = Adam::new(0.001, &[&[1]]);
        let err = adam
            .step(
                &mut params,
                &[Some(Tensor::from_vec(&[1], vec![f64::NAN]).unwrap())],
                &["enc_conv1.weight".into()],
            )
            .unwrap_err();
        match err {
            Error::Numeric(msg) => assert!(msg.contains("enc_conv1.weight"), "{msg}"),
            other => panic!("expected numeric error, got {other:?}"),
        }
    }
}
