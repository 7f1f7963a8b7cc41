//! Pixel-to-spike encoding and spike-to-pixel decoding.
//!
//! Images are optionally corrupted by uniform noise, then turned into
//! binary spike trains by per-step Bernoulli draws with success
//! probability `s * x`. Reconstruction reads the scaled maximum of the
//! output layer's cumulative potential over the decode window.
//!
//! All random draws are taken at f64 and compared/converted from
//! there, so f32 and f64 builds see identical spike trains from the
//! same seed. Draw order is fixed: batch item, then pixel (row-major),
//! then time step.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug)]
pub struct CodingParams<S> {
    /// noise level in [0, 1]
    pub epsilon: S,
    /// spike-probability scale
    pub s: S,
    /// number of simulation steps
    pub t_steps: usize,
    /// first step eligible for decoding
    pub t_min: usize,
}

impl<S: Scalar> CodingParams<S> {
    pub fn new(epsilon: S, s: S, t_steps: usize, t_min: usize) -> Result<Self> {
        if !(epsilon >= S::zero() && epsilon <= S::one()) {
            return Err(Error::Config(format!(
                "noise level must be in [0, 1], got {epsilon}"
            )));
        }
        if !(s > S::zero()) {
            return Err(Error::Config(format!("spike scale must be > 0, got {s}")));
        }
        if t_steps < 1 {
            return Err(Error::Config("t_steps must be >= 1".into()));
        }
        if t_min >= t_steps {
            return Err(Error::Config(format!(
                "t_min must satisfy 0 <= t_min < t_steps, got {t_min} with t_steps {t_steps}"
            )));
        }
        Ok(CodingParams { epsilon, s, t_steps, t_min })
    }
}

impl<S: Scalar> Default for CodingParams<S> {
    fn default() -> Self {
        CodingParams {
            epsilon: S::zero(),
            s: S::from_f64(0.2),
            t_steps: 100,
            t_min: 0,
        }
    }
}

/// `x' = (1 - eps) * x + eps * xi`, `xi ~ U(0, 1)` per pixel. With
/// `eps = 0` the input is returned unchanged and the noise stream is
/// not consumed.
pub fn corrupt<S: Scalar, R: Rng>(x: &Tensor<S>, epsilon: S, rng: &mut R) -> Result<Tensor<S>> {
    if !(epsilon >= S::zero() && epsilon <= S::one()) {
        return Err(Error::Config(format!(
            "noise level must be in [0, 1], got {epsilon}"
        )));
    }
    if epsilon == S::zero() {
        return Ok(x.clone());
    }
    let keep = S::one() - epsilon;
    let data = x
        .data()
        .iter()
        .map(|&v| {
            let xi = S::from_f64(rng.random::<f64>());
            keep * v + epsilon * xi
        })
        .collect();
    Tensor::from_vec(x.shape(), data)
}

/// Bernoulli spike trains: at each step a pixel fires iff
/// `s * x > r`, `r ~ U(0, 1)` drawn fresh per pixel per step. Returns
/// one binary tensor per step, each shaped like `x`.
pub fn poisson_encode<S: Scalar, R: Rng>(
    x: &Tensor<S>,
    p: &CodingParams<S>,
    rng: &mut R,
) -> Vec<Tensor<S>> {
    let numel = x.numel();
    let mut steps: Vec<Vec<S>> = (0..p.t_steps).map(|_| vec![S::zero(); numel]).collect();
    let s = p.s.to_f64();
    for (e, &xv) in x.data().iter().enumerate() {
        let sx = s * xv.to_f64();
        for step in steps.iter_mut() {
            if sx > rng.random::<f64>() {
                step[e] = S::one();
            }
        }
    }
    steps
        .into_iter()
        .map(|d| Tensor::from_vec(x.shape(), d).unwrap().mark_binary())
        .collect()
}

/// The slice of `U(1)..U(T)` vars covered by the decode window
/// `{t_min, ..., T}`. The virtual `U(0) = 0` floor is applied inside
/// the decode op itself, so `t_min` of 0 and 1 select the same slice.
pub fn decode_window<S: Scalar>(u_cum: &[Var<S>], t_min: usize) -> Result<&[Var<S>]> {
    if u_cum.is_empty() {
        return Err(Error::Contract("decode window is empty".into()));
    }
    if t_min > u_cum.len() {
        return Err(Error::Contract(format!(
            "t_min {t_min} exceeds trace length {}",
            u_cum.len()
        )));
    }
    Ok(&u_cum[t_min.max(1) - 1..])
}

/// `x_hat = (1/s) * max(0, max over the window of U(t))`, recorded on
/// the tape with the subgradient routed to the maximizing step.
pub fn decode_max<S: Scalar>(
    tape: &mut Tape<S>,
    u_cum: &[Var<S>],
    p: &CodingParams<S>,
) -> Result<Var<S>> {
    let window = decode_window(u_cum, p.t_min)?;
    tape.decode_max(window, p.s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_noise_is_identity() {
        let x = Tensor::from_vec(&[2, 2], vec![0.1, 0.5, 0.9, 0.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let y = corrupt(&x, 0.0, &mut rng).unwrap();
        assert_eq!(x.data(), y.data());
        // stream untouched: next draw equals the first draw of a fresh rng
        let mut fresh = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(rng.random::<f64>(), fresh.random::<f64>());
    }

    #[test]
    fn corruption_formula_matches_hand_arithmetic() {
        let x = Tensor::from_vec(&[1], vec![0.8]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let y = corrupt(&x, 0.5, &mut rng).unwrap();
        let mut replay = ChaCha8Rng::seed_from_u64(7);
        let xi: f64 = replay.random();
        assert_eq!(y.data()[0], 0.5 * 0.8 + 0.5 * xi);
        // and the worked example: xi = 0.2 gives 0.5
        assert!((0.5 * 0.8 + 0.5 * 0.2 - 0.5_f64).abs() < 1e-15);
    }

    #[test]
    fn full_noise_is_independent_uniform() {
        let x = Tensor::filled(&[10000], 0.9_f64);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let y = corrupt(&x, 1.0, &mut rng).unwrap();
        let mean = y.sum() / 10000.0;
        assert!((mean - 0.5).abs() < 0.02, "mean = {mean}");
        assert!(y.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn corruption_mean_interpolates() {
        // E[x'] = (1 - eps) x + eps / 2
        let n = 20000;
        let x = Tensor::filled(&[n], 0.8_f64);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let eps = 0.3;
        let y = corrupt(&x, eps, &mut rng).unwrap();
        let mean = y.sum() / n as f64;
        let expect = (1.0 - eps) * 0.8 + eps / 2.0;
        // xi contributes var eps^2/12 per pixel; 5 sigma of the mean
        let tol = 5.0 * (eps * eps / 12.0 / n as f64).sqrt();
        assert!((mean - expect).abs() < tol, "mean {mean} vs {expect}");
    }

    #[test]
    fn invalid_params_are_config_errors() {
        assert!(matches!(
            CodingParams::new(-0.1, 0.2, 10, 0).unwrap_err(),
            Error::Config(_)
        ));
        assert!(matches!(
            CodingParams::new(0.0, 0.0, 10, 0).unwrap_err(),
            Error::Config(_)
        ));
        assert!(matches!(
            CodingParams::new(0.0, 0.2, 10, 10).unwrap_err(),
            Error::Config(_)
        ));
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Tensor::filled(&[1], 0.5_f64);
        assert!(matches!(
            corrupt(&x, 1.5, &mut rng).unwrap_err(),
            Error::Config(_)
        ));
    }

    #[test]
    fn zero_pixel_never_spikes() {
        let x = Tensor::from_vec(&[2], vec![0.0, 1.0]).unwrap();
        let p = CodingParams::new(0.0, 0.2, 200, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let train = poisson_encode(&x, &p, &mut rng);
        assert_eq!(train.len(), 200);
        for step in &train {
            assert!(step.is_binary());
            assert_eq!(step.data()[0], 0.0);
        }
    }

    #[test]
    fn saturated_pixel_spikes_binomially() {
        // pixel 1.0 at s = 0.2, T = 100: count ~ Binomial(100, 0.2)
        let x = Tensor::from_vec(&[1], vec![1.0]).unwrap();
        let p = CodingParams::new(0.0, 0.2, 100, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let reps = 400;
        let mut total = 0.0;
        for _ in 0..reps {
            let train = poisson_encode(&x, &p, &mut rng);
            total += train.iter().map(|s| s.data()[0]).sum::<f64>();
        }
        let mean = total / reps as f64;
        // sd of the mean = sqrt(100 * 0.2 * 0.8 / reps) = 0.2
        assert!((mean - 20.0).abs() < 1.0, "mean count = {mean}");
    }

    #[test]
    fn encoding_rate_is_unbiased_at_long_horizon() {
        let xv = 0.63;
        let x = Tensor::from_vec(&[1], vec![xv]).unwrap();
        let p = CodingParams::new(0.0, 0.2, 10000, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let train = poisson_encode(&x, &p, &mut rng);
        let rate = train.iter().map(|s| s.data()[0]).sum::<f64>() / 10000.0;
        let target = 0.2 * xv;
        let tol = 3.0 * (target * (1.0 - target) / 10000.0).sqrt();
        assert!((rate - target).abs() < tol, "rate {rate} vs {target}");
    }

    #[test]
    fn spike_trains_are_identical_across_precisions() {
        let xf: Tensor<f32> = Tensor::from_vec(&[3], vec![0.2, 0.75, 1.0]).unwrap();
        let xd: Tensor<f64> = xf.cast();
        let p32 = CodingParams::<f32>::new(0.0, 0.2, 50, 0).unwrap();
        let p64 = CodingParams::<f64>::new(0.0, 0.2, 50, 0).unwrap();
        let mut r1 = ChaCha8Rng::seed_from_u64(9);
        let mut r2 = ChaCha8Rng::seed_from_u64(9);
        let t32 = poisson_encode(&xf, &p32, &mut r1);
        let t64 = poisson_encode(&xd, &p64, &mut r2);
        for (a, b) in t32.iter().zip(&t64) {
            let af: Vec<f64> = a.data().iter().map(|&v| v as f64).collect();
            assert_eq!(af, b.data());
        }
    }

    #[test]
    fn decode_hand_case_and_window_selection() {
        let p = CodingParams::new(0.0, 0.2, 3, 0).unwrap();
        let mut tape = Tape::new_inference();
        let trace: Vec<Var<f64>> = [0.5, 1.2, 0.9]
            .iter()
            .map(|&v| Var::constant(Tensor::from_vec(&[1, 1], vec![v]).unwrap()))
            .collect();
        let xh = decode_max(&mut tape, &trace, &p).unwrap();
        assert!((xh.val().item() - 6.0).abs() < 1e-12);

        // t_min = 2 drops U(1); max of {U(2), U(3), virtual 0}
        let trace2: Vec<Var<f64>> = [5.0, 1.0, 0.8]
            .iter()
            .map(|&v| Var::constant(Tensor::from_vec(&[1, 1], vec![v]).unwrap()))
            .collect();
        let p2 = CodingParams::new(0.0, 0.2, 3, 2).unwrap();
        let xh2 = decode_max(&mut tape, &trace2, &p2).unwrap();
        assert!((xh2.val().item() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn decode_floors_and_rejects_empty() {
        let mut tape = Tape::new_inference();
        let zero = vec![Var::constant(Tensor::from_vec(&[1, 2], vec![0.0, -3.0]).unwrap())];
        let p = CodingParams::new(0.0, 0.2, 1, 0).unwrap();
        let xh = decode_max(&mut tape, &zero, &p).unwrap();
        assert_eq!(xh.val().data(), &[0.0, 0.0]);
        assert!(decode_window::<f64>(&[], 0).is_err());
    }

    #[test]
    fn decode_is_monotone_in_the_trace() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let p = CodingParams::new(0.0, 0.2, 4, 0).unwrap();
        for _ in 0..50 {
            let base: Vec<Vec<f64>> = (0..4)
                .map(|_| (0..3).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect())
                .collect();
            let bumped: Vec<Vec<f64>> = base
                .iter()
                .map(|row| row.iter().map(|v| v + rng.random::<f64>()).collect())
                .collect();
            let to_vars = |rows: &[Vec<f64>]| -> Vec<Var<f64>> {
                rows.iter()
                    .map(|r| Var::constant(Tensor::from_vec(&[1, 3], r.clone()).unwrap()))
                    .collect()
            };
            let mut tape = Tape::new_inference();
            let lo = decode_max(&mut tape, &to_vars(&base), &p).unwrap();
            let hi = decode_max(&mut tape, &to_vars(&bumped), &p).unwrap();
            for (a, b) in lo.val().data().iter().zip(hi.val().data()) {
                assert!(b >= a);
            }
        }
    }
}
