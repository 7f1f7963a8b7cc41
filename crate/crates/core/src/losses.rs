//! Reconstruction loss and the regularizer suite, composed into each
//! family's training objective.
//!
//! Conventions, fixed by calibration against the dataset (an all-zero
//! prediction on the validation split must land near 89):
//! reconstruction is summed over pixels and averaged over the batch;
//! every regularizer is likewise batch-averaged. The weight-decay term
//! sums squared weights only (biases excluded). Reported component
//! values are always computed — also for terms whose weight is zero —
//! while tape nodes are built only for active terms.

use crate::error::{Error, Result};
use crate::models::{Family, Forward};
use crate::tape::{Tape, Var};
use crate::tensor::{Scalar, Tensor};

/// Per-term weights of the composite objective. All must be
/// nonnegative; spiking-only terms (p1, p2, a1, a1_l3) and the
/// variational beta are rejected on the wrong family.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RegWeights {
    pub l2: f64,
    pub p1: f64,
    pub p2: f64,
    pub a1: f64,
    pub a1_l3: f64,
    pub beta: f64,
}

impl RegWeights {
    pub fn validate(&self, family: Family) -> Result<()> {
        let fields = [
            ("l2", self.l2),
            ("p1", self.p1),
            ("p2", self.p2),
            ("a1", self.a1),
            ("a1_l3", self.a1_l3),
            ("beta", self.beta),
        ];
        for (name, v) in fields {
            if !(v >= 0.0) {
                return Err(Error::Config(format!(
                    "regularization weight {name} must be nonnegative, got {v}"
                )));
            }
        }
        let spiking = self.p1 > 0.0 || self.p2 > 0.0 || self.a1 > 0.0 || self.a1_l3 > 0.0;
        if spiking && family != Family::Sae {
            return Err(Error::Contract(format!(
                "potential/activity regularizers apply only to the spiking family, not {:?}",
                family
            )));
        }
        if self.beta > 0.0 && family != Family::Vae {
            return Err(Error::Contract(format!(
                "beta applies only to the variational family, not {family:?}"
            )));
        }
        Ok(())
    }
}

/// Raw (unweighted) component values plus the composed total.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub rec: f64,
    pub l2: f64,
    pub p1: f64,
    pub p2: f64,
    pub a1: f64,
    pub a1_l3: f64,
    pub kl: f64,
    pub total: f64,
}

/// Sum of squared pixel errors per example, averaged over the batch.
pub fn reconstruction_loss<S: Scalar>(
    tape: &mut Tape<S>,
    x_hat: &Var<S>,
    x: &Tensor<S>,
) -> Result<Var<S>> {
    x_hat.val().check_same_shape(x)?;
    let n = x.shape()[0];
    let target = Var::constant(x.clone());
    let diff = tape.sub(x_hat, &target)?;
    let ss = tape.sum_sq(&diff);
    Ok(tape.scale(&ss, S::from_f64(1.0 / n as f64)))
}

/// Sum of squared weights over the non-bias parameters.
pub fn weight_reg<S: Scalar>(
    tape: &mut Tape<S>,
    leaves: &[Var<S>],
    bias_mask: &[bool],
) -> Result<Var<S>> {
    let mut acc: Option<Var<S>> = None;
    for (leaf, &is_bias) in leaves.iter().zip(bias_mask) {
        if is_bias {
            continue;
        }
        let ss = tape.sum_sq(leaf);
        acc = Some(match acc {
            Some(a) => tape.add(&a, &ss)?,
            None => ss,
        });
    }
    Ok(acc.unwrap_or_else(|| Var::constant(Tensor::scalar(S::zero()))))
}

/// Batch-averaged (P1, P2): sums of |U(T)| and U(T)^2 over all layers
/// and neurons.
pub fn potential_reg<S: Scalar>(
    tape: &mut Tape<S>,
    u_finals: &[Var<S>],
    batch: usize,
) -> Result<(Var<S>, Var<S>)> {
    let inv_n = S::from_f64(1.0 / batch as f64);
    let mut p1: Option<Var<S>> = None;
    let mut p2: Option<Var<S>> = None;
    for u in u_finals {
        let a = tape.sum_abs(u);
        let s = tape.sum_sq(u);
        p1 = Some(match p1 {
            Some(acc) => tape.add(&acc, &a)?,
            None => a,
        });
        p2 = Some(match p2 {
            Some(acc) => tape.add(&acc, &s)?,
            None => s,
        });
    }
    let p1 = p1.ok_or_else(|| Error::Contract("potential_reg: no U tensors".into()))?;
    let p2 = p2.unwrap();
    Ok((tape.scale(&p1, inv_n), tape.scale(&p2, inv_n)))
}

/// Scales a raw spike-count sum into the activity component
/// `sum over neurons of (1/T) sum over t of phi`, batch-averaged.
pub fn activity_component<S: Scalar>(
    tape: &mut Tape<S>,
    raw_spike_sum: &Var<S>,
    t_steps: usize,
    batch: usize,
) -> Var<S> {
    tape.scale(raw_spike_sum, S::from_f64(1.0 / (t_steps * batch) as f64))
}

/// Closed-form Gaussian KL against the standard normal:
/// `-1/2 sum(1 + log_var - mu^2 - exp(log_var))`, summed over latent
/// dims and averaged over the batch.
pub fn kl_divergence<S: Scalar>(
    tape: &mut Tape<S>,
    mu: &Var<S>,
    log_var: &Var<S>,
) -> Result<Var<S>> {
    mu.val().check_same_shape(log_var.val())?;
    let (n, n_z) = (mu.shape()[0], mu.shape()[1]);
    let t1 = tape.sum(log_var);
    let t2 = tape.sum_sq(mu);
    let sig = tape.exp(log_var);
    let t3 = tape.sum(&sig);
    let s = tape.sub(&t1, &t2)?;
    let s = tape.sub(&s, &t3)?;
    let s = tape.add_scalar(&s, S::from_f64((n * n_z) as f64));
    Ok(tape.scale(&s, S::from_f64(-0.5 / n as f64)))
}

fn kl_value<S: Scalar>(mu: &Tensor<S>, log_var: &Tensor<S>) -> f64 {
    let n = mu.shape()[0] as f64;
    let mut acc = 0.0;
    for (&m, &lv) in mu.data().iter().zip(log_var.data()) {
        let (m, lv) = (m.to_f64(), lv.to_f64());
        acc += 1.0 + lv - m * m - lv.exp();
    }
    -0.5 * acc / n
}

fn l2_value<S: Scalar>(leaves: &[Var<S>], bias_mask: &[bool]) -> f64 {
    leaves
        .iter()
        .zip(bias_mask)
        .filter(|(_, &b)| !b)
        .map(|(l, _)| l.val().data().iter().map(|&v| v.to_f64() * v.to_f64()).sum::<f64>())
        .sum()
}

fn potential_values<S: Scalar>(u_finals: &[Var<S>], batch: usize) -> (f64, f64) {
    let mut p1 = 0.0;
    let mut p2 = 0.0;
    for u in u_finals {
        for &v in u.val().data() {
            let v = v.to_f64();
            p1 += v.abs();
            p2 += v * v;
        }
    }
    (p1 / batch as f64, p2 / batch as f64)
}

/// Builds the family objective on the tape and reports every component
/// (raw, unweighted) alongside the total. `t_steps` is the simulation
/// horizon used to normalize activity terms.
pub fn total_objective<S: Scalar>(
    tape: &mut Tape<S>,
    leaves: &[Var<S>],
    bias_mask: &[bool],
    family: Family,
    fwd: &Forward<S>,
    x: &Tensor<S>,
    w: &RegWeights,
    t_steps: usize,
) -> Result<(Var<S>, LossBreakdown)> {
    w.validate(family)?;
    let batch = x.shape()[0];
    let rec = reconstruction_loss(tape, &fwd.x_hat, x)?;
    let mut total = rec.clone();
    let mut bd = LossBreakdown {
        rec: rec.val().item().to_f64(),
        l2: l2_value(leaves, bias_mask),
        ..Default::default()
    };

    if w.l2 > 0.0 {
        let l2 = weight_reg(tape, leaves, bias_mask)?;
        let scaled = tape.scale(&l2, S::from_f64(w.l2));
        total = tape.add(&total, &scaled)?;
    }

    if let Some(sae) = &fwd.sae {
        (bd.p1, bd.p2) = potential_values(&sae.u_finals, batch);
        bd.a1 = sae.a1_all_raw / (t_steps * batch) as f64;
        bd.a1_l3 = sae.a1_l3_raw / (t_steps * batch) as f64;
        if w.p1 > 0.0 || w.p2 > 0.0 {
            let (p1, p2) = potential_reg(tape, &sae.u_finals, batch)?;
            if w.p1 > 0.0 {
                let s = tape.scale(&p1, S::from_f64(w.p1));
                total = tape.add(&total, &s)?;
            }
            if w.p2 > 0.0 {
                let s = tape.scale(&p2, S::from_f64(w.p2));
                total = tape.add(&total, &s)?;
            }
        }
        if w.a1 > 0.0 {
            let raw = sae.a1_all.as_ref().ok_or_else(|| {
                Error::Contract("a1 weight set but spike sums were not recorded".into())
            })?;
            let a1 = activity_component(tape, raw, t_steps, batch);
            let s = tape.scale(&a1, S::from_f64(w.a1));
            total = tape.add(&total, &s)?;
        }
        if w.a1_l3 > 0.0 {
            let raw = sae.a1_l3.as_ref().ok_or_else(|| {
                Error::Contract("a1_l3 weight set but latent spike sums were not recorded".into())
            })?;
            let a1 = activity_component(tape, raw, t_steps, batch);
            let s = tape.scale(&a1, S::from_f64(w.a1_l3));
            total = tape.add(&total, &s)?;
        }
    }

    if let (Some(mu), Some(log_var)) = (&fwd.mu, &fwd.log_var) {
        bd.kl = kl_value(mu.val(), log_var.val());
        if w.beta > 0.0 {
            let kl = kl_divergence(tape, mu, log_var)?;
            let s = tape.scale(&kl, S::from_f64(w.beta));
            total = tape.add(&total, &s)?;
        }
    }

    bd.total = total.val().item().to_f64();
    Ok((total, bd))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coding::CodingParams;
    use crate::gradcheck::{grad_check, DEFAULT_H};
    use crate::lif::{LifParams, SpikeMode};
    use crate::models::{ForwardOpts, Model, ModelDims};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::rc::Rc;

    #[test]
    fn perfect_reconstruction_costs_nothing() {
        let mut tape = Tape::new_inference();
        let x = Tensor::from_vec(&[2, 1, 2, 2], vec![0.1; 8]).unwrap();
        let xh = Var::constant(x.clone());
        let rec = reconstruction_loss(&mut tape, &xh, &x).unwrap();
        assert_eq!(rec.val().item(), 0.0);
    }

    #[test]
    fn single_pixel_error_of_two_costs_four() {
        let mut tape = Tape::new_inference();
        let x = Tensor::from_vec(&[1, 1, 1, 2], vec![0.5, 0.0]).unwrap();
        let xh = Var::constant(Tensor::from_vec(&[1, 1, 1, 2], vec![2.5, 0.0]).unwrap());
        let rec = reconstruction_loss(&mut tape, &xh, &x).unwrap();
        assert_eq!(rec.val().item(), 4.0);
    }

    #[test]
    fn reconstruction_averages_over_the_batch() {
        // per-example pixel sums 4 and 0 -> mean 2
        let mut tape = Tape::new_inference();
        let x = Tensor::from_vec(&[2, 1, 1, 1], vec![0.0, 1.0]).unwrap();
        let xh = Var::constant(Tensor::from_vec(&[2, 1, 1, 1], vec![2.0, 1.0]).unwrap());
        let rec = reconstruction_loss(&mut tape, &xh, &x).unwrap();
        assert_eq!(rec.val().item(), 2.0);
    }

    #[test]
    fn weight_reg_hand_case_with_gradient() {
        let mut tape = Tape::new();
        let w = tape.leaf(Rc::new(Tensor::from_vec(&[2], vec![1.0, -2.0]).unwrap()), true);
        let b = tape.leaf(Rc::new(Tensor::from_vec(&[1], vec![10.0]).unwrap()), true);
        let l2 = weight_reg(&mut tape, &[w.clone(), b.clone()], &[false, true]).unwrap();
        assert_eq!(l2.val().item(), 5.0); // bias excluded
        let grads = tape.backward(&l2).unwrap();
        assert_eq!(grads.get(&w).unwrap().data(), &[2.0, -4.0]);
        assert!(grads.get(&b).is_none());
    }

    #[test]
    fn potential_reg_hand_case_and_zero_subgradient() {
        let mut tape = Tape::new();
        let u = tape.leaf(
            Rc::new(Tensor::from_vec(&[1, 3], vec![1.0, -2.0, 0.0]).unwrap()),
            true,
        );
        let (p1, p2) = potential_reg(&mut tape, &[u.clone()], 1).unwrap();
        assert_eq!(p1.val().item(), 3.0);
        assert_eq!(p2.val().item(), 5.0);
        let grads = tape.backward(&p1).unwrap();
        // d|u|/du = sign(u), 0 at 0
        assert_eq!(grads.get(&u).unwrap().data(), &[1.0, -1.0, 0.0]);
    }

    #[test]
    fn activity_component_hand_case() {
        // 2 neurons over T=4 with spike counts {3, 1}: 0.75 + 0.25 = 1.0
        let mut tape = Tape::new_inference();
        let raw = Var::constant(Tensor::scalar(4.0));
        let a1 = activity_component(&mut tape, &raw, 4, 1);
        assert_eq!(a1.val().item(), 1.0);
    }

    #[test]
    fn kl_closed_form_cases() {
        let mut tape = Tape::new_inference();
        let zero = Var::constant(Tensor::<f64>::zeros(&[1, 4]));
        let kl = kl_divergence(&mut tape, &zero, &zero).unwrap();
        assert_eq!(kl.val().item(), 0.0);

        let mu = Var::constant(Tensor::from_vec(&[1, 1], vec![1.0]).unwrap());
        let lv = Var::constant(Tensor::zeros(&[1, 1]));
        let kl = kl_divergence(&mut tape, &mu, &lv).unwrap();
        assert!((kl.val().item() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn kl_is_nonnegative_on_random_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(50);
        let mut tape = Tape::new_inference();
        for _ in 0..100 {
            let mu = Var::constant(Tensor::from_vec(
                &[2, 3],
                (0..6).map(|_| rng.random::<f64>() * 6.0 - 3.0).collect(),
            )
            .unwrap());
            let lv = Var::constant(Tensor::from_vec(
                &[2, 3],
                (0..6).map(|_| rng.random::<f64>() * 6.0 - 3.0).collect(),
            )
            .unwrap());
            let kl = kl_divergence(&mut tape, &mu, &lv).unwrap();
            assert!(kl.val().item() >= -1e-12);
        }
    }

    #[test]
    fn kl_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        let mu = Tensor::from_vec(&[2, 2], (0..4).map(|_| rng.random::<f64>() - 0.5).collect())
            .unwrap();
        let lv = Tensor::from_vec(&[2, 2], (0..4).map(|_| rng.random::<f64>() - 0.5).collect())
            .unwrap();
        let rep = grad_check(
            &[mu, lv],
            |tape, vars| kl_divergence(tape, &vars[0], &vars[1]),
            DEFAULT_H,
        )
        .unwrap();
        assert!(rep.max_rel_err < 1e-4, "{rep:?}");
    }

    fn micro_model(family: Family, t_steps: usize, seed: u64) -> Model<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Model::build(
            family,
            ModelDims::micro(),
            LifParams::default(),
            CodingParams::new(0.0, 0.2, t_steps, 0).unwrap(),
            &mut rng,
        )
        .unwrap()
    }

    fn micro_batch(n: usize, seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_vec(
            &[n, 1, 8, 8],
            (0..n * 64).map(|_| rng.random::<f64>()).collect(),
        )
        .unwrap()
    }

    #[test]
    fn spiking_objective_is_additive_and_reports_raw_components() {
        let t_steps = 6;
        let model = micro_model(Family::Sae, t_steps, 60);
        let x = micro_batch(2, 61);
        let mut tape = Tape::new();
        let leaves = model.register(&mut tape);
        let mut rng = ChaCha8Rng::seed_from_u64(62);
        let opts = ForwardOpts {
            want_a1_all: true,
            want_a1_l3: true,
            ..Default::default()
        };
        let fwd = model.forward(&mut tape, &leaves, &x, &mut rng, opts).unwrap();
        let w = RegWeights { p2: 0.01, a1_l3: 0.1, ..Default::default() };
        let (total, bd) = total_objective(
            &mut tape,
            &leaves,
            &model.bias_mask(),
            Family::Sae,
            &fwd,
            &x,
            &w,
            t_steps,
        )
        .unwrap();
        let recomposed = bd.rec + 0.01 * bd.p2 + 0.1 * bd.a1_l3;
        assert!(
            (bd.total - recomposed).abs() < 1e-9 * bd.total.abs().max(1.0),
            "total {} vs recomposed {recomposed}",
            bd.total
        );
        assert_eq!(total.val().item(), bd.total);
        // inactive terms still reported
        assert!(bd.l2 > 0.0);
        assert!(bd.p1 >= 0.0 && bd.a1 >= 0.0);
        // every component is nonnegative
        for v in [bd.rec, bd.l2, bd.p1, bd.p2, bd.a1, bd.a1_l3, bd.kl] {
            assert!(v >= 0.0);
        }
        // and gradients flow
        let grads = tape.backward(&total).unwrap();
        assert!(leaves.iter().any(|l| grads.get(l).is_some()));
    }

    #[test]
    fn zero_weights_reduce_to_reconstruction() {
        let model = micro_model(Family::Ae, 3, 63);
        let x = micro_batch(2, 64);
        let mut tape = Tape::new();
        let leaves = model.register(&mut tape);
        let mut rng = ChaCha8Rng::seed_from_u64(65);
        let fwd = model
            .forward(&mut tape, &leaves, &x, &mut rng, ForwardOpts::default())
            .unwrap();
        let (total, bd) = total_objective(
            &mut tape,
            &leaves,
            &model.bias_mask(),
            Family::Ae,
            &fwd,
            &x,
            &RegWeights::default(),
            3,
        )
        .unwrap();
        assert_eq!(total.val().item(), bd.rec);
        assert_eq!(bd.total, bd.rec);
    }

    #[test]
    fn zero_beta_variational_objective_is_rec_plus_weight_decay() {
        let model = micro_model(Family::Vae, 3, 66);
        let x = micro_batch(2, 67);
        let mut tape = Tape::new();
        let leaves = model.register(&mut tape);
        let mut rng = ChaCha8Rng::seed_from_u64(68);
        let fwd = model
            .forward(&mut tape, &leaves, &x, &mut rng, ForwardOpts::default())
            .unwrap();
        let w = RegWeights { l2: 0.01, ..Default::default() };
        let (_, bd) = total_objective(
            &mut tape,
            &leaves,
            &model.bias_mask(),
            Family::Vae,
            &fwd,
            &x,
            &w,
            3,
        )
        .unwrap();
        let recomposed = bd.rec + 0.01 * bd.l2;
        assert!((bd.total - recomposed).abs() < 1e-9 * bd.total.max(1.0));
        assert!(bd.kl > 0.0, "kl still reported: {}", bd.kl);
    }

    #[test]
    fn misapplied_weights_are_rejected() {
        assert!(matches!(
            RegWeights { l2: -0.1, ..Default::default() }.validate(Family::Ae),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            RegWeights { p1: 0.1, ..Default::default() }.validate(Family::Ae),
            Err(Error::Contract(_))
        ));
        assert!(matches!(
            RegWeights { beta: 1.0, ..Default::default() }.validate(Family::Sae),
            Err(Error::Contract(_))
        ));
        RegWeights { p1: 0.1, a1: 0.2, ..Default::default() }
            .validate(Family::Sae)
            .unwrap();
    }

    #[test]
    fn raising_the_activity_weight_does_not_raise_activity_after_a_step() {
        let t_steps = 5;
        let x = micro_batch(2, 70);
        let a1_after = |a1_w: f64| -> f64 {
            let model = micro_model(Family::Sae, t_steps, 71);
            let mut tape = Tape::new();
            let leaves = model.register(&mut tape);
            let mut rng = ChaCha8Rng::seed_from_u64(72);
            let opts = ForwardOpts { want_a1_all: true, ..Default::default() };
            let fwd = model.forward(&mut tape, &leaves, &x, &mut rng, opts).unwrap();
            let w = RegWeights { a1: a1_w, ..Default::default() };
            let (total, _) = total_objective(
                &mut tape,
                &leaves,
                &model.bias_mask(),
                Family::Sae,
                &fwd,
                &x,
                &w,
                t_steps,
            )
            .unwrap();
            let mut grads = tape.backward(&total).unwrap();
            // one plain gradient step
            let lr = 0.02;
            let mut model = model;
            let mut rcs = model.take_param_rcs();
            let updates: Vec<Option<Tensor<f64>>> =
                leaves.iter().map(|l| grads.take(l)).collect();
            drop(fwd);
            drop(tape);
            for (rc, g) in rcs.iter_mut().zip(&updates) {
                if let Some(g) = g {
                    let t = Rc::make_mut(rc);
                    for (p, &gv) in t.data_mut().iter_mut().zip(g.data()) {
                        *p -= lr * gv;
                    }
                }
            }
            model.set_param_rcs(rcs).unwrap();
            // re-measure activity on the same encoding stream
            let mut tape = Tape::new_inference();
            let leaves = model.register(&mut tape);
            let mut rng = ChaCha8Rng::seed_from_u64(72);
            let fwd = model
                .forward(&mut tape, &leaves, &x, &mut rng, ForwardOpts::default())
                .unwrap();
            fwd.sae.unwrap().a1_all_raw
        };
        let lo = a1_after(0.01);
        let hi = a1_after(0.5);
        assert!(hi <= lo + 1e-9, "activity rose under a stronger penalty: {lo} -> {hi}");
    }

    #[test]
    fn full_spiking_objective_gradcheck_on_the_twin() {
        // every term active at once; identity twin keeps it differentiable
        let t_steps = 3;
        let model = micro_model(Family::Sae, t_steps, 73);
        let x = micro_batch(1, 74);
        let spike_seed = 75;
        let params: Vec<Tensor<f64>> =
            model.param_values().iter().map(|t| (*t).clone()).collect();
        let names = model.param_names().len();
        assert_eq!(names, 6);
        let rep = grad_check(
            &params,
            |tape, vars| {
                // forward reads weights from the supplied leaf vars; the
                // model instance only contributes dims/lif/coding
                let m = micro_model(Family::Sae, t_steps, 73);
                let mut rng = ChaCha8Rng::seed_from_u64(spike_seed);
                let opts = ForwardOpts {
                    mode: SpikeMode::IdentityTwin,
                    want_a1_all: true,
                    want_a1_l3: true,
                    ..Default::default()
                };
                let fwd = m.forward(tape, vars, &x, &mut rng, opts)?;
                let w = RegWeights {
                    l2: 0.3,
                    p1: 0.05,
                    p2: 0.05,
                    a1: 0.1,
                    a1_l3: 0.1,
                    ..Default::default()
                };
                let (total, _) = total_objective(
                    tape,
                    vars,
                    &m.bias_mask(),
                    Family::Sae,
                    &fwd,
                    &x,
                    &w,
                    t_steps,
                )?;
                Ok(total)
            },
            DEFAULT_H,
        )
        .unwrap();
        assert!(rep.max_rel_err < 1e-4, "{rep:?}");
    }
}
