//! The three model families over one shared 6-layer autoencoder stack:
//! conv → conv → dense || dense → deconv → deconv.
//!
//! * `Sae` — every layer is leaky integrate-and-fire, no biases
//!   anywhere; pixels enter as Poisson spike trains and leave through
//!   the max-cumulative-potential decode.
//! * `Ae` — ReLU activations, biases on the dense layers, linear
//!   output.
//! * `Vae` — as `Ae`, but the encoder's dense layer is linear and twice
//!   as wide, splitting into (mu, log-variance); the decoder sees a
//!   reparameterized sample while training and mu during evaluation.

use std::rc::Rc;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::coding::{self, CodingParams};
use crate::error::{Error, Result};
use crate::lif::{lif_step, LifParams, LifState, SpikeMode};
use crate::optim::{he_std, init_normal};
use crate::tape::{Tape, Var};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Family {
    Sae,
    Ae,
    Vae,
}

impl Family {
    pub fn as_str(&self) -> &'static str {
        match self {
            Family::Sae => "sae",
            Family::Ae => "ae",
            Family::Vae => "vae",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "sae" => Ok(Family::Sae),
            "ae" => Ok(Family::Ae),
            "vae" => Ok(Family::Vae),
            other => Err(Error::Config(format!(
                "unknown model family {other:?} (expected sae, ae or vae)"
            ))),
        }
    }
}

/// Architecture hyperparameters. The default MNIST stack is
/// 28×28 → conv(1→16, 5×5) → conv(16→32, 5×5) → dense; `micro` is a
/// scaled-down twin for fast gradient checks.
#[derive(Clone, Copy, Debug)]
pub struct ModelDims {
    pub input_hw: usize,
    pub in_ch: usize,
    pub ch1: usize,
    pub ch2: usize,
    pub kernel: usize,
    pub n_z: usize,
}

impl ModelDims {
    pub fn mnist(n_z: usize) -> Self {
        ModelDims { input_hw: 28, in_ch: 1, ch1: 16, ch2: 32, kernel: 5, n_z }
    }

    /// 8×8 input, channels 2/4, 3×3 kernels, n_z = 8.
    pub fn micro() -> Self {
        ModelDims { input_hw: 8, in_ch: 1, ch1: 2, ch2: 4, kernel: 3, n_z: 8 }
    }

    pub fn h1(&self) -> usize {
        self.input_hw + 1 - self.kernel
    }

    pub fn h2(&self) -> usize {
        self.h1() + 1 - self.kernel
    }

    /// flattened size after the second conv
    pub fn flat(&self) -> usize {
        self.ch2 * self.h2() * self.h2()
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_ch == 0 || self.ch1 == 0 || self.ch2 == 0 || self.n_z == 0 {
            return Err(Error::Config("channel/latent sizes must be positive".into()));
        }
        if self.kernel == 0 || self.input_hw < 2 * (self.kernel - 1) + 1 {
            return Err(Error::Config(format!(
                "input {}x{} too small for two valid {}x{} convolutions",
                self.input_hw, self.input_hw, self.kernel, self.kernel
            )));
        }
        Ok(())
    }
}

#[derive(Debug)]
struct Param<S> {
    name: String,
    value: Rc<Tensor<S>>,
    is_bias: bool,
}

/// Indices into the parameter list for the six layers.
#[derive(Debug, Clone, Copy)]
struct Layout {
    w1: usize,
    w2: usize,
    w3: usize,
    b3: Option<usize>,
    w4: usize,
    b4: Option<usize>,
    w5: usize,
    w6: usize,
}

#[derive(Debug)]
pub struct Model<S> {
    pub family: Family,
    pub dims: ModelDims,
    pub lif: LifParams<S>,
    pub coding: CodingParams<S>,
    params: Vec<Param<S>>,
    layout: Layout,
}

/// Forward-pass switches. `mode` selects binary spiking or its
/// differentiable identity twin (spiking family only);
/// `sample_latent` picks sampled-z versus mu decoding (variational
/// family only).
#[derive(Clone, Copy)]
pub struct ForwardOpts {
    pub mode: SpikeMode,
    pub sample_latent: bool,
    pub want_a1_all: bool,
    pub want_a1_l3: bool,
}

impl Default for ForwardOpts {
    fn default() -> Self {
        ForwardOpts {
            mode: SpikeMode::Binary,
            sample_latent: true,
            want_a1_all: false,
            want_a1_l3: false,
        }
    }
}

/// Spiking-specific traces kept for regularizers and activity metrics.
#[derive(Debug)]
pub struct SaeTraces<S> {
    /// U(T) per layer, in layer order (6 entries)
    pub u_finals: Vec<Var<S>>,
    /// total spike count over all layers/steps, on the tape (present
    /// when requested for the activity regularizer)
    pub a1_all: Option<Var<S>>,
    /// same for the latent layer only
    pub a1_l3: Option<Var<S>>,
    pub a1_all_raw: f64,
    pub a1_l3_raw: f64,
    /// per-(example, latent neuron) spike counts
    pub l3_counts: Tensor<f64>,
    /// total spikes per layer across the batch and all steps
    pub layer_spikes: [f64; 6],
}

#[derive(Debug)]
pub struct Forward<S> {
    pub x_hat: Var<S>,
    /// per-example latent row: firing rates (spiking), z (plain), or mu
    /// (variational)
    pub latent: Tensor<f64>,
    pub mu: Option<Var<S>>,
    pub log_var: Option<Var<S>>,
    pub sae: Option<SaeTraces<S>>,
}

impl<S: Scalar> Model<S> {
    pub fn build<R: Rng>(
        family: Family,
        dims: ModelDims,
        lif: LifParams<S>,
        coding: CodingParams<S>,
        rng: &mut R,
    ) -> Result<Model<S>> {
        dims.validate()?;
        let k = dims.kernel;
        let (flat, n_z) = (dims.flat(), dims.n_z);
        let latent_out = match family {
            Family::Vae => 2 * n_z,
            _ => n_z,
        };
        let biased = !matches!(family, Family::Sae);

        fn weight<S: Scalar, R: Rng>(
            params: &mut Vec<Param<S>>,
            name: &str,
            shape: &[usize],
            fan_in: usize,
            rng: &mut R,
        ) -> usize {
            params.push(Param {
                name: name.to_string(),
                value: Rc::new(init_normal(shape, he_std(fan_in), rng)),
                is_bias: false,
            });
            params.len() - 1
        }
        fn bias<S: Scalar>(params: &mut Vec<Param<S>>, name: &str, len: usize) -> usize {
            params.push(Param {
                name: name.to_string(),
                value: Rc::new(Tensor::zeros(&[len])),
                is_bias: true,
            });
            params.len() - 1
        }

        let p = &mut Vec::new();
        let w1 = weight(p, "enc_conv1.weight", &[dims.ch1, dims.in_ch, k, k], dims.in_ch * k * k, rng);
        let w2 = weight(p, "enc_conv2.weight", &[dims.ch2, dims.ch1, k, k], dims.ch1 * k * k, rng);
        let w3 = weight(p, "enc_dense.weight", &[flat, latent_out], flat, rng);
        let b3 = biased.then(|| bias(p, "enc_dense.bias", latent_out));
        let w4 = weight(p, "dec_dense.weight", &[n_z, flat], n_z, rng);
        let b4 = biased.then(|| bias(p, "dec_dense.bias", flat));
        let w5 = weight(p, "dec_deconv1.weight", &[dims.ch2, dims.ch1, k, k], dims.ch2 * k * k, rng);
        let w6 = weight(p, "dec_deconv2.weight", &[dims.ch1, dims.in_ch, k, k], dims.ch1 * k * k, rng);
        let params = std::mem::take(p);

        Ok(Model {
            family,
            dims,
            lif,
            coding,
            params,
            layout: Layout { w1, w2, w3, b3, w4, b4, w5, w6 },
        })
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn param_names(&self) -> Vec<&str> {
        self.params.iter().map(|p| p.name.as_str()).collect()
    }

    pub fn param_values(&self) -> Vec<&Tensor<S>> {
        self.params.iter().map(|p| p.value.as_ref()).collect()
    }

    pub fn bias_mask(&self) -> Vec<bool> {
        self.params.iter().map(|p| p.is_bias).collect()
    }

    pub fn param_shapes(&self) -> Vec<&[usize]> {
        self.params.iter().map(|p| p.value.shape()).collect()
    }

    /// Shared handles for the optimizer (updates go through
    /// `Rc::make_mut`, so drop any tape still holding them first).
    pub fn take_param_rcs(&self) -> Vec<Rc<Tensor<S>>> {
        self.params.iter().map(|p| p.value.clone()).collect()
    }

    pub fn set_param_rcs(&mut self, values: Vec<Rc<Tensor<S>>>) -> Result<()> {
        if values.len() != self.params.len() {
            return Err(Error::Contract(format!(
                "expected {} parameter tensors, got {}",
                self.params.len(),
                values.len()
            )));
        }
        for (p, v) in self.params.iter_mut().zip(values) {
            if v.shape() != p.value.shape() {
                return Err(Error::Format(format!(
                    "parameter {} has shape {:?}, expected {:?}",
                    p.name,
                    v.shape(),
                    p.value.shape()
                )));
            }
            p.value = v;
        }
        Ok(())
    }

    /// Replaces one named parameter (checkpoint loading).
    pub fn load_param(&mut self, name: &str, value: Tensor<S>) -> Result<()> {
        let p = self
            .params
            .iter_mut()
            .find(|p| p.name == name)
            .ok_or_else(|| Error::Format(format!("unknown parameter {name:?}")))?;
        if value.shape() != p.value.shape() {
            return Err(Error::Format(format!(
                "parameter {name} has shape {:?}, expected {:?}",
                value.shape(),
                p.value.shape()
            )));
        }
        p.value = Rc::new(value);
        Ok(())
    }

    /// Registers every parameter as a gradient leaf on the tape; the
    /// returned handles align with the parameter list.
    pub fn register(&self, tape: &mut Tape<S>) -> Vec<Var<S>> {
        self.params
            .iter()
            .map(|p| tape.leaf(p.value.clone(), true))
            .collect()
    }

    pub fn forward<R: Rng>(
        &self,
        tape: &mut Tape<S>,
        leaves: &[Var<S>],
        x: &Tensor<S>,
        rng: &mut R,
        opts: ForwardOpts,
    ) -> Result<Forward<S>> {
        let hw = self.dims.input_hw;
        if x.shape().len() != 4
            || x.shape()[1] != self.dims.in_ch
            || x.shape()[2] != hw
            || x.shape()[3] != hw
        {
            return Err(Error::Dim(format!(
                "input shape {:?}, expected [n, {}, {hw}, {hw}]",
                x.shape(),
                self.dims.in_ch
            )));
        }
        if leaves.len() != self.params.len() {
            return Err(Error::Contract(format!(
                "{} leaves for {} parameters",
                leaves.len(),
                self.params.len()
            )));
        }
        match self.family {
            Family::Sae => self.forward_spiking(tape, leaves, x, rng, opts),
            Family::Ae => self.forward_plain(tape, leaves, x, rng),
            Family::Vae => self.forward_variational(tape, leaves, x, rng, opts),
        }
    }

    fn forward_spiking<R: Rng>(
        &self,
        tape: &mut Tape<S>,
        leaves: &[Var<S>],
        x: &Tensor<S>,
        rng: &mut R,
        opts: ForwardOpts,
    ) -> Result<Forward<S>> {
        let lay = self.layout;
        let n = x.shape()[0];
        let xp = coding::corrupt(x, self.coding.epsilon, rng)?;
        let spike_in = coding::poisson_encode(&xp, &self.coding, rng);
        let t_steps = spike_in.len();

        let mut states: Vec<LifState<S>> = (0..6).map(|_| LifState::fresh()).collect();
        let mut out_trace: Vec<Var<S>> = Vec::with_capacity(t_steps);
        let mut a1_all: Option<Var<S>> = None;
        let mut a1_l3: Option<Var<S>> = None;
        let mut a1_all_raw = 0.0;
        let mut a1_l3_raw = 0.0;
        let mut l3_counts = Tensor::<f64>::zeros(&[n, self.dims.n_z]);
        let mut layer_spikes = [0.0_f64; 6];

        for x_t in spike_in {
            let mut phi = Var::constant(x_t);
            for li in 0..6 {
                let w_in = match li {
                    0 => tape.conv2d(&phi, &leaves[lay.w1])?,
                    1 => tape.conv2d(&phi, &leaves[lay.w2])?,
                    2 => {
                        let flat = tape.reshape(&phi, &[n, self.dims.flat()])?;
                        tape.affine(&flat, &leaves[lay.w3], None)?
                    }
                    3 => tape.affine(&phi, &leaves[lay.w4], None)?,
                    4 => {
                        let h2 = self.dims.h2();
                        let img = tape.reshape(&phi, &[n, self.dims.ch2, h2, h2])?;
                        tape.deconv2d(&img, &leaves[lay.w5])?
                    }
                    _ => tape.deconv2d(&phi, &leaves[lay.w6])?,
                };
                let step = lif_step(
                    tape,
                    std::mem::take(&mut states[li]),
                    &w_in,
                    &self.lif,
                    opts.mode,
                )?;
                states[li] = step.state;
                let spikes_here: f64 = step.phi.val().data().iter().map(|&v| v.to_f64()).sum();
                layer_spikes[li] += spikes_here;
                a1_all_raw += spikes_here;
                if li == 2 {
                    a1_l3_raw += spikes_here;
                    for (c, &s) in l3_counts
                        .data_mut()
                        .iter_mut()
                        .zip(step.phi.val().data())
                    {
                        *c += s.to_f64();
                    }
                }
                if opts.want_a1_all || (opts.want_a1_l3 && li == 2) {
                    let s = tape.sum(&step.phi);
                    if opts.want_a1_all {
                        a1_all = Some(match a1_all.take() {
                            Some(acc) => tape.add(&acc, &s)?,
                            None => s.clone(),
                        });
                    }
                    if opts.want_a1_l3 && li == 2 {
                        a1_l3 = Some(match a1_l3.take() {
                            Some(acc) => tape.add(&acc, &s)?,
                            None => s,
                        });
                    }
                }
                if li == 5 {
                    out_trace.push(step.u_cum.clone());
                }
                phi = step.phi;
            }
        }

        let x_hat = coding::decode_max(tape, &out_trace, &self.coding)?;
        let u_finals: Vec<Var<S>> = states
            .iter()
            .map(|st| st.u_cum().cloned().expect("t_steps >= 1"))
            .collect();
        let latent = l3_counts.map(|c| c / t_steps as f64);
        Ok(Forward {
            x_hat,
            latent,
            mu: None,
            log_var: None,
            sae: Some(SaeTraces {
                u_finals,
                a1_all,
                a1_l3,
                a1_all_raw,
                a1_l3_raw,
                l3_counts,
                layer_spikes,
            }),
        })
    }

    fn encode_plain(
        &self,
        tape: &mut Tape<S>,
        leaves: &[Var<S>],
        xp: Tensor<S>,
    ) -> Result<Var<S>> {
        let lay = self.layout;
        let n = xp.shape()[0];
        let xv = Var::constant(xp);
        let h = tape.conv2d(&xv, &leaves[lay.w1])?;
        let h = tape.relu(&h);
        let h = tape.conv2d(&h, &leaves[lay.w2])?;
        let h = tape.relu(&h);
        let flat = tape.reshape(&h, &[n, self.dims.flat()])?;
        tape.affine(&flat, &leaves[lay.w3], lay.b3.map(|i| &leaves[i]))
    }

    fn decode_plain(
        &self,
        tape: &mut Tape<S>,
        leaves: &[Var<S>],
        z: &Var<S>,
    ) -> Result<Var<S>> {
        let lay = self.layout;
        let n = z.shape()[0];
        let h = tape.affine(z, &leaves[lay.w4], lay.b4.map(|i| &leaves[i]))?;
        let h = tape.relu(&h);
        let h2 = self.dims.h2();
        let img = tape.reshape(&h, &[n, self.dims.ch2, h2, h2])?;
        let h = tape.deconv2d(&img, &leaves[lay.w5])?;
        let h = tape.relu(&h);
        tape.deconv2d(&h, &leaves[lay.w6])
    }

    fn forward_plain<R: Rng>(
        &self,
        tape: &mut Tape<S>,
        leaves: &[Var<S>],
        x: &Tensor<S>,
        rng: &mut R,
    ) -> Result<Forward<S>> {
        let xp = coding::corrupt(x, self.coding.epsilon, rng)?;
        let pre = self.encode_plain(tape, leaves, xp)?;
        let z = tape.relu(&pre);
        let x_hat = self.decode_plain(tape, leaves, &z)?;
        Ok(Forward {
            x_hat,
            latent: z.val().cast(),
            mu: None,
            log_var: None,
            sae: None,
        })
    }

    fn forward_variational<R: Rng>(
        &self,
        tape: &mut Tape<S>,
        leaves: &[Var<S>],
        x: &Tensor<S>,
        rng: &mut R,
        opts: ForwardOpts,
    ) -> Result<Forward<S>> {
        let n = x.shape()[0];
        let n_z = self.dims.n_z;
        let xp = coding::corrupt(x, self.coding.epsilon, rng)?;
        let pre = self.encode_plain(tape, leaves, xp)?; // linear, width 2*n_z
        let mu = tape.slice_cols(&pre, 0, n_z)?;
        let log_var = tape.slice_cols(&pre, n_z, n_z)?;
        let z = if opts.sample_latent {
            let xi = Var::constant(sample_standard_normal(&[n, n_z], rng));
            reparameterize(tape, &mu, &log_var, &xi)?
        } else {
            mu.clone()
        };
        let x_hat = self.decode_plain(tape, leaves, &z)?;
        Ok(Forward {
            x_hat,
            latent: mu.val().cast(),
            mu: Some(mu),
            log_var: Some(log_var),
            sae: None,
        })
    }
}

/// `z = mu + exp(log_var / 2) * xi`.
pub fn reparameterize<S: Scalar>(
    tape: &mut Tape<S>,
    mu: &Var<S>,
    log_var: &Var<S>,
    xi: &Var<S>,
) -> Result<Var<S>> {
    let half = tape.scale(log_var, S::from_f64(0.5));
    let sigma = tape.exp(&half);
    let noise = tape.mul(&sigma, xi)?;
    tape.add(mu, &noise)
}

/// Standard-normal draws at f64 in row-major order.
pub fn sample_standard_normal<S: Scalar, R: Rng>(shape: &[usize], rng: &mut R) -> Tensor<S> {
    let n: usize = shape.iter().product();
    let data: Vec<S> = (0..n)
        .map(|_| S::from_f64(StandardNormal.sample(rng)))
        .collect();
    Tensor::from_vec(shape, data).unwrap()
}
