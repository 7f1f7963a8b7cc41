//! Leaky integrate-and-fire dynamics on the tape.
//!
//! Per step: `u(t) = tau * u_post(t-1) + w_in(t)`; a spike fires where
//! `u >= omega`; the post-spike potential resets to 0 on firing and is
//! clamped at `-omega` from below; the cumulative trace follows
//! `U(t) = tau * U(t-1) + u(t)` with the pre-reset `u`. Threshold,
//! reset and clamp all backpropagate as identity (straight-through),
//! while both leaky recursions differentiate exactly, so the recorded
//! gradient graph is the "identity twin" of the binary forward pass.
//! [`SpikeMode::IdentityTwin`] runs that twin directly (no
//! thresholding), which is what finite-difference checks validate.

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Scalar;

#[derive(Clone, Copy, Debug)]
pub struct LifParams<S> {
    pub tau: S,
    pub omega: S,
}

impl<S: Scalar> LifParams<S> {
    pub fn new(tau: S, omega: S) -> Result<Self> {
        if !(tau >= S::zero() && tau <= S::one()) {
            return Err(Error::Config(format!("lif tau must be in [0, 1], got {tau}")));
        }
        if !(omega > S::zero()) {
            return Err(Error::Config(format!("lif omega must be > 0, got {omega}")));
        }
        Ok(LifParams { tau, omega })
    }
}

impl<S: Scalar> Default for LifParams<S> {
    fn default() -> Self {
        LifParams { tau: S::from_f64(0.99), omega: S::one() }
    }
}

/// Whether spiking layers threshold (training/eval forward) or pass
/// membrane potentials straight through (the differentiable twin used
/// by gradient checks).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SpikeMode {
    Binary,
    IdentityTwin,
}

/// Carry-over state between steps. `None` components mean the zero
/// initial condition (u(0) = U(0) = 0) without materializing zeros.
#[derive(Clone, Default)]
pub struct LifState<S> {
    u_post: Option<Var<S>>,
    u_cum: Option<Var<S>>,
}

impl<S: Scalar> LifState<S> {
    pub fn fresh() -> Self {
        LifState { u_post: None, u_cum: None }
    }

    pub fn u_post(&self) -> Option<&Var<S>> {
        self.u_post.as_ref()
    }

    pub fn u_cum(&self) -> Option<&Var<S>> {
        self.u_cum.as_ref()
    }
}

/// One step's outputs: spikes, pre-reset potential, cumulative trace,
/// and the state to feed the next step.
pub struct LifStep<S> {
    pub phi: Var<S>,
    pub u: Var<S>,
    pub u_cum: Var<S>,
    pub state: LifState<S>,
}

pub fn lif_step<S: Scalar>(
    tape: &mut Tape<S>,
    state: LifState<S>,
    w_in: &Var<S>,
    p: &LifParams<S>,
    mode: SpikeMode,
) -> Result<LifStep<S>> {
    let u = match &state.u_post {
        Some(prev) => tape.leaky_step(prev, w_in, p.tau)?,
        None => w_in.clone(),
    };
    let (phi, u_post) = match mode {
        SpikeMode::Binary => (tape.spike_st(&u, p.omega), tape.reset_st(&u, p.omega)),
        SpikeMode::IdentityTwin => (u.clone(), u.clone()),
    };
    let u_cum = match &state.u_cum {
        Some(prev) => tape.leaky_step(prev, &u, p.tau)?,
        None => u.clone(),
    };
    Ok(LifStep {
        phi,
        u: u.clone(),
        u_cum: u_cum.clone(),
        state: LifState { u_post: Some(u_post), u_cum: Some(u_cum) },
    })
}

/// Full temporal record of one layer run.
#[derive(Debug)]
pub struct LifTrace<S> {
    /// spikes per step (or potentials, in twin mode)
    pub phi: Vec<Var<S>>,
    /// pre-reset membrane potential per step
    pub u: Vec<Var<S>>,
    /// cumulative leaky potential per step
    pub u_cum: Vec<Var<S>>,
}

/// Applies `linear` (the layer's affine/conv/deconv with its weights)
/// then the LIF step at every t, from the zero initial state.
pub fn run_lif_layer<S: Scalar, F>(
    tape: &mut Tape<S>,
    inputs: &[Var<S>],
    mut linear: F,
    p: &LifParams<S>,
    mode: SpikeMode,
) -> Result<LifTrace<S>>
where
    F: FnMut(&mut Tape<S>, &Var<S>) -> Result<Var<S>>,
{
    if inputs.is_empty() {
        return Err(Error::Contract("run_lif_layer: T must be >= 1".into()));
    }
    let mut state = LifState::fresh();
    let mut trace = LifTrace {
        phi: Vec::with_capacity(inputs.len()),
        u: Vec::with_capacity(inputs.len()),
        u_cum: Vec::with_capacity(inputs.len()),
    };
    for x in inputs {
        let w_in = linear(tape, x)?;
        let step = lif_step(tape, state, &w_in, p, mode)?;
        trace.phi.push(step.phi);
        trace.u.push(step.u);
        trace.u_cum.push(step.u_cum);
        state = step.state;
    }
    Ok(trace)
}
