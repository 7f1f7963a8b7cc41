//! Reverse-mode gradient tape, rebuilt per forward pass.
//!
//! Ops execute eagerly and append a node describing how to push
//! gradients backward. Each node saves exactly what its backward rule
//! needs: linear ops keep their weights (a refcount bump) and their
//! input — as a nonzero-index list when the input is a binary spike
//! tensor — while the straight-through ops (spike, reset) and the leaky
//! recursions save nothing because their backward is linear. That keeps
//! a T-step unrolled tape to tens of megabytes instead of gigabytes.
//!
//! Values travel in [`Var`] handles (`Rc`-shared tensors plus an
//! optional node id). Dropping intermediate `Var`s frees their tensors
//! even though the tape still exists; the tape holds only backward
//! state.

use std::collections::HashMap;
use std::rc::Rc;

use crate::conv::{self, ConvGeom, SpikeIndex};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// A value produced on (or fed into) a tape. `id` is `None` for
/// constants and for everything in inference mode.
#[derive(Clone, Debug)]
pub struct Var<S> {
    val: Rc<Tensor<S>>,
    id: Option<usize>,
}

impl<S: Scalar> Var<S> {
    /// A constant input: participates in forward math, receives no
    /// gradient.
    pub fn constant(val: Tensor<S>) -> Self {
        Var { val: Rc::new(val), id: None }
    }

    pub fn val(&self) -> &Tensor<S> {
        &self.val
    }

    pub fn shape(&self) -> &[usize] {
        self.val.shape()
    }

    pub fn id(&self) -> Option<usize> {
        self.id
    }
}

enum SavedInput<S> {
    Dense(Rc<Tensor<S>>),
    Sparse(SpikeIndex),
}

enum Back<S> {
    Leaf,
    Add(usize, usize),
    AddLeft(usize),
    AddRight(usize),
    Sub { a: Option<usize>, b: Option<usize> },
    Scale(usize, S),
    AddScalar(usize),
    /// out = tau * prev + cur
    LeakyStep { prev: usize, cur: Option<usize>, tau: S },
    /// binary threshold, backward = identity (straight-through)
    SpikeSt(usize),
    /// reset-and-clamp, backward = identity (straight-through)
    ResetSt(usize),
    Relu { x: usize, out: Rc<Tensor<S>> },
    Exp { x: usize, out: Rc<Tensor<S>> },
    Mul { a: Option<usize>, b: Option<usize>, va: Rc<Tensor<S>>, vb: Rc<Tensor<S>> },
    Sum { x: usize, x_shape: Vec<usize> },
    SumSq { x: usize, vx: Rc<Tensor<S>> },
    SumAbs { x: usize, vx: Rc<Tensor<S>> },
    Reshape { x: usize, x_shape: Vec<usize> },
    SliceCols { x: usize, lo: usize, width: usize, n: usize, m: usize },
    Affine {
        x: Option<usize>,
        w: Option<usize>,
        b: Option<usize>,
        saved_x: SavedInput<S>,
        saved_w: Rc<Tensor<S>>,
        n: usize,
        i: usize,
        j: usize,
    },
    Conv {
        x: Option<usize>,
        w: Option<usize>,
        saved_x: SavedInput<S>,
        saved_w: Rc<Tensor<S>>,
        geom: ConvGeom,
    },
    Deconv {
        x: Option<usize>,
        w: Option<usize>,
        saved_x: SavedInput<S>,
        saved_w: Rc<Tensor<S>>,
        geom: ConvGeom,
    },
    /// x_hat = inv_s * max(0, max_t U(t)); `argmax` holds the winning
    /// window position per element, -1 for the virtual U(0)=0 entry.
    DecodeMax { u_ids: Vec<usize>, argmax: Vec<i32>, inv_s: S },
}

struct Node<S> {
    back: Back<S>,
    shape: Vec<usize>,
}

/// Reverse-mode tape. Build one per forward pass; `backward` consumes
/// nothing and can only be called on a scalar output.
pub struct Tape<S> {
    nodes: Vec<Node<S>>,
    grad_enabled: bool,
}

/// Gradients by node id after a backward sweep. Only leaves retain
/// their gradients; interior gradients are freed as the sweep passes.
#[derive(Debug)]
pub struct Grads<S> {
    slots: Vec<Option<Tensor<S>>>,
}

impl<S: Scalar> Grads<S> {
    pub fn get(&self, v: &Var<S>) -> Option<&Tensor<S>> {
        v.id.and_then(|id| self.slots.get(id).and_then(|s| s.as_ref()))
    }

    pub fn take(&mut self, v: &Var<S>) -> Option<Tensor<S>> {
        v.id.and_then(|id| self.slots.get_mut(id).and_then(|s| s.take()))
    }

    pub fn empty() -> Self {
        Grads { slots: Vec::new() }
    }
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), grad_enabled: true }
    }

    /// A tape that records nothing: ops run forward-only. Useful for
    /// evaluation passes where gradient state would only cost memory.
    pub fn new_inference() -> Self {
        Tape { nodes: Vec::new(), grad_enabled: false }
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    fn push(&mut self, back: Back<S>, shape: Vec<usize>) -> Option<usize> {
        self.nodes.push(Node { back, shape });
        Some(self.nodes.len() - 1)
    }

    fn wrap(&mut self, val: Tensor<S>, back: Option<Back<S>>) -> Var<S> {
        let id = match (self.grad_enabled, back) {
            (true, Some(b)) => self.push(b, val.shape().to_vec()),
            _ => None,
        };
        Var { val: Rc::new(val), id }
    }

    /// Registers an input tensor. With `requires_grad`, its gradient is
    /// retained by `backward`.
    pub fn leaf(&mut self, val: Rc<Tensor<S>>, requires_grad: bool) -> Var<S> {
        let id = if self.grad_enabled && requires_grad {
            self.push(Back::Leaf, val.shape().to_vec())
        } else {
            None
        };
        Var { val, id }
    }

    pub fn add(&mut self, a: &Var<S>, b: &Var<S>) -> Result<Var<S>> {
        let val = a.val.add(&b.val)?;
        let back = match (a.id, b.id) {
            (Some(x), Some(y)) => Some(Back::Add(x, y)),
            (Some(x), None) => Some(Back::AddLeft(x)),
            (None, Some(y)) => Some(Back::AddRight(y)),
            (None, None) => None,
        };
        Ok(self.wrap(val, back))
    }

    pub fn sub(&mut self, a: &Var<S>, b: &Var<S>) -> Result<Var<S>> {
        let val = a.val.sub(&b.val)?;
        let back = if a.id.is_some() || b.id.is_some() {
            Some(Back::Sub { a: a.id, b: b.id })
        } else {
            None
        };
        Ok(self.wrap(val, back))
    }

    pub fn scale(&mut self, a: &Var<S>, c: S) -> Var<S> {
        let val = a.val.scale(c);
        let back = a.id.map(|x| Back::Scale(x, c));
        self.wrap(val, back)
    }

    pub fn add_scalar(&mut self, a: &Var<S>, c: S) -> Var<S> {
        let val = a.val.map(|v| v + c);
        let back = a.id.map(Back::AddScalar);
        self.wrap(val, back)
    }

    pub fn mul(&mut self, a: &Var<S>, b: &Var<S>) -> Result<Var<S>> {
        let val = a.val.mul(&b.val)?;
        let back = if a.id.is_some() || b.id.is_some() {
            Some(Back::Mul { a: a.id, b: b.id, va: a.val.clone(), vb: b.val.clone() })
        } else {
            None
        };
        Ok(self.wrap(val, back))
    }

    /// `tau * prev + cur`, the Eq.-2/Eq.-7 style leaky recursion.
    pub fn leaky_step(&mut self, prev: &Var<S>, cur: &Var<S>, tau: S) -> Result<Var<S>> {
        prev.val.check_same_shape(&cur.val)?;
        let val = prev.val.zip_map(&cur.val, |p, c| tau * p + c)?;
        let back = match (prev.id, cur.id) {
            (Some(p), c) => Some(Back::LeakyStep { prev: p, cur: c, tau }),
            (None, Some(c)) => Some(Back::AddRight(c)), // tau*const + cur
            (None, None) => None,
        };
        Ok(self.wrap(val, back))
    }

    /// Binary threshold: 1 where `u >= omega`. Backward is identity
    /// (straight-through); the output tensor is marked binary so linear
    /// consumers take sparse paths.
    pub fn spike_st(&mut self, u: &Var<S>, omega: S) -> Var<S> {
        let val = u
            .val
            .map(|v| if v >= omega { S::one() } else { S::zero() })
            .mark_binary();
        let back = u.id.map(Back::SpikeSt);
        self.wrap(val, back)
    }

    /// Post-spike reset with a lower clamp: 0 where `u >= omega`,
    /// `-omega` where `u < -omega`, else `u`. Backward is identity.
    pub fn reset_st(&mut self, u: &Var<S>, omega: S) -> Var<S> {
        let val = u.val.map(|v| {
            if v >= omega {
                S::zero()
            } else if v < -omega {
                -omega
            } else {
                v
            }
        });
        let back = u.id.map(Back::ResetSt);
        self.wrap(val, back)
    }

    pub fn relu(&mut self, x: &Var<S>) -> Var<S> {
        let val = x.val.map(|v| if v > S::zero() { v } else { S::zero() });
        let out = Rc::new(val);
        let back = x.id.map(|id| Back::Relu { x: id, out: out.clone() });
        let id = match (self.grad_enabled, back) {
            (true, Some(b)) => self.push(b, out.shape().to_vec()),
            _ => None,
        };
        Var { val: out, id }
    }

    pub fn exp(&mut self, x: &Var<S>) -> Var<S> {
        let val = x.val.map(|v| v.exp());
        let out = Rc::new(val);
        let back = x.id.map(|id| Back::Exp { x: id, out: out.clone() });
        let id = match (self.grad_enabled, back) {
            (true, Some(b)) => self.push(b, out.shape().to_vec()),
            _ => None,
        };
        Var { val: out, id }
    }

    /// Scalar sum of all elements.
    pub fn sum(&mut self, x: &Var<S>) -> Var<S> {
        let val = Tensor::scalar(x.val.sum());
        let back = x.id.map(|id| Back::Sum { x: id, x_shape: x.shape().to_vec() });
        self.wrap(val, back)
    }

    /// Scalar sum of squared elements.
    pub fn sum_sq(&mut self, x: &Var<S>) -> Var<S> {
        let val = Tensor::scalar(x.val.data().iter().map(|&v| v * v).sum());
        let back = x.id.map(|id| Back::SumSq { x: id, vx: x.val.clone() });
        self.wrap(val, back)
    }

    /// Scalar sum of absolute values (subgradient 0 at 0).
    pub fn sum_abs(&mut self, x: &Var<S>) -> Var<S> {
        let val = Tensor::scalar(x.val.data().iter().map(|&v| v.abs()).sum());
        let back = x.id.map(|id| Back::SumAbs { x: id, vx: x.val.clone() });
        self.wrap(val, back)
    }

    pub fn reshape(&mut self, x: &Var<S>, shape: &[usize]) -> Result<Var<S>> {
        let val = x.val.reshaped(shape)?;
        let back = x.id.map(|id| Back::Reshape { x: id, x_shape: x.shape().to_vec() });
        Ok(self.wrap(val, back))
    }

    /// Columns `[lo, lo+width)` of a `[n, m]` tensor.
    pub fn slice_cols(&mut self, x: &Var<S>, lo: usize, width: usize) -> Result<Var<S>> {
        let sh = x.shape();
        if sh.len() != 2 || lo + width > sh[1] {
            return Err(Error::Dim(format!(
                "slice_cols({lo}, {width}) on shape {sh:?}"
            )));
        }
        let (n, m) = (sh[0], sh[1]);
        let mut data = Vec::with_capacity(n * width);
        for row in 0..n {
            data.extend_from_slice(&x.val.data()[row * m + lo..row * m + lo + width]);
        }
        let val = Tensor::from_vec(&[n, width], data)?;
        let back = x.id.map(|id| Back::SliceCols { x: id, lo, width, n, m });
        Ok(self.wrap(val, back))
    }

    /// `x @ w (+ bias)` with `x: [n, i]`, `w: [i, j]`.
    pub fn affine(
        &mut self,
        x: &Var<S>,
        w: &Var<S>,
        bias: Option<&Var<S>>,
    ) -> Result<Var<S>> {
        let (xs, ws) = (x.shape(), w.shape());
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[0] {
            return Err(Error::Dim(format!("affine: input {xs:?} vs weights {ws:?}")));
        }
        let (n, i, j) = (xs[0], xs[1], ws[1]);
        if let Some(b) = bias {
            if b.shape() != [j] {
                return Err(Error::Dim(format!(
                    "affine: bias {:?}, expected [{j}]",
                    b.shape()
                )));
            }
        }
        let bias_slice = bias.map(|b| b.val.data());
        let (data, saved_x) = if x.val.is_binary() {
            let idx = SpikeIndex::from_binary(&x.val);
            let y = conv::affine_fwd_sparse(&idx, w.val.data(), j, bias_slice);
            (y, SavedInput::Sparse(idx))
        } else {
            let y = conv::affine_fwd_dense(x.val.data(), n, i, w.val.data(), j, bias_slice);
            (y, SavedInput::Dense(x.val.clone()))
        };
        let val = Tensor::from_vec(&[n, j], data)?;
        let any_grad = x.id.is_some() || w.id.is_some() || bias.and_then(|b| b.id).is_some();
        let back = any_grad.then(|| Back::Affine {
            x: x.id,
            w: w.id,
            b: bias.and_then(|b| b.id),
            saved_x,
            saved_w: w.val.clone(),
            n,
            i,
            j,
        });
        Ok(self.wrap(val, back))
    }

    /// Valid cross-correlation, stride 1; kernel `[c_out, c_in, k, k]`.
    pub fn conv2d(&mut self, x: &Var<S>, w: &Var<S>) -> Result<Var<S>> {
        let g = ConvGeom::for_conv(x.shape(), w.shape())?;
        let (data, saved_x) = if x.val.is_binary() {
            let idx = SpikeIndex::from_binary(&x.val);
            let y = conv::conv_fwd_sparse(&idx, w.val.data(), g);
            (y, SavedInput::Sparse(idx))
        } else {
            let y = conv::conv_fwd_dense(x.val.data(), w.val.data(), g);
            (y, SavedInput::Dense(x.val.clone()))
        };
        let val = Tensor::from_vec(&[g.n, g.c_out, g.h_out(), g.w_out()], data)?;
        let any_grad = x.id.is_some() || w.id.is_some();
        let back = any_grad.then(|| Back::Conv {
            x: x.id,
            w: w.id,
            saved_x,
            saved_w: w.val.clone(),
            geom: g,
        });
        Ok(self.wrap(val, back))
    }

    /// Transposed convolution, stride 1; kernel `[c_in, c_out, k, k]`.
    pub fn deconv2d(&mut self, x: &Var<S>, w: &Var<S>) -> Result<Var<S>> {
        let g = ConvGeom::for_deconv(x.shape(), w.shape())?;
        let (data, saved_x) = if x.val.is_binary() {
            let idx = SpikeIndex::from_binary(&x.val);
            let y = conv::deconv_fwd_sparse(&idx, w.val.data(), g);
            (y, SavedInput::Sparse(idx))
        } else {
            let y = conv::deconv_fwd_dense(x.val.data(), w.val.data(), g);
            (y, SavedInput::Dense(x.val.clone()))
        };
        let val = Tensor::from_vec(&[g.n, g.c_in, g.h, g.w], data)?;
        let any_grad = x.id.is_some() || w.id.is_some();
        let back = any_grad.then(|| Back::Deconv {
            x: x.id,
            w: w.id,
            saved_x,
            saved_w: w.val.clone(),
            geom: g,
        });
        Ok(self.wrap(val, back))
    }

    /// `(1/s) * max(0, max_t U(t))` elementwise over the decode window,
    /// with ties (including against the virtual zero) resolved toward
    /// the earliest entry. The subgradient routes to the winning step.
    pub fn decode_max(&mut self, u_trace: &[Var<S>], s: S) -> Result<Var<S>> {
        if u_trace.is_empty() {
            return Err(Error::Contract("decode_max: empty window".into()));
        }
        let shape = u_trace[0].shape().to_vec();
        for u in u_trace {
            if u.shape() != shape {
                return Err(Error::Dim(format!(
                    "decode_max: mixed shapes {:?} vs {:?}",
                    shape,
                    u.shape()
                )));
            }
        }
        let numel = u_trace[0].val.numel();
        let inv_s = S::one() / s;
        let mut best = vec![S::zero(); numel];
        let mut arg = vec![-1i32; numel];
        for (t, u) in u_trace.iter().enumerate() {
            for (e, &v) in u.val.data().iter().enumerate() {
                if v > best[e] {
                    best[e] = v;
                    arg[e] = t as i32;
                }
            }
        }
        for b in &mut best {
            *b = *b * inv_s;
        }
        let val = Tensor::from_vec(&shape, best)?;
        let any_grad = u_trace.iter().any(|u| u.id.is_some());
        let back = any_grad.then(|| Back::DecodeMax {
            u_ids: u_trace.iter().map(|u| u.id.unwrap_or(usize::MAX)).collect(),
            argmax: arg,
            inv_s,
        });
        Ok(self.wrap(val, back))
    }

    /// Reverse sweep from a scalar loss. Returns gradients for leaf
    /// nodes; interior gradients are freed as soon as they are consumed.
    pub fn backward(&self, loss: &Var<S>) -> Result<Grads<S>> {
        if loss.val.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward: loss must be scalar, got shape {:?}",
                loss.shape()
            )));
        }
        let Some(loss_id) = loss.id else {
            // Loss is detached from every parameter: all gradients zero.
            return Ok(Grads::empty());
        };
        let mut slots: Vec<Option<Tensor<S>>> = Vec::new();
        slots.resize_with(self.nodes.len(), || None);
        slots[loss_id] = Some(Tensor::scalar(S::one()));
        // Per-sweep caches of transposed / flipped weights, keyed by the
        // weight tensor's address (the same Rc is saved by all T step
        // nodes of a layer).
        let mut wt_cache: HashMap<usize, Vec<S>> = HashMap::new();
        let mut kf_cache: HashMap<usize, Vec<S>> = HashMap::new();

        for id in (0..=loss_id).rev() {
            if slots[id].is_none() {
                continue;
            }
            let g = match self.nodes[id].back {
                Back::Leaf => continue, // retained for the caller
                _ => slots[id].take().unwrap(),
            };
            match &self.nodes[id].back {
                Back::Leaf => unreachable!(),
                Back::Add(a, b) => {
                    acc(&mut slots, *b, g.clone())?;
                    acc(&mut slots, *a, g)?;
                }
                Back::AddLeft(a) => acc(&mut slots, *a, g)?,
                Back::AddRight(b) => acc(&mut slots, *b, g)?,
                Back::Sub { a, b } => {
                    if let Some(b) = b {
                        acc(&mut slots, *b, g.scale(-S::one()))?;
                    }
                    if let Some(a) = a {
                        acc(&mut slots, *a, g)?;
                    }
                }
                Back::Scale(a, c) => acc(&mut slots, *a, g.scale(*c))?,
                Back::AddScalar(a) => acc(&mut slots, *a, g)?,
                Back::LeakyStep { prev, cur, tau } => {
                    if let Some(c) = cur {
                        acc(&mut slots, *c, g.clone())?;
                    }
                    acc(&mut slots, *prev, g.scale(*tau))?;
                }
                Back::SpikeSt(u) | Back::ResetSt(u) => acc(&mut slots, *u, g)?,
                Back::Relu { x, out } => {
                    let dg = g.zip_map(out, |gv, ov| {
                        if ov > S::zero() {
                            gv
                        } else {
                            S::zero()
                        }
                    })?;
                    acc(&mut slots, *x, dg)?;
                }
                Back::Exp { x, out } => acc(&mut slots, *x, g.mul(out)?)?,
                Back::Mul { a, b, va, vb } => {
                    if let Some(b) = b {
                        acc(&mut slots, *b, g.mul(va)?)?;
                    }
                    if let Some(a) = a {
                        acc(&mut slots, *a, g.mul(vb)?)?;
                    }
                }
                Back::Sum { x, x_shape } => {
                    acc(&mut slots, *x, Tensor::filled(x_shape, g.item()))?;
                }
                Back::SumSq { x, vx } => {
                    let two_g = g.item() + g.item();
                    acc(&mut slots, *x, vx.scale(two_g))?;
                }
                Back::SumAbs { x, vx } => {
                    let gv = g.item();
                    let dg = vx.map(|v| {
                        if v > S::zero() {
                            gv
                        } else if v < S::zero() {
                            -gv
                        } else {
                            S::zero()
                        }
                    });
                    acc(&mut slots, *x, dg)?;
                }
                Back::Reshape { x, x_shape } => {
                    acc(&mut slots, *x, g.reshaped(x_shape)?)?;
                }
                Back::SliceCols { x, lo, width, n, m } => {
                    let mut dx = Tensor::zeros(&[*n, *m]);
                    {
                        let d = dx.data_mut();
                        let gs = g.data();
                        for row in 0..*n {
                            d[row * m + lo..row * m + lo + width]
                                .copy_from_slice(&gs[row * width..(row + 1) * width]);
                        }
                    }
                    acc(&mut slots, *x, dx)?;
                }
                Back::Affine { x, w, b, saved_x, saved_w, n, i, j } => {
                    if let Some(b) = b {
                        let mut db = Tensor::zeros(&[*j]);
                        let d = db.data_mut();
                        for row in 0..*n {
                            for (dv, &gv) in d.iter_mut().zip(&g.data()[row * j..(row + 1) * j]) {
                                *dv += gv;
                            }
                        }
                        acc(&mut slots, *b, db)?;
                    }
                    if let Some(w) = w {
                        match saved_x {
                            SavedInput::Sparse(idx) => {
                                let slot = slots[*w]
                                    .get_or_insert_with(|| Tensor::zeros(&[*i, *j]));
                                conv::affine_bwd_weight_sparse(
                                    idx,
                                    g.data(),
                                    *j,
                                    slot.data_mut(),
                                );
                            }
                            SavedInput::Dense(xv) => {
                                let dw = conv::affine_bwd_weight_dense(
                                    xv.data(),
                                    *n,
                                    *i,
                                    g.data(),
                                    *j,
                                );
                                acc(&mut slots, *w, Tensor::from_vec(&[*i, *j], dw)?)?;
                            }
                        }
                    }
                    if let Some(x) = x {
                        let wt = wt_cache
                            .entry(Rc::as_ptr(saved_w) as usize)
                            .or_insert_with(|| conv::transpose(saved_w.data(), *i, *j));
                        let dx = conv::matmul(g.data(), *n, *j, wt, *i);
                        acc(&mut slots, *x, Tensor::from_vec(&[*n, *i], dx)?)?;
                    }
                }
                Back::Conv { x, w, saved_x, saved_w, geom } => {
                    if let Some(w) = w {
                        let dk = match saved_x {
                            SavedInput::Sparse(idx) => {
                                conv::conv_bwd_kernel_sparse(idx, g.data(), *geom)
                            }
                            SavedInput::Dense(xv) => {
                                conv::conv_bwd_kernel_dense(xv.data(), g.data(), *geom)
                            }
                        };
                        let sh = [geom.c_out, geom.c_in, geom.k, geom.k];
                        acc(&mut slots, *w, Tensor::from_vec(&sh, dk)?)?;
                    }
                    if let Some(x) = x {
                        let kf = kf_cache
                            .entry(Rc::as_ptr(saved_w) as usize)
                            .or_insert_with(|| {
                                conv::flip_swap_kernel(
                                    saved_w.data(),
                                    geom.c_out,
                                    geom.c_in,
                                    geom.k,
                                )
                            });
                        let dx = conv::conv_bwd_data(g.data(), kf, *geom);
                        let sh = [geom.n, geom.c_in, geom.h, geom.w];
                        acc(&mut slots, *x, Tensor::from_vec(&sh, dx)?)?;
                    }
                }
                Back::Deconv { x, w, saved_x, saved_w, geom } => {
                    if let Some(w) = w {
                        let dk = match saved_x {
                            SavedInput::Sparse(idx) => {
                                conv::deconv_bwd_kernel_sparse(idx, g.data(), *geom)
                            }
                            SavedInput::Dense(xv) => {
                                conv::deconv_bwd_kernel_dense(xv.data(), g.data(), *geom)
                            }
                        };
                        let sh = [geom.c_out, geom.c_in, geom.k, geom.k];
                        acc(&mut slots, *w, Tensor::from_vec(&sh, dk)?)?;
                    }
                    if let Some(x) = x {
                        let dx = conv::deconv_bwd_data(g.data(), saved_w.data(), *geom);
                        let sh = [geom.n, geom.c_out, geom.h_out(), geom.w_out()];
                        acc(&mut slots, *x, Tensor::from_vec(&sh, dx)?)?;
                    }
                }
                Back::DecodeMax { u_ids, argmax, inv_s } => {
                    // Group per winning step, then accumulate each once.
                    let mut per_t: HashMap<usize, Tensor<S>> = HashMap::new();
                    let shape = self.nodes[id].shape.clone();
                    for (e, &t) in argmax.iter().enumerate() {
                        if t < 0 {
                            continue; // virtual U(0): no gradient
                        }
                        let uid = u_ids[t as usize];
                        if uid == usize::MAX {
                            continue; // that step was a constant
                        }
                        let entry = per_t
                            .entry(uid)
                            .or_insert_with(|| Tensor::zeros(&shape));
                        entry.data_mut()[e] = g.data()[e] * *inv_s;
                    }
                    for (uid, du) in per_t {
                        acc(&mut slots, uid, du)?;
                    }
                }
            }
        }
        Ok(Grads { slots })
    }
}

fn acc<S: Scalar>(slots: &mut [Option<Tensor<S>>], id: usize, g: Tensor<S>) -> Result<()> {
    match &mut slots[id] {
        Some(t) => t.add_assign(&g)?,
        None => slots[id] = Some(g),
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn leaf(tape: &mut Tape<f64>, shape: &[usize], data: Vec<f64>) -> Var<f64> {
        tape.leaf(Rc::new(Tensor::from_vec(shape, data).unwrap()), true)
    }

    #[test]
    fn sum_of_squares_gradient() {
        let mut tape = Tape::new();
        let w = leaf(&mut tape, &[2], vec![1.0, -2.0]);
        let loss = tape.sum_sq(&w);
        assert_eq!(loss.val().item(), 5.0);
        let grads = tape.backward(&loss).unwrap();
        assert_eq!(grads.get(&w).unwrap().data(), &[2.0, -4.0]);
    }

    #[test]
    fn detached_loss_has_no_gradients() {
        let mut tape = Tape::new();
        let w = leaf(&mut tape, &[2], vec![1.0, 2.0]);
        let c = Var::constant(Tensor::scalar(7.0));
        let loss = tape.sum(&c);
        let grads = tape.backward(&loss).unwrap();
        assert!(grads.get(&w).is_none());
    }

    #[test]
    fn affine_identity_and_hand_case() {
        let mut tape = Tape::new();
        let x = Var::constant(Tensor::from_vec(&[1, 2], vec![1.0, 2.0]).unwrap());
        let w_id = leaf(&mut tape, &[2, 2], vec![1.0, 0.0, 0.0, 1.0]);
        let y = tape.affine(&x, &w_id, None).unwrap();
        assert_eq!(y.val().data(), &[1.0, 2.0]);

        let w = leaf(&mut tape, &[2, 1], vec![3.0, 4.0]);
        let b = leaf(&mut tape, &[1], vec![1.0]);
        let y = tape.affine(&x, &w, Some(&b)).unwrap();
        assert_eq!(y.val().data(), &[12.0]);

        // d(sum y)/db = 1, d/dw = x^T
        let loss = tape.sum(&y);
        let grads = tape.backward(&loss).unwrap();
        assert_eq!(grads.get(&b).unwrap().data(), &[1.0]);
        assert_eq!(grads.get(&w).unwrap().data(), &[1.0, 2.0]);
    }

    #[test]
    fn leaky_recursion_backpropagates_tau_powers() {
        // u1 = w; u2 = tau*u1 + w; u3 = tau*u2 + w
        // d(u3)/dw = 1 + tau + tau^2
        let tau = 0.9;
        let mut tape = Tape::new();
        let w = leaf(&mut tape, &[1], vec![0.5]);
        let u1 = w.clone();
        let u2 = tape.leaky_step(&u1, &w, tau).unwrap();
        let u3 = tape.leaky_step(&u2, &w, tau).unwrap();
        let loss = tape.sum(&u3);
        let grads = tape.backward(&loss).unwrap();
        let expect = 1.0 + tau + tau * tau;
        assert!((grads.get(&w).unwrap().data()[0] - expect).abs() < 1e-12);
    }

    #[test]
    fn spike_and_reset_are_straight_through() {
        let mut tape = Tape::new();
        let u = leaf(&mut tape, &[4], vec![1.5, 0.3, -0.2, -3.0]);
        let phi = tape.spike_st(&u, 1.0);
        assert_eq!(phi.val().data(), &[1.0, 0.0, 0.0, 0.0]);
        assert!(phi.val().is_binary());
        let u_post = tape.reset_st(&u, 1.0);
        assert_eq!(u_post.val().data(), &[0.0, 0.3, -0.2, -1.0]);
        let s1 = tape.sum(&phi);
        let s2 = tape.sum(&u_post);
        let loss = tape.add(&s1, &s2).unwrap();
        let grads = tape.backward(&loss).unwrap();
        // one unit of gradient through each path, identity backward
        assert_eq!(grads.get(&u).unwrap().data(), &[2.0, 2.0, 2.0, 2.0]);
    }

    #[test]
    fn decode_max_hand_case_and_subgradient_routing() {
        let mut tape = Tape::new();
        let u1 = leaf(&mut tape, &[1, 1], vec![0.5]);
        let u2 = leaf(&mut tape, &[1, 1], vec![1.2]);
        let u3 = leaf(&mut tape, &[1, 1], vec![0.9]);
        let xh = tape
            .decode_max(&[u1.clone(), u2.clone(), u3.clone()], 0.2)
            .unwrap();
        assert!((xh.val().item() - 6.0).abs() < 1e-12);
        let loss = tape.sum(&xh);
        let grads = tape.backward(&loss).unwrap();
        assert!(grads.get(&u1).is_none());
        assert!((grads.get(&u2).unwrap().item() - 5.0).abs() < 1e-12); // 1/s
        assert!(grads.get(&u3).is_none());
    }

    #[test]
    fn decode_max_all_negative_floors_at_zero() {
        let mut tape = Tape::new();
        let u1 = leaf(&mut tape, &[1, 2], vec![-0.5, -0.1]);
        let xh = tape.decode_max(&[u1.clone()], 0.2).unwrap();
        assert_eq!(xh.val().data(), &[0.0, 0.0]);
        let loss = tape.sum(&xh);
        let grads = tape.backward(&loss).unwrap();
        assert!(grads.get(&u1).is_none()); // virtual zero won everywhere
    }

    #[test]
    fn decode_max_tie_goes_to_earliest() {
        let mut tape = Tape::new();
        let u1 = leaf(&mut tape, &[1, 1], vec![0.8]);
        let u2 = leaf(&mut tape, &[1, 1], vec![0.8]);
        let xh = tape.decode_max(&[u1.clone(), u2.clone()], 0.2).unwrap();
        let loss = tape.sum(&xh);
        let grads = tape.backward(&loss).unwrap();
        assert!(grads.get(&u1).is_some());
        assert!(grads.get(&u2).is_none());
    }

    #[test]
    fn slice_cols_splits_and_scatters_gradient() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, &[2, 4], vec![1., 2., 3., 4., 5., 6., 7., 8.]);
        let right = tape.slice_cols(&x, 2, 2).unwrap();
        assert_eq!(right.val().data(), &[3., 4., 7., 8.]);
        let loss = tape.sum_sq(&right);
        let grads = tape.backward(&loss).unwrap();
        assert_eq!(
            grads.get(&x).unwrap().data(),
            &[0., 0., 6., 8., 0., 0., 14., 16.]
        );
    }

    #[test]
    fn inference_tape_records_nothing() {
        let mut tape = Tape::<f64>::new_inference();
        let w = tape.leaf(
            Rc::new(Tensor::from_vec(&[2], vec![1.0, 2.0]).unwrap()),
            true,
        );
        let y = tape.sum_sq(&w);
        assert_eq!(y.val().item(), 5.0);
        assert_eq!(tape.num_nodes(), 0);
        assert!(y.id().is_none());
    }

    #[test]
    fn backward_requires_scalar_loss() {
        let mut tape = Tape::new();
        let w = leaf(&mut tape, &[2], vec![1.0, 2.0]);
        let err = tape.backward(&w).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn sparse_and_dense_affine_agree_on_binary_input() {
        let mut tape = Tape::new();
        let spikes = Var::constant(
            Tensor::from_vec(&[2, 3], vec![1.0, 0.0, 1.0, 0.0, 0.0, 1.0])
                .unwrap()
                .mark_binary(),
        );
        let dense = Var::constant(
            Tensor::from_vec(&[2, 3], vec![1.0, 0.0, 1.0, 0.0, 0.0, 1.0]).unwrap(),
        );
        let w = leaf(&mut tape, &[3, 2], vec![0.5, -1.0, 2.0, 0.25, -0.75, 3.0]);
        let ys = tape.affine(&spikes, &w, None).unwrap();
        let yd = tape.affine(&dense, &w, None).unwrap();
        assert_eq!(ys.val().data(), yd.val().data());
        // gradients agree too
        let ls = tape.sum_sq(&ys);
        let gs = tape.backward(&ls).unwrap();
        let mut tape2 = Tape::new();
        let w2 = leaf(&mut tape2, &[3, 2], vec![0.5, -1.0, 2.0, 0.25, -0.75, 3.0]);
        let yd2 = tape2.affine(&dense, &w2, None).unwrap();
        let ld = tape2.sum_sq(&yd2);
        let gd = tape2.backward(&ld).unwrap();
        let a = gs.get(&w).unwrap();
        let b = gd.get(&w2).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
