//! Tape-based reverse-mode differentiation.
//!
//! A [`Tape`] records every op of one forward pass. Values are immutable once
//! pushed; [`Tape::backward`] walks the record in reverse and returns the
//! gradient of a scalar w.r.t. every node that requires one. Parameters are
//! bound lazily from a [`ParamStore`]: the first use of a [`ParamId`] creates a
//! leaf, later uses reuse it, so shared weights accumulate gradient from every
//! call site into one slot.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::numcore::kernels::{self, Conv1dGeom, Conv2dGeom, NormLayout};
use crate::numcore::params::{ParamId, ParamStore};
use crate::numcore::tensor::Tensor;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct VarId(usize);

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    Conv1d {
        x: VarId,
        w: VarId,
        b: Option<VarId>,
        geom: Conv1dGeom,
    },
    ConvTranspose1d {
        x: VarId,
        w: VarId,
        b: Option<VarId>,
        stride: usize,
        padding: usize,
    },
    Conv2d {
        x: VarId,
        w: VarId,
        b: Option<VarId>,
        geom: Conv2dGeom,
    },
    LayerNorm {
        x: VarId,
        gain: VarId,
        bias: VarId,
        layout: NormLayout,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    GlobalLayerNorm {
        x: VarId,
        gain: VarId,
        bias: VarId,
        xhat: Vec<T>,
        inv_std: T,
    },
    Relu(VarId),
    Elu {
        x: VarId,
        alpha: T,
    },
    Prelu {
        x: VarId,
        slope: VarId,
    },
    Linear {
        x: VarId,
        w: VarId,
        b: Option<VarId>,
    },
    MeanPoolTime(VarId),
    Add(VarId, VarId),
    Mul(VarId, VarId),
    Scale(VarId, T),
    ChannelAffine {
        x: VarId,
        scale: VarId,
        shift: VarId,
    },
    BroadcastTime(VarId),
    Concat(Vec<VarId>),
    Select {
        x: VarId,
        index: usize,
    },
    Reshape(VarId),
    FitLength {
        x: VarId,
        len_in: usize,
    },
    Sum(VarId),
    SiSdr {
        est: VarId,
        est_c: Vec<T>,
        target_c: Vec<T>,
        proj: T,
        denom: T,
        p_signal: T,
        p_noise: T,
        eps: T,
    },
    CrossEntropy {
        logits: VarId,
        class: usize,
        probs: Vec<T>,
    },
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Gradients produced by one backward pass.
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
    shapes: Vec<Vec<usize>>,
    params: Vec<(ParamId, VarId)>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient w.r.t. `v`, or `None` when `v` does not influence the output
    /// or does not require a gradient.
    pub fn wrt(&self, v: VarId) -> Option<Tensor<T>> {
        self.grads[v.0]
            .as_ref()
            .map(|g| Tensor::from_parts(self.shapes[v.0].clone(), g.clone()))
    }

    /// Gradient for every parameter bound on the tape (zeros when the
    /// parameter was bound but did not influence the output).
    pub fn params(&self) -> Vec<(ParamId, Tensor<T>)> {
        self.params
            .iter()
            .map(|&(pid, v)| {
                let g = self.grads[v.0]
                    .clone()
                    .unwrap_or_else(|| vec![T::zero(); self.shapes[v.0].iter().product()]);
                (pid, Tensor::from_parts(self.shapes[v.0].clone(), g))
            })
            .collect()
    }
}

pub struct Tape<'p, T: Scalar> {
    store: Option<&'p ParamStore<T>>,
    nodes: Vec<Node<T>>,
    bound: HashMap<ParamId, VarId>,
    bound_order: Vec<(ParamId, VarId)>,
}

impl<T: Scalar> Default for Tape<'_, T> {
    fn default() -> Self {
        Tape {
            store: None,
            nodes: Vec::new(),
            bound: HashMap::new(),
            bound_order: Vec::new(),
        }
    }
}

impl<'p, T: Scalar> Tape<'p, T> {
    pub fn new(store: &'p ParamStore<T>) -> Self {
        Tape {
            store: Some(store),
            ..Default::default()
        }
    }

    /// A tape with no parameter store (inputs and constants only).
    pub fn detached() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: VarId) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: VarId) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: VarId) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Smallest `|x|` over all inputs of ReLU and PReLU nodes, i.e. the
    /// distance of the current point from the nearest kink.
    pub fn kink_margin(&self) -> Option<T> {
        self.nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::Relu(x) | Op::Prelu { x, .. } => Some(x),
                _ => None,
            })
            .flat_map(|x| self.nodes[x.0].value.data().iter().map(|v| v.abs()))
            .reduce(T::min)
    }

    /// Leaf that receives a gradient.
    pub fn input(&mut self, value: Tensor<T>) -> VarId {
        self.push_leaf(value, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> VarId {
        self.push_leaf(value, false)
    }

    fn push_leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> VarId {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        VarId(self.nodes.len() - 1)
    }

    fn store(&self) -> &'p ParamStore<T> {
        self.store.expect("tape was created without a parameter store")
    }

    /// Binds a parameter. Repeated calls with the same id return the same
    /// node, so every use site contributes to one gradient.
    pub fn param(&mut self, id: ParamId) -> VarId {
        if let Some(&v) = self.bound.get(&id) {
            return v;
        }
        let value = self.store().value(id).clone();
        let v = self.push_leaf(value, true);
        self.bound.insert(id, v);
        self.bound_order.push((id, v));
        v
    }

    /// Binds a parameter's current value as a constant (no gradient flows).
    pub fn param_detached(&mut self, id: ParamId) -> VarId {
        let value = self.store().value(id).clone();
        self.constant(value)
    }

    /// Copies `v` into a constant leaf, cutting the gradient path.
    pub fn detach(&mut self, v: VarId) -> VarId {
        let value = self.value(v).clone();
        self.constant(value)
    }

    pub fn opt_param(&mut self, id: Option<ParamId>) -> Option<VarId> {
        id.map(|id| self.param(id))
    }

    fn push(&mut self, name: &'static str, value: Tensor<T>, op: Op<T>, inputs: &[VarId]) -> Result<VarId> {
        if !value.all_finite() {
            return Err(Error::NonFinite { op: name });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(VarId(self.nodes.len() - 1))
    }

    fn expect_rank(&self, op: &'static str, v: VarId, rank: usize) -> Result<&[usize]> {
        let s = self.shape(v);
        if s.len() != rank {
            return Err(Error::dim(op, format!("expected rank {rank}, got shape {s:?}")));
        }
        Ok(s)
    }

    fn check_bias(&self, op: &'static str, b: Option<VarId>, len: usize) -> Result<()> {
        if let Some(b) = b {
            if self.shape(b) != [len] {
                return Err(Error::dim(op, format!("bias shape {:?}, want [{len}]", self.shape(b))));
            }
        }
        Ok(())
    }

    // ---- convolutions ---------------------------------------------------

    /// `x: [C_in, T]`, `w: [C_out, C_in/groups, K]`.
    pub fn conv1d(&mut self, x: VarId, w: VarId, b: Option<VarId>, geom: Conv1dGeom) -> Result<VarId> {
        const OP: &str = "conv1d";
        let &[cin, t] = self.expect_rank(OP, x, 2)? else { unreachable!() };
        let &[cout, cin_g, k] = self.expect_rank(OP, w, 3)? else { unreachable!() };
        if geom.stride == 0 || geom.dilation == 0 || geom.groups == 0 {
            return Err(Error::dim(OP, "stride, dilation and groups must be positive"));
        }
        if cin % geom.groups != 0 || cout % geom.groups != 0 || cin / geom.groups != cin_g {
            return Err(Error::dim(
                OP,
                format!("input channels {cin}, weight {:?}, groups {}", self.shape(w), geom.groups),
            ));
        }
        self.check_bias(OP, b, cout)?;
        let tout = geom
            .out_len(t, k)
            .ok_or_else(|| Error::dim(OP, format!("input length {t} shorter than kernel span")))?;
        let y = kernels::conv1d_forward(
            self.value(x).data(),
            cin,
            t,
            self.value(w).data(),
            cout,
            k,
            b.map(|b| self.value(b).data()),
            &geom,
            tout,
        );
        let mut ins = vec![x, w];
        ins.extend(b);
        self.push(OP, Tensor::from_parts(vec![cout, tout], y), Op::Conv1d { x, w, b, geom }, &ins)
    }

    /// `x: [C_in, T]`, `w: [C_in, C_out, K]`.
    pub fn conv_transpose1d(
        &mut self,
        x: VarId,
        w: VarId,
        b: Option<VarId>,
        stride: usize,
        padding: usize,
    ) -> Result<VarId> {
        const OP: &str = "conv_transpose1d";
        let &[cin, t] = self.expect_rank(OP, x, 2)? else { unreachable!() };
        let &[wcin, cout, k] = self.expect_rank(OP, w, 3)? else { unreachable!() };
        if wcin != cin || stride == 0 {
            return Err(Error::dim(OP, format!("input {cin} channels vs weight {:?}", self.shape(w))));
        }
        self.check_bias(OP, b, cout)?;
        let tout = kernels::conv_transpose1d_out_len(t, k, stride, padding)
            .ok_or_else(|| Error::dim(OP, "padding removes the whole output"))?;
        let y = kernels::conv_transpose1d_forward(
            self.value(x).data(),
            cin,
            t,
            self.value(w).data(),
            cout,
            k,
            b.map(|b| self.value(b).data()),
            stride,
            padding,
            tout,
        );
        let mut ins = vec![x, w];
        ins.extend(b);
        self.push(
            OP,
            Tensor::from_parts(vec![cout, tout], y),
            Op::ConvTranspose1d {
                x,
                w,
                b,
                stride,
                padding,
            },
            &ins,
        )
    }

    /// Stride-1 "same" 2-D convolution. `x: [C_in, H, W]`, `w: [C_out, C_in, Kh, Kw]`.
    pub fn conv2d_same(&mut self, x: VarId, w: VarId, b: Option<VarId>) -> Result<VarId> {
        const OP: &str = "conv2d";
        let &[cin, h, wd] = self.expect_rank(OP, x, 3)? else { unreachable!() };
        let &[cout, wcin, kh, kw] = self.expect_rank(OP, w, 4)? else { unreachable!() };
        if wcin != cin {
            return Err(Error::dim(OP, format!("input {cin} channels vs weight {:?}", self.shape(w))));
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::Config(format!("conv2d same padding needs odd kernels, got {kh}x{kw}")));
        }
        self.check_bias(OP, b, cout)?;
        let geom = Conv2dGeom {
            cin,
            cout,
            h,
            w: wd,
            kh,
            kw,
        };
        let y = kernels::conv2d_forward(
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            &geom,
        );
        let mut ins = vec![x, w];
        ins.extend(b);
        self.push(OP, Tensor::from_parts(vec![cout, h, wd], y), Op::Conv2d { x, w, b, geom }, &ins)
    }

    // ---- normalization --------------------------------------------------

    /// Normalizes along `axis` (zero mean, unit variance), then applies the
    /// per-feature `gain` and `bias` (both `[shape[axis]]`).
    pub fn layer_norm(&mut self, x: VarId, axis: usize, gain: VarId, bias: VarId, eps: T) -> Result<VarId> {
        const OP: &str = "layer_norm";
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::dim(OP, format!("axis {axis} out of range for {shape:?}")));
        }
        let f = shape[axis];
        if self.shape(gain) != [f] || self.shape(bias) != [f] {
            return Err(Error::dim(OP, format!("affine params must be [{f}]")));
        }
        let layout = NormLayout::along(&shape, axis);
        let (y, xhat, inv_std) = kernels::layer_norm_forward(
            self.value(x).data(),
            &layout,
            self.value(gain).data(),
            self.value(bias).data(),
            eps,
        );
        self.push(
            OP,
            Tensor::from_parts(shape, y),
            Op::LayerNorm {
                x,
                gain,
                bias,
                layout,
                xhat,
                inv_std,
            },
            &[x, gain, bias],
        )
    }

    /// Normalizes a `[C, T]` map jointly over both axes; per-channel affine.
    pub fn global_layer_norm(&mut self, x: VarId, gain: VarId, bias: VarId, eps: T) -> Result<VarId> {
        const OP: &str = "global_layer_norm";
        let &[c, t] = self.expect_rank(OP, x, 2)? else { unreachable!() };
        if self.shape(gain) != [c] || self.shape(bias) != [c] {
            return Err(Error::dim(OP, format!("affine params must be [{c}]")));
        }
        let (y, xhat, inv_std) = kernels::global_layer_norm_forward(
            self.value(x).data(),
            c,
            self.value(gain).data(),
            self.value(bias).data(),
            eps,
        );
        self.push(
            OP,
            Tensor::from_parts(vec![c, t], y),
            Op::GlobalLayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            &[x, gain, bias],
        )
    }

    // ---- pointwise ------------------------------------------------------

    pub fn relu(&mut self, x: VarId) -> Result<VarId> {
        let y = self.value(x).map(|v| if v > T::zero() { v } else { T::zero() });
        self.push("relu", y, Op::Relu(x), &[x])
    }

    pub fn elu(&mut self, x: VarId, alpha: T) -> Result<VarId> {
        let y = self
            .value(x)
            .map(|v| if v >= T::zero() { v } else { alpha * (v.exp() - T::one()) });
        self.push("elu", y, Op::Elu { x, alpha }, &[x])
    }

    /// PReLU with one slope per leading-axis channel.
    pub fn prelu(&mut self, x: VarId, slope: VarId) -> Result<VarId> {
        const OP: &str = "prelu";
        let xs = self.value(x);
        let c = xs.dim(0);
        if self.shape(slope) != [c] {
            return Err(Error::dim(OP, format!("slope must be [{c}], got {:?}", self.shape(slope))));
        }
        let inner = xs.len() / c;
        let a = self.value(slope).data();
        let data = xs
            .data()
            .iter()
            .enumerate()
            .map(|(j, &v)| if v > T::zero() { v } else { a[j / inner] * v })
            .collect();
        let y = Tensor::from_parts(xs.shape().to_vec(), data);
        self.push(OP, y, Op::Prelu { x, slope }, &[x, slope])
    }

    /// `x: [F_in]`, `w: [F_out, F_in]`.
    pub fn linear(&mut self, x: VarId, w: VarId, b: Option<VarId>) -> Result<VarId> {
        const OP: &str = "linear";
        let &[fin] = self.expect_rank(OP, x, 1)? else { unreachable!() };
        let &[fout, wfin] = self.expect_rank(OP, w, 2)? else { unreachable!() };
        if wfin != fin {
            return Err(Error::dim(OP, format!("input [{fin}] vs weight [{fout}, {wfin}]")));
        }
        self.check_bias(OP, b, fout)?;
        let mut y = match b {
            Some(b) => self.value(b).data().to_vec(),
            None => vec![T::zero(); fout],
        };
        T::gemm(fout, fin, 1, T::one(), self.value(w).data(), false, self.value(x).data(), false, T::one(), &mut y);
        let mut ins = vec![x, w];
        ins.extend(b);
        self.push(OP, Tensor::from_vec(y), Op::Linear { x, w, b }, &ins)
    }

    /// `[C, T] -> [C]`.
    pub fn mean_pool_time(&mut self, x: VarId) -> Result<VarId> {
        const OP: &str = "mean_pool_time";
        let &[c, t] = self.expect_rank(OP, x, 2)? else { unreachable!() };
        let n = T::from_usize(t).unwrap();
        let xs = self.value(x);
        let y = (0..c).map(|ci| xs.row(ci).iter().copied().sum::<T>() / n).collect();
        self.push(OP, Tensor::from_vec(y), Op::MeanPoolTime(x), &[x])
    }

    fn same_shape(&self, op: &'static str, a: VarId, b: VarId) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(op, format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    pub fn add(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        self.same_shape("add", a, b)?;
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| x + y).collect();
        let y = Tensor::from_parts(va.shape().to_vec(), data);
        self.push("add", y, Op::Add(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        self.same_shape("mul", a, b)?;
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| x * y).collect();
        let y = Tensor::from_parts(va.shape().to_vec(), data);
        self.push("mul", y, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, x: VarId, c: T) -> Result<VarId> {
        let y = self.value(x).map(|v| v * c);
        self.push("scale", y, Op::Scale(x, c), &[x])
    }

    /// `y[c, t] = scale[c] * x[c, t] + shift[c]`.
    pub fn channel_affine(&mut self, x: VarId, scale: VarId, shift: VarId) -> Result<VarId> {
        const OP: &str = "channel_affine";
        let &[c, t] = self.expect_rank(OP, x, 2)? else { unreachable!() };
        if self.shape(scale) != [c] || self.shape(shift) != [c] {
            return Err(Error::dim(
                OP,
                format!("features [{c}, {t}] vs scale {:?} / shift {:?}", self.shape(scale), self.shape(shift)),
            ));
        }
        let (xs, a, b) = (self.value(x), self.value(scale).data(), self.value(shift).data());
        let data = xs
            .data()
            .iter()
            .enumerate()
            .map(|(j, &v)| a[j / t] * v + b[j / t])
            .collect();
        self.push(OP, Tensor::from_parts(vec![c, t], data), Op::ChannelAffine { x, scale, shift }, &[x, scale, shift])
    }

    /// `[D] -> [D, T]` by repeating over time.
    pub fn broadcast_time(&mut self, e: VarId, t: usize) -> Result<VarId> {
        const OP: &str = "broadcast_time";
        let &[d] = self.expect_rank(OP, e, 1)? else { unreachable!() };
        if t == 0 {
            return Err(Error::dim(OP, "zero frames"));
        }
        let data = self.value(e).data().iter().flat_map(|&v| std::iter::repeat_n(v, t)).collect();
        self.push(OP, Tensor::from_parts(vec![d, t], data), Op::BroadcastTime(e), &[e])
    }

    /// Concatenates along the leading axis.
    pub fn concat(&mut self, parts: &[VarId]) -> Result<VarId> {
        const OP: &str = "concat";
        let first = parts.first().ok_or_else(|| Error::dim(OP, "nothing to concatenate"))?;
        let tail = self.shape(*first)[1..].to_vec();
        let mut lead = 0;
        let mut data = Vec::new();
        for &p in parts {
            let s = self.shape(p);
            if s[1..] != tail[..] {
                return Err(Error::dim(OP, format!("trailing shapes {:?} vs {tail:?}", &s[1..])));
            }
            lead += s[0];
            data.extend_from_slice(self.value(p).data());
        }
        let mut shape = vec![lead];
        shape.extend(tail);
        self.push(OP, Tensor::from_parts(shape, data), Op::Concat(parts.to_vec()), parts)
    }

    /// `x[index]` along the leading axis.
    pub fn select(&mut self, x: VarId, index: usize) -> Result<VarId> {
        const OP: &str = "select";
        let s = self.shape(x).to_vec();
        if s.len() < 2 || index >= s[0] {
            return Err(Error::dim(OP, format!("index {index} into {s:?}")));
        }
        let inner: usize = s[1..].iter().product();
        let data = self.value(x).data()[index * inner..(index + 1) * inner].to_vec();
        self.push(OP, Tensor::from_parts(s[1..].to_vec(), data), Op::Select { x, index }, &[x])
    }

    pub fn reshape(&mut self, x: VarId, shape: &[usize]) -> Result<VarId> {
        let y = self.value(x).clone().reshape(shape.to_vec())?;
        self.push("reshape", y, Op::Reshape(x), &[x])
    }

    /// Trims or right-zero-pads the last axis of a `[C, L]` tensor to `len`.
    pub fn fit_length(&mut self, x: VarId, len: usize) -> Result<VarId> {
        const OP: &str = "fit_length";
        let &[c, len_in] = self.expect_rank(OP, x, 2)? else { unreachable!() };
        if len == 0 {
            return Err(Error::Usage("output length must be positive".into()));
        }
        let keep = len.min(len_in);
        let xs = self.value(x);
        let mut data = vec![T::zero(); c * len];
        for ci in 0..c {
            data[ci * len..ci * len + keep].copy_from_slice(&xs.row(ci)[..keep]);
        }
        self.push(OP, Tensor::from_parts(vec![c, len], data), Op::FitLength { x, len_in }, &[x])
    }

    pub fn sum(&mut self, x: VarId) -> Result<VarId> {
        let s = self.value(x).sum();
        self.push("sum", Tensor::scalar(s), Op::Sum(x), &[x])
    }

    /// Weighted sum `sum(w * x)` with constant weights.
    pub fn weighted_sum(&mut self, x: VarId, weights: Tensor<T>) -> Result<VarId> {
        let w = self.constant(weights);
        let p = self.mul(x, w)?;
        self.sum(p)
    }

    // ---- objectives -----------------------------------------------------

    /// Scale-invariant SDR (dB) of `est` against a constant `target`, both
    /// mean-removed; `eps` regularizes the projection and both energies.
    pub fn si_sdr(&mut self, est: VarId, target: &[T], eps: T) -> Result<VarId> {
        const OP: &str = "si_sdr";
        let e = self.value(est).data();
        if e.len() != target.len() {
            return Err(Error::dim(OP, format!("estimate length {} vs target {}", e.len(), target.len())));
        }
        let n = T::from_usize(e.len()).unwrap();
        let te = target.iter().copied().sum::<T>() / n;
        let target_c: Vec<T> = target.iter().map(|&v| v - te).collect();
        let t_energy: T = target_c.iter().map(|&v| v * v).sum();
        if t_energy == T::zero() {
            return Err(Error::Degenerate("SI-SDR target is all zero".into()));
        }
        let em = e.iter().copied().sum::<T>() / n;
        let est_c: Vec<T> = e.iter().map(|&v| v - em).collect();
        let denom = t_energy + eps;
        let proj = est_c.iter().zip(&target_c).map(|(&a, &b)| a * b).sum::<T>() / denom;
        let p_signal = proj * proj * t_energy;
        let p_noise: T = est_c
            .iter()
            .zip(&target_c)
            .map(|(&a, &b)| {
                let r = a - proj * b;
                r * r
            })
            .sum();
        let ten = T::from_f64_lossy(10.0);
        let value = ten * ((p_signal + eps) / (p_noise + eps)).log10();
        self.push(
            OP,
            Tensor::scalar(value),
            Op::SiSdr {
                est,
                est_c,
                target_c,
                proj,
                denom,
                p_signal,
                p_noise,
                eps,
            },
            &[est],
        )
    }

    /// `-log softmax(logits)[class]`.
    pub fn cross_entropy(&mut self, logits: VarId, class: usize) -> Result<VarId> {
        const OP: &str = "cross_entropy";
        let &[k] = self.expect_rank(OP, logits, 1)? else { unreachable!() };
        if class >= k {
            return Err(Error::Usage(format!("class {class} out of range for {k} logits")));
        }
        let l = self.value(logits).data();
        let max = l.iter().copied().fold(T::neg_infinity(), T::max);
        let exps: Vec<T> = l.iter().map(|&v| (v - max).exp()).collect();
        let z: T = exps.iter().copied().sum();
        let probs: Vec<T> = exps.iter().map(|&e| e / z).collect();
        let loss = z.ln() + max - l[class];
        self.push(OP, Tensor::scalar(loss), Op::CrossEntropy { logits, class, probs }, &[logits])
    }

    // ---- backward -------------------------------------------------------

    /// Reverse pass from a single-element output.
    pub fn backward(&self, output: VarId) -> Result<Gradients<T>> {
        if self.value(output).len() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar output, got shape {:?}",
                self.shape(output)
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(vec![T::one()]);
        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if node.requires_grad {
                self.propagate(&node.op, &node.value, &g, &mut grads);
            }
            grads[i] = Some(g);
        }
        // Only report gradients for nodes that asked for one.
        for (slot, node) in grads.iter_mut().zip(&self.nodes) {
            if !node.requires_grad {
                *slot = None;
            }
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
            params: self.bound_order.clone(),
        })
    }

    fn wants(&self, v: VarId) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn accumulate(&self, grads: &mut [Option<Vec<T>>], v: VarId, contrib: Vec<T>) {
        if !self.wants(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(g) => {
                for (a, b) in g.iter_mut().zip(contrib) {
                    *a += b;
                }
            }
            slot => *slot = Some(contrib),
        }
    }

    fn accumulate_bias(&self, grads: &mut [Option<Vec<T>>], b: Option<VarId>, g: &[T], channels: usize) {
        if let Some(b) = b.filter(|&b| self.wants(b)) {
            let inner = g.len() / channels;
            let db = g.chunks(inner).map(|row| row.iter().copied().sum()).collect();
            self.accumulate(grads, b, db);
        }
    }

    fn propagate(&self, op: &Op<T>, out: &Tensor<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        match op {
            Op::Leaf => {}
            Op::Conv1d { x, w, b, geom } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (cin, t) = (xv.dim(0), xv.dim(1));
                let (cout, k) = (wv.dim(0), wv.dim(2));
                let (dx, dw) = kernels::conv1d_backward(
                    xv.data(),
                    cin,
                    t,
                    wv.data(),
                    cout,
                    k,
                    geom,
                    out.dim(1),
                    g,
                    self.wants(*x),
                    self.wants(*w),
                );
                if let Some(dx) = dx {
                    self.accumulate(grads, *x, dx);
                }
                if let Some(dw) = dw {
                    self.accumulate(grads, *w, dw);
                }
                self.accumulate_bias(grads, *b, g, cout);
            }
            Op::ConvTranspose1d {
                x,
                w,
                b,
                stride,
                padding,
            } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (cin, t) = (xv.dim(0), xv.dim(1));
                let (cout, k) = (wv.dim(1), wv.dim(2));
                let (dx, dw) = kernels::conv_transpose1d_backward(
                    xv.data(),
                    cin,
                    t,
                    wv.data(),
                    cout,
                    k,
                    *stride,
                    *padding,
                    out.dim(1),
                    g,
                    self.wants(*x),
                    self.wants(*w),
                );
                if let Some(dx) = dx {
                    self.accumulate(grads, *x, dx);
                }
                if let Some(dw) = dw {
                    self.accumulate(grads, *w, dw);
                }
                self.accumulate_bias(grads, *b, g, cout);
            }
            Op::Conv2d { x, w, b, geom } => {
                let (dx, dw) = kernels::conv2d_backward(
                    self.value(*x).data(),
                    self.value(*w).data(),
                    geom,
                    g,
                    self.wants(*x),
                    self.wants(*w),
                );
                if let Some(dx) = dx {
                    self.accumulate(grads, *x, dx);
                }
                if let Some(dw) = dw {
                    self.accumulate(grads, *w, dw);
                }
                self.accumulate_bias(grads, *b, g, geom.cout);
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                layout,
                xhat,
                inv_std,
            } => {
                let (dx, dg, db) =
                    kernels::layer_norm_backward(g, xhat, inv_std, layout, self.value(*gain).data());
                self.accumulate(grads, *x, dx);
                self.accumulate(grads, *gain, dg);
                self.accumulate(grads, *bias, db);
            }
            Op::GlobalLayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let c = out.dim(0);
                let (dx, dg, db) =
                    kernels::global_layer_norm_backward(g, xhat, *inv_std, c, self.value(*gain).data());
                self.accumulate(grads, *x, dx);
                self.accumulate(grads, *gain, dg);
                self.accumulate(grads, *bias, db);
            }
            Op::Relu(x) => {
                let dx = self
                    .value(*x)
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&v, &d)| if v > T::zero() { d } else { T::zero() })
                    .collect();
                self.accumulate(grads, *x, dx);
            }
            Op::Elu { x, alpha } => {
                let dx = self
                    .value(*x)
                    .data()
                    .iter()
                    .zip(out.data())
                    .zip(g)
                    .map(|((&v, &y), &d)| if v >= T::zero() { d } else { d * (y + *alpha) })
                    .collect();
                self.accumulate(grads, *x, dx);
            }
            Op::Prelu { x, slope } => {
                let xv = self.value(*x).data();
                let a = self.value(*slope).data();
                let inner = xv.len() / a.len();
                let mut da = vec![T::zero(); a.len()];
                let dx = xv
                    .iter()
                    .zip(g)
                    .enumerate()
                    .map(|(j, (&v, &d))| {
                        if v > T::zero() {
                            d
                        } else {
                            da[j / inner] += d * v;
                            d * a[j / inner]
                        }
                    })
                    .collect();
                self.accumulate(grads, *x, dx);
                self.accumulate(grads, *slope, da);
            }
            Op::Linear { x, w, b } => {
                let (xv, wv) = (self.value(*x).data(), self.value(*w).data());
                let (fout, fin) = (g.len(), xv.len());
                if self.wants(*x) {
                    let mut dx = vec![T::zero(); fin];
                    T::gemm(fin, fout, 1, T::one(), wv, true, g, false, T::zero(), &mut dx);
                    self.accumulate(grads, *x, dx);
                }
                if self.wants(*w) {
                    let mut dw = vec![T::zero(); fout * fin];
                    T::gemm(fout, 1, fin, T::one(), g, false, xv, false, T::zero(), &mut dw);
                    self.accumulate(grads, *w, dw);
                }
                if let Some(b) = b {
                    self.accumulate(grads, *b, g.to_vec());
                }
            }
            Op::MeanPoolTime(x) => {
                let t = self.value(*x).dim(1);
                let n = T::from_usize(t).unwrap();
                let dx = g.iter().flat_map(|&d| std::iter::repeat_n(d / n, t)).collect();
                self.accumulate(grads, *x, dx);
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.to_vec());
                self.accumulate(grads, *b, g.to_vec());
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                if self.wants(*a) {
                    self.accumulate(grads, *a, g.iter().zip(vb).map(|(&d, &y)| d * y).collect());
                }
                if self.wants(*b) {
                    self.accumulate(grads, *b, g.iter().zip(va).map(|(&d, &x)| d * x).collect());
                }
            }
            Op::Scale(x, c) => {
                self.accumulate(grads, *x, g.iter().map(|&d| d * *c).collect());
            }
            Op::ChannelAffine { x, scale, shift } => {
                let xv = self.value(*x);
                let t = xv.dim(1);
                let a = self.value(*scale).data();
                if self.wants(*x) {
                    let dx = g.iter().enumerate().map(|(j, &d)| d * a[j / t]).collect();
                    self.accumulate(grads, *x, dx);
                }
                if self.wants(*scale) {
                    let da = g
                        .chunks(t)
                        .zip(xv.data().chunks(t))
                        .map(|(gr, xr)| gr.iter().zip(xr).map(|(&d, &v)| d * v).sum())
                        .collect();
                    self.accumulate(grads, *scale, da);
                }
                if self.wants(*shift) {
                    self.accumulate(grads, *shift, g.chunks(t).map(|r| r.iter().copied().sum()).collect());
                }
            }
            Op::BroadcastTime(e) => {
                let t = out.dim(1);
                self.accumulate(grads, *e, g.chunks(t).map(|r| r.iter().copied().sum()).collect());
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    self.accumulate(grads, p, g[offset..offset + n].to_vec());
                    offset += n;
                }
            }
            Op::Select { x, index } => {
                let xv = self.value(*x);
                let inner = g.len();
                let mut dx = vec![T::zero(); xv.len()];
                dx[index * inner..(index + 1) * inner].copy_from_slice(g);
                self.accumulate(grads, *x, dx);
            }
            Op::Reshape(x) => self.accumulate(grads, *x, g.to_vec()),
            Op::FitLength { x, len_in } => {
                let (c, len) = (out.dim(0), out.dim(1));
                let keep = len.min(*len_in);
                let mut dx = vec![T::zero(); c * len_in];
                for ci in 0..c {
                    dx[ci * len_in..ci * len_in + keep].copy_from_slice(&g[ci * len..ci * len + keep]);
                }
                self.accumulate(grads, *x, dx);
            }
            Op::Sum(x) => {
                let n = self.value(*x).len();
                self.accumulate(grads, *x, vec![g[0]; n]);
            }
            Op::SiSdr {
                est,
                est_c,
                target_c,
                proj,
                denom,
                p_signal,
                p_noise,
                eps,
            } => {
                // f = k (ln(Ps + eps) - ln(Pn + eps)) with Ps = a^2 |t|^2,
                // Pn = |e - a t|^2 and a = <e, t> / (|t|^2 + eps).
                let k = T::from_f64_lossy(10.0 / std::f64::consts::LN_10) * g[0];
                let t_energy = *denom - *eps;
                let noise: Vec<T> = est_c.iter().zip(target_c).map(|(&e, &t)| e - *proj * t).collect();
                let t_dot_n: T = target_c.iter().zip(&noise).map(|(&t, &n)| t * n).sum();
                let two = T::from_f64_lossy(2.0);
                let cs = k * two * *proj * t_energy / (*denom * (*p_signal + *eps));
                let cn = k * two / (*p_noise + *eps);
                let mut de: Vec<T> = noise
                    .iter()
                    .zip(target_c)
                    .map(|(&n, &t)| cs * t - cn * (n - t * t_dot_n / *denom))
                    .collect();
                let mean = de.iter().copied().sum::<T>() / T::from_usize(de.len()).unwrap();
                for v in &mut de {
                    *v -= mean;
                }
                self.accumulate(grads, *est, de);
            }
            Op::CrossEntropy { logits, class, probs } => {
                let mut d: Vec<T> = probs.iter().map(|&p| p * g[0]).collect();
                d[*class] -= g[0];
                self.accumulate(grads, *logits, d);
            }
        }
    }
}
