//! Reverse-mode automatic differentiation over a recorded graph.
//!
//! A [`Graph`] is an append-only list of nodes in topological order. Ops
//! validate shapes, compute their value eagerly and record what the
//! backward rule needs. [`Graph::backward`] consumes the graph and walks
//! it once in reverse.

use crate::accumulator::{self, AccumulatorConfig};
use crate::error::{Error, Result};
use crate::kernels::{self, ConvGeom};
use crate::scalar::Scalar;
use crate::spiking::{self, CubaLifParams, SpikeMode, SpikePoolMode};
use crate::tensor::Tensor;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<S> {
    Leaf,
    MatMul { a: Var, b: Var },
    Conv2d { x: Var, w: Var, geom: ConvGeom },
    AddBias { x: Var, b: Var },
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { x: Var, factor: S },
    Relu { x: Var },
    MaxPool2 { x: Var, argmax: Vec<u32> },
    SumPool2 { x: Var, dims: [usize; 4] },
    Reshape { x: Var },
    Sum { x: Var },
    SumLast { x: Var, steps: usize },
    SoftmaxCrossEntropy { logits: Var, probs: Vec<S>, target: usize },
    Accumulate { x: Var, cfg: AccumulatorConfig, channels: usize, sites: usize },
    Lif { x: Var, params: CubaLifParams, steps: usize, v_pre: Vec<S> },
}

struct Node<S> {
    value: Tensor<S>,
    requires_grad: bool,
    op: Op<S>,
}

/// Recorded computation for one forward pass.
pub struct Graph<S> {
    nodes: Vec<Node<S>>,
    budget: Option<usize>,
    stored: usize,
}

impl<S: Scalar> Default for Graph<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            budget: None,
            stored: 0,
        }
    }

    /// Caps the number of scalars the graph may retain for backward.
    pub fn with_memory_budget(elements: usize) -> Self {
        Self {
            budget: Some(elements),
            ..Self::new()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Scalars currently retained by the graph.
    pub fn stored_elements(&self) -> usize {
        self.stored
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Adds a leaf; it is trainable if the tensor was marked with
    /// [`Tensor::with_grad`].
    pub fn input(&mut self, t: Tensor<S>) -> Result<Var> {
        let rg = t.requires_grad();
        self.push(t, rg, Op::Leaf, 0)
    }

    pub fn param(&mut self, t: Tensor<S>) -> Result<Var> {
        self.input(t.with_grad(true))
    }

    pub fn constant(&mut self, t: Tensor<S>) -> Result<Var> {
        self.input(t.with_grad(false))
    }

    fn push(&mut self, value: Tensor<S>, requires_grad: bool, op: Op<S>, extra: usize) -> Result<Var> {
        let cost = value.numel() + extra;
        if let Some(budget) = self.budget {
            if self.stored + cost > budget {
                return Err(Error::Resource(format!(
                    "graph needs more than {budget} retained scalars; use fewer timesteps or a smaller batch"
                )));
            }
        }
        self.stored += cost;
        self.nodes.push(Node {
            value: value.with_grad(false),
            requires_grad,
            op,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        let (&[m, k], &[k2, n]) = (sa, sb) else {
            return Err(Error::shapes("matmul expects 2-D operands", sa, sb));
        };
        if k != k2 {
            return Err(Error::shapes("matmul inner dimensions", sa, sb));
        }
        let mut c = vec![S::zero(); m * n];
        kernels::gemm(m, n, k, self.value(a).data(), k, self.value(b).data(), n, &mut c, n, false);
        let rg = self.rg(&[a, b]);
        self.push(Tensor::from_vec(&[m, n], c)?, rg, Op::MatMul { a, b }, 0)
    }

    /// Cross-correlation of `[C,H,W]` or `[C,H,W,B]` input with `[F,C,k,k]`
    /// weights.
    pub fn conv2d(&mut self, x: Var, w: Var, stride: usize, pad: usize) -> Result<Var> {
        let geom = spiking::conv_geom(self.value(x).shape(), self.value(w).shape(), stride, pad)?;
        let out = kernels::conv2d_forward(self.value(x).data(), self.value(w).data(), &geom);
        let mut shape = vec![geom.filters, geom.out_height(), geom.out_width()];
        if self.value(x).shape().len() == 4 {
            shape.push(geom.batch);
        }
        let rg = self.rg(&[x, w]);
        self.push(Tensor::from_vec(&shape, out)?, rg, Op::Conv2d { x, w, geom }, 0)
    }

    /// Adds `b[c]` to every element of channel `c` (leading axis).
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let xv = self.value(x);
        let channels = xv.shape()[0];
        if self.value(b).shape() != [channels] {
            return Err(Error::shapes("bias vs channels", self.value(b).shape(), xv.shape()));
        }
        let mut data = xv.to_vec();
        spiking::add_channel_bias(&mut data, self.value(b).data(), channels)?;
        let shape = xv.shape().to_vec();
        let rg = self.rg(&[x, b]);
        self.push(Tensor::from_vec(&shape, data)?, rg, Op::AddBias { x, b }, 0)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::shapes(what, self.value(a).shape(), self.value(b).shape()));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let data = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x + y);
        let shape = self.value(a).shape().to_vec();
        let rg = self.rg(&[a, b]);
        self.push(Tensor::from_vec(&shape, data)?, rg, Op::Add { a, b }, 0)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let data = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x * y);
        let shape = self.value(a).shape().to_vec();
        let rg = self.rg(&[a, b]);
        self.push(Tensor::from_vec(&shape, data)?, rg, Op::Mul { a, b }, 0)
    }

    pub fn scale(&mut self, x: Var, factor: S) -> Result<Var> {
        let out = self.value(x).map(|v| v * factor);
        let rg = self.rg(&[x]);
        self.push(out, rg, Op::Scale { x, factor }, 0)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(|v| if v > S::zero() { v } else { S::zero() });
        let rg = self.rg(&[x]);
        self.push(out, rg, Op::Relu { x }, 0)
    }

    fn pool_dims(&self, x: Var) -> Result<[usize; 4]> {
        let s = self.value(x).shape();
        let dims = match *s {
            [c, h, w] => [c, h, w, 1],
            [c, h, w, b] => [c, h, w, b],
            _ => return Err(Error::Dimension(format!("pooling expects [C,H,W(,B)], got {s:?}"))),
        };
        if dims[1] % 2 != 0 || dims[2] % 2 != 0 {
            return Err(Error::Dimension(format!("2×2 pooling needs even H and W, got {s:?}")));
        }
        Ok(dims)
    }

    fn pooled_shape(&self, x: Var) -> Vec<usize> {
        let mut shape = self.value(x).shape().to_vec();
        shape[1] /= 2;
        shape[2] /= 2;
        shape
    }

    /// 2×2 stride-2 max pooling; on binary spikes this is window OR.
    pub fn maxpool2(&mut self, x: Var) -> Result<Var> {
        let [c, h, w, b] = self.pool_dims(x)?;
        let (out, argmax) = kernels::maxpool2_forward(self.value(x).data(), c, h, w, b);
        let shape = self.pooled_shape(x);
        let rg = self.rg(&[x]);
        let extra = argmax.len();
        self.push(Tensor::from_vec(&shape, out)?, rg, Op::MaxPool2 { x, argmax }, extra)
    }

    /// Spike pooling in the given mode. The sum-threshold variant passes
    /// gradients straight through to every window element.
    pub fn spike_pool(&mut self, x: Var, mode: SpikePoolMode) -> Result<Var> {
        match mode {
            SpikePoolMode::Or => self.maxpool2(x),
            SpikePoolMode::SumThreshold(k) => {
                let dims = self.pool_dims(x)?;
                let [c, h, w, b] = dims;
                let (out, _) = spiking::sum_threshold_pool(self.value(x).data(), c, h, w, b, k);
                let shape = self.pooled_shape(x);
                let rg = self.rg(&[x]);
                self.push(Tensor::from_vec(&shape, out)?, rg, Op::SumPool2 { x, dims }, 0)
            }
        }
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).reshape(shape)?;
        let rg = self.rg(&[x]);
        self.push(out, rg, Op::Reshape { x }, 0)
    }

    /// Flattens everything except an optional trailing batch axis.
    pub fn flatten(&mut self, x: Var, keep_last: bool) -> Result<Var> {
        let s = self.value(x).shape();
        let shape = if keep_last && s.len() > 1 {
            let last = *s.last().unwrap();
            vec![s.iter().product::<usize>() / last, last]
        } else {
            vec![s.iter().product()]
        };
        self.reshape(x, &shape)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(x).sum());
        let rg = self.rg(&[x]);
        self.push(out, rg, Op::Sum { x }, 0)
    }

    /// Sums over the trailing axis: `[N, T] -> [N]`.
    pub fn sum_last(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).shape();
        if s.len() < 2 {
            return Err(Error::Dimension(format!("sum_last needs at least 2 axes, got {s:?}")));
        }
        let steps = *s.last().unwrap();
        let shape = s[..s.len() - 1].to_vec();
        let data = self
            .value(x)
            .data()
            .chunks_exact(steps)
            .map(|c| c.iter().fold(S::zero(), |a, &v| a + v))
            .collect();
        let rg = self.rg(&[x]);
        self.push(Tensor::from_vec(&shape, data)?, rg, Op::SumLast { x, steps }, 0)
    }

    /// Mean-free softmax cross-entropy of a logit vector against a class.
    pub fn softmax_cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var> {
        let z = self.value(logits).data();
        if target >= z.len() {
            return Err(Error::Contract(format!("target class {target} out of {} logits", z.len())));
        }
        let max = z.iter().fold(S::neg_infinity(), |m, &v| if v > m { v } else { m });
        let exps: Vec<S> = z.iter().map(|&v| (v - max).exp()).collect();
        let total = exps.iter().fold(S::zero(), |a, &v| a + v);
        let loss = total.ln() + max - z[target];
        let probs: Vec<S> = exps.iter().map(|&e| e / total).collect();
        let rg = self.rg(&[logits]);
        let extra = probs.len();
        self.push(
            Tensor::scalar(loss),
            rg,
            Op::SoftmaxCrossEntropy { logits, probs, target },
            extra,
        )
    }

    /// Accumulator bridge: `[C,H,W,T] -> [C·T/I, H, W]`.
    pub fn accumulate(&mut self, x: Var, cfg: &AccumulatorConfig) -> Result<Var> {
        let out = accumulator::accumulate_forward_real(self.value(x), cfg)?.into_tensor();
        let s = self.value(x).shape();
        let (channels, sites) = (s[0], s[1] * s[2]);
        let rg = self.rg(&[x]);
        self.push(
            out,
            rg,
            Op::Accumulate {
                x,
                cfg: *cfg,
                channels,
                sites,
            },
            0,
        )
    }

    /// CUBA-LIF neurons over the trailing time axis of `drive`. The whole
    /// unrolled recurrence is one node; its backward runs BPTT.
    pub fn lif(&mut self, drive: Var, params: &CubaLifParams, mode: SpikeMode, layer: &str) -> Result<Var> {
        params.validate()?;
        let d = self.value(drive);
        let steps = *d.shape().last().unwrap();
        let (spikes, v_pre) = spiking::lif_sequence(d.data(), steps, params, mode, layer)?;
        let shape = d.shape().to_vec();
        let rg = self.rg(&[drive]);
        let extra = v_pre.len();
        self.push(
            Tensor::from_vec(&shape, spikes)?,
            rg,
            Op::Lif {
                x: drive,
                params: *params,
                steps,
                v_pre,
            },
            extra,
        )
    }

    /// Propagates gradients from a scalar loss to every node that requires
    /// them. Consumes the graph.
    pub fn backward(self, loss: Var) -> Result<Gradients<S>> {
        self.backward_from(loss, None)
    }

    /// Like [`backward`](Self::backward), with an optional hook that may
    /// rewrite the gradient arriving at one node before it propagates.
    pub fn backward_from(
        self,
        loss: Var,
        mut hook: Option<(Var, &mut dyn FnMut(&mut [S]))>,
    ) -> Result<Gradients<S>> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<S>>> = (0..n).map(|_| None).collect();
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![S::one()]);
        }
        for i in (0..=loss.0).rev() {
            let Some(mut g) = grads[i].take() else { continue };
            if let Some((at, f)) = hook.as_mut() {
                if at.0 == i {
                    f(&mut g);
                }
            }
            let node = &self.nodes[i];
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        let grads = self
            .nodes
            .iter()
            .zip(grads)
            .map(|(node, g)| {
                if !node.requires_grad {
                    return None;
                }
                let data = g.unwrap_or_else(|| vec![S::zero(); node.value.numel()]);
                Some(Tensor::from_vec(node.value.shape(), data).expect("gradient shape"))
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node<S>, g: &[S], grads: &mut [Option<Vec<S>>]) {
        let mut send = |v: Var, f: &dyn Fn() -> Vec<S>| {
            if self.nodes[v.0].requires_grad {
                let delta = f();
                match grads[v.0].as_mut() {
                    Some(acc) => {
                        for (a, d) in acc.iter_mut().zip(delta) {
                            *a = *a + d;
                        }
                    }
                    None => grads[v.0] = Some(delta),
                }
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                send(*a, &|| {
                    let bt = kernels::transpose(bv.data(), k, n);
                    let mut ga = vec![S::zero(); m * k];
                    kernels::gemm(m, k, n, g, n, &bt, k, &mut ga, k, false);
                    ga
                });
                send(*b, &|| {
                    let at = kernels::transpose(av.data(), m, k);
                    let mut gb = vec![S::zero(); k * n];
                    kernels::gemm(k, n, m, &at, m, g, n, &mut gb, n, false);
                    gb
                });
            }
            Op::Conv2d { x, w, geom } => {
                let need_x = self.nodes[x.0].requires_grad;
                let need_w = self.nodes[w.0].requires_grad;
                let (gx, gw) =
                    kernels::conv2d_backward(self.value(*x).data(), self.value(*w).data(), g, geom, need_x, need_w);
                if let Some(gx) = gx {
                    send(*x, &|| gx.clone());
                }
                if let Some(gw) = gw {
                    send(*w, &|| gw.clone());
                }
            }
            Op::AddBias { x, b } => {
                send(*x, &|| g.to_vec());
                send(*b, &|| {
                    let channels = self.value(*b).numel();
                    g.chunks_exact(g.len() / channels)
                        .map(|c| c.iter().fold(S::zero(), |a, &v| a + v))
                        .collect()
                });
            }
            Op::Add { a, b } => {
                send(*a, &|| g.to_vec());
                send(*b, &|| g.to_vec());
            }
            Op::Mul { a, b } => {
                send(*a, &|| zip_map(g, self.value(*b).data(), |x, y| x * y));
                send(*b, &|| zip_map(g, self.value(*a).data(), |x, y| x * y));
            }
            Op::Scale { x, factor } => send(*x, &|| g.iter().map(|&v| v * *factor).collect()),
            Op::Relu { x } => send(*x, &|| {
                zip_map(g, self.value(*x).data(), |gv, xv| if xv > S::zero() { gv } else { S::zero() })
            }),
            Op::MaxPool2 { x, argmax } => send(*x, &|| {
                let mut gx = vec![S::zero(); self.value(*x).numel()];
                for (&i, &gv) in argmax.iter().zip(g) {
                    gx[i as usize] = gx[i as usize] + gv;
                }
                gx
            }),
            Op::SumPool2 { x, dims } => send(*x, &|| {
                let [c, h, w, b] = *dims;
                let (oh, ow) = (h / 2, w / 2);
                let mut gx = vec![S::zero(); c * h * w * b];
                for ch in 0..c {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            for bi in 0..b {
                                let gv = g[((ch * oh + oy) * ow + ox) * b + bi];
                                for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                                    gx[((ch * h + 2 * oy + dy) * w + 2 * ox + dx) * b + bi] = gv;
                                }
                            }
                        }
                    }
                }
                gx
            }),
            Op::Reshape { x } => send(*x, &|| g.to_vec()),
            Op::Sum { x } => send(*x, &|| vec![g[0]; self.value(*x).numel()]),
            Op::SumLast { x, steps } => send(*x, &|| g.iter().flat_map(|&v| std::iter::repeat(v).take(*steps)).collect()),
            Op::SoftmaxCrossEntropy { logits, probs, target } => send(*logits, &|| {
                probs
                    .iter()
                    .enumerate()
                    .map(|(i, &p)| g[0] * (if i == *target { p - S::one() } else { p }))
                    .collect()
            }),
            Op::Accumulate {
                x,
                cfg,
                channels,
                sites,
            } => send(*x, &|| accumulator::backward_kernel(g, *channels, *sites, cfg)),
            Op::Lif { x, params, steps, v_pre } => send(*x, &|| {
                spiking::lif_sequence_backward(g, node.value.data(), v_pre, *steps, params)
            }),
        }
    }
}

fn zip_map<S: Scalar>(a: &[S], b: &[S], f: impl Fn(S, S) -> S) -> Vec<S> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
#[derive(Clone, Debug)]
pub struct Gradients<S> {
    grads: Vec<Option<Tensor<S>>>,
}

impl<S: Scalar> Gradients<S> {
    /// Gradient of a node that requires grad; `None` otherwise.
    pub fn get(&self, v: Var) -> Option<&Tensor<S>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_examples() {
        let mut g = Graph::new();
        let a = g.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0])).unwrap();
        let b = g.constant(t(&[2, 2], &[3.0, 4.0, 5.0, 6.0])).unwrap();
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.value(c).data(), &[3.0, 4.0, 5.0, 6.0]);
        let r = g.constant(t(&[1, 2], &[1.0, 2.0])).unwrap();
        let col = g.constant(t(&[2, 1], &[3.0, 4.0])).unwrap();
        let d = g.matmul(r, col).unwrap();
        assert_eq!(g.value(d).data(), &[11.0]);
        let err = g.matmul(r, r).unwrap_err();
        assert!(err.to_string().contains("[1, 2]"));
    }

    #[test]
    fn conv_examples() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::full(&[1, 3, 3], 1.0).unwrap()).unwrap();
        let w = g.constant(Tensor::full(&[1, 1, 3, 3], 1.0).unwrap()).unwrap();
        let y = g.conv2d(x, w, 1, 0).unwrap();
        assert_eq!(g.value(y).shape(), &[1, 1, 1]);
        assert_eq!(g.value(y).data(), &[9.0]);

        let xr = g.constant(Tensor::from_fn(&[1, 4, 5], |i| i as f64 * 0.5 - 3.0).unwrap()).unwrap();
        let id = g.constant(Tensor::full(&[1, 1, 1, 1], 1.0).unwrap()).unwrap();
        let yr = g.conv2d(xr, id, 1, 0).unwrap();
        assert_eq!(g.value(yr).data(), g.value(xr).data());

        let big = g.constant(Tensor::full(&[1, 5, 5, 1], 1.0).unwrap()).unwrap();
        assert!(matches!(g.conv2d(x, big, 1, 0), Err(Error::Dimension(_))));
        let w5 = g.constant(Tensor::full(&[1, 1, 5, 5], 1.0).unwrap()).unwrap();
        assert!(matches!(g.conv2d(x, w5, 1, 0), Err(Error::Dimension(_))));
    }

    #[test]
    fn sum_and_square_gradients() {
        let mut g = Graph::new();
        let x = g.param(t(&[3], &[1.0, 2.0, 3.0])).unwrap();
        let s = g.sum(x).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[1.0, 1.0, 1.0]);

        let mut g = Graph::new();
        let x = g.param(t(&[3], &[1.0, 2.0, 3.0])).unwrap();
        let sq = g.mul(x, x).unwrap();
        let s = g.sum(sq).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut g = Graph::new();
        let x = g.param(t(&[2], &[1.0, 2.0])).unwrap();
        assert!(matches!(g.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn unreached_leaves_get_zero_gradients() {
        let mut g = Graph::new();
        let x = g.param(t(&[2], &[1.0, 2.0])).unwrap();
        let unused = g.param(t(&[2, 2], &[1.0; 4])).unwrap();
        let c = g.constant(t(&[2], &[5.0, 5.0])).unwrap();
        let s = g.sum(x).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(unused).unwrap().shape(), &[2, 2]);
        assert!(grads.get(unused).unwrap().data().iter().all(|&v| v == 0.0));
        assert!(grads.get(c).is_none());
    }

    #[test]
    fn memory_budget_is_enforced() {
        let mut g = Graph::<f64>::with_memory_budget(10);
        let x = g.param(Tensor::zeros(&[2, 4]).unwrap()).unwrap();
        let err = g.lif(x, &CubaLifParams::default(), SpikeMode::Binary, "l").unwrap_err();
        assert!(matches!(err, Error::Resource(ref m) if m.contains("timesteps")));
    }

    #[test]
    fn softmax_cross_entropy_value() {
        let mut g = Graph::new();
        let z = g.param(t(&[3], &[0.0, 0.0, 0.0])).unwrap();
        let l = g.softmax_cross_entropy(z, 1).unwrap();
        assert!((g.value(l).data()[0] - 3f64.ln()).abs() < 1e-15);
        let grads = g.backward(l).unwrap();
        let gz = grads.get(z).unwrap().data();
        assert!((gz[1] + 2.0 / 3.0).abs() < 1e-15 && (gz[0] - 1.0 / 3.0).abs() < 1e-15);
    }
}
