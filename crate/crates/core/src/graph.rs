//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every forward operation in execution order; node
//! indices are therefore already a topological order and [`Graph::backward`]
//! simply walks the tape in reverse. The graph is rebuilt for every
//! minibatch and consumed by `backward`.
//!
//! Trainable weights live in a [`ParamStore`]. [`Graph::param`] copies a
//! parameter onto the tape; `backward` accumulates its gradient into the
//! store's gradient buffer.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::kernels::{self, LayerNormCache};
use crate::loss::{self, CircleLossConfig};
use crate::real::Real;
use crate::tensor::{Padding, Shape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

/// A named trainable tensor. `dims` is its logical shape (rank 1, 2 or 4);
/// the tensor itself is always stored rank-4.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub dims: Vec<usize>,
    pub value: Tensor<T>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { params: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, dims: Vec<usize>, value: Tensor<T>) -> ParamId {
        debug_assert_eq!(dims.iter().product::<usize>(), value.shape().numel());
        self.params.push(Param {
            name: name.into(),
            dims,
            value,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<T> {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.params[id.0].value
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.params.iter_mut()
    }

    /// Total number of scalar weights.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.shape().numel()).sum()
    }

    pub fn zero_grads(&mut self) {
        self.params.iter_mut().for_each(|p| p.value.zero_grad());
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    dims: p.dims.clone(),
                    value: p.value.cast(),
                })
                .collect(),
        }
    }
}

/// Handle to a node on a [`Graph`] tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Param(ParamId),
    Conv2d {
        input: Var,
        kernel: Var,
        stride: usize,
        padding: Padding,
    },
    Depthwise {
        input: Var,
        filters: Var,
        sources: Vec<usize>,
        stride: usize,
        padding: Padding,
    },
    Relu(Var),
    LayerNorm {
        input: Var,
        gain: Var,
        bias: Var,
        cache: LayerNormCache<T>,
    },
    SpatialSoftmax(Var),
    WeightedPool {
        input: Var,
        weights: Var,
    },
    BroadcastAdd {
        input: Var,
        vector: Var,
    },
    AddChannelBias {
        input: Var,
        bias: Var,
    },
    Add(Var, Var),
    Concat(Var, Var),
    GlobalAvgPool(Var),
    FullyConnected {
        input: Var,
        weights: Var,
        bias: Var,
    },
    Transpose(Var),
    Reshape(Var),
    Sum(Var),
    /// Loss ops save their local gradients at forward time.
    Loss {
        inputs: Vec<(Var, Tensor<T>)>,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients of the leaf inputs that were created with gradient tracking.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        &self.nodes[var.0].value
    }

    /// Constant input without gradient tracking.
    pub fn input(&mut self, tensor: Tensor<T>) -> Var {
        self.push(tensor, Op::Leaf, false)
    }

    /// Input whose gradient is reported by [`Graph::backward`].
    pub fn input_with_grad(&mut self, tensor: Tensor<T>) -> Var {
        self.push(tensor, Op::Leaf, true)
    }

    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        let mut value = store.value(id).clone();
        value.clear_grad();
        self.push(value, Op::Param(id), true)
    }

    pub fn conv2d(&mut self, input: Var, kernel: Var, stride: usize, padding: Padding) -> Result<Var> {
        let out = kernels::conv2d(self.value(input), self.value(kernel), stride, padding)?;
        let rg = self.needs(&[input, kernel]);
        Ok(self.push(out, Op::Conv2d { input, kernel, stride, padding }, rg))
    }

    pub fn depthwise_conv2d(&mut self, input: Var, filters: Var, stride: usize, padding: Padding) -> Result<Var> {
        let c = self.value(input).shape().c;
        if self.value(filters).shape().n != c {
            return Err(Error::Dimension {
                op: "depthwise_conv2d",
                lhs: self.value(input).shape(),
                rhs: self.value(filters).shape(),
            });
        }
        self.depthwise_conv2d_mapped(input, filters, (0..c).collect(), stride, padding)
    }

    /// Depthwise convolution where output channel `j` reads input channel
    /// `sources[j]`.
    pub fn depthwise_conv2d_mapped(
        &mut self,
        input: Var,
        filters: Var,
        sources: Vec<usize>,
        stride: usize,
        padding: Padding,
    ) -> Result<Var> {
        let out = kernels::depthwise_conv2d_mapped(
            self.value(input),
            self.value(filters),
            &sources,
            stride,
            padding,
        )?;
        let rg = self.needs(&[input, filters]);
        Ok(self.push(out, Op::Depthwise { input, filters, sources, stride, padding }, rg))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let out = kernels::relu(self.value(input));
        let rg = self.needs(&[input]);
        self.push(out, Op::Relu(input), rg)
    }

    pub fn layer_norm(&mut self, input: Var, gain: Var, bias: Var, epsilon: T) -> Result<Var> {
        let (out, cache) = kernels::layer_norm(self.value(input), self.value(gain), self.value(bias), epsilon)?;
        let rg = self.needs(&[input, gain, bias]);
        Ok(self.push(out, Op::LayerNorm { input, gain, bias, cache }, rg))
    }

    pub fn spatial_softmax(&mut self, input: Var) -> Var {
        let out = kernels::spatial_softmax(self.value(input));
        let rg = self.needs(&[input]);
        self.push(out, Op::SpatialSoftmax(input), rg)
    }

    pub fn weighted_pool(&mut self, input: Var, weights: Var) -> Result<Var> {
        let out = kernels::weighted_pool(self.value(input), self.value(weights))?;
        let rg = self.needs(&[input, weights]);
        Ok(self.push(out, Op::WeightedPool { input, weights }, rg))
    }

    pub fn broadcast_add(&mut self, input: Var, vector: Var) -> Result<Var> {
        let out = kernels::broadcast_add(self.value(input), self.value(vector))?;
        let rg = self.needs(&[input, vector]);
        Ok(self.push(out, Op::BroadcastAdd { input, vector }, rg))
    }

    pub fn add_channel_bias(&mut self, input: Var, bias: Var) -> Result<Var> {
        let out = kernels::add_channel_bias(self.value(input), self.value(bias))?;
        let rg = self.needs(&[input, bias]);
        Ok(self.push(out, Op::AddChannelBias { input, bias }, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = kernels::add(self.value(a), self.value(b))?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = kernels::concat_channels(self.value(a), self.value(b))?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(out, Op::Concat(a, b), rg))
    }

    pub fn global_avg_pool(&mut self, input: Var) -> Result<Var> {
        let out = kernels::global_avg_pool(self.value(input))?;
        let rg = self.needs(&[input]);
        Ok(self.push(out, Op::GlobalAvgPool(input), rg))
    }

    pub fn fully_connected(&mut self, input: Var, weights: Var, bias: Var) -> Result<Var> {
        let out = kernels::fully_connected(self.value(input), self.value(weights), self.value(bias))?;
        let rg = self.needs(&[input, weights, bias]);
        Ok(self.push(out, Op::FullyConnected { input, weights, bias }, rg))
    }

    pub fn transpose(&mut self, matrix: Var) -> Result<Var> {
        let out = kernels::transpose(self.value(matrix))?;
        let rg = self.needs(&[matrix]);
        Ok(self.push(out, Op::Transpose(matrix), rg))
    }

    pub fn reshape(&mut self, input: Var, shape: Shape) -> Result<Var> {
        let out = self.value(input).clone().reshape(shape)?;
        let rg = self.needs(&[input]);
        Ok(self.push(out, Op::Reshape(input), rg))
    }

    /// Sum of all elements, as a `(1, 1, 1, 1)` scalar.
    pub fn sum(&mut self, input: Var) -> Var {
        let total = self.value(input).sum();
        let out = Tensor::full(Shape::scalar(), total);
        let rg = self.needs(&[input]);
        self.push(out, Op::Sum(input), rg)
    }

    /// Mean circle loss of `(n, d)` embeddings against `(classes, d)` proxies.
    pub fn circle_loss(
        &mut self,
        embeddings: Var,
        labels: &[usize],
        proxies: Var,
        config: &CircleLossConfig,
    ) -> Result<Var> {
        let (value, ge, gp) =
            loss::circle_loss_with_grad(self.value(embeddings), labels, self.value(proxies), config)?;
        let rg = self.needs(&[embeddings, proxies]);
        Ok(self.push(
            Tensor::full(Shape::scalar(), value),
            Op::Loss { inputs: vec![(embeddings, ge), (proxies, gp)] },
            rg,
        ))
    }

    /// Mean softmax cross-entropy of `(n, classes)` logits.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (value, g) = loss::cross_entropy_with_grad(self.value(logits), labels)?;
        let rg = self.needs(&[logits]);
        Ok(self.push(
            Tensor::full(Shape::scalar(), value),
            Op::Loss { inputs: vec![(logits, g)] },
            rg,
        ))
    }

    /// Back-propagates from a scalar loss. Parameter gradients are added to
    /// the store's gradient buffers; gradients of tracked inputs are returned.
    pub fn backward(self, loss: Var, store: &mut ParamStore<T>) -> Result<Gradients<T>> {
        let ls = self.value(loss).shape();
        if ls != Shape::scalar() {
            return Err(Error::Contract(alloc::format!(
                "backward needs a scalar loss, got shape {ls}"
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(Shape::scalar(), T::one()));
        let mut leaf_grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let mut send = |var: Var, t: Tensor<T>| {
                if self.nodes[var.0].requires_grad {
                    accumulate(&mut grads[var.0], t);
                }
            };
            match &node.op {
                Op::Leaf => leaf_grads[idx] = Some(g),
                Op::Param(id) => {
                    let p = store.value_mut(*id);
                    match p.grad_mut() {
                        Some(buf) => buf.iter_mut().zip(g.data()).for_each(|(a, &b)| *a += b),
                        None => p.set_grad(g.into_data())?,
                    }
                }
                Op::Conv2d { input, kernel, stride, padding } => {
                    let (gx, gk) = kernels::conv2d_backward(
                        self.value(*input),
                        self.value(*kernel),
                        &g,
                        *stride,
                        *padding,
                    )?;
                    send(*input, gx);
                    send(*kernel, gk);
                }
                Op::Depthwise { input, filters, sources, stride, padding } => {
                    let (gx, gf) = kernels::depthwise_conv2d_backward(
                        self.value(*input),
                        self.value(*filters),
                        sources,
                        &g,
                        *stride,
                        *padding,
                    )?;
                    send(*input, gx);
                    send(*filters, gf);
                }
                Op::Relu(input) => send(*input, kernels::relu_backward(self.value(*input), &g)),
                Op::LayerNorm { input, gain, bias, cache } => {
                    let (gx, gg, gb) = kernels::layer_norm_backward(cache, self.value(*gain), &g);
                    send(*input, gx);
                    send(*gain, gg);
                    send(*bias, gb);
                }
                Op::SpatialSoftmax(input) => {
                    send(*input, kernels::spatial_softmax_backward(&node.value, &g));
                }
                Op::WeightedPool { input, weights } => {
                    let (gx, gw) = kernels::weighted_pool_backward(self.value(*input), self.value(*weights), &g);
                    send(*input, gx);
                    send(*weights, gw);
                }
                Op::BroadcastAdd { input, vector } => {
                    send(*vector, kernels::sum_planes(&g));
                    send(*input, g);
                }
                Op::AddChannelBias { input, bias } => {
                    send(*bias, kernels::add_channel_bias_backward(&g, self.value(*bias).shape()));
                    send(*input, g);
                }
                Op::Add(a, b) => {
                    send(*b, g.clone());
                    send(*a, g);
                }
                Op::Concat(a, b) => {
                    let (ga, gb) = kernels::split_channels(&g, self.value(*a).shape().c);
                    send(*a, ga);
                    send(*b, gb);
                }
                Op::GlobalAvgPool(input) => {
                    send(*input, kernels::global_avg_pool_backward(self.value(*input).shape(), &g));
                }
                Op::FullyConnected { input, weights, bias } => {
                    let (gx, gw, gb) = kernels::fully_connected_backward(
                        self.value(*input),
                        self.value(*weights),
                        self.value(*bias).shape(),
                        &g,
                    );
                    send(*input, gx);
                    send(*weights, gw);
                    send(*bias, gb);
                }
                Op::Transpose(m) => send(*m, kernels::transpose(&g)?),
                Op::Reshape(input) => send(*input, g.reshape(self.value(*input).shape())?),
                Op::Sum(input) => {
                    let s = g.data()[0];
                    send(*input, Tensor::full(self.value(*input).shape(), s));
                }
                Op::Loss { inputs } => {
                    let s = g.data()[0];
                    for (var, local) in inputs {
                        send(*var, local.map(|v| v * s));
                    }
                }
            }
        }
        Ok(Gradients { grads: leaf_grads })
    }
}

fn accumulate<T: Real>(slot: &mut Option<Tensor<T>>, t: Tensor<T>) {
    match slot {
        Some(existing) => existing
            .data_mut()
            .iter_mut()
            .zip(t.data())
            .for_each(|(a, &b)| *a += b),
        None => *slot = Some(t),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grad_of_sum_is_ones() {
        let mut g = Graph::<f64>::new();
        let x = g.input_with_grad(Tensor::full(Shape::new(1, 2, 2, 2), 3.0));
        let loss = g.sum(x);
        let grads = g.backward(loss, &mut ParamStore::new()).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[1.0; 8]);
    }

    #[test]
    fn grad_of_sum_relu() {
        let mut g = Graph::<f64>::new();
        let x = g.input_with_grad(Tensor::from_vec(Shape::new(1, 2, 1, 1), vec![-1.0, 2.0]).unwrap());
        let r = g.relu(x);
        let loss = g.sum(r);
        let grads = g.backward(loss, &mut ParamStore::new()).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[0.0, 1.0]);
    }

    #[test]
    fn relu_subgradient_at_zero_is_zero() {
        let mut g = Graph::<f64>::new();
        let x = g.input_with_grad(Tensor::from_vec(Shape::new(1, 2, 1, 1), vec![-1.0, 0.5]).unwrap());
        let r = g.relu(x);
        let loss = g.sum(r);
        let grads = g.backward(loss, &mut ParamStore::new()).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[0.0, 1.0]);

        let mut g = Graph::<f64>::new();
        let x = g.input_with_grad(Tensor::zeros(Shape::new(1, 1, 1, 1)));
        let r = g.relu(x);
        let loss = g.sum(r);
        assert_eq!(g.backward(loss, &mut ParamStore::new()).unwrap().get(x).unwrap().data(), &[0.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut g = Graph::<f32>::new();
        let x = g.input_with_grad(Tensor::zeros(Shape::new(1, 2, 1, 1)));
        let r = g.relu(x);
        assert!(matches!(g.backward(r, &mut ParamStore::new()), Err(Error::Contract(_))));
    }

    #[test]
    fn params_accumulate_across_uses() {
        let mut store = ParamStore::<f64>::new();
        let id = store.add("w", vec![2], Tensor::channel_vector(vec![1.0, -1.0]));
        let mut g = Graph::new();
        let a = g.param(&store, id);
        let b = g.param(&store, id);
        let s = g.add(a, b).unwrap();
        let loss = g.sum(s);
        g.backward(loss, &mut store).unwrap();
        assert_eq!(store.value(id).grad().unwrap(), &[2.0, 2.0]);
    }

    #[test]
    fn untracked_inputs_get_no_gradient() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::full(Shape::new(1, 1, 1, 2), 1.0));
        let loss = g.sum(x);
        let grads = g.backward(loss, &mut ParamStore::new()).unwrap();
        assert!(grads.get(x).is_none());
    }
}
