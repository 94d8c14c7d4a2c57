use alloc::format;
use alloc::vec;

use rand_chacha::ChaCha8Rng;

use super::LayerNormParams;
use crate::error::{Error, Result};
use crate::graph::{Graph, ParamId, ParamStore, Var};
use crate::init::xavier_uniform;
use crate::kernels;
use crate::real::Real;
use crate::tensor::{Padding, Shape, Tensor};

/// Shape of a global-context self-attention block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttentionConfig {
    pub channels: usize,
    /// Bottleneck reduction factor; the hidden width is `ceil(C / red)`, at least 1.
    pub reduction: usize,
}

impl AttentionConfig {
    pub const DEFAULT_REDUCTION: usize = 8;

    pub fn new(channels: usize, reduction: usize) -> Result<Self> {
        if channels == 0 || reduction == 0 {
            return Err(Error::Config("attention channels and reduction must be positive".into()));
        }
        Ok(AttentionConfig { channels, reduction })
    }

    pub fn hidden(&self) -> usize {
        self.channels.div_ceil(self.reduction).max(1)
    }

    /// `w_g` + `w1` + `w2` + bottleneck layer-norm gain and bias.
    pub fn param_count(&self) -> usize {
        let (c, h) = (self.channels, self.hidden());
        c + 2 * c * h + 2 * h
    }
}

/// Global-context attention:
///
/// ```text
/// y_i = x_i + w2 ReLU(LN(w1 sum_j softmax_j(w_g x_j) x_j))
/// ```
///
/// (a) a 1x1 conv to one channel gives per-position logits, softmaxed over
/// all `h * w` positions; the context vector is the weighted sum of the
/// per-position channel vectors. (b) `w1 -> LN -> ReLU -> w2` bottleneck.
/// (c) the result is added to every position.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionBlock {
    pub config: AttentionConfig,
    /// `(1, C, 1, 1)` pooling-logit kernel.
    pub w_g: ParamId,
    /// `(hidden, C, 1, 1)`.
    pub w1: ParamId,
    /// `(C, hidden, 1, 1)`.
    pub w2: ParamId,
    pub norm: LayerNormParams,
}

impl AttentionBlock {
    pub fn new<T: Real>(store: &mut ParamStore<T>, rng: &mut ChaCha8Rng, prefix: &str, config: AttentionConfig) -> Self {
        let (c, h) = (config.channels, config.hidden());
        let w_g = store.add(
            format!("{prefix}.w_g"),
            vec![1, c, 1, 1],
            xavier_uniform(Shape::new(1, c, 1, 1), c, 1, rng),
        );
        let w1 = store.add(
            format!("{prefix}.w1"),
            vec![h, c, 1, 1],
            xavier_uniform(Shape::new(h, c, 1, 1), c, h, rng),
        );
        let w2 = store.add(
            format!("{prefix}.w2"),
            vec![c, h, 1, 1],
            xavier_uniform(Shape::new(c, h, 1, 1), h, c, rng),
        );
        let norm = LayerNormParams::new(store, &format!("{prefix}.ln"), h);
        AttentionBlock { config, w_g, w1, w2, norm }
    }

    fn check<T: Real>(&self, shape: Shape, store: &ParamStore<T>) -> Result<()> {
        if shape.c != self.config.channels {
            return Err(Error::Dimension {
                op: "attention_forward",
                lhs: shape,
                rhs: store.value(self.w_g).shape(),
            });
        }
        Ok(())
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        self.check(g.value(x).shape(), store)?;
        let wg = g.param(store, self.w_g);
        let logits = g.conv2d(x, wg, 1, Padding::Valid)?;
        let weights = g.spatial_softmax(logits);
        let context = g.weighted_pool(x, weights)?;
        let w1 = g.param(store, self.w1);
        let t = g.conv2d(context, w1, 1, Padding::Valid)?;
        let t = self.norm.forward(g, store, t)?;
        let t = g.relu(t);
        let w2 = g.param(store, self.w2);
        let t = g.conv2d(t, w2, 1, Padding::Valid)?;
        g.broadcast_add(x, t)
    }

    pub fn apply<T: Real>(&self, store: &ParamStore<T>, input: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let x = g.input(input.clone());
        let y = self.forward(&mut g, store, x)?;
        Ok(g.value(y).clone())
    }

    /// Pooling weights `(n, 1, h, w)` and context vectors `(n, C, 1, 1)`.
    pub fn context<T: Real>(&self, store: &ParamStore<T>, input: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        self.check(input.shape(), store)?;
        let logits = kernels::conv2d(input, store.value(self.w_g), 1, Padding::Valid)?;
        let weights = kernels::spatial_softmax(&logits);
        let context = kernels::weighted_pool(input, &weights)?;
        Ok((weights, context))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec::Vec;
    use rand::{Rng, SeedableRng};

    fn setup(c: usize) -> (ParamStore<f64>, AttentionBlock, ChaCha8Rng) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let b = AttentionBlock::new(&mut store, &mut rng, "att", AttentionConfig::new(c, 4).unwrap());
        (store, b, rng)
    }

    fn random(shape: Shape, rng: &mut ChaCha8Rng) -> Tensor<f64> {
        Tensor::from_vec(shape, (0..shape.numel()).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn hidden_width_rounds_up() {
        assert_eq!(AttentionConfig::new(16, 8).unwrap().hidden(), 2);
        assert_eq!(AttentionConfig::new(200, 8).unwrap().hidden(), 25);
        assert_eq!(AttentionConfig::new(3, 8).unwrap().hidden(), 1);
        assert_eq!(AttentionConfig::new(16, 8).unwrap().param_count(), 16 + 64 + 4);
    }

    #[test]
    fn zero_w2_is_identity() {
        let (mut store, b, mut rng) = setup(8);
        store.value_mut(b.w2).data_mut().iter_mut().for_each(|v| *v = 0.0);
        let x = random(Shape::new(2, 8, 5, 3), &mut rng);
        assert_eq!(b.apply(&store, &x).unwrap(), x);
    }

    #[test]
    fn single_position_context_is_the_position() {
        let (store, b, mut rng) = setup(8);
        let x = random(Shape::new(1, 8, 1, 1), &mut rng);
        let (w, ctx) = b.context(&store, &x).unwrap();
        assert_eq!(w.data(), &[1.0]);
        assert_eq!(ctx.data(), x.data());
        // y = x + w2 relu(ln(w1 x))
        let h = kernels::conv2d(&x, store.value(b.w1), 1, Padding::Valid).unwrap();
        let (h, _) = kernels::layer_norm(&h, store.value(b.norm.gain), store.value(b.norm.bias), LN_EPS).unwrap();
        let h = kernels::relu(&h);
        let h = kernels::conv2d(&h, store.value(b.w2), 1, Padding::Valid).unwrap();
        let expect = kernels::add(&x, &h).unwrap();
        assert_eq!(b.apply(&store, &x).unwrap(), expect);
    }

    const LN_EPS: f64 = super::super::LN_EPSILON;

    #[test]
    fn zero_w_g_pools_the_spatial_mean() {
        let (mut store, b, mut rng) = setup(6);
        store.value_mut(b.w_g).data_mut().iter_mut().for_each(|v| *v = 0.0);
        let x = random(Shape::new(2, 6, 4, 5), &mut rng);
        let (_, ctx) = b.context(&store, &x).unwrap();
        let mean: Vec<f64> = x.data().chunks(20).map(|p| p.iter().sum::<f64>() / 20.0).collect();
        for (a, m) in ctx.data().iter().zip(mean) {
            assert!((a - m).abs() < 1e-6);
        }
    }

    #[test]
    fn pooling_weights_sum_to_one() {
        let (store, b, mut rng) = setup(8);
        let x = random(Shape::new(3, 8, 6, 6), &mut rng);
        let (w, _) = b.context(&store, &x).unwrap();
        for plane in w.data().chunks(36) {
            assert!((plane.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }
}
