//! Composite blocks: self-proliferation, global-context self-attention and
//! the inverted-residual SP&A bottleneck that chains them.
//!
//! Blocks hold only configuration and [`ParamId`] handles; their weights
//! live in a [`ParamStore`] so the same block can run in any precision.

mod attention;
mod sp;
mod spa;

pub use attention::{AttentionBlock, AttentionConfig};
pub use sp::{SpBlock, SpConfig, CHEAP_KERNEL};
pub use spa::{SpaBlock, SpaConfig, DEPTHWISE_KERNEL};

use alloc::format;
use alloc::vec;

use crate::error::Result;
use crate::graph::{Graph, ParamId, ParamStore, Var};
use crate::real::Real;
use crate::tensor::{Shape, Tensor};

/// Epsilon of every layer normalization in the network.
pub const LN_EPSILON: f64 = 1e-5;

/// Per-channel gain and bias of one layer normalization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerNormParams {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNormParams {
    /// Unit gain, zero bias.
    pub fn new<T: Real>(store: &mut ParamStore<T>, prefix: &str, channels: usize) -> Self {
        let shape = Shape::new(1, channels, 1, 1);
        let gain = store.add(format!("{prefix}.gain"), vec![channels], Tensor::full(shape, T::one()));
        let bias = store.add(format!("{prefix}.bias"), vec![channels], Tensor::zeros(shape));
        LayerNormParams { gain, bias }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let gain = g.param(store, self.gain);
        let bias = g.param(store, self.bias);
        g.layer_norm(x, gain, bias, T::from_f64(LN_EPSILON))
    }
}
