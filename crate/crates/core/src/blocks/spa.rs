use alloc::format;
use alloc::vec;

use rand_chacha::ChaCha8Rng;

use super::{AttentionBlock, AttentionConfig, LayerNormParams, SpBlock, SpConfig};
use crate::error::{Error, Result};
use crate::graph::{Graph, ParamId, ParamStore, Var};
use crate::init::xavier_uniform;
use crate::real::Real;
use crate::tensor::{Padding, Shape, Tensor};

/// Side length of the depthwise filters in the expanded space.
pub const DEPTHWISE_KERNEL: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpaConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    /// Width of the expanded space.
    pub expansion: usize,
    pub stride: usize,
    pub ratio: f64,
    pub attention: bool,
    pub reduction: usize,
}

impl SpaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.stride == 1 || self.stride == 2) {
            return Err(Error::Config(format!("SP&A stride must be 1 or 2, got {}", self.stride)));
        }
        if self.expansion == 0 {
            return Err(Error::Config("SP&A expansion must be positive".into()));
        }
        self.expand_config()?;
        self.compress_config()?;
        AttentionConfig::new(self.expansion, self.reduction)?;
        Ok(())
    }

    pub fn use_residual(&self) -> bool {
        self.stride == 1 && self.in_channels == self.out_channels
    }

    pub fn expand_config(&self) -> Result<SpConfig> {
        SpConfig::new(self.in_channels, self.expansion, self.ratio)
    }

    pub fn compress_config(&self) -> Result<SpConfig> {
        SpConfig::new(self.expansion, self.out_channels, self.ratio)
    }

    pub fn attention_config(&self) -> Option<AttentionConfig> {
        self.attention.then_some(AttentionConfig {
            channels: self.expansion,
            reduction: self.reduction,
        })
    }
}

/// Inverted-residual SP&A bottleneck:
///
/// ```text
/// SP expand -> LN -> ReLU -> depthwise 3x3 (stride) -> LN -> ReLU
///   -> attention -> SP compress -> LN (no ReLU) [+ input]
/// ```
///
/// The identity shortcut is present only when the stride is 1 and the
/// channel count is unchanged; otherwise there is no shortcut at all.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaBlock {
    pub config: SpaConfig,
    pub expand: SpBlock,
    pub expand_norm: LayerNormParams,
    /// `(expansion, 1, 3, 3)` depthwise filters.
    pub depthwise: ParamId,
    pub depthwise_norm: LayerNormParams,
    pub attention: Option<AttentionBlock>,
    pub compress: SpBlock,
    pub compress_norm: LayerNormParams,
}

impl SpaBlock {
    pub fn new<T: Real>(store: &mut ParamStore<T>, rng: &mut ChaCha8Rng, prefix: &str, config: SpaConfig) -> Result<Self> {
        config.validate()?;
        let e = config.expansion;
        let expand = SpBlock::new(store, rng, &format!("{prefix}.expand"), config.expand_config()?)?;
        let expand_norm = LayerNormParams::new(store, &format!("{prefix}.expand_ln"), e);
        let k = DEPTHWISE_KERNEL;
        let depthwise = store.add(
            format!("{prefix}.depthwise"),
            vec![e, 1, k, k],
            xavier_uniform(Shape::new(e, 1, k, k), k * k, k * k, rng),
        );
        let depthwise_norm = LayerNormParams::new(store, &format!("{prefix}.depthwise_ln"), e);
        let attention = config
            .attention_config()
            .map(|a| AttentionBlock::new(store, rng, &format!("{prefix}.attention"), a));
        let compress = SpBlock::new(store, rng, &format!("{prefix}.compress"), config.compress_config()?)?;
        let compress_norm = LayerNormParams::new(store, &format!("{prefix}.compress_ln"), config.out_channels);
        Ok(SpaBlock {
            config,
            expand,
            expand_norm,
            depthwise,
            depthwise_norm,
            attention,
            compress,
            compress_norm,
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let h = self.expand.forward(g, store, x)?;
        let h = self.expand_norm.forward(g, store, h)?;
        let h = g.relu(h);
        let f = g.param(store, self.depthwise);
        let h = g.depthwise_conv2d(h, f, self.config.stride, Padding::Same)?;
        let h = self.depthwise_norm.forward(g, store, h)?;
        let mut h = g.relu(h);
        if let Some(att) = &self.attention {
            h = att.forward(g, store, h)?;
        }
        let h = self.compress.forward(g, store, h)?;
        let h = self.compress_norm.forward(g, store, h)?;
        if self.config.use_residual() {
            g.add(h, x)
        } else {
            Ok(h)
        }
    }

    pub fn apply<T: Real>(&self, store: &ParamStore<T>, input: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let x = g.input(input.clone());
        let y = self.forward(&mut g, store, x)?;
        Ok(g.value(y).clone())
    }
}
