use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, ParamId, ParamStore, Var};
use crate::init::xavier_uniform;
use crate::real::Real;
use crate::tensor::{Padding, Shape, Tensor};

/// Side length of the depthwise filters that generate the cheap maps.
pub const CHEAP_KERNEL: usize = 3;

/// Shape of a self-proliferation block.
///
/// A 1x1 convolution produces `primary_channels()` maps; the remaining
/// `cheap_channels()` outputs are 3x3 depthwise transforms of those maps,
/// cheap output `j` reading primary map `j mod primary_channels()`. The two
/// groups are concatenated (primary first). `ratio` is the fraction of
/// output channels generated by the cheap operations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    pub ratio: f64,
    pub bias: bool,
}

impl SpConfig {
    pub fn new(in_channels: usize, out_channels: usize, ratio: f64) -> Result<Self> {
        let cfg = SpConfig {
            in_channels,
            out_channels,
            ratio,
            bias: false,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_bias(mut self) -> Self {
        self.bias = true;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::Config("SP block channel counts must be positive".into()));
        }
        if !(self.ratio > 0.0 && self.ratio < 1.0) {
            return Err(Error::Config(format!(
                "SP block ratio must lie in (0, 1), got {}",
                self.ratio
            )));
        }
        let out = self.out_channels;
        if out > 1 && self.ratio >= (out - 1) as f64 / out as f64 {
            return Err(Error::Config(format!(
                "SP block ratio {} leaves fewer than one primary map for {out} outputs",
                self.ratio
            )));
        }
        Ok(())
    }

    /// `max(1, round((1 - r) * out))`.
    pub fn primary_channels(&self) -> usize {
        let p = num_traits::Float::round((1.0 - self.ratio) * self.out_channels as f64) as usize;
        p.clamp(1, self.out_channels)
    }

    pub fn cheap_channels(&self) -> usize {
        self.out_channels - self.primary_channels()
    }

    /// Primary map read by each cheap filter.
    pub fn cheap_sources(&self) -> Vec<usize> {
        let p = self.primary_channels();
        (0..self.cheap_channels()).map(|j| j % p).collect()
    }

    /// `in * primary + 9 * cheap (+ out biases)`.
    pub fn param_count(&self) -> usize {
        self.in_channels * self.primary_channels()
            + CHEAP_KERNEL * CHEAP_KERNEL * self.cheap_channels()
            + if self.bias { self.out_channels } else { 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpBlock {
    pub config: SpConfig,
    /// `(primary, in, 1, 1)` kernel.
    pub primary: ParamId,
    /// `(cheap, 1, 3, 3)` depthwise filters, absent when there are no cheap maps.
    pub cheap: Option<ParamId>,
    pub bias: Option<ParamId>,
}

impl SpBlock {
    pub fn new<T: Real>(store: &mut ParamStore<T>, rng: &mut ChaCha8Rng, prefix: &str, config: SpConfig) -> Result<Self> {
        config.validate()?;
        let (cin, cp, cc) = (config.in_channels, config.primary_channels(), config.cheap_channels());
        let primary = store.add(
            format!("{prefix}.primary"),
            vec![cp, cin, 1, 1],
            xavier_uniform(Shape::new(cp, cin, 1, 1), cin, cp, rng),
        );
        let k2 = CHEAP_KERNEL * CHEAP_KERNEL;
        let cheap = (cc > 0).then(|| {
            store.add(
                format!("{prefix}.cheap"),
                vec![cc, 1, CHEAP_KERNEL, CHEAP_KERNEL],
                xavier_uniform(Shape::new(cc, 1, CHEAP_KERNEL, CHEAP_KERNEL), k2, k2, rng),
            )
        });
        let bias = config.bias.then(|| {
            store.add(
                format!("{prefix}.bias"),
                vec![config.out_channels],
                Tensor::zeros(Shape::new(1, config.out_channels, 1, 1)),
            )
        });
        Ok(SpBlock { config, primary, cheap, bias })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let xs = g.value(x).shape();
        if xs.c != self.config.in_channels {
            return Err(Error::Dimension {
                op: "sp_forward",
                lhs: xs,
                rhs: store.value(self.primary).shape(),
            });
        }
        let k = g.param(store, self.primary);
        let primary = g.conv2d(x, k, 1, Padding::Same)?;
        let mut out = match self.cheap {
            Some(id) => {
                let f = g.param(store, id);
                let cheap = g.depthwise_conv2d_mapped(primary, f, self.config.cheap_sources(), 1, Padding::Same)?;
                g.concat_channels(primary, cheap)?
            }
            None => primary,
        };
        if let Some(id) = self.bias {
            let b = g.param(store, id);
            out = g.add_channel_bias(out, b)?;
        }
        Ok(out)
    }

    /// Runs the block on a plain tensor.
    pub fn apply<T: Real>(&self, store: &ParamStore<T>, input: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let x = g.input(input.clone());
        let y = self.forward(&mut g, store, x)?;
        Ok(g.value(y).clone())
    }
}
