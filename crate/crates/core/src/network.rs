//! Whole-network assembly from a stage table.
//!
//! Layer sequence: 3x3 stem conv (stride 2) -> LN -> ReLU -> SP&A blocks ->
//! 1x1 conv to `head_width_1` -> LN -> ReLU -> global average pool -> 1x1
//! conv to `head_width_2` (+bias) -> ReLU -> fully connected to the classes.
//! The post-ReLU `head_width_2` vector is the embedding used by circle loss,
//! and the rows of the transposed classifier matrix are its class proxies.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::blocks::{AttentionConfig, LayerNormParams, SpaBlock, SpaConfig};
use crate::error::{Error, Result};
use crate::graph::{Graph, ParamId, ParamStore, Var};
use crate::init::xavier_uniform;
use crate::real::Real;
use crate::tensor::{Padding, Shape, Tensor};

/// One SP&A row of the stage table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageRow {
    pub out_channels: usize,
    pub expansion: usize,
    pub stride: usize,
    pub attention: bool,
}

/// The reference stage table: `(input side, input channels, output, expansion)`
/// for each SP&A row. Strides are not listed; see [`strides_from_inputs`].
pub const STAGE_TABLE: [(usize, usize, usize, usize); 15] = [
    (256, 16, 16, 16),
    (256, 16, 24, 48),
    (128, 24, 24, 72),
    (128, 24, 48, 72),
    (64, 48, 48, 120),
    (64, 48, 96, 240),
    (32, 96, 96, 200),
    (32, 96, 96, 184),
    (32, 96, 96, 184),
    (32, 96, 144, 480),
    (32, 144, 144, 672),
    (32, 144, 192, 672),
    (16, 192, 192, 960),
    (16, 192, 192, 960),
    (16, 192, 192, 960),
];

/// Input side of the head 1x1 conv in the stage table.
pub const HEAD_INPUT_SIDE: usize = 16;

/// A row gets stride 2 when the next row's input side is half of its own.
/// `inputs` lists each row's input side followed by the side after the last row.
pub fn strides_from_inputs(inputs: &[usize]) -> Result<Vec<usize>> {
    inputs
        .windows(2)
        .map(|w| match (w[0], w[1]) {
            (a, b) if a == b => Ok(1),
            (a, b) if a == 2 * b => Ok(2),
            (a, b) => Err(Error::Config(format!("cannot step resolution {a} -> {b} with stride 1 or 2"))),
        })
        .collect()
}

pub fn paper_rows() -> Vec<StageRow> {
    let mut sides: Vec<usize> = STAGE_TABLE.iter().map(|r| r.0).collect();
    sides.push(HEAD_INPUT_SIDE);
    let strides = strides_from_inputs(&sides).expect("stage table is consistent");
    STAGE_TABLE
        .iter()
        .zip(strides)
        .map(|(&(_, _, out, exp), stride)| StageRow {
            out_channels: out,
            expansion: exp,
            stride,
            attention: true,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkConfig {
    pub input_channels: usize,
    pub input_height: usize,
    pub input_width: usize,
    pub stem_channels: usize,
    pub rows: Vec<StageRow>,
    pub head_width_1: usize,
    pub head_width_2: usize,
    pub num_classes: usize,
    /// Composition ratio of every SP block.
    pub ratio: f64,
    pub attention_reduction: usize,
}

pub const STEM_KERNEL: usize = 3;
pub const STEM_STRIDE: usize = 2;

impl NetworkConfig {
    /// The full-size architecture on 512x512x3 input.
    pub fn paper(num_classes: usize) -> Self {
        NetworkConfig {
            input_channels: 3,
            input_height: 512,
            input_width: 512,
            stem_channels: 16,
            rows: paper_rows(),
            head_width_1: 960,
            head_width_2: 1280,
            num_classes,
            ratio: 0.5,
            attention_reduction: AttentionConfig::DEFAULT_REDUCTION,
        }
    }

    /// Four-block variant on 64x64x3 input for desk-scale experiments.
    pub fn toy(num_classes: usize) -> Self {
        let row = |out, exp, stride| StageRow {
            out_channels: out,
            expansion: exp,
            stride,
            attention: true,
        };
        NetworkConfig {
            input_channels: 3,
            input_height: 64,
            input_width: 64,
            stem_channels: 16,
            rows: vec![row(16, 32, 2), row(24, 48, 2), row(24, 72, 1), row(32, 96, 2)],
            head_width_1: 96,
            head_width_2: 128,
            num_classes,
            ratio: 0.5,
            attention_reduction: AttentionConfig::DEFAULT_REDUCTION,
        }
    }

    pub fn input_shape(&self, batch: usize) -> Shape {
        Shape::new(batch, self.input_channels, self.input_height, self.input_width)
    }

    /// `(height, width)` entering the stem, each SP&A row, and the head.
    pub fn resolutions(&self) -> Result<Vec<(usize, usize)>> {
        let step = |side: usize, stride: usize, what: &str| -> Result<usize> {
            if stride == 2 && side % 2 != 0 {
                return Err(Error::Config(format!("{what}: stride 2 on odd side {side}")));
            }
            Padding::Same
                .output_len(side, STEM_KERNEL, stride)
                .ok_or_else(|| Error::Config(format!("{what}: invalid resolution {side}")))
        };
        let mut res = vec![(self.input_height, self.input_width)];
        let (mut h, mut w) = (
            step(self.input_height, STEM_STRIDE, "stem")?,
            step(self.input_width, STEM_STRIDE, "stem")?,
        );
        res.push((h, w));
        for (i, row) in self.rows.iter().enumerate() {
            if !(row.stride == 1 || row.stride == 2) {
                return Err(Error::Config(format!("row {i}: stride must be 1 or 2, got {}", row.stride)));
            }
            let what = format!("row {i}");
            h = step(h, row.stride, &what)?;
            w = step(w, row.stride, &what)?;
            res.push((h, w));
        }
        Ok(res)
    }

    pub fn block_configs(&self) -> Result<Vec<SpaConfig>> {
        let mut cin = self.stem_channels;
        self.rows
            .iter()
            .map(|row| {
                let cfg = SpaConfig {
                    in_channels: cin,
                    out_channels: row.out_channels,
                    expansion: row.expansion,
                    stride: row.stride,
                    ratio: self.ratio,
                    attention: row.attention,
                    reduction: self.attention_reduction,
                };
                cfg.validate()?;
                cin = row.out_channels;
                Ok(cfg)
            })
            .collect()
    }

    /// Channels entering the head.
    pub fn final_channels(&self) -> usize {
        self.rows.last().map_or(self.stem_channels, |r| r.out_channels)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("input_channels", self.input_channels),
            ("stem_channels", self.stem_channels),
            ("head_width_1", self.head_width_1),
            ("head_width_2", self.head_width_2),
            ("num_classes", self.num_classes),
            ("attention_reduction", self.attention_reduction),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        self.resolutions()?;
        self.block_configs()?;
        Ok(())
    }
}

/// Logits and embedding of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput<T> {
    /// `(n, num_classes)`.
    pub logits: Tensor<T>,
    /// `(n, head_width_2)`.
    pub embedding: Tensor<T>,
}

/// Graph handles of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ForwardVars {
    pub logits: Var,
    pub embedding: Var,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    pub config: NetworkConfig,
    pub params: ParamStore<T>,
    pub stem: ParamId,
    pub stem_norm: LayerNormParams,
    pub blocks: Vec<SpaBlock>,
    pub head_conv1: ParamId,
    pub head_norm: LayerNormParams,
    pub head_conv2: ParamId,
    pub head_bias2: ParamId,
    /// `(head_width_2, num_classes)` classifier matrix.
    pub fc_weights: ParamId,
    pub fc_bias: ParamId,
}

/// Builds the network with Xavier-uniform weights drawn from one seeded
/// stream in construction order; unit LN gains, zero biases.
pub fn build_network<T: Real>(config: &NetworkConfig, seed: u64) -> Result<Network<T>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let (cin, s, k) = (config.input_channels, config.stem_channels, STEM_KERNEL);
    let stem = store.add(
        "stem.conv",
        vec![s, cin, k, k],
        xavier_uniform(Shape::new(s, cin, k, k), cin * k * k, s * k * k, &mut rng),
    );
    let stem_norm = LayerNormParams::new(&mut store, "stem.ln", s);
    let mut blocks = Vec::with_capacity(config.rows.len());
    for (i, cfg) in config.block_configs()?.into_iter().enumerate() {
        blocks.push(SpaBlock::new(&mut store, &mut rng, &format!("blocks.{i:02}"), cfg)?);
    }
    let (cf, h1, h2, nc) = (config.final_channels(), config.head_width_1, config.head_width_2, config.num_classes);
    let head_conv1 = store.add(
        "head.conv1",
        vec![h1, cf, 1, 1],
        xavier_uniform(Shape::new(h1, cf, 1, 1), cf, h1, &mut rng),
    );
    let head_norm = LayerNormParams::new(&mut store, "head.ln", h1);
    let head_conv2 = store.add(
        "head.conv2",
        vec![h2, h1, 1, 1],
        xavier_uniform(Shape::new(h2, h1, 1, 1), h1, h2, &mut rng),
    );
    let head_bias2 = store.add("head.conv2_bias", vec![h2], Tensor::zeros(Shape::new(1, h2, 1, 1)));
    let fc_weights = store.add(
        "fc.weight",
        vec![h2, nc],
        xavier_uniform(Shape::matrix(h2, nc), h2, nc, &mut rng),
    );
    let fc_bias = store.add("fc.bias", vec![nc], Tensor::zeros(Shape::new(1, nc, 1, 1)));
    Ok(Network {
        config: config.clone(),
        params: store,
        stem,
        stem_norm,
        blocks,
        head_conv1,
        head_norm,
        head_conv2,
        head_bias2,
        fc_weights,
        fc_bias,
    })
}

impl<T: Real> Network<T> {
    /// Records the forward pass of `x` on `g`.
    pub fn forward_graph(&self, g: &mut Graph<T>, x: Var) -> Result<ForwardVars> {
        let xs = g.value(x).shape();
        let want = self.config.input_shape(xs.n);
        if xs != want {
            return Err(Error::Dimension { op: "network_forward", lhs: xs, rhs: want });
        }
        let p = &self.params;
        let k = g.param(p, self.stem);
        let mut h = g.conv2d(x, k, STEM_STRIDE, Padding::Same)?;
        h = self.stem_norm.forward(g, p, h)?;
        h = g.relu(h);
        for block in &self.blocks {
            h = block.forward(g, p, h)?;
        }
        let k = g.param(p, self.head_conv1);
        h = g.conv2d(h, k, 1, Padding::Valid)?;
        h = self.head_norm.forward(g, p, h)?;
        h = g.relu(h);
        h = g.global_avg_pool(h)?;
        let k = g.param(p, self.head_conv2);
        h = g.conv2d(h, k, 1, Padding::Valid)?;
        let b = g.param(p, self.head_bias2);
        h = g.add_channel_bias(h, b)?;
        let embedding = g.relu(h);
        let w = g.param(p, self.fc_weights);
        let b = g.param(p, self.fc_bias);
        let logits = g.fully_connected(embedding, w, b)?;
        Ok(ForwardVars { logits, embedding })
    }

    /// Class proxies `(num_classes, head_width_2)`: the transposed classifier.
    pub fn proxies_graph(&self, g: &mut Graph<T>) -> Result<Var> {
        let w = g.param(&self.params, self.fc_weights);
        g.transpose(w)
    }

    /// Forward pass on a plain batch. The network has no train-only layers
    /// (layer norm is per sample), so `train_mode` does not change the result.
    pub fn forward(&self, batch: &Tensor<T>, train_mode: bool) -> Result<ForwardOutput<T>> {
        let _ = train_mode;
        let mut g = Graph::new();
        let x = g.input(batch.clone());
        let vars = self.forward_graph(&mut g, x)?;
        Ok(ForwardOutput {
            logits: g.value(vars.logits).clone(),
            embedding: g.value(vars.embedding).clone(),
        })
    }

    pub fn num_params(&self) -> usize {
        self.params.num_scalars()
    }

    /// Same network with every weight converted to another precision.
    pub fn cast<U: Real>(&self) -> Network<U> {
        Network {
            config: self.config.clone(),
            params: self.params.cast(),
            stem: self.stem,
            stem_norm: self.stem_norm,
            blocks: self.blocks.clone(),
            head_conv1: self.head_conv1,
            head_norm: self.head_norm,
            head_conv2: self.head_conv2,
            head_bias2: self.head_bias2,
            fc_weights: self.fc_weights,
            fc_bias: self.fc_bias,
        }
    }
}
