//! Analytical parameter and FLOPs accounting.
//!
//! Conventions, also written into every report's `assumptions`:
//! - one multiply-accumulate is 2 FLOPs;
//! - a k x k convolution costs `2 * C_in * k^2 * H_out * W_out * C_out`, a
//!   depthwise one `2 * k^2 * H_out * W_out * C`, a dense layer `2 * in * out`;
//! - normalization, activation, softmax, pooling sums, bias and residual adds
//!   are counted as one element op per element they produce or read, kept in
//!   a separate `elementwise` column;
//! - parameters include every weight, bias and layer-norm gain/bias.
//!
//! All counts are exact integers.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write;

use crate::blocks::{AttentionConfig, SpConfig, SpaConfig, CHEAP_KERNEL, DEPTHWISE_KERNEL};
use crate::error::Result;
use crate::network::{NetworkConfig, STEM_KERNEL};

pub const FLOPS_PER_MAC: u64 = 2;

pub const ASSUMPTIONS: &str = "1 MAC = 2 FLOPs; conv/dense FLOPs in `flops`; \
normalization, activation, softmax, pooling sums, bias and residual adds as 1 op per element in `elementwise`; \
params include biases and layer-norm gain/bias";

/// Ratio grid of the composition-ratio ablation.
pub const RATIO_GRID: [f64; 6] = [0.06, 0.13, 0.25, 0.50, 0.63, 0.83];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerCost {
    pub name: String,
    pub params: u64,
    pub flops: u64,
    pub elementwise: u64,
    /// Output `(channels, height, width)`.
    pub output: (usize, usize, usize),
}

impl LayerCost {
    fn new(name: impl Into<String>, params: usize, flops: u64, elementwise: u64, output: (usize, usize, usize)) -> Self {
        LayerCost {
            name: name.into(),
            params: params as u64,
            flops,
            elementwise,
            output,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CostReport {
    pub layers: Vec<LayerCost>,
    pub assumptions: String,
}

fn u(x: usize) -> u64 {
    x as u64
}

pub fn conv_flops(c_in: usize, c_out: usize, kernel: usize, h_out: usize, w_out: usize) -> u64 {
    FLOPS_PER_MAC * u(c_in) * u(kernel * kernel) * u(h_out) * u(w_out) * u(c_out)
}

pub fn depthwise_flops(channels: usize, kernel: usize, h_out: usize, w_out: usize) -> u64 {
    FLOPS_PER_MAC * u(kernel * kernel) * u(h_out) * u(w_out) * u(channels)
}

pub fn dense_flops(inputs: usize, outputs: usize) -> u64 {
    FLOPS_PER_MAC * u(inputs) * u(outputs)
}

pub fn conv_params(c_in: usize, c_out: usize, kernel: usize, bias: bool) -> usize {
    c_in * c_out * kernel * kernel + if bias { c_out } else { 0 }
}

/// SP block on an `h x w` map (the block preserves resolution).
pub fn sp_block_cost(name: &str, cfg: &SpConfig, h: usize, w: usize) -> LayerCost {
    let (cin, cp, cc) = (cfg.in_channels, cfg.primary_channels(), cfg.cheap_channels());
    let flops = conv_flops(cin, cp, 1, h, w) + depthwise_flops(cc, CHEAP_KERNEL, h, w);
    let bias = if cfg.bias { u(cfg.out_channels * h * w) } else { 0 };
    LayerCost::new(name, cfg.param_count(), flops, bias, (cfg.out_channels, h, w))
}

/// Ratio of SP-block FLOPs to those of a standard 1x1 conv with the same
/// channels (resolution cancels).
pub fn sp_flops_ratio(c_in: usize, c_out: usize, ratio: f64) -> Result<f64> {
    let cfg = SpConfig::new(c_in, c_out, ratio)?;
    Ok(sp_block_cost("sp", &cfg, 1, 1).flops as f64 / conv_flops(c_in, c_out, 1, 1, 1) as f64)
}

pub fn layer_norm_cost(name: &str, channels: usize, h: usize, w: usize) -> LayerCost {
    // normalize + affine, then the activation that follows it
    LayerCost::new(name, 2 * channels, 0, u(2 * channels * h * w), (channels, h, w))
}

/// Global-context attention on a `C x h x w` map.
pub fn attention_cost(name: &str, cfg: &AttentionConfig, h: usize, w: usize) -> LayerCost {
    let (c, hid, hw) = (cfg.channels, cfg.hidden(), h * w);
    let flops = conv_flops(c, 1, 1, h, w) // pooling logits
        + FLOPS_PER_MAC * u(c * hw) // weighted pool
        + dense_flops(c, hid)
        + dense_flops(hid, c);
    // softmax, bottleneck LN + ReLU, broadcast add
    let elementwise = u(hw) + u(2 * hid) + u(c * hw);
    LayerCost::new(name, cfg.param_count(), flops, elementwise, (c, h, w))
}

/// Sub-layer costs of one SP&A block entered at `h x w`.
pub fn spa_block_costs(prefix: &str, cfg: &SpaConfig, h: usize, w: usize) -> Result<Vec<LayerCost>> {
    let e = cfg.expansion;
    let (ho, wo) = (h.div_ceil(cfg.stride), w.div_ceil(cfg.stride));
    let mut out = vec![
        sp_block_cost(&format!("{prefix}.expand"), &cfg.expand_config()?, h, w),
        layer_norm_cost(&format!("{prefix}.expand_ln"), e, h, w),
        LayerCost::new(
            format!("{prefix}.depthwise"),
            e * DEPTHWISE_KERNEL * DEPTHWISE_KERNEL,
            depthwise_flops(e, DEPTHWISE_KERNEL, ho, wo),
            0,
            (e, ho, wo),
        ),
        layer_norm_cost(&format!("{prefix}.depthwise_ln"), e, ho, wo),
    ];
    if let Some(att) = cfg.attention_config() {
        out.push(attention_cost(&format!("{prefix}.attention"), &att, ho, wo));
    }
    out.push(sp_block_cost(&format!("{prefix}.compress"), &cfg.compress_config()?, ho, wo));
    let mut norm = layer_norm_cost(&format!("{prefix}.compress_ln"), cfg.out_channels, ho, wo);
    norm.elementwise /= 2; // no activation after the compression
    out.push(norm);
    if cfg.use_residual() {
        out.push(LayerCost::new(
            format!("{prefix}.residual"),
            0,
            0,
            u(cfg.out_channels * ho * wo),
            (cfg.out_channels, ho, wo),
        ));
    }
    Ok(out)
}

/// Per-layer report of a whole network. Layer names match the parameter-name
/// prefixes of the built network.
pub fn network_cost(cfg: &NetworkConfig) -> Result<CostReport> {
    cfg.validate()?;
    let res = cfg.resolutions()?;
    let (cin, s) = (cfg.input_channels, cfg.stem_channels);
    let (h, w) = res[1];
    let mut layers = vec![
        LayerCost::new(
            "stem.conv",
            conv_params(cin, s, STEM_KERNEL, false),
            conv_flops(cin, s, STEM_KERNEL, h, w),
            0,
            (s, h, w),
        ),
        layer_norm_cost("stem.ln", s, h, w),
    ];
    for (i, block) in cfg.block_configs()?.iter().enumerate() {
        let (h, w) = res[i + 1];
        layers.extend(spa_block_costs(&format!("blocks.{i:02}"), block, h, w)?);
    }
    let (h, w) = *res.last().expect("resolutions");
    let (cf, h1, h2, nc) = (cfg.final_channels(), cfg.head_width_1, cfg.head_width_2, cfg.num_classes);
    layers.extend([
        LayerCost::new("head.conv1", conv_params(cf, h1, 1, false), conv_flops(cf, h1, 1, h, w), 0, (h1, h, w)),
        layer_norm_cost("head.ln", h1, h, w),
        LayerCost::new("head.pool", 0, 0, u(h1 * h * w), (h1, 1, 1)),
        // bias + ReLU
        LayerCost::new("head.conv2", conv_params(h1, h2, 1, true), dense_flops(h1, h2), u(2 * h2), (h2, 1, 1)),
        LayerCost::new("fc", h2 * nc + nc, dense_flops(h2, nc), u(nc), (nc, 1, 1)),
    ]);
    Ok(CostReport {
        layers,
        assumptions: ASSUMPTIONS.into(),
    })
}

/// `(ratio, total params, total FLOPs)` for each ratio, other fields fixed.
pub fn ratio_sweep(cfg: &NetworkConfig, ratios: &[f64]) -> Result<Vec<(f64, u64, u64)>> {
    ratios
        .iter()
        .map(|&r| {
            let report = network_cost(&NetworkConfig { ratio: r, ..cfg.clone() })?;
            Ok((r, report.total_params(), report.total_flops()))
        })
        .collect()
}

impl CostReport {
    pub fn total_params(&self) -> u64 {
        self.layers.iter().map(|l| l.params).sum()
    }

    pub fn total_flops(&self) -> u64 {
        self.layers.iter().map(|l| l.flops).sum()
    }

    pub fn total_elementwise(&self) -> u64 {
        self.layers.iter().map(|l| l.elementwise).sum()
    }

    /// Aligned text table with a totals block and the assumptions line.
    pub fn to_text(&self) -> String {
        let name_w = self.layers.iter().map(|l| l.name.len()).max().unwrap_or(0).max(5);
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<name_w$}  {:>14}  {:>12}  {:>16}  {:>14}",
            "layer", "output", "params", "flops", "elementwise"
        );
        let _ = writeln!(s, "{}", "-".repeat(name_w + 64));
        for l in &self.layers {
            let (c, h, w) = l.output;
            let _ = writeln!(
                s,
                "{:<name_w$}  {:>14}  {:>12}  {:>16}  {:>14}",
                l.name,
                format!("{c}x{h}x{w}"),
                l.params,
                l.flops,
                l.elementwise
            );
        }
        let _ = writeln!(s, "{}", "-".repeat(name_w + 64));
        let _ = writeln!(
            s,
            "{:<name_w$}  {:>14}  {:>12}  {:>16}  {:>14}",
            "total",
            "",
            self.total_params(),
            self.total_flops(),
            self.total_elementwise()
        );
        let _ = writeln!(
            s,
            "params {:.3}M, conv/dense {:.3}G FLOPs, element ops {:.3}G",
            self.total_params() as f64 / 1e6,
            self.total_flops() as f64 / 1e9,
            self.total_elementwise() as f64 / 1e9
        );
        let _ = writeln!(s, "assumptions: {}", self.assumptions);
        s
    }

    /// `layer,channels,height,width,params,flops,elementwise` rows plus a
    /// final `total` row.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("layer,channels,height,width,params,flops,elementwise\n");
        for l in &self.layers {
            let (c, h, w) = l.output;
            let _ = writeln!(s, "{},{c},{h},{w},{},{},{}", l.name, l.params, l.flops, l.elementwise);
        }
        let _ = writeln!(
            s,
            "total,,,,{},{},{}",
            self.total_params(),
            self.total_flops(),
            self.total_elementwise()
        );
        s
    }
}

/// Closed-form costs of well-known attention blocks on a `C x h x w` map,
/// for side-by-side tables. None of these has an executable counterpart.
pub mod baselines {
    use super::*;

    /// Squeeze-and-excitation: pool, FC `C -> C/r` (+bias), ReLU,
    /// FC `C/r -> C` (+bias), sigmoid, channel rescale.
    pub fn squeeze_excitation(c: usize, reduction: usize, h: usize, w: usize) -> LayerCost {
        let hid = c.div_ceil(reduction).max(1);
        let params = c * hid + hid + hid * c + c;
        let flops = dense_flops(c, hid) + dense_flops(hid, c);
        let elementwise = u(c * h * w) + u(hid) + u(c) + u(c * h * w);
        LayerCost::new("squeeze_excitation", params, flops, elementwise, (c, h, w))
    }

    /// Embedded-Gaussian non-local block with `C/2` inner width: three 1x1
    /// projections, the `HW x HW` affinity, softmax, aggregation and the
    /// output 1x1 conv, plus the residual add.
    pub fn non_local(c: usize, h: usize, w: usize) -> LayerCost {
        let (inner, hw) = (c.div_ceil(2).max(1), h * w);
        let params = 3 * c * inner + inner * c;
        let flops = 3 * conv_flops(c, inner, 1, h, w)
            + FLOPS_PER_MAC * u(hw) * u(hw) * u(inner) // affinity
            + FLOPS_PER_MAC * u(hw) * u(hw) * u(inner) // aggregation
            + conv_flops(inner, c, 1, h, w);
        let elementwise = u(hw) * u(hw) + u(c * hw);
        LayerCost::new("non_local", params, flops, elementwise, (c, h, w))
    }

    /// Simplified non-local: query-independent softmax pooling followed by a
    /// full `C x C` transform and a broadcast add.
    pub fn simplified_non_local(c: usize, h: usize, w: usize) -> LayerCost {
        let hw = h * w;
        let params = c + c * c;
        let flops = conv_flops(c, 1, 1, h, w) + FLOPS_PER_MAC * u(c * hw) + dense_flops(c, c);
        let elementwise = u(hw) + u(c * hw);
        LayerCost::new("simplified_non_local", params, flops, elementwise, (c, h, w))
    }

    /// Global-context block; the same formula as the network's own attention.
    pub fn global_context(c: usize, reduction: usize, h: usize, w: usize) -> LayerCost {
        let mut cost = attention_cost("global_context", &AttentionConfig { channels: c, reduction }, h, w);
        cost.name = "global_context".into();
        cost
    }

    pub fn all(c: usize, reduction: usize, h: usize, w: usize) -> CostReport {
        CostReport {
            layers: vec![
                squeeze_excitation(c, reduction, h, w),
                non_local(c, h, w),
                simplified_non_local(c, h, w),
                global_context(c, reduction, h, w),
            ],
            assumptions: ASSUMPTIONS.into(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pointwise_conv_examples() {
        assert_eq!(conv_params(16, 16, 1, false), 256);
        assert_eq!(conv_flops(3, 8, 1, 4, 4), 768);
        let sp = SpConfig::new(4, 16, 0.5).unwrap();
        assert_eq!(sp_block_cost("sp", &sp, 8, 8).params, 104);
    }

    #[test]
    fn sp_halves_pointwise_cost() {
        let r = sp_flops_ratio(128, 128, 0.5).unwrap();
        assert!((r - (128.0 * 64.0 + 9.0 * 64.0) / (128.0 * 128.0)).abs() < 1e-12);
        assert!(r <= 0.55);
    }

    #[test]
    fn single_pixel_is_pure_channel_mixing() {
        let sp = SpConfig::new(32, 32, 0.5).unwrap();
        let c = sp_block_cost("sp", &sp, 1, 1);
        assert_eq!(c.flops, 2 * (32 * 16 + 9 * 16));
    }

    #[test]
    fn totals_are_sums() {
        let r = network_cost(&NetworkConfig::toy(4)).unwrap();
        assert_eq!(r.total_params(), r.layers.iter().map(|l| l.params).sum::<u64>());
        assert!(r.to_csv().lines().last().unwrap().starts_with("total,"));
        assert!(r.to_text().contains("assumptions:"));
    }

    #[test]
    fn baselines_have_expected_params() {
        assert_eq!(baselines::squeeze_excitation(64, 16, 8, 8).params, 64 * 4 + 4 + 4 * 64 + 64);
        assert_eq!(baselines::global_context(64, 8, 8, 8).params, 64 + 2 * 64 * 8 + 16);
        assert_eq!(baselines::simplified_non_local(64, 8, 8).params, 64 + 64 * 64);
    }
}
