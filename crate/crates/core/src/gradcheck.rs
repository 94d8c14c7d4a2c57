//! Central finite-difference checks of the reverse-mode gradients.
//!
//! A check builds a scalar from a closure twice per perturbed coordinate and
//! compares `(f(x + h) - f(x - h)) / 2h` with the analytic gradient. Run it
//! in `f64`; `f32` round-off swamps any useful step size.
//!
//! Tensor-valued outputs are reduced with [`project`], a fixed random linear
//! functional. Plain `sum` would hide errors in any op whose outputs sum to a
//! constant, such as a softmax.

use alloc::string::String;
use alloc::vec::Vec;

// test builds link std, whose inherent float methods shadow these
#[allow(unused_imports)]
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, ParamId, ParamStore, Var};
use crate::tensor::{Shape, Tensor};

/// Default central-difference step.
pub const STEP: f64 = 1e-6;

/// Gradients smaller than this in both the analytic and numeric value count
/// as agreeing; relative error is meaningless at that scale.
pub const ABS_FLOOR: f64 = 1e-8;

/// `sum(out * r)` with `r` uniform in `[-1, 1]` drawn from `seed`.
pub fn project(g: &mut Graph<f64>, out: Var, seed: u64) -> Result<Var> {
    let n = g.value(out).shape().numel();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let flat = g.reshape(out, Shape::matrix(1, n))?;
    let w = g.input(Tensor::from_vec(Shape::new(n, 1, 1, 1), r)?);
    let b = g.input(Tensor::zeros(Shape::scalar()));
    let y = g.fully_connected(flat, w, b)?;
    g.reshape(y, Shape::scalar())
}

/// `|a - n| / max(|a|, |n|)`, or zero when both are below [`ABS_FLOOR`].
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale < ABS_FLOOR {
        0.0
    } else {
        (analytic - numeric).abs() / scale
    }
}

/// `||a - n|| / max(||a||, ||n||)` over one tensor's probed coordinates,
/// zero when both norms are below [`ABS_FLOOR`]. Unlike the per-element
/// ratio this is not dominated by round-off in near-zero components.
pub fn tensor_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut analytic.iter().zip(numeric).map(|(a, n)| a - n));
    let scale = norm(&mut analytic.iter().copied()).max(norm(&mut numeric.iter().copied()));
    if scale < ABS_FLOOR {
        0.0
    } else {
        diff / scale
    }
}

/// Worst disagreement found by a check.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    /// Largest [`tensor_relative_error`] over the checked tensors.
    pub max_rel_error: f64,
    /// Parameter name or `input[k]` of that tensor.
    pub location: String,
    /// Largest per-element [`relative_error`], for diagnosis.
    pub max_element_error: f64,
    /// Coordinates probed in total.
    pub checked: usize,
}

impl Report {
    fn new() -> Self {
        Report { max_rel_error: 0.0, location: String::new(), max_element_error: 0.0, checked: 0 }
    }

    fn record(&mut self, location: String, analytic: &[f64], numeric: &[f64]) {
        let e = tensor_relative_error(analytic, numeric);
        if e > self.max_rel_error || self.location.is_empty() {
            self.max_rel_error = e;
            self.location = location;
        }
        for (&a, &n) in analytic.iter().zip(numeric) {
            self.max_element_error = self.max_element_error.max(relative_error(a, n));
        }
        self.checked += analytic.len();
    }
}

fn scalar(g: &Graph<f64>, v: Var) -> Result<f64> {
    let t = g.value(v);
    if t.shape() != Shape::scalar() {
        return Err(Error::Contract(alloc::format!("gradient check needs a scalar, got {}", t.shape())));
    }
    Ok(t.data()[0])
}

/// Coordinates to probe: all of them up to `limit`, else an even spread.
fn probe_indices(n: usize, limit: usize) -> Vec<usize> {
    if n <= limit {
        (0..n).collect()
    } else {
        (0..limit).map(|k| k * n / limit).collect()
    }
}

/// Checks the gradients with respect to `inputs`. The closure receives the
/// graph and one tracked var per input and returns a scalar.
pub fn check_inputs<F>(inputs: &[Tensor<f64>], store: &ParamStore<f64>, limit: usize, f: F) -> Result<Report>
where
    F: Fn(&mut Graph<f64>, &[Var], &ParamStore<f64>) -> Result<Var>,
{
    let eval = |xs: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|x| g.input(x.clone())).collect();
        let out = f(&mut g, &vars, store)?;
        scalar(&g, out)
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|x| g.input_with_grad(x.clone())).collect();
    let out = f(&mut g, &vars, store)?;
    scalar(&g, out)?;
    let mut scratch = store.clone();
    let grads = g.backward(out, &mut scratch)?;

    let mut report = Report::new();
    let mut xs = inputs.to_vec();
    for (k, var) in vars.iter().enumerate() {
        let n = inputs[k].shape().numel();
        let zeros = Tensor::zeros(inputs[k].shape());
        let grad = grads.get(*var).unwrap_or(&zeros).data();
        let (mut analytic, mut numeric) = (Vec::new(), Vec::new());
        for i in probe_indices(n, limit) {
            let orig = xs[k].data()[i];
            xs[k].data_mut()[i] = orig + STEP;
            let plus = eval(&xs)?;
            xs[k].data_mut()[i] = orig - STEP;
            let minus = eval(&xs)?;
            xs[k].data_mut()[i] = orig;
            analytic.push(grad[i]);
            numeric.push((plus - minus) / (2.0 * STEP));
        }
        report.record(alloc::format!("input[{k}]"), &analytic, &numeric);
    }
    Ok(report)
}

/// Checks the gradients of every parameter in `store`, probing at most
/// `limit` coordinates per parameter.
pub fn check_params<F>(store: &mut ParamStore<f64>, limit: usize, f: F) -> Result<Report>
where
    F: Fn(&mut Graph<f64>, &ParamStore<f64>) -> Result<Var>,
{
    let eval = |s: &ParamStore<f64>| -> Result<f64> {
        let mut g = Graph::new();
        let out = f(&mut g, s)?;
        scalar(&g, out)
    };
    store.zero_grads();
    let mut g = Graph::new();
    let out = f(&mut g, store)?;
    scalar(&g, out)?;
    g.backward(out, store)?;

    let mut report = Report::new();
    for id in (0..store.len()).map(ParamId) {
        let name = store.get(id).name.clone();
        let grad: Vec<f64> = match store.value(id).grad() {
            Some(gr) => gr.to_vec(),
            None => alloc::vec![0.0; store.value(id).shape().numel()],
        };
        let (mut analytic, mut numeric) = (Vec::new(), Vec::new());
        for i in probe_indices(grad.len(), limit) {
            let orig = store.value(id).data()[i];
            store.value_mut(id).data_mut()[i] = orig + STEP;
            let plus = eval(store)?;
            store.value_mut(id).data_mut()[i] = orig - STEP;
            let minus = eval(store)?;
            store.value_mut(id).data_mut()[i] = orig;
            analytic.push(grad[i]);
            numeric.push((plus - minus) / (2.0 * STEP));
        }
        report.record(name, &analytic, &numeric);
    }
    Ok(report)
}

/// One named case of [`suite`].
#[derive(Debug, Clone, PartialEq)]
pub struct CaseResult {
    pub name: &'static str,
    pub report: Report,
}

fn random(shape: Shape, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let data = (0..shape.numel()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::from_vec(shape, data).expect("numel matches")
}

/// Moves every parameter off its initial value so unit gains and zero
/// biases do not hide errors.
fn perturb(store: &mut ParamStore<f64>, rng: &mut ChaCha8Rng) {
    for p in store.iter_mut() {
        p.value.data_mut().iter_mut().for_each(|v| *v += rng.gen_range(-0.2..0.2));
    }
}

/// Parameter and input checks of a block, its output reduced by [`project`].
fn block_checks<F>(store: &mut ParamStore<f64>, x: &Tensor<f64>, limit: usize, f: F) -> Result<(Report, Report)>
where
    F: Fn(&mut Graph<f64>, &ParamStore<f64>, Var) -> Result<Var>,
{
    let params = check_params(store, limit, |g, s| {
        let xv = g.input(x.clone());
        let y = f(g, s, xv)?;
        project(g, y, 21)
    })?;
    let input = check_inputs(core::slice::from_ref(x), store, limit, |g, v, s| {
        let y = f(g, s, v[0])?;
        project(g, y, 22)
    })?;
    Ok((params, input))
}

/// Gradient checks of every differentiable building block and of the toy
/// network under both losses, on random tensors drawn from `seed`.
/// Probing is capped at `limit` coordinates per tensor.
pub fn suite(seed: u64, limit: usize) -> Result<Vec<CaseResult>> {
    use crate::blocks::{AttentionBlock, AttentionConfig, LayerNormParams, SpBlock, SpConfig, SpaBlock, SpaConfig};
    use crate::loss::{CircleLossConfig, Weighting};
    use crate::network::{build_network, NetworkConfig};
    use crate::tensor::Padding;
    use crate::train::{loss_graph, LossKind};

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let empty = ParamStore::new();
    let mut push = |name, report| out.push(CaseResult { name, report });

    let x = random(Shape::new(2, 3, 6, 5), &mut rng);
    let k = random(Shape::new(4, 3, 3, 3), &mut rng);
    for (name, stride, pad) in [("conv2d same", 1, Padding::Same), ("conv2d stride 2", 2, Padding::Same), ("conv2d valid", 1, Padding::Valid)] {
        let r = check_inputs(&[x.clone(), k.clone()], &empty, limit, |g, v, _| {
            let y = g.conv2d(v[0], v[1], stride, pad)?;
            project(g, y, 11)
        })?;
        push(name, r);
    }

    let f = random(Shape::new(3, 1, 3, 3), &mut rng);
    for (name, stride) in [("depthwise", 1), ("depthwise stride 2", 2)] {
        let r = check_inputs(&[x.clone(), f.clone()], &empty, limit, |g, v, _| {
            let y = g.depthwise_conv2d(v[0], v[1], stride, Padding::Same)?;
            project(g, y, 12)
        })?;
        push(name, r);
    }

    let gain = random(Shape::new(1, 3, 1, 1), &mut rng);
    let bias = random(Shape::new(1, 3, 1, 1), &mut rng);
    let r = check_inputs(&[x.clone(), gain, bias], &empty, limit, |g, v, _| {
        let y = g.layer_norm(v[0], v[1], v[2], 1e-5)?;
        project(g, y, 13)
    })?;
    push("layer norm", r);

    let r = check_inputs(&[x.clone()], &empty, limit, |g, v, _| {
        let y = g.spatial_softmax(v[0]);
        project(g, y, 14)
    })?;
    push("spatial softmax", r);

    let logits = random(Shape::matrix(3, 4), &mut rng);
    let r = check_inputs(&[logits], &empty, limit, |g, v, _| g.cross_entropy(v[0], &[0, 3, 1]))?;
    push("cross entropy", r);

    let emb = random(Shape::matrix(4, 5), &mut rng);
    let prox = random(Shape::matrix(3, 5), &mut rng);
    // pinned weights have no margins, so at the default scale random scores
    // saturate the softplus and leave gradients at round-off level
    for (name, weighting, gamma) in [
        ("circle loss self-paced", Weighting::SelfPaced, CircleLossConfig::default().gamma),
        ("circle loss pinned", Weighting::Pinned, 4.0),
    ] {
        let cfg = CircleLossConfig { weighting, gamma, ..CircleLossConfig::default() };
        let r = check_inputs(&[emb.clone(), prox.clone()], &empty, limit, |g, v, _| g.circle_loss(v[0], &[0, 2, 1, 2], v[1], &cfg))?;
        push(name, r);
    }

    let xb = random(Shape::new(2, 8, 4, 4), &mut rng);
    let mut store = ParamStore::new();
    let ln = LayerNormParams::new(&mut store, "ln", 8);
    perturb(&mut store, &mut rng);
    let (r1, r2) = block_checks(&mut store, &xb, limit, |g, s, x| ln.forward(g, s, x))?;
    push("layer norm params", r1);
    push("layer norm block input", r2);

    let mut store = ParamStore::new();
    let att = AttentionBlock::new(&mut store, &mut rng, "att", AttentionConfig::new(8, 4)?);
    perturb(&mut store, &mut rng);
    let (r1, r2) = block_checks(&mut store, &xb, limit, |g, s, x| att.forward(g, s, x))?;
    push("attention params", r1);
    push("attention input", r2);

    let mut store = ParamStore::new();
    let sp = SpBlock::new(&mut store, &mut rng, "sp", SpConfig::new(8, 6, 0.5)?.with_bias())?;
    perturb(&mut store, &mut rng);
    let (r1, r2) = block_checks(&mut store, &xb, limit, |g, s, x| sp.forward(g, s, x))?;
    push("SP params", r1);
    push("SP input", r2);

    for (name_p, name_x, stride, out_c) in [("SP&A residual params", "SP&A residual input", 1, 8), ("SP&A stride 2 params", "SP&A stride 2 input", 2, 6)] {
        let cfg = SpaConfig { in_channels: 8, out_channels: out_c, expansion: 12, stride, ratio: 0.5, attention: true, reduction: 4 };
        let mut store = ParamStore::new();
        let spa = SpaBlock::new(&mut store, &mut rng, "spa", cfg)?;
        perturb(&mut store, &mut rng);
        let (r1, r2) = block_checks(&mut store, &xb, limit, |g, s, x| spa.forward(g, s, x))?;
        push(name_p, r1);
        push(name_x, r2);
    }

    let net_cfg = NetworkConfig::toy(4);
    let input = random(net_cfg.input_shape(2), &mut rng);
    let labels = [1, 3];
    for (name, kind) in [("toy network circle", LossKind::Circle(CircleLossConfig::default())), ("toy network cross entropy", LossKind::CrossEntropy)] {
        let net = build_network::<f64>(&net_cfg, seed)?;
        let mut params = net.params.clone();
        perturb(&mut params, &mut rng);
        let r = check_params(&mut params, limit.min(3), |g, s| {
            let mut net = net.clone();
            net.params = s.clone();
            let x = g.input(input.clone());
            let v = net.forward_graph(g, x)?;
            loss_graph(&net, g, v, &labels, &kind)
        })?;
        push(name, r);
    }
    Ok(out)
}
