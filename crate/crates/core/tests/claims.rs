//! Closed-form facts about the blocks, loss, optimizer and metrics.

use core::f64::consts::LN_2;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use spanet_core::blocks::{AttentionBlock, AttentionConfig};
use spanet_core::loss::{circle_loss_scores, CircleLossConfig, Weighting};
use spanet_core::metrics::{f1_score, MetricsReport};
use spanet_core::network::{build_network, paper_rows, NetworkConfig, STAGE_TABLE};
use spanet_core::optim::{LrSchedule, Nag};
use spanet_core::{ParamStore, Shape, Tensor};

fn random(shape: Shape, seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_vec(shape, (0..shape.numel()).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap()
}

fn attention(c: usize, seed: u64) -> (ParamStore<f64>, AttentionBlock) {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let block = AttentionBlock::new(&mut store, &mut rng, "att", AttentionConfig::new(c, 4).unwrap());
    (store, block)
}

#[test]
fn attention_without_transform_is_identity() {
    for (seed, shape) in [(1, Shape::new(2, 8, 5, 7)), (2, Shape::new(1, 16, 4, 4)), (3, Shape::new(3, 12, 1, 9))] {
        let (mut store, block) = attention(shape.c, seed);
        let w2 = store.value(block.w2).shape();
        *store.value_mut(block.w2) = Tensor::zeros(w2);
        let x = random(shape, seed + 10);
        let y = block.apply(&store, &x).unwrap();
        let bits = |t: &Tensor<f64>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&y), bits(&x));
    }
}

#[test]
fn flat_attention_pools_the_mean() {
    let shape = Shape::new(2, 8, 6, 5);
    let (mut store, block) = attention(8, 4);
    let wg = store.value(block.w_g).shape();
    *store.value_mut(block.w_g) = Tensor::zeros(wg);
    let x = random(shape, 9);
    let (weights, context) = block.context(&store, &x).unwrap();
    assert!(weights.data().iter().all(|&w| (w - 1.0 / 30.0).abs() < 1e-15));
    for n in 0..2 {
        for c in 0..8 {
            let mean = (0..6).flat_map(|h| (0..5).map(move |w| (h, w))).map(|(h, w)| x.get(n, c, h, w)).sum::<f64>() / 30.0;
            assert!((context.get(n, c, 0, 0) - mean).abs() < 1e-6);
        }
    }
}

#[test]
fn symmetric_pinned_loss_is_log_two() {
    let cfg = CircleLossConfig { gamma: 1.0, margin: 0.25, weighting: Weighting::Pinned };
    for s in [-1.0, -0.3, 0.0, 0.42, 1.0] {
        let (loss, _, _) = circle_loss_scores(&[s], &[s], &cfg);
        assert!((loss - LN_2).abs() < 1e-9, "s = {s}: {loss}");
    }
}

#[test]
fn self_paced_weights_vanish_at_the_optimum() {
    let at = |margin| {
        let cfg = CircleLossConfig { gamma: 32.0, margin, weighting: Weighting::SelfPaced };
        circle_loss_scores(&[1.0f64], &[-1.0], &cfg).0
    };
    assert!((at(0.0) - LN_2).abs() < 1e-12);
    assert!(at(0.25) < LN_2);
}

#[test]
fn nag_first_step_by_hand() {
    // f(theta) = theta^2 / 2, theta_0 = 1, so the first gradient is 1
    let mut store = ParamStore::new();
    let id = store.add("theta", vec![1], Tensor::full(Shape::new(1, 1, 1, 1), 1.0f64));
    store.value_mut(id).set_grad(vec![1.0]).unwrap();
    let mut opt = Nag::new(0.9, &store).unwrap();
    opt.step(&mut store, 0.1).unwrap();
    assert!((opt.underlying(&store)[0][0] - 0.9).abs() < 1e-15);
    assert!((store.value(id).data()[0] - 0.81).abs() < 1e-15);
}

#[test]
fn nag_without_gradient_decays_geometrically() {
    let mut store = ParamStore::new();
    let id = store.add("theta", vec![1], Tensor::full(Shape::new(1, 1, 1, 1), 1.0f64));
    let mut opt = Nag::new(0.5, &store).unwrap();
    store.value_mut(id).set_grad(vec![1.0]).unwrap();
    opt.step(&mut store, 0.1).unwrap();
    let mut prev = opt.velocity()[0][0];
    for _ in 0..30 {
        store.value_mut(id).set_grad(vec![0.0]).unwrap();
        opt.step(&mut store, 0.1).unwrap();
        let v = opt.velocity()[0][0];
        assert_eq!(v, 0.5 * prev);
        prev = v;
    }
    // theta settles at 1 - 0.1 / (1 - 0.5)
    assert!((opt.underlying(&store)[0][0] - 0.8).abs() < 1e-9);
}

#[test]
fn k_momentum_free_steps_are_sgd() {
    let mut store = ParamStore::new();
    let id = store.add("w", vec![3], Tensor::from_vec(Shape::new(1, 3, 1, 1), vec![0.3, -1.2, 2.0]).unwrap());
    let mut opt = Nag::new(0.0, &store).unwrap();
    let mut plain = vec![0.3f64, -1.2, 2.0];
    for k in 0..25 {
        let g: Vec<f64> = plain.iter().map(|w| w * 0.7 + k as f64 * 0.01).collect();
        store.value_mut(id).set_grad(g.clone()).unwrap();
        opt.step(&mut store, 0.05).unwrap();
        for (w, g) in plain.iter_mut().zip(&g) {
            *w -= 0.05 * g;
        }
        assert_eq!(store.value(id).data(), &plain[..]);
    }
}

#[test]
fn cosine_schedule_endpoints() {
    let s = LrSchedule::Cosine { lr_max: 0.1, lr_min: 0.0, period: 100 };
    assert_eq!(s.lr_at(0, &[]), 0.1);
    assert!((s.lr_at(50, &[]) - 0.05).abs() < 1e-15);
    assert!(s.lr_at(100, &[]).abs() < 1e-15);
    assert!(s.lr_at(140, &[]).abs() < 1e-15);
    let all: Vec<f64> = (0..=100).map(|t| s.lr_at(t, &[])).collect();
    assert!(all.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn f1_of_a_known_row() {
    assert!((f1_score(0.9732, 0.9903) - 0.9817).abs() < 1e-4);
    let perfect = MetricsReport::from_predictions(&[0, 1, 2, 1], &[0, 1, 2, 1], 3).unwrap();
    assert_eq!((perfect.accuracy, perfect.macro_precision, perfect.macro_recall, perfect.macro_f1), (1.0, 1.0, 1.0, 1.0));
}

#[test]
fn paper_preset_follows_the_table() {
    let cfg = NetworkConfig::paper(11);
    let rows = paper_rows();
    assert_eq!(cfg.rows, rows);
    assert_eq!(rows.len(), STAGE_TABLE.len());
    let net = build_network::<f32>(&cfg, 0).unwrap();
    let res = cfg.resolutions().unwrap();
    // res[0] is the input, res[1] the stem output, res[i + 1] block i's input
    for (i, (&(side, cin, cout, exp), b)) in STAGE_TABLE.iter().zip(&net.blocks).enumerate() {
        assert_eq!(res[i + 1], (side, side), "row {i}");
        assert_eq!((b.config.in_channels, b.config.out_channels, b.config.expansion), (cin, cout, exp), "row {i}");
    }
    let mut sides: Vec<usize> = res[1..].iter().map(|r| r.0).collect();
    sides.dedup();
    assert_eq!(sides, [256, 128, 64, 32, 16]);
    assert_eq!(net.blocks.len(), 15);
}
