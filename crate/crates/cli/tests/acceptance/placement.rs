//! Criterion 3: greedy selection on a three-conv toy net against the
//! hand-traced example and brute force, and gradient-norm scores against
//! directional finite differences.

use std::collections::BTreeMap;

use anoise::denoiser::denoiser_param_count;
use anoise::graph::{apply_noise_spec, backward, forward, Draws, ModelGraph, Mode, Sampling};
use anoise::layer::{LayerDesc, LayerKind};
use anoise::loss::softmax_minus_onehot;
use anoise::noise::NoiseSpec;
use anoise::placement::{channel_map, layer_grad_scores, select_layers, LayerScore, SelectionMode};
use anoise::Tensor4;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Check, Failure};

fn random(shape: [usize; 4], lo: f64, hi: f64, r: &mut ChaCha8Rng) -> Tensor4 {
    Tensor4::from_fn(shape, |_| r.random_range(lo..hi))
}

/// conv 3→c0 → lrelu → conv c0→64 → lrelu → conv 64→64 → gap → linear.
fn toy_net(c0: usize, r: &mut ChaCha8Rng) -> Result<ModelGraph, Failure> {
    let mut m = ModelGraph::new("toy", 5, [3, 8, 8]);
    let conv = |cin: usize, cout: usize, r: &mut ChaCha8Rng| {
        let s = (1.0 / (cin * 9) as f64).sqrt() * 1.7;
        LayerDesc::conv2d(cin, cout, 3, 1, 1, random([cout, cin, 3, 3], -s, s, r), Some(vec![0.01; cout]))
    };
    m.layers.push(conv(3, c0, r)?);
    m.layers.push(LayerDesc::leaky_relu(c0));
    m.layers.push(conv(c0, 64, r)?);
    m.layers.push(LayerDesc::leaky_relu(64));
    m.layers.push(conv(64, 64, r)?);
    m.layers.push(LayerDesc::global_avg_pool(64));
    m.layers.push(LayerDesc::linear(64, 5, random([5, 64, 1, 1], -0.3, 0.3, r), Some(vec![0.0; 5]))?);
    m.validate()?;
    Ok(m)
}

/// Highest-value feasible subset by enumeration.
fn exhaustive(scores: &[LayerScore], costs: &BTreeMap<usize, usize>, budget: usize) -> Vec<usize> {
    let mut best = (f64::NEG_INFINITY, vec![]);
    for mask in 0u32..(1 << scores.len()) {
        let picked: Vec<&LayerScore> =
            scores.iter().enumerate().filter(|(i, _)| mask & (1 << i) != 0).map(|(_, s)| s).collect();
        let cost: usize = picked.iter().map(|s| costs[&s.layer_index]).sum();
        let value: f64 = picked.iter().map(|s| s.score).sum();
        if cost <= budget && value > best.0 {
            best = (value, picked.iter().map(|s| s.layer_index).collect());
        }
    }
    best.1
}

/// First-fit-decreasing traced step by step.
fn traced_greedy(scores: &[LayerScore], costs: &BTreeMap<usize, usize>, budget: usize) -> Vec<usize> {
    let mut order = scores.to_vec();
    order.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.layer_index.cmp(&b.layer_index)));
    let mut left = budget;
    let mut out = vec![];
    for s in order {
        let c = costs[&s.layer_index];
        if c <= left {
            left -= c;
            out.push(s.layer_index);
        }
    }
    out
}

fn perturbed_loss(m: &ModelGraph, x: &Tensor4, label: usize, layer: usize, delta: &Tensor4) -> (f64, Vec<bool>) {
    let mut m = m.clone();
    apply_noise_spec(&mut m, &NoiseSpec::uniform([layer], 1.0, 0)).unwrap();
    let mut draws = Draws::default();
    draws.injected.insert(layer, delta.clone());
    let (logits, tape) = forward(&m, x, Mode::Noisy, Sampling::Replay(&draws)).unwrap();
    let signs = tape
        .entries
        .iter()
        .enumerate()
        .filter(|(i, _)| m.layers[*i].kind == LayerKind::LeakyRelu)
        .flat_map(|(_, e)| e.input.data().iter().map(|v| *v > 0.0).collect::<Vec<_>>())
        .collect();
    (softmax_minus_onehot(&logits, &[label]).unwrap().0[0], signs)
}

fn directional(m: &ModelGraph, x: &Tensor4, label: usize, layer: usize, dir: &Tensor4) -> f64 {
    let mut h = 1e-4;
    loop {
        let (up, su) = perturbed_loss(m, x, label, layer, &dir.scale(h));
        let (down, sd) = perturbed_loss(m, x, label, layer, &dir.scale(-h));
        if su == sd || h < 1e-9 {
            return (up - down) / (2.0 * h);
        }
        h /= 10.0;
    }
}

pub fn run() -> Check {
    let mut r = ChaCha8Rng::seed_from_u64(3);
    let cost = |ch| denoiser_param_count(ch, 0.25);
    // widest first layer whose block costs at most 1000
    let c0 = (1..=256).filter(|&c| cost(c) <= 1000).max().unwrap();
    let net = toy_net(c0, &mut r)?;
    let map = channel_map(&net)?;
    ensure!(map.keys().copied().collect::<Vec<_>>() == [0, 2, 4], "candidates {map:?}");
    let costs: BTreeMap<usize, usize> = map.iter().map(|(&l, &c)| (l, cost(c))).collect();
    ensure!(costs[&2] == 3376 && costs[&4] == 3376, "costs {costs:?}");

    // hand-traced example: scores 0.5 / 0.9 / 0.7 on the three convs, budget 4000
    let example = [
        LayerScore { layer_index: 0, score: 0.5 },
        LayerScore { layer_index: 2, score: 0.9 },
        LayerScore { layer_index: 4, score: 0.7 },
    ];
    let plan = select_layers(&example, 4.0, 100_000, &map, 0.25, SelectionMode::FirstFit)?;
    let picked: Vec<usize> = plan.entries.iter().map(|e| e.layer_index).collect();
    ensure!(plan.budget == 4000, "budget {}", plan.budget);
    ensure!(picked == [2], "example picked {picked:?}, hand trace gives [2]");
    ensure!(exhaustive(&example, &costs, 4000) == [2], "brute force disagrees with the trace");

    // measured scores
    let n = 3;
    let x = random([n, 3, 8, 8], 0.0, 1.0, &mut r);
    let labels: Vec<usize> = (0..n).map(|_| r.random_range(0..5)).collect();
    let scores = layer_grad_scores(&net, &x, &labels)?;
    let mut worst: f64 = 0.0;
    for s in &scores {
        let l = s.layer_index;
        let mut fd_mean = 0.0;
        for i in 0..n {
            let xi = x.slice_batch(i, 1);
            let (logits, tape) = forward(&net, &xi, Mode::Clean, Sampling::Seeded(0))?;
            let (_, g) = softmax_minus_onehot(&logits, &labels[i..=i])?;
            let go = backward(&net, &tape, &g, true)?.outputs.expect("outputs")[l].clone();
            let norm = go.data().iter().map(|v| v * v).sum::<f64>().sqrt();
            // along the unit gradient the derivative is the norm itself
            let along = directional(&net, &xi, labels[i], l, &go.scale(1.0 / norm));
            let e = (along - norm).abs() / norm.max(1e-12);
            worst = worst.max(e);
            ensure!(e <= 1e-3, "layer {l} sample {i}: finite difference {along} vs norm {norm}");
            fd_mean += along / n as f64;
        }
        let e = (s.score - fd_mean).abs() / fd_mean.abs().max(1e-12);
        worst = worst.max(e);
        ensure!(e <= 1e-3, "layer {l}: score {} vs finite-difference mean {fd_mean}", s.score);
    }
    let conv_scores: Vec<LayerScore> = scores.iter().filter(|s| map.contains_key(&s.layer_index)).copied().collect();
    let mut budgets = vec![0usize, 900, 1000, 3376, 4000, 4376, 6752, 8000];
    budgets.push(costs.values().sum());
    for budget in budgets {
        // eta 100% of a backbone of `budget` parameters
        let plan = select_layers(&conv_scores, 100.0, budget, &map, 0.25, SelectionMode::FirstFit)?;
        let got: Vec<usize> = plan.entries.iter().map(|e| e.layer_index).collect();
        let want = traced_greedy(&conv_scores, &costs, budget);
        ensure!(plan.budget == budget, "budget {} for {budget}", plan.budget);
        ensure!(got == want, "budget {budget}: selected {got:?}, traced greedy {want:?}");
        ensure!(plan.total_cost <= budget, "budget {budget} overrun");
    }
    Ok(format!(
        "example selects [2] as traced and by brute force; {} scores within {worst:.1e} of finite differences; greedy trace matches at 9 budgets",
        scores.len()
    ))
}
