//! Criterion 1: analytic gradients of every differentiable op and of the
//! full noisy SmallCNN with a denoiser, against central differences with
//! the noise and ε of the analytic pass replayed.

use anoise::denoiser::{denoiser_backward, denoiser_forward, sample_epsilon, DenoiserParams};
use anoise::graph::{apply_noise_spec, attach, backward, forward, Attachment, Draws, ModelGraph, Mode, Sampling};
use anoise::layer::{LayerDesc, LayerKind, LEAKY_SLOPE};
use anoise::loss::cross_entropy;
use anoise::noise::NoiseSpec;
use anoise::ops::{layer_backward, layer_forward, leaky_relu};
use anoise::Tensor4;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::Check;

const H: f64 = 1e-3;
const MIN_H: f64 = 1e-7;
const TOL: f64 = 1e-4;
const COORDS: usize = 100;

#[derive(Default)]
struct Tally {
    checked: usize,
    shrunk: usize,
    worst: f64,
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

fn random(shape: [usize; 4], lo: f64, hi: f64, r: &mut ChaCha8Rng) -> Tensor4 {
    Tensor4::from_fn(shape, |_| r.random_range(lo..hi))
}

fn dot(a: &Tensor4, b: &Tensor4) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

fn signs(t: &Tensor4) -> impl Iterator<Item = bool> + '_ {
    t.data().iter().map(|v| *v > 0.0)
}

/// Compares `analytic` with central differences of `eval` on up to
/// [`COORDS`] random coordinates. `eval(i, d)` returns the loss with
/// coordinate `i` moved by `d` plus the sign pattern of every leaky ReLU
/// input; the step shrinks until both stencil points agree on it.
fn check(
    what: &str,
    analytic: &[f64],
    r: &mut ChaCha8Rng,
    tally: &mut Tally,
    mut eval: impl FnMut(usize, f64) -> (f64, Vec<bool>),
) -> Result<(), crate::Failure> {
    let mut smooth = 0;
    let wanted = analytic.len().min(COORDS);
    for idx in sample(r, analytic.len(), analytic.len()) {
        if smooth == wanted {
            break;
        }
        let mut h = H;
        let numeric = loop {
            let (up, su) = eval(idx, h);
            let (down, sd) = eval(idx, -h);
            if su == sd {
                break Some((up - down) / (2.0 * h));
            }
            h /= 10.0;
            if h < MIN_H {
                break None;
            }
        };
        if h < H {
            tally.shrunk += 1;
        }
        let Some(numeric) = numeric else { continue };
        smooth += 1;
        let e = rel_err(analytic[idx], numeric);
        tally.worst = tally.worst.max(e);
        ensure!(
            e <= TOL,
            "{what}[{idx}]: analytic {} vs numeric {numeric} (rel err {e:e})",
            analytic[idx]
        );
    }
    tally.checked += smooth;
    ensure!(smooth * 2 >= wanted, "{what}: only {smooth} of {wanted} coordinates away from kinks");
    Ok(())
}

fn nudge_layer(l: &mut LayerDesc, idx: usize, d: f64) {
    let wl = l.weight.as_ref().map_or(0, Tensor4::len);
    if idx < wl {
        l.weight.as_mut().unwrap().data_mut()[idx] += d;
    } else {
        l.bias.as_mut().unwrap()[idx - wl] += d;
    }
}

fn layer_ops(r: &mut ChaCha8Rng, tally: &mut Tally) -> Result<(), crate::Failure> {
    let cases: Vec<(LayerDesc, [usize; 4])> = vec![
        (LayerDesc::conv2d(3, 4, 3, 2, 1, random([4, 3, 3, 3], -1.0, 1.0, r), Some(vec![0.1, -0.2, 0.0, 0.3]))?, [2, 3, 7, 6]),
        (LayerDesc::depthwise(3, 3, 1, 1, random([3, 1, 3, 3], -1.0, 1.0, r), Some(vec![0.2; 3]))?, [2, 3, 5, 6]),
        (LayerDesc::pointwise(3, 5, random([5, 3, 1, 1], -1.0, 1.0, r), Some(vec![0.05; 5]))?, [2, 3, 4, 4]),
        (LayerDesc::linear(6, 4, random([4, 6, 1, 1], -1.0, 1.0, r), Some(vec![0.1; 4]))?, [3, 6, 1, 1]),
        (LayerDesc::leaky_relu(3), [2, 3, 4, 5]),
        (LayerDesc::global_avg_pool(3), [2, 3, 4, 5]),
    ];
    for (layer, in_shape) in cases {
        let name = layer.kind.name();
        let x = random(in_shape, -1.0, 1.0, r);
        let y = layer_forward(&x, &layer)?;
        let up = random(y.shape(), -1.0, 1.0, r);
        let (gx, pg) = layer_backward(&x, &layer, &up, true)?;
        let kinky = layer.kind == LayerKind::LeakyRelu;
        check(&format!("{name} input"), gx.data(), r, tally, |i, d| {
            let mut xp = x.clone();
            xp.data_mut()[i] += d;
            let s = if kinky { signs(&xp).collect() } else { vec![] };
            (dot(&layer_forward(&xp, &layer).unwrap(), &up), s)
        })?;
        if let Some(pg) = pg {
            let mut analytic = pg.weight.data().to_vec();
            analytic.extend(pg.bias.unwrap_or_default());
            check(&format!("{name} params"), &analytic, r, tally, |i, d| {
                let mut l = layer.clone();
                nudge_layer(&mut l, i, d);
                (dot(&layer_forward(&x, &l).unwrap(), &up), vec![])
            })?;
        }
    }
    // the activation on its own, at the slope used everywhere
    let x = random([1, 2, 3, 3], -1.0, 1.0, r);
    let y = leaky_relu(&x, LEAKY_SLOPE);
    for (a, b) in x.data().iter().zip(y.data()) {
        ensure!(*b == if *a >= 0.0 { *a } else { a * LEAKY_SLOPE }, "leaky relu value at {a}");
    }
    Ok(())
}

fn loss_op(r: &mut ChaCha8Rng, tally: &mut Tally) -> Result<(), crate::Failure> {
    let logits = random([4, 10, 1, 1], -3.0, 3.0, r);
    let labels = [0, 9, 4, 4];
    let (_, g) = cross_entropy(&logits, &labels)?;
    check("cross-entropy logits", g.data(), r, tally, |i, d| {
        let mut l = logits.clone();
        l.data_mut()[i] += d;
        (cross_entropy(&l, &labels).unwrap().0, vec![])
    })
}

fn randomize(layer: &mut LayerDesc, r: &mut ChaCha8Rng, w: f64) {
    if let Some(t) = &mut layer.weight {
        *t = random(t.shape(), -w, w, r);
    }
    if let Some(b) = &mut layer.bias {
        b.iter_mut().for_each(|v| *v = r.random_range(-0.1..0.1));
    }
}

fn denoiser_block(r: &mut ChaCha8Rng, tally: &mut Tally) -> Result<(), crate::Failure> {
    let mut p = DenoiserParams::init(8, 0.25, 5)?;
    for (_, l) in p.parts_mut() {
        randomize(l, r, 0.5);
    }
    let x = random([2, 8, 5, 5], -1.0, 1.0, r);
    let eps = sample_epsilon(x.shape(), 11, 0, &[0, 1]);
    let up = random(x.shape(), -1.0, 1.0, r);
    let eval = |p: &DenoiserParams, x: &Tensor4| {
        let t = denoiser_forward(x, p, &eps).unwrap();
        let s = signs(&t.reduced).chain(signs(&t.spatial)).collect();
        (dot(&t.output, &up), s)
    };
    let trace = denoiser_forward(&x, &p, &eps)?;
    let (gx, grads) = denoiser_backward(&trace, &p, &up, true)?;
    check("denoiser input", gx.data(), r, tally, |i, d| {
        let mut xp = x.clone();
        xp.data_mut()[i] += d;
        eval(&p, &xp)
    })?;
    let grads = grads.expect("requested");
    for (k, (part, g)) in grads.parts.iter().enumerate() {
        let mut analytic = g.weight.data().to_vec();
        analytic.extend(g.bias.clone().unwrap_or_default());
        check(&format!("denoiser {part}"), &analytic, r, tally, |i, d| {
            let mut q = p.clone();
            nudge_layer(q.parts_mut()[k].1, i, d);
            eval(&q, &x)
        })?;
    }
    Ok(())
}

fn full_graph(r: &mut ChaCha8Rng, tally: &mut Tally) -> Result<usize, crate::Failure> {
    let mut m = ModelGraph::small_cnn(10, 21);
    let convs = m.conv_layers();
    apply_noise_spec(&mut m, &NoiseSpec::uniform(convs, 6.0, 0))?;
    attach(
        &mut m,
        &[Attachment { layer_index: 2, ratio: 0.25 }, Attachment { layer_index: 4, ratio: 0.25 }],
        3,
    )?;
    // trained-looking heads so every path carries gradient
    for d in m.attachments.values_mut() {
        for (_, l) in d.parts_mut() {
            randomize(l, r, 0.3);
        }
    }
    let x = random([2, 3, 32, 32], 0.0, 1.0, r);
    let labels = [3, 8];
    let (logits, tape) = forward(&m, &x, Mode::Noisy, Sampling::Seeded(9))?;
    let (_, g) = cross_entropy(&logits, &labels)?;
    let grads = backward(&m, &tape, &g, false)?;
    let draws: Draws = tape.draws.clone();
    let eval = |m: &ModelGraph| {
        let (logits, tape) = forward(m, &x, Mode::Noisy, Sampling::Replay(&draws)).unwrap();
        let mut s = Vec::new();
        for (i, e) in tape.entries.iter().enumerate() {
            if m.layers[i].kind == LayerKind::LeakyRelu {
                s.extend(signs(&e.input));
            }
            if let Some(t) = &e.denoiser {
                s.extend(signs(&t.reduced).chain(signs(&t.spatial)));
            }
        }
        (cross_entropy(&logits, &labels).unwrap().0, s)
    };
    for (name, analytic) in &grads.params {
        let mut probe = m.clone();
        check(&format!("graph {name}"), analytic, r, tally, |i, d| {
            probe.visit_params_mut(|n, _, v| {
                if n == name {
                    v[i] += d;
                }
            });
            let out = eval(&probe);
            probe.visit_params_mut(|n, _, v| {
                if n == name {
                    v[i] -= d;
                }
            });
            out
        })?;
    }
    Ok(grads.params.len())
}

pub fn run() -> Check {
    let mut r = ChaCha8Rng::seed_from_u64(1);
    let mut tally = Tally::default();
    layer_ops(&mut r, &mut tally)?;
    loss_op(&mut r, &mut tally)?;
    denoiser_block(&mut r, &mut tally)?;
    let tensors = full_graph(&mut r, &mut tally)?;
    ensure!(tensors == 24, "expected 24 trainable tensors in the graph, got {tensors}");
    Ok(format!(
        "{} coordinates incl. {tensors} graph tensors, worst rel err {:.2e} <= {TOL:e}, {} steps shrunk at kinks",
        tally.checked, tally.worst, tally.shrunk
    ))
}
