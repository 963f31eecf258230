//! Criterion 2: freshly attached blocks have zero heads, so every logit is
//! bitwise unchanged and noisy accuracy does not move.

use anoise::data::gen_synthetic;
use anoise::graph::{apply_noise_spec, attach, predict, Attachment, ModelGraph, Mode, Sampling};
use anoise::noise::NoiseSpec;
use anoise::placement::channel_map;
use anoise::train::evaluate;

use crate::Check;

pub fn run() -> Check {
    let data = gen_synthetic(4, 96, 10, 32)?;
    let mut base = ModelGraph::small_cnn(10, 4);
    let convs = base.conv_layers();
    apply_noise_spec(&mut base, &NoiseSpec::uniform(convs, 6.0, 2))?;
    let sites: Vec<Attachment> = channel_map(&base)?
        .into_keys()
        .map(|layer_index| Attachment { layer_index, ratio: 0.25 })
        .collect();
    let mut with = base.clone();
    attach(&mut with, &sites, 8)?;
    ensure!(with.denoiser_param_count() > 0, "no blocks were attached");

    let ids: Vec<u64> = (0..data.len() as u64).collect();
    let mut compared = 0;
    for mode in [Mode::Clean, Mode::Noisy] {
        for seed in [0u64, 1, 77] {
            let a = predict(&base, &data.images, mode, Sampling::SeededIds(seed, &ids))?;
            let b = predict(&with, &data.images, mode, Sampling::SeededIds(seed, &ids))?;
            let same = a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits());
            ensure!(same, "{mode:?} logits differ at seed {seed}");
            compared += a.len();
        }
    }
    for seed in [3u64, 4] {
        let a = evaluate(&base, &data, Mode::Noisy, seed, 32)?.accuracy;
        let b = evaluate(&with, &data, Mode::Noisy, seed, 32)?.accuracy;
        ensure!(a == b, "noisy accuracy {a} became {b} at seed {seed}");
    }
    Ok(format!(
        "{} blocks at layers {:?}: {compared} logits bitwise equal, noisy accuracy unchanged",
        sites.len(),
        sites.iter().map(|s| s.layer_index).collect::<Vec<_>>()
    ))
}
