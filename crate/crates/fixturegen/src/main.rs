//! Trains the small shape classifier used by the CLI tests and writes the
//! model, a held-out image corpus and logit fixtures.

mod shapes;
mod train;

use std::fs;
use std::path::PathBuf;

use camx::modelio::{load_image, load_model, read_manifest, save_image, save_model, write_json, FixtureEntry};
use camx::network::{Conv2d, Dense, Layer, LayerSpec, Network, Normalization};
use camx::Tensor;
use clap::Parser;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use shapes::{Sample, LABELS, SIZE};

#[derive(Parser)]
#[command(about = "Train the fixture shape classifier and write its corpus")]
struct Args {
    /// Output directory (model.json, model.bin, corpus/)
    #[arg(long, default_value = "crates/cli/tests/fixtures")]
    out: PathBuf,
    #[arg(long, default_value_t = 4000)]
    train: usize,
    /// Held-out images written to the corpus
    #[arg(long, default_value_t = 240)]
    corpus: usize,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long, default_value_t = 32)]
    batch: usize,
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Images whose logits are recorded in the manifest
    #[arg(long, default_value_t = 5)]
    fixtures: usize,
}

fn dataset(rng: &mut ChaCha8Rng, n: usize) -> Vec<Sample> {
    (0..n).map(|i| shapes::sample(rng, i % LABELS.len())).collect()
}

fn raw(sample: &Sample) -> Tensor {
    Tensor::new(
        vec![3, SIZE, SIZE],
        sample.pixels.iter().map(|&p| f64::from(p) / 255.0).collect(),
    )
    .expect("fixed shape")
}

fn channel_stats(samples: &[Sample]) -> Normalization {
    let n = (SIZE * SIZE) as f64 * samples.len() as f64;
    let round = |v: f64| (v * 1e4).round() / 1e4;
    let (mut mean, mut std) = (vec![], vec![]);
    for ch in 0..3 {
        let values = || samples.iter().flat_map(|s| raw(s).channel(ch).to_vec());
        let m = values().sum::<f64>() / n;
        let var = values().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
        mean.push(round(m));
        std.push(round(var.sqrt()));
    }
    Normalization { mean, std }
}

fn he_conv(rng: &mut ChaCha8Rng, c_in: usize, c_out: usize) -> Layer {
    let bound = (6.0 / (c_in * 9) as f64).sqrt();
    let w = (0..c_out * c_in * 9).map(|_| rng.gen_range(-bound..bound)).collect();
    let weight = Tensor::new(vec![c_out, c_in, 3, 3], w).expect("shape");
    Layer::Conv2d(Conv2d::new(weight, Tensor::zeros(&[c_out]), 1, 1).expect("shape"))
}

fn he_dense(rng: &mut ChaCha8Rng, units_in: usize, units_out: usize) -> Layer {
    let bound = (6.0 / units_in as f64).sqrt();
    let w = (0..units_out * units_in)
        .map(|_| rng.gen_range(-bound..bound))
        .collect();
    let weight = Tensor::new(vec![units_out, units_in], w).expect("shape");
    Layer::Dense(Dense::new(weight, Tensor::zeros(&[units_out])).expect("shape"))
}

fn architecture(rng: &mut ChaCha8Rng, norm: Normalization) -> Network {
    let pool = || Layer::MaxPool { kernel: 2, stride: 2 };
    let layers = vec![
        LayerSpec::new("conv1", he_conv(rng, 3, 16)),
        LayerSpec::new("relu1", Layer::Relu),
        LayerSpec::new("pool1", pool()),
        LayerSpec::new("conv2", he_conv(rng, 16, 32)),
        LayerSpec::new("relu2", Layer::Relu),
        LayerSpec::new("pool2", pool()),
        LayerSpec::new("conv3", he_conv(rng, 32, 32)),
        LayerSpec::new("relu3", Layer::Relu),
        LayerSpec::new("flatten", Layer::Flatten),
        LayerSpec::new("fc1", he_dense(rng, 32 * 8 * 8, 64)),
        LayerSpec::new("relu4", Layer::Relu),
        LayerSpec::new("fc2", he_dense(rng, 64, LABELS.len())),
    ];
    let labels = LABELS.iter().map(|s| s.to_string()).collect();
    Network::new([3, SIZE, SIZE], layers, norm, Some(labels)).expect("valid architecture")
}

fn accuracy(net: &Network, data: &[(Tensor, usize)]) -> f64 {
    let hits = data
        .iter()
        .filter(|(x, c)| net.forward(x).expect("shape").top_class() == *c)
        .count();
    hits as f64 / data.len() as f64
}

fn main() -> camx::Result<()> {
    let args = Args::parse();
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let train_set = dataset(&mut rng, args.train);
    let mut held_rng = ChaCha8Rng::seed_from_u64(args.seed.wrapping_add(1));
    let mut held_out = dataset(&mut held_rng, args.corpus);
    held_out.shuffle(&mut held_rng);

    let norm = channel_stats(&train_set);
    let mut net = architecture(&mut rng, norm);
    let prepared: Vec<(Tensor, usize)> = train_set
        .iter()
        .map(|s| Ok((net.normalize(&raw(s))?, s.class)))
        .collect::<camx::Result<_>>()?;
    let test: Vec<(Tensor, usize)> = held_out
        .iter()
        .map(|s| Ok((net.normalize(&raw(s))?, s.class)))
        .collect::<camx::Result<_>>()?;

    let mut sgd = train::Sgd::new(&net, args.lr, 0.9, 1e-4);
    let mut order: Vec<usize> = (0..prepared.len()).collect();
    for epoch in 0..args.epochs {
        if epoch > 0 && epoch % 4 == 0 {
            sgd.lr *= 0.5;
        }
        order.shuffle(&mut rng);
        let (mut loss, mut correct) = (0.0, 0);
        for chunk in order.chunks(args.batch) {
            let batch: Vec<(Tensor, usize)> = chunk.iter().map(|&i| prepared[i].clone()).collect();
            let (next, l, c) = sgd.step(&net, &batch)?;
            net = next;
            loss += l * batch.len() as f64;
            correct += c;
        }
        println!(
            "epoch {epoch}: loss {:.4} train acc {:.3} held-out acc {:.3}",
            loss / prepared.len() as f64,
            correct as f64 / prepared.len() as f64,
            accuracy(&net, &test)
        );
    }

    let corpus_dir = args.out.join("corpus");
    fs::create_dir_all(&corpus_dir).map_err(|e| camx::Error::Io {
        path: corpus_dir.clone(),
        source: e,
    })?;
    let manifest_path = args.out.join("model.json");
    save_model(&net, &manifest_path)?;
    let stored = load_model(&manifest_path)?;

    let mut fixtures = Vec::new();
    let mut hits = 0;
    for (i, s) in held_out.iter().enumerate() {
        let name = format!("corpus/{i:03}.png");
        save_image(&raw(s), args.out.join(&name))?;
        let img = load_image(args.out.join(&name), &stored, false)?;
        let trace = stored.forward(&img.normalized)?;
        hits += usize::from(trace.top_class() == s.class);
        if i < args.fixtures {
            let logits = trace.scores().data().iter().map(|v| (v * 1e6).round() / 1e6).collect();
            fixtures.push(FixtureEntry { image: name, logits });
        }
    }
    let mut manifest = read_manifest(&manifest_path)?;
    manifest.fixtures = fixtures;
    write_json(&manifest, &manifest_path)?;
    println!(
        "wrote {} ({} corpus images, held-out accuracy {:.3})",
        manifest_path.display(),
        held_out.len(),
        hits as f64 / held_out.len() as f64
    );
    Ok(())
}
