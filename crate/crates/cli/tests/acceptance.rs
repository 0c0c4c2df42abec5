//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Run with `cargo test -p camx-cli --test acceptance`.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use camx::autodiff::backward;
use camx::axioms::{
    axiom_report_with, decomposition_all_layers, layer_diagnostics, mean_defined, zeta_per_channel, AxiomReport,
};
use camx::cam::{compute_weights, explain, CamMethod};
use camx::modelio::{load_image, load_model, save_model};
use camx::network::{Layer, LayerSpec, Network, Normalization};
use camx::perturb::{confidence_drop, perturb_image, random_heatmap};
use camx::synth::{
    kink_margin, random_conv, random_dense, random_gap_cnn, random_input, random_relu_cnn, RandomNetOptions,
};
use camx::{ActivationTrace, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn rel(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

fn within(limit_s: f64, start: Instant) -> Result<f64, String> {
    let s = start.elapsed().as_secs_f64();
    if s < limit_s {
        Ok(s)
    } else {
        Err(format!("took {s:.1} s, limit {limit_s} s"))
    }
}

fn random_nets(seed: u64, n: usize) -> Vec<Network> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| random_relu_cnn(&mut rng, RandomNetOptions::default()))
        .collect()
}

fn spatial_layers(net: &Network) -> Vec<usize> {
    (0..net.len()).filter(|&l| net.is_spatial(l)).collect()
}

fn decomposition_identity() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    let (mut worst, mut checks) = (0.0f64, 0);
    for net in random_nets(1, 100) {
        let trace = net.forward(&random_input(&mut rng, &net)).map_err(|e| e.to_string())?;
        for class in 0..net.num_classes() {
            let grads = backward(&net, &trace, class).map_err(|e| e.to_string())?;
            for d in decomposition_all_layers(&net, &trace, &grads, class).map_err(|e| e.to_string())? {
                worst = worst.max(d.relative_residual());
                checks += 1;
            }
        }
    }
    let secs = within(60.0, start)?;
    if worst < 1e-6 {
        Ok(format!(
            "100 nets, {checks} layer/class checks, worst {worst:.2e} (< 1e-6), {secs:.2} s"
        ))
    } else {
        Err(format!("worst relative residual {worst:.2e}"))
    }
}

const FD_H: f64 = 1e-5;
const FD_TOL: f64 = 1e-4;
const FD_FLOOR: f64 = 1e-3;

fn score_at(net: &Network, l: Option<usize>, act: &Tensor, class: usize) -> f64 {
    match l {
        None => net.forward(act).expect("shape").scores().data()[class],
        Some(l) => {
            let tail = net.forward_tail(l, act).expect("shape");
            tail.last().unwrap_or(act).data()[class]
        }
    }
}

/// (worst relative error, compared, skipped-at-kink)
fn fd_check(net: &Network, x: &Tensor, class: usize) -> (f64, usize, usize) {
    let trace = net.forward(x).expect("shape");
    let grads = backward(net, &trace, class).expect("class");
    let (mut worst, mut compared, mut skipped) = (0.0f64, 0, 0);
    let points = std::iter::once((None, trace.input(), grads.input()))
        .chain((0..net.len()).map(|l| (Some(l), trace.output(l), grads.layer(l))));
    for (l, act, g) in points {
        for i in 0..act.len() {
            let (mut plus, mut minus) = (act.clone(), act.clone());
            plus.data_mut()[i] += FD_H;
            minus.data_mut()[i] -= FD_H;
            let (up, mid, down) = (
                score_at(net, l, &plus, class),
                score_at(net, l, act, class),
                score_at(net, l, &minus, class),
            );
            let (right, left) = ((up - mid) / FD_H, (mid - down) / FD_H);
            if rel(right, left, FD_FLOOR) > FD_TOL {
                skipped += 1;
                continue;
            }
            worst = worst.max(rel(g.data()[i], (up - down) / (2.0 * FD_H), FD_FLOOR));
            compared += 1;
        }
    }
    (worst, compared, skipped)
}

fn smooth_input(rng: &mut ChaCha8Rng, net: &Network) -> Option<Tensor> {
    (0..1000)
        .map(|_| random_input(rng, net))
        .find(|x| kink_margin(net, &net.forward(x).expect("shape")) > 1e-3)
}

fn with_readout(rng: &mut ChaCha8Rng, input: [usize; 3], body: Vec<LayerSpec>) -> Network {
    let mut shape = input.to_vec();
    for spec in &body {
        shape = spec.layer.output_shape(&shape).expect("fits");
    }
    let n: usize = shape.iter().product();
    let mut layers = body;
    if shape.len() == 3 {
        layers.push(LayerSpec::new("flat", Layer::Flatten));
    }
    layers.push(LayerSpec::new("fc", Layer::Dense(random_dense(rng, n, 3, true))));
    Network::new(input, layers, Normalization::identity(input[0]), None).expect("valid")
}

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(200);
    let mut nets: Vec<(String, Network)> = vec![
        (
            "conv2d",
            [2, 5, 4],
            vec![LayerSpec::new(
                "c",
                Layer::Conv2d(random_conv(&mut rng, 2, 3, 3, 1, 1, true)),
            )],
        ),
        ("relu", [2, 3, 3], vec![LayerSpec::new("r", Layer::Relu)]),
        (
            "maxpool",
            [2, 4, 4],
            vec![LayerSpec::new("p", Layer::MaxPool { kernel: 2, stride: 2 })],
        ),
        (
            "avgpool_global",
            [3, 3, 4],
            vec![LayerSpec::new("g", Layer::GlobalAvgPool)],
        ),
        ("flatten", [2, 2, 3], vec![]),
        (
            "dense",
            [2, 2, 2],
            vec![
                LayerSpec::new("f", Layer::Flatten),
                LayerSpec::new("d", Layer::Dense(random_dense(&mut rng, 8, 5, true))),
            ],
        ),
    ]
    .into_iter()
    .map(|(name, input, body)| (name.to_string(), with_readout(&mut rng, input, body)))
    .collect();
    for (i, net) in random_nets(2, 20).into_iter().enumerate() {
        nets.push((format!("random net {i}"), net));
    }

    let (mut worst, mut compared, mut skipped) = (0.0f64, 0, 0);
    for (name, net) in &nets {
        let x = smooth_input(&mut rng, net).ok_or_else(|| format!("{name}: no kink-free input"))?;
        let class = rng.gen_range(0..net.num_classes());
        let (w, c, s) = fd_check(net, &x, class);
        if w >= FD_TOL {
            return Err(format!("{name}: relative error {w:.2e}"));
        }
        worst = worst.max(w);
        compared += c;
        skipped += s;
    }
    let secs = within(120.0, start)?;
    Ok(format!(
        "6 layer kinds + 20 nets, {compared} components, worst {worst:.2e} (< 1e-4), {skipped} at kinks skipped, {secs:.2} s"
    ))
}

fn gap_equivalence() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(300);
    let mut worst = 0.0f64;
    for i in 0..20 {
        let net = random_gap_cnn(&mut rng, true);
        let l = net.len() - 3;
        let trace = net.forward(&random_input(&mut rng, &net)).map_err(|e| e.to_string())?;
        let class = rng.gen_range(0..net.num_classes());
        let grads = backward(&net, &trace, class).map_err(|e| e.to_string())?;
        let w = |m| compute_weights(m, &net, &trace, Some(&grads), l, class).map_err(|e| e.to_string());
        let (g, a, x) = (
            w(CamMethod::GradCam)?,
            w(CamMethod::AblationCam)?,
            w(CamMethod::XgradCam)?,
        );
        let f = trace.output(l);
        let z = (f.shape()[1] * f.shape()[2]) as f64;
        let Layer::Dense(fc) = net.layer(net.len() - 1) else {
            return Err("no dense head".into());
        };
        for k in 0..g.len() {
            let row = fc.row(class)[k] / z;
            let mut errs = vec![rel(g[k], row, 1e-300)];
            if f.channel(k).iter().any(|&v| v != 0.0) {
                errs.extend([rel(a[k], row, 1e-300), rel(x[k], row, 1e-300), rel(a[k], x[k], 1e-300)]);
            }
            let e = errs.into_iter().fold(0.0, f64::max);
            if e > 1e-8 {
                return Err(format!("net {i} channel {k}: relative disagreement {e:.2e}"));
            }
            worst = worst.max(e);
        }
    }
    let secs = within(30.0, start)?;
    Ok(format!(
        "20 GAP nets, worst relative disagreement {worst:.2e} (< 1e-8), {secs:.2} s"
    ))
}

fn zeta_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(900);
    let (mut worst, mut worst_literal, mut checks, mut nets) = (0.0f64, 0.0f64, 0, 0);
    while nets < 20 {
        let net = random_relu_cnn(&mut rng, RandomNetOptions::default());
        let layers = spatial_layers(&net);
        if layers.is_empty() {
            continue;
        }
        nets += 1;
        let trace = net.forward(&random_input(&mut rng, &net)).map_err(|e| e.to_string())?;
        let class = rng.gen_range(0..net.num_classes());
        let grads = backward(&net, &trace, class).map_err(|e| e.to_string())?;
        let s = trace.scores().data()[class];
        for l in layers {
            let zeta = zeta_per_channel(&net, &trace, &grads, l, class).map_err(|e| e.to_string())?;
            let eps = s - grads.layer(l).dot(trace.output(l)).map_err(|e| e.to_string())?;
            let (f, g) = (trace.output(l), grads.layer(l));
            for (k, z) in zeta.iter().enumerate() {
                let drop = s - net.forward_ablated(&trace, l, k).map_err(|e| e.to_string())?.data()[class];
                let own: f64 = f.channel(k).iter().zip(g.channel(k)).map(|(a, b)| a * b).sum();
                let r = (drop - (own + z)).abs() / s.abs().max(1e-12);
                worst = worst.max(r);
                worst_literal = worst_literal.max((drop - (own - z + eps)).abs() / s.abs().max(1e-12));
                checks += 1;
            }
        }
    }
    println!("note  zeta identity as printed with -zeta + eps: worst relative deviation {worst_literal:.2e} over the same {checks} checks");
    if worst < 1e-6 {
        Ok(format!(
            "20 nets, {checks} (layer, k) checks of S - S(F\\F^k) = sum g*F^k + zeta, worst {worst:.2e} (< 1e-6)"
        ))
    } else {
        Err(format!("worst relative deviation {worst:.2e}"))
    }
}

struct CorpusImage {
    raw: Tensor,
    trace: ActivationTrace,
    class: usize,
    reports: Vec<AxiomReport>,
}

const CORPUS_METHODS: [CamMethod; 4] = [
    CamMethod::GradCam,
    CamMethod::GradCamPp,
    CamMethod::AblationCam,
    CamMethod::XgradCam,
];

struct Corpus {
    net: Network,
    layer: usize,
    images: Vec<CorpusImage>,
}

impl Corpus {
    fn load() -> Result<Corpus, String> {
        let dir = fixtures();
        let net = load_model(dir.join("model.json")).map_err(|e| e.to_string())?;
        let layer = net.last_spatial_layer().ok_or("fixture model has no spatial layer")?;
        let mut files: Vec<PathBuf> = std::fs::read_dir(dir.join("corpus"))
            .map_err(|e| e.to_string())?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "png"))
            .collect();
        files.sort();
        let mut images = Vec::with_capacity(files.len());
        for path in files {
            let img = load_image(&path, &net, false).map_err(|e| e.to_string())?;
            let trace = net.forward(&img.normalized).map_err(|e| e.to_string())?;
            let class = trace.top_class();
            let grads = backward(&net, &trace, class).map_err(|e| e.to_string())?;
            let reports = CORPUS_METHODS
                .iter()
                .map(|&m| axiom_report_with(&net, &trace, &grads, m, layer, class, false))
                .collect::<camx::Result<Vec<_>>>()
                .map_err(|e| e.to_string())?;
            images.push(CorpusImage {
                raw: img.raw,
                trace,
                class,
                reports,
            });
        }
        Ok(Corpus { net, layer, images })
    }

    fn report(&self, i: usize, m: CamMethod) -> &AxiomReport {
        let j = CORPUS_METHODS
            .iter()
            .position(|&x| x == m)
            .expect("method in corpus set");
        &self.images[i].reports[j]
    }

    fn mean(&self, m: CamMethod, f: impl Fn(&AxiomReport) -> Option<f64>) -> (f64, usize) {
        let s = mean_defined((0..self.images.len()).map(|i| f(self.report(i, m))));
        (s.mean.unwrap_or(f64::NAN), s.excluded)
    }
}

fn ablation_sensitivity(corpus: &Corpus) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(400);
    let (mut worst, mut cases, mut undefined) = (0.0f64, 0, 0);
    let mut record = |r: Option<f64>| match r {
        Some(v) => {
            worst = worst.max(v.abs());
            cases += 1;
        }
        None => undefined += 1,
    };
    for net in random_nets(4, 100) {
        let trace = net.forward(&random_input(&mut rng, &net)).map_err(|e| e.to_string())?;
        let class = trace.top_class();
        let grads = backward(&net, &trace, class).map_err(|e| e.to_string())?;
        for l in spatial_layers(&net) {
            let r = axiom_report_with(&net, &trace, &grads, CamMethod::AblationCam, l, class, false)
                .map_err(|e| e.to_string())?;
            record(r.sensitivity_residual);
        }
    }
    for i in 0..corpus.images.len() {
        record(corpus.report(i, CamMethod::AblationCam).sensitivity_residual);
    }
    if worst < 1e-9 {
        Ok(format!("{cases} net/layer/image cases, worst |residual| {worst:.2e} (< 1e-9), {undefined} undefined (all drops zero)"))
    } else {
        Err(format!("worst |residual| {worst:.2e}"))
    }
}

fn residual_direction(corpus: &Corpus) -> Outcome {
    let n = corpus.images.len();
    if n < 200 {
        return Err(format!("corpus has {n} images, need 200"));
    }
    let (gs, gs_ex) = corpus.mean(CamMethod::GradCam, |r| r.sensitivity_residual);
    let (xs, xs_ex) = corpus.mean(CamMethod::XgradCam, |r| r.sensitivity_residual);
    let (gc, gc_ex) = corpus.mean(CamMethod::GradCam, |r| r.conservation_residual);
    let (xc, xc_ex) = corpus.mean(CamMethod::XgradCam, |r| r.conservation_residual);
    let mut worst = 0.0f64;
    for i in 0..n {
        let r = corpus.report(i, CamMethod::XgradCam);
        if let (Some(c), Some(e)) = (r.conservation_residual, r.epsilon_normalized) {
            worst = worst.max((c - e).abs());
        } else if r.conservation_residual.is_some() != r.epsilon_normalized.is_some() {
            return Err(format!("image {i}: conservation and |eps/S| disagree on definedness"));
        }
    }
    let detail = format!(
        "{n} images; sensitivity xgrad {xs:.4} vs grad {gs:.4}; conservation xgrad {xc:.4} vs grad {gc:.4}; \
         excluded {}; max |cons(xgrad) - |eps/S|| {worst:.2e}",
        gs_ex + xs_ex + gc_ex + xc_ex
    );
    if xs < gs && xc < gc && worst < 1e-9 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn phi_ordering(corpus: &Corpus) -> Outcome {
    let (g, _) = corpus.mean(CamMethod::GradCam, |r| Some(r.phi));
    let (x, _) = corpus.mean(CamMethod::XgradCam, |r| Some(r.phi));
    let detail = format!(
        "mean phi xgrad {x:.4} vs grad {g:.4} over {} images",
        corpus.images.len()
    );
    if x < g {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn epsilon_by_depth(corpus: &Corpus) -> Outcome {
    let traces: Vec<ActivationTrace> = corpus.images.iter().map(|i| i.trace.clone()).collect();
    let diags = layer_diagnostics(&corpus.net, &traces, false).map_err(|e| e.to_string())?;
    let rectified = corpus.net.rectified_spatial_layers();
    let first = *rectified.first().ok_or("no rectified spatial layer")?;
    let last = corpus.layer;
    let at = |l: usize| {
        diags
            .iter()
            .find(|d| d.layer == l)
            .and_then(|d| d.epsilon_normalized.mean)
            .ok_or(format!("no diagnostics for layer {l}"))
    };
    let (a, b) = (at(first)?, at(last)?);
    let name = |l: usize| corpus.net.layers()[l].name.clone();
    let detail = format!("mean |eps/S| {} {b:.4} vs {} {a:.4}", name(last), name(first));
    if b < a {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn perturbation_sanity(corpus: &Corpus) -> Outcome {
    let img = &corpus.images[0].raw;
    let mean = &corpus.net.normalization().mean;
    let [_, h, w] = corpus.net.input_shape();
    let zero = perturb_image(img, &Tensor::zeros(&[h, w]), mean).map_err(|e| e.to_string())?;
    let ones = perturb_image(img, &Tensor::full(&[h, w], 1.0), mean).map_err(|e| e.to_string())?;
    let ones_ok = (0..mean.len()).all(|c| ones.channel(c).iter().all(|&v| v == mean[c]));
    if zero != *img || !ones_ok {
        return Err("perturb_image M=0 / M=1 identities broken".into());
    }

    let low_res = {
        let s = corpus.net.output_shape(corpus.layer);
        (s[1], s[2])
    };
    let mut rng = ChaCha8Rng::seed_from_u64(800);
    let mut random_drops = Vec::new();
    for im in &corpus.images {
        let hm = random_heatmap(&mut rng, low_res, (h, w)).map_err(|e| e.to_string())?;
        random_drops.push(
            confidence_drop(&corpus.net, &im.raw, &hm, im.class)
                .map_err(|e| e.to_string())?
                .drop,
        );
    }
    let baseline = random_drops.iter().sum::<f64>() / random_drops.len() as f64;
    let mut parts = vec![format!("random {baseline:.4}")];
    let mut ok = true;
    for m in CORPUS_METHODS {
        let mut total = 0.0;
        for im in &corpus.images {
            let e =
                explain(&corpus.net, &im.trace, m, Some(corpus.layer), Some(im.class)).map_err(|e| e.to_string())?;
            total += confidence_drop(&corpus.net, &im.raw, &e.cam.heatmap, im.class)
                .map_err(|e| e.to_string())?
                .drop;
        }
        let mean_drop = total / corpus.images.len() as f64;
        ok &= mean_drop > baseline;
        parts.push(format!("{} {mean_drop:.4}", m.short_name()));
    }
    let detail = format!("identities exact; mean drop {}", parts.join(", "));
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn run_visualize(args: &[&str], out: &Path, threads: &str) -> Result<Vec<u8>, String> {
    let status = Command::new(env!("CARGO_BIN_EXE_camx"))
        .arg("visualize")
        .args(args)
        .arg("--out")
        .arg(out)
        .env("CAMX_THREADS", threads)
        .output()
        .map_err(|e| e.to_string())?;
    if !status.status.success() {
        return Err(String::from_utf8_lossy(&status.stderr).into_owned());
    }
    std::fs::read(out).map_err(|e| e.to_string())
}

/// Golden visualize configurations: (file, flags).
pub const GOLDEN: [(&str, &[&str]); 3] = [
    ("xgrad_000.png", &["--image", "corpus/000.png", "--method", "xgrad"]),
    (
        "grad_001_overlay.png",
        &["--image", "corpus/001.png", "--method", "grad", "--overlay"],
    ),
    (
        "ablation_002.png",
        &["--image", "corpus/002.png", "--method", "ablation"],
    ),
];

fn determinism() -> Outcome {
    let dir = fixtures();
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let model = dir.join("model.json");
    for (golden, flags) in GOLDEN {
        let mut args = vec!["--model", model.to_str().ok_or("path")?];
        let images: Vec<String> = flags
            .iter()
            .map(|f| {
                if f.starts_with("corpus/") {
                    dir.join(f).to_string_lossy().into_owned()
                } else {
                    f.to_string()
                }
            })
            .collect();
        args.extend(images.iter().map(String::as_str));
        let runs = [
            run_visualize(&args, &tmp.path().join("a.png"), "1")?,
            run_visualize(&args, &tmp.path().join("b.png"), "1")?,
            run_visualize(&args, &tmp.path().join("c.png"), "4")?,
        ];
        let expected = std::fs::read(dir.join("golden").join(golden)).map_err(|e| format!("{golden}: {e}"))?;
        if runs.iter().any(|r| *r != expected) {
            return Err(format!("{golden}: output differs from golden or between runs"));
        }
    }
    Ok(format!(
        "{} golden heatmaps byte-identical over 2 runs and CAMX_THREADS=1/4",
        GOLDEN.len()
    ))
}

fn efficiency() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1100);
    let layers = vec![
        LayerSpec::new("conv1", Layer::Conv2d(random_conv(&mut rng, 3, 16, 3, 1, 1, true))),
        LayerSpec::new("relu1", Layer::Relu),
        LayerSpec::new("pool1", Layer::MaxPool { kernel: 2, stride: 2 }),
        LayerSpec::new("conv2", Layer::Conv2d(random_conv(&mut rng, 16, 128, 3, 1, 1, true))),
        LayerSpec::new("relu2", Layer::Relu),
        LayerSpec::new("flatten", Layer::Flatten),
        LayerSpec::new("fc1", Layer::Dense(random_dense(&mut rng, 128 * 8 * 8, 256, true))),
        LayerSpec::new("relu3", Layer::Relu),
        LayerSpec::new("fc2", Layer::Dense(random_dense(&mut rng, 256, 10, true))),
    ];
    let generated = Network::new([3, 16, 16], layers, Normalization::identity(3), None).map_err(|e| e.to_string())?;
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = tmp.path().join("wide.json");
    save_model(&generated, &path).map_err(|e| e.to_string())?;
    let net = load_model(&path).map_err(|e| e.to_string())?;
    let l = net.last_spatial_layer().ok_or("no spatial layer")?;
    let channels = net.output_shape(l)[0];
    let x = random_input(&mut rng, &net);

    let time = |m: CamMethod| -> Result<f64, String> {
        let mut best = f64::INFINITY;
        for _ in 0..3 {
            let start = Instant::now();
            let trace = net.forward(&x).map_err(|e| e.to_string())?;
            explain(&net, &trace, m, Some(l), None).map_err(|e| e.to_string())?;
            best = best.min(start.elapsed().as_secs_f64());
        }
        Ok(best)
    };
    let (g, xg, a) = (
        time(CamMethod::GradCam)?,
        time(CamMethod::XgradCam)?,
        time(CamMethod::AblationCam)?,
    );
    let (rg, rx) = (a / g, a / xg);
    let detail = format!(
        "{channels}-channel target; ablation {:.1} ms, grad {:.2} ms ({rg:.1}x), xgrad {:.2} ms ({rx:.1}x)",
        a * 1e3,
        g * 1e3,
        xg * 1e3
    );
    if channels >= 128 && rg >= 10.0 && rx >= 10.0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn main() {
    let mut results: Vec<(&str, Outcome)> = vec![
        ("decomposition identity", decomposition_identity()),
        ("gradient correctness", gradient_correctness()),
        ("GAP equivalence", gap_equivalence()),
    ];
    match Corpus::load() {
        Ok(corpus) => {
            results.push(("ablation sensitivity by construction", ablation_sensitivity(&corpus)));
            results.push(("xgrad vs grad residuals on trained corpus", residual_direction(&corpus)));
            results.push(("phi ordering", phi_ordering(&corpus)));
            results.push(("eps shrinks with depth", epsilon_by_depth(&corpus)));
            results.push(("perturbation sanity", perturbation_sanity(&corpus)));
        }
        Err(e) => {
            for name in [
                "ablation sensitivity by construction",
                "xgrad vs grad residuals on trained corpus",
                "phi ordering",
                "eps shrinks with depth",
                "perturbation sanity",
            ] {
                results.push((name, Err(format!("corpus unavailable: {e}"))));
            }
        }
    }
    results.push(("zeta identity", zeta_identity()));
    results.push(("determinism", determinism()));
    results.push(("efficiency ordering", efficiency()));

    let mut failed = 0;
    for (name, outcome) in &results {
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail}");
            }
        }
    }
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
