use std::fmt;
use std::fs;
use std::path::PathBuf;
use std::str::FromStr;

use camx::axioms::{mean_defined, MeanSummary};
use camx::cam::{explain, CamMethod};
use camx::modelio::{load_image, load_model, save_image};
use camx::perturb::{confidence_drop, random_heatmap, HEATMAP_NORMALIZATION};
use camx::Tensor;
use clap::Args;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Serialize, Serializer};

use crate::common::{file_name, fmt_opt, list_corpus, resolve_layer, with_pool, write_csv, CliError, CliResult};

/// Where a heatmap comes from: a CAM method or a control.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Source {
    Method(CamMethod),
    /// Uniform noise at target-layer resolution, upsampled like a CAM map.
    Random,
    /// All-zero heatmap.
    Zero,
}

impl FromStr for Source {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "random" => Ok(Source::Random),
            "zero" => Ok(Source::Zero),
            m => m.parse().map(Source::Method).map_err(|e: camx::Error| e.to_string()),
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Source::Method(m) => write!(f, "{m}"),
            Source::Random => f.write_str("random"),
            Source::Zero => f.write_str("zero"),
        }
    }
}

impl Serialize for Source {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

#[derive(Args, Debug)]
pub struct PerturbArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub images: PathBuf,
    /// Methods plus the controls `random` and `zero`
    #[arg(long, value_delimiter = ',', default_value = "grad,gradpp,ablation,xgrad,random")]
    pub methods: Vec<Source>,
    #[arg(long)]
    pub layer: Option<String>,
    #[arg(long)]
    pub resize: bool,
    /// Seed for the random-heatmap control
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Write every perturbed image here as `<image stem>.<method>.png`
    #[arg(long)]
    pub keep_perturbed: Option<PathBuf>,
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Row {
    pub image: String,
    pub method: Source,
    pub class: usize,
    pub confidence_before: f64,
    pub confidence_after: f64,
    pub drop: f64,
    pub threshold: f64,
    pub selected: usize,
    pub nonzero: usize,
    pub target: usize,
    pub degenerate: bool,
}

#[derive(Serialize)]
pub struct MethodSummary {
    pub method: Source,
    pub drop: MeanSummary,
    pub degenerate: usize,
}

#[derive(Serialize)]
struct Report<'a> {
    layer: usize,
    layer_name: &'a str,
    heatmap_normalization: &'static str,
    seed: u64,
    rows: &'a [Row],
    summary: Vec<MethodSummary>,
}

pub fn perturb(args: &PerturbArgs) -> CliResult<()> {
    let net = load_model(&args.model)?;
    let layer = resolve_layer(&net, args.layer.as_deref())?;
    let files = list_corpus(&args.images)?;
    if let Some(dir) = &args.keep_perturbed {
        fs::create_dir_all(dir).map_err(|e| CliError::Validation(format!("{}: {e}", dir.display())))?;
    }
    let [_, h, w] = net.input_shape();
    let low_res = {
        let s = net.output_shape(layer);
        (s[1], s[2])
    };

    let per_image: Vec<Vec<Row>> = with_pool(|| {
        files
            .par_iter()
            .enumerate()
            .map(|(index, path)| {
                let img = load_image(path, &net, args.resize)?;
                let trace = net.forward(&img.normalized)?;
                let class = trace.top_class();
                let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
                rng.set_stream(index as u64);
                args.methods
                    .iter()
                    .map(|&source| {
                        let heatmap = match source {
                            Source::Method(m) => explain(&net, &trace, m, Some(layer), Some(class))?.cam.heatmap,
                            Source::Random => random_heatmap(&mut rng, low_res, (h, w))?,
                            Source::Zero => Tensor::zeros(&[h, w]),
                        };
                        let r = confidence_drop(&net, &img.raw, &heatmap, class)?;
                        if let Some(dir) = &args.keep_perturbed {
                            let stem = path
                                .file_stem()
                                .map_or_else(String::new, |s| s.to_string_lossy().into_owned());
                            save_image(&r.perturbed_image, dir.join(format!("{stem}.{source}.png")))?;
                        }
                        Ok(Row {
                            image: file_name(path),
                            method: source,
                            class,
                            confidence_before: r.confidence_before,
                            confidence_after: r.confidence_after,
                            drop: r.drop,
                            threshold: r.mask.threshold,
                            selected: r.mask.selected,
                            nonzero: r.mask.nonzero,
                            target: r.mask.target,
                            degenerate: r.mask.degenerate,
                        })
                    })
                    .collect::<CliResult<Vec<Row>>>()
            })
            .collect::<CliResult<Vec<_>>>()
    })??;
    let rows: Vec<Row> = per_image.into_iter().flatten().collect();

    let summary: Vec<MethodSummary> = args
        .methods
        .iter()
        .map(|&m| {
            let of = || rows.iter().filter(move |r| r.method == m);
            MethodSummary {
                method: m,
                drop: mean_defined(of().map(|r| Some(r.drop))),
                degenerate: of().filter(|r| r.degenerate).count(),
            }
        })
        .collect();

    let layer_name = &net.layers()[layer].name;
    println!(
        "{} images, layer {layer_name} ({layer}), heatmaps {HEATMAP_NORMALIZATION}-normalized",
        files.len()
    );
    println!("{:<14} {:>12} {:>11}", "method", "mean drop", "degenerate");
    for s in &summary {
        println!(
            "{:<14} {:>12} {:>11}",
            s.method.to_string(),
            fmt_opt(s.drop.mean),
            s.degenerate
        );
    }
    if let Some(path) = &args.csv {
        write_csv(path, &rows)?;
        println!("wrote {}", path.display());
    }
    if let Some(path) = &args.json {
        let report = Report {
            layer,
            layer_name,
            heatmap_normalization: HEATMAP_NORMALIZATION,
            seed: args.seed,
            rows: &rows,
            summary,
        };
        camx::modelio::write_json(&report, path)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}
