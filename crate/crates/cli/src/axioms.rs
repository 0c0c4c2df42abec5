use std::path::PathBuf;

use camx::autodiff::backward;
use camx::axioms::{axiom_report_with, layer_diagnostics, mean_defined, AxiomReport, MeanSummary};
use camx::cam::CamMethod;
use camx::modelio::{load_image, load_model, write_json};
use clap::Args;
use rayon::prelude::*;
use serde::Serialize;

use crate::common::{file_name, fmt_opt, list_corpus, parse_method, resolve_layer, with_pool, write_csv, CliResult};

#[derive(Args, Debug)]
pub struct AxiomsArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Directory of PNG/PPM/PGM images
    #[arg(long)]
    pub images: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "grad,gradpp,ablation,xgrad", value_parser = parse_method)]
    pub methods: Vec<CamMethod>,
    #[arg(long)]
    pub layer: Option<String>,
    #[arg(long)]
    pub resize: bool,
    /// Also compute the per-channel zeta terms (K extra passes per image)
    #[arg(long)]
    pub zeta: bool,
    /// Also report mean |eps / S_c| at every spatial layer
    #[arg(long)]
    pub epsilon_by_layer: bool,
    /// Per-image rows
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Full reports and corpus summary
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Serialize)]
pub struct Row {
    pub image: String,
    pub method: CamMethod,
    pub class: usize,
    pub score: f64,
    pub sensitivity_residual: Option<f64>,
    pub conservation_residual: Option<f64>,
    pub epsilon: f64,
    pub epsilon_bias_traced: f64,
    pub epsilon_normalized: Option<f64>,
    pub phi: f64,
}

#[derive(Serialize)]
pub struct MethodSummary {
    pub method: CamMethod,
    pub sensitivity_residual: MeanSummary,
    pub conservation_residual: MeanSummary,
    pub epsilon_normalized: MeanSummary,
    pub phi: MeanSummary,
}

#[derive(Serialize)]
struct ImageReports {
    image: String,
    reports: Vec<AxiomReport>,
}

#[derive(Serialize)]
struct LayerEpsilon {
    layer: usize,
    name: String,
    epsilon_normalized: MeanSummary,
}

#[derive(Serialize)]
struct Report {
    layer: usize,
    layer_name: String,
    images: Vec<ImageReports>,
    summary: Vec<MethodSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    epsilon_by_layer: Option<Vec<LayerEpsilon>>,
}

pub fn summarize(methods: &[CamMethod], rows: &[Row]) -> Vec<MethodSummary> {
    methods
        .iter()
        .map(|&m| {
            let of = || rows.iter().filter(move |r| r.method == m);
            MethodSummary {
                method: m,
                sensitivity_residual: mean_defined(of().map(|r| r.sensitivity_residual)),
                conservation_residual: mean_defined(of().map(|r| r.conservation_residual)),
                epsilon_normalized: mean_defined(of().map(|r| r.epsilon_normalized)),
                phi: mean_defined(of().map(|r| Some(r.phi))),
            }
        })
        .collect()
}

pub fn axioms(args: &AxiomsArgs) -> CliResult<()> {
    let net = load_model(&args.model)?;
    let layer = resolve_layer(&net, args.layer.as_deref())?;
    let files = list_corpus(&args.images)?;

    let per_image: Vec<(ImageReports, camx::ActivationTrace)> = with_pool(|| {
        files
            .par_iter()
            .map(|path| {
                let img = load_image(path, &net, args.resize)?;
                let trace = net.forward(&img.normalized)?;
                let class = trace.top_class();
                let grads = backward(&net, &trace, class)?;
                let reports = args
                    .methods
                    .iter()
                    .map(|&m| axiom_report_with(&net, &trace, &grads, m, layer, class, args.zeta))
                    .collect::<camx::Result<Vec<_>>>()?;
                Ok((
                    ImageReports {
                        image: file_name(path),
                        reports,
                    },
                    trace,
                ))
            })
            .collect::<CliResult<Vec<_>>>()
    })??;

    let rows: Vec<Row> = per_image
        .iter()
        .flat_map(|(ir, _)| {
            ir.reports.iter().map(|r| Row {
                image: ir.image.clone(),
                method: r.method,
                class: r.class,
                score: r.score,
                sensitivity_residual: r.sensitivity_residual,
                conservation_residual: r.conservation_residual,
                epsilon: r.epsilon,
                epsilon_bias_traced: r.epsilon_bias_traced,
                epsilon_normalized: r.epsilon_normalized,
                phi: r.phi,
            })
        })
        .collect();
    let summary = summarize(&args.methods, &rows);

    let layer_name = net.layers()[layer].name.clone();
    println!("{} images, layer {layer_name} ({layer})", files.len());
    println!(
        "{:<14} {:>14} {:>5} {:>14} {:>5} {:>12} {:>14}",
        "method", "sensitivity", "excl", "conservation", "excl", "|eps/S|", "phi"
    );
    for s in &summary {
        println!(
            "{:<14} {:>14} {:>5} {:>14} {:>5} {:>12} {:>14}",
            s.method.to_string(),
            fmt_opt(s.sensitivity_residual.mean),
            s.sensitivity_residual.excluded,
            fmt_opt(s.conservation_residual.mean),
            s.conservation_residual.excluded,
            fmt_opt(s.epsilon_normalized.mean),
            fmt_opt(s.phi.mean),
        );
    }

    let epsilon_by_layer = if args.epsilon_by_layer {
        let traces: Vec<_> = per_image.iter().map(|(_, t)| t.clone()).collect();
        let diags = layer_diagnostics(&net, &traces, false)?;
        println!("{:<6} {:<12} {:>12} {:>5}", "layer", "name", "|eps/S|", "excl");
        let out: Vec<LayerEpsilon> = diags
            .into_iter()
            .map(|d| {
                let summary = MeanSummary {
                    mean: d.epsilon_normalized.mean,
                    count: d.epsilon_normalized.count,
                    excluded: d.epsilon_normalized.excluded,
                };
                println!(
                    "{:<6} {:<12} {:>12} {:>5}",
                    d.layer,
                    d.name,
                    fmt_opt(summary.mean),
                    summary.excluded
                );
                LayerEpsilon {
                    layer: d.layer,
                    name: d.name,
                    epsilon_normalized: summary,
                }
            })
            .collect();
        Some(out)
    } else {
        None
    };

    if let Some(path) = &args.csv {
        write_csv(path, &rows)?;
        println!("wrote {}", path.display());
    }
    if let Some(path) = &args.json {
        let report = Report {
            layer,
            layer_name,
            images: per_image.into_iter().map(|(ir, _)| ir).collect(),
            summary,
            epsilon_by_layer,
        };
        write_json(&report, path)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}
