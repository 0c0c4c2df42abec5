use std::path::{Path, PathBuf};
use std::time::Instant;

use camx::autodiff::guided_backward;
use camx::cam::{explain, guided_fuse, CamMethod, Explanation};
use camx::modelio::{load_image, load_model, render_heatmap, render_signed, save_png, tile, HeatmapImage, LoadedImage};
use camx::{Network, Tensor};
use clap::Args;
use image::DynamicImage;

use crate::common::{class_name, parse_method, resolve_class, resolve_layer, ClassArg, CliResult};

#[derive(Args, Debug)]
pub struct Source {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    /// Target layer name or index (default: last rectified spatial layer)
    #[arg(long)]
    pub layer: Option<String>,
    /// Blend the colormapped heatmap over the input image
    #[arg(long)]
    pub overlay: bool,
    /// Bilinearly resize images whose size differs from the model input
    #[arg(long)]
    pub resize: bool,
}

#[derive(Args, Debug)]
pub struct VisualizeArgs {
    #[command(flatten)]
    pub source: Source,
    /// grad, gradpp, ablation, xgrad or cam
    #[arg(long, value_parser = parse_method)]
    pub method: CamMethod,
    /// Class index, label, or auto for the top-1 prediction
    #[arg(long, default_value = "auto")]
    pub class: ClassArg,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the guided-backprop fusion next to --out
    #[arg(long)]
    pub guided: bool,
}

#[derive(Args, Debug)]
pub struct CompareArgs {
    #[command(flatten)]
    pub source: Source,
    /// Comma-separated class indices or labels, one panel row each
    #[arg(long, value_delimiter = ',', required = true)]
    pub classes: Vec<String>,
    /// Comma-separated methods, one panel column each
    #[arg(long, value_delimiter = ',', default_value = "grad,xgrad", value_parser = parse_method)]
    pub methods: Vec<CamMethod>,
    #[arg(long)]
    pub out: PathBuf,
}

struct Loaded {
    net: Network,
    image: LoadedImage,
    trace: camx::ActivationTrace,
    layer: usize,
}

fn load(source: &Source) -> CliResult<Loaded> {
    let net = load_model(&source.model)?;
    let image = load_image(&source.image, &net, source.resize)?;
    let trace = net.forward(&image.normalized)?;
    let layer = resolve_layer(&net, source.layer.as_deref())?;
    Ok(Loaded {
        net,
        image,
        trace,
        layer,
    })
}

/// The image `visualize` writes for one explanation.
pub fn render(e: &Explanation, base: Option<&Tensor>) -> CliResult<DynamicImage> {
    let values = HeatmapImage::from_heatmap(&e.cam.heatmap)?;
    Ok(render_heatmap(&values, base)?)
}

/// `<out>` with `.guided` inserted before the extension.
pub fn guided_path(out: &Path) -> PathBuf {
    let stem = out
        .file_stem()
        .map_or_else(String::new, |s| s.to_string_lossy().into_owned());
    out.with_file_name(format!("{stem}.guided.png"))
}

fn timed_explain(l: &Loaded, method: CamMethod, class: usize) -> CliResult<(Explanation, f64)> {
    let start = Instant::now();
    let e = explain(&l.net, &l.trace, method, Some(l.layer), Some(class))?;
    Ok((e, start.elapsed().as_secs_f64() * 1e3))
}

pub fn visualize(args: &VisualizeArgs) -> CliResult<()> {
    let l = load(&args.source)?;
    let class = args.class.resolve(&l.net, l.trace.top_class())?;
    let (e, ms) = timed_explain(&l, args.method, class)?;
    let base = args.source.overlay.then_some(&l.image.raw);
    save_png(&render(&e, base)?, &args.out)?;
    println!("class {} score {:.6}", class_name(&l.net, class), e.score);
    println!(
        "method {} layer {} ({}) time {ms:.3} ms",
        args.method,
        l.net.layers()[l.layer].name,
        l.layer
    );
    println!("wrote {}", args.out.display());
    if args.guided {
        let g = guided_backward(&l.net, &l.trace, class)?;
        let fused = guided_fuse(&e.cam, &g)?;
        let path = guided_path(&args.out);
        save_png(&render_signed(&fused)?, &path)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

pub fn compare(args: &CompareArgs) -> CliResult<()> {
    let l = load(&args.source)?;
    let classes: Vec<usize> = args
        .classes
        .iter()
        .map(|c| resolve_class(&l.net, c))
        .collect::<CliResult<_>>()?;
    let base = args.source.overlay.then_some(&l.image.raw);
    let mut panels = Vec::with_capacity(classes.len() * args.methods.len());
    for &c in &classes {
        for &m in &args.methods {
            let (e, ms) = timed_explain(&l, m, c)?;
            println!(
                "class {} method {m} score {:.6} time {ms:.3} ms",
                class_name(&l.net, c),
                e.score
            );
            panels.push(render(&e, base)?);
        }
    }
    save_png(&tile(&panels, args.methods.len())?, &args.out)?;
    println!(
        "wrote {} ({} rows x {} columns)",
        args.out.display(),
        classes.len(),
        args.methods.len()
    );
    Ok(())
}
