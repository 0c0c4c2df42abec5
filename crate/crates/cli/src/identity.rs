use std::path::PathBuf;

use camx::autodiff::backward;
use camx::axioms::{decomposition_all_layers, decomposition_check, Decomposition};
use camx::modelio::{check_fixtures, load_image, load_model};
use clap::Args;

use crate::common::{class_name, resolve_layer, ClassArg, CliError, CliResult};

/// Largest accepted relative residual.
pub const TOLERANCE: f64 = 1e-6;

#[derive(Args, Debug)]
pub struct IdentityArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    /// Check the input and every layer instead of only the target layer
    #[arg(long)]
    pub all_layers: bool,
    #[arg(long)]
    pub layer: Option<String>,
    #[arg(long, default_value = "auto")]
    pub class: ClassArg,
    #[arg(long)]
    pub resize: bool,
    /// Test hook: perturb the gradient stored for this layer before checking
    #[arg(long, hide = true)]
    pub corrupt_gradient: Option<String>,
}

pub fn check_identity(args: &IdentityArgs) -> CliResult<()> {
    let net = load_model(&args.model)?;
    let img = load_image(&args.image, &net, args.resize)?;
    let trace = net.forward(&img.normalized)?;
    let class = args.class.resolve(&net, trace.top_class())?;
    let mut grads = backward(&net, &trace, class)?;
    if let Some(key) = &args.corrupt_gradient {
        let l = net.resolve_layer(key)?;
        let g = grads.layer_mut(l);
        *g = g.map(|v| 1.5 * v + 1e-3);
    }

    let rows: Vec<Decomposition> = if args.all_layers {
        decomposition_all_layers(&net, &trace, &grads, class)?
    } else {
        let l = resolve_layer(&net, args.layer.as_deref())?;
        vec![decomposition_check(&net, &trace, &grads, l, class)?]
    };

    println!(
        "class {} score {:.9}",
        class_name(&net, class),
        trace.scores().data()[class]
    );
    println!(
        "{:<6} {:<12} {:>16} {:>16} {:>16} {:>12} {:>6}",
        "layer", "name", "sum(g*F)", "eps(residual)", "eps(biases)", "rel.resid", ""
    );
    let mut failed = Vec::new();
    for d in &rows {
        let (index, name) = match d.layer {
            None => ("-".to_string(), "input"),
            Some(l) => (l.to_string(), net.layers()[l].name.as_str()),
        };
        let r = d.relative_residual();
        let ok = r < TOLERANCE;
        if !ok {
            failed.push(name.to_string());
        }
        println!(
            "{index:<6} {name:<12} {:>16.9e} {:>16.9e} {:>16.9e} {r:>12.3e} {:>6}",
            d.lhs_sum,
            d.epsilon_residual,
            d.epsilon_bias_traced,
            if ok { "PASS" } else { "FAIL" }
        );
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Identity(format!(
            "residual above {TOLERANCE:e} at {}",
            failed.join(", ")
        )))
    }
}

#[derive(Args, Debug)]
pub struct FixturesArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Largest accepted absolute logit difference
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
}

pub fn check_fixtures_cmd(args: &FixturesArgs) -> CliResult<()> {
    let checks = check_fixtures(&args.model)?;
    if checks.is_empty() {
        println!("manifest lists no fixtures");
        return Ok(());
    }
    let mut bad = 0;
    for c in &checks {
        let ok = c.max_abs_diff <= args.tolerance;
        bad += usize::from(!ok);
        println!(
            "{:<32} {:>12.3e} {}",
            c.image,
            c.max_abs_diff,
            if ok { "PASS" } else { "FAIL" }
        );
    }
    if bad > 0 {
        return Err(CliError::Validation(format!(
            "{bad} of {} fixtures differ by more than {:e}",
            checks.len(),
            args.tolerance
        )));
    }
    Ok(())
}
