//! Sensitivity / conservation instrumentation.
//!
//! For a ReLU-CNN the class score decomposes at any layer `l` as
//! `S_c = sum(dS_c/dF^l * F^l) + eps(F^l)` where `eps` collects the biases of
//! every later layer weighted by the score's gradient at that layer. This
//! module computes `eps` both as that residual and by tracing the biases,
//! the per-channel cross terms `zeta`, and the per-image axiom residuals.

use serde::Serialize;

use crate::autodiff::{backward, GradientTrace};
use crate::cam::{compute_weights, score_drops, CamMethod};
use crate::error::{Error, Result};
use crate::network::{ActivationTrace, Layer, Network};
use crate::tensor::Tensor;

/// Both sides of the score decomposition at one layer (or at the input).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Decomposition {
    /// `None` for the network input.
    pub layer: Option<usize>,
    pub score: f64,
    /// `sum(g * F)` over every unit of the layer.
    pub lhs_sum: f64,
    /// `S_c - lhs_sum`.
    pub epsilon_residual: f64,
    /// Bias contributions of all later layers, weighted by their gradients.
    pub epsilon_bias_traced: f64,
}

impl Decomposition {
    /// `|S_c - sum(g * F) - eps_traced| / max(|S_c|, 1e-12)`.
    pub fn relative_residual(&self) -> f64 {
        (self.score - self.lhs_sum - self.epsilon_bias_traced).abs() / self.score.abs().max(1e-12)
    }
}

fn check_gradients(net: &Network, trace: &ActivationTrace, gradients: &GradientTrace, class: usize) -> Result<()> {
    net.check_trace(trace)?;
    net.check_class(class)?;
    if gradients.layers().len() != net.len() {
        return Err(Error::InvalidArgument(format!(
            "gradient trace has {} layers, network has {}",
            gradients.layers().len(),
            net.len()
        )));
    }
    if let Some(gc) = gradients.class() {
        if gc != class {
            return Err(Error::InvalidArgument(format!(
                "gradients were computed for class {gc}, not {class}"
            )));
        }
    }
    Ok(())
}

/// Bias term of layer `t` weighted by the gradient at its output.
fn bias_contribution(layer: &Layer, grad: &Tensor) -> f64 {
    match layer {
        Layer::Conv2d(conv) => conv
            .bias()
            .data()
            .iter()
            .enumerate()
            .map(|(o, &b)| b * grad.channel(o).iter().sum::<f64>())
            .sum(),
        Layer::Dense(d) => d.bias().dot(grad).expect("gradient matches layer output"),
        _ => 0.0,
    }
}

/// `sum_{t >= first} sum_j (dS/du_j^t) b_j^t`.
fn traced_epsilon(net: &Network, gradients: &GradientTrace, first: usize) -> f64 {
    (first..net.len())
        .map(|t| bias_contribution(net.layer(t), gradients.layer(t)))
        .sum()
}

/// Bias-traced `eps(F^l)`: every layer after `l` contributes.
pub fn epsilon_bias_traced(net: &Network, gradients: &GradientTrace, l: usize) -> Result<f64> {
    net.check_layer(l)?;
    Ok(traced_epsilon(net, gradients, l + 1))
}

pub fn decomposition_check(
    net: &Network,
    trace: &ActivationTrace,
    gradients: &GradientTrace,
    l: usize,
    class: usize,
) -> Result<Decomposition> {
    net.check_layer(l)?;
    check_gradients(net, trace, gradients, class)?;
    let score = trace.scores().data()[class];
    let lhs_sum = gradients.layer(l).dot(trace.output(l))?;
    Ok(Decomposition {
        layer: Some(l),
        score,
        lhs_sum,
        epsilon_residual: score - lhs_sum,
        epsilon_bias_traced: traced_epsilon(net, gradients, l + 1),
    })
}

/// The decomposition at the network input, where every bias contributes.
pub fn decomposition_at_input(
    net: &Network,
    trace: &ActivationTrace,
    gradients: &GradientTrace,
    class: usize,
) -> Result<Decomposition> {
    check_gradients(net, trace, gradients, class)?;
    let score = trace.scores().data()[class];
    let lhs_sum = gradients.input().dot(trace.input())?;
    Ok(Decomposition {
        layer: None,
        score,
        lhs_sum,
        epsilon_residual: score - lhs_sum,
        epsilon_bias_traced: traced_epsilon(net, gradients, 0),
    })
}

/// Decomposition at the input and at every layer, all from one gradient trace.
pub fn decomposition_all_layers(
    net: &Network,
    trace: &ActivationTrace,
    gradients: &GradientTrace,
    class: usize,
) -> Result<Vec<Decomposition>> {
    let mut out = vec![decomposition_at_input(net, trace, gradients, class)?];
    for l in 0..net.len() {
        out.push(decomposition_check(net, trace, gradients, l, class)?);
    }
    Ok(out)
}

/// Per-channel attributed mass `w^k * sum_{x,y} F^lk(x, y)`.
pub fn channel_masses(weights: &[f64], trace: &ActivationTrace, l: usize) -> Result<Vec<f64>> {
    let f = trace.output(l);
    let (k, _, _) = f.chw().ok_or(Error::NotSpatial { layer: l })?;
    if weights.len() != k {
        return Err(Error::InvalidArgument(format!(
            "{} weights for {k} channels",
            weights.len()
        )));
    }
    Ok(weights
        .iter()
        .enumerate()
        .map(|(c, &w)| w * f.channel(c).iter().sum::<f64>())
        .collect())
}

/// One image's sensitivity ratio from precomputed drops and masses; `None`
/// when no ablation changes the score.
pub fn sensitivity_from_drops(drops: &[f64], masses: &[f64]) -> Option<f64> {
    let denom: f64 = drops.iter().map(|d| d.abs()).sum();
    if denom == 0.0 {
        return None;
    }
    let num: f64 = drops.iter().zip(masses).map(|(d, m)| (d - m).abs()).sum();
    Some(num / denom)
}

pub fn sensitivity_residual(
    net: &Network,
    trace: &ActivationTrace,
    weights: &[f64],
    l: usize,
    class: usize,
) -> Result<Option<f64>> {
    let drops = score_drops(net, trace, l, class)?;
    let masses = channel_masses(weights, trace, l)?;
    Ok(sensitivity_from_drops(&drops, &masses))
}

/// One image's conservation ratio; `None` when `S_c == 0`.
pub fn conservation_residual(trace: &ActivationTrace, weights: &[f64], l: usize, class: usize) -> Result<Option<f64>> {
    let score = *trace.scores().data().get(class).ok_or(Error::ClassOutOfRange {
        class,
        count: trace.scores().len(),
    })?;
    let total: f64 = channel_masses(weights, trace, l)?.iter().sum();
    if score == 0.0 {
        return Ok(None);
    }
    Ok(Some((score - total).abs() / score.abs()))
}

/// Unnormalized objective: sensitivity term plus conservation term.
pub fn evaluate_phi(net: &Network, trace: &ActivationTrace, weights: &[f64], l: usize, class: usize) -> Result<f64> {
    let drops = score_drops(net, trace, l, class)?;
    let masses = channel_masses(weights, trace, l)?;
    Ok(phi_from_parts(trace.scores().data()[class], &drops, &masses))
}

fn phi_from_parts(score: f64, drops: &[f64], masses: &[f64]) -> f64 {
    let sensitivity: f64 = drops.iter().zip(masses).map(|(d, m)| (d - m).abs()).sum();
    let conservation = (score - masses.iter().sum::<f64>()).abs();
    sensitivity + conservation
}

/// `zeta(F^l; k)` for every channel. Each channel costs one ablated forward
/// and one ablated backward; both epsilons are bias-traced.
pub fn zeta_per_channel(
    net: &Network,
    trace: &ActivationTrace,
    gradients: &GradientTrace,
    l: usize,
    class: usize,
) -> Result<Vec<f64>> {
    net.check_spatial(l)?;
    check_gradients(net, trace, gradients, class)?;
    let f = trace.output(l);
    let g = gradients.layer(l);
    let k = f.chw().expect("spatial").0;
    let eps_full = traced_epsilon(net, gradients, l + 1);
    (0..k)
        .map(|ablated| {
            if f.channel(ablated).iter().all(|&v| v == 0.0) {
                return Ok(0.0);
            }
            let t2 = net.ablated_trace(trace, l, ablated)?;
            let g2 = backward(net, &t2, class)?;
            let g2l = g2.layer(l);
            let cross: f64 = (0..k)
                .filter(|&c| c != ablated)
                .map(|c| {
                    f.channel(c)
                        .iter()
                        .zip(g.channel(c))
                        .zip(g2l.channel(c))
                        .map(|((fv, a), b)| (a - b) * fv)
                        .sum::<f64>()
                })
                .sum();
            Ok(cross + eps_full - traced_epsilon(net, &g2, l + 1))
        })
        .collect()
}

/// Axiom measurements for one (image, method, layer, class).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AxiomReport {
    pub method: CamMethod,
    pub layer: usize,
    pub class: usize,
    pub score: f64,
    pub weights: Vec<f64>,
    /// `None` when every score drop is zero.
    pub sensitivity_residual: Option<f64>,
    /// `None` when the class score is zero.
    pub conservation_residual: Option<f64>,
    /// `S_c - sum(g * F)` at the target layer.
    pub epsilon: f64,
    pub epsilon_bias_traced: f64,
    /// `|eps / S_c|`, `None` when the class score is zero.
    pub epsilon_normalized: Option<f64>,
    pub zeta_per_channel: Option<Vec<f64>>,
    pub per_channel_score_drop: Vec<f64>,
    pub phi: f64,
}

/// Full axiom report. `zeta` is optional because it costs K extra
/// forward/backward pairs.
pub fn axiom_report(
    net: &Network,
    trace: &ActivationTrace,
    method: CamMethod,
    l: usize,
    class: usize,
    with_zeta: bool,
) -> Result<AxiomReport> {
    net.check_spatial(l)?;
    let gradients = backward(net, trace, class)?;
    axiom_report_with(net, trace, &gradients, method, l, class, with_zeta)
}

/// As [`axiom_report`], reusing an existing class-`class` gradient trace.
pub fn axiom_report_with(
    net: &Network,
    trace: &ActivationTrace,
    gradients: &GradientTrace,
    method: CamMethod,
    l: usize,
    class: usize,
    with_zeta: bool,
) -> Result<AxiomReport> {
    let weights = compute_weights(method, net, trace, Some(gradients), l, class)?;
    let drops = score_drops(net, trace, l, class)?;
    let masses = channel_masses(&weights, trace, l)?;
    let decomposition = decomposition_check(net, trace, gradients, l, class)?;
    let score = decomposition.score;
    let zeta = if with_zeta {
        Some(zeta_per_channel(net, trace, gradients, l, class)?)
    } else {
        None
    };
    Ok(AxiomReport {
        method,
        layer: l,
        class,
        score,
        sensitivity_residual: sensitivity_from_drops(&drops, &masses),
        conservation_residual: conservation_residual(trace, &weights, l, class)?,
        epsilon: decomposition.epsilon_residual,
        epsilon_bias_traced: decomposition.epsilon_bias_traced,
        epsilon_normalized: (score != 0.0).then(|| (decomposition.epsilon_residual / score).abs()),
        zeta_per_channel: zeta,
        phi: phi_from_parts(score, &drops, &masses),
        per_channel_score_drop: drops,
        weights,
    })
}

/// Arithmetic mean over the defined values; undefined ones are counted.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MeanSummary {
    pub mean: Option<f64>,
    pub count: usize,
    pub excluded: usize,
}

pub fn mean_defined<I: IntoIterator<Item = Option<f64>>>(values: I) -> MeanSummary {
    let (mut sum, mut count, mut excluded) = (0.0, 0, 0);
    for v in values {
        match v {
            Some(v) => {
                sum += v;
                count += 1;
            }
            None => excluded += 1,
        }
    }
    MeanSummary {
        mean: (count > 0).then(|| sum / count as f64),
        count,
        excluded,
    }
}

/// Mean and quartiles of the defined values.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Distribution {
    pub mean: Option<f64>,
    pub min: Option<f64>,
    pub q1: Option<f64>,
    pub median: Option<f64>,
    pub q3: Option<f64>,
    pub max: Option<f64>,
    pub count: usize,
    pub excluded: usize,
}

pub fn distribution<I: IntoIterator<Item = Option<f64>>>(values: I) -> Distribution {
    let all: Vec<Option<f64>> = values.into_iter().collect();
    let summary = mean_defined(all.iter().copied());
    let defined: Vec<f64> = all.into_iter().flatten().collect();
    let q = |p: f64| {
        Tensor::from_vec(defined.clone())
            .ok()
            .and_then(|t| t.percentile(p).ok())
    };
    Distribution {
        mean: summary.mean,
        min: q(0.0),
        q1: q(25.0),
        median: q(50.0),
        q3: q(75.0),
        max: q(100.0),
        count: summary.count,
        excluded: summary.excluded,
    }
}

/// Corpus statistics of the normalized `eps` and `zeta` at one layer.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LayerDiagnostics {
    pub layer: usize,
    pub name: String,
    /// `|eps(F^l) / S_c|`.
    pub epsilon_normalized: Distribution,
    /// `sum_k |zeta| / sum_k |S_c - S_c(F \ F^k)|`.
    pub zeta_normalized: Option<Distribution>,
}

/// Per-layer `eps` / `zeta` statistics over a corpus, with the class set to
/// each image's top-1 prediction. Covers every spatial layer.
pub fn layer_diagnostics(net: &Network, traces: &[ActivationTrace], with_zeta: bool) -> Result<Vec<LayerDiagnostics>> {
    if traces.is_empty() {
        return Err(Error::InvalidArgument("empty corpus".into()));
    }
    let layers: Vec<usize> = (0..net.len()).filter(|&l| net.is_spatial(l)).collect();
    let mut eps: Vec<Vec<Option<f64>>> = vec![Vec::with_capacity(traces.len()); layers.len()];
    let mut zeta: Vec<Vec<Option<f64>>> = vec![Vec::with_capacity(traces.len()); layers.len()];
    for trace in traces {
        let class = trace.top_class();
        let gradients = backward(net, trace, class)?;
        for (i, &l) in layers.iter().enumerate() {
            let d = decomposition_check(net, trace, &gradients, l, class)?;
            eps[i].push((d.score != 0.0).then(|| (d.epsilon_residual / d.score).abs()));
            if with_zeta {
                let z = zeta_per_channel(net, trace, &gradients, l, class)?;
                let drops = score_drops(net, trace, l, class)?;
                let denom: f64 = drops.iter().map(|d| d.abs()).sum();
                let num: f64 = z.iter().map(|v| v.abs()).sum();
                zeta[i].push((denom != 0.0).then(|| num / denom));
            }
        }
    }
    Ok(layers
        .iter()
        .enumerate()
        .map(|(i, &l)| LayerDiagnostics {
            layer: l,
            name: net.layers()[l].name.clone(),
            epsilon_normalized: distribution(eps[i].iter().copied()),
            zeta_normalized: with_zeta.then(|| distribution(zeta[i].iter().copied())),
        })
        .collect())
}
