//! CAM weighting schemes, map assembly and guided fusion.
//!
//! Every method produces one weight per feature map of the target layer; the
//! map is the weighted channel sum, ReLU-rectified and bilinearly upsampled
//! to the input resolution.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::{backward, GradientTrace};
use crate::error::{Error, Result};
use crate::network::{ActivationTrace, Layer, Network};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CamMethod {
    GradCam,
    GradCamPp,
    AblationCam,
    XgradCam,
    CamGap,
}

impl CamMethod {
    pub const ALL: [CamMethod; 5] = [
        CamMethod::GradCam,
        CamMethod::GradCamPp,
        CamMethod::AblationCam,
        CamMethod::XgradCam,
        CamMethod::CamGap,
    ];

    /// Short name used on the command line.
    pub fn short_name(self) -> &'static str {
        match self {
            CamMethod::GradCam => "grad",
            CamMethod::GradCamPp => "gradpp",
            CamMethod::AblationCam => "ablation",
            CamMethod::XgradCam => "xgrad",
            CamMethod::CamGap => "cam",
        }
    }

    pub fn needs_gradients(self) -> bool {
        matches!(self, CamMethod::GradCam | CamMethod::GradCamPp | CamMethod::XgradCam)
    }
}

impl fmt::Display for CamMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CamMethod::GradCam => "grad_cam",
            CamMethod::GradCamPp => "grad_cam_pp",
            CamMethod::AblationCam => "ablation_cam",
            CamMethod::XgradCam => "xgrad_cam",
            CamMethod::CamGap => "cam_gap",
        })
    }
}

impl FromStr for CamMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "grad" | "grad_cam" | "gradcam" => CamMethod::GradCam,
            "gradpp" | "grad_cam_pp" | "gradcampp" => CamMethod::GradCamPp,
            "ablation" | "ablation_cam" => CamMethod::AblationCam,
            "xgrad" | "xgrad_cam" | "xgradcam" => CamMethod::XgradCam,
            "cam" | "cam_gap" => CamMethod::CamGap,
            other => return Err(Error::UnknownMethod(other.to_string())),
        })
    }
}

/// Weights, raw map and rendered heatmap for one target layer.
#[derive(Clone, Debug, PartialEq)]
pub struct CamResult {
    pub weights: Vec<f64>,
    /// `sum_k w^k F^lk` at target-layer resolution, before rectification.
    pub raw_map: Tensor,
    /// Rectified raw map, upsampled to the input `H x W`.
    pub heatmap: Tensor,
    pub target_layer: usize,
}

/// A [`CamResult`] together with the method and class that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct Explanation {
    pub method: CamMethod,
    pub class: usize,
    pub score: f64,
    pub cam: CamResult,
}

fn feature_map<'a>(net: &Network, trace: &'a ActivationTrace, l: usize) -> Result<&'a Tensor> {
    net.check_spatial(l)?;
    net.check_trace(trace)?;
    Ok(trace.output(l))
}

fn gradient_map<'a>(net: &Network, gradients: &'a GradientTrace, l: usize) -> Result<&'a Tensor> {
    net.check_spatial(l)?;
    let g = gradients.layers().get(l).ok_or(Error::LayerOutOfRange {
        layer: l,
        count: gradients.layers().len(),
    })?;
    if g.shape() != net.output_shape(l) {
        return Err(Error::shape(g.shape(), net.output_shape(l)));
    }
    Ok(g)
}

/// Grad-CAM: spatial mean of each channel's gradient map.
pub fn weights_grad_cam(net: &Network, gradients: &GradientTrace, l: usize) -> Result<Vec<f64>> {
    let g = gradient_map(net, gradients, l)?;
    let (k, h, w) = g.chw().expect("spatial");
    let z = (h * w) as f64;
    Ok((0..k).map(|c| g.channel(c).iter().sum::<f64>() / z).collect())
}

/// XGrad-CAM: gradients averaged with the channel's normalized activations
/// as weights. Channels whose activations sum to zero get weight 0.
pub fn weights_xgrad_cam(
    net: &Network,
    trace: &ActivationTrace,
    gradients: &GradientTrace,
    l: usize,
) -> Result<Vec<f64>> {
    let f = feature_map(net, trace, l)?;
    let g = gradient_map(net, gradients, l)?;
    let k = f.chw().expect("spatial").0;
    Ok((0..k)
        .map(|c| {
            let (fk, gk) = (f.channel(c), g.channel(c));
            let total: f64 = fk.iter().sum();
            if total == 0.0 {
                return 0.0;
            }
            fk.iter().zip(gk).map(|(a, b)| a * b).sum::<f64>() / total
        })
        .collect())
}

/// Score drops `S_c(F^l) - S_c(F^l \ F^lk)` for every channel `k`.
pub fn score_drops(net: &Network, trace: &ActivationTrace, l: usize, class: usize) -> Result<Vec<f64>> {
    let f = feature_map(net, trace, l)?;
    net.check_class(class)?;
    let score = trace.scores().data()[class];
    let k = f.chw().expect("spatial").0;
    (0..k)
        .map(|c| {
            if f.channel(c).iter().all(|&v| v == 0.0) {
                return Ok(0.0);
            }
            Ok(score - net.forward_ablated(trace, l, c)?.data()[class])
        })
        .collect()
}

/// Ablation-CAM (activation-sum variant): score drop divided by the
/// channel's activation sum; zero-sum channels get weight 0.
pub fn weights_ablation_cam(net: &Network, trace: &ActivationTrace, l: usize, class: usize) -> Result<Vec<f64>> {
    let drops = score_drops(net, trace, l, class)?;
    let f = trace.output(l);
    Ok(drops
        .iter()
        .enumerate()
        .map(|(c, &d)| {
            let total: f64 = f.channel(c).iter().sum();
            if total == 0.0 {
                0.0
            } else {
                d / total
            }
        })
        .collect())
}

/// Grad-CAM++ with the first-derivative closed form
/// `a = g^2 / (2 g^2 + sum(F) g^3)` (0 where the denominator vanishes).
pub fn weights_grad_cam_pp(
    net: &Network,
    trace: &ActivationTrace,
    gradients: &GradientTrace,
    l: usize,
) -> Result<Vec<f64>> {
    let f = feature_map(net, trace, l)?;
    let g = gradient_map(net, gradients, l)?;
    let k = f.chw().expect("spatial").0;
    Ok((0..k)
        .map(|c| {
            let total: f64 = f.channel(c).iter().sum();
            g.channel(c)
                .iter()
                .map(|&gv| {
                    let g2 = gv * gv;
                    let denom = 2.0 * g2 + total * g2 * gv;
                    let a = if denom == 0.0 { 0.0 } else { g2 / denom };
                    a * gv.max(0.0)
                })
                .sum()
        })
        .collect())
}

/// Checks that layer `l` feeds `avgpool_global -> dense` and returns that
/// dense layer's index.
pub fn gap_head(net: &Network, l: usize) -> Result<usize> {
    net.check_spatial(l)?;
    let reject = |reason: &str| Error::IncompatibleMethod {
        method: CamMethod::CamGap.to_string(),
        reason: reason.to_string(),
    };
    if l + 3 != net.len() {
        return Err(reject(
            "target layer must be followed by exactly avgpool_global and the final dense layer",
        ));
    }
    if !matches!(net.layer(l + 1), Layer::GlobalAvgPool) {
        return Err(reject("target layer is not followed by avgpool_global"));
    }
    Ok(l + 2)
}

/// CAM: the classifier's weight row for `class` (no 1/Z factor).
pub fn weights_cam_gap(net: &Network, l: usize, class: usize) -> Result<Vec<f64>> {
    net.check_class(class)?;
    let fc = gap_head(net, l)?;
    match net.layer(fc) {
        Layer::Dense(d) => Ok(d.row(class).to_vec()),
        _ => unreachable!("network validation guarantees a dense final layer"),
    }
}

/// Computes weights for any method. `gradients` must be the class-`class`
/// gradient trace when the method needs gradients.
pub fn compute_weights(
    method: CamMethod,
    net: &Network,
    trace: &ActivationTrace,
    gradients: Option<&GradientTrace>,
    l: usize,
    class: usize,
) -> Result<Vec<f64>> {
    let grads = || gradients.ok_or_else(|| Error::InvalidArgument(format!("{method} requires gradients")));
    match method {
        CamMethod::GradCam => weights_grad_cam(net, grads()?, l),
        CamMethod::GradCamPp => weights_grad_cam_pp(net, trace, grads()?, l),
        CamMethod::XgradCam => weights_xgrad_cam(net, trace, grads()?, l),
        CamMethod::AblationCam => weights_ablation_cam(net, trace, l, class),
        CamMethod::CamGap => weights_cam_gap(net, l, class),
    }
}

/// Weighted channel sum at layer `l` (pre-ReLU `M_c`).
pub fn raw_map(weights: &[f64], trace: &ActivationTrace, l: usize) -> Result<Tensor> {
    let f = trace.output(l);
    let (k, h, w) = f.chw().ok_or(Error::NotSpatial { layer: l })?;
    if weights.len() != k {
        return Err(Error::InvalidArgument(format!(
            "{} weights for {k} channels",
            weights.len()
        )));
    }
    let mut map = vec![0.0; h * w];
    for (c, &wk) in weights.iter().enumerate() {
        for (m, &v) in map.iter_mut().zip(f.channel(c)) {
            *m += wk * v;
        }
    }
    Tensor::new(vec![h, w], map)
}

/// Builds the raw map, rectifies it and upsamples it to `input_hw`.
pub fn assemble(weights: &[f64], trace: &ActivationTrace, l: usize, input_hw: (usize, usize)) -> Result<CamResult> {
    if l >= trace.len() {
        return Err(Error::LayerOutOfRange {
            layer: l,
            count: trace.len(),
        });
    }
    let raw = raw_map(weights, trace, l)?;
    let heatmap = raw.relu().upsample_bilinear(input_hw)?;
    Ok(CamResult {
        weights: weights.to_vec(),
        raw_map: raw,
        heatmap,
        target_layer: l,
    })
}

/// Full pipeline for one image: resolves the default target layer and class
/// when not given, computes gradients if needed, and assembles the map.
pub fn explain(
    net: &Network,
    trace: &ActivationTrace,
    method: CamMethod,
    layer: Option<usize>,
    class: Option<usize>,
) -> Result<Explanation> {
    let l = match layer {
        Some(l) => l,
        None => net
            .last_spatial_layer()
            .ok_or_else(|| Error::InvalidArgument("network has no rectified spatial layer".into()))?,
    };
    net.check_spatial(l)?;
    let class = class.unwrap_or_else(|| trace.top_class());
    net.check_class(class)?;
    let gradients = if method.needs_gradients() {
        Some(backward(net, trace, class)?)
    } else {
        None
    };
    let weights = compute_weights(method, net, trace, gradients.as_ref(), l, class)?;
    let [_, h, w] = net.input_shape();
    Ok(Explanation {
        method,
        class,
        score: trace.scores().data()[class],
        cam: assemble(&weights, trace, l, (h, w))?,
    })
}

/// Guided CAM: the guided-backprop input gradient scaled per pixel by the
/// heatmap (broadcast over channels).
pub fn guided_fuse(cam: &CamResult, guided: &Tensor) -> Result<Tensor> {
    let (c, h, w) = guided.chw().ok_or_else(|| Error::InvalidShape {
        shape: guided.shape().to_vec(),
        reason: "guided map must be C x H x W".into(),
    })?;
    if cam.heatmap.shape() != [h, w] {
        return Err(Error::shape(cam.heatmap.shape(), &[h, w]));
    }
    let mut out = guided.clone();
    for k in 0..c {
        for (o, &m) in out.channel_mut(k).iter_mut().zip(cam.heatmap.data()) {
            *o *= m;
        }
    }
    debug_assert_eq!(out.shape(), [c, h, w]);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::backward;
    use crate::network::{Conv2d, Dense, LayerSpec, Normalization};
    use crate::synth::{random_input, random_relu_cnn, RandomNetOptions};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// 1x1 conv (identity on 2 channels) -> relu -> gap -> dense rows.
    fn gap_net(rows: &[f64], classes: usize) -> Network {
        let conv = Conv2d::new(
            Tensor::new(vec![2, 2, 1, 1], vec![1.0, 0.0, 0.0, 1.0]).unwrap(),
            Tensor::zeros(&[2]),
            1,
            0,
        )
        .unwrap();
        let fc = Dense::new(
            Tensor::new(vec![classes, 2], rows.to_vec()).unwrap(),
            Tensor::zeros(&[classes]),
        )
        .unwrap();
        Network::new(
            [2, 2, 3],
            vec![
                LayerSpec::new("conv", Layer::Conv2d(conv)),
                LayerSpec::new("relu", Layer::Relu),
                LayerSpec::new("gap", Layer::GlobalAvgPool),
                LayerSpec::new("fc", Layer::Dense(fc)),
            ],
            Normalization::identity(2),
            None,
        )
        .unwrap()
    }

    fn image() -> Tensor {
        Tensor::new(
            vec![2, 2, 3],
            vec![0.5, 1.0, 0.2, 0.0, 0.7, 0.3, 0.9, 0.1, 0.4, 0.6, 0.2, 0.8],
        )
        .unwrap()
    }

    #[test]
    fn cam_gap_reads_dense_row() {
        let net = gap_net(&[3.0, -1.0, 0.0, 0.0], 2);
        assert_eq!(weights_cam_gap(&net, 1, 0).unwrap(), vec![3.0, -1.0]);
        let trace = net.forward(&image()).unwrap();
        let e = explain(&net, &trace, CamMethod::CamGap, Some(1), Some(1)).unwrap();
        assert!(e.cam.heatmap.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn cam_gap_rejects_non_gap_tail() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = loop {
            let n = random_relu_cnn(&mut rng, RandomNetOptions::default());
            if n.layers().iter().all(|l| !matches!(l.layer, Layer::GlobalAvgPool)) {
                break n;
            }
        };
        let l = (0..net.len()).rev().find(|&l| net.is_spatial(l)).unwrap();
        assert!(matches!(
            weights_cam_gap(&net, l, 0),
            Err(Error::IncompatibleMethod { .. })
        ));
    }

    #[test]
    fn xgrad_on_gap_is_row_over_z() {
        let net = gap_net(&[3.0, -1.0, 0.5, 2.0], 2);
        let trace = net.forward(&image()).unwrap();
        let g = backward(&net, &trace, 0).unwrap();
        let a = weights_xgrad_cam(&net, &trace, &g, 1).unwrap();
        assert!((a[0] - 3.0 / 6.0).abs() < 1e-15);
        assert!((a[1] + 1.0 / 6.0).abs() < 1e-15);
        let ab = weights_ablation_cam(&net, &trace, 1, 0).unwrap();
        assert!((ab[0] - 0.5).abs() < 1e-14 && (ab[1] + 1.0 / 6.0).abs() < 1e-14);
    }

    #[test]
    fn zero_channel_guards() {
        let net = gap_net(&[3.0, -1.0, 0.5, 2.0], 2);
        let mut img = image();
        img.channel_mut(1).fill(-1.0); // relu zeroes channel 1
        let trace = net.forward(&img).unwrap();
        let g = backward(&net, &trace, 0).unwrap();
        assert_eq!(weights_xgrad_cam(&net, &trace, &g, 1).unwrap()[1], 0.0);
        assert_eq!(weights_ablation_cam(&net, &trace, 1, 0).unwrap()[1], 0.0);
        assert_eq!(score_drops(&net, &trace, 1, 0).unwrap()[1], 0.0);
    }

    #[test]
    fn constant_feature_map_xgrad_equals_grad() {
        let net = gap_net(&[1.0, 2.0, -0.5, 0.25], 2);
        let img = Tensor::new(vec![2, 2, 3], [vec![0.4; 6], vec![1.3; 6]].concat()).unwrap();
        let trace = net.forward(&img).unwrap();
        let g = backward(&net, &trace, 1).unwrap();
        let x = weights_xgrad_cam(&net, &trace, &g, 1).unwrap();
        let m = weights_grad_cam(&net, &g, 1).unwrap();
        for (a, b) in x.iter().zip(&m) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn grad_cam_weights_are_mean_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let net = random_relu_cnn(&mut rng, RandomNetOptions::default());
            let trace = net.forward(&random_input(&mut rng, &net)).unwrap();
            let g = backward(&net, &trace, 0).unwrap();
            for l in (0..net.len()).filter(|&l| net.is_spatial(l)) {
                let w = weights_grad_cam(&net, &g, l).unwrap();
                let gl = g.layer(l);
                let (k, h, wd) = gl.chw().unwrap();
                for c in 0..k {
                    let mut s = 0.0;
                    for y in 0..h {
                        for x in 0..wd {
                            s += gl.get(&[c, y, x]);
                        }
                    }
                    assert!((w[c] - s / (h * wd) as f64).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn grad_cam_pp_closed_form() {
        // single-pixel map, F = 0, g > 0: a = 1/2, weight = g/2
        let conv = Conv2d::new(Tensor::full(&[1, 1, 1, 1], 1.0), Tensor::zeros(&[1]), 1, 0).unwrap();
        let fc = Dense::new(Tensor::new(vec![1, 1], vec![4.0]).unwrap(), Tensor::zeros(&[1])).unwrap();
        let net = Network::new(
            [1, 1, 1],
            vec![
                LayerSpec::new("conv", Layer::Conv2d(conv)),
                LayerSpec::new("relu", Layer::Relu),
                LayerSpec::new("flat", Layer::Flatten),
                LayerSpec::new("fc", Layer::Dense(fc)),
            ],
            Normalization::identity(1),
            None,
        )
        .unwrap();
        let trace = net.forward(&Tensor::full(&[1, 1, 1], 0.0)).unwrap();
        let g = backward(&net, &trace, 0).unwrap();
        // relu at 0 blocks the gradient below, but at the relu output it is 4
        assert_eq!(g.layer(1).data(), &[4.0]);
        assert_eq!(weights_grad_cam_pp(&net, &trace, &g, 1).unwrap(), vec![2.0]);

        // explicit g^2, g^3 oracle on random nets
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let net = random_relu_cnn(&mut rng, RandomNetOptions::default());
            let trace = net.forward(&random_input(&mut rng, &net)).unwrap();
            let g = backward(&net, &trace, 1).unwrap();
            for l in (0..net.len()).filter(|&l| net.is_spatial(l)) {
                let w = weights_grad_cam_pp(&net, &trace, &g, l).unwrap();
                let (f, gl) = (trace.output(l), g.layer(l));
                for (c, &wc) in w.iter().enumerate() {
                    let sum_f: f64 = f.channel(c).iter().sum();
                    let mut expected = 0.0;
                    for &gv in gl.channel(c) {
                        let (g2, g3) = (gv.powi(2), gv.powi(3));
                        let d = 2.0 * g2 + sum_f * g3;
                        if d != 0.0 && gv > 0.0 {
                            expected += g2 / d * gv;
                        }
                    }
                    assert!((wc - expected).abs() <= 1e-12 * expected.abs().max(1.0));
                }
            }
        }

        let seed = Tensor::zeros(&[net.num_classes()]);
        let zeros = crate::autodiff::backward_from(&net, &trace, &seed).unwrap();
        assert!(weights_grad_cam_pp(&net, &trace, &zeros, 1)
            .unwrap()
            .iter()
            .all(|&w| w == 0.0));
        assert!(weights_grad_cam(&net, &zeros, 1).unwrap().iter().all(|&w| w == 0.0));
    }

    #[test]
    fn assemble_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let net = random_relu_cnn(
            &mut rng,
            RandomNetOptions {
                min_layers: 4,
                ..Default::default()
            },
        );
        let trace = net.forward(&random_input(&mut rng, &net)).unwrap();
        let l = (0..net.len()).find(|&l| net.is_spatial(l)).unwrap();
        let (k, h, w) = trace.output(l).chw().unwrap();
        let [_, ih, iw] = net.input_shape();

        let zero = assemble(&vec![0.0; k], &trace, l, (ih, iw)).unwrap();
        assert!(zero.heatmap.data().iter().all(|&v| v == 0.0));

        let mut one_hot = vec![0.0; k];
        one_hot[k - 1] = 1.0;
        let r = assemble(&one_hot, &trace, l, (ih, iw)).unwrap();
        let expected = Tensor::new(vec![h, w], trace.output(l).channel(k - 1).to_vec())
            .unwrap()
            .relu()
            .upsample_bilinear((ih, iw))
            .unwrap();
        assert_eq!(r.heatmap, expected);

        let weights: Vec<f64> = (0..k).map(|i| i as f64 - 1.3).collect();
        let r = assemble(&weights, &trace, l, (ih, iw)).unwrap();
        for y in 0..h {
            for x in 0..w {
                let dot: f64 = (0..k).map(|c| weights[c] * trace.output(l).get(&[c, y, x])).sum();
                assert!((r.raw_map.get(&[y, x]) - dot).abs() < 1e-12);
            }
        }
        assert!(r.heatmap.data().iter().all(|&v| v >= 0.0));
        assert!(assemble(&weights[1..], &trace, l, (ih, iw)).is_err());
    }

    #[test]
    fn guided_fuse_cases() {
        let guided = Tensor::new(vec![2, 1, 3], vec![1.0, -2.0, 3.0, 0.5, 0.0, -1.0]).unwrap();
        let mk = |h: Vec<f64>| CamResult {
            weights: vec![],
            raw_map: Tensor::zeros(&[1, 1]),
            heatmap: Tensor::new(vec![1, 3], h).unwrap(),
            target_layer: 0,
        };
        assert_eq!(guided_fuse(&mk(vec![1.0; 3]), &guided).unwrap(), guided);
        assert!(guided_fuse(&mk(vec![0.0; 3]), &guided)
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == 0.0));
        let mixed = guided_fuse(&mk(vec![0.5, 2.0, 0.0]), &guided).unwrap();
        assert_eq!(mixed.data(), &[0.5, -4.0, 0.0, 0.25, 0.0, 0.0]);

        let bad = CamResult {
            heatmap: Tensor::zeros(&[2, 2]),
            ..mk(vec![0.0; 3])
        };
        assert!(guided_fuse(&bad, &guided).is_err());
    }

    #[test]
    fn method_names_round_trip() {
        for m in CamMethod::ALL {
            assert_eq!(m.short_name().parse::<CamMethod>().unwrap(), m);
            assert_eq!(m.to_string().parse::<CamMethod>().unwrap(), m);
        }
        assert!("nope".parse::<CamMethod>().is_err());
    }
}
