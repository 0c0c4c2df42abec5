//! Random ReLU-CNN generators for tests, benchmarks and synthetic model files.

use rand::Rng;

use crate::network::{ActivationTrace, Conv2d, Dense, Layer, LayerSpec, Network, Normalization};
use crate::tensor::Tensor;

pub fn random_tensor<R: Rng + ?Sized>(rng: &mut R, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect()).expect("positive extents")
}

pub fn random_conv<R: Rng + ?Sized>(
    rng: &mut R,
    c_in: usize,
    c_out: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    with_bias: bool,
) -> Conv2d {
    let scale = (2.0 / (c_in * kernel * kernel) as f64).sqrt() * 1.7;
    let weight = random_tensor(rng, &[c_out, c_in, kernel, kernel], -scale, scale);
    let bias = if with_bias {
        random_tensor(rng, &[c_out], -0.5, 0.5)
    } else {
        Tensor::zeros(&[c_out])
    };
    Conv2d::new(weight, bias, stride, padding).expect("consistent shapes")
}

pub fn random_dense<R: Rng + ?Sized>(rng: &mut R, units_in: usize, units_out: usize, with_bias: bool) -> Dense {
    let scale = (2.0 / units_in as f64).sqrt() * 1.7;
    let weight = random_tensor(rng, &[units_out, units_in], -scale, scale);
    let bias = if with_bias {
        random_tensor(rng, &[units_out], -0.5, 0.5)
    } else {
        Tensor::zeros(&[units_out])
    };
    Dense::new(weight, bias).expect("consistent shapes")
}

/// Options for [`random_relu_cnn`].
#[derive(Clone, Copy, Debug)]
pub struct RandomNetOptions {
    pub min_layers: usize,
    pub max_layers: usize,
    pub with_bias: bool,
    pub classes: usize,
}

impl Default for RandomNetOptions {
    fn default() -> Self {
        RandomNetOptions {
            min_layers: 2,
            max_layers: 6,
            with_bias: true,
            classes: 3,
        }
    }
}

/// A random chain of conv / relu / maxpool layers ending in either
/// `avgpool_global -> dense` or `flatten -> dense [-> relu -> dense]`.
pub fn random_relu_cnn<R: Rng + ?Sized>(rng: &mut R, opts: RandomNetOptions) -> Network {
    assert!(opts.min_layers >= 2 && opts.max_layers >= opts.min_layers);
    let total = rng.gen_range(opts.min_layers..=opts.max_layers);
    let deep_head = total >= 4 && rng.gen_bool(0.3);
    let head_len = if deep_head { 4 } else { 2 };
    let body_len = total - head_len;

    let c0 = rng.gen_range(1..=3);
    let (h0, w0) = (rng.gen_range(4..=8), rng.gen_range(4..=8));
    let mut shape = (c0, h0, w0);
    let mut layers = Vec::with_capacity(total);
    let name = |kind: &str, layers: &Vec<LayerSpec>| format!("{kind}{}", layers.len());

    for i in 0..body_len {
        let (c, h, w) = shape;
        let choice = if i == 0 { 0 } else { rng.gen_range(0..3) };
        let layer = match choice {
            1 => Layer::Relu,
            2 if h >= 2 && w >= 2 => Layer::MaxPool { kernel: 2, stride: 2 },
            _ => {
                let kernel = rng.gen_range(1..=3usize).min(h.min(w));
                let padding = if kernel > 1 { rng.gen_range(0..=1) } else { 0 };
                let c_out = rng.gen_range(1..=4);
                Layer::Conv2d(random_conv(rng, c, c_out, kernel, 1, padding, opts.with_bias))
            }
        };
        let out = layer.output_shape(&[c, h, w]).expect("constructed to fit");
        shape = (out[0], out[1], out[2]);
        layers.push(LayerSpec::new(name(layer.kind().as_str(), &layers), layer));
    }

    let (c, h, w) = shape;
    let gap = !deep_head && rng.gen_bool(0.4);
    let features = if gap {
        layers.push(LayerSpec::new(name("gap", &layers), Layer::GlobalAvgPool));
        c
    } else {
        layers.push(LayerSpec::new(name("flatten", &layers), Layer::Flatten));
        c * h * w
    };
    if deep_head {
        let hidden = rng.gen_range(2..=6);
        let fc = random_dense(rng, features, hidden, opts.with_bias);
        layers.push(LayerSpec::new(name("dense", &layers), Layer::Dense(fc)));
        layers.push(LayerSpec::new(name("relu", &layers), Layer::Relu));
        let fc = random_dense(rng, hidden, opts.classes, opts.with_bias);
        layers.push(LayerSpec::new(name("dense", &layers), Layer::Dense(fc)));
    } else {
        let fc = random_dense(rng, features, opts.classes, opts.with_bias);
        layers.push(LayerSpec::new(name("dense", &layers), Layer::Dense(fc)));
    }

    Network::new([c0, h0, w0], layers, Normalization::identity(c0), None).expect("valid random network")
}

/// `[conv -> relu ->] conv -> relu -> avgpool_global -> dense`, the
/// architecture on which CAM, Grad-CAM, Ablation-CAM and XGrad-CAM coincide.
pub fn random_gap_cnn<R: Rng + ?Sized>(rng: &mut R, with_bias: bool) -> Network {
    let c0 = rng.gen_range(1..=3);
    let (h, w) = (rng.gen_range(3..=7), rng.gen_range(3..=7));
    let mut layers = Vec::new();
    let mut c = c0;
    if rng.gen_bool(0.5) {
        let c1 = rng.gen_range(2..=4);
        layers.push(LayerSpec::new(
            "conv0",
            Layer::Conv2d(random_conv(rng, c, c1, 3, 1, 1, with_bias)),
        ));
        layers.push(LayerSpec::new("relu0", Layer::Relu));
        c = c1;
    }
    let k = rng.gen_range(2..=6);
    layers.push(LayerSpec::new(
        "conv",
        Layer::Conv2d(random_conv(rng, c, k, 3, 1, 1, with_bias)),
    ));
    layers.push(LayerSpec::new("relu", Layer::Relu));
    layers.push(LayerSpec::new("gap", Layer::GlobalAvgPool));
    let classes = rng.gen_range(2..=4);
    layers.push(LayerSpec::new(
        "fc",
        Layer::Dense(random_dense(rng, k, classes, with_bias)),
    ));
    Network::new([c0, h, w], layers, Normalization::identity(c0), None).expect("valid GAP network")
}

/// A random normalized input for `net`.
pub fn random_input<R: Rng + ?Sized>(rng: &mut R, net: &Network) -> Tensor {
    random_tensor(rng, &net.input_shape(), -1.0, 1.0)
}

/// Distance from the nearest nondifferentiable point along `trace`: the
/// smallest `|x|` entering a relu and the smallest gap between the two largest
/// values of any maxpool window. Exact zeros come from an earlier relu and
/// stay put under small input perturbations, so they are skipped.
pub fn kink_margin(net: &Network, trace: &ActivationTrace) -> f64 {
    let mut margin = f64::INFINITY;
    for (l, spec) in net.layers().iter().enumerate() {
        let x = trace.layer_input(l);
        match spec.layer {
            Layer::Relu => {
                margin = x
                    .data()
                    .iter()
                    .filter(|&&v| v != 0.0)
                    .fold(margin, |m, v| m.min(v.abs()));
            }
            Layer::MaxPool { kernel, stride } => {
                let (c, h, w) = x.chw().expect("spatial input");
                let (oh, ow) = ((h - kernel) / stride + 1, (w - kernel) / stride + 1);
                for ch in 0..c {
                    let plane = x.channel(ch);
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let (mut a, mut b) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
                            for ky in 0..kernel {
                                for kx in 0..kernel {
                                    let v = plane[(oy * stride + ky) * w + ox * stride + kx];
                                    if v > a {
                                        b = a;
                                        a = v;
                                    } else if v > b {
                                        b = v;
                                    }
                                }
                            }
                            if b.is_finite() && a != 0.0 {
                                margin = margin.min(a - b);
                            }
                        }
                    }
                }
            }
            _ => {}
        }
    }
    margin
}
