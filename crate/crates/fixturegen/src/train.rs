//! Minibatch SGD with momentum on top of the engine's forward and reverse
//! passes.

use camx::autodiff::backward_from;
use camx::network::{softmax, Conv2d, Dense, Layer, LayerSpec, Network};
use camx::{Result, Tensor};
use rayon::prelude::*;

/// Parameter gradients for one layer (empty for parameter-free layers).
#[derive(Clone)]
struct Grad {
    weight: Vec<f64>,
    bias: Vec<f64>,
}

fn conv_weight_grad(conv: &Conv2d, input: &Tensor, gout: &Tensor) -> Grad {
    let (c_in, h, w) = input.chw().expect("spatial input");
    let (c_out, oh, ow) = gout.chw().expect("spatial output");
    let (kh, kw) = conv.kernel();
    let (s, p) = (conv.stride() as isize, conv.padding() as isize);
    let mut weight = vec![0.0; c_out * c_in * kh * kw];
    let mut bias = vec![0.0; c_out];
    for o in 0..c_out {
        let go = gout.channel(o);
        bias[o] = go.iter().sum();
        for i in 0..c_in {
            let plane = input.channel(i);
            for ky in 0..kh {
                for kx in 0..kw {
                    let mut acc = 0.0;
                    for oy in 0..oh {
                        let y = oy as isize * s + ky as isize - p;
                        if y < 0 || y >= h as isize {
                            continue;
                        }
                        for ox in 0..ow {
                            let x = ox as isize * s + kx as isize - p;
                            if x < 0 || x >= w as isize {
                                continue;
                            }
                            acc += go[oy * ow + ox] * plane[y as usize * w + x as usize];
                        }
                    }
                    weight[((o * c_in + i) * kh + ky) * kw + kx] = acc;
                }
            }
        }
    }
    Grad { weight, bias }
}

fn dense_weight_grad(input: &Tensor, gout: &Tensor) -> Grad {
    let x = input.data();
    let weight = gout
        .data()
        .iter()
        .flat_map(|&g| x.iter().map(move |&v| g * v))
        .collect();
    Grad {
        weight,
        bias: gout.data().to_vec(),
    }
}

/// Cross-entropy loss and parameter gradients for one sample.
fn sample_grads(net: &Network, x: &Tensor, class: usize) -> Result<(f64, bool, Vec<Grad>)> {
    let trace = net.forward(x)?;
    let mut probs = softmax(trace.scores().data());
    let loss = -probs[class].max(1e-300).ln();
    let correct = trace.top_class() == class;
    probs[class] -= 1.0;
    let seed = Tensor::from_vec(probs)?;
    let grads = backward_from(net, &trace, &seed)?;
    let per_layer = net
        .layers()
        .iter()
        .enumerate()
        .map(|(l, spec)| match &spec.layer {
            Layer::Conv2d(c) => conv_weight_grad(c, trace.layer_input(l), grads.layer(l)),
            Layer::Dense(_) => dense_weight_grad(trace.layer_input(l), grads.layer(l)),
            _ => Grad {
                weight: vec![],
                bias: vec![],
            },
        })
        .collect();
    Ok((loss, correct, per_layer))
}

pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Grad>,
}

impl Sgd {
    pub fn new(net: &Network, lr: f64, momentum: f64, weight_decay: f64) -> Self {
        let velocity = net
            .layers()
            .iter()
            .map(|spec| match &spec.layer {
                Layer::Conv2d(c) => Grad {
                    weight: vec![0.0; c.weight().len()],
                    bias: vec![0.0; c.bias().len()],
                },
                Layer::Dense(d) => Grad {
                    weight: vec![0.0; d.weight().len()],
                    bias: vec![0.0; d.bias().len()],
                },
                _ => Grad {
                    weight: vec![],
                    bias: vec![],
                },
            })
            .collect();
        Sgd {
            lr,
            momentum,
            weight_decay,
            velocity,
        }
    }

    /// One step on a minibatch; returns (mean loss, correct count).
    pub fn step(&mut self, net: &Network, batch: &[(Tensor, usize)]) -> Result<(Network, f64, usize)> {
        let results: Vec<(f64, bool, Vec<Grad>)> = batch
            .par_iter()
            .map(|(x, c)| sample_grads(net, x, *c))
            .collect::<Result<_>>()?;
        let n = batch.len() as f64;
        let mut total = results[0].2.clone();
        for (_, _, g) in &results[1..] {
            for (acc, g) in total.iter_mut().zip(g) {
                acc.weight.iter_mut().zip(&g.weight).for_each(|(a, b)| *a += b);
                acc.bias.iter_mut().zip(&g.bias).for_each(|(a, b)| *a += b);
            }
        }
        let loss = results.iter().map(|r| r.0).sum::<f64>() / n;
        let correct = results.iter().filter(|r| r.1).count();

        let mut layers = Vec::with_capacity(net.len());
        for ((spec, g), v) in net.layers().iter().zip(&total).zip(&mut self.velocity) {
            let update = |param: &Tensor, grad: &[f64], vel: &mut [f64], decay: f64| -> Result<Tensor> {
                let data = param
                    .data()
                    .iter()
                    .zip(grad)
                    .zip(vel.iter_mut())
                    .map(|((&p, &g), v)| {
                        *v = self.momentum * *v + g / n + decay * p;
                        p - self.lr * *v
                    })
                    .collect();
                Tensor::new(param.shape().to_vec(), data)
            };
            let layer = match &spec.layer {
                Layer::Conv2d(c) => {
                    let weight = update(c.weight(), &g.weight, &mut v.weight, self.weight_decay)?;
                    let bias = update(c.bias(), &g.bias, &mut v.bias, 0.0)?;
                    Layer::Conv2d(Conv2d::new(weight, bias, c.stride(), c.padding())?)
                }
                Layer::Dense(d) => {
                    let weight = update(d.weight(), &g.weight, &mut v.weight, self.weight_decay)?;
                    let bias = update(d.bias(), &g.bias, &mut v.bias, 0.0)?;
                    Layer::Dense(Dense::new(weight, bias)?)
                }
                other => other.clone(),
            };
            layers.push(LayerSpec::new(spec.name.clone(), layer));
        }
        let next = Network::new(
            net.input_shape(),
            layers,
            net.normalization().clone(),
            net.labels().map(<[String]>::to_vec),
        )?;
        Ok((next, loss, correct))
    }
}
