//! Reverse-mode gradients of a class score through a recorded forward pass.
//!
//! Gradients are taken of the pre-softmax score. The ReLU subgradient at 0 is
//! 0, and max pooling routes each output gradient to the first maximal element
//! of its window, the same element the forward pass selected.

use crate::error::{Error, Result};
use crate::network::{pool_argmax, ActivationTrace, Layer, Network};
use crate::tensor::Tensor;

/// `dS/dF^l` for every layer output, aligned with an [`ActivationTrace`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradientTrace {
    class: Option<usize>,
    layers: Vec<Tensor>,
    input: Tensor,
}

impl GradientTrace {
    /// Class whose score was differentiated; `None` for an arbitrary seed.
    pub fn class(&self) -> Option<usize> {
        self.class
    }

    /// Gradient with respect to layer `l`'s output.
    pub fn layer(&self, l: usize) -> &Tensor {
        &self.layers[l]
    }

    pub fn layers(&self) -> &[Tensor] {
        &self.layers
    }

    /// Gradient with respect to the (normalized) network input.
    pub fn input(&self) -> &Tensor {
        &self.input
    }

    /// Test hook: overwrite the gradient of one layer.
    #[doc(hidden)]
    pub fn layer_mut(&mut self, l: usize) -> &mut Tensor {
        &mut self.layers[l]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum ReluRule {
    Standard,
    Guided,
}

/// Gradients of `S_c` at every layer and at the input.
pub fn backward(net: &Network, trace: &ActivationTrace, class: usize) -> Result<GradientTrace> {
    net.check_class(class)?;
    let mut g = backward_from(net, trace, &one_hot(net.num_classes(), class))?;
    g.class = Some(class);
    Ok(g)
}

/// Gradients of `seed . S` for an arbitrary score-space seed vector.
pub fn backward_from(net: &Network, trace: &ActivationTrace, seed: &Tensor) -> Result<GradientTrace> {
    run(net, trace, seed, ReluRule::Standard)
}

/// Guided Backprop input gradient: at every ReLU the gradient passes only
/// where the forward input and the incoming gradient are both positive.
pub fn guided_backward(net: &Network, trace: &ActivationTrace, class: usize) -> Result<Tensor> {
    net.check_class(class)?;
    let g = run(net, trace, &one_hot(net.num_classes(), class), ReluRule::Guided)?;
    Ok(g.input)
}

fn one_hot(n: usize, c: usize) -> Tensor {
    let mut t = Tensor::zeros(&[n]);
    t.data_mut()[c] = 1.0;
    t
}

fn run(net: &Network, trace: &ActivationTrace, seed: &Tensor, rule: ReluRule) -> Result<GradientTrace> {
    net.check_trace(trace)?;
    if seed.shape() != trace.scores().shape() {
        return Err(Error::shape(seed.shape(), trace.scores().shape()));
    }
    let n = net.len();
    let mut layers: Vec<Tensor> = Vec::with_capacity(n);
    let mut grad = seed.clone();
    for l in (0..n).rev() {
        let upstream = layer_backward(net.layer(l), trace.layer_input(l), &grad, rule);
        layers.push(grad);
        grad = upstream;
    }
    layers.reverse();
    Ok(GradientTrace {
        class: None,
        layers,
        input: grad,
    })
}

/// Gradient with respect to a layer's input given the gradient at its output.
fn layer_backward(layer: &Layer, input: &Tensor, grad_out: &Tensor, rule: ReluRule) -> Tensor {
    match layer {
        Layer::Relu => input
            .zip_with(grad_out, |x, g| match rule {
                ReluRule::Standard if x > 0.0 => g,
                ReluRule::Guided if x > 0.0 && g > 0.0 => g,
                _ => 0.0,
            })
            .expect("relu preserves shape"),
        Layer::Dense(d) => {
            let mut out = vec![0.0; d.units_in()];
            for (j, &g) in grad_out.data().iter().enumerate() {
                for (o, &w) in out.iter_mut().zip(d.row(j)) {
                    *o += w * g;
                }
            }
            Tensor::new(input.shape().to_vec(), out).expect("dense input shape")
        }
        Layer::Conv2d(conv) => {
            let (ci, h, w) = input.chw().expect("validated");
            let (co, oh, ow) = grad_out.chw().expect("validated");
            let (kh, kw) = conv.kernel();
            let (s, p) = (conv.stride(), conv.padding() as isize);
            let wt = conv.weight().data();
            let gd = grad_out.data();
            let mut out = vec![0.0; ci * h * w];
            for o in 0..co {
                let gplane = &gd[o * oh * ow..(o + 1) * oh * ow];
                for i in 0..ci {
                    let xin = &mut out[i * h * w..(i + 1) * h * w];
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let wv = wt[((o * ci + i) * kh + ky) * kw + kx];
                            for oy in 0..oh {
                                let iy = (oy * s + ky) as isize - p;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                let base = iy as usize * w;
                                for ox in 0..ow {
                                    let ix = (ox * s + kx) as isize - p;
                                    if ix >= 0 && ix < w as isize {
                                        xin[base + ix as usize] += wv * gplane[oy * ow + ox];
                                    }
                                }
                            }
                        }
                    }
                }
            }
            Tensor::new(vec![ci, h, w], out).expect("shape computed")
        }
        &Layer::MaxPool { kernel, stride } => {
            let (c, h, w) = input.chw().expect("validated");
            let (_, oh, ow) = grad_out.chw().expect("validated");
            let mut out = Tensor::zeros(&[c, h, w]);
            for k in 0..c {
                let plane = input.channel(k);
                let gplane = grad_out.channel(k);
                let dst = out.channel_mut(k);
                for oy in 0..oh {
                    for ox in 0..ow {
                        dst[pool_argmax(plane, w, kernel, stride, oy, ox)] += gplane[oy * ow + ox];
                    }
                }
            }
            out
        }
        Layer::GlobalAvgPool => {
            let (c, h, w) = input.chw().expect("validated");
            let z = (h * w) as f64;
            let mut out = Tensor::zeros(&[c, h, w]);
            for k in 0..c {
                out.channel_mut(k).fill(grad_out.data()[k] / z);
            }
            out
        }
        Layer::Flatten => grad_out
            .clone()
            .reshape(input.shape().to_vec())
            .expect("flatten preserves length"),
    }
}
