//! ReLU-CNN definition and the recording forward pass.
//!
//! A [`Network`] is an immutable, validated chain of [`Layer`]s. Every forward
//! pass records each layer's output in an [`ActivationTrace`] so the CAM and
//! axiom code can address any intermediate feature map `F^l` and re-run the
//! tail of the network from a modified activation.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Conv2d,
    Relu,
    Maxpool,
    AvgpoolGlobal,
    Flatten,
    Dense,
}

impl LayerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LayerKind::Conv2d => "conv2d",
            LayerKind::Relu => "relu",
            LayerKind::Maxpool => "maxpool",
            LayerKind::AvgpoolGlobal => "avgpool_global",
            LayerKind::Flatten => "flatten",
            LayerKind::Dense => "dense",
        }
    }
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// 2-D convolution with zero padding. Weights are `[C_out, C_in, kH, kW]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d {
    weight: Tensor,
    bias: Tensor,
    stride: usize,
    padding: usize,
}

impl Conv2d {
    pub fn new(weight: Tensor, bias: Tensor, stride: usize, padding: usize) -> Result<Self> {
        let [c_out, _, kh, kw] = match *weight.shape() {
            [a, b, c, d] => [a, b, c, d],
            _ => {
                return Err(Error::InvalidShape {
                    shape: weight.shape().to_vec(),
                    reason: "conv2d weight must be [C_out, C_in, kH, kW]".into(),
                })
            }
        };
        if bias.shape() != [c_out] {
            return Err(Error::shape(bias.shape(), &[c_out]));
        }
        if stride == 0 {
            return Err(Error::InvalidArgument("conv2d stride must be positive".into()));
        }
        debug_assert!(kh > 0 && kw > 0);
        Ok(Conv2d {
            weight,
            bias,
            stride,
            padding,
        })
    }

    pub fn weight(&self) -> &Tensor {
        &self.weight
    }

    pub fn bias(&self) -> &Tensor {
        &self.bias
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn padding(&self) -> usize {
        self.padding
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn kernel(&self) -> (usize, usize) {
        (self.weight.shape()[2], self.weight.shape()[3])
    }

    pub(crate) fn output_hw(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let (kh, kw) = self.kernel();
        let (ph, pw) = (h + 2 * self.padding, w + 2 * self.padding);
        if ph < kh || pw < kw {
            return None;
        }
        Some(((ph - kh) / self.stride + 1, (pw - kw) / self.stride + 1))
    }

    fn forward(&self, x: &Tensor) -> Tensor {
        let (ci, h, w) = x.chw().expect("validated");
        let (kh, kw) = self.kernel();
        let (oh, ow) = self.output_hw(h, w).expect("validated");
        let co = self.out_channels();
        let (s, p) = (self.stride, self.padding as isize);
        let wt = self.weight.data();
        let xd = x.data();
        let mut out = vec![0.0; co * oh * ow];
        for o in 0..co {
            let plane = &mut out[o * oh * ow..(o + 1) * oh * ow];
            plane.fill(self.bias.data()[o]);
            for i in 0..ci {
                let xin = &xd[i * h * w..(i + 1) * h * w];
                for ky in 0..kh {
                    for kx in 0..kw {
                        let wv = wt[((o * ci + i) * kh + ky) * kw + kx];
                        for oy in 0..oh {
                            let iy = (oy * s + ky) as isize - p;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let row = &xin[iy as usize * w..(iy as usize + 1) * w];
                            let orow = &mut plane[oy * ow..(oy + 1) * ow];
                            for (ox, acc) in orow.iter_mut().enumerate() {
                                let ix = (ox * s + kx) as isize - p;
                                if ix >= 0 && ix < w as isize {
                                    *acc += wv * row[ix as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
        Tensor::new(vec![co, oh, ow], out).expect("shape computed")
    }
}

/// Fully connected layer, weights `[units_out, units_in]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    weight: Tensor,
    bias: Tensor,
}

impl Dense {
    pub fn new(weight: Tensor, bias: Tensor) -> Result<Self> {
        let units_out = match *weight.shape() {
            [o, _] => o,
            _ => {
                return Err(Error::InvalidShape {
                    shape: weight.shape().to_vec(),
                    reason: "dense weight must be [units_out, units_in]".into(),
                })
            }
        };
        if bias.shape() != [units_out] {
            return Err(Error::shape(bias.shape(), &[units_out]));
        }
        Ok(Dense { weight, bias })
    }

    pub fn weight(&self) -> &Tensor {
        &self.weight
    }

    pub fn bias(&self) -> &Tensor {
        &self.bias
    }

    pub fn units_out(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn units_in(&self) -> usize {
        self.weight.shape()[1]
    }

    /// Weight row feeding output unit `j`.
    pub fn row(&self, j: usize) -> &[f64] {
        let n = self.units_in();
        &self.weight.data()[j * n..(j + 1) * n]
    }

    fn forward(&self, x: &Tensor) -> Tensor {
        let data = (0..self.units_out())
            .map(|j| {
                self.row(j)
                    .iter()
                    .zip(x.data())
                    .fold(self.bias.data()[j], |acc, (w, v)| acc + w * v)
            })
            .collect();
        Tensor::new(vec![self.units_out()], data).expect("shape computed")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    Conv2d(Conv2d),
    Relu,
    /// Max pooling without padding; ties go to the first element in row-major order.
    MaxPool {
        kernel: usize,
        stride: usize,
    },
    /// Collapses each channel to its spatial mean.
    GlobalAvgPool,
    Flatten,
    Dense(Dense),
}

impl Layer {
    pub fn kind(&self) -> LayerKind {
        match self {
            Layer::Conv2d(_) => LayerKind::Conv2d,
            Layer::Relu => LayerKind::Relu,
            Layer::MaxPool { .. } => LayerKind::Maxpool,
            Layer::GlobalAvgPool => LayerKind::AvgpoolGlobal,
            Layer::Flatten => LayerKind::Flatten,
            Layer::Dense(_) => LayerKind::Dense,
        }
    }

    /// Per-output-unit bias, broadcast over space for conv layers.
    pub fn bias(&self) -> Option<&Tensor> {
        match self {
            Layer::Conv2d(c) => Some(c.bias()),
            Layer::Dense(d) => Some(d.bias()),
            _ => None,
        }
    }

    pub fn output_shape(&self, input: &[usize]) -> std::result::Result<Vec<usize>, String> {
        match (self, input) {
            (Layer::Conv2d(conv), &[c, h, w]) => {
                if c != conv.in_channels() {
                    return Err(format!("expects {} input channels, got {c}", conv.in_channels()));
                }
                let (oh, ow) = conv
                    .output_hw(h, w)
                    .ok_or_else(|| format!("kernel {:?} larger than padded {h}x{w} input", conv.kernel()))?;
                Ok(vec![conv.out_channels(), oh, ow])
            }
            (Layer::Conv2d(_), _) => Err(format!("conv2d needs a C x H x W input, got {input:?}")),
            (Layer::Relu, _) => Ok(input.to_vec()),
            (&Layer::MaxPool { kernel, stride }, &[c, h, w]) => {
                if kernel == 0 || stride == 0 {
                    return Err("maxpool kernel and stride must be positive".into());
                }
                if h < kernel || w < kernel {
                    return Err(format!("pool kernel {kernel} larger than {h}x{w} input"));
                }
                Ok(vec![c, (h - kernel) / stride + 1, (w - kernel) / stride + 1])
            }
            (Layer::MaxPool { .. }, _) => Err(format!("maxpool needs a C x H x W input, got {input:?}")),
            (Layer::GlobalAvgPool, &[c, _, _]) => Ok(vec![c]),
            (Layer::GlobalAvgPool, _) => Err(format!("avgpool_global needs a C x H x W input, got {input:?}")),
            (Layer::Flatten, _) => Ok(vec![input.iter().product()]),
            (Layer::Dense(d), &[n]) if n == d.units_in() => Ok(vec![d.units_out()]),
            (Layer::Dense(d), _) => Err(format!(
                "dense expects a vector of {} units, got {input:?}",
                d.units_in()
            )),
        }
    }

    /// Applies the layer. The input shape must already have been validated.
    pub fn forward(&self, x: &Tensor) -> Tensor {
        match self {
            Layer::Conv2d(conv) => conv.forward(x),
            Layer::Relu => x.relu(),
            &Layer::MaxPool { kernel, stride } => maxpool_forward(x, kernel, stride),
            Layer::GlobalAvgPool => {
                let (c, h, w) = x.chw().expect("validated");
                let z = (h * w) as f64;
                let data = (0..c).map(|k| x.channel(k).iter().sum::<f64>() / z).collect();
                Tensor::new(vec![c], data).expect("shape computed")
            }
            Layer::Flatten => x.clone().reshape(vec![x.len()]).expect("same length"),
            Layer::Dense(d) => d.forward(x),
        }
    }
}

/// Row-major index (within the `h x w` plane) of the first maximal element of
/// each pooling window, for output position `(oy, ox)`.
pub(crate) fn pool_argmax(plane: &[f64], w: usize, kernel: usize, stride: usize, oy: usize, ox: usize) -> usize {
    let mut best = oy * stride * w + ox * stride;
    for ky in 0..kernel {
        for kx in 0..kernel {
            let idx = (oy * stride + ky) * w + ox * stride + kx;
            if plane[idx] > plane[best] {
                best = idx;
            }
        }
    }
    best
}

fn maxpool_forward(x: &Tensor, kernel: usize, stride: usize) -> Tensor {
    let (c, h, w) = x.chw().expect("validated");
    let (oh, ow) = ((h - kernel) / stride + 1, (w - kernel) / stride + 1);
    let mut out = Vec::with_capacity(c * oh * ow);
    for k in 0..c {
        let plane = x.channel(k);
        for oy in 0..oh {
            for ox in 0..ow {
                out.push(plane[pool_argmax(plane, w, kernel, stride, oy, ox)]);
            }
        }
    }
    Tensor::new(vec![c, oh, ow], out).expect("shape computed")
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerSpec {
    pub name: String,
    pub layer: Layer,
}

impl LayerSpec {
    pub fn new(name: impl Into<String>, layer: Layer) -> Self {
        LayerSpec {
            name: name.into(),
            layer,
        }
    }
}

/// Per-channel input normalization: `(pixel - mean) / std`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalization {
    pub fn identity(channels: usize) -> Self {
        Normalization {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    layers: Vec<LayerSpec>,
    input_shape: [usize; 3],
    normalization: Normalization,
    labels: Option<Vec<String>>,
    shapes: Vec<Vec<usize>>,
}

impl Network {
    /// Validates the layer chain. The last layer must be dense: its output is
    /// the pre-softmax score vector.
    pub fn new(
        input_shape: [usize; 3],
        layers: Vec<LayerSpec>,
        normalization: Normalization,
        labels: Option<Vec<String>>,
    ) -> Result<Self> {
        if input_shape.contains(&0) {
            return Err(Error::InvalidShape {
                shape: input_shape.to_vec(),
                reason: "input extents must be positive".into(),
            });
        }
        let channels = input_shape[0];
        if normalization.mean.len() != channels || normalization.std.len() != channels {
            return Err(Error::InvalidArgument(format!(
                "normalization needs {channels} mean/std entries, got {}/{}",
                normalization.mean.len(),
                normalization.std.len()
            )));
        }
        if normalization.std.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidArgument(
                "normalization std must be positive and finite".into(),
            ));
        }
        if layers.is_empty() {
            return Err(Error::InvalidArgument("network has no layers".into()));
        }

        let mut shapes = Vec::with_capacity(layers.len());
        let mut current = input_shape.to_vec();
        for (index, spec) in layers.iter().enumerate() {
            if spec.name.is_empty() {
                return Err(invalid_layer(index, spec, "empty layer name".into()));
            }
            if layers[..index].iter().any(|l| l.name == spec.name) {
                return Err(invalid_layer(index, spec, "duplicate layer name".into()));
            }
            current = spec
                .layer
                .output_shape(&current)
                .map_err(|reason| invalid_layer(index, spec, reason))?;
            shapes.push(current.clone());
        }

        let last = layers.len() - 1;
        if !matches!(layers[last].layer, Layer::Dense(_)) {
            return Err(invalid_layer(
                last,
                &layers[last],
                "final layer must be dense (it produces the class scores)".into(),
            ));
        }
        let classes = shapes[last][0];
        if let Some(labels) = &labels {
            if labels.len() != classes {
                return Err(Error::InvalidArgument(format!(
                    "{} labels for {classes} classes",
                    labels.len()
                )));
            }
        }

        Ok(Network {
            layers,
            input_shape,
            normalization,
            labels,
            shapes,
        })
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn layer(&self, l: usize) -> &Layer {
        &self.layers[l].layer
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.input_shape
    }

    pub fn normalization(&self) -> &Normalization {
        &self.normalization
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }

    pub fn output_shape(&self, l: usize) -> &[usize] {
        &self.shapes[l]
    }

    pub fn num_classes(&self) -> usize {
        self.shapes[self.layers.len() - 1][0]
    }

    pub fn check_layer(&self, l: usize) -> Result<()> {
        if l >= self.layers.len() {
            return Err(Error::LayerOutOfRange {
                layer: l,
                count: self.layers.len(),
            });
        }
        Ok(())
    }

    pub fn check_class(&self, c: usize) -> Result<()> {
        if c >= self.num_classes() {
            return Err(Error::ClassOutOfRange {
                class: c,
                count: self.num_classes(),
            });
        }
        Ok(())
    }

    /// Whether layer `l` outputs a `C x H x W` feature map.
    pub fn is_spatial(&self, l: usize) -> bool {
        self.shapes.get(l).is_some_and(|s| s.len() == 3)
    }

    pub fn check_spatial(&self, l: usize) -> Result<()> {
        self.check_layer(l)?;
        if !self.is_spatial(l) {
            return Err(Error::NotSpatial { layer: l });
        }
        Ok(())
    }

    /// Whether layer `l`'s output is guaranteed non-negative: a ReLU, or a
    /// max pool whose own input is rectified.
    pub fn is_rectified(&self, l: usize) -> bool {
        match self.layer(l) {
            Layer::Relu => true,
            Layer::MaxPool { .. } => l > 0 && self.is_rectified(l - 1),
            _ => false,
        }
    }

    /// Rectified spatial layers in order; the candidate CAM target layers.
    pub fn rectified_spatial_layers(&self) -> Vec<usize> {
        (0..self.layers.len())
            .filter(|&l| self.is_spatial(l) && self.is_rectified(l))
            .collect()
    }

    /// Final rectified layer with spatial extent larger than 1x1.
    pub fn last_spatial_layer(&self) -> Option<usize> {
        (0..self.layers.len())
            .rev()
            .find(|&l| self.is_rectified(l) && matches!(*self.shapes[l].as_slice(), [_, h, w] if h * w > 1))
    }

    /// Resolves a layer by manifest name, falling back to a numeric index.
    pub fn resolve_layer(&self, key: &str) -> Result<usize> {
        if let Some(i) = self.layers.iter().position(|l| l.name == key) {
            return Ok(i);
        }
        match key.parse::<usize>() {
            Ok(i) => {
                self.check_layer(i)?;
                Ok(i)
            }
            Err(_) => Err(Error::UnknownLayerName(key.to_string())),
        }
    }

    /// Applies the per-channel normalization to a raw `C x H x W` image.
    pub fn normalize(&self, raw: &Tensor) -> Result<Tensor> {
        if raw.shape() != self.input_shape {
            return Err(Error::shape(raw.shape(), &self.input_shape));
        }
        let mut out = raw.clone();
        for ch in 0..self.input_shape[0] {
            let (m, s) = (self.normalization.mean[ch], self.normalization.std[ch]);
            for v in out.channel_mut(ch) {
                *v = (*v - m) / s;
            }
        }
        Ok(out)
    }

    /// Runs the network on a normalized image, recording every layer output.
    pub fn forward(&self, image: &Tensor) -> Result<ActivationTrace> {
        if image.shape() != self.input_shape {
            return Err(Error::shape(image.shape(), &self.input_shape));
        }
        let mut outputs: Vec<Tensor> = Vec::with_capacity(self.layers.len());
        for spec in &self.layers {
            let next = spec.layer.forward(outputs.last().unwrap_or(image));
            outputs.push(next);
        }
        Ok(ActivationTrace {
            input: image.clone(),
            outputs,
        })
    }

    /// Runs layers `l+1..L` on `activation` in place of layer `l`'s output and
    /// returns their outputs (empty when `l` is the last layer).
    pub fn forward_tail(&self, l: usize, activation: &Tensor) -> Result<Vec<Tensor>> {
        self.check_layer(l)?;
        if activation.shape() != self.shapes[l].as_slice() {
            return Err(Error::shape(activation.shape(), &self.shapes[l]));
        }
        let mut outputs: Vec<Tensor> = Vec::with_capacity(self.layers.len() - l - 1);
        for spec in &self.layers[l + 1..] {
            let next = spec.layer.forward(outputs.last().unwrap_or(activation));
            outputs.push(next);
        }
        Ok(outputs)
    }

    /// Trace with channel `k` of layer `l` zeroed and layers after `l`
    /// recomputed; layers up to `l` are copied, not recomputed.
    pub fn ablated_trace(&self, trace: &ActivationTrace, l: usize, k: usize) -> Result<ActivationTrace> {
        let masked = self.zero_channel(trace, l, k)?;
        let tail = self.forward_tail(l, &masked)?;
        let mut outputs: Vec<Tensor> = trace.outputs[..l].to_vec();
        outputs.push(masked);
        outputs.extend(tail);
        Ok(ActivationTrace {
            input: trace.input.clone(),
            outputs,
        })
    }

    /// Score vector `S(F^l \ F^lk)`.
    pub fn forward_ablated(&self, trace: &ActivationTrace, l: usize, k: usize) -> Result<Tensor> {
        let masked = self.zero_channel(trace, l, k)?;
        let mut tail = self.forward_tail(l, &masked)?;
        Ok(tail.pop().unwrap_or(masked))
    }

    fn zero_channel(&self, trace: &ActivationTrace, l: usize, k: usize) -> Result<Tensor> {
        self.check_spatial(l)?;
        self.check_trace(trace)?;
        let channels = self.shapes[l][0];
        if k >= channels {
            return Err(Error::ChannelOutOfRange {
                layer: l,
                channel: k,
                count: channels,
            });
        }
        let mut masked = trace.outputs[l].clone();
        masked.channel_mut(k).fill(0.0);
        Ok(masked)
    }

    pub(crate) fn check_trace(&self, trace: &ActivationTrace) -> Result<()> {
        if trace.outputs.len() != self.layers.len() {
            return Err(Error::InvalidArgument(format!(
                "trace has {} layer outputs, network has {} layers",
                trace.outputs.len(),
                self.layers.len()
            )));
        }
        Ok(())
    }
}

fn invalid_layer(index: usize, spec: &LayerSpec, reason: String) -> Error {
    Error::InvalidLayer {
        index,
        name: spec.name.clone(),
        reason,
    }
}

/// Every layer output of one forward pass, plus its input.
#[derive(Clone, Debug, PartialEq)]
pub struct ActivationTrace {
    input: Tensor,
    outputs: Vec<Tensor>,
}

impl ActivationTrace {
    pub fn input(&self) -> &Tensor {
        &self.input
    }

    pub fn outputs(&self) -> &[Tensor] {
        &self.outputs
    }

    pub fn output(&self, l: usize) -> &Tensor {
        &self.outputs[l]
    }

    /// Input to layer `l`: the previous layer's output, or the image.
    pub fn layer_input(&self, l: usize) -> &Tensor {
        if l == 0 {
            &self.input
        } else {
            &self.outputs[l - 1]
        }
    }

    pub fn len(&self) -> usize {
        self.outputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outputs.is_empty()
    }

    /// Pre-softmax class scores.
    pub fn scores(&self) -> &Tensor {
        self.outputs.last().expect("trace of a non-empty network")
    }

    pub fn top_class(&self) -> usize {
        self.scores().argmax()
    }
}

pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|&s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Softmax probability of class `c`, max-shifted so large scores cannot overflow.
pub fn softmax_confidence(scores: &[f64], c: usize) -> f64 {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = scores.iter().map(|&s| (s - max).exp()).sum();
    (scores[c] - max).exp() / total
}
