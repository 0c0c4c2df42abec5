//! Model files, images, rendering and report output.
//!
//! A model is two files: a JSON manifest and a headerless blob of
//! little-endian `f32`s. Each parameterized layer owns one contiguous span of
//! the blob (weights in row-major order, then biases); spans must tile the
//! blob in layer order with no gaps or trailing bytes.
//!
//! ```json
//! {
//!   "format": "camx-model",
//!   "version": 1,
//!   "input_shape": [3, 32, 32],
//!   "mean": [0.5, 0.5, 0.5],
//!   "std": [0.25, 0.25, 0.25],
//!   "labels": ["square", "disc"],
//!   "blob": "model.bin",
//!   "layers": [
//!     {"name": "conv1", "kind": "conv2d",
//!      "params": {"in_channels": 3, "out_channels": 8, "kernel": [3, 3], "stride": 1, "padding": 1},
//!      "offset": 0, "count": 224},
//!     {"name": "relu1", "kind": "relu", "offset": 896, "count": 0}
//!   ]
//! }
//! ```
//!
//! `offset` is in bytes, `count` in floats. `blob` defaults to the manifest
//! path with a `.bin` extension. An optional `fixtures` list of
//! `{"image": path, "logits": [...]}` entries records reference logits
//! computed by the tool that produced the file.

mod image_io;
mod render;

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{Conv2d, Dense, Layer, LayerKind, LayerSpec, Network, Normalization};
use crate::tensor::Tensor;

pub use image_io::{load_image, load_raw_image, save_image, LoadedImage};
pub use render::{jet, render_heatmap, render_signed, save_png, tile, HeatmapImage};

pub const FORMAT_MAGIC: &str = "camx-model";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub input_shape: [usize; 3],
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blob: Option<String>,
    pub layers: Vec<LayerEntry>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub fixtures: Vec<FixtureEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub kind: String,
    #[serde(default, skip_serializing_if = "is_empty_object")]
    pub params: serde_json::Value,
    #[serde(default)]
    pub offset: usize,
    #[serde(default)]
    pub count: usize,
}

fn is_empty_object(v: &serde_json::Value) -> bool {
    v.is_null() || v.as_object().is_some_and(|m| m.is_empty())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixtureEntry {
    pub image: String,
    pub logits: Vec<f64>,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct ConvParams {
    in_channels: usize,
    out_channels: usize,
    kernel: [usize; 2],
    #[serde(default = "one")]
    stride: usize,
    #[serde(default)]
    padding: usize,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct PoolParams {
    kernel: usize,
    #[serde(default)]
    stride: Option<usize>,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct DenseParams {
    in_features: usize,
    out_features: usize,
}

fn one() -> usize {
    1
}

fn parse_kind(index: usize, kind: &str) -> Result<LayerKind> {
    Ok(match kind {
        "conv2d" => LayerKind::Conv2d,
        "relu" => LayerKind::Relu,
        "maxpool" => LayerKind::Maxpool,
        "avgpool_global" => LayerKind::AvgpoolGlobal,
        "flatten" => LayerKind::Flatten,
        "dense" => LayerKind::Dense,
        other => {
            return Err(Error::UnknownLayerKind {
                index,
                kind: other.to_string(),
            })
        }
    })
}

fn params<T: for<'de> Deserialize<'de>>(index: usize, entry: &LayerEntry) -> Result<T> {
    let value = if entry.params.is_null() {
        serde_json::Value::Object(Default::default())
    } else {
        entry.params.clone()
    };
    serde_json::from_value(value).map_err(|e| Error::Manifest(format!("layer {index} ({}) params: {e}", entry.kind)))
}

fn read_floats(blob: &[u8], start: usize, count: usize) -> Vec<f64> {
    blob[start..start + 4 * count]
        .chunks_exact(4)
        .map(|b| f64::from(f32::from_le_bytes([b[0], b[1], b[2], b[3]])))
        .collect()
}

/// Builds a validated network from a parsed manifest and its blob.
pub fn network_from_parts(manifest: &Manifest, blob: &[u8]) -> Result<Network> {
    if manifest.format != FORMAT_MAGIC {
        return Err(Error::BadMagic(manifest.format.clone()));
    }
    if manifest.version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion {
            found: manifest.version,
            supported: FORMAT_VERSION,
        });
    }

    let mut layers = Vec::with_capacity(manifest.layers.len());
    let mut cursor = 0usize;
    for (index, entry) in manifest.layers.iter().enumerate() {
        let kind = parse_kind(index, &entry.kind)?;
        let name = entry.name.clone().unwrap_or_else(|| format!("{kind}{index}"));
        let (shapes, build): (Vec<Vec<usize>>, Box<dyn Fn(Vec<Tensor>) -> Result<Layer>>) = match kind {
            LayerKind::Conv2d => {
                let p: ConvParams = params(index, entry)?;
                let (stride, padding) = (p.stride, p.padding);
                (
                    vec![
                        vec![p.out_channels, p.in_channels, p.kernel[0], p.kernel[1]],
                        vec![p.out_channels],
                    ],
                    Box::new(move |mut t: Vec<Tensor>| {
                        let bias = t.pop().expect("two tensors");
                        let weight = t.pop().expect("two tensors");
                        Ok(Layer::Conv2d(Conv2d::new(weight, bias, stride, padding)?))
                    }),
                )
            }
            LayerKind::Dense => {
                let p: DenseParams = params(index, entry)?;
                (
                    vec![vec![p.out_features, p.in_features], vec![p.out_features]],
                    Box::new(|mut t: Vec<Tensor>| {
                        let bias = t.pop().expect("two tensors");
                        let weight = t.pop().expect("two tensors");
                        Ok(Layer::Dense(Dense::new(weight, bias)?))
                    }),
                )
            }
            LayerKind::Maxpool => {
                let p: PoolParams = params(index, entry)?;
                let (kernel, stride) = (p.kernel, p.stride.unwrap_or(p.kernel));
                (vec![], Box::new(move |_| Ok(Layer::MaxPool { kernel, stride })))
            }
            LayerKind::Relu | LayerKind::AvgpoolGlobal | LayerKind::Flatten => {
                let _: serde_json::Map<String, serde_json::Value> = params(index, entry)?;
                let layer = match kind {
                    LayerKind::Relu => Layer::Relu,
                    LayerKind::AvgpoolGlobal => Layer::GlobalAvgPool,
                    _ => Layer::Flatten,
                };
                (vec![], Box::new(move |_| Ok(layer.clone())))
            }
        };

        if shapes.iter().flatten().any(|&d| d == 0) {
            return Err(Error::Manifest(format!(
                "layer {index} ({name}) has a zero parameter extent"
            )));
        }
        let expected: usize = shapes.iter().map(|s| s.iter().product::<usize>()).sum();
        if entry.count != expected {
            return Err(Error::Manifest(format!(
                "layer {index} ({name}) declares {} floats but its shapes need {expected}",
                entry.count
            )));
        }
        if expected > 0 && entry.offset != cursor {
            return Err(Error::BlobLayout(format!(
                "layer {index} ({name}) starts at byte {} but the previous span ends at {cursor}",
                entry.offset
            )));
        }
        let end = cursor + 4 * expected;
        if end > blob.len() {
            return Err(Error::TruncatedBlob {
                index,
                name,
                start: cursor,
                end,
                len: blob.len(),
            });
        }
        let mut tensors = Vec::with_capacity(shapes.len());
        let mut at = cursor;
        for shape in shapes {
            let n: usize = shape.iter().product();
            tensors.push(Tensor::new(shape, read_floats(blob, at, n))?);
            at += 4 * n;
        }
        cursor = end;
        layers.push(LayerSpec::new(name, build(tensors)?));
    }
    if cursor != blob.len() {
        return Err(Error::BlobLayout(format!(
            "blob has {} bytes but layers cover only {cursor}",
            blob.len()
        )));
    }

    Network::new(
        manifest.input_shape,
        layers,
        Normalization {
            mean: manifest.mean.clone(),
            std: manifest.std.clone(),
        },
        manifest.labels.clone(),
    )
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))
}

fn blob_path(manifest_path: &Path, manifest: &Manifest) -> PathBuf {
    match &manifest.blob {
        Some(b) => manifest_path.parent().unwrap_or(Path::new(".")).join(b),
        None => manifest_path.with_extension("bin"),
    }
}

/// Loads and validates a model; weights are widened to `f64`.
pub fn load_model(manifest_path: impl AsRef<Path>) -> Result<Network> {
    let path = manifest_path.as_ref();
    let manifest = read_manifest(path)?;
    let blob_path = blob_path(path, &manifest);
    let blob = fs::read(&blob_path).map_err(|e| Error::io(&blob_path, e))?;
    network_from_parts(&manifest, &blob)
}

/// Manifest and blob bytes for `net`; parameters are narrowed to `f32`.
pub fn network_to_parts(net: &Network, blob_name: Option<&str>) -> (Manifest, Vec<u8>) {
    let mut blob = Vec::new();
    let mut layers = Vec::with_capacity(net.len());
    for spec in net.layers() {
        let offset = blob.len();
        let (params, tensors): (serde_json::Value, Vec<&Tensor>) = match &spec.layer {
            Layer::Conv2d(c) => (
                serde_json::to_value(ConvParams {
                    in_channels: c.in_channels(),
                    out_channels: c.out_channels(),
                    kernel: [c.kernel().0, c.kernel().1],
                    stride: c.stride(),
                    padding: c.padding(),
                })
                .expect("plain struct"),
                vec![c.weight(), c.bias()],
            ),
            Layer::Dense(d) => (
                serde_json::to_value(DenseParams {
                    in_features: d.units_in(),
                    out_features: d.units_out(),
                })
                .expect("plain struct"),
                vec![d.weight(), d.bias()],
            ),
            &Layer::MaxPool { kernel, stride } => (
                serde_json::to_value(PoolParams {
                    kernel,
                    stride: Some(stride),
                })
                .expect("plain struct"),
                vec![],
            ),
            _ => (serde_json::Value::Null, vec![]),
        };
        let mut count = 0;
        for t in tensors {
            for &v in t.data() {
                blob.extend_from_slice(&(v as f32).to_le_bytes());
            }
            count += t.len();
        }
        layers.push(LayerEntry {
            name: Some(spec.name.clone()),
            kind: spec.layer.kind().as_str().to_string(),
            params,
            offset,
            count,
        });
    }
    let manifest = Manifest {
        format: FORMAT_MAGIC.to_string(),
        version: FORMAT_VERSION,
        input_shape: net.input_shape(),
        mean: net.normalization().mean.clone(),
        std: net.normalization().std.clone(),
        labels: net.labels().map(<[String]>::to_vec),
        blob: blob_name.map(str::to_string),
        layers,
        fixtures: Vec::new(),
    };
    (manifest, blob)
}

/// Writes `<path>` (manifest) and its blob next to it with a `.bin` extension.
pub fn save_model(net: &Network, manifest_path: impl AsRef<Path>) -> Result<()> {
    let path = manifest_path.as_ref();
    let blob_path = path.with_extension("bin");
    let blob_name = blob_path.file_name().and_then(|n| n.to_str()).map(str::to_string);
    let (manifest, blob) = network_to_parts(net, blob_name.as_deref());
    let text = serde_json::to_string_pretty(&manifest)?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))?;
    fs::write(&blob_path, blob).map_err(|e| Error::io(&blob_path, e))?;
    Ok(())
}

/// Result of re-running one recorded fixture.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FixtureCheck {
    pub image: String,
    pub max_abs_diff: f64,
}

/// Runs every fixture listed in the manifest and compares logits.
pub fn check_fixtures(manifest_path: impl AsRef<Path>) -> Result<Vec<FixtureCheck>> {
    let path = manifest_path.as_ref();
    let manifest = read_manifest(path)?;
    let net = load_model(path)?;
    let dir = path.parent().unwrap_or(Path::new("."));
    manifest
        .fixtures
        .iter()
        .map(|fx| {
            let img = load_image(dir.join(&fx.image), &net, false)?;
            let trace = net.forward(&img.normalized)?;
            if fx.logits.len() != trace.scores().len() {
                return Err(Error::Manifest(format!(
                    "fixture {} has {} logits, network produces {}",
                    fx.image,
                    fx.logits.len(),
                    trace.scores().len()
                )));
            }
            let max_abs_diff = trace
                .scores()
                .data()
                .iter()
                .zip(&fx.logits)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            Ok(FixtureCheck {
                image: fx.image.clone(),
                max_abs_diff,
            })
        })
        .collect()
}

pub fn write_json<T: Serialize>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}
