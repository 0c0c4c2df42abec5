use std::io::Cursor;
use std::path::Path;

use image::{DynamicImage, GenericImage, GrayImage, ImageFormat, RgbImage};

use crate::error::{Error, Result};
use crate::perturb::normalize_heatmap;
use crate::tensor::Tensor;

/// An `H x W` map with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct HeatmapImage {
    values: Tensor,
}

impl HeatmapImage {
    pub fn new(values: Tensor) -> Result<Self> {
        if values.rank() != 2 {
            return Err(Error::InvalidShape {
                shape: values.shape().to_vec(),
                reason: "heatmap must be H x W".into(),
            });
        }
        if values.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidArgument("heatmap values must lie in [0, 1]".into()));
        }
        Ok(HeatmapImage { values })
    }

    /// Min-max normalizes an arbitrary non-negative map.
    pub fn from_heatmap(heatmap: &Tensor) -> Result<Self> {
        HeatmapImage::new(normalize_heatmap(heatmap))
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    fn dims(&self) -> (usize, usize) {
        (self.values.shape()[0], self.values.shape()[1])
    }
}

/// Jet colormap: dark blue at 0, dark red at 1.
pub fn jet(v: f64) -> [f64; 3] {
    let f = |c: f64| (1.5 - (4.0 * v - c).abs()).clamp(0.0, 1.0);
    [f(3.0), f(2.0), f(1.0)]
}

fn byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Grayscale rendering, or `0.5 * jet + 0.5 * base` when a raw base image of
/// matching size is given.
pub fn render_heatmap(heatmap: &HeatmapImage, base: Option<&Tensor>) -> Result<DynamicImage> {
    let (h, w) = heatmap.dims();
    let values = heatmap.values.data();
    let Some(base) = base else {
        let buf = values.iter().map(|&v| byte(v)).collect();
        return Ok(DynamicImage::ImageLuma8(
            GrayImage::from_raw(w as u32, h as u32, buf).expect("buffer size"),
        ));
    };
    let (c, bh, bw) = base.chw().ok_or_else(|| Error::InvalidShape {
        shape: base.shape().to_vec(),
        reason: "overlay base must be C x H x W".into(),
    })?;
    if (bh, bw) != (h, w) || !(c == 1 || c == 3) {
        return Err(Error::shape(base.shape(), &[3, h, w]));
    }
    let mut buf = Vec::with_capacity(3 * h * w);
    for (i, &v) in values.iter().enumerate() {
        let color = jet(v);
        for (ch, jc) in color.iter().enumerate() {
            let b = base.channel(if c == 1 { 0 } else { ch })[i];
            buf.push(byte(0.5 * jc + 0.5 * b));
        }
    }
    Ok(DynamicImage::ImageRgb8(
        RgbImage::from_raw(w as u32, h as u32, buf).expect("buffer size"),
    ))
}

/// Renders a signed `C x H x W` tensor as `0.5 + 0.5 * x / max|x|`.
pub fn render_signed(t: &Tensor) -> Result<DynamicImage> {
    let (c, h, w) = t.chw().ok_or_else(|| Error::InvalidShape {
        shape: t.shape().to_vec(),
        reason: "expected C x H x W".into(),
    })?;
    let scale = t.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let px = |v: f64| byte(if scale > 0.0 { 0.5 + 0.5 * v / scale } else { 0.5 });
    let n = h * w;
    match c {
        1 => Ok(DynamicImage::ImageLuma8(
            GrayImage::from_raw(w as u32, h as u32, t.data().iter().map(|&v| px(v)).collect()).expect("buffer size"),
        )),
        3 => {
            let buf = (0..n)
                .flat_map(|i| (0..3).map(move |ch| (ch, i)))
                .map(|(ch, i)| px(t.data()[ch * n + i]))
                .collect();
            Ok(DynamicImage::ImageRgb8(
                RgbImage::from_raw(w as u32, h as u32, buf).expect("buffer size"),
            ))
        }
        _ => Err(Error::InvalidArgument(format!("cannot render {c} channels"))),
    }
}

/// Places equally sized images on a grid, row-major, `cols` per row.
pub fn tile(images: &[DynamicImage], cols: usize) -> Result<DynamicImage> {
    let first = images
        .first()
        .ok_or_else(|| Error::InvalidArgument("nothing to tile".into()))?;
    if cols == 0 {
        return Err(Error::InvalidArgument("tile needs at least one column".into()));
    }
    let (w, h) = (first.width(), first.height());
    if images
        .iter()
        .any(|i| i.width() != w || i.height() != h || i.color() != first.color())
    {
        return Err(Error::InvalidArgument(
            "tiled images must share size and color type".into(),
        ));
    }
    let rows = images.len().div_ceil(cols) as u32;
    let (gw, gh) = (w * cols as u32, h * rows);
    let mut grid = match first {
        DynamicImage::ImageLuma8(_) => DynamicImage::ImageLuma8(GrayImage::new(gw, gh)),
        _ => DynamicImage::ImageRgb8(RgbImage::new(gw, gh)),
    };
    for (i, img) in images.iter().enumerate() {
        let (x, y) = ((i % cols) as u32 * w, (i / cols) as u32 * h);
        grid.copy_from(img, x, y)?;
    }
    Ok(grid)
}

pub fn save_png(img: &DynamicImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    img.write_to(&mut Cursor::new(&mut bytes), ImageFormat::Png)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
