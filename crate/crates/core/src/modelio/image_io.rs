use std::path::Path;

use image::{DynamicImage, ImageFormat, ImageReader};

use crate::error::{Error, Result};
use crate::network::Network;
use crate::tensor::Tensor;

/// An input image in raw pixel space (`[0, 1]`) and after normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct LoadedImage {
    pub raw: Tensor,
    pub normalized: Tensor,
}

/// Decodes an 8-bit PNG or PPM/PGM into a `C x H x W` tensor scaled to
/// `[0, 1]`. Grayscale input is replicated for 3-channel requests and color
/// input is reduced to luma for 1-channel requests.
pub fn load_raw_image(path: impl AsRef<Path>, channels: usize) -> Result<Tensor> {
    let path = path.as_ref();
    let reader = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    match reader.format() {
        Some(ImageFormat::Png | ImageFormat::Pnm) => {}
        Some(other) => return Err(Error::UnsupportedImage(format!("{}: {other:?}", path.display()))),
        None => return Err(Error::UnsupportedImage(format!("{}: unrecognized", path.display()))),
    }
    let img = reader.decode()?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data: Vec<f64> = match channels {
        1 => planar(img.to_luma8().as_raw(), 1, h * w),
        3 => planar(img.to_rgb8().as_raw(), 3, h * w),
        c => {
            return Err(Error::UnsupportedImage(format!(
                "networks with {c} input channels cannot read image files"
            )))
        }
    };
    Tensor::new(vec![channels, h, w], data)
}

fn planar(interleaved: &[u8], c: usize, pixels: usize) -> Vec<f64> {
    let mut out = vec![0.0; c * pixels];
    for (i, px) in interleaved.chunks_exact(c).enumerate() {
        for (ch, &v) in px.iter().enumerate() {
            out[ch * pixels + i] = f64::from(v) / 255.0;
        }
    }
    out
}

/// Loads an image for `net`. Without `resize`, dimensions must match the
/// network input exactly.
pub fn load_image(path: impl AsRef<Path>, net: &Network, resize: bool) -> Result<LoadedImage> {
    let [c, h, w] = net.input_shape();
    let raw = load_raw_image(path, c)?;
    let (_, ih, iw) = raw.chw().expect("rank 3");
    let raw = if (ih, iw) == (h, w) {
        raw
    } else if resize {
        let mut data = Vec::with_capacity(c * h * w);
        for ch in 0..c {
            let plane = Tensor::new(vec![ih, iw], raw.channel(ch).to_vec())?;
            data.extend(plane.upsample_bilinear((h, w))?.into_data());
        }
        Tensor::new(vec![c, h, w], data)?
    } else {
        return Err(Error::ImageDimensions {
            found: (ih, iw),
            expected: (h, w),
        });
    };
    let normalized = net.normalize(&raw)?;
    Ok(LoadedImage { raw, normalized })
}

/// Writes a raw `C x H x W` tensor (values clamped to `[0, 1]`) as PNG.
pub fn save_image(raw: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let (c, h, w) = raw.chw().ok_or_else(|| Error::InvalidShape {
        shape: raw.shape().to_vec(),
        reason: "image must be C x H x W".into(),
    })?;
    let byte = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    let pixels = h * w;
    let img = match c {
        1 => DynamicImage::ImageLuma8(
            image::GrayImage::from_raw(w as u32, h as u32, raw.data().iter().map(|&v| byte(v)).collect())
                .expect("buffer size"),
        ),
        3 => {
            let mut buf = Vec::with_capacity(3 * pixels);
            for i in 0..pixels {
                for ch in 0..3 {
                    buf.push(byte(raw.data()[ch * pixels + i]));
                }
            }
            DynamicImage::ImageRgb8(image::RgbImage::from_raw(w as u32, h as u32, buf).expect("buffer size"))
        }
        _ => return Err(Error::InvalidArgument(format!("cannot write a {c}-channel image"))),
    };
    super::save_png(&img, path)
}
