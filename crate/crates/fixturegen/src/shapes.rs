//! Synthetic 3x32x32 shape images: one filled shape on a noisy tinted
//! background.

use rand::Rng;

pub const SIZE: usize = 32;
pub const LABELS: [&str; 4] = ["square", "disc", "cross", "triangle"];

/// 8-bit planar RGB image with its class.
pub struct Sample {
    pub pixels: Vec<u8>,
    pub class: usize,
}

fn inside(class: usize, dx: f64, dy: f64, r: f64) -> bool {
    match class {
        0 => dx.abs() <= r && dy.abs() <= r,
        1 => dx * dx + dy * dy <= r * r,
        2 => (dx.abs() <= r && dy.abs() <= r / 3.0) || (dy.abs() <= r && dx.abs() <= r / 3.0),
        _ => dy <= r && dy >= -r && dx.abs() <= (dy + r) / 2.0,
    }
}

pub fn sample<R: Rng + ?Sized>(rng: &mut R, class: usize) -> Sample {
    let bg: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.1..0.6));
    let fg: [f64; 3] = loop {
        let c: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.0..1.0));
        let contrast: f64 = c.iter().zip(&bg).map(|(a, b)| (a - b).abs()).sum();
        if contrast > 0.6 {
            break c;
        }
    };
    let r = rng.gen_range(5.0..9.0);
    let margin = r + 1.0;
    let cx = rng.gen_range(margin..SIZE as f64 - margin);
    let cy = rng.gen_range(margin..SIZE as f64 - margin);

    let n = SIZE * SIZE;
    let mut pixels = vec![0u8; 3 * n];
    for y in 0..SIZE {
        for x in 0..SIZE {
            let on = inside(class, x as f64 + 0.5 - cx, y as f64 + 0.5 - cy, r);
            for ch in 0..3 {
                let base = if on { fg[ch] } else { bg[ch] };
                let v = base + rng.gen_range(-0.08..0.08);
                pixels[ch * n + y * SIZE + x] = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
            }
        }
    }
    Sample { pixels, class }
}
