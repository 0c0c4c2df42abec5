//! Dense row-major `f64` tensors.
//!
//! Only the arithmetic the network and CAM code needs is provided: elementwise
//! ops against an equal-shape tensor or a scalar, axis reductions, and
//! corner-aligned bilinear resampling of 2-D maps.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ElementwiseOp {
    Add,
    Sub,
    Mul,
    Relu,
    Scale,
}

/// Right-hand side of an elementwise op.
#[derive(Clone, Copy, Debug)]
pub enum Operand<'a> {
    Tensor(&'a Tensor),
    Scalar(f64),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ReduceOp {
    Sum,
    Mean,
    Max,
    /// Linear interpolation between order statistics, `p` in `[0, 100]`.
    Percentile(f64),
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::InvalidShape {
                shape,
                reason: "extents must be positive".into(),
            });
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::InvalidShape {
                shape,
                reason: format!("expects {expected} elements, got {}", data.len()),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn from_vec(data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![data.len()], data)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        assert!(shape.iter().all(|&d| d > 0), "zero extent in {shape:?}");
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor::full(shape, 0.0)
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Value of a rank-0 (or single element) tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() || shape.contains(&0) {
            return Err(Error::shape(&self.shape, &shape));
        }
        self.shape = shape;
        Ok(self)
    }

    fn offset(&self, index: &[usize]) -> usize {
        debug_assert_eq!(index.len(), self.shape.len());
        index.iter().zip(&self.shape).fold(0, |acc, (&i, &d)| {
            debug_assert!(i < d);
            acc * d + i
        })
    }

    pub fn get(&self, index: &[usize]) -> f64 {
        self.data[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], value: f64) {
        let o = self.offset(index);
        self.data[o] = value;
    }

    /// `(channels, height, width)` of a rank-3 tensor.
    pub fn chw(&self) -> Option<(usize, usize, usize)> {
        match *self.shape.as_slice() {
            [c, h, w] => Some((c, h, w)),
            _ => None,
        }
    }

    /// Plane `k` of a rank-3 tensor as a flat slice.
    pub fn channel(&self, k: usize) -> &[f64] {
        let (c, h, w) = self.chw().expect("channel() needs a rank-3 tensor");
        assert!(k < c);
        &self.data[k * h * w..(k + 1) * h * w]
    }

    pub fn channel_mut(&mut self, k: usize) -> &mut [f64] {
        let (c, h, w) = self.chw().expect("channel_mut() needs a rank-3 tensor");
        assert!(k < c);
        &mut self.data[k * h * w..(k + 1) * h * w]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_with(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::shape(&self.shape, &other.shape));
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn elementwise(op: ElementwiseOp, a: &Tensor, b: Operand<'_>) -> Result<Tensor> {
        let binary = |f: fn(f64, f64) -> f64| match b {
            Operand::Tensor(t) => a.zip_with(t, f),
            Operand::Scalar(s) => Ok(a.map(|v| f(v, s))),
        };
        match op {
            ElementwiseOp::Add => binary(|x, y| x + y),
            ElementwiseOp::Sub => binary(|x, y| x - y),
            ElementwiseOp::Mul | ElementwiseOp::Scale => binary(|x, y| x * y),
            ElementwiseOp::Relu => Ok(a.relu()),
        }
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, |a, b| a * b)
    }

    pub fn scale(&self, s: f64) -> Tensor {
        self.map(|v| v * s)
    }

    pub fn relu(&self) -> Tensor {
        self.map(|v| v.max(0.0))
    }

    /// Sum of elementwise products.
    pub fn dot(&self, other: &Tensor) -> Result<f64> {
        if self.shape != other.shape {
            return Err(Error::shape(&self.shape, &other.shape));
        }
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Row-major index of the first maximal element.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.data.iter().enumerate() {
            if v > self.data[best] {
                best = i;
            }
        }
        best
    }

    pub fn percentile(&self, p: f64) -> Result<f64> {
        let mut values = self.data.clone();
        percentile_of(&mut values, p)
    }

    /// Reduces over `axes`, dropping them from the shape. Reducing every axis
    /// yields a rank-0 tensor.
    pub fn reduce(&self, op: ReduceOp, axes: &[usize]) -> Result<Tensor> {
        let rank = self.rank();
        let mut reduced = vec![false; rank];
        for &axis in axes {
            if axis >= rank {
                return Err(Error::InvalidAxis { axis, rank });
            }
            reduced[axis] = true;
        }
        if let ReduceOp::Percentile(p) = op {
            check_percentile(p)?;
        }
        let out_shape: Vec<usize> = self
            .shape
            .iter()
            .zip(&reduced)
            .filter(|(_, &r)| !r)
            .map(|(&d, _)| d)
            .collect();
        let out_len: usize = out_shape.iter().product();
        let mut groups: Vec<Vec<f64>> = vec![Vec::new(); out_len];

        let mut index = vec![0usize; rank];
        for &v in &self.data {
            let out = index
                .iter()
                .zip(&self.shape)
                .zip(&reduced)
                .filter(|(_, &r)| !r)
                .fold(0, |acc, ((&i, &d), _)| acc * d + i);
            groups[out].push(v);
            for axis in (0..rank).rev() {
                index[axis] += 1;
                if index[axis] < self.shape[axis] {
                    break;
                }
                index[axis] = 0;
            }
        }

        let data = groups
            .into_iter()
            .map(|mut g| match op {
                ReduceOp::Sum => Ok(g.iter().sum()),
                ReduceOp::Mean => Ok(g.iter().sum::<f64>() / g.len() as f64),
                ReduceOp::Max => Ok(g.iter().copied().fold(f64::NEG_INFINITY, f64::max)),
                ReduceOp::Percentile(p) => percentile_of(&mut g, p),
            })
            .collect::<Result<Vec<f64>>>()?;
        Ok(Tensor { shape: out_shape, data })
    }

    /// Corner-aligned bilinear resampling of an `H x W` map.
    pub fn upsample_bilinear(&self, target: (usize, usize)) -> Result<Tensor> {
        let (h, w) = match *self.shape.as_slice() {
            [h, w] => (h, w),
            _ => {
                return Err(Error::InvalidShape {
                    shape: self.shape.clone(),
                    reason: "bilinear resampling needs a 2-D map".into(),
                })
            }
        };
        let (th, tw) = target;
        if th == 0 || tw == 0 {
            return Err(Error::InvalidArgument(format!(
                "target size {th}x{tw} has a zero extent"
            )));
        }
        let rows: Vec<(usize, usize, f64)> = (0..th).map(|y| sample_coord(y, th, h)).collect();
        let cols: Vec<(usize, usize, f64)> = (0..tw).map(|x| sample_coord(x, tw, w)).collect();
        let mut data = Vec::with_capacity(th * tw);
        for &(y0, y1, fy) in &rows {
            for &(x0, x1, fx) in &cols {
                let top = lerp(self.data[y0 * w + x0], self.data[y0 * w + x1], fx);
                let bottom = lerp(self.data[y1 * w + x0], self.data[y1 * w + x1], fx);
                data.push(lerp(top, bottom, fy));
            }
        }
        Ok(Tensor {
            shape: vec![th, tw],
            data,
        })
    }
}

fn check_percentile(p: f64) -> Result<()> {
    if !(0.0..=100.0).contains(&p) {
        return Err(Error::InvalidArgument(format!("percentile {p} outside [0, 100]")));
    }
    Ok(())
}

fn percentile_of(values: &mut [f64], p: f64) -> Result<f64> {
    check_percentile(p)?;
    if values.is_empty() {
        return Err(Error::InvalidArgument("percentile of empty set".into()));
    }
    values.sort_by(f64::total_cmp);
    let rank = p / 100.0 * (values.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    Ok(lerp(values[lo], values[hi], rank - lo as f64))
}

/// Source indices and fraction for output position `i` of `out` samples over
/// `src` input samples, with the first and last samples aligned.
fn sample_coord(i: usize, out: usize, src: usize) -> (usize, usize, f64) {
    if out == 1 || src == 1 {
        return (0, 0, 0.0);
    }
    let pos = (i * (src - 1)) as f64 / (out - 1) as f64;
    let lo = (pos.floor() as usize).min(src - 1);
    let hi = (lo + 1).min(src - 1);
    (lo, hi, pos - lo as f64)
}

/// Interpolates and clamps to the endpoints so the result never leaves
/// `[min(a, b), max(a, b)]`.
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    if t == 0.0 || a == b {
        return a;
    }
    (a + t * (b - a)).clamp(a.min(b), a.max(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn rejects_bad_construction() {
        assert!(Tensor::new(vec![2, 2], vec![1.0; 3]).is_err());
        assert!(Tensor::new(vec![0, 2], vec![]).is_err());
    }

    #[test]
    fn elementwise_basics() {
        let a = t(&[3], &[-1.0, 0.0, 2.0]);
        let r = Tensor::elementwise(ElementwiseOp::Relu, &a, Operand::Scalar(0.0)).unwrap();
        assert_eq!(r.data(), &[0.0, 0.0, 2.0]);

        let x = t(&[2], &[1.0, 2.0]);
        let y = t(&[2], &[3.0, 4.0]);
        let s = Tensor::elementwise(ElementwiseOp::Add, &x, Operand::Tensor(&y)).unwrap();
        assert_eq!(s.data(), &[4.0, 6.0]);

        let m = t(&[2, 2], &[0.3, -1.5, 2.0, 7.0]);
        let ones = Tensor::full(&[2, 2], 1.0);
        assert_eq!(m.mul(&ones).unwrap(), m);

        let scaled = Tensor::elementwise(ElementwiseOp::Scale, &x, Operand::Scalar(2.5)).unwrap();
        assert_eq!(scaled.data(), &[2.5, 5.0]);
    }

    #[test]
    fn shape_mismatch_reports_both_shapes() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[3, 2]);
        match a.add(&b) {
            Err(Error::ShapeMismatch { left, right }) => {
                assert_eq!(left, vec![2, 3]);
                assert_eq!(right, vec![3, 2]);
            }
            other => panic!("expected shape mismatch, got {other:?}"),
        }
    }

    #[test]
    fn reductions() {
        let m = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let all = m.reduce(ReduceOp::Sum, &[0, 1]).unwrap();
        assert_eq!(all.shape(), &[] as &[usize]);
        assert_eq!(all.item(), 10.0);

        let rows = m.reduce(ReduceOp::Sum, &[1]).unwrap();
        assert_eq!(rows.data(), &[3.0, 7.0]);
        let cols = m.reduce(ReduceOp::Max, &[0]).unwrap();
        assert_eq!(cols.data(), &[3.0, 4.0]);

        let c = Tensor::full(&[3, 4, 5], 2.75);
        assert_eq!(c.reduce(ReduceOp::Mean, &[0, 1, 2]).unwrap().item(), 2.75);
        assert!(matches!(
            m.reduce(ReduceOp::Sum, &[2]),
            Err(Error::InvalidAxis { axis: 2, rank: 2 })
        ));
        assert!(m.reduce(ReduceOp::Percentile(101.0), &[0]).is_err());
    }

    #[test]
    fn percentile_of_one_to_ten() {
        // sorted ranks: 0.8 * 9 = 7.2 -> 8 + 0.2 * (9 - 8)
        let v = Tensor::from_vec((1..=10).map(f64::from).collect()).unwrap();
        let p = v.reduce(ReduceOp::Percentile(80.0), &[0]).unwrap().item();
        assert!((p - 8.2).abs() < 1e-12);
    }

    #[test]
    fn upsample_constant_and_single_pixel() {
        let c = Tensor::full(&[3, 5], 1.25);
        let up = c.upsample_bilinear((7, 11)).unwrap();
        assert!(up.data().iter().all(|&v| v == 1.25));

        let one = t(&[1, 1], &[5.0]);
        let up = one.upsample_bilinear((4, 3)).unwrap();
        assert_eq!(up.shape(), &[4, 3]);
        assert!(up.data().iter().all(|&v| v == 5.0));

        assert!(one.upsample_bilinear((0, 3)).is_err());
    }

    #[test]
    fn upsample_two_by_two_matches_closed_form() {
        // corner-aligned: output column j samples source x = j * (2-1)/(4-1)
        let m = t(&[2, 2], &[0.0, 1.0, 0.0, 1.0]);
        let up = m.upsample_bilinear((2, 4)).unwrap();
        for row in 0..2 {
            for j in 0..4 {
                let x = j as f64 / 3.0;
                let expected = (1.0 - x) * 0.0 + x * 1.0;
                assert!((up.get(&[row, j]) - expected).abs() < 1e-15);
            }
        }
    }

    fn map_strategy() -> impl Strategy<Value = Tensor> {
        (1usize..6, 1usize..6).prop_flat_map(|(h, w)| {
            prop::collection::vec(-10.0f64..10.0, h * w).prop_map(move |d| Tensor::new(vec![h, w], d).unwrap())
        })
    }

    proptest! {
        #[test]
        fn upsample_same_size_is_identity(m in map_strategy()) {
            let (h, w) = (m.shape()[0], m.shape()[1]);
            prop_assert_eq!(m.upsample_bilinear((h, w)).unwrap(), m);
        }

        #[test]
        fn upsample_stays_within_range(m in map_strategy(), th in 1usize..13, tw in 1usize..13) {
            let up = m.upsample_bilinear((th, tw)).unwrap();
            prop_assert!(up.min() >= m.min());
            prop_assert!(up.max() <= m.max());
        }

        #[test]
        fn percentile_extremes(v in prop::collection::vec(-100.0f64..100.0, 1..40)) {
            let t = Tensor::from_vec(v).unwrap();
            prop_assert_eq!(t.percentile(100.0).unwrap(), t.max());
            prop_assert_eq!(t.percentile(0.0).unwrap(), t.min());
        }
    }
}
