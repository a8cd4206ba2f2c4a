//! Complex n-dimensional tensor with labelled axes.
//!
//! Storage is row-major (last axis fastest). The same labels are used in
//! k-space and image space: `kx` is the readout direction in both.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};

pub type C64 = Complex64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Coil,
    Echo,
    Kx,
    Ky,
    Kz,
    T,
    Maps,
}

impl Axis {
    pub fn as_str(self) -> &'static str {
        match self {
            Axis::Coil => "coil",
            Axis::Echo => "echo",
            Axis::Kx => "kx",
            Axis::Ky => "ky",
            Axis::Kz => "kz",
            Axis::T => "t",
            Axis::Maps => "maps",
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "coil" => Axis::Coil,
            "echo" => Axis::Echo,
            "kx" | "x" => Axis::Kx,
            "ky" | "y" => Axis::Ky,
            "kz" | "z" => Axis::Kz,
            "t" => Axis::T,
            "maps" => Axis::Maps,
            other => return Err(Error::UnknownAxis(other.to_string())),
        })
    }
}

/// Row-major strides for `shape`.
pub fn strides_of(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    strides
}

#[derive(Debug, Clone, PartialEq)]
pub struct CTensor {
    axes: Vec<Axis>,
    shape: Vec<usize>,
    data: Vec<C64>,
}

impl CTensor {
    /// Builds a tensor, checking the shape/axes/data invariants. Values must be
    /// finite; use [`CTensor::new_unchecked_finite`] to skip that check.
    pub fn new(axes: Vec<Axis>, shape: Vec<usize>, data: Vec<C64>) -> Result<Self> {
        let t = Self::new_unchecked_finite(axes, shape, data)?;
        if let Some(i) = t.data.iter().position(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return shape_err(format!("non-finite value at flat index {i}"));
        }
        Ok(t)
    }

    pub fn new_unchecked_finite(axes: Vec<Axis>, shape: Vec<usize>, data: Vec<C64>) -> Result<Self> {
        if axes.len() != shape.len() {
            return shape_err(format!("{} axes for {} extents", axes.len(), shape.len()));
        }
        for (i, a) in axes.iter().enumerate() {
            if axes[..i].contains(a) {
                return shape_err(format!("duplicate axis label `{a}`"));
            }
        }
        if shape.iter().any(|&n| n == 0) {
            return shape_err(format!("zero extent in shape {shape:?}"));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return shape_err(format!("shape {shape:?} needs {n} values, got {}", data.len()));
        }
        Ok(Self { axes, shape, data })
    }

    pub fn zeros(axes: Vec<Axis>, shape: Vec<usize>) -> Result<Self> {
        let n = shape.iter().product();
        Self::new_unchecked_finite(axes, shape, vec![C64::new(0.0, 0.0); n])
    }

    pub fn from_real(axes: Vec<Axis>, shape: Vec<usize>, data: &[f64]) -> Result<Self> {
        Self::new(axes, shape, data.iter().map(|&v| C64::new(v, 0.0)).collect())
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[C64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<C64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn strides(&self) -> Vec<usize> {
        strides_of(&self.shape)
    }

    pub fn has_axis(&self, axis: Axis) -> bool {
        self.axes.contains(&axis)
    }

    pub fn axis_index(&self, axis: Axis) -> Result<usize> {
        self.axes
            .iter()
            .position(|&a| a == axis)
            .ok_or_else(|| Error::MissingAxis { axis, present: self.axes.clone() })
    }

    pub fn extent(&self, axis: Axis) -> Result<usize> {
        Ok(self.shape[self.axis_index(axis)?])
    }

    pub fn offset(&self, index: &[usize]) -> usize {
        debug_assert_eq!(index.len(), self.shape.len());
        let mut off = 0;
        for (i, (&ix, &n)) in index.iter().zip(&self.shape).enumerate() {
            debug_assert!(ix < n, "index {ix} out of range on axis {i}");
            off = off * n + ix;
        }
        off
    }

    pub fn get(&self, index: &[usize]) -> C64 {
        self.data[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], v: C64) {
        let off = self.offset(index);
        self.data[off] = v;
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    pub fn map(&self, f: impl Fn(C64) -> C64) -> CTensor {
        CTensor { axes: self.axes.clone(), shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn scale(&self, s: C64) -> CTensor {
        self.map(|v| v * s)
    }

    pub fn abs(&self) -> CTensor {
        self.map(|v| C64::new(v.norm(), 0.0))
    }

    /// Elementwise `self + other`; shapes and axes must match exactly.
    pub fn add(&self, other: &CTensor) -> Result<CTensor> {
        self.same_layout(other)?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Ok(CTensor { axes: self.axes.clone(), shape: self.shape.clone(), data })
    }

    pub fn same_layout(&self, other: &CTensor) -> Result<()> {
        if self.axes != other.axes || self.shape != other.shape {
            return shape_err(format!(
                "layout mismatch: {:?}{:?} vs {:?}{:?}",
                self.axes, self.shape, other.axes, other.shape
            ));
        }
        Ok(())
    }

    /// Drops `axis` by taking the slice at `index`.
    pub fn select(&self, axis: Axis, index: usize) -> Result<CTensor> {
        let ax = self.axis_index(axis)?;
        let n = self.shape[ax];
        if index >= n {
            return shape_err(format!("index {index} out of range for axis {axis} of extent {n}"));
        }
        let outer: usize = self.shape[..ax].iter().product();
        let inner: usize = self.shape[ax + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            let base = (o * n + index) * inner;
            data.extend_from_slice(&self.data[base..base + inner]);
        }
        let mut axes = self.axes.clone();
        let mut shape = self.shape.clone();
        axes.remove(ax);
        shape.remove(ax);
        if axes.is_empty() {
            axes.push(axis);
            shape.push(1);
        }
        Ok(CTensor { axes, shape, data })
    }

    /// Stacks equally-shaped tensors along a new leading-position axis inserted
    /// at `position`.
    pub fn stack(parts: &[CTensor], axis: Axis, position: usize) -> Result<CTensor> {
        let first = parts.first().ok_or_else(|| Error::Shape("cannot stack zero tensors".into()))?;
        for p in parts {
            first.same_layout(p)?;
        }
        if first.has_axis(axis) {
            return shape_err(format!("axis {axis} already present"));
        }
        if position > first.shape.len() {
            return shape_err(format!("stack position {position} beyond rank {}", first.shape.len()));
        }
        let outer: usize = first.shape[..position].iter().product();
        let inner: usize = first.shape[position..].iter().product();
        let mut data = Vec::with_capacity(outer * inner * parts.len());
        for o in 0..outer {
            for p in parts {
                data.extend_from_slice(&p.data[o * inner..(o + 1) * inner]);
            }
        }
        let mut axes = first.axes.clone();
        let mut shape = first.shape.clone();
        axes.insert(position, axis);
        shape.insert(position, parts.len());
        Ok(CTensor { axes, shape, data })
    }

    /// Reorders axes to `order`, which must be a permutation of the current
    /// labels.
    pub fn permute(&self, order: &[Axis]) -> Result<CTensor> {
        if order.len() != self.axes.len() {
            return shape_err(format!("permute order {order:?} does not match axes {:?}", self.axes));
        }
        let perm: Vec<usize> = order.iter().map(|&a| self.axis_index(a)).collect::<Result<_>>()?;
        if perm.iter().enumerate().all(|(i, &p)| i == p) {
            return Ok(self.clone());
        }
        let shape: Vec<usize> = perm.iter().map(|&p| self.shape[p]).collect();
        let src_strides = self.strides();
        let strides: Vec<usize> = perm.iter().map(|&p| src_strides[p]).collect();
        let mut data = Vec::with_capacity(self.data.len());
        let mut idx = vec![0usize; shape.len()];
        for _ in 0..self.data.len() {
            let off: usize = idx.iter().zip(&strides).map(|(i, s)| i * s).sum();
            data.push(self.data[off]);
            for d in (0..shape.len()).rev() {
                idx[d] += 1;
                if idx[d] < shape[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
        Ok(CTensor { axes: order.to_vec(), shape, data })
    }

    /// Relabels axes without touching data.
    pub fn with_axes(mut self, axes: Vec<Axis>) -> Result<CTensor> {
        if axes.len() != self.shape.len() {
            return shape_err(format!("{} labels for rank {}", axes.len(), self.shape.len()));
        }
        self.axes = axes;
        Ok(self)
    }

    /// Inserts a unit axis at `position`.
    pub fn unsqueeze(mut self, axis: Axis, position: usize) -> Result<CTensor> {
        if self.has_axis(axis) {
            return shape_err(format!("axis {axis} already present"));
        }
        self.axes.insert(position, axis);
        self.shape.insert(position, 1);
        Ok(self)
    }

    /// Centered crop. `targets` lists (axis, new extent) pairs; unlisted axes
    /// are kept whole. When the parity of old and new extents differ the extra
    /// sample stays on the low-index side, so the sample at `n/2` stays at
    /// `m/2`.
    pub fn crop_center(&self, targets: &[(Axis, usize)]) -> Result<CTensor> {
        let mut new_shape = self.shape.clone();
        let mut starts = vec![0usize; self.shape.len()];
        for &(axis, m) in targets {
            let ax = self.axis_index(axis)?;
            let n = self.shape[ax];
            if m == 0 || m > n {
                return shape_err(format!("cannot crop axis {axis} from {n} to {m}"));
            }
            new_shape[ax] = m;
            starts[ax] = n / 2 - m / 2;
        }
        self.crop(&starts, &new_shape)
    }

    /// Inverse of [`CTensor::crop_center`]: embeds into a zero tensor.
    pub fn pad_center(&self, targets: &[(Axis, usize)]) -> Result<CTensor> {
        let mut new_shape = self.shape.clone();
        let mut starts = vec![0usize; self.shape.len()];
        for &(axis, m) in targets {
            let ax = self.axis_index(axis)?;
            let n = self.shape[ax];
            if m < n {
                return shape_err(format!("cannot pad axis {axis} from {n} to {m}"));
            }
            new_shape[ax] = m;
            starts[ax] = m / 2 - n / 2;
        }
        self.embed(&starts, &new_shape)
    }

    /// Sub-box starting at `starts` with extents `shape`.
    pub fn crop(&self, starts: &[usize], shape: &[usize]) -> Result<CTensor> {
        if starts.len() != self.shape.len() || shape.len() != self.shape.len() {
            return shape_err("crop rank mismatch");
        }
        for d in 0..shape.len() {
            if shape[d] == 0 || starts[d] + shape[d] > self.shape[d] {
                return shape_err(format!(
                    "crop box start {starts:?} extent {shape:?} exceeds shape {:?}",
                    self.shape
                ));
            }
        }
        let mut out = CTensor::zeros(self.axes.clone(), shape.to_vec())?;
        let rank = shape.len();
        let inner = shape[rank - 1];
        let src_strides = self.strides();
        let rows = out.len() / inner;
        let mut idx = vec![0usize; rank - 1];
        for r in 0..rows {
            let src: usize = (0..rank - 1).map(|d| (idx[d] + starts[d]) * src_strides[d]).sum::<usize>()
                + starts[rank - 1];
            out.data[r * inner..(r + 1) * inner].copy_from_slice(&self.data[src..src + inner]);
            for d in (0..rank - 1).rev() {
                idx[d] += 1;
                if idx[d] < shape[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
        Ok(out)
    }

    /// Places `self` into a zero tensor of extents `shape` at `starts`.
    pub fn embed(&self, starts: &[usize], shape: &[usize]) -> Result<CTensor> {
        if starts.len() != self.shape.len() || shape.len() != self.shape.len() {
            return shape_err("embed rank mismatch");
        }
        for d in 0..shape.len() {
            if starts[d] + self.shape[d] > shape[d] {
                return shape_err(format!(
                    "embedding {:?} at {starts:?} exceeds target {shape:?}",
                    self.shape
                ));
            }
        }
        let mut out = CTensor::zeros(self.axes.clone(), shape.to_vec())?;
        let rank = shape.len();
        let inner = self.shape[rank - 1];
        let dst_strides = out.strides();
        let rows = self.len() / inner;
        let mut idx = vec![0usize; rank - 1];
        for r in 0..rows {
            let dst: usize = (0..rank - 1).map(|d| (idx[d] + starts[d]) * dst_strides[d]).sum::<usize>()
                + starts[rank - 1];
            out.data[dst..dst + inner].copy_from_slice(&self.data[r * inner..(r + 1) * inner]);
            for d in (0..rank - 1).rev() {
                idx[d] += 1;
                if idx[d] < self.shape[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(axes: Vec<Axis>, shape: Vec<usize>) -> CTensor {
        let n: usize = shape.iter().product();
        CTensor::new(axes, shape, (0..n).map(|i| C64::new(i as f64, -(i as f64))).collect()).unwrap()
    }

    #[test]
    fn rejects_bad_layouts() {
        assert!(CTensor::zeros(vec![Axis::Kx], vec![2, 3]).is_err());
        assert!(CTensor::zeros(vec![Axis::Kx, Axis::Kx], vec![2, 3]).is_err());
        assert!(CTensor::new(vec![Axis::Kx], vec![3], vec![C64::new(0.0, 0.0); 2]).is_err());
        assert!(CTensor::new(vec![Axis::Kx], vec![1], vec![C64::new(f64::NAN, 0.0)]).is_err());
        assert!("kq".parse::<Axis>().is_err());
    }

    #[test]
    fn crop_then_pad_keeps_center() {
        let x = ramp(vec![Axis::Kx], vec![256]);
        let c = x.crop_center(&[(Axis::Kx, 24)]).unwrap();
        assert_eq!(c.data()[12], x.data()[128]);
        let p = c.pad_center(&[(Axis::Kx, 256)]).unwrap();
        for i in 0..256 {
            let inside = (116..140).contains(&i);
            assert_eq!(p.data()[i], if inside { x.data()[i] } else { C64::new(0.0, 0.0) });
        }
        assert_eq!(x.crop_center(&[(Axis::Kx, 256)]).unwrap(), x);
    }

    #[test]
    fn odd_even_crop_puts_extra_sample_low() {
        let x = ramp(vec![Axis::Ky], vec![9]);
        let c = x.crop_center(&[(Axis::Ky, 4)]).unwrap();
        let got: Vec<f64> = c.data().iter().map(|v| v.re).collect();
        assert_eq!(got, vec![2.0, 3.0, 4.0, 5.0]);
    }

    #[test]
    fn acs_crop_leaves_readout() {
        let x = CTensor::zeros(vec![Axis::Kx, Axis::Ky, Axis::Kz], vec![256, 240, 192]).unwrap();
        let c = x.crop_center(&[(Axis::Ky, 24), (Axis::Kz, 24)]).unwrap();
        assert_eq!(c.shape(), &[256, 24, 24]);
        assert!(x.crop_center(&[(Axis::Ky, 241)]).is_err());
        assert!(c.pad_center(&[(Axis::Ky, 23)]).is_err());
    }

    #[test]
    fn select_stack_permute() {
        let x = ramp(vec![Axis::Coil, Axis::Kx, Axis::Ky], vec![2, 3, 4]);
        let parts: Vec<_> = (0..3).map(|i| x.select(Axis::Kx, i).unwrap()).collect();
        assert_eq!(CTensor::stack(&parts, Axis::Kx, 1).unwrap(), x);
        let p = x.permute(&[Axis::Ky, Axis::Coil, Axis::Kx]).unwrap();
        assert_eq!(p.shape(), &[4, 2, 3]);
        assert_eq!(p.get(&[3, 1, 2]), x.get(&[1, 2, 3]));
        assert_eq!(p.permute(&[Axis::Coil, Axis::Kx, Axis::Ky]).unwrap(), x);
    }
}
