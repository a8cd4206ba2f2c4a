//! Canonical `[coil, readout, p0, p1]` layout used by the reconstruction
//! kernels, where `(p0, p1)` are the mask's pattern axes.

use crate::error::{shape_err, Result};
use crate::sampling::SamplingMask;
use crate::tensor::{Axis, CTensor};

/// The one axis of `x` that is neither `coil` nor a pattern axis.
pub fn readout_axis(x: &CTensor, pattern: [Axis; 2]) -> Result<Axis> {
    let rest: Vec<Axis> = x.axes().iter().copied().filter(|a| *a != Axis::Coil && !pattern.contains(a)).collect();
    match rest.as_slice() {
        [a] => Ok(*a),
        _ => shape_err(format!(
            "expected exactly one readout axis besides coil and {pattern:?}, tensor has {:?}",
            x.axes()
        )),
    }
}

/// Permutes `x` to `[coil, readout, p0, p1]`, returning the original axis
/// order for [`from_canonical`].
pub fn to_canonical(x: &CTensor, mask: &SamplingMask) -> Result<(CTensor, Vec<Axis>)> {
    x.axis_index(Axis::Coil)?;
    let ro = readout_axis(x, mask.axes)?;
    let order = [Axis::Coil, ro, mask.axes[0], mask.axes[1]];
    Ok((x.permute(&order)?, x.axes().to_vec()))
}

pub fn from_canonical(x: &CTensor, original: &[Axis]) -> Result<CTensor> {
    x.permute(original)
}

/// Extents `[coils, readout, n0, n1]` of a canonical tensor.
pub fn dims(x: &CTensor) -> [usize; 4] {
    let s = x.shape();
    [s[0], s[1], s[2], s[3]]
}

/// Axes of `axes` that are Fourier-encoded, i.e. everything except `coil`,
/// `echo`, `maps` and the time axis of ky–t data.
pub fn fourier_axes(axes: &[Axis]) -> Vec<Axis> {
    axes.iter().copied().filter(|a| matches!(a, Axis::Kx | Axis::Ky | Axis::Kz)).collect()
}
