//! Centered, orthonormal DFTs along labelled axes.
//!
//! DC sits at index `n / 2` in both domains: the shift is applied to the input
//! and the output, so `fftc` maps a centered image to centered k-space.

use std::sync::Arc;

use rustfft::{Fft, FftPlanner};

use crate::error::Result;
use crate::tensor::{Axis, CTensor, C64};

#[derive(Clone, Copy, PartialEq, Eq)]
enum Direction {
    Forward,
    Inverse,
}

pub fn fftc(x: &CTensor, axes: &[Axis]) -> Result<CTensor> {
    transform(x, axes, Direction::Forward)
}

pub fn ifftc(x: &CTensor, axes: &[Axis]) -> Result<CTensor> {
    transform(x, axes, Direction::Inverse)
}

fn transform(x: &CTensor, axes: &[Axis], dir: Direction) -> Result<CTensor> {
    let dims: Vec<usize> = axes.iter().map(|&a| x.axis_index(a)).collect::<Result<_>>()?;
    let mut out = x.clone();
    let mut planner = FftPlanner::<f64>::new();
    for d in dims {
        let n = out.shape()[d];
        if n == 1 {
            continue;
        }
        let plan = match dir {
            Direction::Forward => planner.plan_fft_forward(n),
            Direction::Inverse => planner.plan_fft_inverse(n),
        };
        let stride: usize = out.shape()[d + 1..].iter().product();
        transform_axis(out.data_mut(), n, stride, &plan);
    }
    Ok(out)
}

/// Applies `plan` with centering along every line of extent `n` and element
/// stride `stride`.
fn transform_axis(data: &mut [C64], n: usize, stride: usize, plan: &Arc<dyn Fft<f64>>) {
    let scale = 1.0 / (n as f64).sqrt();
    let half = n / 2;
    let block = n * stride;
    let mut line = vec![C64::new(0.0, 0.0); n];
    let mut scratch = vec![C64::new(0.0, 0.0); plan.get_inplace_scratch_len()];
    for chunk in data.chunks_mut(block) {
        for inner in 0..stride {
            // ifftshift: centered index `half` moves to 0
            for (i, slot) in line.iter_mut().enumerate() {
                *slot = chunk[((i + half) % n) * stride + inner];
            }
            plan.process_with_scratch(&mut line, &mut scratch);
            // fftshift: index 0 moves to `half`
            for (i, v) in line.iter().enumerate() {
                chunk[((i + half) % n) * stride + inner] = v * scale;
            }
        }
    }
}
