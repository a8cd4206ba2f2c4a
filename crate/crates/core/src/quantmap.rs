//! T2 / T2* maps from multi-echo magnitude images by log-linear least
//! squares on `ln S = ln S0 − TE / T`.

use rayon::prelude::*;

use crate::error::{param_err, shape_err, Result};
use crate::tensor::{Axis, CTensor, C64};

pub const T_MIN_MS: f64 = 0.1;
pub const T_MAX_MS: f64 = 10000.0;

/// Per-voxel fit over the spatial axes of the input (echo axis removed).
/// Maps are real-valued tensors with zero imaginary parts; invalid voxels are
/// zero everywhere.
#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub t_map: CTensor,
    pub s0_map: CTensor,
    pub r2_map: CTensor,
    pub valid: Vec<bool>,
}

struct Voxel {
    t: f64,
    s0: f64,
    r2: f64,
}

/// Fits every voxel of `images` (any axes including `echo`; magnitudes are
/// used) whose echo magnitudes all exceed `threshold`.
pub fn fit_decay(images: &CTensor, te_ms: &[f64], threshold: f64) -> Result<FitResult> {
    let ne = images.extent(Axis::Echo)?;
    if te_ms.len() != ne {
        return shape_err(format!("{ne} echoes but {} echo times", te_ms.len()));
    }
    if ne < 2 {
        return param_err("decay fit needs at least two echoes");
    }
    if te_ms.iter().any(|t| !t.is_finite()) {
        return param_err("echo times must be finite");
    }
    let mut order: Vec<usize> = (0..ne).collect();
    order.sort_by(|&a, &b| te_ms[a].total_cmp(&te_ms[b]));
    if order.windows(2).any(|w| te_ms[w[0]] == te_ms[w[1]]) {
        return param_err("echo times must be distinct");
    }
    let te: Vec<f64> = order.iter().map(|&e| te_ms[e]).collect();

    let mut axes = vec![Axis::Echo];
    axes.extend(images.axes().iter().copied().filter(|a| *a != Axis::Echo));
    let x = images.permute(&axes)?;
    let spatial_shape = x.shape()[1..].to_vec();
    let nvox: usize = spatial_shape.iter().product();
    let data = x.data();

    let n = ne as f64;
    let t_mean = te.iter().sum::<f64>() / n;
    let stt: f64 = te.iter().map(|t| (t - t_mean).powi(2)).sum();

    let fits: Vec<Option<Voxel>> = (0..nvox)
        .into_par_iter()
        .map(|v| {
            let s: Vec<f64> = order.iter().map(|&e| data[e * nvox + v].norm()).collect();
            if s.iter().any(|m| !(*m > threshold)) {
                return None;
            }
            let y: Vec<f64> = s.iter().map(|m| m.ln()).collect();
            let y_mean = y.iter().sum::<f64>() / n;
            let sty: f64 = te.iter().zip(&y).map(|(t, y)| (t - t_mean) * (y - y_mean)).sum();
            let slope = sty / stt;
            let intercept = y_mean - slope * t_mean;
            let syy: f64 = y.iter().map(|y| (y - y_mean).powi(2)).sum();
            let ss_res: f64 = te.iter().zip(&y).map(|(t, y)| (y - intercept - slope * t).powi(2)).sum();
            let r2 = if syy <= f64::EPSILON * y_mean.abs().max(1.0) * n {
                1.0
            } else {
                (1.0 - ss_res / syy).clamp(0.0, 1.0)
            };
            let t = if slope < 0.0 { (-1.0 / slope).clamp(T_MIN_MS, T_MAX_MS) } else { T_MAX_MS };
            Some(Voxel { t, s0: intercept.exp(), r2 })
        })
        .collect();

    let out_axes = axes[1..].to_vec();
    let to_map = |f: fn(&Voxel) -> f64| -> Result<CTensor> {
        let vals = fits.iter().map(|v| C64::new(v.as_ref().map(f).unwrap_or(0.0), 0.0)).collect();
        CTensor::new(out_axes.clone(), spatial_shape.clone(), vals)
    };
    Ok(FitResult {
        t_map: to_map(|v| v.t)?,
        s0_map: to_map(|v| v.s0)?,
        r2_map: to_map(|v| v.r2)?,
        valid: fits.iter().map(Option::is_some).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn series(vals: &[&[f64]]) -> CTensor {
        // vals[e][voxel]
        let ne = vals.len();
        let nv = vals[0].len();
        let data = vals.iter().flat_map(|v| v.iter().map(|m| C64::new(*m, 0.0))).collect();
        CTensor::new(vec![Axis::Echo, Axis::Kx], vec![ne, nv], data).unwrap()
    }

    #[test]
    fn two_point_exact() {
        let f = fit_decay(&series(&[&[1.0], &[0.5]]), &[0.0, 10.0], 0.0).unwrap();
        let want = 10.0 / std::f64::consts::LN_2;
        assert!((f.t_map.data()[0].re - want).abs() < 1e-9);
        assert!((f.s0_map.data()[0].re - 1.0).abs() < 1e-12);
        assert_eq!(f.r2_map.data()[0].re, 1.0);
    }

    #[test]
    fn constant_signal_hits_clamp() {
        let f = fit_decay(&series(&[&[2.0], &[2.0], &[2.0]]), &[5.0, 15.0, 25.0], 0.0).unwrap();
        assert_eq!(f.t_map.data()[0].re, T_MAX_MS);
        assert_eq!(f.r2_map.data()[0].re, 1.0);
    }

    #[test]
    fn errors_and_threshold() {
        assert!(fit_decay(&series(&[&[1.0]]), &[0.0], 0.0).is_err());
        assert!(fit_decay(&series(&[&[1.0], &[0.5]]), &[3.0, 3.0], 0.0).is_err());
        assert!(fit_decay(&series(&[&[1.0], &[0.5]]), &[3.0], 0.0).is_err());
        let f = fit_decay(&series(&[&[1.0, 0.01], &[0.5, 0.005]]), &[0.0, 10.0], 0.1).unwrap();
        assert_eq!(f.valid, vec![true, false]);
        assert_eq!(f.t_map.data()[1], C64::new(0.0, 0.0));
    }

    #[test]
    fn exact_exponential_recovered() {
        let te = [5.0f64, 15.0, 25.0];
        let ts = [30.0f64, 50.0, 80.0];
        let rows: Vec<Vec<f64>> = te.iter().map(|t| ts.iter().map(|tt| 3.0 * (-t / tt).exp()).collect()).collect();
        let f = fit_decay(&series(&[&rows[0], &rows[1], &rows[2]]), &te, 0.0).unwrap();
        for (got, want) in f.t_map.data().iter().zip(ts) {
            assert!((got.re - want).abs() < 1e-9 * want);
        }
    }

    #[test]
    fn rising_signal_clamps_high() {
        let f = fit_decay(&series(&[&[1.0], &[1.5]]), &[0.0, 10.0], 0.0).unwrap();
        assert_eq!(f.t_map.data()[0].re, T_MAX_MS);
    }

    proptest! {
        #[test]
        fn scale_invariant(a in 0.1f64..10.0, b in 0.1f64..10.0, c in 0.1f64..10.0, k in 0.01f64..100.0) {
            let te = [5.0, 15.0, 25.0];
            let f1 = fit_decay(&series(&[&[a], &[b], &[c]]), &te, 0.0).unwrap();
            let f2 = fit_decay(&series(&[&[k * a], &[k * b], &[k * c]]), &te, 0.0).unwrap();
            let (t1, t2) = (f1.t_map.data()[0].re, f2.t_map.data()[0].re);
            prop_assert!((t1 - t2).abs() <= 1e-9 * t1);
        }

        #[test]
        fn echo_permutation_is_bit_identical(a in 0.1f64..10.0, b in 0.1f64..10.0, c in 0.1f64..10.0) {
            let f1 = fit_decay(&series(&[&[a], &[b], &[c]]), &[5.0, 15.0, 25.0], 0.0).unwrap();
            let f2 = fit_decay(&series(&[&[c], &[a], &[b]]), &[25.0, 5.0, 15.0], 0.0).unwrap();
            prop_assert_eq!(f1, f2);
        }
    }
}
