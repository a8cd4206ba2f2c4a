//! Eigenvalue-based coil sensitivity estimation from ACS data, hybrid over
//! the fully sampled readout, plus the coil-combined calibration target.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{param_err, shape_err, Result};
use crate::fft::{fftc, ifftc};
use crate::layout::fourier_axes;
use crate::linalg::{adjoint_mul, hermitian_eigen, CMat};
use crate::tensor::{Axis, CTensor, C64};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EspiritParams {
    /// Calibration window edge along each calibration axis.
    pub window: usize,
    /// Singular values below `tau · σ_max` are discarded.
    pub tau: f64,
    /// Voxels whose leading eigenvalue is below `gamma` are cropped to zero.
    pub gamma: f64,
}

impl Default for EspiritParams {
    fn default() -> Self {
        EspiritParams { window: 6, tau: 0.01, gamma: 0.9 }
    }
}

impl EspiritParams {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 {
            return param_err("ESPIRiT window must be positive");
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return param_err(format!("tau must lie in (0, 1), got {}", self.tau));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return param_err(format!("gamma must lie in (0, 1], got {}", self.gamma));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityMaps {
    /// `[coil, readout, p0, p1]`, image domain along all three spatial axes.
    pub maps: CTensor,
    /// Leading eigenvalue `[readout, p0, p1]`, stored with zero imaginary part.
    pub eigval: CTensor,
    pub params: EspiritParams,
}

impl SensitivityMaps {
    pub fn spatial_axes(&self) -> [Axis; 3] {
        let a = self.maps.axes();
        [a[1], a[2], a[3]]
    }
}

/// Estimates maps from canonical ACS `[coil, readout, a0, a1]` (k-space,
/// readout fully sampled) onto an output grid of `out` along the two
/// calibration axes.
pub fn espirit_maps(acs: &CTensor, params: EspiritParams, out: [usize; 2]) -> Result<SensitivityMaps> {
    params.validate()?;
    if acs.shape().len() != 4 || acs.axes()[0] != Axis::Coil {
        return shape_err(format!("ESPIRiT expects [coil, readout, a0, a1], got {:?}", acs.axes()));
    }
    let axes = acs.axes().to_vec();
    let [nc, nx, a0, a1] = [acs.shape()[0], acs.shape()[1], acs.shape()[2], acs.shape()[3]];
    let win = [
        window_along(axes[2], a0, params.window),
        window_along(axes[3], a1, params.window),
    ];
    for k in 0..2 {
        let n = [a0, a1][k];
        if n < win[k] {
            return shape_err(format!(
                "ACS extent {n} along {} is smaller than the calibration window {}",
                axes[2 + k], win[k]
            ));
        }
        if out[k] < 2 * win[k] - 1 {
            return shape_err(format!("output extent {} along {} cannot hold the kernel", out[k], axes[2 + k]));
        }
    }
    for k in 0..2 {
        if axes[2 + k] == Axis::T && out[k] != 1 {
            return shape_err("maps along t must have extent 1 (broadcast over time)");
        }
    }
    let hybrid = ifftc(acs, &[axes[1]])?;
    let slices: Vec<(Vec<C64>, Vec<f64>)> = (0..nx)
        .into_par_iter()
        .map(|x| -> Result<(Vec<C64>, Vec<f64>)> {
            let slice = hybrid.select(axes[1], x)?;
            slice_maps(slice.data(), nc, [a0, a1], win, out, &params)
        })
        .collect::<Result<_>>()?;
    let npix = out[0] * out[1];
    let mut maps = vec![C64::new(0.0, 0.0); nc * nx * npix];
    let mut eig = vec![C64::new(0.0, 0.0); nx * npix];
    for (x, (m, e)) in slices.into_iter().enumerate() {
        for c in 0..nc {
            maps[(c * nx + x) * npix..(c * nx + x + 1) * npix].copy_from_slice(&m[c * npix..(c + 1) * npix]);
        }
        for (dst, v) in eig[x * npix..(x + 1) * npix].iter_mut().zip(e) {
            *dst = C64::new(v, 0.0);
        }
    }
    Ok(SensitivityMaps {
        maps: CTensor::new(axes.clone(), vec![nc, nx, out[0], out[1]], maps)?,
        eigval: CTensor::new(axes[1..].to_vec(), vec![nx, out[0], out[1]], eig)?,
        params,
    })
}

/// Time is not Fourier-encoded, so ky–t calibration uses a window of one
/// along `t` and every time point contributes extra calibration rows.
fn window_along(axis: Axis, extent: usize, k: usize) -> usize {
    if extent == 1 || axis == Axis::T {
        1
    } else {
        k
    }
}

/// One readout position: slice `[coil, a0, a1]` → maps `[coil, o0, o1]` and
/// eigenvalues `[o0, o1]`.
fn slice_maps(
    slice: &[C64],
    nc: usize,
    ext: [usize; 2],
    win: [usize; 2],
    out: [usize; 2],
    params: &EspiritParams,
) -> Result<(Vec<C64>, Vec<f64>)> {
    let [k0, k1] = win;
    let patch = k0 * k1;
    let cols = nc * patch;
    let rows = (ext[0] - k0 + 1) * (ext[1] - k1 + 1);
    let mut a = CMat::zeros(rows, cols);
    let mut r = 0;
    for i in 0..=ext[0] - k0 {
        for j in 0..=ext[1] - k1 {
            let row = &mut a.data[r * cols..(r + 1) * cols];
            for c in 0..nc {
                for p in 0..k0 {
                    for q in 0..k1 {
                        row[(c * k0 + p) * k1 + q] = slice[(c * ext[0] + i + p) * ext[1] + j + q];
                    }
                }
            }
            r += 1;
        }
    }
    let (vals, vecs) = hermitian_eigen(&adjoint_mul(&a, &a));
    let npix = out[0] * out[1];
    let smax = vals[0].max(0.0).sqrt();
    if !(smax > 0.0) {
        return Ok((vec![C64::new(0.0, 0.0); nc * npix], vec![0.0; npix]));
    }
    let keep = vals.iter().take_while(|&&v| v.max(0.0).sqrt() >= params.tau * smax).count();

    // Patches are rows of A, so they live in span(conj V): projector conj(V)·Vᵀ
    let mut proj = CMat::zeros(cols, cols);
    for m in 0..keep {
        for u in 0..cols {
            let vu = vecs.at(u, m).conj();
            for w in 0..cols {
                proj.data[u * cols + w] += vu * vecs.at(w, m);
            }
        }
    }

    // Image-domain operator: G_cc'(r) = √N · fftc(K_cc' centred on the grid)
    let d0 = 2 * k0 - 1;
    let d1 = 2 * k1 - 1;
    let mut grids = vec![C64::new(0.0, 0.0); nc * nc * npix];
    let inv = 1.0 / patch as f64;
    for c in 0..nc {
        for c2 in 0..nc {
            let g = &mut grids[(c * nc + c2) * npix..(c * nc + c2 + 1) * npix];
            for e0 in 0..d0 {
                for e1 in 0..d1 {
                    let (s0, s1) = (e0 as i64 - (k0 as i64 - 1), e1 as i64 - (k1 as i64 - 1));
                    let mut acc = C64::new(0.0, 0.0);
                    for p0 in 0..k0 as i64 {
                        let q0 = p0 + s0;
                        if q0 < 0 || q0 >= k0 as i64 {
                            continue;
                        }
                        for p1 in 0..k1 as i64 {
                            let q1 = p1 + s1;
                            if q1 < 0 || q1 >= k1 as i64 {
                                continue;
                            }
                            let u = (c * k0 + p0 as usize) * k1 + p1 as usize;
                            let w = (c2 * k0 + q0 as usize) * k1 + q1 as usize;
                            acc += proj.data[u * cols + w];
                        }
                    }
                    let i = (out[0] / 2) as i64 + s0;
                    let j = (out[1] / 2) as i64 + s1;
                    g[i as usize * out[1] + j as usize] = acc * inv;
                }
            }
        }
    }
    let spatial = [Axis::Ky, Axis::Kz];
    let op = CTensor::new(vec![Axis::Coil, Axis::Maps, Axis::Ky, Axis::Kz], vec![nc, nc, out[0], out[1]], grids)?;
    let op = fftc(&op, &spatial)?.scale(C64::new((npix as f64).sqrt(), 0.0));
    let opd = op.data();

    let mut maps = vec![C64::new(0.0, 0.0); nc * npix];
    let mut eig = vec![0.0; npix];
    let mut h = CMat::zeros(nc, nc);
    for pix in 0..npix {
        for c in 0..nc {
            for c2 in 0..nc {
                h.data[c * nc + c2] = opd[(c * nc + c2) * npix + pix];
            }
        }
        // enforce exact Hermitian symmetry before the eigensolve
        for c in 0..nc {
            for c2 in c..nc {
                let v = 0.5 * (h.at(c, c2) + h.at(c2, c).conj());
                h.data[c * nc + c2] = v;
                h.data[c2 * nc + c] = v.conj();
            }
        }
        let (vals, vecs) = hermitian_eigen(&h);
        eig[pix] = vals[0];
        if vals[0] < params.gamma {
            continue;
        }
        let first = vecs.at(0, 0);
        let gauge = if first.norm() > 0.0 { first.conj() / first.norm() } else { C64::new(1.0, 0.0) };
        let norm = (0..nc).map(|c| vecs.at(c, 0).norm_sqr()).sum::<f64>().sqrt();
        for c in 0..nc {
            let mut v = vecs.at(c, 0) * gauge / norm;
            if c == 0 {
                v = C64::new(v.re.max(0.0), 0.0);
            }
            maps[c * npix + pix] = v;
        }
    }
    Ok((maps, eig))
}

/// Matched-filter combination `Σ_c conj(C_c)·x_c`. Maps carry the same axes
/// as the images, coil first; map axes of extent 1 broadcast.
pub fn coil_combine(images: &CTensor, maps: &CTensor) -> Result<CTensor> {
    let compatible = images.axes() == maps.axes()
        && images.shape()[0] == maps.shape()[0]
        && images.shape().iter().zip(maps.shape()).skip(1).all(|(&i, &m)| m == i || m == 1);
    if !compatible {
        return shape_err(format!(
            "coil images {:?}{:?} do not match maps {:?}{:?}",
            images.axes(),
            images.shape(),
            maps.axes(),
            maps.shape()
        ));
    }
    if images.axes().first() != Some(&Axis::Coil) {
        return shape_err("coil axis must come first for coil_combine");
    }
    let shape = images.shape();
    let nc = shape[0];
    let n = images.len() / nc.max(1);
    // per-voxel offset into one coil's map, with broadcast axes pinned to 0
    let mstrides = maps.strides();
    let mut map_offset = vec![0usize; n];
    let dims = &shape[1..];
    let mut idx = vec![0usize; dims.len()];
    for slot in map_offset.iter_mut() {
        *slot = idx
            .iter()
            .enumerate()
            .map(|(d, &i)| if maps.shape()[d + 1] == 1 { 0 } else { i * mstrides[d + 1] })
            .sum();
        for d in (0..dims.len()).rev() {
            idx[d] += 1;
            if idx[d] < dims[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    let mut out = vec![C64::new(0.0, 0.0); n];
    for c in 0..nc {
        let x = &images.data()[c * n..(c + 1) * n];
        let m = &maps.data()[c * mstrides[0]..];
        for ((o, xv), &off) in out.iter_mut().zip(x).zip(&map_offset) {
            *o += m[off].conj() * xv;
        }
    }
    CTensor::new(images.axes()[1..].to_vec(), shape[1..].to_vec(), out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "grid")]
pub enum ComboMode {
    /// Maps estimated on the ACS grid itself.
    #[default]
    LowRes,
    /// Maps on the full grid; the ACS is zero-embedded at `start`.
    Full { start: [usize; 2] },
}

/// Coil-combined k-space calibration target over the ACS box:
/// `fftc(coil_combine(ifftc(acs), maps))`.
pub fn make_combo_target(acs: &CTensor, maps: &SensitivityMaps, mode: ComboMode) -> Result<CTensor> {
    let axes = acs.axes().to_vec();
    if axes != maps.maps.axes() {
        return shape_err(format!("ACS axes {:?} vs maps axes {:?}", axes, maps.maps.axes()));
    }
    let spatial = fourier_axes(&axes);
    match mode {
        ComboMode::LowRes => {
            let img = ifftc(acs, &spatial)?;
            fftc(&coil_combine(&img, &maps.maps)?, &spatial)
        }
        ComboMode::Full { start } => {
            let mut full = maps.maps.shape().to_vec();
            let mut starts = [0, 0, start[0], start[1]];
            for d in 2..4 {
                if full[d] == 1 {
                    full[d] = acs.shape()[d];
                    starts[d] = 0;
                }
            }
            let emb = acs.embed(&starts, &full)?;
            let img = ifftc(&emb, &spatial)?;
            let combo = fftc(&coil_combine(&img, &maps.maps)?, &spatial)?;
            combo.crop(&starts[1..], &acs.shape()[1..])
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::make_compact_coils;
    use rand::{Rng, SeedableRng};

    fn random(axes: Vec<Axis>, shape: Vec<usize>, seed: u64) -> CTensor {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        CTensor::new(axes, shape, (0..n).map(|_| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)).collect())
            .unwrap()
    }

    #[test]
    fn parameter_errors() {
        let acs = random(vec![Axis::Coil, Axis::Kx, Axis::Ky, Axis::Kz], vec![2, 2, 8, 8], 1);
        for p in [
            EspiritParams { tau: 0.0, ..Default::default() },
            EspiritParams { tau: 1.0, ..Default::default() },
            EspiritParams { gamma: 1.5, ..Default::default() },
            EspiritParams { gamma: 0.0, ..Default::default() },
        ] {
            assert!(espirit_maps(&acs, p, [16, 16]).is_err());
        }
        let small = random(vec![Axis::Coil, Axis::Kx, Axis::Ky, Axis::Kz], vec![2, 2, 4, 8], 1);
        let err = espirit_maps(&small, EspiritParams::default(), [16, 16]).unwrap_err();
        assert!(err.to_string().contains("ky"), "{err}");
    }

    #[test]
    fn single_coil_constant_map() {
        // object k-space only; one coil with C ≡ 1
        let obj = random(vec![Axis::Coil, Axis::Kx, Axis::Ky, Axis::Kz], vec![1, 2, 12, 12], 3);
        let m = espirit_maps(&obj, EspiritParams::default(), [16, 16]).unwrap();
        for (v, e) in m.maps.data().iter().zip(m.eigval.data()) {
            assert!((e.re - 1.0).abs() < 1e-10);
            assert!((v - C64::new(1.0, 0.0)).norm() < 1e-10);
        }
    }

    #[test]
    fn compact_coils_are_recovered() {
        let ext = [4, 24, 24];
        let nc = 6;
        let coils = make_compact_coils(ext, nc, 3, 7).unwrap();
        let obj = random(vec![Axis::Kx, Axis::Ky, Axis::Kz], ext.to_vec(), 9);
        let n: usize = ext.iter().product();
        let mut img = coils.clone();
        for c in 0..nc {
            for i in 0..n {
                img.data_mut()[c * n + i] *= obj.data()[i];
            }
        }
        let k = fftc(&img, &[Axis::Kx, Axis::Ky, Axis::Kz]).unwrap();
        let acs = k.crop_center(&[(Axis::Ky, 20), (Axis::Kz, 20)]).unwrap();
        let m = espirit_maps(&acs, EspiritParams::default(), [24, 24]).unwrap();
        let mut worst: f64 = 1.0;
        for i in 0..n {
            let truth: Vec<C64> = (0..nc).map(|c| coils.data()[c * n + i]).collect();
            let est: Vec<C64> = (0..nc).map(|c| m.maps.data()[c * n + i]).collect();
            let tn = truth.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
            let inner: C64 = est.iter().zip(&truth).map(|(e, t)| e.conj() * t).sum();
            worst = worst.min(inner.norm() / tn);
            let s: f64 = est.iter().map(|v| v.norm_sqr()).sum();
            assert!((s - 1.0).abs() < 1e-10 || s == 0.0);
            assert!(est[0].im == 0.0 && est[0].re >= 0.0);
        }
        assert!(worst >= 0.999, "{worst}");
    }

    #[test]
    fn combine_projection_identity() {
        let maps = random(vec![Axis::Coil, Axis::Ky, Axis::Kz], vec![4, 6, 6], 2);
        let mut maps = maps;
        let n = 36;
        for i in 0..n {
            let s: f64 = (0..4).map(|c| maps.data()[c * n + i].norm_sqr()).sum::<f64>().sqrt();
            for c in 0..4 {
                maps.data_mut()[c * n + i] /= s;
            }
        }
        let m = random(vec![Axis::Ky, Axis::Kz], vec![6, 6], 4);
        let mut img = maps.clone();
        for c in 0..4 {
            for i in 0..n {
                img.data_mut()[c * n + i] *= m.data()[i];
            }
        }
        let out = coil_combine(&img, &maps).unwrap();
        for (a, b) in out.data().iter().zip(m.data()) {
            assert!((a - b).norm() < 1e-10);
        }
        let zero = CTensor::zeros(maps.axes().to_vec(), maps.shape().to_vec()).unwrap();
        assert!(coil_combine(&img, &zero).unwrap().data().iter().all(|v| v.norm() == 0.0));
        assert!(coil_combine(&img.crop(&[0, 0, 0], &[4, 5, 6]).unwrap(), &maps).is_err());
        // singleton map axes broadcast
        let flat = maps.crop(&[0, 0, 0], &[4, 6, 1]).unwrap();
        let out = coil_combine(&img, &flat).unwrap();
        for i in 0..6 {
            for j in 0..6 {
                let want: C64 = (0..4).map(|c| flat.get(&[c, i, 0]).conj() * img.get(&[c, i, j])).sum();
                assert!((out.get(&[i, j]) - want).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn combination_is_kspace_convolution() {
        let (nc, n0, n1) = (3, 16, 16);
        let sp = [Axis::Ky, Axis::Kz];
        let maps = random(vec![Axis::Coil, Axis::Ky, Axis::Kz], vec![nc, n0, n1], 5);
        let y = random(vec![Axis::Coil, Axis::Ky, Axis::Kz], vec![nc, n0, n1], 6);
        let lhs = fftc(&coil_combine(&ifftc(&y, &sp).unwrap(), &maps).unwrap(), &sp).unwrap();
        let h = fftc(&maps.map(|v| v.conj()), &sp).unwrap();
        let scale = 1.0 / ((n0 * n1) as f64).sqrt();
        for i in 0..n0 {
            for j in 0..n1 {
                let mut acc = C64::new(0.0, 0.0);
                for c in 0..nc {
                    for p in 0..n0 {
                        for q in 0..n1 {
                            // centred indices: (i − c0) = (p − c0) + (i − p)
                            let ii = (i + n0 / 2 + n0 - p) % n0;
                            let jj = (j + n1 / 2 + n1 - q) % n1;
                            acc += y.get(&[c, p, q]) * h.get(&[c, ii, jj]);
                        }
                    }
                }
                assert!((acc * scale - lhs.get(&[i, j])).norm() < 1e-8);
            }
        }
    }

    #[test]
    fn combo_target_linear_and_shaped() {
        let acs = random(vec![Axis::Coil, Axis::Kx, Axis::Ky, Axis::Kz], vec![3, 4, 12, 12], 8);
        let maps = espirit_maps(&acs, EspiritParams::default(), [12, 12]).unwrap();
        let t = make_combo_target(&acs, &maps, ComboMode::LowRes).unwrap();
        assert_eq!(t.shape(), &[4, 12, 12]);
        let s = C64::new(2.0, -1.0);
        let t2 = make_combo_target(&acs.scale(s), &maps, ComboMode::LowRes).unwrap();
        for (a, b) in t2.data().iter().zip(t.data()) {
            assert!((a - s * b).norm() < 1e-12);
        }
        let full = espirit_maps(&acs, EspiritParams::default(), [20, 20]).unwrap();
        let tf = make_combo_target(&acs, &full, ComboMode::Full { start: [4, 4] }).unwrap();
        assert_eq!(tf.shape(), &[4, 12, 12]);
    }

    #[test]
    fn deterministic_rerun() {
        let acs = random(vec![Axis::Coil, Axis::Kx, Axis::Ky, Axis::Kz], vec![3, 2, 10, 10], 12);
        let a = espirit_maps(&acs, EspiritParams::default(), [12, 12]).unwrap();
        let b = espirit_maps(&acs, EspiritParams::default(), [12, 12]).unwrap();
        assert_eq!(a, b);
    }
}
