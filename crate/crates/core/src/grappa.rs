//! Tikhonov-regularized GRAPPA on arbitrary sampling lattices.
//!
//! Sources are the acquired lattice neighbours of a lattice point
//! (`blocks[0] × blocks[1]` in lattice coordinates, times `readout_taps`
//! readout samples, for every coil); targets are the remaining `R − 1` cell
//! offsets of that point for every coil.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{param_err, Error, Result};
use crate::fft::{fftc, ifftc};
use crate::layout::{dims, from_canonical, to_canonical};
use crate::linalg::{adjoint_mul, mul, solve_regularized, CMat};
use crate::sampling::{extract_acs, Lattice, SamplingMask};
use crate::tensor::{Axis, CTensor, C64};

pub const DEFAULT_LAMBDA: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GrappaGeometry {
    /// Acquired neighbour blocks along the lattice `u` and `v` directions.
    pub blocks: [usize; 2],
    pub readout_taps: usize,
}

impl Default for GrappaGeometry {
    fn default() -> Self {
        GrappaGeometry { blocks: [4, 4], readout_taps: 5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GrappaMode {
    /// Readout inverse-transformed, one kernel per readout position.
    #[default]
    Slice2d,
    /// One kernel with readout taps over the whole volume.
    Volume3d,
}

#[derive(Debug, Clone)]
pub struct GrappaKernel {
    pub lattice: Lattice,
    pub geometry: GrappaGeometry,
    pub coils: usize,
    pub sources: Vec<[i64; 2]>,
    pub readout: Vec<i64>,
    /// Row `(k − 1)·coils + c` predicts coil `c` at cell offset `k`.
    pub weights: CMat,
}

impl GrappaKernel {
    pub fn unknowns(&self) -> usize {
        self.coils * self.sources.len() * self.readout.len()
    }

    pub fn targets(&self) -> usize {
        self.lattice.size() - 1
    }
}

fn centered_range(n: usize) -> Vec<i64> {
    let start = -((n as i64 - 1) / 2);
    (0..n as i64).map(|i| start + i).collect()
}

fn source_offsets(geometry: &GrappaGeometry) -> (Vec<[i64; 2]>, Vec<i64>) {
    let a = centered_range(geometry.blocks[0]);
    let b = centered_range(geometry.blocks[1]);
    let sources = a.iter().flat_map(|&da| b.iter().map(move |&db| [da, db])).collect();
    (sources, centered_range(geometry.readout_taps))
}

/// Calibrates on a fully sampled canonical ACS block `[coil, readout, a0, a1]`.
/// Every ACS position whose full source/target footprint fits is one fitting
/// row. The ridge weight is `lambda · mean(diag(AᴴA))`.
pub fn grappa_calibrate(acs: &CTensor, lattice: &Lattice, geometry: GrappaGeometry, lambda: f64) -> Result<GrappaKernel> {
    if geometry.blocks.contains(&0) || geometry.readout_taps == 0 {
        return param_err("GRAPPA kernel extents must be positive");
    }
    if !(lambda >= 0.0) {
        return param_err("Tikhonov lambda must be non-negative");
    }
    let [nc, nx, n0, n1] = dims(acs);
    let lattice = Lattice { origin: [0, 0], ..lattice.clone() };
    let (sources, readout) = source_offsets(&geometry);
    let src_pos: Vec<[i64; 2]> = sources
        .iter()
        .map(|s| {
            let p = lattice.point(s[0], s[1]);
            [p[0], p[1]]
        })
        .collect();
    let targets = &lattice.cell[1..];
    let unknowns = nc * src_pos.len() * readout.len();

    let fits = |p: [i64; 2]| p[0] >= 0 && p[1] >= 0 && p[0] < n0 as i64 && p[1] < n1 as i64;
    let (rlo, rhi) = (*readout.first().unwrap(), *readout.last().unwrap());
    let mut windows = Vec::new();
    for i in 0..n0 as i64 {
        for j in 0..n1 as i64 {
            let ok = src_pos.iter().all(|s| fits([i + s[0], j + s[1]]))
                && targets.iter().all(|t| fits([i + t[0], j + t[1]]));
            if ok {
                for x in (-rlo)..(nx as i64 - rhi) {
                    windows.push((i, j, x));
                }
            }
        }
    }
    let required = unknowns.max(64);
    if windows.len() < required {
        return Err(Error::InsufficientAcs { required, available: windows.len() });
    }

    let data = acs.data();
    let at = |c: usize, x: i64, i: i64, j: i64| data[((c * nx + x as usize) * n0 + i as usize) * n1 + j as usize];
    let mut a = CMat::zeros(windows.len(), unknowns);
    let mut b = CMat::zeros(windows.len(), targets.len() * nc);
    for (w, &(i, j, x)) in windows.iter().enumerate() {
        let row = &mut a.data[w * unknowns..(w + 1) * unknowns];
        let mut col = 0;
        for c in 0..nc {
            for s in &src_pos {
                for &dx in &readout {
                    row[col] = at(c, x + dx, i + s[0], j + s[1]);
                    col += 1;
                }
            }
        }
        for (k, t) in targets.iter().enumerate() {
            for c in 0..nc {
                b.data[w * b.cols + k * nc + c] = at(c, x, i + t[0], j + t[1]);
            }
        }
    }
    let gram = adjoint_mul(&a, &a);
    let mean_diag = (0..unknowns).map(|d| gram.at(d, d).re).sum::<f64>() / unknowns as f64;
    let rhs = adjoint_mul(&a, &b);
    let w = solve_regularized(&gram, &rhs, lambda * mean_diag)?;
    // stored transposed: one row per (target, coil)
    let mut weights = CMat::zeros(w.cols, w.rows);
    for r in 0..w.rows {
        for c in 0..w.cols {
            weights.data[c * w.rows + r] = w.at(r, c);
        }
    }
    if weights.data.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return Err(Error::Numerical("non-finite GRAPPA weights".into()));
    }
    Ok(GrappaKernel { lattice, geometry, coils: nc, sources, readout, weights })
}

/// Fills unacquired positions of canonical masked k-space. Acquired entries
/// are copied through unchanged; never-acquired elliptical corners stay zero.
/// Sources beyond the grid are zero.
pub fn grappa_apply(kspace: &CTensor, mask: &SamplingMask, kernel: &GrappaKernel) -> Result<CTensor> {
    let [nc, nx, n0, n1] = dims(kspace);
    let lattice = mask.lattice();
    if nc != kernel.coils
        || lattice.u != kernel.lattice.u
        || lattice.v != kernel.lattice.v
        || lattice.cell != kernel.lattice.cell
    {
        return param_err("sampling pattern or coil count does not match the GRAPPA kernel");
    }
    if mask.extents != [n0, n1] {
        return param_err(format!("mask extents {:?} vs data {:?}", mask.extents, [n0, n1]));
    }
    let data = kspace.data();
    let unknowns = kernel.unknowns();
    let (lo, hi) = lattice.coord_bounds([n0, n1]);
    let wt = {
        // transpose to (unknowns × outputs) for S · Wᵀ
        let w = &kernel.weights;
        let mut t = CMat::zeros(w.cols, w.rows);
        for r in 0..w.rows {
            for c in 0..w.cols {
                t.data[c * w.rows + r] = w.at(r, c);
            }
        }
        t
    };
    let a_values: Vec<i64> = (lo[0]..=hi[0]).collect();
    let writes: Vec<Vec<(usize, C64)>> = a_values
        .par_iter()
        .map(|&a| {
            let mut out = Vec::new();
            let mut s = CMat::zeros(nx, unknowns);
            for b in lo[1]..=hi[1] {
                let base = lattice.point(a, b);
                let wanted: Vec<(usize, [usize; 2])> = lattice.cell[1..]
                    .iter()
                    .enumerate()
                    .filter_map(|(k, d)| {
                        let p = [base[0] + d[0], base[1] + d[1]];
                        if p[0] < 0 || p[1] < 0 || p[0] >= n0 as i64 || p[1] >= n1 as i64 {
                            return None;
                        }
                        let (i, j) = (p[0] as usize, p[1] as usize);
                        (!mask.is_sampled(i, j) && mask.acquirable(i, j)).then_some((k, [i, j]))
                    })
                    .collect();
                if wanted.is_empty() {
                    continue;
                }
                for x in 0..nx as i64 {
                    let row = &mut s.data[x as usize * unknowns..(x as usize + 1) * unknowns];
                    let mut col = 0;
                    for c in 0..nc {
                        for src in &kernel.sources {
                            let p = lattice.point(a + src[0], b + src[1]);
                            let inside = p[0] >= 0 && p[1] >= 0 && p[0] < n0 as i64 && p[1] < n1 as i64;
                            for &dx in &kernel.readout {
                                let xx = x + dx;
                                row[col] = if inside && xx >= 0 && xx < nx as i64 {
                                    data[((c * nx + xx as usize) * n0 + p[0] as usize) * n1 + p[1] as usize]
                                } else {
                                    C64::new(0.0, 0.0)
                                };
                                col += 1;
                            }
                        }
                    }
                }
                let pred = mul(&s, &wt);
                for &(k, [i, j]) in &wanted {
                    for x in 0..nx {
                        for c in 0..nc {
                            out.push((((c * nx + x) * n0 + i) * n1 + j, pred.at(x, k * nc + c)));
                        }
                    }
                }
            }
            out
        })
        .collect();
    let mut result = kspace.clone();
    let dst = result.data_mut();
    for batch in writes {
        for (idx, v) in batch {
            dst[idx] = v;
        }
    }
    Ok(result)
}

/// Full GRAPPA reconstruction of masked k-space in any axis order containing
/// `coil`, one readout axis and the mask's pattern axes. Acquired samples are
/// returned bit-identical.
pub fn grappa_reconstruct(
    kspace: &CTensor,
    mask: &SamplingMask,
    geometry: GrappaGeometry,
    lambda: f64,
    mode: GrappaMode,
) -> Result<CTensor> {
    let (canon, original) = to_canonical(kspace, mask)?;
    let masked = crate::sampling::apply_mask(&canon, mask)?;
    let acs = extract_acs(&masked, mask)?;
    let lattice = mask.lattice();
    if lattice.size() == 1 {
        return from_canonical(&masked, &original);
    }
    let ro = canon.axes()[1];
    let out = match mode {
        GrappaMode::Volume3d => {
            let kernel = grappa_calibrate(&acs, &lattice, geometry, lambda)?;
            grappa_apply(&masked, mask, &kernel)?
        }
        GrappaMode::Slice2d => {
            let geometry = GrappaGeometry { readout_taps: 1, ..geometry };
            let hybrid = ifftc(&masked, &[ro])?;
            let hybrid_acs = ifftc(&acs, &[ro])?;
            let nx = canon.shape()[1];
            let slices: Vec<CTensor> = (0..nx)
                .into_par_iter()
                .map(|x| -> Result<CTensor> {
                    let slice = hybrid.select(ro, x)?.unsqueeze(ro, 1)?;
                    let acs_slice = hybrid_acs.select(ro, x)?.unsqueeze(ro, 1)?;
                    let kernel = grappa_calibrate(&acs_slice, &lattice, geometry, lambda)?;
                    grappa_apply(&slice, mask, &kernel)?.select(ro, 0)
                })
                .collect::<Result<_>>()?;
            let filled = CTensor::stack(&slices, ro, 1)?;
            let mut k = fftc(&filled, &[ro])?;
            restore_acquired(&mut k, &masked, mask);
            k
        }
    };
    from_canonical(&out, &original)
}

/// Copies acquired entries of canonical `source` into `target` bit-exactly
/// and zeroes never-acquired corners.
pub fn restore_acquired(target: &mut CTensor, source: &CTensor, mask: &SamplingMask) {
    let [_, _, n0, n1] = dims(source);
    let src = source.data();
    for (flat, v) in target.data_mut().iter_mut().enumerate() {
        let j = flat % n1;
        let i = (flat / n1) % n0;
        if mask.is_sampled(i, j) {
            *v = src[flat];
        } else if !mask.acquirable(i, j) {
            *v = C64::new(0.0, 0.0);
        }
    }
}

/// kx–ky–t GRAPPA: identical to the volume variant with `t` as the third
/// axis. `kspace` must hold `coil`, `kx`, `ky` and `t`.
pub fn grappa_kyt(kspace: &CTensor, mask: &SamplingMask, geometry: GrappaGeometry, lambda: f64) -> Result<CTensor> {
    if mask.axes != [Axis::Ky, Axis::T] {
        return param_err("grappa_kyt needs a ky-t mask");
    }
    grappa_reconstruct(kspace, mask, geometry, lambda, GrappaMode::Volume3d)
}
