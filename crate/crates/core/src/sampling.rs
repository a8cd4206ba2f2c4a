//! Undersampling patterns over two phase-encode axes: uniform and CAIPI
//! lattices, elliptical CAIPI, and ky–t CAIPI, plus ACS bookkeeping.
//!
//! Every pattern is a 2D integer lattice `origin + a·u + b·v`. A fundamental
//! cell of `R` offsets tiles the plane, so each grid position belongs to
//! exactly one lattice point. Reconstruction code works in `(a, b)` lattice
//! coordinates, where a sheared CAIPI lattice looks rectangular.

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{param_err, shape_err, Error, Result};
use crate::tensor::{Axis, CTensor, C64};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AcsBox {
    pub start: [usize; 2],
    pub len: [usize; 2],
}

impl AcsBox {
    /// Box of extents `len` centered on DC (`n/2`) of a grid of `extents`.
    pub fn centered(extents: [usize; 2], len: [usize; 2]) -> Result<Self> {
        if len[0] > extents[0] || len[1] > extents[1] || len.contains(&0) {
            return param_err(format!("ACS {len:?} does not fit grid {extents:?}"));
        }
        Ok(AcsBox { start: [extents[0] / 2 - len[0] / 2, extents[1] / 2 - len[1] / 2], len })
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        i >= self.start[0] && i < self.start[0] + self.len[0] && j >= self.start[1] && j < self.start[1] + self.len[1]
    }

    fn check(&self, extents: [usize; 2]) -> Result<()> {
        if self.len.contains(&0) || self.start[0] + self.len[0] > extents[0] || self.start[1] + self.len[1] > extents[1] {
            return param_err(format!("ACS box {self:?} outside grid {extents:?}"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatternKind {
    Uniform,
    Elliptical,
    Kyt,
}

/// Pattern descriptor. For uniform/elliptical patterns position `(i, j)` is on
/// the lattice when `(i − o₀) mod R1 = 0` and `(j − o₁ − Δ·((i − o₀) div R1)) mod R2 = 0`.
/// For ky–t patterns (axes ky, t) the lattice is `(ky − o₀ − Δ·t) mod R = 0`
/// and `r1` is 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pattern {
    pub kind: PatternKind,
    pub r1: usize,
    pub r2: usize,
    pub shift: usize,
    #[serde(default)]
    pub offset: [usize; 2],
}

impl Pattern {
    pub fn elliptical(&self) -> bool {
        self.kind == PatternKind::Elliptical
    }

    pub fn acceleration(&self) -> usize {
        self.r1 * self.r2
    }

    pub fn lattice(&self) -> Lattice {
        let o = [self.offset[0] as i64, self.offset[1] as i64];
        match self.kind {
            PatternKind::Uniform | PatternKind::Elliptical => {
                let (r1, r2) = (self.r1 as i64, self.r2 as i64);
                let cell = (0..r1).flat_map(|d1| (0..r2).map(move |d2| [d1, d2])).collect();
                Lattice { u: [r1, self.shift as i64], v: [0, r2], origin: o, cell }
            }
            PatternKind::Kyt => {
                let r = self.r2 as i64;
                let cell = (0..r).map(|d| [d, 0]).collect();
                Lattice { u: [self.shift as i64, 1], v: [r, 0], origin: o, cell }
            }
        }
    }
}

/// Integer lattice `origin + a·u + b·v` with a fundamental cell of offsets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lattice {
    pub u: [i64; 2],
    pub v: [i64; 2],
    pub origin: [i64; 2],
    /// Offsets relative to a lattice point; `cell[0]` is `[0, 0]`.
    pub cell: Vec<[i64; 2]>,
}

impl Lattice {
    pub fn size(&self) -> usize {
        self.cell.len()
    }

    pub fn point(&self, a: i64, b: i64) -> [i64; 2] {
        [
            self.origin[0] + a * self.u[0] + b * self.v[0],
            self.origin[1] + a * self.u[1] + b * self.v[1],
        ]
    }

    /// Lattice coordinates and cell index of grid position `p`.
    pub fn locate(&self, p: [i64; 2]) -> (i64, i64, usize) {
        let det = self.u[0] * self.v[1] - self.u[1] * self.v[0];
        for (k, d) in self.cell.iter().enumerate() {
            let r0 = p[0] - self.origin[0] - d[0];
            let r1 = p[1] - self.origin[1] - d[1];
            let an = r0 * self.v[1] - r1 * self.v[0];
            let bn = self.u[0] * r1 - self.u[1] * r0;
            if an % det == 0 && bn % det == 0 {
                return (an / det, bn / det, k);
            }
        }
        unreachable!("lattice cell does not tile the plane")
    }

    /// True when rectangles in lattice coordinates are axis-aligned boxes on
    /// the grid.
    pub fn is_rectangular(&self) -> bool {
        (self.u[1] == 0 && self.v[0] == 0) || (self.u[0] == 0 && self.v[1] == 0)
    }

    /// Inclusive bounds of the lattice coordinates of every grid position.
    pub fn coord_bounds(&self, extents: [usize; 2]) -> ([i64; 2], [i64; 2]) {
        let mut lo = [i64::MAX; 2];
        let mut hi = [i64::MIN; 2];
        for i in 0..extents[0] as i64 {
            for j in 0..extents[1] as i64 {
                let (a, b, _) = self.locate([i, j]);
                lo = [lo[0].min(a), lo[1].min(b)];
                hi = [hi[0].max(a), hi[1].max(b)];
            }
        }
        (lo, hi)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplingMask {
    pub axes: [Axis; 2],
    pub extents: [usize; 2],
    pub pattern: Pattern,
    pub acs: Option<AcsBox>,
    sampled: Vec<bool>,
}

fn check_factors(r1: usize, r2: usize, shift: usize) -> Result<()> {
    if r1 == 0 || r2 == 0 {
        return param_err(format!("acceleration factors must be >= 1, got {r1}x{r2}"));
    }
    if shift >= r2 {
        return param_err(format!("CAIPI shift {shift} must be smaller than R2 = {r2}"));
    }
    Ok(())
}

/// Interior of the centered ellipse with semi-axes `(n − 1)/2`.
pub fn inside_ellipse(extents: [usize; 2], i: usize, j: usize) -> bool {
    let c0 = (extents[0] as f64 - 1.0) / 2.0;
    let c1 = (extents[1] as f64 - 1.0) / 2.0;
    let t0 = if c0 > 0.0 { (i as f64 - c0) / c0 } else { 0.0 };
    let t1 = if c1 > 0.0 { (j as f64 - c1) / c1 } else { 0.0 };
    t0 * t0 + t1 * t1 <= 1.0
}

pub fn make_uniform_mask(extents: [usize; 2], r1: usize, r2: usize, shift: usize, acs: Option<AcsBox>) -> Result<SamplingMask> {
    check_factors(r1, r2, shift)?;
    let pattern = Pattern { kind: PatternKind::Uniform, r1, r2, shift, offset: [0, 0] };
    SamplingMask::from_pattern([Axis::Ky, Axis::Kz], extents, pattern, acs)
}

pub fn make_elliptical_mask(extents: [usize; 2], r1: usize, r2: usize, shift: usize, acs: Option<AcsBox>) -> Result<SamplingMask> {
    check_factors(r1, r2, shift)?;
    let pattern = Pattern { kind: PatternKind::Elliptical, r1, r2, shift, offset: [0, 0] };
    SamplingMask::from_pattern([Axis::Ky, Axis::Kz], extents, pattern, acs)
}

/// ky–t CAIPI: at time `t` the lines `{ky : (ky − shift·t) mod R = 0}` are
/// acquired. Axes are `(ky, t)`.
pub fn make_kyt_mask(ny: usize, nt: usize, r: usize, shift: usize, acs: Option<AcsBox>) -> Result<SamplingMask> {
    if r == 0 {
        return param_err("ky-t acceleration must be >= 1");
    }
    let pattern = Pattern { kind: PatternKind::Kyt, r1: 1, r2: r, shift: shift % r, offset: [0, 0] };
    SamplingMask::from_pattern([Axis::Ky, Axis::T], [ny, nt], pattern, acs)
}

impl SamplingMask {
    pub fn from_pattern(axes: [Axis; 2], extents: [usize; 2], pattern: Pattern, acs: Option<AcsBox>) -> Result<Self> {
        if extents.contains(&0) {
            return param_err(format!("mask extents must be positive: {extents:?}"));
        }
        if let Some(b) = &acs {
            b.check(extents)?;
        }
        let lattice = pattern.lattice();
        let mut sampled = vec![false; extents[0] * extents[1]];
        for i in 0..extents[0] {
            for j in 0..extents[1] {
                let on_lattice = lattice.locate([i as i64, j as i64]).2 == 0;
                let acquirable = !pattern.elliptical() || inside_ellipse(extents, i, j);
                let in_acs = acs.is_some_and(|b| b.contains(i, j));
                sampled[i * extents[1] + j] = (on_lattice && acquirable) || in_acs;
            }
        }
        Ok(SamplingMask { axes, extents, pattern, acs, sampled })
    }

    pub fn is_sampled(&self, i: usize, j: usize) -> bool {
        self.sampled[i * self.extents[1] + j]
    }

    pub fn grid(&self) -> &[bool] {
        &self.sampled
    }

    /// False only at never-acquired elliptical corners.
    pub fn acquirable(&self, i: usize, j: usize) -> bool {
        !self.pattern.elliptical() || inside_ellipse(self.extents, i, j)
    }

    pub fn lattice(&self) -> Lattice {
        self.pattern.lattice()
    }

    pub fn sampled_count(&self) -> usize {
        self.sampled.iter().filter(|&&s| s).count()
    }

    /// Sampled positions that are only there because of the ACS.
    pub fn acs_extra_count(&self) -> usize {
        let lattice = self.lattice();
        let mut n = 0;
        for i in 0..self.extents[0] {
            for j in 0..self.extents[1] {
                if self.is_sampled(i, j) && lattice.locate([i as i64, j as i64]).2 != 0 {
                    n += 1;
                }
            }
        }
        n
    }

    /// Grid size over lattice samples, excluding ACS-only extras.
    pub fn nominal_acceleration(&self) -> f64 {
        let lattice_samples = self.sampled_count() - self.acs_extra_count();
        (self.extents[0] * self.extents[1]) as f64 / lattice_samples as f64
    }

    /// Grid size over all sampled positions, ACS included.
    pub fn effective_acceleration(&self) -> f64 {
        (self.extents[0] * self.extents[1]) as f64 / self.sampled_count() as f64
    }

    /// Extra acceleration from skipping the elliptical corners.
    pub fn elliptical_factor(&self) -> f64 {
        let mut inside = 0usize;
        for i in 0..self.extents[0] {
            for j in 0..self.extents[1] {
                if self.acquirable(i, j) {
                    inside += 1;
                }
            }
        }
        (self.extents[0] * self.extents[1]) as f64 / inside as f64
    }

    /// Same pattern with the lattice moved by `echo` samples along `v`
    /// (modulo the lattice period), as used for joint multi-echo sampling.
    pub fn echo_shifted(&self, echo: usize) -> Result<SamplingMask> {
        let mut pattern = self.pattern;
        let period = self.pattern.r2;
        match pattern.kind {
            PatternKind::Uniform | PatternKind::Elliptical => pattern.offset[1] = (pattern.offset[1] + echo) % period,
            PatternKind::Kyt => pattern.offset[0] = (pattern.offset[0] + echo) % period,
        }
        SamplingMask::from_pattern(self.axes, self.extents, pattern, self.acs)
    }

    /// Circularly shifts each row's columns by `−Δ·(i div R1)`, mapping a
    /// CAIPI lattice onto the Δ = 0 lattice. Only defined for uniform and
    /// elliptical patterns.
    pub fn deshear(&self) -> Result<SamplingMask> {
        self.shear(false)
    }

    pub fn reshear(&self, shift: usize) -> Result<SamplingMask> {
        let mut m = self.clone();
        m.pattern.shift = shift;
        m.shear_from(true)
    }

    fn shear(&self, forward: bool) -> Result<SamplingMask> {
        if self.pattern.kind == PatternKind::Kyt {
            return param_err("deshear applies to row/column CAIPI lattices, not ky-t patterns");
        }
        self.shear_from(forward)
    }

    fn shear_from(&self, reshear: bool) -> Result<SamplingMask> {
        let [n0, n1] = self.extents;
        let mut out = vec![false; n0 * n1];
        for i in 0..n0 {
            let s = row_shift(i, self.pattern.shift, self.pattern.r1, n1);
            for j in 0..n1 {
                let (src, dst) = if reshear { (j, (j + s) % n1) } else { ((j + s) % n1, j) };
                out[i * n1 + dst] = self.sampled[i * n1 + src];
            }
        }
        let mut m = self.clone();
        m.sampled = out;
        if !reshear {
            m.pattern.shift = 0;
        }
        Ok(m)
    }

    /// Mask as a 0/1 tensor bundle plus descriptor metadata.
    pub fn to_tensor(&self) -> (CTensor, Map<String, Value>) {
        let data = self.sampled.iter().map(|&s| C64::new(if s { 1.0 } else { 0.0 }, 0.0)).collect();
        let t = CTensor::new(self.axes.to_vec(), self.extents.to_vec(), data).expect("mask layout");
        let mut meta = Map::new();
        meta.insert("pattern".into(), serde_json::to_value(self.pattern).unwrap());
        meta.insert("acs".into(), serde_json::to_value(self.acs).unwrap());
        (t, meta)
    }

    /// Rebuilds a mask from its bundle and checks the payload against the
    /// descriptor.
    pub fn from_tensor(t: &CTensor, meta: &Map<String, Value>) -> Result<SamplingMask> {
        if t.shape().len() != 2 {
            return shape_err(format!("mask bundle must be 2D, got shape {:?}", t.shape()));
        }
        let pattern: Pattern = serde_json::from_value(
            meta.get("pattern").cloned().ok_or_else(|| Error::Shape("mask bundle lacks `pattern`".into()))?,
        )?;
        let acs: Option<AcsBox> = serde_json::from_value(meta.get("acs").cloned().unwrap_or(Value::Null))?;
        let axes = [t.axes()[0], t.axes()[1]];
        let m = SamplingMask::from_pattern(axes, [t.shape()[0], t.shape()[1]], pattern, acs)?;
        let stored: Vec<bool> = t.data().iter().map(|v| v.re != 0.0).collect();
        if stored != m.sampled {
            return shape_err("mask payload disagrees with its descriptor");
        }
        Ok(m)
    }
}

fn row_shift(i: usize, shift: usize, r1: usize, n1: usize) -> usize {
    (shift * (i / r1)) % n1
}

/// Positions (and strides) of the two pattern axes inside `x`.
fn pattern_dims(x: &CTensor, axes: [Axis; 2], extents: [usize; 2]) -> Result<[(usize, usize); 2]> {
    let strides = x.strides();
    let mut out = [(0, 0); 2];
    for k in 0..2 {
        let d = x.axis_index(axes[k])?;
        if x.shape()[d] != extents[k] {
            return shape_err(format!(
                "axis {} has extent {} but the mask expects {}",
                axes[k],
                x.shape()[d],
                extents[k]
            ));
        }
        out[k] = (d, strides[d]);
    }
    Ok(out)
}

/// Zeroes unsampled entries, broadcasting over all non-pattern axes.
pub fn apply_mask(kspace: &CTensor, mask: &SamplingMask) -> Result<CTensor> {
    let dims = pattern_dims(kspace, mask.axes, mask.extents)?;
    let mut out = kspace.clone();
    let [n0, n1] = mask.extents;
    for (flat, v) in out.data_mut().iter_mut().enumerate() {
        let i = (flat / dims[0].1) % n0;
        let j = (flat / dims[1].1) % n1;
        if !mask.is_sampled(i, j) {
            *v = C64::new(0.0, 0.0);
        }
    }
    Ok(out)
}

/// Crops the ACS box along the pattern axes; other axes stay whole.
pub fn extract_acs(kspace: &CTensor, mask: &SamplingMask) -> Result<CTensor> {
    let acs = mask.acs.ok_or_else(|| Error::InvalidParam("mask has no ACS region".into()))?;
    let dims = pattern_dims(kspace, mask.axes, mask.extents)?;
    let mut starts = vec![0; kspace.shape().len()];
    let mut shape = kspace.shape().to_vec();
    for k in 0..2 {
        starts[dims[k].0] = acs.start[k];
        shape[dims[k].0] = acs.len[k];
    }
    kspace.crop(&starts, &shape)
}

/// Circularly shifts the second pattern axis of `x` by `−Δ·(i div R1)` for
/// row `i` of the first.
pub fn deshear_tensor(x: &CTensor, axes: [Axis; 2], shift: usize, r1: usize) -> Result<CTensor> {
    shear_tensor(x, axes, shift, r1, false)
}

pub fn reshear_tensor(x: &CTensor, axes: [Axis; 2], shift: usize, r1: usize) -> Result<CTensor> {
    shear_tensor(x, axes, shift, r1, true)
}

fn shear_tensor(x: &CTensor, axes: [Axis; 2], shift: usize, r1: usize, reshear: bool) -> Result<CTensor> {
    if r1 == 0 {
        return param_err("R1 must be >= 1");
    }
    let d0 = x.axis_index(axes[0])?;
    let d1 = x.axis_index(axes[1])?;
    let strides = x.strides();
    let (n0, n1) = (x.shape()[d0], x.shape()[d1]);
    let mut out = x.clone();
    for (flat, v) in x.data().iter().enumerate() {
        let i = (flat / strides[d0]) % n0;
        let j = (flat / strides[d1]) % n1;
        let s = row_shift(i, shift, r1, n1);
        let dst_j = if reshear { (j + s) % n1 } else { (j + n1 - s) % n1 };
        let dst = flat - j * strides[d1] + dst_j * strides[d1];
        out.data_mut()[dst] = *v;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn count(m: &SamplingMask) -> usize {
        m.sampled_count()
    }

    #[test]
    fn uniform_counts() {
        assert_eq!(count(&make_uniform_mask([12, 12], 3, 3, 0, None).unwrap()), 16);
        assert_eq!(count(&make_uniform_mask([7, 5], 1, 1, 0, None).unwrap()), 35);
        assert!(make_uniform_mask([12, 12], 3, 3, 3, None).is_err());
        assert!(make_uniform_mask([12, 12], 0, 3, 0, None).is_err());
        assert!(make_uniform_mask([12, 12], 2, 2, 0, Some(AcsBox { start: [10, 0], len: [4, 4] })).is_err());
    }

    #[test]
    fn caipi_rows_shift() {
        let m = make_uniform_mask([14, 14], 1, 7, 3, None).unwrap();
        for i in 0..14 {
            let cols: Vec<usize> = (0..14).filter(|&j| m.is_sampled(i, j)).collect();
            let first = (3 * i) % 7;
            assert_eq!(cols, vec![first, first + 7], "row {i}");
        }
    }

    #[test]
    fn invariant_formula_outside_acs() {
        let acs = AcsBox::centered([20, 18], [6, 4]).unwrap();
        let m = make_uniform_mask([20, 18], 2, 3, 1, Some(acs)).unwrap();
        for i in 0..20 {
            for j in 0..18 {
                let formula = i % 2 == 0 && (j + 3 * 20 - (i / 2)) % 3 == 0;
                if acs.contains(i, j) {
                    assert!(m.is_sampled(i, j));
                } else {
                    assert_eq!(m.is_sampled(i, j), formula, "({i},{j})");
                }
            }
        }
    }

    #[test]
    fn small_ellipse_by_enumeration() {
        let m = make_elliptical_mask([4, 4], 1, 1, 0, None).unwrap();
        let expected: Vec<bool> = (0..16).map(|k| matches!((k / 4, k % 4), (1 | 2, 1 | 2))).collect();
        assert_eq!(m.grid(), &expected[..]);
    }

    #[test]
    fn elliptical_never_samples_corners() {
        let acs = AcsBox::centered([40, 40], [8, 8]).unwrap();
        let m = make_elliptical_mask([40, 40], 2, 2, 1, Some(acs)).unwrap();
        for i in 0..40 {
            for j in 0..40 {
                if !m.acquirable(i, j) {
                    assert!(!m.is_sampled(i, j));
                }
            }
        }
    }

    #[test]
    fn kyt_coverage() {
        let m = make_kyt_mask(16, 4, 4, 1, None).unwrap();
        for ky in 0..16 {
            let hits = (0..4).filter(|&t| m.is_sampled(ky, t)).count();
            assert_eq!(hits, 1, "ky {ky}");
        }
        let m0 = make_kyt_mask(16, 4, 4, 0, None).unwrap();
        for ky in 0..16 {
            let row: Vec<bool> = (0..4).map(|t| m0.is_sampled(ky, t)).collect();
            assert!(row.iter().all(|&s| s == row[0]));
        }
    }

    #[test]
    fn kyt_acs_in_epti_grid() {
        let acs = AcsBox::centered([216, 80], [80, 16]).unwrap();
        let m = make_kyt_mask(216, 80, 8, 3, Some(acs)).unwrap();
        for i in acs.start[0]..acs.start[0] + 80 {
            for t in acs.start[1]..acs.start[1] + 16 {
                assert!(m.is_sampled(i, t));
            }
        }
    }

    #[test]
    fn deshear_maps_to_unsheared() {
        let m3 = make_uniform_mask([14, 21], 2, 7, 3, None).unwrap();
        let m0 = make_uniform_mask([14, 21], 2, 7, 0, None).unwrap();
        assert_eq!(m3.deshear().unwrap(), m0);
        assert_eq!(m0.deshear().unwrap(), m0);
        assert_eq!(m3.deshear().unwrap().reshear(3).unwrap(), m3);
    }

    #[test]
    fn tensor_shear_round_trip() {
        let shape = vec![2, 6, 14];
        let n: usize = shape.iter().product();
        let x = CTensor::new(
            vec![Axis::Coil, Axis::Ky, Axis::Kz],
            shape,
            (0..n).map(|i| C64::new(i as f64, 1.0)).collect(),
        )
        .unwrap();
        let axes = [Axis::Ky, Axis::Kz];
        let d = deshear_tensor(&x, axes, 3, 2).unwrap();
        assert_eq!(reshear_tensor(&d, axes, 3, 2).unwrap(), x);
        assert_eq!(deshear_tensor(&x, axes, 0, 2).unwrap(), x);
    }

    #[test]
    fn mask_application() {
        let acs = AcsBox::centered([12, 12], [4, 4]).unwrap();
        let m = make_uniform_mask([12, 12], 3, 3, 0, Some(acs)).unwrap();
        let x = CTensor::new(
            vec![Axis::Coil, Axis::Kx, Axis::Ky, Axis::Kz],
            vec![2, 3, 12, 12],
            vec![C64::new(1.0, -1.0); 864],
        )
        .unwrap();
        let once = apply_mask(&x, &m).unwrap();
        assert_eq!(apply_mask(&once, &m).unwrap(), once);
        let full = make_uniform_mask([12, 12], 1, 1, 0, None).unwrap();
        assert_eq!(apply_mask(&x, &full).unwrap(), x);
        let a = extract_acs(&x, &m).unwrap();
        assert_eq!(a.shape(), &[2, 3, 4, 4]);
        let nonzero = once.data().iter().filter(|v| v.norm() > 0.0).count();
        assert_eq!(nonzero, 6 * m.sampled_count());
        let bad = CTensor::zeros(vec![Axis::Kx, Axis::Ky], vec![3, 12]).unwrap();
        assert!(apply_mask(&bad, &m).is_err());
    }

    #[test]
    fn bundle_round_trip() {
        let acs = AcsBox::centered([30, 20], [6, 6]).unwrap();
        let m = make_elliptical_mask([30, 20], 1, 5, 2, Some(acs)).unwrap();
        let (t, meta) = m.to_tensor();
        assert_eq!(SamplingMask::from_tensor(&t, &meta).unwrap(), m);
    }

    #[test]
    fn echo_shift_moves_columns() {
        let m = make_uniform_mask([9, 9], 3, 3, 0, None).unwrap();
        let e1 = m.echo_shifted(1).unwrap();
        assert!(e1.is_sampled(0, 1) && !e1.is_sampled(0, 0) && e1.is_sampled(3, 4));
        assert_eq!(m.echo_shifted(3).unwrap(), m);
    }

    #[test]
    fn lattice_locate_tiles() {
        for pattern in [
            make_uniform_mask([10, 14], 2, 7, 3, None).unwrap().pattern,
            make_kyt_mask(12, 6, 4, 1, None).unwrap().pattern,
        ] {
            let l = pattern.lattice();
            for i in -5..15 {
                for j in -5..15 {
                    let (a, b, k) = l.locate([i, j]);
                    let p = l.point(a, b);
                    assert_eq!([p[0] + l.cell[k][0], p[1] + l.cell[k][1]], [i, j]);
                }
            }
        }
    }
}
