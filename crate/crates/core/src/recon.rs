//! Scan-specific learned reconstructions: per-coil RAKI and coil-combined
//! eRAKI (single echo, joint multi-echo and ky–t).
//!
//! Data are decimated in lattice coordinates: the acquired point
//! `origin + a·u + b·v` becomes voxel `(a, b)` of the network input, so CAIPI
//! shears need no explicit deshearing. Each network output voxel predicts the
//! `R` cell offsets around its lattice point, real and imaginary parts as
//! separate channels.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{param_err, shape_err, Error, Result};
use crate::espirit::{coil_combine, espirit_maps, make_combo_target, ComboMode, EspiritParams, SensitivityMaps};
use crate::fft::ifftc;
use crate::layout::{fourier_axes, to_canonical};
use crate::nn::{forward, train, ModelWeights, RTensor, Sample, TrainConfig};
use crate::sampling::{apply_mask, extract_acs, AcsBox, Lattice, SamplingMask};
use crate::tensor::{Axis, CTensor, C64};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReconMode {
    /// One model per coil predicting that coil's own k-space.
    Raki,
    /// One coil-combined model per echo.
    Eraki,
    /// One coil-combined model for all echoes, concatenated along channels.
    ErakiJoint,
    /// Coil-combined model on ky–t data.
    ErakiKyt,
}

impl ReconMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ReconMode::Raki => "raki",
            ReconMode::Eraki => "eraki",
            ReconMode::ErakiJoint => "eraki-joint",
            ReconMode::ErakiKyt => "eraki-kyt",
        }
    }
}

/// Which maps produce the coil-combined calibration target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TargetMaps {
    /// Maps estimated on the ACS grid.
    #[default]
    LowRes,
    /// Full-grid maps with the ACS zero-embedded.
    Full,
}

#[derive(Debug, Clone)]
pub struct ReconProblem {
    /// Masked k-space per echo, canonical `[coil, readout, p0, p1]`.
    pub echoes: Vec<CTensor>,
    /// One mask per echo, all on the same lattice up to an origin shift.
    pub masks: Vec<SamplingMask>,
    /// Full-grid maps; estimated from the first echo's ACS when absent.
    pub maps: Option<SensitivityMaps>,
    pub espirit: EspiritParams,
    pub target_maps: TargetMaps,
    pub train: TrainConfig,
}

impl ReconProblem {
    /// `kspace` holds `coil`, one readout axis, the masks' pattern axes and
    /// optionally `echo`. A single mask is reused for every echo.
    pub fn new(kspace: &CTensor, masks: Vec<SamplingMask>, train: TrainConfig) -> Result<Self> {
        if masks.is_empty() {
            return param_err("at least one sampling mask is required");
        }
        let parts: Vec<CTensor> = if kspace.has_axis(Axis::Echo) {
            let ne = kspace.extent(Axis::Echo)?;
            (0..ne).map(|e| kspace.select(Axis::Echo, e)).collect::<Result<_>>()?
        } else {
            vec![kspace.clone()]
        };
        let masks = match masks.len() {
            1 => vec![masks[0].clone(); parts.len()],
            n if n == parts.len() => masks,
            n => return shape_err(format!("{} echoes but {n} sampling masks", parts.len())),
        };
        let mut echoes = Vec::with_capacity(parts.len());
        for (p, m) in parts.iter().zip(&masks) {
            let (canon, _) = to_canonical(p, m)?;
            if canon.shape()[2..] != m.extents {
                return shape_err(format!("data extents {:?} vs mask extents {:?}", &canon.shape()[2..], m.extents));
            }
            echoes.push(apply_mask(&canon, m)?);
        }
        let l0 = masks[0].lattice();
        for m in &masks[1..] {
            let l = m.lattice();
            if l.u != l0.u || l.v != l0.v || l.cell != l0.cell || m.axes != masks[0].axes || m.acs != masks[0].acs {
                return param_err("echo masks must share lattice, axes and ACS");
            }
        }
        if masks[0].acs.is_none() {
            return param_err("learned reconstructions need an ACS region");
        }
        Ok(ReconProblem {
            echoes,
            masks,
            maps: None,
            espirit: EspiritParams::default(),
            target_maps: TargetMaps::default(),
            train,
        })
    }

    pub fn with_maps(mut self, maps: SensitivityMaps) -> Self {
        self.maps = Some(maps);
        self
    }

    pub fn coils(&self) -> usize {
        self.echoes[0].shape()[0]
    }

    pub fn acs(&self) -> AcsBox {
        self.masks[0].acs.expect("checked in new")
    }

    pub fn axes(&self) -> Vec<Axis> {
        self.echoes[0].axes().to_vec()
    }

    fn acs_data(&self, echo: usize) -> Result<CTensor> {
        extract_acs(&self.echoes[echo], &self.masks[echo])
    }

    /// Map output extents along the pattern axes for an `n0 × n1` grid.
    fn map_extents(&self, n: [usize; 2]) -> [usize; 2] {
        let axes = self.masks[0].axes;
        [if axes[0] == Axis::T { 1 } else { n[0] }, if axes[1] == Axis::T { 1 } else { n[1] }]
    }

    /// Full-grid maps, estimated from the first echo's ACS when not supplied.
    pub fn full_maps(&self) -> Result<SensitivityMaps> {
        match &self.maps {
            Some(m) => Ok(m.clone()),
            None => espirit_maps(&self.acs_data(0)?, self.espirit, self.map_extents(self.masks[0].extents)),
        }
    }

    fn shifts(&self) -> Vec<[i64; 2]> {
        let o = self.masks[0].lattice().origin;
        self.masks
            .iter()
            .map(|m| {
                let p = m.lattice().origin;
                [p[0] - o[0], p[1] - o[1]]
            })
            .collect()
    }

    /// Scale applied to inputs and targets before training: `1 / max|ACS|`.
    fn scale(&self) -> Result<f64> {
        let mut peak: f64 = 0.0;
        for e in 0..self.echoes.len() {
            peak = peak.max(self.acs_data(e)?.max_abs());
        }
        if !(peak > 0.0) {
            return Err(Error::Numerical("ACS region is identically zero".into()));
        }
        Ok(1.0 / peak)
    }

    /// Coil-combined ACS k-space `[readout, a0, a1]` for `echo`.
    pub fn combo_target(&self, echo: usize, low_res: Option<&SensitivityMaps>) -> Result<CTensor> {
        let acs = self.acs_data(echo)?;
        match self.target_maps {
            TargetMaps::LowRes => {
                let owned;
                let maps = match low_res {
                    Some(m) => m,
                    None => {
                        owned = espirit_maps(&self.acs_data(0)?, self.espirit, self.map_extents(self.acs().len))?;
                        &owned
                    }
                };
                make_combo_target(&acs, maps, ComboMode::LowRes)
            }
            TargetMaps::Full => make_combo_target(&acs, &self.full_maps()?, ComboMode::Full { start: self.acs().start }),
        }
    }
}

/// Training data for one network: one sample per lattice phase inside the
/// ACS.
#[derive(Debug, Clone)]
pub struct OffsetTargetSet {
    pub samples: Vec<Sample>,
    /// Cell offsets in output-channel order.
    pub offsets: Vec<[i64; 2]>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub scale: f64,
}

fn half_field(rf: [usize; 3]) -> [usize; 3] {
    [(rf[0] - 1) / 2, (rf[1] - 1) / 2, (rf[2] - 1) / 2]
}

fn inside(p: [i64; 2], n: [usize; 2]) -> bool {
    p[0] >= 0 && p[1] >= 0 && p[0] < n[0] as i64 && p[1] < n[1] as i64
}

/// Builds the phase samples. `inputs` are canonical ACS blocks (one per input
/// echo), `targets` are `[readout, a0, a1]` planes over the same block.
fn training_set(
    inputs: &[&CTensor],
    shifts: &[[i64; 2]],
    targets: &[&CTensor],
    lattice: &Lattice,
    acs: AcsBox,
    mask: &SamplingMask,
    rf: [usize; 3],
    scale: f64,
) -> Result<OffsetTargetSet> {
    let nc = inputs[0].shape()[0];
    let nx = inputs[0].shape()[1];
    let len = acs.len;
    let r = lattice.size();
    let c = half_field(rf);
    let in_ch = 2 * nc * inputs.len();
    let out_ch = 2 * r * targets.len();
    let mut samples = Vec::new();
    for phase in &lattice.cell {
        let lat = Lattice { origin: *phase, ..lattice.clone() };
        let (lo, hi) = lat.coord_bounds(len);
        let dims = [(hi[0] - lo[0] + 1) as usize, (hi[1] - lo[1] + 1) as usize];
        if dims[0] < rf[0] || dims[1] < rf[1] || nx < rf[2] {
            continue;
        }
        let mut input = RTensor::zeros([in_ch, dims[0], dims[1], nx]);
        let mut avail = vec![true; dims[0] * dims[1]];
        for ia in 0..dims[0] {
            for ib in 0..dims[1] {
                let p = lat.point(lo[0] + ia as i64, lo[1] + ib as i64);
                for (s, (src, sh)) in inputs.iter().zip(shifts).enumerate() {
                    let q = [p[0] + sh[0], p[1] + sh[1]];
                    if !inside(q, len) {
                        avail[ia * dims[1] + ib] = false;
                        continue;
                    }
                    for coil in 0..nc {
                        for x in 0..nx {
                            let v = src.get(&[coil, x, q[0] as usize, q[1] as usize]) * scale;
                            let ch = 2 * (s * nc + coil);
                            let i = input.idx(ch, ia, ib, x);
                            input.data[i] = v.re;
                            let i = input.idx(ch + 1, ia, ib, x);
                            input.data[i] = v.im;
                        }
                    }
                }
            }
        }
        let out = [dims[0] - rf[0] + 1, dims[1] - rf[1] + 1, nx - rf[2] + 1];
        let mut target = RTensor::zeros([out_ch, out[0], out[1], out[2]]);
        let mut valid = vec![false; target.data.len()];
        let mut any = false;
        for oa in 0..out[0] {
            for ob in 0..out[1] {
                let window_ok = (0..rf[0]).all(|da| (0..rf[1]).all(|db| avail[(oa + da) * dims[1] + ob + db]));
                let p = lat.point(lo[0] + (oa + c[0]) as i64, lo[1] + (ob + c[1]) as i64);
                let targets_ok = lattice.cell.iter().all(|d| {
                    let q = [p[0] + d[0], p[1] + d[1]];
                    inside(q, len) && mask.acquirable(acs.start[0] + q[0] as usize, acs.start[1] + q[1] as usize)
                });
                if !(window_ok && targets_ok) {
                    continue;
                }
                any = true;
                for (t, plane) in targets.iter().enumerate() {
                    for (k, d) in lattice.cell.iter().enumerate() {
                        let q = [(p[0] + d[0]) as usize, (p[1] + d[1]) as usize];
                        let ch = 2 * (t * r + k);
                        for ox in 0..out[2] {
                            let v = plane.get(&[ox + c[2], q[0], q[1]]) * scale;
                            let i = target.idx(ch, oa, ob, ox);
                            target.data[i] = v.re;
                            valid[i] = true;
                            let i = target.idx(ch + 1, oa, ob, ox);
                            target.data[i] = v.im;
                            valid[i] = true;
                        }
                    }
                }
            }
        }
        if any {
            samples.push(Sample { input, target, mask: Some(valid) });
        }
    }
    if samples.is_empty() {
        return Err(Error::ReceptiveField { input: vec![len[0], len[1], nx], field: rf.to_vec() });
    }
    Ok(OffsetTargetSet { samples, offsets: lattice.cell.clone(), in_channels: in_ch, out_channels: out_ch, scale })
}

/// Writes network output voxels back to the grid. Output voxel `(ia, ib, ix)`
/// belongs to lattice point `coord0 + (ia, ib)` and readout `x0 + ix`.
pub fn scatter(
    pred: &RTensor,
    lattice: &Lattice,
    coord0: [i64; 2],
    x0: usize,
    planes: &mut [CTensor],
    scale: f64,
) -> Result<()> {
    let r = lattice.size();
    if pred.shape[0] != 2 * r * planes.len() {
        return shape_err(format!("{} output channels for {} planes of {r} offsets", pred.shape[0], planes.len()));
    }
    let shape = planes[0].shape().to_vec();
    let (nx, n) = (shape[0], [shape[1], shape[2]]);
    let inv = 1.0 / scale;
    for ia in 0..pred.shape[1] {
        for ib in 0..pred.shape[2] {
            let p = lattice.point(coord0[0] + ia as i64, coord0[1] + ib as i64);
            for (k, d) in lattice.cell.iter().enumerate() {
                let q = [p[0] + d[0], p[1] + d[1]];
                if !inside(q, n) {
                    continue;
                }
                for (t, plane) in planes.iter_mut().enumerate() {
                    let ch = 2 * (t * r + k);
                    for ix in 0..pred.shape[3] {
                        let x = x0 + ix;
                        if x >= nx {
                            continue;
                        }
                        let v = C64::new(pred.data[pred.idx(ch, ia, ib, ix)], pred.data[pred.idx(ch + 1, ia, ib, ix)]);
                        plane.set(&[x, q[0] as usize, q[1] as usize], v * inv);
                    }
                }
            }
        }
    }
    Ok(())
}

/// Output rows per inference tile along the first lattice axis.
const TILE_ROWS: usize = 16;

/// Runs `model` over the whole decimated grid with zero extension and
/// scatters the predictions into `planes` (`[readout, n0, n1]` each).
fn infer_grid(
    model: &ModelWeights,
    inputs: &[&CTensor],
    shifts: &[[i64; 2]],
    lattice: &Lattice,
    planes: usize,
    scale: f64,
) -> Result<Vec<CTensor>> {
    let nc = inputs[0].shape()[0];
    let nx = inputs[0].shape()[1];
    let n = [inputs[0].shape()[2], inputs[0].shape()[3]];
    if model.in_channels() != 2 * nc * inputs.len() || model.out_channels() != 2 * lattice.size() * planes {
        return shape_err(format!(
            "model channels {}→{} do not match {} inputs and {} outputs",
            model.in_channels(),
            model.out_channels(),
            2 * nc * inputs.len(),
            2 * lattice.size() * planes
        ));
    }
    let (lo, hi) = lattice.coord_bounds(n);
    let dims = [(hi[0] - lo[0] + 1) as usize, (hi[1] - lo[1] + 1) as usize];
    let mut input = RTensor::zeros([model.in_channels(), dims[0], dims[1], nx]);
    for ia in 0..dims[0] {
        for ib in 0..dims[1] {
            let p = lattice.point(lo[0] + ia as i64, lo[1] + ib as i64);
            for (s, (src, sh)) in inputs.iter().zip(shifts).enumerate() {
                let q = [p[0] + sh[0], p[1] + sh[1]];
                if !inside(q, n) {
                    continue;
                }
                for coil in 0..nc {
                    for x in 0..nx {
                        let v = src.get(&[coil, x, q[0] as usize, q[1] as usize]) * scale;
                        let ch = 2 * (s * nc + coil);
                        let i = input.idx(ch, ia, ib, x);
                        input.data[i] = v.re;
                        let i = input.idx(ch + 1, ia, ib, x);
                        input.data[i] = v.im;
                    }
                }
            }
        }
    }
    let rf = model.receptive_field();
    let c = half_field(rf);
    let padded = input.pad(c, [rf[0] - 1 - c[0], rf[1] - 1 - c[1], rf[2] - 1 - c[2]]);
    let axes = inputs[0].axes()[1..].to_vec();
    let mut out: Vec<CTensor> =
        (0..planes).map(|_| CTensor::zeros(axes.clone(), vec![nx, n[0], n[1]])).collect::<Result<_>>()?;
    let mut row = 0;
    while row < dims[0] {
        let rows = TILE_ROWS.min(dims[0] - row);
        let tile = padded.crop([row, 0, 0], [rows + rf[0] - 1, padded.shape[2], padded.shape[3]]);
        let pred = forward(model, &tile)?;
        scatter(&pred, lattice, [lo[0] + row as i64, lo[1]], 0, &mut out, scale)?;
        row += rows;
    }
    Ok(out)
}

/// Everything a learned reconstruction returns; k-space and images are in
/// canonical axis order.
#[derive(Debug, Clone)]
pub struct ReconOutput {
    pub mode: ReconMode,
    /// Per echo: combined `[readout, p0, p1]` (eRAKI) or `[coil, readout, p0, p1]` (RAKI).
    pub kspace: Vec<CTensor>,
    /// Per echo coil-combined complex image `[readout, p0, p1]`.
    pub images: Vec<CTensor>,
    pub models: Vec<ModelWeights>,
    pub loss_histories: Vec<Vec<f64>>,
    /// Wall-clock training time per model.
    pub train_seconds: Vec<f64>,
    pub infer_seconds: f64,
}

/// Coil-combined training set for the given echoes (joint when several).
pub fn build_targets(problem: &ReconProblem, echoes: &[usize]) -> Result<OffsetTargetSet> {
    let low = match problem.target_maps {
        TargetMaps::LowRes => Some(espirit_maps(
            &problem.acs_data(0)?,
            problem.espirit,
            problem.map_extents(problem.acs().len),
        )?),
        TargetMaps::Full => None,
    };
    build_targets_with(problem, echoes, low.as_ref())
}

fn build_targets_with(problem: &ReconProblem, echoes: &[usize], low: Option<&SensitivityMaps>) -> Result<OffsetTargetSet> {
    let acs: Vec<CTensor> = echoes.iter().map(|&e| problem.acs_data(e)).collect::<Result<_>>()?;
    let targets: Vec<CTensor> = echoes.iter().map(|&e| problem.combo_target(e, low)).collect::<Result<_>>()?;
    let shifts = problem.shifts();
    let sh: Vec<[i64; 2]> = echoes.iter().map(|&e| shifts[e]).collect();
    training_set(
        &acs.iter().collect::<Vec<_>>(),
        &sh,
        &targets.iter().collect::<Vec<_>>(),
        &problem.masks[0].lattice(),
        problem.acs(),
        &problem.masks[0],
        problem.train.architecture.receptive_field(),
        problem.scale()?,
    )
}

/// Trains one coil-combined model over `echoes`.
pub fn train_eraki(problem: &ReconProblem, echoes: &[usize]) -> Result<(ModelWeights, Vec<f64>, f64)> {
    let set = build_targets(problem, echoes)?;
    train_on(&set, &problem.train)
}

fn train_on(set: &OffsetTargetSet, cfg: &TrainConfig) -> Result<(ModelWeights, Vec<f64>, f64)> {
    let start = Instant::now();
    let m0 = ModelWeights::init(set.in_channels, set.out_channels, &cfg.architecture, cfg.seed)?;
    let outcome = train(&m0, &set.samples, cfg)?;
    Ok((outcome.model, outcome.history, start.elapsed().as_secs_f64()))
}

/// Applies a trained coil-combined model to the full masked data of
/// `echoes`, returning combined k-space per echo with never-acquired corners
/// zeroed.
pub fn infer_eraki(problem: &ReconProblem, model: &ModelWeights, echoes: &[usize]) -> Result<Vec<CTensor>> {
    let shifts = problem.shifts();
    let inputs: Vec<&CTensor> = echoes.iter().map(|&e| &problem.echoes[e]).collect();
    let sh: Vec<[i64; 2]> = echoes.iter().map(|&e| shifts[e]).collect();
    let mut out = infer_grid(model, &inputs, &sh, &problem.masks[0].lattice(), echoes.len(), problem.scale()?)?;
    for (plane, &e) in out.iter_mut().zip(echoes) {
        zero_corners(plane, &problem.masks[e], 1);
    }
    Ok(out)
}

/// Zeroes never-acquired positions; pattern axes start at `first`.
fn zero_corners(x: &mut CTensor, mask: &SamplingMask, first: usize) {
    if !mask.pattern.elliptical() {
        return;
    }
    let s = x.shape().to_vec();
    let (n0, n1) = (s[first], s[first + 1]);
    for (flat, v) in x.data_mut().iter_mut().enumerate() {
        let j = flat % n1;
        let i = (flat / n1) % n0;
        if !mask.acquirable(i, j) {
            *v = C64::new(0.0, 0.0);
        }
    }
}

/// Image of combined k-space: inverse transform along the Fourier axes.
pub fn combined_image(kspace: &CTensor) -> Result<CTensor> {
    ifftc(kspace, &fourier_axes(kspace.axes()))
}

/// Coil-combined image of multi-coil canonical k-space.
pub fn combine_coils(kspace: &CTensor, maps: &SensitivityMaps) -> Result<CTensor> {
    coil_combine(&ifftc(kspace, &fourier_axes(kspace.axes()))?, &maps.maps)
}

/// RAKI: one model per coil, each predicting that coil's own k-space from
/// all coils. Acquired samples are restored afterwards.
pub fn reconstruct_raki(problem: &ReconProblem, echo: usize) -> Result<(CTensor, Vec<ModelWeights>, Vec<Vec<f64>>, Vec<f64>, f64)> {
    let acs = problem.acs_data(echo)?;
    let nc = problem.coils();
    let scale = problem.scale()?;
    let lattice = problem.masks[echo].lattice();
    let rf = problem.train.architecture.receptive_field();
    let mut models = Vec::with_capacity(nc);
    let mut histories = Vec::with_capacity(nc);
    let mut seconds = Vec::with_capacity(nc);
    for c in 0..nc {
        let target = acs.select(Axis::Coil, c)?;
        let set = training_set(&[&acs], &[[0, 0]], &[&target], &lattice, problem.acs(), &problem.masks[echo], rf, scale)?;
        let (m, h, s) = train_on(&set, &problem.train)?;
        models.push(m);
        histories.push(h);
        seconds.push(s);
    }
    let start = Instant::now();
    let data = &problem.echoes[echo];
    let mut coils = Vec::with_capacity(nc);
    for m in &models {
        coils.push(infer_grid(m, &[data], &[[0, 0]], &lattice, 1, scale)?.remove(0));
    }
    let mut k = CTensor::stack(&coils, Axis::Coil, 0)?;
    crate::grappa::restore_acquired(&mut k, data, &problem.masks[echo]);
    Ok((k, models, histories, seconds, start.elapsed().as_secs_f64()))
}

/// Runs the full learned pipeline for `mode`.
pub fn reconstruct(problem: &ReconProblem, mode: ReconMode) -> Result<ReconOutput> {
    let ne = problem.echoes.len();
    let kyt = problem.masks[0].axes == [Axis::Ky, Axis::T];
    match mode {
        ReconMode::ErakiKyt if !kyt => return param_err("eraki-kyt needs a ky-t sampling mask"),
        ReconMode::ErakiJoint if ne < 2 => return param_err("joint reconstruction needs at least two echoes"),
        _ => {}
    }
    let mut out = ReconOutput {
        mode,
        kspace: Vec::new(),
        images: Vec::new(),
        models: Vec::new(),
        loss_histories: Vec::new(),
        train_seconds: Vec::new(),
        infer_seconds: 0.0,
    };
    match mode {
        ReconMode::Raki => {
            let maps = problem.full_maps()?;
            for e in 0..ne {
                let (k, models, hist, secs, infer) = reconstruct_raki(problem, e)?;
                out.images.push(combine_coils(&k, &maps)?);
                out.kspace.push(k);
                out.models.extend(models);
                out.loss_histories.extend(hist);
                out.train_seconds.extend(secs);
                out.infer_seconds += infer;
            }
        }
        ReconMode::Eraki | ReconMode::ErakiKyt | ReconMode::ErakiJoint => {
            let groups: Vec<Vec<usize>> =
                if mode == ReconMode::ErakiJoint { vec![(0..ne).collect()] } else { (0..ne).map(|e| vec![e]).collect() };
            let low = match problem.target_maps {
                TargetMaps::LowRes => Some(espirit_maps(
                    &problem.acs_data(0)?,
                    problem.espirit,
                    problem.map_extents(problem.acs().len),
                )?),
                TargetMaps::Full => None,
            };
            for g in groups {
                let set = build_targets_with(problem, &g, low.as_ref())?;
                let (model, hist, secs) = train_on(&set, &problem.train)?;
                let start = Instant::now();
                let ks = infer_eraki(problem, &model, &g)?;
                out.infer_seconds += start.elapsed().as_secs_f64();
                for k in ks {
                    out.images.push(combined_image(&k)?);
                    out.kspace.push(k);
                }
                out.models.push(model);
                out.loss_histories.push(hist);
                out.train_seconds.push(secs);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fft::fftc;
    use crate::nn::{Architecture, ConvLayer};
    use crate::phantom::{make_phantom, PhantomSpec};
    use crate::sampling::{make_uniform_mask, AcsBox};

    fn small_arch() -> Architecture {
        Architecture { kernels: vec![[3, 3, 3], [1, 1, 1]], widths: vec![8] }
    }

    fn phantom_problem(r: [usize; 2], shift: usize, coils: usize, echoes: usize) -> (ReconProblem, CTensor) {
        let mut spec = PhantomSpec::head([8, 24, 24], coils);
        spec.te_ms = (0..echoes).map(|e| 10.0 * e as f64).collect();
        let ph = make_phantom(&spec).unwrap();
        let acs = AcsBox::centered([24, 24], [12, 12]).unwrap();
        let mask = make_uniform_mask([24, 24], r[0], r[1], shift, Some(acs)).unwrap();
        let masks: Vec<SamplingMask> = (0..echoes).map(|e| mask.echo_shifted(e).unwrap()).collect();
        let cfg = TrainConfig { architecture: small_arch(), iterations: 3, ..TrainConfig::default() };
        let k = if echoes == 1 { ph.kspace.select(Axis::Echo, 0).unwrap() } else { ph.kspace.clone() };
        (ReconProblem::new(&k, masks, cfg).unwrap(), ph.kspace)
    }

    #[test]
    fn channel_laws() {
        let (p, _) = phantom_problem([3, 3], 0, 4, 1);
        let set = build_targets(&p, &[0]).unwrap();
        assert_eq!(set.out_channels, 18);
        assert_eq!(set.in_channels, 8);
        assert_eq!(set.offsets.len(), 9);
        let (p, _) = phantom_problem([3, 3], 0, 2, 3);
        let set = build_targets(&p, &[0, 1, 2]).unwrap();
        assert_eq!(set.out_channels, 54);
        assert_eq!(set.in_channels, 12);
    }

    #[test]
    fn r1_targets_are_combo_interior() {
        let (p, _) = phantom_problem([1, 1], 0, 3, 1);
        let set = build_targets(&p, &[0]).unwrap();
        assert_eq!(set.offsets, vec![[0, 0]]);
        let combo = p.combo_target(0, None).unwrap();
        let s = &set.samples[0];
        // output voxel (a, b, x) sits at ACS position (a + 1, b + 1, x + 1)
        for a in 0..s.target.shape[1] {
            for b in 0..s.target.shape[2] {
                for x in 0..s.target.shape[3] {
                    let want = combo.get(&[x + 1, a + 1, b + 1]) * set.scale;
                    assert!((s.target.data[s.target.idx(0, a, b, x)] - want.re).abs() < 1e-15);
                    assert!((s.target.data[s.target.idx(1, a, b, x)] - want.im).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn offset_scatter_round_trip() {
        for (r, shift) in [([2, 2], 0), ([2, 3], 1)] {
            let (p, _) = phantom_problem(r, shift, 2, 1);
            let set = build_targets(&p, &[0]).unwrap();
            let combo = p.combo_target(0, None).unwrap();
            let lattice = p.masks[0].lattice();
            let c = half_field(small_arch().receptive_field());
            let len = p.acs().len;
            for (phase, s) in lattice.cell.iter().zip(&set.samples) {
                let lat = Lattice { origin: *phase, ..lattice.clone() };
                let (lo, _) = lat.coord_bounds(len);
                let mut planes = vec![CTensor::zeros(combo.axes().to_vec(), combo.shape().to_vec()).unwrap()];
                scatter(&s.target, &lat, [lo[0] + c[0] as i64, lo[1] + c[1] as i64], c[2], &mut planes, set.scale).unwrap();
                let mut hits = 0;
                for (i, v) in planes[0].data().iter().enumerate() {
                    if v.norm() > 0.0 {
                        assert!((v - combo.data()[i]).norm() <= 1e-12 * combo.max_abs(), "{i}");
                        hits += 1;
                    }
                }
                assert!(hits > 0);
            }
        }
    }

    #[test]
    fn identity_model_reproduces_input() {
        // one coil, C ≡ 1: combination is the identity
        let ph = make_phantom(&PhantomSpec::head([6, 16, 16], 1)).unwrap();
        let k = ph.kspace.select(Axis::Echo, 0).unwrap();
        let mask = make_uniform_mask([16, 16], 1, 1, 0, Some(AcsBox::centered([16, 16], [8, 8]).unwrap())).unwrap();
        let p = ReconProblem::new(&k, vec![mask], TrainConfig::default()).unwrap();
        let mut layer = ConvLayer::zeros(2, 2, [1, 1, 1], false);
        layer.kernel = vec![1.0, 0.0, 0.0, 1.0];
        let model = ModelWeights::new(vec![layer]).unwrap();
        let out = infer_eraki(&p, &model, &[0]).unwrap();
        let want = p.echoes[0].select(Axis::Coil, 0).unwrap();
        for (a, b) in out[0].data().iter().zip(want.data()) {
            assert!((a - b).norm() <= 1e-12 * want.max_abs());
        }
    }

    #[test]
    fn model_count_law_and_raki_consistency() {
        let (p, _) = phantom_problem([2, 2], 0, 3, 1);
        let raki = reconstruct(&p, ReconMode::Raki).unwrap();
        assert_eq!(raki.models.len(), 3);
        let k = &raki.kspace[0];
        for (o, m) in k.data().iter().zip(p.echoes[0].data()) {
            if m.norm() > 0.0 {
                assert_eq!(o, m);
            }
        }
        let er = reconstruct(&p, ReconMode::Eraki).unwrap();
        assert_eq!(er.models.len(), 1);
        assert_eq!(er.kspace[0].shape(), &[8, 24, 24]);
    }

    #[test]
    fn joint_single_echo_matches_eraki_path() {
        let (p, _) = phantom_problem([2, 2], 1, 2, 1);
        let set = build_targets(&p, &[0]).unwrap();
        let a = train_on(&set, &p.train).unwrap();
        let b = train_eraki(&p, &[0]).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(infer_eraki(&p, &a.0, &[0]).unwrap(), infer_eraki(&p, &b.0, &[0]).unwrap());
        assert!(reconstruct(&p, ReconMode::ErakiJoint).is_err());
    }

    #[test]
    fn too_small_acs_reports_extents() {
        let ph = make_phantom(&PhantomSpec::head([4, 16, 16], 2)).unwrap();
        let k = ph.kspace.select(Axis::Echo, 0).unwrap();
        let mask = make_uniform_mask([16, 16], 3, 3, 0, Some(AcsBox::centered([16, 16], [6, 6]).unwrap())).unwrap();
        let cfg = TrainConfig { architecture: small_arch(), iterations: 1, ..TrainConfig::default() };
        let mut p = ReconProblem::new(&k, vec![mask], cfg).unwrap();
        p.espirit.window = 3;
        match build_targets(&p, &[0]) {
            Err(Error::ReceptiveField { input, field }) => {
                assert_eq!(input, vec![6, 6, 4]);
                assert_eq!(field, vec![3, 3, 3]);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn combined_image_inverts_fourier_axes_only() {
        let x = CTensor::new(
            vec![Axis::Kx, Axis::Ky, Axis::T],
            vec![2, 4, 3],
            (0..24).map(|i| C64::new(i as f64, 0.0)).collect(),
        )
        .unwrap();
        let img = combined_image(&x).unwrap();
        let back = fftc(&img, &[Axis::Kx, Axis::Ky]).unwrap();
        for (a, b) in back.data().iter().zip(x.data()) {
            assert!((a - b).norm() < 1e-12);
        }
    }
}
