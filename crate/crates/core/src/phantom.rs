//! Synthetic multi-coil, multi-echo ellipsoid phantoms with known
//! sensitivities and relaxation maps.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{param_err, Result};
use crate::fft::{fftc, ifftc};
use crate::tensor::{Axis, CTensor, C64};

pub const SPATIAL: [Axis; 3] = [Axis::Kx, Axis::Ky, Axis::Kz];

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Ellipsoid {
    /// Offset of the center from the grid center (`n/2`), in voxels.
    pub center: [f64; 3],
    pub semi_axes: [f64; 3],
    /// Complex proton density as `[re, im]`.
    #[serde(default = "unit_amplitude")]
    pub amplitude: [f64; 2],
    pub t2_ms: f64,
    pub t2star_ms: f64,
}

fn unit_amplitude() -> [f64; 2] {
    [1.0, 0.0]
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq, Default)]
#[serde(rename_all = "snake_case")]
pub enum EchoType {
    /// Decay governed by T2.
    #[default]
    SpinEcho,
    /// Decay governed by T2*.
    GradientEcho,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CoilModel {
    /// Gaussian lobes on a circle in the (y, z) plane with linear phase ramps.
    /// Lengths are fractions of the field of view.
    Gaussian { width: f64, radius: f64, phase_ramp: f64 },
    /// Random maps whose k-space is supported on a centered `support`-wide window.
    Compact { support: usize },
}

impl Default for CoilModel {
    fn default() -> Self {
        CoilModel::Gaussian { width: 0.35, radius: 0.55, phase_ramp: 1.5 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomSpec {
    /// Grid extents `[nx, ny, nz]`; `nx` is the readout direction.
    pub extents: [usize; 3],
    pub ellipsoids: Vec<Ellipsoid>,
    pub coils: usize,
    pub coil_model: CoilModel,
    pub te_ms: Vec<f64>,
    pub echo_type: EchoType,
    /// Standard deviation of the real and of the imaginary k-space noise.
    pub noise_std: f64,
    pub seed: u64,
    /// Keep only this centered fraction of the object's k-space per axis.
    pub bandlimit: Option<[f64; 3]>,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        let extents = [32, 64, 64];
        PhantomSpec {
            extents,
            ellipsoids: scaled_ellipsoids(&head_ellipsoids(), extents),
            coils: 8,
            coil_model: CoilModel::default(),
            te_ms: vec![0.0],
            echo_type: EchoType::SpinEcho,
            noise_std: 0.0,
            seed: 0,
            bandlimit: None,
        }
    }
}

impl PhantomSpec {
    /// Head-like phantom scaled to `extents`, other fields default.
    pub fn head(extents: [usize; 3], coils: usize) -> Self {
        PhantomSpec { extents, coils, ellipsoids: scaled_ellipsoids(&head_ellipsoids(), extents), ..Default::default() }
    }
}

/// A head-like arrangement in fractional-FOV coordinates, scaled to a grid by
/// [`scaled_ellipsoids`].
pub fn head_ellipsoids() -> Vec<Ellipsoid> {
    vec![
        Ellipsoid { center: [0.0, 0.0, 0.0], semi_axes: [0.44, 0.40, 0.36], amplitude: [0.8, 0.0], t2_ms: 80.0, t2star_ms: 50.0 },
        Ellipsoid { center: [0.0, 0.0, 0.0], semi_axes: [0.40, 0.35, 0.31], amplitude: [0.3, 0.0], t2_ms: 50.0, t2star_ms: 35.0 },
        Ellipsoid { center: [0.0, 0.10, 0.11], semi_axes: [0.20, 0.09, 0.14], amplitude: [0.7, 0.1], t2_ms: 30.0, t2star_ms: 20.0 },
        Ellipsoid { center: [0.05, -0.13, -0.06], semi_axes: [0.18, 0.13, 0.07], amplitude: [0.55, -0.05], t2_ms: 80.0, t2star_ms: 60.0 },
        Ellipsoid { center: [-0.08, -0.05, 0.17], semi_axes: [0.10, 0.06, 0.06], amplitude: [1.0, 0.0], t2_ms: 30.0, t2star_ms: 25.0 },
        Ellipsoid { center: [0.0, 0.18, -0.16], semi_axes: [0.12, 0.05, 0.04], amplitude: [0.45, 0.2], t2_ms: 50.0, t2star_ms: 40.0 },
    ]
}

/// Converts fractional-FOV ellipsoids to voxel units for `extents`.
pub fn scaled_ellipsoids(fractional: &[Ellipsoid], extents: [usize; 3]) -> Vec<Ellipsoid> {
    fractional
        .iter()
        .map(|e| {
            let mut s = e.clone();
            for d in 0..3 {
                s.center[d] *= extents[d] as f64;
                s.semi_axes[d] = (e.semi_axes[d] * extents[d] as f64).max(0.5);
            }
            s
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct Phantom {
    /// Multi-coil k-space `[coil, echo, kx, ky, kz]`, noise included.
    pub kspace: CTensor,
    /// Noiseless coil images `[coil, echo, kx, ky, kz]`.
    pub images: CTensor,
    /// Sensitivities `[coil, kx, ky, kz]`.
    pub sens_true: CTensor,
    /// Coil-combined ground truth `[echo, kx, ky, kz]`: object times decay.
    pub reference: CTensor,
    /// Real-valued relaxation maps `[kx, ky, kz]` in ms, zero off support.
    pub t2_true: CTensor,
    pub t2star_true: CTensor,
    /// Voxels inside at least one ellipsoid.
    pub support: Vec<bool>,
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        if self.extents.iter().any(|&n| n == 0) {
            return param_err(format!("phantom grid has a zero extent: {:?}", self.extents));
        }
        if self.ellipsoids.is_empty() {
            return param_err("phantom needs at least one ellipsoid");
        }
        if self.coils == 0 {
            return param_err("phantom needs at least one coil");
        }
        if self.te_ms.is_empty() || self.te_ms[0] < 0.0 || self.te_ms.windows(2).any(|w| w[1] <= w[0]) {
            return param_err(format!("echo times must be non-negative and strictly increasing: {:?}", self.te_ms));
        }
        for e in &self.ellipsoids {
            if e.semi_axes.iter().any(|&s| s <= 0.0) || e.t2_ms <= 0.0 || e.t2star_ms <= 0.0 {
                return param_err("ellipsoid semi-axes and relaxation times must be positive");
            }
        }
        if !(self.noise_std >= 0.0) {
            return param_err("noise_std must be non-negative");
        }
        if let Some(b) = self.bandlimit {
            if b.iter().any(|&f| !(f > 0.0 && f <= 1.0)) {
                return param_err("bandlimit fractions must lie in (0, 1]");
            }
        }
        Ok(())
    }
}

pub fn make_phantom(spec: &PhantomSpec) -> Result<Phantom> {
    spec.validate()?;
    let [nx, ny, nz] = spec.extents;
    let n = nx * ny * nz;
    let center = [(nx / 2) as f64, (ny / 2) as f64, (nz / 2) as f64];

    // Later ellipsoids overwrite earlier ones so every voxel has one T2/T2*.
    let mut object = vec![C64::new(0.0, 0.0); n];
    let mut t2 = vec![0.0; n];
    let mut t2s = vec![0.0; n];
    let mut support = vec![false; n];
    for e in &spec.ellipsoids {
        for x in 0..nx {
            let dx = (x as f64 - center[0] - e.center[0]) / e.semi_axes[0];
            for y in 0..ny {
                let dy = (y as f64 - center[1] - e.center[1]) / e.semi_axes[1];
                for z in 0..nz {
                    let dz = (z as f64 - center[2] - e.center[2]) / e.semi_axes[2];
                    if dx * dx + dy * dy + dz * dz <= 1.0 {
                        let i = (x * ny + y) * nz + z;
                        object[i] = C64::new(e.amplitude[0], e.amplitude[1]);
                        t2[i] = e.t2_ms;
                        t2s[i] = e.t2star_ms;
                        support[i] = true;
                    }
                }
            }
        }
    }
    let shape3 = vec![nx, ny, nz];
    let mut object = CTensor::new(SPATIAL.to_vec(), shape3.clone(), object)?;
    if let Some(frac) = spec.bandlimit {
        object = bandlimit(&object, frac)?;
    }

    let sens = match spec.coil_model {
        CoilModel::Gaussian { width, radius, phase_ramp } => {
            gaussian_coils(spec.extents, spec.coils, width, radius, phase_ramp)?
        }
        CoilModel::Compact { support: s } => {
            let raw = make_compact_coils(spec.extents, spec.coils, s, spec.seed)?;
            // A global scale keeps the k-space support compact.
            let mut acc = 0.0;
            let mut count = 0usize;
            for (i, &inside) in support.iter().enumerate() {
                if inside {
                    acc += (0..spec.coils).map(|c| raw.data()[c * n + i].norm_sqr()).sum::<f64>();
                    count += 1;
                }
            }
            raw.scale(C64::new((count as f64 / acc).sqrt(), 0.0))
        }
    };

    let ne = spec.te_ms.len();
    let relax = match spec.echo_type {
        EchoType::SpinEcho => &t2,
        EchoType::GradientEcho => &t2s,
    };
    let mut reference = Vec::with_capacity(ne * n);
    for &te in &spec.te_ms {
        for i in 0..n {
            let decay = if relax[i] > 0.0 { (-te / relax[i]).exp() } else { 1.0 };
            reference.push(object.data()[i] * decay);
        }
    }
    let reference = CTensor::new(vec![Axis::Echo, Axis::Kx, Axis::Ky, Axis::Kz], vec![ne, nx, ny, nz], reference)?;

    let nc = spec.coils;
    let mut images = Vec::with_capacity(nc * ne * n);
    for c in 0..nc {
        let cmap = &sens.data()[c * n..(c + 1) * n];
        for e in 0..ne {
            let echo = &reference.data()[e * n..(e + 1) * n];
            images.extend(cmap.iter().zip(echo).map(|(s, v)| s * v));
        }
    }
    let axes5 = vec![Axis::Coil, Axis::Echo, Axis::Kx, Axis::Ky, Axis::Kz];
    let images = CTensor::new(axes5, vec![nc, ne, nx, ny, nz], images)?;
    let mut kspace = fftc(&images, &SPATIAL)?;
    if spec.noise_std > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x6b73_7061_6365);
        for v in kspace.data_mut() {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            *v += C64::new(re, im) * spec.noise_std;
        }
    }

    Ok(Phantom {
        kspace,
        images,
        sens_true: sens,
        reference,
        t2_true: CTensor::from_real(SPATIAL.to_vec(), shape3.clone(), &t2)?,
        t2star_true: CTensor::from_real(SPATIAL.to_vec(), shape3, &t2s)?,
        support,
    })
}

fn bandlimit(object: &CTensor, frac: [f64; 3]) -> Result<CTensor> {
    let k = fftc(object, &SPATIAL)?;
    let keep: Vec<(Axis, usize)> = SPATIAL
        .iter()
        .zip(frac)
        .map(|(&a, f)| {
            let n = k.extent(a).unwrap();
            (a, ((n as f64 * f).round() as usize).clamp(1, n))
        })
        .collect();
    let full: Vec<(Axis, usize)> = SPATIAL.iter().map(|&a| (a, k.extent(a).unwrap())).collect();
    let low = k.crop_center(&keep)?.pad_center(&full)?;
    ifftc(&low, &SPATIAL)
}

/// Smooth coil maps normalized so `Σ_c |C_c|² = 1` at every voxel.
pub fn gaussian_coils(extents: [usize; 3], nc: usize, width: f64, radius: f64, ramp: f64) -> Result<CTensor> {
    if nc == 0 || width <= 0.0 {
        return param_err("gaussian coils need nc >= 1 and width > 0");
    }
    let [nx, ny, nz] = extents;
    let n = nx * ny * nz;
    let norm = |i: usize, len: usize| (i as f64 - (len / 2) as f64) / len as f64;
    let mut data = vec![C64::new(0.0, 0.0); nc * n];
    for c in 0..nc {
        let theta = 2.0 * std::f64::consts::PI * c as f64 / nc as f64;
        let (py, pz) = (radius * theta.cos(), radius * theta.sin());
        let phase0 = theta * 0.7;
        for x in 0..nx {
            let xn = norm(x, nx);
            for y in 0..ny {
                let yn = norm(y, ny);
                for z in 0..nz {
                    let zn = norm(z, nz);
                    let d2 = (yn - py).powi(2) + (zn - pz).powi(2) + 0.25 * xn * xn;
                    let mag = (-d2 / (2.0 * width * width)).exp();
                    let phase = phase0 + ramp * (theta.cos() * yn + theta.sin() * zn + 0.5 * xn);
                    data[c * n + (x * ny + y) * nz + z] = C64::from_polar(mag, phase);
                }
            }
        }
    }
    for i in 0..n {
        let s: f64 = (0..nc).map(|c| data[c * n + i].norm_sqr()).sum::<f64>().sqrt();
        for c in 0..nc {
            data[c * n + i] /= s;
        }
    }
    CTensor::new(vec![Axis::Coil, Axis::Kx, Axis::Ky, Axis::Kz], vec![nc, nx, ny, nz], data)
}

/// Coil maps whose centered k-space is nonzero only on an `s`-wide window
/// (1 along singleton axes). Image-space values are O(1).
pub fn make_compact_coils(extents: [usize; 3], nc: usize, s: usize, seed: u64) -> Result<CTensor> {
    if s == 0 || s % 2 == 0 {
        return param_err(format!("compact coil support must be odd and >= 1, got {s}"));
    }
    if nc < 2 {
        return param_err(format!("compact coils need at least 2 coils, got {nc}"));
    }
    let mut window = [1usize; 3];
    for d in 0..3 {
        if extents[d] > 1 {
            if s > extents[d] {
                return param_err(format!("support {s} exceeds grid extent {}", extents[d]));
            }
            window[d] = s;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let wn = window.iter().product::<usize>();
    let mut coeffs = Vec::with_capacity(nc * wn);
    let dc = wn / 2;
    for _ in 0..nc {
        for i in 0..wn {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            let mut v = C64::new(re, im) * 0.5;
            if i == dc {
                v += C64::new(2.0, 0.0);
            }
            coeffs.push(v);
        }
    }
    let axes = vec![Axis::Coil, Axis::Kx, Axis::Ky, Axis::Kz];
    let small = CTensor::new(axes, vec![nc, window[0], window[1], window[2]], coeffs)?;
    let full = small.pad_center(&[(Axis::Kx, extents[0]), (Axis::Ky, extents[1]), (Axis::Kz, extents[2])])?;
    let n = (extents[0] * extents[1] * extents[2]) as f64;
    Ok(ifftc(&full, &SPATIAL)?.scale(C64::new(n.sqrt(), 0.0)))
}

/// Reinterprets the echo axis of single-partition data (`kz` extent 1) as the
/// `t` axis of a ky–t acquisition: `[.., echo, .., kz = 1]` becomes
/// `[.., t]` with `t` last and `kz` dropped.
pub fn echoes_as_time(x: &CTensor) -> Result<CTensor> {
    if x.extent(Axis::Kz)? != 1 {
        return param_err(format!("ky-t data needs a single kz partition, got {}", x.extent(Axis::Kz)?));
    }
    let x = x.select(Axis::Kz, 0)?;
    let axes: Vec<Axis> = x.axes().iter().map(|&a| if a == Axis::Echo { Axis::T } else { a }).collect();
    let x = x.with_axes(axes)?;
    let mut order: Vec<Axis> = x.axes().iter().copied().filter(|&a| a != Axis::T).collect();
    order.push(Axis::T);
    x.permute(&order)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> PhantomSpec {
        PhantomSpec {
            extents: [8, 16, 12],
            ellipsoids: vec![Ellipsoid {
                center: [0.0, 0.0, 0.0],
                semi_axes: [3.0, 6.0, 4.0],
                amplitude: [1.0, 0.2],
                t2_ms: 50.0,
                t2star_ms: 20.0,
            }],
            coils: 4,
            ..Default::default()
        }
    }

    #[test]
    fn kspace_matches_images_without_noise() {
        let p = make_phantom(&small_spec()).unwrap();
        let back = ifftc(&p.kspace, &SPATIAL).unwrap();
        let err: f64 = back.data().iter().zip(p.images.data()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(err < 1e-10);
    }

    #[test]
    fn analytic_decay() {
        let spec = PhantomSpec { te_ms: vec![0.0, 50.0], ..small_spec() };
        let p = make_phantom(&spec).unwrap();
        let n = p.support.len();
        for i in 0..n {
            if p.support[i] {
                let a = p.reference.data()[i].norm();
                let b = p.reference.data()[n + i].norm();
                assert!((b - a * (-1f64).exp()).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn gradient_echo_uses_t2star() {
        let spec = PhantomSpec { te_ms: vec![0.0, 20.0], echo_type: EchoType::GradientEcho, ..small_spec() };
        let p = make_phantom(&spec).unwrap();
        let n = p.support.len();
        let i = p.support.iter().position(|&s| s).unwrap();
        let ratio = p.reference.data()[n + i].norm() / p.reference.data()[i].norm();
        assert!((ratio - (-1f64).exp()).abs() < 1e-14);
    }

    #[test]
    fn smooth_coils_are_normalized() {
        let spec = PhantomSpec { coils: 8, ..small_spec() };
        let p = make_phantom(&spec).unwrap();
        let n = p.support.len();
        for i in 0..n {
            let s: f64 = (0..8).map(|c| p.sens_true.data()[c * n + i].norm_sqr()).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn compact_coils_support() {
        let c1 = make_compact_coils([4, 6, 5], 3, 1, 7).unwrap();
        for coil in 0..3 {
            let first = c1.data()[coil * 120];
            assert!(c1.data()[coil * 120..(coil + 1) * 120].iter().all(|v| (v - first).norm() < 1e-12));
        }
        let c3 = make_compact_coils([8, 8, 8], 2, 3, 7).unwrap();
        let k = fftc(&c3, &SPATIAL).unwrap();
        for x in 0..8 {
            for y in 0..8 {
                for z in 0..8 {
                    let inside = (3..=5).contains(&x) && (3..=5).contains(&y) && (3..=5).contains(&z);
                    if !inside {
                        assert!(k.get(&[1, x, y, z]).norm() < 1e-12);
                    }
                }
            }
        }
        assert_eq!(make_compact_coils([8, 8, 8], 2, 3, 7).unwrap(), c3);
        assert_ne!(make_compact_coils([8, 8, 8], 2, 3, 8).unwrap(), c3);
        assert!(make_compact_coils([8, 2, 8], 2, 3, 7).is_err());
        assert!(make_compact_coils([8, 8, 8], 2, 2, 7).is_err());
    }

    #[test]
    fn deterministic_and_validated() {
        let spec = PhantomSpec { noise_std: 0.01, seed: 5, ..small_spec() };
        assert_eq!(make_phantom(&spec).unwrap().kspace, make_phantom(&spec).unwrap().kspace);
        assert!(make_phantom(&PhantomSpec { ellipsoids: vec![], ..small_spec() }).is_err());
        assert!(make_phantom(&PhantomSpec { extents: [0, 4, 4], ..small_spec() }).is_err());
        assert!(make_phantom(&PhantomSpec { te_ms: vec![5.0, 5.0], ..small_spec() }).is_err());
    }
}
