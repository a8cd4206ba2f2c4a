//! Uniform front end over every reconstruction method, used by the command
//! line, the benchmark and the Python bindings.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use crate::config::ReconConfig;
use crate::error::{Error, Result};
use crate::espirit::coil_combine;
use crate::fft::ifftc;
use crate::grappa::{grappa_kyt, grappa_reconstruct};
use crate::layout::fourier_axes;
use crate::nn::ModelWeights;
use crate::recon::{combine_coils, reconstruct, ReconMode, ReconProblem};
use crate::tensor::{Axis, CTensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Zerofill,
    Grappa,
    Raki,
    Eraki,
    ErakiJoint,
    ErakiKyt,
}

impl Method {
    pub const ALL: [Method; 6] =
        [Method::Zerofill, Method::Grappa, Method::Raki, Method::Eraki, Method::ErakiJoint, Method::ErakiKyt];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Zerofill => "zerofill",
            Method::Grappa => "grappa",
            Method::Raki => "raki",
            Method::Eraki => "eraki",
            Method::ErakiJoint => "eraki-joint",
            Method::ErakiKyt => "eraki-kyt",
        }
    }

    fn learned(self) -> Option<ReconMode> {
        match self {
            Method::Raki => Some(ReconMode::Raki),
            Method::Eraki => Some(ReconMode::Eraki),
            Method::ErakiJoint => Some(ReconMode::ErakiJoint),
            Method::ErakiKyt => Some(ReconMode::ErakiKyt),
            Method::Zerofill | Method::Grappa => None,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown method `{s}`")))
    }
}

#[derive(Debug, Clone)]
pub struct MethodRun {
    pub method: Method,
    /// Per echo, canonical: multi-coil for zerofill/GRAPPA/RAKI, combined for eRAKI.
    pub kspace: Vec<CTensor>,
    /// Per echo coil-combined image `[readout, p0, p1]`.
    pub images: Vec<CTensor>,
    pub models: Vec<ModelWeights>,
    pub loss_histories: Vec<Vec<f64>>,
    /// Per model (or per echo for GRAPPA, where calibration and synthesis
    /// are timed together).
    pub learn_seconds: Vec<f64>,
    pub infer_seconds: f64,
}

impl MethodRun {
    pub fn total_learn_seconds(&self) -> f64 {
        self.learn_seconds.iter().sum()
    }

    /// Images stacked along a leading `echo` axis.
    pub fn image_stack(&self) -> Result<CTensor> {
        CTensor::stack(&self.images, Axis::Echo, 0)
    }
}

/// Runs `method` on `problem`. Maps come from the problem (estimated from
/// the ACS when absent).
pub fn run_method(problem: &ReconProblem, method: Method, recon: &ReconConfig) -> Result<MethodRun> {
    if let Some(mode) = method.learned() {
        let out = reconstruct(problem, mode)?;
        return Ok(MethodRun {
            method,
            kspace: out.kspace,
            images: out.images,
            models: out.models,
            loss_histories: out.loss_histories,
            learn_seconds: out.train_seconds,
            infer_seconds: out.infer_seconds,
        });
    }
    let maps = problem.full_maps()?;
    let mut run = MethodRun {
        method,
        kspace: Vec::new(),
        images: Vec::new(),
        models: Vec::new(),
        loss_histories: Vec::new(),
        learn_seconds: Vec::new(),
        infer_seconds: 0.0,
    };
    for (k, mask) in problem.echoes.iter().zip(&problem.masks) {
        let filled = match method {
            Method::Zerofill => k.clone(),
            _ => {
                let start = Instant::now();
                let out = if mask.axes == [Axis::Ky, Axis::T] {
                    grappa_kyt(k, mask, recon.grappa, recon.lambda)?
                } else {
                    grappa_reconstruct(k, mask, recon.grappa, recon.lambda, recon.grappa_mode)?
                };
                run.learn_seconds.push(start.elapsed().as_secs_f64());
                out
            }
        };
        run.images.push(combine_coils(&filled, &maps)?);
        run.kspace.push(filled);
    }
    Ok(run)
}

/// Coil-combined image of fully sampled canonical k-space with `problem`'s
/// maps, the reference every method is compared against.
pub fn reference_images(problem: &ReconProblem, full: &[CTensor]) -> Result<Vec<CTensor>> {
    let maps = problem.full_maps()?;
    full.iter()
        .map(|k| coil_combine(&ifftc(k, &fourier_axes(k.axes()))?, &maps.maps))
        .collect()
}

/// Metric mask over a `[readout, p0, p1]` image leaving out `margin` voxels at
/// every Fourier-axis edge.
pub fn margin_mask(image: &CTensor, margin: usize) -> Vec<bool> {
    let shape = image.shape();
    let fourier: Vec<bool> = image.axes().iter().map(|a| matches!(a, Axis::Kx | Axis::Ky | Axis::Kz)).collect();
    let strides = image.strides();
    (0..image.len())
        .map(|flat| {
            (0..shape.len()).all(|d| {
                let i = (flat / strides[d]) % shape[d];
                !fourier[d] || (i >= margin && i + margin < shape[d])
            })
        })
        .collect()
}
