//! JSON run configuration shared by the command-line tool, the benchmark and
//! the Python bindings. Every section is optional except the top-level seed;
//! unknown keys are rejected.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::espirit::EspiritParams;
use crate::grappa::{GrappaGeometry, GrappaMode, DEFAULT_LAMBDA};
use crate::nn::TrainConfig;
use crate::phantom::{head_ellipsoids, scaled_ellipsoids, PhantomSpec};
use crate::recon::TargetMaps;
use crate::sampling::{make_elliptical_mask, make_kyt_mask, make_uniform_mask, AcsBox, PatternKind, SamplingMask};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Seeds the phantom noise/coils and the network initialisation.
    pub seed: u64,
    #[serde(default)]
    pub phantom: PhantomSpec,
    #[serde(default)]
    pub mask: MaskConfig,
    #[serde(default)]
    pub espirit: EspiritParams,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub recon: ReconConfig,
    #[serde(default)]
    pub bench: BenchConfig,
    #[serde(default)]
    pub fit: FitConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaskConfig {
    pub kind: PatternKind,
    /// Undersampling along the first pattern axis (ignored for ky–t).
    pub r1: usize,
    /// Undersampling along the second pattern axis, or the ky period for ky–t.
    pub r2: usize,
    pub shift: usize,
    /// Centered ACS extents; `null` for no ACS.
    pub acs: Option<[usize; 2]>,
    /// Move the lattice by one sample per echo along its second direction.
    pub echo_shifted: bool,
}

impl Default for MaskConfig {
    fn default() -> Self {
        MaskConfig { kind: PatternKind::Uniform, r1: 3, r2: 3, shift: 0, acs: Some([24, 24]), echo_shifted: false }
    }
}

impl MaskConfig {
    /// Masks for `echoes` echoes over a pattern grid of `extents`
    /// (`[ny, nz]`, or `[ny, nt]` for ky–t).
    pub fn build(&self, extents: [usize; 2], echoes: usize) -> Result<Vec<SamplingMask>> {
        let acs = self.acs.map(|len| AcsBox::centered(extents, len)).transpose()?;
        let base = match self.kind {
            PatternKind::Uniform => make_uniform_mask(extents, self.r1, self.r2, self.shift, acs)?,
            PatternKind::Elliptical => make_elliptical_mask(extents, self.r1, self.r2, self.shift, acs)?,
            PatternKind::Kyt => make_kyt_mask(extents[0], extents[1], self.r2, self.shift, acs)?,
        };
        if !self.echo_shifted || echoes <= 1 {
            return Ok(vec![base]);
        }
        (0..echoes).map(|e| base.echo_shifted(e)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReconConfig {
    pub grappa: GrappaGeometry,
    pub grappa_mode: GrappaMode,
    pub lambda: f64,
    pub target_maps: TargetMaps,
    /// Voxels this close to a grid edge are left out of error metrics.
    pub metric_margin: usize,
}

impl Default for ReconConfig {
    fn default() -> Self {
        ReconConfig {
            grappa: GrappaGeometry::default(),
            grappa_mode: GrappaMode::default(),
            lambda: DEFAULT_LAMBDA,
            target_maps: TargetMaps::default(),
            metric_margin: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    pub methods: Vec<String>,
    /// Timed repetitions per method; the median is reported.
    pub repeats: usize,
    /// Run a one-step eRAKI training first, outside the timings.
    pub warmup: bool,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig { methods: vec!["grappa".into(), "raki".into(), "eraki".into()], repeats: 1, warmup: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitConfig {
    /// Echo times in ms; taken from the phantom section when absent.
    pub te_ms: Option<Vec<f64>>,
    /// Voxels whose echo magnitudes do not all exceed this fraction of the
    /// largest first-echo magnitude are left unfitted.
    pub threshold_fraction: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig { te_ms: None, threshold_fraction: 0.05 }
    }
}

impl RunConfig {
    pub fn new(seed: u64) -> Self {
        RunConfig {
            seed,
            phantom: PhantomSpec::default(),
            mask: MaskConfig::default(),
            espirit: EspiritParams::default(),
            train: TrainConfig::default(),
            recon: ReconConfig::default(),
            bench: BenchConfig::default(),
            fit: FitConfig::default(),
        }
    }

    /// Parses a config document. The top-level seed is copied into the
    /// phantom and training sections.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let own_ellipsoids = value.pointer("/phantom/ellipsoids").is_some();
        let mut cfg: RunConfig = serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))?;
        // the default head is sized to the configured grid
        if !own_ellipsoids {
            cfg.phantom.ellipsoids = scaled_ellipsoids(&head_ellipsoids(), cfg.phantom.extents);
        }
        cfg.apply_seed();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply_seed(&mut self) {
        self.phantom.seed = self.seed;
        self.train.seed = self.seed;
    }

    pub fn validate(&self) -> Result<()> {
        let wrap = |section: &str, r: Result<()>| r.map_err(|e| Error::Config(format!("{section}: {e}")));
        wrap("phantom", self.phantom.validate())?;
        wrap("espirit", self.espirit.validate())?;
        wrap("train", self.train.validate())?;
        if !(self.recon.lambda >= 0.0) {
            return Err(Error::Config(format!("recon.lambda must be non-negative, got {}", self.recon.lambda)));
        }
        if self.bench.repeats == 0 {
            return Err(Error::Config("bench.repeats must be at least 1".into()));
        }
        if !(self.fit.threshold_fraction >= 0.0) {
            return Err(Error::Config("fit.threshold_fraction must be non-negative".into()));
        }
        Ok(())
    }

    /// Effective config as pretty JSON, defaults included.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the compact JSON encoding.
    pub fn hash(&self) -> String {
        hex_digest(serde_json::to_vec(self).expect("config serializes").as_slice())
    }
}

pub fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
