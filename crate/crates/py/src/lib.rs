//! Python bindings. Tensors cross the boundary as interleaved little-endian
//! complex128 bytes plus axis labels and shape; configs as JSON strings.

use std::collections::HashMap;

use eraki_core::bench::run_bench;
use eraki_core::bundle::{encode_payload, load_bundle, save_bundle};
use eraki_core::config::RunConfig;
use eraki_core::metrics;
use eraki_core::phantom::make_phantom;
use eraki_core::pipeline::{run_method, Method};
use eraki_core::quantmap;
use eraki_core::recon::ReconProblem;
use eraki_core::sampling::SamplingMask;
use eraki_core::{Axis, CTensor, Error, ErrorKind, C64};
use pyo3::exceptions::{PyArithmeticError, PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyDict};

fn to_py(e: Error) -> PyErr {
    match (&e, e.kind()) {
        (Error::Io(_), _) => PyOSError::new_err(e.to_string()),
        (_, ErrorKind::Numerical) => PyArithmeticError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn config(json: &str) -> PyResult<RunConfig> {
    RunConfig::from_json(json).map_err(to_py)
}

/// Complex tensor with labelled axes.
#[pyclass(name = "Tensor", module = "eraki", from_py_object)]
#[derive(Clone)]
pub struct PyTensor {
    inner: CTensor,
}

fn decode_bytes(data: &[u8], n: usize) -> PyResult<Vec<C64>> {
    if data.len() != 16 * n {
        return Err(PyValueError::new_err(format!("expected {} bytes for {n} values, got {}", 16 * n, data.len())));
    }
    Ok(data
        .chunks_exact(16)
        .map(|c| C64::new(f64::from_le_bytes(c[..8].try_into().unwrap()), f64::from_le_bytes(c[8..].try_into().unwrap())))
        .collect())
}

#[pymethods]
impl PyTensor {
    /// `data` holds interleaved little-endian (re, im) float64 pairs.
    #[new]
    fn new(axes: Vec<String>, shape: Vec<usize>, data: &[u8]) -> PyResult<Self> {
        let axes = axes.iter().map(|a| a.parse::<Axis>()).collect::<Result<Vec<_>, _>>().map_err(to_py)?;
        let vals = decode_bytes(data, shape.iter().product())?;
        Ok(PyTensor { inner: CTensor::new(axes, shape, vals).map_err(to_py)? })
    }

    #[getter]
    fn axes(&self) -> Vec<String> {
        self.inner.axes().iter().map(|a| a.as_str().to_string()).collect()
    }

    #[getter]
    fn shape(&self) -> Vec<usize> {
        self.inner.shape().to_vec()
    }

    fn to_bytes<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, &encode_payload(&self.inner))
    }

    fn magnitude(&self) -> Vec<f64> {
        self.inner.data().iter().map(|v| v.norm()).collect()
    }

    fn max_abs(&self) -> f64 {
        self.inner.max_abs()
    }

    fn select(&self, axis: &str, index: usize) -> PyResult<Self> {
        let axis = axis.parse::<Axis>().map_err(to_py)?;
        Ok(PyTensor { inner: self.inner.select(axis, index).map_err(to_py)? })
    }

    #[pyo3(signature = (stem, meta_json = None))]
    fn save(&self, stem: &str, meta_json: Option<&str>) -> PyResult<()> {
        let meta = match meta_json {
            Some(s) => serde_json::from_str(s).map_err(|e| PyValueError::new_err(e.to_string()))?,
            None => Default::default(),
        };
        save_bundle(&self.inner, stem, meta).map_err(to_py)
    }

    #[staticmethod]
    fn load(stem: &str) -> PyResult<Self> {
        Ok(PyTensor { inner: load_bundle(stem).map_err(to_py)?.0 })
    }

    fn __repr__(&self) -> String {
        format!("Tensor(axes={:?}, shape={:?})", self.axes(), self.inner.shape())
    }
}

/// Sampling mask over two pattern axes.
#[pyclass(name = "Mask", module = "eraki", from_py_object)]
#[derive(Clone)]
pub struct PyMask {
    inner: SamplingMask,
}

#[pymethods]
impl PyMask {
    #[getter]
    fn axes(&self) -> Vec<String> {
        self.inner.axes.iter().map(|a| a.as_str().to_string()).collect()
    }

    #[getter]
    fn extents(&self) -> Vec<usize> {
        self.inner.extents.to_vec()
    }

    fn is_sampled(&self, i: usize, j: usize) -> bool {
        i < self.inner.extents[0] && j < self.inner.extents[1] && self.inner.is_sampled(i, j)
    }

    fn sampled_count(&self) -> usize {
        self.inner.sampled_count()
    }

    fn nominal_acceleration(&self) -> f64 {
        self.inner.nominal_acceleration()
    }

    fn effective_acceleration(&self) -> f64 {
        self.inner.effective_acceleration()
    }

    fn elliptical_factor(&self) -> f64 {
        self.inner.elliptical_factor()
    }

    fn save(&self, stem: &str) -> PyResult<()> {
        let (t, meta) = self.inner.to_tensor();
        save_bundle(&t, stem, meta).map_err(to_py)
    }

    #[staticmethod]
    fn load(stem: &str) -> PyResult<Self> {
        let (t, meta) = load_bundle(stem).map_err(to_py)?;
        Ok(PyMask { inner: SamplingMask::from_tensor(&t, &meta).map_err(to_py)? })
    }
}

/// Phantom bundles keyed by name: kspace, images, sens_true, reference,
/// t2_true, t2star_true.
#[pyfunction]
fn make_phantom_from_config(py: Python<'_>, config_json: &str) -> PyResult<HashMap<String, PyTensor>> {
    let cfg = config(config_json)?;
    let ph = py.detach(|| make_phantom(&cfg.phantom)).map_err(to_py)?;
    let mut out = HashMap::new();
    for (name, t) in [
        ("kspace", ph.kspace),
        ("images", ph.images),
        ("sens_true", ph.sens_true),
        ("reference", ph.reference),
        ("t2_true", ph.t2_true),
        ("t2star_true", ph.t2star_true),
    ] {
        out.insert(name.to_string(), PyTensor { inner: t });
    }
    Ok(out)
}

/// Masks for the configured grid: one, or one per echo when echo-shifted.
#[pyfunction]
fn make_masks(config_json: &str) -> PyResult<Vec<PyMask>> {
    let cfg = config(config_json)?;
    let [_, ny, nz] = cfg.phantom.extents;
    let ne = cfg.phantom.te_ms.len();
    let extents = if cfg.mask.kind == eraki_core::sampling::PatternKind::Kyt { [ny, ne] } else { [ny, nz] };
    let masks = cfg.mask.build(extents, ne).map_err(to_py)?;
    Ok(masks.into_iter().map(|inner| PyMask { inner }).collect())
}

fn problem(kspace: &PyTensor, masks: &[PyMask], cfg: &RunConfig) -> PyResult<ReconProblem> {
    let masks: Vec<SamplingMask> = masks.iter().map(|m| m.inner.clone()).collect();
    let mut data = kspace.inner.clone();
    if masks.first().is_some_and(|m| m.axes.contains(&Axis::T)) && !data.has_axis(Axis::T) && data.has_axis(Axis::Echo) {
        data = eraki_core::phantom::echoes_as_time(&data).map_err(to_py)?;
    }
    let mut p = ReconProblem::new(&data, masks, cfg.train.clone()).map_err(to_py)?;
    p.espirit = cfg.espirit;
    p.target_maps = cfg.recon.target_maps;
    Ok(p)
}

/// ESPIRiT maps and leading eigenvalues from the ACS of `kspace`.
#[pyfunction]
fn espirit_maps(py: Python<'_>, kspace: PyTensor, masks: Vec<PyMask>, config_json: &str) -> PyResult<(PyTensor, PyTensor)> {
    let cfg = config(config_json)?;
    let p = problem(&kspace, &masks, &cfg)?;
    let m = py.detach(|| p.full_maps()).map_err(to_py)?;
    Ok((PyTensor { inner: m.maps }, PyTensor { inner: m.eigval }))
}

/// Runs one method (`zerofill`, `grappa`, `raki`, `eraki`, `eraki-joint`,
/// `eraki-kyt`). Returns a dict with `images`, `kspace`, `model_count`,
/// `final_loss`, `learn_seconds` and `infer_seconds`.
#[pyfunction]
fn reconstruct<'py>(
    py: Python<'py>,
    method: &str,
    kspace: PyTensor,
    masks: Vec<PyMask>,
    config_json: &str,
) -> PyResult<Bound<'py, PyDict>> {
    let method: Method = method.parse().map_err(to_py)?;
    let cfg = config(config_json)?;
    let p = problem(&kspace, &masks, &cfg)?;
    let run = py
        .detach(|| {
            let mut p = p;
            p.maps = Some(p.full_maps()?);
            run_method(&p, method, &cfg.recon)
        })
        .map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("images", PyTensor { inner: run.image_stack().map_err(to_py)? })?;
    d.set_item("kspace", PyTensor { inner: CTensor::stack(&run.kspace, Axis::Echo, 0).map_err(to_py)? })?;
    d.set_item("model_count", run.models.len())?;
    d.set_item("final_loss", run.loss_histories.iter().map(|h| h.last().copied()).collect::<Vec<_>>())?;
    d.set_item("learn_seconds", run.total_learn_seconds())?;
    d.set_item("infer_seconds", run.infer_seconds)?;
    Ok(d)
}

/// Magnitude NRMSE.
#[pyfunction]
fn nrmse(x: PyTensor, reference: PyTensor) -> PyResult<f64> {
    metrics::nrmse(&x.inner, &reference.inner).map_err(to_py)
}

#[pyfunction]
fn psnr(x: PyTensor, reference: PyTensor) -> PyResult<f64> {
    metrics::psnr(&x.inner, &reference.inner).map_err(to_py)
}

/// Log-linear decay fit. Returns `(t_map, s0_map, r2_map, valid)`.
#[pyfunction]
fn fit_decay(images: PyTensor, te_ms: Vec<f64>, threshold: f64) -> PyResult<(PyTensor, PyTensor, PyTensor, Vec<bool>)> {
    let f = quantmap::fit_decay(&images.inner, &te_ms, threshold).map_err(to_py)?;
    Ok((PyTensor { inner: f.t_map }, PyTensor { inner: f.s0_map }, PyTensor { inner: f.r2_map }, f.valid))
}

/// Benchmark report as JSON, and its text table.
#[pyfunction]
fn run_benchmark(py: Python<'_>, config_json: &str) -> PyResult<(String, String)> {
    let cfg = config(config_json)?;
    let report = py.detach(|| run_bench(&cfg)).map_err(to_py)?;
    let json = serde_json::to_string_pretty(&report).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok((json, report.to_table()))
}

/// Effective config with every default filled in.
#[pyfunction]
fn effective_config(config_json: &str) -> PyResult<String> {
    Ok(config(config_json)?.to_json())
}

#[pymodule]
fn eraki(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTensor>()?;
    m.add_class::<PyMask>()?;
    m.add_function(wrap_pyfunction!(make_phantom_from_config, m)?)?;
    m.add_function(wrap_pyfunction!(make_masks, m)?)?;
    m.add_function(wrap_pyfunction!(espirit_maps, m)?)?;
    m.add_function(wrap_pyfunction!(reconstruct, m)?)?;
    m.add_function(wrap_pyfunction!(nrmse, m)?)?;
    m.add_function(wrap_pyfunction!(psnr, m)?)?;
    m.add_function(wrap_pyfunction!(fit_decay, m)?)?;
    m.add_function(wrap_pyfunction!(run_benchmark, m)?)?;
    m.add_function(wrap_pyfunction!(effective_config, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bytes_round_trip_through_payload_encoding() {
        let x = CTensor::new(vec![Axis::Kx], vec![2], vec![C64::new(1.5, -2.0), C64::new(0.0, 3.25)]).unwrap();
        let bytes = encode_payload(&x);
        assert_eq!(decode_bytes(&bytes, 2).unwrap(), x.data());
        assert!(decode_bytes(&bytes[..31], 2).is_err());
    }
}
