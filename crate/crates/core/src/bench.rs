//! Learning/inference timing comparison of GRAPPA, per-coil RAKI and eRAKI on
//! one phantom scenario, reported as JSON and as a text table.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::Result;
use crate::layout::to_canonical;
use crate::metrics::nrmse_masked;
use crate::nn::TrainConfig;
use crate::phantom::{echoes_as_time, make_phantom};
use crate::pipeline::{margin_mask, run_method, Method, MethodRun};
use crate::recon::{train_eraki, ReconProblem};
use crate::sampling::PatternKind;
use crate::tensor::{Axis, CTensor};

/// Published ME-MPRAGE learning times, printed for context only.
pub const PUBLISHED_RAKI_LEARNING_S: f64 = 25600.0;
pub const PUBLISHED_ERAKI_LEARNING_S: f64 = 30.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub method: String,
    pub learn_seconds: Option<f64>,
    pub infer_seconds: Option<f64>,
    pub model_count: Option<usize>,
    /// Count with separate real and imaginary models per coil.
    pub split_models: Option<usize>,
    pub nrmse: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ratios {
    pub learn_raki_over_eraki_seconds: Option<f64>,
    pub infer_raki_over_eraki_seconds: Option<f64>,
    pub models_raki_over_eraki: Option<f64>,
    pub split_models_raki_over_eraki: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PublishedReference {
    pub raki_learning_seconds: f64,
    pub eraki_learning_seconds: f64,
    pub learning_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub cpu_model: String,
    pub threads: usize,
    pub os: String,
    pub arch: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub config_hash: String,
    pub seed: u64,
    pub coils: usize,
    pub echoes: usize,
    pub iterations: usize,
    pub repeats: usize,
    pub espirit_seconds: f64,
    pub methods: Vec<MethodReport>,
    pub ratios: Ratios,
    pub published_reference: PublishedReference,
    pub environment: Environment,
}

pub fn environment() -> Environment {
    let cpu_model = std::fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|s| {
            s.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split(':').nth(1))
                .map(|m| m.trim().to_string())
        })
        .unwrap_or_else(|| "unknown".into());
    Environment {
        cpu_model,
        threads: rayon::current_num_threads(),
        os: std::env::consts::OS.into(),
        arch: std::env::consts::ARCH.into(),
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

/// A reconstruction problem built from the phantom and mask sections of a
/// config, with its ground truth.
pub struct Scenario {
    pub problem: ReconProblem,
    /// Fully sampled canonical k-space per echo.
    pub full: Vec<CTensor>,
    /// True coil-combined image per echo, `[readout, p0, p1]`.
    pub truth: Vec<CTensor>,
}

pub fn scenario_problem(cfg: &RunConfig) -> Result<Scenario> {
    let ph = make_phantom(&cfg.phantom)?;
    let [_, ny, nz] = cfg.phantom.extents;
    let ne = cfg.phantom.te_ms.len();
    let kyt = cfg.mask.kind == PatternKind::Kyt;
    let (kspace, extents) = if kyt { (echoes_as_time(&ph.kspace)?, [ny, ne]) } else { (ph.kspace.clone(), [ny, nz]) };
    let truth = if kyt {
        vec![echoes_as_time(&ph.reference)?]
    } else {
        (0..ne).map(|e| ph.reference.select(Axis::Echo, e)).collect::<Result<Vec<_>>>()?
    };
    let masks = cfg.mask.build(extents, if cfg.mask.kind == PatternKind::Kyt { 1 } else { ne })?;
    let data = if kspace.has_axis(Axis::Echo) && ne == 1 { kspace.select(Axis::Echo, 0)? } else { kspace.clone() };
    let mut problem = ReconProblem::new(&data, masks.clone(), cfg.train.clone())?;
    problem.espirit = cfg.espirit;
    problem.target_maps = cfg.recon.target_maps;
    let full = if data.has_axis(Axis::Echo) {
        (0..ne)
            .map(|e| Ok(to_canonical(&data.select(Axis::Echo, e)?, &masks[e.min(masks.len() - 1)])?.0))
            .collect::<Result<Vec<_>>>()?
    } else {
        vec![to_canonical(&data, &masks[0])?.0]
    };
    Ok(Scenario { problem, full, truth })
}

/// Mean masked magnitude NRMSE over echoes.
pub fn mean_nrmse(run: &MethodRun, reference: &[CTensor], margin: usize) -> Result<f64> {
    let mut total = 0.0;
    for (img, r) in run.images.iter().zip(reference) {
        total += nrmse_masked(img, r, Some(&margin_mask(r, margin)))?;
    }
    Ok(total / reference.len() as f64)
}

fn model_counts(method: Method, coils: usize, run: &MethodRun) -> (usize, usize) {
    let echoes = run.images.len();
    match method {
        Method::Raki => (run.models.len(), 2 * run.models.len()),
        Method::Grappa => (coils * echoes, 2 * coils * echoes),
        Method::Zerofill => (0, 0),
        _ => (run.models.len(), run.models.len()),
    }
}

pub fn run_bench(cfg: &RunConfig) -> Result<BenchReport> {
    let Scenario { mut problem, truth: reference, .. } = scenario_problem(cfg)?;
    let start = Instant::now();
    let maps = problem.full_maps()?;
    let espirit_seconds = start.elapsed().as_secs_f64();
    problem.maps = Some(maps);

    if cfg.bench.warmup {
        let mut warm = problem.clone();
        warm.train = TrainConfig { iterations: 1, ..cfg.train.clone() };
        let _ = train_eraki(&warm, &[0]);
    }

    let mut reports = Vec::new();
    for name in &cfg.bench.methods {
        let mut report = MethodReport {
            method: name.clone(),
            learn_seconds: None,
            infer_seconds: None,
            model_count: None,
            split_models: None,
            nrmse: None,
            error: None,
        };
        let outcome = (|| -> Result<()> {
            let method: Method = name.parse()?;
            let mut learn = Vec::new();
            let mut infer = Vec::new();
            let mut first = None;
            for _ in 0..cfg.bench.repeats {
                let run = run_method(&problem, method, &cfg.recon)?;
                learn.push(run.total_learn_seconds());
                infer.push(run.infer_seconds);
                first.get_or_insert(run);
            }
            let run = first.expect("repeats >= 1");
            let (models, split) = model_counts(method, problem.coils(), &run);
            report.learn_seconds = Some(median(learn));
            report.infer_seconds = Some(median(infer));
            report.model_count = Some(models);
            report.split_models = Some(split);
            report.nrmse = Some(mean_nrmse(&run, &reference, cfg.recon.metric_margin)?);
            Ok(())
        })();
        if let Err(e) = outcome {
            report.error = Some(e.to_string());
        }
        reports.push(report);
    }

    let find = |m: &str| reports.iter().find(|r| r.method == m && r.error.is_none());
    let ratio = |a: Option<f64>, b: Option<f64>| match (a, b) {
        (Some(a), Some(b)) if b > 0.0 => Some(a / b),
        _ => None,
    };
    let (raki, eraki) = (find("raki"), find("eraki"));
    let ratios = Ratios {
        learn_raki_over_eraki_seconds: ratio(raki.and_then(|r| r.learn_seconds), eraki.and_then(|r| r.learn_seconds)),
        infer_raki_over_eraki_seconds: ratio(raki.and_then(|r| r.infer_seconds), eraki.and_then(|r| r.infer_seconds)),
        models_raki_over_eraki: ratio(
            raki.and_then(|r| r.model_count).map(|c| c as f64),
            eraki.and_then(|r| r.model_count).map(|c| c as f64),
        ),
        split_models_raki_over_eraki: ratio(
            raki.and_then(|r| r.split_models).map(|c| c as f64),
            eraki.and_then(|r| r.split_models).map(|c| c as f64),
        ),
    };

    Ok(BenchReport {
        config_hash: cfg.hash(),
        seed: cfg.seed,
        coils: problem.coils(),
        echoes: problem.echoes.len(),
        iterations: cfg.train.iterations,
        repeats: cfg.bench.repeats,
        espirit_seconds,
        methods: reports,
        ratios,
        published_reference: PublishedReference {
            raki_learning_seconds: PUBLISHED_RAKI_LEARNING_S,
            eraki_learning_seconds: PUBLISHED_ERAKI_LEARNING_S,
            learning_ratio: PUBLISHED_RAKI_LEARNING_S / PUBLISHED_ERAKI_LEARNING_S,
        },
        environment: environment(),
    })
}

fn cell(v: Option<f64>, unit: &str) -> String {
    v.map(|x| format!("{x:.3}{unit}")).unwrap_or_else(|| "-".into())
}

impl BenchReport {
    /// Rows of learning and reconstruction times per method, plus the map
    /// estimation column.
    pub fn to_table(&self) -> String {
        let mut header = vec!["".to_string()];
        header.extend(self.methods.iter().map(|m| m.method.clone()));
        header.push("espirit maps".into());
        let mut rows = vec![header];
        let mut row = |label: &str, f: &dyn Fn(&MethodReport) -> String, last: String| {
            let mut r = vec![label.to_string()];
            r.extend(self.methods.iter().map(f));
            r.push(last);
            rows.push(r);
        };
        row("learning time", &|m| cell(m.learn_seconds, "s"), format!("{:.3}s", self.espirit_seconds));
        row("reconstruction time", &|m| cell(m.infer_seconds, "s"), "".into());
        row("models", &|m| m.model_count.map(|c| c.to_string()).unwrap_or("-".into()), "".into());
        row(
            "models (re/im split)",
            &|m| m.split_models.map(|c| c.to_string()).unwrap_or("-".into()),
            "".into(),
        );
        row("nrmse", &|m| m.nrmse.map(|x| format!("{x:.4}")).unwrap_or("-".into()), "".into());
        let widths: Vec<usize> = (0..rows[0].len()).map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0)).collect();
        let mut out = String::new();
        for r in &rows {
            let line: Vec<String> = r.iter().zip(&widths).map(|(s, w)| format!("{s:>w$}")).collect();
            out.push_str(line.join("  ").trim_end());
            out.push('\n');
        }
        for m in &self.methods {
            if let Some(e) = &m.error {
                out.push_str(&format!("{} failed: {e}\n", m.method));
            }
        }
        out.push_str(&format!(
            "RAKI/eRAKI learning ratio: {}  (published ME-MPRAGE: {:.0}s / {:.0}s = {:.0}x)\n",
            self.ratios.learn_raki_over_eraki_seconds.map(|r| format!("{r:.2}x")).unwrap_or("-".into()),
            self.published_reference.raki_learning_seconds,
            self.published_reference.eraki_learning_seconds,
            self.published_reference.learning_ratio
        ));
        out
    }
}

/// Report JSON with every `*_seconds` field and the environment removed, for
/// reproducibility comparisons.
pub fn strip_times(report: &serde_json::Value) -> serde_json::Value {
    match report {
        serde_json::Value::Object(map) => serde_json::Value::Object(
            map.iter()
                .filter(|(k, _)| !k.ends_with("_seconds") && k.as_str() != "environment")
                .map(|(k, v)| (k.clone(), strip_times(v)))
                .collect(),
        ),
        serde_json::Value::Array(items) => serde_json::Value::Array(items.iter().map(strip_times).collect()),
        other => other.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Architecture;
    use crate::phantom::PhantomSpec;

    fn tiny() -> RunConfig {
        let mut cfg = RunConfig::new(3);
        cfg.phantom = PhantomSpec::head([8, 24, 24], 4);
        cfg.mask.r1 = 2;
        cfg.mask.r2 = 2;
        cfg.mask.acs = Some([14, 14]);
        cfg.train.architecture = Architecture { kernels: vec![[3, 3, 3], [1, 1, 1]], widths: vec![4] };
        cfg.train.iterations = 2;
        cfg.bench.methods = vec!["grappa".into(), "raki".into(), "eraki".into(), "bogus".into()];
        cfg.apply_seed();
        cfg
    }

    #[test]
    fn report_counts_and_failures() {
        let r = run_bench(&tiny()).unwrap();
        assert_eq!(r.methods.len(), 4);
        assert_eq!(r.methods[1].model_count, Some(4));
        assert_eq!(r.methods[1].split_models, Some(8));
        assert_eq!(r.methods[2].model_count, Some(1));
        assert_eq!(r.ratios.split_models_raki_over_eraki, Some(8.0));
        assert!(r.methods[3].error.as_deref().unwrap().contains("bogus"));
        assert!(r.methods.iter().filter_map(|m| m.learn_seconds).all(|t| t >= 0.0));
        let table = r.to_table();
        assert!(table.contains("learning time") && table.contains("853x"));
    }

    #[test]
    fn non_time_fields_reproduce() {
        let a = serde_json::to_value(run_bench(&tiny()).unwrap()).unwrap();
        let b = serde_json::to_value(run_bench(&tiny()).unwrap()).unwrap();
        assert_eq!(strip_times(&a), strip_times(&b));
        assert!(strip_times(&a).get("espirit_seconds").is_none());
    }

    #[test]
    fn median_picks_middle() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![5.0]), 5.0);
    }
}
