//! File plumbing shared by the subcommands: config loading with overrides,
//! mask directories, content hashes and the per-directory manifest.

use std::fs;
use std::path::{Path, PathBuf};

use eraki_core::bundle::{header_path, load_bundle, payload_path, save_bundle};
use eraki_core::config::{hex_digest, RunConfig};
use eraki_core::espirit::{EspiritParams, SensitivityMaps};
use eraki_core::phantom::echoes_as_time;
use eraki_core::sampling::SamplingMask;
use eraki_core::{Axis, CTensor, Error, Result};
use serde_json::{json, Map, Value};

pub const MASK_DESCRIPTOR: &str = "descriptor.json";

/// Reads `path` (if any), applies `--set key=value` overrides and `--seed`,
/// then parses. Flags win over the file, the file over built-in defaults.
pub fn load_config(path: Option<&Path>, seed: Option<u64>, sets: &[String], require_seed: bool) -> Result<RunConfig> {
    let mut doc = match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?;
            serde_json::from_str::<Value>(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
        None => json!({}),
    };
    if !doc.is_object() {
        return Err(Error::Config("config must be a JSON object".into()));
    }
    for s in sets {
        apply_override(&mut doc, s)?;
    }
    if let Some(seed) = seed {
        doc["seed"] = json!(seed);
    }
    if doc.get("seed").is_none() {
        if require_seed {
            return Err(Error::Config("missing field `seed` (pass --config or --seed)".into()));
        }
        doc["seed"] = json!(0);
    }
    RunConfig::from_json(&doc.to_string())
}

fn apply_override(doc: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{assignment}` is not KEY=VALUE")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if part.is_empty() {
            return Err(Error::Config(format!("override key `{key}` has an empty segment")));
        }
        let obj = node
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("override `{key}`: `{}` is not a section", parts[..i].join("."))))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Map::new()));
    }
    Ok(())
}

/// A directory argument stands for the bundle `name` inside it.
pub fn resolve(path: &Path, name: &str) -> PathBuf {
    if path.is_dir() {
        path.join(name)
    } else {
        path.to_path_buf()
    }
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

pub fn write_json(path: &Path, value: &Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn read_json(path: &Path) -> Result<Value> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

pub fn save(x: &CTensor, dir: &Path, name: &str, meta: Map<String, Value>) -> Result<()> {
    save_bundle(x, dir.join(name), meta)
}

pub fn real_mask(axes: &[Axis], shape: &[usize], keep: &[bool]) -> Result<CTensor> {
    let vals: Vec<f64> = keep.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
    CTensor::from_real(axes.to_vec(), shape.to_vec(), &vals)
}

pub fn save_masks(dir: &Path, masks: &[SamplingMask]) -> Result<Vec<String>> {
    let names: Vec<String> =
        if masks.len() == 1 { vec!["mask".into()] } else { (0..masks.len()).map(|e| format!("mask_{e}")).collect() };
    for (m, name) in masks.iter().zip(&names) {
        let (t, meta) = m.to_tensor();
        save(&t, dir, name, meta)?;
    }
    Ok(names)
}

fn mask_names(dir: &Path) -> Result<Vec<String>> {
    let desc = read_json(&dir.join(MASK_DESCRIPTOR))?;
    let names = desc
        .get("masks")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::Shape(format!("{} lists no masks", dir.join(MASK_DESCRIPTOR).display())))?;
    names
        .iter()
        .map(|v| v.as_str().map(str::to_string).ok_or_else(|| Error::Shape("mask names must be strings".into())))
        .collect()
}

/// Masks from a directory written by `eraki mask`, or a single mask bundle.
pub fn load_masks(path: &Path) -> Result<Vec<SamplingMask>> {
    let stems: Vec<PathBuf> = if path.is_dir() {
        mask_names(path)?.iter().map(|n| path.join(n)).collect()
    } else {
        vec![path.to_path_buf()]
    };
    stems
        .iter()
        .map(|s| {
            let (t, meta) = load_bundle(s)?;
            SamplingMask::from_tensor(&t, &meta)
        })
        .collect()
}

/// Multi-coil k-space from a bundle. When the masks sample `(ky, t)` and the
/// data holds echoes instead, echoes become time points.
pub fn load_kspace(stem: &Path, masks: &[SamplingMask]) -> Result<CTensor> {
    let (x, _) = load_bundle(resolve(stem, "kspace"))?;
    if masks[0].axes.contains(&Axis::T) && !x.has_axis(Axis::T) && x.has_axis(Axis::Echo) {
        return echoes_as_time(&x);
    }
    Ok(x)
}

pub fn load_maps(dir: &Path, params: EspiritParams) -> Result<SensitivityMaps> {
    let (maps, _) = load_bundle(resolve(dir, "maps"))?;
    let eig_stem = if dir.is_dir() { dir.join("eigval") } else { dir.with_file_name("eigval") };
    let (eigval, _) = load_bundle(eig_stem)?;
    Ok(SensitivityMaps { maps, eigval, params })
}

/// SHA-256 over a bundle's header and payload.
pub fn hash_bundle(stem: &Path) -> Result<String> {
    let mut bytes = fs::read(header_path(stem))?;
    bytes.extend(fs::read(payload_path(stem))?);
    Ok(hex_digest(&bytes))
}

/// SHA-256 over a mask directory (descriptor plus every listed bundle) or a
/// single mask bundle.
pub fn hash_masks(path: &Path) -> Result<String> {
    if !path.is_dir() {
        return hash_bundle(path);
    }
    let mut bytes = fs::read(path.join(MASK_DESCRIPTOR))?;
    for n in mask_names(path)? {
        bytes.extend(hash_bundle(&path.join(n))?.into_bytes());
    }
    Ok(hex_digest(&bytes))
}

pub fn hash_file(path: &Path) -> Result<String> {
    Ok(hex_digest(&fs::read(path)?))
}

/// Writes `manifest.json`: everything needed to replay the command.
pub fn write_manifest(dir: &Path, command: &str, cfg: Option<&RunConfig>, inputs: &[(&str, String)]) -> Result<()> {
    let mut hashes = Map::new();
    for (role, h) in inputs {
        hashes.insert(role.to_string(), json!(h));
    }
    let manifest = json!({
        "tool": "eraki",
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "seed": cfg.map(|c| c.seed),
        "config_hash": cfg.map(RunConfig::hash),
        "config": cfg.map(|c| serde_json::to_value(c).expect("config serializes")),
        "threads": rayon::current_num_threads(),
        "inputs": hashes,
    });
    write_json(&dir.join("manifest.json"), &manifest)
}
