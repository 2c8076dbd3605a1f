//! Checkpoint directory: `model.manifest` (text) and `model.bin` (tensors in manifest order).

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use cal_tensor::Tensor;

use crate::error::{AttentionError, Result};
use crate::model::{AttentionModel, ModelConfig, Param};

pub const MANIFEST_FILE: &str = "model.manifest";
pub const WEIGHTS_FILE: &str = "model.bin";
const FORMAT_TAG: &str = "cal-checkpoint";

fn bad(path: &Path, reason: impl Into<String>) -> AttentionError {
    AttentionError::Checkpoint {
        path: path.display().to_string(),
        reason: reason.into(),
    }
}

pub fn manifest_text(model: &AttentionModel) -> String {
    let c = model.config();
    let mut s = format!(
        "format={FORMAT_TAG}\nversion=1\ndepth={}\nheads={}\nclasses={}\nnormalize_attention={}\nseed={}\nparams={}\n",
        c.depth,
        c.heads,
        c.classes,
        c.normalize_attention,
        c.seed,
        model.params().len()
    );
    for p in model.params() {
        let dims: Vec<String> = p.tensor.shape().iter().map(|d| d.to_string()).collect();
        s.push_str(&format!("param {} {}\n", p.name, dims.join(",")));
    }
    s
}

pub fn save_checkpoint(model: &AttentionModel, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(MANIFEST_FILE), manifest_text(model))?;
    let mut w = BufWriter::new(File::create(dir.join(WEIGHTS_FILE))?);
    for p in model.params() {
        p.tensor.write_to(&mut w)?;
    }
    w.flush()?;
    Ok(())
}

fn parse_config(path: &Path, text: &str) -> Result<(ModelConfig, Vec<(String, Vec<usize>)>)> {
    let mut config = ModelConfig::new(2);
    let mut declared = None;
    let mut params = Vec::new();
    let mut saw_format = false;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix("param ") {
            let mut it = rest.split_whitespace();
            let (Some(name), Some(dims), None) = (it.next(), it.next(), it.next()) else {
                return Err(bad(
                    path,
                    format!("line {}: malformed param entry", lineno + 1),
                ));
            };
            let dims = dims
                .split(',')
                .map(|d| d.parse::<usize>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| bad(path, format!("line {}: {e}", lineno + 1)))?;
            params.push((name.to_string(), dims));
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(bad(
                path,
                format!("line {}: expected key=value", lineno + 1),
            ));
        };
        let num = || {
            value
                .parse::<u64>()
                .map_err(|e| bad(path, format!("line {}: {key}: {e}", lineno + 1)))
        };
        match key {
            "format" if value == FORMAT_TAG => saw_format = true,
            "format" => return Err(bad(path, format!("unknown format {value:?}"))),
            "version" if value == "1" => {}
            "version" => return Err(bad(path, format!("unsupported version {value}"))),
            "depth" => config.depth = num()? as usize,
            "heads" => config.heads = num()? as usize,
            "classes" => config.classes = num()? as usize,
            "seed" => config.seed = num()?,
            "params" => declared = Some(num()? as usize),
            "normalize_attention" => {
                config.normalize_attention = value
                    .parse()
                    .map_err(|_| bad(path, format!("normalize_attention: {value:?}")))?
            }
            other => return Err(bad(path, format!("unknown key {other:?}"))),
        }
    }
    if !saw_format {
        return Err(bad(path, "missing format line"));
    }
    if declared != Some(params.len()) {
        return Err(bad(
            path,
            format!("declares {declared:?} params but lists {}", params.len()),
        ));
    }
    Ok((config, params))
}

pub fn load_checkpoint(dir: &Path) -> Result<AttentionModel> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let text =
        fs::read_to_string(&manifest_path).map_err(|e| bad(&manifest_path, e.to_string()))?;
    let (config, listed) = parse_config(&manifest_path, &text)?;
    let weights_path = dir.join(WEIGHTS_FILE);
    let mut r =
        BufReader::new(File::open(&weights_path).map_err(|e| bad(&weights_path, e.to_string()))?);
    let mut offset = 0;
    let mut params = Vec::with_capacity(listed.len());
    for (name, dims) in listed {
        let tensor = Tensor::read_from(&mut r, &mut offset)
            .map_err(|e| bad(&weights_path, format!("{name}: {e}")))?;
        if tensor.shape() != dims.as_slice() {
            return Err(bad(
                &weights_path,
                format!(
                    "{name}: manifest shape {dims:?}, stored {:?}",
                    tensor.shape()
                ),
            ));
        }
        params.push(Param { name, tensor });
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(bad(
            &weights_path,
            format!("{} trailing bytes at {offset}", rest.len()),
        ));
    }
    AttentionModel::from_params(config, params)
}
