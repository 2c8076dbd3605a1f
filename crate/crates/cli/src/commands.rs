use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use cal_attention::{load_checkpoint, save_checkpoint, AttentionModel};
use cal_eval::{attention_box, evaluate_bundle, predict_samples, EvalOptions};
use cal_synthdata::{
    generate_dataset, load_bundle, make_retrieval_split, save_bundle, DatasetBundle,
    SyntheticSample,
};
use cal_train::{run_ablation, run_experiment, AblationAxis, TrainError};

use crate::config::{Mode, RunConfig};
use crate::error::{CliError, Result};
use crate::render;

pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const EVAL_FILE: &str = "eval_summary.csv";
pub const BOXES_FILE: &str = "boxes.csv";

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_echo(config: &RunConfig, dir: &Path) -> Result<()> {
    write(&dir.join(config.echo_file()), config.echo())
}

fn eval_options(config: &RunConfig) -> Result<EvalOptions> {
    if !(config.threshold > 0.0 && config.threshold < 1.0) {
        return Err(CliError::usage(format!(
            "threshold must lie strictly between 0 and 1, got {}",
            config.threshold
        )));
    }
    let threads = match config.threads {
        0 => std::thread::available_parallelism().map_or(1, usize::from),
        n => n,
    };
    Ok(EvalOptions {
        threads,
        threshold_fraction: config.threshold,
        ..EvalOptions::default()
    })
}

fn load_data(config: &RunConfig) -> Result<DatasetBundle> {
    let dir = config.require_data()?;
    if !dir.join(cal_synthdata::MANIFEST_FILE).is_file() {
        return Err(CliError::usage(format!(
            "no dataset at {}: {} not found",
            dir.display(),
            cal_synthdata::MANIFEST_FILE
        )));
    }
    Ok(load_bundle(dir)?)
}

fn load_model(config: &RunConfig) -> Result<AttentionModel> {
    let dir = config.require_checkpoint()?;
    if !dir.join(cal_attention::MANIFEST_FILE).is_file() {
        return Err(CliError::usage(format!(
            "no checkpoint at {}: {} not found",
            dir.display(),
            cal_attention::MANIFEST_FILE
        )));
    }
    Ok(load_checkpoint(dir)?)
}

/// Rejects a checkpoint whose classes or input stride do not fit the dataset.
pub fn check_shapes(model: &AttentionModel, bundle: &DatasetBundle) -> Result<()> {
    let c = model.config();
    let spec = bundle.spec();
    let classes_fit =
        matches!(bundle, DatasetBundle::Retrieval { .. }) || c.classes == spec.num_classes;
    let stride = c.downsample_factor();
    if classes_fit && spec.image_size % stride == 0 {
        return Ok(());
    }
    Err(CliError::usage(format!(
        "checkpoint shape (classes {}, depth {}, input side divisible by {stride}) does not match \
         dataset shape (classes {}, images 3x{s}x{s})",
        c.classes,
        c.depth,
        spec.num_classes,
        s = spec.image_size
    )))
}

fn split_counts(bundle: &DatasetBundle) -> String {
    match bundle {
        DatasetBundle::Classification { train, test, .. } => {
            format!("train {}, test {}", train.len(), test.len())
        }
        DatasetBundle::Retrieval { split, .. } => format!(
            "train {}, query {}, gallery {}",
            split.train.len(),
            split.query.len(),
            split.gallery.len()
        ),
    }
}

pub fn gen(config: &RunConfig) -> Result<String> {
    let out = config.require_out()?;
    let mode = config.mode.unwrap_or(Mode::Classification);
    let spec = config.spec.clone();
    let checked = match mode {
        Mode::Classification => spec.validate(),
        Mode::Retrieval => spec.validate_retrieval(),
    };
    checked.map_err(|e| {
        CliError::usage(format!(
            "{e}\nusage: cal gen --out DIR [--rho 0..1] [--classes N] ..."
        ))
    })?;
    create_dir(out)?;
    let bundle = match mode {
        Mode::Classification => {
            let (train, test) = generate_dataset(&spec)?;
            DatasetBundle::Classification { spec, train, test }
        }
        Mode::Retrieval => {
            let split = make_retrieval_split(&spec)?;
            DatasetBundle::Retrieval { spec, split }
        }
    };
    save_bundle(&bundle, out)?;
    write_echo(config, out)?;
    let spec = bundle.spec();
    Ok(format!(
        "{} dataset in {}: {}; rho {}, seed {}\n",
        bundle.mode(),
        out.display(),
        split_counts(&bundle),
        spec.bias_strength,
        spec.seed
    ))
}

fn check_train_config(config: &RunConfig, bundle: &DatasetBundle) -> Result<()> {
    let usage = |e: TrainError| CliError::usage(e.to_string());
    config.train.validate().map_err(usage)?;
    config
        .train
        .model_config(bundle.train_classes())
        .validate()
        .map_err(|e| CliError::usage(e.to_string()))?;
    bundle
        .spec()
        .check_depth(config.train.depth)
        .map_err(|e| CliError::usage(e.to_string()))
}

pub fn train(config: &RunConfig) -> Result<String> {
    let out = config.require_out()?;
    let bundle = load_data(config)?;
    check_train_config(config, &bundle)?;
    let options = eval_options(config)?;
    create_dir(out)?;
    let start = Instant::now();
    let (model, report) = run_experiment(&bundle, &config.train, &options)?;
    save_checkpoint(&model, out)?;
    write(&out.join(METRICS_FILE), report.epochs_csv())?;
    write(&out.join(SUMMARY_FILE), report.summary_csv())?;
    write_echo(config, out)?;
    let mut text = report.summary_csv();
    let _ = writeln!(
        text,
        "trained {} epochs in {:.1}s; checkpoint in {}",
        report.epochs.len(),
        start.elapsed().as_secs_f64(),
        out.display()
    );
    Ok(text)
}

pub fn eval(config: &RunConfig) -> Result<String> {
    let model = load_model(config)?;
    let bundle = load_data(config)?;
    let options = eval_options(config)?;
    let mode = match (config.mode, &bundle) {
        (None, _)
        | (Some(Mode::Classification), DatasetBundle::Classification { .. })
        | (Some(Mode::Retrieval), DatasetBundle::Retrieval { .. }) => bundle.mode(),
        (Some(Mode::Retrieval), DatasetBundle::Classification { .. }) => {
            return Err(CliError::usage(format!(
                "--mode retrieval needs a dataset with identities; {} holds a classification dataset",
                config.require_data()?.display()
            )))
        }
        (Some(Mode::Classification), DatasetBundle::Retrieval { .. }) => {
            return Err(CliError::usage(format!(
                "--mode classification needs a dataset with a test split; {} holds a retrieval dataset",
                config.require_data()?.display()
            )))
        }
    };
    check_shapes(&model, &bundle)?;
    let out = config
        .out
        .as_deref()
        .unwrap_or(config.require_checkpoint()?);
    create_dir(out)?;
    let report = evaluate_bundle(&model, &bundle, &options)?;
    let summary = report.summary_csv();
    write(&out.join(EVAL_FILE), &summary)?;
    write_echo(config, out)?;
    Ok(format!("mode {mode}\n{summary}"))
}

fn split_samples<'a>(bundle: &'a DatasetBundle, name: &str) -> Result<&'a [SyntheticSample]> {
    let found = match (bundle, name) {
        (DatasetBundle::Classification { train, .. }, "train") => Some(train),
        (DatasetBundle::Classification { test, .. }, "test") => Some(test),
        (DatasetBundle::Retrieval { split, .. }, "train") => Some(&split.train),
        (DatasetBundle::Retrieval { split, .. }, "query") => Some(&split.query),
        (DatasetBundle::Retrieval { split, .. }, "gallery") => Some(&split.gallery),
        _ => None,
    };
    found.map(Vec::as_slice).ok_or_else(|| {
        let valid = match bundle {
            DatasetBundle::Classification { .. } => "train, test",
            DatasetBundle::Retrieval { .. } => "train, query, gallery",
        };
        CliError::usage(format!(
            "unknown split {name:?} for a {} dataset; valid splits: {valid}",
            bundle.mode()
        ))
    })
}

pub fn visualize(config: &RunConfig) -> Result<String> {
    let out = config.require_out()?;
    let model = load_model(config)?;
    let bundle = load_data(config)?;
    let options = eval_options(config)?;
    check_shapes(&model, &bundle)?;
    let default_split = match bundle {
        DatasetBundle::Classification { .. } => "test",
        DatasetBundle::Retrieval { .. } => "query",
    };
    let split_name = config.split.as_deref().unwrap_or(default_split);
    let samples = split_samples(&bundle, split_name)?;
    if config.samples.is_empty() {
        return Err(CliError::usage("visualize needs at least one sample index"));
    }
    if let Some(&bad) = config.samples.iter().find(|&&i| i >= samples.len()) {
        return Err(CliError::usage(format!(
            "sample index {bad} out of range: the {split_name} split has {} samples",
            samples.len()
        )));
    }
    create_dir(out)?;
    let chosen: Vec<SyntheticSample> = config.samples.iter().map(|&i| samples[i].clone()).collect();
    let pred = predict_samples(&model, &chosen, &options)?;
    let s = pred.attention.shape();
    let (heads, h, w) = (s[1], s[2], s[3]);
    let per_sample = heads * h * w;
    let size = bundle.spec().image_size;
    let mut boxes =
        String::from("sample,label,gt_x0,gt_y0,gt_x1,gt_y1,att_x0,att_y0,att_x1,att_y1,iou\n");
    for ((&index, sample), maps) in config
        .samples
        .iter()
        .zip(&chosen)
        .zip(pred.attention.data().chunks(per_sample))
    {
        let stem = format!("{split_name}_{index:04}");
        let save = |suffix: &str, image: &cal_synthdata::PpmImage| -> Result<()> {
            let path = out.join(format!("{stem}_{suffix}.ppm"));
            image.save(&path).map_err(CliError::from)
        };
        save(
            "original",
            &cal_synthdata::PpmImage::from_tensor(&sample.image)?,
        )?;
        for (m, image) in render::head_heatmaps(maps, h, w, size)?.iter().enumerate() {
            save(&format!("head{m:02}"), image)?;
        }
        let attended = attention_box(maps, h, w, size, config.threshold)?;
        save(
            "overlay",
            &render::overlay(
                &sample.image,
                maps,
                h,
                w,
                &sample.object_bbox,
                attended.as_ref(),
            )?,
        )?;
        let g = sample.object_bbox;
        let (att, iou) = match attended {
            Some(b) => (
                format!("{},{},{},{}", b.x0, b.y0, b.x1, b.y1),
                format!("{:.6}", b.iou(&g)),
            ),
            None => (",,,".to_string(), format!("{:.6}", 0.0)),
        };
        let _ = writeln!(
            boxes,
            "{index},{},{},{},{},{},{att},{iou}",
            sample.class_label, g.x0, g.y0, g.x1, g.y1
        );
    }
    write(&out.join(BOXES_FILE), &boxes)?;
    write_echo(config, out)?;
    Ok(format!(
        "{} samples from the {split_name} split, {heads} heads each, in {}\n",
        chosen.len(),
        out.display()
    ))
}

/// File name of the ablation table for `axis`.
pub fn ablation_file(axis: AblationAxis) -> String {
    format!("ablation_{}.csv", axis.name())
}

/// File name of the per-run listing for `axis`.
pub fn ablation_runs_file(axis: AblationAxis) -> String {
    format!("ablation_{}_runs.csv", axis.name())
}

pub fn ablate(config: &RunConfig) -> Result<String> {
    let out = config.require_out()?;
    let usage = |e: TrainError| CliError::usage(e.to_string());
    if config.axes.is_empty() {
        return Err(CliError::usage(format!(
            "ablate needs --axis; valid axes: {}",
            AblationAxis::ALL.join(", ")
        )));
    }
    let axes = config
        .axes
        .iter()
        .map(|a| a.parse::<AblationAxis>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(usage)?;
    if config.values.is_some() && axes.len() > 1 {
        return Err(CliError::usage("--values applies to a single --axis"));
    }
    if config.seeds == 0 {
        return Err(CliError::usage("--seeds must be at least 1"));
    }
    let bundle = load_data(config)?;
    let options = eval_options(config)?;
    let sweeps: Vec<(AblationAxis, Vec<String>)> = axes
        .into_iter()
        .map(|axis| {
            (
                axis,
                config
                    .values
                    .clone()
                    .unwrap_or_else(|| axis.default_values()),
            )
        })
        .collect();
    for (axis, values) in &sweeps {
        if values.is_empty() {
            return Err(CliError::usage(format!(
                "no values for axis {}",
                axis.name()
            )));
        }
        for value in values {
            let run = RunConfig {
                train: axis.apply(&config.train, value).map_err(usage)?,
                ..config.clone()
            };
            check_train_config(&run, &bundle)?;
        }
    }
    create_dir(out)?;
    let seeds: Vec<u64> = (0..config.seeds as u64)
        .map(|i| config.train.seed + i)
        .collect();
    let mut text = String::new();
    for (axis, values) in &sweeps {
        let table = run_ablation(&config.train, &bundle, *axis, values, &seeds, &options)?;
        let csv = table.to_csv();
        write(&out.join(ablation_file(*axis)), &csv)?;
        write(&out.join(ablation_runs_file(*axis)), table.runs_csv())?;
        text.push_str(&csv);
    }
    write_echo(config, out)?;
    Ok(text)
}
