use std::fmt::Write as _;
use std::str::FromStr;

use cal_counterfactual::StrategyKind;
use cal_eval::{opt_field, EvalOptions, MetricsReport};
use cal_synthdata::DatasetBundle;

use crate::config::{Objective, TrainConfig};
use crate::error::{Result, TrainError};
use crate::experiment::run_experiment;

/// The setting varied across the runs of an ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationAxis {
    /// Counterfactual strategy, with the CAL objective.
    Strategy,
    /// Attention head count M.
    Heads,
    /// Training objective.
    Objective,
}

impl AblationAxis {
    pub const ALL: [&'static str; 3] = ["strategy", "M", "objective"];

    pub fn name(self) -> &'static str {
        match self {
            AblationAxis::Strategy => "strategy",
            AblationAxis::Heads => "M",
            AblationAxis::Objective => "objective",
        }
    }

    /// Values swept when none are given.
    pub fn default_values(self) -> Vec<String> {
        let owned = |v: &[&str]| v.iter().map(|s| s.to_string()).collect();
        match self {
            AblationAxis::Strategy => owned(&StrategyKind::ALL),
            AblationAxis::Heads => owned(&["1", "8", "32"]),
            AblationAxis::Objective => owned(&Objective::ALL),
        }
    }

    /// `base` with this axis set to `value`.
    pub fn apply(self, base: &TrainConfig, value: &str) -> Result<TrainConfig> {
        let mut config = base.clone();
        match self {
            AblationAxis::Strategy => {
                config.objective = Objective::Cal;
                config.strategy = value.parse()?;
            }
            AblationAxis::Heads => {
                config.heads = value.parse().map_err(|_| {
                    TrainError::Config(format!("head count must be an integer, got {value:?}"))
                })?;
            }
            AblationAxis::Objective => config.objective = value.parse()?,
        }
        config.validate()?;
        Ok(config)
    }
}

impl FromStr for AblationAxis {
    type Err = TrainError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "strategy" => Ok(AblationAxis::Strategy),
            "M" | "m" | "heads" => Ok(AblationAxis::Heads),
            "objective" => Ok(AblationAxis::Objective),
            other => Err(TrainError::UnknownAxis(other.to_string())),
        }
    }
}

#[derive(Debug, Clone)]
pub struct AblationRun {
    pub seed: u64,
    pub parameters: usize,
    pub report: MetricsReport,
}

#[derive(Debug, Clone)]
pub struct AblationRow {
    pub value: String,
    pub runs: Vec<AblationRun>,
}

#[derive(Debug, Clone)]
pub struct AblationTable {
    pub axis: AblationAxis,
    pub rows: Vec<AblationRow>,
}

/// Mean and sample standard deviation; the deviation is `None` below two values.
pub fn mean_sd(values: &[f64]) -> Option<(f64, Option<f64>)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = (values.len() > 1)
        .then(|| (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
    Some((mean, sd))
}

type Metric = fn(&MetricsReport) -> Option<f64>;

const METRICS: [(&str, Metric); 4] = [
    ("top1", |r| r.top1_accuracy),
    ("miou", |r| r.attention_miou),
    ("cmc1", |r| r.cmc_rank(1)),
    ("map", |r| r.map_score),
];

impl AblationRow {
    pub fn metric(&self, f: Metric) -> Option<(f64, Option<f64>)> {
        let values: Vec<f64> = self.runs.iter().filter_map(|r| f(&r.report)).collect();
        mean_sd(&values)
    }

    pub fn top1(&self) -> Option<(f64, Option<f64>)> {
        self.metric(|r| r.top1_accuracy)
    }

    pub fn miou(&self) -> Option<(f64, Option<f64>)> {
        self.metric(|r| r.attention_miou)
    }
}

impl AblationTable {
    /// One row per axis value with mean and sd of every metric over seeds.
    /// Wall-clock time is left out so reruns give identical files.
    pub fn to_csv(&self) -> String {
        let mut header = vec![self.axis.name().to_string(), "seeds".into()];
        for (name, _) in METRICS {
            header.push(format!("{name}_mean"));
            header.push(format!("{name}_sd"));
        }
        header.push("parameters".into());
        let mut out = header.join(",") + "\n";
        for row in &self.rows {
            let mut fields = vec![row.value.clone(), row.runs.len().to_string()];
            for (_, f) in METRICS {
                let stats = row.metric(f);
                fields.push(opt_field(stats.map(|s| s.0)));
                fields.push(opt_field(stats.and_then(|s| s.1)));
            }
            fields.push(row.runs.first().map_or(0, |r| r.parameters).to_string());
            let _ = writeln!(out, "{}", fields.join(","));
        }
        out
    }

    /// One line per individual run.
    pub fn runs_csv(&self) -> String {
        let mut out = format!("{},seed,{}\n", self.axis.name(), cal_eval::SUMMARY_HEADER);
        for row in &self.rows {
            for run in &row.runs {
                let _ = writeln!(
                    out,
                    "{},{},{}",
                    row.value,
                    run.seed,
                    run.report.summary_fields().join(",")
                );
            }
        }
        out
    }
}

/// Trains and evaluates one model per `(value, seed)` pair on `bundle`.
pub fn run_ablation(
    base: &TrainConfig,
    bundle: &DatasetBundle,
    axis: AblationAxis,
    values: &[String],
    seeds: &[u64],
    options: &EvalOptions,
) -> Result<AblationTable> {
    if values.is_empty() || seeds.is_empty() {
        return Err(TrainError::Config(
            "an ablation needs at least one value and one seed".into(),
        ));
    }
    let configs = values
        .iter()
        .map(|v| axis.apply(base, v))
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::with_capacity(values.len());
    for (value, config) in values.iter().zip(configs) {
        let mut runs = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let config = TrainConfig {
                seed,
                ..config.clone()
            };
            let (model, report) = run_experiment(bundle, &config, options)?;
            log::info!(
                "{}={value} seed={seed}: {} ({:.1}s)",
                axis.name(),
                report.summary_fields().join(","),
                report.wall_clock_seconds
            );
            let parameters = model.params().iter().map(|p| p.tensor.numel()).sum();
            runs.push(AblationRun {
                seed,
                parameters,
                report,
            });
        }
        rows.push(AblationRow {
            value: value.clone(),
            runs,
        });
    }
    Ok(AblationTable { axis, rows })
}
