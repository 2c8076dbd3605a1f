//! Resolved settings of one command: defaults, then the config file, then flags.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use cal_synthdata::DatasetSpec;
use cal_train::TrainConfig;

use crate::args::Command;
use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommandKind {
    Gen,
    Train,
    Eval,
    Visualize,
    Ablate,
}

impl CommandKind {
    pub fn name(self) -> &'static str {
        match self {
            CommandKind::Gen => "gen",
            CommandKind::Train => "train",
            CommandKind::Eval => "eval",
            CommandKind::Visualize => "visualize",
            CommandKind::Ablate => "ablate",
        }
    }

    /// Keys besides the dataset or training fields that this command reads.
    fn keys(self) -> &'static [&'static str] {
        match self {
            CommandKind::Gen => &["out", "mode"],
            CommandKind::Train => &["out", "data", "threads", "threshold"],
            CommandKind::Eval => &["out", "checkpoint", "data", "mode", "threads", "threshold"],
            CommandKind::Visualize => {
                &["out", "checkpoint", "data", "split", "samples", "threshold"]
            }
            CommandKind::Ablate => &[
                "out",
                "data",
                "axis",
                "values",
                "seeds",
                "threads",
                "threshold",
            ],
        }
    }
}

impl From<&Command> for CommandKind {
    fn from(c: &Command) -> Self {
        match c {
            Command::Gen(_) => CommandKind::Gen,
            Command::Train(_) => CommandKind::Train,
            Command::Eval(_) => CommandKind::Eval,
            Command::Visualize(_) => CommandKind::Visualize,
            Command::Ablate(_) => CommandKind::Ablate,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Classification,
    Retrieval,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Classification => "classification",
            Mode::Retrieval => "retrieval",
        }
    }
}

impl FromStr for Mode {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "classification" => Ok(Mode::Classification),
            "retrieval" => Ok(Mode::Retrieval),
            other => Err(CliError::usage(format!(
                "unknown mode {other:?}; expected classification or retrieval"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub command: CommandKind,
    pub spec: DatasetSpec,
    pub train: TrainConfig,
    pub mode: Option<Mode>,
    pub out: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    /// Inference worker cap; 0 means every available core.
    pub threads: usize,
    pub threshold: f64,
    pub axes: Vec<String>,
    pub values: Option<Vec<String>>,
    pub seeds: usize,
    pub split: Option<String>,
    pub samples: Vec<usize>,
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| CliError::usage(format!("cannot parse {key}={value}")))
}

fn list(value: &str) -> Vec<String> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect()
}

impl RunConfig {
    pub fn new(command: CommandKind) -> Self {
        Self {
            command,
            spec: DatasetSpec::default(),
            train: TrainConfig::default(),
            mode: None,
            out: None,
            data: None,
            checkpoint: None,
            threads: 0,
            threshold: 0.5,
            axes: Vec::new(),
            values: None,
            seeds: 1,
            split: None,
            samples: vec![0],
        }
    }

    /// Defaults, then `--config`, then the remaining flags.
    pub fn resolve(command: &Command) -> Result<Self> {
        let mut config = Self::new(command.into());
        if let Some(path) = &command.common().config {
            config.apply_file(path)?;
        }
        for (key, value) in command.pairs() {
            config.set(key, &value)?;
        }
        Ok(config)
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::usage(format!(
                    "{}:{}: expected key=value, got {line:?}",
                    path.display(),
                    lineno + 1
                ))
            })?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let name = self.command.name();
        if key == "command" {
            return if value == name {
                Ok(())
            } else {
                Err(CliError::usage(format!(
                    "settings for {value:?} given to {name}"
                )))
            };
        }
        if self.command.keys().contains(&key) {
            match key {
                "out" => self.out = Some(PathBuf::from(value)),
                "data" => self.data = Some(PathBuf::from(value)),
                "checkpoint" => self.checkpoint = Some(PathBuf::from(value)),
                "mode" => self.mode = Some(value.parse()?),
                "threads" => self.threads = parse(key, value)?,
                "threshold" => self.threshold = parse(key, value)?,
                "axis" => self.axes = list(value),
                "values" => self.values = Some(list(value)),
                "seeds" => self.seeds = parse(key, value)?,
                "split" => self.split = Some(value.to_string()),
                "samples" => {
                    self.samples = list(value)
                        .iter()
                        .map(|v| parse(key, v))
                        .collect::<Result<_>>()?
                }
                _ => unreachable!("key table and match arms agree"),
            }
            return Ok(());
        }
        let known = match self.command {
            CommandKind::Gen => self
                .spec
                .set_field(key, value)
                .map_err(|e| CliError::usage(e.to_string()))?,
            CommandKind::Train | CommandKind::Ablate => self
                .train
                .set_field(key, value)
                .map_err(|e| CliError::usage(e.to_string()))?,
            CommandKind::Eval | CommandKind::Visualize => false,
        };
        if known {
            Ok(())
        } else {
            Err(CliError::usage(format!(
                "unknown setting {key:?} for {name}"
            )))
        }
    }

    pub fn require_out(&self) -> Result<&Path> {
        self.out.as_deref().ok_or_else(|| {
            CliError::usage(format!(
                "{} needs an output directory (--out)",
                self.command.name()
            ))
        })
    }

    pub fn require_data(&self) -> Result<&Path> {
        self.data.as_deref().ok_or_else(|| {
            CliError::usage(format!(
                "{} needs a dataset directory (--data)",
                self.command.name()
            ))
        })
    }

    pub fn require_checkpoint(&self) -> Result<&Path> {
        self.checkpoint.as_deref().ok_or_else(|| {
            CliError::usage(format!(
                "{} needs a checkpoint directory (--checkpoint)",
                self.command.name()
            ))
        })
    }

    /// Every setting the command used, as `key=value` lines it accepts back
    /// through `--config`. The output directory is left out so that runs
    /// written to different places produce identical files.
    pub fn echo(&self) -> String {
        let mut lines = vec![format!("command={}", self.command.name())];
        let path = |p: &Option<PathBuf>| {
            p.as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_default()
        };
        for &key in self.command.keys() {
            let value = match key {
                "out" => continue,
                "data" => path(&self.data),
                "checkpoint" => path(&self.checkpoint),
                "mode" => match self.mode {
                    Some(m) => m.name().to_string(),
                    None => continue,
                },
                "threads" => self.threads.to_string(),
                "threshold" => self.threshold.to_string(),
                "axis" => self.axes.join(","),
                "values" => match &self.values {
                    Some(v) => v.join(","),
                    None => continue,
                },
                "seeds" => self.seeds.to_string(),
                "split" => match &self.split {
                    Some(s) => s.clone(),
                    None => continue,
                },
                "samples" => self
                    .samples
                    .iter()
                    .map(usize::to_string)
                    .collect::<Vec<_>>()
                    .join(","),
                _ => unreachable!("key table and match arms agree"),
            };
            lines.push(format!("{key}={value}"));
        }
        match self.command {
            CommandKind::Gen => lines.extend(self.spec.to_manifest_lines()),
            CommandKind::Train | CommandKind::Ablate => lines.extend(self.train.to_lines()),
            CommandKind::Eval | CommandKind::Visualize => {}
        }
        lines.join("\n") + "\n"
    }

    /// File name of the resolved-settings echo.
    pub fn echo_file(&self) -> String {
        format!("{}.cfg", self.command.name())
    }
}
