//! Command-line flags. Every flag maps onto a `key=value` setting, so a
//! config file and the command line describe runs in the same terms.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "cal",
    version,
    about = "Counterfactual attention experiments on synthetic images"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// A repeated flag takes its last value.
#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset.
    #[command(args_override_self = true)]
    Gen(GenArgs),
    /// Train a model and write its checkpoint and metrics.
    #[command(args_override_self = true)]
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset.
    #[command(args_override_self = true)]
    Eval(EvalArgs),
    /// Export attention heatmaps as PPM images.
    #[command(args_override_self = true)]
    Visualize(VisualizeArgs),
    /// Sweep one setting over several seeds.
    #[command(args_override_self = true)]
    Ablate(AblateArgs),
}

type Pairs = Vec<(&'static str, String)>;

fn push<T: ToString>(out: &mut Pairs, key: &'static str, value: &Option<T>) {
    if let Some(v) = value {
        out.push((key, v.to_string()));
    }
}

fn push_path(out: &mut Pairs, key: &'static str, value: &Option<PathBuf>) {
    push(out, key, &value.as_ref().map(|p| p.display().to_string()));
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// `key=value` settings file; flags given on the command line win.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct GenArgs {
    #[command(flatten)]
    pub common: Common,
    /// classification or retrieval.
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub samples_per_class: Option<usize>,
    #[arg(long)]
    pub test_samples_per_class: Option<usize>,
    #[arg(long)]
    pub image_size: Option<usize>,
    /// Bias strength: probability that a training background matches the label.
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub identities: Option<usize>,
    #[arg(long)]
    pub views: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

impl GenArgs {
    pub fn pairs(&self) -> Pairs {
        let mut out = Vec::new();
        push_path(&mut out, "out", &self.common.out);
        push(&mut out, "mode", &self.mode);
        push(&mut out, "num_classes", &self.classes);
        push(&mut out, "samples_per_class", &self.samples_per_class);
        push(
            &mut out,
            "test_samples_per_class",
            &self.test_samples_per_class,
        );
        push(&mut out, "image_size", &self.image_size);
        push(&mut out, "bias_strength", &self.rho);
        push(&mut out, "num_identities", &self.identities);
        push(&mut out, "views_per_identity", &self.views);
        push(&mut out, "seed", &self.seed);
        out
    }
}

#[derive(Debug, Clone, Args)]
pub struct TrainFlags {
    /// baseline, cal, dropout, entropy or l2norm.
    #[arg(long)]
    pub objective: Option<String>,
    /// random, uniform, reversed or shuffle.
    #[arg(long)]
    pub strategy: Option<String>,
    #[arg(long)]
    pub lambda_effect: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long, visible_alias = "batch-size")]
    pub batch: Option<usize>,
    #[arg(long, visible_alias = "learning-rate")]
    pub lr: Option<f64>,
    #[arg(long)]
    pub lr_decay: Option<f64>,
    #[arg(long)]
    pub lr_decay_interval: Option<usize>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub dropout_p: Option<f64>,
    #[arg(long)]
    pub entropy_weight: Option<f64>,
    #[arg(long)]
    pub margin: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub depth: Option<usize>,
    /// Attention heads M.
    #[arg(long)]
    pub heads: Option<usize>,
}

impl TrainFlags {
    fn pairs(&self, out: &mut Pairs) {
        push(out, "objective", &self.objective);
        push(out, "strategy", &self.strategy);
        push(out, "lambda_effect", &self.lambda_effect);
        push(out, "epochs", &self.epochs);
        push(out, "batch_size", &self.batch);
        push(out, "learning_rate", &self.lr);
        push(out, "lr_decay", &self.lr_decay);
        push(out, "lr_decay_interval", &self.lr_decay_interval);
        push(out, "momentum", &self.momentum);
        push(out, "weight_decay", &self.weight_decay);
        push(out, "dropout_p", &self.dropout_p);
        push(out, "entropy_weight", &self.entropy_weight);
        push(out, "triplet_margin", &self.margin);
        push(out, "seed", &self.seed);
        push(out, "depth", &self.depth);
        push(out, "heads", &self.heads);
    }
}

#[derive(Debug, Clone, Args)]
pub struct EvalFlags {
    /// Worker cap for inference; 0 uses every available core.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Fraction of the peak attention that marks a pixel as attended.
    #[arg(long)]
    pub threshold: Option<f64>,
}

impl EvalFlags {
    fn pairs(&self, out: &mut Pairs) {
        push(out, "threads", &self.threads);
        push(out, "threshold", &self.threshold);
    }
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    /// Dataset directory written by `gen`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[command(flatten)]
    pub train: TrainFlags,
    #[command(flatten)]
    pub eval: EvalFlags,
}

impl TrainArgs {
    pub fn pairs(&self) -> Pairs {
        let mut out = Vec::new();
        push_path(&mut out, "out", &self.common.out);
        push_path(&mut out, "data", &self.data);
        self.train.pairs(&mut out);
        self.eval.pairs(&mut out);
        out
    }
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    /// Checkpoint directory written by `train`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// classification or retrieval; defaults to the dataset's mode.
    #[arg(long)]
    pub mode: Option<String>,
    #[command(flatten)]
    pub eval: EvalFlags,
}

impl EvalArgs {
    pub fn pairs(&self) -> Pairs {
        let mut out = Vec::new();
        push_path(&mut out, "out", &self.common.out);
        push_path(&mut out, "checkpoint", &self.checkpoint);
        push_path(&mut out, "data", &self.data);
        push(&mut out, "mode", &self.mode);
        self.eval.pairs(&mut out);
        out
    }
}

#[derive(Debug, Clone, Args)]
pub struct VisualizeArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// train or test (classification); train, query or gallery (retrieval).
    #[arg(long)]
    pub split: Option<String>,
    /// Comma-separated sample indices within the split.
    #[arg(long)]
    pub samples: Option<String>,
    #[arg(long)]
    pub threshold: Option<f64>,
}

impl VisualizeArgs {
    pub fn pairs(&self) -> Pairs {
        let mut out = Vec::new();
        push_path(&mut out, "out", &self.common.out);
        push_path(&mut out, "checkpoint", &self.checkpoint);
        push_path(&mut out, "data", &self.data);
        push(&mut out, "split", &self.split);
        push(&mut out, "samples", &self.samples);
        push(&mut out, "threshold", &self.threshold);
        out
    }
}

#[derive(Debug, Clone, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Comma-separated axes: strategy, M, objective.
    #[arg(long)]
    pub axis: Option<String>,
    /// Comma-separated values for a single axis.
    #[arg(long)]
    pub values: Option<String>,
    /// Number of seeds per value, counting up from `--seed`.
    #[arg(long)]
    pub seeds: Option<usize>,
    #[command(flatten)]
    pub train: TrainFlags,
    #[command(flatten)]
    pub eval: EvalFlags,
}

impl AblateArgs {
    pub fn pairs(&self) -> Pairs {
        let mut out = Vec::new();
        push_path(&mut out, "out", &self.common.out);
        push_path(&mut out, "data", &self.data);
        push(&mut out, "axis", &self.axis);
        push(&mut out, "values", &self.values);
        push(&mut out, "seeds", &self.seeds);
        self.train.pairs(&mut out);
        self.eval.pairs(&mut out);
        out
    }
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Gen(_) => "gen",
            Command::Train(_) => "train",
            Command::Eval(_) => "eval",
            Command::Visualize(_) => "visualize",
            Command::Ablate(_) => "ablate",
        }
    }

    pub fn common(&self) -> &Common {
        match self {
            Command::Gen(a) => &a.common,
            Command::Train(a) => &a.common,
            Command::Eval(a) => &a.common,
            Command::Visualize(a) => &a.common,
            Command::Ablate(a) => &a.common,
        }
    }

    /// Settings given as flags, under their config-file keys.
    pub fn pairs(&self) -> Pairs {
        match self {
            Command::Gen(a) => a.pairs(),
            Command::Train(a) => a.pairs(),
            Command::Eval(a) => a.pairs(),
            Command::Visualize(a) => a.pairs(),
            Command::Ablate(a) => a.pairs(),
        }
    }
}
