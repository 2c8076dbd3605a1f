use std::fmt::Write as _;

/// Training statistics for one epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub learning_rate: f64,
    /// Mean objective value over the epoch's steps.
    pub loss: f64,
    /// Mean factual cross-entropy over the epoch's steps.
    pub factual_ce: f64,
    /// Top-1 accuracy of the factual logits on the training batches.
    pub train_top1: f64,
}

/// Results of one run. Rates lie in `[0, 1]`; metrics that do not apply
/// to the run's mode are `None` or empty.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsReport {
    pub top1_accuracy: Option<f64>,
    pub attention_miou: Option<f64>,
    pub cmc: Vec<f64>,
    pub map_score: Option<f64>,
    pub epochs: Vec<EpochRecord>,
    /// Not written to any CSV, so reruns produce identical files.
    pub wall_clock_seconds: f64,
}

pub const EPOCH_HEADER: &str = "epoch,learning_rate,loss,factual_ce,train_top1";
pub const SUMMARY_HEADER: &str = "top1_accuracy,attention_miou,cmc_rank1,cmc_rank5,cmc_rank10,map";

/// Formats an optional value for CSV; missing values are empty fields.
pub fn opt_field(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

impl MetricsReport {
    /// CMC at rank `k` (1-based), saturating at the longest recorded rank.
    pub fn cmc_rank(&self, k: usize) -> Option<f64> {
        (!self.cmc.is_empty()).then(|| self.cmc[k.clamp(1, self.cmc.len()) - 1])
    }

    pub fn epochs_csv(&self) -> String {
        let mut out = format!("{EPOCH_HEADER}\n");
        for e in &self.epochs {
            let _ = writeln!(
                out,
                "{},{:.8},{:.8},{:.8},{:.6}",
                e.epoch, e.learning_rate, e.loss, e.factual_ce, e.train_top1
            );
        }
        out
    }

    /// Fields of the summary row, matching [`SUMMARY_HEADER`].
    pub fn summary_fields(&self) -> Vec<String> {
        vec![
            opt_field(self.top1_accuracy),
            opt_field(self.attention_miou),
            opt_field(self.cmc_rank(1)),
            opt_field(self.cmc_rank(5)),
            opt_field(self.cmc_rank(10)),
            opt_field(self.map_score),
        ]
    }

    pub fn summary_csv(&self) -> String {
        format!("{SUMMARY_HEADER}\n{}\n", self.summary_fields().join(","))
    }

    /// Checks that rates lie in `[0, 1]` and the CMC curve never decreases.
    pub fn is_consistent(&self) -> bool {
        let rate = |v: f64| (0.0..=1.0).contains(&v);
        let opt_rate = |v: Option<f64>| v.map_or(true, rate);
        opt_rate(self.top1_accuracy)
            && opt_rate(self.attention_miou)
            && opt_rate(self.map_score)
            && self.cmc.iter().all(|&v| rate(v))
            && self.cmc.windows(2).all(|w| w[0] <= w[1])
    }
}
