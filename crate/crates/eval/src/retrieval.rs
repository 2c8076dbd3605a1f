use cal_attention::AttentionModel;
use cal_synthdata::SyntheticSample;
use cal_tensor::Tensor;

use crate::error::{EvalError, Result};
use crate::predict::{predict_samples, EvalOptions};

/// CMC curve over every rank `1..=|gallery|` and mean average precision.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalEval {
    pub cmc: Vec<f64>,
    pub map_score: f64,
}

impl RetrievalEval {
    /// CMC at rank `k` (1-based), saturating at the gallery size.
    pub fn rank(&self, k: usize) -> f64 {
        self.cmc[k.clamp(1, self.cmc.len()) - 1]
    }
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Gallery indices ordered by Euclidean distance to `query`, nearest first;
/// equal distances keep gallery order.
pub fn rank_gallery(query: &[f64], gallery: &Tensor) -> Vec<usize> {
    let d = gallery.numel() / gallery.shape()[0];
    let dist: Vec<f64> = gallery
        .data()
        .chunks(d)
        .map(|g| distance(query, g))
        .collect();
    let mut order: Vec<usize> = (0..dist.len()).collect();
    order.sort_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(a.cmp(&b)));
    order
}

/// Single-query CMC and mAP from embeddings and identity labels.
pub fn retrieval_metrics(
    query: &Tensor,
    query_ids: &[usize],
    gallery: &Tensor,
    gallery_ids: &[usize],
) -> Result<RetrievalEval> {
    if query_ids.is_empty() {
        return Err(EvalError::Empty("query set"));
    }
    if gallery_ids.is_empty() {
        return Err(EvalError::Empty("gallery"));
    }
    let shape_ok = |t: &Tensor, n: usize| t.rank() == 2 && t.shape()[0] == n;
    if !shape_ok(query, query_ids.len())
        || !shape_ok(gallery, gallery_ids.len())
        || query.shape()[1] != gallery.shape()[1]
    {
        return Err(EvalError::Mismatch {
            what: "embedding shapes",
            expected: format!(
                "{}×D query and {}×D gallery",
                query_ids.len(),
                gallery_ids.len()
            ),
            actual: format!("{:?} and {:?}", query.shape(), gallery.shape()),
        });
    }
    if let Some(&missing) = query_ids.iter().find(|id| !gallery_ids.contains(id)) {
        return Err(EvalError::MissingIdentity(missing));
    }
    let d = query.shape()[1];
    let mut first_hit = vec![0usize; gallery_ids.len()];
    let mut ap_sum = 0.0;
    for (q, &id) in query.data().chunks(d).zip(query_ids) {
        let order = rank_gallery(q, gallery);
        let mut hits = 0;
        let mut precision_sum = 0.0;
        for (rank, &g) in order.iter().enumerate() {
            if gallery_ids[g] == id {
                if hits == 0 {
                    first_hit[rank] += 1;
                }
                hits += 1;
                precision_sum += hits as f64 / (rank + 1) as f64;
            }
        }
        ap_sum += precision_sum / hits as f64;
    }
    let nq = query_ids.len() as f64;
    let mut cmc = Vec::with_capacity(first_hit.len());
    let mut running = 0;
    for c in first_hit {
        running += c;
        cmc.push(running as f64 / nq);
    }
    Ok(RetrievalEval {
        cmc,
        map_score: ap_sum / nq,
    })
}

fn identities(samples: &[SyntheticSample]) -> Result<Vec<usize>> {
    samples
        .iter()
        .enumerate()
        .map(|(index, s)| s.identity_label.ok_or(EvalError::Unlabeled { index }))
        .collect()
}

/// Ranks the gallery for every query by distance between global representations.
pub fn evaluate_retrieval(
    model: &AttentionModel,
    query: &[SyntheticSample],
    gallery: &[SyntheticSample],
    options: &EvalOptions,
) -> Result<RetrievalEval> {
    let (qids, gids) = (identities(query)?, identities(gallery)?);
    if let Some(&missing) = qids.iter().find(|id| !gids.contains(id)) {
        return Err(EvalError::MissingIdentity(missing));
    }
    let q = predict_samples(model, query, options)?.representation;
    let g = predict_samples(model, gallery, options)?.representation;
    retrieval_metrics(&q, &qids, &g, &gids)
}
