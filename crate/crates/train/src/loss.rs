use cal_tensor::{Graph, Result, Var};

/// Batch-hard triplet loss on ℓ2-normalized `N×D` embeddings.
///
/// Per anchor: hardest positive distance minus hardest negative distance
/// plus `margin`, hinged at zero, averaged over anchors that have both a
/// positive and a negative. A batch without such an anchor gives 0.
pub fn triplet_loss(
    g: &mut Graph,
    embeddings: Var,
    identities: &[usize],
    margin: f64,
) -> Result<Var> {
    let unit = g.l2_normalize_rows(embeddings);
    let (loss, anchors) = g.batch_hard_triplet(unit, identities, margin)?;
    if anchors == 0 {
        log::warn!("triplet batch has no anchor with both a positive and a negative; loss is 0");
    }
    Ok(loss)
}
