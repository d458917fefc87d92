use super::distmult::{triple_score, DistMult};
use crate::error::{Error, Result};

/// Exact top-K tail search by DistMult score.
///
/// Scores every entity of the target domain; no approximation. Results are
/// sorted by score descending, ties by entity index ascending.
#[derive(Debug, Clone, Copy)]
pub struct NeighborIndex<'a> {
    model: &'a DistMult,
}

impl<'a> NeighborIndex<'a> {
    pub fn new(model: &'a DistMult) -> Self {
        Self { model }
    }

    pub fn knn_tails(
        &self,
        head_domain: usize,
        head: usize,
        target_domain: usize,
        k: usize,
    ) -> Result<Vec<(usize, f64)>> {
        let m = self.model;
        let relation = m.relation_index(head_domain, target_domain)?;
        if head >= m.vocab_size(head_domain) {
            return Err(Error::InvalidArgument(format!(
                "entity {head} out of range in domain {head_domain}"
            )));
        }
        let h = m.embedding(head_domain, head);
        let r = m.relation_vector(relation);
        let mut scored: Vec<(usize, f64)> = (0..m.vocab_size(target_domain))
            .map(|t| (t, triple_score(h, r, m.embedding(target_domain, t))))
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        scored.truncate(k);
        Ok(scored)
    }
}
