use rand::seq::index;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::schema::{Dataset, DomainSchema, EncodedRecord};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};

/// Most domains corrupted in a single planted anomaly.
pub const MAX_CORRUPTED: usize = 2;

/// One planted anomaly: a test record with one or two entities swapped out.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlantedAnomaly {
    /// Position of the source row in the test split.
    pub source: usize,
    pub original: EncodedRecord,
    pub perturbed: EncodedRecord,
    /// Corrupted domains, ascending.
    pub corrupted: Vec<usize>,
}

pub type GroundTruthLabels = Vec<PlantedAnomaly>;

/// Replace the entity in each of `n` distinct domains with a uniformly
/// drawn different entity. Only domains with at least two entities are
/// eligible; `n` is capped by how many are.
pub fn perturb(
    schema: &DomainSchema,
    record: &EncodedRecord,
    n: usize,
    rng: &mut Rng,
) -> Result<(EncodedRecord, Vec<usize>)> {
    let eligible: Vec<usize> = (0..schema.num_domains())
        .filter(|&j| schema.vocab_size(j) >= 2)
        .collect();
    if eligible.is_empty() {
        return Err(Error::InvalidArgument(
            "no domain has two or more entities to corrupt".into(),
        ));
    }
    let n = n.min(eligible.len());
    let mut picked: Vec<usize> = index::sample(rng, eligible.len(), n)
        .into_iter()
        .map(|i| eligible[i])
        .collect();
    picked.sort_unstable();
    let mut values = record.values().to_vec();
    for &j in &picked {
        values[j] = different_entity(schema.vocab_size(j), values[j], rng);
    }
    Ok((EncodedRecord(values), picked))
}

/// Uniform draw from `0..vocab` excluding `current`. Needs `vocab >= 2`.
pub fn different_entity(vocab: usize, current: usize, rng: &mut Rng) -> usize {
    debug_assert!(vocab >= 2);
    let e = rng.gen_range(0..vocab - 1);
    if e >= current {
        e + 1
    } else {
        e
    }
}

/// Sample `count` distinct test rows and corrupt each in one or two domains,
/// the count chosen uniformly.
pub fn generate_synthetic_anomalies(dataset: &Dataset, count: usize, seed: u64) -> Result<GroundTruthLabels> {
    if count == 0 {
        return Err(Error::InvalidArgument("anomaly count must be positive".into()));
    }
    if count > dataset.test.len() {
        return Err(Error::InvalidArgument(format!(
            "requested {count} anomalies but the test split has {} rows",
            dataset.test.len()
        )));
    }
    let mut rng = rng::rng_for(seed, "synthetic-anomalies");
    let sources = index::sample(&mut rng, dataset.test.len(), count).into_vec();
    sources
        .into_iter()
        .map(|source| {
            let original = dataset.test[source].clone();
            let n = rng.gen_range(1..=MAX_CORRUPTED);
            let (perturbed, corrupted) = perturb(&dataset.schema, &original, n, &mut rng)?;
            Ok(PlantedAnomaly {
                source,
                original,
                perturbed,
                corrupted,
            })
        })
        .collect()
}
