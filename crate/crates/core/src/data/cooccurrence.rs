use std::collections::HashMap;

use super::schema::EncodedRecord;

/// Empirical cross-domain co-occurrence counts over the training split.
///
/// `P(e_i, e_j)` is the fraction of training records containing both
/// entities. Pairs within a single domain are undefined.
#[derive(Debug, Clone)]
pub struct CooccurrenceModel {
    counts: HashMap<(usize, usize, usize, usize), u32>,
    n_train: usize,
}

impl CooccurrenceModel {
    pub fn build(train: &[EncodedRecord]) -> Self {
        let mut counts = HashMap::new();
        for rec in train {
            let v = rec.values();
            for i in 0..v.len() {
                for j in i + 1..v.len() {
                    *counts.entry((i, v[i], j, v[j])).or_insert(0) += 1;
                }
            }
        }
        Self {
            counts,
            n_train: train.len(),
        }
    }

    pub fn n_train(&self) -> usize {
        self.n_train
    }

    /// Records containing entity `a` of domain `da` and entity `b` of domain
    /// `db`. `None` when the domains coincide.
    pub fn count(&self, da: usize, a: usize, db: usize, b: usize) -> Option<u32> {
        let key = match da.cmp(&db) {
            std::cmp::Ordering::Less => (da, a, db, b),
            std::cmp::Ordering::Greater => (db, b, da, a),
            std::cmp::Ordering::Equal => return None,
        };
        Some(self.counts.get(&key).copied().unwrap_or(0))
    }

    pub fn probability(&self, da: usize, a: usize, db: usize, b: usize) -> Option<f64> {
        if self.n_train == 0 {
            return None;
        }
        self.count(da, a, db, b).map(|c| f64::from(c) / self.n_train as f64)
    }

    /// Mean of `P(entity, ctx_j)` over the given `(domain, entity)` context.
    pub fn mean_with_context(&self, domain: usize, entity: usize, context: &[(usize, usize)]) -> f64 {
        if context.is_empty() {
            return 0.0;
        }
        let total: f64 = context
            .iter()
            .filter_map(|&(d, e)| self.probability(domain, entity, d, e))
            .sum();
        total / context.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(v: &[usize]) -> EncodedRecord {
        EncodedRecord(v.to_vec())
    }

    #[test]
    fn hand_counted_pairs() {
        // train {(a,x),(a,y)} with a=0, x=0, y=1
        let m = CooccurrenceModel::build(&[rec(&[0, 0]), rec(&[0, 1])]);
        assert_eq!(m.probability(0, 0, 1, 0), Some(0.5));
        assert_eq!(m.probability(0, 0, 1, 1), Some(0.5));
        assert_eq!(m.probability(1, 1, 0, 0), Some(0.5));
        assert_eq!(m.probability(0, 0, 0, 1), None);
    }

    #[test]
    fn never_and_always_together() {
        let m = CooccurrenceModel::build(&[rec(&[0, 0, 2]), rec(&[1, 0, 2])]);
        assert_eq!(m.probability(0, 0, 2, 1), Some(0.0));
        assert_eq!(m.probability(1, 0, 2, 2), Some(1.0));
    }

    proptest! {
        #[test]
        fn matches_brute_force_scan(rows in prop::collection::vec(prop::collection::vec(0usize..4, 3), 1..100)) {
            let train: Vec<_> = rows.iter().map(|r| rec(r)).collect();
            let m = CooccurrenceModel::build(&train);
            for da in 0..3 { for db in 0..3 { if da == db { continue; }
                for a in 0..4 { for b in 0..4 {
                    let brute = rows.iter().filter(|r| r[da] == a && r[db] == b).count();
                    let p = m.probability(da, a, db, b).unwrap();
                    prop_assert_eq!(m.count(da, a, db, b).unwrap() as usize, brute);
                    prop_assert_eq!(p, brute as f64 / rows.len() as f64);
                    prop_assert!((0.0..=1.0).contains(&p));
                }}
            }}
        }
    }
}
