//! Typed entity graph and DistMult embeddings for semantic neighbour search.
//!
//! Metapaths are sequences of domains. Every pair of consecutive domains in
//! any metapath becomes an (unordered) relation type, and two entities are
//! linked under that relation when they co-occur in a training record.

mod distmult;
mod index;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

pub use self::distmult::{distmult_loss, train_distmult, DistMult, DistMultConfig, Triple};
pub use self::index::NeighborIndex;

use crate::data::{DomainSchema, EncodedRecord};
use crate::error::{Error, Result};

/// A metapath resolved against a schema: domain indices in path order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Metapath(pub Vec<usize>);

impl Metapath {
    pub fn parse(schema: &DomainSchema, names: &[String]) -> Result<Self> {
        if names.len() < 2 {
            return Err(Error::Config(format!("metapath {names:?} needs at least two domains")));
        }
        let idx = names
            .iter()
            .map(|n| schema.domain_index(n))
            .collect::<Result<Vec<_>>>()?;
        if idx.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config(format!(
                "metapath {names:?} repeats a domain consecutively"
            )));
        }
        Ok(Self(idx))
    }

    pub fn domains(&self) -> &[usize] {
        &self.0
    }

    pub fn contains(&self, domain: usize) -> bool {
        self.0.contains(&domain)
    }

    /// Domains adjacent to `domain` anywhere along the path.
    pub fn neighbors(&self, domain: usize) -> Vec<usize> {
        let mut out = BTreeSet::new();
        for w in self.0.windows(2) {
            if w[0] == domain {
                out.insert(w[1]);
            }
            if w[1] == domain {
                out.insert(w[0]);
            }
        }
        out.into_iter().collect()
    }
}

pub fn parse_metapaths(schema: &DomainSchema, paths: &[Vec<String>]) -> Result<Vec<Metapath>> {
    paths.iter().map(|p| Metapath::parse(schema, p)).collect()
}

/// Unordered domain pair, stored with `a < b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Relation {
    pub a: usize,
    pub b: usize,
}

impl Relation {
    pub fn new(x: usize, y: usize) -> Self {
        Self {
            a: x.min(y),
            b: x.max(y),
        }
    }

    pub fn covers(&self, x: usize, y: usize) -> bool {
        *self == Relation::new(x, y) && x != y
    }
}

/// Relation types implied by a set of metapaths, sorted.
pub fn relations_of(metapaths: &[Metapath]) -> Vec<Relation> {
    metapaths
        .iter()
        .flat_map(|p| p.0.windows(2).map(|w| Relation::new(w[0], w[1])))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

/// Heterogeneous information network over the entities of a schema.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HinGraph {
    vocab_sizes: Vec<usize>,
    relations: Vec<Relation>,
    /// Per relation, deduplicated `(entity in a, entity in b)` pairs, sorted.
    edges: Vec<Vec<(usize, usize)>>,
}

impl HinGraph {
    pub fn relations(&self) -> &[Relation] {
        &self.relations
    }

    pub fn relation_index(&self, x: usize, y: usize) -> Option<usize> {
        self.relations.iter().position(|r| r.covers(x, y))
    }

    pub fn edges(&self, relation: usize) -> &[(usize, usize)] {
        &self.edges[relation]
    }

    pub fn num_edges(&self) -> usize {
        self.edges.iter().map(Vec::len).sum()
    }

    pub fn vocab_sizes(&self) -> &[usize] {
        &self.vocab_sizes
    }

    pub fn num_nodes(&self) -> usize {
        self.vocab_sizes.iter().sum()
    }
}

pub fn build_hin(schema: &DomainSchema, train: &[EncodedRecord], metapaths: &[Metapath]) -> Result<HinGraph> {
    let m = schema.num_domains();
    if metapaths.iter().flat_map(|p| &p.0).any(|&d| d >= m) {
        return Err(Error::Config("metapath refers to a domain outside the schema".into()));
    }
    let relations = relations_of(metapaths);
    let edges = relations
        .iter()
        .map(|r| {
            train
                .iter()
                .map(|rec| (rec.get(r.a), rec.get(r.b)))
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect()
        })
        .collect();
    Ok(HinGraph {
        vocab_sizes: schema.vocab_sizes(),
        relations,
        edges,
    })
}
