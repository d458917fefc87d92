//! Ingestion, vocabularies, record encoding, planted anomalies and
//! co-occurrence statistics.

mod cooccurrence;
mod csv;
mod schema;
mod synthetic;

pub use self::cooccurrence::CooccurrenceModel;
pub use self::csv::{load_csv, read_csv, RawTable};
pub use self::schema::{Dataset, DomainSchema, EncodedRecord};
pub use self::synthetic::{
    different_entity, generate_synthetic_anomalies, perturb, GroundTruthLabels, PlantedAnomaly, MAX_CORRUPTED,
};
