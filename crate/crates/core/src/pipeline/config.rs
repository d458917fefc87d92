use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::anomaly::{AdScorerConfig, ScorerVariant};
use crate::archive::digest_of;
use crate::baselines::BaselineConfig;
use crate::corpus::RuleCorpusSpec;
use crate::error::{Error, Result};
use crate::explainer::ExplainerConfig;
use crate::kge::DistMultConfig;
use crate::metrics::ComparisonConfig;
use crate::recourse::RecourseConfig;
use crate::rng::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Input table. Without one the rule corpus is generated and used.
    pub csv: Option<PathBuf>,
    /// Ignored for the generated corpus, which keeps its own split sizes.
    pub test_fraction: f64,
    /// Shuffle before splitting; otherwise the file tail is the test split.
    pub shuffle: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            csv: None,
            test_fraction: 0.2,
            shuffle: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Targets {
    /// The planted anomalies, with ground truth.
    Planted,
    /// The lowest-scoring `anomaly_fraction` of test records plus planted
    /// anomalies, per scorer variant. Ground truth only where planted.
    Flagged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    /// Planted anomalies generated from the test split.
    pub anomalies: usize,
    pub targets: Targets,
    pub scorer_variants: Vec<ScorerVariant>,
    pub comparison: ComparisonConfig,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            anomalies: 200,
            targets: Targets::Planted,
            scorer_variants: vec![ScorerVariant::Additive, ScorerVariant::Pairwise],
            comparison: ComparisonConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimingConfig {
    /// Anomalies timed, taken from the front of the target list.
    pub anomalies: usize,
    /// Each anomaly is timed this many times; the fastest run is kept.
    pub repeats: usize,
}

impl Default for TimingConfig {
    fn default() -> Self {
        Self {
            anomalies: 100,
            repeats: 3,
        }
    }
}

/// Everything a run needs. Module `seed` fields are overwritten by seeds
/// derived from the global `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Fraction of lowest-scoring records treated as anomalous.
    pub anomaly_fraction: f64,
    /// Domains read from the CSV; defaults to the corpus domains.
    pub domains: Vec<String>,
    pub metapaths: Vec<Vec<String>>,
    pub data: DataConfig,
    pub corpus: RuleCorpusSpec,
    pub ad: AdScorerConfig,
    pub kge: DistMultConfig,
    pub explainer: ExplainerConfig,
    pub recourse: RecourseConfig,
    pub baselines: BaselineConfig,
    pub evaluation: EvaluationConfig,
    pub timing: TimingConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let m = |p: &[&str]| p.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        Self {
            seed: 0,
            out_dir: PathBuf::from("out"),
            anomaly_fraction: 0.01,
            domains: Vec::new(),
            metapaths: vec![
                m(&["shipper", "hs_code", "consignee"]),
                m(&["port_lading", "carrier", "port_unlading"]),
                m(&["shipper", "carrier", "port_lading"]),
                m(&["consignee", "carrier", "port_unlading"]),
                m(&["port_lading", "hs_code", "carrier"]),
            ],
            data: DataConfig::default(),
            corpus: RuleCorpusSpec::default(),
            ad: AdScorerConfig::default(),
            kge: DistMultConfig::default(),
            explainer: ExplainerConfig::default(),
            recourse: RecourseConfig::default(),
            baselines: BaselineConfig::default(),
            evaluation: EvaluationConfig::default(),
            timing: TimingConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn uses_corpus(&self) -> bool {
        self.data.csv.is_none()
    }

    /// Declared domains, falling back to the corpus domains.
    pub fn domain_names(&self) -> &[String] {
        if self.domains.is_empty() && self.uses_corpus() {
            &self.corpus.domains
        } else {
            &self.domains
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.anomaly_fraction > 0.0 && self.anomaly_fraction <= 1.0) {
            return bad(format!(
                "anomaly_fraction must be in (0,1], got {}",
                self.anomaly_fraction
            ));
        }
        if self.uses_corpus() {
            self.corpus.validate()?;
            if !self.domains.is_empty() && self.domains != self.corpus.domains {
                return bad("domains must match corpus.domains when no csv is given".into());
            }
        } else if self.domains.len() < 2 {
            return bad("a csv source needs at least two declared domains".into());
        }
        let names = self.domain_names();
        let unique: BTreeSet<&String> = names.iter().collect();
        if unique.len() != names.len() {
            return bad("domain names must be unique".into());
        }
        if self.metapaths.is_empty() {
            return bad("at least one metapath is required".into());
        }
        for p in &self.metapaths {
            if p.len() < 2 {
                return bad(format!("metapath {p:?} needs at least two domains"));
            }
            if let Some(d) = p.iter().find(|d| !names.contains(d)) {
                return bad(format!("metapath {p:?} refers to undeclared domain {d:?}"));
            }
            if p.windows(2).any(|w| w[0] == w[1]) {
                return bad(format!("metapath {p:?} repeats a domain consecutively"));
            }
        }
        if !(0.0..1.0).contains(&self.data.test_fraction) {
            return bad("data.test_fraction must be in [0,1)".into());
        }
        self.ad.validate()?;
        self.kge.validate()?;
        self.explainer.validate()?;
        self.recourse.validate()?;
        self.baselines.validate()?;
        let e = &self.evaluation;
        if e.anomalies == 0 {
            return bad("evaluation.anomalies must be positive".into());
        }
        let variants: BTreeSet<&str> = e.scorer_variants.iter().map(|v| v.name()).collect();
        if variants.is_empty() || variants.len() != e.scorer_variants.len() {
            return bad("evaluation.scorer_variants must be non-empty and distinct".into());
        }
        if self.timing.anomalies == 0 || self.timing.repeats == 0 {
            return bad("timing.anomalies and timing.repeats must be positive".into());
        }
        Ok(())
    }

    pub fn stage_seed(&self, label: &str) -> u64 {
        derive_seed(self.seed, label)
    }

    pub fn corpus_spec(&self) -> RuleCorpusSpec {
        RuleCorpusSpec {
            seed: self.stage_seed("corpus"),
            ..self.corpus.clone()
        }
    }

    pub fn ad_config(&self, variant: ScorerVariant) -> AdScorerConfig {
        AdScorerConfig {
            variant,
            seed: self.stage_seed(&format!("ad:{variant}")),
            ..self.ad.clone()
        }
    }

    pub fn kge_config(&self) -> DistMultConfig {
        DistMultConfig {
            seed: self.stage_seed("kge"),
            ..self.kge.clone()
        }
    }

    pub fn explainer_config(&self) -> ExplainerConfig {
        ExplainerConfig {
            seed: self.stage_seed("explainer"),
            ..self.explainer.clone()
        }
    }

    pub fn recourse_config(&self) -> RecourseConfig {
        RecourseConfig {
            seed: self.stage_seed("recourse"),
            ..self.recourse.clone()
        }
    }

    pub fn baseline_config(&self) -> BaselineConfig {
        BaselineConfig {
            seed: self.stage_seed("baselines"),
            ..self.baselines.clone()
        }
    }

    pub fn comparison_config(&self) -> ComparisonConfig {
        ComparisonConfig {
            seed: self.stage_seed("comparison"),
            ..self.evaluation.comparison.clone()
        }
    }

    /// Digest of the inputs that determine the dataset.
    pub fn data_digest(&self) -> String {
        let corpus = self.uses_corpus().then(|| self.corpus_spec());
        digest_of(&(self.domain_names(), &self.data, corpus, self.stage_seed("split")))
    }

    pub fn ad_digest(&self, variant: ScorerVariant) -> String {
        digest_of(&(self.data_digest(), self.ad_config(variant)))
    }

    pub fn kge_digest(&self) -> String {
        digest_of(&(self.data_digest(), &self.metapaths, self.kge_config()))
    }

    pub fn explainer_digest(&self) -> String {
        digest_of(&(self.data_digest(), self.explainer_config()))
    }

    pub fn anomalies_digest(&self) -> String {
        digest_of(&(
            self.data_digest(),
            self.evaluation.anomalies,
            self.stage_seed("anomalies"),
        ))
    }

    /// Digest of everything except the output location; stamped on
    /// counterfactual, metric and report artifacts.
    pub fn run_digest(&self) -> String {
        let mut c = self.clone();
        c.out_dir = PathBuf::new();
        c.timing = TimingConfig::default();
        digest_of(&c)
    }
}
