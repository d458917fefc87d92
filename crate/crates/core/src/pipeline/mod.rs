//! Config-driven orchestration over an output directory of artifacts.
//!
//! | command              | reads                                  | writes                              |
//! |----------------------|----------------------------------------|-------------------------------------|
//! | `gen-corpus`         |                                        | `corpus.csv`                        |
//! | `ingest`             | csv or `corpus.csv`                    | `dataset.json`                      |
//! | `train-ad`           | dataset                                | `ad_<variant>.bin`                  |
//! | `train-kge`          | dataset                                | `kge.bin`                           |
//! | `pretrain-explainer` | dataset                                | `explainer_pretrained.bin`          |
//! | `train-explainer`    | dataset, pretrained encoder            | `explainer.bin`                     |
//! | `gen-anomalies`      | dataset                                | `anomalies.json`                    |
//! | `recourse`           | all models, anomalies                  | `cf_carat_<variant>.json`           |
//! | `baseline`           | dataset, scorers, explainer, anomalies | `cf_replace_m_*`, `cf_xformer_r_*`  |
//! | `evaluate`           | counterfactual files                   | `metrics_<variant>.json`            |
//! | `timing`             | all models, anomalies                  | `timing.json`                       |
//! | `report`             | metrics, timing                        | `report.{json,md}`, `timing_summary.{json,md}` |
//!
//! Every artifact carries the schema hash and a digest of the config that
//! produced it; loading under a different schema or config is an error.
//! `report.json` and `report.md` contain no wall-clock data and are
//! byte-identical across runs with one config.

mod cf_file;
mod config;
mod timing;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use self::cf_file::{CfEntry, CfRecord, CounterfactualFile};
pub use self::config::{DataConfig, EvaluationConfig, PipelineConfig, Targets, TimingConfig};
pub use self::timing::{linear_fit, render_summary, summarize, LinearFit, TimingRow, TimingRun, TimingSummary};

use crate::anomaly::{flag_anomalies, train_ad, AdScorer, AnomalyScorer, ScorerVariant};
use crate::archive::{read_json, write_json, ArtifactMeta, ModelArchive};
use crate::baselines::{replace_m, xformer_r, BaselineMethod};
use crate::corpus::{generate_rule_corpus, write_csv};
use crate::data::{
    generate_synthetic_anomalies, load_csv, CooccurrenceModel, Dataset, EncodedRecord, GroundTruthLabels,
};
use crate::error::{Error, Result};
use crate::explainer::{pretrain_encoder, train_decoder_p, Explainer, Pretrained};
use crate::kge::{build_hin, parse_metapaths, train_distmult, DistMult, Metapath};
use crate::metrics::{comparison_sample, evaluate_corpus, render_table, EvalContext, MetricReport, Summary};
use crate::recourse::{carat_recourse_batch, carat_recourse_traced, RecourseContext};

pub const CARAT: &str = "carat";

/// Methods with counterfactual files produced by the pipeline, in report order.
pub fn methods() -> [&'static str; 3] {
    [BaselineMethod::ReplaceM.name(), BaselineMethod::XformerR.name(), CARAT]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    GenCorpus,
    Ingest,
    TrainAd,
    TrainKge,
    PretrainExplainer,
    TrainExplainer,
    GenAnomalies,
    Recourse,
    Baseline,
    Evaluate,
    Timing,
    Report,
}

impl Command {
    pub const ALL: [Command; 12] = [
        Command::GenCorpus,
        Command::Ingest,
        Command::TrainAd,
        Command::TrainKge,
        Command::PretrainExplainer,
        Command::TrainExplainer,
        Command::GenAnomalies,
        Command::Recourse,
        Command::Baseline,
        Command::Evaluate,
        Command::Timing,
        Command::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::GenCorpus => "gen-corpus",
            Command::Ingest => "ingest",
            Command::TrainAd => "train-ad",
            Command::TrainKge => "train-kge",
            Command::PretrainExplainer => "pretrain-explainer",
            Command::TrainExplainer => "train-explainer",
            Command::GenAnomalies => "gen-anomalies",
            Command::Recourse => "recourse",
            Command::Baseline => "baseline",
            Command::Evaluate => "evaluate",
            Command::Timing => "timing",
            Command::Report => "report",
        }
    }
}

/// One evaluation target: a record to explain and, if planted, the domains
/// that were corrupted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Target {
    pub record: EncodedRecord,
    pub corrupted: Option<Vec<usize>>,
}

/// How well a scorer separates planted anomalies from normal test records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlagSummary {
    pub pool: usize,
    pub flagged: usize,
    pub planted: usize,
    pub planted_flagged: usize,
    /// Fraction of planted anomalies scored below their source record.
    pub planted_below_source: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantEvaluation {
    pub variant: String,
    pub flagging: FlagSummary,
    pub reports: Vec<MetricReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantSummary {
    pub flagging: FlagSummary,
    /// method -> metric -> summary
    pub methods: BTreeMap<String, BTreeMap<String, Summary>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub variants: BTreeMap<String, VariantSummary>,
}

pub struct Pipeline {
    config: PipelineConfig,
    out: PathBuf,
}

impl Pipeline {
    pub fn new(config: PipelineConfig) -> Result<Self> {
        config.validate()?;
        let out = config.out_dir.clone();
        std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
        Ok(Self { config, out })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn out_dir(&self) -> &Path {
        &self.out
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    pub fn run(&self, command: Command) -> Result<()> {
        log::info!("running {}", command.name());
        match command {
            Command::GenCorpus => self.gen_corpus(),
            Command::Ingest => self.ingest().map(|_| ()),
            Command::TrainAd => self.train_ad(),
            Command::TrainKge => self.train_kge(),
            Command::PretrainExplainer => self.pretrain_explainer(),
            Command::TrainExplainer => self.train_explainer(),
            Command::GenAnomalies => self.gen_anomalies(),
            Command::Recourse => self.recourse(),
            Command::Baseline => self.baseline(),
            Command::Evaluate => self.evaluate(&[]).map(|_| ()),
            Command::Timing => self.timing().map(|_| ()),
            Command::Report => self.report().map(|_| ()),
        }
    }

    /// Every stage in order; corpus generation only without a csv source.
    pub fn run_all(&self) -> Result<Report> {
        for c in Command::ALL {
            if c == Command::GenCorpus && !self.config.uses_corpus() {
                continue;
            }
            self.run(c)?;
        }
        self.load_report()
    }

    fn record_setup(&self, stage: &str, secs: f64) -> Result<()> {
        let path = self.path("setup_times.json");
        let mut times: BTreeMap<String, f64> = if path.exists() {
            let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            serde_json::from_str(&text)?
        } else {
            BTreeMap::new()
        };
        times.insert(stage.to_owned(), secs);
        let text = serde_json::to_string_pretty(&times)?;
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub fn setup_times(&self) -> Result<BTreeMap<String, f64>> {
        let path = self.path("setup_times.json");
        if !path.exists() {
            return Ok(BTreeMap::new());
        }
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn gen_corpus(&self) -> Result<()> {
        let corpus = generate_rule_corpus(&self.config.corpus_spec())?;
        write_csv(self.path("corpus.csv"), &corpus.raw)
    }

    fn csv_path(&self) -> PathBuf {
        match &self.config.data.csv {
            Some(p) => p.clone(),
            None => self.path("corpus.csv"),
        }
    }

    pub fn ingest(&self) -> Result<Dataset> {
        let t = Instant::now();
        let path = self.csv_path();
        if !path.exists() {
            return Err(Error::MissingArtifact(path));
        }
        let raw = load_csv(&path, self.config.domain_names())?;
        if raw.dropped > 0 {
            log::warn!("dropped {} rows with missing values", raw.dropped);
        }
        let (fraction, shuffle) = if self.config.uses_corpus() {
            let c = &self.config.corpus;
            (c.test_records as f64 / (c.train_records + c.test_records) as f64, None)
        } else {
            let d = &self.config.data;
            (d.test_fraction, d.shuffle.then(|| self.config.stage_seed("split")))
        };
        let ds = Dataset::from_raw(&raw, fraction, shuffle)?;
        let meta = ArtifactMeta::new(
            "dataset",
            &ds.schema.hash(),
            &self.config.data_digest(),
            self.config.seed,
        );
        write_json(self.path("dataset.json"), &meta, &ds)?;
        self.record_setup("ingest", t.elapsed().as_secs_f64())?;
        Ok(ds)
    }

    pub fn load_dataset(&self) -> Result<Dataset> {
        let (meta, ds): (ArtifactMeta, Dataset) = read_json(self.path("dataset.json"))?;
        meta.check_config(&self.config.data_digest())?;
        meta.check_schema(&ds.schema.hash())?;
        Ok(ds)
    }

    fn meta(&self, kind: &str, ds: &Dataset, digest: &str) -> ArtifactMeta {
        ArtifactMeta::new(kind, &ds.schema.hash(), digest, self.config.seed)
    }

    fn load_archive(&self, file: &str, ds: &Dataset, digest: &str) -> Result<ModelArchive> {
        let path = self.path(file);
        if !path.exists() {
            return Err(Error::MissingArtifact(path));
        }
        let a = ModelArchive::load_checked(&path, &ds.schema.hash())?;
        a.meta.check_config(digest)?;
        Ok(a)
    }

    fn ad_file(variant: ScorerVariant) -> String {
        format!("ad_{variant}.bin")
    }

    pub fn train_ad(&self) -> Result<()> {
        let ds = self.load_dataset()?;
        for &v in &self.config.evaluation.scorer_variants {
            let t = Instant::now();
            let scorer = train_ad(&ds.schema, &ds.train, &self.config.ad_config(v))?;
            let meta = self.meta(&format!("ad_{v}"), &ds, &self.config.ad_digest(v));
            scorer.to_archive(meta)?.save(self.path(&Self::ad_file(v)))?;
            self.record_setup(&format!("train-ad:{v}"), t.elapsed().as_secs_f64())?;
        }
        Ok(())
    }

    pub fn load_ad(&self, ds: &Dataset, variant: ScorerVariant) -> Result<AdScorer> {
        let a = self.load_archive(&Self::ad_file(variant), ds, &self.config.ad_digest(variant))?;
        AdScorer::from_archive(&a, &ds.schema)
    }

    pub fn metapaths(&self, ds: &Dataset) -> Result<Vec<Metapath>> {
        parse_metapaths(&ds.schema, &self.config.metapaths)
    }

    pub fn train_kge(&self) -> Result<()> {
        let t = Instant::now();
        let ds = self.load_dataset()?;
        let hin = build_hin(&ds.schema, &ds.train, &self.metapaths(&ds)?)?;
        let model = train_distmult(&ds.schema, &hin, &self.config.kge_config())?;
        let meta = self.meta("kge", &ds, &self.config.kge_digest());
        model.to_archive(meta)?.save(self.path("kge.bin"))?;
        self.record_setup("train-kge", t.elapsed().as_secs_f64())
    }

    pub fn load_kge(&self, ds: &Dataset) -> Result<DistMult> {
        let a = self.load_archive("kge.bin", ds, &self.config.kge_digest())?;
        DistMult::from_archive(&a, &ds.schema)
    }

    pub fn pretrain_explainer(&self) -> Result<()> {
        let t = Instant::now();
        let ds = self.load_dataset()?;
        let pre = pretrain_encoder(&ds.schema, &ds.train, &self.config.explainer_config())?;
        let meta = self.meta("explainer_pretrained", &ds, &self.config.explainer_digest());
        pre.to_archive(meta)?.save(self.path("explainer_pretrained.bin"))?;
        self.record_setup("pretrain-explainer", t.elapsed().as_secs_f64())
    }

    pub fn train_explainer(&self) -> Result<()> {
        let t = Instant::now();
        let ds = self.load_dataset()?;
        let a = self.load_archive("explainer_pretrained.bin", &ds, &self.config.explainer_digest())?;
        let pre = Pretrained::from_archive(&a, &ds.schema)?;
        let cfg = self.config.explainer_config();
        let dp = train_decoder_p(&pre.encoder, &ds.schema, &ds.train, &cfg)?;
        let ex = Explainer::new(&ds.schema, cfg, pre.encoder, dp);
        let meta = self.meta("explainer", &ds, &self.config.explainer_digest());
        ex.to_archive(meta)?.save(self.path("explainer.bin"))?;
        self.record_setup("train-explainer", t.elapsed().as_secs_f64())
    }

    pub fn load_explainer(&self, ds: &Dataset) -> Result<Explainer> {
        let a = self.load_archive("explainer.bin", ds, &self.config.explainer_digest())?;
        Explainer::from_archive(&a, &ds.schema)
    }

    pub fn gen_anomalies(&self) -> Result<()> {
        let ds = self.load_dataset()?;
        let planted = generate_synthetic_anomalies(
            &ds,
            self.config.evaluation.anomalies,
            self.config.stage_seed("anomalies"),
        )?;
        let meta = self.meta("anomalies", &ds, &self.config.anomalies_digest());
        write_json(self.path("anomalies.json"), &meta, &planted)
    }

    pub fn load_anomalies(&self, ds: &Dataset) -> Result<GroundTruthLabels> {
        let (meta, planted): (ArtifactMeta, GroundTruthLabels) = read_json(self.path("anomalies.json"))?;
        meta.check_schema(&ds.schema.hash())?;
        meta.check_config(&self.config.anomalies_digest())?;
        Ok(planted)
    }

    /// Test records followed by the planted anomalies.
    fn pool(ds: &Dataset, planted: &GroundTruthLabels) -> Vec<EncodedRecord> {
        ds.test
            .iter()
            .cloned()
            .chain(planted.iter().map(|p| p.perturbed.clone()))
            .collect()
    }

    pub fn targets(
        &self,
        ds: &Dataset,
        planted: &GroundTruthLabels,
        scorer: &dyn AnomalyScorer,
    ) -> Result<Vec<Target>> {
        match self.config.evaluation.targets {
            Targets::Planted => Ok(planted
                .iter()
                .map(|p| Target {
                    record: p.perturbed.clone(),
                    corrupted: Some(p.corrupted.clone()),
                })
                .collect()),
            Targets::Flagged => {
                let pool = Self::pool(ds, planted);
                let flagged = flag_anomalies(scorer, &pool, self.config.anomaly_fraction)?;
                Ok(flagged
                    .into_iter()
                    .map(|i| Target {
                        record: pool[i].clone(),
                        corrupted: i.checked_sub(ds.test.len()).map(|p| planted[p].corrupted.clone()),
                    })
                    .collect())
            }
        }
    }

    fn cf_file_name(method: &str, variant: ScorerVariant) -> String {
        format!("cf_{method}_{variant}.json")
    }

    fn write_cf(&self, ds: &Dataset, method: &str, variant: ScorerVariant, entries: Vec<CfEntry>) -> Result<()> {
        let file = CounterfactualFile {
            method: method.to_owned(),
            variant: Some(variant.name().to_owned()),
            domains: ds.schema.domains().to_vec(),
            entries,
        };
        let meta = self.meta("counterfactuals", ds, &self.config.run_digest());
        write_json(self.path(&Self::cf_file_name(method, variant)), &meta, &file)
    }

    pub fn load_cf(&self, ds: &Dataset, method: &str, variant: ScorerVariant) -> Result<CounterfactualFile> {
        let (meta, file): (ArtifactMeta, CounterfactualFile) =
            read_json(self.path(&Self::cf_file_name(method, variant)))?;
        meta.check_schema(&ds.schema.hash())?;
        meta.check_config(&self.config.run_digest())?;
        Ok(file)
    }

    pub fn recourse(&self) -> Result<()> {
        let ds = self.load_dataset()?;
        let explainer = self.load_explainer(&ds)?;
        let kge = self.load_kge(&ds)?;
        let metapaths = self.metapaths(&ds)?;
        let co = CooccurrenceModel::build(&ds.train);
        let planted = self.load_anomalies(&ds)?;
        let cfg = self.config.recourse_config();
        for &v in &self.config.evaluation.scorer_variants {
            let scorer = self.load_ad(&ds, v)?;
            let ctx = RecourseContext {
                schema: &ds.schema,
                explainer: &explainer,
                kge: &kge,
                scorer: &scorer,
                metapaths: &metapaths,
                cooccurrence: &co,
            };
            let targets = self.targets(&ds, &planted, &scorer)?;
            let records: Vec<EncodedRecord> = targets.iter().map(|t| t.record.clone()).collect();
            let sets = carat_recourse_batch(&records, &ctx, &cfg)?;
            let scores = scorer.score_batch(&records);
            let entries = sets
                .iter()
                .zip(&targets)
                .zip(scores)
                .map(|(((set, _), t), s)| CfEntry::from_set(&ds.schema, set, s, t.corrupted.as_deref()))
                .collect();
            self.write_cf(&ds, CARAT, v, entries)?;
        }
        Ok(())
    }

    pub fn baseline(&self) -> Result<()> {
        let ds = self.load_dataset()?;
        let explainer = self.load_explainer(&ds)?;
        let planted = self.load_anomalies(&ds)?;
        let cfg = self.config.baseline_config();
        for &v in &self.config.evaluation.scorer_variants {
            let scorer = self.load_ad(&ds, v)?;
            let targets = self.targets(&ds, &planted, &scorer)?;
            let records: Vec<EncodedRecord> = targets.iter().map(|t| t.record.clone()).collect();
            let scores = scorer.score_batch(&records);
            for method in [BaselineMethod::ReplaceM, BaselineMethod::XformerR] {
                let sets = targets
                    .par_iter()
                    .map(|t| match method {
                        BaselineMethod::ReplaceM => replace_m(&t.record, &scorer, &ds.schema, &cfg),
                        BaselineMethod::XformerR => xformer_r(&t.record, &explainer, &scorer, &ds.schema, &cfg),
                    })
                    .collect::<Result<Vec<_>>>()?;
                let entries = sets
                    .iter()
                    .zip(&targets)
                    .zip(&scores)
                    .map(|((set, t), &s)| CfEntry::from_set(&ds.schema, set, s, t.corrupted.as_deref()))
                    .collect();
                self.write_cf(&ds, method.name(), v, entries)?;
            }
        }
        Ok(())
    }

    fn flag_summary(
        &self,
        ds: &Dataset,
        planted: &GroundTruthLabels,
        scorer: &dyn AnomalyScorer,
    ) -> Result<FlagSummary> {
        let pool = Self::pool(ds, planted);
        let flagged = flag_anomalies(scorer, &pool, self.config.anomaly_fraction)?;
        let originals: Vec<EncodedRecord> = planted.iter().map(|p| p.original.clone()).collect();
        let perturbed: Vec<EncodedRecord> = planted.iter().map(|p| p.perturbed.clone()).collect();
        let below = scorer
            .score_batch(&perturbed)
            .iter()
            .zip(scorer.score_batch(&originals))
            .filter(|(p, o)| *p < o)
            .count();
        Ok(FlagSummary {
            pool: pool.len(),
            flagged: flagged.len(),
            planted: planted.len(),
            planted_flagged: flagged.iter().filter(|&&i| i >= ds.test.len()).count(),
            planted_below_source: below as f64 / planted.len().max(1) as f64,
        })
    }

    /// Metrics for every method file (and each external file) under every
    /// scorer variant. External entries without ground truth pick it up
    /// from the planted anomalies when the anomaly matches one.
    pub fn evaluate(&self, external: &[PathBuf]) -> Result<Vec<VariantEvaluation>> {
        let ds = self.load_dataset()?;
        let planted = self.load_anomalies(&ds)?;
        let co = CooccurrenceModel::build(&ds.train);
        let comparison = comparison_sample(&ds, &self.config.comparison_config())?;
        let known: BTreeMap<&EncodedRecord, &Vec<usize>> =
            planted.iter().map(|p| (&p.perturbed, &p.corrupted)).collect();

        let mut ext_files = Vec::new();
        for path in external {
            if !path.exists() {
                return Err(Error::MissingArtifact(path.clone()));
            }
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let file: CounterfactualFile = serde_json::from_str(&text)?;
            let mut cases = file.to_cases(&ds.schema)?;
            for c in &mut cases {
                if c.corrupted.is_none() {
                    c.corrupted = known.get(&c.anomaly).map(|v| (*v).clone());
                }
            }
            ext_files.push((file.method, cases));
        }

        let mut out = Vec::new();
        for &v in &self.config.evaluation.scorer_variants {
            let scorer = self.load_ad(&ds, v)?;
            let ctx = EvalContext {
                cooccurrence: &co,
                scorer: &scorer,
                comparison: &comparison,
            };
            let mut reports = Vec::new();
            for method in methods() {
                let cases = self.load_cf(&ds, method, v)?.to_cases(&ds.schema)?;
                reports.push(evaluate_corpus(method, &cases, &ctx)?);
            }
            for (name, cases) in &ext_files {
                reports.push(evaluate_corpus(name, cases, &ctx)?);
            }
            let body = VariantEvaluation {
                variant: v.name().to_owned(),
                flagging: self.flag_summary(&ds, &planted, &scorer)?,
                reports,
            };
            let meta = self.meta("metrics", &ds, &self.config.run_digest());
            write_json(self.path(&format!("metrics_{v}.json")), &meta, &body)?;
            out.push(body);
        }
        Ok(out)
    }

    pub fn load_evaluation(&self, ds: &Dataset, variant: ScorerVariant) -> Result<VariantEvaluation> {
        let (meta, body): (ArtifactMeta, VariantEvaluation) = read_json(self.path(&format!("metrics_{variant}.json")))?;
        meta.check_schema(&ds.schema.hash())?;
        meta.check_config(&self.config.run_digest())?;
        Ok(body)
    }

    /// CARAT recourse on the first `timing.anomalies` targets of the first
    /// scorer variant, one anomaly at a time, keeping each anomaly's
    /// fastest repeat.
    pub fn timing(&self) -> Result<TimingRun> {
        let ds = self.load_dataset()?;
        let explainer = self.load_explainer(&ds)?;
        let kge = self.load_kge(&ds)?;
        let metapaths = self.metapaths(&ds)?;
        let co = CooccurrenceModel::build(&ds.train);
        let planted = self.load_anomalies(&ds)?;
        let v = self.config.evaluation.scorer_variants[0];
        let scorer = self.load_ad(&ds, v)?;
        let ctx = RecourseContext {
            schema: &ds.schema,
            explainer: &explainer,
            kge: &kge,
            scorer: &scorer,
            metapaths: &metapaths,
            cooccurrence: &co,
        };
        ctx.check()?;
        let cfg = self.config.recourse_config();
        let targets = self.targets(&ds, &planted, &scorer)?;
        let n = self.config.timing.anomalies.min(targets.len());
        let start = Instant::now();
        let mut rows = Vec::with_capacity(n);
        for (i, t) in targets.iter().take(n).enumerate() {
            let mut best: Option<TimingRow> = None;
            for _ in 0..self.config.timing.repeats {
                let t0 = Instant::now();
                let (_, trace) = carat_recourse_traced(&t.record, &ctx, &cfg)?;
                let total = t0.elapsed().as_secs_f64();
                if best.as_ref().is_none_or(|b| total < b.total_secs) {
                    best = Some(TimingRow {
                        anomaly: i,
                        trace,
                        total_secs: total,
                    });
                }
            }
            rows.extend(best);
        }
        let run = TimingRun {
            variant: v.name().to_owned(),
            repeats: self.config.timing.repeats,
            wall_secs: start.elapsed().as_secs_f64(),
            rows,
        };
        let meta = self.meta("timing", &ds, &self.config.run_digest());
        write_json(self.path("timing.json"), &meta, &run)?;
        Ok(run)
    }

    /// Render metric tables for every variant and, when a timing run
    /// exists, the timing summary.
    pub fn report(&self) -> Result<Report> {
        let ds = self.load_dataset()?;
        let mut variants = BTreeMap::new();
        let mut md = String::from("# Counterfactual evaluation\n");
        let mut carat_rows = Vec::new();
        for &v in &self.config.evaluation.scorer_variants {
            let ev = self.load_evaluation(&ds, v)?;
            let f = &ev.flagging;
            md.push_str(&format!(
                "\n## {v} scorer\n\nFlagged {} of {} records; {} of {} planted anomalies flagged; \
                 {:.4} of planted anomalies score below their source.\n\n",
                f.flagged, f.pool, f.planted_flagged, f.planted, f.planted_below_source
            ));
            md.push_str(&render_table(&ev.reports));
            if let Some(c) = ev.reports.iter().find(|r| r.method == CARAT) {
                carat_rows.push(MetricReport {
                    method: v.name().to_owned(),
                    ..c.clone()
                });
            }
            variants.insert(
                v.name().to_owned(),
                VariantSummary {
                    flagging: ev.flagging.clone(),
                    methods: ev
                        .reports
                        .iter()
                        .map(|r| (r.method.clone(), r.summary.clone()))
                        .collect(),
                },
            );
        }
        if carat_rows.len() > 1 {
            md.push_str("\n## CARAT across scorers\n\n");
            md.push_str(&render_table(&carat_rows));
        }
        let report = Report { variants };
        let meta = self.meta("report", &ds, &self.config.run_digest());
        write_json(self.path("report.json"), &meta, &report)?;
        let path = self.path("report.md");
        std::fs::write(&path, md).map_err(|e| Error::io(&path, e))?;

        if self.path("timing.json").exists() {
            let (meta, run): (ArtifactMeta, TimingRun) = read_json(self.path("timing.json"))?;
            meta.check_schema(&ds.schema.hash())?;
            let summary = summarize(&run, self.setup_times()?);
            write_json(self.path("timing_summary.json"), &meta, &summary)?;
            let path = self.path("timing_summary.md");
            std::fs::write(&path, render_summary(&summary)).map_err(|e| Error::io(&path, e))?;
        }
        Ok(report)
    }

    pub fn load_report(&self) -> Result<Report> {
        let (meta, report): (ArtifactMeta, Report) = read_json(self.path("report.json"))?;
        meta.check_config(&self.config.run_digest())?;
        Ok(report)
    }
}
