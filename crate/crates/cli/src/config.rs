//! Pipeline configuration: one JSON document, overridden by flags.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use regrank::analysis::HistogramFilter;
use regrank::answer::Strategy;
use regrank::metrics::ApNormalization;
use regrank::reranker::TrainsetConfig;
use regrank::triplet::MiningSchedule;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Bm25Config {
    pub k1: f64,
    pub b: f64,
    pub stem: bool,
    pub drop_stopwords: bool,
}

impl Default for Bm25Config {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75, stem: false, drop_stopwords: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MiningConfig {
    /// Dense profile whose encoder is fine-tuned.
    pub profile: String,
    pub schedule: MiningSchedule,
}

impl Default for MiningConfig {
    fn default() -> Self {
        Self { profile: "e5".into(), schedule: MiningSchedule::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub corpus: Vec<PathBuf>,
    pub corpus_profile: String,
    pub train: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub question_profile: String,
    pub min_tokens: usize,
    pub retrievers: Vec<String>,
    pub bm25: Bm25Config,
    pub beta: f64,
    pub l1_depth: usize,
    pub l2_depth: usize,
    pub k: usize,
    pub l2: bool,
    pub rerank_batch: usize,
    pub q2q_neighbors: usize,
    pub strategy: String,
    /// `stub`, `spawn:<command line>` or `unix:<socket path>`.
    pub transport: String,
    pub timeout_secs: u64,
    pub ks: Vec<usize>,
    pub ap_normalization: ApNormalization,
    pub seed: u64,
    pub out: PathBuf,
    /// Precomputed corpus embeddings per dense profile, in the exchange format.
    pub embeddings: BTreeMap<String, PathBuf>,
    pub window_n: usize,
    pub histogram: bool,
    pub histogram_filter: HistogramFilter,
    pub judge: bool,
    pub mining: MiningConfig,
    pub trainset: TrainsetConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            corpus: Vec::new(),
            corpus_profile: "obliqa".into(),
            train: None,
            test: None,
            question_profile: "obliqa".into(),
            min_tokens: 10,
            retrievers: ["bm25", "dense:e5", "dense:bge", "q2q:e5"].iter().map(|s| s.to_string()).collect(),
            bm25: Bm25Config::default(),
            beta: 4.0,
            l1_depth: 40,
            l2_depth: 40,
            k: 10,
            l2: true,
            rerank_batch: 32,
            q2q_neighbors: 10,
            strategy: "passage_concat".into(),
            transport: "stub".into(),
            timeout_secs: 300,
            ks: vec![10, 20, 40],
            ap_normalization: ApNormalization::default(),
            seed: 0,
            out: PathBuf::from("out"),
            embeddings: BTreeMap::new(),
            window_n: 0,
            histogram: false,
            histogram_filter: HistogramFilter::default(),
            judge: false,
            mining: MiningConfig::default(),
            trainset: TrainsetConfig::default(),
        }
    }
}

/// A first-stage retriever named in the configuration.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RetrieverSpec {
    Bm25,
    Dense(String),
    Q2Q(String),
}

fn valid_profile(p: &str) -> bool {
    !p.is_empty() && p.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

impl RetrieverSpec {
    pub fn parse(s: &str) -> Result<Self, CliError> {
        let spec = match s.split_once(':') {
            None if s == "bm25" => Some(RetrieverSpec::Bm25),
            Some(("dense", p)) if valid_profile(p) => Some(RetrieverSpec::Dense(p.into())),
            Some(("q2q", p)) if valid_profile(p) => Some(RetrieverSpec::Q2Q(p.into())),
            _ => None,
        };
        spec.ok_or_else(|| {
            CliError::usage(format!("unknown retriever `{s}` (expected bm25, dense:<profile> or q2q:<profile>)"))
        })
    }

    pub fn id(&self) -> String {
        match self {
            RetrieverSpec::Bm25 => "bm25".into(),
            RetrieverSpec::Dense(p) => format!("dense:{p}"),
            RetrieverSpec::Q2Q(p) => format!("q2q:{p}"),
        }
    }

    pub fn profile(&self) -> Option<&str> {
        match self {
            RetrieverSpec::Bm25 => None,
            RetrieverSpec::Dense(p) | RetrieverSpec::Q2Q(p) => Some(p),
        }
    }
}

/// File-name form of a retriever id.
pub fn sanitize(id: &str) -> String {
    id.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

impl PipelineConfig {
    /// Reads a config file; relative paths inside it resolve against its directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: PipelineConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::usage(format!("invalid config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        cfg.corpus.iter_mut().for_each(fix);
        cfg.train.iter_mut().for_each(fix);
        cfg.test.iter_mut().for_each(fix);
        cfg.embeddings.values_mut().for_each(fix);
        fix(&mut cfg.out);
        Ok(cfg)
    }

    pub fn retriever_specs(&self) -> Result<Vec<RetrieverSpec>, CliError> {
        let specs: Vec<RetrieverSpec> =
            self.retrievers.iter().map(|s| RetrieverSpec::parse(s)).collect::<Result<_, _>>()?;
        let mut seen = std::collections::HashSet::new();
        for s in &specs {
            if !seen.insert(s) {
                return Err(CliError::usage(format!("retriever `{}` listed twice", s.id())));
            }
        }
        if specs.is_empty() {
            return Err(CliError::usage("no retrievers enabled"));
        }
        Ok(specs)
    }

    pub fn strategy(&self) -> Result<Strategy, CliError> {
        Strategy::parse(&self.strategy).ok_or_else(|| CliError::usage(format!("unknown strategy `{}`", self.strategy)))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.retriever_specs()?;
        self.strategy()?;
        if self.k == 0 || self.l1_depth == 0 || self.l2_depth == 0 {
            return Err(CliError::usage("k, l1_depth and l2_depth must be at least 1"));
        }
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return Err(CliError::usage(format!("beta must be positive, got {}", self.beta)));
        }
        if self.ks.is_empty() || self.ks.contains(&0) {
            return Err(CliError::usage("ks must be a non-empty list of positive cutoffs"));
        }
        if self.q2q_neighbors == 0 || self.rerank_batch == 0 {
            return Err(CliError::usage("q2q_neighbors and rerank_batch must be at least 1"));
        }
        let transport_ok = self.transport == "stub"
            || self.transport.strip_prefix("spawn:").is_some_and(|c| !c.trim().is_empty())
            || self.transport.strip_prefix("unix:").is_some_and(|p| !p.is_empty());
        if !transport_ok {
            return Err(CliError::usage(format!("unsupported transport `{}`", self.transport)));
        }
        if !valid_profile(&self.mining.profile) {
            return Err(CliError::usage(format!("invalid mining profile `{}`", self.mining.profile)));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, ignoring the output directory.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(&self.hashed_view()).expect("config serializes");
        hex::encode(Sha256::digest(canonical))
    }

    /// The configuration as recorded in manifests: everything but `out`.
    pub fn hashed_view(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(map) = v.as_object_mut() {
            map.remove("out");
        }
        v
    }
}
