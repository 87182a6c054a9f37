//! Pipeline commands. Every artifact lives under the configured output
//! directory; see [`Layout`] for the file names.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Duration, SystemTime};

use regrank::analysis::{entailment_histogram, judge_answers};
use regrank::answer::{llm_answers, passage_concat, single_line, Answer, AnswerError, Strategy};
use regrank::corpus::{load_corpus, load_questions, FormatProfile};
use regrank::dense::{dense_search, load_embeddings, EmbeddingMatrix, Q2QIndex, Space};
use regrank::fusion::{rrf_fuse, FusionConfig};
use regrank::gateway::{Embedder, Gateway, LineTransport};
use regrank::jsonl::{read_jsonl, write_jsonl};
use regrank::metrics::{evaluate, render_table, run_ablation, RunSet};
use regrank::repass::{repass, RePassReport, RepassError, RuleObligationDetector, WindowConfig};
use regrank::reranker::{build_rerank_trainset, rerank, TrainsetConfig};
use regrank::sparse::{Bm25Params, SparseIndex};
use regrank::text::TokenizerConfig;
use regrank::triplet::{run_mining_loop, MiningIo, MiningRetriever, TripletSample};
use regrank::{Corpus, Passage, PassageRef, Question, RankedList};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::{sanitize, PipelineConfig, RetrieverSpec};
use crate::error::CliError;
use crate::manifest::Recorder;

/// File names under the output directory, all relative to it.
pub struct Layout;

impl Layout {
    pub const INDEX: &'static str = "index";
    pub const BM25: &'static str = "index/bm25.json";
    pub const Q2Q_GOLD: &'static str = "index/q2q_gold.json";
    pub const RETRIEVAL: &'static str = "retrieval.jsonl";
    pub const ANSWERS: &'static str = "answers.jsonl";
    pub const RETRIEVAL_REPORT: &'static str = "eval/retrieval_report.json";
    pub const ABLATION: &'static str = "eval/ablation.json";
    pub const ABLATION_TABLE: &'static str = "eval/ablation.txt";
    pub const REPASS: &'static str = "eval/repass.jsonl";
    pub const REPASS_SUMMARY: &'static str = "eval/repass_summary.json";
    pub const HISTOGRAM: &'static str = "eval/histogram.json";
    pub const HISTOGRAM_CSV: &'static str = "eval/histogram.csv";
    pub const JUDGE: &'static str = "eval/judge.json";
    pub const MINING_REPORT: &'static str = "mining/report.json";
    pub const TRAINSET: &'static str = "rerank_trainset.jsonl";

    /// `kind` is `corpus` or `train`.
    pub fn embeddings(profile: &str, kind: &str) -> String {
        format!("index/embeddings/{profile}.{kind}.jsonl")
    }

    pub fn run(retriever_id: &str) -> String {
        format!("runs/{}.jsonl", sanitize(retriever_id))
    }

    pub fn triplets(iteration: usize) -> String {
        format!("mining/triplets_iter{iteration}.jsonl")
    }

    pub fn export(iteration: usize) -> String {
        format!("mining/export_iter{iteration}.jsonl")
    }
}

/// One command invocation: resolved configuration plus command flags.
pub struct Context {
    pub config: PipelineConfig,
    pub force: bool,
    pub dry_run: bool,
    gateway: Option<Gateway>,
    recorder: Recorder,
    started: SystemTime,
}

impl Context {
    pub fn new(config: PipelineConfig) -> Self {
        Self {
            config,
            force: false,
            dry_run: false,
            gateway: None,
            recorder: Recorder::default(),
            started: SystemTime::now(),
        }
    }

    fn out(&self, rel: &str) -> PathBuf {
        self.config.out.join(rel)
    }

    /// Opens the scorer transport on first use.
    fn gateway(&mut self) -> Result<&Gateway, CliError> {
        if self.gateway.is_none() {
            self.gateway = Some(open_gateway(&self.config)?);
        }
        Ok(self.gateway.as_ref().expect("just opened"))
    }

    fn input(&mut self, path: &Path) {
        self.recorder.input(path);
    }

    /// An index artifact consumed by a later command.
    fn staged(&mut self, rel: &str, hint: &str) -> Result<PathBuf, CliError> {
        let path = self.out(rel);
        if !path.is_file() {
            return Err(CliError::usage(format!("{} not found; run `{hint}` first", path.display())));
        }
        self.recorder.input_as(&path, format!("$out/{rel}"));
        Ok(path)
    }

    fn write_jsonl<T: Serialize>(&mut self, rel: &str, items: &[T]) -> Result<(), CliError> {
        let path = self.out(rel);
        create_parent(&path)?;
        let mut w = BufWriter::new(File::create(&path)?);
        write_jsonl(items, &mut w)?;
        w.flush()?;
        self.recorder.artifact(rel);
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<(), CliError> {
        self.write_text(rel, &(serde_json::to_string_pretty(value)? + "\n"))
    }

    fn write_text(&mut self, rel: &str, text: &str) -> Result<(), CliError> {
        let path = self.out(rel);
        create_parent(&path)?;
        std::fs::write(&path, text)?;
        self.recorder.artifact(rel);
        Ok(())
    }

    fn finish(self, command: &str) -> Result<(), CliError> {
        let path = self.recorder.write(command, &self.config, self.started)?;
        log::info!("{command}: manifest at {}", path.display());
        Ok(())
    }
}

fn create_parent(path: &Path) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    Ok(())
}

pub fn open_gateway(config: &PipelineConfig) -> Result<Gateway, CliError> {
    let timeout = Duration::from_secs(config.timeout_secs);
    match config.transport.split_once(':') {
        None if config.transport == "stub" => Ok(Gateway::stub()),
        Some(("spawn", command)) => {
            let mut parts = command.split_whitespace();
            let program = parts.next().ok_or_else(|| CliError::usage("`spawn:` transport needs a command"))?;
            let args: Vec<String> = parts.map(str::to_string).collect();
            Ok(Gateway::new(Box::new(LineTransport::spawn(program, &args, timeout)?)))
        }
        #[cfg(unix)]
        Some(("unix", path)) => Ok(Gateway::new(Box::new(LineTransport::unix_socket(path, timeout)?))),
        _ => Err(CliError::usage(format!("unsupported transport `{}`", config.transport))),
    }
}

fn read_jsonl_file<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, CliError> {
    let f = File::open(path).map_err(|e| CliError::usage(format!("cannot open {}: {e}", path.display())))?;
    read_jsonl(BufReader::new(f)).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

fn read_json_file<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let f = File::open(path).map_err(|e| CliError::usage(format!("cannot open {}: {e}", path.display())))?;
    serde_json::from_reader(BufReader::new(f)).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

fn require_input(path: &Path) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::usage(format!("input file not found: {}", path.display())))
    }
}

fn load_pipeline_corpus(ctx: &mut Context) -> Result<Corpus, CliError> {
    if ctx.config.corpus.is_empty() {
        return Err(CliError::usage("no corpus files configured (use --corpus)"));
    }
    let profile = FormatProfile::named(&ctx.config.corpus_profile)?;
    let mut corpus: Option<Corpus> = None;
    for path in ctx.config.corpus.clone() {
        require_input(&path)?;
        ctx.input(&path);
        let part = load_corpus(&path, &profile)?;
        match corpus.as_mut() {
            None => corpus = Some(part),
            Some(c) => c.merge(part)?,
        }
    }
    let corpus = corpus.expect("at least one corpus file").preprocess(ctx.config.min_tokens);
    if corpus.is_empty() {
        return Err(CliError::data(format!("no passages with at least {} tokens", ctx.config.min_tokens)));
    }
    Ok(corpus)
}

fn load_split(ctx: &mut Context, train: bool, corpus: &Corpus) -> Result<Vec<Question>, CliError> {
    let (path, flag) = if train { (ctx.config.train.clone(), "--train") } else { (ctx.config.test.clone(), "--test") };
    let path = path.ok_or_else(|| CliError::usage(format!("no question split configured (use {flag})")))?;
    require_input(&path)?;
    ctx.input(&path);
    let questions = load_questions(&path, &FormatProfile::named(&ctx.config.question_profile)?)?;
    corpus.validate_gold(&questions)?;
    Ok(questions)
}

fn labeled_only(questions: Vec<Question>, what: &str) -> Result<Vec<Question>, CliError> {
    let total = questions.len();
    let labeled: Vec<Question> = questions.into_iter().filter(Question::is_labeled).collect();
    if labeled.len() < total {
        log::warn!("{what}: skipping {} unlabeled questions", total - labeled.len());
    }
    if labeled.is_empty() {
        return Err(CliError::data(format!("{what}: no labeled questions")));
    }
    Ok(labeled)
}

fn embed_matrix(
    gateway: &Gateway,
    profile: &str,
    ids: Vec<String>,
    texts: &[String],
) -> Result<EmbeddingMatrix, CliError> {
    let vectors = gateway.embed(profile, texts)?;
    let dim = vectors.first().map_or(0, Vec::len);
    Ok(EmbeddingMatrix::new(profile, dim, Space::Cosine, ids.into_iter().zip(vectors))?)
}

fn question_matrix(ctx: &mut Context, profile: &str, questions: &[Question]) -> Result<EmbeddingMatrix, CliError> {
    let ids = questions.iter().map(|q| q.question_id.clone()).collect();
    let texts: Vec<String> = questions.iter().map(|q| q.text.clone()).collect();
    embed_matrix(ctx.gateway()?, profile, ids, &texts)
}

/// Reorders a provided embedding file to corpus order, dropping extra rows.
fn align_to_corpus(matrix: &EmbeddingMatrix, corpus: &Corpus, profile: &str) -> Result<EmbeddingMatrix, CliError> {
    let rows: HashMap<&str, &[f64]> = matrix.rows().collect();
    let aligned = corpus
        .passages()
        .iter()
        .map(|p| {
            let key = p.passage_ref().key();
            rows.get(key.as_str())
                .map(|v| (key.clone(), v.to_vec()))
                .ok_or_else(|| CliError::data(format!("embedding file for `{profile}` lacks passage {key}")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(EmbeddingMatrix::new(profile, matrix.dim(), Space::Cosine, aligned)?)
}

fn write_matrix(ctx: &mut Context, rel: &str, matrix: &EmbeddingMatrix) -> Result<(), CliError> {
    let path = ctx.out(rel);
    create_parent(&path)?;
    let mut w = BufWriter::new(File::create(&path)?);
    matrix.write_exchange(&mut w)?;
    w.flush()?;
    ctx.recorder.artifact(rel);
    Ok(())
}

// ---------------------------------------------------------------------------
// index

pub fn cmd_index(mut ctx: Context) -> Result<(), CliError> {
    ctx.config.validate()?;
    let specs = ctx.config.retriever_specs()?;
    let index_dir = ctx.out(Layout::INDEX);
    if index_dir.exists() {
        let occupied = std::fs::read_dir(&index_dir)?.next().is_some();
        if occupied && !ctx.force {
            return Err(CliError::usage(format!("{} already exists; pass --force to rebuild", index_dir.display())));
        }
        std::fs::remove_dir_all(&index_dir)?;
    }
    let corpus = load_pipeline_corpus(&mut ctx)?;

    if specs.contains(&RetrieverSpec::Bm25) {
        let params = Bm25Params { k1: ctx.config.bm25.k1, b: ctx.config.bm25.b };
        let tokenizer = TokenizerConfig { stem: ctx.config.bm25.stem, drop_stopwords: ctx.config.bm25.drop_stopwords };
        let index = SparseIndex::build(&corpus, params, tokenizer)?;
        let path = ctx.out(Layout::BM25);
        create_parent(&path)?;
        let mut w = BufWriter::new(File::create(&path)?);
        index.write_snapshot(&mut w)?;
        w.flush()?;
        ctx.recorder.artifact(Layout::BM25);
    }

    let dense: BTreeSet<&str> =
        specs.iter().filter_map(|s| if let RetrieverSpec::Dense(p) = s { Some(p.as_str()) } else { None }).collect();
    for profile in dense {
        let matrix = match ctx.config.embeddings.get(profile).cloned() {
            Some(file) => {
                require_input(&file)?;
                ctx.input(&file);
                align_to_corpus(&load_embeddings(&file)?, &corpus, profile)?
            }
            None => {
                let ids = corpus.passages().iter().map(|p| p.passage_ref().key()).collect();
                let texts: Vec<String> = corpus.passages().iter().map(|p| p.text.clone()).collect();
                embed_matrix(ctx.gateway()?, profile, ids, &texts)?
            }
        };
        write_matrix(&mut ctx, &Layout::embeddings(profile, "corpus"), &matrix)?;
    }

    let q2q: BTreeSet<&str> =
        specs.iter().filter_map(|s| if let RetrieverSpec::Q2Q(p) = s { Some(p.as_str()) } else { None }).collect();
    if !q2q.is_empty() {
        let train = labeled_only(load_split(&mut ctx, true, &corpus)?, "train split")?;
        for profile in q2q {
            let matrix = question_matrix(&mut ctx, profile, &train)?;
            write_matrix(&mut ctx, &Layout::embeddings(profile, "train"), &matrix)?;
        }
        let gold: BTreeMap<&str, &[PassageRef]> =
            train.iter().map(|q| (q.question_id.as_str(), q.gold_refs.as_slice())).collect();
        ctx.write_json(Layout::Q2Q_GOLD, &gold)?;
    }
    ctx.finish("index")
}

// ---------------------------------------------------------------------------
// first-stage retrieval

/// Raw first-stage lists of every retriever at `depth`, aligned with `questions`.
fn first_stage(
    ctx: &mut Context,
    specs: &[RetrieverSpec],
    corpus: &Corpus,
    questions: &[Question],
    depth: usize,
) -> Result<Vec<(String, Vec<RankedList>)>, CliError> {
    let mut out = Vec::new();
    for spec in specs {
        let id = spec.id();
        let mut lists = match spec {
            RetrieverSpec::Bm25 => {
                let path = ctx.staged(Layout::BM25, "index")?;
                let index = SparseIndex::read_snapshot(BufReader::new(File::open(path)?))?;
                if index.doc_count() != corpus.len() {
                    return Err(CliError::data("bm25 index does not match the corpus; rerun `index --force`"));
                }
                questions.iter().map(|q| index.search_ranked(&q.question_id, &q.text, depth)).collect()
            }
            RetrieverSpec::Dense(p) => {
                let path = ctx.staged(&Layout::embeddings(p, "corpus"), "index")?;
                let docs = load_embeddings(path)?;
                if docs.len() != corpus.len() {
                    return Err(CliError::data(format!(
                        "`{p}` embeddings do not match the corpus; rerun `index --force`"
                    )));
                }
                let queries = question_matrix(ctx, p, questions)?;
                dense_search(&queries, &docs, depth, &id)?
            }
            RetrieverSpec::Q2Q(p) => {
                let path = ctx.staged(&Layout::embeddings(p, "train"), "index")?;
                let train = load_embeddings(path)?;
                let gold_path = ctx.staged(Layout::Q2Q_GOLD, "index")?;
                let gold: HashMap<String, Vec<PassageRef>> = read_json_file(&gold_path)?;
                let index = Q2QIndex::new(train, gold)?;
                let queries = question_matrix(ctx, p, questions)?;
                questions
                    .iter()
                    .enumerate()
                    .map(|(i, q)| index.search(&q.question_id, queries.row(i), ctx.config.q2q_neighbors, depth))
                    .collect::<Result<Vec<_>, _>>()?
            }
        };
        for l in lists.iter_mut() {
            l.retriever_id = id.clone();
        }
        out.push((id, lists));
    }
    Ok(out)
}

fn truncated(list: &RankedList, k: usize) -> RankedList {
    RankedList { entries: list.top(k).to_vec(), ..list.clone() }
}

// ---------------------------------------------------------------------------
// retrieve

pub fn cmd_retrieve(mut ctx: Context) -> Result<(), CliError> {
    ctx.config.validate()?;
    let specs = ctx.config.retriever_specs()?;
    let corpus = load_pipeline_corpus(&mut ctx)?;
    let questions = load_split(&mut ctx, false, &corpus)?;
    let depth = ctx.config.l1_depth;
    let runs = first_stage(&mut ctx, &specs, &corpus, &questions, depth)?;
    for (id, lists) in &runs {
        ctx.write_jsonl(&Layout::run(id), lists)?;
    }

    let ids: Vec<String> = runs.iter().map(|(id, _)| id.clone()).collect();
    let fusion = FusionConfig::new(ctx.config.beta, ids)?;
    let mut finals = Vec::with_capacity(questions.len());
    for (i, q) in questions.iter().enumerate() {
        let fused = if runs.len() == 1 {
            runs[0].1[i].clone()
        } else {
            let lists: Vec<RankedList> = runs.iter().map(|(_, l)| l[i].clone()).collect();
            rrf_fuse(&lists, &fusion, depth)?
        };
        let list = if ctx.config.l2 {
            let candidates = truncated(&fused, ctx.config.l2_depth);
            if candidates.is_empty() {
                RankedList::empty(&q.question_id, format!("l2({})", fused.retriever_id))
            } else {
                let (k, batch) = (ctx.config.k, ctx.config.rerank_batch);
                rerank(q, &candidates, &corpus, ctx.gateway()?, k, batch)?
            }
        } else {
            truncated(&fused, ctx.config.k)
        };
        finals.push(list);
    }
    ctx.write_jsonl(Layout::RETRIEVAL, &finals)?;
    ctx.finish("retrieve")
}

fn load_final_lists(ctx: &mut Context) -> Result<HashMap<String, RankedList>, CliError> {
    let path = ctx.staged(Layout::RETRIEVAL, "retrieve")?;
    let lists: Vec<RankedList> = read_jsonl_file(&path)?;
    Ok(lists.into_iter().map(|l| (l.query_id.clone(), l)).collect())
}

fn resolve(corpus: &Corpus, refs: impl IntoIterator<Item = PassageRef>) -> Result<Vec<Passage>, CliError> {
    refs.into_iter()
        .map(|r| corpus.get(&r).cloned().ok_or_else(|| CliError::data(format!("passage {r} is not in the corpus"))))
        .collect()
}

// ---------------------------------------------------------------------------
// answer

pub fn cmd_answer(mut ctx: Context) -> Result<(), CliError> {
    ctx.config.validate()?;
    let strategy = ctx.config.strategy()?;
    let corpus = load_pipeline_corpus(&mut ctx)?;
    let questions = load_split(&mut ctx, false, &corpus)?;
    let lists = load_final_lists(&mut ctx)?;
    let mut items: Vec<(&Question, Vec<Passage>)> = Vec::new();
    for q in &questions {
        let list = lists
            .get(&q.question_id)
            .ok_or_else(|| CliError::data(format!("no ranked list for question {}", q.question_id)))?;
        let passages = resolve(&corpus, list.top(ctx.config.k).iter().map(|e| e.passage_ref()))?;
        if passages.is_empty() {
            log::warn!("question {} retrieved nothing; no answer written", q.question_id);
            continue;
        }
        items.push((q, passages));
    }
    let answers: Vec<Answer> = match strategy {
        Strategy::LlmPrompt => {
            let batch: Vec<(&Question, &[Passage])> = items.iter().map(|(q, p)| (*q, p.as_slice())).collect();
            if batch.is_empty() {
                Vec::new()
            } else {
                llm_answers(&batch, ctx.gateway()?)?
            }
        }
        Strategy::PassageConcat | Strategy::SingleLine => {
            let build = if strategy == Strategy::PassageConcat { passage_concat } else { single_line };
            items.iter().map(|(q, p)| build(&q.question_id, p)).collect::<Result<Vec<_>, AnswerError>>()?
        }
    };
    ctx.write_jsonl(Layout::ANSWERS, &answers)?;
    ctx.finish("answer")
}

// ---------------------------------------------------------------------------
// evaluate

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepassRecord {
    pub question_id: String,
    pub strategy: Strategy,
    pub report: RePassReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepassSummary {
    pub answers: usize,
    pub skipped: usize,
    pub context_n: usize,
    pub mean_e_s: f64,
    pub mean_c_s: f64,
    pub mean_oc_s: f64,
    pub mean_repass: f64,
}

fn summarize(records: &[RepassRecord], skipped: usize, context_n: usize) -> RepassSummary {
    let n = records.len().max(1) as f64;
    let mean = |f: fn(&RePassReport) -> f64| records.iter().map(|r| f(&r.report)).sum::<f64>() / n;
    RepassSummary {
        answers: records.len(),
        skipped,
        context_n,
        mean_e_s: mean(|r| r.e_s),
        mean_c_s: mean(|r| r.c_s),
        mean_oc_s: mean(|r| r.oc_s),
        mean_repass: mean(|r| r.repass),
    }
}

pub fn cmd_evaluate(mut ctx: Context) -> Result<(), CliError> {
    ctx.config.validate()?;
    let specs = ctx.config.retriever_specs()?;
    let corpus = load_pipeline_corpus(&mut ctx)?;
    let questions = load_split(&mut ctx, false, &corpus)?;
    let labeled = labeled_only(questions.clone(), "test split")?;
    let lists = load_final_lists(&mut ctx)?;
    let (ks, norm) = (ctx.config.ks.clone(), ctx.config.ap_normalization);

    let final_id = labeled
        .iter()
        .find_map(|q| lists.get(&q.question_id).map(|l| l.retriever_id.clone()))
        .unwrap_or_else(|| "final".into());
    let report = evaluate(&final_id, &lists, &labeled, &ks, norm)?;
    ctx.write_json(Layout::RETRIEVAL_REPORT, &report)?;

    let mut runs: BTreeMap<String, RunSet> = BTreeMap::new();
    for spec in &specs {
        let id = spec.id();
        let path = ctx.staged(&Layout::run(&id), "retrieve")?;
        let lists: Vec<RankedList> = read_jsonl_file(&path)?;
        runs.insert(id, lists.into_iter().map(|l| (l.query_id.clone(), l)).collect());
    }
    let rows = run_ablation(&runs, &labeled, ctx.config.beta, &ks, norm)?;
    ctx.write_json(Layout::ABLATION, &rows)?;
    ctx.write_text(Layout::ABLATION_TABLE, &render_table(&rows, &ks))?;

    let answers_path = ctx.out(Layout::ANSWERS);
    let answers: Option<Vec<Answer>> = if answers_path.is_file() {
        ctx.recorder.input_as(&answers_path, format!("$out/{}", Layout::ANSWERS));
        Some(read_jsonl_file(&answers_path)?)
    } else {
        log::warn!("{} not found; skipping answer scoring", answers_path.display());
        None
    };
    if let Some(answers) = &answers {
        let window = WindowConfig { context_n: ctx.config.window_n };
        let mut records = Vec::new();
        let mut skipped = 0;
        for a in answers {
            let passages = resolve(&corpus, a.source_refs.iter().cloned())?;
            match repass(&passages, a, ctx.gateway()?, &RuleObligationDetector, window) {
                Ok(report) => {
                    records.push(RepassRecord { question_id: a.question_id.clone(), strategy: a.strategy, report })
                }
                Err(RepassError::EmptyAnswer) => {
                    log::warn!("answer to {} has no sentences; not scored", a.question_id);
                    skipped += 1;
                }
                Err(e) => return Err(e.into()),
            }
        }
        ctx.write_jsonl(Layout::REPASS, &records)?;
        ctx.write_json(Layout::REPASS_SUMMARY, &summarize(&records, skipped, window.context_n))?;
    }

    if ctx.config.histogram {
        let filter = ctx.config.histogram_filter;
        let hist = entailment_histogram(&labeled, &lists, &corpus, ctx.gateway()?, filter)?;
        ctx.write_json(Layout::HISTOGRAM, &hist)?;
        ctx.write_text(Layout::HISTOGRAM_CSV, &hist.chart_data())?;
    }
    if ctx.config.judge {
        let answers = answers.ok_or_else(|| CliError::usage("judging needs answers; run `answer` first"))?;
        let summary = judge_answers(&answers, &questions, ctx.gateway()?)?;
        ctx.write_json(Layout::JUDGE, &summary)?;
    }
    ctx.finish("evaluate")
}

// ---------------------------------------------------------------------------
// mine

/// Dense retrieval for the mining loop: question vectors from the gateway,
/// corpus vectors from the index, replaced by each training export.
struct GatewayDense<'a> {
    gateway: &'a Gateway,
    profile: String,
    docs: EmbeddingMatrix,
    out: PathBuf,
}

impl MiningRetriever for GatewayDense<'_> {
    fn retrieve(&mut self, questions: &[Question], k: usize) -> Result<HashMap<String, RankedList>, String> {
        let ids = questions.iter().map(|q| q.question_id.clone()).collect();
        let texts: Vec<String> = questions.iter().map(|q| q.text.clone()).collect();
        let queries = embed_matrix(self.gateway, &self.profile, ids, &texts).map_err(|e| e.to_string())?;
        let lists =
            dense_search(&queries, &self.docs, k, &format!("dense:{}", self.profile)).map_err(|e| e.to_string())?;
        Ok(lists.into_iter().map(|l| (l.query_id.clone(), l)).collect())
    }

    fn reload(&mut self, iteration: usize) -> Result<(), String> {
        let path = self.out.join(Layout::export(iteration));
        if !path.is_file() {
            log::warn!("trainer wrote no export at {}; keeping previous embeddings", path.display());
            return Ok(());
        }
        let docs = load_embeddings(&path).map_err(|e| format!("{}: {e}", path.display()))?;
        if docs.len() != self.docs.len() {
            return Err(format!("{} has {} rows, expected {}", path.display(), docs.len(), self.docs.len()));
        }
        self.docs = docs;
        Ok(())
    }
}

pub fn cmd_mine(mut ctx: Context) -> Result<(), CliError> {
    ctx.config.validate()?;
    let corpus = load_pipeline_corpus(&mut ctx)?;
    let train = labeled_only(load_split(&mut ctx, true, &corpus)?, "train split")?;
    let profile = ctx.config.mining.profile.clone();
    let path = ctx.staged(&Layout::embeddings(&profile, "corpus"), "index")?;
    let docs = load_embeddings(path)?;
    if docs.len() != corpus.len() {
        return Err(CliError::data(format!("`{profile}` embeddings do not match the corpus; rerun `index --force`")));
    }
    let schedule = ctx.config.mining.schedule;
    let dry_run = ctx.dry_run;
    let out = ctx.config.out.clone();
    ctx.gateway()?;
    let gateway = ctx.gateway.take().expect("opened above");
    let mut retriever = GatewayDense { gateway: &gateway, profile: profile.clone(), docs, out: out.clone() };
    let mut written: Vec<String> = Vec::new();
    let mut sink = |iteration: usize, triplets: &[TripletSample]| -> std::io::Result<String> {
        let rel = Layout::triplets(iteration);
        let path = out.join(&rel);
        create_parent(&path).map_err(|e| std::io::Error::other(e.to_string()))?;
        let mut w = BufWriter::new(File::create(&path)?);
        write_jsonl(triplets, &mut w)?;
        w.flush()?;
        written.push(rel);
        Ok(path.to_string_lossy().into_owned())
    };
    let export = |iteration: usize| out.join(Layout::export(iteration)).to_string_lossy().into_owned();
    let io = MiningIo {
        trainer: if dry_run { None } else { Some(&gateway) },
        profile,
        sink: &mut sink,
        export_path: &export,
    };
    let report = run_mining_loop(&schedule, &mut retriever, &train, io, dry_run)?;
    for rel in written {
        ctx.recorder.artifact(rel);
    }
    ctx.write_json(Layout::MINING_REPORT, &report)?;
    ctx.finish("mine")
}

// ---------------------------------------------------------------------------
// trainset

pub fn cmd_trainset(mut ctx: Context) -> Result<(), CliError> {
    ctx.config.validate()?;
    let specs: Vec<RetrieverSpec> = ctx
        .config
        .retriever_specs()?
        .into_iter()
        .filter(|s| {
            let keep = !matches!(s, RetrieverSpec::Q2Q(_));
            if !keep {
                log::warn!("{} is skipped for training questions: they are its own neighbours", s.id());
            }
            keep
        })
        .collect();
    if specs.is_empty() {
        return Err(CliError::usage("trainset needs at least one bm25 or dense retriever"));
    }
    let corpus = load_pipeline_corpus(&mut ctx)?;
    let train = labeled_only(load_split(&mut ctx, true, &corpus)?, "train split")?;
    let config = TrainsetConfig { seed: ctx.config.seed, ..ctx.config.trainset };
    let runs = first_stage(&mut ctx, &specs, &corpus, &train, config.top_k)?;
    let lists: HashMap<String, Vec<RankedList>> = train
        .iter()
        .enumerate()
        .map(|(i, q)| (q.question_id.clone(), runs.iter().map(|(_, l)| l[i].clone()).collect()))
        .collect();
    let examples = build_rerank_trainset(&train, &lists, &corpus, &config)?;
    ctx.write_jsonl(Layout::TRAINSET, &examples)?;
    ctx.finish("trainset")
}
