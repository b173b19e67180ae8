//! End-to-end run: dataset → cases → rank → score → fit → report, with
//! every stage's output written into the run directory.

pub mod config;
pub mod report;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adapters::{build_ranker, CacheRecord, ModelKind, ModelSpec, RankContext, ResponseCache};
use crate::casegen::{generate_cases, read_cases_jsonl, write_cases_jsonl, CaseBatch, EvalCase};
use crate::curves::report::{fit_model, FitReport};
use crate::curves::CurveParams;
use crate::ingest::{parse_lastfm, parse_movielens, preprocess, read_store, write_store, Dataset};
use crate::metrics::{score_case, ScoredCase, ScoringPolicy, Unscored};
use crate::promptio::{render_prompt, PromptTemplate, RankedResponse};
use crate::synth::{generate, GroundTruth};

pub use config::{ConfigError, RunConfig};
pub use report::{emit_report, ReportFiles};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Dataset,
    Cases,
    Rank,
    Score,
    Fit,
    Report,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Dataset => "dataset",
            Stage::Cases => "cases",
            Stage::Rank => "rank",
            Stage::Score => "score",
            Stage::Fit => "fit",
            Stage::Report => "report",
        })
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("stage {stage}: {message}")]
    Stage { stage: Stage, message: String },
}

impl PipelineError {
    pub fn stage(stage: Stage, e: impl fmt::Display) -> Self {
        PipelineError::Stage {
            stage,
            message: e.to_string(),
        }
    }
}

type Result<T> = std::result::Result<T, PipelineError>;

/// File names inside a run directory.
pub struct RunPaths {
    pub root: PathBuf,
}

impl RunPaths {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        RunPaths { root: root.into() }
    }
    pub fn config(&self) -> PathBuf {
        self.root.join("config.toml")
    }
    pub fn dataset(&self) -> PathBuf {
        self.root.join("dataset")
    }
    pub fn ground_truth(&self) -> PathBuf {
        self.root.join("ground_truth.json")
    }
    pub fn cases(&self) -> PathBuf {
        self.root.join("cases.jsonl")
    }
    pub fn skips(&self) -> PathBuf {
        self.root.join("skips.tsv")
    }
    pub fn rows(&self) -> PathBuf {
        self.root.join("rows.tsv")
    }
    pub fn cache(&self) -> PathBuf {
        self.root.join("cache.jsonl")
    }
    pub fn responses(&self) -> PathBuf {
        self.root.join("responses.jsonl")
    }
    pub fn scores(&self) -> PathBuf {
        self.root.join("scores.csv")
    }
    pub fn unscored(&self) -> PathBuf {
        self.root.join("unscored.tsv")
    }
    pub fn fit(&self) -> PathBuf {
        self.root.join("fit.json")
    }
    pub fn curves(&self) -> PathBuf {
        self.root.join("curves")
    }
}

fn write(stage: Stage, path: &Path, text: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, text).map_err(|e| PipelineError::stage(stage, format!("{}: {e}", path.display())))
}

/// Builds the dataset the config names, plus ground truth when synthetic.
pub fn load_dataset(cfg: &RunConfig) -> Result<(Dataset, Option<GroundTruth>)> {
    let st = |e: &dyn fmt::Display| PipelineError::stage(Stage::Dataset, e);
    let src = &cfg.dataset;
    let rules = cfg.preprocess_rules();
    let (raw, mut truth) = if let Some(spec) = &src.synth {
        let (d, t) = generate(spec).map_err(|e| st(&e))?;
        (d, Some(t))
    } else if let Some(dir) = &src.movielens {
        (parse_movielens(dir).map_err(|e| st(&e))?, None)
    } else if let Some(dir) = &src.lastfm {
        let (d, skips) = parse_lastfm(dir).map_err(|e| st(&e))?;
        if !skips.entries.is_empty() {
            log::warn!("{}: skipped {} log rows", skips.file, skips.entries.len());
        }
        (d, None)
    } else {
        let dir = src.store.as_ref().ok_or_else(|| st(&"no dataset source"))?;
        (read_store(dir).map_err(|e| st(&e))?, None)
    };
    if let Some(p) = &src.ground_truth {
        truth = Some(GroundTruth::read(p).map_err(|e| st(&e))?);
    }
    let dataset = if rules.is_identity() {
        raw
    } else {
        preprocess(&raw, &rules).map_err(|e| st(&e))?
    };
    Ok((dataset, truth))
}

pub fn make_cases(cfg: &RunConfig, dataset: &Dataset) -> Result<CaseBatch> {
    let schema = cfg.schema()?;
    let rows = cfg.matrix_rows()?;
    generate_cases(dataset, &schema, &rows, cfg.seed, cfg.k).map_err(|e| PipelineError::stage(Stage::Cases, e))
}

/// One model's outcome on one case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseLine {
    pub model: String,
    pub case_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<RankedResponse>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

pub struct RankInputs<'a> {
    pub dataset: &'a Dataset,
    pub truth: Option<&'a GroundTruth>,
    pub cache: &'a ResponseCache,
    pub template: &'a PromptTemplate,
    pub seed: u64,
    pub max_in_flight: usize,
}

/// Ranks every case with every model. Remote responses go through the
/// cache: a hit is parsed without a request, a miss is stored once
/// answered. Adapter failures mark the case unscored for that model.
pub fn rank_cases(models: &[ModelSpec], cases: &[EvalCase], inputs: &RankInputs<'_>) -> Result<Vec<ResponseLine>> {
    let st = |e: &dyn fmt::Display| PipelineError::stage(Stage::Rank, e);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(inputs.max_in_flight)
        .build()
        .map_err(|e| st(&e))?;
    let ctx = RankContext {
        dataset: inputs.dataset,
        truth: inputs.truth,
        cache: Some(inputs.cache),
        seed: inputs.seed,
    };
    let mut lines = Vec::with_capacity(models.len() * cases.len());
    for spec in models {
        let ranker = build_ranker(spec, ctx).map_err(|e| st(&e))?;
        let cached = spec.kind == ModelKind::HttpChat;
        let out: Vec<Result<ResponseLine>> = pool.install(|| {
            cases
                .par_iter()
                .map(|case| {
                    let prompt = render_prompt(case, inputs.dataset, inputs.template).map_err(|e| st(&e))?;
                    let line = |response: Option<RankedResponse>, error: Option<String>| ResponseLine {
                        model: spec.name.clone(),
                        case_id: case.case_id.clone(),
                        response,
                        error,
                    };
                    if cached {
                        if let Some(rec) = inputs.cache.get(&case.case_id, spec.cache_name(), prompt.hash()) {
                            let parsed = crate::promptio::parse_response(&rec.response, case, inputs.dataset);
                            return Ok(line(Some(parsed), None));
                        }
                    }
                    match ranker.rank(case, &prompt) {
                        Ok(resp) => {
                            if cached {
                                inputs
                                    .cache
                                    .put(CacheRecord::new(&case.case_id, spec.cache_name(), prompt.hash(), resp.raw.clone()))
                                    .map_err(|e| st(&e))?;
                            }
                            Ok(line(Some(resp), None))
                        }
                        Err(e) => {
                            log::warn!("{}: case {}: {e}", spec.name, case.case_id);
                            Ok(line(None, Some(e.to_string())))
                        }
                    }
                })
                .collect()
        });
        for l in out {
            lines.push(l?);
        }
    }
    Ok(lines)
}

pub fn score_responses(
    cases: &[EvalCase],
    responses: &[ResponseLine],
    policy: ScoringPolicy,
) -> (Vec<ScoredCase>, Vec<Unscored>) {
    let by_id: std::collections::HashMap<&str, &EvalCase> = cases.iter().map(|c| (c.case_id.as_str(), c)).collect();
    let mut scored = Vec::new();
    let mut unscored = Vec::new();
    for line in responses {
        let fail = |reason: String| Unscored {
            case_id: line.case_id.clone(),
            model: line.model.clone(),
            reason,
        };
        let Some(case) = by_id.get(line.case_id.as_str()) else {
            unscored.push(fail("unknown case".into()));
            continue;
        };
        match (&line.response, &line.error) {
            (Some(resp), _) => match score_case(case, resp, &line.model, policy) {
                Ok(s) => scored.push(s),
                Err(u) => unscored.push(u),
            },
            (None, err) => unscored.push(fail(err.clone().unwrap_or_else(|| "no response".into()))),
        }
    }
    (scored, unscored)
}

pub fn write_scores_csv(path: &Path, scores: &[ScoredCase]) -> std::io::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for s in scores {
        w.serialize(s)?;
    }
    w.flush()
}

pub fn read_scores_csv(path: &Path) -> std::io::Result<Vec<ScoredCase>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize()
        .collect::<std::result::Result<Vec<ScoredCase>, csv::Error>>()
        .map_err(std::io::Error::other)
}

pub fn unscored_tsv(unscored: &[Unscored]) -> String {
    let mut out = String::from("case_id\tmodel\treason\n");
    for u in unscored {
        out.push_str(&format!("{}\t{}\t{}\n", u.case_id, u.model, u.reason.replace(['\t', '\n'], " ")));
    }
    out
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> std::io::Result<()> {
    let mut text = String::new();
    for r in rows {
        text.push_str(&serde_json::to_string(r).map_err(std::io::Error::other)?);
        text.push('\n');
    }
    fs::write(path, text)
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> std::io::Result<Vec<T>> {
    fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(std::io::Error::other))
        .collect()
}

/// Fits one report per model, in the given order.
pub fn fit_models(models: &[String], scores: &[ScoredCase], cases: &[EvalCase], params: &CurveParams) -> Vec<FitReport> {
    let ids: Vec<&str> = cases.iter().map(|c| c.case_id.as_str()).collect();
    models.iter().map(|m| fit_model(m, scores, &ids, params)).collect()
}

pub fn write_fits(paths: &RunPaths, fits: &[FitReport]) -> Result<()> {
    let text = serde_json::to_string_pretty(fits).map_err(|e| PipelineError::stage(Stage::Fit, e))?;
    write(Stage::Fit, &paths.fit(), text)?;
    let dir = paths.curves();
    fs::create_dir_all(&dir).map_err(|e| PipelineError::stage(Stage::Fit, e))?;
    for r in fits {
        for s in std::iter::once(&r.overall).chain(&r.facets) {
            let name = format!("{}__{}.csv", r.model, s.facet.slug());
            write(Stage::Fit, &dir.join(name), s.to_csv())?;
        }
    }
    Ok(())
}

pub fn read_fits(path: &Path) -> Result<Vec<FitReport>> {
    let text = fs::read_to_string(path).map_err(|e| PipelineError::stage(Stage::Fit, format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| PipelineError::stage(Stage::Fit, e))
}

pub fn load_template(cfg: &RunConfig, dataset: &Dataset) -> Result<PromptTemplate> {
    match &cfg.prompt_template {
        Some(p) => PromptTemplate::from_file(p).map_err(|e| PipelineError::stage(Stage::Rank, e)),
        None => Ok(PromptTemplate::builtin(dataset.domain())),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub dir: PathBuf,
    pub cases: usize,
    pub scored: usize,
    pub unscored: usize,
    pub reused_cases: bool,
    pub report: ReportFiles,
}

/// Dataset and cases stages. When the run directory already holds the
/// same effective config and both outputs, they are read back instead of
/// rebuilt.
pub fn prepare(cfg: &RunConfig) -> Result<(Dataset, Option<GroundTruth>, Vec<EvalCase>, bool)> {
    cfg.validate()?;
    let paths = RunPaths::new(&cfg.output);
    fs::create_dir_all(&paths.root).map_err(|e| PipelineError::stage(Stage::Dataset, e))?;
    let effective = cfg.effective_toml();
    let same_config = fs::read_to_string(paths.config()).is_ok_and(|t| t == effective);
    let truth_ok = !cfg.has_ground_truth() || paths.ground_truth().is_file();
    if same_config && paths.cases().is_file() && paths.dataset().join("manifest.json").is_file() && truth_ok {
        let dataset = read_store(paths.dataset()).map_err(|e| PipelineError::stage(Stage::Dataset, e))?;
        let truth = if cfg.has_ground_truth() {
            Some(GroundTruth::read(&paths.ground_truth()).map_err(|e| PipelineError::stage(Stage::Dataset, e))?)
        } else {
            None
        };
        let cases = read_cases_jsonl(paths.cases()).map_err(|e| PipelineError::stage(Stage::Cases, e))?;
        return Ok((dataset, truth, cases, true));
    }
    // a changed config invalidates every later stage
    for stale in [paths.cases(), paths.config()] {
        let _ = fs::remove_file(stale);
    }
    let (dataset, truth) = load_dataset(cfg)?;
    write_store(&dataset, paths.dataset()).map_err(|e| PipelineError::stage(Stage::Dataset, e))?;
    if let Some(t) = &truth {
        t.write(&paths.ground_truth()).map_err(|e| PipelineError::stage(Stage::Dataset, e))?;
    }
    let batch = make_cases(cfg, &dataset)?;
    write_cases_jsonl(paths.cases(), &batch.cases).map_err(|e| PipelineError::stage(Stage::Cases, e))?;
    write(Stage::Cases, &paths.skips(), batch.skip_report_tsv())?;
    write(Stage::Cases, &paths.rows(), batch.row_report_tsv())?;
    for r in batch.rows.iter().filter(|r| r.shortfall() > 0) {
        log::info!("{}/{}/h={}: produced {} of {}", r.setting, r.setup, r.h, r.produced, r.requested);
    }
    write(Stage::Cases, &paths.config(), &effective)?;
    Ok((dataset, truth, batch.cases, false))
}

pub fn run_pipeline(cfg: &RunConfig) -> Result<RunSummary> {
    let (dataset, truth, cases, reused_cases) = prepare(cfg)?;
    let paths = RunPaths::new(&cfg.output);

    let cache = ResponseCache::open(paths.cache()).map_err(|e| PipelineError::stage(Stage::Rank, e))?;
    let template = load_template(cfg, &dataset)?;
    let inputs = RankInputs {
        dataset: &dataset,
        truth: truth.as_ref(),
        cache: &cache,
        template: &template,
        seed: cfg.seed,
        max_in_flight: cfg.max_in_flight,
    };
    let responses = rank_cases(&cfg.models, &cases, &inputs)?;
    write_jsonl(&paths.responses(), &responses).map_err(|e| PipelineError::stage(Stage::Rank, e))?;

    let (scored, unscored) = score_responses(&cases, &responses, cfg.policy);
    write_scores_csv(&paths.scores(), &scored).map_err(|e| PipelineError::stage(Stage::Score, e))?;
    write(Stage::Score, &paths.unscored(), unscored_tsv(&unscored))?;

    let names: Vec<String> = cfg.models.iter().map(|m| m.name.clone()).collect();
    let fits = fit_models(&names, &scored, &cases, &cfg.curves);
    write_fits(&paths, &fits)?;

    let report = emit_report(&fits, &paths.root).map_err(|e| PipelineError::stage(Stage::Report, e))?;
    Ok(RunSummary {
        dir: paths.root,
        cases: cases.len(),
        scored: scored.len(),
        unscored: unscored.len(),
        reused_cases,
        report,
    })
}
