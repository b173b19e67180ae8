//! Candidate selection and the case matrix.
//!
//! One attempt samples a history from the inventory, finds the users of the
//! proxy group who interacted with at least 60% of it, and builds 50
//! shuffled candidates: half that the group never touched (zero target)
//! and the rest drawn from what the group did interact with outside the
//! history. The target is the group's event frequency over the candidates.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cohort::{group_user_positions, setting_keys, ProxyKey, ProxySchema, SchemaError};
use crate::hashing::{derive_seed, StableHasher};
use crate::ingest::{Dataset, Domain};
use crate::metrics::{Distribution, MetricsError};

pub const DEFAULT_K: usize = 50;
pub const DEFAULT_HISTORIES: [usize; 6] = [0, 1, 3, 5, 10, 20];
/// Attempts allowed per requested case before a row is declared short.
pub const RETRY_FACTOR: usize = 20;
/// Smallest eligible group that yields a case.
pub const MIN_GROUP_USERS: usize = 3;

#[derive(Debug, Error)]
pub enum CaseError {
    #[error("K must be a positive even number, got {0}")]
    InvalidK(usize),
    #[error("setup B takes no demographic proxy, got key {0}")]
    SetupBWithProxy(String),
    #[error("setup C takes no history, got h = {0}")]
    SetupCWithHistory(usize),
    #[error("history length {h} exceeds the inventory of {items} items")]
    HistoryTooLong { h: usize, items: usize },
    #[error("matrix row {0} requests zero cases")]
    ZeroCount(String),
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error("internal invariant violated: {0}")]
    Internal(#[from] MetricsError),
    #[error("i/o error on {path}: {message}")]
    Io { path: String, message: String },
}

/// Prompt condition: A = demography + history, B = history only,
/// C = demography only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Setup {
    A,
    B,
    C,
}

impl Setup {
    pub const ALL: [Setup; 3] = [Setup::A, Setup::B, Setup::C];

    pub fn as_str(self) -> &'static str {
        match self {
            Setup::A => "A",
            Setup::B => "B",
            Setup::C => "C",
        }
    }
}

impl fmt::Display for Setup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Setup {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "A" | "a" => Ok(Setup::A),
            "B" | "b" => Ok(Setup::B),
            "C" | "c" => Ok(Setup::C),
            other => Err(format!("unknown setup `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalCase {
    pub case_id: String,
    pub setup: Setup,
    pub setting: String,
    pub proxy_key: ProxyKey,
    pub history: Vec<String>,
    pub candidates: Vec<String>,
    pub target: Vec<f64>,
    pub group_size: usize,
    pub domain: Domain,
}

impl EvalCase {
    pub fn h(&self) -> usize {
        self.history.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipKind {
    TooFewUsers,
    InsufficientC2Pool,
    EmptyGroup,
}

impl SkipKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SkipKind::TooFewUsers => "too_few_users",
            SkipKind::InsufficientC2Pool => "insufficient_c2_pool",
            SkipKind::EmptyGroup => "empty_group",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkipReason {
    pub kind: SkipKind,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Selection {
    Case(EvalCase),
    Skipped(SkipReason),
}

impl Selection {
    pub fn case(self) -> Option<EvalCase> {
        match self {
            Selection::Case(c) => Some(c),
            Selection::Skipped(_) => None,
        }
    }
}

/// `ceil(0.6 · h)`, in integer arithmetic.
pub fn eligibility_threshold(h: usize) -> usize {
    (3 * h).div_ceil(5)
}

/// Users of the `key` group whose interactions cover at least
/// [`eligibility_threshold`] of the history items. Positions, ascending.
pub fn eligible_user_positions(dataset: &Dataset, key: &ProxyKey, history: &[u32]) -> Vec<u32> {
    let group = group_user_positions(dataset, key);
    if history.is_empty() {
        return group;
    }
    let need = eligibility_threshold(history.len());
    let mut hits = vec![0u32; dataset.users().len()];
    for &item in history {
        for &u in dataset.item_user_positions(item) {
            hits[u as usize] += 1;
        }
    }
    group
        .into_iter()
        .filter(|&u| hits[u as usize] as usize >= need)
        .collect()
}

/// Id-based wrapper over [`eligible_user_positions`]. Unknown history ids
/// are ignored for coverage but still count towards `h`.
pub fn eligible_users(dataset: &Dataset, key: &ProxyKey, history: &[String]) -> Vec<String> {
    let known: Vec<u32> = history
        .iter()
        .filter_map(|id| dataset.item_position(id))
        .collect();
    let group = group_user_positions(dataset, key);
    let need = eligibility_threshold(history.len());
    let mut hits = vec![0usize; dataset.users().len()];
    for &item in &known {
        for &u in dataset.item_user_positions(item) {
            hits[u as usize] += 1;
        }
    }
    group
        .into_iter()
        .filter(|&u| history.is_empty() || hits[u as usize] >= need)
        .map(|u| dataset.users()[u as usize].user_id.clone())
        .collect()
}

/// Total event weight of `users` on every item, by item position.
pub fn group_item_weights(dataset: &Dataset, users: &[u32]) -> Vec<u64> {
    let mut weights = vec![0u64; dataset.items().len()];
    for &u in users {
        for &(i, w) in dataset.user_item_weights(u) {
            weights[i as usize] += w;
        }
    }
    weights
}

/// Everything that identifies one selection attempt.
#[derive(Debug, Clone)]
pub struct CaseRequest<'a> {
    pub setting: &'a str,
    pub key: &'a ProxyKey,
    pub setup: Setup,
    pub h: usize,
    pub k: usize,
    pub seed: u64,
}

fn check_request(dataset: &Dataset, req: &CaseRequest<'_>) -> Result<(), CaseError> {
    if req.k == 0 || req.k % 2 == 1 {
        return Err(CaseError::InvalidK(req.k));
    }
    if req.setup == Setup::B && !req.key.is_empty() {
        return Err(CaseError::SetupBWithProxy(req.key.to_string()));
    }
    if req.setup == Setup::C && req.h != 0 {
        return Err(CaseError::SetupCWithHistory(req.h));
    }
    if req.h > dataset.items().len() {
        return Err(CaseError::HistoryTooLong {
            h: req.h,
            items: dataset.items().len(),
        });
    }
    Ok(())
}

/// One attempt of candidate selection, fully determined by `req.seed`.
pub fn select_case(dataset: &Dataset, req: &CaseRequest<'_>) -> Result<Selection, CaseError> {
    check_request(dataset, req)?;
    let mut rng = ChaCha8Rng::seed_from_u64(req.seed);
    let n_items = dataset.items().len();

    let history: Vec<u32> = index::sample(&mut rng, n_items, req.h)
        .into_iter()
        .map(|i| i as u32)
        .collect();
    let group = eligible_user_positions(dataset, req.key, &history);
    if group.is_empty() && group_user_positions(dataset, req.key).is_empty() {
        return Ok(Selection::Skipped(SkipReason {
            kind: SkipKind::EmptyGroup,
            detail: format!("no users match {}", req.key),
        }));
    }
    if group.len() < MIN_GROUP_USERS {
        return Ok(Selection::Skipped(SkipReason {
            kind: SkipKind::TooFewUsers,
            detail: format!("{} eligible users for h = {}", group.len(), req.h),
        }));
    }

    let weights = group_item_weights(dataset, &group);
    let mut in_history = vec![false; n_items];
    for &i in &history {
        in_history[i as usize] = true;
    }
    let (untouched, touched): (Vec<u32>, Vec<u32>) = (0..n_items as u32)
        .filter(|&i| !in_history[i as usize])
        .partition(|&i| weights[i as usize] == 0);

    let c1_len = (req.k / 2).min(untouched.len());
    let c2_len = req.k - c1_len;
    if touched.len() < c2_len {
        return Ok(Selection::Skipped(SkipReason {
            kind: SkipKind::InsufficientC2Pool,
            detail: format!("{} interacted items available, {c2_len} needed", touched.len()),
        }));
    }
    let mut candidates: Vec<u32> = index::sample(&mut rng, untouched.len(), c1_len)
        .into_iter()
        .map(|i| untouched[i])
        .collect();
    candidates.extend(
        index::sample(&mut rng, touched.len(), c2_len)
            .into_iter()
            .map(|i| touched[i]),
    );
    candidates.shuffle(&mut rng);

    let cand_weights: Vec<u64> = candidates.iter().map(|&i| weights[i as usize]).collect();
    let target = Distribution::<f64>::from_weights(&cand_weights)?.into_probs();

    let item_id = |i: &u32| dataset.items()[*i as usize].item_id.clone();
    let history: Vec<String> = history.iter().map(item_id).collect();
    let candidates: Vec<String> = candidates.iter().map(item_id).collect();

    let mut id = StableHasher::new()
        .str(dataset.fingerprint())
        .str(req.setup.as_str())
        .str(&req.key.to_string())
        .u64(history.len() as u64);
    for hid in &history {
        id = id.str(hid);
    }
    let case_id = id.u64(req.seed).finish_hex();

    Ok(Selection::Case(EvalCase {
        case_id,
        setup: req.setup,
        setting: req.setting.to_string(),
        proxy_key: req.key.clone(),
        history,
        candidates,
        target,
        group_size: group.len(),
        domain: dataset.domain(),
    }))
}

/// One line of the experiment matrix. Omitting `count` requests one case
/// per populated proxy key of the setting.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatrixRow {
    pub setting: String,
    pub setup: Setup,
    pub h: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub count: Option<usize>,
}

impl MatrixRow {
    pub fn label(&self) -> String {
        format!("{}/{}/h={}", self.setting, self.setup, self.h)
    }
}

/// Setting × history grid: `h = 0` rows are setup C with one case per key,
/// the no-proxy setting uses setup B, and every other setting setup A.
pub fn standard_matrix(schema: &ProxySchema, histories: &[usize], count: usize) -> Vec<MatrixRow> {
    let mut rows = Vec::new();
    for s in &schema.settings {
        for &h in histories {
            let (setup, count) = match (h, s.attributes.is_empty()) {
                (0, _) => (Setup::C, None),
                (_, true) => (Setup::B, Some(count)),
                (_, false) => (Setup::A, Some(count)),
            };
            rows.push(MatrixRow {
                setting: s.name.clone(),
                setup,
                h,
                count,
            });
        }
    }
    rows
}

pub fn validate_matrix(schema: &ProxySchema, matrix: &[MatrixRow], k: usize) -> Result<(), CaseError> {
    if k == 0 || k % 2 == 1 {
        return Err(CaseError::InvalidK(k));
    }
    for row in matrix {
        let setting = schema.setting(&row.setting)?;
        if row.count == Some(0) {
            return Err(CaseError::ZeroCount(row.label()));
        }
        if row.setup == Setup::B && !setting.attributes.is_empty() {
            return Err(CaseError::SetupBWithProxy(row.setting.clone()));
        }
        if row.setup == Setup::C && row.h != 0 {
            return Err(CaseError::SetupCWithHistory(row.h));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowReport {
    pub setting: String,
    pub setup: Setup,
    pub h: usize,
    pub requested: usize,
    pub produced: usize,
    pub attempts: usize,
    pub skips: BTreeMap<SkipKind, usize>,
}

impl RowReport {
    pub fn shortfall(&self) -> usize {
        self.requested - self.produced
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseBatch {
    pub cases: Vec<EvalCase>,
    pub rows: Vec<RowReport>,
}

impl CaseBatch {
    /// `setting, setup, h, kind, count` with a header row.
    pub fn skip_report_tsv(&self) -> String {
        let mut out = String::from("setting\tsetup\th\tkind\tcount\n");
        for row in &self.rows {
            for (kind, n) in &row.skips {
                out.push_str(&format!(
                    "{}\t{}\t{}\t{}\t{}\n",
                    row.setting,
                    row.setup,
                    row.h,
                    kind.as_str(),
                    n
                ));
            }
        }
        out
    }

    /// `setting, setup, h, requested, produced, attempts` with a header row.
    pub fn row_report_tsv(&self) -> String {
        let mut out = String::from("setting\tsetup\th\trequested\tproduced\tattempts\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\n",
                r.setting, r.setup, r.h, r.requested, r.produced, r.attempts
            ));
        }
        out
    }
}

fn row_seed(seed: u64, row: &MatrixRow, occurrence: u64) -> u64 {
    StableHasher::new()
        .u64(seed)
        .str(&row.setting)
        .str(row.setup.as_str())
        .u64(row.h as u64)
        .u64(occurrence)
        .finish()
}

fn run_row(dataset: &Dataset, schema: &ProxySchema, row: &MatrixRow, seed: u64, k: usize) -> Result<(Vec<EvalCase>, RowReport), CaseError> {
    let setting = schema.setting(&row.setting)?;
    let keys = setting_keys(dataset, setting);
    let requested = row.count.unwrap_or(keys.len());
    let mut report = RowReport {
        setting: row.setting.clone(),
        setup: row.setup,
        h: row.h,
        requested,
        produced: 0,
        attempts: 0,
        skips: BTreeMap::new(),
    };
    let mut cases = Vec::new();
    if keys.is_empty() {
        report.skips.insert(SkipKind::EmptyGroup, 1);
        return Ok((cases, report));
    }
    for attempt in 0..RETRY_FACTOR * requested {
        if cases.len() == requested {
            break;
        }
        report.attempts += 1;
        let req = CaseRequest {
            setting: &row.setting,
            key: &keys[attempt % keys.len()],
            setup: row.setup,
            h: row.h,
            k,
            seed: derive_seed(seed, &[attempt as u64]),
        };
        match select_case(dataset, &req)? {
            Selection::Case(c) => cases.push(c),
            Selection::Skipped(reason) => *report.skips.entry(reason.kind).or_default() += 1,
        }
    }
    report.produced = cases.len();
    Ok((cases, report))
}

/// Runs every matrix row. Rows are independent (each has its own seed
/// stream) and run in parallel; output order follows the matrix.
pub fn generate_cases(
    dataset: &Dataset,
    schema: &ProxySchema,
    matrix: &[MatrixRow],
    seed: u64,
    k: usize,
) -> Result<CaseBatch, CaseError> {
    validate_matrix(schema, matrix, k)?;
    let mut seen: BTreeMap<(String, Setup, usize), u64> = BTreeMap::new();
    let seeded: Vec<(&MatrixRow, u64)> = matrix
        .iter()
        .map(|row| {
            let n = seen.entry((row.setting.clone(), row.setup, row.h)).or_default();
            let s = row_seed(seed, row, *n);
            *n += 1;
            (row, s)
        })
        .collect();
    let results: Vec<_> = seeded
        .par_iter()
        .map(|(row, s)| run_row(dataset, schema, row, *s, k))
        .collect();
    let mut batch = CaseBatch {
        cases: Vec::new(),
        rows: Vec::new(),
    };
    for r in results {
        let (cases, report) = r?;
        batch.cases.extend(cases);
        batch.rows.push(report);
    }
    Ok(batch)
}

/// Re-derives the group of a case and checks the candidate invariants.
pub fn check_case(dataset: &Dataset, case: &EvalCase, k: usize) -> Result<(), String> {
    if case.candidates.len() != k {
        return Err(format!("{} candidates, expected {k}", case.candidates.len()));
    }
    let mut seen = std::collections::HashSet::new();
    for c in &case.candidates {
        if !seen.insert(c) {
            return Err(format!("candidate {c} repeated"));
        }
        if case.history.contains(c) {
            return Err(format!("candidate {c} is in the history"));
        }
    }
    if case.target.len() != k || case.target.iter().any(|p| *p < 0.0) {
        return Err("target malformed".into());
    }
    let total: f64 = case.target.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(format!("target sums to {total}"));
    }
    if case.setup == Setup::C && !case.history.is_empty() {
        return Err("setup C case with history".into());
    }
    if case.setup == Setup::B && !case.proxy_key.is_empty() {
        return Err("setup B case with proxy".into());
    }
    let history: Vec<u32> = case
        .history
        .iter()
        .map(|id| dataset.item_position(id).ok_or(format!("unknown history item {id}")))
        .collect::<Result<_, _>>()?;
    let group = eligible_user_positions(dataset, &case.proxy_key, &history);
    if group.len() != case.group_size {
        return Err(format!("group size {} != recorded {}", group.len(), case.group_size));
    }
    let weights = group_item_weights(dataset, &group);
    for (c, p) in case.candidates.iter().zip(&case.target) {
        let pos = dataset.item_position(c).ok_or(format!("unknown candidate {c}"))?;
        let w = weights[pos as usize];
        if (*p == 0.0) != (w == 0) {
            return Err(format!("candidate {c}: target {p} but group weight {w}"));
        }
    }
    Ok(())
}

fn io_err(path: &Path, e: impl fmt::Display) -> CaseError {
    CaseError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

pub fn write_cases_jsonl(path: impl AsRef<Path>, cases: &[EvalCase]) -> Result<(), CaseError> {
    let path = path.as_ref();
    let mut w = BufWriter::new(File::create(path).map_err(|e| io_err(path, e))?);
    for case in cases {
        serde_json::to_writer(&mut w, case).map_err(|e| io_err(path, e))?;
        w.write_all(b"\n").map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

pub fn read_cases_jsonl(path: impl AsRef<Path>) -> Result<Vec<EvalCase>, CaseError> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path).map_err(|e| io_err(path, e))?);
    let mut cases = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        cases.push(serde_json::from_str(&line).map_err(|e| io_err(path, format!("line {}: {e}", i + 1)))?);
    }
    Ok(cases)
}
