//! Per-model curve reports over scored cases and model comparison.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{fit_curve, poly_eval, CurveError, CurveParams, Inflection, InflectionFlag};
use crate::casegen::Setup;
use crate::hashing::StableHasher;
use crate::metrics::ScoredCase;

/// Slice of the scored cases a curve is drawn over.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Facet {
    Overall,
    Setup { setup: Setup },
    /// `default` marks the h = 0 rows, labelled "(Def)".
    Setting { name: String, default: bool },
    History { h: usize },
}

impl Facet {
    pub fn label(&self) -> String {
        match self {
            Facet::Overall => "overall".into(),
            Facet::Setup { setup } => format!("setup {setup}"),
            Facet::Setting { name, default: false } => name.clone(),
            Facet::Setting { name, default: true } => format!("{name} (Def)"),
            Facet::History { h } => format!("h={h}"),
        }
    }

    /// Filesystem-safe form of the label.
    pub fn slug(&self) -> String {
        let mut out = String::new();
        for c in self.label().chars() {
            if c.is_ascii_alphanumeric() {
                out.push(c.to_ascii_lowercase());
            } else if !out.ends_with('_') {
                out.push('_');
            }
        }
        out.trim_matches('_').to_string()
    }

    pub fn contains(&self, case: &ScoredCase) -> bool {
        match self {
            Facet::Overall => true,
            Facet::Setup { setup } => case.setup == *setup,
            Facet::Setting { name, default } => case.setting == *name && (case.h == 0) == *default,
            Facet::History { h } => case.h == *h,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinRow {
    pub center: f64,
    pub mean_ce: f64,
    pub count: usize,
}

/// Summary of CE − H over a facet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Deviation {
    pub n: usize,
    pub mean: f64,
    pub median: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl Deviation {
    pub fn from_gaps(gaps: &[f64]) -> Deviation {
        let n = gaps.len();
        if n == 0 {
            return Deviation { n, mean: 0.0, median: 0.0, std: 0.0, min: 0.0, max: 0.0 };
        }
        let mut sorted = gaps.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mean = sorted.iter().sum::<f64>() / n as f64;
        let var = sorted.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / n as f64;
        let median = if n % 2 == 1 {
            sorted[n / 2]
        } else {
            (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
        };
        Deviation { n, mean, median, std: var.sqrt(), min: sorted[0], max: sorted[n - 1] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveSeries {
    pub model: String,
    pub facet: Facet,
    /// (H, CE) per scored case, in case order.
    pub points: Vec<(f64, f64)>,
    pub bins: Vec<BinRow>,
    pub smoothed: Vec<(f64, f64)>,
    /// Constant term first; absent when the fit was skipped.
    pub coeffs: Option<Vec<f64>>,
    pub residual_norm: Option<f64>,
    pub x_range: (f64, f64),
    pub inflection: Option<Inflection<f64>>,
    pub fit_skipped: Option<String>,
    pub deviation: Deviation,
}

impl CurveSeries {
    pub fn build(model: &str, facet: Facet, cases: &[&ScoredCase], params: &CurveParams) -> CurveSeries {
        let points: Vec<(f64, f64)> = cases.iter().map(|c| (c.entropy, c.cross_entropy)).collect();
        let gaps: Vec<f64> = cases.iter().map(|c| c.gap()).collect();
        let fit = fit_curve(&points, params);
        let (coeffs, residual_norm, fit_skipped) = match &fit.fit {
            Ok(f) => (Some(f.coeffs.clone()), Some(f.residual_norm), None),
            Err(e) => (None, None, Some(e.to_string())),
        };
        CurveSeries {
            model: model.to_string(),
            facet,
            points,
            bins: fit
                .bins
                .iter()
                .map(|b| BinRow { center: b.center, mean_ce: b.mean, count: b.count })
                .collect(),
            smoothed: fit.smoothed,
            coeffs,
            residual_norm,
            x_range: fit.x_range,
            inflection: fit.inflection,
            fit_skipped,
            deviation: Deviation::from_gaps(&gaps),
        }
    }

    pub fn fitted_at(&self, x: f64) -> Option<f64> {
        self.coeffs.as_ref().map(|c| poly_eval(c, x))
    }

    /// Largest |ŷ(x) − x| over occupied bin centers.
    pub fn max_identity_deviation(&self) -> Option<f64> {
        let c = self.coeffs.as_ref()?;
        Some(self.bins.iter().map(|b| (poly_eval(c, b.center) - b.center).abs()).fold(0.0, f64::max))
    }

    /// Curve data as CSV: `x,raw_mean,smoothed,fitted` per occupied bin.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,raw_mean,smoothed,fitted\n");
        for (b, s) in self.bins.iter().zip(&self.smoothed) {
            let fitted = self.fitted_at(b.center).map(|v| v.to_string()).unwrap_or_default();
            let _ = writeln!(out, "{},{},{},{}", b.center, b.mean_ce, s.1, fitted);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub model: String,
    /// Hash of the sorted case ids the model was evaluated on.
    pub case_set: String,
    pub params: CurveParams,
    /// x* of the overall curve.
    pub inflection: Option<Inflection<f64>>,
    pub overall: CurveSeries,
    pub facets: Vec<CurveSeries>,
}

impl FitReport {
    pub fn facet(&self, facet: &Facet) -> Option<&CurveSeries> {
        if *facet == Facet::Overall {
            return Some(&self.overall);
        }
        self.facets.iter().find(|s| s.facet == *facet)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

pub fn case_set_hash<S: AsRef<str>>(case_ids: &[S]) -> String {
    let ids: BTreeSet<&str> = case_ids.iter().map(|s| s.as_ref()).collect();
    ids.iter()
        .fold(StableHasher::new().u64(ids.len() as u64), |h, id| h.str(id))
        .finish_hex()
}

/// Facets present in a set of scored cases: every setup, every setting split
/// into h > 0 and "(Def)" h = 0 rows, and every history length.
pub fn facets_of(cases: &[&ScoredCase]) -> Vec<Facet> {
    let mut set = BTreeSet::new();
    for c in cases {
        set.insert(Facet::Setup { setup: c.setup });
        set.insert(Facet::Setting { name: c.setting.clone(), default: c.h == 0 });
        set.insert(Facet::History { h: c.h });
    }
    set.into_iter().collect()
}

/// Fits the overall curve and every facet for one model.
///
/// `case_ids` names the full case set the model was run on, scored or not.
pub fn fit_model<S: AsRef<str> + Sync>(
    model: &str,
    scores: &[ScoredCase],
    case_ids: &[S],
    params: &CurveParams,
) -> FitReport {
    let mut cases: Vec<&ScoredCase> = scores.iter().filter(|c| c.model == model).collect();
    cases.sort_by(|a, b| a.case_id.cmp(&b.case_id));
    let overall = CurveSeries::build(model, Facet::Overall, &cases, params);
    let facets: Vec<CurveSeries> = facets_of(&cases)
        .into_par_iter()
        .map(|facet| {
            let members: Vec<&ScoredCase> = cases.iter().copied().filter(|c| facet.contains(c)).collect();
            CurveSeries::build(model, facet, &members, params)
        })
        .collect();
    FitReport {
        model: model.to_string(),
        case_set: case_set_hash(case_ids),
        params: *params,
        inflection: overall.inflection,
        overall,
        facets,
    }
}

/// One report per distinct model in `scores`, in model-name order.
pub fn fit_all<S: AsRef<str> + Sync>(scores: &[ScoredCase], case_ids: &[S], params: &CurveParams) -> Vec<FitReport> {
    let models: BTreeSet<&str> = scores.iter().map(|c| c.model.as_str()).collect();
    models.into_iter().map(|m| fit_model(m, scores, case_ids, params)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub rank: usize,
    pub model: String,
    pub x_star: Option<f64>,
    pub flag: Option<InflectionFlag>,
    /// Mean CE − H over the x range shared by all compared models.
    pub mean_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub shared_range: (f64, f64),
    pub rows: Vec<ComparisonRow>,
}

impl Comparison {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("rank,model,x_star,flag,mean_gap\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                r.rank,
                r.model,
                r.x_star.map(|x| x.to_string()).unwrap_or_default(),
                r.flag.map(|f| f.as_str()).unwrap_or(""),
                r.mean_gap
            );
        }
        out
    }

    pub fn to_text(&self) -> String {
        let width = self.rows.iter().map(|r| r.model.len()).max().unwrap_or(5).max(5);
        let mut out = format!(
            "{:<4} {:<width$} {:>10} {:<14} {:>12}\n",
            "rank", "model", "x* (nats)", "flag", "mean CE-H"
        );
        for r in &self.rows {
            let x = r.x_star.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into());
            let flag = r.flag.map(|f| f.as_str()).unwrap_or("fit skipped");
            let _ = writeln!(out, "{:<4} {:<width$} {:>10} {:<14} {:>12.4}", r.rank, r.model, x, flag, r.mean_gap);
        }
        let _ = writeln!(out, "shared H range: [{:.4}, {:.4}]", self.shared_range.0, self.shared_range.1);
        out
    }
}

/// Ranks reports by ascending x*, breaking ties by mean CE − H over the
/// shared x range. Reports without a fit sort last. Accepts a single report.
pub fn comparison_table(reports: &[FitReport]) -> Comparison {
    let lo = reports.iter().map(|r| r.overall.x_range.0).fold(f64::NEG_INFINITY, f64::max);
    let hi = reports.iter().map(|r| r.overall.x_range.1).fold(f64::INFINITY, f64::min);
    let mut rows: Vec<ComparisonRow> = reports
        .iter()
        .map(|r| {
            let gaps: Vec<f64> = r
                .overall
                .points
                .iter()
                .filter(|p| p.0 >= lo && p.0 <= hi)
                .map(|p| p.1 - p.0)
                .collect();
            let mean_gap = if gaps.is_empty() { 0.0 } else { gaps.iter().sum::<f64>() / gaps.len() as f64 };
            ComparisonRow {
                rank: 0,
                model: r.model.clone(),
                x_star: r.inflection.map(|i| i.x),
                flag: r.inflection.map(|i| i.flag),
                mean_gap,
            }
        })
        .collect();
    rows.sort_by(|a, b| {
        let xa = a.x_star.unwrap_or(f64::INFINITY);
        let xb = b.x_star.unwrap_or(f64::INFINITY);
        xa.total_cmp(&xb)
            .then(a.mean_gap.total_cmp(&b.mean_gap))
            .then(a.model.cmp(&b.model))
    });
    for (i, r) in rows.iter_mut().enumerate() {
        r.rank = i + 1;
    }
    Comparison { shared_range: (lo, hi), rows }
}

pub fn compare_models(reports: &[FitReport]) -> Result<Comparison, CurveError> {
    if reports.len() < 2 {
        return Err(CurveError::NotEnoughReports);
    }
    let first = &reports[0].case_set;
    if let Some(other) = reports.iter().find(|r| r.case_set != *first) {
        return Err(CurveError::CaseSetMismatch(first.clone(), other.case_set.clone()));
    }
    Ok(comparison_table(reports))
}

/// Groups every report's series by facet label, for overlay plots.
pub fn overlay_groups(reports: &[FitReport]) -> BTreeMap<Facet, Vec<&CurveSeries>> {
    let mut out: BTreeMap<Facet, Vec<&CurveSeries>> = BTreeMap::new();
    for r in reports {
        out.entry(Facet::Overall).or_default().push(&r.overall);
        for s in &r.facets {
            out.entry(s.facet.clone()).or_default().push(s);
        }
    }
    out
}
