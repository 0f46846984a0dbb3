//! Leaderboards, ensemble selection and prediction averaging.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::axes::{Axis, AxisScores};
use crate::data::EmbeddingStore;
use crate::error::{Error, Result};
use crate::fsio::write_atomic;
use crate::metrics::{evaluate, Level, MetricReport};
use crate::model::load_checkpoint;
use crate::par::Exec;
use crate::training::predict_samples;

/// Report keys used for the two ranking columns.
pub const DEV_SET: &str = "dev";
pub const PAM_SET: &str = "pam";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LeaderboardRow {
    pub model_id: String,
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
    pub dev_srcc: Option<f64>,
    pub pam_srcc: Option<f64>,
    /// Full reports keyed by evaluation set name.
    #[serde(default)]
    pub reports: BTreeMap<String, MetricReport>,
}

fn composite_srcc(report: &MetricReport) -> Option<f64> {
    report.level(Level::Utterance).composite.srcc
}

impl LeaderboardRow {
    /// Takes the ranking columns from the composite utterance-level SRCC of
    /// the `dev` and `pam` reports.
    pub fn from_reports(
        model_id: String,
        checkpoint: Option<PathBuf>,
        reports: BTreeMap<String, MetricReport>,
    ) -> Self {
        Self {
            dev_srcc: reports.get(DEV_SET).and_then(composite_srcc),
            pam_srcc: reports.get(PAM_SET).and_then(composite_srcc),
            model_id,
            checkpoint,
            reports,
        }
    }

    pub fn key(&self, key: RankKey) -> Option<f64> {
        match key {
            RankKey::DevSrcc => self.dev_srcc,
            RankKey::PamSrcc => self.pam_srcc,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Leaderboard {
    pub rows: Vec<LeaderboardRow>,
}

impl Leaderboard {
    pub fn new(rows: Vec<LeaderboardRow>) -> Result<Self> {
        let lb = Self { rows };
        lb.validate()?;
        Ok(lb)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for r in &self.rows {
            if !seen.insert(r.model_id.as_str()) {
                return Err(Error::Data(format!("duplicate model_id `{}`", r.model_id)));
            }
            for v in [r.dev_srcc, r.pam_srcc].into_iter().flatten() {
                if !(-1.0..=1.0).contains(&v) {
                    return Err(Error::Data(format!(
                        "`{}` has SRCC {v} outside [-1, 1]",
                        r.model_id
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn get(&self, model_id: &str) -> Option<&LeaderboardRow> {
        self.rows.iter().find(|r| r.model_id == model_id)
    }

    pub fn model_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.rows.iter().map(|r| r.model_id.clone()).collect();
        ids.sort();
        ids
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Writes JSON with checkpoint paths relative to the file's directory.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let base = file_dir(path)?;
        let mut rel = self.clone();
        for r in &mut rel.rows {
            if let Some(p) = &r.checkpoint {
                let abs = std::path::absolute(p).map_err(|e| Error::io(p, e))?;
                r.checkpoint = Some(pathdiff::diff_paths(&abs, &base).unwrap_or(abs));
            }
        }
        write_atomic(path, rel.to_json()?.as_bytes())
    }

    /// Reads a leaderboard, resolving checkpoint paths against the file's
    /// directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lb: Leaderboard = serde_json::from_str(&text)?;
        lb.validate()?;
        let base = file_dir(path)?;
        for r in &mut lb.rows {
            if let Some(p) = &mut r.checkpoint {
                if p.is_relative() {
                    *p = base.join(&p);
                }
            }
        }
        Ok(lb)
    }

    /// Tab-separated summary: one line per model with per-set composite
    /// utterance-level MSE, LCC, SRCC and KTAU.
    pub fn render_table(&self) -> String {
        let sets: BTreeSet<&str> = self
            .rows
            .iter()
            .flat_map(|r| r.reports.keys().map(String::as_str))
            .collect();
        let mut out = String::from("model_id");
        for s in &sets {
            for m in ["mse", "lcc", "srcc", "ktau"] {
                let _ = write!(out, "\t{s}_{m}");
            }
        }
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.model_id);
            for s in &sets {
                let cells = r
                    .reports
                    .get(*s)
                    .map(|rep| rep.level(Level::Utterance).composite.cells());
                for i in 0..4 {
                    match cells.and_then(|c| c[i].1) {
                        Some(v) => {
                            let _ = write!(out, "\t{v:.4}");
                        }
                        None => out.push_str("\t-"),
                    }
                }
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankKey {
    DevSrcc,
    PamSrcc,
}

/// Model ids by descending `key`, ties by ascending model id.
pub fn rank_models(lb: &Leaderboard, key: RankKey) -> Result<Vec<String>> {
    let mut scored = Vec::with_capacity(lb.rows.len());
    for r in &lb.rows {
        let v = r.key(key).ok_or_else(|| {
            Error::Selection(format!("model `{}` has no {key:?} value", r.model_id))
        })?;
        scored.push((v, r.model_id.as_str()));
    }
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
    Ok(scored.into_iter().map(|(_, id)| id.to_string()).collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum Strategy {
    Intersection { k_dev: usize, k_pam: usize },
    TopkPam { k: usize },
    TopkDev { k: usize },
    All,
    Explicit { members: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSpec {
    pub strategy: Strategy,
    /// Ascending model id order.
    pub members: Vec<String>,
}

impl EnsembleSpec {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path, self.to_json()?.as_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

fn file_dir(path: &Path) -> Result<PathBuf> {
    let abs = std::path::absolute(path).map_err(|e| Error::io(path, e))?;
    Ok(abs.parent().map(Path::to_path_buf).unwrap_or_default())
}

fn top_k(lb: &Leaderboard, key: RankKey, k: usize) -> Result<Vec<String>> {
    if k == 0 {
        return Err(Error::Selection("k must be at least 1".into()));
    }
    let mut ranked = rank_models(lb, key)?;
    ranked.truncate(k);
    Ok(ranked)
}

/// Members of a strategy on `lb`.
pub fn select(lb: &Leaderboard, strategy: &Strategy) -> Result<EnsembleSpec> {
    let mut members = match strategy {
        Strategy::Intersection { k_dev, k_pam } => {
            let dev: BTreeSet<String> = top_k(lb, RankKey::DevSrcc, *k_dev)?.into_iter().collect();
            let pam: BTreeSet<String> = top_k(lb, RankKey::PamSrcc, *k_pam)?.into_iter().collect();
            let both: Vec<String> = dev.intersection(&pam).cloned().collect();
            if both.is_empty() {
                return Err(Error::Selection(format!(
                    "top-{k_dev} dev and top-{k_pam} PAM models do not overlap; try larger k"
                )));
            }
            both
        }
        Strategy::TopkPam { k } => top_k(lb, RankKey::PamSrcc, *k)?,
        Strategy::TopkDev { k } => top_k(lb, RankKey::DevSrcc, *k)?,
        Strategy::All => lb.model_ids(),
        Strategy::Explicit { members } => {
            for m in members {
                if lb.get(m).is_none() {
                    return Err(Error::Selection(format!(
                        "model `{m}` is not on the leaderboard"
                    )));
                }
            }
            members.clone()
        }
    };
    members.sort();
    members.dedup();
    if members.is_empty() {
        return Err(Error::Selection("ensemble has no members".into()));
    }
    Ok(EnsembleSpec {
        strategy: strategy.clone(),
        members,
    })
}

pub fn select_intersection(lb: &Leaderboard, k_dev: usize, k_pam: usize) -> Result<EnsembleSpec> {
    select(lb, &Strategy::Intersection { k_dev, k_pam })
}

/// Per-model predictions over one shared utterance list.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MemberPredictions {
    pub utt_ids: Vec<String>,
    pub by_model: BTreeMap<String, Vec<AxisScores>>,
}

impl MemberPredictions {
    pub fn insert(&mut self, model_id: String, preds: Vec<AxisScores>) -> Result<()> {
        if preds.len() != self.utt_ids.len() {
            return Err(Error::Data(format!(
                "`{model_id}` has {} predictions for {} utterances",
                preds.len(),
                self.utt_ids.len()
            )));
        }
        self.by_model.insert(model_id, preds);
        Ok(())
    }
}

/// Uniform per-axis mean of the members' predictions.
///
/// Members are folded in ascending model id order with the running update
/// `m ← m + (x − m) / k`, which keeps the result inside the members' range
/// and returns a member's value unchanged when all members agree.
pub fn ensemble_average(spec: &EnsembleSpec, preds: &MemberPredictions) -> Result<Vec<AxisScores>> {
    if spec.members.is_empty() {
        return Err(Error::Selection("ensemble has no members".into()));
    }
    let mut members = spec.members.clone();
    members.sort();
    let mut mean = vec![[0.0f64; 4]; preds.utt_ids.len()];
    for (k, m) in members.iter().enumerate() {
        let p = preds
            .by_model
            .get(m)
            .ok_or_else(|| Error::Data(format!("no predictions for member `{m}`")))?;
        let k = (k + 1) as f64;
        for (acc, s) in mean.iter_mut().zip(p) {
            for (a, v) in acc.iter_mut().zip(s.to_array()) {
                *a += (v - *a) / k;
            }
        }
    }
    Ok(mean.into_iter().map(AxisScores::from_array).collect())
}

/// Loads each model's checkpoint and predicts `store`.
pub fn member_predictions(
    lb: &Leaderboard,
    models: &[String],
    store: &EmbeddingStore,
    exec: Exec,
) -> Result<MemberPredictions> {
    let mut out = MemberPredictions {
        utt_ids: store.utterances.iter().map(|u| u.utt_id.clone()).collect(),
        ..Default::default()
    };
    let mut sorted = models.to_vec();
    sorted.sort();
    sorted.dedup();
    for id in sorted {
        let row = lb
            .get(&id)
            .ok_or_else(|| Error::Selection(format!("model `{id}` is not on the leaderboard")))?;
        let path = row
            .checkpoint
            .as_ref()
            .ok_or_else(|| Error::Data(format!("model `{id}` has no checkpoint path")))?;
        let ck = load_checkpoint(path)?;
        let encoders = ck.model.config().fused_encoders();
        let samples = store.fuse(&encoders, &ck.norm_stats, exec)?;
        out.insert(id, predict_samples(&ck.model, &samples, exec)?)?;
    }
    Ok(out)
}

/// Loads the members of `spec` and returns their averaged predictions.
pub fn ensemble_predict(
    spec: &EnsembleSpec,
    lb: &Leaderboard,
    store: &EmbeddingStore,
    exec: Exec,
) -> Result<Vec<AxisScores>> {
    ensemble_average(spec, &member_predictions(lb, &spec.members, store, exec)?)
}

/// Writes `utt_id<TAB>pq<TAB>pc<TAB>ce<TAB>cu` lines under a header.
/// Values use the shortest decimal form that reads back to the same f64.
pub fn write_predictions(
    path: impl AsRef<Path>,
    utt_ids: &[String],
    preds: &[AxisScores],
) -> Result<()> {
    if utt_ids.len() != preds.len() {
        return Err(Error::Data("prediction and utterance counts differ".into()));
    }
    let mut out = String::from("utt_id\tpq\tpc\tce\tcu\n");
    for (id, p) in utt_ids.iter().zip(preds) {
        let _ = writeln!(out, "{id}\t{}\t{}\t{}\t{}", p.pq, p.pc, p.ce, p.cu);
    }
    write_atomic(path, out.as_bytes())
}

pub fn read_predictions(path: impl AsRef<Path>) -> Result<(Vec<String>, Vec<AxisScores>)> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    let mut offset = 0u64;
    match lines.next() {
        Some("utt_id\tpq\tpc\tce\tcu") => {}
        _ => {
            return Err(Error::format(
                path,
                0,
                "missing `utt_id pq pc ce cu` header",
            ))
        }
    }
    offset += 20;
    let mut ids = Vec::new();
    let mut preds = Vec::new();
    let mut seen = BTreeSet::new();
    for line in lines {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 5 {
            return Err(Error::format(
                path,
                offset,
                "expected 5 tab-separated fields",
            ));
        }
        let mut v = [0.0; 4];
        for (slot, f) in v.iter_mut().zip(&fields[1..]) {
            *slot = f
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| Error::format(path, offset, format!("bad score `{f}`")))?;
        }
        if !seen.insert(fields[0].to_string()) {
            return Err(Error::format(
                path,
                offset,
                format!("duplicate utt_id `{}`", fields[0]),
            ));
        }
        ids.push(fields[0].to_string());
        preds.push(AxisScores::from_array(v));
        offset += line.len() as u64 + 1;
    }
    Ok((ids, preds))
}

/// The ensemble comparison rows: Submitted, All models, PAM top 8, PAM
/// top 4, Dev top 8, PAM top 1.
pub fn table_strategies(submitted: Strategy) -> Vec<(String, Strategy)> {
    vec![
        ("Submitted".into(), submitted),
        ("All models".into(), Strategy::All),
        ("PAM top 8".into(), Strategy::TopkPam { k: 8 }),
        ("PAM top 4".into(), Strategy::TopkPam { k: 4 }),
        ("Dev top 8".into(), Strategy::TopkDev { k: 8 }),
        ("PAM top 1".into(), Strategy::TopkPam { k: 1 }),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyRow {
    pub name: String,
    pub strategy: Strategy,
    pub members: Vec<String>,
    pub report: Option<MetricReport>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyTable {
    pub rows: Vec<StrategyRow>,
}

impl StrategyTable {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path, self.to_json()?.as_bytes())
    }

    /// Composite utterance-level metrics per strategy.
    pub fn render_table(&self) -> String {
        let mut out = String::from("strategy\tmembers\tmse\tlcc\tsrcc\tktau\n");
        for r in &self.rows {
            let _ = write!(out, "{}\t{}", r.name, r.members.len());
            match &r.report {
                Some(rep) => {
                    for (_, v) in rep.level(Level::Utterance).composite.cells() {
                        match v {
                            Some(v) => {
                                let _ = write!(out, "\t{v:.4}");
                            }
                            None => out.push_str("\t-"),
                        }
                    }
                }
                None => {
                    let _ = write!(out, "\terror: {}", r.error.as_deref().unwrap_or("?"));
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Evaluates every strategy's ensemble against `labels`. Selection errors
/// are recorded on their row.
pub fn compare_strategies(
    lb: &Leaderboard,
    strategies: &[(String, Strategy)],
    preds: &MemberPredictions,
    labels: &[AxisScores],
    system_of: &[String],
) -> Result<StrategyTable> {
    if strategies.len() < 2 {
        return Err(Error::Config("compare at least two strategies".into()));
    }
    if labels.len() != preds.utt_ids.len() || system_of.len() != labels.len() {
        return Err(Error::Data(
            "labels, systems and predictions differ in length".into(),
        ));
    }
    let mut rows = Vec::with_capacity(strategies.len());
    for (name, strategy) in strategies {
        let outcome = select(lb, strategy).and_then(|spec| {
            let avg = ensemble_average(&spec, preds)?;
            Ok((spec.members, evaluate(&avg, labels, system_of)?))
        });
        rows.push(match outcome {
            Ok((members, report)) => StrategyRow {
                name: name.clone(),
                strategy: strategy.clone(),
                members,
                report: Some(report),
                error: None,
            },
            Err(e) => StrategyRow {
                name: name.clone(),
                strategy: strategy.clone(),
                members: Vec::new(),
                report: None,
                error: Some(e.to_string()),
            },
        });
    }
    Ok(StrategyTable { rows })
}

/// Per-axis `[min, max]` of the members' predictions for each utterance.
pub fn member_envelope(
    spec: &EnsembleSpec,
    preds: &MemberPredictions,
) -> Result<Vec<[(f64, f64); 4]>> {
    let mut env = vec![[(f64::INFINITY, f64::NEG_INFINITY); 4]; preds.utt_ids.len()];
    for m in &spec.members {
        let p = preds
            .by_model
            .get(m)
            .ok_or_else(|| Error::Data(format!("no predictions for member `{m}`")))?;
        for (e, s) in env.iter_mut().zip(p) {
            for axis in Axis::ALL {
                let v = s.get(axis);
                let slot = &mut e[axis.index()];
                slot.0 = slot.0.min(v);
                slot.1 = slot.1.max(v);
            }
        }
    }
    Ok(env)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(id: &str, dev: f64, pam: f64) -> LeaderboardRow {
        LeaderboardRow {
            model_id: id.into(),
            checkpoint: None,
            dev_srcc: Some(dev),
            pam_srcc: Some(pam),
            reports: BTreeMap::new(),
        }
    }

    #[test]
    fn ranking_order_ties_and_permutation() {
        let lb = Leaderboard::new(vec![
            row("a", 0.5, 0.0),
            row("b", 0.9, 0.0),
            row("c", 0.7, 0.0),
        ])
        .unwrap();
        assert_eq!(rank_models(&lb, RankKey::DevSrcc).unwrap(), ["b", "c", "a"]);
        let tie = Leaderboard::new(vec![
            row("z", 0.5, 0.5),
            row("m", 0.5, 0.5),
            row("a", 0.5, 0.5),
        ])
        .unwrap();
        assert_eq!(
            rank_models(&tie, RankKey::PamSrcc).unwrap(),
            ["a", "m", "z"]
        );
        let mut rows = lb.rows.clone();
        rows.reverse();
        assert_eq!(
            rank_models(&Leaderboard::new(rows).unwrap(), RankKey::DevSrcc).unwrap(),
            ["b", "c", "a"]
        );
        let mut missing = row("q", 0.1, 0.1);
        missing.pam_srcc = None;
        let lb = Leaderboard::new(vec![missing]).unwrap();
        let err = rank_models(&lb, RankKey::PamSrcc).unwrap_err();
        assert!(err.to_string().contains("`q`"));
    }

    #[test]
    fn leaderboard_validation() {
        assert!(Leaderboard::new(vec![row("a", 0.1, 0.1), row("a", 0.2, 0.2)]).is_err());
        assert!(Leaderboard::new(vec![row("a", 1.5, 0.1)]).is_err());
    }

    fn sixteen(agree: bool) -> Leaderboard {
        Leaderboard::new(
            (0..16)
                .map(|i| {
                    let dev = 0.9 - 0.01 * i as f64;
                    let pam = if agree {
                        dev
                    } else {
                        0.9 - 0.01 * ((i + 4) % 16) as f64
                    };
                    row(&format!("m{i:02}"), dev, pam)
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn intersection_cases() {
        let lb = sixteen(true);
        assert_eq!(select_intersection(&lb, 12, 12).unwrap().members.len(), 12);
        assert_eq!(select_intersection(&lb, 16, 16).unwrap().members.len(), 16);
        let shifted = sixteen(false);
        let spec = select_intersection(&shifted, 12, 12).unwrap();
        let dev: BTreeSet<_> = top_k(&shifted, RankKey::DevSrcc, 12)
            .unwrap()
            .into_iter()
            .collect();
        let pam: BTreeSet<_> = top_k(&shifted, RankKey::PamSrcc, 12)
            .unwrap()
            .into_iter()
            .collect();
        assert!(spec
            .members
            .iter()
            .all(|m| dev.contains(m) && pam.contains(m)));
        assert!(spec.members.len() <= 12);
        let disjoint = Leaderboard::new(vec![row("a", 0.9, 0.1), row("b", 0.1, 0.9)]).unwrap();
        assert!(matches!(
            select_intersection(&disjoint, 1, 1),
            Err(Error::Selection(_))
        ));
        assert!(select_intersection(&lb, 0, 3).is_err());
    }

    fn preds_for(models: &[(&str, f64)]) -> MemberPredictions {
        let mut p = MemberPredictions {
            utt_ids: vec!["u1".into(), "u2".into()],
            ..Default::default()
        };
        for (id, v) in models {
            p.insert(
                id.to_string(),
                vec![AxisScores::splat(*v), AxisScores::new(*v, 1.0, 2.0, -*v)],
            )
            .unwrap();
        }
        p
    }

    #[test]
    fn averaging_rules() {
        let p = preds_for(&[("a", 3.0), ("b", 5.0), ("c", 0.5)]);
        let spec = |m: &[&str]| EnsembleSpec {
            strategy: Strategy::All,
            members: m.iter().map(|s| s.to_string()).collect(),
        };
        assert_eq!(
            ensemble_average(&spec(&["a"]), &p).unwrap(),
            p.by_model["a"]
        );
        assert_eq!(
            ensemble_average(&spec(&["a", "b"]), &p).unwrap()[0],
            AxisScores::splat(4.0)
        );
        assert_eq!(
            ensemble_average(&spec(&["c", "a", "b"]), &p).unwrap(),
            ensemble_average(&spec(&["b", "c", "a"]), &p).unwrap()
        );
        let same = preds_for(&[("x", 0.1), ("y", 0.1), ("z", 0.1)]);
        assert_eq!(
            ensemble_average(&spec(&["x", "y", "z"]), &same).unwrap(),
            same.by_model["x"]
        );
        let all = spec(&["a", "b", "c"]);
        let avg = ensemble_average(&all, &p).unwrap();
        let env = member_envelope(&all, &p).unwrap();
        for (s, e) in avg.iter().zip(&env) {
            for axis in Axis::ALL {
                let (lo, hi) = e[axis.index()];
                assert!(lo <= s.get(axis) && s.get(axis) <= hi);
            }
        }
        // composite of the mean equals the mean of composites
        for (i, s) in avg.iter().enumerate() {
            let mean_of_composites = ["a", "b", "c"]
                .iter()
                .map(|m| p.by_model[*m][i].composite())
                .sum::<f64>()
                / 3.0;
            assert!((s.composite() - mean_of_composites).abs() < 1e-12);
        }
        assert!(ensemble_average(&spec(&["nope"]), &p).is_err());
    }

    #[test]
    fn prediction_dump_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.tsv");
        let ids = vec!["a".to_string(), "b".to_string()];
        let preds = vec![
            AxisScores::new(0.1, 1.0 / 3.0, -2.5e-17, 7.0),
            AxisScores::splat(std::f64::consts::PI),
        ];
        write_predictions(&path, &ids, &preds).unwrap();
        let (i2, p2) = read_predictions(&path).unwrap();
        assert_eq!((i2, p2), (ids, preds));
        fs::write(&path, "utt_id\tpq\tpc\tce\tcu\nx\t1\t2\t3\n").unwrap();
        assert!(matches!(
            read_predictions(&path),
            Err(Error::Format { offset: 20, .. })
        ));
    }

    #[test]
    fn strategy_table_rows() {
        let lb = Leaderboard::new(vec![
            row("a", 0.9, 0.6),
            row("b", 0.8, 0.9),
            row("c", 0.7, 0.8),
            row("d", 0.6, 0.7),
        ])
        .unwrap();
        let p = preds_for(&[("a", 3.0), ("b", 5.0), ("c", 4.0), ("d", 6.0)]);
        let labels = vec![AxisScores::splat(4.0), AxisScores::new(3.0, 1.5, 2.5, -4.0)];
        let systems = vec!["s1".to_string(), "s2".to_string()];
        let table = compare_strategies(
            &lb,
            &table_strategies(Strategy::Intersection { k_dev: 3, k_pam: 3 }),
            &p,
            &labels,
            &systems,
        )
        .unwrap();
        let names: Vec<&str> = table.rows.iter().map(|r| r.name.as_str()).collect();
        assert_eq!(
            names,
            [
                "Submitted",
                "All models",
                "PAM top 8",
                "PAM top 4",
                "Dev top 8",
                "PAM top 1"
            ]
        );
        assert_eq!(table.rows[0].members, ["b", "c"]);
        assert_eq!(table.rows[1].members, ["a", "b", "c", "d"]);
        assert_eq!(table.rows[5].members, ["b"]);
        let direct = evaluate(
            &ensemble_average(&select(&lb, &Strategy::All).unwrap(), &p).unwrap(),
            &labels,
            &systems,
        )
        .unwrap();
        assert_eq!(table.rows[1].report.as_ref().unwrap(), &direct);
        let again = compare_strategies(
            &lb,
            &table_strategies(Strategy::Intersection { k_dev: 3, k_pam: 3 }),
            &p,
            &labels,
            &systems,
        )
        .unwrap();
        assert_eq!(table, again);
        let with_error = compare_strategies(
            &lb,
            &[
                ("All".into(), Strategy::All),
                (
                    "bad".into(),
                    Strategy::Explicit {
                        members: vec!["zz".into()],
                    },
                ),
            ],
            &p,
            &labels,
            &systems,
        )
        .unwrap();
        assert!(with_error.rows[1].error.is_some());
    }
}
