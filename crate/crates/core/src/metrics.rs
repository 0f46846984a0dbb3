//! Evaluation protocol: MSE, Pearson LCC, Spearman SRCC and Kendall τ-b at
//! utterance and system level, per axis and for the composite score.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::axes::{column, Axis, AxisScores};
use crate::error::{Error, Result};

fn check_pair(x: &[f64], y: &[f64], min: usize) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::Config(format!(
            "metric inputs differ in length: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < min {
        return Err(Error::Domain(format!(
            "metric needs at least {min} points, got {}",
            x.len()
        )));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::Domain("non-finite metric input".into()));
    }
    Ok(())
}

pub fn mse(pred: &[f64], label: &[f64]) -> Result<f64> {
    check_pair(pred, label, 1)?;
    let mut s = 0.0;
    for (p, l) in pred.iter().zip(label) {
        s += (p - l) * (p - l);
    }
    Ok(s / pred.len() as f64)
}

/// Pearson correlation from population moments, clamped to [−1, 1].
pub fn pearson_lcc(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y, 2)?;
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    let (vx, vy, cov) = (sxx / n, syy / n, sxy / n);
    if vx == 0.0 || vy == 0.0 {
        return Err(Error::Domain("correlation of a constant vector".into()));
    }
    Ok((cov / (vx * vy).sqrt()).clamp(-1.0, 1.0))
}

/// Twice the 1-based fractional ranks. Tied values share the mean of the
/// ranks they span, so doubled ranks are always integers.
fn doubled_ranks(x: &[f64]) -> Vec<i64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0; x.len()];
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && x[idx[end]] == x[idx[start]] {
            end += 1;
        }
        // ranks start+1 ..= end share their mean
        let r = (start + 1 + end) as i64;
        for &i in &idx[start..end] {
            ranks[i] = r;
        }
        start = end;
    }
    ranks
}

/// 1-based ranks with ties given the mean of the ranks they span.
pub fn fractional_ranks(x: &[f64]) -> Vec<f64> {
    doubled_ranks(x)
        .into_iter()
        .map(|r| r as f64 / 2.0)
        .collect()
}

/// Pearson correlation of integer vectors. The centred moments are exact
/// integers and only the final ratio rounds.
pub fn pearson_of_integers(a: &[i64], b: &[i64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::Domain(
            "correlation needs two aligned samples".into(),
        ));
    }
    let n = a.len() as i128;
    let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0i128, 0i128, 0i128, 0i128, 0i128);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as i128, y as i128);
        sa += x;
        sb += y;
        saa += x * x;
        sbb += y * y;
        sab += x * y;
    }
    let cov = n * sab - sa * sb;
    let va = n * saa - sa * sa;
    let vb = n * sbb - sb * sb;
    if va == 0 || vb == 0 {
        return Err(Error::Domain("correlation of a constant vector".into()));
    }
    Ok((cov as f64 / (va as f64 * vb as f64).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman correlation as the Pearson correlation of fractional ranks,
/// computed from exact integer rank moments.
pub fn spearman_srcc(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y, 2)?;
    pearson_of_integers(&doubled_ranks(x), &doubled_ranks(y))
}

fn tied_pairs_in_sorted<T: PartialEq>(sorted: &[T]) -> u64 {
    let mut total = 0u64;
    let mut start = 0;
    while start < sorted.len() {
        let mut end = start + 1;
        while end < sorted.len() && sorted[end] == sorted[start] {
            end += 1;
        }
        let t = (end - start) as u64;
        total += t * (t - 1) / 2;
        start = end;
    }
    total
}

/// Merge sort counting strict inversions.
fn sort_count_swaps(v: &mut [f64], buf: &mut [f64]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = {
        let (l, r) = v.split_at_mut(mid);
        let (bl, br) = buf.split_at_mut(mid);
        sort_count_swaps(l, bl) + sort_count_swaps(r, br)
    };
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
        if v[j] < v[i] {
            buf[k] = v[j];
            swaps += (mid - i) as u64;
            j += 1;
        } else {
            buf[k] = v[i];
            i += 1;
        }
        k += 1;
    }
    buf[k..k + mid - i].copy_from_slice(&v[i..mid]);
    k += mid - i;
    buf[k..k + n - j].copy_from_slice(&v[j..n]);
    v.copy_from_slice(&buf[..n]);
    swaps
}

/// Kendall τ-b in O(N log N) (Knight's method).
pub fn kendall_tau_b(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y, 2)?;
    let n = x.len() as u64;
    let mut pairs: Vec<(f64, f64)> = x.iter().copied().zip(y.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let n0 = n * (n - 1) / 2;
    let xs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let n1 = tied_pairs_in_sorted(&xs);
    let n3 = tied_pairs_in_sorted(&pairs);
    let mut ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let mut buf = vec![0.0; ys.len()];
    let swaps = sort_count_swaps(&mut ys, &mut buf);
    let n2 = tied_pairs_in_sorted(&ys);
    let not_tied_x = n0 - n1;
    let not_tied_y = n0 - n2;
    if not_tied_x == 0 || not_tied_y == 0 {
        return Err(Error::Domain(
            "Kendall tau undefined: all pairs tied".into(),
        ));
    }
    // concordant − discordant
    let c_minus_d = n0 as i64 - n1 as i64 - n2 as i64 + n3 as i64 - 2 * swaps as i64;
    Ok(tau_b_from_counts(c_minus_d, not_tied_y, not_tied_x))
}

#[inline]
fn tau_b_from_counts(c_minus_d: i64, c_d_tx: u64, c_d_ty: u64) -> f64 {
    c_minus_d as f64 / (c_d_tx as f64 * c_d_ty as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Utterance,
    System,
}

/// The four challenge metrics; `None` marks a cell that is undefined for
/// the data (e.g. correlation against a constant vector).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricSet {
    pub mse: Option<f64>,
    pub lcc: Option<f64>,
    pub srcc: Option<f64>,
    pub ktau: Option<f64>,
}

impl MetricSet {
    pub fn compute(pred: &[f64], label: &[f64]) -> (Self, Vec<String>) {
        let mut notes = Vec::new();
        let mut cell = |name: &str, r: Result<f64>| match r {
            Ok(v) => Some(v),
            Err(e) => {
                notes.push(format!("{name}: {e}"));
                None
            }
        };
        let set = Self {
            mse: cell("mse", mse(pred, label)),
            lcc: cell("lcc", pearson_lcc(pred, label)),
            srcc: cell("srcc", spearman_srcc(pred, label)),
            ktau: cell("ktau", kendall_tau_b(pred, label)),
        };
        (set, notes)
    }

    pub fn cells(&self) -> [(&'static str, Option<f64>); 4] {
        [
            ("mse", self.mse),
            ("lcc", self.lcc),
            ("srcc", self.srcc),
            ("ktau", self.ktau),
        ]
    }
}

/// Metrics for the four axes plus the composite at one level.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LevelReport {
    pub pq: MetricSet,
    pub pc: MetricSet,
    pub ce: MetricSet,
    pub cu: MetricSet,
    pub composite: MetricSet,
}

impl LevelReport {
    pub fn axis(&self, axis: Axis) -> &MetricSet {
        match axis {
            Axis::Pq => &self.pq,
            Axis::Pc => &self.pc,
            Axis::Ce => &self.ce,
            Axis::Cu => &self.cu,
        }
    }

    fn axis_mut(&mut self, axis: Axis) -> &mut MetricSet {
        match axis {
            Axis::Pq => &mut self.pq,
            Axis::Pc => &mut self.pc,
            Axis::Ce => &mut self.ce,
            Axis::Cu => &mut self.cu,
        }
    }

    pub fn rows(&self) -> [(&'static str, &MetricSet); 5] {
        [
            ("pq", &self.pq),
            ("pc", &self.pc),
            ("ce", &self.ce),
            ("cu", &self.cu),
            ("composite", &self.composite),
        ]
    }

    fn fill(pred: &[AxisScores], label: &[AxisScores], notes: &mut Vec<String>, tag: &str) -> Self {
        let mut out = LevelReport::default();
        for axis in Axis::ALL {
            let (set, n) = MetricSet::compute(&column(pred, axis), &column(label, axis));
            *out.axis_mut(axis) = set;
            notes.extend(n.into_iter().map(|m| format!("{tag}/{axis}/{m}")));
        }
        let cp: Vec<f64> = pred.iter().map(AxisScores::composite).collect();
        let cl: Vec<f64> = label.iter().map(AxisScores::composite).collect();
        let (set, n) = MetricSet::compute(&cp, &cl);
        out.composite = set;
        notes.extend(n.into_iter().map(|m| format!("{tag}/composite/{m}")));
        out
    }
}

/// Full grid: 5 targets × 2 levels × 4 metrics.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricReport {
    pub n_utterances: usize,
    pub n_systems: usize,
    pub utterance: LevelReport,
    pub system: LevelReport,
    /// Why any cell is undefined.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl MetricReport {
    pub fn level(&self, level: Level) -> &LevelReport {
        match level {
            Level::Utterance => &self.utterance,
            Level::System => &self.system,
        }
    }

    /// Number of defined cells (40 when everything is computable).
    pub fn defined_cells(&self) -> usize {
        [&self.utterance, &self.system]
            .iter()
            .flat_map(|l| l.rows())
            .flat_map(|(_, s)| s.cells())
            .filter(|(_, v)| v.is_some())
            .count()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// Plain-text table, one line per (level, target).
    pub fn render_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<10} {:<10} {:>9} {:>9} {:>9} {:>9}",
            "level", "target", "MSE", "LCC", "SRCC", "KTAU"
        );
        for (lname, level) in [("utterance", &self.utterance), ("system", &self.system)] {
            for (name, set) in level.rows() {
                let _ = write!(s, "{lname:<10} {name:<10}");
                for (_, v) in set.cells() {
                    match v {
                        Some(v) => {
                            let _ = write!(s, " {v:>9.4}");
                        }
                        None => {
                            let _ = write!(s, " {:>9}", "n/a");
                        }
                    }
                }
                s.push('\n');
            }
        }
        s
    }
}

/// Per-system arithmetic means, systems in ascending id order.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemMeans {
    pub systems: Vec<String>,
    pub preds: Vec<AxisScores>,
    pub labels: Vec<AxisScores>,
}

pub fn system_level<S: AsRef<str>>(
    preds: &[AxisScores],
    labels: &[AxisScores],
    system_of: &[S],
) -> Result<SystemMeans> {
    if preds.len() != labels.len() || preds.len() != system_of.len() {
        return Err(Error::Config(
            "predictions, labels and system ids must be aligned".into(),
        ));
    }
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, s) in system_of.iter().enumerate() {
        groups.entry(s.as_ref()).or_default().push(i);
    }
    let mean = |rows: &[AxisScores], idx: &[usize]| {
        let mut acc = [0.0; 4];
        for &i in idx {
            for (a, v) in acc.iter_mut().zip(rows[i].to_array()) {
                *a += v;
            }
        }
        AxisScores::from_array(acc.map(|a| a / idx.len() as f64))
    };
    let mut out = SystemMeans {
        systems: Vec::with_capacity(groups.len()),
        preds: Vec::with_capacity(groups.len()),
        labels: Vec::with_capacity(groups.len()),
    };
    for (sys, idx) in groups {
        out.systems.push(sys.to_string());
        out.preds.push(mean(preds, &idx));
        out.labels.push(mean(labels, &idx));
    }
    Ok(out)
}

/// Fills the full report. Undefined cells are recorded as `None` with a note
/// instead of aborting.
pub fn evaluate<S: AsRef<str>>(
    preds: &[AxisScores],
    labels: &[AxisScores],
    system_of: &[S],
) -> Result<MetricReport> {
    if preds.is_empty() {
        return Err(Error::Data("nothing to evaluate".into()));
    }
    let sys = system_level(preds, labels, system_of)?;
    let mut notes = Vec::new();
    let utterance = LevelReport::fill(preds, labels, &mut notes, "utterance");
    let system = LevelReport::fill(&sys.preds, &sys.labels, &mut notes, "system");
    Ok(MetricReport {
        n_utterances: preds.len(),
        n_systems: sys.systems.len(),
        utterance,
        system,
        notes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mse_cases() {
        assert_eq!(mse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mse(&[1.0, 2.0], &[2.0, 4.0]).unwrap(), 2.5);
        assert_eq!(mse(&[2.0, 1.0], &[4.0, 2.0]).unwrap(), 2.5);
    }

    #[test]
    fn pearson_cases() {
        let x = [1.0, 2.0, 3.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
        assert!((pearson_lcc(&x, &y).unwrap() - 1.0).abs() < 1e-15);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pearson_lcc(&x, &neg).unwrap() + 1.0).abs() < 1e-15);
        let r = pearson_lcc(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap();
        assert!((r - 0.8).abs() < 1e-12);
        assert!(matches!(
            pearson_lcc(&[1.0, 1.0], &[1.0, 2.0]),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn spearman_cases() {
        let x = [0.1, 0.5, 1.2, 2.0];
        let y: Vec<f64> = x.iter().map(|v: &f64| v.exp()).collect();
        assert_eq!(spearman_srcc(&x, &y).unwrap(), 1.0);
        let r = spearman_srcc(&[1.0, 2.0, 3.0], &[3.0, 1.0, 2.0]).unwrap();
        assert!((r + 0.5).abs() < 1e-12);
        assert_eq!(fractional_ranks(&[1.0, 1.0, 2.0]), vec![1.5, 1.5, 3.0]);
    }

    #[test]
    fn kendall_cases() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(kendall_tau_b(&x, &[10.0, 20.0, 30.0, 40.0]).unwrap(), 1.0);
        assert_eq!(kendall_tau_b(&x, &[4.0, 3.0, 2.0, 1.0]).unwrap(), -1.0);
        assert!(matches!(
            kendall_tau_b(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn system_means_by_hand() {
        let preds = [
            AxisScores::splat(1.0),
            AxisScores::splat(3.0),
            AxisScores::new(2.0, 4.0, 6.0, 8.0),
            AxisScores::new(4.0, 4.0, 4.0, 4.0),
        ];
        let labels = [
            AxisScores::splat(2.0),
            AxisScores::splat(2.0),
            AxisScores::splat(5.0),
            AxisScores::splat(7.0),
        ];
        let sys = ["b", "b", "a", "a"];
        let m = system_level(&preds, &labels, &sys).unwrap();
        assert_eq!(m.systems, vec!["a", "b"]);
        assert_eq!(m.preds[0], AxisScores::new(3.0, 4.0, 5.0, 6.0));
        assert_eq!(m.preds[1], AxisScores::splat(2.0));
        assert_eq!(m.labels[0], AxisScores::splat(6.0));
        let swapped = system_level(
            &[preds[1], preds[0], preds[3], preds[2]],
            &[labels[1], labels[0], labels[3], labels[2]],
            &sys,
        )
        .unwrap();
        assert_eq!(swapped, m);
    }

    #[test]
    fn perfect_predictions_report() {
        let labels: Vec<AxisScores> = (0..9)
            .map(|i| {
                let v = i as f64;
                AxisScores::new(v, 2.0 * v + (i % 2) as f64, 9.0 - v, v * v)
            })
            .collect();
        let systems: Vec<String> = (0..9).map(|i| format!("s{}", i % 3)).collect();
        let r = evaluate(&labels, &labels, &systems).unwrap();
        assert_eq!(r.n_systems, 3);
        assert_eq!(r.defined_cells(), 40);
        for level in [&r.utterance, &r.system] {
            for (_, set) in level.rows() {
                assert_eq!(set.mse, Some(0.0));
                assert_eq!(set.lcc, Some(1.0));
                assert_eq!(set.srcc, Some(1.0));
                assert_eq!(set.ktau, Some(1.0));
            }
        }
        let back = MetricReport::from_json(&r.to_json().unwrap()).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn constant_predictions_mark_cells_undefined() {
        let labels: Vec<AxisScores> = (0..4).map(|i| AxisScores::splat(i as f64)).collect();
        let preds = vec![AxisScores::splat(5.0); 4];
        let r = evaluate(&preds, &labels, &["a", "b", "c", "d"]).unwrap();
        assert!(r.utterance.pq.mse.is_some());
        assert!(r.utterance.pq.lcc.is_none());
        assert!(r.utterance.composite.ktau.is_none());
        assert!(!r.notes.is_empty());
        let json = r.to_json().unwrap();
        assert!(!json.contains("NaN"));
        assert!(r.render_table().contains("n/a"));
    }
}
