//! Training objectives over a batch of scalar predictions.
//!
//! Every loss returns its value together with the exact gradient with respect
//! to the predictions. Pairwise objectives use all unordered within-batch
//! pairs.

use serde::{Deserialize, Serialize};

use crate::axes::{column, Axis, AxisScores};
use crate::error::{Error, Result};

/// Weight of the contrastive term inside the UTMOS-style objective.
pub const UT_CONTRASTIVE_WEIGHT: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    /// Margin contrastive ranking loss.
    Con,
    /// Clipped MSE plus half the contrastive loss.
    Ut,
    /// Pairwise deviation plus inversion hinge.
    Dcq,
    /// One minus the concordance correlation coefficient.
    Ccc,
}

impl LossKind {
    pub const ALL: [LossKind; 4] = [LossKind::Con, LossKind::Ut, LossKind::Dcq, LossKind::Ccc];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Con => "con",
            LossKind::Ut => "ut",
            LossKind::Dcq => "dcq",
            LossKind::Ccc => "ccc",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "con" | "contrastive" => Ok(LossKind::Con),
            "ut" | "utmos" => Ok(LossKind::Ut),
            "dcq" => Ok(LossKind::Dcq),
            "ccc" => Ok(LossKind::Ccc),
            other => Err(Error::Config(format!("unknown loss `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub kind: LossKind,
    pub margin: f64,
    pub clip_tau: f64,
    pub dcq_dev_weight: f64,
    pub dcq_rank_weight: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            kind: LossKind::Ut,
            margin: 0.5,
            clip_tau: 0.25,
            dcq_dev_weight: 1.0,
            dcq_rank_weight: 1.0,
        }
    }
}

impl LossConfig {
    pub fn of_kind(kind: LossKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |x: f64| x.is_finite() && x >= 0.0;
        if !ok(self.margin) || !ok(self.clip_tau) {
            return Err(Error::Config(
                "margin and clip_tau must be finite and >= 0".into(),
            ));
        }
        if !self.dcq_dev_weight.is_finite() || !self.dcq_rank_weight.is_finite() {
            return Err(Error::Config("DCQ weights must be finite".into()));
        }
        Ok(())
    }
}

/// Scalar loss with its gradient with respect to the predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub grad: Vec<f64>,
    /// Set when the batch carried no informative pairs.
    pub degenerate: bool,
}

impl LossValue {
    fn new(value: f64, grad: Vec<f64>) -> Self {
        Self {
            value,
            grad,
            degenerate: false,
        }
    }
}

#[inline]
fn sgn(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn check_lengths(pred: &[f64], label: &[f64], min: usize) -> Result<()> {
    if pred.len() != label.len() {
        return Err(Error::Config(format!(
            "prediction/label length mismatch: {} vs {}",
            pred.len(),
            label.len()
        )));
    }
    if pred.len() < min {
        return Err(Error::Domain(format!(
            "loss needs at least {min} samples, got {}",
            pred.len()
        )));
    }
    Ok(())
}

/// Mean over unordered pairs of `max(0, |Δpred − Δlabel| − margin)`.
///
/// Works on the residuals `e = pred − label`: the pair term is
/// `max(0, |e_i − e_j| − margin)`, so after sorting the residuals each
/// element's active partners form a prefix and a suffix, found by binary
/// search. Runs in O(N log N).
pub fn contrastive_loss(pred: &[f64], label: &[f64], margin: f64) -> Result<LossValue> {
    check_lengths(pred, label, 2)?;
    let n = pred.len();
    let resid: Vec<f64> = pred.iter().zip(label).map(|(p, l)| p - l).collect();
    let mut sorted = resid.clone();
    sorted.sort_by(f64::total_cmp);
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0);
    for &e in &sorted {
        prefix.push(prefix.last().unwrap() + e);
    }
    let pairs = (n * (n - 1) / 2) as f64;
    let mut total = 0.0;
    let mut grad = vec![0.0; n];
    for (i, &e) in resid.iter().enumerate() {
        // partners sitting more than `margin` below / above this residual
        let below = sorted.partition_point(|&x| x < e - margin);
        let above = n - sorted.partition_point(|&x| x <= e + margin);
        total += below as f64 * (e - margin) - prefix[below];
        grad[i] = (below as f64 - above as f64) / pairs;
    }
    Ok(LossValue::new(total / pairs, grad))
}

/// Mean of squared errors counted only where `|error| > tau`.
pub fn clipped_mse(pred: &[f64], label: &[f64], tau: f64) -> Result<LossValue> {
    check_lengths(pred, label, 1)?;
    let n = pred.len() as f64;
    let mut total = 0.0;
    let grad = pred
        .iter()
        .zip(label)
        .map(|(p, l)| {
            let e = p - l;
            if e.abs() > tau {
                total += e * e;
                2.0 * e / n
            } else {
                0.0
            }
        })
        .collect();
    Ok(LossValue::new(total / n, grad))
}

/// Clipped MSE plus [`UT_CONTRASTIVE_WEIGHT`] times the contrastive loss.
pub fn utmos_loss(pred: &[f64], label: &[f64], cfg: &LossConfig) -> Result<LossValue> {
    check_lengths(pred, label, 2)?;
    let mse = clipped_mse(pred, label, cfg.clip_tau)?;
    let con = contrastive_loss(pred, label, cfg.margin)?;
    let grad = mse
        .grad
        .iter()
        .zip(&con.grad)
        .map(|(a, b)| a + UT_CONTRASTIVE_WEIGHT * b)
        .collect();
    Ok(LossValue::new(
        mse.value + UT_CONTRASTIVE_WEIGHT * con.value,
        grad,
    ))
}

/// Pairwise deviation and inversion terms over pairs with unequal labels.
///
/// `dev  = mean |(p_i − p_j) − (l_i − l_j)|`,
/// `rank = mean max(0, −(p_i − p_j)·sign(l_i − l_j))`,
/// `loss = dev_weight·dev + rank_weight·rank`.
///
/// With every label equal there are no informative pairs; the result is zero
/// and flagged `degenerate`.
pub fn dcq_loss(pred: &[f64], label: &[f64], cfg: &LossConfig) -> Result<LossValue> {
    check_lengths(pred, label, 2)?;
    let n = pred.len();
    let mut dev = 0.0;
    let mut rank = 0.0;
    let mut g_dev = vec![0.0; n];
    let mut g_rank = vec![0.0; n];
    let mut pairs = 0usize;
    for i in 0..n {
        for j in i + 1..n {
            let dl = label[i] - label[j];
            if dl == 0.0 {
                continue;
            }
            pairs += 1;
            let dp = pred[i] - pred[j];
            let r = dp - dl;
            dev += r.abs();
            let s = sgn(r);
            g_dev[i] += s;
            g_dev[j] -= s;
            let dir = sgn(dl);
            let inv = -dp * dir;
            if inv > 0.0 {
                rank += inv;
                g_rank[i] -= dir;
                g_rank[j] += dir;
            }
        }
    }
    if pairs == 0 {
        log::warn!("dcq loss: all labels equal, no informative pairs");
        return Ok(LossValue {
            value: 0.0,
            grad: vec![0.0; n],
            degenerate: true,
        });
    }
    let m = pairs as f64;
    let (wd, wr) = (cfg.dcq_dev_weight, cfg.dcq_rank_weight);
    let grad = g_dev
        .iter()
        .zip(&g_rank)
        .map(|(a, b)| (wd * a + wr * b) / m)
        .collect();
    Ok(LossValue::new(wd * dev / m + wr * rank / m, grad))
}

/// `1 − CCC` with population moments.
pub fn ccc_loss(pred: &[f64], label: &[f64]) -> Result<LossValue> {
    check_lengths(pred, label, 2)?;
    let n = pred.len() as f64;
    let mp = pred.iter().sum::<f64>() / n;
    let ml = label.iter().sum::<f64>() / n;
    let mut vp = 0.0;
    let mut vl = 0.0;
    let mut cov = 0.0;
    for (p, l) in pred.iter().zip(label) {
        vp += (p - mp) * (p - mp);
        vl += (l - ml) * (l - ml);
        cov += (p - mp) * (l - ml);
    }
    vp /= n;
    vl /= n;
    cov /= n;
    let gap = mp - ml;
    let denom = vp + vl + gap * gap;
    if denom == 0.0 {
        return Err(Error::Domain(
            "CCC undefined: predictions and labels are one identical constant".into(),
        ));
    }
    let num = 2.0 * cov;
    let grad = pred
        .iter()
        .zip(label)
        .map(|(p, l)| {
            let d_num = 2.0 * (l - ml) / n;
            let d_den = 2.0 * (p - mp) / n + 2.0 * gap / n;
            -(d_num * denom - num * d_den) / (denom * denom)
        })
        .collect();
    Ok(LossValue::new(1.0 - num / denom, grad))
}

/// Dispatches on `cfg.kind` for a single axis.
pub fn axis_loss(pred: &[f64], label: &[f64], cfg: &LossConfig) -> Result<LossValue> {
    match cfg.kind {
        LossKind::Con => contrastive_loss(pred, label, cfg.margin),
        LossKind::Ut => utmos_loss(pred, label, cfg),
        LossKind::Dcq => dcq_loss(pred, label, cfg),
        LossKind::Ccc => ccc_loss(pred, label),
    }
}

/// Uniform mean of the four per-axis losses.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiAxisLoss {
    pub value: f64,
    pub per_axis: [f64; 4],
    pub grad: Vec<AxisScores>,
}

pub fn multi_axis_loss(
    preds: &[AxisScores],
    labels: &[AxisScores],
    cfg: &LossConfig,
) -> Result<MultiAxisLoss> {
    if preds.len() != labels.len() {
        return Err(Error::Config("prediction/label batch size mismatch".into()));
    }
    let mut grad = vec![AxisScores::default(); preds.len()];
    let mut per_axis = [0.0; 4];
    for axis in Axis::ALL {
        let lv = axis_loss(&column(preds, axis), &column(labels, axis), cfg)?;
        per_axis[axis.index()] = lv.value;
        for (g, d) in grad.iter_mut().zip(&lv.grad) {
            g.set(axis, d / 4.0);
        }
    }
    let value = per_axis.iter().sum::<f64>() / 4.0;
    Ok(MultiAxisLoss {
        value,
        per_axis,
        grad,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64) {
        assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
    }

    #[test]
    fn contrastive_cases() {
        close(
            contrastive_loss(&[1.0, 4.0, 2.0], &[1.0, 4.0, 2.0], 0.5)
                .unwrap()
                .value,
            0.0,
        );
        close(
            contrastive_loss(&[0.0, 2.0], &[0.0, 1.0], 0.5)
                .unwrap()
                .value,
            0.5,
        );
        assert!(matches!(
            contrastive_loss(&[1.0], &[1.0], 0.5),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn clipped_mse_cases() {
        close(
            clipped_mse(&[1.0, 2.0], &[1.0, 2.0], 0.25).unwrap().value,
            0.0,
        );
        let inside = clipped_mse(&[1.0], &[1.2], 0.25).unwrap();
        close(inside.value, 0.0);
        assert_eq!(inside.grad, vec![0.0]);
        close(clipped_mse(&[1.0], &[2.0], 0.25).unwrap().value, 1.0);
    }

    #[test]
    fn utmos_hand_case() {
        let cfg = LossConfig::default();
        close(
            utmos_loss(&[0.0, 2.0], &[0.0, 1.0], &cfg).unwrap().value,
            0.75,
        );
        close(
            utmos_loss(&[3.0, 5.0], &[3.0, 5.0], &cfg).unwrap().value,
            0.0,
        );
        assert!(utmos_loss(&[1.0], &[1.0], &cfg).is_err());
    }

    #[test]
    fn dcq_cases() {
        let cfg = LossConfig::of_kind(LossKind::Dcq);
        close(
            dcq_loss(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0], &cfg)
                .unwrap()
                .value,
            0.0,
        );
        close(dcq_loss(&[2.0, 1.0], &[1.0, 2.0], &cfg).unwrap().value, 3.0);
        let flat = dcq_loss(&[1.0, 5.0, 2.0], &[4.0, 4.0, 4.0], &cfg).unwrap();
        assert!(flat.degenerate);
        assert_eq!(flat.value, 0.0);
    }

    #[test]
    fn ccc_cases() {
        close(
            ccc_loss(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap().value,
            0.0,
        );
        close(
            ccc_loss(&[3.0, 2.0, 1.0], &[1.0, 2.0, 3.0]).unwrap().value,
            2.0,
        );
        close(
            ccc_loss(&[2.0, 3.0, 4.0], &[1.0, 2.0, 3.0]).unwrap().value,
            3.0 / 7.0,
        );
        assert!(matches!(
            ccc_loss(&[2.0, 2.0], &[2.0, 2.0]),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn translation_behaviour() {
        let p = [1.0, 4.0, 2.5, 7.0];
        let l = [2.0, 3.0, 3.5, 6.0];
        let shift = |v: &[f64]| v.iter().map(|x| x + 1.7).collect::<Vec<_>>();
        let cfg = LossConfig::of_kind(LossKind::Dcq);
        close(
            contrastive_loss(&p, &l, 0.5).unwrap().value,
            contrastive_loss(&shift(&p), &shift(&l), 0.5).unwrap().value,
        );
        close(
            dcq_loss(&p, &l, &cfg).unwrap().value,
            dcq_loss(&shift(&p), &shift(&l), &cfg).unwrap().value,
        );
        // shifting only the predictions moves the CCC loss
        let base = ccc_loss(&p, &l).unwrap().value;
        let moved = ccc_loss(&shift(&p), &l).unwrap().value;
        assert!((base - moved).abs() > 1e-3);
    }

    #[test]
    fn loss_kind_parse() {
        assert_eq!(LossKind::parse("UT").unwrap(), LossKind::Ut);
        assert!(LossKind::parse("huber").is_err());
        let bad = LossConfig {
            margin: -1.0,
            ..LossConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
