//! Mini-batch training with Adam, dev-loss early stopping and the ablation
//! grid.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::axes::AxisScores;
use crate::data::{crop_window, dataset_fingerprint, EmbeddingStore, FusedSample, NormStats};
use crate::ensemble::{Leaderboard, LeaderboardRow};
use crate::error::{Error, Result};
use crate::fsio::write_atomic;
use crate::losses::{multi_axis_loss, LossConfig, LossKind, MultiAxisLoss};
use crate::metrics::{evaluate, MetricReport};
use crate::model::{
    dense_mask, save_checkpoint, Aggregation, Checkpoint, ForwardCache, Model, ModelConfig,
    TrainMeta,
};
use crate::nn::{AdamConfig, AdamState, Grads, SeqView};
use crate::par::Exec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    /// Defaults to 32 for MLP aggregation and 16 otherwise.
    pub batch_size: Option<usize>,
    pub max_epochs: usize,
    pub patience: usize,
    pub crop_seconds: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            batch_size: None,
            max_epochs: 10,
            patience: 2,
            crop_seconds: 10.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn batch_size_for(&self, aggregation: Aggregation) -> usize {
        self.batch_size.unwrap_or(match aggregation {
            Aggregation::Mlp => 32,
            Aggregation::BlstmH | Aggregation::BlstmT => 16,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::Config(format!(
                "learning rate must be finite and >= 0, got {}",
                self.lr
            )));
        }
        if matches!(self.batch_size, Some(b) if b < 2) {
            return Err(Error::Config("batch_size must be at least 2".into()));
        }
        if self.max_epochs == 0 || self.patience == 0 {
            return Err(Error::Config(
                "max_epochs and patience must be at least 1".into(),
            ));
        }
        if self.crop_seconds.is_nan() || self.crop_seconds <= 0.0 {
            return Err(Error::Config("crop_seconds must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_loss: f64,
    pub dev_report: MetricReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_epoch: usize,
}

impl TrainHistory {
    pub fn best(&self) -> &EpochRecord {
        &self.epochs[self.best_epoch - 1]
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path, self.to_json()?.as_bytes())
    }
}

/// Patience-based stopping on strict dev-loss improvement.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    since_best: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StopDecision {
    pub improved: bool,
    pub stop: bool,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            since_best: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, loss: f64) -> StopDecision {
        let improved = loss < self.best;
        if improved {
            self.best = loss;
            self.best_epoch = epoch;
            self.since_best = 0;
        } else {
            self.since_best += 1;
        }
        StopDecision {
            improved,
            stop: self.since_best >= self.patience,
        }
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best_loss(&self) -> f64 {
        self.best
    }
}

/// Observation points inside [`train_with_hook`].
pub trait EpochHook {
    /// May replace the dev loss used for early stopping.
    fn dev_loss(&mut self, _epoch: usize, computed: f64) -> f64 {
        computed
    }

    fn after_epoch(&mut self, _record: &EpochRecord, _model: &Model) {}
}

pub struct NoHook;

impl EpochHook for NoHook {}

/// Splits `0..n` (already shuffled order) into batches of `size`, folding a
/// trailing singleton into the previous batch.
pub fn batch_ranges(n: usize, size: usize) -> Vec<std::ops::Range<usize>> {
    let mut out: Vec<std::ops::Range<usize>> =
        (0..n).step_by(size).map(|s| s..(s + size).min(n)).collect();
    if out.len() > 1 && out.last().is_some_and(|r| r.len() < 2) {
        let last = out.pop().expect("nonempty");
        out.last_mut().expect("nonempty").end = last.end;
    }
    out
}

/// Visiting order of the training set in `epoch` (1-based).
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> (Vec<usize>, ChaCha8Rng) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    (order, rng)
}

/// Forward caches of a batch of dense sequences.
pub fn batch_forward(model: &Model, seqs: &[&[f64]], exec: Exec) -> Result<Vec<ForwardCache>> {
    exec.map(seqs, |s| {
        let mask = dense_mask(s.len(), model.input_dim())?;
        model.forward_cached(SeqView::dense(s, model.input_dim(), &mask))
    })
    .into_iter()
    .collect()
}

/// Parameter gradient of a batch loss given its per-sample prediction
/// gradients, summed in sample order.
pub fn batch_backward(
    model: &Model,
    seqs: &[&[f64]],
    caches: &[ForwardCache],
    d_preds: &[AxisScores],
    exec: Exec,
) -> Grads {
    let d = model.input_dim();
    let parts = exec.map_range(seqs.len(), |i| {
        let mask = vec![true; seqs[i].len() / d];
        model.backward(SeqView::dense(seqs[i], d, &mask), &caches[i], &d_preds[i])
    });
    Grads::sum_ordered(&parts, model.params())
}

/// Loss over a batch of dense sequences and its gradient with respect to
/// every parameter.
pub fn batch_gradient(
    model: &Model,
    seqs: &[&[f64]],
    labels: &[AxisScores],
    loss: &LossConfig,
    exec: Exec,
) -> Result<(MultiAxisLoss, Grads)> {
    let caches = batch_forward(model, seqs, exec)?;
    let preds: Vec<AxisScores> = caches.iter().map(|c| c.scores).collect();
    let value = multi_axis_loss(&preds, labels, loss)?;
    let grads = batch_backward(model, seqs, &caches, &value.grad, exec);
    Ok((value, grads))
}

/// Per-axis mean of `labels`.
pub fn label_mean(labels: &[AxisScores]) -> AxisScores {
    let mut acc = [0.0; 4];
    for l in labels {
        for (a, v) in acc.iter_mut().zip(l.to_array()) {
            *a += v;
        }
    }
    AxisScores::from_array(acc.map(|a| a / labels.len().max(1) as f64))
}

fn labels_of(samples: &[FusedSample], what: &str) -> Result<Vec<AxisScores>> {
    samples
        .iter()
        .map(|s| {
            s.labels.ok_or_else(|| {
                Error::Data(format!("{what} utterance `{}` has no labels", s.utt_id))
            })
        })
        .collect()
}

/// Predictions of `model` on uncropped `samples`.
pub fn predict_samples(
    model: &Model,
    samples: &[FusedSample],
    exec: Exec,
) -> Result<Vec<AxisScores>> {
    let seqs: Vec<&[f64]> = samples.iter().map(|s| s.seq.data.as_slice()).collect();
    model.predict_dense(&seqs, exec)
}

/// Loss and metric report on a labeled set, without cropping.
pub fn evaluate_set(
    model: &Model,
    samples: &[FusedSample],
    loss: &LossConfig,
    exec: Exec,
) -> Result<(f64, MetricReport)> {
    score_predictions(&predict_samples(model, samples, exec)?, samples, loss)
}

fn score_predictions(
    preds: &[AxisScores],
    samples: &[FusedSample],
    loss: &LossConfig,
) -> Result<(f64, MetricReport)> {
    let labels = labels_of(samples, "evaluation")?;
    let value = multi_axis_loss(preds, &labels, loss)?.value;
    let systems: Vec<&str> = samples.iter().map(|s| s.system_id.as_str()).collect();
    Ok((value, evaluate(preds, &labels, &systems)?))
}

pub fn train(
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    norm_stats: &NormStats,
    train_set: &[FusedSample],
    dev_set: &[FusedSample],
    exec: Exec,
) -> Result<(Checkpoint, TrainHistory)> {
    train_with_hook(
        model_config,
        train_config,
        norm_stats,
        train_set,
        dev_set,
        exec,
        &mut NoHook,
    )
}

pub fn train_with_hook(
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    norm_stats: &NormStats,
    train_set: &[FusedSample],
    dev_set: &[FusedSample],
    exec: Exec,
    hook: &mut dyn EpochHook,
) -> Result<(Checkpoint, TrainHistory)> {
    train_config.validate()?;
    model_config.validate()?;
    let batch_size = train_config.batch_size_for(model_config.aggregation);
    if train_set.len() < 2 || dev_set.len() < 2 {
        return Err(Error::Data(
            "training and dev sets need at least 2 utterances each".into(),
        ));
    }
    let train_labels = labels_of(train_set, "training")?;
    labels_of(dev_set, "dev")?;
    let dims = train_set[0].seq.dims;
    if let Some(s) = train_set.iter().chain(dev_set).find(|s| s.seq.dims != dims) {
        return Err(Error::Data(format!(
            "`{}` has {} fused dims, expected {dims}",
            s.utt_id, s.seq.dims
        )));
    }

    let mut model = Model::new(model_config.clone(), dims)?;
    model.set_output_bias(&label_mean(&train_labels));
    let mut adam = AdamState::new(
        model.params(),
        AdamConfig {
            lr: train_config.lr,
            ..AdamConfig::default()
        },
    )?;
    let loss_cfg = model_config.loss;
    let mut stopper = EarlyStopping::new(train_config.patience);
    let mut best_params = model.params().values_snapshot();
    let mut epochs = Vec::new();

    for epoch in 1..=train_config.max_epochs {
        let (order, mut rng) = epoch_order(train_set.len(), train_config.seed, epoch);
        let mut loss_sum = 0.0;
        let batches = batch_ranges(order.len(), batch_size);
        for (bi, range) in batches.iter().enumerate() {
            let idx = &order[range.clone()];
            let windows: Vec<_> = idx
                .iter()
                .map(|&i| {
                    let s = &train_set[i].seq;
                    crop_window(
                        s.frames(),
                        s.frame_rate_hz,
                        train_config.crop_seconds,
                        &mut rng,
                    )
                })
                .collect();
            let seqs: Vec<&[f64]> = idx
                .iter()
                .zip(&windows)
                .map(|(&i, w)| &train_set[i].seq.data[w.start * dims..w.end * dims])
                .collect();
            let labels: Vec<AxisScores> = idx.iter().map(|&i| train_labels[i]).collect();
            let diverged = Error::Divergence {
                epoch,
                batch: bi + 1,
            };
            let caches = batch_forward(&model, &seqs, exec)?;
            let preds: Vec<AxisScores> = caches.iter().map(|c| c.scores).collect();
            if !preds.iter().all(AxisScores::is_finite) {
                return Err(diverged);
            }
            let value = multi_axis_loss(&preds, &labels, &loss_cfg)?;
            if !value.value.is_finite() {
                return Err(diverged);
            }
            let grads = batch_backward(&model, &seqs, &caches, &value.grad, exec);
            loss_sum += value.value;
            model.params_mut().set_grads(&grads);
            adam.update(model.params_mut())?;
        }
        let dev_preds = predict_samples(&model, dev_set, exec)?;
        if !dev_preds.iter().all(AxisScores::is_finite) {
            return Err(Error::Divergence {
                epoch,
                batch: batches.len(),
            });
        }
        let (computed, dev_report) = score_predictions(&dev_preds, dev_set, &loss_cfg)?;
        let dev_loss = hook.dev_loss(epoch, computed);
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / batches.len() as f64,
            dev_loss,
            dev_report,
        };
        log::info!(
            "epoch {epoch}: train {:.6} dev {:.6}",
            record.train_loss,
            record.dev_loss
        );
        hook.after_epoch(&record, &model);
        epochs.push(record);
        let decision = stopper.observe(epoch, dev_loss);
        if decision.improved {
            best_params = model.params().values_snapshot();
        }
        if decision.stop {
            break;
        }
    }
    model.params_mut().restore_values(&best_params);
    let history = TrainHistory {
        stopped_epoch: epochs.len(),
        best_epoch: stopper.best_epoch(),
        epochs,
    };
    let checkpoint = Checkpoint {
        model,
        norm_stats: norm_stats.clone(),
        train_meta: TrainMeta {
            epochs_run: history.stopped_epoch,
            best_epoch: history.best_epoch,
            best_dev_loss: stopper.best_loss(),
            dataset_fingerprint: dataset_fingerprint(train_set),
        },
    };
    Ok((checkpoint, history))
}

/// One configuration of the ablation grid.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridCell {
    pub encoders: Vec<String>,
    pub aggregation: Aggregation,
    pub loss: LossKind,
}

impl GridCell {
    pub fn model_id(&self) -> String {
        format!(
            "{}-{}-{}",
            crate::data::canonical_encoder_order(self.encoders.clone()).join("+"),
            self.aggregation,
            self.loss.name()
        )
    }
}

/// The 16-configuration grid: per loss, MLP on `subset`, then MLP, BLSTM_t
/// and BLSTM_h on `full`.
pub fn table_grid(full: &[String], subset: &[String]) -> Vec<GridCell> {
    let losses = [LossKind::Ccc, LossKind::Con, LossKind::Dcq, LossKind::Ut];
    let variants = [
        (subset, Aggregation::Mlp),
        (full, Aggregation::Mlp),
        (full, Aggregation::BlstmT),
        (full, Aggregation::BlstmH),
    ];
    losses
        .iter()
        .flat_map(|&loss| {
            variants.iter().map(move |(enc, agg)| GridCell {
                encoders: enc.to_vec(),
                aggregation: *agg,
                loss,
            })
        })
        .collect()
}

/// Full cross product, encoder sets outermost.
pub fn cross_grid(
    encoder_sets: &[Vec<String>],
    aggregations: &[Aggregation],
    losses: &[LossKind],
) -> Vec<GridCell> {
    let mut out = Vec::new();
    for enc in encoder_sets {
        for &aggregation in aggregations {
            for &loss in losses {
                out.push(GridCell {
                    encoders: enc.clone(),
                    aggregation,
                    loss,
                });
            }
        }
    }
    out
}

/// Raw embeddings shared by every grid cell.
#[derive(Debug, Clone)]
pub struct GridData {
    pub train: EmbeddingStore,
    pub dev: EmbeddingStore,
    /// Optional second held-out set.
    pub pam: Option<EmbeddingStore>,
}

#[derive(Debug, Clone)]
struct FusedSets {
    norm: NormStats,
    train: Vec<FusedSample>,
    dev: Vec<FusedSample>,
    pam: Option<Vec<FusedSample>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridOutcome {
    pub leaderboard: Leaderboard,
    pub histories: BTreeMap<String, TrainHistory>,
    /// `(model_id, message)` of cells that failed.
    pub failures: Vec<(String, String)>,
}

/// Trains every cell independently and reports dev (and PAM) metrics.
///
/// `base` supplies everything except encoders, aggregation and loss kind.
/// With `out_dir`, each cell's checkpoint and history are written there as
/// `<model_id>.ckpt` and `<model_id>.history.json`.
pub fn run_ablation_grid(
    cells: &[GridCell],
    base: &ModelConfig,
    train_config: &TrainConfig,
    data: &GridData,
    out_dir: Option<&Path>,
    exec: Exec,
) -> Result<GridOutcome> {
    if cells.is_empty() {
        return Err(Error::Config("the grid has no cells".into()));
    }
    let ids: Vec<String> = cells.iter().map(GridCell::model_id).collect();
    if let Some((i, id)) = ids
        .iter()
        .enumerate()
        .find(|(i, id)| ids[..*i].contains(id))
    {
        return Err(Error::Config(format!(
            "grid cell {} duplicates `{id}`",
            i + 1
        )));
    }
    let mut fused: BTreeMap<Vec<String>, Result<FusedSets>> = BTreeMap::new();
    for cell in cells {
        let key = crate::data::canonical_encoder_order(cell.encoders.clone());
        if fused.contains_key(&key) {
            continue;
        }
        let sets = (|| {
            let norm = data.train.fit_norm(&key)?;
            Ok(FusedSets {
                train: data.train.fuse(&key, &norm, exec)?,
                dev: data.dev.fuse(&key, &norm, exec)?,
                pam: data
                    .pam
                    .as_ref()
                    .map(|p| p.fuse(&key, &norm, exec))
                    .transpose()?,
                norm,
            })
        })();
        fused.insert(key, sets);
    }

    let results = exec.map(cells, |cell| -> Result<(LeaderboardRow, TrainHistory)> {
        let key = crate::data::canonical_encoder_order(cell.encoders.clone());
        let sets = fused[&key]
            .as_ref()
            .map_err(|e| Error::Data(e.to_string()))?;
        let mut cfg = base.clone();
        cfg.encoders = key.clone();
        cfg.aggregation = cell.aggregation;
        cfg.loss = LossConfig {
            kind: cell.loss,
            ..base.loss
        };
        let (ck, history) = train(&cfg, train_config, &sets.norm, &sets.train, &sets.dev, exec)?;
        let model_id = cell.model_id();
        let mut reports = BTreeMap::new();
        let (_, dev_report) = evaluate_set(&ck.model, &sets.dev, &cfg.loss, exec)?;
        reports.insert("dev".to_string(), dev_report);
        if let Some(pam) = &sets.pam {
            reports.insert(
                "pam".to_string(),
                evaluate_set(&ck.model, pam, &cfg.loss, exec)?.1,
            );
        }
        let checkpoint = match out_dir {
            Some(dir) => {
                let path = dir.join(format!("{model_id}.ckpt"));
                save_checkpoint(&ck, &path)?;
                history.save(dir.join(format!("{model_id}.history.json")))?;
                Some(path)
            }
            None => None,
        };
        Ok((
            LeaderboardRow::from_reports(model_id, checkpoint, reports),
            history,
        ))
    });

    let mut rows = Vec::new();
    let mut histories = BTreeMap::new();
    let mut failures = Vec::new();
    for (id, r) in ids.into_iter().zip(results) {
        match r {
            Ok((row, h)) => {
                histories.insert(id, h);
                rows.push(row);
            }
            Err(e) => {
                log::warn!("grid cell `{id}` failed: {e}");
                failures.push((id, e.to_string()));
            }
        }
    }
    Ok(GridOutcome {
        leaderboard: Leaderboard::new(rows)?,
        histories,
        failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::FrameSeq;
    use crate::nn::{AdamConfig, AdamState};
    use rand::Rng;

    #[test]
    fn early_stopping_traces() {
        let run = |losses: &[f64], patience| {
            let mut s = EarlyStopping::new(patience);
            for (i, &l) in losses.iter().enumerate() {
                if s.observe(i + 1, l).stop {
                    return (i + 1, s.best_epoch());
                }
            }
            (losses.len(), s.best_epoch())
        };
        assert_eq!(run(&[3.0, 2.0, 2.5], 1), (3, 2));
        assert_eq!(run(&[3.0, 2.0, 2.5, 2.6], 2), (4, 2));
        // equal is not an improvement
        assert_eq!(run(&[1.0, 1.0, 1.0], 2), (3, 1));
        assert_eq!(run(&[3.0, 2.0, 1.0], 2), (3, 3));
    }

    #[test]
    fn batching_rules() {
        assert_eq!(batch_ranges(10, 4), vec![0..4, 4..8, 8..10]);
        assert_eq!(batch_ranges(9, 4), vec![0..4, 4..9]);
        assert_eq!(batch_ranges(8, 4), vec![0..4, 4..8]);
        assert_eq!(batch_ranges(3, 16), vec![0..3]);
        let (a, _) = epoch_order(20, 5, 1);
        let (b, _) = epoch_order(20, 5, 1);
        let (c, _) = epoch_order(20, 5, 2);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            batch_size: Some(1),
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        assert_eq!(TrainConfig::default().batch_size_for(Aggregation::Mlp), 32);
        assert_eq!(
            TrainConfig::default().batch_size_for(Aggregation::BlstmT),
            16
        );
    }

    fn toy_samples(n: usize, seed: u64) -> Vec<FusedSample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let frames = rng.random_range(3..6);
                let data: Vec<f64> = (0..frames * 3)
                    .map(|_| rng.random_range(-1.0..1.0))
                    .collect();
                let m: f64 = data.iter().sum::<f64>() / data.len() as f64;
                FusedSample {
                    utt_id: format!("u{i:02}"),
                    system_id: format!("s{}", i % 3),
                    labels: Some(AxisScores::new(
                        5.0 + 3.0 * m,
                        4.0 - m,
                        5.0 + m,
                        6.0 + 2.0 * m,
                    )),
                    seq: FrameSeq {
                        encoder_id: "x".into(),
                        frame_rate_hz: 1.0,
                        dims: 3,
                        data,
                    },
                }
            })
            .collect()
    }

    fn small_config(agg: Aggregation, kind: LossKind) -> ModelConfig {
        ModelConfig {
            encoders: vec!["x".into()],
            aggregation: agg,
            blstm_hidden: 3,
            head_hidden: vec![4],
            loss: LossConfig::of_kind(kind),
            seed: 1,
        }
    }

    #[test]
    fn full_batch_matches_naive_adam() {
        let samples = toy_samples(12, 3);
        let labels: Vec<AxisScores> = samples.iter().map(|s| s.labels.unwrap()).collect();
        for agg in Aggregation::ALL {
            let cfg = small_config(agg, LossKind::Ut);
            let tc = TrainConfig {
                lr: 0.01,
                batch_size: Some(12),
                max_epochs: 3,
                patience: 5,
                crop_seconds: 100.0,
                seed: 2,
            };
            let mut probe = Vec::new();
            struct Capture<'a>(&'a mut Vec<Vec<Vec<f64>>>);
            impl EpochHook for Capture<'_> {
                fn after_epoch(&mut self, _r: &EpochRecord, m: &Model) {
                    self.0.push(m.params().values_snapshot());
                }
            }
            train_with_hook(
                &cfg,
                &tc,
                &NormStats::default(),
                &samples,
                &samples,
                Exec::Sequential,
                &mut Capture(&mut probe),
            )
            .unwrap();

            // naive loop: whole set, fixed order, explicit per-sample sums
            let mut model = Model::new(cfg.clone(), 3).unwrap();
            model.set_output_bias(&label_mean(&labels));
            let mut adam = AdamState::new(
                model.params(),
                AdamConfig {
                    lr: 0.01,
                    ..Default::default()
                },
            )
            .unwrap();
            assert_eq!(probe.len(), 3);
            for (epoch, expected) in probe.iter().enumerate() {
                let preds: Vec<AxisScores> = samples
                    .iter()
                    .map(|s| {
                        let mask = vec![true; s.seq.frames()];
                        model
                            .forward_one(SeqView::dense(&s.seq.data, 3, &mask))
                            .unwrap()
                    })
                    .collect();
                let loss = multi_axis_loss(&preds, &labels, &cfg.loss).unwrap();
                let mut total = model.params().grad_buffer();
                for (s, g) in samples.iter().zip(&loss.grad) {
                    let mask = vec![true; s.seq.frames()];
                    let view = SeqView::dense(&s.seq.data, 3, &mask);
                    let cache = model.forward_cached(view).unwrap();
                    total.accumulate(&model.backward(view, &cache, g));
                }
                model.params_mut().set_grads(&total);
                adam.update(model.params_mut()).unwrap();
                for (a, b) in expected
                    .iter()
                    .flatten()
                    .zip(model.params().values_snapshot().iter().flatten())
                {
                    assert!((a - b).abs() <= 1e-10, "{agg} epoch {epoch}");
                }
            }
        }
    }

    #[test]
    fn losses_finite_at_init_and_runs_reproduce() {
        let samples = toy_samples(10, 4);
        for kind in LossKind::ALL {
            let cfg = small_config(Aggregation::BlstmT, kind);
            let m = Model::new(cfg.clone(), 3).unwrap();
            let seqs: Vec<&[f64]> = samples.iter().map(|s| s.seq.data.as_slice()).collect();
            let labels: Vec<AxisScores> = samples.iter().map(|s| s.labels.unwrap()).collect();
            let (v, _) = batch_gradient(&m, &seqs, &labels, &cfg.loss, Exec::Parallel).unwrap();
            assert!(v.value.is_finite());
            let tc = TrainConfig {
                lr: 0.01,
                batch_size: Some(4),
                max_epochs: 2,
                crop_seconds: 3.0,
                ..TrainConfig::default()
            };
            let a = train(
                &cfg,
                &tc,
                &NormStats::default(),
                &samples[..7],
                &samples[7..],
                Exec::Parallel,
            )
            .unwrap();
            let b = train(
                &cfg,
                &tc,
                &NormStats::default(),
                &samples[..7],
                &samples[7..],
                Exec::Sequential,
            )
            .unwrap();
            assert_eq!(a.1, b.1);
            assert_eq!(a.0, b.0);
        }
    }

    #[test]
    fn divergence_reports_location() {
        let mut samples = toy_samples(6, 5);
        samples[0].seq.data[0] = f64::NAN;
        let cfg = small_config(Aggregation::Mlp, LossKind::Ccc);
        let tc = TrainConfig {
            batch_size: Some(6),
            ..TrainConfig::default()
        };
        let err = train(
            &cfg,
            &tc,
            &NormStats::default(),
            &samples,
            &samples,
            Exec::Sequential,
        )
        .unwrap_err();
        assert!(
            matches!(err, Error::Divergence { epoch: 1, batch: 1 }),
            "{err}"
        );
    }

    #[test]
    fn table_grid_shape() {
        let full = vec!["b".to_string(), "a".to_string()];
        let grid = table_grid(&full, &["a".to_string()]);
        assert_eq!(grid.len(), 16);
        let ids: std::collections::BTreeSet<String> = grid.iter().map(GridCell::model_id).collect();
        assert_eq!(ids.len(), 16);
        assert_eq!(grid[0].model_id(), "a-mlp-ccc");
        assert_eq!(grid[15].model_id(), "a+b-blstm_h-ut");
        assert_eq!(
            cross_grid(&[full], &Aggregation::ALL, &LossKind::ALL).len(),
            12
        );
    }
}
