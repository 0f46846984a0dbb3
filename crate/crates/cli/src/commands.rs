use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use aqa_core::data::{stratified_split, synth_corpus, EmbeddingStore, Manifest, MANIFEST_FILE};
use aqa_core::ensemble::{
    compare_strategies, ensemble_predict as average_members, member_predictions, read_predictions,
    select, table_strategies, write_predictions, EnsembleSpec, Leaderboard, Strategy,
};
use aqa_core::losses::LossKind;
use aqa_core::metrics::evaluate as score;
use aqa_core::model::{load_checkpoint, Aggregation};
use aqa_core::training::{predict_samples, run_ablation_grid, GridData};
use aqa_core::{write_atomic, AxisScores, Error, Exec, Result};

use crate::config::{load_synth_spec, FrozenConfig, GridPreset, Overrides, ResolvedRun, RunConfig};
use crate::{
    CompareArgs, EnsemblePredictArgs, EvaluateArgs, PredictArgs, SelectArgs, SplitArgs, SynthArgs,
    TrainArgs,
};

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)
        .map_err(|e| Error::Data(format!("cannot create {}: {e}", dir.display())))
}

pub fn synth(a: &SynthArgs) -> Result<()> {
    let mut spec = load_synth_spec(a.config.as_deref())?;
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    if let Some(s) = a.map_seed {
        spec.map_seed = Some(s);
    }
    let corpus = synth_corpus(&spec, &a.out)?;
    FrozenConfig::new("synth", &spec).save(&a.out)?;
    println!(
        "wrote {} utterances ({} systems) to {}; {} labels clipped",
        corpus.manifest.len(),
        spec.n_systems,
        a.out.join(MANIFEST_FILE).display(),
        corpus.clipped_labels
    );
    Ok(())
}

pub fn split(a: &SplitArgs) -> Result<()> {
    let manifest = Manifest::load(&a.manifest)?;
    let (train, dev) = stratified_split(&manifest, a.fraction, a.seed)?;
    create_dir(&a.out)?;
    train.save(a.out.join("train.jsonl"))?;
    dev.save(a.out.join("dev.jsonl"))?;
    println!("train {} / dev {}", train.len(), dev.len());
    Ok(())
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let mut cfg = RunConfig::load(&a.config)?;
    cfg.apply(&Overrides {
        seed: a.seed,
        encoders: a.encoders.clone(),
        aggregation: a
            .aggregation
            .as_deref()
            .map(Aggregation::parse)
            .transpose()?,
        loss: a.loss.as_deref().map(LossKind::parse).transpose()?,
        grid: a.grid.as_deref().map(GridPreset::parse).transpose()?,
    });
    let train_m = Manifest::load(&cfg.data.train)?;
    let dev_m = Manifest::load(&cfg.data.dev)?;
    let pam_m = cfg.data.pam.as_deref().map(Manifest::load).transpose()?;
    let base = cfg.model_config(&train_m.common_encoders())?;
    let cells = cfg.cells(&base)?;
    let mut encoders: Vec<String> = cells.iter().flat_map(|c| c.encoders.clone()).collect();
    encoders.sort();
    encoders.dedup();

    let exec = Exec::Parallel;
    let data = GridData {
        train: EmbeddingStore::load(&train_m, &encoders, exec)?,
        dev: EmbeddingStore::load(&dev_m, &encoders, exec)?,
        pam: pam_m
            .as_ref()
            .map(|m| EmbeddingStore::load(m, &encoders, exec))
            .transpose()?,
    };
    let ckpt_dir = a.out.join("checkpoints");
    create_dir(&ckpt_dir)?;
    FrozenConfig::new(
        "train",
        ResolvedRun {
            data: cfg.data.clone(),
            base_model: base.clone(),
            train: cfg.train.clone(),
            cells: cells.clone(),
        },
    )
    .save(&a.out)?;

    let outcome = run_ablation_grid(&cells, &base, &cfg.train, &data, Some(&ckpt_dir), exec)?;
    outcome.leaderboard.save(a.out.join("leaderboard.json"))?;
    write_atomic(
        a.out.join("leaderboard.tsv"),
        outcome.leaderboard.render_table().as_bytes(),
    )?;
    print!("{}", outcome.leaderboard.render_table());
    if !outcome.failures.is_empty() {
        let failures: BTreeMap<&str, &str> = outcome
            .failures
            .iter()
            .map(|(id, msg)| (id.as_str(), msg.as_str()))
            .collect();
        write_atomic(
            a.out.join("failures.json"),
            serde_json::to_string_pretty(&failures)?.as_bytes(),
        )?;
        for (id, msg) in &outcome.failures {
            eprintln!("cell {id} failed: {msg}");
        }
        if outcome.leaderboard.is_empty() {
            return Err(Error::Data("every grid cell failed".into()));
        }
    }
    Ok(())
}

pub fn predict(a: &PredictArgs) -> Result<()> {
    let ck = load_checkpoint(&a.checkpoint)?;
    let manifest = Manifest::load(&a.manifest)?;
    let encoders = ck.model.config().fused_encoders();
    let store = EmbeddingStore::load(&manifest, &encoders, Exec::Parallel)?;
    let samples = store.fuse(&encoders, &ck.norm_stats, Exec::Parallel)?;
    let preds = predict_samples(&ck.model, &samples, Exec::Parallel)?;
    let ids: Vec<String> = samples.iter().map(|s| s.utt_id.clone()).collect();
    write_predictions(&a.out, &ids, &preds)?;
    println!("wrote {} predictions to {}", ids.len(), a.out.display());
    Ok(())
}

/// Labels and systems of `manifest` in the order of `ids`. The two id sets
/// must be identical.
fn align_labels(manifest: &Manifest, ids: &[String]) -> Result<(Vec<AxisScores>, Vec<String>)> {
    let by_id: BTreeMap<&str, _> = manifest
        .entries
        .iter()
        .map(|e| (e.utt_id.as_str(), e))
        .collect();
    let mut seen = std::collections::BTreeSet::new();
    let mut labels = Vec::with_capacity(ids.len());
    let mut systems = Vec::with_capacity(ids.len());
    for id in ids {
        if !seen.insert(id.as_str()) {
            return Err(Error::Data(format!("utterance `{id}` is predicted twice")));
        }
        let e = by_id.get(id.as_str()).ok_or_else(|| {
            Error::Data(format!("predicted utterance `{id}` is not in the manifest"))
        })?;
        labels.push(
            e.scores
                .ok_or_else(|| Error::Data(format!("utterance `{id}` has no labels")))?,
        );
        systems.push(e.system_id.clone());
    }
    if let Some(missing) = manifest
        .entries
        .iter()
        .find(|e| !seen.contains(e.utt_id.as_str()))
    {
        return Err(Error::Data(format!(
            "manifest utterance `{}` has no prediction",
            missing.utt_id
        )));
    }
    Ok((labels, systems))
}

pub fn evaluate(a: &EvaluateArgs) -> Result<()> {
    let (ids, preds) = read_predictions(&a.predictions)?;
    let manifest = Manifest::load(&a.manifest)?;
    let (labels, systems) = align_labels(&manifest, &ids)?;
    let report = score(&preds, &labels, &systems)?;
    if let Some(out) = &a.out {
        write_atomic(out, report.to_json()?.as_bytes())?;
    }
    print!("{}", report.render_table());
    for note in &report.notes {
        eprintln!("note: {note}");
    }
    Ok(())
}

fn parse_strategy(a: &SelectArgs) -> Result<Strategy> {
    Ok(match a.strategy.as_str() {
        "intersection" => Strategy::Intersection {
            k_dev: a.k_dev,
            k_pam: a.k_pam,
        },
        "topk-pam" => Strategy::TopkPam { k: a.k },
        "topk-dev" => Strategy::TopkDev { k: a.k },
        "all" => Strategy::All,
        "explicit" => Strategy::Explicit {
            members: a
                .members
                .clone()
                .ok_or_else(|| Error::Config("--strategy explicit needs --members".into()))?,
        },
        other => {
            return Err(Error::Config(format!(
                "unknown strategy `{other}` (intersection, topk-pam, topk-dev, all, explicit)"
            )))
        }
    })
}

pub fn ensemble_select(a: &SelectArgs) -> Result<()> {
    let lb = Leaderboard::load(&a.leaderboard)?;
    let spec = select(&lb, &parse_strategy(a)?)?;
    spec.save(&a.out)?;
    println!(
        "{} members: {}",
        spec.members.len(),
        spec.members.join(", ")
    );
    Ok(())
}

pub fn ensemble_predict(a: &EnsemblePredictArgs) -> Result<()> {
    let spec = EnsembleSpec::load(&a.spec)?;
    let lb = Leaderboard::load(&a.leaderboard)?;
    let manifest = Manifest::load(&a.manifest)?;
    let store = EmbeddingStore::load(&manifest, &[], Exec::Parallel)?;
    let preds = average_members(&spec, &lb, &store, Exec::Parallel)?;
    let ids: Vec<String> = store.utterances.iter().map(|u| u.utt_id.clone()).collect();
    write_predictions(&a.out, &ids, &preds)?;
    println!(
        "wrote {} ensemble predictions ({} members) to {}",
        ids.len(),
        spec.members.len(),
        a.out.display()
    );
    Ok(())
}

pub fn ensemble_compare(a: &CompareArgs) -> Result<()> {
    let lb = Leaderboard::load(&a.leaderboard)?;
    let submitted = match &a.submitted {
        Some(p) => EnsembleSpec::load(p)?.strategy,
        None => Strategy::Intersection {
            k_dev: 12,
            k_pam: 12,
        },
    };
    let manifest = Manifest::load(&a.manifest)?;
    let store = EmbeddingStore::load(&manifest, &[], Exec::Parallel)?;
    let preds = member_predictions(&lb, &lb.model_ids(), &store, Exec::Parallel)?;
    let (labels, systems) = align_labels(&manifest, &preds.utt_ids)?;
    let table = compare_strategies(&lb, &table_strategies(submitted), &preds, &labels, &systems)?;
    table.save(&a.out)?;
    print!("{}", table.render_table());
    Ok(())
}
