//! Subcommand implementations.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use neurotext::annotate::build_layer_exemplars;
use neurotext::cache::{file_digest, write_atomic, FileCache};
use neurotext::experiments::{covering, divergence, lrp_masking_study, masking_replay};
use neurotext::interventions::{MaskMode, Replay, ReplayRecord, RectMask};
use neurotext::pipeline::{Analysis, ExplainOutput};
use neurotext::relevance::{filter_relevance, lrp_backward, top_k_neurons};
use neurotext::stability::{inter_set_stability, intra_set_stability, NoiseSpec, StabilityReport};
use neurotext::synth::{self, Split};
use neurotext::train::{train_reference, TrainConfig};
use neurotext::verbalize::PROMPT_VERSION;
use neurotext::{Image, Network, NeuronMask};
use serde::Serialize;
use serde_json::json;

use crate::config::RunConfig;
use crate::report::{self, Table};
use crate::CliError;

type Result<T> = std::result::Result<T, CliError>;

pub const MR_FILE: &str = "mr.json";
pub const EXPLANATION_FILE: &str = "explanation.txt";
pub const EXPLANATION_META_FILE: &str = "explanation.json";
pub const ACTIVATIONS_FILE: &str = "activations.json";
pub const PREDICTION_FILE: &str = "prediction.json";

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let path = dir.join(name);
    write_atomic(&path, contents.as_bytes())?;
    Ok(path)
}

fn pretty(value: &impl Serialize) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

/// The files written by `explain`, keyed by name.
pub type ArtifactBundle = BTreeMap<String, String>;

fn activation_dump(analysis: &Analysis) -> serde_json::Value {
    let neurons: Vec<_> = analysis
        .selected
        .iter()
        .map(|s| {
            json!({
                "layer": s.neuron.layer,
                "filter_index": s.neuron.filter_index,
                "score": s.score,
                "height": s.map.height,
                "width": s.map.width,
                "values": s.map.rows().collect::<Vec<_>>(),
                "cells": s.cells.iter().collect::<Vec<_>>(),
                "positions": s.positions,
                "description": s.description.text,
                "description_source": s.description.source,
            })
        })
        .collect();
    json!({ "neurons": neurons })
}

pub fn bundle(output: &ExplainOutput, class_names: &[String]) -> ArtifactBundle {
    let a = &output.analysis;
    let prediction = json!({
        "predicted_class": a.prediction.predicted_class,
        "predicted_index": a.prediction.predicted_index,
        "logits": a.prediction.logits,
        "probabilities": class_names
            .iter()
            .zip(&a.prediction.probabilities)
            .map(|(c, p)| (c.clone(), json!(p)))
            .collect::<serde_json::Map<_, _>>(),
    });
    let mut files = ArtifactBundle::new();
    files.insert(MR_FILE.into(), a.mr.to_json());
    files.insert(EXPLANATION_FILE.into(), format!("{}\n", output.explanation.text));
    files.insert(EXPLANATION_META_FILE.into(), pretty(&output.explanation));
    files.insert(ACTIVATIONS_FILE.into(), pretty(&activation_dump(a)));
    files.insert(PREDICTION_FILE.into(), pretty(&prediction));
    files
}

#[derive(Debug)]
pub struct ExplainResult {
    pub files: Vec<PathBuf>,
    pub from_cache: bool,
}

/// Explains one image and writes the artifacts under the output directory.
pub fn cmd_explain(config: &RunConfig, image_path: &Path) -> Result<ExplainResult> {
    let img = Image::load(image_path).map_err(|e| e.in_stage("input"))?;
    let cache = config.cache()?;
    let key = match &cache {
        Some(_) => Some(FileCache::key(&[
            "explain",
            &file_digest(config.model_path())?,
            &img.digest(),
            &config.args.k.to_string(),
            config.args.layer.as_deref().unwrap_or(""),
            &format!("{:?}", config.score_mode()),
            &config.annotator_tag()?,
            &format!("{:?}:{}:{}", config.args.realizer, config.args.llm_model.as_deref().unwrap_or(""), PROMPT_VERSION),
        ])),
        None => None,
    };

    let cached = match (&cache, &key) {
        (Some(cache), Some(key)) => cache
            .get(key)?
            .and_then(|bytes| serde_json::from_slice::<ArtifactBundle>(&bytes).ok()),
        _ => None,
    };
    let from_cache = cached.is_some();
    let files = match cached {
        Some(files) => files,
        None => {
            let net = config.load_model().map_err(|e| e.in_stage("load"))?;
            let class_names = net.class_names().to_vec();
            let pipeline = config.pipeline(net)?;
            let files = bundle(&pipeline.explain(&img)?, &class_names);
            if let (Some(cache), Some(key)) = (&cache, &key) {
                cache.put(key, serde_json::to_string(&files).expect("bundle serializes").as_bytes())?;
            }
            files
        }
    };
    let written = files
        .iter()
        .map(|(name, contents)| write_file(&config.args.out, name, contents))
        .collect::<Result<Vec<_>>>()?;
    Ok(ExplainResult {
        files: written,
        from_cache,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Experiment {
    Covering,
    Highlighting,
    Masking,
    /// Covering, highlighting and masking in one intervention table.
    Interventions,
    Divergence,
    StabilityIntra,
    StabilityInter,
    /// Both stability experiments in one table.
    Stability,
    /// Top-1 LRP neuron masking against random neurons, plus the top-1..5
    /// cumulative sweep, over a dataset cohort.
    MaskingLrp,
}

impl Experiment {
    pub fn needs_replay(self) -> bool {
        matches!(
            self,
            Experiment::Covering
                | Experiment::Highlighting
                | Experiment::Masking
                | Experiment::Interventions
                | Experiment::Divergence
        )
    }

    pub fn needs_dataset(self) -> bool {
        matches!(
            self,
            Experiment::StabilityIntra | Experiment::StabilityInter | Experiment::Stability | Experiment::MaskingLrp
        )
    }

    pub fn needs_pipeline(self) -> bool {
        matches!(
            self,
            Experiment::Divergence | Experiment::StabilityIntra | Experiment::StabilityInter | Experiment::Stability
        )
    }

    pub fn name(self) -> String {
        self.to_possible_value().expect("no skipped variants").get_name().to_owned()
    }
}

pub const METHOD: &str = "ours";

fn intervention_row(cells: &mut Vec<String>, agg: &neurotext::interventions::AggregateResult) {
    cells.push(report::fixed(agg.cf_rate, 2));
    cells.push(report::fixed(agg.mean_delta_p, 2));
}

/// Loads a labelled cohort: `per_class` images per class, seeded.
pub fn cohort(config: &RunConfig) -> Result<Vec<(Image, String)>> {
    let index = config.dataset()?.stratified_sample(config.args.per_class, config.args.seed);
    index
        .entries()
        .iter()
        .enumerate()
        .map(|(i, e)| Ok((index.load(i)?, e.label.clone())))
        .collect()
}

fn stability_table(rows: &[StabilityReport]) -> Table {
    let mut table = Table::new(&["setting", "BLEU", "METEOR", "c.f.", "Δp", "n"]);
    for r in rows {
        let opt = |v: Option<f64>, d| v.map_or_else(|| "n/a".to_owned(), |v| report::fixed(v, d));
        table.push(vec![
            r.setting.clone(),
            report::fixed(r.bleu, 2),
            report::fixed(r.meteor, 3),
            opt(r.cf_rate, 2),
            opt(r.mean_delta_p, 3),
            r.n.to_string(),
        ]);
    }
    table
}

fn intra_rows(config: &RunConfig, pipeline: &neurotext::pipeline::Pipeline, images: &[Image]) -> Result<Vec<StabilityReport>> {
    config
        .args
        .noise
        .iter()
        .map(|&i| Ok(intra_set_stability(pipeline, images, NoiseSpec::new(i, config.args.seed)?)?))
        .collect()
}

fn inter_row(pipeline: &neurotext::pipeline::Pipeline, cohort: &[(Image, String)], seed: u64) -> Result<StabilityReport> {
    let mut by_class: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for (img, label) in cohort {
        let text = pipeline.explain(img)?.explanation.text;
        by_class.entry(label.clone()).or_default().push(text);
    }
    Ok(inter_set_stability(&by_class, seed)?)
}

/// Runs one experiment and writes `<name>.tsv` and `<name>.json` to the
/// output directory. Returns the written paths.
pub fn cmd_experiment(config: &RunConfig, which: Experiment, replay_path: Option<&Path>) -> Result<Vec<PathBuf>> {
    let net = config.load_model()?;
    let replay = if which.needs_replay() {
        let path = replay_path.ok_or_else(|| CliError::Config(format!("experiment {} needs --replay", which.name())))?;
        let replay = Replay::load(path)?;
        replay.validate(&net)?;
        Some(replay)
    } else {
        None
    };
    let name = which.name();
    let out = &config.args.out;
    let (table, summary) = match which {
        Experiment::Covering | Experiment::Highlighting => {
            let mode = if which == Experiment::Covering {
                MaskMode::Cover
            } else {
                MaskMode::Highlight
            };
            let (agg, outcomes) = covering(&net, replay.as_ref().expect("loaded"), mode)?;
            let mut table = Table::new(&["method", &format!("{name} c.f."), &format!("{name} Δp"), "n"]);
            let mut row = vec![METHOD.to_owned()];
            intervention_row(&mut row, &agg);
            row.push(agg.n.to_string());
            table.push(row);
            (table, json!({"experiment": name, "aggregate": agg, "outcomes": outcomes}))
        }
        Experiment::Masking => {
            let (all, series) = masking_replay(&net, replay.as_ref().expect("loaded"))?;
            let mut table = Table::new(&["masked", "c.f.", "Δp", "n"]);
            for p in &series {
                table.push(vec![
                    p.masked.to_string(),
                    report::fixed(p.cf_rate, 3),
                    report::fixed(p.mean_delta_p, 4),
                    p.n.to_string(),
                ]);
            }
            (table, json!({"experiment": name, "all_picks": all, "series": series}))
        }
        Experiment::Interventions => {
            let replay = replay.as_ref().expect("loaded");
            let (cover, _) = covering(&net, replay, MaskMode::Cover)?;
            let (high, _) = covering(&net, replay, MaskMode::Highlight)?;
            let (mask, series) = masking_replay(&net, replay)?;
            let mut table = Table::new(&[
                "method",
                "covering c.f.",
                "covering Δp",
                "highlighting c.f.",
                "highlighting Δp",
                "neuron masking c.f.",
                "neuron masking Δp",
            ]);
            let mut row = vec![METHOD.to_owned()];
            for agg in [&cover, &high, &mask] {
                intervention_row(&mut row, agg);
            }
            table.push(row);
            (
                table,
                json!({"experiment": name, "covering": cover, "highlighting": high, "neuron_masking": mask, "masking_series": series}),
            )
        }
        Experiment::Divergence => {
            let pipeline = config.pipeline(net)?;
            let summary = divergence(&pipeline, replay.as_ref().expect("loaded"))?;
            let mut table = Table::new(&["statistic", "value"]);
            table.push(vec!["mean".into(), report::fixed(summary.mean, 4)]);
            table.push(vec!["median".into(), report::fixed(summary.median, 4)]);
            table.push(vec!["n".into(), summary.fractions.len().to_string()]);
            (table, json!({"experiment": name, "k": config.args.k, "divergence": summary}))
        }
        Experiment::StabilityIntra | Experiment::StabilityInter | Experiment::Stability => {
            let cohort = cohort(config)?;
            let pipeline = config.pipeline(net)?;
            let images: Vec<Image> = cohort.iter().map(|(i, _)| i.clone()).collect();
            let mut rows = Vec::new();
            if which != Experiment::StabilityInter {
                rows.extend(intra_rows(config, &pipeline, &images)?);
            }
            if which != Experiment::StabilityIntra {
                rows.push(inter_row(&pipeline, &cohort, config.args.seed)?);
            }
            (stability_table(&rows), json!({"experiment": name, "rows": rows}))
        }
        Experiment::MaskingLrp => {
            let cohort = cohort(config)?;
            let images: Vec<Image> = cohort.into_iter().map(|(i, _)| i).collect();
            let layer = config.args.layer.clone().unwrap_or_else(|| net.last_conv_layer().to_owned());
            let study = lrp_masking_study(&net, &layer, &images, config.args.random_reps, config.args.seed)?;
            let mut table = Table::new(&["masked", "selection", "c.f.", "Δp", "n"]);
            table.push(vec![
                "1".into(),
                "random".into(),
                report::fixed(study.random.cf_rate, 3),
                report::fixed(study.random.mean_delta_p, 4),
                study.random.n.to_string(),
            ]);
            for p in &study.sweep {
                table.push(vec![
                    p.masked.to_string(),
                    "lrp".into(),
                    report::fixed(p.cf_rate, 3),
                    report::fixed(p.mean_delta_p, 4),
                    p.n.to_string(),
                ]);
            }
            (table, json!({"experiment": name, "study": study}))
        }
    };
    let tsv = write_file(out, &format!("{name}.tsv"), &table.to_tsv())?;
    let json_path = write_file(out, &format!("{name}.json"), &pretty(&summary))?;
    Ok(vec![tsv, json_path])
}

pub fn cmd_reliability_report(config: &RunConfig, answers_path: &Path) -> Result<Vec<PathBuf>> {
    let text = fs::read_to_string(answers_path).map_err(|e| CliError::io(answers_path, e))?;
    let summary = report::reliability_summary(&text)?;
    let tsv = write_file(&config.args.out, "reliability.tsv", &summary.table().to_tsv())?;
    let json_path = write_file(&config.args.out, "reliability.json", &pretty(&summary))?;
    Ok(vec![tsv, json_path])
}

pub fn cmd_validate_replay(config: &RunConfig, replay_path: &Path) -> Result<usize> {
    let net = config.load_model()?;
    let replay = Replay::load(replay_path)?;
    replay.validate(&net)?;
    Ok(replay.records.len())
}

/// Trains the reference model and writes its container.
pub fn cmd_export_model(train: &TrainConfig, path: &Path) -> Result<f64> {
    let net = train_reference(train, |s| {
        log::info!("epoch {:>2}: loss {:.4}, train accuracy {:.3}", s.epoch, s.loss, s.train_accuracy)
    })?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    net.save(path)?;
    Ok(net.metadata()["test_accuracy"].as_f64().unwrap_or(f64::NAN))
}

/// Writes a fixture dataset under `<out>/dataset` and a replay file whose
/// rectangles are the drawn objects' boxes and whose picks are the top-5
/// LRP neurons of each image.
pub fn cmd_make_fixtures(config: &RunConfig, per_class: usize, data_seed: u64) -> Result<Vec<PathBuf>> {
    let net = config.load_model()?;
    let layer = config.args.layer.clone().unwrap_or_else(|| net.last_conv_layer().to_owned());
    let root = config.args.out.join("dataset");
    synth::write_dataset(&root, data_seed, Split::Fixture, per_class)?;
    let mut lines = String::new();
    for (c, class) in synth::CLASSES.iter().enumerate() {
        for i in 0..per_class {
            let sample = synth::sample(data_seed, Split::Fixture, c, i);
            let (pred, acts) = net.forward(&sample.image, &NeuronMask::empty())?;
            let rel = lrp_backward(&net, &acts, pred.predicted_index)?;
            let picks = top_k_neurons(&filter_relevance(&rel, &layer)?, 5)?;
            let bbox: RectMask = sample.bbox;
            let record = ReplayRecord {
                image: PathBuf::from("dataset").join(class).join(synth::file_name(i)),
                cover: vec![bbox],
                highlight: vec![bbox],
                picks,
            };
            lines.push_str(&serde_json::to_string(&record).expect("record serializes"));
            lines.push('\n');
        }
    }
    let replay = write_file(&config.args.out, "replay.jsonl", &lines)?;
    Ok(vec![root, replay])
}

/// Exemplar listing for every filter of the layer, for annotation work.
pub fn cmd_exemplars(config: &RunConfig) -> Result<PathBuf> {
    let net: Network = config.load_model()?;
    let layer = config.args.layer.clone().unwrap_or_else(|| net.last_conv_layer().to_owned());
    let dataset = config.dataset()?;
    let sets = build_layer_exemplars(&net, &dataset, &layer, config.args.m)?;
    let mut table = Table::new(&["layer", "filter_index", "rank", "peak", "label", "image"]);
    for set in &sets {
        for (rank, e) in set.exemplars.iter().enumerate() {
            table.push(vec![
                layer.clone(),
                set.neuron.filter_index.to_string(),
                (rank + 1).to_string(),
                report::fixed(e.peak as f64, 4),
                e.label.clone(),
                e.image.display().to_string(),
            ]);
        }
    }
    write_file(&config.args.out, "exemplars.tsv", &table.to_tsv())
}
