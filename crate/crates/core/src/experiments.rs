//! Cohort-level faithfulness experiments built on the intervention
//! primitives.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::interventions::{
    apply_rect_masks, masking_sweep_from, pipeline_divergence, run_intervention, AggregateResult, InterventionOutcome,
    MaskMode, Replay,
};
use crate::net::{Network, NeuronId, NeuronMask};
use crate::pipeline::Pipeline;
use crate::relevance::{filter_relevance, lrp_backward, top_k_neurons};

fn record_error(line: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::Validation { .. } => e,
        other => Error::Validation {
            record: line,
            message: other.to_string(),
        },
    }
}

/// Covering or highlighting replayed rectangles, one outcome per record.
pub fn covering(net: &Network, replay: &Replay, mode: MaskMode) -> Result<(AggregateResult, Vec<InterventionOutcome>)> {
    let outcomes = replay
        .records
        .par_iter()
        .map(|(line, record)| {
            let rects = match mode {
                MaskMode::Cover => &record.cover,
                MaskMode::Highlight => &record.highlight,
            };
            let img = Image::load(&replay.image_path(record)).map_err(record_error(*line))?;
            let (original, _) = net.forward(&img, &NeuronMask::empty()).map_err(record_error(*line))?;
            let modified = apply_rect_masks(&img, rects, mode).map_err(record_error(*line))?;
            run_intervention(net, &original, &modified).map_err(record_error(*line))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((AggregateResult::from_outcomes(&outcomes)?, outcomes))
}

/// Point `j` (1-based) of a masking series aggregates all records with at
/// least `j` picks, masking their first `j`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MaskingPoint {
    pub masked: usize,
    pub cf_rate: f64,
    pub mean_delta_p: f64,
    pub n: usize,
}

fn series(sweeps: &[Vec<InterventionOutcome>]) -> Result<Vec<MaskingPoint>> {
    let longest = sweeps.iter().map(Vec::len).max().unwrap_or(0);
    (0..longest)
        .map(|j| {
            let column: Vec<InterventionOutcome> = sweeps.iter().filter_map(|s| s.get(j).copied()).collect();
            let agg = AggregateResult::from_outcomes(&column)?;
            Ok(MaskingPoint {
                masked: j + 1,
                cf_rate: agg.cf_rate,
                mean_delta_p: agg.mean_delta_p,
                n: agg.n,
            })
        })
        .collect()
}

/// Cumulative masking of the replayed neuron picks. Returns the aggregate
/// with every record's full pick list masked, and the per-count series.
pub fn masking_replay(net: &Network, replay: &Replay) -> Result<(AggregateResult, Vec<MaskingPoint>)> {
    let sweeps = replay
        .records
        .par_iter()
        .map(|(line, record)| {
            if record.picks.is_empty() {
                return Err(Error::Validation {
                    record: *line,
                    message: "record has no neuron picks".into(),
                });
            }
            let img = Image::load(&replay.image_path(record)).map_err(record_error(*line))?;
            let (original, acts) = net.forward(&img, &NeuronMask::empty()).map_err(record_error(*line))?;
            masking_sweep_from(net, &original, &acts, &record.picks).map_err(record_error(*line))
        })
        .collect::<Result<Vec<_>>>()?;
    let finals: Vec<InterventionOutcome> = sweeps.iter().filter_map(|s| s.last().copied()).collect();
    Ok((AggregateResult::from_outcomes(&finals)?, series(&sweeps)?))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DivergenceSummary {
    pub fractions: Vec<f64>,
    pub mean: f64,
    pub median: f64,
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Re-runs the pipeline on each covered image and measures the share of
/// MR neurons that changed.
pub fn divergence(pipeline: &Pipeline, replay: &Replay) -> Result<DivergenceSummary> {
    let fractions = replay
        .records
        .par_iter()
        .map(|(line, record)| {
            let img = Image::load(&replay.image_path(record)).map_err(record_error(*line))?;
            let covered = apply_rect_masks(&img, &record.cover, MaskMode::Cover).map_err(record_error(*line))?;
            let a = pipeline.analyze(&img).map_err(record_error(*line))?;
            let b = pipeline.analyze(&covered).map_err(record_error(*line))?;
            pipeline_divergence(&a.mr, &b.mr)
        })
        .collect::<Result<Vec<f64>>>()?;
    if fractions.is_empty() {
        return Err(Error::Input("no records for the divergence experiment".into()));
    }
    Ok(DivergenceSummary {
        mean: fractions.iter().sum::<f64>() / fractions.len() as f64,
        median: median(&fractions),
        fractions,
    })
}

/// Top-1 LRP neuron masking against random single-neuron masking, plus the
/// cumulative top-1..5 sweep, over one cohort.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LrpMaskingStudy {
    pub layer: String,
    pub images: usize,
    pub random_repetitions: usize,
    pub top1: AggregateResult,
    pub random: AggregateResult,
    /// `top1.mean_delta_p - random.mean_delta_p`.
    pub margin: f64,
    pub sweep: Vec<MaskingPoint>,
}

pub const SWEEP_DEPTH: usize = 5;

pub fn lrp_masking_study(
    net: &Network,
    layer: &str,
    images: &[Image],
    random_repetitions: usize,
    seed: u64,
) -> Result<LrpMaskingStudy> {
    if images.is_empty() {
        return Err(Error::Input("masking study needs at least one image".into()));
    }
    let neurons = net.list_neurons(layer)?;
    let per_image = images
        .par_iter()
        .enumerate()
        .map(|(i, img)| {
            let (original, acts) = net.forward(img, &NeuronMask::empty())?;
            let rel = lrp_backward(net, &acts, original.predicted_index)?;
            let scores = filter_relevance(&rel, layer)?;
            let top = top_k_neurons(&scores, SWEEP_DEPTH)?;
            let sweep = masking_sweep_from(net, &original, &acts, &top)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let random = (0..random_repetitions)
                .map(|_| {
                    let pick: &NeuronId = &neurons[rng.random_range(0..neurons.len())];
                    let mask: NeuronMask = std::iter::once(pick.clone()).collect();
                    Ok(InterventionOutcome::compare(&original, &net.rerun_masked(&acts, &mask)?))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((sweep, random))
        })
        .collect::<Result<Vec<_>>>()?;

    let sweeps: Vec<Vec<InterventionOutcome>> = per_image.iter().map(|(s, _)| s.clone()).collect();
    let top1: Vec<InterventionOutcome> = sweeps.iter().map(|s| s[0]).collect();
    let random: Vec<InterventionOutcome> = per_image.iter().flat_map(|(_, r)| r.iter().copied()).collect();
    let top1 = AggregateResult::from_outcomes(&top1)?;
    let random = AggregateResult::from_outcomes(&random)?;
    Ok(LrpMaskingStudy {
        layer: layer.to_owned(),
        images: images.len(),
        random_repetitions,
        margin: top1.mean_delta_p - random.mean_delta_p,
        top1,
        random,
        sweep: series(&sweeps)?,
    })
}
