//! Faithfulness interventions: image covering and highlighting, neuron
//! masking, and pipeline divergence.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::meaning::MeaningRepresentation;
use crate::net::{ActivationStore, Network, NeuronId, NeuronMask, Prediction};

pub const WHITE: f32 = 1.0;
pub const MAX_COVER_FRACTION: f64 = 0.5;
pub const MAX_SWEEP_PICKS: usize = 5;

/// Axis-aligned rectangle in pixel coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RectMask {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl RectMask {
    pub fn new(x: usize, y: usize, w: usize, h: usize) -> Result<Self> {
        if w == 0 || h == 0 {
            return Err(Error::Input(format!("rectangle {w}x{h} has zero extent")));
        }
        Ok(RectMask { x, y, w, h })
    }

    pub fn check_bounds(&self, height: usize, width: usize) -> Result<()> {
        if self.w == 0 || self.h == 0 || self.x + self.w > width || self.y + self.h > height {
            return Err(Error::Input(format!(
                "rectangle at ({}, {}) of size {}x{} does not fit a {width}x{height} image",
                self.x, self.y, self.w, self.h
            )));
        }
        Ok(())
    }

    pub fn contains(&self, y: usize, x: usize) -> bool {
        (self.x..self.x + self.w).contains(&x) && (self.y..self.y + self.h).contains(&y)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskMode {
    /// Whiten the rectangles.
    Cover,
    /// Whiten everything outside the rectangles.
    Highlight,
}

fn inside_mask(masks: &[RectMask], height: usize, width: usize) -> Vec<bool> {
    let mut inside = vec![false; height * width];
    for m in masks {
        for y in m.y..m.y + m.h {
            inside[y * width + m.x..y * width + m.x + m.w].fill(true);
        }
    }
    inside
}

/// Fraction of the image covered by the union of the rectangles.
pub fn union_fraction(masks: &[RectMask], height: usize, width: usize) -> Result<f64> {
    for m in masks {
        m.check_bounds(height, width)?;
    }
    let covered = inside_mask(masks, height, width).iter().filter(|&&b| b).count();
    Ok(covered as f64 / (height * width) as f64)
}

pub fn apply_rect_masks(img: &Image, masks: &[RectMask], mode: MaskMode) -> Result<Image> {
    let (h, w) = (img.height(), img.width());
    let fraction = union_fraction(masks, h, w)?;
    if mode == MaskMode::Cover && fraction > MAX_COVER_FRACTION {
        return Err(Error::Constraint {
            percent: fraction * 100.0,
        });
    }
    let inside = inside_mask(masks, h, w);
    let whiten_inside = mode == MaskMode::Cover;
    let mut out = img.clone();
    for y in 0..h {
        for x in 0..w {
            if inside[y * w + x] == whiten_inside {
                out.fill_pixel(y, x, WHITE);
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct InterventionOutcome {
    pub class_flip: bool,
    /// Probability of the originally predicted class, before minus after.
    pub delta_p: f64,
}

impl InterventionOutcome {
    pub fn compare(original: &Prediction, modified: &Prediction) -> Self {
        let c = original.predicted_index;
        InterventionOutcome {
            class_flip: modified.predicted_index != c,
            delta_p: original.probabilities[c] as f64 - modified.probabilities[c] as f64,
        }
    }
}

pub fn run_intervention(net: &Network, original: &Prediction, modified_img: &Image) -> Result<InterventionOutcome> {
    let (modified, _) = net.forward(modified_img, &NeuronMask::empty())?;
    Ok(InterventionOutcome::compare(original, &modified))
}

fn check_picks(net: &Network, picks: &[NeuronId]) -> Result<()> {
    if picks.is_empty() {
        return Err(Error::Input("neuron picks are empty".into()));
    }
    if picks.len() > MAX_SWEEP_PICKS {
        return Err(Error::Input(format!(
            "{} neuron picks given, at most {MAX_SWEEP_PICKS} allowed",
            picks.len()
        )));
    }
    let mut seen = HashSet::new();
    for p in picks {
        net.validate_neuron(p)?;
        if !seen.insert(p) {
            return Err(Error::Input(format!("duplicate neuron pick {p}")));
        }
    }
    Ok(())
}

/// Cumulative masking: outcome `j` masks the first `j + 1` picks.
pub fn neuron_masking_sweep(net: &Network, img: &Image, picks: &[NeuronId]) -> Result<Vec<InterventionOutcome>> {
    check_picks(net, picks)?;
    let (original, acts) = net.forward(img, &NeuronMask::empty())?;
    masking_sweep_from(net, &original, &acts, picks)
}

/// Sweep reusing an existing unmasked forward pass.
pub fn masking_sweep_from(
    net: &Network,
    original: &Prediction,
    acts: &ActivationStore,
    picks: &[NeuronId],
) -> Result<Vec<InterventionOutcome>> {
    check_picks(net, picks)?;
    let mut mask = NeuronMask::empty();
    picks
        .iter()
        .map(|p| {
            mask.insert(p.clone());
            let masked = net.rerun_masked(acts, &mask)?;
            Ok(InterventionOutcome::compare(original, &masked))
        })
        .collect()
}

/// Share of `a`'s neurons that do not appear in `b`.
pub fn pipeline_divergence(a: &MeaningRepresentation, b: &MeaningRepresentation) -> Result<f64> {
    let set_a: HashSet<&NeuronId> = a.neuron_ids().collect();
    if set_a.is_empty() {
        return Err(Error::Input("first MR has no neurons".into()));
    }
    let set_b: HashSet<&NeuronId> = b.neuron_ids().collect();
    Ok(set_a.difference(&set_b).count() as f64 / set_a.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct AggregateResult {
    pub cf_rate: f64,
    pub mean_delta_p: f64,
    pub n: usize,
}

impl AggregateResult {
    pub fn from_outcomes(outcomes: &[InterventionOutcome]) -> Result<Self> {
        if outcomes.is_empty() {
            return Err(Error::Input("no intervention outcomes to aggregate".into()));
        }
        let n = outcomes.len();
        Ok(AggregateResult {
            cf_rate: outcomes.iter().filter(|o| o.class_flip).count() as f64 / n as f64,
            mean_delta_p: outcomes.iter().map(|o| o.delta_p).sum::<f64>() / n as f64,
            n,
        })
    }
}

/// One replayed human annotation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReplayRecord {
    /// Relative paths resolve against the replay file's directory.
    pub image: PathBuf,
    #[serde(default)]
    pub cover: Vec<RectMask>,
    #[serde(default)]
    pub highlight: Vec<RectMask>,
    #[serde(default)]
    pub picks: Vec<NeuronId>,
}

/// A replay file: one JSON object per line, blank lines ignored.
#[derive(Clone, Debug, PartialEq)]
pub struct Replay {
    pub base_dir: PathBuf,
    /// `(line number, record)`.
    pub records: Vec<(usize, ReplayRecord)>,
}

impl Replay {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let de = &mut serde_json::Deserializer::from_str(line);
            let record: ReplayRecord = serde_path_to_error::deserialize(de).map_err(|e| Error::Validation {
                record: i + 1,
                message: format!("at '{}': {}", e.path(), e.inner()),
            })?;
            records.push((i + 1, record));
        }
        if records.is_empty() {
            return Err(Error::Validation {
                record: 0,
                message: "replay file has no records".into(),
            });
        }
        Ok(Replay {
            base_dir: base_dir.to_owned(),
            records,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Replay::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn image_path(&self, record: &ReplayRecord) -> PathBuf {
        if record.image.is_absolute() {
            record.image.clone()
        } else {
            self.base_dir.join(&record.image)
        }
    }

    /// Checks every record against the network: image loads with the right
    /// shape, rectangles fit, covers stay within half the image, picks are
    /// valid, unique and at most five.
    pub fn validate(&self, net: &Network) -> Result<()> {
        for (line, record) in &self.records {
            self.validate_record(net, record).map_err(|e| Error::Validation {
                record: *line,
                message: e.to_string(),
            })?;
        }
        Ok(())
    }

    fn validate_record(&self, net: &Network, record: &ReplayRecord) -> Result<()> {
        let img = Image::load(&self.image_path(record))?;
        let shape = net.input_shape();
        if (img.height(), img.width(), img.channels()) != (shape.height, shape.width, shape.channels) {
            return Err(Error::Input(format!(
                "image is {}x{}x{}, network expects {}x{}x{}",
                img.height(),
                img.width(),
                img.channels(),
                shape.height,
                shape.width,
                shape.channels
            )));
        }
        let fraction = union_fraction(&record.cover, img.height(), img.width())?;
        if fraction > MAX_COVER_FRACTION {
            return Err(Error::Constraint {
                percent: fraction * 100.0,
            });
        }
        union_fraction(&record.highlight, img.height(), img.width())?;
        if !record.picks.is_empty() {
            check_picks(net, &record.picks)?;
        }
        Ok(())
    }
}
