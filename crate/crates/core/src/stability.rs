//! Noise perturbation and the BLEU/METEOR text-overlap metrics.

use std::collections::{BTreeMap, HashMap};
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rayon::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rust_stemmers::{Algorithm, Stemmer};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::interventions::{AggregateResult, InterventionOutcome};
use crate::pipeline::Pipeline;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct NoiseSpec {
    pub intensity: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(intensity: f64, seed: u64) -> Result<Self> {
        if !(intensity >= 0.0 && intensity.is_finite()) {
            return Err(Error::Input(format!("noise intensity must be a finite value >= 0, got {intensity}")));
        }
        Ok(NoiseSpec { intensity, seed })
    }

    /// Spec for the `index`-th image of a cohort.
    pub fn for_index(self, index: usize) -> NoiseSpec {
        NoiseSpec {
            intensity: self.intensity,
            seed: self.seed.wrapping_add(index as u64),
        }
    }
}

pub fn clip(x: f32) -> f32 {
    if x < 0.0 {
        0.0
    } else if x > 1.0 {
        1.0
    } else {
        x
    }
}

/// Adds `intensity * N(0, 1)` to every pixel value (one draw per value in
/// height, width, channel order) and clips to [0, 1].
pub fn perturb(img: &Image, spec: NoiseSpec) -> Image {
    if spec.intensity == 0.0 {
        return img.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    img.map_clamped(|_, v| {
        let z: f64 = StandardNormal.sample(&mut rng);
        clip((v as f64 + spec.intensity * z) as f32)
    })
}

/// Lowercases, removes punctuation, splits on whitespace.
pub fn tokenize(text: &str) -> Vec<String> {
    let cleaned: String = text
        .chars()
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .flat_map(char::to_lowercase)
        .collect();
    cleaned.split_whitespace().map(str::to_owned).collect()
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for gram in tokens.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

pub const BLEU_MAX_N: usize = 4;

/// Corpus BLEU over `(candidate, references)` pairs, scaled to [0, 100].
///
/// Clipped n-gram counts are pooled across the corpus. Precisions for
/// n >= 2 use add-one smoothing; the unigram precision is unsmoothed, so a
/// corpus without any unigram match scores 0. The brevity penalty uses, per
/// sentence, the reference length closest to the candidate length (shorter
/// wins ties).
pub fn corpus_bleu<S: AsRef<str>>(pairs: &[(S, Vec<S>)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Input("BLEU needs at least one sentence pair".into()));
    }
    let mut matches = [0usize; BLEU_MAX_N];
    let mut totals = [0usize; BLEU_MAX_N];
    let mut cand_len = 0usize;
    let mut ref_len = 0usize;
    for (candidate, references) in pairs {
        if references.is_empty() {
            return Err(Error::Input("BLEU needs at least one reference".into()));
        }
        let cand = tokenize(candidate.as_ref());
        if cand.is_empty() {
            return Err(Error::Input("BLEU candidate has no tokens".into()));
        }
        let refs: Vec<Vec<String>> = references.iter().map(|r| tokenize(r.as_ref())).collect();
        cand_len += cand.len();
        ref_len += refs
            .iter()
            .map(|r| r.len())
            .min_by_key(|&l| (l.abs_diff(cand.len()), l))
            .expect("non-empty");
        for n in 1..=BLEU_MAX_N {
            let cand_counts = ngram_counts(&cand, n);
            let ref_counts: Vec<_> = refs.iter().map(|r| ngram_counts(r, n)).collect();
            for (gram, &count) in &cand_counts {
                let max_ref = ref_counts.iter().map(|rc| rc.get(gram).copied().unwrap_or(0)).max().unwrap_or(0);
                matches[n - 1] += count.min(max_ref);
            }
            totals[n - 1] += cand.len().saturating_sub(n - 1);
        }
    }
    if matches[0] == 0 {
        return Ok(0.0);
    }
    let mut log_sum = (matches[0] as f64 / totals[0] as f64).ln();
    for n in 1..BLEU_MAX_N {
        log_sum += ((matches[n] + 1) as f64 / (totals[n] + 1) as f64).ln();
    }
    let brevity = if cand_len >= ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / cand_len as f64).exp()
    };
    Ok(100.0 * brevity * (log_sum / BLEU_MAX_N as f64).exp())
}

/// Sentence BLEU: corpus BLEU over a single pair.
pub fn bleu<S: AsRef<str>>(candidate: &str, references: &[S]) -> Result<f64> {
    let refs: Vec<&str> = references.iter().map(AsRef::as_ref).collect();
    corpus_bleu(&[(candidate, refs)])
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MeteorParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for MeteorParams {
    fn default() -> Self {
        MeteorParams {
            alpha: 0.9,
            beta: 3.0,
            gamma: 0.5,
        }
    }
}

fn stemmer() -> &'static Stemmer {
    static STEMMER: OnceLock<Stemmer> = OnceLock::new();
    STEMMER.get_or_init(|| Stemmer::create(Algorithm::English))
}

/// Two tokens match if they are equal or share an English Snowball stem.
pub fn tokens_match(a: &str, b: &str) -> bool {
    a == b || stemmer().stem(a) == stemmer().stem(b)
}

/// One-to-one alignment as `(candidate index, reference index)` pairs,
/// sorted by candidate index.
pub type Alignment = Vec<(usize, usize)>;

/// Number of chunks: maximal runs of matches adjacent in both strings.
pub fn count_chunks(alignment: &[(usize, usize)]) -> usize {
    let mut chunks = 0;
    for (i, &(c, r)) in alignment.iter().enumerate() {
        let continues = i > 0 && {
            let (pc, pr) = alignment[i - 1];
            c == pc + 1 && r == pr + 1
        };
        if !continues {
            chunks += 1;
        }
    }
    chunks
}

const ALIGN_NODE_BUDGET: usize = 200_000;

struct AlignSearch<'a> {
    options: &'a [Vec<usize>],
    used: Vec<bool>,
    current: Alignment,
    best: Alignment,
    best_key: (usize, usize),
    nodes: usize,
}

impl AlignSearch<'_> {
    fn better(m: usize, ch: usize, key: (usize, usize)) -> bool {
        m > key.0 || (m == key.0 && ch < key.1)
    }

    fn upper_bound(&self, from: usize) -> usize {
        self.options[from..]
            .iter()
            .filter(|opts| opts.iter().any(|&j| !self.used[j]))
            .count()
    }

    fn run(&mut self, i: usize, chunks: usize) {
        self.nodes += 1;
        let m = self.current.len();
        if i == self.options.len() {
            if Self::better(m, chunks, self.best_key) {
                self.best_key = (m, chunks);
                self.best = self.current.clone();
            }
            return;
        }
        let bound = m + self.upper_bound(i);
        if bound < self.best_key.0 || (bound == self.best_key.0 && chunks >= self.best_key.1) {
            return;
        }
        if self.nodes > ALIGN_NODE_BUDGET && self.best_key.0 > 0 {
            return;
        }
        // Prefer extending the open chunk, then other matches, then a gap.
        let last = self.current.last().copied();
        let mut order: Vec<usize> = self.options[i].iter().copied().filter(|&j| !self.used[j]).collect();
        if let Some((pc, pr)) = last {
            if pc + 1 == i {
                if let Some(pos) = order.iter().position(|&j| j == pr + 1) {
                    order[..=pos].rotate_right(1);
                }
            }
        }
        for j in order {
            let extends = matches!(last, Some((pc, pr)) if pc + 1 == i && pr + 1 == j);
            self.used[j] = true;
            self.current.push((i, j));
            self.run(i + 1, chunks + usize::from(!extends));
            self.current.pop();
            self.used[j] = false;
        }
        self.run(i + 1, chunks);
    }
}

/// Alignment with the most matches, then the fewest chunks. Exact for
/// short inputs; for long ones the search stops after a fixed node budget
/// and returns the best alignment found.
pub fn align(candidate: &[String], reference: &[String]) -> Alignment {
    let options: Vec<Vec<usize>> = candidate
        .iter()
        .map(|c| (0..reference.len()).filter(|&j| tokens_match(c, &reference[j])).collect())
        .collect();
    let mut search = AlignSearch {
        options: &options,
        used: vec![false; reference.len()],
        current: Vec::new(),
        best: Vec::new(),
        best_key: (0, usize::MAX),
        nodes: 0,
    };
    search.run(0, 0);
    search.best
}

/// METEOR score from alignment statistics.
pub fn meteor_from_counts(matches: usize, chunks: usize, cand_len: usize, ref_len: usize, params: MeteorParams) -> f64 {
    if matches == 0 {
        return 0.0;
    }
    let precision = matches as f64 / cand_len as f64;
    let recall = matches as f64 / ref_len as f64;
    let fmean = precision * recall / (params.alpha * precision + (1.0 - params.alpha) * recall);
    let fragmentation = if matches <= 1 {
        0.0
    } else {
        (chunks - 1) as f64 / (matches - 1) as f64
    };
    fmean * (1.0 - params.gamma * fragmentation.powf(params.beta))
}

pub fn meteor_with<S: AsRef<str>>(candidate: &str, references: &[S], params: MeteorParams) -> Result<f64> {
    if references.is_empty() {
        return Err(Error::Input("METEOR needs at least one reference".into()));
    }
    let cand = tokenize(candidate);
    if cand.is_empty() {
        return Err(Error::Input("METEOR candidate has no tokens".into()));
    }
    let mut best = 0.0f64;
    for reference in references {
        let refs = tokenize(reference.as_ref());
        if refs.is_empty() {
            continue;
        }
        let alignment = align(&cand, &refs);
        let score = meteor_from_counts(alignment.len(), count_chunks(&alignment), cand.len(), refs.len(), params);
        best = best.max(score);
    }
    Ok(best)
}

/// METEOR with exact and stem matching, best over the references.
pub fn meteor<S: AsRef<str>>(candidate: &str, references: &[S]) -> Result<f64> {
    meteor_with(candidate, references, MeteorParams::default())
}

/// One row of a stability table. `cf_rate` and `mean_delta_p` are absent
/// for inter-set comparisons.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StabilityReport {
    pub setting: String,
    pub bleu: f64,
    pub meteor: f64,
    pub cf_rate: Option<f64>,
    pub mean_delta_p: Option<f64>,
    pub n: usize,
}

/// Explanation of each original image against the explanation of its
/// perturbed copy. BLEU is corpus-level over all pairs, METEOR the mean of
/// sentence scores; class flips and probability drops come from the
/// classifier on the perturbed inputs. Image `j` uses `spec.for_index(j)`.
pub fn intra_set_stability(pipeline: &Pipeline, images: &[Image], spec: NoiseSpec) -> Result<StabilityReport> {
    if images.is_empty() {
        return Err(Error::Input("intra-set stability needs at least one image".into()));
    }
    let rows = images
        .par_iter()
        .enumerate()
        .map(|(j, img)| {
            let original = pipeline.explain(img)?;
            let noisy = pipeline.explain(&perturb(img, spec.for_index(j)))?;
            let outcome = InterventionOutcome::compare(&original.analysis.prediction, &noisy.analysis.prediction);
            let met = meteor(&noisy.explanation.text, &[&original.explanation.text])?;
            Ok((noisy.explanation.text, original.explanation.text, met, outcome))
        })
        .collect::<Result<Vec<_>>>()?;
    let pairs: Vec<(&str, Vec<&str>)> = rows.iter().map(|(c, r, _, _)| (c.as_str(), vec![r.as_str()])).collect();
    let outcomes: Vec<InterventionOutcome> = rows.iter().map(|r| r.3).collect();
    let agg = AggregateResult::from_outcomes(&outcomes)?;
    Ok(StabilityReport {
        setting: format!("intra-set (noise {})", spec.intensity),
        bleu: corpus_bleu(&pairs)?,
        meteor: rows.iter().map(|r| r.2).sum::<f64>() / rows.len() as f64,
        cf_rate: Some(agg.cf_rate),
        mean_delta_p: Some(agg.mean_delta_p),
        n: rows.len(),
    })
}

/// Each explanation scored against one explanation drawn from a uniformly
/// random other class (then a uniformly random member of it), seeded.
pub fn inter_set_stability(explanations_by_class: &BTreeMap<String, Vec<String>>, seed: u64) -> Result<StabilityReport> {
    let classes: Vec<(&String, &Vec<String>)> = explanations_by_class.iter().filter(|(_, v)| !v.is_empty()).collect();
    if classes.len() < 2 {
        return Err(Error::Input("inter-set stability needs explanations from at least two classes".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs: Vec<(&str, Vec<&str>)> = Vec::new();
    for (ci, (_, texts)) in classes.iter().enumerate() {
        for text in texts.iter() {
            let mut other = rng.random_range(0..classes.len() - 1);
            if other >= ci {
                other += 1;
            }
            let pool = classes[other].1;
            let reference = &pool[rng.random_range(0..pool.len())];
            pairs.push((text.as_str(), vec![reference.as_str()]));
        }
    }
    let meteor_sum = pairs
        .iter()
        .map(|(c, r)| meteor(c, r))
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .sum::<f64>();
    Ok(StabilityReport {
        setting: "inter-set".into(),
        bleu: corpus_bleu(&pairs)?,
        meteor: meteor_sum / pairs.len() as f64,
        cf_rate: None,
        mean_delta_p: None,
        n: pairs.len(),
    })
}
