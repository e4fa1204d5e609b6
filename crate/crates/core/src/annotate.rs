//! Neuron descriptions: exemplar extraction and description providers.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::cache::FileCache;
use crate::dataset::DatasetIndex;
use crate::error::{Error, Result};
use crate::http::HttpEndpoint;
use crate::net::{ActivationMap, Network, NeuronId, NeuronMask};

pub const DEFAULT_EXEMPLARS: usize = 15;
pub const MAX_DESCRIPTION_WORDS: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DescriptionSource {
    Table,
    External,
    ExemplarFallback,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Description {
    pub text: String,
    pub source: DescriptionSource,
}

impl Description {
    /// A single-line phrase of at most ten words.
    pub fn new(text: impl Into<String>, source: DescriptionSource) -> Result<Self> {
        let text = text.into().trim().to_owned();
        if text.is_empty() {
            return Err(Error::Annotation("description is empty".into()));
        }
        if text.contains(['\n', '\r']) {
            return Err(Error::Annotation(format!("description {text:?} spans several lines")));
        }
        let words = text.split_whitespace().count();
        if words > MAX_DESCRIPTION_WORDS {
            return Err(Error::Annotation(format!(
                "description {text:?} has {words} words (limit {MAX_DESCRIPTION_WORDS})"
            )));
        }
        Ok(Description { text, source })
    }
}

/// How an activation map is reduced to one exemplar score.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ExemplarScore {
    #[default]
    Max,
    Mean,
}

impl ExemplarScore {
    pub fn apply(self, map: &ActivationMap) -> f32 {
        match self {
            ExemplarScore::Max => map.max(),
            ExemplarScore::Mean => map.values.iter().sum::<f32>() / map.values.len() as f32,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Exemplar {
    /// Position in the dataset index.
    pub index: usize,
    pub image: PathBuf,
    pub label: String,
    pub peak: f32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExemplarSet {
    pub neuron: NeuronId,
    /// Descending by peak; ties by ascending dataset index.
    pub exemplars: Vec<Exemplar>,
    pub m: usize,
}

impl ExemplarSet {
    pub fn empty(neuron: NeuronId) -> Self {
        ExemplarSet {
            neuron,
            exemplars: Vec::new(),
            m: 0,
        }
    }

    /// Most frequent exemplar label; ties go to the label seen first.
    pub fn majority_label(&self) -> Option<&str> {
        let mut counts: Vec<(&str, usize)> = Vec::new();
        for e in &self.exemplars {
            match counts.iter_mut().find(|(l, _)| *l == e.label) {
                Some((_, n)) => *n += 1,
                None => counts.push((&e.label, 1)),
            }
        }
        let best = counts.iter().map(|(_, n)| *n).max()?;
        counts.iter().find(|(_, n)| *n == best).map(|(l, _)| *l)
    }
}

fn rank(a: &(f32, usize), b: &(f32, usize)) -> Ordering {
    b.0.total_cmp(&a.0).then(a.1.cmp(&b.1))
}

/// Top-`m` dataset images by peak activation of `neuron`.
pub fn build_exemplars(net: &Network, dataset: &DatasetIndex, neuron: &NeuronId, m: usize) -> Result<ExemplarSet> {
    net.validate_neuron(neuron)?;
    let mut sets = build_layer_exemplars_with(net, dataset, &neuron.layer, m, ExemplarScore::Max)?;
    Ok(sets.swap_remove(neuron.filter_index))
}

/// Exemplar sets for every filter of `layer`, from one forward pass per
/// image.
pub fn build_layer_exemplars(net: &Network, dataset: &DatasetIndex, layer: &str, m: usize) -> Result<Vec<ExemplarSet>> {
    build_layer_exemplars_with(net, dataset, layer, m, ExemplarScore::Max)
}

pub fn build_layer_exemplars_with(
    net: &Network,
    dataset: &DatasetIndex,
    layer: &str,
    m: usize,
    score: ExemplarScore,
) -> Result<Vec<ExemplarSet>> {
    if dataset.is_empty() {
        return Err(Error::Input("exemplar dataset is empty".into()));
    }
    if m == 0 {
        return Err(Error::Input("exemplar count m must be positive".into()));
    }
    let neurons = net.list_neurons(layer)?;
    let empty = NeuronMask::empty();
    let peaks: Vec<Vec<f32>> = (0..dataset.len())
        .into_par_iter()
        .map(|i| {
            let img = dataset.load(i)?;
            let (_, acts) = net.forward(&img, &empty)?;
            neurons
                .iter()
                .map(|n| acts.neuron_map(n).map(|map| score.apply(&map)))
                .collect::<Result<Vec<f32>>>()
        })
        .collect::<Result<_>>()?;

    Ok(neurons
        .into_iter()
        .enumerate()
        .map(|(f, neuron)| {
            let mut ranked: Vec<(f32, usize)> = peaks.iter().enumerate().map(|(i, p)| (p[f], i)).collect();
            ranked.sort_by(rank);
            ranked.truncate(m);
            let exemplars = ranked
                .into_iter()
                .map(|(peak, index)| {
                    let entry = dataset.entry(index);
                    Exemplar {
                        index,
                        image: entry.path.clone(),
                        label: entry.label.clone(),
                        peak,
                    }
                })
                .collect();
            ExemplarSet { neuron, exemplars, m }
        })
        .collect())
}

/// Maps a neuron and its exemplars to a short phrase.
pub trait AnnotationProvider: Send + Sync {
    fn describe(&self, neuron: &NeuronId, exemplars: &ExemplarSet) -> Result<Description>;

    /// Whether `describe` would look at the exemplars for this neuron.
    /// Lets callers skip the exemplar scan when it is not needed.
    fn needs_exemplars(&self, _neuron: &NeuronId) -> bool {
        true
    }
}

pub fn describe(provider: &dyn AnnotationProvider, neuron: &NeuronId, exemplars: &ExemplarSet) -> Result<Description> {
    provider.describe(neuron, exemplars)
}

/// Static `(layer, filter_index) -> phrase` lookup.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AnnotationTable {
    entries: BTreeMap<NeuronId, String>,
}

impl AnnotationTable {
    /// Parses `layer<TAB>filter_index<TAB>phrase` lines. Blank lines and
    /// lines starting with `#` are skipped.
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line_no = n + 1;
            let at = || format!("{origin}:{line_no}");
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let [layer, index, phrase] = fields[..] else {
                return Err(Error::format(at(), format!("expected 3 tab-separated fields, found {}", fields.len())));
            };
            let index: usize = index
                .trim()
                .parse()
                .map_err(|_| Error::format(at(), format!("filter index {index:?} is not a non-negative integer")))?;
            let phrase = Description::new(phrase, DescriptionSource::Table).map_err(|e| Error::format(at(), e.to_string()))?;
            let id = NeuronId::new(layer.trim(), index);
            if entries.contains_key(&id) {
                return Err(Error::format(at(), format!("duplicate entry for {id}")));
            }
            entries.insert(id, phrase.text);
        }
        Ok(AnnotationTable { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, neuron: &NeuronId) -> Option<&str> {
        self.entries.get(neuron).map(String::as_str)
    }

    pub fn contains(&self, neuron: &NeuronId) -> bool {
        self.entries.contains_key(neuron)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&NeuronId, &str)> {
        self.entries.iter().map(|(k, v)| (k, v.as_str()))
    }

    /// Fraction of the layer's filters that have an entry.
    pub fn coverage(&self, net: &Network, layer: &str) -> Result<f64> {
        let neurons = net.list_neurons(layer)?;
        let hits = neurons.iter().filter(|n| self.contains(n)).count();
        Ok(hits as f64 / neurons.len() as f64)
    }
}

impl AnnotationProvider for AnnotationTable {
    fn describe(&self, neuron: &NeuronId, _exemplars: &ExemplarSet) -> Result<Description> {
        self.get(neuron)
            .map(|t| Description {
                text: t.to_owned(),
                source: DescriptionSource::Table,
            })
            .ok_or_else(|| Error::Annotation(format!("no table entry for {neuron}")))
    }

    fn needs_exemplars(&self, _neuron: &NeuronId) -> bool {
        false
    }
}

pub fn load_annotation_table(path: &Path) -> Result<AnnotationTable> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    AnnotationTable::parse(&text, &path.display().to_string())
}

/// Names the majority class of the exemplars.
#[derive(Clone, Copy, Debug, Default)]
pub struct ExemplarFallback;

impl AnnotationProvider for ExemplarFallback {
    fn describe(&self, neuron: &NeuronId, exemplars: &ExemplarSet) -> Result<Description> {
        let label = exemplars
            .majority_label()
            .ok_or_else(|| Error::Annotation(format!("no exemplars for {neuron}")))?;
        Description::new(
            format!("patterns like in class '{label}'"),
            DescriptionSource::ExemplarFallback,
        )
    }
}

/// Tries `primary` and falls back to exemplar labels on annotation errors.
pub struct WithFallback<P> {
    pub primary: P,
}

impl AnnotationProvider for WithFallback<AnnotationTable> {
    fn describe(&self, neuron: &NeuronId, exemplars: &ExemplarSet) -> Result<Description> {
        match self.primary.describe(neuron, exemplars) {
            Err(Error::Annotation(_)) => ExemplarFallback.describe(neuron, exemplars),
            other => other,
        }
    }

    fn needs_exemplars(&self, neuron: &NeuronId) -> bool {
        !self.primary.contains(neuron)
    }
}

/// Remote captioning service. Sends the neuron id and its exemplar image
/// grids as JSON, expects `{"description": "..."}` back.
pub struct ExternalAnnotator {
    endpoint: HttpEndpoint,
    memory: Mutex<HashMap<String, String>>,
    disk: Option<FileCache>,
}

impl ExternalAnnotator {
    pub fn new(endpoint: HttpEndpoint) -> Self {
        ExternalAnnotator {
            endpoint,
            memory: Mutex::new(HashMap::new()),
            disk: None,
        }
    }

    pub fn with_disk_cache(mut self, cache: FileCache) -> Self {
        self.disk = Some(cache);
        self
    }

    fn cache_key(neuron: &NeuronId, exemplars: &ExemplarSet) -> String {
        let mut parts = vec!["annotator".to_owned(), neuron.layer.clone(), neuron.filter_index.to_string()];
        for e in &exemplars.exemplars {
            parts.push(e.image.display().to_string());
        }
        let refs: Vec<&str> = parts.iter().map(String::as_str).collect();
        FileCache::key(&refs)
    }

    fn request_body(neuron: &NeuronId, exemplars: &ExemplarSet) -> Result<serde_json::Value> {
        let mut images = Vec::with_capacity(exemplars.exemplars.len());
        for e in &exemplars.exemplars {
            let img = crate::image::Image::load(&e.image)?;
            images.push(json!({
                "image": e.image.display().to_string(),
                "peak": e.peak,
                "height": img.height(),
                "width": img.width(),
                "channels": img.channels(),
                "pixels": img.pixels(),
            }));
        }
        Ok(json!({
            "neuron": {"layer": neuron.layer, "filter_index": neuron.filter_index},
            "exemplars": images,
        }))
    }
}

impl AnnotationProvider for ExternalAnnotator {
    fn describe(&self, neuron: &NeuronId, exemplars: &ExemplarSet) -> Result<Description> {
        let key = Self::cache_key(neuron, exemplars);
        let cached = self.memory.lock().expect("cache lock").get(&key).cloned();
        let cached = match (cached, &self.disk) {
            (Some(text), _) => Some(text),
            (None, Some(disk)) => disk.get_string(&key)?,
            (None, None) => None,
        };
        if let Some(text) = cached {
            let text = self.memory.lock().expect("cache lock").entry(key).or_insert(text).clone();
            return Description::new(text, DescriptionSource::External);
        }

        let response = self.endpoint.post_json(&Self::request_body(neuron, exemplars)?)?;
        let text = response
            .get("description")
            .and_then(|v| v.as_str())
            .ok_or_else(|| Error::Provider("annotator response lacks a \"description\" string".into()))?;
        let description = Description::new(text, DescriptionSource::External).map_err(|e| Error::Provider(e.to_string()))?;

        // First writer wins so concurrent callers agree on the text.
        let text = {
            let mut memory = self.memory.lock().expect("cache lock");
            memory.entry(key.clone()).or_insert(description.text).clone()
        };
        if let Some(disk) = &self.disk {
            disk.put(&key, text.as_bytes())?;
        }
        Ok(Description {
            text,
            source: DescriptionSource::External,
        })
    }
}
