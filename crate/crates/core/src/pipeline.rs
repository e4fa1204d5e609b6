//! The end-to-end explanation pipeline: forward, relevance, selection,
//! annotation, localization, MR assembly and realization.

use std::sync::{Arc, Mutex};

use crate::annotate::{build_layer_exemplars, AnnotationProvider, Description, ExemplarSet, DEFAULT_EXEMPLARS};
use crate::dataset::DatasetIndex;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::meaning::{build_mr, MeaningRepresentation};
use crate::net::{ActivationMap, ActivationStore, Network, NeuronId, NeuronMask, Prediction};
use crate::relevance::{filter_relevance_with, lrp_backward_with, top_k_neurons, LrpOptions, NeuronScore, ScoreMode};
use crate::spatial::{binarize, grid_cells, simplify_positions, CellSet, PositionLabel};
use crate::verbalize::{Explanation, Realizer};

pub const DEFAULT_K: usize = 10;

/// Exemplar sets for one layer, computed on first use.
pub struct ExemplarBank {
    dataset: DatasetIndex,
    m: usize,
    sets: Mutex<Option<Arc<Vec<ExemplarSet>>>>,
}

impl ExemplarBank {
    pub fn new(dataset: DatasetIndex, m: usize) -> Self {
        ExemplarBank {
            dataset,
            m,
            sets: Mutex::new(None),
        }
    }

    pub fn sets(&self, net: &Network, layer: &str) -> Result<Arc<Vec<ExemplarSet>>> {
        let mut guard = self.sets.lock().expect("exemplar lock");
        if let Some(sets) = &*guard {
            return Ok(Arc::clone(sets));
        }
        let sets = Arc::new(build_layer_exemplars(net, &self.dataset, layer, self.m)?);
        *guard = Some(Arc::clone(&sets));
        Ok(sets)
    }
}

/// One selected neuron with everything derived from it.
#[derive(Clone, Debug)]
pub struct SelectedNeuron {
    pub neuron: NeuronId,
    pub score: f64,
    pub map: ActivationMap,
    pub cells: CellSet,
    pub positions: Vec<PositionLabel>,
    pub description: Description,
}

#[derive(Clone, Debug)]
pub struct Analysis {
    pub prediction: Prediction,
    pub scores: Vec<NeuronScore>,
    pub selected: Vec<SelectedNeuron>,
    pub mr: MeaningRepresentation,
}

#[derive(Clone, Debug)]
pub struct ExplainOutput {
    pub analysis: Analysis,
    pub explanation: Explanation,
}

pub struct Pipeline {
    net: Network,
    layer: String,
    k: usize,
    score_mode: ScoreMode,
    lrp: LrpOptions,
    provider: Box<dyn AnnotationProvider>,
    exemplars: Option<ExemplarBank>,
    realizer: Realizer,
}

impl Pipeline {
    /// Defaults: last conv layer, k = 10, signed filter scores.
    pub fn new(net: Network, provider: Box<dyn AnnotationProvider>, realizer: Realizer) -> Self {
        let layer = net.last_conv_layer().to_owned();
        Pipeline {
            net,
            layer,
            k: DEFAULT_K,
            score_mode: ScoreMode::Signed,
            lrp: LrpOptions::default(),
            provider,
            exemplars: None,
            realizer,
        }
    }

    pub fn with_layer(mut self, layer: &str) -> Result<Self> {
        self.net.list_neurons(layer)?;
        self.layer = layer.to_owned();
        Ok(self)
    }

    pub fn with_k(mut self, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::Input("k must be at least 1".into()));
        }
        self.k = k;
        Ok(self)
    }

    pub fn with_score_mode(mut self, mode: ScoreMode) -> Self {
        self.score_mode = mode;
        self
    }

    pub fn with_exemplars(mut self, dataset: DatasetIndex, m: usize) -> Self {
        self.exemplars = Some(ExemplarBank::new(dataset, m));
        self
    }

    pub fn with_default_exemplars(self, dataset: DatasetIndex) -> Self {
        self.with_exemplars(dataset, DEFAULT_EXEMPLARS)
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn layer(&self) -> &str {
        &self.layer
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn realizer(&self) -> &Realizer {
        &self.realizer
    }

    /// Forward pass plus ranked neuron scores for the predicted class.
    pub fn rank(&self, img: &Image) -> Result<(Prediction, ActivationStore, Vec<NeuronScore>)> {
        let (prediction, acts) = self.net.forward(img, &NeuronMask::empty()).map_err(|e| e.in_stage("forward"))?;
        let rel = lrp_backward_with(&self.net, &acts, prediction.predicted_index, self.lrp)
            .map_err(|e| e.in_stage("relevance"))?;
        let scores = filter_relevance_with(&rel, &self.layer, self.score_mode).map_err(|e| e.in_stage("relevance"))?;
        Ok((prediction, acts, scores))
    }

    /// Everything up to and including the MR.
    pub fn analyze(&self, img: &Image) -> Result<Analysis> {
        let (prediction, acts, scores) = self.rank(img)?;
        let top = top_k_neurons(&scores, self.k).map_err(|e| e.in_stage("selection"))?;

        let mut selected = Vec::with_capacity(top.len());
        for neuron in top {
            let description = self.describe(&neuron).map_err(|e| e.in_stage("annotation"))?;
            let map = acts.neuron_map(&neuron).map_err(|e| e.in_stage("localization"))?;
            let cells = grid_cells(&binarize(&map)).map_err(|e| e.in_stage("localization"))?;
            selected.push(SelectedNeuron {
                score: scores[neuron.filter_index].score,
                positions: simplify_positions(cells),
                neuron,
                map,
                cells,
                description,
            });
        }

        let entries = selected
            .iter()
            .map(|s| (s.neuron.clone(), s.description.clone(), s.positions.clone()))
            .collect();
        let mr = build_mr(&prediction, entries).map_err(|e| e.in_stage("assembly"))?;
        Ok(Analysis {
            prediction,
            scores,
            selected,
            mr,
        })
    }

    pub fn explain(&self, img: &Image) -> Result<ExplainOutput> {
        let analysis = self.analyze(img)?;
        let explanation = self.realizer.realize(&analysis.mr).map_err(|e| e.in_stage("realization"))?;
        Ok(ExplainOutput { analysis, explanation })
    }

    fn describe(&self, neuron: &NeuronId) -> Result<Description> {
        let exemplars = match (&self.exemplars, self.provider.needs_exemplars(neuron)) {
            (Some(bank), true) => bank.sets(&self.net, &self.layer)?[neuron.filter_index].clone(),
            _ => ExemplarSet::empty(neuron.clone()),
        };
        self.provider.describe(neuron, &exemplars)
    }
}
