//! The meaning representation (MR): predicted class plus the ranked neurons
//! with their descriptions and positions.
//!
//! Canonical form is JSON with sorted keys, two-space indentation, LF line
//! endings, and a trailing newline:
//!
//! ```json
//! {
//!   "neurons": [
//!     {
//!       "description": "gushes of water",
//!       "filter_index": 7,
//!       "layer": "conv3",
//!       "positions": ["lower half"]
//!     }
//!   ],
//!   "predicted_class": "lakeside"
//! }
//! ```

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::annotate::Description;
use crate::error::{Error, Result};
use crate::net::{NeuronId, Prediction};
use crate::spatial::PositionLabel;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NeuronEntry {
    pub neuron: NeuronId,
    pub description: String,
    pub positions: Vec<PositionLabel>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MeaningRepresentation {
    predicted_class: String,
    neurons: Vec<NeuronEntry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NeuronDoc {
    description: String,
    filter_index: usize,
    layer: String,
    positions: Vec<PositionLabel>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MrDoc {
    neurons: Vec<NeuronDoc>,
    predicted_class: String,
}

impl MeaningRepresentation {
    /// Entries must be non-empty, ranked, and free of duplicate neurons.
    pub fn new(predicted_class: impl Into<String>, neurons: Vec<NeuronEntry>) -> Result<Self> {
        let predicted_class = predicted_class.into();
        if predicted_class.trim().is_empty() {
            return Err(Error::Construction("predicted class is empty".into()));
        }
        if neurons.is_empty() {
            return Err(Error::Construction("meaning representation needs at least one neuron".into()));
        }
        let mut seen = HashSet::new();
        for entry in &neurons {
            if !seen.insert(&entry.neuron) {
                return Err(Error::Construction(format!("duplicate neuron {}", entry.neuron)));
            }
            if entry.description.trim().is_empty() || entry.description.contains(['\n', '\r']) {
                return Err(Error::Construction(format!(
                    "description of {} must be a non-empty single line",
                    entry.neuron
                )));
            }
        }
        Ok(MeaningRepresentation {
            predicted_class,
            neurons,
        })
    }

    pub fn predicted_class(&self) -> &str {
        &self.predicted_class
    }

    pub fn neurons(&self) -> &[NeuronEntry] {
        &self.neurons
    }

    pub fn neuron_ids(&self) -> impl Iterator<Item = &NeuronId> {
        self.neurons.iter().map(|e| &e.neuron)
    }

    /// Canonical JSON text.
    pub fn to_json(&self) -> String {
        let doc = MrDoc {
            neurons: self
                .neurons
                .iter()
                .map(|e| NeuronDoc {
                    description: e.description.clone(),
                    filter_index: e.neuron.filter_index,
                    layer: e.neuron.layer.clone(),
                    positions: e.positions.clone(),
                })
                .collect(),
            predicted_class: self.predicted_class.clone(),
        };
        let mut text = serde_json::to_string_pretty(&doc).expect("MR serializes");
        text.push('\n');
        text
    }

    /// Parses and validates an MR document. Errors carry the JSON path of
    /// the offending field.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let doc: MrDoc = serde_path_to_error::deserialize(de).map_err(|e| Error::Parse {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
        let neurons = doc
            .neurons
            .into_iter()
            .map(|n| NeuronEntry {
                neuron: NeuronId::new(n.layer, n.filter_index),
                description: n.description,
                positions: n.positions,
            })
            .collect();
        MeaningRepresentation::new(doc.predicted_class, neurons).map_err(|e| Error::Parse {
            path: "neurons".into(),
            message: e.to_string(),
        })
    }

    /// Hex SHA-256 of the canonical serialization.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_json().as_bytes()))
    }
}

/// Assembles an MR from a prediction and ranked `(neuron, description,
/// positions)` triples. Empty position lists are kept.
pub fn build_mr(
    pred: &Prediction,
    entries: Vec<(NeuronId, Description, Vec<PositionLabel>)>,
) -> Result<MeaningRepresentation> {
    MeaningRepresentation::new(
        pred.predicted_class.clone(),
        entries
            .into_iter()
            .map(|(neuron, description, positions)| NeuronEntry {
                neuron,
                description: description.text,
                positions,
            })
            .collect(),
    )
}

pub fn serialize_mr(mr: &MeaningRepresentation) -> String {
    mr.to_json()
}

pub fn parse_mr(text: &str) -> Result<MeaningRepresentation> {
    MeaningRepresentation::from_json(text)
}
