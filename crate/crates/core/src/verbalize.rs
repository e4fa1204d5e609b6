//! Text realization of meaning representations: an LLM prompt client and a
//! deterministic template.

use std::collections::HashMap;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::cache::FileCache;
use crate::error::{Error, Result};
use crate::http::HttpEndpoint;
use crate::meaning::MeaningRepresentation;
use crate::spatial::PositionLabel;

pub const PROMPT_VERSION: &str = "mr_to_text.v1";
const PROMPT_TEMPLATE: &str = include_str!("../assets/prompt/mr_to_text.v1.txt");
const MR_SLOT: &str = "{{MR}}";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExplanationSource {
    Llm,
    Template,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Explanation {
    pub text: String,
    pub source: ExplanationSource,
    pub mr_digest: String,
    /// Empty for the template realizer.
    pub model_id: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PromptText(pub String);

impl PromptText {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

/// The stored prompt with the canonical MR text in place of the example
/// slot.
pub fn build_prompt(mr: &MeaningRepresentation) -> PromptText {
    PromptText(PROMPT_TEMPLATE.replacen(MR_SLOT, mr.to_json().trim_end(), 1))
}

/// "a", "a and b", "a, b and c".
pub fn join_and(items: &[&str]) -> String {
    match items {
        [] => String::new(),
        [one] => (*one).to_owned(),
        [init @ .., last] => format!("{} and {last}", init.join(", ")),
    }
}

/// Fixed-form sentence naming every description once. Entries that share
/// a description are merged into one clause.
pub fn generate_template(mr: &MeaningRepresentation) -> Explanation {
    let mut clauses: Vec<(&str, Vec<PositionLabel>)> = Vec::new();
    for entry in mr.neurons() {
        let slot = match clauses.iter().position(|(d, _)| *d == entry.description) {
            Some(i) => &mut clauses[i].1,
            None => {
                clauses.push((&entry.description, Vec::new()));
                &mut clauses.last_mut().expect("just pushed").1
            }
        };
        for p in &entry.positions {
            if !slot.contains(p) {
                slot.push(*p);
            }
        }
    }
    let rendered: Vec<String> = clauses
        .iter()
        .map(|(description, positions)| {
            if positions.is_empty() {
                (*description).to_owned()
            } else {
                let names: Vec<&str> = positions.iter().map(|p| p.as_str()).collect();
                format!("{description} at the {}", join_and(&names))
            }
        })
        .collect();
    Explanation {
        text: format!(
            "The model classified this image as '{}' because it detected {}.",
            mr.predicted_class(),
            rendered.join("; ")
        ),
        source: ExplanationSource::Template,
        mr_digest: mr.digest(),
        model_id: String::new(),
    }
}

/// Chat-completions client (OpenAI-compatible request shape).
pub struct LlmClient {
    endpoint: HttpEndpoint,
    model_id: String,
    memory: Mutex<HashMap<String, Explanation>>,
    disk: Option<FileCache>,
}

impl LlmClient {
    pub fn new(endpoint: HttpEndpoint, model_id: impl Into<String>) -> Self {
        LlmClient {
            endpoint,
            model_id: model_id.into(),
            memory: Mutex::new(HashMap::new()),
            disk: None,
        }
    }

    pub fn with_disk_cache(mut self, cache: FileCache) -> Self {
        self.disk = Some(cache);
        self
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    fn cache_key(&self, mr_digest: &str) -> String {
        FileCache::key(&["llm", &self.model_id, PROMPT_VERSION, mr_digest])
    }

    fn cached(&self, key: &str, mr_digest: &str) -> Result<Option<Explanation>> {
        if let Some(hit) = self.memory.lock().expect("cache lock").get(key) {
            return Ok(Some(hit.clone()));
        }
        let Some(disk) = &self.disk else { return Ok(None) };
        let Some(bytes) = disk.get(key)? else { return Ok(None) };
        match serde_json::from_slice::<Explanation>(&bytes) {
            Ok(e) if e.mr_digest == mr_digest && e.model_id == self.model_id => Ok(Some(e)),
            _ => {
                log::warn!("ignoring stale LLM cache entry {key}");
                Ok(None)
            }
        }
    }

    fn complete(&self, prompt: &PromptText) -> Result<String> {
        let body = json!({
            "model": self.model_id,
            "messages": [{"role": "user", "content": prompt.as_str()}],
            "temperature": 0,
            "n": 1,
        });
        let response = self.endpoint.post_json(&body)?;
        let text = response
            .pointer("/choices/0/message/content")
            .and_then(|v| v.as_str())
            .ok_or_else(|| Error::Provider("completion response lacks choices[0].message.content".into()))?;
        Ok(text.trim().to_owned())
    }
}

pub fn generate_llm(client: &LlmClient, mr: &MeaningRepresentation) -> Result<Explanation> {
    let mr_digest = mr.digest();
    let key = client.cache_key(&mr_digest);
    if let Some(hit) = client.cached(&key, &mr_digest)? {
        return Ok(hit);
    }
    let text = client.complete(&build_prompt(mr))?;
    if text.is_empty() {
        return Err(Error::Generation("the language model returned an empty completion".into()));
    }
    let explanation = Explanation {
        text,
        source: ExplanationSource::Llm,
        mr_digest,
        model_id: client.model_id.clone(),
    };
    let explanation = client
        .memory
        .lock()
        .expect("cache lock")
        .entry(key.clone())
        .or_insert(explanation)
        .clone();
    if let Some(disk) = &client.disk {
        let bytes = serde_json::to_vec_pretty(&explanation).expect("explanation serializes");
        disk.put(&key, &bytes)?;
    }
    Ok(explanation)
}

pub enum Realizer {
    Template,
    Llm(LlmClient),
}

impl Realizer {
    pub fn realize(&self, mr: &MeaningRepresentation) -> Result<Explanation> {
        match self {
            Realizer::Template => Ok(generate_template(mr)),
            Realizer::Llm(client) => generate_llm(client, mr),
        }
    }

    /// Identifies the realizer in cache keys.
    pub fn cache_tag(&self) -> String {
        match self {
            Realizer::Template => "template".into(),
            Realizer::Llm(c) => format!("llm:{}:{PROMPT_VERSION}", c.model_id),
        }
    }
}
