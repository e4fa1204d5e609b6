//! Command-line flags and their validated form.

use std::env;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, ValueEnum};
use neurotext::annotate::{
    load_annotation_table, AnnotationProvider, AnnotationTable, ExemplarFallback, ExternalAnnotator, WithFallback,
};
use neurotext::cache::{file_digest, FileCache};
use neurotext::http::HttpEndpoint;
use neurotext::pipeline::Pipeline;
use neurotext::relevance::ScoreMode;
use neurotext::verbalize::{LlmClient, Realizer};
use neurotext::{Network, Result as CoreResult};

use crate::CliError;

pub const LLM_TOKEN_ENV: &str = "NEUROTEXT_LLM_TOKEN";
pub const ANNOTATOR_TOKEN_ENV: &str = "NEUROTEXT_ANNOTATOR_TOKEN";

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum AnnotatorKind {
    /// Annotation table only; a missing entry is an error.
    Table,
    /// Annotation table, exemplar class names for missing entries.
    TableFallback,
    /// Exemplar class names for every neuron.
    Fallback,
    /// Remote captioning service.
    External,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum RealizerKind {
    Template,
    Llm,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ScoreModeArg {
    Signed,
    Positive,
}

/// Flags shared by all subcommands.
#[derive(Args, Clone, Debug)]
pub struct RunArgs {
    /// Network container.
    #[arg(long, global = true)]
    pub model: Option<PathBuf>,
    /// Dataset root with one directory per class.
    #[arg(long, global = true)]
    pub dataset: Option<PathBuf>,
    /// Convolutional layer whose filters are explained (default: the last).
    #[arg(long, global = true)]
    pub layer: Option<String>,
    /// Number of neurons in each meaning representation.
    #[arg(long, global = true, default_value_t = 10)]
    pub k: usize,
    /// Exemplar images per neuron.
    #[arg(long = "exemplars", global = true, default_value_t = 15)]
    pub m: usize,
    #[arg(long, global = true, value_enum, default_value_t = AnnotatorKind::TableFallback)]
    pub annotator: AnnotatorKind,
    /// Annotation table (layer, filter index, phrase; tab-separated).
    #[arg(long, global = true)]
    pub annotations: Option<PathBuf>,
    #[arg(long, global = true)]
    pub annotator_url: Option<String>,
    #[arg(long, global = true, value_enum, default_value_t = RealizerKind::Template)]
    pub realizer: RealizerKind,
    /// Chat-completions endpoint URL.
    #[arg(long, global = true)]
    pub llm_url: Option<String>,
    #[arg(long, global = true)]
    pub llm_model: Option<String>,
    /// Per-request timeout for remote providers.
    #[arg(long, global = true, default_value_t = 60)]
    pub timeout_secs: u64,
    #[arg(long, global = true, default_value_t = 3)]
    pub retries: u32,
    /// First retry delay; doubles on each further retry.
    #[arg(long, global = true, default_value_t = 500)]
    pub backoff_ms: u64,
    /// Noise intensities for the intra-set stability experiment.
    #[arg(long, global = true, value_delimiter = ',', default_values_t = vec![0.05, 0.2])]
    pub noise: Vec<f64>,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Images per class in experiment cohorts.
    #[arg(long, global = true, default_value_t = 50)]
    pub per_class: usize,
    /// Random single-neuron masks per image in the masking-lrp experiment.
    #[arg(long, global = true, default_value_t = 50)]
    pub random_reps: usize,
    #[arg(long, global = true, value_enum, default_value_t = ScoreModeArg::Signed)]
    pub score_mode: ScoreModeArg,
    /// Cache directory (default: <out>/.cache).
    #[arg(long, global = true)]
    pub cache_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub no_cache: bool,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
}

/// What a subcommand needs from the configuration.
#[derive(Clone, Copy, Debug, Default)]
pub struct Needs {
    pub model: bool,
    pub dataset: bool,
    pub pipeline: bool,
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub args: RunArgs,
    llm_token: Option<String>,
    annotator_token: Option<String>,
}

fn require_path(flag: &str, path: &Option<PathBuf>) -> Result<PathBuf, CliError> {
    let path = path.as_ref().ok_or_else(|| CliError::Config(format!("--{flag} is required")))?;
    if !path.exists() {
        return Err(CliError::Config(format!("--{flag} {} does not exist", path.display())));
    }
    Ok(path.clone())
}

fn require_token(var: &str) -> Result<String, CliError> {
    match env::var(var) {
        Ok(v) if !v.trim().is_empty() => Ok(v),
        _ => Err(CliError::Config(format!("environment variable {var} must hold the provider credential"))),
    }
}

impl RunConfig {
    /// Checks paths, parameters and credentials before any work starts.
    pub fn validate(args: RunArgs, needs: Needs) -> Result<Self, CliError> {
        if args.k == 0 {
            return Err(CliError::Config("--k must be at least 1".into()));
        }
        if args.m == 0 {
            return Err(CliError::Config("--exemplars must be at least 1".into()));
        }
        if let Some(bad) = args.noise.iter().find(|i| !(**i >= 0.0 && i.is_finite())) {
            return Err(CliError::Config(format!("noise intensity {bad} must be >= 0")));
        }
        if needs.model || needs.pipeline {
            require_path("model", &args.model)?;
        }
        if needs.dataset {
            require_path("dataset", &args.dataset)?;
        }
        let mut llm_token = None;
        let mut annotator_token = None;
        if needs.pipeline {
            match args.annotator {
                AnnotatorKind::Table | AnnotatorKind::TableFallback => {
                    require_path("annotations", &args.annotations)?;
                }
                AnnotatorKind::External => {
                    if args.annotator_url.is_none() {
                        return Err(CliError::Config("--annotator-url is required for the external annotator".into()));
                    }
                    annotator_token = Some(require_token(ANNOTATOR_TOKEN_ENV)?);
                }
                AnnotatorKind::Fallback => {}
            }
            if matches!(args.annotator, AnnotatorKind::Fallback | AnnotatorKind::TableFallback) && args.dataset.is_some() {
                require_path("dataset", &args.dataset)?;
            }
            if args.annotator == AnnotatorKind::Fallback && args.dataset.is_none() {
                return Err(CliError::Config("--dataset is required for the fallback annotator".into()));
            }
            if args.realizer == RealizerKind::Llm {
                if args.llm_url.is_none() || args.llm_model.is_none() {
                    return Err(CliError::Config("--llm-url and --llm-model are required for the llm realizer".into()));
                }
                llm_token = Some(require_token(LLM_TOKEN_ENV)?);
            }
        }
        Ok(RunConfig {
            args,
            llm_token,
            annotator_token,
        })
    }

    pub fn model_path(&self) -> &Path {
        self.args.model.as_deref().expect("validated")
    }

    pub fn load_model(&self) -> CoreResult<Network> {
        Network::load(self.model_path())
    }

    pub fn dataset(&self) -> CoreResult<neurotext::dataset::DatasetIndex> {
        neurotext::dataset::DatasetIndex::from_dir(self.args.dataset.as_deref().expect("validated"))
    }

    pub fn score_mode(&self) -> ScoreMode {
        match self.args.score_mode {
            ScoreModeArg::Signed => ScoreMode::Signed,
            ScoreModeArg::Positive => ScoreMode::Positive,
        }
    }

    pub fn cache(&self) -> CoreResult<Option<FileCache>> {
        if self.args.no_cache {
            return Ok(None);
        }
        let dir = self.args.cache_dir.clone().unwrap_or_else(|| self.args.out.join(".cache"));
        FileCache::new(dir).map(Some)
    }

    fn endpoint(&self, url: &str, token: &Option<String>) -> HttpEndpoint {
        HttpEndpoint {
            url: url.to_owned(),
            token: token.clone(),
            timeout: Duration::from_secs(self.args.timeout_secs),
            retries: self.args.retries,
            backoff: Duration::from_millis(self.args.backoff_ms),
        }
    }

    fn provider(&self) -> CoreResult<Box<dyn AnnotationProvider>> {
        let table = || -> CoreResult<AnnotationTable> {
            load_annotation_table(self.args.annotations.as_deref().expect("validated"))
        };
        Ok(match self.args.annotator {
            AnnotatorKind::Table => Box::new(table()?),
            AnnotatorKind::TableFallback => Box::new(WithFallback { primary: table()? }),
            AnnotatorKind::Fallback => Box::new(ExemplarFallback),
            AnnotatorKind::External => {
                let url = self.args.annotator_url.as_deref().expect("validated");
                let mut client = ExternalAnnotator::new(self.endpoint(url, &self.annotator_token));
                if let Some(cache) = self.cache()? {
                    client = client.with_disk_cache(cache);
                }
                Box::new(client)
            }
        })
    }

    fn realizer(&self) -> CoreResult<Realizer> {
        Ok(match self.args.realizer {
            RealizerKind::Template => Realizer::Template,
            RealizerKind::Llm => {
                let url = self.args.llm_url.as_deref().expect("validated");
                let model = self.args.llm_model.as_deref().expect("validated");
                let mut client = LlmClient::new(self.endpoint(url, &self.llm_token), model);
                if let Some(cache) = self.cache()? {
                    client = client.with_disk_cache(cache);
                }
                Realizer::Llm(client)
            }
        })
    }

    /// Identifies everything about the annotator that can change its output.
    pub fn annotator_tag(&self) -> CoreResult<String> {
        let table = || file_digest(self.args.annotations.as_deref().expect("validated"));
        Ok(match self.args.annotator {
            AnnotatorKind::Table => format!("table:{}", table()?),
            AnnotatorKind::TableFallback => format!("table-fallback:{}:m{}", table()?, self.args.m),
            AnnotatorKind::Fallback => format!("fallback:m{}", self.args.m),
            AnnotatorKind::External => format!("external:{}", self.args.annotator_url.as_deref().unwrap_or("")),
        })
    }

    pub fn pipeline(&self, net: Network) -> CoreResult<Pipeline> {
        let mut pipeline = Pipeline::new(net, self.provider()?, self.realizer()?)
            .with_k(self.args.k)?
            .with_score_mode(self.score_mode());
        if let Some(layer) = &self.args.layer {
            pipeline = pipeline.with_layer(layer)?;
        }
        if self.args.dataset.is_some() {
            pipeline = pipeline.with_exemplars(self.dataset()?, self.args.m);
        }
        Ok(pipeline)
    }
}
