//! TOML run configuration with dotted `key=value` overrides.
//!
//! Precedence is override > file > default. Relative paths resolve against
//! the directory of the configuration file.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::candidates::DEFAULT_MAX_WIDTH;
use crate::corpus::{LabelVocab, Sentence};
use crate::encoder::{Encoder, EncoderKind, PretrainedEncoder, ToyEncoder};
use crate::error::{Error, Result};
use crate::evaluation::{MatchPolicy, Preset};
use crate::graph::ParamStore;
use crate::model::{Ablation, Model, ModelConfig, ModelFlags};
use crate::training::{stream_rng, SamplingConfig, Stream, TrainConfig};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSection {
    pub train: Option<PathBuf>,
    pub dev: Option<PathBuf>,
    pub test: Option<PathBuf>,
    /// Fixed label vocabulary; derived from the training split when absent.
    pub vocab: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderSection {
    pub kind: EncoderKind,
    pub dim: usize,
    pub max_len: usize,
    pub fine_tune: bool,
    /// Directory with `vocab.txt` and `embeddings.txt`; required for `pretrained`.
    pub pretrained_dir: Option<PathBuf>,
}

impl Default for EncoderSection {
    fn default() -> Self {
        EncoderSection {
            kind: EncoderKind::Toy,
            dim: 32,
            max_len: 512,
            fine_tune: true,
            pretrained_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpansSection {
    pub max_width: usize,
}

impl Default for SpansSection {
    fn default() -> Self {
        SpansSection {
            max_width: DEFAULT_MAX_WIDTH,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionSection {
    pub enabled: bool,
    pub share_params: bool,
}

impl Default for FusionSection {
    fn default() -> Self {
        FusionSection {
            enabled: true,
            share_params: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub two_phase: bool,
    pub bi_features: bool,
    pub multi_features: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            two_phase: true,
            bi_features: true,
            multi_features: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationSection {
    pub preset: Preset,
    pub symmetric_relations: Vec<String>,
    pub macro_average: bool,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        EvaluationSection {
            preset: Preset::Conll04,
            symmetric_relations: Vec::new(),
            macro_average: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: PathBuf::from("runs/default"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub corpus: CorpusSection,
    pub encoder: EncoderSection,
    pub spans: SpansSection,
    pub sampling: SamplingConfig,
    pub fusion: FusionSection,
    pub model: ModelSection,
    pub training: TrainConfig,
    pub evaluation: EvaluationSection,
    pub output: OutputSection,
}

impl RunConfig {
    /// Parses `text` and applies `overrides` of the form `section.key=value`.
    /// Values are read as TOML, falling back to a bare string.
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        for item in overrides {
            apply_override(&mut table, item)?;
        }
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a configuration file (or defaults when `path` is `None`) and
    /// checks that referenced files exist.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let (text, base) = match path {
            Some(p) => (
                fs::read_to_string(p).map_err(|e| Error::io(p, e))?,
                p.parent().map(Path::to_path_buf).unwrap_or_default(),
            ),
            None => (String::new(), PathBuf::new()),
        };
        let mut cfg = RunConfig::from_toml_str(&text, overrides)?;
        cfg.resolve_paths(&base);
        cfg.check_paths()?;
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(path) = p {
                if path.is_relative() {
                    *path = base.join(&*path);
                }
            }
        };
        fix(&mut self.corpus.train);
        fix(&mut self.corpus.dev);
        fix(&mut self.corpus.test);
        fix(&mut self.corpus.vocab);
        fix(&mut self.encoder.pretrained_dir);
        if self.output.dir.is_relative() {
            self.output.dir = base.join(&self.output.dir);
        }
    }

    fn check_paths(&self) -> Result<()> {
        let named = [
            ("corpus.train", &self.corpus.train),
            ("corpus.dev", &self.corpus.dev),
            ("corpus.test", &self.corpus.test),
            ("corpus.vocab", &self.corpus.vocab),
            ("encoder.pretrained_dir", &self.encoder.pretrained_dir),
        ];
        for (key, path) in named {
            if let Some(p) = path {
                if !p.exists() {
                    return Err(Error::Config(format!("{key}: {} does not exist", p.display())));
                }
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.training.validate()?;
        if self.encoder.dim == 0 || self.encoder.max_len < 2 {
            return Err(Error::Config("encoder.dim must be positive and encoder.max_len at least 2".into()));
        }
        if self.encoder.kind == EncoderKind::Pretrained && self.encoder.pretrained_dir.is_none() {
            return Err(Error::Config("encoder.kind = \"pretrained\" requires encoder.pretrained_dir".into()));
        }
        Ok(())
    }

    pub fn flags(&self) -> ModelFlags {
        ModelFlags {
            two_phase: self.model.two_phase,
            bi_features: self.model.bi_features,
            multi_features: self.model.multi_features,
            fusion_enabled: self.fusion.enabled,
            share_params: self.fusion.share_params,
        }
    }

    /// Replaces the architecture switches with a named ablation row.
    pub fn apply_ablation(&mut self, ablation: Ablation) {
        let f = ablation.flags();
        self.model.two_phase = f.two_phase;
        self.model.bi_features = f.bi_features;
        self.model.multi_features = f.multi_features;
        self.fusion.enabled = f.fusion_enabled;
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            max_width: self.spans.max_width,
            flags: self.flags(),
        }
    }

    pub fn policy(&self) -> MatchPolicy {
        let mut policy = self.evaluation.preset.policy();
        policy.symmetric_relations = self.evaluation.symmetric_relations.clone();
        policy
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("run config serializes")
    }

    /// Fresh model for `train`, initialized from the init stream of the seed.
    pub fn build_model(&self, train: &[Sentence], vocab: LabelVocab) -> Result<Model> {
        let mut rng = stream_rng(self.training.seed, Stream::Init);
        let mut params = ParamStore::new();
        let encoder = match self.encoder.kind {
            EncoderKind::Toy => {
                let tokens = ToyEncoder::vocab_from(train.iter().map(|s| s.tokens.as_slice()));
                Encoder::Toy(ToyEncoder::new(tokens, self.encoder.dim, self.encoder.max_len, &mut params, &mut rng))
            }
            EncoderKind::Pretrained => {
                let dir = self
                    .encoder
                    .pretrained_dir
                    .as_ref()
                    .ok_or_else(|| Error::Config("encoder.pretrained_dir is not set".into()))?;
                let enc = PretrainedEncoder::from_dir(dir, self.encoder.max_len, self.encoder.fine_tune, &mut params, &mut rng)?;
                if crate::encoder::EncoderAdapter::dim(&enc) != self.encoder.dim {
                    log::warn!(
                        "encoder.dim = {} ignored; pretrained embeddings have dimension {}",
                        self.encoder.dim,
                        crate::encoder::EncoderAdapter::dim(&enc)
                    );
                }
                Encoder::Pretrained(enc)
            }
        };
        Model::build(params, encoder, vocab, self.model_config(), &mut rng)
    }
}

fn apply_override(table: &mut toml::Table, item: &str) -> Result<()> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{item}` is not key=value")))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("override `{item}` has an empty key segment")));
    }
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let (last, parents) = path.split_last().unwrap();
    let mut cur = table;
    for p in parents {
        let next = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = next
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override `{item}`: `{p}` is not a section")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}
