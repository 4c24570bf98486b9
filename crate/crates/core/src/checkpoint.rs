//! Checkpoint directories: parameter blob, architecture snapshot, label vocab,
//! encoder vocab and a fingerprint that guards against mismatched reloads.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::candidates::NUM_DISTANCE_BUCKETS;
use crate::corpus::LabelVocab;
use crate::encoder::{Encoder, EncoderAdapter, EncoderKind, PretrainedEncoder, ToyEncoder};
use crate::error::{Error, Result};
use crate::graph::{ParamStore, Tensor};
use crate::model::{Model, ModelConfig};

const MAGIC: &[u8; 8] = b"SPRLPRM1";
pub const PARAMS_FILE: &str = "params.bin";
pub const CONFIG_FILE: &str = "model.json";
pub const VOCAB_FILE: &str = "vocab.txt";
pub const ENCODER_VOCAB_FILE: &str = "encoder_vocab.txt";
pub const FINGERPRINT_FILE: &str = "fingerprint.json";

/// Everything needed to rebuild the parameter layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSnapshot {
    pub encoder_kind: EncoderKind,
    pub dim: usize,
    pub max_len: usize,
    pub fine_tune: bool,
    pub config: ModelConfig,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fingerprint {
    pub dim: usize,
    pub max_width: usize,
    pub num_entity_types: usize,
    pub num_relation_types: usize,
    pub num_distance_buckets: usize,
    pub two_phase: bool,
    pub bi_features: bool,
    pub multi_features: bool,
    pub fusion_enabled: bool,
    pub share_params: bool,
    pub encoder_kind: EncoderKind,
}

impl Fingerprint {
    pub fn of(model: &Model) -> Self {
        let f = model.config.flags;
        Fingerprint {
            dim: model.dim(),
            max_width: model.config.max_width,
            num_entity_types: model.vocab.num_entity_types(),
            num_relation_types: model.vocab.num_relation_types(),
            num_distance_buckets: NUM_DISTANCE_BUCKETS,
            two_phase: f.two_phase,
            bi_features: f.bi_features,
            multi_features: f.multi_features,
            fusion_enabled: f.fusion_enabled,
            share_params: f.share_params,
            encoder_kind: model.encoder.kind(),
        }
    }

    /// Field-by-field differences as `name: ours != theirs`.
    pub fn diff(&self, other: &Fingerprint) -> Vec<String> {
        let a = serde_json::to_value(self).expect("fingerprint serializes");
        let b = serde_json::to_value(other).expect("fingerprint serializes");
        let (a, b) = (a.as_object().unwrap(), b.as_object().unwrap());
        a.iter()
            .filter(|(k, v)| b.get(*k) != Some(*v))
            .map(|(k, v)| format!("{k}: {v} != {}", b.get(k).map_or("missing".into(), |x| x.to_string())))
            .collect()
    }

    fn check(&self, expected: &Fingerprint, context: &str) -> Result<()> {
        let diff = self.diff(expected);
        if diff.is_empty() {
            Ok(())
        } else {
            Err(Error::Fingerprint(format!("{context}: {}", diff.join("; "))))
        }
    }
}

fn encode_params(params: &ParamStore) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for e in params.entries() {
        out.extend_from_slice(&(e.name.len() as u64).to_le_bytes());
        out.extend_from_slice(e.name.as_bytes());
        out.extend_from_slice(&(e.tensor.rows as u64).to_le_bytes());
        out.extend_from_slice(&(e.tensor.cols as u64).to_le_bytes());
        for v in &e.tensor.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.bytes.len() < n {
            return Err(Error::Checkpoint("parameter blob is truncated".into()));
        }
        let (head, rest) = self.bytes.split_at(n);
        self.bytes = rest;
        Ok(head)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn len(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Checkpoint("length overflows usize".into()))
    }
}

fn decode_params(bytes: &[u8]) -> Result<Vec<(String, Tensor)>> {
    let mut r = Reader { bytes };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(Error::Checkpoint("not a parameter blob (bad magic)".into()));
    }
    let count = r.len()?;
    let mut out = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let name_len = r.len()?;
        let name = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?;
        let rows = r.len()?;
        let cols = r.len()?;
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::Checkpoint(format!("{name}: shape overflows")))?;
        let raw = r.take(n.checked_mul(8).ok_or_else(|| Error::Checkpoint("blob too large".into()))?)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        out.push((name, Tensor { rows, cols, data }));
    }
    if !r.bytes.is_empty() {
        return Err(Error::Checkpoint("trailing bytes after parameter blob".into()));
    }
    Ok(out)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    let mut f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut buf = Vec::new();
    f.read_to_end(&mut buf).map_err(|e| Error::io(path, e))?;
    Ok(buf)
}

fn read_text(path: &Path) -> Result<String> {
    String::from_utf8(read_file(path)?).map_err(|_| Error::Checkpoint(format!("{} is not UTF-8", path.display())))
}

pub fn save_checkpoint(model: &Model, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let fine_tune = match &model.encoder {
        Encoder::Pretrained(_) => model
            .params
            .id("encoder.subtoken_embeddings")
            .is_some_and(|id| model.params.entry(id).trainable),
        Encoder::Toy(_) => true,
    };
    let snapshot = ModelSnapshot {
        encoder_kind: model.encoder.kind(),
        dim: model.dim(),
        max_len: model.encoder.max_len(),
        fine_tune,
        config: model.config,
    };
    write_file(&dir.join(PARAMS_FILE), &encode_params(&model.params))?;
    write_file(&dir.join(CONFIG_FILE), json(&snapshot).as_bytes())?;
    write_file(&dir.join(FINGERPRINT_FILE), json(&Fingerprint::of(model)).as_bytes())?;
    model.vocab.write(dir.join(VOCAB_FILE))?;
    let mut lines = model.encoder.vocab_lines().join("\n");
    lines.push('\n');
    write_file(&dir.join(ENCODER_VOCAB_FILE), lines.as_bytes())
}

fn json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("snapshot serializes") + "\n"
}

pub fn read_fingerprint(dir: impl AsRef<Path>) -> Result<Fingerprint> {
    let path = dir.as_ref().join(FINGERPRINT_FILE);
    serde_json::from_str(&read_text(&path)?)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
}

/// Rebuilds the model saved in `dir`. With `expected`, a fingerprint mismatch
/// is reported before anything else is read.
pub fn load_checkpoint(dir: impl AsRef<Path>, expected: Option<&Fingerprint>) -> Result<Model> {
    let dir = dir.as_ref();
    let stored = read_fingerprint(dir)?;
    if let Some(expected) = expected {
        stored.check(expected, "checkpoint does not match the requested architecture")?;
    }
    let config_path = dir.join(CONFIG_FILE);
    let snapshot: ModelSnapshot = serde_json::from_str(&read_text(&config_path)?)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", config_path.display())))?;
    let vocab = LabelVocab::read(dir.join(VOCAB_FILE))?;
    let lines: Vec<String> = read_text(&dir.join(ENCODER_VOCAB_FILE))?
        .lines()
        .map(str::to_string)
        .filter(|l| !l.is_empty())
        .collect();

    // Initial values are overwritten below; the rng only fixes the layout.
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut params = ParamStore::new();
    let encoder = match snapshot.encoder_kind {
        EncoderKind::Toy => Encoder::Toy(ToyEncoder::new(lines, snapshot.dim, snapshot.max_len, &mut params, &mut rng)),
        EncoderKind::Pretrained => Encoder::Pretrained(PretrainedEncoder::with_vocab(
            lines,
            snapshot.dim,
            snapshot.max_len,
            snapshot.fine_tune,
            &mut params,
            &mut rng,
        )?),
    };
    let mut model = Model::build(params, encoder, vocab, snapshot.config, &mut rng)?;
    Fingerprint::of(&model).check(&stored, "checkpoint files disagree with the stored fingerprint")?;

    let blob = decode_params(&read_file(&dir.join(PARAMS_FILE))?)?;
    if blob.len() != model.params.len() {
        return Err(Error::Checkpoint(format!(
            "blob has {} parameters, architecture expects {}",
            blob.len(),
            model.params.len()
        )));
    }
    for (entry, (name, tensor)) in model.params.entries_mut().iter_mut().zip(blob) {
        if entry.name != name || entry.tensor.rows != tensor.rows || entry.tensor.cols != tensor.cols {
            return Err(Error::Checkpoint(format!(
                "parameter `{name}` [{}x{}] does not match `{}` [{}x{}]",
                tensor.rows, tensor.cols, entry.name, entry.tensor.rows, entry.tensor.cols
            )));
        }
        entry.tensor = tensor;
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{tests::toy_model, Ablation};

    #[test]
    fn round_trip_is_bit_exact() {
        for ablation in Ablation::ALL {
            let model = toy_model(ablation.flags(), 6);
            let dir = tempfile::tempdir().unwrap();
            save_checkpoint(&model, dir.path()).unwrap();
            let back = load_checkpoint(dir.path(), Some(&Fingerprint::of(&model))).unwrap();
            assert_eq!(back.params, model.params, "{ablation}");
            assert_eq!(back.vocab, model.vocab);
        }
    }

    #[test]
    fn mismatch_is_explicit() {
        let model = toy_model(Ablation::Full.flags(), 6);
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(&model, dir.path()).unwrap();
        let mut want = Fingerprint::of(&model);
        want.num_entity_types += 1;
        want.dim = 8;
        let err = load_checkpoint(dir.path(), Some(&want)).unwrap_err().to_string();
        assert!(err.contains("num_entity_types"), "{err}");
        assert!(err.contains("dim: 6 != 8"), "{err}");
    }

    #[test]
    fn edited_vocab_is_caught() {
        let model = toy_model(Ablation::Full.flags(), 6);
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(&model, dir.path()).unwrap();
        let mut types = model.vocab.entity_types().to_vec();
        types.pop();
        let smaller = LabelVocab::new(types, model.vocab.relation_types().to_vec()).unwrap();
        smaller.write(dir.path().join(VOCAB_FILE)).unwrap();
        let err = load_checkpoint(dir.path(), None).unwrap_err();
        assert!(matches!(err, Error::Fingerprint(_) | Error::Config(_)), "{err}");
    }

    #[test]
    fn corrupt_blob() {
        let model = toy_model(Ablation::Base.flags(), 4);
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(&model, dir.path()).unwrap();
        let path = dir.path().join(PARAMS_FILE);
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(load_checkpoint(dir.path(), None), Err(Error::Checkpoint(_))));
        fs::write(&path, b"garbage!").unwrap();
        assert!(matches!(load_checkpoint(dir.path(), None), Err(Error::Checkpoint(_))));
    }
}
