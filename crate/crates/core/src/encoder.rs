//! Token encoders and the trainable feature tables.
//!
//! An encoder maps a token sequence to one vector per token plus a
//! sentence-level context vector. Sub-token alignment stays inside the
//! adapter: callers always see exactly `n` token vectors.

use std::collections::HashMap;
use std::fs;
use std::ops::Range;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::candidates::NUM_DISTANCE_BUCKETS;
use crate::error::{Error, Result};
use crate::graph::{Graph, Init, NodeId, ParamId, ParamStore};
use crate::math;

pub const UNK: &str = "[UNK]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    Pretrained,
    Toy,
}

/// Plain-value encoder output.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenEmbeddingSequence {
    pub context_vector: Vec<f64>,
    pub token_vectors: Vec<Vec<f64>>,
}

impl TokenEmbeddingSequence {
    pub fn dim(&self) -> usize {
        self.context_vector.len()
    }

    pub fn len(&self) -> usize {
        self.token_vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_vectors.is_empty()
    }

    /// Loads the vectors into `g` as constant inputs.
    pub fn to_graph(&self, g: &mut Graph<'_>) -> EncodedSentence {
        EncodedSentence {
            context: g.input(self.context_vector.clone()),
            tokens: self.token_vectors.iter().map(|v| g.input(v.clone())).collect(),
        }
    }
}

/// Encoder output as tape nodes.
#[derive(Debug, Clone)]
pub struct EncodedSentence {
    pub context: NodeId,
    pub tokens: Vec<NodeId>,
}

impl EncodedSentence {
    pub fn values(&self, g: &Graph<'_>) -> TokenEmbeddingSequence {
        TokenEmbeddingSequence {
            context_vector: g.value(self.context).to_vec(),
            token_vectors: self.tokens.iter().map(|&t| g.value(t).to_vec()).collect(),
        }
    }
}

pub trait EncoderAdapter {
    fn kind(&self) -> EncoderKind;

    fn dim(&self) -> usize;

    /// Maximum number of encoder positions per sentence.
    fn max_len(&self) -> usize;

    fn encode(&self, g: &mut Graph<'_>, tokens: &[String]) -> Result<EncodedSentence>;

    /// Lines of the adapter's token vocabulary, for checkpoints.
    fn vocab_lines(&self) -> &[String];

    fn encode_sentence(&self, params: &ParamStore, tokens: &[String]) -> Result<TokenEmbeddingSequence> {
        let mut g = Graph::new(params);
        let enc = self.encode(&mut g, tokens)?;
        Ok(enc.values(&g))
    }
}

/// Coordinate-wise max over each token's sub-token vectors.
pub fn pool_subtokens(subtokens: &[Vec<f64>], groups: &[Range<usize>]) -> Result<Vec<Vec<f64>>> {
    let dim = subtokens.first().map_or(0, Vec::len);
    groups
        .iter()
        .map(|r| {
            if r.is_empty() || r.end > subtokens.len() {
                return Err(Error::Shape(format!(
                    "sub-token group {r:?} invalid for {} sub-tokens",
                    subtokens.len()
                )));
            }
            Ok(math::max_pool(subtokens[r.clone()].iter().map(Vec::as_slice), dim).0)
        })
        .collect()
}

fn pool_subtokens_graph(g: &mut Graph<'_>, subtokens: &[NodeId], groups: &[Range<usize>]) -> Result<Vec<NodeId>> {
    groups.iter().map(|r| g.max_pool(&subtokens[r.clone()])).collect()
}

/// Local context mixer: `x_i = e_i + tanh(W [e_{i-1}; e_i; e_{i+1}] + b)` with
/// zero padding at the edges.
#[derive(Debug, Clone)]
pub struct ConvMixer {
    weight: ParamId,
    bias: ParamId,
    dim: usize,
}

impl ConvMixer {
    pub fn new<R: Rng + ?Sized>(prefix: &str, dim: usize, store: &mut ParamStore, rng: &mut R) -> Self {
        let scale = 1.0 / ((3 * dim) as f64).sqrt();
        ConvMixer {
            weight: store.add(format!("{prefix}.weight"), dim, 3 * dim, Init::Uniform(scale), true, rng),
            bias: store.add(format!("{prefix}.bias"), 1, dim, Init::Zeros, false, rng),
            dim,
        }
    }

    pub fn apply(&self, g: &mut Graph<'_>, inputs: &[NodeId]) -> Result<Vec<NodeId>> {
        let zero = g.input(vec![0.0; self.dim]);
        let mut out = Vec::with_capacity(inputs.len());
        for i in 0..inputs.len() {
            let left = if i == 0 { zero } else { inputs[i - 1] };
            let right = inputs.get(i + 1).copied().unwrap_or(zero);
            let window = g.concat(&[left, inputs[i], right]);
            let mixed = g.linear(self.weight, Some(self.bias), window)?;
            let act = g.tanh(mixed);
            out.push(g.add(inputs[i], act)?);
        }
        Ok(out)
    }
}

/// Trainable token lookup followed by a local mixer. The context vector is a
/// learned pooling `tanh(W mean(x) + b)` of the mixed token vectors.
#[derive(Debug, Clone)]
pub struct ToyEncoder {
    vocab: Vec<String>,
    index: HashMap<String, usize>,
    embeddings: ParamId,
    mixer: ConvMixer,
    pool_weight: ParamId,
    pool_bias: ParamId,
    dim: usize,
    max_len: usize,
}

impl ToyEncoder {
    /// `tokens` is the training vocabulary; `[UNK]` is prepended if missing.
    pub fn new<R: Rng + ?Sized>(
        tokens: Vec<String>,
        dim: usize,
        max_len: usize,
        store: &mut ParamStore,
        rng: &mut R,
    ) -> Self {
        let mut vocab = Vec::with_capacity(tokens.len() + 1);
        if !tokens.iter().any(|t| t == UNK) {
            vocab.push(UNK.to_string());
        }
        vocab.extend(tokens);
        let index = vocab.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        let scale = 1.0 / (dim as f64).sqrt();
        let embeddings = store.add("encoder.token_embeddings", vocab.len(), dim, Init::Uniform(scale), true, rng);
        let mixer = ConvMixer::new("encoder.mixer", dim, store, rng);
        let pool_weight = store.add("encoder.pool.weight", dim, dim, Init::Uniform(scale), true, rng);
        let pool_bias = store.add("encoder.pool.bias", 1, dim, Init::Zeros, false, rng);
        ToyEncoder {
            vocab,
            index,
            embeddings,
            mixer,
            pool_weight,
            pool_bias,
            dim,
            max_len,
        }
    }

    /// Distinct tokens of `sentences` in first-seen order.
    pub fn vocab_from<'a, I>(sentences: I) -> Vec<String>
    where
        I: IntoIterator<Item = &'a [String]>,
    {
        let mut seen = std::collections::HashSet::new();
        let mut out = Vec::new();
        for tokens in sentences {
            for t in tokens {
                if seen.insert(t.clone()) {
                    out.push(t.clone());
                }
            }
        }
        out
    }

    fn token_id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(self.index[UNK])
    }
}

impl EncoderAdapter for ToyEncoder {
    fn kind(&self) -> EncoderKind {
        EncoderKind::Toy
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn max_len(&self) -> usize {
        self.max_len
    }

    fn vocab_lines(&self) -> &[String] {
        &self.vocab
    }

    fn encode(&self, g: &mut Graph<'_>, tokens: &[String]) -> Result<EncodedSentence> {
        if tokens.is_empty() {
            return Err(Error::Shape("cannot encode an empty sentence".into()));
        }
        if tokens.len() > self.max_len {
            return Err(Error::Length {
                len: tokens.len(),
                limit: self.max_len,
            });
        }
        let embedded = tokens
            .iter()
            .map(|t| g.gather(self.embeddings, self.token_id(t)))
            .collect::<Result<Vec<_>>>()?;
        let mixed = self.mixer.apply(g, &embedded)?;
        let mean = g.mean(&mixed)?;
        let pooled = g.linear(self.pool_weight, Some(self.pool_bias), mean)?;
        let context = g.tanh(pooled);
        Ok(EncodedSentence { context, tokens: mixed })
    }
}

/// Sub-word encoder over a pretrained sub-token embedding table.
///
/// Tokens are split greedily longest-match-first into WordPiece units
/// (continuations prefixed `##`); `[CLS]` opens the sequence and `[SEP]`
/// closes it when present in the vocabulary. After the mixer, each token
/// vector is the coordinate-wise max over its sub-token vectors and the
/// context vector is the mixed `[CLS]` position.
///
/// On disk: a directory with `vocab.txt` (one unit per line) and
/// `embeddings.txt` (one whitespace-separated row per vocabulary line).
#[derive(Debug, Clone)]
pub struct PretrainedEncoder {
    vocab: Vec<String>,
    index: HashMap<String, usize>,
    embeddings: ParamId,
    mixer: ConvMixer,
    dim: usize,
    max_len: usize,
}

impl PretrainedEncoder {
    /// Registers a zero embedding table for `vocab`; the caller fills it.
    pub fn with_vocab<R: Rng + ?Sized>(
        vocab: Vec<String>,
        dim: usize,
        max_len: usize,
        fine_tune: bool,
        store: &mut ParamStore,
        rng: &mut R,
    ) -> Result<Self> {
        for special in [CLS, UNK] {
            if !vocab.iter().any(|v| v == special) {
                return Err(Error::Config(format!("pretrained vocab lacks {special}")));
            }
        }
        let index = vocab.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        let embeddings = store.add("encoder.subtoken_embeddings", vocab.len(), dim, Init::Zeros, true, rng);
        store.set_trainable(embeddings, fine_tune);
        let mixer = ConvMixer::new("encoder.mixer", dim, store, rng);
        Ok(PretrainedEncoder {
            vocab,
            index,
            embeddings,
            mixer,
            dim,
            max_len,
        })
    }

    pub fn from_dir<R: Rng + ?Sized>(
        dir: impl AsRef<Path>,
        max_len: usize,
        fine_tune: bool,
        store: &mut ParamStore,
        rng: &mut R,
    ) -> Result<Self> {
        let dir = dir.as_ref();
        let vocab_path = dir.join("vocab.txt");
        let vocab: Vec<String> = fs::read_to_string(&vocab_path)
            .map_err(|e| Error::io(&vocab_path, e))?
            .lines()
            .map(|l| l.trim_end().to_string())
            .filter(|l| !l.is_empty())
            .collect();
        let emb_path = dir.join("embeddings.txt");
        let text = fs::read_to_string(&emb_path).map_err(|e| Error::io(&emb_path, e))?;
        let rows = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .enumerate()
            .map(|(i, l)| {
                l.split_whitespace()
                    .map(|v| v.parse::<f64>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|e| Error::Config(format!("{}: row {}: {e}", emb_path.display(), i + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        if rows.len() != vocab.len() {
            return Err(Error::Config(format!(
                "{} has {} rows for {} vocabulary entries",
                emb_path.display(),
                rows.len(),
                vocab.len()
            )));
        }
        let dim = rows.first().map_or(0, Vec::len);
        if dim == 0 || rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Config(format!("{} rows are ragged or empty", emb_path.display())));
        }
        let enc = Self::with_vocab(vocab, dim, max_len, fine_tune, store, rng)?;
        let table = store.get_mut(enc.embeddings);
        table.data = rows.into_iter().flatten().collect();
        Ok(enc)
    }

    /// Greedy longest-match-first split of one token.
    pub fn wordpiece(&self, token: &str) -> Vec<usize> {
        let chars: Vec<char> = token.chars().collect();
        let mut pieces = Vec::new();
        let mut start = 0;
        while start < chars.len() {
            let mut end = chars.len();
            let mut found = None;
            while end > start {
                let mut piece: String = chars[start..end].iter().collect();
                if start > 0 {
                    piece.insert_str(0, "##");
                }
                if let Some(&id) = self.index.get(&piece) {
                    found = Some(id);
                    break;
                }
                end -= 1;
            }
            match found {
                Some(id) => {
                    pieces.push(id);
                    start = end;
                }
                None => return vec![self.index[UNK]],
            }
        }
        if pieces.is_empty() {
            pieces.push(self.index[UNK]);
        }
        pieces
    }
}

impl EncoderAdapter for PretrainedEncoder {
    fn kind(&self) -> EncoderKind {
        EncoderKind::Pretrained
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn max_len(&self) -> usize {
        self.max_len
    }

    fn vocab_lines(&self) -> &[String] {
        &self.vocab
    }

    fn encode(&self, g: &mut Graph<'_>, tokens: &[String]) -> Result<EncodedSentence> {
        if tokens.is_empty() {
            return Err(Error::Shape("cannot encode an empty sentence".into()));
        }
        let mut ids = vec![self.index[CLS]];
        let mut groups = Vec::with_capacity(tokens.len());
        for t in tokens {
            let start = ids.len();
            ids.extend(self.wordpiece(t));
            groups.push(start..ids.len());
        }
        if let Some(&sep) = self.index.get(SEP) {
            ids.push(sep);
        }
        if ids.len() > self.max_len {
            return Err(Error::Length {
                len: ids.len(),
                limit: self.max_len,
            });
        }
        let embedded = ids
            .iter()
            .map(|&id| g.gather(self.embeddings, id))
            .collect::<Result<Vec<_>>>()?;
        let mixed = self.mixer.apply(g, &embedded)?;
        let tokens = pool_subtokens_graph(g, &mixed, &groups)?;
        Ok(EncodedSentence {
            context: mixed[0],
            tokens,
        })
    }
}

#[derive(Debug, Clone)]
pub enum Encoder {
    Toy(ToyEncoder),
    Pretrained(PretrainedEncoder),
}

impl EncoderAdapter for Encoder {
    fn kind(&self) -> EncoderKind {
        match self {
            Encoder::Toy(e) => e.kind(),
            Encoder::Pretrained(e) => e.kind(),
        }
    }

    fn dim(&self) -> usize {
        match self {
            Encoder::Toy(e) => e.dim(),
            Encoder::Pretrained(e) => e.dim(),
        }
    }

    fn max_len(&self) -> usize {
        match self {
            Encoder::Toy(e) => e.max_len(),
            Encoder::Pretrained(e) => e.max_len(),
        }
    }

    fn vocab_lines(&self) -> &[String] {
        match self {
            Encoder::Toy(e) => e.vocab_lines(),
            Encoder::Pretrained(e) => e.vocab_lines(),
        }
    }

    fn encode(&self, g: &mut Graph<'_>, tokens: &[String]) -> Result<EncodedSentence> {
        match self {
            Encoder::Toy(e) => e.encode(g, tokens),
            Encoder::Pretrained(e) => e.encode(g, tokens),
        }
    }
}

/// Row of the multi-class feature table for `(head_type, tail_type, bucket)`.
pub fn multiclass_index(head_type: usize, tail_type: usize, bucket: usize, num_entity_types: usize) -> usize {
    (head_type * num_entity_types + tail_type) * NUM_DISTANCE_BUCKETS + bucket
}

/// Span-width, binary distance and (type, type, distance) feature tables.
#[derive(Debug, Clone)]
pub struct EmbeddingTables {
    pub width: ParamId,
    pub binary_distance: Option<ParamId>,
    pub multiclass: Option<ParamId>,
    pub max_width: usize,
    pub num_entity_types: usize,
    pub dim: usize,
}

impl EmbeddingTables {
    pub fn new<R: Rng + ?Sized>(
        dim: usize,
        max_width: usize,
        num_entity_types: usize,
        binary: bool,
        multiclass: bool,
        store: &mut ParamStore,
        rng: &mut R,
    ) -> Self {
        let scale = 1.0 / (dim as f64).sqrt();
        let width = store.add("tables.width", max_width + 1, dim, Init::Uniform(scale), true, rng);
        let binary_distance = binary
            .then(|| store.add("tables.binary_distance", NUM_DISTANCE_BUCKETS, dim, Init::Uniform(scale), true, rng));
        let multiclass = multiclass.then(|| {
            let rows = num_entity_types * num_entity_types * NUM_DISTANCE_BUCKETS;
            store.add("tables.multiclass", rows, dim, Init::Uniform(scale), true, rng)
        });
        EmbeddingTables {
            width,
            binary_distance,
            multiclass,
            max_width,
            num_entity_types,
            dim,
        }
    }

    fn width_row(&self, width: usize) -> Result<usize> {
        if width == 0 || width > self.max_width + 1 {
            return Err(Error::Index {
                what: "span width",
                index: width,
                limit: self.max_width + 1,
            });
        }
        Ok(width - 1)
    }

    fn bucket_row(bucket: usize) -> Result<usize> {
        if bucket >= NUM_DISTANCE_BUCKETS {
            return Err(Error::Index {
                what: "distance bucket",
                index: bucket,
                limit: NUM_DISTANCE_BUCKETS - 1,
            });
        }
        Ok(bucket)
    }

    fn multiclass_row(&self, head_type: usize, tail_type: usize, bucket: usize) -> Result<usize> {
        for t in [head_type, tail_type] {
            if t >= self.num_entity_types {
                return Err(Error::Index {
                    what: "entity type",
                    index: t,
                    limit: self.num_entity_types,
                });
            }
        }
        Ok(multiclass_index(head_type, tail_type, Self::bucket_row(bucket)?, self.num_entity_types))
    }

    fn table(id: Option<ParamId>, what: &str) -> Result<ParamId> {
        id.ok_or_else(|| Error::Config(format!("{what} table is disabled")))
    }

    /// Width embedding for `width` in `[1, max_width + 1]`.
    pub fn lookup_width(&self, params: &ParamStore, width: usize) -> Result<Vec<f64>> {
        Ok(params.get(self.width).row(self.width_row(width)?).to_vec())
    }

    pub fn lookup_binary_feature(&self, params: &ParamStore, bucket: usize) -> Result<Vec<f64>> {
        let t = Self::table(self.binary_distance, "binary feature")?;
        Ok(params.get(t).row(Self::bucket_row(bucket)?).to_vec())
    }

    pub fn lookup_multiclass_feature(
        &self,
        params: &ParamStore,
        head_type: usize,
        tail_type: usize,
        bucket: usize,
    ) -> Result<Vec<f64>> {
        let t = Self::table(self.multiclass, "multi-class feature")?;
        Ok(params.get(t).row(self.multiclass_row(head_type, tail_type, bucket)?).to_vec())
    }

    pub(crate) fn width_node(&self, g: &mut Graph<'_>, width: usize) -> Result<NodeId> {
        let row = self.width_row(width)?;
        g.gather(self.width, row)
    }

    pub(crate) fn binary_node(&self, g: &mut Graph<'_>, bucket: usize) -> Result<NodeId> {
        let t = Self::table(self.binary_distance, "binary feature")?;
        g.gather(t, Self::bucket_row(bucket)?)
    }

    pub(crate) fn multiclass_node(&self, g: &mut Graph<'_>, head_type: usize, tail_type: usize, bucket: usize) -> Result<NodeId> {
        let t = Self::table(self.multiclass, "multi-class feature")?;
        let row = self.multiclass_row(head_type, tail_type, bucket)?;
        g.gather(t, row)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn subtoken_pooling() {
        let subs = vec![vec![1.0, -2.0], vec![0.0, 5.0], vec![3.0, 3.0]];
        let pooled = pool_subtokens(&subs, &[0..2, 2..3]).unwrap();
        assert_eq!(pooled, vec![vec![1.0, 5.0], vec![3.0, 3.0]]);
        let empty_group = 1..1;
        assert!(pool_subtokens(&subs, std::slice::from_ref(&empty_group)).is_err());
    }

    #[test]
    fn table_shapes_and_lookups() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let t = EmbeddingTables::new(8, 10, 4, true, true, &mut store, &mut rng);
        assert_eq!(store.get(t.width).rows, 11);
        assert_eq!(store.get(t.binary_distance.unwrap()).rows, 11);
        assert_eq!(store.get(t.multiclass.unwrap()).rows, 176);

        let w = store.get(t.width);
        assert_eq!(t.lookup_width(&store, 1).unwrap(), w.row(0));
        assert_eq!(t.lookup_width(&store, 11).unwrap(), w.row(10));
        assert_eq!(t.lookup_width(&store, 3).unwrap(), t.lookup_width(&store, 3).unwrap());
        assert!(t.lookup_width(&store, 0).is_err());
        assert!(t.lookup_width(&store, 12).is_err());

        let b = store.get(t.binary_distance.unwrap());
        assert_eq!(t.lookup_binary_feature(&store, 0).unwrap(), b.row(0));
        assert_eq!(t.lookup_binary_feature(&store, 10).unwrap(), b.row(10));
        assert!(matches!(t.lookup_binary_feature(&store, 11), Err(Error::Index { .. })));

        let m = store.get(t.multiclass.unwrap());
        assert_eq!(t.lookup_multiclass_feature(&store, 0, 0, 0).unwrap(), m.row(0));
        assert_eq!(t.lookup_multiclass_feature(&store, 1, 2, 3).unwrap(), m.row(69));
        assert!(t.lookup_multiclass_feature(&store, 4, 0, 0).is_err());
    }

    #[test]
    fn multiclass_index_is_bijective() {
        let k = 4;
        let mut seen = vec![false; k * k * NUM_DISTANCE_BUCKETS];
        for h in 0..k {
            for t in 0..k {
                for b in 0..NUM_DISTANCE_BUCKETS {
                    let i = multiclass_index(h, t, b, k);
                    assert!(!seen[i]);
                    seen[i] = true;
                }
            }
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn toy_encoder_emits_one_vector_per_token() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let vocab = vec!["a".to_string(), "b".to_string()];
        let enc = ToyEncoder::new(vocab, 6, 512, &mut store, &mut rng);
        let toks: Vec<String> = ["a", "zzz", "b", "a"].iter().map(|s| s.to_string()).collect();
        let out = enc.encode_sentence(&store, &toks).unwrap();
        assert_eq!(out.len(), 4);
        assert_eq!(out.dim(), 6);
        // contextual: the same token in different positions differs
        assert_ne!(out.token_vectors[0], out.token_vectors[3]);
        // deterministic
        assert_eq!(out, enc.encode_sentence(&store, &toks).unwrap());
    }

    #[test]
    fn toy_encoder_length_limit() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let enc = ToyEncoder::new(vec![], 4, 3, &mut store, &mut rng);
        let toks: Vec<String> = vec!["x".into(); 4];
        assert!(matches!(enc.encode_sentence(&store, &toks), Err(Error::Length { .. })));
    }

    fn tiny_pretrained(store: &mut ParamStore) -> PretrainedEncoder {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let vocab: Vec<String> = [CLS, SEP, UNK, "play", "##ing", "run", "##s"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let enc = PretrainedEncoder::with_vocab(vocab, 2, 16, false, store, &mut rng).unwrap();
        store.get_mut(enc.embeddings).data = vec![
            0.0, 0.0, // CLS
            0.0, 0.0, // SEP
            0.0, 0.0, // UNK
            1.0, -2.0, // play
            0.0, 5.0, // ##ing
            2.0, 2.0, // run
            1.0, 1.0, // ##s
        ];
        enc
    }

    #[test]
    fn wordpiece_split() {
        let mut store = ParamStore::new();
        let enc = tiny_pretrained(&mut store);
        assert_eq!(enc.wordpiece("playing"), vec![3, 4]);
        assert_eq!(enc.wordpiece("runs"), vec![5, 6]);
        assert_eq!(enc.wordpiece("run"), vec![5]);
        assert_eq!(enc.wordpiece("xyz"), vec![2]);
    }

    #[test]
    fn pretrained_pools_subtokens() {
        let mut store = ParamStore::new();
        let enc = tiny_pretrained(&mut store);
        // A zero mixer makes the mixed vectors equal the raw embeddings.
        let w = store.id("encoder.mixer.weight").unwrap();
        store.get_mut(w).data.iter_mut().for_each(|v| *v = 0.0);
        let toks: Vec<String> = vec!["playing".into(), "run".into()];
        let out = enc.encode_sentence(&store, &toks).unwrap();
        assert_eq!(out.token_vectors, vec![vec![1.0, 5.0], vec![2.0, 2.0]]);
        assert_eq!(out.context_vector, vec![0.0, 0.0]);
    }

    #[test]
    fn pretrained_length_limit_counts_subtokens() {
        let mut store = ParamStore::new();
        let enc = tiny_pretrained(&mut store);
        // 2 specials + 2 pieces per token
        let toks: Vec<String> = vec!["playing".into(); 8];
        assert!(matches!(enc.encode_sentence(&store, &toks), Err(Error::Length { len: 18, limit: 16 })));
    }

    #[test]
    fn pretrained_from_dir() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("vocab.txt"), "[CLS]\n[UNK]\nhello\n").unwrap();
        fs::write(dir.path().join("embeddings.txt"), "0 0 0\n0 0 0\n1 2 3\n").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let enc = PretrainedEncoder::from_dir(dir.path(), 512, true, &mut store, &mut rng).unwrap();
        assert_eq!(enc.dim(), 3);
        assert_eq!(store.get(enc.embeddings).row(2), [1.0, 2.0, 3.0]);
        assert!(store.entry(enc.embeddings).trainable);
    }
}
