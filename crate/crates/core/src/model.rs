//! Span and relation representations, the classifier heads of both phases,
//! and end-to-end inference.
//!
//! Phase one decides Entity/Not-Entity for every enumerated span and
//! Relation/Not-Relation for every ordered pair of predicted entities. Phase
//! two assigns entity types to the surviving spans and relation types to the
//! surviving pairs, the latter conditioned on a (head type, tail type,
//! distance) feature embedding.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::candidates::{self, bucket_distance, entity_distance, Polarity, Span};
use crate::corpus::{EntityMention, LabelVocab, RelationMention, Sentence};
use crate::encoder::{EmbeddingTables, EncodedSentence, Encoder, EncoderAdapter, TokenEmbeddingSequence};
use crate::error::{Error, Result};
use crate::graph::{Graph, Init, NodeId, ParamId, ParamStore};
use crate::math;

/// Architecture switches. The named rows of the ablation table are in
/// [`Ablation`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelFlags {
    pub two_phase: bool,
    pub bi_features: bool,
    pub multi_features: bool,
    pub fusion_enabled: bool,
    pub share_params: bool,
}

impl Default for ModelFlags {
    fn default() -> Self {
        Ablation::Full.flags()
    }
}

impl ModelFlags {
    /// Binary distance features only exist in the two-phase relation classifier.
    pub fn uses_binary_features(&self) -> bool {
        self.two_phase && self.bi_features
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Ablation {
    Full,
    WithoutTwoPhase,
    WithoutBiFeatures,
    WithoutMultiFeatures,
    WithoutBothFeatures,
    WithoutGated,
    Base,
}

impl Ablation {
    pub const ALL: [Ablation; 7] = [
        Ablation::Full,
        Ablation::WithoutTwoPhase,
        Ablation::WithoutBiFeatures,
        Ablation::WithoutMultiFeatures,
        Ablation::WithoutBothFeatures,
        Ablation::WithoutGated,
        Ablation::Base,
    ];

    pub fn flags(self) -> ModelFlags {
        let mut f = ModelFlags {
            two_phase: true,
            bi_features: true,
            multi_features: true,
            fusion_enabled: true,
            share_params: false,
        };
        match self {
            Ablation::Full => {}
            Ablation::WithoutTwoPhase => f.two_phase = false,
            Ablation::WithoutBiFeatures => f.bi_features = false,
            Ablation::WithoutMultiFeatures => f.multi_features = false,
            Ablation::WithoutBothFeatures => {
                f.bi_features = false;
                f.multi_features = false;
            }
            Ablation::WithoutGated => f.fusion_enabled = false,
            Ablation::Base => {
                f.two_phase = false;
                f.bi_features = false;
                f.multi_features = false;
                f.fusion_enabled = false;
            }
        }
        f
    }

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::WithoutTwoPhase => "no-two-phase",
            Ablation::WithoutBiFeatures => "no-bi-features",
            Ablation::WithoutMultiFeatures => "no-multi-features",
            Ablation::WithoutBothFeatures => "no-both-features",
            Ablation::WithoutGated => "no-gated",
            Ablation::Base => "base",
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Ablation::ALL.iter().map(|a| a.name()).collect();
                Error::Config(format!("unknown ablation `{s}` (expected one of {})", names.join(", ")))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Span width threshold; spans have at most `max_width + 1` tokens.
    pub max_width: usize,
    pub flags: ModelFlags,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            max_width: candidates::DEFAULT_MAX_WIDTH,
            flags: ModelFlags::default(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Site {
    Gated { score: ParamId, bias: ParamId, arity: usize },
    Concat { arity: usize },
}

impl Site {
    fn apply(&self, g: &mut Graph<'_>, inputs: &[NodeId]) -> Result<NodeId> {
        match *self {
            Site::Gated { score, bias, arity } => {
                if inputs.len() != arity {
                    return Err(Error::Shape(format!(
                        "fusion site expects {arity} inputs, got {}",
                        inputs.len()
                    )));
                }
                g.gate(score, bias, inputs)
            }
            Site::Concat { arity } => {
                if inputs.len() != arity {
                    return Err(Error::Shape(format!(
                        "fusion site expects {arity} inputs, got {}",
                        inputs.len()
                    )));
                }
                Ok(g.concat(inputs))
            }
        }
    }
}

/// Affine classifier `weight x + bias`.
#[derive(Debug, Clone, Copy)]
pub struct ClassifierHead {
    pub weight: ParamId,
    pub bias: ParamId,
    pub out: usize,
    pub input: usize,
}

impl ClassifierHead {
    fn new<R: Rng + ?Sized>(name: &str, out: usize, input: usize, store: &mut ParamStore, rng: &mut R) -> Self {
        let scale = 1.0 / (input as f64).sqrt();
        ClassifierHead {
            weight: store.add(format!("{name}.weight"), out, input, Init::Uniform(scale), true, rng),
            bias: store.add(format!("{name}.bias"), 1, out, Init::Zeros, false, rng),
            out,
            input,
        }
    }

    pub(crate) fn logits(&self, g: &mut Graph<'_>, x: NodeId) -> Result<NodeId> {
        g.linear(self.weight, Some(self.bias), x)
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) enum Heads {
    TwoPhase {
        entity_binary: ClassifierHead,
        relation_binary: ClassifierHead,
        entity_type: ClassifierHead,
        relation_type: ClassifierHead,
    },
    /// `(|types| + 1)`-way heads whose last class is the negative one.
    SinglePhase {
        entity: ClassifierHead,
        relation: ClassifierHead,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpanRepresentation {
    pub token_maxpool: Vec<f64>,
    pub context: Vec<f64>,
    pub width_embed: Vec<f64>,
    pub fused: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct SpanNodes {
    pub fused: NodeId,
    maxpool: NodeId,
    context: NodeId,
    width: NodeId,
}

/// Sigmoid scores of a two-way head and the argmax polarity (ties to index 0).
pub fn binary_decision(logits: &[f64]) -> (Polarity, [f64; 2]) {
    let scores = [math::sigmoid(logits[0]), math::sigmoid(logits[1])];
    (Polarity::from_index(math::argmax(&scores)), scores)
}

/// Softmax distribution and argmax class (ties to the lowest id).
pub fn type_decision(logits: &[f64]) -> (usize, Vec<f64>) {
    let dist = math::softmax(logits);
    (math::argmax(&dist), dist)
}

/// Predicted annotations for one sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub entities: Vec<EntityMention>,
    pub relations: Vec<RelationMention>,
}

impl Prediction {
    pub fn into_sentence(self, id: impl Into<String>, tokens: Vec<String>) -> Sentence {
        Sentence {
            id: id.into(),
            tokens,
            entities: self.entities,
            relations: self.relations,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Model {
    pub params: ParamStore,
    pub encoder: Encoder,
    pub tables: EmbeddingTables,
    pub vocab: LabelVocab,
    pub config: ModelConfig,
    span_site: Site,
    rel1_site: Site,
    rel2_site: Option<Site>,
    pub(crate) heads: Heads,
}

const SHARED_SITE: &str = "fusion.shared";

impl Model {
    /// Adds the feature tables, fusion sites and heads on top of an encoder
    /// already registered in `params`.
    pub fn build<R: Rng + ?Sized>(
        mut params: ParamStore,
        encoder: Encoder,
        vocab: LabelVocab,
        config: ModelConfig,
        rng: &mut R,
    ) -> Result<Self> {
        if vocab.num_entity_types() == 0 {
            return Err(Error::Config("model needs at least one entity type".into()));
        }
        let flags = config.flags;
        let d = encoder.dim();
        let n_ent = vocab.num_entity_types();
        let n_rel = vocab.num_relation_types();
        let tables = EmbeddingTables::new(
            d,
            config.max_width,
            n_ent,
            flags.uses_binary_features(),
            flags.multi_features,
            &mut params,
            rng,
        );

        let rel1_arity = if flags.uses_binary_features() { 4 } else { 3 };
        let mut site = |name: &str, arity: usize, params: &mut ParamStore| -> Site {
            if !flags.fusion_enabled {
                return Site::Concat { arity };
            }
            let prefix = if flags.share_params { SHARED_SITE } else { name };
            let (score, bias) = match params.id(&format!("{prefix}.score")) {
                Some(score) => (score, params.id(&format!("{prefix}.bias")).expect("paired bias")),
                None => {
                    let scale = 1.0 / (d as f64).sqrt();
                    let score = params.add(format!("{prefix}.score"), 1, d, Init::Uniform(scale), true, rng);
                    let bias = params.add(format!("{prefix}.bias"), 1, 1, Init::Zeros, false, rng);
                    (score, bias)
                }
            };
            Site::Gated { score, bias, arity }
        };
        let span_site = site("fusion.span", 3, &mut params);
        let rel1_site = site("fusion.relation", rel1_arity, &mut params);
        let rel2_site = flags.multi_features.then(|| site("fusion.relation_type", 2, &mut params));

        let dims = RepresentationDims::new(d, flags);
        let heads = if flags.two_phase {
            Heads::TwoPhase {
                entity_binary: ClassifierHead::new("head.entity_binary", 2, dims.span, &mut params, rng),
                relation_binary: ClassifierHead::new("head.relation_binary", 2, dims.relation, &mut params, rng),
                entity_type: ClassifierHead::new("head.entity_type", n_ent, dims.span, &mut params, rng),
                relation_type: ClassifierHead::new("head.relation_type", n_rel.max(1), dims.relation_typed, &mut params, rng),
            }
        } else {
            Heads::SinglePhase {
                entity: ClassifierHead::new("head.entity", n_ent + 1, dims.span, &mut params, rng),
                relation: ClassifierHead::new("head.relation", n_rel + 1, dims.relation_typed, &mut params, rng),
            }
        };
        Ok(Model {
            params,
            encoder,
            tables,
            vocab,
            config,
            span_site,
            rel1_site,
            rel2_site,
            heads,
        })
    }

    pub fn dim(&self) -> usize {
        self.encoder.dim()
    }

    pub fn flags(&self) -> ModelFlags {
        self.config.flags
    }

    pub fn num_trainable_params(&self) -> usize {
        self.params.num_trainable()
    }

    pub fn encode_sentence(&self, tokens: &[String]) -> Result<TokenEmbeddingSequence> {
        self.encoder.encode_sentence(&self.params, tokens)
    }

    // ---- tape-level building blocks -------------------------------------

    pub(crate) fn span_nodes(&self, g: &mut Graph<'_>, enc: &EncodedSentence, span: Span) -> Result<SpanNodes> {
        if span.end >= enc.tokens.len() || span.start > span.end {
            return Err(Error::Index {
                what: "span end",
                index: span.end,
                limit: enc.tokens.len(),
            });
        }
        let maxpool = g.max_pool(&enc.tokens[span.start..=span.end])?;
        let width = self.tables.width_node(g, span.width())?;
        let fused = self.span_site.apply(g, &[maxpool, enc.context, width])?;
        Ok(SpanNodes {
            fused,
            maxpool,
            context: enc.context,
            width,
        })
    }

    pub(crate) fn context_node(&self, g: &mut Graph<'_>, enc: &EncodedSentence, head: Span, tail: Span) -> Result<NodeId> {
        let between = head.between(&tail);
        if between.is_empty() {
            Ok(g.input(vec![0.0; self.dim()]))
        } else {
            g.max_pool(&enc.tokens[between])
        }
    }

    pub(crate) fn rel1_node(&self, g: &mut Graph<'_>, head: NodeId, tail: NodeId, context: NodeId, bucket: usize) -> Result<NodeId> {
        if self.flags().uses_binary_features() {
            let feature = self.tables.binary_node(g, bucket)?;
            self.rel1_site.apply(g, &[head, tail, context, feature])
        } else {
            self.rel1_site.apply(g, &[head, tail, context])
        }
    }

    pub(crate) fn rel2_node(&self, g: &mut Graph<'_>, rel1: NodeId, head_type: usize, tail_type: usize, bucket: usize) -> Result<NodeId> {
        match self.rel2_site {
            Some(site) => {
                let feature = self.tables.multiclass_node(g, head_type, tail_type, bucket)?;
                site.apply(g, &[rel1, feature])
            }
            None => Ok(rel1),
        }
    }

    fn two_phase_heads(&self) -> Result<(ClassifierHead, ClassifierHead, ClassifierHead, ClassifierHead)> {
        match self.heads {
            Heads::TwoPhase {
                entity_binary,
                relation_binary,
                entity_type,
                relation_type,
            } => Ok((entity_binary, relation_binary, entity_type, relation_type)),
            Heads::SinglePhase { .. } => Err(Error::Config("two-phase heads are disabled".into())),
        }
    }

    fn eval_head(&self, head: ClassifierHead, rep: &[f64]) -> Result<Vec<f64>> {
        let mut g = Graph::new(&self.params);
        let x = g.input(rep.to_vec());
        let logits = head.logits(&mut g, x)?;
        Ok(g.value(logits).to_vec())
    }

    // ---- value-level operations -----------------------------------------

    pub fn span_representation(&self, span: Span, embeddings: &TokenEmbeddingSequence) -> Result<SpanRepresentation> {
        let mut g = Graph::new(&self.params);
        let enc = embeddings.to_graph(&mut g);
        let nodes = self.span_nodes(&mut g, &enc, span)?;
        Ok(SpanRepresentation {
            token_maxpool: g.value(nodes.maxpool).to_vec(),
            context: g.value(nodes.context).to_vec(),
            width_embed: g.value(nodes.width).to_vec(),
            fused: g.value(nodes.fused).to_vec(),
        })
    }

    pub fn classify_entity_binary(&self, rep: &[f64]) -> Result<(Polarity, [f64; 2])> {
        let (head, ..) = self.two_phase_heads()?;
        Ok(binary_decision(&self.eval_head(head, rep)?))
    }

    /// Max over the tokens strictly between the spans; zeros if there are none.
    pub fn relation_context_representation(&self, head: Span, tail: Span, embeddings: &TokenEmbeddingSequence) -> Result<Vec<f64>> {
        let mut g = Graph::new(&self.params);
        let enc = embeddings.to_graph(&mut g);
        let node = self.context_node(&mut g, &enc, head, tail)?;
        Ok(g.value(node).to_vec())
    }

    pub fn relation_representation_phase1(
        &self,
        head_rep: &[f64],
        tail_rep: &[f64],
        context_rep: &[f64],
        distance_bucket: usize,
    ) -> Result<Vec<f64>> {
        let mut g = Graph::new(&self.params);
        let h = g.input(head_rep.to_vec());
        let t = g.input(tail_rep.to_vec());
        let c = g.input(context_rep.to_vec());
        let r = self.rel1_node(&mut g, h, t, c, distance_bucket)?;
        Ok(g.value(r).to_vec())
    }

    pub fn classify_relation_binary(&self, rep: &[f64]) -> Result<(Polarity, [f64; 2])> {
        let (_, head, ..) = self.two_phase_heads()?;
        Ok(binary_decision(&self.eval_head(head, rep)?))
    }

    pub fn predict_entity_type(&self, rep: &[f64]) -> Result<(usize, Vec<f64>)> {
        let (_, _, head, _) = self.two_phase_heads()?;
        Ok(type_decision(&self.eval_head(head, rep)?))
    }

    pub fn predict_relation_type(
        &self,
        phase1_rep: &[f64],
        head_type: usize,
        tail_type: usize,
        distance_bucket: usize,
    ) -> Result<(usize, Vec<f64>)> {
        let (.., head) = self.two_phase_heads()?;
        let mut g = Graph::new(&self.params);
        let r = g.input(phase1_rep.to_vec());
        let fused = self.rel2_node(&mut g, r, head_type, tail_type, distance_bucket)?;
        let logits = head.logits(&mut g, fused)?;
        Ok(type_decision(g.value(logits)))
    }

    /// Full pipeline over one token sequence.
    pub fn forward_inference(&self, tokens: &[String]) -> Result<Prediction> {
        let mut g = Graph::new(&self.params);
        let enc = self.encoder.encode(&mut g, tokens)?;
        let spans = candidates::enumerate_spans(tokens.len(), self.config.max_width);
        match self.heads {
            Heads::TwoPhase {
                entity_binary,
                relation_binary,
                entity_type,
                relation_type,
            } => {
                // phase one: coarse entities
                let mut coarse: Vec<(Span, SpanNodes)> = Vec::new();
                for &span in &spans {
                    let nodes = self.span_nodes(&mut g, &enc, span)?;
                    let logits = entity_binary.logits(&mut g, nodes.fused)?;
                    if binary_decision(g.value(logits)).0 == Polarity::Positive {
                        coarse.push((span, nodes));
                    }
                }
                // phase two: entity types for every coarse entity
                let mut entities = Vec::with_capacity(coarse.len());
                let mut types = Vec::with_capacity(coarse.len());
                for (span, nodes) in &coarse {
                    let logits = entity_type.logits(&mut g, nodes.fused)?;
                    let (ty, _) = type_decision(g.value(logits));
                    types.push(ty);
                    entities.push(EntityMention::new(span.start, span.end, self.entity_label(ty)));
                }
                // phase one: coarse relations over ordered pairs
                let coarse_spans: Vec<Span> = coarse.iter().map(|(s, _)| *s).collect();
                let mut relations = Vec::new();
                for (i, j) in candidates::build_relation_candidates(&coarse_spans) {
                    let (hs, hn) = coarse[i];
                    let (ts, tn) = coarse[j];
                    let bucket = bucket_distance(entity_distance(&hs, &ts));
                    let ctx = self.context_node(&mut g, &enc, hs, ts)?;
                    let rel1 = self.rel1_node(&mut g, hn.fused, tn.fused, ctx, bucket)?;
                    let logits = relation_binary.logits(&mut g, rel1)?;
                    if binary_decision(g.value(logits)).0 != Polarity::Positive {
                        continue;
                    }
                    // phase two: relation type from predicted entity types
                    let fused = self.rel2_node(&mut g, rel1, types[i], types[j], bucket)?;
                    let logits = relation_type.logits(&mut g, fused)?;
                    let (ty, _) = type_decision(g.value(logits));
                    if let Some(label) = self.vocab.relation_label(ty) {
                        relations.push(RelationMention::new(i, j, label));
                    }
                }
                Ok(Prediction { entities, relations })
            }
            Heads::SinglePhase { entity, relation } => {
                let none_entity = self.vocab.num_entity_types();
                let none_relation = self.vocab.num_relation_types();
                let mut kept: Vec<(Span, SpanNodes, usize)> = Vec::new();
                for &span in &spans {
                    let nodes = self.span_nodes(&mut g, &enc, span)?;
                    let logits = entity.logits(&mut g, nodes.fused)?;
                    let (ty, _) = type_decision(g.value(logits));
                    if ty != none_entity {
                        kept.push((span, nodes, ty));
                    }
                }
                let entities: Vec<EntityMention> = kept
                    .iter()
                    .map(|(s, _, ty)| EntityMention::new(s.start, s.end, self.entity_label(*ty)))
                    .collect();
                let kept_spans: Vec<Span> = kept.iter().map(|(s, ..)| *s).collect();
                let mut relations = Vec::new();
                for (i, j) in candidates::build_relation_candidates(&kept_spans) {
                    let (hs, hn, hty) = kept[i];
                    let (ts, tn, tty) = kept[j];
                    let bucket = bucket_distance(entity_distance(&hs, &ts));
                    let ctx = self.context_node(&mut g, &enc, hs, ts)?;
                    let rel1 = self.rel1_node(&mut g, hn.fused, tn.fused, ctx, bucket)?;
                    let fused = self.rel2_node(&mut g, rel1, hty, tty, bucket)?;
                    let logits = relation.logits(&mut g, fused)?;
                    let (ty, _) = type_decision(g.value(logits));
                    if ty != none_relation {
                        relations.push(RelationMention::new(i, j, self.vocab.relation_label(ty).unwrap_or_default()));
                    }
                }
                Ok(Prediction { entities, relations })
            }
        }
    }

    pub fn predict_sentence(&self, sentence: &Sentence) -> Result<Sentence> {
        let p = self.forward_inference(&sentence.tokens)?;
        Ok(p.into_sentence(sentence.id.clone(), sentence.tokens.clone()))
    }

    fn entity_label(&self, id: usize) -> String {
        self.vocab.entity_label(id).unwrap_or_default().to_string()
    }
}

/// Output widths of each representation for encoder dimension `d`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RepresentationDims {
    pub span: usize,
    /// Input of the phase-one relation head.
    pub relation: usize,
    /// Input of the relation type head.
    pub relation_typed: usize,
}

impl RepresentationDims {
    /// With gating every representation has width `d`. With concatenation a
    /// site's width is the sum of its input widths.
    pub fn new(d: usize, flags: ModelFlags) -> Self {
        if flags.fusion_enabled {
            return RepresentationDims {
                span: d,
                relation: d,
                relation_typed: d,
            };
        }
        let span = 3 * d;
        let relation = 2 * span + d + if flags.uses_binary_features() { d } else { 0 };
        let relation_typed = relation + if flags.multi_features { d } else { 0 };
        RepresentationDims {
            span,
            relation,
            relation_typed,
        }
    }
}
