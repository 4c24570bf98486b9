//! Losses, the optimizer and the training loop.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::candidates::{self, Polarity, Span};
use crate::corpus::Sentence;
use crate::encoder::EncoderAdapter;
use crate::error::{Error, Result};
use crate::evaluation::{self, MatchPolicy, Scores};
use crate::graph::{Gradients, Graph, NodeId, ParamStore};
use crate::math;
use crate::model::{Heads, Model, SpanNodes};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub warmup_fraction: f64,
    pub batch_size: usize,
    /// Root seed; per-purpose streams are split from it.
    pub seed: u64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub max_grad_norm: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 120,
            learning_rate: 5e-5,
            weight_decay: 1e-2,
            warmup_fraction: 0.1,
            batch_size: 8,
            seed: 42,
            max_grad_norm: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("training.epochs and training.batch_size must be positive".into()));
        }
        if !(self.learning_rate >= 0.0 && self.weight_decay >= 0.0 && self.max_grad_norm >= 0.0) {
            return Err(Error::Config(
                "training.learning_rate, weight_decay and max_grad_norm must be non-negative".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return Err(Error::Config("training.warmup_fraction must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    pub neg_entities: usize,
    pub neg_relations: usize,
    /// Overrides the sampling stream of the root seed.
    pub seed: Option<u64>,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            neg_entities: candidates::DEFAULT_NEG_ENTITIES,
            neg_relations: candidates::DEFAULT_NEG_RELATIONS,
            seed: None,
        }
    }
}

/// Randomness purposes split from one root seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Init = 1,
    Sampling = 2,
    Shuffle = 3,
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// Per-task losses and their sum.
///
/// Without the two-phase split, the `(|types| + 1)`-way entity and relation
/// losses are reported in the type slots and the binary slots stay 0.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub entity_binary: f64,
    pub relation_binary: f64,
    pub entity_type: f64,
    pub relation_type: f64,
    pub total: f64,
}

/// Mean over instances of the two-coordinate binary cross-entropy. An empty
/// batch contributes 0.
pub fn bce_loss(predictions: &[[f64; 2]], targets: &[[f64; 2]]) -> f64 {
    if predictions.is_empty() {
        return 0.0;
    }
    let sum: f64 = predictions
        .iter()
        .zip(targets)
        .map(|(p, y)| math::bce_term(p[0], y[0]) + math::bce_term(p[1], y[1]))
        .sum();
    sum / predictions.len() as f64
}

/// Mean negative log-probability of the target class. An empty batch contributes 0.
pub fn ce_loss(distributions: &[Vec<f64>], targets: &[usize]) -> f64 {
    if distributions.is_empty() {
        return 0.0;
    }
    let sum: f64 = distributions
        .iter()
        .zip(targets)
        .map(|(d, &t)| math::nll_term(d[t]))
        .sum();
    sum / distributions.len() as f64
}

pub fn joint_loss(entity_binary: f64, relation_binary: f64, entity_type: f64, relation_type: f64) -> LossReport {
    LossReport {
        entity_binary,
        relation_binary,
        entity_type,
        relation_type,
        total: entity_binary + relation_binary + entity_type + relation_type,
    }
}

/// Tape nodes of one batch's losses; `None` marks an empty task.
#[derive(Debug, Clone, Copy, Default)]
pub struct LossNodes {
    pub entity_binary: Option<NodeId>,
    pub relation_binary: Option<NodeId>,
    pub entity_type: Option<NodeId>,
    pub relation_type: Option<NodeId>,
}

impl LossNodes {
    pub fn total(&self, g: &mut Graph<'_>) -> Option<NodeId> {
        let parts: Vec<NodeId> = [self.entity_binary, self.relation_binary, self.entity_type, self.relation_type]
            .into_iter()
            .flatten()
            .collect();
        (!parts.is_empty()).then(|| g.sum(&parts))
    }

    pub fn report(&self, g: &Graph<'_>) -> LossReport {
        let v = |n: Option<NodeId>| n.map_or(0.0, |n| g.scalar(n));
        joint_loss(
            v(self.entity_binary),
            v(self.relation_binary),
            v(self.entity_type),
            v(self.relation_type),
        )
    }
}

fn mean_node(g: &mut Graph<'_>, terms: &[NodeId]) -> Option<NodeId> {
    if terms.is_empty() {
        return None;
    }
    let s = g.sum(terms);
    Some(g.scale(s, 1.0 / terms.len() as f64))
}

/// Builds the joint loss of `sentences` on `g`, sampling negatives from `rng`.
///
/// Phase one trains on gold entities/relations plus sampled negatives. Phase
/// two trains on gold entities/relations only, conditioning relation types on
/// the gold entity types.
pub fn batch_loss(
    model: &Model,
    g: &mut Graph<'_>,
    sentences: &[&Sentence],
    sampling: &SamplingConfig,
    rng: &mut ChaCha8Rng,
) -> Result<LossNodes> {
    let max_span = model.config.max_width + 1;
    let mut eb = Vec::new();
    let mut rb = Vec::new();
    let mut et = Vec::new();
    let mut rt = Vec::new();
    let type_of = |label: &str, s: &Sentence| {
        model.vocab.entity_id(label).ok_or_else(|| Error::Vocab {
            id: s.id.clone(),
            kind: "entity",
            label: label.to_string(),
        })
    };
    let relation_of = |label: &str, s: &Sentence| {
        model.vocab.relation_id(label).ok_or_else(|| Error::Vocab {
            id: s.id.clone(),
            kind: "relation",
            label: label.to_string(),
        })
    };

    for &sentence in sentences {
        let enc = model.encoder.encode(g, &sentence.tokens)?;
        let spans = candidates::enumerate_spans(sentence.len(), model.config.max_width);
        let samples = candidates::sample_negative_spans(sentence, &spans, sampling.neg_entities, rng);
        let mut cache: HashMap<Span, SpanNodes> = HashMap::new();
        for sample in samples.iter().filter(|s| s.span.width() <= max_span) {
            let nodes = match cache.get(&sample.span) {
                Some(n) => *n,
                None => {
                    let n = model.span_nodes(g, &enc, sample.span)?;
                    cache.insert(sample.span, n);
                    n
                }
            };
            match model.heads {
                Heads::TwoPhase {
                    entity_binary,
                    entity_type,
                    ..
                } => {
                    let logits = entity_binary.logits(g, nodes.fused)?;
                    let probs = g.sigmoid(logits);
                    eb.push(g.bce(probs, sample.polarity.one_hot().to_vec())?);
                    if let Some(label) = &sample.gold_type {
                        let logits = entity_type.logits(g, nodes.fused)?;
                        let dist = g.softmax(logits);
                        et.push(g.nll(dist, type_of(label, sentence)?)?);
                    }
                }
                Heads::SinglePhase { entity, .. } => {
                    let target = match &sample.gold_type {
                        Some(label) => type_of(label, sentence)?,
                        None => model.vocab.num_entity_types(),
                    };
                    let logits = entity.logits(g, nodes.fused)?;
                    let dist = g.softmax(logits);
                    et.push(g.nll(dist, target)?);
                }
            }
        }

        let rels = candidates::sample_negative_relations(sentence, sampling.neg_relations, rng);
        for cand in rels
            .iter()
            .filter(|c| c.head.width() <= max_span && c.tail.width() <= max_span)
        {
            let head = cache[&cand.head].fused;
            let tail = cache[&cand.tail].fused;
            let ctx = model.context_node(g, &enc, cand.head, cand.tail)?;
            let rel1 = model.rel1_node(g, head, tail, ctx, cand.distance_bucket)?;
            let head_type = type_of(&sentence.entities[cand.head_entity].label, sentence)?;
            let tail_type = type_of(&sentence.entities[cand.tail_entity].label, sentence)?;
            match model.heads {
                Heads::TwoPhase {
                    relation_binary,
                    relation_type,
                    ..
                } => {
                    let logits = relation_binary.logits(g, rel1)?;
                    let probs = g.sigmoid(logits);
                    rb.push(g.bce(probs, cand.polarity.one_hot().to_vec())?);
                    if let Some(label) = &cand.gold_type {
                        let fused = model.rel2_node(g, rel1, head_type, tail_type, cand.distance_bucket)?;
                        let logits = relation_type.logits(g, fused)?;
                        let dist = g.softmax(logits);
                        rt.push(g.nll(dist, relation_of(label, sentence)?)?);
                    }
                }
                Heads::SinglePhase { relation, .. } => {
                    let target = match (&cand.gold_type, cand.polarity) {
                        (Some(label), Polarity::Positive) => relation_of(label, sentence)?,
                        _ => model.vocab.num_relation_types(),
                    };
                    let fused = model.rel2_node(g, rel1, head_type, tail_type, cand.distance_bucket)?;
                    let logits = relation.logits(g, fused)?;
                    let dist = g.softmax(logits);
                    rt.push(g.nll(dist, target)?);
                }
            }
        }
    }
    Ok(LossNodes {
        entity_binary: mean_node(g, &eb),
        relation_binary: mean_node(g, &rb),
        entity_type: mean_node(g, &et),
        relation_type: mean_node(g, &rt),
    })
}

/// Adaptive moments with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    moments: Vec<Option<(Vec<f64>, Vec<f64>)>>,
}

impl AdamW {
    pub fn new(params: &ParamStore, weight_decay: f64) -> Self {
        AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-6,
            weight_decay,
            step: 0,
            moments: vec![None; params.len()],
        }
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &Gradients, lr: f64) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (i, entry) in params.entries_mut().iter_mut().enumerate() {
            if !entry.trainable {
                continue;
            }
            let Some(g) = grads.get(crate::graph::ParamId(i)) else {
                continue;
            };
            let n = entry.tensor.len();
            let (m, v) = self.moments[i].get_or_insert_with(|| (vec![0.0; n], vec![0.0; n]));
            let decay = if entry.decay { self.weight_decay } else { 0.0 };
            for k in 0..n {
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g[k];
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g[k] * g[k];
                let update = (m[k] / bc1) / ((v[k] / bc2).sqrt() + self.eps);
                let p = &mut entry.tensor.data[k];
                *p -= lr * (update + decay * *p);
            }
        }
    }
}

/// Linear warmup to `base` over the first `warmup` steps, then linear decay to 0.
pub fn scheduled_lr(base: f64, step: usize, warmup: usize, total: usize) -> f64 {
    if step < warmup {
        base * (step + 1) as f64 / warmup as f64
    } else if total > warmup {
        base * (total - step) as f64 / (total - warmup) as f64
    } else {
        base
    }
}

fn clip_gradients(grads: &mut Gradients, params: &ParamStore, max_norm: f64) {
    if max_norm <= 0.0 {
        return;
    }
    let mut sq = 0.0;
    for i in 0..params.len() {
        if let Some(g) = grads.get(crate::graph::ParamId(i)) {
            sq += g.iter().map(|v| v * v).sum::<f64>();
        }
    }
    let norm = sq.sqrt();
    if norm > max_norm {
        grads.scale(max_norm / norm);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: LossReport,
    pub dev: Option<Scores>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    /// Epoch and parameters with the best dev relation F1.
    pub best: Option<(usize, ParamStore)>,
    pub log: Vec<EpochLog>,
}

#[derive(Debug, Clone)]
pub struct TrainSettings<'a> {
    pub train: TrainConfig,
    pub sampling: SamplingConfig,
    pub dev: Option<&'a [Sentence]>,
    pub policy: MatchPolicy,
}

/// Runs the full optimization; deterministic for a fixed seed.
pub fn train(mut model: Model, corpus: &[Sentence], settings: &TrainSettings<'_>) -> Result<TrainOutcome> {
    let cfg = &settings.train;
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(Error::Config("training corpus is empty".into()));
    }
    let mut sample_rng = stream_rng(settings.sampling.seed.unwrap_or(cfg.seed), Stream::Sampling);
    let mut shuffle_rng = stream_rng(cfg.seed, Stream::Shuffle);
    let batches_per_epoch = corpus.len().div_ceil(cfg.batch_size);
    let total_steps = cfg.epochs * batches_per_epoch;
    let warmup = (cfg.warmup_fraction * total_steps as f64).floor() as usize;
    let mut opt = AdamW::new(&model.params, cfg.weight_decay);
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, ParamStore, f64)> = None;
    let mut step = 0;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut sum = LossReport::default();
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&Sentence> = chunk.iter().map(|&i| &corpus[i]).collect();
            let mut grads = Gradients::new(&model.params);
            let report = {
                let mut g = Graph::new(&model.params);
                let nodes = batch_loss(&model, &mut g, &batch, &settings.sampling, &mut sample_rng)?;
                let report = nodes.report(&g);
                if !report.total.is_finite() {
                    return Err(divergence(epoch, b, &batch));
                }
                if let Some(total) = nodes.total(&mut g) {
                    g.backward(total, &mut grads);
                }
                report
            };
            if !grads.is_finite() {
                return Err(divergence(epoch, b, &batch));
            }
            clip_gradients(&mut grads, &model.params, cfg.max_grad_norm);
            let lr = scheduled_lr(cfg.learning_rate, step, warmup, total_steps);
            opt.step(&mut model.params, &grads, lr);
            step += 1;
            sum.entity_binary += report.entity_binary;
            sum.relation_binary += report.relation_binary;
            sum.entity_type += report.entity_type;
            sum.relation_type += report.relation_type;
        }
        let n = batches_per_epoch as f64;
        let loss = joint_loss(
            sum.entity_binary / n,
            sum.relation_binary / n,
            sum.entity_type / n,
            sum.relation_type / n,
        );
        let dev = match settings.dev {
            Some(dev) if !dev.is_empty() => {
                let predicted = dev.iter().map(|s| model.predict_sentence(s)).collect::<Result<Vec<_>>>()?;
                Some(evaluation::score(dev, &predicted, &settings.policy)?)
            }
            _ => None,
        };
        if let Some(scores) = &dev {
            if best.as_ref().is_none_or(|(_, _, f1)| scores.re.f1 > *f1) {
                best = Some((epoch, model.params.clone(), scores.re.f1));
            }
        }
        log::info!(
            "epoch {:>4} loss {:.6} (eb {:.4} rb {:.4} et {:.4} rt {:.4}){}",
            epoch + 1,
            loss.total,
            loss.entity_binary,
            loss.relation_binary,
            loss.entity_type,
            loss.relation_type,
            dev.as_ref()
                .map(|s| format!(" dev ner {:.4} re {:.4}", s.ner.f1, s.re.f1))
                .unwrap_or_default()
        );
        log.push(EpochLog { epoch: epoch + 1, loss, dev });
    }
    Ok(TrainOutcome {
        model,
        best: best.map(|(e, p, _)| (e + 1, p)),
        log,
    })
}

fn divergence(epoch: usize, batch: usize, sentences: &[&Sentence]) -> Error {
    Error::Divergence {
        epoch: epoch + 1,
        batch,
        sentences: sentences.iter().map(|s| s.id.as_str()).collect::<Vec<_>>().join(","),
    }
}
