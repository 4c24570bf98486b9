//! Fixtures shared by the integration tests.
#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spanrel_core::{EntityMention, RelationMention, Sentence};

const PER: &[&str] = &["alice", "bob", "carol", "dave", "erin", "frank"];
const SURNAME: &[&str] = &["smith", "jones", "brown"];
const ORG: &[&str] = &["acme", "globex", "initech", "umbrella", "hooli"];
const LOC: &[&str] = &["paris", "berlin", "tokyo", "lima", "oslo"];

struct Builder {
    tokens: Vec<String>,
    entities: Vec<EntityMention>,
    relations: Vec<RelationMention>,
}

impl Builder {
    fn new() -> Self {
        Builder {
            tokens: Vec::new(),
            entities: Vec::new(),
            relations: Vec::new(),
        }
    }

    fn words(&mut self, words: &str) {
        self.tokens.extend(words.split_whitespace().map(str::to_string));
    }

    fn entity(&mut self, words: &[&str], label: &str) -> usize {
        let start = self.tokens.len();
        self.tokens.extend(words.iter().map(|w| w.to_string()));
        self.entities
            .push(EntityMention::new(start, self.tokens.len() - 1, label));
        self.entities.len() - 1
    }

    fn person(&mut self, rng: &mut ChaCha8Rng) -> usize {
        let first = *PER.choose(rng).unwrap();
        if rng.gen_bool(0.5) {
            self.entity(&[first, SURNAME.choose(rng).unwrap()], "PER")
        } else {
            self.entity(&[first], "PER")
        }
    }

    fn org(&mut self, rng: &mut ChaCha8Rng) -> usize {
        let name = *ORG.choose(rng).unwrap();
        if rng.gen_bool(0.4) {
            self.entity(&[name, "corp"], "ORG")
        } else {
            self.entity(&[name], "ORG")
        }
    }

    fn loc(&mut self, rng: &mut ChaCha8Rng) -> usize {
        self.entity(&[LOC.choose(rng).unwrap()], "LOC")
    }

    fn relate(&mut self, head: usize, tail: usize, label: &str) {
        self.relations.push(RelationMention::new(head, tail, label));
    }

    fn finish(self, id: String) -> Sentence {
        Sentence {
            id,
            tokens: self.tokens,
            entities: self.entities,
            relations: self.relations,
        }
    }
}

/// Templated sentences over three entity types and two relation types.
pub fn synthetic_corpus(n: usize, seed: u64) -> Vec<Sentence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let mut b = Builder::new();
            match i % 4 {
                0 => {
                    let p = b.person(&mut rng);
                    b.words("works for");
                    let o = b.org(&mut rng);
                    b.words("since last year .");
                    b.relate(p, o, "Work_For");
                }
                1 => {
                    b.words("the firm");
                    let o = b.org(&mut rng);
                    b.words("is based in");
                    let l = b.loc(&mut rng);
                    b.words(".");
                    b.relate(o, l, "Located_In");
                }
                2 => {
                    let p = b.person(&mut rng);
                    b.words("of");
                    let o = b.org(&mut rng);
                    b.words("in");
                    let l = b.loc(&mut rng);
                    b.words("said on monday that sales rose .");
                    b.relate(p, o, "Work_For");
                    b.relate(o, l, "Located_In");
                }
                _ => {
                    let _ = b.person(&mut rng);
                    b.words("met");
                    let _ = b.person(&mut rng);
                    b.words("in");
                    let _ = b.loc(&mut rng);
                    b.words("for lunch .");
                }
            }
            b.finish(format!("syn-{i:03}"))
        })
        .collect()
}

/// Random sentence of `n` tokens with non-nested entities and random relations.
pub fn random_sentence(rng: &mut impl Rng, id: String, n: usize, entity_types: &[&str], relation_types: &[&str]) -> Sentence {
    let tokens: Vec<String> = (0..n).map(|i| format!("t{}", (i * 7 + rng.gen_range(0..5)) % 13)).collect();
    let mut entities = Vec::new();
    let mut pos = 0;
    while pos < n {
        if rng.gen_bool(0.35) {
            let width = rng.gen_range(1..=4).min(n - pos);
            let label = entity_types[rng.gen_range(0..entity_types.len())];
            entities.push(EntityMention::new(pos, pos + width - 1, label));
            pos += width;
        } else {
            pos += 1;
        }
    }
    let mut relations = Vec::new();
    if entities.len() >= 2 && !relation_types.is_empty() {
        for _ in 0..rng.gen_range(0..=entities.len()) {
            let h = rng.gen_range(0..entities.len());
            let t = rng.gen_range(0..entities.len());
            if h != t {
                let label = relation_types[rng.gen_range(0..relation_types.len())];
                relations.push(RelationMention::new(h, t, label));
            }
        }
    }
    Sentence { id, tokens, entities, relations }
}

pub const OVERFIT_SEED: u64 = 7;

/// Settings for fitting the 20-sentence synthetic corpus.
pub fn overfit_config(ablation: spanrel_core::Ablation) -> spanrel_core::RunConfig {
    let mut cfg = spanrel_core::RunConfig::from_toml_str(
        "[encoder]\ndim = 32\n[training]\nepochs = 200\nlearning_rate = 1e-2\nbatch_size = 4\nseed = 11\n",
        &[],
    )
    .unwrap();
    cfg.apply_ablation(ablation);
    cfg
}

pub fn settings(cfg: &spanrel_core::RunConfig) -> spanrel_core::training::TrainSettings<'static> {
    spanrel_core::training::TrainSettings {
        train: cfg.training.clone(),
        sampling: cfg.sampling.clone(),
        dev: None,
        policy: cfg.policy(),
    }
}

/// Trainable parameter count of a toy-encoder model, by hand.
pub fn closed_form_params(
    ablation: spanrel_core::Ablation,
    num_tokens: usize,
    d: usize,
    max_width: usize,
    k: usize,
    p: usize,
) -> usize {
    let f = ablation.flags();
    let binary = f.two_phase && f.bi_features;
    let encoder = num_tokens * d + (3 * d * d + d) + (d * d + d);
    let mut tables = (max_width + 1) * d;
    if binary {
        tables += 11 * d;
    }
    if f.multi_features {
        tables += k * k * 11 * d;
    }
    let gates = if f.fusion_enabled {
        (d + 1) * (2 + usize::from(f.multi_features))
    } else {
        0
    };
    let (span, rel, rel_typed) = if f.fusion_enabled {
        (d, d, d)
    } else {
        let span = 3 * d;
        let rel = 2 * span + d + if binary { d } else { 0 };
        (span, rel, rel + if f.multi_features { d } else { 0 })
    };
    let heads = if f.two_phase {
        2 * (span + 1) + 2 * (rel + 1) + k * (span + 1) + p * (rel_typed + 1)
    } else {
        (k + 1) * (span + 1) + (p + 1) * (rel_typed + 1)
    };
    encoder + tables + gates + heads
}

/// Biases the entity decision so that no span is ever accepted.
pub fn suppress_entities(model: &mut spanrel_core::Model) {
    let params = &mut model.params;
    if let Some(id) = params.id("head.entity_binary.bias") {
        params.set_scalar(id, 0, -1e3);
        params.set_scalar(id, 1, 1e3);
    } else {
        let id = params.id("head.entity.bias").expect("entity head");
        let n = params.get(id).len();
        for i in 0..n {
            params.set_scalar(id, i, if i + 1 == n { 1e3 } else { -1e3 });
        }
    }
}

/// A random gold corpus and a perturbed prediction of it, in shuffled order.
pub fn random_gold_and_prediction(rng: &mut ChaCha8Rng, pair: usize) -> (Vec<Sentence>, Vec<Sentence>) {
    let types = ["A", "B", "C"];
    let rels = ["R", "S"];
    let n_sent = rng.gen_range(1..=4);
    let mut gold = Vec::new();
    let mut pred = Vec::new();
    for i in 0..n_sent {
        let n = rng.gen_range(1..=25);
        let mut g = random_sentence(rng, format!("p{pair}-s{i}"), n, &types, &rels);
        for e in &mut g.entities {
            if rng.gen_bool(0.6) {
                let hs = rng.gen_range(e.start..=e.end);
                let he = rng.gen_range(hs..=e.end);
                *e = e.clone().with_head(hs, he);
            }
        }
        let mut keep = Vec::new();
        let mut p = Sentence {
            id: g.id.clone(),
            tokens: g.tokens.clone(),
            entities: Vec::new(),
            relations: Vec::new(),
        };
        for e in &g.entities {
            let roll: f64 = rng.gen();
            let mut e2 = e.clone();
            if roll < 0.15 {
                keep.push(None);
                continue;
            } else if roll < 0.3 {
                e2.label = types[rng.gen_range(0..types.len())].to_string();
            } else if roll < 0.4 && e2.end + 1 < n {
                e2.end += 1;
            } else if roll < 0.5 {
                e2.head_start = None;
                e2.head_end = None;
            }
            keep.push(Some(p.entities.len()));
            p.entities.push(e2);
        }
        for _ in 0..rng.gen_range(0..3) {
            let s = rng.gen_range(0..n);
            let e = rng.gen_range(s..n.min(s + 3));
            p.entities.push(EntityMention::new(s, e, types[rng.gen_range(0..types.len())]));
        }
        if !p.entities.is_empty() && rng.gen_bool(0.3) {
            let dup = p.entities[0].clone();
            p.entities.push(dup);
        }
        for r in &g.relations {
            if let (Some(h), Some(t)) = (keep[r.head], keep[r.tail]) {
                let roll: f64 = rng.gen();
                let (h, t) = if roll < 0.15 { (t, h) } else { (h, t) };
                let label = if (0.15..0.3).contains(&roll) {
                    rels[rng.gen_range(0..rels.len())]
                } else {
                    r.label.as_str()
                };
                if roll < 0.9 {
                    p.relations.push(RelationMention::new(h, t, label));
                }
            }
        }
        let m = p.entities.len();
        if m >= 2 {
            for _ in 0..rng.gen_range(0..3) {
                let h = rng.gen_range(0..m);
                let t = rng.gen_range(0..m);
                if h != t {
                    p.relations.push(RelationMention::new(h, t, rels[rng.gen_range(0..rels.len())]));
                }
            }
            if let Some(r) = p.relations.first().cloned() {
                p.relations.push(r);
            }
        }
        gold.push(g);
        pred.push(p);
    }
    pred.shuffle(rng);
    (gold, pred)
}

type Counts = (u64, u64, u64);

/// Counts by canonical tuples compared one against another.
pub fn brute_force_counts(gold: &[Sentence], pred: &[Sentence], policy: &spanrel_core::MatchPolicy) -> (Counts, Counts) {
    use spanrel_core::evaluation::EntityMatch;
    let region = |e: &EntityMention| match (policy.entity_match, e.head_start, e.head_end) {
        (EntityMatch::HeadRegion, Some(s), Some(t)) => (s, t),
        _ => (e.start, e.end),
    };
    let typed = |e: &EntityMention| {
        if policy.relation_requires_entity_type {
            e.label.clone()
        } else {
            String::new()
        }
    };
    let entity_tuples = |corpus: &[Sentence]| {
        let mut out: Vec<(String, usize, usize, String)> = Vec::new();
        for s in corpus {
            for e in &s.entities {
                let (a, b) = region(e);
                out.push((s.id.clone(), a, b, e.label.clone()));
            }
        }
        out.sort();
        out.dedup();
        out
    };
    let relation_tuples = |corpus: &[Sentence]| {
        let mut out = Vec::new();
        for s in corpus {
            for r in &s.relations {
                let (h, t) = (&s.entities[r.head], &s.entities[r.tail]);
                out.push((s.id.clone(), region(h), typed(h), region(t), typed(t), r.label.clone()));
            }
        }
        out.sort();
        out.dedup();
        out
    };
    fn count<T: PartialEq>(gold: &[T], pred: &[T]) -> Counts {
        let tp = pred.iter().filter(|p| gold.contains(p)).count() as u64;
        (tp, pred.len() as u64 - tp, gold.len() as u64 - tp)
    }
    (
        count(&entity_tuples(gold), &entity_tuples(pred)),
        count(&relation_tuples(gold), &relation_tuples(pred)),
    )
}
