//! Strict-match scoring, bucketed breakdowns and label-distribution audits.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::{self, Write as _};
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::candidates::{self, Span};
use crate::corpus::{EntityMention, LabelCounts, LabelVocab, Sentence, NOT_ENTITY, NOT_RELATION};
use crate::error::{Error, Result};

/// Which span of an entity is compared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntityMatch {
    FullSpan,
    /// Head region when annotated, else the full span.
    HeadRegion,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchPolicy {
    pub entity_match: EntityMatch,
    /// Relation endpoints must also agree on entity type.
    pub relation_requires_entity_type: bool,
    /// Relation types matched regardless of direction.
    #[serde(default)]
    pub symmetric_relations: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Ace05,
    Conll04,
    Scierc,
}

impl Preset {
    pub fn policy(self) -> MatchPolicy {
        let (entity_match, relation_requires_entity_type) = match self {
            Preset::Ace05 => (EntityMatch::HeadRegion, true),
            Preset::Conll04 => (EntityMatch::FullSpan, true),
            Preset::Scierc => (EntityMatch::FullSpan, false),
        };
        MatchPolicy {
            entity_match,
            relation_requires_entity_type,
            symmetric_relations: Vec::new(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Preset::Ace05 => "ace05",
            Preset::Conll04 => "conll04",
            Preset::Scierc => "scierc",
        }
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ace05" => Ok(Preset::Ace05),
            "conll04" => Ok(Preset::Conll04),
            "scierc" => Ok(Preset::Scierc),
            _ => Err(Error::Config(format!(
                "unknown preset `{s}` (expected ace05, conll04 or scierc)"
            ))),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Precision, recall and F1 from raw counts. A zero denominator yields 0.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub tp: u64,
    #[serde(rename = "fp")]
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    pub fn from_counts(tp: u64, fp: u64, fn_: u64) -> Self {
        let ratio = |a: u64, b: u64| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Prf {
            tp,
            fp,
            fn_,
            precision,
            recall,
            f1,
        }
    }

    /// Unweighted mean of per-class metrics; counts are summed.
    pub fn macro_average(parts: &[Prf]) -> Prf {
        if parts.is_empty() {
            return Prf::default();
        }
        let n = parts.len() as f64;
        Prf {
            tp: parts.iter().map(|p| p.tp).sum(),
            fp: parts.iter().map(|p| p.fp).sum(),
            fn_: parts.iter().map(|p| p.fn_).sum(),
            precision: parts.iter().map(|p| p.precision).sum::<f64>() / n,
            recall: parts.iter().map(|p| p.recall).sum::<f64>() / n,
            f1: parts.iter().map(|p| p.f1).sum::<f64>() / n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub ner: Prf,
    pub re: Prf,
    /// Gold entities scored on their full span because no head was annotated.
    pub head_fallbacks: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
struct EntityKey<'a> {
    span: (usize, usize),
    label: &'a str,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
struct RelationKey<'a> {
    head: ((usize, usize), Option<&'a str>),
    tail: ((usize, usize), Option<&'a str>),
    label: &'a str,
}

fn match_span(e: &EntityMention, policy: &MatchPolicy) -> ((usize, usize), bool) {
    match (policy.entity_match, e.head()) {
        (EntityMatch::HeadRegion, Some(h)) => (h, false),
        (EntityMatch::HeadRegion, None) => ((e.start, e.end), true),
        (EntityMatch::FullSpan, _) => ((e.start, e.end), false),
    }
}

fn entity_key<'a>(e: &'a EntityMention, policy: &MatchPolicy) -> EntityKey<'a> {
    EntityKey {
        span: match_span(e, policy).0,
        label: &e.label,
    }
}

fn relation_keys<'a>(s: &'a Sentence, policy: &MatchPolicy) -> Vec<(RelationKey<'a>, usize)> {
    s.relations
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let end = |e: &'a EntityMention| {
                let typed = policy.relation_requires_entity_type.then_some(e.label.as_str());
                (match_span(e, policy).0, typed)
            };
            let mut head = end(&s.entities[r.head]);
            let mut tail = end(&s.entities[r.tail]);
            if policy.symmetric_relations.contains(&r.label) && tail < head {
                std::mem::swap(&mut head, &mut tail);
            }
            (
                RelationKey {
                    head,
                    tail,
                    label: &r.label,
                },
                i,
            )
        })
        .collect()
}

/// Pairs gold and predicted sentences by id.
fn align<'a>(gold: &'a [Sentence], pred: &'a [Sentence]) -> Result<Vec<(&'a Sentence, &'a Sentence)>> {
    let mut by_id: HashMap<&str, &Sentence> = HashMap::with_capacity(pred.len());
    for p in pred {
        if by_id.insert(p.id.as_str(), p).is_some() {
            return Err(Error::Alignment(format!("duplicate predicted sentence id `{}`", p.id)));
        }
    }
    if gold.len() != pred.len() {
        return Err(Error::Alignment(format!(
            "{} gold sentences but {} predicted",
            gold.len(),
            pred.len()
        )));
    }
    let mut seen = BTreeSet::new();
    gold.iter()
        .map(|g| {
            if !seen.insert(g.id.as_str()) {
                return Err(Error::Alignment(format!("duplicate gold sentence id `{}`", g.id)));
            }
            let p = by_id
                .get(g.id.as_str())
                .ok_or_else(|| Error::Alignment(format!("no prediction for sentence `{}`", g.id)))?;
            if p.tokens.len() != g.tokens.len() {
                return Err(Error::Alignment(format!(
                    "sentence `{}` has {} gold tokens but {} predicted",
                    g.id,
                    g.tokens.len(),
                    p.tokens.len()
                )));
            }
            Ok((g, *p))
        })
        .collect()
}

#[derive(Default)]
struct Tally {
    tp: u64,
    fp: u64,
    fn_: u64,
}

impl Tally {
    fn add<K: Ord>(&mut self, gold: &BTreeSet<K>, pred: &BTreeSet<K>) {
        let tp = gold.intersection(pred).count() as u64;
        self.tp += tp;
        self.fp += pred.len() as u64 - tp;
        self.fn_ += gold.len() as u64 - tp;
    }

    fn prf(&self) -> Prf {
        Prf::from_counts(self.tp, self.fp, self.fn_)
    }
}

/// Micro-averaged strict-match NER and RE scores. Duplicate predictions count once.
pub fn score(gold: &[Sentence], pred: &[Sentence], policy: &MatchPolicy) -> Result<Scores> {
    let pairs = align(gold, pred)?;
    let mut ner = Tally::default();
    let mut re = Tally::default();
    let mut head_fallbacks = 0;
    for (g, p) in pairs {
        head_fallbacks += g.entities.iter().filter(|e| match_span(e, policy).1).count() as u64;
        let ge: BTreeSet<_> = g.entities.iter().map(|e| entity_key(e, policy)).collect();
        let pe: BTreeSet<_> = p.entities.iter().map(|e| entity_key(e, policy)).collect();
        ner.add(&ge, &pe);
        let gr: BTreeSet<_> = relation_keys(g, policy).into_iter().map(|(k, _)| k).collect();
        let pr: BTreeSet<_> = relation_keys(p, policy).into_iter().map(|(k, _)| k).collect();
        re.add(&gr, &pr);
    }
    if head_fallbacks > 0 {
        log::warn!("{head_fallbacks} gold entities lack a head region; scored on the full span");
    }
    Ok(Scores {
        ner: ner.prf(),
        re: re.prf(),
        head_fallbacks,
    })
}

/// Per-type scores, keyed by entity or relation label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeScores {
    pub ner: BTreeMap<String, Prf>,
    pub re: BTreeMap<String, Prf>,
}

impl TypeScores {
    pub fn macro_scores(&self) -> (Prf, Prf) {
        let ner: Vec<Prf> = self.ner.values().copied().collect();
        let re: Vec<Prf> = self.re.values().copied().collect();
        (Prf::macro_average(&ner), Prf::macro_average(&re))
    }
}

pub fn score_by_type(gold: &[Sentence], pred: &[Sentence], policy: &MatchPolicy) -> Result<TypeScores> {
    let pairs = align(gold, pred)?;
    let mut ner: BTreeMap<String, Tally> = BTreeMap::new();
    let mut re: BTreeMap<String, Tally> = BTreeMap::new();
    for (g, p) in pairs {
        let ge: BTreeSet<_> = g.entities.iter().map(|e| entity_key(e, policy)).collect();
        let pe: BTreeSet<_> = p.entities.iter().map(|e| entity_key(e, policy)).collect();
        for label in ge.iter().chain(&pe).map(|k| k.label).collect::<BTreeSet<_>>() {
            let keep = |k: &&EntityKey<'_>| k.label == label;
            ner.entry(label.to_string()).or_default().add(&subset(&ge, keep), &subset(&pe, keep));
        }
        let gr: BTreeSet<_> = relation_keys(g, policy).into_iter().map(|(k, _)| k).collect();
        let pr: BTreeSet<_> = relation_keys(p, policy).into_iter().map(|(k, _)| k).collect();
        for label in gr.iter().chain(&pr).map(|k| k.label).collect::<BTreeSet<_>>() {
            let keep = |k: &&RelationKey<'_>| k.label == label;
            re.entry(label.to_string()).or_default().add(&subset(&gr, keep), &subset(&pr, keep));
        }
    }
    Ok(TypeScores {
        ner: ner.into_iter().map(|(k, t)| (k, t.prf())).collect(),
        re: re.into_iter().map(|(k, t)| (k, t.prf())).collect(),
    })
}

fn subset<K: Ord + Copy>(set: &BTreeSet<K>, keep: impl Fn(&&K) -> bool) -> BTreeSet<K> {
    set.iter().filter(keep).copied().collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BucketAxis {
    /// Entity width in tokens; NER only.
    EntityLength,
    /// Tokens between relation endpoints; RE only.
    EntityDistance,
}

impl BucketAxis {
    pub fn labels(self) -> &'static [&'static str] {
        match self {
            BucketAxis::EntityLength => &["[1-2]", "[3-4]", "[5-6]", "[7-8]", "[9-10]"],
            BucketAxis::EntityDistance => &["[0]", "[1-3]", "[4-6]", "[7-9]", "[>=10]"],
        }
    }

    /// Widths above 10 fall into the last length bucket.
    pub fn bucket(self, value: usize) -> usize {
        match self {
            BucketAxis::EntityLength => (value.max(1) - 1) / 2,
            BucketAxis::EntityDistance => {
                if value == 0 {
                    0
                } else {
                    (value - 1) / 3 + 1
                }
            }
        }
        .min(4)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bucket {
    pub label: String,
    pub prf: Prf,
}

/// Strict-match PRF per bucket. True positives and false negatives are placed
/// by the gold item, false positives by the predicted item.
pub fn bucketed_f1(gold: &[Sentence], pred: &[Sentence], policy: &MatchPolicy, axis: BucketAxis) -> Result<Vec<Bucket>> {
    let pairs = align(gold, pred)?;
    let mut tallies: Vec<Tally> = (0..5).map(|_| Tally::default()).collect();
    for (g, p) in pairs {
        match axis {
            BucketAxis::EntityLength => {
                tally_buckets(&mut tallies, &length_keys(g, policy), &length_keys(p, policy));
            }
            BucketAxis::EntityDistance => {
                tally_buckets(&mut tallies, &distance_keys(g, policy), &distance_keys(p, policy));
            }
        }
    }
    Ok(axis
        .labels()
        .iter()
        .zip(tallies)
        .map(|(l, t)| Bucket {
            label: l.to_string(),
            prf: t.prf(),
        })
        .collect())
}

fn length_keys<'a>(s: &'a Sentence, policy: &MatchPolicy) -> BTreeMap<EntityKey<'a>, usize> {
    s.entities
        .iter()
        .map(|e| (entity_key(e, policy), BucketAxis::EntityLength.bucket(e.width())))
        .collect()
}

fn distance_keys<'a>(s: &'a Sentence, policy: &MatchPolicy) -> BTreeMap<RelationKey<'a>, usize> {
    let span = |e: &EntityMention| Span::new(e.start, e.end);
    relation_keys(s, policy)
        .into_iter()
        .map(|(k, i)| {
            let r = &s.relations[i];
            let d = candidates::entity_distance(&span(&s.entities[r.head]), &span(&s.entities[r.tail]));
            (k, BucketAxis::EntityDistance.bucket(d))
        })
        .collect()
}

fn tally_buckets<K: Ord>(tallies: &mut [Tally], gold: &BTreeMap<K, usize>, pred: &BTreeMap<K, usize>) {
    for (k, &b) in gold {
        if pred.contains_key(k) {
            tallies[b].tp += 1;
        } else {
            tallies[b].fn_ += 1;
        }
    }
    for (k, &b) in pred {
        if !gold.contains_key(k) {
            tallies[b].fp += 1;
        }
    }
}

/// How class imbalance is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditMode {
    /// Largest class (negatives included) over the smallest positive class.
    Baseline,
    /// All positives versus the negative class.
    PhaseOne,
    /// Largest over smallest positive class.
    PhaseTwo,
}

impl AuditMode {
    pub const ALL: [AuditMode; 3] = [AuditMode::Baseline, AuditMode::PhaseOne, AuditMode::PhaseTwo];

    pub fn name(self) -> &'static str {
        match self {
            AuditMode::Baseline => "baseline",
            AuditMode::PhaseOne => "phase_one",
            AuditMode::PhaseTwo => "phase_two",
        }
    }
}

/// Imbalance `1 : x`, displayed to one decimal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ratio(pub f64);

impl Ratio {
    pub fn rounded(self) -> f64 {
        (self.0 * 10.0).round() / 10.0
    }
}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "1: {:.1}", self.rounded())
    }
}

pub fn imbalance_ratio(positives: &[u64], negatives: u64, mode: AuditMode) -> Result<Ratio> {
    let undefined = |why: &str| Error::UndefinedRatio(format!("{} ratio: {why}", mode.name()));
    let min_pos = positives.iter().copied().min().ok_or_else(|| undefined("no positive classes"))?;
    let (num, den) = match mode {
        AuditMode::Baseline => (positives.iter().copied().max().unwrap_or(0).max(negatives), min_pos),
        AuditMode::PhaseOne => {
            let pos: u64 = positives.iter().sum();
            (pos.max(negatives), pos.min(negatives))
        }
        AuditMode::PhaseTwo => (positives.iter().copied().max().unwrap_or(0), min_pos),
    };
    if den == 0 {
        return Err(undefined("a class in the denominator is empty"));
    }
    Ok(Ratio(num as f64 / den as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuditRow {
    pub mode: AuditMode,
    pub ner: Ratio,
    pub re: Ratio,
}

/// Imbalance ratios for each mode. `counts` holds positives per label and the
/// negatives under the reserved negative labels.
pub fn audit_distributions(counts: &LabelCounts) -> Result<Vec<AuditRow>> {
    let split = |items: &[(String, u64)], negative: &str| {
        let pos: Vec<u64> = items.iter().filter(|(l, _)| l != negative).map(|(_, c)| *c).collect();
        let neg = items.iter().find(|(l, _)| l == negative).map_or(0, |(_, c)| *c);
        (pos, neg)
    };
    let (ep, en) = split(&counts.entities, NOT_ENTITY);
    let (rp, rn) = split(&counts.relations, NOT_RELATION);
    AuditMode::ALL
        .iter()
        .map(|&mode| {
            Ok(AuditRow {
                mode,
                ner: imbalance_ratio(&ep, en, mode)?,
                re: imbalance_ratio(&rp, rn, mode)?,
            })
        })
        .collect()
}

/// Positive counts plus the negatives drawn by one sampling pass over the corpus.
pub fn sampled_label_counts<R: Rng + ?Sized>(
    sentences: &[Sentence],
    vocab: &LabelVocab,
    max_width: usize,
    neg_entities: usize,
    neg_relations: usize,
    rng: &mut R,
) -> LabelCounts {
    let mut counts = crate::corpus::corpus_split_counts(sentences, vocab);
    let mut ne = 0;
    let mut nr = 0;
    for s in sentences {
        let spans = candidates::enumerate_spans(s.len(), max_width);
        ne += candidates::sample_negative_spans(s, &spans, neg_entities, rng)
            .iter()
            .filter(|x| x.gold_type.is_none())
            .count() as u64;
        nr += candidates::sample_negative_relations(s, neg_relations, rng)
            .iter()
            .filter(|x| x.gold_type.is_none())
            .count() as u64;
    }
    counts.entities.push((NOT_ENTITY.to_string(), ne));
    counts.relations.push((NOT_RELATION.to_string(), nr));
    counts
}

pub const DISTANCE_INTERVALS: [&str; 4] = ["[0-3]", "[4-7]", "[8-11]", "[>11]"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceRow {
    pub head_type: String,
    pub tail_type: String,
    pub relation_type: String,
    pub counts: [u64; 4],
}

impl DistanceRow {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn percentages(&self) -> [f64; 4] {
        let total = self.total().max(1) as f64;
        self.counts.map(|c| 100.0 * c as f64 / total)
    }
}

/// Entity-distance histogram per (head type, tail type, relation type), in first-seen order.
pub fn distance_type_stats(sentences: &[Sentence]) -> Vec<DistanceRow> {
    let mut rows: Vec<DistanceRow> = Vec::new();
    let mut index: HashMap<(String, String, String), usize> = HashMap::new();
    for s in sentences {
        for r in &s.relations {
            let (h, t) = (&s.entities[r.head], &s.entities[r.tail]);
            let key = (h.label.clone(), t.label.clone(), r.label.clone());
            let i = *index.entry(key.clone()).or_insert_with(|| {
                rows.push(DistanceRow {
                    head_type: key.0,
                    tail_type: key.1,
                    relation_type: key.2,
                    counts: [0; 4],
                });
                rows.len() - 1
            });
            let d = candidates::entity_distance(&Span::new(h.start, h.end), &Span::new(t.start, t.end));
            rows[i].counts[(d / 4).min(3)] += 1;
        }
    }
    rows
}

pub fn format_scores(scores: &Scores) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<4} {:>9} {:>9} {:>9} {:>7} {:>7} {:>7}", "task", "precision", "recall", "f1", "tp", "fp", "fn");
    for (name, p) in [("NER", &scores.ner), ("RE", &scores.re)] {
        let _ = writeln!(
            out,
            "{:<4} {:>9.4} {:>9.4} {:>9.4} {:>7} {:>7} {:>7}",
            name, p.precision, p.recall, p.f1, p.tp, p.fp, p.fn_
        );
    }
    out
}

pub fn format_buckets(title: &str, buckets: &[Bucket]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{title}");
    for b in buckets {
        let _ = writeln!(
            out,
            "{:<7} f1 {:>7.4}  p {:>7.4}  r {:>7.4}  (tp {} fp {} fn {})",
            b.label, b.prf.f1, b.prf.precision, b.prf.recall, b.prf.tp, b.prf.fp, b.prf.fn_
        );
    }
    out
}

/// Markdown table of the imbalance ratios.
pub fn audit_markdown(rows: &[AuditRow]) -> String {
    let mut out = String::from("| Mode | NER | RE |\n|---|---|---|\n");
    for r in rows {
        let _ = writeln!(out, "| {} | {} | {} |", r.mode.name(), r.ner, r.re);
    }
    out
}

pub fn counts_markdown(counts: &LabelCounts) -> String {
    let mut out = String::from("| Task | Label | Count |\n|---|---|---|\n");
    for (l, c) in &counts.entities {
        let _ = writeln!(out, "| NER | {l} | {c} |");
    }
    for (l, c) in &counts.relations {
        let _ = writeln!(out, "| RE | {l} | {c} |");
    }
    out
}

pub fn distance_markdown(rows: &[DistanceRow]) -> String {
    let mut out = format!("| Head | Tail | Relation | {} |\n|---|---|---|---|---|---|---|\n", DISTANCE_INTERVALS.join(" | "));
    for r in rows {
        let pct = r.percentages().map(|p| format!("{p:.1}%"));
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} |",
            r.head_type,
            r.tail_type,
            r.relation_type,
            pct.join(" | ")
        );
    }
    out
}
