//! Span enumeration, negative sampling and entity distances.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Sentence;

/// Distances above this are clamped into the last bucket.
pub const MAX_DISTANCE_BUCKET: usize = 10;
/// Size of the distance set `{0, ..., 10}`.
pub const NUM_DISTANCE_BUCKETS: usize = MAX_DISTANCE_BUCKET + 1;

pub const DEFAULT_MAX_WIDTH: usize = 10;
pub const DEFAULT_NEG_ENTITIES: usize = 100;
pub const DEFAULT_NEG_RELATIONS: usize = 100;

/// Inclusive token span.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        debug_assert!(start <= end);
        Span { start, end }
    }

    pub fn width(&self) -> usize {
        self.end - self.start + 1
    }

    /// Token range strictly between two spans; empty when they touch or overlap.
    pub fn between(&self, other: &Span) -> std::ops::Range<usize> {
        let (left, right) = if self.start <= other.start {
            (self, other)
        } else {
            (other, self)
        };
        if left.end < right.start {
            left.end + 1..right.start
        } else {
            0..0
        }
    }
}

/// Positive means Entity (or Relation); negative means Not-Entity (or Not-Relation).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Polarity {
    Positive,
    Negative,
}

impl Polarity {
    /// Class index in the two-way heads: 0 = positive, 1 = negative.
    pub fn index(self) -> usize {
        match self {
            Polarity::Positive => 0,
            Polarity::Negative => 1,
        }
    }

    pub fn from_index(i: usize) -> Self {
        if i == 0 {
            Polarity::Positive
        } else {
            Polarity::Negative
        }
    }

    pub fn one_hot(self) -> [f64; 2] {
        match self {
            Polarity::Positive => [1.0, 0.0],
            Polarity::Negative => [0.0, 1.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpanSample {
    pub span: Span,
    pub polarity: Polarity,
    /// Entity label; present exactly for positives.
    pub gold_type: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelationCandidate {
    pub head: Span,
    pub tail: Span,
    /// Indices into the sentence's entities.
    pub head_entity: usize,
    pub tail_entity: usize,
    pub polarity: Polarity,
    /// Relation label; present exactly for positives.
    pub gold_type: Option<String>,
    pub distance_bucket: usize,
}

/// All spans of width at most `max_width + 1`, ordered by (start, width).
pub fn enumerate_spans(n: usize, max_width: usize) -> Vec<Span> {
    let mut spans = Vec::new();
    for start in 0..n {
        for width in 1..=(max_width + 1).min(n - start) {
            spans.push(Span::new(start, start + width - 1));
        }
    }
    spans
}

/// Closed-form span count: the sum over `w = 1..=min(max_width + 1, n)` of `n - w + 1`.
pub fn span_count(n: usize, max_width: usize) -> usize {
    (1..=(max_width + 1).min(n)).map(|w| n - w + 1).sum()
}

/// Gold entities as positives, followed by up to `limit` non-gold spans drawn
/// uniformly without replacement from `spans`.
pub fn sample_negative_spans<R: Rng + ?Sized>(
    sentence: &Sentence,
    spans: &[Span],
    limit: usize,
    rng: &mut R,
) -> Vec<SpanSample> {
    let gold: Vec<Span> = sentence
        .entities
        .iter()
        .map(|e| Span::new(e.start, e.end))
        .collect();
    let mut out: Vec<SpanSample> = sentence
        .entities
        .iter()
        .zip(&gold)
        .map(|(e, &span)| SpanSample {
            span,
            polarity: Polarity::Positive,
            gold_type: Some(e.label.clone()),
        })
        .collect();
    let pool: Vec<Span> = spans.iter().copied().filter(|s| !gold.contains(s)).collect();
    for i in sample_indices(rng, pool.len(), limit) {
        out.push(SpanSample {
            span: pool[i],
            polarity: Polarity::Negative,
            gold_type: None,
        });
    }
    out
}

fn sample_indices<R: Rng + ?Sized>(rng: &mut R, len: usize, limit: usize) -> Vec<usize> {
    if limit >= len {
        return (0..len).collect();
    }
    let mut picked = index::sample(rng, len, limit).into_vec();
    picked.sort_unstable();
    picked
}

/// All ordered pairs `(i, j)` of entries with distinct spans.
pub fn build_relation_candidates(entities: &[Span]) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for (i, a) in entities.iter().enumerate() {
        for (j, b) in entities.iter().enumerate() {
            if i != j && a != b {
                pairs.push((i, j));
            }
        }
    }
    pairs
}

/// Gold relations as positives, followed by up to `limit` ordered gold-entity
/// pairs without a gold relation.
pub fn sample_negative_relations<R: Rng + ?Sized>(
    sentence: &Sentence,
    limit: usize,
    rng: &mut R,
) -> Vec<RelationCandidate> {
    let spans: Vec<Span> = sentence
        .entities
        .iter()
        .map(|e| Span::new(e.start, e.end))
        .collect();
    let candidate = |i: usize, j: usize, polarity, gold_type| RelationCandidate {
        head: spans[i],
        tail: spans[j],
        head_entity: i,
        tail_entity: j,
        polarity,
        gold_type,
        distance_bucket: bucket_distance(entity_distance(&spans[i], &spans[j])),
    };
    let mut out: Vec<RelationCandidate> = sentence
        .relations
        .iter()
        .map(|r| candidate(r.head, r.tail, Polarity::Positive, Some(r.label.clone())))
        .collect();
    let gold_pairs: Vec<(Span, Span)> = sentence
        .relations
        .iter()
        .map(|r| (spans[r.head], spans[r.tail]))
        .collect();
    let pool: Vec<(usize, usize)> = build_relation_candidates(&spans)
        .into_iter()
        .filter(|&(i, j)| !gold_pairs.contains(&(spans[i], spans[j])))
        .collect();
    for k in sample_indices(rng, pool.len(), limit) {
        let (i, j) = pool[k];
        out.push(candidate(i, j, Polarity::Negative, None));
    }
    out
}

/// Tokens strictly between two spans; 0 when they touch or overlap.
pub fn entity_distance(a: &Span, b: &Span) -> usize {
    a.between(b).len()
}

pub fn bucket_distance(dist: usize) -> usize {
    dist.min(MAX_DISTANCE_BUCKET)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{EntityMention, RelationMention};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sentence(n: usize, ents: &[(usize, usize)], rels: &[(usize, usize)]) -> Sentence {
        Sentence {
            id: "t".into(),
            tokens: (0..n).map(|i| format!("w{i}")).collect(),
            entities: ents.iter().map(|&(s, e)| EntityMention::new(s, e, "E")).collect(),
            relations: rels.iter().map(|&(h, t)| RelationMention::new(h, t, "R")).collect(),
        }
    }

    #[test]
    fn span_counts() {
        let spans = enumerate_spans(5, 1);
        assert_eq!(spans.len(), 9);
        assert_eq!(spans.iter().filter(|s| s.width() == 1).count(), 5);
        assert_eq!(spans.iter().filter(|s| s.width() == 2).count(), 4);
        assert_eq!(enumerate_spans(1, 0).len(), 1);
        assert_eq!(enumerate_spans(1, 7).len(), 1);
        assert_eq!(enumerate_spans(12, 10).len(), 77);
        assert_eq!(span_count(12, 10), 77);
    }

    #[test]
    fn enumeration_order() {
        let spans = enumerate_spans(3, 1);
        let expect = [(0, 0), (0, 1), (1, 1), (1, 2), (2, 2)];
        let got: Vec<_> = spans.iter().map(|s| (s.start, s.end)).collect();
        assert_eq!(got, expect);
    }

    #[test]
    fn negative_spans_limit_zero() {
        let s = sentence(5, &[(0, 0), (2, 3)], &[]);
        let spans = enumerate_spans(5, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = sample_negative_spans(&s, &spans, 0, &mut rng);
        assert_eq!(out.len(), 2);
        assert!(out.iter().all(|x| x.polarity == Polarity::Positive && x.gold_type.is_some()));
    }

    #[test]
    fn negative_spans_exhaust_pool() {
        let s = sentence(5, &[(0, 0), (2, 3)], &[]);
        let spans = enumerate_spans(5, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = sample_negative_spans(&s, &spans, 100, &mut rng);
        let pos = out.iter().filter(|x| x.polarity == Polarity::Positive).count();
        let neg = out.iter().filter(|x| x.polarity == Polarity::Negative).count();
        assert_eq!((pos, neg), (2, 7));
        for x in out.iter().filter(|x| x.polarity == Polarity::Negative) {
            assert!(x.gold_type.is_none());
            assert!(x.span != Span::new(0, 0) && x.span != Span::new(2, 3));
        }
    }

    #[test]
    fn negative_spans_are_seeded() {
        let s = sentence(12, &[(0, 1)], &[]);
        let spans = enumerate_spans(12, 10);
        let a = sample_negative_spans(&s, &spans, 10, &mut ChaCha8Rng::seed_from_u64(3));
        let b = sample_negative_spans(&s, &spans, 10, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(a, b);
        assert_eq!(a.len(), 11);
    }

    #[test]
    fn relation_pair_counts() {
        let spans: Vec<Span> = (0..5).map(|i| Span::new(i, i)).collect();
        assert_eq!(build_relation_candidates(&[]).len(), 0);
        assert_eq!(build_relation_candidates(&spans[..2]), vec![(0, 1), (1, 0)]);
        assert_eq!(build_relation_candidates(&spans).len(), 20);
    }

    #[test]
    fn negative_relations() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = sentence(4, &[(0, 0), (3, 3)], &[(0, 1)]);
        let out = sample_negative_relations(&s, 100, &mut rng);
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].polarity, Polarity::Positive);
        assert_eq!(out[0].distance_bucket, 2);
        assert_eq!((out[1].head_entity, out[1].tail_entity), (1, 0));
        assert_eq!(out[1].polarity, Polarity::Negative);

        let none = sentence(4, &[], &[]);
        assert!(sample_negative_relations(&none, 100, &mut rng).is_empty());

        let only = sample_negative_relations(&s, 0, &mut rng);
        assert_eq!(only.len(), 1);
        assert_eq!(only[0].polarity, Polarity::Positive);
    }

    #[test]
    fn distances() {
        assert_eq!(entity_distance(&Span::new(0, 1), &Span::new(2, 3)), 0);
        assert_eq!(entity_distance(&Span::new(0, 0), &Span::new(5, 6)), 4);
        assert_eq!(entity_distance(&Span::new(5, 6), &Span::new(0, 0)), 4);
        assert_eq!(entity_distance(&Span::new(0, 3), &Span::new(2, 5)), 0);
        assert_eq!(entity_distance(&Span::new(0, 5), &Span::new(2, 3)), 0);
        assert_eq!(bucket_distance(0), 0);
        assert_eq!(bucket_distance(10), 10);
        assert_eq!(bucket_distance(15), 10);
    }
}
