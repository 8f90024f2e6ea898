//! Private per-agent memory: script chunks and dialogue pairs, retrieved by
//! exact squared-L2 scan under a token budget.

use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Hard cap on tokens per script chunk.
pub const CHUNK_MAX_TOKENS: usize = 50;

#[derive(Debug, Error)]
pub enum MemoryError {
    #[error("precondition failed: {0}")]
    Precondition(&'static str),
    #[error("embedding has dimension {got}, store expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("embedding backend failed: {0}")]
    Embedding(String),
}

/// Splits text into tokens. Only the spans matter: a token is a byte range of
/// the input and the count of a text is its number of spans.
pub trait TokenCounter: Send + Sync {
    fn id(&self) -> &str;
    fn token_spans(&self, text: &str) -> Vec<Range<usize>>;

    fn count(&self, text: &str) -> usize {
        self.token_spans(text).len()
    }
}

/// Words (runs of ASCII/Latin alphanumerics) count as one token; every other
/// non-whitespace character, including each CJK ideograph and each
/// punctuation mark, is a token of its own.
#[derive(Debug, Clone, Copy, Default)]
pub struct HeuristicTokenizer;

impl HeuristicTokenizer {
    pub const ID: &'static str = "heuristic-word-punct-v1";
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() && (c.is_ascii() || ('\u{00C0}'..='\u{024F}').contains(&c)) || c == '\'' || c == '_'
}

impl TokenCounter for HeuristicTokenizer {
    fn id(&self) -> &str {
        Self::ID
    }

    fn token_spans(&self, text: &str) -> Vec<Range<usize>> {
        let mut spans = Vec::new();
        let mut word: Option<usize> = None;
        for (i, c) in text.char_indices() {
            if is_word_char(c) {
                word.get_or_insert(i);
                continue;
            }
            if let Some(start) = word.take() {
                spans.push(start..i);
            }
            if !c.is_whitespace() {
                spans.push(i..i + c.len_utf8());
            }
        }
        if let Some(start) = word {
            spans.push(start..text.len());
        }
        spans
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentKind {
    ScriptChunk,
    DialogueQa,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentMeta {
    pub round: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub asker: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub responder: Option<String>,
    #[serde(default)]
    pub victim_tags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemorySegment {
    pub id: u64,
    pub owner: String,
    pub kind: SegmentKind,
    pub text: String,
    pub token_count: usize,
    pub embedding: Vec<f64>,
    pub meta: SegmentMeta,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrievalBudget {
    pub max_tokens: usize,
}

impl RetrievalBudget {
    pub const GAMEPLAY: RetrievalBudget = RetrievalBudget { max_tokens: 4000 };
    pub const EVALUATION: RetrievalBudget = RetrievalBudget { max_tokens: 5000 };

    pub fn new(max_tokens: usize) -> Result<Self, MemoryError> {
        if max_tokens == 0 {
            return Err(MemoryError::Precondition("retrieval budget must be positive"));
        }
        Ok(Self { max_tokens })
    }
}

/// A chunk of a script before it is embedded.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Chunk {
    pub text: String,
    pub token_count: usize,
}

fn ends_sentence(token: &str) -> bool {
    matches!(
        token.chars().last(),
        Some('.' | '!' | '?' | '。' | '！' | '？' | '…' | ';' | '；')
    )
}

/// Splits a script into chunks of at most [`CHUNK_MAX_TOKENS`] tokens.
///
/// Chunks cut after the last sentence end that fits, or at a token boundary
/// when a sentence alone is too long. Whitespace between chunks stays on the
/// earlier chunk, so concatenating the chunk texts gives back `text`.
pub fn chunk_text(text: &str, tokenizer: &dyn TokenCounter) -> Vec<Chunk> {
    chunk_text_with_cap(text, tokenizer, CHUNK_MAX_TOKENS)
}

pub fn chunk_text_with_cap(text: &str, tokenizer: &dyn TokenCounter, cap: usize) -> Vec<Chunk> {
    assert!(cap > 0, "chunk cap must be positive");
    if text.is_empty() {
        return Vec::new();
    }
    let spans = tokenizer.token_spans(text);
    if spans.is_empty() {
        return vec![Chunk { text: text.to_string(), token_count: 0 }];
    }
    // Token-index cut points.
    let mut cuts = Vec::new();
    let mut start = 0;
    while start < spans.len() {
        let limit = (start + cap).min(spans.len());
        let mut end = limit;
        if limit < spans.len() {
            if let Some(e) = (start + 1..=limit)
                .rev()
                .find(|&e| ends_sentence(&text[spans[e - 1].clone()]))
            {
                end = e;
            }
        }
        cuts.push((start, end));
        start = end;
    }
    let last = cuts.len() - 1;
    cuts.iter()
        .enumerate()
        .map(|(i, &(s, e))| {
            let from = if i == 0 { 0 } else { spans[s].start };
            let to = if i == last { text.len() } else { spans[e].start };
            Chunk {
                text: text[from..to].to_string(),
                token_count: e - s,
            }
        })
        .collect()
}

/// Text embedding used for memory indexing and queries.
pub trait Embedder {
    fn embed(&self, text: &str) -> Result<Vec<f64>, MemoryError>;
}

pub fn squared_l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum()
}

/// All agents' segments for one game; every query is scoped to one owner.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MemoryStore {
    dim: Option<usize>,
    next_id: u64,
    segments: Vec<MemorySegment>,
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_dimension(dim: usize) -> Self {
        Self {
            dim: Some(dim),
            ..Self::default()
        }
    }

    pub fn dimension(&self) -> Option<usize> {
        self.dim
    }

    pub fn segments(&self) -> &[MemorySegment] {
        &self.segments
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    /// Rebuilds a store from serialized segments, e.g. from a transcript.
    pub fn from_segments(segments: Vec<MemorySegment>) -> Result<Self, MemoryError> {
        let mut store = Self::new();
        for seg in segments {
            store.check_dim(seg.embedding.len())?;
            store.next_id = store.next_id.max(seg.id + 1);
            store.segments.push(seg);
        }
        Ok(store)
    }

    fn check_dim(&mut self, got: usize) -> Result<(), MemoryError> {
        match self.dim {
            Some(expected) if expected != got => Err(MemoryError::DimensionMismatch { expected, got }),
            Some(_) => Ok(()),
            None => {
                self.dim = Some(got);
                Ok(())
            }
        }
    }

    fn push(
        &mut self,
        owner: &str,
        kind: SegmentKind,
        text: String,
        token_count: usize,
        embedding: Vec<f64>,
        meta: SegmentMeta,
    ) -> Result<&MemorySegment, MemoryError> {
        self.check_dim(embedding.len())?;
        let id = self.next_id;
        self.next_id += 1;
        self.segments.push(MemorySegment {
            id,
            owner: owner.to_string(),
            kind,
            text,
            token_count,
            embedding,
            meta,
        });
        Ok(self.segments.last().expect("just pushed"))
    }

    /// Chunks and indexes an agent's script. Returns the new segment ids.
    pub fn chunk_script(
        &mut self,
        owner: &str,
        text: &str,
        tokenizer: &dyn TokenCounter,
        embedder: &dyn Embedder,
        victim_names: &[String],
    ) -> Result<Vec<u64>, MemoryError> {
        let mut ids = Vec::new();
        for chunk in chunk_text(text, tokenizer) {
            let embedding = embedder.embed(&chunk.text)?;
            let victim_tags = victim_names
                .iter()
                .filter(|v| chunk.text.contains(v.as_str()))
                .cloned()
                .collect();
            let meta = SegmentMeta {
                round: 0,
                victim_tags,
                ..SegmentMeta::default()
            };
            let seg = self.push(owner, SegmentKind::ScriptChunk, chunk.text, chunk.token_count, embedding, meta)?;
            ids.push(seg.id);
        }
        Ok(ids)
    }

    /// Stores one question/answer exchange as a single segment.
    pub fn add_dialogue(
        &mut self,
        owner: &str,
        question: &str,
        answer: &str,
        meta: SegmentMeta,
        tokenizer: &dyn TokenCounter,
        embedder: &dyn Embedder,
    ) -> Result<&MemorySegment, MemoryError> {
        if question.trim().is_empty() {
            return Err(MemoryError::Precondition("dialogue question is empty"));
        }
        if answer.trim().is_empty() {
            return Err(MemoryError::Precondition("dialogue answer is empty"));
        }
        let asker = meta.asker.as_deref().unwrap_or("someone");
        let responder = meta.responder.as_deref().unwrap_or("someone");
        let text = format!("{asker} asked {responder}: {question}\n{responder} answered: {answer}");
        let embedding = embedder.embed(&text)?;
        let tokens = tokenizer.count(&text);
        self.push(owner, SegmentKind::DialogueQa, text, tokens, embedding, meta)
    }

    /// Owner's segments passing `filter`, nearest first (ties by id), cut at
    /// the first segment that would overflow the budget.
    pub fn retrieve(
        &self,
        owner: &str,
        query: &[f64],
        budget: RetrievalBudget,
        filter: &dyn Fn(&MemorySegment) -> bool,
    ) -> Result<Vec<&MemorySegment>, MemoryError> {
        self.retrieve_where(query, budget, &|s| s.owner == owner && filter(s))
    }

    /// Like [`retrieve`](Self::retrieve) without the owner restriction.
    pub fn retrieve_where(
        &self,
        query: &[f64],
        budget: RetrievalBudget,
        filter: &dyn Fn(&MemorySegment) -> bool,
    ) -> Result<Vec<&MemorySegment>, MemoryError> {
        if let Some(dim) = self.dim {
            if dim != query.len() {
                return Err(MemoryError::DimensionMismatch { expected: dim, got: query.len() });
            }
        }
        let mut scored: Vec<(f64, &MemorySegment)> = self
            .segments
            .iter()
            .filter(|s| filter(s))
            .map(|s| (squared_l2(&s.embedding, query), s))
            .collect();
        scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.id.cmp(&b.1.id)));
        let mut used = 0usize;
        let mut out = Vec::new();
        for (_, seg) in scored {
            if used + seg.token_count > budget.max_tokens {
                break;
            }
            used += seg.token_count;
            out.push(seg);
        }
        Ok(out)
    }

    /// Embeds `query` and retrieves.
    pub fn retrieve_text(
        &self,
        owner: &str,
        query: &str,
        embedder: &dyn Embedder,
        budget: RetrievalBudget,
        filter: &dyn Fn(&MemorySegment) -> bool,
    ) -> Result<Vec<&MemorySegment>, MemoryError> {
        if query.trim().is_empty() {
            return Err(MemoryError::Precondition("retrieval query is empty"));
        }
        let q = embedder.embed(query)?;
        self.retrieve(owner, &q, budget, filter)
    }
}

pub fn is_script(s: &MemorySegment) -> bool {
    s.kind == SegmentKind::ScriptChunk
}

pub fn is_dialogue(s: &MemorySegment) -> bool {
    s.kind == SegmentKind::DialogueQa
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    struct AxisEmbedder;

    impl Embedder for AxisEmbedder {
        fn embed(&self, text: &str) -> Result<Vec<f64>, MemoryError> {
            Ok(vec![text.len() as f64, 0.0])
        }
    }

    fn seg(id: u64, dist: f64, tokens: usize) -> MemorySegment {
        MemorySegment {
            id,
            owner: "A".into(),
            kind: SegmentKind::ScriptChunk,
            text: format!("seg {id}"),
            token_count: tokens,
            embedding: vec![dist, 0.0],
            meta: SegmentMeta::default(),
        }
    }

    fn words(n: usize) -> String {
        (0..n).map(|i| format!("w{i}")).collect::<Vec<_>>().join(" ")
    }

    #[test]
    fn tokenizer_counts_words_and_punctuation() {
        let t = HeuristicTokenizer;
        assert_eq!(t.count("Where were you?"), 4);
        assert_eq!(t.count("  "), 0);
        assert_eq!(t.count("他在病房。"), 5);
        assert_eq!(t.count("don't stop"), 2);
    }

    #[test]
    fn chunking_examples() {
        let t = HeuristicTokenizer;
        let c = chunk_text(&words(120), &t);
        assert_eq!(c.len(), 3);
        assert!(c.iter().all(|c| c.token_count <= 50));
        assert_eq!(chunk_text(&words(50), &t).len(), 1);
        assert!(chunk_text("", &t).is_empty());
    }

    #[test]
    fn chunking_prefers_sentence_boundaries() {
        let t = HeuristicTokenizer;
        // 30 words + '.' = 31 tokens, then another 30-token sentence.
        let text = format!("{}. {}.", words(30), words(29));
        let c = chunk_text(&text, &t);
        assert_eq!(c.len(), 2);
        assert!(c[0].text.trim_end().ends_with('.'));
        assert_eq!(c[0].token_count, 31);
        assert_eq!(c.iter().map(|c| c.text.as_str()).collect::<String>(), text);
    }

    proptest! {
        #[test]
        fn chunk_reassembly_is_lossless(text in "[a-zA-Z .,!?\n\t'时间。]{0,600}") {
            let t = HeuristicTokenizer;
            let chunks = chunk_text(&text, &t);
            let joined: String = chunks.iter().map(|c| c.text.as_str()).collect();
            prop_assert_eq!(joined, text.clone());
            for c in &chunks {
                prop_assert!(c.token_count <= CHUNK_MAX_TOKENS);
                prop_assert_eq!(c.token_count, t.count(&c.text));
            }
        }
    }

    #[test]
    fn prefix_rule_stops_at_first_overflow() {
        let store = MemoryStore::from_segments(vec![seg(0, 0.1, 30), seg(1, 0.2, 30), seg(2, 0.3, 30)]).unwrap();
        let got = store
            .retrieve("A", &[0.0, 0.0], RetrievalBudget::new(50).unwrap(), &|_| true)
            .unwrap();
        assert_eq!(got.iter().map(|s| s.id).collect::<Vec<_>>(), vec![0]);
    }

    #[test]
    fn ties_break_by_id() {
        let store = MemoryStore::from_segments(vec![seg(7, 0.5, 1), seg(3, 0.5, 1)]).unwrap();
        let got = store.retrieve("A", &[0.0, 0.0], RetrievalBudget::GAMEPLAY, &|_| true).unwrap();
        assert_eq!(got.iter().map(|s| s.id).collect::<Vec<_>>(), vec![3, 7]);
    }

    #[test]
    fn large_budget_returns_everything_sorted() {
        let segs: Vec<_> = (0..10).map(|i| seg(i, (10 - i) as f64, 50)).collect();
        let store = MemoryStore::from_segments(segs).unwrap();
        let got = store.retrieve("A", &[0.0, 0.0], RetrievalBudget::GAMEPLAY, &|_| true).unwrap();
        assert_eq!(got.len(), 10);
        assert_eq!(got[0].id, 9);
        assert_eq!(got[9].id, 0);
    }

    #[test]
    fn other_owners_are_invisible() {
        let mut b = seg(1, 0.0, 1);
        b.owner = "B".into();
        let store = MemoryStore::from_segments(vec![seg(0, 0.0, 1), b]).unwrap();
        let got = store.retrieve("A", &[0.0, 0.0], RetrievalBudget::GAMEPLAY, &|_| true).unwrap();
        assert_eq!(got.len(), 1);
    }

    #[test]
    fn dialogue_ids_increase() {
        let mut store = MemoryStore::new();
        let t = HeuristicTokenizer;
        let meta = SegmentMeta { round: 1, asker: Some("B".into()), responder: Some("A".into()), victim_tags: vec![] };
        let a = store.add_dialogue("A", "Where were you?", "In the ward.", meta.clone(), &t, &AxisEmbedder).unwrap().id;
        let b = store.add_dialogue("A", "And then?", "I slept.", meta.clone(), &t, &AxisEmbedder).unwrap();
        assert_eq!(b.kind, SegmentKind::DialogueQa);
        assert_eq!(b.id, a + 1);
        assert!(matches!(
            store.add_dialogue("A", "Why?", " ", meta, &t, &AxisEmbedder),
            Err(MemoryError::Precondition(_))
        ));
    }

    #[test]
    fn mixed_dimensions_rejected() {
        let mut store = MemoryStore::with_dimension(3);
        let t = HeuristicTokenizer;
        let err = store.chunk_script("A", "Hello there.", &t, &AxisEmbedder, &[]).unwrap_err();
        assert!(matches!(err, MemoryError::DimensionMismatch { expected: 3, got: 2 }));
    }

    #[test]
    fn zero_budget_rejected() {
        assert!(RetrievalBudget::new(0).is_err());
        assert_eq!(RetrievalBudget::GAMEPLAY.max_tokens, 4000);
        assert_eq!(RetrievalBudget::EVALUATION.max_tokens, 5000);
    }
}
