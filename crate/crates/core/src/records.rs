//! JSON/JSONL record formats and the conversions between character spans and
//! token-index mentions.
//!
//! NER record: `{"id", "text", "entities": [{"type", "spans": [[start, end), ...]}]}`
//! with codepoint offsets. A mention with several spans is discontinuous.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::grid::{EntityMention, GridError, GridScores, RelationGrid};
use crate::textnorm::{self, EmojiMap, Token};

#[derive(Debug, Error)]
pub enum RecordError {
    #[error("entity {entity} has an empty or reversed span [{start}, {end})")]
    BadSpan {
        entity: usize,
        start: usize,
        end: usize,
    },
    #[error("entity {entity}: span [{start}, {end}) exceeds text length {len}")]
    SpanOutOfRange {
        entity: usize,
        start: usize,
        end: usize,
        len: usize,
    },
    #[error("entity {entity}: span boundary splits token {token}")]
    SpanSplitsToken { entity: usize, token: Token },
    #[error("entity {entity}: span [{start}, {end}) covers no token")]
    NoTokens {
        entity: usize,
        start: usize,
        end: usize,
    },
    #[error("entity {entity}: spans overlap")]
    OverlappingSpans { entity: usize },
    #[error("entity {entity}: span [{start}, {end}) vanishes under normalization")]
    SpanVanished {
        entity: usize,
        start: usize,
        end: usize,
    },
    #[error("entity {entity} has no spans")]
    NoSpans { entity: usize },
    #[error("entity {entity}: {reason}")]
    BadEntity { entity: usize, reason: String },
    #[error("document is neither a grid nor a score tensor")]
    UnknownDocument,
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpanEntity {
    #[serde(rename = "type")]
    pub type_label: String,
    pub spans: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NerRecord {
    pub id: String,
    pub text: String,
    #[serde(default)]
    pub entities: Vec<SpanEntity>,
}

impl NerRecord {
    pub fn from_json(src: &str) -> Result<Self, RecordError> {
        Ok(serde_json::from_str(src)?)
    }

    /// Tokens of the text and every entity as a token-index mention.
    pub fn mentions(&self) -> Result<(Vec<Token>, Vec<EntityMention>), RecordError> {
        let tokens = textnorm::tokenize(&self.text);
        let len = self.text.chars().count();
        let mentions = self
            .entities
            .iter()
            .enumerate()
            .map(|(k, e)| spans_to_mention(k, e, &tokens, len))
            .collect::<Result<_, _>>()?;
        Ok((tokens, mentions))
    }

    /// Normalizes the text and carries entity spans through the rewrite.
    pub fn normalized(&self, map: &EmojiMap) -> Result<NerRecord, RecordError> {
        let norm = textnorm::normalize_aligned(&self.text, map);
        let len = norm.alignment.source_len();
        let out: Vec<char> = norm.text.chars().collect();
        let entities = self
            .entities
            .iter()
            .enumerate()
            .map(|(k, e)| {
                let spans = e
                    .spans
                    .iter()
                    .map(|&(s, t)| {
                        if s >= t {
                            return Err(RecordError::BadSpan {
                                entity: k,
                                start: s,
                                end: t,
                            });
                        }
                        if t > len {
                            return Err(RecordError::SpanOutOfRange {
                                entity: k,
                                start: s,
                                end: t,
                                len,
                            });
                        }
                        norm.alignment
                            .map_span(s, t)
                            .and_then(|(a, b)| trim_span(&out, a, b))
                            .ok_or(RecordError::SpanVanished {
                                entity: k,
                                start: s,
                                end: t,
                            })
                    })
                    .collect::<Result<_, _>>()?;
                Ok(SpanEntity {
                    type_label: e.type_label.clone(),
                    spans,
                })
            })
            .collect::<Result<_, RecordError>>()?;
        Ok(NerRecord {
            id: self.id.clone(),
            text: norm.text,
            entities,
        })
    }
}

/// Shrinks `[a, b)` to exclude edge whitespace; `None` if nothing is left.
fn trim_span(chars: &[char], mut a: usize, mut b: usize) -> Option<(usize, usize)> {
    while a < b && chars[a].is_whitespace() {
        a += 1;
    }
    while b > a && chars[b - 1].is_whitespace() {
        b -= 1;
    }
    (a < b).then_some((a, b))
}

/// Maps character spans onto the tokens they cover. Every span boundary must
/// fall on a token boundary (or in whitespace).
pub fn spans_to_mention(
    entity: usize,
    e: &SpanEntity,
    tokens: &[Token],
    text_len: usize,
) -> Result<EntityMention, RecordError> {
    if e.spans.is_empty() {
        return Err(RecordError::NoSpans { entity });
    }
    if e.type_label.is_empty() {
        return Err(RecordError::BadEntity {
            entity,
            reason: "empty type".into(),
        });
    }
    let mut indices = BTreeSet::new();
    for &(start, end) in &e.spans {
        if start >= end {
            return Err(RecordError::BadSpan { entity, start, end });
        }
        if end > text_len {
            return Err(RecordError::SpanOutOfRange {
                entity,
                start,
                end,
                len: text_len,
            });
        }
        let first = tokens.partition_point(|t| t.end <= start);
        let mut covered = 0;
        for (i, t) in tokens
            .iter()
            .enumerate()
            .skip(first)
            .take_while(|(_, t)| t.start < end)
        {
            if t.start < start || t.end > end {
                return Err(RecordError::SpanSplitsToken {
                    entity,
                    token: t.clone(),
                });
            }
            if !indices.insert(i) {
                return Err(RecordError::OverlappingSpans { entity });
            }
            covered += 1;
        }
        if covered == 0 {
            return Err(RecordError::NoTokens { entity, start, end });
        }
    }
    Ok(EntityMention {
        type_label: e.type_label.clone(),
        token_indices: indices.into_iter().collect(),
    })
}

/// Character spans of a mention, one per maximal run of consecutive tokens.
pub fn mention_to_spans(mention: &EntityMention, tokens: &[Token]) -> Vec<(usize, usize)> {
    let mut spans: Vec<(usize, usize)> = Vec::new();
    let mut prev: Option<usize> = None;
    for &i in &mention.token_indices {
        let t = &tokens[i];
        match (prev, spans.last_mut()) {
            (Some(p), Some(last)) if p + 1 == i => last.1 = t.end,
            _ => spans.push((t.start, t.end)),
        }
        prev = Some(i);
    }
    spans
}

/// A grid-like document from a grid or score file, with optional metadata.
#[derive(Debug, Clone, PartialEq)]
pub enum GridBody {
    Grid(RelationGrid),
    Scores(GridScores),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridDoc {
    pub id: Option<String>,
    pub text: Option<String>,
    pub tokens: Option<Vec<Token>>,
    pub body: GridBody,
}

impl GridDoc {
    /// A document with a `"dist"` field is a score tensor; one with `"cells"`
    /// is a grid. `id`, `text` and `tokens` are optional passthrough fields.
    pub fn from_value(value: &Value) -> Result<Self, RecordError> {
        let obj = value.as_object().ok_or(RecordError::UnknownDocument)?;
        let body = if obj.contains_key("dist") {
            GridBody::Scores(GridScores::from_json_value(value)?)
        } else if obj.contains_key("cells") {
            GridBody::Grid(RelationGrid::from_json_value(value)?)
        } else {
            return Err(RecordError::UnknownDocument);
        };
        let id = obj
            .get("id")
            .map(|v| serde_json::from_value(v.clone()))
            .transpose()?;
        let text = obj
            .get("text")
            .map(|v| serde_json::from_value(v.clone()))
            .transpose()?;
        let tokens: Option<Vec<Token>> = obj
            .get("tokens")
            .map(|v| serde_json::from_value(v.clone()))
            .transpose()?;
        let n = match &body {
            GridBody::Grid(g) => g.n(),
            GridBody::Scores(s) => s.n(),
        };
        if let Some(t) = &tokens {
            if t.len() != n {
                return Err(
                    GridError::ShapeMismatch(format!("{} tokens for n = {n}", t.len())).into(),
                );
            }
        }
        Ok(Self {
            id,
            text,
            tokens,
            body,
        })
    }

    pub fn from_json(src: &str) -> Result<Self, RecordError> {
        Self::from_value(&serde_json::from_str(src)?)
    }
}

/// Decoded mention as written by `grid-decode`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecodedEntity {
    #[serde(rename = "type")]
    pub type_label: String,
    pub indices: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spans: Option<Vec<(usize, usize)>>,
}

impl DecodedEntity {
    pub fn new(m: &EntityMention, tokens: Option<&[Token]>) -> Self {
        Self {
            type_label: m.type_label.clone(),
            indices: m.token_indices.clone(),
            spans: tokens.map(|t| mention_to_spans(m, t)),
        }
    }
}
