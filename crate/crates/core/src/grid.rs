//! Word-pair relation grid for unified (flat, nested, discontinuous) NER.
//!
//! A sentence of `n` tokens is represented as an `n x n` grid of cell labels:
//!
//! ```text
//!           col (head / next word)
//!          0     1     2     3
//!   row 0  .    NNW    .     .
//!       1  .     .     .    NNW
//!       2  .     .     .     .
//!       3 THW:T  .     .     .       mention T = [0, 1, 3]
//! ```
//!
//! * `NNW` at `(i, j)`, `i < j`: token `j` follows token `i` inside a mention.
//! * `THW(type)` at `(tail, head)`, `tail >= head`: a mention of `type` starts
//!   at `head` and ends at `tail`. Single-token mentions sit on the diagonal.
//!
//! Decoding enumerates NNW paths from head to tail for every THW anchor. The
//! scheme admits spurious paths when overlapping discontinuous mentions share
//! NNW edges, so decoding is only guaranteed to return a superset of what was
//! encoded.

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance on the per-cell probability mass of [`GridScores`].
pub const DIST_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("invalid mention {mention}: {reason}")]
    InvalidMention {
        mention: EntityMention,
        reason: String,
    },
    #[error("mentions {first} and {second} need different THW labels at cell ({row}, {col})")]
    Conflict {
        first: EntityMention,
        second: EntityMention,
        row: usize,
        col: usize,
    },
    #[error("label {label} is not allowed at cell ({row}, {col})")]
    TriangleViolation {
        row: usize,
        col: usize,
        label: CellLabel,
    },
    #[error("cell ({row}, {col}) is outside a {n}x{n} grid")]
    OutOfBounds { row: usize, col: usize, n: usize },
    #[error("cell ({row}, {col}) is listed twice")]
    DuplicateCell { row: usize, col: usize },
    #[error("unknown cell label {0:?}")]
    UnknownLabel(String),
    #[error("invalid label set: {0}")]
    InvalidLabelSet(String),
    #[error("invalid score distribution: {0}")]
    InvalidScores(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("nothing to fuse")]
    EmptyFusion,
    #[error("decode limits must be at least 1")]
    InvalidLimits,
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// A typed mention over token indices. Indices are strictly increasing, so a
/// gap between consecutive indices marks a discontinuity.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EntityMention {
    #[serde(rename = "type")]
    pub type_label: String,
    #[serde(rename = "indices")]
    pub token_indices: Vec<usize>,
}

impl EntityMention {
    /// Builds a mention and checks it against a sentence of `n` tokens.
    pub fn new(
        type_label: impl Into<String>,
        token_indices: Vec<usize>,
        n: usize,
    ) -> Result<Self, GridError> {
        let m = Self {
            type_label: type_label.into(),
            token_indices,
        };
        m.validate(n)?;
        Ok(m)
    }

    pub fn validate(&self, n: usize) -> Result<(), GridError> {
        let fail = |reason: &str| {
            Err(GridError::InvalidMention {
                mention: self.clone(),
                reason: reason.to_string(),
            })
        };
        if self.token_indices.is_empty() {
            return fail("no tokens");
        }
        if self.type_label.is_empty() {
            return fail("empty type label");
        }
        if !self.token_indices.windows(2).all(|w| w[0] < w[1]) {
            return fail("indices not strictly increasing");
        }
        if *self.token_indices.last().unwrap() >= n {
            return fail(&format!("index out of range for {n} tokens"));
        }
        Ok(())
    }

    pub fn head(&self) -> usize {
        self.token_indices[0]
    }

    pub fn tail(&self) -> usize {
        *self.token_indices.last().unwrap()
    }

    pub fn len(&self) -> usize {
        self.token_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_indices.is_empty()
    }

    pub fn is_contiguous(&self) -> bool {
        self.token_indices.windows(2).all(|w| w[1] == w[0] + 1)
    }
}

impl Ord for EntityMention {
    /// First index, then length, then type, then the indices themselves.
    fn cmp(&self, other: &Self) -> Ordering {
        self.token_indices
            .first()
            .cmp(&other.token_indices.first())
            .then_with(|| self.token_indices.len().cmp(&other.token_indices.len()))
            .then_with(|| self.type_label.cmp(&other.type_label))
            .then_with(|| self.token_indices.cmp(&other.token_indices))
    }
}

impl PartialOrd for EntityMention {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for EntityMention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{:?}", self.type_label, self.token_indices)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub enum CellLabel {
    #[default]
    None,
    Nnw,
    Thw(String),
}

impl CellLabel {
    /// Whether the label may appear at `(row, col)`.
    pub fn allowed_at(&self, row: usize, col: usize) -> bool {
        match self {
            CellLabel::None => true,
            CellLabel::Nnw => row < col,
            CellLabel::Thw(_) => row >= col,
        }
    }
}

impl fmt::Display for CellLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CellLabel::None => f.write_str("NONE"),
            CellLabel::Nnw => f.write_str("NNW"),
            CellLabel::Thw(t) => write!(f, "THW:{t}"),
        }
    }
}

impl FromStr for CellLabel {
    type Err = GridError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "NONE" => Ok(CellLabel::None),
            "NNW" => Ok(CellLabel::Nnw),
            _ => match s.strip_prefix("THW:") {
                Some(t) if !t.is_empty() => Ok(CellLabel::Thw(t.to_string())),
                _ => Err(GridError::UnknownLabel(s.to_string())),
            },
        }
    }
}

impl Serialize for CellLabel {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for CellLabel {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Dense `n x n` grid of cell labels obeying the triangle discipline.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelationGrid {
    n: usize,
    cells: Vec<CellLabel>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CellJson {
    row: usize,
    col: usize,
    label: CellLabel,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct GridJson {
    n: usize,
    cells: Vec<CellJson>,
}

impl RelationGrid {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            cells: vec![CellLabel::None; n * n],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, row: usize, col: usize) -> &CellLabel {
        &self.cells[row * self.n + col]
    }

    pub fn set(&mut self, row: usize, col: usize, label: CellLabel) -> Result<(), GridError> {
        if row >= self.n || col >= self.n {
            return Err(GridError::OutOfBounds {
                row,
                col,
                n: self.n,
            });
        }
        if !label.allowed_at(row, col) {
            return Err(GridError::TriangleViolation { row, col, label });
        }
        self.cells[row * self.n + col] = label;
        Ok(())
    }

    /// Non-NONE cells in row-major order.
    pub fn labeled_cells(&self) -> impl Iterator<Item = (usize, usize, &CellLabel)> {
        self.cells
            .iter()
            .enumerate()
            .filter(|(_, l)| **l != CellLabel::None)
            .map(move |(k, l)| (k / self.n, k % self.n, l))
    }

    /// Entity types appearing in THW cells, sorted.
    pub fn entity_types(&self) -> Vec<String> {
        let set: BTreeSet<&String> = self
            .cells
            .iter()
            .filter_map(|l| match l {
                CellLabel::Thw(t) => Some(t),
                _ => None,
            })
            .collect();
        set.into_iter().cloned().collect()
    }

    fn to_doc(&self) -> GridJson {
        GridJson {
            n: self.n,
            cells: self
                .labeled_cells()
                .map(|(row, col, label)| CellJson {
                    row,
                    col,
                    label: label.clone(),
                })
                .collect(),
        }
    }

    pub fn to_json_value(&self) -> serde_json::Value {
        serde_json::to_value(self.to_doc()).expect("grid serializes")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_doc()).expect("grid serializes")
    }

    /// Parses `{"n": .., "cells": [{"row", "col", "label"}]}`. Extra fields are
    /// ignored; explicit `NONE` cells are accepted.
    pub fn from_json_value(value: &serde_json::Value) -> Result<Self, GridError> {
        let doc: GridJson = serde_json::from_value(value.clone())?;
        Self::from_doc(doc)
    }

    pub fn from_json(src: &str) -> Result<Self, GridError> {
        let doc: GridJson = serde_json::from_str(src)?;
        Self::from_doc(doc)
    }

    fn from_doc(doc: GridJson) -> Result<Self, GridError> {
        let n = doc.n;
        if doc.cells.iter().any(|c| c.row >= n || c.col >= n) {
            let c = doc.cells.iter().find(|c| c.row >= n || c.col >= n).unwrap();
            return Err(GridError::OutOfBounds {
                row: c.row,
                col: c.col,
                n,
            });
        }
        // n * n must not blow up on hostile input; cells are bounded by the doc
        let n2 = n
            .checked_mul(n)
            .ok_or(GridError::ShapeMismatch(format!("n = {n} is too large")))?;
        if n2 > (1 << 26) {
            return Err(GridError::ShapeMismatch(format!("n = {n} is too large")));
        }
        let mut grid = Self::new(n);
        let mut seen = BTreeSet::new();
        for c in doc.cells {
            if !seen.insert((c.row, c.col)) {
                return Err(GridError::DuplicateCell {
                    row: c.row,
                    col: c.col,
                });
            }
            grid.set(c.row, c.col, c.label)?;
        }
        Ok(grid)
    }
}

/// Caps on decoding path enumeration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecodeLimits {
    pub max_entity_tokens: usize,
    pub max_paths_per_anchor: usize,
}

impl DecodeLimits {
    pub fn new(max_entity_tokens: usize, max_paths_per_anchor: usize) -> Result<Self, GridError> {
        if max_entity_tokens == 0 || max_paths_per_anchor == 0 {
            return Err(GridError::InvalidLimits);
        }
        Ok(Self {
            max_entity_tokens,
            max_paths_per_anchor,
        })
    }
}

impl Default for DecodeLimits {
    fn default() -> Self {
        Self {
            max_entity_tokens: 32,
            max_paths_per_anchor: 100,
        }
    }
}

/// Builds the relation grid for a mention set over `n` tokens.
///
/// Duplicate mentions are collapsed. Two mentions with the same head and tail
/// but different types cannot share a THW cell and produce
/// [`GridError::Conflict`].
pub fn encode_grid(entities: &[EntityMention], n: usize) -> Result<RelationGrid, GridError> {
    let unique: BTreeSet<&EntityMention> = entities.iter().collect();
    let mut grid = RelationGrid::new(n);
    let mut owners: HashMap<(usize, usize), &EntityMention> = HashMap::new();
    for m in unique {
        m.validate(n)?;
        for w in m.token_indices.windows(2) {
            grid.set(w[0], w[1], CellLabel::Nnw)?;
        }
        let cell = (m.tail(), m.head());
        match owners.get(&cell) {
            Some(prev) if prev.type_label != m.type_label => {
                return Err(GridError::Conflict {
                    first: (*prev).clone(),
                    second: m.clone(),
                    row: cell.0,
                    col: cell.1,
                });
            }
            Some(_) => {}
            None => {
                owners.insert(cell, m);
                grid.set(cell.0, cell.1, CellLabel::Thw(m.type_label.clone()))?;
            }
        }
    }
    Ok(grid)
}

/// Enumerates every NNW path between the head and tail of each THW anchor.
///
/// Output is deduplicated and sorted by first index, length, then type. Each
/// anchor contributes at most `limits.max_paths_per_anchor` paths, taken in
/// lexicographic order, and no path longer than `limits.max_entity_tokens`.
pub fn decode_grid(grid: &RelationGrid, limits: DecodeLimits) -> Vec<EntityMention> {
    let n = grid.n();
    let mut succ: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut anchors = Vec::new();
    for (row, col, label) in grid.labeled_cells() {
        match label {
            CellLabel::Nnw if row < col => succ[row].push(col),
            CellLabel::Thw(t) if row >= col => anchors.push((row, col, t)),
            _ => {}
        }
    }
    // labeled_cells is row-major, so each successor list is already ascending

    let mut found = BTreeSet::new();
    let mut dist = vec![usize::MAX; n];
    for (tail, head, type_label) in anchors {
        if head == tail {
            found.insert(EntityMention {
                type_label: type_label.clone(),
                token_indices: vec![head],
            });
            continue;
        }
        if limits.max_entity_tokens < 2 {
            continue;
        }
        // fewest NNW hops from each node in [head, tail] to the tail
        dist[tail] = 0;
        for u in (head..tail).rev() {
            dist[u] = succ[u]
                .iter()
                .take_while(|&&v| v <= tail)
                .map(|&v| dist[v])
                .filter(|&d| d != usize::MAX)
                .min()
                .map_or(usize::MAX, |d| d + 1);
        }
        if dist[head] != usize::MAX && dist[head] < limits.max_entity_tokens {
            enumerate_paths(&succ, &dist, head, tail, limits, |path| {
                found.insert(EntityMention {
                    type_label: type_label.clone(),
                    token_indices: path.to_vec(),
                });
            });
        }
        for d in &mut dist[head..=tail] {
            *d = usize::MAX;
        }
    }
    found.into_iter().collect()
}

/// Depth-first, ascending-successor enumeration. Only branches that can still
/// reach `tail` within the token budget are entered, so every expansion leads
/// to at least one emitted path.
fn enumerate_paths(
    succ: &[Vec<usize>],
    dist: &[usize],
    head: usize,
    tail: usize,
    limits: DecodeLimits,
    mut emit: impl FnMut(&[usize]),
) {
    let mut path = vec![head];
    let mut cursor = vec![0usize];
    let mut emitted = 0;
    while let Some(&u) = path.last() {
        if u == tail {
            emit(&path);
            emitted += 1;
            if emitted >= limits.max_paths_per_anchor {
                return;
            }
            path.pop();
            cursor.pop();
            continue;
        }
        let k = cursor.last_mut().unwrap();
        let next = succ[u][*k..].iter().position(|&v| {
            v <= tail
                && dist[v] != usize::MAX
                && path.len() + 1 + dist[v] <= limits.max_entity_tokens
        });
        match next {
            Some(off) => {
                let v = succ[u][*k + off];
                *k += off + 1;
                path.push(v);
                cursor.push(0);
            }
            None => {
                path.pop();
                cursor.pop();
            }
        }
    }
}

/// Per-cell label distributions over `[NONE, NNW, THW(t1), ..., THW(tm)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridScores {
    n: usize,
    labels: Vec<CellLabel>,
    dist: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ScoresJson {
    n: usize,
    labels: Vec<CellLabel>,
    dist: Vec<Vec<Vec<f64>>>,
}

impl GridScores {
    /// `dist` is row-major `n x n x labels.len()`. Labels must start with
    /// NONE, NNW and continue with distinct THW types.
    pub fn new(n: usize, labels: Vec<CellLabel>, dist: Vec<f64>) -> Result<Self, GridError> {
        check_label_set(&labels)?;
        let l = labels.len();
        let expected = n
            .checked_mul(n)
            .and_then(|x| x.checked_mul(l))
            .ok_or_else(|| GridError::ShapeMismatch(format!("n = {n} is too large")))?;
        if dist.len() != expected {
            return Err(GridError::ShapeMismatch(format!(
                "expected {expected} probabilities for n = {n} and {l} labels, got {}",
                dist.len()
            )));
        }
        for (k, cell) in dist.chunks(l).enumerate() {
            if cell.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(GridError::InvalidScores(format!(
                    "cell ({}, {}) has a negative or non-finite probability",
                    k / n,
                    k % n
                )));
            }
            let sum: f64 = cell.iter().sum();
            if (sum - 1.0).abs() > DIST_SUM_TOLERANCE {
                return Err(GridError::InvalidScores(format!(
                    "cell ({}, {}) sums to {sum}",
                    k / n,
                    k % n
                )));
            }
        }
        Ok(Self { n, labels, dist })
    }

    /// Canonical label set for a list of entity types (sorted, deduplicated).
    pub fn label_set_for<S: AsRef<str>>(types: &[S]) -> Vec<CellLabel> {
        let types: BTreeSet<&str> = types.iter().map(AsRef::as_ref).collect();
        let mut labels = vec![CellLabel::None, CellLabel::Nnw];
        labels.extend(types.into_iter().map(|t| CellLabel::Thw(t.to_string())));
        labels
    }

    /// One-hot scores reproducing `grid` over `labels`.
    pub fn one_hot(grid: &RelationGrid, labels: Vec<CellLabel>) -> Result<Self, GridError> {
        check_label_set(&labels)?;
        let n = grid.n();
        let l = labels.len();
        let mut dist = vec![0.0; n * n * l];
        for row in 0..n {
            for col in 0..n {
                let label = grid.get(row, col);
                let idx = labels.iter().position(|x| x == label).ok_or_else(|| {
                    GridError::InvalidLabelSet(format!("label {label} is missing"))
                })?;
                dist[(row * n + col) * l + idx] = 1.0;
            }
        }
        Ok(Self { n, labels, dist })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn labels(&self) -> &[CellLabel] {
        &self.labels
    }

    pub fn cell(&self, row: usize, col: usize) -> &[f64] {
        let l = self.labels.len();
        let k = (row * self.n + col) * l;
        &self.dist[k..k + l]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.dist
    }

    fn to_doc(&self) -> ScoresJson {
        let l = self.labels.len();
        let dist = (0..self.n)
            .map(|r| {
                (0..self.n)
                    .map(|c| self.dist[(r * self.n + c) * l..][..l].to_vec())
                    .collect()
            })
            .collect();
        ScoresJson {
            n: self.n,
            labels: self.labels.clone(),
            dist,
        }
    }

    pub fn to_json_value(&self) -> serde_json::Value {
        serde_json::to_value(self.to_doc()).expect("scores serialize")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_doc()).expect("scores serialize")
    }

    pub fn from_json(src: &str) -> Result<Self, GridError> {
        Self::from_doc(serde_json::from_str(src)?)
    }

    /// Parses `{"n", "labels", "dist"}`. Labels may be listed in any order;
    /// they are permuted into canonical order (NONE, NNW, THW types sorted).
    pub fn from_json_value(value: &serde_json::Value) -> Result<Self, GridError> {
        Self::from_doc(serde_json::from_value(value.clone())?)
    }

    fn from_doc(doc: ScoresJson) -> Result<Self, GridError> {
        let ScoresJson { n, labels, dist } = doc;
        let unique: BTreeSet<&CellLabel> = labels.iter().collect();
        if unique.len() != labels.len() {
            return Err(GridError::InvalidLabelSet("duplicate labels".into()));
        }
        // BTreeSet order is NONE < NNW < THW(sorted), i.e. canonical
        let canonical: Vec<CellLabel> = unique.into_iter().cloned().collect();
        check_label_set(&canonical)?;
        let perm: Vec<usize> = canonical
            .iter()
            .map(|c| labels.iter().position(|x| x == c).unwrap())
            .collect();
        if dist.len() != n {
            return Err(GridError::ShapeMismatch(format!(
                "dist has {} rows, n = {n}",
                dist.len()
            )));
        }
        let l = labels.len();
        let mut flat = Vec::with_capacity(n.saturating_mul(n).saturating_mul(l).min(1 << 24));
        for (r, row) in dist.iter().enumerate() {
            if row.len() != n {
                return Err(GridError::ShapeMismatch(format!(
                    "row {r} has {} cells, n = {n}",
                    row.len()
                )));
            }
            for (c, cell) in row.iter().enumerate() {
                if cell.len() != l {
                    return Err(GridError::ShapeMismatch(format!(
                        "cell ({r}, {c}) has {} entries for {l} labels",
                        cell.len()
                    )));
                }
                flat.extend(perm.iter().map(|&p| cell[p]));
            }
        }
        Self::new(n, canonical, flat)
    }
}

fn check_label_set(labels: &[CellLabel]) -> Result<(), GridError> {
    if labels.len() < 2 || labels[0] != CellLabel::None || labels[1] != CellLabel::Nnw {
        return Err(GridError::InvalidLabelSet(
            "must start with NONE, NNW".into(),
        ));
    }
    let mut types = BTreeSet::new();
    for l in &labels[2..] {
        match l {
            CellLabel::Thw(t) if types.insert(t) => {}
            CellLabel::Thw(t) => {
                return Err(GridError::InvalidLabelSet(format!("THW:{t} listed twice")))
            }
            other => {
                return Err(GridError::InvalidLabelSet(format!(
                    "{other} after the first two labels"
                )))
            }
        }
    }
    Ok(())
}

/// Per-cell argmax (ties go to the earliest label) into a relation grid.
/// Cells whose argmax breaks the triangle discipline become NONE.
pub fn argmax_grid(scores: &GridScores) -> RelationGrid {
    let n = scores.n();
    let mut grid = RelationGrid::new(n);
    for row in 0..n {
        for col in 0..n {
            let cell = scores.cell(row, col);
            let mut best = 0;
            for (k, &p) in cell.iter().enumerate().skip(1) {
                if p > cell[best] {
                    best = k;
                }
            }
            let label = &scores.labels()[best];
            if *label != CellLabel::None && label.allowed_at(row, col) {
                grid.cells[row * n + col] = label.clone();
            }
        }
    }
    grid
}

pub fn decode_scores(scores: &GridScores, limits: DecodeLimits) -> Vec<EntityMention> {
    decode_grid(&argmax_grid(scores), limits)
}

/// Mean-pools member distributions cell by cell, in member order.
pub fn fuse_scores(members: &[GridScores]) -> Result<GridScores, GridError> {
    let first = members.first().ok_or(GridError::EmptyFusion)?;
    for (i, m) in members.iter().enumerate().skip(1) {
        if m.n != first.n {
            return Err(GridError::ShapeMismatch(format!(
                "member {i} has n = {}, expected {}",
                m.n, first.n
            )));
        }
        if m.labels != first.labels {
            return Err(GridError::ShapeMismatch(format!(
                "member {i} has a different label set"
            )));
        }
    }
    let count = members.len() as f64;
    let mut dist = vec![0.0; first.dist.len()];
    for m in members {
        for (acc, p) in dist.iter_mut().zip(&m.dist) {
            *acc += p;
        }
    }
    for p in &mut dist {
        *p /= count;
    }
    Ok(GridScores {
        n: first.n,
        labels: first.labels.clone(),
        dist,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(t: &str, idx: &[usize]) -> EntityMention {
        EntityMention {
            type_label: t.into(),
            token_indices: idx.to_vec(),
        }
    }

    fn thw(t: &str) -> CellLabel {
        CellLabel::Thw(t.into())
    }

    fn labeled(grid: &RelationGrid) -> Vec<(usize, usize, CellLabel)> {
        grid.labeled_cells()
            .map(|(r, c, l)| (r, c, l.clone()))
            .collect()
    }

    #[test]
    fn encode_contiguous() {
        let g = encode_grid(&[m("SYMPTOM", &[1, 2])], 4).unwrap();
        assert_eq!(
            labeled(&g),
            vec![(1, 2, CellLabel::Nnw), (2, 1, thw("SYMPTOM"))]
        );
    }

    #[test]
    fn encode_single_token() {
        let g = encode_grid(&[m("SYMPTOM", &[3])], 4).unwrap();
        assert_eq!(labeled(&g), vec![(3, 3, thw("SYMPTOM"))]);
    }

    #[test]
    fn encode_discontinuous() {
        let g = encode_grid(&[m("SYMPTOM", &[0, 1, 3])], 4).unwrap();
        assert_eq!(
            labeled(&g),
            vec![
                (0, 1, CellLabel::Nnw),
                (1, 3, CellLabel::Nnw),
                (3, 0, thw("SYMPTOM"))
            ]
        );
    }

    #[test]
    fn encode_conflict_reports_both() {
        let err = encode_grid(&[m("A", &[0, 2]), m("B", &[0, 1, 2])], 3).unwrap_err();
        match err {
            GridError::Conflict {
                first,
                second,
                row,
                col,
            } => {
                assert_eq!((row, col), (2, 0));
                let pair: BTreeSet<_> = [first, second].into_iter().collect();
                assert!(pair.contains(&m("A", &[0, 2])) && pair.contains(&m("B", &[0, 1, 2])));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn encode_rejects_invalid_mentions() {
        assert!(matches!(
            encode_grid(&[m("A", &[])], 3),
            Err(GridError::InvalidMention { .. })
        ));
        assert!(matches!(
            encode_grid(&[m("A", &[2, 1])], 3),
            Err(GridError::InvalidMention { .. })
        ));
        assert!(matches!(
            encode_grid(&[m("A", &[1, 1])], 3),
            Err(GridError::InvalidMention { .. })
        ));
        assert!(matches!(
            encode_grid(&[m("A", &[3])], 3),
            Err(GridError::InvalidMention { .. })
        ));
    }

    #[test]
    fn duplicates_collapse() {
        let g = encode_grid(&[m("A", &[0, 1]), m("A", &[0, 1])], 2).unwrap();
        assert_eq!(
            decode_grid(&g, DecodeLimits::default()),
            vec![m("A", &[0, 1])]
        );
    }

    #[test]
    fn decode_round_trip_single() {
        let g = encode_grid(&[m("SYMPTOM", &[1, 2])], 4).unwrap();
        assert_eq!(
            decode_grid(&g, DecodeLimits::default()),
            vec![m("SYMPTOM", &[1, 2])]
        );
    }

    #[test]
    fn decode_spurious_paths() {
        // NNW edges 1-2, 2-4, 2-3, 3-4 with anchors (4,1) and (4,2). Paths
        // from 2 to 4 include the direct 2-4 edge contributed by the first
        // mention, so [2, 4] is decoded as well.
        let g = encode_grid(&[m("T", &[1, 2, 4]), m("T", &[2, 3, 4])], 5).unwrap();
        assert_eq!(
            decode_grid(&g, DecodeLimits::default()),
            vec![
                m("T", &[1, 2, 4]),
                m("T", &[1, 2, 3, 4]),
                m("T", &[2, 4]),
                m("T", &[2, 3, 4])
            ]
        );
    }

    #[test]
    fn decode_empty() {
        assert!(decode_grid(&RelationGrid::new(5), DecodeLimits::default()).is_empty());
        assert!(decode_grid(&RelationGrid::new(0), DecodeLimits::default()).is_empty());
    }

    #[test]
    fn decode_respects_limits() {
        // complete NNW DAG on 0..6, anchor (5, 0): 2^4 = 16 paths
        let mut g = RelationGrid::new(6);
        for i in 0..6 {
            for j in i + 1..6 {
                g.set(i, j, CellLabel::Nnw).unwrap();
            }
        }
        g.set(5, 0, thw("T")).unwrap();
        assert_eq!(decode_grid(&g, DecodeLimits::default()).len(), 16);

        let capped = decode_grid(&g, DecodeLimits::new(32, 3).unwrap());
        // first three paths in lexicographic DFS order
        let mut expect = vec![
            m("T", &[0, 1, 2, 3, 4, 5]),
            m("T", &[0, 1, 2, 3, 5]),
            m("T", &[0, 1, 2, 4, 5]),
        ];
        expect.sort();
        assert_eq!(capped, expect);

        let short = decode_grid(&g, DecodeLimits::new(3, 100).unwrap());
        assert_eq!(short.len(), 5); // [0,5] and [0,k,5] for k in 1..5
        assert!(short.iter().all(|e| e.len() <= 3));

        assert!(decode_grid(&g, DecodeLimits::new(1, 100).unwrap()).is_empty());
        assert!(DecodeLimits::new(0, 1).is_err());
    }

    #[test]
    fn decode_sorted_by_first_len_type() {
        let g = encode_grid(
            &[
                m("B", &[0]),
                m("A", &[1, 2]),
                m("A", &[0, 1, 2]),
                m("C", &[2]),
            ],
            3,
        )
        .unwrap();
        assert_eq!(
            decode_grid(&g, DecodeLimits::default()),
            vec![
                m("B", &[0]),
                m("A", &[0, 1, 2]),
                m("A", &[1, 2]),
                m("C", &[2])
            ]
        );
    }

    #[test]
    fn set_enforces_triangles() {
        let mut g = RelationGrid::new(3);
        assert!(matches!(
            g.set(1, 1, CellLabel::Nnw),
            Err(GridError::TriangleViolation { .. })
        ));
        assert!(matches!(
            g.set(0, 2, thw("T")),
            Err(GridError::TriangleViolation { .. })
        ));
        assert!(matches!(
            g.set(3, 0, thw("T")),
            Err(GridError::OutOfBounds { .. })
        ));
        g.set(2, 2, thw("T")).unwrap();
    }

    #[test]
    fn grid_json_round_trip() {
        let g = encode_grid(&[m("SYMPTOM", &[0, 1, 3])], 4).unwrap();
        let js = g.to_json();
        assert_eq!(
            js,
            r#"{"n":4,"cells":[{"row":0,"col":1,"label":"NNW"},{"row":1,"col":3,"label":"NNW"},{"row":3,"col":0,"label":"THW:SYMPTOM"}]}"#
        );
        assert_eq!(RelationGrid::from_json(&js).unwrap(), g);
    }

    #[test]
    fn grid_json_errors() {
        assert!(matches!(
            RelationGrid::from_json(r#"{"n":2,"cells":[{"row":0,"col":0,"label":"NNW"}]}"#),
            Err(GridError::TriangleViolation { .. })
        ));
        assert!(matches!(
            RelationGrid::from_json(r#"{"n":2,"cells":[{"row":0,"col":1,"label":"XYZ"}]}"#),
            Err(GridError::Json(_))
        ));
        assert!(matches!(
            RelationGrid::from_json(
                r#"{"n":2,"cells":[{"row":0,"col":1,"label":"NNW"},{"row":0,"col":1,"label":"NNW"}]}"#
            ),
            Err(GridError::DuplicateCell { .. })
        ));
        assert!(matches!(
            RelationGrid::from_json(r#"{"n":2,"cells":[{"row":5,"col":1,"label":"NNW"}]}"#),
            Err(GridError::OutOfBounds { .. })
        ));
        assert!(RelationGrid::from_json(r#"{"n":18446744073709551615,"cells":[]}"#).is_err());
    }

    #[test]
    fn decode_scores_one_hot() {
        let ents = vec![m("A", &[0, 2]), m("B", &[1])];
        let g = encode_grid(&ents, 3).unwrap();
        let s = GridScores::one_hot(&g, GridScores::label_set_for(&["A", "B"])).unwrap();
        assert_eq!(
            decode_scores(&s, DecodeLimits::default()),
            vec![m("A", &[0, 2]), m("B", &[1])]
        );
    }

    #[test]
    fn decode_scores_uniform_is_empty() {
        let labels = GridScores::label_set_for(&["A"]);
        let s = GridScores::new(3, labels, vec![1.0 / 3.0; 27]);
        // 3 * (1/3) is not exactly 1 but within tolerance
        let s = s.unwrap();
        assert!(decode_scores(&s, DecodeLimits::default()).is_empty());
    }

    #[test]
    fn argmax_forces_triangle() {
        let labels = GridScores::label_set_for(&["A"]);
        let n = 2;
        let mut dist = Vec::new();
        for r in 0..n {
            for c in 0..n {
                dist.extend(match (r, c) {
                    (0, 1) => [0.1, 0.1, 0.8], // THW in the upper triangle
                    (1, 0) => [0.1, 0.8, 0.1], // NNW in the lower triangle
                    _ => [0.2, 0.0, 0.8],
                });
            }
        }
        let s = GridScores::new(n, labels, dist).unwrap();
        let g = argmax_grid(&s);
        assert_eq!(*g.get(0, 1), CellLabel::None);
        assert_eq!(*g.get(1, 0), CellLabel::None);
        assert_eq!(*g.get(0, 0), thw("A"));
        assert_eq!(
            decode_scores(&s, DecodeLimits::default()),
            vec![m("A", &[0]), m("A", &[1])]
        );
    }

    #[test]
    fn scores_validation() {
        let labels = GridScores::label_set_for(&["A"]);
        assert!(matches!(
            GridScores::new(1, labels.clone(), vec![0.5, 0.5]),
            Err(GridError::ShapeMismatch(_))
        ));
        assert!(matches!(
            GridScores::new(1, labels.clone(), vec![0.5, 0.6, 0.0]),
            Err(GridError::InvalidScores(_))
        ));
        assert!(matches!(
            GridScores::new(1, labels.clone(), vec![1.5, -0.5, 0.0]),
            Err(GridError::InvalidScores(_))
        ));
        assert!(matches!(
            GridScores::new(1, vec![CellLabel::Nnw, CellLabel::None], vec![1.0, 0.0]),
            Err(GridError::InvalidLabelSet(_))
        ));
        assert!(matches!(
            GridScores::new(
                1,
                vec![CellLabel::None, CellLabel::Nnw, thw("A"), thw("A")],
                vec![1.0, 0.0, 0.0, 0.0]
            ),
            Err(GridError::InvalidLabelSet(_))
        ));
    }

    #[test]
    fn scores_json_canonicalizes_label_order() {
        let src = r#"{"n":1,"labels":["THW:B","NNW","THW:A","NONE"],"dist":[[[0.1,0.2,0.3,0.4]]]}"#;
        let s = GridScores::from_json(src).unwrap();
        assert_eq!(
            s.labels(),
            GridScores::label_set_for(&["A", "B"]).as_slice()
        );
        assert_eq!(s.cell(0, 0), &[0.4, 0.2, 0.3, 0.1]);
        let back = GridScores::from_json(&s.to_json()).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn fuse_examples() {
        let labels = GridScores::label_set_for(&["A"]);
        let a = GridScores::new(1, labels.clone(), vec![1.0, 0.0, 0.0]).unwrap();
        let b = GridScores::new(1, labels.clone(), vec![0.0, 1.0, 0.0]).unwrap();
        assert_eq!(fuse_scores(std::slice::from_ref(&a)).unwrap(), a);
        assert_eq!(
            fuse_scores(&[a.clone(), b]).unwrap().cell(0, 0),
            &[0.5, 0.5, 0.0]
        );
        assert!(matches!(fuse_scores(&[]), Err(GridError::EmptyFusion)));
        let other =
            GridScores::new(1, GridScores::label_set_for(&["B"]), vec![1.0, 0.0, 0.0]).unwrap();
        assert!(matches!(
            fuse_scores(&[a.clone(), other]),
            Err(GridError::ShapeMismatch(_))
        ));
        let bigger = GridScores::new(2, labels, [1.0, 0.0, 0.0].repeat(4)).unwrap();
        assert!(matches!(
            fuse_scores(&[a, bigger]),
            Err(GridError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn label_parsing() {
        assert_eq!("THW:SYMPTOM".parse::<CellLabel>().unwrap(), thw("SYMPTOM"));
        assert!("THW:".parse::<CellLabel>().is_err());
        assert!("nnw".parse::<CellLabel>().is_err());
        assert_eq!(thw("X").to_string(), "THW:X");
    }
}
