//! Vocabulary, embedding tables and the encoding map `g`.
//!
//! The canonical table defines the prompt-space metric: the distance between
//! two prompts is the Euclidean distance between their mean-pooled canonical
//! embeddings. The encoder `g` is a full-rank linear map of that space, so its
//! bi-Lipschitz constants follow from the singular values of the transform.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type TokenId = usize;

#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    id_of: HashMap<String, TokenId>,
}

impl Vocabulary {
    pub fn new(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 2 {
            return Err(Error::DegenerateVocabulary(format!(
                "need at least 2 tokens, got {}",
                tokens.len()
            )));
        }
        let mut id_of = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(Error::DegenerateVocabulary(format!("invalid token {t:?}")));
            }
            if id_of.insert(t.clone(), i).is_some() {
                return Err(Error::DegenerateVocabulary(format!("duplicate token {t:?}")));
            }
        }
        Ok(Vocabulary { tokens, id_of })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token(&self, id: TokenId) -> &str {
        &self.tokens[id]
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.id_of.get(token).copied()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

/// A real vector in embedding space (canonical or encoded).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector(pub Vec<f64>);

impl EmbeddingVector {
    pub fn zeros(dim: usize) -> Self {
        EmbeddingVector(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }

    pub fn distance(&self, other: &[f64]) -> f64 {
        distance(&self.0, other)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }
}

impl From<Vec<f64>> for EmbeddingVector {
    fn from(v: Vec<f64>) -> Self {
        EmbeddingVector(v)
    }
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub(crate) fn distance(a: &[f64], b: &[f64]) -> f64 {
    squared_distance(a, b).sqrt()
}

/// Mean of a set of equal-length vectors.
pub fn mean_pool<'a>(rows: impl IntoIterator<Item = &'a [f64]>, dim: usize) -> EmbeddingVector {
    let mut acc = vec![0.0; dim];
    let mut n = 0usize;
    for row in rows {
        for (a, x) in acc.iter_mut().zip(row) {
            *a += x;
        }
        n += 1;
    }
    for a in &mut acc {
        *a /= n as f64;
    }
    EmbeddingVector(acc)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TableRole {
    Canonical,
    Encoded,
}

/// A `|V| x M` embedding matrix with its vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    vocab: Vocabulary,
    dim: usize,
    data: Vec<f64>,
    role: TableRole,
}

impl EmbeddingTable {
    pub fn new(vocab: Vocabulary, rows: Vec<Vec<f64>>, role: TableRole) -> Result<Self> {
        if rows.len() != vocab.len() {
            return Err(Error::DimensionMismatch { expected: vocab.len(), found: rows.len() });
        }
        let dim = rows.first().map_or(0, Vec::len);
        if dim == 0 {
            return Err(Error::InvalidConfig("embedding dimension must be at least 1".into()));
        }
        let mut data = Vec::with_capacity(dim * rows.len());
        for row in &rows {
            if row.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, found: row.len() });
            }
            if let Some(x) = row.iter().find(|x| !x.is_finite()) {
                return Err(Error::InvalidConfig(format!("non-finite embedding entry {x}")));
            }
            data.extend_from_slice(row);
        }
        Ok(EmbeddingTable { vocab, dim, data, role })
    }

    /// Evenly spaced 1-D table with tokens `t0`, `t1`, ...
    pub fn lattice_1d(count: usize, start: f64, step: f64) -> Result<Self> {
        let vocab = Vocabulary::new((0..count).map(|i| format!("t{i}")).collect())?;
        let rows = (0..count).map(|i| vec![start + step * i as f64]).collect();
        Self::new(vocab, rows, TableRole::Canonical)
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn len(&self) -> usize {
        self.vocab.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vocab.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn role(&self) -> TableRole {
        self.role
    }

    pub fn row(&self, id: TokenId) -> &[f64] {
        &self.data[id * self.dim..(id + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn vector(&self, id: TokenId) -> EmbeddingVector {
        EmbeddingVector(self.row(id).to_vec())
    }

    /// Rescale so that the vocabulary diameter becomes 1.
    pub fn normalized(&self) -> Result<Self> {
        let omega = vocab_diameter(self)?;
        let mut out = self.clone();
        for x in &mut out.data {
            *x /= omega;
        }
        Ok(out)
    }

    /// Parse the text format: a `|V| M` header line followed by `|V|` lines of
    /// `token x1 ... xM`.
    pub fn read_from(reader: impl BufRead) -> Result<Self> {
        let mut lines = reader.lines().enumerate().filter_map(|(i, l)| match l {
            Ok(s) if s.trim().is_empty() => None,
            other => Some((i + 1, other)),
        });
        let (hline, header) = lines.next().ok_or(Error::Parse { line: 1, msg: "missing header".into() })?;
        let header = header?;
        let mut it = header.split_whitespace();
        let parse_usize = |s: Option<&str>, what: &str| -> Result<usize> {
            s.ok_or_else(|| Error::Parse { line: hline, msg: format!("missing {what}") })?
                .parse::<usize>()
                .map_err(|e| Error::Parse { line: hline, msg: format!("bad {what}: {e}") })
        };
        let n = parse_usize(it.next(), "vocabulary size")?;
        let m = parse_usize(it.next(), "dimension")?;
        if it.next().is_some() {
            return Err(Error::Parse { line: hline, msg: "header must be `|V| M`".into() });
        }
        let mut tokens = Vec::with_capacity(n);
        let mut rows = Vec::with_capacity(n);
        for (line_no, line) in lines {
            let line = line?;
            let mut parts = line.split_whitespace();
            let tok = parts.next().expect("non-empty line").to_string();
            let row = parts
                .map(|s| {
                    let x: f64 = s
                        .parse()
                        .map_err(|e| Error::Parse { line: line_no, msg: format!("bad number {s:?}: {e}") })?;
                    if x.is_finite() {
                        Ok(x)
                    } else {
                        Err(Error::Parse { line: line_no, msg: format!("non-finite value {s:?}") })
                    }
                })
                .collect::<Result<Vec<f64>>>()?;
            if row.len() != m {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("expected {m} coordinates, found {}", row.len()),
                });
            }
            tokens.push(tok);
            rows.push(row);
        }
        if tokens.len() != n {
            return Err(Error::Parse { line: hline, msg: format!("header declares {n} tokens, found {}", tokens.len()) });
        }
        Self::new(Vocabulary::new(tokens)?, rows, TableRole::Canonical)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(f))
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "{} {}", self.len(), self.dim)?;
        for (id, row) in self.rows().enumerate() {
            write!(w, "{}", self.vocab.token(id))?;
            for x in row {
                write!(w, " {x}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// A non-empty sequence of vocabulary indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    token_ids: Vec<TokenId>,
}

impl Prompt {
    pub fn new(token_ids: Vec<TokenId>, vocab_len: usize) -> Result<Self> {
        if token_ids.is_empty() {
            return Err(Error::EmptyPrompt);
        }
        if let Some(&id) = token_ids.iter().find(|&&id| id >= vocab_len) {
            return Err(Error::InvalidTokenId { id, len: vocab_len });
        }
        Ok(Prompt { token_ids })
    }

    pub fn ids(&self) -> &[TokenId] {
        &self.token_ids
    }

    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    pub fn to_text(&self, vocab: &Vocabulary) -> String {
        self.token_ids.iter().map(|&id| vocab.token(id)).collect::<Vec<_>>().join(" ")
    }
}

/// Whitespace tokenizer over a closed vocabulary.
pub fn tokenize(text: &str, vocab: &Vocabulary) -> Result<Prompt> {
    let ids = text
        .split_whitespace()
        .map(|unit| vocab.id(unit).ok_or_else(|| Error::UnknownToken(unit.to_string())))
        .collect::<Result<Vec<_>>>()?;
    Prompt::new(ids, vocab.len())
}

/// Mean-pooled canonical embedding of a prompt.
pub fn embed_prompt(prompt: &Prompt, table: &EmbeddingTable) -> EmbeddingVector {
    mean_pool(prompt.ids().iter().map(|&id| table.row(id)), table.dim())
}

/// Closest vocabulary entry in Euclidean distance; ties go to the lowest id.
pub fn nearest_token(v: &[f64], table: &EmbeddingTable) -> TokenId {
    debug_assert_eq!(v.len(), table.dim());
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (id, row) in table.rows().enumerate() {
        let d = squared_distance(v, row);
        if d < best_d {
            best_d = d;
            best = id;
        }
    }
    best
}

/// Largest pairwise distance between token embeddings (Ω).
pub fn vocab_diameter(table: &EmbeddingTable) -> Result<f64> {
    let mut best: f64 = 0.0;
    for i in 0..table.len() {
        for j in (i + 1)..table.len() {
            best = best.max(squared_distance(table.row(i), table.row(j)));
        }
    }
    if best == 0.0 {
        return Err(Error::DegenerateVocabulary("all embeddings are identical".into()));
    }
    Ok(best.sqrt())
}

/// Linear encoding map `g(x) = T x` with cached bi-Lipschitz constants.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderG {
    transform: DMatrix<f64>,
    inverse: DMatrix<f64>,
    c_a: f64,
    c_b: f64,
}

pub const SINGULAR_TOLERANCE: f64 = 1e-12;

fn singular_extremes(m: &DMatrix<f64>) -> (f64, f64) {
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.iter().copied().fold(0.0, f64::max);
    let min = sv.iter().copied().fold(f64::INFINITY, f64::min);
    (min, max)
}

impl EncoderG {
    pub fn new(transform: DMatrix<f64>) -> Result<Self> {
        if !transform.is_square() || transform.nrows() == 0 {
            return Err(Error::InvalidConfig(format!(
                "encoder transform must be square, got {}x{}",
                transform.nrows(),
                transform.ncols()
            )));
        }
        if transform.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidConfig("encoder transform has non-finite entries".into()));
        }
        let (smin, smax) = singular_extremes(&transform);
        if smin < SINGULAR_TOLERANCE {
            return Err(Error::SingularEncoder { sigma_min: smin });
        }
        let inverse = transform
            .clone()
            .try_inverse()
            .ok_or(Error::SingularEncoder { sigma_min: smin })?;
        Ok(EncoderG { transform, inverse, c_a: 1.0 / smax, c_b: 1.0 / smin })
    }

    pub fn identity(dim: usize) -> Self {
        Self::new(DMatrix::identity(dim, dim)).expect("identity is full rank")
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidConfig("encoder matrix must be square".into()));
        }
        Self::new(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
    }

    pub fn dim(&self) -> usize {
        self.transform.nrows()
    }

    pub fn transform(&self) -> &DMatrix<f64> {
        &self.transform
    }

    pub fn c_a(&self) -> f64 {
        self.c_a
    }

    pub fn c_b(&self) -> f64 {
        self.c_b
    }

    pub fn encode(&self, x: &[f64]) -> EmbeddingVector {
        let v = &self.transform * DVector::from_column_slice(x);
        EmbeddingVector(v.as_slice().to_vec())
    }

    /// Preimage of an encoded vector in canonical space.
    pub fn decode(&self, y: &[f64]) -> EmbeddingVector {
        let v = &self.inverse * DVector::from_column_slice(y);
        EmbeddingVector(v.as_slice().to_vec())
    }

    /// Preimage of an encoded-space direction (no translation involved).
    pub fn decode_into(&self, y: &[f64], out: &mut [f64]) {
        let n = self.dim();
        for (i, o) in out.iter_mut().enumerate() {
            *o = (0..n).map(|j| self.inverse[(i, j)] * y[j]).sum();
        }
    }
}

/// Recompute `(c_a, c_b) = (1/sigma_max, 1/sigma_min)` from the transform.
pub fn estimate_bilipschitz(enc: &EncoderG) -> Result<(f64, f64)> {
    let (smin, smax) = singular_extremes(&enc.transform);
    if smin < SINGULAR_TOLERANCE {
        return Err(Error::SingularEncoder { sigma_min: smin });
    }
    Ok((1.0 / smax, 1.0 / smin))
}
