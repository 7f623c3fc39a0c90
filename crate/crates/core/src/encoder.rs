//! Temporal-aware pair representations.
//!
//! A claim event, a document title and an evidence event are laid out as
//! `[CLS] claim [SEP] title [SEP] evidence [SEP]`, embedded token by token,
//! and every date span is pooled, offset by its temporal encoding and passed
//! through a small transformer ([`DateContextualizer`]). Each date span then
//! collapses to one position carrying its contextualized row.

use std::time::Duration as StdDuration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::autodiff::{self, Tape, Var};
use crate::events::{Event, EventPair};
use crate::relevance;
use crate::temporal::{self, PositionIndex, TemporalError, TimePoint};
use crate::tensor::Matrix;
use crate::text;

pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("embedding provider failed: {0}")]
    Provider(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid contextualizer shape: d = {d}, heads = {heads}")]
    InvalidShape { d: usize, heads: usize },
    #[error(transparent)]
    Temporal(#[from] TemporalError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DateSpan {
    pub start: usize,
    pub end: usize,
    pub point: TimePoint,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence {
    pub tokens: Vec<String>,
    pub date_spans: Vec<DateSpan>,
}

fn push_event(event: &Event, tokens: &mut Vec<String>, spans: &mut Vec<DateSpan>) {
    tokens.extend(text::word_tokens(&event.core_text));
    for slot in &event.temporal {
        let toks = text::word_tokens(&slot.raw);
        let offset = tokens.len();
        if let Some(arg) = &slot.parsed {
            for m in temporal::scan_dates(&toks, 1) {
                if arg.points.contains(&m.point) {
                    spans.push(DateSpan { start: offset + m.start, end: offset + m.end, point: m.point });
                }
            }
        }
        tokens.extend(toks);
    }
}

pub fn assemble_sequence(claim: &Event, title: &str, evidence: &Event) -> TokenSequence {
    let mut tokens = vec![CLS.to_string()];
    let mut date_spans = Vec::new();
    push_event(claim, &mut tokens, &mut date_spans);
    tokens.push(SEP.to_string());
    tokens.extend(text::word_tokens(title));
    tokens.push(SEP.to_string());
    push_event(evidence, &mut tokens, &mut date_spans);
    tokens.push(SEP.to_string());
    TokenSequence { tokens, date_spans }
}

/// Source of per-token contextual vectors.
pub trait EmbeddingProvider: Send + Sync {
    fn dim(&self) -> usize;
    fn embed(&self, tokens: &[String]) -> Result<Matrix, EncoderError>;
}

/// Offline provider: each lowercased token maps to a pseudo-random unit
/// vector derived from a hash of `(seed, token)`.
#[derive(Debug, Clone)]
pub struct HashStubProvider {
    dim: usize,
    seed: u64,
}

impl HashStubProvider {
    pub fn new(dim: usize, seed: u64) -> Self {
        HashStubProvider { dim, seed }
    }

    pub fn token_vector(&self, token: &str) -> Vec<f64> {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(token.to_lowercase().as_bytes());
        let digest: [u8; 32] = h.finalize().into();
        let mut rng = ChaCha8Rng::from_seed(digest);
        let v: Vec<f64> = (0..self.dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = crate::tensor::norm(&v);
        v.into_iter().map(|x| x / n).collect()
    }
}

impl EmbeddingProvider for HashStubProvider {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, tokens: &[String]) -> Result<Matrix, EncoderError> {
        let rows: Vec<Vec<f64>> = tokens.iter().map(|t| self.token_vector(t)).collect();
        if rows.is_empty() {
            return Ok(Matrix::zeros(0, self.dim));
        }
        Ok(Matrix::from_rows(&rows))
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    tokens: &'a [String],
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f64>>,
    dim: usize,
}

/// Provider behind `POST {base}/embed`.
#[derive(Debug, Clone)]
pub struct HttpEmbeddingProvider {
    url: String,
    dim: usize,
    retries: u32,
    client: reqwest::blocking::Client,
}

impl HttpEmbeddingProvider {
    pub fn new(base_url: &str, dim: usize, timeout: StdDuration, retries: u32) -> Result<Self, EncoderError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| EncoderError::Provider(e.to_string()))?;
        Ok(HttpEmbeddingProvider {
            url: format!("{}/embed", base_url.trim_end_matches('/')),
            dim,
            retries,
            client,
        })
    }

    fn call(&self, tokens: &[String]) -> Result<EmbedResponse, reqwest::Error> {
        self.client
            .post(&self.url)
            .json(&EmbedRequest { tokens })
            .send()?
            .error_for_status()?
            .json()
    }
}

impl EmbeddingProvider for HttpEmbeddingProvider {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, tokens: &[String]) -> Result<Matrix, EncoderError> {
        let mut attempt = 0;
        let resp = loop {
            match self.call(tokens) {
                Ok(r) => break r,
                Err(e) if attempt < self.retries && !e.is_decode() && !e.is_status() => {
                    attempt += 1;
                    log::warn!("embedding request failed ({e}), retry {attempt}/{}", self.retries);
                }
                Err(e) => return Err(EncoderError::Provider(e.to_string())),
            }
        };
        if resp.dim != self.dim {
            return Err(EncoderError::DimensionMismatch { expected: self.dim, found: resp.dim });
        }
        if resp.vectors.len() != tokens.len() {
            return Err(EncoderError::DimensionMismatch { expected: tokens.len(), found: resp.vectors.len() });
        }
        if let Some(bad) = resp.vectors.iter().find(|v| v.len() != self.dim) {
            return Err(EncoderError::DimensionMismatch { expected: self.dim, found: bad.len() });
        }
        if resp.vectors.is_empty() {
            return Ok(Matrix::zeros(0, self.dim));
        }
        Ok(Matrix::from_rows(&resp.vectors))
    }
}

pub fn contextual_embed(seq: &TokenSequence, provider: &dyn EmbeddingProvider) -> Result<Matrix, EncoderError> {
    let b = provider.embed(&seq.tokens)?;
    if b.rows() != seq.tokens.len() {
        return Err(EncoderError::DimensionMismatch { expected: seq.tokens.len(), found: b.rows() });
    }
    if b.cols() != provider.dim() {
        return Err(EncoderError::DimensionMismatch { expected: provider.dim(), found: b.cols() });
    }
    Ok(b)
}

/// Mean of each date span's token rows, in span order.
pub fn pool_dates(b: &Matrix, seq: &TokenSequence) -> Vec<(Vec<f64>, TimePoint)> {
    seq.date_spans
        .iter()
        .map(|s| {
            let mut acc = vec![0.0; b.cols()];
            for r in s.start..s.end {
                for (a, v) in acc.iter_mut().zip(b.row(r)) {
                    *a += v;
                }
            }
            let n = (s.end - s.start) as f64;
            (acc.into_iter().map(|x| x / n).collect(), s.point)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderLayer {
    pub wq: Matrix,
    pub bq: Matrix,
    pub wk: Matrix,
    pub bk: Matrix,
    pub wv: Matrix,
    pub bv: Matrix,
    pub wo: Matrix,
    pub bo: Matrix,
    pub ln1_g: Matrix,
    pub ln1_b: Matrix,
    pub w1: Matrix,
    pub b1: Matrix,
    pub w2: Matrix,
    pub b2: Matrix,
    pub ln2_g: Matrix,
    pub ln2_b: Matrix,
}

impl EncoderLayer {
    fn init(d: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (d as f64).sqrt();
        let mut uni = |r: usize, c: usize| {
            Matrix::from_vec(r, c, (0..r * c).map(|_| rng.random_range(-bound..bound)).collect())
        };
        EncoderLayer {
            wq: uni(d, d),
            bq: Matrix::zeros(1, d),
            wk: uni(d, d),
            bk: Matrix::zeros(1, d),
            wv: uni(d, d),
            bv: Matrix::zeros(1, d),
            wo: uni(d, d),
            bo: Matrix::zeros(1, d),
            ln1_g: Matrix::filled(1, d, 1.0),
            ln1_b: Matrix::zeros(1, d),
            w1: uni(d, 4 * d),
            b1: Matrix::zeros(1, 4 * d),
            w2: uni(4 * d, d),
            b2: Matrix::zeros(1, d),
            ln2_g: Matrix::filled(1, d, 1.0),
            ln2_b: Matrix::zeros(1, d),
        }
    }

    /// Attention projections set to the identity, feed-forward zeroed.
    pub fn identity(d: usize) -> Self {
        EncoderLayer {
            wq: Matrix::identity(d),
            bq: Matrix::zeros(1, d),
            wk: Matrix::identity(d),
            bk: Matrix::zeros(1, d),
            wv: Matrix::identity(d),
            bv: Matrix::zeros(1, d),
            wo: Matrix::identity(d),
            bo: Matrix::zeros(1, d),
            ln1_g: Matrix::filled(1, d, 1.0),
            ln1_b: Matrix::zeros(1, d),
            w1: Matrix::zeros(d, 4 * d),
            b1: Matrix::zeros(1, 4 * d),
            w2: Matrix::zeros(4 * d, d),
            b2: Matrix::zeros(1, d),
            ln2_g: Matrix::filled(1, d, 1.0),
            ln2_b: Matrix::zeros(1, d),
        }
    }

    pub fn tensors(&self) -> [&Matrix; 16] {
        [
            &self.wq, &self.bq, &self.wk, &self.bk, &self.wv, &self.bv, &self.wo, &self.bo,
            &self.ln1_g, &self.ln1_b, &self.w1, &self.b1, &self.w2, &self.b2, &self.ln2_g, &self.ln2_b,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Matrix; 16] {
        [
            &mut self.wq, &mut self.bq, &mut self.wk, &mut self.bk, &mut self.wv, &mut self.bv,
            &mut self.wo, &mut self.bo, &mut self.ln1_g, &mut self.ln1_b, &mut self.w1, &mut self.b1,
            &mut self.w2, &mut self.b2, &mut self.ln2_g, &mut self.ln2_b,
        ]
    }
}

/// Post-LN transformer encoder applied to the date rows of one pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DateContextualizer {
    pub d: usize,
    pub heads: usize,
    pub seed: u64,
    pub layers: Vec<EncoderLayer>,
}

fn add_row(m: &Matrix, row: &Matrix) -> Matrix {
    let mut out = m.clone();
    for r in 0..out.rows() {
        for (x, b) in out.row_mut(r).iter_mut().zip(row.row(0)) {
            *x += b;
        }
    }
    out
}

fn cols(m: &Matrix, start: usize, len: usize) -> Matrix {
    let mut out = Matrix::zeros(m.rows(), len);
    for r in 0..m.rows() {
        out.row_mut(r).copy_from_slice(&m.row(r)[start..start + len]);
    }
    out
}

impl DateContextualizer {
    pub fn new(d: usize, layers: usize, heads: usize, seed: u64) -> Result<Self, EncoderError> {
        if heads == 0 || d == 0 || !d.is_multiple_of(heads) || !d.is_multiple_of(2) {
            return Err(EncoderError::InvalidShape { d, heads });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = (0..layers).map(|_| EncoderLayer::init(d, &mut rng)).collect();
        Ok(DateContextualizer { d, heads, seed, layers })
    }

    pub fn with_layers(d: usize, heads: usize, layers: Vec<EncoderLayer>) -> Result<Self, EncoderError> {
        if heads == 0 || d == 0 || !d.is_multiple_of(heads) || !d.is_multiple_of(2) {
            return Err(EncoderError::InvalidShape { d, heads });
        }
        Ok(DateContextualizer { d, heads, seed: 0, layers })
    }

    pub fn forward(&self, x: &Matrix) -> Matrix {
        let mut x = x.clone();
        if x.rows() == 0 {
            return x;
        }
        let dh = self.d / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        for l in &self.layers {
            let q = add_row(&x.matmul(&l.wq), &l.bq);
            let k = add_row(&x.matmul(&l.wk), &l.bk);
            let v = add_row(&x.matmul(&l.wv), &l.bv);
            let mut heads = Vec::with_capacity(self.heads);
            for h in 0..self.heads {
                let qh = cols(&q, h * dh, dh);
                let kh = cols(&k, h * dh, dh);
                let vh = cols(&v, h * dh, dh);
                let s = qh.matmul_nt(&kh).scale(scale);
                let mut a = Matrix::zeros(s.rows(), s.cols());
                for r in 0..s.rows() {
                    a.row_mut(r).copy_from_slice(&relevance::normalize_attention(s.row(r)));
                }
                heads.push(a.matmul(&vh));
            }
            let mut o = Matrix::zeros(x.rows(), self.d);
            for r in 0..x.rows() {
                for (h, m) in heads.iter().enumerate() {
                    o.row_mut(r)[h * dh..(h + 1) * dh].copy_from_slice(m.row(r));
                }
            }
            let attn = add_row(&o.matmul(&l.wo), &l.bo);
            let (x1, _, _) = autodiff::layer_norm_rows(
                &x.add(&attn),
                l.ln1_g.row(0),
                l.ln1_b.row(0),
                autodiff::LAYER_NORM_EPS,
            );
            let hid = add_row(&x1.matmul(&l.w1), &l.b1);
            let hid = Matrix::from_vec(hid.rows(), hid.cols(), hid.data().iter().map(|&v| autodiff::gelu(v)).collect());
            let f = add_row(&hid.matmul(&l.w2), &l.b2);
            let (x2, _, _) = autodiff::layer_norm_rows(&x1.add(&f), l.ln2_g.row(0), l.ln2_b.row(0), autodiff::LAYER_NORM_EPS);
            x = x2;
        }
        x
    }

    pub fn register(&self, tape: &mut Tape) -> Vec<[Var; 16]> {
        self.layers
            .iter()
            .map(|l| l.tensors().map(|m| tape.leaf(m.clone())))
            .collect()
    }

    /// Same computation as [`forward`](Self::forward), recorded on a tape.
    pub fn forward_tape(&self, tape: &mut Tape, vars: &[[Var; 16]], x: Var) -> Var {
        if tape.value(x).rows() == 0 {
            return x;
        }
        let dh = self.d / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut x = x;
        for v in vars {
            let [wq, bq, wk, bk, wv, bv, wo, bo, g1, be1, w1, b1, w2, b2, g2, be2] = *v;
            let q = tape.matmul(x, wq);
            let q = tape.add_row(q, bq);
            let k = tape.matmul(x, wk);
            let k = tape.add_row(k, bk);
            let val = tape.matmul(x, wv);
            let val = tape.add_row(val, bv);
            let mut heads = Vec::with_capacity(self.heads);
            for h in 0..self.heads {
                let qh = tape.slice_cols(q, h * dh, dh);
                let kh = tape.slice_cols(k, h * dh, dh);
                let vh = tape.slice_cols(val, h * dh, dh);
                let s = tape.matmul_nt(qh, kh);
                let s = tape.scale(s, scale);
                let a = tape.softmax_rows(s);
                heads.push(tape.matmul(a, vh));
            }
            let o = tape.concat_cols(&heads);
            let attn = tape.matmul(o, wo);
            let attn = tape.add_row(attn, bo);
            let res = tape.add(x, attn);
            let x1 = tape.layer_norm(res, g1, be1);
            let hid = tape.matmul(x1, w1);
            let hid = tape.add_row(hid, b1);
            let hid = tape.gelu(hid);
            let f = tape.matmul(hid, w2);
            let f = tape.add_row(f, b2);
            let res = tape.add(x1, f);
            x = tape.layer_norm(res, g2, be2);
        }
        x
    }
}

/// Transformer input rows: pooled vector plus the encoding of its position.
pub fn date_inputs(pooled: &[Vec<f64>], positions: &[PositionIndex], d: usize) -> Result<Matrix, EncoderError> {
    if pooled.len() != positions.len() {
        return Err(EncoderError::DimensionMismatch { expected: pooled.len(), found: positions.len() });
    }
    let mut x = Matrix::zeros(pooled.len(), d);
    for (j, (p, pos)) in pooled.iter().zip(positions).enumerate() {
        if p.len() != d {
            return Err(EncoderError::DimensionMismatch { expected: d, found: p.len() });
        }
        let te = temporal::temporal_encoding(pos.value, d)?;
        for c in 0..d {
            x.set(j, c, p[c] + te[c]);
        }
    }
    Ok(x)
}

pub fn contextualize_dates(
    pooled: &[Vec<f64>],
    positions: &[PositionIndex],
    ctx: &DateContextualizer,
) -> Result<Matrix, EncoderError> {
    Ok(ctx.forward(&date_inputs(pooled, positions, ctx.d)?))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Representation {
    pub vectors: Matrix,
    pub is_date: Vec<bool>,
    pub cls: Vec<f64>,
    pub d: usize,
}

impl Representation {
    pub fn from_vectors(vectors: Matrix, is_date: Vec<bool>) -> Self {
        let cls = vectors.mean_rows().into_data();
        let d = vectors.cols();
        Representation { vectors, is_date, cls, d }
    }

    pub fn len(&self) -> usize {
        self.vectors.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.rows() == 0
    }
}

/// Collapsed layout of a sequence: non-date rows filled from `B`, date rows
/// left zero, plus the row index of every date span.
pub fn collapse_layout(b: &Matrix, seq: &TokenSequence) -> (Matrix, Vec<usize>, Vec<bool>) {
    let mut rows = Vec::new();
    let mut date_rows = Vec::new();
    let mut is_date = Vec::new();
    let mut spans = seq.date_spans.iter().peekable();
    let mut t = 0;
    while t < seq.tokens.len() {
        if let Some(s) = spans.peek() {
            if s.start == t {
                date_rows.push(rows.len());
                rows.push(vec![0.0; b.cols()]);
                is_date.push(true);
                t = s.end;
                spans.next();
                continue;
            }
        }
        rows.push(b.row(t).to_vec());
        is_date.push(false);
        t += 1;
    }
    let base = if rows.is_empty() { Matrix::zeros(0, b.cols()) } else { Matrix::from_rows(&rows) };
    (base, date_rows, is_date)
}

pub fn assemble_representation(b: &Matrix, b_hat: &Matrix, seq: &TokenSequence) -> Result<Representation, EncoderError> {
    if b_hat.rows() != seq.date_spans.len() {
        return Err(EncoderError::DimensionMismatch { expected: seq.date_spans.len(), found: b_hat.rows() });
    }
    if b_hat.rows() > 0 && b_hat.cols() != b.cols() {
        return Err(EncoderError::DimensionMismatch { expected: b.cols(), found: b_hat.cols() });
    }
    let (mut base, date_rows, is_date) = collapse_layout(b, seq);
    for (k, &r) in date_rows.iter().enumerate() {
        base.row_mut(r).copy_from_slice(b_hat.row(k));
    }
    Ok(Representation::from_vectors(base, is_date))
}

/// Everything about a pair that does not depend on trainable parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedPair {
    pub base: Matrix,
    pub date_rows: Vec<usize>,
    pub is_date: Vec<bool>,
    pub date_input: Matrix,
}

impl PreparedPair {
    pub fn represent(&self, ctx: &DateContextualizer) -> Representation {
        let b_hat = ctx.forward(&self.date_input);
        let mut v = self.base.clone();
        for (k, &r) in self.date_rows.iter().enumerate() {
            v.row_mut(r).copy_from_slice(b_hat.row(k));
        }
        Representation::from_vectors(v, self.is_date.clone())
    }

    /// Records the representation rows on a tape; returns the `n x d` matrix.
    pub fn represent_tape(&self, tape: &mut Tape, ctx: &DateContextualizer, vars: &[[Var; 16]]) -> Var {
        let base = tape.leaf(self.base.clone());
        if self.date_rows.is_empty() {
            return base;
        }
        let x = tape.leaf(self.date_input.clone());
        let b_hat = ctx.forward_tape(tape, vars, x);
        tape.scatter_rows(base, b_hat, &self.date_rows)
    }
}

pub fn prepare_pair(pair: &EventPair, provider: &dyn EmbeddingProvider) -> Result<PreparedPair, EncoderError> {
    let seq = assemble_sequence(&pair.claim_event, &pair.title, &pair.evidence_event);
    let b = contextual_embed(&seq, provider)?;
    let pooled = pool_dates(&b, &seq);
    let date_input = if pooled.is_empty() {
        Matrix::zeros(0, b.cols())
    } else {
        let points: Vec<TimePoint> = pooled.iter().map(|(_, p)| *p).collect();
        let positions = temporal::positions_of(&points)?;
        let vecs: Vec<Vec<f64>> = pooled.into_iter().map(|(v, _)| v).collect();
        date_inputs(&vecs, &positions, b.cols())?
    };
    let (base, date_rows, is_date) = collapse_layout(&b, &seq);
    Ok(PreparedPair { base, date_rows, is_date, date_input })
}

pub fn encode_pair(
    pair: &EventPair,
    provider: &dyn EmbeddingProvider,
    ctx: &DateContextualizer,
) -> Result<Representation, EncoderError> {
    if provider.dim() != ctx.d {
        return Err(EncoderError::DimensionMismatch { expected: ctx.d, found: provider.dim() });
    }
    Ok(prepare_pair(pair, provider)?.represent(ctx))
}
