//! Graph attention over event pairs and sentence relevance scoring.
//!
//! Every node of an [`EventGraph`] pairs the same claim event with one
//! evidence event. Token-level cosine attention feeds a propagated vector
//! `z`, a sentence-level weight `β = W·z` scales it, and each node's update
//! is the `β`-weighted sum over all nodes (self-edges included). Sentences
//! are scored by an affine head over the element-wise max of their nodes.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::SentenceRef;
use crate::encoder::Representation;
use crate::events::EventPair;
use crate::tensor::{dot, norm, Matrix};

#[derive(Debug, Error, PartialEq)]
pub enum RelevanceError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("graph has no nodes")]
    EmptyGraph,
    #[error("event {0} does not come from an evidence sentence")]
    NotEvidenceEvent(String),
}

#[derive(Debug, Clone)]
pub struct GraphNode {
    pub pair: EventPair,
    pub repr: Representation,
}

impl GraphNode {
    pub fn sentence(&self) -> Result<&SentenceRef, RelevanceError> {
        self.pair
            .evidence_event
            .source
            .sentence()
            .ok_or_else(|| RelevanceError::NotEvidenceEvent(self.pair.evidence_event.event_id.clone()))
    }
}

#[derive(Debug, Clone)]
pub struct EventGraph {
    pub nodes: Vec<GraphNode>,
}

impl EventGraph {
    pub fn new(nodes: Vec<GraphNode>) -> Result<Self, RelevanceError> {
        let Some(first) = nodes.first() else {
            return Err(RelevanceError::EmptyGraph);
        };
        let d = first.repr.d;
        for n in &nodes {
            if n.repr.d != d {
                return Err(RelevanceError::DimensionMismatch { expected: d, found: n.repr.d });
            }
            n.sentence()?;
        }
        Ok(EventGraph { nodes })
    }

    pub fn d(&self) -> usize {
        self.nodes[0].repr.d
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatParams {
    /// Sentence-level attention weights, `1 x 2d`.
    pub w: Matrix,
    /// Relevance head weights, `1 x 2d`.
    pub head_w: Matrix,
    pub head_b: f64,
    /// Softmax-normalize β over incoming edges instead of using it raw.
    #[serde(default)]
    pub normalize_beta: bool,
}

impl GatParams {
    pub fn zeros(d: usize) -> Self {
        GatParams {
            w: Matrix::zeros(1, 2 * d),
            head_w: Matrix::zeros(1, 2 * d),
            head_b: 0.0,
            normalize_beta: false,
        }
    }

    pub fn d(&self) -> usize {
        self.w.cols() / 2
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredSentence {
    #[serde(rename = "ref")]
    pub reference: SentenceRef,
    pub text: String,
    pub score: f64,
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = norm(a);
    let nb = norm(b);
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot(a, b) / (na * nb)
}

/// `w[p] = Σ_q cos(a_p, b_q)`, summed in ascending `q`.
pub fn token_attention_rows(a: &Matrix, b: &Matrix) -> Vec<f64> {
    (0..a.rows())
        .map(|p| {
            let ap = a.row(p);
            let mut acc = 0.0;
            for q in 0..b.rows() {
                acc += cosine(ap, b.row(q));
            }
            acc
        })
        .collect()
}

pub fn token_attention(ri: &Representation, rj: &Representation) -> Result<Vec<f64>, RelevanceError> {
    if ri.d != rj.d {
        return Err(RelevanceError::DimensionMismatch { expected: ri.d, found: rj.d });
    }
    Ok(token_attention_rows(&ri.vectors, &rj.vectors))
}

/// Softmax with max-subtraction.
pub fn normalize_attention(w: &[f64]) -> Vec<f64> {
    let max = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = w.iter().map(|x| (x - max).exp()).collect();
    let mut sum = 0.0;
    for e in &exps {
        sum += e;
    }
    exps.into_iter().map(|e| e / sum).collect()
}

/// `z = concat(cls_j, Σ_p w[p] · R^i_p)`.
pub fn propagate(ri: &Representation, rj: &Representation, w: &[f64]) -> Result<Vec<f64>, RelevanceError> {
    if ri.d != rj.d {
        return Err(RelevanceError::DimensionMismatch { expected: rj.d, found: ri.d });
    }
    if w.len() != ri.vectors.rows() {
        return Err(RelevanceError::DimensionMismatch { expected: ri.vectors.rows(), found: w.len() });
    }
    let d = ri.d;
    let mut z = rj.cls.clone();
    for c in 0..d {
        let mut acc = 0.0;
        for (p, wp) in w.iter().enumerate() {
            acc += wp * ri.vectors.get(p, c);
        }
        z.push(acc);
    }
    Ok(z)
}

pub fn sentence_attention(z: &[f64], params: &GatParams) -> Result<f64, RelevanceError> {
    if z.len() != params.w.cols() {
        return Err(RelevanceError::DimensionMismatch { expected: params.w.cols(), found: z.len() });
    }
    Ok(dot(params.w.row(0), z))
}

/// One propagation round; entry `j` is node `j`'s updated `2d` vector.
pub fn propagate_graph(graph: &EventGraph, params: &GatParams) -> Result<Vec<Vec<f64>>, RelevanceError> {
    let d = graph.d();
    if params.d() != d {
        return Err(RelevanceError::DimensionMismatch { expected: d, found: params.d() });
    }
    let n = graph.len();
    let mut out = Vec::with_capacity(n);
    for j in 0..n {
        let rj = &graph.nodes[j].repr;
        let mut zs = Vec::with_capacity(n);
        let mut betas = Vec::with_capacity(n);
        for i in 0..n {
            let ri = &graph.nodes[i].repr;
            let w = normalize_attention(&token_attention(ri, rj)?);
            let z = propagate(ri, rj, &w)?;
            betas.push(sentence_attention(&z, params)?);
            zs.push(z);
        }
        if params.normalize_beta {
            betas = normalize_attention(&betas);
        }
        let mut acc = vec![0.0; 2 * d];
        for (z, beta) in zs.iter().zip(&betas) {
            for (a, zc) in acc.iter_mut().zip(z) {
                *a += beta * zc;
            }
        }
        out.push(acc);
    }
    Ok(out)
}

pub fn relevance_head(v: &[f64], params: &GatParams) -> f64 {
    dot(params.head_w.row(0), v) + params.head_b
}

pub fn sort_scored(scored: &mut [ScoredSentence]) {
    scored.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.reference.cmp(&b.reference)));
}

/// Scores each evidence sentence by the head over the element-wise max of
/// its nodes' updated vectors.
pub fn score_sentences(
    graph: &EventGraph,
    updated: &[Vec<f64>],
    params: &GatParams,
    text_of: impl Fn(&SentenceRef) -> String,
) -> Result<Vec<ScoredSentence>, RelevanceError> {
    if graph.is_empty() {
        return Err(RelevanceError::EmptyGraph);
    }
    if updated.len() != graph.len() {
        return Err(RelevanceError::DimensionMismatch { expected: graph.len(), found: updated.len() });
    }
    let mut groups: BTreeMap<&SentenceRef, Vec<f64>> = BTreeMap::new();
    for (node, u) in graph.nodes.iter().zip(updated) {
        let r = node.sentence()?;
        match groups.get_mut(r) {
            Some(m) => {
                for (x, y) in m.iter_mut().zip(u) {
                    if *y > *x {
                        *x = *y;
                    }
                }
            }
            None => {
                groups.insert(r, u.clone());
            }
        }
    }
    let mut scored: Vec<ScoredSentence> = groups
        .into_iter()
        .map(|(r, v)| ScoredSentence {
            reference: r.clone(),
            text: text_of(r),
            score: relevance_head(&v, params),
        })
        .collect();
    sort_scored(&mut scored);
    Ok(scored)
}

pub fn top_k(scored: &[ScoredSentence], k: usize) -> Vec<ScoredSentence> {
    scored.iter().take(k).cloned().collect()
}
