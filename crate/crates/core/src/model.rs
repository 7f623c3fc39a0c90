//! Trainable parameters and the full scoring stack.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Tape, Var};
use crate::corpus::SentenceRef;
use crate::encoder::{self, DateContextualizer, EmbeddingProvider, EncoderError, PreparedPair};
use crate::events::EventPair;
use crate::relevance::{self, EventGraph, GatParams, GraphNode, RelevanceError, ScoredSentence};
use crate::tensor::Matrix;

pub const MODEL_FORMAT: &str = "tempver-model";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Relevance(#[from] RelevanceError),
    #[error("model file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub format: String,
    pub version: u32,
    pub d: usize,
    pub layers: usize,
    pub heads: usize,
    pub seed: u64,
    #[serde(default)]
    pub config: serde_json::Value,
    pub contextualizer: DateContextualizer,
    pub gat: GatParams,
}

/// Tape handles for every parameter tensor, in [`ModelParams::tensors`] order.
pub struct ModelVars {
    pub layers: Vec<[Var; 16]>,
    pub w: Var,
    pub head_w: Var,
    pub head_b: Var,
}

impl ModelVars {
    pub fn all(&self) -> Vec<Var> {
        let mut v: Vec<Var> = self.layers.iter().flat_map(|l| l.iter().copied()).collect();
        v.extend([self.w, self.head_w, self.head_b]);
        v
    }
}

impl ModelParams {
    pub fn init(d: usize, layers: usize, heads: usize, seed: u64) -> Result<Self, ModelError> {
        let contextualizer = DateContextualizer::new(d, layers, heads, seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6761_745f_7061_7261);
        let bound = 1.0 / ((2 * d) as f64).sqrt();
        let mut uni = || Matrix::from_vec(1, 2 * d, (0..2 * d).map(|_| rng.random_range(-bound..bound)).collect());
        let gat = GatParams { w: uni(), head_w: uni(), head_b: 0.0, normalize_beta: false };
        Ok(ModelParams {
            format: MODEL_FORMAT.to_string(),
            version: MODEL_VERSION,
            d,
            layers,
            heads,
            seed,
            config: serde_json::Value::Null,
            contextualizer,
            gat,
        })
    }

    pub fn tensors(&self) -> Vec<Matrix> {
        let mut out: Vec<Matrix> = self
            .contextualizer
            .layers
            .iter()
            .flat_map(|l| l.tensors().into_iter().cloned())
            .collect();
        out.push(self.gat.w.clone());
        out.push(self.gat.head_w.clone());
        out.push(Matrix::scalar(self.gat.head_b));
        out
    }

    pub fn set_tensors(&mut self, tensors: &[Matrix]) {
        let mut it = tensors.iter();
        for l in &mut self.contextualizer.layers {
            for slot in l.tensors_mut() {
                let t = it.next().expect("tensor count");
                assert_eq!(slot.shape(), t.shape(), "tensor shape");
                *slot = t.clone();
            }
        }
        self.gat.w = it.next().expect("tensor count").clone();
        self.gat.head_w = it.next().expect("tensor count").clone();
        self.gat.head_b = it.next().expect("tensor count").scalar_value();
        assert!(it.next().is_none(), "tensor count");
    }

    pub fn register(&self, tape: &mut Tape) -> ModelVars {
        let layers = self.contextualizer.register(tape);
        ModelVars {
            layers,
            w: tape.leaf(self.gat.w.clone()),
            head_w: tape.leaf(self.gat.head_w.clone()),
            head_b: tape.leaf(Matrix::scalar(self.gat.head_b)),
        }
    }

    /// Scores for each sentence group of a graph, recorded on a tape.
    /// `groups[n]` is the group index of node `n`; groups are numbered
    /// `0..n_groups` and every group needs at least one node.
    pub fn group_scores_tape(
        &self,
        tape: &mut Tape,
        vars: &ModelVars,
        nodes: &[PreparedPair],
        groups: &[usize],
        n_groups: usize,
    ) -> Vec<Var> {
        let reps: Vec<Var> = nodes
            .iter()
            .map(|p| p.represent_tape(tape, &self.contextualizer, &vars.layers))
            .collect();
        let cls: Vec<Var> = reps.iter().map(|r| tape.mean_rows(*r)).collect();
        let n = reps.len();
        let mut updated = Vec::with_capacity(n);
        for j in 0..n {
            let mut zs = Vec::with_capacity(n);
            let mut betas = Vec::with_capacity(n);
            for i in 0..n {
                let w = tape.token_attention(reps[i], reps[j]);
                let w = tape.softmax_rows(w);
                let att = tape.matmul(w, reps[i]);
                let z = tape.concat_cols(&[cls[j], att]);
                betas.push(tape.matmul_nt(vars.w, z));
                zs.push(z);
            }
            if self.gat.normalize_beta {
                let row = tape.concat_cols(&betas);
                let soft = tape.softmax_rows(row);
                betas = (0..n).map(|i| tape.slice_cols(soft, i, 1)).collect();
            }
            let mut acc: Option<Var> = None;
            for (z, beta) in zs.into_iter().zip(betas) {
                let term = tape.mul_scalar(beta, z);
                acc = Some(match acc {
                    Some(a) => tape.add(a, term),
                    None => term,
                });
            }
            updated.push(acc.expect("non-empty graph"));
        }
        (0..n_groups)
            .map(|g| {
                let members: Vec<Var> = (0..n).filter(|&k| groups[k] == g).map(|k| updated[k]).collect();
                let pooled = if members.len() == 1 { members[0] } else { tape.elem_max(&members) };
                let s = tape.matmul_nt(vars.head_w, pooled);
                tape.add(s, vars.head_b)
            })
            .collect()
    }

    /// Encodes every pair (all sharing one claim event), propagates once and
    /// returns the sentences ranked by relevance.
    pub fn score_pairs(
        &self,
        pairs: Vec<EventPair>,
        provider: &dyn EmbeddingProvider,
        text_of: impl Fn(&SentenceRef) -> String,
    ) -> Result<Vec<ScoredSentence>, ModelError> {
        let nodes = pairs
            .into_iter()
            .map(|pair| {
                let repr = encoder::encode_pair(&pair, provider, &self.contextualizer)?;
                Ok(GraphNode { pair, repr })
            })
            .collect::<Result<Vec<_>, ModelError>>()?;
        let graph = EventGraph::new(nodes)?;
        let updated = relevance::propagate_graph(&graph, &self.gat)?;
        Ok(relevance::score_sentences(&graph, &updated, &self.gat, text_of)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, ModelError> {
        let m: ModelParams = serde_json::from_str(s).map_err(|e| ModelError::Format(e.to_string()))?;
        if m.format != MODEL_FORMAT || m.version != MODEL_VERSION {
            return Err(ModelError::Format(format!("unsupported format {} v{}", m.format, m.version)));
        }
        if m.contextualizer.d != m.d || m.gat.d() != m.d || m.contextualizer.layers.len() != m.layers {
            return Err(ModelError::Format("inconsistent dimensions".into()));
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::HashStubProvider;
    use crate::events::{Event, EventSource, Extractor, TemporalSlot};

    fn ev(core: &str, t: &[&str], source: EventSource, id: &str) -> Event {
        Event {
            event_id: id.into(),
            source,
            predicate: String::new(),
            core_text: core.into(),
            temporal: t.iter().map(|x| TemporalSlot::from_raw(x)).collect(),
            extractor: Extractor::Srl,
        }
    }

    fn pairs() -> Vec<EventPair> {
        let claim = ev("Ada built the mill", &["in 1901"], EventSource::Claim { claim_id: "c".into() }, "c#0");
        let specs = [
            ("a", 0, "Ada built the mill", "in 1901"),
            ("a", 1, "Ada sold the mill", "in 1920"),
            ("b", 0, "Bo built a barn", "in 1901"),
            ("a", 1, "Ada moved away", "after 1921"),
        ];
        specs
            .iter()
            .map(|(doc, s, core, t)| EventPair {
                claim_event: claim.clone(),
                evidence_event: ev(core, &[t], EventSource::Evidence(SentenceRef::new(*doc, *s)), "e"),
                title: doc.to_string(),
            })
            .collect()
    }

    #[test]
    fn tape_scores_match_inference() {
        for normalize in [false, true] {
            let mut m = ModelParams::init(8, 2, 2, 9).unwrap();
            m.gat.normalize_beta = normalize;
            let provider = HashStubProvider::new(8, 1);
            let ps = pairs();
            let ranked = m.score_pairs(ps.clone(), &provider, |_| String::new()).unwrap();
            let prepared: Vec<PreparedPair> = ps.iter().map(|p| encoder::prepare_pair(p, &provider).unwrap()).collect();
            let refs: Vec<SentenceRef> = ps.iter().map(|p| p.evidence_event.source.sentence().unwrap().clone()).collect();
            let mut uniq = refs.clone();
            uniq.sort();
            uniq.dedup();
            let groups: Vec<usize> = refs.iter().map(|r| uniq.binary_search(r).unwrap()).collect();
            let mut tape = Tape::new();
            let vars = m.register(&mut tape);
            let scores = m.group_scores_tape(&mut tape, &vars, &prepared, &groups, uniq.len());
            assert_eq!(ranked.len(), 3);
            for s in &ranked {
                let g = uniq.binary_search(&s.reference).unwrap();
                assert_eq!(tape.scalar(scores[g]), s.score);
            }
        }
    }

    #[test]
    fn json_roundtrip_is_exact() {
        let m = ModelParams::init(8, 1, 2, 4).unwrap();
        let back = ModelParams::from_json(&m.to_json()).unwrap();
        assert!(back == m, "roundtrip changed parameters");
        let mut t = m.tensors();
        t[0].data_mut()[0] = 42.0;
        let mut m2 = m.clone();
        m2.set_tensors(&t);
        assert_eq!(m2.contextualizer.layers[0].wq.get(0, 0), 42.0);
        assert_eq!(m2.tensors(), t);
        assert!(ModelParams::from_json("{}").is_err());
    }
}
