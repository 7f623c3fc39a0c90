//! Triplet training of the date contextualizer, GAT weights and relevance
//! head.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::autodiff::Tape;
use crate::corpus::{CorpusError, DocumentStore, SentenceRef};
use crate::encoder::{self, EmbeddingProvider, EncoderError, PreparedPair};
use crate::events::{Event, EventPair, EventSet};
use crate::model::ModelParams;
use crate::tensor::Matrix;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("gold evidence {0} does not resolve")]
    UnresolvedEvidenceRef(SentenceRef),
    #[error("no training examples")]
    EmptyDataset,
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
}

/// A claim with its extracted events and gold evidence sentences.
#[derive(Debug, Clone)]
pub struct TrainingClaim {
    pub claim_id: String,
    pub events: Vec<Event>,
    pub gold: Vec<SentenceRef>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Triplet {
    pub claim_id: String,
    pub claim_event: Event,
    pub positive: SentenceRef,
    pub negative: SentenceRef,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub margin: f64,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub val_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 5,
            batch_size: 8,
            learning_rate: 5e-6,
            weight_decay: 0.01,
            margin: 1.0,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            val_fraction: 0.1,
        }
    }
}

pub const NEGATIVE_POOL: usize = 5;

/// One triplet per (claim event, gold sentence); the negative is a seeded
/// pick among the top BM25 hits for the event's core text, gold excluded.
pub fn mine_triplets(claims: &[TrainingClaim], store: &DocumentStore, seed: u64) -> Result<Vec<Triplet>, TrainError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for claim in claims {
        for g in &claim.gold {
            if store.sentence(g).is_none() {
                return Err(TrainError::UnresolvedEvidenceRef(g.clone()));
            }
        }
        for ev in &claim.events {
            let ranked = store.bm25_rank(&ev.core_text, NEGATIVE_POOL + claim.gold.len())?;
            let pool: Vec<SentenceRef> = ranked
                .into_iter()
                .map(|(r, _)| r)
                .filter(|r| !claim.gold.contains(r))
                .take(NEGATIVE_POOL)
                .collect();
            for g in &claim.gold {
                match pool.choose(&mut rng) {
                    Some(neg) => out.push(Triplet {
                        claim_id: claim.claim_id.clone(),
                        claim_event: ev.clone(),
                        positive: g.clone(),
                        negative: neg.clone(),
                    }),
                    None => log::warn!("no negative candidates for {}; skipped", ev.event_id),
                }
            }
        }
    }
    Ok(out)
}

pub fn triplet_loss(s_pos: f64, s_neg: f64, margin: f64) -> f64 {
    (margin - s_pos + s_neg).max(0.0)
}

/// Graph nodes of one triplet: pairs from the positive sentence (group 0)
/// then the negative sentence (group 1).
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedTriplet {
    pub claim_id: String,
    pub nodes: Vec<PreparedPair>,
    pub groups: Vec<usize>,
}

pub fn sentence_pairs(claim_event: &Event, r: &SentenceRef, store: &DocumentStore, events: &EventSet) -> Vec<EventPair> {
    let text = store.sentence(r).unwrap_or_default();
    let title = store.title(r).unwrap_or_default().to_string();
    events
        .sentence_events(r, text)
        .into_iter()
        .map(|e| EventPair { claim_event: claim_event.clone(), evidence_event: e, title: title.clone() })
        .collect()
}

pub fn prepare_triplet(
    t: &Triplet,
    store: &DocumentStore,
    events: &EventSet,
    provider: &dyn EmbeddingProvider,
) -> Result<PreparedTriplet, TrainError> {
    let mut nodes = Vec::new();
    let mut groups = Vec::new();
    for (g, r) in [&t.positive, &t.negative].into_iter().enumerate() {
        for pair in sentence_pairs(&t.claim_event, r, store, events) {
            nodes.push(encoder::prepare_pair(&pair, provider)?);
            groups.push(g);
        }
    }
    Ok(PreparedTriplet { claim_id: t.claim_id.clone(), nodes, groups })
}

/// Loss value and gradients for every parameter tensor.
pub fn example_gradients(model: &ModelParams, ex: &PreparedTriplet, margin: f64) -> (f64, Vec<Matrix>) {
    let mut tape = Tape::new();
    let vars = model.register(&mut tape);
    let scores = model.group_scores_tape(&mut tape, &vars, &ex.nodes, &ex.groups, 2);
    let diff = tape.sub(scores[1], scores[0]);
    let shifted = tape.add_const(diff, margin);
    let loss = tape.relu(shifted);
    let grads = tape.backward(loss);
    let g = vars.all().into_iter().map(|v| grads.get_or_zeros(v, tape.value(v).shape())).collect();
    (tape.scalar(loss), g)
}

pub fn example_loss(model: &ModelParams, ex: &PreparedTriplet, margin: f64) -> f64 {
    let mut tape = Tape::new();
    let vars = model.register(&mut tape);
    let scores = model.group_scores_tape(&mut tape, &vars, &ex.nodes, &ex.groups, 2);
    triplet_loss(tape.scalar(scores[0]), tape.scalar(scores[1]), margin)
}

/// AdamW with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    t: i32,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl AdamW {
    pub fn new(config: &TrainConfig, shapes: &[(usize, usize)]) -> Self {
        AdamW {
            lr: config.learning_rate,
            beta1: config.beta1,
            beta2: config.beta2,
            eps: config.eps,
            weight_decay: config.weight_decay,
            t: 0,
            m: shapes.iter().map(|&(r, c)| Matrix::zeros(r, c)).collect(),
            v: shapes.iter().map(|&(r, c)| Matrix::zeros(r, c)).collect(),
        }
    }

    pub fn step(&mut self, params: &mut [Matrix], grads: &[Matrix]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            let p = p.data_mut();
            let m = m.data_mut();
            let v = v.data_mut();
            for k in 0..p.len() {
                let gk = g.data()[k];
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * gk;
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * gk * gk;
                let m_hat = m[k] / bc1;
                let v_hat = v[k] / bc2;
                p[k] *= 1.0 - self.lr * self.weight_decay;
                p[k] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub epoch: usize,
    pub split: String,
    pub mean_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub trace: Vec<LossRecord>,
    pub best_epoch: usize,
}

pub fn is_validation(claim_id: &str, fraction: f64) -> bool {
    let digest = Sha256::digest(claim_id.as_bytes());
    let bucket = u64::from_le_bytes(digest[..8].try_into().unwrap()) % 1000;
    (bucket as f64) < fraction * 1000.0
}

fn mean_loss(model: &ModelParams, examples: &[&PreparedTriplet], margin: f64) -> f64 {
    let losses: Vec<f64> = examples.par_iter().map(|ex| example_loss(model, ex, margin)).collect();
    let mut sum = 0.0;
    for l in &losses {
        sum += l;
    }
    sum / losses.len() as f64
}

pub fn loss_csv(trace: &[LossRecord]) -> String {
    let mut s = String::from("epoch,split,mean_loss\n");
    for r in trace {
        s.push_str(&format!("{},{},{}\n", r.epoch, r.split, r.mean_loss));
    }
    s
}

/// Mini-batch AdamW over the triplets; keeps the parameters of the epoch
/// with the lowest validation loss (training loss when no claim falls in
/// the validation split).
pub fn train(examples: &[PreparedTriplet], config: &TrainConfig, params: ModelParams) -> Result<TrainOutcome, TrainError> {
    let (val, tr): (Vec<&PreparedTriplet>, Vec<&PreparedTriplet>) =
        examples.iter().partition(|e| is_validation(&e.claim_id, config.val_fraction));
    let (tr, val) = if tr.is_empty() { (val, Vec::new()) } else { (tr, val) };
    if tr.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut model = params;
    let shapes: Vec<(usize, usize)> = model.tensors().iter().map(Matrix::shape).collect();
    let mut opt = AdamW::new(config, &shapes);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..tr.len()).collect();
    let mut trace = Vec::new();
    let mut best: Option<(f64, usize, ModelParams)> = None;
    let batch = config.batch_size.max(1);

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut losses = vec![0.0; tr.len()];
        for chunk in order.chunks(batch) {
            let results: Vec<(f64, Vec<Matrix>)> = chunk
                .par_iter()
                .map(|&i| example_gradients(&model, tr[i], config.margin))
                .collect();
            let mut total: Vec<Matrix> = shapes.iter().map(|&(r, c)| Matrix::zeros(r, c)).collect();
            for (&i, (loss, grads)) in chunk.iter().zip(&results) {
                losses[i] = *loss;
                for (t, g) in total.iter_mut().zip(grads) {
                    t.add_assign(g);
                }
            }
            let scale = 1.0 / chunk.len() as f64;
            let total: Vec<Matrix> = total.iter().map(|t| t.scale(scale)).collect();
            let mut tensors = model.tensors();
            opt.step(&mut tensors, &total);
            model.set_tensors(&tensors);
        }
        let mut sum = 0.0;
        for l in &losses {
            sum += l;
        }
        let train_loss = sum / losses.len() as f64;
        trace.push(LossRecord { epoch, split: "train".into(), mean_loss: train_loss });
        let select = if val.is_empty() {
            train_loss
        } else {
            let v = mean_loss(&model, &val, config.margin);
            trace.push(LossRecord { epoch, split: "val".into(), mean_loss: v });
            v
        };
        log::info!("epoch {epoch}: train loss {train_loss:.6}, selection loss {select:.6}");
        if best.as_ref().is_none_or(|(b, _, _)| select < *b) {
            best = Some((select, epoch, model.clone()));
        }
    }
    match best {
        Some((_, best_epoch, params)) => Ok(TrainOutcome { params, trace, best_epoch }),
        None => Ok(TrainOutcome { params: model, trace, best_epoch: 0 }),
    }
}

/// Largest per-tensor relative error between analytic and central
/// finite-difference gradients of the triplet loss. Per tensor the error is
/// `|a - n| / max(|a|, |n|, 1e-6)` in the Frobenius norm, so tensors whose
/// true gradient vanishes are measured against an absolute floor rather than
/// against finite-difference roundoff.
pub fn grad_check(model: &ModelParams, ex: &PreparedTriplet, margin: f64) -> f64 {
    grad_check_with(model, ex, margin, |_| {})
}

/// As [`grad_check`], letting the caller tamper with the analytic gradients
/// before comparison.
pub fn grad_check_with(
    model: &ModelParams,
    ex: &PreparedTriplet,
    margin: f64,
    tamper: impl Fn(&mut [Matrix]),
) -> f64 {
    const STEP: f64 = 1e-4;
    const GRAD_FLOOR: f64 = 1e-6;
    let (_, mut analytic) = example_gradients(model, ex, margin);
    tamper(&mut analytic);
    let base = model.tensors();
    let mut worst: f64 = 0.0;
    for (k, a) in analytic.iter().enumerate() {
        let numeric: Vec<f64> = (0..base[k].data().len())
            .into_par_iter()
            .map(|e| {
                let eval = |delta: f64| {
                    let mut t = base.clone();
                    t[k].data_mut()[e] += delta;
                    let mut m = model.clone();
                    m.set_tensors(&t);
                    example_loss(&m, ex, margin)
                };
                (eval(STEP) - eval(-STEP)) / (2.0 * STEP)
            })
            .collect();
        let n = Matrix::from_vec(a.rows(), a.cols(), numeric);
        let diff = a.add(&n.scale(-1.0)).frobenius();
        worst = worst.max(diff / a.frobenius().max(n.frobenius()).max(GRAD_FLOOR));
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Document;
    use crate::encoder::HashStubProvider;
    use crate::events::{extract_events_fallback, EventSource};

    fn store() -> DocumentStore {
        let docs = vec![
            Document {
                doc_id: "mill".into(),
                title: "Ada Mill".into(),
                sentences: vec![
                    "Ada built the mill in 1901.".into(),
                    "Ada sold the mill in 1920.".into(),
                    "Ada painted the mill in 1911.".into(),
                ],
            },
            Document {
                doc_id: "barn".into(),
                title: "Bo Barn".into(),
                sentences: vec!["Bo built the barn in 1901.".into(), "Bo sold the barn in 1930.".into()],
            },
        ];
        DocumentStore::new(docs).unwrap()
    }

    fn claim(id: &str, text: &str, gold: Vec<SentenceRef>) -> TrainingClaim {
        TrainingClaim {
            claim_id: id.into(),
            events: extract_events_fallback(&EventSource::Claim { claim_id: id.into() }, text),
            gold,
        }
    }

    #[test]
    fn hinge_values() {
        assert_eq!(triplet_loss(5.0, 1.0, 1.0), 0.0);
        assert_eq!(triplet_loss(0.0, 0.0, 1.0), 1.0);
        assert_eq!(triplet_loss(1.0, 0.5, 1.0), 0.5);
    }

    #[test]
    fn mining_excludes_gold_and_is_seeded() {
        let s = store();
        let claims = vec![claim("c1", "Ada built the mill in 1901.", vec![SentenceRef::new("mill", 0)])];
        let a = mine_triplets(&claims, &s, 3).unwrap();
        assert_eq!(a.len(), 1);
        assert_ne!(a[0].negative, SentenceRef::new("mill", 0));
        assert_eq!(a, mine_triplets(&claims, &s, 3).unwrap());
        let bad = vec![claim("c2", "x", vec![SentenceRef::new("nope", 0)])];
        assert!(matches!(mine_triplets(&bad, &s, 0), Err(TrainError::UnresolvedEvidenceRef(_))));
    }

    #[test]
    fn mining_without_candidates_skips() {
        let only = DocumentStore::new(vec![Document {
            doc_id: "a".into(),
            title: "A".into(),
            sentences: vec!["Ada built the mill in 1901.".into()],
        }])
        .unwrap();
        let claims = vec![claim("c1", "Ada built the mill in 1901.", vec![SentenceRef::new("a", 0)])];
        assert!(mine_triplets(&claims, &only, 0).unwrap().is_empty());
    }

    fn fixture(d: usize) -> (ModelParams, PreparedTriplet) {
        let s = store();
        let t = Triplet {
            claim_id: "c".into(),
            claim_event: extract_events_fallback(&EventSource::Claim { claim_id: "c".into() }, "Ada built the mill in 1901.")
                .remove(0),
            positive: SentenceRef::new("mill", 0),
            negative: SentenceRef::new("mill", 2),
        };
        let p = HashStubProvider::new(d, 5);
        let ex = prepare_triplet(&t, &s, &EventSet::default(), &p).unwrap();
        (ModelParams::init(d, 2, 2, 7).unwrap(), ex)
    }

    #[test]
    fn gradient_check_passes_and_detects_corruption() {
        let (m, ex) = fixture(8);
        assert!(example_loss(&m, &ex, 1.0) > 0.0);
        let err = grad_check(&m, &ex, 1.0);
        assert!(err <= 1e-4, "relative error {err}");
        let bad = grad_check_with(&m, &ex, 1.0, |g| g[0].data_mut()[0] += 1.0);
        assert!(bad > 1e-2);
    }

    #[test]
    fn zero_gradient_direction_reports_zero() {
        let (m, ex) = fixture(8);
        // a satisfied margin zeroes every gradient
        assert_eq!(grad_check(&m, &ex, -1e6), 0.0);
    }

    #[test]
    fn adamw_single_step_closed_form() {
        let cfg = TrainConfig { learning_rate: 0.1, weight_decay: 0.0, ..TrainConfig::default() };
        let mut opt = AdamW::new(&cfg, &[(1, 2)]);
        let mut p = vec![Matrix::row_vector(vec![1.0, -2.0])];
        let g = vec![Matrix::row_vector(vec![0.5, -0.25])];
        opt.step(&mut p, &g);
        for (k, (&p0, &gk)) in [1.0f64, -2.0].iter().zip(&[0.5f64, -0.25]).enumerate() {
            let m_hat = (0.1 * gk) / 0.1;
            let v_hat = (0.001 * gk * gk) / 0.001;
            let expect = p0 - 0.1 * m_hat / (v_hat.sqrt() + 1e-8);
            assert!((p[0].data()[k] - expect).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_learning_rate_keeps_params() {
        let (m, ex) = fixture(8);
        let cfg = TrainConfig { learning_rate: 0.0, epochs: 3, val_fraction: 0.0, ..TrainConfig::default() };
        let out = train(&[ex.clone(), ex], &cfg, m.clone()).unwrap();
        assert!(out.params == m);
        let losses: Vec<f64> = out.trace.iter().map(|r| r.mean_loss).collect();
        assert!(losses.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn single_triplet_converges_and_is_deterministic() {
        let (m, ex) = fixture(8);
        let cfg = TrainConfig { learning_rate: 1e-2, epochs: 50, batch_size: 1, val_fraction: 0.0, ..TrainConfig::default() };
        let out = train(std::slice::from_ref(&ex), &cfg, m.clone()).unwrap();
        assert_eq!(out.trace.last().unwrap().mean_loss, 0.0);
        assert_eq!(example_loss(&out.params, &ex, 1.0), 0.0);
        let again = train(std::slice::from_ref(&ex), &cfg, m).unwrap();
        assert!(again.params == out.params);
    }

    #[test]
    fn empty_dataset_errors() {
        let (m, _) = fixture(8);
        assert!(matches!(train(&[], &TrainConfig::default(), m), Err(TrainError::EmptyDataset)));
    }
}
