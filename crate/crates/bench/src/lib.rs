//! Fixtures shared by the benchmarks.

use tempver_core::encoder::HashStubProvider;
use tempver_core::events::EventSet;
use tempver_core::model::ModelParams;
use tempver_core::relevance::{EventGraph, GatParams, GraphNode};
use tempver_core::training::PreparedTriplet;
use tempver_core::events::Extractor;
use tempver_core::{pipeline, synth, ClaimRecord, DocumentStore, Event, EventPair, EventSource, Matrix, Representation, SentenceRef};

pub struct Corpus {
    pub store: DocumentStore,
    pub claims: Vec<ClaimRecord>,
    pub events: EventSet,
}

pub fn retrieval(n: usize) -> Corpus {
    let c = synth::retrieval_corpus(n, 7);
    Corpus { store: DocumentStore::new(c.docs).unwrap(), claims: c.claims, events: EventSet::default() }
}

fn event(id: String, source: EventSource) -> Event {
    Event { event_id: id, source, predicate: String::new(), core_text: String::new(), temporal: Vec::new(), extractor: Extractor::Srl }
}

/// `nodes` evidence events of `tokens` rows each, in a `d`-dimensional space.
pub fn graph(nodes: usize, tokens: usize, d: usize) -> (EventGraph, GatParams) {
    let claim = event("c".into(), EventSource::Claim { claim_id: "c".into() });
    let val = |i: usize| ((i * 2654435761) % 1000) as f64 / 500.0 - 1.0;
    let built = (0..nodes)
        .map(|k| {
            let data = (0..tokens * d).map(|i| val(i + k * 7919)).collect();
            GraphNode {
                pair: EventPair {
                    claim_event: claim.clone(),
                    evidence_event: event(format!("e{k}"), EventSource::Evidence(SentenceRef::new("d", k / 2))),
                    title: "d".into(),
                },
                repr: Representation::from_vectors(Matrix::from_vec(tokens, d, data), vec![false; tokens]),
            }
        })
        .collect();
    let mut params = GatParams::zeros(d);
    for (i, w) in params.w.data_mut().iter_mut().enumerate() {
        *w = val(i + 13) * 0.1;
    }
    for (i, w) in params.head_w.data_mut().iter_mut().enumerate() {
        *w = val(i + 29) * 0.1;
    }
    (EventGraph::new(built).unwrap(), params)
}

/// A model and prepared triplets over a small synthetic corpus.
pub fn training(d: usize, heads: usize) -> (ModelParams, Vec<PreparedTriplet>) {
    let c = retrieval(16);
    let provider = HashStubProvider::new(d, 7);
    let examples = pipeline::prepare_training(&c.claims, &c.store, &c.events, &provider, 7).unwrap();
    (ModelParams::init(d, 2, heads, 7).unwrap(), examples)
}
