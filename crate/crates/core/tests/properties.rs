use std::collections::{BTreeMap, HashMap};

use proptest::prelude::*;
use proptest::sample::subsequence;

use tempver_core::augment::{self, AugmentConfig, ClaimRecord, GoldEvidence, Provenance};
use tempver_core::corpus::{DocumentStore, SentenceRef};
use tempver_core::encoder::Representation;
use tempver_core::evalkit::{self, GoldClaim, Golds, Prediction};
use tempver_core::events::{Event, EventPair, EventSet, EventSource, Extractor};
use tempver_core::relevance::{self, EventGraph, GatParams, GraphNode};
use tempver_core::synth;
use tempver_core::temporal;
use tempver_core::training::triplet_loss;
use tempver_core::verdict::{aggregate, Verdict};
use tempver_core::Matrix;

fn verdict() -> impl Strategy<Value = Verdict> {
    prop::sample::select(Verdict::ALL.to_vec())
}

fn node(k: usize, sentence: usize, rows: &[Vec<f64>]) -> GraphNode {
    let event = |id: String, source| Event {
        event_id: id,
        source,
        predicate: String::new(),
        core_text: String::new(),
        temporal: Vec::new(),
        extractor: Extractor::Srl,
    };
    GraphNode {
        pair: EventPair {
            claim_event: event("c".into(), EventSource::Claim { claim_id: "c".into() }),
            evidence_event: event(format!("e{k}"), EventSource::Evidence(SentenceRef::new("d", sentence))),
            title: "d".into(),
        },
        repr: Representation::from_vectors(Matrix::from_rows(rows), vec![false; rows.len()]),
    }
}

prop_compose! {
    fn graph_case()(d in 1usize..6, n in 1usize..5)
        (rows in prop::collection::vec(prop::collection::vec(prop::collection::vec(-2.0f64..2.0, d), 1..4), n),
         sentences in prop::collection::vec(0usize..3, n),
         w in prop::collection::vec(-1.0f64..1.0, 2 * d),
         head in prop::collection::vec(-1.0f64..1.0, 2 * d),
         normalize in any::<bool>(),
         perm in Just((0..n).collect::<Vec<usize>>()).prop_shuffle())
        -> (Vec<Vec<Vec<f64>>>, Vec<usize>, GatParams, Vec<usize>) {
        let d = w.len() / 2;
        let params = GatParams {
            w: Matrix::from_vec(1, 2 * d, w),
            head_w: Matrix::from_vec(1, 2 * d, head),
            head_b: 0.1,
            normalize_beta: normalize,
        };
        (rows, sentences, params, perm)
    }
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * (1.0 + a.abs().max(b.abs()))
}

fn arb_golds_and_preds() -> impl Strategy<Value = (Golds, Vec<Prediction>)> {
    let refs = || prop::collection::vec((0usize..4).prop_map(|i| SentenceRef::new("s", i)), 1..3);
    let row = (verdict(), prop::collection::vec(refs(), 1..3), verdict(), prop::collection::vec((0usize..4).prop_map(|i| SentenceRef::new("s", i)), 0..5));
    prop::collection::vec(row, 1..12).prop_map(|rows| {
        let mut golds = Golds::new();
        let mut preds = Vec::new();
        for (i, (gl, sets, pl, retrieved)) in rows.into_iter().enumerate() {
            let id = format!("c{i}");
            let evidence = if gl == Verdict::Nei { GoldEvidence::default() } else { GoldEvidence(sets) };
            golds.insert(id.clone(), GoldClaim { label: gl, evidence });
            preds.push(Prediction::new(id, pl, retrieved));
        }
        (golds, preds)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn softmax_is_a_distribution(x in prop::collection::vec(-50.0f64..50.0, 1..20)) {
        let p = relevance::normalize_attention(&x);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|v| *v >= 0.0));
        for i in 0..x.len() {
            for j in 0..x.len() {
                if x[i] < x[j] {
                    prop_assert!(p[i] <= p[j]);
                }
            }
        }
    }

    #[test]
    fn graph_propagation_is_permutation_equivariant((rows, sentences, params, perm) in graph_case()) {
        let graph = |order: &[usize]| {
            EventGraph::new(order.iter().map(|&k| node(k, sentences[k], &rows[k])).collect()).unwrap()
        };
        let identity: Vec<usize> = (0..rows.len()).collect();
        let (g0, g1) = (graph(&identity), graph(&perm));
        let u0 = relevance::propagate_graph(&g0, &params).unwrap();
        let u1 = relevance::propagate_graph(&g1, &params).unwrap();
        for (pos, &k) in perm.iter().enumerate() {
            for (a, b) in u1[pos].iter().zip(&u0[k]) {
                prop_assert!(close(*a, *b), "{a} vs {b}");
            }
        }
        let s0 = relevance::score_sentences(&g0, &u0, &params, |_| String::new()).unwrap();
        let s1 = relevance::score_sentences(&g1, &u1, &params, |_| String::new()).unwrap();
        let by_ref = |s: &[relevance::ScoredSentence]| s.iter().map(|x| (x.reference.clone(), x.score)).collect::<BTreeMap<_, _>>();
        let (m0, m1) = (by_ref(&s0), by_ref(&s1));
        prop_assert_eq!(m0.keys().collect::<Vec<_>>(), m1.keys().collect::<Vec<_>>());
        for (r, v) in &m0 {
            prop_assert!(close(*v, m1[r]));
        }
    }

    #[test]
    fn aggregate_ignores_order_and_refutes_absorbs(v in prop::collection::vec(verdict(), 0..6), seed in any::<u64>()) {
        let mut shuffled = v.clone();
        let n = shuffled.len().max(1);
        shuffled.rotate_left(seed as usize % n);
        shuffled.reverse();
        prop_assert_eq!(aggregate(&v), aggregate(&shuffled));
        let mut with_r = v.clone();
        with_r.insert(seed as usize % (v.len() + 1), Verdict::Refutes);
        prop_assert_eq!(aggregate(&with_r), Verdict::Refutes);
        let mut with_s = v.clone();
        with_s.push(Verdict::Supports);
        prop_assert_eq!(aggregate(&with_s), if v.is_empty() { Verdict::Supports } else { aggregate(&v) });
    }

    #[test]
    fn fever_never_exceeds_accuracy((golds, preds) in arb_golds_and_preds()) {
        let la = evalkit::label_accuracy(&preds, &golds).unwrap();
        let fs = evalkit::fever_score(&preds, &golds).unwrap();
        prop_assert!(fs <= la);
        prop_assert!((0.0..=1.0).contains(&fs));
    }

    #[test]
    fn metrics_ignore_prediction_order((golds, preds) in arb_golds_and_preds(), k in 0usize..12) {
        let mut rotated = preds.clone();
        let n = rotated.len();
        rotated.rotate_left(k % n);
        prop_assert_eq!(evalkit::label_accuracy(&preds, &golds).unwrap(), evalkit::label_accuracy(&rotated, &golds).unwrap());
        prop_assert_eq!(evalkit::fever_score(&preds, &golds).unwrap(), evalkit::fever_score(&rotated, &golds).unwrap());
    }

    #[test]
    fn prediction_dedup_keeps_first(ids in prop::collection::vec(0usize..5, 0..10)) {
        let p = Prediction::new("c".into(), Verdict::Nei, ids.iter().map(|i| SentenceRef::new("s", *i)));
        let mut firsts = Vec::new();
        for i in &ids {
            if !firsts.contains(i) {
                firsts.push(*i);
            }
        }
        prop_assert_eq!(p.retrieved.iter().map(|r| r.sent_id).collect::<Vec<_>>(), firsts);
    }

    #[test]
    fn encoding_has_fixed_norm(pos in 0u64..1_000_000, half in 1usize..200) {
        let d = 2 * half;
        let e = temporal::temporal_encoding(pos, d).unwrap();
        let n = e.iter().map(|x| x * x).sum::<f64>().sqrt();
        prop_assert!((n - (half as f64).sqrt()).abs() < 1e-9);
        prop_assert!(e.iter().all(|x| x.abs() <= 1.0));
    }

    #[test]
    fn triplet_loss_is_a_hinge(pos in -5.0f64..5.0, neg in -5.0f64..5.0, margin in 0.0f64..2.0) {
        let l = triplet_loss(pos, neg, margin);
        prop_assert!(l >= 0.0);
        prop_assert_eq!(l == 0.0, pos - neg >= margin);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn augmentation_is_sound_and_round_trips(seed in any::<u64>(), aug_seed in any::<u64>(), keep in subsequence((0..24).collect::<Vec<usize>>(), 1..24)) {
        let corpus = synth::augmentation_corpus(24, seed);
        let store = DocumentStore::new(corpus.docs).unwrap();
        let claims: Vec<ClaimRecord> = keep.iter().map(|i| corpus.claims[*i].clone()).collect();
        let cfg = AugmentConfig { seed: aug_seed, ..AugmentConfig::default() };
        let out = augment::augment_claims(&claims, &store, &EventSet::default(), &cfg).unwrap();
        let parents: HashMap<&str, &ClaimRecord> = claims.iter().map(|c| (c.claim_id.as_str(), c)).collect();
        for r in &out.records {
            let line = serde_json::to_string(r).unwrap();
            prop_assert_eq!(&serde_json::from_str::<ClaimRecord>(&line).unwrap(), r);
            let Provenance::Augmented { parent, .. } = &r.provenance else { continue };
            let parent = parents[parent.as_str()];
            let dates = augment::evidence_dates(parent, &store).unwrap();
            let old = augment::reparsed_arguments(parent);
            let new = augment::reparsed_arguments(r);
            prop_assert_eq!(old.len(), new.len(), "{} -> {}", parent.text, r.text);
            let changed: Vec<usize> = (0..new.len()).filter(|i| !old[*i].same_meaning(&new[*i])).collect();
            prop_assert_eq!(changed.len(), 1, "{} -> {}", parent.text, r.text);
            let (o, n) = (&old[changed[0]], &new[changed[0]]);
            let sound = match r.label {
                Some(Verdict::Refutes) => augment::refute_sound(n, o, &dates),
                Some(Verdict::Supports) => augment::support_sound(n, o, &dates),
                _ => false,
            };
            prop_assert!(sound, "{} -> {}", parent.text, r.text);
            prop_assert_eq!(&r.gold_evidence, &parent.gold_evidence);
        }
        // a claim's derivations depend only on that claim and the seed
        let solo = augment::augment_claims(&claims[..1], &store, &EventSet::default(), &cfg).unwrap();
        let from_full: Vec<&ClaimRecord> = out.records.iter().filter(|r| {
            r.claim_id == claims[0].claim_id || matches!(&r.provenance, Provenance::Augmented { parent, .. } if *parent == claims[0].claim_id)
        }).collect();
        prop_assert_eq!(solo.records.iter().collect::<Vec<_>>(), from_full);
    }
}
