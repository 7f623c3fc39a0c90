//! Seeded synthetic corpora of invented entities, used by the desk-scale
//! experiments and benches.

use std::collections::BTreeSet;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::augment::{ClaimRecord, GoldEvidence, Provenance};
use crate::corpus::{Document, SentenceRef};
use crate::verdict::Verdict;

const SYLLABLES: &[&str] = &[
    "ka", "lo", "mi", "ren", "tha", "vo", "sel", "dri", "pa", "nu", "gor", "bel", "ix", "qua", "mor", "tes", "zan", "ul",
    "fen", "ri",
];
const VERBS: &[&str] = &[
    "founded", "built", "opened", "sold", "painted", "visited", "acquired", "restored", "designed", "launched",
];
const OBJECTS: &[&str] = &[
    "mill", "bridge", "school", "library", "theater", "factory", "harbor", "museum", "chapel", "tower",
];
const MONTHS: &[&str] = &[
    "January", "February", "March", "April", "May", "June", "July", "August", "September", "October", "November",
    "December",
];

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub docs: Vec<Document>,
    pub claims: Vec<ClaimRecord>,
}

fn word(rng: &mut ChaCha8Rng) -> String {
    let n = rng.random_range(2..=3);
    let mut w: String = (0..n).map(|_| *SYLLABLES.choose(rng).unwrap()).collect();
    w[..1].make_ascii_uppercase();
    w
}

/// Distinct two-word names.
fn names(n: usize, rng: &mut ChaCha8Rng) -> Vec<String> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let name = format!("{} {}", word(rng), word(rng));
        if seen.insert(name.clone()) {
            out.push(name);
        }
    }
    out
}

fn other_year(rng: &mut ChaCha8Rng, taken: &[i32]) -> i32 {
    loop {
        let y = rng.random_range(1800..2000);
        if !taken.contains(&y) {
            return y;
        }
    }
}

fn claim(id: String, text: String, gold: Vec<SentenceRef>) -> ClaimRecord {
    ClaimRecord {
        claim_id: id,
        text,
        label: Some(Verdict::Supports),
        gold_evidence: GoldEvidence::single(gold),
        provenance: Provenance::Original,
    }
}

/// One document and one claim per entity. Each document holds the gold
/// sentence, two sentences repeating the claimed action at other years, one
/// different action in the claimed year and one unrelated dated sentence,
/// in shuffled order. Only the date separates the gold sentence from its
/// closest distractors.
pub fn retrieval_corpus(n_claims: usize, seed: u64) -> SynthCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names = names(n_claims, &mut rng);
    let mut docs = Vec::with_capacity(n_claims);
    let mut claims = Vec::with_capacity(n_claims);
    for (i, name) in names.iter().enumerate() {
        let verbs: Vec<&str> = VERBS.choose_multiple(&mut rng, 3).copied().collect();
        let objects: Vec<&str> = OBJECTS.choose_multiple(&mut rng, 3).copied().collect();
        let year = rng.random_range(1800..2000);
        let mut years = vec![year];
        for _ in 0..3 {
            let y = other_year(&mut rng, &years);
            years.push(y);
        }
        let gold = format!("{name} {} the {} in {year}.", verbs[0], objects[0]);
        let mut sentences = vec![
            gold.clone(),
            format!("{name} {} the {} in {}.", verbs[0], objects[0], years[1]),
            format!("{name} {} the {} in {}.", verbs[0], objects[0], years[2]),
            format!("{name} {} the {} in {year}.", verbs[1], objects[1]),
            format!("{name} {} the {} in {}.", verbs[2], objects[2], years[3]),
        ];
        sentences.shuffle(&mut rng);
        let doc_id = format!("e{i:04}");
        let sent_id = sentences.iter().position(|s| *s == gold).unwrap();
        claims.push(claim(format!("r{i:04}"), gold.clone(), vec![SentenceRef::new(doc_id.clone(), sent_id)]));
        docs.push(Document { doc_id, title: name.clone(), sentences });
    }
    SynthCorpus { docs, claims }
}

/// SUPPORTS claims spread over every temporal predicate, each with a single
/// gold sentence whose dates satisfy the claim.
pub fn augmentation_corpus(n_claims: usize, seed: u64) -> SynthCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names = names(n_claims, &mut rng);
    let mut docs = Vec::with_capacity(n_claims);
    let mut claims = Vec::with_capacity(n_claims);
    for (i, name) in names.iter().enumerate() {
        let verb = *VERBS.choose(&mut rng).unwrap();
        let object = *OBJECTS.choose(&mut rng).unwrap();
        let year: i32 = rng.random_range(1800..2000);
        let k: i32 = rng.random_range(1..=9);
        let (text, evidence) = match i % 8 {
            0 => (format!("{name} {verb} the {object} in {year}."), format!("{name} {verb} the {object} in {year}.")),
            1 => {
                let m = *MONTHS.choose(&mut rng).unwrap();
                (format!("{name} {verb} the {object} in {m} {year}."), format!("On {m} {year}, {name} {verb} the {object}."))
            }
            2 => (format!("{name} {verb} the {object} before {}.", year + k), format!("{name} {verb} the {object} in {year}.")),
            3 => (format!("{name} {verb} the {object} after {}.", year - k), format!("{name} {verb} the {object} in {year}.")),
            4 => (
                format!("{name} ran the {object} from {year}."),
                format!("{name} ran the {object} from {year} to {}.", year + k),
            ),
            5 => (
                format!("{name} {verb} the {object} between {} and {}.", year - k, year + k),
                format!("{name} {verb} the {object} in {year}."),
            ),
            6 => (
                format!("{name} ran the {object} for {k} years."),
                format!("{name} ran the {object} for {k} years, starting in {year}."),
            ),
            _ => (
                format!("{name} ran the {object} for {} months before {}.", k + 1, year + 1),
                format!("In {year}, {name} ran the {object} for {} months.", k + 1),
            ),
        };
        let doc_id = format!("a{i:04}");
        let filler = format!("{name} is remembered in the {}.", OBJECTS.choose(&mut rng).unwrap());
        claims.push(claim(format!("c{i:04}"), text, vec![SentenceRef::new(doc_id.clone(), 0)]));
        docs.push(Document { doc_id, title: name.clone(), sentences: vec![evidence, filler] });
    }
    SynthCorpus { docs, claims }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::DocumentStore;

    #[test]
    fn retrieval_shape() {
        let c = retrieval_corpus(40, 3);
        assert_eq!(c.docs.len(), 40);
        assert_eq!(c.docs.iter().map(|d| d.sentences.len()).sum::<usize>(), 200);
        let store = DocumentStore::new(c.docs.clone()).unwrap();
        for cl in &c.claims {
            let g = &cl.gold_evidence.0[0][0];
            assert_eq!(store.sentence(g), Some(cl.text.as_str()));
        }
        assert_eq!(retrieval_corpus(40, 3).docs, c.docs);
    }

    #[test]
    fn augmentation_shape() {
        let c = augmentation_corpus(16, 1);
        assert_eq!(c.claims.len(), 16);
        assert!(c.claims[2].text.contains(" before "));
        assert!(c.claims[6].text.contains(" years."));
    }
}
