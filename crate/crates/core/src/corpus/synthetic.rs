//! Deterministic toy corpus with pronoun/antecedent structure.
//!
//! Every document alternates between sentences that introduce a named person
//! (`john likes the dog .`) and sentences that refer back to the most recent
//! person with a gender-neutral pronoun (`they see the car .`). The target
//! language marks grammatical gender on the pronoun (`ele` / `ela`), so the
//! correct translation of a pronoun sentence depends on the previous sentence.
//! Gold clusters group every mention of a person within a document.

use std::collections::{HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::clusters::{CorefClusterSet, Span};
use super::window::{Document, Sentence};

const MALE: &[(&str, &str)] = &[("john", "joao"), ("peter", "pedro"), ("paul", "paulo"), ("mark", "marcos")];
const FEMALE: &[(&str, &str)] = &[("mary", "maria"), ("anna", "ana"), ("lisa", "luisa"), ("kate", "katia")];
const VERBS: &[(&str, &str)] = &[
    ("sees", "ve"),
    ("likes", "gosta"),
    ("calls", "chama"),
    ("helps", "ajuda"),
    ("finds", "acha"),
];
const OBJECTS: &[(&str, &str)] = &[
    ("dog", "cao"),
    ("car", "carro"),
    ("house", "casa"),
    ("book", "livro"),
    ("cat", "gato"),
];
pub const PRONOUN: &str = "they";
pub const PRONOUN_MALE: &str = "ele";
pub const PRONOUN_FEMALE: &str = "ela";

#[derive(Clone, Copy, Debug)]
pub struct SyntheticSpec {
    pub documents: usize,
    pub sentences_per_document: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            documents: 20,
            sentences_per_document: 5,
            seed: 1,
        }
    }
}

fn words(s: &[&str]) -> Sentence {
    s.iter().map(|w| w.to_string()).collect()
}

/// Generates `spec.documents` documents.
pub fn synthetic_documents(spec: &SyntheticSpec) -> Vec<Document> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    (0..spec.documents)
        .map(|d| synthetic_document(&mut rng, &format!("syn{d}"), spec.sentences_per_document))
        .collect()
}

fn synthetic_document(rng: &mut impl Rng, doc_id: &str, n: usize) -> Document {
    let mut src = Vec::with_capacity(n);
    let mut tgt = Vec::with_capacity(n);
    // person name -> mention spans (document word positions)
    let mut entities: Vec<(String, Vec<Span>)> = Vec::new();
    let mut recent: Option<(usize, bool)> = None; // entity index, is_female
    let mut pos = 1;
    let mut prev_pronoun = true;
    for _ in 0..n {
        let (verb, verb_t) = *VERBS.choose(rng).unwrap();
        let (obj, obj_t) = *OBJECTS.choose(rng).unwrap();
        let use_pronoun = !prev_pronoun && rng.gen_bool(0.5);
        if use_pronoun {
            let (ent, female) = recent.expect("a name precedes every pronoun");
            let pron_t = if female { PRONOUN_FEMALE } else { PRONOUN_MALE };
            src.push(words(&[PRONOUN, verb, "the", obj, "."]));
            tgt.push(words(&[pron_t, verb_t, "o", obj_t, "."]));
            entities[ent].1.push(Span::new(pos, pos));
        } else {
            let female = rng.gen_bool(0.5);
            let (name, name_t) = *if female { FEMALE } else { MALE }.choose(rng).unwrap();
            src.push(words(&[name, verb, "the", obj, "."]));
            tgt.push(words(&[name_t, verb_t, "o", obj_t, "."]));
            let ent = match entities.iter().position(|(n, _)| n == name) {
                Some(i) => i,
                None => {
                    entities.push((name.to_string(), Vec::new()));
                    entities.len() - 1
                }
            };
            entities[ent].1.push(Span::new(pos, pos));
            recent = Some((ent, female));
        }
        prev_pronoun = use_pronoun;
        pos += 5;
    }
    let clusters = entities
        .into_iter()
        .map(|(_, spans)| spans)
        .filter(|s| s.len() >= 2)
        .collect();
    let clusters = CorefClusterSet::new(clusters).expect("generated clusters are valid");
    Document::new(doc_id, src, tgt, clusters).expect("generated document is valid")
}

/// Source words that the synthetic generator treats as person mentions.
pub fn mention_lexicon() -> HashSet<String> {
    MALE.iter().chain(FEMALE).map(|(s, _)| s.to_string()).collect()
}

/// Rule-based annotator: clusters identical tokens from `lexicon`.
/// Spans are single words indexed over the document without separators.
pub fn annotate_exact_match(sentences: &[Sentence], lexicon: &HashSet<String>) -> CorefClusterSet {
    let mut groups: Vec<(String, Vec<Span>)> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut pos = 1;
    for tok in sentences.iter().flatten() {
        if lexicon.contains(tok) {
            let i = *index.entry(tok.clone()).or_insert_with(|| {
                groups.push((tok.clone(), Vec::new()));
                groups.len() - 1
            });
            groups[i].1.push(Span::new(pos, pos));
        }
        pos += 1;
    }
    CorefClusterSet::new(groups.into_iter().map(|(_, s)| s).filter(|s| s.len() >= 2).collect())
        .expect("single-token spans never overlap")
}

/// Gives the opposite-gender form of a target pronoun, or `None` for other
/// tokens. Used to build contrastive candidates.
pub fn flip_pronoun(token: &str) -> Option<&'static str> {
    match token {
        PRONOUN_MALE => Some(PRONOUN_FEMALE),
        PRONOUN_FEMALE => Some(PRONOUN_MALE),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic() {
        let spec = SyntheticSpec::default();
        assert_eq!(synthetic_documents(&spec), synthetic_documents(&spec));
    }

    #[test]
    fn pronouns_follow_a_named_sentence() {
        for doc in synthetic_documents(&SyntheticSpec { documents: 30, ..Default::default() }) {
            assert_ne!(doc.sentences_src[0][0], PRONOUN);
            for k in 1..doc.len() {
                if doc.sentences_src[k][0] == PRONOUN {
                    assert_ne!(doc.sentences_src[k - 1][0], PRONOUN);
                    // every pronoun is clustered with its antecedent
                    let pos = 5 * k + 1;
                    assert!(doc.clusters.spans().any(|s| s.start == pos));
                }
            }
        }
    }

    #[test]
    fn exact_match_annotator_groups_repeated_names() {
        let s = vec![words(&["john", "sees", "mary"]), words(&["mary", "sees", "john", "john"])];
        let c = annotate_exact_match(&s, &mention_lexicon());
        assert_eq!(
            c,
            CorefClusterSet::from_pairs(&[&[(1, 1), (6, 6), (7, 7)], &[(3, 3), (4, 4)]]).unwrap()
        );
    }
}
