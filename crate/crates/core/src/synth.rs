//! Small synthetic corpus with one entity type and a synonym dictionary,
//! used for smoke runs and memorization checks.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{GoldEntity, Sentence, SynonymDictionary};

pub const ENTITY_TYPE: &str = "Disease";

const MODIFIERS: &[&str] = &[
    "renal",
    "hepatic",
    "cardiac",
    "pulmonary",
    "acute",
    "chronic",
    "viral",
    "bacterial",
    "congenital",
    "allergic",
    "diabetic",
    "severe",
];
const HEADS: &[&str] = &[
    "failure",
    "fibrosis",
    "infection",
    "carcinoma",
    "syndrome",
    "arrhythmia",
    "hepatitis",
    "asthma",
    "anemia",
    "nephropathy",
    "disease",
    "neuropathy",
];
const FILLER: &[&str] = &[
    "the",
    "a",
    "patient",
    "patients",
    "was",
    "were",
    "with",
    "of",
    "and",
    "in",
    "after",
    "before",
    "treated",
    "diagnosed",
    "presented",
    "developed",
    "showed",
    "signs",
    "history",
    "no",
    "evidence",
    "study",
    "we",
    "report",
    "case",
    "cases",
    "cohort",
    "risk",
    "increased",
    "reduced",
    "during",
    "therapy",
    "dose",
    "drug",
    "received",
    "admitted",
    "hospital",
    "year",
    "old",
    "man",
    "woman",
    "children",
    "adults",
    "follow",
    "up",
    "months",
    "weeks",
    "observed",
    "associated",
    "induced",
    "mild",
    "onset",
    "symptoms",
    "despite",
    "treatment",
    "clinical",
    "course",
    "outcome",
    "rate",
    "group",
    "control",
    "trial",
    "significant",
    "among",
    "for",
    "to",
    "by",
    "on",
    "is",
    "this",
];

#[derive(Clone, Debug)]
pub struct SyntheticCorpus {
    pub sentences: Vec<Sentence>,
    pub dictionary: SynonymDictionary,
    /// Distinct entity surface forms.
    pub entity_names: Vec<String>,
}

/// Generates `n_sentences` sentences over a fixed vocabulary. Entity names
/// are modifier/head pairs or bare heads; roughly two thirds of them get
/// one or two dictionary synonyms.
pub fn generate(n_sentences: usize, seed: u64) -> SyntheticCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut names: Vec<Vec<&str>> = Vec::new();
    for (k, h) in HEADS.iter().enumerate() {
        names.push(vec![MODIFIERS[k % MODIFIERS.len()], h]);
        if k % 3 == 0 {
            names.push(vec![h]);
        }
    }
    let mut dictionary = SynonymDictionary::default();
    for (k, n) in names.iter().enumerate() {
        if k % 3 == 2 {
            continue;
        }
        let head = n[n.len() - 1];
        let other = MODIFIERS[(k * 5 + 3) % MODIFIERS.len()];
        dictionary.insert(&n.join(" "), &format!("{other} {head}"));
        if k % 2 == 0 {
            dictionary.insert(&n.join(" "), &format!("{head} {}", FILLER[k % 4 + 7]));
        }
    }

    let mut sentences = Vec::with_capacity(n_sentences);
    for s in 0..n_sentences {
        let n_entities = if rng.random_bool(0.3) { 2 } else { 1 };
        let mut tokens: Vec<String> = Vec::new();
        let mut entities = Vec::new();
        for _ in 0..n_entities {
            for _ in 0..rng.random_range(2..=4) {
                tokens.push(FILLER.choose(&mut rng).unwrap().to_string());
            }
            let name = names.choose(&mut rng).unwrap();
            let start = tokens.len();
            tokens.extend(name.iter().map(|t| t.to_string()));
            entities.push(GoldEntity {
                start,
                end: tokens.len() - 1,
                label: ENTITY_TYPE.to_string(),
                synonyms: Vec::new(),
            });
        }
        for _ in 0..rng.random_range(1..=3) {
            tokens.push(FILLER.choose(&mut rng).unwrap().to_string());
        }
        sentences.push(Sentence {
            doc_id: format!("doc{}", s / 5),
            ordinal: s % 5,
            tokens,
            entities,
        });
    }
    SyntheticCorpus {
        sentences,
        dictionary,
        entity_names: names.iter().map(|n| n.join(" ")).collect(),
    }
}

/// Three hand-written sentences over sixteen tokens (twenty vocabulary
/// entries with the reserved ones) and two entity types, with synonyms
/// already attached. Small enough for exhaustive gradient checks.
pub fn micro_corpus() -> Vec<Sentence> {
    let t = |s: &str| s.split_whitespace().map(String::from).collect::<Vec<_>>();
    let e = |start, end, label: &str, syns: &[&str]| GoldEntity {
        start,
        end,
        label: label.to_string(),
        synonyms: syns.iter().map(|x| t(x)).collect(),
    };
    vec![
        Sentence {
            doc_id: "m0".into(),
            ordinal: 0,
            tokens: t("t0 t1 t2 t3 t4"),
            entities: vec![e(1, 2, "A", &["t12 t13"]), e(4, 4, "B", &[])],
        },
        Sentence {
            doc_id: "m0".into(),
            ordinal: 1,
            tokens: t("t5 t6 t7 t8"),
            entities: vec![e(0, 0, "B", &["t14", "t15 t3"]), e(2, 3, "A", &[])],
        },
        Sentence {
            doc_id: "m1".into(),
            ordinal: 0,
            tokens: t("t9 t10 t11 t0 t1"),
            entities: vec![e(3, 4, "A", &[])],
        },
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{attach_synonyms, build_vocab};

    #[test]
    fn toy_corpus_shape() {
        let mut c = generate(50, 7);
        assert_eq!(c.sentences.len(), 50);
        let cov = attach_synonyms(&mut c.sentences, &c.dictionary);
        assert!(cov.percent() >= 50.0, "coverage {}", cov.percent());
        let v = build_vocab(&c.sentences, 1).unwrap();
        assert!((60..=140).contains(&v.len()), "vocab {}", v.len());
        let again = generate(50, 7);
        assert_eq!(again.sentences, generate(50, 7).sentences);
    }
}
