use ibner::corpus::{
    attach_synonyms, load_corpus, load_synonym_dict, write_corpus, write_synonym_dict,
};
use ibner::synth::{generate, ENTITY_TYPE};

#[test]
fn corpus_and_dictionary_round_trip() {
    let c = generate(30, 11);
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("toy.jsonl");
    let dict = dir.path().join("toy.dict.tsv");
    write_corpus(&corpus, &c.sentences).unwrap();
    write_synonym_dict(&dict, &c.dictionary).unwrap();

    let (back, stats) = load_corpus(&corpus, 512).unwrap();
    assert_eq!(back, c.sentences);
    assert_eq!(stats.records, 30);
    let d = load_synonym_dict(&dict).unwrap();
    assert_eq!(d, c.dictionary);

    let mut a = back.clone();
    let mut b = c.sentences.clone();
    assert_eq!(
        attach_synonyms(&mut a, &d),
        attach_synonyms(&mut b, &c.dictionary)
    );
    assert!(a
        .iter()
        .flat_map(|s| &s.entities)
        .all(|e| e.label == ENTITY_TYPE));
}

#[test]
fn long_sentences_are_split() {
    let c = generate(5, 1);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.jsonl");
    write_corpus(&path, &c.sentences).unwrap();
    let (split, stats) = load_corpus(&path, 4).unwrap();
    assert!(split.len() > 5);
    assert!(split.iter().all(|s| s.tokens.len() <= 4));
    let before: usize = c.sentences.iter().map(|s| s.entities.len()).sum();
    let after: usize = split.iter().map(|s| s.entities.len()).sum();
    assert_eq!(before - after, stats.dropped_entities);
}
