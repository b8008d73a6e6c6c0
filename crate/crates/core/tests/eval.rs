use std::collections::{BTreeSet, HashMap};

use ibner::corpus::{
    attach_synonyms, build_vocab, enumerate_spans, EntityTypes, GoldEntity, Sentence,
};
use ibner::eval::{
    bleu2, classify_errors, exact_match_f1, export_posteriors, gold_mentions,
    reconstruction_report, write_reconstructions, Mention,
};
use ibner::model::LatentSource;
use ibner::synth::generate;
use ibner::{Mode, ModelConfig, Trainer};
use proptest::prelude::*;

fn mention() -> impl Strategy<Value = Mention> {
    (
        0..2usize,
        0..2usize,
        0..4usize,
        0..3usize,
        prop::sample::select(vec!["A", "B", "C"]),
    )
        .prop_map(|(d, s, start, len, t)| Mention {
            doc_id: format!("d{d}"),
            sentence: s,
            start,
            end: start + len,
            label: t.into(),
        })
}

fn mentions() -> impl Strategy<Value = BTreeSet<Mention>> {
    prop::collection::btree_set(mention(), 0..12)
}

// Counting over plain tuples, independent of the library's set logic.
fn oracle_f1(pred: &BTreeSet<Mention>, gold: &BTreeSet<Mention>) -> f64 {
    let key = |m: &Mention| {
        (
            m.doc_id.clone(),
            m.sentence,
            m.start,
            m.end,
            m.label.clone(),
        )
    };
    let g: Vec<_> = gold.iter().map(key).collect();
    let tp = pred.iter().filter(|m| g.contains(&key(m))).count() as f64;
    let (p, r) = (pred.len() as f64, gold.len() as f64);
    if tp == 0.0 {
        return 0.0;
    }
    let (prec, rec) = (tp / p, tp / r);
    2.0 * prec * rec / (prec + rec)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn f1_matches_oracle(pred in mentions(), gold in mentions()) {
        let r = exact_match_f1(&pred, &gold);
        prop_assert!((r.micro.f1 - oracle_f1(&pred, &gold)).abs() < 1e-12);
        prop_assert_eq!(r.micro.true_positives + r.micro.false_positives, pred.len());
        prop_assert_eq!(r.micro.true_positives + r.micro.false_negatives, gold.len());
    }

    #[test]
    fn errors_partition_false_positives(pred in mentions(), gold in mentions()) {
        let fps: Vec<&Mention> = pred.difference(&gold).collect();
        let e = classify_errors(fps.iter().copied(), &gold);
        prop_assert_eq!(e.category_errors + e.span_errors, fps.len());
    }

    #[test]
    fn single_type_has_no_category_errors(pred in mentions(), gold in mentions()) {
        let relabel = |s: &BTreeSet<Mention>| -> BTreeSet<Mention> {
            s.iter().map(|m| Mention { label: "A".into(), ..m.clone() }).collect()
        };
        let (pred, gold) = (relabel(&pred), relabel(&gold));
        let e = classify_errors(pred.difference(&gold), &gold);
        prop_assert_eq!(e.category_errors, 0);
    }

    #[test]
    fn bleu_of_identity_is_one(tokens in prop::collection::vec(0u8..20, 1..10)) {
        prop_assert!((bleu2(&tokens, std::slice::from_ref(&tokens)) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bleu_ignores_token_names(hyp in prop::collection::vec(0u8..6, 1..8), reference in prop::collection::vec(0u8..6, 1..8)) {
        let f = |x: &[u8]| x.iter().map(|t| 100 - *t as u32 * 7).collect::<Vec<u32>>();
        let a = bleu2(&hyp, std::slice::from_ref(&reference));
        let b = bleu2(&f(&hyp), &[f(&reference)]);
        prop_assert_eq!(a, b);
        prop_assert!((0.0..=1.0).contains(&a));
    }

    #[test]
    fn bleu_without_overlap_is_zero(hyp in prop::collection::vec(0u8..5, 1..8), reference in prop::collection::vec(5u8..10, 1..8)) {
        prop_assert_eq!(bleu2(&hyp, &[reference]), 0.0);
    }

    #[test]
    fn span_enumeration_matches_oracle(n in 0usize..=60, max in 1usize..=14, seed in any::<u64>()) {
        let tokens: Vec<String> = (0..n).map(|i| format!("w{i}")).collect();
        let mut entities = Vec::new();
        if n > 0 {
            let start = (seed as usize) % n;
            let end = (start + (seed as usize / 7) % 3).min(n - 1);
            entities.push(GoldEntity { start, end, label: "A".into(), synonyms: vec![] });
        }
        let s = Sentence { doc_id: "d".into(), ordinal: 0, tokens, entities: entities.clone() };
        let types = EntityTypes::from_names(["A"]);
        let got = enumerate_spans(&s, max, &types);
        let mut expect = Vec::new();
        for i in 0..n {
            for j in i..n {
                if j - i < max {
                    expect.push((i, j));
                }
            }
        }
        let got_pairs: Vec<(usize, usize)> = got.iter().map(|c| (c.start, c.end)).collect();
        prop_assert_eq!(&got_pairs, &expect);
        let m = max.min(n);
        prop_assert_eq!(got.len(), if n == 0 { 0 } else { m * (2 * n - m + 1) / 2 });
        for c in &got {
            let gold = entities.iter().any(|e| e.start == c.start && e.end == c.end);
            prop_assert_eq!(c.is_entity(), gold);
        }
    }
}

#[test]
fn f1_examples() {
    let m = |s, e, t: &str| Mention {
        doc_id: "d".into(),
        sentence: 0,
        start: s,
        end: e,
        label: t.into(),
    };
    let gold: BTreeSet<_> = [m(0, 1, "A"), m(3, 3, "B")].into();
    assert_eq!(exact_match_f1(&gold, &gold).micro.f1, 1.0);
    assert_eq!(exact_match_f1(&BTreeSet::new(), &gold).micro.f1, 0.0);
    let pred: BTreeSet<_> = [m(0, 1, "A"), m(3, 3, "A")].into();
    let r = exact_match_f1(&pred, &gold);
    assert!((r.micro.f1 - 0.5).abs() < 1e-12);
    let fps: Vec<&Mention> = pred.difference(&gold).collect();
    assert_eq!(classify_errors(fps, &gold).category_errors, 1);
}

fn trained(mode: Mode) -> (Trainer, Vec<Sentence>) {
    let mut c = generate(20, 5);
    attach_synonyms(&mut c.sentences, &c.dictionary);
    let config = ModelConfig {
        mode,
        word_dim: 8,
        encoder_hidden: 8,
        encoder_dim: 8,
        latent_dim: 6,
        vib_hidden: 10,
        vib_latent_dim: 5,
        decoder_embed_dim: 8,
        decoder_hidden: 10,
        ..ModelConfig::default()
    };
    let vocab = build_vocab(&c.sentences, 1).unwrap();
    let types = EntityTypes::from_corpus(&c.sentences);
    (Trainer::init(config, vocab, types).unwrap(), c.sentences)
}

#[test]
fn posterior_export_covers_every_gold_entity() {
    let (t, corpus) = trained(Mode::All);
    let gold = gold_mentions(&corpus).len();
    let dir = tempfile::tempdir().unwrap();
    for (source, width) in [(LatentSource::Z1, 6), (LatentSource::Z3, 5)] {
        let a = dir.path().join("a.tsv");
        let b = dir.path().join("b.tsv");
        assert_eq!(
            export_posteriors(&t.model, &corpus, source, &a).unwrap(),
            (gold, width)
        );
        export_posteriors(&t.model, &corpus, source, &b).unwrap();
        let text = std::fs::read_to_string(&a).unwrap();
        assert_eq!(text, std::fs::read_to_string(&b).unwrap());
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), gold + 1);
        assert!(lines[0].starts_with("doc_id\tstart\tend\ttype\tsource\tc0"));
        assert!(lines[1..]
            .iter()
            .all(|l| l.split('\t').count() == 5 + width));
    }
}

#[test]
fn export_needs_the_requested_latent() {
    let (t, corpus) = trained(Mode::Supvib);
    let dir = tempfile::tempdir().unwrap();
    assert!(export_posteriors(
        &t.model,
        &corpus,
        LatentSource::Z1,
        dir.path().join("x.tsv")
    )
    .is_err());
    let (t, corpus) = trained(Mode::Baseline);
    assert!(export_posteriors(
        &t.model,
        &corpus,
        LatentSource::Z3,
        dir.path().join("x.tsv")
    )
    .is_err());
}

#[test]
fn reconstruction_dump_has_one_row_per_entity() {
    let (t, corpus) = trained(Mode::SupvibSpanreco);
    let report = reconstruction_report(&t.model, &corpus).unwrap();
    let gold = gold_mentions(&corpus).len();
    assert_eq!(report.rows.len(), gold);
    let mean = report.rows.iter().map(|r| r.bleu2).sum::<f64>() / gold as f64;
    assert!((report.mean_bleu2 - mean).abs() < 1e-12);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.tsv");
    write_reconstructions(&path, &report).unwrap();
    let text = std::fs::read_to_string(path).unwrap();
    assert_eq!(text.lines().count(), gold + 2);

    let mut by_doc: HashMap<&str, usize> = HashMap::new();
    for r in &report.rows {
        *by_doc.entry(r.mention.doc_id.as_str()).or_default() += 1;
    }
    assert_eq!(by_doc.values().sum::<usize>(), gold);

    let (t, corpus) = trained(Mode::Supvib);
    assert!(reconstruction_report(&t.model, &corpus).is_err());
}
