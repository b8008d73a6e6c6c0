//! Exact-match scoring, false-positive taxonomy, BLEU-2 for span
//! reconstructions, and posterior export.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Sentence;
use crate::error::{Error, Result};
use crate::model::{LatentSource, Model};
use crate::Real;

/// An entity mention. Offsets are token positions within the sentence,
/// end inclusive; `sentence` is the ordinal of the sentence in its document.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Mention {
    pub doc_id: String,
    pub sentence: usize,
    pub start: usize,
    pub end: usize,
    #[serde(rename = "type")]
    pub label: String,
}

impl Mention {
    fn location(&self) -> (&str, usize, usize, usize) {
        (&self.doc_id, self.sentence, self.start, self.end)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Counts {
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub precision: Real,
    pub recall: Real,
    pub f1: Real,
}

impl Counts {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as Real / b as Real };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Counts {
            true_positives: tp,
            false_positives: fp,
            false_negatives: fn_,
            precision,
            recall,
            f1,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Micro-averaged over all types.
    #[serde(flatten)]
    pub micro: Counts,
    pub per_type: BTreeMap<String, Counts>,
    /// Unweighted mean of per-type F1.
    pub macro_f1: Real,
}

pub fn exact_match_f1(predictions: &BTreeSet<Mention>, gold: &BTreeSet<Mention>) -> EvalReport {
    let tp = predictions.intersection(gold).count();
    let micro = Counts::from_counts(tp, predictions.len() - tp, gold.len() - tp);
    let labels: BTreeSet<&str> = predictions
        .iter()
        .chain(gold)
        .map(|m| m.label.as_str())
        .collect();
    let mut per_type = BTreeMap::new();
    for l in labels {
        let p = predictions.iter().filter(|m| m.label == l).count();
        let g = gold.iter().filter(|m| m.label == l).count();
        let t = predictions
            .iter()
            .filter(|m| m.label == l && gold.contains(*m))
            .count();
        per_type.insert(l.to_string(), Counts::from_counts(t, p - t, g - t));
    }
    let macro_f1 = if per_type.is_empty() {
        0.0
    } else {
        per_type.values().map(|c| c.f1).sum::<Real>() / per_type.len() as Real
    };
    EvalReport {
        micro,
        per_type,
        macro_f1,
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBreakdown {
    /// Right boundaries, wrong type.
    pub category_errors: usize,
    /// Boundaries match no gold entity.
    pub span_errors: usize,
}

pub fn classify_errors<'a>(
    false_positives: impl IntoIterator<Item = &'a Mention>,
    gold: &BTreeSet<Mention>,
) -> ErrorBreakdown {
    let gold_spans: BTreeMap<(&str, usize, usize, usize), BTreeSet<&str>> =
        gold.iter().fold(BTreeMap::new(), |mut acc, m| {
            acc.entry(m.location())
                .or_default()
                .insert(m.label.as_str());
            acc
        });
    let mut out = ErrorBreakdown::default();
    for fp in false_positives {
        match gold_spans.get(&fp.location()) {
            Some(labels) if labels.iter().any(|l| *l != fp.label) => out.category_errors += 1,
            _ => out.span_errors += 1,
        }
    }
    out
}

fn ngram_counts<T: Ord>(tokens: &[T], n: usize) -> BTreeMap<&[T], usize> {
    let mut m = BTreeMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

/// Clipped n-gram precision against the references (matches, candidates).
fn modified_precision<T: Ord>(hyp: &[T], refs: &[Vec<T>], n: usize) -> (usize, usize) {
    let h = ngram_counts(hyp, n);
    let mut max_ref: BTreeMap<&[T], usize> = BTreeMap::new();
    for r in refs {
        for (g, c) in ngram_counts(r, n) {
            let e = max_ref.entry(g).or_insert(0);
            *e = (*e).max(c);
        }
    }
    let matched = h
        .iter()
        .map(|(g, &c)| c.min(max_ref.get(g).copied().unwrap_or(0)))
        .sum();
    (matched, h.values().sum())
}

/// Sentence-level BLEU over unigrams and bigrams, unsmoothed. A one-token
/// hypothesis is scored on unigrams alone; any zero precision gives 0.
pub fn bleu2<T: Ord>(hypothesis: &[T], references: &[Vec<T>]) -> Real {
    let c = hypothesis.len();
    if c == 0 || references.is_empty() {
        return 0.0;
    }
    let orders = if c < 2 { 1 } else { 2 };
    let mut log_p = 0.0;
    for n in 1..=orders {
        let (m, total) = modified_precision(hypothesis, references, n);
        if m == 0 {
            return 0.0;
        }
        log_p += (m as Real / total as Real).ln() / orders as Real;
    }
    // Closest reference length, ties to the shorter one.
    let r = references
        .iter()
        .map(|x| x.len())
        .min_by_key(|&l| (l.abs_diff(c), l))
        .unwrap();
    let bp = if c > r {
        1.0
    } else {
        (1.0 - r as Real / c as Real).exp()
    };
    bp * log_p.exp()
}

/// Every gold entity of the corpus as a mention.
pub fn gold_mentions(corpus: &[Sentence]) -> BTreeSet<Mention> {
    corpus
        .iter()
        .flat_map(|s| {
            s.entities.iter().map(move |e| Mention {
                doc_id: s.doc_id.clone(),
                sentence: s.ordinal,
                start: e.start,
                end: e.end,
                label: e.label.clone(),
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredMention {
    #[serde(flatten)]
    pub mention: Mention,
    pub prob: Real,
}

/// Predicted mentions for a corpus, in sentence then span order.
pub fn predict_corpus(
    model: &Model,
    corpus: &[Sentence],
    threshold: Real,
) -> Result<Vec<ScoredMention>> {
    let mut out = Vec::new();
    let refs: Vec<&Sentence> = corpus.iter().collect();
    for batch in refs.chunks(model.config.batch_size.max(1)) {
        let preds = model.predict_batch(batch, threshold)?;
        for (s, spans) in batch.iter().zip(preds) {
            for ((i, j), p) in spans {
                for &t in &p.types {
                    out.push(ScoredMention {
                        mention: Mention {
                            doc_id: s.doc_id.clone(),
                            sentence: s.ordinal,
                            start: i,
                            end: j,
                            label: model.types.name(t).to_string(),
                        },
                        prob: p.probabilities[t],
                    });
                }
            }
        }
    }
    Ok(out)
}

pub fn write_predictions(path: impl AsRef<Path>, predictions: &[ScoredMention]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for p in predictions {
        serde_json::to_writer(&mut w, p)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub report: EvalReport,
    pub errors: ErrorBreakdown,
}

/// Predicts on `corpus` and scores against its gold entities.
pub fn evaluate(
    model: &Model,
    corpus: &[Sentence],
    threshold: Real,
) -> Result<(Evaluation, Vec<ScoredMention>)> {
    let scored = predict_corpus(model, corpus, threshold)?;
    let predicted: BTreeSet<Mention> = scored.iter().map(|s| s.mention.clone()).collect();
    let gold = gold_mentions(corpus);
    let report = exact_match_f1(&predicted, &gold);
    let errors = classify_errors(predicted.difference(&gold), &gold);
    Ok((Evaluation { report, errors }, scored))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Reconstruction {
    pub mention: Mention,
    pub original: Vec<String>,
    pub reconstruction: Vec<String>,
    pub bleu2: Real,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionReport {
    pub mean_bleu2: Real,
    pub rows: Vec<Reconstruction>,
}

/// Greedy reconstruction of every gold entity from the mean of its
/// reconstruction posterior.
pub fn reconstruction_report(model: &Model, corpus: &[Sentence]) -> Result<ReconstructionReport> {
    let dec = model
        .sr
        .as_ref()
        .ok_or_else(|| Error::Model("no reconstruction decoder in this model".into()))?;
    let mut rows = Vec::new();
    let refs: Vec<&Sentence> = corpus.iter().filter(|s| !s.tokens.is_empty()).collect();
    for batch in refs.chunks(model.config.batch_size.max(1)) {
        let means = model.gold_means(batch, LatentSource::Z1)?;
        let mut k = 0;
        for s in batch {
            for e in &s.entities {
                let decoded =
                    dec.decode_greedy(&model.params, &means[k], model.config.max_decode_length)?;
                k += 1;
                let original = s.span_tokens(e.start, e.end).to_vec();
                let reconstruction = model.vocab.decode(&decoded.tokens);
                let score = bleu2(&reconstruction, std::slice::from_ref(&original));
                rows.push(Reconstruction {
                    mention: Mention {
                        doc_id: s.doc_id.clone(),
                        sentence: s.ordinal,
                        start: e.start,
                        end: e.end,
                        label: e.label.clone(),
                    },
                    original,
                    reconstruction,
                    bleu2: score,
                });
            }
        }
    }
    let mean_bleu2 = if rows.is_empty() {
        0.0
    } else {
        rows.iter().map(|r| r.bleu2).sum::<Real>() / rows.len() as Real
    };
    Ok(ReconstructionReport { mean_bleu2, rows })
}

pub fn write_reconstructions(path: impl AsRef<Path>, report: &ReconstructionReport) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "original\treconstruction\tbleu2")?;
    for r in &report.rows {
        writeln!(
            w,
            "{}\t{}\t{}",
            r.original.join(" "),
            r.reconstruction.join(" "),
            r.bleu2
        )?;
    }
    writeln!(w, "# mean\t\t{}", report.mean_bleu2)?;
    w.flush()?;
    Ok(())
}

/// Writes posterior means of every gold entity as TSV. Returns the number
/// of rows and the vector width.
pub fn export_posteriors(
    model: &Model,
    corpus: &[Sentence],
    source: LatentSource,
    path: impl AsRef<Path>,
) -> Result<(usize, usize)> {
    let width = match source {
        LatentSource::Z1 => model.config.latent_dim,
        LatentSource::Z3 => model.config.vib_latent_dim,
    };
    let mut body: Vec<String> = Vec::new();
    let refs: Vec<&Sentence> = corpus.iter().filter(|s| !s.tokens.is_empty()).collect();
    for batch in refs.chunks(model.config.batch_size.max(1)) {
        let means = model.gold_means(batch, source)?;
        let mut k = 0;
        for s in batch {
            for e in &s.entities {
                let v = &means[k];
                k += 1;
                if v.len() != width {
                    return Err(Error::Model(format!(
                        "posterior width {} differs from declared {width}",
                        v.len()
                    )));
                }
                let comps: Vec<String> = v.iter().map(|x| x.to_string()).collect();
                body.push(format!(
                    "{}\t{}\t{}\t{}\t{}\t{}",
                    s.doc_id,
                    e.start,
                    e.end,
                    e.label,
                    source.as_str(),
                    comps.join("\t")
                ));
            }
        }
    }
    let mut w = BufWriter::new(File::create(path)?);
    let cols: Vec<String> = (0..width).map(|c| format!("c{c}")).collect();
    writeln!(w, "doc_id\tstart\tend\ttype\tsource\t{}", cols.join("\t"))?;
    for line in &body {
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok((body.len(), width))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(doc: &str, s: usize, e: usize, t: &str) -> Mention {
        Mention {
            doc_id: doc.into(),
            sentence: 0,
            start: s,
            end: e,
            label: t.into(),
        }
    }

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn perfect_and_partial_match() {
        let gold: BTreeSet<_> = [m("d", 0, 1, "Disease"), m("d", 4, 5, "Disease")].into();
        let r = exact_match_f1(&gold, &gold);
        assert_eq!(
            (r.micro.precision, r.micro.recall, r.micro.f1),
            (1.0, 1.0, 1.0)
        );
        let pred: BTreeSet<_> = [m("d", 0, 1, "Disease")].into();
        let r = exact_match_f1(&pred, &gold);
        assert_eq!(r.micro.precision, 1.0);
        assert_eq!(r.micro.recall, 0.5);
        assert!((r.micro.f1 - 2.0 / 3.0).abs() < 1e-12);
        let r = exact_match_f1(&BTreeSet::new(), &gold);
        assert_eq!(
            (r.micro.precision, r.micro.recall, r.micro.f1),
            (0.0, 0.0, 0.0)
        );
        assert_eq!(r.micro.false_negatives, 2);
    }

    #[test]
    fn error_taxonomy() {
        let gold: BTreeSet<_> = [m("d", 1, 2, "DNA")].into();
        let fp = [m("d", 1, 2, "Protein"), m("d", 3, 3, "Protein")];
        let b = classify_errors(&fp, &gold);
        assert_eq!(
            b,
            ErrorBreakdown {
                category_errors: 1,
                span_errors: 1
            }
        );
    }

    #[test]
    fn bleu_worked_examples() {
        let r = vec![toks("renal failure")];
        assert_eq!(bleu2(&toks("renal failure"), &r), 1.0);
        assert_eq!(bleu2(&toks("pain failure"), &r), 0.0);
        assert!((bleu2(&toks("renal"), &r) - (-1.0f64).exp()).abs() < 1e-9);
        assert_eq!(bleu2::<String>(&[], &r), 0.0);
    }
}
