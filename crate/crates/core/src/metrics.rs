//! Corpus-level BLEU-1..4 and ROUGE-L.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokenizer::Tokenizer;

pub const DEFAULT_ROUGE_BETA: f64 = 1.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// BLEU-n for n in 1..=4, scaled to [0, 100].
    pub bleu: BTreeMap<usize, f64>,
    pub rouge_l: f64,
    /// Mean LCS recall, scaled to [0, 100].
    pub rouge_l_recall: f64,
    pub n_sentences: usize,
}

impl EvalReport {
    pub fn bleu_n(&self, n: usize) -> f64 {
        self.bleu.get(&n).copied().unwrap_or(0.0)
    }
}

fn check_pair_lists<T>(candidates: &[T], references: &[T]) -> Result<()> {
    if candidates.len() != references.len() {
        return Err(Error::Contract(format!(
            "{} candidates for {} references",
            candidates.len(),
            references.len()
        )));
    }
    if candidates.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    Ok(())
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Corpus totals of clipped n-gram matches and candidate n-grams.
pub fn modified_precision(candidates: &[Vec<String>], references: &[Vec<String>], n: usize) -> (usize, usize) {
    let mut matched = 0;
    let mut total = 0;
    for (c, r) in candidates.iter().zip(references) {
        let cc = ngram_counts(c, n);
        let rc = ngram_counts(r, n);
        for (gram, count) in cc {
            matched += count.min(rc.get(gram).copied().unwrap_or(0));
            total += count;
        }
    }
    (matched, total)
}

/// Unsmoothed corpus BLEU-1..=`max_n`, each scaled ×100.
pub fn bleu(candidates: &[Vec<String>], references: &[Vec<String>], max_n: usize) -> Result<BTreeMap<usize, f64>> {
    check_pair_lists(candidates, references)?;
    if !(1..=4).contains(&max_n) {
        return Err(Error::Config(format!("BLEU order must be in 1..=4, got {max_n}")));
    }
    let c: usize = candidates.iter().map(Vec::len).sum();
    let r: usize = references.iter().map(Vec::len).sum();
    let bp = if c == 0 {
        0.0
    } else if c > r {
        1.0
    } else {
        (1.0 - r as f64 / c as f64).exp()
    };
    let mut log_sum = 0.0;
    let mut zeroed = false;
    let mut scores = BTreeMap::new();
    for n in 1..=max_n {
        let (m, t) = modified_precision(candidates, references, n);
        if m == 0 || t == 0 {
            zeroed = true;
        } else {
            log_sum += (m as f64 / t as f64).ln();
        }
        let score = if zeroed || bp == 0.0 {
            0.0
        } else {
            100.0 * bp * (log_sum / n as f64).exp()
        };
        scores.insert(n, score.clamp(0.0, 100.0));
    }
    Ok(scores)
}

pub fn lcs_len(a: &[String], b: &[String]) -> usize {
    let (a, b) = if a.len() < b.len() { (b, a) } else { (a, b) };
    if b.is_empty() {
        return 0;
    }
    // One row plus the diagonal carried in `diag`.
    let mut row = vec![0usize; b.len() + 1];
    for x in a {
        let mut diag = 0;
        for (j, y) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if x == y { diag + 1 } else { up.max(row[j]) };
            diag = up;
        }
    }
    row[b.len()]
}

/// Sentence-level `(F, recall)` from LCS.
pub fn rouge_l_sentence(candidate: &[String], reference: &[String], beta: f64) -> (f64, f64) {
    let lcs = lcs_len(candidate, reference) as f64;
    if lcs == 0.0 {
        return (0.0, 0.0);
    }
    let r = lcs / reference.len() as f64;
    let p = lcs / candidate.len() as f64;
    let b2 = beta * beta;
    ((1.0 + b2) * r * p / (r + b2 * p), r)
}

/// Sentence-mean LCS F-measure, scaled ×100.
pub fn rouge_l(candidates: &[Vec<String>], references: &[Vec<String>], beta: f64) -> Result<f64> {
    Ok(rouge_l_with_recall(candidates, references, beta)?.0)
}

/// `(F, recall)` sentence means, both scaled ×100.
pub fn rouge_l_with_recall(candidates: &[Vec<String>], references: &[Vec<String>], beta: f64) -> Result<(f64, f64)> {
    check_pair_lists(candidates, references)?;
    if beta.is_nan() || beta <= 0.0 {
        return Err(Error::Config(format!("ROUGE-L beta must be positive, got {beta}")));
    }
    let (f, r) = candidates
        .iter()
        .zip(references)
        .map(|(c, r)| rouge_l_sentence(c, r, beta))
        .fold((0.0, 0.0), |acc, x| (acc.0 + x.0, acc.1 + x.1));
    let n = candidates.len() as f64;
    Ok((100.0 * f / n, 100.0 * r / n))
}

pub fn evaluate_tokens(candidates: &[Vec<String>], references: &[Vec<String>]) -> Result<EvalReport> {
    let bleu = bleu(candidates, references, 4)?;
    let (rouge_l, rouge_l_recall) = rouge_l_with_recall(candidates, references, DEFAULT_ROUGE_BETA)?;
    Ok(EvalReport {
        bleu,
        rouge_l,
        rouge_l_recall,
        n_sentences: candidates.len(),
    })
}

pub fn evaluate_sentences<S: AsRef<str>>(hypotheses: &[S], references: &[S], tokenizer: &dyn Tokenizer) -> Result<EvalReport> {
    let tok = |xs: &[S]| xs.iter().map(|s| tokenizer.tokenize(s.as_ref())).collect::<Vec<_>>();
    evaluate_tokens(&tok(hypotheses), &tok(references))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::{CharTokenizer, WordTokenizer};
    use proptest::prelude::*;

    fn w(s: &str) -> Vec<String> {
        WordTokenizer.tokenize(s)
    }

    #[test]
    fn identity_scores_hundred() {
        let c = vec![w("the cat sat on the mat")];
        let b = bleu(&c, &c, 4).unwrap();
        for n in 1..=4 {
            assert_eq!(b[&n], 100.0);
        }
        assert_eq!(rouge_l(&c, &c, 1.2).unwrap(), 100.0);
    }

    #[test]
    fn clipped_unigram_precision() {
        let (m, t) = modified_precision(&[w("the the the")], &[w("the cat")], 1);
        assert_eq!((m, t), (1, 3));
    }

    #[test]
    fn brevity_penalty_applies() {
        let b = bleu(&[w("the cat sat")], &[w("the cat sat on the mat")], 1).unwrap();
        assert!(b[&1] < 100.0);
        let expected = 100.0 * (1.0f64 - 6.0 / 3.0).exp();
        assert!((b[&1] - expected).abs() < 1e-9);
    }

    #[test]
    fn disjoint_and_empty_candidates_score_zero() {
        let b = bleu(&[w("a b c d")], &[w("e f g h")], 4).unwrap();
        assert!(b.values().all(|v| *v == 0.0));
        let b = bleu(&[vec![]], &[w("e f")], 2).unwrap();
        assert!(b.values().all(|v| *v == 0.0));
        assert_eq!(rouge_l(&[vec![]], &[w("e f")], 1.2).unwrap(), 0.0);
    }

    #[test]
    fn argument_errors() {
        assert!(matches!(bleu(&[], &[], 4), Err(Error::EmptyCorpus)));
        assert!(bleu(&[w("a")], &[], 4).is_err());
        assert!(bleu(&[w("a")], &[w("a")], 5).is_err());
        assert!(matches!(rouge_l(&[], &[], 1.2), Err(Error::EmptyCorpus)));
        assert!(rouge_l(&[w("a")], &[w("a")], 0.0).is_err());
    }

    #[test]
    fn rouge_examples() {
        assert_eq!(lcs_len(&w("the cat"), &w("the cat sat")), 2);
        let (f, r) = rouge_l_sentence(&w("the cat"), &w("the cat sat"), 1.2);
        assert!((r - 2.0 / 3.0).abs() < 1e-12);
        let (rr, p, b2) = (2.0 / 3.0, 1.0, 1.44);
        assert!((f - (1.0 + b2) * rr * p / (rr + b2 * p)).abs() < 1e-12);
        assert_eq!(lcs_len(&w("cat the"), &w("the cat")), 1);
    }

    #[test]
    fn char_level_sentences() {
        let r = evaluate_sentences(&["新年好。"], &["新年好。"], &CharTokenizer).unwrap();
        assert_eq!(r.bleu_n(4), 100.0);
        assert_eq!(r.rouge_l, 100.0);
        assert_eq!(r.n_sentences, 1);
    }

    fn sentence() -> impl Strategy<Value = Vec<String>> {
        prop::collection::vec(prop::sample::select(vec!["a", "b", "c", "d"]).prop_map(String::from), 0..9)
    }

    proptest! {
        #[test]
        fn scores_stay_in_range(pairs in prop::collection::vec((sentence(), sentence()), 1..6)) {
            let (c, r): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
            let rep = evaluate_tokens(&c, &r).unwrap();
            for v in rep.bleu.values() {
                prop_assert!((0.0..=100.0).contains(v));
            }
            prop_assert!((0.0..=100.0).contains(&rep.rouge_l));
        }

        #[test]
        fn bleu_is_order_free(pairs in prop::collection::vec((sentence(), sentence()), 1..6), rot in 0usize..6) {
            let (c, r): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
            let k = rot % c.len();
            let mut c2 = c.clone();
            let mut r2 = r.clone();
            c2.rotate_left(k);
            r2.rotate_left(k);
            c2.reverse();
            r2.reverse();
            prop_assert_eq!(bleu(&c, &r, 4).unwrap(), bleu(&c2, &r2, 4).unwrap());
        }
    }
}
