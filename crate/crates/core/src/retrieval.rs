//! BM25 retrieval over training gloss sequences, and construction of the
//! context-augmented input `G' = {G, (G_s1, Y_s1), …, (G_sK, Y_sK)}`.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::exec::{self, Parallelism};
use crate::tokenizer::Tokenizer;

/// Separator placed before each neighbor's gloss tokens.
pub const CTX_TOKEN: &str = "<ctx>";
/// Separator between a neighbor's gloss tokens and its target tokens.
pub const EQ_TOKEN: &str = "<eq>";

pub const DEFAULT_K1: f64 = 1.2;
pub const DEFAULT_B: f64 = 0.75;

/// Okapi BM25 index with the non-negative (Lucene) IDF.
#[derive(Debug, Clone, PartialEq)]
pub struct Bm25Index {
    doc_tokens: Vec<Vec<String>>,
    doc_ids: Vec<String>,
    term_freqs: Vec<HashMap<String, usize>>,
    df: HashMap<String, usize>,
    avg_len: f64,
    k1: f64,
    b: f64,
}

/// Persisted form; document frequencies are recomputed on load.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IndexFile {
    pub doc_tokens: Vec<Vec<String>>,
    pub doc_ids: Vec<String>,
    pub k1: f64,
    pub b: f64,
}

impl Bm25Index {
    pub fn from_documents(doc_ids: Vec<String>, doc_tokens: Vec<Vec<String>>, k1: f64, b: f64) -> Result<Self> {
        if doc_tokens.is_empty() {
            return Err(Error::EmptyIndex);
        }
        if doc_ids.len() != doc_tokens.len() {
            return Err(Error::Contract(format!(
                "{} ids for {} documents",
                doc_ids.len(),
                doc_tokens.len()
            )));
        }
        if k1.is_nan() || k1 <= 0.0 {
            return Err(Error::Config(format!("BM25 k1 must be positive, got {k1}")));
        }
        if !(0.0..=1.0).contains(&b) {
            return Err(Error::Config(format!("BM25 b must lie in [0, 1], got {b}")));
        }
        let mut df: HashMap<String, usize> = HashMap::new();
        let mut term_freqs = Vec::with_capacity(doc_tokens.len());
        for doc in &doc_tokens {
            let mut tf: HashMap<String, usize> = HashMap::new();
            for t in doc {
                *tf.entry(t.clone()).or_default() += 1;
            }
            for t in tf.keys() {
                *df.entry(t.clone()).or_default() += 1;
            }
            term_freqs.push(tf);
        }
        let total: usize = doc_tokens.iter().map(Vec::len).sum();
        let avg_len = total as f64 / doc_tokens.len() as f64;
        if avg_len <= 0.0 {
            return Err(Error::Contract("all indexed documents are empty".into()));
        }
        Ok(Self {
            doc_tokens,
            doc_ids,
            term_freqs,
            df,
            avg_len,
            k1,
            b,
        })
    }

    pub fn len(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doc_ids.is_empty()
    }

    pub fn avg_len(&self) -> f64 {
        self.avg_len
    }

    pub fn k1(&self) -> f64 {
        self.k1
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn doc_frequency(&self, token: &str) -> usize {
        self.df.get(token).copied().unwrap_or(0)
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn doc_tokens(&self, doc: usize) -> &[String] {
        &self.doc_tokens[doc]
    }

    pub fn position_of(&self, doc_id: &str) -> Option<usize> {
        self.doc_ids.iter().position(|d| d == doc_id)
    }

    /// `ln((N − df + 0.5) / (df + 0.5) + 1)`
    pub fn idf(&self, token: &str) -> f64 {
        let n = self.len() as f64;
        let df = self.doc_frequency(token) as f64;
        ((n - df + 0.5) / (df + 0.5) + 1.0).ln()
    }

    /// Sums one term per query token, so repeated query tokens count repeatedly.
    pub fn bm25_score(&self, query: &[String], doc: usize) -> Result<f64> {
        if doc >= self.len() {
            return Err(Error::Range {
                index: doc,
                len: self.len(),
            });
        }
        let tf = &self.term_freqs[doc];
        let len_norm = 1.0 - self.b + self.b * self.doc_tokens[doc].len() as f64 / self.avg_len;
        Ok(query
            .iter()
            .map(|t| {
                let f = tf.get(t).copied().unwrap_or(0) as f64;
                if f == 0.0 {
                    0.0
                } else {
                    self.idf(t) * f * (self.k1 + 1.0) / (f + self.k1 * len_norm)
                }
            })
            .sum())
    }

    pub fn retrieve_top_k(&self, query: &[String], k: usize, exclude_id: Option<&str>) -> Vec<(String, f64)> {
        self.retrieve_top_k_with(query, k, exclude_id, Parallelism::Sequential)
    }

    /// Top-`k` documents by descending score, ties by ascending id. Zero-score
    /// documents stay eligible.
    pub fn retrieve_top_k_with(
        &self,
        query: &[String],
        k: usize,
        exclude_id: Option<&str>,
        mode: Parallelism,
    ) -> Vec<(String, f64)> {
        if k == 0 {
            return Vec::new();
        }
        let docs: Vec<usize> = (0..self.len())
            .filter(|&d| exclude_id != Some(self.doc_ids[d].as_str()))
            .collect();
        let scores = exec::map(mode, &docs, |&d| self.bm25_score(query, d).expect("doc in range"));
        let mut ranked: Vec<(usize, f64)> = docs.into_iter().zip(scores).collect();
        ranked.sort_by(|a, b| rank_order((&self.doc_ids[a.0], a.1), (&self.doc_ids[b.0], b.1)));
        ranked
            .into_iter()
            .take(k)
            .map(|(d, s)| (self.doc_ids[d].clone(), s))
            .collect()
    }

    pub fn to_file(&self) -> IndexFile {
        IndexFile {
            doc_tokens: self.doc_tokens.clone(),
            doc_ids: self.doc_ids.clone(),
            k1: self.k1,
            b: self.b,
        }
    }

    pub fn from_file(file: IndexFile) -> Result<Self> {
        Self::from_documents(file.doc_ids, file.doc_tokens, file.k1, file.b)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(&self.to_file())?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_file(serde_json::from_str(&text)?)
    }
}

/// Descending score, then ascending document id.
pub fn rank_order(a: (&str, f64), b: (&str, f64)) -> Ordering {
    b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then_with(|| a.0.cmp(b.0))
}

pub fn build_index(corpus: &Corpus, k1: f64, b: f64) -> Result<Bm25Index> {
    if corpus.is_empty() {
        return Err(Error::EmptyIndex);
    }
    let ids = corpus.iter().map(|s| s.sample_id.clone()).collect();
    let docs = corpus.iter().map(|s| s.gloss.clone()).collect();
    Bm25Index::from_documents(ids, docs, k1, b)
}

/// One retrieved neighbor: its gloss tokens and its gold sentence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub doc_id: String,
    pub gloss: Vec<String>,
    pub target: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextInput {
    pub query_gloss: Vec<String>,
    pub neighbors: Vec<Neighbor>,
    pub serialized: Vec<String>,
}

impl ContextInput {
    /// `U`, the number of serialized tokens.
    pub fn len(&self) -> usize {
        self.serialized.len()
    }

    pub fn is_empty(&self) -> bool {
        self.serialized.is_empty()
    }
}

/// Lays out `query, (<ctx> gloss_k <eq> target_k)*` in rank order. Neighbor
/// targets are split by `tokenizer`.
pub fn build_context_input(
    query: &[String],
    retrieved: Vec<Neighbor>,
    k: usize,
    tokenizer: &dyn Tokenizer,
) -> Result<ContextInput> {
    if retrieved.len() > k {
        return Err(Error::Contract(format!(
            "{} neighbors supplied for K = {k}",
            retrieved.len()
        )));
    }
    let mut serialized = query.to_vec();
    for n in &retrieved {
        serialized.push(CTX_TOKEN.to_owned());
        serialized.extend(n.gloss.iter().cloned());
        serialized.push(EQ_TOKEN.to_owned());
        serialized.extend(tokenizer.tokenize(&n.target));
    }
    Ok(ContextInput {
        query_gloss: query.to_vec(),
        neighbors: retrieved,
        serialized,
    })
}

/// One neighbor's gloss tokens and target tokens.
pub type GlossTargetPair = (Vec<String>, Vec<String>);

/// Splits a serialized context back into the query and `(gloss, target
/// tokens)` per neighbor.
pub fn parse_serialized(serialized: &[String]) -> (Vec<String>, Vec<GlossTargetPair>) {
    let mut parts = serialized.split(|t| t == CTX_TOKEN);
    let query = parts.next().unwrap_or_default().to_vec();
    let neighbors = parts
        .map(|chunk| match chunk.iter().position(|t| t == EQ_TOKEN) {
            Some(p) => (chunk[..p].to_vec(), chunk[p + 1..].to_vec()),
            None => (chunk.to_vec(), Vec::new()),
        })
        .collect();
    (query, neighbors)
}

/// BM25 index plus the gold sentences needed to assemble neighbors.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalMemory {
    pub index: Bm25Index,
    pub targets: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MemoryFile {
    pub index: IndexFile,
    pub targets: Vec<String>,
}

impl RetrievalMemory {
    pub fn from_corpus(corpus: &Corpus, k1: f64, b: f64) -> Result<Self> {
        Ok(Self {
            index: build_index(corpus, k1, b)?,
            targets: corpus.iter().map(|s| s.target.clone()).collect(),
        })
    }

    pub fn neighbors(&self, query: &[String], k: usize, exclude_id: Option<&str>) -> Vec<Neighbor> {
        self.index
            .retrieve_top_k(query, k, exclude_id)
            .into_iter()
            .map(|(doc_id, score)| {
                let pos = self.index.position_of(&doc_id).expect("retrieved id is indexed");
                Neighbor {
                    gloss: self.index.doc_tokens(pos).to_vec(),
                    target: self.targets[pos].clone(),
                    doc_id,
                    score,
                }
            })
            .collect()
    }

    /// Id of the first indexed document whose gloss equals `query`.
    pub fn exact_match(&self, query: &[String]) -> Option<&str> {
        (0..self.index.len())
            .find(|&d| self.index.doc_tokens(d) == query)
            .map(|d| self.index.doc_ids()[d].as_str())
    }

    pub fn context_for(
        &self,
        query: &[String],
        k: usize,
        exclude_id: Option<&str>,
        tokenizer: &dyn Tokenizer,
    ) -> ContextInput {
        let neighbors = self.neighbors(query, k, exclude_id);
        build_context_input(query, neighbors, k, tokenizer).expect("at most k neighbors retrieved")
    }

    pub fn to_file(&self) -> MemoryFile {
        MemoryFile {
            index: self.index.to_file(),
            targets: self.targets.clone(),
        }
    }

    pub fn from_file(file: MemoryFile) -> Result<Self> {
        let index = Bm25Index::from_file(file.index)?;
        if index.len() != file.targets.len() {
            return Err(Error::Contract("memory targets do not match indexed documents".into()));
        }
        Ok(Self {
            index,
            targets: file.targets,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::CharTokenizer;
    use proptest::prelude::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_owned).collect()
    }

    fn index(docs: &[&str]) -> Bm25Index {
        let ids = (0..docs.len()).map(|i| format!("d{i:02}")).collect();
        Bm25Index::from_documents(ids, docs.iter().map(|d| toks(d)).collect(), DEFAULT_K1, DEFAULT_B).unwrap()
    }

    #[test]
    fn build_statistics() {
        let idx = index(&["a b", "b c", "c d"]);
        assert_eq!(idx.avg_len(), 2.0);
        assert_eq!(idx.doc_frequency("b"), 2);
        assert_eq!(index(&["x y z"]).avg_len(), 3.0);
        let rep = index(&["a a a b", "a"]);
        assert_eq!(rep.doc_frequency("a"), 2);
    }

    #[test]
    fn build_rejects_bad_inputs() {
        assert!(matches!(
            Bm25Index::from_documents(vec![], vec![], 1.2, 0.75),
            Err(Error::EmptyIndex)
        ));
        let one = || (vec!["a".to_owned()], vec![toks("x")]);
        let (i, d) = one();
        assert!(matches!(Bm25Index::from_documents(i, d, 0.0, 0.5), Err(Error::Config(_))));
        let (i, d) = one();
        assert!(matches!(Bm25Index::from_documents(i, d, 1.0, 1.5), Err(Error::Config(_))));
    }

    #[test]
    fn disjoint_query_scores_zero() {
        let idx = index(&["a b", "c d"]);
        assert_eq!(idx.bm25_score(&toks("x y"), 0).unwrap(), 0.0);
    }

    #[test]
    fn single_document_matches_hand_formula() {
        // N = 1, df = 1 for both terms, len = avg_len = 2, tf = 1.
        let idx = index(&["new age"]);
        let idf = ((1.0f64 - 1.0 + 0.5) / (1.0 + 0.5) + 1.0).ln();
        let term = idf * 1.0 * (1.2 + 1.0) / (1.0 + 1.2 * 1.0);
        let got = idx.bm25_score(&toks("new age"), 0).unwrap();
        assert!((got - 2.0 * term).abs() < 1e-12);
        assert!((got - 0.575_364_144_903_562).abs() < 1e-12);
    }

    #[test]
    fn identical_documents_score_identically() {
        let idx = index(&["a b c", "a b c", "d"]);
        let q = toks("a c");
        assert_eq!(idx.bm25_score(&q, 0).unwrap(), idx.bm25_score(&q, 1).unwrap());
    }

    #[test]
    fn out_of_range_document() {
        let idx = index(&["a"]);
        assert!(matches!(idx.bm25_score(&toks("a"), 1), Err(Error::Range { index: 1, len: 1 })));
    }

    #[test]
    fn retrieval_bounds() {
        let idx = index(&["a b", "a c"]);
        assert!(idx.retrieve_top_k(&toks("a"), 0, None).is_empty());
        let r = idx.retrieve_top_k(&toks("a"), 3, Some("d00"));
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].0, "d01");
    }

    #[test]
    fn ties_break_by_ascending_id() {
        let idx = Bm25Index::from_documents(
            vec!["z".into(), "m".into(), "a".into()],
            vec![toks("q"), toks("q"), toks("q")],
            1.2,
            0.75,
        )
        .unwrap();
        let ids: Vec<_> = idx.retrieve_top_k(&toks("q"), 3, None).into_iter().map(|r| r.0).collect();
        assert_eq!(ids, ["a", "m", "z"]);
    }

    #[test]
    fn parallel_and_sequential_retrieval_agree() {
        let docs: Vec<String> = (0..40).map(|i| format!("t{} t{} t{}", i % 5, i % 7, i % 3)).collect();
        let refs: Vec<&str> = docs.iter().map(String::as_str).collect();
        let idx = index(&refs);
        let q = toks("t1 t2 t3");
        assert_eq!(
            idx.retrieve_top_k_with(&q, 10, None, Parallelism::Parallel),
            idx.retrieve_top_k_with(&q, 10, None, Parallelism::Sequential)
        );
    }

    #[test]
    fn context_serialization_layout() {
        let n = Neighbor {
            doc_id: "x".into(),
            gloss: toks("new age good"),
            target: "新年好".into(),
            score: 1.0,
        };
        let c = build_context_input(&toks("new age"), vec![n], 3, &CharTokenizer).unwrap();
        assert_eq!(
            c.serialized,
            ["new", "age", CTX_TOKEN, "new", "age", "good", EQ_TOKEN, "新", "年", "好"]
        );
        assert_eq!(c.len(), 10);

        let empty = build_context_input(&toks("new age"), vec![], 3, &CharTokenizer).unwrap();
        assert_eq!(empty.serialized, toks("new age"));
    }

    #[test]
    fn neighbor_order_preserved() {
        let mk = |g: &str, t: &str| Neighbor {
            doc_id: g.into(),
            gloss: toks(g),
            target: t.into(),
            score: 0.0,
        };
        let c = build_context_input(&toks("q"), vec![mk("a", "甲"), mk("b", "乙")], 2, &CharTokenizer).unwrap();
        let pa = c.serialized.iter().position(|t| t == "a").unwrap();
        let pb = c.serialized.iter().position(|t| t == "b").unwrap();
        assert!(pa < pb);
        assert!(build_context_input(&toks("q"), vec![mk("a", "甲"), mk("b", "乙")], 1, &CharTokenizer).is_err());
    }

    #[test]
    fn index_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let idx = index(&["a b", "b c c"]);
        let p = dir.path().join("index.json");
        idx.save(&p).unwrap();
        assert_eq!(Bm25Index::load(&p).unwrap(), idx);
        let raw: serde_json::Value = serde_json::from_str(&fs::read_to_string(&p).unwrap()).unwrap();
        let mut keys: Vec<_> = raw.as_object().unwrap().keys().cloned().collect();
        keys.sort();
        assert_eq!(keys, ["b", "doc_ids", "doc_tokens", "k1"]);
    }

    proptest! {
        #[test]
        fn score_monotone_in_tf(extra in 0usize..6, other in 0usize..4) {
            let mut doc = vec!["q".to_owned()];
            doc.extend((0..other).map(|i| format!("o{i}")));
            let mut more = doc.clone();
            more.extend(std::iter::repeat_n("q".to_owned(), extra));
            // Same corpus statistics except the tf (and length) of one doc:
            // compare within a fixed index where only tf differs.
            let idx = Bm25Index::from_documents(
                vec!["lo".into(), "hi".into(), "pad".into()],
                vec![doc.clone(), more.clone(), vec!["z".into()]],
                1.2,
                0.0,
            ).unwrap();
            let q = vec!["q".to_owned()];
            prop_assert!(idx.bm25_score(&q, 1).unwrap() >= idx.bm25_score(&q, 0).unwrap());
        }

        #[test]
        fn empty_neighbors_serialize_to_query(q in prop::collection::vec("[a-z]{1,3}", 1..6)) {
            let c = build_context_input(&q, vec![], 3, &CharTokenizer).unwrap();
            prop_assert_eq!(c.serialized, q);
        }

        #[test]
        fn serialization_round_trip(
            q in prop::collection::vec("[a-z]{1,3}", 1..4),
            ns in prop::collection::vec((prop::collection::vec("[a-z]{1,3}", 1..4), "[一-十]{1,5}"), 0..4),
        ) {
            let neighbors: Vec<Neighbor> = ns.iter().enumerate().map(|(i, (g, t))| Neighbor {
                doc_id: i.to_string(), gloss: g.clone(), target: t.clone(), score: 0.0,
            }).collect();
            let c = build_context_input(&q, neighbors, 4, &CharTokenizer).unwrap();
            let (pq, pn) = parse_serialized(&c.serialized);
            prop_assert_eq!(pq, q);
            prop_assert_eq!(pn.len(), ns.len());
            for ((g, t), (pg, pt)) in ns.iter().zip(pn) {
                prop_assert_eq!(&pg, g);
                prop_assert_eq!(pt.concat(), t.clone());
            }
        }
    }
}
