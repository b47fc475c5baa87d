//! Dataset representation, JSONL ingestion, gloss tokenization and
//! punctuation-derived property labels.

use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use log::warn;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features;

pub const DEFAULT_GLOSS_DELIMITER: &str = "/";

/// One-hot pair; index 0 is the positive class.
pub type OneHot = [f64; 2];

pub const POSITIVE: OneHot = [1.0, 0.0];
pub const NEGATIVE: OneHot = [0.0, 1.0];

#[derive(Debug, Clone, PartialEq)]
pub struct SignSample {
    pub sample_id: String,
    /// `N_V × D1` per-frame visual features.
    pub frame_features: Array2<f64>,
    pub gloss: Vec<String>,
    pub target: String,
}

impl SignSample {
    pub fn new(
        sample_id: impl Into<String>,
        frame_features: Array2<f64>,
        gloss: Vec<String>,
        target: impl Into<String>,
    ) -> Result<Self> {
        let sample = Self {
            sample_id: sample_id.into(),
            frame_features,
            gloss,
            target: target.into(),
        };
        if sample.frame_features.nrows() == 0 {
            return Err(Error::Contract(format!("sample {}: no frames", sample.sample_id)));
        }
        if sample.gloss.is_empty() {
            return Err(Error::EmptyGloss);
        }
        if sample.target.is_empty() {
            return Err(Error::Contract(format!("sample {}: empty target", sample.sample_id)));
        }
        Ok(sample)
    }

    pub fn feature_dim(&self) -> usize {
        self.frame_features.ncols()
    }
}

/// Sentence-type and sentence-structure ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PropertyLabels {
    /// `[1,0]` interrogative, `[0,1]` otherwise.
    pub sentence_type: OneHot,
    /// `[1,0]` compound (has a pause), `[0,1]` otherwise.
    pub sentence_structure: OneHot,
}

impl PropertyLabels {
    pub fn from_flags(interrogative: bool, compound: bool) -> Self {
        Self {
            sentence_type: if interrogative { POSITIVE } else { NEGATIVE },
            sentence_structure: if compound { POSITIVE } else { NEGATIVE },
        }
    }

    pub fn type_class(&self) -> usize {
        class_of(&self.sentence_type)
    }

    pub fn structure_class(&self) -> usize {
        class_of(&self.sentence_structure)
    }
}

pub fn class_of(one_hot: &OneHot) -> usize {
    if one_hot[0] >= one_hot[1] {
        0
    } else {
        1
    }
}

/// Which characters count as question marks and pause indicators.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PunctuationRules {
    pub question_marks: Vec<char>,
    pub pause_marks: Vec<char>,
}

impl Default for PunctuationRules {
    fn default() -> Self {
        Self {
            question_marks: vec!['?', '？'],
            pause_marks: vec![',', '，'],
        }
    }
}

impl PunctuationRules {
    /// Also treat the enumeration comma `、` as a pause.
    pub fn with_enumeration_comma(mut self) -> Self {
        if !self.pause_marks.contains(&'、') {
            self.pause_marks.push('、');
        }
        self
    }

    pub fn sentence_type(&self, target: &str) -> OneHot {
        if target.chars().any(|c| self.question_marks.contains(&c)) {
            POSITIVE
        } else {
            NEGATIVE
        }
    }

    pub fn sentence_structure(&self, target: &str) -> OneHot {
        if target.chars().any(|c| self.pause_marks.contains(&c)) {
            POSITIVE
        } else {
            NEGATIVE
        }
    }

    pub fn labels(&self, target: &str) -> PropertyLabels {
        PropertyLabels {
            sentence_type: self.sentence_type(target),
            sentence_structure: self.sentence_structure(target),
        }
    }
}

/// `[1,0]` iff `target` contains `?` or `？`.
pub fn derive_sentence_type(target: &str) -> OneHot {
    PunctuationRules::default().sentence_type(target)
}

/// `[1,0]` iff `target` contains `,` or `，`. The enumeration comma does not count.
pub fn derive_sentence_structure(target: &str) -> OneHot {
    PunctuationRules::default().sentence_structure(target)
}

pub fn tokenize_gloss(raw: &str) -> Result<Vec<String>> {
    tokenize_gloss_with(raw, DEFAULT_GLOSS_DELIMITER)
}

pub fn tokenize_gloss_with(raw: &str, delimiter: &str) -> Result<Vec<String>> {
    let tokens: Vec<String> = raw
        .split(delimiter)
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(str::to_owned)
        .collect();
    if tokens.is_empty() {
        Err(Error::EmptyGloss)
    } else {
        Ok(tokens)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub fn file_stem(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub samples: Vec<SignSample>,
    pub split: Split,
}

impl Corpus {
    pub fn new(samples: Vec<SignSample>, split: Split) -> Result<Self> {
        let mut seen = HashSet::new();
        for s in &samples {
            if !seen.insert(s.sample_id.as_str()) {
                return Err(Error::Contract(format!("duplicate sample id {}", s.sample_id)));
            }
        }
        Ok(Self { samples, split })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, SignSample> {
        self.samples.iter()
    }
}

#[derive(Debug, Clone)]
pub struct LoadOptions {
    /// Reject samples whose feature width differs.
    pub expected_dim: Option<usize>,
    pub gloss_delimiter: String,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            expected_dim: None,
            gloss_delimiter: DEFAULT_GLOSS_DELIMITER.to_owned(),
        }
    }
}

/// On-disk form of one JSONL line.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JsonlRecord {
    pub id: String,
    pub gloss: String,
    pub text: String,
    pub features: FeatureSource,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FeatureSource {
    Path(String),
    Inline(Vec<Vec<f32>>),
}

pub fn load_corpus(path: &Path, split: Split) -> Result<Corpus> {
    load_corpus_with(path, split, &LoadOptions::default())
}

/// Loads a JSONL dataset. Sidecar feature paths resolve relative to the
/// JSONL file's directory. Features are materialized eagerly.
pub fn load_corpus_with(path: &Path, split: Split, options: &LoadOptions) -> Result<Corpus> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut samples = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: JsonlRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let sample = record_to_sample(record, &base, options).map_err(|e| match e {
            Error::EmptyGloss => Error::Parse {
                line: line_no,
                message: "gloss has no tokens".into(),
            },
            other => other,
        })?;
        samples.push(sample);
    }
    if samples.is_empty() {
        warn!("{} contains no samples", path.display());
    }
    Corpus::new(samples, split)
}

fn record_to_sample(record: JsonlRecord, base: &Path, options: &LoadOptions) -> Result<SignSample> {
    let gloss = tokenize_gloss_with(&record.gloss, &options.gloss_delimiter)?;
    let frame_features = match &record.features {
        FeatureSource::Path(p) => {
            let p = PathBuf::from(p);
            let full = if p.is_absolute() { p } else { base.join(p) };
            features::read_feature_file(&full)?
        }
        FeatureSource::Inline(rows) => features::from_rows(rows)?,
    };
    if let Some(expected) = options.expected_dim {
        if frame_features.ncols() != expected {
            return Err(Error::Dimension {
                expected,
                found: frame_features.ncols(),
            });
        }
    }
    SignSample::new(record.id, frame_features, gloss, record.text)
}

/// Writes `samples` as JSONL with inline features (`sidecars = false`) or
/// with one `.vkf` sidecar per sample written next to the JSONL file.
pub fn write_corpus(path: &Path, samples: &[SignSample], sidecars: bool, delimiter: &str) -> Result<()> {
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut out = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for s in samples {
        let features = if sidecars {
            let rel = format!("features/{}.vkf", s.sample_id);
            let full = base.join(&rel);
            if let Some(dir) = full.parent() {
                fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
            features::write_feature_file(&full, &s.frame_features)?;
            FeatureSource::Path(rel)
        } else {
            FeatureSource::Inline(
                s.frame_features
                    .rows()
                    .into_iter()
                    .map(|r| r.iter().map(|&v| v as f32).collect())
                    .collect(),
            )
        };
        let record = JsonlRecord {
            id: s.sample_id.clone(),
            gloss: s.gloss.join(delimiter),
            text: s.target.clone(),
            features,
        };
        serde_json::to_writer(&mut out, &record)?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Write;

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        let mut f = fs::File::create(&p).unwrap();
        f.write_all(body.as_bytes()).unwrap();
        p
    }

    #[test]
    fn sentence_type_examples() {
        assert_eq!(derive_sentence_type("你好吗？"), [1.0, 0.0]);
        assert_eq!(derive_sentence_type("今天天气很好。"), [0.0, 1.0]);
        assert_eq!(derive_sentence_type("Why?"), [1.0, 0.0]);
        // question particle alone does not mark an interrogative
        assert_eq!(derive_sentence_type("你好吗"), [0.0, 1.0]);
    }

    #[test]
    fn sentence_structure_examples() {
        assert_eq!(derive_sentence_structure("我吃了饭，然后睡觉。"), [1.0, 0.0]);
        assert_eq!(derive_sentence_structure("我吃了饭。"), [0.0, 1.0]);
        assert_eq!(derive_sentence_structure("a, b"), [1.0, 0.0]);
        assert_eq!(derive_sentence_structure("苹果、香蕉"), [0.0, 1.0]);
        let rules = PunctuationRules::default().with_enumeration_comma();
        assert_eq!(rules.sentence_structure("苹果、香蕉"), [1.0, 0.0]);
    }

    #[test]
    fn all_label_combinations_reachable() {
        let combos: HashSet<(usize, usize)> = ["a?b,c", "a?", "a,b", "a."]
            .iter()
            .map(|t| {
                let l = PunctuationRules::default().labels(t);
                (l.type_class(), l.structure_class())
            })
            .collect();
        assert_eq!(combos.len(), 4);
    }

    #[test]
    fn gloss_tokenization() {
        assert_eq!(tokenize_gloss("new/age").unwrap(), ["new", "age"]);
        assert_eq!(tokenize_gloss("I").unwrap(), ["I"]);
        assert_eq!(tokenize_gloss("a//b").unwrap(), ["a", "b"]);
        assert_eq!(tokenize_gloss(" a / b ").unwrap(), ["a", "b"]);
        assert!(matches!(tokenize_gloss("//"), Err(Error::EmptyGloss)));
        assert_eq!(tokenize_gloss_with("a b  c", " ").unwrap(), ["a", "b", "c"]);
    }

    proptest! {
        #[test]
        fn join_then_tokenize_is_identity(tokens in prop::collection::vec("[a-z0-9\u{4e00}-\u{4e10}]{1,4}", 1..8)) {
            prop_assert_eq!(tokenize_gloss(&tokens.join("/")).unwrap(), tokens);
        }

        #[test]
        fn question_mark_iff_interrogative(prefix in "[a-z，。 ]{0,6}", q in prop::sample::select(vec!["", "?", "？"]), suffix in "[a-z。]{0,4}") {
            let s = format!("{prefix}{q}{suffix}x");
            let interrogative = derive_sentence_type(&s) == POSITIVE;
            prop_assert_eq!(interrogative, !q.is_empty());
        }
    }

    #[test]
    fn loads_three_inline_lines() {
        let dir = tempfile::tempdir().unwrap();
        let body = r#"{"id":"a","gloss":"new/age","text":"新年好。","features":[[0.5,1.0],[2.0,3.0]]}
{"id":"b","gloss":"I/eat","text":"我吃？","features":[[1.0,1.0]]}

{"id":"c","gloss":"good","text":"好，","features":[[0.0,0.0],[1.0,1.0],[2.0,2.0]]}
"#;
        let p = write(dir.path(), "train.jsonl", body);
        let corpus = load_corpus(&p, Split::Train).unwrap();
        assert_eq!(corpus.len(), 3);
        assert_eq!(corpus.samples[0].gloss, ["new", "age"]);
        assert_eq!(corpus.samples[0].frame_features[[1, 0]], 2.0);
        assert_eq!(corpus.samples[2].frame_features.nrows(), 3);
        let again = load_corpus(&p, Split::Train).unwrap();
        assert_eq!(corpus, again);
    }

    #[test]
    fn empty_file_is_empty_corpus() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "dev.jsonl", "");
        assert!(load_corpus(&p, Split::Dev).unwrap().is_empty());
    }

    #[test]
    fn missing_gloss_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let body = r#"{"id":"a","gloss":"x","text":"y","features":[[0.0]]}
{"id":"b","text":"y","features":[[0.0]]}
"#;
        let p = write(dir.path(), "train.jsonl", body);
        match load_corpus(&p, Split::Train) {
            Err(Error::Parse { line, message }) => {
                assert_eq!(line, 2);
                assert!(message.contains("gloss"), "{message}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "t.jsonl", r#"{"id":"a","gloss":"x","text":"y","features":[[0.0,1.0]]}"#);
        let opts = LoadOptions {
            expected_dim: Some(3),
            ..Default::default()
        };
        assert!(matches!(
            load_corpus_with(&p, Split::Test, &opts),
            Err(Error::Dimension { expected: 3, found: 2 })
        ));
    }

    #[test]
    fn duplicate_ids_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let line = r#"{"id":"a","gloss":"x","text":"y","features":[[0.0]]}"#;
        let p = write(dir.path(), "t.jsonl", &format!("{line}\n{line}\n"));
        assert!(matches!(load_corpus(&p, Split::Test), Err(Error::Contract(_))));
    }

    #[test]
    fn sidecar_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let feats = Array2::from_shape_fn((3, 4), |(r, c)| (r * 4 + c) as f64 * 0.25);
        let s = SignSample::new("s1", feats.clone(), vec!["a".into(), "b".into()], "ab。").unwrap();
        let p = dir.path().join("train.jsonl");
        write_corpus(&p, std::slice::from_ref(&s), true, "/").unwrap();
        let c = load_corpus(&p, Split::Train).unwrap();
        assert_eq!(c.samples[0], s);
    }
}
