//! Target-sentence tokenizers.

use serde::{Deserialize, Serialize};

/// Splits a sentence into tokens and joins tokens back into a sentence.
pub trait Tokenizer: Send + Sync {
    fn tokenize(&self, text: &str) -> Vec<String>;
    fn detokenize(&self, tokens: &[String]) -> String;
}

/// Which tokenizer a model or metric uses.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenizerKind {
    /// One token per non-whitespace character (Chinese reference setting).
    #[default]
    Char,
    /// Whitespace-separated words.
    Word,
}

impl TokenizerKind {
    pub fn build(self) -> Box<dyn Tokenizer> {
        match self {
            TokenizerKind::Char => Box::new(CharTokenizer),
            TokenizerKind::Word => Box::new(WordTokenizer),
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct CharTokenizer;

impl Tokenizer for CharTokenizer {
    fn tokenize(&self, text: &str) -> Vec<String> {
        text.chars()
            .filter(|c| !c.is_whitespace())
            .map(String::from)
            .collect()
    }

    fn detokenize(&self, tokens: &[String]) -> String {
        tokens.concat()
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct WordTokenizer;

impl Tokenizer for WordTokenizer {
    fn tokenize(&self, text: &str) -> Vec<String> {
        text.split_whitespace().map(str::to_owned).collect()
    }

    fn detokenize(&self, tokens: &[String]) -> String {
        tokens.join(" ")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn char_level_drops_spaces() {
        let t = CharTokenizer;
        assert_eq!(t.tokenize("新年 好"), ["新", "年", "好"]);
        assert_eq!(t.detokenize(&t.tokenize("新年好。")), "新年好。");
    }

    #[test]
    fn word_level_round_trip() {
        let t = WordTokenizer;
        assert_eq!(t.tokenize(" the  cat sat "), ["the", "cat", "sat"]);
        assert_eq!(t.detokenize(&t.tokenize("the cat")), "the cat");
    }
}
