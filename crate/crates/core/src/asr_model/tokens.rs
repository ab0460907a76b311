use std::fmt;
use std::path::Path;

use crate::error::{Error, Result};

/// Word spelled by each digit token.
pub const DIGIT_WORDS: [&str; 10] = ["zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine"];
pub const EOS_TOKEN: &str = "<eos>";
pub const UNK_TOKEN: &str = "<unk>";

/// Ordered token inventory; the line index in a vocabulary file is the id.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    eos: usize,
    unk: usize,
}

impl Vocabulary {
    /// Ten digit words, `<eos>` (id 10) and `<unk>` (id 11).
    pub fn digits() -> Self {
        let mut tokens: Vec<String> = DIGIT_WORDS.iter().map(|s| s.to_string()).collect();
        tokens.push(EOS_TOKEN.into());
        tokens.push(UNK_TOKEN.into());
        Self::new(tokens).expect("digit vocabulary is well formed")
    }

    pub fn new(tokens: Vec<String>) -> Result<Self> {
        let find = |t: &str| tokens.iter().position(|s| s == t);
        let eos = find(EOS_TOKEN).ok_or_else(|| Error::Config(format!("vocabulary lacks {EOS_TOKEN}")))?;
        let unk = find(UNK_TOKEN).ok_or_else(|| Error::Config(format!("vocabulary lacks {UNK_TOKEN}")))?;
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(Error::Config(format!("vocabulary line {} is not a single token: {t:?}", i + 1)));
            }
            if tokens[..i].contains(t) {
                return Err(Error::Config(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(Self { tokens, eos, unk })
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::new(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::parse(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn to_text(&self) -> String {
        self.tokens.iter().map(|t| format!("{t}\n")).collect()
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn eos(&self) -> usize {
        self.eos
    }

    pub fn unk(&self) -> usize {
        self.unk
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// Unknown words map to `<unk>`.
    pub fn id(&self, word: &str) -> usize {
        self.tokens.iter().position(|t| t == word).unwrap_or(self.unk)
    }

    /// Whitespace-separated words followed by `<eos>`.
    pub fn encode(&self, text: &str) -> TokenSequence {
        let mut ids: Vec<usize> = text.split_whitespace().map(|w| self.id(w)).collect();
        ids.push(self.eos);
        TokenSequence { ids }
    }

    /// Content tokens joined by spaces; `<eos>` is dropped.
    pub fn decode(&self, seq: &TokenSequence) -> String {
        seq.content()
            .iter()
            .map(|&i| self.token(i).unwrap_or(UNK_TOKEN))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Token ids ending with `<eos>`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TokenSequence {
    ids: Vec<usize>,
}

impl TokenSequence {
    /// Checks ids against the vocabulary and that `<eos>` terminates the
    /// sequence and appears nowhere else.
    pub fn new(ids: Vec<usize>, vocab: &Vocabulary) -> Result<Self> {
        if let Some(&id) = ids.iter().find(|&&i| i >= vocab.len()) {
            return Err(Error::Token { id, vocab: vocab.len() });
        }
        match ids.iter().position(|&i| i == vocab.eos()) {
            Some(p) if p + 1 == ids.len() => Ok(Self { ids }),
            _ => Err(Error::Contract(format!("token sequence {ids:?} must end with a single <eos>"))),
        }
    }

    /// Appends `<eos>` to content ids.
    pub fn from_content(content: &[usize], vocab: &Vocabulary) -> Result<Self> {
        let mut ids = content.to_vec();
        ids.push(vocab.eos());
        Self::new(ids, vocab)
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    /// Ids without the terminal `<eos>`.
    pub fn content(&self) -> &[usize] {
        &self.ids[..self.ids.len() - 1]
    }

    /// Length including `<eos>`.
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

impl fmt::Display for TokenSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.ids.iter().map(|i| i.to_string()).collect();
        write!(f, "{}", parts.join(" "))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digit_vocabulary_layout() {
        let v = Vocabulary::digits();
        assert_eq!(v.len(), 12);
        assert_eq!((v.eos(), v.unk()), (10, 11));
        assert_eq!(v.token(3), Some("three"));
        assert_eq!(Vocabulary::parse(&v.to_text()).unwrap(), v);
    }

    #[test]
    fn encode_and_decode() {
        let v = Vocabulary::digits();
        let s = v.encode("one two banana");
        assert_eq!(s.ids(), &[1, 2, 11, 10]);
        assert_eq!(s.content(), &[1, 2, 11]);
        assert_eq!(v.decode(&s), "one two <unk>");
        assert_eq!(v.encode("").ids(), &[10]);
    }

    #[test]
    fn sequence_contract() {
        let v = Vocabulary::digits();
        assert!(TokenSequence::new(vec![1, 2], &v).is_err());
        assert!(TokenSequence::new(vec![10, 1, 10], &v).is_err());
        assert!(matches!(TokenSequence::new(vec![12, 10], &v), Err(Error::Token { id: 12, vocab: 12 })));
        assert_eq!(TokenSequence::from_content(&[4], &v).unwrap().ids(), &[4, 10]);
    }

    #[test]
    fn malformed_vocabularies_are_rejected() {
        assert!(Vocabulary::parse("a\nb\n").is_err());
        assert!(Vocabulary::parse("a\na\n<eos>\n<unk>\n").is_err());
        assert!(Vocabulary::parse("a b\n<eos>\n<unk>\n").is_err());
    }
}
