//! Deterministic word-level tokenizer.
//!
//! Text is lowercased and split on anything that is not `[a-z0-9]`;
//! angle-bracketed names like `<grp_alpha>` are kept as single marker
//! tokens. Ids 0..=3 are reserved; marker tokens follow, then words,
//! both in sorted order so the same corpus always yields the same vocab.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const UNK: u32 = 3;

const RESERVED: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<unk>"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    token_to_id: BTreeMap<String, u32>,
    id_to_token: Vec<String>,
    markers: Vec<u32>,
}

/// Split text into word and marker tokens.
pub fn tokenize_words(text: &str) -> Vec<String> {
    let lower = text.to_lowercase();
    let bytes = lower.as_bytes();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c == '<' {
            // try to read a marker token `<name>`
            if let Some(end) = lower[i + 1..].find('>') {
                let inner = &lower[i + 1..i + 1 + end];
                if !inner.is_empty()
                    && inner.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'_')
                {
                    tokens.push(format!("<{inner}>"));
                    i += end + 2;
                    continue;
                }
            }
            i += 1;
        } else if c.is_ascii_alphanumeric() {
            let start = i;
            while i < bytes.len() && (bytes[i] as char).is_ascii_alphanumeric() {
                i += 1;
            }
            tokens.push(lower[start..i].to_string());
        } else {
            i += c.len_utf8();
        }
    }
    tokens
}

fn is_marker(token: &str) -> bool {
    token.starts_with('<') && token.ends_with('>') && !RESERVED.contains(&token)
}

/// Build a vocabulary from a corpus of sentences.
pub fn build_tokenizer<S: AsRef<str>>(corpus: &[S]) -> Result<Vocab> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut markers = std::collections::BTreeSet::new();
    let mut words = std::collections::BTreeSet::new();
    for sentence in corpus {
        for token in tokenize_words(sentence.as_ref()) {
            if is_marker(&token) {
                markers.insert(token);
            } else {
                words.insert(token);
            }
        }
    }
    let mut id_to_token: Vec<String> = RESERVED.iter().map(|s| (*s).to_string()).collect();
    let marker_ids: Vec<u32> = markers
        .iter()
        .enumerate()
        .map(|(i, _)| (RESERVED.len() + i) as u32)
        .collect();
    id_to_token.extend(markers);
    id_to_token.extend(words);
    let token_to_id = id_to_token
        .iter()
        .enumerate()
        .map(|(i, t)| (t.clone(), i as u32))
        .collect();
    Ok(Vocab {
        token_to_id,
        id_to_token,
        markers: marker_ids,
    })
}

impl Vocab {
    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_token.is_empty()
    }

    pub fn id_of(&self, token: &str) -> Option<u32> {
        self.token_to_id.get(token).copied()
    }

    pub fn token_of(&self, id: u32) -> Option<&str> {
        self.id_to_token.get(id as usize).map(String::as_str)
    }

    /// Ids of the marker tokens, in sorted token order.
    pub fn marker_ids(&self) -> &[u32] {
        &self.markers
    }

    /// Encode text; unknown words map to `<unk>`.
    pub fn encode(&self, text: &str) -> Vec<u32> {
        tokenize_words(text)
            .iter()
            .map(|t| self.id_of(t).unwrap_or(UNK))
            .collect()
    }

    /// Encode and append `<eos>`, the form used for training sentences.
    pub fn encode_with_eos(&self, text: &str) -> Vec<u32> {
        let mut ids = self.encode(text);
        ids.push(EOS);
        ids
    }

    /// Decode ids to space-joined tokens, skipping control tokens.
    pub fn decode(&self, ids: &[u32]) -> String {
        ids.iter()
            .filter(|id| ![PAD, BOS, EOS].contains(id))
            .filter_map(|id| self.token_of(*id))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Serialize as a `{token: id}` JSON map. `BTreeMap` keeps the bytes
    /// stable for identical vocabularies.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.token_to_id)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let token_to_id: BTreeMap<String, u32> = serde_json::from_str(&text)?;
        let mut id_to_token = vec![String::new(); token_to_id.len()];
        for (token, id) in &token_to_id {
            let slot = id_to_token
                .get_mut(*id as usize)
                .ok_or_else(|| Error::InvalidConfig(format!("vocab id {id} out of range")))?;
            *slot = token.clone();
        }
        let markers = id_to_token
            .iter()
            .enumerate()
            .filter(|(_, t)| is_marker(t))
            .map(|(i, _)| i as u32)
            .collect();
        Ok(Self {
            token_to_id,
            id_to_token,
            markers,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builds_words_plus_reserved() {
        let vocab = build_tokenizer(&["a tall person"]).unwrap();
        assert!(vocab.id_of("a").is_some());
        assert!(vocab.id_of("tall").is_some());
        assert!(vocab.id_of("person").is_some());
        assert_eq!(vocab.len(), 4 + 3);
        assert_eq!(vocab.id_of("<unk>"), Some(UNK));
    }

    #[test]
    fn empty_corpus_is_rejected() {
        let corpus: Vec<String> = vec![];
        assert!(matches!(build_tokenizer(&corpus), Err(Error::EmptyCorpus)));
    }

    #[test]
    fn same_corpus_gives_identical_serialization() {
        let corpus = ["<grp_a> a tall person.", "the person, again!"];
        let a = build_tokenizer(&corpus).unwrap().to_json().unwrap();
        let b = build_tokenizer(&corpus).unwrap().to_json().unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn markers_sit_right_after_reserved_ids() {
        let vocab = build_tokenizer(&["<grp_b> word <grp_a> word"]).unwrap();
        assert_eq!(vocab.id_of("<grp_a>"), Some(4));
        assert_eq!(vocab.id_of("<grp_b>"), Some(5));
        assert_eq!(vocab.marker_ids(), &[4, 5]);
    }

    #[test]
    fn punctuation_separates_words() {
        assert_eq!(
            tokenize_words("A tall-ish, person!"),
            vec!["a", "tall", "ish", "person"]
        );
        assert_eq!(tokenize_words("<grp_a> Hi"), vec!["<grp_a>", "hi"]);
        // stray angle bracket is not a marker
        assert_eq!(tokenize_words("a < b"), vec!["a", "b"]);
    }

    #[test]
    fn encode_maps_unknown_to_unk() {
        let vocab = build_tokenizer(&["known words"]).unwrap();
        let ids = vocab.encode("known mystery");
        assert_eq!(ids[1], UNK);
        assert_eq!(vocab.decode(&ids), "known <unk>");
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.json");
        let vocab = build_tokenizer(&["<grp_a> tall person"]).unwrap();
        vocab.save(&path).unwrap();
        let back = Vocab::load(&path).unwrap();
        assert_eq!(back, vocab);
        assert_eq!(back.marker_ids(), vocab.marker_ids());
    }
}
