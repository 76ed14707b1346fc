use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use crate::{Error, Result};

pub const UNK_PIECE: &str = "[UNK]";

/// Piece inventory for greedy longest-match segmentation. Plain text on disk,
/// one piece per line; `[UNK]` is always id 0.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SubwordVocab {
    pieces: Vec<String>,
    index: HashMap<String, usize>,
    max_chars: usize,
}

impl SubwordVocab {
    pub fn new<I, S>(pieces: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut out = Self {
            pieces: Vec::new(),
            index: HashMap::new(),
            max_chars: 1,
        };
        out.add(UNK_PIECE.to_string());
        for p in pieces {
            out.add(p.into());
        }
        out
    }

    fn add(&mut self, piece: String) {
        if piece.is_empty() || self.index.contains_key(&piece) {
            return;
        }
        self.max_chars = self.max_chars.max(piece.chars().count());
        self.index.insert(piece.clone(), self.pieces.len());
        self.pieces.push(piece);
    }

    /// Every character of every word, every whole word, and the extra pieces
    /// (separators and the like), in a deterministic order.
    pub fn build<'a>(words: impl IntoIterator<Item = &'a str>, extra: &[&str]) -> Self {
        let words: BTreeSet<&str> = words.into_iter().collect();
        let chars: BTreeSet<String> = words
            .iter()
            .flat_map(|w| w.chars())
            .map(String::from)
            .collect();
        let mut pieces: Vec<String> = extra.iter().map(|s| s.to_string()).collect();
        pieces.extend(chars);
        pieces.extend(words.into_iter().map(String::from));
        Self::new(pieces)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::new(text.lines().filter(|l| !l.is_empty())))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = self.pieces.join("\n");
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    pub fn pieces(&self) -> &[String] {
        &self.pieces
    }

    pub fn piece(&self, id: usize) -> &str {
        &self.pieces[id]
    }

    pub fn id(&self, piece: &str) -> Option<usize> {
        self.index.get(piece).copied()
    }

    /// Greedy longest-match segmentation. A character with no piece maps to
    /// `[UNK]`; with full character coverage the pieces spell the token.
    pub fn split(&self, token: &str) -> Vec<usize> {
        if let Some(id) = self.id(token) {
            return vec![id];
        }
        let bounds: Vec<usize> = token
            .char_indices()
            .map(|(i, _)| i)
            .chain(std::iter::once(token.len()))
            .collect();
        let mut out = Vec::new();
        let mut at = 0;
        while at + 1 < bounds.len() {
            let longest = (at + 1..bounds.len().min(at + self.max_chars + 1))
                .rev()
                .find_map(|end| self.id(&token[bounds[at]..bounds[end]]).map(|id| (end, id)));
            match longest {
                Some((end, id)) => {
                    out.push(id);
                    at = end;
                }
                None => {
                    out.push(0);
                    at += 1;
                }
            }
        }
        out
    }
}

pub fn subword_split(token: &str, vocab: &SubwordVocab) -> Vec<usize> {
    vocab.split(token)
}
