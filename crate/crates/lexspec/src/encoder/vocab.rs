//! Subword vocabulary with greedy longest-match tokenization.
//!
//! Ids 0..=2 are reserved for `[SPEC1]` (sequence start), `[SPEC2]`
//! (separator/end) and `[UNK]`; file tokens follow in line order.
//! Continuation pieces are stored with a `##` prefix, e.g. `##ing`.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::EncoderError;

pub const SPEC1_ID: usize = 0;
pub const SPEC2_ID: usize = 1;
pub const UNK_ID: usize = 2;

const RESERVED: [&str; 3] = ["[SPEC1]", "[SPEC2]", "[UNK]"];

#[derive(Debug, Clone)]
pub struct SubwordVocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, usize>,
}

impl SubwordVocabulary {
    /// Build from the non-reserved token list; reserved tokens are prepended
    /// automatically. Rejects duplicates, reserved names, empty tokens and
    /// tokens containing whitespace.
    pub fn new(file_tokens: Vec<String>) -> Result<SubwordVocabulary, EncoderError> {
        let mut tokens: Vec<String> = RESERVED.iter().map(|t| t.to_string()).collect();
        tokens.extend(file_tokens);
        let mut ids = HashMap::with_capacity(tokens.len());
        for (id, token) in tokens.iter().enumerate() {
            if id >= RESERVED.len() {
                if token.is_empty() || token.chars().any(char::is_whitespace) {
                    return Err(EncoderError::InvalidToken {
                        token: token.clone(),
                    });
                }
                if RESERVED.contains(&token.as_str()) {
                    return Err(EncoderError::ReservedToken {
                        token: token.clone(),
                    });
                }
            }
            if ids.insert(token.clone(), id).is_some() {
                return Err(EncoderError::DuplicateToken {
                    token: token.clone(),
                });
            }
        }
        Ok(SubwordVocabulary { tokens, ids })
    }

    /// Load a vocabulary file: one token per line, line order fixes the id
    /// after the three reserved slots.
    pub fn from_file(path: &Path) -> Result<SubwordVocabulary, EncoderError> {
        let file = std::fs::File::open(path).map_err(EncoderError::io(path))?;
        let mut tokens = Vec::new();
        for line in BufReader::new(file).lines() {
            let line = line.map_err(EncoderError::io(path))?;
            if !line.trim().is_empty() {
                tokens.push(line.trim().to_string());
            }
        }
        SubwordVocabulary::new(tokens)
    }

    /// Write the non-reserved tokens, one per line, in id order.
    pub fn save(&self, path: &Path) -> Result<(), EncoderError> {
        let file = std::fs::File::create(path).map_err(EncoderError::io(path))?;
        let mut w = BufWriter::new(file);
        for token in &self.tokens[RESERVED.len()..] {
            writeln!(w, "{}", token).map_err(EncoderError::io(path))?;
        }
        w.flush().map_err(EncoderError::io(path))
    }

    /// Total token count, reserved slots included (never below 3).
    #[allow(clippy::len_without_is_empty)]
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn id_of(&self, token: &str) -> Option<usize> {
        self.ids.get(token).copied()
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    /// Greedy longest-match tokenization of a single whitespace-free word.
    /// The first piece matches a plain token, later pieces match `##`-prefixed
    /// tokens; any position with no match collapses the whole word to `[UNK]`.
    pub fn tokenize_word(&self, word: &str) -> Result<Vec<usize>, EncoderError> {
        if word.is_empty() {
            return Err(EncoderError::InvalidWord {
                word: word.to_string(),
                reason: "empty".to_string(),
            });
        }
        if word.chars().any(char::is_whitespace) {
            return Err(EncoderError::InvalidWord {
                word: word.to_string(),
                reason: "contains whitespace".to_string(),
            });
        }
        let chars: Vec<char> = word.chars().collect();
        let mut pieces = Vec::new();
        let mut pos = 0;
        while pos < chars.len() {
            let mut matched = None;
            for end in (pos + 1..=chars.len()).rev() {
                let piece: String = chars[pos..end].iter().collect();
                let candidate = if pos == 0 {
                    piece
                } else {
                    format!("##{piece}")
                };
                if let Some(&id) = self.ids.get(&candidate) {
                    matched = Some((id, end));
                    break;
                }
            }
            match matched {
                Some((id, end)) => {
                    pieces.push(id);
                    pos = end;
                }
                None => return Ok(vec![UNK_ID]),
            }
        }
        Ok(pieces)
    }

    /// Tokenize running text: split on whitespace, tokenize each piece as a
    /// word, concatenate. Empty text yields no tokens.
    pub fn tokenize_text(&self, text: &str) -> Vec<usize> {
        let mut out = Vec::new();
        for piece in text.split_whitespace() {
            out.extend(
                self.tokenize_word(piece)
                    .expect("whitespace-split pieces are non-empty and whitespace-free"),
            );
        }
        out
    }
}
