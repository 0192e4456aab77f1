//! Character vocabulary with reserved control symbols.

use std::collections::HashMap;

use crate::error::{Error, Result};

pub const BLANK: usize = 0;
pub const SOS: usize = 1;
pub const EOS: usize = 2;
pub const RESERVED: usize = 3;

#[derive(Debug, Clone)]
pub struct Vocab {
    chars: Vec<char>,
    index: HashMap<char, usize>,
}

impl Vocab {
    pub fn from_chars(chars: impl IntoIterator<Item = char>) -> Self {
        let mut seen = Vec::new();
        for c in chars {
            if !seen.contains(&c) {
                seen.push(c);
            }
        }
        seen.sort_unstable();
        let index = seen
            .iter()
            .enumerate()
            .map(|(i, &c)| (c, RESERVED + i))
            .collect();
        Vocab { chars: seen, index }
    }

    /// Total symbol count including blank/SOS/EOS.
    pub fn size(&self) -> usize {
        RESERVED + self.chars.len()
    }

    pub fn payload_size(&self) -> usize {
        self.chars.len()
    }

    pub fn is_payload(&self, id: usize) -> bool {
        id >= RESERVED && id < self.size()
    }

    pub fn tokenize(&self, text: &str) -> Result<Vec<usize>> {
        text.chars()
            .map(|c| {
                self.index.get(&c).copied().ok_or_else(|| {
                    Error::invalid(format!("character {c:?} not in vocabulary"))
                })
            })
            .collect()
    }

    pub fn detokenize(&self, ids: &[usize]) -> Result<String> {
        ids.iter()
            .map(|&id| {
                if self.is_payload(id) {
                    Ok(self.chars[id - RESERVED])
                } else {
                    Err(Error::invalid(format!("id {id} is reserved or out of range")))
                }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_identity() {
        let v = Vocab::from_chars("abc d".chars());
        let ids = v.tokenize("cab d").unwrap();
        assert_eq!(v.detokenize(&ids).unwrap(), "cab d");
        assert!(ids.iter().all(|&i| v.is_payload(i)));
    }

    #[test]
    fn empty_string_is_empty_sequence() {
        let v = Vocab::from_chars("ab".chars());
        assert_eq!(v.tokenize("").unwrap(), Vec::<usize>::new());
    }

    #[test]
    fn out_of_vocabulary_is_error() {
        let v = Vocab::from_chars("ab".chars());
        assert!(v.tokenize("abz").is_err());
        assert!(v.detokenize(&[BLANK]).is_err());
    }
}
