//! Byte vocabulary shared by string encoders and decoders.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ordered list of bytes observed in the training corpus plus one
/// end-of-string token (the last id). Unknown bytes at evaluation time
/// are an error, never a silent substitution.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    bytes: Vec<u8>,
    #[serde(skip)]
    index: Vec<Option<u16>>,
}

impl Vocab {
    /// Builds a vocabulary from the byte content of training strings.
    pub fn build<'a>(strings: impl Iterator<Item = &'a str>) -> Vocab {
        let mut seen = [false; 256];
        for s in strings {
            for &b in s.as_bytes() {
                seen[b as usize] = true;
            }
        }
        let bytes: Vec<u8> = (0..=255u8).filter(|&b| seen[b as usize]).collect();
        Vocab::from_bytes(bytes)
    }

    pub fn from_bytes(bytes: Vec<u8>) -> Vocab {
        let mut index = vec![None; 256];
        for (i, &b) in bytes.iter().enumerate() {
            index[b as usize] = Some(i as u16);
        }
        Vocab { bytes, index }
    }

    /// Rebuilds the lookup index after deserialization.
    pub fn rebuild_index(&mut self) {
        *self = Vocab::from_bytes(self.bytes.clone());
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }

    /// Token count including the end-of-string token.
    pub fn size(&self) -> usize {
        self.bytes.len() + 1
    }

    /// End-of-string token id.
    pub fn eos(&self) -> usize {
        self.bytes.len()
    }

    /// Token ids of a string's bytes, excluding the end-of-string token.
    pub fn encode(&self, s: &str, field: &str) -> Result<Vec<usize>> {
        s.as_bytes()
            .iter()
            .map(|&b| {
                self.index[b as usize]
                    .map(|i| i as usize)
                    .ok_or(Error::OutOfVocabulary {
                        byte: b,
                        field: field.to_string(),
                    })
            })
            .collect()
    }

    /// String for a sequence of non-EOS token ids.
    pub fn decode(&self, ids: &[usize]) -> String {
        let bytes: Vec<u8> = ids.iter().map(|&i| self.bytes[i]).collect();
        String::from_utf8_lossy(&bytes).into_owned()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn build_encode_decode() {
        let corpus = ["MAIN ST", "05641"];
        let vocab = Vocab::build(corpus.iter().copied());
        // distinct bytes: '0','1','4','5','6',' ','A','I','M','N','S','T'
        assert_eq!(vocab.size(), 13);
        assert_eq!(vocab.eos(), 12);
        let ids = vocab.encode("MAIN ST", "street").unwrap();
        assert_eq!(ids.len(), 7);
        assert_eq!(vocab.decode(&ids), "MAIN ST");
    }

    #[test]
    fn bytes_are_ordered() {
        let vocab = Vocab::build(["ba"].iter().copied());
        assert_eq!(vocab.bytes(), b"ab");
    }

    #[test]
    fn out_of_vocabulary_is_an_error() {
        let vocab = Vocab::build(["ABC"].iter().copied());
        match vocab.encode("ABD", "street") {
            Err(Error::OutOfVocabulary { byte, field }) => {
                assert_eq!(byte, b'D');
                assert_eq!(field, "street");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_string_encodes_to_empty_ids() {
        let vocab = Vocab::build(["x"].iter().copied());
        assert_eq!(vocab.encode("", "unit").unwrap(), Vec::<usize>::new());
    }
}
