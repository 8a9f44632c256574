//! Joint text / audio token universe.
//!
//! Text ids live in `[0, text_size)`. Each codebook `j` owns ids in
//! `[0, codebook_sizes[j])`, with its last id reserved as the delay pad.
//! The first output head predicts over a unified vocabulary laid out as
//!
//! ```text
//!   0 .. text_size                        text block
//!   text_size .. text_size + |U^0|        layer-0 audio block
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum VocabError {
    #[error("zero-size vocabulary: {0}")]
    ZeroSize(String),
    #[error("codebook count must be at least 1")]
    NoCodebooks,
    #[error("num_codebooks = {declared} but {listed} codebook sizes were given")]
    CodebookCountMismatch { declared: usize, listed: usize },
    #[error("duplicate reserved id {id} ({first} and {second})")]
    DuplicateReserved {
        id: u32,
        first: &'static str,
        second: &'static str,
    },
    #[error("reserved id {name} = {id} outside vocabulary of size {size}")]
    ReservedOutOfRange {
        name: String,
        id: u32,
        size: u32,
    },
    #[error("id {id} out of range for {vocab} (size {size})")]
    OutOfRange {
        id: u32,
        vocab: String,
        size: u32,
    },
    #[error("audio frame has {got} codebook entries, expected {expected}")]
    FrameArity { got: usize, expected: usize },
    #[error("config: {0}")]
    Config(String),
}

/// How the end of the audio stream is signalled during generation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AudioEosMode {
    /// Head 0 must emit `eos_audio_id` at an audio step.
    #[default]
    Dedicated,
    /// Any text-block id from head 0 at an audio step ends the audio,
    /// provided the text stream has already emitted its EOS.
    Inferred,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoleMarkers {
    pub user: u32,
    pub assistant: u32,
    pub system: u32,
}

/// Vocabulary sizes and reserved ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabSpec {
    pub text_size: u32,
    pub num_codebooks: usize,
    pub codebook_sizes: Vec<u32>,
    /// Pad id per codebook. Conventionally the last id of each codebook.
    pub pad_audio_id: Vec<u32>,
    pub bos_id: u32,
    pub eos_text_id: u32,
    pub eos_audio_id: u32,
    pub role_marker_ids: RoleMarkers,
    #[serde(default)]
    pub audio_eos_mode: AudioEosMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Modality {
    Text,
    Audio,
}

/// One element of a response sequence.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum HybridToken {
    Text(u32),
    /// One id per codebook; entries may be the codebook's pad id.
    AudioFrame(Vec<u32>),
}

impl HybridToken {
    pub fn modality(&self) -> Modality {
        match self {
            HybridToken::Text(_) => Modality::Text,
            HybridToken::AudioFrame(_) => Modality::Audio,
        }
    }

    pub fn is_text(&self) -> bool {
        matches!(self, HybridToken::Text(_))
    }
}

/// A decoded head-0 id.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Head0Token {
    Text(u32),
    Audio0(u32),
}

impl VocabSpec {
    /// Builds a spec with reserved text ids allocated at the top of the text
    /// vocabulary and pads at the top of each codebook.
    pub fn new(text_size: u32, codebook_sizes: Vec<u32>) -> Self {
        let top = |k: u32| text_size.wrapping_sub(k);
        let pad_audio_id = codebook_sizes.iter().map(|&s| s.saturating_sub(1)).collect();
        VocabSpec {
            text_size,
            num_codebooks: codebook_sizes.len(),
            codebook_sizes,
            pad_audio_id,
            bos_id: top(6),
            eos_text_id: top(5),
            eos_audio_id: top(4),
            role_marker_ids: RoleMarkers {
                user: top(3),
                assistant: top(2),
                system: top(1),
            },
            audio_eos_mode: AudioEosMode::Dedicated,
        }
    }

    pub fn uniform(text_size: u32, codebook_size: u32, num_codebooks: usize) -> Self {
        Self::new(text_size, vec![codebook_size; num_codebooks])
    }

    pub fn j(&self) -> usize {
        self.num_codebooks
    }

    pub fn head0_size(&self) -> usize {
        self.text_size as usize + self.codebook_sizes[0] as usize
    }

    pub fn codebook_size(&self, j: usize) -> usize {
        self.codebook_sizes[j] as usize
    }

    pub fn pad(&self, j: usize) -> u32 {
        self.pad_audio_id[j]
    }

    pub fn is_pad(&self, j: usize, id: u32) -> bool {
        self.pad_audio_id[j] == id
    }

    /// Text-side reserved ids with their names, in a fixed order.
    pub fn reserved_text_ids(&self) -> [(&'static str, u32); 6] {
        [
            ("bos_id", self.bos_id),
            ("eos_text_id", self.eos_text_id),
            ("eos_audio_id", self.eos_audio_id),
            ("user marker", self.role_marker_ids.user),
            ("assistant marker", self.role_marker_ids.assistant),
            ("system marker", self.role_marker_ids.system),
        ]
    }

    pub fn is_role_marker(&self, id: u32) -> bool {
        let m = self.role_marker_ids;
        id == m.user || id == m.assistant || id == m.system
    }

    pub fn validate(&self) -> Result<(), VocabError> {
        if self.num_codebooks == 0 || self.codebook_sizes.is_empty() {
            return Err(VocabError::NoCodebooks);
        }
        if self.num_codebooks != self.codebook_sizes.len() {
            return Err(VocabError::CodebookCountMismatch {
                declared: self.num_codebooks,
                listed: self.codebook_sizes.len(),
            });
        }
        if self.text_size == 0 {
            return Err(VocabError::ZeroSize("text_size".into()));
        }
        if let Some(j) = self.codebook_sizes.iter().position(|&s| s == 0) {
            return Err(VocabError::ZeroSize(format!("codebook_sizes[{j}]")));
        }
        if self.pad_audio_id.len() != self.num_codebooks {
            return Err(VocabError::CodebookCountMismatch {
                declared: self.num_codebooks,
                listed: self.pad_audio_id.len(),
            });
        }
        for (j, (&pad, &size)) in self.pad_audio_id.iter().zip(&self.codebook_sizes).enumerate() {
            if pad >= size {
                return Err(VocabError::ReservedOutOfRange {
                    name: format!("pad_audio_id[{j}]"),
                    id: pad,
                    size,
                });
            }
        }
        let reserved = self.reserved_text_ids();
        for (i, &(name, id)) in reserved.iter().enumerate() {
            if id >= self.text_size {
                return Err(VocabError::ReservedOutOfRange {
                    name: name.to_string(),
                    id,
                    size: self.text_size,
                });
            }
            if let Some(&(other, _)) = reserved[..i].iter().find(|(_, o)| *o == id) {
                return Err(VocabError::DuplicateReserved {
                    id,
                    first: other,
                    second: name,
                });
            }
        }
        Ok(())
    }

    /// Checks that a token's ids are inside their vocabularies.
    pub fn check_token(&self, token: &HybridToken) -> Result<(), VocabError> {
        match token {
            HybridToken::Text(id) => self.check_text(*id),
            HybridToken::AudioFrame(ids) => {
                if ids.len() != self.num_codebooks {
                    return Err(VocabError::FrameArity {
                        got: ids.len(),
                        expected: self.num_codebooks,
                    });
                }
                for (j, &id) in ids.iter().enumerate() {
                    self.check_codebook(j, id)?;
                }
                Ok(())
            }
        }
    }

    pub fn check_text(&self, id: u32) -> Result<(), VocabError> {
        if id >= self.text_size {
            return Err(VocabError::OutOfRange {
                id,
                vocab: "text".into(),
                size: self.text_size,
            });
        }
        Ok(())
    }

    pub fn check_codebook(&self, j: usize, id: u32) -> Result<(), VocabError> {
        let size = self.codebook_sizes[j];
        if id >= size {
            return Err(VocabError::OutOfRange {
                id,
                vocab: format!("codebook {j}"),
                size,
            });
        }
        Ok(())
    }

    /// Maps a token to its head-0 id: text ids are kept, audio frames map
    /// their layer-0 id into the block after the text vocabulary.
    pub fn to_unified_head0(&self, token: &HybridToken) -> Result<u32, VocabError> {
        match token {
            HybridToken::Text(id) => {
                self.check_text(*id)?;
                Ok(*id)
            }
            HybridToken::AudioFrame(ids) => {
                let first = *ids.first().ok_or(VocabError::FrameArity {
                    got: 0,
                    expected: self.num_codebooks,
                })?;
                self.audio0_to_unified(first)
            }
        }
    }

    pub fn audio0_to_unified(&self, id: u32) -> Result<u32, VocabError> {
        self.check_codebook(0, id)?;
        Ok(self.text_size + id)
    }

    pub fn from_unified_head0(&self, uid: u32) -> Result<Head0Token, VocabError> {
        if uid < self.text_size {
            Ok(Head0Token::Text(uid))
        } else if (uid as usize) < self.head0_size() {
            Ok(Head0Token::Audio0(uid - self.text_size))
        } else {
            Err(VocabError::OutOfRange {
                id: uid,
                vocab: "unified head 0".into(),
                size: self.head0_size() as u32,
            })
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("vocab spec serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self, VocabError> {
        let spec: VocabSpec = toml::from_str(text).map_err(|e| VocabError::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self, VocabError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| VocabError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(text: u32, audio0: u32) -> VocabSpec {
        let mut s = VocabSpec::uniform(text, 64, 8);
        s.codebook_sizes[0] = audio0;
        s.pad_audio_id[0] = audio0 - 1;
        s
    }

    #[test]
    fn default_layout_is_valid() {
        let s = VocabSpec::uniform(100, 64, 8);
        assert_eq!(s.validate(), Ok(()));
        assert_eq!(s.head0_size(), 164);
        assert_eq!(s.pad(3), 63);
    }

    #[test]
    fn zero_text_vocab_rejected() {
        let mut s = VocabSpec::uniform(100, 64, 8);
        s.text_size = 0;
        assert!(matches!(s.validate(), Err(VocabError::ZeroSize(_))));
        let mut s = VocabSpec::uniform(100, 64, 2);
        s.codebook_sizes[1] = 0;
        assert!(matches!(s.validate(), Err(VocabError::ZeroSize(_))));
    }

    #[test]
    fn duplicate_reserved_rejected() {
        let mut s = VocabSpec::uniform(100, 64, 8);
        s.bos_id = s.eos_text_id;
        assert!(matches!(
            s.validate(),
            Err(VocabError::DuplicateReserved { first: "bos_id", second: "eos_text_id", .. })
        ));
    }

    #[test]
    fn no_codebooks_rejected() {
        let s = VocabSpec::new(100, vec![]);
        assert_eq!(s.validate(), Err(VocabError::NoCodebooks));
    }

    #[test]
    fn tiny_text_vocab_cannot_hold_reserved_ids() {
        assert!(VocabSpec::uniform(4, 8, 1).validate().is_err());
    }

    #[test]
    fn unified_examples() {
        let s = spec(100, 50);
        assert_eq!(s.to_unified_head0(&HybridToken::Text(7)), Ok(7));
        let mut frame = vec![0; 8];
        frame[0] = 3;
        assert_eq!(s.to_unified_head0(&HybridToken::AudioFrame(frame.clone())), Ok(103));
        frame[0] = 50;
        assert!(s.to_unified_head0(&HybridToken::AudioFrame(frame)).is_err());
        assert_eq!(s.from_unified_head0(7), Ok(Head0Token::Text(7)));
        assert_eq!(s.from_unified_head0(103), Ok(Head0Token::Audio0(3)));
        assert!(s.from_unified_head0(150).is_err());
    }

    #[test]
    fn unified_mapping_is_bijective_exhaustive() {
        for text in [6u32, 7, 31, 256] {
            for audio0 in [1u32, 2, 17, 256] {
                let s = spec(text, audio0);
                let mut seen = vec![false; s.head0_size()];
                for id in 0..text {
                    let u = s.to_unified_head0(&HybridToken::Text(id)).unwrap();
                    assert!(!seen[u as usize]);
                    seen[u as usize] = true;
                    assert_eq!(s.from_unified_head0(u), Ok(Head0Token::Text(id)));
                }
                for id in 0..audio0 {
                    let u = s.audio0_to_unified(id).unwrap();
                    assert!(!seen[u as usize]);
                    seen[u as usize] = true;
                    assert_eq!(s.from_unified_head0(u), Ok(Head0Token::Audio0(id)));
                }
                assert!(seen.iter().all(|&b| b));
            }
        }
    }

    #[test]
    fn toml_roundtrip_keeps_field_names() {
        let s = VocabSpec::uniform(100, 64, 8);
        let text = s.to_toml();
        for key in ["text_size", "codebook_sizes", "pad_audio_id", "bos_id", "eos_audio_id"] {
            assert!(text.contains(key), "{key} missing from {text}");
        }
        assert_eq!(VocabSpec::from_toml(&text).unwrap(), s);
    }

    #[test]
    fn frame_arity_checked() {
        let s = VocabSpec::uniform(100, 64, 8);
        assert_eq!(
            s.check_token(&HybridToken::AudioFrame(vec![1, 2])),
            Err(VocabError::FrameArity { got: 2, expected: 8 })
        );
    }
}
