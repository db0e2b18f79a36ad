//! Phoneme inventory, lexicon-based grapheme-to-phoneme conversion and
//! phoneme-level distances.

mod distance;
mod lexicon;
mod sequence;
mod vocab;

pub use distance::{cer, levenshtein, phoneme_edit_distance, sequence_distance};
pub use lexicon::{grapheme_to_phoneme, normalize_words, Lexicon, OovPolicy};
pub use sequence::PhonemeSequence;
pub use vocab::{PhonemeId, PhonemeVocabulary, BLANK_ID, NUM_CLASSES, VOCAB_SIZE};
