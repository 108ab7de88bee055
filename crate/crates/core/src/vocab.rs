//! Fixed character-level vocabulary shared by every model and task.
//!
//! Four special tokens come first, then the printable symbols the synthetic
//! task families need. The layout is frozen: checkpoints store raw token ids,
//! so reordering entries would silently corrupt every saved model.

use crate::error::{Error, Result};
use crate::model::TokenId;

/// Sequence start marker, prepended to every prompt before the forward pass.
pub const BOS: TokenId = 0;
/// End of answer; generation stops at the first one.
pub const EOS: TokenId = 1;
/// Separator between segments of a composite context (debate transcripts).
pub const SEP: TokenId = 2;
/// Left-padding for prefixes shorter than the context window.
pub const PAD: TokenId = 3;

/// Printable symbols, in id order starting at id 4: digits, lowercase
/// letters, then the operator characters used by the task prompts.
const SYMBOLS: &[char] = &[
    '0', '1', '2', '3', '4', '5', '6', '7', '8', '9', // 4..14
    'a', 'b', 'c', 'd', 'e', 'f', 'g', 'h', 'i', 'j', 'k', 'l', 'm', // 14..27
    'n', 'o', 'p', 'q', 'r', 's', 't', 'u', 'v', 'w', 'x', 'y', 'z', // 27..40
    '+', '-', '=', ':', // 40..44
];

const NUM_SPECIALS: usize = 4;

/// Total vocabulary size (specials + printable symbols).
pub const SIZE: usize = NUM_SPECIALS + SYMBOLS.len();

/// Display forms for the special tokens, used when decoding sequences that
/// may contain them (debate transcripts, raw samples).
const SPECIAL_NAMES: [&str; NUM_SPECIALS] = ["<bos>", "<eos>", "<sep>", "<pad>"];

/// True for the four reserved control tokens.
pub fn is_special(id: TokenId) -> bool {
    (id as usize) < NUM_SPECIALS
}

/// Token id for a printable character, if it is in the vocabulary.
pub fn char_to_id(c: char) -> Option<TokenId> {
    match c {
        '0'..='9' => Some(NUM_SPECIALS as TokenId + (c as TokenId - '0' as TokenId)),
        'a'..='z' => Some(NUM_SPECIALS as TokenId + 10 + (c as TokenId - 'a' as TokenId)),
        '+' => Some(40),
        '-' => Some(41),
        '=' => Some(42),
        ':' => Some(43),
        _ => None,
    }
}

/// Printable character for a token id; `None` for specials or out-of-range.
pub fn id_to_char(id: TokenId) -> Option<char> {
    let idx = (id as usize).checked_sub(NUM_SPECIALS)?;
    SYMBOLS.get(idx).copied()
}

/// Encodes plain text (no specials) into token ids. Errors on any character
/// outside the vocabulary.
pub fn encode(text: &str) -> Result<Vec<TokenId>> {
    text.chars()
        .map(|c| char_to_id(c).ok_or(Error::UnknownSymbol(c)))
        .collect()
}

/// Decodes token ids back to text. Specials render as `<bos>`-style markers;
/// ids outside the vocabulary are an error.
pub fn decode(tokens: &[TokenId]) -> Result<String> {
    let mut out = String::with_capacity(tokens.len());
    for &id in tokens {
        if let Some(c) = id_to_char(id) {
            out.push(c);
        } else if is_special(id) {
            out.push_str(SPECIAL_NAMES[id as usize]);
        } else {
            return Err(Error::TokenOutOfRange {
                id: u32::from(id),
                size: SIZE,
            });
        }
    }
    Ok(out)
}

/// Errors unless every id is inside the vocabulary.
pub fn check_tokens(tokens: &[TokenId]) -> Result<()> {
    for &id in tokens {
        if (id as usize) >= SIZE {
            return Err(Error::TokenOutOfRange {
                id: u32::from(id),
                size: SIZE,
            });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn specials_occupy_the_first_four_ids() {
        assert_eq!((BOS, EOS, SEP, PAD), (0, 1, 2, 3));
        assert_eq!(SIZE, 44);
        assert!(is_special(PAD));
        assert!(!is_special(4));
    }

    #[test]
    fn known_ids_match_the_frozen_layout() {
        assert_eq!(char_to_id('0'), Some(4));
        assert_eq!(char_to_id('9'), Some(13));
        assert_eq!(char_to_id('a'), Some(14));
        assert_eq!(char_to_id('z'), Some(39));
        assert_eq!(char_to_id('+'), Some(40));
        assert_eq!(char_to_id(':'), Some(43));
        assert_eq!(char_to_id('A'), None);
        assert_eq!(char_to_id(' '), None);
    }

    #[test]
    fn encode_rejects_foreign_characters() {
        assert!(matches!(encode("2+2=?"), Err(Error::UnknownSymbol('?'))));
    }

    #[test]
    fn decode_renders_specials_readably() {
        let s = decode(&[BOS, 4, 40, 5, 42, EOS]).unwrap();
        assert_eq!(s, "<bos>0+1=<eos>");
    }

    #[test]
    fn decode_rejects_out_of_range_ids() {
        assert!(matches!(
            decode(&[SIZE as TokenId]),
            Err(Error::TokenOutOfRange { .. })
        ));
    }

    proptest! {
        /// encode/decode round-trips any text drawn from the vocabulary.
        #[test]
        fn roundtrip(text in "[0-9a-z+=:-]{0,32}") {
            let toks = encode(&text).unwrap();
            prop_assert_eq!(decode(&toks).unwrap(), text);
        }

        /// char_to_id and id_to_char are inverse bijections on symbols.
        #[test]
        fn bijection(id in 4u16..(SIZE as u16)) {
            let c = id_to_char(id).unwrap();
            prop_assert_eq!(char_to_id(c), Some(id));
        }
    }
}
