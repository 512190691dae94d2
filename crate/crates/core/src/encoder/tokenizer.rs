use serde::{Deserialize, Serialize};

use super::VocabSpec;
use crate::textprep::CleanText;

pub const START_TOKEN: u32 = 0;

/// Token ids of one post, always starting with [`START_TOKEN`].
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenSequence {
    pub token_ids: Vec<u32>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }
}

/// FNV-1a over the UTF-8 bytes, folded into `1..buckets`.
pub fn bucket_of(token: &str, vocab: &VocabSpec) -> u32 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in token.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    1 + (h % (vocab.buckets as u64 - 1)) as u32
}

/// Whitespace tokenization with a start token, keeping the leftmost
/// `max_length` ids.
pub fn tokenize_truncate(text: &CleanText, max_length: usize, vocab: &VocabSpec) -> TokenSequence {
    debug_assert!(max_length >= 1);
    let max_length = max_length.max(1);
    let token_ids = std::iter::once(START_TOKEN)
        .chain(text.as_str().split_whitespace().map(|t| bucket_of(t, vocab)))
        .take(max_length)
        .collect();
    TokenSequence { token_ids }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textprep::clean_text;

    fn words(n: usize) -> CleanText {
        let s: Vec<String> = (0..n).map(|i| format!("शब्द{i}")).collect();
        clean_text(&s.join(" "))
    }

    #[test]
    fn no_truncation_below_limit() {
        let t = tokenize_truncate(&words(50), 200, &VocabSpec::default());
        assert_eq!(t.len(), 51);
        assert_eq!(t.token_ids[0], START_TOKEN);
    }

    #[test]
    fn truncates_to_exact_limit_keeping_prefix() {
        let vocab = VocabSpec::default();
        let long = tokenize_truncate(&words(400), 200, &vocab);
        assert_eq!(long.len(), 200);
        let short = tokenize_truncate(&words(199), 200, &vocab);
        assert_eq!(long.token_ids, short.token_ids);
    }

    #[test]
    fn empty_text_is_start_only() {
        let t = tokenize_truncate(&clean_text(""), 200, &VocabSpec::default());
        assert_eq!(t.token_ids, vec![START_TOKEN]);
    }

    #[test]
    fn buckets_in_range_and_stable() {
        let vocab = VocabSpec { buckets: 16 };
        for w in ["a", "भारत", "http", "?"] {
            let b = bucket_of(w, &vocab);
            assert!((1..16).contains(&b));
            assert_eq!(b, bucket_of(w, &vocab));
        }
    }
}
