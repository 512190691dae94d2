//! Post cleaning: URLs, mentions, hashtags, emoji and punctuation.
//!
//! The steps run in a fixed order:
//!
//! 1. every `http://`, `https://` or `www.` prefixed token becomes `http`;
//! 2. every `@mention` and `#hashtag` becomes one space;
//! 3. emoji, emoticon and flag codepoints are deleted;
//! 4. everything that is not a letter, combining mark, digit, whitespace,
//!    danda (`।`), `.` or `?` is deleted;
//! 5. whitespace runs collapse to one space and the ends are trimmed.
//!
//! URL replacement has to run before step 4, which would otherwise strip the
//! `:` and `/` that identify a URL. Step 4 can still glue a `www.` prefix
//! back together (`ww!w.x`), so the `www.` rule is applied once more at the
//! end; that keeps the function idempotent.

use std::fmt;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

static URL: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)(?:https?://|www\.)\S*").expect("valid regex"));
static MENTION_OR_HASHTAG: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"[@#]\S+").expect("valid regex"));
// Extended_Pictographic covers pictographs and emoticons; the rest are the
// pieces emoji sequences are built from (skin tones, flags, ZWJ, VS16,
// keycap, tag characters). Digits, `#` and `*` carry the Emoji property but
// are deliberately not listed.
static EMOJI: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"[\p{Extended_Pictographic}\p{Emoji_Presentation}\p{Emoji_Modifier}\p{Regional_Indicator}\u{200D}\u{FE0E}\u{FE0F}\u{20E3}\u{E0020}-\u{E007F}]",
    )
    .expect("valid regex")
});
static DISALLOWED: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"[^\p{L}\p{M}\p{N}\s।.?]").expect("valid regex"));
static WHITESPACE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\s+").expect("valid regex"));

/// Replacement token for URLs.
pub const URL_TOKEN: &str = "http";

/// Text that has gone through [`clean_text`].
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CleanText(String);

impl CleanText {
    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn into_string(self) -> String {
        self.0
    }

    /// Wraps text that is already clean. Returns `None` otherwise.
    pub fn from_clean(s: &str) -> Option<Self> {
        let cleaned = clean_text(s);
        (cleaned.0 == s).then_some(cleaned)
    }
}

impl AsRef<str> for CleanText {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for CleanText {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

pub fn clean_text(text: &str) -> CleanText {
    let s = URL.replace_all(text, URL_TOKEN);
    let s = MENTION_OR_HASHTAG.replace_all(&s, " ");
    let s = EMOJI.replace_all(&s, "");
    let s = DISALLOWED.replace_all(&s, "");
    let s = WHITESPACE.replace_all(&s, " ");
    let s = URL.replace_all(s.trim(), URL_TOKEN);
    CleanText(s.into_owned())
}

/// Whether a character may appear in cleaned text.
pub fn is_kept_char(c: char) -> bool {
    static KEPT: LazyLock<Regex> =
        LazyLock::new(|| Regex::new(r"^[\p{L}\p{M}\p{N} ।.?]$").expect("valid regex"));
    let mut buf = [0u8; 4];
    KEPT.is_match(c.encode_utf8(&mut buf))
}

/// Checks every [`CleanText`] invariant, returning the first violation.
pub fn check_clean(s: &str) -> Result<(), String> {
    if URL.is_match(s) {
        return Err(format!("URL left in {s:?}"));
    }
    if s.contains(['@', '#']) {
        return Err(format!("mention/hashtag marker left in {s:?}"));
    }
    if let Some(m) = EMOJI.find(s) {
        return Err(format!("emoji {:?} left in {s:?}", m.as_str()));
    }
    if let Some(c) = s.chars().find(|&c| !is_kept_char(c)) {
        return Err(format!("disallowed char {c:?} in {s:?}"));
    }
    if s.starts_with(' ') || s.ends_with(' ') || s.contains("  ") {
        return Err(format!("whitespace not normalized in {s:?}"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn url_replaced() {
        assert_eq!(clean_text("देखो https://bit.ly/abc").as_str(), "देखो http");
        assert_eq!(clean_text("go to WWW.example.com now").as_str(), "go to http now");
    }

    #[test]
    fn empty_input() {
        assert_eq!(clean_text("").as_str(), "");
    }

    #[test]
    fn mentions_and_hashtags_become_space() {
        assert_eq!(clean_text("@user भारत महान है! #proud").as_str(), "भारत महान है");
        assert_eq!(clean_text("a@b c").as_str(), "a c");
    }

    #[test]
    fn kept_punctuation() {
        assert_eq!(clean_text("क्या यह सच है? हाँ।").as_str(), "क्या यह सच है? हाँ।");
        assert_eq!(clean_text("हाँ, नहीं; ठीक.").as_str(), "हाँ नहीं ठीक.");
    }

    #[test]
    fn emoji_and_flags_removed_digits_kept() {
        assert_eq!(clean_text("जय हो 🇮🇳🙏🏽 123 👨‍👩‍👧 #1").as_str(), "जय हो 123");
        assert_eq!(clean_text("5️⃣ वोट").as_str(), "5 वोट");
    }

    #[test]
    fn url_step_precedes_charset_filter() {
        // Filtering first would leave "httpsexample.compath".
        assert_eq!(clean_text("https://example.com/path").as_str(), "http");
        let filtered_first = DISALLOWED.replace_all("https://example.com/path", "");
        assert_eq!(URL.replace_all(&filtered_first, URL_TOKEN), "httpsexample.compath");
    }

    #[test]
    fn glued_www_is_caught() {
        let once = clean_text("ww!w.example");
        assert_eq!(once.as_str(), "http");
        assert_eq!(clean_text(once.as_str()), once);
    }

    #[test]
    fn from_clean_accepts_only_clean_text() {
        assert!(CleanText::from_clean("भारत महान").is_some());
        assert!(CleanText::from_clean("भारत!").is_none());
    }

    proptest! {
        #[test]
        fn idempotent_and_clean(s in "\\PC*") {
            let once = clean_text(&s);
            prop_assert_eq!(clean_text(once.as_str()), once.clone());
            prop_assert!(check_clean(once.as_str()).is_ok(), "{:?}", check_clean(once.as_str()));
        }

        #[test]
        fn script_letters_and_digits_survive(s in "[a-zA-Z0-9\u{0915}-\u{0939}]{1,20}") {
            let cleaned = clean_text(&s);
            prop_assert_eq!(cleaned.as_str(), s.as_str());
        }
    }
}
