//! Keyword-rule synthetic corpus for desk-scale runs.
//!
//! A post is hostile exactly when it contains at least one trigger word, and
//! each fine-grained flag is set exactly when that dimension's trigger is
//! present. Filler words never carry a label. Posts also get URLs, mentions,
//! hashtags and emoji so the preprocessing step has something to remove.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Corpus, Dimension, LabelSet, LabeledPost};

/// Trigger words, one per fine-grained dimension.
pub const TRIGGERS: [(Dimension, &str); 4] = [
    (Dimension::Fake, "अफवाह"),
    (Dimension::Hate, "नफरत"),
    (Dimension::Offensive, "बेहूदा"),
    (Dimension::Defamation, "बदनाम"),
];

pub const FILLER: [&str; 40] = [
    "आज", "मौसम", "बहुत", "अच्छा", "है", "हम", "लोग", "शहर", "खबर", "बाजार",
    "खेल", "पानी", "स्कूल", "गाना", "फिल्म", "किताब", "सुबह", "शाम", "दोस्त", "परिवार",
    "रेल", "गाँव", "नदी", "पेड़", "चाय", "खाना", "सड़क", "मेला", "त्योहार", "बच्चे",
    "घर", "काम", "समय", "रात", "दिन", "साल", "नया", "पुराना", "सुंदर", "बड़ा",
];

const NOISE_URLS: [&str; 3] = ["https://t.co/a1b2", "http://example.in/x?y=1", "www.khabar.com/page"];
const NOISE_TAGS: [&str; 4] = ["@user_12", "@मित्र", "#ट्रेंड", "#news"];
const NOISE_EMOJI: [&str; 4] = ["😀", "🔥", "🇮🇳", "👍🏽"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub posts: usize,
    /// Probability that a post is hostile.
    pub hostile_rate: f64,
    /// Probability of each fine flag on a hostile post; at least one is set.
    pub flag_rate: f64,
    /// Probability of each kind of noise (URL, mention/hashtag, emoji).
    pub noise_rate: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            posts: 500,
            hostile_rate: 0.5,
            flag_rate: 0.4,
            noise_rate: 0.3,
            seed: 0,
        }
    }
}

pub fn trigger(dim: Dimension) -> Option<&'static str> {
    TRIGGERS.iter().find(|(d, _)| *d == dim).map(|(_, w)| *w)
}

/// Labels implied by the trigger rule for an arbitrary text.
pub fn rule_labels(text: &str) -> LabelSet {
    let has = |dim| {
        let w = trigger(dim).expect("fine dimension");
        text.split_whitespace().any(|t| t == w)
    };
    LabelSet::from_fine(
        has(Dimension::Fake),
        has(Dimension::Hate),
        has(Dimension::Offensive),
        has(Dimension::Defamation),
    )
}

pub fn synthetic_corpus(config: &SynthConfig) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let width = config.posts.max(1).to_string().len();
    let mut posts = Vec::with_capacity(config.posts);
    for i in 0..config.posts {
        let labels = if rng.random_bool(config.hostile_rate) {
            let mut flags: [bool; 4] = std::array::from_fn(|_| rng.random_bool(config.flag_rate));
            if !flags.iter().any(|&f| f) {
                flags[rng.random_range(0..4)] = true;
            }
            LabelSet::from_fine(flags[0], flags[1], flags[2], flags[3])
        } else {
            LabelSet::non_hostile()
        };

        let n_filler = rng.random_range(5..=12);
        let mut words: Vec<&str> = (0..n_filler)
            .map(|_| *FILLER.choose(&mut rng).expect("non-empty"))
            .collect();
        for (dim, w) in TRIGGERS {
            if labels.get(dim) {
                words.push(w);
            }
        }
        words.shuffle(&mut rng);
        for noise in [&NOISE_URLS[..], &NOISE_TAGS[..], &NOISE_EMOJI[..]] {
            if rng.random_bool(config.noise_rate) {
                let at = rng.random_range(0..=words.len());
                words.insert(at, noise.choose(&mut rng).expect("non-empty"));
            }
        }
        posts.push(LabeledPost {
            id: format!("syn-{i:0width$}"),
            text: words.join(" "),
            labels: Some(labels),
        });
    }
    Corpus::new(posts).expect("generated posts are valid")
}
