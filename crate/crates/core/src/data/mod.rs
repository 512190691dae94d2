//! Corpus ingestion, label modeling, statistics, stratified splitting and
//! hostile-subset filtering.

mod io;
mod split;

pub use io::{transform_column, read_corpus, serialize_corpus, write_corpus, Delimiter, RawRecord};
pub use split::{stratified_split, write_split, SplitBundle, SplitManifest, SplitRatios};

use std::collections::HashSet;
use std::fmt;
use std::ops::Deref;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("record {row}: `non-hostile` cannot be combined with a hostile dimension")]
    ContradictoryLabels { row: usize },
    #[error("record {row}: unknown label `{token}`")]
    UnknownLabel { row: usize, token: String },
    #[error("record {row}: empty text")]
    EmptyText { row: usize },
    #[error("record {row}: empty labels field")]
    EmptyLabels { row: usize },
    #[error("record {row}: duplicate id `{id}`")]
    DuplicateId { row: usize, id: String },
    #[error("record {row}: post `{id}` has no labels")]
    Unlabeled { row: usize, id: String },
    #[error("missing column `{0}` in header")]
    MissingColumn(&'static str),
    #[error("invalid split ratios: {0}")]
    InvalidRatios(String),
    #[error("cannot split an empty corpus")]
    EmptyCorpus,
    #[error("invalid label set: {0}")]
    InvalidLabelSet(&'static str),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// One of the five label dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dimension {
    Hostile,
    Fake,
    Hate,
    Offensive,
    Defamation,
}

impl Dimension {
    pub const ALL: [Dimension; 5] = [
        Dimension::Hostile,
        Dimension::Fake,
        Dimension::Hate,
        Dimension::Offensive,
        Dimension::Defamation,
    ];
    pub const FINE: [Dimension; 4] = [
        Dimension::Fake,
        Dimension::Hate,
        Dimension::Offensive,
        Dimension::Defamation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Dimension::Hostile => "hostile",
            Dimension::Fake => "fake",
            Dimension::Hate => "hate",
            Dimension::Offensive => "offensive",
            Dimension::Defamation => "defamation",
        }
    }
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Coarse hostile flag plus the four fine-grained flags.
///
/// Construction enforces the coupling between the coarse flag and the fine
/// flags: a fine flag implies `hostile`, and a non-hostile set carries no
/// fine flag. Gold labels parsed from a corpus additionally always carry at
/// least one fine flag when hostile; predicted sets may not (a confident
/// coarse prediction with every fine probability under threshold).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct LabelSet {
    pub hostile: bool,
    pub fake: bool,
    pub hate: bool,
    pub offensive: bool,
    pub defamation: bool,
}

impl LabelSet {
    pub fn new(
        hostile: bool,
        fake: bool,
        hate: bool,
        offensive: bool,
        defamation: bool,
    ) -> Result<Self, DataError> {
        let set = LabelSet {
            hostile,
            fake,
            hate,
            offensive,
            defamation,
        };
        if set.any_fine() && !hostile {
            return Err(DataError::InvalidLabelSet(
                "a fine-grained flag requires hostile = true",
            ));
        }
        Ok(set)
    }

    pub fn non_hostile() -> Self {
        LabelSet::default()
    }

    /// Builds a hostile set from fine flags; `hostile` is implied by any of them.
    pub fn from_fine(fake: bool, hate: bool, offensive: bool, defamation: bool) -> Self {
        LabelSet {
            hostile: fake || hate || offensive || defamation,
            fake,
            hate,
            offensive,
            defamation,
        }
    }

    pub fn get(&self, dim: Dimension) -> bool {
        match dim {
            Dimension::Hostile => self.hostile,
            Dimension::Fake => self.fake,
            Dimension::Hate => self.hate,
            Dimension::Offensive => self.offensive,
            Dimension::Defamation => self.defamation,
        }
    }

    pub fn set(&mut self, dim: Dimension, value: bool) {
        match dim {
            Dimension::Hostile => self.hostile = value,
            Dimension::Fake => self.fake = value,
            Dimension::Hate => self.hate = value,
            Dimension::Offensive => self.offensive = value,
            Dimension::Defamation => self.defamation = value,
        }
    }

    pub fn any_fine(&self) -> bool {
        self.fake || self.hate || self.offensive || self.defamation
    }

    /// True when the coarse/fine coupling holds.
    pub fn is_coupled(&self) -> bool {
        self.hostile || !self.any_fine()
    }

    /// 5-bit key over (hostile, fake, hate, offensive, defamation).
    pub fn combination_key(&self) -> u8 {
        Dimension::ALL
            .iter()
            .enumerate()
            .fold(0u8, |acc, (i, &d)| acc | ((self.get(d) as u8) << i))
    }

    /// Parses a comma-separated labels field such as `fake,offensive`.
    pub fn parse_field(field: &str, row: usize) -> Result<Self, DataError> {
        let mut non_hostile = false;
        let mut set = LabelSet::default();
        let mut seen_any = false;
        for raw in field.split(',') {
            let token = raw.trim();
            if token.is_empty() {
                continue;
            }
            seen_any = true;
            match token.to_lowercase().as_str() {
                "non-hostile" => non_hostile = true,
                "fake" => set.fake = true,
                "hate" => set.hate = true,
                "offensive" => set.offensive = true,
                "defamation" => set.defamation = true,
                _ => {
                    return Err(DataError::UnknownLabel {
                        row,
                        token: token.to_string(),
                    })
                }
            }
        }
        if !seen_any {
            return Err(DataError::EmptyLabels { row });
        }
        if non_hostile && set.any_fine() {
            return Err(DataError::ContradictoryLabels { row });
        }
        set.hostile = set.any_fine();
        Ok(set)
    }

    /// Canonical labels field: `non-hostile`, or the fine tags in a fixed order.
    pub fn to_field(&self) -> String {
        if !self.hostile {
            return "non-hostile".to_string();
        }
        let tags: Vec<&str> = Dimension::FINE
            .iter()
            .filter(|&&d| self.get(d))
            .map(|d| d.name())
            .collect();
        if tags.is_empty() {
            // Only reachable for predictions.
            "hostile".to_string()
        } else {
            tags.join(",")
        }
    }
}

/// One social-media post.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledPost {
    pub id: String,
    pub text: String,
    pub labels: Option<LabelSet>,
}

impl LabeledPost {
    pub fn is_hostile(&self) -> bool {
        self.labels.is_some_and(|l| l.hostile)
    }
}

/// An ordered collection of posts with unique ids.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    posts: Vec<LabeledPost>,
}

impl Corpus {
    /// Builds a corpus, rejecting duplicate ids and empty texts.
    pub fn new(posts: Vec<LabeledPost>) -> Result<Self, DataError> {
        let mut ids = HashSet::with_capacity(posts.len());
        for (row, post) in posts.iter().enumerate() {
            if post.text.trim().is_empty() {
                return Err(DataError::EmptyText { row });
            }
            if !ids.insert(post.id.as_str()) {
                return Err(DataError::DuplicateId {
                    row,
                    id: post.id.clone(),
                });
            }
            if let Some(labels) = post.labels {
                if !labels.is_coupled() {
                    return Err(DataError::InvalidLabelSet(
                        "a fine-grained flag requires hostile = true",
                    ));
                }
            }
        }
        Ok(Corpus { posts })
    }

    /// Subset constructor for posts already known to satisfy the invariants.
    pub(crate) fn from_trusted(posts: Vec<LabeledPost>) -> Self {
        Corpus { posts }
    }

    pub fn posts(&self) -> &[LabeledPost] {
        &self.posts
    }

    pub fn into_posts(self) -> Vec<LabeledPost> {
        self.posts
    }

    pub fn is_labeled(&self) -> bool {
        self.posts.iter().all(|p| p.labels.is_some())
    }

    /// Labels of every post, failing on the first unlabeled one.
    pub fn labels(&self) -> Result<Vec<LabelSet>, DataError> {
        self.posts
            .iter()
            .enumerate()
            .map(|(row, p)| {
                p.labels.ok_or_else(|| DataError::Unlabeled {
                    row,
                    id: p.id.clone(),
                })
            })
            .collect()
    }

    /// Returns a copy with every text mapped through `f`.
    pub fn map_text(&self, f: impl Fn(&str) -> String) -> Corpus {
        Corpus {
            posts: self
                .posts
                .iter()
                .map(|p| LabeledPost {
                    id: p.id.clone(),
                    text: f(&p.text),
                    labels: p.labels,
                })
                .collect(),
        }
    }
}

impl Deref for Corpus {
    type Target = [LabeledPost];

    fn deref(&self) -> &[LabeledPost] {
        &self.posts
    }
}

/// Builds a labeled corpus from raw tabular records.
///
/// `labels: None` marks an unlabeled prediction input; `Some("")` is an error.
pub fn parse_corpus(rows: &[RawRecord]) -> Result<Corpus, DataError> {
    let mut posts = Vec::with_capacity(rows.len());
    for (row, record) in rows.iter().enumerate() {
        if record.text.trim().is_empty() {
            return Err(DataError::EmptyText { row });
        }
        let labels = match &record.labels {
            Some(field) => Some(LabelSet::parse_field(field, row)?),
            None => None,
        };
        posts.push(LabeledPost {
            id: record.id.clone(),
            text: record.text.clone(),
            labels,
        });
    }
    Corpus::new(posts)
}

/// Per-category counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LabelCounts {
    pub total: usize,
    pub non_hostile: usize,
    pub hostile: usize,
    pub fake: usize,
    pub hate: usize,
    pub offensive: usize,
    pub defamation: usize,
}

impl LabelCounts {
    pub fn get(&self, dim: Dimension) -> usize {
        match dim {
            Dimension::Hostile => self.hostile,
            Dimension::Fake => self.fake,
            Dimension::Hate => self.hate,
            Dimension::Offensive => self.offensive,
            Dimension::Defamation => self.defamation,
        }
    }
}

/// Counts posts per category. Unlabeled posts count towards `total` only.
pub fn label_stats(corpus: &[LabeledPost]) -> LabelCounts {
    let mut counts = LabelCounts {
        total: corpus.len(),
        ..Default::default()
    };
    for labels in corpus.iter().filter_map(|p| p.labels) {
        if labels.hostile {
            counts.hostile += 1;
        } else {
            counts.non_hostile += 1;
        }
        counts.fake += labels.fake as usize;
        counts.hate += labels.hate as usize;
        counts.offensive += labels.offensive as usize;
        counts.defamation += labels.defamation as usize;
    }
    counts
}

/// The posts labeled hostile, in their original order.
pub fn hostile_subset(corpus: &Corpus) -> Corpus {
    Corpus::from_trusted(
        corpus
            .iter()
            .filter(|p| p.is_hostile())
            .cloned()
            .collect(),
    )
}
