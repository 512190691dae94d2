use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{label_stats, write_corpus, Corpus, DataError, Dimension, LabelCounts, LabelSet};

const RATIO_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl SplitRatios {
    pub const DEFAULT: SplitRatios = SplitRatios {
        train: 0.7,
        validation: 0.1,
        test: 0.2,
    };

    pub fn new(train: f64, validation: f64, test: f64) -> Result<Self, DataError> {
        let r = SplitRatios {
            train,
            validation,
            test,
        };
        let parts = r.as_array();
        if parts.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(DataError::InvalidRatios(format!(
                "ratios must be finite and non-negative, got {train},{validation},{test}"
            )));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > RATIO_TOLERANCE {
            return Err(DataError::InvalidRatios(format!(
                "ratios must sum to 1, got {sum}"
            )));
        }
        Ok(r)
    }

    /// Parses `0.7,0.1,0.2`.
    pub fn parse(s: &str) -> Result<Self, DataError> {
        let parts: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| DataError::InvalidRatios(format!("`{s}`: {e}")))?;
        match parts[..] {
            [a, b, c] => SplitRatios::new(a, b, c),
            _ => Err(DataError::InvalidRatios(format!(
                "expected three comma-separated ratios, got `{s}`"
            ))),
        }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.train, self.validation, self.test]
    }
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios::DEFAULT
    }
}

#[derive(Debug, Clone)]
pub struct SplitBundle {
    pub train: Corpus,
    pub validation: Corpus,
    pub test: Corpus,
    pub seed: u64,
    pub ratios: SplitRatios,
    pub warnings: Vec<String>,
}

impl SplitBundle {
    pub fn parts(&self) -> [&Corpus; 3] {
        [&self.train, &self.validation, &self.test]
    }

    pub fn manifest(&self) -> SplitManifest {
        SplitManifest {
            seed: self.seed,
            ratios: self.ratios,
            counts: SplitCounts {
                train: label_stats(&self.train),
                validation: label_stats(&self.validation),
                test: label_stats(&self.test),
            },
            warnings: self.warnings.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: LabelCounts,
    pub validation: LabelCounts,
    pub test: LabelCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub seed: u64,
    pub ratios: SplitRatios,
    pub counts: SplitCounts,
    #[serde(default)]
    pub warnings: Vec<String>,
}

// Constraint layout: 0 = split size, 1..=5 = positives per dimension,
// 6.. = members per 5-flag combination.
const N_CONSTRAINTS: usize = 1 + 5 + 32;

fn constraints_of(labels: &LabelSet) -> Vec<usize> {
    let mut c = vec![0];
    for (i, &d) in Dimension::ALL.iter().enumerate() {
        if labels.get(d) {
            c.push(1 + i);
        }
    }
    c.push(6 + labels.combination_key() as usize);
    c
}

/// Splits a labeled corpus into train/validation/test.
///
/// Posts are visited in a seeded random order and each one goes to the split
/// whose quotas (size, each positive dimension, the post's exact label
/// combination) it is furthest behind on. Afterwards split sizes are fixed to
/// `floor(n * ratio)` for validation and test, with the rounding remainder in
/// train. Combinations too small to reach every non-empty split are kept in
/// train and reported in `warnings`.
pub fn stratified_split(
    corpus: &Corpus,
    ratios: SplitRatios,
    seed: u64,
) -> Result<SplitBundle, DataError> {
    if corpus.is_empty() {
        return Err(DataError::EmptyCorpus);
    }
    let labels = corpus.labels()?;
    let r = ratios.as_array();
    let active: Vec<usize> = (0..3).filter(|&s| r[s] > 0.0).collect();
    // Home split for rare combinations and rounding remainders.
    let home = if r[0] > 0.0 {
        0
    } else {
        *active
            .iter()
            .max_by(|&&a, &&b| r[a].total_cmp(&r[b]).then(b.cmp(&a)))
            .expect("ratios sum to one")
    };

    let mut combo_sizes: BTreeMap<u8, usize> = BTreeMap::new();
    for l in &labels {
        *combo_sizes.entry(l.combination_key()).or_default() += 1;
    }
    let mut warnings = Vec::new();
    let mut forced = [false; 32];
    for (&key, &n) in &combo_sizes {
        if n < active.len() {
            forced[key as usize] = true;
            let example = labels
                .iter()
                .find(|l| l.combination_key() == key)
                .expect("combination present");
            let msg = format!(
                "label combination `{}` has {n} member(s), fewer than {} non-empty splits; placed in {}",
                example.to_field(),
                active.len(),
                ["train", "validation", "test"][home]
            );
            log::warn!("{msg}");
            warnings.push(msg);
        }
    }

    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let constraint_sets: Vec<Vec<usize>> = labels.iter().map(constraints_of).collect();
    let mut seen = [0usize; N_CONSTRAINTS];
    let mut placed = [[0usize; N_CONSTRAINTS]; 3];
    let mut assignment = vec![usize::MAX; corpus.len()];

    for &i in &order {
        let cs = &constraint_sets[i];
        for &c in cs {
            seen[c] += 1;
        }
        let split = if forced[labels[i].combination_key() as usize] {
            home
        } else {
            let score = |s: usize| -> f64 {
                cs.iter()
                    .map(|&c| r[s] * seen[c] as f64 - placed[s][c] as f64)
                    .sum()
            };
            let mut best = active[0];
            let mut best_score = score(best);
            for &s in &active[1..] {
                let sc = score(s);
                if sc > best_score {
                    best = s;
                    best_score = sc;
                }
            }
            best
        };
        assignment[i] = split;
        for &c in cs {
            placed[split][c] += 1;
        }
    }

    // Exact sizes: floor(n * ratio) outside home, remainder in home.
    let n = corpus.len();
    let mut target = [0usize; 3];
    for s in 0..3 {
        if s != home {
            target[s] = (n as f64 * r[s]).floor() as usize;
        }
    }
    target[home] = n - target.iter().sum::<usize>();

    let deficit =
        |placed: &[[usize; N_CONSTRAINTS]; 3], s: usize, c: usize| r[s] * seen[c] as f64 - placed[s][c] as f64;
    loop {
        let sizes: Vec<usize> = (0..3).map(|s| placed[s][0]).collect();
        let Some(from) = (0..3).find(|&s| sizes[s] > target[s]) else {
            break;
        };
        let to = (0..3)
            .find(|&s| sizes[s] < target[s])
            .expect("sizes sum to n");
        // Pick the movable post whose move best reduces squared deficits.
        let best = order
            .iter()
            .copied()
            .filter(|&i| assignment[i] == from && !forced[labels[i].combination_key() as usize])
            .min_by(|&a, &b| {
                let cost = |i: usize| -> f64 {
                    constraint_sets[i]
                        .iter()
                        .map(|&c| deficit(&placed, from, c) - deficit(&placed, to, c))
                        .sum()
                };
                cost(a).total_cmp(&cost(b))
            });
        let Some(i) = best else {
            // Only forced posts left in `from`; accept the size drift.
            break;
        };
        assignment[i] = to;
        for &c in &constraint_sets[i] {
            placed[from][c] -= 1;
            placed[to][c] += 1;
        }
    }

    let mut parts: [Vec<_>; 3] = Default::default();
    for (i, post) in corpus.iter().enumerate() {
        parts[assignment[i]].push(post.clone());
    }
    let [train, validation, test] = parts;
    Ok(SplitBundle {
        train: Corpus::from_trusted(train),
        validation: Corpus::from_trusted(validation),
        test: Corpus::from_trusted(test),
        seed,
        ratios,
        warnings,
    })
}

/// Writes `train`, `validation`, `test` tables plus `manifest.json` into `dir`.
pub fn write_split(dir: &Path, bundle: &SplitBundle, extension: &str) -> Result<(), DataError> {
    std::fs::create_dir_all(dir)?;
    for (name, part) in ["train", "validation", "test"].iter().zip(bundle.parts()) {
        write_corpus(&dir.join(format!("{name}.{extension}")), part)?;
    }
    let manifest = serde_json::to_string_pretty(&bundle.manifest())?;
    std::fs::write(dir.join("manifest.json"), manifest + "\n")?;
    Ok(())
}
