use std::collections::HashMap;
use std::io::Write;

use ndarray::Array1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{aux_fuse, sigmoid, Role, StrategyError, TrainedBundle, MLC_ORDER};
use crate::data::{Corpus, Dimension, LabelSet};
use crate::encoder::SequenceEncoder;
use crate::textprep::clean_text;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FineProbabilities {
    pub fake: f64,
    pub hate: f64,
    pub offensive: f64,
    pub defamation: f64,
}

impl FineProbabilities {
    pub fn get(&self, dim: Dimension) -> f64 {
        match dim {
            Dimension::Fake => self.fake,
            Dimension::Hate => self.hate,
            Dimension::Offensive => self.offensive,
            Dimension::Defamation => self.defamation,
            Dimension::Hostile => panic!("hostile is not a fine-grained dimension"),
        }
    }

    fn set(&mut self, dim: Dimension, p: f64) {
        match dim {
            Dimension::Fake => self.fake = p,
            Dimension::Hate => self.hate = p,
            Dimension::Offensive => self.offensive = p,
            Dimension::Defamation => self.defamation = p,
            Dimension::Hostile => panic!("hostile is not a fine-grained dimension"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    /// Probability of the post being hostile.
    pub coarse: f64,
    /// Ungated fine-grained probabilities.
    pub fine: FineProbabilities,
    /// Thresholded labels; fine flags are forced off when the coarse
    /// prediction is non-hostile.
    pub labels: LabelSet,
}

impl Prediction {
    pub fn gated(id: String, coarse: f64, fine: FineProbabilities, threshold: f64) -> Self {
        let hostile = coarse >= threshold;
        let labels = if hostile {
            LabelSet {
                hostile: true,
                fake: fine.fake >= threshold,
                hate: fine.hate >= threshold,
                offensive: fine.offensive >= threshold,
                defamation: fine.defamation >= threshold,
            }
        } else {
            LabelSet::non_hostile()
        };
        Prediction {
            id,
            coarse,
            fine,
            labels,
        }
    }

    pub fn fine(&self, dim: Dimension) -> f64 {
        self.fine.get(dim)
    }

    pub fn probability(&self, dim: Dimension) -> f64 {
        match dim {
            Dimension::Hostile => self.coarse,
            d => self.fine.get(d),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub threshold: f64,
    pub predictions: Vec<Prediction>,
}

/// Raw logits of every unit for one cleaned text, keyed by role.
pub(crate) fn unit_logits<E: SequenceEncoder>(
    bundle: &TrainedBundle<E>,
    text: &crate::textprep::CleanText,
) -> Result<HashMap<Role, Array1<f64>>, StrategyError> {
    let mut reps: HashMap<usize, Array1<f64>> = HashMap::new();
    let mut logits: HashMap<Role, Array1<f64>> = HashMap::new();
    // Units that others fuse from go first.
    let mut order: Vec<_> = bundle.units.iter().collect();
    order.sort_by_key(|u| u.fused_from.is_some());
    for unit in order {
        if !reps.contains_key(&unit.encoder) {
            let enc = &bundle.encoders[unit.encoder];
            let out = enc.encode(&enc.tokenize(text))?;
            reps.insert(unit.encoder, out.first_token_rep().to_owned());
        }
        let rep = &reps[&unit.encoder];
        let input = match unit.fused_from {
            Some(src) => {
                let aux = logits.get(&src).ok_or_else(|| {
                    StrategyError::Shape(format!("unit {} fuses from missing unit {src}", unit.role))
                })?;
                aux_fuse(rep.view(), aux.as_slice().expect("contiguous"))?
            }
            None => rep.clone(),
        };
        logits.insert(unit.role, unit.head.forward_eval(input.view())?);
    }
    Ok(logits)
}

/// Converts unit logits to (coarse, fine) probabilities.
pub(crate) fn probabilities(
    logits: &HashMap<Role, Array1<f64>>,
) -> Result<(f64, FineProbabilities), StrategyError> {
    let mut coarse = None;
    let mut fine = FineProbabilities::default();
    let mut seen = 0;
    for (role, l) in logits {
        match role {
            Role::Joint => {
                for (j, &dim) in MLC_ORDER.iter().enumerate() {
                    let p = sigmoid(l[j]);
                    if dim == Dimension::Hostile {
                        coarse = Some(p);
                    } else {
                        fine.set(dim, p);
                        seen += 1;
                    }
                }
            }
            Role::Coarse => coarse = Some(sigmoid(l[0])),
            r => {
                fine.set(r.dimension().expect("fine role"), sigmoid(l[0]));
                seen += 1;
            }
        }
    }
    match coarse {
        Some(c) if seen == 4 => Ok((c, fine)),
        _ => Err(StrategyError::Shape("bundle does not cover all five dimensions".into())),
    }
}

/// Predicts every post. Texts are cleaned first; cleaning is idempotent, so
/// already-preprocessed input is unaffected.
pub fn predict<E: SequenceEncoder>(
    bundle: &TrainedBundle<E>,
    posts: &Corpus,
    threshold: f64,
) -> Result<PredictionSet, StrategyError> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(StrategyError::InvalidConfig(format!(
            "threshold must lie in (0, 1), got {threshold}"
        )));
    }
    let predictions = posts
        .posts()
        .par_iter()
        .map(|post| {
            let text = clean_text(&post.text);
            let (coarse, fine) = probabilities(&unit_logits(bundle, &text)?)?;
            Ok(Prediction::gated(post.id.clone(), coarse, fine, threshold))
        })
        .collect::<Result<Vec<_>, StrategyError>>()?;
    Ok(PredictionSet {
        threshold,
        predictions,
    })
}

/// Writes `id, hostile, fake, hate, offensive, defamation, labels`.
pub fn write_predictions<W: Write>(
    wtr: W,
    delimiter: u8,
    set: &PredictionSet,
) -> Result<(), StrategyError> {
    let mut w = csv::WriterBuilder::new().delimiter(delimiter).from_writer(wtr);
    let csv_err = |e: csv::Error| StrategyError::Data(e.into());
    w.write_record(["id", "hostile", "fake", "hate", "offensive", "defamation", "labels"])
        .map_err(csv_err)?;
    for p in &set.predictions {
        let mut row = vec![p.id.clone()];
        row.extend(Dimension::ALL.iter().map(|&d| format!("{:.6}", p.probability(d))));
        row.push(p.labels.to_field());
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gating_forces_fine_off() {
        let fine = FineProbabilities {
            fake: 0.9,
            hate: 0.9,
            offensive: 0.9,
            defamation: 0.9,
        };
        let p = Prediction::gated("a".into(), 0.2, fine, 0.5);
        assert_eq!(p.labels, LabelSet::non_hostile());
        // Ungated probabilities are kept.
        assert_eq!(p.fine, fine);
    }

    #[test]
    fn threshold_rule() {
        let fine = FineProbabilities {
            fake: 0.6,
            hate: 0.1,
            offensive: 0.1,
            defamation: 0.1,
        };
        let p = Prediction::gated("a".into(), 0.8, fine, 0.5);
        assert_eq!(p.labels, LabelSet::from_fine(true, false, false, false));
        assert!(p.labels.is_coupled());
    }
}
