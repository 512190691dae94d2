use ndarray::{Array1, ArrayView1};

use super::StrategyError;
use crate::data::{Dimension, LabelSet};

/// Label order of the joint multi-label head.
pub const MLC_ORDER: [Dimension; 5] = [
    Dimension::Hostile,
    Dimension::Fake,
    Dimension::Hate,
    Dimension::Defamation,
    Dimension::Offensive,
];

/// Order of the fine heads in the multi-task model (after the coarse head).
pub const MTL_FINE_ORDER: [Dimension; 4] = [
    Dimension::Hate,
    Dimension::Defamation,
    Dimension::Fake,
    Dimension::Offensive,
];

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy on a raw logit, `max(x, 0) - x·y + ln(1 + e^-|x|)`.
pub fn bce(logit: f64, target: bool) -> f64 {
    let y = target as u8 as f64;
    logit.max(0.0) - logit * y + (-logit.abs()).exp().ln_1p()
}

/// d bce / d logit.
pub fn bce_grad(logit: f64, target: bool) -> f64 {
    sigmoid(logit) - target as u8 as f64
}

pub fn mlc_targets(labels: &LabelSet) -> [bool; 5] {
    MLC_ORDER.map(|d| labels.get(d))
}

fn check_len(what: &'static str, got: usize, expected: usize) -> Result<(), StrategyError> {
    if got != expected {
        return Err(StrategyError::Shape(format!(
            "{what}: expected {expected} entries, got {got}"
        )));
    }
    Ok(())
}

/// Sum of per-class BCE terms for one example, classes in [`MLC_ORDER`].
pub fn mlc_loss(logits: &[f64], targets: &[bool]) -> Result<f64, StrategyError> {
    check_len("mlc logits", logits.len(), 5)?;
    check_len("mlc targets", targets.len(), 5)?;
    Ok(logits.iter().zip(targets).map(|(&x, &y)| bce(x, y)).sum())
}

pub fn mlc_grad(logits: &[f64], targets: &[bool]) -> Result<[f64; 5], StrategyError> {
    check_len("mlc logits", logits.len(), 5)?;
    check_len("mlc targets", targets.len(), 5)?;
    Ok(std::array::from_fn(|j| bce_grad(logits[j], targets[j])))
}

/// Mean of [`mlc_loss`] over a batch.
pub fn mlc_batch_loss(batch: &[(Vec<f64>, [bool; 5])]) -> Result<f64, StrategyError> {
    if batch.is_empty() {
        return Err(StrategyError::Shape("empty batch".into()));
    }
    let mut total = 0.0;
    for (logits, targets) in batch {
        total += mlc_loss(logits, targets)?;
    }
    Ok(total / batch.len() as f64)
}

/// Gate on the fine-grained term: `lambda_fine` for hostile posts, else 0.
fn fine_weight(labels: &LabelSet, lambda_fine: f64) -> f64 {
    if labels.hostile {
        lambda_fine
    } else {
        0.0
    }
}

/// Multi-task objective for one example:
/// `bce(coarse) + λ · (1/4) · Σ bce(fine)`, with fine logits in
/// [`MTL_FINE_ORDER`] and λ = 0 for non-hostile posts.
pub fn mtl_loss(coarse_logit: f64, fine_logits: &[f64; 4], labels: &LabelSet, lambda_fine: f64) -> f64 {
    let coarse = bce(coarse_logit, labels.hostile);
    let lambda = fine_weight(labels, lambda_fine);
    if lambda == 0.0 {
        return coarse;
    }
    let fine: f64 = fine_logits
        .iter()
        .zip(MTL_FINE_ORDER)
        .map(|(&x, d)| bce(x, labels.get(d)))
        .sum();
    coarse + lambda * fine / MTL_FINE_ORDER.len() as f64
}

/// Gradient of [`mtl_loss`] w.r.t. (coarse logit, fine logits). Fine entries
/// are exactly zero for non-hostile posts.
pub fn mtl_grad(
    coarse_logit: f64,
    fine_logits: &[f64; 4],
    labels: &LabelSet,
    lambda_fine: f64,
) -> (f64, [f64; 4]) {
    let lambda = fine_weight(labels, lambda_fine);
    let coarse = bce_grad(coarse_logit, labels.hostile);
    if lambda == 0.0 {
        return (coarse, [0.0; 4]);
    }
    let scale = lambda / MTL_FINE_ORDER.len() as f64;
    let fine = std::array::from_fn(|n| scale * bce_grad(fine_logits[n], labels.get(MTL_FINE_ORDER[n])));
    (coarse, fine)
}

/// `[rep ∥ coarse_logits]`: the fine head input of the auxiliary strategy.
pub fn aux_fuse(rep: ArrayView1<'_, f64>, coarse_logits: &[f64]) -> Result<Array1<f64>, StrategyError> {
    check_len("auxiliary logits", coarse_logits.len(), 1)?;
    let mut out = Array1::zeros(rep.len() + coarse_logits.len());
    out.slice_mut(ndarray::s![..rep.len()]).assign(&rep);
    for (i, &l) in coarse_logits.iter().enumerate() {
        out[rep.len() + i] = l;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use std::f64::consts::LN_2;

    #[test]
    fn bce_values() {
        assert!((bce(0.0, true) - 0.693_147_180_559_945_3).abs() < 1e-15);
        assert!((bce(0.0, false) - LN_2).abs() < 1e-15);
        let saturated = bce(100.0, true);
        assert!(saturated >= 0.0 && saturated < 1e-40);
        assert!((bce(-100.0, true) - 100.0).abs() < 1e-12);
        assert!(bce(-100.0, false) < 1e-40);
    }

    #[test]
    fn mlc_values() {
        let l = mlc_loss(&[0.0; 5], &[true, false, true, false, false]).unwrap();
        assert!((l - 3.465_735_902_799_726_5).abs() < 1e-12);
        let targets = [true, true, false, false, true];
        let logits: Vec<f64> = targets.iter().map(|&t| if t { 100.0 } else { -100.0 }).collect();
        assert!(mlc_loss(&logits, &targets).unwrap() < 1e-40);
        assert!(mlc_loss(&[0.0; 4], &[true; 4]).is_err());

        let a = (vec![0.3, -1.0, 2.0, 0.0, 0.5], [true, false, true, false, true]);
        let b = (vec![-0.7, 1.2, 0.1, -2.0, 0.9], [false, false, false, false, false]);
        let la = mlc_loss(&a.0, &a.1).unwrap();
        let lb = mlc_loss(&b.0, &b.1).unwrap();
        assert!((mlc_batch_loss(&[a, b]).unwrap() - (la + lb) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn mtl_values() {
        let hostile = LabelSet::from_fine(true, false, false, true);
        let l = mtl_loss(0.0, &[0.0; 4], &hostile, 0.5);
        assert!((l - 1.5 * LN_2).abs() < 1e-15);
        assert!((l - 1.039_720_770_839_918).abs() < 1e-12);

        let non = LabelSet::non_hostile();
        assert_eq!(mtl_loss(0.4, &[3.0, -2.0, 7.0, 1.0], &non, 0.5), bce(0.4, false));
        let (_, g) = mtl_grad(0.4, &[3.0, -2.0, 7.0, 1.0], &non, 0.5);
        assert_eq!(g, [0.0; 4]);

        assert_eq!(mtl_loss(0.4, &[3.0, -2.0, 7.0, 1.0], &hostile, 0.0), bce(0.4, true));
    }

    #[test]
    fn mtl_grad_matches_difference() {
        let labels = LabelSet::from_fine(false, true, true, false);
        let fine = [0.3, -0.8, 1.1, 0.05];
        let (gc, gf) = mtl_grad(-0.2, &fine, &labels, 0.5);
        let h = 1e-6;
        let fd = (mtl_loss(-0.2 + h, &fine, &labels, 0.5) - mtl_loss(-0.2 - h, &fine, &labels, 0.5)) / (2.0 * h);
        assert!((fd - gc).abs() < 1e-8);
        for n in 0..4 {
            let (mut up, mut dn) = (fine, fine);
            up[n] += h;
            dn[n] -= h;
            let fd = (mtl_loss(-0.2, &up, &labels, 0.5) - mtl_loss(-0.2, &dn, &labels, 0.5)) / (2.0 * h);
            assert!((fd - gf[n]).abs() < 1e-8);
        }
    }

    #[test]
    fn fuse_concatenates() {
        let f = aux_fuse(array![1.0, 2.0, 3.0, 4.0].view(), &[-0.5]).unwrap();
        assert_eq!(f, array![1.0, 2.0, 3.0, 4.0, -0.5]);
        let z = aux_fuse(Array1::zeros(6).view(), &[0.0]).unwrap();
        assert_eq!(z, Array1::<f64>::zeros(7));
        assert!(aux_fuse(array![1.0].view(), &[0.1, 0.2]).is_err());
    }
}
