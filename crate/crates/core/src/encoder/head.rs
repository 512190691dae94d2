use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use rand_distr::{Distribution, Uniform};

use super::{EncoderError, Mode, ParameterSet, TensorRef};

pub const DEFAULT_DROPOUT: f64 = 0.3;

/// Dropout followed by one affine layer: `logits = weight · input + bias`.
///
/// `weight` is stored `(outputs, input_width)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierHead {
    pub dropout_rate: f64,
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

/// What the backward pass needs from a forward pass.
#[derive(Debug, Clone)]
pub struct HeadTape {
    /// Input after dropout and rescaling.
    input: Array1<f64>,
    /// Per-entry multiplier applied to the input (0 or 1/(1-p), or 1 in eval).
    mask: Array1<f64>,
}

impl ClassifierHead {
    /// Uniform(-1/sqrt(in), 1/sqrt(in)) initialization.
    pub fn new(
        input_width: usize,
        outputs: usize,
        dropout_rate: f64,
        rng: &mut impl Rng,
    ) -> Result<Self, EncoderError> {
        let bound = 1.0 / (input_width.max(1) as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        let weight = Array2::from_shape_fn((outputs, input_width), |_| dist.sample(rng));
        let bias = Array1::from_shape_fn(outputs, |_| dist.sample(rng));
        ClassifierHead::from_parts(weight, bias, dropout_rate)
    }

    pub fn from_parts(
        weight: Array2<f64>,
        bias: Array1<f64>,
        dropout_rate: f64,
    ) -> Result<Self, EncoderError> {
        if weight.nrows() == 0 || weight.ncols() == 0 {
            return Err(EncoderError::InvalidSpec(
                "a head needs at least one input and one output".into(),
            ));
        }
        if bias.len() != weight.nrows() {
            return Err(EncoderError::DimensionMismatch {
                expected: weight.nrows(),
                got: bias.len(),
            });
        }
        if !(0.0..1.0).contains(&dropout_rate) {
            return Err(EncoderError::InvalidSpec(format!(
                "dropout rate must lie in [0, 1), got {dropout_rate}"
            )));
        }
        Ok(ClassifierHead {
            dropout_rate,
            weight: weight.as_standard_layout().into_owned(),
            bias,
        })
    }

    pub fn input_width(&self) -> usize {
        self.weight.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weight.nrows()
    }

    fn check(&self, rep: &ArrayView1<'_, f64>) -> Result<(), EncoderError> {
        if rep.len() != self.input_width() {
            return Err(EncoderError::DimensionMismatch {
                expected: self.input_width(),
                got: rep.len(),
            });
        }
        Ok(())
    }

    /// Forward pass. In train mode an inverted-dropout mask drawn from `rng`
    /// is applied to the input first; eval mode never touches `rng`.
    pub fn forward(
        &self,
        rep: ArrayView1<'_, f64>,
        mode: Mode,
        rng: &mut impl Rng,
    ) -> Result<Array1<f64>, EncoderError> {
        Ok(self.forward_tape(rep, mode, rng)?.0)
    }

    pub fn forward_eval(&self, rep: ArrayView1<'_, f64>) -> Result<Array1<f64>, EncoderError> {
        self.check(&rep)?;
        Ok(self.weight.dot(&rep) + &self.bias)
    }

    pub fn forward_tape(
        &self,
        rep: ArrayView1<'_, f64>,
        mode: Mode,
        rng: &mut impl Rng,
    ) -> Result<(Array1<f64>, HeadTape), EncoderError> {
        self.check(&rep)?;
        let mask = match mode {
            Mode::Train if self.dropout_rate > 0.0 => {
                let keep = 1.0 - self.dropout_rate;
                Array1::from_shape_fn(rep.len(), |_| {
                    if rng.random::<f64>() < keep {
                        1.0 / keep
                    } else {
                        0.0
                    }
                })
            }
            _ => Array1::ones(rep.len()),
        };
        Ok(self.forward_masked(rep, mask))
    }

    /// Forward pass with an explicit multiplier per input entry.
    pub fn forward_masked(&self, rep: ArrayView1<'_, f64>, mask: Array1<f64>) -> (Array1<f64>, HeadTape) {
        let input = &rep * &mask;
        let logits = self.weight.dot(&input) + &self.bias;
        (logits, HeadTape { input, mask })
    }

    /// Accumulates weight/bias gradients into `grads` and returns
    /// d(loss)/d(head input before dropout).
    pub fn backward(
        &self,
        tape: &HeadTape,
        d_logits: ArrayView1<'_, f64>,
        grads: &mut ClassifierHead,
    ) -> Array1<f64> {
        for (o, &dl) in d_logits.iter().enumerate() {
            let mut row = grads.weight.row_mut(o);
            row.scaled_add(dl, &tape.input);
        }
        grads.bias += &d_logits;
        self.weight.t().dot(&d_logits) * &tape.mask
    }

    pub fn zeros_like(&self) -> ClassifierHead {
        ClassifierHead {
            dropout_rate: self.dropout_rate,
            weight: Array2::zeros(self.weight.raw_dim()),
            bias: Array1::zeros(self.bias.raw_dim()),
        }
    }
}

impl ParameterSet for ClassifierHead {
    fn tensors(&self) -> Vec<TensorRef<'_>> {
        vec![
            TensorRef {
                name: "weight",
                shape: self.weight.shape().to_vec(),
                data: self.weight.as_slice().expect("standard layout"),
            },
            TensorRef {
                name: "bias",
                shape: self.bias.shape().to_vec(),
                data: self.bias.as_slice().expect("standard layout"),
            },
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.weight.as_slice_mut().expect("standard layout"),
            self.bias.as_slice_mut().expect("standard layout"),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_weight_gives_bias() {
        let head = ClassifierHead::from_parts(Array2::zeros((1, 4)), array![0.7], 0.3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = head.forward(array![1.0, -2.0, 3.0, 9.0].view(), Mode::Eval, &mut rng).unwrap();
        assert_eq!(out, array![0.7]);
        let out = head.forward(array![1.0, -2.0, 3.0, 9.0].view(), Mode::Train, &mut rng).unwrap();
        assert_eq!(out, array![0.7]);
    }

    #[test]
    fn hand_arithmetic_eval() {
        let head = ClassifierHead::from_parts(array![[1.0, -1.0]], array![0.0], 0.3).unwrap();
        let out = head.forward_eval(array![0.3, 0.1].view()).unwrap();
        assert!((out[0] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn eval_independent_of_dropout_rate() {
        let rep = array![0.5, -1.5, 2.0];
        let w = array![[0.1, 0.2, 0.3], [-0.4, 0.5, 0.6]];
        let b = array![0.01, -0.02];
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let outs: Vec<_> = [0.0, 0.3, 0.9]
            .iter()
            .map(|&p| {
                ClassifierHead::from_parts(w.clone(), b.clone(), p)
                    .unwrap()
                    .forward(rep.view(), Mode::Eval, &mut rng)
                    .unwrap()
            })
            .collect();
        assert_eq!(outs[0], outs[1]);
        assert_eq!(outs[1], outs[2]);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let head = ClassifierHead::from_parts(array![[1.0, -1.0]], array![0.0], 0.3).unwrap();
        assert_eq!(
            head.forward_eval(array![1.0].view()).unwrap_err(),
            EncoderError::DimensionMismatch {
                expected: 2,
                got: 1
            }
        );
        assert!(ClassifierHead::from_parts(array![[1.0]], array![0.0, 1.0], 0.3).is_err());
        assert!(ClassifierHead::from_parts(array![[1.0]], array![0.0], 1.0).is_err());
    }

    #[test]
    fn dropout_mean_matches_eval() {
        // Inverted dropout is unbiased: the train-mode mean over many masks
        // stays within 3 standard errors of the eval output.
        let head = ClassifierHead::from_parts(
            array![[0.8, -0.3, 0.5, 1.1], [0.2, 0.4, -0.9, 0.05]],
            array![0.1, -0.2],
            0.3,
        )
        .unwrap();
        let rep = array![0.6, -1.2, 0.9, 0.3];
        let eval = head.forward_eval(rep.view()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 20_000;
        let samples: Vec<Array1<f64>> = (0..n)
            .map(|_| head.forward(rep.view(), Mode::Train, &mut rng).unwrap())
            .collect();
        for o in 0..2 {
            let xs: Vec<f64> = samples.iter().map(|s| s[o]).collect();
            let mean = xs.iter().sum::<f64>() / n as f64;
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            let se = (var / n as f64).sqrt();
            assert!((mean - eval[o]).abs() <= 3.0 * se, "output {o}: {mean} vs {}", eval[o]);
        }
    }
}
