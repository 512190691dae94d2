//! Small deterministic attention encoder for desk-scale training and tests.
//!
//! Hashed-bucket token embeddings plus learned position embeddings, one
//! multi-head self-attention block and a GELU feed-forward block (both with
//! residual connections), then a final layer norm. Row-vector convention:
//! a layer computes `x · W + b` with `W` of shape `(in, out)`.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{
    tokenize_truncate, EncoderError, EncoderKind, EncoderOutput, EncoderSpec, ParameterSet,
    SequenceEncoder, TensorRef, TokenSequence, TrainableEncoder,
};
use crate::textprep::CleanText;

const LN_EPS: f64 = 1e-5;
const EMBEDDING_STD: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct TinyParams {
    pub token_embedding: Array2<f64>,
    pub position_embedding: Array2<f64>,
    pub query: Array2<f64>,
    pub query_bias: Array1<f64>,
    pub key: Array2<f64>,
    pub key_bias: Array1<f64>,
    pub value: Array2<f64>,
    pub value_bias: Array1<f64>,
    pub attn_out: Array2<f64>,
    pub attn_out_bias: Array1<f64>,
    pub ff_in: Array2<f64>,
    pub ff_in_bias: Array1<f64>,
    pub ff_out: Array2<f64>,
    pub ff_out_bias: Array1<f64>,
    pub norm_scale: Array1<f64>,
    pub norm_shift: Array1<f64>,
}

impl TinyParams {
    pub fn zeros(spec: &EncoderSpec) -> Self {
        let (d, f) = (spec.width, spec.ff_width);
        TinyParams {
            token_embedding: Array2::zeros((spec.vocab.buckets, d)),
            position_embedding: Array2::zeros((spec.max_length, d)),
            query: Array2::zeros((d, d)),
            query_bias: Array1::zeros(d),
            key: Array2::zeros((d, d)),
            key_bias: Array1::zeros(d),
            value: Array2::zeros((d, d)),
            value_bias: Array1::zeros(d),
            attn_out: Array2::zeros((d, d)),
            attn_out_bias: Array1::zeros(d),
            ff_in: Array2::zeros((d, f)),
            ff_in_bias: Array1::zeros(f),
            ff_out: Array2::zeros((f, d)),
            ff_out_bias: Array1::zeros(d),
            norm_scale: Array1::zeros(d),
            norm_shift: Array1::zeros(d),
        }
    }

    fn init(spec: &EncoderSpec) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let mut p = TinyParams::zeros(spec);
        let mut fill = |a: &mut Array2<f64>, std: f64| {
            let normal = Normal::new(0.0, std).expect("positive std");
            a.mapv_inplace(|_| normal.sample(&mut rng));
        };
        let (d, f) = (spec.width as f64, spec.ff_width as f64);
        fill(&mut p.token_embedding, EMBEDDING_STD);
        fill(&mut p.position_embedding, EMBEDDING_STD);
        fill(&mut p.query, d.powf(-0.5));
        fill(&mut p.key, d.powf(-0.5));
        fill(&mut p.value, d.powf(-0.5));
        fill(&mut p.attn_out, d.powf(-0.5));
        fill(&mut p.ff_in, d.powf(-0.5));
        fill(&mut p.ff_out, f.powf(-0.5));
        p.norm_scale.fill(1.0);
        p.norm_shift.fill(0.0);
        p
    }
}

fn mat<'a>(name: &'static str, a: &'a Array2<f64>) -> TensorRef<'a> {
    TensorRef {
        name,
        shape: a.shape().to_vec(),
        data: a.as_slice().expect("standard layout"),
    }
}

fn vec1<'a>(name: &'static str, a: &'a Array1<f64>) -> TensorRef<'a> {
    TensorRef {
        name,
        shape: a.shape().to_vec(),
        data: a.as_slice().expect("standard layout"),
    }
}

impl ParameterSet for TinyParams {
    fn tensors(&self) -> Vec<TensorRef<'_>> {
        vec![
            mat("token_embedding", &self.token_embedding),
            mat("position_embedding", &self.position_embedding),
            mat("query", &self.query),
            vec1("query_bias", &self.query_bias),
            mat("key", &self.key),
            vec1("key_bias", &self.key_bias),
            mat("value", &self.value),
            vec1("value_bias", &self.value_bias),
            mat("attn_out", &self.attn_out),
            vec1("attn_out_bias", &self.attn_out_bias),
            mat("ff_in", &self.ff_in),
            vec1("ff_in_bias", &self.ff_in_bias),
            mat("ff_out", &self.ff_out),
            vec1("ff_out_bias", &self.ff_out_bias),
            vec1("norm_scale", &self.norm_scale),
            vec1("norm_shift", &self.norm_shift),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        fn sl<D: ndarray::Dimension>(a: &mut ndarray::Array<f64, D>) -> &mut [f64] {
            a.as_slice_mut().expect("standard layout")
        }
        vec![
            sl(&mut self.token_embedding),
            sl(&mut self.position_embedding),
            sl(&mut self.query),
            sl(&mut self.query_bias),
            sl(&mut self.key),
            sl(&mut self.key_bias),
            sl(&mut self.value),
            sl(&mut self.value_bias),
            sl(&mut self.attn_out),
            sl(&mut self.attn_out_bias),
            sl(&mut self.ff_in),
            sl(&mut self.ff_in_bias),
            sl(&mut self.ff_out),
            sl(&mut self.ff_out_bias),
            sl(&mut self.norm_scale),
            sl(&mut self.norm_shift),
        ]
    }
}

/// Intermediate values of one forward pass, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct TinyTape {
    ids: Vec<u32>,
    x0: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    attn: Vec<Array2<f64>>,
    heads_out: Array2<f64>,
    x1: Array2<f64>,
    pre_act: Array2<f64>,
    act: Array2<f64>,
    normed: Array2<f64>,
    inv_std: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TinyEncoder {
    spec: EncoderSpec,
    pub params: TinyParams,
}

impl TinyEncoder {
    /// Deterministic initialization from `spec.seed`.
    pub fn new(spec: EncoderSpec) -> Result<Self, EncoderError> {
        Self::check_spec(&spec)?;
        let params = TinyParams::init(&spec);
        Ok(TinyEncoder { spec, params })
    }

    pub fn from_params(spec: EncoderSpec, params: TinyParams) -> Result<Self, EncoderError> {
        Self::check_spec(&spec)?;
        let expected = TinyParams::zeros(&spec);
        for (a, b) in expected.tensors().iter().zip(params.tensors()) {
            if a.shape != b.shape {
                return Err(EncoderError::InvalidSpec(format!(
                    "tensor `{}` has shape {:?}, expected {:?}",
                    a.name, b.shape, a.shape
                )));
            }
        }
        Ok(TinyEncoder { spec, params })
    }

    fn check_spec(spec: &EncoderSpec) -> Result<(), EncoderError> {
        spec.validate()?;
        if spec.kind != EncoderKind::TinyReference {
            return Err(EncoderError::InvalidSpec(
                "the tiny encoder requires kind = tiny-reference".into(),
            ));
        }
        Ok(())
    }

    fn check_tokens(&self, tokens: &TokenSequence) -> Result<(), EncoderError> {
        if tokens.is_empty() {
            return Err(EncoderError::EmptySequence);
        }
        if tokens.len() > self.spec.max_length {
            return Err(EncoderError::SequenceTooLong {
                len: tokens.len(),
                max: self.spec.max_length,
            });
        }
        let vocab = self.spec.vocab.buckets;
        if let Some(&id) = tokens.token_ids.iter().find(|&&id| id as usize >= vocab) {
            return Err(EncoderError::TokenOutOfRange { id, vocab });
        }
        Ok(())
    }

    fn forward(&self, tokens: &TokenSequence) -> Result<(Array2<f64>, TinyTape), EncoderError> {
        self.check_tokens(tokens)?;
        let p = &self.params;
        let d = self.spec.width;
        let n_heads = self.spec.heads;
        let dh = d / n_heads;
        let scale = (dh as f64).powf(-0.5);
        let len = tokens.len();

        let mut x0 = Array2::zeros((len, d));
        for (i, &id) in tokens.token_ids.iter().enumerate() {
            let mut row = x0.row_mut(i);
            row.assign(&p.token_embedding.row(id as usize));
            row += &p.position_embedding.row(i);
        }

        let q = x0.dot(&p.query) + &p.query_bias;
        let k = x0.dot(&p.key) + &p.key_bias;
        let v = x0.dot(&p.value) + &p.value_bias;

        let mut heads_out = Array2::zeros((len, d));
        let mut attn = Vec::with_capacity(n_heads);
        for h in 0..n_heads {
            let cols = s![.., h * dh..(h + 1) * dh];
            let mut scores = q.slice(cols).dot(&k.slice(cols).t()) * scale;
            for mut row in scores.rows_mut() {
                let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
                row.mapv_inplace(|x| (x - max).exp());
                let sum = row.sum();
                row /= sum;
            }
            heads_out.slice_mut(cols).assign(&scores.dot(&v.slice(cols)));
            attn.push(scores);
        }

        let x1 = &x0 + &(heads_out.dot(&p.attn_out) + &p.attn_out_bias);
        let pre_act = x1.dot(&p.ff_in) + &p.ff_in_bias;
        let act = pre_act.mapv(gelu);
        let x2 = &x1 + &(act.dot(&p.ff_out) + &p.ff_out_bias);

        let mut normed = Array2::zeros((len, d));
        let mut inv_std = Array1::zeros(len);
        for i in 0..len {
            let row = x2.row(i);
            let mean = row.mean().expect("non-empty row");
            let var = row.mapv(|x| (x - mean).powi(2)).mean().expect("non-empty row");
            let is = 1.0 / (var + LN_EPS).sqrt();
            inv_std[i] = is;
            normed.row_mut(i).assign(&row.mapv(|x| (x - mean) * is));
        }
        let out = &normed * &p.norm_scale + &p.norm_shift;

        let tape = TinyTape {
            ids: tokens.token_ids.clone(),
            x0,
            q,
            k,
            v,
            attn,
            heads_out,
            x1,
            pre_act,
            act,
            normed,
            inv_std,
        };
        Ok((out, tape))
    }

    /// Backward pass for an arbitrary upstream gradient on all token reps.
    pub fn backward_full(&self, tape: &TinyTape, d_out: ArrayView2<'_, f64>, g: &mut TinyParams) {
        let p = &self.params;
        let d = self.spec.width;
        let n_heads = self.spec.heads;
        let dh = d / n_heads;
        let scale = (dh as f64).powf(-0.5);
        let len = tape.ids.len();

        // Layer norm.
        g.norm_scale += &(&d_out * &tape.normed).sum_axis(Axis(0));
        g.norm_shift += &d_out.sum_axis(Axis(0));
        let d_normed = &d_out * &p.norm_scale;
        let mut dx2 = Array2::zeros((len, d));
        for i in 0..len {
            let dn = d_normed.row(i);
            let xh = tape.normed.row(i);
            let mean_dn = dn.mean().expect("non-empty row");
            let mean_dn_xh = (&dn * &xh).mean().expect("non-empty row");
            let is = tape.inv_std[i];
            dx2.row_mut(i)
                .assign(&((&dn - mean_dn - &(&xh * mean_dn_xh)) * is));
        }

        // Feed-forward block.
        g.ff_out += &tape.act.t().dot(&dx2);
        g.ff_out_bias += &dx2.sum_axis(Axis(0));
        let d_act = dx2.dot(&p.ff_out.t());
        let d_pre = &d_act * &tape.pre_act.mapv(gelu_grad);
        g.ff_in += &tape.x1.t().dot(&d_pre);
        g.ff_in_bias += &d_pre.sum_axis(Axis(0));
        let dx1 = &dx2 + &d_pre.dot(&p.ff_in.t());

        // Attention block.
        g.attn_out += &tape.heads_out.t().dot(&dx1);
        g.attn_out_bias += &dx1.sum_axis(Axis(0));
        let d_heads = dx1.dot(&p.attn_out.t());
        let mut dq = Array2::zeros((len, d));
        let mut dk = Array2::zeros((len, d));
        let mut dv = Array2::zeros((len, d));
        for (h, a) in tape.attn.iter().enumerate() {
            let cols = s![.., h * dh..(h + 1) * dh];
            let d_oh = d_heads.slice(cols);
            let d_a = d_oh.dot(&tape.v.slice(cols).t());
            dv.slice_mut(cols).assign(&a.t().dot(&d_oh));
            let mut d_scores = Array2::zeros((len, len));
            for i in 0..len {
                let ar = a.row(i);
                let dar = d_a.row(i);
                let dot = ar.dot(&dar);
                d_scores.row_mut(i).assign(&(&ar * &(&dar - dot) * scale));
            }
            dq.slice_mut(cols).assign(&d_scores.dot(&tape.k.slice(cols)));
            dk.slice_mut(cols).assign(&d_scores.t().dot(&tape.q.slice(cols)));
        }
        g.query += &tape.x0.t().dot(&dq);
        g.query_bias += &dq.sum_axis(Axis(0));
        g.key += &tape.x0.t().dot(&dk);
        g.key_bias += &dk.sum_axis(Axis(0));
        g.value += &tape.x0.t().dot(&dv);
        g.value_bias += &dv.sum_axis(Axis(0));
        let dx0 = &dx1 + &dq.dot(&p.query.t()) + &dk.dot(&p.key.t()) + &dv.dot(&p.value.t());

        for (i, &id) in tape.ids.iter().enumerate() {
            let row = dx0.row(i);
            let mut te = g.token_embedding.row_mut(id as usize);
            te += &row;
            let mut pe = g.position_embedding.row_mut(i);
            pe += &row;
        }
    }
}

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_CUBIC: f64 = 0.044_715;

/// GELU, tanh approximation.
fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (SQRT_2_OVER_PI * (x + GELU_CUBIC * x.powi(3))).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (SQRT_2_OVER_PI * (x + GELU_CUBIC * x.powi(3))).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_CUBIC * x * x)
}

impl SequenceEncoder for TinyEncoder {
    fn spec(&self) -> &EncoderSpec {
        &self.spec
    }

    fn tokenize(&self, text: &CleanText) -> TokenSequence {
        tokenize_truncate(text, self.spec.max_length, &self.spec.vocab)
    }

    fn encode(&self, tokens: &TokenSequence) -> Result<EncoderOutput, EncoderError> {
        let (token_reps, _) = self.forward(tokens)?;
        Ok(EncoderOutput { token_reps })
    }
}

impl ParameterSet for TinyEncoder {
    fn tensors(&self) -> Vec<TensorRef<'_>> {
        self.params.tensors()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.params.tensors_mut()
    }
}

impl TrainableEncoder for TinyEncoder {
    type Tape = TinyTape;
    type Gradients = TinyParams;

    fn forward_train(
        &self,
        tokens: &TokenSequence,
    ) -> Result<(EncoderOutput, TinyTape), EncoderError> {
        let (token_reps, tape) = self.forward(tokens)?;
        Ok((EncoderOutput { token_reps }, tape))
    }

    fn backward(&self, tape: &TinyTape, d_first: ArrayView1<'_, f64>, grads: &mut TinyParams) {
        let mut d_out = Array2::zeros((tape.ids.len(), self.spec.width));
        d_out.row_mut(0).assign(&d_first);
        self.backward_full(tape, d_out.view(), grads);
    }

    fn zero_gradients(&self) -> TinyParams {
        TinyParams::zeros(&self.spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::START_TOKEN;

    fn small_spec() -> EncoderSpec {
        EncoderSpec {
            width: 8,
            heads: 2,
            ff_width: 12,
            max_length: 10,
            vocab: crate::encoder::VocabSpec { buckets: 32 },
            ..Default::default()
        }
    }

    #[test]
    fn shapes_and_first_token() {
        let enc = TinyEncoder::new(EncoderSpec::default()).unwrap();
        let tokens = TokenSequence {
            token_ids: vec![START_TOKEN, 5, 77, 4095],
        };
        let out = enc.encode(&tokens).unwrap();
        assert_eq!(out.token_reps.dim(), (4, 32));
        assert_eq!(out.first_token_rep(), out.token_reps.row(0));
        assert!(out.token_reps.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn eval_is_bitwise_deterministic() {
        let enc = TinyEncoder::new(EncoderSpec::default()).unwrap();
        let tokens = TokenSequence {
            token_ids: vec![0, 1, 2, 3],
        };
        assert_eq!(enc.encode(&tokens).unwrap(), enc.encode(&tokens).unwrap());
        let again = TinyEncoder::new(EncoderSpec::default()).unwrap();
        assert_eq!(enc, again);
    }

    #[test]
    fn out_of_range_id_is_named() {
        let enc = TinyEncoder::new(small_spec()).unwrap();
        let err = enc
            .encode(&TokenSequence {
                token_ids: vec![0, 32],
            })
            .unwrap_err();
        assert_eq!(err, EncoderError::TokenOutOfRange { id: 32, vocab: 32 });
        assert!(err.to_string().contains("32"));
    }

    #[test]
    fn rejects_bad_specs() {
        let mut spec = small_spec();
        spec.heads = 3;
        assert!(TinyEncoder::new(spec).is_err());
        let spec = EncoderSpec {
            kind: EncoderKind::ExternalPretrained,
            ..Default::default()
        };
        assert!(TinyEncoder::new(spec).is_err());
    }

    #[test]
    fn gelu_grad_matches_difference() {
        for &x in &[-3.0, -0.5, 0.0, 0.7, 2.5] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8);
        }
    }

    #[test]
    fn full_backward_matches_finite_differences() {
        // Random linear functional over every output entry.
        let enc = TinyEncoder::new(small_spec()).unwrap();
        let tokens = TokenSequence {
            token_ids: vec![0, 3, 9, 3, 31],
        };
        let (out, tape) = enc.forward(&tokens).unwrap();
        let weights = Array2::from_shape_fn(out.dim(), |(i, j)| ((i * 7 + j * 3) % 5) as f64 - 2.0);
        let loss = |e: &TinyEncoder| (&e.forward(&tokens).unwrap().0 * &weights).sum();
        let mut g = enc.zero_gradients();
        enc.backward_full(&tape, weights.view(), &mut g);

        let h = 1e-5;
        let grads = g.tensors();
        for (t, gt) in grads.iter().enumerate() {
            for j in (0..gt.data.len()).step_by(1 + gt.data.len() / 7) {
                let mut plus = enc.clone();
                plus.tensors_mut()[t][j] += h;
                let mut minus = enc.clone();
                minus.tensors_mut()[t][j] -= h;
                let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
                let a = gt.data[j];
                assert!(
                    (fd - a).abs() <= 1e-6 + 1e-4 * fd.abs().max(a.abs()),
                    "{}[{j}]: analytic {a} vs fd {fd}",
                    gt.name
                );
            }
        }
    }
}
