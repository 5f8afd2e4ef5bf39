//! Pointwise dual-encoder scoring: `g(context, response) = σ(cᵀ M r + b)`
//! with `c` and `r` produced by (optionally shared) sequence encoders.

use rand::Rng;
use rayon::prelude::*;

use crate::encoders::{Architecture, Encoder, EncoderCache, EncoderConfig};
use crate::error::{Error, Result};
use crate::numerics::{dot, sigmoid, HasParameters, Matrix, Parameter};
use crate::text::{EmbeddingMatrix, TokenSeq};

/// Probabilities are clipped to `[PROB_CLIP, 1 − PROB_CLIP]` before the log.
pub const PROB_CLIP: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub struct ScorerParams {
    pub m: Parameter,
    pub b: Parameter,
}

impl ScorerParams {
    /// `M` starts as the (rectangular) identity and `b` at zero, so an
    /// untrained model scores by dot-product similarity.
    pub fn new(context_dim: usize, response_dim: usize) -> Self {
        ScorerParams {
            m: Parameter::new("M", Matrix::rect_identity(context_dim, response_dim)),
            b: Parameter::new("b", Matrix::zeros(1, 1)),
        }
    }

    pub fn context_dim(&self) -> usize {
        self.m.value.rows()
    }

    pub fn response_dim(&self) -> usize {
        self.m.value.cols()
    }

    pub fn bias(&self) -> f64 {
        self.b.value[(0, 0)]
    }

    /// `cᵀ M r + b`.
    pub fn logit(&self, c: &[f64], r: &[f64]) -> Result<f64> {
        let predicted = predict_response_embedding(c, &self.m.value)?;
        if predicted.len() != r.len() {
            return Err(Error::shape(
                "logit",
                format!("M has {} columns", predicted.len()),
                format!("r has {}", r.len()),
            ));
        }
        Ok(dot(&predicted, r) + self.bias())
    }
}

/// The response embedding predicted from a context, `r′ = cᵀ M`.
pub fn predict_response_embedding(c: &[f64], m: &Matrix) -> Result<Vec<f64>> {
    if c.len() != m.rows() {
        return Err(Error::shape(
            "predict_response_embedding",
            format!("c has {}", c.len()),
            format!("M is {}x{}", m.rows(), m.cols()),
        ));
    }
    let mut out = vec![0.0; m.cols()];
    m.matvec_t_acc(c, &mut out)?;
    Ok(out)
}

/// Binary negative log-likelihood with clipped probability.
pub fn nll_loss(p: f64, flag: u8) -> Result<f64> {
    let p = p.clamp(PROB_CLIP, 1.0 - PROB_CLIP);
    match flag {
        1 => Ok(-p.ln()),
        0 => Ok(-(1.0 - p).ln()),
        other => Err(Error::validation(format!("flag must be 0 or 1, got {other}"))),
    }
}

/// d(nll)/d(logit); zero where the clip is active.
fn nll_logit_grad(p: f64, flag: u8) -> f64 {
    if !(PROB_CLIP..=1.0 - PROB_CLIP).contains(&p) {
        0.0
    } else {
        p - f64::from(flag)
    }
}

/// An example whose texts are already encoded against the model vocabulary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedPair {
    pub context: TokenSeq,
    pub response: TokenSeq,
    pub flag: u8,
}

#[derive(Debug, Clone)]
struct ItemForward {
    c: Vec<f64>,
    r: Vec<f64>,
    c_cache: EncoderCache,
    r_cache: EncoderCache,
    p: f64,
    flag: u8,
}

/// Activations of one forward pass over a batch, consumed by
/// [`DualEncoderModel::backward`].
#[derive(Debug, Clone)]
pub struct BatchForward {
    items: Vec<ItemForward>,
    architecture: Architecture,
    mean_loss: f64,
}

impl BatchForward {
    pub fn mean_loss(&self) -> f64 {
        self.mean_loss
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.items.iter().map(|i| i.p).collect()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualEncoderModel {
    pub embeddings: EmbeddingMatrix,
    pub context_encoder: Encoder,
    /// `None` when both sides share `context_encoder`.
    pub response_encoder: Option<Encoder>,
    pub scorer: ScorerParams,
}

impl DualEncoderModel {
    pub fn new<R: Rng>(embeddings: EmbeddingMatrix, config: &EncoderConfig, shared: bool, rng: &mut R) -> Result<Self> {
        let e = embeddings.dim();
        let (context_encoder, response_encoder) = if shared {
            (Encoder::new("", e, config, rng)?, None)
        } else {
            (
                Encoder::new("context.", e, config, rng)?,
                Some(Encoder::new("response.", e, config, rng)?),
            )
        };
        let scorer = ScorerParams::new(
            context_encoder.output_dim(),
            response_encoder.as_ref().unwrap_or(&context_encoder).output_dim(),
        );
        Self::from_parts(embeddings, context_encoder, response_encoder, scorer)
    }

    pub fn from_parts(
        embeddings: EmbeddingMatrix,
        context_encoder: Encoder,
        response_encoder: Option<Encoder>,
        scorer: ScorerParams,
    ) -> Result<Self> {
        let d_r = response_encoder.as_ref().unwrap_or(&context_encoder).output_dim();
        if scorer.context_dim() != context_encoder.output_dim() || scorer.response_dim() != d_r {
            return Err(Error::shape(
                "DualEncoderModel",
                format!("M is {}x{}", scorer.context_dim(), scorer.response_dim()),
                format!("encoders give {}x{d_r}", context_encoder.output_dim()),
            ));
        }
        if let Some(r) = &response_encoder {
            if r.architecture() != context_encoder.architecture() {
                return Err(Error::validation(
                    "context and response encoders must share an architecture",
                ));
            }
        }
        Ok(DualEncoderModel {
            embeddings,
            context_encoder,
            response_encoder,
            scorer,
        })
    }

    pub fn architecture(&self) -> Architecture {
        self.context_encoder.architecture()
    }

    pub fn is_shared(&self) -> bool {
        self.response_encoder.is_none()
    }

    pub fn response_encoder(&self) -> &Encoder {
        self.response_encoder.as_ref().unwrap_or(&self.context_encoder)
    }

    pub fn encode_context(&self, seq: &TokenSeq) -> Result<Vec<f64>> {
        self.context_encoder.encode(seq, &self.embeddings)
    }

    pub fn encode_response(&self, seq: &TokenSeq) -> Result<Vec<f64>> {
        self.response_encoder().encode(seq, &self.embeddings)
    }

    pub fn logit(&self, context: &TokenSeq, response: &TokenSeq) -> Result<f64> {
        let c = self.encode_context(context)?;
        let r = self.encode_response(response)?;
        self.scorer.logit(&c, &r)
    }

    /// `σ(cᵀ M r + b)`.
    pub fn score_pair(&self, context: &TokenSeq, response: &TokenSeq) -> Result<f64> {
        self.logit(context, response).map(sigmoid)
    }

    pub fn forward(&self, batch: &[EncodedPair]) -> Result<BatchForward> {
        if batch.is_empty() {
            return Err(Error::validation("empty batch"));
        }
        // Items are independent; the ordered collect keeps the loss sum and
        // the later backward pass in batch order.
        let items = batch
            .par_iter()
            .map(|pair| {
                let (c, c_cache) = self.context_encoder.forward(pair.context.tokens(), &self.embeddings)?;
                let (r, r_cache) = self
                    .response_encoder()
                    .forward(pair.response.tokens(), &self.embeddings)?;
                let p = sigmoid(self.scorer.logit(&c, &r)?);
                Ok(ItemForward {
                    c,
                    r,
                    c_cache,
                    r_cache,
                    p,
                    flag: pair.flag,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut total = 0.0;
        for item in &items {
            total += nll_loss(item.p, item.flag)?;
        }
        Ok(BatchForward {
            mean_loss: total / batch.len() as f64,
            architecture: self.architecture(),
            items,
        })
    }

    pub fn mean_loss(&self, batch: &[EncodedPair]) -> Result<f64> {
        self.forward(batch).map(|f| f.mean_loss)
    }

    /// Accumulates the gradient of the batch's mean loss into every
    /// parameter. In shared mode both sides feed the same encoder.
    pub fn backward(&mut self, pass: &BatchForward) -> Result<()> {
        if pass.architecture != self.architecture() {
            return Err(Error::CacheMismatch(format!(
                "forward pass came from a {} model, this is {}",
                pass.architecture,
                self.architecture()
            )));
        }
        let scale = 1.0 / pass.items.len() as f64;
        for item in &pass.items {
            if item.c.len() != self.scorer.context_dim() || item.r.len() != self.scorer.response_dim() {
                return Err(Error::CacheMismatch(
                    "encoder output sizes changed since forward".into(),
                ));
            }
            let dlogit = scale * nll_logit_grad(item.p, item.flag);
            if dlogit == 0.0 {
                continue;
            }
            self.scorer.m.grad.add_outer(dlogit, &item.c, &item.r)?;
            self.scorer.b.grad[(0, 0)] += dlogit;

            let m = &self.scorer.m.value;
            let mut dc = vec![0.0; m.rows()];
            m.matvec_acc(&item.r, &mut dc)?;
            dc.iter_mut().for_each(|v| *v *= dlogit);
            let mut dr = vec![0.0; m.cols()];
            m.matvec_t_acc(&item.c, &mut dr)?;
            dr.iter_mut().for_each(|v| *v *= dlogit);

            self.context_encoder
                .backward(&item.c_cache, &dc, &mut self.embeddings)?;
            let response_encoder = self.response_encoder.as_mut().unwrap_or(&mut self.context_encoder);
            response_encoder.backward(&item.r_cache, &dr, &mut self.embeddings)?;
        }
        Ok(())
    }

    /// Zeroes gradients, then runs forward and backward; returns the mean
    /// loss.
    pub fn loss_and_gradients(&mut self, batch: &[EncodedPair]) -> Result<f64> {
        self.zero_grads();
        let pass = self.forward(batch)?;
        self.backward(&pass)?;
        Ok(pass.mean_loss)
    }
}

impl HasParameters for DualEncoderModel {
    fn parameters(&self) -> Vec<&Parameter> {
        let mut p = vec![&self.embeddings.param];
        p.extend(self.context_encoder.parameters());
        if let Some(r) = &self.response_encoder {
            p.extend(r.parameters());
        }
        p.push(&self.scorer.m);
        p.push(&self.scorer.b);
        p
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        let mut p = vec![&mut self.embeddings.param];
        p.extend(self.context_encoder.parameters_mut());
        if let Some(r) = &mut self.response_encoder {
            p.extend(r.parameters_mut());
        }
        p.push(&mut self.scorer.m);
        p.push(&mut self.scorer.b);
        p
    }
}
