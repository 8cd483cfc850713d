//! Context refinement over an ensemble `C` of shape `[L, S, d]`:
//! self-attention across all `L*S` clips with a residual connection, a
//! uni-directional LSTM over the flattened clip sequence, and a two-way
//! speaking/silent classifier.
//!
//! Everything runs batched over a leading dimension `B`; the single-sample
//! functions are thin wrappers used for inspection and tests.

mod lstm;
mod pairwise;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{apply_bn_updates, BnUpdate};
use crate::error::{Error, Result};
use crate::tensor::{ParamStore, Tensor};
use crate::Mode;

pub use lstm::{lstm_forward, LstmWeights};
pub use pairwise::{pairwise_forward, PairwiseWeights};

/// Hidden size of the temporal refinement LSTM.
pub const TEMPORAL_DIM: usize = 128;

/// Which LSTM output feeds the classifier.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScorePosition {
    /// The step holding the reference speaker at the reference time.
    Reference,
    /// The final step, after the whole ensemble has been read.
    Last,
    /// Mean of all step outputs.
    MeanPool,
}

/// Model family; all but `Full` are ablations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AscVariant {
    /// Pairwise refinement, temporal refinement, classifier.
    Full,
    /// Pairwise refinement, then a linear classifier on the flattened tensor.
    PairwiseOnly,
    /// Temporal refinement directly on the ensemble.
    TemporalOnly,
    /// A single linear layer on the flattened ensemble.
    ContextLinear,
    /// Pairwise refinement followed by a two-layer perceptron.
    PairwiseMlp,
}

impl AscVariant {
    pub fn uses_pairwise(self) -> bool {
        matches!(self, AscVariant::Full | AscVariant::PairwiseOnly | AscVariant::PairwiseMlp)
    }

    pub fn uses_lstm(self) -> bool {
        matches!(self, AscVariant::Full | AscVariant::TemporalOnly)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AscConfig {
    pub variant: AscVariant,
    /// Clips per speaker (L).
    pub clips: usize,
    /// Speakers per ensemble (S).
    pub speakers: usize,
    /// Clip embedding size (d).
    pub embedding_dim: usize,
    /// Output channels of the query/key/value projections.
    pub attention_dim: usize,
    pub hidden_dim: usize,
    pub score_position: ScorePosition,
    /// Batch norm on the classifier input.
    pub batch_norm: bool,
    pub mlp_hidden: usize,
    pub bn_eps: f64,
    pub bn_momentum: f64,
    pub forget_bias: f64,
    /// Std of the initial output projection of the attention branch.
    pub delta_init_std: f64,
}

impl Default for AscConfig {
    fn default() -> Self {
        Self {
            variant: AscVariant::Full,
            clips: 11,
            speakers: 3,
            embedding_dim: 128,
            attention_dim: 64,
            hidden_dim: TEMPORAL_DIM,
            score_position: ScorePosition::Reference,
            batch_norm: true,
            mlp_hidden: 64,
            bn_eps: 1e-5,
            bn_momentum: 0.9,
            forget_bias: 1.0,
            delta_init_std: 0.01,
        }
    }
}

impl AscConfig {
    pub fn for_embedding(embedding_dim: usize) -> Self {
        Self {
            embedding_dim,
            attention_dim: (embedding_dim / 2).max(1),
            ..Self::default()
        }
    }

    pub fn sequence_len(&self) -> usize {
        self.clips * self.speakers
    }

    /// Sequence index of (reference time, slot 0) under time-major
    /// flattening.
    pub fn reference_index(&self) -> usize {
        (self.clips / 2) * self.speakers
    }

    pub fn validate(&self) -> Result<()> {
        if self.clips == 0 || self.speakers == 0 || self.embedding_dim == 0 || self.attention_dim == 0 {
            return Err(Error::Config("ASC dimensions must be positive".into()));
        }
        if self.hidden_dim == 0 || self.mlp_hidden == 0 {
            return Err(Error::Config("ASC hidden sizes must be positive".into()));
        }
        Ok(())
    }
}

/// Pairwise affinities and refined features for one ensemble.
#[derive(Clone, Debug)]
pub struct AttentionState {
    /// `[LS, LS]`, rows sum to one.
    pub b: Tensor,
    /// `[L, S, d]`
    pub refined: Tensor,
}

/// Batched model outputs.
#[derive(Clone, Debug)]
pub struct AscOutput {
    /// `[B, 2]` silent/speaking logits.
    pub logits: Tensor,
    /// `[B, LS, LS]` when the variant has pairwise refinement.
    pub attention: Option<Tensor>,
    /// `[B, L, S, d]` pairwise-refined ensemble, when computed.
    pub refined: Option<Tensor>,
}

pub fn speaking_probability(logits: [f64; 2]) -> f64 {
    crate::tensor::sigmoid(logits[1] - logits[0])
}

#[derive(Clone, Debug)]
pub struct AscModel {
    pub cfg: AscConfig,
    pub params: ParamStore,
}

impl AscModel {
    pub fn new(cfg: AscConfig, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let mut params = ParamStore::new();
        let (d, a, h) = (cfg.embedding_dim, cfg.attention_dim, cfg.hidden_dim);
        if cfg.variant.uses_pairwise() {
            for name in ["w_alpha", "w_beta", "w_gamma"] {
                params.insert_normal(&format!("asc.pairwise.{name}"), &[d, a], (1.0 / d as f64).sqrt(), rng);
            }
            params.insert_normal("asc.pairwise.w_delta", &[a, d], cfg.delta_init_std, rng);
        }
        let flat = cfg.sequence_len() * d;
        match cfg.variant {
            AscVariant::Full | AscVariant::TemporalOnly => {
                let k = (1.0 / h as f64).sqrt();
                params.insert_normal("asc.lstm.w_ih", &[d, 4 * h], k, rng);
                params.insert_normal("asc.lstm.w_hh", &[h, 4 * h], k, rng);
                let mut bias = vec![0.0; 4 * h];
                bias[h..2 * h].iter_mut().for_each(|b| *b = cfg.forget_bias);
                params.insert("asc.lstm.bias", Tensor::new(bias, &[4 * h])?);
                if cfg.batch_norm {
                    crate::encoder::init_bn(&mut params, "asc.bn", h);
                }
                params.insert_normal("asc.head.weight", &[h, 2], (1.0 / h as f64).sqrt(), rng);
                params.insert_zeros("asc.head.bias", &[2]);
            }
            AscVariant::ContextLinear | AscVariant::PairwiseOnly => {
                params.insert_normal("asc.linear.weight", &[flat, 2], (1.0 / flat as f64).sqrt(), rng);
                params.insert_zeros("asc.linear.bias", &[2]);
            }
            AscVariant::PairwiseMlp => {
                let m = cfg.mlp_hidden;
                params.insert_he("asc.mlp.w1", &[flat, m], flat, rng);
                params.insert_zeros("asc.mlp.b1", &[m]);
                params.insert_normal("asc.mlp.w2", &[m, 2], (1.0 / m as f64).sqrt(), rng);
                params.insert_zeros("asc.mlp.b2", &[2]);
            }
        }
        Ok(Self { cfg, params })
    }

    fn check_input(&self, c: &Tensor) -> Result<(usize, usize, usize, usize)> {
        let s = c.shape();
        if s.len() != 4 || s[1] != self.cfg.clips || s[2] != self.cfg.speakers || s[3] != self.cfg.embedding_dim {
            return Err(Error::shape(
                "asc_forward",
                format!(
                    "ensemble batch {s:?}, expected [B, {}, {}, {}]",
                    self.cfg.clips, self.cfg.speakers, self.cfg.embedding_dim
                ),
            ));
        }
        Ok((s[0], s[1], s[2], s[3]))
    }

    pub fn pairwise_weights(&self) -> Result<PairwiseWeights<'_>> {
        Ok(PairwiseWeights {
            alpha: self.params.get("asc.pairwise.w_alpha")?,
            beta: self.params.get("asc.pairwise.w_beta")?,
            gamma: self.params.get("asc.pairwise.w_gamma")?,
            delta: self.params.get("asc.pairwise.w_delta")?,
        })
    }

    pub fn lstm_weights(&self) -> Result<LstmWeights<'_>> {
        Ok(LstmWeights {
            w_ih: self.params.get("asc.lstm.w_ih")?,
            w_hh: self.params.get("asc.lstm.w_hh")?,
            bias: self.params.get("asc.lstm.bias")?,
        })
    }

    /// Forward over `[B, L, S, d]`. Training mode also returns batch-norm
    /// statistics.
    pub fn forward(&self, c: &Tensor, mode: Mode) -> Result<(AscOutput, Vec<BnUpdate>)> {
        let (b, l, s, d) = self.check_input(c)?;
        let ls = l * s;
        let mut updates = Vec::new();
        let (features, attention, refined) = if self.cfg.variant.uses_pairwise() {
            let (att, refined) = pairwise_forward(c, &self.pairwise_weights()?)?;
            (refined.clone(), Some(att), Some(refined))
        } else {
            (c.clone(), None, None)
        };

        let logits = match self.cfg.variant {
            AscVariant::Full | AscVariant::TemporalOnly => {
                let seq = features.reshape(&[b, ls, d])?;
                let steps = match self.cfg.score_position {
                    ScorePosition::Reference => self.cfg.reference_index() + 1,
                    _ => ls,
                };
                let hidden = lstm_forward(&seq, &self.lstm_weights()?, steps)?;
                let h = self.cfg.hidden_dim;
                let pooled = match self.cfg.score_position {
                    ScorePosition::Reference | ScorePosition::Last => {
                        hidden.narrow(1, steps - 1, 1)?.reshape(&[b, h])?
                    }
                    ScorePosition::MeanPool => {
                        // mean over the sequence axis via a [B*h, steps] view
                        let t = hidden.transpose()?.reshape(&[b * h, steps])?;
                        let ones = Tensor::full(&[steps, 1], 1.0 / steps as f64);
                        t.matmul(&ones)?.reshape(&[b, h])?
                    }
                };
                let pooled = if self.cfg.batch_norm {
                    crate::encoder::batch_norm(&pooled, &self.params, "asc.bn", mode, self.cfg.bn_eps, &mut updates)?
                } else {
                    pooled
                };
                pooled
                    .matmul(self.params.get("asc.head.weight")?)?
                    .add_bias(self.params.get("asc.head.bias")?)?
            }
            AscVariant::ContextLinear | AscVariant::PairwiseOnly => features
                .reshape(&[b, ls * d])?
                .matmul(self.params.get("asc.linear.weight")?)?
                .add_bias(self.params.get("asc.linear.bias")?)?,
            AscVariant::PairwiseMlp => features
                .reshape(&[b, ls * d])?
                .matmul(self.params.get("asc.mlp.w1")?)?
                .add_bias(self.params.get("asc.mlp.b1")?)?
                .relu()?
                .matmul(self.params.get("asc.mlp.w2")?)?
                .add_bias(self.params.get("asc.mlp.b2")?)?,
        };
        Ok((
            AscOutput {
                logits,
                attention,
                refined,
            },
            updates,
        ))
    }

    /// Cross-entropy on the reference labels.
    pub fn loss(&self, c: &Tensor, labels: &[usize], mode: Mode) -> Result<(Tensor, Vec<BnUpdate>)> {
        let (out, updates) = self.forward(c, mode)?;
        Ok((out.logits.cross_entropy_with_logits(labels)?, updates))
    }

    pub fn apply_bn_updates(&mut self, updates: &[BnUpdate]) -> Result<()> {
        apply_bn_updates(&mut self.params, updates, self.cfg.bn_momentum)
    }

    /// Evaluation-mode speaking probabilities for a batch.
    pub fn predict(&self, c: &Tensor) -> Result<Vec<f64>> {
        let (out, _) = self.forward(c, Mode::Eval)?;
        Ok(out
            .logits
            .data()
            .chunks(2)
            .map(|l| speaking_probability([l[0], l[1]]))
            .collect())
    }

    /// Pairwise refinement of a single `[L, S, d]` ensemble.
    pub fn pairwise_refine(&self, c: &Tensor) -> Result<AttentionState> {
        let batched = self.single(c)?;
        let (att, refined) = pairwise_forward(&batched, &self.pairwise_weights()?)?;
        let ls = self.cfg.sequence_len();
        Ok(AttentionState {
            b: att.reshape(&[ls, ls])?,
            refined: refined.reshape(c.shape())?,
        })
    }

    /// All `L*S` LSTM outputs for a single refined ensemble: `[LS, hidden]`.
    pub fn temporal_refine(&self, refined: &Tensor) -> Result<Tensor> {
        let batched = self.single(refined)?;
        let (ls, d, h) = (self.cfg.sequence_len(), self.cfg.embedding_dim, self.cfg.hidden_dim);
        let seq = batched.reshape(&[1, ls, d])?;
        lstm_forward(&seq, &self.lstm_weights()?, ls)?.reshape(&[ls, h])
    }

    /// Classifier over a temporal-refinement output sequence.
    pub fn score(&self, asc_seq: &Tensor) -> Result<f64> {
        let h = self.cfg.hidden_dim;
        if asc_seq.rank() != 2 || asc_seq.shape()[1] != h || asc_seq.shape()[0] == 0 {
            return Err(Error::shape("score", format!("sequence {:?}, expected [LS, {h}]", asc_seq.shape())));
        }
        let n = asc_seq.shape()[0];
        let pooled = match self.cfg.score_position {
            ScorePosition::Reference => asc_seq.narrow(0, self.cfg.reference_index().min(n - 1), 1)?,
            ScorePosition::Last => asc_seq.narrow(0, n - 1, 1)?,
            ScorePosition::MeanPool => {
                Tensor::full(&[1, n], 1.0 / n as f64).matmul(asc_seq)?
            }
        };
        let pooled = if self.cfg.batch_norm {
            let mut sink = Vec::new();
            crate::encoder::batch_norm(&pooled, &self.params, "asc.bn", Mode::Eval, self.cfg.bn_eps, &mut sink)?
        } else {
            pooled
        };
        let logits = pooled
            .matmul(self.params.get("asc.head.weight")?)?
            .add_bias(self.params.get("asc.head.bias")?)?;
        Ok(speaking_probability([logits.data()[0], logits.data()[1]]))
    }

    /// Evaluation-mode score and attention state for one ensemble.
    pub fn asc_forward(&self, c: &Tensor) -> Result<(f64, Option<AttentionState>)> {
        let batched = self.single(c)?;
        let (out, _) = self.forward(&batched, Mode::Eval)?;
        let l = out.logits.data();
        let ls = self.cfg.sequence_len();
        let state = match (out.attention, out.refined) {
            (Some(a), Some(r)) => Some(AttentionState {
                b: a.reshape(&[ls, ls])?,
                refined: r.reshape(c.shape())?,
            }),
            _ => None,
        };
        Ok((speaking_probability([l[0], l[1]]), state))
    }

    fn single(&self, c: &Tensor) -> Result<Tensor> {
        if c.rank() != 3 {
            return Err(Error::shape("asc", format!("ensemble must be [L, S, d], got {:?}", c.shape())));
        }
        let mut shape = vec![1];
        shape.extend_from_slice(c.shape());
        let batched = c.reshape(&shape)?;
        self.check_input(&batched)?;
        Ok(batched)
    }
}
