//! The full trainable model: prompt encoder plus transformer, with a
//! single parameter tree shared by training, checkpoints and decoding.

use crate::error::Result;
use crate::linalg::Real;
use crate::params::{impl_params, Params};
use crate::prompt::{self, PromptCache, PromptConfig, PromptEmbedding, PromptInput, PromptParams};
use crate::stpt::{self, Mode, StptCache, StptConfig, StptParams};
use crate::tokenizer::TokenGrid;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub stpt: StptConfig,
    pub prompt: PromptConfig,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.stpt.validate()?;
        self.prompt.validate()
    }

    /// Stable 16-hex-digit digest of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(&Sha256::digest(&json)[..8])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub prompt: PromptParams<T>,
    pub stpt: StptParams<T>,
}

impl_params!(ModelParams {} nested { prompt, stpt });

#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub params: ModelParams<T>,
}

/// Activations of one conditioned forward pass.
pub struct ForwardCache<T> {
    pub prompt: PromptCache<T>,
    pub stpt: StptCache<T>,
}

impl<T: Real> Model<T> {
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let prompt = PromptParams::init(&config.prompt, config.stpt.channels, &mut rng);
        let stpt = StptParams::init(&config.stpt, &mut rng);
        Ok(Model { config, params: ModelParams { prompt, stpt } })
    }

    pub fn zero_grads(&self) -> ModelParams<T> {
        Self::zero_grads_for(&self.config)
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        let mut out = Model::<U> { config: self.config.clone(), params: Model::<U>::zero_grads_for(&self.config) };
        let src = self.params.named();
        let mut i = 0;
        out.params.visit_mut("", &mut |_, t| {
            *t = src[i].1.cast();
            i += 1;
        });
        out
    }

    fn zero_grads_for(config: &ModelConfig) -> ModelParams<T> {
        ModelParams {
            prompt: PromptParams::zeros(&config.prompt, config.stpt.channels),
            stpt: StptParams::zeros(&config.stpt),
        }
    }

    pub fn prompt(&self, input: &PromptInput, frames: usize) -> Result<(PromptEmbedding<T>, PromptCache<T>)> {
        prompt::encode_prompt(input, frames, &self.params.prompt)
    }

    pub fn null_prompt(&self, frames: usize) -> Result<PromptEmbedding<T>> {
        Ok(self.prompt(&PromptInput::null(), frames)?.0)
    }

    /// Logits for an already-built prompt.
    pub fn logits(&self, tokens: &TokenGrid, prompt: &PromptEmbedding<T>, mode: Mode) -> Result<Vec<T>> {
        Ok(stpt::stpt_forward(tokens, prompt, mode, &self.config.stpt, &self.params.stpt)?.0)
    }

    pub fn forward(&self, tokens: &TokenGrid, input: &PromptInput, mode: Mode) -> Result<(Vec<T>, ForwardCache<T>)> {
        let (emb, prompt) = self.prompt(input, tokens.frames)?;
        let (logits, stpt) = stpt::stpt_forward(tokens, &emb, mode, &self.config.stpt, &self.params.stpt)?;
        Ok((logits, ForwardCache { prompt, stpt }))
    }

    pub fn backward(&self, d_logits: &[T], cache: &ForwardCache<T>, grad: &mut ModelParams<T>) -> Result<()> {
        let d_prompt = stpt::stpt_backward(d_logits, &cache.stpt, &self.config.stpt, &self.params.stpt, &mut grad.stpt)?;
        prompt::encode_prompt_backward(&d_prompt, &cache.prompt, &self.params.prompt, &mut grad.prompt);
        Ok(())
    }
}
