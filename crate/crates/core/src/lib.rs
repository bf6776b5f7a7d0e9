//! Masked visual-token world model at desk scale.
//!
//! Frames are tokenized with a patch codebook, a spatial-temporal
//! patchwise transformer predicts masked tokens under text and action
//! prompts, and a confidence-ordered parallel decoder turns masked grids
//! into videos for image-to-video, text-to-video, inpainting, stylization
//! and action-to-video.

pub mod checkpoint;
pub mod cli;
pub mod data;
pub mod error;
pub mod formats;
pub mod inference;
pub mod linalg;
pub mod masking;
pub mod model;
pub mod params;
pub mod prompt;
pub mod stpt;
pub mod tokenizer;
pub mod training;

pub use error::{Error, Result};
pub use model::{Model, ModelConfig, ModelParams};
pub use prompt::{ActionTrack, PromptConfig, PromptEmbedding, PromptInput};
pub use stpt::{Mode, StptConfig};
pub use tokenizer::{Codebook, TokenGrid, Video};
