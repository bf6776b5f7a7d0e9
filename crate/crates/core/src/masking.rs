//! Cosine masking: the training-time mask-rate sampler and the
//! inference-time unmasking schedule.

use crate::error::{Error, Result};
use crate::tokenizer::TokenGrid;
use rand::seq::index;
use rand::Rng;
use std::f64::consts::FRAC_PI_2;

/// Maps a uniform draw to a mask rate with density `(2/pi)(1 - r^2)^(-1/2)`,
/// i.e. `r = sin(pi u / 2)`.
pub fn sample_mask_rate(u: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&u) {
        return Err(Error::invalid(format!("uniform draw {u} outside [0, 1]")));
    }
    Ok((FRAC_PI_2 * u).sin())
}

/// Positions masked in every frame of one training sample.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameMask {
    pub th: usize,
    pub tw: usize,
    pub masked: Vec<bool>,
}

impl FrameMask {
    pub fn from_positions(th: usize, tw: usize, positions: &[(usize, usize)]) -> Result<Self> {
        let mut masked = vec![false; th * tw];
        for &(r, c) in positions {
            if r >= th || c >= tw {
                return Err(Error::invalid(format!("mask position ({r}, {c}) outside {th}x{tw}")));
            }
            masked[r * tw + c] = true;
        }
        Ok(FrameMask { th, tw, masked })
    }

    pub fn count(&self) -> usize {
        self.masked.iter().filter(|&&m| m).count()
    }

    pub fn positions(&self) -> Vec<(usize, usize)> {
        (0..self.th * self.tw).filter(|&i| self.masked[i]).map(|i| (i / self.tw, i % self.tw)).collect()
    }

    /// Per-position mask over a whole `frames x th x tw` grid.
    pub fn materialize(&self, frames: usize) -> Vec<bool> {
        (0..frames).flat_map(|_| self.masked.iter().copied()).collect()
    }

    /// Replaces the masked positions of every frame with the mask id.
    pub fn apply(&self, targets: &TokenGrid) -> Result<TokenGrid> {
        if (targets.th, targets.tw) != (self.th, self.tw) {
            return Err(Error::ShapeMismatch(format!(
                "mask {}x{} against grid {}x{}",
                self.th, self.tw, targets.th, targets.tw
            )));
        }
        let mut out = targets.clone();
        let per = self.th * self.tw;
        for (i, tok) in out.tokens.iter_mut().enumerate() {
            if self.masked[i % per] {
                *tok = targets.mask_id();
            }
        }
        Ok(out)
    }
}

/// Number of positions masked for rate `r` on an `area`-position frame.
pub fn masked_count(r: f64, area: usize) -> usize {
    ((r * area as f64).ceil() as usize).clamp(1, area)
}

/// Masks `masked_count(r)` positions chosen uniformly without replacement.
pub fn mask_with_rate<R: Rng + ?Sized>(th: usize, tw: usize, r: f64, rng: &mut R) -> Result<FrameMask> {
    let area = th * tw;
    if area == 0 {
        return Err(Error::invalid("mask grid must have at least one position"));
    }
    let m = masked_count(r, area);
    let mut masked = vec![false; area];
    for i in index::sample(rng, area, m) {
        masked[i] = true;
    }
    Ok(FrameMask { th, tw, masked })
}

/// Draws a cosine-distributed rate and a mask shared by all frames.
pub fn sample_train_mask<R: Rng + ?Sized>(th: usize, tw: usize, rng: &mut R) -> Result<FrameMask> {
    let r = sample_mask_rate(rng.random::<f64>())?;
    mask_with_rate(th, tw, r, rng)
}

/// How many masked tokens are committed at each decoding step.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
pub struct UnmaskSchedule {
    pub steps: usize,
    pub counts: Vec<usize>,
}

impl UnmaskSchedule {
    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor().max(0.0) as usize
}

/// Splits `masked` tokens over `steps` steps following the remaining-mask
/// curve `round(M cos(pi t / 2T))`.
///
/// The curve is clamped so that every step commits at least one token; any
/// deficit this creates early on is carried to later steps.
pub fn inference_unmask_counts(masked: usize, steps: usize) -> Result<UnmaskSchedule> {
    if masked == 0 {
        return Err(Error::invalid("schedule needs at least one masked token"));
    }
    if steps == 0 {
        return Err(Error::invalid("schedule needs at least one step"));
    }
    if steps > masked {
        return Err(Error::MoreStepsThanMasked { steps, masked });
    }
    let mut counts = Vec::with_capacity(steps);
    let mut prev = masked;
    for t in 1..=steps {
        let curve = if t == steps {
            0
        } else {
            round_half_up(masked as f64 * (FRAC_PI_2 * t as f64 / steps as f64).cos())
        };
        let remaining = curve.min(prev - 1).max(steps - t);
        counts.push(prev - remaining);
        prev = remaining;
    }
    Ok(UnmaskSchedule { steps, counts })
}
