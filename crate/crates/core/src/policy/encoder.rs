//! Observation encoder: per-label pooled occupancy of the latest image plus
//! the proprioception history.

use serde::{Deserialize, Serialize};

use crate::model::{Embedding, LabelGridImage, Observation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    /// Pooled cells per side.
    pub pool: usize,
    /// Observations per history window.
    pub history: usize,
    /// Labels registered in the training data; every other id shares the
    /// UNKNOWN channel.
    pub known_labels: usize,
    /// Grid side in cells.
    pub grid: usize,
}

impl EncoderConfig {
    pub const DEFAULT_POOL: usize = 4;
    pub const DEFAULT_HISTORY: usize = 2;

    pub fn new(known_labels: usize, grid: usize) -> Self {
        Self {
            pool: Self::DEFAULT_POOL,
            history: Self::DEFAULT_HISTORY,
            known_labels,
            grid,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.pool == 0 || self.grid % self.pool != 0 {
            return Err(format!("pool {} must divide grid {}", self.pool, self.grid));
        }
        if self.history == 0 {
            return Err("history must be at least 1".into());
        }
        if self.known_labels == 0 {
            return Err("no known labels".into());
        }
        Ok(())
    }

    pub fn channels(&self) -> usize {
        self.known_labels + 1
    }

    pub fn image_dim(&self) -> usize {
        self.channels() * self.pool * self.pool
    }

    pub fn dim(&self) -> usize {
        self.image_dim() + 3 * self.history
    }
}

/// Pooled per-channel occupancy fractions, channel-major. `channel_of` maps a
/// label id to its channel or None to skip the cell.
pub fn pool_channels(
    image: &LabelGridImage,
    pool: usize,
    channels: usize,
    channel_of: impl Fn(u16) -> Option<usize>,
) -> Vec<f64> {
    let block_w = image.width() / pool;
    let block_h = image.height() / pool;
    let per_cell = 1.0 / (block_w * block_h) as f64;
    let mut out = vec![0.0; channels * pool * pool];
    for r in 0..image.height() {
        let br = r / block_h;
        for c in 0..image.width() {
            if let Some(ch) = channel_of(image.get(r, c).0) {
                out[ch * pool * pool + br * pool + c / block_w] += per_cell;
            }
        }
    }
    out
}

/// Encodes the most recent `cfg.history` observations (oldest first). A
/// shorter history is padded by repeating its first observation.
pub fn encode(history: &[&Observation], cfg: &EncoderConfig) -> Embedding {
    assert!(!history.is_empty(), "encode needs at least one observation");
    let latest = history[history.len() - 1];
    let known = cfg.known_labels;
    let mut values = pool_channels(&latest.image, cfg.pool, cfg.channels(), |id| {
        Some((id as usize).min(known))
    });
    let pad = cfg.history.saturating_sub(history.len());
    let window = &history[history.len().saturating_sub(cfg.history)..];
    let w = cfg.grid as f64;
    for obs in std::iter::repeat_n(window[0], pad).chain(window.iter().copied()) {
        values.extend([obs.proprio.x / w, obs.proprio.y / w, obs.proprio.gripper]);
    }
    Embedding::new(values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{LabelId, Proprioception};

    fn obs(image: LabelGridImage) -> Observation {
        Observation {
            image,
            proprio: Proprioception::new(4.0, 8.0, 1.0),
            timestep: 0,
        }
    }

    #[test]
    fn dimension_formula() {
        let cfg = EncoderConfig::new(5, 32);
        assert_eq!(cfg.dim(), 6 * 16 + 6);
        let e = encode(&[&obs(LabelGridImage::filled(32, 32, LabelId(0)))], &cfg);
        assert_eq!(e.dim(), cfg.dim());
    }

    #[test]
    fn background_only_image() {
        let cfg = EncoderConfig::new(3, 8);
        let e = encode(&[&obs(LabelGridImage::filled(8, 8, LabelId(0)))], &cfg);
        let blocks = 16;
        assert!(e.values[..blocks].iter().all(|&v| (v - 1.0).abs() < 1e-12));
        assert!(e.values[blocks..cfg.image_dim()].iter().all(|&v| v == 0.0));
        assert_eq!(
            &e.values[cfg.image_dim()..],
            &[0.5, 1.0, 1.0, 0.5, 1.0, 1.0]
        );
    }

    #[test]
    fn unregistered_label_lands_in_unknown_channel() {
        let cfg = EncoderConfig::new(3, 8);
        let mut img = LabelGridImage::filled(8, 8, LabelId(0));
        img.set(0, 0, LabelId(9));
        img.set(0, 1, LabelId(9));
        let e = encode(&[&obs(img)], &cfg);
        let unknown = &e.values[3 * 16..4 * 16];
        assert!((unknown[0] - 0.5).abs() < 1e-12);
        assert!(e.values[16..3 * 16].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn history_pads_with_first() {
        let cfg = EncoderConfig {
            history: 3,
            ..EncoderConfig::new(2, 8)
        };
        let a = obs(LabelGridImage::filled(8, 8, LabelId(0)));
        let mut b = a.clone();
        b.proprio = Proprioception::new(0.0, 0.0, 0.0);
        let e = encode(&[&a, &b], &cfg);
        let p = &e.values[cfg.image_dim()..];
        assert_eq!(p, &[0.5, 1.0, 1.0, 0.5, 1.0, 1.0, 0.0, 0.0, 0.0]);
    }
}
