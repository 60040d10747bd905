//! Geometry contract between the simulator and the vision expert.
//!
//! The track is a bright background crossed by dark line bands. At camera
//! width `W` (pixels, `W >= 16`):
//!
//! | state             | bands (center, width)                                |
//! |-------------------|------------------------------------------------------|
//! | GoStraight        | main band (W/2 +- j, W/8)                            |
//! | TurnLeft          | main band (W/4 +- j, W/8)                            |
//! | TurnRight         | main band (3W/4 +- j, W/8)                           |
//! | CrossingStreets   | two main bands (5W/16 +- j, W/8), (11W/16 +- j, W/8) |
//! | StartSpeedLimit   | main band (W/2 +- j, W/8) + marker (5W/32 +- j, W/16)|
//! | StopSpeedLimit    | main band (W/2 +- j, W/8) + marker (27W/32 +- j, W/16)|
//! | NoTrack           | none                                                 |
//!
//! `j` is a per-frame placement jitter of up to W/32 pixels. Inside a band
//! the reflectance factor is [`LINE_FACTOR`]; elsewhere it is 1.0. Band
//! edges are sharp (one pixel), so their derivative is large; shadow edges
//! ramp over ~W/10 pixels, so a shadow never produces a strong derivative
//! on its own.

use super::{LightingProfile, TrackState};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Reflectance of the dark line relative to the background.
pub const LINE_FACTOR: f32 = 0.15;

/// A dark band: pixels `start .. start + width` (clipped to the image).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Band {
    pub start: usize,
    pub width: usize,
}

impl Band {
    fn centered(center: isize, width: usize, image_width: usize) -> Band {
        let half = (width / 2) as isize;
        let start = (center - half).clamp(0, (image_width.saturating_sub(width)) as isize);
        Band {
            start: start as usize,
            width,
        }
    }

    pub fn contains(&self, x: usize) -> bool {
        x >= self.start && x < self.start + self.width
    }
}

/// A soft-edged multiplicative shadow: flat `depth` in the interior, linear
/// penumbra ramps at both ends.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Shadow {
    pub start: usize,
    pub width: usize,
    pub depth: f32,
}

impl Shadow {
    pub fn factor(&self, x: usize, ramp: usize) -> f32 {
        if x < self.start || x >= self.start + self.width {
            return 1.0;
        }
        let into_left = x - self.start;
        let into_right = self.start + self.width - 1 - x;
        let edge = into_left.min(into_right);
        if ramp == 0 || edge >= ramp {
            return self.depth;
        }
        // Linear blend from 1.0 at the boundary to depth at ramp depth.
        let t = (edge + 1) as f32 / (ramp + 1) as f32;
        1.0 + t * (self.depth - 1.0)
    }
}

/// One fully-specified frame realization: band placement, shadow, jitter.
/// Sampling is random; rendering a `Scene` is pure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub state: TrackState,
    pub image_width: usize,
    pub bands: Vec<Band>,
    pub shadow: Option<Shadow>,
    pub jitter: f32,
}

impl Scene {
    pub fn main_band_width(image_width: usize) -> usize {
        (image_width / 8).max(2)
    }

    pub fn marker_band_width(image_width: usize) -> usize {
        (image_width / 16).max(1)
    }

    pub fn shadow_ramp(image_width: usize) -> usize {
        (image_width / 10).max(1)
    }

    pub fn sample(
        state: TrackState,
        image_width: usize,
        light: &LightingProfile,
        rng: &mut ChaCha8Rng,
    ) -> Scene {
        let w = image_width as isize;
        let jit_amp = (image_width / 32).max(1) as i64;
        let mut jit = |rng: &mut ChaCha8Rng| rng.random_range(-jit_amp..=jit_amp) as isize;
        let main_w = Self::main_band_width(image_width);
        let marker_w = Self::marker_band_width(image_width);

        let mut bands = Vec::new();
        match state {
            TrackState::GoStraight => {
                bands.push(Band::centered(w / 2 + jit(rng), main_w, image_width));
            }
            TrackState::TurnLeft => {
                bands.push(Band::centered(w / 4 + jit(rng), main_w, image_width));
            }
            TrackState::TurnRight => {
                bands.push(Band::centered(3 * w / 4 + jit(rng), main_w, image_width));
            }
            TrackState::CrossingStreets => {
                bands.push(Band::centered(5 * w / 16 + jit(rng), main_w, image_width));
                bands.push(Band::centered(11 * w / 16 + jit(rng), main_w, image_width));
            }
            TrackState::StartSpeedLimit => {
                bands.push(Band::centered(w / 2 + jit(rng), main_w, image_width));
                bands.push(Band::centered(5 * w / 32 + jit(rng), marker_w, image_width));
            }
            TrackState::StopSpeedLimit => {
                bands.push(Band::centered(w / 2 + jit(rng), main_w, image_width));
                bands.push(Band::centered(27 * w / 32 + jit(rng), marker_w, image_width));
            }
            TrackState::NoTrack => {}
        }

        let shadow = if light.shadow_prob > 0.0 && rng.random::<f32>() < light.shadow_prob {
            let min_w = (image_width / 8).max(2);
            let max_w = (3 * image_width / 8).max(min_w + 1);
            let sw = rng.random_range(min_w..=max_w);
            let start = rng.random_range(0..=(image_width - sw));
            Some(Shadow {
                start,
                width: sw,
                depth: light.shadow_depth,
            })
        } else {
            None
        };

        let jitter = if light.global_jitter > 0.0 {
            rng.random_range((1.0 - light.global_jitter)..=(1.0 + light.global_jitter))
        } else {
            1.0
        };

        Scene {
            state,
            image_width,
            bands,
            shadow,
            jitter,
        }
    }

    /// Reflectance at pixel x: 1.0 background, [`LINE_FACTOR`] inside a band.
    pub fn geometry_factor(&self, x: usize) -> f32 {
        if self.bands.iter().any(|b| b.contains(x)) {
            LINE_FACTOR
        } else {
            1.0
        }
    }

    pub fn shadow_factor(&self, x: usize) -> f32 {
        match &self.shadow {
            Some(s) => s.factor(x, Self::shadow_ramp(self.image_width)),
            None => 1.0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{domain, stream};

    #[test]
    fn band_counts_per_state() {
        let light = LightingProfile::steady();
        let mut rng = stream(1, domain::NOISE, 0);
        for (state, expected) in [
            (TrackState::GoStraight, 1),
            (TrackState::TurnLeft, 1),
            (TrackState::TurnRight, 1),
            (TrackState::CrossingStreets, 2),
            (TrackState::StartSpeedLimit, 2),
            (TrackState::StopSpeedLimit, 2),
            (TrackState::NoTrack, 0),
        ] {
            let scene = Scene::sample(state, 128, &light, &mut rng);
            assert_eq!(scene.bands.len(), expected, "{state:?}");
        }
    }

    #[test]
    fn shadow_ramp_is_soft() {
        let s = Shadow {
            start: 40,
            width: 48,
            depth: 0.5,
        };
        let ramp = Scene::shadow_ramp(128);
        // Factor decreases gradually; adjacent-pixel delta stays well under
        // the line edge step of (1 - LINE_FACTOR).
        let mut prev = 1.0f32;
        for x in 38..90 {
            let f = s.factor(x, ramp);
            assert!((f - prev).abs() < 0.1, "shadow edge too sharp at {x}");
            prev = f;
        }
        assert_eq!(s.factor(64, ramp), 0.5);
        assert_eq!(s.factor(0, ramp), 1.0);
    }

    #[test]
    fn marker_is_narrower_than_main() {
        assert!(Scene::marker_band_width(128) < Scene::main_band_width(128));
    }
}
