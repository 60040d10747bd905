//! Deterministic synthetic generator of line-scan track images under
//! parametric exposure and lighting. Stands in for the physical track and
//! cameras; the geometry contract lives in [`geometry`].

mod dataset;
mod geometry;

pub use dataset::{DatasetSpec, Manifest, ManifestSource};
pub use geometry::{Band, Scene, Shadow, LINE_FACTOR};

use crate::error::{Error, Result};
use crate::rng::{domain, stream};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

/// The seven track states the vehicle must detect, stable encoding 0..6.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[repr(u8)]
pub enum TrackState {
    GoStraight = 0,
    TurnLeft = 1,
    TurnRight = 2,
    CrossingStreets = 3,
    StartSpeedLimit = 4,
    StopSpeedLimit = 5,
    NoTrack = 6,
}

impl TrackState {
    pub const ALL: [TrackState; 7] = [
        TrackState::GoStraight,
        TrackState::TurnLeft,
        TrackState::TurnRight,
        TrackState::CrossingStreets,
        TrackState::StartSpeedLimit,
        TrackState::StopSpeedLimit,
        TrackState::NoTrack,
    ];

    pub const COUNT: usize = 7;

    pub fn from_u8(v: u8) -> Option<TrackState> {
        Self::ALL.get(v as usize).copied()
    }

    pub fn as_u8(self) -> u8 {
        self as u8
    }

    pub fn name(self) -> &'static str {
        match self {
            TrackState::GoStraight => "go-straight",
            TrackState::TurnLeft => "turn-left",
            TrackState::TurnRight => "turn-right",
            TrackState::CrossingStreets => "crossing-streets",
            TrackState::StartSpeedLimit => "start-speed-limit",
            TrackState::StopSpeedLimit => "stop-speed-limit",
            TrackState::NoTrack => "no-track",
        }
    }
}

/// Line-scan camera parameters. Brightness scales linearly with
/// `acquisition_ms / 2.0`, i.e. the 2.0 ms setting is the reference exposure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraConfig {
    pub width: usize,
    pub acquisition_ms: f32,
    pub gain: f32,
    pub noise_sigma: f32,
}

impl CameraConfig {
    /// Camera at the given acquisition time with the stock sensor defaults.
    pub fn with_acquisition(acquisition_ms: f32) -> Self {
        CameraConfig {
            width: 128,
            acquisition_ms,
            gain: 1.0,
            noise_sigma: 2.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width < 16 {
            return Err(Error::InvalidConfig(format!(
                "camera width must be >= 16, got {}",
                self.width
            )));
        }
        if !(self.acquisition_ms > 0.0) {
            return Err(Error::InvalidConfig("acquisition_ms must be > 0".into()));
        }
        if self.noise_sigma < 0.0 {
            return Err(Error::InvalidConfig("noise_sigma must be >= 0".into()));
        }
        Ok(())
    }
}

impl Default for CameraConfig {
    fn default() -> Self {
        CameraConfig::with_acquisition(2.0)
    }
}

/// Per-frame lighting variation: global jitter plus an optional soft-edged
/// shadow band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LightingProfile {
    /// Baseline illumination in [0, 1].
    pub ambient: f32,
    /// Probability a frame contains a shadow band.
    pub shadow_prob: f32,
    /// Multiplicative dimming inside a shadow, in (0, 1].
    pub shadow_depth: f32,
    /// Half-range of the per-frame illumination multiplier: jitter is drawn
    /// uniformly from [1 - g, 1 + g].
    pub global_jitter: f32,
}

impl LightingProfile {
    /// Track-side defaults: full ambient, occasional half-depth shadows,
    /// +/-15% frame-to-frame jitter.
    pub fn varying() -> Self {
        LightingProfile {
            ambient: 1.0,
            shadow_prob: 0.3,
            shadow_depth: 0.5,
            global_jitter: 0.15,
        }
    }

    /// No shadows, no jitter; the expert's comfort zone.
    pub fn steady() -> Self {
        LightingProfile {
            ambient: 1.0,
            shadow_prob: 0.0,
            shadow_depth: 1.0,
            global_jitter: 0.0,
        }
    }

    /// Heavily altered conditions for the final imitation phase: more
    /// frequent shadows and a much wider jitter range.
    pub fn heavy() -> Self {
        LightingProfile {
            ambient: 1.0,
            shadow_prob: 0.6,
            shadow_depth: 0.5,
            global_jitter: 0.35,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("ambient", self.ambient), ("shadow_prob", self.shadow_prob)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidConfig(format!("{name} must be in [0,1], got {v}")));
            }
        }
        if !(self.shadow_depth > 0.0 && self.shadow_depth <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "shadow_depth must be in (0,1], got {}",
                self.shadow_depth
            )));
        }
        if self.global_jitter < 0.0 {
            return Err(Error::InvalidConfig("global_jitter must be >= 0".into()));
        }
        Ok(())
    }
}

impl Default for LightingProfile {
    fn default() -> Self {
        LightingProfile::varying()
    }
}

/// One line-scan frame: `width` unsigned 8-bit pixels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineImage {
    pixels: Vec<u8>,
}

impl LineImage {
    pub fn new(pixels: Vec<u8>) -> Self {
        LineImage { pixels }
    }

    pub fn width(&self) -> usize {
        self.pixels.len()
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    /// max - min pixel value.
    pub fn contrast(&self) -> u8 {
        let max = self.pixels.iter().copied().max().unwrap_or(0);
        let min = self.pixels.iter().copied().min().unwrap_or(0);
        max - min
    }
}

/// Which capture setup a sample came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[repr(u8)]
pub enum Origin {
    D20 = 0,
    D15 = 1,
    D10 = 2,
    Collected = 3,
}

impl Origin {
    pub const DSETS: [Origin; 3] = [Origin::D20, Origin::D15, Origin::D10];

    pub fn from_u8(v: u8) -> Option<Origin> {
        match v {
            0 => Some(Origin::D20),
            1 => Some(Origin::D15),
            2 => Some(Origin::D10),
            3 => Some(Origin::Collected),
            _ => None,
        }
    }

    pub fn as_u8(self) -> u8 {
        self as u8
    }

    /// The acquisition time this origin was captured at, if it names a Dset.
    pub fn acquisition_ms(self) -> Option<f32> {
        match self {
            Origin::D20 => Some(2.0),
            Origin::D15 => Some(1.5),
            Origin::D10 => Some(1.0),
            Origin::Collected => None,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Origin::D20 => "d2.0",
            Origin::D15 => "d1.5",
            Origin::D10 => "d1.0",
            Origin::Collected => "collected",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub image: LineImage,
    pub label: TrackState,
    pub origin: Origin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Labeled samples plus the manifest that reproduces them.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<LabeledSample>,
    pub split: Split,
    pub manifest: Manifest,
}

/// Renders a scene realization through a camera. Pixel model:
/// `clamp_u8(255 * ambient * jitter * (acq/2) * gain * geometry(x) * shadow(x) + noise)`.
pub fn render_with(
    scene: &Scene,
    cam: &CameraConfig,
    light: &LightingProfile,
    noise_rng: &mut ChaCha8Rng,
) -> LineImage {
    let exposure = 255.0 * light.ambient * scene.jitter * (cam.acquisition_ms / 2.0) * cam.gain;
    let normal = Normal::new(0.0f32, cam.noise_sigma.max(0.0)).ok();
    let mut pixels = Vec::with_capacity(cam.width);
    for x in 0..cam.width {
        let mut v = exposure * scene.geometry_factor(x) * scene.shadow_factor(x);
        if cam.noise_sigma > 0.0 {
            if let Some(n) = &normal {
                v += n.sample(noise_rng);
            }
        }
        pixels.push(v.round().clamp(0.0, 255.0) as u8);
    }
    LineImage::new(pixels)
}

/// Deterministic single-camera render of a fresh scene realization.
pub fn render_scene(
    state: TrackState,
    cam: &CameraConfig,
    light: &LightingProfile,
    seed: u64,
) -> LineImage {
    let mut scene_rng = stream(seed, domain::NOISE, 0);
    let scene = Scene::sample(state, cam.width, light, &mut scene_rng);
    let mut noise_rng = stream(seed, domain::NOISE, 1);
    render_with(&scene, cam, light, &mut noise_rng)
}

/// Renders the identical scene realization through two cameras; only the
/// exposure settings and the per-camera noise draws differ.
pub fn render_dual(
    state: TrackState,
    cam_expert: &CameraConfig,
    cam_learner: &CameraConfig,
    light: &LightingProfile,
    seed: u64,
) -> Result<(LineImage, LineImage)> {
    if cam_expert.width != cam_learner.width {
        return Err(Error::WidthMismatch {
            expected: cam_expert.width,
            got: cam_learner.width,
        });
    }
    let mut scene_rng = stream(seed, domain::NOISE, 0);
    let scene = Scene::sample(state, cam_expert.width, light, &mut scene_rng);
    let mut noise_e = stream(seed, domain::NOISE, 1);
    let mut noise_l = stream(seed, domain::NOISE, 2);
    let expert = render_with(&scene, cam_expert, light, &mut noise_e);
    let learner = render_with(&scene, cam_learner, light, &mut noise_l);
    Ok((expert, learner))
}

pub use dataset::{combine_datasets, generate_dataset, sample_test_comb};

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gain_renders_black() {
        let cam = CameraConfig {
            gain: 0.0,
            noise_sigma: 0.0,
            ..CameraConfig::default()
        };
        let img = render_scene(TrackState::GoStraight, &cam, &LightingProfile::steady(), 1);
        assert!(img.pixels().iter().all(|&p| p == 0));
    }

    #[test]
    fn render_is_deterministic() {
        let cam = CameraConfig::default();
        let light = LightingProfile::varying();
        let a = render_scene(TrackState::TurnLeft, &cam, &light, 42);
        let b = render_scene(TrackState::TurnLeft, &cam, &light, 42);
        assert_eq!(a, b);
        let c = render_scene(TrackState::TurnLeft, &cam, &light, 43);
        assert_ne!(a, c);
    }

    #[test]
    fn longer_acquisition_gives_strictly_more_contrast() {
        // No noise, no shadow, no jitter: pixel values scale linearly with
        // acquisition time and nothing saturates at or below 2.0 ms.
        let light = LightingProfile::steady();
        let slow = CameraConfig {
            noise_sigma: 0.0,
            ..CameraConfig::with_acquisition(2.0)
        };
        let fast = CameraConfig {
            noise_sigma: 0.0,
            ..CameraConfig::with_acquisition(1.0)
        };
        let a = render_scene(TrackState::GoStraight, &slow, &light, 5);
        let b = render_scene(TrackState::GoStraight, &fast, &light, 5);
        assert!(a.contrast() > b.contrast(), "{} vs {}", a.contrast(), b.contrast());
    }

    #[test]
    fn contrast_non_decreasing_in_acquisition() {
        let light = LightingProfile::steady();
        for seed in 0..20u64 {
            let state = TrackState::ALL[(seed % 7) as usize];
            let mut prev = 0u8;
            for acq in [1.0f32, 1.5, 2.0] {
                let cam = CameraConfig {
                    noise_sigma: 0.0,
                    ..CameraConfig::with_acquisition(acq)
                };
                let img = render_scene(state, &cam, &light, seed);
                assert!(img.contrast() >= prev);
                prev = img.contrast();
            }
        }
    }

    #[test]
    fn dual_render_same_camera_is_identical() {
        let mut cam = CameraConfig::default();
        cam.noise_sigma = 0.0;
        let (a, b) = render_dual(
            TrackState::CrossingStreets,
            &cam,
            &cam,
            &LightingProfile::varying(),
            9,
        )
        .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn dual_render_learner_has_less_contrast() {
        let expert = CameraConfig {
            noise_sigma: 0.0,
            ..CameraConfig::with_acquisition(2.0)
        };
        let learner = CameraConfig {
            noise_sigma: 0.0,
            ..CameraConfig::with_acquisition(1.0)
        };
        for seed in 0..10 {
            let (e, l) =
                render_dual(TrackState::GoStraight, &expert, &learner, &LightingProfile::steady(), seed)
                    .unwrap();
            assert!(l.contrast() < e.contrast());
        }
    }

    #[test]
    fn dual_render_width_mismatch_is_rejected() {
        let a = CameraConfig::default();
        let mut b = CameraConfig::default();
        b.width = 64;
        assert!(render_dual(TrackState::NoTrack, &a, &b, &LightingProfile::steady(), 0).is_err());
    }

    #[test]
    fn no_track_contains_no_line_band() {
        // A line band is a run of pixels far darker than the background;
        // check no run of >= 4 pixels sits below 0.35x the frame max.
        for seed in 0..20 {
            let cam = CameraConfig {
                noise_sigma: 0.0,
                ..CameraConfig::default()
            };
            let (e, l) = render_dual(
                TrackState::NoTrack,
                &cam,
                &CameraConfig {
                    noise_sigma: 0.0,
                    ..CameraConfig::with_acquisition(1.0)
                },
                &LightingProfile::varying(),
                seed,
            )
            .unwrap();
            for img in [e, l] {
                let bg = *img.pixels().iter().max().unwrap() as f32;
                let mut run = 0usize;
                for &p in img.pixels() {
                    if (p as f32) < 0.35 * bg {
                        run += 1;
                        assert!(run < 4, "unexpected dark band in NoTrack render");
                    } else {
                        run = 0;
                    }
                }
            }
        }
    }
}
