//! The handcrafted computer-vision expert: derivative-based edge detection
//! over a stream of line images. Accurate under good contrast, fragile under
//! short exposure and shadows; acts as the imitation-learning teacher.
//!
//! The decision rules are co-designed with the simulator's geometry contract
//! (`simenv::geometry`): dark bands on a bright background, markers narrower
//! than main bands, sharp band edges versus soft shadow ramps.

use crate::simenv::{LineImage, Scene, TrackState};
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvaConfig {
    /// Minimum |derivative| for an edge, intensity units per pixel. Chosen so
    /// 2.0 ms renders pass and 1.0 ms deeply-shadowed renders fail.
    pub threshold: i16,
    /// Band-center displacement (pixels) separating GoStraight from turns.
    pub margin: usize,
    /// History window for majority-vote smoothing.
    pub history: usize,
}

impl Default for CvaConfig {
    fn default() -> Self {
        CvaConfig {
            threshold: 24,
            margin: 16,
            history: 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Polarity {
    Rising,
    Falling,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    /// Index i of the derivative sample (between pixels i and i+1).
    pub position: usize,
    pub polarity: Polarity,
    pub magnitude: i16,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EdgeSet {
    pub edges: Vec<Edge>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Confidence {
    Low,
    High,
}

/// Streaming state: ring buffer of recent edge sets plus the last decision.
#[derive(Debug, Clone)]
pub struct CvaState {
    history: VecDeque<EdgeSet>,
    pub last_decision: TrackState,
}

impl CvaState {
    pub fn new() -> Self {
        CvaState {
            history: VecDeque::new(),
            last_decision: TrackState::NoTrack,
        }
    }

    pub fn history_len(&self) -> usize {
        self.history.len()
    }
}

impl Default for CvaState {
    fn default() -> Self {
        Self::new()
    }
}

/// out[i] = pixels[i+1] - pixels[i].
pub fn derivative(img: &LineImage) -> Vec<i16> {
    img.pixels()
        .windows(2)
        .map(|w| w[1] as i16 - w[0] as i16)
        .collect()
}

/// Local-extremum derivative samples with |value| >= threshold,
/// non-maximum suppressed within a 3-pixel window (leftmost wins ties).
pub fn detect_edges(deriv: &[i16], threshold: i16) -> EdgeSet {
    assert!(threshold > 0, "edge threshold must be positive");
    let mut edges = Vec::new();
    for i in 0..deriv.len() {
        let mag = deriv[i].unsigned_abs();
        if mag < threshold.unsigned_abs() {
            continue;
        }
        let left_ok = i == 0 || deriv[i - 1].unsigned_abs() < mag;
        let right_ok = i + 1 == deriv.len() || deriv[i + 1].unsigned_abs() <= mag;
        if left_ok && right_ok {
            edges.push(Edge {
                position: i,
                polarity: if deriv[i] < 0 { Polarity::Falling } else { Polarity::Rising },
                magnitude: deriv[i],
            });
        }
    }
    EdgeSet { edges }
}

/// A dark band recovered from a falling/rising edge pair.
#[derive(Debug, Clone, Copy)]
struct DetectedBand {
    /// Twice the band center in pixel coordinates (kept doubled for exact
    /// integer math).
    center_x2: usize,
    width: usize,
}

fn bands_from_edges(edges: &EdgeSet) -> Vec<DetectedBand> {
    let mut bands = Vec::new();
    let mut pending_fall: Option<usize> = None;
    for e in &edges.edges {
        match e.polarity {
            Polarity::Falling => pending_fall = Some(e.position),
            Polarity::Rising => {
                if let Some(f) = pending_fall.take() {
                    // Falling at f darkens pixel f+1; rising at r brightens
                    // pixel r+1, so the band covers pixels f+1 ..= r.
                    bands.push(DetectedBand {
                        center_x2: f + 1 + e.position,
                        width: e.position - f,
                    });
                }
            }
        }
    }
    bands
}

fn classify_frame(cfg: &CvaConfig, width: usize, edges: &EdgeSet) -> TrackState {
    let bands = bands_from_edges(edges);
    if bands.is_empty() {
        return TrackState::NoTrack;
    }
    let marker_max = 3 * width / 32;
    let mut mains: Vec<DetectedBand> = bands.iter().copied().filter(|b| b.width > marker_max).collect();
    let markers: Vec<DetectedBand> = bands.iter().copied().filter(|b| b.width <= marker_max).collect();

    if mains.len() >= 2 {
        return TrackState::CrossingStreets;
    }
    if mains.len() == 1 {
        let main = mains.pop().unwrap();
        if let Some(marker) = markers.first() {
            return if marker.center_x2 < main.center_x2 {
                TrackState::StartSpeedLimit
            } else {
                TrackState::StopSpeedLimit
            };
        }
        // Main band alone: position against the image center (doubled
        // coordinates: image center x2 = width - 1).
        let center_x2 = (width - 1) as isize;
        let disp = main.center_x2 as isize - center_x2;
        let margin_x2 = 2 * cfg.margin as isize;
        return if disp < -margin_x2 {
            TrackState::TurnLeft
        } else if disp > margin_x2 {
            TrackState::TurnRight
        } else {
            TrackState::GoStraight
        };
    }
    // Only markers detected; no drivable line.
    TrackState::NoTrack
}

/// One streaming step: detect edges, push into history, majority-vote over
/// the buffered frames (ties go to the current frame's own reading).
/// Confidence is low when the frame's max |derivative| sits below threshold.
pub fn cva_step(cfg: &CvaConfig, state: &mut CvaState, img: &LineImage) -> (TrackState, Confidence) {
    let deriv = derivative(img);
    let max_abs = deriv.iter().map(|d| d.unsigned_abs()).max().unwrap_or(0);
    let confidence = if max_abs < cfg.threshold.unsigned_abs() {
        Confidence::Low
    } else {
        Confidence::High
    };
    let edges = detect_edges(&deriv, cfg.threshold);
    let current = classify_frame(cfg, img.width(), &edges);

    state.history.push_back(edges);
    while state.history.len() > cfg.history.max(1) {
        state.history.pop_front();
    }

    let mut votes = [0usize; TrackState::COUNT];
    for e in &state.history {
        votes[classify_frame(cfg, img.width(), e).as_u8() as usize] += 1;
    }
    let best = *votes.iter().max().unwrap();
    let decision = if votes[current.as_u8() as usize] == best {
        current
    } else {
        TrackState::ALL
            .iter()
            .copied()
            .find(|s| votes[s.as_u8() as usize] == best)
            .unwrap_or(current)
    };

    state.last_decision = decision;
    (decision, confidence)
}

/// Convenience for single-frame suites: classify through a fresh stream.
pub fn classify_fresh(cfg: &CvaConfig, img: &LineImage) -> (TrackState, Confidence) {
    let mut state = CvaState::new();
    cva_step(cfg, &mut state, img)
}

/// The derivative magnitude a clean band edge produces at a given exposure
/// multiplier; used by tests to place the threshold boundary.
pub fn clean_edge_magnitude(exposure: f32) -> f32 {
    255.0 * exposure * (1.0 - crate::simenv::LINE_FACTOR)
}

/// Margin co-design check against the simulator geometry.
pub fn margin_for_width(width: usize) -> usize {
    width / 8
}

#[allow(unused_imports)]
use Scene as _SceneContract; // rules above mirror simenv::geometry's contract
