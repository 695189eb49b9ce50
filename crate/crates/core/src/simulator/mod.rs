//! Synthetic aviary: ground-truth flock scenes, silhouette rendering into the
//! camera rig, and WILD-style example export.

mod render;
mod rig;
mod scene;
mod wild;

pub use render::{render_detections, render_frame, Body, BODY_SEMI_AXES};
pub use rig::{default_perches, default_rig, Perch};
pub use scene::{generate_scene, BirdTruth, GroundTruthScene, SequenceKind, SequenceRecord};
pub use wild::export_wild;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ethogram::{BirdMeta, Sex, Song};
use crate::seed;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid scene config: {0}")]
    Config(String),
    #[error("could not place bird {0} within the separation constraint")]
    Separation(usize),
}

/// Three-quantile description of a right-skewed duration distribution, sampled as
/// a split log-normal (different spread below and above the median).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DurationStats {
    pub p10: f64,
    pub p50: f64,
    pub p90: f64,
}

/// z-score of the 90th percentile of the standard normal.
const Z90: f64 = 1.281_551_565_545;

impl DurationStats {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.p10 > 0.0 && self.p10 < self.p50 && self.p50 < self.p90) {
            return Err(format!("duration quantiles must satisfy 0 < p10 < p50 < p90, got {self:?}"));
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        let sigma = if z < 0.0 {
            (self.p50 / self.p10).ln() / Z90
        } else {
            (self.p90 / self.p50).ln() / Z90
        };
        self.p50 * (sigma * z).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MotionStats {
    /// Perching durations, seconds.
    pub stationary: DurationStats,
    /// Motion-sequence durations, seconds.
    pub flight: DurationStats,
    /// Longest single hop, seconds. Longer motions are split into hops.
    pub max_hop: f64,
    /// Probability that a landing site is the floor rather than a perch.
    pub floor_prob: f64,
}

impl Default for MotionStats {
    fn default() -> Self {
        Self {
            stationary: DurationStats { p10: 3.7, p50: 17.6, p90: 165.0 },
            flight: DurationStats { p10: 0.875, p50: 1.575, p90: 4.5 },
            max_hop: 1.6,
            floor_prob: 0.15,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneConfig {
    pub n_birds: usize,
    pub fps: f64,
    /// Seconds; the scene has `floor(duration * fps) + 1` frames.
    pub duration: f64,
    pub volume: [f64; 3],
    pub perches: Vec<Perch>,
    pub motion: MotionStats,
    /// Minimum centroid distance between any two birds at every frame; 0 disables.
    pub min_separation: f64,
    /// Songs per second per male.
    pub song_rate: f64,
    /// Set from the pipeline seed, never read from a file.
    #[serde(skip)]
    pub rng_seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            n_birds: 15,
            fps: 40.0,
            duration: 60.0,
            volume: [6.0, 2.4, 2.4],
            perches: default_perches(),
            motion: MotionStats::default(),
            min_separation: 0.0,
            song_rate: 0.05,
            rng_seed: 0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::Config(m));
        if self.n_birds == 0 {
            return bad("n_birds must be at least 1".into());
        }
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return bad("fps must be positive".into());
        }
        if !(self.duration >= 0.0 && self.duration.is_finite()) {
            return bad("duration must be non-negative".into());
        }
        if self.volume.iter().any(|v| !(*v > 0.0)) {
            return bad("volume must be positive".into());
        }
        if self.perches.is_empty() {
            return bad("perch graph is empty".into());
        }
        for (i, p) in self.perches.iter().enumerate() {
            for e in [p.a, p.b] {
                if (0..3).any(|k| e[k] < 0.0 || e[k] > self.volume[k]) {
                    return bad(format!("perch {i} endpoint {e:?} lies outside the volume"));
                }
            }
        }
        self.motion.stationary.validate().map_err(SimError::Config)?;
        self.motion.flight.validate().map_err(SimError::Config)?;
        if !(self.motion.max_hop > 0.0) || !(0.0..=1.0).contains(&self.motion.floor_prob) {
            return bad("max_hop must be positive and floor_prob in [0, 1]".into());
        }
        if !(self.min_separation >= 0.0) || !(self.song_rate >= 0.0) {
            return bad("min_separation and song_rate must be non-negative".into());
        }
        Ok(())
    }

    pub fn n_frames(&self) -> usize {
        (self.duration * self.fps + 1e-9).floor() as usize + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseModel {
    /// Probability that a bird's mask is dropped in one camera-frame.
    pub miss_rate: f64,
    /// Expected shadow masks per camera-frame.
    pub false_positive_rate: f64,
    /// Standard deviation of the mask offset, pixels.
    pub centroid_jitter: f64,
    /// Overlapping masks in a view are emitted as one union mask.
    pub merge_occlusions: bool,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self::zero()
    }
}

impl NoiseModel {
    pub fn zero() -> Self {
        Self {
            miss_rate: 0.0,
            false_positive_rate: 0.0,
            centroid_jitter: 0.0,
            merge_occlusions: false,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let rate = |r: f64| (0.0..=1.0).contains(&r);
        if !rate(self.miss_rate) || !rate(self.false_positive_rate) || !(self.centroid_jitter >= 0.0) {
            return Err(SimError::Config(
                "noise rates must be in [0, 1] and jitter non-negative".into(),
            ));
        }
        Ok(())
    }
}

const BAND_COLORS: [&str; 6] = ["Blue", "Teal", "Green", "Pink", "Red", "Yellow"];

/// Bird roster: the first `2n/5` birds (at least one) are male. Labels are
/// distinct two-color band combinations while they last.
pub fn roster(n_birds: usize) -> Vec<BirdMeta> {
    let n_male = (2 * n_birds / 5).max(1).min(n_birds);
    let mut combos = Vec::new();
    for i in 0..BAND_COLORS.len() {
        for j in i + 1..BAND_COLORS.len() {
            combos.push(format!("{}+{}", BAND_COLORS[i], BAND_COLORS[j]));
        }
    }
    (0..n_birds)
        .map(|id| BirdMeta {
            id,
            sex: if id < n_male { Sex::M } else { Sex::F },
            label: combos
                .get(id)
                .cloned()
                .unwrap_or_else(|| format!("{}#{id}", combos[id % combos.len()])),
        })
        .collect()
}

/// Poisson song times for every male over the scene duration, sorted by time.
pub fn generate_songs(scene: &GroundTruthScene, birds: &[BirdMeta], rate: f64, seed: u64) -> Vec<Song> {
    let mut songs = Vec::new();
    if rate <= 0.0 {
        return songs;
    }
    let span = (scene.n_frames - 1) as f64 / scene.fps;
    let exp = rand_distr::Exp::new(rate).expect("positive rate");
    for b in birds.iter().filter(|b| b.sex == Sex::M) {
        let mut rng = seed::rng(seed, &[b.id as u64]);
        let mut t: f64 = rng.sample(exp);
        while t <= span {
            // songs land on frame times
            let time = (t * scene.fps).round() / scene.fps;
            songs.push(Song { time, male: b.id });
            t += rng.sample(exp);
        }
    }
    songs.sort_by(|a, b| a.time.total_cmp(&b.time).then(a.male.cmp(&b.male)));
    songs
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_lognormal_hits_quantiles() {
        let d = DurationStats { p10: 0.875, p50: 1.575, p90: 4.5 };
        let mut rng = seed::rng(11, &[]);
        let mut xs: Vec<f64> = (0..20000).map(|_| d.sample(&mut rng)).collect();
        xs.sort_by(f64::total_cmp);
        let q = |p: f64| xs[(p * xs.len() as f64) as usize];
        assert!((q(0.1) / 0.875 - 1.0).abs() < 0.05);
        assert!((q(0.5) / 1.575 - 1.0).abs() < 0.05);
        assert!((q(0.9) / 4.5 - 1.0).abs() < 0.05);
    }

    #[test]
    fn roster_has_six_males_and_unique_labels() {
        let r = roster(15);
        assert_eq!(r.iter().filter(|b| b.sex == Sex::M).count(), 6);
        let mut labels: Vec<_> = r.iter().map(|b| b.label.clone()).collect();
        labels.sort();
        labels.dedup();
        assert_eq!(labels.len(), 15);
    }

    #[test]
    fn config_validation() {
        assert!(SceneConfig::default().validate().is_ok());
        let cfg = SceneConfig { perches: vec![], ..Default::default() };
        assert!(matches!(cfg.validate(), Err(SimError::Config(_))));
        let cfg = SceneConfig { n_birds: 0, ..Default::default() };
        assert!(cfg.validate().is_err());
        assert_eq!(SceneConfig { duration: 0.0, ..Default::default() }.n_frames(), 1);
        assert_eq!(SceneConfig { duration: 60.0, ..Default::default() }.n_frames(), 2401);
    }
}
