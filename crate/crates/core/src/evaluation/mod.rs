//! WILD challenge scoring: start-point association, endpoint distances, AC tables by
//! length bucket, oracle scoring over hypothesis trees, and the survival projection.

mod report;

pub use report::{BucketRow, EvalReport};

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::WorldPoint;
use crate::retracking::{HypothesisForest, Track};
use crate::tracking::Tracklet;

pub const THRESHOLDS: [f64; 4] = [0.1, 0.3, 0.5, 1.0];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("manifest example {index}: {reason}")]
    Manifest { index: usize, reason: String },
}

/// Length bucket of a motion sequence: `<=100`, `(100, 300]`, `>300` frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Bucket {
    #[serde(rename = "<=100")]
    Short,
    #[serde(rename = "100-300")]
    Medium,
    #[serde(rename = ">300")]
    Long,
}

impl Bucket {
    pub const ALL: [Bucket; 3] = [Bucket::Short, Bucket::Medium, Bucket::Long];

    pub fn of(frames: usize) -> Self {
        match frames {
            0..=100 => Bucket::Short,
            101..=300 => Bucket::Medium,
            _ => Bucket::Long,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Bucket::Short => "<=100",
            Bucket::Medium => "100-300",
            Bucket::Long => ">300",
        }
    }
}

/// One motion-sequence challenge. `frame_end` is the landing frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WildExample {
    pub index: usize,
    pub target_id: usize,
    pub frame_start: usize,
    pub frame_end: usize,
    pub start_head: [f64; 3],
    pub start_tail: [f64; 3],
    pub end_head: [f64; 3],
    pub end_tail: [f64; 3],
    pub bucket: Bucket,
}

fn midpoint(a: &[f64; 3], b: &[f64; 3]) -> WorldPoint {
    WorldPoint::new((a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0, (a[2] + b[2]) / 2.0)
}

impl WildExample {
    pub fn frames(&self) -> usize {
        self.frame_end - self.frame_start
    }

    /// Start reference: head/tail midpoint, or the head with `head` set.
    pub fn start_point(&self, head: bool) -> WorldPoint {
        if head {
            self.start_head.into()
        } else {
            midpoint(&self.start_head, &self.start_tail)
        }
    }

    pub fn end_point(&self, head: bool) -> WorldPoint {
        if head {
            self.end_head.into()
        } else {
            midpoint(&self.end_head, &self.end_tail)
        }
    }
}

pub fn validate_manifest(examples: &[WildExample]) -> Result<(), EvalError> {
    for e in examples {
        let err = |reason: String| EvalError::Manifest { index: e.index, reason };
        if e.frame_end <= e.frame_start {
            return Err(err(format!("frame_end {} not after frame_start {}", e.frame_end, e.frame_start)));
        }
        if Bucket::of(e.frames()) != e.bucket {
            return Err(err(format!("bucket {} inconsistent with {} frames", e.bucket.label(), e.frames())));
        }
        let finite = [e.start_head, e.start_tail, e.end_head, e.end_tail]
            .iter()
            .all(|p| p.iter().all(|v| v.is_finite()));
        if !finite {
            return Err(err("non-finite annotation".into()));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Score against head points instead of head/tail midpoints.
    pub head_scoring: bool,
}

/// Index of the track whose state at `frame` is nearest to `start`; ties go to the
/// lower track id. `None` when no track has a state at that frame.
pub fn associate_start(tracks: &[Track], start: &WorldPoint, frame: usize) -> Option<usize> {
    let mut best: Option<(f64, usize, usize)> = None;
    for (i, t) in tracks.iter().enumerate() {
        if let Some(s) = t.state_at(frame) {
            let d = (s.position - start).norm();
            let better = match best {
                None => true,
                Some((bd, bid, _)) => d < bd || (d == bd && t.id < bid),
            };
            if better {
                best = Some((d, t.id, i));
            }
        }
    }
    best.map(|b| b.2)
}

/// Where a track says the target is at `frame`: its state there, or its last
/// state when it ended earlier.
pub fn track_end(track: &Track, frame: usize) -> WorldPoint {
    match track.state_at(frame) {
        Some(s) => s.position,
        None => {
            let before = track.states.iter().take_while(|s| s.frame <= frame).last();
            before.unwrap_or_else(|| track.states.last().expect("tracks are non-empty")).position
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Score {
    Distance(f64),
    Miss,
}

impl Score {
    pub fn within(&self, threshold: f64) -> bool {
        matches!(self, Score::Distance(d) if *d <= threshold)
    }
}

pub fn score_example(example: &WildExample, end: Option<&WorldPoint>, head: bool) -> Score {
    match end {
        Some(p) => Score::Distance((p - example.end_point(head)).norm()),
        None => Score::Miss,
    }
}

/// Greedy scores, one per example.
pub fn score_all(examples: &[WildExample], tracks: &[Track], cfg: &EvalConfig) -> Vec<Score> {
    examples
        .iter()
        .map(|e| {
            let end = associate_start(tracks, &e.start_point(cfg.head_scoring), e.frame_start)
                .map(|i| track_end(&tracks[i], e.frame_end));
            score_example(e, end.as_ref(), cfg.head_scoring)
        })
        .collect()
}

pub fn evaluate(examples: &[WildExample], tracks: &[Track], cfg: &EvalConfig) -> Result<EvalReport, EvalError> {
    validate_manifest(examples)?;
    Ok(EvalReport::from_scores(examples, &score_all(examples, tracks, cfg)))
}

/// Best (smallest) endpoint distance over the greedy hypothesis and every path of
/// the hypothesis tree that continues from the greedy track's tracklet at
/// `frame_start`.
pub fn oracle_scores(
    examples: &[WildExample],
    tracks: &[Track],
    forest: &HypothesisForest,
    cfg: &EvalConfig,
) -> Vec<Score> {
    let by_id: HashMap<usize, &Tracklet> = forest.tracklets.iter().map(|t| (t.id, t)).collect();
    let children = forest.children();
    examples
        .iter()
        .map(|e| {
            let head = cfg.head_scoring;
            let Some(ti) = associate_start(tracks, &e.start_point(head), e.frame_start) else {
                return Score::Miss;
            };
            let track = &tracks[ti];
            let target = e.end_point(head);
            let mut best = (track_end(track, e.frame_end) - target).norm();
            // tracklet of the greedy track that holds frame_start (or precedes it)
            let start = track
                .tracklet_ids
                .iter()
                .filter_map(|id| by_id.get(id))
                .rfind(|t| t.start_frame() <= e.frame_start);
            if let Some(start) = start {
                for p in path_endpoints(start.id, e.frame_end, &by_id, &children) {
                    best = best.min((p - target).norm());
                }
            }
            Score::Distance(best)
        })
        .collect()
}

/// Positions at `frame` reached along every hypothesis path from `root`: the state
/// at `frame` when a tracklet covers it, otherwise the last state before it on the
/// path (and the first state after it when the frame falls in a join gap).
fn path_endpoints(
    root: usize,
    frame: usize,
    by_id: &HashMap<usize, &Tracklet>,
    children: &BTreeMap<usize, Vec<usize>>,
) -> Vec<WorldPoint> {
    let mut out = Vec::new();
    let mut stack = vec![root];
    let mut seen = std::collections::HashSet::new();
    while let Some(id) = stack.pop() {
        if !seen.insert(id) {
            continue;
        }
        let Some(t) = by_id.get(&id) else { continue };
        if let Some(s) = t.state_at(frame) {
            out.push(s.position);
            continue;
        }
        if t.start_frame() > frame {
            continue;
        }
        let kids = children.get(&id).map(Vec::as_slice).unwrap_or(&[]);
        if kids.is_empty() {
            out.push(t.last().position);
        }
        for k in kids {
            if let Some(c) = by_id.get(k) {
                if c.start_frame() > frame {
                    out.push(t.last().position);
                    out.push(c.first().position);
                } else {
                    stack.push(*k);
                }
            }
        }
    }
    out
}

pub fn oracle_evaluate(
    examples: &[WildExample],
    tracks: &[Track],
    forest: &HypothesisForest,
    cfg: &EvalConfig,
) -> Result<EvalReport, EvalError> {
    validate_manifest(examples)?;
    Ok(EvalReport::from_scores(examples, &oracle_scores(examples, tracks, forest, cfg)))
}

/// Chance that a track survives `horizon` frames when a 100-frame segment survives
/// with probability `ac100`.
pub fn survival_projection(ac100: f64, horizon_frames: f64) -> f64 {
    assert!((0.0..=1.0).contains(&ac100), "ac100 must be a fraction");
    ac100.powf(horizon_frames / 100.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::retracking::TrackPoint;
    use nalgebra::Vector3;

    fn track(id: usize, frames: std::ops::Range<usize>, at: impl Fn(usize) -> [f64; 3]) -> Track {
        Track {
            id,
            tracklet_ids: vec![id],
            states: frames
                .map(|f| TrackPoint {
                    frame: f,
                    position: at(f).into(),
                    velocity: Vector3::zeros(),
                    gap_filled: false,
                })
                .collect(),
        }
    }

    fn example(index: usize, start: [f64; 3], end: [f64; 3], f0: usize, f1: usize) -> WildExample {
        WildExample {
            index,
            target_id: 0,
            frame_start: f0,
            frame_end: f1,
            start_head: start,
            start_tail: start,
            end_head: end,
            end_tail: end,
            bucket: Bucket::of(f1 - f0),
        }
    }

    #[test]
    fn buckets_and_boundaries() {
        assert_eq!(Bucket::of(100), Bucket::Short);
        assert_eq!(Bucket::of(101), Bucket::Medium);
        assert_eq!(Bucket::of(300), Bucket::Medium);
        assert_eq!(Bucket::of(301), Bucket::Long);
    }

    #[test]
    fn association_picks_nearest_alive() {
        let a = track(0, 0..10, |_| [0.1, 0.0, 0.0]);
        let b = track(1, 0..10, |_| [0.4, 0.0, 0.0]);
        let late = track(2, 20..30, |_| [0.0, 0.0, 0.0]);
        let tracks = vec![b.clone(), a.clone(), late];
        let start = WorldPoint::origin();
        assert_eq!(associate_start(&tracks, &start, 5), Some(1));
        assert_eq!(associate_start(&[a], &start, 5), Some(0));
        assert_eq!(associate_start(&tracks, &start, 15), None);
    }

    #[test]
    fn counting_example() {
        let ex: Vec<WildExample> = (0..4).map(|i| example(i, [0.0; 3], [0.0; 3], 0, 50)).collect();
        let scores = [0.05, 0.2, 0.4, 2.0].map(Score::Distance);
        let r = EvalReport::from_scores(&ex, &scores);
        let row = r.row(Bucket::Short).unwrap();
        assert_eq!(row.count, 4);
        assert_eq!(row.ac.unwrap(), [0.25, 0.5, 0.75, 0.75]);
        assert!(Score::Miss.within(1e9) == false);
        assert_eq!(score_example(&ex[0], None, false), Score::Miss);
        assert_eq!(score_example(&ex[0], Some(&WorldPoint::origin()), false), Score::Distance(0.0));
    }

    #[test]
    fn end_falls_back_to_last_state() {
        let t = track(0, 0..10, |f| [f as f64, 0.0, 0.0]);
        assert_eq!(track_end(&t, 5), WorldPoint::new(5.0, 0.0, 0.0));
        assert_eq!(track_end(&t, 50), WorldPoint::new(9.0, 0.0, 0.0));
    }

    #[test]
    fn survival_numbers() {
        assert!((survival_projection(0.44, 200.0) - 0.1936).abs() < 1e-12);
        let s300 = survival_projection(0.44, 300.0);
        assert!((0.085..=0.086).contains(&s300));
        assert_eq!(survival_projection(1.0, 12345.0), 1.0);
    }

    #[test]
    fn manifest_validation() {
        let mut e = example(0, [0.0; 3], [1.0; 3], 10, 10);
        assert!(validate_manifest(std::slice::from_ref(&e)).is_err());
        e.frame_end = 150;
        assert!(validate_manifest(std::slice::from_ref(&e)).is_err());
        e.bucket = Bucket::Medium;
        assert!(validate_manifest(&[e]).is_ok());
    }
}
