//! Predictive Lagrangian particle tracking: links per-frame cluster centers into
//! short, conservative tracklets.

mod hungarian;
mod smooth;

pub use hungarian::{hungarian, Assignment};
pub use smooth::{gaussian_kernel, smooth};

use nalgebra::{DMatrix, Vector3};
use serde::{Deserialize, Serialize};

use crate::geometry::WorldPoint;
use crate::reconstruction::{Cluster, FrameClusters};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrackerConfig {
    /// Frame period, seconds.
    pub dt: f64,
    /// Maximum distance between a prediction and a cluster for linking, meters.
    pub gate: f64,
    /// Linking radius for tracklets that have a single state and no velocity yet.
    pub init_gate: f64,
    /// Gaussian smoothing width, frames.
    pub smooth_sigma: f64,
    /// Smoothing kernel half-width, frames.
    pub smooth_radius: usize,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            dt: 1.0 / 40.0,
            gate: 0.25,
            init_gate: 0.3,
            smooth_sigma: 1.5,
            smooth_radius: 4,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<(), String> {
        let ok = [self.dt, self.gate, self.init_gate, self.smooth_sigma]
            .iter()
            .all(|v| v.is_finite() && *v > 0.0)
            && self.smooth_radius > 0;
        if ok {
            Ok(())
        } else {
            Err("tracker parameters must all be positive".into())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackState {
    pub frame: usize,
    pub position: WorldPoint,
    pub velocity: Vector3<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrackletStatus {
    Active,
    StoppedAmbiguous,
    StoppedLost,
}

/// A run of states on consecutive frames. The first state's velocity is
/// back-filled from the second once the tracklet is extended; a single-state
/// tracklet carries zero velocity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tracklet {
    pub id: usize,
    pub states: Vec<TrackState>,
    pub status: TrackletStatus,
}

impl Tracklet {
    pub fn seed(id: usize, frame: usize, position: WorldPoint) -> Self {
        Self {
            id,
            states: vec![TrackState {
                frame,
                position,
                velocity: Vector3::zeros(),
            }],
            status: TrackletStatus::Active,
        }
    }

    pub fn first(&self) -> &TrackState {
        &self.states[0]
    }

    pub fn last(&self) -> &TrackState {
        self.states.last().expect("tracklets are never empty")
    }

    pub fn start_frame(&self) -> usize {
        self.first().frame
    }

    pub fn end_frame(&self) -> usize {
        self.last().frame
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn has_velocity(&self) -> bool {
        self.states.len() >= 2
    }

    pub fn state_at(&self, frame: usize) -> Option<&TrackState> {
        let k = frame.checked_sub(self.start_frame())?;
        self.states.get(k)
    }

    fn extend(&mut self, frame: usize, position: WorldPoint, dt: f64) {
        let velocity = init_velocity(&self.last().position, &position, dt);
        if self.states.len() == 1 {
            self.states[0].velocity = velocity;
        }
        self.states.push(TrackState {
            frame,
            position,
            velocity,
        });
    }
}

/// Constant-velocity prediction one frame ahead: `x + v·Δt`.
pub fn predict(state: &TrackState, dt: f64) -> WorldPoint {
    state.position + state.velocity * dt
}

/// Finite-difference velocity between consecutive positions: `(x2 − x1) / Δt`.
pub fn init_velocity(x1: &WorldPoint, x2: &WorldPoint, dt: f64) -> Vector3<f64> {
    (x2 - x1) / dt
}

/// Tracklets after one frame transition.
#[derive(Debug, Default)]
pub struct StepOutcome {
    /// Extended tracklets followed by new seeds, all ending at the new frame.
    pub active: Vec<Tracklet>,
    /// Tracklets stopped at this transition.
    pub stopped: Vec<Tracklet>,
}

/// Advances `active` tracklets (all ending at `frame - 1`) to `frame`.
///
/// A tracklet with two or more clusters inside its gate is stopped as ambiguous.
/// The remaining tracklets compete for clusters through a gated Hungarian
/// assignment; clusters nobody takes become new seeds, numbered from `next_id`.
pub fn step(
    mut active: Vec<Tracklet>,
    frame: usize,
    clusters: &[Cluster],
    cfg: &TrackerConfig,
    next_id: &mut usize,
) -> StepOutcome {
    active.sort_by_key(|t| t.id);
    let mut order: Vec<usize> = (0..clusters.len()).collect();
    order.sort_by_key(|&k| clusters[k].id);
    let centers: Vec<WorldPoint> = order.iter().map(|&k| clusters[k].center).collect();

    let big_gate = cfg.gate.max(cfg.init_gate);
    let mut costs = DMatrix::from_element(active.len(), centers.len(), big_gate);
    let mut ambiguous = vec![false; active.len()];
    for (i, t) in active.iter().enumerate() {
        let (prediction, gate) = if t.has_velocity() {
            (predict(t.last(), cfg.dt), cfg.gate)
        } else {
            (t.last().position, cfg.init_gate)
        };
        let mut in_gate = 0;
        for (j, c) in centers.iter().enumerate() {
            let d = (c - prediction).norm();
            if d < gate {
                costs[(i, j)] = d;
                in_gate += 1;
            }
        }
        ambiguous[i] = in_gate >= 2;
    }
    // Ambiguous rows take no part in the assignment.
    for (i, &amb) in ambiguous.iter().enumerate() {
        if amb {
            costs.row_mut(i).fill(big_gate);
        }
    }
    let assignment = hungarian(&costs, big_gate);

    let mut taken = vec![false; centers.len()];
    let mut outcome = StepOutcome::default();
    for (i, mut t) in active.into_iter().enumerate() {
        if ambiguous[i] {
            t.status = TrackletStatus::StoppedAmbiguous;
            outcome.stopped.push(t);
        } else if let Some(j) = assignment.col_for_row(i) {
            taken[j] = true;
            t.extend(frame, centers[j], cfg.dt);
            outcome.active.push(t);
        } else {
            t.status = TrackletStatus::StoppedLost;
            outcome.stopped.push(t);
        }
    }
    for (j, c) in centers.iter().enumerate() {
        if !taken[j] {
            outcome.active.push(Tracklet::seed(*next_id, frame, *c));
            *next_id += 1;
        }
    }
    outcome
}

/// Runs the tracker over per-frame clusters (frames need not be contiguous; a
/// missing frame stops every active tracklet). Returns unsmoothed tracklets
/// sorted by id; those still running at the end keep `Active` status.
pub fn track(frames: &[FrameClusters], cfg: &TrackerConfig) -> Vec<Tracklet> {
    let mut sorted: Vec<&FrameClusters> = frames.iter().collect();
    sorted.sort_by_key(|f| f.frame);
    let mut next_id = 0usize;
    let mut active: Vec<Tracklet> = Vec::new();
    let mut done: Vec<Tracklet> = Vec::new();
    let mut prev_frame: Option<usize> = None;
    for fc in sorted {
        if prev_frame.is_some_and(|p| fc.frame != p + 1) {
            for mut t in active.drain(..) {
                t.status = TrackletStatus::StoppedLost;
                done.push(t);
            }
        }
        let out = step(std::mem::take(&mut active), fc.frame, &fc.clusters, cfg, &mut next_id);
        done.extend(out.stopped);
        active = out.active;
        prev_frame = Some(fc.frame);
    }
    done.extend(active);
    done.sort_by_key(|t| t.id);
    done
}

/// Tracks then smooths every tracklet.
pub fn track_and_smooth(frames: &[FrameClusters], cfg: &TrackerConfig) -> Vec<Tracklet> {
    track(frames, cfg)
        .iter()
        .map(|t| smooth(t, cfg.smooth_sigma, cfg.smooth_radius))
        .collect()
}
