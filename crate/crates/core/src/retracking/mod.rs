//! Re-tracking: joins tracklets across stops and short gaps by forward/backward
//! constant-velocity projection, and keeps every feasible join as hypothesis trees.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::geometry::WorldPoint;
use crate::tracking::{TrackState, Tracklet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RetrackConfig {
    /// Largest frame difference between a tracklet's end and its continuation's start.
    pub max_gap: usize,
    /// Largest distance between the two projections at the gap midpoint, meters.
    pub join_dist: f64,
    /// Tracks with fewer states are dropped after joining.
    pub min_len: usize,
    /// Frame period, seconds. Copied from the tracker when loaded from a file.
    #[serde(skip)]
    pub dt: f64,
}

impl Default for RetrackConfig {
    fn default() -> Self {
        Self {
            max_gap: 20,
            join_dist: 0.3,
            min_len: 10,
            dt: 1.0 / 40.0,
        }
    }
}

impl RetrackConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.max_gap == 0 || !(self.join_dist > 0.0) || !(self.dt > 0.0) {
            return Err("max_gap, join_dist and dt must be positive".into());
        }
        Ok(())
    }
}

/// A feasible continuation of tracklet `from` by tracklet `to`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Join {
    pub from: usize,
    pub to: usize,
    /// `|v_from - v_to|`, m/s.
    pub dissimilarity: f64,
    /// Distance between the projections at the gap midpoint, meters.
    pub midpoint_distance: f64,
}

fn project(s: &TrackState, frames: f64, dt: f64) -> WorldPoint {
    s.position + s.velocity * (frames * dt)
}

/// Feasibility of joining `a`'s end to `b`'s start, or `None`.
pub fn join_cost(a: &Tracklet, b: &Tracklet, cfg: &RetrackConfig) -> Option<Join> {
    let (ta, tb) = (a.end_frame(), b.start_frame());
    if tb <= ta || tb - ta > cfg.max_gap {
        return None;
    }
    let half = (tb - ta) as f64 / 2.0;
    let fwd = project(a.last(), half, cfg.dt);
    let bwd = project(b.first(), -half, cfg.dt);
    let d = (fwd - bwd).norm();
    (d <= cfg.join_dist).then(|| Join {
        from: a.id,
        to: b.id,
        dissimilarity: (a.last().velocity - b.first().velocity).norm(),
        midpoint_distance: d,
    })
}

/// Every feasible join, ordered by dissimilarity, then midpoint distance, then ids.
pub fn feasible_joins(tracklets: &[Tracklet], cfg: &RetrackConfig) -> Vec<Join> {
    let mut by_start: BTreeMap<usize, Vec<&Tracklet>> = BTreeMap::new();
    for t in tracklets {
        by_start.entry(t.start_frame()).or_default().push(t);
    }
    let mut joins = Vec::new();
    for a in tracklets {
        let ta = a.end_frame();
        for (_, bs) in by_start.range(ta + 1..=ta + cfg.max_gap) {
            joins.extend(bs.iter().filter_map(|b| join_cost(a, b, cfg)));
        }
    }
    joins.sort_by(|x, y| {
        x.dissimilarity
            .total_cmp(&y.dissimilarity)
            .then(x.midpoint_distance.total_cmp(&y.midpoint_distance))
            .then(x.from.cmp(&y.from))
            .then(x.to.cmp(&y.to))
    });
    joins
}

/// Greedy selection: walk the sorted joins, keep one when neither its `from` end nor
/// its `to` start is already used.
pub fn select_joins(joins: &[Join]) -> Vec<Join> {
    let mut used_from = BTreeSet::new();
    let mut used_to = BTreeSet::new();
    joins
        .iter()
        .filter(|j| {
            if used_from.contains(&j.from) || used_to.contains(&j.to) {
                return false;
            }
            used_from.insert(j.from);
            used_to.insert(j.to);
            true
        })
        .copied()
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackPoint {
    pub frame: usize,
    pub position: WorldPoint,
    pub velocity: Vector3<f64>,
    pub gap_filled: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Track {
    pub id: usize,
    pub tracklet_ids: Vec<usize>,
    pub states: Vec<TrackPoint>,
}

impl Track {
    pub fn start_frame(&self) -> usize {
        self.states[0].frame
    }

    pub fn end_frame(&self) -> usize {
        self.states.last().expect("tracks are never empty").frame
    }

    pub fn state_at(&self, frame: usize) -> Option<&TrackPoint> {
        let k = frame.checked_sub(self.start_frame())?;
        self.states.get(k)
    }
}

fn point(s: &TrackState) -> TrackPoint {
    TrackPoint { frame: s.frame, position: s.position, velocity: s.velocity, gap_filled: false }
}

/// Concatenates a chain of tracklets, filling each gap with a linear blend of the
/// forward projection of the earlier end and the backward projection of the later
/// start.
pub fn merge_chain(chain: &[&Tracklet], dt: f64) -> Vec<TrackPoint> {
    let mut out: Vec<TrackPoint> = Vec::new();
    for (k, t) in chain.iter().enumerate() {
        if k > 0 {
            let a = chain[k - 1].last();
            let b = t.first();
            let span = (b.frame - a.frame) as f64;
            for f in a.frame + 1..b.frame {
                let w = (f - a.frame) as f64 / span;
                let fwd = project(a, (f - a.frame) as f64, dt);
                let bwd = project(b, -((b.frame - f) as f64), dt);
                out.push(TrackPoint {
                    frame: f,
                    position: (fwd.coords * (1.0 - w) + bwd.coords * w).into(),
                    velocity: a.velocity * (1.0 - w) + b.velocity * w,
                    gap_filled: true,
                });
            }
        }
        out.extend(t.states.iter().map(point));
    }
    out
}

/// Chains tracklets by the greedy joins and drops tracks shorter than `min_len`.
/// Track ids follow the order of their first tracklet.
pub fn link_tracklets(tracklets: &[Tracklet], cfg: &RetrackConfig) -> Vec<Track> {
    let selected = select_joins(&feasible_joins(tracklets, cfg));
    chain_tracks(tracklets, &selected, cfg)
}

pub fn chain_tracks(tracklets: &[Tracklet], selected: &[Join], cfg: &RetrackConfig) -> Vec<Track> {
    let by_id: BTreeMap<usize, &Tracklet> = tracklets.iter().map(|t| (t.id, t)).collect();
    let next: BTreeMap<usize, usize> = selected.iter().map(|j| (j.from, j.to)).collect();
    let has_parent: BTreeSet<usize> = selected.iter().map(|j| j.to).collect();
    let mut tracks = Vec::new();
    for (&id, _) in by_id.iter().filter(|(id, _)| !has_parent.contains(id)) {
        let mut chain = vec![by_id[&id]];
        let mut cur = id;
        while let Some(&n) = next.get(&cur) {
            chain.push(by_id[&n]);
            cur = n;
        }
        let states = merge_chain(&chain, cfg.dt);
        if states.len() >= cfg.min_len {
            tracks.push(Track {
                id: tracks.len(),
                tracklet_ids: chain.iter().map(|t| t.id).collect(),
                states,
            });
        }
    }
    tracks
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisTree {
    pub root: usize,
    /// Feasible joins reachable from the root, as `(parent, child)`.
    pub edges: Vec<(usize, usize)>,
    /// Reachable tracklets without feasible continuation.
    pub leaves: Vec<usize>,
    /// Number of root-to-leaf join sequences (saturating).
    pub n_paths: u64,
}

/// All tracklets with the full feasible-join graph and one tree per root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisForest {
    pub tracklets: Vec<Tracklet>,
    pub trees: Vec<HypothesisTree>,
}

impl HypothesisForest {
    /// Child lists over the union of all tree edges, ascending.
    pub fn children(&self) -> BTreeMap<usize, Vec<usize>> {
        let mut out: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for t in &self.trees {
            for &(p, c) in &t.edges {
                out.entry(p).or_default().push(c);
            }
        }
        for v in out.values_mut() {
            v.sort_unstable();
            v.dedup();
        }
        out
    }
}

/// Keeps every feasible join. Trees are rooted at tracklets with no feasible parent;
/// since joins always go forward in time the graph is acyclic.
pub fn build_hypothesis_trees(tracklets: &[Tracklet], cfg: &RetrackConfig) -> HypothesisForest {
    let joins = feasible_joins(tracklets, cfg);
    let mut children: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    let mut has_parent = BTreeSet::new();
    for j in &joins {
        children.entry(j.from).or_default().push(j.to);
        has_parent.insert(j.to);
    }
    for v in children.values_mut() {
        v.sort_unstable();
    }
    // path counts, latest-starting first
    let mut order: Vec<&Tracklet> = tracklets.iter().collect();
    order.sort_by_key(|t| std::cmp::Reverse((t.start_frame(), t.id)));
    let mut paths: BTreeMap<usize, u64> = BTreeMap::new();
    for t in &order {
        let n = match children.get(&t.id) {
            Some(k) => k.iter().fold(0u64, |acc, c| acc.saturating_add(paths[c])),
            None => 1,
        };
        paths.insert(t.id, n);
    }
    let mut ids: Vec<usize> = tracklets.iter().map(|t| t.id).collect();
    ids.sort_unstable();
    let trees = ids
        .iter()
        .filter(|id| !has_parent.contains(id))
        .map(|&root| {
            let mut seen = BTreeSet::new();
            let mut stack = vec![root];
            let mut edges = Vec::new();
            let mut leaves = Vec::new();
            while let Some(n) = stack.pop() {
                if !seen.insert(n) {
                    continue;
                }
                match children.get(&n) {
                    Some(k) => {
                        for &c in k {
                            edges.push((n, c));
                            stack.push(c);
                        }
                    }
                    None => leaves.push(n),
                }
            }
            edges.sort_unstable();
            leaves.sort_unstable();
            HypothesisTree { root, edges, leaves, n_paths: paths[&root] }
        })
        .collect();
    HypothesisForest { tracklets: tracklets.to_vec(), trees }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tracking::TrackletStatus;

    fn tracklet(id: usize, frames: std::ops::Range<usize>, p0: [f64; 3], v: [f64; 3], dt: f64) -> Tracklet {
        let f0 = frames.start;
        let v = Vector3::from(v);
        Tracklet {
            id,
            states: frames
                .map(|f| TrackState {
                    frame: f,
                    position: WorldPoint::from(p0) + v * ((f - f0) as f64 * dt),
                    velocity: v,
                })
                .collect(),
            status: TrackletStatus::StoppedLost,
        }
    }

    #[test]
    fn blackout_is_bridged_with_flagged_states() {
        let cfg = RetrackConfig::default();
        let dt = cfg.dt;
        let a = tracklet(0, 0..20, [0.0, 1.0, 1.0], [2.0, 0.0, 0.0], dt);
        let b = tracklet(1, 23..40, [2.0 * 23.0 * dt, 1.0, 1.0], [2.0, 0.0, 0.0], dt);
        let tracks = link_tracklets(&[a, b], &cfg);
        assert_eq!(tracks.len(), 1);
        let t = &tracks[0];
        assert_eq!(t.tracklet_ids, vec![0, 1]);
        assert_eq!(t.states.len(), 40);
        assert_eq!(t.states.iter().filter(|s| s.gap_filled).count(), 3);
        for s in &t.states {
            assert!((s.position.x - 2.0 * s.frame as f64 * dt).abs() < 1e-9);
        }
    }

    #[test]
    fn parallel_birds_join_their_own_continuations() {
        let cfg = RetrackConfig::default();
        let dt = cfg.dt;
        // side by side at the stop, distinct velocities
        let v1 = [3.0, 0.0, 0.0];
        let v2 = [3.0, 0.5, 0.0];
        let a1 = tracklet(0, 0..20, [0.0, 1.0, 1.0], v1, dt);
        let a2 = tracklet(1, 0..20, [0.1, 1.0 - 19.0 * 0.5 * dt, 1.0], v2, dt);
        let end1 = a1.last().position + Vector3::from(v1) * (4.0 * dt);
        let end2 = a2.last().position + Vector3::from(v2) * (4.0 * dt);
        let b1 = tracklet(2, 23..40, end1.into(), v1, dt);
        let b2 = tracklet(3, 23..40, end2.into(), v2, dt);
        let joins = feasible_joins(&[a1.clone(), a2.clone(), b1.clone(), b2.clone()], &cfg);
        assert!(joins.len() >= 3, "cross joins must be feasible for the test to bite");
        let tracks = link_tracklets(&[a1, a2, b1, b2], &cfg);
        let chains: Vec<Vec<usize>> = tracks.iter().map(|t| t.tracklet_ids.clone()).collect();
        assert_eq!(chains, vec![vec![0, 2], vec![1, 3]]);
    }

    #[test]
    fn short_lone_tracklet_is_dropped() {
        let cfg = RetrackConfig::default();
        let t = tracklet(0, 0..8, [1.0, 1.0, 1.0], [0.0; 3], cfg.dt);
        assert!(link_tracklets(&[t], &cfg).is_empty());
        let t = tracklet(0, 0..10, [1.0, 1.0, 1.0], [0.0; 3], cfg.dt);
        assert_eq!(link_tracklets(&[t], &cfg).len(), 1);
    }

    #[test]
    fn gap_limits() {
        let cfg = RetrackConfig::default();
        let a = tracklet(0, 0..5, [1.0, 1.0, 1.0], [0.0; 3], cfg.dt);
        let same = tracklet(1, 4..9, [1.0, 1.0, 1.0], [0.0; 3], cfg.dt);
        let far = tracklet(2, 5 + cfg.max_gap..30, [1.0, 1.0, 1.0], [0.0; 3], cfg.dt);
        let ok = tracklet(3, 4 + cfg.max_gap..30, [1.0, 1.0, 1.0], [0.0; 3], cfg.dt);
        assert!(join_cost(&a, &same, &cfg).is_none());
        assert!(join_cost(&a, &far, &cfg).is_none());
        assert!(join_cost(&a, &ok, &cfg).is_some());
    }

    #[test]
    fn ambiguity_gives_two_leaves_and_chain_without_it() {
        let cfg = RetrackConfig::default();
        let dt = cfg.dt;
        let a = tracklet(0, 0..10, [1.0, 1.0, 1.0], [0.0; 3], dt);
        let b = tracklet(1, 10..20, [1.05, 1.0, 1.0], [0.0; 3], dt);
        let c = tracklet(2, 10..20, [0.95, 1.0, 1.0], [0.0; 3], dt);
        let forest = build_hypothesis_trees(&[a.clone(), b.clone(), c], &cfg);
        assert_eq!(forest.trees.len(), 1);
        assert_eq!(forest.trees[0].leaves, vec![1, 2]);
        assert_eq!(forest.trees[0].n_paths, 2);

        let chain = build_hypothesis_trees(&[a.clone(), b.clone()], &cfg);
        let greedy = link_tracklets(&[a, b], &cfg);
        assert_eq!(chain.trees.len(), 1);
        assert_eq!(chain.trees[0].edges, vec![(0, 1)]);
        assert_eq!(greedy[0].tracklet_ids, vec![0, 1]);
    }
}
