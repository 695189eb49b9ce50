use nalgebra::Vector3;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{SceneConfig, SimError};
use crate::geometry::WorldPoint;
use crate::seed;

/// Centroid height above a perch or the floor.
const REST_HEIGHT: f64 = 0.04;
/// Half body length; head and tail sit this far from the centroid.
const HALF_LENGTH: f64 = 0.1;
/// Standard deviation of perched micro-motion, meters.
const PERCH_WOBBLE: f64 = 0.01;
const MIN_PEAK_SPEED: f64 = 2.0;
const MAX_PEAK_SPEED: f64 = 10.0;
/// Waypoints keep this clearance from the walls.
const WALL_MARGIN: f64 = 0.15;
/// Frames a fresh landing site must stay clear of earlier birds.
const LANDING_CLEARANCE: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SequenceKind {
    Stationary,
    Motion,
}

/// A half-open frame range `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceRecord {
    pub kind: SequenceKind,
    pub start: usize,
    pub end: usize,
}

impl SequenceRecord {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BirdTruth {
    pub id: usize,
    pub sequences: Vec<SequenceRecord>,
    pub centroid: Vec<WorldPoint>,
    /// Unit body axis, tail to head.
    pub heading: Vec<Vector3<f64>>,
}

impl BirdTruth {
    pub fn head(&self, frame: usize) -> WorldPoint {
        self.centroid[frame] + self.heading[frame] * HALF_LENGTH
    }

    pub fn tail(&self, frame: usize) -> WorldPoint {
        self.centroid[frame] - self.heading[frame] * HALF_LENGTH
    }

    /// Position at a frame that may equal `n_frames` (the exclusive end of the last
    /// sequence); clamps to the last frame.
    pub fn centroid_at(&self, frame: usize) -> WorldPoint {
        self.centroid[frame.min(self.centroid.len() - 1)]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthScene {
    pub fps: f64,
    pub n_frames: usize,
    pub volume: [f64; 3],
    pub birds: Vec<BirdTruth>,
}

impl GroundTruthScene {
    pub fn motion_count(&self) -> usize {
        self.birds
            .iter()
            .flat_map(|b| &b.sequences)
            .filter(|s| s.kind == SequenceKind::Motion)
            .count()
    }

    /// Smallest pairwise centroid distance over all frames.
    pub fn min_pairwise_distance(&self) -> f64 {
        let mut best = f64::INFINITY;
        for f in 0..self.n_frames {
            for i in 0..self.birds.len() {
                for j in i + 1..self.birds.len() {
                    best = best.min((self.birds[i].centroid[f] - self.birds[j].centroid[f]).norm());
                }
            }
        }
        best
    }

    /// Ground-truth CSV: `frame,bird_id,x,y,z,head_x,head_y,head_z`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("frame,bird_id,x,y,z,head_x,head_y,head_z\n");
        for f in 0..self.n_frames {
            for b in &self.birds {
                let c = b.centroid[f];
                let h = b.head(f);
                out.push_str(&format!(
                    "{f},{},{},{},{},{},{},{}\n",
                    b.id, c.x, c.y, c.z, h.x, h.y, h.z
                ));
            }
        }
        out
    }
}

struct Builder<'a> {
    cfg: &'a SceneConfig,
    n: usize,
    dt: f64,
    placed: &'a [BirdTruth],
    centroid: Vec<WorldPoint>,
    heading: Vec<Vector3<f64>>,
    sequences: Vec<SequenceRecord>,
}

impl Builder<'_> {
    fn clear(&self, frame: usize, p: &WorldPoint) -> bool {
        let sep = self.cfg.min_separation;
        sep <= 0.0 || self.placed.iter().all(|b| (b.centroid[frame] - p).norm() >= sep)
    }

    fn landing_site(&self, rng: &mut ChaCha8Rng) -> WorldPoint {
        let [lx, ly, _] = self.cfg.volume;
        if rng.random::<f64>() < self.cfg.motion.floor_prob {
            let m = 0.3;
            WorldPoint::new(rng.random_range(m..lx - m), rng.random_range(m..ly - m), REST_HEIGHT)
        } else {
            let p = &self.cfg.perches[rng.random_range(0..self.cfg.perches.len())];
            let q = p.point(rng.random());
            WorldPoint::new(q.x, q.y, (q.z + REST_HEIGHT).min(self.cfg.volume[2]))
        }
    }

    fn inside(&self, p: &WorldPoint) -> bool {
        (0..3).all(|k| p[k] >= WALL_MARGIN && p[k] <= self.cfg.volume[k] - WALL_MARGIN)
    }

    /// Perched positions for `[start, end)` around `site`, wobbling smoothly and
    /// returning exactly to `site` at both ends.
    fn perch_path(&self, rng: &mut ChaCha8Rng, site: &WorldPoint, start: usize, end: usize) -> Vec<WorldPoint> {
        let len = (end - start) as f64;
        let amp: Vec<Vector3<f64>> = (0..3)
            .map(|_| {
                let g = |r: &mut ChaCha8Rng| r.sample::<f64, _>(StandardNormal) * PERCH_WOBBLE / 3f64.sqrt();
                Vector3::new(g(rng), g(rng), g(rng))
            })
            .collect();
        (start..end)
            .map(|f| {
                let s = (f - start) as f64 / len;
                let w = amp
                    .iter()
                    .enumerate()
                    .fold(Vector3::zeros(), |acc, (k, a)| acc + a * ((k + 1) as f64 * std::f64::consts::PI * s).sin());
                let mut q = site + w;
                for k in 0..3 {
                    q[k] = q[k].clamp(0.0, self.cfg.volume[k]);
                }
                q
            })
            .collect()
    }

    /// Waypoints and per-hop frame counts for a motion of `frames` frames from `from`.
    fn plan_flight(&self, rng: &mut ChaCha8Rng, from: &WorldPoint, frames: usize) -> Option<(Vec<WorldPoint>, Vec<usize>)> {
        let max_hop = (self.cfg.motion.max_hop / self.dt).max(1.0);
        let hops = ((frames as f64 / max_hop).ceil() as usize).max(1);
        let hop_frames: Vec<usize> = (0..hops)
            .map(|h| frames / hops + usize::from(h < frames % hops))
            .collect();
        'attempt: for _ in 0..20 {
            let mut pts = vec![*from];
            for (h, &hf) in hop_frames.iter().enumerate() {
                let t = hf as f64 * self.dt;
                let (dmin, dmax) = (MIN_PEAK_SPEED * t / 1.5, MAX_PEAK_SPEED * t / 1.5);
                let prev = *pts.last().unwrap();
                let last = h + 1 == hops;
                let mut found = None;
                for _ in 0..200 {
                    let cand = if last {
                        self.landing_site(rng)
                    } else {
                        let dir: Vector3<f64> = Vector3::new(
                            rng.sample(StandardNormal),
                            rng.sample(StandardNormal),
                            rng.sample(StandardNormal),
                        );
                        let Some(dir) = dir.try_normalize(1e-12) else { continue };
                        prev + dir * rng.random_range(dmin..=dmax)
                    };
                    let d = (cand - prev).norm();
                    if d >= dmin && d <= dmax && (last || self.inside(&cand)) {
                        found = Some(cand);
                        break;
                    }
                }
                match found {
                    Some(p) => pts.push(p),
                    None => continue 'attempt,
                }
            }
            return Some((pts, hop_frames));
        }
        None
    }

    fn flight_path(pts: &[WorldPoint], hop_frames: &[usize]) -> (Vec<WorldPoint>, Vec<Vector3<f64>>) {
        let mut pos = Vec::new();
        let mut dir = Vec::new();
        for (h, &hf) in hop_frames.iter().enumerate() {
            let (a, b) = (pts[h], pts[h + 1]);
            let d = (b - a).try_normalize(1e-12).unwrap_or_else(Vector3::x);
            for k in 0..hf {
                let tau = k as f64 / hf as f64;
                // cubic Hermite with zero end velocities
                let s = tau * tau * (3.0 - 2.0 * tau);
                pos.push(a + (b - a) * s);
                dir.push(d);
            }
        }
        (pos, dir)
    }

    fn random_yaw(rng: &mut ChaCha8Rng) -> Vector3<f64> {
        let a = rng.random_range(0.0..std::f64::consts::TAU);
        Vector3::new(a.cos(), a.sin(), 0.0)
    }

    fn run(mut self, rng: &mut ChaCha8Rng) -> Option<BirdTruth> {
        let n = self.n;
        let stats = self.cfg.motion;
        let fps = self.cfg.fps;
        let mut site = None;
        for _ in 0..500 {
            let s = self.landing_site(rng);
            if (0..n.min(LANDING_CLEARANCE + 1)).all(|f| self.clear(f, &s)) {
                site = Some(s);
                break;
            }
        }
        let mut site = site?;
        let mut t = 0usize;
        loop {
            // stationary sequence from t
            let want = ((stats.stationary.sample(rng) * fps).round() as usize).max(1);
            let mut end = (t + want).min(n);
            if n - end < 2 {
                end = n;
            }
            let yaw = Self::random_yaw(rng);
            let path = self.perch_path(rng, &site, t, end);
            // leave before anyone else arrives; the site stays occupied at `end`
            if let Some(k) = (t..=end.min(n - 1)).find(|&f| {
                let p = if f < end { path[f - t] } else { site };
                !self.clear(f, &p)
            }) {
                if k <= t + 1 {
                    return None;
                }
                end = k - 1;
            }
            self.centroid.extend_from_slice(&path[..end - t]);
            self.heading.extend(std::iter::repeat_n(yaw, end - t));
            self.sequences.push(SequenceRecord { kind: SequenceKind::Stationary, start: t, end });
            t = end;
            if t == n {
                break;
            }

            // motion sequence from t, leaving at least one landed frame
            let room = n - t - 1;
            if room == 0 {
                return None;
            }
            let mut accepted = None;
            for _ in 0..50 {
                let frames = ((stats.flight.sample(rng) * fps).round() as usize).clamp(1, room);
                let Some((pts, hops)) = self.plan_flight(rng, &site, frames) else { continue };
                let (pos, dir) = Self::flight_path(&pts, &hops);
                let landing = *pts.last().unwrap();
                let ok = pos.iter().enumerate().all(|(k, p)| self.clear(t + k, p))
                    && (t + frames..(t + frames + LANDING_CLEARANCE + 1).min(n))
                        .all(|f| self.clear(f, &landing));
                if ok {
                    accepted = Some((pos, dir, landing));
                    break;
                }
            }
            let (pos, dir, landing) = accepted?;
            let frames = pos.len();
            self.centroid.extend(pos);
            self.heading.extend(dir);
            self.sequences.push(SequenceRecord { kind: SequenceKind::Motion, start: t, end: t + frames });
            t += frames;
            site = landing;
        }
        Some(BirdTruth {
            id: self.placed.len(),
            sequences: self.sequences,
            centroid: self.centroid,
            heading: self.heading,
        })
    }
}

/// Generates a scene deterministically from `cfg.rng_seed`. Birds are placed one
/// after another; with `min_separation > 0` each new sequence is checked against the
/// birds already placed and resampled on conflict.
pub fn generate_scene(cfg: &SceneConfig) -> Result<GroundTruthScene, SimError> {
    cfg.validate()?;
    let n = cfg.n_frames();
    let base = seed::stage_seed(cfg.rng_seed, "scene");
    let mut birds: Vec<BirdTruth> = Vec::with_capacity(cfg.n_birds);
    for b in 0..cfg.n_birds {
        let mut done = None;
        for attempt in 0..200u64 {
            let mut rng = seed::rng(base, &[b as u64, attempt]);
            let builder = Builder {
                cfg,
                n,
                dt: 1.0 / cfg.fps,
                placed: &birds,
                centroid: Vec::with_capacity(n),
                heading: Vec::with_capacity(n),
                sequences: Vec::new(),
            };
            if let Some(bird) = builder.run(&mut rng) {
                done = Some(bird);
                break;
            }
        }
        birds.push(done.ok_or(SimError::Separation(b))?);
    }
    Ok(GroundTruthScene {
        fps: cfg.fps,
        n_frames: n,
        volume: cfg.volume,
        birds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(duration: f64, seed: u64) -> SceneConfig {
        SceneConfig { duration, rng_seed: seed, ..Default::default() }
    }

    #[test]
    fn zero_duration_is_one_stationary_frame() {
        let s = generate_scene(&cfg(0.0, 1)).unwrap();
        assert_eq!(s.n_frames, 1);
        for b in &s.birds {
            assert_eq!(b.sequences, vec![SequenceRecord { kind: SequenceKind::Stationary, start: 0, end: 1 }]);
        }
        assert_eq!(s.motion_count(), 0);
    }

    #[test]
    fn deterministic() {
        let a = generate_scene(&cfg(30.0, 5)).unwrap();
        let b = generate_scene(&cfg(30.0, 5)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_csv(), b.to_csv());
        assert_ne!(a, generate_scene(&cfg(30.0, 6)).unwrap());
    }

    #[test]
    fn sequences_tile_and_alternate() {
        let s = generate_scene(&cfg(120.0, 2)).unwrap();
        for b in &s.birds {
            assert_eq!(b.centroid.len(), s.n_frames);
            assert_eq!(b.sequences[0].start, 0);
            assert_eq!(b.sequences.last().unwrap().end, s.n_frames);
            assert_eq!(b.sequences.last().unwrap().kind, SequenceKind::Stationary);
            for w in b.sequences.windows(2) {
                assert_eq!(w[0].end, w[1].start);
                assert_ne!(w[0].kind, w[1].kind);
                assert!(!w[0].is_empty());
            }
        }
    }

    #[test]
    fn positions_are_continuous_and_inside() {
        let s = generate_scene(&cfg(120.0, 3)).unwrap();
        let dt = 1.0 / s.fps;
        for b in &s.birds {
            for f in 1..s.n_frames {
                let step = (b.centroid[f] - b.centroid[f - 1]).norm();
                assert!(step <= MAX_PEAK_SPEED * dt + 1e-9, "jump {step}");
            }
            for p in &b.centroid {
                assert!((0..3).all(|k| p[k] >= 0.0 && p[k] <= s.volume[k]));
            }
            // junction frames: a motion starts where the perch site is and ends on the next one
            for seq in b.sequences.iter().filter(|q| q.kind == SequenceKind::Motion) {
                let before = b.centroid[seq.start - 1];
                assert!((b.centroid[seq.start] - before).norm() < 3.0 * PERCH_WOBBLE + 1e-9);
            }
        }
    }

    #[test]
    fn peak_speeds_within_bounds() {
        let s = generate_scene(&cfg(300.0, 4)).unwrap();
        let dt = 1.0 / s.fps;
        for b in &s.birds {
            for seq in b.sequences.iter().filter(|q| q.kind == SequenceKind::Motion) {
                let peak = (seq.start + 1..seq.end.min(s.n_frames))
                    .map(|f| (b.centroid[f] - b.centroid[f - 1]).norm() / dt)
                    .fold(0.0, f64::max);
                assert!(peak <= MAX_PEAK_SPEED + 1e-6, "peak {peak}");
                if seq.len() >= 8 {
                    assert!(peak >= 0.8 * MIN_PEAK_SPEED, "peak {peak} len {}", seq.len());
                }
            }
        }
    }

    #[test]
    fn separation_is_enforced() {
        let c = SceneConfig { min_separation: 0.5, ..cfg(60.0, 7) };
        let s = generate_scene(&c).unwrap();
        assert!(s.min_pairwise_distance() >= 0.5);
    }
}
