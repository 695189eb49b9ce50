//! Interaction ethograms: approach / leave / stay / sing-to events from per-bird
//! timelines and song times, pairwise matrices, pair bonds and dyad transitions.

mod scenario;

pub use scenario::{pair_bond_scenario, BondScenario};

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::geometry::WorldPoint;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Sex {
    M,
    F,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BirdMeta {
    pub id: usize,
    pub sex: Sex,
    pub label: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Song {
    /// Seconds from frame 0.
    #[serde(rename = "time_s")]
    pub time: f64,
    #[serde(rename = "male_id")]
    pub male: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InteractionKind {
    Approach,
    Leave,
    Stay,
    SingTo,
}

impl InteractionKind {
    pub const ALL: [InteractionKind; 4] = [Self::Approach, Self::Leave, Self::Stay, Self::SingTo];

    pub fn name(&self) -> &'static str {
        match self {
            Self::Approach => "approach",
            Self::Leave => "leave",
            Self::Stay => "stay",
            Self::SingTo => "sing_to",
        }
    }

    fn index(&self) -> usize {
        *self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InteractionEvent {
    pub time: f64,
    pub actor: usize,
    pub target: usize,
    pub kind: InteractionKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EthogramConfig {
    /// Interaction distance, meters.
    pub d_int: f64,
    /// An approached bird that stays longer than this has "stayed", seconds.
    pub stay_wait: f64,
    /// Longest silence chained into a dyad transition, seconds.
    pub dyad_window: f64,
    /// Speed above which a bird counts as moving, m/s.
    pub speed_threshold: f64,
    /// Shortest still period that ends a flight, seconds.
    pub min_still: f64,
}

impl Default for EthogramConfig {
    fn default() -> Self {
        Self {
            d_int: 0.5,
            stay_wait: 1.0,
            dyad_window: 60.0,
            speed_threshold: 0.25,
            min_still: 0.25,
        }
    }
}

impl EthogramConfig {
    pub fn validate(&self) -> Result<(), String> {
        let ok = [self.d_int, self.stay_wait, self.dyad_window, self.speed_threshold]
            .iter()
            .all(|v| v.is_finite() && *v > 0.0)
            && self.min_still >= 0.0;
        if ok {
            Ok(())
        } else {
            Err("ethogram parameters must be positive".into())
        }
    }
}

/// Per-bird positions on a common frame grid starting at frame 0. `None` marks
/// frames without a position.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Timelines {
    pub fps: f64,
    pub birds: BTreeMap<usize, Vec<Option<WorldPoint>>>,
}

impl Timelines {
    pub fn new(fps: f64) -> Self {
        Self { fps, birds: BTreeMap::new() }
    }

    pub fn n_frames(&self) -> usize {
        self.birds.values().map(Vec::len).max().unwrap_or(0)
    }

    pub fn at(&self, bird: usize, frame: usize) -> Option<WorldPoint> {
        self.birds.get(&bird).and_then(|v| v.get(frame).copied().flatten())
    }

    pub fn set(&mut self, bird: usize, frame: usize, p: WorldPoint) {
        let v = self.birds.entry(bird).or_default();
        if v.len() <= frame {
            v.resize(frame + 1, None);
        }
        v[frame] = Some(p);
    }

    /// Reads `frame,bird_id,x,y,z[,...]` rows; extra columns are ignored.
    pub fn from_csv(text: &str, fps: f64) -> Result<Self, String> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
        let mut out = Self::new(fps);
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| format!("row {}: {e}", line + 2))?;
            let field = |k: usize| -> Result<&str, String> {
                rec.get(k).ok_or_else(|| format!("row {}: missing column {k}", line + 2))
            };
            let num = |k: usize| -> Result<f64, String> {
                field(k)?.trim().parse::<f64>().map_err(|e| format!("row {}: {e}", line + 2))
            };
            let int = |k: usize| -> Result<usize, String> {
                field(k)?.trim().parse::<usize>().map_err(|e| format!("row {}: {e}", line + 2))
            };
            out.set(int(1)?, int(0)?, WorldPoint::new(num(2)?, num(3)?, num(4)?));
        }
        Ok(out)
    }
}

/// Maximal still periods `[start, end]` (inclusive frames) of one bird.
fn still_periods(track: &[Option<WorldPoint>], fps: f64, cfg: &EthogramConfig) -> Vec<(usize, usize)> {
    let min_len = ((cfg.min_still * fps).round() as usize).max(1);
    let moving = |f: usize| -> bool {
        f > 0
            && match (track[f - 1], track[f]) {
                (Some(a), Some(b)) => (b - a).norm() * fps > cfg.speed_threshold,
                _ => false,
            }
    };
    let mut out = Vec::new();
    let mut start: Option<usize> = None;
    for f in 0..=track.len() {
        // frame f is still when it has a position and the step into it is slow
        let still = f < track.len() && track[f].is_some() && !moving(f);
        match (still, start) {
            (true, None) => start = Some(f),
            (false, Some(s)) => {
                if f - s >= min_len || s == 0 || f == track.len() {
                    out.push((s, f - 1));
                }
                start = None;
            }
            _ => {}
        }
    }
    out
}

/// A landing (first still frame after a flight) or take-off (last still frame
/// before a flight) of one bird.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Flight {
    takeoff: usize,
    landing: usize,
}

fn flights(track: &[Option<WorldPoint>], fps: f64, cfg: &EthogramConfig) -> Vec<Flight> {
    still_periods(track, fps, cfg)
        .windows(2)
        .map(|w| Flight { takeoff: w[0].1, landing: w[1].0 })
        .collect()
}

fn dist(tl: &Timelines, a: usize, b: usize, f: usize) -> Option<f64> {
    Some((tl.at(a, f)? - tl.at(b, f)?).norm())
}

fn sort_events(events: &mut [InteractionEvent]) {
    events.sort_by(|x, y| {
        x.time
            .total_cmp(&y.time)
            .then(x.kind.cmp(&y.kind))
            .then(x.actor.cmp(&y.actor))
            .then(x.target.cmp(&y.target))
    });
}

/// Interaction events from timelines and song times.
///
/// * approach `b1 -> b2`: `b1` lands within `d_int` of `b2`.
/// * leave `b1 -> b2`: `b1` takes off within `d_int` of `b2` and the distance exceeds
///   `d_int` before it lands again.
/// * stay `b2 -> b1`: `b2` was approached by `b1` and did not take off within
///   `stay_wait` (emitted at approach time + `stay_wait`; requires the timeline to
///   reach that time).
/// * sing_to `m -> b`: for every bird within `d_int` of the singer at the song frame.
pub fn extract_interactions(tl: &Timelines, songs: &[Song], cfg: &EthogramConfig) -> Vec<InteractionEvent> {
    let fps = tl.fps;
    let ids: Vec<usize> = tl.birds.keys().copied().collect();
    let flights: BTreeMap<usize, Vec<Flight>> = tl
        .birds
        .iter()
        .map(|(id, t)| (*id, flights(t, fps, cfg)))
        .collect();
    let n_frames = tl.n_frames();
    let mut events = Vec::new();
    let within = |d: Option<f64>| d.is_some_and(|d| d <= cfg.d_int);

    for &a in &ids {
        for fl in &flights[&a] {
            for &b in ids.iter().filter(|&&b| b != a) {
                if within(dist(tl, a, b, fl.landing)) {
                    let t = fl.landing as f64 / fps;
                    events.push(InteractionEvent { time: t, actor: a, target: b, kind: InteractionKind::Approach });
                    // did b stay?
                    let deadline = t + cfg.stay_wait;
                    let b_departs = flights[&b]
                        .iter()
                        .map(|g| g.takeoff as f64 / fps)
                        .find(|&d| d >= t);
                    let covered = (n_frames.saturating_sub(1)) as f64 / fps > deadline;
                    let stayed = match b_departs {
                        Some(d) => d > deadline,
                        None => covered,
                    };
                    if stayed && covered {
                        events.push(InteractionEvent { time: deadline, actor: b, target: a, kind: InteractionKind::Stay });
                    }
                }
                if within(dist(tl, a, b, fl.takeoff))
                    && (fl.takeoff + 1..=fl.landing).any(|f| dist(tl, a, b, f).is_some_and(|d| d > cfg.d_int))
                {
                    let t = fl.takeoff as f64 / fps;
                    events.push(InteractionEvent { time: t, actor: a, target: b, kind: InteractionKind::Leave });
                }
            }
        }
    }
    for s in songs {
        let f = (s.time * fps).round();
        if f < 0.0 {
            continue;
        }
        let f = f as usize;
        for &b in ids.iter().filter(|&&b| b != s.male) {
            if within(dist(tl, s.male, b, f)) {
                events.push(InteractionEvent { time: s.time, actor: s.male, target: b, kind: InteractionKind::SingTo });
            }
        }
    }
    sort_events(&mut events);
    events
}

/// Actor-by-target counts for one kind; rows and columns follow `birds` order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseMatrix {
    pub kind: InteractionKind,
    pub ids: Vec<usize>,
    pub counts: Vec<Vec<u64>>,
}

impl PairwiseMatrix {
    pub fn get(&self, actor: usize, target: usize) -> u64 {
        let i = self.ids.iter().position(|&x| x == actor);
        let j = self.ids.iter().position(|&x| x == target);
        match (i, j) {
            (Some(i), Some(j)) => self.counts[i][j],
            _ => 0,
        }
    }

    pub fn to_csv(&self, labels: &BTreeMap<usize, String>) -> String {
        let name = |id: &usize| labels.get(id).cloned().unwrap_or_else(|| id.to_string());
        let mut s = String::from("actor");
        for id in &self.ids {
            s.push(',');
            s.push_str(&name(id));
        }
        s.push('\n');
        for (i, row) in self.counts.iter().enumerate() {
            s.push_str(&name(&self.ids[i]));
            for c in row {
                s.push_str(&format!(",{c}"));
            }
            s.push('\n');
        }
        s
    }
}

pub fn pairwise_matrices(events: &[InteractionEvent], birds: &[BirdMeta]) -> Vec<PairwiseMatrix> {
    let ids: Vec<usize> = birds.iter().map(|b| b.id).collect();
    let pos: BTreeMap<usize, usize> = ids.iter().enumerate().map(|(i, id)| (*id, i)).collect();
    InteractionKind::ALL
        .iter()
        .map(|&kind| {
            let mut counts = vec![vec![0u64; ids.len()]; ids.len()];
            for e in events.iter().filter(|e| e.kind == kind && e.actor != e.target) {
                if let (Some(&i), Some(&j)) = (pos.get(&e.actor), pos.get(&e.target)) {
                    counts[i][j] += 1;
                }
            }
            PairwiseMatrix { kind, ids: ids.clone(), counts }
        })
        .collect()
}

/// `(male, female)` pairs where the female received strictly more than half of her
/// sing-to events from that male.
pub fn infer_pair_bonds(events: &[InteractionEvent], birds: &[BirdMeta]) -> BTreeSet<(usize, usize)> {
    let sex: BTreeMap<usize, Sex> = birds.iter().map(|b| (b.id, b.sex)).collect();
    let mut received: BTreeMap<usize, BTreeMap<usize, u64>> = BTreeMap::new();
    for e in events.iter().filter(|e| e.kind == InteractionKind::SingTo) {
        if sex.get(&e.target) == Some(&Sex::F) {
            *received.entry(e.target).or_default().entry(e.actor).or_default() += 1;
        }
    }
    let mut bonds = BTreeSet::new();
    for (f, by_male) in received {
        let total: u64 = by_male.values().sum();
        for (m, c) in by_male {
            if sex.get(&m) == Some(&Sex::M) && 2 * c > total {
                bonds.insert((m, f));
            }
        }
    }
    bonds
}

/// State of a dyad event: who acted (male or female) and what they did.
pub fn transition_state(actor_sex: Sex, kind: InteractionKind) -> usize {
    let role = match actor_sex {
        Sex::M => 0,
        Sex::F => 1,
    };
    role * 4 + kind.index()
}

pub fn state_labels() -> Vec<String> {
    let mut out = Vec::new();
    for role in ["M", "F"] {
        for k in InteractionKind::ALL {
            out.push(format!("{role}:{}", k.name()));
        }
    }
    out
}

pub const N_STATES: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionMatrix {
    pub labels: Vec<String>,
    pub counts: Vec<Vec<u64>>,
    /// Row-normalized counts; rows without counts are all zero.
    pub probabilities: Vec<Vec<f64>>,
    pub n_transitions: u64,
}

impl TransitionMatrix {
    fn from_counts(counts: Vec<Vec<u64>>) -> Self {
        let probabilities = counts
            .iter()
            .map(|row| {
                let s: u64 = row.iter().sum();
                row.iter().map(|&c| if s == 0 { 0.0 } else { c as f64 / s as f64 }).collect()
            })
            .collect();
        Self {
            labels: state_labels(),
            n_transitions: counts.iter().flatten().sum(),
            counts,
            probabilities,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionAnalysis {
    pub bonded: TransitionMatrix,
    pub nonbonded: TransitionMatrix,
    /// Bonded minus non-bonded probabilities.
    pub difference: Vec<Vec<f64>>,
}

/// Consecutive events within each male-female dyad (gap at most `dyad_window`)
/// counted as transitions, split by bond status.
pub fn transition_analysis(
    events: &[InteractionEvent],
    birds: &[BirdMeta],
    bonds: &BTreeSet<(usize, usize)>,
    dyad_window: f64,
) -> TransitionAnalysis {
    let sex: BTreeMap<usize, Sex> = birds.iter().map(|b| (b.id, b.sex)).collect();
    let mut dyads: BTreeMap<(usize, usize), Vec<InteractionEvent>> = BTreeMap::new();
    for e in events {
        let (Some(&sa), Some(&st)) = (sex.get(&e.actor), sex.get(&e.target)) else { continue };
        let key = match (sa, st) {
            (Sex::M, Sex::F) => (e.actor, e.target),
            (Sex::F, Sex::M) => (e.target, e.actor),
            _ => continue,
        };
        dyads.entry(key).or_default().push(*e);
    }
    let mut bonded = vec![vec![0u64; N_STATES]; N_STATES];
    let mut nonbonded = vec![vec![0u64; N_STATES]; N_STATES];
    for (key, mut evs) in dyads {
        sort_events(&mut evs);
        let target = if bonds.contains(&key) { &mut bonded } else { &mut nonbonded };
        for w in evs.windows(2) {
            if w[1].time - w[0].time <= dyad_window {
                let s0 = transition_state(sex[&w[0].actor], w[0].kind);
                let s1 = transition_state(sex[&w[1].actor], w[1].kind);
                target[s0][s1] += 1;
            }
        }
    }
    let bonded = TransitionMatrix::from_counts(bonded);
    let nonbonded = TransitionMatrix::from_counts(nonbonded);
    let difference = bonded
        .probabilities
        .iter()
        .zip(&nonbonded.probabilities)
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x - y).collect())
        .collect();
    TransitionAnalysis { bonded, nonbonded, difference }
}

pub fn events_to_csv(events: &[InteractionEvent]) -> String {
    let mut s = String::from("time_s,actor,target,kind\n");
    for e in events {
        s.push_str(&format!("{},{},{},{}\n", e.time, e.actor, e.target, e.kind.name()));
    }
    s
}

pub fn songs_to_csv(songs: &[Song]) -> String {
    let mut s = String::from("time_s,male_id\n");
    for x in songs {
        s.push_str(&format!("{},{}\n", x.time, x.male));
    }
    s
}

pub fn songs_from_csv(text: &str) -> Result<Vec<Song>, String> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    rdr.deserialize()
        .enumerate()
        .map(|(i, r)| r.map_err(|e| format!("songs row {}: {e}", i + 2)))
        .collect()
}

pub fn matrix_to_csv(labels: &[String], rows: &[Vec<f64>]) -> String {
    let mut s = String::from("from");
    for l in labels {
        s.push(',');
        s.push_str(l);
    }
    s.push('\n');
    for (l, row) in labels.iter().zip(rows) {
        s.push_str(l);
        for v in row {
            s.push_str(&format!(",{v}"));
        }
        s.push('\n');
    }
    s
}
