//! Stage orchestration and on-disk formats.
//!
//! Each stage reads the files written by the previous one, so any contiguous run
//! of stages can be re-executed on its own. All outputs are deterministic for a
//! given configuration; the manifest records hashes instead of timestamps.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::{hex, PipelineConfig, SimulatorConfig, Stage, StageRange};
use crate::detection::{DetectionSet, MaskRecord};
use crate::ethogram::{
    events_to_csv, extract_interactions, infer_pair_bonds, matrix_to_csv, pairwise_matrices,
    songs_from_csv, songs_to_csv, transition_analysis, BirdMeta, EthogramConfig, Timelines,
};
use crate::evaluation::{evaluate as eval_greedy, oracle_evaluate, EvalConfig, EvalReport, WildExample};
use crate::geometry::{cameras_from_json, cameras_to_json, Camera, WorldPoint};
use crate::reconstruction::{Cluster, FrameClusters, ReconstructionConfig, Reconstructor};
use crate::retracking::{
    build_hypothesis_trees, link_tracklets, HypothesisForest, HypothesisTree, RetrackConfig, Track,
    TrackPoint,
};
use crate::seed::stage_seed;
use crate::simulator::{default_rig, export_wild, generate_scene, generate_songs, render_detections, roster};
use crate::tracking::{track_and_smooth, TrackState, Tracklet, TrackletStatus, TrackerConfig};

pub const CAMERAS_FILE: &str = "cameras.json";
pub const GROUND_TRUTH_FILE: &str = "ground_truth.csv";
pub const DETECTIONS_FILE: &str = "detections.jsonl";
pub const WILD_FILE: &str = "wild_manifest.json";
pub const SONGS_FILE: &str = "songs.csv";
pub const BIRDS_FILE: &str = "birds.json";
pub const CLUSTERS_FILE: &str = "clusters.jsonl";
pub const TRACKLETS_FILE: &str = "tracklets.jsonl";
pub const TRACKS_FILE: &str = "tracks.jsonl";
pub const TREES_FILE: &str = "trees.json";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TXT: &str = "report.txt";
pub const ETHOGRAM_DIR: &str = "ethogram";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Version of every stage's output format; bumped when a format changes.
pub const STAGE_VERSION: u32 = 1;

/// Frames rendered or triangulated per parallel batch.
const BATCH: usize = 64;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config error: {0}")]
    Config(String),
    #[error("[{stage}] {}: {source}", path.display())]
    Io {
        stage: Stage,
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("[{stage}] {msg}")]
    Data { stage: Stage, msg: String },
}

impl PipelineError {
    /// Process exit code: 2 for configuration problems, 3 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            _ => 3,
        }
    }
}

type Result<T> = std::result::Result<T, PipelineError>;

fn io_err(stage: Stage, path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io { stage, path: path.to_path_buf(), source }
}

fn data_err(stage: Stage, path: &Path, msg: impl std::fmt::Display) -> PipelineError {
    PipelineError::Data { stage, msg: format!("{}: {msg}", path.display()) }
}

fn read_text(stage: Stage, path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(io_err(stage, path))
}

fn write_text(stage: Stage, path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(stage, dir))?;
    }
    fs::write(path, text).map_err(io_err(stage, path))
}

fn write_json<T: Serialize + ?Sized>(stage: Stage, path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| data_err(stage, path, e))?;
    text.push('\n');
    write_text(stage, path, &text)
}

fn read_json<T: for<'de> Deserialize<'de>>(stage: Stage, path: &Path) -> Result<T> {
    serde_json::from_str(&read_text(stage, path)?).map_err(|e| data_err(stage, path, e))
}

struct JsonLines {
    stage: Stage,
    path: PathBuf,
    out: BufWriter<File>,
}

impl JsonLines {
    fn create(stage: Stage, path: &Path) -> Result<Self> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(io_err(stage, dir))?;
        }
        let f = File::create(path).map_err(io_err(stage, path))?;
        Ok(Self { stage, path: path.to_path_buf(), out: BufWriter::new(f) })
    }

    fn write<T: Serialize>(&mut self, row: &T) -> Result<()> {
        serde_json::to_writer(&mut self.out, row).map_err(|e| data_err(self.stage, &self.path, e))?;
        self.out.write_all(b"\n").map_err(io_err(self.stage, &self.path))
    }

    fn finish(mut self) -> Result<()> {
        self.out.flush().map_err(io_err(self.stage, &self.path))
    }
}

/// Calls `f` on every non-empty line of a JSON-lines file.
fn for_each_line<T: for<'de> Deserialize<'de>>(
    stage: Stage,
    path: &Path,
    mut f: impl FnMut(T) -> Result<()>,
) -> Result<()> {
    let file = File::open(path).map_err(io_err(stage, path))?;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(stage, path))?;
        if line.trim().is_empty() {
            continue;
        }
        let row: T = serde_json::from_str(&line).map_err(|e| data_err(stage, path, format!("line {}: {e}", i + 1)))?;
        f(row)?;
    }
    Ok(())
}

// ---------------------------------------------------------------- record types

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterRecord {
    pub frame: usize,
    pub cluster_id: usize,
    pub center: [f64; 3],
    pub n_points: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackletRecord {
    pub tracklet_id: usize,
    pub frame: usize,
    pub pos: [f64; 3],
    pub vel: [f64; 3],
    pub status: TrackletStatus,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackRecord {
    pub track_id: usize,
    /// Source tracklet; absent on gap-filled states.
    pub tracklet_id: Option<usize>,
    pub frame: usize,
    pub pos: [f64; 3],
    pub vel: [f64; 3],
    pub gap_filled: bool,
}

// ---------------------------------------------------------------- loaders

pub fn read_cameras(stage: Stage, path: &Path) -> Result<Vec<Camera>> {
    cameras_from_json(&read_text(stage, path)?).map_err(|e| data_err(stage, path, e))
}

pub fn read_wild_manifest(stage: Stage, path: &Path) -> Result<Vec<WildExample>> {
    read_json(stage, path)
}

pub fn read_birds(stage: Stage, path: &Path) -> Result<Vec<BirdMeta>> {
    read_json(stage, path)
}

/// Cluster frames in order; frames between the first and last one that hold no
/// cluster come back empty.
pub fn read_clusters(stage: Stage, path: &Path) -> Result<Vec<FrameClusters>> {
    let mut by_frame: BTreeMap<usize, Vec<Cluster>> = BTreeMap::new();
    for_each_line(stage, path, |r: ClusterRecord| {
        by_frame.entry(r.frame).or_default().push(Cluster {
            frame: r.frame,
            id: r.cluster_id,
            center: WorldPoint::from(r.center),
            members: Vec::new(),
            n_points: r.n_points,
        });
        Ok(())
    })?;
    let (Some(&lo), Some(&hi)) = (by_frame.keys().next(), by_frame.keys().next_back()) else {
        return Ok(Vec::new());
    };
    Ok((lo..=hi)
        .map(|f| {
            let mut clusters = by_frame.remove(&f).unwrap_or_default();
            clusters.sort_by_key(|c| c.id);
            FrameClusters { frame: f, clusters }
        })
        .collect())
}

pub fn read_tracklets(stage: Stage, path: &Path) -> Result<Vec<Tracklet>> {
    let mut by_id: BTreeMap<usize, Tracklet> = BTreeMap::new();
    for_each_line(stage, path, |r: TrackletRecord| {
        let t = by_id.entry(r.tracklet_id).or_insert_with(|| Tracklet {
            id: r.tracklet_id,
            states: Vec::new(),
            status: r.status,
        });
        if t.states.last().is_some_and(|s| s.frame + 1 != r.frame) {
            return Err(data_err(stage, path, format!("tracklet {} is not contiguous at frame {}", r.tracklet_id, r.frame)));
        }
        t.states.push(TrackState {
            frame: r.frame,
            position: WorldPoint::from(r.pos),
            velocity: r.vel.into(),
        });
        Ok(())
    })?;
    Ok(by_id.into_values().collect())
}

pub fn read_tracks(stage: Stage, path: &Path) -> Result<Vec<Track>> {
    let mut by_id: BTreeMap<usize, Track> = BTreeMap::new();
    for_each_line(stage, path, |r: TrackRecord| {
        let t = by_id.entry(r.track_id).or_insert_with(|| Track {
            id: r.track_id,
            tracklet_ids: Vec::new(),
            states: Vec::new(),
        });
        if t.states.last().is_some_and(|s| s.frame + 1 != r.frame) {
            return Err(data_err(stage, path, format!("track {} is not contiguous at frame {}", r.track_id, r.frame)));
        }
        if let Some(id) = r.tracklet_id {
            if t.tracklet_ids.last() != Some(&id) {
                t.tracklet_ids.push(id);
            }
        }
        t.states.push(TrackPoint {
            frame: r.frame,
            position: WorldPoint::from(r.pos),
            velocity: r.vel.into(),
            gap_filled: r.gap_filled,
        });
        Ok(())
    })?;
    Ok(by_id.into_values().collect())
}

pub fn read_trees(stage: Stage, path: &Path) -> Result<Vec<HypothesisTree>> {
    read_json(stage, path)
}

// ---------------------------------------------------------------- stages

/// Generates the scene, renders detections and writes calibration, ground truth,
/// WILD manifest, songs and roster into `out`.
pub fn simulate(cfg: &SimulatorConfig, seed: u64, out: &Path) -> Result<()> {
    let st = Stage::Simulate;
    let mut scene_cfg = cfg.scene.clone();
    scene_cfg.rng_seed = stage_seed(seed, "simulate");
    let scene = generate_scene(&scene_cfg).map_err(|e| PipelineError::Data { stage: st, msg: e.to_string() })?;
    let cameras = default_rig();
    write_text(st, &out.join(CAMERAS_FILE), &cameras_to_json(&cameras))?;
    write_text(st, &out.join(GROUND_TRUTH_FILE), &scene.to_csv())?;
    write_json(st, &out.join(WILD_FILE), &export_wild(&scene))?;
    let birds = roster(scene.birds.len());
    write_json(st, &out.join(BIRDS_FILE), &birds)?;
    let songs = generate_songs(&scene, &birds, cfg.scene.song_rate, stage_seed(seed, "songs"));
    write_text(st, &out.join(SONGS_FILE), &songs_to_csv(&songs))?;

    let render_seed = stage_seed(seed, "render");
    let mut w = JsonLines::create(st, &out.join(DETECTIONS_FILE))?;
    let mut f0 = 0;
    while f0 < scene.n_frames {
        let f1 = (f0 + BATCH).min(scene.n_frames);
        for set in render_detections(&scene, &cameras, &cfg.noise, render_seed, f0..f1) {
            for r in set.records() {
                w.write(&r)?;
            }
        }
        f0 = f1;
    }
    w.finish()
}

/// Streams detections through matching, triangulation, ghost filtering and
/// clustering.
pub fn reconstruct(
    calibration: &Path,
    detections: &Path,
    cfg: &ReconstructionConfig,
    seed: u64,
    out: &Path,
) -> Result<()> {
    let st = Stage::Reconstruct;
    let cameras = read_cameras(st, calibration)?;
    let mut rec = Reconstructor::new(&cameras, *cfg, stage_seed(seed, "reconstruct"));
    let mut batch: Vec<DetectionSet> = Vec::new();
    let mut pending: Vec<MaskRecord> = Vec::new();
    let mut last_frame: Option<usize> = None;
    for_each_line(st, detections, |r: MaskRecord| {
        if let Some(f) = last_frame {
            if r.frame < f {
                return Err(data_err(st, detections, format!("frame {} follows frame {f}", r.frame)));
            }
            if r.frame > f {
                batch.extend(DetectionSet::from_records(std::mem::take(&mut pending)));
                if batch.len() >= BATCH {
                    rec.push_batch(&batch);
                    batch.clear();
                }
            }
        }
        last_frame = Some(r.frame);
        pending.push(r);
        Ok(())
    })?;
    batch.extend(DetectionSet::from_records(pending));
    rec.push_batch(&batch);

    let mut w = JsonLines::create(st, out)?;
    for fc in rec.finish() {
        for c in &fc.clusters {
            w.write(&ClusterRecord {
                frame: fc.frame,
                cluster_id: c.id,
                center: c.center.coords.into(),
                n_points: c.n_points,
            })?;
        }
    }
    w.finish()
}

pub fn track(clusters: &Path, cfg: &TrackerConfig, out: &Path) -> Result<()> {
    let st = Stage::Track;
    let frames = read_clusters(st, clusters)?;
    let tracklets = track_and_smooth(&frames, cfg);
    write_tracklets(st, out, &tracklets)
}

pub fn write_tracklets(stage: Stage, out: &Path, tracklets: &[Tracklet]) -> Result<()> {
    let mut w = JsonLines::create(stage, out)?;
    for t in tracklets {
        for s in &t.states {
            w.write(&TrackletRecord {
                tracklet_id: t.id,
                frame: s.frame,
                pos: s.position.coords.into(),
                vel: s.velocity.into(),
                status: t.status,
            })?;
        }
    }
    w.finish()
}

/// Greedy tracklet joining into tracks plus the full hypothesis trees.
pub fn retrack(tracklets: &Path, cfg: &RetrackConfig, tracks_out: &Path, trees_out: &Path) -> Result<()> {
    let st = Stage::Retrack;
    let tracklets = read_tracklets(st, tracklets)?;
    let tracks = link_tracklets(&tracklets, cfg);
    write_tracks(st, tracks_out, &tracklets, &tracks)?;
    let forest = build_hypothesis_trees(&tracklets, cfg);
    write_json(st, trees_out, &forest.trees)
}

pub fn write_tracks(stage: Stage, out: &Path, tracklets: &[Tracklet], tracks: &[Track]) -> Result<()> {
    let by_id: BTreeMap<usize, &Tracklet> = tracklets.iter().map(|t| (t.id, t)).collect();
    let mut w = JsonLines::create(stage, out)?;
    for t in tracks {
        for s in &t.states {
            let source = if s.gap_filled {
                None
            } else {
                t.tracklet_ids
                    .iter()
                    .copied()
                    .find(|id| by_id.get(id).is_some_and(|x| x.state_at(s.frame).is_some()))
            };
            w.write(&TrackRecord {
                track_id: t.id,
                tracklet_id: source,
                frame: s.frame,
                pos: s.position.coords.into(),
                vel: s.velocity.into(),
                gap_filled: s.gap_filled,
            })?;
        }
    }
    w.finish()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub greedy: EvalReport,
    pub oracle: Option<EvalReport>,
}

/// Hypothesis-tree inputs for oracle scoring.
pub struct OracleInputs<'a> {
    pub trees: &'a Path,
    pub tracklets: &'a Path,
}

pub fn evaluate(
    manifest: &Path,
    tracks: &Path,
    oracle: Option<OracleInputs<'_>>,
    cfg: &EvalConfig,
    out_dir: &Path,
) -> Result<Report> {
    let st = Stage::Evaluate;
    let examples = read_wild_manifest(st, manifest)?;
    let tracks = read_tracks(st, tracks)?;
    let greedy = eval_greedy(&examples, &tracks, cfg).map_err(|e| data_err(st, manifest, e))?;
    let oracle = match oracle {
        Some(o) => {
            let forest = HypothesisForest {
                tracklets: read_tracklets(st, o.tracklets)?,
                trees: read_trees(st, o.trees)?,
            };
            Some(oracle_evaluate(&examples, &tracks, &forest, cfg).map_err(|e| data_err(st, manifest, e))?)
        }
        None => None,
    };
    let report = Report { greedy, oracle };
    write_json(st, &out_dir.join(REPORT_JSON), &report)?;
    let mut txt = report.greedy.to_table("Greedy re-tracking");
    if let Some(o) = &report.oracle {
        txt.push('\n');
        txt.push_str(&o.to_table("Oracle matching"));
    }
    write_text(st, &out_dir.join(REPORT_TXT), &txt)?;
    Ok(report)
}

/// Interaction extraction, pairwise matrices, pair bonds and transition analysis,
/// written into `out_dir`.
pub fn ethogram(
    timelines: &Path,
    songs: &Path,
    birds: &Path,
    fps: f64,
    cfg: &EthogramConfig,
    out_dir: &Path,
) -> Result<()> {
    let st = Stage::Ethogram;
    let tl = Timelines::from_csv(&read_text(st, timelines)?, fps).map_err(|e| data_err(st, timelines, e))?;
    let songs = songs_from_csv(&read_text(st, songs)?).map_err(|e| data_err(st, songs, e))?;
    let birds = read_birds(st, birds)?;
    let events = extract_interactions(&tl, &songs, cfg);
    write_text(st, &out_dir.join("events.csv"), &events_to_csv(&events))?;

    let labels: BTreeMap<usize, String> = birds.iter().map(|b| (b.id, b.label.clone())).collect();
    for m in pairwise_matrices(&events, &birds) {
        write_text(st, &out_dir.join(format!("pairwise_{}.csv", m.kind.name())), &m.to_csv(&labels))?;
    }
    let bonds = infer_pair_bonds(&events, &birds);
    let mut text = String::from("male_id,female_id,male,female\n");
    for (m, f) in &bonds {
        text.push_str(&format!("{m},{f},{},{}\n", labels[m], labels[f]));
    }
    write_text(st, &out_dir.join("bonds.csv"), &text)?;

    let ta = transition_analysis(&events, &birds, &bonds, cfg.dyad_window);
    write_json(st, &out_dir.join("transitions.json"), &ta)?;
    let l = &ta.bonded.labels;
    write_text(st, &out_dir.join("transitions_bonded.csv"), &matrix_to_csv(l, &ta.bonded.probabilities))?;
    write_text(st, &out_dir.join("transitions_nonbonded.csv"), &matrix_to_csv(l, &ta.nonbonded.probabilities))?;
    write_text(st, &out_dir.join("transitions_difference.csv"), &matrix_to_csv(l, &ta.difference))
}

// ---------------------------------------------------------------- orchestration

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageEntry {
    pub name: String,
    pub version: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub crate_version: String,
    pub config_sha256: String,
    pub rng_seed: u64,
    pub stages: Vec<StageEntry>,
    /// Relative path to SHA-256 of every output file.
    pub files: BTreeMap<String, String>,
}

struct Inputs {
    calibration: PathBuf,
    detections: PathBuf,
    manifest: PathBuf,
    songs: PathBuf,
    birds: PathBuf,
    timelines: PathBuf,
}

fn inputs(cfg: &PipelineConfig) -> Inputs {
    let out = &cfg.paths.output_dir;
    let pick = |p: &Option<PathBuf>, name: &str| p.clone().unwrap_or_else(|| out.join(name));
    Inputs {
        calibration: pick(&cfg.paths.calibration, CAMERAS_FILE),
        detections: pick(&cfg.paths.detections, DETECTIONS_FILE),
        manifest: pick(&cfg.paths.manifest, WILD_FILE),
        songs: pick(&cfg.paths.songs, SONGS_FILE),
        birds: pick(&cfg.paths.birds, BIRDS_FILE),
        timelines: pick(&cfg.paths.timelines, GROUND_TRUTH_FILE),
    }
}

/// Runs `stages` in order inside a worker pool of `cfg.workers` threads, then
/// writes the run manifest.
pub fn run(cfg: &PipelineConfig, stages: StageRange) -> Result<RunManifest> {
    cfg.validate().map_err(PipelineError::Config)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| PipelineError::Config(format!("worker pool: {e}")))?;
    pool.install(|| run_stages(cfg, stages))
}

fn run_stages(cfg: &PipelineConfig, stages: StageRange) -> Result<RunManifest> {
    let out = &cfg.paths.output_dir;
    fs::create_dir_all(out).map_err(io_err(stages.first, out))?;
    let inp = inputs(cfg);
    let seed = cfg.rng_seed;
    for stage in stages.stages() {
        match stage {
            Stage::Simulate => simulate(&cfg.simulator, seed, out)?,
            Stage::Reconstruct => {
                reconstruct(&inp.calibration, &inp.detections, &cfg.reconstruction, seed, &out.join(CLUSTERS_FILE))?
            }
            Stage::Track => track(&out.join(CLUSTERS_FILE), &cfg.tracker, &out.join(TRACKLETS_FILE))?,
            Stage::Retrack => retrack(
                &out.join(TRACKLETS_FILE),
                &cfg.retracking,
                &out.join(TRACKS_FILE),
                &out.join(TREES_FILE),
            )?,
            Stage::Evaluate => {
                evaluate(
                    &inp.manifest,
                    &out.join(TRACKS_FILE),
                    Some(OracleInputs { trees: &out.join(TREES_FILE), tracklets: &out.join(TRACKLETS_FILE) }),
                    &cfg.evaluation,
                    out,
                )?;
            }
            Stage::Ethogram => ethogram(
                &inp.timelines,
                &inp.songs,
                &inp.birds,
                cfg.simulator.scene.fps,
                &cfg.ethogram,
                &out.join(ETHOGRAM_DIR),
            )?,
        }
    }
    let manifest = RunManifest {
        crate_version: env!("CARGO_PKG_VERSION").to_string(),
        config_sha256: cfg.hash(),
        rng_seed: seed,
        stages: stages
            .stages()
            .into_iter()
            .map(|s| StageEntry { name: s.name().to_string(), version: STAGE_VERSION })
            .collect(),
        files: hash_tree(stages.last, out)?,
    };
    write_json(stages.last, &out.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

/// SHA-256 of every file under `root` except the manifest, keyed by relative path
/// with `/` separators.
fn hash_tree(stage: Stage, root: &Path) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    let mut dirs = vec![root.to_path_buf()];
    while let Some(dir) = dirs.pop() {
        for entry in fs::read_dir(&dir).map_err(io_err(stage, &dir))? {
            let path = entry.map_err(io_err(stage, &dir))?.path();
            if path.is_dir() {
                dirs.push(path);
                continue;
            }
            let rel = path.strip_prefix(root).expect("under root");
            let key = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
            if key == MANIFEST_FILE {
                continue;
            }
            let bytes = fs::read(&path).map_err(io_err(stage, &path))?;
            out.insert(key, hex(&Sha256::digest(&bytes)));
        }
    }
    Ok(out)
}
