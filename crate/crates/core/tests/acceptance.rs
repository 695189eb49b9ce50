//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any fails.

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::path::Path;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use flocktrack::config::{PipelineConfig, StageRange};
use flocktrack::ethogram::*;
use flocktrack::evaluation::{evaluate, oracle_evaluate, survival_projection, EvalConfig, EvalReport};
use flocktrack::geometry::{triangulate_dlt, Camera, Pixel, WorldPoint};
use flocktrack::pipeline;
use flocktrack::reconstruction::{dbscan_labels, reconstruct_sequence, ReconstructionConfig};
use flocktrack::retracking::{build_hypothesis_trees, link_tracklets, RetrackConfig, Track};
use flocktrack::simulator::*;
use flocktrack::tracking::{hungarian, track_and_smooth, TrackerConfig};

type Outcome = Result<String, String>;

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ------------------------------------------------------------------ 1 geometry

/// A random point in the aviary and every camera of a jittered aviary rig that
/// sees it: corner eyes moved up to 0.3 m and aim points up to 0.5 m.
fn random_views(rng: &mut ChaCha8Rng) -> (WorldPoint, Vec<Camera>) {
    let jitter = |rng: &mut ChaCha8Rng, r: f64| Vector3::new(rng.random_range(-r..r), rng.random_range(-r..r), rng.random_range(-r..r));
    loop {
        let p = WorldPoint::new(rng.random_range(0.0..6.0), rng.random_range(0.0..2.4), rng.random_range(0.0..2.4));
        let cams: Vec<Camera> = default_rig()
            .iter()
            .filter_map(|c| {
                let eye = c.center() + jitter(rng, 0.3);
                let aim = eye + c.rotation().row(2).transpose() * 4.0 + jitter(rng, 0.5);
                let cam = Camera::look_at(c.id(), &eye, &aim, &Vector3::z(), c.fx(), c.fy(), c.width(), c.height()).ok()?;
                cam.sees(&p).then_some(cam)
            })
            .collect();
        if cams.len() >= 2 {
            return (p, cams);
        }
    }
}

fn geometry_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut exact, mut noisy) = (0.0f64, 0.0f64);
    for _ in 0..1000 {
        let (p, cams) = random_views(&mut rng);
        let clean: Vec<(&Camera, Pixel)> = cams.iter().map(|c| (c, c.project(&p).unwrap())).collect();
        let jittered: Vec<(&Camera, Pixel)> = clean
            .iter()
            .map(|(c, px)| (*c, Pixel::new(px.camera_id, px.u + rng.random_range(-0.5..0.5), px.v + rng.random_range(-0.5..0.5))))
            .collect();
        exact = exact.max((triangulate_dlt(&clean).map_err(|e| e.to_string())?.point - p).norm());
        noisy = noisy.max((triangulate_dlt(&jittered).map_err(|e| e.to_string())?.point - p).norm());
    }
    check(
        exact < 1e-6 && noisy < 0.02,
        format!("max error {exact:.2e} m noiseless, {:.2} cm at ±0.5 px", noisy * 100.0),
    )
}

// ---------------------------------------------------------------- 2 assignment

fn brute_force(cost: &DMatrix<f64>) -> f64 {
    let (r, c) = cost.shape();
    let (small, large, t) = if r <= c { (r, c, false) } else { (c, r, true) };
    let at = |i: usize, j: usize| if t { cost[(j, i)] } else { cost[(i, j)] };
    // every injection of the smaller side into the larger
    fn go(i: usize, small: usize, large: usize, used: &mut Vec<bool>, acc: f64, best: &mut f64, at: &dyn Fn(usize, usize) -> f64) {
        if i == small {
            *best = best.min(acc);
            return;
        }
        for j in 0..large {
            if !used[j] {
                used[j] = true;
                go(i + 1, small, large, used, acc + at(i, j), best, at);
                used[j] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    go(0, small, large, &mut vec![false; large], 0.0, &mut best, &at);
    if small == 0 {
        0.0
    } else {
        best
    }
}

fn assignment_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for k in 0..500 {
        let (r, c) = (rng.random_range(1..=7), rng.random_range(1..=7));
        // integer costs keep every sum exact
        let cost = DMatrix::from_fn(r, c, |_, _| rng.random_range(0..100) as f64);
        let a = hungarian(&cost, f64::INFINITY);
        let sum: f64 = a.pairs.iter().map(|&(i, j)| cost[(i, j)]).sum();
        let want = brute_force(&cost);
        if a.pairs.len() != r.min(c) || sum != want || a.total_cost != want {
            return Err(format!("matrix {k} ({r}x{c}): hungarian {sum}, brute force {want}"));
        }
    }
    Ok("500 matrices up to 7x7 match exactly".into())
}

// -------------------------------------------------------------------- 3 dbscan

fn dbscan_reference(points: &[WorldPoint], eps: f64, min_pts: usize) -> Vec<Option<usize>> {
    let n = points.len();
    let nb = |i: usize| -> Vec<usize> { (0..n).filter(|&j| (points[i] - points[j]).norm() <= eps).collect() };
    let core: Vec<bool> = (0..n).map(|i| nb(i).len() >= min_pts).collect();
    let mut labels = vec![None; n];
    let mut next = 0;
    for s in 0..n {
        if !core[s] || labels[s].is_some() {
            continue;
        }
        labels[s] = Some(next);
        let mut queue = VecDeque::from([s]);
        while let Some(q) = queue.pop_front() {
            for r in nb(q) {
                if core[r] && labels[r].is_none() {
                    labels[r] = Some(next);
                    queue.push_back(r);
                }
            }
        }
        next += 1;
    }
    // border points take the lowest-index core neighbour
    for i in 0..n {
        if !core[i] {
            labels[i] = nb(i).into_iter().find(|&j| core[j]).and_then(|j| labels[j]);
        }
    }
    labels
}

/// Relabels clusters in order of first appearance so partitions compare directly.
fn canonical(labels: &[Option<usize>]) -> Vec<Option<usize>> {
    let mut map = HashMap::new();
    labels
        .iter()
        .map(|l| l.map(|l| {
            let k = map.len();
            *map.entry(l).or_insert(k)
        }))
        .collect()
}

fn dbscan_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for k in 0..200 {
        let n = rng.random_range(0..=200);
        // blobs plus background so every set has core, border and noise points
        let centers: Vec<Vector3<f64>> = (0..rng.random_range(1..6))
            .map(|_| Vector3::new(rng.random(), rng.random(), rng.random()))
            .collect();
        let pts: Vec<WorldPoint> = (0..n)
            .map(|_| {
                if rng.random_bool(0.7) {
                    let c = centers[rng.random_range(0..centers.len())];
                    (c + Vector3::new(rng.random_range(-0.08..0.08), rng.random_range(-0.08..0.08), rng.random_range(-0.08..0.08))).into()
                } else {
                    WorldPoint::new(rng.random(), rng.random(), rng.random())
                }
            })
            .collect();
        let eps = rng.random_range(0.02..0.2);
        let min_pts = rng.random_range(1..8);
        if canonical(&dbscan_labels(&pts, eps, min_pts)) != canonical(&dbscan_reference(&pts, eps, min_pts)) {
            return Err(format!("set {k}: n={n} eps={eps:.3} min_pts={min_pts} differs"));
        }
    }
    Ok("200 point sets partition identically".into())
}

// ----------------------------------------------------------- shared scene runs

struct SceneRun {
    scene: GroundTruthScene,
    tracks: Vec<Track>,
    greedy: EvalReport,
    oracle: EvalReport,
}

fn scene_run(scene_cfg: SceneConfig, noise: NoiseModel, rec: ReconstructionConfig) -> SceneRun {
    let scene = generate_scene(&scene_cfg).expect("scene");
    let cams = default_rig();
    let det = render_detections(&scene, &cams, &noise, 5, 0..scene.n_frames);
    let clusters = reconstruct_sequence(&det, &cams, &rec, 1);
    let tracklets = track_and_smooth(&clusters, &TrackerConfig::default());
    let rcfg = RetrackConfig::default();
    let tracks = link_tracklets(&tracklets, &rcfg);
    let forest = build_hypothesis_trees(&tracklets, &rcfg);
    let examples = export_wild(&scene);
    let ecfg = EvalConfig::default();
    let greedy = evaluate(&examples, &tracks, &ecfg).expect("greedy");
    let oracle = oracle_evaluate(&examples, &tracks, &forest, &ecfg).expect("oracle");
    SceneRun { scene, tracks, greedy, oracle }
}

fn ac_rows(r: &EvalReport) -> String {
    r.rows
        .iter()
        .map(|row| match row.ac {
            Some(ac) => format!("{}:{}[{:.2} {:.2} {:.2} {:.2}]", row.bucket.label(), row.count, ac[0], ac[1], ac[2], ac[3]),
            None => format!("{}:0", row.bucket.label()),
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// Changes of the nearest ground-truth bird along each track, gap-filled states
/// skipped.
fn identity_switches(scene: &GroundTruthScene, tracks: &[Track]) -> usize {
    let mut switches = 0;
    for t in tracks {
        let mut last: Option<usize> = None;
        for s in t.states.iter().filter(|s| !s.gap_filled) {
            let nearest = scene
                .birds
                .iter()
                .min_by(|a, b| {
                    (a.centroid[s.frame] - s.position).norm().total_cmp(&(b.centroid[s.frame] - s.position).norm())
                })
                .map(|b| b.id);
            if last.is_some() && nearest != last {
                switches += 1;
            }
            last = nearest;
        }
    }
    switches
}

// ---------------------------------------------------------- 4 noiseless scene

fn noiseless_run() -> SceneRun {
    let scene = SceneConfig { n_birds: 15, duration: 60.0, min_separation: 0.55, rng_seed: 3, ..Default::default() };
    scene_run(scene, NoiseModel::zero(), ReconstructionConfig { mask_cap: 15, ..Default::default() })
}

fn noiseless_suite(run: &SceneRun) -> Outcome {
    let gate = TrackerConfig::default().gate;
    let sep = run.scene.min_pairwise_distance();
    let total = run.greedy.total;
    let hits: f64 = run.greedy.rows.iter().filter_map(|r| r.ac.map(|ac| ac[0] * r.count as f64)).sum();
    let switches = identity_switches(&run.scene, &run.tracks);
    check(
        sep > 2.0 * gate && total > 0 && (hits - total as f64).abs() < 1e-9 && switches == 0,
        format!(
            "min distance {sep:.3} m, AC0.1 {:.3} over {total} examples, {switches} identity switches",
            hits / total.max(1) as f64
        ),
    )
}

// ------------------------------------------------------------- 5 degradation

fn noisy_run() -> SceneRun {
    let motion = MotionStats {
        stationary: DurationStats { p10: 1.0, p50: 3.0, p90: 8.0 },
        ..Default::default()
    };
    let scene = SceneConfig { n_birds: 15, duration: 140.0, rng_seed: 3, motion, ..Default::default() };
    let noise = NoiseModel { miss_rate: 0.1, false_positive_rate: 1.0, centroid_jitter: 0.5, merge_occlusions: true };
    scene_run(scene, noise, ReconstructionConfig { mask_cap: 15, trifocal_max_misses: 1, ..Default::default() })
}

fn degradation_suite(run: &SceneRun) -> Outcome {
    let r = &run.greedy;
    let rows: Vec<[f64; 4]> = r.rows.iter().filter_map(|row| row.ac).collect();
    let all_buckets = rows.len() == 3;
    let across = rows.windows(2).all(|w| (0..4).all(|k| w[0][k] >= w[1][k]));
    let within = rows.iter().all(|ac| ac.windows(2).all(|p| p[0] <= p[1]));
    check(
        r.total >= 300 && all_buckets && across && within,
        format!("{} examples, {}", r.total, ac_rows(r)),
    )
}

// ---------------------------------------------------------- 6 oracle dominance

fn dominance_suite(runs: &[&SceneRun]) -> Outcome {
    let dominated = runs.iter().all(|r| r.oracle.dominates(&r.greedy));
    let long = |r: &EvalReport| r.rows.last().and_then(|row| row.ac).map_or(0.0, |ac| ac[0]);
    let margin = runs.iter().map(|r| long(&r.oracle) - long(&r.greedy)).fold(f64::NEG_INFINITY, f64::max);
    check(
        dominated && margin > 0.0,
        format!("oracle >= greedy on {} runs, best >300 AC0.1 gain {margin:.2}", runs.len()),
    )
}

// ------------------------------------------------------------------ 7 survival

fn survival_suite() -> Outcome {
    let a = survival_projection(0.44, 200.0);
    let b = survival_projection(0.44, 300.0);
    check((a - 0.1936).abs() < 1e-12 && (0.085..=0.086).contains(&b), format!("{a:.4} at 200 frames, {b:.4} at 300"))
}

// ------------------------------------------------------------------ 8 ethogram

const FPS: f64 = 100.0;

/// Bird 1 flies in from 3 m away and lands `land_dist` from bird 0. If given,
/// `takeoff` is bird 0's last still frame before it flies off and settles elsewhere.
fn approach_fixture(land_dist: f64, takeoff: Option<usize>) -> Timelines {
    let home = WorldPoint::new(0.0, 1.0, 2.0);
    let far = WorldPoint::new(3.0, 1.0, 2.0);
    let near = WorldPoint::new(land_dist, 1.0, 2.0);
    let mut tl = Timelines::new(FPS);
    for f in 0..600 {
        let p1 = match f {
            0..50 => far,
            50..101 => far + (near - far) * ((f - 50) as f64 / 51.0),
            _ => near,
        };
        tl.set(1, f, p1);
        let p0 = match takeoff {
            Some(k) if f > k => {
                let s = ((f - k) as f64 / 30.0).min(1.0);
                home + Vector3::new(0.0, 0.0, -1.5) * s + Vector3::new(0.0, 1.0, 0.0) * s
            }
            _ => home,
        };
        tl.set(0, f, p0);
    }
    tl
}

fn has(ev: &[InteractionEvent], kind: InteractionKind, actor: usize, target: usize) -> bool {
    ev.iter().any(|e| e.kind == kind && e.actor == actor && e.target == target)
}

fn ethogram_suite() -> Outcome {
    let cfg = EthogramConfig::default();
    let mut notes = Vec::new();

    // approach radius, inclusive at exactly 0.5 m
    let approach = |d: f64| has(&extract_interactions(&approach_fixture(d, None), &[], &cfg), InteractionKind::Approach, 1, 0);
    let radius_ok = approach(0.49) && approach(0.5) && !approach(0.51);
    notes.push(format!("approach 0.49/0.50/0.51 m -> {}/{}/{}", approach(0.49), approach(0.5), approach(0.51)));

    // the approached bird takes off 0.99 s or 1.01 s after the landing
    let landed = extract_interactions(&approach_fixture(0.3, None), &[], &cfg);
    let landing = landed
        .iter()
        .find(|e| e.kind == InteractionKind::Approach)
        .map(|e| (e.time * FPS).round() as usize)
        .ok_or("no approach in the stay fixture")?;
    let early = extract_interactions(&approach_fixture(0.3, Some(landing + 99)), &[], &cfg);
    let late = extract_interactions(&approach_fixture(0.3, Some(landing + 101)), &[], &cfg);
    let stay_ok = has(&early, InteractionKind::Leave, 0, 1)
        && !has(&early, InteractionKind::Stay, 0, 1)
        && has(&late, InteractionKind::Stay, 0, 1);
    notes.push(format!(
        "leave at 0.99 s -> stay {}, leave at 1.01 s -> stay {}",
        has(&early, InteractionKind::Stay, 0, 1),
        has(&late, InteractionKind::Stay, 0, 1)
    ));

    // exactly half of a female's songs from one male is not a bond
    let birds = vec![
        BirdMeta { id: 0, sex: Sex::M, label: "M0".into() },
        BirdMeta { id: 1, sex: Sex::M, label: "M1".into() },
        BirdMeta { id: 2, sex: Sex::F, label: "F2".into() },
    ];
    let songs = |m: usize, n: usize| {
        (0..n).map(move |i| InteractionEvent { time: i as f64, actor: m, target: 2, kind: InteractionKind::SingTo })
    };
    let half: Vec<_> = songs(0, 4).chain(songs(1, 4)).collect();
    let more: Vec<_> = songs(0, 5).chain(songs(1, 4)).collect();
    let bond_ok = infer_pair_bonds(&half, &birds).is_empty() && infer_pair_bonds(&more, &birds) == BTreeSet::from([(0, 2)]);
    notes.push(format!("4/8 songs -> {} bonds", infer_pair_bonds(&half, &birds).len()));

    // transition rows sum to one
    let sc = pair_bond_scenario(7);
    let events = extract_interactions(&sc.timelines, &sc.songs, &cfg);
    let bonds = infer_pair_bonds(&events, &sc.birds);
    let ta = transition_analysis(&events, &sc.birds, &bonds, cfg.dyad_window);
    let mut worst = 0.0f64;
    let mut rows = 0;
    for m in [&ta.bonded, &ta.nonbonded] {
        for (c, p) in m.counts.iter().zip(&m.probabilities) {
            if c.iter().sum::<u64>() > 0 {
                rows += 1;
                worst = worst.max((p.iter().sum::<f64>() - 1.0).abs());
            }
        }
    }
    let rows_ok = rows > 0 && worst <= 1e-9 && bonds == sc.bonds;
    notes.push(format!("{rows} transition rows, max |sum-1| {worst:.1e}"));

    check(radius_ok && stay_ok && bond_ok && rows_ok, notes.join("; "))
}

// ----------------------------------------------------------- 9 reproducibility

fn tiny_config(out: &Path) -> PipelineConfig {
    let mut cfg = PipelineConfig::from_toml_with(
        "",
        &[
            "simulator.scene.n_birds=5".into(),
            "simulator.scene.duration=6.0".into(),
            "simulator.noise.miss_rate=0.1".into(),
            "simulator.noise.false_positive_rate=0.5".into(),
            "reconstruction.mask_cap=10".into(),
            "reconstruction.trifocal_max_misses=1".into(),
        ],
    )
    .expect("config");
    cfg.paths.output_dir = out.to_path_buf();
    cfg
}

fn read_tree(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut dirs = vec![root.to_path_buf()];
    while let Some(d) = dirs.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                dirs.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().display().to_string(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn reproducibility_suite() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        pipeline::run(&tiny_config(out), StageRange::all()).map_err(|e| e.to_string())?;
    }
    let (ta, tb) = (read_tree(&a), read_tree(&b));
    let bytes: usize = ta.iter().map(|(_, v)| v.len()).sum();
    check(!ta.is_empty() && ta == tb, format!("{} files, {bytes} bytes compared", ta.len()))
}

// ----------------------------------------------------------------------- main

fn report(name: &str, limit: Option<Duration>, f: impl FnOnce() -> Outcome) -> bool {
    let t = Instant::now();
    let res = f();
    let took = t.elapsed();
    let slow = limit.is_some_and(|l| took > l);
    let (ok, detail) = match res {
        Ok(d) if !slow => (true, d),
        Ok(d) => (false, format!("{d}; too slow")),
        Err(d) => (false, d),
    };
    println!("{} {name}: {detail} ({:.1} s)", if ok { "PASS" } else { "FAIL" }, took.as_secs_f64());
    ok
}

fn main() {
    let mut ok = true;
    ok &= report("1 geometry round trips", Some(Duration::from_secs(10)), geometry_suite);
    ok &= report("2 assignment vs brute force", Some(Duration::from_secs(5)), assignment_suite);
    ok &= report("3 dbscan vs quadratic reference", Some(Duration::from_secs(10)), dbscan_suite);

    let mut clean = None;
    ok &= report("4 noiseless end to end", Some(Duration::from_secs(300)), || {
        let run = noiseless_run();
        let out = noiseless_suite(&run);
        clean = Some(run);
        out
    });
    let clean = clean.expect("noiseless run");

    let noisy = noisy_run();
    ok &= report("5 degradation ordering", None, || degradation_suite(&noisy));
    ok &= report("6 oracle dominance", None, || dominance_suite(&[&clean, &noisy]));
    ok &= report("7 survival arithmetic", None, survival_suite);
    ok &= report("8 ethogram rules", None, ethogram_suite);
    ok &= report("9 reproducible runs", None, reproducibility_suite);

    if !ok {
        std::process::exit(1);
    }
}
