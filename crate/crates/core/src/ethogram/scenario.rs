use std::collections::BTreeSet;

use rand::seq::SliceRandom;

use super::{BirdMeta, Sex, Song, Timelines};
use crate::geometry::WorldPoint;
use crate::seed;

/// Scripted flock with a known bond structure.
#[derive(Debug, Clone)]
pub struct BondScenario {
    pub birds: Vec<BirdMeta>,
    pub timelines: Timelines,
    pub songs: Vec<Song>,
    pub bonds: BTreeSet<(usize, usize)>,
}

const FPS: f64 = 20.0;
const FLY: f64 = 1.0;
const PERCH: f64 = 4.0;
const REST: f64 = 1.0;

fn smoothstep(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Six males and nine females. Males visit females one at a time, land 0.3 m from
/// them and sing. Six bonds are planted, one male holding two of them; the other
/// females receive a split or no songs at all.
pub fn pair_bond_scenario(seed: u64) -> BondScenario {
    let birds: Vec<BirdMeta> = (0..15)
        .map(|id| BirdMeta {
            id,
            sex: if id < 6 { Sex::M } else { Sex::F },
            label: format!("{}{id}", if id < 6 { "M" } else { "F" }),
        })
        .collect();
    let bonds = BTreeSet::from([(0, 6), (0, 7), (1, 8), (2, 9), (3, 10), (4, 11)]);

    // (male, female, songs) visits
    let mut visits: Vec<(usize, usize, usize)> = Vec::new();
    for &(m, f) in &bonds {
        for _ in 0..3 {
            visits.push((m, f, 2));
        }
    }
    visits.push((5, 6, 2));
    visits.push((5, 9, 1));
    visits.push((1, 12, 2));
    visits.push((5, 12, 2));
    for m in [2, 3, 5] {
        visits.push((m, 14, 1));
    }
    visits.shuffle(&mut seed::rng(seed, &[]));

    let station = |f: usize| {
        let k = f - 6;
        WorldPoint::new(0.8 + 2.2 * (k % 3) as f64, 0.3 + 0.9 * (k / 3) as f64, 2.0)
    };
    let home = |m: usize| WorldPoint::new(0.5 + 1.0 * m as f64, 1.2, 0.8);

    let slot = FLY + PERCH + FLY + REST;
    let n_frames = ((visits.len() as f64 * slot + REST) * FPS).round() as usize;
    let mut tl = Timelines::new(FPS);
    for f in 0..n_frames {
        for b in 6..15 {
            tl.set(b, f, station(b));
        }
        for m in 0..6 {
            tl.set(m, f, home(m));
        }
    }
    let mut songs = Vec::new();
    for (i, &(m, f, n_songs)) in visits.iter().enumerate() {
        let t0 = i as f64 * slot;
        let perch = station(f) + nalgebra::Vector3::new(0.3, 0.0, 0.0);
        let (a, b) = (home(m), perch);
        let f0 = (t0 * FPS).round() as usize;
        let f1 = ((t0 + slot) * FPS).round() as usize;
        for fr in f0..f1 {
            let t = fr as f64 / FPS - t0;
            let p = if t < FLY {
                a + (b - a) * smoothstep(t / FLY)
            } else if t < FLY + PERCH {
                b
            } else {
                b + (a - b) * smoothstep((t - FLY - PERCH) / FLY)
            };
            tl.set(m, fr, p);
        }
        for k in 0..n_songs {
            let t = t0 + FLY + 0.5 + k as f64;
            songs.push(Song { time: (t * FPS).round() / FPS, male: m });
        }
    }
    songs.sort_by(|x, y| x.time.total_cmp(&y.time).then(x.male.cmp(&y.male)));
    BondScenario { birds, timelines: tl, songs, bonds }
}
