use super::{GroundTruthScene, SequenceKind};
use crate::evaluation::{Bucket, WildExample};

/// One example per motion sequence, ordered by bird then time. The start points are
/// the pose at the take-off frame (the end of the preceding perch), the end points
/// the pose at the landing frame.
pub fn export_wild(scene: &GroundTruthScene) -> Vec<WildExample> {
    let mut out = Vec::new();
    for bird in &scene.birds {
        for seq in bird.sequences.iter().filter(|s| s.kind == SequenceKind::Motion) {
            let (s, e) = (seq.start, seq.end);
            out.push(WildExample {
                index: out.len(),
                target_id: bird.id,
                frame_start: s,
                frame_end: e,
                start_head: bird.head(s).coords.into(),
                start_tail: bird.tail(s).coords.into(),
                end_head: bird.head(e).coords.into(),
                end_tail: bird.tail(e).coords.into(),
                bucket: Bucket::of(e - s),
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::validate_manifest;
    use crate::simulator::{generate_scene, SceneConfig};

    #[test]
    fn one_example_per_motion_and_chained_endpoints() {
        let scene = generate_scene(&SceneConfig { duration: 200.0, rng_seed: 9, ..Default::default() }).unwrap();
        let ex = export_wild(&scene);
        assert_eq!(ex.len(), scene.motion_count());
        assert!(!ex.is_empty());
        validate_manifest(&ex).unwrap();
        for e in &ex {
            let bird = &scene.birds[e.target_id];
            let k = bird.sequences.iter().position(|s| s.start == e.frame_start).unwrap();
            let before = bird.sequences[k - 1];
            assert_eq!(before.kind, SequenceKind::Stationary);
            // the stationary sequence ends where the motion begins
            assert_eq!(e.start_head, <[f64; 3]>::from(bird.head(before.end).coords));
            assert_eq!(e.bucket, Bucket::of(e.frame_end - e.frame_start));
        }
    }
}
