use super::Tracklet;

/// Unnormalised Gaussian weights for offsets `-radius..=radius`.
pub fn gaussian_kernel(sigma: f64, radius: usize) -> Vec<f64> {
    let r = radius as isize;
    (-r..=r)
        .map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp())
        .collect()
}

/// Per-coordinate Gaussian smoothing of positions and velocities. Near the ends
/// the truncated kernel is renormalised over the samples that exist. Frames and
/// status are unchanged.
pub fn smooth(tracklet: &Tracklet, sigma: f64, radius: usize) -> Tracklet {
    let kernel = gaussian_kernel(sigma, radius);
    let n = tracklet.states.len() as isize;
    let r = radius as isize;
    let mut out = tracklet.clone();
    for (k, state) in out.states.iter_mut().enumerate() {
        let k = k as isize;
        let lo = (k - r).max(0);
        let hi = (k + r).min(n - 1);
        let mut pos = nalgebra::Vector3::zeros();
        let mut vel = nalgebra::Vector3::zeros();
        let mut total = 0.0;
        for j in lo..=hi {
            let w = kernel[(j - k + r) as usize];
            let s = &tracklet.states[j as usize];
            pos += s.position.coords * w;
            vel += s.velocity * w;
            total += w;
        }
        state.position = (pos / total).into();
        state.velocity = vel / total;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::WorldPoint;
    use crate::tracking::{TrackState, TrackletStatus};
    use nalgebra::Vector3;

    fn from_positions(ps: &[WorldPoint]) -> Tracklet {
        Tracklet {
            id: 0,
            states: ps
                .iter()
                .enumerate()
                .map(|(f, p)| TrackState {
                    frame: f + 100,
                    position: *p,
                    velocity: Vector3::new(1.0, 2.0, 3.0),
                })
                .collect(),
            status: TrackletStatus::StoppedLost,
        }
    }

    #[test]
    fn constant_trajectory_is_fixed_point() {
        let t = from_positions(&vec![WorldPoint::new(1.5, 0.3, 2.1); 12]);
        let s = smooth(&t, 1.5, 4);
        for (a, b) in t.states.iter().zip(&s.states) {
            assert!((a.position - b.position).norm() < 1e-12);
            assert!((a.velocity - b.velocity).norm() < 1e-12);
            assert_eq!(a.frame, b.frame);
        }
    }

    #[test]
    fn linear_trajectory_interior_unchanged() {
        let ps: Vec<_> = (0..25)
            .map(|k| WorldPoint::new(0.1 * k as f64, 2.0 - 0.05 * k as f64, 1.0 + 0.02 * k as f64))
            .collect();
        let t = from_positions(&ps);
        let s = smooth(&t, 1.5, 4);
        for k in 4..21 {
            assert!((s.states[k].position - ps[k]).norm() < 1e-9);
        }
    }

    #[test]
    fn single_state_survives() {
        let t = from_positions(&[WorldPoint::new(1.0, 1.0, 1.0)]);
        assert_eq!(smooth(&t, 1.5, 4), t);
    }
}
