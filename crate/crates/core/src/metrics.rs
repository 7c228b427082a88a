//! Goal-specification and team-performance metrics over one episode.

use serde::{Deserialize, Serialize};

use crate::board::{ActionPair, Trajectory};

/// How the reference radius for the density ratio is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "mode", content = "value")]
pub enum DensityScale {
    /// Largest distance from the mean within the same trajectory.
    #[default]
    TrajectoryMax,
    /// A fixed length, e.g. the board diagonal.
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub mean_pos: [f64; 2],
    /// Goal specificity U.
    pub specificity: f64,
    /// Path length L.
    pub path_length: f64,
    /// Density ratio δ.
    pub density_ratio: f64,
    /// Human effort σ.
    pub human_effort: f64,
    /// Agreement ratio φ.
    pub agreement_ratio: f64,
    pub iteration_index: usize,
}

impl MetricsRecord {
    pub fn of(traj: &Trajectory, iteration_index: usize, scale: DensityScale) -> Self {
        let points = traj.positions();
        let pairs = traj.action_pairs();
        Self {
            mean_pos: mean_position(&points),
            specificity: specificity(&points),
            path_length: path_length(&points),
            density_ratio: density_ratio(&points, scale),
            human_effort: human_effort(&traj.human_actions()),
            agreement_ratio: agreement_ratio(&pairs),
            iteration_index,
        }
    }
}

/// Arithmetic mean of the positions; the origin for an empty slice.
pub fn mean_position(points: &[[f64; 2]]) -> [f64; 2] {
    if points.is_empty() {
        return [0.0; 2];
    }
    // Offsets from the first point keep constant trajectories exact.
    let o = points[0];
    let n = points.len() as f64;
    let (sx, sy) = points
        .iter()
        .fold((0.0, 0.0), |(sx, sy), p| (sx + (p[0] - o[0]), sy + (p[1] - o[1])));
    [o[0] + sx / n, o[1] + sy / n]
}

fn distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Cumulative distance of the trajectory from its own mean.
pub fn specificity(points: &[[f64; 2]]) -> f64 {
    let mu = mean_position(points);
    points.iter().map(|p| distance(*p, mu)).sum()
}

/// Sum of consecutive segment lengths.
pub fn path_length(points: &[[f64; 2]]) -> f64 {
    if points.len() < 2 {
        log::warn!("path length of a {}-point trajectory is 0", points.len());
        return 0.0;
    }
    points.windows(2).map(|w| distance(w[0], w[1])).sum()
}

/// Fraction of points strictly within 5% of the reference radius of the mean.
/// A trajectory that never leaves its mean has ratio 1.
pub fn density_ratio(points: &[[f64; 2]], scale: DensityScale) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    let mu = mean_position(points);
    let dists: Vec<f64> = points.iter().map(|p| distance(*p, mu)).collect();
    let rho_max = match scale {
        DensityScale::TrajectoryMax => dists.iter().copied().fold(0.0, f64::max),
        DensityScale::Fixed(v) => v,
    };
    if rho_max == 0.0 {
        return 1.0;
    }
    let inside = dists.iter().filter(|d| **d < 0.05 * rho_max).count();
    inside as f64 / points.len() as f64
}

/// Sum of absolute human commands over both axes.
pub fn human_effort(actions: &[[f64; 2]]) -> f64 {
    actions.iter().map(|a| a[0].abs() + a[1].abs()).sum()
}

/// Fraction of per-axis command pairs whose product is strictly positive.
pub fn agreement_ratio(pairs: &[ActionPair]) -> f64 {
    if pairs.is_empty() {
        return 0.0;
    }
    let agree: usize = pairs
        .iter()
        .map(|p| (0..2).filter(|&k| p.human[k] * p.robot[k] > 0.0).count())
        .sum();
    agree as f64 / (2 * pairs.len()) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn mean_position_cases() {
        assert_eq!(mean_position(&[[0.0, 0.0], [2.0, 0.0]]), [1.0, 0.0]);
        assert_eq!(mean_position(&[[0.3, -0.1]; 7]), [0.3, -0.1]);
        let sym = [[0.1, 0.2], [-0.1, -0.2], [0.05, -0.3], [-0.05, 0.3]];
        let m = mean_position(&sym);
        assert!(m[0].abs() < 1e-12 && m[1].abs() < 1e-12);
    }

    #[test]
    fn specificity_cases() {
        assert_eq!(specificity(&[[0.2, 0.2]; 10]), 0.0);
        assert!((specificity(&[[0.0, 0.0], [0.0, 0.6]]) - 0.6).abs() < 1e-15);
        // Term-by-term oracle on a five-point fixture.
        let pts: [[f64; 2]; 5] = [[0.0, 0.0], [0.1, 0.0], [0.1, 0.2], [-0.05, 0.1], [0.3, -0.1]];
        let (mx, my): (f64, f64) = (0.45 / 5.0, 0.2 / 5.0);
        let oracle: f64 = pts.iter().map(|p| ((p[0] - mx) * (p[0] - mx) + (p[1] - my) * (p[1] - my)).sqrt()).sum();
        assert!((specificity(&pts) - oracle).abs() < 1e-10);
    }

    #[test]
    fn path_length_cases() {
        assert_eq!(path_length(&[[0.0, 0.0], [3.0, 4.0]]), 5.0);
        let a = 0.2;
        assert!((path_length(&[[0.0, 0.0], [a, 0.0], [a, a], [0.0, a], [0.0, 0.0]]) - 4.0 * a).abs() < 1e-15);
        assert_eq!(path_length(&[[1.0, 1.0]]), 0.0);
    }

    #[test]
    fn density_ratio_cases() {
        assert_eq!(density_ratio(&[[0.1, 0.1]; 5], DensityScale::TrajectoryMax), 1.0);
        // 99 points at the mean, one far outlier: the mean shifts by 1/100 of
        // the outlier offset, well inside 5% of ρ_max.
        let mut pts = vec![[0.0, 0.0]; 99];
        pts.push([1.0, 0.0]);
        let counted = {
            let mu = mean_position(&pts);
            let d: Vec<f64> = pts.iter().map(|p| distance(*p, mu)).collect();
            let m = d.iter().copied().fold(0.0, f64::max);
            d.iter().filter(|x| **x < 0.05 * m).count() as f64 / 100.0
        };
        assert_eq!(counted, 0.99);
        assert!((density_ratio(&pts, DensityScale::TrajectoryMax) - 0.99).abs() < 1e-10);
        let ring: Vec<[f64; 2]> = (0..16)
            .map(|k| {
                let a = k as f64 * std::f64::consts::TAU / 16.0;
                [0.1 * a.cos(), 0.1 * a.sin()]
            })
            .collect();
        assert_eq!(density_ratio(&ring, DensityScale::TrajectoryMax), 0.0);
        // A fixed board-scale radius counts more points as dense.
        assert_eq!(density_ratio(&ring, DensityScale::Fixed(10.0)), 1.0);
    }

    #[test]
    fn effort_cases() {
        assert_eq!(human_effort(&[[0.5, 0.0], [-0.5, 0.0]]), 1.0);
        assert_eq!(human_effort(&[[0.0, 0.0]; 4]), 0.0);
        let a = [[0.3, -0.2], [0.1, 0.9]];
        let scaled: Vec<[f64; 2]> = a.iter().map(|v| [2.5 * v[0], 2.5 * v[1]]).collect();
        assert!((human_effort(&scaled) - 2.5 * human_effort(&a)).abs() < 1e-12);
    }

    #[test]
    fn agreement_cases() {
        let same = vec![ActionPair::new([0.4, -0.2], [0.4, -0.2]); 5];
        assert_eq!(agreement_ratio(&same), 1.0);
        let opposite = vec![ActionPair::new([0.4, -0.2], [-0.4, 0.2]); 5];
        assert_eq!(agreement_ratio(&opposite), 0.0);
        // Ten pairs, twenty axis products, twelve of them positive.
        let mut mixed = Vec::new();
        for k in 0..10 {
            let robot = match k {
                0..=5 => [0.5, -0.5],
                6..=7 => [0.0, 0.3],
                _ => [0.2, 0.2],
            };
            mixed.push(ActionPair::new([0.5, 0.5], robot));
        }
        let direct = mixed
            .iter()
            .flat_map(|p| [p.human[0] * p.robot[0], p.human[1] * p.robot[1]])
            .filter(|x| *x > 0.0)
            .count();
        assert_eq!(direct, 12);
        assert!((agreement_ratio(&mixed) - 0.6).abs() < 1e-10);
        // Zero actions never count as agreement.
        assert_eq!(agreement_ratio(&[ActionPair::default()]), 0.0);
    }

    proptest! {
        #[test]
        fn ranges_and_constancy(pts in proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 1..60)) {
            let pts: Vec<[f64; 2]> = pts.into_iter().map(|(x, y)| [x, y]).collect();
            let u = specificity(&pts);
            let l = path_length(&pts);
            let constant = pts.iter().all(|p| *p == pts[0]);
            prop_assert!(u >= 0.0 && l >= 0.0);
            prop_assert_eq!(l == 0.0, constant);
            if !constant { prop_assert!(u > 0.0); }
            let d = density_ratio(&pts, DensityScale::TrajectoryMax);
            prop_assert!((0.0..=1.0).contains(&d));
            if !constant { prop_assert!(d < 1.0); }

            // One-pass Welford-style mean and two-pass reference agree.
            let two_pass = specificity(&pts);
            let mut m = [0.0, 0.0];
            for (k, p) in pts.iter().enumerate() {
                m[0] += (p[0] - m[0]) / (k + 1) as f64;
                m[1] += (p[1] - m[1]) / (k + 1) as f64;
            }
            let one_pass: f64 = pts.iter().map(|p| distance(*p, m)).sum();
            prop_assert!((one_pass - two_pass).abs() < 1e-10);
        }

        #[test]
        fn isometry_invariance(pts in proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 2..40), angle in 0.0f64..6.3) {
            let pts: Vec<[f64; 2]> = pts.into_iter().map(|(x, y)| [x, y]).collect();
            let (s, c) = angle.sin_cos();
            let rotated: Vec<[f64; 2]> = pts.iter().map(|p| [c * p[0] - s * p[1], s * p[0] + c * p[1]]).collect();
            prop_assert!((path_length(&pts) - path_length(&rotated)).abs() < 1e-10);
            prop_assert!((specificity(&pts) - specificity(&rotated)).abs() < 1e-10);
        }

        #[test]
        fn agreement_in_range(pairs in proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0), 1..50)) {
            let pairs: Vec<ActionPair> = pairs.into_iter().map(|(a, b, c, d)| ActionPair::new([a, b], [c, d])).collect();
            let phi = agreement_ratio(&pairs);
            prop_assert!((0.0..=1.0).contains(&phi));
        }
    }
}
