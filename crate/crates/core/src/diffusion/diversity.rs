//! Group diversity: one minus the mean pairwise intersection-over-union of
//! rasterized swept ego footprints.

use crate::geom::{OrientedBox, Trajectory};
use std::collections::HashSet;

/// Grid cells (0.25 m) whose centers the swept footprint covers.
fn footprint_cells(
    traj: &Trajectory,
    ego_length: f64,
    ego_width: f64,
    cell: f64,
) -> HashSet<(i64, i64)> {
    let mut cells = HashSet::new();
    let headings = traj.headings(0.0);
    let reach = 0.5 * ego_length.hypot(ego_width);
    for (p, heading) in traj.points().iter().zip(headings) {
        let b = OrientedBox::new(p.x, p.y, heading, ego_length, ego_width);
        let i_lo = ((p.x - reach) / cell).floor() as i64;
        let i_hi = ((p.x + reach) / cell).ceil() as i64;
        let j_lo = ((p.y - reach) / cell).floor() as i64;
        let j_hi = ((p.y + reach) / cell).ceil() as i64;
        for i in i_lo..=i_hi {
            for j in j_lo..=j_hi {
                let centre = [(i as f64 + 0.5) * cell, (j as f64 + 0.5) * cell];
                if b.contains_point(centre) {
                    cells.insert((i, j));
                }
            }
        }
    }
    cells
}

fn iou(a: &HashSet<(i64, i64)>, b: &HashSet<(i64, i64)>) -> f64 {
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    if union == 0 {
        1.0 // two empty footprints are identical
    } else {
        inter as f64 / union as f64
    }
}

/// Diversity of a trajectory group on a 0.25 m occupancy grid: 0 for
/// identical members, 1 for pairwise-disjoint footprints.
pub fn diversity_score(group: &[Trajectory], ego_length: f64, ego_width: f64) -> f64 {
    assert!(group.len() >= 2, "diversity needs at least two members");
    let cell = 0.25;
    let masks: Vec<_> =
        group.iter().map(|t| footprint_cells(t, ego_length, ego_width, cell)).collect();
    let mut sum = 0.0;
    let mut pairs = 0usize;
    for i in 0..masks.len() {
        for j in i + 1..masks.len() {
            sum += iou(&masks[i], &masks[j]);
            pairs += 1;
        }
    }
    1.0 - sum / pairs as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{Waypoint, SIM_DT};
    use approx::assert_abs_diff_eq;

    fn corridor(y: f64, n: usize) -> Trajectory {
        let speed = 10.0;
        Trajectory::new(
            (0..n)
                .map(|i| Waypoint::new(speed * SIM_DT * (i + 1) as f64, y, speed, 0.0))
                .collect(),
        )
    }

    #[test]
    fn identical_trajectories_have_zero_diversity() {
        let t = corridor(0.0, 30);
        assert_eq!(diversity_score(&[t.clone(), t.clone(), t], 4.6, 1.9), 0.0);
    }

    #[test]
    fn disjoint_footprints_have_full_diversity() {
        let a = corridor(0.0, 30);
        let b = corridor(100.0, 30);
        assert_eq!(diversity_score(&[a, b], 4.6, 1.9), 1.0);
    }

    #[test]
    fn half_overlapping_corridors_match_cell_count_oracle() {
        let ego_l = 4.6;
        let ego_w = 2.0;
        let a = corridor(0.0, 30);
        let b = corridor(1.0, 30); // half the width apart
        let d = diversity_score(&[a.clone(), b.clone()], ego_l, ego_w);

        // brute-force oracle: enumerate the same masks and count
        let ma = footprint_cells(&a, ego_l, ego_w, 0.25);
        let mb = footprint_cells(&b, ego_l, ego_w, 0.25);
        let inter = ma.intersection(&mb).count() as f64;
        let union = (ma.len() + mb.len()) as f64 - inter;
        let expect = 1.0 - inter / union;
        assert_abs_diff_eq!(d, expect, epsilon = 1e-9);
        assert!(d > 0.0 && d < 1.0);
    }

    #[test]
    fn permutation_invariant_and_in_range() {
        let group = vec![corridor(0.0, 20), corridor(0.7, 20), corridor(-1.3, 20)];
        let d1 = diversity_score(&group, 4.6, 1.9);
        let perm = vec![group[2].clone(), group[0].clone(), group[1].clone()];
        let d2 = diversity_score(&perm, 4.6, 1.9);
        assert_eq!(d1, d2);
        assert!((0.0..=1.0).contains(&d1));
    }
}
