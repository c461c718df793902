//! Property tests over matrix regions, planning and statistics.

use proptest::prelude::*;

use stitchlab::experiments::{
    in_lower_region, matrix_to_csv, parse_matrix_csv, triangle_stat, Summary,
};
use stitchlab::stitching::{plan_stitch, StitchKind};
use stitchlab::zoo::{enumerate_archs, TensorShape};

proptest! {
    #[test]
    fn lower_region_is_a_monotone_staircase(rows in 1usize..10, cols in 1usize..10) {
        let (ii, jj) = (rows - 1, cols - 1);
        for i in 0..rows {
            prop_assert!(in_lower_region(i, 0, ii, jj));
            for j in 0..cols {
                if in_lower_region(i, j, ii, jj) {
                    // Moving down or left stays in the lower region.
                    prop_assert!(i + 1 == rows || in_lower_region(i + 1, j, ii, jj));
                    prop_assert!(j == 0 || in_lower_region(i, j - 1, ii, jj));
                }
            }
        }
        prop_assert!(in_lower_region(ii, jj, ii, jj));
        if ii > 0 && jj > 0 {
            prop_assert!(!in_lower_region(0, jj, ii, jj));
        }
    }

    #[test]
    fn constant_matrices_have_zero_gap(rows in 2usize..10, cols in 2usize..10, v in 0.0f64..=1.0) {
        let grid = vec![vec![Some(v); cols]; rows];
        let t = triangle_stat(&grid).unwrap();
        prop_assert_eq!(t.gap, 0.0);
        prop_assert_eq!(t.lower_cells + t.upper_cells, rows * cols);
    }

    #[test]
    fn matrix_csv_round_trips(rows in 1usize..6, cols in 1usize..6, seed in any::<u64>()) {
        let grid: Vec<Vec<Option<f64>>> = (0..rows)
            .map(|i| (0..cols).map(|j| {
                let h = seed.wrapping_mul(31).wrapping_add((i * 7 + j) as u64) % 10_001;
                if h % 13 == 0 { None } else { Some(h as f64 / 10_000.0) }
            }).collect())
            .collect();
        let text = matrix_to_csv(&grid).unwrap();
        prop_assert_eq!(parse_matrix_csv(&text, "m").unwrap(), grid);
    }

    #[test]
    fn summary_is_ordered(values in proptest::collection::vec(0.0f64..10.0, 1..40)) {
        let s = Summary::of(values.iter().copied());
        prop_assert!(s.min <= s.mean && s.mean <= s.max);
        prop_assert!(s.std >= 0.0);
    }
}

#[test]
fn every_cut_of_every_pair_has_a_plan() {
    let archs = enumerate_archs();
    assert_eq!(archs.len(), 16);
    let shapes: Vec<TensorShape> = archs
        .iter()
        .flat_map(|a| (0..a.num_stitch_points()).map(|i| a.point_shape(i).unwrap()))
        .collect();
    for &from in &shapes {
        for &to in &shapes {
            let p = plan_stitch(from, to).unwrap();
            let expected = match from.dims()[1].cmp(&to.dims()[1]) {
                std::cmp::Ordering::Equal => StitchKind::Project1x1,
                std::cmp::Ordering::Greater => StitchKind::DownsampleConv,
                std::cmp::Ordering::Less => StitchKind::UpsampleProject,
            };
            assert_eq!(p.kind, expected);
        }
    }
}

#[test]
fn paper_grid_dimensions() {
    let a: stitchlab::zoo::ArchSpec = "R1112".parse().unwrap();
    let b: stitchlab::zoo::ArchSpec = "R2221".parse().unwrap();
    assert_eq!((a.num_stitch_points(), b.num_stitch_points()), (6, 8));
}
