//! Spatial train/validation partitioning and class-balanced subsampling.
//!
//! The study region splits into quadrants at the floor midpoints: northwest,
//! northeast, and southeast pixels train; southwest pixels validate. Test
//! data comes from held-out-year cubes, not from this split. Subsampling is
//! single-threaded and fully determined by the seed.

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Validation,
}

/// Quadrant assignment for a rows x cols raster.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitAssignment {
    pub rows: usize,
    pub cols: usize,
    pub mid_row: usize,
    pub mid_col: usize,
}

impl SplitAssignment {
    #[inline]
    pub fn of(&self, row: usize, col: usize) -> Split {
        if row >= self.mid_row && col < self.mid_col {
            Split::Validation
        } else {
            Split::Train
        }
    }

    pub fn count(&self, split: Split) -> usize {
        let sw = (self.rows - self.mid_row) * self.mid_col;
        match split {
            Split::Validation => sw,
            Split::Train => self.rows * self.cols - sw,
        }
    }
}

/// Quadrant split at floor midpoints; NW/NE/SE train, SW validates.
pub fn quadrant_split(rows: usize, cols: usize) -> Result<SplitAssignment> {
    if rows < 2 || cols < 2 {
        return Err(Error::RasterTooSmall {
            rows,
            cols,
            min: 2,
        });
    }
    Ok(SplitAssignment {
        rows,
        cols,
        mid_row: rows / 2,
        mid_col: cols / 2,
    })
}

/// Uniformly subsamples each class down to a common count, without
/// replacement, using a stream derived from `seed`.
///
/// `per_class = 0` means "use the smallest class count". Output order is
/// class-major (all class 0 picks, then 1, then 2) and reproducible.
pub fn balanced_subsample<T: Clone>(
    candidates: &[(T, u8)],
    per_class: usize,
    seed: u64,
) -> Result<Vec<(T, u8)>> {
    let mut by_class: [Vec<usize>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    for (i, (_, label)) in candidates.iter().enumerate() {
        if *label > 2 {
            return Err(Error::InvalidLabelValue(*label));
        }
        by_class[*label as usize].push(i);
    }
    let min_count = by_class.iter().map(Vec::len).min().unwrap_or(0);
    let take = if per_class == 0 { min_count } else { per_class };
    for (class, members) in by_class.iter().enumerate() {
        if members.len() < take {
            return Err(Error::ClassShortfall {
                class: class as u8,
                available: members.len(),
                requested: take,
            });
        }
    }
    let mut rng = rng::stream(seed, "subsample", 0);
    let mut out = Vec::with_capacity(take * 3);
    for members in by_class.iter_mut() {
        // partial Fisher-Yates: the first `take` slots become the sample
        for slot in 0..take {
            let pick = rng.gen_range(slot..members.len());
            members.swap(slot, pick);
            out.push(candidates[members[slot]].clone());
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadrant_split_4x4() {
        let split = quadrant_split(4, 4).unwrap();
        let mut train = 0;
        let mut val = Vec::new();
        for r in 0..4 {
            for c in 0..4 {
                match split.of(r, c) {
                    Split::Train => train += 1,
                    Split::Validation => val.push((r, c)),
                }
            }
        }
        assert_eq!(train, 12);
        assert_eq!(val, vec![(2, 0), (2, 1), (3, 0), (3, 1)]);
        assert_eq!(split.count(Split::Train), 12);
        assert_eq!(split.count(Split::Validation), 4);
    }

    #[test]
    fn quadrant_split_2x2_minimal() {
        let split = quadrant_split(2, 2).unwrap();
        let val: Vec<(usize, usize)> = (0..2)
            .flat_map(|r| (0..2).map(move |c| (r, c)))
            .filter(|&(r, c)| split.of(r, c) == Split::Validation)
            .collect();
        assert_eq!(val, vec![(1, 0)]);
    }

    #[test]
    fn quadrant_split_5x5_floor_midpoint() {
        let split = quadrant_split(5, 5).unwrap();
        assert_eq!((split.mid_row, split.mid_col), (2, 2));
        let val = (0..5)
            .flat_map(|r| (0..5).map(move |c| (r, c)))
            .filter(|&(r, c)| split.of(r, c) == Split::Validation)
            .count();
        assert_eq!(val, 6); // rows 2..=4 x cols 0..=1
        assert_eq!(split.count(Split::Validation), 6);
    }

    #[test]
    fn quadrant_split_is_a_partition() {
        for (rows, cols) in [(2, 2), (3, 7), (8, 8), (9, 4)] {
            let split = quadrant_split(rows, cols).unwrap();
            let total = split.count(Split::Train) + split.count(Split::Validation);
            assert_eq!(total, rows * cols);
        }
    }

    #[test]
    fn quadrant_split_rejects_degenerate() {
        assert!(quadrant_split(1, 5).is_err());
        assert!(quadrant_split(5, 1).is_err());
    }

    fn labelled(counts: [usize; 3]) -> Vec<(u32, u8)> {
        let mut out = Vec::new();
        let mut id = 0u32;
        for (class, &n) in counts.iter().enumerate() {
            for _ in 0..n {
                out.push((id, class as u8));
                id += 1;
            }
        }
        out
    }

    #[test]
    fn minimum_rule_balances_to_smallest_class() {
        let candidates = labelled([10, 7, 7]);
        let out = balanced_subsample(&candidates, 0, 42).unwrap();
        assert_eq!(out.len(), 21);
        for class in 0..3u8 {
            assert_eq!(out.iter().filter(|(_, l)| *l == class).count(), 7);
        }
    }

    #[test]
    fn same_seed_gives_identical_sequences() {
        let candidates = labelled([30, 25, 40]);
        let a = balanced_subsample(&candidates, 20, 7).unwrap();
        let b = balanced_subsample(&candidates, 20, 7).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn different_seed_changes_selection_not_counts() {
        let candidates = labelled([300, 250, 400]);
        let a = balanced_subsample(&candidates, 100, 1).unwrap();
        let b = balanced_subsample(&candidates, 100, 2).unwrap();
        assert_ne!(a, b);
        for class in 0..3u8 {
            assert_eq!(a.iter().filter(|(_, l)| *l == class).count(), 100);
            assert_eq!(b.iter().filter(|(_, l)| *l == class).count(), 100);
        }
    }

    #[test]
    fn shortfall_names_the_class() {
        let candidates = labelled([100, 50, 80]);
        match balanced_subsample(&candidates, 60, 3) {
            Err(Error::ClassShortfall {
                class,
                available,
                requested,
            }) => {
                assert_eq!(class, 1);
                assert_eq!(available, 50);
                assert_eq!(requested, 60);
            }
            other => panic!("expected shortfall, got {other:?}"),
        }
    }

    #[test]
    fn sample_is_without_replacement() {
        let candidates = labelled([50, 50, 50]);
        let out = balanced_subsample(&candidates, 50, 9).unwrap();
        let mut ids: Vec<u32> = out.iter().map(|(id, _)| *id).collect();
        ids.sort_unstable();
        ids.dedup();
        assert_eq!(ids.len(), 150);
    }
}
