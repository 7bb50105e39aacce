use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Horizontal,
    Vertical,
}

/// Counts of length-`order` runs of quantized values, indexed by the
/// base-`levels` code of the run (first sample most significant).
#[derive(Clone, Debug, PartialEq)]
pub struct CooccurrenceHistogram {
    pub order: usize,
    pub levels: usize,
    pub direction: Direction,
    pub bins: Vec<u64>,
}

impl CooccurrenceHistogram {
    pub fn total(&self) -> u64 {
        self.bins.iter().sum()
    }
}

pub fn run_code(run: impl IntoIterator<Item = i8>, truncation: i32, levels: usize) -> usize {
    run.into_iter()
        .fold(0, |acc, v| acc * levels + (i32::from(v) + truncation) as usize)
}

/// Runs counted inside one `window x window` square: `window*(window-order+1)`
/// per direction.
pub fn runs_per_direction(window: usize, order: usize) -> usize {
    window * (window + 1 - order)
}

/// Horizontal and vertical run histograms inside the square window at
/// `origin`.
pub fn compute_cooccurrence(
    quantized: &Array2<i8>,
    truncation: i32,
    origin: (usize, usize),
    window: usize,
    order: usize,
) -> Result<(CooccurrenceHistogram, CooccurrenceHistogram)> {
    if order < 2 {
        return Err(Error::Config(format!("co-occurrence order must be >= 2, got {order}")));
    }
    if order > window {
        return Err(Error::Config(format!("order {order} exceeds window {window}")));
    }
    let (h, w) = quantized.dim();
    let (r0, c0) = origin;
    if r0 + window > h || c0 + window > w {
        return Err(Error::Data(format!(
            "window {window} at {origin:?} falls outside the {h}x{w} plane"
        )));
    }
    let levels = (2 * truncation + 1) as usize;
    let nbins = levels.pow(order as u32);
    let mut hz = vec![0u64; nbins];
    let mut vt = vec![0u64; nbins];
    for r in r0..r0 + window {
        for c in c0..=c0 + window - order {
            hz[run_code((0..order).map(|k| quantized[(r, c + k)]), truncation, levels)] += 1;
        }
    }
    for r in r0..=r0 + window - order {
        for c in c0..c0 + window {
            vt[run_code((0..order).map(|k| quantized[(r + k, c)]), truncation, levels)] += 1;
        }
    }
    let mk = |direction, bins| CooccurrenceHistogram {
        order,
        levels,
        direction,
        bins,
    };
    Ok((mk(Direction::Horizontal, hz), mk(Direction::Vertical, vt)))
}

/// Maps every run code to its class under negation and reversal.
#[derive(Clone, Debug, PartialEq)]
pub struct SymmetryFold {
    pub levels: usize,
    pub order: usize,
    pub class_of: Vec<u16>,
    pub classes: usize,
}

impl SymmetryFold {
    pub fn new(levels: usize, order: usize) -> Self {
        let n = levels.pow(order as u32);
        let digits = |mut code: usize| {
            let mut d = vec![0usize; order];
            for slot in d.iter_mut().rev() {
                *slot = code % levels;
                code /= levels;
            }
            d
        };
        let encode = |d: &[usize]| d.iter().fold(0, |acc, &v| acc * levels + v);
        let canonical: Vec<usize> = (0..n)
            .map(|code| {
                let d = digits(code);
                let neg: Vec<usize> = d.iter().map(|&v| levels - 1 - v).collect();
                let rev: Vec<usize> = d.iter().rev().copied().collect();
                let negrev: Vec<usize> = neg.iter().rev().copied().collect();
                [code, encode(&neg), encode(&rev), encode(&negrev)]
                    .into_iter()
                    .min()
                    .expect("four candidates")
            })
            .collect();
        let mut reps: Vec<usize> = canonical.clone();
        reps.sort_unstable();
        reps.dedup();
        let class_of = canonical
            .iter()
            .map(|c| reps.binary_search(c).expect("representative present") as u16)
            .collect();
        Self {
            levels,
            order,
            class_of,
            classes: reps.len(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use rand::Rng;

    #[test]
    fn constant_window_fills_the_zero_bin() {
        let q = Array2::<i8>::zeros((20, 20));
        let (hz, vt) = compute_cooccurrence(&q, 3, (2, 3), 10, 4).unwrap();
        let zero = run_code([0, 0, 0, 0], 3, 7);
        assert_eq!(hz.bins[zero] + vt.bins[zero], 2 * 10 * 7);
        assert_eq!(hz.total() + vt.total(), 2 * 10 * 7);
    }

    #[test]
    fn window_equal_to_order_counts_one_run_per_line() {
        let q = Array2::from_shape_fn((6, 6), |(y, x)| ((y + x) % 3) as i8 - 1);
        let (hz, vt) = compute_cooccurrence(&q, 1, (1, 1), 4, 4).unwrap();
        assert_eq!(hz.total(), 4);
        assert_eq!(vt.total(), 4);
    }

    #[test]
    fn conservation_on_random_content() {
        let mut rng = seed::rng(4);
        let q = Array2::from_shape_fn((30, 30), |_| rng.random_range(-2i8..=2));
        for (window, order) in [(5, 2), (12, 3), (30, 4)] {
            let (hz, vt) = compute_cooccurrence(&q, 2, (0, 0), window, order).unwrap();
            assert_eq!(hz.total() as usize, runs_per_direction(window, order));
            assert_eq!(vt.total() as usize, runs_per_direction(window, order));
        }
    }

    #[test]
    fn out_of_bounds_and_bad_order() {
        let q = Array2::<i8>::zeros((8, 8));
        assert!(compute_cooccurrence(&q, 1, (2, 0), 7, 2).is_err());
        assert!(compute_cooccurrence(&q, 1, (0, 0), 4, 1).is_err());
    }

    #[test]
    fn fold_class_count_matches_orbit_enumeration() {
        // brute force: orbits of the 4-element group {id, neg, rev, neg.rev}
        for (levels, order) in [(3usize, 4usize), (3, 3), (5, 3), (3, 2)] {
            let n = levels.pow(order as u32);
            let mut seen = vec![false; n];
            let mut orbits = 0;
            for start in 0..n {
                if seen[start] {
                    continue;
                }
                orbits += 1;
                let mut digits: Vec<usize> = (0..order)
                    .map(|i| (start / levels.pow((order - 1 - i) as u32)) % levels)
                    .collect();
                for op in 0..4 {
                    let mut d = digits.clone();
                    if op & 1 == 1 {
                        d.iter_mut().for_each(|v| *v = levels - 1 - *v);
                    }
                    if op & 2 == 2 {
                        d.reverse();
                    }
                    seen[d.iter().fold(0, |a, &v| a * levels + v)] = true;
                }
                digits.clear();
            }
            let fold = SymmetryFold::new(levels, order);
            assert_eq!(fold.classes, orbits, "levels {levels} order {order}");
        }
        let f = SymmetryFold::new(3, 4);
        assert_eq!(f.classes, 25);
        assert!(f.classes < 81);
    }

    #[test]
    fn fold_merges_negation_and_reversal() {
        let f = SymmetryFold::new(3, 4);
        let code = |r: [i8; 4]| run_code(r, 1, 3);
        let base = f.class_of[code([1, 0, -1, -1])];
        assert_eq!(f.class_of[code([-1, 0, 1, 1])], base);
        assert_eq!(f.class_of[code([-1, -1, 0, 1])], base);
        assert_eq!(f.class_of[code([1, 1, 0, -1])], base);
        assert_ne!(f.class_of[code([1, 1, 1, 1])], base);
    }
}
