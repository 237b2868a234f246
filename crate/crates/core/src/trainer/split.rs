use thiserror::Error;

use crate::diffmath::Rng;

#[derive(Debug, Error, PartialEq)]
pub enum SplitError {
    #[error("dataset too small to split: {0} records (need at least 10)")]
    TooSmall(usize),
}

/// Seeded 8:1:1 split: disjoint, exhaustive, reproducible.
#[derive(Clone, Debug)]
pub struct SplitSpec {
    pub seed: u64,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

pub fn split(n: usize, seed: u64) -> Result<SplitSpec, SplitError> {
    if n < 10 {
        return Err(SplitError::TooSmall(n));
    }
    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = Rng::new(seed);
    rng.shuffle(&mut indices);
    let n_train = n * 8 / 10;
    let n_val = n / 10;
    let train = indices[..n_train].to_vec();
    let val = indices[n_train..n_train + n_val].to_vec();
    let test = indices[n_train + n_val..].to_vec();
    Ok(SplitSpec {
        seed,
        train,
        val,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ten_records_split_8_1_1() {
        let s = split(10, 1).unwrap();
        assert_eq!(s.train.len(), 8);
        assert_eq!(s.val.len(), 1);
        assert_eq!(s.test.len(), 1);
    }

    #[test]
    fn same_seed_same_split() {
        let a = split(137, 9).unwrap();
        let b = split(137, 9).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.val, b.val);
        assert_eq!(a.test, b.test);
    }

    #[test]
    fn disjoint_and_exhaustive() {
        let s = split(101, 3).unwrap();
        let mut all: Vec<usize> = s
            .train
            .iter()
            .chain(&s.val)
            .chain(&s.test)
            .copied()
            .collect();
        all.sort_unstable();
        assert_eq!(all, (0..101).collect::<Vec<_>>());
    }

    #[test]
    fn too_small_rejected() {
        assert!(matches!(split(9, 0), Err(SplitError::TooSmall(9))));
    }
}
