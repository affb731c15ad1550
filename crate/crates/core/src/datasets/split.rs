use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{RngStream, Scalar, StreamName};

use super::Dataset;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitPolicy {
    /// The last `n` samples in file order form the validation set.
    FixedCount(usize),
    /// A seeded random fraction forms the validation set.
    Fraction(f64),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitSpec {
    pub policy: SplitPolicy,
    pub seed: u64,
}

impl SplitSpec {
    /// `(train_indices, val_indices)`, each ascending.
    pub fn indices(&self, n: usize) -> Result<(Vec<usize>, Vec<usize>)> {
        match self.policy {
            SplitPolicy::FixedCount(v) => {
                check_size(v, n)?;
                Ok(((0..n - v).collect(), (n - v..n).collect()))
            }
            SplitPolicy::Fraction(f) => {
                if !(0.0..1.0).contains(&f) {
                    return Err(Error::InvalidArgument(format!("validation fraction {f} not in [0, 1)")));
                }
                let v = (f * n as f64).round() as usize;
                check_size(v, n)?;
                let mut perm = RngStream::new(StreamName::Split, self.seed).permutation(n);
                let (val, train) = perm.split_at_mut(v);
                val.sort_unstable();
                train.sort_unstable();
                Ok((train.to_vec(), val.to_vec()))
            }
        }
    }
}

fn check_size(v: usize, n: usize) -> Result<()> {
    if v == 0 {
        return Err(Error::InvalidArgument(
            "validation split is empty; early stopping needs a validation set".into(),
        ));
    }
    if v >= n {
        return Err(Error::InvalidArgument(format!("validation size {v} must be smaller than {n}")));
    }
    Ok(())
}

pub fn split_train_val<S: Scalar>(ds: &Dataset<S>, spec: &SplitSpec) -> Result<(Dataset<S>, Dataset<S>)> {
    let (t, v) = spec.indices(ds.len())?;
    Ok((ds.subset(&t), ds.subset(&v)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn fixed_count_takes_the_tail() {
        let s = SplitSpec {
            policy: SplitPolicy::FixedCount(10_000),
            seed: 0,
        };
        let (t, v) = s.indices(60_000).unwrap();
        assert_eq!((t.len(), v.len()), (50_000, 10_000));
        assert_eq!(t[49_999], 49_999);
        assert_eq!(v[0], 50_000);
    }

    #[test]
    fn fraction_is_seeded() {
        let s = SplitSpec {
            policy: SplitPolicy::Fraction(0.1),
            seed: 9,
        };
        let (t, v) = s.indices(50_000).unwrap();
        assert_eq!((t.len(), v.len()), (45_000, 5_000));
        assert_eq!(s.indices(50_000).unwrap().1, v);
        let other = SplitSpec { seed: 10, ..s };
        assert_ne!(other.indices(50_000).unwrap().1, v);
    }

    #[test]
    fn empty_or_full_validation_errors() {
        let z = SplitSpec {
            policy: SplitPolicy::Fraction(0.0),
            seed: 0,
        };
        assert!(z.indices(100).is_err());
        let f = SplitSpec {
            policy: SplitPolicy::FixedCount(100),
            seed: 0,
        };
        assert!(f.indices(100).is_err());
    }

    proptest! {
        #[test]
        fn split_is_a_partition(n in 2usize..400, frac in 0.01f64..0.9, seed in any::<u64>()) {
            let s = SplitSpec { policy: SplitPolicy::Fraction(frac), seed };
            if let Ok((t, v)) = s.indices(n) {
                let mut all: Vec<usize> = t.iter().chain(&v).copied().collect();
                all.sort_unstable();
                prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
            }
        }
    }
}
