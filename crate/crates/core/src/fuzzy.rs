//! T-norms and their dual t-conorms: continuous relaxations of conjunction and
//! disjunction over truth degrees in `[0, 1]`.
//!
//! The operators only need ordered field arithmetic, so they work for floats as
//! well as exact rationals.

use std::fmt::Debug;
use std::str::FromStr;

use num_traits::Num;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FuzzyError {
    #[error("truth degree {0} outside [0, 1]")]
    OutOfDomain(String),
    #[error("cannot fold an empty list of truth degrees")]
    Empty,
    #[error("unknown t-norm `{0}` (expected godel, product or lukasiewicz)")]
    UnknownKind(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TNormKind {
    /// `min(x, y)`, dual `max(x, y)`.
    Godel,
    /// `x * y`, dual `x + y - x * y`.
    Product,
    /// `max(0, x + y - 1)`, dual `min(1, x + y)`.
    Lukasiewicz,
}

impl TNormKind {
    pub const ALL: [TNormKind; 3] = [TNormKind::Godel, TNormKind::Product, TNormKind::Lukasiewicz];

    pub fn name(self) -> &'static str {
        match self {
            TNormKind::Godel => "godel",
            TNormKind::Product => "product",
            TNormKind::Lukasiewicz => "lukasiewicz",
        }
    }

    /// The t-norm without domain checks.
    #[inline]
    pub fn and<T: Num + PartialOrd + Copy>(self, x: T, y: T) -> T {
        match self {
            TNormKind::Godel => {
                if y < x {
                    y
                } else {
                    x
                }
            }
            TNormKind::Product => x * y,
            TNormKind::Lukasiewicz => {
                let v = x + y - T::one();
                if v > T::zero() {
                    v
                } else {
                    T::zero()
                }
            }
        }
    }

    /// The dual t-conorm `1 - and(1 - x, 1 - y)`, without domain checks.
    #[inline]
    pub fn or<T: Num + PartialOrd + Copy>(self, x: T, y: T) -> T {
        T::one() - self.and(T::one() - x, T::one() - y)
    }

    /// Partial derivatives of `and` at `(x, y)`. For Gödel the kink is resolved
    /// towards `x` on ties; for Łukasiewicz the flat region has zero gradient.
    #[inline]
    pub fn and_grad<T: Num + PartialOrd + Copy>(self, x: T, y: T) -> (T, T) {
        match self {
            TNormKind::Godel => {
                if y < x {
                    (T::zero(), T::one())
                } else {
                    (T::one(), T::zero())
                }
            }
            TNormKind::Product => (y, x),
            TNormKind::Lukasiewicz => {
                if x + y - T::one() > T::zero() {
                    (T::one(), T::one())
                } else {
                    (T::zero(), T::zero())
                }
            }
        }
    }

    /// Partial derivatives of `or` at `(x, y)`.
    #[inline]
    pub fn or_grad<T: Num + PartialOrd + Copy>(self, x: T, y: T) -> (T, T) {
        self.and_grad(T::one() - x, T::one() - y)
    }
}

impl FromStr for TNormKind {
    type Err = FuzzyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "godel" | "gödel" | "min" => Ok(TNormKind::Godel),
            "product" | "prod" => Ok(TNormKind::Product),
            "lukasiewicz" | "łukasiewicz" | "luk" => Ok(TNormKind::Lukasiewicz),
            _ => Err(FuzzyError::UnknownKind(s.to_string())),
        }
    }
}

impl std::fmt::Display for TNormKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

fn check<T: Num + PartialOrd + Copy + Debug>(x: T) -> Result<T, FuzzyError> {
    if x >= T::zero() && x <= T::one() {
        Ok(x)
    } else {
        Err(FuzzyError::OutOfDomain(format!("{x:?}")))
    }
}

pub fn tnorm<T: Num + PartialOrd + Copy + Debug>(kind: TNormKind, x: T, y: T) -> Result<T, FuzzyError> {
    Ok(kind.and(check(x)?, check(y)?))
}

pub fn tconorm<T: Num + PartialOrd + Copy + Debug>(kind: TNormKind, x: T, y: T) -> Result<T, FuzzyError> {
    Ok(kind.or(check(x)?, check(y)?))
}

/// Left fold of the t-norm over a nonempty list.
pub fn fold_tnorm<T: Num + PartialOrd + Copy + Debug>(kind: TNormKind, scores: &[T]) -> Result<T, FuzzyError> {
    let (first, rest) = scores.split_first().ok_or(FuzzyError::Empty)?;
    rest.iter()
        .try_fold(check(*first)?, |acc, &x| Ok(kind.and(acc, check(x)?)))
}

/// Left fold of the t-conorm over a nonempty list.
pub fn fold_tconorm<T: Num + PartialOrd + Copy + Debug>(kind: TNormKind, scores: &[T]) -> Result<T, FuzzyError> {
    let (first, rest) = scores.split_first().ok_or(FuzzyError::Empty)?;
    rest.iter()
        .try_fold(check(*first)?, |acc, &x| Ok(kind.or(acc, check(x)?)))
}

/// Left fold together with the gradient of the result w.r.t. every input.
///
/// `disjunction` selects the t-conorm instead of the t-norm. Panics on an empty list.
pub fn fold_with_grad<T: Num + PartialOrd + Copy>(kind: TNormKind, scores: &[T], disjunction: bool) -> (T, Vec<T>) {
    assert!(!scores.is_empty(), "fold over an empty list");
    let op = |a, b| if disjunction { kind.or(a, b) } else { kind.and(a, b) };
    let op_grad = |a, b| {
        if disjunction {
            kind.or_grad(a, b)
        } else {
            kind.and_grad(a, b)
        }
    };
    let mut prefix = Vec::with_capacity(scores.len());
    prefix.push(scores[0]);
    for i in 1..scores.len() {
        let v = op(prefix[i - 1], scores[i]);
        prefix.push(v);
    }
    let mut grad = vec![T::zero(); scores.len()];
    let mut upstream = T::one();
    for i in (1..scores.len()).rev() {
        let (d_acc, d_x) = op_grad(prefix[i - 1], scores[i]);
        grad[i] = upstream * d_x;
        upstream = upstream * d_acc;
    }
    grad[0] = upstream;
    (prefix[scores.len() - 1], grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use num_rational::Ratio;
    use proptest::prelude::*;

    #[test]
    fn tnorm_definitions() {
        assert_eq!(tnorm(TNormKind::Godel, 0.3, 0.7).unwrap(), 0.3);
        assert_eq!(tnorm(TNormKind::Product, 0.5, 0.5).unwrap(), 0.25);
        assert_eq!(tnorm(TNormKind::Lukasiewicz, 0.3, 0.4).unwrap(), 0.0);
    }

    #[test]
    fn tconorm_definitions() {
        assert_abs_diff_eq!(tconorm(TNormKind::Godel, 0.3, 0.7).unwrap(), 0.7, epsilon = 1e-15);
        assert_eq!(tconorm(TNormKind::Product, 0.5, 0.5).unwrap(), 0.75);
        assert_abs_diff_eq!(tconorm(TNormKind::Lukasiewicz, 0.3, 0.4).unwrap(), 0.7, epsilon = 1e-15);
    }

    #[test]
    fn out_of_domain_inputs_are_rejected() {
        assert!(matches!(tnorm(TNormKind::Godel, 1.5, 0.2), Err(FuzzyError::OutOfDomain(_))));
        assert!(matches!(tconorm(TNormKind::Product, 0.2, -0.1), Err(FuzzyError::OutOfDomain(_))));
        assert!(tnorm(TNormKind::Product, f64::NAN, 0.2).is_err());
    }

    #[test]
    fn folds() {
        assert_eq!(fold_tnorm(TNormKind::Product, &[0.5, 0.5, 0.5]).unwrap(), 0.125);
        assert_eq!(fold_tnorm(TNormKind::Godel, &[0.9, 0.2, 0.4]).unwrap(), 0.2);
        assert_eq!(fold_tconorm(TNormKind::Godel, &[0.9, 0.2, 0.4]).unwrap(), 0.9);
        for kind in TNormKind::ALL {
            assert_eq!(fold_tnorm(kind, &[0.37]).unwrap(), 0.37);
            assert_eq!(fold_tconorm(kind, &[0.37]).unwrap(), 0.37);
            assert_eq!(fold_tnorm::<f64>(kind, &[]), Err(FuzzyError::Empty));
        }
    }

    #[test]
    fn exact_laws_over_rationals() {
        let grid: Vec<Ratio<i64>> = (0..=8).map(|i| Ratio::new(i, 8)).collect();
        let one = Ratio::from_integer(1);
        for kind in TNormKind::ALL {
            for &x in &grid {
                for &y in &grid {
                    let t = tnorm(kind, x, y).unwrap();
                    assert_eq!(tconorm(kind, x, y).unwrap(), one - tnorm(kind, one - x, one - y).unwrap());
                    assert_eq!(t, tnorm(kind, y, x).unwrap());
                    for &z in &grid {
                        assert_eq!(kind.and(x, kind.and(y, z)), kind.and(kind.and(x, y), z));
                    }
                }
            }
        }
    }

    #[test]
    fn parse_names() {
        assert_eq!("Godel".parse::<TNormKind>().unwrap(), TNormKind::Godel);
        assert_eq!("prod".parse::<TNormKind>().unwrap(), TNormKind::Product);
        assert!("hamacher".parse::<TNormKind>().is_err());
    }

    fn finite_diff_fold(kind: TNormKind, xs: &[f64], disjunction: bool) -> Vec<f64> {
        let h = 1e-6;
        (0..xs.len())
            .map(|i| {
                let mut up = xs.to_vec();
                let mut down = xs.to_vec();
                up[i] += h;
                down[i] -= h;
                let f = |v: &[f64]| fold_with_grad(kind, v, disjunction).0;
                (f(&up) - f(&down)) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn fold_gradient_matches_finite_differences() {
        let xs = [0.6, 0.35, 0.8, 0.55];
        for disjunction in [false, true] {
            for kind in [TNormKind::Product, TNormKind::Godel] {
                let (v, g) = fold_with_grad(kind, &xs, disjunction);
                let expected = if disjunction {
                    fold_tconorm(kind, &xs).unwrap()
                } else {
                    fold_tnorm(kind, &xs).unwrap()
                };
                assert_eq!(v, expected);
                let fd = finite_diff_fold(kind, &xs, disjunction);
                for (a, b) in g.iter().zip(&fd) {
                    assert_abs_diff_eq!(a, b, epsilon = 1e-6);
                }
            }
        }
    }

    proptest! {
        #[test]
        fn godel_fold_is_min_and_max(xs in prop::collection::vec(0.0f64..=1.0, 1..12)) {
            let min = xs.iter().copied().fold(f64::INFINITY, f64::min);
            let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            prop_assert_eq!(fold_tnorm(TNormKind::Godel, &xs).unwrap(), min);
            // the conorm goes through `1 - x`, which is exact only up to rounding
            prop_assert!((fold_tconorm(TNormKind::Godel, &xs).unwrap() - max).abs() <= 1e-15);
        }
    }
}
