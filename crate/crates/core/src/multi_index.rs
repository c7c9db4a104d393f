//! Multi-indices `α ∈ ℕⁿ` and the small combinatorial helpers built on them.

use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MultiIndex(pub Vec<usize>);

impl MultiIndex {
    pub fn zero(n: usize) -> Self {
        MultiIndex(vec![0; n])
    }

    /// `α = e_axis`.
    pub fn unit(n: usize, axis: usize) -> Self {
        let mut v = vec![0; n];
        v[axis] = 1;
        MultiIndex(v)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn order(&self) -> usize {
        self.0.iter().sum()
    }

    /// `α!`
    pub fn factorial(&self) -> f64 {
        self.0.iter().map(|&a| factorial(a)).product()
    }

    /// Componentwise `self ≤ other`.
    pub fn le(&self, other: &MultiIndex) -> bool {
        self.0.iter().zip(&other.0).all(|(a, b)| a <= b)
    }

    /// `binom(β, α) = ∏ binom(β_i, α_i)`, zero unless `α ≤ β`.
    pub fn binomial(beta: &MultiIndex, alpha: &MultiIndex) -> f64 {
        if !alpha.le(beta) {
            return 0.0;
        }
        beta.0.iter().zip(&alpha.0).map(|(&b, &a)| binomial(b, a)).product()
    }

    pub fn checked_sub(&self, other: &MultiIndex) -> Option<MultiIndex> {
        if !other.le(self) {
            return None;
        }
        Some(MultiIndex(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect()))
    }

    /// `x^α` for a point `x`.
    pub fn monomial(&self, x: &[f64]) -> f64 {
        self.0.iter().zip(x).map(|(&a, &xi)| xi.powi(a as i32)).product()
    }

    /// Compact label used in file names and CSV columns, e.g. `1-0`.
    pub fn label(&self) -> String {
        self.0.iter().map(|a| a.to_string()).collect::<Vec<_>>().join("-")
    }

    pub fn parse_label(s: &str) -> Option<MultiIndex> {
        s.split('-')
            .map(|p| p.parse().ok())
            .collect::<Option<Vec<usize>>>()
            .map(MultiIndex)
    }
}

impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, a) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{a}")?;
        }
        write!(f, ")")
    }
}

/// All `α ∈ ℕⁿ` with `|α| ≤ max_order`, graded by order and then reverse
/// lexicographic inside each order: `(0,0), (1,0), (0,1), (2,0), ...`.
pub fn indices_up_to(n: usize, max_order: usize) -> Vec<MultiIndex> {
    let mut out = Vec::new();
    for order in 0..=max_order {
        out.extend(indices_of_order(n, order));
    }
    out
}

/// All `α ∈ ℕⁿ` with `|α| = order`.
pub fn indices_of_order(n: usize, order: usize) -> Vec<MultiIndex> {
    fn rec(n: usize, remaining: usize, prefix: &mut Vec<usize>, out: &mut Vec<MultiIndex>) {
        if prefix.len() == n - 1 {
            prefix.push(remaining);
            out.push(MultiIndex(prefix.clone()));
            prefix.pop();
            return;
        }
        for a in (0..=remaining).rev() {
            prefix.push(a);
            rec(n, remaining - a, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    if n == 0 {
        return out;
    }
    rec(n, order, &mut Vec::with_capacity(n), &mut out);
    out
}

/// Number of multi-indices with `|α| ≤ m` in dimension `n`, i.e. `binom(n+m, n)`.
pub fn count_up_to(n: usize, m: usize) -> usize {
    binomial(n + m, n).round() as usize
}

pub fn factorial(k: usize) -> f64 {
    (1..=k).map(|i| i as f64).product()
}

pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    let mut acc = 1.0;
    for i in 0..k {
        acc = acc * (n - i) as f64 / (i + 1) as f64;
    }
    acc
}
