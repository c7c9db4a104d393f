//! Truncated Taylor series ("jets"): `f(x₀ + ε) = Σ_k c_k ε^k`, used to get
//! exact derivatives of the bump profiles without finite differences.

pub(crate) type Jet = Vec<f64>;

pub(crate) fn mul(a: &[f64], b: &[f64]) -> Jet {
    let len = a.len().min(b.len());
    let mut out = vec![0.0; len];
    for (k, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for j in 0..=k {
            acc += a[j] * b[k - j];
        }
        *o = acc;
    }
    out
}

/// `1 / a`, requires `a[0] != 0`.
pub(crate) fn recip(a: &[f64]) -> Jet {
    let mut out = vec![0.0; a.len()];
    out[0] = 1.0 / a[0];
    for k in 1..a.len() {
        let mut acc = 0.0;
        for j in 1..=k {
            acc += a[j] * out[k - j];
        }
        out[k] = -acc / a[0];
    }
    out
}

pub(crate) fn exp(a: &[f64]) -> Jet {
    let mut out = vec![0.0; a.len()];
    out[0] = a[0].exp();
    for k in 1..a.len() {
        let mut acc = 0.0;
        for j in 1..=k {
            acc += j as f64 * a[j] * out[k - j];
        }
        out[k] = acc / k as f64;
    }
    out
}

/// Jet of the polynomial `Σ c_j s^j` at `s₀` (a Taylor shift).
pub(crate) fn polynomial(coeffs: &[f64], s0: f64, len: usize) -> Jet {
    // Repeated synthetic division yields the shifted coefficients.
    let mut work = coeffs.to_vec();
    let mut out = vec![0.0; len];
    let deg = work.len();
    for k in 0..deg.min(len) {
        let mut acc = 0.0;
        for j in (k..deg).rev() {
            acc = acc * s0 + work[j];
            work[j] = acc;
        }
        out[k] = work[k];
    }
    out
}

/// Rescale a jet taken in `τ` to the variable `s` with `dτ/ds = factor`.
pub(crate) fn rescale(a: &mut [f64], factor: f64) {
    let mut p = 1.0;
    for c in a.iter_mut() {
        *c *= p;
        p *= factor;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exp_of_linear_matches_series() {
        // exp(x0 + e) = e^{x0} Σ e^k / k!
        let j = exp(&[0.5, 1.0, 0.0, 0.0, 0.0]);
        let mut f = 1.0;
        for (k, c) in j.iter().enumerate() {
            if k > 0 {
                f *= k as f64;
            }
            assert!((c - 0.5f64.exp() / f).abs() < 1e-15);
        }
    }

    #[test]
    fn polynomial_shift() {
        // p(s) = 1 + 2s + 3s^2 at s0 = 2: p = 17, p' = 14, p''/2 = 3
        let j = polynomial(&[1.0, 2.0, 3.0], 2.0, 4);
        assert_eq!(j, vec![17.0, 14.0, 3.0, 0.0]);
    }

    #[test]
    fn reciprocal_of_geometric() {
        // 1/(1 - e) = Σ e^k
        let r = recip(&[1.0, -1.0, 0.0, 0.0]);
        assert_eq!(r, vec![1.0, 1.0, 1.0, 1.0]);
        let p = mul(&r, &[1.0, -1.0, 0.0, 0.0]);
        assert_eq!(p, vec![1.0, 0.0, 0.0, 0.0]);
    }
}
