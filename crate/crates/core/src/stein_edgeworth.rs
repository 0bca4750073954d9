//! Probabilists' Hermite basis, the Stein solution operator for polynomial
//! test functions and the cumulant-based Edgeworth main terms.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::Zero;

use crate::error::{Error, Result};
use crate::scalar::{factorial, Scalar};

/// Largest polynomial degree handled in this module.
pub const MAX_DEGREE: usize = 16;

fn rat(v: i128) -> BigRational {
    BigRational::from_integer(BigInt::from(v))
}

fn trim(mut c: Vec<BigRational>) -> Vec<BigRational> {
    while c.last().map_or(false, |v| v.is_zero()) {
        c.pop();
    }
    c
}

/// Polynomial in the monomial basis, `c[n]` multiplying `x^n`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MonomialPoly {
    pub coeffs: Vec<BigRational>,
}

impl MonomialPoly {
    pub fn new(coeffs: Vec<BigRational>) -> Self {
        Self { coeffs: trim(coeffs) }
    }

    pub fn from_ints(c: &[i64]) -> Self {
        Self::new(c.iter().map(|&v| rat(v as i128)).collect())
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn degree(&self) -> Option<usize> {
        self.coeffs.len().checked_sub(1)
    }

    pub fn derivative(&self) -> Self {
        Self::new(
            self.coeffs
                .iter()
                .enumerate()
                .skip(1)
                .map(|(n, c)| c * rat(n as i128))
                .collect(),
        )
    }

    pub fn shift_up(&self) -> Self {
        if self.is_zero() {
            return self.clone();
        }
        let mut c = vec![BigRational::zero()];
        c.extend(self.coeffs.iter().cloned());
        Self::new(c)
    }

    pub fn sub(&self, other: &Self) -> Self {
        let n = self.coeffs.len().max(other.coeffs.len());
        let z = BigRational::zero();
        Self::new(
            (0..n)
                .map(|i| self.coeffs.get(i).unwrap_or(&z) - other.coeffs.get(i).unwrap_or(&z))
                .collect(),
        )
    }

    pub fn eval_f64(&self, x: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, c| acc * x + f64::from_rational(c))
    }
}

/// Polynomial in the probabilists' Hermite basis, `e[n]` multiplying `He_n`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct HermitePoly {
    pub coeffs: Vec<BigRational>,
}

/// Monomial coefficients of `He_0..=He_n` via `He_{n+1} = x He_n - n He_{n-1}`.
fn hermite_table(n: usize) -> Vec<Vec<BigRational>> {
    let mut t: Vec<Vec<BigRational>> = vec![vec![rat(1)]];
    if n >= 1 {
        t.push(vec![rat(0), rat(1)]);
    }
    for m in 1..n {
        let mut next = vec![BigRational::zero(); m + 2];
        for (i, c) in t[m].iter().enumerate() {
            next[i + 1] += c;
        }
        for (i, c) in t[m - 1].iter().enumerate() {
            next[i] -= c * rat(m as i128);
        }
        t.push(next);
    }
    t
}

impl HermitePoly {
    pub fn new(coeffs: Vec<BigRational>) -> Result<Self> {
        let coeffs = trim(coeffs);
        if coeffs.len() > MAX_DEGREE + 1 {
            return Err(Error::OrderTooLarge { order: coeffs.len() - 1, max: MAX_DEGREE });
        }
        Ok(Self { coeffs })
    }

    /// Single basis element `He_n`.
    pub fn basis(n: usize) -> Result<Self> {
        let mut c = vec![BigRational::zero(); n + 1];
        c[n] = rat(1);
        Self::new(c)
    }

    pub fn degree(&self) -> Option<usize> {
        self.coeffs.len().checked_sub(1)
    }

    pub fn coeff(&self, n: usize) -> BigRational {
        self.coeffs.get(n).cloned().unwrap_or_else(BigRational::zero)
    }

    /// `N h = E h(Z)`, the `He_0` coefficient.
    pub fn gaussian_mean(&self) -> BigRational {
        self.coeff(0)
    }

    pub fn from_monomial(p: &MonomialPoly) -> Result<Self> {
        let deg = p.coeffs.len();
        if deg > MAX_DEGREE + 1 {
            return Err(Error::OrderTooLarge { order: deg - 1, max: MAX_DEGREE });
        }
        // x^n = sum_m n! / (m! (n-2m)! 2^m) He_{n-2m}
        let mut out = vec![BigRational::zero(); deg];
        for (n, c) in p.coeffs.iter().enumerate() {
            if c.is_zero() {
                continue;
            }
            for m in 0..=n / 2 {
                let num = factorial(n as u64);
                let den = factorial(m as u64) * factorial((n - 2 * m) as u64) * (1u128 << m);
                out[n - 2 * m] += c * rat((num / den) as i128);
            }
        }
        Self::new(out)
    }

    pub fn to_monomial(&self) -> MonomialPoly {
        let table = hermite_table(self.coeffs.len().saturating_sub(1));
        let mut out = vec![BigRational::zero(); self.coeffs.len()];
        for (n, e) in self.coeffs.iter().enumerate() {
            for (i, c) in table[n].iter().enumerate() {
                out[i] += e * c;
            }
        }
        MonomialPoly::new(out)
    }

    /// Stein solution `Theta h = -sum_{n>=1} e_n He_{n-1}`.
    pub fn theta(&self) -> Self {
        Self {
            coeffs: trim(self.coeffs.iter().skip(1).map(|c| -c.clone()).collect()),
        }
    }

    /// `d^j/dx^j` using `d He_n = n He_{n-1}`.
    pub fn derivative(&self, j: usize) -> Self {
        let mut c = self.coeffs.clone();
        for _ in 0..j {
            if c.is_empty() {
                break;
            }
            c = c.iter().enumerate().skip(1).map(|(n, v)| v * rat(n as i128)).collect();
        }
        Self { coeffs: trim(c) }
    }

    /// `E h(X)` for a law given by raw moments `mu_0..`.
    pub fn expect_with_moments<S: Scalar>(&self, mu: &[S]) -> Result<S> {
        let m = self.to_monomial();
        if m.coeffs.len() > mu.len() {
            return Err(Error::InvalidInput(format!(
                "need {} moments, got {}",
                m.coeffs.len(),
                mu.len()
            )));
        }
        let mut acc = S::zero();
        for (c, v) in m.coeffs.iter().zip(mu) {
            acc = acc + S::from_rational(c) * v.clone();
        }
        Ok(acc)
    }
}

/// Stein residual `x Theta h - (Theta h)' - (N h - h)` in the monomial basis.
pub fn stein_residual(h: &HermitePoly) -> MonomialPoly {
    let f = h.theta().to_monomial();
    let lhs = f.shift_up().sub(&f.derivative());
    let nh = MonomialPoly::new(vec![h.gaussian_mean()]);
    let rhs = nh.sub(&h.to_monomial());
    lhs.sub(&rhs)
}

/// Positive tuples `(s_1, .., s_r)` with `sum s_j <= budget`, in lexicographic order.
pub fn gamma_tuples(budget: usize) -> Vec<Vec<usize>> {
    fn rec(rest: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        for s in 1..=rest {
            cur.push(s);
            out.push(cur.clone());
            rec(rest - s, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(budget, &mut Vec::new(), &mut out);
    out
}

/// Largest `k` accepted by [`edgeworth_sum`].
pub const MAX_EDGEWORTH_ORDER: usize = 6;

/// Edgeworth main term
/// `sum_{Gamma(k-1)} (-1)^r prod kappa_{s_j+2}/(s_j+1)! N[(d^{s_1+1} Theta) .. (d^{s_r+1} Theta) h]`.
///
/// `kappa` holds `kappa_1, kappa_2, ..` and must be standardized.
pub fn edgeworth_sum<S: Scalar>(kappa: &[S], h: &HermitePoly, k: usize) -> Result<S> {
    if k == 0 || k > MAX_EDGEWORTH_ORDER {
        return Err(Error::OrderTooLarge { order: k, max: MAX_EDGEWORTH_ORDER });
    }
    if h.degree().unwrap_or(0) > 12 {
        return Err(Error::OrderTooLarge { order: h.degree().unwrap_or(0), max: 12 });
    }
    if kappa.len() < 2 || !kappa[0].is_zero() || kappa[1] != S::one() {
        return Err(Error::InvalidInput("cumulants must be standardized".into()));
    }
    if kappa.len() < k + 1 {
        return Err(Error::InvalidInput(format!("need kappa up to order {}", k + 1)));
    }
    let mut total = S::zero();
    for tuple in gamma_tuples(k - 1) {
        let mut g = h.clone();
        for &s in tuple.iter().rev() {
            g = g.theta().derivative(s + 1);
        }
        let n = g.gaussian_mean();
        if n.is_zero() {
            continue;
        }
        let mut w = S::from_rational(&n);
        for &s in &tuple {
            w = w * kappa[s + 1].clone() / S::from_int(factorial(s as u64 + 1) as i128);
        }
        if tuple.len() % 2 == 1 {
            w = -w;
        }
        total = total + w;
    }
    Ok(total)
}

/// Exact `N h` for a monomial-basis polynomial.
pub fn gaussian_expectation(p: &MonomialPoly) -> Result<BigRational> {
    Ok(HermitePoly::from_monomial(p)?.gaussian_mean())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hp(c: &[i64]) -> HermitePoly {
        HermitePoly::from_monomial(&MonomialPoly::from_ints(c)).unwrap()
    }

    #[test]
    fn conversions() {
        let h = hp(&[0, 0, 1]);
        assert_eq!(h.coeffs, vec![rat(1), rat(0), rat(1)]);
        assert_eq!(h.gaussian_mean(), rat(1));
        let h = hp(&[0, 0, 0, 1]);
        assert_eq!(h.coeffs, vec![rat(0), rat(3), rat(0), rat(1)]);
        assert_eq!(hp(&[7]).coeffs, vec![rat(7)]);
        assert_eq!(h.to_monomial(), MonomialPoly::from_ints(&[0, 0, 0, 1]));
        let mut big = vec![0i64; 18];
        big[17] = 1;
        assert!(HermitePoly::from_monomial(&MonomialPoly::from_ints(&big)).is_err());
    }

    #[test]
    fn theta_examples() {
        assert_eq!(hp(&[0, 1]).theta().to_monomial(), MonomialPoly::from_ints(&[-1]));
        assert!(hp(&[5]).theta().coeffs.is_empty());
        assert_eq!(hp(&[0, 0, 1]).theta().to_monomial(), MonomialPoly::from_ints(&[0, -1]));
        for c in [[0, 1, 0, 0], [0, 0, 1, 0], [1, 2, 3, 4]] {
            assert!(stein_residual(&hp(&c)).is_zero());
        }
    }

    #[test]
    fn derivative_examples() {
        let he3 = HermitePoly::basis(3).unwrap();
        assert_eq!(he3.derivative(1).coeffs, vec![rat(0), rat(0), rat(3)]);
        assert!(hp(&[4]).derivative(1).coeffs.is_empty());
        assert_eq!(hp(&[0, 0, 0, 0, 1]).derivative(2), hp(&[0, 0, 12]));
    }

    #[test]
    fn edgeworth_examples() {
        let kappa = [0.0f64, 1.0, 0.37, -0.2];
        let v: f64 = edgeworth_sum(&kappa, &hp(&[0, 0, 0, 1]), 2).unwrap();
        assert!((v - 0.37).abs() < 1e-15);
        let v = edgeworth_sum(&[0.0, 1.0, 0.0, 0.0, 0.0], &hp(&[1, 2, 3, 4, 5]), 4).unwrap();
        assert_eq!(v, 0.0);
        let v: f64 = edgeworth_sum(&kappa, &hp(&[0, 0, 0, 0, 1]), 3).unwrap();
        assert!((v + 0.2).abs() < 1e-15);
        assert!(edgeworth_sum(&[0.5, 1.0, 0.0], &hp(&[0, 1]), 2).is_err());
    }

    #[test]
    fn gamma_counts() {
        assert_eq!(gamma_tuples(1), vec![vec![1]]);
        // compositions of 1..=m number 2^m - 1
        assert_eq!(gamma_tuples(4).len(), 15);
    }
}
