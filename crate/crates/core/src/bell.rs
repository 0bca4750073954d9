//! Partial exponential Bell polynomials and the moment/cumulant maps.

use crate::error::{invalid, Error, Result};
use crate::scalar::{factorial, Scalar};

/// Largest order accepted by [`bell_partial`] and the conversions.
pub const MAX_ORDER: usize = 20;

/// Multiplicity vectors `(i_1, .., i_{n-j+1})` with `sum i_r = j` and
/// `sum r i_r = n`.
pub fn partitions(n: usize, j: usize) -> Vec<Vec<usize>> {
    fn rec(rest_n: usize, rest_j: usize, r: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if r == 0 {
            if rest_n == 0 && rest_j == 0 {
                let mut v = cur.clone();
                v.reverse();
                out.push(v);
            }
            return;
        }
        let max_i = (rest_n / r).min(rest_j);
        for i in 0..=max_i {
            cur.push(i);
            rec(rest_n - i * r, rest_j - i, r - 1, cur, out);
            cur.pop();
        }
    }
    if j > n || (j == 0 && n > 0) {
        return Vec::new();
    }
    if n == 0 {
        return vec![Vec::new()];
    }
    let len = n - j + 1;
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(len);
    rec(n, j, len, &mut cur, &mut out);
    out
}

/// Integer coefficient `n! / prod(i_r! (r!)^{i_r})` of one Bell monomial.
pub fn bell_coefficient(n: usize, mult: &[usize]) -> u128 {
    let mut den: u128 = 1;
    for (idx, &i) in mult.iter().enumerate() {
        let r = (idx + 1) as u64;
        den *= factorial(i as u64) * factorial(r).pow(i as u32);
    }
    factorial(n as u64) / den
}

/// Partial exponential Bell polynomial `B_{n,j}(x_1, .., x_{n-j+1})`.
///
/// `x` must hold exactly `n - j + 1` entries.
pub fn bell_partial<S: Scalar>(n: usize, j: usize, x: &[S]) -> Result<S> {
    if n > MAX_ORDER {
        return Err(Error::OrderTooLarge { order: n, max: MAX_ORDER });
    }
    if j > n || (j == 0 && n > 0) {
        return Ok(S::zero());
    }
    if n == 0 {
        return Ok(S::one());
    }
    let need = n - j + 1;
    if x.len() != need {
        return invalid(format!("B_{{{n},{j}}} needs {need} arguments, got {}", x.len()));
    }
    let mut total = S::zero();
    for mult in partitions(n, j) {
        let mut term = S::from_int(bell_coefficient(n, &mult) as i128);
        for (idx, &i) in mult.iter().enumerate() {
            if i > 0 {
                term = term * x[idx].powi(i as u32);
            }
        }
        total = total + term;
    }
    Ok(total)
}

/// Complete Bell polynomial `B_n(x) = sum_j B_{n,j}(x)`.
pub fn bell_complete<S: Scalar>(n: usize, x: &[S]) -> Result<S> {
    if x.len() < n {
        return invalid(format!("B_{n} needs {n} arguments, got {}", x.len()));
    }
    let mut total = S::zero();
    for j in 1..=n {
        total = total + bell_partial(n, j, &x[..n - j + 1])?;
    }
    if n == 0 {
        total = S::one();
    }
    Ok(total)
}

/// Raw moments `(mu_0, .., mu_n)` from cumulants `(kappa_1, .., kappa_n)`.
pub fn moments_from_cumulants<S: Scalar>(kappa: &[S]) -> Result<Vec<S>> {
    let n = kappa.len();
    if n > MAX_ORDER {
        return Err(Error::OrderTooLarge { order: n, max: MAX_ORDER });
    }
    let mut mu = Vec::with_capacity(n + 1);
    mu.push(S::one());
    for m in 1..=n {
        mu.push(bell_complete(m, kappa)?);
    }
    Ok(mu)
}

/// Cumulants `(kappa_1, .., kappa_n)` from raw moments `(mu_0 = 1, mu_1, .., mu_n)`.
pub fn cumulants_from_moments<S: Scalar>(mu: &[S]) -> Result<Vec<S>> {
    if mu.is_empty() {
        return invalid("empty moment sequence");
    }
    if mu[0] != S::one() {
        return Err(Error::NotNormalized(format!("{:?}", mu[0])));
    }
    let n = mu.len() - 1;
    if n > MAX_ORDER {
        return Err(Error::OrderTooLarge { order: n, max: MAX_ORDER });
    }
    let x = &mu[1..];
    let mut kappa = Vec::with_capacity(n);
    for m in 1..=n {
        let mut acc = S::zero();
        for j in 1..=m {
            let c = factorial(j as u64 - 1) as i128;
            let c = if j % 2 == 1 { c } else { -c };
            acc = acc + S::from_int(c) * bell_partial(m, j, &x[..m - j + 1])?;
        }
        kappa.push(acc);
    }
    Ok(kappa)
}

/// Cumulants `kappa_1, ..` of a random variable; `standardized` marks
/// `kappa_1 = 0`, `kappa_2 = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct CumulantVector<S> {
    pub values: Vec<S>,
}

impl<S: Scalar> CumulantVector<S> {
    pub fn new(values: Vec<S>) -> Self {
        Self { values }
    }

    /// Builds `(0, 1, kappa_3, ..)` from the higher cumulants.
    pub fn standardized(higher: &[S]) -> Self {
        let mut values = vec![S::zero(), S::one()];
        values.extend_from_slice(higher);
        Self { values }
    }

    pub fn is_standardized(&self) -> bool {
        self.values.len() >= 2 && self.values[0].is_zero() && self.values[1] == S::one()
    }

    /// `kappa_j` with 1-based index.
    pub fn get(&self, j: usize) -> Option<&S> {
        j.checked_sub(1).and_then(|i| self.values.get(i))
    }

    pub fn to_moments(&self) -> Result<MomentSequence<S>> {
        Ok(MomentSequence { values: moments_from_cumulants(&self.values)? })
    }
}

/// Raw moments `mu_0 = 1, mu_1, ..`.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentSequence<S> {
    pub values: Vec<S>,
}

impl<S: Scalar> MomentSequence<S> {
    pub fn new(values: Vec<S>) -> Result<Self> {
        match values.first() {
            None => invalid("empty moment sequence"),
            Some(m0) if *m0 != S::one() => Err(Error::NotNormalized(format!("{m0:?}"))),
            _ => Ok(Self { values }),
        }
    }

    pub fn to_cumulants(&self) -> Result<CumulantVector<S>> {
        Ok(CumulantVector { values: cumulants_from_moments(&self.values)? })
    }
}

/// Raw moments `mu_0..=mu_order` of a finitely supported law.
pub fn moments_of_atoms(locations: &[f64], weights: &[f64], order: usize) -> Vec<f64> {
    let mut mu = vec![0.0; order + 1];
    for (&x, &w) in locations.iter().zip(weights) {
        let mut p = w;
        for m in mu.iter_mut() {
            *m += p;
            p *= x;
        }
    }
    mu
}
