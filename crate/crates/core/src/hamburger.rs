//! Hankel determinants, the `L_j`/`P_j` expansions, moment extension and the
//! cumulant-matching discrete random variable.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use nalgebra::{DMatrix, SymmetricEigen};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

use crate::bell::{cumulants_from_moments, moments_from_cumulants, partitions, bell_coefficient};
use crate::error::{invalid, Error, Result};
use crate::scalar::Scalar;

/// Determinant by Gaussian elimination with largest-magnitude pivoting.
pub fn determinant<S: Scalar>(mut a: Vec<Vec<S>>) -> S {
    let n = a.len();
    let mut det = S::one();
    for c in 0..n {
        let mut piv = c;
        for r in c + 1..n {
            if a[r][c].abs() > a[piv][c].abs() {
                piv = r;
            }
        }
        if a[piv][c].is_zero() {
            return S::zero();
        }
        if piv != c {
            a.swap(piv, c);
            det = -det;
        }
        let p = a[c][c].clone();
        det = det * p.clone();
        for r in c + 1..n {
            if a[r][c].is_zero() {
                continue;
            }
            let f = a[r][c].clone() / p.clone();
            for cc in c..n {
                let v = a[c][cc].clone() * f.clone();
                a[r][cc] = a[r][cc].clone() - v;
            }
        }
    }
    det
}

/// Determinant of the `(j+1) x (j+1)` Hankel matrix built from `x_0..x_{2j}`.
pub fn hankel_minor<S: Scalar>(x: &[S]) -> Result<S> {
    if x.len() % 2 == 0 {
        return invalid(format!("Hankel minor needs odd length, got {}", x.len()));
    }
    let m = x.len() / 2 + 1;
    let a = (0..m).map(|r| (0..m).map(|c| x[r + c].clone()).collect()).collect();
    Ok(determinant(a))
}

/// All leading Hankel minors `H_0, .., H_J` of `mu_0..mu_{2J}` (a trailing odd
/// moment is ignored).
pub fn hankel_minors<S: Scalar>(mu: &[S]) -> Result<Vec<S>> {
    if mu.is_empty() {
        return invalid("empty moment sequence");
    }
    let top = (mu.len() - 1) / 2;
    (0..=top).map(|j| hankel_minor(&mu[..2 * j + 1])).collect()
}

/// True iff every leading Hankel minor is strictly positive.
pub fn is_positive_sequence<S: Scalar>(mu: &[S]) -> Result<bool> {
    if mu.is_empty() {
        return invalid("empty moment sequence");
    }
    if mu[0] != S::one() {
        return Err(Error::NotNormalized(format!("{:?}", mu[0])));
    }
    Ok(hankel_minors(mu)?.iter().all(|h| *h > S::zero()))
}

/// Polynomial in `x_1, x_2, ..` with exact integer coefficients.
///
/// Keys are exponent vectors indexed by variable number (`key[t]` is the power
/// of `x_t`, `key[0]` unused), trailing zeros trimmed.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MultivariatePoly {
    pub terms: BTreeMap<Vec<u32>, BigInt>,
}

fn trim(mut e: Vec<u32>) -> Vec<u32> {
    while e.last() == Some(&0) {
        e.pop();
    }
    e
}

impl MultivariatePoly {
    pub fn constant(c: i64) -> Self {
        let mut p = Self::default();
        p.add_term(Vec::new(), BigInt::from(c));
        p
    }

    pub fn add_term(&mut self, exps: Vec<u32>, c: BigInt) {
        if c.is_zero() {
            return;
        }
        let key = trim(exps);
        let entry = self.terms.entry(key.clone()).or_insert_with(BigInt::zero);
        *entry += c;
        if entry.is_zero() {
            self.terms.remove(&key);
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut out = self.clone();
        for (k, c) in &other.terms {
            out.add_term(k.clone(), c.clone());
        }
        out
    }

    pub fn scale(&self, s: i64) -> Self {
        let mut out = Self::default();
        for (k, c) in &self.terms {
            out.add_term(k.clone(), c * s);
        }
        out
    }

    pub fn mul(&self, other: &Self) -> Self {
        let mut out = Self::default();
        for (ka, ca) in &self.terms {
            for (kb, cb) in &other.terms {
                let len = ka.len().max(kb.len());
                let e = (0..len)
                    .map(|i| ka.get(i).copied().unwrap_or(0) + kb.get(i).copied().unwrap_or(0))
                    .collect();
                out.add_term(e, ca * cb);
            }
        }
        out
    }

    /// Coefficient of the monomial `prod x_t^{e_t}` given as `(t, e_t)` pairs.
    pub fn coefficient(&self, monomial: &[(usize, u32)]) -> BigInt {
        let mut key = Vec::new();
        for &(t, e) in monomial {
            if key.len() <= t {
                key.resize(t + 1, 0);
            }
            key[t] += e;
        }
        self.terms.get(&trim(key)).cloned().unwrap_or_else(BigInt::zero)
    }

    pub fn eval(&self, x: &dyn Fn(usize) -> f64) -> f64 {
        self.terms
            .iter()
            .map(|(k, c)| {
                let mut v = c.to_f64().unwrap_or(f64::NAN);
                for (t, &e) in k.iter().enumerate() {
                    if e > 0 {
                        v *= x(t).powi(e as i32);
                    }
                }
                v
            })
            .sum()
    }
}

/// Complete Bell polynomial `B_n(0, x_2, .., x_n)` as a symbolic polynomial.
pub fn bell_poly_centered(n: usize) -> MultivariatePoly {
    let mut out = MultivariatePoly::default();
    if n == 0 {
        return MultivariatePoly::constant(1);
    }
    for j in 1..=n {
        for mult in partitions(n, j) {
            if mult.first().copied().unwrap_or(0) > 0 {
                continue;
            }
            let mut key = vec![0u32; mult.len() + 1];
            for (idx, &i) in mult.iter().enumerate() {
                key[idx + 1] = i as u32;
            }
            out.add_term(key, BigInt::from(bell_coefficient(n, &mult)));
        }
    }
    out
}

/// Symbolic `L_j`, its univariate reduction `P_j` and the constant `b_0`.
#[derive(Debug, Clone)]
pub struct LjExpansion {
    pub j: usize,
    pub l: MultivariatePoly,
    /// `p[d]` is the coefficient of `x^d` in `P_j`.
    pub p: Vec<BigInt>,
    pub b0: BigInt,
}

fn permutations(n: usize) -> Vec<(Vec<usize>, i64)> {
    fn rec(cur: &mut Vec<usize>, used: &mut Vec<bool>, out: &mut Vec<(Vec<usize>, i64)>) {
        let n = used.len();
        if cur.len() == n {
            let mut inv = 0;
            for a in 0..n {
                for b in a + 1..n {
                    if cur[a] > cur[b] {
                        inv += 1;
                    }
                }
            }
            out.push((cur.clone(), if inv % 2 == 0 { 1 } else { -1 }));
            return;
        }
        for v in 0..n {
            if !used[v] {
                used[v] = true;
                cur.push(v);
                rec(cur, used, out);
                cur.pop();
                used[v] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::new(), &mut vec![false; n], &mut out);
    out
}

/// Expands `L_j(0, x_2, .., x_{2j}) = H_j(1, 0, B_2, .., B_{2j})` for `j <= 4`.
pub fn lj_expand(j: usize) -> Result<LjExpansion> {
    if j == 0 || j > 4 {
        return Err(Error::OrderTooLarge { order: j, max: 4 });
    }
    let entries: Vec<MultivariatePoly> = (0..=2 * j).map(bell_poly_centered).collect();
    let mut l = MultivariatePoly::default();
    for (perm, sign) in permutations(j + 1) {
        let mut term = MultivariatePoly::constant(sign);
        for (r, &c) in perm.iter().enumerate() {
            term = term.mul(&entries[r + c]);
            if term.terms.is_empty() {
                break;
            }
        }
        l = l.add(&term);
    }
    let mut p = vec![BigInt::zero(); j * (j + 1) + 1];
    for (k, c) in &l.terms {
        let mut deg = 0usize;
        for (t, &e) in k.iter().enumerate() {
            if e > 0 {
                debug_assert!(t >= 2);
                deg += (t - 2) * e as usize;
            }
        }
        p[deg] += c;
    }
    while p.len() > 1 && p.last().map_or(false, |c| c.is_zero()) {
        p.pop();
    }
    let b0 = p[0].clone();
    Ok(LjExpansion { j, l, p, b0 })
}

/// Grid step used by [`find_cp`].
pub const CP_GRID: f64 = 1.0 / (1u64 << 20) as f64;

/// Largest `C < 1` on the `2^-20` grid with
/// `b_0 - sum_{l>=1} (sum |a|) C^{2l} >= 1` for every `j <= (k+1)/2`.
pub fn find_cp(k: usize) -> Result<f64> {
    if k == 0 || k > 7 {
        return Err(Error::OrderTooLarge { order: k, max: 7 });
    }
    // per j: (b0, [(l, sum |a|)])
    let mut conds: Vec<(BigInt, Vec<(u32, BigInt)>)> = Vec::new();
    for j in 1..=(k + 1) / 2 {
        let exp = lj_expand(j)?;
        let half = (j * (j + 1) / 2) as i64;
        let mut by_l: BTreeMap<u32, BigInt> = BTreeMap::new();
        for (key, c) in &exp.l.terms {
            let total: i64 = key.iter().map(|&e| e as i64).sum();
            let l = half - total;
            if l >= 1 {
                *by_l.entry(l as u32).or_insert_with(BigInt::zero) += c.abs();
            }
        }
        conds.push((exp.b0, by_l.into_iter().collect()));
    }
    let denom = BigInt::from(1u64 << 20);
    let ok = |m: u64| -> bool {
        let c = BigRational::new(BigInt::from(m), denom.clone());
        let c2 = &c * &c;
        conds.iter().all(|(b0, terms)| {
            let mut v = BigRational::from_integer(b0.clone());
            for (l, a) in terms {
                let mut pw = BigRational::one();
                for _ in 0..*l {
                    pw *= &c2;
                }
                v -= BigRational::from_integer(a.clone()) * pw;
            }
            v >= BigRational::one()
        })
    };
    let top = (1u64 << 20) - 1;
    if !ok(1) {
        return Err(Error::Degenerate(format!("no admissible C for k = {k}")));
    }
    let (mut lo, mut hi) = (1u64, top);
    if ok(hi) {
        return Ok(hi as f64 * CP_GRID);
    }
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if ok(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo as f64 * CP_GRID)
}

/// Result of [`choose_q`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum QChoice {
    /// All targets vanish; the standard normal is used.
    Gaussian,
    Finite(u64),
}

/// `q = floor(min_j C_p^2 |u_j|^{-2/j})` over the nonzero `u_j` (1-based `j`).
pub fn choose_q(u: &[f64], cp: f64) -> Result<QChoice> {
    if !(cp > 0.0 && cp < 1.0) {
        return invalid(format!("C_p must lie in (0,1), got {cp}"));
    }
    let mut best = f64::INFINITY;
    for (idx, &v) in u.iter().enumerate() {
        if !v.is_finite() {
            return invalid("non-finite target");
        }
        if v != 0.0 {
            let j = (idx + 1) as f64;
            best = best.min(cp * cp * v.abs().powf(-2.0 / j));
        }
    }
    if best.is_infinite() {
        return Ok(QChoice::Gaussian);
    }
    let q = best.floor();
    if q < 1.0 {
        return Err(Error::PreAsymptotic { q });
    }
    if q > 9.0e15 {
        return invalid(format!("q = {q} exceeds the exactly representable range"));
    }
    Ok(QChoice::Finite(q as u64))
}

/// Next even moment `C' = (j+1)(j+1)! C^{j+2} + 1` for `mu_0..mu_{2j+1}`,
/// keeping `H_{j+1} >= 1`.
pub fn extend_moment<S: Scalar>(mu: &[S], c: &S) -> Result<S> {
    if mu.len() < 2 || mu.len() % 2 != 0 {
        return invalid(format!("need mu_0..mu_{{2j+1}}, got {} entries", mu.len()));
    }
    let j = (mu.len() - 2) / 2;
    for (l, m) in mu.iter().enumerate().skip(1) {
        if m.abs() > *c {
            return invalid(format!("|mu_{l}| exceeds the bound C"));
        }
    }
    let h = hankel_minor(&mu[..2 * j + 1])?;
    if h < S::one() {
        return invalid(format!("H_{j} = {:?} < 1", h));
    }
    let fact: i128 = (1..=(j as i128 + 1)).product();
    let c_new = S::from_int((j as i128 + 1) * fact) * c.powi(j as u32 + 2) + S::one();
    let mut ext = mu.to_vec();
    ext.push(c_new.clone());
    let h_next = hankel_minor(&ext)?;
    if h_next < S::one() {
        return Err(Error::CheckFailed(format!("H_{} = {:?} < 1 after extension", j + 1, h_next)));
    }
    Ok(c_new)
}

/// Finite-support law with ascending locations and positive weights.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDistribution {
    pub locations: Vec<f64>,
    pub weights: Vec<f64>,
}

impl DiscreteDistribution {
    pub fn new(locations: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if locations.is_empty() || locations.len() != weights.len() {
            return invalid("locations and weights must be nonempty and of equal length");
        }
        if locations.windows(2).any(|w| !(w[0] < w[1])) {
            return invalid("locations must be strictly increasing");
        }
        if weights.iter().any(|&w| !(w > 0.0)) {
            return invalid("weights must be positive");
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return invalid(format!("weights sum to {total}"));
        }
        Ok(Self { locations, weights })
    }

    pub fn mean(&self) -> f64 {
        self.locations.iter().zip(&self.weights).map(|(x, w)| x * w).sum()
    }

    /// Raw moments `mu_0..=mu_order`.
    pub fn moments(&self, order: usize) -> Vec<f64> {
        crate::bell::moments_of_atoms(&self.locations, &self.weights, order)
    }

    pub fn abs_moment(&self, order: u32) -> f64 {
        self.locations
            .iter()
            .zip(&self.weights)
            .map(|(x, w)| w * x.abs().powi(order as i32))
            .sum()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["location", "weight"])?;
        for (x, p) in self.locations.iter().zip(&self.weights) {
            wr.write_record([format!("{x:.17e}"), format!("{p:.17e}")])?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let headers = rd.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["location", "weight"] {
            return Err(Error::Parse("expected header location,weight".into()));
        }
        let mut locs = Vec::new();
        let mut ws = Vec::new();
        for rec in rd.records() {
            let rec = rec?;
            let parse = |s: &str| s.trim().parse::<f64>().map_err(|e| Error::Parse(e.to_string()));
            locs.push(parse(&rec[0])?);
            ws.push(parse(&rec[1])?);
        }
        Self::new(locs, ws)
    }
}

/// Output of [`quadrature_from_moments`].
#[derive(Debug, Clone)]
pub struct Quadrature {
    pub distribution: DiscreteDistribution,
    /// Set when a vanishing Hankel minor forced fewer atoms than requested.
    pub degenerate: bool,
}

/// Gauss rule with `ceil(len/2)` atoms matching `mu_0..mu_{len-1}`.
///
/// For odd input length the unspecified top odd moment is taken to be 0.
pub fn quadrature_from_moments(mu: &[f64]) -> Result<Quadrature> {
    if mu.is_empty() {
        return invalid("empty moment sequence");
    }
    if (mu[0] - 1.0).abs() > 1e-12 {
        return Err(Error::NotNormalized(format!("{}", mu[0])));
    }
    let n = (mu.len() + 1) / 2;
    let mut m = mu.to_vec();
    m.resize(2 * n + 1, 0.0);
    // Upper Cholesky factor R of the (n+1)x(n+1) Hankel matrix, rows 0..n-1.
    let mut r = vec![vec![0.0f64; n + 1]; n + 1];
    let mut atoms = n;
    let mut degenerate = false;
    for i in 0..n {
        let mut d = m[2 * i];
        for k in 0..i {
            d -= r[k][i] * r[k][i];
        }
        if d <= 1e-13 * m[2 * i].abs().max(1.0) {
            atoms = i;
            degenerate = true;
            break;
        }
        r[i][i] = d.sqrt();
        for jj in i + 1..=n {
            let mut s = m[i + jj];
            for k in 0..i {
                s -= r[k][i] * r[k][jj];
            }
            r[i][jj] = s / r[i][i];
        }
    }
    let n = atoms.max(1);
    let mut jac = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        let prev = if i == 0 { 0.0 } else { r[i - 1][i] / r[i - 1][i - 1] };
        jac[(i, i)] = r[i][i + 1] / r[i][i] - prev;
        if i + 1 < n {
            let b = r[i + 1][i + 1] / r[i][i];
            jac[(i, i + 1)] = b;
            jac[(i + 1, i)] = b;
        }
    }
    let eig = SymmetricEigen::new(jac);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let v0 = eig.eigenvectors[(0, i)];
            (eig.eigenvalues[i], v0 * v0)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total: f64 = pairs.iter().map(|p| p.1).sum();
    let locations = pairs.iter().map(|p| p.0).collect();
    let weights = pairs.iter().map(|p| p.1 / total).collect();
    Ok(Quadrature { distribution: DiscreteDistribution::new(locations, weights)?, degenerate })
}

/// Realized cumulant-matching variable and its diagnostics.
#[derive(Debug, Clone)]
pub struct Construction {
    pub k: usize,
    pub q: QChoice,
    pub cp: f64,
    /// `kappa_{j+2}` targets `q^{j/2} u_j`, `j = 1..k-1`.
    pub targets: Vec<f64>,
    /// Realized `kappa_1..kappa_{k+1}`.
    pub realized_cumulants: Vec<f64>,
    /// Assembled moments fed to the quadrature.
    pub moments: Vec<f64>,
    pub hankel_minors: Vec<f64>,
    /// `E|xi|^m` for `m = 1..=2 ceil(k/2) + 2`.
    pub abs_moments: Vec<f64>,
    pub distribution: DiscreteDistribution,
}

pub const MATCH_TOL: f64 = 1e-8;
pub const MINOR_TOL: f64 = 1e-9;

/// Builds `xi` with `kappa_1 = 0`, `kappa_2 = 1`, `kappa_{j+2} = q^{j/2} u_j`.
pub fn construct_matching_rv(u: &[f64], p: f64) -> Result<Construction> {
    if !(p >= 1.0) {
        return invalid(format!("p must be >= 1, got {p}"));
    }
    let k = p.ceil() as usize;
    if u.len() + 1 != k {
        return invalid(format!("expected {} targets for p = {p}, got {}", k - 1, u.len()));
    }
    let cp = find_cp(k)?;
    let q = choose_q(u, cp)?;
    let top = 2 * ((k + 1) / 2) + 2;
    let (targets, mu) = match q {
        QChoice::Gaussian => {
            let mut kappa = vec![0.0; top + 3];
            kappa[1] = 1.0;
            (vec![0.0; k - 1], moments_from_cumulants(&kappa)?)
        }
        QChoice::Finite(q) => {
            let qf = q as f64;
            let targets: Vec<f64> =
                u.iter().enumerate().map(|(i, &v)| qf.powf((i + 1) as f64 / 2.0) * v).collect();
            let mut kappa = vec![0.0, 1.0];
            kappa.extend_from_slice(&targets);
            let mut mu = moments_from_cumulants(&kappa)?;
            if k % 2 == 1 {
                mu.push(0.0);
            }
            let bound = mu[1..].iter().fold(1.0f64, |a, b| a.max(b.abs()));
            let next = extend_moment(&mu, &bound)?;
            mu.push(next);
            (targets, mu)
        }
    };
    let minors = hankel_minors(&mu)?;
    if let Some((j, h)) = minors.iter().enumerate().find(|(_, h)| **h < 1.0 - MINOR_TOL) {
        return Err(Error::CheckFailed(format!("H_{j} = {h} < 1")));
    }
    let quad = quadrature_from_moments(&mu)?;
    if quad.degenerate {
        return Err(Error::CheckFailed("singular Hankel matrix in the quadrature".into()));
    }
    let dist = quad.distribution;
    let realized_mu = dist.moments(k + 1);
    let realized = cumulants_from_moments(&realized_mu)?;
    if realized[0].abs() > MATCH_TOL || (realized[1] - 1.0).abs() > MATCH_TOL {
        return Err(Error::CheckFailed(format!(
            "mean {} / variance {} off target",
            realized[0], realized[1]
        )));
    }
    for (i, t) in targets.iter().enumerate() {
        if (realized[i + 2] - t).abs() > MATCH_TOL {
            return Err(Error::CheckFailed(format!(
                "kappa_{} = {} differs from target {t}",
                i + 3,
                realized[i + 2]
            )));
        }
    }
    if matches!(q, QChoice::Finite(_)) {
        let floor = cp.powf(p) / 2f64.powf(p / 2.0);
        let mx = targets.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        if mx < floor {
            return Err(Error::CheckFailed(format!("max |kappa| = {mx} below {floor}")));
        }
    }
    let abs_moments = (1..=(2 * ((k + 1) / 2) + 2) as u32).map(|m| dist.abs_moment(m)).collect();
    Ok(Construction {
        k,
        q,
        cp,
        targets,
        realized_cumulants: realized,
        moments: mu,
        hankel_minors: minors,
        abs_moments,
        distribution: dist,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn big(v: i64) -> BigInt {
        BigInt::from(v)
    }

    #[test]
    fn hankel_examples() {
        assert_eq!(hankel_minor(&[1.0]).unwrap(), 1.0);
        assert_eq!(hankel_minor(&[1.0, 0.0, 1.0]).unwrap(), 1.0);
        assert!((hankel_minor(&[1.0, 0.0, 1.0, 0.0, 3.0]).unwrap() - 2.0).abs() < 1e-14);
        assert!(hankel_minor(&[1.0, 0.0]).is_err());
    }

    #[test]
    fn positivity() {
        let normal = [1.0, 0.0, 1.0, 0.0, 3.0, 0.0, 15.0, 0.0];
        assert!(is_positive_sequence(&normal).unwrap());
        assert!(!is_positive_sequence(&[1.0, 0.0, 1.0, 0.0, 1.0]).unwrap());
        assert!(is_positive_sequence(&[1.0]).unwrap());
        assert!(is_positive_sequence(&[2.0]).is_err());
    }

    #[test]
    fn l1_l2() {
        let e1 = lj_expand(1).unwrap();
        assert_eq!(e1.l.terms.len(), 1);
        assert_eq!(e1.l.coefficient(&[(2, 1)]), big(1));
        assert_eq!(e1.p, vec![big(1)]);
        let e2 = lj_expand(2).unwrap();
        assert_eq!(e2.l.terms.len(), 3);
        assert_eq!(e2.l.coefficient(&[(2, 3)]), big(2));
        assert_eq!(e2.l.coefficient(&[(2, 1), (4, 1)]), big(1));
        assert_eq!(e2.l.coefficient(&[(3, 2)]), big(-1));
        assert_eq!(e2.b0, big(2));
        assert!(lj_expand(5).is_err());
    }

    #[test]
    fn cp_values() {
        assert_eq!(find_cp(1).unwrap(), 1.0 - CP_GRID);
        let c3 = find_cp(3).unwrap();
        let want = (std::f64::consts::FRAC_1_SQRT_2 / CP_GRID).floor() * CP_GRID;
        assert_eq!(c3, want);
        for k in 1..=5 {
            assert!(find_cp(k + 2).unwrap() <= find_cp(k).unwrap());
        }
        assert!(find_cp(8).is_err());
    }

    #[test]
    fn q_examples() {
        assert_eq!(choose_q(&[0.01], 0.5).unwrap(), QChoice::Finite(2500));
        assert_eq!(choose_q(&[0.0, 0.0], 0.5).unwrap(), QChoice::Gaussian);
        assert!(matches!(choose_q(&[0.9], 0.5), Err(Error::PreAsymptotic { .. })));
    }

    #[test]
    fn extension_examples() {
        let c = extend_moment(&[1.0, 0.0, 1.0, 0.0], &1.0).unwrap();
        assert_eq!(c, 5.0);
        let c = extend_moment(&[1.0, 0.0, 1.0, 0.0, 3.0, 0.0], &3.0).unwrap();
        assert_eq!(c, 18.0 * 81.0 + 1.0);
        let c = extend_moment(&[1.0, 0.0, 1.0, 0.0, 1.0, 0.0], &1.0);
        assert!(c.is_err());
    }

    #[test]
    fn quadrature_examples() {
        let q = quadrature_from_moments(&[1.0, 0.0, 1.0]).unwrap();
        let d = &q.distribution;
        assert_eq!(d.locations.len(), 2);
        assert!((d.locations[0] + 1.0).abs() < 1e-12 && (d.locations[1] - 1.0).abs() < 1e-12);
        assert!((d.weights[0] - 0.5).abs() < 1e-12);
        let q = quadrature_from_moments(&[1.0, 0.0, 1.0, 0.0, 3.0, 0.0]).unwrap();
        let d = &q.distribution;
        let s3 = 3f64.sqrt();
        for (x, want) in d.locations.iter().zip([-s3, 0.0, s3]) {
            assert!((x - want).abs() < 1e-12);
        }
        for (w, want) in d.weights.iter().zip([1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0]) {
            assert!((w - want).abs() < 1e-12);
        }
        let q = quadrature_from_moments(&[1.0]).unwrap();
        assert_eq!(q.distribution.locations, vec![0.0]);
        assert_eq!(q.distribution.weights, vec![1.0]);
        let q = quadrature_from_moments(&[1.0, 0.0, 1.0, 0.0, 1.0]).unwrap();
        assert!(q.degenerate);
        assert_eq!(q.distribution.locations.len(), 2);
    }

    #[test]
    fn csv_round_trip() {
        let d = DiscreteDistribution::new(vec![-2.0, 0.5], vec![0.2, 0.8]).unwrap();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf.clone()).unwrap().starts_with("location,weight\n"));
        assert_eq!(DiscreteDistribution::read_csv(&buf[..]).unwrap(), d);
        assert!(DiscreteDistribution::new(vec![1.0, 0.0], vec![0.5, 0.5]).is_err());
    }

    #[test]
    fn gaussian_path() {
        let c = construct_matching_rv(&[0.0], 2.0).unwrap();
        assert_eq!(c.q, QChoice::Gaussian);
        let mu = c.distribution.moments(6);
        for (a, b) in mu.iter().zip([1.0, 0.0, 1.0, 0.0, 3.0, 0.0, 15.0]) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn skewed_targets() {
        let c = construct_matching_rv(&[0.05], 2.0).unwrap();
        let QChoice::Finite(q) = c.q else { panic!() };
        assert!((c.realized_cumulants[2] - (q as f64).sqrt() * 0.05).abs() < 1e-8);
        let c = construct_matching_rv(&[0.05, -0.02], 3.0).unwrap();
        // C_p sits just below 1/sqrt(2), so the u_2 constraint gives 24 rather than 25
        assert_eq!(c.q, QChoice::Finite(24));
        assert!((c.realized_cumulants[2] - 24f64.sqrt() * 0.05).abs() < 1e-8);
        assert!((c.realized_cumulants[3] + 0.48).abs() < 1e-8);
        assert!(matches!(construct_matching_rv(&[2.0], 2.0), Err(Error::PreAsymptotic { .. })));
    }
}
