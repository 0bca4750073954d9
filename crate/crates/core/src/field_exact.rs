//! Finite random fields with exhaustively enumerated joint outcomes, the
//! constraint sets and generalized covariances attached to genograms, the sums
//! `S`, `T_f`, `U_f`, and exact checks of the expansion identities.

use std::io::Write;

use num_rational::Rational64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bell::cumulants_from_moments;
use crate::error::{invalid, Error, Result};
use crate::genogram::{coeff_b, coeffs, enumerate, extensions_to_order, Genogram, GenogramClass};
use crate::genogram::enumerate_extensions;
use crate::hamburger::DiscreteDistribution;
use crate::scalar::{binomial, factorial};
use crate::stein_edgeworth::{edgeworth_sum, HermitePoly, MonomialPoly};

/// Upper bound on the number of enumerated joint outcomes.
pub const MAX_OUTCOMES: u128 = 1_000_000;
/// Upper bound on `|T|` for genogram sums (sets are stored as bit masks).
pub const MAX_SITES: usize = 16;

/// One finite-support innovation source.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct InnovationSpec {
    pub support: Vec<f64>,
    pub probs: Vec<f64>,
}

/// One term `coef * eps_{i - offset}` of a moving-average kernel.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct KernelTerm {
    pub offset: Vec<i64>,
    pub coef: f64,
}

/// JSON description of an [`ExactField`].
///
/// Either `kernel` (rows = sites, columns = innovations) together with one
/// innovation per column, or `moving_average` together with a single
/// innovation placed on every site of the enlarged index set.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FieldSpec {
    pub dimension: usize,
    pub sites: Vec<Vec<i64>>,
    pub innovations: Vec<InnovationSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub moving_average: Option<Vec<KernelTerm>>,
}

/// Strict total order used to rank sites at equal distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SiteOrder {
    #[default]
    Lexicographic,
    ReverseLexicographic,
}

/// Polynomial test function with `f64` coefficients (`c[n]` for `x^n`).
#[derive(Debug, Clone, PartialEq)]
pub struct PolyFn {
    pub coeffs: Vec<f64>,
}

pub const MAX_POLY_DEGREE: usize = 12;

impl PolyFn {
    pub fn new(coeffs: Vec<f64>) -> Result<Self> {
        let mut c = coeffs;
        while c.last() == Some(&0.0) {
            c.pop();
        }
        if c.len() > MAX_POLY_DEGREE + 1 {
            return Err(Error::OrderTooLarge { order: c.len() - 1, max: MAX_POLY_DEGREE });
        }
        Ok(Self { coeffs: c })
    }

    pub fn from_monomial(p: &MonomialPoly) -> Result<Self> {
        Self::new(p.coeffs.iter().map(|c| crate::scalar::Scalar::from_rational(c)).collect())
    }

    pub fn monomial(n: usize) -> Result<Self> {
        let mut c = vec![0.0; n + 1];
        c[n] = 1.0;
        Self::new(c)
    }

    pub fn degree(&self) -> Option<usize> {
        self.coeffs.len().checked_sub(1)
    }

    pub fn derivative(&self, n: usize) -> Self {
        let mut c = self.coeffs.clone();
        for _ in 0..n {
            if c.is_empty() {
                break;
            }
            c = c.iter().enumerate().skip(1).map(|(i, v)| v * i as f64).collect();
        }
        Self { coeffs: c }
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c)
    }

    /// All derivatives `g^{(m)}(x)` for `m = 0..=deg`.
    pub fn taylor(&self, x: f64) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.coeffs.len());
        let mut d = self.clone();
        while !d.coeffs.is_empty() {
            out.push(d.eval(x));
            d = d.derivative(1);
        }
        out
    }
}

/// Finite field `X_i = sum_e K_{ie} (eps_e - E eps_e)` over independent
/// finite-support innovations, with all joint outcomes enumerated.
#[derive(Debug, Clone)]
pub struct ExactField {
    dimension: usize,
    sites: Vec<Vec<i64>>,
    probs: Vec<f64>,
    /// `x[i][w]`: value of `X_i` in outcome `w`.
    x: Vec<Vec<f64>>,
    total: Vec<f64>,
    sigma: f64,
}

fn max_norm(a: &[i64], b: &[i64]) -> i64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).max().unwrap_or(0)
}

fn pairwise_sum(v: &[f64]) -> f64 {
    match v.len() {
        0 => 0.0,
        1 => v[0],
        2 => v[0] + v[1],
        n => pairwise_sum(&v[..n / 2]) + pairwise_sum(&v[n / 2..]),
    }
}

impl ExactField {
    pub fn from_spec(spec: &FieldSpec) -> Result<Self> {
        if spec.dimension == 0 {
            return invalid("dimension must be positive");
        }
        if spec.sites.is_empty() {
            return invalid("empty index set");
        }
        for s in &spec.sites {
            if s.len() != spec.dimension {
                return invalid(format!("site {s:?} does not have dimension {}", spec.dimension));
            }
        }
        let mut sorted = spec.sites.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != spec.sites.len() {
            return invalid("duplicate sites");
        }
        let (innov, kernel) = match (&spec.kernel, &spec.moving_average) {
            (Some(k), None) => (spec.innovations.clone(), k.clone()),
            (None, Some(terms)) => {
                if spec.innovations.len() != 1 {
                    return invalid("moving_average needs exactly one innovation law");
                }
                Self::ma_layout(&spec.sites, terms, &spec.innovations[0])?
            }
            _ => return invalid("give exactly one of kernel or moving_average"),
        };
        if kernel.len() != spec.sites.len() || kernel.iter().any(|r| r.len() != innov.len()) {
            return invalid("kernel must have one row per site and one column per innovation");
        }
        for inn in &innov {
            if inn.support.is_empty() || inn.support.len() != inn.probs.len() {
                return invalid("innovation support and probabilities must match");
            }
            if inn.probs.iter().any(|&p| !(p > 0.0)) {
                return invalid("innovation probabilities must be positive");
            }
            let t: f64 = inn.probs.iter().sum();
            if (t - 1.0).abs() > 1e-14 {
                return invalid(format!("innovation probabilities sum to {t}"));
            }
        }
        let outcomes: u128 = innov.iter().map(|i| i.support.len() as u128).product();
        if outcomes > MAX_OUTCOMES {
            return Err(Error::SizeGuard { outcomes, limit: MAX_OUTCOMES });
        }
        let centered: Vec<Vec<f64>> = innov
            .iter()
            .map(|i| {
                let mean: f64 = i.support.iter().zip(&i.probs).map(|(a, b)| a * b).sum();
                i.support.iter().map(|v| v - mean).collect()
            })
            .collect();
        let o = outcomes as usize;
        let n = spec.sites.len();
        let mut probs = vec![1.0; o];
        let mut x = vec![vec![0.0; o]; n];
        let mut digits = vec![0usize; innov.len()];
        for w in 0..o {
            let mut p = 1.0;
            for (e, &d) in digits.iter().enumerate() {
                p *= innov[e].probs[d];
            }
            probs[w] = p;
            for i in 0..n {
                let mut v = 0.0;
                for (e, &d) in digits.iter().enumerate() {
                    let c = kernel[i][e];
                    if c != 0.0 {
                        v += c * centered[e][d];
                    }
                }
                x[i][w] = v;
            }
            for (e, d) in digits.iter_mut().enumerate() {
                *d += 1;
                if *d < innov[e].support.len() {
                    break;
                }
                *d = 0;
            }
        }
        let total: Vec<f64> = (0..o).map(|w| (0..n).map(|i| x[i][w]).sum()).collect();
        let var: f64 = total.iter().zip(&probs).map(|(t, p)| t * t * p).sum();
        if !(var > 1e-14) {
            return Err(Error::Degenerate(format!("Var(sum X) = {var}")));
        }
        Ok(Self { dimension: spec.dimension, sites: spec.sites.clone(), probs, x, total, sigma: var.sqrt() })
    }

    fn ma_layout(
        sites: &[Vec<i64>],
        terms: &[KernelTerm],
        innovation: &InnovationSpec,
    ) -> Result<(Vec<InnovationSpec>, Vec<Vec<f64>>)> {
        if terms.is_empty() {
            return invalid("empty moving-average kernel");
        }
        let mut sources: Vec<Vec<i64>> = Vec::new();
        for s in sites {
            for t in terms {
                if t.offset.len() != s.len() {
                    return invalid("kernel offset dimension mismatch");
                }
                let src: Vec<i64> = s.iter().zip(&t.offset).map(|(a, b)| a - b).collect();
                sources.push(src);
            }
        }
        sources.sort();
        sources.dedup();
        let mut kernel = vec![vec![0.0; sources.len()]; sites.len()];
        for (i, s) in sites.iter().enumerate() {
            for t in terms {
                let src: Vec<i64> = s.iter().zip(&t.offset).map(|(a, b)| a - b).collect();
                let e = sources.binary_search(&src).expect("source present");
                kernel[i][e] += t.coef;
            }
        }
        Ok((vec![innovation.clone(); sources.len()], kernel))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: FieldSpec = serde_json::from_str(text)?;
        Self::from_spec(&spec)
    }

    /// Moving-average field on `sites` driven by one law per source site.
    pub fn moving_average(
        dimension: usize,
        sites: Vec<Vec<i64>>,
        terms: &[(Vec<i64>, f64)],
        innovation: &DiscreteDistribution,
    ) -> Result<Self> {
        let spec = FieldSpec {
            dimension,
            sites,
            innovations: vec![InnovationSpec {
                support: innovation.locations.clone(),
                probs: innovation.weights.clone(),
            }],
            kernel: None,
            moving_average: Some(
                terms.iter().map(|(o, c)| KernelTerm { offset: o.clone(), coef: *c }).collect(),
            ),
        };
        Self::from_spec(&spec)
    }

    /// `n` iid sites on a line.
    pub fn iid_line(n: usize, innovation: &DiscreteDistribution) -> Result<Self> {
        let sites = (1..=n as i64).map(|i| vec![i]).collect();
        Self::moving_average(1, sites, &[(vec![0], 1.0)], innovation)
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn sites(&self) -> &[Vec<i64>] {
        &self.sites
    }

    pub fn num_sites(&self) -> usize {
        self.sites.len()
    }

    pub fn num_outcomes(&self) -> usize {
        self.probs.len()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// `X_i` as a vector over outcomes (0-based site index).
    pub fn x(&self, i: usize) -> &[f64] {
        &self.x[i]
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn expect(&self, y: &[f64]) -> f64 {
        y.iter().zip(&self.probs).map(|(a, p)| a * p).sum()
    }

    /// `W(J) = sigma^{-1} sum_{i not in J} X_i` for a site mask `J`.
    pub fn w_excluding(&self, mask: u64) -> Vec<f64> {
        let mut v = self.total.clone();
        for i in 0..self.num_sites() {
            if mask >> i & 1 == 1 {
                for (a, b) in v.iter_mut().zip(&self.x[i]) {
                    *a -= b;
                }
            }
        }
        v.iter_mut().for_each(|a| *a /= self.sigma);
        v
    }

    pub fn w(&self) -> Vec<f64> {
        self.w_excluding(0)
    }

    /// Raw moments `E W^j`, `j = 0..=order`.
    pub fn moments_w(&self, order: usize) -> Vec<f64> {
        let w = self.w();
        let mut mu = vec![0.0; order + 1];
        for (x, p) in w.iter().zip(&self.probs) {
            let mut t = *p;
            for m in mu.iter_mut() {
                *m += t;
                t *= x;
            }
        }
        mu[0] = 1.0;
        mu
    }

    /// `E h(W)` for a polynomial `h`.
    pub fn expect_poly(&self, h: &PolyFn) -> f64 {
        let w = self.w();
        w.iter().zip(&self.probs).map(|(x, p)| h.eval(*x) * p).sum()
    }
}

/// Cumulant `kappa_j(W)`, `1 <= j <= 8`.
pub fn exact_cumulant(field: &ExactField, j: usize) -> Result<f64> {
    if j == 0 || j > 8 {
        return Err(Error::OrderTooLarge { order: j, max: 8 });
    }
    Ok(exact_cumulants(field, j)?[j - 1])
}

/// Cumulants `kappa_1..kappa_n` of `W`.
pub fn exact_cumulants(field: &ExactField, n: usize) -> Result<Vec<f64>> {
    cumulants_from_moments(&field.moments_w(n))
}

/// Precomputed `N(J)` and distance-then-order ranking for every site subset.
#[derive(Debug, Clone)]
pub struct Neighborhoods {
    n_sites: usize,
    near: Vec<u64>,
    ranked: Vec<Vec<u8>>,
}

impl Neighborhoods {
    pub fn new(field: &ExactField, m: i64, order: SiteOrder) -> Result<Self> {
        let n = field.num_sites();
        if n > MAX_SITES {
            return Err(Error::SizeGuard { outcomes: n as u128, limit: MAX_SITES as u128 });
        }
        if m < 0 {
            return invalid("m must be non-negative");
        }
        let sites = field.sites();
        let count = 1usize << n;
        let mut near = vec![0u64; count];
        let mut ranked = vec![Vec::new(); count];
        for mask in 1..count {
            let dist: Vec<i64> = (0..n)
                .map(|i| {
                    (0..n)
                        .filter(|&j| mask >> j & 1 == 1)
                        .map(|j| max_norm(&sites[i], &sites[j]))
                        .min()
                        .unwrap()
                })
                .collect();
            let mut nm = 0u64;
            let mut rest = Vec::new();
            for i in 0..n {
                if dist[i] <= m {
                    nm |= 1 << i;
                } else {
                    rest.push(i);
                }
            }
            rest.sort_by(|&a, &b| {
                dist[a].cmp(&dist[b]).then_with(|| match order {
                    SiteOrder::Lexicographic => sites[a].cmp(&sites[b]),
                    SiteOrder::ReverseLexicographic => sites[b].cmp(&sites[a]),
                })
            });
            near[mask] = nm;
            ranked[mask] = rest.into_iter().map(|i| i as u8).collect();
        }
        Ok(Self { n_sites: n, near, ranked })
    }

    /// `N^{(s)}(J)` as a mask (`s = 0` gives `N(J)`).
    pub fn n_s(&self, j_mask: u64, s: i64) -> u64 {
        let mut out = self.near[j_mask as usize];
        let r = &self.ranked[j_mask as usize];
        for &i in r.iter().take(s.max(0) as usize) {
            out |= 1 << i;
        }
        out
    }

    /// `rk(i, J)` for a site outside `N(J)`.
    pub fn rank(&self, i: usize, j_mask: u64) -> Result<usize> {
        if i >= self.n_sites {
            return invalid("site out of range");
        }
        self.ranked[j_mask as usize]
            .iter()
            .position(|&v| v as usize == i)
            .map(|p| p + 1)
            .ok_or_else(|| Error::InvalidInput(format!("site {i} lies in N(J)")))
    }

    pub fn all(&self) -> u64 {
        if self.n_sites == 64 {
            u64::MAX
        } else {
            (1u64 << self.n_sites) - 1
        }
    }
}

/// Per-label data of a genogram needed by the constraint recursion.
#[derive(Debug, Clone)]
struct LabelInfo {
    s: i64,
    ancestors: Vec<usize>,
    g: usize,
    u: usize,
}

fn label_info(g: &Genogram) -> Vec<LabelInfo> {
    let mut out = vec![LabelInfo { s: 0, ancestors: Vec::new(), g: 1, u: 1 }];
    for j in 1..=g.order() {
        out.push(LabelInfo { s: g.id(j), ancestors: g.ancestors(j), g: g.progenitor(j), u: g.u(j) });
    }
    out
}

/// `(B_j, D_j)` from the sets of earlier labels and the chosen sites.
fn constraint_step(
    info: &[LabelInfo],
    nb: &Neighborhoods,
    j: usize,
    sites: &[usize],
    b: &[u64],
    d: &[u64],
) -> (u64, u64) {
    if j == 1 {
        return (nb.all(), 0);
    }
    let li = &info[j];
    let mut jm = 0u64;
    for &a in &li.ancestors {
        jm |= 1 << sites[a];
    }
    let bj = if li.s >= 0 { nb.n_s(jm, li.s) | d[li.g] } else { b[li.u] };
    let dj = if li.s >= 1 { nb.n_s(jm, li.s - 1) | d[li.g] } else { d[li.g] };
    (bj, dj)
}

/// `(B_j, D_j)` for label `j` given the prefix `i_1..i_{j-1}` (0-based site indices).
pub fn constraints(g: &Genogram, prefix: &[usize], nb: &Neighborhoods) -> Result<(u64, u64)> {
    let j = prefix.len() + 1;
    if j > g.order() {
        return invalid(format!("prefix too long for order {}", g.order()));
    }
    let info = label_info(g);
    let mut sites = vec![0usize; j + 1];
    let mut b = vec![0u64; j + 1];
    let mut d = vec![0u64; j + 1];
    for l in 1..=j {
        let (bl, dl) = constraint_step(&info, nb, l, &sites, &b, &d);
        b[l] = bl;
        d[l] = dl;
        if l < j {
            let i = prefix[l - 1];
            if i >= nb.n_sites || (bl & !dl) >> i & 1 == 0 {
                return invalid(format!("i_{l} = {i} is not in B_{l} \\ D_{l}"));
            }
            sites[l] = i;
        }
    }
    Ok((b[j], d[j]))
}

/// `D*(Y)` = `E[Y]`, `D*(Y_1, .., Y_t) = E[Y_1 D(Y_2, .., Y_t)]`.
pub fn gen_cov(args: &[Vec<f64>], probs: &[f64]) -> f64 {
    let t = args.len();
    if t == 0 {
        return 1.0;
    }
    if t == 1 {
        return expect(&args[0], probs);
    }
    let d = gen_dev(&args[1..], probs);
    args[0].iter().zip(&d).zip(probs).map(|((a, b), p)| a * b * p).sum()
}

/// Random-variable form `D(Y_1, .., Y_t)`.
pub fn gen_dev(args: &[Vec<f64>], probs: &[f64]) -> Vec<f64> {
    let t = args.len();
    let mut d = args[t - 1].clone();
    let e = expect(&d, probs);
    d.iter_mut().for_each(|v| *v -= e);
    for s in (0..t - 1).rev() {
        for (v, a) in d.iter_mut().zip(&args[s]) {
            *v *= a;
        }
        let e = expect(&d, probs);
        d.iter_mut().for_each(|v| *v -= e);
    }
    d
}

fn expect(y: &[f64], probs: &[f64]) -> f64 {
    y.iter().zip(probs).map(|(a, p)| a * p).sum()
}

/// Compositions of `t` as block-length lists.
pub fn compositions(t: usize) -> Vec<Vec<usize>> {
    if t == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for first in 1..=t {
        for mut rest in compositions(t - first) {
            rest.insert(0, first);
            out.push(rest);
        }
    }
    out
}

/// Alternating-composition form
/// `D*(Y_1..Y_t) = sum_eta (-1)^{l-1} prod_blocks E[prod of the block]`.
pub fn gen_cov_compositional(args: &[Vec<f64>], probs: &[f64]) -> f64 {
    let t = args.len();
    let mut total = 0.0;
    for comp in compositions(t) {
        let mut start = 0;
        let mut prod = 1.0;
        for &len in &comp {
            let mut y = args[start].clone();
            for a in &args[start + 1..start + len] {
                y.iter_mut().zip(a).for_each(|(v, b)| *v *= b);
            }
            prod *= expect(&y, probs);
            start += len;
        }
        if comp.len() % 2 == 1 {
            total += prod;
        } else {
            total -= prod;
        }
    }
    total
}

/// Factor structure of `E_G`: each factor lists inclusive label ranges whose
/// products form the arguments of one `D*`.
pub fn eg_plan(g: &Genogram) -> Vec<Vec<(usize, usize)>> {
    let k = g.order();
    if k == 1 {
        return vec![vec![(1, 1)]];
    }
    let q0 = g.q0();
    let mut bounds = vec![q0];
    bounds.extend(g.branch_heads());
    let mut groups = Vec::new();
    for (n, &start) in bounds.iter().enumerate() {
        let end = bounds.get(n + 1).map_or(k, |&b| b - 1);
        groups.push((start, end));
    }
    let mut out = if q0 >= 2 { eg_plan(&g.prefix(q0 - 1)) } else { Vec::new() };
    out.push(groups);
    out
}

/// `E_G(Y_1, .., Y_k)` evaluated on outcome vectors.
pub fn eval_eg(g: &Genogram, ys: &[Vec<f64>], probs: &[f64]) -> Result<f64> {
    if ys.len() != g.order() {
        return invalid(format!("E_G needs {} arguments, got {}", g.order(), ys.len()));
    }
    let mut total = 1.0;
    for factor in eg_plan(g) {
        total *= eval_factor(&factor, |l| &ys[l - 1], probs);
    }
    Ok(total)
}

fn eval_factor<'a, F: Fn(usize) -> &'a Vec<f64>>(
    factor: &[(usize, usize)],
    y: F,
    probs: &[f64],
) -> f64 {
    let args: Vec<Vec<f64>> = factor
        .iter()
        .map(|&(a, b)| {
            let mut v = y(a).clone();
            for l in a + 1..=b {
                v.iter_mut().zip(y(l)).for_each(|(p, q)| *p *= q);
            }
            v
        })
        .collect();
    gen_cov(&args, probs)
}

/// Which genogram sum to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SumKind {
    S,
    T,
    U,
}

/// Shared data for evaluating genogram sums on one field.
pub struct SumContext<'a> {
    pub field: &'a ExactField,
    pub nb: Neighborhoods,
    pub m: i64,
    pub jobs_partition: bool,
}

impl<'a> SumContext<'a> {
    pub fn new(field: &'a ExactField, m: i64, order: SiteOrder) -> Result<Self> {
        Ok(Self { field, nb: Neighborhoods::new(field, m, order)?, m, jobs_partition: true })
    }

    pub fn s(&self, g: &Genogram) -> f64 {
        self.sum(SumKind::S, g, None)
    }

    pub fn t(&self, g: &Genogram, f: &PolyFn) -> f64 {
        self.sum(SumKind::T, g, Some(f))
    }

    pub fn u(&self, g: &Genogram, f: &PolyFn) -> f64 {
        self.sum(SumKind::U, g, Some(f))
    }

    /// Nested sum over `i_j in B_j \ D_j`, partitioned over `i_1` and
    /// reduced pairwise in site order.
    pub fn sum(&self, kind: SumKind, g: &Genogram, f: Option<&PolyFn>) -> f64 {
        let k = g.order();
        assert!(kind != SumKind::U || k >= 2, "U_f needs order >= 2");
        let depth = if kind == SumKind::U { k - 1 } else { k };
        let info = label_info(g);
        let plan = eg_plan(g);
        let deriv = f.map(|f| match kind {
            SumKind::T => f.derivative(k - 1),
            SumKind::U => f.derivative(k - 2),
            SumKind::S => f.clone(),
        });
        let n = self.field.num_sites();
        let run = |i1: usize| -> f64 {
            let mut st = Walk {
                ctx: self,
                kind,
                k,
                depth,
                info: &info,
                plan: &plan,
                deriv: deriv.as_ref(),
                sites: vec![0; k + 1],
                b: vec![0; k + 1],
                d: vec![0; k + 1],
                ys: vec![Vec::new(); k + 1],
            };
            st.b[1] = self.nb.all();
            st.d[1] = 0;
            st.sites[1] = i1;
            st.ys[1] = self.field.x(i1).to_vec();
            st.descend(2, 1.0, 0)
        };
        let parts: Vec<f64> = if self.jobs_partition {
            (0..n).into_par_iter().map(run).collect()
        } else {
            (0..n).map(run).collect()
        };
        let scale = self.field.sigma().powi(depth as i32);
        pairwise_sum(&parts) / scale
    }
}

struct Walk<'a, 'b> {
    ctx: &'b SumContext<'a>,
    kind: SumKind,
    k: usize,
    depth: usize,
    info: &'b [LabelInfo],
    plan: &'b [Vec<(usize, usize)>],
    deriv: Option<&'b PolyFn>,
    sites: Vec<usize>,
    b: Vec<u64>,
    d: Vec<u64>,
    ys: Vec<Vec<f64>>,
}

impl<'a, 'b> Walk<'a, 'b> {
    /// Labels `< j` are assigned; `acc` is the product of completed factors
    /// `plan[..done]`.
    fn descend(&mut self, j: usize, acc: f64, done: usize) -> f64 {
        let probs = self.ctx.field.probs();
        // close factors that end before label j (those never touch the payload)
        let mut acc = acc;
        let mut done = done;
        while done < self.plan.len() - 1 {
            let end = self.plan[done].last().unwrap().1;
            if end < j {
                let ys = &self.ys;
                acc *= eval_factor(&self.plan[done], |l| &ys[l], probs);
                done += 1;
            } else {
                break;
            }
        }
        if acc == 0.0 {
            return 0.0;
        }
        if j > self.depth {
            return acc * self.leaf(done);
        }
        let (bj, dj) = constraint_step(self.info, &self.ctx.nb, j, &self.sites, &self.b, &self.d);
        self.b[j] = bj;
        self.d[j] = dj;
        let free = bj & !dj;
        if free == 0 {
            return 0.0;
        }
        let mut parts = Vec::new();
        for i in 0..self.ctx.field.num_sites() {
            if free >> i & 1 == 0 {
                continue;
            }
            self.sites[j] = i;
            self.ys[j] = self.ctx.field.x(i).to_vec();
            parts.push(self.descend(j + 1, acc, done));
        }
        pairwise_sum(&parts)
    }

    fn leaf(&mut self, done: usize) -> f64 {
        let field = self.ctx.field;
        let probs = field.probs();
        let k = self.k;
        match self.kind {
            SumKind::S => {}
            SumKind::T => {
                let w = field.w_excluding(self.d[k]);
                let g = self.deriv.unwrap();
                let y: Vec<f64> =
                    self.ys[k].iter().zip(&w).map(|(x, wv)| x * g.eval(*wv)).collect();
                self.ys[k] = y;
            }
            SumKind::U => {
                let (bk, dk) =
                    constraint_step(self.info, &self.ctx.nb, k, &self.sites, &self.b, &self.d);
                let g = self.deriv.unwrap();
                let wb = field.w_excluding(bk);
                let wd = field.w_excluding(dk);
                let u = self.info[k].u;
                let y: Vec<f64> = if u == k {
                    wb.iter().zip(&wd).map(|(a, b)| g.eval(*a) - g.eval(*b)).collect()
                } else {
                    let c = (k - u) as f64;
                    assert!(c > 0.0, "integral branch requires u(k) < k");
                    wb.iter()
                        .zip(&wd)
                        .map(|(a, dv)| {
                            let delta = dv - a;
                            let tay = g.taylor(*a);
                            let mut s = 0.0;
                            let mut pw = 1.0;
                            let mut fact = 1.0;
                            for (m, gm) in tay.iter().enumerate() {
                                if m > 0 {
                                    pw *= delta;
                                    fact *= m as f64;
                                }
                                s += gm * pw / fact * c / (c + m as f64);
                            }
                            s - g.eval(*dv)
                        })
                        .collect()
                };
                self.ys[k] = y;
            }
        }
        let mut acc = 1.0;
        for factor in &self.plan[done..] {
            let ys = &self.ys;
            acc *= eval_factor(factor, |l| &ys[l], probs);
        }
        acc
    }
}

/// Outcome of one identity check.
#[derive(Debug, Clone, PartialEq)]
pub struct IdentityResult {
    pub identity: String,
    pub lhs: f64,
    pub rhs: f64,
    pub residual: f64,
    /// Number of genogram sums (or scalar terms) entering the two sides.
    pub terms: usize,
}

impl IdentityResult {
    fn new(identity: impl Into<String>, lhs: f64, rhs: f64, terms: usize) -> Self {
        Self { identity: identity.into(), lhs, rhs, residual: (lhs - rhs).abs(), terms }
    }
}

fn r64(r: &Rational64) -> f64 {
    crate::genogram::rational_to_f64(r)
}

fn fact(n: usize) -> f64 {
    factorial(n as u64) as f64
}

/// Identity checks on one field.
pub struct IdentityChecker<'a> {
    pub ctx: SumContext<'a>,
    pub id_cap: i64,
}

impl<'a> IdentityChecker<'a> {
    /// `id_cap` defaults to `|T|`, where the neighborhoods saturate.
    pub fn new(field: &'a ExactField, m: i64, order: SiteOrder) -> Result<Self> {
        let id_cap = field.num_sites() as i64;
        Ok(Self { ctx: SumContext::new(field, m, order)?, id_cap })
    }

    fn field(&self) -> &ExactField {
        self.ctx.field
    }

    /// `E[f^{(j)}(W)]`.
    pub fn ef(&self, f: &PolyFn, j: usize) -> f64 {
        self.field().expect_poly(&f.derivative(j))
    }

    /// `E[W f(W)]`.
    pub fn ewf(&self, f: &PolyFn) -> f64 {
        let w = self.field().w();
        w.iter().zip(self.field().probs()).map(|(x, p)| x * f.eval(*x) * p).sum()
    }

    /// `mu_{k+1} = sum_{j=1}^{k-1} C(k,j) kappa_{j+1} mu_{k-j} + kappa_{k+1}`.
    pub fn cumulant_identity(&self, k: usize) -> Result<IdentityResult> {
        if k == 0 || k > 6 {
            return Err(Error::OrderTooLarge { order: k, max: 6 });
        }
        let mu = self.field().moments_w(k + 1);
        let kappa = cumulants_from_moments(&mu)?;
        let mut rhs = kappa[k];
        for j in 1..k {
            rhs += binomial(k as u64, j as u64) as f64 * kappa[j] * mu[k - j];
        }
        Ok(IdentityResult::new(format!("cumulant-id(k={k})"), mu[k + 1], rhs, k + 1))
    }

    /// `T_f(G) - S(G) E f^{(l-1)}(W)` against the one-vertex extensions.
    pub fn step1(&self, g: &Genogram, f: &PolyFn) -> Result<IdentityResult> {
        let l = g.order();
        let lhs = self.ctx.t(g, f) - self.ctx.s(g) * self.ef(f, l - 1);
        let (last, anc) = enumerate_extensions(g, self.id_cap);
        let mut parts = Vec::new();
        for h in &last {
            parts.push(-self.ctx.u(h, f));
        }
        for h in &anc {
            parts.push(self.ctx.u(h, f));
        }
        Ok(IdentityResult::new(
            format!("step1({g})"),
            lhs,
            pairwise_sum(&parts),
            2 + last.len() + anc.len(),
        ))
    }

    /// Taylor expansion of `U_f(G)` along a glued negative path (`|G| >= 2`).
    pub fn step2(&self, g: &Genogram, k: usize, f: &PolyFn) -> Result<IdentityResult> {
        let l = g.order();
        if l < 2 {
            return invalid("U_f needs a genogram of order at least 2");
        }
        let c = l - g.u(l);
        let lhs = self.ctx.u(g, f);
        let mut parts = Vec::new();
        for j in 0..=k {
            let sign = if (j + 1) % 2 == 0 { 1.0 } else { -1.0 };
            let coef = sign * fact(c) / fact(j + 1 + c);
            parts.push(coef * self.ctx.t(&g.grow_lambda(j)?, f));
        }
        let sign = if (k + 1) % 2 == 0 { 1.0 } else { -1.0 };
        let coef = sign * fact(c) / fact(k + 1 + c);
        parts.push(coef * self.ctx.u(&g.grow_lambda(k + 1)?, f));
        Ok(IdentityResult::new(format!("step2({g},k={k})"), lhs, pairwise_sum(&parts), k + 3))
    }

    /// Expansion of `T_f(G)` into `S(H) E f^{(|H|-1)}` terms and `U_f` remainders.
    pub fn expansion(&self, g: &Genogram, k: usize, f: &PolyFn) -> Result<IdentityResult> {
        if k < g.order() {
            return invalid("k must be at least |G|");
        }
        let lhs = self.ctx.t(g, f);
        let mut parts = Vec::new();
        let mut terms = 1;
        for m in g.order()..=k {
            for h in extensions_to_order(g, m, self.id_cap) {
                let (a, _) = coeffs(&h, g)?;
                parts.push(r64(&a) * self.ctx.s(&h) * self.ef(f, m - 1));
                terms += 1;
            }
        }
        for h in extensions_to_order(g, k + 1, self.id_cap) {
            let (_, b) = coeffs(&h, g)?;
            parts.push(r64(&b) * self.ctx.u(&h, f));
            terms += 1;
        }
        Ok(IdentityResult::new(format!("expansion({g},k={k})"), lhs, pairwise_sum(&parts), terms))
    }

    /// `E[W f(W)] = sum_{j=1}^k kappa_{j+1}/j! E f^{(j)} + sum_{G(k+2)} b_H U_f(H)`.
    pub fn wfw1(&self, k: usize, f: &PolyFn) -> Result<IdentityResult> {
        if k < 2 {
            return invalid("k must be at least 2");
        }
        let kappa = exact_cumulants(self.field(), k + 1)?;
        let mut parts: Vec<f64> = (1..=k).map(|j| kappa[j] / fact(j) * self.ef(f, j)).collect();
        let hs = enumerate(k + 2, self.id_cap, GenogramClass::All)?;
        for h in &hs {
            parts.push(r64(&coeff_b(h)) * self.ctx.u(h, f));
        }
        Ok(IdentityResult::new(format!("wfw1(k={k})"), self.ewf(f), pairwise_sum(&parts), k + hs.len()))
    }

    /// `kappa~_{k+1} = kappa_{k+1} + sum_{G_0(k+1)} k! b_H/(k+2-u(k+1)) S(H)`.
    pub fn kappa_tilde(&self, k: usize) -> Result<f64> {
        let kappa = exact_cumulants(self.field(), k + 1)?;
        let mut parts = vec![kappa[k]];
        for h in enumerate(k + 1, self.id_cap, GenogramClass::G0)? {
            let c = fact(k) * r64(&coeff_b(&h)) / (k + 2 - h.u(k + 1)) as f64;
            parts.push(c * self.ctx.s(&h));
        }
        Ok(pairwise_sum(&parts))
    }

    /// Second form with `kappa~_{k+1}` and remainders over
    /// `P_0(k+2) ⊔ P_1(k+2) ⊔ G_0(k+1)`; returns the check and `kappa~`.
    pub fn wfw2(&self, k: usize, f: &PolyFn) -> Result<(IdentityResult, f64)> {
        if k < 2 {
            return invalid("k must be at least 2");
        }
        let kappa = exact_cumulants(self.field(), k + 1)?;
        let kt = self.kappa_tilde(k)?;
        let mut parts: Vec<f64> =
            (1..k).map(|j| kappa[j] / fact(j) * self.ef(f, j)).collect();
        parts.push(kt / fact(k) * self.ef(f, k));
        let mut hs = enumerate(k + 2, self.id_cap, GenogramClass::P0)?;
        hs.extend(enumerate(k + 2, self.id_cap, GenogramClass::P1)?);
        hs.extend(enumerate(k + 1, self.id_cap, GenogramClass::G0)?);
        for h in &hs {
            parts.push(r64(&coeff_b(h)) * self.ctx.u(h, f));
        }
        Ok((
            IdentityResult::new(format!("wfw2(k={k})"), self.ewf(f), pairwise_sum(&parts), k + hs.len()),
            kt,
        ))
    }

    /// `Q_j = -sum_{G(j)} b_H/(j+1-u(j,H)) S(H)` (`j >= 2`); `Q_1 = S(root)`.
    pub fn q_coefficient(&self, j: usize) -> Result<f64> {
        if j == 1 {
            return Ok(self.ctx.s(&Genogram::root()));
        }
        let mut parts = Vec::new();
        for h in enumerate(j, self.id_cap, GenogramClass::All)? {
            let c = -r64(&coeff_b(&h)) / (j + 1 - h.u(j)) as f64;
            parts.push(c * self.ctx.s(&h));
        }
        Ok(pairwise_sum(&parts))
    }

    /// `Q_j` from the prefix coefficients `a_{H,root}` instead of `b_H`.
    pub fn q_coefficient_from_a(&self, j: usize) -> Result<f64> {
        let root = Genogram::root();
        let mut parts = Vec::new();
        for h in extensions_to_order(&root, j, self.id_cap) {
            let (a, _) = coeffs(&h, &root)?;
            parts.push(r64(&a) * self.ctx.s(&h));
        }
        Ok(pairwise_sum(&parts))
    }

    /// Solves `E[W f(W)] - remainder = sum_{j=1}^{k+1} Q_j E f^{(j-1)}(W)` for
    /// `Q` using the `k + 1` test functions in `basis` (degrees `0..=k`).
    pub fn q_from_basis(&self, k: usize, basis: &[PolyFn]) -> Result<Vec<f64>> {
        if basis.len() != k + 1 {
            return invalid(format!("need {} basis functions", k + 1));
        }
        let hs = enumerate(k + 2, self.id_cap, GenogramClass::All)?;
        let n = k + 1;
        let mut a = vec![vec![0.0; n]; n];
        let mut rhs = vec![0.0; n];
        for (r, f) in basis.iter().enumerate() {
            let rem: f64 = pairwise_sum(
                &hs.iter().map(|h| r64(&coeff_b(h)) * self.ctx.u(h, f)).collect::<Vec<_>>(),
            );
            rhs[r] = self.ewf(f) - rem;
            for c in 0..n {
                a[r][c] = self.ef(f, c);
            }
        }
        solve(a, rhs)
    }
}

/// Test function used by the identity grid: a fixed quartic.
pub fn grid_test_function() -> PolyFn {
    PolyFn::new(vec![0.3, -0.7, 0.5, 0.2, -0.1]).expect("degree 4")
}

fn truncate(f: &PolyFn, deg: usize) -> PolyFn {
    PolyFn { coeffs: f.coeffs.iter().take(deg + 1).copied().collect() }
}

/// Probabilists' Hermite polynomials `He_0..He_k` as [`PolyFn`]s.
pub fn hermite_basis(k: usize) -> Vec<PolyFn> {
    let mut out: Vec<Vec<f64>> = vec![vec![1.0], vec![0.0, 1.0]];
    for n in 1..k {
        let mut next = vec![0.0; n + 2];
        for (i, c) in out[n].iter().enumerate() {
            next[i + 1] += c;
        }
        for (i, c) in out[n - 1].iter().enumerate() {
            next[i] -= n as f64 * c;
        }
        out.push(next);
    }
    out.truncate(k + 1);
    out.into_iter().map(|c| PolyFn { coeffs: c }).collect()
}

/// Full verification grid on one field: cumulant identity (`k <= 6`), STEP1,
/// STEP2 and the expansion for every `|G| <= 2` and `k <= kmax`, both `E[Wf(W)]`
/// forms for `k = 2..=kmax`, vanishing remainders, and `Q` recovery by two
/// routes and two bases.
pub fn verification_grid(checker: &IdentityChecker<'_>, f: &PolyFn, kmax: usize) -> Result<Vec<IdentityResult>> {
    let mut out = Vec::new();
    for k in 2..=6 {
        out.push(checker.cumulant_identity(k)?);
    }
    let cap = checker.id_cap;
    let mut small = enumerate(1, cap, GenogramClass::All)?;
    small.extend(enumerate(2, cap, GenogramClass::All)?);
    for g in &small {
        out.push(checker.step1(g, f)?);
        for k in g.order()..=kmax {
            out.push(checker.expansion(g, k, f)?);
        }
        if g.order() >= 2 {
            for k in 0..=kmax {
                out.push(checker.step2(g, k, f)?);
            }
        }
    }
    let kappa = exact_cumulants(checker.field(), kmax + 1)?;
    for k in 2..=kmax {
        out.push(checker.wfw1(k, f)?);
        out.push(checker.wfw2(k, f)?.0);
        let fk = truncate(f, k);
        let hs = enumerate(k + 2, cap, GenogramClass::All)?;
        let worst = hs.iter().map(|h| checker.ctx.u(h, &fk).abs()).fold(0.0, f64::max);
        out.push(IdentityResult::new(format!("vanish(k={k})"), worst, 0.0, hs.len()));
    }
    for j in 1..=kmax {
        let want = kappa[j] / fact(j);
        out.push(IdentityResult::new(format!("q-recovery(j={})", j + 1), checker.q_coefficient(j + 1)?, want, 1));
        out.push(IdentityResult::new(
            format!("q-prefix(j={})", j + 1),
            checker.q_coefficient_from_a(j + 1)?,
            want,
            1,
        ));
    }
    let mono: Vec<PolyFn> = (0..=kmax).map(|n| PolyFn::monomial(n)).collect::<Result<_>>()?;
    let q_mono = checker.q_from_basis(kmax, &mono)?;
    let q_herm = checker.q_from_basis(kmax, &hermite_basis(kmax))?;
    for (j, (a, b)) in q_mono.iter().zip(&q_herm).enumerate() {
        out.push(IdentityResult::new(format!("q-basis(j={})", j + 1), *a, *b, 2));
    }
    Ok(out)
}

/// Tolerance attached to a grid entry.
pub fn grid_tolerance(identity: &str) -> f64 {
    if identity.starts_with("cumulant-id") || identity.starts_with("vanish") {
        1e-12
    } else if identity.starts_with("q-") {
        1e-10
    } else {
        1e-9
    }
}

/// One size of an Edgeworth comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EdgeworthRow {
    pub n: usize,
    /// `E h(W_n) - N h`.
    pub baseline: f64,
    pub edgeworth: f64,
    /// `|E h(W_n) - N h - edgeworth_sum|`.
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EdgeworthLadder {
    pub rows: Vec<EdgeworthRow>,
    pub baseline_slope: f64,
    pub residual_slope: f64,
    /// `baseline_slope - residual_slope`; infinite when every residual is
    /// below `1e-12` times its baseline (the remainder vanishes identically).
    pub slope_gap: f64,
}

fn log_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let m = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / m;
    let my = ys.iter().sum::<f64>() / m;
    xs.iter().zip(ys).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / xs.iter().map(|a| (a - mx).powi(2)).sum::<f64>()
}

/// Exact `E h(W_n) - N h` on iid lines of each size against `edgeworth_sum(k)`.
pub fn edgeworth_ladder(
    innovation: &DiscreteDistribution,
    sizes: &[usize],
    h: &MonomialPoly,
    k: usize,
) -> Result<EdgeworthLadder> {
    if sizes.len() < 2 {
        return invalid("need at least two sizes");
    }
    let hp = HermitePoly::from_monomial(h)?;
    let hf = PolyFn::from_monomial(h)?;
    let nh: f64 = crate::scalar::Scalar::from_rational(&hp.gaussian_mean());
    let mut rows = Vec::new();
    for &n in sizes {
        let f = ExactField::iid_line(n, innovation)?;
        let mut kappa = exact_cumulants(&f, k + 1)?;
        kappa[0] = 0.0;
        kappa[1] = 1.0;
        let e = edgeworth_sum(&kappa, &hp, k)?;
        let eh = f.expect_poly(&hf);
        rows.push(EdgeworthRow { n, baseline: eh - nh, edgeworth: e, residual: (eh - nh - e).abs() });
    }
    if rows.iter().any(|r| r.baseline == 0.0) {
        return Err(Error::Degenerate("E h(W_n) equals N h at some size".into()));
    }
    let xs: Vec<f64> = sizes.iter().map(|&n| (n as f64).ln()).collect();
    let base: Vec<f64> = rows.iter().map(|r| r.baseline.abs().ln()).collect();
    let res: Vec<f64> = rows.iter().map(|r| r.residual.max(f64::MIN_POSITIVE).ln()).collect();
    let baseline_slope = log_slope(&xs, &base);
    let residual_slope = log_slope(&xs, &res);
    let vanishes = rows.iter().all(|r| r.residual <= 1e-12 * r.baseline.abs());
    let slope_gap = if vanishes { f64::INFINITY } else { baseline_slope - residual_slope };
    Ok(EdgeworthLadder { rows, baseline_slope, residual_slope, slope_gap })
}

/// Writes `n,baseline,edgeworth,residual` rows.
pub fn write_edgeworth_csv<W: Write>(w: W, rows: &[EdgeworthRow]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["n", "baseline", "edgeworth", "residual"])?;
    for r in rows {
        wr.write_record([
            r.n.to_string(),
            format!("{:.17e}", r.baseline),
            format!("{:.17e}", r.edgeworth),
            format!("{:.6e}", r.residual),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Result<Vec<f64>> {
    let n = b.len();
    for c in 0..n {
        let piv = (c..n).max_by(|&x, &y| a[x][c].abs().total_cmp(&a[y][c].abs())).unwrap();
        if a[piv][c].abs() < 1e-300 {
            return Err(Error::Degenerate("singular basis system".into()));
        }
        a.swap(c, piv);
        b.swap(c, piv);
        for r in c + 1..n {
            let f = a[r][c] / a[c][c];
            for cc in c..n {
                a[r][cc] -= f * a[c][cc];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let mut s = b[r];
        for c in r + 1..n {
            s -= a[r][c] * x[c];
        }
        x[r] = s / a[r][r];
    }
    Ok(x)
}

/// Writes `identity,residual,terms` rows.
pub fn write_results_csv<W: Write>(w: W, results: &[IdentityResult]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["identity", "residual", "terms"])?;
    for r in results {
        wr.write_record([r.identity.clone(), format!("{:.6e}", r.residual), r.terms.to_string()])?;
    }
    wr.flush()?;
    Ok(())
}
