//! Genograms: rooted trees with integer identifiers under the compatible
//! (depth-first) labeling, their growth operations, classes and expansion
//! coefficients.

use std::fmt;
use std::str::FromStr;

use num_rational::Rational64;
use num_traits::{One, Zero};

use crate::error::{invalid, Error, Result};

/// Reason a parent/identifier list fails to describe a labeled genogram.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    /// Parent list length is not `k - 1`.
    Shape,
    /// `p(j)` is not in `1..j`.
    ParentRange { label: usize },
    /// Depth-first rule fails at `j + 1`.
    DepthFirst { label: usize },
    /// `s_1 != 0`.
    RootIdentifier,
    /// `s_j < -1`.
    IdentifierRange { label: usize },
    /// Negative vertex attached to the root.
    NegativeChildOfRoot { label: usize },
    /// Negative vertex with a sibling.
    NegativeWithSibling { label: usize },
    /// Siblings `j < h` with `s_j <= s_h`.
    SiblingOrder { first: usize, second: usize },
}

/// All violated conditions for `p(2..k)` and `s(1..k)`.
pub fn check(parents: &[usize], ids: &[i64]) -> Vec<Violation> {
    let k = ids.len();
    let mut out = Vec::new();
    if k == 0 || parents.len() + 1 != k {
        out.push(Violation::Shape);
        return out;
    }
    // p[j] for 1-based j; p[1] = 0
    let mut p = vec![0usize; k + 1];
    for (i, &v) in parents.iter().enumerate() {
        p[i + 2] = v;
    }
    let mut range_ok = true;
    for j in 2..=k {
        if p[j] < 1 || p[j] >= j {
            out.push(Violation::ParentRange { label: j });
            range_ok = false;
        }
    }
    if range_ok {
        for j in 1..k {
            let m = (j + 1..=k).filter(|&l| p[l] <= j).map(|l| p[l]).max();
            if m != Some(p[j + 1]) {
                out.push(Violation::DepthFirst { label: j + 1 });
            }
        }
    }
    if ids[0] != 0 {
        out.push(Violation::RootIdentifier);
    }
    for j in 1..=k {
        if ids[j - 1] < -1 {
            out.push(Violation::IdentifierRange { label: j });
        }
    }
    for j in 2..=k {
        if ids[j - 1] == -1 {
            if p[j] == 1 {
                out.push(Violation::NegativeChildOfRoot { label: j });
            } else if (2..=k).any(|h| h != j && p[h] == p[j]) {
                out.push(Violation::NegativeWithSibling { label: j });
            }
        }
    }
    for j in 2..=k {
        for h in j + 1..=k {
            if p[j] == p[h] && ids[j - 1] <= ids[h - 1] {
                out.push(Violation::SiblingOrder { first: j, second: h });
            }
        }
    }
    out
}

/// True iff [`check`] reports no violation.
pub fn validate(parents: &[usize], ids: &[i64]) -> bool {
    check(parents, ids).is_empty()
}

/// Per-label indices of a genogram.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelIndices {
    pub parent: usize,
    pub ancestors: Vec<usize>,
    pub progenitor: usize,
    pub u: usize,
}

/// Labeled genogram; labels are 1-based.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Genogram {
    // p(2..k)
    parents: Vec<usize>,
    ids: Vec<i64>,
}

impl Genogram {
    pub fn new(parents: Vec<usize>, ids: Vec<i64>) -> Result<Self> {
        let v = check(&parents, &ids);
        if !v.is_empty() {
            return invalid(format!("not a genogram: {v:?}"));
        }
        Ok(Self { parents, ids })
    }

    pub fn root() -> Self {
        Self { parents: Vec::new(), ids: vec![0] }
    }

    pub fn order(&self) -> usize {
        self.ids.len()
    }

    pub fn parents(&self) -> &[usize] {
        &self.parents
    }

    pub fn ids(&self) -> &[i64] {
        &self.ids
    }

    /// `p(j)`, with `p(1) = 0`.
    pub fn parent(&self, j: usize) -> usize {
        if j <= 1 {
            0
        } else {
            self.parents[j - 2]
        }
    }

    pub fn id(&self, j: usize) -> i64 {
        self.ids[j - 1]
    }

    pub fn children(&self, j: usize) -> Vec<usize> {
        (2..=self.order()).filter(|&h| self.parent(h) == j).collect()
    }

    /// Ancestor labels of `j`, nearest first.
    pub fn ancestors(&self, j: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut v = self.parent(j);
        while v >= 1 {
            out.push(v);
            v = self.parent(v);
        }
        out
    }

    pub fn is_ancestor(&self, a: usize, j: usize) -> bool {
        self.ancestors(j).contains(&a)
    }

    /// `g(j)`: largest ancestor label with positive identifier, else 1.
    pub fn progenitor(&self, j: usize) -> usize {
        self.ancestors(j).into_iter().filter(|&l| self.id(l) >= 1).max().unwrap_or(1)
    }

    /// `u(j)`: largest label in `{j} ∪ A(j)` with non-negative identifier.
    pub fn u(&self, j: usize) -> usize {
        std::iter::once(j)
            .chain(self.ancestors(j))
            .filter(|&l| self.id(l) >= 0)
            .max()
            .unwrap_or(1)
    }

    pub fn indices(&self, j: usize) -> Result<LabelIndices> {
        if j == 0 || j > self.order() {
            return invalid(format!("label {j} out of range 1..={}", self.order()));
        }
        let mut ancestors = self.ancestors(j);
        ancestors.sort_unstable();
        Ok(LabelIndices {
            parent: self.parent(j),
            ancestors,
            progenitor: self.progenitor(j),
            u: self.u(j),
        })
    }

    /// `q_0 = max{j : j = 1 or p(j) != j - 1}`.
    pub fn q0(&self) -> usize {
        (1..=self.order()).filter(|&j| j == 1 || self.parent(j) != j - 1).max().unwrap_or(1)
    }

    /// Branch heads `q_1 < .. < q_w`: labels after `q_0` with non-negative identifier.
    pub fn branch_heads(&self) -> Vec<usize> {
        (self.q0() + 1..=self.order()).filter(|&t| self.id(t) >= 0).collect()
    }

    /// Leaf count `gamma`.
    pub fn leaves(&self) -> usize {
        (1..=self.order()).filter(|&j| !self.parents.contains(&j)).count()
    }

    /// Negative-vertex count `tau`.
    pub fn negatives(&self) -> usize {
        self.ids.iter().filter(|&&s| s < 0).count()
    }

    pub fn positives(&self) -> usize {
        self.ids.iter().filter(|&&s| s > 0).count()
    }

    /// Induced sub-genogram on labels `1..=m`.
    pub fn prefix(&self, m: usize) -> Self {
        Self { parents: self.parents[..m.saturating_sub(1)].to_vec(), ids: self.ids[..m].to_vec() }
    }

    pub fn has_prefix(&self, g: &Genogram) -> bool {
        g.order() <= self.order() && self.prefix(g.order()) == *g
    }

    /// Smallest identifier among the children of `j`, if any.
    fn min_child_id(&self, j: usize) -> Option<i64> {
        self.children(j).into_iter().map(|c| self.id(c)).min()
    }

    /// Operation `Omega[j, s]`: new non-negative child of `v[j]`.
    pub fn grow_omega(&self, j: usize, s: i64) -> Result<Self> {
        let k = self.order();
        if s < 0 {
            return Err(Error::InvalidInput(format!("identifier {s} must be non-negative")));
        }
        if j == 0 || j > k {
            return Err(Error::InvalidInput(format!("growing vertex {j} out of range")));
        }
        if j != k && !self.is_ancestor(j, k) {
            return Err(Error::InvalidInput(format!(
                "growing vertex {j} is neither v[{k}] nor one of its ancestors"
            )));
        }
        if let Some(m) = self.min_child_id(j) {
            if m < 1 {
                return Err(Error::InvalidInput(format!(
                    "v[{j}] already has a child with identifier {m} < 1"
                )));
            }
            if s >= m {
                return Err(Error::InvalidInput(format!(
                    "identifier {s} must be below the sibling minimum {m}"
                )));
            }
        }
        let mut parents = self.parents.clone();
        parents.push(j);
        let mut ids = self.ids.clone();
        ids.push(s);
        Ok(Self { parents, ids })
    }

    /// Operation `Lambda[h]`: path of `h` negative vertices below `v[k]`.
    pub fn grow_lambda(&self, h: usize) -> Result<Self> {
        if h == 0 {
            return Ok(self.clone());
        }
        if self.order() == 1 {
            return Err(Error::InvalidInput("a negative vertex cannot be a child of the root".into()));
        }
        let mut out = self.clone();
        for _ in 0..h {
            let k = out.order();
            out.parents.push(k);
            out.ids.push(-1);
        }
        Ok(out)
    }
}

impl fmt::Display for Genogram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let p: Vec<String> = self.parents.iter().map(|v| v.to_string()).collect();
        let s: Vec<String> = self.ids.iter().map(|v| v.to_string()).collect();
        write!(f, "{};{};{}", self.order(), p.join(","), s.join(","))
    }
}

impl FromStr for Genogram {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let parts: Vec<&str> = text.trim().split(';').collect();
        if parts.len() != 3 {
            return Err(Error::Parse(format!("expected k;parents;ids, got {text:?}")));
        }
        let k: usize = parts[0].parse().map_err(|_| Error::Parse(format!("bad order {:?}", parts[0])))?;
        let list = |s: &str| -> Result<Vec<i64>> {
            if s.is_empty() {
                return Ok(Vec::new());
            }
            s.split(',')
                .map(|v| v.trim().parse::<i64>().map_err(|_| Error::Parse(format!("bad entry {v:?}"))))
                .collect()
        };
        let parents = list(parts[1])?;
        if parents.iter().any(|&v| v < 0) {
            return Err(Error::Parse("negative parent label".into()));
        }
        let ids = list(parts[2])?;
        if ids.len() != k {
            return Err(Error::Parse(format!("order {k} but {} identifiers", ids.len())));
        }
        Genogram::new(parents.into_iter().map(|v| v as usize).collect(), ids)
    }
}

/// `(a_{H,G}, b_{H,G})` for a prefix sub-genogram `G` of `H`.
pub fn coeffs(h: &Genogram, g: &Genogram) -> Result<(Rational64, Rational64)> {
    if !h.has_prefix(g) {
        return invalid(format!("{g} is not a prefix sub-genogram of {h}"));
    }
    let (kh, kg) = (h.order(), g.order());
    let e = h.leaves() as i64 - g.leaves() as i64 + h.negatives() as i64 - g.negatives() as i64;
    let sign = |e: i64| if e.rem_euclid(2) == 0 { Rational64::one() } else { -Rational64::one() };
    let factor = |j: usize| Rational64::new(1, (j + 1 - h.u(j)) as i64);
    let a = if kh == kg {
        Rational64::one()
    } else {
        (kg + 1..=kh).fold(sign(e), |acc, j| acc * factor(j))
    };
    let b = (kg + 1..kh).fold(sign(e + 1), |acc, j| acc * factor(j));
    Ok((a, b))
}

/// `b_H = (-1)^{gamma + tau} prod_{j=2}^{|H|-1} 1/(j+1-u(j))`.
pub fn coeff_b(h: &Genogram) -> Rational64 {
    let e = h.leaves() + h.negatives();
    let s = if e % 2 == 0 { Rational64::one() } else { -Rational64::one() };
    (2..h.order()).fold(s, |acc, j| acc * Rational64::new(1, (j + 1 - h.u(j)) as i64))
}

/// Genogram classes used by the remainder bookkeeping.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GenogramClass {
    /// All genograms.
    All,
    /// At least one positive vertex.
    G0,
    /// No positive vertex.
    P0,
    /// Only `v[k]` is positive.
    P1,
}

impl GenogramClass {
    pub fn contains(&self, g: &Genogram) -> bool {
        let k = g.order();
        match self {
            GenogramClass::All => true,
            GenogramClass::G0 => g.positives() > 0,
            GenogramClass::P0 => g.positives() == 0,
            GenogramClass::P1 => g.id(k) >= 1 && g.positives() == 1,
        }
    }
}

pub const MAX_ENUM_ORDER: usize = 7;
pub const MAX_ID_CAP: i64 = 64;

fn grow_all(g: &Genogram, id_cap: i64) -> Vec<Genogram> {
    let k = g.order();
    let mut out = Vec::new();
    let mut growing = vec![k];
    growing.extend(g.ancestors(k));
    for j in growing {
        let hi = match g.min_child_id(j) {
            None => id_cap,
            Some(m) if m >= 1 => (m - 1).min(id_cap),
            Some(_) => continue,
        };
        for s in 0..=hi {
            out.push(g.grow_omega(j, s).expect("admissible growth"));
        }
    }
    if k >= 2 {
        out.push(g.grow_lambda(1).expect("admissible growth"));
    }
    out
}

/// Every genogram of order `k` with identifiers `<= id_cap` in the class, in
/// lexicographic order of (parent list, identifier list).
pub fn enumerate(k: usize, id_cap: i64, class: GenogramClass) -> Result<Vec<Genogram>> {
    if k == 0 || k > MAX_ENUM_ORDER {
        return Err(Error::OrderTooLarge { order: k, max: MAX_ENUM_ORDER });
    }
    if !(0..=MAX_ID_CAP).contains(&id_cap) {
        return invalid(format!("id_cap must lie in 0..={MAX_ID_CAP}"));
    }
    let mut layer = vec![Genogram::root()];
    for _ in 1..k {
        layer = layer.iter().flat_map(|g| grow_all(g, id_cap)).collect();
    }
    layer.retain(|g| class.contains(g));
    layer.sort();
    Ok(layer)
}

/// One-vertex extensions with non-negative new identifier (`<= id_cap`),
/// split into (new parent is `v[|G|]`, new parent is a proper ancestor).
pub fn enumerate_extensions(g: &Genogram, id_cap: i64) -> (Vec<Genogram>, Vec<Genogram>) {
    let k = g.order();
    let mut at_last = Vec::new();
    let mut at_anc = Vec::new();
    for h in grow_all(g, id_cap) {
        if h.id(k + 1) < 0 {
            continue;
        }
        if h.parent(k + 1) == k {
            at_last.push(h);
        } else {
            at_anc.push(h);
        }
    }
    at_last.sort();
    at_anc.sort();
    (at_last, at_anc)
}

/// All prefix-extensions `H ⊇ G` with `|H| = m` and non-negative `s_{|G|+1}`.
pub fn extensions_to_order(g: &Genogram, m: usize, id_cap: i64) -> Vec<Genogram> {
    if m <= g.order() {
        return if m == g.order() { vec![g.clone()] } else { Vec::new() };
    }
    let (a, b) = enumerate_extensions(g, id_cap);
    let mut layer: Vec<Genogram> = a.into_iter().chain(b).collect();
    for _ in g.order() + 1..m {
        layer = layer.iter().flat_map(|h| grow_all(h, id_cap)).collect();
    }
    layer.sort();
    layer
}

pub(crate) fn rational_to_f64(r: &Rational64) -> f64 {
    if r.is_zero() {
        0.0
    } else {
        *r.numer() as f64 / *r.denom() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn g1() -> Genogram {
        Genogram::new(vec![1, 1, 1, 4, 5, 5], vec![0, 2, 1, 0, -1, 2, 0]).unwrap()
    }

    pub(crate) fn g2() -> Genogram {
        Genogram::new(vec![1, 2, 2, 4, 4, 6], vec![0, 0, 5, 3, 2, 1, -1]).unwrap()
    }

    #[test]
    fn worked_examples_validate() {
        assert!(validate(g1().parents(), g1().ids()));
        assert!(validate(g2().parents(), g2().ids()));
        assert_eq!(check(&[1], &[0, -1]), vec![Violation::NegativeChildOfRoot { label: 2 }]);
        assert_eq!(
            check(&[1, 1], &[0, 2, 2]),
            vec![Violation::SiblingOrder { first: 2, second: 3 }]
        );
        assert!(!validate(&[1, 2, 1, 2], &[0, 1, 0, 0, 0]));
    }

    #[test]
    fn indices() {
        let g = g2();
        assert_eq!(g.progenitor(5), 4);
        assert_eq!(g.progenitor(6), 4);
        assert_eq!(g.progenitor(7), 6);
        let g = g1();
        for j in 1..=7 {
            assert_eq!(g.u(j), if j == 5 { 4 } else { j });
        }
        let r = g.indices(1).unwrap();
        assert!(r.ancestors.is_empty());
        assert_eq!(r.progenitor, 1);
        assert!(g.indices(8).is_err());
        assert_eq!(g1().q0(), 7);
        assert!(g1().branch_heads().is_empty());
        assert_eq!(g2().q0(), 6);
    }

    #[test]
    fn growth() {
        let g = g2();
        for s in 0..=2 {
            assert!(g.grow_omega(2, s).is_ok());
        }
        assert!(g.grow_omega(2, 3).is_err());
        assert!(g.grow_omega(4, 0).is_ok());
        assert!(g.grow_omega(4, 1).is_err());
        assert!(g.grow_omega(6, 0).is_err());
        assert!(g.grow_omega(7, 40).is_ok());
        assert!(g.grow_omega(3, 0).is_err());
        let chain = Genogram::root().grow_omega(1, 0).unwrap();
        assert_eq!(chain.to_string(), "2;1;0,0");
        assert_eq!(g1().grow_lambda(0).unwrap(), g1());
        let h = g1().grow_lambda(2).unwrap();
        assert_eq!(h.order(), 9);
        assert_eq!(h.negatives(), g1().negatives() + 2);
        assert!(validate(h.parents(), h.ids()));
        assert!(Genogram::root().grow_lambda(1).is_err());
    }

    #[test]
    fn text_form() {
        let g = g1();
        let t = g.to_string();
        assert_eq!(t, "7;1,1,1,4,5,5;0,2,1,0,-1,2,0");
        assert_eq!(t.parse::<Genogram>().unwrap(), g);
        assert_eq!("1;;0".parse::<Genogram>().unwrap(), Genogram::root());
        assert!("2;1;0,-1".parse::<Genogram>().is_err());
    }

    #[test]
    fn coefficient_examples() {
        let g = g1();
        assert_eq!(coeffs(&g, &g).unwrap().0, Rational64::one());
        let h = g.grow_omega(7, 0).unwrap();
        let (a, b) = coeffs(&h, &g).unwrap();
        assert_eq!(b, -Rational64::one());
        assert_eq!(a, -b / Rational64::from_integer((9 - h.u(8)) as i64));
        assert!(coeffs(&g, &h).is_err());
    }

    #[test]
    fn enumeration_examples() {
        let shapes: std::collections::BTreeSet<Vec<usize>> = enumerate(3, 3, GenogramClass::All)
            .unwrap()
            .into_iter()
            .map(|g| g.parents().to_vec())
            .collect();
        assert_eq!(shapes.len(), 2);
        assert_eq!(enumerate(2, 5, GenogramClass::P0).unwrap().len(), 1);
        assert_eq!(enumerate(2, 5, GenogramClass::G0).unwrap().len(), 5);
        assert!(enumerate(8, 2, GenogramClass::All).is_err());
        assert!(enumerate(3, 65, GenogramClass::All).is_err());
    }

    #[test]
    fn extension_examples() {
        let (a, b) = enumerate_extensions(&Genogram::root(), 4);
        assert_eq!(a.len(), 5);
        assert!(b.is_empty());
        let chain = Genogram::new(vec![1], vec![0, 3]).unwrap();
        let (a, b) = enumerate_extensions(&chain, 4);
        assert_eq!(a.len(), 5);
        assert_eq!(b.iter().map(|h| h.id(3)).collect::<Vec<_>>(), vec![0, 1, 2]);
    }
}
