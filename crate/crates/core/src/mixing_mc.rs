//! Monte Carlo for m-dependent linear fields `X_i = sum_j c_j eps_{i-j}`
//! on boxes of `Z^d`, with exact `sigma_n` and the model mixing profile.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bell::cumulants_from_moments;
use crate::error::{invalid, Error, Result};
use crate::hamburger::DiscreteDistribution;

/// Innovation law (mean zero).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Innovation {
    Discrete { support: Vec<f64>, probs: Vec<f64> },
    StandardNormal,
}

impl Innovation {
    /// Two-point law with `P(-2) = 1/5`, `P(1/2) = 4/5`: mean 0, variance 1,
    /// third cumulant `-3/2`.
    pub fn skewed_two_point() -> Self {
        Innovation::Discrete { support: vec![-2.0, 0.5], probs: vec![0.2, 0.8] }
    }

    pub fn from_distribution(d: &DiscreteDistribution) -> Self {
        Innovation::Discrete { support: d.locations.clone(), probs: d.weights.clone() }
    }

    pub fn variance(&self) -> f64 {
        match self {
            Innovation::Discrete { support, probs } => support.iter().zip(probs).map(|(x, p)| x * x * p).sum(),
            Innovation::StandardNormal => 1.0,
        }
    }

    /// Largest finite absolute moment order (all moments exist for both kinds).
    pub fn moment_order(&self) -> f64 {
        f64::INFINITY
    }

    fn validate(&self) -> Result<()> {
        if let Innovation::Discrete { support, probs } = self {
            let d = DiscreteDistribution::new(support.clone(), probs.clone())?;
            if d.mean().abs() > 1e-12 {
                return invalid(format!("innovation mean {} is not zero", d.mean()));
            }
        }
        Ok(())
    }
}

fn draw(inn: &Innovation, cum: &[f64], rng: &mut ChaCha8Rng) -> f64 {
    match inn {
        Innovation::Discrete { support, .. } => {
            let u: f64 = rng.gen();
            let k = cum.iter().position(|&c| u < c).unwrap_or(support.len() - 1);
            support[k]
        }
        Innovation::StandardNormal => rng.sample(StandardNormal),
    }
}

/// One kernel entry `c_j` at offset `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelEntry {
    pub offset: Vec<i64>,
    pub coef: f64,
}

/// Stationary linear field model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldModel {
    pub dimension: usize,
    pub kernel: Vec<KernelEntry>,
    pub innovation: Innovation,
}

/// Axis-aligned box `prod_d {0, .., n_d - 1}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoxDomain {
    pub sizes: Vec<usize>,
}

impl BoxDomain {
    pub fn new(sizes: Vec<usize>) -> Result<Self> {
        if sizes.is_empty() || sizes.iter().any(|&n| n == 0) {
            return invalid("box sides must be positive");
        }
        Ok(Self { sizes })
    }

    pub fn line(n: usize) -> Result<Self> {
        Self::new(vec![n])
    }

    pub fn len(&self) -> usize {
        self.sizes.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// `splitmix64` step, used to derive per-replication seeds.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn replication_seed(seed: u64, rep: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ rep.wrapping_mul(0xD1B5_4A32_D192_ED03))
}

impl FieldModel {
    pub fn new(dimension: usize, kernel: Vec<KernelEntry>, innovation: Innovation) -> Result<Self> {
        let m = Self { dimension, kernel, innovation };
        m.validate()?;
        Ok(m)
    }

    /// `X_i = sum_t c_t eps_{i-t}`, `t = 0..coefs.len()` on a line.
    pub fn moving_average_1d(coefs: &[f64], innovation: Innovation) -> Result<Self> {
        let kernel = coefs
            .iter()
            .enumerate()
            .map(|(t, &c)| KernelEntry { offset: vec![t as i64], coef: c })
            .collect();
        Self::new(1, kernel, innovation)
    }

    /// MA(1) with `c = (1, 1)` and the skewed two-point innovation.
    pub fn skewed_ma1() -> Self {
        Self::moving_average_1d(&[1.0, 1.0], Innovation::skewed_two_point()).expect("valid model")
    }

    pub fn validate(&self) -> Result<()> {
        if self.dimension == 0 || self.dimension > 3 {
            return invalid("dimension must lie in 1..=3");
        }
        if self.kernel.is_empty() {
            return invalid("empty kernel");
        }
        for e in &self.kernel {
            if e.offset.len() != self.dimension {
                return invalid(format!("offset {:?} has wrong dimension", e.offset));
            }
            if !e.coef.is_finite() {
                return invalid("kernel coefficient is not finite");
            }
        }
        self.innovation.validate()
    }

    /// Max-norm radius `m_0` of the kernel support.
    pub fn radius(&self) -> i64 {
        self.kernel.iter().flat_map(|e| e.offset.iter().map(|v| v.abs())).max().unwrap_or(0)
    }

    fn check_box(&self, domain: &BoxDomain) -> Result<()> {
        if domain.sizes.len() != self.dimension {
            return invalid(format!("box has dimension {}, model {}", domain.sizes.len(), self.dimension));
        }
        Ok(())
    }

    /// Autocovariance `gamma(h) = Var(eps) sum_j c_j c_{j+h}` over all lags.
    pub fn autocovariances(&self) -> Vec<(Vec<i64>, f64)> {
        let mut out: Vec<(Vec<i64>, f64)> = Vec::new();
        let v = self.innovation.variance();
        for a in &self.kernel {
            for b in &self.kernel {
                let h: Vec<i64> = b.offset.iter().zip(&a.offset).map(|(x, y)| x - y).collect();
                let c = a.coef * b.coef * v;
                match out.iter_mut().find(|(k, _)| *k == h) {
                    Some((_, g)) => *g += c,
                    None => out.push((h, c)),
                }
            }
        }
        out.sort_by(|a, b| a.0.cmp(&b.0));
        out
    }

    /// `sigma_n^2 = sum_h gamma(h) prod_d (n_d - |h_d|)_+`.
    pub fn sigma2(&self, domain: &BoxDomain) -> Result<f64> {
        self.check_box(domain)?;
        let mut s = 0.0;
        for (h, g) in self.autocovariances() {
            let count: f64 = h
                .iter()
                .zip(&domain.sizes)
                .map(|(&hd, &n)| (n as i64 - hd.abs()).max(0) as f64)
                .product();
            s += g * count;
        }
        if !(s > 0.0) {
            return Err(Error::Degenerate(format!("sigma_n^2 = {s}")));
        }
        Ok(s)
    }

    /// Upper bound on `alpha_l`: 1/4 within `2 m_0`, 0 beyond.
    pub fn alpha_profile(&self, l: u64) -> f64 {
        if (l as i64) <= 2 * self.radius() {
            0.25
        } else {
            0.0
        }
    }

    /// Stable 64-bit hash of the model (FNV-1a over its JSON form).
    pub fn hash(&self) -> u64 {
        let text = serde_json::to_string(self).expect("serializable");
        text.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
    }

    /// Source box `T ⊕ (-supp c)`: (lower corner, sizes).
    fn source_box(&self, domain: &BoxDomain) -> (Vec<i64>, Vec<usize>) {
        let mut lo = Vec::new();
        let mut sizes = Vec::new();
        for d in 0..self.dimension {
            let jmin = self.kernel.iter().map(|e| e.offset[d]).min().unwrap();
            let jmax = self.kernel.iter().map(|e| e.offset[d]).max().unwrap();
            lo.push(-jmax);
            sizes.push((domain.sizes[d] as i64 - 1 - jmin + jmax + 1) as usize);
        }
        (lo, sizes)
    }

    fn cumulative(&self) -> Vec<f64> {
        match &self.innovation {
            Innovation::Discrete { probs, .. } => probs
                .iter()
                .scan(0.0, |acc, p| {
                    *acc += p;
                    Some(*acc)
                })
                .collect(),
            Innovation::StandardNormal => Vec::new(),
        }
    }

    fn draw_sources(&self, n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let cum = self.cumulative();
        (0..n).map(|_| draw(&self.innovation, &cum, rng)).collect()
    }

    /// Field sample on `domain` in row-major order (last axis fastest).
    pub fn simulate(&self, domain: &BoxDomain, seed: u64) -> Result<Vec<f64>> {
        self.check_box(domain)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (lo, ssize) = self.source_box(domain);
        let eps = self.draw_sources(ssize.iter().product(), &mut rng);
        let d = self.dimension;
        let mut out = vec![0.0; domain.len()];
        let mut idx = vec![0i64; d];
        for x in out.iter_mut() {
            for e in &self.kernel {
                let mut flat = 0usize;
                for a in 0..d {
                    let s = idx[a] - e.offset[a] - lo[a];
                    flat = flat * ssize[a] + s as usize;
                }
                *x += e.coef * eps[flat];
            }
            for a in (0..d).rev() {
                idx[a] += 1;
                if (idx[a] as usize) < domain.sizes[a] {
                    break;
                }
                idx[a] = 0;
            }
        }
        Ok(out)
    }

    /// `W_n = sigma_n^{-1} sum_i X_i` for a sample from [`Self::simulate`].
    pub fn standardized_sum(&self, domain: &BoxDomain, sample: &[f64]) -> Result<f64> {
        if sample.len() != domain.len() {
            return invalid(format!("sample has {} values, box has {}", sample.len(), domain.len()));
        }
        Ok(sample.iter().sum::<f64>() / self.sigma2(domain)?.sqrt())
    }

    /// Weight of each source innovation in `sum_i X_i`.
    fn source_weights(&self, domain: &BoxDomain) -> Vec<f64> {
        let (lo, ssize) = self.source_box(domain);
        let d = self.dimension;
        let mut w = vec![0.0; ssize.iter().product()];
        let mut idx = vec![0i64; d];
        for _ in 0..domain.len() {
            for e in &self.kernel {
                let mut flat = 0usize;
                for a in 0..d {
                    flat = flat * ssize[a] + (idx[a] - e.offset[a] - lo[a]) as usize;
                }
                w[flat] += e.coef;
            }
            for a in (0..d).rev() {
                idx[a] += 1;
                if (idx[a] as usize) < domain.sizes[a] {
                    break;
                }
                idx[a] = 0;
            }
        }
        w
    }

    /// `reps` independent replications of `W_n`; replication `r` uses the
    /// stream seeded by [`replication_seed`]`(seed, r)`, so each value equals
    /// `standardized_sum(simulate(domain, replication_seed(seed, r)))` up to rounding.
    pub fn batch(&self, domain: &BoxDomain, reps: usize, seed: u64) -> Result<ReplicationBatch> {
        if reps < 2 {
            return invalid("need at least 2 replications");
        }
        let sigma = self.sigma2(domain)?.sqrt();
        let w = self.source_weights(domain);
        let cum = self.cumulative();
        let values: Vec<f64> = (0..reps as u64)
            .into_par_iter()
            .map(|r| {
                let mut rng = ChaCha8Rng::seed_from_u64(replication_seed(seed, r));
                let mut s = 0.0;
                for wi in &w {
                    s += wi * draw(&self.innovation, &cum, &mut rng);
                }
                s / sigma
            })
            .collect();
        Ok(ReplicationBatch { n: domain.len(), seed, model_hash: self.hash(), values })
    }
}

/// Independent replications of `W_n`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationBatch {
    pub n: usize,
    pub seed: u64,
    pub model_hash: u64,
    pub values: Vec<f64>,
}

impl ReplicationBatch {
    pub fn new(n: usize, seed: u64, model_hash: u64, values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return invalid("a batch needs at least 2 replications");
        }
        Ok(Self { n, seed, model_hash, values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["replication", "w_value"])?;
        for (i, v) in self.values.iter().enumerate() {
            wr.write_record([i.to_string(), format!("{v:.17e}")])?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R, n: usize, seed: u64, model_hash: u64) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let mut values = Vec::new();
        for (line, rec) in rd.records().enumerate() {
            let rec = rec?;
            let v: f64 = rec
                .get(1)
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| Error::Parse(format!("bad w_value on data line {}", line + 1)))?;
            values.push(v);
        }
        Self::new(n, seed, model_hash, values)
    }
}

pub const BOOTSTRAP_RESAMPLES: usize = 200;

/// Cumulant estimate with bootstrap standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CumulantEstimate {
    pub value: f64,
    pub std_err: f64,
}

fn sample_cumulants(values: &[f64], idx: Option<&[usize]>, jmax: usize) -> Result<Vec<f64>> {
    let mut mu = vec![0.0; jmax + 1];
    let n = idx.map_or(values.len(), |i| i.len());
    let mut acc = |x: f64| {
        let mut t = 1.0;
        for m in mu.iter_mut() {
            *m += t;
            t *= x;
        }
    };
    match idx {
        Some(ix) => ix.iter().for_each(|&i| acc(values[i])),
        None => values.iter().for_each(|&x| acc(x)),
    }
    mu.iter_mut().for_each(|m| *m /= n as f64);
    mu[0] = 1.0;
    cumulants_from_moments(&mu)
}

/// `kappa_1..kappa_jmax` of the batch from sample raw moments, with
/// bootstrap standard errors over [`BOOTSTRAP_RESAMPLES`] resamples.
pub fn empirical_cumulants(batch: &ReplicationBatch, jmax: usize, seed: u64) -> Result<Vec<CumulantEstimate>> {
    if jmax == 0 || jmax > 6 {
        return Err(Error::OrderTooLarge { order: jmax, max: 6 });
    }
    let r = batch.len();
    if r < 10 * jmax {
        return invalid(format!("{r} replications; need at least {}", 10 * jmax));
    }
    let point = sample_cumulants(&batch.values, None, jmax)?;
    let boots: Vec<Vec<f64>> = (0..BOOTSTRAP_RESAMPLES as u64)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(replication_seed(seed, b));
            let idx: Vec<usize> = (0..r).map(|_| rng.gen_range(0..r)).collect();
            sample_cumulants(&batch.values, Some(&idx), jmax).expect("normalized moments")
        })
        .collect();
    Ok((0..jmax)
        .map(|j| {
            let m = boots.iter().map(|b| b[j]).sum::<f64>() / boots.len() as f64;
            let v = boots.iter().map(|b| (b[j] - m).powi(2)).sum::<f64>() / (boots.len() - 1) as f64;
            CumulantEstimate { value: point[j], std_err: v.sqrt() }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn skewed_calibration() {
        let inn = Innovation::skewed_two_point();
        assert!((inn.variance() - 1.0).abs() < 1e-15);
        if let Innovation::Discrete { support, probs } = inn {
            let k3: f64 = support.iter().zip(&probs).map(|(x, p)| x * x * x * p).sum();
            assert!((k3 + 1.5).abs() < 1e-15);
        }
    }

    #[test]
    fn sigma_closed_forms() {
        let m = FieldModel::moving_average_1d(&[1.0, 1.0], Innovation::StandardNormal).unwrap();
        for n in [1usize, 2, 7, 100] {
            let s = m.sigma2(&BoxDomain::line(n).unwrap()).unwrap();
            assert!((s - (4 * n - 2) as f64).abs() < 1e-9);
        }
        let iid = FieldModel::moving_average_1d(&[1.0], Innovation::StandardNormal).unwrap();
        assert_eq!(iid.sigma2(&BoxDomain::line(37).unwrap()).unwrap(), 37.0);
        let zero = FieldModel::moving_average_1d(&[0.0], Innovation::StandardNormal).unwrap();
        assert!(matches!(zero.sigma2(&BoxDomain::line(5).unwrap()), Err(Error::Degenerate(_))));
        assert!(FieldModel::new(1, vec![], Innovation::StandardNormal).is_err());
    }

    #[test]
    fn simulate_iid_and_determinism() {
        let dom = BoxDomain::new(vec![3, 4]).unwrap();
        let m = FieldModel::new(
            2,
            vec![KernelEntry { offset: vec![0, 0], coef: 1.0 }, KernelEntry { offset: vec![1, 0], coef: 0.5 }],
            Innovation::skewed_two_point(),
        )
        .unwrap();
        assert_eq!(m.simulate(&dom, 9).unwrap(), m.simulate(&dom, 9).unwrap());
        assert_ne!(m.simulate(&dom, 9).unwrap(), m.simulate(&dom, 10).unwrap());
        let iid = FieldModel::moving_average_1d(&[1.0], Innovation::skewed_two_point()).unwrap();
        let x = iid.simulate(&BoxDomain::line(50).unwrap(), 3).unwrap();
        assert!(x.iter().all(|v| *v == -2.0 || *v == 0.5));
    }

    #[test]
    fn batch_matches_simulate() {
        let m = FieldModel::new(
            2,
            vec![KernelEntry { offset: vec![0, 0], coef: 1.0 }, KernelEntry { offset: vec![1, -1], coef: -0.7 }],
            Innovation::skewed_two_point(),
        )
        .unwrap();
        let dom = BoxDomain::new(vec![4, 5]).unwrap();
        let b = m.batch(&dom, 6, 42).unwrap();
        for (r, v) in b.values.iter().enumerate() {
            let x = m.simulate(&dom, replication_seed(42, r as u64)).unwrap();
            assert!((m.standardized_sum(&dom, &x).unwrap() - v).abs() < 1e-12);
        }
        assert_eq!(b, m.batch(&dom, 6, 42).unwrap());
    }

    #[test]
    fn alpha_profile_range() {
        let m = FieldModel::skewed_ma1();
        assert_eq!(m.alpha_profile(1), 0.25);
        assert_eq!(m.alpha_profile(2), 0.25);
        assert_eq!(m.alpha_profile(3), 0.0);
        let iid = FieldModel::moving_average_1d(&[1.0], Innovation::StandardNormal).unwrap();
        assert!((1..10).all(|l| iid.alpha_profile(l) == 0.0));
    }

    #[test]
    fn cumulant_guards_and_csv() {
        let m = FieldModel::skewed_ma1();
        let b = m.batch(&BoxDomain::line(8).unwrap(), 20, 1).unwrap();
        assert!(empirical_cumulants(&b, 3, 0).is_err());
        assert!(empirical_cumulants(&b, 7, 0).is_err());
        let mut buf = Vec::new();
        b.write_csv(&mut buf).unwrap();
        assert!(buf.starts_with(b"replication,w_value\n"));
        let back = ReplicationBatch::read_csv(&buf[..], b.n, b.seed, b.model_hash).unwrap();
        assert_eq!(back, b);
    }
}
