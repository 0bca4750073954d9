//! Empirical Wasserstein-p distance to `N(0,1)`, rate fits, mixing sums and
//! tail profiles.

use std::io::Write;

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::error::{invalid, Result};
use crate::mixing_mc::{splitmix64, BoxDomain, FieldModel, ReplicationBatch};

/// Points of the 32-point Gauss–Legendre rule on `[-1, 1]`.
const GL_POINTS: usize = 32;
/// Outer truncation of the two tail cells, in `z` units.
pub const TAIL_CUTOFF: f64 = 12.0;

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("standard normal")
}

fn phi(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Gauss–Legendre nodes and weights by Newton iteration on `P_n`.
fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..(n + 1) / 2 {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// `int_a^b |c - z|^p phi(z) dz`, split at the kink `z = c`.
fn cell_integral(a: f64, b: f64, c: f64, p: f64, rule: &(Vec<f64>, Vec<f64>)) -> f64 {
    let seg = |lo: f64, hi: f64| -> f64 {
        if hi <= lo {
            return 0.0;
        }
        let (h, mid) = ((hi - lo) / 2.0, (hi + lo) / 2.0);
        rule.0
            .iter()
            .zip(&rule.1)
            .map(|(x, w)| {
                let z = mid + h * x;
                w * (c - z).abs().powf(p) * phi(z)
            })
            .sum::<f64>()
            * h
    };
    if c > a && c < b {
        seg(a, c) + seg(c, b)
    } else {
        seg(a, b)
    }
}

/// `(int_0^1 |F_n^{-1}(u) - Phi^{-1}(u)|^p du)^{1/p}` for the empirical law of `samples`.
///
/// Cell `i` is integrated in `z = Phi^{-1}(u)` over `[z_{i-1}, z_i]`; the two
/// outer cells stop at `|z| = 12`, where the neglected mass is below `1e-30`.
pub fn wasserstein_p_normal(samples: &[f64], p: f64) -> Result<f64> {
    if samples.is_empty() {
        return invalid("empty sample");
    }
    if samples.len() < 2 {
        return invalid("need at least 2 samples");
    }
    if !(p >= 1.0) || !p.is_finite() {
        return invalid(format!("p = {p} must be finite and >= 1"));
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return invalid("non-finite sample");
    }
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    let nd = std_normal();
    let rule = gauss_legendre(GL_POINTS);
    let mut edges = Vec::with_capacity(n + 1);
    edges.push(-TAIL_CUTOFF);
    for i in 1..n {
        edges.push(nd.inverse_cdf(i as f64 / n as f64));
    }
    edges.push(TAIL_CUTOFF);
    let total: f64 = xs
        .iter()
        .enumerate()
        .map(|(i, &x)| cell_integral(edges[i], edges[i + 1], x, p, &rule))
        .sum();
    Ok(total.powf(1.0 / p))
}

/// Least-squares power-law fit `distance ~ C size^{-beta}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateFit {
    pub sizes: Vec<f64>,
    pub distances: Vec<f64>,
    pub beta_hat: f64,
    pub intercept: f64,
    pub rms: f64,
    /// Half-width of the 95% t-interval for the slope.
    pub half_width: f64,
}

pub fn fit_rate(sizes: &[f64], distances: &[f64]) -> Result<RateFit> {
    if sizes.len() != distances.len() {
        return invalid("sizes and distances differ in length");
    }
    if sizes.len() < 3 {
        return invalid("need at least 3 sizes");
    }
    if sizes.windows(2).any(|w| !(w[1] > w[0])) || !(sizes[0] > 0.0) {
        return invalid("sizes must be positive and strictly increasing");
    }
    if distances.iter().any(|d| !(*d > 0.0)) {
        return invalid("distances must be positive");
    }
    let x: Vec<f64> = sizes.iter().map(|s| s.ln()).collect();
    let y: Vec<f64> = distances.iter().map(|d| d.ln()).collect();
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ssr: f64 = x.iter().zip(&y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let rms = (ssr / n).sqrt();
    let dof = n - 2.0;
    let half_width = if dof > 0.0 {
        let t = StudentsT::new(0.0, 1.0, dof).expect("positive dof").inverse_cdf(0.975);
        t * (ssr / dof / sxx).sqrt()
    } else {
        f64::NAN
    };
    Ok(RateFit { sizes: sizes.to_vec(), distances: distances.to_vec(), beta_hat: -slope, intercept, rms, half_width })
}

/// Parameters of the mixing sums.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixingParams {
    pub p: f64,
    pub d: u32,
    pub r: f64,
    pub omega: f64,
    pub m: u64,
    pub delta: f64,
    pub size: u64,
}

impl MixingParams {
    /// Parameters with `omega = p + 1 - ceil(p)`.
    pub fn new(p: f64, d: u32, r: f64, m: u64, delta: f64, size: u64) -> Self {
        Self { p, d, r, omega: p + 1.0 - p.ceil(), m, delta, size }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MixingSums {
    pub m_n: f64,
    pub m_i: f64,
    pub m_ii: f64,
}

/// `floor(size^{1/d})` without floating round-off at exact powers.
fn int_root(size: u64, d: u32) -> u64 {
    let mut r = (size as f64).powf(1.0 / d as f64).round() as u64;
    while r > 0 && r.checked_pow(d).map_or(true, |v| v > size) {
        r -= 1;
    }
    while (r + 1).checked_pow(d).is_some_and(|v| v <= size) {
        r += 1;
    }
    r
}

fn alpha_pow(a: f64, e: f64) -> f64 {
    if a == 0.0 {
        0.0
    } else {
        a.powf(e)
    }
}

/// `(M_n, M^{(i)}_{n,m,delta}, M^{(ii)}_{n,m})` for the profile `alpha(l)`.
pub fn mixing_sums(alpha: &dyn Fn(u64) -> f64, prm: &MixingParams) -> Result<MixingSums> {
    let MixingParams { p, d, r, omega, m, delta, size } = *prm;
    if !(p >= 1.0) || !p.is_finite() {
        return invalid("p must be >= 1");
    }
    if !(r > p + 2.0) {
        return invalid("r must exceed p + 2");
    }
    if (omega - (p + 1.0 - p.ceil())).abs() > 1e-12 {
        return invalid("omega must equal p + 1 - ceil(p)");
    }
    if d == 0 || size == 0 {
        return invalid("d and |T| must be positive");
    }
    if !(0.0..=1.0).contains(&delta) {
        return invalid("delta must lie in [0, 1]");
    }
    let t = size as f64;
    let df = d as f64;
    let root = int_root(size, d);
    let mut m_n = 0.0;
    for l in 1..=root {
        m_n += (l as f64).powf(df * (p + 1.0) - omega) * alpha_pow(alpha(l), (r - p - 2.0) / r);
    }
    m_n *= t.powf(-p / 2.0);
    let hi = m + 1 + root / 2;
    let (mut s1, mut s2) = (0.0, 0.0);
    for l in m + 1..=hi {
        let lf = l as f64;
        s1 += lf.powf(df * delta - delta) * alpha_pow(alpha(l), (r - p - 1.0 - delta) / r);
        s2 += lf.powf(df * p - 1.0) * alpha_pow(alpha(l), (r - p - 1.0) / r);
    }
    let mdp = (m as f64).powf(df * p);
    Ok(MixingSums {
        m_n,
        m_i: t.powf(-(p - 1.0 + delta) / 2.0) * mdp * s1,
        m_ii: t.powf(-(p - 1.0) / 2.0) * mdp * s2,
    })
}

/// One row of a tail profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TailRecord {
    pub t: f64,
    /// Empirical `P(W >= t)`.
    pub tail: f64,
    /// `exp(-K1 t^2) + K2 / (t^p |T|^{p beta})`.
    pub bound: f64,
    /// `(1 + |t|^p) |F^c(t) - Phi^c(t)|`.
    pub weighted_dev: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TailProfile {
    pub k1: f64,
    pub k2: f64,
    pub sup_weighted_dev: f64,
    pub records: Vec<TailRecord>,
}

/// Default concentration exponent: `Phi^c(t) <= exp(-t^2/2)` for `t >= 0`.
pub const DEFAULT_K1: f64 = 0.5;

/// Uniform grid `0, step, .., t_max`.
pub fn t_grid(t_max: f64, step: f64) -> Vec<f64> {
    let n = (t_max / step).round() as usize;
    (0..=n).map(|i| i as f64 * step).collect()
}

/// Empirical tails on `grid`, the smallest `K2` making
/// `P(W >= t) <= exp(-K1 t^2) + K2/(t^p |T|^{p beta})` hold at every grid
/// point for the given `K1`, and the weighted deviation from `Phi^c`.
pub fn tail_profiles(batch: &ReplicationBatch, p: f64, beta: f64, grid: &[f64], k1: f64) -> Result<TailProfile> {
    if grid.len() < 3 {
        return invalid("t-grid needs at least 3 points");
    }
    if grid.iter().any(|t| !(*t >= 0.0)) {
        return invalid("t-grid must be non-negative");
    }
    if !(p >= 1.0) || !(k1 > 0.0) {
        return invalid("need p >= 1 and K1 > 0");
    }
    let mut xs = batch.values.clone();
    xs.sort_by(f64::total_cmp);
    let r = xs.len() as f64;
    let nd = std_normal();
    let scale = (batch.n as f64).powf(p * beta);
    let tails: Vec<f64> = grid
        .iter()
        .map(|&t| (xs.len() - xs.partition_point(|&x| x < t)) as f64 / r)
        .collect();
    let mut k2: f64 = 0.0;
    for (&t, &f) in grid.iter().zip(&tails) {
        let excess = f - (-k1 * t * t).exp();
        if excess > 0.0 {
            k2 = k2.max(excess * t.powf(p) * scale);
        }
    }
    let records: Vec<TailRecord> = grid
        .iter()
        .zip(&tails)
        .map(|(&t, &f)| {
            let slack = if t > 0.0 {
                k2 / (t.powf(p) * scale)
            } else if k2 == 0.0 {
                0.0
            } else {
                f64::INFINITY
            };
            TailRecord {
                t,
                tail: f,
                bound: (-k1 * t * t).exp() + slack,
                weighted_dev: (1.0 + t.abs().powf(p)) * (f - (1.0 - nd.cdf(t))).abs(),
            }
        })
        .collect();
    let sup = records.iter().map(|r| r.weighted_dev).fold(0.0, f64::max);
    Ok(TailProfile { k1, k2, sup_weighted_dev: sup, records })
}

/// Seed of the batch at size `n` in a ladder run with master `seed`.
pub fn ladder_seed(seed: u64, n: usize) -> u64 {
    splitmix64(seed ^ splitmix64(n as u64))
}

/// Monte Carlo rate ladder on lines of the given sizes.
#[derive(Debug, Clone)]
pub struct RateLadder {
    pub batches: Vec<ReplicationBatch>,
    pub fits: Vec<(f64, RateFit)>,
}

impl RateLadder {
    pub fn records(&self) -> Vec<RateRecord> {
        let mut out = Vec::new();
        for (p, fit) in &self.fits {
            for (b, d) in self.batches.iter().zip(&fit.distances) {
                out.push(RateRecord { n: b.n, p: *p, distance: *d, beta_hat: fit.beta_hat });
            }
        }
        out
    }
}

/// One batch of `reps` replications per size, `W_p` to `N(0,1)` for each `p`,
/// and the power-law fit per `p`.
pub fn rate_ladder(model: &FieldModel, sizes: &[usize], reps: usize, seed: u64, ps: &[f64]) -> Result<RateLadder> {
    if model.dimension != 1 {
        return invalid("rate ladders run on lines (d = 1)");
    }
    let batches = sizes
        .iter()
        .map(|&n| model.batch(&BoxDomain::line(n)?, reps, ladder_seed(seed, n)))
        .collect::<Result<Vec<_>>>()?;
    let xs: Vec<f64> = sizes.iter().map(|&n| n as f64).collect();
    let mut fits = Vec::new();
    for &p in ps {
        let d = batches.iter().map(|b| wasserstein_p_normal(&b.values, p)).collect::<Result<Vec<_>>>()?;
        fits.push((p, fit_rate(&xs, &d)?));
    }
    Ok(RateLadder { batches, fits })
}

/// Tail profiles at each size of a ladder.
pub fn tail_ladder(
    model: &FieldModel,
    sizes: &[usize],
    reps: usize,
    seed: u64,
    p: f64,
    beta: f64,
    grid: &[f64],
    k1: f64,
) -> Result<Vec<(usize, TailProfile)>> {
    sizes
        .iter()
        .map(|&n| {
            let b = model.batch(&BoxDomain::line(n)?, reps, ladder_seed(seed, n))?;
            Ok((n, tail_profiles(&b, p, beta, grid, k1)?))
        })
        .collect()
}

/// One row of the rate table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateRecord {
    pub n: usize,
    pub p: f64,
    pub distance: f64,
    pub beta_hat: f64,
}

/// Writes `n,p,distance,beta_hat` rows.
pub fn write_rates_csv<W: Write>(w: W, rows: &[RateRecord]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["n", "p", "distance", "beta_hat"])?;
    for r in rows {
        wr.write_record([r.n.to_string(), r.p.to_string(), format!("{:.10e}", r.distance), format!("{:.6}", r.beta_hat)])?;
    }
    wr.flush()?;
    Ok(())
}

/// Writes `t,tail,bound,weighted_dev` rows.
pub fn write_tails_csv<W: Write>(w: W, rows: &[TailRecord]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["t", "tail", "bound", "weighted_dev"])?;
    for r in rows {
        wr.write_record([
            format!("{:.4}", r.t),
            format!("{:.10e}", r.tail),
            format!("{:.10e}", r.bound),
            format!("{:.10e}", r.weighted_dev),
        ])?;
    }
    wr.flush()?;
    Ok(())
}
