//! Config-driven experiment runs and the JSON run summary.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use genogram_clt::field_exact::{
    edgeworth_ladder, grid_tolerance, verification_grid, write_edgeworth_csv, write_results_csv, ExactField,
    FieldSpec, IdentityChecker, InnovationSpec, PolyFn, SiteOrder,
};
use genogram_clt::hamburger::{construct_matching_rv, hankel_minors, DiscreteDistribution, QChoice, MATCH_TOL, MINOR_TOL};
use genogram_clt::metrics::{rate_ladder, t_grid, tail_ladder, write_rates_csv, write_tails_csv, DEFAULT_K1};
use genogram_clt::mixing_mc::FieldModel;
use genogram_clt::scalar::rational_from_f64;
use genogram_clt::stein_edgeworth::MonomialPoly;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Subcommand {
    Identities,
    Construct,
    Rates,
    Edgeworth,
    Tails,
}

impl Subcommand {
    pub fn name(&self) -> &'static str {
        match self {
            Subcommand::Identities => "identities",
            Subcommand::Construct => "construct",
            Subcommand::Rates => "rates",
            Subcommand::Edgeworth => "edgeworth",
            Subcommand::Tails => "tails",
        }
    }

    fn stochastic(&self) -> bool {
        matches!(self, Subcommand::Rates | Subcommand::Tails)
    }
}

fn one() -> i64 {
    1
}
fn three() -> usize {
    3
}
fn two() -> usize {
    2
}
fn p_one() -> f64 {
    1.0
}
fn half() -> f64 {
    0.5
}
fn k1_default() -> f64 {
    DEFAULT_K1
}
fn t_max_default() -> f64 {
    4.0
}
fn t_step_default() -> f64 {
    0.02
}
fn slope_gap_default() -> f64 {
    0.4
}
fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdentitiesConfig {
    pub field: FieldSpec,
    #[serde(default = "one")]
    pub m: i64,
    #[serde(default)]
    pub site_order: SiteOrder,
    #[serde(default = "three")]
    pub kmax: usize,
    /// Monomial coefficients of the test function (default: a fixed quartic).
    #[serde(default)]
    pub test_function: Option<Vec<f64>>,
    #[serde(default)]
    pub id_cap: Option<i64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstructCase {
    pub u: Vec<f64>,
    pub p: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstructConfig {
    pub cases: Vec<ConstructCase>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RatesConfig {
    pub model: FieldModel,
    pub sizes: Vec<usize>,
    pub replications: usize,
    pub p: Vec<f64>,
    pub beta_range: [f64; 2],
    #[serde(default = "yes")]
    pub write_batches: bool,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeworthConfig {
    pub innovation: InnovationSpec,
    pub sizes: Vec<usize>,
    /// Monomial coefficients of `h`.
    pub h: Vec<f64>,
    #[serde(default = "two")]
    pub k: usize,
    #[serde(default = "slope_gap_default")]
    pub min_slope_gap: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TailsConfig {
    pub model: FieldModel,
    pub sizes: Vec<usize>,
    pub replications: usize,
    #[serde(default = "p_one")]
    pub p: f64,
    #[serde(default = "half")]
    pub beta: f64,
    #[serde(default = "k1_default")]
    pub k1: f64,
    #[serde(default = "t_max_default")]
    pub t_max: f64,
    #[serde(default = "t_step_default")]
    pub t_step: f64,
}

/// One experiment file; each subcommand reads its own section.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub identities: Option<IdentitiesConfig>,
    #[serde(default)]
    pub construct: Option<ConstructConfig>,
    #[serde(default)]
    pub rates: Option<RatesConfig>,
    #[serde(default)]
    pub edgeworth: Option<EdgeworthConfig>,
    #[serde(default)]
    pub tails: Option<TailsConfig>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| anyhow::anyhow!("config error at line {}, column {}: {e}", e.line(), e.column()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::from_json(&text).with_context(|| format!("in {}", path.display()))
    }
}

/// One summary entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: Value,
    pub threshold: Value,
    pub pass: bool,
    /// Seconds spent on the computation behind this entry.
    pub wall_time: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub half_width: Option<f64>,
}

fn num(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else if x > 0.0 {
        json!("inf")
    } else if x < 0.0 {
        json!("-inf")
    } else {
        json!("nan")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub subcommand: String,
    pub pass: bool,
    pub checks: Vec<Check>,
}

/// Options resolved from the command line.
#[derive(Debug, Clone)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

fn section<'a, T>(s: &'a Option<T>, cmd: Subcommand) -> Result<&'a T> {
    s.as_ref().with_context(|| format!("config has no \"{}\" section", cmd.name()))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

/// Runs one subcommand, writes its artifacts and `summary.json` into the
/// output directory and returns the summary.
pub fn run(cmd: Subcommand, cfg: &ExperimentConfig, opts: &RunOptions) -> Result<Summary> {
    let seed = opts.seed.or(cfg.seed);
    if cmd.stochastic() && seed.is_none() {
        bail!("subcommand {} needs a seed (config \"seed\" or --seed)", cmd.name());
    }
    let out = opts
        .out
        .clone()
        .or_else(|| cfg.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out").join(cmd.name()));
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let checks = match cmd {
        Subcommand::Identities => run_identities(section(&cfg.identities, cmd)?, &out)?,
        Subcommand::Construct => run_construct(section(&cfg.construct, cmd)?, &out)?,
        Subcommand::Rates => run_rates(section(&cfg.rates, cmd)?, seed.unwrap(), &out)?,
        Subcommand::Edgeworth => run_edgeworth(section(&cfg.edgeworth, cmd)?, &out)?,
        Subcommand::Tails => run_tails(section(&cfg.tails, cmd)?, seed.unwrap(), &out)?,
    };
    emit_report(&out, cmd, checks)
}

/// Files a completed run must have left in its directory.
pub fn expected_artifacts(cmd: Subcommand, dir: &Path) -> Result<Vec<PathBuf>> {
    let fixed = match cmd {
        Subcommand::Identities => vec!["identities.csv"],
        Subcommand::Rates => vec!["rates.csv"],
        Subcommand::Edgeworth => vec!["edgeworth.csv"],
        Subcommand::Construct => vec!["construct_1.json", "distribution_1.csv"],
        Subcommand::Tails => vec![],
    };
    let out: Vec<PathBuf> = fixed.into_iter().map(|f| dir.join(f)).collect();
    if cmd == Subcommand::Tails {
        let mut found = false;
        if dir.is_dir() {
            for e in fs::read_dir(dir)? {
                let name = e?.file_name().to_string_lossy().into_owned();
                found |= name.starts_with("tails_n") && name.ends_with(".csv");
            }
        }
        if !found {
            bail!("no tails_n*.csv artifact in {}", dir.display());
        }
    }
    Ok(out)
}

/// Checks the run directory for its artifacts and writes `summary.json`.
pub fn emit_report(dir: &Path, cmd: Subcommand, checks: Vec<Check>) -> Result<Summary> {
    if !dir.is_dir() {
        bail!("run directory {} does not exist", dir.display());
    }
    if fs::read_dir(dir)?.next().is_none() {
        bail!("run directory {} is empty", dir.display());
    }
    for path in expected_artifacts(cmd, dir)? {
        let meta = fs::metadata(&path).with_context(|| format!("missing artifact {}", path.display()))?;
        if meta.len() == 0 {
            bail!("artifact {} is empty", path.display());
        }
    }
    if checks.is_empty() {
        bail!("run produced no checks");
    }
    let summary = Summary { subcommand: cmd.name().into(), pass: checks.iter().all(|c| c.pass), checks };
    let file = create(&dir.join(SUMMARY_FILE))?;
    serde_json::to_writer_pretty(file, &summary)?;
    Ok(summary)
}

fn family(identity: &str) -> &str {
    let base = identity.split('(').next().unwrap_or(identity);
    if base.starts_with("q-") {
        "q-recovery"
    } else {
        base
    }
}

fn run_identities(cfg: &IdentitiesConfig, out: &Path) -> Result<Vec<Check>> {
    let t = Instant::now();
    let field = ExactField::from_spec(&cfg.field)?;
    let mut checker = IdentityChecker::new(&field, cfg.m, cfg.site_order)?;
    if let Some(cap) = cfg.id_cap {
        if cap < field.num_sites() as i64 {
            bail!("id_cap {cap} is below |T| = {}", field.num_sites());
        }
        checker.id_cap = cap;
    }
    let f = match &cfg.test_function {
        Some(c) => PolyFn::new(c.clone())?,
        None => genogram_clt::field_exact::grid_test_function(),
    };
    if cfg.kmax < 2 || cfg.kmax > 4 {
        bail!("kmax must lie in 2..=4");
    }
    let results = verification_grid(&checker, &f, cfg.kmax)?;
    write_results_csv(create(&out.join("identities.csv"))?, &results)?;
    let wall = t.elapsed().as_secs_f64();
    let mut families: Vec<(String, f64, f64)> = Vec::new();
    for r in &results {
        let fam = family(&r.identity).to_string();
        let tol = grid_tolerance(&r.identity);
        match families.iter_mut().find(|(n, _, _)| *n == fam) {
            Some(e) => e.1 = e.1.max(r.residual),
            None => families.push((fam, r.residual, tol)),
        }
    }
    Ok(families
        .into_iter()
        .map(|(name, v, tol)| Check { name, value: num(v), threshold: num(tol), pass: v < tol, wall_time: wall, half_width: None })
        .collect())
}

fn run_construct(cfg: &ConstructConfig, out: &Path) -> Result<Vec<Check>> {
    if cfg.cases.is_empty() {
        bail!("construct needs at least one case");
    }
    let mut checks = Vec::new();
    for (i, case) in cfg.cases.iter().enumerate() {
        let t = Instant::now();
        let c = construct_matching_rv(&case.u, case.p).with_context(|| format!("case {}", i + 1))?;
        let dist = &c.distribution;
        let kappa = genogram_clt::bell::cumulants_from_moments(&dist.moments(c.k + 1))?;
        let mut err = kappa[0].abs().max((kappa[1] - 1.0).abs());
        for (j, target) in c.targets.iter().enumerate() {
            err = err.max((kappa[j + 2] - target).abs());
        }
        let minors = hankel_minors(&c.moments)?;
        let min_minor = minors.iter().copied().fold(f64::INFINITY, f64::min);
        dist.write_csv(create(&out.join(format!("distribution_{}.csv", i + 1)))?)?;
        let q = match c.q {
            QChoice::Gaussian => json!("gaussian"),
            QChoice::Finite(q) => json!(q),
        };
        let report = json!({
            "u": case.u, "p": case.p, "k": c.k, "q": q, "cp": c.cp,
            "targets": c.targets, "realized_cumulants": c.realized_cumulants,
            "moments": c.moments, "hankel_minors": minors, "abs_moments": c.abs_moments,
        });
        serde_json::to_writer_pretty(create(&out.join(format!("construct_{}.json", i + 1)))?, &report)?;
        let wall = t.elapsed().as_secs_f64();
        checks.push(Check {
            name: format!("cumulant-match(case={})", i + 1),
            value: num(err),
            threshold: num(MATCH_TOL),
            pass: err < MATCH_TOL,
            wall_time: wall,
            half_width: None,
        });
        checks.push(Check {
            name: format!("min-hankel-minor(case={})", i + 1),
            value: num(min_minor),
            threshold: num(1.0 - MINOR_TOL),
            pass: min_minor >= 1.0 - MINOR_TOL,
            wall_time: wall,
            half_width: None,
        });
    }
    Ok(checks)
}

fn run_rates(cfg: &RatesConfig, seed: u64, out: &Path) -> Result<Vec<Check>> {
    let t = Instant::now();
    let ladder = rate_ladder(&cfg.model, &cfg.sizes, cfg.replications, seed, &cfg.p)?;
    write_rates_csv(create(&out.join("rates.csv"))?, &ladder.records())?;
    if cfg.write_batches {
        for b in &ladder.batches {
            b.write_csv(create(&out.join(format!("batch_n{}.csv", b.n)))?)?;
        }
    }
    let wall = t.elapsed().as_secs_f64();
    let [lo, hi] = cfg.beta_range;
    Ok(ladder
        .fits
        .iter()
        .map(|(p, fit)| Check {
            name: format!("beta_hat(p={p})"),
            value: num(fit.beta_hat),
            threshold: json!([lo, hi]),
            pass: (lo..=hi).contains(&fit.beta_hat),
            wall_time: wall,
            half_width: Some(fit.half_width),
        })
        .collect())
}

fn run_edgeworth(cfg: &EdgeworthConfig, out: &Path) -> Result<Vec<Check>> {
    let t = Instant::now();
    let inn = DiscreteDistribution::new(cfg.innovation.support.clone(), cfg.innovation.probs.clone())?;
    let h = MonomialPoly::new(cfg.h.iter().map(|&c| rational_from_f64(c)).collect());
    let ladder = edgeworth_ladder(&inn, &cfg.sizes, &h, cfg.k)?;
    write_edgeworth_csv(create(&out.join("edgeworth.csv"))?, &ladder.rows)?;
    Ok(vec![Check {
        name: "edgeworth-slope-gap".into(),
        value: num(ladder.slope_gap),
        threshold: num(cfg.min_slope_gap),
        pass: ladder.slope_gap >= cfg.min_slope_gap,
        wall_time: t.elapsed().as_secs_f64(),
        half_width: None,
    }])
}

fn run_tails(cfg: &TailsConfig, seed: u64, out: &Path) -> Result<Vec<Check>> {
    let t = Instant::now();
    if cfg.sizes.len() < 2 {
        bail!("tails needs at least two sizes");
    }
    let grid = t_grid(cfg.t_max, cfg.t_step);
    let profiles = tail_ladder(&cfg.model, &cfg.sizes, cfg.replications, seed, cfg.p, cfg.beta, &grid, cfg.k1)?;
    for (n, prof) in &profiles {
        write_tails_csv(create(&out.join(format!("tails_n{n}.csv")))?, &prof.records)?;
    }
    let wall = t.elapsed().as_secs_f64();
    let k2: Vec<f64> = profiles.iter().map(|(_, p)| p.k2).collect();
    let dev: Vec<f64> = profiles.iter().map(|(_, p)| p.sup_weighted_dev).collect();
    Ok(vec![
        Check {
            name: "k2-non-increasing".into(),
            value: json!(k2),
            threshold: json!({ "k1": cfg.k1 }),
            pass: k2.windows(2).all(|w| w[1] <= w[0]),
            wall_time: wall,
            half_width: None,
        },
        Check {
            name: "weighted-deviation-decreasing".into(),
            value: json!(dev),
            threshold: Value::Null,
            pass: dev.windows(2).all(|w| w[1] < w[0]),
            wall_time: wall,
            half_width: None,
        },
    ])
}
