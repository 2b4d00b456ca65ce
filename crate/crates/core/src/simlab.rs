//! Data-generating processes and the Monte Carlo study runner.
//!
//! Studies:
//! - `dt`: `X ~ Gamma(θ, 1)`, `U = E − ν` with `E ~ Exp(1)`, `V = U + 3 + ν`;
//!   triples outside `U ≤ X ≤ V` are discarded and redrawn. Tested under the
//!   exponential null with the double-truncation score.
//! - `random-sampling`: `X ~ Gamma(θ, 1)` observed directly, tested with both
//!   the hazard-form score (`Q1`) and the distribution-form score (`Q2`).
//!
//! Every trial draws from its own stream keyed by `(seed, cell, trial)`.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::families::Family;
use crate::goftest::{run_test, BootstrapConfig, Multiplier, TestOptions};
use crate::schemes::{ObservedSample, Row, Scheme};

/// Give up on truncated sampling below this acceptance rate.
pub const MIN_ACCEPTANCE: f64 = 1e-4;

/// SplitMix64 finaliser, used to derive independent stream keys.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Counter-based stream for trial `trial` of cell `cell`.
pub fn trial_rng(seed: u64, cell: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed ^ mix(cell)));
    rng.set_stream(trial);
    rng
}

fn exp1<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    // inverse cdf; 1 − u ∈ (0, 1]
    -(1.0 - rng.random::<f64>()).ln()
}

fn gamma_law(shape: f64) -> Result<Gamma<f64>> {
    Gamma::new(shape, 1.0)
        .map_err(|e| Error::Config(format!("invalid gamma shape {shape}: {e}")))
}

/// `n` iid `Gamma(shape, 1)` observations.
pub fn gen_complete<R: Rng + ?Sized>(shape: f64, n: usize, rng: &mut R) -> Result<ObservedSample> {
    if !(shape > 0.0) {
        return Err(Error::Config(format!("shape must be positive, got {shape}")));
    }
    let law = gamma_law(shape)?;
    let xs: Vec<f64> = (0..n).map(|_| law.sample(rng)).collect();
    ObservedSample::complete(&xs)
}

/// Doubly truncated sample of size `n` and the observed truncation proportion.
pub fn gen_double_trunc<R: Rng + ?Sized>(
    shape: f64,
    nu: f64,
    n: usize,
    rng: &mut R,
) -> Result<(ObservedSample, f64)> {
    let (rows, rejected) = draw_double_trunc(shape, nu, n, rng)?;
    let pt = rejected as f64 / (rejected + n as u64) as f64;
    Ok((ObservedSample::new(Scheme::DoubleTrunc, rows)?, pt))
}

/// Accepted rows and the number of discarded draws.
fn draw_double_trunc<R: Rng + ?Sized>(
    shape: f64,
    nu: f64,
    n: usize,
    rng: &mut R,
) -> Result<(Vec<Row>, u64)> {
    if !(shape > 0.0 && nu > 0.0) {
        return Err(Error::Config(format!(
            "need shape > 0 and nu > 0, got {shape}, {nu}"
        )));
    }
    let law = gamma_law(shape)?;
    let mut rows = Vec::with_capacity(n);
    let mut rejected: u64 = 0;
    while rows.len() < n {
        let x = law.sample(rng);
        let u = exp1(rng) - nu;
        let v = u + 3.0 + nu;
        if u <= x && x <= v {
            rows.push(Row::DoubleTrunc { x, u, v });
        } else {
            rejected += 1;
            let total = rejected + rows.len() as u64;
            if total >= 100_000 && (rows.len() as f64) < MIN_ACCEPTANCE * total as f64 {
                return Err(Error::RunawayTruncation {
                    rate: rows.len() as f64 / total as f64,
                });
            }
        }
    }
    Ok((rows, rejected))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Study {
    Dt,
    RandomSampling,
}

impl fmt::Display for Study {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Study::Dt => "dt",
            Study::RandomSampling => "random-sampling",
        })
    }
}

impl FromStr for Study {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dt" => Ok(Study::Dt),
            "random-sampling" | "rs" => Ok(Study::RandomSampling),
            other => Err(Error::Config(format!("unknown study '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub study: Study,
    pub thetas: Vec<f64>,
    pub nu: f64,
    pub ns: Vec<usize>,
    pub trials_null: usize,
    pub trials_alt: usize,
    pub b: usize,
    pub alpha: f64,
    pub seed: u64,
    pub multiplier: Multiplier,
    pub grid: crate::kernelgram::GridConfig,
}

impl SimulationConfig {
    /// Desk-scale defaults: 300 trials, B = 199.
    pub fn desk(study: Study) -> Self {
        SimulationConfig {
            study,
            thetas: vec![0.5, 0.8, 1.0, 1.2, 1.5],
            nu: 1.0,
            ns: vec![50, 100, 200],
            trials_null: 300,
            trials_alt: 300,
            b: 199,
            alpha: 0.05,
            seed: 1,
            multiplier: Multiplier::Mammen,
            grid: Default::default(),
        }
    }

    /// Full scale: 1000 null / 500 alternative trials, B = 499.
    pub fn full(study: Study) -> Self {
        SimulationConfig {
            trials_null: 1000,
            trials_alt: 500,
            b: 499,
            ..Self::desk(study)
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.thetas.is_empty() || self.thetas.iter().any(|t| !(*t > 0.0)) {
            return bad("theta grid must be non-empty and positive");
        }
        if self.ns.is_empty() || self.ns.iter().any(|n| *n < 2) {
            return bad("sample sizes must be at least 2");
        }
        if self.trials_null == 0 || self.trials_alt == 0 || self.b == 0 {
            return bad("trial counts and B must be positive");
        }
        if !(self.nu > 0.0) {
            return bad("nu must be positive");
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad("alpha must lie in (0, 1)");
        }
        Ok(())
    }

    /// Statistic variants run per trial, with the scheme each one uses.
    pub fn variants(&self) -> Vec<(String, Scheme)> {
        match self.study {
            Study::Dt => {
                let label = if self.nu >= 1.0 { "WT" } else { "ST" };
                vec![(label.to_string(), Scheme::DoubleTrunc)]
            }
            Study::RandomSampling => vec![
                ("Q1".to_string(), Scheme::CompleteHazard),
                ("Q2".to_string(), Scheme::Complete),
            ],
        }
    }
}

/// One (θ, n, variant) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub variant: String,
    pub theta: f64,
    pub n: usize,
    pub trials: usize,
    pub failures: usize,
    pub rejections: usize,
    pub rejection_rate: f64,
    pub se: f64,
    /// Pooled truncation proportion (dt study only).
    pub pt: Option<f64>,
    pub wall_secs: f64,
    pub p_values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub config: SimulationConfig,
    pub cells: Vec<CellRecord>,
}

struct TrialOutcome {
    p_values: Vec<Option<f64>>,
    accepted: u64,
    rejected_draws: u64,
}

fn run_trial(cfg: &SimulationConfig, theta: f64, n: usize, cell: u64, trial: u64) -> Result<TrialOutcome> {
    let mut rng = trial_rng(cfg.seed, cell, trial);
    let (sample, rejected_draws) = match cfg.study {
        Study::Dt => {
            let (rows, rejected) = draw_double_trunc(theta, cfg.nu, n, &mut rng)?;
            (ObservedSample::new(Scheme::DoubleTrunc, rows)?, rejected)
        }
        Study::RandomSampling => (gen_complete(theta, n, &mut rng)?, 0),
    };
    let boot = BootstrapConfig {
        b: cfg.b,
        multiplier: cfg.multiplier,
        seed: rng.next_u64(),
    };
    let opts = TestOptions {
        grid: cfg.grid,
        ..Default::default()
    };
    let p_values = cfg
        .variants()
        .iter()
        .map(|(_, scheme)| {
            sample
                .with_scheme(*scheme)
                .and_then(|s| run_test(&s, Family::Exponential, &boot, &opts))
                .map(|r| r.p_value)
                .ok()
        })
        .collect();
    Ok(TrialOutcome {
        p_values,
        accepted: n as u64,
        rejected_draws,
    })
}

/// Run every (θ, n) cell; per-trial failures are tolerated up to 1%.
pub fn run_study(cfg: &SimulationConfig) -> Result<SimulationReport> {
    cfg.validate()?;
    let variants = cfg.variants();
    let mut cells = Vec::new();
    for (ti, &theta) in cfg.thetas.iter().enumerate() {
        for (ni, &n) in cfg.ns.iter().enumerate() {
            let cell_id = ((ti as u64) << 32) | ni as u64;
            let trials = if (theta - 1.0).abs() < 1e-12 {
                cfg.trials_null
            } else {
                cfg.trials_alt
            };
            let start = Instant::now();
            let outcomes: Vec<Result<TrialOutcome>> = (0..trials as u64)
                .into_par_iter()
                .map(|t| run_trial(cfg, theta, n, cell_id, t))
                .collect();
            let wall = start.elapsed().as_secs_f64();

            let mut accepted = 0u64;
            let mut rejected_draws = 0u64;
            let mut per_variant: Vec<Vec<Option<f64>>> = vec![Vec::new(); variants.len()];
            for o in outcomes {
                match o {
                    Ok(o) => {
                        accepted += o.accepted;
                        rejected_draws += o.rejected_draws;
                        for (v, p) in o.p_values.into_iter().enumerate() {
                            per_variant[v].push(p);
                        }
                    }
                    Err(_) => {
                        for v in per_variant.iter_mut() {
                            v.push(None);
                        }
                    }
                }
            }
            let pt = (cfg.study == Study::Dt && accepted > 0)
                .then(|| rejected_draws as f64 / (rejected_draws + accepted) as f64);

            for ((label, _), ps) in variants.iter().zip(per_variant) {
                let failures = ps.iter().filter(|p| p.is_none()).count();
                if failures as f64 > 0.01 * trials as f64 {
                    return Err(Error::Config(format!(
                        "cell theta={theta} n={n} {label}: {failures} of {trials} trials failed (budget 1%)"
                    )));
                }
                let p_values: Vec<f64> = ps.into_iter().flatten().collect();
                let done = p_values.len();
                let rejections = p_values.iter().filter(|p| **p <= cfg.alpha).count();
                let rate = rejections as f64 / done as f64;
                cells.push(CellRecord {
                    variant: label.clone(),
                    theta,
                    n,
                    trials: done,
                    failures,
                    rejections,
                    rejection_rate: rate,
                    se: (rate * (1.0 - rate) / done as f64).sqrt(),
                    pt,
                    wall_secs: wall,
                    p_values,
                });
            }
        }
    }
    Ok(SimulationReport {
        config: cfg.clone(),
        cells,
    })
}

impl SimulationReport {
    pub fn cell(&self, variant: &str, theta: f64, n: usize) -> Option<&CellRecord> {
        self.cells
            .iter()
            .find(|c| c.variant == variant && (c.theta - theta).abs() < 1e-12 && c.n == n)
    }

    /// Table layout: `variant,theta,pt,n<..>...,se_n<..>...`, one line per (variant, θ).
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let ns = &self.config.ns;
        let mut header = vec!["variant".to_string(), "theta".into(), "pt".into()];
        header.extend(ns.iter().map(|n| format!("n{n}")));
        header.extend(ns.iter().map(|n| format!("se_n{n}")));
        w.write_record(&header)?;
        for (label, _) in self.config.variants() {
            for &theta in &self.config.thetas {
                let row: Vec<Option<&CellRecord>> =
                    ns.iter().map(|&n| self.cell(&label, theta, n)).collect();
                let pt = row
                    .iter()
                    .flatten()
                    .filter_map(|c| c.pt)
                    .next()
                    .map(|p| format!("{p:.3}"))
                    .unwrap_or_default();
                let mut rec = vec![label.clone(), format!("{theta}"), pt];
                rec.extend(row.iter().map(|c| {
                    c.map(|c| format!("{:.3}", c.rejection_rate)).unwrap_or_default()
                }));
                rec.extend(row.iter().map(|c| c.map(|c| format!("{:.4}", c.se)).unwrap_or_default()));
                w.write_record(&rec)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Monte Carlo truncation proportion from `accepted` kept draws.
pub fn estimate_pt(shape: f64, nu: f64, accepted: usize, seed: u64) -> Result<f64> {
    let mut rng = trial_rng(seed, u64::MAX, 0);
    Ok(gen_double_trunc(shape, nu, accepted, &mut rng)?.1)
}
