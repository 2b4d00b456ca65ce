//! Statistic, multiplier bootstrap and p-value.
//!
//! `nQ̂ = (1/n) Σᵢⱼ K⊥[i, j]` and each bootstrap draw is `(1/n) ωᵀ K⊥ ω` with
//! iid mean-zero, unit-variance multipliers. θ̂, the score matrix and `K⊥`
//! stay fixed across draws.
//!
//! Draw `b` uses its own ChaCha8 stream (`seed`, stream `b`), so results do
//! not depend on how draws are scheduled across threads.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Stage};
use crate::families::{Family, Theta};
use crate::kernelgram::{CrossMoment, GramBundle, GridConfig};
use crate::mle::{fit_mle, FitResult, MleOptions};
use crate::schemes::{ObservedSample, SchemeScoreEngine};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Multiplier {
    /// Two-point law on `(1 ∓ √5)/2` with probabilities `(√5 ± 1)/(2√5)`.
    #[default]
    Mammen,
    /// `±1` with probability ½.
    Rademacher,
}

impl Multiplier {
    pub fn draw<R: Rng + ?Sized>(self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        match self {
            Multiplier::Mammen => {
                let r5 = 5f64.sqrt();
                if u < (r5 + 1.0) / (2.0 * r5) {
                    (1.0 - r5) / 2.0
                } else {
                    (1.0 + r5) / 2.0
                }
            }
            Multiplier::Rademacher => {
                if u < 0.5 {
                    -1.0
                } else {
                    1.0
                }
            }
        }
    }
}

impl fmt::Display for Multiplier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Multiplier::Mammen => "mammen",
            Multiplier::Rademacher => "rademacher",
        })
    }
}

impl FromStr for Multiplier {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mammen" => Ok(Multiplier::Mammen),
            "rademacher" => Ok(Multiplier::Rademacher),
            other => Err(Error::Config(format!("unknown multiplier '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub b: usize,
    pub multiplier: Multiplier,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            b: 499,
            multiplier: Multiplier::Mammen,
            seed: 0,
        }
    }
}

/// RNG for bootstrap draw `b`.
pub fn draw_stream(seed: u64, b: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(b as u64);
    rng
}

/// `nQ̂ = (1/n) Σᵢⱼ K⊥[i, j]`.
pub fn statistic(bundle: &GramBundle) -> f64 {
    quadratic_stat(&bundle.kperp)
}

pub fn quadratic_stat(kperp: &DMatrix<f64>) -> f64 {
    kperp.sum() / kperp.nrows() as f64
}

/// `(1/n) ωᵀ K ω`.
pub fn bootstrap_draw(kperp: &DMatrix<f64>, omega: &DVector<f64>) -> f64 {
    (omega.transpose() * kperp * omega)[(0, 0)] / kperp.nrows() as f64
}

pub fn bootstrap(bundle: &GramBundle, cfg: &BootstrapConfig) -> Result<Vec<f64>> {
    bootstrap_kernel(&bundle.kperp, cfg)
}

pub fn bootstrap_kernel(kperp: &DMatrix<f64>, cfg: &BootstrapConfig) -> Result<Vec<f64>> {
    if cfg.b == 0 {
        return Err(Error::Config("bootstrap size B must be at least 1".into()));
    }
    let n = kperp.nrows();
    Ok((0..cfg.b)
        .into_par_iter()
        .map(|b| {
            let mut rng = draw_stream(cfg.seed, b);
            let omega = DVector::from_fn(n, |_, _| cfg.multiplier.draw(&mut rng));
            bootstrap_draw(kperp, &omega)
        })
        .collect())
}

/// `(1 + #{draws ≥ stat}) / (B + 1)`.
pub fn p_value(stat: f64, draws: &[f64]) -> f64 {
    let exceed = draws.iter().filter(|d| **d >= stat).count();
    (1 + exceed) as f64 / (draws.len() + 1) as f64
}

/// Linearly interpolated empirical quantile (type 7).
pub fn quantile(draws: &[f64], prob: f64) -> f64 {
    let mut v = draws.to_vec();
    v.sort_by(f64::total_cmp);
    if v.is_empty() {
        return f64::NAN;
    }
    let h = (v.len() - 1) as f64 * prob;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(v.len() - 1);
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

#[derive(Debug, Clone, Default)]
pub struct TestOptions {
    pub grid: GridConfig,
    /// Known θ₀: skip estimation and projection.
    pub simple_null: Option<Theta>,
    pub cross_moment: CrossMoment,
    /// Current status weighting `{F(c)(1 − F(c))}^{-1/2}`.
    pub cs_weight: bool,
    pub mle: MleOptions,
}

#[derive(Debug, Clone)]
pub struct TestResult {
    pub scheme: crate::schemes::Scheme,
    pub family: Family,
    pub n: usize,
    pub theta_hat: Theta,
    pub stat_nq: f64,
    pub boot_draws: Vec<f64>,
    pub p_value: f64,
    pub bootstrap: BootstrapConfig,
    pub grid: GridConfig,
    /// Nodes actually used (≥ `grid.m` when refined).
    pub grid_nodes: usize,
    /// Uncorrected `(1/n) Σ K_g`, diagnostic only.
    pub comparison_stat: f64,
    /// `None` in simple-null mode.
    pub fit: Option<FitResult>,
}

impl TestResult {
    pub fn reject(&self, alpha: f64) -> bool {
        self.p_value <= alpha
    }

    pub fn boot_quantile(&self, prob: f64) -> f64 {
        quantile(&self.boot_draws, prob)
    }
}

/// Fit, build the Gram bundle, compute the statistic, bootstrap and p-value.
pub fn run_test(
    sample: &ObservedSample,
    family: Family,
    cfg: &BootstrapConfig,
    opts: &TestOptions,
) -> Result<TestResult> {
    if cfg.b == 0 {
        return Err(Error::Config("bootstrap size B must be at least 1".into()));
    }
    let (theta, fit) = match &opts.simple_null {
        Some(t0) => {
            family.at(t0).map_err(Error::at(Stage::Fit))?;
            (t0.clone(), None)
        }
        None => {
            let fit = fit_mle(sample, family, None, &opts.mle).map_err(Error::at(Stage::Fit))?;
            (fit.theta_hat.clone(), Some(fit))
        }
    };
    let (bundle, grid_nodes) = (|| -> Result<_> {
        let engine = SchemeScoreEngine::new(sample.scheme(), family, &theta)?
            .with_cs_weight(opts.cs_weight);
        let bundle = GramBundle::build(
            sample,
            &engine,
            &opts.grid,
            fit.as_ref().map(|f| &f.scores),
            opts.cross_moment,
        )?;
        let nodes = bundle.grid.len();
        Ok((bundle, nodes))
    })()
    .map_err(Error::at(Stage::Gram))?;

    let stat = statistic(&bundle);
    let draws = bootstrap(&bundle, cfg).map_err(Error::at(Stage::Bootstrap))?;
    Ok(TestResult {
        scheme: sample.scheme(),
        family,
        n: sample.len(),
        theta_hat: theta,
        stat_nq: stat,
        p_value: p_value(stat, &draws),
        boot_draws: draws,
        bootstrap: *cfg,
        grid: opts.grid,
        grid_nodes,
        comparison_stat: bundle.comparison_statistic(),
        fit,
    })
}
