//! Test-function grid and Gram matrices.
//!
//! The indicator-class kernel integrates products of scores over the test
//! index `t ~ F_θ̂`. With `s = F_θ̂(t)` the integral runs over `(0, 1)` and is
//! discretised by a rule on that interval; nodes are mapped back through the
//! quantile function.
//!
//! Scores jump at data-dependent locations (`F(x_i)`, `F(u_i)`, ...). A plain
//! rule integrates each jump with `O(1/m)` error, so by default the grid is
//! refined: `(0, 1)` is split at every breakpoint and the rule is applied on
//! each piece, where the integrand is smooth.
//!
//! The orthogonalised Gram is `Π K_g Π` with `Π = I − L(LᵀL)⁻¹Lᵀ`, computed
//! from a thin QR factorisation of the score matrix `L`.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::families::Model;
use crate::schemes::{ObservedSample, Row, Scheme, SchemeScoreEngine};

/// Largest acceptable condition number of the score matrix.
pub const MAX_SCORE_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GridRule {
    GaussLegendre,
    Midpoint,
}

impl fmt::Display for GridRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GridRule::GaussLegendre => "gl",
            GridRule::Midpoint => "mid",
        })
    }
}

impl FromStr for GridRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gl" | "gauss-legendre" => Ok(GridRule::GaussLegendre),
            "mid" | "midpoint" => Ok(GridRule::Midpoint),
            other => Err(Error::Config(format!("unknown grid rule '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub m: usize,
    pub rule: GridRule,
    /// Split the rule at data breakpoints.
    pub refine: bool,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            m: 256,
            rule: GridRule::GaussLegendre,
            refine: true,
        }
    }
}

/// How the parameter-estimation effect is removed from the scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CrossMoment {
    /// Project the rows of the design onto the orthocomplement of the score span.
    #[default]
    Projection,
    /// Use the sample mean of `∂g_t/∂θ` as the cross-moment.
    Jacobian,
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`, ascending.
pub fn gauss_legendre(q: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; q];
    let mut w = vec![0.0; q];
    let qf = q as f64;
    for i in 0..q.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (qf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=q {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * z * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            let p = if q == 1 { z } else { p1 };
            let pm1 = if q == 1 { 1.0 } else { p0 };
            dp = qf * (z * p - pm1) / (z * z - 1.0);
            let dz = p / dp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        x[i] = -z;
        x[q - 1 - i] = z;
        w[i] = wi;
        w[q - 1 - i] = wi;
    }
    if q % 2 == 1 {
        x[q / 2] = 0.0;
    }
    (x, w)
}

/// Discretisation of `∫ · dF_θ̂(t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureGrid {
    /// Levels `s_k ∈ (0, 1)`.
    pub levels: Vec<f64>,
    /// Nodes `t_k = F⁻¹(s_k)`, strictly increasing.
    pub nodes: Vec<f64>,
    /// Positive weights summing to one.
    pub weights: Vec<f64>,
}

impl QuadratureGrid {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn from_levels(model: &Model, levels: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        let nodes = levels
            .iter()
            .map(|&s| model.quantile(s))
            .collect::<Result<Vec<_>>>()?;
        Ok(QuadratureGrid {
            levels,
            nodes,
            weights,
        })
    }
}

fn rule_on(rule: GridRule, q: usize, a: f64, b: f64, cache: &mut HashMap<usize, (Vec<f64>, Vec<f64>)>) -> Vec<(f64, f64)> {
    let h = b - a;
    match rule {
        GridRule::Midpoint => (0..q)
            .map(|k| (a + h * (k as f64 + 0.5) / q as f64, h / q as f64))
            .collect(),
        GridRule::GaussLegendre => {
            let (x, w) = cache.entry(q).or_insert_with(|| gauss_legendre(q));
            x.iter()
                .zip(w.iter())
                .map(|(xi, wi)| (a + 0.5 * h * (xi + 1.0), 0.5 * h * wi))
                .collect()
        }
    }
}

/// Plain `m`-node rule on `(0, 1)` mapped through `F_θ̂⁻¹`.
pub fn build_grid(model: &Model, m: usize, rule: GridRule) -> Result<QuadratureGrid> {
    if m < 8 {
        return Err(Error::Config(format!("grid size must be at least 8, got {m}")));
    }
    let mut cache = HashMap::new();
    let (levels, weights) = rule_on(rule, m, 0.0, 1.0, &mut cache).into_iter().unzip();
    QuadratureGrid::from_levels(model, levels, weights)
}

/// Composite rule split at `breakpoints` (levels in `(0, 1)`).
///
/// Each piece receives `max(min_nodes, ⌈m·length⌉)` nodes, so the total is at
/// least `m`.
pub fn build_refined_grid(
    model: &Model,
    m: usize,
    rule: GridRule,
    breakpoints: &[f64],
) -> Result<QuadratureGrid> {
    if m < 8 {
        return Err(Error::Config(format!("grid size must be at least 8, got {m}")));
    }
    let min_nodes = match rule {
        GridRule::GaussLegendre => 4,
        GridRule::Midpoint => 2,
    };
    let mut cuts: Vec<f64> = breakpoints
        .iter()
        .copied()
        .filter(|s| *s > 0.0 && *s < 1.0)
        .collect();
    cuts.push(0.0);
    cuts.push(1.0);
    cuts.sort_by(f64::total_cmp);
    cuts.dedup_by(|a, b| (*a - *b).abs() <= 1e-14);

    let mut cache = HashMap::new();
    let mut levels = Vec::new();
    let mut weights = Vec::new();
    for w in cuts.windows(2) {
        let (a, b) = (w[0], w[1]);
        let q = ((m as f64 * (b - a)).ceil() as usize).max(min_nodes);
        for (s, wt) in rule_on(rule, q, a, b, &mut cache) {
            levels.push(s);
            weights.push(wt);
        }
    }
    QuadratureGrid::from_levels(model, levels, weights)
}

/// Grid for `sample` under `engine`, per `cfg`.
pub fn grid_for(sample: &ObservedSample, engine: &SchemeScoreEngine, cfg: &GridConfig) -> Result<QuadratureGrid> {
    if cfg.refine {
        let bps: Vec<f64> = sample
            .rows()
            .iter()
            .flat_map(|r| engine.breakpoints(r))
            .collect();
        build_refined_grid(engine.model(), cfg.m, cfg.rule, &bps)
    } else {
        build_grid(engine.model(), cfg.m, cfg.rule)
    }
}

/// `A[i, k] = g_{t_k}(Z_i)`.
pub fn score_design(sample: &ObservedSample, engine: &SchemeScoreEngine, grid: &QuadratureGrid) -> Result<DMatrix<f64>> {
    let n = sample.len();
    let m = grid.len();
    let rows: Vec<Vec<f64>> = sample
        .rows()
        .par_iter()
        .map(|row| {
            grid.nodes
                .iter()
                .map(|&t| engine.g_indicator(row, t))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    Ok(DMatrix::from_fn(n, m, |i, k| rows[i][k]))
}

/// `H W Hᵀ`, symmetrised.
pub fn weighted_gram(h: &DMatrix<f64>, weights: &[f64]) -> DMatrix<f64> {
    let mut scaled = h.clone();
    for (k, w) in weights.iter().enumerate() {
        scaled.column_mut(k).scale_mut(w.sqrt());
    }
    let g = &scaled * scaled.transpose();
    (&g + g.transpose()) * 0.5
}

/// Design matrix `A` and raw Gram `K_g = A·diag(w)·Aᵀ`.
pub fn gram_raw(
    sample: &ObservedSample,
    engine: &SchemeScoreEngine,
    grid: &QuadratureGrid,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let a = score_design(sample, engine, grid)?;
    let kg = weighted_gram(&a, &grid.weights);
    Ok((a, kg))
}

/// Orthonormal basis of the column span of `l`, or `None` when `l` is identically zero.
fn score_basis(l: &DMatrix<f64>) -> Result<Option<DMatrix<f64>>> {
    if l.ncols() == 0 || l.iter().all(|v| *v == 0.0) {
        return Ok(None);
    }
    if l.nrows() <= l.ncols() {
        return Err(Error::SingularScore {
            condition: f64::INFINITY,
        });
    }
    let qr = l.clone().qr();
    let r = qr.r();
    let diag: Vec<f64> = (0..r.ncols()).map(|j| r[(j, j)].abs()).collect();
    let max = diag.iter().cloned().fold(0.0, f64::max);
    let min = diag.iter().cloned().fold(f64::INFINITY, f64::min);
    let condition = if min > 0.0 { max / min } else { f64::INFINITY };
    if !(condition < MAX_SCORE_CONDITION) {
        return Err(Error::SingularScore { condition });
    }
    Ok(Some(qr.q()))
}

/// `(I − P) K (I − P)` with `P` the orthogonal projector onto span(`l`).
///
/// An all-zero `l` means there is nothing to project out and `K` is returned.
pub fn gram_orthogonal(kg: &DMatrix<f64>, l: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let Some(q) = score_basis(l)? else {
        return Ok(kg.clone());
    };
    let kq = kg * &q;
    let qtkq = q.transpose() * &kq;
    let out = kg - &kq * q.transpose() - &q * kq.transpose() + &q * qtkq * q.transpose();
    Ok((&out + out.transpose()) * 0.5)
}

/// `(I − P) A`: design rows with the score span removed.
pub fn project_rows(a: &DMatrix<f64>, l: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    match score_basis(l)? {
        None => Ok(a.clone()),
        Some(q) => Ok(a - &q * (q.transpose() * a)),
    }
}

/// Orthogonalised design using the mean Jacobian `D = E_n[∂g_t/∂θ]` as
/// cross-moment: `H = A + L Î⁻¹ Dᵀ` with `Î = LᵀL / n`.
pub fn jacobian_design(
    sample: &ObservedSample,
    engine: &SchemeScoreEngine,
    grid: &QuadratureGrid,
    a: &DMatrix<f64>,
    l: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let n = sample.len();
    let p = l.ncols();
    let m = grid.len();
    let per_row: Vec<Vec<Vec<f64>>> = sample
        .rows()
        .par_iter()
        .map(|row| {
            grid.nodes
                .iter()
                .map(|&t| engine.g_indicator_grad(row, t))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let mut d = DMatrix::zeros(m, p);
    for row in &per_row {
        for (k, g) in row.iter().enumerate() {
            for j in 0..p {
                d[(k, j)] += g[j] / n as f64;
            }
        }
    }
    let fisher = l.transpose() * l / n as f64;
    let chol = fisher.cholesky().ok_or(Error::SingularScore {
        condition: f64::INFINITY,
    })?;
    let coef = chol.solve(&d.transpose()); // p × m
    Ok(a + l * coef)
}

/// Raw and orthogonalised Gram matrices for one sample.
#[derive(Debug, Clone)]
pub struct GramBundle {
    pub grid: QuadratureGrid,
    pub a: DMatrix<f64>,
    pub kg: DMatrix<f64>,
    pub kperp: DMatrix<f64>,
}

impl GramBundle {
    /// Build for a fitted engine. `scores = None` is the simple-null mode (no projection).
    pub fn build(
        sample: &ObservedSample,
        engine: &SchemeScoreEngine,
        cfg: &GridConfig,
        scores: Option<&DMatrix<f64>>,
        cross: CrossMoment,
    ) -> Result<Self> {
        let grid = grid_for(sample, engine, cfg)?;
        let (a, kg) = gram_raw(sample, engine, &grid)?;
        let kperp = match (scores, cross) {
            (None, _) => kg.clone(),
            (Some(l), CrossMoment::Projection) => gram_orthogonal(&kg, l)?,
            (Some(l), CrossMoment::Jacobian) => {
                let h = jacobian_design(sample, engine, &grid, &a, l)?;
                weighted_gram(&h, &grid.weights)
            }
        };
        Ok(GramBundle { grid, a, kg, kperp })
    }

    pub fn n(&self) -> usize {
        self.kg.nrows()
    }

    /// Uncorrected comparison statistic `(1/n) Σ K_g[i, j]`, without calibration.
    pub fn comparison_statistic(&self) -> f64 {
        self.kg.sum() / self.n() as f64
    }

    pub fn diagnostics(&self, scores: Option<&DMatrix<f64>>) -> GramDiagnostics {
        let eig = |m: &DMatrix<f64>| m.clone().symmetric_eigenvalues();
        let (ek, ep) = (eig(&self.kg), eig(&self.kperp));
        let ratio = |e: &DVector<f64>| {
            let max = e.max();
            if max > 0.0 { e.min() / max } else { 0.0 }
        };
        let asym = |m: &DMatrix<f64>| (m - m.transpose()).amax();
        GramDiagnostics {
            kg_min_eig_ratio: ratio(&ek),
            kperp_min_eig_ratio: ratio(&ep),
            kperp_asymmetry: asym(&self.kperp),
            score_residual: scores.map(|l| (&self.kperp * l).amax()).unwrap_or(0.0),
            trace_kg: self.kg.trace(),
            trace_kperp: self.kperp.trace(),
        }
    }
}

/// Numerical health of a [`GramBundle`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GramDiagnostics {
    /// Smallest over largest eigenvalue of `K_g`.
    pub kg_min_eig_ratio: f64,
    pub kperp_min_eig_ratio: f64,
    pub kperp_asymmetry: f64,
    /// `max |K⊥ L|`.
    pub score_residual: f64,
    pub trace_kg: f64,
    pub trace_kperp: f64,
}

/// Exact indicator-kernel Gram for complete data:
/// `1 − F(x_i ∨ x_j) − ½(1 − F(x_i)²) − ½(1 − F(x_j)²) + ⅓`.
pub fn gram_closed_form_complete(sample: &ObservedSample, model: &Model) -> Result<DMatrix<f64>> {
    if sample.scheme() != Scheme::Complete {
        return Err(Error::Config(format!(
            "closed-form Gram needs complete data, got {}",
            sample.scheme()
        )));
    }
    let f: Vec<f64> = sample
        .rows()
        .iter()
        .map(|r| match r {
            Row::Exact { x } => model.cdf(*x),
            _ => unreachable!("validated complete sample"),
        })
        .collect();
    let n = f.len();
    Ok(DMatrix::from_fn(n, n, |i, j| {
        1.0 - f[i].max(f[j]) - 0.5 * (1.0 - f[i] * f[i]) - 0.5 * (1.0 - f[j] * f[j]) + 1.0 / 3.0
    }))
}
