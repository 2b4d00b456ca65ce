//! Observation schemes and their conditional scores.
//!
//! For an indicator test function `φ_t(·) = 1{· ≤ t}` each scheme gives a
//! score `g_t(z, θ)` with zero mean under the null, free of the unknown
//! censoring/truncation law. Closed forms (continuous `F_θ`):
//!
//! | scheme          | `g_t(z, θ)`                                                   |
//! |-----------------|---------------------------------------------------------------|
//! | complete        | `1{x≤t} − F(t)`                                               |
//! | complete-hazard | `1{x≤t} − Λ(min(x,t))`                                        |
//! | ltrc            | `δ·1{y≤t} − [Λ(min(t,y)) − Λ(u)]⁺`                            |
//! | dt              | `1{x≤t} − [F(min(t,v)) − F(u)]⁺ / (F(v) − F(u))`              |
//! | cs              | `1{c≤t}·(δ − F(c))`                                           |
//!
//! `[·]⁺` is zero when the integration range is empty (`min(t, ·) < u`).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, RowIssue};
use crate::families::{Family, Model, Theta};

/// Below this `F(v) − F(u)` a truncation window is degenerate.
pub const MIN_WINDOW_MASS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scheme {
    #[serde(rename = "complete")]
    Complete,
    #[serde(rename = "complete-hazard")]
    CompleteHazard,
    #[serde(rename = "ltrc")]
    Ltrc,
    #[serde(rename = "dt")]
    DoubleTrunc,
    #[serde(rename = "cs")]
    CurrentStatus,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::Complete => "complete",
            Scheme::CompleteHazard => "complete-hazard",
            Scheme::Ltrc => "ltrc",
            Scheme::DoubleTrunc => "dt",
            Scheme::CurrentStatus => "cs",
        }
    }

    /// CSV header layout.
    pub fn columns(self) -> &'static [&'static str] {
        match self {
            Scheme::Complete | Scheme::CompleteHazard => &["x"],
            Scheme::Ltrc => &["y", "u", "delta"],
            Scheme::DoubleTrunc => &["x", "u", "v"],
            Scheme::CurrentStatus => &["delta", "c"],
        }
    }

    pub fn supports(self, family: Family) -> bool {
        matches!(
            (self, family),
            (_, Family::Exponential) | (Scheme::Complete, _)
        )
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "complete" => Ok(Scheme::Complete),
            "complete-hazard" => Ok(Scheme::CompleteHazard),
            "ltrc" => Ok(Scheme::Ltrc),
            "dt" => Ok(Scheme::DoubleTrunc),
            "cs" => Ok(Scheme::CurrentStatus),
            other => Err(Error::Config(format!("unknown scheme '{other}'"))),
        }
    }
}

/// One observed record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Row {
    Exact { x: f64 },
    Ltrc { y: f64, u: f64, delta: bool },
    DoubleTrunc { x: f64, u: f64, v: f64 },
    CurrentStatus { delta: bool, c: f64 },
}

impl Row {
    /// The outcome column used for default initialisation (x, y or c).
    pub fn outcome(&self) -> f64 {
        match *self {
            Row::Exact { x } | Row::DoubleTrunc { x, .. } => x,
            Row::Ltrc { y, .. } => y,
            Row::CurrentStatus { c, .. } => c,
        }
    }

    fn fits(&self, scheme: Scheme) -> bool {
        matches!(
            (scheme, self),
            (Scheme::Complete | Scheme::CompleteHazard, Row::Exact { .. })
                | (Scheme::Ltrc, Row::Ltrc { .. })
                | (Scheme::DoubleTrunc, Row::DoubleTrunc { .. })
                | (Scheme::CurrentStatus, Row::CurrentStatus { .. })
        )
    }

    fn check(&self) -> Option<String> {
        match *self {
            Row::Exact { x } => (!x.is_finite()).then(|| format!("x = {x} is not finite")),
            Row::Ltrc { y, u, .. } => {
                if !y.is_finite() || u.is_nan() {
                    Some(format!("non-numeric values y = {y}, u = {u}"))
                } else if u > y {
                    Some(format!("u = {u} exceeds y = {y}"))
                } else {
                    None
                }
            }
            Row::DoubleTrunc { x, u, v } => {
                if !x.is_finite() || u.is_nan() || v.is_nan() {
                    Some(format!("non-numeric values x = {x}, u = {u}, v = {v}"))
                } else if u > x {
                    Some(format!("u = {u} exceeds x = {x}"))
                } else if x > v {
                    Some(format!("x = {x} exceeds v = {v}"))
                } else {
                    None
                }
            }
            Row::CurrentStatus { c, .. } => {
                (!(c.is_finite() && c > 0.0)).then(|| format!("c = {c} outside support (0, ∞)"))
            }
        }
    }
}

/// Scheme-tagged, validated dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservedSample {
    scheme: Scheme,
    rows: Vec<Row>,
}

impl ObservedSample {
    /// Validate rows against the scheme; every problem is reported with its row number.
    pub fn new(scheme: Scheme, rows: Vec<Row>) -> Result<Self> {
        let mut issues: Vec<RowIssue> = rows
            .iter()
            .enumerate()
            .filter_map(|(i, r)| {
                if !r.fits(scheme) {
                    Some(format!("record {r:?} does not match scheme {scheme}"))
                } else {
                    r.check()
                }
                .map(|message| RowIssue { row: i + 1, message })
            })
            .collect();
        if rows.len() < 2 {
            issues.push(RowIssue {
                row: 0,
                message: format!("need at least 2 rows, got {}", rows.len()),
            });
        }
        if issues.is_empty() {
            Ok(ObservedSample { scheme, rows })
        } else {
            Err(Error::Validation(issues))
        }
    }

    pub fn complete(xs: &[f64]) -> Result<Self> {
        Self::new(
            Scheme::Complete,
            xs.iter().map(|&x| Row::Exact { x }).collect(),
        )
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn rows(&self) -> &[Row] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Same rows read under a different scheme (complete ↔ complete-hazard).
    pub fn with_scheme(&self, scheme: Scheme) -> Result<Self> {
        Self::new(scheme, self.rows.clone())
    }
}

/// Scheme-specific score evaluator at a fixed θ.
#[derive(Debug, Clone, Copy)]
pub struct SchemeScoreEngine {
    scheme: Scheme,
    model: Model,
    cs_weight: bool,
}

impl SchemeScoreEngine {
    pub fn new(scheme: Scheme, family: Family, theta: &Theta) -> Result<Self> {
        if !scheme.supports(family) {
            return Err(Error::UnsupportedPairing {
                scheme: scheme.name(),
                family: family.name(),
            });
        }
        Ok(SchemeScoreEngine {
            scheme,
            model: family.at(theta)?,
            cs_weight: false,
        })
    }

    /// Weight current status test functions by `{F(c)(1 − F(c))}^{-1/2}`.
    pub fn with_cs_weight(mut self, on: bool) -> Self {
        self.cs_weight = on;
        self
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    fn window(&self, u: f64, v: f64) -> Result<f64> {
        let mass = self.model.mass(u, v);
        if mass < MIN_WINDOW_MASS {
            Err(Error::DegenerateWindow { u, v, mass })
        } else {
            Ok(mass)
        }
    }

    fn cs_scale(&self, c: f64) -> Result<f64> {
        if !self.cs_weight {
            return Ok(1.0);
        }
        let v = self.model.cdf(c) * self.model.sf(c);
        if v <= 0.0 {
            return Err(Error::Domain(format!("current status weight undefined at c = {c}")));
        }
        Ok(v.sqrt().recip())
    }

    /// Conditional score for the indicator test function at `t`.
    pub fn g_indicator(&self, row: &Row, t: f64) -> Result<f64> {
        let m = &self.model;
        let ind = |a: f64| if a <= t { 1.0 } else { 0.0 };
        match (self.scheme, *row) {
            (Scheme::Complete, Row::Exact { x }) => Ok(ind(x) - m.cdf(t)),
            (Scheme::CompleteHazard, Row::Exact { x }) => Ok(ind(x) - m.cumhaz(x.min(t))?),
            (Scheme::Ltrc, Row::Ltrc { y, u, delta }) => {
                let top = t.min(y);
                let comp = if top < u {
                    0.0
                } else {
                    m.cumhaz(top)? - m.cumhaz(u)?
                };
                Ok(if delta { ind(y) } else { 0.0 } - comp)
            }
            (Scheme::DoubleTrunc, Row::DoubleTrunc { x, u, v }) => {
                let w = self.window(u, v)?;
                let top = t.min(v);
                let part = if top < u { 0.0 } else { m.mass(u, top) };
                Ok(ind(x) - part / w)
            }
            (Scheme::CurrentStatus, Row::CurrentStatus { delta, c }) => {
                let d = if delta { 1.0 } else { 0.0 };
                Ok(ind(c) * (d - m.cdf(c)) * self.cs_scale(c)?)
            }
            _ => Err(self.mismatch(row)),
        }
    }

    /// Gradient in θ of [`Self::g_indicator`].
    pub fn g_indicator_grad(&self, row: &Row, t: f64) -> Result<Vec<f64>> {
        let m = &self.model;
        let p = m.dim();
        let neg = |v: Vec<f64>| v.into_iter().map(|a| -a).collect::<Vec<_>>();
        // dΛ/dθ = Ḟ / (1 − F)
        let haz_grad = |x: f64| -> Result<Vec<f64>> {
            m.cumhaz(x)?;
            let s = m.sf(x);
            Ok(m.cdf_grad(x).into_iter().map(|g| g / s).collect())
        };
        match (self.scheme, *row) {
            (Scheme::Complete, Row::Exact { .. }) => Ok(neg(m.cdf_grad(t))),
            (Scheme::CompleteHazard, Row::Exact { x }) => Ok(neg(haz_grad(x.min(t))?)),
            (Scheme::Ltrc, Row::Ltrc { y, u, .. }) => {
                let top = t.min(y);
                if top < u {
                    return Ok(vec![0.0; p]);
                }
                let (a, b) = (haz_grad(top)?, haz_grad(u)?);
                Ok(a.iter().zip(&b).map(|(a, b)| b - a).collect())
            }
            (Scheme::DoubleTrunc, Row::DoubleTrunc { u, v, .. }) => {
                let w = self.window(u, v)?;
                let top = t.min(v);
                if top < u {
                    return Ok(vec![0.0; p]);
                }
                let part = m.mass(u, top);
                let (gu, gt, gv) = (m.cdf_grad(u), m.cdf_grad(top), m.cdf_grad(v));
                Ok((0..p)
                    .map(|j| -((gt[j] - gu[j]) * w - part * (gv[j] - gu[j])) / (w * w))
                    .collect())
            }
            (Scheme::CurrentStatus, Row::CurrentStatus { delta, c }) => {
                if c > t {
                    return Ok(vec![0.0; p]);
                }
                let gf = m.cdf_grad(c);
                if !self.cs_weight {
                    return Ok(neg(gf));
                }
                // d/dθ [(δ − F) (F(1−F))^{-1/2}]
                let (f, s) = (m.cdf(c), m.sf(c));
                let d = if delta { 1.0 } else { 0.0 };
                let v = f * s;
                if v <= 0.0 {
                    return Err(Error::Domain(format!("current status weight undefined at c = {c}")));
                }
                let dv_df = 1.0 - 2.0 * f;
                Ok(gf
                    .iter()
                    .map(|g| {
                        -g / v.sqrt() - (d - f) * 0.5 * v.powf(-1.5) * dv_df * g
                    })
                    .collect())
            }
            _ => Err(self.mismatch(row)),
        }
    }

    /// Per-row conditional log-likelihood.
    pub fn conditional_loglik(&self, row: &Row) -> Result<f64> {
        let m = &self.model;
        match (self.scheme, *row) {
            (Scheme::Complete | Scheme::CompleteHazard, Row::Exact { x }) => m.ln_pdf(x),
            (Scheme::Ltrc, Row::Ltrc { y, u, delta }) => {
                let head = if delta { m.ln_pdf(y)? } else { -m.cumhaz(y)? };
                Ok(head + m.cumhaz(u)?)
            }
            (Scheme::DoubleTrunc, Row::DoubleTrunc { x, u, v }) => {
                Ok(m.ln_pdf(x)? - self.window(u, v)?.ln())
            }
            (Scheme::CurrentStatus, Row::CurrentStatus { delta, c }) => Ok(if delta {
                m.cdf(c).ln()
            } else {
                m.sf(c).ln()
            }),
            _ => Err(self.mismatch(row)),
        }
    }

    /// Gradient in θ of [`Self::conditional_loglik`].
    pub fn conditional_loglik_score(&self, row: &Row) -> Result<Vec<f64>> {
        let m = &self.model;
        match (self.scheme, *row) {
            (Scheme::Complete | Scheme::CompleteHazard, Row::Exact { x }) => m.score(x),
            (Scheme::Ltrc, Row::Ltrc { y, u, delta }) => {
                // ∂ log S = −Ḟ / S
                let dlog_sf = |x: f64| -> Result<Vec<f64>> {
                    m.cumhaz(x)?;
                    let s = m.sf(x);
                    Ok(m.cdf_grad(x).into_iter().map(|g| -g / s).collect())
                };
                let head = if delta { m.score(y)? } else { dlog_sf(y)? };
                let tail = dlog_sf(u)?;
                Ok(head.iter().zip(&tail).map(|(a, b)| a - b).collect())
            }
            (Scheme::DoubleTrunc, Row::DoubleTrunc { x, u, v }) => {
                if m.family() == Family::Exponential {
                    return self.dt_exponential_score(x, u, v);
                }
                let w = self.window(u, v)?;
                let (gu, gv) = (m.cdf_grad(u), m.cdf_grad(v));
                Ok(m.score(x)?
                    .iter()
                    .enumerate()
                    .map(|(j, s)| s - (gv[j] - gu[j]) / w)
                    .collect())
            }
            (Scheme::CurrentStatus, Row::CurrentStatus { delta, c }) => {
                let (f, s) = (m.cdf(c), m.sf(c));
                if f <= 0.0 || s <= 0.0 {
                    return Err(Error::Domain(format!(
                        "current status score undefined at c = {c}"
                    )));
                }
                let d = if delta { 1.0 } else { 0.0 };
                Ok(m.cdf_grad(c)
                    .into_iter()
                    .map(|g| g / (f * s) * (d - f))
                    .collect())
            }
            _ => Err(self.mismatch(row)),
        }
    }

    // 1/θ − x + (u e^{−θu} − v e^{−θv}) / (e^{−θu} − e^{−θv}), factored by e^{−θu}
    fn dt_exponential_score(&self, x: f64, u: f64, v: f64) -> Result<Vec<f64>> {
        self.window(u, v)?;
        let rate = self.model.theta().as_slice()[0];
        let u = u.max(0.0);
        let tail = if v == f64::INFINITY {
            u
        } else {
            let d = v - u;
            let r = (-rate * d).exp();
            (u - v * r) / -(-rate * d).exp_m1()
        };
        Ok(vec![1.0 / rate - x + tail])
    }

    /// Points in `(0, 1)`, on the `F_θ` scale, where `t ↦ g_t(row)` is not smooth.
    pub fn breakpoints(&self, row: &Row) -> Vec<f64> {
        let m = &self.model;
        let pts: Vec<f64> = match *row {
            Row::Exact { x } => vec![m.cdf(x)],
            Row::Ltrc { y, u, .. } => vec![m.cdf(y), m.cdf(u)],
            Row::DoubleTrunc { x, u, v } => vec![m.cdf(x), m.cdf(u), m.cdf(v)],
            Row::CurrentStatus { c, .. } => vec![m.cdf(c)],
        };
        pts.into_iter().filter(|s| *s > 0.0 && *s < 1.0).collect()
    }

    fn mismatch(&self, row: &Row) -> Error {
        Error::Validation(vec![RowIssue {
            row: 0,
            message: format!("record {row:?} does not match scheme {}", self.scheme),
        }])
    }
}
