//! Parametric null families.
//!
//! A [`Family`] names a model `{F_θ}`; pairing it with an admissible
//! [`Theta`] yields a [`Model`], whose evaluators are infallible where the
//! math allows and return [`Error`] otherwise.
//!
//! Parameterisation (every component strictly positive):
//! - exponential: `[rate]`
//! - gamma: `[shape, scale]`
//! - weibull: `[shape, scale]`

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, gamma_lr, gamma_ur, ln_gamma};

use crate::error::{Error, Result};

/// `1 - F` below this is treated as saturated.
pub const SATURATION_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Exponential,
    Gamma,
    Weibull,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Exponential => "exponential",
            Family::Gamma => "gamma",
            Family::Weibull => "weibull",
        }
    }

    /// Number of free parameters `p`.
    pub fn dim(self) -> usize {
        match self {
            Family::Exponential => 1,
            Family::Gamma | Family::Weibull => 2,
        }
    }

    /// Lower bound of the support; every family here lives on `[0, ∞)`.
    pub fn support_lower(self) -> f64 {
        0.0
    }

    /// Validate `theta` and bind it to this family.
    pub fn at(self, theta: &Theta) -> Result<Model> {
        let v = theta.as_slice();
        if v.len() != self.dim() {
            return Err(Error::ParameterDomain {
                family: self.name(),
                detail: format!("expected {} parameters, got {}", self.dim(), v.len()),
            });
        }
        if let Some(bad) = v.iter().find(|x| !(x.is_finite() && **x > 0.0)) {
            return Err(Error::ParameterDomain {
                family: self.name(),
                detail: format!("parameters must be finite and > 0, got {bad}"),
            });
        }
        let (a, b) = match self {
            Family::Exponential => (v[0], 1.0),
            Family::Gamma | Family::Weibull => (v[0], v[1]),
        };
        Ok(Model { family: self, a, b })
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "exponential" | "exp" => Ok(Family::Exponential),
            "gamma" => Ok(Family::Gamma),
            "weibull" => Ok(Family::Weibull),
            other => Err(Error::Config(format!("unknown family '{other}'"))),
        }
    }
}

/// Parameter vector θ. Admissibility is checked by [`Family::at`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Theta(Vec<f64>);

impl Theta {
    pub fn new(values: Vec<f64>) -> Self {
        Theta(values)
    }

    pub fn scalar(value: f64) -> Self {
        Theta(vec![value])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl From<Vec<f64>> for Theta {
    fn from(v: Vec<f64>) -> Self {
        Theta(v)
    }
}

/// A family evaluated at an admissible θ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Model {
    family: Family,
    // exponential: a = rate; gamma/weibull: a = shape, b = scale
    a: f64,
    b: f64,
}

impl Model {
    pub fn family(&self) -> Family {
        self.family
    }

    pub fn theta(&self) -> Theta {
        match self.family {
            Family::Exponential => Theta(vec![self.a]),
            _ => Theta(vec![self.a, self.b]),
        }
    }

    pub fn dim(&self) -> usize {
        self.family.dim()
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        if x == f64::INFINITY {
            return 1.0;
        }
        match self.family {
            Family::Exponential => -(-self.a * x).exp_m1(),
            Family::Gamma => gamma_lr(self.a, x / self.b),
            Family::Weibull => -(-(x / self.b).powf(self.a)).exp_m1(),
        }
    }

    /// Survival function `1 - F(x)`, computed without cancellation.
    pub fn sf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 1.0;
        }
        if x == f64::INFINITY {
            return 0.0;
        }
        match self.family {
            Family::Exponential => (-self.a * x).exp(),
            Family::Gamma => gamma_ur(self.a, x / self.b),
            Family::Weibull => (-(x / self.b).powf(self.a)).exp(),
        }
    }

    /// `F(b) - F(a)` for `a <= b`, taking differences on the tail that keeps precision.
    pub fn mass(&self, a: f64, b: f64) -> f64 {
        if self.cdf(a) > 0.5 {
            self.sf(a) - self.sf(b)
        } else {
            self.cdf(b) - self.cdf(a)
        }
    }

    pub fn pdf(&self, x: f64) -> f64 {
        match self.ln_pdf(x) {
            Ok(v) => v.exp(),
            Err(_) => 0.0,
        }
    }

    pub fn ln_pdf(&self, x: f64) -> Result<f64> {
        if !(x.is_finite() && x >= 0.0) {
            return Err(Error::Domain(format!(
                "x = {x} outside {} support",
                self.family
            )));
        }
        let v = match self.family {
            Family::Exponential => self.a.ln() - self.a * x,
            Family::Gamma => {
                let (k, s) = (self.a, self.b);
                (k - 1.0) * x.ln() - x / s - ln_gamma(k) - k * s.ln()
            }
            Family::Weibull => {
                let (k, lam) = (self.a, self.b);
                let z = x / lam;
                k.ln() - lam.ln() + (k - 1.0) * z.ln() - z.powf(k)
            }
        };
        if v.is_nan() || v == f64::INFINITY {
            return Err(Error::Domain(format!(
                "log density undefined at x = {x} for {}",
                self.family
            )));
        }
        Ok(v)
    }

    /// Cumulative hazard `-log(1 - F(x))`.
    pub fn cumhaz(&self, x: f64) -> Result<f64> {
        if x <= 0.0 {
            return Ok(0.0);
        }
        match self.family {
            Family::Exponential if x.is_finite() => {
                let h = self.a * x;
                if h > -SATURATION_FLOOR.ln() {
                    Err(Error::Saturation { x })
                } else {
                    Ok(h)
                }
            }
            Family::Weibull if x.is_finite() => {
                let h = (x / self.b).powf(self.a);
                if h > -SATURATION_FLOOR.ln() {
                    Err(Error::Saturation { x })
                } else {
                    Ok(h)
                }
            }
            _ => {
                let s = self.sf(x);
                if s < SATURATION_FLOOR {
                    Err(Error::Saturation { x })
                } else {
                    Ok(-s.ln())
                }
            }
        }
    }

    pub fn quantile(&self, s: f64) -> Result<f64> {
        if !(s > 0.0 && s < 1.0) {
            return Err(Error::Domain(format!("quantile level {s} not in (0, 1)")));
        }
        Ok(match self.family {
            Family::Exponential => -(-s).ln_1p() / self.a,
            Family::Weibull => self.b * (-(-s).ln_1p()).powf(1.0 / self.a),
            Family::Gamma => self.b * gamma_quantile_unit(self.a, s),
        })
    }

    /// Gradient in θ of `log f_θ(x)`.
    pub fn score(&self, x: f64) -> Result<Vec<f64>> {
        if !(x.is_finite() && x >= 0.0) || self.pdf(x) <= 0.0 {
            return Err(Error::Domain(format!(
                "score undefined at x = {x} for {}",
                self.family
            )));
        }
        Ok(match self.family {
            Family::Exponential => vec![1.0 / self.a - x],
            Family::Gamma => {
                let (k, s) = (self.a, self.b);
                vec![(x / s).ln() - digamma(k), (x / s - k) / s]
            }
            Family::Weibull => {
                let (k, lam) = (self.a, self.b);
                let z = x / lam;
                let lz = z.ln();
                let zk = z.powf(k);
                vec![1.0 / k + lz - zk * lz, k / lam * (zk - 1.0)]
            }
        })
    }

    /// Gradient in θ of `F_θ(x)`.
    pub fn cdf_grad(&self, x: f64) -> Vec<f64> {
        if x <= 0.0 || x == f64::INFINITY {
            return vec![0.0; self.dim()];
        }
        match self.family {
            Family::Exponential => vec![x * (-self.a * x).exp()],
            Family::Weibull => {
                let (k, lam) = (self.a, self.b);
                let z = x / lam;
                let zk = z.powf(k);
                let e = (-zk).exp() * zk;
                vec![e * z.ln(), -e * k / lam]
            }
            Family::Gamma => {
                let (k, s) = (self.a, self.b);
                // no closed form in the shape; central difference on the
                // regularized incomplete gamma
                let h = 1e-6 * k.max(1e-3);
                let d_shape = (gamma_lr(k + h, x / s) - gamma_lr(k - h, x / s)) / (2.0 * h);
                vec![d_shape, -self.pdf(x) * x / s]
            }
        }
    }
}

/// Quantile of Gamma(shape, 1): safeguarded Newton on the cdf, falling back
/// to bisection whenever a step leaves the bracket.
fn gamma_quantile_unit(shape: f64, s: f64) -> f64 {
    let unit = Model {
        family: Family::Gamma,
        a: shape,
        b: 1.0,
    };
    let mut lo = 0.0_f64;
    let mut hi = shape.max(1.0);
    while unit.cdf(hi) < s {
        lo = hi;
        hi *= 2.0;
    }
    // Wilson-Hilferty start
    let z = statrs::function::erf::erfc_inv(2.0 * s) * -std::f64::consts::SQRT_2;
    let c = 1.0 / (9.0 * shape);
    let wh = shape * (1.0 - c + z * c.sqrt()).powi(3);
    let mut x = if wh > lo && wh < hi { wh } else { 0.5 * (lo + hi) };

    for _ in 0..200 {
        let fx = unit.cdf(x) - s;
        if fx == 0.0 {
            return x;
        }
        if fx < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let dens = unit.pdf(x);
        let mut next = if dens > 0.0 { x - fx / dens } else { f64::NAN };
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - x).abs() <= 1e-15 * x.max(1e-300) || hi - lo <= 1e-15 * hi {
            return next;
        }
        x = next;
    }
    x
}
