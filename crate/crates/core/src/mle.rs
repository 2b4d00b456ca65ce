//! Maximum likelihood under each observation scheme.
//!
//! Complete exponential data use the closed form `θ̂ = 1 / x̄`. Everything
//! else runs a damped Newton iteration on `η = log θ` (all parameters are
//! positive), with step halving so the summed log-likelihood never
//! decreases. The Hessian in `η` is a central difference of the analytic
//! score; when it is not negative definite the outer-product matrix is used
//! instead.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::families::{Family, Theta};
use crate::schemes::{ObservedSample, Row, Scheme, SchemeScoreEngine};

#[derive(Debug, Clone)]
pub struct MleOptions {
    pub max_iter: usize,
    /// Stop when `‖E_n[l_θ]‖∞` falls below this.
    pub tol: f64,
    /// Run Newton even where a closed form exists.
    pub force_newton: bool,
}

impl Default for MleOptions {
    fn default() -> Self {
        MleOptions {
            max_iter: 100,
            tol: 1e-9,
            force_newton: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub theta_hat: Theta,
    /// `n × p` matrix of per-row scores at `theta_hat`.
    pub scores: DMatrix<f64>,
    /// Outer-product Fisher estimate `LᵀL / n`.
    pub fisher: DMatrix<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// `‖E_n[l_θ̂]‖∞`.
    pub grad_norm: f64,
    /// Mean log-likelihood at `theta_hat`.
    pub loglik: f64,
    /// Mean log-likelihood after every ascent step, starting point first.
    pub trace: Vec<f64>,
}

/// Per-row conditional scores at `theta`.
pub fn score_matrix(sample: &ObservedSample, family: Family, theta: &Theta) -> Result<DMatrix<f64>> {
    let engine = SchemeScoreEngine::new(sample.scheme(), family, theta)?;
    let p = family.dim();
    let mut out = DMatrix::zeros(sample.len(), p);
    for (i, row) in sample.rows().iter().enumerate() {
        let s = engine.conditional_loglik_score(row)?;
        for j in 0..p {
            out[(i, j)] = s[j];
        }
    }
    Ok(out)
}

pub fn mean_loglik(sample: &ObservedSample, family: Family, theta: &Theta) -> Result<f64> {
    let engine = SchemeScoreEngine::new(sample.scheme(), family, theta)?;
    let mut acc = 0.0;
    for row in sample.rows() {
        acc += engine.conditional_loglik(row)?;
    }
    Ok(acc / sample.len() as f64)
}

fn column_means(m: &DMatrix<f64>) -> DVector<f64> {
    let n = m.nrows() as f64;
    DVector::from_iterator(m.ncols(), m.column_iter().map(|c| c.sum() / n))
}

/// Fit θ by maximum likelihood.
pub fn fit_mle(
    sample: &ObservedSample,
    family: Family,
    init: Option<&Theta>,
    opts: &MleOptions,
) -> Result<FitResult> {
    let scheme = sample.scheme();
    if !scheme.supports(family) {
        return Err(Error::UnsupportedPairing {
            scheme: scheme.name(),
            family: family.name(),
        });
    }
    check_identifiable(sample)?;

    if family == Family::Exponential
        && matches!(scheme, Scheme::Complete | Scheme::CompleteHazard)
        && !opts.force_newton
    {
        let mean = sample.rows().iter().map(Row::outcome).sum::<f64>() / sample.len() as f64;
        if !(mean > 0.0) {
            return Err(Error::NonIdentifiable(format!("sample mean {mean} is not positive")));
        }
        let theta = Theta::scalar(1.0 / mean);
        return finish(sample, family, theta, 0, Vec::new(), opts);
    }

    let start = match init {
        Some(t) => {
            family.at(t)?;
            t.clone()
        }
        None => default_init(sample, family)?,
    };
    newton(sample, family, start, opts)
}

fn check_identifiable(sample: &ObservedSample) -> Result<()> {
    let rows = sample.rows();
    match sample.scheme() {
        Scheme::Ltrc => {
            if !rows.iter().any(|r| matches!(r, Row::Ltrc { delta: true, .. })) {
                return Err(Error::NonIdentifiable("every LTRC row is censored".into()));
            }
        }
        Scheme::CurrentStatus => {
            let events = rows
                .iter()
                .filter(|r| matches!(r, Row::CurrentStatus { delta: true, .. }))
                .count();
            if events == 0 || events == rows.len() {
                return Err(Error::NonIdentifiable(
                    "current status indicators are all equal".into(),
                ));
            }
        }
        _ => {}
    }
    Ok(())
}

fn default_init(sample: &ObservedSample, family: Family) -> Result<Theta> {
    let xs: Vec<f64> = sample.rows().iter().map(Row::outcome).collect();
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let clamp = |v: f64| if v.is_finite() { v.clamp(1e-6, 1e6) } else { 1.0 };
    let theta = match family {
        Family::Exponential => Theta::scalar(clamp(1.0 / mean)),
        Family::Gamma => Theta::new(vec![clamp(mean * mean / var), clamp(var / mean)]),
        Family::Weibull => Theta::new(vec![1.0, clamp(mean)]),
    };
    Ok(theta)
}

fn from_eta(eta: &DVector<f64>) -> Theta {
    Theta::new(eta.iter().map(|e| e.exp()).collect())
}

/// Mean score with respect to `η = log θ`.
fn eta_gradient(sample: &ObservedSample, family: Family, eta: &DVector<f64>) -> Result<DVector<f64>> {
    let theta = from_eta(eta);
    let g = column_means(&score_matrix(sample, family, &theta)?);
    Ok(g.component_mul(&eta.map(f64::exp)))
}

fn newton(
    sample: &ObservedSample,
    family: Family,
    start: Theta,
    opts: &MleOptions,
) -> Result<FitResult> {
    let p = family.dim();
    let mut eta = DVector::from_iterator(p, start.as_slice().iter().map(|t| t.ln()));
    let mut ll = mean_loglik(sample, family, &start)?;
    let mut trace = vec![ll];
    let mut grad_norm = f64::INFINITY;

    for iter in 0..opts.max_iter {
        let theta = from_eta(&eta);
        let scores = score_matrix(sample, family, &theta)?;
        let g_theta = column_means(&scores);
        grad_norm = g_theta.amax();
        if grad_norm <= opts.tol {
            return finish(sample, family, theta, iter, trace, opts);
        }
        let g = g_theta.component_mul(&eta.map(f64::exp));

        // negative Hessian of the mean log-likelihood in η
        let h = 1e-5;
        let mut neg_hess = DMatrix::zeros(p, p);
        for j in 0..p {
            let mut up = eta.clone();
            let mut dn = eta.clone();
            up[j] += h;
            dn[j] -= h;
            let col = (eta_gradient(sample, family, &up)? - eta_gradient(sample, family, &dn)?)
                / (2.0 * h);
            neg_hess.set_column(j, &(-col));
        }
        let neg_hess = (&neg_hess + neg_hess.transpose()) * 0.5;
        let direction = match neg_hess.clone().cholesky() {
            Some(ch) => ch.solve(&g),
            None => {
                // outer product in η coordinates
                let scale = eta.map(f64::exp);
                let mut l_eta = scores.clone();
                for j in 0..p {
                    l_eta.column_mut(j).scale_mut(scale[j]);
                }
                let opg = l_eta.transpose() * &l_eta / sample.len() as f64;
                match opg.cholesky() {
                    Some(ch) => ch.solve(&g),
                    None => g.clone(),
                }
            }
        };

        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let cand = &eta + &direction * step;
            let cand_theta = from_eta(&cand);
            if family.at(&cand_theta).is_ok() {
                if let Ok(cand_ll) = mean_loglik(sample, family, &cand_theta) {
                    if cand_ll.is_finite() && cand_ll >= ll {
                        eta = cand;
                        ll = cand_ll;
                        trace.push(ll);
                        accepted = true;
                        break;
                    }
                    // objective flat to roundoff: fall back to the score norm
                    if cand_ll >= ll - 1e-13 * ll.abs().max(1.0)
                        && column_means(&score_matrix(sample, family, &cand_theta)?).amax() < grad_norm
                    {
                        eta = cand;
                        accepted = true;
                        break;
                    }
                }
            }
            step *= 0.5;
        }
        if !accepted {
            // roundoff floor of the objective: accept if already stationary to 1e-7
            if grad_norm <= 1e-7 {
                return finish(sample, family, theta, iter, trace, opts);
            }
            return Err(Error::NonConvergence {
                iterations: iter,
                grad_norm,
                trace,
            });
        }
    }

    let theta = from_eta(&eta);
    let g = column_means(&score_matrix(sample, family, &theta)?).amax();
    if g <= opts.tol {
        return finish(sample, family, theta, opts.max_iter, trace, opts);
    }
    Err(Error::NonConvergence {
        iterations: opts.max_iter,
        grad_norm: g.min(grad_norm),
        trace,
    })
}

fn finish(
    sample: &ObservedSample,
    family: Family,
    theta: Theta,
    iterations: usize,
    mut trace: Vec<f64>,
    opts: &MleOptions,
) -> Result<FitResult> {
    let scores = score_matrix(sample, family, &theta)?;
    let n = sample.len() as f64;
    let fisher = scores.transpose() * &scores / n;
    let grad_norm = column_means(&scores).amax();
    let loglik = mean_loglik(sample, family, &theta)?;
    if trace.is_empty() {
        trace.push(loglik);
    }
    Ok(FitResult {
        theta_hat: theta,
        scores,
        fisher,
        converged: grad_norm <= opts.tol.max(1e-7),
        iterations,
        grad_norm,
        loglik,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn exp_draw(rng: &mut ChaCha8Rng, rate: f64) -> f64 {
        -(1.0 - rng.random::<f64>()).ln() / rate
    }

    #[test]
    fn complete_closed_form() {
        let s = ObservedSample::complete(&[1.0, 2.0, 3.0]).unwrap();
        let fit = fit_mle(&s, Family::Exponential, None, &MleOptions::default()).unwrap();
        assert_eq!(fit.theta_hat.as_slice(), &[0.5]);
        assert!(fit.converged);
        assert!(fit.grad_norm < 1e-12);
    }

    #[test]
    fn newton_matches_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let xs: Vec<f64> = (0..200).map(|_| exp_draw(&mut rng, 1.7)).collect();
        let s = ObservedSample::complete(&xs).unwrap();
        let closed = fit_mle(&s, Family::Exponential, None, &MleOptions::default()).unwrap();
        let forced = MleOptions {
            force_newton: true,
            ..Default::default()
        };
        let newton = fit_mle(&s, Family::Exponential, None, &forced).unwrap();
        let (a, b) = (closed.theta_hat.as_slice()[0], newton.theta_hat.as_slice()[0]);
        assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        for w in newton.trace.windows(2) {
            assert!(w[1] >= w[0]);
        }
    }

    #[test]
    fn score_matrix_zero_at_inverse_rate() {
        let s = ObservedSample::complete(&[1.0, 1.0, 1.0]).unwrap();
        let l = score_matrix(&s, Family::Exponential, &Theta::scalar(1.0)).unwrap();
        assert_eq!(l, DMatrix::zeros(3, 1));
    }

    #[test]
    fn ltrc_matches_closed_form_and_rejects_all_censored() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut rows = Vec::new();
        while rows.len() < 400 {
            let x = exp_draw(&mut rng, 0.8);
            let u: f64 = rng.random::<f64>();
            let c = u + exp_draw(&mut rng, 0.5);
            if u <= x.min(c) {
                rows.push(Row::Ltrc { y: x.min(c), u, delta: x <= c });
            }
        }
        let events = rows.iter().filter(|r| matches!(r, Row::Ltrc { delta: true, .. })).count();
        let exposure: f64 = rows
            .iter()
            .map(|r| match r {
                Row::Ltrc { y, u, .. } => y - u.max(0.0),
                _ => unreachable!(),
            })
            .sum();
        let s = ObservedSample::new(Scheme::Ltrc, rows.clone()).unwrap();
        let fit = fit_mle(&s, Family::Exponential, None, &MleOptions::default()).unwrap();
        assert!((fit.theta_hat.as_slice()[0] - events as f64 / exposure).abs() < 1e-9);
        for w in fit.trace.windows(2) {
            assert!(w[1] >= w[0]);
        }

        let censored: Vec<Row> = rows
            .into_iter()
            .map(|r| match r {
                Row::Ltrc { y, u, .. } => Row::Ltrc { y, u, delta: false },
                r => r,
            })
            .collect();
        let s = ObservedSample::new(Scheme::Ltrc, censored).unwrap();
        assert!(matches!(
            fit_mle(&s, Family::Exponential, None, &MleOptions::default()),
            Err(Error::NonIdentifiable(_))
        ));
    }

    #[test]
    fn dt_consistency_and_grid_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut rows = Vec::new();
        while rows.len() < 5000 {
            let x = exp_draw(&mut rng, 1.0);
            let u = exp_draw(&mut rng, 1.0) - 1.0;
            let v = u + 4.0;
            if u <= x && x <= v {
                rows.push(Row::DoubleTrunc { x, u, v });
            }
        }
        let s = ObservedSample::new(Scheme::DoubleTrunc, rows).unwrap();
        let fit = fit_mle(&s, Family::Exponential, None, &MleOptions::default()).unwrap();
        let th = fit.theta_hat.as_slice()[0];
        assert!((th - 1.0).abs() < 0.1, "{th}");
        assert!(fit.converged);

        // oracle: golden-section search on the log-likelihood
        let f = |t: f64| mean_loglik(&s, Family::Exponential, &Theta::scalar(t)).unwrap();
        let (mut a, mut b) = (0.5, 2.0);
        let r = (5f64.sqrt() - 1.0) / 2.0;
        while b - a > 1e-7 {
            let c = b - r * (b - a);
            let d = a + r * (b - a);
            if f(c) > f(d) {
                b = d
            } else {
                a = c
            }
        }
        assert!((th - 0.5 * (a + b)).abs() < 1e-4);

        let means = column_means(&fit.scores);
        assert!(means.amax() <= 1e-7);
        assert!(fit.fisher[(0, 0)] > 1e-10);
    }

    #[test]
    fn permutation_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut rows = Vec::new();
        while rows.len() < 300 {
            let x = exp_draw(&mut rng, 1.3);
            let u = exp_draw(&mut rng, 1.0) - 0.5;
            let v = u + 3.5;
            if u <= x && x <= v {
                rows.push(Row::DoubleTrunc { x, u, v });
            }
        }
        let s1 = ObservedSample::new(Scheme::DoubleTrunc, rows.clone()).unwrap();
        rows.reverse();
        rows.swap(0, 17);
        let s2 = ObservedSample::new(Scheme::DoubleTrunc, rows).unwrap();
        let opts = MleOptions::default();
        let a = fit_mle(&s1, Family::Exponential, None, &opts).unwrap().theta_hat.as_slice()[0];
        let b = fit_mle(&s2, Family::Exponential, None, &opts).unwrap().theta_hat.as_slice()[0];
        assert!((a - b).abs() < 1e-10);
    }

    #[test]
    fn current_status_and_two_parameter_fits() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let rows: Vec<Row> = (0..2000)
            .map(|_| {
                let x = exp_draw(&mut rng, 2.0);
                let c = exp_draw(&mut rng, 1.0);
                Row::CurrentStatus { delta: x <= c, c }
            })
            .collect();
        let s = ObservedSample::new(Scheme::CurrentStatus, rows).unwrap();
        let fit = fit_mle(&s, Family::Exponential, None, &MleOptions::default()).unwrap();
        assert!((fit.theta_hat.as_slice()[0] - 2.0).abs() < 0.3);
        assert!(fit.grad_norm <= 1e-7);

        let gamma = rand_distr::Gamma::new(2.5, 0.8).unwrap();
        let xs: Vec<f64> = (0..3000).map(|_| rng.sample(gamma)).collect();
        let s = ObservedSample::complete(&xs).unwrap();
        for fam in [Family::Gamma, Family::Weibull] {
            let fit = fit_mle(&s, fam, None, &MleOptions::default()).unwrap();
            assert!(fit.converged, "{fam}");
            assert!(fit.fisher.clone().symmetric_eigenvalues().min() > 1e-10);
            for w in fit.trace.windows(2) {
                assert!(w[1] >= w[0]);
            }
        }
        let fit = fit_mle(&s, Family::Gamma, None, &MleOptions::default()).unwrap();
        assert!((fit.theta_hat.as_slice()[0] - 2.5).abs() < 0.25);
    }
}
