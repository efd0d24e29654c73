//! Variance of an exponential-moving-average estimator on a scalar Gaussian
//! model: closed form and Monte Carlo check.
//!
//! The baseline draws a fresh sample `X_t = μ + ε_t` each step. The smoothed
//! estimator starts from one sample and then mixes in each new one,
//! `Y_t = α·(μ + ε_t) + (1 − α)·Y_{t−1}`.
//!
//! Note the direction of `α` here: it weights the *new* sample. The prompt
//! optimizer's mixture uses the opposite convention, where `α` decays older
//! records (see [`crate::optimizer::momentum_weights`]).

use std::io::Write;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{domain, RandomStream};

#[derive(Debug, Error)]
pub enum VarianceError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmaModel {
    mu: f64,
    sigma: f64,
    alpha: f64,
    horizon: usize,
    #[serde(skip)]
    allow_zero_sigma: bool,
}

impl EmaModel {
    pub fn new(mu: f64, sigma: f64, alpha: f64, horizon: usize) -> Result<Self, VarianceError> {
        let m = Self {
            mu,
            sigma,
            alpha,
            horizon,
            allow_zero_sigma: false,
        };
        m.validate()?;
        Ok(m)
    }

    /// A model with `σ = 0`, for exercising the noiseless boundary.
    #[doc(hidden)]
    pub fn noiseless(mu: f64, alpha: f64, horizon: usize) -> Result<Self, VarianceError> {
        let m = Self {
            mu,
            sigma: 0.0,
            alpha,
            horizon,
            allow_zero_sigma: true,
        };
        m.validate()?;
        Ok(m)
    }

    fn validate(&self) -> Result<(), VarianceError> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(VarianceError::Domain(format!(
                "alpha must lie in (0, 1], got {}",
                self.alpha
            )));
        }
        let sigma_ok = if self.allow_zero_sigma {
            self.sigma >= 0.0
        } else {
            self.sigma > 0.0
        };
        if !sigma_ok || !self.sigma.is_finite() {
            return Err(VarianceError::Domain(format!(
                "sigma must be positive and finite, got {}",
                self.sigma
            )));
        }
        if !self.mu.is_finite() {
            return Err(VarianceError::Domain("mu must be finite".into()));
        }
        Ok(())
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }
    pub fn sigma(&self) -> f64 {
        self.sigma
    }
    pub fn alpha(&self) -> f64 {
        self.alpha
    }
    pub fn horizon(&self) -> usize {
        self.horizon
    }
}

/// `σ²·[α/(2−α) + 2/(2−α)·(1−α)^(2t+1)]`, the mean squared error of `Y_t`.
pub fn ema_mse_theory(model: &EmaModel) -> Result<f64, VarianceError> {
    model.validate()?;
    let a = model.alpha;
    let decay = (1.0 - a).powi(2 * model.horizon as i32 + 1);
    Ok(model.sigma * model.sigma * (a / (2.0 - a) + 2.0 / (2.0 - a) * decay))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Simulation {
    pub trials: usize,
    /// Mean of `(Y_t − μ)²` over trials.
    pub empirical_mse: f64,
    /// Standard error of `empirical_mse`.
    pub std_error: f64,
    /// Mean of `Y_t` over trials.
    pub mean: f64,
    /// Standard error of `mean`.
    pub mean_std_error: f64,
}

const CHUNK: usize = 4096;

#[derive(Default, Clone, Copy)]
struct Moments {
    n: usize,
    err: f64,
    sq: f64,
    sq2: f64,
}

/// Runs `trials` independent trajectories of length `t + 1`.
///
/// Trials are processed in fixed chunks, each with its own substream of
/// `rng`, and reduced in chunk order, so the result is bit-identical for a
/// given seed regardless of thread count.
pub fn simulate_ema(
    model: &EmaModel,
    trials: usize,
    rng: &RandomStream,
) -> Result<Simulation, VarianceError> {
    model.validate()?;
    if trials == 0 {
        return Err(VarianceError::Domain("trials must be at least 1".into()));
    }
    let chunks = trials.div_ceil(CHUNK);
    let partial: Vec<Moments> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut stream = rng.substream(&[domain::TRIAL, c as u64]);
            let n = CHUNK.min(trials - c * CHUNK);
            let mut m = Moments {
                n,
                ..Moments::default()
            };
            for _ in 0..n {
                let e = trajectory_error(model, &mut stream);
                m.err += e;
                m.sq += e * e;
                m.sq2 += e * e * e * e;
            }
            m
        })
        .collect();
    let total = partial.iter().fold(Moments::default(), |acc, m| Moments {
        n: acc.n + m.n,
        err: acc.err + m.err,
        sq: acc.sq + m.sq,
        sq2: acc.sq2 + m.sq2,
    });
    let n = total.n as f64;
    let mse = total.sq / n;
    let mean_err = total.err / n;
    let se = |mean: f64, mean_sq: f64| {
        if total.n < 2 {
            0.0
        } else {
            ((mean_sq - mean * mean).max(0.0) * n / (n - 1.0) / n).sqrt()
        }
    };
    Ok(Simulation {
        trials,
        empirical_mse: mse,
        std_error: se(mse, total.sq2 / n),
        mean: model.mu + mean_err,
        mean_std_error: se(mean_err, mse),
    })
}

/// `Y_t − μ` for one trajectory. Tracking the deviation keeps the noiseless
/// case exactly zero.
fn trajectory_error(model: &EmaModel, rng: &mut RandomStream) -> f64 {
    let mut noise = || -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        model.sigma * z
    };
    let mut e = noise();
    for _ in 0..model.horizon {
        e = model.alpha * noise() + (1.0 - model.alpha) * e;
    }
    e
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceRow {
    pub alpha: f64,
    pub t: usize,
    pub theory_mse: f64,
    pub empirical_mse: f64,
    pub std_error: f64,
    pub baseline_mse: f64,
    /// `|empirical − theory| > 4·std_error`.
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceReport {
    pub convention: String,
    pub sigma: f64,
    pub trials: usize,
    pub seed: u64,
    pub rows: Vec<VarianceRow>,
}

pub const FLAG_SIGMAS: f64 = 4.0;

const CONVENTION: &str = "alpha weights the newest sample: Y_t = alpha*X_t + (1-alpha)*Y_(t-1). \
The prompt optimizer's alpha instead decays older prompts: w_tau proportional to alpha^(t-tau).";

/// Theory and simulation over the full `alphas × horizons` grid, rows in
/// alpha-major order.
pub fn variance_report(
    alphas: &[f64],
    horizons: &[usize],
    sigma: f64,
    trials: usize,
    rng: &RandomStream,
) -> Result<VarianceReport, VarianceError> {
    if alphas.is_empty() || horizons.is_empty() {
        return Err(VarianceError::Domain(
            "alpha and horizon grids must be nonempty".into(),
        ));
    }
    let mut rows = Vec::with_capacity(alphas.len() * horizons.len());
    for (i, &alpha) in alphas.iter().enumerate() {
        for (j, &t) in horizons.iter().enumerate() {
            let model = EmaModel::new(0.0, sigma, alpha, t)?;
            let theory = ema_mse_theory(&model)?;
            let cell = rng.substream(&[domain::CELL, i as u64, j as u64]);
            let sim = simulate_ema(&model, trials, &cell)?;
            rows.push(VarianceRow {
                alpha,
                t,
                theory_mse: theory,
                empirical_mse: sim.empirical_mse,
                std_error: sim.std_error,
                baseline_mse: sigma * sigma,
                flagged: (sim.empirical_mse - theory).abs() > FLAG_SIGMAS * sim.std_error,
            });
        }
    }
    Ok(VarianceReport {
        convention: CONVENTION.into(),
        sigma,
        trials,
        seed: rng.key(),
        rows,
    })
}

impl VarianceReport {
    pub fn flagged(&self) -> usize {
        self.rows.iter().filter(|r| r.flagged).count()
    }

    pub fn write_csv(&self, out: impl Write) -> Result<(), VarianceError> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_summary(&self, out: impl Write) -> Result<(), VarianceError> {
        serde_json::to_writer_pretty(out, self)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Variance of `(1−α)^t ε_0 + α Σ_{k=1..t} (1−α)^(t−k) ε_k`, summed term
    /// by term.
    fn finite_sum(alpha: f64, t: usize, sigma: f64) -> f64 {
        let r = (1.0 - alpha) * (1.0 - alpha);
        let mut s = r.powi(t as i32);
        for k in 1..=t {
            s += alpha * alpha * r.powi((t - k) as i32);
        }
        s * sigma * sigma
    }

    fn theory(alpha: f64, t: usize, sigma: f64) -> f64 {
        ema_mse_theory(&EmaModel::new(0.0, sigma, alpha, t).unwrap()).unwrap()
    }

    #[test]
    fn closed_form_spot_values() {
        for t in [0, 1, 7, 50] {
            assert!((theory(1.0, t, 1.0) - 1.0).abs() < 1e-15);
        }
        for a in [0.1, 0.5, 0.9] {
            assert!((theory(a, 0, 1.0) - 1.0).abs() < 1e-15);
        }
        assert!((theory(0.5, 10, 1.0) - 0.333334).abs() < 1e-6);
        assert!((theory(0.5, 10, 1.0) - finite_sum(0.5, 10, 1.0)).abs() < 1e-15);
        assert!((theory(0.5, 3, 2.0) - 4.0 * theory(0.5, 3, 1.0)).abs() < 1e-12);
    }

    #[test]
    fn closed_form_matches_finite_sum_on_grid() {
        for i in 1..=20 {
            let a = i as f64 / 20.0;
            for t in 0..=60 {
                assert!(
                    (theory(a, t, 1.0) - finite_sum(a, t, 1.0)).abs() < 1e-12,
                    "{a} {t}"
                );
            }
        }
    }

    #[test]
    fn strict_reduction_below_baseline() {
        for t in 1..=40 {
            for i in 1..100 {
                assert!(theory(i as f64 / 100.0, t, 1.0) < 1.0);
            }
        }
    }

    // The stationary term a/(2-a) rises with alpha, but for finite t the
    // start-up term dominates near alpha = 0, so the full curve is a valley.
    #[test]
    fn unimodal_in_alpha_with_shrinking_minimizer() {
        let stationary: Vec<f64> = (1..100)
            .map(|i| i as f64 / 100.0)
            .map(|a| a / (2.0 - a))
            .collect();
        assert!(stationary.windows(2).all(|w| w[0] < w[1]));
        let mut prev_min = usize::MAX;
        for t in 1..=60 {
            let curve: Vec<f64> = (1..100).map(|i| theory(i as f64 / 100.0, t, 1.0)).collect();
            let m = (0..curve.len())
                .min_by(|&a, &b| curve[a].total_cmp(&curve[b]))
                .unwrap();
            assert!(curve[..=m].windows(2).all(|w| w[0] > w[1]), "t {t}");
            assert!(curve[m..].windows(2).all(|w| w[0] < w[1]), "t {t}");
            assert!(m <= prev_min, "t {t}");
            prev_min = m;
        }
        assert!(theory(0.5, 1, 1.0) < theory(0.3, 1, 1.0));
    }

    #[test]
    fn long_horizon_limit() {
        let tail = 2.0 / 1.5 * 0.5f64.powi(101);
        assert!(tail < 1e-29);
        assert!((theory(0.5, 50, 1.0) - 1.0 / 3.0).abs() < 1e-29 + f64::EPSILON);
    }

    #[test]
    fn rejects_bad_models() {
        assert!(EmaModel::new(0.0, 1.0, 0.0, 1).is_err());
        assert!(EmaModel::new(0.0, 1.0, 1.1, 1).is_err());
        assert!(EmaModel::new(0.0, 0.0, 0.5, 1).is_err());
        assert!(EmaModel::new(0.0, -1.0, 0.5, 1).is_err());
        let m = EmaModel::new(0.0, 1.0, 0.5, 1).unwrap();
        assert!(simulate_ema(&m, 0, &RandomStream::new(0)).is_err());
    }

    #[test]
    fn noiseless_is_exact() {
        let m = EmaModel::noiseless(0.3, 0.37, 12).unwrap();
        let s = simulate_ema(&m, 1000, &RandomStream::new(1)).unwrap();
        assert_eq!(s.empirical_mse, 0.0);
        assert_eq!(s.std_error, 0.0);
        assert_eq!(s.mean, 0.3);
    }

    #[test]
    fn simulation_matches_theory() {
        let m = EmaModel::new(2.0, 1.0, 0.5, 10).unwrap();
        let s = simulate_ema(&m, 100_000, &RandomStream::new(42)).unwrap();
        let th = ema_mse_theory(&m).unwrap();
        assert!((s.empirical_mse - th).abs() <= 3.0 * s.std_error, "{s:?}");
        assert!((s.mean - 2.0).abs() <= 4.0 * s.mean_std_error);

        let base = EmaModel::new(0.0, 1.0, 1.0, 10).unwrap();
        let s = simulate_ema(&base, 100_000, &RandomStream::new(43)).unwrap();
        assert!((s.empirical_mse - 1.0).abs() <= 3.0 * s.std_error, "{s:?}");
    }

    #[test]
    fn simulation_is_reproducible() {
        let m = EmaModel::new(0.0, 1.0, 0.3, 5).unwrap();
        let a = simulate_ema(&m, 10_000, &RandomStream::new(9)).unwrap();
        let b = simulate_ema(&m, 10_000, &RandomStream::new(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn report_grid() {
        let r = variance_report(
            &[0.3, 0.6, 0.9],
            &[1, 5, 20],
            1.0,
            20_000,
            &RandomStream::new(5),
        )
        .unwrap();
        assert_eq!(r.rows.len(), 9);
        assert!(r
            .rows
            .iter()
            .all(|row| row.theory_mse < 1.0 && row.baseline_mse == 1.0));
        for t in [5, 20] {
            let col: Vec<f64> = r
                .rows
                .iter()
                .filter(|x| x.t == t)
                .map(|x| x.theory_mse)
                .collect();
            assert!(col.windows(2).all(|w| w[0] < w[1]));
        }
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 10);
        assert!(text.starts_with("alpha,t,theory_mse,empirical_mse,std_error,baseline_mse,flagged"));
        assert!(variance_report(&[], &[1], 1.0, 10, &RandomStream::new(0)).is_err());
    }
}
