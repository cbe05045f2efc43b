//! Nonlinear least squares and the model-specific fit frontends.
//!
//! Positive quantities (widths, decay times, saturation constants) are fitted
//! in log space and contrasts in logit space, so the engine itself is
//! unconstrained. Reported parameters and uncertainties are always in natural
//! units.

mod decay;
mod lm;
mod odmr;
mod peaks;
mod saturation;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use decay::{fit_decay, DecayFit, DecayFitOptions, DecayProblem};
pub use lm::{finite_difference_jacobian, levenberg_marquardt, LeastSquaresProblem, LmOptions};
pub use odmr::{fit_odmr, OdmrFit, OdmrFitOptions, OdmrProblem};
pub use peaks::{detect_peaks, PeakEstimate, PeakSet};
pub use saturation::{
    fit_saturation, fit_saturation_with, saturation_model, SaturationCurve, SaturationFit,
    SaturationProblem,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("residuals or Jacobian contain NaN/Inf")]
    NonFinite,
    #[error("normal equations could not be solved below the damping ceiling")]
    Singular,
    #[error("no convergence after {} iterations", .0.iterations)]
    MaxIterations(Box<FitResult>),
    #[error("invalid fit input: {0}")]
    InvalidInput(String),
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("no dips crossed the detection threshold")]
    NoPeaks,
    #[error("requested {requested} peaks but only {found} candidates were detected")]
    PeakCountMismatch { requested: usize, found: usize },
}

/// Non-fatal conditions attached to a fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "flag", rename_all = "snake_case")]
pub enum FitFlag {
    /// A fitted linewidth fell below twice the grid spacing.
    DegenerateWidth {
        peak: usize,
        fwhm_mhz: f64,
        min_fwhm_mhz: f64,
    },
    /// The record spans less than one fitted decay constant.
    InsufficientSpan { span_us: f64, decay_time_us: f64 },
    /// A parameter is poorly constrained by the data.
    WideUncertainty { param: String, reason: String },
    /// The curvature matrix at the optimum is singular.
    SingularCovariance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitParameter {
    pub name: String,
    pub value: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: Vec<FitParameter>,
    pub residual_rms: f64,
    pub converged: bool,
    pub iterations: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<FitFlag>,
    /// Parameter covariance in the same units as `params`.
    #[serde(skip)]
    pub covariance: Vec<Vec<f64>>,
}

impl FitResult {
    pub fn get(&self, name: &str) -> Option<&FitParameter> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn value(&self, name: &str) -> Option<f64> {
        self.get(name).map(|p| p.value)
    }

    pub fn sigma(&self, name: &str) -> Option<f64> {
        self.get(name).map(|p| p.sigma)
    }

    pub fn values(&self) -> Vec<f64> {
        self.params.iter().map(|p| p.value).collect()
    }

    /// Maps an engine-space result through an elementwise transform.
    /// `maps[i]` returns (natural value, d natural / d engine).
    pub(crate) fn transformed(&self, names: &[String], maps: &[ParamMap]) -> FitResult {
        let pairs: Vec<(f64, f64)> = self
            .params
            .iter()
            .zip(maps)
            .map(|(p, map)| map(p.value))
            .collect();
        let n = pairs.len();
        let mut covariance = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                let c = self
                    .covariance
                    .get(i)
                    .and_then(|r| r.get(j))
                    .copied()
                    .unwrap_or(f64::NAN);
                covariance[i][j] = pairs[i].1 * pairs[j].1 * c;
            }
        }
        let params = names
            .iter()
            .zip(&pairs)
            .zip(&self.params)
            .map(|((name, &(value, d)), p)| FitParameter {
                name: name.clone(),
                value,
                sigma: (d * p.sigma).abs(),
            })
            .collect();
        FitResult {
            params,
            residual_rms: self.residual_rms,
            converged: self.converged,
            iterations: self.iterations,
            flags: self.flags.clone(),
            covariance,
        }
    }
}

/// Maps an engine parameter to (natural value, d natural / d engine).
pub(crate) type ParamMap = fn(f64) -> (f64, f64);

pub(crate) fn identity(x: f64) -> (f64, f64) {
    (x, 1.0)
}

pub(crate) fn exp_map(x: f64) -> (f64, f64) {
    let v = x.exp();
    (v, v)
}

pub(crate) fn logistic_map(x: f64) -> (f64, f64) {
    let v = logistic(x);
    (v, v * (1.0 - v))
}

pub(crate) fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub(crate) fn logit(p: f64) -> f64 {
    let p = p.clamp(1e-9, 1.0 - 1e-9);
    (p / (1.0 - p)).ln()
}

/// Least-squares coefficients for `y ≈ Σ_k coef_k · columns[k]`; returns the
/// coefficients and the residual sum of squares.
pub(crate) fn linear_lstsq(columns: &[Vec<f64>], y: &[f64]) -> Option<(Vec<f64>, f64)> {
    let k = columns.len();
    let mut ata = nalgebra::DMatrix::<f64>::zeros(k, k);
    let mut atb = nalgebra::DVector::<f64>::zeros(k);
    for i in 0..k {
        for j in i..k {
            let s: f64 = columns[i].iter().zip(&columns[j]).map(|(a, b)| a * b).sum();
            ata[(i, j)] = s;
            ata[(j, i)] = s;
        }
        atb[i] = columns[i].iter().zip(y).map(|(a, b)| a * b).sum();
    }
    let coef = ata.lu().solve(&atb)?;
    if coef.iter().any(|c| !c.is_finite()) {
        return None;
    }
    let rss = y
        .iter()
        .enumerate()
        .map(|(i, yi)| {
            let m: f64 = (0..k).map(|j| coef[j] * columns[j][i]).sum();
            (yi - m).powi(2)
        })
        .sum();
    Some((coef.iter().copied().collect(), rss))
}
