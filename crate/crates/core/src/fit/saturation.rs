use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::lm::{levenberg_marquardt, LeastSquaresProblem, LmOptions};
use super::{exp_map, linear_lstsq, FitError, FitFlag, FitResult};

/// Relative σ on c_sat above which the fit is flagged as poorly constrained.
const WIDE_RELATIVE_SIGMA: f64 = 0.1;

/// Detected PL rate versus excitation power.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaturationCurve {
    pub powers_mw: Vec<f64>,
    pub rates: Vec<f64>,
}

impl SaturationCurve {
    pub fn new(powers_mw: Vec<f64>, rates: Vec<f64>) -> Result<Self, FitError> {
        if powers_mw.len() != rates.len() {
            return Err(FitError::InvalidInput(
                "powers and rates differ in length".into(),
            ));
        }
        if powers_mw.iter().any(|p| !(p.is_finite() && *p > 0.0)) {
            return Err(FitError::InvalidInput("powers must be positive".into()));
        }
        if powers_mw.windows(2).any(|w| w[1] <= w[0]) {
            return Err(FitError::InvalidInput(
                "powers must be strictly increasing".into(),
            ));
        }
        if rates.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(FitError::InvalidInput(
                "rates must be positive and finite".into(),
            ));
        }
        Ok(Self { powers_mw, rates })
    }
}

/// C(P) = c_sat·P/(P + p_sat).
pub fn saturation_model(c_sat: f64, p_sat: f64, p: f64) -> f64 {
    c_sat * p / (p + p_sat)
}

/// Relative residuals (model − y)/y in scaled units: powers divided by
/// `p_scale`, rates by `r_scale`. Parameters are `[ln c_sat', ln p_sat']`.
///
/// Relative residuals match noise proportional to the rate, as from laser
/// power fluctuations.
#[derive(Debug, Clone)]
pub struct SaturationProblem {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl LeastSquaresProblem for SaturationProblem {
    fn n_params(&self) -> usize {
        2
    }

    fn n_residuals(&self) -> usize {
        self.x.len()
    }

    fn param_names(&self) -> Vec<String> {
        vec!["ln_c_sat".into(), "ln_p_sat".into()]
    }

    fn residuals(&self, p: &[f64], out: &mut [f64]) {
        let (c, ps) = (p[0].exp(), p[1].exp());
        for (i, (&x, &y)) in self.x.iter().zip(&self.y).enumerate() {
            out[i] = saturation_model(c, ps, x) / y - 1.0;
        }
    }

    fn jacobian(&self, p: &[f64], jac: &mut DMatrix<f64>) -> bool {
        let (c, ps) = (p[0].exp(), p[1].exp());
        for (i, (&x, &y)) in self.x.iter().zip(&self.y).enumerate() {
            jac[(i, 0)] = saturation_model(c, ps, x) / y;
            jac[(i, 1)] = -c * x * ps / ((x + ps) * (x + ps) * y);
        }
        true
    }
}

/// `result.residual_rms` is the RMS of the relative residuals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaturationFit {
    pub c_sat: f64,
    pub sigma_c_sat: f64,
    pub p_sat_mw: f64,
    pub sigma_p_sat_mw: f64,
    pub result: FitResult,
}

pub fn fit_saturation(curve: &SaturationCurve) -> Result<SaturationFit, FitError> {
    fit_saturation_with(curve, &LmOptions::default())
}

pub fn fit_saturation_with(
    curve: &SaturationCurve,
    opts: &LmOptions,
) -> Result<SaturationFit, FitError> {
    if curve.powers_mw.len() < 3 {
        return Err(FitError::TooFewSamples {
            needed: 3,
            got: curve.powers_mw.len(),
        });
    }
    let p_scale = curve.powers_mw.iter().copied().fold(0.0, f64::max);
    let r_scale = curve.rates.iter().copied().fold(0.0, f64::max);
    let problem = SaturationProblem {
        x: curve.powers_mw.iter().map(|p| p / p_scale).collect(),
        y: curve.rates.iter().map(|r| r / r_scale).collect(),
    };

    // p_sat' on a log grid with c_sat' solved linearly
    let mut best: Option<(f64, f64, f64)> = None;
    for k in 0..81 {
        let ps = 10f64.powf(-3.0 + 6.0 * k as f64 / 80.0);
        let col: Vec<f64> = problem
            .x
            .iter()
            .zip(&problem.y)
            .map(|(x, y)| x / ((x + ps) * y))
            .collect();
        if let Some((c, rss)) = linear_lstsq(&[col], &vec![1.0; problem.y.len()]) {
            if c[0] > 0.0 && best.is_none_or(|(r, _, _)| rss < r) {
                best = Some((rss, c[0], ps));
            }
        }
    }
    let (_, c0, ps0) =
        best.ok_or_else(|| FitError::InvalidInput("could not initialize saturation fit".into()))?;
    let raw = levenberg_marquardt(&problem, &[c0.ln(), ps0.ln()], opts)?;

    let names = ["c_sat".to_string(), "p_sat_mw".to_string()];
    let mut result = raw.transformed(&names, &[exp_map, exp_map]);
    for (param, scale) in result.params.iter_mut().zip([r_scale, p_scale]) {
        param.value *= scale;
        param.sigma *= scale;
    }
    for (i, si) in [r_scale, p_scale].iter().enumerate() {
        for (j, sj) in [r_scale, p_scale].iter().enumerate() {
            result.covariance[i][j] *= si * sj;
        }
    }

    let c_sat = result.params[0].clone();
    let p_sat = result.params[1].clone();
    let p_min = curve.powers_mw[0];
    if p_sat.value > p_scale || p_sat.value < p_min {
        result.flags.push(FitFlag::WideUncertainty {
            param: "c_sat".into(),
            reason: format!(
                "fitted p_sat = {:.4} mW lies outside the measured power range [{p_min}, {p_scale}] mW",
                p_sat.value
            ),
        });
    } else if c_sat.sigma.is_nan() || c_sat.sigma > WIDE_RELATIVE_SIGMA * c_sat.value {
        result.flags.push(FitFlag::WideUncertainty {
            param: "c_sat".into(),
            reason: format!(
                "relative sigma {:.3} exceeds {WIDE_RELATIVE_SIGMA}",
                c_sat.sigma / c_sat.value
            ),
        });
    }
    Ok(SaturationFit {
        c_sat: c_sat.value,
        sigma_c_sat: c_sat.sigma,
        p_sat_mw: p_sat.value,
        sigma_p_sat_mw: p_sat.sigma,
        result,
    })
}
