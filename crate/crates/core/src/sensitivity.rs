//! Photon-shot-noise-limited sensitivity and photon-budget arithmetic.
//!
//! Inputs use lab units (Hz, µs, mW, µm, dB); sensitivities are returned in
//! T·Hz^-1/2.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::spin::{NvModel, BOHR_MAGNETON, HBAR};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SensitivityError {
    #[error("{name} must be {requirement}, got {value}")]
    OutOfDomain {
        name: &'static str,
        requirement: &'static str,
        value: f64,
    },
}

fn require(
    ok: bool,
    name: &'static str,
    requirement: &'static str,
    value: f64,
) -> Result<(), SensitivityError> {
    if ok && value.is_finite() {
        Ok(())
    } else {
        Err(SensitivityError::OutOfDomain {
            name,
            requirement,
            value,
        })
    }
}

fn positive(name: &'static str, value: f64) -> Result<(), SensitivityError> {
    require(value > 0.0, name, "positive", value)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensitivityInputs {
    /// ODMR contrast Λ (fraction).
    pub contrast: f64,
    /// Detected PL rate C (Hz).
    pub pl_rate_hz: f64,
    /// Readout duration t_L (µs).
    pub readout_us: f64,
    pub t2_star_us: f64,
    pub t2_us: f64,
}

impl SensitivityInputs {
    pub fn validate(&self) -> Result<(), SensitivityError> {
        positive("contrast", self.contrast)?;
        require(self.contrast <= 1.0, "contrast", "at most 1", self.contrast)?;
        positive("pl_rate_hz", self.pl_rate_hz)?;
        positive("readout_us", self.readout_us)?;
        positive("t2_star_us", self.t2_star_us)?;
        positive("t2_us", self.t2_us)?;
        require(
            self.t2_us >= self.t2_star_us,
            "t2_us",
            "at least t2_star_us",
            self.t2_us,
        )
    }
}

/// Saturation, loss and mode-size figures of a collection configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhotonBudget {
    pub p_sat_mw: f64,
    pub c_sat_hz: f64,
    /// Multiplier applied to both the saturation rate and the saturation power.
    pub enhancement: f64,
    pub insertion_loss_db: f64,
    pub mfd_x_um: f64,
    pub mfd_y_um: f64,
    /// Mode field diameter of the coupling fiber (circular).
    pub fiber_mfd_um: f64,
}

impl PhotonBudget {
    pub fn validate(&self) -> Result<(), SensitivityError> {
        positive("p_sat_mw", self.p_sat_mw)?;
        positive("c_sat_hz", self.c_sat_hz)?;
        positive("enhancement", self.enhancement)?;
        require(
            self.insertion_loss_db >= 0.0,
            "insertion_loss_db",
            "non-negative",
            self.insertion_loss_db,
        )?;
        positive("mfd_x_um", self.mfd_x_um)?;
        positive("mfd_y_um", self.mfd_y_um)?;
        positive("fiber_mfd_um", self.fiber_mfd_um)
    }
}

/// DC sensitivity ħ/(gμ_B) · 1/(Λ·√(C·t_L)) · 1/√T2*.
pub fn eta_dc(model: &NvModel, inputs: &SensitivityInputs) -> Result<f64, SensitivityError> {
    inputs.validate()?;
    let g = model.g_factor();
    positive("g_factor", g)?;
    let counts = inputs.pl_rate_hz * inputs.readout_us * 1e-6;
    let t2_star_s = inputs.t2_star_us * 1e-6;
    Ok(HBAR / (g * BOHR_MAGNETON) / (inputs.contrast * counts.sqrt()) / t2_star_s.sqrt())
}

/// AC sensitivity η_dc·√(T2*/T2).
pub fn eta_ac(eta_dc_value: f64, t2_star_us: f64, t2_us: f64) -> Result<f64, SensitivityError> {
    positive("eta_dc", eta_dc_value)?;
    positive("t2_star_us", t2_star_us)?;
    positive("t2_us", t2_us)?;
    Ok(eta_dc_value * (t2_star_us / t2_us).sqrt())
}

/// Detected rate at excitation power `p_mw`:
/// k·c_sat·P/(P + k·p_sat) with k the enhancement.
pub fn saturation_rate(budget: &PhotonBudget, p_mw: f64) -> Result<f64, SensitivityError> {
    budget.validate()?;
    require(p_mw >= 0.0, "p_mw", "non-negative", p_mw)?;
    let k = budget.enhancement;
    Ok(k * budget.c_sat_hz * p_mw / (p_mw + k * budget.p_sat_mw))
}

pub fn db_to_transmission(loss_db: f64) -> Result<f64, SensitivityError> {
    require(loss_db >= 0.0, "loss_db", "non-negative", loss_db)?;
    Ok(10f64.powf(-loss_db / 10.0))
}

pub fn transmission_to_db(fraction: f64) -> Result<f64, SensitivityError> {
    require(
        fraction > 0.0 && fraction <= 1.0,
        "fraction",
        "in (0, 1]",
        fraction,
    )?;
    Ok(-10.0 * fraction.log10())
}

/// Power coupling between two elliptical Gaussian modes with aligned axes,
/// given their mode field diameters.
pub fn gaussian_mode_overlap(
    mfd1_x: f64,
    mfd1_y: f64,
    mfd2_x: f64,
    mfd2_y: f64,
) -> Result<f64, SensitivityError> {
    positive("mfd1_x", mfd1_x)?;
    positive("mfd1_y", mfd1_y)?;
    positive("mfd2_x", mfd2_x)?;
    positive("mfd2_y", mfd2_y)?;
    let axis = |a: f64, b: f64| 2.0 * a * b / (a * a + b * b);
    Ok(axis(mfd1_x, mfd2_x) * axis(mfd1_y, mfd2_y))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensitivityFigures {
    pub pl_rate_hz: f64,
    pub photons_per_readout: f64,
    pub eta_dc_t_per_sqrthz: f64,
    pub eta_ac_t_per_sqrthz: f64,
}

/// Budget items reported alongside the sensitivities. They are annotations:
/// only `enhancement` enters the enhanced figures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BudgetAnnotations {
    pub enhancement: f64,
    pub c_sat_hz: f64,
    pub p_sat_mw: f64,
    pub enhanced_c_sat_hz: f64,
    pub enhanced_p_sat_mw: f64,
    pub insertion_loss_db: f64,
    pub insertion_transmission: f64,
    pub mode_overlap_efficiency: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    pub g_factor: f64,
    pub hbar_over_g_mu_b_t_s: f64,
    pub inputs: SensitivityInputs,
    pub baseline: SensitivityFigures,
    pub enhanced: SensitivityFigures,
    /// η_dc(baseline) / η_dc(enhanced); equals √enhancement.
    pub improvement_ratio: f64,
    pub budget: BudgetAnnotations,
}

fn figures(
    model: &NvModel,
    inputs: &SensitivityInputs,
) -> Result<SensitivityFigures, SensitivityError> {
    let dc = eta_dc(model, inputs)?;
    Ok(SensitivityFigures {
        pl_rate_hz: inputs.pl_rate_hz,
        photons_per_readout: inputs.pl_rate_hz * inputs.readout_us * 1e-6,
        eta_dc_t_per_sqrthz: dc,
        eta_ac_t_per_sqrthz: eta_ac(dc, inputs.t2_star_us, inputs.t2_us)?,
    })
}

/// Baseline and enhanced sensitivities. The enhanced configuration multiplies
/// the detected rate by `budget.enhancement`.
pub fn sensitivity_report(
    model: &NvModel,
    inputs: &SensitivityInputs,
    budget: &PhotonBudget,
) -> Result<SensitivityReport, SensitivityError> {
    budget.validate()?;
    let baseline = figures(model, inputs)?;
    let boosted = SensitivityInputs {
        pl_rate_hz: inputs.pl_rate_hz * budget.enhancement,
        ..*inputs
    };
    let enhanced = figures(model, &boosted)?;
    let g = model.g_factor();
    Ok(SensitivityReport {
        g_factor: g,
        hbar_over_g_mu_b_t_s: HBAR / (g * BOHR_MAGNETON),
        inputs: *inputs,
        baseline,
        enhanced,
        improvement_ratio: baseline.eta_dc_t_per_sqrthz / enhanced.eta_dc_t_per_sqrthz,
        budget: BudgetAnnotations {
            enhancement: budget.enhancement,
            c_sat_hz: budget.c_sat_hz,
            p_sat_mw: budget.p_sat_mw,
            enhanced_c_sat_hz: budget.enhancement * budget.c_sat_hz,
            enhanced_p_sat_mw: budget.enhancement * budget.p_sat_mw,
            insertion_loss_db: budget.insertion_loss_db,
            insertion_transmission: db_to_transmission(budget.insertion_loss_db)?,
            mode_overlap_efficiency: gaussian_mode_overlap(
                budget.mfd_x_um,
                budget.mfd_y_um,
                budget.fiber_mfd_um,
                budget.fiber_mfd_um,
            )?,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn reference_inputs() -> SensitivityInputs {
        SensitivityInputs {
            contrast: 0.03,
            pl_rate_hz: 362.4e9,
            readout_us: 0.5,
            t2_star_us: 0.5,
            t2_us: 5.0,
        }
    }

    fn budget(enhancement: f64) -> PhotonBudget {
        PhotonBudget {
            p_sat_mw: 11.7,
            c_sat_hz: 362.4e9,
            enhancement,
            insertion_loss_db: 11.6,
            mfd_x_um: 4.8,
            mfd_y_um: 5.5,
            fiber_mfd_um: 10.4,
        }
    }

    #[test]
    fn confocal_figures() {
        let m = NvModel::default();
        let dc = eta_dc(&m, &reference_inputs()).unwrap();
        assert!((dc / 627e-12 - 1.0).abs() < 0.01, "{dc}");
        let ac = eta_ac(dc, 0.5, 5.0).unwrap();
        assert!((ac / 198e-12 - 1.0).abs() < 0.01, "{ac}");
    }

    #[test]
    fn hundredfold_rate() {
        let m = NvModel::default();
        let inputs = SensitivityInputs {
            pl_rate_hz: 36.24e12,
            ..reference_inputs()
        };
        let dc = eta_dc(&m, &inputs).unwrap();
        assert!((dc / 62.7e-12 - 1.0).abs() < 0.01, "{dc}");
        assert!((eta_ac(63e-12, 0.5, 5.0).unwrap() / 20e-12 - 1.0).abs() < 0.02);
    }

    #[test]
    fn scaling_laws() {
        let m = NvModel::default();
        let base = eta_dc(&m, &reference_inputs()).unwrap();
        let quad = eta_dc(
            &m,
            &SensitivityInputs {
                pl_rate_hz: 4.0 * 362.4e9,
                ..reference_inputs()
            },
        )
        .unwrap();
        assert_relative_eq!(quad, base / 2.0, max_relative = 1e-15);
        let twice = eta_dc(
            &m,
            &SensitivityInputs {
                contrast: 0.06,
                ..reference_inputs()
            },
        )
        .unwrap();
        assert_relative_eq!(twice, base / 2.0, max_relative = 1e-15);
        assert_eq!(eta_ac(base, 0.5, 0.5).unwrap(), base);
    }

    #[test]
    fn rejects_bad_inputs() {
        let m = NvModel::default();
        assert!(eta_dc(
            &m,
            &SensitivityInputs {
                contrast: 0.0,
                ..reference_inputs()
            }
        )
        .is_err());
        assert!(eta_dc(
            &m,
            &SensitivityInputs {
                contrast: 1.5,
                ..reference_inputs()
            }
        )
        .is_err());
        assert!(eta_dc(
            &m,
            &SensitivityInputs {
                pl_rate_hz: -1.0,
                ..reference_inputs()
            }
        )
        .is_err());
        assert!(eta_dc(
            &m,
            &SensitivityInputs {
                t2_us: 0.1,
                ..reference_inputs()
            }
        )
        .is_err());
        assert!(eta_ac(1e-9, 0.0, 5.0).is_err());
        assert!(eta_ac(1e-9, 0.5, -5.0).is_err());
    }

    #[test]
    fn saturation_examples() {
        let b1 = budget(1.0);
        assert_relative_eq!(
            saturation_rate(&b1, 11.7).unwrap(),
            181.2e9,
            max_relative = 1e-14
        );
        let b100 = budget(100.0);
        let far = saturation_rate(&b100, 1e12).unwrap();
        assert_relative_eq!(far, 100.0 * 362.4e9, max_relative = 1e-8);
        // 100·362.4 GHz·1.5/(1.5 + 1170)
        let low = saturation_rate(&b100, 1.5).unwrap();
        assert_relative_eq!(low, 36240e9 * 1.5 / 1171.5, max_relative = 1e-14);
        assert!((low / 46.4e9 - 1.0).abs() < 1e-3);
        assert!(saturation_rate(&b1, -1.0).is_err());
    }

    #[test]
    fn decibels() {
        assert_eq!(db_to_transmission(0.0).unwrap(), 1.0);
        assert_relative_eq!(db_to_transmission(10.0).unwrap(), 0.1, max_relative = 1e-15);
        assert_relative_eq!(
            db_to_transmission(11.6).unwrap(),
            0.069183,
            max_relative = 1e-5
        );
        assert!(db_to_transmission(-1.0).is_err());
        assert!(transmission_to_db(0.0).is_err());
        assert!(transmission_to_db(1.5).is_err());
        assert_relative_eq!(
            transmission_to_db(0.01).unwrap(),
            20.0,
            max_relative = 1e-15
        );
    }

    #[test]
    fn mode_overlap() {
        assert_eq!(gaussian_mode_overlap(4.8, 5.5, 4.8, 5.5).unwrap(), 1.0);
        let a = gaussian_mode_overlap(4.8, 5.5, 10.4, 10.4).unwrap();
        let b = gaussian_mode_overlap(10.4, 10.4, 4.8, 5.5).unwrap();
        assert_eq!(a, b);
        let x = 2.0 * 4.8 * 10.4 / (4.8f64.powi(2) + 10.4f64.powi(2));
        let y = 2.0 * 5.5 * 10.4 / (5.5f64.powi(2) + 10.4f64.powi(2));
        assert_relative_eq!(a, x * y, max_relative = 1e-15);
        assert_relative_eq!(a, 0.62898, max_relative = 1e-4);
        assert!(gaussian_mode_overlap(0.0, 1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn report_ratio() {
        let m = NvModel::default();
        for (k, ratio) in [(100.0, 10.0), (1.0, 1.0), (25.0, 5.0)] {
            let r = sensitivity_report(&m, &reference_inputs(), &budget(k)).unwrap();
            assert_relative_eq!(r.improvement_ratio, ratio, max_relative = 1e-12);
        }
        let r = sensitivity_report(&m, &reference_inputs(), &budget(100.0)).unwrap();
        assert!((r.enhanced.eta_dc_t_per_sqrthz / 63e-12 - 1.0).abs() < 0.02);
        assert!((r.enhanced.eta_ac_t_per_sqrthz / 20e-12 - 1.0).abs() < 0.02);
        assert_relative_eq!(r.budget.enhanced_p_sat_mw, 1170.0, max_relative = 1e-12);
    }
}
