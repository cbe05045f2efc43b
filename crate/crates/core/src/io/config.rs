//! Run configuration (TOML).

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::IoError;
use crate::fit::{DecayFitOptions, OdmrFitOptions};
use crate::sensitivity::{PhotonBudget, SensitivityInputs};
use crate::spin::{
    gamma_from_g, FieldVector, NvModel, DEFAULT_D_MHZ, DEFAULT_G_FACTOR, DEFAULT_HYPERFINE_MHZ,
};
use crate::synth::{check_grid, linear_grid, DecayModel, LorentzianPeak};
use crate::vector::PairingOptions;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    #[serde(default)]
    pub model: ModelConfig,
    pub grid: Option<GridConfig>,
    pub simulate: Option<SimulateConfig>,
    #[serde(default)]
    pub fit: FitConfig,
    pub decay: Option<DecaySimConfig>,
    pub sensitivity: Option<SensitivityInputs>,
    pub budget: Option<PhotonBudget>,
    #[serde(default)]
    pub paths: PathsConfig,
}

/// Spin-model overrides. Give either `g_factor` or `gamma_mhz_per_mt`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub d_mhz: Option<f64>,
    pub e_mhz: Option<f64>,
    pub gamma_mhz_per_mt: Option<f64>,
    pub g_factor: Option<f64>,
    pub a_hf_mhz: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub start_mhz: f64,
    pub stop_mhz: f64,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    /// Field in the crystal frame (mT); alternative to `peaks`.
    pub field_mt: Option<[f64; 3]>,
    pub peaks: Option<Vec<LorentzianPeak>>,
    pub width_mhz: Option<f64>,
    pub contrast: Option<f64>,
    pub counts_per_point: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    pub n_peaks: Option<usize>,
    #[serde(default)]
    pub shared_width: bool,
    #[serde(default = "default_sigma_floor")]
    pub pairing_sigma_floor_mhz: f64,
    #[serde(default)]
    pub free_stretch: bool,
    pub decay_kind: Option<String>,
}

fn default_sigma_floor() -> f64 {
    PairingOptions::default().sigma_floor_mhz
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            n_peaks: None,
            shared_width: false,
            pairing_sigma_floor_mhz: default_sigma_floor(),
            free_stretch: false,
            decay_kind: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecaySimConfig {
    pub model: DecayModel,
    pub start_us: f64,
    pub stop_us: f64,
    pub points: usize,
    pub read_noise: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    pub input: Option<String>,
    pub output: Option<String>,
    pub plot: Option<String>,
}

fn field_error(field: &str, message: impl std::fmt::Display) -> IoError {
    IoError::Config(format!("{field}: {message}"))
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, IoError> {
        let config: RunConfig = toml::from_str(text).map_err(|e| IoError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, IoError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| IoError::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            IoError::Config(msg) => IoError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Checks every section against the invariants of the types it feeds.
    pub fn validate(&self) -> Result<(), IoError> {
        self.nv_model()?;
        if let Some(g) = &self.grid {
            self.grid_values(g)?;
        }
        if let Some(sim) = &self.simulate {
            match (&sim.field_mt, &sim.peaks) {
                (Some(_), Some(_)) => {
                    return Err(field_error(
                        "simulate",
                        "give either field_mt or peaks, not both",
                    ))
                }
                (None, None) => return Err(field_error("simulate", "missing field_mt or peaks")),
                (Some(b), None) => {
                    if b.iter().any(|x| !x.is_finite()) {
                        return Err(field_error(
                            "simulate.field_mt",
                            "components must be finite",
                        ));
                    }
                    let w = sim.width_mhz.ok_or_else(|| {
                        field_error("simulate.width_mhz", "required with field_mt")
                    })?;
                    let c = sim.contrast.ok_or_else(|| {
                        field_error("simulate.contrast", "required with field_mt")
                    })?;
                    LorentzianPeak::new(0.0, w, c).map_err(|e| field_error("simulate", e))?;
                }
                (None, Some(peaks)) => {
                    if peaks.is_empty() {
                        return Err(field_error("simulate.peaks", "must not be empty"));
                    }
                    for (i, p) in peaks.iter().enumerate() {
                        p.validate()
                            .map_err(|e| field_error(&format!("simulate.peaks[{i}]"), e))?;
                    }
                }
            }
            if let Some(c) = sim.counts_per_point {
                if !(c.is_finite() && c > 0.0) {
                    return Err(field_error(
                        "simulate.counts_per_point",
                        format!("must be positive, got {c}"),
                    ));
                }
            }
        }
        if self.fit.n_peaks == Some(0) {
            return Err(field_error("fit.n_peaks", "must be at least 1"));
        }
        if !(self.fit.pairing_sigma_floor_mhz.is_finite() && self.fit.pairing_sigma_floor_mhz > 0.0)
        {
            return Err(field_error(
                "fit.pairing_sigma_floor_mhz",
                "must be positive",
            ));
        }
        if let Some(kind) = &self.fit.decay_kind {
            kind.parse::<crate::synth::DecayKind>()
                .map_err(|e| field_error("fit.decay_kind", e))?;
        }
        if let Some(d) = &self.decay {
            d.model
                .validate()
                .map_err(|e| field_error("decay.model", e))?;
            self.decay_times(d)?;
            if let Some(s) = d.read_noise {
                if !(s.is_finite() && s >= 0.0) {
                    return Err(field_error("decay.read_noise", "must be non-negative"));
                }
            }
        }
        if let Some(s) = &self.sensitivity {
            s.validate().map_err(|e| field_error("sensitivity", e))?;
        }
        if let Some(b) = &self.budget {
            b.validate().map_err(|e| field_error("budget", e))?;
        }
        Ok(())
    }

    pub fn nv_model(&self) -> Result<NvModel, IoError> {
        let m = &self.model;
        let gamma = match (m.gamma_mhz_per_mt, m.g_factor) {
            (Some(_), Some(_)) => {
                return Err(field_error(
                    "model",
                    "give either gamma_mhz_per_mt or g_factor, not both",
                ))
            }
            (Some(gamma), None) => gamma,
            (None, Some(g)) => gamma_from_g(g),
            (None, None) => gamma_from_g(DEFAULT_G_FACTOR),
        };
        let model = NvModel {
            d_mhz: m.d_mhz.unwrap_or(DEFAULT_D_MHZ),
            e_mhz: m.e_mhz.unwrap_or(0.0),
            gamma_mhz_per_mt: gamma,
            a_hf_mhz: m.a_hf_mhz.unwrap_or(DEFAULT_HYPERFINE_MHZ),
            ..NvModel::default()
        };
        model.validate().map_err(|e| field_error("model", e))?;
        Ok(model)
    }

    fn grid_values(&self, g: &GridConfig) -> Result<Vec<f64>, IoError> {
        if g.points < 2 {
            return Err(field_error("grid.points", "need at least 2 points"));
        }
        let grid = linear_grid(g.start_mhz, g.stop_mhz, g.points);
        check_grid(&grid).map_err(|_| field_error("grid", "start_mhz must be below stop_mhz"))?;
        Ok(grid)
    }

    pub fn frequency_grid(&self) -> Result<Vec<f64>, IoError> {
        let g = self
            .grid
            .as_ref()
            .ok_or_else(|| field_error("grid", "section is required"))?;
        self.grid_values(g)
    }

    fn decay_times(&self, d: &DecaySimConfig) -> Result<Vec<f64>, IoError> {
        if d.points < 2 {
            return Err(field_error("decay.points", "need at least 2 points"));
        }
        let grid = linear_grid(d.start_us, d.stop_us, d.points);
        check_grid(&grid).map_err(|_| field_error("decay", "start_us must be below stop_us"))?;
        Ok(grid)
    }

    pub fn decay_grid(&self) -> Result<(Vec<f64>, &DecaySimConfig), IoError> {
        let d = self
            .decay
            .as_ref()
            .ok_or_else(|| field_error("decay", "section is required"))?;
        Ok((self.decay_times(d)?, d))
    }

    pub fn field(&self) -> Option<FieldVector> {
        self.simulate
            .as_ref()?
            .field_mt
            .map(|[x, y, z]| FieldVector::new(x, y, z))
    }

    pub fn odmr_fit_options(&self) -> OdmrFitOptions {
        OdmrFitOptions {
            n_peaks: self.fit.n_peaks,
            shared_width: self.fit.shared_width,
            ..Default::default()
        }
    }

    pub fn decay_fit_options(&self) -> Result<DecayFitOptions, IoError> {
        Ok(DecayFitOptions {
            free_stretch: self.fit.free_stretch,
            hyperfine_guess_mhz: self.nv_model()?.a_hf_mhz,
            ..Default::default()
        })
    }

    pub fn pairing_options(&self) -> PairingOptions {
        PairingOptions {
            sigma_floor_mhz: self.fit.pairing_sigma_floor_mhz,
        }
    }

    /// Sensitivity inputs, defaulting to the confocal reference values.
    pub fn sensitivity_inputs(&self) -> SensitivityInputs {
        self.sensitivity.unwrap_or(SensitivityInputs {
            contrast: 0.03,
            pl_rate_hz: 362.4e9,
            readout_us: 0.5,
            t2_star_us: 0.5,
            t2_us: 5.0,
        })
    }

    /// Photon budget, defaulting to the confocal saturation figures with a
    /// ×100 waveguide enhancement and the 40 mW waveguide row.
    pub fn photon_budget(&self) -> PhotonBudget {
        self.budget.unwrap_or(PhotonBudget {
            p_sat_mw: 11.7,
            c_sat_hz: 362.4e9,
            enhancement: 100.0,
            insertion_loss_db: 11.6,
            mfd_x_um: 4.8,
            mfd_y_um: 5.5,
            fiber_mfd_um: 10.4,
        })
    }
}
