//! Forward models: ODMR spectra and coherence-decay records, with seeded noise.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::spin::{transition_frequencies, FieldVector, NvModel};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("grid must be non-empty, finite and strictly increasing (violated at index {0})")]
    BadGrid(usize),
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("invalid peak: {0}")]
    InvalidPeak(String),
    #[error("peak list is empty")]
    NoPeaks,
    #[error("synthesized PL is negative at {freq_mhz} MHz; total contrast exceeds 1")]
    NegativePl { freq_mhz: f64 },
    #[error("counts per point must be positive and finite, got {0}")]
    BadCounts(f64),
    #[error("invalid decay parameters: {0}")]
    BadDecayParams(String),
    #[error("unknown decay kind '{0}' (expected rabi, fid, hahn or t1)")]
    UnknownKind(String),
}

pub(crate) fn check_grid(grid: &[f64]) -> Result<(), SynthError> {
    if grid.is_empty() {
        return Err(SynthError::BadGrid(0));
    }
    if let Some(i) = grid.iter().position(|x| !x.is_finite()) {
        return Err(SynthError::BadGrid(i));
    }
    match grid.windows(2).position(|w| w[1] <= w[0]) {
        Some(i) => Err(SynthError::BadGrid(i + 1)),
        None => Ok(()),
    }
}

/// Evenly spaced grid from `start` to `stop` inclusive.
pub fn linear_grid(start: f64, stop: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![start],
        _ => {
            let step = (stop - start) / (n - 1) as f64;
            (0..n).map(|i| start + step * i as f64).collect()
        }
    }
}

/// A Lorentzian PL dip.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LorentzianPeak {
    pub center_mhz: f64,
    pub fwhm_mhz: f64,
    pub contrast: f64,
}

impl LorentzianPeak {
    pub fn new(center_mhz: f64, fwhm_mhz: f64, contrast: f64) -> Result<Self, SynthError> {
        let peak = Self {
            center_mhz,
            fwhm_mhz,
            contrast,
        };
        peak.validate()?;
        Ok(peak)
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if !self.center_mhz.is_finite() {
            return Err(SynthError::InvalidPeak("center must be finite".into()));
        }
        if !(self.fwhm_mhz.is_finite() && self.fwhm_mhz > 0.0) {
            return Err(SynthError::InvalidPeak(format!(
                "fwhm must be > 0, got {}",
                self.fwhm_mhz
            )));
        }
        if !(self.contrast > 0.0 && self.contrast <= 1.0) {
            return Err(SynthError::InvalidPeak(format!(
                "contrast must be in (0, 1], got {}",
                self.contrast
            )));
        }
        Ok(())
    }

    /// Fractional depth of this dip at `f`.
    pub fn depth_at(&self, f: f64) -> f64 {
        let x = (f - self.center_mhz) / (0.5 * self.fwhm_mhz);
        self.contrast / (1.0 + x * x)
    }
}

/// Sampled ODMR curve normalized to a unit baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OdmrSpectrum {
    pub freqs_mhz: Vec<f64>,
    pub pl_norm: Vec<f64>,
    pub counts_per_point: Option<Vec<f64>>,
}

impl OdmrSpectrum {
    pub fn new(
        freqs_mhz: Vec<f64>,
        pl_norm: Vec<f64>,
        counts_per_point: Option<Vec<f64>>,
    ) -> Result<Self, SynthError> {
        check_grid(&freqs_mhz)?;
        if pl_norm.len() != freqs_mhz.len() {
            return Err(SynthError::LengthMismatch(format!(
                "{} frequencies vs {} PL values",
                freqs_mhz.len(),
                pl_norm.len()
            )));
        }
        if let Some(i) = pl_norm.iter().position(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(SynthError::NegativePl {
                freq_mhz: freqs_mhz[i],
            });
        }
        if let Some(c) = &counts_per_point {
            if c.len() != freqs_mhz.len() {
                return Err(SynthError::LengthMismatch("counts column length".into()));
            }
            if let Some(bad) = c.iter().find(|c| !(c.is_finite() && **c > 0.0)) {
                return Err(SynthError::BadCounts(*bad));
            }
        }
        Ok(Self {
            freqs_mhz,
            pl_norm,
            counts_per_point,
        })
    }

    pub fn len(&self) -> usize {
        self.freqs_mhz.len()
    }

    pub fn is_empty(&self) -> bool {
        self.freqs_mhz.is_empty()
    }
}

/// Evaluates the multi-Lorentzian dip model on `grid`.
pub fn synthesize_odmr(peaks: &[LorentzianPeak], grid: &[f64]) -> Result<OdmrSpectrum, SynthError> {
    check_grid(grid)?;
    if peaks.is_empty() {
        return Err(SynthError::NoPeaks);
    }
    for p in peaks {
        p.validate()?;
    }
    let pl: Vec<f64> = grid
        .iter()
        .map(|&f| 1.0 - peaks.iter().map(|p| p.depth_at(f)).sum::<f64>())
        .collect();
    OdmrSpectrum::new(grid.to_vec(), pl, None)
}

/// The resonance dips produced by a field: one ν± pair per NV orientation.
/// Orientations with identical projections are merged into a single dip whose
/// contrast is the sum of the merged ones.
pub fn peaks_from_field(
    model: &NvModel,
    b: &FieldVector,
    width_mhz: f64,
    contrast: f64,
) -> Result<Vec<LorentzianPeak>, SynthError> {
    let bv = b.as_vector();
    let mut peaks: Vec<LorentzianPeak> = Vec::with_capacity(8);
    for axis in model.axis_vectors() {
        let (lo, hi) = transition_frequencies(model, axis.dot(&bv).abs());
        for center in [lo, hi] {
            match peaks
                .iter_mut()
                .find(|p| (p.center_mhz - center).abs() < 1e-9)
            {
                Some(p) => p.contrast += contrast,
                None => peaks.push(LorentzianPeak::new(center, width_mhz, contrast)?),
            }
        }
    }
    for p in &peaks {
        p.validate()?;
    }
    peaks.sort_by(|a, b| a.center_mhz.total_cmp(&b.center_mhz));
    Ok(peaks)
}

pub fn spectrum_from_field(
    model: &NvModel,
    b: &FieldVector,
    width_mhz: f64,
    contrast: f64,
    grid: &[f64],
) -> Result<OdmrSpectrum, SynthError> {
    check_grid(grid)?;
    let peaks = peaks_from_field(model, b, width_mhz, contrast)?;
    synthesize_odmr(&peaks, grid)
}

/// Replaces each sample by Poisson(pl·counts)/counts.
pub fn add_shot_noise(
    spectrum: &OdmrSpectrum,
    counts_per_point: f64,
    seed: u64,
) -> Result<OdmrSpectrum, SynthError> {
    if !(counts_per_point.is_finite() && counts_per_point > 0.0) {
        return Err(SynthError::BadCounts(counts_per_point));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pl = spectrum
        .pl_norm
        .iter()
        .map(|&p| {
            let mean = p * counts_per_point;
            if mean <= 0.0 {
                return 0.0;
            }
            // Poisson::new only fails for non-positive or non-finite means.
            let dist = Poisson::new(mean).expect("positive finite mean");
            dist.sample(&mut rng) / counts_per_point
        })
        .collect();
    OdmrSpectrum::new(
        spectrum.freqs_mhz.clone(),
        pl,
        Some(vec![counts_per_point; spectrum.len()]),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecayKind {
    Rabi,
    Fid,
    Hahn,
    T1,
}

impl DecayKind {
    pub const ALL: [DecayKind; 4] = [
        DecayKind::Rabi,
        DecayKind::Fid,
        DecayKind::Hahn,
        DecayKind::T1,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            DecayKind::Rabi => "rabi",
            DecayKind::Fid => "fid",
            DecayKind::Hahn => "hahn",
            DecayKind::T1 => "t1",
        }
    }
}

impl fmt::Display for DecayKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DecayKind {
    type Err = SynthError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "rabi" => Ok(DecayKind::Rabi),
            "fid" | "ramsey" => Ok(DecayKind::Fid),
            "hahn" | "echo" => Ok(DecayKind::Hahn),
            "t1" => Ok(DecayKind::T1),
            _ => Err(SynthError::UnknownKind(s.to_string())),
        }
    }
}

/// Coherence-decay signal models. Times in µs, frequencies in MHz.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DecayModel {
    /// a·exp(−t/τ)·cos(2π f t + φ) + c
    Rabi {
        amplitude: f64,
        tau_us: f64,
        freq_mhz: f64,
        phase_rad: f64,
        offset: f64,
    },
    /// a·exp(−(t/T2*)^p)·⅓Σ_m cos(2π(f_d + m·A)t) + c, m ∈ {−1, 0, 1}
    Fid {
        amplitude: f64,
        t2_star_us: f64,
        stretch: f64,
        detuning_mhz: f64,
        hyperfine_mhz: f64,
        offset: f64,
    },
    /// a·exp(−(t/T2)^p) + c
    Hahn {
        amplitude: f64,
        t2_us: f64,
        stretch: f64,
        offset: f64,
    },
    /// a·exp(−t/T1) + c
    T1 {
        amplitude: f64,
        t1_us: f64,
        offset: f64,
    },
}

impl DecayModel {
    pub fn kind(&self) -> DecayKind {
        match self {
            DecayModel::Rabi { .. } => DecayKind::Rabi,
            DecayModel::Fid { .. } => DecayKind::Fid,
            DecayModel::Hahn { .. } => DecayKind::Hahn,
            DecayModel::T1 { .. } => DecayKind::T1,
        }
    }

    /// The characteristic decay time (µs) of the model.
    pub fn decay_time_us(&self) -> f64 {
        match *self {
            DecayModel::Rabi { tau_us, .. } => tau_us,
            DecayModel::Fid { t2_star_us, .. } => t2_star_us,
            DecayModel::Hahn { t2_us, .. } => t2_us,
            DecayModel::T1 { t1_us, .. } => t1_us,
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let stretch = match *self {
            DecayModel::Fid { stretch, .. } | DecayModel::Hahn { stretch, .. } => stretch,
            _ => 1.0,
        };
        let t = self.decay_time_us();
        if !(t.is_finite() && t > 0.0) {
            return Err(SynthError::BadDecayParams(format!(
                "decay time must be > 0, got {t}"
            )));
        }
        if !(stretch.is_finite() && stretch > 0.0) {
            return Err(SynthError::BadDecayParams(format!(
                "stretch must be > 0, got {stretch}"
            )));
        }
        let finite = match *self {
            DecayModel::Rabi {
                amplitude,
                freq_mhz,
                phase_rad,
                offset,
                ..
            } => [amplitude, freq_mhz, phase_rad, offset]
                .iter()
                .all(|x| x.is_finite()),
            DecayModel::Fid {
                amplitude,
                detuning_mhz,
                hyperfine_mhz,
                offset,
                ..
            } => [amplitude, detuning_mhz, hyperfine_mhz, offset]
                .iter()
                .all(|x| x.is_finite()),
            DecayModel::Hahn {
                amplitude, offset, ..
            }
            | DecayModel::T1 {
                amplitude, offset, ..
            } => amplitude.is_finite() && offset.is_finite(),
        };
        if !finite {
            return Err(SynthError::BadDecayParams("non-finite parameter".into()));
        }
        Ok(())
    }

    pub fn evaluate(&self, t: f64) -> f64 {
        match *self {
            DecayModel::Rabi {
                amplitude,
                tau_us,
                freq_mhz,
                phase_rad,
                offset,
            } => {
                amplitude * (-t / tau_us).exp() * (2.0 * PI * freq_mhz * t + phase_rad).cos()
                    + offset
            }
            DecayModel::Fid {
                amplitude,
                t2_star_us,
                stretch,
                detuning_mhz,
                hyperfine_mhz,
                offset,
            } => {
                let beat: f64 = [-1.0, 0.0, 1.0]
                    .iter()
                    .map(|m| (2.0 * PI * (detuning_mhz + m * hyperfine_mhz) * t).cos())
                    .sum();
                amplitude * (-(t / t2_star_us).powf(stretch)).exp() * beat / 3.0 + offset
            }
            DecayModel::Hahn {
                amplitude,
                t2_us,
                stretch,
                offset,
            } => amplitude * (-(t / t2_us).powf(stretch)).exp() + offset,
            DecayModel::T1 {
                amplitude,
                t1_us,
                offset,
            } => amplitude * (-t / t1_us).exp() + offset,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayRecord {
    pub times_us: Vec<f64>,
    pub signal: Vec<f64>,
    pub model_kind: DecayKind,
}

impl DecayRecord {
    pub fn new(
        times_us: Vec<f64>,
        signal: Vec<f64>,
        model_kind: DecayKind,
    ) -> Result<Self, SynthError> {
        check_grid(&times_us)?;
        if signal.len() != times_us.len() {
            return Err(SynthError::LengthMismatch(format!(
                "{} times vs {} signal values",
                times_us.len(),
                signal.len()
            )));
        }
        if signal.iter().any(|s| !s.is_finite()) {
            return Err(SynthError::BadDecayParams(
                "signal contains non-finite values".into(),
            ));
        }
        Ok(Self {
            times_us,
            signal,
            model_kind,
        })
    }
}

/// Samples `model` on `times_us`, optionally adding seeded Gaussian read noise
/// with standard deviation `read_noise`.
pub fn synthesize_decay(
    model: &DecayModel,
    times_us: &[f64],
    read_noise: Option<f64>,
    seed: u64,
) -> Result<DecayRecord, SynthError> {
    check_grid(times_us)?;
    model.validate()?;
    let mut signal: Vec<f64> = times_us.iter().map(|&t| model.evaluate(t)).collect();
    if let Some(sigma) = read_noise {
        if !(sigma.is_finite() && sigma >= 0.0) {
            return Err(SynthError::BadDecayParams(format!(
                "read noise must be >= 0, got {sigma}"
            )));
        }
        if sigma > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let normal = Normal::new(0.0, sigma).expect("finite positive sigma");
            for s in &mut signal {
                *s += normal.sample(&mut rng);
            }
        }
    }
    DecayRecord::new(times_us.to_vec(), signal, model.kind())
}
