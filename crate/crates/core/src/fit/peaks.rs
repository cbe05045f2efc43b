use serde::{Deserialize, Serialize};

use super::FitError;
use crate::synth::OdmrSpectrum;

const MIN_SAMPLES: usize = 16;

/// One Lorentzian dip with 1σ uncertainties (zero for initial guesses).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeakEstimate {
    pub center_mhz: f64,
    pub fwhm_mhz: f64,
    pub contrast: f64,
    #[serde(default)]
    pub sigma_center_mhz: f64,
    #[serde(default)]
    pub sigma_fwhm_mhz: f64,
    #[serde(default)]
    pub sigma_contrast: f64,
}

impl PeakEstimate {
    pub fn guess(center_mhz: f64, fwhm_mhz: f64, contrast: f64) -> Self {
        Self {
            center_mhz,
            fwhm_mhz,
            contrast,
            sigma_center_mhz: 0.0,
            sigma_fwhm_mhz: 0.0,
            sigma_contrast: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PeakSet {
    pub peaks: Vec<PeakEstimate>,
}

impl PeakSet {
    pub fn len(&self) -> usize {
        self.peaks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.peaks.is_empty()
    }

    pub fn centers(&self) -> Vec<f64> {
        self.peaks.iter().map(|p| p.center_mhz).collect()
    }

    pub fn sort_by_center(&mut self) {
        self.peaks
            .sort_by(|a, b| a.center_mhz.total_cmp(&b.center_mhz));
    }
}

pub(crate) fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

fn percentile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let idx = (q * (v.len() - 1) as f64).round() as usize;
    v[idx.min(v.len() - 1)]
}

/// Robust per-sample noise estimate: MAD of first differences, scaled to a
/// Gaussian σ and divided by √2 for the differencing.
pub(crate) fn noise_sigma(values: &[f64]) -> f64 {
    let diffs: Vec<f64> = values.windows(2).map(|w| w[1] - w[0]).collect();
    let med = median(&mut diffs.clone());
    let mut dev: Vec<f64> = diffs.iter().map(|d| (d - med).abs()).collect();
    1.4826 * median(&mut dev) / std::f64::consts::SQRT_2
}

fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    let n = values.len();
    let half = window / 2;
    let mut prefix = vec![0.0; n + 1];
    for i in 0..n {
        prefix[i + 1] = prefix[i] + values[i];
    }
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(n);
            (prefix[hi] - prefix[lo]) / (hi - lo) as f64
        })
        .collect()
}

/// Finds candidate dips for fit initialization.
///
/// The spectrum is smoothed with a moving average of max(5, N/100) samples.
/// Local minima lying more than 3σ (σ from [`noise_sigma`]) below the
/// baseline become candidates; candidates not separated by a local maximum at
/// least 3 smoothed-σ higher are merged into the deeper one.
pub fn detect_peaks(spectrum: &OdmrSpectrum) -> Result<PeakSet, FitError> {
    let n = spectrum.len();
    if n < MIN_SAMPLES {
        return Err(FitError::TooFewSamples {
            needed: MIN_SAMPLES,
            got: n,
        });
    }
    let f = &spectrum.freqs_mhz;
    let window = (n / 100).max(5);
    let smooth = moving_average(&spectrum.pl_norm, window);
    let sigma = noise_sigma(&spectrum.pl_norm);
    let baseline = percentile(&smooth, 0.9);
    let floor = 1e-9 * baseline.abs().max(1.0);
    let threshold = baseline - (3.0 * sigma).max(floor);
    let prominence = (3.0 * sigma / (window as f64).sqrt()).max(floor);

    let mut minima: Vec<usize> = (0..n)
        .filter(|&i| {
            let left_ok = i == 0 || smooth[i] <= smooth[i - 1];
            let right_ok = i + 1 == n || smooth[i] < smooth[i + 1];
            let strict =
                (i > 0 && smooth[i] < smooth[i - 1]) || (i + 1 < n && smooth[i] < smooth[i + 1]);
            left_ok && right_ok && strict && smooth[i] < threshold
        })
        .collect();

    // merge minima that are not separated by a significant ridge
    loop {
        let mut merged = false;
        for k in 0..minima.len().saturating_sub(1) {
            let (a, b) = (minima[k], minima[k + 1]);
            let ridge = smooth[a..=b]
                .iter()
                .copied()
                .fold(f64::NEG_INFINITY, f64::max);
            let shallower = smooth[a].max(smooth[b]);
            if ridge - shallower < prominence {
                let drop = if smooth[a] <= smooth[b] { k + 1 } else { k };
                minima.remove(drop);
                merged = true;
                break;
            }
        }
        if !merged {
            break;
        }
    }

    if minima.is_empty() {
        return Err(FitError::NoPeaks);
    }

    let crossing = |i: usize, level: f64, step: isize| -> Option<f64> {
        let mut j = i as isize;
        loop {
            let next = j + step;
            if next < 0 || next >= n as isize {
                return None;
            }
            let (ju, nu) = (j as usize, next as usize);
            if smooth[nu] >= level {
                let t = (level - smooth[ju]) / (smooth[nu] - smooth[ju]);
                return Some(f[ju] + t * (f[nu] - f[ju]));
            }
            j = next;
        }
    };

    let mut peaks: Vec<PeakEstimate> = minima
        .iter()
        .map(|&i| {
            let depth = baseline - smooth[i];
            let half = baseline - 0.5 * depth;
            let left = crossing(i, half, -1).map(|x| f[i] - x);
            let right = crossing(i, half, 1).map(|x| x - f[i]);
            let fwhm = match (left, right) {
                (Some(l), Some(r)) => l + r,
                (Some(h), None) | (None, Some(h)) => 2.0 * h,
                (None, None) => 0.1 * (f[n - 1] - f[0]),
            };
            let spacing = (f[n - 1] - f[0]) / (n - 1) as f64;
            PeakEstimate::guess(
                f[i],
                fwhm.max(2.0 * spacing),
                (depth / baseline).clamp(1e-6, 0.99),
            )
        })
        .collect();
    peaks.sort_by(|a, b| a.center_mhz.total_cmp(&b.center_mhz));
    Ok(PeakSet { peaks })
}
