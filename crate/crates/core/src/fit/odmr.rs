use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::lm::{levenberg_marquardt, LeastSquaresProblem, LmOptions};
use super::peaks::{detect_peaks, PeakEstimate, PeakSet};
use super::{
    exp_map, identity, logistic, logistic_map, logit, FitError, FitFlag, FitResult, ParamMap,
};
use crate::synth::OdmrSpectrum;

/// Multi-Lorentzian dip model pl(f) = b·(1 − Σ c_k / (1 + (2(f − f_k)/w_k)²)).
///
/// Engine parameters: `[b, (f_k − f₀, ln w_k, logit c_k)…]`, or with a shared
/// width `[b, ln w, (f_k − f₀, logit c_k)…]`, where f₀ is the midpoint of the
/// frequency grid.
#[derive(Debug, Clone)]
pub struct OdmrProblem<'a> {
    pub freqs: &'a [f64],
    pub data: &'a [f64],
    pub n_peaks: usize,
    pub shared_width: bool,
}

struct PeakView {
    center: f64,
    center_idx: usize,
    width: f64,
    width_idx: usize,
    contrast: f64,
    contrast_idx: usize,
}

impl OdmrProblem<'_> {
    pub fn origin(&self) -> f64 {
        match (self.freqs.first(), self.freqs.last()) {
            (Some(a), Some(b)) => 0.5 * (a + b),
            _ => 0.0,
        }
    }

    fn peak(&self, p: &[f64], k: usize) -> PeakView {
        let (center_idx, width_idx, contrast_idx) = if self.shared_width {
            (2 + 2 * k, 1, 3 + 2 * k)
        } else {
            (1 + 3 * k, 2 + 3 * k, 3 + 3 * k)
        };
        PeakView {
            center: self.origin() + p[center_idx],
            center_idx,
            width: p[width_idx].exp(),
            width_idx,
            contrast: logistic(p[contrast_idx]),
            contrast_idx,
        }
    }

    pub fn model_at(&self, p: &[f64], f: f64) -> f64 {
        let dips: f64 = (0..self.n_peaks)
            .map(|k| {
                let v = self.peak(p, k);
                let u = 2.0 * (f - v.center) / v.width;
                v.contrast / (1.0 + u * u)
            })
            .sum();
        p[0] * (1.0 - dips)
    }

    pub fn engine_params(&self, baseline: f64, peaks: &[PeakEstimate]) -> Vec<f64> {
        let f0 = self.origin();
        let mut p = vec![baseline];
        if self.shared_width {
            let mean_w = peaks.iter().map(|q| q.fwhm_mhz.ln()).sum::<f64>() / peaks.len() as f64;
            p.push(mean_w);
            for q in peaks {
                p.push(q.center_mhz - f0);
                p.push(logit(q.contrast));
            }
        } else {
            for q in peaks {
                p.push(q.center_mhz - f0);
                p.push(q.fwhm_mhz.ln());
                p.push(logit(q.contrast));
            }
        }
        p
    }
}

impl LeastSquaresProblem for OdmrProblem<'_> {
    fn n_params(&self) -> usize {
        if self.shared_width {
            2 + 2 * self.n_peaks
        } else {
            1 + 3 * self.n_peaks
        }
    }

    fn n_residuals(&self) -> usize {
        self.freqs.len()
    }

    fn param_names(&self) -> Vec<String> {
        let mut names = vec!["baseline".to_string()];
        if self.shared_width {
            names.push("ln_fwhm".into());
            for k in 0..self.n_peaks {
                names.push(format!("center_offset_{k}"));
                names.push(format!("logit_contrast_{k}"));
            }
        } else {
            for k in 0..self.n_peaks {
                names.push(format!("center_offset_{k}"));
                names.push(format!("ln_fwhm_{k}"));
                names.push(format!("logit_contrast_{k}"));
            }
        }
        names
    }

    fn residuals(&self, p: &[f64], out: &mut [f64]) {
        for (i, (&f, &y)) in self.freqs.iter().zip(self.data).enumerate() {
            out[i] = self.model_at(p, f) - y;
        }
    }

    fn jacobian(&self, p: &[f64], jac: &mut DMatrix<f64>) -> bool {
        jac.fill(0.0);
        let b = p[0];
        let peaks: Vec<PeakView> = (0..self.n_peaks).map(|k| self.peak(p, k)).collect();
        for (i, &f) in self.freqs.iter().enumerate() {
            let mut dips = 0.0;
            for v in &peaks {
                let u = 2.0 * (f - v.center) / v.width;
                let l = 1.0 / (1.0 + u * u);
                dips += v.contrast * l;
                let l2 = l * l;
                jac[(i, v.center_idx)] = -b * v.contrast * 4.0 * u * l2 / v.width;
                jac[(i, v.width_idx)] += -b * v.contrast * 2.0 * u * u * l2;
                jac[(i, v.contrast_idx)] = -b * l * v.contrast * (1.0 - v.contrast);
            }
            jac[(i, 0)] = 1.0 - dips;
        }
        true
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OdmrFitOptions {
    /// Number of dips to fit; `None` uses every detected candidate.
    pub n_peaks: Option<usize>,
    pub shared_width: bool,
    #[serde(skip)]
    pub lm: LmOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OdmrFit {
    pub baseline: f64,
    pub sigma_baseline: f64,
    /// Fitted dips, sorted by center.
    pub peaks: PeakSet,
    pub result: FitResult,
}

impl OdmrFit {
    /// The fitted curve on `freqs`.
    pub fn model_curve(&self, freqs: &[f64]) -> Vec<f64> {
        freqs
            .iter()
            .map(|&f| {
                let dips: f64 = self
                    .peaks
                    .peaks
                    .iter()
                    .map(|q| {
                        let u = 2.0 * (f - q.center_mhz) / q.fwhm_mhz;
                        q.contrast / (1.0 + u * u)
                    })
                    .sum();
                self.baseline * (1.0 - dips)
            })
            .collect()
    }
}

fn median_spacing(freqs: &[f64]) -> f64 {
    let mut d: Vec<f64> = freqs.windows(2).map(|w| w[1] - w[0]).collect();
    super::peaks::median(&mut d)
}

/// Fits a sum of Lorentzian dips to `spectrum`.
///
/// Without `init`, starting values come from [`detect_peaks`]; when more
/// candidates are found than requested the deepest are kept. A fitted width
/// below twice the grid spacing marks the fit as not converged.
pub fn fit_odmr(
    spectrum: &OdmrSpectrum,
    opts: &OdmrFitOptions,
    init: Option<&PeakSet>,
) -> Result<OdmrFit, FitError> {
    if opts.n_peaks == Some(0) {
        return Err(FitError::InvalidInput("n_peaks must be at least 1".into()));
    }
    let mut start: Vec<PeakEstimate> = match init {
        Some(set) if !set.is_empty() => set.peaks.clone(),
        Some(_) => return Err(FitError::InvalidInput("initial peak set is empty".into())),
        None => {
            let mut found = detect_peaks(spectrum)?.peaks;
            if let Some(n) = opts.n_peaks {
                if found.len() < n {
                    return Err(FitError::PeakCountMismatch {
                        requested: n,
                        found: found.len(),
                    });
                }
                found.sort_by(|a, b| b.contrast.total_cmp(&a.contrast));
                found.truncate(n);
            }
            found
        }
    };
    start.sort_by(|a, b| a.center_mhz.total_cmp(&b.center_mhz));
    if start
        .iter()
        .any(|q| !(q.fwhm_mhz > 0.0 && q.contrast > 0.0 && q.contrast < 1.0))
    {
        return Err(FitError::InvalidInput(
            "initial peaks need fwhm > 0 and 0 < contrast < 1".into(),
        ));
    }
    let n_peaks = start.len();
    let problem = OdmrProblem {
        freqs: &spectrum.freqs_mhz,
        data: &spectrum.pl_norm,
        n_peaks,
        shared_width: opts.shared_width,
    };
    let mut sorted_pl = spectrum.pl_norm.clone();
    sorted_pl.sort_by(f64::total_cmp);
    let baseline0 = sorted_pl[(0.9 * (sorted_pl.len() - 1) as f64) as usize].max(1e-12);
    let theta0 = problem.engine_params(baseline0, &start);
    let raw = levenberg_marquardt(&problem, &theta0, &opts.lm)?;

    let mut names = vec!["baseline".to_string()];
    let mut maps: Vec<ParamMap> = vec![identity];
    if opts.shared_width {
        names.push("fwhm_mhz".into());
        maps.push(exp_map);
        for k in 0..n_peaks {
            names.push(format!("center_{k}_mhz"));
            names.push(format!("contrast_{k}"));
            maps.push(identity);
            maps.push(logistic_map);
        }
    } else {
        for k in 0..n_peaks {
            names.push(format!("center_{k}_mhz"));
            names.push(format!("fwhm_{k}_mhz"));
            names.push(format!("contrast_{k}"));
            maps.extend([identity as ParamMap, exp_map, logistic_map]);
        }
    }
    let mut result = raw.transformed(&names, &maps);
    let f0 = problem.origin();
    for p in result
        .params
        .iter_mut()
        .filter(|p| p.name.starts_with("center_"))
    {
        p.value += f0;
    }

    let get = |name: &str| {
        result
            .get(name)
            .map(|p| (p.value, p.sigma))
            .unwrap_or((f64::NAN, f64::NAN))
    };
    let shared = get("fwhm_mhz");
    let mut peaks: Vec<PeakEstimate> = (0..n_peaks)
        .map(|k| {
            let (c, sc) = get(&format!("center_{k}_mhz"));
            let (w, sw) = if opts.shared_width {
                shared
            } else {
                get(&format!("fwhm_{k}_mhz"))
            };
            let (a, sa) = get(&format!("contrast_{k}"));
            PeakEstimate {
                center_mhz: c,
                fwhm_mhz: w,
                contrast: a,
                sigma_center_mhz: sc,
                sigma_fwhm_mhz: sw,
                sigma_contrast: sa,
            }
        })
        .collect();
    peaks.sort_by(|a, b| a.center_mhz.total_cmp(&b.center_mhz));
    let (baseline, sigma_baseline) = get("baseline");

    let min_fwhm = 2.0 * median_spacing(&spectrum.freqs_mhz);
    for (k, q) in peaks.iter().enumerate() {
        if q.fwhm_mhz < min_fwhm {
            result.flags.push(FitFlag::DegenerateWidth {
                peak: k,
                fwhm_mhz: q.fwhm_mhz,
                min_fwhm_mhz: min_fwhm,
            });
            result.converged = false;
        }
    }
    Ok(OdmrFit {
        baseline,
        sigma_baseline,
        peaks: PeakSet { peaks },
        result,
    })
}
