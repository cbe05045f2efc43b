use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::lm::{levenberg_marquardt, LeastSquaresProblem, LmOptions};
use super::{exp_map, identity, linear_lstsq, FitError, FitFlag, FitResult, ParamMap};
use crate::spin::DEFAULT_HYPERFINE_MHZ;
use crate::synth::{DecayKind, DecayModel, DecayRecord};

/// Decay-model residuals. Decay times and the stretch exponent are fitted as
/// logarithms.
///
/// Engine parameter layouts:
/// - rabi: `[a, ln τ, f, φ, c]`
/// - fid:  `[a, ln T2*, (ln p), f_d, A, c]`
/// - hahn: `[a, ln T2, (ln p), c]`
/// - t1:   `[a, ln T1, c]`
#[derive(Debug, Clone)]
pub struct DecayProblem<'a> {
    pub times: &'a [f64],
    pub data: &'a [f64],
    pub kind: DecayKind,
    /// Fit the stretch exponent (fid/hahn only); otherwise it is held at 1.
    pub free_stretch: bool,
}

impl DecayProblem<'_> {
    fn has_stretch(&self) -> bool {
        self.free_stretch && matches!(self.kind, DecayKind::Fid | DecayKind::Hahn)
    }

    pub fn names(&self) -> Vec<&'static str> {
        let s = self.has_stretch();
        match self.kind {
            DecayKind::Rabi => vec![
                "amplitude",
                "tau_rabi_us",
                "rabi_freq_mhz",
                "phase_rad",
                "offset",
            ],
            DecayKind::Fid if s => {
                vec![
                    "amplitude",
                    "t2_star_us",
                    "stretch",
                    "detuning_mhz",
                    "hyperfine_mhz",
                    "offset",
                ]
            }
            DecayKind::Fid => vec![
                "amplitude",
                "t2_star_us",
                "detuning_mhz",
                "hyperfine_mhz",
                "offset",
            ],
            DecayKind::Hahn if s => vec!["amplitude", "t2_us", "stretch", "offset"],
            DecayKind::Hahn => vec!["amplitude", "t2_us", "offset"],
            DecayKind::T1 => vec!["amplitude", "t1_us", "offset"],
        }
    }

    fn maps(&self) -> Vec<ParamMap> {
        self.names()
            .iter()
            .map(|n| match *n {
                "tau_rabi_us" | "t2_star_us" | "t2_us" | "t1_us" | "stretch" => exp_map as ParamMap,
                _ => identity,
            })
            .collect()
    }

    /// Natural-unit model for an engine parameter vector.
    pub fn model(&self, p: &[f64]) -> DecayModel {
        let s = self.has_stretch();
        match self.kind {
            DecayKind::Rabi => DecayModel::Rabi {
                amplitude: p[0],
                tau_us: p[1].exp(),
                freq_mhz: p[2],
                phase_rad: p[3],
                offset: p[4],
            },
            DecayKind::Fid => {
                let (stretch, rest) = if s { (p[2].exp(), 3) } else { (1.0, 2) };
                DecayModel::Fid {
                    amplitude: p[0],
                    t2_star_us: p[1].exp(),
                    stretch,
                    detuning_mhz: p[rest],
                    hyperfine_mhz: p[rest + 1],
                    offset: p[rest + 2],
                }
            }
            DecayKind::Hahn => {
                let (stretch, rest) = if s { (p[2].exp(), 3) } else { (1.0, 2) };
                DecayModel::Hahn {
                    amplitude: p[0],
                    t2_us: p[1].exp(),
                    stretch,
                    offset: p[rest],
                }
            }
            DecayKind::T1 => DecayModel::T1 {
                amplitude: p[0],
                t1_us: p[1].exp(),
                offset: p[2],
            },
        }
    }

    pub fn engine_params(&self, m: &DecayModel) -> Vec<f64> {
        let s = self.has_stretch();
        match *m {
            DecayModel::Rabi {
                amplitude,
                tau_us,
                freq_mhz,
                phase_rad,
                offset,
            } => {
                vec![amplitude, tau_us.ln(), freq_mhz, phase_rad, offset]
            }
            DecayModel::Fid {
                amplitude,
                t2_star_us,
                stretch,
                detuning_mhz,
                hyperfine_mhz,
                offset,
            } => {
                let mut v = vec![amplitude, t2_star_us.ln()];
                if s {
                    v.push(stretch.ln());
                }
                v.extend([detuning_mhz, hyperfine_mhz, offset]);
                v
            }
            DecayModel::Hahn {
                amplitude,
                t2_us,
                stretch,
                offset,
            } => {
                let mut v = vec![amplitude, t2_us.ln()];
                if s {
                    v.push(stretch.ln());
                }
                v.push(offset);
                v
            }
            DecayModel::T1 {
                amplitude,
                t1_us,
                offset,
            } => vec![amplitude, t1_us.ln(), offset],
        }
    }
}

/// Stretched-exponential envelope and its derivatives with respect to ln T
/// and ln p.
fn envelope(t: f64, time: f64, stretch: f64) -> (f64, f64, f64) {
    if t <= 0.0 {
        return (1.0, 0.0, 0.0);
    }
    let ratio = t / time;
    let x = ratio.powf(stretch);
    let e = (-x).exp();
    (e, e * stretch * x, -e * x * stretch * ratio.ln())
}

impl LeastSquaresProblem for DecayProblem<'_> {
    fn n_params(&self) -> usize {
        self.names().len()
    }

    fn n_residuals(&self) -> usize {
        self.times.len()
    }

    fn param_names(&self) -> Vec<String> {
        self.names().into_iter().map(String::from).collect()
    }

    fn residuals(&self, p: &[f64], out: &mut [f64]) {
        let m = self.model(p);
        for (i, (&t, &y)) in self.times.iter().zip(self.data).enumerate() {
            out[i] = m.evaluate(t) - y;
        }
    }

    fn jacobian(&self, p: &[f64], jac: &mut DMatrix<f64>) -> bool {
        let s = self.has_stretch();
        let model = self.model(p);
        for (i, &t) in self.times.iter().enumerate() {
            let row: Vec<f64> = match model {
                DecayModel::Rabi {
                    amplitude: a,
                    tau_us,
                    freq_mhz,
                    phase_rad,
                    ..
                } => {
                    let e = (-t / tau_us).exp();
                    let phase = 2.0 * PI * freq_mhz * t + phase_rad;
                    let (sin, cos) = phase.sin_cos();
                    vec![
                        e * cos,
                        a * e * (t / tau_us) * cos,
                        -a * e * sin * 2.0 * PI * t,
                        -a * e * sin,
                        1.0,
                    ]
                }
                DecayModel::Fid {
                    amplitude: a,
                    t2_star_us,
                    stretch,
                    detuning_mhz,
                    hyperfine_mhz,
                    ..
                } => {
                    let (e, de_dlnt, de_dlnp) = envelope(t, t2_star_us, stretch);
                    let mut beat = 0.0;
                    let mut dbeat_df = 0.0;
                    let mut dbeat_da = 0.0;
                    for m in [-1.0, 0.0, 1.0] {
                        let arg = 2.0 * PI * (detuning_mhz + m * hyperfine_mhz) * t;
                        beat += arg.cos();
                        dbeat_df -= arg.sin() * 2.0 * PI * t;
                        dbeat_da -= m * arg.sin() * 2.0 * PI * t;
                    }
                    let mut row = vec![e * beat / 3.0, a * de_dlnt * beat / 3.0];
                    if s {
                        row.push(a * de_dlnp * beat / 3.0);
                    }
                    row.extend([a * e * dbeat_df / 3.0, a * e * dbeat_da / 3.0, 1.0]);
                    row
                }
                DecayModel::Hahn {
                    amplitude: a,
                    t2_us,
                    stretch,
                    ..
                } => {
                    let (e, de_dlnt, de_dlnp) = envelope(t, t2_us, stretch);
                    let mut row = vec![e, a * de_dlnt];
                    if s {
                        row.push(a * de_dlnp);
                    }
                    row.push(1.0);
                    row
                }
                DecayModel::T1 {
                    amplitude: a,
                    t1_us,
                    ..
                } => {
                    let e = (-t / t1_us).exp();
                    vec![e, a * e * t / t1_us, 1.0]
                }
            };
            for (j, v) in row.into_iter().enumerate() {
                jac[(i, j)] = v;
            }
        }
        true
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayFitOptions {
    /// Fit a stretch exponent for fid/hahn instead of fixing it to 1.
    pub free_stretch: bool,
    /// Starting value for the hyperfine beat spacing in FID fits.
    pub hyperfine_guess_mhz: f64,
    #[serde(skip)]
    pub lm: LmOptions,
}

impl Default for DecayFitOptions {
    fn default() -> Self {
        Self {
            free_stretch: false,
            hyperfine_guess_mhz: DEFAULT_HYPERFINE_MHZ,
            lm: LmOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub model: DecayModel,
    pub result: FitResult,
}

impl DecayFit {
    pub fn decay_time(&self) -> (f64, f64) {
        let name = match self.model.kind() {
            DecayKind::Rabi => "tau_rabi_us",
            DecayKind::Fid => "t2_star_us",
            DecayKind::Hahn => "t2_us",
            DecayKind::T1 => "t1_us",
        };
        let p = self.result.get(name).expect("decay time is always fitted");
        (p.value, p.sigma)
    }
}

fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

/// Grid search over the nonlinear parameters with the linear ones solved
/// exactly at each node.
fn initial_model(
    record: &DecayRecord,
    kind: DecayKind,
    opts: &DecayFitOptions,
) -> Option<DecayModel> {
    let t = &record.times_us;
    let y = &record.signal;
    let t0 = t[0];
    let span = t[t.len() - 1] - t0;
    let dt = span / (t.len() - 1) as f64;
    let ones = vec![1.0; t.len()];
    let taus = log_grid(span / 50.0, span * 5.0, 40);
    let mut best: Option<(f64, DecayModel)> = None;
    let mut consider = |rss: f64, m: DecayModel| {
        if best.as_ref().is_none_or(|(r, _)| rss < *r) {
            best = Some((rss, m));
        }
    };
    match kind {
        DecayKind::T1 | DecayKind::Hahn => {
            for &tau in &taus {
                let e: Vec<f64> = t.iter().map(|&ti| (-ti / tau).exp()).collect();
                if let Some((c, rss)) = linear_lstsq(&[e, ones.clone()], y) {
                    let m = if kind == DecayKind::T1 {
                        DecayModel::T1 {
                            amplitude: c[0],
                            t1_us: tau,
                            offset: c[1],
                        }
                    } else {
                        DecayModel::Hahn {
                            amplitude: c[0],
                            t2_us: tau,
                            stretch: 1.0,
                            offset: c[1],
                        }
                    };
                    consider(rss, m);
                }
            }
        }
        DecayKind::Rabi | DecayKind::Fid => {
            let nyquist = 0.5 / dt;
            let df = 0.25 / span;
            let n_freq = ((0.9 * nyquist) / df).ceil() as usize;
            let coarse_taus = log_grid(span / 20.0, span * 2.0, 6);
            for k in 0..=n_freq {
                let f = k as f64 * df;
                for &tau in &coarse_taus {
                    if kind == DecayKind::Rabi {
                        let (ec, es): (Vec<f64>, Vec<f64>) = t
                            .iter()
                            .map(|&ti| {
                                let e = (-ti / tau).exp();
                                let (s, c) = (2.0 * PI * f * ti).sin_cos();
                                (e * c, e * s)
                            })
                            .unzip();
                        if let Some((c, rss)) = linear_lstsq(&[ec, es, ones.clone()], y) {
                            let amplitude = c[0].hypot(c[1]);
                            let phase = (-c[1]).atan2(c[0]);
                            consider(
                                rss,
                                DecayModel::Rabi {
                                    amplitude,
                                    tau_us: tau,
                                    freq_mhz: f,
                                    phase_rad: phase,
                                    offset: c[2],
                                },
                            );
                        }
                    } else {
                        let a_hf = opts.hyperfine_guess_mhz;
                        let col: Vec<f64> = t
                            .iter()
                            .map(|&ti| {
                                let beat: f64 = [-1.0, 0.0, 1.0]
                                    .iter()
                                    .map(|m| (2.0 * PI * (f + m * a_hf) * ti).cos())
                                    .sum();
                                (-ti / tau).exp() * beat / 3.0
                            })
                            .collect();
                        if let Some((c, rss)) = linear_lstsq(&[col, ones.clone()], y) {
                            consider(
                                rss,
                                DecayModel::Fid {
                                    amplitude: c[0],
                                    t2_star_us: tau,
                                    stretch: 1.0,
                                    detuning_mhz: f,
                                    hyperfine_mhz: a_hf,
                                    offset: c[1],
                                },
                            );
                        }
                    }
                }
            }
        }
    }
    best.map(|(_, m)| m)
}

/// Fits one of the coherence-decay models to `record`.
pub fn fit_decay(
    record: &DecayRecord,
    kind: DecayKind,
    opts: &DecayFitOptions,
) -> Result<DecayFit, FitError> {
    let n_min = match kind {
        DecayKind::Rabi | DecayKind::Fid => 8,
        _ => 4,
    };
    if record.times_us.len() < n_min {
        return Err(FitError::TooFewSamples {
            needed: n_min,
            got: record.times_us.len(),
        });
    }
    let problem = DecayProblem {
        times: &record.times_us,
        data: &record.signal,
        kind,
        free_stretch: opts.free_stretch,
    };
    let start = initial_model(record, kind, opts)
        .ok_or_else(|| FitError::InvalidInput("could not initialize decay fit".into()))?;
    let raw = levenberg_marquardt(&problem, &problem.engine_params(&start), &opts.lm)?;
    let model = problem.model(&raw.values());
    let names: Vec<String> = problem.param_names();
    let mut result = raw.transformed(&names, &problem.maps());

    let span = record.times_us[record.times_us.len() - 1] - record.times_us[0];
    let decay_time = model.decay_time_us();
    if span < decay_time {
        result.flags.push(FitFlag::InsufficientSpan {
            span_us: span,
            decay_time_us: decay_time,
        });
    }
    Ok(DecayFit { model, result })
}
