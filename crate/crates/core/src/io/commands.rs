//! One function per CLI subcommand. Each returns a [`ResultDocument`] and a
//! [`Status`]; input and configuration problems surface as [`IoError`].

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::config::RunConfig;
use super::table;
use super::{IoError, ResultDocument};
use crate::fit::{
    fit_decay, fit_odmr, fit_saturation, saturation_model, FitError, FitFlag, FitResult,
    PeakEstimate, PeakSet,
};
use crate::sensitivity::sensitivity_report;
use crate::synth::{
    add_shot_noise, peaks_from_field, synthesize_decay, synthesize_odmr, DecayKind,
};
use crate::vector::{projections_from_odmr, reconstruct_field, VectorError};

/// Outcome of a command that ran to completion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    /// The analysis did not converge or the data were degenerate.
    Failed,
}

impl Status {
    pub fn exit_code(self) -> i32 {
        match self {
            Status::Ok => 0,
            Status::Failed => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CommandOutput {
    pub document: ResultDocument,
    pub status: Status,
}

impl CommandOutput {
    fn ok(document: ResultDocument) -> Self {
        Self {
            document,
            status: Status::Ok,
        }
    }

    fn failed(mut document: ResultDocument, reason: String) -> Self {
        document.status = Status::Failed;
        document.warnings.push(reason);
        Self {
            document,
            status: Status::Failed,
        }
    }
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).unwrap_or(Value::Null)
}

fn flag_warnings(result: &FitResult) -> Vec<String> {
    result
        .flags
        .iter()
        .map(|f| match f {
            FitFlag::DegenerateWidth { peak, fwhm_mhz, min_fwhm_mhz } => {
                format!("peak {peak}: fwhm {fwhm_mhz:.4} MHz is below twice the grid spacing ({min_fwhm_mhz:.4} MHz)")
            }
            FitFlag::InsufficientSpan { span_us, decay_time_us } => {
                format!("record span {span_us} us is shorter than the fitted decay time {decay_time_us:.4} us")
            }
            FitFlag::WideUncertainty { param, reason } => format!("{param}: {reason}"),
            FitFlag::SingularCovariance => "covariance matrix is singular; sigmas are unavailable".to_string(),
        })
        .collect()
}

/// Splits fit errors into input errors (exit 1) and analysis failures.
fn fit_failure(doc: ResultDocument, err: FitError) -> Result<CommandOutput, IoError> {
    match err {
        FitError::InvalidInput(_) | FitError::TooFewSamples { .. } => {
            Err(IoError::Data(err.to_string()))
        }
        FitError::MaxIterations(partial) => {
            let mut doc = doc;
            doc.results = json!({ "partial_fit": to_value(&*partial) });
            Ok(CommandOutput::failed(
                doc,
                format!("no convergence after {} iterations", partial.iterations),
            ))
        }
        other => Ok(CommandOutput::failed(doc, other.to_string())),
    }
}

/// Sidecar path for the ground truth of a simulated file.
pub fn truth_path(output: &Path) -> PathBuf {
    output.with_extension("truth.json")
}

fn write_json(path: &Path, value: &Value) -> Result<(), IoError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| IoError::Io(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| IoError::Io(format!("{}: {e}", path.display())))
}

pub fn cmd_simulate_odmr(
    config: &RunConfig,
    seed: u64,
    output: &Path,
) -> Result<CommandOutput, IoError> {
    let model = config.nv_model()?;
    let grid = config.frequency_grid()?;
    let sim = config
        .simulate
        .as_ref()
        .ok_or_else(|| IoError::Config("simulate: section is required".into()))?;
    let peaks = match (config.field(), &sim.peaks) {
        (Some(b), _) => {
            // validated together with field_mt
            let (w, c) = (
                sim.width_mhz.unwrap_or(f64::NAN),
                sim.contrast.unwrap_or(f64::NAN),
            );
            peaks_from_field(&model, &b, w, c)
                .map_err(|e| IoError::Config(format!("simulate: {e}")))?
        }
        (None, Some(p)) => p.clone(),
        (None, None) => {
            return Err(IoError::Config(
                "simulate: missing field_mt or peaks".into(),
            ))
        }
    };
    let clean =
        synthesize_odmr(&peaks, &grid).map_err(|e| IoError::Config(format!("simulate: {e}")))?;
    let spectrum = match sim.counts_per_point {
        Some(counts) => {
            add_shot_noise(&clean, counts, seed).map_err(|e| IoError::Config(e.to_string()))?
        }
        None => clean,
    };
    table::write_odmr_file(output, &spectrum)?;
    let truth = json!({
        "synthetic": true,
        "seed": seed,
        "model": to_value(&model),
        "field_mt": config.field().map(|b| to_value(&b)),
        "counts_per_point": sim.counts_per_point,
        "peaks": to_value(&peaks),
    });
    let sidecar = truth_path(output);
    write_json(&sidecar, &truth)?;

    let mut doc = ResultDocument::new("simulate-odmr", config);
    doc.results = json!({
        "output": output.display().to_string(),
        "truth": sidecar.display().to_string(),
        "points": spectrum.len(),
        "seed": seed,
        "peaks": to_value(&peaks),
    });
    Ok(CommandOutput::ok(doc))
}

pub fn cmd_simulate_decay(
    config: &RunConfig,
    seed: u64,
    output: &Path,
) -> Result<CommandOutput, IoError> {
    let (times, sim) = config.decay_grid()?;
    let record = synthesize_decay(&sim.model, &times, sim.read_noise, seed)
        .map_err(|e| IoError::Config(format!("decay: {e}")))?;
    table::write_decay_file(output, &record)?;
    let truth = json!({
        "synthetic": true,
        "seed": seed,
        "model": to_value(&sim.model),
        "read_noise": sim.read_noise,
    });
    let sidecar = truth_path(output);
    write_json(&sidecar, &truth)?;

    let mut doc = ResultDocument::new("simulate-decay", config);
    doc.results = json!({
        "output": output.display().to_string(),
        "truth": sidecar.display().to_string(),
        "points": times.len(),
        "seed": seed,
        "model": to_value(&sim.model),
    });
    Ok(CommandOutput::ok(doc))
}

pub fn cmd_fit_odmr(
    config: &RunConfig,
    input: &Path,
    plot: Option<&Path>,
) -> Result<CommandOutput, IoError> {
    let spectrum = table::read_odmr_file(input)?;
    let mut doc = ResultDocument::new("fit-odmr", config);
    let fit = match fit_odmr(&spectrum, &config.odmr_fit_options(), None) {
        Ok(fit) => fit,
        Err(e) => return fit_failure(doc, e),
    };
    if let Some(path) = plot {
        let curve = fit.model_curve(&spectrum.freqs_mhz);
        table::write_plot_file(
            path,
            "freq_mhz",
            &spectrum.freqs_mhz,
            &spectrum.pl_norm,
            &curve,
        )?;
    }
    doc.warnings = flag_warnings(&fit.result);
    doc.results = json!({
        "baseline": fit.baseline,
        "sigma_baseline": fit.sigma_baseline,
        "peaks": to_value(&fit.peaks.peaks),
        "residual_rms": fit.result.residual_rms,
        "converged": fit.result.converged,
        "iterations": fit.result.iterations,
        "params": to_value(&fit.result.params),
        "flags": to_value(&fit.result.flags),
    });
    if fit.result.converged {
        Ok(CommandOutput::ok(doc))
    } else {
        Ok(CommandOutput::failed(
            doc,
            "ODMR fit did not converge to a resolvable solution".into(),
        ))
    }
}

#[derive(Deserialize)]
struct PeakList {
    peaks: Vec<PeakEstimate>,
}

/// Accepts a bare `{"peaks": [...]}` list (a truth sidecar qualifies) or a
/// fit-odmr result document.
fn parse_peaks(text: &str) -> Result<PeakSet, IoError> {
    let value: Value =
        serde_json::from_str(text).map_err(|e| IoError::Data(format!("peaks JSON: {e}")))?;
    let list = match value.get("results") {
        Some(results) => results.clone(),
        None => value,
    };
    let list: PeakList =
        serde_json::from_value(list).map_err(|e| IoError::Data(format!("peaks JSON: {e}")))?;
    Ok(PeakSet { peaks: list.peaks })
}

pub fn cmd_reconstruct(config: &RunConfig, input: &Path) -> Result<CommandOutput, IoError> {
    let model = config.nv_model()?;
    let text = std::fs::read_to_string(input)
        .map_err(|e| IoError::Io(format!("{}: {e}", input.display())))?;
    let peaks = parse_peaks(&text).map_err(|e| e.in_file(input))?;
    if peaks.peaks.iter().any(|p| {
        !p.center_mhz.is_finite() || p.sigma_center_mhz.is_nan() || p.sigma_center_mhz < 0.0
    }) {
        return Err(IoError::Data(
            "peak centers must be finite with non-negative sigma".into(),
        ));
    }
    let mut doc = ResultDocument::new("reconstruct", config);
    let paired = match projections_from_odmr(&model, &peaks, &config.pairing_options()) {
        Ok(p) => p,
        Err(VectorError::PairingFailed {
            threshold_mhz,
            best_mhz,
            pairs,
        }) => {
            doc.results = json!({
                "pairing_threshold_mhz": threshold_mhz,
                "best_max_asymmetry_mhz": best_mhz,
                "pairs": to_value(&pairs),
            });
            let reason = format!(
                "no pairing is symmetric about D within {threshold_mhz:.3} MHz (best {best_mhz:.3} MHz)"
            );
            return Ok(CommandOutput::failed(doc, reason));
        }
        Err(e) => return Ok(CommandOutput::failed(doc, e.to_string())),
    };
    for axis in &paired.below_e {
        doc.warnings.push(format!(
            "axis {axis}: splitting below 2E; projection set to zero"
        ));
    }
    let projections: Vec<Value> = paired
        .projections
        .entries
        .iter()
        .map(|p| match p {
            Some(p) => json!({ "b_mt": p.b_mt, "sigma_mt": p.sigma_mt }),
            None => Value::Null,
        })
        .collect();
    match reconstruct_field(&model, &paired.projections) {
        Ok(rec) => {
            if rec.ambiguity_note.tied_solutions.len() > 1 {
                doc.warnings.push(format!(
                    "{} sign patterns fit equally well; reporting the first in canonical order",
                    rec.ambiguity_note.tied_solutions.len()
                ));
            }
            doc.results = json!({
                "field_mt": to_value(&rec.b),
                "magnitude_mt": rec.b.magnitude(),
                "sigma_magnitude_mt": rec.sigma_magnitude_mt,
                "signs": rec.signs,
                "residual_mt": rec.residual_mt,
                "ambiguity_note": to_value(&rec.ambiguity_note),
                "projections": projections,
                "pairs": to_value(&paired.pairs),
                "below_e_axes": paired.below_e,
            });
            Ok(CommandOutput::ok(doc))
        }
        Err(e) => {
            doc.results = json!({ "projections": projections, "pairs": to_value(&paired.pairs) });
            Ok(CommandOutput::failed(doc, e.to_string()))
        }
    }
}

pub fn cmd_fit_decay(
    config: &RunConfig,
    input: &Path,
    kind: DecayKind,
    plot: Option<&Path>,
) -> Result<CommandOutput, IoError> {
    let record = table::read_decay_file(input, kind)?;
    let opts = config.decay_fit_options()?;
    let mut doc = ResultDocument::new("fit-decay", config);
    let fit = match fit_decay(&record, kind, &opts) {
        Ok(fit) => fit,
        Err(e) => return fit_failure(doc, e),
    };
    if let Some(path) = plot {
        let curve: Vec<f64> = record
            .times_us
            .iter()
            .map(|&t| fit.model.evaluate(t))
            .collect();
        table::write_plot_file(path, "time_us", &record.times_us, &record.signal, &curve)?;
    }
    let (tau, sigma_tau) = fit.decay_time();
    doc.warnings = flag_warnings(&fit.result);
    doc.results = json!({
        "kind": kind.as_str(),
        "decay_time_us": tau,
        "sigma_decay_time_us": sigma_tau,
        "model": to_value(&fit.model),
        "residual_rms": fit.result.residual_rms,
        "converged": fit.result.converged,
        "iterations": fit.result.iterations,
        "params": to_value(&fit.result.params),
        "flags": to_value(&fit.result.flags),
    });
    Ok(CommandOutput::ok(doc))
}

pub fn cmd_fit_saturation(
    config: &RunConfig,
    input: &Path,
    plot: Option<&Path>,
) -> Result<CommandOutput, IoError> {
    let curve = table::read_saturation_file(input)?;
    let mut doc = ResultDocument::new("fit-saturation", config);
    let fit = match fit_saturation(&curve) {
        Ok(fit) => fit,
        Err(e) => return fit_failure(doc, e),
    };
    if let Some(path) = plot {
        let model: Vec<f64> = curve
            .powers_mw
            .iter()
            .map(|&p| saturation_model(fit.c_sat, fit.p_sat_mw, p))
            .collect();
        table::write_plot_file(path, "power_mw", &curve.powers_mw, &curve.rates, &model)?;
    }
    doc.warnings = flag_warnings(&fit.result);
    doc.results = json!({
        "c_sat_hz": fit.c_sat,
        "sigma_c_sat_hz": fit.sigma_c_sat,
        "p_sat_mw": fit.p_sat_mw,
        "sigma_p_sat_mw": fit.sigma_p_sat_mw,
        "residual_rms_relative": fit.result.residual_rms,
        "converged": fit.result.converged,
        "iterations": fit.result.iterations,
        "flags": to_value(&fit.result.flags),
    });
    Ok(CommandOutput::ok(doc))
}

pub fn cmd_sensitivity(config: &RunConfig) -> Result<CommandOutput, IoError> {
    let model = config.nv_model()?;
    let inputs = config.sensitivity_inputs();
    let budget = config.photon_budget();
    let report =
        sensitivity_report(&model, &inputs, &budget).map_err(|e| IoError::Config(e.to_string()))?;
    let pt = |t: f64| t * 1e12;
    let mut doc = ResultDocument::new("sensitivity", config);
    doc.results = json!({
        "summary_pt_per_sqrthz": {
            "baseline_dc": pt(report.baseline.eta_dc_t_per_sqrthz),
            "baseline_ac": pt(report.baseline.eta_ac_t_per_sqrthz),
            "enhanced_dc": pt(report.enhanced.eta_dc_t_per_sqrthz),
            "enhanced_ac": pt(report.enhanced.eta_ac_t_per_sqrthz),
        },
        "report": to_value(&report),
    });
    Ok(CommandOutput::ok(doc))
}
