use nalgebra::{DMatrix, DVector};

use super::{FitError, FitFlag, FitParameter, FitResult};

/// A residual vector r(θ) to be minimized in the least-squares sense.
pub trait LeastSquaresProblem {
    fn n_params(&self) -> usize;

    fn n_residuals(&self) -> usize;

    fn param_names(&self) -> Vec<String> {
        (0..self.n_params()).map(|i| format!("p{i}")).collect()
    }

    fn residuals(&self, params: &[f64], out: &mut [f64]);

    /// Writes the analytic Jacobian ∂r/∂θ into `jac` and returns `true`, or
    /// returns `false` to fall back to central differences.
    fn jacobian(&self, _params: &[f64], _jac: &mut DMatrix<f64>) -> bool {
        false
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmOptions {
    pub max_iterations: usize,
    /// Relative reduction of ‖r‖² below which an accepted step ends the fit.
    pub ftol: f64,
    /// Threshold on the ∞-norm of the scaled gradient |J_jᵀr| / (‖J_j‖·‖r‖),
    /// the cosine between the residual and each Jacobian column.
    pub gtol: f64,
    pub initial_lambda: f64,
    pub lambda_factor: f64,
    pub max_lambda: f64,
    /// Force central-difference Jacobians even when an analytic one exists.
    pub numeric_jacobian: bool,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            ftol: 1e-10,
            gtol: 1e-10,
            initial_lambda: 1e-3,
            lambda_factor: 10.0,
            max_lambda: 1e12,
            numeric_jacobian: false,
        }
    }
}

/// Central-difference Jacobian with step max(1e-6, 1e-6·|θ_j|).
pub fn finite_difference_jacobian<P: LeastSquaresProblem + ?Sized>(
    problem: &P,
    params: &[f64],
) -> DMatrix<f64> {
    let m = problem.n_residuals();
    let n = problem.n_params();
    let mut jac = DMatrix::zeros(m, n);
    let mut work = params.to_vec();
    let mut plus = vec![0.0; m];
    let mut minus = vec![0.0; m];
    for j in 0..n {
        let h = (1e-6 * params[j].abs()).max(1e-6);
        work[j] = params[j] + h;
        problem.residuals(&work, &mut plus);
        work[j] = params[j] - h;
        problem.residuals(&work, &mut minus);
        work[j] = params[j];
        for i in 0..m {
            jac[(i, j)] = (plus[i] - minus[i]) / (2.0 * h);
        }
    }
    jac
}

fn evaluate_jacobian<P: LeastSquaresProblem + ?Sized>(
    problem: &P,
    params: &[f64],
    opts: &LmOptions,
) -> DMatrix<f64> {
    if !opts.numeric_jacobian {
        let mut jac = DMatrix::zeros(problem.n_residuals(), problem.n_params());
        if problem.jacobian(params, &mut jac) {
            return jac;
        }
    }
    finite_difference_jacobian(problem, params)
}

fn sum_sq(r: &[f64]) -> f64 {
    r.iter().map(|x| x * x).sum()
}

/// Damped Gauss-Newton (Levenberg) minimization of ‖r(θ)‖².
///
/// The damping term is λ·I. λ starts at `initial_lambda`, is divided by
/// `lambda_factor` after an accepted step and multiplied by it after a
/// rejected one. When no step at any λ up to `max_lambda` lowers the cost the
/// current point is taken as the minimum.
pub fn levenberg_marquardt<P: LeastSquaresProblem + ?Sized>(
    problem: &P,
    initial: &[f64],
    opts: &LmOptions,
) -> Result<FitResult, FitError> {
    let n = problem.n_params();
    let m = problem.n_residuals();
    if initial.len() != n {
        return Err(FitError::InvalidInput(format!(
            "expected {n} initial parameters, got {}",
            initial.len()
        )));
    }
    if m < n {
        return Err(FitError::InvalidInput(format!(
            "{m} residuals cannot determine {n} parameters"
        )));
    }
    if initial.iter().any(|x| !x.is_finite()) {
        return Err(FitError::InvalidInput(
            "initial parameters must be finite".into(),
        ));
    }

    let mut theta = initial.to_vec();
    let mut r = vec![0.0; m];
    problem.residuals(&theta, &mut r);
    if r.iter().any(|x| !x.is_finite()) {
        return Err(FitError::NonFinite);
    }
    let mut cost = sum_sq(&r);
    let mut lambda = opts.initial_lambda;
    let mut trial = vec![0.0; n];
    let mut r_trial = vec![0.0; m];
    let mut iterations = 0;
    let mut converged = cost == 0.0;

    while !converged && iterations < opts.max_iterations {
        let jac = evaluate_jacobian(problem, &theta, opts);
        if jac.iter().any(|x| !x.is_finite()) {
            return Err(FitError::NonFinite);
        }
        let rv = DVector::from_column_slice(&r);
        let grad = jac.tr_mul(&rv);
        let r_norm = rv.norm();
        let scaled = (0..n)
            .map(|j| {
                let col = jac.column(j).norm();
                if col > 0.0 {
                    grad[j].abs() / (col * r_norm)
                } else {
                    0.0
                }
            })
            .fold(0.0, f64::max);
        if scaled < opts.gtol {
            converged = true;
            break;
        }
        iterations += 1;
        let jtj = jac.tr_mul(&jac);
        let mut saw_non_finite = false;
        let mut solved_any = false;
        loop {
            if lambda > opts.max_lambda {
                if saw_non_finite && !solved_any {
                    return Err(FitError::NonFinite);
                }
                if !solved_any {
                    return Err(FitError::Singular);
                }
                // no descent available at any damping: stationary point
                converged = true;
                break;
            }
            let mut a = jtj.clone();
            for k in 0..n {
                a[(k, k)] += lambda;
            }
            let step = match a.cholesky() {
                Some(ch) => ch.solve(&(-&grad)),
                None => {
                    lambda *= opts.lambda_factor;
                    continue;
                }
            };
            for k in 0..n {
                trial[k] = theta[k] + step[k];
            }
            problem.residuals(&trial, &mut r_trial);
            if r_trial.iter().any(|x| !x.is_finite()) {
                saw_non_finite = true;
                lambda *= opts.lambda_factor;
                continue;
            }
            solved_any = true;
            let trial_cost = sum_sq(&r_trial);
            if trial_cost < cost {
                let reduction = (cost - trial_cost) / cost;
                std::mem::swap(&mut theta, &mut trial);
                std::mem::swap(&mut r, &mut r_trial);
                cost = trial_cost;
                lambda = (lambda / opts.lambda_factor).max(f64::MIN_POSITIVE);
                if reduction < opts.ftol || cost == 0.0 {
                    converged = true;
                }
                break;
            }
            lambda *= opts.lambda_factor;
        }
    }

    let result = summarize(problem, &theta, &r, cost, iterations, converged, opts);
    if converged {
        Ok(result)
    } else {
        Err(FitError::MaxIterations(Box::new(result)))
    }
}

fn summarize<P: LeastSquaresProblem + ?Sized>(
    problem: &P,
    theta: &[f64],
    r: &[f64],
    cost: f64,
    iterations: usize,
    converged: bool,
    opts: &LmOptions,
) -> FitResult {
    let n = theta.len();
    let m = r.len();
    let jac = evaluate_jacobian(problem, theta, opts);
    let dof = m.saturating_sub(n).max(1) as f64;
    let s2 = cost / dof;
    let mut flags = Vec::new();
    let covariance: Vec<Vec<f64>> = match jac.tr_mul(&jac).try_inverse() {
        Some(inv) if inv.iter().all(|x| x.is_finite()) => (0..n)
            .map(|i| (0..n).map(|j| s2 * inv[(i, j)]).collect())
            .collect(),
        _ => {
            flags.push(FitFlag::SingularCovariance);
            vec![vec![f64::INFINITY; n]; n]
        }
    };
    let params = problem
        .param_names()
        .into_iter()
        .zip(theta)
        .enumerate()
        .map(|(i, (name, &value))| FitParameter {
            name,
            value,
            sigma: covariance[i][i].max(0.0).sqrt(),
        })
        .collect();
    FitResult {
        params,
        residual_rms: (cost / m as f64).sqrt(),
        converged,
        iterations,
        flags,
        covariance,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    struct Linear {
        x: Vec<f64>,
        y: Vec<f64>,
    }

    impl LeastSquaresProblem for Linear {
        fn n_params(&self) -> usize {
            1
        }
        fn n_residuals(&self) -> usize {
            self.x.len()
        }
        fn residuals(&self, p: &[f64], out: &mut [f64]) {
            for ((o, x), y) in out.iter_mut().zip(&self.x).zip(&self.y) {
                *o = p[0] * x - y;
            }
        }
        fn jacobian(&self, _p: &[f64], jac: &mut DMatrix<f64>) -> bool {
            for i in 0..self.x.len() {
                jac[(i, 0)] = self.x[i];
            }
            true
        }
    }

    struct Bowl;

    impl LeastSquaresProblem for Bowl {
        fn n_params(&self) -> usize {
            3
        }
        fn n_residuals(&self) -> usize {
            3
        }
        fn residuals(&self, p: &[f64], out: &mut [f64]) {
            out[0] = p[0] - 1.0;
            out[1] = 10.0 * (p[1] + 2.0);
            out[2] = 0.1 * (p[2] - 3.0);
        }
    }

    struct Rosenbrock;

    impl LeastSquaresProblem for Rosenbrock {
        fn n_params(&self) -> usize {
            2
        }
        fn n_residuals(&self) -> usize {
            2
        }
        fn residuals(&self, p: &[f64], out: &mut [f64]) {
            out[0] = 10.0 * (p[1] - p[0] * p[0]);
            out[1] = 1.0 - p[0];
        }
    }

    struct Blowup;

    impl LeastSquaresProblem for Blowup {
        fn n_params(&self) -> usize {
            1
        }
        fn n_residuals(&self) -> usize {
            1
        }
        fn residuals(&self, p: &[f64], out: &mut [f64]) {
            out[0] = if p[0] > 0.5 { f64::NAN } else { p[0] };
        }
    }

    #[test]
    fn linear_model_in_two_iterations() {
        let x: Vec<f64> = (1..=50).map(f64::from).collect();
        let y = x.iter().map(|v| 3.5 * v).collect();
        let fit = levenberg_marquardt(&Linear { x, y }, &[0.0], &LmOptions::default()).unwrap();
        assert!(fit.converged);
        assert!(fit.iterations <= 2, "iterations = {}", fit.iterations);
        assert_abs_diff_eq!(fit.params[0].value, 3.5, epsilon = 1e-12);
    }

    #[test]
    fn quadratic_bowl_from_far_away() {
        let fit = levenberg_marquardt(&Bowl, &[1e4, -3e3, 500.0], &LmOptions::default()).unwrap();
        assert!(fit.converged);
        assert!(fit.residual_rms < 1e-12);
        assert_abs_diff_eq!(fit.params[1].value, -2.0, epsilon = 1e-10);
    }

    #[test]
    fn rosenbrock_valley() {
        let fit = levenberg_marquardt(&Rosenbrock, &[-1.2, 1.0], &LmOptions::default()).unwrap();
        assert!(fit.converged);
        assert_abs_diff_eq!(fit.params[0].value, 1.0, epsilon = 1e-8);
        assert_abs_diff_eq!(fit.params[1].value, 1.0, epsilon = 1e-8);
    }

    #[test]
    fn max_iterations_keeps_partial_result() {
        let opts = LmOptions {
            max_iterations: 2,
            ..LmOptions::default()
        };
        match levenberg_marquardt(&Rosenbrock, &[-1.2, 1.0], &opts) {
            Err(FitError::MaxIterations(partial)) => {
                assert_eq!(partial.iterations, 2);
                assert!(!partial.converged);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn non_finite_start_is_rejected() {
        assert_eq!(
            levenberg_marquardt(&Blowup, &[0.7], &LmOptions::default()),
            Err(FitError::NonFinite)
        );
        assert!(levenberg_marquardt(&Blowup, &[f64::NAN], &LmOptions::default()).is_err());
    }

    #[test]
    fn underdetermined_is_rejected() {
        let p = Linear {
            x: vec![],
            y: vec![],
        };
        assert!(matches!(
            levenberg_marquardt(&p, &[1.0], &LmOptions::default()),
            Err(FitError::InvalidInput(_))
        ));
    }

    #[test]
    fn finite_difference_matches_analytic_linear() {
        let p = Linear {
            x: vec![1.0, 2.0, 3.0],
            y: vec![0.0; 3],
        };
        let jac = finite_difference_jacobian(&p, &[2.0]);
        assert_abs_diff_eq!(jac[(2, 0)], 3.0, epsilon = 1e-8);
    }
}
