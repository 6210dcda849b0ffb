//! Input-dependent Gaussian-process safety model.
//!
//! A binary GP classifier over (state ⊕ one-hot action) vectors predicting
//! whether the next state violates the deadline constraint. Two modes share
//! the RBF kernel and the probit squashing of the latent:
//!
//! * `regression_squash` — treats the ±1 labels as regression targets and
//!   caches the solve against `K + noise * I`; the cheap literal posterior.
//! * `laplace` — Gaussian approximation of the classification posterior
//!   around its mode, found by Newton iterations with a probit likelihood.
//!   With a probit link the predictive probability
//!   `Phi(mean / sqrt(1 + variance))` is the squashing integral in closed
//!   form, so the same expression serves both modes.
//!
//! Labels follow the convention `1 = unsafe` (the constraint will be
//! violated), so a positive latent pushes the probability above the
//! threshold.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// RBF kernel `signal_var * exp(-||x - x2||^2 / (2 lengthscale^2))`.
pub fn rbf(x: &[f64], x2: &[f64], lengthscale: f64, signal_var: f64) -> Result<f64> {
    if x.len() != x2.len() {
        return Err(Error::argument(format!(
            "kernel input dims differ: {} vs {}",
            x.len(),
            x2.len()
        )));
    }
    if !(lengthscale > 0.0) {
        return Err(Error::argument("lengthscale must be > 0"));
    }
    let sq: f64 = x.iter().zip(x2).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(signal_var * (-sq / (2.0 * lengthscale * lengthscale)).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GpMode {
    RegressionSquash,
    Laplace,
}

/// Kernel and fitting hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpParams {
    /// `None` selects the median pairwise distance of the training inputs.
    pub lengthscale: Option<f64>,
    pub signal_var: f64,
    pub noise_var: f64,
    /// Unsafe verdict threshold on the predictive probability.
    pub tau: f64,
    pub mode: GpMode,
    /// Sliding-window cap on stored observations.
    pub max_points: usize,
    pub jitter: f64,
    pub newton_max_iter: usize,
    pub newton_tol: f64,
}

impl Default for GpParams {
    fn default() -> Self {
        GpParams {
            lengthscale: None,
            signal_var: 1.0,
            noise_var: 0.1,
            tau: 0.5,
            mode: GpMode::Laplace,
            max_points: 2000,
            jitter: 1e-8,
            newton_max_iter: 50,
            newton_tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SafetyVerdict {
    Safe,
    Unsafe,
}

/// Predictive safety of a candidate (state, action) input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SafetyPrediction {
    pub probability_unsafe: f64,
    pub latent_mean: f64,
    pub latent_variance: f64,
    pub verdict: SafetyVerdict,
}

/// Lower-triangular Cholesky factor, row-major.
#[derive(Debug, Clone)]
struct Cholesky {
    l: Vec<f64>,
    n: usize,
}

impl Cholesky {
    /// Factors a symmetric positive definite matrix (row-major, n x n).
    fn factor(a: &[f64], n: usize) -> Result<Self> {
        let mut l = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let mut sum = a[i * n + j];
                for k in 0..j {
                    sum -= l[i * n + k] * l[j * n + k];
                }
                if i == j {
                    if sum <= 0.0 || !sum.is_finite() {
                        return Err(Error::numerical(format!(
                            "matrix not positive definite at pivot {i} (value {sum})"
                        )));
                    }
                    l[i * n + i] = sum.sqrt();
                } else {
                    l[i * n + j] = sum / l[j * n + j];
                }
            }
        }
        Ok(Cholesky { l, n })
    }

    /// Solves `L z = b`.
    fn solve_lower(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut z = b.to_vec();
        for i in 0..n {
            for k in 0..i {
                let tmp = z[k];
                z[i] -= self.l[i * n + k] * tmp;
            }
            z[i] /= self.l[i * n + i];
        }
        z
    }

    /// Solves `(L L^T) x = b`.
    fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut x = self.solve_lower(b);
        for i in (0..n).rev() {
            for k in i + 1..n {
                let tmp = x[k];
                x[i] -= self.l[k * n + i] * tmp;
            }
            x[i] /= self.l[i * n + i];
        }
        x
    }
}

/// Standard normal CDF, double-precision rational approximation (West's
/// algorithm; relative error around 1e-15, exact 0.5 at zero).
pub fn norm_cdf(z: f64) -> f64 {
    let xabs = z.abs();
    let tail = if xabs > 37.0 {
        0.0
    } else {
        let e = (-xabs * xabs / 2.0).exp();
        if xabs < 7.071067811865475 {
            let mut num = 3.52624965998911e-2 * xabs + 0.700383064443688;
            num = num * xabs + 6.37396220353165;
            num = num * xabs + 33.912866078383;
            num = num * xabs + 112.079291497871;
            num = num * xabs + 221.213596169931;
            num = num * xabs + 220.206867912376;
            let mut den = 8.83883476483184e-2 * xabs + 1.75566716318264;
            den = den * xabs + 16.064177579207;
            den = den * xabs + 86.7807322029461;
            den = den * xabs + 296.564248779674;
            den = den * xabs + 637.333633378831;
            den = den * xabs + 793.826512519948;
            den = den * xabs + 440.413735824752;
            e * num / den
        } else {
            let mut build = xabs + 0.65;
            build = xabs + 4.0 / build;
            build = xabs + 3.0 / build;
            build = xabs + 2.0 / build;
            build = xabs + 1.0 / build;
            e / (build * 2.506628274631)
        }
    };
    if z > 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

/// Standard normal density.
pub fn norm_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// `pdf(z) / cdf(z)`, guarded for deeply negative arguments.
fn pdf_over_cdf(z: f64) -> f64 {
    if z < -36.0 {
        // Asymptotic inverse Mills ratio.
        return -z + 1.0 / -z;
    }
    let cdf = norm_cdf(z);
    norm_pdf(z) / cdf.max(f64::MIN_POSITIVE)
}

#[derive(Debug, Clone)]
enum Fitted {
    Regression {
        chol: Cholesky,
        alpha: Vec<f64>,
    },
    Laplace {
        /// Diagonal of `W^(1/2)` at the mode.
        sqrt_w: Vec<f64>,
        /// Cholesky of `B = I + W^(1/2) K W^(1/2)`.
        chol_b: Cholesky,
        /// Likelihood gradient at the mode.
        grad: Vec<f64>,
        iterations: usize,
    },
}

/// Fitted kernel model over (state, action) inputs with binary safety
/// labels.
#[derive(Debug, Clone)]
pub struct GpSafetyModel {
    params: GpParams,
    lengthscale: f64,
    inputs: Vec<Vec<f64>>,
    fitted: Fitted,
}

/// Median pairwise Euclidean distance, subsampled beyond 512 points.
/// Falls back to 1.0 when the points are degenerate.
pub fn median_heuristic(inputs: &[Vec<f64>]) -> f64 {
    let n = inputs.len();
    if n < 2 {
        return 1.0;
    }
    let stride = (n / 512).max(1);
    let sample: Vec<&Vec<f64>> = inputs.iter().step_by(stride).collect();
    let mut dists = Vec::with_capacity(sample.len() * (sample.len() - 1) / 2);
    for i in 0..sample.len() {
        for j in i + 1..sample.len() {
            let sq: f64 = sample[i]
                .iter()
                .zip(sample[j].iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            dists.push(sq.sqrt());
        }
    }
    dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = dists[dists.len() / 2];
    if median > 0.0 {
        median
    } else {
        1.0
    }
}

/// Fits a safety model. Labels are binary (`1 = unsafe`), mapped to ±1
/// internally; when more than `max_points` observations are given only the
/// most recent window is kept.
pub fn gp_fit(inputs: &[Vec<f64>], labels: &[u8], params: &GpParams) -> Result<GpSafetyModel> {
    if inputs.is_empty() {
        return Err(Error::argument("gp_fit needs at least one observation"));
    }
    if inputs.len() != labels.len() {
        return Err(Error::argument(format!(
            "observation count mismatch: {} inputs, {} labels",
            inputs.len(),
            labels.len()
        )));
    }
    if labels.iter().any(|&l| l > 1) {
        return Err(Error::argument("labels must be binary"));
    }
    let dim = inputs[0].len();
    if inputs.iter().any(|x| x.len() != dim) {
        return Err(Error::argument("inputs must share one dimension"));
    }
    let start = inputs.len().saturating_sub(params.max_points.max(1));
    let window: Vec<Vec<f64>> = inputs[start..].to_vec();
    let targets: Vec<f64> = labels[start..]
        .iter()
        .map(|&l| if l == 1 { 1.0 } else { -1.0 })
        .collect();
    let lengthscale = params
        .lengthscale
        .unwrap_or_else(|| median_heuristic(&window));
    if !(lengthscale > 0.0) {
        return Err(Error::argument("lengthscale must be > 0"));
    }

    let n = window.len();
    let mut kernel = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let k = rbf(&window[i], &window[j], lengthscale, params.signal_var)?;
            kernel[i * n + j] = k;
            kernel[j * n + i] = k;
        }
    }

    let fitted = match params.mode {
        GpMode::RegressionSquash => {
            let mut ky = kernel.clone();
            for i in 0..n {
                ky[i * n + i] += params.noise_var + params.jitter;
            }
            let chol = Cholesky::factor(&ky, n).map_err(|e| {
                Error::numerical(format!("K + noise*I singular after jitter: {e}"))
            })?;
            let alpha = chol.solve(&targets);
            Fitted::Regression { chol, alpha }
        }
        GpMode::Laplace => fit_laplace(&kernel, &targets, n, params)?,
    };

    Ok(GpSafetyModel {
        params: *params,
        lengthscale,
        inputs: window,
        fitted,
    })
}

fn probit_terms(targets: &[f64], f: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = targets.len();
    let mut grad = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n {
        let z = targets[i] * f[i];
        let r = pdf_over_cdf(z);
        grad[i] = targets[i] * r;
        w[i] = (r * r + z * r).max(0.0);
    }
    (grad, w)
}

fn laplace_b_matrix(kernel: &[f64], sqrt_w: &[f64], n: usize, jitter: f64) -> Vec<f64> {
    let mut b_mat = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            b_mat[i * n + j] = sqrt_w[i] * kernel[i * n + j] * sqrt_w[j];
        }
        b_mat[i * n + i] += 1.0 + jitter;
    }
    b_mat
}

/// Newton iterations for the probit-likelihood posterior mode
/// (converged when the max mode change drops below `newton_tol`).
fn fit_laplace(kernel: &[f64], targets: &[f64], n: usize, params: &GpParams) -> Result<Fitted> {
    let mut f = vec![0.0; n];
    let mut iterations = 0;
    loop {
        let (grad, w) = probit_terms(targets, &f);
        let sqrt_w: Vec<f64> = w.iter().map(|&x| x.sqrt()).collect();
        let chol_b = Cholesky::factor(&laplace_b_matrix(kernel, &sqrt_w, n, params.jitter), n)?;

        // b = W f + grad;  a = b - W^(1/2) B^(-1) W^(1/2) K b;  f_new = K a.
        let b_vec: Vec<f64> = (0..n).map(|i| w[i] * f[i] + grad[i]).collect();
        let kb: Vec<f64> = (0..n)
            .map(|i| (0..n).map(|j| kernel[i * n + j] * b_vec[j]).sum())
            .collect();
        let swkb: Vec<f64> = (0..n).map(|i| sqrt_w[i] * kb[i]).collect();
        let solved = chol_b.solve(&swkb);
        let a_vec: Vec<f64> = (0..n).map(|i| b_vec[i] - sqrt_w[i] * solved[i]).collect();
        let f_new: Vec<f64> = (0..n)
            .map(|i| (0..n).map(|j| kernel[i * n + j] * a_vec[j]).sum())
            .collect();

        let delta = f
            .iter()
            .zip(&f_new)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        f = f_new;
        iterations += 1;
        if delta < params.newton_tol {
            let (grad, w) = probit_terms(targets, &f);
            let sqrt_w: Vec<f64> = w.iter().map(|&x| x.sqrt()).collect();
            let chol_b =
                Cholesky::factor(&laplace_b_matrix(kernel, &sqrt_w, n, params.jitter), n)?;
            return Ok(Fitted::Laplace {
                sqrt_w,
                chol_b,
                grad,
                iterations,
            });
        }
        if iterations >= params.newton_max_iter {
            return Err(Error::numerical(format!(
                "Laplace Newton did not converge after {iterations} iterations \
                 (last mode change {delta:.3e})"
            )));
        }
    }
}

impl GpSafetyModel {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs[0].len()
    }

    pub fn lengthscale(&self) -> f64 {
        self.lengthscale
    }

    pub fn mode(&self) -> GpMode {
        self.params.mode
    }

    /// Newton iterations of the Laplace fit (0 in regression mode).
    pub fn newton_iterations(&self) -> usize {
        match &self.fitted {
            Fitted::Laplace { iterations, .. } => *iterations,
            Fitted::Regression { .. } => 0,
        }
    }

    /// Latent predictive mean and variance at a query input.
    pub fn latent(&self, x_star: &[f64]) -> Result<(f64, f64)> {
        if x_star.len() != self.input_dim() {
            return Err(Error::argument(format!(
                "query dim {} does not match model dim {}",
                x_star.len(),
                self.input_dim()
            )));
        }
        let n = self.inputs.len();
        let mut k_star = vec![0.0; n];
        for i in 0..n {
            k_star[i] = rbf(
                &self.inputs[i],
                x_star,
                self.lengthscale,
                self.params.signal_var,
            )?;
        }
        let k_ss = self.params.signal_var;
        match &self.fitted {
            Fitted::Regression { chol, alpha } => {
                let mean: f64 = k_star.iter().zip(alpha).map(|(k, a)| k * a).sum();
                let v = chol.solve_lower(&k_star);
                let var = (k_ss - v.iter().map(|x| x * x).sum::<f64>()).max(0.0);
                Ok((mean, var))
            }
            Fitted::Laplace {
                sqrt_w,
                chol_b,
                grad,
                ..
            } => {
                let mean: f64 = k_star.iter().zip(grad).map(|(k, g)| k * g).sum();
                let scaled: Vec<f64> = k_star.iter().zip(sqrt_w).map(|(k, s)| k * s).collect();
                let v = chol_b.solve_lower(&scaled);
                let var = (k_ss - v.iter().map(|x| x * x).sum::<f64>()).max(0.0);
                Ok((mean, var))
            }
        }
    }

    /// Predictive safety: probit squashing of the latent Gaussian,
    /// `Phi(mean / sqrt(1 + variance))`, thresholded at `tau`.
    pub fn predict(&self, x_star: &[f64]) -> Result<SafetyPrediction> {
        let (mean, variance) = self.latent(x_star)?;
        let probability_unsafe = norm_cdf(mean / (1.0 + variance).sqrt());
        let verdict = if probability_unsafe > self.params.tau {
            SafetyVerdict::Unsafe
        } else {
            SafetyVerdict::Safe
        };
        Ok(SafetyPrediction {
            probability_unsafe,
            latent_mean: mean,
            latent_variance: variance,
            verdict,
        })
    }

    /// Audit dump: hyperparameters, input dimension, observation count.
    pub fn dump_json(&self) -> String {
        serde_json::json!({
            "mode": self.params.mode,
            "lengthscale": self.lengthscale,
            "signal_var": self.params.signal_var,
            "noise_var": self.params.noise_var,
            "tau": self.params.tau,
            "input_dim": self.input_dim(),
            "observations": self.len(),
        })
        .to_string()
    }
}

/// What Algorithm-1-style training should do with the GP at step `t`
/// (1-based).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleAction {
    /// Warmup phase `1 < t <= T0`: record observations and (re)fit.
    CollectAndFit,
    /// Past warmup at a `T1` boundary: refresh the fit with recent data.
    PeriodicUpdate,
    /// Use the existing fit, no refit work.
    PredictOnly,
}

/// The refit schedule: collect-and-fit during `1 < t <= t0`, periodic
/// updates every `t1` steps afterwards, prediction only otherwise. The GP
/// gate (`t > t0`) is [`gp_active`].
pub fn refit_schedule(t: usize, t0: usize, t1: usize) -> Result<ScheduleAction> {
    if t0 == 0 || t1 == 0 {
        return Err(Error::argument("T0 and T1 must be >= 1"));
    }
    Ok(if t > 1 && t <= t0 {
        ScheduleAction::CollectAndFit
    } else if t > t0 && t % t1 == 0 {
        ScheduleAction::PeriodicUpdate
    } else {
        ScheduleAction::PredictOnly
    })
}

/// The `GP_f` flag of the training loop: predictions may be consumed only
/// after the warmup horizon.
pub fn gp_active(t: usize, t0: usize) -> bool {
    t > t0
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn params(mode: GpMode) -> GpParams {
        GpParams {
            lengthscale: Some(1.0),
            mode,
            ..GpParams::default()
        }
    }

    #[test]
    fn rbf_examples() {
        let x = vec![1.0, 2.0];
        assert!((rbf(&x, &x, 0.7, 1.0).unwrap() - 1.0).abs() < 1e-15);

        // Distance lengthscale * sqrt(2) gives exp(-1).
        let ell = 0.9;
        let x2 = vec![1.0 + ell * 2f64.sqrt(), 2.0];
        let v = rbf(&x, &x2, ell, 1.0).unwrap();
        assert!((v - (-1.0f64).exp()).abs() < 1e-12, "got {v}");

        assert_eq!(
            rbf(&x, &x2, ell, 1.0).unwrap(),
            rbf(&x2, &x, ell, 1.0).unwrap()
        );
        assert!(rbf(&x, &[1.0], 1.0, 1.0).is_err());
        assert!(rbf(&x, &x2, 0.0, 1.0).is_err());
    }

    #[test]
    fn norm_cdf_sanity() {
        assert!((norm_cdf(0.0) - 0.5).abs() < 1e-9);
        assert!((norm_cdf(1.959964) - 0.975).abs() < 1e-5);
        assert!((norm_cdf(-1.959964) - 0.025).abs() < 1e-5);
        for z in [-3.0, -1.0, 0.3, 2.5] {
            assert!((norm_cdf(z) + norm_cdf(-z) - 1.0).abs() < 1e-7);
        }
    }

    #[test]
    fn single_observation_regression_mean() {
        let x0 = vec![0.5, -0.25];
        let model = gp_fit(
            std::slice::from_ref(&x0),
            &[1],
            &params(GpMode::RegressionSquash),
        )
        .unwrap();
        let (mean, _) = model.latent(&x0).unwrap();
        // k (K + noise I)^-1 y = 1 / 1.1 with one unit-kernel observation
        // (up to the PD jitter).
        assert!((mean - 1.0 / 1.1).abs() < 1e-7, "got {mean}");
    }

    #[test]
    fn symmetric_laplace_mean_is_zero_at_midpoint() {
        let inputs = vec![vec![-1.0], vec![1.0]];
        let model = gp_fit(&inputs, &[0, 1], &params(GpMode::Laplace)).unwrap();
        let (mean, _) = model.latent(&[0.0]).unwrap();
        assert!(mean.abs() < 1e-9, "got {mean}");
        let p = model.predict(&[0.0]).unwrap();
        assert!((p.probability_unsafe - 0.5).abs() < 1e-7);
        assert_eq!(p.verdict, SafetyVerdict::Safe);
    }

    #[test]
    fn far_query_reverts_to_prior() {
        for mode in [GpMode::RegressionSquash, GpMode::Laplace] {
            let inputs = vec![vec![0.0, 0.0], vec![0.2, 0.1], vec![-0.1, 0.3]];
            let model = gp_fit(&inputs, &[1, 1, 0], &params(mode)).unwrap();
            let far = vec![500.0, -500.0];
            let (mean, var) = model.latent(&far).unwrap();
            assert!(mean.abs() < 1e-9, "{mode:?}: mean {mean}");
            assert!((var - 1.0).abs() < 1e-6, "{mode:?}: var {var}");
            let p = model.predict(&far).unwrap();
            assert!((p.probability_unsafe - 0.5).abs() < 1e-7);
        }
    }

    /// Independent dense evaluation of the regression-mode posterior via
    /// Gauss-Jordan inversion — the oracle for the cached Cholesky path.
    fn dense_posterior(
        inputs: &[Vec<f64>],
        targets: &[f64],
        x_star: &[f64],
        ell: f64,
        sf: f64,
        noise: f64,
    ) -> (f64, f64) {
        let n = inputs.len();
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                a[i * n + j] = rbf(&inputs[i], &inputs[j], ell, sf).unwrap();
                if i == j {
                    a[i * n + j] += noise + 1e-8;
                }
            }
        }
        // Gauss-Jordan inverse with partial pivoting.
        let mut inv = vec![0.0; n * n];
        for i in 0..n {
            inv[i * n + i] = 1.0;
        }
        for col in 0..n {
            let mut pivot_row = col;
            for r in col + 1..n {
                if a[r * n + col].abs() > a[pivot_row * n + col].abs() {
                    pivot_row = r;
                }
            }
            for c in 0..n {
                a.swap(col * n + c, pivot_row * n + c);
                inv.swap(col * n + c, pivot_row * n + c);
            }
            let pivot = a[col * n + col];
            for c in 0..n {
                a[col * n + c] /= pivot;
                inv[col * n + c] /= pivot;
            }
            for r in 0..n {
                if r != col {
                    let factor = a[r * n + col];
                    for c in 0..n {
                        a[r * n + c] -= factor * a[col * n + c];
                        inv[r * n + c] -= factor * inv[col * n + c];
                    }
                }
            }
        }
        let k_star: Vec<f64> = inputs
            .iter()
            .map(|x| rbf(x, x_star, ell, sf).unwrap())
            .collect();
        let mut mean = 0.0;
        let mut quad = 0.0;
        for i in 0..n {
            let mut row = 0.0;
            for j in 0..n {
                row += inv[i * n + j] * targets[j];
                quad += k_star[i] * inv[i * n + j] * k_star[j];
            }
            mean += k_star[i] * row;
        }
        (mean, sf - quad)
    }

    #[test]
    fn regression_matches_dense_solve() {
        let mut rng = crate::rng::rng(31, crate::rng::Stream::Env, 5);
        for trial in 0..5 {
            let n = rng.gen_range(3..30);
            let dim = rng.gen_range(1..4usize);
            let inputs: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect())
                .collect();
            let labels: Vec<u8> = (0..n).map(|_| rng.gen_range(0..2)).collect();
            let p = params(GpMode::RegressionSquash);
            let model = gp_fit(&inputs, &labels, &p).unwrap();
            let targets: Vec<f64> = labels
                .iter()
                .map(|&l| if l == 1 { 1.0 } else { -1.0 })
                .collect();
            for _ in 0..4 {
                let q: Vec<f64> = (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect();
                let (mean, var) = model.latent(&q).unwrap();
                let (dmean, dvar) = dense_posterior(&inputs, &targets, &q, 1.0, 1.0, 0.1);
                assert!(
                    (mean - dmean).abs() < 1e-8,
                    "trial {trial}: {mean} vs {dmean}"
                );
                assert!((var - dvar).abs() < 1e-8, "trial {trial}: {var} vs {dvar}");
            }
        }
    }

    /// Simpson quadrature of the probit squashing integral over the latent.
    fn quadrature_probability(mean: f64, var: f64) -> f64 {
        if var < 1e-12 {
            return norm_cdf(mean);
        }
        let sigma = var.sqrt();
        let (lo, hi) = (mean - 8.0 * sigma, mean + 8.0 * sigma);
        let steps = 4000;
        let h = (hi - lo) / steps as f64;
        let integrand = |f: f64| {
            norm_cdf(f) * (-0.5 * ((f - mean) / sigma).powi(2)).exp()
                / (sigma * (2.0 * std::f64::consts::PI).sqrt())
        };
        let mut total = integrand(lo) + integrand(hi);
        for i in 1..steps {
            let x = lo + i as f64 * h;
            total += integrand(x) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        total * h / 3.0
    }

    #[test]
    fn laplace_probability_matches_quadrature() {
        let mut rng = crate::rng::rng(32, crate::rng::Stream::Env, 6);
        for trial in 0..6 {
            let n = rng.gen_range(2..=8);
            let inputs: Vec<Vec<f64>> = (0..n)
                .map(|_| vec![rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)])
                .collect();
            let labels: Vec<u8> = (0..n).map(|_| rng.gen_range(0..2)).collect();
            let model = gp_fit(&inputs, &labels, &params(GpMode::Laplace)).unwrap();
            for _ in 0..4 {
                let q = vec![rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
                let pred = model.predict(&q).unwrap();
                let oracle = quadrature_probability(pred.latent_mean, pred.latent_variance);
                assert!(
                    (pred.probability_unsafe - oracle).abs() < 0.05,
                    "trial {trial}: {} vs {oracle}",
                    pred.probability_unsafe
                );
            }
        }
    }

    #[test]
    fn predictions_invariant_under_observation_permutation() {
        let mut rng = crate::rng::rng(33, crate::rng::Stream::Env, 7);
        let n = 12;
        let inputs: Vec<Vec<f64>> = (0..n)
            .map(|_| vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
            .collect();
        let labels: Vec<u8> = (0..n).map(|i| u8::from(i % 3 == 0)).collect();
        let mut order: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            order.swap(i, rng.gen_range(0..=i));
        }
        let perm_inputs: Vec<Vec<f64>> = order.iter().map(|&i| inputs[i].clone()).collect();
        let perm_labels: Vec<u8> = order.iter().map(|&i| labels[i]).collect();
        for mode in [GpMode::RegressionSquash, GpMode::Laplace] {
            let a = gp_fit(&inputs, &labels, &params(mode)).unwrap();
            let b = gp_fit(&perm_inputs, &perm_labels, &params(mode)).unwrap();
            for _ in 0..5 {
                let q = vec![rng.gen_range(-1.5..1.5), rng.gen_range(-1.5..1.5)];
                let pa = a.predict(&q).unwrap();
                let pb = b.predict(&q).unwrap();
                assert!((pa.probability_unsafe - pb.probability_unsafe).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn kernel_matrix_symmetric_and_positive_definite() {
        let mut rng = crate::rng::rng(34, crate::rng::Stream::Env, 8);
        let inputs: Vec<Vec<f64>> = (0..25)
            .map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let n = inputs.len();
        let mut k = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                k[i * n + j] = rbf(&inputs[i], &inputs[j], 0.5, 1.0).unwrap();
            }
        }
        for i in 0..n {
            for j in 0..n {
                assert!((k[i * n + j] - k[j * n + i]).abs() < 1e-12);
            }
            k[i * n + i] += 1e-8;
        }
        assert!(Cholesky::factor(&k, n).is_ok());
    }

    /// Synthetic separable safety function: unsafe iff x0 + x1 > 0.
    #[test]
    fn held_out_accuracy_on_separable_function() {
        let mut rng = crate::rng::rng(35, crate::rng::Stream::Env, 9);
        let gen = |rng: &mut rand_chacha::ChaCha8Rng, n: usize| -> (Vec<Vec<f64>>, Vec<u8>) {
            let xs: Vec<Vec<f64>> = (0..n)
                .map(|_| vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
                .collect();
            let ys = xs.iter().map(|x| u8::from(x[0] + x[1] > 0.0)).collect();
            (xs, ys)
        };
        let (train_x, train_y) = gen(&mut rng, 150);
        let (test_x, test_y) = gen(&mut rng, 120);
        for mode in [GpMode::Laplace, GpMode::RegressionSquash] {
            let p = GpParams {
                mode,
                ..GpParams::default()
            };
            let model = gp_fit(&train_x, &train_y, &p).unwrap();
            let correct = test_x
                .iter()
                .zip(&test_y)
                .filter(|(x, &y)| {
                    let verdict = model.predict(x).unwrap().verdict;
                    (verdict == SafetyVerdict::Unsafe) == (y == 1)
                })
                .count();
            let acc = correct as f64 / test_x.len() as f64;
            assert!(acc >= 0.85, "{mode:?}: held-out accuracy {acc}");
        }
    }

    #[test]
    fn newton_non_convergence_reports_iterations() {
        let p = GpParams {
            lengthscale: Some(1.0),
            newton_max_iter: 1,
            mode: GpMode::Laplace,
            ..GpParams::default()
        };
        let inputs = vec![vec![0.0], vec![0.5], vec![1.0], vec![-0.5]];
        let err = gp_fit(&inputs, &[1, 0, 1, 0], &p).unwrap_err();
        match err {
            Error::Numerical(msg) => assert!(msg.contains("1 iterations"), "{msg}"),
            other => panic!("expected numerical error, got {other:?}"),
        }
    }

    #[test]
    fn sliding_window_caps_observations() {
        let p = GpParams {
            lengthscale: Some(1.0),
            max_points: 10,
            mode: GpMode::RegressionSquash,
            ..GpParams::default()
        };
        let inputs: Vec<Vec<f64>> = (0..40).map(|i| vec![i as f64 / 10.0]).collect();
        let labels: Vec<u8> = (0..40).map(|i| u8::from(i % 2 == 0)).collect();
        let model = gp_fit(&inputs, &labels, &p).unwrap();
        assert_eq!(model.len(), 10);
        assert_eq!(model.inputs[0], vec![3.0]);
    }

    #[test]
    fn refit_schedule_rules() {
        use ScheduleAction::*;
        assert_eq!(refit_schedule(2, 100, 50).unwrap(), CollectAndFit);
        assert_eq!(refit_schedule(100, 100, 50).unwrap(), CollectAndFit);
        assert_eq!(refit_schedule(150, 100, 50).unwrap(), PeriodicUpdate);
        assert_eq!(refit_schedule(151, 100, 50).unwrap(), PredictOnly);
        assert_eq!(refit_schedule(1, 100, 50).unwrap(), PredictOnly);
        assert!(refit_schedule(5, 0, 50).is_err());
        assert!(refit_schedule(5, 10, 0).is_err());
        assert!(!gp_active(100, 100));
        assert!(gp_active(101, 100));
    }

    #[test]
    fn dump_reports_hyperparameters() {
        let model = gp_fit(
            &[vec![0.0, 1.0], vec![1.0, 0.0]],
            &[0, 1],
            &params(GpMode::Laplace),
        )
        .unwrap();
        let dump: serde_json::Value = serde_json::from_str(&model.dump_json()).unwrap();
        assert_eq!(dump["input_dim"], 2);
        assert_eq!(dump["observations"], 2);
        assert_eq!(dump["mode"], "laplace");
    }
}
