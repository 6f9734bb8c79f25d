//! Damped least-squares core shared by all fitters: boxed Levenberg–Marquardt
//! with central-difference Jacobians, run in caller-scaled variables so
//! parameters of wildly different magnitude condition equally well.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative finite-difference step for Jacobian columns (in scaled variables).
const FD_RELATIVE_STEP: f64 = 1e-7;
/// Absolute floor for the finite-difference step.
const FD_ABSOLUTE_STEP: f64 = 1e-9;
/// Diagonal entries of JᵀJ below this fraction of the largest one mark a
/// parameter the residuals do not respond to.
const DEGENERACY_RATIO: f64 = 1e-12;
/// Largest damping factor tried before giving up on finding a step.
const DAMPING_CEILING: f64 = 1e14;

/// Tuning knobs for the solver; `Default` suits every fitter in this crate.
#[derive(Debug, Clone, Copy)]
pub(crate) struct LmOptions {
    pub max_iterations: usize,
    /// Gradient stop: largest |cosine| between any Jacobian column and the
    /// residual vector falls below gtol. Scale-free, so it is meaningful for
    /// residuals of any physical magnitude.
    pub gtol: f64,
    /// Step stop: accepted steps smaller than xtol·(|z| + xtol) per component.
    pub xtol: f64,
    /// Cost stop: two consecutive relative reductions below ftol.
    pub ftol: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            gtol: 1e-10,
            xtol: 1e-12,
            ftol: 1e-14,
        }
    }
}

/// Everything the fitters need from a finished optimization.
pub(crate) struct LmOutcome {
    /// Parameters in natural (unscaled) units.
    pub params: Vec<f64>,
    /// ‖r‖₂ at the solution.
    pub residual_norm: f64,
    /// Number of residual entries.
    pub n_residuals: usize,
    /// JᵀJ at the solution, in scaled variables.
    pub normal_scaled: DMatrix<f64>,
    /// The scales the caller supplied, echoed for covariance assembly.
    pub scales: Vec<f64>,
    /// Indices of parameters the residuals do not respond to at the solution.
    pub degenerate: Vec<usize>,
    pub converged: bool,
    pub message: String,
}

/// Largest |cos| between a Jacobian column and the residual vector — the
/// scale-free first-order optimality measure. Zero residuals or an all-zero
/// Jacobian give 0.
fn max_gradient_cosine(j: &DMatrix<f64>, r: &DVector<f64>, g: &DVector<f64>) -> f64 {
    let rnorm = r.norm();
    if rnorm == 0.0 {
        return 0.0;
    }
    let mut worst = 0.0f64;
    for k in 0..j.ncols() {
        let cnorm = j.column(k).norm();
        if cnorm > 0.0 {
            worst = worst.max(g[k].abs() / (cnorm * rnorm));
        }
    }
    worst
}

struct Workspace<'a> {
    residual_fn: &'a dyn Fn(&[f64]) -> Result<Vec<f64>>,
    scales: &'a [f64],
    lower: &'a [f64],
    upper: &'a [f64],
}

impl Workspace<'_> {
    fn residuals(&self, z: &[f64]) -> Result<DVector<f64>> {
        let x: Vec<f64> = z
            .iter()
            .zip(self.scales)
            .map(|(&zi, &si)| zi * si)
            .collect();
        let r = (self.residual_fn)(&x)?;
        if r.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric("residuals evaluated to a non-finite value"));
        }
        Ok(DVector::from_vec(r))
    }

    fn clamp(&self, z: &mut [f64]) {
        for (k, zk) in z.iter_mut().enumerate() {
            *zk = zk.clamp(
                self.lower[k] / self.scales[k],
                self.upper[k] / self.scales[k],
            );
        }
    }

    /// Central-difference Jacobian in scaled variables; steps are clamped to
    /// the box and divided by the step actually taken.
    fn jacobian(&self, z: &[f64], r0: &DVector<f64>) -> Result<DMatrix<f64>> {
        let m = r0.len();
        let n = z.len();
        let mut j = DMatrix::zeros(m, n);
        for k in 0..n {
            let h = (FD_RELATIVE_STEP * z[k].abs()).max(FD_ABSOLUTE_STEP);
            let lo = self.lower[k] / self.scales[k];
            let hi = self.upper[k] / self.scales[k];
            let zp = (z[k] + h).min(hi);
            let zm = (z[k] - h).max(lo);
            let denom = zp - zm;
            if denom <= 0.0 {
                continue;
            }
            let mut work = z.to_vec();
            work[k] = zp;
            let rp = self.residuals(&work)?;
            work[k] = zm;
            let rm = self.residuals(&work)?;
            for i in 0..m {
                j[(i, k)] = (rp[i] - rm[i]) / denom;
            }
        }
        Ok(j)
    }
}

/// Minimizes ‖r(x)‖² over the box `lower ≤ x ≤ upper`, starting from `x0`.
///
/// `scales` gives one positive characteristic magnitude per parameter; the
/// optimizer works in x/scale throughout. The residual function receives
/// natural-unit parameters and may fail, which aborts the fit.
pub(crate) fn levenberg_marquardt(
    residual_fn: &dyn Fn(&[f64]) -> Result<Vec<f64>>,
    x0: &[f64],
    scales: &[f64],
    lower: &[f64],
    upper: &[f64],
    opts: &LmOptions,
) -> Result<LmOutcome> {
    let n = x0.len();
    if n == 0 {
        return Err(Error::invalid("cannot fit zero parameters"));
    }
    if scales.len() != n || lower.len() != n || upper.len() != n {
        return Err(Error::dims("parameter, scale, and bound lengths differ"));
    }
    if scales.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
        return Err(Error::invalid("parameter scales must be positive and finite"));
    }
    if lower.iter().zip(upper).any(|(&l, &u)| !(l <= u)) {
        return Err(Error::invalid("each lower bound must not exceed its upper bound"));
    }

    let ws = Workspace {
        residual_fn,
        scales,
        lower,
        upper,
    };
    let mut z: Vec<f64> = x0.iter().zip(scales).map(|(&x, &s)| x / s).collect();
    ws.clamp(&mut z);

    let mut r = ws.residuals(&z)?;
    if r.len() < n {
        return Err(Error::invalid(format!(
            "{} residuals cannot determine {n} parameters",
            r.len()
        )));
    }
    let mut cost = r.norm_squared();
    let mut j = ws.jacobian(&z, &r)?;
    let mut mu = 1e-3;
    let mut converged = false;
    let mut message = String::from("iteration limit reached");
    let mut small_reductions = 0usize;

    for _ in 0..opts.max_iterations {
        let a = j.transpose() * &j;
        let g = j.transpose() * &r;
        let max_diag = a.diagonal().max();

        if max_diag <= 0.0 {
            message = String::from("residuals do not respond to any parameter");
            break;
        }
        if max_gradient_cosine(&j, &r, &g) <= opts.gtol {
            converged = true;
            message = String::from("gradient within tolerance");
            break;
        }

        // Try increasingly damped steps until one reduces the cost.
        let mut stepped = false;
        while mu <= DAMPING_CEILING {
            let mut damped = a.clone();
            for k in 0..n {
                let d = a[(k, k)].max(DEGENERACY_RATIO * max_diag);
                damped[(k, k)] += mu * d;
            }
            let Some(chol) = damped.cholesky() else {
                mu *= 10.0;
                continue;
            };
            let delta = chol.solve(&(-&g));
            let mut z_new = z.clone();
            for k in 0..n {
                z_new[k] += delta[k];
            }
            ws.clamp(&mut z_new);
            let r_new = ws.residuals(&z_new)?;
            let cost_new = r_new.norm_squared();
            if cost_new < cost {
                let step_small = z_new
                    .iter()
                    .zip(&z)
                    .all(|(&a, &b)| (a - b).abs() <= opts.xtol * (b.abs() + opts.xtol));
                let reduction_small = cost - cost_new <= opts.ftol * cost;
                z = z_new;
                r = r_new;
                cost = cost_new;
                mu = (mu / 3.0).max(1e-12);
                stepped = true;
                if step_small {
                    converged = true;
                    message = String::from("step within tolerance");
                }
                if reduction_small {
                    small_reductions += 1;
                    if small_reductions >= 2 {
                        converged = true;
                        message = String::from("cost reduction within tolerance");
                    }
                } else {
                    small_reductions = 0;
                }
                break;
            }
            mu *= 10.0;
        }
        if !stepped {
            // No productive direction left; the gradient check decides whether
            // this is convergence or a stall.
            let g_now = j.transpose() * &r;
            if max_gradient_cosine(&j, &r, &g_now) <= opts.gtol.max(1e-6) {
                converged = true;
                message = String::from("gradient within tolerance");
            } else {
                message = String::from("no cost-reducing step found");
            }
            break;
        }
        if converged {
            break;
        }
        j = ws.jacobian(&z, &r)?;
    }

    // Final Jacobian at the solution for curvature and degeneracy reporting.
    let j_final = ws.jacobian(&z, &r)?;
    let normal_scaled = j_final.transpose() * &j_final;
    let max_diag = normal_scaled.diagonal().max();
    let degenerate: Vec<usize> = (0..n)
        .filter(|&k| normal_scaled[(k, k)] <= DEGENERACY_RATIO * max_diag.max(f64::MIN_POSITIVE))
        .collect();
    if !degenerate.is_empty() {
        converged = false;
    }

    Ok(LmOutcome {
        params: z.iter().zip(scales).map(|(&zi, &si)| zi * si).collect(),
        residual_norm: cost.sqrt(),
        n_residuals: r.len(),
        normal_scaled,
        scales: scales.to_vec(),
        degenerate,
        converged,
        message,
    })
}

/// Parameter covariance from the solved normal equations: σ²·(JᵀJ)⁻¹ mapped
/// back to natural units. Near-null curvature directions are floored before
/// inversion so the result stays symmetric PSD even for degenerate fits.
pub(crate) fn covariance_from_normal(
    normal_scaled: &DMatrix<f64>,
    scales: &[f64],
    sigma2: f64,
) -> DMatrix<f64> {
    let n = normal_scaled.nrows();
    let eig = normal_scaled.clone().symmetric_eigen();
    let floor = eig.eigenvalues.amax().max(f64::MIN_POSITIVE) * 1e-14;
    let mut cov = DMatrix::zeros(n, n);
    for k in 0..n {
        let v = eig.eigenvectors.column(k);
        let w = sigma2 / eig.eigenvalues[k].max(floor);
        cov += w * &v * v.transpose();
    }
    for i in 0..n {
        for jj in 0..n {
            cov[(i, jj)] *= scales[i] * scales[jj];
        }
    }
    // Exact symmetry against accumulation order.
    let sym = 0.5 * (&cov + cov.transpose());
    sym
}
