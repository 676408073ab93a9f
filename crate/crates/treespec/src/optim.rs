//! Damped least squares for the spectral-misfit fits: Levenberg-Marquardt
//! with a gain-ratio trust-region update and forward-difference Jacobians.
//! The residual map is treated as a black box; Jacobian columns evaluate in
//! parallel.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone)]
pub struct FitOptions {
    pub max_iters: usize,
    /// Stop when the root-mean-square residual falls below this.
    pub rms_target: f64,
    /// Stop when the accepted step is this small (relative).
    pub step_tol: f64,
    /// Forward-difference step for the Jacobian.
    pub fd_step: f64,
    /// Initial damping.
    pub mu_init: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            max_iters: 60,
            rms_target: 1e-10,
            step_tol: 1e-11,
            fd_step: 1e-6,
            mu_init: 1e-3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub params: Vec<f64>,
    /// Root-mean-square residual at the returned point.
    pub rms: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Cost after every accepted step (non-increasing).
    pub accepted_costs: Vec<f64>,
}

fn rms(r: &DVector<f64>) -> f64 {
    (r.norm_squared() / r.len() as f64).sqrt()
}

/// Minimizes ½‖residual(x)‖² from `x0`. Steps are accepted only when the cost
/// decreases, so the accepted-cost history is non-increasing by construction.
/// Returns the best iterate with `converged = false` on stagnation.
pub fn fit_least_squares<F>(residual: F, x0: &[f64], opts: &FitOptions) -> Result<FitResult>
where
    F: Fn(&[f64]) -> Vec<f64> + Sync,
{
    let n = x0.len();
    let mut x = DVector::from_column_slice(x0);
    let r0 = residual(x.as_slice());
    let m = r0.len();
    if m < n {
        return Err(Error::Precondition(format!(
            "{m} residuals cannot determine {n} parameters"
        )));
    }
    let mut r = DVector::from_vec(r0);
    let mut cost = 0.5 * r.norm_squared();
    let mut mu = opts.mu_init;
    let mut nu = 2.0;
    let mut accepted_costs = vec![cost];
    let mut iterations = 0;
    let mut rejects_in_row = 0;

    for _ in 0..opts.max_iters {
        iterations += 1;
        if rms(&r) <= opts.rms_target {
            return Ok(FitResult {
                params: x.as_slice().to_vec(),
                rms: rms(&r),
                iterations,
                converged: true,
                accepted_costs,
            });
        }
        // forward-difference Jacobian, columns in parallel
        let x_now = x.as_slice().to_vec();
        let r_now = r.clone();
        let cols: Vec<Vec<f64>> = crate::par::map_range(n, |j| {
            let h = opts.fd_step * (1.0 + x_now[j].abs());
            let mut xp = x_now.clone();
            xp[j] += h;
            let rp = residual(&xp);
            rp.iter().zip(r_now.iter()).map(|(a, b)| (a - b) / h).collect()
        });
        let mut jac = DMatrix::<f64>::zeros(m, n);
        for (j, col) in cols.iter().enumerate() {
            for (i, v) in col.iter().enumerate() {
                jac[(i, j)] = *v;
            }
        }
        let jtj = jac.transpose() * &jac;
        let jtr = jac.transpose() * &r;
        let diag_scale: f64 = (0..n).map(|i| jtj[(i, i)]).fold(0.0, f64::max).max(1e-300);

        let mut stepped = false;
        for _ in 0..25 {
            let mut a = jtj.clone();
            for i in 0..n {
                a[(i, i)] += mu * diag_scale;
            }
            let delta = match a.clone().cholesky() {
                Some(ch) => ch.solve(&(-&jtr)),
                None => match a.lu().solve(&(-&jtr)) {
                    Some(d) => d,
                    None => {
                        mu *= nu;
                        nu *= 2.0;
                        continue;
                    }
                },
            };
            let x_try = &x + &delta;
            let r_try = DVector::from_vec(residual(x_try.as_slice()));
            let cost_try = 0.5 * r_try.norm_squared();
            let predicted = 0.5 * (delta.transpose() * (mu * diag_scale * &delta - &jtr))[(0, 0)];
            if cost_try < cost {
                let gain = (cost - cost_try) / predicted.max(1e-300);
                let step_small = delta.norm() <= opts.step_tol * (x.norm() + opts.step_tol);
                x = x_try;
                r = r_try;
                cost = cost_try;
                accepted_costs.push(cost);
                mu *= (1.0f64 / 3.0).max(1.0 - (2.0 * gain - 1.0).powi(3));
                nu = 2.0;
                stepped = true;
                rejects_in_row = 0;
                if step_small {
                    return Ok(FitResult {
                        params: x.as_slice().to_vec(),
                        rms: rms(&r),
                        iterations,
                        converged: rms(&r) <= opts.rms_target * 10.0,
                        accepted_costs,
                    });
                }
                break;
            } else {
                mu *= nu;
                nu *= 2.0;
            }
        }
        if !stepped {
            rejects_in_row += 1;
            if rejects_in_row >= 2 {
                break;
            }
        }
    }
    let converged = rms(&r) <= opts.rms_target;
    Ok(FitResult {
        params: x.as_slice().to_vec(),
        rms: rms(&r),
        iterations,
        converged,
        accepted_costs,
    })
}
