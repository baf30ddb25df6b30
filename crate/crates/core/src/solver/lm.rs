//! Levenberg-Marquardt in the Marquardt scaling, i.e. the normal equations are
//! damped multiplicatively on the diagonal:
//!
//! ```text
//! (J'J + lambda * diag(J'J)) * delta = -J' e
//! ```
//!
//! A step is accepted only if it strictly decreases the summed squared
//! residual, so the reported final energy never exceeds the initial one.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};

/// A residual vector as a function of a parameter vector. The solver only
/// ever shrinks `e(params)` in the two-norm; it knows nothing about what the
/// parameters mean.
pub trait LeastSquares {
    fn residuals(&self, params: &[f64]) -> Result<Vec<f64>>;

    /// Closed-form Jacobian, row k column l holding d e_k / d params_l.
    /// Problems without one return `None` and run on finite differences.
    fn jacobian(&self, _params: &[f64]) -> Option<Result<DMatrix<f64>>> {
        None
    }
}

impl<F> LeastSquares for F
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    fn residuals(&self, params: &[f64]) -> Result<Vec<f64>> {
        self(params)
    }
}

/// Which Jacobian the solver asks the problem for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum JacobianMode {
    #[default]
    FiniteDifference,
    Analytic,
}

#[derive(Debug, Clone)]
pub struct LmConfig {
    pub lambda0: f64,
    pub lambda_up: f64,
    pub lambda_down: f64,
    /// Damping above this aborts the solve with the best parameters found.
    pub lambda_limit: f64,
    pub max_iters: usize,
    /// Two-norm of the proposed step below which the solve stops.
    pub step_tol: f64,
    /// Relative energy decrease below which an accepted step stops the solve.
    pub energy_tol: f64,
    /// Base finite-difference step; the per-parameter step is
    /// `fd_step * (1 + |param|)`.
    pub fd_step: f64,
    pub jacobian: JacobianMode,
}

impl Default for LmConfig {
    fn default() -> Self {
        LmConfig {
            lambda0: 1e-3,
            lambda_up: 10.0,
            lambda_down: 10.0,
            lambda_limit: 1e12,
            max_iters: 100,
            step_tol: 1e-10,
            energy_tol: 1e-12,
            fd_step: 1e-6,
            jacobian: JacobianMode::FiniteDifference,
        }
    }
}

impl LmConfig {
    pub(crate) fn validate(&self) -> Result<()> {
        let pos = [
            ("lambda0", self.lambda0),
            ("lambda_up", self.lambda_up),
            ("lambda_down", self.lambda_down),
            ("lambda_limit", self.lambda_limit),
            ("step_tol", self.step_tol),
            ("energy_tol", self.energy_tol),
            ("fd_step", self.fd_step),
        ];
        for (name, v) in pos {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be positive and finite, got {v}"
                )));
            }
        }
        if self.lambda_up <= 1.0 || self.lambda_down <= 1.0 {
            return Err(Error::InvalidParameter(
                "lambda_up and lambda_down must exceed 1".into(),
            ));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidParameter("max_iters must be at least 1".into()));
        }
        Ok(())
    }
}

/// Why the solve stopped. Damping exhaustion is not listed here because it is
/// reported as an error carrying the best parameters seen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    StepTol,
    EnergyTol,
    MaxIters,
}

#[derive(Debug, Clone)]
pub struct LmStats {
    /// Outer iterations run (each factors one Jacobian).
    pub iterations: usize,
    pub accepted_steps: usize,
    pub initial_energy: f64,
    pub final_energy: f64,
    pub termination: Termination,
}

#[derive(Debug, Clone)]
pub struct LmOutcome {
    pub params: Vec<f64>,
    pub stats: LmStats,
}

fn energy_of(residuals: &[f64]) -> f64 {
    residuals.iter().map(|e| e * e).sum()
}

fn finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Central-difference Jacobian with per-parameter step `h0 * (1 + |param|)`.
pub fn fd_jacobian<P: LeastSquares + ?Sized>(
    problem: &P,
    params: &[f64],
    h0: f64,
) -> Result<DMatrix<f64>> {
    if !(h0 > 0.0 && h0.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "finite-difference step must be positive and finite, got {h0}"
        )));
    }
    let n = params.len();
    let mut probe = params.to_vec();
    let mut jac: Option<DMatrix<f64>> = None;
    for l in 0..n {
        let h = h0 * (1.0 + params[l].abs());
        probe[l] = params[l] + h;
        let plus = problem.residuals(&probe)?;
        probe[l] = params[l] - h;
        let minus = problem.residuals(&probe)?;
        probe[l] = params[l];
        if plus.len() != minus.len() {
            return Err(Error::Numerical(
                "residual count changed between probe evaluations".into(),
            ));
        }
        let jac = jac.get_or_insert_with(|| DMatrix::zeros(plus.len(), n));
        if jac.nrows() != plus.len() {
            return Err(Error::Numerical(
                "residual count changed between probe evaluations".into(),
            ));
        }
        let inv = 1.0 / (2.0 * h);
        for k in 0..plus.len() {
            jac[(k, l)] = (plus[k] - minus[k]) * inv;
        }
    }
    let jac = jac.unwrap_or_else(|| DMatrix::zeros(0, 0));
    if !finite(jac.as_slice()) {
        return Err(Error::Numerical(
            "finite-difference Jacobian has non-finite entries".into(),
        ));
    }
    Ok(jac)
}

fn jacobian_for<P: LeastSquares + ?Sized>(
    problem: &P,
    params: &[f64],
    cfg: &LmConfig,
) -> Result<DMatrix<f64>> {
    match cfg.jacobian {
        JacobianMode::FiniteDifference => fd_jacobian(problem, params, cfg.fd_step),
        JacobianMode::Analytic => match problem.jacobian(params) {
            Some(j) => {
                let j = j?;
                if !finite(j.as_slice()) {
                    return Err(Error::Numerical(
                        "analytic Jacobian has non-finite entries".into(),
                    ));
                }
                Ok(j)
            }
            None => Err(Error::InvalidParameter(
                "analytic Jacobian requested but the problem does not provide one".into(),
            )),
        },
    }
}

/// Minimizes the summed squared residual starting from `params0`.
///
/// On damping exhaustion (no strictly decreasing step found before the
/// damping factor passes `lambda_limit`) the best parameters seen so far ride
/// out inside the error value rather than being lost.
pub fn lm_minimize<P: LeastSquares + ?Sized>(
    problem: &P,
    params0: &[f64],
    cfg: &LmConfig,
) -> Result<LmOutcome> {
    cfg.validate()?;
    if params0.is_empty() {
        return Err(Error::InvalidParameter("empty parameter vector".into()));
    }
    if !finite(params0) {
        return Err(Error::InvalidParameter(
            "initial parameters must be finite".into(),
        ));
    }

    let mut params = params0.to_vec();
    let mut current_residuals = problem.residuals(&params)?;
    if !finite(&current_residuals) {
        return Err(Error::Numerical(
            "residuals are non-finite at the initial parameters".into(),
        ));
    }
    let initial_energy = energy_of(&current_residuals);
    let mut energy = initial_energy;
    let mut lambda = cfg.lambda0;
    let mut accepted_steps = 0usize;
    let n = params.len();

    let finish = |params: Vec<f64>, iterations, accepted_steps, energy, termination| {
        Ok(LmOutcome {
            params,
            stats: LmStats {
                iterations,
                accepted_steps,
                initial_energy,
                final_energy: energy,
                termination,
            },
        })
    };

    for iter in 1..=cfg.max_iters {
        let jac = jacobian_for(problem, &params, cfg)?;
        if jac.ncols() != n {
            return Err(Error::Numerical(
                "Jacobian column count does not match the parameter count".into(),
            ));
        }
        let e = DVector::from_column_slice(&current_residuals);
        if jac.nrows() != e.len() {
            return Err(Error::Numerical(
                "Jacobian row count does not match the residual count".into(),
            ));
        }
        let gradient = jac.transpose() * &e;
        if gradient.iter().all(|g| *g == 0.0) {
            // Exact stationary point: no direction to move in.
            return finish(params, iter, accepted_steps, energy, Termination::StepTol);
        }
        let hessian = jac.transpose() * &jac;
        // Directions whose curvature sits many orders below the strongest
        // one are invisible to this linearization: dead parameters and gauge
        // freedoms such as the quaternion length. They take a zero step;
        // damping them with lambda instead would divide their gradient
        // noise by a small number whenever the solve is going well and send
        // the parameter on a random walk.
        let dust = 1e-9 * (0..n).map(|d| hessian[(d, d)]).fold(0.0, f64::max);

        // Inner loop: raise the damping until a step strictly decreases the
        // energy or the damping budget runs out.
        loop {
            let mut damped = hessian.clone();
            let mut rhs = -&gradient;
            for d in 0..n {
                let h = hessian[(d, d)];
                if h > dust {
                    damped[(d, d)] = h * (1.0 + lambda);
                } else {
                    // Frozen direction: unit diagonal, cleared couplings and
                    // right-hand side, so its step solves to exactly zero.
                    for j in 0..n {
                        damped[(d, j)] = 0.0;
                        damped[(j, d)] = 0.0;
                    }
                    damped[(d, d)] = 1.0;
                    rhs[d] = 0.0;
                }
            }
            let step = Cholesky::new(damped).map(|ch| ch.solve(&rhs));
            match step {
                Some(delta) if finite(delta.as_slice()) => {
                    if delta.norm() < cfg.step_tol {
                        return finish(
                            params,
                            iter,
                            accepted_steps,
                            energy,
                            Termination::StepTol,
                        );
                    }
                    let trial: Vec<f64> =
                        params.iter().zip(delta.iter()).map(|(p, d)| p + d).collect();
                    let trial_residuals = match problem.residuals(&trial) {
                        Ok(et) if finite(&et) => Some(et),
                        // A trial point the problem cannot evaluate is just a
                        // rejected step, not a failed solve.
                        _ => None,
                    };
                    let trial_energy = trial_residuals
                        .as_deref()
                        .map_or(f64::INFINITY, energy_of);
                    if trial_energy < energy {
                        let drop = (energy - trial_energy) / energy.max(f64::MIN_POSITIVE);
                        params = trial;
                        energy = trial_energy;
                        current_residuals =
                            trial_residuals.expect("accepted steps have residuals");
                        accepted_steps += 1;
                        lambda = (lambda / cfg.lambda_down).max(1e-12);
                        if drop < cfg.energy_tol {
                            return finish(
                                params,
                                iter,
                                accepted_steps,
                                energy,
                                Termination::EnergyTol,
                            );
                        }
                        break;
                    }
                    if trial_residuals.is_some() {
                        // The step evaluated fine yet gained nothing. When
                        // even the quadratic model promises a relative
                        // reduction this small, no resolvable improvement is
                        // left in this direction; that is convergence, not a
                        // rejected step. Happens at true optima where the
                        // Jacobian itself decays into noise (a Gaussian
                        // kernel is flat at its peak, so perfect alignment
                        // starves J while the energy keeps a floor). Steps
                        // whose evaluation fails stay on the damping path:
                        // they say nothing about optimality.
                        let predicted = -gradient.dot(&delta)
                            - 0.5 * delta.dot(&(&hessian * &delta));
                        if predicted <= 1e-9 * energy.max(f64::MIN_POSITIVE) {
                            return finish(
                                params,
                                iter,
                                accepted_steps,
                                energy,
                                Termination::EnergyTol,
                            );
                        }
                    }
                }
                // Singular or indefinite normal equations: treat like a
                // rejected step and damp harder.
                _ => {}
            }
            lambda *= cfg.lambda_up;
            if lambda > cfg.lambda_limit {
                return Err(Error::OptimizationFailed {
                    best_params: params,
                    best_energy: energy,
                    iterations: iter,
                    lambda_limit: cfg.lambda_limit,
                });
            }
        }
    }

    finish(
        params,
        cfg.max_iters,
        accepted_steps,
        energy,
        Termination::MaxIters,
    )
}
