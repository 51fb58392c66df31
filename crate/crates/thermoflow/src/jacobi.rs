//! Jacobi fields along thermostat trajectories, zero counting and conjugate
//! point detection.
//!
//! The normal component solves `y'' - V(lambda) y' + K_lambda y = 0` with
//! `K_lambda = K - H(lambda) + lambda^2`; the tangential component solves
//! `x' = lambda y`. Coefficients are read from the trajectory's dense
//! output, except in `conjugate_scan`, which integrates the coupled
//! (flow + Jacobi) system jointly to keep conjugate times sharp.

use serde::Serialize;
use std::sync::Arc;
use thiserror::Error;

use crate::dynamics::{PhaseState, ThermostatSystem, Trajectory};
use crate::ode::{self, DenseStep, Dopri5, OdeError};

#[derive(Debug, Error)]
pub enum JacobiError {
    #[error(transparent)]
    Ode(#[from] OdeError),
    #[error("degenerate zero detection: |y| < {tol} over an interval near t = {t} with no sign change")]
    DegenerateZero { t: f64, tol: f64 },
}

/// A recorded zero of `y` with its sign-change certificate.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ZeroRecord {
    pub t: f64,
    /// Bracket endpoints with opposite signs of `y`.
    pub bracket: (f64, f64),
    pub sign_before: f64,
}

/// The pair `(y, y')` propagated along a trajectory from an anchor time,
/// together with the tangential component `x` (from `x' = lambda y`,
/// `x(anchor) = 0`).
#[derive(Debug, Clone)]
pub struct JacobiSolution {
    anchor: f64,
    /// Forward dense solution on `[anchor, t_end]`, components `[y, y', x]`.
    fwd: Option<ode::DenseSolution>,
    /// Backward dense solution on `[0, anchor]`.
    bwd: Option<ode::DenseSolution>,
}

impl JacobiSolution {
    pub fn anchor(&self) -> f64 {
        self.anchor
    }

    fn branch(&self, t: f64) -> &ode::DenseSolution {
        if t >= self.anchor {
            self.fwd.as_ref().unwrap_or_else(|| self.bwd.as_ref().unwrap())
        } else {
            self.bwd.as_ref().unwrap_or_else(|| self.fwd.as_ref().unwrap())
        }
    }

    pub fn eval(&self, t: f64) -> (f64, f64) {
        let mut buf = [0.0; 3];
        self.branch(t).eval_into(t, &mut buf);
        (buf[0], buf[1])
    }

    /// Tangential component `x(t)` with `x(anchor) = 0`.
    pub fn x_tangential(&self, t: f64) -> f64 {
        let mut buf = [0.0; 3];
        self.branch(t).eval_into(t, &mut buf);
        buf[2]
    }

    /// Wronskian of two solutions along the same trajectory.
    pub fn wronskian(&self, other: &JacobiSolution, t: f64) -> f64 {
        let (y1, dy1) = self.eval(t);
        let (y2, dy2) = other.eval(t);
        y1 * dy2 - y2 * dy1
    }

    /// Sign-change zeros of `y` on the solution's span, bisected to `t_tol`.
    pub fn zeros(&self, t_lo: f64, t_hi: f64, t_tol: f64) -> Vec<ZeroRecord> {
        let n = 2048;
        let mut out = Vec::new();
        let mut prev_t = t_lo;
        let mut prev_y = self.eval(t_lo).0;
        for i in 1..=n {
            let t = t_lo + (t_hi - t_lo) * i as f64 / n as f64;
            let y = self.eval(t).0;
            if prev_y != 0.0 && y != 0.0 && prev_y.signum() != y.signum() {
                let root = bisect(|tt| self.eval(tt).0, prev_t, t, t_tol);
                out.push(ZeroRecord {
                    t: root,
                    bracket: (prev_t, t),
                    sign_before: prev_y.signum(),
                });
            }
            prev_t = t;
            prev_y = y;
        }
        out
    }
}

fn bisect(mut f: impl FnMut(f64) -> f64, mut lo: f64, mut hi: f64, t_tol: f64) -> f64 {
    let mut f_lo = f(lo);
    while hi - lo > t_tol {
        let mid = 0.5 * (lo + hi);
        let f_mid = f(mid);
        if f_mid == 0.0 {
            return mid;
        }
        if f_lo.signum() != f_mid.signum() {
            hi = mid;
        } else {
            lo = mid;
            f_lo = f_mid;
        }
    }
    0.5 * (lo + hi)
}

fn jacobi_rhs(traj: &Trajectory, t: f64, y: &[f64], dy: &mut [f64]) {
    let st = traj.state_at(t);
    let sys = traj.system();
    let d = sys.point_data(st.x);
    let v_lam = crate::dynamics::v_lambda_from(&d, st.theta);
    let k_lam = crate::dynamics::k_lambda_from(&d, st.theta);
    let lam = crate::dynamics::lambda_from(&d, st.theta);
    dy[0] = y[1];
    dy[1] = v_lam * y[1] - k_lam * y[0];
    dy[2] = lam * y[0];
}

/// Propagate `(y, y')` with data at the start of the trajectory.
pub fn jacobi_solve(traj: &Trajectory, y0: f64, ydot0: f64) -> Result<JacobiSolution, JacobiError> {
    jacobi_solve_at(traj, 0.0, y0, ydot0)
}

/// Propagate `(y, y')` with data at anchor time `a` in the trajectory span,
/// integrating out to both ends.
pub fn jacobi_solve_at(
    traj: &Trajectory,
    a: f64,
    y0: f64,
    ydot0: f64,
) -> Result<JacobiSolution, JacobiError> {
    let tol = traj.tol();
    let span = traj.t_end();
    let init = vec![y0, ydot0, 0.0];
    let fwd = if a < span {
        Some(ode::integrate(
            |t, y, dy| jacobi_rhs(traj, t, y, dy),
            a,
            init.clone(),
            span,
            tol,
        )?)
    } else {
        None
    };
    let bwd = if a > 0.0 {
        Some(ode::integrate(
            |t, y, dy| jacobi_rhs(traj, t, y, dy),
            a,
            init,
            0.0,
            tol,
        )?)
    } else {
        None
    };
    Ok(JacobiSolution { anchor: a, fwd, bwd })
}

/// Conjugate point search result.
#[derive(Debug, Clone, Serialize)]
pub struct ConjugateReport {
    pub first_conjugate_time: Option<f64>,
    pub zero_count: usize,
    pub horizon: f64,
    pub integrator_tol: f64,
    pub root_time_tol: f64,
    /// Absence up to the horizon is evidence, not proof.
    pub exhaustive: bool,
}

const ROOT_TIME_TOL: f64 = 1e-10;
const DEGENERATE_ABS: f64 = 1e-12;
const RESCALE_THRESHOLD: f64 = 1e8;

/// Integrate the coupled flow + Jacobi system from `(y, y')(0) = (0, 1)`
/// and report the first strictly positive zero of `y` up to `horizon`.
///
/// The Jacobi components are renormalized when they grow large (the
/// equation is linear, so zeros are unaffected); this keeps scans to long
/// horizons on conjugate-point-free systems inside f64 range.
pub fn conjugate_scan(
    system: &Arc<ThermostatSystem>,
    initial: PhaseState,
    horizon: f64,
    tol: f64,
) -> Result<ConjugateReport, JacobiError> {
    let sys = system.clone();
    let rhs = move |_t: f64, y: &[f64], dy: &mut [f64]| {
        sys.flow_rhs(&y[..3], &mut dy[..3]);
        let d = sys.point_data([y[0], y[1]]);
        let v_lam = crate::dynamics::v_lambda_from(&d, y[2]);
        let k_lam = crate::dynamics::k_lambda_from(&d, y[2]);
        dy[3] = y[4];
        dy[4] = v_lam * y[4] - k_lam * y[3];
    };
    let y0 = vec![initial.x[0], initial.x[1], initial.theta, 0.0, 1.0];
    let mut stepper = Dopri5::new(rhs, 0.0, y0, horizon, tol, tol * 1e-2);
    let mut zero_count = 0usize;
    let mut first: Option<f64> = None;
    let mut prev: Option<(f64, f64)> = None; // (t, sign of y)
    let mut tiny_run = 0usize;
    while !stepper.done() {
        let step = stepper.step()?;
        // Subsample y inside the step to bracket sign changes.
        let subs = 8;
        let mut buf = vec![0.0; 5];
        for i in 1..=subs {
            let t = step.t0 + step.h * i as f64 / subs as f64;
            step.eval_into(t, &mut buf);
            let y = buf[3];
            // y(0) = 0 by construction; only later plateaus of tiny |y|
            // without a sign change are ambiguous.
            if t > 1e-6 && y.abs() < DEGENERATE_ABS {
                tiny_run += 1;
                if tiny_run > 16 {
                    return Err(JacobiError::DegenerateZero {
                        t,
                        tol: DEGENERATE_ABS,
                    });
                }
                continue;
            }
            tiny_run = 0;
            if let Some((pt, ps)) = prev {
                if y != 0.0 && ps != 0.0 && y.signum() != ps {
                    let root = refine_root(&step, pt.max(step.t0), t);
                    zero_count += 1;
                    if first.is_none() {
                        first = Some(root);
                    }
                }
            }
            if y != 0.0 {
                prev = Some((t, y.signum()));
            }
        }
        if first.is_some() {
            break;
        }
        let norm = stepper.y[3].abs().max(stepper.y[4].abs());
        if norm > RESCALE_THRESHOLD {
            stepper.scale_components(3..5, 1.0 / norm);
        }
    }
    Ok(ConjugateReport {
        first_conjugate_time: first,
        zero_count,
        horizon,
        integrator_tol: tol,
        root_time_tol: ROOT_TIME_TOL,
        exhaustive: false,
    })
}

fn refine_root(step: &DenseStep, lo: f64, hi: f64) -> f64 {
    let mut buf = vec![0.0; step.dim()];
    bisect(
        |t| {
            step.eval_into(t, &mut buf);
            buf[3]
        },
        lo,
        hi,
        ROOT_TIME_TOL,
    )
}

/// `first_conjugate_time` on the trajectory's own initial data.
pub fn first_conjugate_time(traj: &Trajectory, horizon: f64) -> Result<ConjugateReport, JacobiError> {
    conjugate_scan(traj.system(), *traj.initial(), horizon, traj.tol())
}

/// Comparison between the differential of the exponential map (by central
/// finite differences) and the Jacobi field with data `(0, w)`.
#[derive(Debug, Clone, Serialize)]
pub struct DexpComparison {
    pub jacobi: [f64; 2],
    pub finite_difference: [f64; 2],
    /// g-norm of the difference at the endpoint.
    pub discrepancy: f64,
}

/// Cross-check `J(t) = d_{tv} exp_x(t w)` against finite differences of the
/// exponential map over perturbed initial vectors.
pub fn dexp_vs_jacobi(
    system: &Arc<ThermostatSystem>,
    x: [f64; 2],
    theta: f64,
    t: f64,
    w: [f64; 2],
    tol: f64,
) -> Result<DexpComparison, JacobiError> {
    let initial = PhaseState::new(x[0], x[1], theta);
    let traj = crate::dynamics::evolve(system, initial, t, tol)?;
    let metric = system.metric();
    let v0 = system.unit_tangent(&initial);
    let iv0 = system.unit_normal(&initial);
    // Decompose w in the orthonormal frame (v, iv) at the start.
    let w_tan = metric.inner(x, w, v0);
    let w_nor = metric.inner(x, w, iv0);
    let jac = jacobi_solve(&traj, 0.0, w_nor)?;
    let (y, _dy) = jac.eval(t);
    let x_tan = w_tan * t + jac.x_tangential(t);
    let end = traj.state_at(t);
    let v_t = system.unit_tangent(&end);
    let iv_t = system.unit_normal(&end);
    let j_vec = [
        x_tan * v_t[0] + y * iv_t[0],
        x_tan * v_t[1] + y * iv_t[1],
    ];
    // Central finite difference of exp over the vectors t(v +/- eps w).
    let eps = 1e-5;
    let tv = [t * v0[0], t * v0[1]];
    let plus = crate::dynamics::exp_vector(
        system,
        x,
        [tv[0] + eps * t * w[0], tv[1] + eps * t * w[1]],
        tol,
    )?;
    let minus = crate::dynamics::exp_vector(
        system,
        x,
        [tv[0] - eps * t * w[0], tv[1] - eps * t * w[1]],
        tol,
    )?;
    let fd = [
        (plus[0] - minus[0]) / (2.0 * eps),
        (plus[1] - minus[1]) / (2.0 * eps),
    ];
    let diff = [fd[0] - j_vec[0], fd[1] - j_vec[1]];
    Ok(DexpComparison {
        jacobi: j_vec,
        finite_difference: fd,
        discrepancy: metric.norm(end.x, diff),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::evolve;
    use crate::fields::{ConformalMetric, SpectralScalarField, SpectralVectorField};
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    fn flat_system(f: f64, e: [f64; 2]) -> Arc<ThermostatSystem> {
        Arc::new(ThermostatSystem::new(
            ConformalMetric::flat(),
            SpectralScalarField::constant(f),
            SpectralVectorField::constant(e),
        ))
    }

    #[test]
    fn k_lambda_examples() {
        let geo = flat_system(0.0, [0.0, 0.0]);
        assert_eq!(geo.k_lambda(&PhaseState::new(0.1, 0.2, 0.3)), 0.0);
        let mag = flat_system(1.5, [0.0, 0.0]);
        assert_abs_diff_eq!(mag.k_lambda(&PhaseState::new(0.1, 0.2, 0.3)), 2.25);
        let pure = flat_system(0.0, [0.3, 0.8]);
        for k in 0..8 {
            let st = PhaseState::new(0.0, 0.0, 0.77 * k as f64);
            let lam = pure.lambda(&st);
            assert_abs_diff_eq!(pure.k_lambda(&st), lam * lam, epsilon = 1e-14);
        }
    }

    #[test]
    fn flat_geodesic_linear_jacobi() {
        let sys = flat_system(0.0, [0.0, 0.0]);
        let traj = evolve(&sys, PhaseState::new(0.0, 0.0, 0.0), 10.0, 1e-10).unwrap();
        let sol = jacobi_solve(&traj, 0.0, 1.0).unwrap();
        for i in 1..=10 {
            let t = i as f64;
            let (y, dy) = sol.eval(t);
            assert_abs_diff_eq!(y, t, epsilon = 1e-8);
            assert_abs_diff_eq!(dy, 1.0, epsilon = 1e-8);
        }
    }

    #[test]
    fn flat_magnetic_sine_jacobi() {
        let c = 1.7;
        let sys = flat_system(c, [0.0, 0.0]);
        let traj = evolve(&sys, PhaseState::new(0.0, 0.0, 0.0), 8.0, 1e-10).unwrap();
        let sol = jacobi_solve(&traj, 0.0, 1.0).unwrap();
        for i in 1..=16 {
            let t = 0.5 * i as f64;
            let (y, _) = sol.eval(t);
            assert_abs_diff_eq!(y, (c * t).sin() / c, epsilon = 1e-8);
        }
    }

    #[test]
    fn first_conjugate_time_magnetic() {
        let sys = flat_system(1.0, [0.0, 0.0]);
        let rep = conjugate_scan(&sys, PhaseState::new(0.0, 0.0, 0.0), 10.0, 1e-10).unwrap();
        assert_abs_diff_eq!(rep.first_conjugate_time.unwrap(), PI, epsilon = 1e-8);

        let sys = flat_system(2.0, [0.0, 0.0]);
        let rep = conjugate_scan(&sys, PhaseState::new(0.0, 0.0, 0.0), 10.0, 1e-10).unwrap();
        assert_abs_diff_eq!(rep.first_conjugate_time.unwrap(), PI / 2.0, epsilon = 1e-8);
    }

    #[test]
    fn flat_geodesic_no_conjugate_points() {
        let sys = flat_system(0.0, [0.0, 0.0]);
        let rep = conjugate_scan(&sys, PhaseState::new(0.0, 0.0, 0.0), 200.0, 1e-8).unwrap();
        assert!(rep.first_conjugate_time.is_none());
        assert_eq!(rep.zero_count, 0);
    }

    #[test]
    fn pure_thermostat_no_conjugate_points() {
        // Flat metric with constant divergence-free e = (0, 1): a pure
        // thermostat of this kind has no conjugate points.
        let sys = flat_system(0.0, [0.0, 1.0]);
        let rep = conjugate_scan(&sys, PhaseState::new(0.0, 0.0, 0.0), 100.0, 1e-8).unwrap();
        assert!(rep.first_conjugate_time.is_none());
        // The solution started with y(0) = 1 also stays positive.
        let traj = evolve(&sys, PhaseState::new(0.0, 0.0, 0.0), 50.0, 1e-9).unwrap();
        let sol = jacobi_solve(&traj, 1.0, 0.0).unwrap();
        assert!(sol.zeros(0.0, 50.0, 1e-10).is_empty());
    }

    #[test]
    fn tangential_jacobi_field_is_constant() {
        let sys = flat_system(0.0, [0.4, 0.9]);
        let traj = evolve(&sys, PhaseState::new(0.1, 0.2, 0.3), 10.0, 1e-10).unwrap();
        let sol = jacobi_solve(&traj, 0.0, 0.0).unwrap();
        for i in 0..=10 {
            let t = i as f64;
            let (y, dy) = sol.eval(t);
            assert_abs_diff_eq!(y, 0.0, epsilon = 1e-12);
            assert_abs_diff_eq!(dy, 0.0, epsilon = 1e-12);
            assert_abs_diff_eq!(sol.x_tangential(t), 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn wronskian_law() {
        let sys = flat_system(0.0, [0.9, 0.2]);
        let t_end = 6.0;
        let traj = evolve(&sys, PhaseState::new(0.3, 1.1, 0.8), t_end, 1e-11).unwrap();
        let s1 = jacobi_solve(&traj, 1.0, 0.0).unwrap();
        let s2 = jacobi_solve(&traj, 0.0, 1.0).unwrap();
        let w0 = s1.wronskian(&s2, 0.0);
        assert_abs_diff_eq!(w0, 1.0, epsilon = 1e-12);
        // W(t) = W(0) exp(int V(lambda)).
        let vint = ode::integrate(
            |t, _y, dy| {
                let st = traj.state_at(t);
                dy[0] = traj.system().v_lambda(&st);
            },
            0.0,
            vec![0.0],
            t_end,
            1e-12,
        )
        .unwrap();
        for i in 1..=6 {
            let t = i as f64;
            let expected = w0 * vint.eval(t)[0].exp();
            let got = s1.wronskian(&s2, t);
            assert!(
                ((got - expected) / expected).abs() < 1e-6,
                "t = {t}: {got} vs {expected}"
            );
            assert!(got.abs() > 0.0);
        }
    }

    #[test]
    fn jacobi_linearity() {
        let sys = flat_system(0.0, [0.5, 0.5]);
        let traj = evolve(&sys, PhaseState::new(0.0, 0.0, 0.4), 5.0, 1e-11).unwrap();
        let s1 = jacobi_solve(&traj, 1.0, 0.0).unwrap();
        let s2 = jacobi_solve(&traj, 0.0, 1.0).unwrap();
        let (a, b) = (1.3, -0.7);
        let s3 = jacobi_solve(&traj, a, b).unwrap();
        for i in 0..=10 {
            let t = 0.5 * i as f64;
            let (y1, d1) = s1.eval(t);
            let (y2, d2) = s2.eval(t);
            let (y3, d3) = s3.eval(t);
            assert_abs_diff_eq!(y3, a * y1 + b * y2, epsilon = 1e-8);
            assert_abs_diff_eq!(d3, a * d1 + b * d2, epsilon = 1e-8);
        }
    }

    #[test]
    fn dexp_agrees_with_jacobi_flat_cases() {
        let sys = flat_system(0.0, [0.0, 0.0]);
        // flat geodesic, w = iv, t = 1: both give displacement of norm 1.
        let cmp = dexp_vs_jacobi(&sys, [0.0, 0.0], 0.0, 1.0, [0.0, 1.0], 1e-11).unwrap();
        assert!(cmp.discrepancy < 1e-6, "{cmp:?}");
        assert_abs_diff_eq!(cmp.jacobi[1], 1.0, epsilon = 1e-9);
        // flat magnetic f = 1, w = iv, t = pi (a conjugate time): the
        // normal component y = sin t vanishes, but the tangential one
        // x(pi) = int lambda y dt = 2 survives, so J(pi) = 2 gamma'(pi)
        // = (-2, 0).
        let mag = flat_system(1.0, [0.0, 0.0]);
        let cmp = dexp_vs_jacobi(&mag, [0.0, 0.0], 0.0, PI, [0.0, 1.0], 1e-11).unwrap();
        assert_abs_diff_eq!(cmp.jacobi[0], -2.0, epsilon = 1e-7);
        assert_abs_diff_eq!(cmp.jacobi[1], 0.0, epsilon = 1e-7);
        assert!(cmp.discrepancy < 1e-5, "{cmp:?}");
    }
}
