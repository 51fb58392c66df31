//! The Hopf construction: two-point Jacobi solutions `y(t; a, b)`, their
//! `b -> infinity` limit, the bounded Riccati solution `r = y'/y`, and the
//! explicit comparison bounds `P± = A (1 ± sqrt 5) / 2`.
//!
//! The limit profile is computed by backward integration from the far
//! endpoint `b` (the decaying direction is stable backwards), with
//! renormalization of the linear components to stay in f64 range; `r` is
//! scale invariant, so the renormalization is free.

use serde::Serialize;
use std::sync::Arc;
use thiserror::Error;

use crate::dynamics::Trajectory;
use crate::jacobi::{jacobi_solve_at, JacobiError, JacobiSolution};
use crate::ode::{DenseStep, Dopri5, OdeError};

#[derive(Debug, Error)]
pub enum HopfError {
    #[error(transparent)]
    Ode(#[from] OdeError),
    #[error(transparent)]
    Jacobi(#[from] JacobiError),
    #[error("(a, b) = ({a}, {b}) is a conjugate pair: y2(b) = {y2b:e}")]
    ConjugatePair { a: f64, b: f64, y2b: f64 },
    #[error("two-point solution vanishes inside ({a}, {b}): conjugate points in span")]
    InteriorZero { a: f64, b: f64 },
    #[error("Hopf limit did not converge within the b-schedule (last sup delta {last_delta:e})")]
    NonConvergence {
        history: Vec<ConvergenceRecord>,
        last_delta: f64,
    },
    #[error("degenerate comparison endpoints a = b = {a}")]
    EqualEndpoints { a: f64 },
}

/// Bound constants of the comparison argument.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ComparisonBounds {
    /// `B^2 >= sup |K_lambda|`.
    pub b_sq: f64,
    /// `C >= sup |V(lambda)|`.
    pub c: f64,
    /// `A = max(B, C)`.
    pub a: f64,
    pub p_minus: f64,
    pub p_plus: f64,
}

/// Convergence history entry of the doubling b-schedule.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ConvergenceRecord {
    pub b: f64,
    /// Sup over the window of `|r_b - r_prev|` (NaN for the first entry).
    pub sup_delta: f64,
    /// Min over `t >= a` of `y_b - y_prev` (should be >= -eps: the
    /// normalized solutions increase towards the limit).
    pub min_monotone_gap: f64,
}

/// Doubling schedule for the far endpoint.
#[derive(Debug, Clone, Copy)]
pub struct BSchedule {
    pub b0: f64,
    pub b_max: f64,
}

impl Default for BSchedule {
    fn default() -> Self {
        BSchedule {
            b0: 8.0,
            b_max: 1024.0,
        }
    }
}

/// The Hopf-limit Riccati function along a trajectory.
#[derive(Debug, Clone, Serialize)]
pub struct RiccatiProfile {
    pub times: Vec<f64>,
    pub r: Vec<f64>,
    /// Samples where the denominator `y(t; a)` was above the mask threshold.
    pub mask: Vec<bool>,
    pub v_lambda: Vec<f64>,
    pub k_lambda: Vec<f64>,
    pub bounds: ComparisonBounds,
    pub history: Vec<ConvergenceRecord>,
    pub anchor: f64,
    pub converged_b: f64,
    pub tol: f64,
    /// Sup-norm estimate of the Riccati equation residual.
    pub residual: f64,
}

impl RiccatiProfile {
    /// Bound certificate: `P- - eps <= r <= P+ + eps` sample-wise.
    pub fn bounds_violation(&self) -> f64 {
        let mut worst = 0.0f64;
        for (i, &ri) in self.r.iter().enumerate() {
            if self.mask[i] {
                worst = worst
                    .max(self.bounds.p_minus - ri)
                    .max(ri - self.bounds.p_plus);
            }
        }
        worst
    }

    /// CSV export: `t, r, V_lambda, K_lambda, in_bounds`.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,r,v_lambda,k_lambda,in_bounds")?;
        let eps = self.tol * 10.0;
        for i in 0..self.times.len() {
            if !self.mask[i] {
                continue;
            }
            let in_bounds = self.r[i] >= self.bounds.p_minus - eps
                && self.r[i] <= self.bounds.p_plus + eps;
            writeln!(
                w,
                "{:.12},{:.12},{:.12},{:.12},{}",
                self.times[i], self.r[i], self.v_lambda[i], self.k_lambda[i], in_bounds as u8
            )?;
        }
        Ok(())
    }
}

/// Two-point Jacobi solution with `y(a) = 1`, `y(b) = 0`, built from the
/// fundamental solutions anchored at `a`.
pub struct TwoPointSolution {
    pub a: f64,
    pub b: f64,
    y1: JacobiSolution,
    y2: JacobiSolution,
    ratio: f64,
}

impl TwoPointSolution {
    pub fn eval(&self, t: f64) -> (f64, f64) {
        let (u, du) = self.y1.eval(t);
        let (v, dv) = self.y2.eval(t);
        (u - self.ratio * v, du - self.ratio * dv)
    }
}

pub fn two_point_solution(
    traj: &Trajectory,
    a: f64,
    b: f64,
) -> Result<TwoPointSolution, HopfError> {
    if a == b {
        return Err(HopfError::EqualEndpoints { a });
    }
    let y1 = jacobi_solve_at(traj, a, 1.0, 0.0)?;
    let y2 = jacobi_solve_at(traj, a, 0.0, 1.0)?;
    let y2b = y2.eval(b).0;
    // Conjugate-pair threshold relative to the size of y2 on [a, b].
    let mut y2_scale = 1.0f64;
    for i in 0..=64 {
        let t = a + (b - a) * i as f64 / 64.0;
        y2_scale = y2_scale.max(y2.eval(t).0.abs());
    }
    if y2b.abs() < 1e-9 * y2_scale {
        return Err(HopfError::ConjugatePair { a, b, y2b });
    }
    let ratio = y1.eval(b).0 / y2b;
    let sol = TwoPointSolution {
        a,
        b,
        y1,
        y2,
        ratio,
    };
    // The construction is only meaningful without conjugate points between
    // a and b: y must stay positive strictly inside (a, b).
    let (lo, hi) = (a.min(b), a.max(b));
    let n = 256;
    for i in 1..n {
        let t = lo + (hi - lo) * i as f64 / n as f64;
        if hi - t > 1e-9 && sol.eval(t).0 <= 0.0 {
            return Err(HopfError::InteriorZero { a, b });
        }
    }
    Ok(sol)
}

/// `r_b(t) = y'(t; a, b) / y(t; a, b)` sampled at `times`, via renormalized
/// backward integration of the Jacobi equation from `(y, y')(b) = (0, -1)`.
/// Returns `(r values, log |y| up to a common constant)`.
fn riccati_from_endpoint(
    traj: &Trajectory,
    b: f64,
    times: &[f64],
    tol: f64,
) -> Result<(Vec<f64>, Vec<f64>), HopfError> {
    let t_lo = times[0];
    assert!(b > t_lo);
    let rhs = |t: f64, y: &[f64], dy: &mut [f64]| {
        let st = traj.state_at(t);
        let sys = traj.system();
        let d = sys.point_data(st.x);
        let v_lam = crate::dynamics::v_lambda_from(&d, st.theta);
        let k_lam = crate::dynamics::k_lambda_from(&d, st.theta);
        dy[0] = y[1];
        dy[1] = v_lam * y[1] - k_lam * y[0];
    };
    let mut stepper = Dopri5::new(rhs, b, vec![0.0, -1.0], t_lo, tol, tol * 1e-2);
    // Accepted steps with the cumulative log-scale in force while each was
    // taken (w_true = w_step * exp(log_scale)).
    let mut steps: Vec<(DenseStep, f64)> = Vec::new();
    let mut log_scale = 0.0f64;
    while !stepper.done() {
        let step = stepper.step()?;
        steps.push((step, log_scale));
        let norm = stepper.y[0].abs().max(stepper.y[1].abs());
        if norm > 1e8 {
            stepper.scale_components(0..2, 1.0 / norm);
            log_scale += norm.ln();
        }
    }
    let mut r = Vec::with_capacity(times.len());
    let mut logy = Vec::with_capacity(times.len());
    let mut buf = [0.0; 2];
    let mut idx = 0usize;
    for &t in times.iter().rev() {
        // Steps run backward in time; find the step containing t.
        while idx + 1 < steps.len() && steps[idx].0.t1() > t {
            idx += 1;
        }
        let (step, ls) = &steps[idx];
        step.eval_into(t.min(step.t0).max(step.t1()), &mut buf);
        r.push(buf[1] / buf[0]);
        logy.push(buf[0].abs().max(1e-300).ln() + ls);
    }
    r.reverse();
    logy.reverse();
    Ok((r, logy))
}

/// Hopf limit `y(t; a) = lim_{b -> +inf} y(t; a, b)` and its Riccati
/// function on the window `[a - 10, a + 10]` (clipped to the trajectory
/// span). Stops when `sup |r_{2b} - r_b| < tol`.
pub fn hopf_limit(
    traj: &Trajectory,
    a: f64,
    schedule: BSchedule,
    tol: f64,
) -> Result<RiccatiProfile, HopfError> {
    const WINDOW: f64 = 10.0;
    const SAMPLES: usize = 401;
    const MASK_LOG: f64 = -18.0; // y(t; a) / y(a; a) < ~1.5e-8 masked

    let span = traj.t_end();
    let t_lo = (a - WINDOW).max(0.0);
    let t_hi = (a + WINDOW).min(span);
    let times: Vec<f64> = (0..SAMPLES)
        .map(|i| t_lo + (t_hi - t_lo) * i as f64 / (SAMPLES - 1) as f64)
        .collect();
    let itol = traj.tol();
    let sys = traj.system().clone();
    let bounds = comparison_bounds(&sys);

    // Degenerate comparison data: A = 0 means K_lambda and V(lambda)
    // vanish identically, the Jacobi equation is y'' = 0, the two-point
    // solution is the linear interpolant and r_b = -1/(b - t) tends to 0
    // pointwise (at rate 1/b, not geometrically — so it is handled in
    // closed form rather than through the schedule).
    if bounds.a == 0.0 {
        let mask = vec![true; times.len()];
        let r = vec![0.0; times.len()];
        let residual = riccati_residual_on(traj, &times, &r, &mask)?;
        return Ok(RiccatiProfile {
            v_lambda: vec![0.0; times.len()],
            k_lambda: vec![0.0; times.len()],
            times,
            r,
            mask,
            bounds,
            history: Vec::new(),
            anchor: a,
            converged_b: span,
            tol,
            residual,
        });
    }

    // Doubling offsets from the anchor, with a final attempt at the
    // largest reachable endpoint.
    let limit = span.min(a + schedule.b_max);
    let mut b_values: Vec<f64> = Vec::new();
    let mut d = schedule.b0;
    while a + d < limit - 1e-9 {
        b_values.push(a + d);
        d *= 2.0;
    }
    b_values.push(limit);

    let mut history: Vec<ConvergenceRecord> = Vec::new();
    let mut prev: Option<(Vec<f64>, Vec<f64>)> = None;
    let mut converged: Option<(Vec<f64>, Vec<f64>, f64)> = None;
    let mut last_delta = f64::NAN;
    for &bb in &b_values {
        let (r_b, logy_b) = riccati_from_endpoint(traj, bb, &times, itol)?;
        // log y normalized at the anchor: log(y(t; a, b)) with y(a) = 1.
        let anchor_idx = times
            .iter()
            .enumerate()
            .min_by(|(_, u), (_, v)| {
                (*u - a).abs().partial_cmp(&(*v - a).abs()).unwrap()
            })
            .map(|(i, _)| i)
            .unwrap();
        let logy_n: Vec<f64> = logy_b.iter().map(|l| l - logy_b[anchor_idx]).collect();
        if let Some((r_prev, logy_prev)) = &prev {
            let mut sup_delta = 0.0f64;
            for i in 0..times.len() {
                // Compare only where both denominators are comfortably
                // away from the endpoint zero.
                if logy_n[i] > MASK_LOG && logy_prev[i] > MASK_LOG && times[i] < bb - 1.0 {
                    sup_delta = sup_delta.max((r_b[i] - r_prev[i]).abs());
                }
            }
            let mut min_gap = f64::INFINITY;
            for i in 0..times.len() {
                if times[i] >= a && logy_n[i] > MASK_LOG && logy_prev[i] > MASK_LOG {
                    min_gap = min_gap.min(logy_n[i] - logy_prev[i]);
                }
            }
            history.push(ConvergenceRecord {
                b: bb,
                sup_delta,
                min_monotone_gap: min_gap,
            });
            last_delta = sup_delta;
            if sup_delta < tol {
                converged = Some((r_b.clone(), logy_n.clone(), bb));
                break;
            }
        } else {
            history.push(ConvergenceRecord {
                b: bb,
                sup_delta: f64::NAN,
                min_monotone_gap: f64::NAN,
            });
        }
        prev = Some((r_b, logy_n));
    }
    let (r, logy_n, converged_b) = converged.ok_or(HopfError::NonConvergence {
        history: history.clone(),
        last_delta,
    })?;
    let mask: Vec<bool> = logy_n.iter().map(|&l| l > MASK_LOG).collect();
    let mut v_lam = Vec::with_capacity(times.len());
    let mut k_lam = Vec::with_capacity(times.len());
    for &t in &times {
        let st = traj.state_at(t);
        v_lam.push(sys.v_lambda(&st));
        k_lam.push(sys.k_lambda(&st));
    }
    let residual = riccati_residual_on(traj, &times, &r, &mask)?;
    Ok(RiccatiProfile {
        times,
        r,
        mask,
        v_lambda: v_lam,
        k_lambda: k_lam,
        bounds,
        history,
        anchor: a,
        converged_b,
        tol,
        residual,
    })
}

/// Sup-norm estimate of `r' + r^2 + K_lambda - V(lambda) r` along the
/// trajectory: the Riccati equation is integrated from each sample to the
/// next (RK4 on the dense output) and compared with the stored value,
/// instead of differentiating `r` numerically.
pub fn riccati_residual_on(
    traj: &Trajectory,
    times: &[f64],
    r: &[f64],
    mask: &[bool],
) -> Result<f64, HopfError> {
    let sys = traj.system().clone();
    let frhs = |t: f64, rv: f64| -> f64 {
        let st = traj.state_at(t);
        let d = sys.point_data(st.x);
        let v_lam = crate::dynamics::v_lambda_from(&d, st.theta);
        let k_lam = crate::dynamics::k_lambda_from(&d, st.theta);
        -rv * rv - k_lam + v_lam * rv
    };
    let mut worst = 0.0f64;
    for i in 0..times.len().saturating_sub(1) {
        if !mask[i] || !mask[i + 1] {
            continue;
        }
        let (t0, t1) = (times[i], times[i + 1]);
        let dt = t1 - t0;
        // 4 RK4 substeps.
        let nsub = 4;
        let h = dt / nsub as f64;
        let mut rv = r[i];
        let mut t = t0;
        for _ in 0..nsub {
            let k1 = frhs(t, rv);
            let k2 = frhs(t + 0.5 * h, rv + 0.5 * h * k1);
            let k3 = frhs(t + 0.5 * h, rv + 0.5 * h * k2);
            let k4 = frhs(t + h, rv + h * k3);
            rv += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            t += h;
        }
        worst = worst.max((rv - r[i + 1]).abs() / dt);
    }
    Ok(worst)
}

/// Residual of a profile against the Riccati equation on its own
/// trajectory samples.
pub fn riccati_residual(traj: &Trajectory, profile: &RiccatiProfile) -> Result<f64, HopfError> {
    riccati_residual_on(traj, &profile.times, &profile.r, &profile.mask)
}

/// `B^2 = sup |K_lambda|`, `C = sup |V(lambda)|`, `A = max(B, C)`,
/// `P± = A (1 ± sqrt 5) / 2`.
///
/// For each base point the theta-dependence of both functions is an exact
/// trigonometric polynomial of degree <= 2, so the fiber sup is computed
/// from recovered coefficients; the base sup uses grid doubling until
/// stable.
pub fn comparison_bounds(system: &Arc<crate::dynamics::ThermostatSystem>) -> ComparisonBounds {
    let sup_on_grid = |m: usize| -> (f64, f64) {
        let step = std::f64::consts::TAU / m as f64;
        let mut sup_k = 0.0f64;
        let mut sup_v = 0.0f64;
        for j1 in 0..m {
            for j2 in 0..m {
                let x = [j1 as f64 * step, j2 as f64 * step];
                let d = system.point_data(x);
                // |V(lambda)| has exact fiber sup e^phi |e|.
                sup_v = sup_v.max(d.phi.exp() * (d.e1 * d.e1 + d.e2 * d.e2).sqrt());
                sup_k = sup_k.max(fiber_sup_abs(|th| {
                    crate::dynamics::k_lambda_from(&d, th)
                }));
            }
        }
        (sup_k, sup_v)
    };
    let mut m = 32;
    let (mut sup_k, mut sup_v) = sup_on_grid(m);
    loop {
        m *= 2;
        let (k2, v2) = sup_on_grid(m);
        let delta = (k2 - sup_k).abs().max((v2 - sup_v).abs());
        sup_k = k2;
        sup_v = v2;
        if delta < 1e-10 * (1.0 + sup_k.max(sup_v)) || m >= 512 {
            break;
        }
    }
    let b = sup_k.sqrt();
    let a = b.max(sup_v);
    let s5 = 5.0f64.sqrt();
    ComparisonBounds {
        b_sq: sup_k,
        c: sup_v,
        a,
        p_minus: a * (1.0 - s5) / 2.0,
        p_plus: a * (1.0 + s5) / 2.0,
    }
}

/// Sup of |p| over the fiber for a trig polynomial of degree <= 2 in theta:
/// dense scan plus Newton polish.
fn fiber_sup_abs(p: impl Fn(f64) -> f64) -> f64 {
    let n = 64;
    let mut best = 0.0f64;
    let mut best_th = 0.0f64;
    for i in 0..n {
        let th = std::f64::consts::TAU * i as f64 / n as f64;
        let v = p(th).abs();
        if v > best {
            best = v;
            best_th = th;
        }
    }
    // Newton on the derivative of p^2 for a machine-precision extremum.
    let mut th = best_th;
    let h = 1e-5;
    for _ in 0..40 {
        let g = |t: f64| {
            let v = p(t);
            v * v
        };
        let d1 = (g(th + h) - g(th - h)) / (2.0 * h);
        let d2 = (g(th + h) - 2.0 * g(th) + g(th - h)) / (h * h);
        if d2.abs() < 1e-14 {
            break;
        }
        let step = d1 / d2;
        if !step.is_finite() || step.abs() > 0.3 {
            break;
        }
        th -= step;
        if step.abs() < 1e-13 {
            break;
        }
    }
    best.max(p(th).abs())
}

/// Closed-form comparison solution `z(t; a, b)` of `z'' - A z' - A^2 z = 0`
/// with `z(a) = 1`, `z(b) = 0`.
pub fn comparison_z(t: f64, a: f64, b: f64, big_a: f64) -> Result<f64, HopfError> {
    if a == b {
        return Err(HopfError::EqualEndpoints { a });
    }
    let s5 = 5.0f64.sqrt();
    let p_minus = big_a * (1.0 - s5) / 2.0;
    let p_plus = big_a * (1.0 + s5) / 2.0;
    let num = (p_minus * (t - b)).exp() - (p_plus * (t - b)).exp();
    let den = (p_minus * (a - b)).exp() - (p_plus * (a - b)).exp();
    Ok(num / den)
}
