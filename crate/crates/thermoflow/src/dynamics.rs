//! The thermostat flow on the unit circle bundle of the torus.
//!
//! A point of `ST^2` is stored as `(x1, x2, theta)` with unit tangent
//! `v = e^{-phi} (cos theta, sin theta)`, so the unit-speed constraint
//! holds by construction. The flow integrates
//!
//! ```text
//! x1' = e^{-phi} cos theta
//! x2' = e^{-phi} sin theta
//! theta' = lambda(x, theta) + e^{-phi} (phi_2 cos theta - phi_1 sin theta)
//! ```
//!
//! where `lambda = f + <e, iv>_g`. The theta equation is the conformal
//! geodesic-curvature relation (`k_g = lambda` for unit-speed solutions);
//! it is certified against the covariant equation residual in tests rather
//! than trusted.

use std::f64::consts::TAU;
use std::io::Write;
use std::sync::Arc;

use crate::fields::{ConformalMetric, FourierBasis, SpectralScalarField, SpectralVectorField};
use crate::ode::{self, DenseSolution, OdeError};

/// A point of the unit circle bundle: base point and heading angle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseState {
    pub x: [f64; 2],
    pub theta: f64,
}

impl PhaseState {
    pub fn new(x1: f64, x2: f64, theta: f64) -> Self {
        PhaseState {
            x: [x1, x2],
            theta,
        }
    }

    /// Position reduced mod 2 pi (reporting only; internal states stay
    /// unwrapped).
    pub fn wrapped(&self) -> Self {
        PhaseState {
            x: [self.x[0].rem_euclid(TAU), self.x[1].rem_euclid(TAU)],
            theta: self.theta.rem_euclid(TAU),
        }
    }

    /// The flip `(x, v) -> (x, -v)`.
    pub fn flipped(&self) -> Self {
        PhaseState {
            x: self.x,
            theta: self.theta + std::f64::consts::PI,
        }
    }
}

/// Everything a right-hand-side evaluation needs at one base point.
#[derive(Debug, Clone, Copy)]
pub struct PointData {
    pub phi: f64,
    pub p1: f64,
    pub p2: f64,
    pub lap_phi: f64,
    pub f: f64,
    pub f1: f64,
    pub f2: f64,
    pub e1: f64,
    pub e2: f64,
    pub d1e1: f64,
    pub d2e1: f64,
    pub d1e2: f64,
    pub d2e2: f64,
}

/// The thermostat `(T^2, g, f, e)` with derivative fields precomputed.
#[derive(Debug, Clone)]
pub struct ThermostatSystem {
    metric: ConformalMetric,
    f: SpectralScalarField,
    e: SpectralVectorField,
    d1_f: SpectralScalarField,
    d2_f: SpectralScalarField,
    d1_e1: SpectralScalarField,
    d2_e1: SpectralScalarField,
    d1_e2: SpectralScalarField,
    d2_e2: SpectralScalarField,
    d1_phi: SpectralScalarField,
    d2_phi: SpectralScalarField,
    lap_phi: SpectralScalarField,
    max_band: usize,
}

impl ThermostatSystem {
    pub fn new(metric: ConformalMetric, f: SpectralScalarField, e: SpectralVectorField) -> Self {
        let max_band = metric.phi().band().max(f.band()).max(e.band());
        ThermostatSystem {
            d1_f: f.partial(0),
            d2_f: f.partial(1),
            d1_e1: e.c1.partial(0),
            d2_e1: e.c1.partial(1),
            d1_e2: e.c2.partial(0),
            d2_e2: e.c2.partial(1),
            d1_phi: metric.phi().partial(0),
            d2_phi: metric.phi().partial(1),
            lap_phi: metric.phi().laplacian(),
            metric,
            f,
            e,
            max_band,
        }
    }

    /// Geodesic flow of the same metric (`f = 0`, `e = 0`).
    pub fn geodesic(metric: ConformalMetric) -> Self {
        Self::new(metric, SpectralScalarField::zero(), SpectralVectorField::zero())
    }

    pub fn metric(&self) -> &ConformalMetric {
        &self.metric
    }

    pub fn f(&self) -> &SpectralScalarField {
        &self.f
    }

    pub fn e(&self) -> &SpectralVectorField {
        &self.e
    }

    /// Gaussian (pure) thermostat: `f = 0`.
    pub fn is_pure(&self, tol: f64) -> bool {
        self.f.is_zero(tol)
    }

    /// Magnetic flow: `e = 0`.
    pub fn is_magnetic(&self, tol: f64) -> bool {
        self.e.is_zero(tol)
    }

    pub fn point_data(&self, x: [f64; 2]) -> PointData {
        let basis = FourierBasis::new(x, self.max_band);
        PointData {
            phi: self.metric.phi().eval_with(&basis),
            p1: self.d1_phi.eval_with(&basis),
            p2: self.d2_phi.eval_with(&basis),
            lap_phi: self.lap_phi.eval_with(&basis),
            f: self.f.eval_with(&basis),
            f1: self.d1_f.eval_with(&basis),
            f2: self.d2_f.eval_with(&basis),
            e1: self.e.c1.eval_with(&basis),
            e2: self.e.c2.eval_with(&basis),
            d1e1: self.d1_e1.eval_with(&basis),
            d2e1: self.d2_e1.eval_with(&basis),
            d1e2: self.d1_e2.eval_with(&basis),
            d2e2: self.d2_e2.eval_with(&basis),
        }
    }

    /// `lambda(x, v) = f(x) + <e(x), iv>_g`.
    pub fn lambda(&self, state: &PhaseState) -> f64 {
        let d = self.point_data(state.x);
        lambda_from(&d, state.theta)
    }

    /// Fiber derivative `V(lambda) = -<e, v>_g`.
    pub fn v_lambda(&self, state: &PhaseState) -> f64 {
        let d = self.point_data(state.x);
        v_lambda_from(&d, state.theta)
    }

    /// Second fiber derivative `V^2(lambda) = -(lambda - f)`.
    pub fn v2_lambda(&self, state: &PhaseState) -> f64 {
        let d = self.point_data(state.x);
        -(lambda_from(&d, state.theta) - d.f)
    }

    /// Horizontal derivative `H(lambda) = df(iv) + <nabla_iv e, iv>_g`.
    pub fn h_lambda(&self, state: &PhaseState) -> f64 {
        let d = self.point_data(state.x);
        h_lambda_from(&d, state.theta)
    }

    /// Geodesic derivative `X(V(lambda)) = -<nabla_v e, v>_g`.
    pub fn x_vlambda(&self, state: &PhaseState) -> f64 {
        let d = self.point_data(state.x);
        x_vlambda_from(&d, state.theta)
    }

    /// Effective curvature `K_lambda = K - H(lambda) + lambda^2`.
    pub fn k_lambda(&self, state: &PhaseState) -> f64 {
        let d = self.point_data(state.x);
        k_lambda_from(&d, state.theta)
    }

    pub fn gauss_curvature(&self, x: [f64; 2]) -> f64 {
        self.metric.gauss_curvature(x)
    }

    /// Flow right-hand side in `(x1, x2, theta)` coordinates.
    pub fn flow_rhs(&self, state: &[f64], out: &mut [f64]) {
        let d = self.point_data([state[0], state[1]]);
        let (s, c) = state[2].sin_cos();
        let u = (-d.phi).exp();
        out[0] = u * c;
        out[1] = u * s;
        out[2] = lambda_from(&d, state[2]) + u * (d.p2 * c - d.p1 * s);
    }

    /// Unit tangent of a state in Euclidean components.
    pub fn unit_tangent(&self, state: &PhaseState) -> [f64; 2] {
        let u = (-self.metric.phi_at(state.x)).exp();
        let (s, c) = state.theta.sin_cos();
        [u * c, u * s]
    }

    /// Positively oriented unit normal `iv`.
    pub fn unit_normal(&self, state: &PhaseState) -> [f64; 2] {
        let u = (-self.metric.phi_at(state.x)).exp();
        let (s, c) = state.theta.sin_cos();
        [-u * s, u * c]
    }
}

#[inline]
pub(crate) fn lambda_from(d: &PointData, theta: f64) -> f64 {
    let (s, c) = theta.sin_cos();
    d.f + d.phi.exp() * (-d.e1 * s + d.e2 * c)
}

#[inline]
pub(crate) fn v_lambda_from(d: &PointData, theta: f64) -> f64 {
    let (s, c) = theta.sin_cos();
    -d.phi.exp() * (d.e1 * c + d.e2 * s)
}

/// `<nabla_w e, w>_g` for a Euclidean-component direction `w`.
#[inline]
fn covariant_quadratic(d: &PointData, w: [f64; 2]) -> f64 {
    let flat1 = w[0] * d.d1e1 + w[1] * d.d2e1;
    let flat2 = w[0] * d.d1e2 + w[1] * d.d2e2;
    let gamma1 = d.p1 * w[0] * d.e1 + d.p2 * (w[0] * d.e2 + w[1] * d.e1) - d.p1 * w[1] * d.e2;
    let gamma2 = -d.p2 * w[0] * d.e1 + d.p1 * (w[0] * d.e2 + w[1] * d.e1) + d.p2 * w[1] * d.e2;
    (2.0 * d.phi).exp() * ((flat1 + gamma1) * w[0] + (flat2 + gamma2) * w[1])
}

#[inline]
pub(crate) fn h_lambda_from(d: &PointData, theta: f64) -> f64 {
    let (s, c) = theta.sin_cos();
    let u = (-d.phi).exp();
    let iv = [-u * s, u * c];
    d.f1 * iv[0] + d.f2 * iv[1] + covariant_quadratic(d, iv)
}

#[inline]
pub(crate) fn x_vlambda_from(d: &PointData, theta: f64) -> f64 {
    let (s, c) = theta.sin_cos();
    let u = (-d.phi).exp();
    let v = [u * c, u * s];
    -covariant_quadratic(d, v)
}

#[inline]
pub(crate) fn k_lambda_from(d: &PointData, theta: f64) -> f64 {
    let curv = -(-2.0 * d.phi).exp() * d.lap_phi;
    let lam = lambda_from(d, theta);
    curv - h_lambda_from(d, theta) + lam * lam
}

/// A flow segment with dense output; positions and heading are stored
/// unwrapped.
#[derive(Debug, Clone)]
pub struct Trajectory {
    system: Arc<ThermostatSystem>,
    initial: PhaseState,
    dense: DenseSolution,
    tol: f64,
}

impl Trajectory {
    pub fn system(&self) -> &Arc<ThermostatSystem> {
        &self.system
    }

    pub fn initial(&self) -> &PhaseState {
        &self.initial
    }

    pub fn t_end(&self) -> f64 {
        self.dense.t_end()
    }

    pub fn tol(&self) -> f64 {
        self.tol
    }

    pub fn sample_times(&self) -> Vec<f64> {
        self.dense.sample_times()
    }

    pub fn state_at(&self, t: f64) -> PhaseState {
        let mut buf = [0.0; 3];
        self.dense.eval_into(t, &mut buf);
        PhaseState {
            x: [buf[0], buf[1]],
            theta: buf[2],
        }
    }

    pub fn lambda_at(&self, t: f64) -> f64 {
        self.system.lambda(&self.state_at(t))
    }

    /// `|<gdot, gdot>_g - 1|` with the velocity obtained by central finite
    /// differences on the dense output (an independent route; the analytic
    /// velocity is unit by construction).
    pub fn unit_speed_residual(&self, t: f64) -> f64 {
        let h = 1e-5;
        let (a, b) = clamp_pair(t, h, self.t_end());
        let sa = self.state_at(a);
        let sb = self.state_at(b);
        let v = [
            (sb.x[0] - sa.x[0]) / (b - a),
            (sb.x[1] - sa.x[1]) / (b - a),
        ];
        let mid = self.state_at(0.5 * (a + b));
        (self.system.metric().inner(mid.x, v, v) - 1.0).abs()
    }

    /// g-norm of `D_t gdot - lambda i gdot`, with the acceleration from
    /// finite differences of the dense output plus the Christoffel
    /// correction.
    pub fn equation_residual(&self, t: f64) -> f64 {
        let h = 1e-4;
        let (a, b) = clamp_pair(t, h, self.t_end());
        let tm = 0.5 * (a + b);
        let sys = &self.system;
        let vel = |tt: f64| {
            let st = self.state_at(tt);
            sys.unit_tangent(&st)
        };
        let va = vel(a);
        let vb = vel(b);
        let acc = [(vb[0] - va[0]) / (b - a), (vb[1] - va[1]) / (b - a)];
        let st = self.state_at(tm);
        let v = sys.unit_tangent(&st);
        let d = sys.point_data(st.x);
        // Christoffel correction Gamma(v, v).
        let g1 = d.p1 * v[0] * v[0] + 2.0 * d.p2 * v[0] * v[1] - d.p1 * v[1] * v[1];
        let g2 = -d.p2 * v[0] * v[0] + 2.0 * d.p1 * v[0] * v[1] + d.p2 * v[1] * v[1];
        let lam = sys.lambda(&st);
        let iv = sys.unit_normal(&st);
        let r = [
            acc[0] + g1 - lam * iv[0],
            acc[1] + g2 - lam * iv[1],
        ];
        sys.metric().norm(st.x, r)
    }

    /// CSV export: `t, x1, x2, theta, lambda, unit_speed_residual`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,x1,x2,theta,lambda,unit_speed_residual")?;
        for t in self.sample_times() {
            let st = self.state_at(t);
            let wrapped = st.wrapped();
            writeln!(
                w,
                "{:.12},{:.12},{:.12},{:.12},{:.12},{:.3e}",
                t,
                wrapped.x[0],
                wrapped.x[1],
                st.theta,
                self.system.lambda(&st),
                self.unit_speed_residual(t)
            )?;
        }
        Ok(())
    }
}

fn clamp_pair(t: f64, h: f64, t_end: f64) -> (f64, f64) {
    let a = (t - h).max(0.0);
    let b = (t + h).min(t_end);
    (a, b)
}

/// Integrate the thermostat flow for time `t_span >= 0` from `initial`.
pub fn evolve(
    system: &Arc<ThermostatSystem>,
    initial: PhaseState,
    t_span: f64,
    tol: f64,
) -> Result<Trajectory, OdeError> {
    let sys = system.clone();
    let dense = ode::integrate(
        move |_t, y, dy| sys.flow_rhs(y, dy),
        0.0,
        vec![initial.x[0], initial.x[1], initial.theta],
        t_span,
        tol,
    )?;
    Ok(Trajectory {
        system: system.clone(),
        initial,
        dense,
        tol,
    })
}

/// `exp_x(t v)`: position after flowing for time `t >= 0` (unwrapped).
pub fn exp_map(
    system: &Arc<ThermostatSystem>,
    x: [f64; 2],
    theta: f64,
    t: f64,
    tol: f64,
) -> Result<[f64; 2], OdeError> {
    if t == 0.0 {
        return Ok(x);
    }
    let traj = evolve(system, PhaseState::new(x[0], x[1], theta), t, tol)?;
    Ok(traj.state_at(t).x)
}

/// Exponential of a general tangent vector `w` (Euclidean components):
/// flow from direction `w/|w|_g` for time `|w|_g`.
pub fn exp_vector(
    system: &Arc<ThermostatSystem>,
    x: [f64; 2],
    w: [f64; 2],
    tol: f64,
) -> Result<[f64; 2], OdeError> {
    let rho = system.metric().norm(x, w);
    if rho == 0.0 {
        return Ok(x);
    }
    let theta = w[1].atan2(w[0]);
    exp_map(system, x, theta, rho, tol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::FieldTerm;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    pub(crate) fn flat_system(f: f64, e: [f64; 2]) -> Arc<ThermostatSystem> {
        Arc::new(ThermostatSystem::new(
            ConformalMetric::flat(),
            SpectralScalarField::constant(f),
            SpectralVectorField::constant(e),
        ))
    }

    fn curvy_system() -> Arc<ThermostatSystem> {
        let phi = SpectralScalarField::from_terms(&[
            FieldTerm {
                k1: 1,
                k2: 0,
                amplitude: 0.2,
                phase: 0.0,
            },
            FieldTerm {
                k1: 0,
                k2: 2,
                amplitude: 0.1,
                phase: 0.7,
            },
        ]);
        let f = SpectralScalarField::from_terms(&[FieldTerm {
            k1: 1,
            k2: 1,
            amplitude: 0.3,
            phase: 0.2,
        }]);
        let e1 = SpectralScalarField::from_terms(&[FieldTerm {
            k1: 0,
            k2: 1,
            amplitude: 0.5,
            phase: 0.0,
        }]);
        let e2 = SpectralScalarField::from_terms(&[FieldTerm {
            k1: 2,
            k2: 0,
            amplitude: 0.4,
            phase: 1.0,
        }]);
        Arc::new(ThermostatSystem::new(
            ConformalMetric::new(phi),
            f,
            SpectralVectorField::new(e1, e2),
        ))
    }

    #[test]
    fn lambda_closed_forms() {
        let geo = flat_system(0.0, [0.0, 0.0]);
        assert_eq!(geo.lambda(&PhaseState::new(0.3, 0.4, 1.0)), 0.0);
        let mag = flat_system(2.5, [0.0, 0.0]);
        assert_eq!(mag.lambda(&PhaseState::new(0.3, 0.4, 1.0)), 2.5);
        let pure = flat_system(0.0, [0.0, 1.0]);
        assert_abs_diff_eq!(pure.lambda(&PhaseState::new(0.0, 0.0, 0.0)), 1.0);
    }

    #[test]
    fn fiber_derivatives() {
        let geo = flat_system(0.0, [0.0, 0.0]);
        let st = PhaseState::new(0.1, 0.2, 0.5);
        assert_eq!(geo.v_lambda(&st), 0.0);
        assert_eq!(geo.v2_lambda(&st), 0.0);
        let pure = flat_system(0.0, [0.0, 1.0]);
        let st0 = PhaseState::new(0.0, 0.0, 0.0);
        assert_abs_diff_eq!(pure.v_lambda(&st0), 0.0);
        assert_abs_diff_eq!(pure.v2_lambda(&st0), -1.0);
        // id-1 for pure thermostats: lambda^2 = -lambda V^2(lambda).
        let sys = curvy_system();
        let pure_sys = Arc::new(ThermostatSystem::new(
            sys.metric().clone(),
            SpectralScalarField::zero(),
            sys.e().clone(),
        ));
        for k in 0..20 {
            let st = PhaseState::new(0.3 * k as f64, 0.17 * k as f64, 0.41 * k as f64);
            let lam = pure_sys.lambda(&st);
            assert_abs_diff_eq!(
                lam * lam,
                -lam * pure_sys.v2_lambda(&st),
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn fiber_derivatives_match_theta_differentiation() {
        let sys = curvy_system();
        let h = 1e-5;
        for k in 0..10 {
            let x = [0.5 * k as f64, 1.1 - 0.2 * k as f64];
            let th = 0.37 * k as f64;
            let lam = |theta: f64| sys.lambda(&PhaseState { x, theta });
            let fd1 = (lam(th + h) - lam(th - h)) / (2.0 * h);
            let fd2 = (lam(th + h) - 2.0 * lam(th) + lam(th - h)) / (h * h);
            assert_abs_diff_eq!(sys.v_lambda(&PhaseState { x, theta: th }), fd1, epsilon = 1e-8);
            assert_abs_diff_eq!(sys.v2_lambda(&PhaseState { x, theta: th }), fd2, epsilon = 1e-4);
        }
    }

    #[test]
    fn id2_pure_thermostat() {
        // phi = 0, f = 0, e = (sin x1, 0): H(lambda) - X(V(lambda)) = cos x1.
        let e1 = SpectralScalarField::from_terms(&[FieldTerm {
            k1: 1,
            k2: 0,
            amplitude: 1.0,
            phase: -PI / 2.0,
        }]);
        let sys = Arc::new(ThermostatSystem::new(
            ConformalMetric::flat(),
            SpectralScalarField::zero(),
            SpectralVectorField::new(e1, SpectralScalarField::zero()),
        ));
        for k in 0..12 {
            let st = PhaseState::new(0.5 * k as f64, 0.3 * k as f64, 0.7 * k as f64);
            assert_abs_diff_eq!(
                sys.h_lambda(&st) - sys.x_vlambda(&st),
                st.x[0].cos(),
                epsilon = 1e-12
            );
        }
        // Constant e: both derivatives vanish on the flat torus.
        let sys = flat_system(0.0, [0.7, -0.3]);
        let st = PhaseState::new(1.0, 2.0, 0.9);
        assert_eq!(sys.h_lambda(&st), 0.0);
        assert_eq!(sys.x_vlambda(&st), 0.0);
    }

    #[test]
    fn id2_general_metric() {
        // H(lambda) - X(V(lambda)) = div_g e for pure thermostats, any phi.
        let sys = curvy_system();
        let pure = Arc::new(ThermostatSystem::new(
            sys.metric().clone(),
            SpectralScalarField::zero(),
            sys.e().clone(),
        ));
        for k in 0..12 {
            let st = PhaseState::new(0.45 * k as f64, 0.23 * k as f64, 0.9 * k as f64);
            let dive = pure.metric().divergence(pure.e(), st.x);
            assert_abs_diff_eq!(
                pure.h_lambda(&st) - pure.x_vlambda(&st),
                dive,
                epsilon = 1e-11
            );
        }
    }

    #[test]
    fn flat_geodesic_is_straight_line() {
        let sys = flat_system(0.0, [0.0, 0.0]);
        let traj = evolve(&sys, PhaseState::new(0.0, 0.0, 0.0), 1.0, 1e-10).unwrap();
        let end = traj.state_at(1.0);
        assert_abs_diff_eq!(end.x[0], 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(end.x[1], 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(end.theta, 0.0, epsilon = 1e-9);
    }

    #[test]
    fn magnetic_circle() {
        let sys = flat_system(1.0, [0.0, 0.0]);
        let traj = evolve(&sys, PhaseState::new(0.0, 0.0, 0.0), PI / 2.0, 1e-11).unwrap();
        let end = traj.state_at(PI / 2.0);
        assert_abs_diff_eq!(end.x[0], 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(end.x[1], 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(end.theta, PI / 2.0, epsilon = 1e-9);
    }

    #[test]
    fn tanh_heading_closed_form() {
        // phi = 0, f = 0, e = (0, c): theta' = c cos theta, sin theta = tanh(ct).
        let c = 0.8;
        let sys = flat_system(0.0, [0.0, c]);
        let traj = evolve(&sys, PhaseState::new(0.0, 0.0, 0.0), 5.0, 1e-11).unwrap();
        for i in 1..=10 {
            let t = 0.5 * i as f64;
            let st = traj.state_at(t);
            assert_abs_diff_eq!(st.theta.sin(), (c * t).tanh(), epsilon = 1e-9);
        }
    }

    #[test]
    fn unit_speed_and_equation_residuals() {
        let sys = curvy_system();
        let traj = evolve(&sys, PhaseState::new(0.2, 1.3, 0.7), 10.0, 1e-10).unwrap();
        for i in 1..20 {
            let t = 0.5 * i as f64;
            assert!(traj.unit_speed_residual(t) < 1e-7, "t = {t}");
            assert!(traj.equation_residual(t) < 1e-5, "t = {t}");
        }
    }

    #[test]
    fn pure_thermostat_reversibility() {
        let sys = curvy_system();
        let pure = Arc::new(ThermostatSystem::new(
            sys.metric().clone(),
            SpectralScalarField::zero(),
            sys.e().clone(),
        ));
        let start = PhaseState::new(0.4, 2.1, 1.2);
        let t = 3.0;
        let fwd = evolve(&pure, start, t, 1e-11).unwrap();
        let flipped_end = fwd.state_at(t).flipped();
        let back = evolve(&pure, flipped_end, t, 1e-11).unwrap();
        let round = back.state_at(t).flipped();
        assert_abs_diff_eq!(round.x[0], start.x[0], epsilon = 1e-8);
        assert_abs_diff_eq!(round.x[1], start.x[1], epsilon = 1e-8);
        let dth = (round.theta - start.theta).rem_euclid(TAU);
        assert!(dth.min(TAU - dth) < 1e-8);
    }

    #[test]
    fn h_lambda_matches_horizontal_flow_derivative() {
        // The flow of H is R^{-1} o g_t o R with R(x, v) = (x, iv).
        let sys = curvy_system();
        let geo = Arc::new(ThermostatSystem::geodesic(sys.metric().clone()));
        let h = 1e-3;
        for k in 0..6 {
            let st = PhaseState::new(0.7 * k as f64, 0.4 + 0.3 * k as f64, 0.5 * k as f64);
            let rotated = PhaseState::new(st.x[0], st.x[1], st.theta + PI / 2.0);
            let lam_along = |tt: f64| -> f64 {
                let s = if tt >= 0.0 {
                    evolve(&geo, rotated, tt, 1e-12).unwrap().state_at(tt)
                } else {
                    evolve(&geo, rotated.flipped(), -tt, 1e-12)
                        .unwrap()
                        .state_at(-tt)
                        .flipped()
                };
                sys.lambda(&PhaseState::new(s.x[0], s.x[1], s.theta - PI / 2.0))
            };
            let fd = (lam_along(h) - lam_along(-h)) / (2.0 * h);
            assert_abs_diff_eq!(sys.h_lambda(&st), fd, epsilon = 1e-5);
        }
    }

    #[test]
    fn exp_map_examples() {
        let sys = flat_system(0.0, [0.0, 0.0]);
        assert_eq!(exp_map(&sys, [0.3, 0.4], 1.0, 0.0, 1e-9).unwrap(), [0.3, 0.4]);
        let p = exp_map(&sys, [0.0, 0.0], 0.0, PI, 1e-10).unwrap();
        assert_abs_diff_eq!(p[0], PI, epsilon = 1e-9);
        assert_abs_diff_eq!(p[1], 0.0, epsilon = 1e-9);
        let mag = flat_system(1.0, [0.0, 0.0]);
        let p = exp_map(&mag, [0.0, 0.0], 0.0, 2.0 * PI, 1e-11).unwrap();
        // Distance to the period lattice (rem_euclid alone can return
        // values just under 2 pi for a point slightly below a lattice
        // line).
        let lattice_dist = |c: f64| {
            let d = c.rem_euclid(TAU);
            d.min(TAU - d)
        };
        assert_abs_diff_eq!(lattice_dist(p[0]), 0.0, epsilon = 1e-8);
        assert_abs_diff_eq!(lattice_dist(p[1]), 0.0, epsilon = 1e-8);
    }
}
