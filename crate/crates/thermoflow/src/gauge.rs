//! Gauge normalization: a conformal change `g1 = e^{-2U} g` with
//! `e1 = e^{2U}(e + grad_g U)` that makes the external field
//! divergence-free with respect to the new metric.
//!
//! The normalizing potential solves `Delta_g U = -div_g e`, which in the
//! flat chart reads exactly `Delta U = -div(e^{2 phi} e)`: one spectral
//! Poisson solve after projecting `e^{2 phi} e` onto a widened band. The
//! identity `e^{2 phi_1} e1 = e^{2 phi} e + grad U` with `phi_1 = phi - U`
//! then makes `div_{g1} e1 = 0` exact up to the projection error, which is
//! reported as `aliasing_residual`.

use serde::Serialize;
use std::sync::Arc;
use thiserror::Error;

use crate::dynamics::{evolve, PhaseState, ThermostatSystem, Trajectory};
use crate::fields::{ConformalMetric, SpectralScalarField, SpectralVectorField};
use crate::jacobi::{conjugate_scan, ConjugateReport, JacobiError};
use crate::ode::{self, DenseSolution, OdeError};

#[derive(Debug, Error)]
pub enum GaugeError {
    #[error(transparent)]
    Ode(#[from] OdeError),
    #[error(transparent)]
    Jacobi(#[from] JacobiError),
}

/// Result of the gauge normalization of a thermostat triple.
pub struct GaugeTransform {
    /// Zero-mean potential `U`.
    pub u: SpectralScalarField,
    pub source: Arc<ThermostatSystem>,
    /// System `(e^{2(phi - U)} delta, e^U f, e^{2U}(e + grad_g U))`.
    pub transformed: Arc<ThermostatSystem>,
    /// Sup over a verification grid of `Delta U + div(e^{2 phi} e)`.
    pub poisson_residual: f64,
    /// Sup over a verification grid of the pointwise error committed by
    /// projecting `e^U f` and `e^{2U}(e + grad_g U)` onto the widened band.
    pub aliasing_residual: f64,
    /// Sup over a verification grid of `div_{g1} e1` on the transformed
    /// system (certified directly, not inferred from the Poisson solve).
    pub divergence_residual: f64,
}

/// Band used for projections of the non-band-limited transformed data:
/// start at four times the source bandwidth and double until the measured
/// projection error of `e^{2 phi} e` on an offset grid drops below 1e-12
/// (the exponential factors are entire, so coefficients decay
/// super-geometrically and the loop terminates quickly).
fn widened_band(system: &ThermostatSystem, probe: &impl Fn([f64; 2]) -> f64) -> usize {
    let b = system
        .metric()
        .phi()
        .band()
        .max(system.f().band())
        .max(system.e().band());
    let mut band = (4 * b).max(8);
    const CAP: usize = 64;
    loop {
        let proj = SpectralScalarField::from_fn(band, probe);
        let m = 48;
        let step = std::f64::consts::TAU / m as f64;
        let mut err = 0.0f64;
        for j1 in 0..m {
            for j2 in 0..m {
                let x = [(j1 as f64 + 0.37) * step, (j2 as f64 + 0.61) * step];
                err = err.max((proj.eval(x) - probe(x)).abs());
            }
        }
        if err < 1e-12 || band >= CAP {
            return band;
        }
        band *= 2;
    }
}

pub fn solve_gauge(system: &Arc<ThermostatSystem>) -> GaugeTransform {
    let phi = system.metric().phi();
    let band = widened_band(system, &|x| {
        (2.0 * phi.eval(x)).exp() * (system.e().eval(x)[0] + system.e().eval(x)[1])
    });

    // rho = e^{2 phi} e, projected; its flat divergence and the Poisson
    // solve are then exact in frequency space.
    let rho1 = SpectralScalarField::from_fn(band, |x| {
        (2.0 * phi.eval(x)).exp() * system.e().eval(x)[0]
    });
    let rho2 = SpectralScalarField::from_fn(band, |x| {
        (2.0 * phi.eval(x)).exp() * system.e().eval(x)[1]
    });
    let rho = SpectralVectorField::new(rho1, rho2);
    let u = rho.euclidean_divergence().scale(-1.0).solve_poisson();

    let u1 = u.partial(0);
    let u2 = u.partial(1);

    // Exact pointwise values of the transformed data.
    let f1_exact = |x: [f64; 2]| u.eval(x).exp() * system.f().eval(x);
    let e1_exact = |x: [f64; 2], axis: usize| {
        let s = (2.0 * (u.eval(x) - phi.eval(x))).exp();
        let ev = system.e().eval(x)[axis];
        let du = if axis == 0 { u1.eval(x) } else { u2.eval(x) };
        // e^{2U} (e + e^{-2 phi} grad U)
        (2.0 * u.eval(x)).exp() * ev + s * du
    };

    let phi1 = phi.sub(&u);
    let f1 = SpectralScalarField::from_fn(band, f1_exact);
    let e1 = SpectralVectorField::new(
        SpectralScalarField::from_fn(band, |x| e1_exact(x, 0)),
        SpectralScalarField::from_fn(band, |x| e1_exact(x, 1)),
    );

    // Verification grid: offset from the projection grid so aliasing that
    // happens to vanish on grid points is still seen.
    let m = 2 * band + 9;
    let step = std::f64::consts::TAU / m as f64;
    let lap_u = u.laplacian();
    let div_e_field = system.e().euclidean_divergence();
    let mut poisson_residual = 0.0f64;
    let mut aliasing_residual = 0.0f64;
    for j1 in 0..m {
        for j2 in 0..m {
            let x = [(j1 as f64 + 0.31) * step, (j2 as f64 + 0.71) * step];
            // div(e^{2 phi} e) evaluated exactly from the source fields:
            // e^{2 phi} (div e + 2 <grad phi, e>).
            let ev = system.e().eval(x);
            let gp = system.metric().grad_phi_at(x);
            let div_e = div_e_field.eval(x);
            let div_rho = (2.0 * phi.eval(x)).exp() * (div_e + 2.0 * (gp[0] * ev[0] + gp[1] * ev[1]));
            poisson_residual = poisson_residual.max((lap_u.eval(x) + div_rho).abs());
            let e1v = e1.eval(x);
            aliasing_residual = aliasing_residual
                .max((f1.eval(x) - f1_exact(x)).abs())
                .max((e1v[0] - e1_exact(x, 0)).abs())
                .max((e1v[1] - e1_exact(x, 1)).abs());
        }
    }

    let transformed = Arc::new(ThermostatSystem::new(ConformalMetric::new(phi1), f1, e1));
    let mut divergence_residual = 0.0f64;
    for j1 in 0..m {
        for j2 in 0..m {
            let x = [(j1 as f64 + 0.31) * step, (j2 as f64 + 0.71) * step];
            divergence_residual = divergence_residual
                .max(transformed.metric().divergence(transformed.e(), x).abs());
        }
    }
    GaugeTransform {
        u,
        source: system.clone(),
        transformed,
        poisson_residual,
        aliasing_residual,
        divergence_residual,
    }
}

/// Monotone reparametrization `s(t) = int_0^t e^{-U(gamma(tau))} d tau`
/// relating the source-time trajectory to unit speed in the transformed
/// metric.
pub struct TimeChange {
    dense: DenseSolution,
}

impl TimeChange {
    pub fn s_of_t(&self, t: f64) -> f64 {
        self.dense.eval(t)[0]
    }

    pub fn s_end(&self) -> f64 {
        self.dense.y_end()[0]
    }

    /// Inverse map by bisection (the integrand is strictly positive).
    pub fn t_of_s(&self, s: f64) -> f64 {
        let (mut lo, mut hi) = (self.dense.t_start(), self.dense.t_end());
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.s_of_t(mid) < s {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-14 * (1.0 + hi.abs()) {
                break;
            }
        }
        0.5 * (lo + hi)
    }
}

pub fn time_change(u: &SpectralScalarField, traj: &Trajectory) -> Result<TimeChange, GaugeError> {
    let dense = ode::integrate(
        |t, _y, dy| {
            let st = traj.state_at(t);
            dy[0] = (-u.eval(st.x)).exp();
        },
        0.0,
        vec![0.0],
        traj.t_end(),
        traj.tol(),
    )?;
    Ok(TimeChange { dense })
}

/// Conjugate-point correspondence between a system and its gauge
/// normalization along the trajectories from one initial condition.
#[derive(Debug, Clone, Serialize)]
pub struct CorrespondenceReport {
    pub initial: [f64; 3],
    pub source: ConjugateReport,
    pub transformed: ConjugateReport,
    /// `|s(t*_source) - t*_transformed|`, when both scans found one.
    pub time_mismatch: Option<f64>,
    /// Both found a conjugate point at corresponding times, or neither did.
    pub consistent: bool,
}

pub fn conjugacy_correspondence(
    transform: &GaugeTransform,
    initial: PhaseState,
    horizon: f64,
    tol: f64,
    match_tol: f64,
) -> Result<CorrespondenceReport, GaugeError> {
    let src_traj = evolve(&transform.source, initial, horizon, tol)?;
    let tc = time_change(&transform.u, &src_traj)?;
    let s_horizon = tc.s_end();
    let src = conjugate_scan(&transform.source, initial, horizon, tol)?;
    let dst = conjugate_scan(&transform.transformed, initial, s_horizon, tol)?;
    let (time_mismatch, consistent) = match (src.first_conjugate_time, dst.first_conjugate_time) {
        (Some(t1), Some(t2)) => {
            let d = (tc.s_of_t(t1) - t2).abs();
            (Some(d), d <= match_tol)
        }
        (None, None) => (None, true),
        // A conjugate time near the horizon may fall just outside the
        // other scan's window; treat that as consistent.
        (Some(t1), None) => (None, tc.s_of_t(t1) > s_horizon - match_tol),
        (None, Some(t2)) => (None, t2 > s_horizon - match_tol),
    };
    Ok(CorrespondenceReport {
        initial: [initial.x[0], initial.x[1], initial.theta],
        source: src,
        transformed: dst,
        time_mismatch,
        consistent,
    })
}
