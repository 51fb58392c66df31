//! Liouville-measure quadrature on the unit circle bundle and the
//! integral-identity / rigidity suite.
//!
//! The measure is `d mu = e^{2 phi} dx1 dx2 dtheta`. Identities that only
//! involve the field data are evaluated on the full product grid (spectral
//! accuracy); identities involving the bounded Riccati solution `r` are
//! estimated by Monte Carlo over seeded random nodes, since each `r` value
//! costs a Hopf-limit construction, and come with standard errors.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use std::f64::consts::TAU;
use std::sync::Arc;

use crate::dynamics::{evolve, PhaseState, ThermostatSystem};
use crate::fields::ConformalMetric;
use crate::gauge::{solve_gauge, GaugeTransform};
use crate::hopf::{hopf_limit, BSchedule, HopfError};
use crate::ode;

/// Product quadrature on `T^2 x S^1` with weights realizing the Liouville
/// measure `e^{2 phi(x)} (2 pi / n_x)^2 (2 pi / n_theta)`.
pub struct PhaseQuadrature {
    pub n_x: usize,
    pub n_theta: usize,
    x_nodes: Vec<[f64; 2]>,
    /// `e^{2 phi(x)} (2 pi / n_x)^2` per base node.
    x_weights: Vec<f64>,
    theta_nodes: Vec<f64>,
    theta_weight: f64,
}

impl PhaseQuadrature {
    pub fn new(metric: &ConformalMetric, n_x: usize, n_theta: usize) -> Self {
        assert!(n_x > 0 && n_theta > 0);
        let hx = TAU / n_x as f64;
        let mut x_nodes = Vec::with_capacity(n_x * n_x);
        let mut x_weights = Vec::with_capacity(n_x * n_x);
        for j1 in 0..n_x {
            for j2 in 0..n_x {
                let x = [j1 as f64 * hx, j2 as f64 * hx];
                x_nodes.push(x);
                x_weights.push((2.0 * metric.phi_at(x)).exp() * hx * hx);
            }
        }
        let ht = TAU / n_theta as f64;
        let theta_nodes = (0..n_theta).map(|j| j as f64 * ht).collect();
        PhaseQuadrature {
            n_x,
            n_theta,
            x_nodes,
            x_weights,
            theta_nodes,
            theta_weight: ht,
        }
    }

    pub fn total_measure(&self) -> f64 {
        let base: f64 = self.x_weights.iter().sum();
        base * self.theta_weight * self.n_theta as f64
    }

    /// Weighted sum over the product grid. Base nodes are processed in
    /// parallel; partial sums are reduced in fixed index order, so the
    /// result is deterministic.
    pub fn integrate<G>(&self, g: G) -> f64
    where
        G: Fn(&[f64; 2], f64) -> f64 + Sync,
    {
        let partials: Vec<f64> = (0..self.x_nodes.len())
            .into_par_iter()
            .map(|i| {
                let x = &self.x_nodes[i];
                let mut acc = 0.0;
                for &th in &self.theta_nodes {
                    acc += g(x, th);
                }
                acc * self.x_weights[i] * self.theta_weight
            })
            .collect();
        partials.iter().sum()
    }
}

/// `int integrand d mu` over the unit circle bundle.
pub fn liouville_integral<G>(system: &ThermostatSystem, integrand: G, quad: &PhaseQuadrature) -> f64
where
    G: Fn(&PhaseState) -> f64 + Sync,
{
    let _ = system;
    quad.integrate(|x, th| integrand(&PhaseState::new(x[0], x[1], th)))
}

/// One exact integral identity: both sides and their difference.
#[derive(Debug, Clone, Serialize)]
pub struct IdentityCheck {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub difference: f64,
}

impl IdentityCheck {
    fn new(name: &str, lhs: f64, rhs: f64) -> Self {
        IdentityCheck {
            name: name.to_string(),
            lhs,
            rhs,
            difference: lhs - rhs,
        }
    }
}

/// A Monte Carlo identity estimate with a standard error.
#[derive(Debug, Clone, Serialize)]
pub struct SampledIdentityCheck {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub difference: f64,
    /// Standard error of the difference estimate.
    pub std_error: f64,
    pub nodes_used: usize,
    pub nodes_failed: usize,
}

/// Parameters for the sampled (r-dependent) identities.
#[derive(Debug, Clone, Copy)]
pub struct RSampling {
    pub n_samples: usize,
    pub seed: u64,
    /// Riccati-profile convergence tolerance.
    pub tol: f64,
    /// Integrator tolerance for node trajectories.
    pub traj_tol: f64,
}

impl Default for RSampling {
    fn default() -> Self {
        RSampling {
            n_samples: 256,
            seed: 7,
            tol: 1e-5,
            traj_tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct IdentitySuite {
    pub pure_checks: Vec<IdentityCheck>,
    pub sampled_checks: Vec<SampledIdentityCheck>,
    pub n_x: usize,
    pub n_theta: usize,
}

impl IdentitySuite {
    pub fn max_pure_error(&self) -> f64 {
        self.pure_checks
            .iter()
            .map(|c| c.difference.abs())
            .fold(0.0, f64::max)
    }
}

/// Evaluate the integral identities of the rigidity argument.
///
/// The five r-free identities use the full grid. If `sampling` is given,
/// the two r-identities — `int F(r) = -int r V(lambda)` and the integrated
/// Riccati identity `int (r - V(lambda))^2 = int ([V(lambda)]^2 -
/// lambda^2)` — are estimated on random nodes, each requiring a Hopf
/// limit; nodes whose limit fails to converge are excluded and counted.
pub fn identity_suite(
    system: &Arc<ThermostatSystem>,
    quad: &PhaseQuadrature,
    sampling: Option<RSampling>,
) -> IdentitySuite {
    let data = |x: &[f64; 2]| system.point_data(*x);
    let pure_checks = vec![
        IdentityCheck::new(
            "int H(lambda) d mu = 0",
            quad.integrate(|x, th| crate::dynamics::h_lambda_from(&data(x), th)),
            0.0,
        ),
        IdentityCheck::new(
            "int V(lambda) d mu = 0",
            quad.integrate(|x, th| crate::dynamics::v_lambda_from(&data(x), th)),
            0.0,
        ),
        IdentityCheck::new(
            "int K d mu = 0 (Gauss-Bonnet)",
            quad.integrate(|x, _| {
                let d = data(x);
                -(-2.0 * d.phi).exp() * d.lap_phi
            }),
            0.0,
        ),
        IdentityCheck::new(
            "int f V(theta_x(v)) d mu = 0",
            quad.integrate(|x, th| {
                let d = data(x);
                d.f * (crate::dynamics::lambda_from(&d, th) - d.f)
            }),
            0.0,
        ),
        IdentityCheck::new(
            "int [V(lambda)]^2 d mu = -int lambda V^2(lambda) d mu",
            quad.integrate(|x, th| {
                let d = data(x);
                let v = crate::dynamics::v_lambda_from(&d, th);
                v * v
            }),
            quad.integrate(|x, th| {
                let d = data(x);
                let lam = crate::dynamics::lambda_from(&d, th);
                // V^2(lambda) = -(lambda - f) exactly for this class.
                lam * (lam - d.f)
            }),
        ),
    ];

    let mut sampled_checks = Vec::new();
    if let Some(opts) = sampling {
        let rhs_integrated = {
            let a = quad.integrate(|x, th| {
                let d = data(x);
                let v = crate::dynamics::v_lambda_from(&d, th);
                let lam = crate::dynamics::lambda_from(&d, th);
                v * v - lam * lam
            });
            a
        };
        sampled_checks = sampled_identities(system, opts, rhs_integrated);
    }
    IdentitySuite {
        pure_checks,
        sampled_checks,
        n_x: quad.n_x,
        n_theta: quad.n_theta,
    }
}

/// Per-node quantities entering the r-identities.
struct NodeSample {
    /// `e^{2 phi}` importance weight at the node.
    weight: f64,
    r: f64,
    /// `F(r) = dr/dt` along the flow, by central difference on the profile.
    fr: f64,
    v_lambda: f64,
}

fn sample_node(
    system: &Arc<ThermostatSystem>,
    node: PhaseState,
    opts: &RSampling,
) -> Result<NodeSample, HopfError> {
    const LEAD: f64 = 10.0;
    const SPAN: f64 = 80.0;
    // Place the node at t = LEAD of its trajectory so the profile window
    // is centered there: integrate the flow backward first.
    let sys = system.clone();
    let back = ode::integrate(
        move |_t, y, dy| sys.flow_rhs(y, dy),
        0.0,
        vec![node.x[0], node.x[1], node.theta],
        -LEAD,
        opts.traj_tol,
    )?;
    let y0 = back.y_end();
    let init = PhaseState::new(y0[0], y0[1], y0[2]);
    let traj = evolve(system, init, SPAN, opts.traj_tol)?;
    let schedule = BSchedule {
        b0: 8.0,
        b_max: 64.0,
    };
    let profile = hopf_limit(&traj, LEAD, schedule, opts.tol)?;
    let idx = profile
        .times
        .iter()
        .enumerate()
        .min_by(|(_, u), (_, v)| (*u - LEAD).abs().partial_cmp(&(*v - LEAD).abs()).unwrap())
        .map(|(i, _)| i)
        .unwrap();
    if !(profile.mask[idx.saturating_sub(1)] && profile.mask[idx] && profile.mask[idx + 1]) {
        // Masked denominator at the node: no usable r value.
        return Err(HopfError::NonConvergence {
            history: profile.history.clone(),
            last_delta: f64::NAN,
        });
    }
    let dt = profile.times[idx + 1] - profile.times[idx - 1];
    let fr = (profile.r[idx + 1] - profile.r[idx - 1]) / dt;
    let d = system.point_data(node.x);
    Ok(NodeSample {
        weight: (2.0 * d.phi).exp(),
        r: profile.r[idx],
        fr,
        v_lambda: crate::dynamics::v_lambda_from(&d, node.theta),
    })
}

fn sampled_identities(
    system: &Arc<ThermostatSystem>,
    opts: RSampling,
    rhs_integrated: f64,
) -> Vec<SampledIdentityCheck> {
    // Draw all nodes up front so the sample set is independent of the
    // parallel execution order.
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let nodes: Vec<PhaseState> = (0..opts.n_samples)
        .map(|_| {
            PhaseState::new(
                rng.gen::<f64>() * TAU,
                rng.gen::<f64>() * TAU,
                rng.gen::<f64>() * TAU,
            )
        })
        .collect();
    let results: Vec<Option<NodeSample>> = nodes
        .par_iter()
        .map(|node| sample_node(system, *node, &opts).ok())
        .collect();
    let samples: Vec<&NodeSample> = results.iter().flatten().collect();
    let nodes_failed = results.len() - samples.len();
    let n = samples.len();

    // Monte Carlo estimate of `int g d mu` from uniform nodes:
    // (2 pi)^3 * mean(g * e^{2 phi}); the standard error is over the same
    // weighted values.
    let vol = TAU.powi(3);
    let estimate = |g: &dyn Fn(&NodeSample) -> f64| -> (f64, f64) {
        if n == 0 {
            return (f64::NAN, f64::NAN);
        }
        let vals: Vec<f64> = samples.iter().map(|s| g(s) * s.weight).collect();
        let mean: f64 = vals.iter().sum::<f64>() / n as f64;
        let var: f64 = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
            / (n.max(2) - 1) as f64;
        (vol * mean, vol * (var / n as f64).sqrt())
    };

    let (lhs_fr, se_fr) = estimate(&|s| s.fr);
    let (rhs_fr, se_rv) = estimate(&|s| -s.r * s.v_lambda);
    let (lhs_int, se_int) = estimate(&|s| (s.r - s.v_lambda) * (s.r - s.v_lambda));
    vec![
        SampledIdentityCheck {
            name: "int F(r) d mu = -int r V(lambda) d mu".to_string(),
            lhs: lhs_fr,
            rhs: rhs_fr,
            difference: lhs_fr - rhs_fr,
            std_error: (se_fr * se_fr + se_rv * se_rv).sqrt(),
            nodes_used: n,
            nodes_failed,
        },
        SampledIdentityCheck {
            name: "int (r - V(lambda))^2 d mu = int ([V(lambda)]^2 - lambda^2) d mu".to_string(),
            lhs: lhs_int,
            rhs: rhs_integrated,
            difference: lhs_int - rhs_integrated,
            std_error: se_int,
            nodes_used: n,
            nodes_failed,
        },
    ]
}

/// Verdict thresholds for the rigidity report.
pub const RIGIDITY_THRESHOLD: f64 = 1e-8;

/// Numerical check of the conclusions of the rigidity theorem on one
/// system: after gauge normalization, a conjugate-point-free thermostat
/// must have `f = 0`, a divergence-free normalized field, a flat
/// normalized metric, and `K = div e` on the normalized system.
#[derive(Debug, Serialize)]
pub struct RigidityReport {
    pub integrals: Vec<IdentityCheck>,
    pub f_norm: f64,
    /// Variation (sup - inf) of the normalized conformal factor `phi_1`.
    pub flatness_residual: f64,
    /// Sup of `div_{g1} e1` on the verification grid.
    pub divergence_residual: f64,
    /// Sup of `K - div e` on the normalized system.
    pub k_minus_div_residual: f64,
    pub threshold: f64,
    pub rigid_compatible: bool,
}

pub fn rigidity_report(
    system: &Arc<ThermostatSystem>,
    quad: &PhaseQuadrature,
) -> (RigidityReport, GaugeTransform) {
    let suite = identity_suite(system, quad, None);
    let gt = solve_gauge(system);
    let f_norm = system.f().sup_norm();
    let flatness_residual = gt.transformed.metric().phi().variation();
    let divergence_residual = gt.divergence_residual;

    // K = div e on the normalized system, checked pointwise.
    let m = 48;
    let step = TAU / m as f64;
    let mut k_minus_div = 0.0f64;
    let tsys = &gt.transformed;
    for j1 in 0..m {
        for j2 in 0..m {
            let x = [(j1 as f64 + 0.5) * step, (j2 as f64 + 0.5) * step];
            let k = tsys.gauss_curvature(x);
            let div = tsys.metric().divergence(tsys.e(), x);
            k_minus_div = k_minus_div.max((k - div).abs());
        }
    }
    let rigid_compatible = f_norm < RIGIDITY_THRESHOLD
        && flatness_residual < RIGIDITY_THRESHOLD
        && divergence_residual < RIGIDITY_THRESHOLD;
    (
        RigidityReport {
            integrals: suite.pure_checks,
            f_norm,
            flatness_residual,
            divergence_residual,
            k_minus_div_residual: k_minus_div,
            threshold: RIGIDITY_THRESHOLD,
            rigid_compatible,
        },
        gt,
    )
}
