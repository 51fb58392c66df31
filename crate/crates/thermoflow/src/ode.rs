//! Adaptive Dormand-Prince 5(4) integration with continuous (dense) output.
//!
//! The stepper is deliberately small: all systems in this crate are low
//! dimensional (3 for the flow, 5-6 with Jacobi data attached), so state
//! vectors are plain `Vec<f64>` and the driver is a straight loop. Dense
//! output uses the standard fourth-order continuous extension.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum OdeError {
    #[error("step size underflow at t = {t} (last valid state kept)")]
    StepUnderflow { t: f64 },
    #[error("tolerance not met within {max_steps} steps (reached t = {t})")]
    MaxSteps { t: f64, max_steps: usize },
}

// Dormand-Prince coefficients.
const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
// b - b_hat (error weights of the embedded 4th order solution).
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];
// Dense output weights.
const D: [f64; 7] = [
    -12715105075.0 / 11282082432.0,
    0.0,
    87487479700.0 / 32700410799.0,
    -10690763975.0 / 1880347072.0,
    701980252875.0 / 199316789632.0,
    -1453857185.0 / 822651844.0,
    69997945.0 / 29380423.0,
];

/// Continuous representation of one accepted step on `[t0, t0 + h]`
/// (`h` may be negative for backward integration).
#[derive(Debug, Clone)]
pub struct DenseStep {
    pub t0: f64,
    pub h: f64,
    /// Per-component interpolation coefficients `[c1..c5]`.
    cont: Vec<[f64; 5]>,
}

impl DenseStep {
    pub fn t1(&self) -> f64 {
        self.t0 + self.h
    }

    pub fn eval_into(&self, t: f64, out: &mut [f64]) {
        let theta = (t - self.t0) / self.h;
        let th1 = 1.0 - theta;
        for (o, c) in out.iter_mut().zip(&self.cont) {
            *o = c[0] + theta * (c[1] + th1 * (c[2] + theta * (c[3] + th1 * c[4])));
        }
    }

    pub fn eval(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.cont.len()];
        self.eval_into(t, &mut out);
        out
    }

    pub fn dim(&self) -> usize {
        self.cont.len()
    }
}

/// A dense solution: the chain of accepted steps of one integration.
#[derive(Debug, Clone)]
pub struct DenseSolution {
    steps: Vec<DenseStep>,
    t0: f64,
    t_end: f64,
    y_end: Vec<f64>,
    forward: bool,
}

impl DenseSolution {
    pub fn t_start(&self) -> f64 {
        self.t0
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn y_end(&self) -> &[f64] {
        &self.y_end
    }

    pub fn steps(&self) -> &[DenseStep] {
        &self.steps
    }

    /// Times of the accepted steps, including both endpoints.
    pub fn sample_times(&self) -> Vec<f64> {
        let mut ts: Vec<f64> = self.steps.iter().map(|s| s.t0).collect();
        ts.push(self.t_end);
        ts
    }

    fn step_index(&self, t: f64) -> usize {
        // Binary search over monotone step starts.
        let n = self.steps.len();
        let (mut lo, mut hi) = (0usize, n);
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            let after = if self.forward {
                t >= self.steps[mid].t0
            } else {
                t <= self.steps[mid].t0
            };
            if after {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    }

    pub fn eval_into(&self, t: f64, out: &mut [f64]) {
        self.steps[self.step_index(t)].eval_into(t, out);
    }

    pub fn eval(&self, t: f64) -> Vec<f64> {
        self.steps[self.step_index(t)].eval(t)
    }
}

/// Low-level adaptive stepper. `f(t, y, dy)` writes the derivative.
pub struct Dopri5<F> {
    f: F,
    pub t: f64,
    pub y: Vec<f64>,
    h: f64,
    t_end: f64,
    rtol: f64,
    atol: f64,
    k1: Vec<f64>,
    dir: f64,
    pub n_steps: usize,
    pub n_rejected: usize,
}

const MAX_STEPS: usize = 10_000_000;

impl<F: FnMut(f64, &[f64], &mut [f64])> Dopri5<F> {
    pub fn new(mut f: F, t0: f64, y0: Vec<f64>, t_end: f64, rtol: f64, atol: f64) -> Self {
        let dir = if t_end >= t0 { 1.0 } else { -1.0 };
        let mut k1 = vec![0.0; y0.len()];
        f(t0, &y0, &mut k1);
        // Crude but serviceable initial step guess; the controller fixes it
        // within a couple of steps.
        let d0 = y0.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-5);
        let d1 = k1.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-5);
        let mut h0 = 0.01 * d0 / d1;
        let span = (t_end - t0).abs();
        if span > 0.0 {
            h0 = h0.min(span);
        }
        h0 = h0.max(1e-10);
        Dopri5 {
            f,
            t: t0,
            y: y0,
            h: dir * h0,
            t_end,
            rtol,
            atol,
            k1,
            dir,
            n_steps: 0,
            n_rejected: 0,
        }
    }

    pub fn done(&self) -> bool {
        (self.t_end - self.t) * self.dir <= 0.0
    }

    /// Rescale selected state components (and the cached FSAL derivative,
    /// which is linear in them). Valid only when the right-hand side is
    /// linear in exactly those components.
    pub fn scale_components(&mut self, range: std::ops::Range<usize>, factor: f64) {
        for i in range {
            self.y[i] *= factor;
            self.k1[i] *= factor;
        }
    }

    /// Advance by one accepted step; returns its dense representation.
    pub fn step(&mut self) -> Result<DenseStep, OdeError> {
        let n = self.y.len();
        let mut k = vec![vec![0.0; n]; 7];
        k[0].copy_from_slice(&self.k1);
        let mut y_stage = vec![0.0; n];
        let mut y_new = vec![0.0; n];
        loop {
            if self.n_steps + self.n_rejected > MAX_STEPS {
                return Err(OdeError::MaxSteps {
                    t: self.t,
                    max_steps: MAX_STEPS,
                });
            }
            let mut h = self.h;
            // Do not step past the end point.
            if (self.t + h - self.t_end) * self.dir > 0.0 {
                h = self.t_end - self.t;
            }
            if h.abs() < 1e-14 * (1.0 + self.t.abs()) {
                return Err(OdeError::StepUnderflow { t: self.t });
            }
            for s in 1..6 {
                for i in 0..n {
                    let mut acc = 0.0;
                    for (j, kj) in k.iter().enumerate().take(s) {
                        acc += A[s][j] * kj[i];
                    }
                    y_stage[i] = self.y[i] + h * acc;
                }
                let (_, tail) = k.split_at_mut(s);
                (self.f)(self.t + C[s] * h, &y_stage, &mut tail[0]);
            }
            // Last internal stage coincides with the 5th-order solution (FSAL).
            for i in 0..n {
                y_new[i] = self.y[i]
                    + h * (A[6][0] * k[0][i]
                        + A[6][2] * k[2][i]
                        + A[6][3] * k[3][i]
                        + A[6][4] * k[4][i]
                        + A[6][5] * k[5][i]);
            }
            let mut k7 = vec![0.0; n];
            (self.f)(self.t + h, &y_new, &mut k7);
            // Error estimate.
            let mut err = 0.0;
            for i in 0..n {
                let e = h
                    * (E[0] * k[0][i]
                        + E[2] * k[2][i]
                        + E[3] * k[3][i]
                        + E[4] * k[4][i]
                        + E[5] * k[5][i]
                        + E[6] * k7[i]);
                let sc = self.atol + self.rtol * self.y[i].abs().max(y_new[i].abs());
                err += (e / sc) * (e / sc);
            }
            err = (err / n as f64).sqrt();
            let factor = if err > 0.0 {
                (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
            } else {
                5.0
            };
            if err <= 1.0 {
                k[6] = k7;
                // Dense output coefficients.
                let mut cont = Vec::with_capacity(n);
                for i in 0..n {
                    let ydiff = y_new[i] - self.y[i];
                    let bspl = h * k[0][i] - ydiff;
                    let mut dsum = 0.0;
                    for (j, kj) in k.iter().enumerate() {
                        dsum += D[j] * kj[i];
                    }
                    cont.push([
                        self.y[i],
                        ydiff,
                        bspl,
                        ydiff - h * k[6][i] - bspl,
                        h * dsum,
                    ]);
                }
                let step = DenseStep {
                    t0: self.t,
                    h,
                    cont,
                };
                self.t += h;
                self.y.copy_from_slice(&y_new);
                self.k1.copy_from_slice(&k[6]);
                self.h = h * factor;
                self.n_steps += 1;
                return Ok(step);
            }
            self.n_rejected += 1;
            self.h = h * factor;
        }
    }
}

/// Integrate from `t0` to `t_end` (either direction), returning the dense
/// solution. `tol` is used as the relative tolerance, with absolute
/// tolerance `tol * 1e-2`.
pub fn integrate<F: FnMut(f64, &[f64], &mut [f64])>(
    f: F,
    t0: f64,
    y0: Vec<f64>,
    t_end: f64,
    tol: f64,
) -> Result<DenseSolution, OdeError> {
    let forward = t_end >= t0;
    if (t_end - t0).abs() == 0.0 {
        return Ok(DenseSolution {
            steps: vec![DenseStep {
                t0,
                h: if forward { 1.0 } else { -1.0 },
                cont: y0.iter().map(|&v| [v, 0.0, 0.0, 0.0, 0.0]).collect(),
            }],
            t0,
            t_end,
            y_end: y0,
            forward,
        });
    }
    let mut stepper = Dopri5::new(f, t0, y0, t_end, tol, tol * 1e-2);
    let mut steps = Vec::new();
    while !stepper.done() {
        steps.push(stepper.step()?);
    }
    Ok(DenseSolution {
        steps,
        t0,
        t_end: stepper.t,
        y_end: stepper.y,
        forward,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    #[test]
    fn harmonic_oscillator_accuracy_and_dense_output() {
        let sol = integrate(
            |_t, y, dy| {
                dy[0] = y[1];
                dy[1] = -y[0];
            },
            0.0,
            vec![1.0, 0.0],
            10.0,
            1e-10,
        )
        .unwrap();
        assert_abs_diff_eq!(sol.y_end()[0], 10.0f64.cos(), epsilon = 1e-8);
        // Dense output at off-step points.
        for i in 0..50 {
            let t = 0.2 * i as f64;
            let y = sol.eval(t);
            assert_abs_diff_eq!(y[0], t.cos(), epsilon = 1e-7);
            assert_abs_diff_eq!(y[1], -t.sin(), epsilon = 1e-7);
        }
    }

    #[test]
    fn backward_integration() {
        let sol = integrate(
            |_t, y, dy| {
                dy[0] = y[0];
            },
            0.0,
            vec![1.0],
            -2.0,
            1e-10,
        )
        .unwrap();
        assert_abs_diff_eq!(sol.y_end()[0], (-2.0f64).exp(), epsilon = 1e-10);
        assert_abs_diff_eq!(sol.eval(-1.0)[0], (-1.0f64).exp(), epsilon = 1e-9);
    }

    #[test]
    fn stiff_ish_tolerance_scaling() {
        // y' = cos(20 t): exact y = sin(20 t)/20.
        let sol = integrate(
            |t, _y, dy| {
                dy[0] = (20.0 * t).cos();
            },
            0.0,
            vec![0.0],
            PI,
            1e-11,
        )
        .unwrap();
        assert_abs_diff_eq!(sol.y_end()[0], (20.0 * PI).sin() / 20.0, epsilon = 1e-9);
    }

    #[test]
    fn zero_span_is_identity() {
        let sol = integrate(|_t, _y, dy| dy[0] = 1.0, 2.0, vec![7.0], 2.0, 1e-9).unwrap();
        assert_eq!(sol.eval(2.0)[0], 7.0);
    }
}
