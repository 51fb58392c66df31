//! Doubly periodic scalar and vector fields on the square torus, stored as
//! truncated Fourier series, together with the calculus of a conformal
//! metric `g = e^{2 phi} (dx1^2 + dx2^2)`.
//!
//! All differentiation is exact (multiplication by `i k` in frequency
//! space); evaluation is pointwise and allocation-free once a field is
//! built. The torus side length is fixed at `2 pi` per axis.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

/// One cosine term `amplitude * cos(k1 x1 + k2 x2 + phase)` of a field
/// description. This is the on-disk exchange unit for field configs.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct FieldTerm {
    pub k1: i32,
    pub k2: i32,
    pub amplitude: f64,
    #[serde(default)]
    pub phase: f64,
}

/// Complex exponentials `e^{i k x_j}` for `k = 0..=band` at a fixed point,
/// shared by every field evaluation at that point.
pub struct FourierBasis {
    p1: Vec<Complex64>,
    p2: Vec<Complex64>,
}

impl FourierBasis {
    pub fn new(x: [f64; 2], band: usize) -> Self {
        let mut p1 = Vec::with_capacity(band + 1);
        let mut p2 = Vec::with_capacity(band + 1);
        let w1 = Complex64::from_polar(1.0, x[0]);
        let w2 = Complex64::from_polar(1.0, x[1]);
        let mut a = Complex64::new(1.0, 0.0);
        let mut b = Complex64::new(1.0, 0.0);
        for _ in 0..=band {
            p1.push(a);
            p2.push(b);
            a *= w1;
            b *= w2;
        }
        FourierBasis { p1, p2 }
    }

    #[inline]
    fn mode(&self, k1: i32, k2: i32) -> Complex64 {
        let a = if k1 >= 0 {
            self.p1[k1 as usize]
        } else {
            self.p1[(-k1) as usize].conj()
        };
        let b = if k2 >= 0 {
            self.p2[k2 as usize]
        } else {
            self.p2[(-k2) as usize].conj()
        };
        a * b
    }

    pub fn band(&self) -> usize {
        self.p1.len() - 1
    }
}

/// A real trigonometric polynomial on the torus, stored as Hermitian
/// symmetric Fourier coefficients with `|k_i| <= band`.
#[derive(Debug, Clone)]
pub struct SpectralScalarField {
    band: i32,
    /// Dense coefficient array, index `(k1 + band) * (2 band + 1) + (k2 + band)`.
    coeffs: Vec<Complex64>,
    /// Constant mode (real by Hermitian symmetry).
    c0: f64,
    /// Half-spectrum terms `(k1, k2, c_k)` with `k1 > 0` or `k1 == 0, k2 > 0`;
    /// the field value is `c0 + 2 sum Re(c_k e^{i k x})`.
    half_terms: Vec<(i32, i32, Complex64)>,
}

impl SpectralScalarField {
    /// Build from a dense coefficient array; enforces Hermitian symmetry by
    /// averaging `c_k` with `conj(c_{-k})`.
    pub fn from_coeffs(band: usize, coeffs: Vec<Complex64>) -> Self {
        let n = 2 * band + 1;
        assert_eq!(coeffs.len(), n * n, "coefficient array size mismatch");
        let b = band as i32;
        let idx = |k1: i32, k2: i32| ((k1 + b) as usize) * n + (k2 + b) as usize;
        let mut sym = vec![Complex64::new(0.0, 0.0); n * n];
        for k1 in -b..=b {
            for k2 in -b..=b {
                sym[idx(k1, k2)] =
                    0.5 * (coeffs[idx(k1, k2)] + coeffs[idx(-k1, -k2)].conj());
            }
        }
        let c0 = sym[idx(0, 0)].re;
        // Evaluation skips coefficients at the floating-point noise floor
        // (relative 1e-15); the dense array keeps them so exact spectral
        // operations are unaffected. For wide-band projections of smooth
        // data this turns O(band^2) evaluation into a short sum.
        let max_norm = sym
            .iter()
            .map(|c| c.norm_sqr())
            .fold(c0 * c0, f64::max)
            .sqrt();
        let floor = 1e-15 * max_norm;
        let mut half_terms = Vec::new();
        for k1 in 0..=b {
            for k2 in -b..=b {
                if k1 == 0 && k2 <= 0 {
                    continue;
                }
                let c = sym[idx(k1, k2)];
                if c.norm() > floor {
                    half_terms.push((k1, k2, c));
                }
            }
        }
        SpectralScalarField {
            band: b,
            coeffs: sym,
            c0,
            half_terms,
        }
    }

    pub fn zero() -> Self {
        Self::from_coeffs(0, vec![Complex64::new(0.0, 0.0)])
    }

    pub fn constant(c: f64) -> Self {
        Self::from_coeffs(0, vec![Complex64::new(c, 0.0)])
    }

    /// Build from cosine terms; the bandwidth is the max `|k_i|` present.
    pub fn from_terms(terms: &[FieldTerm]) -> Self {
        let band = terms
            .iter()
            .map(|t| t.k1.unsigned_abs().max(t.k2.unsigned_abs()) as usize)
            .max()
            .unwrap_or(0);
        let n = 2 * band + 1;
        let b = band as i32;
        let idx = |k1: i32, k2: i32| ((k1 + b) as usize) * n + (k2 + b) as usize;
        let mut coeffs = vec![Complex64::new(0.0, 0.0); n * n];
        for t in terms {
            // amplitude cos(k.x + phase) = (a/2) e^{i phase} e^{i k.x} + c.c.
            let half = 0.5 * t.amplitude * Complex64::from_polar(1.0, t.phase);
            coeffs[idx(t.k1, t.k2)] += half;
            coeffs[idx(-t.k1, -t.k2)] += half.conj();
        }
        Self::from_coeffs(band, coeffs)
    }

    /// Project a smooth periodic function onto bandwidth `band` by trapezoid
    /// DFT on an oversampled grid.
    pub fn from_fn(band: usize, f: impl Fn([f64; 2]) -> f64) -> Self {
        let m = (4 * band + 8).max(32);
        let step = std::f64::consts::TAU / m as f64;
        let mut samples = vec![0.0f64; m * m];
        for j1 in 0..m {
            for j2 in 0..m {
                samples[j1 * m + j2] = f([j1 as f64 * step, j2 as f64 * step]);
            }
        }
        // DFT along axis 1 for the needed modes only.
        let b = band as i32;
        let n = 2 * band + 1;
        let roots: Vec<Complex64> = (0..m)
            .map(|j| Complex64::from_polar(1.0, -(j as f64) * step))
            .collect();
        // Kahan-compensated accumulation keeps the noise floor of the
        // naive DFT near machine epsilon, so negligible coefficients can
        // be recognized (and the band shrunk) reliably.
        fn kahan_sum(acc: &mut Complex64, comp: &mut Complex64, v: Complex64) {
            let t = v - *comp;
            let s = *acc + t;
            *comp = (s - *acc) - t;
            *acc = s;
        }
        let mut partial = vec![Complex64::new(0.0, 0.0); n * m];
        for (ik, k1) in (-b..=b).enumerate() {
            for j2 in 0..m {
                let mut acc = Complex64::new(0.0, 0.0);
                let mut comp = Complex64::new(0.0, 0.0);
                for j1 in 0..m {
                    let v = samples[j1 * m + j2]
                        * roots[(j1 * k1.rem_euclid(m as i32) as usize) % m];
                    kahan_sum(&mut acc, &mut comp, v);
                }
                partial[ik * m + j2] = acc;
            }
        }
        let mut coeffs = vec![Complex64::new(0.0, 0.0); n * n];
        let scale = 1.0 / (m as f64 * m as f64);
        for (ik, _k1) in (-b..=b).enumerate() {
            for (jk, k2) in (-b..=b).enumerate() {
                let mut acc = Complex64::new(0.0, 0.0);
                let mut comp = Complex64::new(0.0, 0.0);
                for j2 in 0..m {
                    let v = partial[ik * m + j2]
                        * roots[(j2 * k2.rem_euclid(m as i32) as usize) % m];
                    kahan_sum(&mut acc, &mut comp, v);
                }
                coeffs[ik * n + jk] = acc * scale;
            }
        }
        // Shrink to the smallest band containing every coefficient above
        // the relative noise floor: projections of smooth data often leave
        // the outer box numerically empty, and narrow fields evaluate
        // proportionally faster downstream.
        let max_norm = coeffs.iter().map(|c| c.norm()).fold(0.0, f64::max);
        let floor = 1e-14 * max_norm;
        let mut needed = 0usize;
        for k1 in -b..=b {
            for k2 in -b..=b {
                if coeffs[((k1 + b) as usize) * n + (k2 + b) as usize].norm() > floor {
                    needed = needed
                        .max(k1.unsigned_abs() as usize)
                        .max(k2.unsigned_abs() as usize);
                }
            }
        }
        let full = Self::from_coeffs(band, coeffs);
        if needed < band {
            full.with_band(needed)
        } else {
            full
        }
    }

    pub fn band(&self) -> usize {
        self.band as usize
    }

    pub fn coeff(&self, k1: i32, k2: i32) -> Complex64 {
        let b = self.band;
        if k1.abs() > b || k2.abs() > b {
            return Complex64::new(0.0, 0.0);
        }
        let n = (2 * b + 1) as usize;
        self.coeffs[((k1 + b) as usize) * n + (k2 + b) as usize]
    }

    /// Mean value over the torus (the constant mode).
    pub fn mean(&self) -> f64 {
        self.c0
    }

    #[inline]
    pub fn eval_with(&self, basis: &FourierBasis) -> f64 {
        let mut acc = 0.0;
        for &(k1, k2, c) in &self.half_terms {
            let e = basis.mode(k1, k2);
            acc += c.re * e.re - c.im * e.im;
        }
        self.c0 + 2.0 * acc
    }

    pub fn eval(&self, x: [f64; 2]) -> f64 {
        self.eval_with(&FourierBasis::new(x, self.band()))
    }

    /// Partial derivative along `axis` evaluated directly from the
    /// coefficients (no intermediate field construction).
    pub fn eval_partial_with(&self, basis: &FourierBasis, axis: usize) -> f64 {
        let mut acc = 0.0;
        for &(k1, k2, c) in &self.half_terms {
            let k = if axis == 0 { k1 } else { k2 } as f64;
            let e = basis.mode(k1, k2);
            // (i k c) e^{i k x} summed with its conjugate pair.
            acc += -(c.im * k) * e.re - (c.re * k) * e.im;
        }
        2.0 * acc
    }

    /// Exact partial derivative along `axis` (0 or 1) as a new field.
    pub fn partial(&self, axis: usize) -> Self {
        let b = self.band;
        let n = (2 * b + 1) as usize;
        let mut coeffs = vec![Complex64::new(0.0, 0.0); n * n];
        for k1 in -b..=b {
            for k2 in -b..=b {
                let k = if axis == 0 { k1 } else { k2 };
                let i = ((k1 + b) as usize) * n + (k2 + b) as usize;
                coeffs[i] = self.coeffs[i] * Complex64::new(0.0, k as f64);
            }
        }
        Self::from_coeffs(b as usize, coeffs)
    }

    /// Exact Laplacian as a new field.
    pub fn laplacian(&self) -> Self {
        let b = self.band;
        let n = (2 * b + 1) as usize;
        let mut coeffs = vec![Complex64::new(0.0, 0.0); n * n];
        for k1 in -b..=b {
            for k2 in -b..=b {
                let i = ((k1 + b) as usize) * n + (k2 + b) as usize;
                coeffs[i] = -((k1 * k1 + k2 * k2) as f64) * self.coeffs[i];
            }
        }
        Self::from_coeffs(b as usize, coeffs)
    }

    /// Zero-mean solution of `Laplacian(u) = self` (the mean of `self` is
    /// dropped; solvable sources have zero mean anyway).
    pub fn solve_poisson(&self) -> Self {
        let b = self.band;
        let n = (2 * b + 1) as usize;
        let mut coeffs = vec![Complex64::new(0.0, 0.0); n * n];
        for k1 in -b..=b {
            for k2 in -b..=b {
                let ksq = (k1 * k1 + k2 * k2) as f64;
                if ksq > 0.0 {
                    let i = ((k1 + b) as usize) * n + (k2 + b) as usize;
                    coeffs[i] = -self.coeffs[i] / ksq;
                }
            }
        }
        Self::from_coeffs(b as usize, coeffs)
    }

    fn binop(&self, other: &Self, f: impl Fn(Complex64, Complex64) -> Complex64) -> Self {
        let band = self.band.max(other.band);
        let n = (2 * band + 1) as usize;
        let mut coeffs = vec![Complex64::new(0.0, 0.0); n * n];
        for k1 in -band..=band {
            for k2 in -band..=band {
                coeffs[((k1 + band) as usize) * n + (k2 + band) as usize] =
                    f(self.coeff(k1, k2), other.coeff(k1, k2));
            }
        }
        Self::from_coeffs(band as usize, coeffs)
    }

    pub fn add(&self, other: &Self) -> Self {
        self.binop(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.binop(other, |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> Self {
        let coeffs = self.coeffs.iter().map(|c| c * s).collect();
        Self::from_coeffs(self.band as usize, coeffs)
    }

    /// Re-embed into a (usually larger) bandwidth; truncates if smaller.
    pub fn with_band(&self, band: usize) -> Self {
        let b = band as i32;
        let n = 2 * band + 1;
        let mut coeffs = vec![Complex64::new(0.0, 0.0); n * n];
        for k1 in -b..=b {
            for k2 in -b..=b {
                coeffs[((k1 + b) as usize) * n + (k2 + b) as usize] = self.coeff(k1, k2);
            }
        }
        Self::from_coeffs(band, coeffs)
    }

    /// Sup norm estimated on a uniform grid with one refinement.
    pub fn sup_norm(&self) -> f64 {
        let mut best = 0.0f64;
        let m = (8 * self.band() + 16).max(64);
        let step = std::f64::consts::TAU / m as f64;
        for j1 in 0..m {
            for j2 in 0..m {
                best = best.max(self.eval([j1 as f64 * step, j2 as f64 * step]).abs());
            }
        }
        best
    }

    /// Sup of |field - mean|: zero iff the field is constant.
    pub fn variation(&self) -> f64 {
        self.sub(&Self::constant(self.mean())).sup_norm()
    }

    pub fn is_zero(&self, tol: f64) -> bool {
        self.coeffs.iter().all(|c| c.norm() <= tol)
    }

    /// Exact mean of the pointwise product of two trig polynomials
    /// (Parseval), normalized so that `l2_inner(f, 1) = mean(f)`.
    pub fn l2_inner(&self, other: &Self) -> f64 {
        let band = self.band.min(other.band);
        let mut acc = 0.0;
        for k1 in -band..=band {
            for k2 in -band..=band {
                let p = self.coeff(k1, k2) * other.coeff(k1, k2).conj();
                acc += p.re;
            }
        }
        acc
    }

    /// The terms as an exportable cosine list (for config round trips).
    pub fn to_terms(&self) -> Vec<FieldTerm> {
        let mut out = Vec::new();
        if self.c0 != 0.0 {
            out.push(FieldTerm {
                k1: 0,
                k2: 0,
                amplitude: self.c0,
                phase: 0.0,
            });
        }
        for &(k1, k2, c) in &self.half_terms {
            let (r, phase) = c.to_polar();
            out.push(FieldTerm {
                k1,
                k2,
                amplitude: 2.0 * r,
                phase,
            });
        }
        out
    }
}

/// A vector field on the torus in Euclidean-coordinate components.
#[derive(Debug, Clone)]
pub struct SpectralVectorField {
    pub c1: SpectralScalarField,
    pub c2: SpectralScalarField,
}

impl SpectralVectorField {
    pub fn new(c1: SpectralScalarField, c2: SpectralScalarField) -> Self {
        let band = c1.band().max(c2.band());
        SpectralVectorField {
            c1: c1.with_band(band),
            c2: c2.with_band(band),
        }
    }

    pub fn zero() -> Self {
        Self::new(SpectralScalarField::zero(), SpectralScalarField::zero())
    }

    pub fn constant(v: [f64; 2]) -> Self {
        Self::new(
            SpectralScalarField::constant(v[0]),
            SpectralScalarField::constant(v[1]),
        )
    }

    pub fn band(&self) -> usize {
        self.c1.band()
    }

    pub fn eval(&self, x: [f64; 2]) -> [f64; 2] {
        let basis = FourierBasis::new(x, self.band());
        [self.c1.eval_with(&basis), self.c2.eval_with(&basis)]
    }

    pub fn is_zero(&self, tol: f64) -> bool {
        self.c1.is_zero(tol) && self.c2.is_zero(tol)
    }

    /// Euclidean divergence `d1 c1 + d2 c2` as a scalar field.
    pub fn euclidean_divergence(&self) -> SpectralScalarField {
        self.c1.partial(0).add(&self.c2.partial(1))
    }
}

/// The conformal metric `g = e^{2 phi} (dx1^2 + dx2^2)` with precomputed
/// derivative fields of the conformal factor.
#[derive(Debug, Clone)]
pub struct ConformalMetric {
    phi: SpectralScalarField,
    d1_phi: SpectralScalarField,
    d2_phi: SpectralScalarField,
    lap_phi: SpectralScalarField,
}

impl ConformalMetric {
    pub fn new(phi: SpectralScalarField) -> Self {
        let d1_phi = phi.partial(0);
        let d2_phi = phi.partial(1);
        let lap_phi = phi.laplacian();
        ConformalMetric {
            phi,
            d1_phi,
            d2_phi,
            lap_phi,
        }
    }

    pub fn flat() -> Self {
        Self::new(SpectralScalarField::zero())
    }

    pub fn phi(&self) -> &SpectralScalarField {
        &self.phi
    }

    pub fn phi_at(&self, x: [f64; 2]) -> f64 {
        self.phi.eval(x)
    }

    pub fn grad_phi_at(&self, x: [f64; 2]) -> [f64; 2] {
        let basis = FourierBasis::new(x, self.phi.band());
        [self.d1_phi.eval_with(&basis), self.d2_phi.eval_with(&basis)]
    }

    /// Area density `e^{2 phi}` of `dA_g`.
    pub fn area_weight(&self, x: [f64; 2]) -> f64 {
        (2.0 * self.phi.eval(x)).exp()
    }

    /// Riemannian inner product of Euclidean-component vectors at `x`.
    pub fn inner(&self, x: [f64; 2], u: [f64; 2], v: [f64; 2]) -> f64 {
        (2.0 * self.phi.eval(x)).exp() * (u[0] * v[0] + u[1] * v[1])
    }

    pub fn norm(&self, x: [f64; 2], u: [f64; 2]) -> f64 {
        self.inner(x, u, u).sqrt()
    }

    /// Metric gradient `e^{-2 phi} (d1 u, d2 u)`.
    pub fn gradient(&self, field: &SpectralScalarField, x: [f64; 2]) -> [f64; 2] {
        let basis = FourierBasis::new(x, field.band());
        let g1 = field.eval_partial_with(&basis, 0);
        let g2 = field.eval_partial_with(&basis, 1);
        let s = (-2.0 * self.phi.eval(x)).exp();
        [s * g1, s * g2]
    }

    /// Metric divergence, evaluated through the exact pointwise expansion
    /// `div_g v = d1 v1 + d2 v2 + 2 <grad phi, v>`.
    pub fn divergence(&self, v: &SpectralVectorField, x: [f64; 2]) -> f64 {
        let basis = FourierBasis::new(x, v.band().max(self.phi.band()));
        let flat = v.c1.eval_partial_with(&basis, 0) + v.c2.eval_partial_with(&basis, 1);
        let gp = self.grad_phi_at(x);
        let vv = [v.c1.eval_with(&basis), v.c2.eval_with(&basis)];
        flat + 2.0 * (gp[0] * vv[0] + gp[1] * vv[1])
    }

    /// Gaussian curvature `K = -e^{-2 phi} Laplacian(phi)`.
    pub fn gauss_curvature(&self, x: [f64; 2]) -> f64 {
        -(-2.0 * self.phi.eval(x)).exp() * self.lap_phi.eval(x)
    }

    /// `nabla_w v` in Euclidean components, using the conformal Christoffel
    /// symbols G^1_11 = p1, G^1_12 = p2, G^1_22 = -p1, G^2_11 = -p2,
    /// G^2_12 = p1, G^2_22 = p2 (p_j = d_j phi).
    pub fn covariant_derivative(
        &self,
        v: &SpectralVectorField,
        w: [f64; 2],
        x: [f64; 2],
    ) -> [f64; 2] {
        let basis = FourierBasis::new(x, v.band());
        let v1 = v.c1.eval_with(&basis);
        let v2 = v.c2.eval_with(&basis);
        let d1v1 = v.c1.eval_partial_with(&basis, 0);
        let d2v1 = v.c1.eval_partial_with(&basis, 1);
        let d1v2 = v.c2.eval_partial_with(&basis, 0);
        let d2v2 = v.c2.eval_partial_with(&basis, 1);
        let [p1, p2] = self.grad_phi_at(x);
        let flat1 = w[0] * d1v1 + w[1] * d2v1;
        let flat2 = w[0] * d1v2 + w[1] * d2v2;
        let gamma1 = p1 * w[0] * v1 + p2 * (w[0] * v2 + w[1] * v1) - p1 * w[1] * v2;
        let gamma2 = -p2 * w[0] * v1 + p1 * (w[0] * v2 + w[1] * v1) + p2 * w[1] * v2;
        [flat1 + gamma1, flat2 + gamma2]
    }

    /// Flatness certificate: on the torus the metric is flat iff `phi` is
    /// constant; returns the variation of `phi`.
    pub fn flatness_residual(&self) -> f64 {
        self.phi.variation()
    }

    pub fn is_flat(&self, tol: f64) -> bool {
        self.flatness_residual() < tol
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    fn cos_x1() -> SpectralScalarField {
        SpectralScalarField::from_terms(&[FieldTerm {
            k1: 1,
            k2: 0,
            amplitude: 1.0,
            phase: 0.0,
        }])
    }

    #[test]
    fn evaluate_zero_and_closed_forms() {
        let zero = SpectralScalarField::zero();
        assert_eq!(zero.eval([0.3, 1.2]), 0.0);
        assert_abs_diff_eq!(cos_x1().eval([0.0, 2.7]), 1.0, epsilon = 1e-14);
        // cos x1 + sin x2 at (pi/2, pi/2) -> 1
        let f = SpectralScalarField::from_terms(&[
            FieldTerm {
                k1: 1,
                k2: 0,
                amplitude: 1.0,
                phase: 0.0,
            },
            FieldTerm {
                k1: 0,
                k2: 1,
                amplitude: 1.0,
                phase: -PI / 2.0,
            },
        ]);
        assert_abs_diff_eq!(f.eval([PI / 2.0, PI / 2.0]), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn gradient_flat_and_scaled() {
        let f = cos_x1();
        let flat = ConformalMetric::flat();
        let g = flat.gradient(&f, [PI / 2.0, 0.0]);
        assert_abs_diff_eq!(g[0], -1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(g[1], 0.0, epsilon = 1e-14);

        let c = 0.37;
        let metric = ConformalMetric::new(SpectralScalarField::constant(c));
        let g = metric.gradient(&f, [PI / 2.0, 0.0]);
        assert_abs_diff_eq!(g[0], -(-2.0 * c).exp(), epsilon = 1e-14);

        let constf = SpectralScalarField::constant(4.2);
        let g = metric.gradient(&constf, [1.0, 2.0]);
        assert_eq!(g, [0.0, 0.0]);
    }

    #[test]
    fn divergence_examples() {
        let flat = ConformalMetric::flat();
        // v = (sin x1, 0): div at 0 is cos 0 = 1.
        let v = SpectralVectorField::new(
            SpectralScalarField::from_terms(&[FieldTerm {
                k1: 1,
                k2: 0,
                amplitude: 1.0,
                phase: -PI / 2.0,
            }]),
            SpectralScalarField::zero(),
        );
        assert_abs_diff_eq!(flat.divergence(&v, [0.0, 0.0]), 1.0, epsilon = 1e-14);
        // v = (cos x2, 0): divergence-free.
        let v = SpectralVectorField::new(
            SpectralScalarField::from_terms(&[FieldTerm {
                k1: 0,
                k2: 1,
                amplitude: 1.0,
                phase: 0.0,
            }]),
            SpectralScalarField::zero(),
        );
        assert_abs_diff_eq!(flat.divergence(&v, [0.9, 0.4]), 0.0, epsilon = 1e-14);
        let v = SpectralVectorField::constant([1.3, -0.2]);
        assert_abs_diff_eq!(flat.divergence(&v, [0.9, 0.4]), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn gauss_curvature_examples() {
        let flat = ConformalMetric::flat();
        assert_eq!(flat.gauss_curvature([1.0, 1.0]), 0.0);
        let metric = ConformalMetric::new(cos_x1().scale(0.1));
        assert_abs_diff_eq!(
            metric.gauss_curvature([0.0, 0.0]),
            0.1 * (-0.2f64).exp(),
            epsilon = 1e-14
        );
        let metric = ConformalMetric::new(SpectralScalarField::constant(0.8));
        assert_eq!(metric.gauss_curvature([0.5, 0.5]), 0.0);
        assert!(metric.is_flat(1e-12));
    }

    #[test]
    fn covariant_derivative_examples() {
        let flat = ConformalMetric::flat();
        let v = SpectralVectorField::constant([2.0, -1.0]);
        assert_eq!(flat.covariant_derivative(&v, [0.3, 0.7], [1.0, 1.0]), [0.0, 0.0]);
        // v = (sin x1, 0), direction (1,0) at origin -> (cos 0, 0) = (1, 0)
        let v = SpectralVectorField::new(
            SpectralScalarField::from_terms(&[FieldTerm {
                k1: 1,
                k2: 0,
                amplitude: 1.0,
                phase: -PI / 2.0,
            }]),
            SpectralScalarField::zero(),
        );
        let d = flat.covariant_derivative(&v, [1.0, 0.0], [0.0, 0.0]);
        assert_abs_diff_eq!(d[0], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(d[1], 0.0, epsilon = 1e-14);
        // zero field stays zero for any phi
        let metric = ConformalMetric::new(cos_x1().scale(0.3));
        let d = metric.covariant_derivative(&SpectralVectorField::zero(), [1.0, 2.0], [0.4, 0.6]);
        assert_eq!(d, [0.0, 0.0]);
    }

    #[test]
    fn spectral_derivative_matches_finite_difference() {
        let f = SpectralScalarField::from_terms(&[
            FieldTerm {
                k1: 2,
                k2: -1,
                amplitude: 0.7,
                phase: 0.3,
            },
            FieldTerm {
                k1: 1,
                k2: 3,
                amplitude: -0.4,
                phase: 1.1,
            },
        ]);
        let d1 = f.partial(0);
        let d2 = f.partial(1);
        let h = 1e-4;
        let mut rng_state = 123456789u64;
        let mut next = || {
            rng_state = rng_state.wrapping_mul(6364136223846793005).wrapping_add(1);
            (rng_state >> 11) as f64 / (1u64 << 53) as f64 * std::f64::consts::TAU
        };
        for _ in 0..100 {
            let x = [next(), next()];
            let fd1 = (f.eval([x[0] + h, x[1]]) - f.eval([x[0] - h, x[1]])) / (2.0 * h);
            let fd2 = (f.eval([x[0], x[1] + h]) - f.eval([x[0], x[1] - h])) / (2.0 * h);
            assert_abs_diff_eq!(d1.eval(x), fd1, epsilon = 1e-6);
            assert_abs_diff_eq!(d2.eval(x), fd2, epsilon = 1e-6);
        }
    }

    #[test]
    fn from_fn_reproduces_in_band_field() {
        let f = SpectralScalarField::from_terms(&[
            FieldTerm {
                k1: 2,
                k2: 1,
                amplitude: 0.5,
                phase: 0.2,
            },
            FieldTerm {
                k1: 0,
                k2: 0,
                amplitude: -0.3,
                phase: 0.0,
            },
        ]);
        let g = SpectralScalarField::from_fn(3, |x| f.eval(x));
        for k1 in -3..=3 {
            for k2 in -3..=3 {
                let d = (f.coeff(k1, k2) - g.coeff(k1, k2)).norm();
                assert!(d < 1e-13, "coeff mismatch at ({k1},{k2}): {d}");
            }
        }
    }

    #[test]
    fn poisson_solve_roundtrip() {
        let src = SpectralScalarField::from_terms(&[FieldTerm {
            k1: 1,
            k2: 2,
            amplitude: 0.9,
            phase: 0.5,
        }]);
        let u = src.solve_poisson();
        let back = u.laplacian();
        assert!(back.sub(&src).is_zero(1e-14));
        assert_abs_diff_eq!(u.mean(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn term_roundtrip() {
        let f = SpectralScalarField::from_terms(&[
            FieldTerm {
                k1: 1,
                k2: -2,
                amplitude: 0.8,
                phase: 0.9,
            },
            FieldTerm {
                k1: 0,
                k2: 0,
                amplitude: 0.1,
                phase: 0.0,
            },
        ]);
        let g = SpectralScalarField::from_terms(&f.to_terms());
        assert!(f.sub(&g).is_zero(1e-14));
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn arb_terms() -> impl Strategy<Value = Vec<FieldTerm>> {
            proptest::collection::vec(
                (-3i32..=3, -3i32..=3, 0.05f64..1.0, 0.0f64..std::f64::consts::TAU).prop_map(
                    |(k1, k2, amplitude, phase)| FieldTerm {
                        k1,
                        k2,
                        amplitude,
                        phase,
                    },
                ),
                1..4,
            )
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]

            /// `laplacian . solve_poisson` restores the zero-mean part.
            #[test]
            fn poisson_left_inverse(terms in arb_terms()) {
                let f = SpectralScalarField::from_terms(&terms);
                let zero_mean = f.sub(&SpectralScalarField::constant(f.mean()));
                let back = f.solve_poisson().laplacian();
                prop_assert!(back.sub(&zero_mean).is_zero(1e-10));
            }

            /// Direct derivative evaluation agrees with the derivative field.
            #[test]
            fn partial_eval_consistency(
                terms in arb_terms(),
                x1 in 0.0f64..std::f64::consts::TAU,
                x2 in 0.0f64..std::f64::consts::TAU,
            ) {
                let f = SpectralScalarField::from_terms(&terms);
                let basis = FourierBasis::new([x1, x2], f.band());
                for axis in 0..2 {
                    let direct = f.eval_partial_with(&basis, axis);
                    let via_field = f.partial(axis).eval([x1, x2]);
                    prop_assert!((direct - via_field).abs() < 1e-10);
                }
            }

            /// Integration by parts: <lap f, g> = -<grad f, grad g>.
            #[test]
            fn laplacian_adjointness(f_terms in arb_terms(), g_terms in arb_terms()) {
                let f = SpectralScalarField::from_terms(&f_terms);
                let g = SpectralScalarField::from_terms(&g_terms);
                let lhs = f.laplacian().l2_inner(&g);
                let rhs = -(f.partial(0).l2_inner(&g.partial(0))
                    + f.partial(1).l2_inner(&g.partial(1)));
                prop_assert!((lhs - rhs).abs() < 1e-9 * (1.0 + lhs.abs()));
            }
        }
    }
}
