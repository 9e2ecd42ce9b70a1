//! Fifth-degree polynomial connectors.
//!
//! A quintic is the lowest-degree polynomial that can match position, first
//! and second derivative at both ends of a span while minimising the
//! integral of the squared third derivative. These are the edges of the
//! lattice search: `fit` solves the 6x6 boundary system, `eval` walks the
//! derivative ladder, and `energy` integrates squared derivatives in closed
//! form.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum QuinticError {
    #[error("parameter span {0} too small to condition the boundary system")]
    IllConditioned(f64),
    #[error("evaluation point {t} outside [0, {duration}]")]
    OutOfRange { t: f64, duration: f64 },
}

/// Value / first / second derivative at both ends of a span of length `span`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryConditions {
    pub p0: f64,
    pub v0: f64,
    pub a0: f64,
    pub p1: f64,
    pub v1: f64,
    pub a1: f64,
    pub span: f64,
}

/// `f(t) = c0 + c1 t + ... + c5 t^5` on `[0, duration]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuinticPoly {
    pub coeffs: [f64; 6],
    pub duration: f64,
}

impl QuinticPoly {
    /// Unique quintic matching all six boundary conditions.
    ///
    /// Assembled in the normalised parameter `u = t/T` and rescaled, which
    /// keeps the system well conditioned for very short and very long spans.
    pub fn fit(bc: &BoundaryConditions) -> Result<Self, QuinticError> {
        let t = bc.span;
        if !(t > 1e-6) {
            return Err(QuinticError::IllConditioned(t));
        }
        // Normalised conditions: value, d/du, d2/du2 at u = 0 and u = 1.
        let p0 = bc.p0;
        let v0 = bc.v0 * t;
        let a0 = bc.a0 * t * t;
        let p1 = bc.p1;
        let v1 = bc.v1 * t;
        let a1 = bc.a1 * t * t;

        // c0..c2 follow directly from the u = 0 conditions; the u = 1 block
        // reduces to a 3x3 system with the classic closed-form solution.
        let c0 = p0;
        let c1 = v0;
        let c2 = 0.5 * a0;
        let dp = p1 - (c0 + c1 + c2);
        let dv = v1 - (c1 + 2.0 * c2);
        let da = a1 - 2.0 * c2;
        let c3 = 10.0 * dp - 4.0 * dv + 0.5 * da;
        let c4 = -15.0 * dp + 7.0 * dv - da;
        let c5 = 6.0 * dp - 3.0 * dv + 0.5 * da;

        let mut coeffs = [c0, c1, c2, c3, c4, c5];
        let mut scale = 1.0;
        for c in coeffs.iter_mut() {
            *c /= scale;
            scale *= t;
        }
        Ok(Self { coeffs, duration: t })
    }

    /// Derivative of order `0..=3` at `t`, by Horner evaluation.
    pub fn eval(&self, t: f64, order: usize) -> Result<f64, QuinticError> {
        if !((-1e-9..=self.duration + 1e-9).contains(&t)) {
            return Err(QuinticError::OutOfRange { t, duration: self.duration });
        }
        Ok(self.eval_unchecked(t, order))
    }

    /// Like [`eval`](Self::eval) without the range check; used on interior
    /// quadrature samples that are within range by construction.
    pub fn eval_unchecked(&self, t: f64, order: usize) -> f64 {
        debug_assert!(order <= 3);
        let d = derivative_coeffs(&self.coeffs, order);
        let mut acc = 0.0;
        for &c in d.iter().rev() {
            acc = acc * t + c;
        }
        acc
    }

    /// Closed-form `∫_0^T (f^(order))^2 dt`.
    ///
    /// The squared derivative is itself a polynomial, so the integral is a
    /// finite power sum; no quadrature involved.
    pub fn energy(&self, order: usize) -> f64 {
        let d = derivative_coeffs(&self.coeffs, order);
        // Square by convolution, then integrate term-wise.
        let n = d.len();
        let mut sq = vec![0.0; 2 * n - 1];
        for i in 0..n {
            for j in 0..n {
                sq[i + j] += d[i] * d[j];
            }
        }
        let mut acc = 0.0;
        let mut tp = self.duration;
        for (k, &c) in sq.iter().enumerate() {
            acc += c * tp / (k as f64 + 1.0);
            tp *= self.duration;
        }
        acc
    }

    /// `∫_0^T f‴(t)^2 dt`, the smoothness objective the quintic minimises.
    pub fn jerk_energy(&self) -> f64 {
        self.energy(3)
    }
}

fn derivative_coeffs(coeffs: &[f64; 6], order: usize) -> Vec<f64> {
    let mut d: Vec<f64> = coeffs.to_vec();
    for _ in 0..order {
        d = d
            .iter()
            .enumerate()
            .skip(1)
            .map(|(k, &c)| k as f64 * c)
            .collect();
        if d.is_empty() {
            d.push(0.0);
        }
    }
    d
}
