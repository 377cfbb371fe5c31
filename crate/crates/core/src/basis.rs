//! Orthonormal sine-cosine basis on `[-B, B]`.
//!
//! Index `0` is the constant `1/sqrt(2B)`; for `j = 1..=q`, index `2j - 1` is
//! `sin(j pi x / B)/sqrt(B)` and index `2j` is `cos(j pi x / B)/sqrt(B)`.
//! In the signed labelling `psi_{-q..q}`, negative labels are the sines and
//! positive labels the cosines.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{FhtError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FourierBasis {
    /// Half-width `B` of the domain.
    pub half_width: f64,
    /// Maximal degree `q`.
    pub degree: usize,
}

impl FourierBasis {
    pub fn new(half_width: f64, degree: usize) -> Result<Self> {
        if !(half_width.is_finite() && half_width > 0.0) {
            return Err(FhtError::InvalidParameter(format!(
                "basis half-width must be positive, got {half_width}"
            )));
        }
        Ok(Self { half_width, degree })
    }

    /// Number of basis functions `2q + 1`.
    pub fn size(&self) -> usize {
        2 * self.degree + 1
    }

    /// Fourier degree of basis function `i`.
    pub fn degree_of(i: usize) -> usize {
        i.div_ceil(2)
    }

    pub fn eval_into(&self, x: f64, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.size());
        let b = self.half_width;
        let s = 1.0 / b.sqrt();
        out[0] = 1.0 / (2.0 * b).sqrt();
        let theta = PI * x / b;
        // angle addition recurrence, re-seeded periodically to limit drift
        let (s1, c1) = theta.sin_cos();
        let (mut sj, mut cj) = (s1, c1);
        for j in 1..=self.degree {
            if j > 1 {
                if j % 8 == 0 {
                    (sj, cj) = (j as f64 * theta).sin_cos();
                } else {
                    (sj, cj) = (sj * c1 + cj * s1, cj * c1 - sj * s1);
                }
            }
            out[2 * j - 1] = s * sj;
            out[2 * j] = s * cj;
        }
    }

    pub fn eval(&self, x: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.size()];
        self.eval_into(x, &mut out);
        out
    }

    /// Single basis function `psi_i(x)`.
    pub fn eval_one(&self, i: usize, x: f64) -> f64 {
        let b = self.half_width;
        if i == 0 {
            return 1.0 / (2.0 * b).sqrt();
        }
        let j = Self::degree_of(i) as f64;
        let arg = j * PI * x / b;
        if i % 2 == 1 {
            arg.sin() / b.sqrt()
        } else {
            arg.cos() / b.sqrt()
        }
    }

    /// `e_i = integral of psi_i over [-B, B]`.
    pub fn integral_vector(&self) -> Vec<f64> {
        let mut e = vec![0.0; self.size()];
        e[0] = (2.0 * self.half_width).sqrt();
        e
    }

    /// First and second moment vectors `(int x psi_i, int x^2 psi_i)`.
    pub fn moment_vectors(&self) -> (Vec<f64>, Vec<f64>) {
        let b = self.half_width;
        let n = self.size();
        let mut m1 = vec![0.0; n];
        let mut m2 = vec![0.0; n];
        m2[0] = 2.0 * b.powi(3) / 3.0 / (2.0 * b).sqrt();
        for j in 1..=self.degree {
            let jf = j as f64;
            let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
            m1[2 * j - 1] = -2.0 * b * b * sign / (jf * PI) / b.sqrt();
            m2[2 * j] = 4.0 * b.powi(3) * sign / (jf * jf * PI * PI) / b.sqrt();
        }
        (m1, m2)
    }

    /// Clamps `x` into `[-B, B]`.
    pub fn clamp(&self, x: f64) -> f64 {
        x.clamp(-self.half_width, self.half_width)
    }
}
