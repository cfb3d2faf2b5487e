//! Small dense complex matrices and the split-step propagator.
//!
//! One step of length `h` with the noise sampled at the step midpoint:
//!
//! `ψ ← U(h/2) D(b) U(h/2) ψ`, `U(t) = exp(-i 2π H₀ t)`, `D(b) = diag(e^{-i b_k h})`
//!
//! where `H₀` is the real symmetric RWA Hamiltonian (MHz) and `b_k` the
//! level noise (rad/μs). With relaxation the unitary is sandwiched between
//! two half-step amplitude-damping channels.

use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;

type C = Complex64;

/// Row-major square complex matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CMat {
    pub dim: usize,
    pub data: Vec<C>,
}

impl CMat {
    pub fn zeros(dim: usize) -> Self {
        CMat {
            dim,
            data: vec![C::new(0.0, 0.0); dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.data[i * dim + i] = C::new(1.0, 0.0);
        }
        m
    }

    pub fn from_real(m: &DMatrix<f64>) -> Self {
        let dim = m.nrows();
        let mut out = Self::zeros(dim);
        for r in 0..dim {
            for c in 0..dim {
                out.data[r * dim + c] = C::new(m[(r, c)], 0.0);
            }
        }
        out
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> C {
        self.data[r * self.dim + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: C) {
        self.data[r * self.dim + c] = v;
    }

    pub fn mul(&self, other: &CMat) -> CMat {
        let d = self.dim;
        let mut out = CMat::zeros(d);
        for r in 0..d {
            for k in 0..d {
                let a = self.data[r * d + k];
                if a == C::new(0.0, 0.0) {
                    continue;
                }
                for c in 0..d {
                    out.data[r * d + c] += a * other.data[k * d + c];
                }
            }
        }
        out
    }

    pub fn adjoint(&self) -> CMat {
        let d = self.dim;
        let mut out = CMat::zeros(d);
        for r in 0..d {
            for c in 0..d {
                out.data[c * d + r] = self.data[r * d + c].conj();
            }
        }
        out
    }

    /// `y = M x`.
    #[inline]
    pub fn apply(&self, x: &[C], y: &mut [C]) {
        let d = self.dim;
        for r in 0..d {
            let row = &self.data[r * d..(r + 1) * d];
            let mut acc = C::new(0.0, 0.0);
            for (m, v) in row.iter().zip(x) {
                acc += m * v;
            }
            y[r] = acc;
        }
    }

    /// `M ρ M†`.
    pub fn conjugate(&self, rho: &CMat) -> CMat {
        self.mul(rho).mul(&self.adjoint())
    }

    pub fn trace(&self) -> C {
        (0..self.dim).map(|i| self.at(i, i)).sum()
    }

    /// Smallest eigenvalue of a Hermitian matrix.
    pub fn min_eigenvalue(&self) -> f64 {
        let d = self.dim;
        let m = DMatrix::from_fn(d, d, |r, c| 0.5 * (self.at(r, c) + self.at(c, r).conj()));
        SymmetricEigen::new(m)
            .eigenvalues
            .iter()
            .fold(f64::INFINITY, |a, &b| a.min(b))
    }

    pub fn max_abs_diff(&self, other: &CMat) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).norm()))
    }
}

/// `exp(-i 2π H t)` for real symmetric `H` in MHz and `t` in μs.
pub fn exact_propagator(h: &DMatrix<f64>, t: f64) -> CMat {
    let d = h.nrows();
    let eig = SymmetricEigen::new(h.clone());
    let v = &eig.eigenvectors;
    let phases: Vec<C> = eig
        .eigenvalues
        .iter()
        .map(|&e| C::from_polar(1.0, -2.0 * PI * e * t))
        .collect();
    let mut out = CMat::zeros(d);
    for r in 0..d {
        for c in 0..d {
            let mut acc = C::new(0.0, 0.0);
            for k in 0..d {
                acc += phases[k] * (v[(r, k)] * v[(c, k)]);
            }
            out.set(r, c, acc);
        }
    }
    out
}

/// Ideal rotation about y by `theta` in the (a, b) subspace.
pub fn rotation_y(dim: usize, a: usize, b: usize, theta: f64) -> CMat {
    let mut m = CMat::identity(dim);
    let (s, c) = (0.5 * theta).sin_cos();
    m.set(a, a, C::new(c, 0.0));
    m.set(b, b, C::new(c, 0.0));
    m.set(a, b, C::new(-s, 0.0));
    m.set(b, a, C::new(s, 0.0));
    m
}

/// Amplitude-damping channel for ladder decay over time `t`:
/// `K_k = sqrt(p_k)|k-1><k|`, `K_0 = diag(sqrt(1-p_k))`, `p_k = 1 - e^{-Γ_k t}`.
#[derive(Debug, Clone)]
pub struct DampingChannel {
    keep: Vec<f64>,
    jump: Vec<f64>,
}

impl DampingChannel {
    /// `gamma1[k-1] = Γ₁^(k-1,k)`.
    pub fn new(gamma1: &[f64], dim: usize, t: f64) -> Self {
        let mut keep = vec![1.0; dim];
        let mut jump = vec![0.0; dim];
        for k in 1..dim {
            let g = gamma1.get(k - 1).copied().unwrap_or(0.0);
            let p = 1.0 - (-g * t).exp();
            keep[k] = (1.0 - p).sqrt();
            jump[k] = p.sqrt();
        }
        DampingChannel { keep, jump }
    }

    /// Kraus operators `diag(keep)` and `jump_k |k-1⟩⟨k|`, one per transition.
    pub fn apply(&self, rho: &CMat) -> CMat {
        let mut out = rho.clone();
        self.apply_in_place(&mut out);
        out
    }

    pub fn apply_in_place(&self, rho: &mut CMat) {
        let d = rho.dim;
        let mut carry = C::new(0.0, 0.0);
        for r in (0..d).rev() {
            let pop = rho.data[r * d + r];
            for c in 0..d {
                rho.data[r * d + c] *= self.keep[r] * self.keep[c];
            }
            rho.data[r * d + r] += carry;
            carry = pop * (self.jump[r] * self.jump[r]);
        }
    }
}

/// Reusable buffers for [`SplitStep::step_mixed`].
#[derive(Debug, Clone)]
pub struct MixedScratch {
    u: CMat,
    tmp: CMat,
}

impl MixedScratch {
    pub fn new(dim: usize) -> Self {
        MixedScratch {
            u: CMat::zeros(dim),
            tmp: CMat::zeros(dim),
        }
    }
}

/// Split-step propagator for a fixed `H₀` and step `h`.
#[derive(Debug, Clone)]
pub struct SplitStep {
    pub step: f64,
    half: CMat,
    damping: Option<DampingChannel>,
    scratch: Vec<C>,
}

impl SplitStep {
    pub fn new(h0: &DMatrix<f64>, step: f64, gamma1: &[f64]) -> Self {
        let d = h0.nrows();
        let damping = if gamma1.iter().any(|&g| g > 0.0) {
            Some(DampingChannel::new(gamma1, d, 0.5 * step))
        } else {
            None
        };
        SplitStep {
            step,
            half: exact_propagator(h0, 0.5 * step),
            damping,
            scratch: vec![C::new(0.0, 0.0); d],
        }
    }

    pub fn is_dissipative(&self) -> bool {
        self.damping.is_some()
    }

    /// One step on a pure state with midpoint noise `b` (rad/μs).
    #[inline]
    pub fn step_pure(&mut self, psi: &mut [C], b: &[f64]) {
        self.half.apply(psi, &mut self.scratch);
        for (k, x) in self.scratch.iter_mut().enumerate() {
            let bk = b[k];
            if bk != 0.0 {
                *x *= C::from_polar(1.0, -bk * self.step);
            }
        }
        self.half.apply(&self.scratch, psi);
    }

    /// The unitary of one step with midpoint noise `b`.
    pub fn step_unitary(&self, b: &[f64]) -> CMat {
        let d = self.half.dim;
        let mut mid = self.half.clone();
        for r in 0..d {
            let ph = C::from_polar(1.0, -b[r] * self.step);
            for c in 0..d {
                mid.data[r * d + c] *= ph;
            }
        }
        self.half.mul(&mid)
    }

    /// One step on a density matrix.
    pub fn step_mixed(&self, rho: &mut CMat, b: &[f64], s: &mut MixedScratch) {
        let d = self.half.dim;
        let half = &self.half.data;
        // U = U(h/2) D(b) U(h/2); D is staged in the first row of tmp.
        for k in 0..d {
            s.tmp.data[k] = C::from_polar(1.0, -b[k] * self.step);
        }
        for r in 0..d {
            for c in 0..d {
                let mut acc = C::new(0.0, 0.0);
                for k in 0..d {
                    acc += half[r * d + k] * s.tmp.data[k] * half[k * d + c];
                }
                s.u.data[r * d + c] = acc;
            }
        }
        if let Some(k) = &self.damping {
            k.apply_in_place(rho);
        }
        // tmp = U ρ, ρ = tmp U†
        for r in 0..d {
            for c in 0..d {
                let mut acc = C::new(0.0, 0.0);
                for k in 0..d {
                    acc += s.u.data[r * d + k] * rho.data[k * d + c];
                }
                s.tmp.data[r * d + c] = acc;
            }
        }
        for r in 0..d {
            for c in 0..d {
                let mut acc = C::new(0.0, 0.0);
                for k in 0..d {
                    acc += s.tmp.data[r * d + k] * s.u.data[c * d + k].conj();
                }
                rho.data[r * d + c] = acc;
            }
        }
        if let Some(k) = &self.damping {
            k.apply_in_place(rho);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn propagator_is_unitary_and_composes() {
        let h = DMatrix::from_row_slice(3, 3, &[0.0, 5.0, 0.0, 5.0, 1.0, 7.0, 0.0, 7.0, -200.0]);
        let u = exact_propagator(&h, 0.01);
        assert!(u.mul(&u.adjoint()).max_abs_diff(&CMat::identity(3)) < 1e-13);
        let u2 = exact_propagator(&h, 0.02);
        assert!(u.mul(&u).max_abs_diff(&u2) < 1e-13);
    }

    #[test]
    fn two_level_rabi_phase() {
        // H = (A/2) σx with A = 10 MHz: full transfer after 1/(2A) = 0.05 μs.
        let h = DMatrix::from_row_slice(2, 2, &[0.0, 5.0, 5.0, 0.0]);
        let u = exact_propagator(&h, 0.05);
        assert!(u.at(1, 0).norm() > 1.0 - 1e-12);
    }

    #[test]
    fn split_step_matches_exact_for_static_noise() {
        let h = DMatrix::from_row_slice(2, 2, &[0.0, 5.0, 5.0, 0.0]);
        let b = [0.0, 3.0];
        let mut hb = h.clone();
        hb[(1, 1)] += 3.0 / (2.0 * PI);
        let exact = exact_propagator(&hb, 0.1);
        let mut ss = SplitStep::new(&h, 1e-4, &[]);
        let mut psi = vec![C::new(1.0, 0.0), C::new(0.0, 0.0)];
        for _ in 0..1000 {
            ss.step_pure(&mut psi, &b);
        }
        let mut want = vec![C::new(0.0, 0.0); 2];
        exact.apply(&[C::new(1.0, 0.0), C::new(0.0, 0.0)], &mut want);
        for k in 0..2 {
            assert!((psi[k] - want[k]).norm() < 1e-7);
        }
    }

    #[test]
    fn damping_preserves_trace_and_decays() {
        let ch = DampingChannel::new(&[0.5, 1.0], 3, 0.1);
        let mut rho = CMat::zeros(3);
        rho.set(2, 2, C::new(1.0, 0.0));
        let out = ch.apply(&rho);
        assert!((out.trace().re - 1.0).abs() < 1e-15);
        assert!((out.at(2, 2).re - (-0.1f64).exp()).abs() < 1e-15);
        assert!(out.min_eigenvalue() >= -1e-15);
    }

    #[test]
    fn damping_does_not_transfer_coherence() {
        let ch = DampingChannel::new(&[0.5, 1.0], 3, 0.1);
        let mut rho = CMat::zeros(3);
        for r in 1..3 {
            for c in 1..3 {
                rho.set(r, c, C::new(0.5, 0.0));
            }
        }
        let out = ch.apply(&rho);
        assert_eq!(out.at(0, 1), C::new(0.0, 0.0));
        let keep = |g: f64| (-0.5 * g * 0.1f64).exp();
        assert!((out.at(1, 2).re - 0.5 * keep(0.5) * keep(1.0)).abs() < 1e-15);
        assert!((out.at(0, 0).re - 0.5 * (1.0 - (-0.05f64).exp())).abs() < 1e-15);
    }

    #[test]
    fn rotations() {
        let r = rotation_y(3, 1, 2, PI);
        let mut y = vec![C::new(0.0, 0.0); 3];
        r.apply(&[C::new(0.0, 0.0), C::new(1.0, 0.0), C::new(0.0, 0.0)], &mut y);
        assert!((y[2].re - 1.0).abs() < 1e-15);
    }
}
