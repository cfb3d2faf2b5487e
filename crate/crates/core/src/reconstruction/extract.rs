//! Locked-frame rates and polarization to transverse noise power.
//!
//! Forward map for transverse spectrum values `S(±Ω)`:
//! `Γ₁ρ = S(Ω) + S(-Ω)`, `sz_eq = (S(Ω) - S(-Ω)) / (S(Ω) + S(-Ω))`.

use serde::{Deserialize, Serialize};

use super::fit::RelaxationFit;
use crate::error::{QnsError, Result};

/// `(Γ₁ρ, sz_eq)` from `(S(Ω), S(-Ω))`.
pub fn locked_rates(s_plus: f64, s_minus: f64) -> (f64, f64) {
    let g = s_plus + s_minus;
    let sz = if g != 0.0 { (s_plus - s_minus) / g } else { 0.0 };
    (g, sz)
}

/// `(S(Ω), S(-Ω))` from `(Γ₁ρ, sz_eq)`.
pub fn spectrum_from_rates(gamma: f64, sz_eq: f64) -> (f64, f64) {
    (0.5 * (1.0 + sz_eq) * gamma, 0.5 * (1.0 - sz_eq) * gamma)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransverseEstimate {
    /// S̃_⊥(Ω) (1/μs).
    pub value: f64,
    pub sigma: f64,
    /// Presence rate below absence rate by more than 2σ.
    pub negative: bool,
}

/// `S̃_⊥(Ω) = ((1 + sz_pres)/2)(Γ_pres - Γ_abs)` with errors in quadrature.
pub fn extract_transverse_psd(pres: &RelaxationFit, abs: &RelaxationFit) -> Result<TransverseEstimate> {
    if pres.target != abs.target {
        return Err(QnsError::InvalidParameter(format!(
            "presence fit targets {} but absence fit targets {}",
            pres.target, abs.target
        )));
    }
    let k = 0.5 * (1.0 + pres.sz_eq);
    let dg = pres.gamma_1rho - abs.gamma_1rho;
    let sg = pres.stderr.gamma_1rho.hypot(abs.stderr.gamma_1rho);
    let value = k * dg;
    let sigma = (k * sg).hypot(0.5 * dg * pres.stderr.sz_eq);
    Ok(TransverseEstimate {
        value,
        sigma,
        negative: dg < -2.0 * sg,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reconstruction::fit::FitErrors;
    use proptest::prelude::*;

    fn fit(g: f64, sz: f64, sg: f64) -> RelaxationFit {
        RelaxationFit {
            target: 1,
            gamma_1rho: g,
            sz_eq: sz,
            amplitude: 1.0 - sz,
            offset: sz,
            stderr: FitErrors {
                gamma_1rho: sg,
                sz_eq: 0.01,
                amplitude: 0.01,
            },
            chi2_reduced: 1.0,
            rate_unresolved: false,
            evaluations: 10,
        }
    }

    #[test]
    fn equal_rates_give_zero() {
        let e = extract_transverse_psd(&fit(0.2, 0.0, 0.01), &fit(0.2, 0.0, 0.01)).unwrap();
        assert_eq!(e.value, 0.0);
        assert!(!e.negative);
    }

    #[test]
    fn arithmetic() {
        let e = extract_transverse_psd(&fit(0.30, 0.0, 0.01), &fit(0.10, 0.0, 0.01)).unwrap();
        assert!((e.value - 0.10).abs() < 1e-15);
        assert!((e.sigma - 0.5 * 0.01f64.hypot(0.01).hypot(0.2 * 0.01)).abs() < 1e-3);
    }

    #[test]
    fn negative_flag() {
        let e = extract_transverse_psd(&fit(0.10, 0.0, 0.01), &fit(0.30, 0.0, 0.01)).unwrap();
        assert!(e.negative);
    }

    #[test]
    fn mismatched_targets() {
        let mut b = fit(0.1, 0.0, 0.01);
        b.target = 2;
        assert!(extract_transverse_psd(&fit(0.2, 0.0, 0.01), &b).is_err());
    }

    proptest! {
        #[test]
        fn closure(sp in 1e-4f64..10.0, sm in 1e-4f64..10.0) {
            let (g, sz) = locked_rates(sp, sm);
            let (a, b) = spectrum_from_rates(g, sz);
            prop_assert!((a - sp).abs() <= 1e-12 * sp.max(1.0));
            prop_assert!((b - sm).abs() <= 1e-12 * sm.max(1.0));
            // Presence/absence with a background only in the absence fit.
            let e = extract_transverse_psd(&fit(g + 0.3, sz, 0.0), &fit(0.3, 0.0, 0.0)).unwrap();
            prop_assert!((e.value - sp).abs() <= 1e-12 * sp.max(1.0));
        }
    }
}
