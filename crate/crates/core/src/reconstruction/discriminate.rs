//! Separating flux noise from photon shot noise with two transitions.
//!
//! Model per frequency: `S01 = S_Φ + S_n`, `S12 = S_Φ + r·S_n` with
//! `r = (χ^(1,2)/χ^(0,1))²`.

use serde::{Deserialize, Serialize};

use super::correct::PsdEstimate;
use super::fit::jackknife_sigma;
use crate::error::{QnsError, Result};

const MIN_RATIO_GAP: f64 = 0.05;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComponentFlags {
    /// Negative flux component within 2σ of zero, clipped.
    pub flux_clipped: bool,
    pub photon_clipped: bool,
    /// Negative beyond 2σ; kept as is.
    pub flux_negative: bool,
    pub photon_negative: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceComponents {
    pub freqs: Vec<f64>,
    pub s01: Vec<f64>,
    pub s12: Vec<f64>,
    pub s_flux: Vec<f64>,
    pub sigma_flux: Vec<f64>,
    pub s_photon: Vec<f64>,
    pub sigma_photon: Vec<f64>,
    pub flags: Vec<ComponentFlags>,
    pub ratio: f64,
}

impl SourceComponents {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("omega_MHz,S01,S12,S_flux,sigma_flux,S_photon,sigma_photon,flags\n");
        for i in 0..self.freqs.len() {
            let f = self.flags[i];
            let mut tags = Vec::new();
            if f.flux_clipped {
                tags.push("flux_clipped");
            }
            if f.photon_clipped {
                tags.push("photon_clipped");
            }
            if f.flux_negative {
                tags.push("flux_negative");
            }
            if f.photon_negative {
                tags.push("photon_negative");
            }
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                self.freqs[i],
                self.s01[i],
                self.s12[i],
                self.s_flux[i],
                self.sigma_flux[i],
                self.s_photon[i],
                self.sigma_photon[i],
                tags.join("|")
            ));
        }
        s
    }
}

/// Invert the two-source model at one frequency. Returns
/// `((S_Φ, σ_Φ), (S_n, σ_n))` before clipping.
pub fn solve_components(s01: (f64, f64), s12: (f64, f64), r: f64) -> ((f64, f64), (f64, f64)) {
    let k = r - 1.0;
    let sn = (s12.0 - s01.0) / k;
    let sf = (r * s01.0 - s12.0) / k;
    let sig_n = s12.1.hypot(s01.1) / k.abs();
    let sig_f = (r * s01.1).hypot(s12.1) / k.abs();
    ((sf, sig_f), (sn, sig_n))
}

fn clip(v: f64, sigma: f64) -> (f64, bool, bool) {
    if v >= 0.0 {
        (v, false, false)
    } else if v >= -2.0 * sigma {
        (0.0, true, false)
    } else {
        (v, false, true)
    }
}

/// Split the lab-frame spectra of the (0,1) and (1,2) transitions into flux
/// and photon parts on the coarser of the two frequency grids.
pub fn discriminate_sources(s01: &PsdEstimate, s12: &PsdEstimate, r: f64) -> Result<SourceComponents> {
    separate(s01, s12, r, |_, quad| quad)
}

/// As [`discriminate_sources`], with component errors from a grouped
/// jackknife over replicate estimates that share noise records between the
/// two transitions. Falls back to independent errors at frequencies the
/// replicates do not cover.
pub fn discriminate_sources_jackknife(
    s01: &PsdEstimate,
    s12: &PsdEstimate,
    r: f64,
    replicates: &[(PsdEstimate, PsdEstimate)],
) -> Result<SourceComponents> {
    separate(s01, s12, r, |w, quad| {
        let mut flux = Vec::with_capacity(replicates.len());
        let mut photon = Vec::with_capacity(replicates.len());
        for (a, b) in replicates {
            let (Some(a), Some(b)) = (a.interpolate(w), b.interpolate(w)) else {
                return quad;
            };
            let ((f, _), (n, _)) = solve_components(a, b, r);
            flux.push(f);
            photon.push(n);
        }
        if replicates.len() < 2 {
            return quad;
        }
        (jackknife_sigma(&flux), jackknife_sigma(&photon))
    })
}

fn separate<F>(s01: &PsdEstimate, s12: &PsdEstimate, r: f64, sigmas: F) -> Result<SourceComponents>
where
    F: Fn(f64, (f64, f64)) -> (f64, f64),
{
    if (r - 1.0).abs() < MIN_RATIO_GAP {
        return Err(QnsError::IllConditioned { ratio: r });
    }
    if s01.units != s12.units {
        return Err(QnsError::InvalidParameter("estimates use different units".into()));
    }
    let grid_src = if s01.points.len() <= s12.points.len() { s01 } else { s12 };
    let mut grid = grid_src.frequencies();
    grid.sort_by(f64::total_cmp);
    let mut out = SourceComponents {
        freqs: Vec::new(),
        s01: Vec::new(),
        s12: Vec::new(),
        s_flux: Vec::new(),
        sigma_flux: Vec::new(),
        s_photon: Vec::new(),
        sigma_photon: Vec::new(),
        flags: Vec::new(),
        ratio: r,
    };
    for w in grid {
        let (Some(a), Some(b)) = (s01.interpolate(w), s12.interpolate(w)) else {
            continue;
        };
        let ((sf, sgf), (sn, sgn)) = solve_components(a, b, r);
        let (sgf, sgn) = sigmas(w, (sgf, sgn));
        let (sf, fc, fneg) = clip(sf, sgf);
        let (sn, pc, pneg) = clip(sn, sgn);
        out.freqs.push(w);
        out.s01.push(a.0);
        out.s12.push(b.0);
        out.s_flux.push(sf);
        out.sigma_flux.push(sgf);
        out.s_photon.push(sn);
        out.sigma_photon.push(sgn);
        out.flags.push(ComponentFlags {
            flux_clipped: fc,
            photon_clipped: pc,
            flux_negative: fneg,
            photon_negative: pneg,
        });
    }
    if out.freqs.is_empty() {
        return Err(QnsError::InvalidParameter(
            "the two estimates share no frequency range".into(),
        ));
    }
    Ok(out)
}
