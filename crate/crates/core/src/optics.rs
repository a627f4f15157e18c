//! IM-DD capacity model for a single WDM-FSO wavelength and the inverse
//! intensity sizing used by lightpath provisioning.
//!
//! Capacity of a wavelength carrying intensity `E` over a channel with
//! composite gain `h` and per-wavelength bandwidth `B` is
//!
//! ```text
//! C = B/2 * log2(1 + e * h^2 * E^2 / (2*pi))
//! ```
//!
//! and the intensity needed to reach a target capacity `C` is
//!
//! ```text
//! E = sqrt((2^(2C/B) - 1) * 2*pi / (e * h^2))
//! ```
//!
//! Both are evaluated with `ln_1p`/`exp_m1` so that small capacities keep
//! full relative precision.

use std::f64::consts::{E, LN_2, PI};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OpticsError {
    #[error("{name} must be finite and non-negative, got {value}")]
    NegativeOrNonFinite { name: &'static str, value: f64 },
    #[error("{name} must be finite and strictly positive, got {value}")]
    NotPositive { name: &'static str, value: f64 },
    #[error("wavelength count must be at least 1")]
    NoWavelengths,
}

fn non_negative(name: &'static str, value: f64) -> Result<f64, OpticsError> {
    if value.is_finite() && value >= 0.0 {
        Ok(value)
    } else {
        Err(OpticsError::NegativeOrNonFinite { name, value })
    }
}

fn positive(name: &'static str, value: f64) -> Result<f64, OpticsError> {
    if value.is_finite() && value > 0.0 {
        Ok(value)
    } else {
        Err(OpticsError::NotPositive { name, value })
    }
}

/// Optical channel gain of one FSO link, constant for the whole run.
///
/// The composite gain is the product of the detector response, path loss,
/// turbulence and pointing factors. Turbulence and pointing are plain
/// constants here; no fading process is simulated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GainFactors", into = "GainFactors")]
pub struct ChannelGain {
    detector_response: f64,
    path_loss: f64,
    turbulence: f64,
    pointing: f64,
    composite: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct GainFactors {
    detector_response: f64,
    path_loss: f64,
    turbulence: f64,
    pointing: f64,
}

impl TryFrom<GainFactors> for ChannelGain {
    type Error = OpticsError;

    fn try_from(f: GainFactors) -> Result<Self, Self::Error> {
        ChannelGain::new(f.detector_response, f.path_loss, f.turbulence, f.pointing)
    }
}

impl From<ChannelGain> for GainFactors {
    fn from(g: ChannelGain) -> Self {
        GainFactors {
            detector_response: g.detector_response,
            path_loss: g.path_loss,
            turbulence: g.turbulence,
            pointing: g.pointing,
        }
    }
}

impl ChannelGain {
    pub fn new(
        detector_response: f64,
        path_loss: f64,
        turbulence: f64,
        pointing: f64,
    ) -> Result<Self, OpticsError> {
        positive("detector response", detector_response)?;
        positive("path loss", path_loss)?;
        positive("turbulence", turbulence)?;
        positive("pointing", pointing)?;
        Ok(ChannelGain {
            detector_response,
            path_loss,
            turbulence,
            pointing,
            composite: detector_response * path_loss * turbulence * pointing,
        })
    }

    /// A gain whose composite value is `h` (all of it attributed to path loss).
    pub fn composite_only(h: f64) -> Result<Self, OpticsError> {
        ChannelGain::new(1.0, h, 1.0, 1.0)
    }

    /// All factors equal to one; the default for every link.
    pub fn unit() -> Self {
        ChannelGain {
            detector_response: 1.0,
            path_loss: 1.0,
            turbulence: 1.0,
            pointing: 1.0,
            composite: 1.0,
        }
    }

    pub fn composite(&self) -> f64 {
        self.composite
    }

    pub fn detector_response(&self) -> f64 {
        self.detector_response
    }

    pub fn path_loss(&self) -> f64 {
        self.path_loss
    }

    pub fn turbulence(&self) -> f64 {
        self.turbulence
    }

    pub fn pointing(&self) -> f64 {
        self.pointing
    }
}

impl Default for ChannelGain {
    fn default() -> Self {
        ChannelGain::unit()
    }
}

/// Per-link optical parameters shared by every link of a topology.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpticalParams {
    /// Bandwidth of a single wavelength, Hz.
    pub bandwidth_hz: f64,
    /// Total intensity a transmitter may spread over the wavelengths of one link.
    pub intensity_budget: f64,
    /// Wavelengths per link.
    pub wavelengths: usize,
}

impl OpticalParams {
    pub fn new(
        bandwidth_hz: f64,
        intensity_budget: f64,
        wavelengths: usize,
    ) -> Result<Self, OpticsError> {
        let params = OpticalParams {
            bandwidth_hz,
            intensity_budget,
            wavelengths,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<(), OpticsError> {
        positive("bandwidth", self.bandwidth_hz)?;
        positive("intensity budget", self.intensity_budget)?;
        if self.wavelengths == 0 {
            return Err(OpticsError::NoWavelengths);
        }
        Ok(())
    }
}

/// `e / (2*pi)`, the SNR scale of the IM-DD lower bound.
const SNR_SCALE: f64 = E / (2.0 * PI);

/// Achievable bit rate (bits/s) of one wavelength carrying `intensity`.
pub fn wavelength_capacity(
    gain: &ChannelGain,
    intensity: f64,
    bandwidth_hz: f64,
) -> Result<f64, OpticsError> {
    non_negative("intensity", intensity)?;
    positive("bandwidth", bandwidth_hz)?;
    let h = gain.composite();
    let snr = SNR_SCALE * h * h * intensity * intensity;
    Ok(0.5 * bandwidth_hz * snr.ln_1p() / LN_2)
}

/// Intensity that makes [`wavelength_capacity`] equal `target_bps`.
pub fn intensity_for_capacity(
    gain: &ChannelGain,
    target_bps: f64,
    bandwidth_hz: f64,
) -> Result<f64, OpticsError> {
    non_negative("target capacity", target_bps)?;
    positive("bandwidth", bandwidth_hz)?;
    let h = gain.composite();
    let snr = (2.0 * target_bps / bandwidth_hz * LN_2).exp_m1();
    let intensity = (snr / (SNR_SCALE * h * h)).sqrt();
    if intensity.is_finite() {
        Ok(intensity)
    } else {
        Err(OpticsError::NegativeOrNonFinite {
            name: "required intensity",
            value: intensity,
        })
    }
}

/// True iff the allocations fit in the transmitter budget (boundary inclusive).
pub fn intensity_budget_ok(allocations: &[f64], budget: f64) -> bool {
    allocations.iter().sum::<f64>() <= budget
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rel(a: f64, b: f64) -> f64 {
        if b == 0.0 {
            a.abs()
        } else {
            ((a - b) / b).abs()
        }
    }

    #[test]
    fn zero_intensity_gives_zero_capacity() {
        for h in [0.1, 1.0, 7.5] {
            let g = ChannelGain::composite_only(h).unwrap();
            assert_eq!(wavelength_capacity(&g, 0.0, 1e9).unwrap(), 0.0);
        }
    }

    #[test]
    fn unit_snr_gives_half_bandwidth() {
        // e*h^2*E^2/(2pi) = 1 with h = 1
        let g = ChannelGain::unit();
        let e = (2.0 * PI / E).sqrt();
        let c = wavelength_capacity(&g, e, 2.0).unwrap();
        assert!(rel(c, 1.0) < 1e-12, "{c}");
    }

    #[test]
    fn snr_three_gives_one_gigabit() {
        let g = ChannelGain::unit();
        let e = (2.0 * PI / E).sqrt() * 3f64.sqrt();
        let c = wavelength_capacity(&g, e, 1e9).unwrap();
        assert!(rel(c, 1e9) < 1e-12, "{c}");
    }

    #[test]
    fn inverse_examples() {
        let g = ChannelGain::composite_only(2.0).unwrap();
        assert_eq!(intensity_for_capacity(&g, 0.0, 5e9).unwrap(), 0.0);
        // C = B/2 -> 2^1 - 1 = 1
        let e = intensity_for_capacity(&g, 2.5e9, 5e9).unwrap();
        let expected = (2.0 * PI / (E * 4.0)).sqrt();
        assert!(rel(e, expected) < 1e-12);
    }

    #[test]
    fn domain_errors() {
        let g = ChannelGain::unit();
        assert!(wavelength_capacity(&g, -1.0, 1e9).is_err());
        assert!(wavelength_capacity(&g, f64::NAN, 1e9).is_err());
        assert!(wavelength_capacity(&g, 1.0, 0.0).is_err());
        assert!(intensity_for_capacity(&g, -1.0, 1e9).is_err());
        assert!(intensity_for_capacity(&g, f64::INFINITY, 1e9).is_err());
        // 2^(2C/B) overflows f64
        assert!(intensity_for_capacity(&g, 1e12, 1.0).is_err());
        assert!(ChannelGain::new(0.0, 1.0, 1.0, 1.0).is_err());
        assert!(OpticalParams::new(1e9, 1.0, 0).is_err());
    }

    #[test]
    fn budget_boundary() {
        assert!(intensity_budget_ok(&[], 5.0));
        assert!(intensity_budget_ok(&[2.0, 3.0], 5.0));
        assert!(!intensity_budget_ok(&[2.0, 3.5], 5.0));
    }

    #[test]
    fn gain_serde_recomputes_composite() {
        let g = ChannelGain::new(0.5, 0.8, 0.9, 0.95).unwrap();
        let json = serde_json::to_string(&g).unwrap();
        let back: ChannelGain = serde_json::from_str(&json).unwrap();
        assert_eq!(back, g);
        assert!(rel(g.composite(), 0.5 * 0.8 * 0.9 * 0.95) <= 1e-12);
        assert!(serde_json::from_str::<ChannelGain>(
            r#"{"detector_response":0,"path_loss":1,"turbulence":1,"pointing":1}"#
        )
        .is_err());
    }

    proptest! {
        #[test]
        fn capacity_inverts_intensity(h in 0.1f64..10.0, b in 1e6f64..1e11, frac in 0.0f64..10.0) {
            let g = ChannelGain::composite_only(h).unwrap();
            let c = frac * b;
            let e = intensity_for_capacity(&g, c, b).unwrap();
            let back = wavelength_capacity(&g, e, b).unwrap();
            prop_assert!(rel(back, c) <= 1e-9 || (c == 0.0 && back == 0.0));
        }

        #[test]
        fn capacity_monotone(h in 0.1f64..10.0, e in 1e-3f64..50.0, d in 1e-3f64..5.0) {
            let g = ChannelGain::composite_only(h).unwrap();
            let g2 = ChannelGain::composite_only(h * (1.0 + d)).unwrap();
            let c = wavelength_capacity(&g, e, 1e9).unwrap();
            prop_assert!(wavelength_capacity(&g, e + d, 1e9).unwrap() > c);
            prop_assert!(wavelength_capacity(&g2, e, 1e9).unwrap() > c);
        }

        #[test]
        fn capacity_linear_in_bandwidth(e in 0.0f64..20.0, b in 1e6f64..1e10, m in 1.0f64..100.0) {
            let g = ChannelGain::unit();
            let c1 = wavelength_capacity(&g, e, b).unwrap();
            let c2 = wavelength_capacity(&g, e, b * m).unwrap();
            prop_assert!(rel(c2, c1 * m) <= 1e-12 || c1 == 0.0);
        }
    }
}
