//! Delay signatures and array steering vectors.
//!
//! The delay signature over the occupied tones is
//! `a_tau(tau)[m] = exp(-j 2 pi f_m tau)` with `f_m` from
//! [`WaveformConfig::tone_frequency_hz`]. The ideal steering vector of a
//! linear array is `a_theta(theta)[n] = exp(j 2 pi / lambda * d_n *
//! sin(theta))`; the true (imperfect) steering vector multiplies each entry
//! by the antenna's direction-dependent phase error.

use ndarray::Array1;
use num_complex::Complex64;
use std::f64::consts::PI;

use crate::types::{ArrayGeometry, Error, PhaseErrorTable, Result, WaveformConfig};

/// Delay signature vector across all occupied tones. Each entry has unit
/// modulus by construction. `tau_s` must be finite.
pub fn delay_signature(cfg: &WaveformConfig, tau_s: f64) -> Array1<Complex64> {
    debug_assert!(tau_s.is_finite(), "delay must be finite");
    Array1::from_shape_fn(cfg.num_subcarriers, |idx| {
        Complex64::cis(-2.0 * PI * cfg.tone_frequency_hz(idx) * tau_s)
    })
}

/// Error-free steering vector for a plane wave from `theta_deg` (measured
/// from array broadside). The model is only valid strictly inside the
/// array's front half-space.
pub fn ideal_steering(geom: &ArrayGeometry, theta_deg: f64) -> Result<Array1<Complex64>> {
    if !theta_deg.is_finite() || theta_deg <= -90.0 || theta_deg >= 90.0 {
        return Err(Error::AngleOutOfRange {
            angle_deg: theta_deg,
            context: "steering is defined on (-90, 90) deg".into(),
        });
    }
    let sin_theta = (theta_deg * PI / 180.0).sin();
    let k = 2.0 * PI / geom.wavelength_m;
    Ok(Array1::from_iter(
        geom.element_positions_m
            .iter()
            .map(|&d| Complex64::cis(k * d * sin_theta)),
    ))
}

/// Steering vector of the physical (imperfect) array: the ideal response
/// with each antenna's interpolated phase error applied. Fails outside the
/// table's angular span because ground truth is never extrapolated.
pub fn true_steering(
    geom: &ArrayGeometry,
    table: &PhaseErrorTable,
    theta_deg: f64,
) -> Result<Array1<Complex64>> {
    if table.num_antennas() != geom.num_elements() {
        return Err(Error::InvalidConfig(format!(
            "phase table has {} antennas but geometry has {}",
            table.num_antennas(),
            geom.num_elements()
        )));
    }
    let mut v = ideal_steering(geom, theta_deg)?;
    for (n, entry) in v.iter_mut().enumerate() {
        *entry *= Complex64::cis(table.phase_at(n, theta_deg)?);
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::Array2;
    use crate::types::SPEED_OF_LIGHT_M_S;

    #[test]
    fn delay_signature_matches_hand_computed_tones() {
        // two comb-two tones at 30 kHz spacing land on {f_c, f_c + 60 kHz};
        // at tau = 10 ns the first tone sees exactly 48.5 carrier cycles
        let cfg = WaveformConfig::new(4.85e9, 30e3, 2, 2, 60e3).unwrap();
        let a = delay_signature(&cfg, 10e-9);
        assert_abs_diff_eq!(a[0].re, -1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(a[0].im, 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(a[1].re, -0.9999928938932475, epsilon = 1e-9);
        assert_abs_diff_eq!(a[1].im, 0.0037699022544687207, epsilon = 1e-9);
    }

    #[test]
    fn delay_signature_entries_have_unit_modulus() {
        let cfg = WaveformConfig::new(4.85e9, 30e3, 64, 1, 1.92e6).unwrap();
        for &tau in &[0.0, 3.3e-8, 1.7e-7, 9.9e-7] {
            let a = delay_signature(&cfg, tau);
            for (m, v) in a.iter().enumerate() {
                assert!(
                    (v.norm() - 1.0).abs() < 1e-12,
                    "tone {m} at tau={tau}: |a|={}",
                    v.norm()
                );
            }
        }
    }

    #[test]
    fn zero_delay_gives_all_ones() {
        let cfg = WaveformConfig::new(4.85e9, 30e3, 16, 2, 0.96e6).unwrap();
        let a = delay_signature(&cfg, 0.0);
        for v in a.iter() {
            assert_abs_diff_eq!(v.re, 1.0, epsilon = 1e-15);
            assert_abs_diff_eq!(v.im, 0.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn ideal_steering_matches_hand_computed_phases() {
        // 4 elements at 3 cm pitch, lambda = c / 4.85 GHz, theta = 17 deg
        let lambda = SPEED_OF_LIGHT_M_S / 4.85e9;
        let geom = ArrayGeometry::ula(4, 0.03, lambda).unwrap();
        let v = ideal_steering(&geom, 17.0).unwrap();
        let expected = [
            (1.0, 0.0),
            (0.6281879710025957, 0.7780616126552202),
            (-0.2107597461752838, 0.9775378915377807),
            (-0.892981445640343, 0.45009347667132793),
        ];
        for (n, (re, im)) in expected.iter().enumerate() {
            assert_abs_diff_eq!(v[n].re, *re, epsilon = 1e-12);
            assert_abs_diff_eq!(v[n].im, *im, epsilon = 1e-12);
        }
    }

    #[test]
    fn steering_at_broadside_is_all_ones_and_domain_is_open() {
        let geom = ArrayGeometry::half_wavelength_ula(4, 4.85e9).unwrap();
        let v = ideal_steering(&geom, 0.0).unwrap();
        for e in v.iter() {
            assert_abs_diff_eq!(e.re, 1.0, epsilon = 1e-15);
            assert_abs_diff_eq!(e.im, 0.0, epsilon = 1e-15);
        }
        assert!(ideal_steering(&geom, 90.0).is_err());
        assert!(ideal_steering(&geom, -90.0).is_err());
        assert!(ideal_steering(&geom, f64::NAN).is_err());
    }

    #[test]
    fn true_steering_applies_interpolated_errors() {
        let geom = ArrayGeometry::half_wavelength_ula(3, 4.85e9).unwrap();
        let angles = vec![-60.0, 60.0];
        let mut m = Array2::zeros((2, 3));
        m[(0, 1)] = 0.3;
        m[(1, 1)] = 0.3;
        m[(0, 2)] = -0.5;
        m[(1, 2)] = 0.7;
        let table = PhaseErrorTable::new(angles, m).unwrap();
        let ideal = ideal_steering(&geom, 0.0).unwrap();
        let real = true_steering(&geom, &table, 0.0).unwrap();
        // antenna 0 untouched, antenna 1 rotated by 0.3 rad, antenna 2 by the
        // midpoint of -0.5 and 0.7 = 0.1 rad
        assert_abs_diff_eq!((real[0] / ideal[0]).arg(), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!((real[1] / ideal[1]).arg(), 0.3, epsilon = 1e-12);
        assert_abs_diff_eq!((real[2] / ideal[2]).arg(), 0.1, epsilon = 1e-12);
        // outside the table span the truth is undefined
        assert!(true_steering(&geom, &table, 61.0).is_err());
    }
}
