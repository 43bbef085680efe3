//! Phase arithmetic helpers: wrapping to (-pi, pi], sequence unwrapping and
//! circular averaging.

use std::f64::consts::PI;

/// Wrap a phase to the half-open interval (-pi, pi].
pub fn wrap_phase(phi: f64) -> f64 {
    if !phi.is_finite() {
        return phi;
    }
    let two_pi = 2.0 * PI;
    let mut w = phi % two_pi;
    if w <= -PI {
        w += two_pi;
    } else if w > PI {
        w -= two_pi;
    }
    w
}

/// Unwrap a phase sequence in place: successive differences are folded into
/// (-pi, pi] so the result has no artificial 2*pi jumps.
pub fn unwrap_in_place(phases: &mut [f64]) {
    for i in 1..phases.len() {
        let delta = wrap_phase(phases[i] - phases[i - 1]);
        phases[i] = phases[i - 1] + delta;
    }
}

/// Circular mean of a set of phases, wrapped to (-pi, pi].
/// Returns 0 for an empty slice (the natural additive identity here).
pub fn circular_mean(phases: &[f64]) -> f64 {
    if phases.is_empty() {
        return 0.0;
    }
    let (mut s, mut c) = (0.0, 0.0);
    for &p in phases {
        s += p.sin();
        c += p.cos();
    }
    wrap_phase(s.atan2(c))
}
