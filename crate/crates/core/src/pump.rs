//! Pump preparation: a half-wave plate sets the input polarization of a
//! Gaussian beam, and a polarization Sagnac loop with a spiral phase plate
//! (SPP) converts it into a polarization-OAM non-separable beam.
//!
//! Inside the loop the PBS sends `|H>` counter-clockwise and `|V>` clockwise.
//! The counter-clockwise beam crosses the SPP one way and acquires charge
//! `+l`; the clockwise beam crosses it the other way and acquires `-l`. The
//! offset of the SPP from the loop centre adds a phase `exp(-i phi)` to the
//! clockwise beam. Mirrors act as the identity on the H/V basis.

use std::f64::consts::{FRAC_1_SQRT_2, TAU};

use nalgebra::Vector2;

use crate::error::{Error, Result};
use crate::jones::{half_wave, pbs_reflect, pbs_transmit, phase, JonesMatrix};
use crate::quantum::{Basis, Ket, Label, Pol, Subsystem, C64};

pub const DEFAULT_OAM_WINDOW: u32 = 3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SagnacConfig {
    spp_order: i32,
    asymmetry_phase: f64,
    oam_window: u32,
}

impl SagnacConfig {
    pub fn new(spp_order: i32, asymmetry_phase: f64) -> Result<Self> {
        Self::with_window(spp_order, asymmetry_phase, DEFAULT_OAM_WINDOW)
    }

    /// `oam_window` fixes the pump alphabet to `-window..=window`.
    pub fn with_window(spp_order: i32, asymmetry_phase: f64, oam_window: u32) -> Result<Self> {
        if spp_order.unsigned_abs() > oam_window {
            return Err(Error::OamOutOfRange {
                charge: spp_order,
                min: -(oam_window as i32),
                max: oam_window as i32,
            });
        }
        if !asymmetry_phase.is_finite() {
            return Err(Error::InvalidParameter("asymmetry phase must be finite".into()));
        }
        Ok(SagnacConfig {
            spp_order,
            asymmetry_phase: asymmetry_phase.rem_euclid(TAU),
            oam_window,
        })
    }

    pub fn spp_order(&self) -> i32 {
        self.spp_order
    }

    /// Wrapped to `[0, 2pi)`.
    pub fn asymmetry_phase(&self) -> f64 {
        self.asymmetry_phase
    }

    pub fn oam_window(&self) -> u32 {
        self.oam_window
    }

    pub fn basis(&self) -> Basis {
        pump_basis(self.oam_window)
    }
}

pub fn pump_basis(oam_window: u32) -> Basis {
    Basis::new(vec![
        Subsystem::polarization("pol"),
        Subsystem::oam_window("oam", oam_window),
    ])
    .expect("distinct subsystem names")
}

/// Polarization after the second half-wave plate, rotated so that the
/// `|H>` amplitude is `alpha`. `alpha = 1/sqrt(2)` gives `(|H> + |V>)/sqrt(2)`.
pub fn input_polarization(alpha: f64) -> Result<Ket> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidParameter(format!(
            "pump balance alpha = {alpha} outside [0, 1]"
        )));
    }
    let hwp = half_wave(alpha.acos() / 2.0);
    let out = hwp.apply(Vector2::new(C64::new(1.0, 0.0), C64::new(0.0, 0.0)));
    crate::quantum::polarization_ket(out[0], out[1])
}

/// One arm of the loop: PBS port, SPP charge, extra phase.
struct Arm {
    port: JonesMatrix,
    charge: i32,
    phase: JonesMatrix,
}

/// Balanced pump: input `(|H> + |V>)/sqrt(2)`.
pub fn prepare_pump(cfg: &SagnacConfig) -> Result<Ket> {
    prepare_pump_from(cfg, &input_polarization(FRAC_1_SQRT_2)?)
}

/// Propagates a Gaussian (`l = 0`) beam with polarization `input` through
/// the loop element by element.
pub fn prepare_pump_from(cfg: &SagnacConfig, input: &Ket) -> Result<Ket> {
    let amps = input.amplitudes();
    if amps.len() != 2 {
        return Err(Error::DimensionMismatch {
            expected: 2,
            got: amps.len(),
        });
    }
    let hv = Vector2::new(amps[0], amps[1]);
    let arms = [
        Arm {
            port: pbs_transmit(),
            charge: cfg.spp_order,
            phase: JonesMatrix::identity(),
        },
        Arm {
            port: pbs_reflect(),
            charge: -cfg.spp_order,
            phase: phase(-cfg.asymmetry_phase),
        },
    ];
    let basis = cfg.basis();
    let mut out = vec![C64::new(0.0, 0.0); basis.dim()];
    for arm in &arms {
        let field = (arm.phase * arm.port).apply(hv);
        for (pol, amp) in [(Pol::H, field[0]), (Pol::V, field[1])] {
            if amp.norm() == 0.0 {
                continue;
            }
            let idx = basis
                .index_of(&[Label::Pol(pol), Label::Oam(arm.charge)])
                .ok_or(Error::OamOutOfRange {
                    charge: arm.charge,
                    min: -(cfg.oam_window as i32),
                    max: cfg.oam_window as i32,
                })?;
            out[idx] += amp;
        }
    }
    Ket::new(basis, out)
}

/// `(|H,+l> + exp(-i phi)|V,-l>)/sqrt(2)` written down directly.
pub fn pump_closed_form(cfg: &SagnacConfig) -> Result<Ket> {
    let basis = cfg.basis();
    let l = cfg.spp_order;
    let mut out = vec![C64::new(0.0, 0.0); basis.dim()];
    let h = basis.index_of(&[Label::Pol(Pol::H), Label::Oam(l)]).unwrap();
    let v = basis.index_of(&[Label::Pol(Pol::V), Label::Oam(-l)]).unwrap();
    out[h] += FRAC_1_SQRT_2;
    out[v] += C64::from_polar(FRAC_1_SQRT_2, -cfg.asymmetry_phase);
    Ket::new(basis, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantum::{oam_ket, project_ket, tensor, PolBasis};
    use approx::assert_abs_diff_eq;
    use std::f64::consts::{FRAC_PI_2, PI};

    #[test]
    fn no_spp_gives_separable_input() {
        for phi in [0.0, 1.0, PI] {
            let cfg = SagnacConfig::new(0, phi).unwrap();
            let pump = prepare_pump(&cfg).unwrap();
            let gaussian = oam_ket(&[-3, -2, -1, 0, 1, 2, 3], &[(0, C64::new(1.0, 0.0))]).unwrap();
            let diagonal_gaussian = tensor(&input_polarization(FRAC_1_SQRT_2).unwrap(), &gaussian).unwrap();
            // phi only shifts the V arm; at l = 0 it is a relative phase on |V>
            let expected = if phi == 0.0 {
                diagonal_gaussian
            } else {
                pump_closed_form(&cfg).unwrap()
            };
            assert!(pump.approx_eq(&expected, 1e-12));
            let rho = pump.projector().partial_trace("oam").unwrap();
            assert_abs_diff_eq!(rho.purity(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn first_order_pump() {
        let pump = prepare_pump(&SagnacConfig::new(1, 0.0).unwrap()).unwrap();
        let h1 = pump.amplitude(&[Label::Pol(Pol::H), Label::Oam(1)]).unwrap();
        let vm1 = pump.amplitude(&[Label::Pol(Pol::V), Label::Oam(-1)]).unwrap();
        assert_abs_diff_eq!(h1.re, FRAC_1_SQRT_2, epsilon = 1e-15);
        assert_abs_diff_eq!(vm1.re, FRAC_1_SQRT_2, epsilon = 1e-15);
        assert_abs_diff_eq!(pump.norm_sqr(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn third_order_pump_with_quarter_turn_phase() {
        let pump = prepare_pump(&SagnacConfig::new(3, FRAC_PI_2).unwrap()).unwrap();
        let h = pump.amplitude(&[Label::Pol(Pol::H), Label::Oam(3)]).unwrap();
        let v = pump.amplitude(&[Label::Pol(Pol::V), Label::Oam(-3)]).unwrap();
        assert_abs_diff_eq!(h.re, FRAC_1_SQRT_2, epsilon = 1e-15);
        assert_abs_diff_eq!(v.re, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(v.im, -FRAC_1_SQRT_2, epsilon = 1e-15);
    }

    #[test]
    fn compositional_matches_closed_form() {
        for l in -3..=3 {
            for phi in [0.0, 0.3, FRAC_PI_2, PI, 5.9] {
                let cfg = SagnacConfig::new(l, phi).unwrap();
                let a = prepare_pump(&cfg).unwrap();
                let b = pump_closed_form(&cfg).unwrap();
                assert!(a.approx_eq(&b, 1e-12), "l={l} phi={phi}");
            }
        }
    }

    #[test]
    fn order_outside_window_is_rejected() {
        assert!(matches!(
            SagnacConfig::new(4, 0.0),
            Err(Error::OamOutOfRange { charge: 4, .. })
        ));
        assert!(SagnacConfig::with_window(4, 0.0, 4).is_ok());
    }

    #[test]
    fn phase_is_wrapped() {
        let cfg = SagnacConfig::new(1, -FRAC_PI_2).unwrap();
        assert_abs_diff_eq!(cfg.asymmetry_phase(), 3.0 * FRAC_PI_2, epsilon = 1e-15);
    }

    #[test]
    fn reduced_polarization_is_maximally_mixed() {
        for l in 1..=3 {
            let pump = prepare_pump(&SagnacConfig::new(l, 0.7).unwrap()).unwrap();
            let rho = pump.projector().partial_trace("oam").unwrap();
            assert_abs_diff_eq!(rho.purity(), 0.5, epsilon = 1e-10);
        }
    }

    #[test]
    fn h_and_v_projections_are_pure_vortices() {
        let pump = prepare_pump(&SagnacConfig::new(2, 0.4).unwrap()).unwrap();
        let alphabet: Vec<i32> = (-3..=3).collect();
        for (b, l) in [(PolBasis::H, 2), (PolBasis::V, -2)] {
            let out = project_ket(&pump, "pol", &b.ket()).unwrap();
            assert_abs_diff_eq!(out.probability(), 0.5, epsilon = 1e-12);
            let vortex = oam_ket(&alphabet, &[(l, C64::new(1.0, 0.0))]).unwrap();
            assert!(out.residual().unwrap().approx_eq(&vortex, 1e-12));
        }
    }

    #[test]
    fn unbalanced_input() {
        let ket = input_polarization(0.8).unwrap();
        assert_abs_diff_eq!(ket.amplitudes()[0].re, 0.8, epsilon = 1e-15);
        assert_abs_diff_eq!(ket.amplitudes()[1].re, 0.6, epsilon = 1e-15);
        assert!(input_polarization(1.2).is_err());
    }
}
