//! Jones matrices for the bulk polarization optics on the pump line and in
//! the analyzers. All matrices act on `(h, v)` amplitude pairs.

use std::ops::Mul;

use nalgebra::{Matrix2, Vector2};

use crate::quantum::C64;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JonesMatrix(pub Matrix2<C64>);

fn re(x: f64) -> C64 {
    C64::new(x, 0.0)
}

impl JonesMatrix {
    pub fn identity() -> Self {
        JonesMatrix(Matrix2::identity())
    }

    pub fn matrix(&self) -> &Matrix2<C64> {
        &self.0
    }

    pub fn adjoint(&self) -> Self {
        JonesMatrix(self.0.adjoint())
    }

    pub fn apply(&self, hv: Vector2<C64>) -> Vector2<C64> {
        self.0 * hv
    }

    /// Largest entry of `|U^dag U - I|`.
    pub fn unitarity_defect(&self) -> f64 {
        (self.0.adjoint() * self.0 - Matrix2::identity())
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max)
    }

    /// Largest entry of `|P P - P|`.
    pub fn idempotency_defect(&self) -> f64 {
        (self.0 * self.0 - self.0).iter().map(|z| z.norm()).fold(0.0, f64::max)
    }
}

impl Mul for JonesMatrix {
    type Output = JonesMatrix;

    fn mul(self, rhs: JonesMatrix) -> JonesMatrix {
        JonesMatrix(self.0 * rhs.0)
    }
}

fn rotation(theta: f64) -> Matrix2<C64> {
    let (s, c) = theta.sin_cos();
    Matrix2::new(re(c), re(-s), re(s), re(c))
}

/// Half-wave plate with its fast axis at `theta` from horizontal:
/// `[[cos 2t, sin 2t], [sin 2t, -cos 2t]]`.
pub fn half_wave(theta: f64) -> JonesMatrix {
    let (s, c) = (2.0 * theta).sin_cos();
    JonesMatrix(Matrix2::new(re(c), re(s), re(s), re(-c)))
}

/// Quarter-wave plate with its fast axis at `theta`. In the plate frame the
/// matrix is `diag(1, i)`: the slow-axis component picks up `+pi/2` relative
/// to the fast axis. With this convention `quarter_wave(pi/4)` maps `|H>` to
/// `|R>` up to a global phase.
pub fn quarter_wave(theta: f64) -> JonesMatrix {
    let plate = Matrix2::new(re(1.0), re(0.0), re(0.0), C64::new(0.0, 1.0));
    JonesMatrix(rotation(theta) * plate * rotation(-theta))
}

/// Transmitted port of a polarizing beam splitter (projector onto `|H>`).
pub fn pbs_transmit() -> JonesMatrix {
    JonesMatrix(Matrix2::new(re(1.0), re(0.0), re(0.0), re(0.0)))
}

/// Reflected port of a polarizing beam splitter (projector onto `|V>`).
pub fn pbs_reflect() -> JonesMatrix {
    JonesMatrix(Matrix2::new(re(0.0), re(0.0), re(0.0), re(1.0)))
}

/// Uniform phase `exp(i phase)` on both components.
pub fn phase(phase: f64) -> JonesMatrix {
    let z = C64::from_polar(1.0, phase);
    JonesMatrix(Matrix2::new(z, re(0.0), re(0.0), z))
}
