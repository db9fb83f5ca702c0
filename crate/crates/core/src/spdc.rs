//! Down-conversion of the hybrid pump in a pair of crossed type-I crystals.
//!
//! The first crystal converts `|H>` pump photons into `|VV>` pairs, the
//! second converts `|V>` into `|HH>`. The idler is post-selected to the
//! Gaussian mode, so OAM conservation puts the whole pump charge on the
//! signal. The resulting state lives on `idler_pol x signal_pol x signal_oam`.

use crate::error::{Error, Result};
use crate::quantum::{project, Basis, DensityMatrix, Ket, Label, Outcome, Pol, State, Subsystem, SubsystemKind, C64};

pub const IDLER_POL: &str = "idler_pol";
pub const SIGNAL_POL: &str = "signal_pol";
pub const SIGNAL_OAM: &str = "signal_oam";

#[derive(Clone, Debug, PartialEq)]
pub struct CrystalPairConfig {
    h_pump_sign: C64,
    pub pair_basis_doc: String,
}

impl CrystalPairConfig {
    pub fn new(h_pump_sign: C64) -> Result<Self> {
        if (h_pump_sign.norm() - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter(format!(
                "crystal sign {h_pump_sign} is not a unit complex number"
            )));
        }
        Ok(CrystalPairConfig {
            h_pump_sign,
            pair_basis_doc: "|H>_p -> s|V>_i|V>_s, |V>_p -> |H>_i|H>_s".into(),
        })
    }

    pub fn h_pump_sign(&self) -> C64 {
        self.h_pump_sign
    }
}

impl Default for CrystalPairConfig {
    fn default() -> Self {
        CrystalPairConfig::new(C64::new(-1.0, 0.0)).expect("unit sign")
    }
}

/// Which space the white-noise channel acts on.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum NoiseSpace {
    /// Maximally mixed over the full post-selected space.
    #[default]
    Full,
    /// Maximally mixed over the two polarizations, keeping the reduced
    /// signal OAM state.
    Polarization,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TwoPhotonState {
    state: State,
    alpha: f64,
    beta: f64,
}

pub fn two_photon_basis(alphabet: &[i32]) -> Result<Basis> {
    Basis::new(vec![
        Subsystem::polarization(IDLER_POL),
        Subsystem::polarization(SIGNAL_POL),
        Subsystem::oam(SIGNAL_OAM, alphabet.iter().copied())?,
    ])
}

impl TwoPhotonState {
    /// Wraps a state over the two-photon basis. `alpha` and `beta` record the
    /// pump balance and must satisfy `alpha^2 + beta^2 = 1`.
    pub fn new(state: State, alpha: f64, beta: f64) -> Result<Self> {
        let subs = state.basis().subsystems();
        let ok = subs.len() == 3
            && subs[0].name == IDLER_POL
            && subs[1].name == SIGNAL_POL
            && subs[2].name == SIGNAL_OAM
            && matches!(subs[2].kind, SubsystemKind::Oam(_));
        if !ok {
            return Err(Error::InvalidComposition(format!(
                "expected {IDLER_POL} x {SIGNAL_POL} x {SIGNAL_OAM}, got {}",
                state.basis()
            )));
        }
        if (alpha * alpha + beta * beta - 1.0).abs() > 1e-12 || alpha < 0.0 || beta < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "pump balance ({alpha}, {beta}) is not a unit pair"
            )));
        }
        Ok(TwoPhotonState { state, alpha, beta })
    }

    pub fn state(&self) -> &State {
        &self.state
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn basis(&self) -> &Basis {
        self.state.basis()
    }

    pub fn signal_alphabet(&self) -> &[i32] {
        match &self.basis().subsystems()[2].kind {
            SubsystemKind::Oam(a) => a,
            SubsystemKind::Polarization => unreachable!("checked in new"),
        }
    }

    /// Largest `|l|` in the signal alphabet.
    pub fn max_charge(&self) -> u32 {
        self.signal_alphabet()
            .iter()
            .map(|l| l.unsigned_abs())
            .max()
            .unwrap_or(0)
    }

    pub fn to_density(&self) -> DensityMatrix {
        self.state.to_density()
    }

    /// Conditional signal state (`signal_pol x signal_oam`) after projecting
    /// the idler polarization onto `idler_pol`.
    pub fn herald(&self, idler_pol: &Ket) -> Result<Outcome<State>> {
        project(&self.state, IDLER_POL, idler_pol)
    }

    /// White-noise channel with weight `p` on the chosen space.
    pub fn apply_noise(&self, p: f64, space: NoiseSpace) -> Result<TwoPhotonState> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidParameter(format!(
                "white-noise weight {p} outside [0, 1]"
            )));
        }
        let rho = self.to_density();
        let noise = match space {
            NoiseSpace::Full => DensityMatrix::maximally_mixed(rho.basis().clone()),
            NoiseSpace::Polarization => {
                let oam = rho.partial_trace(IDLER_POL)?.partial_trace(SIGNAL_POL)?;
                let pols = DensityMatrix::maximally_mixed(Basis::new(vec![
                    Subsystem::polarization(IDLER_POL),
                    Subsystem::polarization(SIGNAL_POL),
                ])?);
                pols.tensor(&oam)?
            }
        };
        TwoPhotonState::new(State::Mixed(rho.mix(&noise, p)?), self.alpha, self.beta)
    }
}

/// Charges carried by a `pol x oam` pump with nonzero amplitude, ascending.
pub fn pump_support(pump: &Ket) -> Result<Vec<i32>> {
    let alphabet = pump_layout(pump)?;
    let basis = pump.basis();
    let mut seen = std::collections::BTreeSet::new();
    for (i, a) in pump.amplitudes().iter().enumerate() {
        if a.norm_sqr() > 0.0 {
            if let Label::Oam(l) = basis.labels(i)[1] {
                seen.insert(l);
            }
        }
    }
    if seen.is_empty() {
        return Err(Error::InvalidParameter("pump has no support".into()));
    }
    debug_assert!(seen.iter().all(|l| alphabet.contains(l)));
    Ok(seen.into_iter().collect())
}

fn pump_layout(pump: &Ket) -> Result<Vec<i32>> {
    match pump.basis().subsystems() {
        [p, o] => match (&p.kind, &o.kind) {
            (SubsystemKind::Polarization, SubsystemKind::Oam(a)) => Ok(a.clone()),
            _ => Err(Error::InvalidComposition(format!(
                "pump must be pol x oam, got {}",
                pump.basis()
            ))),
        },
        _ => Err(Error::InvalidComposition(format!(
            "pump must be pol x oam, got {}",
            pump.basis()
        ))),
    }
}

/// Two-photon state with the signal OAM restricted to the pump's support
/// (the post-selected space).
pub fn down_convert(pump: &Ket, cfg: &CrystalPairConfig) -> Result<TwoPhotonState> {
    let support = pump_support(pump)?;
    down_convert_on(pump, cfg, &support)
}

/// Two-photon state with an explicit signal OAM alphabet, which must cover
/// the pump's support.
pub fn down_convert_on(pump: &Ket, cfg: &CrystalPairConfig, alphabet: &[i32]) -> Result<TwoPhotonState> {
    pump_layout(pump)?;
    let basis = two_photon_basis(alphabet)?;
    let (min, max) = (
        alphabet.iter().copied().min().unwrap_or(0),
        alphabet.iter().copied().max().unwrap_or(0),
    );
    let mut out = vec![C64::new(0.0, 0.0); basis.dim()];
    let (mut h_weight, mut v_weight) = (0.0, 0.0);
    for (i, &a) in pump.amplitudes().iter().enumerate() {
        if a.norm_sqr() == 0.0 {
            continue;
        }
        let labels = pump.basis().labels(i);
        let (pol, l) = match (labels[0], labels[1]) {
            (Label::Pol(p), Label::Oam(l)) => (p, l),
            _ => unreachable!("pump layout checked"),
        };
        let (pair, coeff) = match pol {
            Pol::H => {
                h_weight += a.norm_sqr();
                (Pol::V, cfg.h_pump_sign * a)
            }
            Pol::V => {
                v_weight += a.norm_sqr();
                (Pol::H, a)
            }
        };
        let idx = basis
            .index_of(&[Label::Pol(pair), Label::Pol(pair), Label::Oam(l)])
            .ok_or(Error::OamOutOfRange { charge: l, min, max })?;
        out[idx] += coeff;
    }
    let total = h_weight + v_weight;
    let ket = Ket::new(basis, out)?;
    TwoPhotonState::new(State::Pure(ket), (h_weight / total).sqrt(), (v_weight / total).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pump::{prepare_pump, pump_basis, SagnacConfig};
    use crate::quantum::{fidelity, oam_ket, PolBasis};
    use crate::spatial::{analytic_angular_profile, petal_fit};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_1_SQRT_2, PI};

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn hybrid_pair(l: i32, phi: f64) -> TwoPhotonState {
        let pump = prepare_pump(&SagnacConfig::new(l, phi).unwrap()).unwrap();
        down_convert(&pump, &CrystalPairConfig::default()).unwrap()
    }

    fn pure(s: &TwoPhotonState) -> &Ket {
        match s.state() {
            State::Pure(k) => k,
            State::Mixed(_) => panic!("expected a pure state"),
        }
    }

    fn ket(alphabet: &[i32], terms: &[(Pol, Pol, i32, C64)]) -> Ket {
        let basis = two_photon_basis(alphabet).unwrap();
        let mut amps = vec![c(0.0, 0.0); basis.dim()];
        for &(i, s, l, a) in terms {
            amps[basis.index_of(&[Label::Pol(i), Label::Pol(s), Label::Oam(l)]).unwrap()] += a;
        }
        Ket::new(basis, amps).unwrap()
    }

    #[test]
    fn gaussian_pump_gives_bell_minus() {
        let s = hybrid_pair(0, 0.0);
        let r = FRAC_1_SQRT_2;
        let bell = ket(&[0], &[(Pol::H, Pol::H, 0, c(r, 0.0)), (Pol::V, Pol::V, 0, c(-r, 0.0))]);
        assert_abs_diff_eq!(fidelity(&s.to_density(), &bell).unwrap(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.alpha(), FRAC_1_SQRT_2, epsilon = 1e-12);
    }

    #[test]
    fn vortex_pump_gives_hybrid_state() {
        for phi in [0.0, 0.9, PI] {
            let s = hybrid_pair(3, phi);
            assert_eq!(s.signal_alphabet(), &[-3, 3]);
            let r = FRAC_1_SQRT_2;
            let want = ket(
                &[-3, 3],
                &[
                    (Pol::H, Pol::H, -3, C64::from_polar(r, -phi)),
                    (Pol::V, Pol::V, 3, c(-r, 0.0)),
                ],
            );
            assert!(pure(&s).approx_eq(&want, 1e-12), "phi={phi}");
        }
    }

    #[test]
    fn single_term_is_exact() {
        let basis = pump_basis(3);
        let pump = Ket::basis_state(basis, &[Label::Pol(Pol::H), Label::Oam(1)]).unwrap();
        let s = down_convert(&pump, &CrystalPairConfig::default()).unwrap();
        let want = ket(&[1], &[(Pol::V, Pol::V, 1, c(1.0, 0.0))]);
        assert!(pure(&s).approx_eq(&want, 1e-15));
        let out = s.herald(&PolBasis::V.ket()).unwrap();
        assert_abs_diff_eq!(out.probability(), 1.0, epsilon = 1e-15);
        assert_eq!(s.alpha(), 1.0);
    }

    #[test]
    fn sign_must_be_unit() {
        assert!(CrystalPairConfig::new(c(0.5, 0.0)).is_err());
        assert!(CrystalPairConfig::new(C64::from_polar(1.0, 0.3)).is_ok());
    }

    #[test]
    fn vertical_idler_heralds_vortex() {
        let s = hybrid_pair(3, 0.0);
        let out = s.herald(&PolBasis::V.ket()).unwrap();
        assert_abs_diff_eq!(out.probability(), 0.5, epsilon = 1e-12);
        let State::Pure(sig) = out.residual().unwrap() else {
            panic!()
        };
        let basis = sig.basis();
        let idx = basis.index_of(&[Label::Pol(Pol::V), Label::Oam(3)]).unwrap();
        assert_abs_diff_eq!(sig.amplitudes()[idx].norm(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn diagonal_idler_then_diagonal_signal_gives_two_petals() {
        let s = hybrid_pair(1, 0.0);
        let out = s.herald(&PolBasis::D.ket()).unwrap();
        let sig = out.into_residual().unwrap();
        let after = project(&sig, SIGNAL_POL, &PolBasis::D.ket()).unwrap();
        let State::Pure(oam) = after.into_residual().unwrap() else {
            panic!()
        };
        let r = FRAC_1_SQRT_2;
        let want = oam_ket(&[-1, 1], &[(1, c(r, 0.0)), (-1, c(-r, 0.0))]).unwrap();
        let overlap: C64 = want
            .amplitudes()
            .iter()
            .zip(oam.amplitudes().iter())
            .map(|(w, o)| w.conj() * o)
            .sum();
        assert_abs_diff_eq!(overlap.norm(), 1.0, epsilon = 1e-12);
        let hist = analytic_angular_profile(&oam.projector(), 72, (0.0, 1.0)).unwrap();
        assert!(petal_fit(&hist, 1).unwrap().visibility > 0.999);
    }

    #[test]
    fn circular_idlers_rotate_petals_by_a_quarter_period() {
        for l in 1..=3 {
            let s = hybrid_pair(l, 0.0);
            let theta = |b: PolBasis| {
                let sig = s.herald(&b.ket()).unwrap().into_residual().unwrap();
                let oam = project(&sig, SIGNAL_POL, &PolBasis::D.ket())
                    .unwrap()
                    .into_residual()
                    .unwrap()
                    .to_density();
                let hist = analytic_angular_profile(&oam, 144, (0.0, 1.0)).unwrap();
                petal_fit(&hist, l as u32).unwrap().theta0.unwrap()
            };
            let d = crate::spatial::angle_diff(theta(PolBasis::R), theta(PolBasis::L), PI / l as f64);
            assert_abs_diff_eq!(d.abs(), PI / (2.0 * l as f64), epsilon = 1e-9);
        }
    }

    #[test]
    fn herald_probabilities_sum_to_one() {
        let s = hybrid_pair(2, 1.3).apply_noise(0.2, NoiseSpace::Full).unwrap();
        for (a, b) in [
            (PolBasis::H, PolBasis::V),
            (PolBasis::D, PolBasis::A),
            (PolBasis::R, PolBasis::L),
        ] {
            let p = s.herald(&a.ket()).unwrap().probability() + s.herald(&b.ket()).unwrap().probability();
            assert_abs_diff_eq!(p, 1.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn noise_limits() {
        let s = hybrid_pair(1, 0.0);
        let same = s.apply_noise(0.0, NoiseSpace::Full).unwrap();
        assert!((same.to_density().entries() - s.to_density().entries()).norm() < 1e-15);
        let mixed = s.apply_noise(1.0, NoiseSpace::Full).unwrap();
        assert_eq!(mixed.basis().dim(), 8);
        assert_abs_diff_eq!(mixed.to_density().purity(), 1.0 / 8.0, epsilon = 1e-12);
        assert!(s.apply_noise(1.5, NoiseSpace::Full).is_err());
    }

    #[test]
    fn polarization_noise_keeps_oam_marginal() {
        let s = hybrid_pair(2, 0.4);
        let n = s.apply_noise(1.0, NoiseSpace::Polarization).unwrap().to_density();
        let oam = n.partial_trace(IDLER_POL).unwrap().partial_trace(SIGNAL_POL).unwrap();
        let orig = s
            .to_density()
            .partial_trace(IDLER_POL)
            .unwrap()
            .partial_trace(SIGNAL_POL)
            .unwrap();
        assert!((oam.entries() - orig.entries()).norm() < 1e-12);
        let pols = n.partial_trace(SIGNAL_OAM).unwrap();
        assert_abs_diff_eq!(pols.purity(), 0.25, epsilon = 1e-12);
    }

    #[test]
    fn werner_gaussian_visibility() {
        let p = 0.031;
        let s = hybrid_pair(0, 0.0).apply_noise(p, NoiseSpace::Full).unwrap();
        let rho = s.to_density();
        // idler H, signal H vs V: correlated outcome probabilities
        let prob = |i: PolBasis, j: PolBasis| {
            let sig = s.herald(&i.ket()).unwrap();
            let w = sig.probability();
            let r = sig.into_residual().unwrap();
            w * project(&r, SIGNAL_POL, &j.ket()).unwrap().probability()
        };
        let (hh, hv) = (prob(PolBasis::H, PolBasis::H), prob(PolBasis::H, PolBasis::V));
        assert_abs_diff_eq!((hh - hv) / (hh + hv), 1.0 - p, epsilon = 1e-12);
        let (da, dd) = (prob(PolBasis::D, PolBasis::A), prob(PolBasis::D, PolBasis::D));
        assert_abs_diff_eq!((da - dd) / (da + dd), 1.0 - p, epsilon = 1e-12);
        assert_abs_diff_eq!(rho.entries().trace().re, 1.0, epsilon = 1e-12);
    }

    fn arb_pump() -> impl Strategy<Value = Ket> {
        prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 14).prop_filter_map("zero", |v| {
            let amps: Vec<C64> = v.iter().map(|&(a, b)| c(a, b)).collect();
            let n: f64 = amps.iter().map(|a| a.norm_sqr()).sum();
            if n < 1e-3 {
                return None;
            }
            let amps = amps.into_iter().map(|a| a / n.sqrt()).collect();
            Some(Ket::new(pump_basis(3), amps).unwrap())
        })
    }

    proptest! {
        #[test]
        fn transfer_preserves_overlaps(a in arb_pump(), b in arb_pump()) {
            let cfg = CrystalPairConfig::default();
            let all: Vec<i32> = (-3..=3).collect();
            let ta = down_convert_on(&a, &cfg, &all).unwrap();
            let tb = down_convert_on(&b, &cfg, &all).unwrap();
            let before = a.inner(&b).unwrap().norm();
            let after = pure(&ta).inner(pure(&tb)).unwrap().norm();
            prop_assert!((before - after).abs() < 1e-12);
        }

        #[test]
        fn signal_charge_equals_pump_charge(a in arb_pump()) {
            let s = down_convert(&a, &CrystalPairConfig::default()).unwrap();
            let k = pure(&s);
            for (i, amp) in k.amplitudes().iter().enumerate() {
                if amp.norm_sqr() < 1e-20 { continue; }
                let labels = k.basis().labels(i);
                let Label::Oam(l) = labels[2] else { unreachable!() };
                let Label::Pol(sp) = labels[1] else { unreachable!() };
                let from = if sp == Pol::V { Pol::H } else { Pol::V };
                let p = a.amplitude(&[Label::Pol(from), Label::Oam(l)]).unwrap();
                prop_assert!((p.norm() - amp.norm()).abs() < 1e-12);
            }
        }
    }
}
