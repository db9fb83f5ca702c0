//! Finite-dimensional state algebra: kets, density matrices, tensor products,
//! partial projections and fidelity.
//!
//! Every state lives on a [`Basis`], an ordered list of named subsystems. A
//! subsystem is either a polarization qubit (`H` before `V`) or an OAM register
//! over a finite, ascending alphabet of topological charges. Composite indices
//! are lexicographic with the first subsystem most significant, so matrices are
//! reproducible entry for entry.
//!
//! Kets are normalized on construction and carry a canonical global phase: the
//! first amplitude whose magnitude exceeds [`PHASE_THRESHOLD`] is made real and
//! non-negative. Two kets describing the same physical state therefore compare
//! equal up to rounding.
//!
//! Circular polarization follows `|R> = (|H> - i|V>)/sqrt(2)` and
//! `|L> = (|H> + i|V>)/sqrt(2)` throughout the crate.

use std::f64::consts::FRAC_1_SQRT_2;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;

/// Projection outcomes below this probability are reported as null.
pub const NULL_PROBABILITY: f64 = 1e-15;
/// Smallest eigenvalue still counted as non-negative.
pub const PSD_TOLERANCE: f64 = 1e-9;
/// Amplitudes smaller than this are ignored when fixing the global phase.
pub const PHASE_THRESHOLD: f64 = 1e-13;

const HERMITIAN_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Pol {
    H,
    V,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Label {
    Pol(Pol),
    Oam(i32),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SubsystemKind {
    Polarization,
    /// Ascending, duplicate-free alphabet of OAM charges.
    Oam(Vec<i32>),
}

impl SubsystemKind {
    pub fn dim(&self) -> usize {
        match self {
            SubsystemKind::Polarization => 2,
            SubsystemKind::Oam(alphabet) => alphabet.len(),
        }
    }

    pub fn label(&self, index: usize) -> Label {
        match self {
            SubsystemKind::Polarization => Label::Pol(if index == 0 { Pol::H } else { Pol::V }),
            SubsystemKind::Oam(alphabet) => Label::Oam(alphabet[index]),
        }
    }

    pub fn index_of(&self, label: Label) -> Option<usize> {
        match (self, label) {
            (SubsystemKind::Polarization, Label::Pol(Pol::H)) => Some(0),
            (SubsystemKind::Polarization, Label::Pol(Pol::V)) => Some(1),
            (SubsystemKind::Oam(alphabet), Label::Oam(l)) => alphabet.binary_search(&l).ok(),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Subsystem {
    pub name: String,
    pub kind: SubsystemKind,
}

impl Subsystem {
    pub fn polarization(name: impl Into<String>) -> Self {
        Subsystem {
            name: name.into(),
            kind: SubsystemKind::Polarization,
        }
    }

    pub fn oam(name: impl Into<String>, alphabet: impl IntoIterator<Item = i32>) -> Result<Self> {
        let mut alphabet: Vec<i32> = alphabet.into_iter().collect();
        alphabet.sort_unstable();
        alphabet.dedup();
        if alphabet.is_empty() {
            return Err(Error::InvalidParameter("empty OAM alphabet".into()));
        }
        Ok(Subsystem {
            name: name.into(),
            kind: SubsystemKind::Oam(alphabet),
        })
    }

    /// OAM register over `-max..=max`.
    pub fn oam_window(name: impl Into<String>, max: u32) -> Self {
        let max = max as i32;
        Subsystem {
            name: name.into(),
            kind: SubsystemKind::Oam((-max..=max).collect()),
        }
    }

    pub fn dim(&self) -> usize {
        self.kind.dim()
    }
}

/// Ordered list of named subsystems.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct Basis {
    subsystems: Vec<Subsystem>,
}

impl Basis {
    pub fn new(subsystems: Vec<Subsystem>) -> Result<Self> {
        for (i, s) in subsystems.iter().enumerate() {
            if subsystems[..i].iter().any(|o| o.name == s.name) {
                return Err(Error::InvalidComposition(format!(
                    "subsystem `{}` appears twice",
                    s.name
                )));
            }
        }
        Ok(Basis { subsystems })
    }

    pub fn single(subsystem: Subsystem) -> Self {
        Basis {
            subsystems: vec![subsystem],
        }
    }

    pub fn subsystems(&self) -> &[Subsystem] {
        &self.subsystems
    }

    pub fn dim(&self) -> usize {
        self.subsystems.iter().map(Subsystem::dim).product()
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.subsystems.iter().position(|s| s.name == name)
    }

    pub fn subsystem(&self, name: &str) -> Option<&Subsystem> {
        self.subsystems.iter().find(|s| s.name == name)
    }

    /// Per-subsystem digits of a composite index.
    pub fn digits(&self, mut index: usize) -> Vec<usize> {
        let mut digits = vec![0; self.subsystems.len()];
        for (k, s) in self.subsystems.iter().enumerate().rev() {
            digits[k] = index % s.dim();
            index /= s.dim();
        }
        digits
    }

    pub fn compose(&self, digits: &[usize]) -> usize {
        self.subsystems
            .iter()
            .zip(digits)
            .fold(0, |acc, (s, &d)| acc * s.dim() + d)
    }

    pub fn labels(&self, index: usize) -> Vec<Label> {
        self.digits(index)
            .into_iter()
            .zip(&self.subsystems)
            .map(|(d, s)| s.kind.label(d))
            .collect()
    }

    pub fn index_of(&self, labels: &[Label]) -> Option<usize> {
        if labels.len() != self.subsystems.len() {
            return None;
        }
        let digits = self
            .subsystems
            .iter()
            .zip(labels)
            .map(|(s, &l)| s.kind.index_of(l))
            .collect::<Option<Vec<_>>>()?;
        Some(self.compose(&digits))
    }

    pub fn tensor(&self, other: &Basis) -> Result<Basis> {
        let mut subsystems = self.subsystems.clone();
        subsystems.extend(other.subsystems.iter().cloned());
        Basis::new(subsystems)
    }

    pub fn without(&self, position: usize) -> Basis {
        let mut subsystems = self.subsystems.clone();
        subsystems.remove(position);
        Basis { subsystems }
    }

    /// Splits a composite index into the digit at `position` and the index over
    /// the remaining subsystems.
    fn split(&self, index: usize, position: usize) -> (usize, usize) {
        let mut digits = self.digits(index);
        let d = digits.remove(position);
        let rest = self.without(position);
        (d, rest.compose(&digits))
    }

    fn locate(&self, name: &str, proj: &Ket) -> Result<usize> {
        let pos = self
            .position(name)
            .ok_or_else(|| Error::UnknownSubsystem(name.to_string()))?;
        let target = &self.subsystems[pos].kind;
        match proj.basis.subsystems.as_slice() {
            [s] if &s.kind == target => Ok(pos),
            _ => Err(Error::SubsystemKindMismatch(name.to_string())),
        }
    }
}

impl fmt::Display for Basis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self.subsystems.iter().map(|s| s.name.as_str()).collect();
        write!(f, "[{}]", names.join(" x "))
    }
}

fn canonical_phase(amps: &mut DVector<C64>) {
    if let Some(first) = amps.iter().find(|a| a.norm() > PHASE_THRESHOLD).copied() {
        let rot = first.conj() / first.norm();
        amps.iter_mut().for_each(|a| *a *= rot);
    }
}

/// Normalized pure state with canonical global phase.
#[derive(Clone, Debug, PartialEq)]
pub struct Ket {
    basis: Basis,
    amps: DVector<C64>,
}

impl Ket {
    pub fn new(basis: Basis, amps: Vec<C64>) -> Result<Ket> {
        Self::from_vector(basis, DVector::from_vec(amps))
    }

    pub fn from_vector(basis: Basis, mut amps: DVector<C64>) -> Result<Ket> {
        if amps.len() != basis.dim() {
            return Err(Error::DimensionMismatch {
                expected: basis.dim(),
                got: amps.len(),
            });
        }
        let norm = amps.norm();
        if !(norm.is_finite() && norm > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "cannot normalize a ket with norm {norm}"
            )));
        }
        amps.unscale_mut(norm);
        canonical_phase(&mut amps);
        Ok(Ket { basis, amps })
    }

    pub fn basis_state(basis: Basis, labels: &[Label]) -> Result<Ket> {
        let idx = basis
            .index_of(labels)
            .ok_or_else(|| Error::InvalidParameter(format!("labels {labels:?} not in basis {basis}")))?;
        let mut amps = vec![C64::new(0.0, 0.0); basis.dim()];
        amps[idx] = C64::new(1.0, 0.0);
        Ket::new(basis, amps)
    }

    pub fn basis(&self) -> &Basis {
        &self.basis
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn amplitudes(&self) -> &DVector<C64> {
        &self.amps
    }

    pub fn amplitude(&self, labels: &[Label]) -> Option<C64> {
        self.basis.index_of(labels).map(|i| self.amps[i])
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.norm_squared()
    }

    /// `<self|other>`.
    pub fn inner(&self, other: &Ket) -> Result<C64> {
        if self.basis != other.basis {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: other.dim(),
            });
        }
        Ok(self.amps.dotc(&other.amps))
    }

    pub fn projector(&self) -> DensityMatrix {
        let entries = &self.amps * self.amps.adjoint();
        DensityMatrix {
            basis: self.basis.clone(),
            entries,
            psd: true,
        }
    }

    /// Entry-wise comparison; meaningful because of the canonical phase.
    pub fn approx_eq(&self, other: &Ket, tol: f64) -> bool {
        self.basis == other.basis
            && self
                .amps
                .iter()
                .zip(other.amps.iter())
                .all(|(a, b)| (a - b).norm() <= tol)
    }
}

/// Hermitian, unit-trace matrix. Positivity is measured, not assumed.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix {
    basis: Basis,
    entries: DMatrix<C64>,
    psd: bool,
}

impl DensityMatrix {
    /// Validates hermiticity (to 1e-9, then symmetrizes) and rescales to unit
    /// trace. The PSD flag is computed from the spectrum.
    pub fn new(basis: Basis, entries: DMatrix<C64>) -> Result<DensityMatrix> {
        let n = basis.dim();
        if entries.nrows() != n || entries.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: entries.nrows(),
            });
        }
        if entries.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::Numerical("non-finite density matrix entry".into()));
        }
        let adj = entries.adjoint();
        let skew = (&entries - &adj).iter().map(|z| z.norm()).fold(0.0, f64::max);
        let scale = entries.iter().map(|z| z.norm()).fold(0.0, f64::max).max(1.0);
        if skew > HERMITIAN_TOLERANCE * scale {
            return Err(Error::Numerical(format!(
                "matrix is not Hermitian (max |A - A^dag| = {skew:e})"
            )));
        }
        let mut entries = (&entries + adj).unscale(2.0);
        let trace = entries.trace().re;
        if !(trace > 0.0) {
            return Err(Error::Numerical(format!(
                "density matrix trace {trace} is not positive"
            )));
        }
        entries.unscale_mut(trace);
        let psd = min_eigenvalue(&entries) >= -PSD_TOLERANCE;
        Ok(DensityMatrix { basis, entries, psd })
    }

    pub fn maximally_mixed(basis: Basis) -> DensityMatrix {
        let n = basis.dim();
        DensityMatrix {
            entries: DMatrix::identity(n, n).unscale(n as f64),
            basis,
            psd: true,
        }
    }

    pub fn basis(&self) -> &Basis {
        &self.basis
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &DMatrix<C64> {
        &self.entries
    }

    pub fn is_psd(&self) -> bool {
        self.psd
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = self
            .entries
            .clone()
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .copied()
            .collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    pub fn purity(&self) -> f64 {
        (&self.entries * &self.entries).trace().re
    }

    /// `<ket|rho|ket>`.
    pub fn expectation(&self, ket: &Ket) -> Result<C64> {
        if self.basis != ket.basis {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: ket.dim(),
            });
        }
        Ok(ket.amps.dotc(&(&self.entries * &ket.amps)))
    }

    /// Traces out the named subsystem.
    pub fn partial_trace(&self, name: &str) -> Result<DensityMatrix> {
        let pos = self
            .basis
            .position(name)
            .ok_or_else(|| Error::UnknownSubsystem(name.to_string()))?;
        let rest = self.basis.without(pos);
        let m = rest.dim();
        let mut out = DMatrix::<C64>::zeros(m, m);
        let n = self.dim();
        for i in 0..n {
            let (di, ri) = self.basis.split(i, pos);
            for j in 0..n {
                let (dj, rj) = self.basis.split(j, pos);
                if di == dj {
                    out[(ri, rj)] += self.entries[(i, j)];
                }
            }
        }
        DensityMatrix::new(rest, out)
    }

    /// Clips negative eigenvalues to zero and renormalizes. Never applied
    /// implicitly.
    pub fn repaired(&self) -> Result<DensityMatrix> {
        let eig = self.entries.clone().symmetric_eigen();
        let clipped = eig.eigenvalues.map(|v| C64::new(v.max(0.0), 0.0));
        let vecs = &eig.eigenvectors;
        let m = vecs * DMatrix::from_diagonal(&clipped) * vecs.adjoint();
        DensityMatrix::new(self.basis.clone(), m)
    }

    pub fn tensor(&self, other: &DensityMatrix) -> Result<DensityMatrix> {
        let basis = self.basis.tensor(&other.basis)?;
        DensityMatrix::new(basis, self.entries.kronecker(&other.entries))
    }

    /// Convex combination `(1 - weight) * self + weight * other`.
    pub fn mix(&self, other: &DensityMatrix, weight: f64) -> Result<DensityMatrix> {
        if self.basis != other.basis {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: other.dim(),
            });
        }
        let m = self.entries.scale(1.0 - weight) + other.entries.scale(weight);
        DensityMatrix::new(self.basis.clone(), m)
    }
}

fn min_eigenvalue(m: &DMatrix<C64>) -> f64 {
    m.clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

#[derive(Clone, Debug, PartialEq)]
pub enum State {
    Pure(Ket),
    Mixed(DensityMatrix),
}

impl State {
    pub fn basis(&self) -> &Basis {
        match self {
            State::Pure(k) => k.basis(),
            State::Mixed(m) => m.basis(),
        }
    }

    pub fn to_density(&self) -> DensityMatrix {
        match self {
            State::Pure(k) => k.projector(),
            State::Mixed(m) => m.clone(),
        }
    }
}

impl From<Ket> for State {
    fn from(k: Ket) -> Self {
        State::Pure(k)
    }
}

impl From<DensityMatrix> for State {
    fn from(m: DensityMatrix) -> Self {
        State::Mixed(m)
    }
}

/// Result of a partial projection.
#[derive(Clone, Debug, PartialEq)]
pub enum Outcome<T> {
    Found {
        residual: T,
        probability: f64,
    },
    /// Probability below [`NULL_PROBABILITY`]; no conditional state exists.
    Null {
        probability: f64,
    },
}

impl<T> Outcome<T> {
    pub fn probability(&self) -> f64 {
        match self {
            Outcome::Found { probability, .. } | Outcome::Null { probability } => *probability,
        }
    }

    pub fn residual(&self) -> Option<&T> {
        match self {
            Outcome::Found { residual, .. } => Some(residual),
            Outcome::Null { .. } => None,
        }
    }

    pub fn into_residual(self) -> Option<T> {
        match self {
            Outcome::Found { residual, .. } => Some(residual),
            Outcome::Null { .. } => None,
        }
    }

    pub fn is_null(&self) -> bool {
        matches!(self, Outcome::Null { .. })
    }

    pub fn map<U>(self, f: impl FnOnce(T) -> U) -> Outcome<U> {
        match self {
            Outcome::Found { residual, probability } => Outcome::Found {
                residual: f(residual),
                probability,
            },
            Outcome::Null { probability } => Outcome::Null { probability },
        }
    }
}

pub fn tensor(a: &Ket, b: &Ket) -> Result<Ket> {
    let basis = a.basis.tensor(&b.basis)?;
    let amps = a.amps.kronecker(&b.amps);
    Ket::from_vector(basis, amps)
}

/// Projects `subsystem` of a pure state onto `proj`.
pub fn project_ket(state: &Ket, subsystem: &str, proj: &Ket) -> Result<Outcome<Ket>> {
    let pos = state.basis.locate(subsystem, proj)?;
    let rest = state.basis.without(pos);
    let mut out = DVector::zeros(rest.dim());
    for (i, a) in state.amps.iter().enumerate() {
        let (d, r) = state.basis.split(i, pos);
        out[r] += proj.amps[d].conj() * a;
    }
    let probability = out.norm_squared();
    if probability < NULL_PROBABILITY {
        return Ok(Outcome::Null { probability });
    }
    Ok(Outcome::Found {
        residual: Ket::from_vector(rest, out)?,
        probability,
    })
}

/// Projects `subsystem` of a density matrix onto `proj`.
pub fn project_density(state: &DensityMatrix, subsystem: &str, proj: &Ket) -> Result<Outcome<DensityMatrix>> {
    let pos = state.basis.locate(subsystem, proj)?;
    let rest = state.basis.without(pos);
    let m = rest.dim();
    let mut out = DMatrix::<C64>::zeros(m, m);
    let n = state.dim();
    for i in 0..n {
        let (di, ri) = state.basis.split(i, pos);
        let pi = proj.amps[di].conj();
        for j in 0..n {
            let (dj, rj) = state.basis.split(j, pos);
            out[(ri, rj)] += pi * state.entries[(i, j)] * proj.amps[dj];
        }
    }
    let probability = out.trace().re;
    if probability < NULL_PROBABILITY {
        return Ok(Outcome::Null { probability });
    }
    Ok(Outcome::Found {
        residual: DensityMatrix::new(rest, out)?,
        probability,
    })
}

pub fn project(state: &State, subsystem: &str, proj: &Ket) -> Result<Outcome<State>> {
    match state {
        State::Pure(k) => Ok(project_ket(k, subsystem, proj)?.map(State::Pure)),
        State::Mixed(m) => Ok(project_density(m, subsystem, proj)?.map(State::Mixed)),
    }
}

/// Overlap `<target|rho|target>` with a pure target.
pub fn fidelity(rho: &DensityMatrix, target: &Ket) -> Result<f64> {
    let z = rho.expectation(target)?;
    if z.im.abs() >= 1e-10 {
        return Err(Error::Numerical(format!("fidelity has imaginary part {:e}", z.im)));
    }
    Ok(z.re.clamp(0.0, 1.0))
}

/// `(1 - p)|psi><psi| + p I/dim`.
pub fn white_noise_mix(psi: &Ket, p: f64) -> Result<DensityMatrix> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidParameter(format!(
            "white-noise weight {p} outside [0, 1]"
        )));
    }
    psi.projector()
        .mix(&DensityMatrix::maximally_mixed(psi.basis.clone()), p)
}

/// The six polarization states of the Poincare sphere.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
pub enum PolBasis {
    H,
    V,
    D,
    A,
    R,
    L,
}

impl PolBasis {
    pub const ALL: [PolBasis; 6] = [
        PolBasis::H,
        PolBasis::A,
        PolBasis::R,
        PolBasis::V,
        PolBasis::D,
        PolBasis::L,
    ];

    /// `(h, v)` amplitudes.
    pub fn amplitudes(self) -> (C64, C64) {
        let s = FRAC_1_SQRT_2;
        match self {
            PolBasis::H => (C64::new(1.0, 0.0), C64::new(0.0, 0.0)),
            PolBasis::V => (C64::new(0.0, 0.0), C64::new(1.0, 0.0)),
            PolBasis::D => (C64::new(s, 0.0), C64::new(s, 0.0)),
            PolBasis::A => (C64::new(s, 0.0), C64::new(-s, 0.0)),
            PolBasis::R => (C64::new(s, 0.0), C64::new(0.0, -s)),
            PolBasis::L => (C64::new(s, 0.0), C64::new(0.0, s)),
        }
    }

    /// Polarization ket on a subsystem named `pol`.
    pub fn ket(self) -> Ket {
        let (h, v) = self.amplitudes();
        polarization_ket(h, v).expect("basis states are normalized")
    }

    pub fn orthogonal(self) -> PolBasis {
        match self {
            PolBasis::H => PolBasis::V,
            PolBasis::V => PolBasis::H,
            PolBasis::D => PolBasis::A,
            PolBasis::A => PolBasis::D,
            PolBasis::R => PolBasis::L,
            PolBasis::L => PolBasis::R,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PolBasis::H => "H",
            PolBasis::V => "V",
            PolBasis::D => "D",
            PolBasis::A => "A",
            PolBasis::R => "R",
            PolBasis::L => "L",
        }
    }
}

impl fmt::Display for PolBasis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub fn polarization_ket(h: C64, v: C64) -> Result<Ket> {
    Ket::new(Basis::single(Subsystem::polarization("pol")), vec![h, v])
}

/// OAM ket over `alphabet` on a subsystem named `oam`; charges not listed in
/// `coeffs` get zero amplitude.
pub fn oam_ket(alphabet: &[i32], coeffs: &[(i32, C64)]) -> Result<Ket> {
    let sub = Subsystem::oam("oam", alphabet.iter().copied())?;
    let basis = Basis::single(sub);
    let mut amps = vec![C64::new(0.0, 0.0); basis.dim()];
    for &(l, c) in coeffs {
        let idx = basis.index_of(&[Label::Oam(l)]).ok_or_else(|| {
            let (min, max) = (alphabet.iter().min(), alphabet.iter().max());
            Error::OamOutOfRange {
                charge: l,
                min: min.copied().unwrap_or(0),
                max: max.copied().unwrap_or(0),
            }
        })?;
        amps[idx] += c;
    }
    Ket::new(basis, amps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn bell_minus() -> Ket {
        let basis = Basis::new(vec![Subsystem::polarization("a"), Subsystem::polarization("b")]).unwrap();
        Ket::new(basis, vec![c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(-1.0, 0.0)]).unwrap()
    }

    fn rename(k: &Ket, name: &str) -> Ket {
        let sub = Subsystem {
            name: name.into(),
            kind: k.basis().subsystems()[0].kind.clone(),
        };
        Ket::from_vector(Basis::single(sub), k.amplitudes().clone()).unwrap()
    }

    #[test]
    fn tensor_of_basis_states() {
        let h = PolBasis::H.ket();
        let one = oam_ket(&[-1, 0, 1], &[(1, c(1.0, 0.0))]).unwrap();
        let k = tensor(&h, &one).unwrap();
        assert_eq!(k.dim(), 6);
        assert_abs_diff_eq!(k.amplitude(&[Label::Pol(Pol::H), Label::Oam(1)]).unwrap().re, 1.0);
        assert_abs_diff_eq!(k.norm_sqr(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn tensor_distributes() {
        let k = tensor(&PolBasis::D.ket(), &oam_ket(&[0], &[(0, c(1.0, 0.0))]).unwrap()).unwrap();
        for p in [Pol::H, Pol::V] {
            let a = k.amplitude(&[Label::Pol(p), Label::Oam(0)]).unwrap();
            assert_abs_diff_eq!(a.re, FRAC_1_SQRT_2, epsilon = 1e-15);
        }
    }

    #[test]
    fn tensor_d_with_balanced_oam() {
        let s = FRAC_1_SQRT_2;
        let oam = oam_ket(&[-3, 3], &[(3, c(s, 0.0)), (-3, c(s, 0.0))]).unwrap();
        let k = tensor(&PolBasis::D.ket(), &oam).unwrap();
        for a in k.amplitudes().iter() {
            assert_abs_diff_eq!(a.re, 0.5, epsilon = 1e-15);
            assert_abs_diff_eq!(a.im, 0.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn tensor_rejects_name_collision() {
        let err = tensor(&PolBasis::H.ket(), &PolBasis::V.ket()).unwrap_err();
        assert!(matches!(err, Error::InvalidComposition(_)));
    }

    #[test]
    fn orthogonal_projection_is_null() {
        let k = tensor(&PolBasis::H.ket(), &oam_ket(&[1], &[(1, c(1.0, 0.0))]).unwrap()).unwrap();
        let out = project_ket(&k, "pol", &PolBasis::V.ket()).unwrap();
        assert!(out.is_null());
        assert_eq!(out.probability(), 0.0);
    }

    #[test]
    fn bell_state_conditional_on_diagonal() {
        // 4x4 oracle: <D|_a (|HH> - |VV>)/sqrt2 = (|H> - |V>)/2
        let psi = bell_minus();
        let d = rename(&PolBasis::D.ket(), "a");
        let out = project_ket(&psi, "a", &d).unwrap();
        assert_abs_diff_eq!(out.probability(), 0.5, epsilon = 1e-15);
        let expected = rename(&PolBasis::A.ket(), "b");
        assert!(out.residual().unwrap().approx_eq(&expected, 1e-12));
    }

    #[test]
    fn density_projection_matches_ket_projection() {
        let psi = bell_minus();
        let r = rename(&PolBasis::R.ket(), "b");
        let pk = project_ket(&psi, "b", &r).unwrap();
        let pd = project_density(&psi.projector(), "b", &r).unwrap();
        assert_abs_diff_eq!(pk.probability(), pd.probability(), epsilon = 1e-14);
        let f = fidelity(pd.residual().unwrap(), pk.residual().unwrap()).unwrap();
        assert_abs_diff_eq!(f, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn fidelity_examples() {
        let psi = bell_minus();
        assert_abs_diff_eq!(fidelity(&psi.projector(), &psi).unwrap(), 1.0, epsilon = 1e-14);
        let mixed = DensityMatrix::maximally_mixed(psi.basis().clone());
        assert_abs_diff_eq!(fidelity(&mixed, &psi).unwrap(), 0.25, epsilon = 1e-14);
        let rho = white_noise_mix(&psi, 0.1).unwrap();
        assert_abs_diff_eq!(fidelity(&rho, &psi).unwrap(), 0.925, epsilon = 1e-14);
    }

    #[test]
    fn fidelity_dimension_mismatch() {
        let psi = bell_minus();
        assert!(fidelity(&psi.projector(), &PolBasis::H.ket()).is_err());
    }

    #[test]
    fn white_noise_endpoints_and_coherence() {
        let psi = bell_minus();
        let pure = white_noise_mix(&psi, 0.0).unwrap();
        let diff = (pure.entries() - psi.projector().entries()).norm();
        assert!(diff < 1e-15);
        let full = white_noise_mix(&psi, 1.0).unwrap();
        assert_abs_diff_eq!(full.purity(), 0.25, epsilon = 1e-14);
        let rho = white_noise_mix(&psi, 0.04).unwrap();
        assert_abs_diff_eq!(rho.entries()[(0, 3)].norm(), 0.48, epsilon = 1e-14);
        assert!(white_noise_mix(&psi, 1.5).is_err());
        assert!(white_noise_mix(&psi, -0.1).is_err());
    }

    #[test]
    fn canonical_phase_makes_first_amplitude_real() {
        let k = polarization_ket(c(0.0, 1.0), c(1.0, 0.0)).unwrap();
        let a = k.amplitudes();
        assert_abs_diff_eq!(a[0].im, 0.0);
        assert!(a[0].re > 0.0);
        assert_abs_diff_eq!(a[1].re, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(a[1].im, -FRAC_1_SQRT_2, epsilon = 1e-15);
    }

    #[test]
    fn non_psd_matrix_is_flagged_and_repairable() {
        let basis = Basis::single(Subsystem::polarization("pol"));
        let m = DMatrix::from_row_slice(2, 2, &[c(1.1, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(-0.1, 0.0)]);
        let rho = DensityMatrix::new(basis, m).unwrap();
        assert!(!rho.is_psd());
        let fixed = rho.repaired().unwrap();
        assert!(fixed.is_psd());
        assert_abs_diff_eq!(fixed.entries()[(0, 0)].re, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn non_hermitian_rejected() {
        let basis = Basis::single(Subsystem::polarization("pol"));
        let m = DMatrix::from_row_slice(2, 2, &[c(0.5, 0.0), c(0.3, 0.0), c(0.0, 0.0), c(0.5, 0.0)]);
        assert!(DensityMatrix::new(basis, m).is_err());
    }

    #[test]
    fn partial_trace_of_bell_state_is_mixed() {
        let rho = bell_minus().projector().partial_trace("a").unwrap();
        assert_abs_diff_eq!(rho.purity(), 0.5, epsilon = 1e-14);
    }

    #[test]
    fn pol_basis_kets_are_orthonormal_pairs() {
        for b in PolBasis::ALL {
            let ip = b.ket().inner(&b.orthogonal().ket()).unwrap();
            assert!(ip.norm() < 1e-15, "{b}");
        }
    }
}
