//! Lattices, time-dependent periodic potentials and their plane-wave fiber Hamiltonians.
//!
//! Units: ħ = m = e = 1. The fiber at quasi-momentum k is
//! `H(k,t)_{GG'} = ½|k+G|² δ_{GG'} + c_{G-G'}(t)` on the box `n_i ∈ [-n_cut, n_cut]`
//! of dual-lattice coordinates.

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{c, CMat};

#[derive(Clone, Debug, PartialEq)]
pub struct Lattice {
    dim: usize,
    /// rows are the generators γ_i
    generators: DMatrix<f64>,
    /// rows are the dual generators γ*_i, γ_i·γ*_j = 2π δ_ij
    duals: DMatrix<f64>,
    cell_volume: f64,
    zone_volume: f64,
}

pub fn make_lattice(generators: &DMatrix<f64>) -> Result<Lattice> {
    let d = generators.nrows();
    assert!(generators.is_square() && (1..=3).contains(&d), "generator matrix must be d×d with d in 1..=3");
    let det = generators.determinant();
    if det.abs() < 1e-12 {
        return Err(Error::SingularGenerators { det });
    }
    let inv = generators.clone().try_inverse().ok_or(Error::SingularGenerators { det })?;
    let duals = inv.transpose() * (2.0 * std::f64::consts::PI);
    let zone_volume = duals.determinant().abs();
    Ok(Lattice { dim: d, generators: generators.clone(), duals, cell_volume: det.abs(), zone_volume })
}

/// Result of folding a dual-space point into the centred zone.
#[derive(Clone, Debug, PartialEq)]
pub struct Folded {
    pub k: Vec<f64>,
    /// integer dual-lattice coordinates of the removed shift
    pub shift: Vec<i32>,
    /// the same shift as a Cartesian vector
    pub shift_vector: Vec<f64>,
}

impl Lattice {
    pub fn cubic(dim: usize, a: f64) -> Lattice {
        make_lattice(&(DMatrix::identity(dim, dim) * a)).expect("cubic lattice is regular")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn generators(&self) -> &DMatrix<f64> {
        &self.generators
    }

    pub fn duals(&self) -> &DMatrix<f64> {
        &self.duals
    }

    pub fn cell_volume(&self) -> f64 {
        self.cell_volume
    }

    pub fn zone_volume(&self) -> f64 {
        self.zone_volume
    }

    /// Cartesian vector Σ n_i γ*_i.
    pub fn dual_vector(&self, n: &[i32]) -> Vec<f64> {
        (0..self.dim).map(|j| (0..self.dim).map(|i| n[i] as f64 * self.duals[(i, j)]).sum()).collect()
    }

    /// Cartesian point Σ s_i γ*_i from fractional dual coordinates.
    pub fn from_fractional(&self, s: &[f64]) -> Vec<f64> {
        (0..self.dim).map(|j| (0..self.dim).map(|i| s[i] * self.duals[(i, j)]).sum()).collect()
    }

    /// Fractional dual coordinates s_i = k·γ_i / 2π.
    pub fn fractional(&self, k: &[f64]) -> Vec<f64> {
        (0..self.dim)
            .map(|i| (0..self.dim).map(|j| k[j] * self.generators[(i, j)]).sum::<f64>() / (2.0 * std::f64::consts::PI))
            .collect()
    }

    /// Folds k into Y* (each fractional coordinate in [-½, ½)).
    pub fn fold_to_bz(&self, k: &[f64]) -> Folded {
        let s = self.fractional(k);
        let shift: Vec<i32> = s.iter().map(|x| (x + 0.5).floor() as i32).collect();
        let shift_vector = self.dual_vector(&shift);
        let k = k.iter().zip(&shift_vector).map(|(a, b)| a - b).collect();
        Folded { k, shift, shift_vector }
    }

    /// Converts derivatives along fractional axes into Cartesian components: ∂_k = B⁻¹ ∂_s.
    pub fn fractional_to_cartesian(&self) -> DMatrix<f64> {
        self.duals.clone().try_inverse().expect("dual generators are regular")
    }
}

fn switch(s: f64) -> f64 {
    if s > 0.0 {
        (-1.0 / s).exp()
    } else {
        0.0
    }
}

fn switch_prime(s: f64) -> f64 {
    if s > 0.0 {
        (-1.0 / s).exp() / (s * s)
    } else {
        0.0
    }
}

/// C^∞ step rising from 0 at s ≤ 0 to 1 at s ≥ 1, with every derivative vanishing at both ends.
pub fn smooth_step(s: f64) -> f64 {
    if s <= 0.0 {
        0.0
    } else if s >= 1.0 {
        1.0
    } else {
        let (a, b) = (switch(s), switch(1.0 - s));
        a / (a + b)
    }
}

pub fn smooth_step_derivative(s: f64) -> f64 {
    if s <= 0.0 || s >= 1.0 {
        return 0.0;
    }
    let (a, b) = (switch(s), switch(1.0 - s));
    let (da, db) = (switch_prime(s), -switch_prime(1.0 - s));
    (da * b - a * db) / ((a + b) * (a + b))
}

/// Time profile of a loop: the fraction p(t/T) of the cycle completed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    /// p(s) = s, traversed periodically
    Linear,
    /// p(s) = σ(s), starting and stopping with all derivatives zero
    Flat,
}

impl Profile {
    pub fn phase(self, s: f64) -> f64 {
        match self {
            Profile::Linear => s,
            Profile::Flat => smooth_step(s),
        }
    }

    pub fn rate(self, s: f64) -> f64 {
        match self {
            Profile::Linear => 1.0,
            Profile::Flat => smooth_step_derivative(s),
        }
    }
}

/// Complex amplitude schedule c_G(t) with a closed-form derivative.
#[derive(Clone, Debug, PartialEq)]
pub enum Schedule {
    Constant(C64),
    /// from + (to − from)·σ(t/T)
    Ramp { from: C64, to: C64 },
    /// mean + cos·cos θ + sin·sin θ with θ = 2π·winding·p(t/T)
    Cycle { mean: C64, cos: C64, sin: C64, winding: i32, profile: Profile },
}

impl Schedule {
    fn angle(winding: i32, profile: Profile, t: f64, period: f64) -> (f64, f64) {
        let tau = 2.0 * std::f64::consts::PI * winding as f64;
        let s = t / period;
        (tau * profile.phase(s), tau * profile.rate(s) / period)
    }

    pub fn value(&self, t: f64, period: f64) -> C64 {
        match *self {
            Schedule::Constant(v) => v,
            Schedule::Ramp { from, to } => from + (to - from) * smooth_step(t / period),
            Schedule::Cycle { mean, cos, sin, winding, profile } => {
                let (th, _) = Self::angle(winding, profile, t, period);
                mean + cos * th.cos() + sin * th.sin()
            }
        }
    }

    pub fn derivative(&self, t: f64, period: f64) -> C64 {
        match *self {
            Schedule::Constant(_) => c(0.0, 0.0),
            Schedule::Ramp { from, to } => (to - from) * (smooth_step_derivative(t / period) / period),
            Schedule::Cycle { cos, sin, winding, profile, .. } => {
                let (th, rate) = Self::angle(winding, profile, t, period);
                (-cos * th.sin() + sin * th.cos()) * rate
            }
        }
    }

    pub fn conj(&self) -> Schedule {
        match *self {
            Schedule::Constant(v) => Schedule::Constant(v.conj()),
            Schedule::Ramp { from, to } => Schedule::Ramp { from: from.conj(), to: to.conj() },
            Schedule::Cycle { mean, cos, sin, winding, profile } => {
                Schedule::Cycle { mean: mean.conj(), cos: cos.conj(), sin: sin.conj(), winding, profile }
            }
        }
    }

    /// Traversing the schedule backwards in time: t → T − t.
    pub fn reversed(&self) -> Schedule {
        match *self {
            Schedule::Constant(v) => Schedule::Constant(v),
            Schedule::Ramp { from, to } => Schedule::Ramp { from: to, to: from },
            Schedule::Cycle { mean, cos, sin, winding, profile } => {
                // θ(T − t) = 2πw − θ(t) for both profiles, so sin flips sign.
                Schedule::Cycle { mean, cos, sin: -sin, winding, profile }
            }
        }
    }

    pub fn is_periodic(&self) -> bool {
        !matches!(self, Schedule::Ramp { .. })
    }

    /// ∂_t vanishes at t = 0 and t = T.
    pub fn is_flat_at_ends(&self) -> bool {
        match self {
            Schedule::Constant(_) | Schedule::Ramp { .. } => true,
            Schedule::Cycle { profile, .. } => *profile == Profile::Flat,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Term {
    /// dual-lattice coordinates of G
    pub g: Vec<i32>,
    pub schedule: Schedule,
}

/// V_Γ(x,t) = Σ_G c_G(t) e^{iG·x} over a period T.
#[derive(Clone, Debug, PartialEq)]
pub struct PotentialPath {
    lattice: Lattice,
    period: f64,
    terms: Vec<Term>,
    real: bool,
}

impl PotentialPath {
    /// A real potential: every harmonic is added together with its conjugate partner.
    pub fn real(lattice: Lattice, period: f64) -> PotentialPath {
        PotentialPath { lattice, period, terms: Vec::new(), real: true }
    }

    /// A potential with independent coefficients (no conjugate partners added).
    pub fn general(lattice: Lattice, period: f64) -> PotentialPath {
        PotentialPath { lattice, period, terms: Vec::new(), real: false }
    }

    /// Adds c_G(t); for real paths also c_{-G}(t) = conj c_G(t).
    pub fn with_harmonic(mut self, g: &[i32], schedule: Schedule) -> PotentialPath {
        assert_eq!(g.len(), self.lattice.dim, "harmonic index has wrong dimension");
        let zero = g.iter().all(|&x| x == 0);
        if self.real && !zero {
            let minus: Vec<i32> = g.iter().map(|x| -x).collect();
            self.terms.push(Term { g: minus, schedule: schedule.conj() });
        }
        self.terms.push(Term { g: g.to_vec(), schedule });
        self
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub fn is_real(&self) -> bool {
        self.real
    }

    pub fn coefficient(&self, g: &[i32], t: f64) -> C64 {
        self.terms.iter().filter(|term| term.g == g).map(|term| term.schedule.value(t, self.period)).sum()
    }

    /// max |c_{−G}(t) − conj c_G(t)| over sample times; H is Hermitian only when this vanishes.
    pub fn hermiticity_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for s in 0..=32 {
            let t = self.period * s as f64 / 32.0;
            for term in &self.terms {
                let minus: Vec<i32> = term.g.iter().map(|x| -x).collect();
                worst = worst.max((self.coefficient(&minus, t) - self.coefficient(&term.g, t).conj()).norm());
            }
        }
        worst
    }

    pub fn is_periodic(&self) -> bool {
        self.terms.iter().all(|t| t.schedule.is_periodic())
    }

    pub fn is_flat_at_ends(&self) -> bool {
        self.terms.iter().all(|t| t.schedule.is_flat_at_ends())
    }

    pub fn is_static(&self) -> bool {
        self.terms.iter().all(|t| matches!(t.schedule, Schedule::Constant(_)))
    }

    /// Distinct harmonics G appearing in the path.
    pub fn harmonics(&self) -> Vec<Vec<i32>> {
        let mut gs: Vec<Vec<i32>> = self.terms.iter().map(|t| t.g.clone()).collect();
        gs.sort();
        gs.dedup();
        gs
    }

    /// The same deformation run backwards, V(x, T − t).
    pub fn reversed(&self) -> PotentialPath {
        let terms = self.terms.iter().map(|t| Term { g: t.g.clone(), schedule: t.schedule.reversed() }).collect();
        PotentialPath { terms, ..self.clone() }
    }

    /// Places 1D paths on the axes of a product lattice: V(x,t) = Σ_i V_i(x_i, t).
    pub fn separable(parts: &[PotentialPath]) -> PotentialPath {
        let d = parts.len();
        assert!((1..=3).contains(&d) && parts.iter().all(|p| p.lattice.dim == 1));
        let period = parts[0].period;
        assert!(parts.iter().all(|p| (p.period - period).abs() < 1e-12), "separable parts need a common period");
        let gens = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
            d,
            parts.iter().map(|p| p.lattice.generators[(0, 0)]),
        ));
        let lattice = make_lattice(&gens).expect("product of regular lattices");
        let mut terms = Vec::new();
        for (axis, p) in parts.iter().enumerate() {
            for t in &p.terms {
                let mut g = vec![0; d];
                g[axis] = t.g[0];
                terms.push(Term { g, schedule: t.schedule.clone() });
            }
        }
        PotentialPath { lattice, period, terms, real: parts.iter().all(|p| p.real) }
    }
}

/// Named potential families.
pub mod families {
    use super::*;

    /// V = 2v·cos(2πx/a).
    pub fn static_cosine(lattice: Lattice, v: f64, period: f64) -> PotentialPath {
        PotentialPath::real(lattice, period).with_harmonic(&[1], Schedule::Constant(c(v, 0.0)))
    }

    /// V = 2v·cos(G(x − a·p(t/T))): c_G(t) = v·e^{-iθ(t)}.
    pub fn sliding_cosine(lattice: Lattice, v: f64, period: f64, profile: Profile) -> PotentialPath {
        PotentialPath::real(lattice, period).with_harmonic(
            &[1],
            Schedule::Cycle { mean: c(0.0, 0.0), cos: c(v, 0.0), sin: c(0.0, -v), winding: 1, profile },
        )
    }

    /// Two harmonics. Default (inversion-breaking) form: first harmonic slides,
    /// c_1 = r·e^{-iθ}, second harmonic fixed, c_2 = w. The symmetric form keeps both
    /// coefficients real: c_1 = r(1 + ½cos θ), c_2 = w(1 + ½sin θ).
    pub fn two_harmonic_loop(
        lattice: Lattice,
        r: f64,
        w: f64,
        period: f64,
        profile: Profile,
        symmetric: bool,
    ) -> PotentialPath {
        let p = PotentialPath::real(lattice, period);
        if symmetric {
            p.with_harmonic(
                &[1],
                Schedule::Cycle { mean: c(r, 0.0), cos: c(0.5 * r, 0.0), sin: c(0.0, 0.0), winding: 1, profile },
            )
            .with_harmonic(
                &[2],
                Schedule::Cycle { mean: c(w, 0.0), cos: c(0.0, 0.0), sin: c(0.5 * w, 0.0), winding: 1, profile },
            )
        } else {
            p.with_harmonic(
                &[1],
                Schedule::Cycle { mean: c(0.0, 0.0), cos: c(r, 0.0), sin: c(0.0, -r), winding: 1, profile },
            )
            .with_harmonic(&[2], Schedule::Constant(c(w, 0.0)))
        }
    }

    /// Flat-endpoint ramp of the first two harmonics between two static crystals.
    pub fn ramp(lattice: Lattice, period: f64, first: (C64, C64), second: (C64, C64)) -> PotentialPath {
        PotentialPath::real(lattice, period)
            .with_harmonic(&[1], Schedule::Ramp { from: first.0, to: first.1 })
            .with_harmonic(&[2], Schedule::Ramp { from: second.0, to: second.1 })
    }
}

/// Plane-wave index box n ∈ [-n_cut, n_cut]^d in lexicographic order (last axis fastest).
/// Index reversal a → size−1−a is exactly n → −n.
#[derive(Clone, Debug, PartialEq)]
pub struct PlaneWaveBasis {
    dim: usize,
    n_cut: usize,
    coords: Vec<[i32; 3]>,
}

impl PlaneWaveBasis {
    pub fn new(dim: usize, n_cut: usize) -> PlaneWaveBasis {
        let w = 2 * n_cut + 1;
        let size = w.pow(dim as u32);
        let coords = (0..size)
            .map(|mut idx| {
                let mut n = [0i32; 3];
                for axis in (0..dim).rev() {
                    n[axis] = (idx % w) as i32 - n_cut as i32;
                    idx /= w;
                }
                n
            })
            .collect();
        PlaneWaveBasis { dim, n_cut, coords }
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_cut(&self) -> usize {
        self.n_cut
    }

    pub fn coords(&self, a: usize) -> &[i32] {
        &self.coords[a][..self.dim]
    }

    pub fn index(&self, n: &[i32]) -> Option<usize> {
        let w = 2 * self.n_cut as i32 + 1;
        let mut idx = 0i64;
        for &x in &n[..self.dim] {
            let y = x + self.n_cut as i32;
            if y < 0 || y >= w {
                return None;
            }
            idx = idx * w as i64 + y as i64;
        }
        Some(idx as usize)
    }

    pub fn reverse(&self, a: usize) -> usize {
        self.len() - 1 - a
    }

    /// Map a → index of n(a) + shift, if inside the box.
    pub fn shift_map(&self, shift: &[i32]) -> Vec<Option<usize>> {
        (0..self.len())
            .map(|a| {
                let n: Vec<i32> = self.coords(a).iter().zip(shift).map(|(x, s)| x + s).collect();
                self.index(&n)
            })
            .collect()
    }

    /// Rows of x re-indexed for the fiber at k + Σ shift_i γ*_i: y_a = x_{a+shift} (zero outside the box).
    pub fn shift_rows(&self, x: &CMat, shift: &[i32]) -> CMat {
        if shift.iter().all(|&s| s == 0) {
            return x.clone();
        }
        let map = self.shift_map(shift);
        let mut y = CMat::zeros(x.nrows(), x.ncols());
        for (a, src) in map.iter().enumerate() {
            if let Some(b) = src {
                y.row_mut(a).copy_from(&x.row(*b));
            }
        }
        y
    }

    /// Index reversal G → −G on rows.
    pub fn reverse_rows(&self, x: &CMat) -> CMat {
        let n = x.nrows();
        CMat::from_fn(n, x.ncols(), |a, j| x[(n - 1 - a, j)])
    }
}

/// Dense fiber matrix at a single (k, t).
#[derive(Clone, Debug)]
pub struct FiberHamiltonian {
    pub k: Vec<f64>,
    pub t: f64,
    pub n_cut: usize,
    pub matrix: CMat,
}

/// Precomputed plane-wave couplings of a potential path; evaluates H(k,t), ∂_tH and ∂_kH.
#[derive(Clone, Debug)]
pub struct FiberModel {
    path: PotentialPath,
    basis: PlaneWaveBasis,
    gvecs: Vec<Vec<f64>>,
    couplings: Vec<Vec<(usize, usize)>>,
    truncated: Vec<Vec<i32>>,
}

impl FiberModel {
    pub fn new(path: &PotentialPath, n_cut: usize) -> FiberModel {
        assert!(n_cut >= 1, "n_cut must be at least 1");
        let d = path.lattice.dim;
        let basis = PlaneWaveBasis::new(d, n_cut);
        let gvecs = (0..basis.len()).map(|a| path.lattice.dual_vector(basis.coords(a))).collect();
        let mut truncated = Vec::new();
        let couplings = path
            .terms
            .iter()
            .map(|term| {
                if term.g.iter().any(|&x| x.unsigned_abs() as usize > 2 * n_cut) {
                    truncated.push(term.g.clone());
                }
                (0..basis.len())
                    .filter_map(|a| {
                        let n: Vec<i32> = basis.coords(a).iter().zip(&term.g).map(|(x, g)| x - g).collect();
                        basis.index(&n).map(|b| (a, b))
                    })
                    .collect()
            })
            .collect();
        for g in &truncated {
            log::warn!("{}", Error::CoefficientOutsideCutoff { g: g.clone(), n_cut });
        }
        FiberModel { path: path.clone(), basis, gvecs, couplings, truncated }
    }

    pub fn path(&self) -> &PotentialPath {
        &self.path
    }

    pub fn basis(&self) -> &PlaneWaveBasis {
        &self.basis
    }

    pub fn lattice(&self) -> &Lattice {
        &self.path.lattice
    }

    pub fn dim(&self) -> usize {
        self.path.lattice.dim
    }

    pub fn size(&self) -> usize {
        self.basis.len()
    }

    pub fn n_cut(&self) -> usize {
        self.basis.n_cut
    }

    /// Harmonics that cannot couple any pair of plane waves inside the cutoff box.
    pub fn truncated(&self) -> &[Vec<i32>] {
        &self.truncated
    }

    /// Errors if any harmonic was silently dropped by the cutoff.
    pub fn check_cutoff(&self) -> Result<()> {
        match self.truncated.first() {
            Some(g) => Err(Error::CoefficientOutsideCutoff { g: g.clone(), n_cut: self.n_cut() }),
            None => Ok(()),
        }
    }

    /// Cartesian G of basis index a.
    pub fn gvec(&self, a: usize) -> &[f64] {
        &self.gvecs[a]
    }

    pub fn hamiltonian(&self, k: &[f64], t: f64) -> CMat {
        let n = self.size();
        let mut h = CMat::zeros(n, n);
        for a in 0..n {
            let e: f64 = self.gvecs[a].iter().zip(k).map(|(g, k)| (k + g) * (k + g)).sum();
            h[(a, a)] = c(0.5 * e, 0.0);
        }
        for (term, pairs) in self.path.terms.iter().zip(&self.couplings) {
            let v = term.schedule.value(t, self.path.period);
            for &(a, b) in pairs {
                h[(a, b)] += v;
            }
        }
        h
    }

    pub fn time_derivative(&self, _k: &[f64], t: f64) -> CMat {
        let n = self.size();
        let mut h = CMat::zeros(n, n);
        for (term, pairs) in self.path.terms.iter().zip(&self.couplings) {
            let v = term.schedule.derivative(t, self.path.period);
            for &(a, b) in pairs {
                h[(a, b)] += v;
            }
        }
        h
    }

    /// Diagonal of ∂_{k_j}H = (k+G)_j.
    pub fn k_derivative(&self, k: &[f64], j: usize) -> Vec<f64> {
        self.gvecs.iter().map(|g| k[j] + g[j]).collect()
    }
}

pub fn assemble_fiber(path: &PotentialPath, k: &[f64], t: f64, n_cut: usize) -> FiberHamiltonian {
    let model = FiberModel::new(path, n_cut);
    FiberHamiltonian { k: k.to_vec(), t, n_cut, matrix: model.hamiltonian(k, t) }
}

pub fn fiber_time_derivative(path: &PotentialPath, k: &[f64], t: f64, n_cut: usize) -> CMat {
    FiberModel::new(path, n_cut).time_derivative(k, t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::max_abs;
    use std::f64::consts::PI;

    fn one_d() -> Lattice {
        Lattice::cubic(1, 1.0)
    }

    #[test]
    fn lattice_duals() {
        let l = one_d();
        assert!((l.duals()[(0, 0)] - 2.0 * PI).abs() < 1e-14);
        assert!((l.cell_volume() - 1.0).abs() < 1e-14);
        assert!((l.zone_volume() - 2.0 * PI).abs() < 1e-14);
        let sq = Lattice::cubic(2, 1.0);
        assert!((sq.duals() - DMatrix::identity(2, 2) * (2.0 * PI)).abs().max() < 1e-14);
    }

    #[test]
    fn hexagonal_biorthogonality() {
        let g = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.5, 3f64.sqrt() / 2.0]);
        let l = make_lattice(&g).unwrap();
        let prod = l.generators() * l.duals().transpose();
        assert!((prod - DMatrix::identity(2, 2) * (2.0 * PI)).abs().max() < 1e-12);
        assert!((l.cell_volume() * l.zone_volume() - (2.0 * PI).powi(2)).abs() < 1e-10);
    }

    #[test]
    fn singular_generators_rejected() {
        let g = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.5, 1.0]);
        assert!(matches!(make_lattice(&g), Err(Error::SingularGenerators { .. })));
    }

    #[test]
    fn folding() {
        let l = one_d();
        let f = l.fold_to_bz(&[0.0]);
        assert_eq!(f.shift, vec![0]);
        let f = l.fold_to_bz(&[2.0 * PI]);
        assert!(f.k[0].abs() < 1e-14 && (f.shift_vector[0] - 2.0 * PI).abs() < 1e-14);
        let f = l.fold_to_bz(&[3.5 * PI]);
        assert!((f.k[0] + 0.5 * PI).abs() < 1e-12 && f.shift == vec![2]);
        let f = l.fold_to_bz(&[PI]);
        assert!((f.k[0] + PI).abs() < 1e-12, "upper zone edge folds to -π");
    }

    #[test]
    fn smooth_step_shape() {
        assert_eq!(smooth_step(0.0), 0.0);
        assert_eq!(smooth_step(1.0), 1.0);
        assert!((smooth_step(0.5) - 0.5).abs() < 1e-15);
        assert!((smooth_step_derivative(0.5) - 2.0).abs() < 1e-12);
        assert!(smooth_step_derivative(1e-3) < 1e-300);
        for &s in &[0.1, 0.3, 0.77] {
            let h = 1e-6;
            let fd = (smooth_step(s + h) - smooth_step(s - h)) / (2.0 * h);
            assert!((fd - smooth_step_derivative(s)).abs() < 1e-8);
        }
    }

    #[test]
    fn free_fiber_diagonal() {
        let p = PotentialPath::real(one_d(), 1.0);
        let h = assemble_fiber(&p, &[0.0], 0.0, 1).matrix;
        let want = [2.0 * PI * PI, 0.0, 2.0 * PI * PI];
        for a in 0..3 {
            assert!((h[(a, a)].re - want[a]).abs() < 1e-12);
        }
        assert!(max_abs(&(h.clone() - CMat::from_diagonal(&h.diagonal()))) == 0.0);
    }

    #[test]
    fn cosine_couples_neighbours() {
        let p = families::static_cosine(one_d(), 0.3, 1.0);
        let h = assemble_fiber(&p, &[0.2], 0.0, 2).matrix;
        for a in 0..5usize {
            for b in 0..5 {
                let want = if a.abs_diff(b) == 1 { 0.3 } else { 0.0 };
                if a != b {
                    assert!((h[(a, b)] - c(want, 0.0)).norm() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn equivariance_interior_block() {
        let p = families::two_harmonic_loop(one_d(), 1.0, 1.0, 2.0, Profile::Linear, false);
        let m = FiberModel::new(&p, 4);
        let k = 0.7;
        let h = m.hamiltonian(&[k], 0.3);
        let hs = m.hamiltonian(&[k + 2.0 * PI], 0.3);
        // H(k+γ*)_{a,b} = H(k)_{a+1,b+1}
        for a in 0..8 {
            for b in 0..8 {
                assert!((hs[(a, b)] - h[(a + 1, b + 1)]).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn time_derivative_of_sliding_cosine() {
        let v = 0.5;
        let period = 3.0;
        let p = families::sliding_cosine(one_d(), v, period, Profile::Linear);
        let m = FiberModel::new(&p, 2);
        let t = 0.4;
        let dh = m.time_derivative(&[0.1], t);
        let cplus = p.coefficient(&[1], t);
        assert!((dh[(3, 2)] - c(0.0, -2.0 * PI / period) * cplus).norm() < 1e-12);
        assert!((dh[(2, 3)] - c(0.0, 2.0 * PI / period) * cplus.conj()).norm() < 1e-12);
        let h = 1e-6;
        let fd = (m.hamiltonian(&[0.1], t + h) - m.hamiltonian(&[0.1], t - h)) / c(2.0 * h, 0.0);
        assert!(max_abs(&(fd - dh)) < 1e-8);
        let stat = families::static_cosine(one_d(), v, period);
        assert_eq!(max_abs(&fiber_time_derivative(&stat, &[0.1], t, 2)), 0.0);
    }

    #[test]
    fn flat_ramp_has_no_endpoint_derivative() {
        let p = families::ramp(one_d(), 1.0, (c(0.5, 0.0), c(0.2, 0.3)), (c(0.3, 0.0), c(0.3, 0.0)));
        assert_eq!(max_abs(&fiber_time_derivative(&p, &[0.0], 0.0, 3)), 0.0);
        assert_eq!(max_abs(&fiber_time_derivative(&p, &[0.0], 1.0, 3)), 0.0);
    }

    #[test]
    fn cutoff_reach_is_reported() {
        let p = PotentialPath::real(one_d(), 1.0).with_harmonic(&[5], Schedule::Constant(c(0.1, 0.0)));
        let m = FiberModel::new(&p, 2);
        assert!(matches!(m.check_cutoff(), Err(Error::CoefficientOutsideCutoff { .. })));
    }

    #[test]
    fn time_reversal_of_fiber() {
        let p = families::two_harmonic_loop(one_d(), 1.0, 1.0, 2.0, Profile::Flat, false);
        let m = FiberModel::new(&p, 3);
        let h = m.hamiltonian(&[0.9], 0.7);
        let hm = m.hamiltonian(&[-0.9], 0.7);
        let n = h.nrows();
        let rev = CMat::from_fn(n, n, |a, b| h[(n - 1 - a, n - 1 - b)].conj());
        assert_eq!(max_abs(&(rev - hm)), 0.0);
    }

    #[test]
    fn reversed_path_runs_backwards() {
        for profile in [Profile::Linear, Profile::Flat] {
            let p = families::two_harmonic_loop(one_d(), 1.0, 1.0, 2.0, profile, false);
            let r = p.reversed();
            for &t in &[0.0, 0.3, 1.1, 2.0] {
                assert!((r.coefficient(&[1], t) - p.coefficient(&[1], 2.0 - t)).norm() < 1e-12);
            }
        }
    }
}
