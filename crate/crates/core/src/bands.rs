//! Diagonalization of fiber Hamiltonians, band projectors and gap certificates.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{eigh, CMat};
use crate::mesh::Mesh;
use crate::model::{FiberHamiltonian, FiberModel};

pub const DEFAULT_GAP_THRESHOLD: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct BandData {
    pub k: Vec<f64>,
    pub t: f64,
    /// ascending
    pub energies: Vec<f64>,
    /// orthonormal columns φ_m
    pub vectors: CMat,
    /// ‖Hφ_m − E_mφ_m‖
    pub residuals: Vec<f64>,
}

pub fn diagonalize(h: &FiberHamiltonian) -> Result<BandData> {
    diagonalize_matrix(&h.matrix, &h.k, h.t)
}

pub(crate) fn diagonalize_matrix(h: &CMat, k: &[f64], t: f64) -> Result<BandData> {
    let (energies, vectors) = eigh(h);
    let hv = h * &vectors;
    let scale = energies.iter().fold(1.0f64, |m, e| m.max(e.abs()));
    let tol = 1e-9 * scale;
    let mut residuals = Vec::with_capacity(energies.len());
    for (m, &e) in energies.iter().enumerate() {
        let r = (hv.column(m) - vectors.column(m) * crate::linalg::c(e, 0.0)).norm();
        if r > tol {
            return Err(Error::EigenFailure { residual: r, tol });
        }
        residuals.push(r);
    }
    Ok(BandData { k: k.to_vec(), t, energies, vectors, residuals })
}

impl BandData {
    /// E_m − E_{m−1}, the gap just below band m.
    pub fn gap_below(&self, m: usize) -> f64 {
        if m == 0 || m >= self.energies.len() {
            f64::INFINITY
        } else {
            self.energies[m] - self.energies[m - 1]
        }
    }

    /// Smallest gap separating the band window [lo, hi) from the rest of the spectrum.
    pub fn isolation(&self, lo: usize, hi: usize) -> f64 {
        self.gap_below(lo).min(self.gap_below(hi))
    }

    pub fn frame(&self, lo: usize, hi: usize) -> CMat {
        self.vectors.columns(lo, hi - lo).into_owned()
    }

    pub fn projector(&self, lo: usize, hi: usize) -> CMat {
        let f = self.frame(lo, hi);
        &f * f.adjoint()
    }
}

/// Spectral projector onto the lowest M bands.
pub fn fermi_projector(b: &BandData, m: usize, delta: f64) -> Result<CMat> {
    let gap = b.gap_below(m);
    if gap <= delta {
        return Err(Error::GapClosed { k: b.k.clone(), t: b.t, gap, delta });
    }
    Ok(b.projector(0, m))
}

#[derive(Clone, Debug, Serialize)]
pub struct GapCertificate {
    pub bands: usize,
    pub k_nodes: Vec<usize>,
    pub t_nodes: usize,
    pub min_gap: f64,
    pub at_k: Vec<f64>,
    pub at_t: f64,
    pub threshold: f64,
    pub valid: bool,
}

/// Minimal E_M − E_{M−1} over the mesh.
pub fn certify_gap(model: &FiberModel, mesh: &Mesh, m: usize, delta: f64) -> Result<GapCertificate> {
    let gaps: Vec<(f64, usize)> = (0..mesh.len())
        .into_par_iter()
        .map(|node| {
            let (ti, ki) = mesh.split(node);
            let k = mesh.k.point(ki);
            let b = diagonalize_matrix(&model.hamiltonian(&k, mesh.t.time(ti)), &k, mesh.t.time(ti))?;
            Ok((b.gap_below(m), node))
        })
        .collect::<Result<_>>()?;
    let (min_gap, node) = gaps.into_iter().fold((f64::INFINITY, 0), |a, b| if b.0 < a.0 { b } else { a });
    let (ti, ki) = mesh.split(node);
    Ok(GapCertificate {
        bands: m,
        k_nodes: mesh.k.sizes().to_vec(),
        t_nodes: mesh.t.len(),
        min_gap,
        at_k: mesh.k.point(ki),
        at_t: mesh.t.time(ti),
        threshold: delta,
        valid: min_gap > delta,
    })
}

/// Band energies E_0..E_{count−1} on every node of the mesh, in node order.
pub fn band_surfaces(model: &FiberModel, mesh: &Mesh, count: usize) -> Result<Vec<Vec<f64>>> {
    (0..mesh.len())
        .into_par_iter()
        .map(|node| {
            let (ti, ki) = mesh.split(node);
            let k = mesh.k.point(ki);
            let t = mesh.t.time(ti);
            let b = diagonalize_matrix(&model.hamiltonian(&k, t), &k, t)?;
            Ok(b.energies[..count.min(b.energies.len())].to_vec())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{c, identity, max_abs, trace};
    use crate::mesh::{KMesh, TMesh};
    use crate::model::{assemble_fiber, families, Lattice, PotentialPath, Profile};
    use std::f64::consts::PI;

    fn lat() -> Lattice {
        Lattice::cubic(1, 1.0)
    }

    #[test]
    fn free_bands_are_sorted_parabolas() {
        let k = 0.3 * 2.0 * PI;
        let h = assemble_fiber(&PotentialPath::real(lat(), 1.0), &[k], 0.0, 2);
        let b = diagonalize(&h).unwrap();
        let mut want: Vec<f64> = (-2..=2).map(|n| 0.5 * (k + 2.0 * PI * n as f64).powi(2)).collect();
        want.sort_by(f64::total_cmp);
        for (e, w) in b.energies.iter().zip(&want) {
            assert!((e - w).abs() < 1e-10);
        }
        assert!(max_abs(&(b.vectors.adjoint() * &b.vectors - identity(5))) < 1e-10);
    }

    #[test]
    fn weak_cosine_gap_at_zone_edge() {
        // two-level degenerate perturbation theory: gap 2|v| + O(v²)
        for &v in &[0.01, 0.02] {
            let p = families::static_cosine(lat(), v, 1.0);
            let b = diagonalize(&assemble_fiber(&p, &[PI], 0.0, 8)).unwrap();
            let gap = b.energies[1] - b.energies[0];
            assert!((gap - 2.0 * v).abs() < 5.0 * v * v, "gap {gap} v {v}");
        }
    }

    #[test]
    fn fermi_projector_properties() {
        let p = families::two_harmonic_loop(lat(), 1.0, 1.0, 2.0, Profile::Linear, false);
        let b = diagonalize(&assemble_fiber(&p, &[0.4], 0.37, 9)).unwrap();
        for m in [1, 2] {
            let pr = fermi_projector(&b, m, 1e-6).unwrap();
            assert!(max_abs(&(&pr * &pr - &pr)) < 1e-10);
            assert!(max_abs(&(pr.adjoint() - &pr)) < 1e-12);
            assert!((trace(&pr) - c(m as f64, 0.0)).norm() < 1e-10);
        }
    }

    #[test]
    fn free_electrons_fail_certificate() {
        let model = FiberModel::new(&PotentialPath::real(lat(), 1.0), 3);
        let mesh = Mesh::new(KMesh::uniform(&lat(), 8), TMesh::open(2, 1.0));
        let cert = certify_gap(&model, &mesh, 1, DEFAULT_GAP_THRESHOLD).unwrap();
        assert!(!cert.valid && cert.min_gap < 1e-9);
        assert!(matches!(
            fermi_projector(&diagonalize(&assemble_fiber(&PotentialPath::real(lat(), 1.0), &[-PI], 0.0, 3)).unwrap(), 1, 1e-6),
            Err(Error::GapClosed { .. })
        ));
    }

    #[test]
    fn sliding_is_isospectral() {
        let p = families::sliding_cosine(lat(), 0.5, 1.0, Profile::Linear);
        let model = FiberModel::new(&p, 9);
        let mesh = Mesh::new(KMesh::uniform(&lat(), 8), TMesh::periodic(7, 1.0));
        let e = band_surfaces(&model, &mesh, 4).unwrap();
        for ti in 1..7 {
            for ki in 0..8 {
                for m in 0..4 {
                    assert!((e[mesh.node(ti, ki)][m] - e[mesh.node(0, ki)][m]).abs() < 1e-9);
                }
            }
        }
        let cert = certify_gap(&model, &mesh, 1, DEFAULT_GAP_THRESHOLD).unwrap();
        assert!(cert.valid && (cert.min_gap - 0.9998).abs() < 1e-3);
    }

    #[test]
    fn shrinking_loop_closes_gap() {
        let mut last = f64::INFINITY;
        for &r in &[1.0, 0.5, 0.25, 0.1] {
            let p = families::two_harmonic_loop(lat(), r, 0.5 * r, 1.0, Profile::Linear, false);
            let model = FiberModel::new(&p, 6);
            let mesh = Mesh::new(KMesh::uniform(&lat(), 16), TMesh::periodic(8, 1.0));
            let g = certify_gap(&model, &mesh, 1, 1e-6).unwrap().min_gap;
            assert!(g < last);
            last = g;
        }
    }

    #[test]
    fn spectrum_is_periodic_in_k() {
        let p = families::two_harmonic_loop(lat(), 1.0, 1.0, 2.0, Profile::Linear, false);
        let a = diagonalize(&assemble_fiber(&p, &[0.3], 0.5, 9)).unwrap();
        let b = diagonalize(&assemble_fiber(&p, &[0.3 - 2.0 * PI], 0.5, 9)).unwrap();
        for m in 0..5 {
            assert!((a.energies[m] - b.energies[m]).abs() < 1e-9);
        }
    }
}
