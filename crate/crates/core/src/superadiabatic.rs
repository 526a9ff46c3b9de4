//! Super-adiabatic projectors P_N^ε, intertwiners T_N^ε and the effective Hamiltonian.
//!
//! The ε-independent corrections P_1..P_N come from Nenciu's recursion
//! `P_j = G_j − 2P_0G_jP_0 + (1/2π)∮ R_z[P_0, ∂_tP_{j−1}]R_z dz`, `G_j = Σ_{m=1}^{j−1} P_mP_{j−m}`,
//! with ∂_t taken by finite differences over the t-mesh. They are computed once per mesh and then
//! combined for any number of ε values.

use std::ops::Range;

use rayon::prelude::*;
use serde::Serialize;

use crate::bands::diagonalize_matrix;
use crate::error::{Error, Result};
use crate::geometry::GaugeFrame;
use crate::linalg::{c, eigh, hermitian_part, identity, inv_sqrt, opnorm, CMat, I};
use crate::mesh::{Mesh, TMesh};
use crate::model::FiberModel;

pub const DEFAULT_QUADRATURE: usize = 64;
const MAX_QUADRATURE: usize = 4096;

/// Circle in the complex energy plane around a band window, with trapezoid nodes.
#[derive(Clone, Debug, Serialize)]
pub struct ResolventContour {
    pub center: f64,
    pub radius: f64,
    pub n_quad: usize,
    /// nodes z_q
    #[serde(skip)]
    pub nodes: Vec<crate::C64>,
    /// dz at each node, so that ∮ f dz ≈ Σ_q weights_q f(z_q)
    #[serde(skip)]
    pub weights: Vec<crate::C64>,
}

/// Contour through the gap midpoints around bands `bands` of the sorted spectrum `energies`.
/// The node count is raised above `n_quad` when needed to bring the trapezoid error below 1e-13.
pub fn resolvent_contour(energies: &[f64], bands: Range<usize>, n_quad: usize, delta: f64) -> Result<ResolventContour> {
    let lo = energies[bands.start];
    let hi = energies[bands.end - 1];
    let below = if bands.start > 0 { lo - energies[bands.start - 1] } else { f64::INFINITY };
    let above = if bands.end < energies.len() { energies[bands.end] - hi } else { f64::INFINITY };
    let gap = below.min(above);
    if gap <= delta {
        return Err(Error::GapClosed { k: vec![], t: f64::NAN, gap, delta });
    }
    let gap = if gap.is_finite() { gap } else { 1.0 };
    let center = 0.5 * (lo + hi);
    let radius = 0.5 * (hi - lo) + 0.5 * gap;
    // trapezoid error on a circle decays like (r/ρ)^n for poles at distance ρ > r and (ρ/r)^n inside
    let ratio = (radius / (radius + 0.5 * gap)).max((radius - 0.5 * gap) / radius);
    let needed = if ratio > 0.0 { (-13.0 * std::f64::consts::LN_10 / ratio.ln()).ceil() as usize } else { 0 };
    let n = n_quad.max(needed.min(MAX_QUADRATURE)).max(4);
    let (nodes, weights) = (0..n)
        .map(|q| {
            let th = 2.0 * std::f64::consts::PI * q as f64 / n as f64;
            let e = crate::C64::from_polar(1.0, th);
            (c(center, 0.0) + e * radius, I * e * (radius * 2.0 * std::f64::consts::PI / n as f64))
        })
        .unzip();
    Ok(ResolventContour { center, radius, n_quad: n, nodes, weights })
}

impl ResolventContour {
    /// W_ab = (1/2π) Σ_q w_q / ((E_a − z_q)(E_b − z_q)), so that in the eigenbasis
    /// (1/2π)∮ R_z X R_z dz = W ∘ X.
    pub fn sandwich_weights(&self, energies: &[f64]) -> CMat {
        let n = energies.len();
        let mut w = CMat::zeros(n, n);
        let scale = 1.0 / (2.0 * std::f64::consts::PI);
        for a in 0..n {
            for b in a..n {
                let s: crate::C64 = self
                    .nodes
                    .iter()
                    .zip(&self.weights)
                    .map(|(z, wq)| wq / ((c(energies[a], 0.0) - z) * (c(energies[b], 0.0) - z)))
                    .sum();
                w[(a, b)] = s * scale;
                w[(b, a)] = s * scale;
            }
        }
        w
    }

    /// (i/2π)∮ (H − z)^{−1} dz expressed in the eigenbasis (diagonal entries).
    pub fn projector_diagonal(&self, energies: &[f64]) -> Vec<crate::C64> {
        energies
            .iter()
            .map(|&e| {
                let s: crate::C64 = self.nodes.iter().zip(&self.weights).map(|(z, w)| w / (c(e, 0.0) - z)).sum();
                s * I / (2.0 * std::f64::consts::PI)
            })
            .collect()
    }

    /// (i/2π)∮ (H − z)^{−1} dz in the original basis.
    pub fn projector(&self, energies: &[f64], vectors: &CMat) -> CMat {
        let d = self.projector_diagonal(energies);
        let mut scaled = vectors.clone();
        for (j, x) in d.iter().enumerate() {
            for z in scaled.column_mut(j).iter_mut() {
                *z *= x;
            }
        }
        scaled * vectors.adjoint()
    }

    /// −(1/2πi)∮ tr R_z dz, the number of enclosed eigenvalues.
    pub fn residue_count(&self, energies: &[f64]) -> f64 {
        self.projector_diagonal(energies).iter().map(|z| z.re).sum()
    }
}

/// (1/2π)∮ R_z X R_z dz given the eigenbasis and sandwich weights.
fn contour_sandwich(x: &CMat, vectors: &CMat, weights: &CMat) -> CMat {
    let xe = vectors.adjoint() * x * vectors;
    vectors * xe.component_mul(weights) * vectors.adjoint()
}

fn commutator(a: &CMat, b: &CMat) -> CMat {
    a * b - b * a
}

/// ε-independent data along the mesh: P_0..P_N per node, H, and the transported frame.
#[derive(Clone, Debug)]
pub struct NenciuSeries {
    mesh: Mesh,
    bands: Range<usize>,
    order: usize,
    /// [node][j]
    terms: Vec<Vec<CMat>>,
    hamiltonians: Vec<CMat>,
    /// band energies 𝐄 = χ†Hχ per node
    band_matrices: Vec<CMat>,
    /// χ per closed time slice: [slice·N_k + k]
    frames: Vec<CMat>,
    slices: usize,
    pub n_quad: usize,
}

/// Nenciu corrections along one k-column, given P_0 and eigen-data per t-node.
pub fn nenciu_terms(
    p0: &[CMat],
    eigen: &[(Vec<f64>, CMat)],
    contours: &[CMat],
    tmesh: &TMesh,
    order: usize,
    flat_ends: bool,
) -> Vec<Vec<CMat>> {
    let nt = p0.len();
    let mut terms: Vec<Vec<CMat>> = p0.iter().map(|p| vec![p.clone()]).collect();
    for j in 1..=order {
        let level: Vec<CMat> = (0..nt)
            .map(|ti| {
                let d = p0[ti].nrows();
                let mut g = CMat::zeros(d, d);
                for m in 1..j {
                    g += &terms[ti][m] * &terms[ti][j - m];
                }
                let mut dprev = CMat::zeros(d, d);
                // every t-derivative of a flat-ended schedule vanishes at the endpoints
                let end = !tmesh.is_periodic() && (ti == 0 || ti + 1 == nt);
                if !(flat_ends && end) {
                    for (tj, w) in tmesh.derivative_stencil(ti) {
                        dprev += &terms[tj][j - 1] * c(w, 0.0);
                    }
                }
                let x = commutator(&p0[ti], &dprev);
                let sandwich = contour_sandwich(&x, &eigen[ti].1, &contours[ti]);
                let p = &g - (&p0[ti] * &g * &p0[ti]) * c(2.0, 0.0) + sandwich;
                hermitian_part(&p)
            })
            .collect();
        for (ti, p) in level.into_iter().enumerate() {
            terms[ti].push(p);
        }
    }
    terms
}

/// Builds P_0..P_N on the mesh. `frame` must be a time-flat frame of the same band window on
/// the same k-mesh and t-nodes (for instance from `geometry::kato_frame`).
pub fn nenciu_series(
    model: &FiberModel,
    mesh: &Mesh,
    bands: Range<usize>,
    order: usize,
    frame: &GaugeFrame,
    n_quad: usize,
    delta: f64,
) -> Result<NenciuSeries> {
    if !frame.is_time_flat() {
        return Err(Error::MeshMismatch("intertwiner needs a time-flat (transported) frame".into()));
    }
    if frame.k_mesh() != &mesh.k || frame.slices() < mesh.t.len() || frame.rank() != bands.len() {
        return Err(Error::MeshMismatch("frame does not live on the projector mesh".into()));
    }
    if order >= 1 && !mesh.t.is_periodic() && !model.path().is_flat_at_ends() {
        return Err(Error::StencilOutOfRange { node: 0 });
    }
    let nk = mesh.k.len();
    let nt = mesh.t.len();
    let columns: Vec<(Vec<Vec<CMat>>, Vec<CMat>, usize)> = (0..nk)
        .into_par_iter()
        .map(|ki| {
            let k = mesh.k.point(ki);
            let mut p0 = Vec::with_capacity(nt);
            let mut eig = Vec::with_capacity(nt);
            let mut weights = Vec::with_capacity(nt);
            let mut hs = Vec::with_capacity(nt);
            let mut nq = 0;
            for ti in 0..nt {
                let t = mesh.t.time(ti);
                let h = model.hamiltonian(&k, t);
                let b = diagonalize_matrix(&h, &k, t)?;
                let contour = resolvent_contour(&b.energies, bands.clone(), n_quad, delta).map_err(|e| match e {
                    Error::GapClosed { gap, delta, .. } => Error::GapClosed { k: k.clone(), t, gap, delta },
                    other => other,
                })?;
                nq = nq.max(contour.n_quad);
                weights.push(contour.sandwich_weights(&b.energies));
                p0.push(b.projector(bands.start, bands.end));
                eig.push((b.energies, b.vectors));
                hs.push(h);
            }
            let flat = model.path().is_flat_at_ends();
            Ok((nenciu_terms(&p0, &eig, &weights, &mesh.t, order, flat), hs, nq))
        })
        .collect::<Result<_>>()?;
    let mut terms = vec![Vec::new(); mesh.len()];
    let mut hamiltonians = vec![CMat::zeros(0, 0); mesh.len()];
    let mut nq = 0;
    for (ki, (col, hs, q)) in columns.into_iter().enumerate() {
        nq = nq.max(q);
        for (ti, (t, h)) in col.into_iter().zip(hs).enumerate() {
            terms[mesh.node(ti, ki)] = t;
            hamiltonians[mesh.node(ti, ki)] = h;
        }
    }
    let slices = frame.slices();
    let mut frames = Vec::with_capacity(slices * nk);
    for s in 0..slices {
        for ki in 0..nk {
            frames.push(frame.frame(s, ki).clone());
        }
    }
    let band_matrices = (0..mesh.len())
        .map(|node| {
            let (ti, ki) = mesh.split(node);
            let chi = &frames[ti * nk + ki];
            hermitian_part(&(chi.adjoint() * &hamiltonians[node] * chi))
        })
        .collect();
    Ok(NenciuSeries { mesh: mesh.clone(), bands, order, terms, hamiltonians, band_matrices, frames, slices, n_quad: nq })
}

/// Σ_j ε^j P_j and its idempotency defect ‖P̃² − P̃‖.
pub fn almost_projector(eps: f64, terms: &[CMat]) -> (CMat, f64) {
    let mut p = terms[0].clone();
    let mut pow = 1.0;
    for t in &terms[1..] {
        pow *= eps;
        p += t * c(pow, 0.0);
    }
    let p = hermitian_part(&p);
    let defect = opnorm(&(&p * &p - &p));
    (p, defect)
}

/// Spectral projection of P̃ onto its eigenvalues near 1.
pub fn rectify(tilde: &CMat, rank: usize, node: usize) -> Result<CMat> {
    let (e, v) = eigh(tilde);
    for &x in &e {
        if x.abs().min((x - 1.0).abs()) > 0.25 {
            return Err(Error::SpectrumNotSplit { node, value: x });
        }
    }
    let upper = e.iter().filter(|&&x| x > 0.5).count();
    if upper != rank {
        return Err(Error::SpectrumNotSplit { node, value: e[e.len() - rank] });
    }
    let f = v.columns(e.len() - rank, rank).into_owned();
    Ok(&f * f.adjoint())
}

/// T_0..T_N from T_0 = χ† and the Nenciu terms:
/// T_{n+1} = −½ Σ_{k=1}^{n} T_k T_{n+1−k}† T_0 + Σ_{j=0}^{n} T_j P_{n+1−j} (1 − P_0).
pub fn intertwiner_terms(t0: &CMat, terms: &[CMat]) -> Vec<CMat> {
    let order = terms.len() - 1;
    let d = terms[0].nrows();
    let q0 = identity(d) - &terms[0];
    let mut t = vec![t0.clone()];
    for n in 0..order {
        let mut next = CMat::zeros(t0.nrows(), d);
        for k in 1..=n {
            next -= &t[k] * t[n + 1 - k].adjoint() * t0 * c(0.5, 0.0);
        }
        for j in 0..=n {
            next += &t[j] * &terms[n + 1 - j] * &q0;
        }
        t.push(next);
    }
    t
}

/// T̂ = (T̃T̃†)^{−1/2}T̃, then T_N^ε = (T̂PT̂†)^{−1/2}T̂P. Returns T_N^ε and ‖T̃T̃† − 1‖.
pub fn unitarize(tilde: &CMat, p: &CMat, node: usize) -> Result<(CMat, f64)> {
    let m = tilde.nrows();
    let gram = tilde * tilde.adjoint();
    let defect = opnorm(&(&gram - identity(m)));
    let (s, min) = inv_sqrt(&gram);
    if min < 0.5 {
        return Err(Error::SingularNormalizer { node, value: min });
    }
    let hat = s * tilde;
    let hp = &hat * p;
    let (s2, min2) = inv_sqrt(&(&hp * hat.adjoint()));
    if min2 < 0.5 {
        return Err(Error::SingularNormalizer { node, value: min2 });
    }
    Ok((s2 * hp, defect))
}

/// Everything at one ε, with sup-norm residuals over the mesh.
#[derive(Clone, Debug)]
pub struct SuperAdiabaticData {
    pub eps: f64,
    pub order: usize,
    /// P_N^ε per node
    pub projectors: Vec<CMat>,
    /// T_N^ε per node (M×D)
    pub intertwiners: Vec<CMat>,
    /// H_eff per node (M×M, Hermitian part)
    pub effective: Vec<CMat>,
    pub residuals: SuperAdiabaticResiduals,
}

#[derive(Clone, Debug, Serialize)]
pub struct SuperAdiabaticResiduals {
    pub eps: f64,
    pub order: usize,
    /// max ‖P̃² − P̃‖
    pub idempotency: f64,
    /// max ‖P_N^ε − P̃‖
    pub rectification: f64,
    /// max ‖P_N^ε − P_0‖
    pub distance_to_p0: f64,
    /// max ‖T̃T̃† − 1‖
    pub unitarity: f64,
    /// max ‖T_N T_N† − 1‖ and ‖T_N†T_N − P_N‖
    pub intertwiner_defect: f64,
    /// max ‖iε∂_tP̃ − [H, P̃]‖ over interior t-nodes
    pub commutator: f64,
    /// max ‖H_eff − 𝐄‖
    pub effective_error: f64,
    /// max ‖H_eff − H_eff†‖ before symmetrization
    pub effective_hermiticity: f64,
    /// max over k of ‖P_N^ε − P_0‖ at the first and last t-node
    pub endpoint: f64,
}

impl NenciuSeries {
    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn rank(&self) -> usize {
        self.bands.len()
    }

    pub fn terms(&self, node: usize) -> &[CMat] {
        &self.terms[node]
    }

    pub fn hamiltonian(&self, node: usize) -> &CMat {
        &self.hamiltonians[node]
    }

    /// 𝐄 = χ†Hχ.
    pub fn band_matrix(&self, node: usize) -> &CMat {
        &self.band_matrices[node]
    }

    /// max over nodes and n ≤ N of ‖Σ_{j=0}^{n} P_j P_{n−j} − P_n‖.
    pub fn order_defect(&self) -> f64 {
        self.terms
            .par_iter()
            .map(|p| {
                (0..=self.order)
                    .map(|n| {
                        let mut s = CMat::zeros(p[0].nrows(), p[0].nrows());
                        for j in 0..=n {
                            s += &p[j] * &p[n - j];
                        }
                        opnorm(&(s - &p[n]))
                    })
                    .fold(0.0, f64::max)
            })
            .reduce(|| 0.0, f64::max)
    }

    /// Builds P_N^ε, T_N^ε and H_eff at one ε.
    pub fn at(&self, eps: f64) -> Result<SuperAdiabaticData> {
        let mesh = &self.mesh;
        let nk = mesh.k.len();
        let nt = mesh.t.len();
        let m = self.rank();
        // T_N needs the closing slice on periodic meshes: its P-data are those of t = 0
        let slices = if mesh.t.is_periodic() { nt + 1 } else { nt };
        let smesh = TMesh::open(slices, mesh.t.period());
        type Column = (Vec<CMat>, Vec<CMat>, Vec<CMat>, [f64; 9]);
        let columns: Vec<Column> = (0..nk)
            .into_par_iter()
            .map(|ki| {
                let mut r = [0.0f64; 9];
                let mut tilde_col = Vec::with_capacity(slices);
                let mut proj_col = Vec::with_capacity(slices);
                let mut t_col = Vec::with_capacity(slices);
                for s in 0..slices {
                    let node = mesh.node(s % nt, ki);
                    let terms = &self.terms[node];
                    let (tilde, defect) = almost_projector(eps, terms);
                    let pn = rectify(&tilde, m, node)?;
                    r[0] = r[0].max(defect);
                    r[1] = r[1].max(opnorm(&(&pn - &tilde)));
                    r[2] = r[2].max(opnorm(&(&pn - &terms[0])));
                    let chi = &self.frames[s * nk + ki];
                    let tt = intertwiner_terms(&chi.adjoint(), terms);
                    let mut ttilde = tt[0].clone();
                    let mut pow = 1.0;
                    for t in &tt[1..] {
                        pow *= eps;
                        ttilde += t * c(pow, 0.0);
                    }
                    let (tn, udef) = unitarize(&ttilde, &pn, node)?;
                    r[3] = r[3].max(udef);
                    r[4] = r[4].max(opnorm(&(&tn * tn.adjoint() - identity(m))).max(opnorm(&(tn.adjoint() * &tn - &pn))));
                    if s == 0 || s == nt - 1 {
                        r[8] = r[8].max(opnorm(&(&pn - &terms[0])));
                    }
                    tilde_col.push(tilde);
                    proj_col.push(pn);
                    t_col.push(tn);
                }
                let mut heff = Vec::with_capacity(nt);
                for ti in 0..nt {
                    let node = mesh.node(ti, ki);
                    let h = &self.hamiltonians[node];
                    let mut dtd = CMat::zeros(t_col[ti].ncols(), m);
                    for (sj, w) in smesh.derivative_stencil(ti) {
                        dtd += t_col[sj].adjoint() * c(w, 0.0);
                    }
                    let tn = &t_col[ti];
                    let raw = tn * (&proj_col[ti] * h * &proj_col[ti]) * tn.adjoint() - tn * dtd * (I * eps);
                    r[7] = r[7].max(opnorm(&(&raw - raw.adjoint())));
                    let he = hermitian_part(&raw);
                    r[6] = r[6].max(opnorm(&(&he - &self.band_matrices[node])));
                    heff.push(he);
                    // commutator residual on interior nodes of the node mesh
                    let interior = mesh.t.is_periodic() || (ti > 0 && ti + 1 < nt);
                    if interior {
                        let mut dp = CMat::zeros(h.nrows(), h.nrows());
                        for (tj, w) in mesh.t.derivative_stencil(ti) {
                            dp += &tilde_col[tj] * c(w, 0.0);
                        }
                        let res = dp * (I * eps) - commutator(h, &tilde_col[ti]);
                        r[5] = r[5].max(opnorm(&res));
                    }
                }
                proj_col.truncate(nt);
                t_col.truncate(nt);
                Ok((proj_col, t_col, heff, r))
            })
            .collect::<Result<_>>()?;
        let mut projectors = vec![CMat::zeros(0, 0); mesh.len()];
        let mut intertwiners = vec![CMat::zeros(0, 0); mesh.len()];
        let mut effective = vec![CMat::zeros(0, 0); mesh.len()];
        let mut r = [0.0f64; 9];
        for (ki, (p, t, h, rr)) in columns.into_iter().enumerate() {
            for (i, x) in rr.iter().enumerate() {
                r[i] = r[i].max(*x);
            }
            for (ti, ((p, t), h)) in p.into_iter().zip(t).zip(h).enumerate() {
                let node = mesh.node(ti, ki);
                projectors[node] = p;
                intertwiners[node] = t;
                effective[node] = h;
            }
        }
        Ok(SuperAdiabaticData {
            eps,
            order: self.order,
            projectors,
            intertwiners,
            effective,
            residuals: SuperAdiabaticResiduals {
                eps,
                order: self.order,
                idempotency: r[0],
                rectification: r[1],
                distance_to_p0: r[2],
                unitarity: r[3],
                intertwiner_defect: r[4],
                commutator: r[5],
                effective_error: r[6],
                effective_hermiticity: r[7],
                endpoint: r[8],
            },
        })
    }

    /// Number of slices in the transported frame the series was built from.
    pub fn frame_slices(&self) -> usize {
        self.slices
    }
}

/// Fitted ε-slopes of the residuals across a sweep.
#[derive(Clone, Debug, Serialize)]
pub struct ResidualSlopes {
    pub order: usize,
    pub idempotency: f64,
    pub rectification: f64,
    pub unitarity: f64,
    pub commutator: f64,
    pub effective_error: f64,
}

pub fn residual_slopes(rows: &[SuperAdiabaticResiduals]) -> ResidualSlopes {
    let eps: Vec<f64> = rows.iter().map(|r| r.eps).collect();
    let col = |f: fn(&SuperAdiabaticResiduals) -> f64| -> f64 {
        crate::fit::loglog_slope(&eps, &rows.iter().map(f).collect::<Vec<_>>())
    };
    ResidualSlopes {
        order: rows.first().map(|r| r.order).unwrap_or(0),
        idempotency: col(|r| r.idempotency),
        rectification: col(|r| r.rectification),
        unitarity: col(|r| r.unitarity),
        commutator: col(|r| r.commutator),
        effective_error: col(|r| r.effective_error),
    }
}
