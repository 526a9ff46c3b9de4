//! Projector fields over the (k, t) mesh and the geometry built from them: the piezoelectric
//! curvature Θ, the Berry curvature Ω, gauge frames, Wilson-link connections and Chern numbers.
//!
//! Sign conventions, fixed once:
//! * `Ξ_{μν} = −i tr(P[∂_μP, ∂_νP])` with index 0 = t, and `Θ_j = Ξ_{0j} = −i tr(P[∂_tP, ∂_{k_j}P])`.
//! * transported charge `ΔP = −(2π)^{−d} ∬ Θ dk dt`.
//! * Berry connection `𝒜 = i⟨χ, ∇_kχ⟩`, geometric scalar potential `φ = −i⟨χ, ∂_tχ⟩`, so that
//!   `Θ = −∂_t𝒜 − ∇_kφ` in any smooth gauge.
//!
//! Partial derivatives of P are stored compressed as `Y_μ = (∂_μP) Φ` (D×M) where Φ is an
//! orthonormal frame of ran P. This is enough for every trace of the form tr(P ∂P ∂P).

use std::hash::{Hash, Hasher};
use std::ops::Range;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::bands::diagonalize_matrix;
use crate::error::{Error, Result};
use crate::linalg::{c, lowdin, max_abs, trace, trace_adj_mul, unitary_exp, unitary_log, CMat, I};
use crate::mesh::{KMesh, Mesh, TMesh};
use crate::model::{FiberModel, PlaneWaveBasis};

/// How ∂_tP and ∂_kP are obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Partials {
    /// first-order perturbation theory in the eigenbasis, using the closed-form ∂_tH and ∂_kH
    Spectral,
    /// central differences over mesh neighbours (covariant wrap in k, one-sided at open t-ends)
    CentralDifference,
}

/// Eigen-data and projector derivatives at one (k, t).
#[derive(Clone, Debug)]
pub struct NodeData {
    pub energies: Vec<f64>,
    pub frame: CMat,
    /// Y_μ = ∂_μP·Φ for μ = t, k_1, …, k_d; empty unless computed spectrally
    pub partials: Vec<CMat>,
}

/// Diagonalizes H(k,t), checks that the band window is isolated and optionally computes the
/// spectral projector derivatives.
pub fn node_data(
    model: &FiberModel,
    k: &[f64],
    t: f64,
    bands: Range<usize>,
    delta: f64,
    with_partials: bool,
) -> Result<NodeData> {
    let h = model.hamiltonian(k, t);
    let b = diagonalize_matrix(&h, k, t)?;
    let gap = b.isolation(bands.start, bands.end);
    if gap <= delta {
        return Err(Error::GapClosed { k: k.to_vec(), t, gap, delta });
    }
    let frame = b.frame(bands.start, bands.end);
    let mut partials = Vec::new();
    if with_partials {
        let n = b.energies.len();
        let outside: Vec<usize> = (0..n).filter(|m| !bands.contains(m)).collect();
        let v_out = CMat::from_fn(n, outside.len(), |a, j| b.vectors[(a, outside[j])]);
        let resolve = |dh_frame: CMat| -> CMat {
            let x = v_out.adjoint() * dh_frame;
            let z = CMat::from_fn(outside.len(), bands.len(), |j, a| {
                x[(j, a)] / c(b.energies[bands.start + a] - b.energies[outside[j]], 0.0)
            });
            &v_out * z
        };
        partials.push(resolve(model.time_derivative(k, t) * &frame));
        for j in 0..model.dim() {
            let diag = model.k_derivative(k, j);
            let mut dk = frame.clone();
            for (a, &g) in diag.iter().enumerate() {
                for z in dk.row_mut(a).iter_mut() {
                    *z *= g;
                }
            }
            partials.push(resolve(dk));
        }
    }
    Ok(NodeData { energies: b.energies, frame, partials })
}

#[derive(Clone, Debug)]
pub struct ProjectorField {
    mesh: Mesh,
    bands: Range<usize>,
    scheme: Partials,
    basis: PlaneWaveBasis,
    periodic_path: bool,
    energies: Vec<Vec<f64>>,
    frames: Vec<CMat>,
    partials: Vec<Vec<CMat>>,
}

/// ‖P − P'‖ for two rank-M projectors given by orthonormal frames.
pub fn projector_distance(a: &CMat, b: &CMat) -> f64 {
    let o = a.adjoint() * b;
    let (e, _) = crate::linalg::eigh(&(o.adjoint() * &o));
    let smin = e.first().copied().unwrap_or(1.0).clamp(0.0, 1.0);
    (1.0 - smin).sqrt()
}

pub fn build_projector_field(
    model: &FiberModel,
    mesh: &Mesh,
    bands: Range<usize>,
    delta: f64,
    scheme: Partials,
) -> Result<ProjectorField> {
    assert!(!bands.is_empty() && bands.end <= model.size());
    if mesh.t.is_periodic() && !model.path().is_periodic() {
        return Err(Error::MeshMismatch("periodic t-mesh requires a periodic schedule".into()));
    }
    let spectral = scheme == Partials::Spectral;
    let data: Vec<NodeData> = (0..mesh.len())
        .into_par_iter()
        .map(|node| {
            let (ti, ki) = mesh.split(node);
            node_data(model, &mesh.k.point(ki), mesh.t.time(ti), bands.clone(), delta, spectral)
        })
        .collect::<Result<_>>()?;
    let mut energies = Vec::with_capacity(data.len());
    let mut frames = Vec::with_capacity(data.len());
    let mut partials = Vec::with_capacity(data.len());
    for d in data {
        energies.push(d.energies);
        frames.push(d.frame);
        partials.push(d.partials);
    }
    let mut pf = ProjectorField {
        mesh: mesh.clone(),
        bands,
        scheme,
        basis: model.basis().clone(),
        periodic_path: model.path().is_periodic(),
        energies,
        frames,
        partials,
    };
    pf.check_continuity()?;
    if !spectral {
        pf.partials = (0..mesh.len()).into_par_iter().map(|node| pf.difference_partials(node)).collect::<Result<_>>()?;
    }
    Ok(pf)
}

impl ProjectorField {
    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn bands(&self) -> Range<usize> {
        self.bands.clone()
    }

    pub fn rank(&self) -> usize {
        self.bands.len()
    }

    pub fn scheme(&self) -> Partials {
        self.scheme
    }

    pub fn basis(&self) -> &PlaneWaveBasis {
        &self.basis
    }

    pub fn dim(&self) -> usize {
        self.mesh.k.dim()
    }

    pub fn is_periodic_path(&self) -> bool {
        self.periodic_path
    }

    pub fn energies(&self, node: usize) -> &[f64] {
        &self.energies[node]
    }

    /// Eigenvector frame at a node (arbitrary node-wise gauge).
    pub fn frame(&self, node: usize) -> &CMat {
        &self.frames[node]
    }

    /// Frame for k(node) + Σ shift_i γ*_i.
    pub fn frame_shifted(&self, node: usize, shift: &[i32]) -> CMat {
        self.basis.shift_rows(&self.frames[node], shift)
    }

    pub fn projector(&self, node: usize) -> CMat {
        let f = &self.frames[node];
        f * f.adjoint()
    }

    /// Y_μ = ∂_μP·Φ, μ = 0 for t and μ = j+1 for k_j.
    pub fn partial(&self, node: usize, mu: usize) -> &CMat {
        &self.partials[node][mu]
    }

    /// The same projectors with every stored frame Φ replaced by ΦU.
    pub fn regauged(&self, rotations: &[CMat]) -> ProjectorField {
        assert_eq!(rotations.len(), self.frames.len());
        let mut out = self.clone();
        for ((f, y), u) in out.frames.iter_mut().zip(out.partials.iter_mut()).zip(rotations) {
            *f = &*f * u;
            for ym in y.iter_mut() {
                *ym = &*ym * u;
            }
        }
        out
    }

    /// P∂_μP + ∂_μP P, the part of ∂_μP off-diagonal with respect to ran P.
    pub fn partial_matrix(&self, node: usize, mu: usize) -> CMat {
        let y = &self.partials[node][mu];
        let f = &self.frames[node];
        y * f.adjoint() + f * y.adjoint()
    }

    fn check_continuity(&self) -> Result<()> {
        let nk = self.mesh.k.len();
        let nt = self.mesh.t.len();
        let jumps: Vec<(f64, usize, usize)> = (0..self.mesh.len())
            .into_par_iter()
            .map(|node| {
                let (ti, ki) = self.mesh.split(node);
                let mut worst = (0.0, node, node);
                for axis in 0..self.dim() {
                    let nb = self.mesh.k.neighbor(ki, axis, 1);
                    let other = self.mesh.node(ti, nb.node);
                    let d = projector_distance(&self.frames[node], &self.frame_shifted(other, &nb.shift));
                    if d > worst.0 {
                        worst = (d, node, other);
                    }
                }
                let next = if ti + 1 < nt {
                    Some(ti + 1)
                } else if self.mesh.t.is_periodic() {
                    Some(0)
                } else {
                    None
                };
                if let Some(tn) = next {
                    let other = tn * nk + ki;
                    let d = projector_distance(&self.frames[node], &self.frames[other]);
                    if d > worst.0 {
                        worst = (d, node, other);
                    }
                }
                worst
            })
            .collect();
        for (jump, a, b) in jumps {
            if jump >= 1.0 - 1e-12 {
                return Err(Error::ContinuityBreak { a, b, jump });
            }
        }
        Ok(())
    }

    fn difference_partials(&self, node: usize) -> Result<Vec<CMat>> {
        let (ti, ki) = self.mesh.split(node);
        let phi = &self.frames[node];
        let proj = |f: &CMat| f * f.adjoint();
        let mut out = Vec::with_capacity(self.dim() + 1);
        let mut dt = CMat::zeros(phi.nrows(), phi.nrows());
        for (tj, w) in self.mesh.t.derivative_stencil(ti) {
            dt += proj(&self.frames[self.mesh.node(tj, ki)]) * c(w, 0.0);
        }
        out.push(dt);
        let mut ds = Vec::with_capacity(self.dim());
        for axis in 0..self.dim() {
            let plus = self.mesh.k.neighbor(ki, axis, 1);
            let minus = self.mesh.k.neighbor(ki, axis, -1);
            let pp = proj(&self.frame_shifted(self.mesh.node(ti, plus.node), &plus.shift));
            let pm = proj(&self.frame_shifted(self.mesh.node(ti, minus.node), &minus.shift));
            ds.push((pp - pm) * c(0.5 * self.mesh.k.sizes()[axis] as f64, 0.0));
        }
        let binv = self.mesh.k.lattice().fractional_to_cartesian();
        for j in 0..self.dim() {
            let mut dk = CMat::zeros(phi.nrows(), phi.nrows());
            for (i, d) in ds.iter().enumerate() {
                if binv[(j, i)] != 0.0 {
                    dk += d * c(binv[(j, i)], 0.0);
                }
            }
            out.push(dk);
        }
        for d in &out {
            let tr = trace(d).norm();
            let herm = max_abs(&(d - d.adjoint()));
            if tr > 1e-8 || herm > 1e-12 {
                return Err(Error::ContinuityBreak { a: node, b: node, jump: tr.max(herm) });
            }
        }
        Ok(out.into_iter().map(|d| d * phi).collect())
    }
}

/// Θ, Ω and Ξ on every node.
#[derive(Clone, Debug)]
pub struct CurvatureField {
    mesh: Mesh,
    dim: usize,
    xi: Vec<Vec<f64>>,
}

pub const CURVATURE_IMAG_TOL: f64 = 1e-10;

pub fn curvature(pf: &ProjectorField) -> Result<CurvatureField> {
    let d = pf.dim();
    let n = d + 1;
    let xi = (0..pf.mesh.len())
        .into_par_iter()
        .map(|node| {
            let y = &pf.partials[node];
            let mut x = vec![0.0; n * n];
            for mu in 0..n {
                for nu in mu + 1..n {
                    // −i tr(P[A,B]) = −i (tr(Y_A†Y_B) − tr(Y_B†Y_A))
                    let val = (trace_adj_mul(&y[mu], &y[nu]) - trace_adj_mul(&y[nu], &y[mu])) * (-I);
                    if val.im.abs() > CURVATURE_IMAG_TOL * val.re.abs().max(1.0) {
                        return Err(Error::NonRealCurvature { node, residual: val.im.abs() });
                    }
                    x[mu * n + nu] = val.re;
                    x[nu * n + mu] = -val.re;
                }
            }
            Ok(x)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CurvatureField { mesh: pf.mesh.clone(), dim: d, xi })
}

impl CurvatureField {
    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn xi(&self, node: usize, mu: usize, nu: usize) -> f64 {
        self.xi[node][mu * (self.dim + 1) + nu]
    }

    pub fn theta(&self, node: usize) -> Vec<f64> {
        (0..self.dim).map(|j| self.xi(node, 0, j + 1)).collect()
    }

    pub fn omega(&self, node: usize, j: usize, l: usize) -> f64 {
        self.xi(node, j + 1, l + 1)
    }

    pub fn max_abs_theta(&self) -> f64 {
        (0..self.mesh.len()).flat_map(|n| self.theta(n)).fold(0.0, |m, x| m.max(x.abs()))
    }

    /// ∫_{Y*} Θ_j(k, t_i) dk for each j.
    pub fn zone_integral(&self, ti: usize) -> Vec<f64> {
        let w = self.mesh.k.weight();
        let mut s = vec![0.0; self.dim];
        for ki in 0..self.mesh.k.len() {
            for (j, v) in self.theta(self.mesh.node(ti, ki)).into_iter().enumerate() {
                s[j] += w * v;
            }
        }
        s
    }

    /// ∫_0^T ∫_{Y*} Θ_j dk dt for each j.
    pub fn theta_integral(&self) -> Vec<f64> {
        let wt = self.mesh.t.weights();
        let mut s = vec![0.0; self.dim];
        for (ti, w) in wt.iter().enumerate() {
            for (j, v) in self.zone_integral(ti).into_iter().enumerate() {
                s[j] += w * v;
            }
        }
        s
    }

    /// ΔP = −(2π)^{−d} ∬ Θ.
    pub fn charge(&self) -> Vec<f64> {
        let norm = (2.0 * std::f64::consts::PI).powi(self.dim as i32);
        self.theta_integral().into_iter().map(|x| -x / norm).collect()
    }
}

/// Orthonormal frames on the nodes of a k-mesh × time slices.
#[derive(Clone, Debug)]
pub struct GaugeFrame {
    k: KMesh,
    times: Vec<f64>,
    basis: PlaneWaveBasis,
    rank: usize,
    frames: Vec<CMat>,
    time_flat: bool,
    token: u64,
}

/// Frames of one time slice, tagged with the transport they came from.
#[derive(Clone, Debug)]
pub struct FrameSlice {
    pub time: f64,
    pub token: u64,
    pub frames: Vec<CMat>,
}

fn hash_frames(frames: &[CMat], salt: &[f64]) -> u64 {
    let mut h = std::collections::hash_map::DefaultHasher::new();
    for s in salt {
        s.to_bits().hash(&mut h);
    }
    for f in frames {
        for z in f.iter() {
            z.re.to_bits().hash(&mut h);
            z.im.to_bits().hash(&mut h);
        }
    }
    h.finish()
}

impl GaugeFrame {
    /// The eigenvector frames of a projector field (no transport, arbitrary gauge).
    pub fn from_field(pf: &ProjectorField) -> GaugeFrame {
        let frames = pf.frames.clone();
        let token = hash_frames(&frames, &[0.0]);
        GaugeFrame {
            k: pf.mesh.k.clone(),
            times: pf.mesh.t.times(),
            basis: pf.basis.clone(),
            rank: pf.rank(),
            frames,
            time_flat: false,
            token,
        }
    }

    pub fn k_mesh(&self) -> &KMesh {
        &self.k
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn slices(&self) -> usize {
        self.times.len()
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn is_time_flat(&self) -> bool {
        self.time_flat
    }

    pub fn token(&self) -> u64 {
        self.token
    }

    pub fn frame(&self, slice: usize, ki: usize) -> &CMat {
        &self.frames[slice * self.k.len() + ki]
    }

    pub fn frame_shifted(&self, slice: usize, ki: usize, shift: &[i32]) -> CMat {
        self.basis.shift_rows(self.frame(slice, ki), shift)
    }

    pub fn slice(&self, s: usize) -> FrameSlice {
        let nk = self.k.len();
        FrameSlice { time: self.times[s], token: self.token, frames: self.frames[s * nk..(s + 1) * nk].to_vec() }
    }

    /// Applies χ → χ·U_node for M×M unitaries given per (slice, k) node.
    pub fn rotated(&self, rotations: &[CMat]) -> GaugeFrame {
        assert_eq!(rotations.len(), self.frames.len());
        let frames: Vec<CMat> = self.frames.iter().zip(rotations).map(|(f, u)| f * u).collect();
        let token = hash_frames(&frames, &[1.0]);
        GaugeFrame { frames, time_flat: false, token, ..self.clone() }
    }

    /// max over nodes of ‖χ†χ − 1‖.
    pub fn orthonormality_defect(&self) -> f64 {
        let id = crate::linalg::identity(self.rank);
        self.frames.iter().map(|f| max_abs(&(f.adjoint() * f - &id))).fold(0.0, f64::max)
    }

    /// max over consecutive slices of ‖(χ_s†χ_{s+1} − χ_{s+1}†χ_s)/2‖/Δt, the discrete
    /// time-direction connection; zero for a Kato-transported frame.
    pub fn time_connection(&self) -> f64 {
        let nk = self.k.len();
        (0..(self.slices() - 1) * nk)
            .into_par_iter()
            .map(|idx| {
                let (s, ki) = (idx / nk, idx % nk);
                let dt = self.times[s + 1] - self.times[s];
                let o = self.frame(s, ki).adjoint() * self.frame(s + 1, ki);
                max_abs(&crate::linalg::antihermitian_part(&o)) / dt
            })
            .reduce(|| 0.0, f64::max)
    }
}

fn transport_step(projector_frame: &CMat, chi: &CMat) -> (CMat, f64) {
    lowdin(&(projector_frame * (projector_frame.adjoint() * chi)))
}

const MIN_TRANSPORT_SV: f64 = 0.1;

/// Smooth, periodic frame of ran P(·, t=0) over the k-mesh: parallel transport along each axis
/// followed by spreading the closure holonomy evenly along the line.
pub fn initial_k_frame(pf: &ProjectorField) -> Result<Vec<CMat>> {
    let km = &pf.mesh.k;
    let d = km.dim();
    let start_coords: Vec<usize> = km.sizes().iter().map(|n| n / 2).collect();
    let start = km.index(&start_coords);
    let mut frames: Vec<Option<CMat>> = vec![None; km.len()];
    frames[start] = Some(pf.frames[pf.mesh.node(0, start)].clone());
    let basis = &pf.basis;

    for axis in 0..d {
        // base nodes: coordinates on axes ≥ axis equal the start
        let base: Vec<usize> = (0..km.len())
            .filter(|&idx| {
                let j = km.coords(idx);
                (axis..d).all(|b| j[b] == start_coords[b])
            })
            .collect();
        let n = km.sizes()[axis];
        let mut logs: Vec<(usize, CMat)> = Vec::with_capacity(base.len());
        let lines: Vec<(usize, Vec<(usize, CMat)>, CMat)> = base
            .par_iter()
            .map(|&b| {
                let chi0 = frames[b].clone().expect("base frame set");
                let mut cur = chi0.clone();
                let mut line = Vec::with_capacity(n);
                let mut idx = b;
                let mut wraps = vec![0i32; d];
                for m in 1..=n {
                    let nb = km.neighbor(idx, axis, 1);
                    wraps[axis] += nb.shift[axis];
                    idx = nb.node;
                    let target = basis.shift_rows(&pf.frames[pf.mesh.node(0, idx)], &wraps);
                    let (next, sv) = transport_step(&target, &cur);
                    if sv < MIN_TRANSPORT_SV {
                        return Err(Error::RankDrop { k_node: idx, t_node: 0, sigma: sv });
                    }
                    cur = next;
                    if m < n {
                        let back: Vec<i32> = wraps.iter().map(|w| -w).collect();
                        line.push((idx, basis.shift_rows(&cur, &back)));
                    }
                }
                let closure = basis.shift_rows(&chi0, &wraps);
                let (w, _) = lowdin(&(closure.adjoint() * &cur));
                Ok((b, line, unitary_log(&w)))
            })
            .collect::<Result<_>>()?;
        for (b, _, l) in &lines {
            logs.push((*b, l.clone()));
        }
        let logs = unwrap_holonomies(km, axis, &base, logs, start)?;
        for ((_, line, _), (_, l)) in lines.into_iter().zip(logs) {
            for (m, (idx, chi)) in line.into_iter().enumerate() {
                let frac = (m + 1) as f64 / n as f64;
                frames[idx] = Some(chi * unitary_exp(&(&l * c(-frac, 0.0))));
            }
        }
    }
    Ok(frames.into_iter().map(|f| f.expect("every node reached")).collect())
}

/// Makes the holonomy logarithms continuous across the base hyperplane of an axis.
/// For rank 1 the phase is unwrapped; a residual 2π winding means the bundle is not trivial.
fn unwrap_holonomies(
    km: &KMesh,
    axis: usize,
    base: &[usize],
    mut logs: Vec<(usize, CMat)>,
    start: usize,
) -> Result<Vec<(usize, CMat)>> {
    if axis == 0 {
        return Ok(logs);
    }
    let pos = |idx: usize| base.iter().position(|&b| b == idx).expect("base node");
    let rank = logs[0].1.nrows();
    if rank == 1 {
        // visit in order of offsets from the start, each node unwrapped against its predecessor
        let sc = km.coords(start);
        let mut order: Vec<usize> = base.to_vec();
        let offs = |idx: usize| -> Vec<usize> {
            let j = km.coords(idx);
            (0..axis).map(|b| (j[b] + km.sizes()[b] - sc[b]) % km.sizes()[b]).collect()
        };
        order.sort_by_key(|&idx| offs(idx));
        for &idx in order.iter().skip(1) {
            let o = offs(idx);
            let b = (0..axis).rev().find(|&b| o[b] > 0).expect("non-start node has an offset");
            let prev = km.neighbor(idx, b, -1).node;
            let p = logs[pos(prev)].1[(0, 0)].re;
            let cur = &mut logs[pos(idx)].1[(0, 0)];
            let tau = 2.0 * std::f64::consts::PI;
            cur.re -= tau * ((cur.re - p) / tau).round();
        }
    }
    for &idx in base {
        for b in 0..axis {
            let nb = km.neighbor(idx, b, 1).node;
            let jump = crate::linalg::frobenius(&(&logs[pos(idx)].1 - &logs[pos(nb)].1));
            let limit = if rank == 1 { std::f64::consts::PI } else { std::f64::consts::FRAC_PI_2 };
            if jump > limit {
                return Err(Error::NontrivialBundle { jump });
            }
        }
    }
    Ok(logs)
}

/// Kato parallel transport of an initial k-frame through the t-mesh: χ' = Löwdin(P(t+Δt)χ).
/// On periodic meshes a closing slice at t = T is appended.
pub fn kato_frame(pf: &ProjectorField, initial: &[CMat]) -> Result<GaugeFrame> {
    let nk = pf.mesh.k.len();
    let nt = pf.mesh.t.len();
    assert_eq!(initial.len(), nk, "one initial frame per k-node");
    let times = pf.mesh.t.closed_times();
    let slices = times.len();
    let columns: Vec<Vec<CMat>> = (0..nk)
        .into_par_iter()
        .map(|ki| {
            let mut col = Vec::with_capacity(slices);
            let mut chi = initial[ki].clone();
            col.push(chi.clone());
            for s in 1..slices {
                let ti = s % nt;
                let (next, sv) = transport_step(&pf.frames[pf.mesh.node(ti, ki)], &chi);
                if sv < MIN_TRANSPORT_SV {
                    return Err(Error::RankDrop { k_node: ki, t_node: s, sigma: sv });
                }
                chi = next;
                col.push(chi.clone());
            }
            Ok(col)
        })
        .collect::<Result<_>>()?;
    let mut frames = Vec::with_capacity(nk * slices);
    for s in 0..slices {
        for col in &columns {
            frames.push(col[s].clone());
        }
    }
    let token = hash_frames(initial, &times);
    Ok(GaugeFrame {
        k: pf.mesh.k.clone(),
        times,
        basis: pf.basis.clone(),
        rank: pf.rank(),
        frames,
        time_flat: true,
        token,
    })
}

/// Berry connection on k-links and scalar potential on nodes, per time slice.
#[derive(Clone, Debug)]
pub struct ConnectionField {
    pub k: KMesh,
    pub times: Vec<f64>,
    /// 𝒜 (Cartesian components) on the link from each node to its +1 neighbour along each axis,
    /// index [slice·N + k][axis][component]
    pub connection: Vec<Vec<Vec<f64>>>,
    /// φ at each (slice, k)
    pub potential: Vec<f64>,
}

fn link_phase(frame: &GaugeFrame, s: usize, ki: usize, axis: usize) -> Result<f64> {
    let nb = frame.k.neighbor(ki, axis, 1);
    let o = frame.frame(s, ki).adjoint() * frame.frame_shifted(s, nb.node, &nb.shift);
    let det = o.determinant();
    if det.norm() < 0.1 {
        return Err(Error::SingularOverlap { node: ki, axis, det: det.norm() });
    }
    Ok(det.arg())
}

pub fn connection_and_potential(frame: &GaugeFrame) -> Result<ConnectionField> {
    let nk = frame.k.len();
    let d = frame.k.dim();
    let binv = frame.k.lattice().fractional_to_cartesian();
    let slices = frame.slices();
    let tm = TMesh::open(slices.max(2), *frame.times.last().unwrap());
    let connection = (0..slices * nk)
        .into_par_iter()
        .map(|idx| {
            let (s, ki) = (idx / nk, idx % nk);
            (0..d)
                .map(|axis| {
                    let a_s = -(frame.k.sizes()[axis] as f64) * link_phase(frame, s, ki, axis)?;
                    Ok((0..d).map(|j| binv[(j, axis)] * a_s).collect())
                })
                .collect::<Result<Vec<Vec<f64>>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let potential = (0..slices * nk)
        .into_par_iter()
        .map(|idx| {
            if slices < 3 {
                return 0.0;
            }
            let (s, ki) = (idx / nk, idx % nk);
            let chi = frame.frame(s, ki);
            let mut d = CMat::zeros(chi.nrows(), chi.ncols());
            for (sj, w) in tm.derivative_stencil(s) {
                d += frame.frame(sj, ki) * c(w, 0.0);
            }
            trace(&(chi.adjoint() * d)).im
        })
        .collect();
    Ok(ConnectionField { k: frame.k.clone(), times: frame.times.clone(), connection, potential })
}

/// Representation residual max |Θ + ∂_t𝒜 + ∇_kφ| evaluated at k-link midpoints and interior
/// t-nodes; Θ is averaged from the two link ends.
pub fn representation_residual(cf: &CurvatureField, conn: &ConnectionField) -> Result<f64> {
    let mesh = cf.mesh();
    let nk = mesh.k.len();
    let d = mesh.k.dim();
    if conn.times.len() < mesh.t.len() || conn.k.len() != nk {
        return Err(Error::MeshMismatch("connection and curvature meshes differ".into()));
    }
    let tm = TMesh::open(conn.times.len(), *conn.times.last().unwrap());
    let binv = mesh.k.lattice().fractional_to_cartesian();
    let mut worst: f64 = 0.0;
    for ti in 0..mesh.t.len() {
        for ki in 0..nk {
            for axis in 0..d {
                let nb = mesh.k.neighbor(ki, axis, 1);
                let th_a = cf.theta(mesh.node(ti, ki));
                let th_b = cf.theta(mesh.node(ti, nb.node));
                let dphi_s = (conn.potential[ti * nk + nb.node] - conn.potential[ti * nk + ki])
                    * mesh.k.sizes()[axis] as f64;
                for j in 0..d {
                    if binv[(j, axis)] == 0.0 {
                        continue;
                    }
                    let da: f64 = tm
                        .derivative_stencil(ti)
                        .iter()
                        .map(|&(sj, w)| w * conn.connection[sj * nk + ki][axis][j])
                        .sum();
                    let theta = 0.5 * (th_a[j] + th_b[j]);
                    let r = theta + da + binv[(j, axis)] * dphi_s;
                    worst = worst.max(r.abs());
                }
            }
        }
    }
    Ok(worst)
}

fn ksv_from_phase_change(k: &KMesh, change: &[Vec<f64>]) -> Vec<f64> {
    let d = k.dim();
    let binv = k.lattice().fractional_to_cartesian();
    let norm = (2.0 * std::f64::consts::PI).powi(d as i32);
    let w = k.weight();
    (0..d)
        .map(|j| {
            let mut s = 0.0;
            for per_node in change {
                for axis in 0..d {
                    s += binv[(j, axis)] * (-(k.sizes()[axis] as f64) * per_node[axis]);
                }
            }
            s * w / norm
        })
        .collect()
}

impl GaugeFrame {
    /// ΔP = (2π)^{−d} ∫ (𝒜(k,T) − 𝒜(k,0)) dk with each link phase followed continuously through
    /// every transported slice.
    pub fn ksv_polarization(&self) -> Result<Vec<f64>> {
        if !self.time_flat {
            return Err(Error::GaugeMismatch { a: self.token, b: 0 });
        }
        let nk = self.k.len();
        let d = self.k.dim();
        let change = (0..nk)
            .into_par_iter()
            .map(|ki| {
                (0..d)
                    .map(|axis| {
                        let mut prev = link_phase(self, 0, ki, axis)?;
                        let mut acc = 0.0;
                        for s in 1..self.slices() {
                            let ph = link_phase(self, s, ki, axis)?;
                            acc += wrap_angle(ph - prev);
                            prev = ph;
                        }
                        Ok(acc)
                    })
                    .collect::<Result<Vec<f64>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ksv_from_phase_change(&self.k, &change))
    }
}

fn wrap_angle(x: f64) -> f64 {
    let tau = 2.0 * std::f64::consts::PI;
    x - tau * (x / tau).round()
}

/// Endpoint form: both slices must carry the token of one transport.
pub fn ksv_polarization(k: &KMesh, basis: &PlaneWaveBasis, start: &FrameSlice, end: &FrameSlice) -> Result<Vec<f64>> {
    if start.token != end.token {
        return Err(Error::GaugeMismatch { a: start.token, b: end.token });
    }
    let d = k.dim();
    let phase = |frames: &[CMat], ki: usize, axis: usize| -> Result<f64> {
        let nb = k.neighbor(ki, axis, 1);
        let o = frames[ki].adjoint() * basis.shift_rows(&frames[nb.node], &nb.shift);
        let det = o.determinant();
        if det.norm() < 0.1 {
            return Err(Error::SingularOverlap { node: ki, axis, det: det.norm() });
        }
        Ok(det.arg())
    };
    let change = (0..k.len())
        .map(|ki| (0..d).map(|axis| Ok(wrap_angle(phase(&end.frames, ki, axis)? - phase(&start.frames, ki, axis)?))).collect())
        .collect::<Result<Vec<Vec<f64>>>>()?;
    Ok(ksv_from_phase_change(k, &change))
}

#[derive(Clone, Debug, Serialize)]
pub struct ChernNumber {
    pub axis: usize,
    pub value: f64,
    pub integer: i64,
    pub residue: f64,
}

/// Plaquette Chern number on the (k_axis, t) torus through the k-node `through`.
/// `frame(ti, ki)` supplies any orthonormal frame of ran P; ti runs over t-nodes.
pub fn plaquette_chern(
    mesh: &Mesh,
    basis: &PlaneWaveBasis,
    axis: usize,
    through: usize,
    frame: impl Fn(usize, usize) -> CMat + Sync,
) -> Result<ChernNumber> {
    let km = &mesh.k;
    let nt = mesh.t.len();
    // t-intervals: periodic meshes wrap, open meshes end at t = T which carries the t = 0 fiber
    let intervals: Vec<(usize, usize)> =
        if mesh.t.is_periodic() { (0..nt).map(|i| (i, (i + 1) % nt)).collect() } else { (0..nt - 1).map(|i| (i, i + 1)).collect() };
    let line: Vec<usize> = {
        let base = km.coords(through);
        (0..km.len())
            .filter(|&idx| {
                let j = km.coords(idx);
                (0..km.dim()).all(|b| b == axis || j[b] == base[b])
            })
            .collect()
    };
    let det = |a: &CMat, b: &CMat| (a.adjoint() * b).determinant();
    // t-links are reported with axis = d
    let per_line = line
        .par_iter()
        .map(|&ki| {
            let nb = km.neighbor(ki, axis, 1);
            intervals
                .iter()
                .map(|&(ta, tb)| {
                    let x = frame(ta, ki);
                    let xt = frame(tb, ki);
                    let xk = basis.shift_rows(&frame(ta, nb.node), &nb.shift);
                    let xtk = basis.shift_rows(&frame(tb, nb.node), &nb.shift);
                    let links = [(det(&x, &xt), km.dim()), (det(&xt, &xtk), axis), (det(&xtk, &xk), km.dim()), (det(&xk, &x), axis)];
                    if let Some(&(z, ax)) = links.iter().find(|(z, _)| z.norm() < 0.1) {
                        return Err(Error::SingularOverlap { node: mesh.node(ta, ki), axis: ax, det: z.norm() });
                    }
                    Ok(links.iter().map(|(z, _)| *z).product::<crate::C64>().arg())
                })
                .sum::<Result<f64>>()
        })
        .collect::<Result<Vec<f64>>>()?;
    let total: f64 = per_line.into_iter().sum();
    let value = total / (2.0 * std::f64::consts::PI);
    let integer = value.round() as i64;
    let residue = (value - integer as f64).abs();
    if residue > 0.05 {
        return Err(Error::NonIntegral { value, residue });
    }
    Ok(ChernNumber { axis, value, integer, residue })
}

/// Chern number of the projector field on the (k_axis, t) torus through k-node `through`.
pub fn chern_number(pf: &ProjectorField, axis: usize, through: usize) -> Result<ChernNumber> {
    if !pf.periodic_path {
        return Err(Error::MeshMismatch("Chern numbers need a periodic schedule".into()));
    }
    plaquette_chern(&pf.mesh, &pf.basis, axis, through, |ti, ki| pf.frames[pf.mesh.node(ti, ki)].clone())
}

/// Largest |Θ_rank-M − Σ_m Θ_m| over the mesh, comparing a window with its single bands.
pub fn additivity_defect(whole: &CurvatureField, parts: &[CurvatureField]) -> f64 {
    let mut worst: f64 = 0.0;
    for node in 0..whole.mesh().len() {
        let w = whole.theta(node);
        for j in 0..whole.dim() {
            let s: f64 = parts.iter().map(|p| p.theta(node)[j]).sum();
            worst = worst.max((w[j] - s).abs());
        }
    }
    worst
}

/// Convenience: a matrix of per-node Θ_j values reshaped as (t, k) for 1D meshes.
pub fn theta_table(cf: &CurvatureField, j: usize) -> DMatrix<f64> {
    let m = cf.mesh();
    DMatrix::from_fn(m.t.len(), m.k.len(), |ti, ki| cf.theta(m.node(ti, ki))[j])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{families, Lattice, Profile};
    use std::f64::consts::PI;
    use crate::C64;

    fn sliding(nk: usize, nt: usize) -> ProjectorField {
        let lat = Lattice::cubic(1, 1.0);
        let model = FiberModel::new(&families::sliding_cosine(lat.clone(), 0.5, 1.0, Profile::Linear), 6);
        let mesh = Mesh::new(KMesh::uniform(&lat, nk), TMesh::periodic(nt, 1.0));
        build_projector_field(&model, &mesh, 0..1, 1e-6, Partials::Spectral).unwrap()
    }

    #[test]
    fn sliding_cosine_pumps_one_charge() {
        let pf = sliding(256, 8);
        let cf = curvature(&pf).unwrap();
        let dp = cf.charge()[0];
        assert!((dp - 1.0).abs() < 1e-9, "ΔP = {dp}");
        let ch = chern_number(&pf, 0, 0).unwrap();
        assert!((ch.value - cf.theta_integral()[0] / (2.0 * PI)).abs() < 1e-2, "{ch:?}");
        let frame = kato_frame(&pf, &initial_k_frame(&pf).unwrap()).unwrap();
        let ksv = frame.ksv_polarization().unwrap()[0];
        assert!((ksv - dp).abs() < 1e-3, "ksv {ksv}");
    }

    #[test]
    fn plaquettes_refuse_coarse_time_links() {
        let lat = Lattice::cubic(1, 1.0);
        let model = FiberModel::new(&families::sliding_cosine(lat.clone(), 0.5, 1.0, Profile::Linear), 6);
        let mesh = Mesh::new(KMesh::uniform(&lat, 512), TMesh::periodic(4, 1.0));
        let pf = build_projector_field(&model, &mesh, 1..2, 1e-6, Partials::Spectral).unwrap();
        assert!(matches!(chern_number(&pf, 0, 0), Err(Error::SingularOverlap { axis: 1, .. })));
    }

    #[test]
    fn spectral_and_difference_partials_agree() {
        let lat = Lattice::cubic(1, 1.0);
        let model = FiberModel::new(&families::two_harmonic_loop(lat.clone(), 1.0, 1.0, 2.0, Profile::Linear, false), 6);
        let mut errs = Vec::new();
        for n in [64, 128] {
            let mesh = Mesh::new(KMesh::uniform(&lat, n), TMesh::periodic(n, 2.0));
            let a = curvature(&build_projector_field(&model, &mesh, 0..1, 1e-6, Partials::Spectral).unwrap()).unwrap();
            let b = curvature(&build_projector_field(&model, &mesh, 0..1, 1e-6, Partials::CentralDifference).unwrap()).unwrap();
            errs.push((0..mesh.len()).map(|i| (a.theta(i)[0] - b.theta(i)[0]).abs()).fold(0.0, f64::max));
        }
        let ratio = errs[0] / errs[1];
        assert!(ratio > 3.0 && ratio < 5.0, "{errs:?}");
    }

    #[test]
    fn kato_frame_is_flat_and_orthonormal() {
        let pf = sliding(8, 32);
        let f = kato_frame(&pf, &initial_k_frame(&pf).unwrap()).unwrap();
        assert!(f.orthonormality_defect() < 1e-12);
        assert!(f.time_connection() < 1e-12);
        assert_eq!(f.slices(), 33);
        let eig = GaugeFrame::from_field(&pf);
        assert!(eig.ksv_polarization().is_err());
    }

    #[test]
    fn initial_frame_is_periodic_and_smooth() {
        let pf = sliding(16, 4);
        let f = initial_k_frame(&pf).unwrap();
        let km = &pf.mesh().k;
        for ki in 0..km.len() {
            let nb = km.neighbor(ki, 0, 1);
            let o = (f[ki].adjoint() * pf.basis().shift_rows(&f[nb.node], &nb.shift))[(0, 0)];
            assert!(o.norm() > 0.5 && o.arg().abs() < 0.3, "{ki} {o}");
        }
    }

    #[test]
    fn endpoint_ksv_checks_tokens() {
        let pf = sliding(16, 16);
        let a = kato_frame(&pf, &initial_k_frame(&pf).unwrap()).unwrap();
        let end = a.slice(a.slices() - 1);
        let p = ksv_polarization(&pf.mesh().k, pf.basis(), &a.slice(0), &end).unwrap()[0];
        assert!((p - a.ksv_polarization().unwrap()[0]).abs() < 1e-12);
        let rot: Vec<CMat> = (0..pf.mesh().k.len()).map(|i| CMat::from_element(1, 1, C64::from_polar(1.0, i as f64))).collect();
        let other = kato_frame(&pf, &rot.iter().zip(initial_k_frame(&pf).unwrap()).map(|(u, f)| f * u).collect::<Vec<_>>()).unwrap();
        assert!(matches!(
            ksv_polarization(&pf.mesh().k, pf.basis(), &a.slice(0), &other.slice(other.slices() - 1)),
            Err(Error::GaugeMismatch { .. })
        ));
    }

    #[test]
    fn representation_holds_in_smooth_gauge() {
        let lat = Lattice::cubic(1, 1.0);
        let model = FiberModel::new(&families::two_harmonic_loop(lat.clone(), 1.0, 1.0, 2.0, Profile::Flat, false), 6);
        let mut res = Vec::new();
        for n in [64, 128] {
            let mesh = Mesh::new(KMesh::uniform(&lat, n), TMesh::open(n + 1, 2.0));
            let pf = build_projector_field(&model, &mesh, 0..1, 1e-6, Partials::Spectral).unwrap();
            let cf = curvature(&pf).unwrap();
            let kf = kato_frame(&pf, &initial_k_frame(&pf).unwrap()).unwrap();
            res.push(representation_residual(&cf, &connection_and_potential(&kf).unwrap()).unwrap());
        }
        assert!(res[1] < res[0] / 3.0, "{res:?}");
    }

    #[test]
    fn open_path_has_no_chern_number() {
        let lat = Lattice::cubic(1, 1.0);
        let p = families::ramp(lat.clone(), 1.0, (c(0.3, 0.0), c(0.5, 0.0)), (c(0.0, 0.0), c(0.1, 0.0)));
        let model = FiberModel::new(&p, 5);
        let mesh = Mesh::new(KMesh::uniform(&lat, 8), TMesh::open(5, 1.0));
        let pf = build_projector_field(&model, &mesh, 0..1, 1e-6, Partials::Spectral).unwrap();
        assert!(matches!(chern_number(&pf, 0, 0), Err(Error::MeshMismatch(_))));
        assert!(build_projector_field(&model, &Mesh::new(KMesh::uniform(&lat, 8), TMesh::periodic(4, 1.0)), 0..1, 1e-6, Partials::Spectral).is_err());
    }

    #[test]
    fn window_curvature_is_additive_only_with_interband_terms() {
        // Θ of a two-band window differs from the sum of single-band Θ by cross terms; it
        // still integrates to the sum of the single-band Chern numbers.
        let pf2 = sliding(16, 8);
        let lat = Lattice::cubic(1, 1.0);
        let model = FiberModel::new(&families::sliding_cosine(lat.clone(), 0.5, 1.0, Profile::Linear), 6);
        let c0 = chern_number(&pf2, 0, 0).unwrap().integer;
        let pf_b = build_projector_field(&model, pf2.mesh(), 1..2, 1e-6, Partials::Spectral).unwrap();
        let pf_w = build_projector_field(&model, pf2.mesh(), 0..2, 1e-6, Partials::Spectral).unwrap();
        let c1 = chern_number(&pf_b, 0, 0).unwrap().integer;
        let cw = chern_number(&pf_w, 0, 0).unwrap().integer;
        assert_eq!(cw, c0 + c1);
    }
}
