//! Fiberwise time propagation `iε∂_tU = H(k,t)U`, occupied-frame evolution, and the
//! macroscopic current `ṗ = (2π)^{−d} ∫ Re tr(ρ(k,t) J(k)) dk` with `J(k) = (k+G)/ε`.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::CurvatureField;
use crate::linalg::{c, expm_apply, identity, max_abs, opnorm, CMat};
use crate::mesh::{KMesh, Mesh, TMesh};
use crate::model::{FiberModel, PlaneWaveBasis};
use crate::superadiabatic::SuperAdiabaticData;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Integrator {
    /// exp(−iΔt H(t+Δt/2)/ε), second order
    Midpoint,
    /// two-exponential commutator-free Magnus scheme, fourth order
    CommutatorFree4,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct StepOptions {
    /// Δt ≤ step_factor·ε
    pub step_factor: f64,
    pub integrator: Integrator,
    /// explicit number of steps over [0, T] (must respect the step bound)
    pub steps: Option<usize>,
}

impl Default for StepOptions {
    fn default() -> Self {
        StepOptions { step_factor: 0.1, integrator: Integrator::CommutatorFree4, steps: None }
    }
}

/// Step count over [0, T]: ⌈T/(cε)⌉ rounded up to a multiple of the t-mesh intervals.
pub fn step_count(tmesh: &TMesh, eps: f64, opts: &StepOptions) -> Result<usize> {
    let period = tmesh.period();
    let intervals = if tmesh.is_periodic() { tmesh.len() } else { tmesh.len() - 1 };
    let limit = opts.step_factor * eps;
    let n = match opts.steps {
        Some(n) => {
            if n == 0 || period / n as f64 > limit * (1.0 + 1e-12) {
                return Err(Error::StepTooLarge { dt: period / n.max(1) as f64, limit });
            }
            n
        }
        None => (period / limit).ceil() as usize,
    };
    Ok(n.div_ceil(intervals) * intervals)
}

const A1: f64 = 0.25 - 0.288_675_134_594_812_9; // 1/4 − √3/6
const A2: f64 = 0.25 + 0.288_675_134_594_812_9;
const C1: f64 = 0.5 - 0.288_675_134_594_812_9;
const C2: f64 = 0.5 + 0.288_675_134_594_812_9;

/// One step t → t + dt applied to a block of columns.
pub fn step(model: &FiberModel, k: &[f64], t: f64, dt: f64, eps: f64, integrator: Integrator, x: &CMat) -> CMat {
    match integrator {
        Integrator::Midpoint => expm_apply(&model.hamiltonian(k, t + 0.5 * dt), dt / eps, x),
        Integrator::CommutatorFree4 => {
            let h1 = model.hamiltonian(k, t + C1 * dt);
            let h2 = model.hamiltonian(k, t + C2 * dt);
            let first = &h1 * c(A2, 0.0) + &h2 * c(A1, 0.0);
            let second = &h1 * c(A1, 0.0) + &h2 * c(A2, 0.0);
            expm_apply(&second, dt / eps, &expm_apply(&first, dt / eps, x))
        }
    }
}

/// U^ε(k, t) on the nodes of a t-mesh.
#[derive(Clone, Debug)]
pub struct FiberPropagation {
    pub k: Vec<f64>,
    pub eps: f64,
    pub times: Vec<f64>,
    pub steps: usize,
    pub unitaries: Vec<CMat>,
}

impl FiberPropagation {
    pub fn unitarity_defect(&self) -> f64 {
        self.unitaries.iter().map(|u| max_abs(&(u.adjoint() * u - identity(u.nrows())))).fold(0.0, f64::max)
    }

    /// ρ(t) = U P U† for an initial projector.
    pub fn density(&self, p0: &CMat, ti: usize) -> CMat {
        let u = &self.unitaries[ti];
        u * p0 * u.adjoint()
    }
}

/// Full propagator of one fiber, recorded at the t-mesh nodes.
pub fn propagate(model: &FiberModel, k: &[f64], eps: f64, tmesh: &TMesh, opts: &StepOptions) -> Result<FiberPropagation> {
    let ev = evolve_column(model, k, eps, tmesh, opts, identity(model.size()), false)?;
    Ok(FiberPropagation { k: k.to_vec(), eps, times: tmesh.times(), steps: ev.0, unitaries: ev.1 })
}

type Column = (usize, Vec<CMat>, Vec<Vec<f64>>);

/// Evolves a block of columns at one k; returns (steps, blocks at t-nodes, per-step velocities).
fn evolve_column(
    model: &FiberModel,
    k: &[f64],
    eps: f64,
    tmesh: &TMesh,
    opts: &StepOptions,
    start: CMat,
    velocities: bool,
) -> Result<Column> {
    let n = step_count(tmesh, eps, opts)?;
    let intervals = if tmesh.is_periodic() { tmesh.len() } else { tmesh.len() - 1 };
    let stride = n / intervals;
    let dt = tmesh.period() / n as f64;
    let dk: Vec<Vec<f64>> = (0..model.dim()).map(|j| model.k_derivative(k, j)).collect();
    let mut x = start;
    let mut snaps = vec![x.clone()];
    let mut vel = Vec::new();
    let velocity = |x: &CMat| -> Vec<f64> {
        dk.iter()
            .map(|g| {
                let mut s = 0.0;
                for (a, &ga) in g.iter().enumerate() {
                    s += ga * x.row(a).iter().map(|z| z.norm_sqr()).sum::<f64>();
                }
                s
            })
            .collect()
    };
    if velocities {
        vel.push(velocity(&x));
    }
    for s in 0..n {
        x = step(model, k, s as f64 * dt, dt, eps, opts.integrator, &x);
        if velocities {
            vel.push(velocity(&x));
        }
        if (s + 1) % stride == 0 && snaps.len() < tmesh.len() {
            snaps.push(x.clone());
        }
    }
    Ok((n, snaps, vel))
}

/// Occupied frames F(k,t) = U^ε(k,t)F(k,0) over a k-mesh.
#[derive(Clone, Debug)]
pub struct FrameEvolution {
    pub eps: f64,
    pub mesh: Mesh,
    pub steps: usize,
    pub dt: f64,
    /// F at the t-mesh nodes, [t·N_k + k]
    pub frames: Vec<CMat>,
    /// Re tr(F†(k+G)_jF) after every fine step, [step][k][j]
    pub velocities: Vec<Vec<Vec<f64>>>,
}

pub fn evolve_frames(
    model: &FiberModel,
    mesh: &Mesh,
    eps: f64,
    initial: &[CMat],
    opts: &StepOptions,
) -> Result<FrameEvolution> {
    let nk = mesh.k.len();
    assert_eq!(initial.len(), nk);
    let cols: Vec<Column> = (0..nk)
        .into_par_iter()
        .map(|ki| evolve_column(model, &mesh.k.point(ki), eps, &mesh.t, opts, initial[ki].clone(), true))
        .collect::<Result<_>>()?;
    let steps = cols[0].0;
    let mut frames = vec![CMat::zeros(0, 0); mesh.len()];
    let mut velocities = vec![Vec::with_capacity(nk); steps + 1];
    for (ki, (_, snaps, vel)) in cols.into_iter().enumerate() {
        for (ti, f) in snaps.into_iter().enumerate() {
            frames[mesh.node(ti, ki)] = f;
        }
        for (s, v) in vel.into_iter().enumerate() {
            velocities[s].push(v);
        }
    }
    Ok(FrameEvolution { eps, mesh: mesh.clone(), steps, dt: mesh.t.period() / steps as f64, frames, velocities })
}

impl FrameEvolution {
    pub fn step_times(&self) -> Vec<f64> {
        (0..=self.steps).map(|s| s as f64 * self.dt).collect()
    }

    /// Fine steps per t-mesh interval.
    pub fn stride(&self) -> usize {
        let intervals = if self.mesh.t.is_periodic() { self.mesh.t.len() } else { self.mesh.t.len() - 1 };
        self.steps / intervals
    }

    /// max over t-nodes of ‖FF† idempotency‖ and |tr − M|.
    pub fn density_defect(&self) -> f64 {
        self.frames
            .iter()
            .map(|f| max_abs(&(f.adjoint() * f - identity(f.ncols()))))
            .fold(0.0, f64::max)
    }

    pub fn current_trace(&self) -> CurrentTrace {
        let k = &self.mesh.k;
        let norm = k.lattice().zone_volume() / (2.0 * std::f64::consts::PI).powi(k.dim() as i32);
        let pdot: Vec<Vec<f64>> = self
            .velocities
            .iter()
            .map(|per_k| {
                (0..k.dim())
                    .map(|j| norm * per_k.iter().map(|v| v[j]).sum::<f64>() / per_k.len() as f64 / self.eps)
                    .collect()
            })
            .collect();
        let charge = trapezoid(&pdot, self.dt);
        CurrentTrace { times: self.step_times(), pdot, charge }
    }
}

fn trapezoid(values: &[Vec<f64>], h: f64) -> Vec<f64> {
    let d = values.first().map(|v| v.len()).unwrap_or(0);
    let n = values.len();
    (0..d)
        .map(|j| {
            let inner: f64 = values.iter().map(|v| v[j]).sum();
            h * (inner - 0.5 * (values[0][j] + values[n - 1][j]))
        })
        .collect()
}

/// J(k) = (k + G)/ε, one diagonal per direction.
pub fn current_operator(model: &FiberModel, k: &[f64], eps: f64) -> Vec<Vec<f64>> {
    (0..model.dim()).map(|j| model.k_derivative(k, j).into_iter().map(|x| x / eps).collect()).collect()
}

/// ṗ = (2π)^{−d} |Y*| mean_k Re tr(F†JF) for frames F(k) given on a k-mesh.
pub fn macroscopic_current(frames: &[CMat], kmesh: &KMesh, basis: &PlaneWaveBasis, eps: f64) -> Vec<f64> {
    let d = kmesh.dim();
    let norm = kmesh.lattice().zone_volume() / (2.0 * std::f64::consts::PI).powi(d as i32);
    let mut out = vec![0.0; d];
    for (ki, f) in frames.iter().enumerate() {
        let k = kmesh.point(ki);
        for (j, o) in out.iter_mut().enumerate() {
            let mut s = 0.0;
            for a in 0..basis.len() {
                let g = k[j] + gvec(kmesh, basis, a)[j];
                s += g * f.row(a).iter().map(|z| z.norm_sqr()).sum::<f64>();
            }
            *o += s;
        }
    }
    out.into_iter().map(|x| norm * x / frames.len() as f64 / eps).collect()
}

fn gvec(kmesh: &KMesh, basis: &PlaneWaveBasis, a: usize) -> Vec<f64> {
    kmesh.lattice().dual_vector(basis.coords(a))
}

#[derive(Clone, Debug, Serialize)]
pub struct CurrentTrace {
    pub times: Vec<f64>,
    pub pdot: Vec<Vec<f64>>,
    pub charge: Vec<f64>,
}

/// ΔP = ∫_0^T ṗ dt by the trapezoid rule.
pub fn transported_charge(trace: &CurrentTrace) -> Vec<f64> {
    if trace.times.len() < 2 {
        return vec![0.0; trace.pdot.first().map(|v| v.len()).unwrap_or(0)];
    }
    trapezoid(&trace.pdot, trace.times[1] - trace.times[0])
}

/// max over (k, t) of ‖ρ^ε − P_N^ε‖.
pub fn superadiabatic_error(ev: &FrameEvolution, sad: &SuperAdiabaticData) -> Result<f64> {
    if sad.projectors.len() != ev.frames.len() {
        return Err(Error::MeshMismatch(format!(
            "{} propagated nodes against {} super-adiabatic nodes",
            ev.frames.len(),
            sad.projectors.len()
        )));
    }
    Ok(ev
        .frames
        .par_iter()
        .zip(&sad.projectors)
        .map(|(f, p)| opnorm(&(f * f.adjoint() - p)))
        .reduce(|| 0.0, f64::max))
}

#[derive(Clone, Debug, Serialize)]
pub struct Theorem1Row {
    pub eps: f64,
    pub steps: usize,
    pub delta_p: Vec<f64>,
    /// |ΔP^ε − ΔP_Θ|
    pub charge_residual: f64,
    /// max_t |ṗ^ε + (2π)^{−d}∫Θ dk|
    pub current_residual: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct Theorem1Report {
    pub delta_p_theta: Vec<f64>,
    pub rows: Vec<Theorem1Row>,
    pub charge_slope: f64,
    pub current_slope: f64,
}

/// Compares propagated currents with the curvature prediction for each ε.
/// `initial` holds the occupied frames at t = 0 and `cf` the curvature of the same band window.
pub fn theorem1_check(
    model: &FiberModel,
    cf: &CurvatureField,
    initial: &[CMat],
    eps_list: &[f64],
    opts: &StepOptions,
) -> Result<(Theorem1Report, Vec<FrameEvolution>)> {
    let mesh = cf.mesh().clone();
    let d = mesh.k.dim();
    let norm = (2.0 * std::f64::consts::PI).powi(d as i32);
    let dp_theta = cf.charge();
    let zone: Vec<Vec<f64>> = (0..mesh.t.len()).map(|ti| cf.zone_integral(ti)).collect();
    let mut rows = Vec::new();
    let mut evolutions = Vec::new();
    for &eps in eps_list {
        let ev = evolve_frames(model, &mesh, eps, initial, opts)?;
        let tr = ev.current_trace();
        let stride = ev.stride();
        let mut rc: f64 = 0.0;
        for (ti, z) in zone.iter().enumerate() {
            for j in 0..d {
                rc = rc.max((tr.pdot[ti * stride][j] + z[j] / norm).abs());
            }
        }
        let charge_residual = (0..d).map(|j| (tr.charge[j] - dp_theta[j]).abs()).fold(0.0, f64::max);
        rows.push(Theorem1Row { eps, steps: ev.steps, delta_p: tr.charge.clone(), charge_residual, current_residual: rc });
        evolutions.push(ev);
    }
    let eps: Vec<f64> = rows.iter().map(|r| r.eps).collect();
    let charge_slope = crate::fit::loglog_slope(&eps, &rows.iter().map(|r| r.charge_residual).collect::<Vec<_>>());
    let current_slope = crate::fit::loglog_slope(&eps, &rows.iter().map(|r| r.current_residual).collect::<Vec<_>>());
    Ok((Theorem1Report { delta_p_theta: dp_theta, rows, charge_slope, current_slope }, evolutions))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bands::diagonalize;
    use crate::geometry::{build_projector_field, curvature, Partials};
    use crate::linalg::eigh;
    use crate::model::{assemble_fiber, families, Lattice, Profile};

    fn lat() -> Lattice {
        Lattice::cubic(1, 1.0)
    }

    #[test]
    fn static_propagator_is_exponential() {
        let p = families::static_cosine(lat(), 0.5, 1.0);
        let model = FiberModel::new(&p, 3);
        let tm = TMesh::open(3, 1.0);
        for integ in [Integrator::Midpoint, Integrator::CommutatorFree4] {
            let opts = StepOptions { integrator: integ, ..Default::default() };
            let fp = propagate(&model, &[0.4], 0.1, &tm, &opts).unwrap();
            let h = model.hamiltonian(&[0.4], 0.0);
            let exact = expm_apply(&h, 1.0 / 0.1, &identity(7));
            assert!(max_abs(&(&fp.unitaries[2] - exact)) < 1e-9);
            assert!(fp.unitarity_defect() < 1e-10);
            let (_, v) = eigh(&h);
            let psi = v.column(0).into_owned();
            let amp = (psi.adjoint() * &fp.unitaries[1] * &psi)[(0, 0)].norm();
            assert!((amp - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn integrator_orders() {
        let p = families::sliding_cosine(lat(), 0.5, 1.0, Profile::Linear);
        let model = FiberModel::new(&p, 3);
        let tm = TMesh::open(2, 1.0);
        let psi = diagonalize(&assemble_fiber(&p, &[0.3], 0.0, 3)).unwrap().frame(0, 1);
        for (integ, lo, hi) in [(Integrator::Midpoint, 3.0, 5.0), (Integrator::CommutatorFree4, 12.0, 20.0)] {
            let u = |n: usize| {
                let o = StepOptions { integrator: integ, steps: Some(n), step_factor: 1.0 };
                &propagate(&model, &[0.3], 0.1, &tm, &o).unwrap().unitaries[1] * &psi
            };
            let (a, b, c4) = (u(400), u(800), u(1600));
            let ratio = max_abs(&(&a - &b)) / max_abs(&(&b - &c4));
            assert!(ratio > lo && ratio < hi, "{integ:?} {ratio}");
        }
        let o = StepOptions { steps: Some(5), ..Default::default() };
        assert!(matches!(propagate(&model, &[0.3], 0.1, &tm, &o), Err(Error::StepTooLarge { .. })));
    }

    #[test]
    fn current_operator_values() {
        let model = FiberModel::new(&families::static_cosine(lat(), 0.5, 1.0), 1);
        let j = current_operator(&model, &[0.0], 1.0);
        let two_pi = 2.0 * std::f64::consts::PI;
        assert_eq!(j[0].len(), 3);
        for (x, want) in j[0].iter().zip([-two_pi, 0.0, two_pi]) {
            assert!((x - want).abs() < 1e-14);
        }
        let j10 = current_operator(&model, &[0.3], 0.1);
        let j1 = current_operator(&model, &[0.3], 1.0);
        for (a, b) in j10[0].iter().zip(&j1[0]) {
            assert!((a - 10.0 * b).abs() < 1e-12);
        }
    }

    #[test]
    fn static_filled_band_carries_no_current() {
        let model = FiberModel::new(&families::static_cosine(lat(), 0.5, 1.0), 6);
        let km = KMesh::uniform(&lat(), 64);
        let frames: Vec<CMat> = (0..64)
            .map(|ki| diagonalize(&assemble_fiber(model.path(), &km.point(ki), 0.0, 6)).unwrap().frame(0, 1))
            .collect();
        let p = macroscopic_current(&frames, &km, model.basis(), 0.1);
        assert!(p[0].abs() < 1e-8, "{p:?}");
    }

    #[test]
    fn sliding_pump_transports_one_charge() {
        let model = FiberModel::new(&families::sliding_cosine(lat(), 0.5, 4.0, Profile::Linear), 6);
        let mesh = Mesh::new(KMesh::uniform(&lat(), 64), TMesh::periodic(8, 4.0));
        let pf = build_projector_field(&model, &mesh, 0..1, 1e-6, Partials::Spectral).unwrap();
        let init: Vec<CMat> = (0..64).map(|ki| pf.frame(ki).clone()).collect();
        let ev = evolve_frames(&model, &mesh, 0.05, &init, &StepOptions::default()).unwrap();
        let tr = ev.current_trace();
        assert!((transported_charge(&tr)[0] - tr.charge[0]).abs() < 1e-12);
        assert!((tr.charge[0] - 1.0).abs() < 1e-2, "{:?}", tr.charge);
        let cf = curvature(&pf).unwrap();
        assert!(cf.charge()[0] > 0.0);
    }
}
