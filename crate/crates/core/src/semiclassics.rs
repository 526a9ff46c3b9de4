//! ε-corrected semiclassical flow `q̇ = ∇_kE_m − εΘ_m, k̇ = 0`, filled-band currents and a
//! wavepacket test of the flow against propagated position expectations.

use rayon::prelude::*;
use serde::Serialize;

use crate::dynamics::{evolve_frames, StepOptions};
use crate::error::{Error, Result};
use crate::geometry::{build_projector_field, curvature, initial_k_frame, CurvatureField, Partials, ProjectorField};
use crate::linalg::CMat;
use crate::mesh::{KMesh, Mesh};
use crate::model::FiberModel;

/// Band-m data on a mesh: Hellmann–Feynman velocities and the single-band curvature.
#[derive(Clone, Debug)]
pub struct BandFields {
    pub band: usize,
    pub field: ProjectorField,
    pub curvature: CurvatureField,
    /// ∇_kE_m per node
    pub velocity: Vec<Vec<f64>>,
}

pub fn band_fields(model: &FiberModel, mesh: &Mesh, band: usize, delta: f64) -> Result<BandFields> {
    let field = build_projector_field(model, mesh, band..band + 1, delta, Partials::Spectral).map_err(|e| match e {
        Error::GapClosed { k, t, gap, .. } => Error::BandDegenerate { band, k, t, gap },
        other => other,
    })?;
    let curvature = curvature(&field)?;
    let velocity = (0..mesh.len())
        .into_par_iter()
        .map(|node| {
            let (_, ki) = mesh.split(node);
            let k = mesh.k.point(ki);
            let f = field.frame(node);
            (0..model.dim())
                .map(|j| {
                    model.k_derivative(&k, j).iter().enumerate().map(|(a, g)| g * f.row(a).iter().map(|z| z.norm_sqr()).sum::<f64>()).sum()
                })
                .collect()
        })
        .collect();
    Ok(BandFields { band, field, curvature, velocity })
}

/// Cumulative Simpson integral on a uniform grid, starting at 0.
pub fn cumulative_simpson(f: &[f64], h: f64) -> Vec<f64> {
    let n = f.len();
    let mut out = vec![0.0; n];
    if n == 2 {
        out[1] = 0.5 * h * (f[0] + f[1]);
        return out;
    }
    for i in 0..n.saturating_sub(1) {
        let piece = if i + 2 < n {
            h / 12.0 * (5.0 * f[i] + 8.0 * f[i + 1] - f[i + 2])
        } else {
            h / 12.0 * (-f[i - 1] + 8.0 * f[i] + 5.0 * f[i + 1])
        };
        out[i + 1] = out[i] + piece;
    }
    out
}

#[derive(Clone, Debug, Serialize)]
pub struct SemiclassicalTrajectory {
    pub band: usize,
    pub k: Vec<f64>,
    pub eps: f64,
    pub times: Vec<f64>,
    pub q: Vec<Vec<f64>>,
}

/// q(t) = q0 + ∫_0^t (∇_kE_m − εΘ_m)(k, s) ds at the k-node `ki`, over the t-nodes.
pub fn flow(fields: &BandFields, ki: usize, q0: &[f64], eps: f64) -> SemiclassicalTrajectory {
    let mesh = fields.field.mesh();
    let nt = mesh.t.len();
    let d = mesh.k.dim();
    let mut q = vec![q0.to_vec(); nt];
    for j in 0..d {
        let v: Vec<f64> = (0..nt)
            .map(|ti| {
                let node = mesh.node(ti, ki);
                fields.velocity[node][j] - eps * fields.curvature.theta(node)[j]
            })
            .collect();
        for (ti, x) in cumulative_simpson(&v, mesh.t.step()).into_iter().enumerate() {
            q[ti][j] += x;
        }
    }
    SemiclassicalTrajectory { band: fields.band, k: mesh.k.point(ki), eps, times: mesh.t.times(), q }
}

#[derive(Clone, Debug, Serialize)]
pub struct FilledBandCurrent {
    /// −(2π)^{−d} ∫Θ_m dk per t-node
    pub current: Vec<Vec<f64>>,
    /// max |(2π)^{−d} ∫∇_kE_m dk| over t-nodes (dropped from the current)
    pub gradient_integral: f64,
    /// ∫_0^T j dt
    pub charge: Vec<f64>,
}

pub fn filled_band_current(fields: &BandFields) -> FilledBandCurrent {
    let mesh = fields.field.mesh();
    let d = mesh.k.dim();
    let norm = (2.0 * std::f64::consts::PI).powi(d as i32);
    let w = mesh.k.weight();
    let mut grad: f64 = 0.0;
    let mut current = Vec::with_capacity(mesh.t.len());
    for ti in 0..mesh.t.len() {
        for j in 0..d {
            let s: f64 = (0..mesh.k.len()).map(|ki| fields.velocity[mesh.node(ti, ki)][j]).sum::<f64>() * w / norm;
            grad = grad.max(s.abs());
        }
        current.push(fields.curvature.zone_integral(ti).into_iter().map(|x| -x / norm).collect::<Vec<f64>>());
    }
    let wt = mesh.t.weights();
    let charge = (0..d).map(|j| current.iter().zip(&wt).map(|(c, w)| c[j] * w).sum()).collect();
    FilledBandCurrent { current, gradient_integral: grad, charge }
}

/// Periodized Gaussian envelope exp(−|k − k_c|²/(4σ²)).
#[derive(Clone, Debug, Serialize)]
pub struct Envelope {
    pub center: Vec<f64>,
    pub width: f64,
}

impl Envelope {
    /// Width |Y*|^{1/d}/8.
    pub fn default_for(kmesh: &KMesh, center: Vec<f64>) -> Envelope {
        let w = kmesh.lattice().zone_volume().powf(1.0 / kmesh.dim() as f64) / 8.0;
        Envelope { center, width: w }
    }

    /// Normalized samples g(k) with Σ|g|²·Δk = 1.
    pub fn sample(&self, kmesh: &KMesh) -> Vec<f64> {
        let lat = kmesh.lattice();
        let d = kmesh.dim();
        let images: Vec<Vec<i32>> = (0..7i32.pow(d as u32))
            .map(|mut i| {
                (0..d)
                    .map(|_| {
                        let x = i % 7 - 3;
                        i /= 7;
                        x
                    })
                    .collect()
            })
            .collect();
        let mut g: Vec<f64> = (0..kmesh.len())
            .map(|ki| {
                let k = kmesh.point(ki);
                images
                    .iter()
                    .map(|n| {
                        let s = lat.dual_vector(n);
                        let r2: f64 = (0..d).map(|j| (k[j] - self.center[j] + s[j]).powi(2)).sum();
                        (-r2 / (4.0 * self.width * self.width)).exp()
                    })
                    .sum()
            })
            .collect();
        let norm: f64 = (g.iter().map(|x| x * x).sum::<f64>() * kmesh.weight()).sqrt();
        for x in &mut g {
            *x /= norm;
        }
        g
    }
}

/// ⟨Q⟩ = Σ_k Δk Re ψ†(k)·iε·D_kψ(k), with the covariant central difference D_k.
/// Also returns the per-node densities Re(ψ† iεDψ).
pub fn position_expectation(psi: &[CMat], kmesh: &KMesh, basis: &crate::model::PlaneWaveBasis, eps: f64) -> (Vec<f64>, Vec<Vec<f64>>) {
    let d = kmesh.dim();
    let binv = kmesh.lattice().fractional_to_cartesian();
    let dens: Vec<Vec<f64>> = (0..kmesh.len())
        .map(|ki| {
            let ds: Vec<CMat> = (0..d)
                .map(|axis| {
                    let p = kmesh.neighbor(ki, axis, 1);
                    let m = kmesh.neighbor(ki, axis, -1);
                    let diff = basis.shift_rows(&psi[p.node], &p.shift) - basis.shift_rows(&psi[m.node], &m.shift);
                    diff * crate::linalg::c(0.5 * kmesh.sizes()[axis] as f64, 0.0)
                })
                .collect();
            (0..d)
                .map(|j| {
                    let mut s = crate::C64::new(0.0, 0.0);
                    for (axis, dsa) in ds.iter().enumerate() {
                        if binv[(j, axis)] != 0.0 {
                            s += crate::linalg::trace_adj_mul(&psi[ki], dsa) * binv[(j, axis)];
                        }
                    }
                    (s * crate::linalg::I * eps).re
                })
                .collect()
        })
        .collect();
    let w = kmesh.weight();
    let total = (0..d).map(|j| dens.iter().map(|x| x[j]).sum::<f64>() * w).collect();
    (total, dens)
}

#[derive(Clone, Debug, Serialize)]
pub struct WavepacketRun {
    pub eps: f64,
    pub times: Vec<f64>,
    /// propagated ⟨Q⟩(t) at the t-nodes
    pub measured: Vec<Vec<f64>>,
    /// |g|²-weighted corrected flow
    pub predicted: Vec<Vec<f64>>,
    /// same flow without the −εΘ_m term
    pub uncorrected: Vec<Vec<f64>>,
    pub error: Vec<f64>,
    pub error_uncorrected: Vec<f64>,
    /// log–log slope of error(t) over t ≥ T/8
    pub growth_exponent: f64,
    /// |Σ w q0 − ⟨Q⟩(0)|
    pub initial_mismatch: f64,
    pub normalization: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct WavepacketReport {
    pub band: usize,
    pub envelope: Envelope,
    pub runs: Vec<WavepacketRun>,
    /// err(T) at consecutive ε divided
    pub ratios: Vec<f64>,
    pub ratios_uncorrected: Vec<f64>,
}

pub fn wavepacket_check(
    model: &FiberModel,
    mesh: &Mesh,
    band: usize,
    envelope: &Envelope,
    eps_list: &[f64],
    opts: &StepOptions,
    delta: f64,
) -> Result<WavepacketReport> {
    let fields = band_fields(model, mesh, band, delta)?;
    let km = &mesh.k;
    let d = km.dim();
    let frames = initial_k_frame(&fields.field)?;
    for ki in 0..km.len() {
        for axis in 0..d {
            let nb = km.neighbor(ki, axis, 1);
            let o = (frames[ki].adjoint() * model.basis().shift_rows(&frames[nb.node], &nb.shift))[(0, 0)].norm();
            if o < 0.9 {
                return Err(Error::GaugeDiscontinuity { node: ki, overlap: o });
            }
        }
    }
    let g = envelope.sample(km);
    let wk: Vec<f64> = g.iter().map(|x| x * x * km.weight()).collect();
    let normalization = wk.iter().sum::<f64>();
    let nt = mesh.t.len();
    let h = mesh.t.step();
    let weighted = |eps: f64| -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; d]; nt];
        for j in 0..d {
            let v: Vec<f64> = (0..nt)
                .map(|ti| {
                    (0..km.len())
                        .map(|ki| {
                            let node = mesh.node(ti, ki);
                            wk[ki] * (fields.velocity[node][j] - eps * fields.curvature.theta(node)[j])
                        })
                        .sum()
                })
                .collect();
            for (ti, x) in cumulative_simpson(&v, h).into_iter().enumerate() {
                out[ti][j] = x;
            }
        }
        out
    };
    let flow_free = weighted(0.0);
    let mut runs = Vec::new();
    for &eps in eps_list {
        let psi: Vec<CMat> = frames.iter().zip(&g).map(|(f, gk)| f * crate::linalg::c(*gk, 0.0)).collect();
        let (q_start, dens) = position_expectation(&psi, km, model.basis(), eps);
        let q0: Vec<Vec<f64>> =
            dens.iter().zip(&g).map(|(x, gk)| x.iter().map(|v| if gk * gk > 0.0 { v / (gk * gk) } else { 0.0 }).collect()).collect();
        let initial_mismatch = (0..d)
            .map(|j| ((0..km.len()).map(|ki| wk[ki] * q0[ki][j]).sum::<f64>() - q_start[j]).abs())
            .fold(0.0, f64::max);
        let ev = evolve_frames(model, mesh, eps, &frames, opts)?;
        let stride = ev.stride();
        let mut measured = vec![q_start.clone(); nt];
        for j in 0..d {
            let v: Vec<f64> = ev.velocities.iter().map(|per_k| per_k.iter().zip(&wk).map(|(x, w)| w * x[j]).sum()).collect();
            let cum = cumulative_simpson(&v, ev.dt);
            for (ti, m) in measured.iter_mut().enumerate() {
                m[j] += cum[ti * stride];
            }
        }
        let corr = weighted(eps);
        let predicted: Vec<Vec<f64>> = corr.iter().map(|x| x.iter().zip(&q_start).map(|(a, b)| a + b).collect()).collect();
        let uncorrected: Vec<Vec<f64>> = flow_free.iter().map(|x| x.iter().zip(&q_start).map(|(a, b)| a + b).collect()).collect();
        let dist = |a: &[Vec<f64>]| -> Vec<f64> {
            a.iter().zip(&measured).map(|(p, m)| p.iter().zip(m).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)).collect()
        };
        let error = dist(&predicted);
        let error_uncorrected = dist(&uncorrected);
        let times = mesh.t.times();
        let (ts, es): (Vec<f64>, Vec<f64>) =
            times.iter().zip(&error).filter(|(t, _)| **t >= mesh.t.period() / 8.0).map(|(t, e)| (*t, *e)).unzip();
        let growth_exponent = crate::fit::loglog_slope(&ts, &es);
        runs.push(WavepacketRun {
            eps,
            times,
            measured,
            predicted,
            uncorrected,
            error,
            error_uncorrected,
            growth_exponent,
            initial_mismatch,
            normalization,
        });
    }
    let ratio = |f: fn(&WavepacketRun) -> f64| -> Vec<f64> { runs.windows(2).map(|w| f(&w[0]) / f(&w[1])).collect() };
    let ratios = ratio(|r| *r.error.last().unwrap());
    let ratios_uncorrected = ratio(|r| *r.error_uncorrected.last().unwrap());
    Ok(WavepacketReport { band, envelope: envelope.clone(), runs, ratios, ratios_uncorrected })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::TMesh;
    use crate::model::{families, Lattice, Profile};

    fn lat() -> Lattice {
        Lattice::cubic(1, 1.0)
    }

    #[test]
    fn simpson_is_exact_for_quadratics() {
        let h = 0.1;
        let f: Vec<f64> = (0..11).map(|i| (i as f64 * h).powi(2)).collect();
        let c = cumulative_simpson(&f, h);
        for (i, x) in c.iter().enumerate() {
            assert!((x - (i as f64 * h).powi(3) / 3.0).abs() < 1e-14);
        }
    }

    #[test]
    fn static_flow_is_group_velocity_line() {
        let model = FiberModel::new(&families::static_cosine(lat(), 0.5, 1.0), 5);
        let mesh = Mesh::new(KMesh::uniform(&lat(), 8), TMesh::open(9, 1.0));
        let f = band_fields(&model, &mesh, 0, 1e-6).unwrap();
        let tr = flow(&f, 3, &[0.2], 0.3);
        let v = f.velocity[mesh.node(0, 3)][0];
        for (t, q) in tr.times.iter().zip(&tr.q) {
            assert!((q[0] - 0.2 - v * t).abs() < 1e-12);
        }
        let fb = filled_band_current(&f);
        assert!(fb.charge[0].abs() < 1e-12);
    }

    #[test]
    fn envelope_is_normalized() {
        let km = KMesh::uniform(&lat(), 32);
        let e = Envelope::default_for(&km, vec![0.5]);
        let g = e.sample(&km);
        let s: f64 = g.iter().map(|x| x * x).sum::<f64>() * km.weight();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn filled_bands_add_up() {
        let model = FiberModel::new(&families::sliding_cosine(lat(), 0.5, 1.0, Profile::Linear), 6);
        let mesh = Mesh::new(KMesh::uniform(&lat(), 256), TMesh::periodic(4, 1.0));
        let f0 = filled_band_current(&band_fields(&model, &mesh, 0, 1e-6).unwrap());
        assert!((f0.charge[0] - 1.0).abs() < 1e-3);
        assert!(f0.gradient_integral < 1e-10, "{}", f0.gradient_integral);
    }

    #[test]
    fn closing_gap_is_reported_as_degenerate_band() {
        let model = FiberModel::new(&crate::model::PotentialPath::real(lat(), 1.0), 3);
        let mesh = Mesh::new(KMesh::uniform(&lat(), 8), TMesh::open(3, 1.0));
        assert!(matches!(band_fields(&model, &mesh, 0, 1e-6), Err(Error::BandDegenerate { .. })));
    }

    #[test]
    fn wavepacket_follows_corrected_flow() {
        let model = FiberModel::new(&families::two_harmonic_loop(lat(), 1.0, 1.0, 1.0, Profile::Linear, false), 5);
        let mesh = Mesh::new(KMesh::uniform(&lat(), 32), TMesh::periodic(16, 1.0));
        let env = Envelope::default_for(&mesh.k, vec![std::f64::consts::FRAC_PI_4]);
        let r = wavepacket_check(&model, &mesh, 0, &env, &[0.1], &StepOptions::default(), 1e-6).unwrap();
        let run = &r.runs[0];
        assert!(run.initial_mismatch < 1e-12 && (run.normalization - 1.0).abs() < 1e-10);
        assert!(run.error.last().unwrap() < run.error_uncorrected.last().unwrap());
    }
}
