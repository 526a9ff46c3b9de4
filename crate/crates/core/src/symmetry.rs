//! Space-reflection and time-reversal checks on projector and curvature fields.
//!
//! On plane-wave coefficients reflection acts as index reversal R (G → −G) and time reversal as
//! R followed by entrywise conjugation.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{connection_and_potential, CurvatureField, GaugeFrame, ProjectorField};
use crate::linalg::{frobenius, CMat};
use crate::model::PotentialPath;

const SAMPLES: usize = 33;

#[derive(Clone, Copy, Debug, Serialize, PartialEq, Eq)]
pub struct SymmetryFlags {
    /// c_{−G}(t) = c_G(t), i.e. V(−x) = V(x)
    pub inversion: bool,
    /// c_{−G}(t) = conj c_G(t), i.e. V real
    pub real: bool,
}

pub fn detect_symmetries(path: &PotentialPath) -> SymmetryFlags {
    let mut inversion = true;
    let mut real = true;
    for s in 0..SAMPLES {
        let t = path.period() * s as f64 / (SAMPLES - 1) as f64;
        for g in path.harmonics() {
            let minus: Vec<i32> = g.iter().map(|x| -x).collect();
            let a = path.coefficient(&g, t);
            let b = path.coefficient(&minus, t);
            if (a - b).norm() > 1e-12 {
                inversion = false;
            }
            if (a.conj() - b).norm() > 1e-12 {
                real = false;
            }
        }
    }
    SymmetryFlags { inversion, real }
}

#[derive(Clone, Debug, Serialize)]
pub struct InversionDefects {
    /// max ‖P(k,t) − R P(−k,t) R‖_F over pairs whose mirror needs no basis shift
    pub projector: f64,
    /// same at zone-edge pairs, where the shifted box loses plane waves
    pub projector_edge: f64,
    /// max |Θ(−k,t) + Θ(k,t)|
    pub theta: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct TimeReversalDefects {
    /// max ‖P(k,t) − conj(R P(−k,t) R)‖_F over pairs whose mirror needs no basis shift
    pub projector: f64,
    pub projector_edge: f64,
    /// max |Θ(−k,t) − Θ(k,t)|
    pub theta: f64,
    /// max |Ω(−k,t) + Ω(k,t)| (d ≥ 2)
    pub omega: Option<f64>,
    /// max |𝒜(−k,t) − 𝒜(k,t)| over links, only for a supplied frame (gauge dependent)
    pub connection: Option<f64>,
}

fn projector_of(f: &CMat) -> CMat {
    f * f.adjoint()
}

/// R F(−k) and whether the mirror needed a basis shift.
fn mirrored_frame(pf: &ProjectorField, node: usize) -> Result<(CMat, bool)> {
    let mesh = pf.mesh();
    let (ti, ki) = mesh.split(node);
    let m = mesh.k.mirror(ki).ok_or_else(|| Error::AsymmetricMesh(format!("k-mesh {:?} has no k → −k pairing", mesh.k.sizes())))?;
    let f = pf.frame_shifted(mesh.node(ti, m.node), &m.shift);
    Ok((pf.basis().reverse_rows(&f), m.shift.iter().any(|&x| x != 0)))
}

pub fn check_inversion(pf: &ProjectorField, cf: &CurvatureField) -> Result<InversionDefects> {
    let mesh = pf.mesh();
    if !mesh.k.is_symmetric() {
        return Err(Error::AsymmetricMesh(format!("k-mesh {:?} needs even sizes", mesh.k.sizes())));
    }
    let (mut projector, mut projector_edge, mut theta) = (0.0f64, 0.0f64, 0.0f64);
    for node in 0..mesh.len() {
        let (ti, ki) = mesh.split(node);
        let (rf, edge) = mirrored_frame(pf, node)?;
        let p = frobenius(&(projector_of(pf.frame(node)) - projector_of(&rf)));
        if edge {
            projector_edge = projector_edge.max(p);
        } else {
            projector = projector.max(p);
        }
        let m = mesh.k.mirror(ki).expect("symmetric mesh");
        let a = cf.theta(node);
        let b = cf.theta(mesh.node(ti, m.node));
        for j in 0..a.len() {
            theta = theta.max((a[j] + b[j]).abs());
        }
    }
    Ok(InversionDefects { projector, projector_edge, theta })
}

pub fn check_time_reversal(pf: &ProjectorField, cf: &CurvatureField, frame: Option<&GaugeFrame>) -> Result<TimeReversalDefects> {
    let mesh = pf.mesh();
    if !mesh.k.is_symmetric() {
        return Err(Error::AsymmetricMesh(format!("k-mesh {:?} needs even sizes", mesh.k.sizes())));
    }
    let d = mesh.k.dim();
    let (mut projector, mut projector_edge, mut theta, mut omega) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for node in 0..mesh.len() {
        let (ti, ki) = mesh.split(node);
        let (rf, edge) = mirrored_frame(pf, node)?;
        let p = frobenius(&(projector_of(pf.frame(node)) - projector_of(&rf.map(|z| z.conj()))));
        if edge {
            projector_edge = projector_edge.max(p);
        } else {
            projector = projector.max(p);
        }
        let m = mesh.node(ti, mesh.k.mirror(ki).expect("symmetric mesh").node);
        let a = cf.theta(node);
        let b = cf.theta(m);
        for j in 0..d {
            theta = theta.max((a[j] - b[j]).abs());
            for l in 0..d {
                omega = omega.max((cf.omega(node, j, l) + cf.omega(m, j, l)).abs());
            }
        }
    }
    let connection = match frame {
        Some(f) => {
            let conn = connection_and_potential(f)?;
            let km = f.k_mesh();
            let nk = km.len();
            let mut worst: f64 = 0.0;
            for s in 0..f.slices() {
                for ki in 0..nk {
                    for axis in 0..d {
                        // link k → k+h mirrors to −k−h → −k
                        let end = km.neighbor(ki, axis, 1).node;
                        let start = km.mirror(end).expect("symmetric mesh").node;
                        for j in 0..d {
                            let a = conn.connection[s * nk + ki][axis][j];
                            let b = conn.connection[s * nk + start][axis][j];
                            worst = worst.max((a - b).abs());
                        }
                    }
                }
            }
            Some(worst)
        }
        None => None,
    };
    Ok(TimeReversalDefects { projector, projector_edge, theta, omega: if d >= 2 { Some(omega) } else { None }, connection })
}

#[derive(Clone, Debug, Serialize)]
pub struct SymmetryThresholds {
    pub projector: f64,
    pub theta: f64,
    pub omega: f64,
}

impl Default for SymmetryThresholds {
    fn default() -> Self {
        SymmetryThresholds { projector: 1e-9, theta: 1e-10, omega: 1e-9 }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SymmetryReport {
    pub flags: SymmetryFlags,
    pub inversion: Option<InversionDefects>,
    pub time_reversal: Option<TimeReversalDefects>,
    /// defects measured where the hypothesis fails; expected O(1)
    pub negative_controls: Vec<(String, f64)>,
    /// max |Θ| when both symmetries hold
    pub combined_max_theta: Option<f64>,
    pub thresholds: SymmetryThresholds,
    pub pass: bool,
}

pub fn symmetry_report(
    path: &PotentialPath,
    pf: &ProjectorField,
    cf: &CurvatureField,
    frame: Option<&GaugeFrame>,
) -> Result<SymmetryReport> {
    let flags = detect_symmetries(path);
    let th = SymmetryThresholds::default();
    let inv = check_inversion(pf, cf)?;
    let tr = check_time_reversal(pf, cf, frame)?;
    let mut pass = true;
    let mut negative_controls = Vec::new();
    let inversion = if flags.inversion {
        pass &= inv.projector <= th.projector && inv.theta <= th.theta;
        Some(inv)
    } else {
        negative_controls.push(("inversion_theta".to_string(), inv.theta));
        negative_controls.push(("inversion_projector".to_string(), inv.projector));
        None
    };
    let time_reversal = if flags.real {
        pass &= tr.projector <= th.projector && tr.theta <= th.theta && tr.omega.is_none_or(|o| o <= th.omega);
        Some(tr)
    } else {
        negative_controls.push(("time_reversal_theta".to_string(), tr.theta));
        None
    };
    let combined_max_theta = if flags.inversion && flags.real {
        let m = cf.max_abs_theta();
        pass &= m <= th.theta;
        Some(m)
    } else {
        None
    };
    Ok(SymmetryReport { flags, inversion, time_reversal, negative_controls, combined_max_theta, thresholds: th, pass })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_projector_field, curvature, Partials};
    use crate::mesh::{KMesh, Mesh, TMesh};
    use crate::model::{families, FiberModel, Lattice, Profile, Schedule};
    use crate::C64;

    fn lat() -> Lattice {
        Lattice::cubic(1, 1.0)
    }

    #[test]
    fn flags_of_families() {
        let f = detect_symmetries(&families::static_cosine(lat(), 0.5, 1.0));
        assert!(f.inversion && f.real);
        let f = detect_symmetries(&families::sliding_cosine(lat(), 0.5, 1.0, Profile::Linear));
        assert!(!f.inversion && f.real);
        // cos + sin with real amplitudes: c_1 = (a − ib)/2
        let p = PotentialPath::real(lat(), 1.0).with_harmonic(&[1], Schedule::Constant(C64::new(0.3, -0.2)));
        let f = detect_symmetries(&p);
        assert!(!f.inversion && f.real);
    }

    #[test]
    fn symmetric_loop_has_vanishing_theta() {
        let p = families::two_harmonic_loop(lat(), 1.0, 1.0, 2.0, Profile::Linear, true);
        let model = FiberModel::new(&p, 6);
        let mesh = Mesh::new(KMesh::uniform(&lat(), 16), TMesh::periodic(8, 2.0));
        let pf = build_projector_field(&model, &mesh, 0..1, 1e-6, Partials::Spectral).unwrap();
        let cf = curvature(&pf).unwrap();
        let r = symmetry_report(&p, &pf, &cf, None).unwrap();
        assert!(r.pass, "{r:?}");
        assert!(r.combined_max_theta.unwrap() < 1e-10);
    }

    #[test]
    fn sliding_cosine_is_a_negative_control() {
        let p = families::sliding_cosine(lat(), 0.5, 1.0, Profile::Linear);
        let model = FiberModel::new(&p, 6);
        let mesh = Mesh::new(KMesh::uniform(&lat(), 16), TMesh::periodic(8, 1.0));
        let pf = build_projector_field(&model, &mesh, 0..1, 1e-6, Partials::Spectral).unwrap();
        let cf = curvature(&pf).unwrap();
        let r = symmetry_report(&p, &pf, &cf, None).unwrap();
        assert!(r.inversion.is_none());
        let inv = r.negative_controls.iter().find(|(n, _)| n == "inversion_theta").unwrap().1;
        assert!(inv > 1e-2, "{inv}");
        assert!(r.time_reversal.as_ref().unwrap().theta < 1e-10);
    }

    #[test]
    fn odd_mesh_is_rejected() {
        let p = families::static_cosine(lat(), 0.5, 1.0);
        let model = FiberModel::new(&p, 4);
        let mesh = Mesh::new(KMesh::uniform(&lat(), 7), TMesh::open(3, 1.0));
        let pf = build_projector_field(&model, &mesh, 0..1, 1e-6, Partials::Spectral).unwrap();
        let cf = curvature(&pf).unwrap();
        assert!(matches!(check_inversion(&pf, &cf), Err(Error::AsymmetricMesh(_))));
    }
}
