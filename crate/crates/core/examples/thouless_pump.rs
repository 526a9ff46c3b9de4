//! Charge pumped by one cycle of the sliding cosine, computed three ways: from the curvature,
//! from the Berry phase of a transported gauge, and from propagating the occupied states.

use piezo::dynamics::{theorem1_check, StepOptions};
use piezo::geometry::{build_projector_field, chern_number, curvature, initial_k_frame, kato_frame, Partials};
use piezo::linalg::CMat;
use piezo::mesh::{KMesh, Mesh, TMesh};
use piezo::model::{families, FiberModel, Lattice, Profile};

fn main() -> piezo::Result<()> {
    let lat = Lattice::cubic(1, 1.0);
    let period = 4.0;
    let path = families::sliding_cosine(lat.clone(), 0.5, period, Profile::Linear);
    let model = FiberModel::new(&path, 9);
    let mesh = Mesh::new(KMesh::uniform(&lat, 64), TMesh::periodic(64, period));

    // band 1 nearly touches band 2 at k = 0, so its curvature is a narrow spike that needs a
    // fine k-mesh; the sliding cosine only translates in t, so a few t-nodes suffice there
    let fine = Mesh::new(KMesh::uniform(&lat, 8192), TMesh::periodic(4, period));
    for (band, theta_mesh) in [(0, &mesh), (1, &fine)] {
        let c = chern_number(&build_projector_field(&model, &mesh, band..band + 1, 1e-6, Partials::Spectral)?, 0, 0)?;
        let cf = curvature(&build_projector_field(&model, theta_mesh, band..band + 1, 1e-6, Partials::Spectral)?)?;
        println!("band {band}: Chern {} (residue {:.1e}), ΔP from curvature {:.6}", c.integer, c.residue, cf.charge()[0]);
    }

    let pf = build_projector_field(&model, &mesh, 0..1, 1e-6, Partials::Spectral)?;
    let cf = curvature(&pf)?;
    let kato = kato_frame(&pf, &initial_k_frame(&pf)?)?;
    println!("ΔP from transported Berry phase: {:.6}", kato.ksv_polarization()?[0]);

    let initial: Vec<CMat> = (0..mesh.k.len()).map(|ki| pf.frame(mesh.node(0, ki)).clone()).collect();
    let (report, _) = theorem1_check(&model, &cf, &initial, &[0.1, 0.05], &StepOptions::default())?;
    for row in &report.rows {
        println!("ε = {:<5} ΔP from dynamics: {:.6} ({} steps)", row.eps, row.delta_p[0], row.steps);
    }
    Ok(())
}
