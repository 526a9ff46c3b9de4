//! Propagated macroscopic current against the curvature prediction for a shrinking adiabatic
//! parameter, on a loop with flat endpoints so that the system starts and ends at rest.

use piezo::dynamics::{theorem1_check, StepOptions};
use piezo::geometry::{build_projector_field, curvature, Partials};
use piezo::linalg::CMat;
use piezo::mesh::{KMesh, Mesh, TMesh};
use piezo::model::{families, FiberModel, Lattice, Profile};

fn main() -> piezo::Result<()> {
    let lat = Lattice::cubic(1, 1.0);
    let path = families::two_harmonic_loop(lat.clone(), 1.0, 1.0, 2.0, Profile::Flat, false);
    let model = FiberModel::new(&path, 9);
    let mesh = Mesh::new(KMesh::uniform(&lat, 64), TMesh::open(65, 2.0));
    let pf = build_projector_field(&model, &mesh, 0..1, 1e-6, Partials::Spectral)?;
    let cf = curvature(&pf)?;
    let initial: Vec<CMat> = (0..mesh.k.len()).map(|ki| pf.frame(mesh.node(0, ki)).clone()).collect();

    let (report, evolutions) = theorem1_check(&model, &cf, &initial, &[0.2, 0.1, 0.05], &StepOptions::default())?;
    println!("ΔP from curvature: {:.8}", report.delta_p_theta[0]);
    println!("{:>6} {:>7} {:>14} {:>12} {:>12}", "ε", "steps", "ΔP", "|ΔP − ΔP_Θ|", "max current");
    for row in &report.rows {
        println!("{:>6} {:>7} {:>14.8} {:>12.3e} {:>12.3e}", row.eps, row.steps, row.delta_p[0], row.charge_residual, row.current_residual);
    }
    println!("fitted slopes: charge {:.2}, current {:.2}", report.charge_slope, report.current_slope);
    println!("density defect at ε = 0.05: {:.1e}", evolutions[2].density_defect());
    Ok(())
}
