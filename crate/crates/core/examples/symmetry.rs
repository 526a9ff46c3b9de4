//! Inversion and time reversal force Θ to be odd and even in k; together they make it vanish.

use piezo::geometry::{build_projector_field, curvature, Partials};
use piezo::mesh::{KMesh, Mesh, TMesh};
use piezo::model::{families, FiberModel, Lattice, PotentialPath, Profile};
use piezo::symmetry::symmetry_report;

fn report(name: &str, path: &PotentialPath) -> piezo::Result<()> {
    let lat = path.lattice().clone();
    let model = FiberModel::new(path, 9);
    let mesh = Mesh::new(KMesh::uniform(&lat, 32), TMesh::periodic(16, path.period()));
    let pf = build_projector_field(&model, &mesh, 0..1, 1e-6, Partials::Spectral)?;
    let cf = curvature(&pf)?;
    let r = symmetry_report(path, &pf, &cf, None)?;
    println!("{name}: inversion {}, real {}, max |Θ| {:.2e}", r.flags.inversion, r.flags.real, cf.max_abs_theta());
    if let Some(i) = &r.inversion {
        println!("  inversion defects: projector {:.1e}, Θ {:.1e}", i.projector, i.theta);
    }
    if let Some(t) = &r.time_reversal {
        println!("  time-reversal defects: projector {:.1e}, Θ {:.1e}", t.projector, t.theta);
    }
    for (what, v) in &r.negative_controls {
        println!("  {what} (hypothesis fails): {v:.3}");
    }
    println!("  pass: {}", r.pass);
    Ok(())
}

fn main() -> piezo::Result<()> {
    let lat = Lattice::cubic(1, 1.0);
    report("symmetric loop", &families::two_harmonic_loop(lat.clone(), 1.0, 1.0, 2.0, Profile::Linear, true))?;
    report("sliding cosine", &families::sliding_cosine(lat, 0.5, 1.0, Profile::Linear))
}
