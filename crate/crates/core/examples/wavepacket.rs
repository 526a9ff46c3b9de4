//! A Gaussian wavepacket in the lowest band follows the semiclassical flow with the curvature
//! correction; dropping the correction leaves an O(ε) error.

use piezo::dynamics::StepOptions;
use piezo::mesh::{KMesh, Mesh, TMesh};
use piezo::model::{families, FiberModel, Lattice, Profile};
use piezo::semiclassics::{wavepacket_check, Envelope};

fn main() -> piezo::Result<()> {
    let lat = Lattice::cubic(1, 1.0);
    let path = families::two_harmonic_loop(lat.clone(), 1.0, 1.0, 2.0, Profile::Linear, false);
    let model = FiberModel::new(&path, 9);
    let mesh = Mesh::new(KMesh::uniform(&lat, 64), TMesh::periodic(64, 2.0));
    let env = Envelope::default_for(&mesh.k, vec![std::f64::consts::FRAC_PI_4]);

    let rep = wavepacket_check(&model, &mesh, 0, &env, &[0.1, 0.05], &StepOptions::default(), 1e-6)?;
    for run in &rep.runs {
        let last = run.times.len() - 1;
        println!(
            "ε = {:<5} ⟨Q⟩(T) = {:.6}, flow {:.6}, error {:.2e} (uncorrected {:.2e}), growth exponent {:.2}",
            run.eps,
            run.measured[last][0],
            run.predicted[last][0],
            run.error[last],
            run.error_uncorrected[last],
            run.growth_exponent
        );
    }
    println!("error ratio {:.2}, uncorrected {:.2}", rep.ratios[0], rep.ratios_uncorrected[0]);
    Ok(())
}
