//! Super-adiabatic projectors of order 1 and 2: residuals shrink like powers of ε.

use piezo::geometry::{build_projector_field, initial_k_frame, kato_frame, Partials};
use piezo::mesh::{KMesh, Mesh, TMesh};
use piezo::model::{families, FiberModel, Lattice, Profile};
use piezo::superadiabatic::{nenciu_series, residual_slopes, DEFAULT_QUADRATURE};

fn main() -> piezo::Result<()> {
    let lat = Lattice::cubic(1, 1.0);
    let path = families::two_harmonic_loop(lat.clone(), 1.0, 1.0, 2.0, Profile::Flat, false);
    let model = FiberModel::new(&path, 9);
    let mesh = Mesh::new(KMesh::uniform(&lat, 16), TMesh::open(129, 2.0));
    let pf = build_projector_field(&model, &mesh, 0..1, 1e-6, Partials::Spectral)?;
    let frame = kato_frame(&pf, &initial_k_frame(&pf)?)?;

    for order in [1, 2] {
        let series = nenciu_series(&model, &mesh, 0..1, order, &frame, DEFAULT_QUADRATURE, 1e-6)?;
        println!("order {order} (recursion defect {:.1e})", series.order_defect());
        println!("{:>6} {:>12} {:>12} {:>12} {:>12}", "ε", "‖P̃²−P̃‖", "‖T̃T̃†−1‖", "commutator", "|H_eff−E|");
        let mut rows = Vec::new();
        for eps in [0.2, 0.1, 0.05] {
            let r = series.at(eps)?.residuals;
            println!("{:>6} {:>12.3e} {:>12.3e} {:>12.3e} {:>12.3e}", eps, r.idempotency, r.unitarity, r.commutator, r.effective_error);
            rows.push(r);
        }
        let s = residual_slopes(&rows);
        println!("slopes: idempotency {:.2}, unitarity {:.2}, effective {:.2}\n", s.idempotency, s.unitarity, s.effective_error);
    }
    Ok(())
}
