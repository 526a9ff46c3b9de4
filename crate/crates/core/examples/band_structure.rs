//! Band energies of a sliding cosine along the zone, and the gap certificate over a full cycle.

use piezo::bands::{band_surfaces, certify_gap, DEFAULT_GAP_THRESHOLD};
use piezo::mesh::{KMesh, Mesh, TMesh};
use piezo::model::{families, FiberModel, Lattice, Profile};

fn main() -> piezo::Result<()> {
    let lat = Lattice::cubic(1, 1.0);
    let path = families::sliding_cosine(lat.clone(), 0.5, 1.0, Profile::Linear);
    let model = FiberModel::new(&path, 9);

    let mesh = Mesh::new(KMesh::uniform(&lat, 16), TMesh::open(2, 1.0));
    let surf = band_surfaces(&model, &mesh, 4)?;
    println!("{:>8} {:>10} {:>10} {:>10} {:>10}", "k", "E0", "E1", "E2", "E3");
    for ki in 0..mesh.k.len() {
        let e = &surf[mesh.node(0, ki)];
        println!("{:>8.4} {:>10.5} {:>10.5} {:>10.5} {:>10.5}", mesh.k.point(ki)[0], e[0], e[1], e[2], e[3]);
    }

    let cycle = Mesh::new(KMesh::uniform(&lat, 64), TMesh::periodic(32, 1.0));
    for m in 1..=3 {
        let cert = certify_gap(&model, &cycle, m, DEFAULT_GAP_THRESHOLD)?;
        println!("gap above band {}: {:.5} at k = {:.4}, t = {:.3}", m - 1, cert.min_gap, cert.at_k[0], cert.at_t);
    }
    Ok(())
}
