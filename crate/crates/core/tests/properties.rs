mod common;

use common::random_unitaries;
use piezo::config::parse_config;
use piezo::fit::loglog_slope;
use piezo::geometry::{build_projector_field, chern_number, curvature, GaugeFrame, Partials, ProjectorField};
use piezo::linalg::{max_abs, trace};
use piezo::mesh::{KMesh, Mesh, TMesh};
use piezo::model::{FiberModel, Lattice, PotentialPath, Profile, Schedule};
use piezo::run::num;
use piezo::semiclassics::cumulative_simpson;
use piezo::symmetry::check_time_reversal;
use piezo::C64;
use proptest::prelude::*;

fn line() -> Lattice {
    Lattice::cubic(1, 1.0)
}

fn amp() -> impl Strategy<Value = C64> {
    (-0.4..0.4f64, -0.4..0.4f64).prop_map(|(a, b)| C64::new(a, b))
}

/// A periodic loop built from the first two harmonics with random amplitudes.
fn random_path(real: bool) -> impl Strategy<Value = PotentialPath> {
    (amp(), amp(), amp(), amp(), 0.5..2.0f64).prop_map(move |(m1, c1, s2, m2, period)| {
        let base = if real { PotentialPath::real(line(), period) } else { PotentialPath::general(line(), period) };
        let cycle = |mean, cos, sin| Schedule::Cycle { mean, cos, sin, winding: 1, profile: Profile::Linear };
        base.with_harmonic(&[1], cycle(m1, c1, C64::new(0.0, 0.0))).with_harmonic(&[2], cycle(m2, C64::new(0.0, 0.0), s2))
    })
}

fn field(path: &PotentialPath, nk: usize, nt: usize) -> Option<ProjectorField> {
    let model = FiberModel::new(path, 4);
    let mesh = Mesh::new(KMesh::uniform(&line(), nk), TMesh::periodic(nt, path.period()));
    build_projector_field(&model, &mesh, 0..1, 1e-3, Partials::Spectral).ok()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn hamiltonian_is_hermitian_and_equivariant(path in random_path(true), k in -3.0..3.0f64, t in 0.0..1.0f64) {
        let model = FiberModel::new(&path, 4);
        let h = model.hamiltonian(&[k], t);
        prop_assert!(max_abs(&(&h - h.adjoint())) < 1e-14);
        let two_pi = 2.0 * std::f64::consts::PI;
        let shifted = model.hamiltonian(&[k + two_pi], t);
        let b = model.basis();
        for a in 0..b.len() {
            for c in 0..b.len() {
                let (Some(a1), Some(c1)) = (b.index(&[b.coords(a)[0] + 1]), b.index(&[b.coords(c)[0] + 1])) else { continue };
                prop_assert!((shifted[(a, c)] - h[(a1, c1)]).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn lone_complex_harmonics_are_flagged(path in random_path(false)) {
        let has_amplitude = path.terms().iter().any(|t| t.schedule.value(0.1, path.period()).norm() > 1e-3);
        prop_assert_eq!(path.hermiticity_defect() > 1e-12, has_amplitude);
    }

    #[test]
    fn projectors_are_rank_m_idempotents(path in random_path(true)) {
        let Some(pf) = field(&path, 8, 4) else { return Err(TestCaseError::reject("gap closed or plaquette ill-posed")) };
        for node in 0..pf.mesh().len() {
            let p = pf.projector(node);
            prop_assert!(max_abs(&(&p * &p - &p)) < 1e-12);
            prop_assert!((trace(&p).re - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn extended_curvature_is_antisymmetric(path in random_path(true)) {
        let Some(pf) = field(&path, 8, 4) else { return Err(TestCaseError::reject("gap closed or plaquette ill-posed")) };
        let cf = curvature(&pf).unwrap();
        for node in 0..pf.mesh().len() {
            for mu in 0..2 {
                prop_assert_eq!(cf.xi(node, mu, mu), 0.0);
                for nu in 0..2 {
                    prop_assert_eq!(cf.xi(node, mu, nu), -cf.xi(node, nu, mu));
                }
            }
        }
    }

    #[test]
    fn curvature_ignores_the_stored_gauge(path in random_path(true), seed in any::<u64>()) {
        let Some(pf) = field(&path, 8, 4) else { return Err(TestCaseError::reject("gap closed or plaquette ill-posed")) };
        let a = curvature(&pf).unwrap();
        let b = curvature(&pf.regauged(&random_unitaries(pf.mesh().len(), 1, seed))).unwrap();
        let scale = a.max_abs_theta().max(1.0);
        for node in 0..pf.mesh().len() {
            prop_assert!((a.theta(node)[0] - b.theta(node)[0]).abs() <= 1e-12 * scale);
        }
    }

    #[test]
    fn plaquette_flux_is_gauge_invariant(path in random_path(true), seed in any::<u64>()) {
        let Some(pf) = field(&path, 16, 16) else { return Err(TestCaseError::reject("gap closed or plaquette ill-posed")) };
        let Ok(plain) = chern_number(&pf, 0, 0) else { return Err(TestCaseError::reject("gap closed or plaquette ill-posed")) };
        let g = GaugeFrame::from_field(&pf).rotated(&random_unitaries(pf.mesh().len(), 1, seed));
        let rot = piezo::geometry::plaquette_chern(pf.mesh(), pf.basis(), 0, 0, |ti, ki| g.frame(ti, ki).clone()).unwrap();
        prop_assert!((plain.value - rot.value).abs() < 1e-10);
        prop_assert_eq!(plain.integer, rot.integer);
    }

    #[test]
    fn real_potentials_have_even_theta(path in random_path(true)) {
        let Some(pf) = field(&path, 8, 4) else { return Err(TestCaseError::reject("gap closed or plaquette ill-posed")) };
        let cf = curvature(&pf).unwrap();
        let tr = check_time_reversal(&pf, &cf, None).unwrap();
        prop_assert!(tr.theta <= 1e-10 * cf.max_abs_theta().max(1.0), "{}", tr.theta);
    }

    #[test]
    fn reversing_the_loop_reverses_the_charge(path in random_path(true)) {
        let (Some(a), Some(b)) = (field(&path, 16, 16), field(&path.reversed(), 16, 16)) else { return Err(TestCaseError::reject("gap closed or plaquette ill-posed")) };
        let (qa, qb) = (curvature(&a).unwrap().charge()[0], curvature(&b).unwrap().charge()[0]);
        prop_assert!((qa + qb).abs() < 1e-9, "{qa} {qb}");
    }

    #[test]
    fn simpson_is_exact_on_quadratics(a in -2.0..2.0f64, b in -2.0..2.0f64, c in -2.0..2.0f64, n in 3usize..40) {
        let h = 1.0 / (n - 1) as f64;
        let f: Vec<f64> = (0..n).map(|i| { let x = i as f64 * h; a + b * x + c * x * x }).collect();
        let out = cumulative_simpson(&f, h);
        for (i, v) in out.iter().enumerate() {
            let x = i as f64 * h;
            prop_assert!((v - (a * x + b * x * x / 2.0 + c * x * x * x / 3.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn loglog_slope_recovers_powers(p in 0.5..4.0f64, amp in 0.01..100.0f64) {
        let x: [f64; 4] = [0.2, 0.1, 0.05, 0.025];
        let y: Vec<f64> = x.iter().map(|e| amp * e.powf(p)).collect();
        prop_assert!((loglog_slope(&x, &y) - p).abs() < 1e-10);
    }

    #[test]
    fn csv_numbers_round_trip(x in any::<f64>().prop_filter("finite", |x| x.is_finite())) {
        prop_assert_eq!(num(x).parse::<f64>().unwrap().to_bits(), x.to_bits());
    }

    #[test]
    fn config_parser_never_panics(text in "[\\[\\]a-z_=\" 0-9.\n]{0,200}") {
        let _ = parse_config(&text);
    }

    #[test]
    fn validation_reports_every_bad_field(bad_mesh in 0usize..4, bad_t in 0usize..4) {
        let text = format!(
            "[potential]\nfamily = \"static\"\namplitude = 0.5\n[discretization]\nk_mesh = {bad_mesh}\nt_mesh = {bad_t}\n[physics]\nepsilons = [0.1, 0.1]\n"
        );
        match parse_config(&text) {
            Err(piezo::Error::Validation(v)) => prop_assert_eq!(v.len(), 3, "{:?}", v),
            other => prop_assert!(false, "{:?}", other.map(|_| ())),
        }
    }
}
