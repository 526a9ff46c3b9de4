//! Run configuration: a TOML document with `[section]` headers and `key = value` lines.
//!
//! ```toml
//! [run]
//! analyses = ["pump", "symmetry"]
//!
//! [lattice]
//! dimension = 1
//! constant = 1.0
//!
//! [potential]
//! family = "sliding_cosine"
//! period = 4.0
//! amplitude = 0.5
//!
//! [discretization]
//! n_cut = 9
//! k_mesh = 64
//! t_mesh = 64
//!
//! [physics]
//! bands = 1
//! epsilons = [0.2, 0.1, 0.05]
//! ```

use std::path::PathBuf;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dynamics::{Integrator, StepOptions};
use crate::error::{Error, Result};
use crate::geometry::Partials;
use crate::mesh::{KMesh, Mesh, TMesh};
use crate::model::{families, make_lattice, Lattice, PotentialPath, Profile, Schedule};
use crate::C64;

pub const FAMILIES: [&str; 6] = ["static", "sliding_cosine", "two_harmonic_loop", "ramp", "custom", "separable"];
pub const ANALYSES: [&str; 9] =
    ["bands", "curvature", "polarize", "pump", "superadiabatic", "dynamics", "semiclassics", "symmetry", "all"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Analysis {
    Bands,
    Curvature,
    Polarize,
    Pump,
    Superadiabatic,
    Dynamics,
    Semiclassics,
    Symmetry,
}

impl Analysis {
    pub const ALL: [Analysis; 8] = [
        Analysis::Bands,
        Analysis::Curvature,
        Analysis::Polarize,
        Analysis::Pump,
        Analysis::Superadiabatic,
        Analysis::Dynamics,
        Analysis::Semiclassics,
        Analysis::Symmetry,
    ];

    pub fn name(self) -> &'static str {
        ANALYSES[self as usize]
    }

    pub fn parse(s: &str) -> Option<Vec<Analysis>> {
        if s == "all" {
            return Some(Analysis::ALL.to_vec());
        }
        Analysis::ALL.iter().find(|a| a.name() == s).map(|a| vec![*a])
    }
}

/// A real number or a `[re, im]` pair.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Number {
    Real(f64),
    Complex([f64; 2]),
}

impl Number {
    pub fn value(self) -> C64 {
        match self {
            Number::Real(x) => C64::new(x, 0.0),
            Number::Complex([a, b]) => C64::new(a, b),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermSpec {
    pub g: Vec<i32>,
    /// constant | ramp | cycle
    pub kind: String,
    pub value: Option<Number>,
    pub from: Option<Number>,
    pub to: Option<Number>,
    pub mean: Option<Number>,
    pub cos: Option<Number>,
    pub sin: Option<Number>,
    pub winding: Option<i32>,
    pub profile: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialSpec {
    pub family: Option<String>,
    pub period: Option<f64>,
    pub profile: Option<String>,
    pub amplitude: Option<f64>,
    pub r: Option<f64>,
    pub w: Option<f64>,
    pub symmetric: Option<bool>,
    pub first: Option<[Number; 2]>,
    pub second: Option<[Number; 2]>,
    pub real: Option<bool>,
    pub term: Option<Vec<TermSpec>>,
    pub x: Option<Box<PotentialSpec>>,
    pub y: Option<Box<PotentialSpec>>,
    pub z: Option<Box<PotentialSpec>>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRun {
    analyses: Option<Vec<String>>,
    out: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLattice {
    dimension: Option<usize>,
    constant: Option<f64>,
    generators: Option<Vec<Vec<f64>>>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
enum Sizes {
    One(usize),
    Many(Vec<usize>),
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDiscretization {
    n_cut: Option<usize>,
    k_mesh: Option<Sizes>,
    t_mesh: Option<usize>,
    t_boundary: Option<String>,
    gap_threshold: Option<f64>,
    partials: Option<String>,
    quadrature: Option<usize>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPhysics {
    bands: Option<usize>,
    order: Option<usize>,
    epsilons: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDynamics {
    step_factor: Option<f64>,
    integrator: Option<String>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSemiclassics {
    band: Option<usize>,
    center: Option<Vec<f64>>,
    width: Option<f64>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(default)]
    run: RawRun,
    #[serde(default)]
    lattice: RawLattice,
    #[serde(default)]
    potential: PotentialSpec,
    #[serde(default)]
    discretization: RawDiscretization,
    #[serde(default)]
    physics: RawPhysics,
    #[serde(default)]
    dynamics: RawDynamics,
    #[serde(default)]
    semiclassics: RawSemiclassics,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TBoundary {
    Open,
    Periodic,
}

#[derive(Clone, Debug, Serialize)]
pub struct SemiclassicsSpec {
    pub band: usize,
    pub center: Vec<f64>,
    pub width: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunConfig {
    pub analyses: Vec<Analysis>,
    pub out: PathBuf,
    pub dimension: usize,
    pub constant: f64,
    pub generators: Option<Vec<Vec<f64>>>,
    pub potential: PotentialSpec,
    pub n_cut: usize,
    pub k_mesh: Vec<usize>,
    pub t_mesh: usize,
    pub t_boundary: TBoundary,
    pub gap_threshold: f64,
    pub partials: Partials,
    pub quadrature: usize,
    pub bands: usize,
    pub order: usize,
    pub epsilons: Vec<f64>,
    pub step: StepOptions,
    pub semiclassics: SemiclassicsSpec,
}

fn line_column(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map(|s| s.chars().count()).unwrap_or(0) + 1;
    (line, column)
}

fn profile(s: Option<&str>, field: &str, errs: &mut Vec<String>) -> Profile {
    match s.unwrap_or("linear") {
        "linear" => Profile::Linear,
        "flat" => Profile::Flat,
        other => {
            errs.push(format!("{field}: unknown profile '{other}' (expected linear or flat)"));
            Profile::Linear
        }
    }
}

fn require<T: Copy>(v: Option<T>, field: &str, errs: &mut Vec<String>, fallback: T) -> T {
    match v {
        Some(x) => x,
        None => {
            errs.push(format!("{field}: required for this family"));
            fallback
        }
    }
}

/// Builds the potential path described by a spec (validating as it goes).
fn build_path(spec: &PotentialSpec, lattice: &Lattice, prefix: &str, period_default: f64, errs: &mut Vec<String>) -> Option<PotentialPath> {
    let family = match spec.family.as_deref() {
        Some(f) => f,
        None => {
            errs.push(format!("{prefix}.family: required, one of {}", FAMILIES.join(", ")));
            return None;
        }
    };
    let period = spec.period.unwrap_or(period_default);
    if !(period > 0.0) {
        errs.push(format!("{prefix}.period: must be positive, got {period}"));
    }
    let prof = profile(spec.profile.as_deref(), &format!("{prefix}.profile"), errs);
    let one_d = |errs: &mut Vec<String>| {
        if lattice.dim() != 1 {
            errs.push(format!("{prefix}.family: '{family}' is one-dimensional; use 'separable' or 'custom' for dimension {}", lattice.dim()));
        }
    };
    let path = match family {
        "static" => {
            one_d(errs);
            families::static_cosine(lattice.clone(), require(spec.amplitude, &format!("{prefix}.amplitude"), errs, 0.0), period)
        }
        "sliding_cosine" => {
            one_d(errs);
            families::sliding_cosine(lattice.clone(), require(spec.amplitude, &format!("{prefix}.amplitude"), errs, 0.0), period, prof)
        }
        "two_harmonic_loop" => {
            one_d(errs);
            families::two_harmonic_loop(
                lattice.clone(),
                require(spec.r, &format!("{prefix}.r"), errs, 0.0),
                require(spec.w, &format!("{prefix}.w"), errs, 0.0),
                period,
                prof,
                spec.symmetric.unwrap_or(false),
            )
        }
        "ramp" => {
            one_d(errs);
            let z = [Number::Real(0.0); 2];
            let a = require(spec.first, &format!("{prefix}.first"), errs, z);
            let b = require(spec.second, &format!("{prefix}.second"), errs, z);
            families::ramp(lattice.clone(), period, (a[0].value(), a[1].value()), (b[0].value(), b[1].value()))
        }
        "custom" => {
            let mut p = if spec.real.unwrap_or(true) {
                PotentialPath::real(lattice.clone(), period)
            } else {
                PotentialPath::general(lattice.clone(), period)
            };
            let terms = spec.term.clone().unwrap_or_default();
            if terms.is_empty() {
                errs.push(format!("{prefix}.term: custom family needs at least one [[potential.term]]"));
            }
            for (i, t) in terms.iter().enumerate() {
                let f = format!("{prefix}.term[{i}]");
                if t.g.len() != lattice.dim() {
                    errs.push(format!("{f}.g: needs {} components", lattice.dim()));
                    continue;
                }
                let zero = Number::Real(0.0);
                let sched = match t.kind.as_str() {
                    "constant" => Schedule::Constant(require(t.value, &format!("{f}.value"), errs, zero).value()),
                    "ramp" => Schedule::Ramp {
                        from: require(t.from, &format!("{f}.from"), errs, zero).value(),
                        to: require(t.to, &format!("{f}.to"), errs, zero).value(),
                    },
                    "cycle" => Schedule::Cycle {
                        mean: t.mean.unwrap_or(zero).value(),
                        cos: t.cos.unwrap_or(zero).value(),
                        sin: t.sin.unwrap_or(zero).value(),
                        winding: t.winding.unwrap_or(1),
                        profile: profile(t.profile.as_deref(), &format!("{f}.profile"), errs),
                    },
                    other => {
                        errs.push(format!("{f}.kind: unknown '{other}' (expected constant, ramp or cycle)"));
                        continue;
                    }
                };
                if t.g.iter().all(|&x| x == 0) {
                    errs.push(format!("{f}.g: the mean potential G = 0 only shifts energies; leave it out"));
                    continue;
                }
                p = p.with_harmonic(&t.g, sched);
            }
            let defect = p.hermiticity_defect();
            if defect > 1e-12 {
                errs.push(format!("{prefix}.term: with real = false every c_G needs the partner c_{{-G}} = conj c_G (defect {defect:.3e})"));
            }
            p
        }
        "separable" => {
            let parts: Vec<&PotentialSpec> = [&spec.x, &spec.y, &spec.z].into_iter().flatten().map(|b| b.as_ref()).collect();
            if parts.len() != lattice.dim() {
                errs.push(format!("{prefix}: separable family needs one subtable per axis (x, y, z), found {} for dimension {}", parts.len(), lattice.dim()));
                return None;
            }
            let axis_lattice = Lattice::cubic(1, lattice.generators()[(0, 0)]);
            let built: Vec<PotentialPath> = parts
                .iter()
                .zip(["x", "y", "z"])
                .filter_map(|(p, n)| build_path(p, &axis_lattice, &format!("{prefix}.{n}"), period, errs))
                .collect();
            if built.len() != parts.len() {
                return None;
            }
            if built.iter().any(|p| (p.period() - period).abs() > 1e-12) {
                errs.push(format!("{prefix}: separable parts must share the period {period}"));
                return None;
            }
            PotentialPath::separable(&built)
        }
        other => {
            errs.push(format!("{prefix}.family: unknown family '{other}'; known families: {}", FAMILIES.join(", ")));
            return None;
        }
    };
    Some(path)
}

pub fn parse_config(text: &str) -> Result<RunConfig> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| {
        let (line, column) = e.span().map(|s| line_column(text, s.start)).unwrap_or((0, 0));
        Error::Parse { line, column, message: e.message().to_string() }
    })?;
    let mut errs = Vec::new();

    let mut analyses = Vec::new();
    for a in raw.run.analyses.clone().unwrap_or_else(|| vec!["all".into()]) {
        match Analysis::parse(&a) {
            Some(list) => analyses.extend(list),
            None => errs.push(format!("run.analyses: unknown analysis '{a}'; known: {}", ANALYSES.join(", "))),
        }
    }
    analyses.sort();
    analyses.dedup();

    let dimension = raw.lattice.dimension.unwrap_or(1);
    if !(1..=3).contains(&dimension) {
        errs.push(format!("lattice.dimension: must be 1, 2 or 3, got {dimension}"));
    }
    let constant = raw.lattice.constant.unwrap_or(1.0);
    if !(constant > 0.0) {
        errs.push(format!("lattice.constant: must be positive, got {constant}"));
    }
    let dimension = dimension.clamp(1, 3);
    let n_cut = raw.discretization.n_cut.unwrap_or(9);
    if n_cut < 1 {
        errs.push("discretization.n_cut: must be at least 1".into());
    }
    let k_mesh = match raw.discretization.k_mesh.clone() {
        None => vec![64; dimension],
        Some(Sizes::One(n)) => vec![n; dimension],
        Some(Sizes::Many(v)) => v,
    };
    if k_mesh.len() != dimension {
        errs.push(format!("discretization.k_mesh: needs {dimension} sizes, got {}", k_mesh.len()));
    }
    if k_mesh.iter().any(|&n| n < 4) {
        errs.push(format!("discretization.k_mesh: every size must be ≥ 4, got {k_mesh:?}"));
    }
    let t_mesh = raw.discretization.t_mesh.unwrap_or(64);
    if t_mesh < 4 {
        errs.push(format!("discretization.t_mesh: must be ≥ 4, got {t_mesh}"));
    }
    let t_boundary = match raw.discretization.t_boundary.as_deref().unwrap_or("open") {
        "open" => TBoundary::Open,
        "periodic" => TBoundary::Periodic,
        other => {
            errs.push(format!("discretization.t_boundary: unknown '{other}' (expected open or periodic)"));
            TBoundary::Open
        }
    };
    let gap_threshold = raw.discretization.gap_threshold.unwrap_or(crate::bands::DEFAULT_GAP_THRESHOLD);
    if !(gap_threshold > 0.0) {
        errs.push(format!("discretization.gap_threshold: must be > 0, got {gap_threshold}"));
    }
    let partials = match raw.discretization.partials.as_deref().unwrap_or("spectral") {
        "spectral" => Partials::Spectral,
        "central_difference" => Partials::CentralDifference,
        other => {
            errs.push(format!("discretization.partials: unknown '{other}' (expected spectral or central_difference)"));
            Partials::Spectral
        }
    };
    let quadrature = raw.discretization.quadrature.unwrap_or(crate::superadiabatic::DEFAULT_QUADRATURE);
    let bands = raw.physics.bands.unwrap_or(1);
    if bands < 1 {
        errs.push("physics.bands: must be at least 1".into());
    }
    if bands >= (2 * n_cut + 1).pow(dimension as u32) {
        errs.push(format!("physics.bands: {bands} bands do not fit into the plane-wave basis"));
    }
    let order = raw.physics.order.unwrap_or(1);
    if order > 3 {
        errs.push(format!("physics.order: at most 3 is supported, got {order}"));
    }
    let epsilons = raw.physics.epsilons.clone().unwrap_or_else(|| vec![0.2, 0.1, 0.05]);
    if epsilons.is_empty() {
        errs.push("physics.epsilons: needs at least one value".into());
    }
    if epsilons.iter().any(|&e| !(e > 0.0)) {
        errs.push(format!("physics.epsilons: values must be positive, got {epsilons:?}"));
    }
    if epsilons.windows(2).any(|w| w[1] >= w[0]) {
        errs.push(format!("physics.epsilons: must be strictly decreasing, got {epsilons:?}"));
    }
    let step_factor = raw.dynamics.step_factor.unwrap_or(0.1);
    if !(step_factor > 0.0 && step_factor <= 1.0) {
        errs.push(format!("dynamics.step_factor: must lie in (0, 1], got {step_factor}"));
    }
    let integrator = match raw.dynamics.integrator.as_deref().unwrap_or("cf4") {
        "cf4" => Integrator::CommutatorFree4,
        "midpoint" => Integrator::Midpoint,
        other => {
            errs.push(format!("dynamics.integrator: unknown '{other}' (expected cf4 or midpoint)"));
            Integrator::CommutatorFree4
        }
    };
    let sc_band = raw.semiclassics.band.unwrap_or(0);
    let center = raw.semiclassics.center.clone().unwrap_or_else(|| vec![std::f64::consts::FRAC_PI_4; dimension]);
    if center.len() != dimension {
        errs.push(format!("semiclassics.center: needs {dimension} components"));
    }
    if let Some(w) = raw.semiclassics.width {
        if !(w > 0.0) {
            errs.push(format!("semiclassics.width: must be positive, got {w}"));
        }
    }

    let cfg = RunConfig {
        analyses,
        out: raw.run.out.clone().unwrap_or_else(|| PathBuf::from("out")),
        dimension,
        constant,
        generators: raw.lattice.generators.clone(),
        potential: raw.potential.clone(),
        n_cut,
        k_mesh,
        t_mesh,
        t_boundary,
        gap_threshold,
        partials,
        quadrature,
        bands,
        order,
        epsilons,
        step: StepOptions { step_factor, integrator, steps: None },
        semiclassics: SemiclassicsSpec { band: sc_band, center, width: raw.semiclassics.width },
    };
    let lattice = cfg.lattice();
    match &lattice {
        Ok(lat) => {
            if let Some(path) = build_path(&cfg.potential, lat, "potential", 1.0, &mut errs) {
                if t_boundary == TBoundary::Periodic && !path.is_periodic() {
                    errs.push("discretization.t_boundary: periodic meshes need a periodic schedule".into());
                }
            }
        }
        Err(e) => errs.push(format!("lattice.generators: {e}")),
    }
    if errs.is_empty() {
        Ok(cfg)
    } else {
        Err(Error::Validation(errs))
    }
}

impl RunConfig {
    pub fn lattice(&self) -> Result<Lattice> {
        match &self.generators {
            Some(rows) => {
                if rows.len() != self.dimension || rows.iter().any(|r| r.len() != self.dimension) {
                    return Err(Error::Validation(vec![format!(
                        "lattice.generators: needs {d}×{d} entries",
                        d = self.dimension
                    )]));
                }
                let m = DMatrix::from_fn(self.dimension, self.dimension, |i, j| rows[i][j]);
                make_lattice(&m)
            }
            None => Ok(Lattice::cubic(self.dimension, self.constant)),
        }
    }

    pub fn path(&self) -> Result<PotentialPath> {
        let mut errs = Vec::new();
        let p = build_path(&self.potential, &self.lattice()?, "potential", 1.0, &mut errs);
        match p {
            Some(p) if errs.is_empty() => Ok(p),
            _ => Err(Error::Validation(errs)),
        }
    }

    pub fn mesh(&self) -> Result<Mesh> {
        let lat = self.lattice()?;
        let period = self.path()?.period();
        let t = match self.t_boundary {
            TBoundary::Open => TMesh::open(self.t_mesh, period),
            TBoundary::Periodic => TMesh::periodic(self.t_mesh, period),
        };
        Ok(Mesh::new(KMesh::new(&lat, &self.k_mesh), t))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "[potential]\nfamily = \"sliding_cosine\"\namplitude = 0.5\n";

    #[test]
    fn minimal_config_gets_defaults() {
        let c = parse_config(MINIMAL).unwrap();
        assert_eq!(c.analyses.len(), 8);
        assert_eq!((c.n_cut, c.t_mesh, c.bands, c.order), (9, 64, 1, 1));
        assert_eq!(c.k_mesh, vec![64]);
        assert_eq!(c.epsilons, vec![0.2, 0.1, 0.05]);
        assert!(c.path().unwrap().is_periodic());
    }

    #[test]
    fn increasing_epsilons_are_rejected() {
        let text = format!("{MINIMAL}[physics]\nepsilons = [0.05, 0.1]\n");
        match parse_config(&text) {
            Err(Error::Validation(v)) => assert!(v.iter().any(|m| m.starts_with("physics.epsilons"))),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_family_lists_known_ones() {
        match parse_config("[potential]\nfamily = \"kronig_penney\"\n") {
            Err(Error::Validation(v)) => {
                assert_eq!(v.len(), 1);
                assert!(v[0].contains("sliding_cosine") && v[0].contains("kronig_penney"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn all_failures_reported_together() {
        let text = "[potential]\nfamily = \"two_harmonic_loop\"\n[discretization]\nk_mesh = 2\ngap_threshold = 0.0\n";
        match parse_config(text) {
            Err(Error::Validation(v)) => assert_eq!(v.len(), 4, "{v:?}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn general_potentials_need_partners() {
        let lone = "[potential]\nfamily = \"custom\"\nreal = false\n[[potential.term]]\ng = [1]\nkind = \"constant\"\nvalue = 0.3\n";
        assert!(matches!(parse_config(lone), Err(Error::Validation(v)) if v[0].contains("partner")));
        let paired = format!("{lone}[[potential.term]]\ng = [-1]\nkind = \"constant\"\nvalue = 0.3\n");
        assert!(parse_config(&paired).is_ok());
    }

    #[test]
    fn syntax_errors_carry_position() {
        match parse_config("[potential]\nfamily = \"static\"\namplitude = = 1\n") {
            Err(Error::Parse { line, column, .. }) => assert_eq!((line, column), (3, 13)),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_config("[potential]\ncolour = 1\n"), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn separable_and_custom_families() {
        let text = r#"
[lattice]
dimension = 2
[potential]
family = "separable"
period = 2.0
[potential.x]
family = "two_harmonic_loop"
r = 1.0
w = 1.0
[potential.y]
family = "custom"
[[potential.y.term]]
g = [1]
kind = "cycle"
cos = 0.5
sin = [0.0, -0.5]
"#;
        let c = parse_config(text).unwrap();
        let p = c.path().unwrap();
        assert_eq!(p.lattice().dim(), 2);
        assert_eq!(c.k_mesh, vec![64, 64]);
    }
}
