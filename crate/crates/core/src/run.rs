//! Runs the analyses requested by a [`RunConfig`] and collects CSV tables and a JSON report.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use serde::Serialize;
use serde_json::{json, Value};

use crate::bands::{band_surfaces, certify_gap};
use crate::config::{Analysis, RunConfig};
use crate::dynamics::{evolve_frames, superadiabatic_error, theorem1_check, transported_charge, CurrentTrace, Theorem1Report};
use crate::error::{Error, Result};
use crate::geometry::{
    build_projector_field, chern_number, connection_and_potential, curvature, initial_k_frame, kato_frame, ksv_polarization,
    representation_residual, CurvatureField, GaugeFrame, ProjectorField,
};
use crate::linalg::CMat;
use crate::mesh::Mesh;
use crate::model::{FiberModel, PotentialPath};
use crate::semiclassics::{wavepacket_check, Envelope};
use crate::superadiabatic::{nenciu_series, residual_slopes};
use crate::symmetry::symmetry_report;

pub const SCHEMA_VERSION: u32 = 1;

/// One numeric check with optional bounds.
#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub pass: bool,
}

impl Check {
    pub fn at_most(name: impl Into<String>, value: f64, upper: f64) -> Check {
        Check { name: name.into(), value, lower: None, upper: Some(upper), pass: value <= upper }
    }

    pub fn at_least(name: impl Into<String>, value: f64, lower: f64) -> Check {
        Check { name: name.into(), value, lower: Some(lower), upper: None, pass: value >= lower }
    }

    pub fn within(name: impl Into<String>, value: f64, lower: f64, upper: f64) -> Check {
        Check { name: name.into(), value, lower: Some(lower), upper: Some(upper), pass: value >= lower && value <= upper }
    }

    /// Passes when the value lies outside [lower, upper] (negative controls).
    pub fn outside(name: impl Into<String>, value: f64, lower: f64, upper: f64) -> Check {
        Check { name: name.into(), value, lower: Some(lower), upper: Some(upper), pass: !(value >= lower && value <= upper) }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct AnalysisResult {
    pub results: Value,
    pub checks: Vec<Check>,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub version: &'static str,
    pub commit: &'static str,
    pub config: RunConfig,
    pub analyses: BTreeMap<String, AnalysisResult>,
    pub failures: Vec<String>,
    pub pass: bool,
}

/// A CSV table; every cell is preformatted.
#[derive(Clone, Debug, Default)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(header: Vec<String>) -> Table {
        Table { header, rows: Vec::new() }
    }

    pub fn render(&self) -> String {
        let mut s = self.header.join(",");
        s.push('\n');
        for r in &self.rows {
            s.push_str(&r.join(","));
            s.push('\n');
        }
        s
    }
}

/// Fixed 17-significant-digit formatting.
pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

fn nums(xs: &[f64]) -> impl Iterator<Item = String> + '_ {
    xs.iter().map(|&x| num(x))
}

fn axes(prefix: &str, d: usize) -> Vec<String> {
    (0..d).map(|j| format!("{prefix}_{j}")).collect()
}

pub struct RunOutput {
    pub report: RunReport,
    pub tables: BTreeMap<String, Table>,
    pub timings: BTreeMap<String, f64>,
}

impl RunOutput {
    /// Writes `report.json`, `timings.json` and one CSV per table into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let ctx = |e: std::io::Error| Error::from(e).context(format!("writing into {}", dir.display()));
        std::fs::create_dir_all(dir).map_err(ctx)?;
        for (name, t) in &self.tables {
            std::fs::write(dir.join(name), t.render()).map_err(ctx)?;
        }
        let mut report = serde_json::to_string_pretty(&self.report)?;
        report.push('\n');
        std::fs::write(dir.join("report.json"), report).map_err(ctx)?;
        let mut timings = serde_json::to_string_pretty(&self.timings)?;
        timings.push('\n');
        std::fs::write(dir.join("timings.json"), timings).map_err(ctx)?;
        Ok(())
    }
}

struct Runner<'a> {
    cfg: &'a RunConfig,
    path: PotentialPath,
    model: FiberModel,
    mesh: Mesh,
    field: Option<ProjectorField>,
    curv: Option<CurvatureField>,
    kato: Option<GaugeFrame>,
    thm1: Option<(Theorem1Report, Vec<CurrentTrace>)>,
    tables: BTreeMap<String, Table>,
}

impl<'a> Runner<'a> {
    fn ensure_field(&mut self) -> Result<()> {
        if self.field.is_none() {
            let pf = build_projector_field(&self.model, &self.mesh, 0..self.cfg.bands, self.cfg.gap_threshold, self.cfg.partials)
                .map_err(|e| e.context("projector field"))?;
            self.curv = Some(curvature(&pf).map_err(|e| e.context("curvature"))?);
            self.field = Some(pf);
        }
        Ok(())
    }

    fn field(&self) -> &ProjectorField {
        self.field.as_ref().expect("field computed")
    }

    fn curv(&self) -> &CurvatureField {
        self.curv.as_ref().expect("curvature computed")
    }

    fn ensure_kato(&mut self) -> Result<()> {
        self.ensure_field()?;
        if self.kato.is_none() {
            let pf = self.field();
            let init = initial_k_frame(pf).map_err(|e| e.context("initial k-frame"))?;
            self.kato = Some(kato_frame(pf, &init).map_err(|e| e.context("Kato transport"))?);
        }
        Ok(())
    }

    fn ensure_thm1(&mut self) -> Result<()> {
        self.ensure_field()?;
        if self.thm1.is_none() {
            let nk = self.mesh.k.len();
            let initial: Vec<CMat> = (0..nk).map(|ki| self.field().frame(self.mesh.node(0, ki)).clone()).collect();
            let (report, evs) = theorem1_check(&self.model, self.curv(), &initial, &self.cfg.epsilons, &self.cfg.step)
                .map_err(|e| e.context("dynamics ε-sweep"))?;
            let traces = evs.iter().map(|ev| ev.current_trace()).collect();
            self.thm1 = Some((report, traces));
        }
        Ok(())
    }

    fn node_coords(&self, node: usize) -> Vec<String> {
        let (ti, ki) = self.mesh.split(node);
        std::iter::once(num(self.mesh.t.time(ti))).chain(nums(&self.mesh.k.point(ki)).collect::<Vec<_>>()).collect()
    }

    fn bands(&mut self) -> Result<AnalysisResult> {
        let m = self.cfg.bands;
        let count = (m + 1).min(self.model.size());
        let surf = band_surfaces(&self.model, &self.mesh, count).map_err(|e| e.context("band surfaces"))?;
        let d = self.mesh.k.dim();
        let mut header = vec!["t".to_string()];
        header.extend(axes("k", d));
        header.extend(axes("E", count));
        let mut t = Table::new(header);
        for (node, e) in surf.iter().enumerate() {
            let mut row = self.node_coords(node);
            row.extend(nums(e));
            t.rows.push(row);
        }
        self.tables.insert("bands.csv".into(), t);
        let cert = certify_gap(&self.model, &self.mesh, m, self.cfg.gap_threshold).map_err(|e| e.context("gap certificate"))?;
        let checks = vec![Check::at_least("gap", cert.min_gap, self.cfg.gap_threshold)];
        Ok(finish(json!({ "gap": cert }), checks))
    }

    fn curvature(&mut self) -> Result<AnalysisResult> {
        self.ensure_field()?;
        let cf = self.curv();
        let d = cf.dim();
        let mut header = vec!["t".to_string()];
        header.extend(axes("k", d));
        header.extend(axes("theta", d));
        for j in 0..d {
            for l in j + 1..d {
                header.push(format!("omega_{j}{l}"));
            }
        }
        let mut t = Table::new(header);
        for node in 0..self.mesh.len() {
            let mut row = self.node_coords(node);
            row.extend(nums(&cf.theta(node)));
            for j in 0..d {
                for l in j + 1..d {
                    row.push(num(cf.omega(node, j, l)));
                }
            }
            t.rows.push(row);
        }
        let norm = (2.0 * std::f64::consts::PI).powi(d as i32);
        let mut header = vec!["t".to_string()];
        header.extend(axes("current", d));
        let mut cur = Table::new(header);
        for ti in 0..self.mesh.t.len() {
            let z: Vec<f64> = cf.zone_integral(ti).into_iter().map(|x| -x / norm).collect();
            cur.rows.push(std::iter::once(num(self.mesh.t.time(ti))).chain(nums(&z)).collect());
        }
        let max_theta = cf.max_abs_theta();
        let results_base = json!({
            "max_abs_theta": max_theta,
            "theta_integral": cf.theta_integral(),
            "delta_p_theta": cf.charge(),
        });
        self.tables.insert("curvature.csv".into(), t);
        self.tables.insert("adiabatic_current.csv".into(), cur);
        // the representation identity needs a smooth transported gauge, which may not exist
        let representation = match self.ensure_kato() {
            Ok(()) => {
                let conn = connection_and_potential(self.kato.as_ref().unwrap());
                match conn.and_then(|c| representation_residual(self.curv(), &c)) {
                    Ok(r) => json!(r),
                    Err(e) => json!(format!("unavailable: {e}")),
                }
            }
            Err(e) => json!(format!("unavailable: {e}")),
        };
        let mut results = results_base;
        results["representation_residual"] = representation;
        let mut checks = Vec::new();
        if self.path.is_static() {
            checks.push(Check::at_most("static_max_abs_theta", max_theta, 1e-12));
        }
        Ok(finish(results, checks))
    }

    fn polarize(&mut self) -> Result<AnalysisResult> {
        self.ensure_kato()?;
        let kf = self.kato.as_ref().unwrap();
        let theta = self.curv().charge();
        let ksv = kf.ksv_polarization().map_err(|e| e.context("KSV polarization"))?;
        let endpoint = ksv_polarization(kf.k_mesh(), self.field().basis(), &kf.slice(0), &kf.slice(kf.slices() - 1))
            .map_err(|e| e.context("endpoint KSV polarization"))?;
        let mut checks = Vec::new();
        for j in 0..theta.len() {
            checks.push(Check::at_most(format!("ksv_vs_theta_{j}"), (ksv[j] - theta[j]).abs(), 1e-3));
        }
        let results = json!({
            "delta_p_theta": theta,
            "delta_p_ksv": ksv,
            "delta_p_ksv_endpoint": endpoint,
            "kato_time_connection": kf.time_connection(),
        });
        Ok(finish(results, checks))
    }

    fn pump(&mut self) -> Result<AnalysisResult> {
        if !self.path.is_periodic() {
            return Err(Error::MeshMismatch("pump analysis needs a periodic schedule".into()).context("pump"));
        }
        self.ensure_kato()?;
        self.ensure_thm1()?;
        let d = self.mesh.k.dim();
        let theta = self.curv().charge();
        let ksv = self.kato.as_ref().unwrap().ksv_polarization().map_err(|e| e.context("KSV polarization"))?;
        let mut checks = Vec::new();
        let mut cherns = BTreeMap::new();
        let mut windows = vec![(format!("bands_0_{}", self.cfg.bands), None)];
        if self.cfg.bands > 1 {
            windows.extend((0..self.cfg.bands).map(|m| (format!("band_{m}"), Some(m))));
        }
        // along a cubic lattice ΔP_j = −C_j / a^{d−1}
        let cubic_scale = if self.cfg.generators.is_none() { Some(self.cfg.constant.powi(d as i32 - 1)) } else { None };
        for (name, band) in windows {
            let single;
            let pf = match band {
                None => self.field(),
                Some(m) => {
                    single = build_projector_field(&self.model, &self.mesh, m..m + 1, self.cfg.gap_threshold, self.cfg.partials)
                        .map_err(|e| e.context(format!("projector field of band {m}")))?;
                    &single
                }
            };
            let mut per_axis = Vec::new();
            for axis in 0..d {
                let c = chern_number(pf, axis, 0).map_err(|e| e.context(format!("Chern number of {name} along axis {axis}")))?;
                checks.push(Check::at_most(format!("chern_residue_{name}_{axis}"), c.residue, 0.05));
                if band.is_none() {
                    if let Some(s) = cubic_scale {
                        checks.push(Check::at_most(format!("chern_vs_theta_{axis}"), (theta[axis] + c.integer as f64 / s).abs(), 1e-3));
                    }
                }
                per_axis.push(c);
            }
            cherns.insert(name, per_axis);
        }
        let (report, _) = self.thm1.as_ref().unwrap();
        for j in 0..d {
            checks.push(Check::at_most(format!("ksv_vs_theta_{j}"), (ksv[j] - theta[j]).abs(), 1e-3));
        }
        if let Some(last) = report.rows.last() {
            for j in 0..d {
                checks.push(Check::at_most(format!("dynamics_vs_theta_{j}"), (last.delta_p[j] - theta[j]).abs(), 1e-2));
            }
        }
        let triples: Vec<Value> = report
            .rows
            .iter()
            .map(|r| json!({ "eps": r.eps, "delta_p_theta": theta, "delta_p_ksv": ksv, "delta_p_dyn": r.delta_p }))
            .collect();
        let mut t = Table::new(vec!["eps".into(), "route".into(), "component".into(), "delta_p".into()]);
        for r in &report.rows {
            for (route, v) in [("theta", &theta), ("ksv", &ksv), ("dynamics", &r.delta_p)] {
                for (j, x) in v.iter().enumerate() {
                    t.rows.push(vec![num(r.eps), route.into(), j.to_string(), num(*x)]);
                }
            }
        }
        self.tables.insert("polarization.csv".into(), t);
        Ok(finish(json!({ "chern": cherns, "polarization": triples }), checks))
    }

    fn dynamics(&mut self) -> Result<AnalysisResult> {
        self.ensure_thm1()?;
        let d = self.mesh.k.dim();
        let (report, traces) = self.thm1.as_ref().unwrap();
        let mut header = vec!["eps".to_string(), "t".to_string()];
        header.extend(axes("pdot", d));
        let mut t = Table::new(header);
        let mut checks = Vec::new();
        for (row, tr) in report.rows.iter().zip(traces) {
            for (s, time) in tr.times.iter().enumerate() {
                t.rows.push([num(row.eps), num(*time)].into_iter().chain(nums(&tr.pdot[s])).collect());
            }
            let again = transported_charge(tr);
            let gap = again.iter().zip(&tr.charge).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            checks.push(Check::at_most(format!("trapezoid_identity_eps_{}", row.eps), gap, 1e-12));
        }
        let floor = 1e-8;  // current residuals carry the 1/ε factor
        let noisy = report.rows.iter().any(|r| r.charge_residual > floor || r.current_residual > floor);
        if report.rows.len() >= 2 && noisy {
            checks.push(Check::at_least("charge_slope", report.charge_slope, 1.5));
            checks.push(Check::at_least("current_slope", report.current_slope, 0.9));
        } else {
            for r in &report.rows {
                checks.push(Check::at_most(format!("current_residual_eps_{}", r.eps), r.current_residual, floor));
            }
        }
        let value = serde_json::to_value(report)?;
        self.tables.insert("currents.csv".into(), t);
        Ok(finish(value, checks))
    }

    fn superadiabatic(&mut self) -> Result<AnalysisResult> {
        self.ensure_kato()?;
        let nk = self.mesh.k.len();
        let mut t = Table::new(
            [
                "order", "eps", "idempotency", "rectification", "distance_to_p0", "unitarity", "intertwiner_defect", "commutator",
                "effective_error", "effective_hermiticity", "endpoint", "dynamics_error",
            ]
            .map(String::from)
            .to_vec(),
        );
        let mut checks = Vec::new();
        let mut per_order = Vec::new();
        for n in 1..=self.cfg.order.max(1) {
            let series = nenciu_series(
                &self.model,
                &self.mesh,
                0..self.cfg.bands,
                n,
                self.kato.as_ref().unwrap(),
                self.cfg.quadrature,
                self.cfg.gap_threshold,
            )
            .map_err(|e| e.context(format!("Nenciu series of order {n}")))?;
            let mut rows = Vec::new();
            let mut dyn_err = Vec::new();
            for &eps in &self.cfg.epsilons {
                let ctx = |e: Error| e.context(format!("super-adiabatic order {n}, ε = {eps}"));
                let sad = series.at(eps).map_err(ctx)?;
                let initial: Vec<CMat> = (0..nk).map(|ki| sad.intertwiners[self.mesh.node(0, ki)].adjoint()).collect();
                let ev = evolve_frames(&self.model, &self.mesh, eps, &initial, &self.cfg.step).map_err(ctx)?;
                let de = superadiabatic_error(&ev, &sad).map_err(ctx)?;
                let r = &sad.residuals;
                t.rows.push(
                    std::iter::once(n.to_string())
                        .chain(nums(&[
                            eps,
                            r.idempotency,
                            r.rectification,
                            r.distance_to_p0,
                            r.unitarity,
                            r.intertwiner_defect,
                            r.commutator,
                            r.effective_error,
                            r.effective_hermiticity,
                            r.endpoint,
                            de,
                        ]))
                        .collect(),
                );
                rows.push(sad.residuals);
                dyn_err.push(de);
            }
            let slopes = residual_slopes(&rows);
            let dyn_slope = crate::fit::loglog_slope(&self.cfg.epsilons, &dyn_err);
            if rows.len() >= 2 {
                let nf = n as f64;
                let eps = &self.cfg.epsilons;
                let col = |f: fn(&crate::superadiabatic::SuperAdiabaticResiduals) -> f64| rows.iter().map(f).collect::<Vec<_>>();
                checks.push(slope_check(&format!("idempotency_n{n}"), eps, &col(|r| r.idempotency), slopes.idempotency, nf + 0.5));
                checks.push(slope_check(&format!("unitarity_n{n}"), eps, &col(|r| r.unitarity), slopes.unitarity, nf + 0.5));
                checks.push(slope_check(&format!("dynamics_n{n}"), eps, &dyn_err, dyn_slope, nf - 0.5));
                if self.cfg.bands == 1 {
                    checks.push(slope_check(&format!("effective_n{n}"), eps, &col(|r| r.effective_error), slopes.effective_error, 1.5));
                }
            }
            per_order.push(json!({
                "order": n,
                "order_defect": series.order_defect(),
                "residuals": rows,
                "dynamics_error": dyn_err,
                "slopes": slopes,
                "dynamics_slope": dyn_slope,
            }));
        }
        self.tables.insert("superadiabatic.csv".into(), t);
        Ok(finish(json!({ "orders": per_order }), checks))
    }

    fn semiclassics(&mut self) -> Result<AnalysisResult> {
        let sc = &self.cfg.semiclassics;
        let mut env = Envelope::default_for(&self.mesh.k, sc.center.clone());
        if let Some(w) = sc.width {
            env.width = w;
        }
        let rep = wavepacket_check(&self.model, &self.mesh, sc.band, &env, &self.cfg.epsilons, &self.cfg.step, self.cfg.gap_threshold)
            .map_err(|e| e.context(format!("wavepacket in band {}", sc.band)))?;
        let d = self.mesh.k.dim();
        let mut header = vec!["eps".to_string(), "t".to_string()];
        header.extend(axes("measured", d));
        header.extend(axes("predicted", d));
        header.extend(axes("uncorrected", d));
        let mut t = Table::new(header);
        let mut checks = Vec::new();
        for run in &rep.runs {
            for (i, time) in run.times.iter().enumerate() {
                t.rows.push(
                    [num(run.eps), num(*time)]
                        .into_iter()
                        .chain(nums(&run.measured[i]))
                        .chain(nums(&run.predicted[i]))
                        .chain(nums(&run.uncorrected[i]))
                        .collect(),
                );
            }
            checks.push(Check::at_most(format!("growth_exponent_eps_{}", run.eps), run.growth_exponent, 2.3));
        }
        for (i, (r, u)) in rep.ratios.iter().zip(&rep.ratios_uncorrected).enumerate() {
            let q = (self.cfg.epsilons[i] / self.cfg.epsilons[i + 1]).powi(2);
            let end = |run: &crate::semiclassics::WavepacketRun, unc: bool| {
                *(if unc { &run.error_uncorrected } else { &run.error }).last().unwrap_or(&0.0)
            };
            let pair = &rep.runs[i..i + 2];
            let err = pair.iter().map(|x| end(x, false)).fold(0.0, f64::max);
            if err <= NOISE_FLOOR {
                checks.push(Check::at_most(format!("error_floor_{i}"), err, NOISE_FLOOR));
            } else {
                checks.push(Check::within(format!("error_ratio_{i}"), *r, 0.75 * q, 1.25 * q));
            }
            // without curvature the two flows coincide and there is nothing to control
            if pair.iter().any(|x| end(x, true) > NOISE_FLOOR) {
                checks.push(Check::outside(format!("uncorrected_ratio_{i}"), *u, 0.75 * q, 1.25 * q));
            }
        }
        self.tables.insert("trajectories.csv".into(), t);
        Ok(finish(serde_json::to_value(&rep)?, checks))
    }

    fn symmetry(&mut self) -> Result<AnalysisResult> {
        self.ensure_field()?;
        let rep = symmetry_report(&self.path, self.field(), self.curv(), None).map_err(|e| e.context("symmetry"))?;
        let th = &rep.thresholds;
        let mut checks = Vec::new();
        if let Some(inv) = &rep.inversion {
            checks.push(Check::at_most("inversion_projector", inv.projector, th.projector));
            checks.push(Check::at_most("inversion_theta", inv.theta, th.theta));
            for (j, x) in self.curv().charge().into_iter().enumerate() {
                checks.push(Check::at_most(format!("inversion_delta_p_{j}"), x.abs(), 1e-10));
            }
        }
        if let Some(tr) = &rep.time_reversal {
            checks.push(Check::at_most("time_reversal_projector", tr.projector, th.projector));
            checks.push(Check::at_most("time_reversal_theta", tr.theta, th.theta));
            if let Some(o) = tr.omega {
                checks.push(Check::at_most("time_reversal_omega", o, th.omega));
            }
        }
        if let Some(m) = rep.combined_max_theta {
            checks.push(Check::at_most("combined_max_abs_theta", m, th.theta));
        }
        Ok(finish(serde_json::to_value(&rep)?, checks))
    }
}

/// Residuals at or below this level are roundoff; slopes fitted through them mean nothing.
pub const NOISE_FLOOR: f64 = 1e-10;

/// Slope check, or a plain floor check when every value is already roundoff.
fn slope_check(name: &str, eps: &[f64], values: &[f64], slope: f64, min_slope: f64) -> Check {
    let worst = values.iter().cloned().fold(0.0, f64::max);
    if worst <= NOISE_FLOOR {
        Check::at_most(format!("{name}_floor"), worst, NOISE_FLOOR)
    } else {
        debug_assert_eq!(eps.len(), values.len());
        Check::at_least(format!("{name}_slope"), slope, min_slope)
    }
}

fn finish(results: Value, checks: Vec<Check>) -> AnalysisResult {
    let pass = checks.iter().all(|c| c.pass);
    AnalysisResult { results, checks, pass }
}

/// Runs every analysis in the config, in the fixed order of [`Analysis::ALL`].
pub fn run(cfg: &RunConfig) -> Result<RunOutput> {
    let path = cfg.path()?;
    let mesh = cfg.mesh()?;
    let model = FiberModel::new(&path, cfg.n_cut);
    let mut r = Runner { cfg, path, model, mesh, field: None, curv: None, kato: None, thm1: None, tables: BTreeMap::new() };
    let mut analyses = BTreeMap::new();
    let mut timings = BTreeMap::new();
    for &a in &cfg.analyses {
        log::info!("running {}", a.name());
        let start = Instant::now();
        let res = match a {
            Analysis::Bands => r.bands(),
            Analysis::Curvature => r.curvature(),
            Analysis::Polarize => r.polarize(),
            Analysis::Pump => r.pump(),
            Analysis::Superadiabatic => r.superadiabatic(),
            Analysis::Dynamics => r.dynamics(),
            Analysis::Semiclassics => r.semiclassics(),
            Analysis::Symmetry => r.symmetry(),
        }
        .map_err(|e| e.context(format!("analysis '{}'", a.name())))?;
        timings.insert(a.name().to_string(), start.elapsed().as_secs_f64());
        log::info!("{} finished in {:.2} s ({})", a.name(), start.elapsed().as_secs_f64(), if res.pass { "pass" } else { "FAIL" });
        analyses.insert(a.name().to_string(), res);
    }
    let mut failures = Vec::new();
    for (name, res) in &analyses {
        for c in res.checks.iter().filter(|c| !c.pass) {
            let mut s = format!("{name}.{}: {:e}", c.name, c.value);
            if let Some(lo) = c.lower {
                let _ = write!(s, " (lower {lo:e})");
            }
            if let Some(hi) = c.upper {
                let _ = write!(s, " (upper {hi:e})");
            }
            failures.push(s);
        }
    }
    let report = RunReport {
        schema_version: SCHEMA_VERSION,
        version: env!("CARGO_PKG_VERSION"),
        commit: option_env!("PIEZO_COMMIT").unwrap_or("unknown"),
        config: cfg.clone(),
        pass: failures.is_empty(),
        analyses,
        failures,
    };
    Ok(RunOutput { report, tables: r.tables, timings })
}
