use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rvm_core::dynamics::{
    data_norm, evolve_self_consistent, push_recording, write_trajectory_log, CharacteristicState, SlabSchedule,
};
use rvm_core::energetics::{
    assemble_ledger, outgoing_flux, DriverReservoir, EnergyLedger, EnergyModel, FluxSettings, LedgerPlan,
    MatterModel, NoMatter, ParticleMatter, StaticMatter,
};
use rvm_core::fields::{
    eval_batch, maxwell_residuals, write_fields_csv, FieldQuadrature, FieldSample, FieldValue, Propagation,
    UniformField,
};
use rvm_core::geometry::DirectionGrid;
use rvm_core::radiation::{compute_radiation, write_radiation_csv, RadiationQuadrature, RadiationSlice};
use rvm_core::sources::{
    analytic_dipole, Knot, ParticleEnsemble, ParticleHistory, SourceHistory, SpeciesParams, StaticBlob, Vacuum,
};
use rvm_core::Vec3;
use serde_json::json;

use crate::config::{DirectionRule, MatterKind, Pipeline, Scenario, SourceSpec};
use crate::report::{combined_residuals, Check, Report};
use crate::CliError;

/// Command-line overrides of a scenario.
#[derive(Debug, Clone)]
pub struct RunOptions {
    pub pipelines: Option<Vec<Pipeline>>,
    pub threads: Option<usize>,
    pub out: Option<PathBuf>,
    pub tolerance_scale: f64,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            pipelines: None,
            threads: None,
            out: None,
            tolerance_scale: 1.0,
        }
    }
}

#[derive(Debug)]
pub struct RunOutcome {
    pub report: Report,
    pub out_dir: PathBuf,
    /// Artifact files written, in order.
    pub artifacts: Vec<PathBuf>,
}

impl RunOutcome {
    pub fn passed(&self) -> bool {
        self.report.passed()
    }
}

struct Source {
    history: Arc<dyn SourceHistory>,
    particles: Option<Arc<ParticleHistory>>,
    evolution: Option<EvolutionSummary>,
}

struct EvolutionSummary {
    json: serde_json::Value,
    text: String,
    max_iterations: usize,
    /// `max 𝒫(t) / 𝒫(0)`, undefined when the particles start at rest.
    growth: Option<f64>,
    self_consistent: bool,
}

struct Artifacts {
    dir: PathBuf,
    written: Vec<PathBuf>,
}

impl Artifacts {
    fn write(&mut self, name: &str, fill: impl FnOnce(&mut dyn Write) -> rvm_core::Result<()>) -> Result<(), CliError> {
        let path = self.dir.join(name);
        let io_err = |source| CliError::Output {
            path: path.display().to_string(),
            source,
        };
        let file = File::create(&path).map_err(io_err)?;
        let mut out = BufWriter::new(file);
        fill(&mut out).map_err(|e| match e {
            rvm_core::Error::Io(source) => io_err(source),
            other => CliError::Core(other),
        })?;
        out.flush().map_err(io_err)?;
        self.written.push(path);
        Ok(())
    }
}

/// Runs the scenario with the given overrides.
pub fn run(mut scenario: Scenario, opts: &RunOptions) -> Result<RunOutcome, CliError> {
    if let Some(p) = &opts.pipelines {
        scenario.pipelines = p.clone();
    }
    if !(opts.tolerance_scale > 0.0) || !opts.tolerance_scale.is_finite() {
        return Err(CliError::Config(format!(
            "--tolerance-scale: must be positive, got {}",
            opts.tolerance_scale
        )));
    }
    scenario.tolerances = scenario.tolerances.scaled(opts.tolerance_scale);
    scenario.validate()?;
    let dir = opts.out.clone().unwrap_or_else(|| scenario.output.dir.clone());
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = opts.threads {
        if n == 0 {
            return Err(CliError::Config("--threads: must be at least 1".into()));
        }
        pool = pool.num_threads(n);
    }
    let pool = pool
        .build()
        .map_err(|e| CliError::Config(format!("--threads: {e}")))?;
    pool.install(|| execute(&scenario, &dir))
}

fn execute(sc: &Scenario, dir: &Path) -> Result<RunOutcome, CliError> {
    fs::create_dir_all(dir).map_err(|source| CliError::Output {
        path: dir.display().to_string(),
        source,
    })?;
    let mut art = Artifacts {
        dir: dir.to_path_buf(),
        written: Vec::new(),
    };
    let mut report = Report::new(&sc.name, &sc.pipelines);
    let tol = &sc.tolerances;
    let verify = sc.runs(Pipeline::Verify);
    let needs_source = !sc.pipelines.is_empty();
    if !needs_source {
        write_reports(&mut art, &report)?;
        return Ok(finish(report, art));
    }

    let source = build_source(sc)?;
    let fq = Arc::new(FieldQuadrature::new(sc.quadrature.field)?);
    let src = source.history.clone();

    // fields
    if sc.runs(Pipeline::Fields) || (verify && !sc.fields.points.is_empty()) {
        let points: Vec<(f64, Vec3)> = sc
            .fields
            .points
            .iter()
            .map(|p| (p[0], Vec3::new(p[1], p[2], p[3])))
            .collect();
        if sc.runs(Pipeline::Fields) {
            let values = eval_batch(src.as_ref(), &points, &fq, Propagation::Retarded)?;
            let rows: Vec<FieldSample> = points
                .iter()
                .zip(&values)
                .map(|((t, x), f)| FieldSample { t: *t, x: *x, field: *f })
                .collect();
            art.write("fields.csv", |out| write_fields_csv(out, &rows))?;
            let max_e = values.iter().fold(0.0f64, |m, f| m.max(f.e.norm()));
            let max_b = values.iter().fold(0.0f64, |m, f| m.max(f.b.norm()));
            report.set_fields(rows.len(), max_e, max_b);
        }
        if verify && !points.is_empty() {
            let mut worst: f64 = 0.0;
            for (t, x) in &points {
                let r = maxwell_residuals(src.as_ref(), *t, x, sc.fields.maxwell_step, &fq)?;
                worst = worst.max(r.relative_div_b()).max(r.relative_faraday());
            }
            report.checks.push(Check::at_most(
                "maxwell",
                worst,
                tol.maxwell,
                format!("div B and Faraday at {} points, h = {}", points.len(), sc.fields.maxwell_step),
            ));
        }
    }

    // radiation
    let grid = match sc.quadrature.directions {
        DirectionRule::Lebedev26 => DirectionGrid::lebedev26(),
        DirectionRule::Product => {
            DirectionGrid::product(sc.quadrature.direction_polar, sc.quadrature.direction_azimuth)
        }
    };
    let rq = RadiationQuadrature::new(sc.quadrature.radiation)?;
    let mut slices: Vec<RadiationSlice> = Vec::new();
    if sc.runs(Pipeline::Radiation) || (verify && !sc.radiation.u_grid.is_empty()) {
        for &u in &sc.radiation.u_grid {
            slices.push(compute_radiation(src.as_ref(), u, &grid, &rq, sc.radiation.du)?);
        }
        if sc.runs(Pipeline::Radiation) {
            art.write("radiation.csv", |out| write_radiation_csv(out, &slices))?;
            report.set_radiation(&slices);
        }
        if verify {
            let c = combined_residuals(&slices);
            let n = slices.len();
            report.checks.push(Check::at_most("mn_identities", c.mn, tol.mn, format!("{n} slices")));
            report.checks.push(Check::at_most("n_equals_k_cross_m", c.planar, tol.planar, ""));
            let max_e = slices.iter().fold(0.0f64, |m, s| m.max(s.max_e_rad()));
            if max_e * max_e > tol.flux_floor {
                report.checks.push(Check::at_most(
                    "radiation_path_b",
                    c.radiation_b,
                    tol.radiation_b,
                    "centred differences of M, N",
                ));
                report.checks.push(Check::at_most(
                    "radiation_path_a",
                    c.radiation_a,
                    tol.radiation_a,
                    "direct integrals",
                ));
            } else {
                // the identities are 0/0 for a field made of rounding errors
                report.checks.push(Check::at_most(
                    "radiation_vanishes",
                    max_e,
                    tol.static_radiation,
                    "non-radiating source: max |E^rad|",
                ));
            }
        }
    }

    // energetics
    let e = &sc.energetics;
    let energetics_inputs = !e.u_grid.is_empty() && !e.v_grid.is_empty() && !e.r_ladder.is_empty();
    if sc.runs(Pipeline::Energetics) || (verify && energetics_inputs) {
        let flux = FluxSettings {
            grid: grid.clone(),
            quadrature: rq.clone(),
            du: sc.radiation.du,
        };
        let matter = build_matter(sc, &source, &fq)?;
        let model = EnergyModel::retarded(src.clone(), fq.clone(), matter);
        let plan = LedgerPlan {
            u_grid: e.u_grid.clone(),
            v_grid: e.v_grid.clone(),
            r_ladder: e.r_ladder.clone(),
            du: e.du,
            cone: e.cone,
            flux: flux.clone(),
            boundary_terms: e.boundary_terms,
        };
        let ledger = assemble_ledger(&model, &plan)?;
        let mut peak: f64 = ledger.flux.iter().fold(0.0, |m, f| m.max(*f));
        for s in &slices {
            peak = peak.max(outgoing_flux(s));
        }
        if let Some((a, b, n)) = e.peak_scan {
            for i in 0..=n {
                let u = a + (b - a) * i as f64 / n as f64;
                let s = compute_radiation(src.as_ref(), u, &flux.grid, &flux.quadrature, flux.du)?;
                peak = peak.max(outgoing_flux(&s));
            }
        }
        let radiating = peak > tol.flux_floor;
        let monotone = bondi_non_increasing(&ledger, peak, tol.mass_loss, tol.static_mass);
        if sc.runs(Pipeline::Energetics) {
            art.write("ledger.json", |out| {
                serde_json::to_writer_pretty(&mut *out, &ledger).map_err(std::io::Error::from)?;
                writeln!(out)?;
                Ok(())
            })?;
            report.set_energetics(&ledger, peak, monotone);
        }
        if verify {
            energetics_checks(&mut report, &ledger, peak, radiating, monotone, sc);
        }
    }

    // evolve
    if let Some(ev) = &source.evolution {
        if sc.runs(Pipeline::Evolve) {
            let history = source.particles.as_ref().expect("ensemble history");
            let stride = sc.dynamics.stride;
            art.write("trajectory.txt", |out| write_trajectory_log(&mut &mut *out, history, stride))?;
            report.set_evolve(ev.json.clone(), ev.text.clone());
        }
        if verify && ev.self_consistent {
            report.checks.push(Check::at_most(
                "picard_iterations",
                ev.max_iterations as f64,
                tol.picard_iterations as f64,
                "largest iteration count over all slabs",
            ));
            if let Some(growth) = ev.growth {
                report.checks.push(Check::at_most(
                    "momentum_support_growth",
                    growth,
                    tol.momentum_growth,
                    "max P(t) / P(0)",
                ));
            }
        }
    }

    write_reports(&mut art, &report)?;
    Ok(finish(report, art))
}

fn finish(report: Report, art: Artifacts) -> RunOutcome {
    RunOutcome {
        report,
        out_dir: art.dir,
        artifacts: art.written,
    }
}

fn write_reports(art: &mut Artifacts, report: &Report) -> Result<(), CliError> {
    let json = report.to_json_string();
    let text = report.to_text();
    art.write("report.json", |out| Ok(out.write_all(json.as_bytes())?))?;
    art.write("report.txt", |out| Ok(out.write_all(text.as_bytes())?))?;
    Ok(())
}

/// `M∨` may rise between neighbours only by what the balance tolerance allows.
fn bondi_non_increasing(ledger: &EnergyLedger, peak: f64, loss_tol: f64, static_tol: f64) -> bool {
    let scale = ledger.bondi.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let pairs = ledger.u_grid.iter().zip(&ledger.bondi).collect::<Vec<_>>();
    let mut sorted = pairs.clone();
    sorted.sort_by(|a, b| a.0.total_cmp(b.0));
    sorted.windows(2).all(|w| {
        let du = w[1].0 - w[0].0;
        w[1].1 - w[0].1 <= loss_tol * peak * du + static_tol * scale
    })
}

fn relative_spread(values: &[f64]) -> f64 {
    let hi = values.iter().fold(f64::NEG_INFINITY, |m, v| m.max(*v));
    let lo = values.iter().fold(f64::INFINITY, |m, v| m.min(*v));
    let scale = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if values.is_empty() || scale == 0.0 {
        0.0
    } else {
        (hi - lo) / scale
    }
}

fn energetics_checks(report: &mut Report, ledger: &EnergyLedger, peak: f64, radiating: bool, monotone: bool, sc: &Scenario) {
    let tol = &sc.tolerances;
    let worst = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if radiating {
        report.checks.push(Check::at_most(
            "mass_loss",
            worst(&ledger.loss_residual) / peak,
            tol.mass_loss,
            format!("|dM∨/du + flux| / peak flux at {} samples", ledger.u_grid.len()),
        ));
        report.checks.push(Check::at_most(
            "advanced_conservation",
            worst(&ledger.conservation_residual) / peak,
            tol.conservation,
            format!("|dM∧/dv| / peak flux at {} samples", ledger.v_grid.len()),
        ));
    } else {
        report.checks.push(Check::at_most(
            "bondi_mass_spread",
            relative_spread(&ledger.bondi),
            tol.static_mass,
            "non-radiating source: M∨ independent of u",
        ));
        report.checks.push(Check::at_most(
            "advanced_mass_spread",
            relative_spread(&ledger.advanced),
            tol.static_mass,
            "non-radiating source: M∧ independent of v",
        ));
    }
    report.checks.push(Check {
        name: "bondi_non_increasing".into(),
        value: if monotone { 0.0 } else { 1.0 },
        tolerance: 0.0,
        passed: monotone,
        detail: "M∨ column".into(),
    });
    if !ledger.identity_defect.is_empty() {
        let mut w: f64 = 0.0;
        for (row, m) in ledger.identity_defect.iter().zip(&ledger.m_ret) {
            for (d, m) in row.iter().zip(m) {
                w = w.max(if *m > 0.0 { d.abs() / m } else { d.abs() });
            }
        }
        report.checks.push(Check::at_most(
            "cone_identity",
            w,
            tol.identity,
            "|m∨ - m∧ - q| / m∨",
        ));
    }
}

fn species_of(list: &[[f64; 2]]) -> Result<Vec<SpeciesParams>, CliError> {
    list.iter()
        .map(|[q, m]| SpeciesParams::new(*q, *m).map_err(CliError::from))
        .collect()
}

fn build_source(sc: &Scenario) -> Result<Source, CliError> {
    let plain = |history: Arc<dyn SourceHistory>| Source {
        history,
        particles: None,
        evolution: None,
    };
    Ok(match &sc.source {
        SourceSpec::Vacuum => plain(Arc::new(Vacuum)),
        SourceSpec::Dipole {
            amplitude,
            omega,
            sigma,
            pulse,
        } => {
            let mut d = analytic_dipole(*amplitude, *omega, *sigma)?;
            if let Some(p) = pulse {
                d = d.with_pulse(*p)?;
            }
            plain(Arc::new(d))
        }
        SourceSpec::Blob { charge, sigma } => plain(Arc::new(StaticBlob::new(*charge, *sigma)?)),
        SourceSpec::Ensemble {
            file,
            smoothing,
            species,
        } => {
            let sp = species_of(species)?;
            let f = File::open(file)
                .map_err(|e| CliError::Config(format!("source.file: cannot open {}: {e}", file.display())))?;
            let ens = ParticleEnsemble::read_from(BufReader::new(f), *smoothing).map_err(|e| {
                CliError::Config(format!("source.file: {}: {e}", file.display()))
            })?;
            ens.validate(&sp)
                .map_err(|e| CliError::Config(format!("source.file: {e}")))?;
            evolve(sc, &ens, &sp)?
        }
    })
}

fn evolve(sc: &Scenario, ens: &ParticleEnsemble, sp: &[SpeciesParams]) -> Result<Source, CliError> {
    let d = &sc.dynamics;
    let schedule = SlabSchedule {
        slab: d.slab,
        tolerance: d.tolerance,
        max_iterations: d.max_iterations,
        step: d.step,
    };
    let p0 = ens.momentum_bound();
    let (history, json, text, max_iterations, growth) = if d.self_consistent {
        let q = FieldQuadrature::new(d.field)?;
        let ev = evolve_self_consistent(ens, sp, &schedule, &q, d.t_end)?;
        let growth = (p0 > 0.0).then(|| ev.momentum_support.iter().fold(0.0f64, |m, (_, p)| m.max(p / p0)));
        let max_it = ev.slabs.iter().map(|s| s.iterations).max().unwrap_or(0);
        let slabs: Vec<_> = ev
            .slabs
            .iter()
            .map(|s| {
                json!({
                    "index": s.index,
                    "t_start": s.t_start,
                    "t_end": s.t_end,
                    "iterations": s.iterations,
                    "residual": s.residual,
                    "contraction": s.contraction,
                    "momentum_support": s.momentum_support,
                    "within_envelope": s.within_envelope,
                })
            })
            .collect();
        let mut text = String::from("evolve (self-consistent):\n  slab      t_end  iterations     residual  contraction         𝒫\n");
        for s in &ev.slabs {
            text.push_str(&format!(
                "{:>6} {:>10.4} {:>11} {:>12.3e} {:>12.3e} {:>9.6}\n",
                s.index, s.t_end, s.iterations, s.residual, s.contraction, s.momentum_support
            ));
        }
        text.push_str(&format!(
            "  max iterations {max_it}; max 𝒫(t) {:.6}; past continuation: {}\n",
            ev.momentum_support.iter().fold(0.0f64, |m, (_, p)| m.max(*p)),
            ev.past_continuation
        ));
        let json = json!({
            "self_consistent": true,
            "slabs": slabs,
            "momentum_support": ev.momentum_support,
            "past_continuation": ev.past_continuation,
            "data_norm": data_norm(ens, sp)?,
            "max_iterations": max_it,
            "momentum_growth": growth,
        });
        (ev.history, json, text, max_it, growth)
    } else {
        let (_, h) = schedule.steps_per_slab();
        let mut history = ParticleHistory::start(ens, sp, 0.0, h)?;
        let states: Vec<CharacteristicState> = ens
            .particles
            .iter()
            .map(|p| CharacteristicState {
                x: p.x,
                p: p.p,
                species: p.species,
            })
            .collect();
        let free = UniformField(FieldValue::ZERO);
        let levels = push_recording(&states, sp, &free, 0.0, d.t_end, h)?;
        for level in levels.iter().skip(1) {
            history.push_level(
                level
                    .iter()
                    .map(|s| Knot {
                        x: s.x,
                        p: s.p,
                        v: sp[s.species].velocity(&s.p),
                    })
                    .collect(),
            )?;
        }
        let json = json!({ "self_consistent": false, "slabs": [], "levels": history.levels() });
        let text = format!("evolve (free streaming): {} levels, step {}\n", history.levels(), h);
        (history, json, text, 0, None)
    };
    let history = Arc::new(history);
    Ok(Source {
        history: history.clone(),
        particles: Some(history),
        evolution: Some(EvolutionSummary {
            json,
            text,
            max_iterations,
            growth,
            self_consistent: d.self_consistent,
        }),
    })
}

fn build_matter(sc: &Scenario, source: &Source, fq: &Arc<FieldQuadrature>) -> Result<Arc<dyn MatterModel>, CliError> {
    let e = &sc.energetics;
    Ok(match (e.matter, &sc.source) {
        (MatterKind::None, _) => Arc::new(NoMatter),
        (MatterKind::Static, SourceSpec::Blob { sigma, .. }) => Arc::new(StaticMatter {
            profile: rvm_core::sources::GaussianProfile::new(*sigma)?,
            kappa: e.kappa,
        }),
        (MatterKind::Reservoir, SourceSpec::Dipole { amplitude, omega, sigma, pulse: Some(p) }) => {
            let d = Arc::new(analytic_dipole(*amplitude, *omega, *sigma)?.with_pulse(*p)?);
            let mut r = DriverReservoir::new(
                d.clone(),
                *d.profile(),
                (0.0, *p),
                e.reservoir_nodes,
                fq.clone(),
                Propagation::Retarded,
            )?;
            r.calibrate(&e.cone.core_nodes(d.envelope().radius), e.reservoir_safety)?;
            Arc::new(r)
        }
        (MatterKind::Particles, _) => Arc::new(ParticleMatter(
            source.particles.clone().expect("ensemble source carries its history"),
        )),
        _ => unreachable!("matter/source pairing is checked by validation"),
    })
}
