//! End-to-end drivers behind the `simulate`, `zmatrix`, `optimize` and
//! `pattern` subcommands. Each returns its artifact plus a [`RunReport`];
//! writing files is left to the caller.

use std::collections::BTreeMap;
use std::time::Instant;

use num_complex::Complex64;

use crate::config::ScenarioConfig;
use crate::error::{Error, Result};
use crate::farfield::{pattern_cut, PatternCut, Plane};
use crate::geometry::{direction_angles_deg, Role};
use crate::io::RunReport;
use crate::link::{DrivenSolution, Link};
use crate::mna::PortNetwork;
use crate::opt::{optimize, random_reactive_objectives, Init, OptOutcome, OptParams};

/// Reactance range of the random baseline configurations (ohm).
pub const BASELINE_REACTANCE: f64 = 500.0;

#[derive(Default)]
struct Timings(BTreeMap<String, f64>);

impl Timings {
    fn run<T>(&mut self, stage: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let t0 = Instant::now();
        let out = f();
        self.0.insert(stage.to_string(), t0.elapsed().as_secs_f64());
        out
    }
}

fn report(command: &str, cfg: &ScenarioConfig, link: &Link, timings: Timings) -> RunReport {
    RunReport {
        command: command.to_string(),
        scenario_digest: cfg.digest(),
        frequency_hz: cfg.scenario.frequency,
        branches: link.mesh.num_segments(),
        nodes: link.mesh.num_nodes(),
        ports: cfg.scenario.dipoles.len(),
        timings_s: timings.0,
        ..Default::default()
    }
}

fn build(cfg: &ScenarioConfig, timings: &mut Timings) -> Result<Link> {
    timings.run("mesh_and_elements", || Link::build(cfg.scenario.clone()))
}

fn ris_loads(cfg: &ScenarioConfig, loads: Option<&[Complex64]>) -> Result<Vec<Complex64>> {
    let n = cfg.scenario.count(Role::Ris);
    match loads {
        None => Ok(vec![Complex64::new(0.0, 0.0); n]),
        Some(l) if l.len() == n => Ok(l.to_vec()),
        Some(l) => Err(Error::Input {
            path: "loads".into(),
            message: format!("{} loads for {n} RIS ports", l.len()),
        }),
    }
}

/// Full-wave solve with the Tx driven by 1 V behind `zg`, the Rx terminated in
/// `zr` and the RIS loaded (short circuits by default).
pub fn cmd_simulate(cfg: &ScenarioConfig, loads: Option<&[Complex64]>) -> Result<(DrivenSolution, RunReport)> {
    cfg.require_link()?;
    let loads = ris_loads(cfg, loads)?;
    let mut timings = Timings::default();
    let link = build(cfg, &mut timings)?;
    let driven = timings.run("solve", || link.solve_driven(&loads, cfg.zg, cfg.zr, 1.0))?;
    let mut rep = report("simulate", cfg, &link, timings);
    rep.objective = Some(driven.h.norm_sqr());
    rep.max_residual = Some(driven.solution.residual);
    Ok((driven, rep))
}

pub fn cmd_zmatrix(cfg: &ScenarioConfig) -> Result<(PortNetwork, RunReport)> {
    let mut timings = Timings::default();
    let link = build(cfg, &mut timings)?;
    let ex = timings.run("zsys", || link.extract())?;
    let mut rep = report("zmatrix", cfg, &link, timings);
    rep.max_residual = Some(ex.residuals.iter().copied().fold(0.0, f64::max));
    rep.asymmetry = Some(ex.asymmetry);
    Ok((ex.network, rep))
}

/// Random-baseline request: best `|h|^2` over `samples` random reactive configurations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Baseline {
    pub seed: u64,
    pub samples: usize,
}

/// Extracts `Z_sys` and optimizes the RIS loads. The terminations of the
/// scenario override those in `params`.
pub fn cmd_optimize(
    cfg: &ScenarioConfig,
    params: &OptParams,
    baseline: Option<Baseline>,
) -> Result<(OptOutcome, RunReport)> {
    cfg.require_link()?;
    let params = OptParams {
        zg: cfg.zg,
        zr: cfg.zr,
        ..params.clone()
    };
    let mut timings = Timings::default();
    let link = build(cfg, &mut timings)?;
    let ex = timings.run("zsys", || link.extract())?;
    let outcome = timings.run("optimize", || {
        optimize(&ex.network, &params).map_err(|e| e.in_stage("optimize"))
    })?;
    let best_random = match baseline {
        Some(b) => Some(timings.run("baseline", || {
            let v = random_reactive_objectives(&ex.network, cfg.zg, cfg.zr, b.samples, BASELINE_REACTANCE, b.seed)?;
            Ok(v.into_iter().fold(0.0, f64::max) * params.emf * params.emf)
        })?),
        None => None,
    };
    let mut rep = report("optimize", cfg, &link, timings);
    rep.objective_before = Some(outcome.objective_before);
    rep.objective_after = Some(outcome.objective);
    rep.rate_bps_hz = Some(outcome.rate);
    rep.sweeps = Some(outcome.sweeps);
    rep.init = Some(match outcome.init {
        Init::Short => "short".into(),
        Init::Open => "open".into(),
        Init::Random(seed) => format!("random({seed})"),
    });
    rep.random_baseline_best = best_random;
    rep.max_residual = Some(ex.residuals.iter().copied().fold(0.0, f64::max));
    rep.asymmetry = Some(ex.asymmetry);
    Ok((outcome, rep))
}

/// Angles (theta, phi) in degrees of the Rx as seen from the RIS centroid.
pub fn rx_direction(cfg: &ScenarioConfig) -> Result<(f64, f64)> {
    let ris = cfg
        .scenario
        .ris_center()
        .ok_or_else(|| Error::config("dipoles", "scenario has no RIS elements"))?;
    let rx = cfg
        .scenario
        .first(Role::Rx)
        .ok_or_else(|| Error::config("dipoles", "scenario has no rx dipole"))?;
    Ok(direction_angles_deg(&ris, &rx.center))
}

/// Normalized cut of the field scattered by the RIS. The fixed angle defaults
/// to the Rx direction: its elevation for a phi cut, its azimuth for a theta cut.
pub fn cmd_pattern(
    cfg: &ScenarioConfig,
    loads: Option<&[Complex64]>,
    plane: Plane,
    fixed_angle: Option<f64>,
    n_points: usize,
) -> Result<(PatternCut, RunReport)> {
    cfg.require_link()?;
    let (theta_rx, phi_rx) = rx_direction(cfg)?;
    let fixed = fixed_angle.unwrap_or(match plane {
        Plane::Phi => theta_rx,
        Plane::Theta => phi_rx,
    });
    if !fixed.is_finite() {
        return Err(Error::config("fixed_angle", "must be finite"));
    }
    let loads = ris_loads(cfg, loads)?;
    let mut timings = Timings::default();
    let link = build(cfg, &mut timings)?;
    let driven = timings.run("solve", || link.solve_driven(&loads, cfg.zg, cfg.zr, 1.0))?;
    let subset = link.ris_segments();
    let cut = timings.run("pattern", || {
        pattern_cut(&driven.solution.currents, &link.mesh, &subset, link.wavenumber(), plane, fixed, n_points)
            .map_err(|e| e.in_stage("pattern"))
    })?;
    let mut rep = report("pattern", cfg, &link, timings);
    rep.objective = Some(driven.h.norm_sqr());
    rep.peak_angle_deg = Some(cut.peak_angle());
    rep.max_residual = Some(driven.solution.residual);
    Ok((cut, rep))
}
