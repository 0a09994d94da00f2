//! ε-sweeps: sup-norm errors against the effective solution, rate fits and reports.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::cell::{build_effective_table, EffectiveHamiltonianTable, TableOptions};
use crate::config::{InitialData, ReferenceConfig, SolverMode, SweepConfig};
use crate::error::{GeomError, Result};
use crate::evolution::{
    evolve_effective, evolve_eps, evolve_radial, hopf_cone, hopf_plane, hopf_vshape, EvolutionResult, EvolveOptions,
};
use crate::grid::{sup_norm_diff, BoxGrid, Grid, GridFunction, Mask, PeriodicGrid};
use crate::operators::OperatorSpec;
use crate::oracles::{lower_bound_value, scaling_identity_check, vshape_level_set};

pub const FLAG_DISCRETIZATION: &str = "discretization-dominated";
pub const FLAG_COARSE_COMPANION: &str = "coarse-companion";
pub const FLAG_BELOW_LOWER_BOUND: &str = "below-lower-bound";
pub const FLAG_SCHEME_NOISE: &str = "scheme-noise regime";
pub const FLAG_NON_MONOTONE: &str = "non-monotone";
pub const FLAG_NO_FIT: &str = "fit-unavailable";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Companion {
    pub h: f64,
    pub error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatePoint {
    pub eps: f64,
    pub h: f64,
    pub error: f64,
    pub runtime_s: f64,
    pub flags: Vec<String>,
    pub companion: Option<Companion>,
    /// Radial lower bound ½ε(log(T/ε − 1) + 1) when it applies.
    pub lower_bound: Option<f64>,
    /// sup |u^ε(x, t) − ε u¹(x/ε, t/ε)| over the mask and comparison times.
    pub scaling_residual: Option<f64>,
    pub steps: usize,
    pub measured_nodes: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub exponent: f64,
    pub intercept: f64,
    /// Largest absolute misfit in log(error).
    pub residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub config: SweepConfig,
    pub points: Vec<RatePoint>,
    pub fit: Option<RateFit>,
    /// Number of ε used by the fit.
    pub fit_points: usize,
    pub monotone: bool,
    pub inversions: usize,
    pub flags: Vec<String>,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
}

/// Least squares of log(error) on log(ε).
pub fn fit_rate(points: &[(f64, f64)]) -> Result<RateFit> {
    if points.len() < 3 {
        return Err(GeomError::DegenerateFit(format!("need at least 3 points, got {}", points.len())));
    }
    if points.iter().any(|&(e, err)| !(e > 0.0) || !(err > 0.0)) {
        return Err(GeomError::DegenerateFit("eps and errors must be positive".into()));
    }
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx <= 1e-24 {
        return Err(GeomError::DegenerateFit("all eps are equal".into()));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let exponent = sxy / sxx;
    let intercept = my - exponent * mx;
    let residual = xs.iter().zip(&ys).map(|(x, y)| (y - intercept - exponent * x).abs()).fold(0.0, f64::max);
    Ok(RateFit { exponent, intercept, residual })
}

/// Counts ε-steps where the error fails to decrease; monotone allows a single inversion of at most 10%.
pub fn monotonicity(errors: &[f64]) -> (bool, usize) {
    let mut inversions = 0;
    let mut small = true;
    for w in errors.windows(2) {
        if w[1] >= w[0] {
            inversions += 1;
            small &= w[1] <= 1.1 * w[0];
        }
    }
    (inversions == 0 || (inversions == 1 && small), inversions)
}

enum Reference {
    Closed(f64),
    Table(EffectiveHamiltonianTable),
}

fn reference_for(cfg: &SweepConfig, spec: &OperatorSpec) -> Result<Reference> {
    match &cfg.reference {
        ReferenceConfig::ClosedForm => Ok(Reference::Closed(cfg.operator.constant_force()?.expect("validated"))),
        ReferenceConfig::Table { path, directions, lambda, nodes } => {
            if let Some(p) = path.as_ref().filter(|p| p.exists()) {
                let t = EffectiveHamiltonianTable::load(p)?;
                if t.spec_hash != spec.content_hash() {
                    return Err(GeomError::Invalid(format!(
                        "table {} was built for a different operator",
                        p.display()
                    )));
                }
                return Ok(Reference::Table(t));
            }
            let grid = PeriodicGrid::new(*nodes, spec.period())?;
            let t = build_effective_table(spec, *directions, *lambda, grid, &TableOptions::default())?;
            if !t.is_complete() {
                let k = t.metadata.covered.iter().position(|c| !c).unwrap();
                return Err(GeomError::UncoveredDirection { theta: t.directions[k] });
            }
            if let Some(p) = path {
                t.save(p)?;
            }
            Ok(Reference::Table(t))
        }
    }
}

fn comparison_times(cfg: &SweepConfig) -> Vec<f64> {
    let mut ts = cfg.grid.snapshots.clone();
    ts.push(cfg.horizon);
    ts.sort_by(f64::total_cmp);
    ts.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * cfg.horizon);
    ts
}

/// Reference values on the masked nodes, and the mask minus the cone's kink tube.
fn reference_at(
    cfg: &SweepConfig,
    reference: &Reference,
    grid: Grid,
    mask: &Mask,
    t: f64,
    lf: Option<&EvolutionResult>,
) -> Result<(GridFunction, Mask)> {
    let h = grid.h();
    if let Some(run) = lf {
        let snap = run.at_time(t).ok_or_else(|| GeomError::Invalid(format!("no effective snapshot at {t}")))?;
        return Ok((snap.u.clone(), mask.clone()));
    }
    let [_, ny] = grid.shape();
    let eval = |x: [f64; 2]| -> Result<(f64, f64)> {
        match (reference, &cfg.initial) {
            (Reference::Closed(k), InitialData::Cone) => {
                let g = k * t - (x[0] * x[0] + x[1] * x[1]).sqrt();
                Ok((g.min(0.0), g))
            }
            (Reference::Closed(k), InitialData::VShape { alpha, directions }) => {
                let a: Vec<Vec<f64>> = directions.iter().map(|d| vec![*d]).collect();
                Ok((vshape_level_set(&x, k * t, *alpha, &a)?, f64::INFINITY))
            }
            (Reference::Closed(k), InitialData::Plane { p }) => {
                Ok((p[0] * x[0] + p[1] * x[1] + k * t * (p[0] * p[0] + p[1] * p[1]).sqrt(), f64::INFINITY))
            }
            (Reference::Table(tb), InitialData::Cone) => hopf_cone(tb, x, t),
            (Reference::Table(tb), InitialData::VShape { alpha, directions }) => {
                Ok((hopf_vshape(tb, x, t, *alpha, directions)?, f64::INFINITY))
            }
            (Reference::Table(tb), InitialData::Plane { p }) => Ok((hopf_plane(tb, *p, x, t)?, f64::INFINITY)),
            (_, InitialData::File { .. }) => unreachable!("file data uses the effective evolution"),
        }
    };
    let rows: Vec<Result<Vec<(f64, bool)>>> = (0..grid.shape()[0])
        .into_par_iter()
        .map(|i| {
            (0..ny)
                .map(|j| {
                    if !mask.contains(i * ny + j) {
                        return Ok((0.0, false));
                    }
                    let (u, g) = eval(grid.coord(i, j))?;
                    Ok((u, g.abs() >= 3.0 * h))
                })
                .collect()
        })
        .collect();
    let mut vals = Vec::with_capacity(grid.len());
    let mut keep = Vec::with_capacity(grid.len());
    for row in rows {
        for (u, k) in row? {
            vals.push(u);
            keep.push(k);
        }
    }
    let tube = Mask::from_flags(&grid, keep)?;
    Ok((GridFunction::new(grid, vals)?, mask.and(&tube)))
}

struct RunOutcome {
    error: f64,
    steps: usize,
    measured: usize,
    scaling: Option<f64>,
}

fn measure_mask(grid: &BoxGrid, half: f64) -> Mask {
    let g = Grid::Box(*grid);
    grid.interior_mask().and(&Mask::from_fn(&g, |x| x[0].abs() <= half + 1e-12 && x[1].abs() <= half + 1e-12))
}

fn buffer_speed(spec: &OperatorSpec, reference: &Reference, initial: &InitialData) -> f64 {
    match (reference, initial) {
        (Reference::Table(t), InitialData::File { .. }) => spec.speed_bound().max(t.gradient_bound()),
        _ => spec.speed_bound(),
    }
}

#[allow(clippy::too_many_arguments)]
fn run_planar(
    cfg: &SweepConfig,
    spec: &OperatorSpec,
    reference: &Reference,
    eps: f64,
    h: f64,
    min_resolution: f64,
    unit: Option<&EvolutionResult>,
) -> Result<RunOutcome> {
    let times = comparison_times(cfg);
    let buffer = cfg.grid.buffer_margin * buffer_speed(spec, reference, &cfg.initial) * cfg.horizon;
    let bx = BoxGrid::centered(cfg.grid.measure_half_width + buffer, h, cfg.grid.boundary, buffer)?;
    let grid = Grid::Box(bx);
    let u0 = cfg.initial.sample(grid)?;
    let opts = EvolveOptions {
        snapshots: times.clone(),
        curvature: cfg.grid.curvature,
        min_resolution,
        buffer_margin: cfg.grid.buffer_margin,
    };
    let run = evolve_eps(spec, eps, &u0, cfg.horizon, &opts)?;
    let lf = match (reference, &cfg.initial) {
        (Reference::Table(t), InitialData::File { .. }) => Some(evolve_effective(t, &u0, cfg.horizon, &opts)?),
        _ => None,
    };
    let mask = measure_mask(&bx, cfg.grid.measure_half_width);
    let mut error: f64 = 0.0;
    let mut measured = 0;
    let mut scaling: Option<f64> = None;
    for &t in &times {
        let snap = run.at_time(t).expect("requested snapshot");
        let (r, m) = reference_at(cfg, reference, grid, &mask, t, lf.as_ref())?;
        error = error.max(sup_norm_diff(&snap.u, &r, &m)?);
        measured = measured.max(m.count());
        if let Some(unit) = unit {
            let us =
                unit.at_time(t / eps).ok_or_else(|| GeomError::Invalid(format!("unit run lacks time {}", t / eps)))?;
            let res = scaling_identity_check(eps, &snap.u, &mask, &us.u)?;
            scaling = Some(scaling.unwrap_or(0.0).max(res));
        }
    }
    Ok(RunOutcome { error, steps: run.cfl.steps, measured, scaling })
}

fn run_radial(cfg: &SweepConfig, eps: f64, h: f64, r_max: f64) -> Result<RunOutcome> {
    let times = comparison_times(cfg);
    let n = ((r_max / h).round() as usize).saturating_sub(1).max(4);
    let res = evolve_radial(eps, r_max, cfg.horizon, n, &times)?;
    let mut error: f64 = 0.0;
    for &t in &times {
        // just outside |x| = t, where the effective solution is −(r − t)
        let r = t + 4.0 * res.h;
        error = error.max((res.query(r, t)? + (r - t)).abs());
    }
    Ok(RunOutcome { error, steps: res.steps, measured: times.len(), scaling: None })
}

fn unit_run(cfg: &SweepConfig, spec: &OperatorSpec) -> Result<EvolutionResult> {
    let eps_min = *cfg.eps.last().unwrap();
    let buffer = cfg.grid.buffer_margin * spec.speed_bound() * cfg.horizon / eps_min;
    let half = cfg.grid.measure_half_width / eps_min + buffer;
    let bx = BoxGrid::centered(half, cfg.grid.h_over_eps, cfg.grid.boundary, buffer)?;
    let u0 = cfg.initial.sample(Grid::Box(bx))?;
    let mut snaps: Vec<f64> =
        cfg.eps.iter().flat_map(|e| comparison_times(cfg).into_iter().map(move |t| t / e)).collect();
    snaps.sort_by(f64::total_cmp);
    let horizon = cfg.horizon / eps_min;
    let opts = EvolveOptions {
        snapshots: snaps,
        curvature: cfg.grid.curvature,
        min_resolution: 1.0 / cfg.grid.h_over_eps,
        buffer_margin: cfg.grid.buffer_margin,
    };
    evolve_eps(spec, 1.0, &u0, horizon, &opts)
}

fn lower_bound_for(cfg: &SweepConfig, eps: f64) -> Result<Option<f64>> {
    let applies = cfg.initial == InitialData::Cone
        && cfg.operator.constant_force()? == Some(1.0)
        && cfg.horizon > eps * (1.0 + (-1f64).exp());
    if applies {
        Ok(Some(lower_bound_value(eps, cfg.horizon)?))
    } else {
        Ok(None)
    }
}

fn unix_seconds() -> u64 {
    std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

/// Runs every ε (in parallel), compares with the reference and fits the rate.
pub fn run_sweep(cfg: &SweepConfig) -> Result<RateReport> {
    cfg.validate()?;
    let spec = cfg.operator.build()?;
    let reference = reference_for(cfg, &spec)?;
    let unit = match (cfg.scaling_check, &cfg.solver) {
        (true, SolverMode::Planar2d) => Some(unit_run(cfg, &spec)?),
        (true, _) => return Err(GeomError::Invalid("scaling check needs the planar solver".into())),
        _ => None,
    };
    let primary_resolution = 8.0;
    let run = |eps: f64, h: f64, min_res: f64, unit: Option<&EvolutionResult>| match cfg.solver {
        SolverMode::Planar2d => run_planar(cfg, &spec, &reference, eps, h, min_res, unit),
        SolverMode::Radial { r_max } => run_radial(cfg, eps, h, r_max),
    };
    let points: Vec<Result<RatePoint>> = cfg
        .eps
        .par_iter()
        .map(|&eps| {
            let abort = |e: GeomError| GeomError::SweepAborted { eps, source: Box::new(e) };
            let start = Instant::now();
            let h = cfg.grid.h_over_eps * eps;
            let main = run(eps, h, primary_resolution, unit.as_ref()).map_err(abort)?;
            let mut flags = Vec::new();
            let companion = match cfg.grid.refinement {
                Some(f) => {
                    let hc = h * f;
                    if f > 1.0 {
                        flags.push(FLAG_COARSE_COMPANION.to_string());
                    }
                    let min_res = if f > 1.0 { eps / hc } else { primary_resolution };
                    let c = run(eps, hc, min_res, None).map_err(abort)?;
                    if (c.error - main.error).abs() > 0.2 * main.error {
                        flags.push(FLAG_DISCRETIZATION.to_string());
                    }
                    Some(Companion { h: hc, error: c.error })
                }
                None => None,
            };
            let lower_bound = lower_bound_for(cfg, eps).map_err(abort)?;
            if let Some(lb) = lower_bound {
                if main.error < lb - 5.0 * h {
                    flags.push(FLAG_BELOW_LOWER_BOUND.to_string());
                }
            }
            Ok(RatePoint {
                eps,
                h,
                error: main.error,
                runtime_s: start.elapsed().as_secs_f64(),
                flags,
                companion,
                lower_bound,
                scaling_residual: main.scaling,
                steps: main.steps,
                measured_nodes: main.measured,
            })
        })
        .collect();
    let points = points.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(assemble_report(cfg.clone(), points))
}

fn assemble_report(config: SweepConfig, points: Vec<RatePoint>) -> RateReport {
    let clean: Vec<(f64, f64)> =
        points.iter().filter(|p| !p.flags.iter().any(|f| f == FLAG_DISCRETIZATION)).map(|p| (p.eps, p.error)).collect();
    let used: Vec<(f64, f64)> =
        if clean.len() >= 3 { clean } else { points.iter().map(|p| (p.eps, p.error)).collect() };
    let fit = fit_rate(&used).ok();
    let errors: Vec<f64> = points.iter().map(|p| p.error).collect();
    let (monotone, inversions) = monotonicity(&errors);
    let mut flags = Vec::new();
    if points.iter().all(|p| p.error <= 5.0 * p.h) {
        flags.push(FLAG_SCHEME_NOISE.to_string());
    }
    if !monotone {
        flags.push(FLAG_NON_MONOTONE.to_string());
    }
    if fit.is_none() {
        flags.push(FLAG_NO_FIT.to_string());
    }
    RateReport {
        config,
        fit_points: if fit.is_some() { used.len() } else { 0 },
        points,
        fit,
        monotone,
        inversions,
        flags,
        timestamp: unix_seconds(),
    }
}

pub fn report_csv(r: &RateReport) -> String {
    let mut s = String::from("eps,error,h,flags,lower_bound\n");
    for p in &r.points {
        let lb = p.lower_bound.map(|v| v.to_string()).unwrap_or_default();
        s.push_str(&format!("{},{},{},{},{}\n", p.eps, p.error, p.h, p.flags.join(";"), lb));
    }
    s
}

/// Writes `report.json` and `report.csv` into `dir`.
pub fn emit_report(r: &RateReport, dir: &Path) -> Result<(PathBuf, PathBuf)> {
    if r.points.is_empty() {
        return Err(GeomError::Invalid("empty report".into()));
    }
    std::fs::create_dir_all(dir)?;
    let json = dir.join("report.json");
    let csv = dir.join("report.csv");
    std::fs::write(&json, serde_json::to_string_pretty(r)?)?;
    std::fs::write(&csv, report_csv(r))?;
    Ok((json, csv))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{GridPolicy, OperatorConfig};
    use crate::operators::Perturbation;
    use proptest::prelude::*;

    #[test]
    fn fit_exact_power_laws() {
        let es = [0.1, 0.05, 0.025, 0.0125];
        let f = fit_rate(&es.map(|e| (e, 3.0 * e))).unwrap();
        assert!((f.exponent - 1.0).abs() < 1e-12 && (f.intercept - 3f64.ln()).abs() < 1e-12);
        let f = fit_rate(&es.map(|e| (e, 2.0 * e.powf(0.125)))).unwrap();
        assert!((f.exponent - 0.125).abs() < 1e-12 && f.residual < 1e-12);
    }

    #[test]
    fn fit_with_log_factor() {
        // slope of ε|log ε| is 1 − 1/|log ε|: about 0.76 over three decades from 1e-1
        let pts: Vec<(f64, f64)> = [1e-1, 1e-2, 1e-3].iter().map(|&e: &f64| (e, e * e.ln().abs())).collect();
        let f = fit_rate(&pts).unwrap();
        assert!(f.exponent > 0.75 && f.exponent < 0.78, "{}", f.exponent);
        let pts: Vec<(f64, f64)> = [1e-4, 1e-5, 1e-6].iter().map(|&e: &f64| (e, e * e.ln().abs())).collect();
        let f = fit_rate(&pts).unwrap();
        assert!(f.exponent > 0.9 && f.exponent < 1.0, "{}", f.exponent);
    }

    #[test]
    fn fit_rejects_degenerate() {
        assert!(fit_rate(&[(0.1, 1.0), (0.1, 2.0), (0.1, 3.0)]).is_err());
        assert!(fit_rate(&[(0.1, 1.0), (0.05, 2.0)]).is_err());
        assert!(fit_rate(&[(0.1, 1.0), (0.05, 0.0), (0.01, 1.0)]).is_err());
    }

    #[test]
    fn monotonicity_rules() {
        assert_eq!(monotonicity(&[4.0, 3.0, 2.0, 1.0]), (true, 0));
        assert_eq!(monotonicity(&[4.0, 3.0, 3.2, 1.0]), (true, 1));
        assert_eq!(monotonicity(&[4.0, 3.0, 3.5, 1.0]), (false, 1));
        assert_eq!(monotonicity(&[4.0, 4.1, 4.2, 1.0]), (false, 2));
    }

    proptest! {
        #[test]
        fn fit_recovers_any_power(a in 0.05f64..2.0, c in 0.1f64..10.0) {
            let pts: Vec<(f64, f64)> = [0.2, 0.1, 0.05, 0.02].iter().map(|&e| (e, c * f64::powf(e, a))).collect();
            let f = fit_rate(&pts).unwrap();
            prop_assert!((f.exponent - a).abs() < 1e-10);
        }
    }

    fn plane_sweep() -> SweepConfig {
        SweepConfig {
            operator: OperatorConfig::Mcf { force: "builtin:const1".into(), perturbation: Perturbation::None },
            initial: InitialData::Plane { p: [1.0, 0.0] },
            eps: vec![0.4, 0.2, 0.1],
            horizon: 0.1,
            grid: GridPolicy { measure_half_width: 0.25, ..Default::default() },
            reference: ReferenceConfig::ClosedForm,
            solver: SolverMode::Planar2d,
            scaling_check: false,
            seed: 7,
        }
    }

    #[test]
    fn planes_are_scheme_noise() {
        let r = run_sweep(&plane_sweep()).unwrap();
        assert_eq!(r.points.len(), 3);
        for p in &r.points {
            assert!(p.error <= 5.0 * p.h, "{p:?}");
        }
        assert!(r.flags.iter().any(|f| f == FLAG_SCHEME_NOISE));
    }

    #[test]
    fn report_round_trip_and_csv() {
        let r = run_sweep(&plane_sweep()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let (json, csv) = emit_report(&r, dir.path()).unwrap();
        let back: RateReport = serde_json::from_str(&std::fs::read_to_string(json).unwrap()).unwrap();
        assert_eq!(back, r);
        let text = std::fs::read_to_string(csv).unwrap();
        assert_eq!(text.lines().count(), r.config.eps.len() + 1);
        assert!(text.starts_with("eps,error,h,flags"));
    }

    #[test]
    fn radial_sweep_dominates_lower_bound() {
        let cfg = SweepConfig {
            operator: OperatorConfig::Mcf { force: "builtin:const1".into(), perturbation: Perturbation::None },
            initial: InitialData::Cone,
            eps: vec![0.04, 0.02, 0.01],
            horizon: 1.0,
            grid: GridPolicy::default(),
            reference: ReferenceConfig::ClosedForm,
            solver: SolverMode::Radial { r_max: 1.5 },
            scaling_check: false,
            seed: 0,
        };
        let r = run_sweep(&cfg).unwrap();
        for p in &r.points {
            let lb = p.lower_bound.unwrap();
            assert!(p.error >= lb - 5.0 * p.h, "{p:?}");
            assert!(!p.flags.iter().any(|f| f == FLAG_BELOW_LOWER_BOUND));
        }
    }

    #[test]
    fn aborts_with_offending_eps() {
        let mut cfg = plane_sweep();
        cfg.grid.buffer_margin = 1.0;
        cfg.grid.boundary = crate::grid::BoundaryRule::Clamp;
        cfg.grid.h_over_eps = 0.25;
        match run_sweep(&cfg) {
            Err(GeomError::SweepAborted { eps, source }) => {
                assert_eq!(eps, 0.4);
                assert!(matches!(*source, GeomError::GridTooCoarse { .. }));
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
