//! Long-time planar evolution u = p·y + v(y, t) on the cell; the drift of mean v gives the
//! effective speed and sup v − inf v tests flatness.

use serde::{Deserialize, Serialize};

use crate::error::{GeomError, Result};
use crate::grid::stencil::Padded;
use crate::grid::{CurvatureScheme, Grid, PeriodicGrid};
use crate::operators::OperatorSpec;
use crate::scheme::Assembled;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlatnessSample {
    pub t: f64,
    pub mean: f64,
    pub oscillation: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlatnessResult {
    /// −(mean v(T) − mean v(T/2)) / (T/2)
    pub estimate: f64,
    pub p: [f64; 2],
    pub horizon: f64,
    pub oscillation_half: f64,
    pub oscillation_end: f64,
    /// max of sup v − inf v over [T/2, T]
    pub oscillation_max: f64,
    pub flat: bool,
    pub warning: Option<String>,
    pub samples: Vec<FlatnessSample>,
    pub dt: f64,
    pub steps: usize,
}

/// Evolves v_t = R[p·y + v] from v = 0 to time T.
pub fn solve_flatness(
    spec: &OperatorSpec,
    p: [f64; 2],
    horizon: f64,
    grid: PeriodicGrid,
    curvature: CurvatureScheme,
) -> Result<FlatnessResult> {
    if !(horizon > 0.0) {
        return Err(GeomError::Invalid(format!("horizon must be positive, got {horizon}")));
    }
    if (grid.period - spec.period()).abs() > 1e-12 * spec.period() {
        return Err(GeomError::IncompatibleGrids(format!(
            "cell period {} does not match operator period {}",
            grid.period,
            spec.period()
        )));
    }
    let g = Grid::Periodic(grid);
    let op = Assembled::new(spec, &g, 1.0, curvature);
    let h = grid.h();
    let tilt = [p[0] * h, p[1] * h];
    let dt_max = op.dt(0.0)?;
    // an even number of steps so that T/2 falls on a step
    let mut steps = (horizon / dt_max).ceil() as usize;
    steps += steps % 2;
    let dt = horizon / steps as f64;
    let sample_every = (steps / 80).max(1);

    let mut v = vec![0.0; g.len()];
    let mut pad = Padded::new(grid.nodes, grid.nodes);
    let mut scratch = vec![0.0; g.len()];
    let stats = |v: &[f64]| {
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (mean, hi - lo)
    };
    let mut samples = Vec::new();
    let mut mean_half = 0.0;
    let mut osc_half = 0.0;
    for s in 1..=steps {
        op.step(&mut v, dt, tilt, &mut pad, &mut scratch);
        if s == steps / 2 {
            (mean_half, osc_half) = stats(&v);
        }
        if s % sample_every == 0 || s == steps {
            let (mean, oscillation) = stats(&v);
            samples.push(FlatnessSample { t: s as f64 * dt, mean, oscillation });
        }
    }
    let (mean_end, osc_end) = stats(&v);
    let estimate = -(mean_end - mean_half) / (0.5 * horizon);
    let osc_max =
        samples.iter().filter(|s| s.t >= 0.5 * horizon - 1e-12).map(|s| s.oscillation).fold(osc_half, f64::max);
    let pn = (p[0] * p[0] + p[1] * p[1]).sqrt();
    // linear growth would roughly double the oscillation between T/2 and T
    let flat = osc_max <= 1.5 * osc_half + 10.0 * h * pn.max(1.0);
    let warning = (!flat).then(|| "no flatness - homogenization suspect".to_string());
    if let Some(w) = &warning {
        log::warn!("{w} (p = {p:?}, osc T/2 = {osc_half}, max = {osc_max})");
    }
    Ok(FlatnessResult {
        estimate,
        p,
        horizon,
        oscillation_half: osc_half,
        oscillation_end: osc_end,
        oscillation_max: osc_max,
        flat,
        warning,
        samples,
        dt,
        steps,
    })
}
