//! Time marching for the oscillatory problem, the effective problem and the radial
//! reduction of the cone example, plus Hopf-formula references for the effective one.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::cell::EffectiveHamiltonianTable;
use crate::error::{GeomError, Result};
use crate::grid::stencil::{self, Nb, Padded};
use crate::grid::{cfl_timestep_dim, BoxGrid, CurvatureScheme, Grid, GridFunction, Mask};
use crate::operators::OperatorSpec;
use crate::scheme::Assembled;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvolveOptions {
    /// Output times in (0, T]; t = 0 and t = T are always recorded.
    pub snapshots: Vec<f64>,
    pub curvature: CurvatureScheme,
    /// Require h ≤ ε / min_resolution.
    pub min_resolution: f64,
    /// Require buffer_width ≥ buffer_margin · speed · T.
    pub buffer_margin: f64,
}

impl Default for EvolveOptions {
    fn default() -> Self {
        EvolveOptions {
            snapshots: Vec::new(),
            curvature: CurvatureScheme::Median,
            min_resolution: 8.0,
            buffer_margin: 1.2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum RunLabel {
    Eps { eps: f64 },
    Effective,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub t: f64,
    pub u: GridFunction,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CflDiagnostics {
    pub dt_max: f64,
    pub steps: usize,
    pub speed_bound: f64,
    pub curvature_coef: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvolutionResult {
    pub snapshots: Vec<Snapshot>,
    pub label: RunLabel,
    /// Largest step actually taken.
    pub dt: f64,
    pub cfl: CflDiagnostics,
    /// Nodes outside the boundary buffer.
    pub mask: Mask,
}

impl EvolutionResult {
    pub fn last(&self) -> &Snapshot {
        self.snapshots.last().expect("t = 0 is always recorded")
    }

    pub fn at_time(&self, t: f64) -> Option<&Snapshot> {
        self.snapshots.iter().find(|s| (s.t - t).abs() <= 1e-12 * t.abs().max(1.0))
    }
}

fn box_of(u0: &GridFunction) -> Result<BoxGrid> {
    match u0.grid {
        Grid::Box(b) => Ok(b),
        Grid::Periodic(_) => Err(GeomError::Invalid("evolutions run on a box grid".into())),
    }
}

fn output_times(opts: &EvolveOptions, horizon: f64) -> Result<Vec<f64>> {
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(GeomError::Invalid(format!("horizon must be positive, got {horizon}")));
    }
    let mut ts = vec![0.0];
    let mut req = opts.snapshots.clone();
    req.push(horizon);
    req.sort_by(f64::total_cmp);
    for t in req {
        if !(t > 0.0) || t > horizon * (1.0 + 1e-12) {
            return Err(GeomError::Invalid(format!("snapshot time {t} outside (0, {horizon}]")));
        }
        if t > ts.last().unwrap() + 1e-12 * horizon {
            ts.push(t.min(horizon));
        }
    }
    Ok(ts)
}

/// Forward Euler over the output times; each interval is split into equal steps ≤ dt_max.
fn march(
    u0: &GridFunction,
    times: &[f64],
    dt_max: f64,
    mut step: impl FnMut(&mut [f64], f64),
) -> (Vec<Snapshot>, f64, usize) {
    let mut u = u0.values().to_vec();
    let mut snaps = vec![Snapshot { t: 0.0, u: u0.clone() }];
    let (mut dt_used, mut steps) = (0.0f64, 0usize);
    for w in times.windows(2) {
        let span = w[1] - w[0];
        let n = ((span / dt_max) - 1e-9).ceil().max(1.0) as usize;
        let dt = span / n as f64;
        for _ in 0..n {
            step(&mut u, dt);
        }
        dt_used = dt_used.max(dt);
        steps += n;
        snaps.push(Snapshot { t: w[1], u: GridFunction::new(u0.grid, u.clone()).expect("same grid") });
    }
    (snaps, dt_used, steps)
}

/// Largest stable step of the ε-problem on this grid.
pub fn eps_time_step(spec: &OperatorSpec, eps: f64, grid: &Grid, curvature: CurvatureScheme) -> Result<f64> {
    cfl_timestep_dim(2, curvature.cfl_coef(eps * spec.curvature_weight()), spec.speed_bound(), grid.h())
}

/// Solves u_t + F(εD²u, Du, x/ε) = 0 from `u0` up to `horizon`.
pub fn evolve_eps(
    spec: &OperatorSpec,
    eps: f64,
    u0: &GridFunction,
    horizon: f64,
    opts: &EvolveOptions,
) -> Result<EvolutionResult> {
    if spec.dim() != 2 {
        return Err(GeomError::Invalid("evolutions are two-dimensional".into()));
    }
    if !(eps > 0.0) {
        return Err(GeomError::Domain(format!("eps must be positive, got {eps}")));
    }
    let b = box_of(u0)?;
    let limit = eps / opts.min_resolution;
    if b.h > limit * (1.0 + 1e-9) {
        return Err(GeomError::GridTooCoarse { h: b.h, limit });
    }
    let speed = spec.speed_bound();
    let required = opts.buffer_margin * speed * horizon;
    if b.buffer_width < required * (1.0 - 1e-12) {
        return Err(GeomError::BufferTooThin { width: b.buffer_width, required });
    }
    let times = output_times(opts, horizon)?;
    let op = Assembled::new(spec, &u0.grid, eps, opts.curvature);
    let dt_max = eps_time_step(spec, eps, &u0.grid, opts.curvature)?;
    let mut pad = op.padded();
    let mut scratch = vec![0.0; u0.grid.len()];
    let (snapshots, dt, steps) = march(u0, &times, dt_max, |u, dt| op.step(u, dt, [0.0, 0.0], &mut pad, &mut scratch));
    Ok(EvolutionResult {
        snapshots,
        label: RunLabel::Eps { eps },
        dt,
        cfl: CflDiagnostics { dt_max, steps, speed_bound: speed, curvature_coef: op.cfl_coef() },
        mask: b.interior_mask(),
    })
}

fn check_table(table: &EffectiveHamiltonianTable) -> Result<()> {
    if let Some(k) = table.metadata.covered.iter().position(|&c| !c) {
        return Err(GeomError::UncoveredDirection { theta: table.directions[k] });
    }
    Ok(())
}

/// Solves u_t + H(Du) = 0 with H(q) = |q| F̄(q/|q|) by Lax–Friedrichs:
/// u_t = −H(D⁰u) + α (h/2) Δ_h u with α ≥ |∇H|.
pub fn evolve_effective(
    table: &EffectiveHamiltonianTable,
    u0: &GridFunction,
    horizon: f64,
    opts: &EvolveOptions,
) -> Result<EvolutionResult> {
    check_table(table)?;
    let b = box_of(u0)?;
    let alpha = table.gradient_bound();
    let required = opts.buffer_margin * alpha * horizon;
    if b.buffer_width < required * (1.0 - 1e-12) {
        return Err(GeomError::BufferTooThin { width: b.buffer_width, required });
    }
    let times = output_times(opts, horizon)?;
    let h = b.h;
    let dt_max = cfl_timestep_dim(2, 0.0, 2.0 * alpha, h)?;
    let [nx, ny] = b.nodes;
    let fill = u0.grid.fill_rule();
    let mut pad = Padded::new(nx, ny);
    let mut rhs = vec![0.0; nx * ny];
    let mut failure = None;
    let (snapshots, dt, steps) = march(u0, &times, dt_max, |u, dt| {
        pad.fill(u, fill);
        let pad = &pad;
        let bad = rhs
            .par_chunks_mut(ny)
            .enumerate()
            .map(|(i, row)| {
                let mut bad = None;
                for (j, o) in row.iter_mut().enumerate() {
                    let nb = Nb { data: &pad.data, c: pad.at(i, j), stride: pad.stride as isize, tilt: [0.0, 0.0] };
                    match table.eval(stencil::central_grad(&nb, h)) {
                        Ok(hq) => *o = -hq + 0.5 * alpha * h * stencil::laplacian(&nb, h),
                        Err(e) => bad = Some(e.to_string()),
                    }
                }
                bad
            })
            .reduce(|| None, |a, b| a.or(b));
        if bad.is_some() && failure.is_none() {
            failure = bad;
        }
        u.par_iter_mut().zip(rhs.par_iter()).for_each(|(v, r)| *v += dt * r);
    });
    if let Some(msg) = failure {
        return Err(GeomError::Invalid(msg));
    }
    Ok(EvolutionResult {
        snapshots,
        label: RunLabel::Effective,
        dt,
        cfl: CflDiagnostics { dt_max, steps, speed_bound: alpha, curvature_coef: 0.0 },
        mask: b.interior_mask(),
    })
}

/// Minimizes a continuous function of one variable: coarse scan, then golden section
/// around the best sample.
fn minimize_1d(f: impl Fn(f64) -> f64, lo: f64, hi: f64, samples: usize) -> f64 {
    let step = (hi - lo) / samples as f64;
    let mut best = (f(lo), lo);
    for k in 1..=samples {
        let s = lo + k as f64 * step;
        let v = f(s);
        if v < best.0 {
            best = (v, s);
        }
    }
    let (mut a, mut b) = ((best.1 - step).max(lo), (best.1 + step).min(hi));
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let (mut c, mut d) = (b - g * (b - a), a + g * (b - a));
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..80 {
        if fc < fd {
            (b, d, fd) = (d, c, fc);
            c = b - g * (b - a);
            fc = f(c);
        } else {
            (a, c, fc) = (c, d, fd);
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    best.0.min(fc).min(fd)
}

/// Effective solution for the cone u₀ = −|x| by the Hopf formula:
/// u(x, t) = min(0, g) with g = min_ν (x·ν − t F̄(ν)). Returns (u, g).
pub fn hopf_cone(table: &EffectiveHamiltonianTable, x: [f64; 2], t: f64) -> Result<(f64, f64)> {
    check_table(table)?;
    let f = |th: f64| {
        let (c, s) = (th.cos(), th.sin());
        x[0] * c + x[1] * s - t * table.value_at_angle(th).expect("complete table")
    };
    let g = minimize_1d(f, -PI, PI, 8 * table.len());
    Ok((g.min(0.0), g))
}

/// Effective solution for the V-shaped level-set data U₀ = cot α · max_{ν∈A} ν x₁ − x₂ by
/// the Hopf formula: U = sup over q = (s, −1), s in the hull of cot α·A, of x·q − t H(q).
pub fn hopf_vshape(table: &EffectiveHamiltonianTable, x: [f64; 2], t: f64, alpha: f64, a_set: &[f64]) -> Result<f64> {
    check_table(table)?;
    if a_set.is_empty() {
        return Err(GeomError::Invalid("empty direction set".into()));
    }
    let cot = alpha.cos() / alpha.sin();
    let lo = a_set.iter().copied().fold(f64::INFINITY, f64::min) * cot;
    let hi = a_set.iter().copied().fold(f64::NEG_INFINITY, f64::max) * cot;
    let neg = |s: f64| -(x[0] * s - x[1] - t * table.eval([s, -1.0]).expect("complete table"));
    if hi - lo <= 0.0 {
        return Ok(-neg(lo));
    }
    Ok(-minimize_1d(neg, lo, hi, 8 * table.len()))
}

/// Effective solution for planar data p·x: p·x − t H(p).
pub fn hopf_plane(table: &EffectiveHamiltonianTable, p: [f64; 2], x: [f64; 2], t: f64) -> Result<f64> {
    check_table(table)?;
    Ok(p[0] * x[0] + p[1] * x[1] - t * table.eval(p)?)
}

/// φ^ε(r, t) samples of φ_t − (ε/r)φ_r − |φ_r| = 0, φ(r, 0) = −r.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadialResult {
    pub eps: f64,
    pub h: f64,
    pub r: Vec<f64>,
    pub snapshots: Vec<(f64, Vec<f64>)>,
    pub dt: f64,
    pub steps: usize,
}

impl RadialResult {
    pub fn r_min(&self) -> f64 {
        self.r[0]
    }

    /// Linear interpolation at radius r of the snapshot at time t; only r > t + 3h is
    /// trusted (the core r < 2h and its domain of influence are excluded).
    pub fn query(&self, r: f64, t: f64) -> Result<f64> {
        let limit = t + 3.0 * self.h;
        if !(r > limit) || r > *self.r.last().unwrap() {
            return Err(GeomError::OutsideClosedForm { r, limit });
        }
        let (_, phi) = self
            .snapshots
            .iter()
            .find(|(s, _)| (s - t).abs() <= 1e-12 * t.max(1.0))
            .ok_or_else(|| GeomError::Invalid(format!("no snapshot at t = {t}")))?;
        let s = (r - self.r[0]) / self.h;
        let k = (s.floor() as usize).min(self.r.len() - 2);
        let w = s - k as f64;
        Ok((1.0 - w) * phi[k] + w * phi[k + 1])
    }
}

/// Upwind scheme on r_i = (i + 2)h, i < N, h = r_max/(N + 1): transport (ε/r)φ_r from the
/// right and |φ_r| by the expanding Rouy–Tourin branch. Ghosts are linearly extrapolated.
pub fn evolve_radial(eps: f64, r_max: f64, horizon: f64, n: usize, snapshots: &[f64]) -> Result<RadialResult> {
    if !(eps > 0.0) || !(r_max > 0.0) || n < 4 {
        return Err(GeomError::Invalid(format!("bad radial setup: eps {eps}, r_max {r_max}, N {n}")));
    }
    let opts = EvolveOptions { snapshots: snapshots.to_vec(), ..Default::default() };
    let times = output_times(&opts, horizon)?;
    let h = r_max / (n + 1) as f64;
    let r: Vec<f64> = (0..n).map(|i| (i + 2) as f64 * h).collect();
    let dt_max = 0.9 * h / (1.0 + eps / r[0]);
    let coef: Vec<f64> = r.iter().map(|ri| eps / ri).collect();
    let mut phi: Vec<f64> = r.iter().map(|ri| -ri).collect();
    let mut next = phi.clone();
    let mut out = vec![(0.0, phi.clone())];
    let (mut dt_used, mut steps) = (0.0f64, 0usize);
    for w in times.windows(2) {
        let span = w[1] - w[0];
        let m = ((span / dt_max) - 1e-9).ceil().max(1.0) as usize;
        let dt = span / m as f64;
        for _ in 0..m {
            let left = 2.0 * phi[0] - phi[1];
            let right = 2.0 * phi[n - 1] - phi[n - 2];
            for i in 0..n {
                let lo = if i == 0 { left } else { phi[i - 1] };
                let hi = if i == n - 1 { right } else { phi[i + 1] };
                let dp = (hi - phi[i]) / h;
                let dm = (phi[i] - lo) / h;
                next[i] = phi[i] + dt * (coef[i] * dp + dp.max(-dm).max(0.0));
            }
            std::mem::swap(&mut phi, &mut next);
        }
        dt_used = dt_used.max(dt);
        steps += m;
        out.push((w[1], phi.clone()));
    }
    Ok(RadialResult { eps, h, r, snapshots: out, dt: dt_used, steps })
}
