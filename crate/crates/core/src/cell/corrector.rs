//! Discounted cell problem λw + F_h(D²w, p + Dw, y) = 0 on the periodic cell.

use faer::linalg::solvers::Solve;
use faer::sparse::{SparseColMat, Triplet};
use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::error::{GeomError, Result};
use crate::grid::stencil::{Jac, Nb, Padded};
use crate::grid::{CurvatureScheme, Grid, GridFunction, PeriodicGrid};
use crate::operators::OperatorSpec;
use crate::scheme::Assembled;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CorrectorMethod {
    /// Pseudo-transient continuation with Newton steps on the frozen upwind/median policy.
    #[default]
    Newton,
    /// Damped fixed point w ← w − τ(λw + F_h[w]) with τ from the CFL bound.
    Explicit,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrectorOptions {
    pub tol: f64,
    pub max_steps: usize,
    pub method: CorrectorMethod,
    pub curvature: CurvatureScheme,
}

impl Default for CorrectorOptions {
    fn default() -> Self {
        CorrectorOptions {
            tol: 1e-8,
            max_steps: 400,
            method: CorrectorMethod::Newton,
            curvature: CurvatureScheme::Median,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrectorSolution {
    pub w: GridFunction,
    pub p: [f64; 2],
    pub lambda: f64,
    pub eta: f64,
    pub residual: f64,
    pub tol: f64,
    pub amplitude: f64,
    pub effective_bracket: [f64; 2],
    pub effective_estimate: f64,
    pub converged: bool,
    pub iterations: usize,
    pub method: CorrectorMethod,
}

struct CellProblem<'a> {
    op: &'a Assembled,
    lambda: f64,
    tilt: [f64; 2],
    pad: Padded,
}

impl<'a> CellProblem<'a> {
    /// r = λw − R[p·y + w]
    fn residual(&mut self, w: &[f64], out: &mut [f64]) {
        self.pad.fill(w, self.op.fill);
        self.op.rhs_all(&self.pad, self.tilt, out);
        for (r, &wk) in out.iter_mut().zip(w) {
            *r = self.lambda * wk - *r;
        }
    }

    /// (λ + 1/τ)I − dR/dw at w (policy frozen), as a sparse matrix.
    fn jacobian(&mut self, w: &[f64], shift: f64) -> Result<SparseColMat<usize, f64>> {
        let (nx, ny) = (self.op.nx, self.op.ny);
        self.pad.fill(w, self.op.fill);
        let mut trip = Vec::with_capacity(nx * ny * 10);
        let mut jac: Jac = Vec::with_capacity(64);
        let mut acc = [0.0f64; 25];
        for i in 0..nx {
            for j in 0..ny {
                let k = i * ny + j;
                jac.clear();
                let nb = Nb {
                    data: &self.pad.data,
                    c: self.pad.at(i, j),
                    stride: self.pad.stride as isize,
                    tilt: self.tilt,
                };
                self.op.rhs_node(k, &nb, Some(&mut jac));
                acc.iter_mut().for_each(|a| *a = 0.0);
                for &(di, dj, c) in &jac {
                    acc[((di + 2) * 5 + dj + 2) as usize] -= c;
                }
                acc[12] += self.lambda + shift;
                for (slot, &a) in acc.iter().enumerate() {
                    if a != 0.0 {
                        let di = slot as i64 / 5 - 2;
                        let dj = slot as i64 % 5 - 2;
                        let ii = (i as i64 + di).rem_euclid(nx as i64) as usize;
                        let jj = (j as i64 + dj).rem_euclid(ny as i64) as usize;
                        trip.push(Triplet::new(k, ii * ny + jj, a));
                    }
                }
            }
        }
        SparseColMat::try_new_from_triplets(nx * ny, nx * ny, &trip)
            .map_err(|e| GeomError::LinearSolver(format!("{e:?}")))
    }
}

fn sup(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Solves the discounted cell problem for slope `p`.
///
/// On non-convergence within `max_steps` the solution is returned with `converged = false`.
pub fn solve_approx_corrector(
    spec: &OperatorSpec,
    p: [f64; 2],
    lambda: f64,
    grid: PeriodicGrid,
    opts: &CorrectorOptions,
) -> Result<CorrectorSolution> {
    if !(lambda > 0.0) {
        return Err(GeomError::Invalid(format!("discount must be positive, got {lambda}")));
    }
    if spec.dim() != 2 {
        return Err(GeomError::Invalid("cell problems are 2-d".into()));
    }
    if (grid.period - spec.period()).abs() > 1e-12 * spec.period() {
        return Err(GeomError::IncompatibleGrids(format!(
            "cell period {} does not match operator period {}",
            grid.period,
            spec.period()
        )));
    }
    let g = Grid::Periodic(grid);
    let op = Assembled::new(spec, &g, 1.0, opts.curvature);
    let h = grid.h();
    let n = g.len();
    let mut prob =
        CellProblem { op: &op, lambda, tilt: [p[0] * h, p[1] * h], pad: Padded::new(grid.nodes, grid.nodes) };

    // start from the constant matching the mean of R[p·y]
    let mut w = vec![0.0; n];
    let mut r = vec![0.0; n];
    prob.residual(&w, &mut r);
    let start = -r.iter().sum::<f64>() / (n as f64 * lambda);
    w.iter_mut().for_each(|v| *v = start);
    prob.residual(&w, &mut r);
    let mut res = sup(&r);
    let mut best = res;
    let mut iterations = 0;
    let mut tau = match opts.method {
        CorrectorMethod::Newton => 1.0,
        CorrectorMethod::Explicit => op.dt(lambda * h)?,
    };
    let mut trial = vec![0.0; n];
    let mut r_trial = vec![0.0; n];

    while res > opts.tol && iterations < opts.max_steps {
        iterations += 1;
        match opts.method {
            CorrectorMethod::Explicit => {
                for (wk, rk) in w.iter_mut().zip(&r) {
                    *wk -= tau * rk;
                }
                prob.residual(&w, &mut r);
                res = sup(&r);
                best = best.min(res);
                if !res.is_finite() || res > 10.0 * best {
                    return Err(GeomError::CorrectorDiverged { lambda, tau, residual: res });
                }
            }
            CorrectorMethod::Newton => {
                let mat = prob.jacobian(&w, 1.0 / tau)?;
                let lu = mat.sp_lu().map_err(|e| GeomError::LinearSolver(format!("{e:?}")))?;
                let rhs = Mat::<f64>::from_fn(n, 1, |k, _| -r[k]);
                let delta = lu.solve(&rhs);
                for k in 0..n {
                    trial[k] = w[k] + delta[(k, 0)];
                }
                prob.residual(&trial, &mut r_trial);
                let res_trial = sup(&r_trial);
                if res_trial.is_finite() && res_trial < res {
                    let gain = res / res_trial.max(1e-300);
                    std::mem::swap(&mut w, &mut trial);
                    std::mem::swap(&mut r, &mut r_trial);
                    res = res_trial;
                    tau = (tau * gain.max(2.0)).min(1e12);
                } else {
                    tau *= 0.25;
                    if tau < 1e-14 {
                        break;
                    }
                }
                best = best.min(res);
            }
        }
    }

    let eta = spec.perturbation().eta();
    let w = GridFunction::new(g, w)?;
    let neg: Vec<f64> = w.values().iter().map(|v| -lambda * v).collect();
    let lo = neg.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = neg.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mean = neg.iter().sum::<f64>() / n as f64;
    Ok(CorrectorSolution {
        amplitude: w.max() - w.min(),
        w,
        p,
        lambda,
        eta,
        residual: res,
        tol: opts.tol,
        effective_bracket: [lo.min(mean), hi.max(mean)],
        effective_estimate: mean,
        converged: res <= opts.tol,
        iterations,
        method: opts.method,
    })
}

/// (estimate, bracket) of a converged solution.
pub fn effective_value(sol: &CorrectorSolution) -> Result<(f64, [f64; 2])> {
    if !sol.converged {
        return Err(GeomError::NotConverged { residual: sol.residual, tol: sol.tol });
    }
    Ok((sol.effective_estimate, sol.effective_bracket))
}
