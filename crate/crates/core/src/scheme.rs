//! The assembled monotone right-hand side R[u] of u_t = R[u] = −F(κD²u, Du, x/scale).

use rayon::prelude::*;

use crate::error::Result;
use crate::grid::stencil::{self, Branch, Fill, Jac, Nb, Padded};
use crate::grid::{cfl_timestep_dim, CurvatureScheme, Grid};
use crate::operators::{OperatorKind, OperatorSpec, Perturbation};

#[derive(Clone, Copy, Debug, PartialEq)]
enum Physics {
    Mcf,
    G,
}

pub(crate) struct Assembled {
    physics: Physics,
    pub curvature: CurvatureScheme,
    pub kappa: f64,
    pub h: f64,
    pub nx: usize,
    pub ny: usize,
    pub fill: Fill,
    force: Vec<f64>,
    flow: Vec<[f64; 2]>,
    shifts: usize,
    flow_pick: Perturbation,
    speed: f64,
}

impl Assembled {
    /// Nodal coefficients for the operator sampled at y = x/scale; κ = scale·(1 or d).
    pub fn new(spec: &OperatorSpec, grid: &Grid, scale: f64, curvature: CurvatureScheme) -> Self {
        let [nx, ny] = grid.shape();
        let n = nx * ny;
        let y_of = |k: usize| {
            let x = grid.coord(k / ny, k % ny);
            [x[0] / scale, x[1] / scale]
        };
        let (physics, force, flow, shifts, speed) = match spec.kind() {
            OperatorKind::ForcedMcf { .. } => {
                let c = spec.force().expect("forced MCF has a force");
                let force: Vec<f64> = (0..n).into_par_iter().map(|k| c.value_at(&y_of(k))).collect();
                let speed = force.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                (Physics::Mcf, force, Vec::new(), 0, speed)
            }
            OperatorKind::CurvatureG { flow, .. } => {
                let shift_list = spec_shifts(spec);
                let k_shifts = shift_list.len();
                let mut vel = Vec::with_capacity(n * k_shifts);
                for k in 0..n {
                    let y = y_of(k);
                    for e in &shift_list {
                        vel.push(flow.eval(&[y[0] + e[0], y[1] + e[1]]));
                    }
                }
                (Physics::G, Vec::new(), vel, k_shifts, 1.0 + flow.amplitude)
            }
        };
        Assembled {
            physics,
            curvature,
            kappa: scale * spec.curvature_weight(),
            h: grid.h(),
            nx,
            ny,
            fill: grid.fill_rule(),
            force,
            flow,
            shifts,
            flow_pick: spec.perturbation(),
            speed,
        }
    }

    pub fn cfl_coef(&self) -> f64 {
        self.curvature.cfl_coef(self.kappa)
    }

    /// Explicit step bound, with `extra_rate` added to the speed budget (in units of 1/h).
    pub fn dt(&self, extra_speed: f64) -> Result<f64> {
        cfl_timestep_dim(2, self.cfl_coef(), self.speed + extra_speed, self.h)
    }

    pub fn padded(&self) -> Padded {
        Padded::new(self.nx, self.ny)
    }

    /// R at node k; pushes dR/du entries when `jac` is given.
    #[inline]
    pub fn rhs_node(&self, k: usize, nb: &Nb, mut jac: Option<&mut Jac>) -> f64 {
        let h = self.h;
        match self.physics {
            Physics::Mcf => {
                let c = self.force[k];
                let curv = if self.kappa != 0.0 {
                    self.kappa * self.curvature.eval(nb, h, self.kappa, jac.as_deref_mut())
                } else {
                    0.0
                };
                if c == 0.0 {
                    return curv;
                }
                let branch = if c >= 0.0 { Branch::Grow } else { Branch::Shrink };
                curv + c * stencil::rt_norm(nb, h, branch, c, jac)
            }
            Physics::G => {
                let mark = jac.as_ref().map(|j| j.len());
                let grad = stencil::rt_norm(nb, h, Branch::Shrink, -1.0, jac.as_deref_mut());
                let curv = self.kappa * self.curvature.eval(nb, h, self.kappa, jac.as_deref_mut());
                let inner = grad - curv;
                let mut out = 0.0;
                if inner > 0.0 {
                    out -= inner;
                } else if let (Some(j), Some(m)) = (jac.as_deref_mut(), mark) {
                    j.truncate(m);
                }
                let vel = &self.flow[k * self.shifts..(k + 1) * self.shifts];
                if self.shifts == 1 {
                    out -= stencil::advect(nb, h, vel[0], -1.0, jac);
                } else {
                    // F perturbed by sup (resp. inf) over shifts: pick the extreme transport term
                    let mut best = 0;
                    let mut best_val = stencil::advect(nb, h, vel[0], 1.0, None);
                    for (s, v) in vel.iter().enumerate().skip(1) {
                        let val = stencil::advect(nb, h, *v, 1.0, None);
                        let better = match self.flow_pick {
                            Perturbation::Sup(_) => val > best_val,
                            _ => val < best_val,
                        };
                        if better {
                            best = s;
                            best_val = val;
                        }
                    }
                    out -= stencil::advect(nb, h, vel[best], -1.0, jac);
                }
                out
            }
        }
    }

    /// R at every node (tilt = p h for cell problems). `pad` must already hold u.
    pub fn rhs_all(&self, pad: &Padded, tilt: [f64; 2], out: &mut [f64]) {
        let ny = self.ny;
        out.par_chunks_mut(ny).enumerate().for_each(|(i, row)| {
            for (j, o) in row.iter_mut().enumerate() {
                let nb = Nb { data: &pad.data, c: pad.at(i, j), stride: pad.stride as isize, tilt };
                *o = self.rhs_node(i * ny + j, &nb, None);
            }
        });
    }

    /// One forward-Euler step u ← u + dt R[u], reusing `pad` and `scratch`.
    pub fn step(&self, u: &mut [f64], dt: f64, tilt: [f64; 2], pad: &mut Padded, scratch: &mut [f64]) {
        pad.fill(u, self.fill);
        self.rhs_all(pad, tilt, scratch);
        u.par_iter_mut().zip(scratch.par_iter()).for_each(|(v, r)| *v += dt * r);
    }
}

fn spec_shifts(spec: &OperatorSpec) -> Vec<[f64; 2]> {
    crate::operators::shift_samples(spec.perturbation().eta())
}
