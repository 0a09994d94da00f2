//! Uniform periodic and truncated 2-d lattices and the monotone difference operators.

pub(crate) mod stencil;

use serde::{Deserialize, Serialize};

use crate::error::{GeomError, Result};
use crate::operators::{FlowField, OperatorSpec};
use stencil::{Branch, Fill, Nb, Padded};

pub use stencil::CurvatureScheme;

/// Torus `[0, period)²` with `nodes` points per axis.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeriodicGrid {
    pub nodes: usize,
    pub period: f64,
}

impl PeriodicGrid {
    pub fn new(nodes: usize, period: f64) -> Result<Self> {
        if nodes < 8 {
            return Err(GeomError::Invalid(format!("periodic grid needs N >= 8, got {nodes}")));
        }
        if !(period > 0.0) {
            return Err(GeomError::Invalid(format!("period must be positive, got {period}")));
        }
        Ok(PeriodicGrid { nodes, period })
    }
    pub fn h(&self) -> f64 {
        self.period / self.nodes as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum BoundaryRule {
    #[default]
    ExtrapolateLinear,
    Clamp,
}

/// Truncated box `lower + [0, (N-1)h]` per axis.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxGrid {
    pub lower: [f64; 2],
    pub nodes: [usize; 2],
    pub h: f64,
    pub boundary: BoundaryRule,
    /// Width next to the boundary excluded from error norms.
    pub buffer_width: f64,
}

impl BoxGrid {
    pub fn new(lower: [f64; 2], nodes: [usize; 2], h: f64, boundary: BoundaryRule, buffer_width: f64) -> Result<Self> {
        if nodes[0] < 3 || nodes[1] < 3 || !(h > 0.0) {
            return Err(GeomError::Invalid(format!("bad box grid: nodes {nodes:?}, h {h}")));
        }
        Ok(BoxGrid { lower, nodes, h, boundary, buffer_width })
    }

    /// Square box `[-L', L']²` with `L' >= half_width` a multiple of h; the origin is a node.
    pub fn centered(half_width: f64, h: f64, boundary: BoundaryRule, buffer_width: f64) -> Result<Self> {
        let m = (half_width / h - 1e-9).ceil().max(1.0) as usize;
        let lo = -(m as f64) * h;
        Self::new([lo, lo], [2 * m + 1, 2 * m + 1], h, boundary, buffer_width)
    }

    pub fn upper(&self) -> [f64; 2] {
        [self.lower[0] + (self.nodes[0] - 1) as f64 * self.h, self.lower[1] + (self.nodes[1] - 1) as f64 * self.h]
    }

    /// The mask of nodes at distance >= buffer_width from the boundary.
    pub fn interior_mask(&self) -> Mask {
        let g = Grid::Box(*self);
        let up = self.upper();
        Mask::from_fn(&g, |x| {
            (0..2)
                .all(|a| x[a] - self.lower[a] >= self.buffer_width - 1e-12 && up[a] - x[a] >= self.buffer_width - 1e-12)
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Grid {
    Periodic(PeriodicGrid),
    Box(BoxGrid),
}

impl Grid {
    pub fn shape(&self) -> [usize; 2] {
        match self {
            Grid::Periodic(g) => [g.nodes, g.nodes],
            Grid::Box(b) => b.nodes,
        }
    }
    pub fn len(&self) -> usize {
        let [a, b] = self.shape();
        a * b
    }
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
    pub fn h(&self) -> f64 {
        match self {
            Grid::Periodic(g) => g.h(),
            Grid::Box(b) => b.h,
        }
    }
    pub fn coord(&self, i: usize, j: usize) -> [f64; 2] {
        match self {
            Grid::Periodic(g) => [i as f64 * g.h(), j as f64 * g.h()],
            Grid::Box(b) => [b.lower[0] + i as f64 * b.h, b.lower[1] + j as f64 * b.h],
        }
    }
    pub(crate) fn fill_rule(&self) -> Fill {
        match self {
            Grid::Periodic(_) => Fill::Periodic,
            Grid::Box(b) => match b.boundary {
                BoundaryRule::ExtrapolateLinear => Fill::Extrapolate,
                BoundaryRule::Clamp => Fill::Clamp,
            },
        }
    }
}

/// Scalar samples, row-major over (i along x₁, j along x₂).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridFunction {
    pub grid: Grid,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(GeomError::ShapeMismatch(format!(
                "grid has {} nodes, got {} values",
                grid.len(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(GeomError::Invalid("grid values must be finite".into()));
        }
        Ok(GridFunction { grid, values })
    }

    pub fn from_fn(grid: Grid, f: impl Fn([f64; 2]) -> f64) -> Self {
        let [nx, ny] = grid.shape();
        let mut values = Vec::with_capacity(nx * ny);
        for i in 0..nx {
            for j in 0..ny {
                values.push(f(grid.coord(i, j)));
            }
        }
        GridFunction { grid, values }
    }

    pub fn constant(grid: Grid, k: f64) -> Self {
        GridFunction { grid, values: vec![k; grid.len()] }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
    #[cfg(test)]
    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }
    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.grid.shape()[1] + j]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        GridFunction { grid: self.grid, values: self.values.iter().map(|&v| f(v)).collect() }
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }
    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Bilinear interpolation (periodic wrap, or clamped to the box).
    pub fn interpolate(&self, x: [f64; 2]) -> f64 {
        let [nx, ny] = self.grid.shape();
        let h = self.grid.h();
        let (s, periodic) = match self.grid {
            Grid::Periodic(_) => ([x[0] / h, x[1] / h], true),
            Grid::Box(b) => (
                [
                    ((x[0] - b.lower[0]) / h).clamp(0.0, (nx - 1) as f64),
                    ((x[1] - b.lower[1]) / h).clamp(0.0, (ny - 1) as f64),
                ],
                false,
            ),
        };
        let idx = |k: i64, n: usize| -> usize {
            if periodic {
                k.rem_euclid(n as i64) as usize
            } else {
                k.clamp(0, n as i64 - 1) as usize
            }
        };
        let (f0, f1) = (s[0].floor(), s[1].floor());
        let (t0, t1) = (s[0] - f0, s[1] - f1);
        let (i0, j0) = (f0 as i64, f1 as i64);
        let v = |a: i64, b: i64| self.values[idx(a, nx) * ny + idx(b, ny)];
        let mut acc = (1.0 - t0) * (1.0 - t1) * v(i0, j0);
        if t0 > 0.0 {
            acc += t0 * (1.0 - t1) * v(i0 + 1, j0);
        }
        if t1 > 0.0 {
            acc += (1.0 - t0) * t1 * v(i0, j0 + 1);
        }
        if t0 > 0.0 && t1 > 0.0 {
            acc += t0 * t1 * v(i0 + 1, j0 + 1);
        }
        acc
    }

    pub(crate) fn padded(&self) -> Padded {
        let [nx, ny] = self.grid.shape();
        let mut p = Padded::new(nx, ny);
        p.fill(&self.values, self.grid.fill_rule());
        p
    }

    fn nodewise(&self, tilt: [f64; 2], f: impl Fn(&Nb) -> f64) -> GridFunction {
        let pad = self.padded();
        let [nx, ny] = self.grid.shape();
        let mut out = Vec::with_capacity(nx * ny);
        for i in 0..nx {
            for j in 0..ny {
                let nb = Nb { data: &pad.data, c: pad.at(i, j), stride: pad.stride as isize, tilt };
                out.push(f(&nb));
            }
        }
        GridFunction { grid: self.grid, values: out }
    }

    pub fn to_doc(&self) -> GridDoc {
        let [nx, ny] = self.grid.shape();
        let (period, lower) = match self.grid {
            Grid::Periodic(g) => (Some(g.period), None),
            Grid::Box(b) => (None, Some(b.lower)),
        };
        GridDoc { period, lower, spacing: self.grid.h(), shape: vec![nx, ny], values: self.values.clone() }
    }

    /// Inverse of [`to_doc`](Self::to_doc); a box is read with the default boundary rule and no buffer.
    pub fn from_doc(doc: GridDoc) -> Result<Self> {
        if doc.shape.len() != 2 {
            return Err(GeomError::ShapeMismatch(format!("expected a 2-d grid, got shape {:?}", doc.shape)));
        }
        let grid = match (doc.period, doc.lower) {
            (Some(period), None) => {
                if doc.shape[0] != doc.shape[1] || (period / doc.shape[0] as f64 - doc.spacing).abs() > 1e-12 * period {
                    return Err(GeomError::ShapeMismatch("periodic grid must be square with spacing period/N".into()));
                }
                Grid::Periodic(PeriodicGrid::new(doc.shape[0], period)?)
            }
            (None, Some(lower)) => {
                Grid::Box(BoxGrid::new(lower, [doc.shape[0], doc.shape[1]], doc.spacing, BoundaryRule::default(), 0.0)?)
            }
            _ => return Err(GeomError::Invalid("grid document needs exactly one of period, lower".into())),
        };
        Self::new(grid, doc.values)
    }

    /// CSV slice `x,value` along axis 0 at column `j` (or axis 1 at row `i`).
    pub fn csv_slice(&self, axis: usize, index: usize) -> String {
        let [nx, ny] = self.grid.shape();
        let mut s = String::from("x,value\n");
        let count = if axis == 0 { nx } else { ny };
        for k in 0..count {
            let (i, j) = if axis == 0 { (k, index) } else { (index, k) };
            let x = self.grid.coord(i, j)[axis];
            s.push_str(&format!("{x},{}\n", self.at(i, j)));
        }
        s
    }
}

/// Snapshot export: the force-field schema extended with box placement.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridDoc {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub period: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub lower: Option<[f64; 2]>,
    pub spacing: f64,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mask {
    include: Vec<bool>,
}

impl Mask {
    pub fn all(grid: &Grid) -> Self {
        Mask { include: vec![true; grid.len()] }
    }
    pub fn from_fn(grid: &Grid, f: impl Fn([f64; 2]) -> bool) -> Self {
        let [nx, ny] = grid.shape();
        let mut include = Vec::with_capacity(nx * ny);
        for i in 0..nx {
            for j in 0..ny {
                include.push(f(grid.coord(i, j)));
            }
        }
        Mask { include }
    }
    pub fn from_flags(grid: &Grid, include: Vec<bool>) -> Result<Self> {
        if include.len() != grid.len() {
            return Err(GeomError::ShapeMismatch(format!("{} flags for {} nodes", include.len(), grid.len())));
        }
        Ok(Mask { include })
    }
    pub fn and(&self, other: &Mask) -> Self {
        Mask { include: self.include.iter().zip(&other.include).map(|(a, b)| *a && *b).collect() }
    }
    pub fn len(&self) -> usize {
        self.include.len()
    }
    pub fn is_empty(&self) -> bool {
        self.include.is_empty()
    }
    pub fn count(&self) -> usize {
        self.include.iter().filter(|&&b| b).count()
    }
    pub fn contains(&self, k: usize) -> bool {
        self.include[k]
    }
}

/// |Du| by Rouy–Tourin. `speed_sign` is the sign of s in u_t + s|Du| = 0: `+1` combines
/// max(D⁻u, 0)² and min(D⁺u, 0)² per axis, `-1` the mirrored choice.
pub fn upwind_gradient_norm(u: &GridFunction, speed_sign: i8) -> GridFunction {
    let branch = if speed_sign >= 0 { Branch::Shrink } else { Branch::Grow };
    let h = u.grid.h();
    u.nodewise([0.0, 0.0], |nb| stencil::rt_norm(nb, h, branch, 1.0, None))
}

/// Σᵢⱼ (δᵢⱼ − uᵢuⱼ/(|Du|² + δ_g²)) uᵢⱼ with central differences.
pub fn curvature_term(u: &GridFunction, delta_g: f64) -> GridFunction {
    let h = u.grid.h();
    u.nodewise([0.0, 0.0], |nb| stencil::compact_curv(nb, h, delta_g, 1.0, None))
}

/// Monotone median approximation of tr{(I − p̂⊗p̂)D²u}.
pub fn median_curvature_term(u: &GridFunction) -> GridFunction {
    let h = u.grid.h();
    u.nodewise([0.0, 0.0], |nb| stencil::median_curv(nb, h, 1.0, None))
}

/// Upwind V·Du for the cellular flow evaluated at x/scale (scale = 1 at cell scale).
pub fn advect_upwind(u: &GridFunction, flow: &FlowField, scale: f64) -> GridFunction {
    advect_upwind_with(u, |x| flow.eval(&[x[0] / scale, x[1] / scale]))
}

/// Upwind V·Du for an arbitrary velocity field, oriented for u_t + V·Du = 0.
pub fn advect_upwind_with(u: &GridFunction, v: impl Fn([f64; 2]) -> [f64; 2]) -> GridFunction {
    let h = u.grid.h();
    let vel: Vec<[f64; 2]> = {
        let [nx, ny] = u.grid.shape();
        (0..nx * ny).map(|k| v(u.grid.coord(k / ny, k % ny))).collect()
    };
    let [_, ny] = u.grid.shape();
    let pad = u.padded();
    let values = (0..u.grid.len())
        .map(|k| {
            let nb = Nb { data: &pad.data, c: pad.at(k / ny, k % ny), stride: pad.stride as isize, tilt: [0.0; 2] };
            stencil::advect(&nb, h, vel[k], 1.0, None)
        })
        .collect();
    GridFunction { grid: u.grid, values }
}

/// dt = 0.4 / (2n·curvature_coef/h² + speed_bound/h).
pub fn cfl_timestep(spec: &OperatorSpec, curvature_coef: f64, speed_bound: f64, h: f64) -> Result<f64> {
    cfl_timestep_dim(spec.dim(), curvature_coef, speed_bound, h)
}

pub(crate) const CFL_SAFETY: f64 = 0.4;

pub(crate) fn cfl_timestep_dim(n: usize, curvature_coef: f64, speed_bound: f64, h: f64) -> Result<f64> {
    if !(h > 0.0) || curvature_coef < 0.0 || speed_bound < 0.0 {
        return Err(GeomError::Invalid(format!(
            "cfl inputs must be nonnegative with h > 0 (coef {curvature_coef}, speed {speed_bound}, h {h})"
        )));
    }
    let denom = 2.0 * n as f64 * curvature_coef / (h * h) + speed_bound / h;
    if denom == 0.0 {
        return Err(GeomError::NoDynamics);
    }
    Ok(CFL_SAFETY / denom)
}

/// max |a − b| over the mask.
pub fn sup_norm_diff(a: &GridFunction, b: &GridFunction, mask: &Mask) -> Result<f64> {
    if a.grid.shape() != b.grid.shape() || mask.len() != a.values.len() {
        return Err(GeomError::ShapeMismatch(format!(
            "{:?} vs {:?} (mask {})",
            a.grid.shape(),
            b.grid.shape(),
            mask.len()
        )));
    }
    Ok(a.values
        .iter()
        .zip(&b.values)
        .enumerate()
        .filter(|(k, _)| mask.include[*k])
        .fold(0.0, |m, (_, (x, y))| m.max((x - y).abs())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn boxg(n: usize, h: f64) -> Grid {
        Grid::Box(
            BoxGrid::new([-(n as f64 - 1.0) * h / 2.0; 2], [n, n], h, BoundaryRule::ExtrapolateLinear, 0.0).unwrap(),
        )
    }

    fn interior(u: &GridFunction, margin: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        let [nx, ny] = u.grid.shape();
        (margin..nx - margin).flat_map(move |i| (margin..ny - margin).map(move |j| (i, j)))
    }

    #[test]
    fn gradient_norm_basics() {
        let g = boxg(11, 0.1);
        let zero = GridFunction::constant(g, 0.0);
        assert!(upwind_gradient_norm(&zero, 1).values().iter().all(|&v| v == 0.0));
        let lin = GridFunction::from_fn(g, |x| x[0]);
        for s in [1, -1] {
            let r = upwind_gradient_norm(&lin, s);
            for (i, j) in interior(&r, 1) {
                assert!((r.at(i, j) - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gradient_norm_of_sine() {
        let g = Grid::Periodic(PeriodicGrid::new(256, 2.0 * PI).unwrap());
        let u = GridFunction::from_fn(g, |x| x[0].sin());
        let h = g.h();
        for s in [1, -1] {
            let r = upwind_gradient_norm(&u, s);
            let m = GridFunction::from_fn(g, |x| x[0].cos().abs());
            assert!(sup_norm_diff(&r, &m, &Mask::all(&g)).unwrap() <= 2.0 * h);
        }
    }

    #[test]
    fn curvature_term_examples() {
        let h = 0.01;
        let g = boxg(401, h);
        let lin = GridFunction::from_fn(g, |x| 2.0 * x[0] - x[1]);
        let k = curvature_term(&lin, h);
        for (i, j) in interior(&k, 1) {
            assert!(k.at(i, j).abs() < 1e-9);
        }
        let quad = GridFunction::from_fn(g, |x| 0.5 * (x[0] * x[0] + x[1] * x[1]));
        assert!((curvature_term(&quad, h).at(200, 200) - 2.0).abs() < 1e-9);
        assert!((median_curvature_term(&quad).at(200, 200) - 1.0).abs() < 1e-9);
        let cone = GridFunction::from_fn(g, |x| (x[0] * x[0] + x[1] * x[1]).sqrt());
        // |x| = 2 at node (200 + 200, 200)
        let big = boxg(801, h);
        let cone_big = GridFunction::from_fn(big, |x| (x[0] * x[0] + x[1] * x[1]).sqrt());
        let val = curvature_term(&cone_big, h).at(600, 400);
        assert!((val - 0.5).abs() <= 2.0 * h + h, "{val}");
        let med = median_curvature_term(&cone_big).at(600, 400);
        assert!((med - 0.5).abs() <= 2.0 * h + h, "{med}");
        let _ = cone;
    }

    #[test]
    fn advection_examples() {
        let g = Grid::Periodic(PeriodicGrid::new(64, 2.0 * PI).unwrap());
        let c = GridFunction::constant(g, 3.0);
        assert!(advect_upwind(&c, &FlowField::new(2.0).unwrap(), 1.0).values().iter().all(|&v| v == 0.0));
        let s = GridFunction::from_fn(g, |x| x[0].sin() * x[1].cos());
        assert!(advect_upwind(&s, &FlowField::new(0.0).unwrap(), 1.0).values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn transport_one_period() {
        let n = 256;
        let g = Grid::Periodic(PeriodicGrid::new(n, 2.0 * PI).unwrap());
        let h = g.h();
        let mut u = GridFunction::from_fn(g, |x| x[0].sin());
        let t_end = 2.0 * PI;
        let steps = (t_end / (0.4 * h)).ceil() as usize;
        let dt = t_end / steps as f64;
        for _ in 0..steps {
            let a = advect_upwind_with(&u, |_| [1.0, 0.0]);
            for (v, da) in u.values_mut().iter_mut().zip(a.values()) {
                *v -= dt * da;
            }
        }
        let exact = GridFunction::from_fn(g, |x| (x[0] - t_end).sin());
        assert!(sup_norm_diff(&u, &exact, &Mask::all(&g)).unwrap() <= 5.0 * h);
    }

    #[test]
    fn cfl_examples() {
        let n = 2;
        assert!((cfl_timestep_dim(n, 0.0, 1.0, 0.01).unwrap() - 0.004).abs() < 1e-15);
        let dt = cfl_timestep_dim(n, 0.1, 2.0, 0.01).unwrap();
        assert!((dt - 0.4 / 4200.0).abs() < 1e-15);
        assert!((dt - 9.52e-5).abs() < 1e-7);
        let a = cfl_timestep_dim(n, 1.0, 0.0, 0.01).unwrap();
        let b = cfl_timestep_dim(n, 1.0, 0.0, 0.02).unwrap();
        assert!((b / a - 4.0).abs() < 1e-12);
        assert!(matches!(cfl_timestep_dim(n, 0.0, 0.0, 0.01), Err(GeomError::NoDynamics)));
    }

    #[test]
    fn sup_norm_examples() {
        let g = Grid::Periodic(PeriodicGrid::new(16, 1.0).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = GridFunction::new(g, (0..g.len()).map(|_| rng.gen_range(0..1024) as f64 / 1024.0).collect()).unwrap();
        let m = Mask::all(&g);
        assert_eq!(sup_norm_diff(&a, &a, &m).unwrap(), 0.0);
        assert_eq!(sup_norm_diff(&a, &a.map(|v| v + 0.5), &m).unwrap(), 0.5);
        let b = GridFunction::new(g, a.values().iter().map(|_| rng.gen::<f64>()).collect()).unwrap();
        let brute = a.values().iter().zip(b.values()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert_eq!(sup_norm_diff(&a, &b, &m).unwrap(), brute);
        let other = GridFunction::constant(Grid::Periodic(PeriodicGrid::new(8, 1.0).unwrap()), 0.0);
        assert!(sup_norm_diff(&a, &other, &m).is_err());
    }

    #[test]
    fn extrapolated_ghosts_keep_linear_data_exact() {
        let g = boxg(9, 0.25);
        let lin = GridFunction::from_fn(g, |x| 0.3 * x[0] - 1.7 * x[1] + 0.2);
        for (i, j) in interior(&lin, 0) {
            assert!(curvature_term(&lin, 0.25).at(i, j).abs() < 1e-10);
            assert!(median_curvature_term(&lin).at(i, j).abs() < 1e-10);
            assert!((upwind_gradient_norm(&lin, 1).at(i, j) - (0.09f64 + 1.7 * 1.7).sqrt()).abs() < 1e-10);
        }
    }

    fn random_field(seed: u64, g: Grid) -> GridFunction {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vals = (0..g.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        GridFunction::new(g, vals).unwrap()
    }

    proptest! {
        #[test]
        fn constant_invariance(seed in 0u64..1000, k in -100i32..100) {
            // dyadic data and integer shifts make every difference exact
            let g = Grid::Periodic(PeriodicGrid::new(8, 1.0).unwrap());
            let u = random_field(seed, g).map(|x| (x * 1024.0).round() / 1024.0);
            let v = u.map(|x| x + k as f64);
            prop_assert_eq!(upwind_gradient_norm(&u, 1), upwind_gradient_norm(&v, 1));
            prop_assert_eq!(upwind_gradient_norm(&u, -1), upwind_gradient_norm(&v, -1));
            prop_assert_eq!(curvature_term(&u, 0.1), curvature_term(&v, 0.1));
            prop_assert_eq!(median_curvature_term(&u), median_curvature_term(&v));
        }

        #[test]
        fn scaling_equivariance(seed in 0u64..1000, e in -3i32..4) {
            let a = 2f64.powi(e);
            let g = Grid::Periodic(PeriodicGrid::new(8, 1.0).unwrap());
            let u = random_field(seed, g);
            let au = u.map(|x| a * x);
            let scaled = |f: GridFunction| f.map(|x| a * x);
            prop_assert_eq!(upwind_gradient_norm(&au, 1), scaled(upwind_gradient_norm(&u, 1)));
            prop_assert_eq!(curvature_term(&au, a * 0.1), scaled(curvature_term(&u, 0.1)));
            prop_assert_eq!(median_curvature_term(&au), scaled(median_curvature_term(&u)));
        }

        #[test]
        fn affine_reproduction(a in -3.0..3.0f64, b in -3.0..3.0f64, c in -1.0..1.0f64) {
            let g = boxg(9, 0.125);
            let u = GridFunction::from_fn(g, |x| a * x[0] + b * x[1] + c);
            let norm = (a * a + b * b).sqrt();
            for s in [1i8, -1] {
                let r = upwind_gradient_norm(&u, s);
                for (i, j) in interior(&r, 1) {
                    prop_assert!((r.at(i, j) - norm).abs() < 1e-9);
                }
            }
        }
    }
}
