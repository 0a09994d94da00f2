//! Pointwise finite-difference kernels on a ghost-padded 2-d array.
//!
//! Every kernel reads neighbor differences `u(x + k h) - u(x)` through [`Nb`], so an
//! affine tilt `p·x` can be carried exactly for cell problems. Kernels optionally push
//! their derivative with respect to nodal values (offset, weight) into a [`Jac`].

use serde::{Deserialize, Serialize};

pub(crate) const GHOST: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Fill {
    Periodic,
    Extrapolate,
    Clamp,
}

pub(crate) struct Padded {
    pub nx: usize,
    pub ny: usize,
    pub stride: usize,
    pub data: Vec<f64>,
}

impl Padded {
    pub fn new(nx: usize, ny: usize) -> Self {
        let stride = ny + 2 * GHOST;
        Padded { nx, ny, stride, data: vec![0.0; (nx + 2 * GHOST) * stride] }
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> usize {
        (i + GHOST) * self.stride + j + GHOST
    }

    pub fn fill(&mut self, values: &[f64], rule: Fill) {
        let (nx, ny, s, g) = (self.nx, self.ny, self.stride, GHOST);
        for i in 0..nx {
            let row = (i + g) * s + g;
            self.data[row..row + ny].copy_from_slice(&values[i * ny..(i + 1) * ny]);
        }
        // axis 1 ghosts on real rows
        for i in 0..nx {
            let row = (i + g) * s;
            for k in 1..=g {
                let (lo, hi) = match rule {
                    Fill::Periodic => (self.data[row + g + ny - k], self.data[row + g + k - 1]),
                    Fill::Clamp => (self.data[row + g], self.data[row + g + ny - 1]),
                    Fill::Extrapolate => {
                        let (a0, a1) = (self.data[row + g], self.data[row + g + 1]);
                        let (b0, b1) = (self.data[row + g + ny - 1], self.data[row + g + ny - 2]);
                        let kf = k as f64;
                        (a0 + kf * (a0 - a1), b0 + kf * (b0 - b1))
                    }
                };
                self.data[row + g - k] = lo;
                self.data[row + g + ny - 1 + k] = hi;
            }
        }
        // axis 0 ghost rows, full width
        for k in 1..=g {
            for j in 0..s {
                let (lo, hi) = match rule {
                    Fill::Periodic => (self.data[(g + nx - k) * s + j], self.data[(g + k - 1) * s + j]),
                    Fill::Clamp => (self.data[g * s + j], self.data[(g + nx - 1) * s + j]),
                    Fill::Extrapolate => {
                        let (a0, a1) = (self.data[g * s + j], self.data[(g + 1) * s + j]);
                        let (b0, b1) = (self.data[(g + nx - 1) * s + j], self.data[(g + nx - 2) * s + j]);
                        let kf = k as f64;
                        (a0 + kf * (a0 - a1), b0 + kf * (b0 - b1))
                    }
                };
                self.data[(g - k) * s + j] = lo;
                self.data[(g + nx - 1 + k) * s + j] = hi;
            }
        }
    }
}

/// Neighborhood of one node. `tilt = p h` adds `p·(k h)` to every difference.
#[derive(Clone, Copy)]
pub(crate) struct Nb<'a> {
    pub data: &'a [f64],
    pub c: usize,
    pub stride: isize,
    pub tilt: [f64; 2],
}

impl<'a> Nb<'a> {
    #[inline(always)]
    pub fn d(&self, di: isize, dj: isize) -> f64 {
        let k = (self.c as isize + di * self.stride + dj) as usize;
        self.data[k] - self.data[self.c] + self.tilt[0] * di as f64 + self.tilt[1] * dj as f64
    }
}

/// Derivative entries (di, dj, weight) with respect to nodal values.
pub(crate) type Jac = Vec<(i8, i8, f64)>;

#[inline(always)]
fn push_diff(jac: &mut Option<&mut Jac>, di: isize, dj: isize, w: f64) {
    if let Some(j) = jac.as_deref_mut() {
        j.push((di as i8, dj as i8, w));
        j.push((0, 0, -w));
    }
}

/// Which Rouy–Tourin branch to use.
///
/// `Grow` is monotone for u_t = s|Du| with s > 0 (sub-level sets advance), `Shrink`
/// for u_t = −s|Du|.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Branch {
    Grow,
    Shrink,
}

/// Rouy–Tourin |Du|; records d|Du| times `w`.
#[inline]
pub(crate) fn rt_norm(nb: &Nb, h: f64, branch: Branch, w: f64, mut jac: Option<&mut Jac>) -> f64 {
    let mut a = [0.0f64; 2];
    // offset of the neighbor the active difference uses (0 = inactive)
    let mut side = [0isize; 2];
    for axis in 0..2 {
        let (di, dj) = if axis == 0 { (1, 0) } else { (0, 1) };
        let fwd = nb.d(di, dj) / h; // D+
        let bwd = nb.d(-di, -dj) / h; // -D-
                                      // Grow: max(D+, -D-, 0); Shrink: max(D-, -D+, 0)
        let (x, sx, y, sy) = match branch {
            Branch::Grow => (fwd, 1, bwd, -1),
            Branch::Shrink => (-bwd, -1, -fwd, 1),
        };
        if x >= y && x > 0.0 {
            a[axis] = x;
            side[axis] = sx;
        } else if y > 0.0 {
            a[axis] = y;
            side[axis] = sy;
        }
    }
    let g = (a[0] * a[0] + a[1] * a[1]).sqrt();
    if jac.is_some() && g > 0.0 {
        let sign = if branch == Branch::Grow { 1.0 } else { -1.0 };
        for axis in 0..2 {
            if side[axis] != 0 {
                let (di, dj) = if axis == 0 { (side[axis], 0) } else { (0, side[axis]) };
                push_diff(&mut jac, di, dj, w * sign * a[axis] / (g * h));
            }
        }
    }
    g
}

#[inline]
pub(crate) fn central_grad(nb: &Nb, h: f64) -> [f64; 2] {
    [(nb.d(1, 0) - nb.d(-1, 0)) / (2.0 * h), (nb.d(0, 1) - nb.d(0, -1)) / (2.0 * h)]
}

/// Σ (δᵢⱼ − uᵢuⱼ/(|Du|² + δ²)) uᵢⱼ with central differences; Jacobian uses frozen coefficients.
#[inline]
pub(crate) fn compact_curv(nb: &Nb, h: f64, delta: f64, w: f64, mut jac: Option<&mut Jac>) -> f64 {
    let [u1, u2] = central_grad(nb, h);
    let h2 = h * h;
    let u11 = (nb.d(1, 0) + nb.d(-1, 0)) / h2;
    let u22 = (nb.d(0, 1) + nb.d(0, -1)) / h2;
    let u12 = (nb.d(1, 1) - nb.d(1, -1) - nb.d(-1, 1) + nb.d(-1, -1)) / (4.0 * h2);
    let den = u1 * u1 + u2 * u2 + delta * delta;
    let a11 = 1.0 - u1 * u1 / den;
    let a22 = 1.0 - u2 * u2 / den;
    let a12 = -u1 * u2 / den;
    if jac.is_some() {
        let s = w / h2;
        push_diff(&mut jac, 1, 0, s * a11);
        push_diff(&mut jac, -1, 0, s * a11);
        push_diff(&mut jac, 0, 1, s * a22);
        push_diff(&mut jac, 0, -1, s * a22);
        let m = 2.0 * a12 * w / (4.0 * h2);
        push_diff(&mut jac, 1, 1, m);
        push_diff(&mut jac, -1, -1, m);
        push_diff(&mut jac, 1, -1, -m);
        push_diff(&mut jac, -1, 1, -m);
    }
    a11 * u11 + a22 * u22 + 2.0 * a12 * u12
}

/// Lattice directions of the median curvature stencil (half plane; both signs are used).
pub(crate) const MEDIAN_DIRS: [(isize, isize); 8] = [(2, 0), (2, 1), (2, 2), (1, 2), (0, 2), (-1, 2), (-2, 2), (-2, 1)];

/// 1/|v|² for each median direction (grid units).
const MEDIAN_WEIGHTS: [f64; 8] = [0.25, 0.2, 0.125, 0.2, 0.25, 0.2, 0.125, 0.2];

/// Smallest |v|² over the median stencil, in units of h².
pub(crate) const MEDIAN_MIN_NORM2: f64 = 4.0;

/// Comparators of Batcher's 16-input network that determine sorted positions 7 and 8.
const MIDDLE_NET: [(usize, usize); 53] = [
    (0, 1),
    (2, 3),
    (4, 5),
    (6, 7),
    (8, 9),
    (10, 11),
    (12, 13),
    (14, 15),
    (0, 2),
    (1, 3),
    (4, 6),
    (5, 7),
    (8, 10),
    (9, 11),
    (12, 14),
    (13, 15),
    (1, 2),
    (5, 6),
    (9, 10),
    (13, 14),
    (0, 4),
    (1, 5),
    (2, 6),
    (3, 7),
    (8, 12),
    (9, 13),
    (10, 14),
    (11, 15),
    (2, 4),
    (3, 5),
    (10, 12),
    (11, 13),
    (1, 2),
    (3, 4),
    (5, 6),
    (9, 10),
    (11, 12),
    (13, 14),
    (0, 8),
    (1, 9),
    (2, 10),
    (3, 11),
    (4, 12),
    (5, 13),
    (6, 14),
    (7, 15),
    (4, 8),
    (5, 9),
    (6, 10),
    (7, 11),
    (6, 8),
    (7, 9),
    (7, 8),
];

/// Monotone curvature term: the sum of the two middle order statistics of the 16
/// normalized second differences (u(x ± v) − u(x))/|v|².
///
/// For smooth u with Du ≠ 0 the middle pair comes from the direction closest to the
/// level-set tangent, whose first-order parts cancel, leaving v̂ᵀD²u v̂. Exact on affine data.
#[inline]
pub(crate) fn median_curv(nb: &Nb, h: f64, w: f64, jac: Option<&mut Jac>) -> f64 {
    let h2 = h * h;
    if let Some(jac) = jac {
        return median_curv_tracked(nb, h2, w, jac);
    }
    let mut e = [0.0f64; 16];
    for (k, &(di, dj)) in MEDIAN_DIRS.iter().enumerate() {
        e[2 * k] = nb.d(di, dj) * MEDIAN_WEIGHTS[k];
        e[2 * k + 1] = nb.d(-di, -dj) * MEDIAN_WEIGHTS[k];
    }
    for &(a, b) in MIDDLE_NET.iter() {
        let (x, y) = (e[a], e[b]);
        e[a] = x.min(y);
        e[b] = x.max(y);
    }
    (e[7] + e[8]) / h2
}

fn median_curv_tracked(nb: &Nb, h2: f64, w: f64, jac: &mut Jac) -> f64 {
    let mut e = [(0.0f64, 0u8); 16];
    for (k, &(di, dj)) in MEDIAN_DIRS.iter().enumerate() {
        e[2 * k] = (nb.d(di, dj) * MEDIAN_WEIGHTS[k], 2 * k as u8);
        e[2 * k + 1] = (nb.d(-di, -dj) * MEDIAN_WEIGHTS[k], 2 * k as u8 + 1);
    }
    let cmp = |a: &(f64, u8), b: &(f64, u8)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    e.select_nth_unstable_by(7, cmp);
    let lo = e[7];
    let hi = e[8..].iter().copied().min_by(cmp).unwrap();
    for (_, tag) in [lo, hi] {
        let (di, dj) = MEDIAN_DIRS[(tag / 2) as usize];
        let sgn: isize = if tag % 2 == 0 { 1 } else { -1 };
        let c = w * MEDIAN_WEIGHTS[(tag / 2) as usize] / h2;
        jac.push(((sgn * di) as i8, (sgn * dj) as i8, c));
        jac.push((0, 0, -c));
    }
    (lo.0 + hi.0) / h2
}

/// Donor-cell V·Du for transport u_t + V·Du = 0 (backward difference where Vᵢ > 0).
#[inline]
pub(crate) fn advect(nb: &Nb, h: f64, v: [f64; 2], w: f64, mut jac: Option<&mut Jac>) -> f64 {
    let mut out = 0.0;
    for (vi, (di, dj)) in v.into_iter().zip([(1, 0), (0, 1)]) {
        if vi > 0.0 {
            out += vi * (-nb.d(-di, -dj)) / h;
            push_diff(&mut jac, -di, -dj, -w * vi / h);
        } else if vi < 0.0 {
            out += vi * nb.d(di, dj) / h;
            push_diff(&mut jac, di, dj, w * vi / h);
        }
    }
    out
}

#[inline]
pub(crate) fn laplacian(nb: &Nb, h: f64) -> f64 {
    (nb.d(1, 0) + nb.d(-1, 0) + nb.d(0, 1) + nb.d(0, -1)) / (h * h)
}

/// Discretization of the curvature term tr{(I − p̂⊗p̂)D²u}.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "scheme", rename_all = "lowercase")]
pub enum CurvatureScheme {
    /// Monotone lattice median scheme (default; satisfies the discrete comparison principle).
    #[default]
    Median,
    /// Regularized compact formula with central differences; `delta_g` defaults to h.
    Compact { delta_g: Option<f64> },
}

impl CurvatureScheme {
    /// Equivalent `curvature_coef` for the CFL formula, given the PDE coefficient κ.
    pub fn cfl_coef(&self, kappa: f64) -> f64 {
        match self {
            // center weight 2κ/(4h²) = 2n·coef/h² with n = 2
            CurvatureScheme::Median => kappa / (2.0 * MEDIAN_MIN_NORM2),
            CurvatureScheme::Compact { .. } => kappa,
        }
    }

    #[inline]
    pub(crate) fn eval(&self, nb: &Nb, h: f64, w: f64, jac: Option<&mut Jac>) -> f64 {
        match *self {
            CurvatureScheme::Median => median_curv(nb, h, w, jac),
            CurvatureScheme::Compact { delta_g } => compact_curv(nb, h, delta_g.unwrap_or(h), w, jac),
        }
    }
}
