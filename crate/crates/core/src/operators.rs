//! Geometric operators F(X, p, y), their shift perturbations, and field audits.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{GeomError, Result};

/// Periodic scalar samples on an n-d lattice covering one cell `[0, period)^n`.
///
/// Storage is row-major: the last axis varies fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct ForcingField {
    period: f64,
    shape: Vec<usize>,
    values: Vec<f64>,
    lipschitz_bound: f64,
}

/// On-disk form of a [`ForcingField`] (also used for grid snapshots).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldDoc {
    pub period: f64,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl ForcingField {
    pub fn new(period: f64, shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if !(period > 0.0 && period.is_finite()) {
            return Err(GeomError::Invalid(format!("period must be positive, got {period}")));
        }
        if shape.is_empty() || shape.iter().any(|&n| n < 2) {
            return Err(GeomError::Invalid(format!("bad field shape {shape:?}")));
        }
        let len: usize = shape.iter().product();
        if len != values.len() {
            return Err(GeomError::ShapeMismatch(format!("shape {shape:?} needs {len} values, got {}", values.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(GeomError::Invalid("field values must be finite".into()));
        }
        let mut f = ForcingField { period, shape, values, lipschitz_bound: 0.0 };
        f.lipschitz_bound = f.one_sided_lipschitz();
        Ok(f)
    }

    /// Samples `f` at the lattice nodes `y = h * index`.
    pub fn from_fn(period: f64, shape: Vec<usize>, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let len: usize = shape.iter().product();
        let mut values = Vec::with_capacity(len);
        let mut y = vec![0.0; shape.len()];
        for k in 0..len {
            let idx = unflatten(k, &shape);
            for (a, &i) in idx.iter().enumerate() {
                y[a] = i as f64 * period / shape[a] as f64;
            }
            values.push(f(&y));
        }
        Self::new(period, shape, values)
    }

    pub fn constant(k: f64, dim: usize) -> Self {
        Self::new(1.0, vec![8; dim], vec![k; 8usize.pow(dim as u32)]).expect("valid constant field")
    }

    /// c(y) = 2 + 0.25 sin(2π y₁) on the unit cell.
    pub fn sin1(nodes: usize, dim: usize) -> Self {
        Self::from_fn(1.0, vec![nodes; dim], |y| 2.0 + 0.25 * (2.0 * PI * y[0]).sin()).expect("valid sin1 field")
    }

    /// Parses `builtin:const1`, `builtin:const:<K>`, `builtin:sin1`, or a JSON file path.
    pub fn from_source(src: &str, dim: usize) -> Result<Self> {
        match src.strip_prefix("builtin:") {
            Some("const1") => Ok(Self::constant(1.0, dim)),
            Some("sin1") => Ok(Self::sin1(256, dim)),
            Some(other) => {
                if let Some(k) = other.strip_prefix("const:") {
                    let k: f64 = k.parse().map_err(|_| GeomError::Invalid(format!("bad constant in {src}")))?;
                    Ok(Self::constant(k, dim))
                } else {
                    Err(GeomError::Invalid(format!("unknown builtin field {src}")))
                }
            }
            None => {
                let path = src.strip_prefix("file:").unwrap_or(src);
                let text = std::fs::read_to_string(path)?;
                let doc: FieldDoc = serde_json::from_str(&text)?;
                let f = Self::from_doc(doc)?;
                if f.dim() != dim {
                    return Err(GeomError::ShapeMismatch(format!(
                        "field in {path} is {}-d, expected {dim}-d",
                        f.dim()
                    )));
                }
                Ok(f)
            }
        }
    }

    pub fn from_doc(doc: FieldDoc) -> Result<Self> {
        Self::new(doc.period, doc.shape, doc.values)
    }

    pub fn to_doc(&self) -> FieldDoc {
        FieldDoc { period: self.period, shape: self.shape.clone(), values: self.values.clone() }
    }

    pub fn dim(&self) -> usize {
        self.shape.len()
    }
    pub fn period(&self) -> f64 {
        self.period
    }
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn lipschitz_bound(&self) -> f64 {
        self.lipschitz_bound
    }
    pub fn spacing(&self, axis: usize) -> f64 {
        self.period / self.shape[axis] as f64
    }
    pub fn sup_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }
    pub fn is_constant(&self) -> bool {
        self.values.iter().all(|&v| v == self.values[0])
    }

    /// Node value with periodic wraparound of every index.
    pub fn node(&self, idx: &[i64]) -> f64 {
        let mut k = 0usize;
        for (a, &i) in idx.iter().enumerate() {
            let n = self.shape[a] as i64;
            k = k * self.shape[a] + i.rem_euclid(n) as usize;
        }
        self.values[k]
    }

    /// Periodic multilinear interpolation.
    pub fn value_at(&self, y: &[f64]) -> f64 {
        let d = self.dim();
        let mut base = [0i64; 8];
        let mut frac = [0f64; 8];
        assert!(d <= 8 && y.len() >= d);
        for a in 0..d {
            let s = y[a] / self.spacing(a);
            let fl = s.floor();
            base[a] = fl as i64;
            frac[a] = s - fl;
        }
        let mut acc = 0.0;
        let mut idx = [0i64; 8];
        for corner in 0..(1usize << d) {
            let mut w = 1.0;
            for a in 0..d {
                let bit = (corner >> a) & 1;
                idx[a] = base[a] + bit as i64;
                w *= if bit == 1 { frac[a] } else { 1.0 - frac[a] };
            }
            if w != 0.0 {
                acc += w * self.node(&idx[..d]);
            }
        }
        acc
    }

    fn one_sided_lipschitz(&self) -> f64 {
        let d = self.dim();
        let mut best: f64 = 0.0;
        let mut idx = vec![0i64; d];
        for k in 0..self.values.len() {
            for (a, i) in unflatten(k, &self.shape).into_iter().enumerate() {
                idx[a] = i as i64;
            }
            let c0 = self.values[k];
            let mut s = 0.0;
            for a in 0..d {
                let h = self.spacing(a);
                idx[a] += 1;
                let fwd = ((self.node(&idx) - c0) / h).abs();
                idx[a] -= 2;
                let bwd = ((c0 - self.node(&idx)) / h).abs();
                idx[a] += 1;
                s += fwd.max(bwd).powi(2);
            }
            best = best.max(s.sqrt());
        }
        best
    }

    /// Pointwise max over lattice nodes within Euclidean distance `eta` (the sup-shifted field c^η).
    pub fn dilate(&self, eta: f64) -> Result<Self> {
        self.ball_extremum(eta, f64::max)
    }

    /// Pointwise min over the η-ball (the inf-shifted field c_η).
    pub fn erode(&self, eta: f64) -> Result<Self> {
        self.ball_extremum(eta, f64::min)
    }

    fn ball_offsets(&self, eta: f64) -> Result<Vec<Vec<i64>>> {
        if !(eta >= 0.0) {
            return Err(GeomError::Invalid(format!("eta must be nonnegative, got {eta}")));
        }
        if eta > self.period / 2.0 {
            return Err(GeomError::PerturbationExceedsCell { eta, period: self.period });
        }
        let d = self.dim();
        let reach: Vec<i64> = (0..d).map(|a| (eta / self.spacing(a)).floor() as i64).collect();
        let mut out = Vec::new();
        let mut cur = vec![0i64; d];
        let total: usize = reach.iter().map(|&r| (2 * r + 1) as usize).product();
        for k in 0..total {
            let mut rem = k;
            let mut dist2 = 0.0;
            for a in 0..d {
                let w = (2 * reach[a] + 1) as usize;
                cur[a] = (rem % w) as i64 - reach[a];
                rem /= w;
                dist2 += (cur[a] as f64 * self.spacing(a)).powi(2);
            }
            if dist2 <= eta * eta * (1.0 + 1e-12) {
                out.push(cur.clone());
            }
        }
        Ok(out)
    }

    fn ball_extremum(&self, eta: f64, pick: fn(f64, f64) -> f64) -> Result<Self> {
        let offsets = self.ball_offsets(eta)?;
        let d = self.dim();
        let mut idx = vec![0i64; d];
        let values = (0..self.values.len())
            .map(|k| {
                let base = unflatten(k, &self.shape);
                let mut acc = self.values[k];
                for off in &offsets {
                    for a in 0..d {
                        idx[a] = base[a] as i64 + off[a];
                    }
                    acc = pick(acc, self.node(&idx));
                }
                acc
            })
            .collect();
        Self::new(self.period, self.shape.clone(), values)
    }

    fn hash_into(&self, h: &mut Sha256) {
        h.update(self.period.to_le_bytes());
        for &n in &self.shape {
            h.update((n as u64).to_le_bytes());
        }
        for v in &self.values {
            h.update(v.to_le_bytes());
        }
    }
}

pub(crate) fn unflatten(mut k: usize, shape: &[usize]) -> Vec<usize> {
    let mut idx = vec![0; shape.len()];
    for a in (0..shape.len()).rev() {
        idx[a] = k % shape[a];
        k /= shape[a];
    }
    idx
}

/// Min over the lattice of c² − (n−1)|Dc|, with |Dc| from central differences.
/// A positive value certifies the coercivity condition up to discretization.
pub fn check_coercivity(c: &ForcingField, n: usize) -> f64 {
    let d = c.dim();
    let mut idx = vec![0i64; d];
    let mut best = f64::INFINITY;
    for k in 0..c.values.len() {
        for (a, i) in unflatten(k, &c.shape).into_iter().enumerate() {
            idx[a] = i as i64;
        }
        let mut g2 = 0.0;
        for a in 0..d {
            idx[a] += 1;
            let fwd = c.node(&idx);
            idx[a] -= 2;
            let bwd = c.node(&idx);
            idx[a] += 1;
            g2 += ((fwd - bwd) / (2.0 * c.spacing(a))).powi(2);
        }
        let v = c.values[k].powi(2) - (n as f64 - 1.0) * g2.sqrt();
        best = best.min(v);
    }
    best
}

/// Cellular flow V(x) = A(−cos x₂ sin x₁, cos x₁ sin x₂), period 2π.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowField {
    pub amplitude: f64,
}

impl FlowField {
    pub const PERIOD: f64 = 2.0 * PI;

    pub fn new(amplitude: f64) -> Result<Self> {
        if !(amplitude >= 0.0 && amplitude.is_finite()) {
            return Err(GeomError::Invalid(format!("flow intensity must be >= 0, got {amplitude}")));
        }
        Ok(FlowField { amplitude })
    }

    pub fn eval(&self, y: &[f64]) -> [f64; 2] {
        let (s1, c1) = y[0].sin_cos();
        let (s2, c2) = y[1].sin_cos();
        [-self.amplitude * c2 * s1, self.amplitude * c1 * s2]
    }

    /// Analytic ∂₁V₁ + ∂₂V₂.
    pub fn divergence(&self, y: &[f64]) -> f64 {
        let c1 = y[0].cos();
        let c2 = y[1].cos();
        -self.amplitude * c2 * c1 + self.amplitude * c1 * c2
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum OperatorKind {
    /// F = −tr{(I − p̂⊗p̂)X} − c(y)|p|
    ForcedMcf { c: ForcingField },
    /// F = (|p| − d tr{(I − p̂⊗p̂)X})₊ + V(y)·p
    CurvatureG { d: f64, flow: FlowField },
}

/// Shift perturbation of the operator.
///
/// `Inf(η)` is inf over |e| ≤ η of F(X, p, y+e) and `Sup(η)` the sup; for forced
/// MCF these use the dilated and eroded force respectively.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", content = "eta", rename_all = "lowercase")]
pub enum Perturbation {
    #[default]
    None,
    Sup(f64),
    Inf(f64),
}

impl Perturbation {
    pub fn eta(&self) -> f64 {
        match *self {
            Perturbation::None => 0.0,
            Perturbation::Sup(e) | Perturbation::Inf(e) => e,
        }
    }
}

#[derive(Clone, Debug)]
pub struct OperatorSpec {
    kind: OperatorKind,
    perturbation: Perturbation,
    dim: usize,
    /// Force with the perturbation already applied (forced MCF only).
    effective_force: Option<ForcingField>,
    /// Shift samples for the perturbed flow term (curvature G only).
    shifts: Vec<[f64; 2]>,
}

impl OperatorSpec {
    pub fn new(kind: OperatorKind, perturbation: Perturbation, dim: usize) -> Result<Self> {
        if dim < 2 {
            return Err(GeomError::Invalid(format!("dimension must be >= 2, got {dim}")));
        }
        let eta = perturbation.eta();
        if !(eta >= 0.0 && eta.is_finite()) {
            return Err(GeomError::Invalid(format!("eta must be >= 0, got {eta}")));
        }
        let mut effective_force = None;
        let mut shifts = vec![[0.0, 0.0]];
        match &kind {
            OperatorKind::ForcedMcf { c } => {
                if c.dim() != dim {
                    return Err(GeomError::ShapeMismatch(format!("force is {}-d but operator is {dim}-d", c.dim())));
                }
                effective_force = Some(match perturbation {
                    Perturbation::None => c.clone(),
                    Perturbation::Inf(e) => c.dilate(e)?,
                    Perturbation::Sup(e) => c.erode(e)?,
                });
            }
            OperatorKind::CurvatureG { d, flow } => {
                if dim != 2 {
                    return Err(GeomError::Invalid("curvature G operator is 2-d only".into()));
                }
                if !(*d > 0.0 && d.is_finite()) {
                    return Err(GeomError::Invalid(format!("Markstein number must be > 0, got {d}")));
                }
                FlowField::new(flow.amplitude)?;
                if eta > FlowField::PERIOD / 2.0 {
                    return Err(GeomError::PerturbationExceedsCell { eta, period: FlowField::PERIOD });
                }
                shifts = shift_samples(eta);
            }
        }
        Ok(OperatorSpec { kind, perturbation, dim, effective_force, shifts })
    }

    pub fn forced_mcf(c: ForcingField) -> Result<Self> {
        let dim = c.dim();
        Self::new(OperatorKind::ForcedMcf { c }, Perturbation::None, dim)
    }

    pub fn curvature_g(d: f64, amplitude: f64) -> Result<Self> {
        Self::new(OperatorKind::CurvatureG { d, flow: FlowField::new(amplitude)? }, Perturbation::None, 2)
    }

    pub fn with_perturbation(&self, perturbation: Perturbation) -> Result<Self> {
        Self::new(self.kind.clone(), perturbation, self.dim)
    }

    pub fn kind(&self) -> &OperatorKind {
        &self.kind
    }
    pub fn perturbation(&self) -> Perturbation {
        self.perturbation
    }
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Cell period: 1 for forced MCF with a unit-cell force, 2π for the cellular flow.
    pub fn period(&self) -> f64 {
        match &self.kind {
            OperatorKind::ForcedMcf { c } => c.period(),
            OperatorKind::CurvatureG { .. } => FlowField::PERIOD,
        }
    }

    /// The force actually used (after dilation/erosion).
    pub fn force(&self) -> Option<&ForcingField> {
        self.effective_force.as_ref()
    }

    /// Bound on the first-order front speed: ‖c‖∞ or 1 + A.
    pub fn speed_bound(&self) -> f64 {
        match &self.kind {
            OperatorKind::ForcedMcf { .. } => self.effective_force.as_ref().unwrap().sup_abs(),
            OperatorKind::CurvatureG { flow, .. } => 1.0 + flow.amplitude,
        }
    }

    /// Coefficient of the curvature term at unit scale (1 or d).
    pub fn curvature_weight(&self) -> f64 {
        match &self.kind {
            OperatorKind::ForcedMcf { .. } => 1.0,
            OperatorKind::CurvatureG { d, .. } => *d,
        }
    }

    /// Flow term V(y)·p, extremized over the shift set when perturbed.
    pub(crate) fn flow_dot(&self, y: &[f64], p: [f64; 2]) -> f64 {
        let OperatorKind::CurvatureG { flow, .. } = &self.kind else { return 0.0 };
        let dot = |e: &[f64; 2]| {
            let v = flow.eval(&[y[0] + e[0], y[1] + e[1]]);
            v[0] * p[0] + v[1] * p[1]
        };
        match self.perturbation {
            Perturbation::None => dot(&self.shifts[0]),
            Perturbation::Sup(_) => self.shifts.iter().map(dot).fold(f64::NEG_INFINITY, f64::max),
            Perturbation::Inf(_) => self.shifts.iter().map(dot).fold(f64::INFINITY, f64::min),
        }
    }

    /// Content hash identifying the operator (kind, parameters, sampled data, perturbation).
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.dim as u64).to_le_bytes());
        match &self.kind {
            OperatorKind::ForcedMcf { c } => {
                h.update(b"mcf");
                c.hash_into(&mut h);
            }
            OperatorKind::CurvatureG { d, flow } => {
                h.update(b"g");
                h.update(d.to_le_bytes());
                h.update(flow.amplitude.to_le_bytes());
            }
        }
        match self.perturbation {
            Perturbation::None => h.update(b"none"),
            Perturbation::Sup(e) => {
                h.update(b"sup");
                h.update(e.to_le_bytes());
            }
            Perturbation::Inf(e) => {
                h.update(b"inf");
                h.update(e.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

fn projected_trace(x: &DMatrix<f64>, p: &DVector<f64>) -> f64 {
    let norm = p.norm();
    let q = p / norm;
    x.trace() - (q.transpose() * x * &q)[(0, 0)]
}

/// Evaluates F(X, p, y).
pub fn eval_operator(spec: &OperatorSpec, x: &DMatrix<f64>, p: &DVector<f64>, y: &DVector<f64>) -> Result<f64> {
    let n = spec.dim;
    if x.nrows() != n || x.ncols() != n || p.len() != n || y.len() != n {
        return Err(GeomError::ShapeMismatch(format!("operator is {n}-d")));
    }
    let norm = p.norm();
    if !(norm > 0.0) {
        return Err(GeomError::SingularGradient);
    }
    let tr = projected_trace(x, p);
    Ok(match &spec.kind {
        OperatorKind::ForcedMcf { .. } => {
            let c = spec.effective_force.as_ref().unwrap().value_at(y.as_slice());
            -tr - c * norm
        }
        OperatorKind::CurvatureG { d, .. } => (norm - d * tr).max(0.0) + spec.flow_dot(y.as_slice(), [p[0], p[1]]),
    })
}

struct Sample {
    x: DMatrix<f64>,
    p: DVector<f64>,
    y: DVector<f64>,
}

fn draw_sample(rng: &mut ChaCha8Rng, n: usize, period: f64) -> Sample {
    let a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    let x = (&a + a.transpose()) * 0.5;
    let p = loop {
        let p = DVector::from_fn(n, |_, _| rng.gen_range(-2.0..2.0));
        if p.norm() > 0.1 {
            break p;
        }
    };
    let y = DVector::from_fn(n, |_, _| rng.gen_range(0.0..period));
    Sample { x, p, y }
}

/// Shift set approximating the η-disk: center plus two rings of 16 points.
pub(crate) fn shift_samples(eta: f64) -> Vec<[f64; 2]> {
    let mut out = vec![[0.0, 0.0]];
    if eta > 0.0 {
        for ring in [0.5 * eta, eta] {
            for k in 0..16 {
                let th = 2.0 * PI * k as f64 / 16.0;
                out.push([ring * th.cos(), ring * th.sin()]);
            }
        }
    }
    out
}

/// Max over seeded samples of |F(λX+μp⊗p, λp, y) − λF(X,p,y)| / (1 + |λF|).
pub fn check_geometricity(spec: &OperatorSpec, samples: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let s = draw_sample(&mut rng, spec.dim, spec.period());
        let lambda = rng.gen_range(0.1..10.0);
        let mu = rng.gen_range(-5.0..5.0);
        let base = eval_operator(spec, &s.x, &s.p, &s.y).expect("nonzero gradient");
        let xs = &s.x * lambda + &s.p * s.p.transpose() * mu;
        let scaled = eval_operator(spec, &xs, &(&s.p * lambda), &s.y).expect("nonzero gradient");
        worst = worst.max((scaled - lambda * base).abs() / (1.0 + (lambda * base).abs()));
    }
    worst
}

/// Max over seeded samples of (F(Y) − F(X))₊ with Y = X + PᵀP.
pub fn check_ellipticity(spec: &OperatorSpec, samples: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let s = draw_sample(&mut rng, spec.dim, spec.period());
        let pm = DMatrix::from_fn(spec.dim, spec.dim, |_, _| rng.gen_range(-1.0..1.0));
        let y_mat = &s.x + pm.transpose() * &pm;
        let fx = eval_operator(spec, &s.x, &s.p, &s.y).expect("nonzero gradient");
        let fy = eval_operator(spec, &y_mat, &s.p, &s.y).expect("nonzero gradient");
        worst = worst.max((fy - fx).max(0.0));
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    #[test]
    fn forced_mcf_hand_values() {
        let spec = OperatorSpec::forced_mcf(ForcingField::constant(1.0, 2)).unwrap();
        let z = DMatrix::zeros(2, 2);
        assert_eq!(eval_operator(&spec, &z, &v(&[1.0, 0.0]), &v(&[0.3, 0.7])).unwrap(), -1.0);
        let id = DMatrix::identity(2, 2);
        assert_eq!(eval_operator(&spec, &id, &v(&[1.0, 0.0]), &v(&[0.0, 0.0])).unwrap(), -2.0);
    }

    #[test]
    fn curvature_g_planar_value() {
        let spec = OperatorSpec::curvature_g(1.0, 0.0).unwrap();
        let z = DMatrix::zeros(2, 2);
        assert_eq!(eval_operator(&spec, &z, &v(&[0.0, 2.0]), &v(&[1.0, 4.0])).unwrap(), 2.0);
    }

    #[test]
    fn zero_gradient_rejected() {
        let spec = OperatorSpec::forced_mcf(ForcingField::constant(1.0, 2)).unwrap();
        let err = eval_operator(&spec, &DMatrix::zeros(2, 2), &v(&[0.0, 0.0]), &v(&[0.0, 0.0]));
        assert!(matches!(err, Err(GeomError::SingularGradient)));
    }

    #[test]
    fn geometricity_and_ellipticity_both_families() {
        let specs = [
            OperatorSpec::forced_mcf(ForcingField::sin1(64, 2)).unwrap(),
            OperatorSpec::forced_mcf(ForcingField::sin1(16, 3)).unwrap(),
            OperatorSpec::curvature_g(0.1, 2.0).unwrap(),
        ];
        for s in &specs {
            assert!(check_geometricity(s, 1000, 7) <= 1e-10);
            assert!(check_ellipticity(s, 1000, 11) <= 1e-12);
        }
    }

    #[test]
    fn g_scaling_fixed_sample() {
        let spec = OperatorSpec::curvature_g(0.3, 1.5).unwrap();
        let x = DMatrix::from_row_slice(2, 2, &[0.2, -0.4, -0.4, 1.1]);
        let p = v(&[0.6, -0.8]);
        let y = v(&[1.0, 2.0]);
        let base = eval_operator(&spec, &x, &p, &y).unwrap();
        let xs = &x * 2.0 + &p * p.transpose() * 3.0;
        let scaled = eval_operator(&spec, &xs, &(&p * 2.0), &y).unwrap();
        assert!((scaled - 2.0 * base).abs() <= 1e-12 * (2.0 * base).abs().max(1.0));
    }

    #[test]
    fn ellipticity_identity_shift_mcf() {
        let spec = OperatorSpec::forced_mcf(ForcingField::sin1(32, 2)).unwrap();
        let x = DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.1, -0.3]);
        let p = v(&[0.3, 0.4]);
        let y = v(&[0.2, 0.9]);
        let fx = eval_operator(&spec, &x, &p, &y).unwrap();
        let fy = eval_operator(&spec, &(&x + DMatrix::identity(2, 2)), &p, &y).unwrap();
        assert_abs_diff_eq!(fx - fy, 1.0, epsilon = 1e-14);
        assert_eq!(eval_operator(&spec, &x, &p, &y).unwrap(), fx);
    }

    #[test]
    fn dilation_trivial_cases() {
        let c = ForcingField::sin1(64, 2);
        assert_eq!(c.dilate(0.0).unwrap(), c);
        assert_eq!(c.erode(0.0).unwrap(), c);
        let k = ForcingField::constant(3.5, 2);
        assert_eq!(k.dilate(0.3).unwrap().values(), k.values());
        assert_eq!(k.erode(0.3).unwrap().values(), k.values());
        assert!(matches!(c.dilate(0.6), Err(GeomError::PerturbationExceedsCell { .. })));
    }

    #[test]
    fn dilation_matches_brute_force_scan() {
        let c = ForcingField::sin1(256, 2);
        let eta = 0.1;
        let up = c.dilate(eta).unwrap();
        let down = c.erode(eta).unwrap();
        let h = c.spacing(0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let i = rng.gen_range(0..256i64);
            let j = rng.gen_range(0..256i64);
            let (mut hi, mut lo) = (f64::NEG_INFINITY, f64::INFINITY);
            for a in 0..256i64 {
                for b in 0..256i64 {
                    let da = ((a - i + 128).rem_euclid(256) - 128) as f64 * h;
                    let db = ((b - j + 128).rem_euclid(256) - 128) as f64 * h;
                    if da * da + db * db <= eta * eta {
                        hi = hi.max(c.node(&[a, b]));
                        lo = lo.min(c.node(&[a, b]));
                    }
                }
            }
            assert_eq!(up.node(&[i, j]), hi);
            assert_eq!(down.node(&[i, j]), lo);
        }
    }

    #[test]
    fn coercivity_audit() {
        assert_eq!(check_coercivity(&ForcingField::constant(1.0, 2), 2), 1.0);
        let c = ForcingField::sin1(256, 2);
        // dense scan of the continuous expression
        let mut dense = f64::INFINITY;
        for k in 0..100_000 {
            let y = k as f64 / 100_000.0;
            let cv = 2.0 + 0.25 * (2.0 * PI * y).sin();
            let dc = 0.5 * PI * (2.0 * PI * y).cos().abs();
            dense = dense.min(cv * cv - dc);
        }
        let est = check_coercivity(&c, 2);
        assert!(est > 1.0);
        assert!((est - dense).abs() < 1e-3, "{est} vs {dense}");
        let bad = ForcingField::from_fn(1.0, vec![256, 256], |y| 0.1 + (2.0 * PI * y[0]).sin()).unwrap();
        assert!(check_coercivity(&bad, 2) < 0.0);
    }

    #[test]
    fn lipschitz_bound_dominates_quotients() {
        let c = ForcingField::sin1(64, 2);
        let h = c.spacing(0);
        for i in 0..64 {
            let q = (c.node(&[i + 1, 5]) - c.node(&[i, 5])).abs() / h;
            assert!(c.lipschitz_bound() >= q);
        }
        assert!(c.lipschitz_bound() <= 0.5 * PI + 1e-9);
    }

    #[test]
    fn flow_is_divergence_free() {
        let f = FlowField::new(2.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let y = [rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0)];
            assert!(f.divergence(&y).abs() <= 1e-15);
        }
    }

    #[test]
    fn field_doc_round_trip() {
        let c = ForcingField::sin1(16, 2);
        let text = serde_json::to_string(&c.to_doc()).unwrap();
        let back = ForcingField::from_doc(serde_json::from_str(&text).unwrap()).unwrap();
        assert_eq!(back, c);
    }

    proptest! {
        #[test]
        fn periodic_in_y(i in 0i64..1024, j in 0i64..1024, k1 in -3i64..3, k2 in -3i64..3) {
            let spec = OperatorSpec::forced_mcf(ForcingField::sin1(64, 2)).unwrap();
            let x = DMatrix::from_row_slice(2, 2, &[0.1, 0.2, 0.2, -0.5]);
            let p = v(&[0.3, -1.0]);
            let y = v(&[i as f64 / 1024.0, j as f64 / 1024.0]);
            let ys = v(&[y[0] + k1 as f64, y[1] + k2 as f64]);
            prop_assert_eq!(eval_operator(&spec, &x, &p, &y).unwrap(),
                            eval_operator(&spec, &x, &p, &ys).unwrap());
        }

        #[test]
        fn g_periodic_in_y(y1 in 0.0..6.0f64, y2 in 0.0..6.0f64, k in -2i32..2) {
            let spec = OperatorSpec::curvature_g(0.1, 2.0).unwrap();
            let x = DMatrix::from_row_slice(2, 2, &[0.1, 0.2, 0.2, -0.5]);
            let p = v(&[0.3, -1.0]);
            let a = eval_operator(&spec, &x, &p, &v(&[y1, y2])).unwrap();
            let b = eval_operator(&spec, &x, &p, &v(&[y1 + 2.0 * PI * k as f64, y2])).unwrap();
            prop_assert!((a - b).abs() <= 1e-12);
        }

        #[test]
        fn perturbation_ordering(eta in 0.0..0.3f64, y1 in 0.0..1.0f64, y2 in 0.0..1.0f64,
                                 p1 in 0.1..2.0f64, p2 in -2.0..2.0f64, x11 in -1.0..1.0f64) {
            for base in [OperatorSpec::forced_mcf(ForcingField::sin1(64, 2)).unwrap(),
                         OperatorSpec::curvature_g(0.1, 2.0).unwrap()] {
                let inf = base.with_perturbation(Perturbation::Inf(eta)).unwrap();
                let sup = base.with_perturbation(Perturbation::Sup(eta)).unwrap();
                let x = DMatrix::from_row_slice(2, 2, &[x11, 0.3, 0.3, 0.2]);
                let p = v(&[p1, p2]);
                let y = v(&[y1, y2]);
                let f0 = eval_operator(&base, &x, &p, &y).unwrap();
                let fi = eval_operator(&inf, &x, &p, &y).unwrap();
                let fs = eval_operator(&sup, &x, &p, &y).unwrap();
                prop_assert!(fi <= f0 + 1e-14 && f0 <= fs + 1e-14);
            }
        }

        #[test]
        fn dilation_monotone_in_eta(e1 in 0.0..0.2f64, de in 0.0..0.2f64) {
            let c = ForcingField::sin1(32, 2);
            let a = c.dilate(e1).unwrap();
            let b = c.dilate(e1 + de).unwrap();
            let lo = c.erode(e1).unwrap();
            let lo2 = c.erode(e1 + de).unwrap();
            for k in 0..c.values().len() {
                prop_assert!(a.values()[k] <= b.values()[k]);
                prop_assert!(lo2.values()[k] <= lo.values()[k]);
                prop_assert!(lo.values()[k] <= c.values()[k] && c.values()[k] <= a.values()[k]);
            }
        }
    }
}
