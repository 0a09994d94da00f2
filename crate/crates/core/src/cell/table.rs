//! Tabulated effective Hamiltonian on unit directions with 1-homogeneous extension.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::corrector::{solve_approx_corrector, CorrectorOptions};
use super::flatness::solve_flatness;
use crate::error::{GeomError, Result};
use crate::grid::PeriodicGrid;
use crate::operators::{OperatorKind, OperatorSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableMetadata {
    pub method: String,
    pub lambda: f64,
    pub eta: f64,
    pub nodes: usize,
    pub residuals: Vec<f64>,
    pub covered: Vec<bool>,
    #[serde(default)]
    pub horizon: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EffectiveHamiltonianTable {
    pub spec_hash: String,
    /// Angles θ_k = 2πk/M of the sampled unit directions.
    pub directions: Vec<f64>,
    pub values: Vec<f64>,
    pub metadata: TableMetadata,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableOptions {
    pub corrector: CorrectorOptions,
    /// Horizon for flatness runs (curvature G).
    pub horizon: f64,
}

impl Default for TableOptions {
    fn default() -> Self {
        TableOptions { corrector: CorrectorOptions::default(), horizon: 40.0 }
    }
}

impl EffectiveHamiltonianTable {
    /// Table from explicit angle samples (uniform spacing required).
    pub fn from_values(spec_hash: String, values: Vec<f64>, method: &str) -> Result<Self> {
        let m = values.len();
        if m < 3 {
            return Err(GeomError::Invalid("table needs at least 3 directions".into()));
        }
        Ok(EffectiveHamiltonianTable {
            spec_hash,
            directions: (0..m).map(|k| 2.0 * PI * k as f64 / m as f64).collect(),
            values,
            metadata: TableMetadata {
                method: method.into(),
                lambda: 0.0,
                eta: 0.0,
                nodes: 0,
                residuals: vec![0.0; m],
                covered: vec![true; m],
                horizon: None,
            },
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
    pub fn is_complete(&self) -> bool {
        self.metadata.covered.iter().all(|&c| c)
    }

    fn segment(&self, theta: f64) -> (usize, usize, f64) {
        let m = self.values.len();
        let s = theta.rem_euclid(2.0 * PI) / (2.0 * PI) * m as f64;
        let k = (s.floor() as usize).min(m - 1);
        (k, (k + 1) % m, s - k as f64)
    }

    /// Periodic linear interpolation in angle.
    pub fn value_at_angle(&self, theta: f64) -> Result<f64> {
        let (a, b, t) = self.segment(theta);
        for k in [a, b] {
            if !self.metadata.covered[k] && !(k == b && t == 0.0) && !(k == a && t == 1.0) {
                return Err(GeomError::UncoveredDirection { theta: self.directions[k] });
            }
        }
        Ok((1.0 - t) * self.values[a] + t * self.values[b])
    }

    /// H(p) = |p| · table(p/|p|), with H(0) = 0.
    pub fn eval(&self, p: [f64; 2]) -> Result<f64> {
        let n = (p[0] * p[0] + p[1] * p[1]).sqrt();
        if n == 0.0 {
            return Ok(0.0);
        }
        Ok(n * self.value_at_angle(p[1].atan2(p[0]))?)
    }

    /// Upper bound on |∇H| for the interpolated Hamiltonian.
    pub fn gradient_bound(&self) -> f64 {
        let m = self.values.len();
        let dth = 2.0 * PI / m as f64;
        (0..m)
            .map(|k| {
                let (a, b) = (self.values[k], self.values[(k + 1) % m]);
                let slope = (b - a) / dth;
                (a.powi(2).max(b.powi(2)) + slope * slope).sqrt()
            })
            .fold(0.0, f64::max)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let t: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if t.values.len() != t.directions.len() || t.metadata.covered.len() != t.values.len() {
            return Err(GeomError::Invalid(format!("malformed table in {}", path.display())));
        }
        Ok(t)
    }
}

/// Builds the table from M uniform directions (corrector for forced MCF, flatness for G).
pub fn build_effective_table(
    spec: &OperatorSpec,
    m: usize,
    lambda: f64,
    grid: PeriodicGrid,
    opts: &TableOptions,
) -> Result<EffectiveHamiltonianTable> {
    if m < 16 {
        return Err(GeomError::Invalid(format!("table needs M >= 16 directions, got {m}")));
    }
    let directions: Vec<f64> = (0..m).map(|k| 2.0 * PI * k as f64 / m as f64).collect();
    let is_g = matches!(spec.kind(), OperatorKind::CurvatureG { .. });
    let rows: Vec<Result<(f64, f64, bool)>> = directions
        .par_iter()
        .map(|&th| {
            let p = [th.cos(), th.sin()];
            if is_g {
                let r = solve_flatness(spec, p, opts.horizon, grid, opts.corrector.curvature)?;
                Ok((r.estimate, r.oscillation_max, r.flat))
            } else {
                let s = solve_approx_corrector(spec, p, lambda, grid, &opts.corrector)?;
                Ok((s.effective_estimate, s.residual, s.converged))
            }
        })
        .collect();
    let mut values = Vec::with_capacity(m);
    let mut residuals = Vec::with_capacity(m);
    let mut covered = Vec::with_capacity(m);
    for row in rows {
        match row {
            Ok((v, r, ok)) => {
                values.push(v);
                residuals.push(r);
                covered.push(ok);
            }
            Err(e) => {
                log::warn!("table direction failed: {e}");
                values.push(f64::NAN);
                residuals.push(f64::NAN);
                covered.push(false);
            }
        }
    }
    // NaN is not representable in JSON; uncovered entries are zero and flagged
    for (v, c) in values.iter_mut().zip(&covered) {
        if !*c && !v.is_finite() {
            *v = 0.0;
        }
    }
    for r in residuals.iter_mut() {
        if !r.is_finite() {
            *r = -1.0;
        }
    }
    Ok(EffectiveHamiltonianTable {
        spec_hash: spec.content_hash(),
        directions,
        values,
        metadata: TableMetadata {
            method: if is_g { "flatness" } else { "corrector" }.into(),
            lambda,
            eta: spec.perturbation().eta(),
            nodes: grid.nodes,
            residuals,
            covered,
            horizon: is_g.then_some(opts.horizon),
        },
    })
}

/// Cache key over everything that determines the table.
pub fn table_key(spec: &OperatorSpec, m: usize, lambda: f64, grid: PeriodicGrid, opts: &TableOptions) -> String {
    let mut h = Sha256::new();
    h.update(spec.content_hash());
    h.update((m as u64).to_le_bytes());
    h.update(lambda.to_le_bytes());
    h.update((grid.nodes as u64).to_le_bytes());
    h.update(serde_json::to_vec(opts).expect("options serialize"));
    hex::encode(h.finalize())
}

/// Loads `<dir>/table-<key>.json` if present, otherwise builds and stores it.
pub fn load_or_build_table(
    dir: &Path,
    spec: &OperatorSpec,
    m: usize,
    lambda: f64,
    grid: PeriodicGrid,
    opts: &TableOptions,
) -> Result<(EffectiveHamiltonianTable, PathBuf)> {
    let path = dir.join(format!("table-{}.json", &table_key(spec, m, lambda, grid, opts)[..16]));
    if path.exists() {
        let t = EffectiveHamiltonianTable::load(&path)?;
        if t.spec_hash == spec.content_hash() {
            return Ok((t, path));
        }
    }
    let t = build_effective_table(spec, m, lambda, grid, opts)?;
    std::fs::create_dir_all(dir)?;
    t.save(&path)?;
    Ok((t, path))
}
