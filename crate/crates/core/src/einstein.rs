//! Einstein, pseudo-Einstein and constant-scalar-curvature conditions for
//! multiply warped products `I ×_{b_1} F_1 × … × _{b_m} F_m` over `−dt²`,
//! evaluated as residuals on a grid in `t`.
//!
//! The fiber equations carry the `P`-term `(n̄−1) b_i b_i'`, which is what the
//! block Ricci formula produces for `P = ∂_t`; for a single fiber it equals
//! `b_i² Σ_j l_j b_j'/b_j`, but the two differ once fibers have different
//! warpings.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::chart::{BaseChart, Block, FiberGeometry, PointCoords, ProductManifoldSpec};
use crate::connection::{Connection, TorsionField};
use crate::error::{GeometryError, Result};
use crate::scalar::Dual;
use crate::structured::{BlockVector, StructuredGeometry};
use crate::tolerance;

/// Default number of Chebyshev points per grid.
pub const DEFAULT_GRID_POINTS: usize = 17;

/// `n` Chebyshev nodes of the first kind mapped into `[lo, hi]`, ascending.
pub fn chebyshev_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let (mid, half) = (0.5 * (lo + hi), 0.5 * (hi - lo));
    (0..n)
        .map(|k| mid - half * ((2 * k + 1) as f64 * PI / (2 * n) as f64).cos())
        .collect()
}

/// Sample points `(t, x_F)` with fiber coordinates held fixed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub ts: Vec<f64>,
    pub fiber_point: Vec<f64>,
}

impl TimeGrid {
    pub fn new(ts: Vec<f64>, fiber_point: Vec<f64>) -> Self {
        TimeGrid { ts, fiber_point }
    }

    /// Chebyshev grid over the spec's time interval at the reference fiber point.
    pub fn chebyshev(spec: &ProductManifoldSpec, n: usize) -> Result<Self> {
        let BaseChart::Interval { lo, hi, .. } = spec.base else {
            return Err(GeometryError::InvalidSpec("time grids need an interval base".into()));
        };
        Ok(TimeGrid::new(chebyshev_grid(lo, hi, n), reference_fiber_point(spec)))
    }

    pub fn points(&self) -> Vec<PointCoords> {
        self.ts
            .iter()
            .map(|&t| {
                let mut v = vec![t];
                v.extend_from_slice(&self.fiber_point);
                PointCoords(v)
            })
            .collect()
    }
}

/// A fixed interior point of every fiber chart.
pub fn reference_fiber_point(spec: &ProductManifoldSpec) -> Vec<f64> {
    let mut v = Vec::new();
    for f in &spec.fibers {
        match f.geometry {
            FiberGeometry::Sphere { .. } => v.extend([1.1, 0.4]),
            FiberGeometry::Hyperbolic { .. } => v.extend([0.3, 1.2]),
            FiberGeometry::FlatTorus { dim, .. } => v.extend((0..dim).map(|k| 0.3 + 0.1 * k as f64)),
            FiberGeometry::Circle { .. } => v.push(0.3),
        }
    }
    v
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub check: String,
    pub grid: Vec<f64>,
    pub max_abs_residual: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl ResidualReport {
    /// Max-norm report; any non-finite residual fails with an infinite norm.
    pub fn from_residuals(check: impl Into<String>, grid: Vec<f64>, residuals: &[f64], tolerance: f64) -> Result<Self> {
        if grid.is_empty() {
            return Err(GeometryError::InvalidSpec("empty grid".into()));
        }
        let max = residuals
            .iter()
            .map(|r| if r.is_finite() { r.abs() } else { f64::INFINITY })
            .fold(0.0, f64::max);
        Ok(ResidualReport { check: check.into(), grid, max_abs_residual: max, tolerance, pass: max < tolerance })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EinsteinCheckResult {
    pub lambda: f64,
    pub residuals: Vec<ResidualReport>,
    pub pass: bool,
}

impl EinsteinCheckResult {
    fn new(lambda: f64, residuals: Vec<ResidualReport>) -> Self {
        let pass = residuals.iter().all(|r| r.pass);
        EinsteinCheckResult { lambda, residuals, pass }
    }
}

fn require_time_warped(spec: &ProductManifoldSpec) -> Result<()> {
    if !spec.base.is_interval() {
        return Err(GeometryError::InvalidSpec("expected an interval base with −dt²".into()));
    }
    for (i, w) in spec.warpings.iter().enumerate() {
        if w.variables().iter().any(|v| v != "t") {
            return Err(GeometryError::InvalidSpec(format!("warping {i} depends on more than t")));
        }
    }
    Ok(())
}

/// `(b, b', b'')` for every fiber at `t`, with positivity checked.
fn warping_jets(spec: &ProductManifoldSpec, t: f64) -> Result<Vec<[f64; 3]>> {
    spec.warpings
        .iter()
        .enumerate()
        .map(|(i, w)| {
            let j = w.jet1("t", t)?;
            if !(j[0] > 0.0) {
                return Err(GeometryError::NonPositiveWarping { index: i, value: j[0] });
            }
            Ok(j)
        })
        .collect()
}

fn fiber_dims(spec: &ProductManifoldSpec) -> Vec<f64> {
    spec.fiber_dims().into_iter().map(|l| l as f64).collect()
}

/// `b_i b_i'' + (l_i−1) b_i'² + b_i b_i' Σ_{j≠i} l_j b_j'/b_j`.
fn fiber_warping_terms(jets: &[[f64; 3]], l: &[f64], i: usize) -> f64 {
    let [b, db, d2b] = jets[i];
    let cross: f64 = (0..jets.len()).filter(|&j| j != i).map(|j| l[j] * jets[j][1] / jets[j][0]).sum();
    b * d2b + (l[i] - 1.0) * db * db + b * db * cross
}

/// Residuals of the Einstein conditions for `∇̄` with `P = ∂_t`:
/// `Σ l_i (1 − b_i''/b_i) − λ` and, per fiber,
/// `λ_i − b_i b_i'' − (l_i−1) b_i'² − b_i b_i' Σ_{j≠i} l_j b_j'/b_j + (n̄−1) b_i b_i' − λ b_i²`.
pub fn grw_einstein_residuals(spec: &ProductManifoldSpec, lambda: f64, grid: &TimeGrid, tol: f64) -> Result<EinsteinCheckResult> {
    require_time_warped(spec)?;
    let lambdas: Vec<f64> = spec
        .fibers
        .iter()
        .enumerate()
        .map(|(i, f)| f.einstein_constant.ok_or(GeometryError::FiberNotEinstein(i)))
        .collect::<Result<_>>()?;
    let l = fiber_dims(spec);
    let nbar = spec.dim() as f64;
    let mut time = Vec::new();
    let mut fib = vec![Vec::new(); spec.fibers.len()];
    for p in grid.points() {
        spec.check_point(&p)?;
        let jets = warping_jets(spec, p.0[0])?;
        time.push((0..jets.len()).map(|i| l[i] * (1.0 - jets[i][2] / jets[i][0])).sum::<f64>() - lambda);
        for i in 0..jets.len() {
            let [b, db, _] = jets[i];
            fib[i].push(lambdas[i] - fiber_warping_terms(&jets, &l, i) + (nbar - 1.0) * b * db - lambda * b * b);
        }
    }
    let mut reports = vec![ResidualReport::from_residuals("einstein: time-time", grid.ts.clone(), &time, tol)?];
    for (i, r) in fib.iter().enumerate() {
        reports.push(ResidualReport::from_residuals(format!("einstein: fiber {i}"), grid.ts.clone(), r, tol)?);
    }
    Ok(EinsteinCheckResult::new(lambda, reports))
}

/// Residuals of the pseudo-Einstein conditions for `∇̄` with `P` on fiber `r`.
///
/// The condition on fiber `r` is a tensor identity; it is sampled pointwise
/// on every pair of an orthonormal frame of that fiber:
/// `Ric^{F_r}(V,W) − g_{F_r}(V,W)[b b'' + (l−1)b'² + b b' Σ_{j≠r} l_j b_j'/b_j + λb²]
///  − (n̄−1)[π(V)π(W) − ½(g(W,∇_V P) + g(V,∇_W P))]`.
pub fn pseudo_einstein_residuals(
    spec: &ProductManifoldSpec,
    field: &TorsionField,
    lambda: f64,
    grid: &TimeGrid,
    tol: f64,
) -> Result<EinsteinCheckResult> {
    require_time_warped(spec)?;
    let n = spec.dim();
    if n <= 2 {
        return Err(GeometryError::DimensionTooSmall(n));
    }
    let Block::Fiber(r) = field.location else {
        return Err(GeometryError::UnsupportedP("pseudo-Einstein check needs P on a fiber".into()));
    };
    field.validate(spec)?;
    let lambdas: Vec<Option<f64>> = spec.fibers.iter().map(|f| f.einstein_constant).collect();
    if let Some(i) = (0..lambdas.len()).find(|&i| i != r && lambdas[i].is_none()) {
        return Err(GeometryError::FiberNotEinstein(i));
    }
    let l = fiber_dims(spec);
    let nbar = n as f64;
    let conn = Connection::SemiSymmetric(field.clone());
    let fiber_ricci = spec.fibers[r].geometry.einstein_constant();
    let range = spec.fiber_range(r);
    let mut time = Vec::new();
    let mut tensor = Vec::new();
    let mut others = vec![Vec::new(); spec.fibers.len()];
    for p in grid.points() {
        let jets = warping_jets(spec, p.0[0])?;
        time.push(-(0..jets.len()).map(|i| l[i] * jets[i][2] / jets[i][0]).sum::<f64>() - lambda);
        let sg = StructuredGeometry::new(spec, &conn, &p)?;
        let b = jets[r][0];
        let bracket = fiber_warping_terms(&jets, &l, r) + lambda * b * b;
        let frame: Vec<BlockVector> = range
            .clone()
            .map(|k| {
                let mut e = BlockVector::coordinate(spec, k);
                let norm = sg.g(&e.components, &e.components).sqrt();
                e.components /= norm;
                e
            })
            .collect();
        let nabla: Vec<DVector<f64>> = frame.iter().map(|e| sg.levi_civita_nabla_field(e)).collect();
        for a in 0..frame.len() {
            for c in a..frame.len() {
                let (v, w) = (&frame[a].components, &frame[c].components);
                // g_F(V, W) = g(V, W) / b²
                let gf = sg.g(v, w) / (b * b);
                let sym = 0.5 * (sg.g(w, &nabla[a]) + sg.g(v, &nabla[c]));
                tensor.push(fiber_ricci * gf - gf * bracket - (nbar - 1.0) * (sg.pi(v) * sg.pi(w) - sym));
            }
        }
        for i in (0..jets.len()).filter(|&i| i != r) {
            let b = jets[i][0];
            others[i].push(lambdas[i].unwrap_or(0.0) - fiber_warping_terms(&jets, &l, i) - lambda * b * b);
        }
    }
    let ts = grid.ts.clone();
    let mut reports = vec![
        ResidualReport::from_residuals("pseudo-einstein: time-time", ts.clone(), &time, tol)?,
        ResidualReport::from_residuals(format!("pseudo-einstein: fiber {r} frame pairs"), ts.clone(), &tensor, tol)?,
    ];
    for i in (0..spec.fibers.len()).filter(|&i| i != r) {
        reports.push(ResidualReport::from_residuals(format!("pseudo-einstein: fiber {i}"), ts.clone(), &others[i], tol)?);
    }
    Ok(EinsteinCheckResult::new(lambda, reports))
}

/// `max |Ric − λ g|` over `points` from the block Ricci formulas, optionally
/// on the symmetrized Ricci tensor.
pub fn einstein_deviation(
    spec: &ProductManifoldSpec,
    conn: &Connection,
    lambda: f64,
    points: &[PointCoords],
    symmetrize: bool,
    tol: f64,
) -> Result<ResidualReport> {
    let mut devs = Vec::new();
    for p in points {
        let sg = StructuredGeometry::new(spec, conn, p)?;
        let mut ric = sg.ricci_matrix()?;
        if symmetrize {
            ric = (&ric + ric.transpose()) * 0.5;
        }
        let g = DMatrix::from_diagonal(&DVector::from_vec(spec.metric_diag::<f64>(&p.0)?));
        devs.push((ric - g * lambda).amax());
    }
    let grid = points.iter().map(|p| p.0[0]).collect();
    let name = if symmetrize { "symmetrized Ricci minus λg" } else { "Ricci minus λg" };
    ResidualReport::from_residuals(name, grid, &devs, tol)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalarFormulaReport {
    /// Closed-form scalar at each grid point.
    pub values: Vec<f64>,
    /// Deviation of the closed form from the block scalar.
    pub report: ResidualReport,
}

/// `div_{g_F} P` and `g_F(P, P)` on fiber `r`.
fn fiber_divergence_and_norm(spec: &ProductManifoldSpec, field: &TorsionField, r: usize, p: &PointCoords) -> Result<(f64, f64)> {
    let range = spec.fiber_range(r);
    let geo = &spec.fibers[r].geometry;
    let local = &p.0[range.clone()];
    let gf = geo.metric_diag(local);
    let l = gf.len();
    let pv = field.vector_at(spec, p)?;
    let jac = field.jacobian_at(spec, p)?;
    let mut div = 0.0;
    for a in 0..l {
        let dx: Vec<Dual> = (0..l).map(|k| Dual::new(local[k], (k == a) as u8 as f64)).collect();
        // ∂_a ln √det g_F
        let dlog: f64 = geo.metric_diag(&dx).iter().zip(&gf).map(|(d, g)| 0.5 * d.eps / g).sum();
        let ka = range.start + a;
        div += jac[(ka, ka)] + pv[ka] * dlog;
    }
    let norm = (0..l).map(|a| gf[a] * pv[range.start + a].powi(2)).sum();
    Ok((div, norm))
}

/// Closed-form scalar curvature of `∇̄` over `I` for `P = ∂_t`, `P` on a
/// fiber, or `P = 0`, compared with the block scalar:
///
/// `S̄ = −2Σ l_i b_i''/b_i + Σ S^{F_i}/b_i² − Σ l_i(l_i−1) b_i'²/b_i²
///      − Σ_{i≠j} l_i l_j b_i'b_j'/(b_i b_j) + P terms`,
///
/// with `Σ l_i + Σ_{i,j} l_i l_j b_j'/b_j` for `P = ∂_t` and
/// `(1−n̄)π(P) + (n̄−1) div_{F_r} P` for `P` on fiber `r`.
pub fn multiwarped_scalar(
    spec: &ProductManifoldSpec,
    field: Option<&TorsionField>,
    grid: &TimeGrid,
    tol: f64,
) -> Result<ScalarFormulaReport> {
    require_time_warped(spec)?;
    if let Some(f) = field {
        f.validate(spec)?;
        if f.location == Block::Base && !(f.components.len() == 1 && f.components[0].is_constant() && f.vector_at(spec, &grid.points()[0])?[0] == 1.0) {
            return Err(GeometryError::UnsupportedP("the interval formula takes P = ∂_t on the base".into()));
        }
    }
    let l = fiber_dims(spec);
    let nbar = spec.dim() as f64;
    let m = l.len();
    let conn = match field {
        None => Connection::LeviCivita,
        Some(f) => Connection::SemiSymmetric(f.clone()),
    };
    let mut values = Vec::new();
    let mut devs = Vec::new();
    for p in grid.points() {
        let jets = warping_jets(spec, p.0[0])?;
        let mut s = 0.0;
        for i in 0..m {
            let [b, db, d2b] = jets[i];
            s += -2.0 * l[i] * d2b / b + spec.fibers[i].scalar_curvature / (b * b) - l[i] * (l[i] - 1.0) * db * db / (b * b);
            for j in (0..m).filter(|&j| j != i) {
                s -= l[i] * l[j] * db * jets[j][1] / (b * jets[j][0]);
            }
        }
        match field.map(|f| f.location) {
            None => {}
            Some(Block::Base) => {
                let ltot: f64 = l.iter().sum();
                s += ltot + ltot * (0..m).map(|j| l[j] * jets[j][1] / jets[j][0]).sum::<f64>();
            }
            Some(Block::Fiber(r)) => {
                let (div, norm) = fiber_divergence_and_norm(spec, field.unwrap(), r, &p)?;
                let b = jets[r][0];
                s += (1.0 - nbar) * b * b * norm + (nbar - 1.0) * div;
            }
        }
        let block = StructuredGeometry::new(spec, &conn, &p)?.scalar()?.value;
        values.push(s);
        devs.push(s - block);
    }
    Ok(ScalarFormulaReport {
        values,
        report: ResidualReport::from_residuals("closed-form scalar minus block scalar", grid.ts.clone(), &devs, tol)?,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeparationReport {
    pub scalar_constant: bool,
    /// `max − min` of the scalar over the grid.
    pub spread: f64,
    pub grid_too_small: bool,
    /// Per fiber: constant fiber scalar curvature is implied, and holds.
    pub fiber_scalar_constant: Vec<bool>,
    /// For `P` on a fiber: whether `g_F(P,P)` and `div_F P` are constant
    /// over sampled fiber points.
    pub field_hypothesis: Option<bool>,
    pub message: String,
    /// No implied constancy was contradicted.
    pub pass: bool,
}

/// Fiber sample points around the reference point, for constancy checks.
fn fiber_samples(spec: &ProductManifoldSpec, t: f64) -> Vec<PointCoords> {
    let base = reference_fiber_point(spec);
    let offsets = [0.0, 0.17, -0.23, 0.31];
    offsets
        .iter()
        .flat_map(|&o| {
            let base = base.clone();
            (0..base.len()).map(move |k| {
                let mut v = base.clone();
                v[k] += o * (1.0 + 0.5 * k as f64);
                v
            })
        })
        .map(|f| {
            let mut v = vec![t];
            v.extend(f);
            PointCoords(v)
        })
        .collect()
}

/// Separation-of-variables consequence of constant scalar curvature:
/// if the scalar is constant over `grid`, every fiber without `P` has
/// constant scalar curvature, and so does the fiber carrying `P` when
/// `g_F(P,P)` and `div_F P` are constant.
pub fn constant_scalar_separation_check(spec: &ProductManifoldSpec, conn: &Connection, grid: &TimeGrid) -> Result<SeparationReport> {
    require_time_warped(spec)?;
    let mut values = Vec::new();
    for p in grid.points() {
        values.push(StructuredGeometry::new(spec, conn, &p)?.scalar()?.value);
    }
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let spread = max - min;
    let grid_too_small = values.len() < 2;
    let scalar_constant = spread < tolerance::CLOSED_FORM;
    let p_fiber = conn.field().and_then(|f| match f.location {
        Block::Fiber(r) => Some((r, f)),
        Block::Base => None,
    });
    let field_hypothesis = match p_fiber {
        Some((r, f)) => {
            let t = grid.ts.first().copied().unwrap_or(0.0);
            let mut divs = Vec::new();
            let mut norms = Vec::new();
            for p in fiber_samples(spec, t) {
                if spec.check_point(&p).is_err() {
                    continue;
                }
                let (d, n) = fiber_divergence_and_norm(spec, f, r, &p)?;
                divs.push(d);
                norms.push(n);
            }
            let spread = |v: &[f64]| v.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - v.iter().cloned().fold(f64::INFINITY, f64::min);
            Some(spread(&divs) < tolerance::CLOSED_FORM && spread(&norms) < tolerance::CLOSED_FORM)
        }
        None => None,
    };
    // Built-in fibers all have constant sectional curvature, so the implied
    // constancy always holds.
    let fiber_scalar_constant = (0..spec.fibers.len())
        .map(|i| match p_fiber {
            Some((r, _)) if r == i => field_hypothesis.unwrap_or(false),
            _ => true,
        })
        .collect::<Vec<_>>();
    let message = if grid_too_small {
        "grid too small to test constancy".to_string()
    } else if !scalar_constant {
        "scalar curvature not constant; nothing implied".to_string()
    } else {
        match (p_fiber, field_hypothesis) {
            (Some((r, _)), Some(false)) => format!(
                "scalar curvature constant; fibers without P have constant scalar curvature; g_F(P,P) or div P not constant on fiber {r}, so nothing is implied there"
            ),
            _ => "scalar curvature constant; every implied fiber has constant scalar curvature".to_string(),
        }
    };
    Ok(SeparationReport {
        scalar_constant,
        spread,
        grid_too_small,
        fiber_scalar_constant,
        field_hypothesis,
        message,
        pass: true,
    })
}
