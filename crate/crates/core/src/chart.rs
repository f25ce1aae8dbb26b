//! Coordinate-chart oracle: block metric assembly, exact metric derivatives,
//! Christoffel symbols and brute-force curvature contraction.
//!
//! Every metric handled here is diagonal in its chart, but the contraction
//! code does not rely on that except where noted.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{GeometryError, Result};
use crate::expr::{Bindings, ScalarExpr};
use crate::scalar::{Dual, HyperDual, Scalar};
use crate::tolerance;

/// Margin kept between sphere-chart points and the poles.
pub const SPHERE_POLE_MARGIN: f64 = 0.2;

/// Step for differentiating connection-coefficient fields.
pub const FD_STEP: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum FiberGeometry {
    /// `radius² Σ dx_a²`, any dimension.
    FlatTorus { dim: usize, radius: f64 },
    /// `radius² dx²`.
    Circle { radius: f64 },
    /// `radius² (dθ² + sin²θ dφ²)` on `θ ∈ [0.2, π − 0.2]`.
    Sphere { radius: f64 },
    /// Upper half-plane `radius² (dx² + dy²) / y²`, `y > 0`.
    Hyperbolic { radius: f64 },
}

impl FiberGeometry {
    pub fn dim(&self) -> usize {
        match self {
            FiberGeometry::FlatTorus { dim, .. } => *dim,
            FiberGeometry::Circle { .. } => 1,
            FiberGeometry::Sphere { .. } | FiberGeometry::Hyperbolic { .. } => 2,
        }
    }

    pub fn default_coords(&self) -> Vec<String> {
        let names: &[&str] = match self {
            FiberGeometry::FlatTorus { dim, .. } => &["x", "y", "z", "w"][..(*dim).min(4)],
            FiberGeometry::Circle { .. } => &["x"],
            FiberGeometry::Sphere { .. } => &["theta", "phi"],
            FiberGeometry::Hyperbolic { .. } => &["x", "y"],
        };
        names.iter().map(|s| s.to_string()).collect()
    }

    /// Constant sectional curvature of the fiber metric.
    pub fn sectional_curvature(&self) -> f64 {
        match self {
            FiberGeometry::FlatTorus { .. } | FiberGeometry::Circle { .. } => 0.0,
            FiberGeometry::Sphere { radius } => 1.0 / (radius * radius),
            FiberGeometry::Hyperbolic { radius } => -1.0 / (radius * radius),
        }
    }

    /// `λ` with `Ric = λ g` under the crate's Ricci convention, `−(l−1)κ`.
    pub fn einstein_constant(&self) -> f64 {
        -((self.dim() as f64) - 1.0) * self.sectional_curvature()
    }

    pub fn scalar_curvature(&self) -> f64 {
        self.dim() as f64 * self.einstein_constant()
    }

    /// Diagonal of the fiber metric at fiber coordinates `x`.
    pub fn metric_diag<T: Scalar>(&self, x: &[T]) -> Vec<T> {
        match self {
            FiberGeometry::FlatTorus { dim, radius } => vec![T::constant(radius * radius); *dim],
            FiberGeometry::Circle { radius } => vec![T::constant(radius * radius)],
            FiberGeometry::Sphere { radius } => {
                let s = x[0].sin();
                vec![T::constant(radius * radius), (s * s).scale(radius * radius)]
            }
            FiberGeometry::Hyperbolic { radius } => {
                let inv = x[1].recip();
                let v = (inv * inv).scale(radius * radius);
                vec![v, v]
            }
        }
    }

    fn check_domain(&self, names: &[String], x: &[f64]) -> Result<()> {
        let bad = |i: usize| GeometryError::OutOfChart { coord: names[i].clone(), value: x[i] };
        match self {
            FiberGeometry::Sphere { .. } => {
                if !(SPHERE_POLE_MARGIN..=PI - SPHERE_POLE_MARGIN).contains(&x[0]) {
                    return Err(bad(0));
                }
            }
            FiberGeometry::Hyperbolic { .. } => {
                if x[1] <= 0.0 {
                    return Err(bad(1));
                }
            }
            _ => {}
        }
        if let Some(i) = x.iter().position(|v| !v.is_finite()) {
            return Err(bad(i));
        }
        Ok(())
    }

    fn radius(&self) -> f64 {
        match self {
            FiberGeometry::FlatTorus { radius, .. }
            | FiberGeometry::Circle { radius }
            | FiberGeometry::Sphere { radius }
            | FiberGeometry::Hyperbolic { radius } => *radius,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FiberSpec {
    pub geometry: FiberGeometry,
    pub coords: Vec<String>,
    /// `None` marks a fiber declared not Einstein.
    pub einstein_constant: Option<f64>,
    pub scalar_curvature: f64,
}

impl FiberSpec {
    pub fn new(geometry: FiberGeometry) -> Self {
        let coords = geometry.default_coords();
        Self::with_coords(geometry, coords)
    }

    pub fn with_coords(geometry: FiberGeometry, coords: Vec<String>) -> Self {
        FiberSpec {
            einstein_constant: Some(geometry.einstein_constant()),
            scalar_curvature: geometry.scalar_curvature(),
            geometry,
            coords,
        }
    }

    pub fn torus(dim: usize) -> Self {
        Self::new(FiberGeometry::FlatTorus { dim, radius: 1.0 })
    }

    pub fn circle() -> Self {
        Self::new(FiberGeometry::Circle { radius: 1.0 })
    }

    pub fn sphere(radius: f64) -> Self {
        Self::new(FiberGeometry::Sphere { radius })
    }

    pub fn hyperbolic(radius: f64) -> Self {
        Self::new(FiberGeometry::Hyperbolic { radius })
    }

    /// Marks the fiber as not Einstein, e.g. to exercise precondition checks.
    pub fn declared_not_einstein(mut self) -> Self {
        self.einstein_constant = None;
        self
    }

    pub fn dim(&self) -> usize {
        self.geometry.dim()
    }

    fn validate(&self, index: usize) -> Result<()> {
        let l = self.dim();
        if l == 0 {
            return Err(GeometryError::InvalidDimension(format!("fiber {index} has dimension 0")));
        }
        if self.coords.len() != l {
            return Err(GeometryError::LengthMismatch { expected: l, got: self.coords.len() });
        }
        if self.geometry.radius() <= 0.0 {
            return Err(GeometryError::InvalidSpec(format!("fiber {index} radius must be positive")));
        }
        if let Some(lambda) = self.einstein_constant {
            if (self.scalar_curvature - l as f64 * lambda).abs() > 1e-12 {
                return Err(GeometryError::InvalidSpec(format!(
                    "fiber {index}: scalar curvature {} is not l·λ = {}",
                    self.scalar_curvature,
                    l as f64 * lambda
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum BaseChart {
    /// Interval with metric `−dt²`.
    Interval { coord: String, lo: f64, hi: f64 },
    /// Flat chart with constant diagonal signature entries `±1`.
    Flat { coords: Vec<String>, signature: Vec<f64> },
}

impl BaseChart {
    pub fn interval(lo: f64, hi: f64) -> Self {
        BaseChart::Interval { coord: "t".into(), lo, hi }
    }

    /// Riemannian flat chart with coordinates `u, v, w`.
    pub fn euclidean(dim: usize) -> Self {
        BaseChart::Flat {
            coords: ["u", "v", "w"][..dim.min(3)].iter().map(|s| s.to_string()).collect(),
            signature: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            BaseChart::Interval { .. } => 1,
            BaseChart::Flat { coords, .. } => coords.len(),
        }
    }

    pub fn coords(&self) -> Vec<String> {
        match self {
            BaseChart::Interval { coord, .. } => vec![coord.clone()],
            BaseChart::Flat { coords, .. } => coords.clone(),
        }
    }

    pub fn signature(&self) -> Vec<f64> {
        match self {
            BaseChart::Interval { .. } => vec![-1.0],
            BaseChart::Flat { signature, .. } => signature.clone(),
        }
    }

    pub fn is_interval(&self) -> bool {
        matches!(self, BaseChart::Interval { .. })
    }
}

/// Which block of a product chart a coordinate or vector lives in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Block {
    Base,
    Fiber(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProductManifoldSpec {
    pub base: BaseChart,
    pub fibers: Vec<FiberSpec>,
    pub warpings: Vec<ScalarExpr>,
    pub twisted: bool,
}

/// Coordinates in block order: base first, then each fiber as declared.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointCoords(pub Vec<f64>);

impl PointCoords {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn shifted(&self, index: usize, h: f64) -> PointCoords {
        let mut v = self.0.clone();
        v[index] += h;
        PointCoords(v)
    }
}

impl ProductManifoldSpec {
    pub fn new(base: BaseChart, fibers: Vec<FiberSpec>, warpings: Vec<ScalarExpr>) -> Result<Self> {
        let spec = ProductManifoldSpec { base, fibers, warpings, twisted: false };
        spec.validate()?;
        Ok(spec)
    }

    pub fn new_twisted(base: BaseChart, fibers: Vec<FiberSpec>, warpings: Vec<ScalarExpr>) -> Result<Self> {
        let spec = ProductManifoldSpec { base, fibers, warpings, twisted: true };
        spec.validate()?;
        Ok(spec)
    }

    /// `I ×_{b_1} F_1 × … ` over `−dt²` on `[lo, hi]`.
    pub fn warped_over_interval(fibers: Vec<FiberSpec>, warpings: Vec<ScalarExpr>, lo: f64, hi: f64) -> Result<Self> {
        Self::new(BaseChart::interval(lo, hi), fibers, warpings)
    }

    pub fn validate(&self) -> Result<()> {
        if self.fibers.len() != self.warpings.len() {
            return Err(GeometryError::LengthMismatch {
                expected: self.fibers.len(),
                got: self.warpings.len(),
            });
        }
        let nb = self.base.dim();
        if nb == 0 || nb > 3 {
            return Err(GeometryError::InvalidDimension(format!("base dimension {nb} not in 1..=3")));
        }
        if let BaseChart::Flat { signature, coords } = &self.base {
            if signature.len() != coords.len() || signature.iter().any(|s| s.abs() != 1.0) {
                return Err(GeometryError::InvalidSpec("flat base signature must be ±1 per coordinate".into()));
            }
        }
        if let BaseChart::Interval { lo, hi, .. } = &self.base {
            if !(lo < hi) {
                return Err(GeometryError::InvalidSpec(format!("empty interval [{lo}, {hi}]")));
            }
        }
        for (i, f) in self.fibers.iter().enumerate() {
            f.validate(i)?;
        }
        let names = self.coord_names();
        for (i, a) in names.iter().enumerate() {
            if names[..i].contains(a) {
                return Err(GeometryError::InvalidSpec(format!("duplicate coordinate name '{a}'")));
            }
        }
        let base = self.base.coords();
        for (i, w) in self.warpings.iter().enumerate() {
            for v in w.variables() {
                let allowed = base.contains(&v) || (self.twisted && self.fibers[i].coords.contains(&v));
                if !allowed {
                    return Err(GeometryError::InvalidSpec(format!(
                        "warping {i} references '{v}', which is not {}",
                        if self.twisted { "a base or own-fiber coordinate" } else { "a base coordinate" }
                    )));
                }
            }
        }
        Ok(())
    }

    /// `n̄`.
    pub fn dim(&self) -> usize {
        self.base.dim() + self.fibers.iter().map(FiberSpec::dim).sum::<usize>()
    }

    /// `n`.
    pub fn base_dim(&self) -> usize {
        self.base.dim()
    }

    pub fn fiber_dims(&self) -> Vec<usize> {
        self.fibers.iter().map(FiberSpec::dim).collect()
    }

    /// Index range of fiber `i` in block order.
    pub fn fiber_range(&self, i: usize) -> std::ops::Range<usize> {
        let start = self.base.dim() + self.fibers[..i].iter().map(FiberSpec::dim).sum::<usize>();
        start..start + self.fibers[i].dim()
    }

    pub fn block_range(&self, block: Block) -> std::ops::Range<usize> {
        match block {
            Block::Base => 0..self.base.dim(),
            Block::Fiber(i) => self.fiber_range(i),
        }
    }

    pub fn block_of(&self, index: usize) -> Block {
        if index < self.base.dim() {
            return Block::Base;
        }
        (0..self.fibers.len())
            .find(|&i| self.fiber_range(i).contains(&index))
            .map(Block::Fiber)
            .expect("index within chart dimension")
    }

    pub fn coord_names(&self) -> Vec<String> {
        let mut names = self.base.coords();
        for f in &self.fibers {
            names.extend(f.coords.iter().cloned());
        }
        names
    }

    /// Checks chart domains and warping positivity at `p`.
    pub fn check_point(&self, p: &PointCoords) -> Result<()> {
        let n = self.dim();
        if p.0.len() != n {
            return Err(GeometryError::LengthMismatch { expected: n, got: p.0.len() });
        }
        let names = self.coord_names();
        if let Some(i) = p.0.iter().position(|v| !v.is_finite()) {
            return Err(GeometryError::OutOfChart { coord: names[i].clone(), value: p.0[i] });
        }
        if let BaseChart::Interval { lo, hi, .. } = &self.base {
            let t = p.0[0];
            if t < *lo || t > *hi {
                return Err(GeometryError::OutOfChart { coord: names[0].clone(), value: t });
            }
        }
        for (i, f) in self.fibers.iter().enumerate() {
            let r = self.fiber_range(i);
            f.geometry.check_domain(&names[r.clone()], &p.0[r])?;
        }
        self.warping_values(p)?;
        Ok(())
    }

    /// Warping values at `p`, rejecting non-positive ones.
    pub fn warping_values(&self, p: &PointCoords) -> Result<Vec<f64>> {
        let names = self.coord_names();
        let env = Bindings::new(&names, &p.0);
        self.warpings
            .iter()
            .enumerate()
            .map(|(i, w)| {
                let v: f64 = w.eval(&env)?;
                if v > 0.0 && v.is_finite() {
                    Ok(v)
                } else {
                    Err(GeometryError::NonPositiveWarping { index: i, value: v })
                }
            })
            .collect()
    }

    /// Diagonal of the full metric, generic over the number type.
    pub fn metric_diag<T: Scalar>(&self, x: &[T]) -> Result<Vec<T>> {
        let names = self.coord_names();
        let env = Bindings::new(&names, x);
        let mut out: Vec<T> = self.base.signature().into_iter().map(T::constant).collect();
        for (i, f) in self.fibers.iter().enumerate() {
            let b = self.warpings[i].eval(&env)?;
            if !(b.re() > 0.0) {
                return Err(GeometryError::NonPositiveWarping { index: i, value: b.re() });
            }
            let r = self.fiber_range(i);
            for gi in f.geometry.metric_diag(&x[r]) {
                out.push(b * b * gi);
            }
        }
        Ok(out)
    }

    /// Same block structure with fibers listed in `order`.
    pub fn permuted(&self, order: &[usize]) -> ProductManifoldSpec {
        ProductManifoldSpec {
            base: self.base.clone(),
            fibers: order.iter().map(|&i| self.fibers[i].clone()).collect(),
            warpings: order.iter().map(|&i| self.warpings[i].clone()).collect(),
            twisted: self.twisted,
        }
    }

    /// Point coordinates after applying a fiber permutation.
    pub fn permute_point(&self, p: &PointCoords, order: &[usize]) -> PointCoords {
        let mut v = p.0[..self.base.dim()].to_vec();
        for &i in order {
            v.extend_from_slice(&p.0[self.fiber_range(i)]);
        }
        PointCoords(v)
    }
}

/// Metric diagonal with its first and second coordinate derivatives.
#[derive(Clone, Debug)]
pub struct MetricJet {
    pub g: Vec<f64>,
    /// `dg[k][i] = ∂_k g_ii`.
    pub dg: Vec<Vec<f64>>,
    /// `d2g[k][l][i] = ∂_k ∂_l g_ii`.
    pub d2g: Vec<Vec<Vec<f64>>>,
}

impl MetricJet {
    pub fn at(spec: &ProductManifoldSpec, p: &PointCoords) -> Result<Self> {
        let n = spec.dim();
        let g = spec.metric_diag(&p.0)?;
        if g.iter().any(|v| *v == 0.0) {
            return Err(GeometryError::SingularMetric);
        }
        let mut dg = vec![vec![0.0; n]; n];
        let mut d2g = vec![vec![vec![0.0; n]; n]; n];
        for k in 0..n {
            for l in k..n {
                let x: Vec<HyperDual> = (0..n)
                    .map(|a| {
                        HyperDual::new(p.0[a], if a == k { 1.0 } else { 0.0 }, if a == l { 1.0 } else { 0.0 }, 0.0)
                    })
                    .collect();
                let d = spec.metric_diag(&x)?;
                for i in 0..n {
                    if l == k {
                        dg[k][i] = d[i].e1;
                    }
                    d2g[k][l][i] = d[i].e12;
                    d2g[l][k][i] = d[i].e12;
                }
            }
        }
        Ok(MetricJet { g, dg, d2g })
    }

    pub fn dim(&self) -> usize {
        self.g.len()
    }
}

/// `Γ^k_{ij}`, stored with the upper index first.
#[derive(Clone, Debug, PartialEq)]
pub struct ConnectionCoefficients {
    pub dim: usize,
    data: Vec<f64>,
}

impl ConnectionCoefficients {
    pub fn zeros(dim: usize) -> Self {
        ConnectionCoefficients { dim, data: vec![0.0; dim * dim * dim] }
    }

    #[inline]
    fn idx(&self, k: usize, i: usize, j: usize) -> usize {
        (k * self.dim + i) * self.dim + j
    }

    #[inline]
    pub fn get(&self, k: usize, i: usize, j: usize) -> f64 {
        self.data[self.idx(k, i, j)]
    }

    #[inline]
    pub fn set(&mut self, k: usize, i: usize, j: usize, v: f64) {
        let n = self.idx(k, i, j);
        self.data[n] = v;
    }

    #[inline]
    pub fn add(&mut self, k: usize, i: usize, j: usize, v: f64) {
        let n = self.idx(k, i, j);
        self.data[n] += v;
    }

    /// `∇_X Y` for constant-coefficient fields `X`, `Y`.
    pub fn covariant_derivative(&self, x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
        let n = self.dim;
        DVector::from_fn(n, |k, _| {
            let mut s = 0.0;
            for i in 0..n {
                if x[i] == 0.0 {
                    continue;
                }
                for j in 0..n {
                    s += self.get(k, i, j) * x[i] * y[j];
                }
            }
            s
        })
    }

    pub fn max_abs_diff(&self, other: &ConnectionCoefficients) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    fn axpy(&mut self, a: f64, other: &ConnectionCoefficients) {
        for (s, o) in self.data.iter_mut().zip(&other.data) {
            *s += a * o;
        }
    }
}

fn christoffel_from_jet(jet: &MetricJet) -> ConnectionCoefficients {
    let n = jet.dim();
    let mut c = ConnectionCoefficients::zeros(n);
    // Diagonal metric: only the l = k term of g^{kl} survives.
    for k in 0..n {
        let ginv = 1.0 / jet.g[k];
        for i in 0..n {
            for j in 0..n {
                let di_gjk = if j == k { jet.dg[i][k] } else { 0.0 };
                let dj_gik = if i == k { jet.dg[j][k] } else { 0.0 };
                let dk_gij = if i == j { jet.dg[k][i] } else { 0.0 };
                let v = 0.5 * ginv * (di_gjk + dj_gik - dk_gij);
                if v != 0.0 {
                    c.set(k, i, j, v);
                }
            }
        }
    }
    c
}

pub fn assemble_metric(spec: &ProductManifoldSpec, p: &PointCoords) -> Result<DMatrix<f64>> {
    spec.check_point(p)?;
    Ok(DMatrix::from_diagonal(&DVector::from_vec(spec.metric_diag(&p.0)?)))
}

/// `result[k][(i, j)] = ∂_k g_ij`, exact via dual numbers.
pub fn metric_derivatives(spec: &ProductManifoldSpec, p: &PointCoords) -> Result<Vec<DMatrix<f64>>> {
    spec.check_point(p)?;
    let n = spec.dim();
    (0..n)
        .map(|k| {
            let x: Vec<Dual> = (0..n).map(|a| Dual::new(p.0[a], if a == k { 1.0 } else { 0.0 })).collect();
            let d = spec.metric_diag(&x)?;
            Ok(DMatrix::from_diagonal(&DVector::from_iterator(n, d.iter().map(|v| v.eps))))
        })
        .collect()
}

pub fn levi_civita_coefficients(spec: &ProductManifoldSpec, p: &PointCoords) -> Result<ConnectionCoefficients> {
    spec.check_point(p)?;
    levi_civita_unchecked(spec, p)
}

/// Christoffel symbols without the chart-domain check, for points displaced
/// by a finite-difference step.
pub(crate) fn levi_civita_unchecked(spec: &ProductManifoldSpec, p: &PointCoords) -> Result<ConnectionCoefficients> {
    Ok(christoffel_from_jet(&MetricJet::at(spec, p)?))
}

/// Riemann tensor `R^l_{ijk}` stored as `[l][i][j][k]`, with Ricci and scalar.
#[derive(Clone, Debug)]
pub struct CurvatureAtPoint {
    pub dim: usize,
    riemann: Vec<f64>,
    /// `Ric_{ij} = Ric(∂_i, ∂_j)`; not assumed symmetric.
    pub ricci: DMatrix<f64>,
    pub scalar: f64,
}

impl CurvatureAtPoint {
    /// Builds Ricci and scalar from a Riemann array and the diagonal metric.
    pub fn from_riemann(dim: usize, riemann: Vec<f64>, metric_diag: &[f64]) -> Self {
        let mut c = CurvatureAtPoint { dim, riemann, ricci: DMatrix::zeros(dim, dim), scalar: 0.0 };
        c.recontract(metric_diag);
        c
    }

    fn recontract(&mut self, metric_diag: &[f64]) {
        let n = self.dim;
        self.ricci = DMatrix::from_fn(n, n, |i, j| (0..n).map(|l| self.riemann(l, i, l, j)).sum());
        self.scalar = (0..n).map(|i| self.ricci[(i, i)] / metric_diag[i]).sum();
    }

    #[inline]
    pub fn riemann(&self, l: usize, i: usize, j: usize, k: usize) -> f64 {
        let n = self.dim;
        self.riemann[((l * n + i) * n + j) * n + k]
    }

    pub fn riemann_data(&self) -> &[f64] {
        &self.riemann
    }

    /// `R(X,Y)Z`.
    pub fn apply(&self, x: &DVector<f64>, y: &DVector<f64>, z: &DVector<f64>) -> DVector<f64> {
        let n = self.dim;
        DVector::from_fn(n, |l, _| {
            let mut s = 0.0;
            for i in 0..n {
                if x[i] == 0.0 {
                    continue;
                }
                for j in 0..n {
                    if y[j] == 0.0 {
                        continue;
                    }
                    for k in 0..n {
                        s += self.riemann(l, i, j, k) * x[i] * y[j] * z[k];
                    }
                }
            }
            s
        })
    }

    /// Largest entrywise difference of the Riemann arrays.
    pub fn max_riemann_diff(&self, other: &CurvatureAtPoint) -> f64 {
        self.riemann.iter().zip(&other.riemann).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    pub fn max_ricci_diff(&self, other: &CurvatureAtPoint) -> f64 {
        (&self.ricci - &other.ricci).abs().max()
    }

    /// `Σ ε_a Ric(E_a, E_a)` in the given frame.
    pub fn frame_scalar(&self, frame: &FrameField) -> f64 {
        frame
            .vectors
            .iter()
            .zip(&frame.signs)
            .map(|(e, s)| s * (e.transpose() * &self.ricci * e)[(0, 0)])
            .sum()
    }

    /// `max |R^l_{ijk} + R^l_{jik}|`.
    pub fn antisymmetry_defect(&self) -> f64 {
        let n = self.dim;
        let mut m: f64 = 0.0;
        for l in 0..n {
            for i in 0..n {
                for j in 0..n {
                    for k in 0..n {
                        m = m.max((self.riemann(l, i, j, k) + self.riemann(l, j, i, k)).abs());
                    }
                }
            }
        }
        m
    }

    /// `max |R^l_{ijk} + R^l_{jki} + R^l_{kij}|`.
    pub fn bianchi_defect(&self) -> f64 {
        let n = self.dim;
        let mut m: f64 = 0.0;
        for l in 0..n {
            for i in 0..n {
                for j in 0..n {
                    for k in 0..n {
                        let s = self.riemann(l, i, j, k) + self.riemann(l, j, k, i) + self.riemann(l, k, i, j);
                        m = m.max(s.abs());
                    }
                }
            }
        }
        m
    }
}

pub(crate) fn riemann_index(n: usize, l: usize, i: usize, j: usize, k: usize) -> usize {
    ((l * n + i) * n + j) * n + k
}

/// Riemann array from coefficients `c` and their derivatives `dc[i] = ∂_i Γ`.
pub(crate) fn riemann_from_parts(c: &ConnectionCoefficients, dc: &[ConnectionCoefficients]) -> Vec<f64> {
    let n = c.dim;
    let mut r = vec![0.0; n * n * n * n];
    for l in 0..n {
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                for k in 0..n {
                    let mut v = dc[i].get(l, j, k) - dc[j].get(l, i, k);
                    for m in 0..n {
                        v += c.get(l, i, m) * c.get(m, j, k) - c.get(l, j, m) * c.get(m, i, k);
                    }
                    r[riemann_index(n, l, i, j, k)] = v;
                }
            }
        }
    }
    r
}

/// Exact Levi-Civita curvature from second metric derivatives.
pub fn levi_civita_curvature(spec: &ProductManifoldSpec, p: &PointCoords) -> Result<CurvatureAtPoint> {
    spec.check_point(p)?;
    let jet = MetricJet::at(spec, p)?;
    let n = jet.dim();
    let c = christoffel_from_jet(&jet);
    // ∂_a Γ^k_{ij} = ½ ∂_a(1/g_kk)(…) + ½ (1/g_kk) ∂_a(…)
    let dc: Vec<ConnectionCoefficients> = (0..n)
        .map(|a| {
            let mut d = ConnectionCoefficients::zeros(n);
            for k in 0..n {
                let ginv = 1.0 / jet.g[k];
                let dginv = -jet.dg[a][k] * ginv * ginv;
                for i in 0..n {
                    for j in 0..n {
                        let t = (if j == k { jet.dg[i][k] } else { 0.0 }) + (if i == k { jet.dg[j][k] } else { 0.0 })
                            - (if i == j { jet.dg[k][i] } else { 0.0 });
                        let dt = (if j == k { jet.d2g[a][i][k] } else { 0.0 })
                            + (if i == k { jet.d2g[a][j][k] } else { 0.0 })
                            - (if i == j { jet.d2g[a][k][i] } else { 0.0 });
                        let v = 0.5 * (dginv * t + ginv * dt);
                        if v != 0.0 {
                            d.set(k, i, j, v);
                        }
                    }
                }
            }
            d
        })
        .collect();
    Ok(CurvatureAtPoint::from_riemann(n, riemann_from_parts(&c, &dc), &jet.g))
}

/// Curvature of an arbitrary coefficient field, differentiated by central
/// differences with one Richardson extrapolation step.
///
/// The estimates at step `h` and `h/2` must agree to
/// [`tolerance::INSTABILITY`]; otherwise the step is too coarse for the field.
pub fn curvature_from_coefficients<F>(spec: &ProductManifoldSpec, field: F, p: &PointCoords) -> Result<CurvatureAtPoint>
where
    F: Fn(&PointCoords) -> Result<ConnectionCoefficients>,
{
    spec.check_point(p)?;
    let n = spec.dim();
    let g = spec.metric_diag(&p.0)?;
    if g.iter().any(|v| *v == 0.0) {
        return Err(GeometryError::SingularMetric);
    }
    let c = field(p)?;
    let h = FD_STEP;
    let mut dc = Vec::with_capacity(n);
    for i in 0..n {
        let central = |step: f64| -> Result<ConnectionCoefficients> {
            let mut d = field(&p.shifted(i, step))?;
            d.axpy(-1.0, &field(&p.shifted(i, -step))?);
            for v in d.data.iter_mut() {
                *v /= 2.0 * step;
            }
            Ok(d)
        };
        let coarse = central(h)?;
        let fine = central(0.5 * h)?;
        let scale = 1.0 + fine.data.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let gap = coarse.max_abs_diff(&fine);
        if gap > tolerance::INSTABILITY * scale {
            return Err(GeometryError::NumericalInstability(format!(
                "coefficient derivative along coordinate {i}: step estimates differ by {gap:e}"
            )));
        }
        let mut r = fine.clone();
        for (v, (cf, ff)) in r.data.iter_mut().zip(coarse.data.iter().zip(&fine.data)) {
            *v = (4.0 * ff - cf) / 3.0;
        }
        dc.push(r);
    }
    Ok(CurvatureAtPoint::from_riemann(n, riemann_from_parts(&c, &dc), &g))
}

/// Orthonormal frame `E_a` with signs `ε_a = g(E_a, E_a)`.
#[derive(Clone, Debug)]
pub struct FrameField {
    pub vectors: Vec<DVector<f64>>,
    pub signs: Vec<f64>,
}

impl FrameField {
    /// `max |g(E_a, E_b) − ε_a δ_ab|`.
    pub fn orthonormality_defect(&self, metric: &DMatrix<f64>) -> f64 {
        let mut m: f64 = 0.0;
        for (a, ea) in self.vectors.iter().enumerate() {
            for (b, eb) in self.vectors.iter().enumerate() {
                let gab = (ea.transpose() * metric * eb)[(0, 0)];
                let target = if a == b { self.signs[a] } else { 0.0 };
                m = m.max((gab - target).abs());
            }
        }
        m
    }
}

/// Block-aligned orthonormal frame obtained by rescaling coordinate fields.
pub fn orthonormal_frame(spec: &ProductManifoldSpec, p: &PointCoords) -> Result<FrameField> {
    spec.check_point(p)?;
    let g = spec.metric_diag(&p.0)?;
    let n = g.len();
    let mut vectors = Vec::with_capacity(n);
    let mut signs = Vec::with_capacity(n);
    for (a, &gaa) in g.iter().enumerate() {
        if gaa == 0.0 {
            return Err(GeometryError::SingularMetric);
        }
        let mut e = DVector::zeros(n);
        e[a] = 1.0 / gaa.abs().sqrt();
        vectors.push(e);
        signs.push(gaa.signum());
    }
    Ok(FrameField { vectors, signs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn grw(warp: &str, fiber: FiberSpec) -> ProductManifoldSpec {
        ProductManifoldSpec::warped_over_interval(vec![fiber], vec![ScalarExpr::parse(warp).unwrap()], -2.0, 2.0)
            .unwrap()
    }

    #[test]
    fn metric_of_exponential_torus() {
        let s = grw("exp(t)", FiberSpec::torus(2));
        let g = assemble_metric(&s, &PointCoords(vec![0.0, 0.3, 0.4])).unwrap();
        assert_eq!(g, DMatrix::from_diagonal(&DVector::from_vec(vec![-1.0, 1.0, 1.0])));
        let g = assemble_metric(&s, &PointCoords(vec![2f64.ln(), 0.0, 0.0])).unwrap();
        assert_relative_eq!(g[(1, 1)], 4.0, epsilon = 1e-14);
        assert_relative_eq!(g[(2, 2)], 4.0, epsilon = 1e-14);
    }

    #[test]
    fn kasner_metric_with_two_fibers() {
        let mut t2 = FiberSpec::torus(2);
        t2.coords = vec!["y".into(), "z".into()];
        let s = ProductManifoldSpec::warped_over_interval(
            vec![FiberSpec::circle(), t2],
            vec![ScalarExpr::parse("exp(t)").unwrap(), ScalarExpr::parse("exp(t)^2").unwrap()],
            0.0,
            2.0,
        )
        .unwrap();
        let g = assemble_metric(&s, &PointCoords(vec![1.0, 0.0, 0.0, 0.0])).unwrap();
        let e = std::f64::consts::E;
        assert_relative_eq!(g[(1, 1)], e * e, epsilon = 1e-12);
        assert_relative_eq!(g[(2, 2)], e.powi(4), epsilon = 1e-12);
        assert_relative_eq!(g[(3, 3)], e.powi(4), epsilon = 1e-12);
    }

    #[test]
    fn warping_positivity_and_chart_domain() {
        let s = grw("t", FiberSpec::circle());
        assert!(matches!(
            assemble_metric(&s, &PointCoords(vec![-1.0, 0.0])),
            Err(GeometryError::NonPositiveWarping { index: 0, .. })
        ));
        let s = grw("1", FiberSpec::sphere(1.0));
        assert!(matches!(
            assemble_metric(&s, &PointCoords(vec![0.0, 0.1, 0.0])),
            Err(GeometryError::OutOfChart { .. })
        ));
    }

    #[test]
    fn exponential_warping_derivative() {
        let s = grw("exp(t)", FiberSpec::torus(2));
        let d = metric_derivatives(&s, &PointCoords(vec![0.5, 0.0, 0.0])).unwrap();
        assert_relative_eq!(d[0][(1, 1)], 2.0 * 1f64.exp(), epsilon = 1e-12);
        assert_eq!(d[1].abs().max(), 0.0);
    }

    #[test]
    fn grw_christoffels_by_hand() {
        let s = grw("exp(t)", FiberSpec::circle());
        let t = 0.3;
        let c = levi_civita_coefficients(&s, &PointCoords(vec![t, 0.0])).unwrap();
        assert_relative_eq!(c.get(0, 1, 1), (2.0 * t).exp(), epsilon = 1e-12);
        assert_relative_eq!(c.get(1, 0, 1), 1.0, epsilon = 1e-12);
        assert_relative_eq!(c.get(1, 1, 0), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn sphere_christoffel() {
        let s = grw("1", FiberSpec::sphere(1.0));
        let th = 1.1;
        let c = levi_civita_coefficients(&s, &PointCoords(vec![0.0, th, 0.4])).unwrap();
        assert_relative_eq!(c.get(1, 2, 2), -th.sin() * th.cos(), epsilon = 1e-12);
        assert_relative_eq!(c.get(2, 1, 2), th.cos() / th.sin(), epsilon = 1e-12);
    }

    #[test]
    fn frame_of_radius_two_sphere_block() {
        let s = grw("1", FiberSpec::sphere(2.0));
        let p = PointCoords(vec![0.0, std::f64::consts::FRAC_PI_2, 0.0]);
        let f = orthonormal_frame(&s, &p).unwrap();
        assert_eq!(f.signs, vec![-1.0, 1.0, 1.0]);
        assert_relative_eq!(f.vectors[1][1], 0.5, epsilon = 1e-15);
        assert_relative_eq!(f.vectors[2][2], 0.5, epsilon = 1e-15);
        assert!(f.orthonormality_defect(&assemble_metric(&s, &p).unwrap()) < 1e-10);
    }

    #[test]
    fn exact_and_differenced_curvature_agree() {
        let s = grw("t^2 + 1", FiberSpec::sphere(1.0));
        let p = PointCoords(vec![0.7, 1.0, 0.3]);
        let exact = levi_civita_curvature(&s, &p).unwrap();
        let fd = curvature_from_coefficients(&s, |q| levi_civita_coefficients(&s, q), &p).unwrap();
        assert!(exact.max_riemann_diff(&fd) < 1e-7);
        assert!(exact.antisymmetry_defect() < 1e-12);
        assert!(exact.bianchi_defect() < 1e-12);
    }

    #[test]
    fn unit_sphere_curvature_in_crate_convention() {
        let s = grw("1", FiberSpec::sphere(1.0));
        let c = levi_civita_curvature(&s, &PointCoords(vec![0.0, 1.2, 0.0])).unwrap();
        // Sectional curvature g(R(X,Y)Y, X) / (|X|²|Y|²) = 1.
        let th: f64 = 1.2;
        let x = DVector::from_vec(vec![0.0, 1.0, 0.0]);
        let y = DVector::from_vec(vec![0.0, 0.0, 1.0]);
        let r = c.apply(&x, &y, &y);
        assert_relative_eq!(r[1] / (th.sin() * th.sin()), 1.0, epsilon = 1e-12);
        assert_relative_eq!(c.scalar, -2.0, epsilon = 1e-12);
    }
}
