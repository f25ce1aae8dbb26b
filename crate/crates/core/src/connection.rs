//! The semi-symmetric non-metric connection `∇̄_X Y = ∇_X Y + π(Y) X` and the
//! torsion-free variant `∇̃_X Y = ∇_X Y + π(X) Y + π(Y) X`, where
//! `π = g(·, P)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::chart::{
    curvature_from_coefficients, levi_civita_curvature, levi_civita_unchecked, riemann_index, Block,
    ConnectionCoefficients, CurvatureAtPoint, MetricJet, PointCoords, ProductManifoldSpec,
};
use crate::error::{GeometryError, Result};
use crate::expr::{Bindings, ScalarExpr};
use crate::tolerance;

/// The vector field `P`, living entirely in one block.
///
/// Components are given per coordinate of the hosting block and may depend
/// only on that block's coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TorsionField {
    pub location: Block,
    pub components: Vec<ScalarExpr>,
}

impl TorsionField {
    pub fn on_base(components: Vec<ScalarExpr>) -> Self {
        TorsionField { location: Block::Base, components }
    }

    pub fn on_fiber(r: usize, components: Vec<ScalarExpr>) -> Self {
        TorsionField { location: Block::Fiber(r), components }
    }

    /// `P = ∂_t` on an interval base.
    pub fn time() -> Self {
        Self::on_base(vec![ScalarExpr::constant(1.0)])
    }

    /// Splits full-chart components into a single-block field.
    ///
    /// Components that are the literal constant zero count as absent. A field
    /// with nonzero components in two blocks is rejected.
    pub fn from_full(spec: &ProductManifoldSpec, components: Vec<ScalarExpr>) -> Result<Self> {
        let n = spec.dim();
        if components.len() != n {
            return Err(GeometryError::LengthMismatch { expected: n, got: components.len() });
        }
        let mut blocks: Vec<Block> = components
            .iter()
            .enumerate()
            .filter(|(_, c)| **c != ScalarExpr::Const(0.0))
            .map(|(i, _)| spec.block_of(i))
            .collect();
        blocks.dedup();
        let location = match blocks.as_slice() {
            [] => Block::Base,
            [b] => *b,
            _ => return Err(GeometryError::UnsupportedP("components span more than one block".into())),
        };
        let range = spec.block_range(location);
        let field = TorsionField { location, components: components[range].to_vec() };
        field.validate(spec)?;
        Ok(field)
    }

    pub fn validate(&self, spec: &ProductManifoldSpec) -> Result<()> {
        if let Block::Fiber(r) = self.location {
            if r >= spec.fibers.len() {
                return Err(GeometryError::UnsupportedP(format!("fiber {r} does not exist")));
            }
        }
        let range = spec.block_range(self.location);
        if self.components.len() != range.len() {
            return Err(GeometryError::LengthMismatch { expected: range.len(), got: self.components.len() });
        }
        let names = spec.coord_names();
        let allowed = &names[range];
        for c in &self.components {
            if let Some(v) = c.variables().into_iter().find(|v| !allowed.contains(v)) {
                return Err(GeometryError::UnsupportedP(format!(
                    "component depends on '{v}', outside the hosting block"
                )));
            }
        }
        Ok(())
    }

    pub fn scaled(&self, c: f64) -> TorsionField {
        TorsionField {
            location: self.location,
            components: self.components.iter().map(|e| e.clone().scale(c)).collect(),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.components.iter().all(|c| *c == ScalarExpr::Const(0.0))
    }

    /// `P^m` in full chart coordinates.
    pub fn vector_at(&self, spec: &ProductManifoldSpec, p: &PointCoords) -> Result<DVector<f64>> {
        let names = spec.coord_names();
        let env = Bindings::new(&names, &p.0);
        let mut v = DVector::zeros(spec.dim());
        for (k, c) in spec.block_range(self.location).zip(&self.components) {
            v[k] = c.eval(&env)?;
        }
        Ok(v)
    }

    /// `d[(m, i)] = ∂_i P^m`.
    pub fn jacobian_at(&self, spec: &ProductManifoldSpec, p: &PointCoords) -> Result<DMatrix<f64>> {
        let names = spec.coord_names();
        let n = spec.dim();
        let mut d = DMatrix::zeros(n, n);
        for (k, c) in spec.block_range(self.location).zip(&self.components) {
            if c.is_constant() {
                continue;
            }
            let grad = c.gradient(&names, &p.0)?;
            for i in 0..n {
                d[(k, i)] = grad[i];
            }
        }
        Ok(d)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConnectionKind {
    LeviCivita,
    SemiSymmetricNonMetric,
    SymmetrizedAffine,
}

impl ConnectionKind {
    pub fn name(&self) -> &'static str {
        match self {
            ConnectionKind::LeviCivita => "levi-civita",
            ConnectionKind::SemiSymmetricNonMetric => "semi-symmetric",
            ConnectionKind::SymmetrizedAffine => "symmetrized",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Connection {
    LeviCivita,
    SemiSymmetric(TorsionField),
    Symmetrized(TorsionField),
}

impl Connection {
    pub fn new(kind: ConnectionKind, field: Option<TorsionField>) -> Result<Self> {
        match (kind, field) {
            (ConnectionKind::LeviCivita, _) => Ok(Connection::LeviCivita),
            (ConnectionKind::SemiSymmetricNonMetric, Some(f)) => Ok(Connection::SemiSymmetric(f)),
            (ConnectionKind::SymmetrizedAffine, Some(f)) => Ok(Connection::Symmetrized(f)),
            (k, None) => Err(GeometryError::UnsupportedP(format!("{} connection needs a vector field P", k.name()))),
        }
    }

    pub fn kind(&self) -> ConnectionKind {
        match self {
            Connection::LeviCivita => ConnectionKind::LeviCivita,
            Connection::SemiSymmetric(_) => ConnectionKind::SemiSymmetricNonMetric,
            Connection::Symmetrized(_) => ConnectionKind::SymmetrizedAffine,
        }
    }

    pub fn field(&self) -> Option<&TorsionField> {
        match self {
            Connection::LeviCivita => None,
            Connection::SemiSymmetric(f) | Connection::Symmetrized(f) => Some(f),
        }
    }

    fn validate(&self, spec: &ProductManifoldSpec) -> Result<()> {
        match self.field() {
            Some(f) => f.validate(spec),
            None => Ok(()),
        }
    }
}

/// Rank-3 array indexed `[a][b][c]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Rank3 {
    pub dim: usize,
    data: Vec<f64>,
}

impl Rank3 {
    fn from_fn(dim: usize, f: impl Fn(usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(dim * dim * dim);
        for a in 0..dim {
            for b in 0..dim {
                for c in 0..dim {
                    data.push(f(a, b, c));
                }
            }
        }
        Rank3 { dim, data }
    }

    #[inline]
    pub fn get(&self, a: usize, b: usize, c: usize) -> f64 {
        self.data[(a * self.dim + b) * self.dim + c]
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &Rank3) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

/// `π`, `∇P` and `dπ` at a point, all in coordinate components.
#[derive(Clone, Debug)]
pub struct FieldJet {
    pub p: DVector<f64>,
    /// `π_j = g_jj P^j`.
    pub pi: DVector<f64>,
    /// `nabla_p[(k, i)] = (∇_{∂_i} P)^k` for the Levi-Civita connection.
    pub nabla_p: DMatrix<f64>,
    /// `dpi[(i, j)] = ∂_i π_j`.
    pub dpi: DMatrix<f64>,
}

impl FieldJet {
    pub fn at(spec: &ProductManifoldSpec, field: &TorsionField, p: &PointCoords) -> Result<Self> {
        let jet = MetricJet::at(spec, p)?;
        let lc = levi_civita_unchecked(spec, p)?;
        let n = spec.dim();
        let pv = field.vector_at(spec, p)?;
        let dp = field.jacobian_at(spec, p)?;
        let pi = DVector::from_fn(n, |j, _| jet.g[j] * pv[j]);
        let nabla_p = DMatrix::from_fn(n, n, |k, i| dp[(k, i)] + (0..n).map(|m| lc.get(k, i, m) * pv[m]).sum::<f64>());
        let dpi = DMatrix::from_fn(n, n, |i, j| jet.dg[i][j] * pv[j] + jet.g[j] * dp[(j, i)]);
        Ok(FieldJet { p: pv, pi, nabla_p, dpi })
    }

    pub fn zero(n: usize) -> Self {
        FieldJet {
            p: DVector::zeros(n),
            pi: DVector::zeros(n),
            nabla_p: DMatrix::zeros(n, n),
            dpi: DMatrix::zeros(n, n),
        }
    }
}

fn coefficients_unchecked(conn: &Connection, spec: &ProductManifoldSpec, p: &PointCoords) -> Result<ConnectionCoefficients> {
    let mut c = levi_civita_unchecked(spec, p)?;
    let Some(field) = conn.field() else {
        return Ok(c);
    };
    let n = spec.dim();
    let g = spec.metric_diag(&p.0)?;
    let pv = field.vector_at(spec, p)?;
    let pi: Vec<f64> = (0..n).map(|j| g[j] * pv[j]).collect();
    let symmetrized = conn.kind() == ConnectionKind::SymmetrizedAffine;
    for k in 0..n {
        for j in 0..n {
            // Γ̄^k_{kj} += π_j
            c.add(k, k, j, pi[j]);
            if symmetrized {
                // Γ̃^k_{ik} += π_i
                c.add(k, j, k, pi[j]);
            }
        }
    }
    Ok(c)
}

/// `Γ̄^k_{ij} = Γ^k_{ij} + π_j δ^k_i` or `Γ̃^k_{ij} = Γ^k_{ij} + π_i δ^k_j + π_j δ^k_i`.
pub fn modified_coefficients(conn: &Connection, spec: &ProductManifoldSpec, p: &PointCoords) -> Result<ConnectionCoefficients> {
    spec.check_point(p)?;
    conn.validate(spec)?;
    coefficients_unchecked(conn, spec, p)
}

/// `T^k_{ij} = Γ^k_{ij} − Γ^k_{ji}`.
pub fn torsion_tensor(conn: &Connection, spec: &ProductManifoldSpec, p: &PointCoords) -> Result<Rank3> {
    let c = modified_coefficients(conn, spec, p)?;
    Ok(Rank3::from_fn(spec.dim(), |k, i, j| c.get(k, i, j) - c.get(k, j, i)))
}

/// `Q[i][j][k] = (∇_{∂_i} g)(∂_j, ∂_k) = ∂_i g_jk − Γ^m_{ij} g_mk − Γ^m_{ik} g_jm`.
pub fn nonmetricity(conn: &Connection, spec: &ProductManifoldSpec, p: &PointCoords) -> Result<Rank3> {
    let c = modified_coefficients(conn, spec, p)?;
    let jet = MetricJet::at(spec, p)?;
    Ok(Rank3::from_fn(spec.dim(), |i, j, k| {
        let d = if j == k { jet.dg[i][j] } else { 0.0 };
        d - c.get(k, i, j) * jet.g[k] - c.get(j, i, k) * jet.g[j]
    }))
}

/// Curvature from the Levi-Civita curvature plus the `P` terms:
///
/// `R̄(X,Y)Z = R(X,Y)Z + g(Z,∇_X P)Y − g(Z,∇_Y P)X + π(Z)[π(Y)X − π(X)Y]`
///
/// and for the symmetrized connection additionally
/// `X(π(Y))Z − Y(π(X))Z − π([X,Y])Z`, whose last term vanishes on
/// coordinate fields.
pub fn curvature_via_relation(conn: &Connection, spec: &ProductManifoldSpec, p: &PointCoords) -> Result<CurvatureAtPoint> {
    conn.validate(spec)?;
    let lc = levi_civita_curvature(spec, p)?;
    let Some(field) = conn.field() else {
        return Ok(lc);
    };
    let n = spec.dim();
    let g = spec.metric_diag(&p.0)?;
    let fj = FieldJet::at(spec, field, p)?;
    // a[(i, k)] = g(∂_k, ∇_i P)
    let a = DMatrix::from_fn(n, n, |i, k| g[k] * fj.nabla_p[(k, i)]);
    let symmetrized = conn.kind() == ConnectionKind::SymmetrizedAffine;
    let mut r = lc.riemann_data().to_vec();
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                // l = j and l = i terms
                r[riemann_index(n, j, i, j, k)] += a[(i, k)] + fj.pi[k] * (-fj.pi[i]);
                r[riemann_index(n, i, i, j, k)] += -a[(j, k)] + fj.pi[k] * fj.pi[j];
                if symmetrized {
                    r[riemann_index(n, k, i, j, k)] += fj.dpi[(i, j)] - fj.dpi[(j, i)];
                }
            }
        }
    }
    Ok(CurvatureAtPoint::from_riemann(n, r, &g))
}

/// Curvature by differencing the modified coefficients.
pub fn curvature_via_coefficients(conn: &Connection, spec: &ProductManifoldSpec, p: &PointCoords) -> Result<CurvatureAtPoint> {
    conn.validate(spec)?;
    curvature_from_coefficients(spec, |q| coefficients_unchecked(conn, spec, q), p)
}

/// Curvature for any connection kind, via the relation formula.
pub fn curvature(conn: &Connection, spec: &ProductManifoldSpec, p: &PointCoords) -> Result<CurvatureAtPoint> {
    curvature_via_relation(conn, spec, p)
}

/// Max Riemann difference between the relation and coefficient routes.
///
/// Disagreement above [`tolerance::INSTABILITY`] signals a step-size or
/// convention problem and is reported as [`GeometryError::NumericalInstability`].
pub fn relation_consistency(conn: &Connection, spec: &ProductManifoldSpec, p: &PointCoords) -> Result<f64> {
    let a = curvature_via_relation(conn, spec, p)?;
    let b = curvature_via_coefficients(conn, spec, p)?;
    let d = a.max_riemann_diff(&b);
    if d > tolerance::INSTABILITY {
        return Err(GeometryError::NumericalInstability(format!(
            "relation and coefficient curvature differ by {d:e}"
        )));
    }
    Ok(d)
}
