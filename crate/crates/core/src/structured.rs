//! Block formulas for connections and curvature on multiply warped and
//! twisted products.
//!
//! Nothing here touches the assembled chart metric's Christoffel symbols.
//! Every value is built from the warping functions `b_i` (value, base and
//! fiber derivatives, Hessian), the fiber metrics `g_{F_i}` with their own
//! Levi-Civita data, and the components of `P`. Arguments are
//! constant-coefficient combinations of coordinate fields of a single block,
//! which are lifts of base or fiber fields.
//!
//! Every evaluation reports the name of the formula case it used.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub use crate::chart::Block;
use crate::chart::{PointCoords, ProductManifoldSpec};
use crate::connection::{Connection, ConnectionKind};
use crate::error::{GeometryError, Result};
use crate::expr::Bindings;
use crate::scalar::{Dual, HyperDual};
use crate::tolerance;

/// A tangent vector with all components inside one block.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockVector {
    pub block: Block,
    /// Full-length components in chart order.
    pub components: DVector<f64>,
}

impl BlockVector {
    pub fn new(spec: &ProductManifoldSpec, block: Block, components: DVector<f64>) -> Result<Self> {
        if components.len() != spec.dim() {
            return Err(GeometryError::LengthMismatch { expected: spec.dim(), got: components.len() });
        }
        if let Block::Fiber(i) = block {
            if i >= spec.fibers.len() {
                return Err(GeometryError::CaseMismatch(format!("fiber {i} does not exist")));
            }
        }
        let range = spec.block_range(block);
        if let Some(k) = (0..spec.dim()).find(|k| !range.contains(k) && components[*k] != 0.0) {
            return Err(GeometryError::CaseMismatch(format!(
                "vector tagged {block:?} has a component on coordinate {k}"
            )));
        }
        Ok(BlockVector { block, components })
    }

    /// From components local to the block.
    pub fn local(spec: &ProductManifoldSpec, block: Block, local: &[f64]) -> Result<Self> {
        let range = spec.block_range(block);
        if local.len() != range.len() {
            return Err(GeometryError::LengthMismatch { expected: range.len(), got: local.len() });
        }
        let mut v = DVector::zeros(spec.dim());
        for (k, x) in range.zip(local) {
            v[k] = *x;
        }
        Self::new(spec, block, v)
    }

    pub fn coordinate(spec: &ProductManifoldSpec, index: usize) -> Self {
        let mut v = DVector::zeros(spec.dim());
        v[index] = 1.0;
        BlockVector { block: spec.block_of(index), components: v }
    }
}

/// A structured value together with the formula case that produced it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluated<T> {
    pub value: T,
    pub case: String,
}

fn eval<T>(value: T, case: impl Into<String>) -> Result<Evaluated<T>> {
    Ok(Evaluated { value, case: case.into() })
}

/// Per-fiber data: warping jet and fiber Levi-Civita geometry.
#[derive(Clone, Debug)]
struct FiberData {
    range: std::ops::Range<usize>,
    l: f64,
    b: f64,
    /// `∂_a b` for every chart coordinate.
    db: DVector<f64>,
    /// `∂_a ∂_c b`.
    hb: DMatrix<f64>,
    /// Fiber metric diagonal, local indices.
    gf: Vec<f64>,
    /// `dgf[a][c] = ∂_a (g_F)_cc`, local indices.
    dgf: Vec<Vec<f64>>,
    /// Fiber Christoffels `Γ^k_{ac}` at `[k][a][c]`, local indices.
    gamma: Vec<Vec<Vec<f64>>>,
    kappa: f64,
}

/// Cache of everything the block formulas need at one point.
pub struct StructuredGeometry<'a> {
    spec: &'a ProductManifoldSpec,
    kind: ConnectionKind,
    p_location: Option<Block>,
    n: usize,
    nb: usize,
    sig: Vec<f64>,
    fibers: Vec<FiberData>,
    /// `P^m`.
    p: DVector<f64>,
    /// `dp[(m, i)] = ∂_i P^m`.
    dp: DMatrix<f64>,
}

fn fiber_christoffel(gf: &[f64], dgf: &[Vec<f64>]) -> Vec<Vec<Vec<f64>>> {
    let l = gf.len();
    let mut g = vec![vec![vec![0.0; l]; l]; l];
    for k in 0..l {
        for a in 0..l {
            for c in 0..l {
                let t1 = if c == k { dgf[a][k] } else { 0.0 };
                let t2 = if a == k { dgf[c][k] } else { 0.0 };
                let t3 = if a == c { dgf[k][a] } else { 0.0 };
                g[k][a][c] = 0.5 * (t1 + t2 - t3) / gf[k];
            }
        }
    }
    g
}

impl<'a> StructuredGeometry<'a> {
    pub fn new(spec: &'a ProductManifoldSpec, conn: &Connection, point: &PointCoords) -> Result<Self> {
        spec.check_point(point)?;
        let n = spec.dim();
        let nb = spec.base_dim();
        let names = spec.coord_names();
        let x = &point.0;
        let mut fibers = Vec::with_capacity(spec.fibers.len());
        for (i, f) in spec.fibers.iter().enumerate() {
            let range = spec.fiber_range(i);
            let relevant: Vec<usize> = (0..nb).chain(range.clone()).collect();
            let w = &spec.warpings[i];
            let b: f64 = w.eval(&Bindings::new(&names, x))?;
            let mut db = DVector::zeros(n);
            let mut hb = DMatrix::zeros(n, n);
            for (ia, &a) in relevant.iter().enumerate() {
                for &c in &relevant[ia..] {
                    let hx: Vec<HyperDual> = (0..n)
                        .map(|k| HyperDual::new(x[k], (k == a) as u8 as f64, (k == c) as u8 as f64, 0.0))
                        .collect();
                    let v = w.eval(&Bindings::new(&names, &hx))?;
                    if a == c {
                        db[a] = v.e1;
                    }
                    hb[(a, c)] = v.e12;
                    hb[(c, a)] = v.e12;
                }
            }
            let local = &x[range.clone()];
            let gf = f.geometry.metric_diag(local);
            let l = gf.len();
            let dgf: Vec<Vec<f64>> = (0..l)
                .map(|a| {
                    let dx: Vec<Dual> = (0..l).map(|k| Dual::new(local[k], (k == a) as u8 as f64)).collect();
                    f.geometry.metric_diag(&dx).iter().map(|d| d.eps).collect()
                })
                .collect();
            let gamma = fiber_christoffel(&gf, &dgf);
            fibers.push(FiberData {
                range,
                l: l as f64,
                b,
                db,
                hb,
                gf,
                dgf,
                gamma,
                kappa: f.geometry.sectional_curvature(),
            });
        }
        let (p, dp, p_location) = match conn.field() {
            Some(field) => {
                field.validate(spec)?;
                (field.vector_at(spec, point)?, field.jacobian_at(spec, point)?, Some(field.location))
            }
            None => (DVector::zeros(n), DMatrix::zeros(n, n), None),
        };
        Ok(StructuredGeometry {
            spec,
            kind: conn.kind(),
            p_location,
            n,
            nb,
            sig: spec.base.signature(),
            fibers,
            p,
            dp,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    fn zero(&self) -> DVector<f64> {
        DVector::zeros(self.n)
    }

    fn check(&self, v: &BlockVector) -> Result<()> {
        BlockVector::new(self.spec, v.block, v.components.clone()).map(|_| ())
    }

    /// Connection label used in case names.
    fn label(&self) -> &'static str {
        match self.kind {
            ConnectionKind::LeviCivita => "levi-civita",
            ConnectionKind::SemiSymmetricNonMetric => "semi-symmetric",
            ConnectionKind::SymmetrizedAffine => "symmetrized",
        }
    }

    fn p_label(&self) -> String {
        match self.p_location {
            None => "no P".into(),
            Some(Block::Base) => "P on base".into(),
            Some(Block::Fiber(r)) => format!("P on fiber {r}"),
        }
    }

    fn p_fiber(&self) -> Option<usize> {
        match self.p_location {
            Some(Block::Fiber(r)) => Some(r),
            _ => None,
        }
    }

    fn p_on_base(&self) -> bool {
        self.p_location == Some(Block::Base)
    }

    // ---- metric pieces ----

    /// Full metric diagonal entry, `g_B` on the base and `b_i² g_{F_i}` on fibers.
    fn gk(&self, k: usize) -> f64 {
        if k < self.nb {
            return self.sig[k];
        }
        let f = &self.fibers[self.fiber_of(k)];
        f.b * f.b * f.gf[k - f.range.start]
    }

    fn fiber_of(&self, k: usize) -> usize {
        self.fibers.iter().position(|f| f.range.contains(&k)).expect("fiber index")
    }

    /// `g(u, v)` from the block metric.
    pub fn g(&self, u: &DVector<f64>, v: &DVector<f64>) -> f64 {
        (0..self.n).map(|k| self.gk(k) * u[k] * v[k]).sum()
    }

    fn g_fiber(&self, i: usize, u: &DVector<f64>, v: &DVector<f64>) -> f64 {
        let f = &self.fibers[i];
        f.range.clone().map(|k| f.gf[k - f.range.start] * u[k] * v[k]).sum()
    }

    /// `π(u) = g(u, P)`.
    pub fn pi(&self, u: &DVector<f64>) -> f64 {
        self.g(u, &self.p)
    }

    // ---- warping derivatives ----

    /// `X(b_i)`.
    fn xb(&self, i: usize, x: &DVector<f64>) -> f64 {
        self.fibers[i].db.dot(x)
    }

    /// `X(b_i) / b_i = X(ln b_i)`.
    fn x_ln(&self, i: usize, x: &DVector<f64>) -> f64 {
        self.xb(i, x) / self.fibers[i].b
    }

    /// Hessian of `ln b_i` in chart coordinates.
    fn ln_hessian(&self, i: usize) -> DMatrix<f64> {
        let f = &self.fibers[i];
        &f.hb / f.b - &f.db * f.db.transpose() / (f.b * f.b)
    }

    /// `V X (ln b_i)` for constant-coefficient `V`, `X`.
    fn vx_ln(&self, i: usize, v: &DVector<f64>, x: &DVector<f64>) -> f64 {
        (v.transpose() * self.ln_hessian(i) * x)[(0, 0)]
    }

    /// `H^{b_i}_B(X, Y)`; the base is flat so this is the plain Hessian.
    fn hess_base(&self, i: usize, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        (x.transpose() * &self.fibers[i].hb * y)[(0, 0)]
    }

    /// `grad_B` of a function with chart gradient `df`.
    fn grad_base(&self, df: &DVector<f64>) -> DVector<f64> {
        let mut v = self.zero();
        for a in 0..self.nb {
            v[a] = self.sig[a] * df[a];
        }
        v
    }

    /// `grad_{F_i}` with respect to `g_{F_i}` of a function with chart gradient `df`.
    fn grad_fiber(&self, i: usize, df: &DVector<f64>) -> DVector<f64> {
        let f = &self.fibers[i];
        let mut v = self.zero();
        for k in f.range.clone() {
            v[k] = df[k] / f.gf[k - f.range.start];
        }
        v
    }

    /// `Δ_B b_i`.
    fn lap_base(&self, i: usize) -> f64 {
        (0..self.nb).map(|a| self.sig[a] * self.fibers[i].hb[(a, a)]).sum()
    }

    /// `g_B(grad_B b_i, grad_B b_j)`.
    fn grad_dot(&self, i: usize, j: usize) -> f64 {
        (0..self.nb).map(|a| self.sig[a] * self.fibers[i].db[a] * self.fibers[j].db[a]).sum()
    }

    /// `P(b_i) / b_i`.
    fn p_ln(&self, i: usize) -> f64 {
        self.x_ln(i, &self.p)
    }

    /// `∇^{F_i}_U W` for constant-coefficient fiber fields.
    fn nabla_fiber(&self, i: usize, u: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
        let f = &self.fibers[i];
        let s = f.range.start;
        let l = f.gf.len();
        let mut out = self.zero();
        for k in 0..l {
            let mut acc = 0.0;
            for a in 0..l {
                for c in 0..l {
                    acc += f.gamma[k][a][c] * u[s + a] * w[s + c];
                }
            }
            out[s + k] = acc;
        }
        out
    }

    // ---- Levi-Civita connection from block data ----

    /// Levi-Civita `∇_X Y` from the block formulas with `P = 0`.
    fn lc_nabla(&self, x: &BlockVector, y: &BlockVector) -> DVector<f64> {
        let (xv, yv) = (&x.components, &y.components);
        match (x.block, y.block) {
            (Block::Base, Block::Base) => self.zero(),
            (Block::Base, Block::Fiber(i)) => yv * self.x_ln(i, xv),
            (Block::Fiber(i), Block::Base) => xv * self.x_ln(i, yv),
            (Block::Fiber(i), Block::Fiber(j)) if i != j => self.zero(),
            (Block::Fiber(i), Block::Fiber(_)) => self.lc_fiber_fiber(i, xv, yv),
        }
    }

    /// `U(ln b)W + W(ln b)U − g_F(U,W)/b grad_F b − b g_F(U,W) grad_B b + ∇^F_U W`.
    fn lc_fiber_fiber(&self, i: usize, u: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
        let f = &self.fibers[i];
        let gfuw = self.g_fiber(i, u, w);
        w * self.x_ln(i, u) + u * self.x_ln(i, w) - self.grad_fiber(i, &f.db) * (gfuw / f.b)
            - self.grad_base(&f.db) * (f.b * gfuw)
            + self.nabla_fiber(i, u, w)
    }

    /// Levi-Civita `∇_X P` for the non-constant field `P`.
    pub fn levi_civita_nabla_field(&self, x: &BlockVector) -> DVector<f64> {
        self.nabla_p(x)
    }

    fn nabla_p(&self, x: &BlockVector) -> DVector<f64> {
        let mut out = &self.dp * &x.components;
        let Some(loc) = self.p_location else {
            return out;
        };
        for m in self.spec.block_range(loc) {
            if self.p[m] != 0.0 {
                let e = BlockVector::coordinate(self.spec, m);
                out += self.lc_nabla(x, &e) * self.p[m];
            }
        }
        out
    }

    /// `dπ(A, B) = A(π(B)) − B(π(A))` for constant-coefficient `A`, `B`.
    fn dpi(&self, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
        // ∂_c π_k = ∂_c(g_kk) P^k + g_kk ∂_c P^k
        let dpi_ck = |c: usize, k: usize| -> f64 {
            let dg = if k < self.nb {
                0.0
            } else {
                let i = self.fiber_of(k);
                let f = &self.fibers[i];
                let lk = k - f.range.start;
                let mut d = 2.0 * f.b * f.db[c] * f.gf[lk];
                if f.range.contains(&c) {
                    d += f.b * f.b * f.dgf[c - f.range.start][lk];
                }
                d
            };
            dg * self.p[k] + self.gk(k) * self.dp[(k, c)]
        };
        let mut s = 0.0;
        for c in 0..self.n {
            for k in 0..self.n {
                let w = a[c] * b[k] - b[c] * a[k];
                if w != 0.0 {
                    s += w * dpi_ck(c, k);
                }
            }
        }
        s
    }

    // ---- fiber leaf geometry ----

    /// `T = Hess_F u − du⊗du + ½|du|² g_F` for `u = ln b_i` restricted to the fiber.
    fn conformal_tensor(&self, i: usize) -> DMatrix<f64> {
        let f = &self.fibers[i];
        let s = f.range.start;
        let l = f.gf.len();
        let lh = self.ln_hessian(i);
        let du: Vec<f64> = (0..l).map(|a| f.db[s + a] / f.b).collect();
        let du2: f64 = (0..l).map(|a| du[a] * du[a] / f.gf[a]).sum();
        DMatrix::from_fn(l, l, |a, c| {
            let mut h = lh[(s + a, s + c)];
            for k in 0..l {
                h -= f.gamma[k][a][c] * du[k];
            }
            h - du[a] * du[c] + if a == c { 0.5 * du2 * f.gf[a] } else { 0.0 }
        })
    }

    /// Curvature of the leaf `{x_B} × F_i` with metric `b_i² g_{F_i}`.
    ///
    /// For a warped product this is `R^{F_i}` itself; a fiber-dependent
    /// twist adds the conformal-change terms.
    fn leaf_curvature(&self, i: usize, u: &DVector<f64>, v: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
        let f = &self.fibers[i];
        let s = f.range.start;
        let l = f.gf.len();
        let gf = |a: &DVector<f64>, b: &DVector<f64>| self.g_fiber(i, a, b);
        let mut out = (u * gf(v, w) - v * gf(u, w)) * f.kappa;
        let t = self.conformal_tensor(i);
        if t.iter().all(|x| *x == 0.0) {
            return out;
        }
        let loc = |x: &DVector<f64>| DVector::from_fn(l, |a, _| x[s + a]);
        let (ul, vl, wl) = (loc(u), loc(v), loc(w));
        let tf = |a: &DVector<f64>, b: &DVector<f64>| (a.transpose() * &t * b)[(0, 0)];
        let sharp = |a: &DVector<f64>| {
            let ta = &t * a;
            let mut o = self.zero();
            for k in 0..l {
                o[s + k] = ta[k] / f.gf[k];
            }
            o
        };
        out -= u * tf(&vl, &wl) - v * tf(&ul, &wl) + sharp(&ul) * gf(v, w) - sharp(&vl) * gf(u, w);
        out
    }

    /// `Ric` of the leaf, `tr(Z ↦ R^leaf(V, Z) W)`.
    fn leaf_ricci(&self, i: usize, v: &DVector<f64>, w: &DVector<f64>) -> f64 {
        self.fibers[i]
            .range
            .clone()
            .map(|k| {
                let e = BlockVector::coordinate(self.spec, k).components;
                self.leaf_curvature(i, v, &e, w)[k]
            })
            .sum()
    }

    /// Scalar curvature of the leaf metric `b_i² g_{F_i}`; `S^{F_i}/b_i²` when untwisted.
    fn leaf_scalar(&self, i: usize) -> f64 {
        self.fibers[i]
            .range
            .clone()
            .map(|k| {
                let e = BlockVector::coordinate(self.spec, k).components;
                self.leaf_ricci(i, &e, &e) / self.gk(k)
            })
            .sum()
    }

    // ---- covariant derivative ----

    /// Structured `∇_X Y` for the connection this geometry was built with.
    pub fn covariant_derivative(&self, x: &BlockVector, y: &BlockVector) -> Result<Evaluated<DVector<f64>>> {
        self.check(x)?;
        self.check(y)?;
        let (xv, yv) = (&x.components, &y.components);
        let sym = self.kind == ConnectionKind::SymmetrizedAffine;
        let tag = format!("{} / {}", self.label(), self.p_label());
        match (x.block, y.block) {
            (Block::Base, Block::Base) => {
                // flat base: ∇^B of constant fields vanishes
                let mut v = self.zero();
                if self.p_on_base() {
                    v += xv * self.pi(yv);
                    if sym {
                        v += yv * self.pi(xv);
                    }
                }
                eval(v, format!("{tag} / base-base: base connection"))
            }
            (Block::Base, Block::Fiber(i)) => {
                let mut c = self.x_ln(i, xv);
                if sym && self.p_on_base() {
                    c += self.pi(xv);
                }
                let mut v = yv * c;
                if self.p_fiber().is_some() {
                    v += xv * self.pi(yv);
                }
                eval(v, format!("{tag} / base-fiber: X(b)/b U"))
            }
            (Block::Fiber(i), Block::Base) => {
                let mut c = self.x_ln(i, yv);
                if self.p_on_base() {
                    c += self.pi(yv);
                }
                let mut v = xv * c;
                if sym && self.p_fiber().is_some() {
                    v += yv * self.pi(xv);
                }
                eval(v, format!("{tag} / fiber-base: X(b)/b U"))
            }
            (Block::Fiber(i), Block::Fiber(j)) if i != j => {
                let mut v = self.zero();
                if self.p_fiber().is_some() {
                    v += xv * self.pi(yv);
                    if sym {
                        v += yv * self.pi(xv);
                    }
                }
                eval(v, format!("{tag} / distinct fibers"))
            }
            (Block::Fiber(i), Block::Fiber(_)) => {
                let mut v = self.lc_fiber_fiber(i, xv, yv);
                if self.p_fiber().is_some() {
                    v += xv * self.pi(yv);
                    if sym {
                        v += yv * self.pi(xv);
                    }
                }
                eval(v, format!("{tag} / same fiber: fiber connection with twist terms"))
            }
        }
    }

    // ---- curvature ----

    /// Structured `R(A, B)C`.
    ///
    /// For the symmetrized connection the result adds `dπ(A, B) C` to the
    /// semi-symmetric value in every case, including pairs of a base and a
    /// fiber field where `π` of the fiber field varies along the base.
    pub fn curvature(&self, a: &BlockVector, b: &BlockVector, c: &BlockVector) -> Result<Evaluated<DVector<f64>>> {
        self.check(a)?;
        self.check(b)?;
        self.check(c)?;
        let Evaluated { value, case } = self.curvature_semi_symmetric(a, b, c)?;
        let tag = format!("{} / {}", self.label(), self.p_label());
        if self.kind == ConnectionKind::SymmetrizedAffine {
            let d = self.dpi(&a.components, &b.components);
            let extra = if d != 0.0 { " + dπ(A,B)C" } else { "" };
            return eval(value + &c.components * d, format!("{tag} / {case}{extra}"));
        }
        eval(value, format!("{tag} / {case}"))
    }

    fn curvature_semi_symmetric(&self, a: &BlockVector, b: &BlockVector, c: &BlockVector) -> Result<Evaluated<DVector<f64>>> {
        use Block::{Base as B, Fiber as F};
        let (av, bv, cv) = (&a.components, &b.components, &c.components);
        let pf = self.p_fiber();
        match (a.block, b.block, c.block) {
            (B, B, B) => {
                // flat base; only the P terms of the base connection remain
                let mut v = self.zero();
                if self.p_on_base() {
                    v += bv * self.g(cv, &self.nabla_p(a)) - av * self.g(cv, &self.nabla_p(b))
                        + (av * self.pi(bv) - bv * self.pi(av)) * self.pi(cv);
                }
                eval(v, "base-base-base: base curvature")
            }
            (F(i), B, B) => {
                let mut coef = -self.hess_base(i, bv, cv) / self.fibers[i].b;
                let mut v;
                if self.p_on_base() {
                    coef -= self.g(cv, &self.nabla_p(b)) - self.pi(bv) * self.pi(cv);
                    v = av * coef;
                } else {
                    v = av * coef;
                    if pf == Some(i) {
                        v -= bv * (self.pi(av) * self.x_ln(i, cv));
                    }
                }
                eval(v, format!("fiber-base-base: Hessian of b{}", if pf == Some(i) { ", P fiber" } else { "" }))
            }
            (B, F(_), B) => {
                let r = self.curvature_semi_symmetric(b, a, c)?;
                eval(-r.value, format!("base-fiber-base: antisymmetry of {}", r.case))
            }
            (B, B, F(_)) => {
                let mut v = self.zero();
                if let Some(l) = pf {
                    v += (bv * self.x_ln(l, av) - av * self.x_ln(l, bv)) * self.pi(cv);
                }
                eval(v, "base-base-fiber: flat up to P terms")
            }
            (B, F(i), F(j)) if i != j => {
                let mut v = self.zero();
                if let Some(l) = pf {
                    v += bv * (self.x_ln(l, av) * self.pi(cv));
                }
                eval(v, "base-fiber-fiber, distinct fibers")
            }
            (F(i), B, F(j)) if i != j => {
                let r = self.curvature_semi_symmetric(b, a, c)?;
                eval(-r.value, format!("fiber-base-fiber: antisymmetry of {}", r.case))
            }
            (F(i), F(j), B) if i != j => {
                let mut v = self.zero();
                if pf == Some(i) {
                    v -= bv * (self.pi(av) * self.x_ln(i, cv));
                }
                if pf == Some(j) {
                    v += av * (self.pi(bv) * self.x_ln(j, cv));
                }
                eval(v, "fiber-fiber-base, distinct fibers")
            }
            (F(i), F(_), B) => {
                let mut v = bv * self.vx_ln(i, av, cv) - av * self.vx_ln(i, bv, cv);
                if pf == Some(i) {
                    v -= (bv * self.pi(av) - av * self.pi(bv)) * self.x_ln(i, cv);
                }
                eval(v, "fiber-fiber-base, same fiber: mixed derivatives of ln b")
            }
            (B, F(i), F(_)) => {
                // R(X,V)W, V and W in the same fiber
                let (x, vv, w) = (av, bv, cv);
                let f = &self.fibers[i];
                let gvw = self.g(w, vv);
                let lh = self.ln_hessian(i);
                let mut v = vv * self.vx_ln(i, w, x);
                let nabla_grad = self.grad_base(&(&f.hb * x)) / f.b;
                let grad_f_xln = self.grad_fiber(i, &(&lh * x)) / (f.b * f.b);
                v -= (nabla_grad + grad_f_xln) * gvw;
                if self.p_on_base() {
                    v -= x * (gvw * self.p_ln(i));
                } else if let Some(l) = pf {
                    v += vv * (self.x_ln(l, x) * self.pi(w));
                    v += x * (self.pi(vv) * self.pi(w) - self.g(w, &self.nabla_p(b)));
                }
                eval(v, "base-fiber-fiber, same fiber: base Hessian and twist gradient")
            }
            (F(i), B, F(_)) => {
                let r = self.curvature_semi_symmetric(b, a, c)?;
                let _ = i;
                eval(-r.value, format!("fiber-base-fiber: antisymmetry of {}", r.case))
            }
            (F(i), F(j), F(k)) => {
                if i == j && j == k {
                    return self.curvature_same_fiber(i, a, b, c);
                }
                if i == j || (i != k && j != k) {
                    // i = j ≠ k, or pairwise distinct
                    return eval(self.zero(), "fiber-fiber-fiber: first pair in one fiber, third elsewhere, or all distinct");
                }
                if j == k {
                    // R(U,V)W with V, W in fiber j and U in fiber i ≠ j
                    let (u, vv, w) = (av, bv, cv);
                    let gvw = self.g(vv, w);
                    let fi = &self.fibers[j];
                    let fk = &self.fibers[i];
                    let mut v = u * (-gvw * self.grad_dot(j, i) / (fi.b * fk.b));
                    if self.p_on_base() {
                        v -= u * (gvw * self.p_ln(j));
                    } else if pf.is_some() {
                        v -= u * self.g(w, &self.nabla_p(b));
                        v += (u * self.pi(vv) - vv * self.pi(u)) * self.pi(w);
                    }
                    return eval(v, "fiber-fiber-fiber: last two in one fiber, first in another");
                }
                // i = k ≠ j: R(V,U)W = −R(U,V)W
                let r = self.curvature_semi_symmetric(b, a, c)?;
                eval(-r.value, format!("fiber-fiber-fiber: antisymmetry of {}", r.case))
            }
        }
    }

    fn curvature_same_fiber(&self, i: usize, a: &BlockVector, b: &BlockVector, c: &BlockVector) -> Result<Evaluated<DVector<f64>>> {
        let (u, vv, w) = (&a.components, &b.components, &c.components);
        let f = &self.fibers[i];
        let lh = self.ln_hessian(i);
        let guw = self.g(u, w);
        let gvw = self.g(vv, w);
        let grad2 = self.grad_dot(i, i) / (f.b * f.b);
        let mut v = self.grad_base(&(&lh * vv)) * guw - self.grad_base(&(&lh * u)) * gvw
            + self.leaf_curvature(i, u, vv, w)
            - (u * gvw - vv * guw) * grad2;
        let pf = self.p_fiber();
        if self.p_on_base() {
            v -= (u * gvw - vv * guw) * self.p_ln(i);
        } else if pf == Some(i) {
            v += vv * self.g(w, &self.nabla_p(a)) - u * self.g(w, &self.nabla_p(b));
            v += (u * self.pi(vv) - vv * self.pi(u)) * self.pi(w);
        }
        let case = match pf {
            Some(r) if r == i => "fiber-fiber-fiber, one fiber hosting P: leaf curvature with P terms",
            Some(_) => "fiber-fiber-fiber, one fiber without P: leaf curvature",
            None => "fiber-fiber-fiber, one fiber: leaf curvature",
        };
        eval(v, case)
    }

    // ---- Ricci ----

    /// Structured `Ric(A, B) = tr(Z ↦ R(A, Z) B)`.
    pub fn ricci(&self, a: &BlockVector, b: &BlockVector) -> Result<Evaluated<f64>> {
        self.check(a)?;
        self.check(b)?;
        let Evaluated { value, case } = self.ricci_semi_symmetric(a, b)?;
        let tag = format!("{} / {}", self.label(), self.p_label());
        if self.kind == ConnectionKind::SymmetrizedAffine {
            let d = self.dpi(&a.components, &b.components);
            let extra = if d != 0.0 { " + dπ(A,B)" } else { "" };
            return eval(value + d, format!("{tag} / {case}{extra}"));
        }
        eval(value, format!("{tag} / {case}"))
    }

    fn ricci_semi_symmetric(&self, a: &BlockVector, b: &BlockVector) -> Result<Evaluated<f64>> {
        use Block::{Base as B, Fiber as F};
        let (av, bv) = (&a.components, &b.components);
        let nbar = self.n as f64;
        let nb = self.nb as f64;
        match (a.block, b.block) {
            (B, B) => {
                let mut s: f64 = (0..self.fibers.len())
                    .map(|i| self.fibers[i].l * self.hess_base(i, av, bv) / self.fibers[i].b)
                    .sum();
                if self.p_on_base() {
                    let pterm = self.g(bv, &self.nabla_p(a)) - self.pi(av) * self.pi(bv);
                    // base part (n−1)[…] plus Σ l_i […]
                    let ltot: f64 = self.fibers.iter().map(|f| f.l).sum();
                    s += (nb - 1.0) * pterm + ltot * pterm;
                }
                eval(s, "base-base: base Ricci plus Σ l_i H^{b_i}/b_i")
            }
            (B, F(i)) => {
                let mut s = (self.fibers[i].l - 1.0) * self.vx_ln(i, bv, av);
                if let Some(r) = self.p_fiber() {
                    s += (nbar - 1.0) * self.x_ln(r, av) * self.pi(bv);
                }
                eval(s, "base-fiber: (l_i − 1) V X(ln b_i)")
            }
            (F(i), B) => {
                let mut s = (self.fibers[i].l - 1.0) * self.vx_ln(i, av, bv);
                if let Some(r) = self.p_fiber() {
                    s += (1.0 - nbar) * self.x_ln(r, bv) * self.pi(av);
                }
                eval(s, "fiber-base: (l_i − 1) V X(ln b_i)")
            }
            (F(i), F(j)) if i != j => eval(0.0, "fiber-fiber, distinct fibers"),
            (F(i), F(_)) => {
                let f = &self.fibers[i];
                let gvw = self.g(av, bv);
                let mut bracket = self.lap_base(i) / f.b + (f.l - 1.0) * self.grad_dot(i, i) / (f.b * f.b);
                for (j, fj) in self.fibers.iter().enumerate() {
                    if j != i {
                        bracket += fj.l * self.grad_dot(i, j) / (f.b * fj.b);
                    }
                }
                let mut s = self.leaf_ricci(i, av, bv) + bracket * gvw;
                if self.p_on_base() {
                    s += (nbar - 1.0) * self.p_ln(i) * gvw;
                } else if self.p_fiber().is_some() {
                    s += (nbar - 1.0) * (self.g(bv, &self.nabla_p(a)) - self.pi(av) * self.pi(bv));
                }
                eval(s, "fiber-fiber, same fiber: leaf Ricci plus warping terms")
            }
        }
    }

    /// Ricci matrix on coordinate fields, entry by entry from [`Self::ricci`].
    pub fn ricci_matrix(&self) -> Result<DMatrix<f64>> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                m[(i, j)] = self
                    .ricci(&BlockVector::coordinate(self.spec, i), &BlockVector::coordinate(self.spec, j))?
                    .value;
            }
        }
        Ok(m)
    }

    // ---- scalar ----

    /// Structured scalar curvature.
    ///
    /// `S̄ = S̄^B + 2Σ l_i Δ_B b_i/b_i + Σ S^{leaf_i} + Σ l_i(l_i−1)|grad_B b_i|²/b_i²
    ///      + Σ_{i≠j} l_i l_j g_B(grad_B b_i, grad_B b_j)/(b_i b_j) + P terms`,
    ///
    /// where the `P` terms are, for `P` on the base,
    /// `(n−1)Σ l_i P(b_i)/b_i + Σ_i Σ_j l_i l_j P(b_j)/b_j + Σ l_i [div_B P − π(P)]`
    /// with `S̄^B = (n−1)(div_B P − π(P))`, and for `P` on fiber `r`,
    /// `(1−n̄)π(P) + (n̄−1) Σ ε_a g(∇_{E_a} P, E_a)` over a frame of fiber `r`.
    pub fn scalar(&self) -> Result<Evaluated<f64>> {
        let m = self.fibers.len();
        let nbar = self.n as f64;
        let nb = self.nb as f64;
        let mut s = 0.0;
        for i in 0..m {
            let f = &self.fibers[i];
            s += 2.0 * f.l * self.lap_base(i) / f.b;
            s += self.leaf_scalar(i);
            s += f.l * (f.l - 1.0) * self.grad_dot(i, i) / (f.b * f.b);
            for j in 0..m {
                if j != i {
                    let fj = &self.fibers[j];
                    s += f.l * fj.l * self.grad_dot(i, j) / (f.b * fj.b);
                }
            }
        }
        let tag = format!("{} / {}", self.label(), self.p_label());
        match self.p_location {
            None => eval(s, format!("{tag} / scalar: warping terms only")),
            Some(Block::Base) => {
                let div_b: f64 = (0..self.nb).map(|a| self.dp[(a, a)]).sum();
                let pp = self.pi(&self.p);
                let ltot: f64 = self.fibers.iter().map(|f| f.l).sum();
                let sum_lp: f64 = (0..m).map(|i| self.fibers[i].l * self.p_ln(i)).sum();
                s += (nb - 1.0) * (div_b - pp);
                s += (nb - 1.0) * sum_lp + ltot * sum_lp + ltot * (div_b - pp);
                eval(s, format!("{tag} / scalar: base divergence form"))
            }
            Some(Block::Fiber(r)) => {
                let pp = self.pi(&self.p);
                let mut div = 0.0;
                for k in self.fibers[r].range.clone() {
                    let e = BlockVector::coordinate(self.spec, k);
                    div += self.g(&self.nabla_p(&e), &e.components) / self.gk(k);
                }
                s += (1.0 - nbar) * pp + (nbar - 1.0) * div;
                eval(s, format!("{tag} / scalar: fiber divergence form"))
            }
        }
    }
}

/// Structured `∇_X Y` at `p`.
pub fn structured_covariant_derivative(
    spec: &ProductManifoldSpec,
    conn: &Connection,
    x: &BlockVector,
    y: &BlockVector,
    p: &PointCoords,
) -> Result<Evaluated<DVector<f64>>> {
    StructuredGeometry::new(spec, conn, p)?.covariant_derivative(x, y)
}

/// Structured `R(A, B)C` at `p`.
pub fn structured_curvature(
    spec: &ProductManifoldSpec,
    conn: &Connection,
    a: &BlockVector,
    b: &BlockVector,
    c: &BlockVector,
    p: &PointCoords,
) -> Result<Evaluated<DVector<f64>>> {
    StructuredGeometry::new(spec, conn, p)?.curvature(a, b, c)
}

/// Structured `Ric(A, B)` at `p`.
pub fn structured_ricci(
    spec: &ProductManifoldSpec,
    conn: &Connection,
    a: &BlockVector,
    b: &BlockVector,
    p: &PointCoords,
) -> Result<Evaluated<f64>> {
    StructuredGeometry::new(spec, conn, p)?.ricci(a, b)
}

/// Structured scalar curvature at `p`.
pub fn structured_scalar(spec: &ProductManifoldSpec, conn: &Connection, p: &PointCoords) -> Result<Evaluated<f64>> {
    StructuredGeometry::new(spec, conn, p)?.scalar()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixedRicciReport {
    /// Every `Ric(X, V)` and `Ric(V, X)` vanished on the grid.
    pub mixed_ricci_flat: bool,
    pub max_mixed_component: f64,
    /// Grid index of the largest mixed component.
    pub worst_point: usize,
    pub twisted: bool,
    /// Fibers of dimension one, outside the predicate's hypothesis.
    pub skipped_fibers: Vec<usize>,
}

/// Whether all base-fiber Ricci components vanish over `grid`, to
/// [`tolerance::MIXED_RICCI`]. Only fibers of dimension greater than one are
/// examined.
pub fn mixed_ricci_flat_check(spec: &ProductManifoldSpec, conn: &Connection, grid: &[PointCoords]) -> Result<MixedRicciReport> {
    let mut worst = 0.0f64;
    let mut worst_point = 0;
    let skipped: Vec<usize> = (0..spec.fibers.len()).filter(|&i| spec.fibers[i].dim() <= 1).collect();
    for (gi, p) in grid.iter().enumerate() {
        let sg = StructuredGeometry::new(spec, conn, p)?;
        for x in spec.block_range(Block::Base) {
            for i in (0..spec.fibers.len()).filter(|i| !skipped.contains(i)) {
                for v in spec.fiber_range(i) {
                    let xv = BlockVector::coordinate(spec, x);
                    let vv = BlockVector::coordinate(spec, v);
                    let a = sg.ricci(&xv, &vv)?.value.abs();
                    let b = sg.ricci(&vv, &xv)?.value.abs();
                    if a.max(b) > worst {
                        worst = a.max(b);
                        worst_point = gi;
                    }
                }
            }
        }
    }
    Ok(MixedRicciReport {
        mixed_ricci_flat: worst <= tolerance::MIXED_RICCI,
        max_mixed_component: worst,
        worst_point,
        twisted: spec.twisted,
        skipped_fibers: skipped,
    })
}
