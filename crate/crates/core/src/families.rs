//! Warping-function families for Einstein and constant-scalar-curvature
//! spacetimes `I ×_{φ^{p_1}} F_1 × … ×_{φ^{p_m}} F_m` with `P = ∂t`.
//!
//! A single-fiber GRW spacetime `I ×_f F` is the case `p = (1)`, `φ = f`.
//! Every family is stored as the solution `y(t)` of a scalar second-order
//! equation together with the map `y ↦ φ`; closed forms are expression
//! templates in `t` and free constants, the rest are integrated by RK4.

use serde::{Deserialize, Serialize};

use crate::chart::{FiberSpec, ProductManifoldSpec};
use crate::einstein::ResidualReport;
use crate::error::{GeometryError, Result};
use crate::expr::{Bindings, ScalarExpr};
use crate::ode::{rk4, SecondOrderOde, Trajectory};

/// Points of the equispaced residual grid.
pub const FAMILY_GRID_POINTS: usize = 33;
/// Residual tolerance for emitted families.
pub const FAMILY_TOLERANCE: f64 = 1e-10;
/// RK4 steps for numeric families; a multiple of `FAMILY_GRID_POINTS − 1`.
pub const DEFAULT_STEPS: usize = 1024;
/// Closed form vs RK4 agreement required by [`ode_cross_check`].
pub const CROSS_CHECK_TOLERANCE: f64 = 1e-6;
/// Beyond this deviation the integrator step is declared too coarse.
pub const STEP_TOO_COARSE: f64 = 1e-4;

const EXACT: f64 = 1e-12;
const POSITIVITY_SAMPLES: usize = 257;

fn is_zero(x: f64) -> bool {
    x.abs() <= EXACT
}

fn same(a: f64, b: f64) -> bool {
    (a - b).abs() <= EXACT * (1.0 + a.abs().max(b.abs()))
}

/// `(ζ, η) = (Σ l_i p_i, Σ l_i p_i²)`.
pub fn kasner_invariants(p: &[f64], l: &[usize]) -> Result<(f64, f64)> {
    if p.len() != l.len() {
        return Err(GeometryError::LengthMismatch { expected: l.len(), got: p.len() });
    }
    Ok(p.iter().zip(l).fold((0.0, 0.0), |(z, e), (&pi, &li)| (z + li as f64 * pi, e + li as f64 * pi * pi)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum KasnerType {
    /// Fibers of dimensions (1, 2).
    II,
    /// Fibers of dimensions (1, 1, 1).
    III,
}

impl KasnerType {
    pub fn dims(self) -> &'static [usize] {
        match self {
            KasnerType::II => &[1, 2],
            KasnerType::III => &[1, 1, 1],
        }
    }

    pub fn from_dims(l: &[usize]) -> Result<Self> {
        [KasnerType::II, KasnerType::III]
            .into_iter()
            .find(|ty| ty.dims() == l)
            .ok_or_else(|| GeometryError::UnsupportedType(format!("fiber dimensions {l:?}")))
    }

    pub fn name(self) -> &'static str {
        match self {
            KasnerType::II => "II",
            KasnerType::III => "III",
        }
    }
}

/// Exponents, fiber dimensions and the profile `φ(t)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KasnerSpec {
    pub exponents: Vec<f64>,
    pub dims: Vec<usize>,
    pub phi: ScalarExpr,
}

impl KasnerSpec {
    pub fn new(exponents: Vec<f64>, dims: Vec<usize>, phi: ScalarExpr) -> Result<Self> {
        if exponents.len() != dims.len() {
            return Err(GeometryError::LengthMismatch { expected: dims.len(), got: exponents.len() });
        }
        if let Some(&d) = dims.iter().find(|&&d| d == 0) {
            return Err(GeometryError::InvalidDimension(format!("fiber dimension {d}")));
        }
        Ok(KasnerSpec { exponents, dims, phi })
    }

    pub fn zeta(&self) -> f64 {
        kasner_invariants(&self.exponents, &self.dims).unwrap().0
    }

    pub fn eta(&self) -> f64 {
        kasner_invariants(&self.exponents, &self.dims).unwrap().1
    }

    /// `n̄ − 1 = Σ l_i`.
    pub fn fiber_dim(&self) -> usize {
        self.dims.iter().sum()
    }

    /// `b_i = φ^{p_i}`.
    pub fn warpings(&self) -> Vec<ScalarExpr> {
        self.exponents.iter().map(|&p| self.phi.clone().pow(p)).collect()
    }

    /// Warped product over `[lo, hi]`. Fiber coordinate names that clash
    /// across fibers get the fiber number appended.
    pub fn to_spec(&self, mut fibers: Vec<FiberSpec>, lo: f64, hi: f64) -> Result<ProductManifoldSpec> {
        let got: Vec<usize> = fibers.iter().map(|f| f.dim()).collect();
        if got != self.dims {
            return Err(GeometryError::InvalidSpec(format!("fiber dimensions {got:?} do not match {:?}", self.dims)));
        }
        let names: Vec<&String> = fibers.iter().flat_map(|f| &f.coords).collect();
        if (1..names.len()).any(|k| names[..k].contains(&names[k])) {
            for (i, f) in fibers.iter_mut().enumerate() {
                f.coords = f.coords.iter().map(|c| format!("{c}{}", i + 1)).collect();
            }
        }
        ProductManifoldSpec::warped_over_interval(fibers, self.warpings(), lo, hi)
    }
}

/// Time-time Einstein equation `(η−ζ)u² + ζφ''/φ + λ − Σl_i`, `u = φ'/φ`.
pub fn kasner_time_residual(zeta: f64, eta: f64, fiber_dim: usize, lambda: f64, jet: [f64; 3]) -> f64 {
    let [phi, d1, d2] = jet;
    let u = d1 / phi;
    (eta - zeta) * u * u + zeta * d2 / phi + lambda - fiber_dim as f64
}

/// Fiber-`i` Einstein equation
/// `λ_i φ^{−2p_i} − p_i φ''/φ − (ζ−1) p_i u² + (n̄−1) p_i u − λ`.
pub fn kasner_fiber_residual(p: f64, zeta: f64, fiber_dim: usize, lambda_i: f64, lambda: f64, jet: [f64; 3]) -> f64 {
    let [phi, d1, d2] = jet;
    let u = d1 / phi;
    lambda_i * phi.powf(-2.0 * p) - p * d2 / phi - (zeta - 1.0) * p * u * u + fiber_dim as f64 * p * u - lambda
}

/// Scalar curvature
/// `Σ S^{F_i} φ^{−2p_i} − 2ζφ''/φ − (η+ζ²−2ζ)u² + (n̄−1)ζu + (n̄−1)`.
pub fn kasner_scalar(p: &[f64], l: &[usize], fiber_scalars: &[f64], jet: [f64; 3]) -> Result<f64> {
    let (zeta, eta) = kasner_invariants(p, l)?;
    if fiber_scalars.len() != p.len() {
        return Err(GeometryError::LengthMismatch { expected: p.len(), got: fiber_scalars.len() });
    }
    let m = l.iter().sum::<usize>() as f64;
    let [phi, d1, d2] = jet;
    let u = d1 / phi;
    let fibers: f64 = p.iter().zip(fiber_scalars).map(|(&pi, &s)| s * phi.powf(-2.0 * pi)).sum();
    Ok(fibers - 2.0 * zeta * d2 / phi - (eta + zeta * zeta - 2.0 * zeta) * u * u + m * zeta * u + m)
}

fn phi_jet(phi: &ScalarExpr, t: f64) -> Result<[f64; 3]> {
    let jet = phi.jet1("t", t)?;
    if !(jet[0] > 0.0) {
        return Err(GeometryError::NonPositiveWarping { index: 0, value: jet[0] });
    }
    Ok(jet)
}

/// Time equation and one fiber equation per fiber, as max-norm reports.
pub fn kasner_einstein_residuals(kspec: &KasnerSpec, lambda: f64, fiber_lambdas: &[f64], grid: &[f64], tol: f64) -> Result<Vec<ResidualReport>> {
    if fiber_lambdas.len() != kspec.dims.len() {
        return Err(GeometryError::LengthMismatch { expected: kspec.dims.len(), got: fiber_lambdas.len() });
    }
    let jets = grid.iter().map(|&t| phi_jet(&kspec.phi, t)).collect::<Result<Vec<_>>>()?;
    einstein_reports(&kspec.exponents, &kspec.dims, lambda, fiber_lambdas, grid, &jets, tol)
}

fn einstein_reports(p: &[f64], l: &[usize], lambda: f64, fiber_lambdas: &[f64], grid: &[f64], jets: &[[f64; 3]], tol: f64) -> Result<Vec<ResidualReport>> {
    let (zeta, eta) = kasner_invariants(p, l)?;
    let m = l.iter().sum();
    let time: Vec<f64> = jets.iter().map(|&j| kasner_time_residual(zeta, eta, m, lambda, j)).collect();
    let mut out = vec![ResidualReport::from_residuals("einstein time equation", grid.to_vec(), &time, tol)?];
    for (i, (&pi, &li)) in p.iter().zip(fiber_lambdas).enumerate() {
        let r: Vec<f64> = jets.iter().map(|&j| kasner_fiber_residual(pi, zeta, m, li, lambda, j)).collect();
        out.push(ResidualReport::from_residuals(format!("einstein fiber {} equation", i + 1), grid.to_vec(), &r, tol)?);
    }
    Ok(out)
}

/// How the profile `φ` (or `f`) is recovered from the solved variable `y`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum ProfileMap {
    Identity,
    /// `φ = y^k`.
    Power(f64),
}

impl ProfileMap {
    pub fn apply(&self, y: ScalarExpr) -> ScalarExpr {
        match *self {
            ProfileMap::Identity => y,
            ProfileMap::Power(k) => y.pow(k),
        }
    }

    /// Chain rule from `[y, y', y'']` to `[φ, φ', φ'']`.
    pub fn jet(&self, [y, d1, d2]: [f64; 3]) -> [f64; 3] {
        match *self {
            ProfileMap::Identity => [y, d1, d2],
            ProfileMap::Power(k) => {
                let ykm1 = y.powf(k - 1.0);
                [y.powf(k), k * ykm1 * d1, k * (k - 1.0) * y.powf(k - 2.0) * d1 * d1 + k * ykm1 * d2]
            }
        }
    }
}

/// The condition a family satisfies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum FamilyTarget {
    /// `λ` and one fiber Einstein constant per fiber (written `λ_F` or `λ_i`).
    Einstein { lambda: f64, fiber_einstein_constants: Vec<f64> },
    ConstantScalar { scalar: f64, fiber_scalars: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum FamilyForm {
    /// `y(t)` in `t` and the free constants.
    Closed { solution: ScalarExpr },
    /// Initial data at the interval start, in the free constants.
    NumericOnly { initial_value: ScalarExpr, initial_slope: ScalarExpr },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolutionFamily {
    /// Generator that produced the family, e.g. `grw-scalar`.
    pub id: String,
    pub case: String,
    /// Name of the solved variable (`f`, `v`, `w`, `phi`, `psi`).
    pub variable: String,
    pub ode: SecondOrderOde,
    pub form: FamilyForm,
    pub profile: ProfileMap,
    pub free_constants: Vec<String>,
    pub exponents: Vec<f64>,
    pub dims: Vec<usize>,
    pub target: FamilyTarget,
    pub constraints: Vec<String>,
}

impl SolutionFamily {
    pub fn is_closed(&self) -> bool {
        matches!(self.form, FamilyForm::Closed { .. })
    }

    /// Binds the free constants and solves on `[lo, hi]`; `y` must stay positive.
    pub fn instantiate(&self, constants: &[f64], (lo, hi): (f64, f64)) -> Result<FamilyInstance> {
        if constants.len() != self.free_constants.len() {
            return Err(GeometryError::LengthMismatch { expected: self.free_constants.len(), got: constants.len() });
        }
        if !(hi > lo) {
            return Err(GeometryError::InvalidSpec(format!("empty interval [{lo}, {hi}]")));
        }
        let solved = match &self.form {
            FamilyForm::Closed { solution } => {
                let y = self
                    .free_constants
                    .iter()
                    .zip(constants)
                    .fold(solution.clone(), |e, (name, &c)| e.substitute(name, c));
                for k in 0..POSITIVITY_SAMPLES {
                    let t = lo + (hi - lo) * k as f64 / (POSITIVITY_SAMPLES - 1) as f64;
                    let v = y.jet1("t", t)?[0];
                    if !(v > 0.0) {
                        return Err(self.not_positive(v, t));
                    }
                }
                Solved::Closed(y)
            }
            FamilyForm::NumericOnly { initial_value, initial_slope } => {
                let env = Bindings::new(&self.free_constants, constants);
                let (y0, dy0) = (initial_value.eval(&env)?, initial_slope.eval::<f64>(&env)?);
                if !(y0 > 0.0 && dy0.is_finite()) {
                    return Err(GeometryError::ConstraintViolated(format!(
                        "initial data ({y0}, {dy0}) violates {}",
                        self.constraints.join(", ")
                    )));
                }
                let tr = rk4(&self.ode, lo, hi, y0, dy0, DEFAULT_STEPS)?;
                if let Some(k) = tr.y.iter().position(|&v| !(v > 0.0)) {
                    return Err(self.not_positive(tr.y[k], tr.t[k]));
                }
                Solved::Numeric(tr)
            }
        };
        Ok(FamilyInstance { family: self.clone(), constants: constants.to_vec(), interval: (lo, hi), solved })
    }

    fn not_positive(&self, v: f64, t: f64) -> GeometryError {
        GeometryError::ConstraintViolated(format!("{}(t) = {v} is not positive at t = {t}", self.variable))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Solved {
    Closed(ScalarExpr),
    Numeric(Trajectory),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FamilyInstance {
    pub family: SolutionFamily,
    pub constants: Vec<f64>,
    pub interval: (f64, f64),
    pub solved: Solved,
}

impl FamilyInstance {
    /// `φ(t)` as an expression, for closed families.
    pub fn profile_expr(&self) -> Option<ScalarExpr> {
        match &self.solved {
            Solved::Closed(y) => Some(self.family.profile.apply(y.clone())),
            Solved::Numeric(_) => None,
        }
    }

    /// Equispaced grid of `n` points with `[y, y', y'']` on it. Numeric
    /// families need `n − 1` to divide the step count.
    pub fn grid_jets(&self, n: usize) -> Result<(Vec<f64>, Vec<[f64; 3]>)> {
        if n < 2 {
            return Err(GeometryError::InvalidSpec(format!("grid of {n} points")));
        }
        let (lo, hi) = self.interval;
        match &self.solved {
            Solved::Closed(y) => {
                let ts: Vec<f64> = (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect();
                let jets = ts.iter().map(|&t| y.jet1("t", t).map_err(Into::into)).collect::<Result<Vec<_>>>()?;
                Ok((ts, jets))
            }
            Solved::Numeric(tr) => {
                if tr.steps() % (n - 1) != 0 {
                    return Err(GeometryError::InvalidSpec(format!("{} steps do not align with {n} grid points", tr.steps())));
                }
                let stride = tr.steps() / (n - 1);
                let idx = (0..n).map(|k| k * stride);
                Ok(idx.map(|i| (tr.t[i], tr.jet(&self.family.ode, i))).unzip())
            }
        }
    }

    /// Warped product with `b_i = φ^{p_i}`, for closed families.
    pub fn to_spec(&self, fibers: Vec<FiberSpec>) -> Result<ProductManifoldSpec> {
        let phi = self
            .profile_expr()
            .ok_or_else(|| GeometryError::InvalidSpec("numeric family has no closed-form warping".into()))?;
        let kspec = KasnerSpec::new(self.family.exponents.clone(), self.family.dims.clone(), phi)?;
        kspec.to_spec(fibers, self.interval.0, self.interval.1)
    }
}

/// Residuals of an instantiated family on `n` equispaced points: the
/// governing equation for closed forms, then the target equations in `φ`.
pub fn family_residuals(inst: &FamilyInstance, n: usize, tol: f64) -> Result<Vec<ResidualReport>> {
    let fam = &inst.family;
    let (ts, jets) = inst.grid_jets(n)?;
    let mut out = Vec::new();
    if fam.is_closed() {
        let r: Vec<f64> = jets.iter().map(|&j| fam.ode.residual(j)).collect();
        out.push(ResidualReport::from_residuals(format!("governing equation for {}", fam.variable), ts.clone(), &r, tol)?);
    }
    let phis: Vec<[f64; 3]> = jets.iter().map(|&j| fam.profile.jet(j)).collect();
    match &fam.target {
        FamilyTarget::Einstein { lambda, fiber_einstein_constants } => {
            out.extend(einstein_reports(&fam.exponents, &fam.dims, *lambda, fiber_einstein_constants, &ts, &phis, tol)?);
        }
        FamilyTarget::ConstantScalar { scalar, fiber_scalars } => {
            let r = phis
                .iter()
                .map(|&j| Ok(kasner_scalar(&fam.exponents, &fam.dims, fiber_scalars, j)? - scalar))
                .collect::<Result<Vec<f64>>>()?;
            out.push(ResidualReport::from_residuals("scalar curvature", ts, &r, tol)?);
        }
    }
    Ok(out)
}

/// Integrates the governing equation by RK4 from the closed form's initial
/// data and reports the max deviation from the closed form.
pub fn ode_cross_check(inst: &FamilyInstance, n_steps: usize) -> Result<ResidualReport> {
    let Solved::Closed(y) = &inst.solved else {
        return Err(GeometryError::InvalidSpec("numeric family has no closed form to compare".into()));
    };
    let (lo, hi) = inst.interval;
    let start = y.jet1("t", lo)?;
    let tr = rk4(&inst.family.ode, lo, hi, start[0], start[1], n_steps)?;
    let dev = tr
        .t
        .iter()
        .zip(&tr.y)
        .map(|(&t, &yn)| Ok(yn - y.jet1("t", t)?[0]))
        .collect::<Result<Vec<f64>>>()?;
    let report = ResidualReport::from_residuals(format!("RK4 vs closed form ({n_steps} steps)"), tr.t.clone(), &dev, CROSS_CHECK_TOLERANCE)?;
    if report.max_abs_residual > STEP_TOO_COARSE {
        return Err(GeometryError::StepTooCoarse { deviation: report.max_abs_residual, limit: STEP_TOO_COARSE });
    }
    Ok(report)
}

/// General solution of `y'' = a1 y' + a0 y + c` in `t`, `c1`, `c2`, with
/// the root-structure label of `r² − a1 r − a0`.
pub fn linear_closed_form(a1: f64, a0: f64, c: f64) -> (String, ScalarExpr) {
    let disc = linear_discriminant(a1, a0);
    let t = || ScalarExpr::var("t");
    let mode = |name: &str, r: f64| {
        if is_zero(r) {
            ScalarExpr::var(name)
        } else {
            ScalarExpr::var(name).mul(ScalarExpr::scaled_exp(1.0, r, "t"))
        }
    };
    let (label, homogeneous) = if disc.abs() <= EXACT * (1.0 + a1 * a1 + 4.0 * a0.abs()) {
        let r = a1 / 2.0;
        ("double root", mode("c1", r).add(mode("c2", r).mul(t())))
    } else if disc > 0.0 {
        let s = disc.sqrt();
        ("distinct real roots", mode("c1", (a1 + s) / 2.0).add(mode("c2", (a1 - s) / 2.0)))
    } else {
        let w = (-disc).sqrt() / 2.0;
        let osc = ScalarExpr::var("c1")
            .mul(t().scale(w).cos())
            .add(ScalarExpr::var("c2").mul(t().scale(w).sin()));
        let expr = if is_zero(a1) { osc } else { ScalarExpr::scaled_exp(1.0, a1 / 2.0, "t").mul(osc) };
        ("complex roots", expr)
    };
    let expr = if is_zero(c) {
        homogeneous
    } else if !is_zero(a0) {
        homogeneous.add(ScalarExpr::constant(-c / a0))
    } else if !is_zero(a1) {
        homogeneous.add(t().scale(-c / a1))
    } else {
        homogeneous.add(t().pow(2.0).scale(c / 2.0))
    };
    (label.to_string(), expr)
}

/// `a1² + 4 a0`, the discriminant of `r² − a1 r − a0`.
pub fn linear_discriminant(a1: f64, a0: f64) -> f64 {
    a1 * a1 + 4.0 * a0
}

fn linear_family(ode_coeffs: (f64, f64, f64)) -> (String, SecondOrderOde, FamilyForm) {
    let (a1, a0, c) = ode_coeffs;
    let (label, solution) = linear_closed_form(a1, a0, c);
    (label, SecondOrderOde::Linear { a1, a0, c }, FamilyForm::Closed { solution })
}

fn positivity(var: &str) -> Vec<String> {
    vec![format!("{var}(t) > 0 on the interval")]
}

// ---------------------------------------------------------------- GRW -----

/// Einstein GRW spacetimes `I ×_f F^l`, `P = ∂t`. The time equation forces
/// `f'' = (1 − λ/l) f`; the fiber equation then leaves two families.
pub fn grw_einstein_family(l: usize, lambda: f64, lambda_f: f64) -> Result<Vec<SolutionFamily>> {
    if l < 2 {
        return Err(GeometryError::InvalidDimension(format!("fiber dimension {l} < 2")));
    }
    let lf = l as f64;
    let base = |case: &str, solution: ScalarExpr, free: Vec<String>| SolutionFamily {
        id: "grw-einstein".into(),
        case: case.into(),
        variable: "f".into(),
        ode: SecondOrderOde::Linear { a1: 0.0, a0: 1.0 - lambda / lf, c: 0.0 },
        form: FamilyForm::Closed { solution },
        profile: ProfileMap::Identity,
        free_constants: free,
        exponents: vec![1.0],
        dims: vec![l],
        target: FamilyTarget::Einstein { lambda, fiber_einstein_constants: vec![lambda_f] },
        constraints: positivity("f"),
    };
    let mut out = Vec::new();
    if is_zero(lambda) && is_zero(lambda_f) {
        let f = ScalarExpr::var("c1").mul(ScalarExpr::scaled_exp(1.0, 1.0, "t"));
        out.push(base("lambda = lambda_F = 0: exponential", f, vec!["c1".into()]));
    }
    if same(lambda, lf) && lambda_f > 0.0 {
        let f = ScalarExpr::constant((lambda_f / lf).sqrt());
        out.push(base("lambda = l, lambda_F > 0: constant", f, vec![]));
    }
    Ok(out)
}

/// `Δ = l²/4 + (l+1)(l − S̄)/l`; for `l = 3` this is `25/4 − 4S̄/3`.
pub fn grw_scalar_discriminant(l: usize, scalar: f64) -> f64 {
    let lf = l as f64;
    lf * lf / 4.0 + (lf + 1.0) * (lf - scalar) / lf
}

/// `S̄` at which [`grw_scalar_discriminant`] vanishes: `l + l³/(4(l+1))`.
pub fn grw_scalar_threshold(l: usize) -> f64 {
    let lf = l as f64;
    lf + lf.powi(3) / (4.0 * (lf + 1.0))
}

/// Constant scalar curvature GRW spacetimes `I ×_f F^l`, `P = ∂t`.
///
/// With `v = f²` and `w = v^{(l+1)/4}` the scalar equation becomes
/// `w'' = (l/2) w' − ((l+1)/4)((S̄−l)/l) w + ((l+1)/4)(S^F/l) w^{1−4/(l+1)}`,
/// linear when `l = 3` or `S^F = 0`.
pub fn grw_scalar_family(l: usize, scalar: f64, fiber_scalar: f64) -> Result<Vec<SolutionFamily>> {
    if l == 0 {
        return Err(GeometryError::InvalidDimension("fiber dimension 0".into()));
    }
    let lf = l as f64;
    let q = (lf + 1.0) / 4.0;
    let a1 = lf / 2.0;
    let a0 = -q * (scalar - lf) / lf;
    let forcing = q * fiber_scalar / lf;
    let e = 1.0 - 4.0 / (lf + 1.0);
    let variable = if l == 3 { "v" } else { "w" };
    let (case, ode, form, free) = if l == 3 || is_zero(fiber_scalar) {
        let (label, ode, form) = linear_family((a1, a0, forcing));
        let side = if l == 3 && same(scalar, 3.0) {
            "scalar = 3".to_string()
        } else {
            let d = grw_scalar_discriminant(l, scalar);
            let rel = if label == "double root" { "=" } else if d > 0.0 { "<" } else { ">" };
            format!("scalar {rel} {}", grw_scalar_threshold(l))
        };
        (format!("{side}: {label}"), ode, form, vec!["c1".into(), "c2".into()])
    } else {
        let form = FamilyForm::NumericOnly { initial_value: ScalarExpr::var("c1"), initial_slope: ScalarExpr::var("c2") };
        ("l != 3, S^F != 0: numeric".into(), SecondOrderOde::PowerForced { a1, a0, c: forcing, e }, form, vec!["c1".into(), "c2".into()])
    };
    Ok(vec![SolutionFamily {
        id: "grw-scalar".into(),
        case,
        variable: variable.into(),
        ode,
        form,
        profile: ProfileMap::Power(2.0 / (lf + 1.0)),
        free_constants: free,
        exponents: vec![1.0],
        dims: vec![l],
        target: FamilyTarget::ConstantScalar { scalar, fiber_scalars: vec![fiber_scalar] },
        constraints: positivity(variable),
    }])
}

// ------------------------------------------------------------- Kasner -----

fn check_kasner(ty: KasnerType, p: &[f64], l: &[usize], per_fiber: &[f64]) -> Result<()> {
    if l != ty.dims() {
        return Err(GeometryError::UnsupportedType(format!("type {} needs fiber dimensions {:?}, got {l:?}", ty.name(), ty.dims())));
    }
    for len in [p.len(), per_fiber.len()] {
        if len != l.len() {
            return Err(GeometryError::LengthMismatch { expected: l.len(), got: len });
        }
    }
    Ok(())
}

fn kasner_family(ty: KasnerType, p: &[f64], target: FamilyTarget) -> impl Fn(String, &str, SecondOrderOde, FamilyForm, ProfileMap, Vec<String>) -> SolutionFamily + '_ {
    move |case, variable, ode, form, profile, free| SolutionFamily {
        id: format!("kasner-{}", if matches!(target, FamilyTarget::Einstein { .. }) { "einstein" } else { "scalar" }),
        case: format!("type {}: {case}", ty.name()),
        variable: variable.into(),
        ode,
        form,
        profile,
        free_constants: free,
        exponents: p.to_vec(),
        dims: ty.dims().to_vec(),
        target: target.clone(),
        constraints: positivity(variable),
    }
}

/// Einstein Kasner spacetimes of type II or III with `P = ∂t`.
///
/// Type II: `p_2 = 0, p_1 ≠ 0` with `λ = λ_2 = 2`, and `p_1 = p_2 ≠ 0` with
/// `λ = λ_2 = 0`, both with `φ = c1 e^{t/p_1}`. Type III: all `p_i` equal and
/// nonzero with `λ = 0`. No other parameters admit a solution.
pub fn kasner_einstein_families(ty: KasnerType, p: &[f64], l: &[usize], lambda: f64, fiber_lambdas: &[f64]) -> Result<Vec<SolutionFamily>> {
    check_kasner(ty, p, l, fiber_lambdas)?;
    if l.iter().zip(fiber_lambdas).any(|(&d, &li)| d == 1 && !is_zero(li)) {
        return Ok(vec![]);
    }
    let target = FamilyTarget::Einstein { lambda, fiber_einstein_constants: fiber_lambdas.to_vec() };
    let make = kasner_family(ty, p, target);
    let exponential = |case: &str, p1: f64| {
        let phi = ScalarExpr::var("c1").mul(ScalarExpr::scaled_exp(1.0, 1.0 / p1, "t"));
        let ode = SecondOrderOde::Linear { a1: 0.0, a0: 1.0 / (p1 * p1), c: 0.0 };
        make(case.into(), "phi", ode, FamilyForm::Closed { solution: phi }, ProfileMap::Identity, vec!["c1".into()])
    };
    let mut out = Vec::new();
    let all_equal = !is_zero(p[0]) && p.iter().all(|&x| same(x, p[0]));
    match ty {
        KasnerType::II => {
            if is_zero(p[1]) && !is_zero(p[0]) && same(lambda, 2.0) && same(fiber_lambdas[1], 2.0) {
                out.push(exponential("p2 = 0, lambda = lambda2 = 2: exponential", p[0]));
            }
            if all_equal && is_zero(lambda) && is_zero(fiber_lambdas[1]) {
                out.push(exponential("p1 = p2, lambda = lambda2 = 0: exponential", p[0]));
            }
        }
        KasnerType::III => {
            if all_equal && is_zero(lambda) {
                out.push(exponential("equal exponents, lambda = 0: exponential", p[0]));
            }
        }
    }
    Ok(out)
}

/// `9/4 − (S̄−3)(η+ζ²)/ζ²`, keying the `ζ ≠ 0` constant-scalar cases.
pub fn kasner_scalar_discriminant(zeta: f64, eta: f64, scalar: f64) -> f64 {
    2.25 - (scalar - 3.0) * (eta + zeta * zeta) / (zeta * zeta)
}

/// `S̄` at which [`kasner_scalar_discriminant`] vanishes.
pub fn kasner_scalar_threshold(zeta: f64, eta: f64) -> f64 {
    3.0 + 9.0 * zeta * zeta / (4.0 * (eta + zeta * zeta))
}

/// Constant scalar curvature Kasner spacetimes of type II or III, `P = ∂t`.
///
/// For `ζ ≠ 0`, `φ = ψ^{2ζ/(η+ζ²)}` turns the scalar equation into
/// `ψ'' = (3/2)ψ' + ((3−S̄)/A)ψ + (S^{F_2}/A) ψ^{1−4p_2ζ/(η+ζ²)}`,
/// `A = 4ζ²/(η+ζ²)`. For `ζ = 0` it is first order:
/// `η(φ'/φ)² = S^{F_2} φ^{−2p_2} + 3 − S̄`.
pub fn kasner_scalar_families(ty: KasnerType, p: &[f64], l: &[usize], scalar: f64, fiber_scalars: &[f64]) -> Result<Vec<SolutionFamily>> {
    check_kasner(ty, p, l, fiber_scalars)?;
    if let Some(i) = l.iter().zip(fiber_scalars).position(|(&d, &s)| d == 1 && !is_zero(s)) {
        return Err(GeometryError::InvalidSpec(format!("fiber {} is one-dimensional; its scalar curvature is 0", i + 1)));
    }
    let (zeta, eta) = kasner_invariants(p, l)?;
    let (sf, p2) = match ty {
        KasnerType::II => (fiber_scalars[1], p[1]),
        KasnerType::III => (0.0, 0.0),
    };
    let target = FamilyTarget::ConstantScalar { scalar, fiber_scalars: fiber_scalars.to_vec() };
    let make = kasner_family(ty, p, target);
    let constant = |case: &str| {
        let ode = SecondOrderOde::Linear { a1: 0.0, a0: 0.0, c: 0.0 };
        make(case.into(), "phi", ode, FamilyForm::Closed { solution: ScalarExpr::var("c0") }, ProfileMap::Identity, vec!["c0".into()])
    };
    let mut out = Vec::new();
    if is_zero(zeta) && is_zero(eta) {
        if same(scalar, 3.0 + sf) {
            out.push(constant("all exponents zero: constant"));
        }
    } else if is_zero(zeta) {
        if is_zero(sf) {
            let k2 = (3.0 - scalar) / eta;
            if is_zero(k2) {
                out.push(constant("zeta = 0, scalar = 3: constant"));
            } else if k2 > 0.0 {
                let ode = SecondOrderOde::Linear { a1: 0.0, a0: k2, c: 0.0 };
                for (sign, name) in [(1.0, "growing"), (-1.0, "decaying")] {
                    let phi = ScalarExpr::var("c0").mul(ScalarExpr::scaled_exp(1.0, sign * k2.sqrt(), "t"));
                    let case = format!("zeta = 0, scalar < 3: {name} exponential");
                    out.push(make(case, "phi", ode.clone(), FamilyForm::Closed { solution: phi }, ProfileMap::Identity, vec!["c0".into()]));
                }
            }
        } else {
            let ode = SecondOrderOde::LogForced { k: -p2 * sf / eta, e: 1.0 - 2.0 * p2 };
            let c0 = || ScalarExpr::var("c0");
            let rate = c0().pow(-2.0 * p2).scale(sf / eta).add(ScalarExpr::constant((3.0 - scalar) / eta)).sqrt();
            for (sign, name) in [(1.0, "increasing"), (-1.0, "decreasing")] {
                let form = FamilyForm::NumericOnly { initial_value: c0(), initial_slope: c0().mul(rate.clone()).scale(sign) };
                let mut fam = make(format!("zeta = 0, S^F2 != 0: {name}, numeric"), "phi", ode.clone(), form, ProfileMap::Identity, vec!["c0".into()]);
                fam.constraints.push(format!("S^F2 c0^(-2 p2) + 3 - scalar >= 0"));
                out.push(fam);
            }
        }
    } else {
        let a = 4.0 * zeta * zeta / (eta + zeta * zeta);
        let e = 1.0 - 4.0 * p2 * zeta / (eta + zeta * zeta);
        let profile = ProfileMap::Power(2.0 * zeta / (eta + zeta * zeta));
        let free = || vec!["c1".to_string(), "c2".to_string()];
        let linear = if is_zero(sf) {
            Some(((3.0 - scalar) / a, 0.0, "S^F2 = 0"))
        } else if is_zero(e) {
            Some(((3.0 - scalar) / a, sf / a, "4 p2 zeta = eta + zeta^2"))
        } else if is_zero(e - 1.0) {
            Some(((3.0 - scalar + sf) / a, 0.0, "p2 = 0"))
        } else {
            None
        };
        match linear {
            Some((a0, c, why)) => {
                let (label, ode, form) = linear_family((1.5, a0, c));
                let case = if matches!(ty, KasnerType::III) { label } else { format!("{why}, {label}") };
                out.push(make(case, "psi", ode, form, profile, free()));
            }
            None => {
                let ode = SecondOrderOde::PowerForced { a1: 1.5, a0: (3.0 - scalar) / a, c: sf / a, e };
                let form = FamilyForm::NumericOnly { initial_value: ScalarExpr::var("c1"), initial_slope: ScalarExpr::var("c2") };
                out.push(make("nonlinear, numeric".into(), "psi", ode, form, profile, free()));
            }
        }
    }
    Ok(out)
}

// --------------------------------------------------------------- scans -----

/// Parameter grid for nonexistence scans over `(c1, c2) ∈ [−r, r]² \ {0}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanConfig {
    pub grid_size: usize,
    pub range: f64,
    pub t_interval: (f64, f64),
    pub t_points: usize,
    /// Minimum residual expected when no solution exists.
    pub threshold: f64,
}

impl Default for ScanConfig {
    fn default() -> Self {
        ScanConfig { grid_size: 41, range: 2.0, t_interval: (0.0, 1.0), t_points: FAMILY_GRID_POINTS, threshold: 0.01 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanReport {
    pub name: String,
    pub config: ScanConfig,
    /// Smallest max-over-`t` residual among admissible parameter pairs.
    pub min_residual: f64,
    pub argmin: [f64; 2],
    /// Pairs whose warping stays positive on the interval.
    pub admissible: usize,
    pub pass: bool,
}

/// Scans every `(c1, c2)` solution of the time equation `y'' = a0 y` and
/// reports the smallest remaining residual. Pairs with `y ≤ 0` somewhere are
/// inadmissible and skipped.
fn scan(name: String, a0: f64, cfg: &ScanConfig, residual: impl Fn([f64; 3]) -> f64) -> Result<ScanReport> {
    if cfg.grid_size < 2 || cfg.t_points < 2 {
        return Err(GeometryError::InvalidSpec("scan grids need at least 2 points".into()));
    }
    let (_, template) = linear_closed_form(0.0, a0, 0.0);
    let (lo, hi) = cfg.t_interval;
    let ts: Vec<f64> = (0..cfg.t_points).map(|k| lo + (hi - lo) * k as f64 / (cfg.t_points - 1) as f64).collect();
    let axis = |k: usize| -cfg.range + 2.0 * cfg.range * k as f64 / (cfg.grid_size - 1) as f64;
    let (mut best, mut argmin, mut admissible) = (f64::INFINITY, [f64::NAN; 2], 0);
    for i in 0..cfg.grid_size {
        for j in 0..cfg.grid_size {
            let (c1, c2) = (axis(i), axis(j));
            if c1 == 0.0 && c2 == 0.0 {
                continue;
            }
            let y = template.substitute("c1", c1).substitute("c2", c2);
            let jets = ts.iter().map(|&t| y.jet1("t", t)).collect::<std::result::Result<Vec<_>, _>>()?;
            if jets.iter().any(|j| !(j[0] > 0.0)) {
                continue;
            }
            admissible += 1;
            let r = jets.iter().map(|&j| residual(j).abs()).fold(0.0, f64::max);
            let r = if r.is_finite() { r } else { f64::INFINITY };
            if r < best {
                best = r;
                argmin = [c1, c2];
            }
        }
    }
    Ok(ScanReport { name, config: cfg.clone(), min_residual: best, argmin, admissible, pass: best >= cfg.threshold })
}

/// GRW Einstein nonexistence scan: `f` solves the time equation and the
/// fiber equation `λ_F − f f'' − (l−1) f'² + l f f' − λ f²` is scanned.
pub fn grw_einstein_scan(l: usize, lambda: f64, lambda_f: f64, cfg: &ScanConfig) -> Result<ScanReport> {
    if l < 2 {
        return Err(GeometryError::InvalidDimension(format!("fiber dimension {l} < 2")));
    }
    let lf = l as f64;
    let name = format!("grw einstein scan l={l} lambda={lambda} lambda_F={lambda_f}");
    scan(name, 1.0 - lambda / lf, cfg, |[f, d1, d2]| lambda_f - f * d2 - (lf - 1.0) * d1 * d1 + lf * f * d1 - lambda * f * f)
}

/// Kasner Einstein nonexistence scan for `ζ ≠ 0`: the time equation gives
/// `φ = ψ^{ζ/η}` with `ψ'' = (3−λ)(η/ζ²) ψ`, and every fiber equation is
/// scanned.
pub fn kasner_einstein_scan(p: &[f64], l: &[usize], lambda: f64, fiber_lambdas: &[f64], cfg: &ScanConfig) -> Result<ScanReport> {
    let (zeta, eta) = kasner_invariants(p, l)?;
    if fiber_lambdas.len() != p.len() {
        return Err(GeometryError::LengthMismatch { expected: p.len(), got: fiber_lambdas.len() });
    }
    if is_zero(zeta) {
        return Err(GeometryError::InvalidSpec("scan needs zeta != 0".into()));
    }
    let m: usize = l.iter().sum();
    let a0 = (m as f64 - lambda) * eta / (zeta * zeta);
    let profile = ProfileMap::Power(zeta / eta);
    let name = format!("kasner einstein scan p={p:?} l={l:?} lambda={lambda}");
    scan(name, a0, cfg, |psi| {
        let phi = profile.jet(psi);
        p.iter()
            .zip(fiber_lambdas)
            .map(|(&pi, &li)| kasner_fiber_residual(pi, zeta, m, li, lambda, phi).abs())
            .fold(0.0, f64::max)
    })
}
