//! Task dispatch.

use std::time::Instant;

use log::{debug, info};
use nalgebra::{DMatrix, DVector};
use thiserror::Error;
use warpcurv_core::connection::{curvature_via_relation, modified_coefficients};
use warpcurv_core::einstein::{
    einstein_deviation, grw_einstein_residuals, multiwarped_scalar, reference_fiber_point, TimeGrid,
};
use warpcurv_core::families::{
    family_residuals, grw_einstein_family, grw_einstein_scan, grw_scalar_family, kasner_einstein_families,
    kasner_einstein_scan, kasner_scalar_families, ode_cross_check, FamilyForm, KasnerType, ScanReport, SolutionFamily,
    FAMILY_GRID_POINTS, FAMILY_TOLERANCE,
};
use warpcurv_core::structured::StructuredGeometry;
use warpcurv_core::{BaseChart, Block, BlockVector, Connection, GeometryError, PointCoords, ProductManifoldSpec, ScalarExpr};

use crate::config::{ConfigParseError, FamilyRequest, Generator, ScenarioConfig, Task};
use crate::report::{CheckRow, RunReport};

/// Default tolerance of curvature comparisons.
pub const CURVATURE_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(#[from] ConfigParseError),
    #[error("{0}")]
    Geometry(#[from] GeometryError),
    #[error("{0}")]
    Unsupported(String),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

pub mod exit {
    pub const PASS: i32 = 0;
    pub const CHECK_FAILED: i32 = 1;
    pub const CONFIG: i32 = 2;
    pub const NUMERICAL: i32 = 3;
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Geometry(e) if e.is_numerical() => exit::NUMERICAL,
            _ => exit::CONFIG,
        }
    }

    pub fn code(&self) -> &'static str {
        match self {
            CliError::Config(_) => "ConfigParseError",
            CliError::Geometry(e) => e.code(),
            CliError::Unsupported(_) => "Unsupported",
            CliError::Io(_) => "Io",
        }
    }
}

pub fn run_scenario(cfg: &ScenarioConfig) -> Result<RunReport, CliError> {
    let start = Instant::now();
    let mut report = RunReport::new(cfg.task.name(), cfg.echo.clone());
    info!("running {}", cfg.task.name());
    match cfg.task {
        Task::OracleVerify => oracle_verify(cfg, &mut report)?,
        Task::EinsteinCheck => einstein_check(cfg, &mut report)?,
        Task::ScalarCheck => scalar_check(cfg, &mut report)?,
        Task::FamilyGenerate => family_generate(cfg, &mut report)?,
        Task::FamilyVerify => family_verify(cfg, &mut report)?,
        Task::NonexistenceScan => nonexistence_scan(cfg, &mut report)?,
    }
    report.wall_clock_ms = start.elapsed().as_secs_f64() * 1e3;
    Ok(report)
}

fn manifold(cfg: &ScenarioConfig) -> &ProductManifoldSpec {
    cfg.spec.as_ref().expect("validated at parse time")
}

/// Chebyshev points in `t` for interval bases; a fixed quasi-random set in
/// `[−0.8, 0.8]^n` for flat bases. Fibers sit at their reference point.
pub fn sample_points(spec: &ProductManifoldSpec, n: usize) -> Result<Vec<PointCoords>, GeometryError> {
    match &spec.base {
        BaseChart::Interval { .. } => Ok(TimeGrid::chebyshev(spec, n)?.points()),
        BaseChart::Flat { coords, .. } => {
            let fiber = reference_fiber_point(spec);
            Ok((0..n)
                .map(|k| {
                    let mut x: Vec<f64> = (0..coords.len()).map(|j| 0.8 * (1.3 * (k + 1) as f64 * (j + 1) as f64 + 0.7 * j as f64).sin()).collect();
                    x.extend_from_slice(&fiber);
                    PointCoords(x)
                })
                .collect())
        }
    }
}

fn basis(spec: &ProductManifoldSpec) -> Vec<BlockVector> {
    (0..spec.dim()).map(|i| BlockVector::coordinate(spec, i)).collect()
}

fn oracle_verify(cfg: &ScenarioConfig, report: &mut RunReport) -> Result<(), CliError> {
    let spec = manifold(cfg);
    let conn = &cfg.connection;
    let tol = cfg.tolerance.unwrap_or(CURVATURE_TOLERANCE);
    let points = sample_points(spec, cfg.grid)?;
    let (mut dg, mut dr, mut dric, mut ds) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let b = basis(spec);
    for p in &points {
        debug!("oracle point {:?}", p.0);
        let sg = StructuredGeometry::new(spec, conn, p)?;
        let coeffs = modified_coefficients(conn, spec, p)?;
        let oracle = curvature_via_relation(conn, spec, p)?;
        for x in &b {
            for y in &b {
                let s = sg.covariant_derivative(x, y)?.value;
                dg = dg.max((s - coeffs.covariant_derivative(&x.components, &y.components)).amax());
                for z in &b {
                    let s = sg.curvature(x, y, z)?.value;
                    dr = dr.max((s - oracle.apply(&x.components, &y.components, &z.components)).amax());
                }
            }
        }
        dric = dric.max((sg.ricci_matrix()? - &oracle.ricci).amax());
        ds = ds.max((sg.scalar()?.value - oracle.scalar).abs());
    }
    report.checks.push(CheckRow::below("connection: structured vs chart", dg, tol));
    report.checks.push(CheckRow::below("curvature: structured vs chart", dr, tol));
    report.checks.push(CheckRow::below("ricci: structured vs chart", dric, tol));
    report.checks.push(CheckRow::below("scalar: structured vs chart", ds, tol));
    report.notes.push(format!("{} sample points, connection {}", points.len(), conn.kind().name()));
    Ok(())
}

fn metric(spec: &ProductManifoldSpec, p: &PointCoords) -> Result<DMatrix<f64>, GeometryError> {
    Ok(DMatrix::from_diagonal(&DVector::from_vec(spec.metric_diag::<f64>(&p.0)?)))
}

fn is_time_field(conn: &Connection) -> bool {
    matches!(conn, Connection::SemiSymmetric(f)
        if f.location == Block::Base && f.components.len() == 1 && f.components[0] == ScalarExpr::constant(1.0))
}

fn einstein_check(cfg: &ScenarioConfig, report: &mut RunReport) -> Result<(), CliError> {
    let spec = manifold(cfg);
    let tol = cfg.tolerance.unwrap_or(CURVATURE_TOLERANCE);
    let points = sample_points(spec, cfg.grid)?;
    let dev = einstein_deviation(spec, &cfg.connection, cfg.lambda, &points, cfg.symmetrize, tol)?;
    report.checks.push(CheckRow::below(format!("{} (structured)", dev.check), dev.max_abs_residual, tol));
    let mut oracle = 0.0f64;
    for p in &points {
        let mut ric = curvature_via_relation(&cfg.connection, spec, p)?.ricci;
        if cfg.symmetrize {
            ric = (&ric + ric.transpose()) * 0.5;
        }
        oracle = oracle.max((ric - metric(spec, p)? * cfg.lambda).amax());
    }
    report.checks.push(CheckRow::below(format!("{} (chart)", dev.check), oracle, tol));
    if is_time_field(&cfg.connection) && !cfg.symmetrize && !spec.twisted && spec.base.is_interval() {
        match grw_einstein_residuals(spec, cfg.lambda, &TimeGrid::chebyshev(spec, cfg.grid)?, tol) {
            Ok(res) => {
                for r in res.residuals {
                    report.checks.push(CheckRow::below(format!("warping equation: {}", r.check), r.max_abs_residual, tol));
                }
            }
            Err(e) => report.notes.push(format!("warping equations skipped: {e}")),
        }
    }
    report.notes.push(format!("lambda = {}, {} sample points, connection {}", cfg.lambda, points.len(), cfg.connection.kind().name()));
    Ok(())
}

fn scalar_check(cfg: &ScenarioConfig, report: &mut RunReport) -> Result<(), CliError> {
    let spec = manifold(cfg);
    let target = cfg.scalar.expect("validated at parse time");
    let tol = cfg.tolerance.unwrap_or(CURVATURE_TOLERANCE);
    let points = sample_points(spec, cfg.grid)?;
    let (mut ds, mut dc) = (0.0f64, 0.0f64);
    for p in &points {
        ds = ds.max((StructuredGeometry::new(spec, &cfg.connection, p)?.scalar()?.value - target).abs());
        dc = dc.max((curvature_via_relation(&cfg.connection, spec, p)?.scalar - target).abs());
    }
    report.checks.push(CheckRow::below("scalar minus target (structured)", ds, tol));
    report.checks.push(CheckRow::below("scalar minus target (chart)", dc, tol));
    let field = match &cfg.connection {
        Connection::LeviCivita => Some(None),
        Connection::SemiSymmetric(f) => Some(Some(f)),
        Connection::Symmetrized(_) => None,
    };
    if let (Some(field), false, true) = (field, spec.twisted, spec.base.is_interval()) {
        match multiwarped_scalar(spec, field, &TimeGrid::chebyshev(spec, cfg.grid)?, tol) {
            Ok(r) => report.checks.push(CheckRow::below("closed scalar formula vs structured", r.report.max_abs_residual, tol)),
            Err(e @ GeometryError::UnsupportedP(_)) => report.notes.push(format!("closed scalar formula skipped: {e}")),
            Err(e) => return Err(e.into()),
        }
    }
    report.notes.push(format!("target scalar = {target}, {} sample points", points.len()));
    Ok(())
}

fn generate(req: &FamilyRequest) -> Result<Vec<SolutionFamily>, CliError> {
    let first = |v: &[f64]| v.first().copied().unwrap_or(0.0);
    let families = match req.generator {
        Generator::GrwEinstein => grw_einstein_family(req.dims[0], req.lambda, first(&req.fiber_lambdas))?,
        Generator::GrwScalar => grw_scalar_family(req.dims[0], req.scalar, first(&req.fiber_scalars))?,
        Generator::KasnerEinstein => {
            let ty = KasnerType::from_dims(&req.dims)?;
            kasner_einstein_families(ty, &req.exponents, &req.dims, req.lambda, &padded(&req.fiber_lambdas, req.dims.len()))?
        }
        Generator::KasnerScalar => {
            let ty = KasnerType::from_dims(&req.dims)?;
            kasner_scalar_families(ty, &req.exponents, &req.dims, req.scalar, &padded(&req.fiber_scalars, req.dims.len()))?
        }
    };
    Ok(families)
}

/// Omitted per-fiber constants default to zero.
fn padded(v: &[f64], n: usize) -> Vec<f64> {
    if v.is_empty() {
        vec![0.0; n]
    } else {
        v.to_vec()
    }
}

fn describe(f: &SolutionFamily) -> String {
    let form = match &f.form {
        FamilyForm::Closed { solution } => format!("{} = {solution}", f.variable),
        FamilyForm::NumericOnly { initial_value, initial_slope } => {
            format!("{} numeric from {}(t0) = {initial_value}, {}'(t0) = {initial_slope}", f.variable, f.variable, f.variable)
        }
    };
    format!("{} [{}]: {form}; free: {}", f.id, f.case, if f.free_constants.is_empty() { "none".into() } else { f.free_constants.join(", ") })
}

fn family_generate(cfg: &ScenarioConfig, report: &mut RunReport) -> Result<(), CliError> {
    let req = cfg.family.as_ref().expect("validated at parse time");
    let families = generate(req)?;
    report.notes.push(format!("{} famil{} emitted", families.len(), if families.len() == 1 { "y" } else { "ies" }));
    report.notes.extend(families.iter().map(describe));
    Ok(())
}

fn family_verify(cfg: &ScenarioConfig, report: &mut RunReport) -> Result<(), CliError> {
    let req = cfg.family.as_ref().expect("validated at parse time");
    let tol = cfg.tolerance.unwrap_or(FAMILY_TOLERANCE);
    let families = generate(req)?;
    report.checks.push(CheckRow::below("families emitted", if families.is_empty() { 1.0 } else { 0.0 }, 0.5));
    for f in &families {
        report.notes.push(describe(f));
        let constants: Vec<f64> = if req.constants.is_empty() { vec![1.0; f.free_constants.len()] } else { req.constants.clone() };
        let inst = f.instantiate(&constants, req.interval)?;
        for r in family_residuals(&inst, FAMILY_GRID_POINTS, tol)? {
            report.checks.push(CheckRow::below(format!("{}: {}", f.case, r.check), r.max_abs_residual, tol));
        }
        if f.is_closed() {
            let r = ode_cross_check(&inst, req.steps)?;
            report.checks.push(CheckRow::below(format!("{}: {}", f.case, r.check), r.max_abs_residual, r.tolerance));
        }
    }
    Ok(())
}

fn scan_row(report: &mut RunReport, scan: ScanReport) {
    report.notes.push(format!(
        "{}: {} admissible pairs, minimum at (c1, c2) = ({}, {})",
        scan.name, scan.admissible, scan.argmin[0], scan.argmin[1]
    ));
    report.checks.push(CheckRow::at_least(format!("{}: min residual", scan.name), scan.min_residual, scan.config.threshold));
}

fn nonexistence_scan(cfg: &ScenarioConfig, report: &mut RunReport) -> Result<(), CliError> {
    let req = cfg.family.as_ref().expect("validated at parse time");
    let scan = match req.generator {
        Generator::GrwEinstein => grw_einstein_scan(req.dims[0], req.lambda, req.fiber_lambdas.first().copied().unwrap_or(0.0), &cfg.scan)?,
        Generator::KasnerEinstein => {
            kasner_einstein_scan(&req.exponents, &req.dims, req.lambda, &padded(&req.fiber_lambdas, req.dims.len()), &cfg.scan)?
        }
        g => return Err(CliError::Unsupported(format!("no nonexistence scan for '{}'", g.name()))),
    };
    scan_row(report, scan);
    Ok(())
}
