//! Line-oriented `key = value` scenario files.
//!
//! ```text
//! # GRW spacetime with a flat torus
//! task = einstein-check
//! base = interval 0 1
//! fiber = torus 2
//! fiber.warping = exp(t)
//! connection = semi-symmetric
//! p = base
//! p.components = 1
//! lambda = 0
//! ```
//!
//! Each `fiber = …` line opens a new fiber block; `fiber.*` keys apply to
//! the most recent one. Lists are comma-separated, expression lists
//! semicolon-separated.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use warpcurv_core::families::ScanConfig;
use warpcurv_core::{BaseChart, Connection, ExprError, FiberGeometry, FiberSpec, ProductManifoldSpec, ScalarExpr, TorsionField};

#[derive(Debug, Clone, PartialEq, Error)]
#[error("line {line}, column {column}: {message}")]
pub struct ConfigParseError {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    OracleVerify,
    EinsteinCheck,
    ScalarCheck,
    FamilyGenerate,
    FamilyVerify,
    NonexistenceScan,
}

impl Task {
    pub const ALL: [Task; 6] =
        [Task::OracleVerify, Task::EinsteinCheck, Task::ScalarCheck, Task::FamilyGenerate, Task::FamilyVerify, Task::NonexistenceScan];

    pub fn name(self) -> &'static str {
        match self {
            Task::OracleVerify => "oracle-verify",
            Task::EinsteinCheck => "einstein-check",
            Task::ScalarCheck => "scalar-check",
            Task::FamilyGenerate => "family-generate",
            Task::FamilyVerify => "family-verify",
            Task::NonexistenceScan => "nonexistence-scan",
        }
    }

    fn needs_manifold(self) -> bool {
        matches!(self, Task::OracleVerify | Task::EinsteinCheck | Task::ScalarCheck)
    }
}

impl FromStr for Task {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Task::ALL.into_iter().find(|t| t.name() == s).ok_or_else(|| format!("unknown task '{s}'"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Text,
    Csv,
    Json,
}

impl FromStr for OutputFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "text" => Ok(OutputFormat::Text),
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            _ => Err(format!("unsupported format '{s}' (expected text, csv or json)")),
        }
    }
}

impl fmt::Display for OutputFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OutputFormat::Text => "text",
            OutputFormat::Csv => "csv",
            OutputFormat::Json => "json",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Generator {
    GrwEinstein,
    GrwScalar,
    KasnerEinstein,
    KasnerScalar,
}

impl Generator {
    pub const ALL: [Generator; 4] = [Generator::GrwEinstein, Generator::GrwScalar, Generator::KasnerEinstein, Generator::KasnerScalar];

    pub fn name(self) -> &'static str {
        match self {
            Generator::GrwEinstein => "grw-einstein",
            Generator::GrwScalar => "grw-scalar",
            Generator::KasnerEinstein => "kasner-einstein",
            Generator::KasnerScalar => "kasner-scalar",
        }
    }
}

impl FromStr for Generator {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Generator::ALL.into_iter().find(|g| g.name() == s).ok_or_else(|| {
            let names: Vec<&str> = Generator::ALL.iter().map(|g| g.name()).collect();
            format!("unknown family '{s}' (expected one of {})", names.join(", "))
        })
    }
}

/// Parameters of a family generator or nonexistence scan.
#[derive(Clone, Debug, PartialEq)]
pub struct FamilyRequest {
    pub generator: Generator,
    pub dims: Vec<usize>,
    pub exponents: Vec<f64>,
    pub lambda: f64,
    pub fiber_lambdas: Vec<f64>,
    pub scalar: f64,
    pub fiber_scalars: Vec<f64>,
    pub constants: Vec<f64>,
    pub interval: (f64, f64),
    pub steps: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioConfig {
    /// Every `key = value` pair in file order, echoed in reports.
    pub echo: Vec<(String, String)>,
    pub task: Task,
    pub spec: Option<ProductManifoldSpec>,
    pub connection: Connection,
    pub lambda: f64,
    pub scalar: Option<f64>,
    pub symmetrize: bool,
    pub grid: usize,
    pub tolerance: Option<f64>,
    pub format: OutputFormat,
    pub family: Option<FamilyRequest>,
    pub scan: ScanConfig,
}

pub const DEFAULT_GRID: usize = 17;

struct Entry {
    line: usize,
    key: String,
    value: String,
    /// 1-based column of the value's first character.
    column: usize,
}

impl Entry {
    fn err(&self, message: impl Into<String>) -> ConfigParseError {
        ConfigParseError { line: self.line, column: self.column, message: format!("{}: {}", self.key, message.into()) }
    }

    fn parse<T: FromStr>(&self) -> Result<T, ConfigParseError>
    where
        T::Err: fmt::Display,
    {
        self.value.parse::<T>().map_err(|e| self.err(format!("'{}': {e}", self.value)))
    }

    fn list<T: FromStr>(&self) -> Result<Vec<T>, ConfigParseError>
    where
        T::Err: fmt::Display,
    {
        if self.value.trim().is_empty() {
            return Ok(vec![]);
        }
        self.value
            .split(',')
            .map(|s| s.trim().parse::<T>().map_err(|e| self.err(format!("'{}': {e}", s.trim()))))
            .collect()
    }

    fn bool(&self) -> Result<bool, ConfigParseError> {
        match self.value.as_str() {
            "true" | "yes" | "1" => Ok(true),
            "false" | "no" | "0" => Ok(false),
            v => Err(self.err(format!("expected true or false, got '{v}'"))),
        }
    }

    /// Parses semicolon-separated expressions, mapping parse columns back
    /// into the file.
    fn exprs(&self) -> Result<Vec<ScalarExpr>, ConfigParseError> {
        let mut out = Vec::new();
        let mut offset = 0;
        for piece in self.value.split(';') {
            let lead = piece.len() - piece.trim_start().len();
            let src = piece.trim();
            let expr = ScalarExpr::parse(src).map_err(|e| match e {
                ExprError::Parse { column, message } => ConfigParseError {
                    line: self.line,
                    column: self.column + offset + lead + column.saturating_sub(1),
                    message: format!("{}: malformed expression '{src}': {message}", self.key),
                },
                other => self.err(other.to_string()),
            })?;
            out.push(expr);
            offset += piece.len() + 1;
        }
        Ok(out)
    }
}

struct FiberBlock {
    entry_line: usize,
    fiber: FiberSpec,
    coords: Option<Vec<String>>,
    warping: Option<ScalarExpr>,
}

fn parse_fiber(e: &Entry) -> Result<FiberSpec, ConfigParseError> {
    let words: Vec<&str> = e.value.split_whitespace().collect();
    let num = |i: usize, default: f64| -> Result<f64, ConfigParseError> {
        words.get(i).map_or(Ok(default), |w| w.parse::<f64>().map_err(|_| e.err(format!("expected a number, got '{w}'"))))
    };
    let geometry = match words.first().copied() {
        Some("torus") => {
            let dim = num(1, 2.0)?;
            if dim < 1.0 || dim > 4.0 || dim.fract() != 0.0 {
                return Err(e.err("torus dimension must be 1 to 4"));
            }
            FiberGeometry::FlatTorus { dim: dim as usize, radius: num(2, 1.0)? }
        }
        Some("circle") => FiberGeometry::Circle { radius: num(1, 1.0)? },
        Some("sphere") => FiberGeometry::Sphere { radius: num(1, 1.0)? },
        Some("hyperbolic") => FiberGeometry::Hyperbolic { radius: num(1, 1.0)? },
        other => {
            return Err(e.err(format!("unknown fiber '{}' (expected torus, circle, sphere or hyperbolic)", other.unwrap_or(""))))
        }
    };
    Ok(FiberSpec::new(geometry))
}

fn parse_base(e: &Entry) -> Result<BaseChart, ConfigParseError> {
    let words: Vec<&str> = e.value.split_whitespace().collect();
    let nums = |ws: &[&str]| -> Result<Vec<f64>, ConfigParseError> {
        ws.iter().map(|w| w.parse::<f64>().map_err(|_| e.err(format!("expected a number, got '{w}'")))).collect()
    };
    match words.first().copied() {
        Some("interval") => {
            let b = nums(&words[1..])?;
            match b[..] {
                [lo, hi] if hi > lo => Ok(BaseChart::interval(lo, hi)),
                [] => Ok(BaseChart::interval(0.0, 1.0)),
                _ => Err(e.err("expected 'interval LO HI' with LO < HI")),
            }
        }
        Some("flat") => {
            let dim: usize = words.get(1).and_then(|w| w.parse().ok()).filter(|d| (1..=3).contains(d)).ok_or_else(|| e.err("expected 'flat N' with N in 1..=3"))?;
            let BaseChart::Flat { coords, .. } = BaseChart::euclidean(dim) else { unreachable!() };
            let signature = match words.get(2) {
                Some(s) => s.split(',').map(|x| x.trim().parse::<f64>().map_err(|_| e.err(format!("bad signature entry '{x}'")))).collect::<Result<Vec<_>, _>>()?,
                None => vec![1.0; dim],
            };
            Ok(BaseChart::Flat { coords, signature })
        }
        _ => Err(e.err("expected 'interval LO HI' or 'flat N [signature]'")),
    }
}

/// Splits a scenario into entries, rejecting lines without `=`.
fn tokenize(src: &str) -> Result<Vec<Entry>, ConfigParseError> {
    let mut out = Vec::new();
    for (i, raw) in src.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("");
        if line.trim().is_empty() {
            continue;
        }
        let Some(eq) = line.find('=') else {
            let column = raw.len() - raw.trim_start().len() + 1;
            return Err(ConfigParseError { line: i + 1, column, message: format!("expected 'key = value', got '{}'", line.trim()) });
        };
        let key = line[..eq].trim().to_string();
        if key.is_empty() {
            return Err(ConfigParseError { line: i + 1, column: 1, message: "missing key before '='".into() });
        }
        let after = &line[eq + 1..];
        let lead = after.len() - after.trim_start().len();
        out.push(Entry { line: i + 1, key, value: after.trim().to_string(), column: eq + 2 + lead });
    }
    Ok(out)
}

impl ScenarioConfig {
    pub fn parse(src: &str) -> Result<Self, ConfigParseError> {
        let entries = tokenize(src)?;
        let mut task = None;
        let mut base = None;
        let mut fibers: Vec<FiberBlock> = Vec::new();
        let mut twisted = false;
        let mut conn_kind: Option<(String, &Entry)> = None;
        let mut p_location: Option<&Entry> = None;
        let mut p_components: Option<(Vec<ScalarExpr>, &Entry)> = None;
        let mut cfg = ScenarioConfig {
            echo: entries.iter().map(|e| (e.key.clone(), e.value.clone())).collect(),
            task: Task::OracleVerify,
            spec: None,
            connection: Connection::LeviCivita,
            lambda: 0.0,
            scalar: None,
            symmetrize: false,
            grid: DEFAULT_GRID,
            tolerance: None,
            format: OutputFormat::Text,
            family: None,
            scan: ScanConfig::default(),
        };
        let mut fam = FamilyRequest {
            generator: Generator::GrwEinstein,
            dims: vec![],
            exponents: vec![],
            lambda: 0.0,
            fiber_lambdas: vec![],
            scalar: 0.0,
            fiber_scalars: vec![],
            constants: vec![],
            interval: (0.0, 1.0),
            steps: 1000,
        };
        let mut generator = None;
        let mut scalar_seen = false;
        for e in &entries {
            let fiber = |fibers: &mut Vec<FiberBlock>| -> Result<usize, ConfigParseError> {
                if fibers.is_empty() {
                    Err(e.err("no 'fiber = …' line before this key"))
                } else {
                    Ok(fibers.len() - 1)
                }
            };
            match e.key.as_str() {
                "task" => task = Some(e.parse::<Task>()?),
                "format" => cfg.format = e.parse()?,
                "grid" => {
                    cfg.grid = e.parse()?;
                    if cfg.grid < 2 {
                        return Err(e.err("grid needs at least 2 points"));
                    }
                }
                "tolerance" => cfg.tolerance = Some(positive(e)?),
                "lambda" => {
                    cfg.lambda = e.parse()?;
                    fam.lambda = cfg.lambda;
                }
                "scalar" => {
                    let s: f64 = e.parse()?;
                    cfg.scalar = Some(s);
                    fam.scalar = s;
                    scalar_seen = true;
                }
                "symmetrize" => cfg.symmetrize = e.bool()?,
                "twisted" => twisted = e.bool()?,
                "base" => base = Some(parse_base(e)?),
                "fiber" => fibers.push(FiberBlock { entry_line: e.line, fiber: parse_fiber(e)?, coords: None, warping: None }),
                "fiber.coords" => {
                    let i = fiber(&mut fibers)?;
                    fibers[i].coords = Some(e.list::<String>()?);
                }
                "fiber.warping" => {
                    let i = fiber(&mut fibers)?;
                    let mut ex = e.exprs()?;
                    if ex.len() != 1 {
                        return Err(e.err("expected a single expression"));
                    }
                    fibers[i].warping = ex.pop();
                }
                "connection" => conn_kind = Some((e.value.clone(), e)),
                "p" => p_location = Some(e),
                "p.components" => p_components = Some((e.exprs()?, e)),
                "family" => generator = Some(e.parse::<Generator>()?),
                "dims" => fam.dims = e.list()?,
                "exponents" => fam.exponents = e.list()?,
                "fiber_lambdas" => fam.fiber_lambdas = e.list()?,
                "fiber_scalars" => fam.fiber_scalars = e.list()?,
                "constants" => fam.constants = e.list()?,
                "steps" => fam.steps = e.parse()?,
                "interval" => {
                    let v: Vec<f64> = e.value.split_whitespace().map(|w| w.parse::<f64>()).collect::<Result<_, _>>().map_err(|_| e.err("expected 'LO HI'"))?;
                    match v[..] {
                        [lo, hi] if hi > lo => fam.interval = (lo, hi),
                        _ => return Err(e.err("expected 'LO HI' with LO < HI")),
                    }
                }
                "scan.grid" => cfg.scan.grid_size = e.parse()?,
                "scan.range" => cfg.scan.range = positive(e)?,
                "scan.threshold" => cfg.scan.threshold = e.parse()?,
                "scan.t_points" => cfg.scan.t_points = e.parse()?,
                _ => return Err(ConfigParseError { line: e.line, column: 1, message: format!("unknown key '{}'", e.key) }),
            }
        }
        let first_line = entries.first().map_or(1, |e| e.line);
        let missing = |what: &str| ConfigParseError { line: first_line, column: 1, message: format!("missing required key '{what}'") };
        cfg.task = task.ok_or_else(|| missing("task"))?;

        if !fibers.is_empty() || base.is_some() {
            let base = base.ok_or_else(|| missing("base"))?;
            let mut fs = Vec::new();
            let mut ws = Vec::new();
            for b in fibers {
                let FiberBlock { entry_line, mut fiber, coords, warping } = b;
                if let Some(c) = coords {
                    fiber = FiberSpec::with_coords(fiber.geometry, c);
                }
                fs.push(fiber);
                ws.push(warping.ok_or_else(|| ConfigParseError { line: entry_line, column: 1, message: "fiber block has no 'fiber.warping'".into() })?);
            }
            let spec = if twisted { ProductManifoldSpec::new_twisted(base, fs, ws) } else { ProductManifoldSpec::new(base, fs, ws) };
            cfg.spec = Some(spec.map_err(|err| ConfigParseError { line: first_line, column: 1, message: format!("invalid manifold: {err}") })?);
        }

        let field = match p_location {
            None => None,
            Some(e) => {
                let words: Vec<&str> = e.value.split_whitespace().collect();
                let comps = || p_components.as_ref().map(|(c, _)| c.clone()).ok_or_else(|| e.err("missing 'p.components'"));
                match words[..] {
                    ["none"] => None,
                    ["base"] => Some(TorsionField::on_base(comps()?)),
                    ["time"] => Some(TorsionField::time()),
                    ["fiber", k] => {
                        let k: usize = k.parse().ok().filter(|&k| k >= 1).ok_or_else(|| e.err("fiber numbers start at 1"))?;
                        Some(TorsionField::on_fiber(k - 1, comps()?))
                    }
                    _ => return Err(e.err("expected none, time, base or 'fiber K'")),
                }
            }
        };
        cfg.connection = match conn_kind {
            None => field.map_or(Connection::LeviCivita, Connection::SemiSymmetric),
            Some((kind, e)) => match (kind.as_str(), field) {
                ("levi-civita", _) => Connection::LeviCivita,
                ("semi-symmetric", Some(f)) => Connection::SemiSymmetric(f),
                ("symmetrized", Some(f)) => Connection::Symmetrized(f),
                ("semi-symmetric" | "symmetrized", None) => return Err(e.err("this connection needs 'p'")),
                _ => return Err(e.err(format!("unknown connection '{kind}' (expected levi-civita, semi-symmetric or symmetrized)"))),
            },
        };
        if let (Some(spec), Some(f)) = (&cfg.spec, cfg.connection.field()) {
            f.validate(spec).map_err(|err| {
                let (line, column) = p_components.as_ref().map_or((first_line, 1), |(_, e)| (e.line, e.column));
                ConfigParseError { line, column, message: err.to_string() }
            })?;
        }

        if cfg.task.needs_manifold() && cfg.spec.is_none() {
            return Err(missing("base"));
        }
        if cfg.task == Task::ScalarCheck && !scalar_seen {
            return Err(missing("scalar"));
        }
        if matches!(cfg.task, Task::FamilyGenerate | Task::FamilyVerify | Task::NonexistenceScan) {
            fam.generator = generator.ok_or_else(|| missing("family"))?;
            if fam.dims.is_empty() {
                return Err(missing("dims"));
            }
            cfg.family = Some(fam);
        }
        Ok(cfg)
    }
}

fn positive(e: &Entry) -> Result<f64, ConfigParseError> {
    let v: f64 = e.parse()?;
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(e.err(format!("must be positive, got {v}")))
    }
}
