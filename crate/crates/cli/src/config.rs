//! Experiment configuration: a flat TOML file with one table per section.

use std::fmt;
use std::path::{Path, PathBuf};

use obstacle_lab::{ConeElement, ProblemParams};
use serde::Deserialize;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Solve,
    Diagnostics,
    Blowup,
    Epiperimetric,
    VerifyOracle,
}

impl Experiment {
    pub const ALL: [Experiment; 5] =
        [Self::Solve, Self::Diagnostics, Self::Blowup, Self::Epiperimetric, Self::VerifyOracle];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Solve => "solve",
            Self::Diagnostics => "diagnostics",
            Self::Blowup => "blowup",
            Self::Epiperimetric => "epiperimetric",
            Self::VerifyOracle => "verify-oracle",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatumKind {
    Cone,
    TwoMode,
    Perturbed,
    Constant,
    FieldFile,
    DefaultFamily,
}

impl DatumKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Cone => "cone",
            Self::TwoMode => "two-mode",
            Self::Perturbed => "perturbed",
            Self::Constant => "constant",
            Self::FieldFile => "field-file",
            Self::DefaultFamily => "default-family",
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub experiment: Experiment,
    #[serde(default)]
    pub label: Option<String>,
    pub params: RawParams,
    #[serde(default)]
    pub datum: Option<RawDatum>,
    #[serde(default)]
    pub window: RawWindow,
    #[serde(default)]
    pub solver: RawSolver,
    #[serde(default)]
    pub tolerances: RawTolerances,
    #[serde(default)]
    pub epi: RawEpi,
    #[serde(default)]
    pub output: RawOutput,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawParams {
    pub n: usize,
    pub s: f64,
    pub h: f64,
    #[serde(default)]
    pub a: Option<f64>,
    #[serde(default)]
    pub r_dom: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawDatum {
    pub kind: DatumKind,
    pub lambda: Option<f64>,
    pub e: Option<Vec<f64>>,
    pub angle: Option<f64>,
    pub eps: Option<f64>,
    pub k: Option<u32>,
    pub value: Option<f64>,
    pub path: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawWindow {
    pub center: Option<Vec<f64>>,
    pub r_min: Option<f64>,
    pub r_max: Option<f64>,
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawSolver {
    pub omega: Option<f64>,
    pub tol: Option<f64>,
    pub max_iter: Option<usize>,
    pub adapt_weights: Option<bool>,
    pub initial: Option<InitialKind>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitialKind {
    Zero,
    Harmonic,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawTolerances {
    pub identity_factor: Option<f64>,
    pub kkt: Option<f64>,
    pub floor_slack: Option<f64>,
    pub exact_error: Option<f64>,
    pub scaling: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawEpi {
    pub scaling_factors: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawOutput {
    pub dir: Option<PathBuf>,
    pub snapshot: Option<bool>,
}

/// A configuration error, pinpointed to a key or to a line of the file.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub location: String,
    pub message: String,
}

impl ConfigError {
    fn at(location: impl Into<String>, message: impl Into<String>) -> Self {
        Self { location: location.into(), message: message.into() }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.location, self.message)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, PartialEq)]
pub enum Datum {
    Cone(ConeElement),
    TwoMode { e: Vec<f64>, eps: f64 },
    Perturbed { e: Vec<f64>, k: u32, eps: f64 },
    Constant(f64),
    FieldFile(PathBuf),
    DefaultFamily,
}

impl Datum {
    pub fn kind(&self) -> DatumKind {
        match self {
            Self::Cone(_) => DatumKind::Cone,
            Self::TwoMode { .. } => DatumKind::TwoMode,
            Self::Perturbed { .. } => DatumKind::Perturbed,
            Self::Constant(_) => DatumKind::Constant,
            Self::FieldFile(_) => DatumKind::FieldFile,
            Self::DefaultFamily => DatumKind::DefaultFamily,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub center: Option<Vec<f64>>,
    pub r_min: Option<f64>,
    pub r_max: Option<f64>,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub omega: Option<f64>,
    pub tol: f64,
    pub max_iter: usize,
    pub adapt_weights: bool,
    pub initial: InitialKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tolerances {
    pub identity_factor: f64,
    pub kkt: f64,
    pub floor_slack: f64,
    pub exact_error: f64,
    pub scaling: f64,
}

/// Validated configuration; relative paths are resolved against the
/// directory of the configuration file.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub label: String,
    pub params: ProblemParams,
    pub datum: Datum,
    pub window: Window,
    pub solver: SolverConfig,
    pub tolerances: Tolerances,
    pub scaling_factors: Vec<f64>,
    pub output_dir: PathBuf,
    pub write_snapshot: bool,
}

pub fn load(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::at(path.display().to_string(), format!("cannot read configuration: {e}")))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    parse(&text, &base)
}

fn line_of(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    (line, col)
}

pub fn parse(text: &str, base: &Path) -> Result<ExperimentConfig, ConfigError> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| {
        let location = match e.span() {
            Some(span) => {
                let (line, col) = line_of(text, span.start);
                format!("line {line}, column {col}")
            }
            None => "configuration".to_string(),
        };
        ConfigError::at(location, e.message().to_string())
    })?;
    validate(raw, base)
}

fn positive(key: &str, v: f64) -> Result<f64, ConfigError> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(ConfigError::at(key, format!("must be positive, got {v}")))
    }
}

fn validate(raw: RawConfig, base: &Path) -> Result<ExperimentConfig, ConfigError> {
    let RawParams { n, s, h, a, r_dom } = raw.params;
    if !(2..=3).contains(&n) {
        return Err(ConfigError::at("params.n", format!("dimension {n} is not supported (2 or 3)")));
    }
    if !(s > 0.0 && s < 1.0) {
        return Err(ConfigError::at("params.s", format!("must lie in (0, 1), got {s}")));
    }
    positive("params.h", h)?;
    let r_dom = positive("params.r_dom", r_dom.unwrap_or(1.0))?;
    let params = ProblemParams { n, s, a: 1.0 - 2.0 * s, h, r_dom };
    params.validate().map_err(|e| ConfigError::at("params.h", e.to_string()))?;
    if let Some(a) = a {
        if (a - params.a).abs() > 1e-12 {
            return Err(ConfigError::at("params.a", format!("must equal 1 - 2s = {}, got {a}", params.a)));
        }
    }

    let datum = validate_datum(raw.experiment, raw.datum, &params, base)?;

    let w = raw.window;
    if let Some(c) = &w.center {
        if c.len() != n {
            return Err(ConfigError::at("window.center", format!("needs {n} coordinates, got {}", c.len())));
        }
        if c[n - 1] != 0.0 {
            return Err(ConfigError::at("window.center", "must lie on the plane x_n = 0"));
        }
    }
    if let Some(r) = w.r_min {
        positive("window.r_min", r)?;
    }
    if let Some(r) = w.r_max {
        positive("window.r_max", r)?;
    }
    if let (Some(lo), Some(hi)) = (w.r_min, w.r_max) {
        if lo >= hi {
            return Err(ConfigError::at("window.r_min", format!("must be below window.r_max = {hi}")));
        }
    }
    let ratio = w.ratio.unwrap_or(obstacle_lab::diagnostics::RADIUS_RATIO);
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(ConfigError::at("window.ratio", format!("must lie in (0, 1), got {ratio}")));
    }
    let window = Window { center: w.center, r_min: w.r_min, r_max: w.r_max, ratio };

    let sv = raw.solver;
    if let Some(om) = sv.omega {
        if !(om > 0.0 && om < 2.0) {
            return Err(ConfigError::at("solver.omega", format!("must lie in (0, 2), got {om}")));
        }
    }
    let solver = SolverConfig {
        omega: sv.omega,
        tol: positive("solver.tol", sv.tol.unwrap_or(1e-10))?,
        max_iter: match sv.max_iter {
            Some(0) => return Err(ConfigError::at("solver.max_iter", "must be positive")),
            Some(m) => m,
            None => 200_000,
        },
        adapt_weights: sv.adapt_weights.unwrap_or(true),
        initial: sv.initial.unwrap_or(InitialKind::Zero),
    };

    let t = raw.tolerances;
    let tolerances = Tolerances {
        identity_factor: positive("tolerances.identity_factor", t.identity_factor.unwrap_or(5.0))?,
        kkt: positive("tolerances.kkt", t.kkt.unwrap_or(1e-7))?,
        floor_slack: positive("tolerances.floor_slack", t.floor_slack.unwrap_or(1e-4))?,
        exact_error: positive("tolerances.exact_error", t.exact_error.unwrap_or(0.05))?,
        scaling: positive("tolerances.scaling", t.scaling.unwrap_or(1e-10))?,
    };

    let scaling_factors = raw.epi.scaling_factors.unwrap_or_else(|| vec![0.5, 2.0]);
    for (i, &g) in scaling_factors.iter().enumerate() {
        positive(&format!("epi.scaling_factors[{i}]"), g)?;
    }

    let dir = raw.output.dir.unwrap_or_else(|| PathBuf::from("out"));
    let output_dir = if dir.is_absolute() { dir } else { base.join(dir) };

    Ok(ExperimentConfig {
        experiment: raw.experiment,
        label: raw.label.unwrap_or_default(),
        params,
        datum,
        window,
        solver,
        tolerances,
        scaling_factors,
        output_dir,
        write_snapshot: raw.output.snapshot.unwrap_or(true),
    })
}

fn direction(d: &RawDatum, n: usize) -> Result<Vec<f64>, ConfigError> {
    match (&d.e, d.angle) {
        (Some(_), Some(_)) => Err(ConfigError::at("datum.angle", "give either datum.e or datum.angle, not both")),
        (Some(e), None) => {
            if e.len() != n - 1 {
                return Err(ConfigError::at("datum.e", format!("needs {} components, got {}", n - 1, e.len())));
            }
            let norm = e.iter().map(|x| x * x).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > 1e-9 {
                return Err(ConfigError::at("datum.e", format!("must be a unit vector, |e| = {norm}")));
            }
            Ok(e.clone())
        }
        (None, Some(phi)) => Ok(ConeElement::direction_from_angle(n, phi)),
        (None, None) => Ok(ConeElement::e1(n)),
    }
}

fn reject_unused(d: &RawDatum, used: &[&str]) -> Result<(), ConfigError> {
    let present = [
        ("lambda", d.lambda.is_some()),
        ("e", d.e.is_some()),
        ("angle", d.angle.is_some()),
        ("eps", d.eps.is_some()),
        ("k", d.k.is_some()),
        ("value", d.value.is_some()),
        ("path", d.path.is_some()),
    ];
    for (key, is_set) in present {
        if is_set && !used.contains(&key) {
            return Err(ConfigError::at(format!("datum.{key}"), format!("not used by datum kind {}", d.kind.as_str())));
        }
    }
    Ok(())
}

fn required<T: Copy>(v: Option<T>, key: &str, kind: DatumKind) -> Result<T, ConfigError> {
    v.ok_or_else(|| ConfigError::at(key, format!("required for datum kind {}", kind.as_str())))
}

fn validate_datum(
    experiment: Experiment,
    datum: Option<RawDatum>,
    params: &ProblemParams,
    base: &Path,
) -> Result<Datum, ConfigError> {
    let n = params.n;
    let Some(d) = datum else {
        return match experiment {
            Experiment::Epiperimetric => Ok(Datum::DefaultFamily),
            Experiment::VerifyOracle => Ok(Datum::Cone(ConeElement::new(1.0, ConeElement::e1(n)).expect("unit cone"))),
            _ => Err(ConfigError::at("datum", format!("a [datum] section is required for {}", experiment.as_str()))),
        };
    };
    let out = match d.kind {
        DatumKind::Cone => {
            reject_unused(&d, &["lambda", "e", "angle"])?;
            let lambda = d.lambda.unwrap_or(1.0);
            if !(lambda.is_finite() && lambda >= 0.0) {
                return Err(ConfigError::at("datum.lambda", format!("must be nonnegative, got {lambda}")));
            }
            let e = direction(&d, n)?;
            Datum::Cone(ConeElement::new(lambda, e).map_err(|err| ConfigError::at("datum.e", err.to_string()))?)
        }
        DatumKind::TwoMode => {
            reject_unused(&d, &["e", "angle", "eps"])?;
            if params.s != 0.5 || n != 2 {
                return Err(ConfigError::at("datum.kind", "two-mode data exist for n = 2 and s = 0.5 only"));
            }
            let eps = required(d.eps, "datum.eps", d.kind)?;
            if !(eps.is_finite() && eps >= 0.0) {
                return Err(ConfigError::at("datum.eps", format!("must be nonnegative, got {eps}")));
            }
            Datum::TwoMode { e: direction(&d, n)?, eps }
        }
        DatumKind::Perturbed => {
            reject_unused(&d, &["e", "angle", "eps", "k"])?;
            let eps = required(d.eps, "datum.eps", d.kind)?;
            if !eps.is_finite() {
                return Err(ConfigError::at("datum.eps", "must be finite"));
            }
            Datum::Perturbed { e: direction(&d, n)?, k: required(d.k, "datum.k", d.kind)?, eps }
        }
        DatumKind::Constant => {
            reject_unused(&d, &["value"])?;
            let v = required(d.value, "datum.value", d.kind)?;
            if !(v.is_finite() && v >= 0.0) {
                return Err(ConfigError::at("datum.value", format!("must be nonnegative, got {v}")));
            }
            Datum::Constant(v)
        }
        DatumKind::FieldFile => {
            reject_unused(&d, &["path"])?;
            let p =
                d.path.clone().ok_or_else(|| ConfigError::at("datum.path", "required for datum kind field-file"))?;
            let p = if p.is_absolute() { p } else { base.join(p) };
            if !p.is_file() {
                return Err(ConfigError::at("datum.path", format!("file {} does not exist", p.display())));
            }
            Datum::FieldFile(p)
        }
        DatumKind::DefaultFamily => {
            reject_unused(&d, &[])?;
            Datum::DefaultFamily
        }
    };
    let allowed: &[DatumKind] = match experiment {
        Experiment::Solve => &[DatumKind::Cone, DatumKind::TwoMode, DatumKind::Perturbed, DatumKind::Constant],
        Experiment::Diagnostics | Experiment::Blowup => {
            &[DatumKind::Cone, DatumKind::TwoMode, DatumKind::Perturbed, DatumKind::Constant, DatumKind::FieldFile]
        }
        Experiment::Epiperimetric => {
            &[DatumKind::DefaultFamily, DatumKind::Perturbed, DatumKind::Cone, DatumKind::Constant]
        }
        Experiment::VerifyOracle => &[DatumKind::Cone],
    };
    if !allowed.contains(&out.kind()) {
        return Err(ConfigError::at(
            "datum.kind",
            format!("{} is not available for experiment {}", out.kind().as_str(), experiment.as_str()),
        ));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASIC: &str = r#"
experiment = "solve"

[params]
n = 2
s = 0.5
h = 0.0625

[datum]
kind = "cone"
lambda = 2.0
"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = parse(BASIC, Path::new("/tmp/x")).unwrap();
        assert_eq!(c.experiment, Experiment::Solve);
        assert_eq!(c.params.a, 0.0);
        assert_eq!(c.params.r_dom, 1.0);
        assert_eq!(c.datum, Datum::Cone(ConeElement::new(2.0, vec![1.0]).unwrap()));
        assert_eq!(c.output_dir, PathBuf::from("/tmp/x/out"));
        assert_eq!(c.solver.tol, 1e-10);
        assert_eq!(c.scaling_factors, vec![0.5, 2.0]);
    }

    #[test]
    fn zero_spacing_is_pinpointed() {
        let err = parse(&BASIC.replace("h = 0.0625", "h = 0.0"), Path::new(".")).unwrap_err();
        assert_eq!(err.location, "params.h");
    }

    #[test]
    fn unknown_keys_report_their_line() {
        let err = parse(&BASIC.replace("lambda = 2.0", "lambda = 2.0\ncolour = 3"), Path::new(".")).unwrap_err();
        assert!(err.location.starts_with("line 12"), "{err}");
        assert!(err.message.contains("colour"), "{err}");
    }

    #[test]
    fn datum_fields_are_checked_per_kind() {
        let err = parse(&BASIC.replace("lambda = 2.0", "eps = 0.1"), Path::new(".")).unwrap_err();
        assert_eq!(err.location, "datum.eps");
        let err = parse(&BASIC.replace("lambda = 2.0", "e = [0.6]"), Path::new(".")).unwrap_err();
        assert_eq!(err.location, "datum.e");
        let err = parse(
            &BASIC
                .replace("kind = \"cone\"", "kind = \"field-file\"\npath = \"nope.field\"")
                .replace("lambda = 2.0", ""),
            Path::new("."),
        )
        .unwrap_err();
        assert_eq!(err.location, "datum.path");
        let err = parse(
            &BASIC
                .replace("experiment = \"solve\"", "experiment = \"verify-oracle\"")
                .replace("kind = \"cone\"", "kind = \"constant\"")
                .replace("lambda", "value"),
            Path::new("."),
        )
        .unwrap_err();
        assert_eq!(err.location, "datum.kind");
    }

    #[test]
    fn epiperimetric_defaults_to_the_family() {
        let text = "experiment = \"epiperimetric\"\n[params]\nn = 2\ns = 0.25\nh = 0.0625\n";
        let c = parse(text, Path::new(".")).unwrap();
        assert_eq!(c.datum, Datum::DefaultFamily);
        assert!((c.params.a - 0.5).abs() < 1e-15);
    }

    #[test]
    fn inconsistent_a_is_rejected() {
        let err = parse(&BASIC.replace("h = 0.0625", "h = 0.0625\na = 0.3"), Path::new(".")).unwrap_err();
        assert_eq!(err.location, "params.a");
    }
}
