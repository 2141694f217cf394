//! INI problem configuration.
//!
//! ```ini
//! seed = 0
//! [grid]        n = 16 | n = 16, 24 ; dim ; length
//! [kernel]      family = gaussian | newtonian ; sigma ; r0 ; amplitude
//! [potential]   theta ; guard
//! [state]       dt ; steps ; newton_tol ; newton_max ; phi0 = random | <file> ; phi0_mean ; phi0_amplitude
//! [control]     vmin ; vmax ; initial = zero | random ; initial_amplitude ; reference_amplitude
//! [targets]     source = synthetic | files ; manifest ; gamma = g1, g2, g3
//! [optimizer]   step0 ; armijo_c ; shrink ; max_iter ; max_backtracks ; tol ; projection_tol ; projection_max_iter
//! [output]      dir
//! ```

use ini::{Ini, Properties};
use nlch_core::optimizer::{PgdOptions, ProjectionOptions};
use nlch_core::potential::{PotentialParams, DEFAULT_THETA, EVAL_GUARD};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("config syntax: {0}")]
    Syntax(String),
    #[error("unknown section [{0}]")]
    UnknownSection(String),
    #[error("unknown key [{section}] {key}")]
    UnknownKey { section: String, key: String },
    #[error("missing required key [{section}] {key}")]
    MissingKey { section: String, key: String },
    #[error("invalid value for [{section}] {key} = {value}: {reason}")]
    Invalid {
        section: String,
        key: String,
        value: String,
        reason: String,
    },
    #[error("[{section}] {key} = {value} out of range, expected {bounds}")]
    OutOfRange {
        section: String,
        key: String,
        value: String,
        bounds: String,
    },
    #[error("C3 violated: not all zero required (gamma = {0:?})")]
    Gamma([f64; 3]),
    #[error("control bounds: vmin > vmax on component {component} ({vmin} > {vmax})")]
    BoundsOrder { component: usize, vmin: f64, vmax: f64 },
    #[error("control bounds on component {component} exclude zero ({vmin}, {vmax})")]
    BoundsExcludeZero { component: usize, vmin: f64, vmax: f64 },
    #[error("referenced file does not exist: {0}")]
    MissingFile(PathBuf),
}

type Result<T> = std::result::Result<T, ConfigError>;

#[derive(Clone, Debug, PartialEq)]
pub struct GridSpec {
    pub dim: usize,
    pub n: Vec<usize>,
    pub length: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum KernelChoice {
    /// `sigma = None` means `4 max h`; `amplitude = None` means unit mass.
    Gaussian { sigma: Option<f64>, amplitude: Option<f64> },
    /// `r0 = None` means `2 max h`.
    Newtonian { r0: Option<f64>, amplitude: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub enum InitialState {
    Random { mean: f64, amplitude: f64 },
    File(PathBuf),
}

#[derive(Clone, Debug, PartialEq)]
pub struct StateConfig {
    pub dt: f64,
    pub steps: usize,
    pub newton_tol: f64,
    pub newton_max: usize,
    pub phi0: InitialState,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum InitialControl {
    Zero,
    Random { amplitude: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ControlConfig {
    pub vmin: Vec<f64>,
    pub vmax: Vec<f64>,
    pub initial: InitialControl,
    pub reference_amplitude: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum TargetSource {
    /// Targets from a reference run with a random admissible control.
    Synthetic,
    Files(PathBuf),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TargetConfig {
    pub source: TargetSource,
    pub gamma: [f64; 3],
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerConfig {
    pub pgd: PgdOptions,
    pub projection: ProjectionOptions,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProblemConfig {
    pub seed: u64,
    pub grid: GridSpec,
    pub kernel: KernelChoice,
    pub potential: PotentialParams,
    pub state: StateConfig,
    pub control: ControlConfig,
    pub targets: TargetConfig,
    pub optimizer: OptimizerConfig,
    pub output_dir: PathBuf,
}

const SECTIONS: &[(&str, &[&str])] = &[
    ("grid", &["n", "dim", "length"]),
    ("kernel", &["family", "sigma", "r0", "amplitude"]),
    ("potential", &["theta", "guard"]),
    (
        "state",
        &["dt", "steps", "newton_tol", "newton_max", "phi0", "phi0_mean", "phi0_amplitude"],
    ),
    (
        "control",
        &["vmin", "vmax", "initial", "initial_amplitude", "reference_amplitude"],
    ),
    ("targets", &["source", "manifest", "gamma"]),
    (
        "optimizer",
        &[
            "step0",
            "armijo_c",
            "shrink",
            "max_iter",
            "max_backtracks",
            "tol",
            "projection_tol",
            "projection_max_iter",
        ],
    ),
    ("output", &["dir"]),
];

struct Section<'a> {
    name: &'static str,
    props: Option<&'a Properties>,
}

impl<'a> Section<'a> {
    fn raw(&self, key: &str) -> Option<&'a str> {
        self.props.and_then(|p| p.get(key)).map(str::trim)
    }

    fn invalid(&self, key: &str, value: &str, reason: impl ToString) -> ConfigError {
        ConfigError::Invalid {
            section: self.name.into(),
            key: key.into(),
            value: value.into(),
            reason: reason.to_string(),
        }
    }

    fn range(&self, key: &str, value: impl ToString, bounds: &str) -> ConfigError {
        ConfigError::OutOfRange {
            section: self.name.into(),
            key: key.into(),
            value: value.to_string(),
            bounds: bounds.into(),
        }
    }

    fn parse<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.raw(key)
            .map(|s| s.parse::<T>().map_err(|e| self.invalid(key, s, e)))
            .transpose()
    }

    fn list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: std::fmt::Display,
    {
        self.raw(key)
            .map(|s| {
                s.split(',')
                    .map(|x| x.trim().parse::<T>().map_err(|e| self.invalid(key, s, e)))
                    .collect()
            })
            .transpose()
    }

    /// Real in `(lo, hi)` or `[lo, hi]` depending on `closed`.
    fn real(&self, key: &str, default: f64, lo: f64, hi: f64, closed: bool) -> Result<f64> {
        let x = self.parse::<f64>(key)?.unwrap_or(default);
        let ok = if closed {
            x >= lo && x <= hi
        } else {
            x > lo && x < hi
        };
        if !ok {
            let bounds = if closed {
                format!("[{lo:e}, {hi:e}]")
            } else {
                format!("({lo:e}, {hi:e})")
            };
            return Err(self.range(key, x, &bounds));
        }
        Ok(x)
    }

    fn count(&self, key: &str, default: usize, min: usize) -> Result<usize> {
        let x = self.parse::<usize>(key)?.unwrap_or(default);
        if x < min {
            return Err(self.range(key, x, &format!(">= {min}")));
        }
        Ok(x)
    }
}

fn resolve(base: Option<&Path>, p: &str) -> PathBuf {
    let p = PathBuf::from(p);
    match base {
        Some(b) if p.is_relative() => b.join(p),
        _ => p,
    }
}

fn broadcast(values: Vec<f64>, dim: usize, s: &Section, key: &str) -> Result<Vec<f64>> {
    match values.len() {
        1 => Ok(vec![values[0]; dim]),
        n if n == dim => Ok(values),
        n => Err(s.invalid(key, s.raw(key).unwrap_or(""), format!("expected 1 or {dim} entries, got {n}"))),
    }
}

/// Parses and validates a configuration. Relative paths are resolved
/// against `base` (the directory of the config file).
pub fn parse_config(text: &str, base: Option<&Path>) -> Result<ProblemConfig> {
    let ini = Ini::load_from_str(text).map_err(|e| ConfigError::Syntax(e.to_string()))?;
    for (name, props) in ini.iter() {
        let Some(name) = name else {
            if let Some(k) = props.iter().map(|(k, _)| k).find(|k| *k != "seed") {
                return Err(ConfigError::UnknownKey {
                    section: String::new(),
                    key: k.into(),
                });
            }
            continue;
        };
        let Some((_, keys)) = SECTIONS.iter().find(|(s, _)| *s == name) else {
            return Err(ConfigError::UnknownSection(name.into()));
        };
        if let Some(k) = props.iter().map(|(k, _)| k).find(|k| !keys.contains(k)) {
            return Err(ConfigError::UnknownKey {
                section: name.into(),
                key: k.into(),
            });
        }
    }
    let section = |name: &'static str| Section {
        name,
        props: ini.section(Some(name)),
    };
    let general = Section {
        name: "",
        props: Some(ini.general_section()),
    };
    let seed = general.parse::<u64>("seed")?.unwrap_or(0);

    let s = section("grid");
    let n: Vec<usize> = s.list("n")?.ok_or(ConfigError::MissingKey {
        section: "grid".into(),
        key: "n".into(),
    })?;
    let dim = s.parse::<usize>("dim")?.unwrap_or(if n.len() > 1 { n.len() } else { 2 });
    if dim != 2 && dim != 3 {
        return Err(s.range("dim", dim, "2 or 3"));
    }
    let n = match n.len() {
        1 => vec![n[0]; dim],
        k if k == dim => n,
        k => return Err(s.invalid("n", s.raw("n").unwrap(), format!("expected 1 or {dim} entries, got {k}"))),
    };
    if let Some(&bad) = n.iter().find(|&&x| x < 4) {
        return Err(s.range("n", bad, ">= 4 per axis"));
    }
    let length = broadcast(s.list::<f64>("length")?.unwrap_or(vec![1.0]), dim, &s, "length")?;
    if let Some(&bad) = length.iter().find(|&&x| !(x > 0.0 && x.is_finite())) {
        return Err(s.range("length", bad, "(0, inf)"));
    }
    let grid = GridSpec { dim, n, length };

    let s = section("kernel");
    let family = s.raw("family").unwrap_or("gaussian");
    let positive = |key: &str| -> Result<Option<f64>> {
        match s.parse::<f64>(key)? {
            Some(x) if !(x > 0.0 && x.is_finite()) => Err(s.range(key, x, "(0, inf)")),
            other => Ok(other),
        }
    };
    let kernel = match family {
        "gaussian" => KernelChoice::Gaussian {
            sigma: positive("sigma")?,
            amplitude: positive("amplitude")?,
        },
        "newtonian" => KernelChoice::Newtonian {
            r0: positive("r0")?,
            amplitude: positive("amplitude")?.unwrap_or(1.0),
        },
        other => return Err(s.invalid("family", other, "expected gaussian or newtonian")),
    };

    let s = section("potential");
    let theta = s.real("theta", DEFAULT_THETA, 0.0, f64::INFINITY, false)?;
    let guard = s.parse::<f64>("guard")?.unwrap_or(EVAL_GUARD);
    if !(guard > 0.0 && guard <= 1e-2) {
        return Err(s.range("guard", guard, "(0, 1e-2]"));
    }
    let potential = PotentialParams::new(theta, guard).map_err(|e| s.invalid("theta", &theta.to_string(), e))?;

    let s = section("state");
    let dt = s.real("dt", 1e-3, 0.0, f64::INFINITY, false)?;
    let steps = s.count("steps", 20, 0)?;
    let newton_tol = s.real("newton_tol", 1e-10, 0.0, 1.0, false)?;
    let newton_max = s.count("newton_max", 50, 1)?;
    let phi0 = match s.raw("phi0").unwrap_or("random") {
        "random" => {
            let mean = s.real("phi0_mean", 0.0, -1.0, 1.0, false)?;
            let amplitude = s.real("phi0_amplitude", 0.6, 0.0, 1.0, true)?;
            if mean.abs() + amplitude >= 1.0 {
                return Err(s.range("phi0_amplitude", amplitude, "|phi0_mean| + phi0_amplitude < 1"));
            }
            InitialState::Random { mean, amplitude }
        }
        file => {
            let p = resolve(base, file);
            if !p.is_file() {
                return Err(ConfigError::MissingFile(p));
            }
            InitialState::File(p)
        }
    };
    let state = StateConfig {
        dt,
        steps,
        newton_tol,
        newton_max,
        phi0,
    };

    let s = section("control");
    let vmin = broadcast(s.list::<f64>("vmin")?.unwrap_or(vec![-1.0]), dim, &s, "vmin")?;
    let vmax = broadcast(s.list::<f64>("vmax")?.unwrap_or(vec![1.0]), dim, &s, "vmax")?;
    for (component, (&lo, &hi)) in vmin.iter().zip(&vmax).enumerate() {
        if !(lo.is_finite() && hi.is_finite()) {
            return Err(s.range("vmin", lo, "finite bounds"));
        }
        if lo > hi {
            return Err(ConfigError::BoundsOrder { component, vmin: lo, vmax: hi });
        }
        if lo > 0.0 || hi < 0.0 {
            return Err(ConfigError::BoundsExcludeZero { component, vmin: lo, vmax: hi });
        }
    }
    let initial = match s.raw("initial").unwrap_or("zero") {
        "zero" => InitialControl::Zero,
        "random" => InitialControl::Random {
            amplitude: s.real("initial_amplitude", 0.5, 0.0, f64::INFINITY, false)?,
        },
        other => return Err(s.invalid("initial", other, "expected zero or random")),
    };
    let reference_amplitude = s.real("reference_amplitude", 0.5, 0.0, f64::INFINITY, false)?;
    let control = ControlConfig {
        vmin,
        vmax,
        initial,
        reference_amplitude,
    };

    let s = section("targets");
    let gamma_list = s.list::<f64>("gamma")?.unwrap_or(vec![1.0, 1.0, 1e-4]);
    if gamma_list.len() != 3 {
        return Err(s.invalid("gamma", s.raw("gamma").unwrap(), "expected three weights"));
    }
    let gamma = [gamma_list[0], gamma_list[1], gamma_list[2]];
    if let Some(&bad) = gamma.iter().find(|g| !(**g >= 0.0 && g.is_finite())) {
        return Err(s.range("gamma", bad, "[0, inf) per weight"));
    }
    if gamma.iter().all(|&g| g == 0.0) {
        return Err(ConfigError::Gamma(gamma));
    }
    let source = match s.raw("source").unwrap_or("synthetic") {
        "synthetic" => TargetSource::Synthetic,
        "files" => {
            let m = s.raw("manifest").ok_or(ConfigError::MissingKey {
                section: "targets".into(),
                key: "manifest".into(),
            })?;
            let p = resolve(base, m);
            check_manifest(&p)?;
            TargetSource::Files(p)
        }
        other => return Err(s.invalid("source", other, "expected synthetic or files")),
    };
    let targets = TargetConfig { source, gamma };

    let s = section("optimizer");
    let d = PgdOptions::default();
    let p = ProjectionOptions::default();
    let optimizer = OptimizerConfig {
        pgd: PgdOptions {
            step0: s.real("step0", d.step0, 0.0, f64::INFINITY, false)?,
            armijo_c: s.real("armijo_c", d.armijo_c, 0.0, 1.0, false)?,
            shrink: s.real("shrink", d.shrink, 0.0, 1.0, false)?,
            max_iter: s.count("max_iter", d.max_iter, 0)?,
            max_backtracks: s.count("max_backtracks", d.max_backtracks, 1)?,
            tol: s.real("tol", d.tol, 0.0, f64::INFINITY, false)?,
        },
        projection: ProjectionOptions {
            tol: s.real("projection_tol", p.tol, 0.0, 1.0, false)?,
            max_iter: s.count("projection_max_iter", p.max_iter, 1)?,
        },
    };

    let output_dir = PathBuf::from(section("output").raw("dir").unwrap_or("out"));

    Ok(ProblemConfig {
        seed,
        grid,
        kernel,
        potential,
        state,
        control,
        targets,
        optimizer,
        output_dir,
    })
}

/// Checks that a target manifest and every file it names exist.
fn check_manifest(path: &Path) -> Result<()> {
    if !path.is_file() {
        return Err(ConfigError::MissingFile(path.into()));
    }
    let files = crate::io::manifest_files(path).map_err(|e| ConfigError::Invalid {
        section: "targets".into(),
        key: "manifest".into(),
        value: path.display().to_string(),
        reason: e.to_string(),
    })?;
    match files.into_iter().find(|f| !f.is_file()) {
        Some(missing) => Err(ConfigError::MissingFile(missing)),
        None => Ok(()),
    }
}

pub fn load_config(path: &Path) -> anyhow::Result<ProblemConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| anyhow::anyhow!("cannot read config {}: {e}", path.display()))?;
    Ok(parse_config(&text, path.parent())?)
}
