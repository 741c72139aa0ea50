//! Experiment configuration: plain-text TOML with nested blocks, schema
//! validated before any compute, unknown keys rejected. `domain` and `time`
//! are required; every other block has documented defaults (see the README
//! schema table).

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;
use std::sync::Arc;
use thiserror::Error;

use sselab::geometry::Domain;
use sselab::inverse::{NlProfile, NonlinearityPair};
use sselab::sde::{Coefficients, SpaceFnR, SpaceTimeFnC};
use sselab::weights::{select_tau_for, CarlemanParams, WeightKit, WeightsError};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("parse error in {path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid value for `{field}`: {message}")]
    Invalid { field: &'static str, message: String },
    #[error(transparent)]
    Weights(#[from] WeightsError),
    #[error(transparent)]
    Geometry(#[from] sselab::geometry::GeometryError),
}

fn invalid(field: &'static str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { field, message: message.into() }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainBlock {
    pub dim: usize,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub x0: Vec<f64>,
    pub n: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeBlock {
    pub t_final: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McBlock {
    pub paths: usize,
    pub base_seed: u64,
}

impl Default for McBlock {
    fn default() -> Self {
        Self { paths: 500, base_seed: 42 }
    }
}

/// τ as a number or the string "auto" (resolved via select_tau).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum TauSpec {
    Fixed(f64),
    Word(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CarlemanBlock {
    pub s: Vec<f64>,
    pub lambda: Vec<f64>,
    pub tau: TauSpec,
}

impl Default for CarlemanBlock {
    fn default() -> Self {
        Self { s: vec![1.0, 2.0, 4.0], lambda: vec![0.04], tau: TauSpec::Word("auto".into()) }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CoefficientsBlock {
    pub b1: String,
    pub a2: String,
    pub a3: String,
    pub f: String,
    pub g: String,
    pub g_real: bool,
}

impl Default for CoefficientsBlock {
    fn default() -> Self {
        Self {
            b1: "zero".into(),
            a2: "zero".into(),
            a3: "zero".into(),
            f: "zero".into(),
            g: "zero".into(),
            g_real: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NonlinearityBlock {
    pub f1: String,
    pub f2: String,
}

impl Default for NonlinearityBlock {
    fn default() -> Self {
        Self { f1: "zero".into(), f2: "zero".into() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InverseBlock {
    pub alpha: f64,
    pub max_iter: usize,
}

impl Default for InverseBlock {
    fn default() -> Self {
        Self { alpha: 1e-6, max_iter: 500 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputBlock {
    pub directory: String,
    pub emit_trajectories: bool,
}

impl Default for OutputBlock {
    fn default() -> Self {
        Self { directory: "out".into(), emit_trajectories: false }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub domain: DomainBlock,
    pub time: TimeBlock,
    #[serde(default)]
    pub mc: McBlock,
    #[serde(default)]
    pub carleman: CarlemanBlock,
    #[serde(default)]
    pub coefficients: CoefficientsBlock,
    #[serde(default)]
    pub nonlinearity: NonlinearityBlock,
    #[serde(default)]
    pub inverse: InverseBlock,
    #[serde(default)]
    pub output: OutputBlock,
}

/// Parse, default, and validate a config file; unknown keys are hard errors
/// and parse errors carry the TOML line/column.
pub fn load_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
    let config: ExperimentConfig = toml::from_str(&text)
        .map_err(|e| ConfigError::Parse { path: path.display().to_string(), message: e.to_string() })?;
    config.validate()?;
    Ok(config)
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let dim = self.domain.dim;
        if !(1..=2).contains(&dim) {
            return Err(invalid("domain.dim", format!("must be 1 or 2, got {dim}")));
        }
        for (name, len) in [
            ("domain.lo", self.domain.lo.len()),
            ("domain.hi", self.domain.hi.len()),
            ("domain.x0", self.domain.x0.len()),
            ("domain.n", self.domain.n.len()),
        ] {
            if len != dim {
                return Err(ConfigError::Invalid {
                    field: match name {
                        "domain.lo" => "domain.lo",
                        "domain.hi" => "domain.hi",
                        "domain.x0" => "domain.x0",
                        _ => "domain.n",
                    },
                    message: format!("expected {dim} entries, got {len}"),
                });
            }
        }
        for &n in &self.domain.n {
            if n < 4 {
                return Err(invalid("domain.n", format!("need at least 4 cells per axis, got {n}")));
            }
        }
        if !(self.time.t_final > 0.0) {
            return Err(invalid("time.t_final", "must be positive"));
        }
        if self.time.steps < 2 {
            return Err(invalid("time.steps", "need at least 2 steps"));
        }
        if self.mc.paths < 2 {
            return Err(invalid("mc.paths", format!("need at least 2 paths, got {}", self.mc.paths)));
        }
        if self.carleman.s.is_empty() || self.carleman.s.iter().any(|&s| !(s > 0.0)) {
            return Err(invalid("carleman.s", "must be a non-empty list of positive reals"));
        }
        if self.carleman.lambda.is_empty() || self.carleman.lambda.iter().any(|&l| !(l > 0.0)) {
            return Err(invalid("carleman.lambda", "must be a non-empty list of positive reals"));
        }
        match &self.carleman.tau {
            TauSpec::Fixed(v) if !(*v > 0.0) => {
                return Err(invalid("carleman.tau", "must be positive or \"auto\""));
            }
            TauSpec::Word(w) if w != "auto" => {
                return Err(invalid("carleman.tau", format!("unknown keyword {w:?}, only \"auto\"")));
            }
            _ => {}
        }
        if !(self.inverse.alpha > 0.0) {
            return Err(invalid("inverse.alpha", "must be positive"));
        }
        if self.inverse.max_iter == 0 {
            return Err(invalid("inverse.max_iter", "must be at least 1"));
        }
        // profiles parse, dimension-independent
        parse_real_profile(&self.coefficients.b1, "coefficients.b1")?;
        parse_complex_profile(&self.coefficients.a2, "coefficients.a2")?;
        parse_real_profile(&self.coefficients.a3, "coefficients.a3")?;
        let fprof = parse_source_profile(&self.coefficients.f, "coefficients.f")?;
        if matches!(fprof, SourceProfile::CosMode { .. }) {
            return Err(invalid("coefficients.f", "f must vanish on Γ; cosmode is not admissible"));
        }
        let gprof = parse_source_profile(&self.coefficients.g, "coefficients.g")?;
        if self.coefficients.g_real && gprof.has_imaginary_part() {
            return Err(invalid(
                "coefficients.g_real",
                "g_real = true but the g profile has a nonzero imaginary part",
            ));
        }
        parse_nl_profile(&self.nonlinearity.f1, "nonlinearity.f1")?;
        parse_nl_profile(&self.nonlinearity.f2, "nonlinearity.f2")?;
        // geometry and weight caps (validated for every (s, λ) pair)
        let domain = self.build_domain()?;
        let tau = self.resolve_tau(&domain);
        for &s in &self.carleman.s {
            for &lambda in &self.carleman.lambda {
                WeightKit::new(
                    CarlemanParams { s, lambda, tau, t_final: self.time.t_final },
                    &domain,
                )?;
            }
        }
        Ok(())
    }

    pub fn build_domain(&self) -> Result<Domain, ConfigError> {
        Ok(Domain::new(self.domain.lo.clone(), self.domain.hi.clone(), self.domain.x0.clone())?)
    }

    pub fn resolve_tau(&self, domain: &Domain) -> f64 {
        match &self.carleman.tau {
            TauSpec::Fixed(v) => *v,
            TauSpec::Word(_) => select_tau_for(domain),
        }
    }

    pub fn kit(&self, domain: &Domain, s: f64, lambda: f64) -> Result<WeightKit, ConfigError> {
        let tau = self.resolve_tau(domain);
        Ok(WeightKit::new(CarlemanParams { s, lambda, tau, t_final: self.time.t_final }, domain)?)
    }

    pub fn coefficients(&self, domain: &Domain) -> Result<Coefficients, ConfigError> {
        build_coefficients(&self.coefficients, domain)
    }

    pub fn nonlinearity(&self) -> Result<NonlinearityPair, ConfigError> {
        Ok(NonlinearityPair {
            f1: parse_nl_profile(&self.nonlinearity.f1, "nonlinearity.f1")?,
            f2: parse_nl_profile(&self.nonlinearity.f2, "nonlinearity.f2")?,
        })
    }

    /// Stable hash of the canonicalized (defaulted, re-serialized) config.
    pub fn fingerprint(&self) -> String {
        let canonical = toml::to_string(self).expect("config serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

// ---------------------------------------------------------------------------
// coefficient profiles
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
enum RealProfile {
    Zero,
    Const(f64),
    /// amp · Π_d sin(π x̂_d) — vanishes on Γ.
    Bump(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum ComplexProfile {
    Zero,
    Const(Complex64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum SourceProfile {
    Zero,
    /// (re + i·im) · Π_d sin(kπ x̂_d) — vanishes on Γ.
    Mode { k: usize, value: Complex64 },
    /// (re + i·im) · Π_d cos(kπ x̂_d) — does not vanish on Γ (g only).
    CosMode { k: usize, value: Complex64 },
}

impl SourceProfile {
    fn has_imaginary_part(&self) -> bool {
        match self {
            SourceProfile::Zero => false,
            SourceProfile::Mode { value, .. } | SourceProfile::CosMode { value, .. } => {
                value.im != 0.0
            }
        }
    }
}

fn split_params<'a>(
    spec: &'a str,
    field: &'static str,
    expected: usize,
) -> Result<Vec<&'a str>, ConfigError> {
    let parts: Vec<&str> = spec.split(',').map(str::trim).collect();
    if parts.len() != expected {
        return Err(invalid(field, format!("expected {expected} comma-separated parameters in {spec:?}")));
    }
    Ok(parts)
}

fn parse_f64(s: &str, field: &'static str) -> Result<f64, ConfigError> {
    s.parse::<f64>().map_err(|_| invalid(field, format!("not a number: {s:?}")))
}

fn parse_real_profile(spec: &str, field: &'static str) -> Result<RealProfile, ConfigError> {
    let (name, rest) = spec.split_once(':').unwrap_or((spec, ""));
    match name {
        "zero" => Ok(RealProfile::Zero),
        "const" => Ok(RealProfile::Const(parse_f64(rest, field)?)),
        "bump" => Ok(RealProfile::Bump(parse_f64(rest, field)?)),
        other => Err(invalid(field, format!("unknown profile {other:?} (zero | const:v | bump:amp)"))),
    }
}

fn parse_complex_profile(spec: &str, field: &'static str) -> Result<ComplexProfile, ConfigError> {
    let (name, rest) = spec.split_once(':').unwrap_or((spec, ""));
    match name {
        "zero" => Ok(ComplexProfile::Zero),
        "const" => {
            let p = split_params(rest, field, 2)?;
            Ok(ComplexProfile::Const(Complex64::new(
                parse_f64(p[0], field)?,
                parse_f64(p[1], field)?,
            )))
        }
        other => Err(invalid(field, format!("unknown profile {other:?} (zero | const:re,im)"))),
    }
}

fn parse_source_profile(spec: &str, field: &'static str) -> Result<SourceProfile, ConfigError> {
    let (name, rest) = spec.split_once(':').unwrap_or((spec, ""));
    match name {
        "zero" => Ok(SourceProfile::Zero),
        "mode" | "cosmode" => {
            let p = split_params(rest, field, 3)?;
            let k = p[0]
                .parse::<usize>()
                .map_err(|_| invalid(field, format!("mode index not an integer: {:?}", p[0])))?;
            if k == 0 {
                return Err(invalid(field, "mode index must be at least 1"));
            }
            let value = Complex64::new(parse_f64(p[1], field)?, parse_f64(p[2], field)?);
            if name == "mode" {
                Ok(SourceProfile::Mode { k, value })
            } else {
                Ok(SourceProfile::CosMode { k, value })
            }
        }
        other => Err(invalid(
            field,
            format!("unknown profile {other:?} (zero | mode:k,re,im | cosmode:k,re,im)"),
        )),
    }
}

fn parse_nl_profile(spec: &str, field: &'static str) -> Result<NlProfile, ConfigError> {
    let (name, rest) = spec.split_once(':').unwrap_or((spec, ""));
    match name {
        "zero" => Ok(NlProfile::Zero),
        "linear" => Ok(NlProfile::Linear { c: parse_f64(rest, field)? }),
        "sat" => Ok(NlProfile::Sat { c: parse_f64(rest, field)? }),
        other => Err(invalid(field, format!("unknown profile {other:?} (zero | linear:c | sat:c)"))),
    }
}

fn hat(domain: &Domain, d: usize, x: f64) -> f64 {
    (x - domain.lo()[d]) / (domain.hi()[d] - domain.lo()[d])
}

fn build_coefficients(block: &CoefficientsBlock, domain: &Domain) -> Result<Coefficients, ConfigError> {
    use std::f64::consts::PI;
    let dim = domain.dim();
    let mut coeffs = Coefficients::zero(dim);

    match parse_real_profile(&block.b1, "coefficients.b1")? {
        RealProfile::Zero => {}
        RealProfile::Const(v) if v == 0.0 => {}
        RealProfile::Const(_) => {
            return Err(invalid("coefficients.b1", "b1 must vanish on Γ; use zero or bump:amp"));
        }
        RealProfile::Bump(amp) => {
            let dom = domain.clone();
            let comps: Vec<SpaceFnR> = (0..dim)
                .map(|_| {
                    let dom = dom.clone();
                    Arc::new(move |x: &[f64]| {
                        amp * (0..dom.dim())
                            .map(|d| (PI * hat(&dom, d, x[d])).sin())
                            .product::<f64>()
                    }) as SpaceFnR
                })
                .collect();
            coeffs = coeffs.with_b1(comps);
        }
    }

    match parse_complex_profile(&block.a2, "coefficients.a2")? {
        ComplexProfile::Zero => {}
        ComplexProfile::Const(v) => {
            coeffs = coeffs.with_a2(Arc::new(move |_| v));
        }
    }

    match parse_real_profile(&block.a3, "coefficients.a3")? {
        RealProfile::Zero => {}
        RealProfile::Const(v) => {
            coeffs = coeffs.with_a3(Arc::new(move |_| v));
        }
        RealProfile::Bump(amp) => {
            let dom = domain.clone();
            coeffs = coeffs.with_a3(Arc::new(move |x: &[f64]| {
                amp * (0..dom.dim()).map(|d| (PI * hat(&dom, d, x[d])).sin()).product::<f64>()
            }));
        }
    }

    let source_fn = |profile: SourceProfile, dom: Domain| -> Option<SpaceTimeFnC> {
        match profile {
            SourceProfile::Zero => None,
            SourceProfile::Mode { k, value } => Some(Arc::new(move |_t, x: &[f64]| {
                value
                    * (0..dom.dim())
                        .map(|d| (k as f64 * PI * hat(&dom, d, x[d])).sin())
                        .product::<f64>()
            })),
            SourceProfile::CosMode { k, value } => Some(Arc::new(move |_t, x: &[f64]| {
                value
                    * (0..dom.dim())
                        .map(|d| (k as f64 * PI * hat(&dom, d, x[d])).cos())
                        .product::<f64>()
            })),
        }
    };

    if let Some(f) = source_fn(parse_source_profile(&block.f, "coefficients.f")?, domain.clone()) {
        coeffs = coeffs.with_f(f);
    }
    if let Some(g) = source_fn(parse_source_profile(&block.g, "coefficients.g")?, domain.clone()) {
        coeffs = coeffs.with_g(g, block.g_real);
    }
    Ok(coeffs)
}
