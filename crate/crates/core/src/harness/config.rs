//! Experiment configuration: TOML (dotted keys allowed) or JSON.

use crate::dynamics::{FlowSpec, Forcing, IntegratorConfig};
use crate::error::{Error, Result};
use crate::kernel::KernelSpec;
use crate::meanfield::GridGeometry;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kernel: KernelConfig,
    #[serde(default)]
    pub flow: FlowConfig,
    pub init: InitConfig,
    #[serde(rename = "N_list")]
    pub n_list: Vec<usize>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    pub time: TimeConfig,
    #[serde(default)]
    pub pde: PdeConfig,
    #[serde(default)]
    pub diagnostics: DiagnosticsConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gap: Option<GapConfig>,
    /// Hash recorded in a written `config.json`; checked on load, never hashed.
    #[serde(default, skip_serializing)]
    pub config_hash: Option<String>,
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

/// `s` is a number or the string `"log"`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Exponent {
    Value(f64),
    Name(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    pub d: usize,
    pub s: Exponent,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowName {
    Gradient,
    Conservative,
    Mixed,
    Newton,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ForcingName {
    #[default]
    Zero,
    ConstantDrift,
    LinearConfinement,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ForcingConfig {
    #[serde(default)]
    pub kind: ForcingName,
    #[serde(default)]
    pub drift: Vec<f64>,
    #[serde(default)]
    pub lambda: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowConfig {
    pub kind: FlowName,
    #[serde(default = "one")]
    pub mix_alpha: f64,
    #[serde(default)]
    pub mix_beta: f64,
    /// Row-major antisymmetric matrix; the standard rotation when absent.
    #[serde(rename = "J", default, skip_serializing_if = "Option::is_none")]
    pub j: Option<Vec<f64>>,
    #[serde(default)]
    pub forcing: ForcingConfig,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            kind: FlowName::Gradient,
            mix_alpha: 1.0,
            mix_beta: 0.0,
            j: None,
            forcing: ForcingConfig::default(),
        }
    }
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitFamily {
    ExpandingBall,
    Barenblatt,
    RadialVortexPatch,
    UniformBallStatic,
    /// `(1 - |x - c|^2 / R0^2)_+^p`, not an exact solution in general.
    RadialProfile,
    /// Normalized Gaussian of standard deviation `width`, cut off by the box.
    Gaussian,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    Iid,
    #[default]
    Quantized,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum VelocityName {
    #[default]
    Zero,
    /// `u(x) = strength (x - c)`
    Linear,
    /// `u(x) = strength J (x - c)`, d = 2
    Rotation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct VelocityConfig {
    #[serde(default)]
    pub name: VelocityName,
    #[serde(default)]
    pub strength: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitConfig {
    pub family: InitFamily,
    #[serde(default)]
    pub sampling: Sampling,
    #[serde(rename = "R0", default = "half")]
    pub r0: f64,
    #[serde(default)]
    pub p: f64,
    #[serde(default = "fifth")]
    pub width: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center: Option<Vec<f64>>,
    #[serde(default)]
    pub u0: VelocityConfig,
}

fn half() -> f64 {
    0.5
}

fn fifth() -> f64 {
    0.2
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeConfig {
    #[serde(rename = "T")]
    pub t_end: f64,
    pub dt: f64,
    #[serde(default)]
    pub adaptive: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceChoice {
    /// Closed form when the family matches the flow, otherwise the grid.
    #[default]
    Auto,
    Exact,
    Grid,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PdeConfig {
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(rename = "L", default = "default_l")]
    pub half_width: f64,
    #[serde(default = "default_cfl")]
    pub cfl: f64,
    #[serde(default)]
    pub reference: ReferenceChoice,
    /// Coupling of stand-alone PDE solves (`pde-solve`, `gap`). References
    /// paired with particles always use 2.
    #[serde(default = "one")]
    pub coupling: f64,
    /// Radial shells of the Lagrangian Euler-Poisson reference.
    #[serde(default = "default_shells")]
    pub shells: usize,
}

fn default_n() -> usize {
    128
}

fn default_l() -> f64 {
    2.0
}

fn default_cfl() -> f64 {
    0.4
}

fn default_shells() -> usize {
    2000
}

impl Default for PdeConfig {
    fn default() -> Self {
        Self {
            n: default_n(),
            half_width: default_l(),
            cfl: default_cfl(),
            reference: ReferenceChoice::Auto,
            coupling: 1.0,
            shells: default_shells(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsConfig {
    /// Sample every this many integrator steps (and at the end).
    #[serde(default = "one_usize")]
    pub every: usize,
    #[serde(default = "yes")]
    pub truncated: bool,
    #[serde(default)]
    pub bl: bool,
    #[serde(default = "yes")]
    pub kinetic: bool,
}

fn one_usize() -> usize {
    1
}

fn yes() -> bool {
    true
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        Self {
            every: 1,
            truncated: true,
            bl: false,
            kinetic: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_dir")]
    pub dir: String,
}

fn default_dir() -> String {
    "out".into()
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: default_dir() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GapMode {
    #[default]
    Dissipative,
    EulerPoisson,
}

/// The second density of a gap run is the first one shifted by `offset`
/// with its width scaled by `width_scale`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GapConfig {
    #[serde(default)]
    pub mode: GapMode,
    #[serde(default)]
    pub offset: Vec<f64>,
    #[serde(default = "one")]
    pub width_scale: f64,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let de = toml::Deserializer::new(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| Error::config(path_or_root(e.path()), e.inner().message().trim()))?;
        cfg.checked()
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let mut de = serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(&mut de).map_err(|e| Error::config(path_or_root(e.path()), e.inner().to_string()))?;
        cfg.checked()
    }

    /// Reads `.json` as JSON and anything else as TOML.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::config(path.display().to_string(), e.to_string()))?;
        if path.extension().is_some_and(|e| e == "json") {
            Self::from_json_str(&text)
        } else {
            Self::from_toml_str(&text)
        }
    }

    fn checked(mut self) -> Result<Self> {
        self.validate()?;
        if let Some(h) = self.config_hash.take() {
            if h != self.hash() {
                return Err(Error::config("config_hash", "does not match the config contents"));
            }
        }
        Ok(self)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// JSON form with its own hash under `config_hash`; loads back unchanged.
    pub fn to_json_with_hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        v.as_object_mut()
            .expect("config is an object")
            .insert("config_hash".into(), self.hash().into());
        serde_json::to_string_pretty(&v).expect("value serializes")
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let canon = serde_json::to_string(&serde_json::to_value(self).expect("config serializes")).expect("value serializes");
        let digest = Sha256::digest(canon.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn kernel_spec(&self) -> Result<KernelSpec> {
        let d = self.kernel.d;
        match &self.kernel.s {
            Exponent::Name(n) if n.eq_ignore_ascii_case("log") => KernelSpec::log(d).map_err(|e| Error::config("kernel.s", msg(e))),
            Exponent::Name(n) => Err(Error::config("kernel.s", format!("expected a number or \"log\", got {n:?}"))),
            Exponent::Value(s) => KernelSpec::riesz(d, *s).map_err(|e| Error::config("kernel.s", msg(e))),
        }
    }

    pub fn flow_spec(&self) -> Result<FlowSpec> {
        let d = self.kernel.d;
        let f = &self.flow;
        let mut flow = match f.kind {
            FlowName::Gradient => FlowSpec::gradient(d),
            FlowName::Conservative => FlowSpec::conservative(d),
            FlowName::Mixed => FlowSpec::mixed(d, f.mix_alpha, f.mix_beta).map_err(|e| Error::config("flow.mix_alpha", msg(e)))?,
            FlowName::Newton => FlowSpec::newton(d),
        };
        if let Some(j) = &f.j {
            flow = flow.with_j(j.clone()).map_err(|e| Error::config("flow.J", msg(e)))?;
        }
        let forcing = match f.forcing.kind {
            ForcingName::Zero => Forcing::Zero,
            ForcingName::ConstantDrift => {
                if f.forcing.drift.len() != d {
                    return Err(Error::config("flow.forcing.drift", format!("expected {d} components")));
                }
                Forcing::ConstantDrift(f.forcing.drift.clone())
            }
            ForcingName::LinearConfinement => Forcing::LinearConfinement(f.forcing.lambda),
        };
        flow.with_forcing(forcing).map_err(|e| Error::config("flow.forcing", msg(e)))
    }

    pub fn integrator(&self) -> IntegratorConfig {
        if self.time.adaptive {
            IntegratorConfig::adaptive(self.time.dt)
        } else {
            IntegratorConfig::fixed(self.time.dt)
        }
    }

    pub fn geometry(&self) -> Result<GridGeometry> {
        GridGeometry::new(self.kernel.d, self.pde.n, self.pde.half_width).map_err(|e| Error::config("pde", msg(e)))
    }

    pub fn center(&self) -> Vec<f64> {
        self.init.center.clone().unwrap_or_else(|| vec![0.0; self.kernel.d])
    }

    /// Checks every field and reports the first offending path.
    pub fn validate(&self) -> Result<()> {
        let d = self.kernel.d;
        if !(1..=3).contains(&d) {
            return Err(Error::config("kernel.d", "supported dimensions are 1, 2 and 3"));
        }
        let spec = self.kernel_spec()?;
        self.flow_spec()?;
        if self.n_list.is_empty() {
            return Err(Error::config("N_list", "must not be empty"));
        }
        if let Some(k) = self.n_list.iter().position(|&n| n == 0) {
            return Err(Error::config(format!("N_list[{k}]"), "N must be positive"));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "must not be empty"));
        }
        if !(self.time.t_end > 0.0 && self.time.t_end.is_finite()) {
            return Err(Error::config("time.T", "must be positive"));
        }
        if !(self.time.dt > 0.0 && self.time.dt <= self.time.t_end) {
            return Err(Error::config("time.dt", "must lie in (0, T]"));
        }
        if self.pde.n < 4 {
            return Err(Error::config("pde.n", "need at least 4 cells per axis"));
        }
        if !(self.pde.half_width > 0.0) {
            return Err(Error::config("pde.L", "must be positive"));
        }
        if !(self.pde.cfl > 0.0 && self.pde.cfl <= 0.5) {
            return Err(Error::config("pde.cfl", "must lie in (0, 0.5]"));
        }
        if !(self.pde.coupling > 0.0) {
            return Err(Error::config("pde.coupling", "must be positive"));
        }
        if self.pde.shells < 8 {
            return Err(Error::config("pde.shells", "need at least 8 shells"));
        }
        if self.diagnostics.every == 0 {
            return Err(Error::config("diagnostics.every", "must be at least 1"));
        }
        let init = &self.init;
        if !(init.r0 > 0.0) {
            return Err(Error::config("init.R0", "must be positive"));
        }
        if !(init.p >= 0.0) {
            return Err(Error::config("init.p", "must be nonnegative"));
        }
        if !(init.width > 0.0) {
            return Err(Error::config("init.width", "must be positive"));
        }
        if let Some(c) = &init.center {
            if c.len() != d {
                return Err(Error::config("init.center", format!("expected {d} components")));
            }
        }
        if init.u0.name == VelocityName::Rotation && d != 2 {
            return Err(Error::config("init.u0.name", "rotation needs d = 2"));
        }
        if let Some(f) = self.exact_family() {
            crate::meanfield::ExactSolution::new(f, spec, init.r0, init.p).map_err(|e| Error::config("init.family", msg(e)))?;
        }
        if self.pde.reference == ReferenceChoice::Exact && !self.exact_reference_available() {
            return Err(Error::config("pde.reference", "no closed-form solution for this family and flow"));
        }
        if let Some(g) = &self.gap {
            if !g.offset.is_empty() && g.offset.len() != d {
                return Err(Error::config("gap.offset", format!("expected {d} components")));
            }
            if !(g.width_scale > 0.0) {
                return Err(Error::config("gap.width_scale", "must be positive"));
            }
        }
        Ok(())
    }

    pub fn exact_family(&self) -> Option<crate::meanfield::Family> {
        use crate::meanfield::Family;
        match self.init.family {
            InitFamily::ExpandingBall => Some(Family::ExpandingBall),
            InitFamily::Barenblatt => Some(Family::Barenblatt),
            InitFamily::RadialVortexPatch => Some(Family::RadialVortexPatch),
            InitFamily::UniformBallStatic => Some(Family::UniformBallStatic),
            _ => None,
        }
    }

    /// Whether the closed-form family solves the configured flow.
    pub fn exact_reference_available(&self) -> bool {
        use crate::meanfield::Family;
        let forcing_free = self.flow.forcing.kind == ForcingName::Zero;
        match (self.exact_family(), self.flow.kind) {
            (Some(Family::ExpandingBall | Family::Barenblatt), FlowName::Gradient) => forcing_free,
            (Some(Family::RadialVortexPatch | Family::UniformBallStatic), FlowName::Conservative) => forcing_free && self.flow.j.is_none(),
            _ => false,
        }
    }
}

fn path_or_root(p: &serde_path_to_error::Path) -> String {
    let s = p.to_string();
    if s == "." || s.is_empty() {
        "<root>".into()
    } else {
        s
    }
}

fn msg(e: Error) -> String {
    match e {
        Error::InvalidSpec(m) | Error::Config { message: m, .. } => m,
        other => other.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
N_list = [64, 128]
seeds = [0, 1]
kernel.d = 2
kernel.s = "log"
flow.kind = "gradient"
init.family = "expanding_ball"
init.R0 = 0.5
time.T = 0.5
time.dt = 0.01
"#;

    #[test]
    fn toml_and_json_agree() {
        let a = ExperimentConfig::from_toml_str(BASE).unwrap();
        let b = ExperimentConfig::from_json_str(&a.to_json()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.hash(), b.hash());
        let c = ExperimentConfig::from_toml_str(&a.to_toml()).unwrap();
        assert_eq!(a, c);
        assert!(a.exact_reference_available());
    }

    #[test]
    fn any_change_moves_the_hash() {
        let a = ExperimentConfig::from_toml_str(BASE).unwrap();
        let mut b = a.clone();
        b.time.dt = 0.02;
        assert_ne!(a.hash(), b.hash());
        let mut c = a.clone();
        c.output.dir = "elsewhere".into();
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn errors_name_the_field() {
        let bad = BASE.replace("kernel.s = \"log\"", "kernel.s = 2.5");
        match ExperimentConfig::from_toml_str(&bad) {
            Err(Error::Config { path, .. }) => assert_eq!(path, "kernel.s"),
            other => panic!("{other:?}"),
        }
        let bad = BASE.replace("N_list = [64, 128]", "N_list = []");
        assert!(matches!(ExperimentConfig::from_toml_str(&bad), Err(Error::Config { path, .. }) if path == "N_list"));
        let bad = BASE.replace("time.T = 0.5", "time.T = -1.0");
        assert!(matches!(ExperimentConfig::from_toml_str(&bad), Err(Error::Config { path, .. }) if path == "time.T"));
        let bad = BASE.replace("init.R0 = 0.5", "init.R0 = 0.5\ninit.colour = 1");
        assert!(matches!(ExperimentConfig::from_toml_str(&bad), Err(Error::Config { path, .. }) if path.starts_with("init")));
        let bad = BASE.replace("flow.kind = \"gradient\"", "flow.kind = \"sideways\"");
        assert!(matches!(ExperimentConfig::from_toml_str(&bad), Err(Error::Config { path, .. }) if path == "flow.kind"));
    }
}
