use std::fmt;
use std::path::{Path, PathBuf};

use clt_lab::generators::{GraphTemplate, MomentProfile};
use clt_lab::markov::FiniteChain;
use clt_lab::rates::{CurveConfig, DependenceSource, Setting, SigmaMode, Source};
use clt_lab::transport::Estimator;
use clt_lab::ustat::KernelSpec;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    Rate,
    SplitChain,
    TransportSelftest,
    Ustat,
    Blocks,
    DependenceFunctional,
}

impl Kind {
    pub const ALL: [Kind; 6] =
        [Kind::Rate, Kind::SplitChain, Kind::TransportSelftest, Kind::Ustat, Kind::Blocks, Kind::DependenceFunctional];

    pub fn name(self) -> &'static str {
        match self {
            Kind::Rate => "rate",
            Kind::SplitChain => "split-chain",
            Kind::TransportSelftest => "transport-selftest",
            Kind::Ustat => "ustat",
            Kind::Blocks => "blocks",
            Kind::DependenceFunctional => "dependence-functional",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Slope window checked by `report`. Missing bounds are unbounded.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlopeWindow {
    pub min: Option<f64>,
    pub max: Option<f64>,
}

impl SlopeWindow {
    pub fn contains(&self, slope: f64) -> bool {
        self.min.is_none_or(|lo| slope >= lo) && self.max.is_none_or(|hi| slope <= hi)
    }

    /// Two-sided ±0.15 around a W₁ exponent; one-sided `≤ a + 0.05` for Wp
    /// settings, whose exponent is only an upper bound on the decay.
    pub fn default_for(setting: &Setting, exponent: f64) -> Self {
        match setting {
            Setting::MdepWp { .. } | Setting::MarkovWp { .. } => Self { min: None, max: Some(exponent + 0.05) },
            _ => Self { min: Some(exponent - 0.15), max: Some(exponent + 0.15) },
        }
    }
}

fn default_true() -> bool {
    true
}

fn default_bootstrap() -> usize {
    1000
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateSection {
    pub source: Source,
    pub p: f64,
    pub n_grid: Vec<usize>,
    pub reps: usize,
    pub m: usize,
    #[serde(default = "default_true")]
    pub debias: bool,
    #[serde(default)]
    pub estimator: Estimator,
    #[serde(default)]
    pub sigma: SigmaMode,
    #[serde(default)]
    pub setting: Option<Setting>,
    #[serde(default)]
    pub exclude_flagged: bool,
    #[serde(default = "default_bootstrap")]
    pub bootstrap: usize,
    #[serde(default)]
    pub fit_min_n: Option<usize>,
    #[serde(default)]
    pub acceptance: Option<SlopeWindow>,
}

impl RateSection {
    pub fn curve_config(&self, seed: u64) -> CurveConfig {
        CurveConfig {
            source: self.source.clone(),
            p: self.p,
            n_grid: self.n_grid.clone(),
            reps: self.reps,
            m: self.m,
            seed,
            debias: self.debias,
            estimator: self.estimator,
            sigma: self.sigma,
            setting: self.setting,
            exclude_flagged: self.exclude_flagged,
            bootstrap: self.bootstrap,
            fit_min_n: self.fit_min_n,
        }
    }
}

fn default_skeleton() -> usize {
    1
}

fn default_p() -> f64 {
    2.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitChainSection {
    pub chain: FiniteChain,
    /// Defaults to the chain's own small set.
    #[serde(default)]
    pub small_set: Option<Vec<usize>>,
    #[serde(default = "default_skeleton")]
    pub skeleton: usize,
    /// Steps per trace.
    pub length: usize,
    pub traces: usize,
    /// Defaults to the stationary law.
    #[serde(default)]
    pub init: Option<Vec<f64>>,
    #[serde(default)]
    pub kn_grid: Vec<usize>,
    #[serde(default = "default_p")]
    pub p: f64,
    /// Horizon for the cycle increments; skipped when absent.
    #[serde(default)]
    pub increments_n: Option<usize>,
}

fn default_instances() -> usize {
    100
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelftestSection {
    #[serde(default = "default_instances")]
    pub instances: usize,
}

impl Default for SelftestSection {
    fn default() -> Self {
        Self { instances: default_instances() }
    }
}

fn default_profile() -> MomentProfile {
    MomentProfile::Gaussian
}

fn default_dim() -> usize {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UstatSection {
    pub kernel: KernelSpec,
    #[serde(default = "default_profile")]
    pub profile: MomentProfile,
    #[serde(default = "default_dim")]
    pub input_dim: usize,
    /// Size of the sample whose U-statistic is reported.
    pub n: usize,
    /// Sizes at which `q_{n,r}` is tabulated.
    #[serde(default)]
    pub q_grid: Vec<usize>,
    /// Nested Monte Carlo sizes for the projection variance.
    #[serde(default)]
    pub projection_reps: Option<usize>,
    #[serde(default)]
    pub projection_inner: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlocksSection {
    pub n: usize,
    pub m_dep: usize,
    #[serde(default = "default_p")]
    pub p: f64,
    #[serde(default = "default_p")]
    pub q: f64,
    /// Overrides the optimal block length.
    #[serde(default)]
    pub ell: Option<usize>,
    #[serde(default = "default_profile")]
    pub profile: MomentProfile,
    #[serde(default = "default_dim")]
    pub d: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DependenceSection {
    pub source: DependenceSource,
    pub n_grid: Vec<usize>,
    #[serde(default)]
    pub outer_reps: usize,
    #[serde(default)]
    pub inner_m: usize,
    #[serde(default = "default_true")]
    pub debias: bool,
    /// Exact computation from the chain's sum laws instead of Monte Carlo.
    #[serde(default)]
    pub exact: bool,
}

#[derive(Debug, Clone)]
pub enum Section {
    Rate(RateSection),
    SplitChain(SplitChainSection),
    TransportSelftest(SelftestSection),
    Ustat(UstatSection),
    Blocks(BlocksSection),
    DependenceFunctional(DependenceSection),
}

/// A validated experiment.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub kind: Kind,
    pub seed: u64,
    pub name: String,
    pub output: Option<PathBuf>,
    pub budget_secs: Option<f64>,
    pub section: Section,
    /// Effective config after command-line overrides, echoed in the manifest.
    pub echo: toml::Table,
}

#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub budget_secs: Option<f64>,
}

const TOP_LEVEL: [&str; 5] = ["experiment", "seed", "name", "output", "budget_secs"];

impl ExperimentConfig {
    pub fn load(path: &Path, overrides: &Overrides) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "experiment".into());
        Self::parse(&text, &stem, overrides)
    }

    pub fn parse(text: &str, default_name: &str, overrides: &Overrides) -> CliResult<Self> {
        let mut table: toml::Table =
            text.parse().map_err(|e: toml::de::Error| CliError::validation("<file>", e.message().to_string()))?;
        if let Some(seed) = overrides.seed {
            table.insert("seed".into(), toml::Value::Integer(seed as i64));
        }
        if let Some(b) = overrides.budget_secs {
            table.insert("budget_secs".into(), toml::Value::Float(b));
        }

        let kind_name = match table.get("experiment") {
            Some(toml::Value::String(s)) => s.clone(),
            Some(_) => return Err(CliError::validation("experiment", "must be a string")),
            None => return Err(CliError::validation("experiment", "required; one of ".to_string() + &kind_list())),
        };
        let kind = Kind::parse(&kind_name).ok_or_else(|| {
            CliError::validation("experiment", format!("unknown kind `{kind_name}`; expected one of {}", kind_list()))
        })?;
        let seed = match table.get("seed") {
            Some(toml::Value::Integer(s)) if *s >= 0 => *s as u64,
            Some(_) => return Err(CliError::validation("seed", "must be a non-negative integer")),
            None => return Err(CliError::validation("seed", "required: set `seed` in the config or pass --seed")),
        };
        let name = match table.get("name") {
            Some(toml::Value::String(s)) => s.clone(),
            Some(_) => return Err(CliError::validation("name", "must be a string")),
            None => default_name.to_string(),
        };
        let output = match table.get("output") {
            Some(toml::Value::String(s)) => Some(PathBuf::from(s)),
            Some(_) => return Err(CliError::validation("output", "must be a path string")),
            None => None,
        };
        let budget_secs = match table.get("budget_secs") {
            Some(toml::Value::Float(b)) => Some(*b),
            Some(toml::Value::Integer(b)) => Some(*b as f64),
            Some(_) => return Err(CliError::validation("budget_secs", "must be a number")),
            None => None,
        };
        if budget_secs.is_some_and(|b| !(b > 0.0 && b.is_finite())) {
            return Err(CliError::validation("budget_secs", "must be positive"));
        }
        for key in table.keys() {
            if !TOP_LEVEL.contains(&key.as_str()) && key != kind.name() {
                return Err(CliError::validation(key, format!("unexpected key for a `{kind}` experiment")));
            }
        }

        let raw = table.get(kind.name()).cloned();
        let section = match kind {
            Kind::Rate => Section::Rate(section(kind, raw)?),
            Kind::SplitChain => Section::SplitChain(section(kind, raw)?),
            Kind::TransportSelftest => Section::TransportSelftest(match raw {
                Some(v) => typed(kind, v)?,
                None => SelftestSection::default(),
            }),
            Kind::Ustat => Section::Ustat(section(kind, raw)?),
            Kind::Blocks => Section::Blocks(section(kind, raw)?),
            Kind::DependenceFunctional => Section::DependenceFunctional(section(kind, raw)?),
        };
        let cfg = Self { kind, seed, name, output, budget_secs, section, echo: table };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> CliResult<()> {
        let k = self.kind.name();
        let field = |f: &str| format!("{k}.{f}");
        match &self.section {
            Section::Rate(r) => {
                check_grid(&field("n_grid"), &r.n_grid)?;
                positive(&field("reps"), r.reps)?;
                positive(&field("m"), r.m)?;
                if !(r.p >= 1.0 && r.p.is_finite()) {
                    return Err(CliError::validation(field("p"), "must be a finite order >= 1"));
                }
                check_source(&field("source"), &r.source)?;
                if let Some(s) = &r.setting {
                    clt_lab::rates::theoretical_exponent(s)
                        .map_err(|e| CliError::validation(field("setting"), e.to_string()))?;
                }
            }
            Section::SplitChain(s) => {
                positive(&field("length"), s.length)?;
                positive(&field("traces"), s.traces)?;
                positive(&field("skeleton"), s.skeleton)?;
                if !s.kn_grid.is_empty() {
                    check_grid(&field("kn_grid"), &s.kn_grid)?;
                }
                if let Some(init) = &s.init {
                    if init.len() != s.chain.n_states() {
                        return Err(CliError::validation(field("init"), "length must match the number of states"));
                    }
                }
            }
            Section::TransportSelftest(s) => positive(&field("instances"), s.instances)?,
            Section::Ustat(u) => {
                positive(&field("n"), u.n)?;
                positive(&field("input_dim"), u.input_dim)?;
                check_profile(&field("profile"), &u.profile)?;
                if !u.q_grid.is_empty() {
                    check_grid(&field("q_grid"), &u.q_grid)?;
                }
                u.kernel.build(u.input_dim).map_err(|e| CliError::validation(field("kernel"), e.to_string()))?;
            }
            Section::Blocks(b) => {
                positive(&field("n"), b.n)?;
                positive(&field("d"), b.d)?;
                check_profile(&field("profile"), &b.profile)?;
            }
            Section::DependenceFunctional(d) => {
                check_grid(&field("n_grid"), &d.n_grid)?;
                if !d.exact {
                    positive(&field("outer_reps"), d.outer_reps)?;
                    positive(&field("inner_m"), d.inner_m)?;
                }
                match &d.source {
                    DependenceSource::Iid { profile, .. } => {
                        check_profile(&field("source.profile"), profile)?;
                        if d.exact {
                            return Err(CliError::validation(field("exact"), "exact mode needs a chain source"));
                        }
                    }
                    DependenceSource::Chain { .. } => {}
                }
            }
        }
        Ok(())
    }
}

fn kind_list() -> String {
    Kind::ALL.iter().map(|k| k.name()).collect::<Vec<_>>().join(", ")
}

fn section<T: DeserializeOwned>(kind: Kind, raw: Option<toml::Value>) -> CliResult<T> {
    let v = raw.ok_or_else(|| CliError::validation(kind.name(), format!("missing section [{}]", kind.name())))?;
    typed(kind, v)
}

fn typed<T: DeserializeOwned>(kind: Kind, v: toml::Value) -> CliResult<T> {
    v.try_into().map_err(|e: toml::de::Error| {
        let msg = e.message().to_string();
        // serde names the offending key in backticks
        let field = msg
            .split('`')
            .nth(1)
            .filter(|_| msg.contains("field"))
            .map(|f| format!("{}.{f}", kind.name()))
            .unwrap_or_else(|| kind.name().to_string());
        CliError::validation(field, msg)
    })
}

fn positive(field: &str, v: usize) -> CliResult<()> {
    if v == 0 {
        return Err(CliError::validation(field, "must be positive"));
    }
    Ok(())
}

fn check_grid(field: &str, grid: &[usize]) -> CliResult<()> {
    if grid.is_empty() {
        return Err(CliError::validation(field, "must not be empty"));
    }
    if grid[0] == 0 || grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(CliError::validation(field, "must be positive and strictly increasing"));
    }
    Ok(())
}

fn check_profile(field: &str, p: &MomentProfile) -> CliResult<()> {
    p.validate().map_err(|e| CliError::validation(field, e.to_string()))
}

fn check_source(field: &str, s: &Source) -> CliResult<()> {
    match s {
        Source::Iid { profile, d } | Source::MDependent { profile, d, .. } | Source::LocalGraph { profile, d, .. } => {
            positive(&format!("{field}.d"), *d)?;
            check_profile(&format!("{field}.profile"), profile)?;
            if let Source::LocalGraph { template: GraphTemplate::KNeighborhood { k: 0 }, .. } = s {
                return Err(CliError::validation(format!("{field}.template.k"), "must be positive"));
            }
        }
        Source::Chain { chain, init } => {
            if init.as_ref().is_some_and(|i| i.len() != chain.n_states()) {
                return Err(CliError::validation(format!("{field}.init"), "length must match the number of states"));
            }
        }
        Source::UStat { kernel, profile, input_dim } => {
            check_profile(&format!("{field}.profile"), profile)?;
            kernel.build(*input_dim).map_err(|e| CliError::validation(format!("{field}.kernel"), e.to_string()))?;
        }
        Source::Synthetic { .. } => {}
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const RATE: &str = r#"
experiment = "rate"
seed = 7

[rate]
p = 1.0
n_grid = [16, 32, 64, 128]
reps = 4
m = 50
source = { source = "iid", d = 1, profile = { family = "gaussian" } }
setting = { kind = "indep_w1", delta = 1.0 }
"#;

    fn parse(text: &str) -> CliResult<ExperimentConfig> {
        ExperimentConfig::parse(text, "t", &Overrides::default())
    }

    fn field_of(e: CliError) -> String {
        match e {
            CliError::Validation { field, .. } => field,
            other => panic!("expected a validation error, got {other}"),
        }
    }

    #[test]
    fn rate_config_parses() {
        let c = parse(RATE).unwrap();
        assert_eq!(c.kind, Kind::Rate);
        assert_eq!(c.seed, 7);
        let Section::Rate(r) = c.section else { panic!() };
        assert!(r.debias);
        assert_eq!(r.curve_config(7).n_grid, vec![16, 32, 64, 128]);
    }

    #[test]
    fn missing_seed_names_the_field() {
        let e = parse(&RATE.replace("seed = 7", "")).unwrap_err();
        assert_eq!(e.exit_code(), 2);
        assert_eq!(field_of(e), "seed");
        let c = ExperimentConfig::parse(
            &RATE.replace("seed = 7", ""),
            "t",
            &Overrides { seed: Some(3), budget_secs: None },
        );
        assert_eq!(c.unwrap().seed, 3);
    }

    #[test]
    fn field_level_errors() {
        assert_eq!(field_of(parse(&RATE.replace("[16, 32, 64, 128]", "[32, 16]")).unwrap_err()), "rate.n_grid");
        assert_eq!(field_of(parse(&RATE.replace("reps = 4\n", "")).unwrap_err()), "rate.reps");
        assert_eq!(field_of(parse(&RATE.replace("\"rate\"", "\"nope\"")).unwrap_err()), "experiment");
        assert_eq!(field_of(parse(&RATE.replace("m = 50", "m = 50\nbogus = 1")).unwrap_err()), "rate.bogus");
        let heavy = RATE.replace("{ family = \"gaussian\" }", "{ family = \"symmetrized-pareto\", alpha = 1.5 }");
        assert_eq!(field_of(parse(&heavy).unwrap_err()), "rate.source.profile");
        let kernel = "experiment = \"ustat\"\nseed = 1\n[ustat]\nn = 10\nkernel = { name = \"no-such-kernel\" }\n";
        assert!(field_of(parse(kernel).unwrap_err()).starts_with("ustat"));
    }

    #[test]
    fn selftest_section_is_optional() {
        let c = parse("experiment = \"transport-selftest\"\nseed = 0\n").unwrap();
        assert!(matches!(c.section, Section::TransportSelftest(SelftestSection { instances: 100 })));
    }

    #[test]
    fn slope_windows() {
        let w = SlopeWindow::default_for(&Setting::IndepW1 { delta: 1.0 }, -0.5);
        assert!(w.contains(-0.4) && !w.contains(-0.3));
        let w = SlopeWindow::default_for(&Setting::MdepWp { p: 2.0, q: 2.0 }, -0.25);
        assert!(w.contains(-0.9) && !w.contains(-0.15));
    }
}
