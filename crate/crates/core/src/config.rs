//! Run configuration: TOML in, validated [`RunConfig`] out.
//!
//! Sources are layered as built-in preset, then config file, then
//! command-line overrides, each a TOML table merged key by key.

use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::chaos::{Family, QuadratureRule, MAX_NODES};
use crate::error::{Error, Result};
use crate::gpc::SeparationPolicy;
use crate::grid::Grid;
use crate::soliton::{DefectParams, SolitonParams};
use crate::solver::{SolverConfig, Splitting, BOUNDARY_BAND, DEFAULT_WINDOW};

/// Distance past the window a free soliton must travel before the auto final time ends.
pub const CLEARANCE_MARGIN: f64 = 5.0;
/// Tail allowance used when capping the final time against wrap-around.
pub const TAIL_ALLOWANCE: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Single,
    Ensemble,
    Critical,
    Sweep,
    Convergence,
    Oracle,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Single => "single",
            ExperimentKind::Ensemble => "ensemble",
            ExperimentKind::Critical => "critical",
            ExperimentKind::Sweep => "sweep",
            ExperimentKind::Convergence => "convergence",
            ExperimentKind::Oracle => "oracle",
        }
    }
}

/// `"auto"` or a fixed number of time units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FinalTime {
    Auto,
    Fixed(f64),
}

impl Serialize for FinalTime {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            FinalTime::Auto => s.serialize_str("auto"),
            FinalTime::Fixed(t) => s.serialize_f64(*t),
        }
    }
}

impl<'de> Deserialize<'de> for FinalTime {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Float(f64),
            Int(i64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Float(t) => Ok(FinalTime::Fixed(t)),
            Raw::Int(t) => Ok(FinalTime::Fixed(t as f64)),
            Raw::Text(s) if s == "auto" => Ok(FinalTime::Auto),
            Raw::Text(s) => Err(serde::de::Error::custom(format!(
                "t_final must be a number or \"auto\", got {s:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    pub half_width: f64,
    pub points: usize,
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            half_width: 40.0,
            points: 2048,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub dt: f64,
    pub splitting: Splitting,
    pub t_final: FinalTime,
    /// Lower bound on the automatic final time.
    pub t_floor: f64,
    pub blowup_factor: f64,
}

impl Default for SolverSection {
    fn default() -> Self {
        Self {
            dt: 5e-3,
            splitting: Splitting::Strang,
            t_final: FinalTime::Auto,
            t_floor: 0.0,
            blowup_factor: 1e3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhysicsSection {
    pub epsilon: f64,
    pub amplitude: f64,
    pub phase: f64,
    pub start: f64,
    /// Launch velocity for single runs.
    pub velocity: f64,
}

impl Default for PhysicsSection {
    fn default() -> Self {
        Self {
            epsilon: 0.0,
            amplitude: 1.0,
            phase: 0.0,
            start: -10.0,
            velocity: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChaosSection {
    pub family: Family,
    /// Collocation nodes `Q + 1`.
    pub nodes: usize,
    /// Node counts for convergence studies.
    pub node_list: Vec<usize>,
    pub v_a: f64,
    pub v_b: f64,
    /// Standard deviation of the Gaussian law (Hermite only).
    pub sd: f64,
}

impl Default for ChaosSection {
    fn default() -> Self {
        Self {
            family: Family::Legendre,
            nodes: 16,
            node_list: vec![2, 4, 8, 12, 16],
            v_a: 0.4,
            v_b: 0.6,
            sd: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SeparationMode {
    Auto,
    Manual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SeparationSection {
    pub mode: SeparationMode,
    pub threshold: f64,
    pub min_gap: f64,
    /// Manual `L'`, and the fallback when automatic detection fails.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
}

impl Default for SeparationSection {
    fn default() -> Self {
        Self {
            mode: SeparationMode::Auto,
            threshold: crate::gpc::DEFAULT_GAP_THRESHOLD,
            min_gap: crate::gpc::DEFAULT_MIN_GAP,
            value: None,
        }
    }
}

impl SeparationSection {
    pub fn policy(&self) -> SeparationPolicy {
        match self.mode {
            SeparationMode::Auto => SeparationPolicy::Auto {
                threshold: self.threshold,
                min_gap: self.min_gap,
                fallback: self.value,
            },
            SeparationMode::Manual => SeparationPolicy::Manual {
                value: self.value.unwrap_or(f64::NAN),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleSection {
    pub tol: f64,
    /// Half-width of the trapping window used by the classifier.
    pub window: f64,
    /// Bracket; defaults to the chaos interval.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub v_lo: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub v_hi: Option<f64>,
}

impl Default for OracleSection {
    fn default() -> Self {
        Self {
            tol: 1e-4,
            window: DEFAULT_WINDOW,
            v_lo: None,
            v_hi: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub epsilons: Vec<f64>,
    /// Half-width of the extrapolated bracket relative to the predicted `V_c`.
    pub relative_width: f64,
    /// Velocities classified when no bracket is known or the predicted one fails.
    pub scan: Vec<f64>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            epsilons: vec![0.3, 0.5, 1.0, 2.7, 3.0, 4.5],
            relative_width: 0.25,
            scan: vec![0.05, 0.1, 0.15, 0.2, 0.3, 0.4, 0.5, 0.6, 0.8, 1.0, 1.25, 1.5],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub directory: String,
    pub formats: Vec<Format>,
    /// Write `(t, x, |u|^2)` samples for single runs.
    pub trajectory: bool,
    /// Steps between trajectory samples.
    pub checkpoint_stride: usize,
    /// Write `(x, |u_0|)` and similar plot data.
    pub plot_data: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            directory: "out".into(),
            formats: vec![Format::Csv, Format::Json],
            trajectory: false,
            checkpoint_stride: 200,
            plot_data: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub kind: ExperimentKind,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default)]
    pub grid: GridSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub physics: PhysicsSection,
    #[serde(default)]
    pub chaos: ChaosSection,
    #[serde(default)]
    pub separation: SeparationSection,
    #[serde(default)]
    pub oracle: OracleSection,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub output: OutputSection,
}

fn default_workers() -> usize {
    1
}

/// Built-in presets as TOML fragments.
pub const PRESETS: &[(&str, &str)] = &[
    (
        "critical-eps0.3",
        r#"
kind = "convergence"
[physics]
epsilon = 0.3
[solver]
t_final = 60.0
[chaos]
family = "legendre"
node_list = [2, 4, 8, 12, 16, 20, 24]
nodes = 24
v_a = 0.4
v_b = 0.6
[separation]
value = 8.0
"#,
    ),
    (
        "critical-eps1.0",
        r#"
kind = "convergence"
[physics]
epsilon = 1.0
[chaos]
family = "legendre"
node_list = [2, 4, 8, 12, 16, 20, 24]
nodes = 24
v_a = 0.02
v_b = 0.03
"#,
    ),
    (
        "critical-eps4.5",
        r#"
kind = "convergence"
[physics]
epsilon = 4.5
[chaos]
family = "legendre"
node_list = [2, 4, 8, 12, 16, 20, 24]
nodes = 24
v_a = 0.220048
v_b = 0.23995187
"#,
    ),
    (
        "slow-pass",
        r#"
kind = "single"
[grid]
half_width = 20.0
points = 512
[solver]
dt = 0.01
[physics]
epsilon = 0.1
velocity = 0.001
"#,
    ),
    (
        "slow-trap",
        r#"
kind = "single"
[grid]
half_width = 20.0
points = 512
[solver]
dt = 0.01
[physics]
epsilon = 0.5
velocity = 0.003
"#,
    ),
    (
        "eps4.5-trap",
        r#"
kind = "single"
[physics]
epsilon = 4.5
velocity = 0.220048
"#,
    ),
    (
        "eps4.5-pass",
        r#"
kind = "single"
[physics]
epsilon = 4.5
velocity = 0.23995187
"#,
    ),
    (
        "hermite-eps0.3",
        r#"
kind = "critical"
[physics]
epsilon = 0.3
[chaos]
family = "hermite"
nodes = 16
v_a = 0.4
v_b = 0.6
sd = 0.1
"#,
    ),
    (
        "sweep-default",
        r#"
kind = "sweep"
[chaos]
nodes = 16
v_a = 0.4
v_b = 0.6
[sweep]
epsilons = [0.3, 0.5, 1.0, 2.7, 3.0, 4.5]
"#,
    ),
];

pub fn preset(name: &str) -> Result<toml::Table> {
    let text = PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, t)| *t)
        .ok_or_else(|| {
            let names: Vec<&str> = PRESETS.iter().map(|(n, _)| *n).collect();
            Error::Config(format!("unknown preset {name:?}; available: {}", names.join(", ")))
        })?;
    text.parse::<toml::Table>()
        .map_err(|e| Error::Internal(format!("preset {name}: {e}")))
}

/// Recursively merges `over` into `base`; tables merge, everything else replaces.
pub fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Parses `section.key=value` into a one-entry table. The value is read as a
/// TOML literal, falling back to a bare string.
pub fn parse_override(spec: &str) -> Result<toml::Table> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {spec:?} is not key=value")))?;
    let path = path.trim();
    let raw = raw.trim();
    if path.is_empty() {
        return Err(Error::Config(format!("override {spec:?} has an empty key")));
    }
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let mut keys: Vec<&str> = path.split('.').collect();
    let last = keys.pop().expect("split yields at least one item");
    let mut table = toml::Table::new();
    table.insert(last.to_string(), value);
    for key in keys.into_iter().rev() {
        let mut outer = toml::Table::new();
        outer.insert(key.to_string(), toml::Value::Table(table));
        table = outer;
    }
    Ok(table)
}

pub fn read_table(path: &Path) -> Result<toml::Table> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    text.parse::<toml::Table>()
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

pub fn from_table(table: toml::Table) -> Result<RunConfig> {
    let cfg: RunConfig = table
        .try_into()
        .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn from_str(text: &str) -> Result<RunConfig> {
    let table = text.parse::<toml::Table>().map_err(|e| Error::Config(e.to_string()))?;
    from_table(table)
}

/// Reads, parses and validates a config file.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    from_table(read_table(path)?)
}

fn invalid(msg: String) -> Error {
    Error::Config(msg)
}

impl RunConfig {
    pub fn minimal(kind: ExperimentKind) -> Self {
        Self {
            kind,
            workers: 1,
            grid: GridSection::default(),
            solver: SolverSection::default(),
            physics: PhysicsSection::default(),
            chaos: ChaosSection::default(),
            separation: SeparationSection::default(),
            oracle: OracleSection::default(),
            sweep: SweepSection::default(),
            output: OutputSection::default(),
        }
    }

    /// Checks every precondition that does not need a solve.
    pub fn validate(&self) -> Result<()> {
        let grid = self.grid()?;
        self.soliton(self.physics.velocity).validate_on(&grid)?;
        DefectParams::new(self.physics.epsilon)?;
        if self.workers == 0 {
            return Err(invalid("workers must be at least 1".into()));
        }
        let s = &self.solver;
        SolverConfig {
            dt: s.dt,
            t_final: 0.0,
            splitting: s.splitting,
            checkpoint_stride: 0,
            blowup_factor: s.blowup_factor,
        }
        .validate()?;
        if let FinalTime::Fixed(t) = s.t_final {
            if !(t.is_finite() && t >= 0.0) {
                return Err(invalid(format!("solver.t_final must be non-negative, got {t}")));
            }
        }
        if !(s.t_floor.is_finite() && s.t_floor >= 0.0) {
            return Err(invalid(format!(
                "solver.t_floor must be non-negative, got {}",
                s.t_floor
            )));
        }

        let c = &self.chaos;
        self.rule(c.nodes)?;
        if c.node_list.is_empty() || c.node_list.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid(
                "chaos.node_list must be non-empty and strictly increasing".into(),
            ));
        }
        if c.node_list.iter().any(|&n| n == 0 || n > MAX_NODES) {
            return Err(invalid(format!("chaos.node_list entries must lie in 1..={MAX_NODES}")));
        }

        let sep = &self.separation;
        match sep.mode {
            SeparationMode::Manual if sep.value.is_none() => {
                return Err(invalid("separation.mode = \"manual\" needs separation.value".into()))
            }
            _ => {}
        }
        if let Some(v) = sep.value {
            let l = self.grid.half_width;
            if !(v > -l && v < l) {
                return Err(invalid(format!("separation.value {v} outside (-{l}, {l})")));
            }
        }
        if !(sep.threshold > 0.0 && sep.threshold < 1.0 && sep.min_gap > 0.0) {
            return Err(invalid(
                "separation.threshold must be in (0, 1) and min_gap positive".into(),
            ));
        }

        let o = &self.oracle;
        if !(o.tol > 0.0) {
            return Err(invalid(format!("oracle.tol must be positive, got {}", o.tol)));
        }
        if !(o.window > 0.0 && o.window < self.grid.half_width) {
            return Err(invalid(format!("oracle.window {} outside (0, L)", o.window)));
        }
        let (lo, hi) = self.oracle_bracket();
        if !(lo < hi) {
            return Err(invalid(format!("oracle bracket [{lo}, {hi}] is empty")));
        }

        let sw = &self.sweep;
        if self.kind == ExperimentKind::Sweep && sw.epsilons.is_empty() {
            return Err(invalid("sweep.epsilons is empty".into()));
        }
        if !(sw.relative_width > 0.0 && sw.relative_width < 1.0) {
            return Err(invalid("sweep.relative_width must be in (0, 1)".into()));
        }
        if sw.scan.windows(2).any(|w| w[0] >= w[1]) || sw.scan.iter().any(|&v| !(v > 0.0)) {
            return Err(invalid("sweep.scan must be positive and strictly increasing".into()));
        }
        if self.output.formats.is_empty() {
            return Err(invalid("output.formats is empty".into()));
        }
        if self.output.checkpoint_stride == 0 {
            return Err(invalid("output.checkpoint_stride must be at least 1".into()));
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<Grid> {
        Grid::new(self.grid.half_width, self.grid.points).map_err(|e| invalid(format!("grid: {e}")))
    }

    pub fn defect(&self) -> DefectParams {
        DefectParams {
            strength: self.physics.epsilon,
        }
    }

    pub fn soliton(&self, velocity: f64) -> SolitonParams {
        let p = &self.physics;
        SolitonParams {
            amplitude: p.amplitude,
            velocity,
            phase: p.phase,
            start: p.start,
        }
    }

    pub fn rule(&self, nodes: usize) -> Result<QuadratureRule> {
        let c = &self.chaos;
        match c.family {
            Family::Legendre => QuadratureRule::legendre(nodes, c.v_a, c.v_b),
            Family::Hermite => QuadratureRule::hermite(nodes, c.v_a, c.v_b, c.sd),
        }
    }

    pub fn oracle_bracket(&self) -> (f64, f64) {
        (
            self.oracle.v_lo.unwrap_or(self.chaos.v_a),
            self.oracle.v_hi.unwrap_or(self.chaos.v_b),
        )
    }

    /// Final time for an ensemble over `[v_lo, v_hi]`: long enough for a
    /// free soliton at `v_lo` to clear the window by [`CLEARANCE_MARGIN`],
    /// no shorter than `t_floor`, and where possible short enough that a
    /// soliton at `v_hi` does not reach the periodic boundary. Rounded up to
    /// a whole number of steps.
    pub fn final_time(&self, v_lo: f64, v_hi: f64, window: f64) -> f64 {
        let dt = self.solver.dt;
        let t = match self.solver.t_final {
            FinalTime::Fixed(t) => return t,
            FinalTime::Auto => {
                let start = self.physics.start.abs();
                let clear = (start + window + CLEARANCE_MARGIN) / v_lo.abs().max(f64::MIN_POSITIVE);
                let wrap =
                    (self.grid.half_width - BOUNDARY_BAND - TAIL_ALLOWANCE + start) / v_hi.abs().max(f64::MIN_POSITIVE);
                let t = clear.max(self.solver.t_floor);
                if t > wrap {
                    log::warn!(
                        "final time {t:.1} exceeds the wrap-around time {wrap:.1} of V = {v_hi}; fast solitons will wrap"
                    );
                }
                t
            }
        };
        (t / dt).ceil() * dt
    }

    pub fn solver_config(&self, t_final: f64) -> SolverConfig {
        let s = &self.solver;
        SolverConfig {
            dt: s.dt,
            t_final,
            splitting: s.splitting,
            checkpoint_stride: 0,
            blowup_factor: s.blowup_factor,
        }
    }

    /// The effective config as TOML, for echoing into the output directory.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Internal(format!("serialize config: {e}")))
    }
}

impl SolitonParams {
    /// Resolution check without building a field.
    pub fn validate_on(&self, grid: &Grid) -> Result<()> {
        if !(self.amplitude.is_finite() && self.amplitude > 0.0) {
            return Err(invalid(format!(
                "physics.amplitude must be positive, got {}",
                self.amplitude
            )));
        }
        let limit = 1.0 / (4.0 * self.amplitude);
        if grid.dx() > limit {
            return Err(Error::Resolution { dx: grid.dx(), limit });
        }
        if self.start.abs() < self.influence_radius() {
            return Err(Error::InfluenceZone {
                start: self.start,
                radius: self.influence_radius(),
            });
        }
        Ok(())
    }
}
