//! Experiment configuration: TOML (or a previous JSON result) plus
//! command-line overrides, deserialized with field paths in every error.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use clap::ValueEnum;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use qst_core::analysis::{OptimizeOptions, ScanAxis};
use qst_core::codec::{Protocol, RungField};
use qst_core::models::{ModelParams, TransferGenerator};
use qst_core::transfer::{Pipeline, ProjectionMode, RungInput};
use qst_core::{Boundary, SpinLattice};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    RrTransfer,
    EffectiveTransfer,
    SingleQubit,
    BareBaseline,
    HaarAverage,
    Epsilon,
    SweepR,
    Optimize,
    GgmCurve,
    HighEnergyScan,
    ValidateCouplings,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::RrTransfer => "rr-transfer",
            Experiment::EffectiveTransfer => "effective-transfer",
            Experiment::SingleQubit => "single-qubit",
            Experiment::BareBaseline => "bare-baseline",
            Experiment::HaarAverage => "haar-average",
            Experiment::Epsilon => "epsilon",
            Experiment::SweepR => "sweep-r",
            Experiment::Optimize => "optimize",
            Experiment::GgmCurve => "ggm-curve",
            Experiment::HighEnergyScan => "high-energy-scan",
            Experiment::ValidateCouplings => "validate-couplings",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub experiment: Option<Experiment>,
    pub lattice: LatticeConfig,
    #[serde(default)]
    pub params: ParamsConfig,
    #[serde(default = "default_input")]
    pub input: RungInput,
    #[serde(default)]
    pub transfer: TransferConfig,
    #[serde(default)]
    pub protocol: ProtocolConfig,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub haar: Option<HaarConfig>,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub optimize: OptimizeConfig,
    #[serde(default)]
    pub ggm: GgmConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scan: Option<ScanConfig>,
    #[serde(default)]
    pub output: OutputConfig,
}

fn default_input() -> RungInput {
    RungInput::low_energy(0.0, 0.0)
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeConfig {
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "L")]
    pub l: usize,
    #[serde(default = "open")]
    pub bc_rung: Boundary,
    #[serde(default = "open")]
    pub bc_leg: Boundary,
}

fn open() -> Boundary {
    Boundary::Open
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsConfig {
    #[serde(default = "default_u")]
    pub u: f64,
    #[serde(default)]
    pub v: f64,
    #[serde(default)]
    pub dw: f64,
    #[serde(default)]
    pub transfer_generator: TransferGenerator,
}

fn default_u() -> f64 {
    0.05
}

impl Default for ParamsConfig {
    fn default() -> Self {
        Self { u: default_u(), v: 0.0, dw: 0.0, transfer_generator: TransferGenerator::Full }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransferConfig {
    #[serde(default = "one")]
    pub sender: usize,
    /// Defaults to the far end of open legs, half way round periodic ones.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distance: Option<usize>,
    #[serde(default)]
    pub projection: ProjectionMode,
}

fn one() -> usize {
    1
}

impl Default for TransferConfig {
    fn default() -> Self {
        Self { sender: 1, distance: None, projection: ProjectionMode::Normalized }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolConfig {
    /// Chosen from the lattice when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub protocol: Option<Protocol>,
    #[serde(default = "one")]
    pub sender_leg: usize,
    #[serde(default = "one")]
    pub target_leg: usize,
    #[serde(default)]
    pub field: RungField,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self { protocol: None, sender_leg: 1, target_leg: 1, field: RungField::Critical }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(default = "default_t_max")]
    pub t_max: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
}

fn default_t_max() -> f64 {
    100.0
}

fn default_dt() -> f64 {
    0.1
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { t_max: default_t_max(), dt: default_dt() }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HaarConfig {
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default = "default_pipeline")]
    pub pipeline: Pipeline,
}

fn default_pipeline() -> Pipeline {
    Pipeline::RungToRung
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    /// Defaults to every reachable distance.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distances: Option<Vec<usize>>,
    /// Also report the optimized maximum at each distance.
    #[serde(default)]
    pub optimize: bool,
    /// Skip the single-input maximum (Haar average only).
    #[serde(default)]
    pub skip_input: bool,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizeConfig {
    #[serde(default = "zero")]
    pub lower: f64,
    #[serde(default = "default_upper")]
    pub upper: f64,
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
    #[serde(default = "default_step_tol")]
    pub step_tol: f64,
    #[serde(default = "default_value_tol")]
    pub value_tol: f64,
    #[serde(default = "default_max_evaluations")]
    pub max_evaluations: usize,
    #[serde(default = "default_reference")]
    pub reference: [f64; 3],
}

fn zero() -> f64 {
    0.0
}
fn default_upper() -> f64 {
    OptimizeOptions::default().upper
}
fn default_grid_points() -> usize {
    OptimizeOptions::default().grid_points
}
fn default_step_tol() -> f64 {
    OptimizeOptions::default().step_tol
}
fn default_value_tol() -> f64 {
    OptimizeOptions::default().value_tol
}
fn default_max_evaluations() -> usize {
    OptimizeOptions::default().max_evaluations
}
fn default_reference() -> [f64; 3] {
    OptimizeOptions::default().reference
}

impl Default for OptimizeConfig {
    fn default() -> Self {
        let o = OptimizeOptions::default();
        Self {
            lower: o.lower,
            upper: o.upper,
            grid_points: o.grid_points,
            step_tol: o.step_tol,
            value_tol: o.value_tol,
            max_evaluations: o.max_evaluations,
            reference: o.reference,
        }
    }
}

impl From<OptimizeConfig> for OptimizeOptions {
    fn from(c: OptimizeConfig) -> Self {
        Self {
            lower: c.lower,
            upper: c.upper,
            grid_points: c.grid_points,
            step_tol: c.step_tol,
            value_tol: c.value_tol,
            max_evaluations: c.max_evaluations,
            reference: c.reference,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GgmConfig {
    /// Defaults to the lattice's own `L`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub legs: Option<Vec<usize>>,
    #[serde(default = "default_ggm_points")]
    pub points: usize,
}

fn default_ggm_points() -> usize {
    21
}

impl Default for GgmConfig {
    fn default() -> Self {
        Self { legs: None, points: default_ggm_points() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanConfig {
    pub x: AxisConfig,
    pub y: AxisConfig,
}

/// Either explicit `values` or `points` evenly spaced values on `[start, stop]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AxisConfig {
    pub axis: ScanAxis,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop: Option<f64>,
    #[serde(default = "default_axis_points")]
    pub points: usize,
}

fn default_axis_points() -> usize {
    101
}

impl AxisConfig {
    pub fn values(&self) -> anyhow::Result<Vec<f64>> {
        match (&self.values, self.start, self.stop) {
            (Some(v), None, None) => Ok(v.clone()),
            (None, Some(a), Some(b)) => {
                if self.points < 2 {
                    bail!("scan axis {:?} needs at least two points", self.axis);
                }
                let n = self.points - 1;
                Ok((0..=n).map(|i| a + (b - a) * i as f64 / n as f64).collect())
            }
            _ => bail!("scan axis {:?} needs either `values` or both `start` and `stop`", self.axis),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// Standard output when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub format: Format,
}

impl Config {
    pub fn lattice(&self) -> anyhow::Result<SpinLattice> {
        let l = &self.lattice;
        SpinLattice::new(l.n, l.l, l.bc_rung, l.bc_leg).context("lattice")
    }

    pub fn params(&self, lattice: &SpinLattice) -> anyhow::Result<ModelParams> {
        let p = &self.params;
        Ok(ModelParams::for_lattice(lattice, p.u, p.v, p.dw)
            .context("params")?
            .with_generator(p.transfer_generator))
    }

    pub fn distance(&self, lattice: &SpinLattice) -> usize {
        self.transfer.distance.unwrap_or(match lattice.bc_leg() {
            Boundary::Open => lattice.rungs().saturating_sub(self.transfer.sender),
            Boundary::Periodic => lattice.rungs() / 2,
        })
    }

    pub fn protocol(&self, lattice: &SpinLattice) -> anyhow::Result<Protocol> {
        if let Some(p) = self.protocol.protocol {
            return Ok(p);
        }
        match (lattice.legs(), lattice.bc_rung()) {
            (2, _) => Ok(Protocol::TwoLeg),
            (4, Boundary::Periodic) => Ok(Protocol::FourLeg),
            (3, _) => Ok(Protocol::ThreeLeg),
            (l, bc) => bail!("protocol.protocol: no single-qubit protocol for L = {l} with {bc} rungs"),
        }
    }

    /// Seed of a stochastic run; there is no fallback to system entropy.
    pub fn seed(&self) -> anyhow::Result<u64> {
        self.haar
            .and_then(|h| h.seed)
            .ok_or_else(|| anyhow!("this experiment is stochastic: pass --seed (or set haar.seed)"))
    }
}

/// Reads a TOML config, or the `config` echo of a JSON result.
pub fn read_tree(path: &Path) -> anyhow::Result<Value> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    if is_json {
        let mut v: Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        if let Some(inner) = v.get_mut("config") {
            return Ok(inner.take());
        }
        Ok(v)
    } else {
        let table: toml::Table = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        Ok(serde_json::to_value(table)?)
    }
}

/// Writes the default input into a tree without one, so overrides can edit single fields.
pub fn fill_default_input(tree: &mut Value) -> anyhow::Result<()> {
    if let Some(table) = tree.as_object_mut() {
        if !table.contains_key("input") {
            table.insert("input".into(), serde_json::to_value(default_input())?);
        }
    }
    Ok(())
}

/// Applies `key.path=value`; the value is read as a TOML literal, or as a bare string.
pub fn apply_override(tree: &mut Value, assignment: &str) -> anyhow::Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| anyhow!("override `{assignment}` is not of the form key=value"))?;
    let key = key.trim();
    if key.is_empty() {
        bail!("override `{assignment}` has an empty key");
    }
    let value = match toml::from_str::<toml::Table>(&format!("v = {}", raw.trim())) {
        Ok(mut t) => serde_json::to_value(t.remove("v").expect("parsed key"))?,
        Err(_) => Value::String(raw.trim().to_string()),
    };
    let mut node = tree;
    let parts: Vec<&str> = key.split('.').collect();
    for part in &parts[..parts.len() - 1] {
        if !node.is_object() {
            bail!("override `{key}`: `{part}` is not a table");
        }
        node = node
            .as_object_mut()
            .expect("checked")
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    node.as_object_mut()
        .ok_or_else(|| anyhow!("override `{key}` does not address a table entry"))?
        .insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

pub fn parse(tree: Value) -> anyhow::Result<Config> {
    serde_path_to_error::deserialize(tree).map_err(|e| {
        let path = e.path().to_string();
        if path == "." {
            anyhow!("invalid config: {}", e.inner())
        } else {
            anyhow!("invalid config at `{path}`: {}", e.inner())
        }
    })
}
