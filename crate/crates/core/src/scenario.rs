//! Scenario configuration and the quasi-steady time loop.
//!
//! Every step solves the network algebraically with the converters'
//! present commands, records the relay measurement, then advances the
//! controller. The fault is applied from the first step at or after
//! `t_fault` and stays on until `t_end`.

use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Deserialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fault::{relay_point_quantities, BranchEnd, FaultKind, FaultSpec, PreparedNetwork, SeriesInjection};
use crate::grid::{load_grid, BranchId, GridModel};
use crate::ipfc::{
    vsc_terminal_power, IpfcConfig, IpfcMode, IpfcSetpoints, IpfcState, LineMeasurement, PiGains,
};
use crate::relay::{
    apparent_impedance, classify_reach, settled_impedance, ReachClass, ReachMetric, ReachVerdict,
    RelaySettings, RelayTrace, SettledImpedance,
};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq)]
pub enum GridSource {
    Builtin,
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub grid_source: GridSource,
    pub grid: GridModel,
    pub ipfc: IpfcConfig,
    pub fault: FaultSpec,
    pub t_fault: f64,
    pub t_end: f64,
    pub dt: f64,
    pub relay: RelaySettings,
    pub seed: u64,
}

// ---------------------------------------------------------------------------
// Config schema
// ---------------------------------------------------------------------------

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    scenario: ScenarioSection,
    fault: FaultSection,
    #[serde(default)]
    ipfc: IpfcSection,
    #[serde(default)]
    relay: RelaySection,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioSection {
    name: Option<String>,
    grid_file: Option<String>,
    #[serde(default = "default_t_fault")]
    t_fault: f64,
    #[serde(default = "default_t_end")]
    t_end: f64,
    #[serde(default = "default_dt")]
    dt: f64,
    #[serde(default)]
    seed: u64,
}

fn default_t_fault() -> f64 {
    3.0
}

fn default_t_end() -> f64 {
    3.5
}

fn default_dt() -> f64 {
    1e-3
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FaultSection {
    kind: FaultKind,
    branch: BranchId,
    n: f64,
    #[serde(default)]
    rf: f64,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct IpfcSection {
    mode: Option<IpfcMode>,
    master_branch: Option<BranchId>,
    slave_branch: Option<BranchId>,
    p_ref1: Option<f64>,
    q_ref1: Option<f64>,
    p_ref2: Option<f64>,
    vdc_ref: Option<f64>,
    master_p: Option<PiGains>,
    master_q: Option<PiGains>,
    slave_vdc: Option<PiGains>,
    slave_p: Option<PiGains>,
    m_max: Option<f64>,
    c_dc: Option<f64>,
    vdc_floor: Option<f64>,
    leakage_x: Option<f64>,
    preset_reactance: Option<f64>,
    preset_resistance: Option<f64>,
    freeze_on_fault: Option<bool>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "snake_case")]
enum EndName {
    From,
    To,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RelaySection {
    branch: Option<BranchId>,
    end: Option<EndName>,
    zone1_fraction: Option<f64>,
    reach_metric: Option<ReachMetric>,
    tolerance: Option<f64>,
    settled_fraction: Option<f64>,
    current_floor: Option<f64>,
}

impl Scenario {
    /// Reads a scenario file; a relative `grid_file` resolves against the
    /// scenario file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let value: toml::Table =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {}", path.display(), e.message())))?;
        Self::from_table(value, path.parent())
    }

    pub fn from_toml_str(text: &str, base_dir: Option<&Path>) -> Result<Self> {
        let value: toml::Table =
            toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        Self::from_table(value, base_dir)
    }

    pub fn from_table(table: toml::Table, base_dir: Option<&Path>) -> Result<Self> {
        let file: ScenarioFile = table
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        let (grid_source, grid) = match &file.scenario.grid_file {
            None => (GridSource::Builtin, GridModel::shipped_default()),
            Some(p) => {
                let p = PathBuf::from(p);
                let p = match base_dir {
                    Some(dir) if p.is_relative() => dir.join(p),
                    _ => p,
                };
                let grid = load_grid(&p)?;
                (GridSource::File(p), grid)
            }
        };

        let fault = FaultSpec {
            kind: file.fault.kind,
            branch: file.fault.branch,
            n: file.fault.n,
            rf: file.fault.rf,
        };

        let d = IpfcConfig::default();
        let s = &file.ipfc;
        let sp = IpfcSetpoints {
            p_ref1: s.p_ref1.unwrap_or(d.setpoints.p_ref1),
            q_ref1: s.q_ref1.unwrap_or(d.setpoints.q_ref1),
            p_ref2: s.p_ref2.unwrap_or(d.setpoints.p_ref2),
            vdc_ref: s.vdc_ref.unwrap_or(d.setpoints.vdc_ref),
        };
        let ipfc = IpfcConfig {
            mode: s.mode.unwrap_or(IpfcMode::Off),
            setpoints: sp,
            master_branch: s.master_branch.unwrap_or(d.master_branch),
            slave_branch: s.slave_branch.unwrap_or(d.slave_branch),
            master_p: s.master_p.unwrap_or(d.master_p),
            master_q: s.master_q.unwrap_or(d.master_q),
            slave_vdc: s.slave_vdc.unwrap_or(d.slave_vdc),
            slave_p: s.slave_p.unwrap_or(d.slave_p),
            m_max: s.m_max.unwrap_or(d.m_max),
            c_dc: s.c_dc.unwrap_or(d.c_dc),
            vdc_floor: s.vdc_floor.unwrap_or(d.vdc_floor),
            leakage_x: s.leakage_x.unwrap_or(d.leakage_x),
            preset_reactance: s.preset_reactance.unwrap_or(d.preset_reactance),
            preset_resistance: s.preset_resistance.unwrap_or(d.preset_resistance),
            freeze_on_fault: s.freeze_on_fault.unwrap_or(d.freeze_on_fault),
            current_floor: d.current_floor,
        };

        let r = &file.relay;
        let mut relay = RelaySettings::for_branch(&grid, r.branch.unwrap_or(fault.branch))?;
        relay.relay_end = match r.end.unwrap_or(EndName::From) {
            EndName::From => BranchEnd::From,
            EndName::To => BranchEnd::To,
        };
        if let Some(v) = r.zone1_fraction {
            relay.zone1_fraction = v;
        }
        if let Some(v) = r.reach_metric {
            relay.reach_metric = v;
        }
        if let Some(v) = r.tolerance {
            relay.tolerance = v;
        }
        if let Some(v) = r.settled_fraction {
            relay.settled_fraction = v;
        }
        if let Some(v) = r.current_floor {
            relay.current_floor = v;
        }

        let name = file.scenario.name.clone().unwrap_or_else(|| ipfc.mode.as_str().to_string());
        let scenario = Scenario {
            name,
            grid_source,
            grid,
            ipfc,
            fault,
            t_fault: file.scenario.t_fault,
            t_end: file.scenario.t_end,
            dt: file.scenario.dt,
            relay,
            seed: file.scenario.seed,
        };
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(format!("scenario {}: {msg}", self.name)));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad("dt must be positive".into());
        }
        if !(self.t_fault > 0.0 && self.t_fault < self.t_end && self.t_end.is_finite()) {
            return bad("need 0 < t_fault < t_end".into());
        }
        if self.dt > (self.t_end - self.t_fault) / 50.0 * (1.0 + 1e-9) {
            return bad(format!(
                "dt = {} leaves fewer than 50 post-fault samples",
                self.dt
            ));
        }
        self.fault.validate()?;
        if self.grid.branch(self.fault.branch).is_none() {
            return bad(format!("fault branch {} does not exist", self.fault.branch));
        }
        self.relay.validate()?;
        if self.ipfc.mode != IpfcMode::Off {
            self.ipfc.validate()?;
            for b in [self.ipfc.master_branch, self.ipfc.slave_branch] {
                if self.grid.branch(b).is_none() {
                    return bad(format!("ipfc branch {b} does not exist"));
                }
            }
        }
        Ok(())
    }

    /// Number of recorded steps, `floor(t_end / dt)`.
    pub fn step_count(&self) -> usize {
        (self.t_end / self.dt + 1e-9).floor() as usize
    }

    fn fault_step(&self) -> usize {
        (self.t_fault / self.dt - 1e-9).ceil() as usize
    }

    /// Fault distance along the protected line, when the relay looks into
    /// the faulted line from its `from` end.
    pub fn known_n(&self) -> Option<f64> {
        (self.relay.protected_branch == self.fault.branch && self.relay.relay_end == BranchEnd::From)
            .then_some(self.fault.n)
    }

    /// SHA-256 over a canonical rendering of the resolved scenario.
    pub fn config_hash(&self) -> String {
        let canonical = format!("{self:?}");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }

    fn same_study(&self, other: &Scenario) -> bool {
        self.grid == other.grid
            && self.fault == other.fault
            && self.t_fault == other.t_fault
            && self.t_end == other.t_end
            && self.dt == other.dt
            && self.relay == other.relay
    }
}

/// Three-phase bolted fault at 80% of line 5 on the shipped grid, seen by
/// the relay at the bus-4 end.
pub fn study_base_scenario(mode: IpfcMode) -> Scenario {
    let grid = GridModel::shipped_default();
    let relay = RelaySettings::for_branch(&grid, BranchId(5)).expect("line 5 exists");
    Scenario {
        name: mode.as_str().to_string(),
        grid_source: GridSource::Builtin,
        grid,
        ipfc: IpfcConfig {
            mode,
            ..IpfcConfig::default()
        },
        fault: FaultSpec {
            kind: FaultKind::ThreePhase,
            branch: BranchId(5),
            n: 0.8,
            rf: 0.0,
        },
        t_fault: default_t_fault(),
        t_end: default_t_end(),
        dt: default_dt(),
        relay,
        seed: 0,
    }
}

// ---------------------------------------------------------------------------
// Running
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IpfcLogRow {
    pub t: f64,
    pub m1: f64,
    pub alpha1_deg: f64,
    pub m2: f64,
    pub alpha2_deg: f64,
    pub vdc: f64,
    pub pse1: f64,
    pub pse2: f64,
    pub pnet1: f64,
    pub qnet1: f64,
    pub pnet2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    pub config_hash: String,
    pub tool_version: &'static str,
}

impl Provenance {
    pub fn line(&self) -> String {
        format!("config_sha256={} tool=ipfc-relay/{}", self.config_hash, self.tool_version)
    }
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub scenario: Scenario,
    pub trace: RelayTrace,
    pub ipfc_log: Vec<IpfcLogRow>,
    pub verdict: Option<ReachVerdict>,
    pub provenance: Provenance,
    pub steps: usize,
    pub settled: Option<SettledImpedance>,
}

impl RunResult {
    /// Log row of the last step before the fault.
    pub fn prefault_row(&self) -> Option<&IpfcLogRow> {
        self.ipfc_log.iter().rev().find(|r| r.t < self.scenario.t_fault - 1e-12)
    }
}

fn line_measurement(
    sol: &crate::fault::NetworkSolution,
    branch: BranchId,
    v_inject: Complex64,
    leakage_x: f64,
) -> Result<LineMeasurement> {
    let (v, i) = relay_point_quantities(sol, branch, BranchEnd::From)?;
    let v_line = v.pos + v_inject - Complex64::new(0.0, leakage_x) * i.pos;
    let s = v_line * i.pos.conj();
    Ok(LineMeasurement {
        p_net: s.re,
        q_net: s.im,
        i_line: i.pos,
        v_line,
    })
}

pub fn run_scenario(s: &Scenario) -> Result<RunResult> {
    s.validate()?;
    let cfg = &s.ipfc;
    let active = cfg.mode != IpfcMode::Off;
    let devices: Vec<(BranchId, f64)> = if active {
        vec![(cfg.master_branch, cfg.leakage_x), (cfg.slave_branch, cfg.leakage_x)]
    } else {
        Vec::new()
    };
    let prefault = PreparedNetwork::new(&s.grid, None, &devices)?;
    let faulted = PreparedNetwork::new(&s.grid, Some(&s.fault), &devices)?;

    let steps = s.step_count();
    let k_fault = s.fault_step();
    let preset = cfg.preset_impedance();
    let mut state = IpfcState::new(cfg);
    let mut trace = RelayTrace::new(k_fault as f64 * s.dt);
    let mut log = Vec::with_capacity(steps);

    for k in 0..steps {
        let t = k as f64 * s.dt;
        let is_faulted = k >= k_fault;
        let abort = |cause: Error| Error::RunAborted {
            step: k,
            t,
            cause: Box::new(cause),
        };
        let net = if is_faulted { &faulted } else { &prefault };
        let (v1, v2) = if active {
            state.injections()
        } else {
            (Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0))
        };
        let injections: Vec<SeriesInjection> = devices
            .iter()
            .zip([v1, v2])
            .map(|(&(branch, leakage_x), v_inject)| SeriesInjection {
                branch,
                v_inject,
                leakage_x,
            })
            .collect();
        let sol = net.solve(&injections, t).map_err(abort)?;

        let (v, i) = relay_point_quantities(&sol, s.relay.protected_branch, s.relay.relay_end)
            .map_err(abort)?;
        match apparent_impedance(&v, &i, &s.relay, s.fault.kind) {
            Ok(m) => trace.push(t, m, &s.relay),
            Err(Error::NoMeasurableLoop { .. }) => {}
            Err(e) => return Err(abort(e)),
        }

        let m1 = line_measurement(&sol, cfg.master_branch, v1, cfg.leakage_x).map_err(abort)?;
        let m2 = line_measurement(&sol, cfg.slave_branch, v2, cfg.leakage_x).map_err(abort)?;
        if !active {
            log.push(IpfcLogRow {
                t,
                m1: 0.0,
                alpha1_deg: 0.0,
                m2: 0.0,
                alpha2_deg: 0.0,
                vdc: cfg.setpoints.vdc_ref,
                pse1: 0.0,
                pse2: 0.0,
                pnet1: m1.p_net,
                qnet1: m1.q_net,
                pnet2: m2.p_net,
            });
            continue;
        }
        state.pse1 = vsc_terminal_power(v1, m1.i_line).0;
        state.pse2 = vsc_terminal_power(v2, m2.i_line).0;
        log.push(IpfcLogRow {
            t,
            m1: state.m1,
            alpha1_deg: state.alpha1,
            m2: state.m2,
            alpha2_deg: state.alpha2,
            vdc: state.vdc,
            pse1: state.pse1,
            pse2: state.pse2,
            pnet1: m1.p_net,
            qnet1: m1.q_net,
            pnet2: m2.p_net,
        });

        state = state
            .dc_link_step(cfg.c_dc, cfg.vdc_floor, s.dt)
            .map_err(abort)?;
        if !(is_faulted && cfg.freezes_on_fault()) {
            state = match preset {
                Some(z) => state.preset_step(z, &m1, cfg.m_max),
                None => state.master_step(&cfg.setpoints, &m1, cfg.m_max, s.dt),
            };
            state = state.slave_step(&cfg.setpoints, &m2, cfg.m_max, s.dt);
        }
        state.align_frames(m1.i_line, m2.i_line, cfg.current_floor);
    }

    let settled = settled_impedance(&trace, &s.relay).ok();
    Ok(RunResult {
        provenance: Provenance {
            config_hash: s.config_hash(),
            tool_version: TOOL_VERSION,
        },
        scenario: s.clone(),
        trace,
        ipfc_log: log,
        verdict: None,
        steps,
        settled,
    })
}

#[derive(Debug, Clone)]
pub struct PairResult {
    pub baseline: RunResult,
    pub variant: RunResult,
    pub verdict: ReachVerdict,
}

/// Runs two scenarios that differ only in their converter settings and
/// classifies the variant against the baseline.
pub fn run_pair(baseline: &Scenario, variant: &Scenario) -> Result<PairResult> {
    if !baseline.same_study(variant) {
        return Err(Error::Config(
            "paired scenarios must share grid, fault, timing and relay settings".into(),
        ));
    }
    let (b, v) = rayon::join(|| run_scenario(baseline), || run_scenario(variant));
    let (b, mut v) = (b?, v?);
    let verdict = classify_reach(&b.trace, &v.trace, &baseline.relay)?;
    v.verdict = Some(verdict);
    Ok(PairResult {
        baseline: b,
        variant: v,
        verdict,
    })
}

// ---------------------------------------------------------------------------
// Reference study
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct SuiteEntry {
    pub mode: IpfcMode,
    pub expected: ReachClass,
    pub run: RunResult,
    pub verdict: ReachVerdict,
}

impl SuiteEntry {
    /// Direction and size of the change the mode is expected to produce.
    pub fn matches_expectation(&self, tolerance: f64) -> bool {
        let v = &self.verdict;
        let class_ok = v.classification == self.expected;
        let delta_ok = match self.mode {
            IpfcMode::PresetQInject => v.relative_delta_x() < -tolerance,
            IpfcMode::PresetQAbsorb => v.relative_delta_x() > tolerance,
            IpfcMode::PresetPInject => v.relative_delta_r() < -tolerance,
            IpfcMode::PresetPAbsorb => v.relative_delta_r() > tolerance,
            _ => true,
        };
        class_ok && delta_ok
    }
}

pub fn expected_class(mode: IpfcMode) -> ReachClass {
    match mode {
        IpfcMode::PresetQInject | IpfcMode::PresetPInject => ReachClass::OverReachTendency,
        IpfcMode::PresetQAbsorb | IpfcMode::PresetPAbsorb => ReachClass::UnderReachTendency,
        _ => ReachClass::Nominal,
    }
}

/// Runs the off baseline and the four single-exchange presets.
pub fn reproduce_study(freeze_on_fault: bool) -> Result<Vec<SuiteEntry>> {
    let runs: Vec<Result<RunResult>> = IpfcMode::STUDY_SUITE
        .par_iter()
        .map(|&mode| {
            let mut s = study_base_scenario(mode);
            s.ipfc.freeze_on_fault = freeze_on_fault;
            run_scenario(&s)
        })
        .collect();
    let runs: Vec<RunResult> = runs.into_iter().collect::<Result<_>>()?;
    let baseline = &runs[0];
    runs.iter()
        .map(|r| {
            let verdict = classify_reach(&baseline.trace, &r.trace, &r.scenario.relay)?;
            let mut run = r.clone();
            run.verdict = Some(verdict);
            Ok(SuiteEntry {
                mode: r.scenario.ipfc.mode,
                expected: expected_class(r.scenario.ipfc.mode),
                run,
                verdict,
            })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Sweeps
// ---------------------------------------------------------------------------

/// One `--vary` clause: `section.key=start:stop:step`, `section.key=a,b,c`
/// or `section.key=random:lo:hi:count`.
#[derive(Debug, Clone, PartialEq)]
pub struct VarySpec {
    pub key: String,
    pub values: Vec<toml::Value>,
}

fn parse_scalar(s: &str) -> toml::Value {
    let s = s.trim();
    if let Ok(i) = s.parse::<i64>() {
        toml::Value::Integer(i)
    } else if let Ok(f) = s.parse::<f64>() {
        toml::Value::Float(f)
    } else if let Ok(b) = s.parse::<bool>() {
        toml::Value::Boolean(b)
    } else {
        toml::Value::String(s.to_string())
    }
}

fn round12(x: f64) -> f64 {
    if x == 0.0 {
        return 0.0;
    }
    let digits = 12 - x.abs().log10().ceil() as i32;
    let scale = 10f64.powi(digits);
    (x * scale).round() / scale
}

impl VarySpec {
    pub fn parse(spec: &str, seed: u64) -> Result<Self> {
        let bad = |why: &str| Error::Config(format!("--vary {spec}: {why}"));
        let (key, rhs) = spec.split_once('=').ok_or_else(|| bad("expected key=values"))?;
        let key = key.trim().to_string();
        if key.split('.').count() != 2 {
            return Err(bad("key must be section.field"));
        }
        let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad("not a number"));
        let values: Vec<toml::Value> = if let Some(rest) = rhs.strip_prefix("random:") {
            let parts: Vec<&str> = rest.split(':').collect();
            if parts.len() != 3 {
                return Err(bad("random form is random:lo:hi:count"));
            }
            let (lo, hi) = (num(parts[0])?, num(parts[1])?);
            let count: usize = parts[2].trim().parse().map_err(|_| bad("bad count"))?;
            if !(lo < hi) {
                return Err(bad("need lo < hi"));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..count)
                .map(|_| toml::Value::Float(rng.random_range(lo..hi)))
                .collect()
        } else if rhs.contains(':') {
            let parts: Vec<&str> = rhs.split(':').collect();
            if parts.len() != 3 {
                return Err(bad("range form is start:stop:step"));
            }
            let ints: Option<Vec<i64>> = parts.iter().map(|p| p.trim().parse().ok()).collect();
            match ints {
                Some(v) if v[2] > 0 => (v[0]..=v[1])
                    .step_by(v[2] as usize)
                    .map(toml::Value::Integer)
                    .collect(),
                _ => {
                    let (a, b, st) = (num(parts[0])?, num(parts[1])?, num(parts[2])?);
                    if !(st > 0.0) || b < a {
                        return Err(bad("need step > 0 and stop >= start"));
                    }
                    let n = ((b - a) / st + 1e-9).floor() as usize;
                    (0..=n)
                        .map(|k| toml::Value::Float(round12(a + k as f64 * st)))
                        .collect()
                }
            }
        } else {
            rhs.split(',').map(parse_scalar).collect()
        };
        if values.is_empty() {
            return Err(bad("no values"));
        }
        Ok(Self { key, values })
    }
}

fn render_value(v: &toml::Value) -> String {
    match v {
        toml::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

#[derive(Debug, Clone)]
pub struct SweepCase {
    pub index: usize,
    pub label: String,
    pub scenario: Scenario,
}

/// Expands a template into the cartesian product of all vary clauses.
pub fn expand_sweep(
    template: &toml::Table,
    base_dir: Option<&Path>,
    specs: &[VarySpec],
) -> Result<Vec<SweepCase>> {
    let mut combos: Vec<Vec<(String, toml::Value)>> = vec![Vec::new()];
    for spec in specs {
        combos = combos
            .into_iter()
            .flat_map(|c| {
                spec.values.iter().map(move |v| {
                    let mut c = c.clone();
                    c.push((spec.key.clone(), v.clone()));
                    c
                })
            })
            .collect();
    }
    combos
        .into_iter()
        .enumerate()
        .map(|(index, assignment)| {
            let mut table = template.clone();
            for (key, value) in &assignment {
                let (section, field) = key.split_once('.').expect("validated key");
                let entry = table
                    .entry(section.to_string())
                    .or_insert_with(|| toml::Value::Table(toml::Table::new()));
                let toml::Value::Table(t) = entry else {
                    return Err(Error::Config(format!("[{section}] is not a table")));
                };
                t.insert(field.to_string(), value.clone());
            }
            let label = assignment
                .iter()
                .map(|(k, v)| format!("{k}={}", render_value(v)))
                .collect::<Vec<_>>()
                .join(" ");
            let mut scenario = Scenario::from_table(table, base_dir)?;
            scenario.name = format!("{}#{index}", scenario.name);
            Ok(SweepCase {
                index,
                label,
                scenario,
            })
        })
        .collect()
}

pub fn run_sweep(cases: &[SweepCase]) -> Vec<Result<RunResult>> {
    cases.par_iter().map(|c| run_scenario(&c.scenario)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vary_range_and_list() {
        let v = VarySpec::parse("fault.n=0.1:0.3:0.1", 0).unwrap();
        assert_eq!(
            v.values,
            vec![toml::Value::Float(0.1), toml::Value::Float(0.2), toml::Value::Float(0.3)]
        );
        let v = VarySpec::parse("fault.kind=three_phase,line_line", 0).unwrap();
        assert_eq!(v.values[1], toml::Value::String("line_line".into()));
        let v = VarySpec::parse("fault.branch=1:7:3", 0).unwrap();
        assert_eq!(v.values.len(), 3);
        assert!(VarySpec::parse("n=0.1", 0).is_err());
    }

    #[test]
    fn random_vary_is_seeded() {
        let a = VarySpec::parse("fault.rf=random:0:0.05:5", 7).unwrap();
        let b = VarySpec::parse("fault.rf=random:0:0.05:5", 7).unwrap();
        let c = VarySpec::parse("fault.rf=random:0:0.05:5", 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn timing_invariants_are_checked() {
        let mut s = study_base_scenario(IpfcMode::Off);
        s.dt = 0.02;
        assert!(matches!(s.validate(), Err(Error::Config(_))));
        let mut s = study_base_scenario(IpfcMode::Off);
        s.t_fault = 4.0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn step_count_is_floor_of_span() {
        let s = study_base_scenario(IpfcMode::Off);
        assert_eq!(s.step_count(), 3500);
        assert_eq!(s.fault_step(), 3000);
    }

    #[test]
    fn scenario_parses_with_defaults() {
        let s = Scenario::from_toml_str(
            r#"
            [scenario]
            name = "t"
            [fault]
            kind = "single_line_ground"
            branch = 3
            n = 0.5
            "#,
            None,
        )
        .unwrap();
        assert_eq!(s.ipfc.mode, IpfcMode::Off);
        assert_eq!(s.relay.protected_branch, BranchId(3));
        assert_eq!(s.known_n(), Some(0.5));
        assert!(Scenario::from_toml_str("[scenario]\nbogus = 1\n[fault]\nkind='line_line'\nbranch=1\nn=0.1", None).is_err());
    }

    #[test]
    fn pair_rejects_different_faults() {
        let a = study_base_scenario(IpfcMode::Off);
        let mut b = study_base_scenario(IpfcMode::PresetQInject);
        b.fault.n = 0.5;
        assert!(matches!(run_pair(&a, &b), Err(Error::Config(_))));
    }
}
