//! Static transmission-system description and sequence admittance matrices.
//!
//! A grid is loaded from a TOML file with the sections `[system]`,
//! `[[bus]]`, `[[branch]]`, `[[transformer]]`, `[[source]]` and `[[load]]`.
//! All impedances are per-unit on the system base. See `data/grid8.conf`
//! for the shipped 8-bus system.
//!
//! Modelling conventions:
//!
//! * lines are lumped series impedances (no shunt charging);
//! * sources are voltage-behind-reactance, stamped in the positive and
//!   negative networks; they appear in the zero network only when
//!   `grounded = true`;
//! * a transformer with `zero_sequence = "grounded_through"` is a delta /
//!   grounded-star unit whose grounded star is on `to`; it gives `to` a
//!   zero-sequence path to ground through its leakage reactance;
//! * loads are constant impedances at nominal voltage, ungrounded.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::path::Path;

use num_complex::Complex64;
use serde::Deserialize;

use crate::error::{Error, GridError, Result};
use crate::linalg::CMatrix;
use crate::phasor::{Phasor, PhasorExt, Sequence};

const SHIPPED_GRID: &str = include_str!("../data/grid8.conf");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Deserialize)]
#[serde(transparent)]
pub struct BusId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Deserialize)]
#[serde(transparent)]
pub struct BranchId(pub u32);

impl fmt::Display for BusId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Display for BranchId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bus {
    pub id: BusId,
    pub name: String,
    pub base_kv: f64,
}

/// Transmission line (or line segment) with sequence impedances.
#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub id: BranchId,
    pub from_bus: BusId,
    pub to_bus: BusId,
    pub r1: f64,
    pub x1: f64,
    pub r0: f64,
    pub x0: f64,
    pub rating_kv: f64,
}

impl Branch {
    pub fn z1(&self) -> Phasor {
        Complex64::new(self.r1, self.x1)
    }

    pub fn z0(&self) -> Phasor {
        Complex64::new(self.r0, self.x0)
    }

    /// Series impedance in the given sequence network (negative equals positive).
    pub fn z(&self, seq: Sequence) -> Phasor {
        match seq {
            Sequence::Zero => self.z0(),
            _ => self.z1(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZeroSequencePath {
    Blocked,
    GroundedThrough,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransformerLink {
    pub from_bus: BusId,
    pub to_bus: BusId,
    pub x_leakage: f64,
    pub zero_sequence_path: ZeroSequencePath,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Source {
    pub bus: BusId,
    pub x_internal: f64,
    pub voltage_setpoint: f64,
    pub angle_deg: f64,
    pub grounded: bool,
}

impl Source {
    pub fn emf(&self) -> Phasor {
        Phasor::from_polar_deg(self.voltage_setpoint, self.angle_deg)
    }

    pub fn admittance(&self) -> Phasor {
        Complex64::new(0.0, self.x_internal).inv()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Load {
    pub bus: BusId,
    pub p: f64,
    pub q: f64,
}

impl Load {
    /// Constant shunt admittance drawing `p + jq` at 1 p.u. voltage.
    pub fn admittance(&self) -> Phasor {
        Complex64::new(self.p, -self.q)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridModel {
    pub base_mva: f64,
    pub base_kv: f64,
    pub frequency_hz: f64,
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    pub transformers: Vec<TransformerLink>,
    pub sources: Vec<Source>,
    pub loads: Vec<Load>,
}

// ---------------------------------------------------------------------------
// Config schema
// ---------------------------------------------------------------------------

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridFile {
    system: SystemSection,
    #[serde(default)]
    bus: Vec<BusEntry>,
    #[serde(default)]
    branch: Vec<BranchEntry>,
    #[serde(default)]
    transformer: Vec<TransformerEntry>,
    #[serde(default)]
    source: Vec<SourceEntry>,
    #[serde(default)]
    load: Vec<LoadEntry>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SystemSection {
    base_mva: f64,
    base_kv: f64,
    #[serde(default = "default_frequency")]
    frequency_hz: f64,
    /// Z0/Z1 ratio used for branches that omit r0/x0.
    #[serde(default = "default_zero_ratio")]
    zero_sequence_ratio: f64,
}

fn default_frequency() -> f64 {
    50.0
}

fn default_zero_ratio() -> f64 {
    3.0
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct BusEntry {
    id: BusId,
    #[serde(default)]
    name: Option<String>,
    #[serde(default)]
    base_kv: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct BranchEntry {
    id: BranchId,
    from: BusId,
    to: BusId,
    r1: f64,
    x1: f64,
    #[serde(default)]
    r0: Option<f64>,
    #[serde(default)]
    x0: Option<f64>,
    #[serde(default)]
    rating_kv: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TransformerEntry {
    from: BusId,
    to: BusId,
    x: f64,
    zero_sequence: ZeroSequencePath,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SourceEntry {
    bus: BusId,
    x_internal: f64,
    #[serde(default = "one")]
    voltage: f64,
    #[serde(default)]
    angle_deg: f64,
    #[serde(default)]
    grounded: bool,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LoadEntry {
    bus: BusId,
    p: f64,
    q: f64,
}

/// Reads and validates a grid file.
pub fn load_grid(path: impl AsRef<Path>) -> Result<GridModel> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(GridModel::from_config_str(&text)?)
}

impl GridModel {
    /// The shipped 8-bus, 7-line system.
    pub fn shipped_default() -> Self {
        Self::from_config_str(SHIPPED_GRID).expect("shipped grid file is valid")
    }

    pub fn shipped_config_text() -> &'static str {
        SHIPPED_GRID
    }

    pub fn from_config_str(text: &str) -> Result<Self, GridError> {
        let file: GridFile =
            toml::from_str(text).map_err(|e| GridError::Schema(e.message().to_string()))?;
        let sys = &file.system;
        let ratio = sys.zero_sequence_ratio;
        let model = GridModel {
            base_mva: sys.base_mva,
            base_kv: sys.base_kv,
            frequency_hz: sys.frequency_hz,
            buses: file
                .bus
                .iter()
                .map(|b| Bus {
                    id: b.id,
                    name: b.name.clone().unwrap_or_else(|| format!("bus{}", b.id)),
                    base_kv: b.base_kv.unwrap_or(sys.base_kv),
                })
                .collect(),
            branches: file
                .branch
                .iter()
                .map(|b| Branch {
                    id: b.id,
                    from_bus: b.from,
                    to_bus: b.to,
                    r1: b.r1,
                    x1: b.x1,
                    r0: b.r0.unwrap_or(ratio * b.r1),
                    x0: b.x0.unwrap_or(ratio * b.x1),
                    rating_kv: b.rating_kv.unwrap_or(sys.base_kv),
                })
                .collect(),
            transformers: file
                .transformer
                .iter()
                .map(|t| TransformerLink {
                    from_bus: t.from,
                    to_bus: t.to,
                    x_leakage: t.x,
                    zero_sequence_path: t.zero_sequence,
                })
                .collect(),
            sources: file
                .source
                .iter()
                .map(|s| Source {
                    bus: s.bus,
                    x_internal: s.x_internal,
                    voltage_setpoint: s.voltage,
                    angle_deg: s.angle_deg,
                    grounded: s.grounded,
                })
                .collect(),
            loads: file
                .load
                .iter()
                .map(|l| Load {
                    bus: l.bus,
                    p: l.p,
                    q: l.q,
                })
                .collect(),
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<(), GridError> {
        let invalid = |element: String, reason: &str| GridError::InvalidValue {
            element,
            reason: reason.to_string(),
        };
        if !(self.base_mva > 0.0 && self.base_kv > 0.0 && self.frequency_hz > 0.0) {
            return Err(invalid("system".into(), "bases and frequency must be positive"));
        }
        let mut seen = BTreeSet::new();
        for bus in &self.buses {
            if !seen.insert(bus.id) {
                return Err(GridError::DuplicateBus(bus.id));
            }
        }
        let known = |element: String, bus: BusId| {
            if seen.contains(&bus) {
                Ok(())
            } else {
                Err(GridError::UnknownBus { element, bus })
            }
        };
        let mut branch_ids = BTreeSet::new();
        for br in &self.branches {
            let name = format!("branch {}", br.id);
            if !branch_ids.insert(br.id) {
                return Err(GridError::DuplicateBranch(br.id));
            }
            known(name.clone(), br.from_bus)?;
            known(name.clone(), br.to_bus)?;
            if br.from_bus == br.to_bus {
                return Err(invalid(name, "both ends on the same bus"));
            }
            if ![br.r1, br.x1, br.r0, br.x0, br.rating_kv].iter().all(|v| v.is_finite()) {
                return Err(invalid(name, "non-finite parameter"));
            }
            if br.x1 <= 0.0 {
                return Err(GridError::NonPositiveReactance {
                    element: name,
                    value: br.x1,
                });
            }
            if br.r1 < 0.0 || br.r0 < 0.0 {
                return Err(invalid(name, "resistance must be non-negative"));
            }
            if br.z0().norm() < br.z1().norm() {
                return Err(invalid(name, "|Z0| must not be smaller than |Z1|"));
            }
        }
        for (k, t) in self.transformers.iter().enumerate() {
            let name = format!("transformer {}", k + 1);
            known(name.clone(), t.from_bus)?;
            known(name.clone(), t.to_bus)?;
            if !(t.x_leakage > 0.0) {
                return Err(GridError::NonPositiveReactance {
                    element: name,
                    value: t.x_leakage,
                });
            }
        }
        if self.sources.is_empty() {
            return Err(GridError::Schema("at least one [[source]] is required".into()));
        }
        let mut source_buses = BTreeSet::new();
        for s in &self.sources {
            let name = format!("source at bus {}", s.bus);
            known(name.clone(), s.bus)?;
            if !source_buses.insert(s.bus) {
                return Err(invalid(name, "more than one source on the bus"));
            }
            if !(s.x_internal > 0.0) {
                return Err(GridError::NonPositiveReactance {
                    element: name,
                    value: s.x_internal,
                });
            }
            if !(s.voltage_setpoint > 0.0) || !s.angle_deg.is_finite() {
                return Err(invalid(name, "voltage setpoint must be positive"));
            }
        }
        for l in &self.loads {
            let name = format!("load at bus {}", l.bus);
            known(name.clone(), l.bus)?;
            if !(l.p >= 0.0) || !l.q.is_finite() {
                return Err(invalid(name, "p must be non-negative and q finite"));
            }
        }
        self.check_connected()
    }

    fn check_connected(&self) -> Result<(), GridError> {
        let Some(first) = self.buses.first() else {
            return Err(GridError::Schema("no buses defined".into()));
        };
        let mut adjacency: BTreeMap<BusId, Vec<BusId>> = BTreeMap::new();
        let edges = self
            .branches
            .iter()
            .map(|b| (b.from_bus, b.to_bus))
            .chain(self.transformers.iter().map(|t| (t.from_bus, t.to_bus)));
        for (a, b) in edges {
            adjacency.entry(a).or_default().push(b);
            adjacency.entry(b).or_default().push(a);
        }
        let mut reached = BTreeSet::from([first.id]);
        let mut queue = VecDeque::from([first.id]);
        while let Some(bus) = queue.pop_front() {
            for &next in adjacency.get(&bus).into_iter().flatten() {
                if reached.insert(next) {
                    queue.push_back(next);
                }
            }
        }
        match self.buses.iter().find(|b| !reached.contains(&b.id)) {
            Some(b) => Err(GridError::Disconnected(b.id)),
            None => Ok(()),
        }
    }

    pub fn bus_index(&self, id: BusId) -> Option<usize> {
        self.buses.iter().position(|b| b.id == id)
    }

    pub fn branch(&self, id: BranchId) -> Option<&Branch> {
        self.branches.iter().find(|b| b.id == id)
    }

    pub fn branch_index(&self, id: BranchId) -> Option<usize> {
        self.branches.iter().position(|b| b.id == id)
    }

    /// Inserts an auxiliary bus at fraction `n` along a branch, measured from
    /// its `from` end. The near segment keeps the branch id; the far
    /// segment gets a fresh one.
    pub fn split_branch(&self, id: BranchId, n: f64) -> Result<SplitBranch, GridError> {
        if !(0.0..=1.0).contains(&n) {
            return Err(GridError::SplitOutOfRange(n));
        }
        let idx = self.branch_index(id).ok_or(GridError::UnknownBranch(id))?;
        let original = self.branches[idx].clone();
        let aux_bus = BusId(self.buses.iter().map(|b| b.id.0).max().unwrap_or(0) + 1);
        let far_id = BranchId(self.branches.iter().map(|b| b.id.0).max().unwrap_or(0) + 1);

        let mut model = self.clone();
        model.buses.push(Bus {
            id: aux_bus,
            name: format!("{}@{}", original.id, n),
            base_kv: original.rating_kv,
        });
        let near = Branch {
            to_bus: aux_bus,
            r1: n * original.r1,
            x1: n * original.x1,
            r0: n * original.r0,
            x0: n * original.x0,
            ..original.clone()
        };
        let m = 1.0 - n;
        let far = Branch {
            id: far_id,
            from_bus: aux_bus,
            r1: m * original.r1,
            x1: m * original.x1,
            r0: m * original.r0,
            x0: m * original.x0,
            ..original.clone()
        };
        model.branches[idx] = near;
        model.branches.insert(idx + 1, far);
        Ok(SplitBranch {
            model,
            original: original.id,
            aux_bus,
            near: original.id,
            far: far_id,
            n,
        })
    }
}

/// Result of [`GridModel::split_branch`].
#[derive(Debug, Clone)]
pub struct SplitBranch {
    pub model: GridModel,
    pub original: BranchId,
    pub aux_bus: BusId,
    /// Segment from the original `from` bus to the auxiliary bus.
    pub near: BranchId,
    /// Segment from the auxiliary bus to the original `to` bus.
    pub far: BranchId,
    pub n: f64,
}

// ---------------------------------------------------------------------------
// Sequence admittance
// ---------------------------------------------------------------------------

/// Nodal admittance matrices of the three sequence networks.
///
/// Matrices are indexed by electrical node. Buses joined by a branch whose
/// series impedance is exactly zero (a split at `n = 0` or `n = 1`) share a
/// node; `node_of_bus` maps `GridModel::buses` indices to node indices.
#[derive(Debug, Clone)]
pub struct SequenceAdmittance {
    pub node_of_bus: Vec<usize>,
    pub node_count: usize,
    pub y_pos: CMatrix,
    pub y_neg: CMatrix,
    pub y_zero: CMatrix,
    /// Per sequence, whether each node has a shunt path to ground.
    grounded: [Vec<bool>; 3],
}

impl SequenceAdmittance {
    pub fn matrix(&self, seq: Sequence) -> &CMatrix {
        match seq {
            Sequence::Positive => &self.y_pos,
            Sequence::Negative => &self.y_neg,
            Sequence::Zero => &self.y_zero,
        }
    }

    /// Connected islands of a sequence network (nodes linked by series
    /// elements), each flagged with whether it has a path to ground.
    pub fn islands(&self, seq: Sequence) -> Vec<(Vec<usize>, bool)> {
        let y = self.matrix(seq);
        let grounded = &self.grounded[seq_slot(seq)];
        let n = self.node_count;
        let mut seen = vec![false; n];
        let mut out = Vec::new();
        for start in 0..n {
            if seen[start] {
                continue;
            }
            seen[start] = true;
            let mut members = vec![start];
            let mut queue = VecDeque::from([start]);
            while let Some(i) = queue.pop_front() {
                for j in 0..n {
                    if !seen[j] && i != j && y[(i, j)] != Complex64::new(0.0, 0.0) {
                        seen[j] = true;
                        members.push(j);
                        queue.push_back(j);
                    }
                }
            }
            let has_ground = members.iter().any(|&i| grounded[i]);
            members.sort_unstable();
            out.push((members, has_ground));
        }
        out
    }

    /// Whether a node takes part in any element of the given network.
    pub fn node_is_stamped(&self, seq: Sequence, node: usize) -> bool {
        let y = self.matrix(seq);
        (0..self.node_count).any(|j| y[(node, j)] != Complex64::new(0.0, 0.0))
    }
}

fn seq_slot(seq: Sequence) -> usize {
    match seq {
        Sequence::Positive => 0,
        Sequence::Negative => 1,
        Sequence::Zero => 2,
    }
}

pub fn build_sequence_admittance(model: &GridModel) -> Result<SequenceAdmittance> {
    build_sequence_admittance_with_series(model, &BTreeMap::new())
}

/// As [`build_sequence_admittance`], with extra series impedance added to
/// the listed branches in every sequence (series coupling transformers).
pub fn build_sequence_admittance_with_series(
    model: &GridModel,
    extra_series: &BTreeMap<BranchId, Phasor>,
) -> Result<SequenceAdmittance> {
    let bus_count = model.buses.len();
    let index = |id: BusId| {
        model
            .bus_index(id)
            .ok_or_else(|| Error::Config(format!("unknown bus {id}")))
    };

    // Union zero-impedance branches into shared nodes.
    let mut parent: Vec<usize> = (0..bus_count).collect();
    fn root(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    let zero = Complex64::new(0.0, 0.0);
    let series_z = |br: &Branch, seq: Sequence| {
        br.z(seq) + extra_series.get(&br.id).copied().unwrap_or(zero)
    };
    for br in &model.branches {
        let z1 = series_z(br, Sequence::Positive);
        let z0 = series_z(br, Sequence::Zero);
        if z1 == zero || z0 == zero {
            if z1 != z0 {
                return Err(Error::Numerical(format!(
                    "branch {} has zero impedance in only some sequences",
                    br.id
                )));
            }
            let a = root(&mut parent, index(br.from_bus)?);
            let b = root(&mut parent, index(br.to_bus)?);
            parent[a.max(b)] = a.min(b);
        }
    }
    let mut node_ids = BTreeMap::new();
    let mut node_of_bus = Vec::with_capacity(bus_count);
    for i in 0..bus_count {
        let r = root(&mut parent, i);
        let next = node_ids.len();
        node_of_bus.push(*node_ids.entry(r).or_insert(next));
    }
    let n = node_ids.len();

    let mut y = [CMatrix::zeros(n, n), CMatrix::zeros(n, n), CMatrix::zeros(n, n)];
    let mut grounded = [vec![false; n], vec![false; n], vec![false; n]];
    let node = |id: BusId| -> Result<usize> { Ok(node_of_bus[index(id)?]) };

    let stamp_series = |y: &mut CMatrix, a: usize, b: usize, adm: Complex64| {
        y[(a, a)] += adm;
        y[(b, b)] += adm;
        y[(a, b)] -= adm;
        y[(b, a)] -= adm;
    };

    for br in &model.branches {
        let (a, b) = (node(br.from_bus)?, node(br.to_bus)?);
        if a == b {
            continue;
        }
        for seq in Sequence::ALL {
            stamp_series(&mut y[seq_slot(seq)], a, b, series_z(br, seq).inv());
        }
    }
    for t in &model.transformers {
        let (a, b) = (node(t.from_bus)?, node(t.to_bus)?);
        let adm = Complex64::new(0.0, t.x_leakage).inv();
        for seq in [Sequence::Positive, Sequence::Negative] {
            stamp_series(&mut y[seq_slot(seq)], a, b, adm);
        }
        if t.zero_sequence_path == ZeroSequencePath::GroundedThrough {
            y[2][(b, b)] += adm;
            grounded[2][b] = true;
        }
    }
    for s in &model.sources {
        let k = node(s.bus)?;
        let adm = s.admittance();
        for seq in Sequence::ALL {
            if seq == Sequence::Zero && !s.grounded {
                continue;
            }
            y[seq_slot(seq)][(k, k)] += adm;
            grounded[seq_slot(seq)][k] = true;
        }
    }
    for l in &model.loads {
        let k = node(l.bus)?;
        let adm = l.admittance();
        if adm == zero {
            continue;
        }
        for seq in [Sequence::Positive, Sequence::Negative] {
            y[seq_slot(seq)][(k, k)] += adm;
            grounded[seq_slot(seq)][k] = true;
        }
    }

    let [y_pos, y_neg, y_zero] = y;
    let adm = SequenceAdmittance {
        node_of_bus,
        node_count: n,
        y_pos,
        y_neg,
        y_zero,
        grounded,
    };
    for seq in [Sequence::Positive, Sequence::Negative] {
        if let Some((members, _)) = adm.islands(seq).into_iter().find(|(_, g)| !g) {
            return Err(Error::Singular {
                network: format!("{seq:?}").to_lowercase(),
                detail: format!("nodes {members:?} have no ground reference"),
            });
        }
    }
    Ok(adm)
}
