//! Prefault and faulted network solutions in the sequence frame.
//!
//! Each sequence network is factorized once per topology. The prefault
//! (open-circuit) solution comes from the positive network alone; a fault
//! is applied through the Thevenin impedances seen from the fault node in
//! each network, and bus voltages follow by superposition.
//!
//! Series converter injections are balanced EMFs placed at the `from` end
//! of a branch, in series with the branch and an optional coupling
//! leakage reactance. They are stamped as a Norton pair, so the nodal
//! matrices stay bus-sized.

use std::collections::BTreeMap;

use num_complex::Complex64;
use serde::Deserialize;

use crate::error::{Error, GridError, Result};
use crate::grid::{
    build_sequence_admittance_with_series, BranchId, BusId, GridModel, SequenceAdmittance,
    SplitBranch,
};
use crate::linalg::{CVector, Factorized};
use crate::phasor::{Phasor, Sequence, SequenceSet};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultKind {
    ThreePhase,
    SingleLineGround,
    LineLine,
    DoubleLineGround,
}

impl FaultKind {
    pub const ALL: [FaultKind; 4] = [
        FaultKind::ThreePhase,
        FaultKind::SingleLineGround,
        FaultKind::LineLine,
        FaultKind::DoubleLineGround,
    ];

    pub fn involves_ground(self) -> bool {
        matches!(self, FaultKind::SingleLineGround | FaultKind::DoubleLineGround)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FaultKind::ThreePhase => "three_phase",
            FaultKind::SingleLineGround => "single_line_ground",
            FaultKind::LineLine => "line_line",
            FaultKind::DoubleLineGround => "double_line_ground",
        }
    }
}

/// Shunt fault on a branch at fraction `n` from its `from` end.
///
/// Single-line-to-ground faults involve phase a; line-line and
/// double-line-to-ground faults involve phases b and c. For the latter,
/// b and c are bolted together and `rf` sits between them and ground.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaultSpec {
    pub kind: FaultKind,
    pub branch: BranchId,
    pub n: f64,
    pub rf: f64,
}

impl FaultSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.n) {
            return Err(GridError::SplitOutOfRange(self.n).into());
        }
        if !(self.rf >= 0.0 && self.rf.is_finite()) {
            return Err(Error::Config(format!("fault resistance {} must be >= 0", self.rf)));
        }
        Ok(())
    }
}

/// Balanced series EMF at the `from` end of a branch, rising from the bus
/// toward the line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesInjection {
    pub branch: BranchId,
    pub v_inject: Phasor,
    pub leakage_x: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BranchEnd {
    From,
    To,
}

#[derive(Debug, Clone)]
pub struct FaultPoint {
    pub bus: BusId,
    pub voltage: SequenceSet,
    /// Current leaving the network into the fault.
    pub current: SequenceSet,
}

#[derive(Debug, Clone)]
pub struct DeviceResult {
    pub branch: BranchId,
    pub v_inject: Phasor,
    pub leakage_x: f64,
    /// Series voltage drop across the device in the direction of current
    /// flow, per sequence.
    pub drop: SequenceSet,
}

#[derive(Debug, Clone)]
pub struct NetworkSolution {
    pub timestamp: f64,
    pub buses: Vec<BusId>,
    pub bus_voltages: Vec<SequenceSet>,
    /// Per branch (or branch segment), current flowing from `from` to `to`.
    pub branch_currents: BTreeMap<BranchId, SequenceSet>,
    pub branch_ends: BTreeMap<BranchId, (BusId, BusId)>,
    /// Original branch id to its (near, far) segments when split.
    pub segments: BTreeMap<BranchId, (BranchId, BranchId)>,
    pub fault: Option<FaultPoint>,
    pub devices: Vec<DeviceResult>,
}

impl NetworkSolution {
    pub fn bus_voltage(&self, bus: BusId) -> Option<SequenceSet> {
        let k = self.buses.iter().position(|&b| b == bus)?;
        Some(self.bus_voltages[k])
    }

    pub fn branch_current(&self, branch: BranchId) -> Option<SequenceSet> {
        self.branch_currents.get(&branch).copied()
    }

    pub fn device(&self, branch: BranchId) -> Option<&DeviceResult> {
        self.devices.iter().find(|d| d.branch == branch)
    }

    /// Segment of `branch` adjacent to `end`, resolving splits.
    fn segment_at(&self, branch: BranchId, end: BranchEnd) -> BranchId {
        match (self.segments.get(&branch), end) {
            (Some(&(near, _)), BranchEnd::From) => near,
            (Some(&(_, far)), BranchEnd::To) => far,
            (None, _) => branch,
        }
    }
}

/// Bus voltage at a branch end and the current entering the branch there.
pub fn relay_point_quantities(
    sol: &NetworkSolution,
    branch: BranchId,
    end: BranchEnd,
) -> Result<(SequenceSet, SequenceSet)> {
    let seg = sol.segment_at(branch, end);
    let unknown = || Error::Grid(GridError::UnknownBranch(branch));
    let &(from, to) = sol.branch_ends.get(&seg).ok_or_else(unknown)?;
    let current = sol.branch_current(seg).ok_or_else(unknown)?;
    let (bus, i) = match end {
        BranchEnd::From => (from, current),
        BranchEnd::To => (to, current * Complex64::new(-1.0, 0.0)),
    };
    let v = sol.bus_voltage(bus).ok_or_else(unknown)?;
    Ok((v, i))
}

struct PreparedFault {
    spec: FaultSpec,
    node: usize,
    /// Thevenin impedance column of the fault node, per sequence.
    zcol: [CVector; 3],
}

struct Device {
    branch: BranchId,
    leakage_x: f64,
    from_node: usize,
    to_node: usize,
    /// Segment impedance plus leakage, positive sequence.
    z_total: Phasor,
}

/// Network factorized for a fixed topology, fault and device placement.
pub struct PreparedNetwork {
    model: GridModel,
    split: Option<SplitBranch>,
    adm: SequenceAdmittance,
    lu: [Factorized; 3],
    fault: Option<PreparedFault>,
    devices: Vec<Device>,
    /// Source Norton currents (positive sequence).
    source_current: CVector,
}

impl std::fmt::Debug for PreparedNetwork {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PreparedNetwork")
            .field("nodes", &self.adm.node_count)
            .field("faulted", &self.fault.is_some())
            .field("devices", &self.devices.len())
            .finish()
    }
}

fn slot(seq: Sequence) -> usize {
    match seq {
        Sequence::Positive => 0,
        Sequence::Negative => 1,
        Sequence::Zero => 2,
    }
}

impl PreparedNetwork {
    /// `devices` lists (branch, leakage reactance) for each series device.
    /// When a fault is given, its branch is split and a device on that
    /// branch sits on the near segment.
    pub fn new(
        model: &GridModel,
        fault: Option<&FaultSpec>,
        devices: &[(BranchId, f64)],
    ) -> Result<Self> {
        let split = match fault {
            Some(f) => {
                f.validate()?;
                Some(model.split_branch(f.branch, f.n)?)
            }
            None => None,
        };
        let net = split.as_ref().map_or(model, |s| &s.model).clone();

        let mut extra = BTreeMap::new();
        for &(branch, leakage_x) in devices {
            if net.branch(branch).is_none() {
                return Err(GridError::UnknownBranch(branch).into());
            }
            if !(leakage_x >= 0.0 && leakage_x.is_finite()) {
                return Err(Error::Config(format!(
                    "series device on branch {branch}: leakage reactance must be >= 0"
                )));
            }
            if extra.insert(branch, Complex64::new(0.0, leakage_x)).is_some() {
                return Err(Error::Config(format!(
                    "more than one series device on branch {branch}"
                )));
            }
        }
        let adm = build_sequence_admittance_with_series(&net, &extra)?;
        let node = |bus: BusId| adm.node_of_bus[net.bus_index(bus).expect("validated bus")];

        // Floating zero-sequence islands (behind delta windings) get a unit
        // pin so the matrix is invertible; their zero-sequence voltage is 0.
        let mut y_zero = adm.y_zero.clone();
        let zero_islands = adm.islands(Sequence::Zero);
        for (members, grounded) in &zero_islands {
            if !grounded {
                y_zero[(members[0], members[0])] += Complex64::new(1.0, 0.0);
            }
        }
        let lu = [
            Factorized::new(adm.y_pos.clone(), "positive-sequence")?,
            Factorized::new(adm.y_neg.clone(), "negative-sequence")?,
            Factorized::new(y_zero, "zero-sequence")?,
        ];

        let prepared_fault = match (fault, &split) {
            (Some(spec), Some(s)) => {
                let f = node(s.aux_bus);
                if spec.kind.involves_ground() {
                    let floating = zero_islands
                        .iter()
                        .any(|(members, grounded)| !grounded && members.contains(&f));
                    if floating {
                        return Err(Error::Singular {
                            network: "zero-sequence".into(),
                            detail: format!(
                                "fault on branch {} has no zero-sequence path to ground",
                                spec.branch
                            ),
                        });
                    }
                }
                Some(PreparedFault {
                    spec: *spec,
                    node: f,
                    zcol: [
                        lu[0].inverse_column(f),
                        lu[1].inverse_column(f),
                        lu[2].inverse_column(f),
                    ],
                })
            }
            _ => None,
        };

        let mut prepared_devices = Vec::with_capacity(devices.len());
        for &(branch, leakage_x) in devices {
            let br = net.branch(branch).expect("checked above");
            let z_total = br.z1() + Complex64::new(0.0, leakage_x);
            if z_total == ZERO {
                return Err(Error::Config(format!(
                    "series device on branch {branch} sits on a zero-impedance segment"
                )));
            }
            prepared_devices.push(Device {
                branch,
                leakage_x,
                from_node: node(br.from_bus),
                to_node: node(br.to_bus),
                z_total,
            });
        }

        let mut source_current = CVector::zeros(adm.node_count);
        for s in &net.sources {
            source_current[node(s.bus)] += s.emf() * s.admittance();
        }

        Ok(Self {
            model: net,
            split,
            adm,
            lu,
            fault: prepared_fault,
            devices: prepared_devices,
            source_current,
        })
    }

    /// The (possibly split) model this network was built from.
    pub fn model(&self) -> &GridModel {
        &self.model
    }

    pub fn fault_bus(&self) -> Option<BusId> {
        self.split.as_ref().map(|s| s.aux_bus)
    }

    /// Thevenin impedance seen from the fault node, per sequence.
    pub fn thevenin_impedance(&self) -> Option<SequenceSet> {
        let f = self.fault.as_ref()?;
        Some(SequenceSet {
            pos: f.zcol[0][f.node],
            neg: f.zcol[1][f.node],
            zero: f.zcol[2][f.node],
        })
    }

    /// Solves the network for one set of injection EMFs. Each injection
    /// must match a device this network was prepared with.
    pub fn solve(&self, injections: &[SeriesInjection], timestamp: f64) -> Result<NetworkSolution> {
        let mut emf = vec![ZERO; self.devices.len()];
        for inj in injections {
            if !(inj.v_inject.re.is_finite() && inj.v_inject.im.is_finite()) {
                return Err(Error::NonFinite(format!("injection on branch {}", inj.branch)));
            }
            let k = self
                .devices
                .iter()
                .position(|d| d.branch == inj.branch && d.leakage_x == inj.leakage_x)
                .ok_or_else(|| {
                    Error::Config(format!(
                        "no series device prepared on branch {} with leakage {}",
                        inj.branch, inj.leakage_x
                    ))
                })?;
            emf[k] += inj.v_inject;
        }

        let mut rhs = self.source_current.clone();
        for (d, &e) in self.devices.iter().zip(&emf) {
            let j = e / d.z_total;
            rhs[d.from_node] -= j;
            rhs[d.to_node] += j;
        }
        let v_oc = self.lu[0].solve(&rhs);
        let n = self.adm.node_count;
        let mut v = [v_oc, CVector::zeros(n), CVector::zeros(n)];

        let mut fault_point = None;
        if let Some(f) = &self.fault {
            let vf = v[0][f.node];
            let z = [f.zcol[0][f.node], f.zcol[1][f.node], f.zcol[2][f.node]];
            let i_f = fault_currents(f.spec.kind, f.spec.rf, vf, z)?;
            for s in 0..3 {
                if i_f[s] != ZERO {
                    v[s] -= &f.zcol[s] * i_f[s];
                }
            }
            fault_point = Some((f, i_f));
        }

        let seq_at = |node: usize| SequenceSet {
            pos: v[0][node],
            neg: v[1][node],
            zero: v[2][node],
        };
        let buses: Vec<BusId> = self.model.buses.iter().map(|b| b.id).collect();
        let bus_voltages: Vec<SequenceSet> =
            self.adm.node_of_bus.iter().map(|&k| seq_at(k)).collect();

        let mut branch_currents = BTreeMap::new();
        let mut branch_ends = BTreeMap::new();
        let mut zero_impedance = Vec::new();
        for br in &self.model.branches {
            branch_ends.insert(br.id, (br.from_bus, br.to_bus));
            let dev = self.devices.iter().position(|d| d.branch == br.id);
            let leak = dev.map_or(ZERO, |k| Complex64::new(0.0, self.devices[k].leakage_x));
            let a = self.adm.node_of_bus[self.model.bus_index(br.from_bus).unwrap()];
            let b = self.adm.node_of_bus[self.model.bus_index(br.to_bus).unwrap()];
            if a == b {
                zero_impedance.push(br.id);
                continue;
            }
            let mut i = SequenceSet::default();
            for seq in Sequence::ALL {
                let s = slot(seq);
                let e = if seq == Sequence::Positive {
                    dev.map_or(ZERO, |k| emf[k])
                } else {
                    ZERO
                };
                i.set(seq, (v[s][a] - v[s][b] + e) / (br.z(seq) + leak));
            }
            branch_currents.insert(br.id, i);
        }

        // A zero-impedance segment only arises from a split at an end of the
        // line; its current follows from KCL at the auxiliary bus.
        let fault_current = fault_point.map_or(SequenceSet::default(), |(_, i)| SequenceSet {
            pos: i[0],
            neg: i[1],
            zero: i[2],
        });
        for id in zero_impedance {
            let s = self.split.as_ref().ok_or_else(|| {
                Error::Numerical(format!("branch {id} has zero impedance"))
            })?;
            let current = if id == s.near {
                branch_currents.get(&s.far).map(|&far| far + fault_current)
            } else {
                branch_currents.get(&s.near).map(|&near| near - fault_current)
            }
            .ok_or_else(|| Error::Numerical("both split segments have zero impedance".into()))?;
            branch_currents.insert(id, current);
        }

        let devices = self
            .devices
            .iter()
            .zip(&emf)
            .map(|(d, &e)| {
                let i = branch_currents[&d.branch];
                let jx = Complex64::new(0.0, d.leakage_x);
                DeviceResult {
                    branch: d.branch,
                    v_inject: e,
                    leakage_x: d.leakage_x,
                    drop: SequenceSet {
                        pos: -e + jx * i.pos,
                        neg: jx * i.neg,
                        zero: jx * i.zero,
                    },
                }
            })
            .collect();

        let mut segments = BTreeMap::new();
        if let Some(s) = &self.split {
            segments.insert(s.original, (s.near, s.far));
        }

        Ok(NetworkSolution {
            timestamp,
            buses,
            bus_voltages,
            branch_currents,
            branch_ends,
            segments,
            fault: fault_point.map(|(f, _)| FaultPoint {
                bus: self.split.as_ref().unwrap().aux_bus,
                voltage: seq_at(f.node),
                current: fault_current,
            }),
            devices,
        })
    }

    /// Largest sequence-current mismatch over buses without a source.
    pub fn kcl_mismatch(&self, sol: &NetworkSolution) -> f64 {
        let mut worst: f64 = 0.0;
        for (k, bus) in self.model.buses.iter().enumerate() {
            if self.model.sources.iter().any(|s| s.bus == bus.id) {
                continue;
            }
            let v = sol.bus_voltages[k];
            let mut sum = SequenceSet::default();
            for (id, &(from, to)) in &sol.branch_ends {
                let i = sol.branch_currents[id];
                if from == bus.id {
                    sum = sum + i;
                }
                if to == bus.id {
                    sum = sum - i;
                }
            }
            for t in &self.model.transformers {
                let y = Complex64::new(0.0, t.x_leakage).inv();
                let other = if t.from_bus == bus.id {
                    t.to_bus
                } else if t.to_bus == bus.id {
                    t.from_bus
                } else {
                    continue;
                };
                let vo = sol.bus_voltage(other).unwrap();
                sum.pos += (v.pos - vo.pos) * y;
                sum.neg += (v.neg - vo.neg) * y;
                if t.zero_sequence_path == crate::grid::ZeroSequencePath::GroundedThrough
                    && t.to_bus == bus.id
                {
                    sum.zero += v.zero * y;
                }
            }
            for l in self.model.loads.iter().filter(|l| l.bus == bus.id) {
                sum.pos += v.pos * l.admittance();
                sum.neg += v.neg * l.admittance();
            }
            if let Some(fp) = &sol.fault {
                if fp.bus == bus.id {
                    sum = sum + fp.current;
                }
            }
            worst = worst.max(sum.pos.norm()).max(sum.neg.norm()).max(sum.zero.norm());
        }
        worst
    }
}

/// Sequence currents into the fault for prefault fault-node voltage `vf`
/// and Thevenin impedances `z` (positive, negative, zero).
fn fault_currents(kind: FaultKind, rf: f64, vf: Phasor, z: [Phasor; 3]) -> Result<[Phasor; 3]> {
    let [z1, z2, z0] = z;
    let rf = Complex64::new(rf, 0.0);
    let check = |d: Phasor| {
        if d.norm() < 1e-14 {
            Err(Error::Singular {
                network: "fault interconnection".into(),
                detail: "zero total loop impedance".into(),
            })
        } else {
            Ok(d)
        }
    };
    Ok(match kind {
        FaultKind::ThreePhase => [vf / check(z1 + rf)?, ZERO, ZERO],
        FaultKind::SingleLineGround => {
            let i = vf / check(z1 + z2 + z0 + rf * 3.0)?;
            [i, i, i]
        }
        FaultKind::LineLine => {
            let i = vf / check(z1 + z2 + rf)?;
            [i, -i, ZERO]
        }
        FaultKind::DoubleLineGround => {
            let zg = z0 + rf * 3.0;
            let sum = check(z2 + zg)?;
            let i1 = vf / check(z1 + z2 * zg / sum)?;
            [i1, -i1 * zg / sum, -i1 * z2 / sum]
        }
    })
}

/// Balanced solution without a fault.
pub fn solve_prefault(model: &GridModel, injections: &[SeriesInjection]) -> Result<NetworkSolution> {
    let devices: Vec<_> = injections.iter().map(|i| (i.branch, i.leakage_x)).collect();
    PreparedNetwork::new(model, None, &devices)?.solve(injections, 0.0)
}

pub fn apply_fault(
    model: &GridModel,
    fault: &FaultSpec,
    injections: &[SeriesInjection],
) -> Result<NetworkSolution> {
    let devices: Vec<_> = injections.iter().map(|i| (i.branch, i.leakage_x)).collect();
    PreparedNetwork::new(model, Some(fault), &devices)?.solve(injections, 0.0)
}

/// Per-sequence residuals of the relay-to-fault loop along the near
/// segment of the faulted branch:
/// `V_s − (V_pq + n·Z·I_s + V_f)` for positive, negative and zero.
pub fn loop_residuals(
    model: &GridModel,
    fault: &FaultSpec,
    sol: &NetworkSolution,
) -> Result<SequenceSet> {
    let fp = sol
        .fault
        .as_ref()
        .ok_or_else(|| Error::Config("solution has no fault".into()))?;
    let (v, i) = relay_point_quantities(sol, fault.branch, BranchEnd::From)?;
    let br = model
        .branch(fault.branch)
        .ok_or(GridError::UnknownBranch(fault.branch))?;
    let drop = sol
        .device(fault.branch)
        .map_or(SequenceSet::default(), |d| d.drop);
    let mut r = SequenceSet::default();
    for seq in Sequence::ALL {
        let expected = drop.get(seq) + br.z(seq) * fault.n * i.get(seq) + fp.voltage.get(seq);
        r.set(seq, v.get(seq) - expected);
    }
    Ok(r)
}
