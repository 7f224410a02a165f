//! Distance relay measurement, Zone-1 check and reach classification.

use num_complex::Complex64;
use serde::Deserialize;

use crate::error::{Error, GridError, Result};
use crate::fault::{BranchEnd, FaultKind};
use crate::grid::{BranchId, GridModel};
use crate::phasor::{seq_012_to_abc, Phasor, SequenceSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Characteristic {
    ImpedanceCircle,
}

/// Scalar used to compare settled impedances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReachMetric {
    /// Projection of z onto the protected line's impedance angle.
    LineAngle,
    /// |z|.
    Magnitude,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelaySettings {
    pub protected_branch: BranchId,
    pub relay_end: BranchEnd,
    pub line_z1: Phasor,
    pub line_z0: Phasor,
    pub zone1_fraction: f64,
    pub characteristic: Characteristic,
    pub reach_metric: ReachMetric,
    /// Relative change in the reach metric that counts as a tendency.
    pub tolerance: f64,
    /// Trailing fraction of the post-fault samples treated as settled.
    pub settled_fraction: f64,
    pub current_floor: f64,
}

impl RelaySettings {
    pub fn for_branch(model: &GridModel, branch: BranchId) -> Result<Self> {
        let br = model.branch(branch).ok_or(GridError::UnknownBranch(branch))?;
        Ok(Self {
            protected_branch: branch,
            relay_end: BranchEnd::From,
            line_z1: br.z1(),
            line_z0: br.z0(),
            zone1_fraction: 0.8,
            characteristic: Characteristic::ImpedanceCircle,
            reach_metric: ReachMetric::LineAngle,
            tolerance: 0.02,
            settled_fraction: 0.2,
            current_floor: 1e-6,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(format!("relay: {msg}")));
        if !(self.zone1_fraction > 0.0 && self.zone1_fraction <= 1.0) {
            return bad("zone1_fraction must lie in (0, 1]");
        }
        if !(self.line_z1.norm() > 0.0) {
            return bad("line impedance must be nonzero");
        }
        if !(self.tolerance >= 0.0 && self.tolerance.is_finite()) {
            return bad("tolerance must be non-negative");
        }
        if !(self.settled_fraction > 0.0 && self.settled_fraction <= 1.0) {
            return bad("settled_fraction must lie in (0, 1]");
        }
        if !(self.current_floor > 0.0) {
            return bad("current_floor must be positive");
        }
        Ok(())
    }

    /// Zero-sequence compensation factor (Z0 − Z1)/Z1.
    pub fn k0(&self) -> Phasor {
        (self.line_z0 - self.line_z1) / self.line_z1
    }

    pub fn reach(&self) -> f64 {
        self.zone1_fraction * self.line_z1.norm()
    }

    pub fn metric(&self, z: Phasor) -> f64 {
        match self.reach_metric {
            ReachMetric::LineAngle => (z * self.line_z1.conj()).re / self.line_z1.norm(),
            ReachMetric::Magnitude => z.norm(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelayMeasurement {
    /// Loop voltage: faulted phase, or faulted phase pair difference.
    pub v_s: Phasor,
    /// Loop phase current before compensation.
    pub i_s: Phasor,
    pub i_0: Phasor,
    /// Compensated loop current.
    pub i_relay: Phasor,
    pub z_apparent: Phasor,
}

impl RelayMeasurement {
    pub fn r(&self) -> f64 {
        self.z_apparent.re
    }

    pub fn x(&self) -> f64 {
        self.z_apparent.im
    }
}

/// Measuring loop for a fault kind: phase a to ground for SLG, b-c for
/// line-line and double-line-ground faults, a-b for three-phase faults.
pub fn apparent_impedance(
    v: &SequenceSet,
    i: &SequenceSet,
    settings: &RelaySettings,
    kind: FaultKind,
) -> Result<RelayMeasurement> {
    let va = seq_012_to_abc(v)?;
    let ia = seq_012_to_abc(i)?;
    let (v_s, i_s, i_relay) = match kind {
        FaultKind::SingleLineGround => (va.a, ia.a, ia.a + settings.k0() * i.zero),
        FaultKind::ThreePhase => (va.a - va.b, ia.a - ia.b, ia.a - ia.b),
        FaultKind::LineLine | FaultKind::DoubleLineGround => {
            (va.b - va.c, ia.b - ia.c, ia.b - ia.c)
        }
    };
    let magnitude = i_relay.norm();
    if !(magnitude > settings.current_floor) {
        return Err(Error::NoMeasurableLoop { magnitude });
    }
    Ok(RelayMeasurement {
        v_s,
        i_s,
        i_0: i.zero,
        i_relay,
        z_apparent: v_s / i_relay,
    })
}

/// Contribution of series injection to the apparent impedance,
/// `z − n·Z1`, for a fault at known fraction `n`.
pub fn injected_impedance(z_apparent: Phasor, n: f64, line_z1: Phasor) -> Phasor {
    z_apparent - line_z1 * n
}

/// Plain impedance circle about the origin, boundary inclusive.
pub fn zone1_check(z: Phasor, settings: &RelaySettings) -> bool {
    match settings.characteristic {
        Characteristic::ImpedanceCircle => z.norm() <= settings.reach() * (1.0 + 1e-12),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceSample {
    pub t: f64,
    pub measurement: RelayMeasurement,
    pub in_zone1: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelayTrace {
    pub fault_time: f64,
    pub samples: Vec<TraceSample>,
}

impl RelayTrace {
    pub fn new(fault_time: f64) -> Self {
        Self {
            fault_time,
            samples: Vec::new(),
        }
    }

    pub fn push(&mut self, t: f64, measurement: RelayMeasurement, settings: &RelaySettings) {
        if let Some(last) = self.samples.last() {
            assert!(t > last.t, "trace timestamps must increase");
        }
        let in_zone1 = zone1_check(measurement.z_apparent, settings);
        self.samples.push(TraceSample {
            t,
            measurement,
            in_zone1,
        });
    }

    pub fn post_fault(&self) -> &[TraceSample] {
        let k = self.samples.partition_point(|s| s.t < self.fault_time);
        &self.samples[k..]
    }

    /// Trailing `fraction` of the post-fault samples.
    pub fn settled_window(&self, fraction: f64) -> Result<&[TraceSample]> {
        let post = self.post_fault();
        let len = ((post.len() as f64) * fraction).floor() as usize;
        if post.len() < 10 || len == 0 {
            return Err(Error::Config(format!(
                "trace has {} post-fault samples; too short for a settled window",
                post.len()
            )));
        }
        Ok(&post[post.len() - len..])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReachClass {
    Nominal,
    OverReachTendency,
    UnderReachTendency,
}

impl ReachClass {
    pub fn as_str(self) -> &'static str {
        match self {
            ReachClass::Nominal => "nominal",
            ReachClass::OverReachTendency => "over_reach_tendency",
            ReachClass::UnderReachTendency => "under_reach_tendency",
        }
    }
}

/// Settled impedance statistics of one trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SettledImpedance {
    /// Medians of R and X over the window.
    pub z: Phasor,
    /// Median of the reach metric over the window.
    pub metric: f64,
}

pub fn settled_impedance(trace: &RelayTrace, settings: &RelaySettings) -> Result<SettledImpedance> {
    let window = trace.settled_window(settings.settled_fraction)?;
    let pick = |f: &dyn Fn(&TraceSample) -> f64| median(window.iter().map(f).collect());
    Ok(SettledImpedance {
        z: Complex64::new(
            pick(&|s| s.measurement.r()),
            pick(&|s| s.measurement.x()),
        ),
        metric: pick(&|s| settings.metric(s.measurement.z_apparent)),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReachVerdict {
    pub classification: ReachClass,
    pub z_baseline: Phasor,
    pub z_with_ipfc: Phasor,
    pub metric_baseline: f64,
    pub metric_with_ipfc: f64,
    /// Relative change of the reach metric.
    pub relative_change: f64,
    pub delta_r: f64,
    pub delta_x: f64,
    pub zone_decision_baseline: bool,
    pub zone_decision_ipfc: bool,
}

impl ReachVerdict {
    /// ΔR relative to |R_baseline|.
    pub fn relative_delta_r(&self) -> f64 {
        self.delta_r / self.z_baseline.re.abs()
    }

    /// ΔX relative to |X_baseline|.
    pub fn relative_delta_x(&self) -> f64 {
        self.delta_x / self.z_baseline.im.abs()
    }
}

/// Compares settled impedances: a smaller metric than the baseline beyond
/// the tolerance is an over-reach tendency, a larger one under-reach.
pub fn classify_reach(
    baseline: &RelayTrace,
    with_ipfc: &RelayTrace,
    settings: &RelaySettings,
) -> Result<ReachVerdict> {
    let base = settled_impedance(baseline, settings)?;
    let with = settled_impedance(with_ipfc, settings)?;
    let diff = with.metric - base.metric;
    let relative_change = if diff == 0.0 {
        0.0
    } else {
        diff / base.metric.abs()
    };
    let classification = if relative_change < -settings.tolerance {
        ReachClass::OverReachTendency
    } else if relative_change > settings.tolerance {
        ReachClass::UnderReachTendency
    } else {
        ReachClass::Nominal
    };
    Ok(ReachVerdict {
        classification,
        z_baseline: base.z,
        z_with_ipfc: with.z,
        metric_baseline: base.metric,
        metric_with_ipfc: with.metric,
        relative_change,
        delta_r: with.z.re - base.z.re,
        delta_x: with.z.im - base.z.im,
        zone_decision_baseline: zone1_check(base.z, settings),
        zone_decision_ipfc: zone1_check(with.z, settings),
    })
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
