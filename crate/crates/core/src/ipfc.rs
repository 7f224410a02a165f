//! Discrete master/slave control of a two-converter IPFC.
//!
//! Both converters inject a balanced series voltage in a d-q frame aligned
//! with their own line current (d in phase with the current, q leading it
//! by 90 degrees). The master regulates its line's P and Q; the slave
//! regulates the shared DC-link voltage and its own line's P.
//!
//! Real power at a converter's AC terminal, `pse = Re(v · conj(i))`, is
//! positive when the converter delivers power to the line. Whatever is
//! delivered to the lines is drawn from the DC link.

use num_complex::Complex64;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::grid::BranchId;
use crate::phasor::{rect_to_polar, Phasor};

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PiGains {
    pub kp: f64,
    pub ki: f64,
}

/// PI controller with clamped output and back-calculation anti-windup.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PiController {
    pub kp: f64,
    pub ki: f64,
    pub integrator: f64,
    pub lo: f64,
    pub hi: f64,
}

impl PiController {
    pub fn new(gains: PiGains, lo: f64, hi: f64) -> Self {
        assert!(gains.kp >= 0.0 && gains.ki >= 0.0 && lo <= hi);
        Self {
            kp: gains.kp,
            ki: gains.ki,
            integrator: 0.0,
            lo,
            hi,
        }
    }

    /// One step; returns the clamped output. A zero error leaves the
    /// integrator, and hence a controller at rest, exactly unchanged.
    pub fn step(&mut self, error: f64, dt: f64) -> f64 {
        let mut integ = self.integrator + self.ki * error * dt;
        let p = self.kp * error;
        let mut u = p + integ;
        if u > self.hi {
            u = self.hi;
            integ = (self.hi - p).clamp(self.lo, self.hi);
        } else if u < self.lo {
            u = self.lo;
            integ = (self.lo - p).clamp(self.lo, self.hi);
        }
        self.integrator = integ.clamp(self.lo, self.hi);
        u
    }

    /// Overrides the output after an external limit, keeping the
    /// integrator consistent with it.
    fn force_output(&mut self, u: f64, error: f64) {
        self.integrator = (u - self.kp * error).clamp(self.lo, self.hi);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IpfcSetpoints {
    pub p_ref1: f64,
    pub q_ref1: f64,
    pub p_ref2: f64,
    pub vdc_ref: f64,
}

impl Default for IpfcSetpoints {
    fn default() -> Self {
        Self {
            p_ref1: 0.35,
            q_ref1: 0.12,
            p_ref2: 0.2,
            vdc_ref: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IpfcMode {
    Off,
    ClosedLoop,
    PresetQInject,
    PresetQAbsorb,
    PresetPInject,
    PresetPAbsorb,
    FreezeOnFault,
}

impl IpfcMode {
    pub const STUDY_SUITE: [IpfcMode; 5] = [
        IpfcMode::Off,
        IpfcMode::PresetQInject,
        IpfcMode::PresetQAbsorb,
        IpfcMode::PresetPInject,
        IpfcMode::PresetPAbsorb,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            IpfcMode::Off => "off",
            IpfcMode::ClosedLoop => "closed_loop",
            IpfcMode::PresetQInject => "preset_q_inject",
            IpfcMode::PresetQAbsorb => "preset_q_absorb",
            IpfcMode::PresetPInject => "preset_p_inject",
            IpfcMode::PresetPAbsorb => "preset_p_absorb",
            IpfcMode::FreezeOnFault => "freeze_on_fault",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IpfcConfig {
    pub mode: IpfcMode,
    pub setpoints: IpfcSetpoints,
    pub master_branch: BranchId,
    pub slave_branch: BranchId,
    pub master_p: PiGains,
    pub master_q: PiGains,
    pub slave_vdc: PiGains,
    pub slave_p: PiGains,
    /// Ceiling on each converter's injection magnitude.
    pub m_max: f64,
    /// DC-link capacitance in p.u. seconds.
    pub c_dc: f64,
    pub vdc_floor: f64,
    /// Series coupling transformer leakage reactance.
    pub leakage_x: f64,
    /// Emulated series reactance of the ±Q presets.
    pub preset_reactance: f64,
    /// Emulated series resistance of the ±P presets.
    pub preset_resistance: f64,
    /// Latch both converters' commands once the fault is applied.
    pub freeze_on_fault: bool,
    /// Line current below which the d-q frame is not re-aligned.
    pub current_floor: f64,
}

impl Default for IpfcConfig {
    fn default() -> Self {
        let ac = PiGains { kp: 0.02, ki: 2.0 };
        Self {
            mode: IpfcMode::ClosedLoop,
            setpoints: IpfcSetpoints::default(),
            master_branch: BranchId(5),
            slave_branch: BranchId(6),
            master_p: ac,
            master_q: ac,
            slave_vdc: PiGains { kp: 5.0, ki: 50.0 },
            slave_p: ac,
            m_max: 0.15,
            c_dc: 1.0,
            vdc_floor: 0.1,
            leakage_x: 0.0,
            preset_reactance: 0.004,
            preset_resistance: 0.008,
            freeze_on_fault: false,
            current_floor: 1e-6,
        }
    }
}

impl IpfcConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(format!("ipfc: {msg}")));
        let sp = &self.setpoints;
        if ![sp.p_ref1, sp.q_ref1, sp.p_ref2, sp.vdc_ref].iter().all(|v| v.is_finite()) {
            return bad("setpoints must be finite");
        }
        if !(sp.vdc_ref > 0.0) {
            return bad("vdc_ref must be positive");
        }
        for g in [self.master_p, self.master_q, self.slave_vdc, self.slave_p] {
            if !(g.kp >= 0.0 && g.ki >= 0.0 && g.kp.is_finite() && g.ki.is_finite()) {
                return bad("gains must be finite and non-negative");
            }
        }
        if !(self.m_max > 0.0 && self.m_max.is_finite()) {
            return bad("m_max must be positive");
        }
        if !(self.c_dc > 0.0 && self.c_dc.is_finite()) {
            return bad("c_dc must be positive");
        }
        if !(self.vdc_floor > 0.0 && self.vdc_floor < sp.vdc_ref) {
            return bad("vdc_floor must lie in (0, vdc_ref)");
        }
        if !(self.leakage_x >= 0.0 && self.leakage_x.is_finite()) {
            return bad("leakage_x must be non-negative");
        }
        if !(self.preset_reactance >= 0.0 && self.preset_resistance >= 0.0) {
            return bad("preset magnitudes must be non-negative");
        }
        if self.master_branch == self.slave_branch {
            return bad("master and slave must sit on different lines");
        }
        Ok(())
    }

    /// Series impedance the preset modes emulate, if any.
    pub fn preset_impedance(&self) -> Option<Phasor> {
        let x = self.preset_reactance;
        let r = self.preset_resistance;
        match self.mode {
            IpfcMode::PresetQInject => Some(Complex64::new(0.0, -x)),
            IpfcMode::PresetQAbsorb => Some(Complex64::new(0.0, x)),
            IpfcMode::PresetPInject => Some(Complex64::new(-r, 0.0)),
            IpfcMode::PresetPAbsorb => Some(Complex64::new(r, 0.0)),
            _ => None,
        }
    }

    pub fn freezes_on_fault(&self) -> bool {
        self.freeze_on_fault || self.mode == IpfcMode::FreezeOnFault
    }
}

/// Quantities measured at a converter's line-side terminal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineMeasurement {
    pub p_net: f64,
    pub q_net: f64,
    pub i_line: Phasor,
    pub v_line: Phasor,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IpfcState {
    pub master_pi_p: PiController,
    pub master_pi_q: PiController,
    pub slave_pi_vdc: PiController,
    pub slave_pi_p: PiController,
    pub vdc: f64,
    pub vd1: f64,
    pub vq1: f64,
    pub vd2: f64,
    pub vq2: f64,
    pub m1: f64,
    pub alpha1: f64,
    pub m2: f64,
    pub alpha2: f64,
    pub pse1: f64,
    pub pse2: f64,
    /// Unit phasors of the last measured line currents (d axes).
    pub frame1: Phasor,
    pub frame2: Phasor,
}

impl IpfcState {
    pub fn new(cfg: &IpfcConfig) -> Self {
        let m = cfg.m_max;
        let one = Complex64::new(1.0, 0.0);
        Self {
            master_pi_p: PiController::new(cfg.master_p, -m, m),
            master_pi_q: PiController::new(cfg.master_q, -m, m),
            slave_pi_vdc: PiController::new(cfg.slave_vdc, -m, m),
            slave_pi_p: PiController::new(cfg.slave_p, -m, m),
            vdc: cfg.setpoints.vdc_ref,
            vd1: 0.0,
            vq1: 0.0,
            vd2: 0.0,
            vq2: 0.0,
            m1: 0.0,
            alpha1: 0.0,
            m2: 0.0,
            alpha2: 0.0,
            pse1: 0.0,
            pse2: 0.0,
            frame1: one,
            frame2: one,
        }
    }

    /// Injection phasors of the master and slave converters.
    pub fn injections(&self) -> (Phasor, Phasor) {
        (
            Complex64::new(self.vd1, self.vq1) * self.frame1,
            Complex64::new(self.vd2, self.vq2) * self.frame2,
        )
    }

    /// Master: P error drives the quadrature axis, Q error the direct axis.
    pub fn master_step(
        &self,
        sp: &IpfcSetpoints,
        meas1: &LineMeasurement,
        m_max: f64,
        dt: f64,
    ) -> IpfcState {
        let mut s = *self;
        let ep = sp.p_ref1 - meas1.p_net;
        let eq = sp.q_ref1 - meas1.q_net;
        let vq = s.master_pi_p.step(ep, dt);
        let vd = s.master_pi_q.step(eq, dt);
        let (vd, vq) = limit_magnitude(vd, vq, m_max, |vd, vq| {
            s.master_pi_q.force_output(vd, eq);
            s.master_pi_p.force_output(vq, ep);
        });
        s.vd1 = vd;
        s.vq1 = vq;
        (s.m1, s.alpha1) = rect_to_polar(vd, vq);
        s
    }

    /// Slave: DC-link error drives the direct axis (a low link voltage
    /// pulls real power from the line), P error the quadrature axis.
    pub fn slave_step(
        &self,
        sp: &IpfcSetpoints,
        meas2: &LineMeasurement,
        m_max: f64,
        dt: f64,
    ) -> IpfcState {
        let mut s = *self;
        let edc = s.vdc - sp.vdc_ref;
        let ep = sp.p_ref2 - meas2.p_net;
        let vd = s.slave_pi_vdc.step(edc, dt);
        let vq = s.slave_pi_p.step(ep, dt);
        let (vd, vq) = limit_magnitude(vd, vq, m_max, |vd, vq| {
            s.slave_pi_vdc.force_output(vd, edc);
            s.slave_pi_p.force_output(vq, ep);
        });
        s.vd2 = vd;
        s.vq2 = vq;
        (s.m2, s.alpha2) = rect_to_polar(vd, vq);
        s
    }

    /// Master command emulating a series impedance `z` at the present
    /// line current: `v = −z·i`, clamped to `m_max`.
    pub fn preset_step(&self, z: Phasor, meas1: &LineMeasurement, m_max: f64) -> IpfcState {
        let mut s = *self;
        let w = -z * meas1.i_line.norm();
        let (vd, vq) = limit_magnitude(w.re, w.im, m_max, |_, _| {});
        s.vd1 = vd;
        s.vq1 = vq;
        (s.m1, s.alpha1) = rect_to_polar(vd, vq);
        s
    }

    /// Integrates the DC-link energy over one step:
    /// `d(vdc²)/dt = −2·(pse1 + pse2)/c_dc`.
    pub fn dc_link_step(&self, c_dc: f64, floor: f64, dt: f64) -> Result<IpfcState> {
        let mut s = *self;
        let p_dc = -(self.pse1 + self.pse2);
        let w = self.vdc * self.vdc + 2.0 * p_dc * dt / c_dc;
        if !(w >= floor * floor) {
            return Err(Error::DcLinkCollapse {
                vdc: w.max(0.0).sqrt(),
                floor,
            });
        }
        s.vdc = w.sqrt();
        Ok(s)
    }

    /// Re-aligns the d-q frames to the latest line currents.
    pub fn align_frames(&mut self, i1: Phasor, i2: Phasor, floor: f64) {
        if i1.norm() > floor {
            self.frame1 = i1 / i1.norm();
        }
        if i2.norm() > floor {
            self.frame2 = i2 / i2.norm();
        }
    }
}

/// Scales (vd, vq) onto the circle of radius `m_max` when outside it and
/// reports the limited pair to `on_limit`.
fn limit_magnitude(vd: f64, vq: f64, m_max: f64, on_limit: impl FnOnce(f64, f64)) -> (f64, f64) {
    let m = vd.hypot(vq);
    if m > m_max {
        let k = m_max / m;
        let (vd, vq) = (vd * k, vq * k);
        on_limit(vd, vq);
        (vd, vq)
    } else {
        (vd, vq)
    }
}

/// Complex power delivered by a series converter to its line.
pub fn vsc_terminal_power(v_inject: Phasor, i_line: Phasor) -> (f64, f64) {
    let s = v_inject * i_line.conj();
    (s.re, s.im)
}

/// In-phase and leading-quadrature components of an injection relative to
/// the line current.
pub fn decompose_injection(v_inject: Phasor, i_line: Phasor) -> Result<(f64, f64)> {
    let mag = i_line.norm();
    if !(mag > 0.0) {
        return Err(Error::Numerical(
            "injection decomposition needs a nonzero line current".into(),
        ));
    }
    let w = v_inject * (i_line / mag).conj();
    Ok((w.re, w.im))
}
