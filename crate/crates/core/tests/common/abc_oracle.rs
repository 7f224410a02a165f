//! Brute-force phase-frame nodal solve used as an oracle.
//!
//! Every element is stamped as a 3x3 phase admittance block built from its
//! self and mutual terms, the fault is an explicit set of MNA branches, and
//! the whole 3N system is solved at once. Nothing here goes through the
//! library's sequence networks or transform.

use std::collections::BTreeMap;

use ipfc_relay::fault::FaultKind;
use ipfc_relay::grid::{BranchId, BusId, GridModel, ZeroSequencePath};
use nalgebra::{DMatrix, DVector, Matrix3};
use num_complex::Complex64 as C;

pub type Abc = [C; 3];

pub struct Injection {
    pub branch: BranchId,
    pub e: C,
    pub leakage_x: f64,
}

pub struct Fault {
    pub kind: FaultKind,
    pub branch: BranchId,
    pub n: f64,
    pub rf: f64,
}

pub struct Solution {
    pub buses: Vec<BusId>,
    pub v: Vec<Abc>,
    /// Current leaving the `from` bus into each branch (near segment when
    /// the branch carries the fault).
    pub i_from: BTreeMap<BranchId, Abc>,
    pub fault_bus: Option<BusId>,
}

impl Solution {
    pub fn voltage(&self, bus: BusId) -> Abc {
        self.v[self.buses.iter().position(|&b| b == bus).unwrap()]
    }
}

fn c(re: f64, im: f64) -> C {
    C::new(re, im)
}

fn a() -> C {
    C::from_polar(1.0, 2.0 * std::f64::consts::PI / 3.0)
}

/// Balanced abc set with phase a equal to `x`.
pub fn balanced(x: C) -> Abc {
    [x, x * a() * a(), x * a()]
}

/// Phase block of an element with self term (z0 + 2 z1)/3 and mutual
/// term (z0 − z1)/3, for either impedances or admittances.
fn block(s0: C, s1: C) -> Matrix3<C> {
    let s = (s0 + s1 * 2.0) / 3.0;
    let m = (s0 - s1) / 3.0;
    Matrix3::new(s, m, m, m, s, m, m, m, s)
}

struct Series {
    branch: Option<BranchId>,
    from: usize,
    to: usize,
    y: Matrix3<C>,
    emf: Abc,
}

pub fn solve(model: &GridModel, fault: Option<&Fault>, injections: &[Injection]) -> Solution {
    let mut buses: Vec<BusId> = model.buses.iter().map(|b| b.id).collect();
    let idx = |buses: &[BusId], id: BusId| buses.iter().position(|&b| b == id).unwrap();
    let fault_bus = fault.map(|_| BusId(buses.iter().map(|b| b.0).max().unwrap() + 1));
    if let Some(fb) = fault_bus {
        buses.push(fb);
    }
    let nb = buses.len();

    let mut series: Vec<Series> = Vec::new();
    let mut shunts: Vec<(usize, Matrix3<C>, Abc)> = Vec::new();

    for br in &model.branches {
        let inj = injections.iter().find(|i| i.branch == br.id);
        let leak = c(0.0, inj.map_or(0.0, |i| i.leakage_x));
        let emf = inj.map_or([C::new(0.0, 0.0); 3], |i| balanced(i.e));
        let z1 = c(br.r1, br.x1);
        let z0 = c(br.r0, br.x0);
        let from = idx(&buses, br.from_bus);
        let to = idx(&buses, br.to_bus);
        let split = fault.filter(|f| f.branch == br.id);
        let (near_to, near_k) = match split {
            Some(f) => (idx(&buses, fault_bus.unwrap()), f.n),
            None => (to, 1.0),
        };
        let zb = block(z0 * near_k, z1 * near_k) + Matrix3::from_diagonal_element(leak);
        if zb.iter().all(|z| z.norm() == 0.0) {
            // Bolted coincident node: model as a very stiff link.
            let y = Matrix3::from_diagonal_element(c(1e12, 0.0));
            series.push(Series { branch: Some(br.id), from, to: near_to, y, emf });
        } else {
            let y = zb.try_inverse().unwrap();
            series.push(Series { branch: Some(br.id), from, to: near_to, y, emf });
        }
        if let Some(f) = split {
            let k = 1.0 - f.n;
            let zb = block(z0 * k, z1 * k);
            let y = if k == 0.0 {
                Matrix3::from_diagonal_element(c(1e12, 0.0))
            } else {
                zb.try_inverse().unwrap()
            };
            series.push(Series { branch: None, from: near_to, to, y, emf: [C::new(0.0, 0.0); 3] });
        }
    }

    let mut zero_ground = vec![false; nb];
    for t in &model.transformers {
        let y = c(0.0, t.x_leakage).inv();
        let from = idx(&buses, t.from_bus);
        let to = idx(&buses, t.to_bus);
        series.push(Series {
            branch: None,
            from,
            to,
            y: block(C::new(0.0, 0.0), y),
            emf: [C::new(0.0, 0.0); 3],
        });
        if t.zero_sequence_path == ZeroSequencePath::GroundedThrough {
            shunts.push((to, block(y, C::new(0.0, 0.0)), [C::new(0.0, 0.0); 3]));
            zero_ground[to] = true;
        }
    }
    for s in &model.sources {
        let y = c(0.0, s.x_internal).inv();
        let k = idx(&buses, s.bus);
        let y0 = if s.grounded { y } else { C::new(0.0, 0.0) };
        zero_ground[k] |= s.grounded;
        let e = C::from_polar(s.voltage_setpoint, s.angle_deg.to_radians());
        let e = balanced(e);
        shunts.push((k, block(y0, y), [e[0] * y, e[1] * y, e[2] * y]));
    }
    for l in &model.loads {
        let y = c(l.p, -l.q);
        shunts.push((idx(&buses, l.bus), block(C::new(0.0, 0.0), y), [C::new(0.0, 0.0); 3]));
    }

    // Zero-sequence islands without ground: pin their common mode.
    let mut parent: Vec<usize> = (0..nb).collect();
    fn find(p: &mut Vec<usize>, mut i: usize) -> usize {
        while p[i] != i {
            i = p[i];
        }
        i
    }
    for s in &series {
        let coupled = (s.y[(0, 0)] + s.y[(0, 1)] * 2.0).norm() > 0.0;
        if coupled {
            let (ra, rb) = (find(&mut parent, s.from), find(&mut parent, s.to));
            parent[ra.max(rb)] = ra.min(rb);
        }
    }
    let mut island_grounded: BTreeMap<usize, bool> = BTreeMap::new();
    for k in 0..nb {
        let r = find(&mut parent, k);
        *island_grounded.entry(r).or_default() |= zero_ground[k];
    }
    for (&root, &g) in &island_grounded {
        if !g {
            shunts.push((root, block(c(1.0, 0.0), C::new(0.0, 0.0)), [C::new(0.0, 0.0); 3]));
        }
    }

    // Fault MNA branches: (incidence over node-phases, constraint).
    let nv = 3 * nb;
    let mut extra: Vec<(Vec<(usize, f64)>, Vec<(usize, C)>, C)> = Vec::new();
    if let (Some(f), Some(fb)) = (fault, fault_bus) {
        let k = idx(&buses, fb);
        let p = |ph: usize| 3 * k + ph;
        let rf = c(f.rf, 0.0);
        match f.kind {
            FaultKind::ThreePhase => {
                for ph in 0..3 {
                    extra.push((vec![(p(ph), 1.0)], vec![(p(ph), c(1.0, 0.0))], rf));
                }
            }
            FaultKind::SingleLineGround => {
                extra.push((vec![(p(0), 1.0)], vec![(p(0), c(1.0, 0.0))], rf));
            }
            FaultKind::LineLine => {
                extra.push((
                    vec![(p(1), 1.0), (p(2), -1.0)],
                    vec![(p(1), c(1.0, 0.0)), (p(2), c(-1.0, 0.0))],
                    rf,
                ));
            }
            FaultKind::DoubleLineGround => {}
        }
    }
    let llg = fault.filter(|f| f.kind == FaultKind::DoubleLineGround);
    let dim = nv + extra.len() + if llg.is_some() { 2 } else { 0 };
    let mut m = DMatrix::<C>::zeros(dim, dim);
    let mut rhs = DVector::<C>::zeros(dim);

    let add_block = |m: &mut DMatrix<C>, r: usize, col: usize, y: &Matrix3<C>, sign: f64| {
        for i in 0..3 {
            for j in 0..3 {
                m[(3 * r + i, 3 * col + j)] += y[(i, j)] * sign;
            }
        }
    };
    for s in &series {
        add_block(&mut m, s.from, s.from, &s.y, 1.0);
        add_block(&mut m, s.to, s.to, &s.y, 1.0);
        add_block(&mut m, s.from, s.to, &s.y, -1.0);
        add_block(&mut m, s.to, s.from, &s.y, -1.0);
        for i in 0..3 {
            let mut j = C::new(0.0, 0.0);
            for k in 0..3 {
                j += s.y[(i, k)] * s.emf[k];
            }
            rhs[3 * s.from + i] -= j;
            rhs[3 * s.to + i] += j;
        }
    }
    for (k, y, j) in &shunts {
        add_block(&mut m, *k, *k, y, 1.0);
        for i in 0..3 {
            rhs[3 * k + i] += j[i];
        }
    }
    for (e, (incidence, constraint, r)) in extra.iter().enumerate() {
        let col = nv + e;
        for &(node, sign) in incidence {
            m[(node, col)] += c(sign, 0.0);
        }
        for &(node, coeff) in constraint {
            m[(col, node)] += coeff;
        }
        m[(col, col)] -= *r;
    }
    if let (Some(f), Some(fb)) = (llg, fault_bus) {
        // Unknowns ib, ic into the fault; vb = vc; vb = rf·(ib + ic).
        let k = idx(&buses, fb);
        let (b, cc) = (3 * k + 1, 3 * k + 2);
        let (ib, ic) = (nv + extra.len(), nv + extra.len() + 1);
        m[(b, ib)] += c(1.0, 0.0);
        m[(cc, ic)] += c(1.0, 0.0);
        m[(ib, b)] += c(1.0, 0.0);
        m[(ib, cc)] -= c(1.0, 0.0);
        m[(ic, b)] += c(1.0, 0.0);
        m[(ic, ib)] -= c(f.rf, 0.0);
        m[(ic, ic)] -= c(f.rf, 0.0);
    }

    let x = m.lu().solve(&rhs).expect("oracle system is solvable");
    let v: Vec<Abc> = (0..nb).map(|k| [x[3 * k], x[3 * k + 1], x[3 * k + 2]]).collect();

    let mut i_from = BTreeMap::new();
    for s in &series {
        if let Some(id) = s.branch {
            let mut i = [C::new(0.0, 0.0); 3];
            for (p, ip) in i.iter_mut().enumerate() {
                for q in 0..3 {
                    *ip += s.y[(p, q)] * (v[s.from][q] - v[s.to][q] + s.emf[q]);
                }
            }
            i_from.insert(id, i);
        }
    }
    Solution {
        buses,
        v,
        i_from,
        fault_bus,
    }
}

/// Zero-sequence component by direct averaging.
pub fn zero_component(x: &Abc) -> C {
    (x[0] + x[1] + x[2]) / 3.0
}
