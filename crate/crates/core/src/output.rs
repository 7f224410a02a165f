//! Result files: trajectory and controller tables, summaries, manifests
//! and an optional R-X plane plot.
//!
//! Numbers are written with 12 significant digits and every file carries
//! a provenance line, so identical runs produce identical bytes.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::phasor::Phasor;
use crate::relay::{zone1_check, RelaySettings};
use crate::scenario::{PairResult, RunResult, SuiteEntry, SweepCase, TOOL_VERSION};

pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const IPFC_LOG_FILE: &str = "ipfc_log.csv";
pub const SUMMARY_FILE: &str = "summary.txt";
pub const PLOT_FILE: &str = "rx_plot.svg";
pub const MANIFEST_FILE: &str = "manifest.txt";
pub const VERDICTS_FILE: &str = "verdicts.csv";

pub const TRAJECTORY_COLUMNS: [&str; 8] =
    ["t_s", "v_re", "v_im", "i_re", "i_im", "z_r_pu", "z_x_pu", "in_zone1"];
pub const IPFC_LOG_COLUMNS: [&str; 11] = [
    "t_s", "m1", "alpha1_deg", "m2", "alpha2_deg", "vdc_pu", "pse1_pu", "pse2_pu", "pnet1_pu",
    "qnet1_pu", "pnet2_pu",
];

#[derive(Debug, Clone, Copy, Default)]
pub struct OutputOptions {
    pub plot: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    /// Path relative to the output root.
    pub path: PathBuf,
    pub bytes: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

/// Fixed 12-significant-digit scientific notation; negative zero prints
/// as zero.
pub fn fmt_num(x: f64) -> String {
    let x = if x == 0.0 { 0.0 } else { x };
    format!("{x:.11e}")
}

struct Writer<'a> {
    root: &'a Path,
    manifest: Manifest,
}

impl<'a> Writer<'a> {
    fn new(root: &'a Path) -> Result<Self> {
        fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        Ok(Self {
            root,
            manifest: Manifest::default(),
        })
    }

    fn write(&mut self, rel: impl AsRef<Path>, contents: &str) -> Result<()> {
        let rel = rel.as_ref();
        let path = self.root.join(rel);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
        self.manifest.entries.push(ManifestEntry {
            path: rel.to_path_buf(),
            bytes: contents.len() as u64,
        });
        Ok(())
    }

    fn finish(mut self, provenance: &str) -> Result<Manifest> {
        let mut text = format!("# {provenance}\n# bytes\tpath\n");
        for e in &self.manifest.entries {
            let _ = writeln!(text, "{}\t{}", e.bytes, e.path.display());
        }
        let path = self.root.join(MANIFEST_FILE);
        fs::write(&path, &text).map_err(|e| Error::io(&path, e))?;
        self.manifest.entries.push(ManifestEntry {
            path: PathBuf::from(MANIFEST_FILE),
            bytes: text.len() as u64,
        });
        Ok(self.manifest)
    }
}

fn trajectory_csv(r: &RunResult) -> String {
    let mut s = format!("# {}\n{}\n", r.provenance.line(), TRAJECTORY_COLUMNS.join(","));
    for sample in &r.trace.samples {
        let m = &sample.measurement;
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            fmt_num(sample.t),
            fmt_num(m.v_s.re),
            fmt_num(m.v_s.im),
            fmt_num(m.i_relay.re),
            fmt_num(m.i_relay.im),
            fmt_num(m.z_apparent.re),
            fmt_num(m.z_apparent.im),
            sample.in_zone1
        );
    }
    s
}

fn ipfc_log_csv(r: &RunResult) -> String {
    let mut s = format!("# {}\n{}\n", r.provenance.line(), IPFC_LOG_COLUMNS.join(","));
    for row in &r.ipfc_log {
        let cols = [
            row.t,
            row.m1,
            row.alpha1_deg,
            row.m2,
            row.alpha2_deg,
            row.vdc,
            row.pse1,
            row.pse2,
            row.pnet1,
            row.qnet1,
            row.pnet2,
        ];
        let line: Vec<String> = cols.iter().map(|&x| fmt_num(x)).collect();
        s.push_str(&line.join(","));
        s.push('\n');
    }
    s
}

fn fmt_z(z: Phasor) -> String {
    format!("{} + j{}", fmt_num(z.re), fmt_num(z.im))
}

fn summary_text(r: &RunResult) -> String {
    let sc = &r.scenario;
    let mut s = String::new();
    let _ = writeln!(s, "# {}", r.provenance.line());
    let _ = writeln!(s, "scenario: {}", sc.name);
    let _ = writeln!(s, "ipfc_mode: {}", sc.ipfc.mode.as_str());
    let _ = writeln!(s, "freeze_on_fault: {}", sc.ipfc.freezes_on_fault());
    let _ = writeln!(
        s,
        "fault: {} on branch {} at n = {} with rf = {}",
        sc.fault.kind.as_str(),
        sc.fault.branch,
        sc.fault.n,
        sc.fault.rf
    );
    let _ = writeln!(
        s,
        "timing: dt = {} s, t_fault = {} s, t_end = {} s, steps = {}",
        sc.dt, sc.t_fault, sc.t_end, r.steps
    );
    let _ = writeln!(s, "trace_samples: {}", r.trace.samples.len());
    let _ = writeln!(
        s,
        "relay: branch {} ({:?} end), zone1 reach = {} p.u.",
        sc.relay.protected_branch,
        sc.relay.relay_end,
        fmt_num(sc.relay.reach())
    );
    if let Some(row) = r.prefault_row() {
        let _ = writeln!(
            s,
            "prefault: pnet1 = {}, qnet1 = {}, pnet2 = {}, vdc = {}, pse1 + pse2 = {}",
            fmt_num(row.pnet1),
            fmt_num(row.qnet1),
            fmt_num(row.pnet2),
            fmt_num(row.vdc),
            fmt_num(row.pse1 + row.pse2)
        );
    }
    if let Some(st) = &r.settled {
        let _ = writeln!(s, "settled_z: {}", fmt_z(st.z));
        let _ = writeln!(s, "settled_in_zone1: {}", zone1_check(st.z, &sc.relay));
        if let Some(n) = sc.known_n() {
            let zpq = crate::relay::injected_impedance(st.z, n, sc.relay.line_z1);
            let _ = writeln!(s, "settled_z_pq: {}", fmt_z(zpq));
        }
    }
    if let Some(v) = &r.verdict {
        let _ = writeln!(s, "verdict: {}", v.classification.as_str());
        let _ = writeln!(s, "baseline_z: {}", fmt_z(v.z_baseline));
        let _ = writeln!(s, "delta_r: {}", fmt_num(v.delta_r));
        let _ = writeln!(s, "delta_x: {}", fmt_num(v.delta_x));
        let _ = writeln!(s, "relative_metric_change: {}", fmt_num(v.relative_change));
        let _ = writeln!(
            s,
            "zone1: baseline {} / with ipfc {}",
            v.zone_decision_baseline, v.zone_decision_ipfc
        );
    }
    s
}

/// R-X plane with the Zone-1 circle, the protected line and the trace.
fn rx_plot_svg(r: &RunResult) -> String {
    let relay: &RelaySettings = &r.scenario.relay;
    let reach = relay.reach();
    let post: Vec<Phasor> = r
        .trace
        .post_fault()
        .iter()
        .map(|s| s.measurement.z_apparent)
        .collect();
    let far = post.iter().map(|z| z.norm()).fold(relay.line_z1.norm(), f64::max);
    let half = (1.6 * reach).max(1.15 * far);
    let size = 480.0;
    let scale = size / (2.0 * half);
    let px = |z: Phasor| (size / 2.0 + z.re * scale, size / 2.0 - z.im * scale);

    let mut s = String::new();
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{size}\" height=\"{size}\" viewBox=\"0 0 {size} {size}\">"
    );
    let _ = writeln!(s, "<!-- {} -->", r.provenance.line());
    let _ = writeln!(s, "<defs><clipPath id=\"frame\"><rect x=\"0\" y=\"0\" width=\"{size}\" height=\"{size}\"/></clipPath></defs>");
    let _ = writeln!(s, "<rect x=\"0\" y=\"0\" width=\"{size}\" height=\"{size}\" fill=\"white\" stroke=\"black\"/>");
    let c = size / 2.0;
    let _ = writeln!(s, "<line x1=\"0\" y1=\"{c}\" x2=\"{size}\" y2=\"{c}\" stroke=\"#999\"/>");
    let _ = writeln!(s, "<line x1=\"{c}\" y1=\"0\" x2=\"{c}\" y2=\"{size}\" stroke=\"#999\"/>");
    let _ = writeln!(
        s,
        "<circle cx=\"{c}\" cy=\"{c}\" r=\"{:.3}\" fill=\"none\" stroke=\"#2a6\" stroke-width=\"1.5\"/>",
        reach * scale
    );
    let (lx, ly) = px(relay.line_z1);
    let _ = writeln!(
        s,
        "<line x1=\"{c}\" y1=\"{c}\" x2=\"{lx:.3}\" y2=\"{ly:.3}\" stroke=\"#555\" stroke-dasharray=\"4 3\"/>"
    );
    let points: Vec<String> = r
        .trace
        .samples
        .iter()
        .map(|smp| {
            let (x, y) = px(smp.measurement.z_apparent);
            format!("{x:.3},{y:.3}")
        })
        .collect();
    let _ = writeln!(
        s,
        "<polyline clip-path=\"url(#frame)\" points=\"{}\" fill=\"none\" stroke=\"#c33\"/>",
        points.join(" ")
    );
    if let Some(last) = post.last() {
        let (x, y) = px(*last);
        let _ = writeln!(s, "<circle cx=\"{x:.3}\" cy=\"{y:.3}\" r=\"3\" fill=\"#c33\"/>");
    }
    let _ = writeln!(
        s,
        "<text x=\"8\" y=\"18\" font-family=\"sans-serif\" font-size=\"12\">{} | R-X (p.u.), half-width {}</text>",
        r.scenario.name,
        fmt_num(half)
    );
    s.push_str("</svg>\n");
    s
}

fn emit_run_into(w: &mut Writer<'_>, prefix: &Path, r: &RunResult, opts: OutputOptions) -> Result<()> {
    w.write(prefix.join(TRAJECTORY_FILE), &trajectory_csv(r))?;
    w.write(prefix.join(IPFC_LOG_FILE), &ipfc_log_csv(r))?;
    w.write(prefix.join(SUMMARY_FILE), &summary_text(r))?;
    if opts.plot {
        w.write(prefix.join(PLOT_FILE), &rx_plot_svg(r))?;
    }
    Ok(())
}

/// Writes one run's files and a manifest into `out_dir`.
pub fn emit_outputs(r: &RunResult, out_dir: &Path, opts: OutputOptions) -> Result<Manifest> {
    let mut w = Writer::new(out_dir)?;
    emit_run_into(&mut w, Path::new(""), r, opts)?;
    w.finish(&r.provenance.line())
}

fn combined_provenance<'a>(hashes: impl Iterator<Item = &'a str>) -> String {
    let mut h = Sha256::new();
    for x in hashes {
        h.update(x.as_bytes());
        h.update(b"\n");
    }
    format!("config_sha256={} tool=ipfc-relay/{}", hex::encode(h.finalize()), TOOL_VERSION)
}

const VERDICT_COLUMNS: &str = "run,expected,classification,matches,z_base_r_pu,z_base_x_pu,z_ipfc_r_pu,z_ipfc_x_pu,delta_r_pu,delta_x_pu,rel_delta_r,rel_delta_x,rel_metric_change,zone1_baseline,zone1_ipfc";

fn verdict_row(name: &str, expected: &str, matches: &str, v: &crate::relay::ReachVerdict) -> String {
    format!(
        "{name},{expected},{},{matches},{},{},{},{},{},{},{},{},{},{},{}\n",
        v.classification.as_str(),
        fmt_num(v.z_baseline.re),
        fmt_num(v.z_baseline.im),
        fmt_num(v.z_with_ipfc.re),
        fmt_num(v.z_with_ipfc.im),
        fmt_num(v.delta_r),
        fmt_num(v.delta_x),
        fmt_num(v.relative_delta_r()),
        fmt_num(v.relative_delta_x()),
        fmt_num(v.relative_change),
        v.zone_decision_baseline,
        v.zone_decision_ipfc
    )
}

pub fn emit_pair(p: &PairResult, out_dir: &Path, opts: OutputOptions) -> Result<Manifest> {
    let prov = combined_provenance(
        [&p.baseline.provenance.config_hash, &p.variant.provenance.config_hash]
            .into_iter()
            .map(String::as_str),
    );
    let mut w = Writer::new(out_dir)?;
    emit_run_into(&mut w, Path::new("baseline"), &p.baseline, opts)?;
    emit_run_into(&mut w, Path::new("variant"), &p.variant, opts)?;
    let mut csv = format!("# {prov}\n{VERDICT_COLUMNS}\n");
    csv.push_str(&verdict_row(&p.variant.scenario.name, "", "", &p.verdict));
    w.write(VERDICTS_FILE, &csv)?;
    w.finish(&prov)
}

pub fn emit_suite(entries: &[SuiteEntry], out_dir: &Path, opts: OutputOptions) -> Result<Manifest> {
    let prov = combined_provenance(entries.iter().map(|e| e.run.provenance.config_hash.as_str()));
    let mut w = Writer::new(out_dir)?;
    let mut csv = format!("# {prov}\n{VERDICT_COLUMNS}\n");
    for e in entries {
        emit_run_into(&mut w, Path::new(e.mode.as_str()), &e.run, opts)?;
        let ok = e.matches_expectation(e.run.scenario.relay.tolerance);
        csv.push_str(&verdict_row(e.mode.as_str(), e.expected.as_str(), &ok.to_string(), &e.verdict));
    }
    w.write(VERDICTS_FILE, &csv)?;
    w.finish(&prov)
}

pub fn emit_sweep(
    cases: &[SweepCase],
    results: &[Result<RunResult>],
    out_dir: &Path,
    opts: OutputOptions,
) -> Result<Manifest> {
    let prov = combined_provenance(results.iter().filter_map(|r| r.as_ref().ok()).map(|r| r.provenance.config_hash.as_str()));
    let mut w = Writer::new(out_dir)?;
    let mut csv = format!(
        "# {prov}\nrun,assignment,status,settled_r_pu,settled_x_pu,settled_in_zone1\n"
    );
    for (c, r) in cases.iter().zip(results) {
        let dir = format!("run_{:04}", c.index);
        match r {
            Ok(run) => {
                emit_run_into(&mut w, Path::new(&dir), run, opts)?;
                let (zr, zx, zone) = match &run.settled {
                    Some(st) => (
                        fmt_num(st.z.re),
                        fmt_num(st.z.im),
                        zone1_check(st.z, &run.scenario.relay).to_string(),
                    ),
                    None => (String::new(), String::new(), String::new()),
                };
                let _ = writeln!(csv, "{dir},{},ok,{zr},{zx},{zone}", c.label);
            }
            Err(e) => {
                let msg = e.to_string().replace([',', '\n'], ";");
                let _ = writeln!(csv, "{dir},{},error: {msg},,,", c.label);
            }
        }
    }
    w.write("sweep_summary.csv", &csv)?;
    w.finish(&prov)
}

/// One parsed trajectory row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryRow {
    pub t: f64,
    pub v: Phasor,
    pub i: Phasor,
    pub z: Phasor,
    pub in_zone1: bool,
}

pub fn read_trajectory(path: &Path) -> Result<Vec<TrajectoryRow>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    let header = lines.next().unwrap_or_default();
    if header != TRAJECTORY_COLUMNS.join(",") {
        return Err(Error::Config(format!("{}: unexpected header", path.display())));
    }
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        let bad = || Error::Config(format!("{}: malformed row {line}", path.display()));
        if f.len() != 8 {
            return Err(bad());
        }
        let n = |k: usize| f[k].parse::<f64>().map_err(|_| bad());
        rows.push(TrajectoryRow {
            t: n(0)?,
            v: Phasor::new(n(1)?, n(2)?),
            i: Phasor::new(n(3)?, n(4)?),
            z: Phasor::new(n(5)?, n(6)?),
            in_zone1: f[7].parse().map_err(|_| bad())?,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn number_format_has_twelve_significant_digits() {
        assert_eq!(fmt_num(0.00176), "1.76000000000e-3");
        assert_eq!(fmt_num(-0.0), "0.00000000000e0");
        assert_eq!(fmt_num(1.0 / 3.0), "3.33333333333e-1");
    }
}
