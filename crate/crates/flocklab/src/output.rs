//! CSV emission and reproducibility plumbing. Every file is written
//! atomically (write a sibling temp file, then rename) and floats are
//! formatted with `{}`, whose shortest-round-trip digits parse back to the
//! same bits — so identical runs produce byte-identical tables.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::particles::{Ensemble, ParticleDiag};
use crate::phase::PhaseDensity;
use crate::solver::DiagRow;
use crate::sweep::SweepReport;
use crate::Result;

pub const DIAG_HEADER: &str =
    "t,mass,momentum,energy,d_local,d_cs,linf_f,lp_f,lbound_lhs,lbound_rhs,outflow";
pub const SWEEP_HEADER: &str = "r,l1_rho_gap,l1_j_gap,product_gap,energy_margin,mt_sup,runtime_s";
pub const CHECK_HEADER: &str = "check,passed,margin,tolerance";
pub const MANIFEST_HEADER: &str = "command,config_sha256,version,wall_s";

fn tmp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".tmp");
    path.with_file_name(name)
}

/// Write-temp-then-rename, so readers never observe a half-written file.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = tmp_path(path);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn diagnostics_csv(rows: &[DiagRow]) -> String {
    let mut s = String::with_capacity(64 * (rows.len() + 1));
    s.push_str(DIAG_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.t,
            r.mass,
            r.momentum,
            r.energy,
            r.d_local,
            r.d_cs,
            r.linf,
            r.lp,
            r.lbound_lhs,
            r.lbound_rhs,
            r.outflow
        );
    }
    s
}

pub fn write_diagnostics(path: &Path, rows: &[DiagRow]) -> Result<()> {
    atomic_write(path, diagnostics_csv(rows).as_bytes())
}

/// Map particle diagnostics into the kinetic schema. Mass is the conserved
/// ensemble mass, momentum is the first component, and the density-only
/// columns (`linf_f`, `lp_f`, the pairing bounds, `outflow`) are 0.
pub fn particle_diag_rows<const D: usize>(diags: &[ParticleDiag<D>], total_mass: f64) -> Vec<DiagRow> {
    diags
        .iter()
        .map(|d| DiagRow {
            t: d.t,
            mass: total_mass,
            momentum: d.momentum[0],
            energy: d.energy,
            d_local: d.d_local,
            d_cs: d.d_cs,
            linf: 0.0,
            lp: 0.0,
            lbound_lhs: 0.0,
            lbound_rhs: 0.0,
            outflow: 0.0,
        })
        .collect()
}

pub fn snapshot_csv(f: &PhaseDensity) -> String {
    let grid = f.grid();
    let mut s = String::with_capacity(24 * grid.x.n() * grid.v.n());
    s.push_str("x,v,f\n");
    for i in 0..grid.x.n() {
        let x = grid.x.center(i);
        for j in 0..grid.v.n() {
            let _ = writeln!(s, "{},{},{}", x, grid.v.center(j), f.values()[[i, j]]);
        }
    }
    s
}

/// Emit `snapshot_NNN.csv` per state plus a `snapshots.csv` catalog
/// (`idx,t,file`) holding each snapshot's time.
pub fn write_snapshots(dir: &Path, snaps: &[(f64, PhaseDensity)]) -> Result<()> {
    let mut catalog = String::from("idx,t,file\n");
    for (idx, (t, f)) in snaps.iter().enumerate() {
        let file = format!("snapshot_{idx:03}.csv");
        atomic_write(&dir.join(&file), snapshot_csv(f).as_bytes())?;
        let _ = writeln!(catalog, "{idx},{t},{file}");
    }
    atomic_write(&dir.join("snapshots.csv"), catalog.as_bytes())
}

pub fn trajectory_csv<const D: usize>(frames: &[(f64, Ensemble<D>)]) -> String {
    let mut s = String::new();
    match D {
        1 => s.push_str("t,i,x,v\n"),
        _ => {
            s.push_str("t,i");
            for d in 0..D {
                let _ = write!(s, ",x{d}");
            }
            for d in 0..D {
                let _ = write!(s, ",v{d}");
            }
            s.push('\n');
        }
    }
    for (t, ens) in frames {
        for i in 0..ens.n() {
            let _ = write!(s, "{t},{i}");
            for d in 0..D {
                let _ = write!(s, ",{}", ens.x[i][d]);
            }
            for d in 0..D {
                let _ = write!(s, ",{}", ens.v[i][d]);
            }
            s.push('\n');
        }
    }
    s
}

pub fn write_trajectory<const D: usize>(path: &Path, frames: &[(f64, Ensemble<D>)]) -> Result<()> {
    atomic_write(path, trajectory_csv(frames).as_bytes())
}

pub fn sweep_csv(report: &SweepReport) -> String {
    let mut s = String::from(SWEEP_HEADER);
    s.push('\n');
    for r in &report.rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.r, r.l1_rho_gap, r.l1_j_gap, r.product_gap, r.energy_margin, r.mt_sup, r.runtime_s
        );
    }
    s
}

pub fn write_sweep(path: &Path, report: &SweepReport) -> Result<()> {
    atomic_write(path, sweep_csv(report).as_bytes())
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckRow {
    pub name: String,
    pub passed: bool,
    /// Signed slack: negative/zero means the inequality held with room.
    pub margin: f64,
    pub tolerance: f64,
}

impl CheckRow {
    pub fn new(name: impl Into<String>, margin: f64, tolerance: f64) -> CheckRow {
        CheckRow { name: name.into(), passed: margin <= tolerance, margin, tolerance }
    }
}

pub fn checks_csv(rows: &[CheckRow]) -> String {
    let mut s = String::from(CHECK_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(s, "{},{},{},{}", r.name, r.passed, r.margin, r.tolerance);
    }
    s
}

pub fn write_checks(path: &Path, rows: &[CheckRow]) -> Result<()> {
    atomic_write(path, checks_csv(rows).as_bytes())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    let digest = h.finalize();
    let mut s = String::with_capacity(64);
    for b in digest {
        let _ = write!(s, "{b:02x}");
    }
    s
}

pub fn manifest_csv(command: &str, config_text: &str, wall_s: f64) -> String {
    format!(
        "{}\n{},{},{},{}\n",
        MANIFEST_HEADER,
        command,
        sha256_hex(config_text.as_bytes()),
        env!("CARGO_PKG_VERSION"),
        wall_s
    )
}

pub fn write_manifest(path: &Path, command: &str, config_text: &str, wall_s: f64) -> Result<()> {
    atomic_write(path, manifest_csv(command, config_text, wall_s).as_bytes())
}
