//! Plain-text run configuration: `[section]` headers, `key = value` lines,
//! `#` comments. Every key has a default, all numeric values are range
//! checked at parse with their line number, and unknown or duplicated keys
//! are errors, so a typo can never silently fall back to a default.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::grid::PhaseGrid;
use crate::init::{sample_clusters, ClusterSpec, InitialData};
use crate::kernels::{InfluenceKernel, Mollifier, Profile};
use crate::particles::{Ensemble, ParticleAlignment, ParticleModel, SplineOrder};
use crate::solver::{Alignment, Physics, Potential, SolverConfig};
use crate::sweep::SweepSetup;
use crate::testfn::SeparableBasis;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: duplicate key `{key}` (first set on line {first_line})")]
    DuplicateKey { key: String, first_line: usize, line: usize },
    #[error("line {line}: unknown key `{section}.{key}`")]
    UnknownKey { line: usize, section: String, key: String },
    #[error("{key}: {reason}")]
    Validation { key: String, reason: String },
}

fn invalid(key: &str, reason: impl std::fmt::Display) -> ConfigError {
    ConfigError::Validation { key: key.to_string(), reason: reason.to_string() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlignmentMode {
    Off,
    Mt,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelSection {
    /// `triangle`, `bump2`, `cosine`, or `table`.
    pub profile: String,
    /// Two-column CSV path, required exactly when `profile = table`.
    pub table: Option<String>,
    /// Alignment radius; 0 selects the strictly local mode.
    pub r: f64,
    pub lambda: f64,
    /// Decay exponent; 0 selects the constant kernel `Φ ≡ λ`.
    pub beta: f64,
    pub alignment: AlignmentMode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PotentialSection {
    pub kappa: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSection {
    pub lx: f64,
    pub lv: f64,
    pub nx: usize,
    pub nv: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeSection {
    pub t_end: f64,
    pub cfl: f64,
    pub snapshot_stride: usize,
    /// Fixed step; also the particle-integrator step.
    pub dt: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitSection {
    TwoBumps { x1: f64, v1: f64, a1: f64, x2: f64, v2: f64, a2: f64, sx: f64, sv: f64 },
    GaussianProduct { x0: f64, v0: f64, sx: f64, sv: f64, amp: f64 },
    Riemann { v_left: f64, v_right: f64, hw: f64, amp: f64 },
    /// Particle-only datum: per-cluster centers (1-d or 2-d points).
    Clusters {
        x_centers: Vec<Vec<f64>>,
        v_centers: Vec<Vec<f64>>,
        radius: f64,
        vspread: f64,
        counts: Vec<usize>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParticleSection {
    pub n: usize,
    pub seed: u64,
    pub dim: usize,
    /// Ensemble mass; defaults to the configured kinetic datum's mass for
    /// sampled ensembles (so deposits are comparable) and to 1 for clusters.
    pub total_mass: Option<f64>,
    /// Deposit spline: `linear`, `quadratic`, or `cubic`.
    pub deposit: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSection {
    pub r_list: Vec<f64>,
    pub q: f64,
    /// Slack allowed on the decreasing-in-r gap columns.
    pub gap_tol: f64,
    pub deg_t: usize,
    pub deg_x: usize,
    pub deg_v: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub kernel: KernelSection,
    pub potential: PotentialSection,
    pub grid: GridSection,
    pub time: TimeSection,
    pub init: InitSection,
    pub particles: ParticleSection,
    pub sweep: SweepSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            kernel: KernelSection {
                profile: "triangle".to_string(),
                table: None,
                r: 0.1,
                lambda: 1.0,
                beta: 0.25,
                alignment: AlignmentMode::Mt,
            },
            potential: PotentialSection { kappa: 0.0 },
            grid: GridSection { lx: 0.75, lv: 1.0, nx: 128, nv: 128 },
            time: TimeSection { t_end: 1.0, cfl: 0.3, snapshot_stride: 32, dt: None },
            init: InitSection::TwoBumps {
                x1: -0.25,
                v1: 0.3,
                a1: 1.0,
                x2: 0.25,
                v2: -0.3,
                a2: 0.8,
                sx: 0.15,
                sv: 0.2,
            },
            particles: ParticleSection {
                n: 1000,
                seed: 1,
                dim: 1,
                total_mass: None,
                deposit: "cubic".to_string(),
            },
            sweep: SweepSection {
                r_list: vec![0.4, 0.2, 0.1, 0.05, 0.0],
                q: 1.0,
                gap_tol: 0.05,
                deg_t: 2,
                deg_x: 4,
                deg_v: 4,
            },
        }
    }
}

const SECTIONS: [&str; 7] = ["kernel", "potential", "grid", "time", "init", "particles", "sweep"];

struct Entry {
    section: String,
    key: String,
    value: String,
    line: usize,
    used: std::cell::Cell<bool>,
}

struct Ctx {
    entries: Vec<Entry>,
}

impl Ctx {
    fn take(&self, sec: &str, key: &str) -> Option<(&str, usize)> {
        self.entries.iter().find(|e| e.section == sec && e.key == key).map(|e| {
            e.used.set(true);
            (e.value.as_str(), e.line)
        })
    }

    fn f64(&self, sec: &str, key: &str) -> Result<Option<(f64, usize)>, ConfigError> {
        match self.take(sec, key) {
            None => Ok(None),
            Some((v, line)) => match v.parse::<f64>() {
                Ok(x) if x.is_finite() => Ok(Some((x, line))),
                _ => Err(ConfigError::Parse {
                    line,
                    msg: format!("{sec}.{key}: expected a finite number, got `{v}`"),
                }),
            },
        }
    }

    fn usize(&self, sec: &str, key: &str) -> Result<Option<(usize, usize)>, ConfigError> {
        match self.take(sec, key) {
            None => Ok(None),
            Some((v, line)) => v.parse::<usize>().map(|x| Some((x, line))).map_err(|_| {
                ConfigError::Parse {
                    line,
                    msg: format!("{sec}.{key}: expected a nonnegative integer, got `{v}`"),
                }
            }),
        }
    }

    fn u64(&self, sec: &str, key: &str) -> Result<Option<(u64, usize)>, ConfigError> {
        match self.take(sec, key) {
            None => Ok(None),
            Some((v, line)) => v.parse::<u64>().map(|x| Some((x, line))).map_err(|_| {
                ConfigError::Parse {
                    line,
                    msg: format!("{sec}.{key}: expected a nonnegative integer, got `{v}`"),
                }
            }),
        }
    }

    /// Comma-separated floats.
    fn f64_list(&self, sec: &str, key: &str) -> Result<Option<(Vec<f64>, usize)>, ConfigError> {
        match self.take(sec, key) {
            None => Ok(None),
            Some((v, line)) => {
                let mut out = Vec::new();
                for part in v.split(',') {
                    let part = part.trim();
                    match part.parse::<f64>() {
                        Ok(x) if x.is_finite() => out.push(x),
                        _ => {
                            return Err(ConfigError::Parse {
                                line,
                                msg: format!("{sec}.{key}: expected a finite number, got `{part}`"),
                            })
                        }
                    }
                }
                Ok(Some((out, line)))
            }
        }
    }

    /// Semicolon-separated points, comma-separated coordinates.
    fn points(&self, sec: &str, key: &str) -> Result<Option<(Vec<Vec<f64>>, usize)>, ConfigError> {
        match self.take(sec, key) {
            None => Ok(None),
            Some((v, line)) => {
                let mut out = Vec::new();
                for point in v.split(';') {
                    let mut coords = Vec::new();
                    for part in point.split(',') {
                        let part = part.trim();
                        match part.parse::<f64>() {
                            Ok(x) if x.is_finite() => coords.push(x),
                            _ => {
                                return Err(ConfigError::Parse {
                                    line,
                                    msg: format!(
                                        "{sec}.{key}: expected a finite number, got `{part}`"
                                    ),
                                })
                            }
                        }
                    }
                    out.push(coords);
                }
                Ok(Some((out, line)))
            }
        }
    }

    /// Semicolon-separated counts.
    fn usize_list(&self, sec: &str, key: &str) -> Result<Option<(Vec<usize>, usize)>, ConfigError> {
        match self.take(sec, key) {
            None => Ok(None),
            Some((v, line)) => {
                let mut out = Vec::new();
                for part in v.split(';') {
                    let part = part.trim();
                    match part.parse::<usize>() {
                        Ok(x) => out.push(x),
                        Err(_) => {
                            return Err(ConfigError::Parse {
                                line,
                                msg: format!(
                                    "{sec}.{key}: expected a nonnegative integer, got `{part}`"
                                ),
                            })
                        }
                    }
                }
                Ok(Some((out, line)))
            }
        }
    }
}

fn check(ok: bool, key: &str, line: usize, got: f64, want: &str) -> Result<(), ConfigError> {
    if ok {
        Ok(())
    } else {
        Err(invalid(key, format!("line {line}: {got} {want}")))
    }
}

impl RunConfig {
    /// Parse and validate; the first problem is reported with its line.
    pub fn parse(text: &str) -> Result<RunConfig, ConfigError> {
        let mut entries: Vec<Entry> = Vec::new();
        let mut seen: HashMap<(String, String), usize> = HashMap::new();
        let mut section: Option<String> = None;
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let stripped = raw.split('#').next().unwrap_or("").trim();
            if stripped.is_empty() {
                continue;
            }
            if let Some(inner) = stripped.strip_prefix('[') {
                let Some(name) = inner.strip_suffix(']') else {
                    return Err(ConfigError::Parse { line, msg: "unterminated [section] header".into() });
                };
                let name = name.trim();
                if !SECTIONS.contains(&name) {
                    return Err(ConfigError::Parse { line, msg: format!("unknown section `[{name}]`") });
                }
                section = Some(name.to_string());
            } else if let Some((k, v)) = stripped.split_once('=') {
                let key = k.trim().to_string();
                let value = v.trim().to_string();
                if key.is_empty() || value.is_empty() {
                    return Err(ConfigError::Parse { line, msg: "expected `key = value`".into() });
                }
                let Some(sec) = section.clone() else {
                    return Err(ConfigError::Parse {
                        line,
                        msg: format!("key `{key}` appears before any [section] header"),
                    });
                };
                if let Some(&first_line) = seen.get(&(sec.clone(), key.clone())) {
                    return Err(ConfigError::DuplicateKey { key: format!("{sec}.{key}"), first_line, line });
                }
                seen.insert((sec.clone(), key.clone()), line);
                entries.push(Entry { section: sec, key, value, line, used: std::cell::Cell::new(false) });
            } else {
                return Err(ConfigError::Parse {
                    line,
                    msg: format!("expected `key = value` or `[section]`, got `{stripped}`"),
                });
            }
        }

        let ctx = Ctx { entries };
        let cfg = build(&ctx)?;
        if let Some(e) = ctx.entries.iter().find(|e| !e.used.get()) {
            return Err(ConfigError::UnknownKey {
                line: e.line,
                section: e.section.clone(),
                key: e.key.clone(),
            });
        }
        Ok(cfg)
    }

    /// Read and parse a config file, returning the raw text too (callers
    /// hash it into the run manifest).
    pub fn load(path: &Path) -> crate::Result<(RunConfig, String)> {
        let text = std::fs::read_to_string(path)?;
        let cfg = RunConfig::parse(&text)?;
        Ok((cfg, text))
    }

    /// Canonical text; `parse(serialize(c)) == c` for every valid config.
    pub fn serialize(&self) -> String {
        let mut s = String::new();
        let k = &self.kernel;
        let _ = writeln!(s, "[kernel]");
        let _ = writeln!(s, "profile = {}", k.profile);
        if let Some(t) = &k.table {
            let _ = writeln!(s, "table = {t}");
        }
        let _ = writeln!(s, "r = {}", k.r);
        let _ = writeln!(s, "lambda = {}", k.lambda);
        let _ = writeln!(s, "beta = {}", k.beta);
        let _ = writeln!(s, "alignment = {}", match k.alignment {
            AlignmentMode::Mt => "mt",
            AlignmentMode::Off => "off",
        });
        let _ = writeln!(s, "\n[potential]\nkappa = {}", self.potential.kappa);
        let g = &self.grid;
        let _ = writeln!(s, "\n[grid]\nLx = {}\nLv = {}\nNx = {}\nNv = {}", g.lx, g.lv, g.nx, g.nv);
        let t = &self.time;
        let _ = writeln!(s, "\n[time]\nt_end = {}\ncfl = {}\nsnapshot_stride = {}", t.t_end, t.cfl, t.snapshot_stride);
        if let Some(dt) = t.dt {
            let _ = writeln!(s, "dt = {dt}");
        }
        let _ = writeln!(s, "\n[init]");
        match &self.init {
            InitSection::TwoBumps { x1, v1, a1, x2, v2, a2, sx, sv } => {
                let _ = writeln!(s, "name = two_bumps");
                let _ = writeln!(s, "x1 = {x1}\nv1 = {v1}\na1 = {a1}");
                let _ = writeln!(s, "x2 = {x2}\nv2 = {v2}\na2 = {a2}");
                let _ = writeln!(s, "sx = {sx}\nsv = {sv}");
            }
            InitSection::GaussianProduct { x0, v0, sx, sv, amp } => {
                let _ = writeln!(s, "name = gaussian_product");
                let _ = writeln!(s, "x0 = {x0}\nv0 = {v0}\nsx = {sx}\nsv = {sv}\namp = {amp}");
            }
            InitSection::Riemann { v_left, v_right, hw, amp } => {
                let _ = writeln!(s, "name = riemann");
                let _ = writeln!(s, "v_left = {v_left}\nv_right = {v_right}\nhw = {hw}\namp = {amp}");
            }
            InitSection::Clusters { x_centers, v_centers, radius, vspread, counts } => {
                let join = |pts: &[Vec<f64>]| {
                    pts.iter()
                        .map(|p| p.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(", "))
                        .collect::<Vec<_>>()
                        .join("; ")
                };
                let _ = writeln!(s, "name = clusters");
                let _ = writeln!(s, "x_centers = {}", join(x_centers));
                let _ = writeln!(s, "v_centers = {}", join(v_centers));
                let _ = writeln!(s, "radius = {radius}\nvspread = {vspread}");
                let _ = writeln!(
                    s,
                    "counts = {}",
                    counts.iter().map(|c| c.to_string()).collect::<Vec<_>>().join("; ")
                );
            }
        }
        let p = &self.particles;
        let _ = writeln!(s, "\n[particles]\nn = {}\nseed = {}\ndim = {}", p.n, p.seed, p.dim);
        if let Some(m) = p.total_mass {
            let _ = writeln!(s, "total_mass = {m}");
        }
        let _ = writeln!(s, "deposit = {}", p.deposit);
        let w = &self.sweep;
        let _ = writeln!(
            s,
            "\n[sweep]\nr_list = {}",
            w.r_list.iter().map(|r| r.to_string()).collect::<Vec<_>>().join(", ")
        );
        let _ = writeln!(s, "q = {}\ngap_tol = {}", w.q, w.gap_tol);
        let _ = writeln!(s, "deg_t = {}\ndeg_x = {}\ndeg_v = {}", w.deg_t, w.deg_x, w.deg_v);
        s
    }

    pub fn profile(&self) -> crate::Result<Profile> {
        match self.kernel.profile.as_str() {
            "table" => {
                let path = self.kernel.table.as_ref().expect("validated at parse");
                Profile::from_csv_path(Path::new(path))
            }
            name => Ok(Profile::by_name(name).expect("validated at parse")),
        }
    }

    pub fn influence(&self) -> crate::Result<InfluenceKernel> {
        if self.kernel.beta == 0.0 {
            InfluenceKernel::flat(self.kernel.lambda)
        } else {
            InfluenceKernel::new(self.kernel.lambda, self.kernel.beta)
        }
    }

    pub fn potential(&self) -> Potential {
        if self.potential.kappa == 0.0 {
            Potential::Zero
        } else {
            Potential::Harmonic { kappa: self.potential.kappa }
        }
    }

    pub fn alignment(&self) -> crate::Result<Alignment> {
        match self.kernel.alignment {
            AlignmentMode::Off => Ok(Alignment::Off),
            AlignmentMode::Mt if self.kernel.r == 0.0 => Ok(Alignment::Local),
            AlignmentMode::Mt => Ok(Alignment::Mollified(Mollifier::new(self.profile()?, self.kernel.r, 1)?)),
        }
    }

    pub fn physics(&self) -> crate::Result<Physics> {
        Physics::new(self.influence()?, self.potential(), self.alignment()?)
    }

    pub fn phase_grid(&self) -> crate::Result<PhaseGrid> {
        PhaseGrid::new(self.grid.lx, self.grid.nx, self.grid.lv, self.grid.nv)
    }

    pub fn solver(&self) -> SolverConfig {
        SolverConfig {
            cfl: self.time.cfl,
            dt_fixed: self.time.dt,
            t_end: self.time.t_end,
            snapshot_stride: self.time.snapshot_stride,
            ..SolverConfig::default()
        }
    }

    /// The kinetic initial datum; cluster data are particle-only.
    pub fn initial(&self) -> crate::Result<InitialData> {
        let data = match self.init {
            InitSection::TwoBumps { x1, v1, a1, x2, v2, a2, sx, sv } => {
                InitialData::TwoBumps { x1, v1, a1, x2, v2, a2, sx, sv }
            }
            InitSection::GaussianProduct { x0, v0, sx, sv, amp } => {
                InitialData::Gaussian { x0, v0, sx, sv, amp }
            }
            InitSection::Riemann { v_left, v_right, hw, amp } => {
                InitialData::Riemann { v_left, v_right, hw, amp }
            }
            InitSection::Clusters { .. } => {
                return Err(crate::Error::invalid(
                    "init.name",
                    "kinetic runs need a phase-space density, not clusters",
                ))
            }
        };
        data.validate()?;
        Ok(data)
    }

    pub fn particle_model(&self) -> crate::Result<ParticleModel> {
        let alignment = match self.kernel.alignment {
            AlignmentMode::Off => ParticleAlignment::Off,
            AlignmentMode::Mt => {
                if self.kernel.r == 0.0 {
                    return Err(crate::Error::invalid(
                        "kernel.r",
                        "particle alignment needs r > 0 (the local mode has no particle analogue)",
                    ));
                }
                ParticleAlignment::Mollified(Mollifier::new(self.profile()?, self.kernel.r, self.particles.dim)?)
            }
        };
        Ok(ParticleModel { phi: self.influence()?, potential: self.potential(), alignment })
    }

    fn cluster_specs<const D: usize>(&self) -> crate::Result<Vec<ClusterSpec<D>>> {
        let InitSection::Clusters { x_centers, v_centers, radius, vspread, counts } = &self.init
        else {
            return Err(crate::Error::invalid("init.name", "not a clusters datum"));
        };
        let mut specs = Vec::with_capacity(counts.len());
        for i in 0..counts.len() {
            let point = |p: &[f64], key: &'static str| -> crate::Result<[f64; D]> {
                p.try_into().map_err(|_| {
                    crate::Error::invalid(key, format!("point {:?} is not {D}-dimensional", p))
                })
            };
            specs.push(ClusterSpec {
                x: point(&x_centers[i], "init.x_centers")?,
                v: point(&v_centers[i], "init.v_centers")?,
                radius: *radius,
                vspread: *vspread,
                n: counts[i],
            });
        }
        Ok(specs)
    }

    /// Build the configured ensemble: cluster data are sampled directly,
    /// anything else by rejection from the kinetic datum (1-d only).
    pub fn ensemble_1d(&self) -> crate::Result<Ensemble<1>> {
        if self.particles.dim != 1 {
            return Err(crate::Error::invalid("particles.dim", "this run needs dim = 1"));
        }
        if matches!(self.init, InitSection::Clusters { .. }) {
            let specs = self.cluster_specs::<1>()?;
            let (x, v) = sample_clusters(&specs, self.particles.seed)?;
            return Ensemble::equal_weight(x, v, self.particles.total_mass.unwrap_or(1.0));
        }
        let data = self.initial()?;
        let samples = data.sample(self.particles.n, self.grid.lx, self.grid.lv, self.particles.seed)?;
        let mass = match self.particles.total_mass {
            Some(m) => m,
            None => data.density(self.phase_grid()?).mass(),
        };
        Ensemble::<1>::from_phase_samples(&samples, mass)
    }

    pub fn ensemble_2d(&self) -> crate::Result<Ensemble<2>> {
        if self.particles.dim != 2 {
            return Err(crate::Error::invalid("particles.dim", "this run needs dim = 2"));
        }
        if !matches!(self.init, InitSection::Clusters { .. }) {
            return Err(crate::Error::invalid("init.name", "2-d ensembles need a clusters datum"));
        }
        let specs = self.cluster_specs::<2>()?;
        let (x, v) = sample_clusters(&specs, self.particles.seed)?;
        Ensemble::equal_weight(x, v, self.particles.total_mass.unwrap_or(1.0))
    }

    pub fn deposit_order(&self) -> SplineOrder {
        SplineOrder::by_name(&self.particles.deposit).expect("validated at parse")
    }

    /// Test-function basis on the configured space-time domain.
    pub fn basis(&self) -> crate::Result<SeparableBasis> {
        SeparableBasis::new(
            self.time.t_end,
            self.grid.lx,
            self.grid.lv,
            self.sweep.deg_t,
            self.sweep.deg_x,
            self.sweep.deg_v,
        )
    }

    /// Everything an r-sweep shares; the sweep itself requires `time.dt`.
    pub fn sweep_setup(&self) -> crate::Result<SweepSetup> {
        Ok(SweepSetup {
            phi: self.influence()?,
            potential: self.potential(),
            profile: self.profile()?,
            solver: self.solver(),
            basis: self.basis()?,
            q: self.sweep.q,
        })
    }
}

fn build(ctx: &Ctx) -> Result<RunConfig, ConfigError> {
    let d = RunConfig::default();

    // [kernel]
    let (profile, profile_line) = match ctx.take("kernel", "profile") {
        Some((v, line)) => (v.to_string(), line),
        None => (d.kernel.profile.clone(), 0),
    };
    if !["triangle", "bump2", "cosine", "table"].contains(&profile.as_str()) {
        return Err(invalid(
            "kernel.profile",
            format!("line {profile_line}: `{profile}` is not triangle, bump2, cosine or table"),
        ));
    }
    let table = ctx.take("kernel", "table").map(|(v, _)| v.to_string());
    if profile == "table" && table.is_none() {
        return Err(invalid("kernel.table", "required when profile = table"));
    }
    if profile != "table" && table.is_some() {
        return Err(invalid("kernel.table", format!("only meaningful with profile = table, not {profile}")));
    }
    let r = match ctx.f64("kernel", "r")? {
        Some((v, line)) => {
            check(v >= 0.0, "kernel.r", line, v, "must be > 0, or 0 for local mode")?;
            v
        }
        None => d.kernel.r,
    };
    let lambda = match ctx.f64("kernel", "lambda")? {
        Some((v, line)) => {
            check(v >= 0.0, "kernel.lambda", line, v, "must be nonnegative")?;
            v
        }
        None => d.kernel.lambda,
    };
    let beta = match ctx.f64("kernel", "beta")? {
        Some((v, line)) => {
            check(v >= 0.0, "kernel.beta", line, v, "must be nonnegative (0 = constant kernel)")?;
            v
        }
        None => d.kernel.beta,
    };
    let alignment = match ctx.take("kernel", "alignment") {
        None => d.kernel.alignment,
        Some(("mt", _)) => AlignmentMode::Mt,
        Some(("off", _)) => AlignmentMode::Off,
        Some((v, line)) => {
            return Err(invalid("kernel.alignment", format!("line {line}: `{v}` is not mt or off")))
        }
    };
    let kernel = KernelSection { profile, table, r, lambda, beta, alignment };

    // [potential]
    let kappa = match ctx.f64("potential", "kappa")? {
        Some((v, line)) => {
            check(v >= 0.0, "potential.kappa", line, v, "must be nonnegative")?;
            v
        }
        None => d.potential.kappa,
    };

    // [grid]
    let lx = match ctx.f64("grid", "Lx")? {
        Some((v, line)) => {
            check(v > 0.0, "grid.Lx", line, v, "must be positive")?;
            v
        }
        None => d.grid.lx,
    };
    let lv = match ctx.f64("grid", "Lv")? {
        Some((v, line)) => {
            check(v > 0.0, "grid.Lv", line, v, "must be positive")?;
            v
        }
        None => d.grid.lv,
    };
    let nx = match ctx.usize("grid", "Nx")? {
        Some((v, line)) => {
            check(v >= 4, "grid.Nx", line, v as f64, "must be at least 4")?;
            v
        }
        None => d.grid.nx,
    };
    let nv = match ctx.usize("grid", "Nv")? {
        Some((v, line)) => {
            check(v >= 4, "grid.Nv", line, v as f64, "must be at least 4")?;
            v
        }
        None => d.grid.nv,
    };

    // [time]
    let t_end = match ctx.f64("time", "t_end")? {
        Some((v, line)) => {
            check(v > 0.0, "time.t_end", line, v, "must be positive")?;
            v
        }
        None => d.time.t_end,
    };
    let cfl = match ctx.f64("time", "cfl")? {
        Some((v, line)) => {
            check(v > 0.0 && v <= 1.0, "time.cfl", line, v, "must lie in (0, 1]")?;
            v
        }
        None => d.time.cfl,
    };
    let snapshot_stride = match ctx.usize("time", "snapshot_stride")? {
        Some((v, line)) => {
            check(v >= 1, "time.snapshot_stride", line, v as f64, "must be at least 1")?;
            v
        }
        None => d.time.snapshot_stride,
    };
    let dt = match ctx.f64("time", "dt")? {
        Some((v, line)) => {
            check(v > 0.0, "time.dt", line, v, "must be positive")?;
            Some(v)
        }
        None => None,
    };

    // [init]
    let name = ctx.take("init", "name").map(|(v, l)| (v.to_string(), l));
    let init = match name.as_ref().map(|(n, _)| n.as_str()).unwrap_or("two_bumps") {
        "two_bumps" => {
            let field = |key: &'static str, dv: f64, pos: bool| -> Result<f64, ConfigError> {
                match ctx.f64("init", key)? {
                    Some((v, line)) => {
                        if pos {
                            check(v > 0.0, &format!("init.{key}"), line, v, "must be positive")?;
                        }
                        Ok(v)
                    }
                    None => Ok(dv),
                }
            };
            InitSection::TwoBumps {
                x1: field("x1", -0.25, false)?,
                v1: field("v1", 0.3, false)?,
                a1: field("a1", 1.0, true)?,
                x2: field("x2", 0.25, false)?,
                v2: field("v2", -0.3, false)?,
                a2: field("a2", 0.8, true)?,
                sx: field("sx", 0.15, true)?,
                sv: field("sv", 0.2, true)?,
            }
        }
        "gaussian_product" => {
            let field = |key: &'static str, dv: f64, pos: bool| -> Result<f64, ConfigError> {
                match ctx.f64("init", key)? {
                    Some((v, line)) => {
                        if pos {
                            check(v > 0.0, &format!("init.{key}"), line, v, "must be positive")?;
                        }
                        Ok(v)
                    }
                    None => Ok(dv),
                }
            };
            InitSection::GaussianProduct {
                x0: field("x0", 0.0, false)?,
                v0: field("v0", 0.0, false)?,
                sx: field("sx", 0.2, true)?,
                sv: field("sv", 0.25, true)?,
                amp: field("amp", 1.0, true)?,
            }
        }
        "riemann" => {
            let field = |key: &'static str, dv: f64, pos: bool| -> Result<f64, ConfigError> {
                match ctx.f64("init", key)? {
                    Some((v, line)) => {
                        if pos {
                            check(v > 0.0, &format!("init.{key}"), line, v, "must be positive")?;
                        }
                        Ok(v)
                    }
                    None => Ok(dv),
                }
            };
            InitSection::Riemann {
                v_left: field("v_left", 0.3, false)?,
                v_right: field("v_right", -0.3, false)?,
                hw: field("hw", 0.4, true)?,
                amp: field("amp", 1.0, true)?,
            }
        }
        "clusters" => {
            let Some((x_centers, xl)) = ctx.points("init", "x_centers")? else {
                return Err(invalid("init.x_centers", "required when name = clusters"));
            };
            let Some((v_centers, _)) = ctx.points("init", "v_centers")? else {
                return Err(invalid("init.v_centers", "required when name = clusters"));
            };
            let Some((counts, cl)) = ctx.usize_list("init", "counts")? else {
                return Err(invalid("init.counts", "required when name = clusters"));
            };
            if x_centers.len() != v_centers.len() || x_centers.len() != counts.len() {
                return Err(invalid(
                    "init.counts",
                    format!(
                        "line {cl}: {} x_centers, {} v_centers and {} counts must agree",
                        x_centers.len(),
                        v_centers.len(),
                        counts.len()
                    ),
                ));
            }
            if x_centers.is_empty() {
                return Err(invalid("init.x_centers", "need at least one cluster"));
            }
            let dim = x_centers[0].len();
            if !(dim == 1 || dim == 2)
                || x_centers.iter().chain(&v_centers).any(|p| p.len() != dim)
            {
                return Err(invalid(
                    "init.x_centers",
                    format!("line {xl}: every point must have the same dimension, 1 or 2"),
                ));
            }
            if counts.iter().any(|&c| c == 0) {
                return Err(invalid("init.counts", format!("line {cl}: every cluster needs particles")));
            }
            let radius = match ctx.f64("init", "radius")? {
                Some((v, line)) => {
                    check(v > 0.0, "init.radius", line, v, "must be positive")?;
                    v
                }
                None => 0.1,
            };
            let vspread = match ctx.f64("init", "vspread")? {
                Some((v, line)) => {
                    check(v > 0.0, "init.vspread", line, v, "must be positive")?;
                    v
                }
                None => 0.05,
            };
            InitSection::Clusters { x_centers, v_centers, radius, vspread, counts }
        }
        other => {
            let line = name.as_ref().map(|(_, l)| *l).unwrap_or(0);
            return Err(invalid(
                "init.name",
                format!("line {line}: `{other}` is not two_bumps, gaussian_product, riemann or clusters"),
            ));
        }
    };

    // [particles]
    let n = match ctx.usize("particles", "n")? {
        Some((v, line)) => {
            check(v >= 1, "particles.n", line, v as f64, "must be at least 1")?;
            v
        }
        None => d.particles.n,
    };
    let seed = ctx.u64("particles", "seed")?.map(|(v, _)| v).unwrap_or(d.particles.seed);
    let dim = match ctx.usize("particles", "dim")? {
        Some((v, line)) => {
            check(v == 1 || v == 2, "particles.dim", line, v as f64, "must be 1 or 2")?;
            v
        }
        None => d.particles.dim,
    };
    let total_mass = match ctx.f64("particles", "total_mass")? {
        Some((v, line)) => {
            check(v > 0.0, "particles.total_mass", line, v, "must be positive")?;
            Some(v)
        }
        None => None,
    };
    let deposit = match ctx.take("particles", "deposit") {
        None => d.particles.deposit.clone(),
        Some((v, line)) => {
            if SplineOrder::by_name(v).is_none() {
                return Err(invalid(
                    "particles.deposit",
                    format!("line {line}: `{v}` is not linear, quadratic or cubic"),
                ));
            }
            v.to_string()
        }
    };

    // [sweep]
    let r_list = match ctx.f64_list("sweep", "r_list")? {
        Some((v, line)) => {
            if v.is_empty() {
                return Err(invalid("sweep.r_list", format!("line {line}: empty")));
            }
            for &r in &v {
                check(r >= 0.0, "sweep.r_list", line, r, "must be nonnegative")?;
            }
            v
        }
        None => d.sweep.r_list.clone(),
    };
    let q = match ctx.f64("sweep", "q")? {
        Some((v, line)) => {
            check((1.0..1.5).contains(&v), "sweep.q", line, v, "must lie in [1, 3/2)")?;
            v
        }
        None => d.sweep.q,
    };
    let gap_tol = match ctx.f64("sweep", "gap_tol")? {
        Some((v, line)) => {
            check(v > 0.0, "sweep.gap_tol", line, v, "must be positive")?;
            v
        }
        None => d.sweep.gap_tol,
    };
    let deg = |key: &'static str, dv: usize| -> Result<usize, ConfigError> {
        match ctx.usize("sweep", key)? {
            Some((v, line)) => {
                check(v >= 1, &format!("sweep.{key}"), line, v as f64, "must be at least 1")?;
                Ok(v)
            }
            None => Ok(dv),
        }
    };
    let (deg_t, deg_x, deg_v) = (deg("deg_t", d.sweep.deg_t)?, deg("deg_x", d.sweep.deg_x)?, deg("deg_v", d.sweep.deg_v)?);

    Ok(RunConfig {
        kernel,
        potential: PotentialSection { kappa },
        grid: GridSection { lx, lv, nx, nv },
        time: TimeSection { t_end, cfl, snapshot_stride, dt },
        init,
        particles: ParticleSection { n, seed, dim, total_mass, deposit },
        sweep: SweepSection { r_list, q, gap_tol, deg_t, deg_x, deg_v },
    })
}
