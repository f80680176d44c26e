//! Finite-volume solver for the kinetic flocking equation
//!
//! `∂_t f + v ∂_x f - ∂_v(f ∂_x Ψ) + ∂_v(f F[f]) + ∂_v(f L[f]) = 0`
//!
//! with `F[f] = a(x) - b(x) v` (where `a = Φ⋆j`, `b = Φ⋆ρ`) and the
//! alignment term `L[f] = ũ(x) - v` built from either the mollified or the
//! strictly local bulk velocity.
//!
//! Scheme: Strang splitting — half-step of x-transport, full velocity step
//! with the force field frozen from the half-advected state, half-step of
//! x-transport. Both sub-sweeps are conservative upwind finite-volume
//! updates with an optional minmod-limited second-order correction. Face
//! values stay within `[0, 1.5 · f_upwind]`, so each cell drains at most
//! `3ν` of its content per sub-sweep and the update preserves positivity
//! whenever the CFL number is at most 1/3. Ghost cells are zero (outflow);
//! the mass crossing the boundary telescopes out of the flux form exactly
//! and is tallied, so `mass(t) + outflow(t)` is conserved to roundoff.

use ndarray::Array1;

use crate::kernels::{convolve, InfluenceKernel, Mollifier};
use crate::phase::{cs_dissipation, PhaseDensity};
use crate::{Error, Result};

/// Confinement potential `Ψ`.
#[derive(Debug, Clone, PartialEq)]
pub enum Potential {
    Zero,
    /// `Ψ(x) = κ x² / 2`.
    Harmonic { kappa: f64 },
}

impl Potential {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Potential::Zero => Ok(()),
            Potential::Harmonic { kappa } => {
                if kappa.is_finite() && kappa >= 0.0 {
                    Ok(())
                } else {
                    Err(Error::invalid("kappa", format!("{kappa} is not finite and nonnegative")))
                }
            }
        }
    }

    #[inline]
    pub fn value(&self, x: f64) -> f64 {
        match *self {
            Potential::Zero => 0.0,
            Potential::Harmonic { kappa } => 0.5 * kappa * x * x,
        }
    }

    #[inline]
    pub fn grad(&self, x: f64) -> f64 {
        match *self {
            Potential::Zero => 0.0,
            Potential::Harmonic { kappa } => kappa * x,
        }
    }
}

/// Alignment term: off, strictly local (`u = j/ρ`), or mollified
/// (`ũ = K_r⋆j / K_r⋆ρ`). The local variant is the `r → 0` limit.
#[derive(Debug, Clone)]
pub enum Alignment {
    Off,
    Local,
    Mollified(Mollifier),
}

/// Model parameters. `lbound_c` is the constant used on the right-hand side
/// of the alignment pairing bound `∫f v(ũ-v) ≤ C E - D/2`; it defaults to
/// the mollifier's ratio-bound constant (0 for local/off alignment, where
/// the pairing equals `-D` and any `C ≥ 0` works) and can be pinned
/// explicitly so that runs at different radii share one constant.
#[derive(Debug, Clone)]
pub struct Physics {
    pub phi: InfluenceKernel,
    pub potential: Potential,
    pub alignment: Alignment,
    lbound_c: f64,
}

impl Physics {
    pub fn new(phi: InfluenceKernel, potential: Potential, alignment: Alignment) -> Result<Self> {
        potential.validate()?;
        let lbound_c = match &alignment {
            Alignment::Mollified(m) => m.mt_constant(),
            Alignment::Local | Alignment::Off => 0.0,
        };
        Ok(Physics { phi, potential, alignment, lbound_c })
    }

    pub fn with_lbound_c(mut self, c: f64) -> Self {
        self.lbound_c = c;
        self
    }

    pub fn lbound_c(&self) -> f64 {
        self.lbound_c
    }
}

/// The force field assembled from a fixed density: acceleration
/// `A(x, v) = -Ψ'(x) + a(x) - b(x) v + [ũ(x) - v]` is affine in `v`,
/// `A = A0(x) + A1(x) v`, with `∂A/∂v = A1 = -(b + 1_alignment)`.
#[derive(Debug, Clone)]
pub struct ForceField {
    /// `Φ ⋆ j`.
    pub a: Array1<f64>,
    /// `Φ ⋆ ρ`.
    pub b: Array1<f64>,
    /// Alignment velocity (`None` when alignment is off).
    pub ualign: Option<Array1<f64>>,
    grad_psi: Array1<f64>,
}

impl ForceField {
    pub fn compute(phys: &Physics, f: &PhaseDensity) -> Result<ForceField> {
        let axis = &f.grid().x;
        let rho = f.rho();
        let j = f.current();
        let a = convolve(&phys.phi, axis, &j)?;
        let b = convolve(&phys.phi, axis, &rho)?;
        let ualign = match &phys.alignment {
            Alignment::Off => None,
            Alignment::Local => Some(f.bulk_velocity()),
            Alignment::Mollified(m) => {
                let kr = convolve(m, axis, &rho)?;
                let kj = convolve(m, axis, &j)?;
                let mut u = Array1::zeros(axis.n());
                for i in 0..axis.n() {
                    // |K⋆j| ≤ max|v| · K⋆ρ cell by cell, so ũ is bounded by
                    // the velocity domain wherever the mollified density is
                    // positive; vacuum extends by 0.
                    if kr[i] > 0.0 {
                        u[i] = kj[i] / kr[i];
                    }
                }
                Some(u)
            }
        };
        let grad_psi = Array1::from_iter((0..axis.n()).map(|i| phys.potential.grad(axis.center(i))));
        Ok(ForceField { a, b, ualign, grad_psi })
    }

    /// Constant-in-v part of the acceleration at cell `i`.
    #[inline]
    pub fn a0(&self, i: usize) -> f64 {
        let align = self.ualign.as_ref().map_or(0.0, |u| u[i]);
        -self.grad_psi[i] + self.a[i] + align
    }

    /// Linear-in-v coefficient (= velocity divergence of the acceleration).
    #[inline]
    pub fn a1(&self, i: usize) -> f64 {
        let align = if self.ualign.is_some() { 1.0 } else { 0.0 };
        -(self.b[i] + align)
    }

    /// `A(x_i, v)`.
    #[inline]
    pub fn accel(&self, i: usize, v: f64) -> f64 {
        self.a0(i) + self.a1(i) * v
    }

    /// Analytic `∂A/∂v` at cell `i`.
    #[inline]
    pub fn div_v(&self, i: usize) -> f64 {
        self.a1(i)
    }

    /// Upper bound for `|A|` over the velocity domain `[-lv, lv]`.
    pub fn max_accel(&self, lv: f64) -> f64 {
        let mut m = 0.0f64;
        for i in 0..self.a.len() {
            m = m.max(self.a0(i).abs() + self.a1(i).abs() * lv);
        }
        m
    }
}

/// Time-stepping parameters.
#[derive(Debug, Clone)]
pub struct SolverConfig {
    /// CFL number; positivity is guaranteed for `cfl ≤ 1/3`.
    pub cfl: f64,
    /// Fixed step (still subject to the CFL bound — violating it aborts).
    /// Needed when several runs must share snapshot times exactly.
    pub dt_fixed: Option<f64>,
    /// Second-order minmod correction on top of donor-cell upwind.
    pub muscl: bool,
    pub t_end: f64,
    /// Keep a snapshot every this many steps; `t = 0` and the final state
    /// are always kept.
    pub snapshot_stride: usize,
    /// Abort once the cumulative outflow exceeds this fraction of the
    /// initial mass.
    pub mass_loss_budget: f64,
    /// Exponent of the `L^p` diagnostic column.
    pub lp_p: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            cfl: 0.3,
            dt_fixed: None,
            muscl: true,
            t_end: 1.0,
            snapshot_stride: 32,
            mass_loss_budget: 0.05,
            lp_p: 2.0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.cfl > 0.0 && self.cfl <= 1.0 / 3.0 + 1e-12) {
            return Err(Error::invalid("cfl", format!("{} outside (0, 1/3]; positivity needs cfl ≤ 1/3", self.cfl)));
        }
        if !(self.t_end.is_finite() && self.t_end > 0.0) {
            return Err(Error::invalid("t_end", format!("{} is not finite and positive", self.t_end)));
        }
        if self.snapshot_stride == 0 {
            return Err(Error::invalid("snapshot_stride", "must be at least 1"));
        }
        if let Some(dt) = self.dt_fixed {
            if !(dt.is_finite() && dt > 0.0) {
                return Err(Error::invalid("dt", format!("{dt} is not finite and positive")));
            }
        }
        if !(self.mass_loss_budget >= 0.0) {
            return Err(Error::invalid("mass_loss_budget", "must be nonnegative"));
        }
        if !(self.lp_p >= 1.0) {
            return Err(Error::invalid("lp_p", "need p ≥ 1"));
        }
        Ok(())
    }
}

/// One diagnostics row, recorded at `t = 0` and after every step.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagRow {
    pub t: f64,
    pub mass: f64,
    pub momentum: f64,
    pub energy: f64,
    /// `∫ f |ũ - v|²` against the active alignment velocity (0 if off).
    pub d_local: f64,
    /// Pairwise alignment dissipation `½∬ Φ f f |w-v|²`.
    pub d_cs: f64,
    pub linf: f64,
    pub lp: f64,
    /// `∫ f v (ũ - v)`, the alignment pairing (0 if alignment is off).
    pub lbound_lhs: f64,
    /// `C · E - D_local / 2` with the physics' pinned constant.
    pub lbound_rhs: f64,
    /// Cumulative mass that left through the boundary.
    pub outflow: f64,
}

/// Everything a run produces. On an abort, `failure` holds the reason and
/// the snapshots/diagnostics cover the completed prefix.
#[derive(Debug)]
pub struct RunOutput {
    pub snapshots: Vec<(f64, PhaseDensity)>,
    pub diagnostics: Vec<DiagRow>,
    pub steps: usize,
    pub failure: Option<Error>,
}

#[inline]
fn minmod(a: f64, b: f64) -> f64 {
    if a > 0.0 && b > 0.0 {
        a.min(b)
    } else if a < 0.0 && b < 0.0 {
        a.max(b)
    } else {
        0.0
    }
}

/// One conservative upwind substep of `∂_t g + ∂_y (c g) = 0` on a line of
/// cells with ghost value 0 outside. `speed(k)` gives the face speeds for
/// the `n + 1` faces. Returns `dt (F_n - F_0)`: the mass (per transverse
/// length) that left through the two boundary faces — nonnegative, because
/// inflow faces see only the zero ghost.
///
/// With `muscl` the face value is `f_up + ½(1-ν) minmod(Δ_up, Δ_down)`
/// (differences taken in the flow direction), which stays within
/// `[f_up/2, 3 f_up/2]`; a cell therefore loses at most `3ν f` per substep
/// and the update preserves positivity for `ν ≤ 1/3`.
fn advect_line(
    g: &mut [f64],
    speed: impl Fn(usize) -> f64,
    dt: f64,
    h: f64,
    muscl: bool,
    flux: &mut Vec<f64>,
) -> f64 {
    let n = g.len();
    flux.clear();
    flux.resize(n + 1, 0.0);
    let val = |k: isize| -> f64 {
        if k < 0 || k >= n as isize {
            0.0
        } else {
            g[k as usize]
        }
    };
    for k in 0..=n {
        let c = speed(k);
        if c == 0.0 {
            continue;
        }
        let up = if c > 0.0 { k as isize - 1 } else { k as isize };
        let fup = val(up);
        let mut face = fup;
        if muscl {
            let dir: isize = if c > 0.0 { 1 } else { -1 };
            let d_up = fup - val(up - dir);
            let d_down = val(up + dir) - fup;
            let nu = c.abs() * dt / h;
            face += 0.5 * (1.0 - nu) * minmod(d_up, d_down);
        }
        flux[k] = c * face;
    }
    let nu = dt / h;
    for k in 0..n {
        g[k] -= nu * (flux[k + 1] - flux[k]);
    }
    dt * (flux[n] - flux[0])
}

/// Transport sweep `∂_t f + v ∂_x f = 0` over all columns; returns the mass
/// lost through the x-boundary.
fn x_sweep(
    f: &mut PhaseDensity,
    dt: f64,
    muscl: bool,
    scratch: &mut Vec<f64>,
    flux: &mut Vec<f64>,
) -> f64 {
    let nv = f.grid().v.n();
    let hx = f.grid().x.h();
    let hv = f.grid().v.h();
    let vc: Vec<f64> = (0..nv).map(|j| f.grid().v.center(j)).collect();
    let mut out = 0.0;
    for j in 0..nv {
        let c = vc[j];
        if c == 0.0 {
            continue;
        }
        scratch.clear();
        scratch.extend(f.values().column(j).iter());
        out += advect_line(scratch, |_| c, dt, hx, muscl, flux);
        for (i, &g) in scratch.iter().enumerate() {
            f.values_mut()[[i, j]] = g;
        }
    }
    out * hv
}

/// Force sweep `∂_t f + ∂_v (A f) = 0` over all rows with face speeds
/// `A(x_i, v_edge)`; returns the mass lost through the v-boundary.
fn v_sweep(f: &mut PhaseDensity, force: &ForceField, dt: f64, muscl: bool, flux: &mut Vec<f64>) -> f64 {
    let hv = f.grid().v.h();
    let hx = f.grid().x.h();
    let lv = f.grid().v.l();
    let mut out = 0.0;
    for (i, mut row) in f.values_mut().rows_mut().into_iter().enumerate() {
        let a0 = force.a0(i);
        let a1 = force.a1(i);
        let g = row.as_slice_mut().expect("rows of a standard-layout array are contiguous");
        out += advect_line(g, |k| a0 + a1 * (-lv + k as f64 * hv), dt, hv, muscl, flux);
    }
    out * hx
}

/// Reject non-finite states, clamp roundoff-scale negatives to zero, and
/// fail loudly on anything genuinely negative (which would be a scheme bug,
/// not roundoff — positivity is guaranteed for cfl ≤ 1/3).
fn scrub(f: &mut PhaseDensity, t: f64) -> Result<()> {
    let mut linf = 0.0f64;
    for (idx, &v) in f.values().iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::NonFiniteState { index: idx, t });
        }
        linf = linf.max(v.abs());
    }
    let floor = -1e-13 * linf.max(f64::MIN_POSITIVE);
    for ((i, j), v) in f.values_mut().indexed_iter_mut() {
        if *v < 0.0 {
            if *v < floor {
                return Err(Error::NegativeDensity { t, i, j, value: *v });
            }
            *v = 0.0;
        }
    }
    Ok(())
}

fn diagnose(phys: &Physics, f: &PhaseDensity, t: f64, outflow: f64, lp_p: f64) -> Result<DiagRow> {
    let force = ForceField::compute(phys, f)?;
    let mass = f.mass();
    let momentum = f.total_momentum();
    let energy = f.energy(|x| phys.potential.value(x));
    let d_cs = cs_dissipation(f, &phys.phi)?;
    let (d_local, lbound_lhs, lbound_rhs) = match &force.ualign {
        None => (0.0, 0.0, 0.0),
        Some(u) => {
            let d = f.dissipation_against(u)?;
            let j = f.current();
            let s = f.second_moment();
            let mut lhs = 0.0;
            for i in 0..j.len() {
                lhs += u[i] * j[i] - s[i];
            }
            lhs *= f.grid().x.h();
            (d, lhs, phys.lbound_c() * energy - 0.5 * d)
        }
    };
    Ok(DiagRow {
        t,
        mass,
        momentum,
        energy,
        d_local,
        d_cs,
        linf: f.linf(),
        lp: f.lp_norm(lp_p),
        lbound_lhs,
        lbound_rhs,
        outflow,
    })
}

/// Run the scheme from `f0` to `t_end`, recording diagnostics each step and
/// a snapshot every `snapshot_stride` steps (plus the initial and final
/// states). Runs sharing `dt_fixed`, `t_end` and the stride execute the same
/// step sequence, so their snapshot times agree bitwise — which is what the
/// radius sweep compares against. Never panics on numerical trouble: aborts
/// set `failure` and leave the completed prefix in place.
pub fn run(phys: &Physics, cfg: &SolverConfig, f0: PhaseDensity) -> RunOutput {
    let mut out = RunOutput { snapshots: Vec::new(), diagnostics: Vec::new(), steps: 0, failure: None };
    if let Err(e) = cfg.validate() {
        out.failure = Some(e);
        return out;
    }
    if f0.min() < 0.0 {
        out.failure = Some(Error::invalid("initial data", "negative values"));
        return out;
    }

    let grid = f0.grid().clone();
    let (hx, hv) = (grid.x.h(), grid.v.h());
    let lv = grid.v.l();
    let vmax = lv - 0.5 * hv; // largest advection speed over cell centers
    let m0 = f0.mass();
    let mut f = f0;

    match diagnose(phys, &f, 0.0, 0.0, cfg.lp_p) {
        Ok(row) => out.diagnostics.push(row),
        Err(e) => {
            out.failure = Some(e);
            return out;
        }
    }
    out.snapshots.push((0.0, f.clone()));

    let mut t = 0.0;
    let mut outflow = 0.0;
    let mut scratch = Vec::new();
    let mut flux = Vec::new();
    let t_eps = 1e-12 * cfg.t_end;

    while t < cfg.t_end - t_eps {
        // Step size from the pre-step force field.
        let pre = match ForceField::compute(phys, &f) {
            Ok(p) => p,
            Err(e) => {
                out.failure = Some(e);
                break;
            }
        };
        let amax = pre.max_accel(lv);
        let mut bound = cfg.cfl * hx / vmax;
        if amax > 0.0 {
            bound = bound.min(cfg.cfl * hv / amax);
        }
        let mut dt = match cfg.dt_fixed {
            Some(d) => {
                if d > bound * (1.0 + 1e-9) {
                    out.failure = Some(Error::CflViolation { t, dt: d, bound });
                    break;
                }
                d
            }
            None => bound,
        };
        dt = dt.min(cfg.t_end - t);

        outflow += x_sweep(&mut f, 0.5 * dt, cfg.muscl, &mut scratch, &mut flux);
        let force = match ForceField::compute(phys, &f) {
            Ok(p) => p,
            Err(e) => {
                out.failure = Some(e);
                break;
            }
        };
        outflow += v_sweep(&mut f, &force, dt, cfg.muscl, &mut flux);
        outflow += x_sweep(&mut f, 0.5 * dt, cfg.muscl, &mut scratch, &mut flux);
        t += dt;
        out.steps += 1;

        if let Err(e) = scrub(&mut f, t) {
            out.failure = Some(e);
            break;
        }
        match diagnose(phys, &f, t, outflow, cfg.lp_p) {
            Ok(row) => out.diagnostics.push(row),
            Err(e) => {
                out.failure = Some(e);
                break;
            }
        }
        if outflow > cfg.mass_loss_budget * m0 {
            out.failure =
                Some(Error::MassLossExceeded { t, loss: outflow, budget: cfg.mass_loss_budget * m0 });
            break;
        }
        if out.steps % cfg.snapshot_stride == 0 && t < cfg.t_end - t_eps {
            out.snapshots.push((t, f.clone()));
        }
    }
    if out.failure.is_none() {
        out.snapshots.push((t, f.clone()));
    }
    out
}
