//! Trajectory checks: discrete counterparts of the model's inequalities and
//! identities, evaluated on diagnostics rows and snapshots after a run.
//!
//! Conventions shared by all inequality checks: the report's `worst_margin`
//! is the largest observed value of (left side − right side), so any value
//! `≤ tol` passes; `margin ≤ 0` means the inequality held outright.

use ndarray::Array2;

use crate::kernels::InfluenceKernel;
use crate::phase::PhaseDensity;
use crate::solver::{DiagRow, ForceField, Physics};
use crate::testfn::SeparableBasis;
use crate::{Error, Result};

/// Outcome of a per-step inequality check.
#[derive(Debug, Clone, PartialEq)]
pub struct InequalityReport {
    pub name: &'static str,
    /// Largest value of (left side − right side) over all steps.
    pub worst_margin: f64,
    pub worst_t: f64,
    /// `|rhs|` at the worst step, for reading the margin relatively.
    pub scale: f64,
}

impl InequalityReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.worst_margin <= tol
    }
}

fn need_rows(rows: &[DiagRow], need: usize) -> Result<()> {
    if rows.len() < need {
        Err(Error::InsufficientSnapshots { got: rows.len(), need })
    } else {
        Ok(())
    }
}

/// Default tolerance for the differential inequality checks: a first-order
/// scheme-error scale, proportional to the initial energy. Halving the grid
/// and the step halves it, which is what the refinement criteria lean on.
pub fn scheme_tolerance(hx: f64, hv: f64, dt: f64, e0: f64) -> f64 {
    10.0 * (hx + hv + dt) * e0
}

/// Growth constant of the `L^p` bounds: `C = 1 + M·sup Φ` — the 1 from the
/// unit-rate normalized alignment (velocity divergence −1), the rest from
/// the velocity divergence `−Φ⋆ρ ≥ −M·sup Φ` of the pair force.
pub fn growth_constant(phi: &InfluenceKernel, mass: f64) -> f64 {
    1.0 + mass * phi.eval(0.0)
}

/// Discrete differential energy inequality, forward difference against the
/// left endpoint: `(E_{n+1} − E_n)/Δt ≤ c·E_n − ½·D_local,n − ½·D_cs,n`.
pub fn energy_inequality(rows: &[DiagRow], c: f64) -> Result<InequalityReport> {
    need_rows(rows, 2)?;
    let mut rep = InequalityReport { name: "energy", worst_margin: f64::NEG_INFINITY, worst_t: 0.0, scale: 0.0 };
    for w in rows.windows(2) {
        let dt = w[1].t - w[0].t;
        let lhs = (w[1].energy - w[0].energy) / dt;
        let rhs = c * w[0].energy - 0.5 * w[0].d_local - 0.5 * w[0].d_cs;
        let margin = lhs - rhs;
        if margin > rep.worst_margin {
            rep.worst_margin = margin;
            rep.worst_t = w[0].t;
            rep.scale = rhs.abs();
        }
    }
    Ok(rep)
}

/// Per-step alignment pairing bound `lbound_lhs ≤ lbound_rhs` (the rhs
/// column already carries `C·E − ½·D_local` with the run's pinned constant).
pub fn lbound_inequality(rows: &[DiagRow]) -> Result<InequalityReport> {
    need_rows(rows, 1)?;
    let mut rep = InequalityReport { name: "lbound", worst_margin: f64::NEG_INFINITY, worst_t: 0.0, scale: 0.0 };
    for row in rows {
        let margin = row.lbound_lhs - row.lbound_rhs;
        if margin > rep.worst_margin {
            rep.worst_margin = margin;
            rep.worst_t = row.t;
            rep.scale = row.lbound_rhs.abs();
        }
    }
    Ok(rep)
}

/// Norm-growth bound `‖f(t)‖_p ≤ ‖f0‖_p · e^{((p−1)/p)·c·t}`; pass
/// `p = f64::INFINITY` to check the sup-norm column (exponent factor 1).
/// For finite `p` the diagnostics must have been recorded with `lp_p = p`.
pub fn lp_growth(rows: &[DiagRow], p: f64, c: f64) -> Result<InequalityReport> {
    need_rows(rows, 1)?;
    if !(p > 1.0) {
        return Err(Error::invalid("p", format!("{p} must exceed 1")));
    }
    let (name, factor) = if p.is_infinite() {
        ("linf_growth", 1.0)
    } else {
        ("lp_growth", (p - 1.0) / p)
    };
    let pick = |row: &DiagRow| if p.is_infinite() { row.linf } else { row.lp };
    let v0 = pick(&rows[0]);
    let mut rep = InequalityReport { name, worst_margin: f64::NEG_INFINITY, worst_t: 0.0, scale: 0.0 };
    for row in rows {
        let bound = v0 * (factor * c * row.t).exp();
        let margin = pick(row) - bound;
        if margin > rep.worst_margin {
            rep.worst_margin = margin;
            rep.worst_t = row.t;
            rep.scale = bound;
        }
    }
    Ok(rep)
}

/// Max deviation of the centered velocity difference of the acceleration
/// from its analytic divergence `−(b + 1_alignment)`. The field is affine in
/// `v`, so centered differences are exact and the residual is roundoff.
pub fn divergence_identity(phys: &Physics, f: &PhaseDensity) -> Result<f64> {
    let force = ForceField::compute(phys, f)?;
    let grid = f.grid();
    let hv = grid.v.h();
    let mut worst = 0.0f64;
    for i in 0..grid.x.n() {
        let div = force.div_v(i);
        for j in 0..grid.v.n() {
            let v = grid.v.center(j);
            let fd = (force.accel(i, v + hv) - force.accel(i, v - hv)) / (2.0 * hv);
            worst = worst.max((fd - div).abs());
        }
    }
    Ok(worst)
}

/// Velocity-moment tables of one snapshot against the basis' velocity
/// factors: `[l][i]` entries of `∫f V_l dv`, `∫f v V_l dv`, `∫f V'_l dv`,
/// `∫f v V'_l dv` (midpoint quadrature).
pub(crate) struct VelocityMoments {
    pub m0: Array2<f64>,
    pub mv: Array2<f64>,
    pub md: Array2<f64>,
    pub mvd: Array2<f64>,
}

pub(crate) fn velocity_moments(f: &PhaseDensity, basis: &SeparableBasis) -> VelocityMoments {
    let grid = f.grid();
    let (nx, nv) = (grid.x.n(), grid.v.n());
    let hv = grid.v.h();
    let nl = basis.l_max + 1;
    let vc: Vec<f64> = (0..nv).map(|j| grid.v.center(j)).collect();
    let vval = Array2::from_shape_fn((nl, nv), |(l, j)| basis.vel_value(l, vc[j]));
    let vder = Array2::from_shape_fn((nl, nv), |(l, j)| basis.vel_deriv(l, vc[j]));
    let mut out = VelocityMoments {
        m0: Array2::zeros((nl, nx)),
        mv: Array2::zeros((nl, nx)),
        md: Array2::zeros((nl, nx)),
        mvd: Array2::zeros((nl, nx)),
    };
    for i in 0..nx {
        for l in 0..nl {
            let (mut a, mut b, mut c, mut d) = (0.0, 0.0, 0.0, 0.0);
            for j in 0..nv {
                let fv = f.values()[[i, j]];
                a += fv * vval[[l, j]];
                b += fv * vc[j] * vval[[l, j]];
                c += fv * vder[[l, j]];
                d += fv * vc[j] * vder[[l, j]];
            }
            out.m0[[l, i]] = a * hv;
            out.mv[[l, i]] = b * hv;
            out.md[[l, i]] = c * hv;
            out.mvd[[l, i]] = d * hv;
        }
    }
    out
}

/// Trapezoid weights for possibly non-uniform snapshot times.
pub(crate) fn trapezoid_weights(times: &[f64]) -> Vec<f64> {
    let n = times.len();
    let mut w = vec![0.0; n];
    for s in 0..n {
        let left = if s == 0 { times[0] } else { times[s - 1] };
        let right = if s == n - 1 { times[n - 1] } else { times[s + 1] };
        w[s] = 0.5 * (right - left);
    }
    w
}

/// Weak-form residuals, one per basis function.
#[derive(Debug, Clone)]
pub struct WeakReport {
    /// In `basis.indices()` order.
    pub residuals: Vec<f64>,
    pub max_abs: f64,
}

/// Evaluate the weak-form residual
/// `R(φ) = ∫₀ᵀ ∬ f·(∂_tφ + v·∂_xφ + A·∂_vφ) dx dv dt + ∬ f(0)·φ(0) dx dv`
/// for every separable test function, with the acceleration `A` assembled
/// from each snapshot exactly as the solver assembles it. Space and velocity
/// integrals use midpoint quadrature; time uses the trapezoid rule over the
/// snapshot times, so the result carries `O(h² + Δt_snap²)` quadrature error
/// plus whatever the snapshots themselves deviate from a weak solution.
pub fn weak_residual(
    phys: &Physics,
    snaps: &[(f64, PhaseDensity)],
    basis: &SeparableBasis,
) -> Result<WeakReport> {
    if snaps.len() < 2 {
        return Err(Error::InsufficientSnapshots { got: snaps.len(), need: 2 });
    }
    let grid = snaps[0].1.grid().clone();
    for (_, f) in snaps {
        if f.grid().x.n() != grid.x.n() || f.grid().v.n() != grid.v.n() {
            return Err(Error::DomainMismatch { got: f.grid().x.n(), want: grid.x.n() });
        }
    }
    let t_last = snaps.last().unwrap().0;
    if (t_last - basis.t_end).abs() > 1e-9 * basis.t_end.max(1.0) {
        return Err(Error::invalid(
            "basis",
            format!("time horizon {} does not end at the final snapshot time {t_last}", basis.t_end),
        ));
    }
    if (grid.x.l() - basis.lx).abs() > 1e-12 || (grid.v.l() - basis.lv).abs() > 1e-12 {
        return Err(Error::invalid("basis", "domain half-widths must match the grid"));
    }

    let (nx, hx) = (grid.x.n(), grid.x.h());
    let nk = basis.k_max + 1;
    let nl = basis.l_max + 1;
    let xc: Vec<f64> = (0..nx).map(|i| grid.x.center(i)).collect();
    let xval = Array2::from_shape_fn((nk, nx), |(k, i)| basis.space_value(k, xc[i]));
    let xder = Array2::from_shape_fn((nk, nx), |(k, i)| basis.space_deriv(k, xc[i]));

    // Per snapshot: S1 = ∬ f X V and S23 = ∬ f (v X' V + A X V').
    let mut s1 = Vec::with_capacity(snaps.len());
    let mut s23 = Vec::with_capacity(snaps.len());
    for (_, f) in snaps {
        let force = ForceField::compute(phys, f)?;
        let a0: Vec<f64> = (0..nx).map(|i| force.a0(i)).collect();
        let a1: Vec<f64> = (0..nx).map(|i| force.a1(i)).collect();
        let m = velocity_moments(f, basis);
        let mut s1s = Array2::zeros((nk, nl));
        let mut s23s = Array2::zeros((nk, nl));
        for k in 0..nk {
            for l in 0..nl {
                let (mut acc1, mut acc23) = (0.0, 0.0);
                for i in 0..nx {
                    acc1 += xval[[k, i]] * m.m0[[l, i]];
                    acc23 += xder[[k, i]] * m.mv[[l, i]]
                        + xval[[k, i]] * (a0[i] * m.md[[l, i]] + a1[i] * m.mvd[[l, i]]);
                }
                s1s[[k, l]] = acc1 * hx;
                s23s[[k, l]] = acc23 * hx;
            }
        }
        s1.push(s1s);
        s23.push(s23s);
    }

    let times: Vec<f64> = snaps.iter().map(|s| s.0).collect();
    let wts = trapezoid_weights(&times);
    let mut residuals = Vec::with_capacity(basis.len());
    let mut max_abs = 0.0f64;
    for (m, k, l) in basis.indices() {
        let mut r = basis.time_value(m, 0.0) * s1[0][[k, l]];
        for s in 0..times.len() {
            r += wts[s]
                * (basis.time_deriv(m, times[s]) * s1[s][[k, l]]
                    + basis.time_value(m, times[s]) * s23[s][[k, l]]);
        }
        max_abs = max_abs.max(r.abs());
        residuals.push(r);
    }
    Ok(WeakReport { residuals, max_abs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::PhaseGrid;
    use crate::init::bump;
    use crate::kernels::{Mollifier, Profile};
    use crate::solver::{run, Alignment, Potential, SolverConfig};

    fn transport_only() -> Physics {
        Physics::new(InfluenceKernel::flat(0.0).unwrap(), Potential::Zero, Alignment::Off).unwrap()
    }

    #[test]
    fn divergence_residual_is_roundoff_for_every_force_mode() {
        let grid = PhaseGrid::new(0.75, 48, 1.0, 48).unwrap();
        let f = PhaseDensity::from_fn(grid, |x, v| bump(x / 0.4) * bump(v / 0.4));
        let modes: Vec<(Physics, &str)> = vec![
            (transport_only(), "zero field"),
            (
                Physics::new(InfluenceKernel::new(1.2, 1.0).unwrap(), Potential::Zero, Alignment::Off).unwrap(),
                "pair force only",
            ),
            (
                Physics::new(
                    InfluenceKernel::flat(0.0).unwrap(),
                    Potential::Zero,
                    Alignment::Mollified(Mollifier::new(Profile::Triangle, 0.3, 1).unwrap()),
                )
                .unwrap(),
                "normalized alignment only",
            ),
            (
                Physics::new(
                    InfluenceKernel::new(0.8, 1.0).unwrap(),
                    Potential::Harmonic { kappa: 0.5 },
                    Alignment::Mollified(Mollifier::new(Profile::Bump2, 0.25, 1).unwrap()),
                )
                .unwrap(),
                "everything on",
            ),
        ];
        for (phys, label) in &modes {
            let resid = divergence_identity(phys, &f).unwrap();
            assert!(resid <= 1e-12, "{label}: affine-in-v field must difference exactly, got {resid}");
        }
        // The alignment-only field has divergence exactly −1 in every cell.
        let force = ForceField::compute(&modes[2].0, &f).unwrap();
        for i in 0..f.grid().x.n() {
            assert_eq!(force.div_v(i), -1.0);
        }
    }

    #[test]
    fn energy_and_lbound_hold_along_a_contracting_run() {
        // Counter-streaming bands under pure local alignment: the pairing
        // identity is exact discretely (lhs = −D ≤ −D/2 = rhs with c = 0)
        // and the energy inequality holds up to transport truncation error.
        let phys = Physics::new(InfluenceKernel::flat(0.0).unwrap(), Potential::Zero, Alignment::Local).unwrap();
        let grid = PhaseGrid::new(1.0, 64, 1.0, 64).unwrap();
        let f0 = PhaseDensity::from_fn(grid, |x, v| {
            bump(x / 0.4) * (bump((v - 0.4) / 0.2) + bump((v + 0.4) / 0.2))
        });
        let cfg = SolverConfig { t_end: 0.5, ..SolverConfig::default() };
        let out = run(&phys, &cfg, f0);
        assert!(out.failure.is_none(), "{:?}", out.failure);

        let rows = &out.diagnostics;
        let e0 = rows[0].energy;
        let dt_max = rows.windows(2).map(|w| w[1].t - w[0].t).fold(0.0, f64::max);
        let tol = scheme_tolerance(1.0 / 32.0, 1.0 / 32.0, dt_max, e0);
        let energy = energy_inequality(rows, 0.0).unwrap();
        assert!(energy.passes(tol), "worst margin {} at t = {} exceeds {tol}", energy.worst_margin, energy.worst_t);

        let lbound = lbound_inequality(rows).unwrap();
        assert!(
            lbound.worst_margin <= 1e-10 * e0.max(1.0),
            "pairing bound must hold to roundoff for local alignment, got {}",
            lbound.worst_margin
        );
    }

    #[test]
    fn norm_growth_bounds_hold_on_free_transport() {
        // The upwind scheme does not amplify any L^p norm, so both bounds
        // hold with the trivial constant c = 1 (flat zero kernel: M·supΦ = 0).
        let f0 = PhaseDensity::from_fn(PhaseGrid::new(1.0, 64, 1.0, 64).unwrap(), |x, v| {
            bump(x / 0.3) * bump((v - 0.2) / 0.3)
        });
        let cfg = SolverConfig { t_end: 0.4, ..SolverConfig::default() };
        let out = run(&transport_only(), &cfg, f0);
        assert!(out.failure.is_none());
        let c = growth_constant(&InfluenceKernel::flat(0.0).unwrap(), out.diagnostics[0].mass);
        assert_eq!(c, 1.0);
        let linf = lp_growth(&out.diagnostics, f64::INFINITY, c).unwrap();
        assert!(linf.worst_margin <= 0.0, "sup norm must stay below its bound: {}", linf.worst_margin);
        let l2 = lp_growth(&out.diagnostics, 2.0, c).unwrap();
        assert!(l2.worst_margin <= 0.0, "L2 norm must stay below its bound: {}", l2.worst_margin);
        assert!(lp_growth(&out.diagnostics, 0.5, c).is_err(), "p must exceed 1");
    }

    #[test]
    fn weak_residual_shrinks_at_second_order_for_exact_transport_states() {
        // Injected exact free-transport snapshots: the only residual is
        // midpoint/trapezoid quadrature error, which is O(h² + Δt²); joint
        // refinement must shrink it by about 4.
        let f0 = |x: f64, v: f64| bump(x / 0.35) * bump((v - 0.2) / 0.3);
        let t_end = 0.5;
        let phys = transport_only();
        let resid = |n: usize, steps: usize| -> f64 {
            let grid = PhaseGrid::new(1.0, n, 1.0, n).unwrap();
            let snaps: Vec<(f64, PhaseDensity)> = (0..=steps)
                .map(|s| {
                    let t = t_end * s as f64 / steps as f64;
                    (t, PhaseDensity::from_fn(grid.clone(), |x, v| f0(x - v * t, v)))
                })
                .collect();
            let basis = SeparableBasis::new(t_end, 1.0, 1.0, 2, 4, 4).unwrap();
            weak_residual(&phys, &snaps, &basis).unwrap().max_abs
        };
        let (coarse, fine) = (resid(48, 8), resid(96, 16));
        let ratio = coarse / fine;
        assert!(
            ratio >= 3.2,
            "quadrature-only residual should shrink at second order: {coarse} -> {fine} (ratio {ratio})"
        );
    }

    #[test]
    fn weak_residual_is_zero_for_zero_density() {
        let grid = PhaseGrid::new(0.75, 24, 1.0, 24).unwrap();
        let phys = Physics::new(
            InfluenceKernel::new(1.0, 1.0).unwrap(),
            Potential::Harmonic { kappa: 0.3 },
            Alignment::Mollified(Mollifier::new(Profile::Triangle, 0.4, 1).unwrap()),
        )
        .unwrap();
        let snaps: Vec<(f64, PhaseDensity)> =
            (0..4).map(|s| (s as f64 * 0.1, PhaseDensity::zeros(grid.clone()))).collect();
        let basis = SeparableBasis::new(0.3, 0.75, 1.0, 2, 3, 3).unwrap();
        let rep = weak_residual(&phys, &snaps, &basis).unwrap();
        assert_eq!(rep.max_abs, 0.0);
        assert!(rep.residuals.iter().all(|&r| r == 0.0));
    }

    #[test]
    fn guards_reject_malformed_inputs() {
        let grid = PhaseGrid::new(1.0, 16, 1.0, 16).unwrap();
        let snaps = vec![(0.0, PhaseDensity::zeros(grid.clone()))];
        let basis = SeparableBasis::new(0.5, 1.0, 1.0, 1, 2, 2).unwrap();
        match weak_residual(&transport_only(), &snaps, &basis) {
            Err(Error::InsufficientSnapshots { got: 1, need: 2 }) => {}
            other => panic!("expected InsufficientSnapshots, got {other:?}"),
        }
        // Basis horizon must end at the final snapshot.
        let snaps = vec![(0.0, PhaseDensity::zeros(grid.clone())), (0.3, PhaseDensity::zeros(grid))];
        assert!(weak_residual(&transport_only(), &snaps, &basis).is_err());
        assert!(energy_inequality(&[], 0.0).is_err());

        // Dyadic times make the weights exact: (t₁−t₀)/2, (t₂−t₀)/2, (t₂−t₁)/2.
        let w = trapezoid_weights(&[0.0, 0.25, 1.0]);
        assert_eq!(w, vec![0.125, 0.5, 0.375], "non-uniform trapezoid weights");
    }
}
