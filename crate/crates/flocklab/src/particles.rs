//! Deterministic N-body cross-check: the same model as the grid solver,
//! discretized as an interacting particle system
//!
//! `ẋ_i = v_i`,
//! `v̇_i = -∇Ψ(x_i) + Σ_k m_k Φ(x_i - x_k)(v_k - v_i) + [ũ(x_i) - v_i]`
//!
//! with `ũ(x_i) = Σ_k m_k K_r(x_i-x_k) v_k / Σ_k m_k K_r(x_i-x_k)` (self
//! term included, so the denominator is at least `m_i K_r(0) > 0` and `ũ`
//! is total). Masses carry the measure: the pair sum is *not* divided by N,
//! matching the mass-weighted kinetic force, while the normalized term is
//! mass-scale free.
//!
//! Integration is classical RK4. The long-range sum runs over all pairs;
//! the compactly supported alignment sum visits only the cell-list
//! neighborhood of each particle. Parallelism is over the outer particle
//! index only, with per-particle results written to their own slots, so the
//! output is bitwise identical for any thread count.

use rayon::prelude::*;

use crate::grid::PhaseGrid;
use crate::kernels::{InfluenceKernel, Mollifier};
use crate::phase::PhaseDensity;
use crate::solver::Potential;
use crate::{Error, Result};

/// Alignment term of the particle model. The strictly local variant is
/// meaningless for point particles (`ũ(x_i) = v_i` makes it vanish), so only
/// a positive-radius mollifier is accepted.
#[derive(Debug, Clone)]
pub enum ParticleAlignment {
    Off,
    Mollified(Mollifier),
}

#[derive(Debug, Clone)]
pub struct ParticleModel {
    pub phi: InfluenceKernel,
    pub potential: Potential,
    pub alignment: ParticleAlignment,
}

impl ParticleModel {
    fn validate_for(&self, dim: usize) -> Result<()> {
        self.potential.validate()?;
        if let ParticleAlignment::Mollified(m) = &self.alignment {
            if m.dim() != dim {
                return Err(Error::invalid(
                    "mollifier dim",
                    format!("kernel is {}-d but the ensemble is {}-d", m.dim(), dim),
                ));
            }
            if !(m.eval_dist(0.0) > 0.0) {
                return Err(Error::invalid(
                    "mollifier",
                    "K(0) must be positive so the self term keeps the normalization away from zero",
                ));
            }
        }
        Ok(())
    }
}

/// An ensemble of `N` particles with immutable positive masses.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble<const D: usize> {
    pub x: Vec<[f64; D]>,
    pub v: Vec<[f64; D]>,
    m: Vec<f64>,
}

impl<const D: usize> Ensemble<D> {
    pub fn new(x: Vec<[f64; D]>, v: Vec<[f64; D]>, m: Vec<f64>) -> Result<Self> {
        if x.is_empty() || x.len() != v.len() || x.len() != m.len() {
            return Err(Error::invalid(
                "ensemble",
                format!("{} positions, {} velocities, {} masses", x.len(), v.len(), m.len()),
            ));
        }
        for (i, (p, u)) in x.iter().zip(&v).enumerate() {
            if p.iter().chain(u.iter()).any(|c| !c.is_finite()) {
                return Err(Error::invalid("ensemble", format!("particle {i} has non-finite state")));
            }
        }
        if let Some(i) = m.iter().position(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::invalid("ensemble", format!("mass {i} is {}", m[i])));
        }
        Ok(Ensemble { x, v, m })
    }

    /// Equal-weight ensemble carrying total mass `M` (each `m_i = M/N`).
    pub fn equal_weight(x: Vec<[f64; D]>, v: Vec<[f64; D]>, total_mass: f64) -> Result<Self> {
        if !(total_mass.is_finite() && total_mass > 0.0) {
            return Err(Error::invalid("total_mass", format!("{total_mass} is not finite and positive")));
        }
        let w = total_mass / x.len().max(1) as f64;
        let m = vec![w; x.len()];
        Ensemble::new(x, v, m)
    }

    /// 1-d equal-weight ensemble from phase-space samples.
    pub fn from_phase_samples(samples: &[(f64, f64)], total_mass: f64) -> Result<Ensemble<1>> {
        let x = samples.iter().map(|&(x, _)| [x]).collect();
        let v = samples.iter().map(|&(_, v)| [v]).collect();
        Ensemble::equal_weight(x, v, total_mass)
    }

    pub fn n(&self) -> usize {
        self.x.len()
    }

    pub fn masses(&self) -> &[f64] {
        &self.m
    }

    pub fn total_mass(&self) -> f64 {
        self.m.iter().sum()
    }

    pub fn momentum(&self) -> [f64; D] {
        let mut p = [0.0; D];
        for (v, &w) in self.v.iter().zip(&self.m) {
            for d in 0..D {
                p[d] += w * v[d];
            }
        }
        p
    }

    pub fn mean_velocity(&self) -> [f64; D] {
        let mut m = self.momentum();
        let total = self.total_mass();
        for q in &mut m {
            *q /= total;
        }
        m
    }

    pub fn kinetic_energy(&self) -> f64 {
        let mut e = 0.0;
        for (v, &w) in self.v.iter().zip(&self.m) {
            for c in v {
                e += w * c * c;
            }
        }
        0.5 * e
    }

    pub fn energy(&self, potential: &Potential) -> f64 {
        let mut pot = 0.0;
        for (x, &w) in self.x.iter().zip(&self.m) {
            pot += w * potential_value(potential, x);
        }
        self.kinetic_energy() + pot
    }

    /// Mass-weighted velocity variance `(1/M) Σ m_i |v_i - v̄|²`.
    pub fn velocity_variance(&self) -> f64 {
        let mean = self.mean_velocity();
        let mut acc = 0.0;
        for (v, &w) in self.v.iter().zip(&self.m) {
            for d in 0..D {
                let dv = v[d] - mean[d];
                acc += w * dv * dv;
            }
        }
        acc / self.total_mass()
    }
}

fn potential_value<const D: usize>(p: &Potential, x: &[f64; D]) -> f64 {
    match *p {
        Potential::Zero => 0.0,
        Potential::Harmonic { kappa } => 0.5 * kappa * x.iter().map(|c| c * c).sum::<f64>(),
    }
}

fn potential_grad<const D: usize>(p: &Potential, x: &[f64; D]) -> [f64; D] {
    match *p {
        Potential::Zero => [0.0; D],
        Potential::Harmonic { kappa } => {
            let mut g = *x;
            for c in &mut g {
                *c *= kappa;
            }
            g
        }
    }
}

/// Uniform-grid cell list with cell width equal to the interaction radius:
/// every partner within that radius of a particle lies in the 3^D
/// neighborhood of its cell. Build order is particle-index order, and the
/// neighborhood is visited in a fixed lexicographic sweep, so sums over it
/// are deterministic.
struct CellList<const D: usize> {
    origin: [f64; D],
    inv_h: f64,
    dims: [usize; D],
    cells: Vec<Vec<u32>>,
}

impl<const D: usize> CellList<D> {
    fn build(xs: &[[f64; D]], h: f64) -> CellList<D> {
        let mut lo = [f64::INFINITY; D];
        let mut hi = [f64::NEG_INFINITY; D];
        for x in xs {
            for d in 0..D {
                lo[d] = lo[d].min(x[d]);
                hi[d] = hi[d].max(x[d]);
            }
        }
        let mut dims = [1usize; D];
        for d in 0..D {
            dims[d] = (((hi[d] - lo[d]) / h).floor() as usize + 1).max(1);
        }
        let mut list = CellList { origin: lo, inv_h: 1.0 / h, dims, cells: vec![Vec::new(); dims.iter().product()] };
        for (i, x) in xs.iter().enumerate() {
            let c = list.coord(x);
            let flat = list.flat(&c);
            list.cells[flat].push(i as u32);
        }
        list
    }

    fn coord(&self, x: &[f64; D]) -> [usize; D] {
        let mut c = [0usize; D];
        for d in 0..D {
            let k = ((x[d] - self.origin[d]) * self.inv_h).floor();
            c[d] = (k.max(0.0) as usize).min(self.dims[d] - 1);
        }
        c
    }

    fn flat(&self, c: &[usize; D]) -> usize {
        let mut idx = 0;
        for d in 0..D {
            idx = idx * self.dims[d] + c[d];
        }
        idx
    }

    fn visit_neighbors(&self, x: &[f64; D], mut f: impl FnMut(usize)) {
        let c = self.coord(x);
        let mut lo = [0usize; D];
        let mut hi = [0usize; D];
        for d in 0..D {
            lo[d] = c[d].saturating_sub(1);
            hi[d] = (c[d] + 1).min(self.dims[d] - 1);
        }
        let mut cur = lo;
        loop {
            for &p in &self.cells[self.flat(&cur)] {
                f(p as usize);
            }
            let mut d = D;
            loop {
                if d == 0 {
                    return;
                }
                d -= 1;
                if cur[d] < hi[d] {
                    cur[d] += 1;
                    for e in d + 1..D {
                        cur[e] = lo[e];
                    }
                    break;
                }
            }
        }
    }
}

fn mt_of(model: &ParticleModel) -> Option<(&Mollifier, f64)> {
    match &model.alignment {
        ParticleAlignment::Mollified(m) => {
            let s = m.support_radius();
            Some((m, s * s))
        }
        ParticleAlignment::Off => None,
    }
}

fn sq_dist<const D: usize>(a: &[f64; D], b: &[f64; D]) -> f64 {
    let mut d2 = 0.0;
    for d in 0..D {
        let dx = a[d] - b[d];
        d2 += dx * dx;
    }
    d2
}

fn accelerations_impl<const D: usize>(
    model: &ParticleModel,
    ens: &Ensemble<D>,
    use_cells: bool,
) -> Result<Vec<[f64; D]>> {
    model.validate_for(D)?;
    let n = ens.n();
    let (xs, vs, ms) = (&ens.x, &ens.v, &ens.m);
    let mt = mt_of(model);
    let cells = match (&mt, use_cells) {
        (Some((m, _)), true) => Some(CellList::build(xs, m.support_radius())),
        _ => None,
    };
    let skip_cs = model.phi.is_zero();
    let out: Vec<[f64; D]> = (0..n)
        .into_par_iter()
        .map(|i| {
            let xi = xs[i];
            let vi = vs[i];
            let mut cs = [0.0; D];
            if !skip_cs {
                for k in 0..n {
                    let p = ms[k] * model.phi.eval_sq(sq_dist(&xi, &xs[k]));
                    for d in 0..D {
                        cs[d] += p * (vs[k][d] - vi[d]);
                    }
                }
            }
            let gp = potential_grad(&model.potential, &xi);
            let mut a = [0.0; D];
            for d in 0..D {
                a[d] = -gp[d] + cs[d];
            }
            if let Some((m, sup2)) = &mt {
                let mut knum = [0.0; D];
                let mut kden = 0.0;
                let mut visit = |k: usize| {
                    let d2 = sq_dist(&xi, &xs[k]);
                    if d2 <= *sup2 {
                        let kv = ms[k] * m.eval_dist(d2.sqrt());
                        kden += kv;
                        for d in 0..D {
                            knum[d] += kv * vs[k][d];
                        }
                    }
                };
                match &cells {
                    Some(cl) => cl.visit_neighbors(&xi, visit),
                    None => (0..n).for_each(&mut visit),
                }
                // kden ≥ m_i K_r(0) > 0 from the self term.
                for d in 0..D {
                    a[d] += knum[d] / kden - vi[d];
                }
            }
            a
        })
        .collect();
    Ok(out)
}

/// Accelerations of every particle. The alignment sum uses cell lists; the
/// unbounded-support pair sum is a full pass.
pub fn accelerations<const D: usize>(model: &ParticleModel, ens: &Ensemble<D>) -> Result<Vec<[f64; D]>> {
    accelerations_impl(model, ens, true)
}

/// Dissipation diagnostics:
/// `D_cs = ½ Σ_ik m_i m_k Φ(x_i-x_k) |v_k - v_i|²` and
/// `D_local = Σ_i m_i |ũ(x_i) - v_i|²` (0 when alignment is off).
pub fn pair_dissipation<const D: usize>(model: &ParticleModel, ens: &Ensemble<D>) -> Result<(f64, f64)> {
    model.validate_for(D)?;
    let n = ens.n();
    let (xs, vs, ms) = (&ens.x, &ens.v, &ens.m);
    let mt = mt_of(model);
    let cells = mt.as_ref().map(|(m, _)| CellList::build(xs, m.support_radius()));
    let skip_cs = model.phi.is_zero();
    let rows: Vec<(f64, f64)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let xi = xs[i];
            let vi = vs[i];
            let mut cs = 0.0;
            if !skip_cs {
                for k in 0..n {
                    let d2 = sq_dist(&xi, &xs[k]);
                    let mut dv2 = 0.0;
                    for d in 0..D {
                        let dv = vs[k][d] - vi[d];
                        dv2 += dv * dv;
                    }
                    cs += ms[k] * model.phi.eval_sq(d2) * dv2;
                }
            }
            let local = match (&mt, &cells) {
                (Some((m, sup2)), Some(cl)) => {
                    let mut knum = [0.0; D];
                    let mut kden = 0.0;
                    cl.visit_neighbors(&xi, |k| {
                        let d2 = sq_dist(&xi, &xs[k]);
                        if d2 <= *sup2 {
                            let kv = ms[k] * m.eval_dist(d2.sqrt());
                            kden += kv;
                            for d in 0..D {
                                knum[d] += kv * vs[k][d];
                            }
                        }
                    });
                    let mut du2 = 0.0;
                    for d in 0..D {
                        let du = knum[d] / kden - vi[d];
                        du2 += du * du;
                    }
                    du2
                }
                _ => 0.0,
            };
            (ms[i] * cs, ms[i] * local)
        })
        .collect();
    let mut d_cs = 0.0;
    let mut d_local = 0.0;
    for (c, l) in rows {
        d_cs += c;
        d_local += l;
    }
    Ok((0.5 * d_cs, d_local))
}

/// One classical RK4 step of the coupled system.
pub fn rk4_step<const D: usize>(model: &ParticleModel, ens: &mut Ensemble<D>, dt: f64) -> Result<()> {
    let n = ens.n();
    let x0 = ens.x.clone();
    let v0 = ens.v.clone();

    let k1x = v0.clone();
    let k1v = accelerations(model, ens)?;

    let half = 0.5 * dt;
    let advance = |kx: &[[f64; D]], kv: &[[f64; D]], h: f64, ens: &mut Ensemble<D>| {
        for i in 0..n {
            for d in 0..D {
                ens.x[i][d] = x0[i][d] + h * kx[i][d];
                ens.v[i][d] = v0[i][d] + h * kv[i][d];
            }
        }
    };

    advance(&k1x, &k1v, half, ens);
    let k2x = ens.v.clone();
    let k2v = accelerations(model, ens)?;

    advance(&k2x, &k2v, half, ens);
    let k3x = ens.v.clone();
    let k3v = accelerations(model, ens)?;

    advance(&k3x, &k3v, dt, ens);
    let k4x = ens.v.clone();
    let k4v = accelerations(model, ens)?;

    let sixth = dt / 6.0;
    for i in 0..n {
        for d in 0..D {
            ens.x[i][d] = x0[i][d] + sixth * (k1x[i][d] + 2.0 * k2x[i][d] + 2.0 * k3x[i][d] + k4x[i][d]);
            ens.v[i][d] = v0[i][d] + sixth * (k1v[i][d] + 2.0 * k2v[i][d] + 2.0 * k3v[i][d] + k4v[i][d]);
        }
    }
    Ok(())
}

/// Per-step particle diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleDiag<const D: usize> {
    pub t: f64,
    pub energy: f64,
    pub momentum: [f64; D],
    pub vvar: f64,
    pub d_cs: f64,
    pub d_local: f64,
}

#[derive(Debug)]
pub struct ParticleRun<const D: usize> {
    pub snapshots: Vec<(f64, Ensemble<D>)>,
    pub diagnostics: Vec<ParticleDiag<D>>,
    pub steps: usize,
    pub failure: Option<Error>,
}

fn particle_diag<const D: usize>(model: &ParticleModel, ens: &Ensemble<D>, t: f64) -> Result<ParticleDiag<D>> {
    let (d_cs, d_local) = pair_dissipation(model, ens)?;
    Ok(ParticleDiag {
        t,
        energy: ens.energy(&model.potential),
        momentum: ens.momentum(),
        vvar: ens.velocity_variance(),
        d_cs,
        d_local,
    })
}

/// Integrate to `t_end` with fixed step `dt`, keeping a snapshot every
/// `snapshot_stride` steps plus the initial and final states. Aborts set
/// `failure` and keep the completed prefix.
pub fn run_particles<const D: usize>(
    model: &ParticleModel,
    ens: Ensemble<D>,
    dt: f64,
    t_end: f64,
    snapshot_stride: usize,
) -> ParticleRun<D> {
    let mut out = ParticleRun { snapshots: Vec::new(), diagnostics: Vec::new(), steps: 0, failure: None };
    if !(dt.is_finite() && dt > 0.0) {
        out.failure = Some(Error::invalid("dt", format!("{dt} is not finite and positive")));
        return out;
    }
    if !(t_end.is_finite() && t_end > 0.0) {
        out.failure = Some(Error::invalid("t_end", format!("{t_end} is not finite and positive")));
        return out;
    }
    if snapshot_stride == 0 {
        out.failure = Some(Error::invalid("snapshot_stride", "must be at least 1"));
        return out;
    }

    let mut ens = ens;
    match particle_diag(model, &ens, 0.0) {
        Ok(row) => out.diagnostics.push(row),
        Err(e) => {
            out.failure = Some(e);
            return out;
        }
    }
    out.snapshots.push((0.0, ens.clone()));

    let mut t = 0.0;
    let t_eps = 1e-12 * t_end;
    while t < t_end - t_eps {
        let step = dt.min(t_end - t);
        if let Err(e) = rk4_step(model, &mut ens, step) {
            out.failure = Some(e);
            break;
        }
        t += step;
        out.steps += 1;
        for (i, (x, v)) in ens.x.iter().zip(&ens.v).enumerate() {
            if x.iter().chain(v.iter()).any(|c| !c.is_finite()) {
                out.failure = Some(Error::NonFiniteState { index: i, t });
                break;
            }
        }
        if out.failure.is_some() {
            break;
        }
        // Diagnostics share the snapshot cadence: the pair sums behind them
        // cost as much as an acceleration evaluation.
        if out.steps % snapshot_stride == 0 && t < t_end - t_eps {
            match particle_diag(model, &ens, t) {
                Ok(row) => out.diagnostics.push(row),
                Err(e) => {
                    out.failure = Some(e);
                    break;
                }
            }
            out.snapshots.push((t, ens.clone()));
        }
    }
    if out.failure.is_none() {
        out.snapshots.push((t, ens.clone()));
        match particle_diag(model, &ens, t) {
            Ok(row) => out.diagnostics.push(row),
            Err(e) => out.failure = Some(e),
        }
    }
    out
}

/// Deposit stencil: B-spline order (stencil width 2, 3 or 4 cells). All
/// three reproduce constants and linears exactly, so deposited mass and
/// first moments match the particle sums to roundoff.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplineOrder {
    Linear,
    Quadratic,
    Cubic,
}

impl SplineOrder {
    pub fn by_name(name: &str) -> Option<SplineOrder> {
        match name {
            "linear" => Some(SplineOrder::Linear),
            "quadratic" => Some(SplineOrder::Quadratic),
            "cubic" => Some(SplineOrder::Cubic),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SplineOrder::Linear => "linear",
            SplineOrder::Quadratic => "quadratic",
            SplineOrder::Cubic => "cubic",
        }
    }

    /// Stencil start index and weights in continuous cell-center
    /// coordinates `t = (coord + l)/h - 1/2`; `None` if the stencil would
    /// clip the grid.
    fn weights(&self, t: f64, n: usize) -> Option<(usize, [f64; 4], usize)> {
        let (start, w, len) = match self {
            SplineOrder::Linear => {
                let i0 = t.floor();
                let u = t - i0;
                (i0 as isize, [1.0 - u, u, 0.0, 0.0], 2)
            }
            SplineOrder::Quadratic => {
                let ic = t.round();
                let d = t - ic;
                (
                    ic as isize - 1,
                    [0.5 * (0.5 - d) * (0.5 - d), 0.75 - d * d, 0.5 * (0.5 + d) * (0.5 + d), 0.0],
                    3,
                )
            }
            SplineOrder::Cubic => {
                let i0 = t.floor();
                let u = t - i0;
                let c = 1.0 - u;
                (
                    i0 as isize - 1,
                    [
                        c * c * c / 6.0,
                        (4.0 - 6.0 * u * u + 3.0 * u * u * u) / 6.0,
                        (1.0 + 3.0 * u + 3.0 * u * u - 3.0 * u * u * u) / 6.0,
                        u * u * u / 6.0,
                    ],
                    4,
                )
            }
        };
        if start < 0 || start + len as isize > n as isize {
            return None;
        }
        Some((start as usize, w, len))
    }
}

/// Deposit a 1-d ensemble onto the phase grid as a density (mass per unit
/// phase-space volume).
pub fn deposit(ens: &Ensemble<1>, grid: &PhaseGrid, order: SplineOrder) -> Result<PhaseDensity> {
    let mut f = PhaseDensity::zeros(grid.clone());
    let cell = grid.cell();
    for (p, ((x, v), &w)) in ens.x.iter().zip(&ens.v).zip(&ens.m).enumerate() {
        let tx = (x[0] + grid.x.l()) / grid.x.h() - 0.5;
        let tv = (v[0] + grid.v.l()) / grid.v.h() - 0.5;
        let outside = || Error::ParticleOutsideDomain { index: p, x: x[0], v: v[0] };
        let (ix, wx, lx) = order.weights(tx, grid.x.n()).ok_or_else(outside)?;
        let (iv, wv, lv) = order.weights(tv, grid.v.n()).ok_or_else(outside)?;
        for a in 0..lx {
            for b in 0..lv {
                f.values_mut()[[ix + a, iv + b]] += w * wx[a] * wv[b] / cell;
            }
        }
    }
    Ok(f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::Profile;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn flat_model(lambda: f64) -> ParticleModel {
        ParticleModel {
            phi: InfluenceKernel::flat(lambda).unwrap(),
            potential: Potential::Zero,
            alignment: ParticleAlignment::Off,
        }
    }

    fn random_ensemble(n: usize, seed: u64) -> Ensemble<1> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = (0..n).map(|_| [rng.gen_range(-1.0..1.0)]).collect();
        let v = (0..n).map(|_| [rng.gen_range(-1.0..1.0)]).collect();
        Ensemble::equal_weight(x, v, 2.0).unwrap()
    }

    #[test]
    fn flat_kernel_decay_matches_rk4_growth_factor() {
        // With Φ ≡ λ the deviations v_i - v̄ obey v̇ = -λM v exactly (v̄ the
        // mass-weighted mean), and RK4 on a linear system applies the
        // stability polynomial R(z) = 1 + z + z²/2 + z³/6 + z⁴/24 per step.
        // The numerical trajectory must match R(-λM dt)^n to roundoff
        // accumulation.
        let (lambda, mass, dt, steps) = (0.7, 2.0, 0.05, 40);
        let model = flat_model(lambda);
        let base = random_ensemble(8, 3);
        let mut ens = Ensemble::equal_weight(base.x.clone(), base.v.clone(), mass).unwrap();
        let v0 = ens.v.clone();
        let mean0 = ens.mean_velocity();

        for _ in 0..steps {
            rk4_step(&model, &mut ens, dt).unwrap();
        }

        let z = -lambda * mass * dt;
        let r = 1.0 + z + z * z / 2.0 + z * z * z / 6.0 + z * z * z * z / 24.0;
        let factor = r.powi(steps);
        let mean = ens.mean_velocity();
        assert!((mean[0] - mean0[0]).abs() <= 1e-13, "mean velocity is a linear invariant");
        for i in 0..ens.n() {
            let want = mean0[0] + factor * (v0[i][0] - mean0[0]);
            assert!(
                (ens.v[i][0] - want).abs() <= 1e-12,
                "particle {i}: {} vs {want}",
                ens.v[i][0]
            );
        }
    }

    #[test]
    fn zero_forces_transport_exactly() {
        // All four RK4 position stages see the same constant velocity, so
        // the combined increment is dt·v with two rounding operations; fifty
        // steps stay within a few ulp of the straight line.
        let model = flat_model(0.0);
        let mut ens = random_ensemble(6, 9);
        let x0 = ens.x.clone();
        let v0 = ens.v.clone();
        let (dt, steps) = (0.05, 50);
        for _ in 0..steps {
            rk4_step(&model, &mut ens, dt).unwrap();
        }
        let t = dt * steps as f64;
        assert_eq!(ens.v, v0, "velocities bitwise unchanged without forces");
        for i in 0..ens.n() {
            assert!(
                (ens.x[i][0] - (x0[i][0] + t * v0[i][0])).abs() <= 1e-13,
                "particle {i} strays from the free streamline"
            );
        }
    }

    #[test]
    fn momentum_is_conserved_without_alignment_or_potential() {
        // Pairwise antisymmetry (m_i m_k Φ symmetric) makes Σ m_i v̇_i = 0 at
        // every RK4 stage; the drift is pure roundoff.
        let model = ParticleModel {
            phi: InfluenceKernel::new(1.3, 1.0).unwrap(),
            potential: Potential::Zero,
            alignment: ParticleAlignment::Off,
        };
        let mut ens = random_ensemble(64, 11);
        let p0 = ens.momentum()[0];
        for _ in 0..50 {
            rk4_step(&model, &mut ens, 0.02).unwrap();
        }
        assert!(
            (ens.momentum()[0] - p0).abs() <= 1e-12,
            "momentum drift {}",
            ens.momentum()[0] - p0
        );
    }

    #[test]
    fn two_particle_alignment_oracle() {
        // Triangle kernel at unit radius: K(0.5)/K(0) = 1/2 exactly, so with
        // equal masses ũ₁ - v₁ = (K(d)/(K(0)+K(d)))(v₂-v₁) = (v₂-v₁)/3. With
        // v₂-v₁ = 4.5 the alignment acceleration is exactly ±1.5.
        let model = ParticleModel {
            phi: InfluenceKernel::flat(0.0).unwrap(),
            potential: Potential::Zero,
            alignment: ParticleAlignment::Mollified(Mollifier::new(Profile::Triangle, 1.0, 1).unwrap()),
        };
        let ens = Ensemble::equal_weight(vec![[0.0], [0.5]], vec![[0.0], [4.5]], 1.0).unwrap();
        let a = accelerations(&model, &ens).unwrap();
        assert_eq!(a[0][0], 1.5, "exact dyadic arithmetic");
        assert_eq!(a[1][0], -1.5);
    }

    #[test]
    fn coincident_unit_masses_combine_both_terms() {
        // Two unit masses at the same point, v = (0, 1), Φ ≡ 1: the pair
        // term contributes 1·(1-0) and the normalized term
        // (K·1)/(2K) - 0 = 1/2, so a₁ = 3/2 exactly.
        let model = ParticleModel {
            phi: InfluenceKernel::flat(1.0).unwrap(),
            potential: Potential::Zero,
            alignment: ParticleAlignment::Mollified(Mollifier::new(Profile::Cosine, 0.5, 1).unwrap()),
        };
        let ens = Ensemble::new(vec![[0.0], [0.0]], vec![[0.0], [1.0]], vec![1.0, 1.0]).unwrap();
        let a = accelerations(&model, &ens).unwrap();
        assert_eq!(a[0][0], 1.5);
        assert_eq!(a[1][0], -1.5);
    }

    #[test]
    fn cell_list_sums_match_direct_sums() {
        // The cell list must be a pure partner-enumeration change: same
        // partners within the support, only the accumulation order differs.
        let model = ParticleModel {
            phi: InfluenceKernel::new(0.8, 1.0).unwrap(),
            potential: Potential::Harmonic { kappa: 0.4 },
            alignment: ParticleAlignment::Mollified(Mollifier::new(Profile::Bump2, 0.3, 1).unwrap()),
        };
        let ens = random_ensemble(512, 17);
        let fast = accelerations_impl(&model, &ens, true).unwrap();
        let slow = accelerations_impl(&model, &ens, false).unwrap();
        for i in 0..ens.n() {
            assert!(
                (fast[i][0] - slow[i][0]).abs() <= 1e-13,
                "particle {i}: {} vs {}",
                fast[i][0], slow[i][0]
            );
        }

        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let x2: Vec<[f64; 2]> = (0..256).map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).collect();
        let v2: Vec<[f64; 2]> = (0..256).map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).collect();
        let ens2 = Ensemble::equal_weight(x2, v2, 1.0).unwrap();
        let model2 = ParticleModel {
            phi: InfluenceKernel::flat(0.2).unwrap(),
            potential: Potential::Zero,
            alignment: ParticleAlignment::Mollified(Mollifier::new(Profile::Triangle, 0.4, 2).unwrap()),
        };
        let fast2 = accelerations_impl(&model2, &ens2, true).unwrap();
        let slow2 = accelerations_impl(&model2, &ens2, false).unwrap();
        for i in 0..ens2.n() {
            for d in 0..2 {
                assert!(
                    (fast2[i][d] - slow2[i][d]).abs() <= 1e-13,
                    "particle {i} component {d}"
                );
            }
        }
    }

    #[test]
    fn velocities_stay_inside_the_initial_hull() {
        // Both forces are mass-weighted convex combinations of (v_k - v_i),
        // so without a potential the velocity extremes contract; the
        // per-step tolerance absorbs RK4 stage roundoff only.
        let model = ParticleModel {
            phi: InfluenceKernel::new(1.0, 1.0).unwrap(),
            potential: Potential::Zero,
            alignment: ParticleAlignment::Mollified(Mollifier::new(Profile::Triangle, 0.6, 1).unwrap()),
        };
        let mut ens = random_ensemble(48, 29);
        let mut vmax = ens.v.iter().map(|v| v[0]).fold(f64::NEG_INFINITY, f64::max);
        let mut vmin = ens.v.iter().map(|v| v[0]).fold(f64::INFINITY, f64::min);
        for step in 0..60 {
            rk4_step(&model, &mut ens, 0.02).unwrap();
            let new_max = ens.v.iter().map(|v| v[0]).fold(f64::NEG_INFINITY, f64::max);
            let new_min = ens.v.iter().map(|v| v[0]).fold(f64::INFINITY, f64::min);
            assert!(new_max <= vmax + 1e-12, "step {step}: max grew {vmax} -> {new_max}");
            assert!(new_min >= vmin - 1e-12, "step {step}: min fell {vmin} -> {new_min}");
            vmax = new_max;
            vmin = new_min;
        }
    }

    #[test]
    fn harmonic_oscillator_error_shrinks_at_fourth_order() {
        let model = ParticleModel {
            phi: InfluenceKernel::flat(0.0).unwrap(),
            potential: Potential::Harmonic { kappa: 1.0 },
            alignment: ParticleAlignment::Off,
        };
        // Exact orbit: x(t) = cos t, v(t) = -sin t.
        let err = |dt: f64| -> f64 {
            let mut ens = Ensemble::<1>::equal_weight(vec![[1.0]], vec![[0.0]], 1.0).unwrap();
            let steps = (2.0 / dt).round() as usize;
            for _ in 0..steps {
                rk4_step(&model, &mut ens, dt).unwrap();
            }
            let t = steps as f64 * dt;
            (ens.x[0][0] - t.cos()).abs() + (ens.v[0][0] + t.sin()).abs()
        };
        let ratio = err(0.02) / err(0.01);
        assert!(
            (12.0..=20.0).contains(&ratio),
            "RK4 halving-ratio should be ≈ 16, got {ratio}"
        );
    }

    #[test]
    fn deposit_reproduces_mass_and_first_moments() {
        // Partition of unity gives exact mass; linear reproduction gives
        // exact first moments — for every stencil order. Unequal masses
        // exercise the per-particle weighting.
        let grid = PhaseGrid::new(1.5, 48, 1.5, 40).unwrap();
        let base = random_ensemble(500, 21);
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let m: Vec<f64> = (0..base.n()).map(|_| rng.gen_range(0.5..2.0) / 500.0).collect();
        let ens = Ensemble::new(base.x.clone(), base.v.clone(), m).unwrap();
        let want_x: f64 = ens.x.iter().zip(ens.masses()).map(|(p, &w)| w * p[0]).sum();
        let want_v = ens.momentum()[0];
        for order in [SplineOrder::Linear, SplineOrder::Quadratic, SplineOrder::Cubic] {
            let f = deposit(&ens, &grid, order).unwrap();
            assert!(
                (f.mass() - ens.total_mass()).abs() <= 1e-12 * ens.total_mass(),
                "{}: mass {} vs {}",
                order.name(), f.mass(), ens.total_mass()
            );
            let hx = grid.x.h();
            let got_x: f64 = f
                .rho()
                .iter()
                .enumerate()
                .map(|(i, r)| grid.x.center(i) * r)
                .sum::<f64>()
                * hx;
            let got_v = f.total_momentum();
            assert!((got_x - want_x).abs() <= 1e-12, "{}: x moment", order.name());
            assert!((got_v - want_v).abs() <= 1e-12, "{}: v moment", order.name());
        }
    }

    #[test]
    fn deposit_rejects_particles_whose_stencil_clips() {
        let grid = PhaseGrid::new(1.0, 16, 1.0, 16).unwrap();
        // x = 0.99 sits in the last cell; a cubic stencil needs two cells
        // beyond it.
        let ens = Ensemble::<1>::equal_weight(vec![[0.99]], vec![[0.0]], 1.0).unwrap();
        assert!(deposit(&ens, &grid, SplineOrder::Linear).is_err());
        match deposit(&ens, &grid, SplineOrder::Cubic) {
            Err(Error::ParticleOutsideDomain { index: 0, .. }) => {}
            other => panic!("expected ParticleOutsideDomain, got {other:?}"),
        }
    }

    #[test]
    fn pair_dissipation_matches_direct_sums() {
        let model = ParticleModel {
            phi: InfluenceKernel::new(0.9, 1.0).unwrap(),
            potential: Potential::Zero,
            alignment: ParticleAlignment::Mollified(Mollifier::new(Profile::Cosine, 0.8, 1).unwrap()),
        };
        let ens = random_ensemble(40, 5);
        let (d_cs, d_local) = pair_dissipation(&model, &ens).unwrap();

        let ms = ens.masses();
        let mut want_cs = 0.0;
        for i in 0..ens.n() {
            for k in 0..ens.n() {
                let dx = ens.x[i][0] - ens.x[k][0];
                let dv = ens.v[k][0] - ens.v[i][0];
                want_cs += ms[i] * ms[k] * model.phi.eval(dx) * dv * dv;
            }
        }
        want_cs *= 0.5;
        assert!((d_cs - want_cs).abs() <= 1e-12 * want_cs.max(1.0));

        let a = accelerations(&model, &ens).unwrap();
        // With Φ contributing and potential zero: a_i = cs_i + (ũ_i - v_i);
        // recompute ũ - v by subtracting the Φ part.
        let mut want_local = 0.0;
        for i in 0..ens.n() {
            let mut cs = 0.0;
            for k in 0..ens.n() {
                let dx = ens.x[i][0] - ens.x[k][0];
                cs += ms[k] * model.phi.eval(dx) * (ens.v[k][0] - ens.v[i][0]);
            }
            let du = a[i][0] - cs;
            want_local += ms[i] * du * du;
        }
        assert!(
            (d_local - want_local).abs() <= 1e-10 * want_local.max(1.0),
            "{d_local} vs {want_local}"
        );
        assert!(d_local >= 0.0 && d_cs >= 0.0);
    }

    #[test]
    fn results_are_bitwise_invariant_to_thread_count() {
        let model = ParticleModel {
            phi: InfluenceKernel::new(1.0, 1.0).unwrap(),
            potential: Potential::Harmonic { kappa: 0.3 },
            alignment: ParticleAlignment::Mollified(Mollifier::new(Profile::Triangle, 0.5, 1).unwrap()),
        };
        let ens = random_ensemble(96, 13);
        let run_with = |threads: usize| -> Vec<[f64; 1]> {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            pool.install(|| accelerations(&model, &ens).unwrap())
        };
        let a1 = run_with(1);
        let a4 = run_with(4);
        assert_eq!(a1, a4, "per-particle sums must not depend on the pool size");
    }

    #[test]
    fn run_particles_snapshots_and_failure_paths() {
        let model = flat_model(0.5);
        let ens = random_ensemble(16, 2);
        let out = run_particles(&model, ens.clone(), 0.05, 0.4, 2);
        assert!(out.failure.is_none(), "{:?}", out.failure);
        assert_eq!(out.steps, 8);
        let times: Vec<f64> = out.snapshots.iter().map(|s| s.0).collect();
        assert_eq!(times.len(), 5, "t = 0, every second step, final");
        assert_eq!(times[0], 0.0);
        assert!((times.last().unwrap() - 0.4).abs() <= 1e-12);
        assert_eq!(out.diagnostics.len(), times.len(), "one diagnostics row per snapshot");
        for (row, &t) in out.diagnostics.iter().zip(&times) {
            assert_eq!(row.t, t, "diagnostics share the snapshot times");
        }

        let bad = run_particles(&model, ens, -0.1, 0.4, 2);
        assert!(bad.failure.is_some());
        assert!(bad.snapshots.is_empty());
    }

    #[test]
    fn ensemble_validation() {
        assert!(Ensemble::<1>::new(vec![], vec![], vec![]).is_err());
        assert!(Ensemble::new(vec![[0.0]], vec![[0.0], [1.0]], vec![1.0]).is_err());
        assert!(Ensemble::new(vec![[0.0]], vec![[f64::NAN]], vec![1.0]).is_err());
        assert!(Ensemble::new(vec![[0.0]], vec![[0.0]], vec![0.0]).is_err(), "masses must be positive");
        assert!(Ensemble::equal_weight(vec![[0.0]], vec![[0.0]], 0.0).is_err());
        // Mollifier dimension must match the ensemble dimension.
        let model = ParticleModel {
            phi: InfluenceKernel::flat(0.0).unwrap(),
            potential: Potential::Zero,
            alignment: ParticleAlignment::Mollified(Mollifier::new(Profile::Triangle, 0.5, 2).unwrap()),
        };
        let ens = random_ensemble(4, 1);
        assert!(accelerations(&model, &ens).is_err());
    }
}
