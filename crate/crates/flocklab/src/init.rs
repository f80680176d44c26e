//! Initial data: named phase-space profiles, their grid sampling, and
//! seeded rejection sampling of particle ensembles from the same profile.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::grid::PhaseGrid;
use crate::phase::PhaseDensity;
use crate::{Error, Result};

/// Compactly supported C² bump `(1 - s²)₊³`; `∫ = 32/35` over its support.
#[inline]
pub fn bump(s: f64) -> f64 {
    let t = 1.0 - s * s;
    if t > 0.0 { t * t * t } else { 0.0 }
}

/// Named initial phase-space profiles.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialData {
    /// Two separated bumps, the default flocking scenario: clusters at
    /// `(x₁, v₁)` and `(x₂, v₂)` with product-bump shape.
    TwoBumps { x1: f64, v1: f64, a1: f64, x2: f64, v2: f64, a2: f64, sx: f64, sv: f64 },
    /// Isotropic Gaussian product centered at `(x₀, v₀)`.
    Gaussian { x0: f64, v0: f64, sx: f64, sv: f64, amp: f64 },
    /// Counter-streaming states: velocity band at `v_left` for `x < 0`,
    /// `v_right` for `x ≥ 0`, each of half-width `hw`.
    Riemann { v_left: f64, v_right: f64, hw: f64, amp: f64 },
}

impl InitialData {
    pub fn validate(&self) -> Result<()> {
        let pos = |name: &'static str, v: f64| -> Result<()> {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::invalid(name, format!("{v} is not finite and positive")))
            }
        };
        match *self {
            InitialData::TwoBumps { a1, a2, sx, sv, x1, v1, x2, v2 } => {
                pos("sx", sx)?;
                pos("sv", sv)?;
                for (n, a) in [("a1", a1), ("a2", a2)] {
                    if !(a.is_finite() && a >= 0.0) {
                        return Err(Error::invalid(n, format!("{a} is not finite and nonnegative")));
                    }
                }
                if a1 + a2 <= 0.0 {
                    return Err(Error::invalid("a1+a2", "at least one bump must carry mass"));
                }
                for (n, c) in [("x1", x1), ("v1", v1), ("x2", x2), ("v2", v2)] {
                    if !c.is_finite() {
                        return Err(Error::invalid(n, "center is not finite"));
                    }
                }
                Ok(())
            }
            InitialData::Gaussian { sx, sv, amp, x0, v0 } => {
                pos("sx", sx)?;
                pos("sv", sv)?;
                pos("amp", amp)?;
                if !(x0.is_finite() && v0.is_finite()) {
                    return Err(Error::invalid("center", "not finite"));
                }
                Ok(())
            }
            InitialData::Riemann { hw, amp, v_left, v_right } => {
                pos("hw", hw)?;
                pos("amp", amp)?;
                if !(v_left.is_finite() && v_right.is_finite()) {
                    return Err(Error::invalid("band center", "not finite"));
                }
                Ok(())
            }
        }
    }

    pub fn eval(&self, x: f64, v: f64) -> f64 {
        match *self {
            InitialData::TwoBumps { x1, v1, a1, x2, v2, a2, sx, sv } => {
                a1 * bump((x - x1) / sx) * bump((v - v1) / sv)
                    + a2 * bump((x - x2) / sx) * bump((v - v2) / sv)
            }
            InitialData::Gaussian { x0, v0, sx, sv, amp } => {
                let dx = (x - x0) / sx;
                let dv = (v - v0) / sv;
                amp * (-0.5 * (dx * dx + dv * dv)).exp()
            }
            InitialData::Riemann { v_left, v_right, hw, amp } => {
                let band = if x < 0.0 { v_left } else { v_right };
                if (v - band).abs() <= hw { amp } else { 0.0 }
            }
        }
    }

    /// Analytic upper bound for `sup f₀`, the rejection-sampling envelope.
    pub fn sup_bound(&self) -> f64 {
        match *self {
            InitialData::TwoBumps { a1, a2, .. } => a1 + a2,
            InitialData::Gaussian { amp, .. } => amp,
            InitialData::Riemann { amp, .. } => amp,
        }
    }

    /// Sample the profile at cell centers.
    pub fn density(&self, grid: PhaseGrid) -> PhaseDensity {
        PhaseDensity::from_fn(grid, |x, v| self.eval(x, v))
    }

    /// Draw `n` phase-space points distributed as `f₀ / ∫f₀` restricted to
    /// `[-lx, lx] × [-lv, lv]`, by rejection against the flat envelope.
    /// Deterministic in `seed`.
    pub fn sample(&self, n: usize, lx: f64, lv: f64, seed: u64) -> Result<Vec<(f64, f64)>> {
        self.validate()?;
        let sup = self.sup_bound();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(n);
        let max_tries = 10_000_000usize.saturating_add(n.saturating_mul(10_000));
        let mut tries = 0usize;
        while out.len() < n {
            tries += 1;
            if tries > max_tries {
                return Err(Error::invalid(
                    "initial data",
                    format!("rejection sampling accepted only {} of {n} points in {max_tries} proposals", out.len()),
                ));
            }
            let x = rng.gen_range(-lx..lx);
            let v = rng.gen_range(-lv..lv);
            let u: f64 = rng.gen_range(0.0..1.0);
            if u * sup < self.eval(x, v) {
                out.push((x, v));
            }
        }
        Ok(out)
    }
}

/// One particle cluster: uniform ball in position around `x`, velocities
/// `v + vspread · (uniform ball)`.
#[derive(Debug, Clone)]
pub struct ClusterSpec<const D: usize> {
    pub x: [f64; D],
    pub v: [f64; D],
    pub radius: f64,
    pub vspread: f64,
    pub n: usize,
}

/// Sample all clusters into flat position/velocity lists, deterministically
/// in `seed`.
pub fn sample_clusters<const D: usize>(
    specs: &[ClusterSpec<D>],
    seed: u64,
) -> Result<(Vec<[f64; D]>, Vec<[f64; D]>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total: usize = specs.iter().map(|c| c.n).sum();
    if total == 0 {
        return Err(Error::invalid("clusters", "no particles requested"));
    }
    let mut xs = Vec::with_capacity(total);
    let mut vs = Vec::with_capacity(total);
    for (ci, c) in specs.iter().enumerate() {
        if !(c.radius.is_finite() && c.radius >= 0.0 && c.vspread.is_finite() && c.vspread >= 0.0) {
            return Err(Error::invalid("clusters", format!("cluster {ci}: radius and vspread must be finite and nonnegative")));
        }
        let mut ball = |r: f64| -> [f64; D] {
            // Rejection from the bounding cube; at most ~1.9x oversampling
            // for D ≤ 2.
            loop {
                let mut p = [0.0; D];
                let mut norm2 = 0.0;
                for q in &mut p {
                    *q = rng.gen_range(-1.0..1.0);
                    norm2 += *q * *q;
                }
                if norm2 <= 1.0 {
                    for q in &mut p {
                        *q *= r;
                    }
                    return p;
                }
            }
        };
        for _ in 0..c.n {
            let dx = ball(c.radius);
            let dv = ball(c.vspread);
            let mut x = c.x;
            let mut v = c.v;
            for d in 0..D {
                x[d] += dx[d];
                v[d] += dv[d];
            }
            xs.push(x);
            vs.push(v);
        }
    }
    Ok((xs, vs))
}
