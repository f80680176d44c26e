//! Phase-space densities on the midpoint grid and their velocity moments.
//!
//! Everything downstream — forces, diagnostics, inequality checks — reduces
//! to a handful of moments of `f(x, v)`: the spatial density `ρ = ∫ f dv`,
//! the current `j = ∫ v f dv` and the kinetic moment `S = ∫ v² f dv`. The
//! pairwise alignment dissipation factorizes through those same moments,
//! which turns an `O(n⁴)` double phase-space integral into three
//! convolutions; [`cs_dissipation`] implements the factorized form and the
//! tests pin it against the direct quadruple sum.

use ndarray::{Array1, Array2};

use crate::grid::PhaseGrid;
use crate::kernels::{convolve, InfluenceKernel};
use crate::{Error, Result};

/// A nonnegative density sampled at cell centers: `f[[i, j]] = f(x_i, v_j)`.
#[derive(Debug, Clone)]
pub struct PhaseDensity {
    grid: PhaseGrid,
    f: Array2<f64>,
}

impl PhaseDensity {
    pub fn new(grid: PhaseGrid, f: Array2<f64>) -> Result<Self> {
        if f.shape() != [grid.x.n(), grid.v.n()] {
            return Err(Error::DomainMismatch { got: f.len(), want: grid.x.n() * grid.v.n() });
        }
        Ok(PhaseDensity { grid, f })
    }

    pub fn zeros(grid: PhaseGrid) -> Self {
        let f = Array2::zeros((grid.x.n(), grid.v.n()));
        PhaseDensity { grid, f }
    }

    /// Sample a closure at the cell centers.
    pub fn from_fn(grid: PhaseGrid, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut arr = Array2::zeros((grid.x.n(), grid.v.n()));
        for i in 0..grid.x.n() {
            let x = grid.x.center(i);
            for j in 0..grid.v.n() {
                arr[[i, j]] = f(x, grid.v.center(j));
            }
        }
        PhaseDensity { grid, f: arr }
    }

    pub fn grid(&self) -> &PhaseGrid {
        &self.grid
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.f
    }

    pub fn values_mut(&mut self) -> &mut Array2<f64> {
        &mut self.f
    }

    /// Phase-space cell volume `Δx Δv`.
    pub fn cell(&self) -> f64 {
        self.grid.cell()
    }

    /// `∫∫ f dv dx`.
    pub fn mass(&self) -> f64 {
        self.f.sum() * self.cell()
    }

    /// Weighted velocity moment `∫ g(v) f(·, v) dv` per spatial cell.
    pub fn velocity_moment(&self, g: impl Fn(f64) -> f64) -> Array1<f64> {
        let hv = self.grid.v.h();
        let weights: Vec<f64> = (0..self.grid.v.n()).map(|j| g(self.grid.v.center(j))).collect();
        let mut out = Array1::zeros(self.grid.x.n());
        for (i, row) in self.f.rows().into_iter().enumerate() {
            let mut acc = 0.0;
            for (j, &fij) in row.iter().enumerate() {
                acc += weights[j] * fij;
            }
            out[i] = acc * hv;
        }
        out
    }

    /// Spatial density `ρ(x) = ∫ f dv`.
    pub fn rho(&self) -> Array1<f64> {
        self.velocity_moment(|_| 1.0)
    }

    /// Current `j(x) = ∫ v f dv`.
    pub fn current(&self) -> Array1<f64> {
        self.velocity_moment(|v| v)
    }

    /// Kinetic moment `S(x) = ∫ v² f dv`.
    pub fn second_moment(&self) -> Array1<f64> {
        self.velocity_moment(|v| v * v)
    }

    /// `∫∫ v f dv dx`.
    pub fn total_momentum(&self) -> f64 {
        self.current().sum() * self.grid.x.h()
    }

    /// Bulk velocity `u = j/ρ`, extended by `u = 0` on vacuum cells. Always
    /// finite: `|j| ≤ ρ · max|v|` cell by cell, so `|u| ≤ max|v|` wherever
    /// `ρ > 0`.
    pub fn bulk_velocity(&self) -> Array1<f64> {
        let rho = self.rho();
        let j = self.current();
        let mut u = Array1::zeros(rho.len());
        for i in 0..rho.len() {
            if rho[i] > 0.0 {
                u[i] = j[i] / rho[i];
            }
        }
        u
    }

    /// Kinetic energy `∫∫ (v²/2) f dv dx`.
    pub fn kinetic_energy(&self) -> f64 {
        0.5 * self.second_moment().sum() * self.grid.x.h()
    }

    /// Total energy `∫∫ (v²/2 + Ψ(x)) f dv dx` for a confinement potential.
    pub fn energy(&self, psi: impl Fn(f64) -> f64) -> f64 {
        let rho = self.rho();
        let mut pot = 0.0;
        for i in 0..rho.len() {
            pot += psi(self.grid.x.center(i)) * rho[i];
        }
        self.kinetic_energy() + pot * self.grid.x.h()
    }

    /// `(∫∫ |f|^p)^{1/p}`; `p = ∞` gives the max norm.
    pub fn lp_norm(&self, p: f64) -> f64 {
        if p.is_infinite() {
            return self.linf();
        }
        assert!(p >= 1.0, "L^p norms need p ≥ 1, got {p}");
        let mut acc = 0.0;
        for &v in &self.f {
            acc += v.abs().powf(p);
        }
        (acc * self.cell()).powf(1.0 / p)
    }

    pub fn linf(&self) -> f64 {
        self.f.iter().fold(0.0f64, |a, &b| a.max(b.abs()))
    }

    pub fn min(&self) -> f64 {
        self.f.iter().fold(f64::INFINITY, |a, &b| a.min(b))
    }

    /// `‖f - g‖_q` on a shared grid.
    pub fn lq_distance(&self, other: &PhaseDensity, q: f64) -> Result<f64> {
        if self.f.shape() != other.f.shape() {
            return Err(Error::DomainMismatch { got: other.f.len(), want: self.f.len() });
        }
        if q.is_infinite() {
            let mut m = 0.0f64;
            for (&a, &b) in self.f.iter().zip(&other.f) {
                m = m.max((a - b).abs());
            }
            return Ok(m);
        }
        assert!(q >= 1.0, "L^q distances need q ≥ 1, got {q}");
        let mut acc = 0.0;
        for (&a, &b) in self.f.iter().zip(&other.f) {
            acc += (a - b).abs().powf(q);
        }
        Ok((acc * self.cell()).powf(1.0 / q))
    }

    /// Local dissipation `∫∫ f(x, v) |w(x) - v|² dv dx` against a velocity
    /// field sampled per spatial cell.
    pub fn dissipation_against(&self, w: &Array1<f64>) -> Result<f64> {
        if w.len() != self.grid.x.n() {
            return Err(Error::DomainMismatch { got: w.len(), want: self.grid.x.n() });
        }
        // |w - v|² = w² - 2wv + v² pairs with the three moments.
        let rho = self.rho();
        let j = self.current();
        let s = self.second_moment();
        let mut acc = 0.0;
        for i in 0..rho.len() {
            acc += w[i] * w[i] * rho[i] - 2.0 * w[i] * j[i] + s[i];
        }
        Ok(acc * self.grid.x.h())
    }
}

/// Pairwise alignment dissipation
/// `½ ∬∬ Φ(x-y) f(x,v) f(y,w) |w-v|² dw dy dv dx`,
/// computed by factorizing `|w-v|² = v² + w² - 2vw` through the moments:
/// `½ ∫ [ρ (Φ⋆S) + S (Φ⋆ρ) - 2 j (Φ⋆j)] dx`.
///
/// The factorization is an algebraic identity of the midpoint sums, so this
/// equals the direct quadruple sum to roundoff.
pub fn cs_dissipation(f: &PhaseDensity, phi: &InfluenceKernel) -> Result<f64> {
    let axis = &f.grid().x;
    let rho = f.rho();
    let j = f.current();
    let s = f.second_moment();
    let phi_rho = convolve(phi, axis, &rho)?;
    let phi_j = convolve(phi, axis, &j)?;
    let phi_s = convolve(phi, axis, &s)?;
    let mut acc = 0.0;
    for i in 0..axis.n() {
        acc += rho[i] * phi_s[i] + s[i] * phi_rho[i] - 2.0 * j[i] * phi_j[i];
    }
    Ok(0.5 * acc * axis.h())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::PhaseGrid;
    use proptest::prelude::*;

    fn indicator_density(n: usize) -> PhaseDensity {
        // Unit indicator of [-1,1]² inside [-2,2]²; with n a multiple of 4
        // the indicator's edges land on cell edges and the discrete mass is
        // exactly 4.
        assert!(n % 4 == 0);
        let grid = PhaseGrid::new(2.0, n, 2.0, n).unwrap();
        PhaseDensity::from_fn(grid, |x, v| if x.abs() < 1.0 && v.abs() < 1.0 { 1.0 } else { 0.0 })
    }

    fn random_density(nx: usize, nv: usize, seed: u64) -> PhaseDensity {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let grid = PhaseGrid::new(1.5, nx, 2.0, nv).unwrap();
        let mut f = PhaseDensity::zeros(grid);
        for v in f.values_mut() {
            *v = rng.gen_range(0.0..1.0);
        }
        f
    }

    #[test]
    fn moments_of_indicator_match_closed_forms() {
        let f = indicator_density(64); // h = 0.0625
        let h2 = 0.0625f64 * 0.0625;
        assert!((f.mass() - 4.0).abs() <= 1e-13, "mass {}", f.mass());
        assert!(f.total_momentum().abs() <= 1e-13, "odd moment of even density");

        // E = ∫ (v²/2 + x²/2) 1_{[-1,1]²} = 2/3 + 2/3 = 4/3; the midpoint
        // rule carries an O(h²) error on the quadratic weights.
        let e = f.energy(|x| 0.5 * x * x);
        assert!((e - 4.0 / 3.0).abs() <= h2, "E = {e}");
        assert!((f.kinetic_energy() - 2.0 / 3.0).abs() <= h2);

        // ‖f‖_p = mass^(1/p) for an indicator.
        for &p in &[1.0, 2.0, 5.0] {
            assert!((f.lp_norm(p) - 4.0f64.powf(1.0 / p)).abs() <= 1e-12, "p = {p}");
        }
        assert_eq!(f.linf(), 1.0);
        assert_eq!(f.min(), 0.0);
    }

    #[test]
    fn bulk_velocity_is_total_and_bounded_by_vmax() {
        // Vacuum on the right half; u must be 0 there and ≤ max|v| elsewhere.
        let grid = PhaseGrid::new(1.0, 32, 3.0, 48).unwrap();
        let f = PhaseDensity::from_fn(grid, |x, v| {
            if x < 0.0 { (1.0 - v * v / 9.0).max(0.0) * (0.5 - (x + 0.5).abs()).max(0.0) } else { 0.0 }
        });
        let u = f.bulk_velocity();
        let rho = f.rho();
        let vmax = 3.0;
        for i in 0..u.len() {
            assert!(u[i].is_finite());
            if rho[i] == 0.0 {
                assert_eq!(u[i], 0.0, "vacuum convention at cell {i}");
            } else {
                assert!(u[i].abs() <= vmax, "cell {i}: |u| = {} > {vmax}", u[i].abs());
            }
        }
    }

    #[test]
    fn dissipation_against_bulk_equals_moment_identity() {
        // ∫ f |u-v|² = ∫ (S - j²/ρ) dx when u = j/ρ; also ≥ 0 by
        // Cauchy-Schwarz (j² ≤ ρ S holds for the discrete sums too).
        let f = random_density(24, 32, 7);
        let u = f.bulk_velocity();
        let d = f.dissipation_against(&u).unwrap();
        let (rho, j, s) = (f.rho(), f.current(), f.second_moment());
        let mut want = 0.0;
        for i in 0..rho.len() {
            if rho[i] > 0.0 {
                want += s[i] - j[i] * j[i] / rho[i];
            }
        }
        want *= f.grid().x.h();
        assert!((d - want).abs() <= 1e-12 * want.max(1.0), "{d} vs {want}");
        assert!(d >= 0.0, "Cauchy-Schwarz: D_local = {d}");
    }

    #[test]
    fn cs_dissipation_flat_kernel_closed_form() {
        // For Φ ≡ λ the factorized dissipation collapses to the algebraic
        // identity λ (M · S_tot - P²), exactly at the discrete level.
        let f = indicator_density(32);
        let phi = InfluenceKernel::flat(1.7).unwrap();
        let d = cs_dissipation(&f, &phi).unwrap();
        let hx = f.grid().x.h();
        let m = f.mass();
        let s_tot = f.second_moment().sum() * hx;
        let p = f.total_momentum();
        let want = 1.7 * (m * s_tot - p * p);
        assert!((d - want).abs() <= 1e-12 * want, "{d} vs {want}");
    }

    #[test]
    fn cs_dissipation_matches_direct_quadruple_sum() {
        let f = random_density(8, 8, 42);
        let phi = InfluenceKernel::new(0.8, 1.0).unwrap();
        let fast = cs_dissipation(&f, &phi).unwrap();

        let (gx, gv) = (&f.grid().x, &f.grid().v);
        let (hx, hv) = (gx.h(), gv.h());
        let mut direct = 0.0;
        for i in 0..gx.n() {
            for j in 0..gv.n() {
                for k in 0..gx.n() {
                    for l in 0..gv.n() {
                        let dv = gv.center(l) - gv.center(j);
                        direct += phi.eval(gx.center(i) - gx.center(k))
                            * f.values()[[i, j]]
                            * f.values()[[k, l]]
                            * dv
                            * dv;
                    }
                }
            }
        }
        direct *= 0.5 * hx * hx * hv * hv;
        assert!(
            (fast - direct).abs() <= 1e-10 * direct.max(1.0),
            "factorized {fast} vs direct {direct}"
        );
    }

    #[test]
    fn shape_mismatches_are_rejected() {
        let grid = PhaseGrid::new(1.0, 8, 1.0, 8).unwrap();
        let bad = Array2::zeros((8, 9));
        assert!(PhaseDensity::new(grid, bad).is_err());

        let f = random_density(8, 8, 1);
        let g = random_density(8, 8, 2);
        assert!(f.lq_distance(&g, 1.0).is_ok());
        assert!(f.dissipation_against(&Array1::zeros(7)).is_err());
    }

    #[test]
    fn lq_distance_of_scaled_copies() {
        let f = indicator_density(16);
        let mut g = f.clone();
        g.values_mut().mapv_inplace(|v| 2.0 * v);
        // ‖f - 2f‖_q = ‖f‖_q = 4^(1/q).
        for &q in &[1.0, 2.0] {
            let d = f.lq_distance(&g, q).unwrap();
            assert!((d - 4.0f64.powf(1.0 / q)).abs() <= 1e-12, "q = {q}: {d}");
        }
        assert_eq!(f.lq_distance(&g, f64::INFINITY).unwrap(), 1.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn prop_bulk_velocity_finite_and_bounded(seed in 0u64..500) {
            let f = random_density(12, 16, seed);
            let u = f.bulk_velocity();
            let vmax = f.grid().v.l();
            for &ui in &u {
                prop_assert!(ui.is_finite() && ui.abs() <= vmax);
            }
        }

        #[test]
        fn prop_local_dissipation_minimized_by_bulk(seed in 0u64..500, shift in -0.5f64..0.5) {
            // u = j/ρ minimizes w ↦ ∫f|w-v|² cellwise; any perturbation
            // cannot decrease it.
            let f = random_density(12, 16, seed);
            let u = f.bulk_velocity();
            let d0 = f.dissipation_against(&u).unwrap();
            let w = u.mapv(|x| x + shift);
            let d1 = f.dissipation_against(&w).unwrap();
            prop_assert!(d1 + 1e-12 >= d0, "{} < {}", d1, d0);
        }
    }
}
