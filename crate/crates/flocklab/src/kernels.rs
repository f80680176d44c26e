//! Interaction kernels: the long-range influence kernel, compactly supported
//! mollifiers with exact rescaling, midpoint-rule convolution on a grid, and
//! the uniform bound on the mollified-ratio integral.
//!
//! The ratio bound is the load-bearing constant of the whole crate: for an
//! admissible mollifier `K` (positive at 0, positive on the ball of radius
//! `R1`, zero outside radius `R2`) the integral `∫ K_r(x-y) ρ(x)/ρ̃(x) dx`
//! with `ρ̃ = K_r ⋆ ρ` is bounded by a constant depending only on the shape
//! of `K` — not on `ρ`, not on `y`, and (because the bound is scale
//! invariant) not on the radius `r`. [`Mollifier::mt_constant`] computes that
//! explicit constant; [`mt_ratio_integral`] and [`mt_ratio_sup`] measure the
//! actual integral so tests can pin the inequality down numerically.

use ndarray::Array1;

use crate::grid::Axis;
use crate::{Error, Result};

/// Long-range influence kernel `Φ(x) = λ (1 + |x|²)^(-β)`.
///
/// `Φ` is bounded, positive and has unbounded support; its sup is `λ`.
#[derive(Debug, Clone, PartialEq)]
pub struct InfluenceKernel {
    lambda: f64,
    beta: f64,
}

impl InfluenceKernel {
    /// Algebraically decaying kernel; requires `λ ≥ 0` and `β > 0`.
    pub fn new(lambda: f64, beta: f64) -> Result<Self> {
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(Error::invalid("lambda", format!("{lambda} is not finite and nonnegative")));
        }
        if !(beta.is_finite() && beta > 0.0) {
            return Err(Error::invalid("beta", format!("{beta} is not finite and positive")));
        }
        Ok(InfluenceKernel { lambda, beta })
    }

    /// Constant kernel `Φ ≡ λ`, the `β → 0` limit. Useful for closed-form
    /// alignment dynamics where every pair interacts with equal weight.
    pub fn flat(lambda: f64) -> Result<Self> {
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(Error::invalid("lambda", format!("{lambda} is not finite and nonnegative")));
        }
        Ok(InfluenceKernel { lambda, beta: 0.0 })
    }

    /// Identically zero kernel (`λ = 0`); pair sums can be skipped exactly.
    #[inline]
    pub fn is_zero(&self) -> bool {
        self.lambda == 0.0
    }

    /// Evaluate at signed separation `dx` (1-d).
    #[inline]
    pub fn eval(&self, dx: f64) -> f64 {
        self.eval_sq(dx * dx)
    }

    /// Evaluate from the squared distance; the form used by d-dimensional
    /// particle sums.
    #[inline]
    pub fn eval_sq(&self, d2: f64) -> f64 {
        if self.beta == 0.0 {
            self.lambda
        } else if self.beta == 1.0 {
            // Fast path for the default exponent; this sits inside O(N²)
            // particle loops.
            self.lambda / (1.0 + d2)
        } else {
            self.lambda * (1.0 + d2).powf(-self.beta)
        }
    }

    /// `sup Φ = Φ(0) = λ`.
    pub fn sup(&self) -> f64 {
        self.lambda
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }
}

/// Unit-scale mollifier profile `K: [0, R2] → [0, ∞)`, evaluated radially.
///
/// Admissibility: `K(0) > 0`, `K > 0` on the ball of radius `R1` (the
/// half-peak radius), `K = 0` outside radius `R2`.
#[derive(Debug, Clone, PartialEq)]
pub enum Profile {
    /// `(1 - |x|)₊`, support radius 1.
    Triangle,
    /// `(1 - |x|²)₊²`, support radius 1.
    Bump2,
    /// `(1 + cos πx)/2` on `|x| ≤ 1`.
    Cosine,
    /// Piecewise-linear table of `(radius, value)` samples on the unit scale.
    Table { xs: Vec<f64>, ks: Vec<f64> },
}

impl Profile {
    pub fn by_name(name: &str) -> Option<Profile> {
        match name {
            "triangle" => Some(Profile::Triangle),
            "bump2" => Some(Profile::Bump2),
            "cosine" => Some(Profile::Cosine),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Profile::Triangle => "triangle",
            Profile::Bump2 => "bump2",
            Profile::Cosine => "cosine",
            Profile::Table { .. } => "table",
        }
    }

    /// Build a tabulated profile. The table lists radii `0 = x₀ < x₁ < …`
    /// with values `K(xᵢ) ≥ 0`, `K(0) > 0` and a zero final value (the
    /// support edge); evaluation interpolates linearly and is zero beyond
    /// the last radius.
    pub fn table(xs: Vec<f64>, ks: Vec<f64>) -> Result<Profile> {
        if xs.len() != ks.len() || xs.len() < 2 {
            return Err(Error::invalid("profile table", "need at least two (x, K) rows"));
        }
        if xs[0] != 0.0 {
            return Err(Error::invalid("profile table", format!("first radius must be 0, got {}", xs[0])));
        }
        for w in xs.windows(2) {
            if !(w[1].is_finite() && w[1] > w[0]) {
                return Err(Error::invalid("profile table", "radii must be finite and strictly increasing"));
            }
        }
        for &k in &ks {
            if !(k.is_finite() && k >= 0.0) {
                return Err(Error::invalid("profile table", format!("values must be finite and nonnegative, got {k}")));
            }
        }
        if ks[0] <= 0.0 {
            return Err(Error::invalid("profile table", "K(0) must be positive"));
        }
        if *ks.last().unwrap() != 0.0 {
            return Err(Error::invalid("profile table", "last value must be 0 (support edge)"));
        }
        let p = Profile::Table { xs, ks };
        // Admissibility: K must stay positive on the closed half-peak ball.
        let r1 = p.half_peak_radius();
        if p.inf_on(r1) <= 0.0 {
            return Err(Error::invalid("profile table", "K vanishes inside its half-peak radius"));
        }
        Ok(p)
    }

    /// Parse a two-column CSV (`radius,value` per line, `#` comments).
    pub fn from_csv_str(text: &str) -> Result<Profile> {
        let mut xs = Vec::new();
        let mut ks = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let mut cols = line.split(',');
            let parse = |field: Option<&str>| -> Result<f64> {
                field
                    .map(str::trim)
                    .and_then(|s| s.parse::<f64>().ok())
                    .ok_or_else(|| Error::invalid("profile table", format!("line {}: expected `radius,value`", lineno + 1)))
            };
            xs.push(parse(cols.next())?);
            ks.push(parse(cols.next())?);
            if cols.next().is_some() {
                return Err(Error::invalid("profile table", format!("line {}: more than two columns", lineno + 1)));
            }
        }
        Profile::table(xs, ks)
    }

    pub fn from_csv_path(path: &std::path::Path) -> Result<Profile> {
        Profile::from_csv_str(&std::fs::read_to_string(path)?)
    }

    /// Unnormalized value at radius `s ≥ 0` on the unit scale.
    pub fn eval_unit(&self, s: f64) -> f64 {
        let s = s.abs();
        match self {
            Profile::Triangle => (1.0 - s).max(0.0),
            Profile::Bump2 => {
                let t = 1.0 - s * s;
                if t > 0.0 { t * t } else { 0.0 }
            }
            Profile::Cosine => {
                if s >= 1.0 { 0.0 } else { 0.5 * (1.0 + (std::f64::consts::PI * s).cos()) }
            }
            Profile::Table { xs, ks } => {
                let last = *xs.last().unwrap();
                if s >= last {
                    return 0.0;
                }
                // Index of the segment containing s.
                let seg = match xs.binary_search_by(|x| x.partial_cmp(&s).unwrap()) {
                    Ok(i) => return ks[i],
                    Err(i) => i - 1, // xs[0] = 0 ≤ s, so i ≥ 1
                };
                let t = (s - xs[seg]) / (xs[seg + 1] - xs[seg]);
                ks[seg] + t * (ks[seg + 1] - ks[seg])
            }
        }
    }

    /// Support radius `R2` on the unit scale.
    pub fn support(&self) -> f64 {
        match self {
            Profile::Triangle | Profile::Bump2 | Profile::Cosine => 1.0,
            Profile::Table { xs, .. } => *xs.last().unwrap(),
        }
    }

    /// Sup of `K` over its support (attained at a node for tables).
    pub fn sup_unit(&self) -> f64 {
        match self {
            Profile::Triangle | Profile::Bump2 | Profile::Cosine => 1.0,
            Profile::Table { ks, .. } => ks.iter().cloned().fold(0.0, f64::max),
        }
    }

    /// Half-peak radius `R1`: the first radius at or past the peak where the
    /// profile has dropped to half its sup. For the monotone built-in
    /// profiles this makes `sup / inf_{B_R1} = 2` exactly.
    pub fn half_peak_radius(&self) -> f64 {
        match self {
            Profile::Triangle | Profile::Cosine => 0.5,
            Profile::Bump2 => (1.0 - std::f64::consts::FRAC_1_SQRT_2).sqrt(),
            Profile::Table { xs, ks } => {
                let peak = self.sup_unit();
                let target = 0.5 * peak;
                let start = ks.iter().rposition(|&k| k == peak).unwrap();
                for i in start..ks.len() - 1 {
                    if ks[i + 1] <= target && ks[i] >= target {
                        if ks[i] == ks[i + 1] {
                            return xs[i + 1];
                        }
                        return xs[i] + (ks[i] - target) / (ks[i] - ks[i + 1]) * (xs[i + 1] - xs[i]);
                    }
                }
                // ks ends at 0 < target, so a crossing always exists.
                unreachable!("profile table has no half-peak crossing");
            }
        }
    }

    /// Infimum of `K` over the closed ball of radius `r1`.
    pub fn inf_on(&self, r1: f64) -> f64 {
        match self {
            // Built-ins decrease monotonically: the inf sits at the edge.
            Profile::Triangle | Profile::Bump2 | Profile::Cosine => self.eval_unit(r1),
            Profile::Table { xs, ks } => {
                let mut inf = self.eval_unit(r1.min(self.support() * (1.0 - 1e-15)));
                for (&x, &k) in xs.iter().zip(ks) {
                    if x <= r1 {
                        inf = inf.min(k);
                    }
                }
                inf
            }
        }
    }

    /// Exact integral of the unnormalized radial profile over `R^dim`.
    pub fn unit_integral(&self, dim: usize) -> f64 {
        use std::f64::consts::PI;
        match (self, dim) {
            (Profile::Triangle, 1) => 1.0,
            (Profile::Triangle, 2) => PI / 3.0,
            (Profile::Bump2, 1) => 16.0 / 15.0,
            (Profile::Bump2, 2) => PI / 3.0,
            (Profile::Cosine, 1) => 1.0,
            (Profile::Cosine, 2) => PI / 2.0 - 2.0 / PI,
            (Profile::Table { xs, ks }, d) => {
                // Piecewise-linear segments integrate in closed form.
                let mut acc = 0.0;
                for i in 0..xs.len() - 1 {
                    let (x0, x1) = (xs[i], xs[i + 1]);
                    let (k0, k1) = (ks[i], ks[i + 1]);
                    let b = (k1 - k0) / (x1 - x0);
                    let a = k0 - b * x0;
                    acc += match d {
                        // 2 ∫ (a + b s) ds  (even reflection)
                        1 => 2.0 * (a * (x1 - x0) + b * (x1 * x1 - x0 * x0) / 2.0),
                        // 2π ∫ s (a + b s) ds
                        2 => {
                            2.0 * PI
                                * (a * (x1 * x1 - x0 * x0) / 2.0
                                    + b * (x1 * x1 * x1 - x0 * x0 * x0) / 3.0)
                        }
                        _ => unreachable!(),
                    };
                }
                acc
            }
            _ => unreachable!("dim must be 1 or 2"),
        }
    }

    /// Second moment `∫ s² K(s) ds` of the *normalized* 1-d profile; the
    /// leading coefficient in the small-`r` expansion of `K_r ⋆ ρ - ρ`.
    pub fn second_moment_1d(&self) -> f64 {
        let raw = match self {
            Profile::Triangle => 1.0 / 6.0,
            Profile::Bump2 => 16.0 / 105.0,
            Profile::Cosine => 1.0 / 3.0 - 2.0 / (std::f64::consts::PI * std::f64::consts::PI),
            Profile::Table { xs, ks } => {
                let mut acc = 0.0;
                for i in 0..xs.len() - 1 {
                    let (x0, x1) = (xs[i], xs[i + 1]);
                    let (k0, k1) = (ks[i], ks[i + 1]);
                    let b = (k1 - k0) / (x1 - x0);
                    let a = k0 - b * x0;
                    // 2 ∫ s² (a + b s) ds
                    acc += 2.0
                        * (a * (x1.powi(3) - x0.powi(3)) / 3.0 + b * (x1.powi(4) - x0.powi(4)) / 4.0);
                }
                acc
            }
        };
        raw / self.unit_integral(1)
    }
}

/// Number of radius-`R1/2` balls in the explicit lattice covering of the
/// closed ball of radius `R2`.
///
/// In 1-d the covering tiles `[-R2, R2]` with `⌈2 R2 / R1⌉` intervals of
/// length `2 R2 / N ≤ R1`; in 2-d it tiles the bounding square with squares
/// of side `R1/√2` (circumradius `R1/2`) and counts those meeting the disk.
pub fn n_cover(r1: f64, r2: f64, dim: usize) -> usize {
    match dim {
        1 => {
            let q = 2.0 * r2 / r1;
            // Guard against 4.0 + 1 ulp ceiling to 5.
            if (q - q.round()).abs() < 1e-9 { q.round() as usize } else { q.ceil() as usize }
        }
        2 => {
            let s = r1 / std::f64::consts::SQRT_2;
            let q = 2.0 * r2 / s;
            let tiles = if (q - q.round()).abs() < 1e-9 { q.round() as usize } else { q.ceil() as usize };
            let mut count = 0;
            for p in 0..tiles {
                for qy in 0..tiles {
                    let lo = |k: usize| -r2 + k as f64 * s;
                    let hi = |k: usize| -r2 + (k + 1) as f64 * s;
                    // Closest point of the tile to the origin.
                    let cx = 0.0f64.clamp(lo(p), hi(p));
                    let cy = 0.0f64.clamp(lo(qy), hi(qy));
                    if (cx * cx + cy * cy).sqrt() <= r2 + 1e-12 {
                        count += 1;
                    }
                }
            }
            count
        }
        _ => unreachable!("dim must be 1 or 2"),
    }
}

/// Rescaled mollifier `K_r(x) = r^(-dim) K(x/r)`, normalized so that
/// `∫ K_r = 1` exactly (the unit-scale integral is computed in closed form).
#[derive(Debug, Clone, PartialEq)]
pub struct Mollifier {
    profile: Profile,
    r: f64,
    dim: usize,
    /// `1 / ∫ K` on the unit scale, for the configured dimension.
    norm: f64,
    /// `norm / r^dim`, the prefactor of every evaluation.
    scale: f64,
    inv_r: f64,
}

impl Mollifier {
    pub fn new(profile: Profile, r: f64, dim: usize) -> Result<Self> {
        if !(r.is_finite() && r > 0.0) {
            return Err(Error::invalid("mollifier radius", format!("{r} is not finite and positive")));
        }
        if dim != 1 && dim != 2 {
            return Err(Error::invalid("mollifier dim", format!("{dim} not in {{1, 2}}")));
        }
        let norm = 1.0 / profile.unit_integral(dim);
        let scale = norm / r.powi(dim as i32);
        Ok(Mollifier { profile, r, dim, norm, scale, inv_r: 1.0 / r })
    }

    pub fn profile(&self) -> &Profile {
        &self.profile
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Half-peak radius on the unit scale.
    pub fn r1(&self) -> f64 {
        self.profile.half_peak_radius()
    }

    /// Support radius on the unit scale.
    pub fn r2(&self) -> f64 {
        self.profile.support()
    }

    /// Normalized value at distance `d ≥ 0`.
    #[inline]
    pub fn eval_dist(&self, d: f64) -> f64 {
        self.scale * self.profile.eval_unit(d * self.inv_r)
    }

    /// Physical support radius `r · R2`.
    pub fn support_radius(&self) -> f64 {
        self.r * self.r2()
    }

    /// The explicit, `r`-independent and `ρ`-independent bound on
    /// `∫ K_r(x-y) ρ(x)/ρ̃(x) dx`: `(sup K / inf_{B_R1} K) · N_cover`.
    ///
    /// Dilations and positive rescalings of the profile leave it unchanged.
    pub fn mt_constant(&self) -> f64 {
        let r1 = self.r1();
        let r2 = self.r2();
        let ratio = match &self.profile {
            // K(R1) = sup/2 is the definition of R1 for the monotone
            // built-ins; evaluating it numerically would only add roundoff.
            Profile::Triangle | Profile::Bump2 | Profile::Cosine => 2.0,
            p => p.sup_unit() / p.inf_on(r1),
        };
        ratio * n_cover(r1, r2, self.dim) as f64
    }

    /// Second moment of the normalized unit-scale profile (1-d).
    pub fn second_moment(&self) -> f64 {
        self.profile.second_moment_1d()
    }
}

/// A kernel that can weight a 1-d grid convolution.
pub trait SpatialKernel {
    fn weight(&self, dx: f64) -> f64;
    /// Distance beyond which the weight vanishes identically; `None` for
    /// unbounded support.
    fn cutoff(&self) -> Option<f64>;
}

impl SpatialKernel for InfluenceKernel {
    #[inline]
    fn weight(&self, dx: f64) -> f64 {
        self.eval(dx)
    }

    fn cutoff(&self) -> Option<f64> {
        None
    }
}

impl SpatialKernel for Mollifier {
    #[inline]
    fn weight(&self, dx: f64) -> f64 {
        self.eval_dist(dx.abs())
    }

    fn cutoff(&self) -> Option<f64> {
        Some(self.support_radius())
    }
}

/// Index window of cells whose centers lie within `radius` of `y`.
fn window(axis: &Axis, y: f64, radius: f64) -> (usize, usize) {
    let h = axis.h();
    let lo = ((y - radius + axis.l()) / h - 0.5).ceil().max(0.0) as usize;
    let hi = ((y + radius + axis.l()) / h - 0.5).floor().min(axis.n() as f64 - 1.0);
    if hi < 0.0 {
        return (1, 0); // empty window
    }
    (lo.min(axis.n() - 1), hi as usize)
}

/// Midpoint-rule convolution `h(x_i) = Σ_k w(x_i - x_k) g(x_k) Δx` on the
/// grid, treating `g` as zero outside the domain.
///
/// Compactly supported kernels must span at least 4 cells; anything finer
/// cannot be resolved by the midpoint rule and is rejected.
pub fn convolve<K: SpatialKernel + ?Sized>(kernel: &K, axis: &Axis, g: &Array1<f64>) -> Result<Array1<f64>> {
    if g.len() != axis.n() {
        return Err(Error::DomainMismatch { got: g.len(), want: axis.n() });
    }
    let h = axis.h();
    if let Some(c) = kernel.cutoff() {
        if c < 4.0 * h {
            return Err(Error::UnresolvedKernel { support: c, dx: h });
        }
    }
    let n = axis.n();
    let mut out = Array1::zeros(n);
    match kernel.cutoff() {
        Some(c) => {
            let w = (c / h).floor() as usize + 1;
            for i in 0..n {
                let xi = axis.center(i);
                let (lo, hi) = (i.saturating_sub(w), (i + w).min(n - 1));
                let mut acc = 0.0;
                for k in lo..=hi {
                    acc += kernel.weight(xi - axis.center(k)) * g[k];
                }
                out[i] = acc * h;
            }
        }
        None => {
            for i in 0..n {
                let xi = axis.center(i);
                let mut acc = 0.0;
                for k in 0..n {
                    acc += kernel.weight(xi - axis.center(k)) * g[k];
                }
                out[i] = acc * h;
            }
        }
    }
    Ok(out)
}

fn validate_density(rho: &Array1<f64>) -> Result<()> {
    for &v in rho {
        if !(v.is_finite() && v >= 0.0) {
            return Err(Error::invalid("density", format!("entry {v} is not finite and nonnegative")));
        }
    }
    Ok(())
}

fn ratio_sum(m: &Mollifier, axis: &Axis, rho: &Array1<f64>, rho_t: &Array1<f64>, y: f64) -> Result<f64> {
    let (lo, hi) = window(axis, y, m.support_radius());
    let mut acc = 0.0;
    for k in lo..=hi.min(axis.n().saturating_sub(1)) {
        let xk = axis.center(k);
        let w = m.eval_dist((xk - y).abs());
        if w == 0.0 || rho[k] == 0.0 {
            // Vacuum convention: the integrand is 0 wherever ρ vanishes.
            continue;
        }
        if rho_t[k] <= 0.0 {
            return Err(Error::VacuumRatio { x: xk });
        }
        acc += w * rho[k] / rho_t[k];
    }
    Ok(acc * axis.h())
}

/// `∫ K_r(x - y) ρ(x) / ρ̃(x) dx` by the midpoint rule, with
/// `ρ̃ = K_r ⋆ ρ` computed on the same grid. Zero wherever `ρ` vanishes.
pub fn mt_ratio_integral(m: &Mollifier, axis: &Axis, rho: &Array1<f64>, y: f64) -> Result<f64> {
    if m.dim() != 1 {
        return Err(Error::invalid("mollifier dim", "ratio integral is a 1-d grid operation"));
    }
    validate_density(rho)?;
    let rho_t = convolve(m, axis, rho)?;
    ratio_sum(m, axis, rho, &rho_t, y)
}

/// Max of [`mt_ratio_integral`] over all grid centers `y`, sharing one
/// convolution pass.
pub fn mt_ratio_sup(m: &Mollifier, axis: &Axis, rho: &Array1<f64>) -> Result<f64> {
    if m.dim() != 1 {
        return Err(Error::invalid("mollifier dim", "ratio integral is a 1-d grid operation"));
    }
    validate_density(rho)?;
    let rho_t = convolve(m, axis, rho)?;
    let mut sup = 0.0f64;
    for iy in 0..axis.n() {
        sup = sup.max(ratio_sum(m, axis, rho, &rho_t, axis.center(iy))?);
    }
    Ok(sup)
}
