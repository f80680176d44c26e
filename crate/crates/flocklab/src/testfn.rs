//! Separable space-time test functions for weak-form residuals.
//!
//! `φ_{m,k,l}(t, x, v) = T_m(t) X_k(x) V_l(v)` with
//! `T_m(τ) = τ^m (1 - τ)` on `τ = t/T`, and
//! `X_k(p) = p^k (1 - p²)³` on `p = x/Lx` (same family in `v`).
//!
//! Every `T_m` vanishes at the final time (no terminal boundary term) and
//! every spatial factor vanishes to second order at the domain edge, so
//! boundary fluxes drop out of integrations against the basis.

use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct SeparableBasis {
    pub t_end: f64,
    pub lx: f64,
    pub lv: f64,
    /// Inclusive maximum time degree `m`.
    pub m_max: usize,
    /// Inclusive maximum space degree `k`.
    pub k_max: usize,
    /// Inclusive maximum velocity degree `l`.
    pub l_max: usize,
}

/// `g_k(p) = p^k (1 - p²)³` and its derivative in `p`.
fn shape(k: usize, p: f64) -> f64 {
    let q = 1.0 - p * p;
    if q <= 0.0 {
        return 0.0;
    }
    p.powi(k as i32) * q * q * q
}

fn shape_deriv(k: usize, p: f64) -> f64 {
    let q = 1.0 - p * p;
    if q <= 0.0 {
        return 0.0;
    }
    let poly = p.powi(k as i32) * q * q * (-6.0 * p);
    if k == 0 {
        poly
    } else {
        poly + k as f64 * p.powi(k as i32 - 1) * q * q * q
    }
}

impl SeparableBasis {
    pub fn new(t_end: f64, lx: f64, lv: f64, m_max: usize, k_max: usize, l_max: usize) -> Result<Self> {
        for (name, v) in [("t_end", t_end), ("lx", lx), ("lv", lv)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(name, format!("{v} is not finite and positive")));
            }
        }
        Ok(SeparableBasis { t_end, lx, lv, m_max, k_max, l_max })
    }

    pub fn len(&self) -> usize {
        (self.m_max + 1) * (self.k_max + 1) * (self.l_max + 1)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// All `(m, k, l)` index triples in a fixed order.
    pub fn indices(&self) -> Vec<(usize, usize, usize)> {
        let mut out = Vec::with_capacity(self.len());
        for m in 0..=self.m_max {
            for k in 0..=self.k_max {
                for l in 0..=self.l_max {
                    out.push((m, k, l));
                }
            }
        }
        out
    }

    /// `T_m(t) = τ^m (1 - τ)`, `τ = t/T`; vanishes at `t = T`.
    pub fn time_value(&self, m: usize, t: f64) -> f64 {
        let tau = t / self.t_end;
        tau.powi(m as i32) * (1.0 - tau)
    }

    /// `dT_m/dt`.
    pub fn time_deriv(&self, m: usize, t: f64) -> f64 {
        let tau = t / self.t_end;
        let d = if m == 0 {
            -1.0
        } else {
            m as f64 * tau.powi(m as i32 - 1) - (m as f64 + 1.0) * tau.powi(m as i32)
        };
        d / self.t_end
    }

    pub fn space_value(&self, k: usize, x: f64) -> f64 {
        shape(k, x / self.lx)
    }

    pub fn space_deriv(&self, k: usize, x: f64) -> f64 {
        shape_deriv(k, x / self.lx) / self.lx
    }

    pub fn vel_value(&self, l: usize, v: f64) -> f64 {
        shape(l, v / self.lv)
    }

    pub fn vel_deriv(&self, l: usize, v: f64) -> f64 {
        shape_deriv(l, v / self.lv) / self.lv
    }
}
