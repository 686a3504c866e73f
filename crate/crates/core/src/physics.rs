//! Full electrical model of the cell: series line resistance, plug and disc
//! resistors, Schottky diode, local temperature, and a bracketed solver for
//! the self-consistent operating point.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::constants::{BOLTZMANN, ELEMENTARY_CHARGE, PLANCK};
use crate::device::DeviceState;
use crate::error::{Error, Result};
use crate::params::PhysicalParams;

const Q: f64 = ELEMENTARY_CHARGE;

pub const MAX_ITERATIONS: usize = 200;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Polarity {
    /// V_M < 0, conductance increases.
    Set,
    /// V_M > 0, conductance decreases.
    Reset,
}

impl Polarity {
    /// `None` for zero (or NaN) bias.
    pub fn of(v_m: f64) -> Option<Polarity> {
        if v_m < 0.0 {
            Some(Polarity::Set)
        } else if v_m > 0.0 {
            Some(Polarity::Reset)
        } else {
            None
        }
    }

    pub fn sign(self) -> f64 {
        match self {
            Polarity::Set => -1.0,
            Polarity::Reset => 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VoltagePartition {
    pub v_m: f64,
    pub v_s: f64,
    pub v_p: f64,
    pub v_d: f64,
    pub v_sch: f64,
    pub i_m: f64,
    pub t: f64,
}

impl VoltagePartition {
    pub fn equilibrium(t_0: f64) -> Self {
        VoltagePartition { v_m: 0.0, v_s: 0.0, v_p: 0.0, v_d: 0.0, v_sch: 0.0, i_m: 0.0, t: t_0 }
    }

    /// |V_M - (V_s + V_p + V_d + V_Sch)|.
    pub fn closure_residual(&self) -> f64 {
        (self.v_m - (self.v_s + self.v_p + self.v_d + self.v_sch)).abs()
    }
}

fn finite(name: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("{name} must be finite, got {v}")))
    }
}

/// Line plus TiOx resistance at current `i_m`.
pub fn series_resistance(params: &PhysicalParams, i_m: f64) -> Result<f64> {
    finite("I_M", i_m)?;
    Ok(params.r_tiox + params.r_0 * (1.0 + params.alpha_l * params.r_0 * i_m * i_m * params.r_th_line))
}

/// Resistance of a uniformly doped oxide region.
pub fn layer_resistance(params: &PhysicalParams, region_length: f64, concentration: f64, r_d: f64) -> Result<f64> {
    for (name, v) in [("region length", region_length), ("concentration", concentration), ("r_d", r_d)] {
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::invalid(format!("{name} must be finite and > 0, got {v}")));
        }
    }
    Ok(region_length / (params.z_vo * Q * PI * r_d * r_d * concentration * params.mu_n))
}

/// T = I_M V_internal R_th (r_d / r_d_noisy)² + T_0.
pub fn local_temperature(
    params: &PhysicalParams,
    i_m: f64,
    v_internal: f64,
    polarity: Polarity,
    r_d_noisy: f64,
) -> Result<f64> {
    finite("I_M", i_m)?;
    finite("V_internal", v_internal)?;
    if !(r_d_noisy.is_finite() && r_d_noisy > 0.0) {
        return Err(Error::invalid(format!("r_d_noisy must be > 0, got {r_d_noisy}")));
    }
    let t = temperature_unchecked(params, i_m, v_internal, polarity, r_d_noisy);
    if t < params.t_0 {
        return Err(Error::Consistency(format!(
            "local temperature {t} K below ambient (I_M = {i_m:e} A, V = {v_internal} V, {polarity:?})"
        )));
    }
    Ok(t)
}

fn temperature_unchecked(params: &PhysicalParams, i_m: f64, v_internal: f64, polarity: Polarity, r_d_noisy: f64) -> f64 {
    let r_th = match polarity {
        Polarity::Set => params.r_th_set,
        Polarity::Reset => params.r_th_reset,
    };
    i_m * v_internal * r_th * (params.r_d * params.r_d / (r_d_noisy * r_d_noisy)) + params.t_0
}

/// Intermediate diode quantities, exposed for inspection and tests.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiodeTerms {
    /// J
    pub w00: f64,
    /// J
    pub w0: f64,
    /// J
    pub eps_prime: f64,
    /// Effective barrier height (V).
    pub phi_bn: f64,
}

/// Lowered barrier height in volts. `clamp` replaces a negative fourth-root
/// argument by zero instead of failing.
fn barrier_height(params: &PhysicalParams, v_sch: f64, n_d: f64, clamp: bool) -> Result<f64> {
    let phi0 = params.phi_bn0 / Q;
    let arg = params.z_vo * n_d * (phi0 - params.phi_n / Q - v_sch) * Q.powi(3)
        / (8.0 * PI * PI * params.eps_phib.powi(3));
    if arg < 0.0 {
        if !clamp {
            return Err(Error::Domain {
                what: "barrier-lowering fourth root has a negative argument",
                at: format!("V_Sch = {v_sch} V, N_d = {n_d:e} m^-3"),
            });
        }
        return Ok(phi0);
    }
    Ok(phi0 - arg.sqrt().sqrt())
}

pub fn diode_terms(params: &PhysicalParams, v_sch: f64, n_d: f64, t: f64) -> Result<DiodeTerms> {
    terms(params, v_sch, n_d, t, false)
}

fn terms(params: &PhysicalParams, v_sch: f64, n_d: f64, t: f64, clamp: bool) -> Result<DiodeTerms> {
    let w00 = Q * PLANCK / (4.0 * PI) * (params.z_vo * n_d / (params.m_star * params.eps)).sqrt();
    let kt = BOLTZMANN * t;
    let x = w00 / kt;
    let th = x.tanh();
    Ok(DiodeTerms {
        w00,
        w0: w00 / th,
        eps_prime: w00 / (x - th),
        phi_bn: barrier_height(params, v_sch, n_d, clamp)?,
    })
}

/// Schottky diode current for the branch selected by `polarity`.
pub fn schottky_current(
    params: &PhysicalParams,
    polarity: Polarity,
    v_sch: f64,
    n_d: f64,
    t: f64,
    r_d: f64,
) -> Result<f64> {
    finite("V_Sch", v_sch)?;
    if !(t.is_finite() && t > 0.0) {
        return Err(Error::invalid(format!("T must be > 0, got {t}")));
    }
    if !(n_d.is_finite() && n_d > 0.0 && r_d.is_finite() && r_d > 0.0) {
        return Err(Error::invalid("N_d and r_d must be > 0"));
    }
    diode(params, polarity, v_sch, n_d, t, r_d, false)
}

fn diode(params: &PhysicalParams, polarity: Polarity, v_sch: f64, n_d: f64, t: f64, r_d: f64, clamp: bool) -> Result<f64> {
    let d = terms(params, v_sch, n_d, t, clamp)?;
    let area = PI * r_d * r_d;
    let kt = BOLTZMANN * t;
    let i = match polarity {
        Polarity::Set => {
            let c = d.w00 / kt;
            let mut arg = PI * d.w00 * Q * (d.phi_bn / (c.cosh() * c.cosh()) - v_sch);
            if arg < 0.0 {
                if !clamp {
                    return Err(Error::Domain {
                        what: "reverse-branch square root has a negative argument",
                        at: format!("V_Sch = {v_sch} V, N_d = {n_d:e} m^-3, T = {t} K"),
                    });
                }
                arg = 0.0;
            }
            -arg.sqrt() * (-Q * d.phi_bn / d.w0).exp() * (-Q * v_sch / d.eps_prime).exp_m1() * area * params.a_star * t
                / BOLTZMANN
        }
        Polarity::Reset => area * params.a_star * t * t * (-Q * d.phi_bn / kt).exp() * (Q * v_sch / kt).exp_m1(),
    };
    if !i.is_finite() {
        return Err(Error::Saturation("Schottky diode current"));
    }
    Ok(i)
}

/// Self-consistent operating point of the full model at applied voltage `v_m`,
/// using the device's own `n_d`, `r_d` and `l_d`.
pub fn solve_full_model(params: &PhysicalParams, state: &DeviceState, v_m: f64) -> Result<VoltagePartition> {
    finite("V_M", v_m)?;
    let Some(pol) = Polarity::of(v_m) else {
        return Ok(VoltagePartition::equilibrium(params.t_0));
    };
    let r_p = layer_resistance(params, params.l_p, params.n_p, state.r_d)?;
    let r_d = layer_resistance(params, state.l_d, state.n_d, state.r_d)?;
    let s = pol.sign();

    // Partition implied by a trial current.
    let partition = |i: f64| -> Result<VoltagePartition> {
        let v_s = i * series_resistance(params, i)?;
        let v_p = i * r_p;
        let v_d = i * r_d;
        let v_sch = v_m - v_s - v_p - v_d;
        let t = temperature_unchecked(params, i, v_m - v_s, pol, state.r_d).max(params.t_0);
        Ok(VoltagePartition { v_m, v_s, v_p, v_d, v_sch, i_m: i, t })
    };
    // Residual oriented so it is negative at I = 0 and positive at the
    // current where the resistors alone would absorb V_M.
    let residual = |vp: &VoltagePartition| -> Result<f64> {
        if vp.v_sch * s <= 0.0 {
            return Ok(s * vp.i_m);
        }
        let i = diode(params, pol, vp.v_sch, state.n_d, vp.t, state.r_d, true)?;
        Ok(s * (vp.i_m - i))
    };

    let r_min = params.r_tiox + params.r_0 + r_p + r_d;
    let mut lo = 0.0_f64;
    let mut hi = v_m / r_min;
    let mut p_lo = partition(lo)?;
    let mut p_hi = partition(hi)?;
    let tol = 1e-9 * v_m.abs().max(1.0);
    let mut iterations = 0;
    loop {
        let gap = (p_lo.v_sch - p_hi.v_sch).abs();
        let width = (hi - lo).abs();
        if gap <= tol && width <= 1e-13 * hi.abs().max(lo.abs()) {
            break;
        }
        if iterations == MAX_ITERATIONS {
            return Err(Error::Convergence { iterations, residual: gap });
        }
        iterations += 1;
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        let p_mid = partition(mid)?;
        if residual(&p_mid)? < 0.0 {
            lo = mid;
            p_lo = p_mid;
        } else {
            hi = mid;
            p_hi = p_mid;
        }
    }
    let mid = 0.5 * (lo + hi);
    let vp = partition(mid)?;
    if vp.v_sch * s <= 0.0 {
        return Err(Error::Consistency(format!("V_Sch = {} V has the wrong sign for V_M = {v_m} V", vp.v_sch)));
    }
    let t = local_temperature(params, vp.i_m, v_m - vp.v_s, pol, state.r_d)?;
    // Strict re-evaluation fails if the root sits in an extended region.
    diode(params, pol, vp.v_sch, state.n_d, t, state.r_d, false)?;
    Ok(VoltagePartition { t, ..vp })
}
