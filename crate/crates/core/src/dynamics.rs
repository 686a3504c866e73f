//! Vacancy-concentration dynamics under voltage pulses.

use std::f64::consts::PI;
use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::constants::{BOLTZMANN, ELEMENTARY_CHARGE};
use crate::device::DeviceState;
use crate::error::{Error, Result};
use crate::fit::{self, FitCoefficients};
use crate::params::PhysicalParams;
use crate::physics::{Polarity, VoltagePartition};
use crate::stochastic::{c2c_walk_bounds, c2c_walk_geometry, NoiseSpec};

const Q: f64 = ELEMENTARY_CHARGE;

/// Default read voltage for conductance reads (SET polarity, small magnitude).
pub const DEFAULT_V_READ: f64 = -0.2;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PulseSpec {
    /// Signed amplitude (V); negative is SET.
    pub amplitude: f64,
    /// s
    pub duration: f64,
    /// s
    pub max_substep: f64,
    pub max_dnd_fraction: f64,
}

impl PulseSpec {
    pub fn new(amplitude: f64, duration: f64) -> Self {
        PulseSpec { amplitude, duration, max_substep: duration, max_dnd_fraction: 0.01 }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.amplitude.is_finite() {
            return Err(Error::invalid("pulse amplitude must be finite"));
        }
        if !(self.duration.is_finite() && self.duration > 0.0) {
            return Err(Error::invalid(format!("pulse duration must be > 0, got {}", self.duration)));
        }
        if !(self.max_substep.is_finite() && self.max_substep > 0.0) {
            return Err(Error::invalid("max_substep must be > 0"));
        }
        if !(self.max_dnd_fraction > 0.0 && self.max_dnd_fraction <= 1.0) {
            return Err(Error::invalid("max_dnd_fraction must lie in (0, 1]"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UpdateIntermediates {
    /// A
    pub i_ion: f64,
    /// V/m
    pub e_ion: f64,
    pub gamma: f64,
    /// eV
    pub dw_af: f64,
    /// eV
    pub dw_ar: f64,
    /// 1/m³
    pub c_vo: f64,
    pub f_limit: f64,
    /// K
    pub t: f64,
}

/// Driving field for ion hopping.
pub fn ion_field(partition: &VoltagePartition, params: &PhysicalParams, state: &DeviceState, polarity: Polarity) -> f64 {
    match polarity {
        Polarity::Set => partition.v_d / state.l_d,
        Polarity::Reset => (partition.v_m - partition.v_s) / params.l_c(),
    }
}

/// Forward and reverse hopping barriers (eV) and the field parameter gamma.
pub fn hopping_barriers(params: &PhysicalParams, e_ion: f64) -> Result<(f64, f64, f64)> {
    let gamma = Q * params.z_vo * params.alpha_hop * e_ion / (params.dw_a * PI);
    if !(gamma.abs() < 1.0) {
        return Err(Error::Domain { what: "ion field too strong (|gamma| >= 1)", at: format!("E_ion = {e_ion:e} V/m") });
    }
    let w = params.dw_a / Q;
    let common = (1.0 - gamma * gamma).sqrt() + gamma * gamma.asin();
    let skew = gamma * PI / 2.0;
    Ok((w * (common - skew), w * (common + skew), gamma))
}

/// Window function suppressing drift near the bound being approached.
pub fn f_limit(state: &DeviceState, polarity: Polarity) -> f64 {
    let f = match polarity {
        Polarity::Set => 1.0 - (state.n_d / state.n_d_max).powi(10),
        Polarity::Reset => 1.0 - (state.n_d_min / state.n_d).powi(10),
    };
    f.clamp(0.0, 1.0)
}

/// Ionic current and the quantities it is built from.
pub fn ionic_current(
    params: &PhysicalParams,
    state: &DeviceState,
    polarity: Polarity,
    e_ion: f64,
    t: f64,
) -> Result<UpdateIntermediates> {
    let (dw_af, dw_ar, gamma) = hopping_barriers(params, e_ion)?;
    let kt = BOLTZMANN * t;
    let c_vo = 0.5 * (params.n_p + state.n_d);
    let fl = f_limit(state, polarity);
    let area = PI * state.r_d * state.r_d;
    let i_ion = params.z_vo * Q * area * c_vo * params.alpha_hop * params.nu_0 * fl
        * ((-dw_af * Q / kt).exp() - (-dw_ar * Q / kt).exp());
    Ok(UpdateIntermediates { i_ion, e_ion, gamma, dw_af, dw_ar, c_vo, f_limit: fl, t })
}

/// dN_d/dt together with the electrical operating point it was computed at.
pub fn rate(
    coeffs: &FitCoefficients,
    params: &PhysicalParams,
    state: &DeviceState,
    v_m: f64,
) -> Result<(f64, VoltagePartition, Option<UpdateIntermediates>)> {
    let vp = fit::voltage_partition_from_surrogate(coeffs, params, state, v_m)?;
    let Some(pol) = Polarity::of(v_m) else {
        return Ok((0.0, vp, None));
    };
    let e = ion_field(&vp, params, state, pol);
    let im = ionic_current(params, state, pol, e, vp.t)?;
    let area = PI * state.r_d * state.r_d;
    Ok((-im.i_ion / (params.z_vo * Q * area * state.l_d), vp, Some(im)))
}

/// Read conductance I(V_read)/V_read from the surrogate.
pub fn read_conductance(coeffs: &FitCoefficients, params: &PhysicalParams, n_d: f64, v_read: f64) -> Result<f64> {
    Ok(fit::surrogate_current(coeffs, params, n_d, v_read)? / v_read)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub pulse_index: usize,
    /// Time since the start of the pulse (s).
    pub t: f64,
    pub v_m: f64,
    pub i_m: f64,
    pub n_d: f64,
    pub g: f64,
    /// Local temperature (K).
    pub temperature: f64,
}

pub fn write_trace_csv<W: Write>(mut w: W, rows: &[TraceRow]) -> std::io::Result<()> {
    writeln!(w, "pulse_index,t,V_M,I_M,N_d,G,T")?;
    for r in rows {
        writeln!(w, "{},{:e},{},{:e},{:e},{:e},{}", r.pulse_index, r.t, r.v_m, r.i_m, r.n_d, r.g, r.temperature)?;
    }
    Ok(())
}

/// Optional per-substep recording.
pub struct Trace<'a> {
    pub rows: &'a mut Vec<TraceRow>,
    pub pulse_index: usize,
    pub v_read: f64,
}

/// Integrates one pulse with explicit Euler, then applies one cycle-to-cycle
/// noise step.
pub fn apply_pulse<R: Rng + ?Sized>(
    coeffs: &FitCoefficients,
    params: &PhysicalParams,
    state: &mut DeviceState,
    pulse: &PulseSpec,
    noise: &NoiseSpec,
    rng: &mut R,
    trace: Option<Trace<'_>>,
) -> Result<()> {
    let n_old = state.n_d;
    integrate(coeffs, params, state, pulse, trace)?;
    if let Some(pol) = Polarity::of(pulse.amplitude) {
        apply_c2c(params, state, n_old, pol, noise, rng);
    }
    Ok(())
}

/// Deterministic part of a pulse.
pub fn integrate(
    coeffs: &FitCoefficients,
    params: &PhysicalParams,
    state: &mut DeviceState,
    pulse: &PulseSpec,
    mut trace: Option<Trace<'_>>,
) -> Result<()> {
    pulse.validate()?;
    if pulse.amplitude == 0.0 {
        return Ok(());
    }
    let span = state.n_d_max - state.n_d_min;
    let cap = pulse.max_dnd_fraction * span;
    let floor = pulse.duration * 1e-9;
    let mut t = 0.0;
    while t < pulse.duration {
        let (dndt, vp, _) = rate(coeffs, params, state, pulse.amplitude)?;
        if let Some(tr) = trace.as_mut() {
            let g = read_conductance(coeffs, params, state.n_d, tr.v_read)?;
            tr.rows.push(TraceRow {
                pulse_index: tr.pulse_index,
                t,
                v_m: vp.v_m,
                i_m: vp.i_m,
                n_d: state.n_d,
                g,
                temperature: vp.t,
            });
        }
        let remaining = pulse.duration - t;
        let mut dt = remaining.min(pulse.max_substep);
        if dndt != 0.0 {
            dt = dt.min(cap / dndt.abs());
        }
        if dt < floor && dt < remaining {
            return Err(Error::Stiffness { dt, limit: floor });
        }
        state.n_d = (state.n_d + dndt * dt).clamp(state.n_d_min, state.n_d_max);
        t = if dt == remaining { pulse.duration } else { t + dt };
        if dndt == 0.0 {
            break;
        }
    }
    Ok(())
}

/// One cycle-to-cycle step for every noisy parameter; N_d is then kept
/// inside the (possibly moved) bounds.
pub fn apply_c2c<R: Rng + ?Sized>(
    params: &PhysicalParams,
    state: &mut DeviceState,
    n_old: f64,
    polarity: Polarity,
    noise: &NoiseSpec,
    rng: &mut R,
) {
    if !noise.has_c2c() {
        return;
    }
    let (n_min, n_max) = (state.n_d_min, state.n_d_max);
    let walk_geom = |x: f64, p: &crate::stochastic::ParamNoise, nominal: f64, rng: &mut R| {
        if !p.is_enabled() {
            return x;
        }
        c2c_walk_geometry(
            x,
            p.c2c_sigma_add,
            p.c2c_sigma_mult,
            n_old,
            state.n_d,
            n_min,
            n_max,
            polarity,
            p.resolved_bounds(nominal),
            rng,
        )
    };
    let r_d = walk_geom(state.r_d, &noise.r_d, params.r_d, rng);
    let l_d = walk_geom(state.l_d, &noise.l_d, params.l_d, rng);
    state.r_d = r_d;
    state.l_d = l_d;
    let walk_n = |x: f64, p: &crate::stochastic::ParamNoise, nominal: f64, rng: &mut R| {
        if !p.is_enabled() {
            return x;
        }
        c2c_walk_bounds(x, p.c2c_sigma, p.resolved_bounds(nominal), rng)
    };
    let hi = walk_n(state.n_d_max, &noise.n_d_max, params.n_d_max, rng);
    let lo = walk_n(state.n_d_min, &noise.n_d_min, params.n_d_min, rng);
    if lo < hi {
        state.n_d_max = hi;
        state.n_d_min = lo;
    }
    state.n_d = state.n_d.clamp(state.n_d_min, state.n_d_max);
}

/// (pulse index, N_d, G) after each of `n_pulses` noise-free pulses; index 0
/// is the initial state.
pub fn switching_curve(
    coeffs: &FitCoefficients,
    params: &PhysicalParams,
    initial: &DeviceState,
    pulse: &PulseSpec,
    n_pulses: usize,
    v_read: f64,
) -> Result<Vec<(usize, f64, f64)>> {
    if n_pulses == 0 {
        return Err(Error::invalid("n_pulses must be >= 1"));
    }
    let mut st = initial.clone();
    let mut out = Vec::with_capacity(n_pulses + 1);
    out.push((0, st.n_d, read_conductance(coeffs, params, st.n_d, v_read)?));
    for k in 1..=n_pulses {
        integrate(coeffs, params, &mut st, pulse, None)?;
        out.push((k, st.n_d, read_conductance(coeffs, params, st.n_d, v_read)?));
    }
    Ok(out)
}

/// N_d at which the read conductance equals `g`, by bisection in log N_d.
pub fn n_d_for_conductance(
    coeffs: &FitCoefficients,
    params: &PhysicalParams,
    g: f64,
    bounds: [f64; 2],
    v_read: f64,
) -> Result<f64> {
    let gc = |n: f64| read_conductance(coeffs, params, n, v_read);
    let (mut lo, mut hi) = (bounds[0].ln(), bounds[1].ln());
    let (g_lo, g_hi) = (gc(bounds[0])?, gc(bounds[1])?);
    if !(g >= g_lo && g <= g_hi) {
        return Err(Error::invalid(format!("conductance {g:e} S outside the reachable [{g_lo:e}, {g_hi:e}] S")));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if gc(mid.exp())? < g {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-14 {
            break;
        }
    }
    Ok((0.5 * (lo + hi)).exp())
}

/// Conductance trajectories of a SET run across the window and the RESET run
/// that starts where SET ended, for the same number of pulses.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchCurves {
    pub set: Vec<f64>,
    pub reset: Vec<f64>,
    pub window: [f64; 2],
}

impl MatchCurves {
    /// Largest |G_set[k] - G_reset[K-k]| over the window width.
    pub fn max_gap(&self) -> f64 {
        gaps(&self.set, &self.reset, self.window).fold(0.0, f64::max)
    }

    /// Root-mean-square gap over the window width.
    pub fn score(&self) -> f64 {
        trajectory_mismatch(&self.set, &self.reset, self.window)
    }
}

fn gaps<'a>(set: &'a [f64], reset: &'a [f64], window: [f64; 2]) -> impl Iterator<Item = f64> + 'a {
    let w = window[1] - window[0];
    set.iter().zip(reset.iter().rev()).map(move |(a, b)| (a - b).abs() / w)
}

/// RMS distance between a SET trajectory and a RESET trajectory read in
/// reverse pulse order, in units of the window width.
pub fn trajectory_mismatch(set: &[f64], reset: &[f64], window: [f64; 2]) -> f64 {
    let n = set.len().min(reset.len()).max(1);
    (gaps(set, reset, window).map(|g| g * g).sum::<f64>() / n as f64).sqrt()
}

/// Noise-free device used for pulse-scheme design.
pub fn design_device(params: &PhysicalParams, n_d: f64, window: [f64; 2]) -> DeviceState {
    DeviceState::nominal(params, n_d, window[0], window[1])
}

/// Runs SET pulses from the lower window edge until the upper edge is
/// crossed, then the same number of RESET pulses back.
pub fn match_curves(
    coeffs: &FitCoefficients,
    params: &PhysicalParams,
    set_pulse: &PulseSpec,
    reset_pulse: &PulseSpec,
    window: [f64; 2],
    v_read: f64,
    max_pulses: usize,
) -> Result<MatchCurves> {
    if Polarity::of(set_pulse.amplitude) != Some(Polarity::Set) || Polarity::of(reset_pulse.amplitude) != Some(Polarity::Reset) {
        return Err(Error::invalid("SET pulse must be negative and RESET pulse positive"));
    }
    let n0 = n_d_for_conductance(coeffs, params, window[0], [params.n_d_min, params.n_d_max], v_read)?;
    let mut st = design_device(params, n0, window);
    let mut set = vec![window[0]];
    while *set.last().unwrap() < window[1] {
        if set.len() > max_pulses {
            return Err(Error::Search(format!("SET pulse does not cross the window in {max_pulses} pulses")));
        }
        integrate(coeffs, params, &mut st, set_pulse, None)?;
        set.push(read_conductance(coeffs, params, st.n_d, v_read)?);
    }
    let mut reset = vec![*set.last().unwrap()];
    for _ in 1..set.len() {
        integrate(coeffs, params, &mut st, reset_pulse, None)?;
        reset.push(read_conductance(coeffs, params, st.n_d, v_read)?);
    }
    Ok(MatchCurves { set, reset, window })
}

/// Golden-section search for the RESET amplitude (duration fixed by
/// `reset_template`) that best retraces the SET trajectory.
pub fn match_set_reset(
    coeffs: &FitCoefficients,
    params: &PhysicalParams,
    set_pulse: &PulseSpec,
    reset_template: &PulseSpec,
    reset_range: [f64; 2],
    window: [f64; 2],
    v_read: f64,
) -> Result<(PulseSpec, f64)> {
    let [a, b] = reset_range;
    if !(a > 0.0 && b > a && b.is_finite()) {
        return Err(Error::Search(format!("RESET search range [{a}, {b}] must be positive and increasing")));
    }
    let max_pulses = 10_000;
    let score = |amp: f64| -> f64 {
        let rp = PulseSpec { amplitude: amp, ..*reset_template };
        match match_curves(coeffs, params, set_pulse, &rp, window, v_read, max_pulses) {
            Ok(c) => c.score(),
            Err(_) => f64::INFINITY,
        }
    };
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    let (mut lo, mut hi) = (a, b);
    let mut x1 = hi - phi * (hi - lo);
    let mut x2 = lo + phi * (hi - lo);
    let (mut f1, mut f2) = (score(x1), score(x2));
    while hi - lo > 1e-6 * b {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - phi * (hi - lo);
            f1 = score(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + phi * (hi - lo);
            f2 = score(x2);
        }
    }
    let candidates = [(a, score(a)), (b, score(b)), (x1, f1), (x2, f2)];
    let (amp, s) = candidates.into_iter().fold((f64::NAN, f64::INFINITY), |acc, c| if c.1 < acc.1 { c } else { acc });
    if !s.is_finite() {
        return Err(Error::Search("no RESET amplitude in range produced a valid trajectory".into()));
    }
    Ok((PulseSpec { amplitude: amp, ..*reset_template }, s))
}

/// Runs [`match_set_reset`] for every RESET duration and keeps the pair
/// with the smallest max gap.
pub fn match_over_durations(
    coeffs: &FitCoefficients,
    params: &PhysicalParams,
    set_pulse: &PulseSpec,
    reset_durations: &[f64],
    reset_range: [f64; 2],
    window: [f64; 2],
    v_read: f64,
) -> Result<(PulseSpec, MatchCurves)> {
    let mut best: Option<(PulseSpec, MatchCurves)> = None;
    for &d in reset_durations {
        let template = PulseSpec { amplitude: 1.0, duration: d, max_substep: d, ..*set_pulse };
        let Ok((rp, _)) = match_set_reset(coeffs, params, set_pulse, &template, reset_range, window, v_read) else {
            continue;
        };
        let curves = match_curves(coeffs, params, set_pulse, &rp, window, v_read, 10_000)?;
        if best.as_ref().is_none_or(|b| curves.max_gap() < b.1.max_gap()) {
            best = Some((rp, curves));
        }
    }
    best.ok_or_else(|| Error::Search("no RESET duration produced a valid match".into()))
}
