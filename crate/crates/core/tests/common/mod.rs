//! Checks shared by the property suite and the acceptance target. Each one
//! returns a short summary on success and a description of the first
//! counterexample on failure.
#![allow(dead_code)]

use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::Array2;
use rand::RngExt;
use vcm_sim::constants::ELEMENTARY_CHARGE;
use vcm_sim::crossbar::{CrossbarTile, DeviceModel, PulseScheme};
use vcm_sim::dynamics::{apply_pulse, hopping_barriers, integrate, ionic_current, rate, PulseSpec};
use vcm_sim::fit::voltage_partition_from_surrogate;
use vcm_sim::physics::solve_full_model;
use vcm_sim::stochastic::{aux_stream, realize_device, sample_d2d, NoiseSpec, ParamNoise};
use vcm_sim::trainer::{Backend, Layer, Network, TrainConfig};
use vcm_sim::{DeviceState, FitCoefficients, PhysicalParams, Polarity};

pub type Check = Result<String, String>;

pub fn params() -> PhysicalParams {
    PhysicalParams::bundled()
}

pub fn coeffs() -> FitCoefficients {
    FitCoefficients::bundled()
}

pub fn model(noise: NoiseSpec) -> Arc<DeviceModel> {
    Arc::new(DeviceModel::new(params(), coeffs(), noise, PulseScheme::bundled()).unwrap())
}

/// Geometric interpolation inside the nominal N_d range, `u` in [0, 1].
pub fn n_d_at(p: &PhysicalParams, u: f64) -> f64 {
    p.n_d_min * (p.n_d_max / p.n_d_min).powf(u)
}

pub fn nominal_state(p: &PhysicalParams, n_d: f64) -> DeviceState {
    let w = PulseScheme::bundled().window;
    DeviceState::nominal(p, n_d, w[0], w[1])
}

/// V_M - (V_s + V_p + V_d + V_Sch) for the full model and the surrogate.
pub fn partition_closure(cases: &[(f64, f64)]) -> Check {
    let (p, c) = (params(), coeffs());
    let mut worst: f64 = 0.0;
    for &(v_m, u) in cases {
        let st = nominal_state(&p, n_d_at(&p, u));
        let full = solve_full_model(&p, &st, v_m).map_err(|e| format!("full model at V={v_m}, u={u}: {e}"))?;
        let sur = voltage_partition_from_surrogate(&c, &p, &st, v_m).map_err(|e| format!("surrogate at V={v_m}, u={u}: {e}"))?;
        for vp in [full, sur] {
            worst = worst.max(vp.closure_residual());
        }
    }
    if worst <= 1e-9 {
        Ok(format!("max residual {worst:.2e} V over {} points", cases.len()))
    } else {
        Err(format!("closure residual {worst:e} V > 1e-9"))
    }
}

pub fn temperature_above_ambient(cases: &[(f64, f64, f64)]) -> Check {
    let (p, c) = (params(), coeffs());
    for &(v_m, u, r_scale) in cases {
        let mut st = nominal_state(&p, n_d_at(&p, u));
        st.r_d = p.r_d * r_scale;
        let vp = match voltage_partition_from_surrogate(&c, &p, &st, v_m) {
            Ok(vp) => vp,
            Err(e) => return Err(format!("V={v_m}, u={u}, r={r_scale}: {e}")),
        };
        if !(vp.t >= p.t_0) {
            return Err(format!("T = {} K < T_0 at V={v_m}, u={u}, r={r_scale}", vp.t));
        }
    }
    Ok(format!("{} operating points", cases.len()))
}

/// V_d / l_d against I_M / (Z e N_d mu_n pi r_d^2) on SET operating points.
pub fn field_identity(cases: &[(f64, f64, f64, f64)]) -> Check {
    let (p, c) = (params(), coeffs());
    let mut worst: f64 = 0.0;
    for &(v_m, u, r_scale, l_scale) in cases {
        let mut st = nominal_state(&p, n_d_at(&p, u));
        st.r_d = p.r_d * r_scale;
        st.l_d = p.l_d * l_scale;
        let (_, vp, _) = rate(&c, &p, &st, -v_m.abs()).map_err(|e| e.to_string())?;
        let lhs = vp.v_d / st.l_d;
        let rhs = vp.i_m / (p.z_vo * ELEMENTARY_CHARGE * st.n_d * p.mu_n * PI * st.r_d * st.r_d);
        worst = worst.max(((lhs - rhs) / rhs).abs());
    }
    if worst <= 1e-12 {
        Ok(format!("max relative gap {worst:.2e}"))
    } else {
        Err(format!("relative gap {worst:e} > 1e-12"))
    }
}

pub fn zero_field_symmetry() -> Check {
    let p = params();
    let (af, ar, gamma) = hopping_barriers(&p, 0.0).map_err(|e| e.to_string())?;
    let w = p.dw_a / ELEMENTARY_CHARGE;
    if af != w || ar != w || gamma != 0.0 {
        return Err(format!("E=0 gives dW_Af={af}, dW_Ar={ar}, gamma={gamma}; expected {w}, {w}, 0"));
    }
    let st = nominal_state(&p, n_d_at(&p, 0.5));
    for pol in [Polarity::Set, Polarity::Reset] {
        let im = ionic_current(&p, &st, pol, 0.0, 1200.0).map_err(|e| e.to_string())?;
        if im.i_ion != 0.0 {
            return Err(format!("I_ion = {} at zero field", im.i_ion));
        }
    }
    let (dndt, _, _) = rate(&coeffs(), &p, &st, 0.0).map_err(|e| e.to_string())?;
    if dndt != 0.0 {
        return Err(format!("dN_d/dt = {dndt} at V_M = 0"));
    }
    Ok("barriers equal, I_ion = 0, dN_d/dt = 0".into())
}

/// Independent transcription of the field-lowered barriers.
pub fn barrier_oracle(p: &PhysicalParams, e_ion: f64) -> (f64, f64) {
    let g = ELEMENTARY_CHARGE * p.z_vo * p.alpha_hop * e_ion / (PI * p.dw_a);
    let base = p.dw_a * ((1.0 - g * g).sqrt() + g * g.asin());
    let tilt = p.z_vo * ELEMENTARY_CHARGE * p.alpha_hop * e_ion / 2.0;
    ((base - tilt) / ELEMENTARY_CHARGE, (base + tilt) / ELEMENTARY_CHARGE)
}

/// Final N_d for pulses integrated with substep h, h/2 and h/4: the
/// successive differences must shrink by about two.
pub fn step_halving() -> Check {
    let (p, c) = (params(), coeffs());
    let scheme = PulseScheme::bundled();
    let mut ratios = Vec::new();
    for pulse in [scheme.set, scheme.reset] {
        let start = n_d_at(&p, 0.5);
        let run = |h: f64| -> Result<f64, String> {
            let mut st = nominal_state(&p, start);
            let spec = PulseSpec { max_substep: h, max_dnd_fraction: 1.0, ..pulse };
            for _ in 0..4 {
                integrate(&c, &p, &mut st, &spec, None).map_err(|e| e.to_string())?;
            }
            Ok(st.n_d)
        };
        let h = pulse.duration / 8.0;
        let (a, b, d) = (run(h)?, run(h / 2.0)?, run(h / 4.0)?);
        let ratio = (a - b).abs() / (b - d).abs();
        if !(1.6..=2.5).contains(&ratio) {
            return Err(format!("{:?} pulse: error ratio {ratio:.3} outside [1.6, 2.5]", Polarity::of(pulse.amplitude)));
        }
        ratios.push(ratio);
    }
    Ok(format!("error ratios SET {:.3}, RESET {:.3}", ratios[0], ratios[1]))
}

/// Random pulse sequence on one noisy device; N_d stays within its own bounds.
pub fn pulse_confinement(noise: &NoiseSpec, key: u64, pulses: usize) -> Check {
    let (p, c) = (params(), coeffs());
    let scheme = PulseScheme::bundled();
    let (mut st, mut rng) = realize_device(&p, noise, key, scheme.window, [p.n_d_min, p.n_d_max]).map_err(|e| e.to_string())?;
    let mut pick = aux_stream(key, "pulse polarity");
    for k in 0..pulses {
        let mut pulse = if pick.random::<bool>() { scheme.set } else { scheme.reset };
        pulse.amplitude *= pick.random_range(0.9..1.05);
        pulse.duration *= pick.random_range(0.5..3.0);
        pulse.max_substep = pulse.duration;
        apply_pulse(&c, &p, &mut st, &pulse, noise, &mut rng, None).map_err(|e| format!("pulse {k}: {e}"))?;
        if !(st.n_d >= st.n_d_min && st.n_d <= st.n_d_max) {
            return Err(format!("pulse {k}: N_d = {:e} outside [{:e}, {:e}]", st.n_d, st.n_d_min, st.n_d_max));
        }
    }
    Ok(format!("{pulses} pulses"))
}

/// Random signed updates on a small tile; the audit must stay empty.
pub fn tile_confinement(noise: NoiseSpec, updates: usize) -> Check {
    let m = model(noise);
    let mut init_rng = aux_stream(7, "tile init");
    let w0 = Array2::from_shape_fn((4, 5), |_| init_rng.random_range(-0.9..0.9));
    let mut tile = CrossbarTile::new(m, 3, w0.view(), 1.0).map_err(|e| e.to_string())?;
    let mut rng = aux_stream(7, "tile updates");
    let step = 3.0 * tile.dw_per_pulse();
    let mut applied = 0;
    for k in 0..updates {
        let dw = Array2::from_shape_fn((4, 5), |_| rng.random_range(-step..step));
        applied += tile.pulsed_update(dw.view()).map_err(|e| format!("update {k}: {e}"))?.applied;
        for d in tile.devices() {
            if !(d.n_d >= d.n_d_min && d.n_d <= d.n_d_max) {
                return Err(format!("update {k}: N_d outside its bounds"));
            }
        }
        let v = tile.enforce_conductance_bounds();
        if !v.is_empty() {
            return Err(format!("update {k}: {} devices outside their window, first {:?}", v.len(), v[0]));
        }
    }
    Ok(format!("{updates} updates, {applied} pulses applied"))
}

/// Rebuilding a tile and replaying the same updates gives bit-identical state.
pub fn rng_determinism() -> Check {
    let run = || -> Result<Vec<u64>, String> {
        let noise = NoiseSpec::preset("realistic", None, 11).map_err(|e| e.to_string())?;
        let w0 = Array2::from_shape_fn((6, 7), |(i, j)| 0.1 * (i as f64 - j as f64) / 7.0);
        let mut tile = CrossbarTile::new(model(noise), 1, w0.view(), 1.0).map_err(|e| e.to_string())?;
        let mut rng = aux_stream(11, "updates");
        let step = 2.0 * tile.dw_per_pulse();
        for _ in 0..40 {
            let dw = Array2::from_shape_fn((6, 7), |_| rng.random_range(-step..step));
            tile.pulsed_update(dw.view()).map_err(|e| e.to_string())?;
        }
        Ok(tile.devices().iter().flat_map(|d| [d.n_d.to_bits(), d.r_d.to_bits(), d.l_d.to_bits(), d.n_d_max.to_bits()]).collect())
    };
    let a = run()?;
    let b = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap().install(run)?;
    if a == b {
        Ok(format!("{} state words identical across reruns and thread counts", a.len()))
    } else {
        Err("reruns diverged".into())
    }
}

/// Untruncated mean within 1% and std within 3%; truncated draws stay in bounds.
pub fn d2d_statistics(sigma: f64, n: usize) -> Check {
    let mut rng = aux_stream(3, "d2d statistics");
    let nominal = 5.0e-9;
    let xs: Vec<f64> = (0..n).map(|_| sample_d2d(nominal, sigma, None, &mut rng).unwrap()).collect();
    let mean = xs.iter().sum::<f64>() / n as f64;
    let std = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    let mean_err = (mean - nominal).abs() / nominal;
    let std_err = (std - nominal * sigma).abs() / (nominal * sigma);
    if mean_err > 0.01 || std_err > 0.03 {
        return Err(format!("sigma {sigma}: mean off by {mean_err:.4}, std off by {std_err:.4}"));
    }
    let b = ParamNoise { bounds_rel: Some([0.5, 1.5]), ..ParamNoise::d2d(sigma) }.resolved_bounds(nominal);
    for _ in 0..n / 10 {
        let x = sample_d2d(nominal, sigma, b, &mut rng).map_err(|e| e.to_string())?;
        if !(0.5 * nominal..=1.5 * nominal).contains(&x) {
            return Err(format!("truncated draw {x:e} outside bounds"));
        }
    }
    Ok(format!("sigma {sigma}: mean error {:.2}%, std error {:.2}%", 100.0 * mean_err, 100.0 * std_err))
}

pub fn gradient_check() -> Check {
    let config = TrainConfig { layers: vec![12, 7, 5, 10], w_max: vec![1.0], seed: 9, ..TrainConfig::default() };
    let mut net = Network::new(&config, &Backend::FloatingPoint).map_err(|e| e.to_string())?;
    let mut rng = aux_stream(9, "gradient data");
    let x = Array2::from_shape_fn((5, 12), |_| rng.random_range(0.0..1.0));
    let y = Array2::from_shape_fn((5, 10), |(i, j)| if j == (7 * i) % 10 { 1.0 } else { 0.0 });
    let (_, grads) = net.loss_and_gradients(x.view(), y.view());
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for k in 0..net.layers.len() {
        let (r, c) = grads[k].dim();
        for i in 0..r {
            for j in 0..c {
                let nudge = |net: &mut Network, d: f64| {
                    if let Layer::Dense(w) = &mut net.layers[k] {
                        w[[i, j]] += d;
                    }
                };
                nudge(&mut net, h);
                let lp = net.loss_and_gradients(x.view(), y.view()).0;
                nudge(&mut net, -2.0 * h);
                let lm = net.loss_and_gradients(x.view(), y.view()).0;
                nudge(&mut net, h);
                let fd = (lp - lm) / (2.0 * h);
                worst = worst.max((fd - grads[k][[i, j]]).abs() / grads[k][[i, j]].abs().max(1e-3));
            }
        }
    }
    if worst <= 1e-5 {
        Ok(format!("max scaled gap {worst:.2e} over every weight"))
    } else {
        Err(format!("gradient gap {worst:e} > 1e-5"))
    }
}
