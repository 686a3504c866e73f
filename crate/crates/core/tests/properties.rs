mod common;

use approx::assert_relative_eq;
use ndarray::Array2;
use proptest::prelude::*;
use vcm_sim::crossbar::{CrossbarTile, PulseScheme};
use vcm_sim::dynamics::{f_limit, hopping_barriers, integrate, read_conductance};
use vcm_sim::stochastic::{c2c_walk_bounds, c2c_walk_geometry, device_stream, realize_device, sample_d2d, NoiseSpec};
use vcm_sim::Polarity;

use common::*;

fn pass(c: Check) {
    if let Err(e) = c {
        panic!("{e}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, ..ProptestConfig::default() })]

    #[test]
    fn partition_closes(v in prop_oneof![-1.1..-0.05f64, 0.05..1.0f64], u in 0.0..1.0f64) {
        pass(partition_closure(&[(v, u)]));
    }

    #[test]
    fn temperature_never_below_ambient(v in prop_oneof![-1.0..-0.05f64, 0.05..0.9f64], u in 0.0..1.0f64, r in 0.6..1.5f64) {
        pass(temperature_above_ambient(&[(v, u, r)]));
    }

    #[test]
    fn set_field_identity(v in 0.05..1.0f64, u in 0.0..1.0f64, r in 0.6..1.5f64, l in 0.6..1.5f64) {
        pass(field_identity(&[(v, u, r, l)]));
    }

    #[test]
    fn barriers_match_oracle(e in -3.0e8..3.0e8f64) {
        let p = params();
        let (af, ar, _) = hopping_barriers(&p, e).unwrap();
        let (oa, or) = barrier_oracle(&p, e);
        assert_relative_eq!(af, oa, max_relative = 1e-12);
        assert_relative_eq!(ar, or, max_relative = 1e-12);
        prop_assert!(af >= 0.0 && ar >= 0.0);
    }

    #[test]
    fn f_limit_in_unit_interval(u in 0.0..=1.0f64) {
        let p = params();
        let st = nominal_state(&p, n_d_at(&p, u));
        for pol in [Polarity::Set, Polarity::Reset] {
            let f = f_limit(&st, pol);
            prop_assert!((0.0..=1.0).contains(&f));
        }
    }

    #[test]
    fn polarity_monotonicity(u in 0.05..0.95f64, set in any::<bool>()) {
        let (p, c) = (params(), coeffs());
        let scheme = PulseScheme::bundled();
        let pulse = if set { scheme.set } else { scheme.reset };
        let mut st = nominal_state(&p, n_d_at(&p, u));
        let before = st.n_d;
        integrate(&c, &p, &mut st, &pulse, None).unwrap();
        if set { prop_assert!(st.n_d >= before) } else { prop_assert!(st.n_d <= before) }
    }

    #[test]
    fn d2d_zero_sigma_is_nominal(x in 1e-10..1e30f64, seed in any::<u64>()) {
        let mut rng = device_stream(seed, 0);
        prop_assert_eq!(sample_d2d(x, 0.0, None, &mut rng).unwrap(), x);
    }

    #[test]
    fn bound_walk_step_is_limited(x in 1e20..1e28f64, s in 0.0..0.5f64, seed in any::<u64>()) {
        let mut rng = device_stream(seed, 1);
        let y = c2c_walk_bounds(x, s, None, &mut rng);
        prop_assert!((y - x).abs() <= x * s * (1.0 + 1e-15));
        let b = Some([0.9 * x, 1.1 * x]);
        let z = c2c_walk_bounds(x, s, b, &mut rng);
        prop_assert!(z >= 0.9 * x && z <= 1.1 * x);
    }

    #[test]
    fn geometry_walk_without_update_is_additive_only(x in 1e-9..1e-8f64, sa in 0.0..0.3f64, sm in 0.0..0.3f64, seed in any::<u64>()) {
        let mut rng = device_stream(seed, 2);
        let y = c2c_walk_geometry(x, sa, sm, 5e26, 5e26, 1e26, 1e27, Polarity::Set, None, &mut rng);
        prop_assert!((y / x - 1.0).abs() <= sa * (1.0 + 1e-12));
        let z = c2c_walk_geometry(x, 0.0, sm, 1e26, 1e27, 1e26, 1e27, Polarity::Set, None, &mut rng);
        prop_assert!((z / x - 1.0).abs() <= sm * (1.0 + 1e-12));
    }

    #[test]
    fn realize_device_is_deterministic(seed in any::<u64>(), key in any::<u64>()) {
        let p = params();
        let noise = NoiseSpec::preset("realistic", None, seed).unwrap();
        let w = PulseScheme::bundled().window;
        let (a, ra) = realize_device(&p, &noise, key, w, [p.n_d_min, p.n_d_max]).unwrap();
        let (b, rb) = realize_device(&p, &noise, key, w, [p.n_d_min, p.n_d_max]).unwrap();
        prop_assert_eq!(a, b);
        prop_assert_eq!(ra, rb);
    }

    #[test]
    fn zero_update_is_identity(seed in any::<u64>(), preset in prop::sample::select(vec!["none", "realistic", "c2c-rd"])) {
        let noise = NoiseSpec::preset(preset, None, seed).unwrap();
        let w0 = Array2::from_shape_fn((3, 4), |(i, j)| 0.2 * i as f64 - 0.1 * j as f64);
        let mut tile = CrossbarTile::new(model(noise), 0, w0.view(), 1.0).unwrap();
        let before = tile.checkpoint();
        let stats = tile.pulsed_update(Array2::zeros((3, 4)).view()).unwrap();
        prop_assert_eq!(stats.applied + stats.skipped, 0);
        prop_assert_eq!(tile.checkpoint(), before);
    }
}

#[test]
fn zero_field_is_symmetric() {
    pass(zero_field_symmetry());
}

#[test]
fn euler_converges_at_first_order() {
    pass(step_halving());
}

#[test]
fn noisy_device_stays_in_bounds_over_random_pulses() {
    for preset in ["realistic", "c2c-nd", "c2c-rd"] {
        let noise = NoiseSpec::preset(preset, None, 5).unwrap();
        pass(pulse_confinement(&noise, 17, 10_000));
    }
}

#[test]
fn tile_audit_stays_empty_over_random_updates() {
    pass(tile_confinement(NoiseSpec::preset("realistic", None, 2).unwrap(), 10_000));
}

#[test]
fn reruns_are_bit_identical() {
    pass(rng_determinism());
}

#[test]
fn d2d_sampler_statistics() {
    for sigma in [0.05, 0.1, 0.3] {
        pass(d2d_statistics(sigma, 100_000));
    }
}

#[test]
fn network_gradients_match_finite_differences() {
    pass(gradient_check());
}

#[test]
fn different_devices_are_uncorrelated() {
    let p = params();
    let noise = NoiseSpec::preset("d2d-rd", None, 4).unwrap();
    let w = PulseScheme::bundled().window;
    let xs: Vec<f64> = (0..4001).map(|k| realize_device(&p, &noise, k, w, [p.n_d_min, p.n_d_max]).unwrap().0.r_d).collect();
    let (a, b) = (&xs[..4000], &xs[1..]);
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (ma, mb) = (mean(a), mean(b));
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    let rho = cov / (va * vb).sqrt();
    // 4 standard errors of a null correlation.
    assert!(rho.abs() < 4.0 / (4000f64).sqrt(), "lag-1 correlation {rho}");
}

#[test]
fn stochastic_rounding_is_unbiased() {
    let w0 = Array2::zeros((40, 40));
    let tile = CrossbarTile::new(model(NoiseSpec::none()), 0, w0.view(), 1.0).unwrap();
    let dw_pp = tile.dw_per_pulse();
    for n_star in [0.3, 1.0, 2.7] {
        let mut t = tile.clone();
        let stats = t.pulsed_update(Array2::from_elem((40, 40), n_star * dw_pp).view()).unwrap();
        let n = 1600.0;
        let frac: f64 = n_star - f64::floor(n_star);
        let sd = (n * frac * (1.0 - frac)).sqrt().max(1.0);
        let got = (stats.applied + stats.skipped) as f64;
        assert!((got - n * n_star).abs() <= 4.0 * sd, "n* = {n_star}: {got} pulses for {} expected", n * n_star);
    }
}

#[test]
fn mean_update_is_linear_in_request() {
    let w0 = Array2::zeros((200, 200));
    let tile = CrossbarTile::new(model(NoiseSpec::none()), 0, w0.view(), 1.0).unwrap();
    let dw_pp = tile.dw_per_pulse();
    for k in [0.25, 0.5, 1.0, 2.0, -0.25, -0.5, -1.0, -2.0] {
        let dw = k * dw_pp;
        let mut t = tile.clone();
        let before = t.read_weights().unwrap();
        t.pulsed_update(Array2::from_elem((200, 200), dw).view()).unwrap();
        let mean = (t.read_weights().unwrap() - before).mean().unwrap();
        let ratio = mean / dw;
        assert!((0.9..=1.1).contains(&ratio), "requested {dw:e}, realized mean {mean:e} (ratio {ratio:.3})");
    }
}

#[test]
fn read_conductance_is_monotone_in_n_d() {
    let (p, c) = (params(), coeffs());
    let mut last = 0.0;
    for k in 0..=200 {
        let g = read_conductance(&c, &p, n_d_at(&p, k as f64 / 200.0), -0.2).unwrap();
        assert!(g > last);
        last = g;
    }
}
