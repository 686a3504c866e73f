//! Device-to-device and cycle-to-cycle parameter noise.

use rand::{Rng, RngExt, SeedableRng};
use rand_distr::{Distribution, Normal};
use rand_pcg::Pcg64Mcg;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::device::DeviceState;
use crate::error::{Error, Result};
use crate::params::PhysicalParams;
use crate::physics::Polarity;

const MAX_REJECTIONS: usize = 100_000;

/// Noise settings for one parameter. Unused fields for a given parameter
/// must stay zero: the concentration bounds walk with `c2c_sigma`, the
/// geometry walks with `c2c_sigma_add`/`c2c_sigma_mult`, and the
/// conductance bounds only carry device-to-device spread.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParamNoise {
    pub d2d_sigma: f64,
    pub c2c_sigma: f64,
    pub c2c_sigma_add: f64,
    pub c2c_sigma_mult: f64,
    /// Absolute truncation interval.
    pub bounds: Option<[f64; 2]>,
    /// Truncation interval as multiples of the nominal value.
    pub bounds_rel: Option<[f64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub enabled: Option<bool>,
}

impl ParamNoise {
    pub fn d2d(sigma: f64) -> Self {
        ParamNoise { d2d_sigma: sigma, ..Default::default() }
    }

    pub fn is_enabled(&self) -> bool {
        self.enabled.unwrap_or(true)
    }

    fn active(&self, sigma: f64) -> f64 {
        if self.is_enabled() {
            sigma
        } else {
            0.0
        }
    }

    /// Resolved absolute truncation interval around `nominal`.
    pub fn resolved_bounds(&self, nominal: f64) -> Option<[f64; 2]> {
        match (self.bounds, self.bounds_rel) {
            (Some(b), _) => Some(b),
            (None, Some(r)) => Some([r[0] * nominal, r[1] * nominal]),
            (None, None) => None,
        }
    }

    fn validate(&self, name: &str) -> Result<()> {
        for s in [self.d2d_sigma, self.c2c_sigma, self.c2c_sigma_add, self.c2c_sigma_mult] {
            if !(s.is_finite() && s >= 0.0) {
                return Err(Error::Config(format!("{name}: noise sigmas must be finite and >= 0")));
            }
        }
        if self.c2c_sigma >= 1.0 || self.c2c_sigma_add + self.c2c_sigma_mult >= 1.0 {
            return Err(Error::Config(format!("{name}: cycle-to-cycle sigmas must stay below 1")));
        }
        for b in [self.bounds, self.bounds_rel].into_iter().flatten() {
            if !(b[0].is_finite() && b[1].is_finite() && b[0] < b[1]) {
                return Err(Error::Config(format!("{name}: truncation bounds need lo < hi")));
            }
        }
        if self.bounds.is_some() && self.bounds_rel.is_some() {
            return Err(Error::Config(format!("{name}: give either bounds or bounds_rel, not both")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSpec {
    pub seed: u64,
    pub n_d_max: ParamNoise,
    pub n_d_min: ParamNoise,
    pub r_d: ParamNoise,
    pub l_d: ParamNoise,
    pub g_max: ParamNoise,
    pub g_min: ParamNoise,
}

/// Named noise configurations used by the training experiments.
pub const PRESETS: [&str; 12] = [
    "none",
    "realistic",
    "d2d-nd",
    "d2d-ndmax",
    "d2d-ndmin",
    "d2d-ld",
    "d2d-rd",
    "d2d-rd-realistic",
    "c2c-nd",
    "c2c-ld",
    "c2c-rd",
    "c2c-rd-mult",
];

/// Device-to-device r_d spread of the realistic configuration.
pub const REALISTIC_RD_SIGMA: f64 = 0.1;

impl NoiseSpec {
    pub fn none() -> Self {
        NoiseSpec::default()
    }

    pub fn validate(&self) -> Result<()> {
        self.n_d_max.validate("n_d_max")?;
        self.n_d_min.validate("n_d_min")?;
        self.r_d.validate("r_d")?;
        self.l_d.validate("l_d")?;
        self.g_max.validate("g_max")?;
        self.g_min.validate("g_min")?;
        for (name, p) in [("n_d_max", &self.n_d_max), ("n_d_min", &self.n_d_min)] {
            if p.c2c_sigma_add != 0.0 || p.c2c_sigma_mult != 0.0 {
                return Err(Error::Config(format!("{name}: walks with c2c_sigma only")));
            }
        }
        for (name, p) in [("r_d", &self.r_d), ("l_d", &self.l_d)] {
            if p.c2c_sigma != 0.0 {
                return Err(Error::Config(format!("{name}: walks with c2c_sigma_add / c2c_sigma_mult")));
            }
        }
        for (name, p) in [("g_max", &self.g_max), ("g_min", &self.g_min)] {
            if p.c2c_sigma != 0.0 || p.c2c_sigma_add != 0.0 || p.c2c_sigma_mult != 0.0 {
                return Err(Error::Config(format!("{name}: conductance bounds carry device-to-device noise only")));
            }
        }
        Ok(())
    }

    /// True when any cycle-to-cycle walk is active.
    pub fn has_c2c(&self) -> bool {
        self.n_d_max.active(self.n_d_max.c2c_sigma) > 0.0
            || self.n_d_min.active(self.n_d_min.c2c_sigma) > 0.0
            || [&self.r_d, &self.l_d].iter().any(|p| p.active(p.c2c_sigma_add) + p.active(p.c2c_sigma_mult) > 0.0)
    }

    /// Builds a named configuration. `sigma` overrides the scale of the
    /// single-source ablations (default 0.3); it is ignored by `none`,
    /// `realistic` and `d2d-rd-realistic`.
    pub fn preset(name: &str, sigma: Option<f64>, seed: u64) -> Result<Self> {
        let s = sigma.unwrap_or(0.3);
        let trunc = Some([0.5, 1.5]);
        let d2d = |sig: f64| ParamNoise { d2d_sigma: sig, bounds_rel: trunc, ..Default::default() };
        let mut n = NoiseSpec { seed, ..Default::default() };
        match name {
            "none" => {}
            "realistic" => {
                n.n_d_max = ParamNoise { d2d_sigma: 0.1, c2c_sigma: 0.01, bounds_rel: trunc, ..Default::default() };
                n.n_d_min = ParamNoise { d2d_sigma: 0.1, c2c_sigma: 0.01, bounds_rel: trunc, ..Default::default() };
                n.r_d = ParamNoise {
                    d2d_sigma: REALISTIC_RD_SIGMA,
                    c2c_sigma_add: 0.002,
                    c2c_sigma_mult: 0.01,
                    bounds_rel: trunc,
                    ..Default::default()
                };
                n.l_d = ParamNoise {
                    d2d_sigma: 0.1,
                    c2c_sigma_add: 0.002,
                    c2c_sigma_mult: 0.01,
                    bounds_rel: trunc,
                    ..Default::default()
                };
                n.g_max = d2d(0.05);
                n.g_min = d2d(0.05);
            }
            "d2d-nd" => {
                n.n_d_max = d2d(s);
                n.n_d_min = d2d(s);
            }
            "d2d-ndmax" => n.n_d_max = d2d(s),
            "d2d-ndmin" => n.n_d_min = d2d(s),
            "d2d-ld" => n.l_d = d2d(s),
            "d2d-rd" => n.r_d = d2d(s),
            "d2d-rd-realistic" => n.r_d = d2d(REALISTIC_RD_SIGMA),
            "c2c-nd" => {
                n.n_d_max = ParamNoise { c2c_sigma: s, bounds_rel: trunc, ..Default::default() };
                n.n_d_min = ParamNoise { c2c_sigma: s, bounds_rel: trunc, ..Default::default() };
            }
            "c2c-ld" => n.l_d = ParamNoise { c2c_sigma_add: s, bounds_rel: trunc, ..Default::default() },
            "c2c-rd" => n.r_d = ParamNoise { c2c_sigma_add: s, bounds_rel: trunc, ..Default::default() },
            "c2c-rd-mult" => n.r_d = ParamNoise { c2c_sigma_mult: s, bounds_rel: trunc, ..Default::default() },
            other => {
                return Err(Error::Config(format!("unknown noise selector `{other}` (expected one of {})", PRESETS.join(", "))))
            }
        }
        n.validate()?;
        Ok(n)
    }
}

/// Draws `Normal(nominal, nominal * sigma)` and rejects draws outside
/// `bounds` or not strictly positive.
pub fn sample_d2d<R: Rng + ?Sized>(nominal: f64, sigma: f64, bounds: Option<[f64; 2]>, rng: &mut R) -> Result<f64> {
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(Error::invalid(format!("sigma must be >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(nominal);
    }
    let std = nominal.abs() * sigma;
    let [lo, hi] = bounds.unwrap_or([f64::NEG_INFINITY, f64::INFINITY]);
    if nominal < lo - 6.0 * std || nominal > hi + 6.0 * std || hi <= 0.0 {
        return Err(Error::invalid(format!(
            "truncation [{lo:e}, {hi:e}] lies more than 6 sigma from the mean {nominal:e}"
        )));
    }
    let dist = Normal::new(nominal, std).map_err(|e| Error::invalid(e.to_string()))?;
    for _ in 0..MAX_REJECTIONS {
        let x = dist.sample(rng);
        if x > 0.0 && x >= lo && x <= hi {
            return Ok(x);
        }
    }
    Err(Error::invalid("device-to-device sampler exhausted its rejection budget"))
}

fn clamp_opt(x: f64, bounds: Option<[f64; 2]>) -> f64 {
    match bounds {
        Some([lo, hi]) => x.clamp(lo, hi),
        None => x,
    }
}

/// One random-walk step for a concentration bound.
pub fn c2c_walk_bounds<R: Rng + ?Sized>(x: f64, sigma: f64, bounds: Option<[f64; 2]>, rng: &mut R) -> f64 {
    if sigma == 0.0 {
        return clamp_opt(x, bounds);
    }
    let omega: f64 = rng.random_range(-1.0..=1.0);
    clamp_opt(x + omega * x * sigma, bounds)
}

/// Fraction of the available range that a pulse actually moved N_d.
pub fn update_fraction(n_old: f64, n_new: f64, n_min: f64, n_max: f64, polarity: Polarity) -> f64 {
    let (num, den) = match polarity {
        Polarity::Set => (n_new - n_old, n_max - n_old),
        Polarity::Reset => (n_old - n_new, n_old - n_min),
    };
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// One random-walk step for a geometry parameter, with an additive part and
/// a part scaled by the update that just happened.
#[allow(clippy::too_many_arguments)]
pub fn c2c_walk_geometry<R: Rng + ?Sized>(
    x: f64,
    sigma_add: f64,
    sigma_mult: f64,
    n_old: f64,
    n_new: f64,
    n_min: f64,
    n_max: f64,
    polarity: Polarity,
    bounds: Option<[f64; 2]>,
    rng: &mut R,
) -> f64 {
    if sigma_add == 0.0 && sigma_mult == 0.0 {
        return clamp_opt(x, bounds);
    }
    let u = update_fraction(n_old, n_new, n_min, n_max, polarity);
    let o1: f64 = rng.random_range(-1.0..=1.0);
    let o2: f64 = rng.random_range(-1.0..=1.0);
    clamp_opt(x * (1.0 + o1 * sigma_add + o2 * sigma_mult * u), bounds)
}

/// Private stream for one device, derived from the master seed and a
/// device key that is unique across tiles.
pub fn device_stream(master_seed: u64, device_key: u64) -> Pcg64Mcg {
    let mut h = Sha256::new();
    h.update(b"vcm-sim device stream");
    h.update(master_seed.to_le_bytes());
    h.update(device_key.to_le_bytes());
    let d = h.finalize();
    Pcg64Mcg::new(u128::from_le_bytes(d[..16].try_into().unwrap()))
}

/// Seeds a generator for non-device randomness (data order, initial weights).
pub fn aux_stream(master_seed: u64, label: &str) -> Pcg64Mcg {
    let mut h = Sha256::new();
    h.update(b"vcm-sim aux stream");
    h.update(master_seed.to_le_bytes());
    h.update(label.as_bytes());
    let d = h.finalize();
    Pcg64Mcg::from_seed(d[..16].try_into().unwrap())
}

/// Samples one device. `n_d_range` is the interval the initial N_d is drawn
/// from (uniformly); the draw is clamped into the device's own bounds.
pub fn realize_device(
    params: &PhysicalParams,
    noise: &NoiseSpec,
    device_key: u64,
    g_nominal: [f64; 2],
    n_d_range: [f64; 2],
) -> Result<(DeviceState, Pcg64Mcg)> {
    let mut rng = device_stream(noise.seed, device_key);
    let draw = |p: &ParamNoise, nominal: f64, rng: &mut Pcg64Mcg| {
        sample_d2d(nominal, p.active(p.d2d_sigma), p.resolved_bounds(nominal), rng)
    };
    let mut attempts = 0;
    let (n_d_max, n_d_min) = loop {
        let hi = draw(&noise.n_d_max, params.n_d_max, &mut rng)?;
        let lo = draw(&noise.n_d_min, params.n_d_min, &mut rng)?;
        if lo < hi {
            break (hi, lo);
        }
        attempts += 1;
        if attempts > 1000 {
            return Err(Error::Config("N_d bound noise never produced N_d_min < N_d_max".into()));
        }
    };
    let r_d = draw(&noise.r_d, params.r_d, &mut rng)?;
    let l_d = draw(&noise.l_d, params.l_d, &mut rng)?;
    attempts = 0;
    let (g_max, g_min) = loop {
        let hi = draw(&noise.g_max, g_nominal[1], &mut rng)?;
        let lo = draw(&noise.g_min, g_nominal[0], &mut rng)?;
        if lo < hi {
            break (hi, lo);
        }
        attempts += 1;
        if attempts > 1000 {
            return Err(Error::Config("conductance bound noise never produced G_min < G_max".into()));
        }
    };
    let u: f64 = rng.random();
    let n_d = (n_d_range[0] + u * (n_d_range[1] - n_d_range[0])).clamp(n_d_min, n_d_max);
    let state = DeviceState { n_d, r_d, l_d, n_d_min, n_d_max, g_min, g_max, rng_stream_id: device_key };
    Ok((state, rng))
}
