use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::PhysicalParams;

/// Mutable state of one device together with its own realisation of the
/// noisy parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeviceState {
    /// Disc vacancy concentration (1/m³).
    pub n_d: f64,
    pub r_d: f64,
    pub l_d: f64,
    pub n_d_min: f64,
    pub n_d_max: f64,
    /// Control-circuit conductance window (S).
    pub g_min: f64,
    pub g_max: f64,
    pub rng_stream_id: u64,
}

impl DeviceState {
    /// A noise-free device at concentration `n_d`.
    pub fn nominal(params: &PhysicalParams, n_d: f64, g_min: f64, g_max: f64) -> Self {
        DeviceState {
            n_d,
            r_d: params.r_d,
            l_d: params.l_d,
            n_d_min: params.n_d_min,
            n_d_max: params.n_d_max,
            g_min,
            g_max,
            rng_stream_id: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("r_d", self.r_d),
            ("l_d", self.l_d),
            ("N_d_min", self.n_d_min),
            ("N_d_max", self.n_d_max),
            ("G_min", self.g_min),
            ("G_max", self.g_max),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(format!("device {name} must be finite and > 0, got {v}")));
            }
        }
        if self.n_d_min >= self.n_d_max {
            return Err(Error::invalid("device N_d_min must be below N_d_max"));
        }
        if self.g_min >= self.g_max {
            return Err(Error::invalid("device G_min must be below G_max"));
        }
        if !(self.n_d >= self.n_d_min && self.n_d <= self.n_d_max) {
            return Err(Error::invalid(format!(
                "N_d = {:e} outside [{:e}, {:e}]",
                self.n_d, self.n_d_min, self.n_d_max
            )));
        }
        Ok(())
    }
}
