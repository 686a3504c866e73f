//! Physical constants and geometry of a JART-type VCM cell.
//!
//! Values are SI. The three energies (`phi_Bn0`, `phi_n`, `dW_A`) are written
//! in eV in parameter files and held in joules here.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::constants::ELEMENTARY_CHARGE;
use crate::error::{Error, Result};
use crate::kv;

/// Bundled default parameter file.
pub const DEFAULT_PARAMS: &str = include_str!("../data/jart_vcm_v1.params");

pub const FORMAT_VERSION: f64 = 1.0;

/// Keys accepted in a parameter file, in canonical order.
pub const KEYS: [&str; 25] = [
    "R_TiOx", "R_0", "alpha_l", "R_th_line", "l_p", "l_d", "l_c", "N_p", "N_d_min", "N_d_max", "r_d",
    "mu_n", "A_star", "T_0", "R_th_SET", "R_th_RESET", "m_star", "eps", "eps_phiB", "phi_Bn0", "phi_n",
    "dW_A", "alpha_hop", "nu_0", "Z_VO",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhysicalParams {
    /// Fixed resistance of the TiOx layer (Ω).
    pub r_tiox: f64,
    /// Line resistance at zero current (Ω).
    pub r_0: f64,
    /// Line temperature coefficient (1/K).
    pub alpha_l: f64,
    /// Line thermal resistance (K/W).
    pub r_th_line: f64,
    /// Plug length (m).
    pub l_p: f64,
    /// Disc length (m).
    pub l_d: f64,
    /// Plug vacancy concentration (1/m³).
    pub n_p: f64,
    pub n_d_min: f64,
    pub n_d_max: f64,
    /// Filament radius (m).
    pub r_d: f64,
    /// Electron mobility (m²/(V·s)).
    pub mu_n: f64,
    /// Richardson constant (A/(m²·K²)).
    pub a_star: f64,
    /// Ambient temperature (K).
    pub t_0: f64,
    /// Oxide thermal resistance under SET bias (K/W).
    pub r_th_set: f64,
    /// Oxide thermal resistance under RESET bias (K/W).
    pub r_th_reset: f64,
    /// Electron effective mass (kg).
    pub m_star: f64,
    /// Static oxide permittivity (F/m).
    pub eps: f64,
    /// Permittivity governing barrier lowering (F/m).
    pub eps_phib: f64,
    /// Nominal Schottky barrier height (J).
    pub phi_bn0: f64,
    /// Fermi level to conduction band offset (J).
    pub phi_n: f64,
    /// Ion hopping activation energy (J).
    pub dw_a: f64,
    /// Ion hopping distance (m).
    pub alpha_hop: f64,
    /// Attempt frequency (1/s).
    pub nu_0: f64,
    /// Vacancy charge number.
    pub z_vo: f64,
}

impl PhysicalParams {
    /// Total oxide length, always `l_p + l_d`.
    pub fn l_c(&self) -> f64 {
        self.l_p + self.l_d
    }

    /// Nominal filament cross-section (m²).
    pub fn area(&self) -> f64 {
        std::f64::consts::PI * self.r_d * self.r_d
    }

    pub fn bundled() -> Self {
        Self::from_kv_str(DEFAULT_PARAMS, "<bundled jart_vcm_v1.params>").expect("bundled parameter file is valid")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_kv_str(&text, &path.display().to_string())
    }

    pub fn from_kv_str(text: &str, origin: &str) -> Result<Self> {
        let entries = kv::parse(text, origin)?;
        let mut vals = [f64::NAN; KEYS.len()];
        for e in &entries {
            if e.key == "format_version" {
                if e.value != FORMAT_VERSION {
                    return Err(Error::Parse {
                        path: origin.to_string(),
                        line: e.line,
                        msg: format!("unsupported format_version {}", e.value),
                    });
                }
                continue;
            }
            let idx = KEYS.iter().position(|k| *k == e.key).ok_or_else(|| Error::Parse {
                path: origin.to_string(),
                line: e.line,
                msg: format!("unknown parameter `{}`", e.key),
            })?;
            vals[idx] = e.value;
        }
        let get = |k: &str| vals[KEYS.iter().position(|x| *x == k).unwrap()];
        for (k, v) in KEYS.iter().zip(vals) {
            if v.is_nan() && *k != "l_c" {
                return Err(Error::Parse { path: origin.to_string(), line: 0, msg: format!("missing parameter `{k}`") });
            }
        }
        let p = PhysicalParams {
            r_tiox: get("R_TiOx"),
            r_0: get("R_0"),
            alpha_l: get("alpha_l"),
            r_th_line: get("R_th_line"),
            l_p: get("l_p"),
            l_d: get("l_d"),
            n_p: get("N_p"),
            n_d_min: get("N_d_min"),
            n_d_max: get("N_d_max"),
            r_d: get("r_d"),
            mu_n: get("mu_n"),
            a_star: get("A_star"),
            t_0: get("T_0"),
            r_th_set: get("R_th_SET"),
            r_th_reset: get("R_th_RESET"),
            m_star: get("m_star"),
            eps: get("eps"),
            eps_phib: get("eps_phiB"),
            phi_bn0: get("phi_Bn0") * ELEMENTARY_CHARGE,
            phi_n: get("phi_n") * ELEMENTARY_CHARGE,
            dw_a: get("dW_A") * ELEMENTARY_CHARGE,
            alpha_hop: get("alpha_hop"),
            nu_0: get("nu_0"),
            z_vo: get("Z_VO"),
        };
        let l_c = get("l_c");
        if !l_c.is_nan() && (l_c - p.l_c()).abs() > 1e-12 * p.l_c() {
            return Err(Error::invalid(format!(
                "l_c = {l_c:e} disagrees with l_p + l_d = {:e}",
                p.l_c()
            )));
        }
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("R_TiOx", self.r_tiox),
            ("R_0", self.r_0),
            ("alpha_l", self.alpha_l),
            ("R_th_line", self.r_th_line),
            ("l_p", self.l_p),
            ("l_d", self.l_d),
            ("N_p", self.n_p),
            ("N_d_min", self.n_d_min),
            ("N_d_max", self.n_d_max),
            ("r_d", self.r_d),
            ("mu_n", self.mu_n),
            ("A_star", self.a_star),
            ("T_0", self.t_0),
            ("R_th_SET", self.r_th_set),
            ("R_th_RESET", self.r_th_reset),
            ("m_star", self.m_star),
            ("eps", self.eps),
            ("eps_phiB", self.eps_phib),
            ("dW_A", self.dw_a),
            ("alpha_hop", self.alpha_hop),
            ("nu_0", self.nu_0),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(format!("{name} must be finite and > 0, got {v}")));
            }
        }
        if !(self.phi_bn0.is_finite() && self.phi_n.is_finite()) {
            return Err(Error::invalid("barrier energies must be finite"));
        }
        if self.n_d_min >= self.n_d_max {
            return Err(Error::invalid(format!(
                "N_d_min ({:e}) must be below N_d_max ({:e})",
                self.n_d_min, self.n_d_max
            )));
        }
        if self.z_vo != 2.0 {
            return Err(Error::invalid(format!("Z_VO is fixed at 2, got {}", self.z_vo)));
        }
        Ok(())
    }

    /// Serialises back to the key-value format (energies in eV).
    pub fn to_kv_string(&self) -> String {
        let q = ELEMENTARY_CHARGE;
        let rows: Vec<(&str, f64, &str)> = vec![
            ("format_version", FORMAT_VERSION, ""),
            ("R_TiOx", self.r_tiox, "Ω"),
            ("R_0", self.r_0, "Ω"),
            ("alpha_l", self.alpha_l, "1/K"),
            ("R_th_line", self.r_th_line, "K/W"),
            ("l_p", self.l_p, "m"),
            ("l_d", self.l_d, "m"),
            ("l_c", self.l_c(), "m"),
            ("N_p", self.n_p, "1/m^3"),
            ("N_d_min", self.n_d_min, "1/m^3"),
            ("N_d_max", self.n_d_max, "1/m^3"),
            ("r_d", self.r_d, "m"),
            ("mu_n", self.mu_n, "m^2/(V s)"),
            ("A_star", self.a_star, "A/(m^2 K^2)"),
            ("T_0", self.t_0, "K"),
            ("R_th_SET", self.r_th_set, "K/W"),
            ("R_th_RESET", self.r_th_reset, "K/W"),
            ("m_star", self.m_star, "kg"),
            ("eps", self.eps, "F/m"),
            ("eps_phiB", self.eps_phib, "F/m"),
            ("phi_Bn0", self.phi_bn0 / q, "eV"),
            ("phi_n", self.phi_n / q, "eV"),
            ("dW_A", self.dw_a / q, "eV"),
            ("alpha_hop", self.alpha_hop, "m"),
            ("nu_0", self.nu_0, "1/s"),
            ("Z_VO", self.z_vo, ""),
        ];
        kv::render("vcm-sim physical parameters", &rows)
    }
}
