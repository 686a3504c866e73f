//! Closed-form current surrogate and its calibration against the full model.

use std::path::Path;

use levenberg_marquardt::{LeastSquaresProblem, LevenbergMarquardt};
use nalgebra::{storage::Owned, DMatrix, DVector, Dyn};
use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use rand_pcg::Pcg64Mcg;
use serde::{Deserialize, Serialize};

use crate::device::DeviceState;
use crate::error::{Error, Result};
use crate::kv;
use crate::params::PhysicalParams;
use crate::physics::{self, layer_resistance, series_resistance, Polarity, VoltagePartition};

pub const NEG_KEYS: [&str; 18] = [
    "a0", "a1", "a2", "a3", "b0", "b1", "c0", "c1", "c2", "c3", "d0", "d1", "d2", "d3", "f0", "f1", "f2", "f3",
];
pub const POS_KEYS: [&str; 8] = ["g0", "g1", "h0", "h1", "h2", "h3", "j0", "k0"];

/// Bundled coefficients calibrated for the bundled parameter file.
pub const DEFAULT_COEFFS: &str = include_str!("../data/jart_vcm_v1.coeffs");

const FORMAT_VERSION: f64 = 1.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitCoefficients {
    /// a0..a3, b0, b1, c0..c3, d0..d3, f0..f3
    pub neg: [f64; 18],
    /// g0, g1, h0..h3, j0, k0
    pub pos: [f64; 8],
}

impl FitCoefficients {
    pub fn bundled() -> Self {
        Self::from_kv_str(DEFAULT_COEFFS, "<bundled jart_vcm_v1.coeffs>").expect("bundled coefficient file is valid")
    }

    pub fn validate(&self) -> Result<()> {
        if self.neg.iter().chain(&self.pos).any(|c| !c.is_finite()) {
            return Err(Error::invalid("fit coefficients must be finite"));
        }
        if self.pos[7] == 0.0 {
            return Err(Error::invalid("k0 must be non-zero"));
        }
        if self.neg[16] <= 0.0 {
            return Err(Error::invalid("f2 must be > 0"));
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_kv_str(&text, &path.display().to_string())
    }

    pub fn from_kv_str(text: &str, origin: &str) -> Result<Self> {
        let mut neg = [f64::NAN; 18];
        let mut pos = [f64::NAN; 8];
        for e in kv::parse(text, origin)? {
            let perr = |msg: String| Error::Parse { path: origin.to_string(), line: e.line, msg };
            if e.key == "format_version" {
                if e.value != FORMAT_VERSION {
                    return Err(perr(format!("unsupported format_version {}", e.value)));
                }
            } else if let Some(i) = NEG_KEYS.iter().position(|k| *k == e.key) {
                neg[i] = e.value;
            } else if let Some(i) = POS_KEYS.iter().position(|k| *k == e.key) {
                pos[i] = e.value;
            } else {
                return Err(perr(format!("unknown coefficient `{}`", e.key)));
            }
        }
        for (k, v) in NEG_KEYS.iter().zip(&neg).chain(POS_KEYS.iter().zip(&pos)) {
            if v.is_nan() {
                return Err(Error::Parse { path: origin.to_string(), line: 0, msg: format!("missing coefficient `{k}`") });
            }
        }
        let c = FitCoefficients { neg, pos };
        c.validate()?;
        Ok(c)
    }

    pub fn to_kv_string(&self) -> String {
        let mut rows = vec![("format_version", FORMAT_VERSION, "")];
        rows.extend(NEG_KEYS.iter().zip(&self.neg).map(|(k, v)| (*k, *v, "")));
        rows.extend(POS_KEYS.iter().zip(&self.pos).map(|(k, v)| (*k, *v, "")));
        kv::render("vcm-sim surrogate current coefficients", &rows)
    }
}

fn neg_branch(c: &[f64], v: f64, n_d: f64) -> f64 {
    let [a0, a1, a2, a3, b0, b1, c0, c1, c2, c3, d0, d1, d2, d3, f0, f1, f2, f3] = c[..18].try_into().unwrap();
    let a = (a1 + a0) / (1.0 + (-(v + a2) / a3).exp()) - a0;
    let b = b1 * (1.0 - (-v).exp()) - b0 * v;
    let cc = (c2 * (-v / c3).exp() + c1 * v - c0) / (n_d * 1e-26);
    let d = d2 * (-v / d3).exp() + d1 * v - d0;
    let f = f0 + (f1 - f0) / (1.0 + (-v / f2).powf(f3));
    -a - b / (1.0 + cc.powf(d)).powf(f)
}

fn pos_branch(c: &[f64], v: f64, ratio: f64) -> f64 {
    let [g0, g1, h0, h1, h2, h3, j0, k0] = c[..8].try_into().unwrap();
    -g0 * (-g1 * v).exp_m1() / (1.0 + (h0 + h1 * v + h2 * (-h3 * v).exp()) * ratio.powf(-j0)).powf(1.0 / k0)
}

/// Device current predicted by the surrogate.
pub fn surrogate_current(coeffs: &FitCoefficients, params: &PhysicalParams, n_d: f64, v_m: f64) -> Result<f64> {
    if !(v_m.is_finite() && n_d.is_finite() && n_d > 0.0) {
        return Err(Error::invalid(format!("bad surrogate inputs V_M = {v_m}, N_d = {n_d}")));
    }
    let i = match Polarity::of(v_m) {
        None => return Ok(0.0),
        Some(Polarity::Set) => neg_branch(&coeffs.neg, v_m, n_d),
        Some(Polarity::Reset) => pos_branch(&coeffs.pos, v_m, n_d / params.n_d_min),
    };
    if !i.is_finite() || i * v_m < 0.0 {
        return Err(Error::Evaluation { v_m, n_d });
    }
    Ok(i)
}

/// Voltage drops implied by the surrogate current at the device's own geometry.
pub fn voltage_partition_from_surrogate(
    coeffs: &FitCoefficients,
    params: &PhysicalParams,
    state: &DeviceState,
    v_m: f64,
) -> Result<VoltagePartition> {
    let Some(pol) = Polarity::of(v_m) else {
        if v_m.is_nan() {
            return Err(Error::invalid("V_M is NaN"));
        }
        return Ok(VoltagePartition::equilibrium(params.t_0));
    };
    let i = surrogate_current(coeffs, params, state.n_d, v_m)?;
    let v_s = i * series_resistance(params, i)?;
    let v_p = i * layer_resistance(params, params.l_p, params.n_p, state.r_d)?;
    let v_d = i * layer_resistance(params, state.l_d, state.n_d, state.r_d)?;
    let v_sch = v_m - v_s - v_p - v_d;
    // Bound checked on the nominal geometry.
    let v_sch_nominal = if state.r_d == params.r_d && state.l_d == params.l_d {
        v_sch
    } else {
        let r_nom = layer_resistance(params, params.l_p, params.n_p, params.r_d)? + layer_resistance(params, params.l_d, state.n_d, params.r_d)?;
        v_m - v_s - i * r_nom
    };
    if v_sch_nominal.abs() > v_m.abs() {
        return Err(Error::Partition { v_sch: v_sch_nominal, v_m });
    }
    let t = physics::local_temperature(params, i, v_m - v_s, pol, state.r_d)?;
    Ok(VoltagePartition { v_m, v_s, v_p, v_d, v_sch, i_m: i, t })
}

/// Rectangular (V_M, N_d) sampling grid: linear in V per polarity, geometric in N_d.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationGrid {
    /// |V_M| range sampled on the SET side (V).
    pub set_v: [f64; 2],
    /// V_M range sampled on the RESET side (V).
    pub reset_v: [f64; 2],
    pub n_d: [f64; 2],
    pub v_points: usize,
    pub n_points: usize,
}

impl CalibrationGrid {
    pub fn default_for(params: &PhysicalParams) -> Self {
        CalibrationGrid {
            set_v: [0.2, 1.2],
            reset_v: [0.2, 1.0],
            n_d: [params.n_d_min, params.n_d_max],
            v_points: 51,
            n_points: 51,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |r: [f64; 2]| r[0] > 0.0 && r[0] < r[1] && r[1].is_finite();
        if !(ok(self.set_v) && ok(self.reset_v) && ok(self.n_d) && self.v_points >= 2 && self.n_points >= 2) {
            return Err(Error::invalid("calibration grid needs 0 < lo < hi ranges and >= 2 points per axis"));
        }
        Ok(())
    }

    fn axis_lin(r: [f64; 2], n: usize) -> Vec<f64> {
        (0..n).map(|k| r[0] + (r[1] - r[0]) * k as f64 / (n - 1) as f64).collect()
    }

    fn axis_geo(r: [f64; 2], n: usize) -> Vec<f64> {
        let (a, b) = (r[0].ln(), r[1].ln());
        (0..n).map(|k| (a + (b - a) * k as f64 / (n - 1) as f64).exp()).collect()
    }

    /// All `(V_M, N_d)` nodes, SET side first.
    pub fn points(&self) -> Vec<(f64, f64)> {
        let ns = Self::axis_geo(self.n_d, self.n_points);
        let mut out = Vec::with_capacity(2 * self.v_points * self.n_points);
        for v in Self::axis_lin(self.set_v, self.v_points) {
            out.extend(ns.iter().map(|&n| (-v, n)));
        }
        for v in Self::axis_lin(self.reset_v, self.v_points) {
            out.extend(ns.iter().map(|&n| (v, n)));
        }
        out
    }

    /// The grid of cell centres, disjoint from the nodes of `self`.
    pub fn midpoints(&self) -> Self {
        let half_v = |r: [f64; 2]| {
            let h = 0.5 * (r[1] - r[0]) / (self.v_points - 1) as f64;
            [r[0] + h, r[1] - h]
        };
        let h = 0.5 * (self.n_d[1] / self.n_d[0]).ln() / (self.n_points - 1) as f64;
        CalibrationGrid {
            set_v: half_v(self.set_v),
            reset_v: half_v(self.reset_v),
            n_d: [self.n_d[0] * h.exp(), self.n_d[1] * (-h).exp()],
            v_points: self.v_points - 1,
            n_points: self.n_points - 1,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub max_rel: f64,
    pub mean_rel: f64,
    pub points: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BranchErrors {
    pub set: ErrorStats,
    pub reset: ErrorStats,
}

impl BranchErrors {
    pub fn max_rel(&self) -> f64 {
        self.set.max_rel.max(self.reset.max_rel)
    }

    pub fn mean_rel(&self) -> f64 {
        let n = (self.set.points + self.reset.points) as f64;
        (self.set.mean_rel * self.set.points as f64 + self.reset.mean_rel * self.reset.points as f64) / n
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub grid: CalibrationGrid,
    pub seed: u64,
    pub starts: usize,
    pub training: BranchErrors,
    pub held_out: BranchErrors,
    pub coefficients: std::collections::BTreeMap<String, f64>,
}

impl CalibrationReport {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("report serialises")
    }
}

/// Full-model currents at every grid node (nominal, noise-free device).
pub fn oracle_currents(params: &PhysicalParams, points: &[(f64, f64)]) -> Result<Vec<f64>> {
    points
        .iter()
        .map(|&(v, n)| {
            let st = DeviceState::nominal(params, n, 1.0, 2.0);
            Ok(physics::solve_full_model(params, &st, v)?.i_m)
        })
        .collect()
}

/// Relative error of the surrogate against precomputed oracle currents.
pub fn compare(coeffs: &FitCoefficients, params: &PhysicalParams, points: &[(f64, f64)], oracle: &[f64]) -> BranchErrors {
    let mut acc = [(0.0_f64, 0.0_f64, 0_usize); 2];
    for (&(v, n), &i_ref) in points.iter().zip(oracle) {
        let rel = match surrogate_current(coeffs, params, n, v) {
            Ok(i) => ((i - i_ref) / i_ref).abs(),
            Err(_) => f64::INFINITY,
        };
        let a = &mut acc[usize::from(v > 0.0)];
        a.0 = a.0.max(rel);
        a.1 += rel;
        a.2 += 1;
    }
    let stats = |(m, s, k): (f64, f64, usize)| ErrorStats { max_rel: m, mean_rel: s / k.max(1) as f64, points: k };
    BranchErrors { set: stats(acc[0]), reset: stats(acc[1]) }
}

pub fn evaluate(coeffs: &FitCoefficients, params: &PhysicalParams, grid: &CalibrationGrid) -> Result<BranchErrors> {
    let pts = grid.points();
    let oracle = oracle_currents(params, &pts)?;
    Ok(compare(coeffs, params, &pts, &oracle))
}

#[derive(Clone, Debug, PartialEq)]
pub struct CalibrationOptions {
    pub seed: u64,
    /// Multi-start count per branch, including the unperturbed initial guess.
    pub starts: usize,
    /// Relative spread of the seeded perturbations.
    pub spread: f64,
    pub initial: FitCoefficients,
}

impl CalibrationOptions {
    pub fn new(seed: u64) -> Self {
        CalibrationOptions { seed, starts: 8, spread: 0.3, initial: initial_guess() }
    }
}

/// Generic starting point for the coefficient search.
pub fn initial_guess() -> FitCoefficients {
    FitCoefficients {
        neg: [1e-6, 1e-6, -1.0, 0.1, 6e-4, 1e-5, 0.0, 0.0, 1.0, 1.0, -2.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.5, 2.0],
        pos: [1e-3, 1.0, 10.0, 0.0, 0.0, 1.0, 1.0, 1.0],
    }
}

const PENALTY: f64 = 50.0;

struct BranchFit<'a> {
    x: DVector<f64>,
    v: &'a [f64],
    /// N_d on the SET side, N_d / N_d_min on the RESET side.
    n: &'a [f64],
    log_i: &'a [f64],
    reset: bool,
}

impl BranchFit<'_> {
    fn residual_vec(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_iterator(
            self.v.len(),
            self.v.iter().zip(self.n).zip(self.log_i).map(|((&v, &n), &li)| {
                let m = if self.reset { pos_branch(x, v, n) } else { neg_branch(x, v, n) };
                if m.is_finite() && m * v > 0.0 {
                    m.abs().ln() - li
                } else {
                    PENALTY
                }
            }),
        )
    }

    fn cost(&self, x: &[f64]) -> f64 {
        0.5 * self.residual_vec(x).norm_squared()
    }
}

impl LeastSquaresProblem<f64, Dyn, Dyn> for BranchFit<'_> {
    type ResidualStorage = Owned<f64, Dyn>;
    type JacobianStorage = Owned<f64, Dyn, Dyn>;
    type ParameterStorage = Owned<f64, Dyn>;

    fn set_params(&mut self, x: &DVector<f64>) {
        self.x.copy_from(x);
    }

    fn params(&self) -> DVector<f64> {
        self.x.clone()
    }

    fn residuals(&self) -> Option<DVector<f64>> {
        Some(self.residual_vec(self.x.as_slice()))
    }

    fn jacobian(&self) -> Option<DMatrix<f64>> {
        let n = self.x.len();
        let mut jac = DMatrix::zeros(self.v.len(), n);
        let mut x = self.x.as_slice().to_vec();
        for j in 0..n {
            let h = 1e-7 * self.x[j].abs().max(1e-6);
            x[j] = self.x[j] + h;
            let up = self.residual_vec(&x);
            x[j] = self.x[j] - h;
            let dn = self.residual_vec(&x);
            x[j] = self.x[j];
            jac.set_column(j, &((up - dn) / (2.0 * h)));
        }
        Some(jac)
    }
}

fn fit_branch(
    v: &[f64],
    n: &[f64],
    log_i: &[f64],
    reset: bool,
    x0: &[f64],
    opts: &CalibrationOptions,
    rng: &mut Pcg64Mcg,
) -> Option<(Vec<f64>, f64)> {
    let lm = LevenbergMarquardt::new().with_patience(400);
    let mut best: Option<(Vec<f64>, f64)> = None;
    for s in 0..opts.starts.max(1) {
        let start: Vec<f64> = if s == 0 {
            x0.to_vec()
        } else {
            x0.iter()
                .map(|&c| {
                    let z: f64 = StandardNormal.sample(rng);
                    c * (1.0 + opts.spread * z)
                })
                .collect()
        };
        let problem = BranchFit { x: DVector::from_vec(start), v, n, log_i, reset };
        let (solved, _report) = lm.minimize(problem);
        let x = solved.x.as_slice().to_vec();
        let cost = solved.cost(&x);
        if cost.is_finite() && best.as_ref().is_none_or(|b| cost < b.1) {
            best = Some((x, cost));
        }
    }
    best
}

/// Least-squares fit of both surrogate branches to the full model on a log|I|
/// scale, with seeded multi-start.
pub fn calibrate(
    params: &PhysicalParams,
    grid: &CalibrationGrid,
    opts: &CalibrationOptions,
) -> Result<(FitCoefficients, CalibrationReport)> {
    grid.validate()?;
    let pts = grid.points();
    let oracle = oracle_currents(params, &pts)?;
    let held = grid.midpoints();
    let held_pts = held.points();
    let held_oracle = oracle_currents(params, &held_pts)?;

    let mut rng = Pcg64Mcg::seed_from_u64(opts.seed);
    let mut coeffs = opts.initial.clone();
    for reset in [false, true] {
        let sel: Vec<usize> = (0..pts.len()).filter(|&k| (pts[k].0 > 0.0) == reset).collect();
        let v: Vec<f64> = sel.iter().map(|&k| pts[k].0).collect();
        let n: Vec<f64> = sel
            .iter()
            .map(|&k| if reset { pts[k].1 / params.n_d_min } else { pts[k].1 })
            .collect();
        let li: Vec<f64> = sel.iter().map(|&k| oracle[k].abs().ln()).collect();
        let x0: &[f64] = if reset { &opts.initial.pos } else { &opts.initial.neg };
        let (x, _) = fit_branch(&v, &n, &li, reset, x0, opts, &mut rng)
            .ok_or_else(|| Error::Calibration(format!("no finite fit for the {} branch", if reset { "RESET" } else { "SET" })))?;
        if reset {
            coeffs.pos.copy_from_slice(&x);
        } else {
            coeffs.neg.copy_from_slice(&x);
        }
    }
    let training = compare(&coeffs, params, &pts, &oracle);
    let held_out = compare(&coeffs, params, &held_pts, &held_oracle);
    let report = CalibrationReport {
        grid: grid.clone(),
        seed: opts.seed,
        starts: opts.starts,
        training,
        held_out,
        coefficients: NEG_KEYS
            .iter()
            .zip(&coeffs.neg)
            .chain(POS_KEYS.iter().zip(&coeffs.pos))
            .map(|(k, v)| (k.to_string(), *v))
            .collect(),
    };
    if coeffs.validate().is_err() || !report.training.max_rel().is_finite() {
        return Err(Error::Calibration(format!("fit left the valid coefficient region:\n{}", report.to_toml())));
    }
    Ok((coeffs, report))
}
