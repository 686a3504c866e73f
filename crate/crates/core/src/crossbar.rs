//! Crossbar tiles: one device per weight, pulsed updates with a
//! conductance-range control circuit.

use std::sync::Arc;

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::RngExt;
use rand_pcg::Pcg64Mcg;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::device::DeviceState;
use crate::dynamics::{apply_c2c, integrate, n_d_for_conductance, read_conductance, PulseSpec, DEFAULT_V_READ};
use crate::error::{Error, Result};
use crate::fit::FitCoefficients;
use crate::params::PhysicalParams;
use crate::physics::Polarity;
use crate::stochastic::{realize_device, NoiseSpec};

/// Bundled matched pulse scheme.
pub const DEFAULT_SCHEME: &str = include_str!("../data/matched_scheme.toml");

/// Matched SET/RESET pulse pair and the conductance window it was matched on.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PulseScheme {
    pub set: PulseSpec,
    pub reset: PulseSpec,
    /// Nominal control bounds [G_min, G_max] (S).
    pub window: [f64; 2],
    #[serde(default = "default_v_read")]
    pub v_read: f64,
}

fn default_v_read() -> f64 {
    DEFAULT_V_READ
}

impl PulseScheme {
    pub fn bundled() -> Self {
        Self::from_toml_str(DEFAULT_SCHEME).expect("bundled pulse scheme is valid")
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let s: PulseScheme = toml::from_str(text).map_err(|e| Error::Config(format!("pulse scheme: {e}")))?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("pulse scheme serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.set.validate()?;
        self.reset.validate()?;
        if Polarity::of(self.set.amplitude) != Some(Polarity::Set) {
            return Err(Error::invalid("SET amplitude must be negative"));
        }
        if Polarity::of(self.reset.amplitude) != Some(Polarity::Reset) {
            return Err(Error::invalid("RESET amplitude must be positive"));
        }
        let [lo, hi] = self.window;
        if !(lo > 0.0 && hi > lo && hi.is_finite()) {
            return Err(Error::invalid(format!("conductance window [{lo:e}, {hi:e}] must be positive and increasing")));
        }
        if !(self.v_read < 0.0 && self.v_read.is_finite()) {
            return Err(Error::invalid("read voltage must be negative"));
        }
        Ok(())
    }

    pub fn pulse(&self, polarity: Polarity) -> &PulseSpec {
        match polarity {
            Polarity::Set => &self.set,
            Polarity::Reset => &self.reset,
        }
    }
}

/// Linear map between [G_min, G_max] and [-w_max, w_max].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightMapping {
    pub g_min: f64,
    pub g_max: f64,
    pub w_max: f64,
}

impl WeightMapping {
    pub fn new(window: [f64; 2], w_max: f64) -> Result<Self> {
        if !(w_max > 0.0 && w_max.is_finite()) {
            return Err(Error::invalid(format!("w_max must be > 0, got {w_max}")));
        }
        if !(window[0] > 0.0 && window[1] > window[0]) {
            return Err(Error::invalid("conductance window must be positive and increasing"));
        }
        Ok(WeightMapping { g_min: window[0], g_max: window[1], w_max })
    }

    pub fn to_weight(&self, g: f64) -> f64 {
        self.w_max * (2.0 * (g - self.g_min) / (self.g_max - self.g_min) - 1.0)
    }

    pub fn to_conductance(&self, w: f64) -> f64 {
        self.g_min + 0.5 * (w / self.w_max + 1.0) * (self.g_max - self.g_min)
    }

    /// Weight change per unit conductance change.
    pub fn slope(&self) -> f64 {
        2.0 * self.w_max / (self.g_max - self.g_min)
    }
}

/// Everything shared by the tiles of one network.
#[derive(Clone, Debug)]
pub struct DeviceModel {
    pub params: PhysicalParams,
    pub coeffs: FitCoefficients,
    pub noise: NoiseSpec,
    pub scheme: PulseScheme,
    dg_per_pulse: f64,
}

impl DeviceModel {
    pub fn new(params: PhysicalParams, coeffs: FitCoefficients, noise: NoiseSpec, scheme: PulseScheme) -> Result<Self> {
        params.validate()?;
        coeffs.validate()?;
        noise.validate()?;
        scheme.validate()?;
        let g = |n: f64| read_conductance(&coeffs, &params, n, scheme.v_read);
        let (g_lo, g_hi) = (g(params.n_d_min)?, g(params.n_d_max)?);
        if scheme.window[0] < g_lo || scheme.window[1] > g_hi {
            return Err(Error::Config(format!(
                "conductance window [{:e}, {:e}] S is not reachable; nominal device spans [{g_lo:e}, {g_hi:e}] S",
                scheme.window[0], scheme.window[1]
            )));
        }
        let dg_per_pulse = mid_range_step(&params, &coeffs, &scheme)?;
        Ok(DeviceModel { params, coeffs, noise, scheme, dg_per_pulse })
    }

    /// Mean |ΔG| of one SET and one RESET pulse on a noise-free device at
    /// the window midpoint.
    pub fn dg_per_pulse(&self) -> f64 {
        self.dg_per_pulse
    }

    pub fn conductance(&self, n_d: f64) -> Result<f64> {
        read_conductance(&self.coeffs, &self.params, n_d, self.scheme.v_read)
    }
}

fn mid_range_step(params: &PhysicalParams, coeffs: &FitCoefficients, scheme: &PulseScheme) -> Result<f64> {
    let [lo, hi] = scheme.window;
    let g_mid = 0.5 * (lo + hi);
    let n_mid = n_d_for_conductance(coeffs, params, g_mid, [params.n_d_min, params.n_d_max], scheme.v_read)?;
    let mut step = 0.0;
    for pulse in [&scheme.set, &scheme.reset] {
        let mut st = DeviceState::nominal(params, n_mid, lo, hi);
        integrate(coeffs, params, &mut st, pulse, None)?;
        step += (read_conductance(coeffs, params, st.n_d, scheme.v_read)? - g_mid).abs();
    }
    if !(step > 0.0) {
        return Err(Error::Config("matched pulses do not change the conductance at mid-range".into()));
    }
    Ok(0.5 * step)
}

/// Pulse bookkeeping of one update.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PulseStats {
    pub applied: u64,
    pub skipped: u64,
}

impl std::ops::Add for PulseStats {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        PulseStats { applied: self.applied + o.applied, skipped: self.skipped + o.skipped }
    }
}

/// A device found outside its control bounds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundViolation {
    pub row: usize,
    pub col: usize,
    pub g: f64,
    pub g_min: f64,
    pub g_max: f64,
}

/// Relative slack allowed by the audit for bisection round-off at the edges.
const AUDIT_SLACK: f64 = 1e-9;

/// Serialized tile: device states and RNG positions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TileCheckpoint {
    pub rows: usize,
    pub cols: usize,
    pub tile_id: u64,
    pub w_max: f64,
    pub devices: Vec<DeviceState>,
    pub control: Vec<[f64; 2]>,
    /// Hex-encoded 128-bit generator states.
    pub rng_states: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct CrossbarTile {
    model: Arc<DeviceModel>,
    rows: usize,
    cols: usize,
    tile_id: u64,
    mapping: WeightMapping,
    devices: Vec<DeviceState>,
    rngs: Vec<Pcg64Mcg>,
    /// Control bounds as sampled, before clipping to what the device can reach.
    control: Vec<[f64; 2]>,
    weights: Array2<f64>,
}

/// Stream key of device `index` in tile `tile_id`.
pub fn device_key(tile_id: u64, index: usize) -> u64 {
    (tile_id << 40) | index as u64
}

impl CrossbarTile {
    /// Realizes `rows x cols` devices and programs them to `initial`
    /// (clamped into each device's control bounds).
    pub fn new(model: Arc<DeviceModel>, tile_id: u64, initial: ArrayView2<f64>, w_max: f64) -> Result<Self> {
        let (rows, cols) = initial.dim();
        if rows == 0 || cols == 0 {
            return Err(Error::invalid("tile must have at least one row and one column"));
        }
        if tile_id >= 1 << 24 || rows * cols >= 1 << 40 {
            return Err(Error::invalid("tile id or size out of range"));
        }
        let mapping = WeightMapping::new(model.scheme.window, w_max)?;
        let init: Vec<f64> = initial.iter().copied().collect();
        let built: Vec<(DeviceState, Pcg64Mcg, [f64; 2], f64)> = init
            .par_iter()
            .enumerate()
            .map(|(k, &w)| realize(&model, &mapping, device_key(tile_id, k), w))
            .collect::<Result<_>>()?;
        let mut devices = Vec::with_capacity(built.len());
        let mut rngs = Vec::with_capacity(built.len());
        let mut control = Vec::with_capacity(built.len());
        let mut weights = Vec::with_capacity(built.len());
        for (d, r, c, w) in built {
            devices.push(d);
            rngs.push(r);
            control.push(c);
            weights.push(w);
        }
        let weights = Array2::from_shape_vec((rows, cols), weights).expect("shape matches");
        Ok(CrossbarTile { model, rows, cols, tile_id, mapping, devices, rngs, control, weights })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn mapping(&self) -> &WeightMapping {
        &self.mapping
    }

    pub fn model(&self) -> &Arc<DeviceModel> {
        &self.model
    }

    pub fn devices(&self) -> &[DeviceState] {
        &self.devices
    }

    /// Weight change of one pulse at mid-range.
    pub fn dw_per_pulse(&self) -> f64 {
        self.model.dg_per_pulse() * self.mapping.slope()
    }

    /// Current weights (cached; identical to mapping fresh conductance reads).
    pub fn weights(&self) -> ArrayView2<'_, f64> {
        self.weights.view()
    }

    /// Reads every device and maps the conductances to weights.
    pub fn read_weights(&self) -> Result<Array2<f64>> {
        let w = self
            .devices
            .par_iter()
            .map(|d| Ok(self.mapping.to_weight(self.model.conductance(d.n_d)?)))
            .collect::<Result<Vec<f64>>>()?;
        Ok(Array2::from_shape_vec((self.rows, self.cols), w).expect("shape matches"))
    }

    pub fn forward(&self, x: ArrayView1<f64>) -> Result<ndarray::Array1<f64>> {
        if x.len() != self.cols {
            return Err(Error::Dimension { expected: format!("{}", self.cols), got: format!("{}", x.len()) });
        }
        Ok(self.weights.dot(&x))
    }

    /// Applies the requested weight change with stochastically rounded pulse
    /// counts; pulses that would leave the control window are skipped.
    pub fn pulsed_update(&mut self, delta_w: ArrayView2<f64>) -> Result<PulseStats> {
        if delta_w.dim() != (self.rows, self.cols) {
            return Err(Error::Dimension { expected: format!("{}x{}", self.rows, self.cols), got: format!("{:?}", delta_w.dim()) });
        }
        let dw_pp = self.dw_per_pulse();
        let max_pulses = (4.0 * 2.0 * self.mapping.w_max / dw_pp).ceil() as usize + 1;
        let model = &*self.model;
        let mapping = self.mapping;
        let cols = self.cols;
        let weights = self.weights.as_slice_mut().expect("standard layout");
        self.devices
            .par_chunks_mut(cols)
            .zip(self.rngs.par_chunks_mut(cols))
            .zip(self.control.par_chunks(cols))
            .zip(weights.par_chunks_mut(cols))
            .enumerate()
            .map(|(i, (((devs, rngs), ctls), ws))| {
                let mut stats = PulseStats::default();
                for (j, &dw) in delta_w.row(i).iter().enumerate() {
                    if dw == 0.0 {
                        continue;
                    }
                    if !dw.is_finite() {
                        return Err(Error::invalid(format!("non-finite weight update {dw}")));
                    }
                    let n_star = dw.abs() / dw_pp;
                    let whole = n_star as usize;
                    let u: f64 = rngs[j].random();
                    let n = whole + usize::from(u < n_star - whole as f64);
                    if n == 0 {
                        continue;
                    }
                    let pol = if dw > 0.0 { Polarity::Set } else { Polarity::Reset };
                    let s = pulse_device(model, &mut devs[j], &mut rngs[j], &ctls[j], pol, n.min(max_pulses))?;
                    if s.applied > 0 {
                        ws[j] = mapping.to_weight(model.conductance(devs[j].n_d)?);
                    }
                    stats = stats + s;
                }
                Ok(stats)
            })
            .try_reduce(PulseStats::default, |a, b| Ok(a + b))
    }

    /// Audits every device against its control bounds.
    pub fn enforce_conductance_bounds(&self) -> Vec<BoundViolation> {
        self.devices
            .iter()
            .enumerate()
            .filter_map(|(k, d)| {
                let g = self.model.conductance(d.n_d).unwrap_or(f64::NAN);
                let ok = g >= d.g_min * (1.0 - AUDIT_SLACK) && g <= d.g_max * (1.0 + AUDIT_SLACK);
                (!ok).then_some(BoundViolation { row: k / self.cols, col: k % self.cols, g, g_min: d.g_min, g_max: d.g_max })
            })
            .collect()
    }

    pub fn checkpoint(&self) -> TileCheckpoint {
        TileCheckpoint {
            rows: self.rows,
            cols: self.cols,
            tile_id: self.tile_id,
            w_max: self.mapping.w_max,
            devices: self.devices.clone(),
            control: self.control.clone(),
            rng_states: self.rngs.iter().map(|r| format!("{:032x}", r.state())).collect(),
        }
    }

    pub fn from_checkpoint(model: Arc<DeviceModel>, ck: TileCheckpoint) -> Result<Self> {
        let n = ck.rows * ck.cols;
        if ck.devices.len() != n || ck.control.len() != n || ck.rng_states.len() != n {
            return Err(Error::Dimension { expected: format!("{n} devices"), got: format!("{}", ck.devices.len()) });
        }
        let mapping = WeightMapping::new(model.scheme.window, ck.w_max)?;
        let rngs = ck
            .rng_states
            .iter()
            .map(|s| {
                u128::from_str_radix(s, 16)
                    .map(Pcg64Mcg::new)
                    .map_err(|e| Error::Config(format!("bad generator state {s:?}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut tile = CrossbarTile {
            model,
            rows: ck.rows,
            cols: ck.cols,
            tile_id: ck.tile_id,
            mapping,
            devices: ck.devices,
            rngs,
            control: ck.control,
            weights: Array2::zeros((ck.rows, ck.cols)),
        };
        tile.weights = tile.read_weights()?;
        Ok(tile)
    }

    /// Mutable access for fault injection in tests and tools; the weight
    /// cache is refreshed afterwards.
    pub fn with_device_mut<F: FnOnce(&mut DeviceState)>(&mut self, row: usize, col: usize, f: F) -> Result<()> {
        if row >= self.rows || col >= self.cols {
            return Err(Error::invalid(format!("device ({row}, {col}) outside {}x{} tile", self.rows, self.cols)));
        }
        let k = row * self.cols + col;
        f(&mut self.devices[k]);
        self.weights[[row, col]] = self.mapping.to_weight(self.model.conductance(self.devices[k].n_d)?);
        Ok(())
    }
}

fn realize(model: &DeviceModel, mapping: &WeightMapping, key: u64, w: f64) -> Result<(DeviceState, Pcg64Mcg, [f64; 2], f64)> {
    let p = &model.params;
    let mid = 0.5 * (p.n_d_min + p.n_d_max);
    let (mut st, rng) = realize_device(p, &model.noise, key, model.scheme.window, [mid, mid])?;
    let control = [st.g_min, st.g_max];
    clip_to_reachable(model, &mut st, control)?;
    let g = mapping.to_conductance(w).clamp(st.g_min, st.g_max);
    st.n_d = n_d_for_conductance(&model.coeffs, p, g, [st.n_d_min, st.n_d_max], model.scheme.v_read)?;
    let w = mapping.to_weight(model.conductance(st.n_d)?);
    Ok((st, rng, control, w))
}

/// Intersects the control bounds with the conductance range the device's
/// own N_d bounds allow.
fn clip_to_reachable(model: &DeviceModel, st: &mut DeviceState, control: [f64; 2]) -> Result<()> {
    let lo = control[0].max(model.conductance(st.n_d_min)?);
    let hi = control[1].min(model.conductance(st.n_d_max)?);
    if !(lo < hi) {
        return Err(Error::Config(format!(
            "device {} has an empty conductance window after clipping to its N_d bounds",
            st.rng_stream_id
        )));
    }
    st.g_min = lo;
    st.g_max = hi;
    Ok(())
}

fn pulse_device(
    model: &DeviceModel,
    dev: &mut DeviceState,
    rng: &mut Pcg64Mcg,
    control: &[f64; 2],
    pol: Polarity,
    n: usize,
) -> Result<PulseStats> {
    let pulse = model.scheme.pulse(pol);
    let moves_bounds = model.noise.n_d_max.is_enabled() || model.noise.n_d_min.is_enabled();
    let mut stats = PulseStats::default();
    for k in 0..n {
        let mut next = dev.clone();
        integrate(&model.coeffs, &model.params, &mut next, pulse, None)?;
        let g = model.conductance(next.n_d)?;
        let outside = match pol {
            Polarity::Set => g > dev.g_max,
            Polarity::Reset => g < dev.g_min,
        };
        if outside {
            stats.skipped += (n - k) as u64;
            break;
        }
        let n_old = dev.n_d;
        *dev = next;
        apply_c2c(&model.params, dev, n_old, pol, &model.noise, rng);
        if moves_bounds && model.noise.has_c2c() {
            clip_to_reachable(model, dev, *control)?;
        }
        stats.applied += 1;
    }
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array1};

    fn model(noise: NoiseSpec) -> Arc<DeviceModel> {
        Arc::new(DeviceModel::new(PhysicalParams::bundled(), FitCoefficients::bundled(), noise, PulseScheme::bundled()).unwrap())
    }

    fn tile(noise: NoiseSpec, w: ArrayView2<f64>) -> CrossbarTile {
        CrossbarTile::new(model(noise), 0, w, 1.0).unwrap()
    }

    #[test]
    fn mapping_endpoints() {
        let m = WeightMapping::new([1.0, 3.0], 0.5).unwrap();
        assert_eq!(m.to_weight(1.0), -0.5);
        assert_eq!(m.to_weight(3.0), 0.5);
        assert_eq!(m.to_weight(2.0), 0.0);
        assert!((m.to_conductance(m.to_weight(2.7)) - 2.7).abs() < 1e-15);
    }

    #[test]
    fn programmed_weights_and_repeat_reads() {
        let w0 = array![[-1.0, 0.0], [0.5, 1.0]];
        let t = tile(NoiseSpec::none(), w0.view());
        let r1 = t.read_weights().unwrap();
        assert_eq!(r1, t.read_weights().unwrap());
        assert_eq!(r1, t.weights());
        for (a, b) in r1.iter().zip(w0.iter()) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn forward_matches_dense_product() {
        let w0 = array![[0.1, -0.2, 0.3], [0.4, 0.0, -0.6]];
        let t = tile(NoiseSpec::none(), w0.view());
        assert_eq!(t.forward(Array1::zeros(3).view()).unwrap(), Array1::<f64>::zeros(2));
        let x = array![0.3, -1.2, 2.0];
        let w = t.read_weights().unwrap();
        let y = t.forward(x.view()).unwrap();
        for i in 0..2 {
            let r: f64 = (0..3).map(|j| w[[i, j]] * x[j]).sum();
            assert!((y[i] - r).abs() <= 1e-12);
        }
        assert!(matches!(t.forward(array![1.0].view()), Err(Error::Dimension { .. })));
    }

    #[test]
    fn zero_update_is_identity() {
        let mut t = tile(NoiseSpec::preset("realistic", None, 4).unwrap(), array![[0.2, -0.3]].view());
        let before = t.checkpoint();
        let s = t.pulsed_update(Array2::zeros((1, 2)).view()).unwrap();
        assert_eq!(s, PulseStats::default());
        assert_eq!(t.checkpoint(), before);
    }

    #[test]
    fn saturated_device_skips() {
        let mut t = tile(NoiseSpec::none(), array![[1.0]].view());
        let before = t.checkpoint();
        let s = t.pulsed_update(array![[0.5]].view()).unwrap();
        assert_eq!(s.applied, 0);
        assert!(s.skipped > 0);
        assert_eq!(t.checkpoint().devices, before.devices);
    }

    #[test]
    fn update_sign_follows_request() {
        let mut t = tile(NoiseSpec::none(), array![[0.0, 0.0]].view());
        let dw = 3.0 * t.dw_per_pulse();
        t.pulsed_update(array![[dw, -dw]].view()).unwrap();
        let w = t.weights();
        assert!(w[[0, 0]] > 0.0 && w[[0, 1]] < 0.0, "{w}");
    }

    #[test]
    fn corrupted_device_is_reported() {
        let mut t = tile(NoiseSpec::none(), Array2::zeros((2, 2)).view());
        assert!(t.enforce_conductance_bounds().is_empty());
        let n_max = t.devices()[3].n_d_max;
        t.with_device_mut(1, 1, |d| d.n_d = n_max).unwrap();
        let v = t.enforce_conductance_bounds();
        assert_eq!(v.len(), 1);
        assert_eq!((v[0].row, v[0].col), (1, 1));
    }

    #[test]
    fn checkpoint_round_trip() {
        let model = model(NoiseSpec::preset("realistic", None, 9).unwrap());
        let mut t = CrossbarTile::new(model.clone(), 3, array![[0.1, -0.4], [0.0, 0.7]].view(), 1.0).unwrap();
        t.pulsed_update(array![[0.05, -0.05], [0.1, 0.02]].view()).unwrap();
        let json = serde_json::to_string(&t.checkpoint()).unwrap();
        let ck: TileCheckpoint = serde_json::from_str(&json).unwrap();
        let mut u = CrossbarTile::from_checkpoint(model, ck).unwrap();
        assert_eq!(u.checkpoint(), t.checkpoint());
        assert_eq!(u.weights(), t.weights());
        let dw = array![[0.03, 0.03], [-0.03, -0.03]];
        t.pulsed_update(dw.view()).unwrap();
        u.pulsed_update(dw.view()).unwrap();
        assert_eq!(u.checkpoint(), t.checkpoint());
    }

    #[test]
    fn scheme_round_trips_through_toml() {
        let s = PulseScheme::bundled();
        assert_eq!(PulseScheme::from_toml_str(&s.to_toml_string()).unwrap(), s);
    }
}
