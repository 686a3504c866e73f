#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use vcm_sim::config::{BackendKind, DeviceFiles, NoiseSelection, RunConfig};
use vcm_sim::crossbar::{DeviceModel, PulseScheme};
use vcm_sim::dynamics::{match_over_durations, switching_curve, PulseSpec, DEFAULT_V_READ};
use vcm_sim::fit::{calibrate, CalibrationGrid, CalibrationOptions};
use vcm_sim::mnist::load_mnist;
use vcm_sim::trainer::{train, Backend};
use vcm_sim::{DeviceState, Error};

#[derive(Parser)]
#[command(name = "vcm-sim", version, about = "VCM device, crossbar and training simulator")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Args, Clone)]
struct DeviceArgs {
    /// Physical parameter file (default: bundled).
    #[arg(long)]
    params: Option<PathBuf>,
    /// Surrogate coefficient file (default: bundled).
    #[arg(long)]
    coeffs: Option<PathBuf>,
}

impl DeviceArgs {
    fn files(&self, scheme: Option<PathBuf>) -> DeviceFiles {
        DeviceFiles { params: self.params.clone(), coeffs: self.coeffs.clone(), scheme }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Switching curves for every (amplitude, duration) pair.
    Sweep {
        #[command(flatten)]
        device: DeviceArgs,
        /// Amplitudes in V: comma list, entries may be `start:stop:count`.
        #[arg(long, allow_hyphen_values = true)]
        amplitudes: String,
        /// Durations in s, same syntax.
        #[arg(long)]
        durations: String,
        #[arg(long, default_value_t = 100)]
        pulses: usize,
        /// Initial N_d (default: lower bound for SET, upper bound for RESET).
        #[arg(long)]
        n0: Option<f64>,
        #[arg(long, default_value_t = DEFAULT_V_READ, allow_hyphen_values = true)]
        v_read: f64,
        #[arg(long, default_value = "out/sweep")]
        out: PathBuf,
    },
    /// Finds the RESET amplitude whose trajectory retraces the SET one.
    Match {
        #[command(flatten)]
        device: DeviceArgs,
        #[arg(long, allow_hyphen_values = true)]
        set_amplitude: f64,
        #[arg(long)]
        set_duration: f64,
        /// Candidate RESET durations (list syntax as in `sweep`); default: the SET duration.
        #[arg(long)]
        reset_durations: Option<String>,
        /// Search interval for the RESET amplitude, `lo,hi` in V.
        #[arg(long, default_value = "0.3,1.0")]
        reset_range: String,
        /// Conductance window `g_min,g_max` in S.
        #[arg(long)]
        window: String,
        #[arg(long, default_value_t = DEFAULT_V_READ, allow_hyphen_values = true)]
        v_read: f64,
        #[arg(long, default_value_t = 0.01)]
        max_dnd_fraction: f64,
        /// Output pulse-scheme fragment (TOML).
        #[arg(long, default_value = "out/matched_scheme.toml")]
        out: PathBuf,
    },
    /// Fits the surrogate coefficients against the full model.
    Calibrate {
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 8)]
        starts: usize,
        #[arg(long, default_value_t = 51)]
        v_points: usize,
        #[arg(long, default_value_t = 51)]
        n_points: usize,
        /// Output directory for `coefficients.coeffs` and `calibration.toml`.
        #[arg(long, default_value = "out/calibration")]
        out: PathBuf,
    },
    /// Trains the MNIST classifier.
    Train {
        /// Run configuration (TOML); flags override its fields.
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        device: DeviceArgs,
        /// Matched pulse scheme (default: bundled).
        #[arg(long)]
        scheme: Option<PathBuf>,
        #[arg(long, value_enum)]
        backend: Option<BackendKind>,
        /// Noise preset (none, realistic, d2d-rd, c2c-rd, ...).
        #[arg(long)]
        noise: Option<String>,
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        data_dir: Option<PathBuf>,
        #[arg(long, default_value = "out/train")]
        out: PathBuf,
    },
}

enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e)
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn usage<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(Failure::Usage(msg.into()))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be >= 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    let res = match cli.cmd {
        Command::Sweep { device, amplitudes, durations, pulses, n0, v_read, out } => {
            cmd_sweep(&device, &amplitudes, &durations, pulses, n0, v_read, &out)
        }
        Command::Match { device, set_amplitude, set_duration, reset_durations, reset_range, window, v_read, max_dnd_fraction, out } => {
            cmd_match(&device, set_amplitude, set_duration, reset_durations.as_deref(), &reset_range, &window, v_read, max_dnd_fraction, &out)
        }
        Command::Calibrate { params, seed, starts, v_points, n_points, out } => cmd_calibrate(params, seed, starts, v_points, n_points, &out),
        Command::Train { config, device, scheme, backend, noise, sigma, seed, epochs, data_dir, out } => {
            cmd_train(config, &device, scheme, backend, noise, sigma, seed, epochs, data_dir, &out)
        }
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

/// Parses `a,b,start:stop:count,...`.
fn parse_values(s: &str, what: &str) -> CliResult<Vec<f64>> {
    let mut out = Vec::new();
    for tok in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        let num = |t: &str| t.trim().parse::<f64>().ok().filter(|v| v.is_finite());
        let parts: Vec<&str> = tok.split(':').collect();
        match parts.as_slice() {
            [v] => out.push(num(v).ok_or_else(|| Failure::Usage(format!("bad {what} value `{v}`")))?),
            [a, b, n] => {
                let (a, b) = match (num(a), num(b)) {
                    (Some(a), Some(b)) => (a, b),
                    _ => return usage(format!("bad {what} range `{tok}`")),
                };
                let n: usize = n.parse().map_err(|_| Failure::Usage(format!("bad count in `{tok}`")))?;
                match n {
                    0 => return usage(format!("empty {what} range `{tok}`")),
                    1 => out.push(a),
                    _ => out.extend((0..n).map(|k| a + (b - a) * k as f64 / (n - 1) as f64)),
                }
            }
            _ => return usage(format!("bad {what} entry `{tok}`")),
        }
    }
    if out.is_empty() {
        return usage(format!("empty {what} list"));
    }
    Ok(out)
}

fn parse_pair(s: &str, what: &str) -> CliResult<[f64; 2]> {
    let v = parse_values(s, what)?;
    match v.as_slice() {
        [a, b] if a < b => Ok([*a, *b]),
        _ => usage(format!("{what} must be two increasing values `lo,hi`")),
    }
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| Failure::Runtime(Error::Io { path: dir.to_path_buf(), source: e }))
}

fn create_file(path: &Path) -> CliResult<BufWriter<File>> {
    if let Some(p) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(p)?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| Failure::Runtime(Error::Io { path: path.to_path_buf(), source: e }))
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Failure + '_ {
    move |e| Failure::Runtime(Error::Io { path: path.to_path_buf(), source: e })
}

fn write_meta(w: &mut impl Write, meta: &BTreeMap<&str, String>) -> std::io::Result<()> {
    for (k, v) in meta {
        writeln!(w, "# {k} = {v:?}")?;
    }
    Ok(())
}

fn cmd_sweep(device: &DeviceArgs, amps: &str, durs: &str, pulses: usize, n0: Option<f64>, v_read: f64, out: &Path) -> CliResult<()> {
    let amps = parse_values(amps, "amplitude")?;
    let durs = parse_values(durs, "duration")?;
    if pulses == 0 {
        return usage("--pulses must be >= 1");
    }
    if amps.contains(&0.0) || durs.iter().any(|d| *d <= 0.0) {
        return usage("amplitudes must be nonzero and durations positive");
    }
    let files = device.files(None);
    let params = files.load_params()?;
    let coeffs = files.load_coeffs()?;
    let p = &params.value;
    create_dir(out)?;
    for &a in &amps {
        for &d in &durs {
            let n_start = n0.unwrap_or(if a < 0.0 { p.n_d_min } else { p.n_d_max });
            let st = DeviceState::nominal(p, n_start, 0.0, f64::INFINITY);
            let curve = switching_curve(&coeffs.value, p, &st, &PulseSpec::new(a, d), pulses, v_read)?;
            let path = out.join(format!("sweep_V{a:+.4}_t{d:.4e}.csv"));
            let mut w = create_file(&path)?;
            let meta = BTreeMap::from([
                ("amplitude_v", a.to_string()),
                ("duration_s", d.to_string()),
                ("n0", n_start.to_string()),
                ("v_read", v_read.to_string()),
                ("params", params.origin.clone()),
                ("params_sha256", params.sha256.clone()),
                ("coeffs", coeffs.origin.clone()),
                ("coeffs_sha256", coeffs.sha256.clone()),
            ]);
            (|| -> std::io::Result<()> {
                write_meta(&mut w, &meta)?;
                writeln!(w, "pulse_index,N_d,G")?;
                for (k, n, g) in curve.iter().skip(1) {
                    writeln!(w, "{k},{n:e},{g:e}")?;
                }
                w.flush()
            })()
            .map_err(io_err(&path))?;
            println!("{}", path.display());
        }
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_match(
    device: &DeviceArgs,
    set_amplitude: f64,
    set_duration: f64,
    reset_durations: Option<&str>,
    reset_range: &str,
    window: &str,
    v_read: f64,
    max_dnd_fraction: f64,
    out: &Path,
) -> CliResult<()> {
    let range = parse_pair(reset_range, "--reset-range")?;
    let window = parse_pair(window, "--window")?;
    if !(set_amplitude < 0.0) {
        return usage("--set-amplitude must be negative");
    }
    let mut set = PulseSpec::new(set_amplitude, set_duration);
    set.max_dnd_fraction = max_dnd_fraction;
    let durations = match reset_durations {
        Some(s) => parse_values(s, "RESET duration")?,
        None => vec![set_duration],
    };
    if set.validate().is_err() || durations.iter().any(|d| !(*d > 0.0)) {
        return usage("pulse durations must be positive and max_dnd_fraction in (0, 1]");
    }
    let files = device.files(None);
    let params = files.load_params()?;
    let coeffs = files.load_coeffs()?;
    let (reset, curves) = match_over_durations(&coeffs.value, &params.value, &set, &durations, range, window, v_read)?;
    let score = curves.score();
    let scheme = PulseScheme { set, reset, window, v_read };
    let mut w = create_file(out)?;
    let meta = BTreeMap::from([
        ("rms_gap", score.to_string()),
        ("max_gap", curves.max_gap().to_string()),
        ("pulses", (curves.set.len() - 1).to_string()),
        ("params_sha256", params.sha256.clone()),
        ("coeffs_sha256", coeffs.sha256.clone()),
    ]);
    (|| -> std::io::Result<()> {
        write_meta(&mut w, &meta)?;
        w.write_all(scheme.to_toml_string().as_bytes())?;
        w.flush()
    })()
    .map_err(io_err(out))?;
    println!(
        "RESET amplitude {:.6} V, max gap {:.4} %, rms gap {:.4} %, {} pulses -> {}",
        reset.amplitude,
        100.0 * curves.max_gap(),
        100.0 * score,
        curves.set.len() - 1,
        out.display()
    );
    Ok(())
}

fn cmd_calibrate(params: Option<PathBuf>, seed: u64, starts: usize, v_points: usize, n_points: usize, out: &Path) -> CliResult<()> {
    if starts == 0 || v_points < 3 || n_points < 3 {
        return usage("--starts must be >= 1 and grids need at least 3 points per axis");
    }
    let files = DeviceFiles { params, ..Default::default() };
    let params = files.load_params()?;
    let mut grid = CalibrationGrid::default_for(&params.value);
    grid.v_points = v_points;
    grid.n_points = n_points;
    let opts = CalibrationOptions { starts, ..CalibrationOptions::new(seed) };
    let (coeffs, report) = calibrate(&params.value, &grid, &opts)?;
    create_dir(out)?;
    let cpath = out.join("coefficients.coeffs");
    let header = format!("# params_sha256 = {}\n# seed = {seed}\n", params.sha256);
    fs::write(&cpath, header + &coeffs.to_kv_string()).map_err(io_err(&cpath))?;
    let rpath = out.join("calibration.toml");
    let report_text = format!("# params_sha256 = {:?}\n{}", params.sha256, report.to_toml());
    fs::write(&rpath, report_text).map_err(io_err(&rpath))?;
    println!(
        "held-out max {:.3} %, mean {:.4} % -> {}",
        100.0 * report.held_out.max_rel(),
        100.0 * report.held_out.mean_rel(),
        cpath.display()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_train(
    config: Option<PathBuf>,
    device: &DeviceArgs,
    scheme: Option<PathBuf>,
    backend: Option<BackendKind>,
    noise: Option<String>,
    sigma: Option<f64>,
    seed: Option<u64>,
    epochs: Option<usize>,
    data_dir: Option<PathBuf>,
    out: &Path,
) -> CliResult<()> {
    let mut cfg = match &config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if device.params.is_some() {
        cfg.device.params = device.params.clone();
    }
    if device.coeffs.is_some() {
        cfg.device.coeffs = device.coeffs.clone();
    }
    if scheme.is_some() {
        cfg.device.scheme = scheme;
    }
    if let Some(b) = backend {
        cfg.backend = b;
    }
    if let Some(n) = noise {
        cfg.noise = NoiseSelection { preset: n, sigma: cfg.noise.sigma };
    }
    if sigma.is_some() {
        cfg.noise.sigma = sigma;
    }
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    if let Some(e) = epochs {
        cfg.train.epochs = e;
    }
    if let Some(d) = data_dir {
        cfg.data_dir = d;
    }
    if let Err(e) = cfg.train.validate() {
        return usage(e.to_string());
    }
    let noise_spec = cfg.noise.resolve(cfg.train.seed).map_err(|e| Failure::Usage(e.to_string()))?;
    let params = cfg.device.load_params()?;
    let coeffs = cfg.device.load_coeffs()?;
    let sch = cfg.device.load_scheme()?;
    let data = load_mnist(&cfg.data_dir)?;
    let backend = match cfg.backend {
        BackendKind::Fp => Backend::FloatingPoint,
        BackendKind::Analog => Backend::Analog(Arc::new(DeviceModel::new(params.value.clone(), coeffs.value.clone(), noise_spec, sch.value)?)),
    };
    let mut result = train(&cfg.train, &data, &backend, |e| {
        eprintln!("epoch {:>3}  lr {:.4}  loss {:.5}  test acc {:.4}  pulses {} (+{} skipped)", e.epoch, e.learning_rate, e.loss, e.test_acc, e.pulses_applied, e.pulses_skipped)
    })?;
    result.metadata.insert("params".into(), params.origin);
    result.metadata.insert("params_sha256".into(), params.sha256);
    result.metadata.insert("coeffs".into(), coeffs.origin);
    result.metadata.insert("coeffs_sha256".into(), coeffs.sha256);
    result.metadata.insert("scheme".into(), sch.origin);
    result.metadata.insert("scheme_sha256".into(), sch.sha256);
    result.metadata.insert("noise".into(), cfg.noise.preset.clone());
    result.metadata.insert("sigma".into(), cfg.noise.sigma.map(|s| s.to_string()).unwrap_or_else(|| "default".into()));
    result.metadata.insert("seed".into(), cfg.train.seed.to_string());
    result.metadata.insert("run_config".into(), cfg.to_toml_string());
    let name = format!("run_{}_{}_seed{}.csv", cfg.backend.name(), cfg.noise.preset, cfg.train.seed);
    let path = out.join(name);
    let mut w = create_file(&path)?;
    result.write_csv(&mut w).and_then(|_| w.flush()).map_err(io_err(&path))?;
    println!("final test accuracy {:.4} -> {}", result.final_accuracy, path.display());
    Ok(())
}
