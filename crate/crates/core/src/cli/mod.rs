//! Batch front end for the `mor` binary.

pub mod manifest;
pub mod mtx;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use crate::error::{MorError, Result};
use crate::fmap::{self, WeightFilter};
use crate::linalg::{c, CMat};
use crate::lti::{self, StateSpace};
use crate::optimality;
use crate::reduce::{self, InitStrategy, Method, ModelFlag, NowiConfig, ReducedModel};

/// Writes through a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let io = |e: std::io::Error| MorError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    };
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.{}.tmp", std::process::id()));
    {
        let mut f = std::fs::File::create(&tmp).map_err(io)?;
        f.write_all(bytes).map_err(io)?;
        f.sync_all().map_err(io)?;
    }
    std::fs::rename(&tmp, path).map_err(|e| {
        let _ = std::fs::remove_file(&tmp);
        io(e)
    })
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| MorError::Io {
        path: dir.display().to_string(),
        message: e.to_string(),
    })
}

/// 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "NaN".into()
    } else {
        format!("{x:.16e}")
    }
}

fn csv_bytes(header: &[&str], rows: &[Vec<String>]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| MorError::Io {
        path: "<csv>".into(),
        message: e.to_string(),
    };
    w.write_record(header).map_err(err)?;
    for r in rows {
        w.write_record(r).map_err(err)?;
    }
    w.into_inner().map_err(|e| MorError::Io {
        path: "<csv>".into(),
        message: e.to_string(),
    })
}

/// Frequency grid `MIN:MAX:POINTS`; logarithmic unless `MIN = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub min: f64,
    pub max: f64,
    pub points: usize,
}

impl Default for Grid {
    fn default() -> Self {
        Grid {
            min: 1e-4,
            max: 1e4,
            points: 1000,
        }
    }
}

impl std::str::FromStr for Grid {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 3 {
            return Err("grid must be MIN:MAX:POINTS".into());
        }
        let min: f64 = parts[0].parse().map_err(|_| format!("bad MIN '{}'", parts[0]))?;
        let max: f64 = parts[1].parse().map_err(|_| format!("bad MAX '{}'", parts[1]))?;
        let points: usize = parts[2].parse().map_err(|_| format!("bad POINTS '{}'", parts[2]))?;
        if !(min >= 0.0 && min < max && max.is_finite()) {
            return Err("grid needs 0 <= MIN < MAX".into());
        }
        if points < 2 {
            return Err("grid needs at least 2 points".into());
        }
        Ok(Grid { min, max, points })
    }
}

impl Grid {
    pub fn omegas(&self) -> Vec<f64> {
        if self.min == 0.0 {
            lti::linear_grid(self.min, self.max, self.points)
        } else {
            lti::log_grid(self.min, self.max, self.points)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InitArg {
    Mirrored,
    Log,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Toggle {
    On,
    Off,
}

fn parse_list<T: std::str::FromStr>(s: &str) -> std::result::Result<Vec<T>, String> {
    s.split(',')
        .map(|t| t.trim().parse::<T>().map_err(|_| format!("bad list entry '{t}'")))
        .collect()
}

fn parse_orders(s: &str) -> std::result::Result<Vec<usize>, String> {
    parse_list(s)
}

fn parse_methods(s: &str) -> std::result::Result<Vec<Method>, String> {
    s.split(',')
        .map(|t| match t.trim() {
            "nowi" => Ok(Method::Nowi),
            "fwbt" => Ok(Method::Fwbt),
            other => Err(format!("unknown method '{other}'")),
        })
        .collect()
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// nowi, fwbt, or a comma list for sweep
    #[arg(long, default_value = "nowi", value_parser = parse_methods)]
    pub method: std::vec::Vec<Method>,
    /// reduced order, or a comma list for sweep
    #[arg(long, value_parser = parse_orders)]
    pub order: Option<std::vec::Vec<usize>>,
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    #[arg(long = "max-iter", default_value_t = 100)]
    pub max_iter: usize,
    #[arg(long, value_enum, default_value_t = InitArg::Mirrored)]
    pub init: InitArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// default: on when the weight order does not exceed the system order and the order plus rank(Z) fits in it
    #[arg(long, value_enum)]
    pub exactness: Option<Toggle>,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    #[arg(long)]
    pub grid: Option<Grid>,
    /// directory holding model.{A,B,C,D}.mtx
    #[arg(long)]
    pub model: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Reduce to one order; writes the model, report.csv and history.csv.
    Reduce(RunArgs),
    /// One row per (method, order) in sweep.csv.
    Sweep(RunArgs),
    /// Interpolatory and Halevi residuals of a reduced model.
    Residuals(RunArgs),
    /// Frequency response norms on a grid.
    Sample(RunArgs),
}

#[derive(Debug, Parser)]
#[command(name = "mor", about = "Frequency-weighted H2 model reduction")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub methods: Vec<Method>,
    pub orders: Vec<usize>,
    pub nowi: NowiConfig,
    pub out: PathBuf,
    pub grid: Grid,
}

impl RunArgs {
    fn config(&self, n: usize, require_order: bool) -> Result<RunConfig> {
        let orders = self.order.clone().unwrap_or_default();
        if require_order && orders.is_empty() {
            return Err(MorError::Usage("--order is required".into()));
        }
        for &o in &orders {
            if o == 0 || o > n {
                return Err(MorError::Usage(format!("order {o} must lie in 1..={n}")));
            }
        }
        if !(self.tol > 0.0) {
            return Err(MorError::Usage("--tol must be positive".into()));
        }
        if self.max_iter == 0 {
            return Err(MorError::Usage("--max-iter must be positive".into()));
        }
        let mut nowi = NowiConfig::new(orders.first().cloned().unwrap_or(1));
        nowi.tol = self.tol;
        nowi.max_iter = self.max_iter;
        nowi.init = match self.init {
            InitArg::Mirrored => InitStrategy::MirroredDominant,
            InitArg::Log => InitStrategy::LogSpaced,
            InitArg::Random => InitStrategy::Random(self.seed),
        };
        nowi.exactness = self.exactness.map(|t| t == Toggle::On);
        nowi.track_error = true;
        Ok(RunConfig {
            methods: self.method.clone(),
            orders,
            nowi,
            out: self.out.clone(),
            grid: self.grid.clone().unwrap_or_default(),
        })
    }
}

/// Error metrics of one reduced model.
#[derive(Debug, Clone)]
pub struct Metrics {
    pub weighted_error: f64,
    pub relative_weighted_error: f64,
    pub hinf_error: f64,
    pub relative_hinf_error: f64,
    pub max_interpolatory_relative: f64,
}

fn spectral_norm(m: &CMat) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().svd(false, false).singular_values.max()
}

/// `max_ω ‖(G - G_r)(iω) W(iω)‖₂` and `max_ω ‖G(iω) W(iω)‖₂`.
pub fn sampled_weighted_hinf(g: &StateSpace, g_r: &StateSpace, w: &WeightFilter, omegas: &[f64]) -> Result<(f64, f64)> {
    let vals: Vec<Result<(f64, f64)>> = omegas
        .par_iter()
        .map(|&om| {
            let s = c(0.0, om);
            let wv = w.eval(s)?;
            let gv = g.eval(s)?;
            let e = (&gv - g_r.eval(s)?) * &wv;
            Ok((spectral_norm(&e), spectral_norm(&(gv * wv))))
        })
        .collect();
    let mut err = 0.0f64;
    let mut full = 0.0f64;
    for v in vals {
        let (e, f) = v?;
        err = err.max(e);
        full = full.max(f);
    }
    Ok((err, full))
}

pub fn metrics(g: &StateSpace, w: &WeightFilter, model: &ReducedModel, grid: &Grid) -> Result<Metrics> {
    let err = fmap::weighted_error_norm(g, &model.system, w)?;
    let norm = fmap::weighted_norm(g, w)?;
    let (hinf, full) = sampled_weighted_hinf(g, &model.system, w, &grid.omegas())?;
    let interp = match &model.diagnostics {
        Some(d) => d.max_interpolatory_relative(),
        None => optimality::interpolatory_residuals(g, &model.system, w)
            .map(|r| r.max_interpolatory_relative())
            .unwrap_or(f64::NAN),
    };
    Ok(Metrics {
        weighted_error: err,
        relative_weighted_error: if norm > 0.0 { err / norm } else { err },
        hinf_error: hinf,
        relative_hinf_error: if full > 0.0 { hinf / full } else { hinf },
        max_interpolatory_relative: interp,
    })
}

pub fn reduce_with(g: &StateSpace, w: &WeightFilter, method: Method, order: usize, cfg: &NowiConfig) -> Result<ReducedModel> {
    match method {
        Method::Nowi => {
            let mut c = cfg.clone();
            c.order = order;
            reduce::nowi(g, w, &c, None)
        }
        Method::Fwbt => reduce::fwbt(g, w, order),
    }
}

fn flag_names(flags: &[ModelFlag]) -> String {
    flags.iter().map(|f| format!("{f:?}")).collect::<Vec<_>>().join(";")
}

pub const REPORT_HEADER: [&str; 13] = [
    "method",
    "n_r",
    "order",
    "weighted_h2_error",
    "relative_weighted_h2_error",
    "weighted_hinf_error_sampled",
    "relative_weighted_hinf_error_sampled",
    "max_relative_interpolatory_residual",
    "iterations",
    "converged",
    "flags",
    "wall_time_s",
    "status",
];

pub fn cmd_reduce(args: &RunArgs) -> Result<PathBuf> {
    let (g, w) = manifest::load_manifest(&args.manifest)?;
    let cfg = args.config(g.order(), true)?;
    if cfg.orders.len() != 1 || cfg.methods.len() != 1 {
        return Err(MorError::Usage("reduce takes a single --order and --method; use sweep for lists".into()));
    }
    let (method, order) = (cfg.methods[0], cfg.orders[0]);
    ensure_dir(&cfg.out)?;
    let start = Instant::now();
    let model = reduce_with(&g, &w, method, order, &cfg.nowi)?;
    let elapsed = start.elapsed().as_secs_f64();
    let m = metrics(&g, &w, &model, &cfg.grid)?;
    manifest::write_model_dir(&cfg.out, &model.system)?;
    let row = vec![
        method.name().to_string(),
        order.to_string(),
        model.order().to_string(),
        fmt_f64(m.weighted_error),
        fmt_f64(m.relative_weighted_error),
        fmt_f64(m.hinf_error),
        fmt_f64(m.relative_hinf_error),
        fmt_f64(m.max_interpolatory_relative),
        model.iterations.to_string(),
        model.converged.to_string(),
        flag_names(&model.flags),
        fmt_f64(elapsed),
        "ok".into(),
    ];
    write_atomic(&cfg.out.join("report.csv"), &csv_bytes(&REPORT_HEADER, &[row])?)?;
    let hist: Vec<Vec<String>> = model
        .history
        .iter()
        .map(|h| {
            vec![
                h.iteration.to_string(),
                fmt_f64(h.shift_change),
                fmt_f64(h.max_interpolatory_relative.unwrap_or(f64::NAN)),
                fmt_f64(h.weighted_error.unwrap_or(f64::NAN)),
                h.shifts
                    .iter()
                    .map(|s| format!("{}{:+.16e}i", fmt_f64(s.re), s.im))
                    .collect::<Vec<_>>()
                    .join(" "),
            ]
        })
        .collect();
    write_atomic(
        &cfg.out.join("history.csv"),
        &csv_bytes(
            &["iteration", "shift_change", "max_relative_interpolatory_residual", "weighted_h2_error", "shifts"],
            &hist,
        )?,
    )?;
    Ok(cfg.out.clone())
}

pub const SWEEP_HEADER: [&str; 10] = [
    "method",
    "n_r",
    "order",
    "relative_weighted_h2_error",
    "relative_weighted_hinf_error_sampled",
    "max_relative_interpolatory_residual",
    "iterations",
    "converged",
    "flags",
    "status",
];

pub fn cmd_sweep(args: &RunArgs) -> Result<PathBuf> {
    let (g, w) = manifest::load_manifest(&args.manifest)?;
    let cfg = args.config(g.order(), true)?;
    ensure_dir(&cfg.out)?;
    let jobs: Vec<(Method, usize)> = cfg
        .methods
        .iter()
        .flat_map(|&m| cfg.orders.iter().map(move |&o| (m, o)))
        .collect();
    let rows: Vec<Vec<String>> = jobs
        .par_iter()
        .map(|&(method, order)| {
            let run = reduce_with(&g, &w, method, order, &cfg.nowi)
                .and_then(|model| metrics(&g, &w, &model, &cfg.grid).map(|m| (model, m)));
            match run {
                Ok((model, m)) => vec![
                    method.name().into(),
                    order.to_string(),
                    model.order().to_string(),
                    fmt_f64(m.relative_weighted_error),
                    fmt_f64(m.relative_hinf_error),
                    fmt_f64(m.max_interpolatory_relative),
                    model.iterations.to_string(),
                    model.converged.to_string(),
                    flag_names(&model.flags),
                    "ok".into(),
                ],
                Err(e) => {
                    let mut r = vec![method.name().into(), order.to_string()];
                    r.extend(std::iter::repeat_n(String::new(), 7));
                    r.push(e.kind().to_string());
                    r
                }
            }
        })
        .collect();
    let path = cfg.out.join("sweep.csv");
    write_atomic(&path, &csv_bytes(&SWEEP_HEADER, &rows)?)?;
    Ok(path)
}

pub fn cmd_residuals(args: &RunArgs) -> Result<PathBuf> {
    let (g, w) = manifest::load_manifest(&args.manifest)?;
    let dir = args
        .model
        .clone()
        .ok_or_else(|| MorError::Usage("--model DIR is required".into()))?;
    let g_r = manifest::load_model_dir(&dir)?;
    let cfg = args.config(g.order(), false)?;
    ensure_dir(&cfg.out)?;
    let report = optimality::full_report(&g, &g_r, &w)?;
    let mut rows = Vec::new();
    let mut push = |family: &str, name: String, s: Option<num_complex::Complex64>, r: &optimality::Residual| {
        rows.push(vec![
            family.to_string(),
            name,
            s.map_or(String::new(), |s| fmt_f64(s.re)),
            s.map_or(String::new(), |s| fmt_f64(s.im)),
            fmt_f64(r.absolute),
            fmt_f64(r.relative),
            r.normalizer_underflow.to_string(),
        ]);
    };
    for (k, sr) in report.shifts.iter().enumerate() {
        push("interpolatory", format!("right[{k}]"), Some(sr.shift), &sr.right);
        push("interpolatory", format!("left[{k}]"), Some(sr.shift), &sr.left);
        push("interpolatory", format!("bitangential[{k}]"), Some(sr.shift), &sr.bitangential);
    }
    push("interpolatory", "kernel".into(), None, &report.kernel);
    if let Some(h) = &report.halevi {
        for (name, r) in h.as_array() {
            push("halevi", name.to_string(), None, &r);
        }
    }
    let path = cfg.out.join("residuals.csv");
    write_atomic(
        &path,
        &csv_bytes(
            &["family", "name", "shift_re", "shift_im", "absolute", "relative", "absolute_fallback"],
            &rows,
        )?,
    )?;
    Ok(path)
}

pub fn cmd_sample(args: &RunArgs) -> Result<PathBuf> {
    let (g, w) = manifest::load_manifest(&args.manifest)?;
    let g_r = args.model.as_deref().map(manifest::load_model_dir).transpose()?;
    let cfg = args.config(g.order(), false)?;
    ensure_dir(&cfg.out)?;
    let omegas = cfg.grid.omegas();
    let rows: Vec<Result<Vec<String>>> = omegas
        .par_iter()
        .map(|&om| {
            let s = c(0.0, om);
            let gv = g.eval(s)?;
            let wv = w.eval(s)?;
            let mut r = vec![fmt_f64(om), fmt_f64(spectral_norm(&gv)), fmt_f64(spectral_norm(&wv))];
            if let Some(gr) = &g_r {
                let rv = gr.eval(s)?;
                r.push(fmt_f64(spectral_norm(&rv)));
                r.push(fmt_f64(spectral_norm(&((&gv - rv) * &wv))));
            }
            Ok(r)
        })
        .collect();
    let rows: Vec<Vec<String>> = rows.into_iter().collect::<Result<_>>()?;
    let mut header = vec!["omega", "g", "w"];
    if g_r.is_some() {
        header.extend(["g_r", "weighted_error"]);
    }
    let path = cfg.out.join("freqresp.csv");
    write_atomic(&path, &csv_bytes(&header, &rows)?)?;
    Ok(path)
}

pub fn execute(cli: &Cli) -> Result<PathBuf> {
    match &cli.command {
        Command::Reduce(a) => cmd_reduce(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Residuals(a) => cmd_residuals(a),
        Command::Sample(a) => cmd_sample(a),
    }
}

/// Machine-readable error line for stderr.
pub fn error_line(e: &MorError) -> String {
    serde_json::json!({
        "error": e.kind(),
        "message": e.to_string(),
        "exit_code": e.exit_code(),
    })
    .to_string()
}

/// Caps the global thread pool from `MOR_THREADS`.
pub fn init_threads() {
    if let Some(n) = std::env::var("MOR_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if n > 0 {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
}

/// Parses `args` (program name first), runs, and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return 0;
            }
            let _ = e.print();
            eprintln!("{}", error_line(&MorError::Usage(e.kind().to_string())));
            return 2;
        }
    };
    match execute(&cli) {
        Ok(path) => {
            println!("{}", path.display());
            0
        }
        Err(e) => {
            eprintln!("{}", error_line(&e));
            e.exit_code()
        }
    }
}
