//! Config files, commands and CSV output.
//!
//! A config is INI text. Every key belongs to a section; unknown keys and
//! sections are rejected, as are out-of-range values, with the offending
//! `section.key` named in the error.
//!
//! ```text
//! [domain]   r_inner r_outer nr ntheta [B]
//! [time]     dt t_end [theta=1] [stride=1]
//! [weight]   rho [eps = window midpoint when rho > rho0]
//! [nonlinearity] [a=0] [b=0] [p=2] [q=2]
//! [init]     [u0_amplitude=1] [u0_support] [u1_amplitude=0] [u1_support]
//! [constants] [C0=1]
//! [output]   [path=sdwave_out.csv] [format=csv]
//! [mode]     [command=simulate]
//! [sweep]    [p] [q] [rho] [u0_amplitude]      comma separated lists
//! [fit]      [columns=E_higher] [t_a] [t_b] [input]
//! [mms]      [levels=3] [rate=0.5] [k=2]
//! [gn]       [m=4,6,10] [samples=100] [seed=1] [refinements=2]
//! [check]    [t_samples=50] [r_samples=50]
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::Parser;
use ini::Ini;
use rayon::prelude::*;

use crate::energetics::{fit_decay_exponent, DiagnosticsRow};
use crate::error::{Error, Result};
use crate::grid::{self, build_annulus, PolarGrid};
use crate::inequality_lab::{gn_ratio, random_fields};
use crate::solver::{
    self, initial_bump, MmsProblem, NonlinearityParams, RunStatus, SimSetup, State, TimeScheme,
    DEFAULT_BLOWUP_THRESHOLD,
};
use crate::weight::{check_pointwise, epsilon_window, rho0_constant, WeightParams};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_BLOWUP: i32 = 2;
pub const EXIT_INVALID_CONFIG: i32 = 3;
pub const EXIT_NONCONVERGENCE: i32 = 4;

/// Outer-ring amplitude above this fraction of `sup |u|` triggers a warning.
pub const TRUNCATION_WARN_RATIO: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Mode {
    Simulate,
    Mms,
    CheckWeight,
    CheckGn,
    FitDecay,
    Sweep,
}

impl Mode {
    pub fn name(&self) -> &'static str {
        match self {
            Mode::Simulate => "simulate",
            Mode::Mms => "mms",
            Mode::CheckWeight => "check-weight",
            Mode::CheckGn => "check-gn",
            Mode::FitDecay => "fit-decay",
            Mode::Sweep => "sweep",
        }
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim() {
            "simulate" => Mode::Simulate,
            "mms" => Mode::Mms,
            "check-weight" => Mode::CheckWeight,
            "check-gn" => Mode::CheckGn,
            "fit-decay" => Mode::FitDecay,
            "sweep" => Mode::Sweep,
            other => {
                return Err(Error::config(
                    "mode.command",
                    format!("unknown mode `{other}` (simulate, mms, check-weight, check-gn, fit-decay, sweep)"),
                ))
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DomainConfig {
    pub r_inner: f64,
    pub r_outer: f64,
    pub nr: usize,
    pub ntheta: usize,
    pub b: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeConfig {
    pub dt: f64,
    pub t_end: f64,
    pub theta: f64,
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightConfig {
    pub rho: f64,
    /// `None` only when the window is empty.
    pub eps: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NonlinearityConfig {
    pub a: f64,
    pub b: f64,
    pub p: f64,
    pub q: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitConfig {
    pub u0_amplitude: f64,
    pub u0_support: (f64, f64),
    pub u1_amplitude: f64,
    pub u1_support: (f64, f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputConfig {
    pub path: PathBuf,
    pub format: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SweepConfig {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub rho: Vec<f64>,
    pub u0_amplitude: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub columns: Vec<String>,
    pub t_a: f64,
    pub t_b: f64,
    /// Diagnostics CSV to fit; a fresh simulation when absent.
    pub input: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MmsConfig {
    pub levels: usize,
    pub rate: f64,
    pub k: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GnConfig {
    pub m: Vec<f64>,
    pub samples: usize,
    pub seed: u64,
    pub refinements: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckConfig {
    pub t_samples: usize,
    pub r_samples: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub domain: DomainConfig,
    pub time: TimeConfig,
    pub weight: WeightConfig,
    pub nonlinearity: NonlinearityConfig,
    pub init: InitConfig,
    pub c0: f64,
    pub output: OutputConfig,
    pub mode: Mode,
    pub sweep: SweepConfig,
    pub fit: FitConfig,
    pub mms: MmsConfig,
    pub gn: GnConfig,
    pub check: CheckConfig,
}

const KNOWN_KEYS: &[(&str, &[&str])] = &[
    ("domain", &["r_inner", "r_outer", "nr", "ntheta", "B"]),
    ("time", &["dt", "t_end", "theta", "stride"]),
    ("weight", &["rho", "eps"]),
    ("nonlinearity", &["a", "b", "p", "q"]),
    (
        "init",
        &["u0_amplitude", "u0_support", "u1_amplitude", "u1_support"],
    ),
    ("constants", &["C0"]),
    ("output", &["path", "format"]),
    ("mode", &["command"]),
    ("sweep", &["p", "q", "rho", "u0_amplitude"]),
    ("fit", &["columns", "t_a", "t_b", "input"]),
    ("mms", &["levels", "rate", "k"]),
    ("gn", &["m", "samples", "seed", "refinements"]),
    ("check", &["t_samples", "r_samples"]),
];

struct Entries(BTreeMap<String, String>);

impl Entries {
    fn raw(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }

    fn parse<T: FromStr>(&self, key: &str, what: &str) -> Result<Option<T>> {
        self.raw(key)
            .map(|s| {
                s.trim()
                    .parse::<T>()
                    .map_err(|_| Error::config(key, format!("`{s}` is not {what}")))
            })
            .transpose()
    }

    fn f64(&self, key: &str) -> Result<Option<f64>> {
        match self.parse::<f64>(key, "a number")? {
            Some(x) if !x.is_finite() => Err(Error::config(key, "must be finite")),
            other => Ok(other),
        }
    }

    fn req_f64(&self, key: &str) -> Result<f64> {
        self.f64(key)?
            .ok_or_else(|| Error::config(key, "missing required key"))
    }

    fn usize(&self, key: &str) -> Result<Option<usize>> {
        self.parse::<usize>(key, "a nonnegative integer")
    }

    fn req_usize(&self, key: &str) -> Result<usize> {
        self.usize(key)?
            .ok_or_else(|| Error::config(key, "missing required key"))
    }

    fn f64_list(&self, key: &str) -> Result<Vec<f64>> {
        let Some(s) = self.raw(key) else {
            return Ok(Vec::new());
        };
        s.split(',')
            .map(|x| match x.trim().parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(Error::config(
                    key,
                    format!("`{s}` is not a comma separated list of numbers"),
                )),
            })
            .collect()
    }

    fn interval(&self, key: &str) -> Result<Option<(f64, f64)>> {
        let list = self.f64_list(key)?;
        match list.as_slice() {
            [] => Ok(None),
            &[a, b] => Ok(Some((a, b))),
            _ => Err(Error::config(key, "expected two numbers `r1, r2`")),
        }
    }
}

fn check(cond: bool, key: &str, msg: &str) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::config(key, msg))
    }
}

/// Parses and validates a config, applying defaults.
pub fn parse_config(text: &str) -> Result<SimConfig> {
    let ini = Ini::load_from_str(text).map_err(|e| Error::config("config", e.to_string()))?;
    let mut map = BTreeMap::new();
    for (section, props) in ini.iter() {
        let Some(section) = section else {
            if let Some((k, _)) = props.iter().next() {
                return Err(Error::config(k, "key outside any section"));
            }
            continue;
        };
        let Some((_, keys)) = KNOWN_KEYS.iter().find(|(s, _)| *s == section) else {
            return Err(Error::config(section, "unknown section"));
        };
        for (k, v) in props.iter() {
            let full = format!("{section}.{k}");
            if !keys.contains(&k) {
                return Err(Error::config(full, "unknown key"));
            }
            if map.insert(full.clone(), v.to_string()).is_some() {
                return Err(Error::config(full, "duplicate key"));
            }
        }
    }
    let e = Entries(map);

    let domain = DomainConfig {
        r_inner: e.req_f64("domain.r_inner")?,
        r_outer: e.req_f64("domain.r_outer")?,
        nr: e.req_usize("domain.nr")?,
        ntheta: e.req_usize("domain.ntheta")?,
        b: e.f64("domain.B")?,
    };
    let grid = build_annulus(
        domain.r_inner,
        domain.r_outer,
        domain.nr,
        domain.ntheta,
        domain.b,
    )?;

    let time = TimeConfig {
        dt: e.req_f64("time.dt")?,
        t_end: e.req_f64("time.t_end")?,
        theta: e.f64("time.theta")?.unwrap_or(1.0),
        stride: e.usize("time.stride")?.unwrap_or(1),
    };
    TimeScheme::new(time.dt, time.theta)?;
    check(time.t_end >= time.dt, "time.t_end", "must be at least dt")?;
    check(time.stride >= 1, "time.stride", "must be at least 1")?;

    let rho = e.req_f64("weight.rho")?;
    let eps = match e.f64("weight.eps")? {
        Some(eps) => {
            weight_params(rho, Some(eps))?;
            Some(eps)
        }
        None => {
            weight_params(rho, None)?;
            epsilon_window(rho).ok().and_then(|w| w.midpoint())
        }
    };
    let weight = WeightConfig { rho, eps };

    let nonlinearity = NonlinearityConfig {
        a: e.f64("nonlinearity.a")?.unwrap_or(0.0),
        b: e.f64("nonlinearity.b")?.unwrap_or(0.0),
        p: e.f64("nonlinearity.p")?.unwrap_or(2.0),
        q: e.f64("nonlinearity.q")?.unwrap_or(2.0),
    };
    NonlinearityParams::new(
        nonlinearity.a,
        nonlinearity.b,
        nonlinearity.p,
        nonlinearity.q,
    )?;

    let len = domain.r_outer - domain.r_inner;
    let default_support = (domain.r_inner + 0.1 * len, domain.r_inner + 0.4 * len);
    let init = InitConfig {
        u0_amplitude: e.f64("init.u0_amplitude")?.unwrap_or(1.0),
        u0_support: e.interval("init.u0_support")?.unwrap_or(default_support),
        u1_amplitude: e.f64("init.u1_amplitude")?.unwrap_or(0.0),
        u1_support: e.interval("init.u1_support")?.unwrap_or(default_support),
    };
    for (key, (r1, r2)) in [
        ("init.u0_support", init.u0_support),
        ("init.u1_support", init.u1_support),
    ] {
        check(
            grid.r_inner() < r1 && r1 < r2 && r2 < grid.r_outer(),
            key,
            "must satisfy r_inner < r1 < r2 < r_outer",
        )?;
    }

    let c0 = e.f64("constants.C0")?.unwrap_or(1.0);
    check(c0 > 0.0, "constants.C0", "must be positive")?;

    let output = OutputConfig {
        path: PathBuf::from(
            e.raw("output.path")
                .map(str::trim)
                .unwrap_or("sdwave_out.csv"),
        ),
        format: e
            .raw("output.format")
            .map(str::trim)
            .unwrap_or("csv")
            .to_string(),
    };
    check(
        output.format == "csv",
        "output.format",
        "only `csv` is supported",
    )?;
    check(
        !output.path.as_os_str().is_empty(),
        "output.path",
        "must not be empty",
    )?;

    let mode = e
        .raw("mode.command")
        .map(Mode::from_str)
        .transpose()?
        .unwrap_or(Mode::Simulate);

    let sweep = SweepConfig {
        p: e.f64_list("sweep.p")?,
        q: e.f64_list("sweep.q")?,
        rho: e.f64_list("sweep.rho")?,
        u0_amplitude: e.f64_list("sweep.u0_amplitude")?,
    };
    check(
        sweep.p.iter().all(|&p| p > 1.0),
        "sweep.p",
        "p must exceed 1",
    )?;
    check(
        sweep.q.iter().all(|&q| q > 1.0),
        "sweep.q",
        "q must exceed 1",
    )?;
    check(
        sweep.rho.iter().all(|&r| r > 0.0),
        "sweep.rho",
        "rho must be positive",
    )?;

    let fit = FitConfig {
        columns: match e.raw("fit.columns") {
            Some(s) => s.split(',').map(|c| c.trim().to_string()).collect(),
            None => vec!["E_higher".to_string()],
        },
        t_a: e.f64("fit.t_a")?.unwrap_or(0.1 * time.t_end),
        t_b: e.f64("fit.t_b")?.unwrap_or(time.t_end),
        input: e.raw("fit.input").map(|s| PathBuf::from(s.trim())),
    };
    for c in &fit.columns {
        let known = DiagnosticsRow::CSV_HEADER
            .split(',')
            .any(|h| h == c && h != "t");
        check(
            known,
            "fit.columns",
            &format!("unknown series column `{c}`"),
        )?;
    }
    check(
        fit.t_a >= 0.0 && fit.t_b > fit.t_a,
        "fit.t_b",
        "need 0 <= t_a < t_b",
    )?;

    let mms = MmsConfig {
        levels: e.usize("mms.levels")?.unwrap_or(3),
        rate: e.f64("mms.rate")?.unwrap_or(0.5),
        k: e.parse::<u32>("mms.k", "a nonnegative integer")?
            .unwrap_or(2),
    };
    check(mms.levels >= 1, "mms.levels", "must be at least 1")?;
    check(mms.rate > 0.0, "mms.rate", "must be positive")?;

    let gn = GnConfig {
        m: match e.raw("gn.m") {
            Some(_) => e.f64_list("gn.m")?,
            None => vec![4.0, 6.0, 10.0],
        },
        samples: e.usize("gn.samples")?.unwrap_or(100),
        seed: e
            .parse::<u64>("gn.seed", "a nonnegative integer")?
            .unwrap_or(1),
        refinements: e.usize("gn.refinements")?.unwrap_or(2),
    };
    check(
        gn.m.iter().all(|&m| m >= 2.0),
        "gn.m",
        "m must be at least 2",
    )?;
    check(gn.samples >= 1, "gn.samples", "must be at least 1")?;

    let check_cfg = CheckConfig {
        t_samples: e.usize("check.t_samples")?.unwrap_or(50),
        r_samples: e.usize("check.r_samples")?.unwrap_or(50),
    };
    check(
        check_cfg.t_samples >= 2,
        "check.t_samples",
        "must be at least 2",
    )?;
    check(
        check_cfg.r_samples >= 2,
        "check.r_samples",
        "must be at least 2",
    )?;

    Ok(SimConfig {
        domain,
        time,
        weight,
        nonlinearity,
        init,
        c0,
        output,
        mode,
        sweep,
        fit,
        mms,
        gn,
        check: check_cfg,
    })
}

fn weight_params(rho: f64, eps: Option<f64>) -> Result<WeightParams> {
    if !(rho > 0.0) {
        return Err(Error::config("weight.rho", "rho must be positive"));
    }
    match eps {
        Some(eps) => WeightParams::with_eps(rho, eps).map_err(|e| match e {
            Error::Domain(msg) => Error::config("weight.eps", msg),
            other => other,
        }),
        None => WeightParams::with_midpoint_eps(rho),
    }
}

fn join(xs: &[f64]) -> String {
    xs.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(", ")
}

/// Writes every field, defaults included, so that `parse_config` returns an
/// equal value.
pub fn emit_config(c: &SimConfig) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "[domain]");
    let _ = writeln!(s, "r_inner = {}", c.domain.r_inner);
    let _ = writeln!(s, "r_outer = {}", c.domain.r_outer);
    let _ = writeln!(s, "nr = {}", c.domain.nr);
    let _ = writeln!(s, "ntheta = {}", c.domain.ntheta);
    if let Some(b) = c.domain.b {
        let _ = writeln!(s, "B = {b}");
    }
    let _ = writeln!(s, "\n[time]");
    let _ = writeln!(s, "dt = {}", c.time.dt);
    let _ = writeln!(s, "t_end = {}", c.time.t_end);
    let _ = writeln!(s, "theta = {}", c.time.theta);
    let _ = writeln!(s, "stride = {}", c.time.stride);
    let _ = writeln!(s, "\n[weight]");
    let _ = writeln!(s, "rho = {}", c.weight.rho);
    match c.weight.eps {
        Some(eps) => {
            let _ = writeln!(s, "eps = {eps}");
        }
        None => {
            let _ = writeln!(s, "# eps window empty: eps-dependent checks disabled");
        }
    }
    let n = &c.nonlinearity;
    let _ = writeln!(
        s,
        "\n[nonlinearity]\na = {}\nb = {}\np = {}\nq = {}",
        n.a, n.b, n.p, n.q
    );
    let i = &c.init;
    let _ = writeln!(s, "\n[init]");
    let _ = writeln!(s, "u0_amplitude = {}", i.u0_amplitude);
    let _ = writeln!(s, "u0_support = {}, {}", i.u0_support.0, i.u0_support.1);
    let _ = writeln!(s, "u1_amplitude = {}", i.u1_amplitude);
    let _ = writeln!(s, "u1_support = {}, {}", i.u1_support.0, i.u1_support.1);
    let _ = writeln!(s, "\n[constants]\nC0 = {}", c.c0);
    let _ = writeln!(
        s,
        "\n[output]\npath = {}\nformat = {}",
        c.output.path.display(),
        c.output.format
    );
    let _ = writeln!(s, "\n[mode]\ncommand = {}", c.mode.name());
    let sw = &c.sweep;
    let _ = writeln!(s, "\n[sweep]");
    for (k, v) in [
        ("p", &sw.p),
        ("q", &sw.q),
        ("rho", &sw.rho),
        ("u0_amplitude", &sw.u0_amplitude),
    ] {
        if !v.is_empty() {
            let _ = writeln!(s, "{k} = {}", join(v));
        }
    }
    let _ = writeln!(s, "\n[fit]");
    let _ = writeln!(s, "columns = {}", c.fit.columns.join(", "));
    let _ = writeln!(s, "t_a = {}\nt_b = {}", c.fit.t_a, c.fit.t_b);
    if let Some(p) = &c.fit.input {
        let _ = writeln!(s, "input = {}", p.display());
    }
    let _ = writeln!(
        s,
        "\n[mms]\nlevels = {}\nrate = {}\nk = {}",
        c.mms.levels, c.mms.rate, c.mms.k
    );
    let _ = writeln!(
        s,
        "\n[gn]\nm = {}\nsamples = {}\nseed = {}\nrefinements = {}",
        join(&c.gn.m),
        c.gn.samples,
        c.gn.seed,
        c.gn.refinements
    );
    let _ = writeln!(
        s,
        "\n[check]\nt_samples = {}\nr_samples = {}",
        c.check.t_samples, c.check.r_samples
    );
    s
}

impl SimConfig {
    pub fn grid(&self) -> Result<PolarGrid> {
        let d = &self.domain;
        build_annulus(d.r_inner, d.r_outer, d.nr, d.ntheta, d.b)
    }

    pub fn weight_params(&self) -> Result<WeightParams> {
        weight_params(self.weight.rho, self.weight.eps)
    }

    pub fn nonlinearity_params(&self) -> Result<NonlinearityParams> {
        let n = &self.nonlinearity;
        NonlinearityParams::new(n.a, n.b, n.p, n.q)
    }

    /// Initial data `(u0, u1)` on `grid`.
    pub fn initial_data(&self, grid: &PolarGrid) -> Result<(grid::Field, grid::Field)> {
        let i = &self.init;
        let u0 = initial_bump(grid, i.u0_amplitude, i.u0_support.0, i.u0_support.1)?;
        let u1 = initial_bump(grid, i.u1_amplitude, i.u1_support.0, i.u1_support.1)?;
        Ok((u0, u1))
    }

    pub fn setup(&self) -> Result<SimSetup> {
        let grid = self.grid()?;
        let (u0, u1) = self.initial_data(&grid)?;
        Ok(SimSetup {
            scheme: TimeScheme::new(self.time.dt, self.time.theta)?,
            nonlinearity: self.nonlinearity_params()?,
            weight: self.weight_params()?,
            t_end: self.time.t_end,
            stride: self.time.stride,
            u0,
            u1,
            mms: None,
            blowup_threshold: DEFAULT_BLOWUP_THRESHOLD,
            grid,
        })
    }
}

// ---------------------------------------------------------------------------
// commands

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(fs::File::create(path)?))
}

/// Runs the configured simulation, writing one diagnostics row per output
/// step. Returns the terminal status; I/O failures are errors.
pub fn command_simulate(cfg: &SimConfig, out: &mut impl Write) -> Result<RunStatus> {
    let setup = cfg.setup()?;
    if !setup.weight.has_valid_eps() {
        eprintln!("note: rho <= rho0, eps window empty: eps-dependent checks disabled");
    }
    writeln!(out, "{}", DiagnosticsRow::CSV_HEADER)?;
    let mut io_err = None;
    let mut warned = false;
    let status = solver::run(&setup, |s| {
        if io_err.is_none() {
            if let Err(e) = writeln!(out, "{}", s.row.to_csv()) {
                io_err = Some(e);
            }
        }
        if !warned && s.row.outer_ring_amp > TRUNCATION_WARN_RATIO * s.row.sup_u {
            warned = true;
            eprintln!(
                "warning: outer ring amplitude {:e} exceeds {:e} * sup|u| at t = {}; truncation may be felt",
                s.row.outer_ring_amp, TRUNCATION_WARN_RATIO, s.row.t
            );
        }
    });
    out.flush()?;
    match io_err {
        Some(e) => Err(e.into()),
        None => Ok(status),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MmsKind {
    /// Grid and step refined together, error against the exact solution.
    Space,
    /// Fixed grid, step halved, differences of successive solutions.
    Time,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MmsRow {
    pub kind: MmsKind,
    pub nr: usize,
    pub ntheta: usize,
    pub h: f64,
    pub dt: f64,
    pub error: f64,
    /// `log2(previous error / error)`; NaN on the first row of each kind.
    pub order: f64,
}

impl MmsRow {
    pub const CSV_HEADER: &'static str = "kind,nr,ntheta,h,dt,error,order";

    pub fn to_csv(&self) -> String {
        let kind = match self.kind {
            MmsKind::Space => "space",
            MmsKind::Time => "time",
        };
        format!(
            "{kind},{},{},{:.16e},{:.16e},{:.16e},{:.16e}",
            self.nr, self.ntheta, self.h, self.dt, self.error, self.order
        )
    }
}

fn mms_final_state(cfg: &SimConfig, grid: PolarGrid, dt: f64, mms: MmsProblem) -> Result<State> {
    let np = cfg.nonlinearity_params()?;
    let (u0, u1) = mms.reference(&grid, 0.0);
    let setup = SimSetup {
        scheme: TimeScheme::new(dt, cfg.time.theta)?,
        nonlinearity: np,
        weight: cfg.weight_params()?,
        t_end: cfg.time.t_end,
        stride: usize::MAX,
        u0,
        u1,
        mms: Some(mms),
        blowup_threshold: DEFAULT_BLOWUP_THRESHOLD,
        grid,
    };
    let mut last = None;
    let status = solver::run(&setup, |s| last = Some(s.state.clone()));
    match status {
        RunStatus::Completed => Ok(last.expect("run emits at least the initial state")),
        RunStatus::BlewUp { t } => Err(Error::BlowUp { t }),
        RunStatus::SolverFailed { t } => Err(Error::NonConvergence {
            t,
            iterations: setup.scheme.max_linear_iters,
            residual: f64::NAN,
        }),
    }
}

fn orders(rows: &mut [MmsRow]) {
    for k in 1..rows.len() {
        rows[k].order = (rows[k - 1].error / rows[k].error).log2();
    }
}

/// Convergence table for the manufactured solution. Spatial rows refine
/// `(nr, ntheta)` dyadically from the configured grid with `dt` proportional
/// to the radial step; temporal rows halve `dt` on the configured grid.
pub fn mms_convergence(cfg: &SimConfig) -> Result<Vec<MmsRow>> {
    let mms = MmsProblem {
        rate: cfg.mms.rate,
        k: cfg.mms.k,
    };
    let d = &cfg.domain;
    let base = cfg.grid()?;

    let mut space = Vec::new();
    for l in 0..=cfg.mms.levels {
        let f = 1usize << l;
        // nr + 1 intervals, so halving the step needs 2 (nr + 1) - 1 rings
        let nr = (d.nr + 1) * f - 1;
        let grid = build_annulus(d.r_inner, d.r_outer, nr, d.ntheta * f, d.b)?;
        let dt = cfg.time.dt * grid.dr() / base.dr();
        let (h, ntheta) = (grid.dr(), grid.ntheta());
        let s = mms_final_state(cfg, grid.clone(), dt, mms)?;
        let (u_ex, _) = mms.reference(&grid, s.t);
        let error = grid::sq_sum(&grid, &s.u.axpy(-1.0, &u_ex)).sqrt();
        space.push(MmsRow {
            kind: MmsKind::Space,
            nr,
            ntheta,
            h,
            dt,
            error,
            order: f64::NAN,
        });
    }
    orders(&mut space);

    let mut sols = Vec::new();
    for l in 0..=cfg.mms.levels + 1 {
        let dt = cfg.time.dt / (1usize << l) as f64;
        sols.push((dt, mms_final_state(cfg, base.clone(), dt, mms)?));
    }
    let mut time: Vec<MmsRow> = sols
        .windows(2)
        .map(|w| MmsRow {
            kind: MmsKind::Time,
            nr: base.nr(),
            ntheta: base.ntheta(),
            h: base.dr(),
            dt: w[1].0,
            error: grid::sq_sum(&base, &w[0].1.u.axpy(-1.0, &w[1].1.u)).sqrt(),
            order: f64::NAN,
        })
        .collect();
    orders(&mut time);

    space.extend(time);
    Ok(space)
}

pub fn command_mms(cfg: &SimConfig, out: &mut impl Write) -> Result<()> {
    let rows = mms_convergence(cfg)?;
    writeln!(out, "{}", MmsRow::CSV_HEADER)?;
    for r in rows {
        writeln!(out, "{}", r.to_csv())?;
    }
    out.flush()?;
    Ok(())
}

fn lattice(lo: f64, hi: f64, n: usize) -> impl Iterator<Item = f64> {
    (0..n).map(move |k| lo + (hi - lo) * k as f64 / (n - 1) as f64)
}

/// Pointwise weight checks on a `t_samples x r_samples` lattice of
/// `[0, t_end] x [r_inner, r_outer]`. Returns the number of failing points.
pub fn command_check_weight(cfg: &SimConfig, out: &mut impl Write) -> Result<usize> {
    let w = cfg.weight_params()?;
    if !w.has_valid_eps() {
        writeln!(
            out,
            "# rho = {} <= rho0 = {:.15}: eps window empty, eps-dependent checks disabled",
            w.rho(),
            rho0_constant()
        )?;
    }
    writeln!(
        out,
        "t,r,mixed,eps,grad_ratio,decay_ratio,worst_margin,pass"
    )?;
    let mut failures = 0;
    for t in lattice(0.0, cfg.time.t_end, cfg.check.t_samples) {
        for r in lattice(cfg.domain.r_inner, cfg.domain.r_outer, cfg.check.r_samples) {
            let rep = check_pointwise(t, r, &w);
            let ok = rep.all_evaluated_ok();
            failures += usize::from(!ok);
            writeln!(
                out,
                "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{}",
                t,
                r,
                rep.mixed_value,
                rep.eps_value.unwrap_or(f64::NAN),
                rep.grad_ratio_value,
                rep.ratio_value,
                rep.worst_margin,
                ok
            )?;
        }
    }
    out.flush()?;
    Ok(failures)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GnRow {
    pub m: f64,
    pub sample: usize,
    pub nr: usize,
    pub ntheta: usize,
    pub ratio: f64,
}

/// GN ratios of seeded random fields on the configured grid and its
/// dyadic refinements.
pub fn gn_table(cfg: &SimConfig) -> Result<Vec<GnRow>> {
    let d = &cfg.domain;
    let fields = random_fields(cfg.gn.seed, cfg.gn.samples, d.r_inner, d.r_outer);
    let mut rows = Vec::new();
    for l in 0..=cfg.gn.refinements {
        let f = 1usize << l;
        let grid = build_annulus(d.r_inner, d.r_outer, (d.nr + 1) * f - 1, d.ntheta * f, d.b)?;
        let sampled: Vec<_> = fields.iter().map(|s| s.sample(&grid)).collect();
        for &m in &cfg.gn.m {
            for (k, v) in sampled.iter().enumerate() {
                rows.push(GnRow {
                    m,
                    sample: k,
                    nr: grid.nr(),
                    ntheta: grid.ntheta(),
                    ratio: gn_ratio(&grid, v, m)?,
                });
            }
        }
    }
    Ok(rows)
}

pub fn command_check_gn(cfg: &SimConfig, out: &mut impl Write) -> Result<()> {
    writeln!(out, "m,sample,nr,ntheta,ratio")?;
    for r in gn_table(cfg)? {
        writeln!(
            out,
            "{},{},{},{},{:.16e}",
            r.m, r.sample, r.nr, r.ntheta, r.ratio
        )?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a diagnostics CSV into rows.
pub fn read_diagnostics(text: &str) -> Result<Vec<DiagnosticsRow>> {
    let mut lines = text
        .lines()
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty());
    match lines.next() {
        Some(h) if h.trim() == DiagnosticsRow::CSV_HEADER => {}
        _ => {
            return Err(Error::Io(
                "diagnostics CSV must start with the standard header".into(),
            ))
        }
    }
    lines
        .enumerate()
        .map(|(n, line)| {
            let v: Vec<f64> = line
                .split(',')
                .map(|x| x.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Io(format!("data line {}: {e}", n + 1)))?;
            if v.len() != 10 {
                return Err(Error::Io(format!(
                    "data line {}: expected 10 fields",
                    n + 1
                )));
            }
            Ok(DiagnosticsRow {
                t: v[0],
                e_classical: v[1],
                e_higher: v[2],
                l2_u: v[3],
                w_first: v[4],
                w_second: v[5],
                w: v[6],
                sup_u: v[7],
                sup_v: v[8],
                outer_ring_amp: v[9],
            })
        })
        .collect()
}

fn simulate_rows(cfg: &SimConfig) -> Result<(RunStatus, Vec<DiagnosticsRow>)> {
    let setup = cfg.setup()?;
    let mut rows = Vec::new();
    let status = solver::run(&setup, |s| rows.push(s.row.clone()));
    Ok((status, rows))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitRow {
    pub column: String,
    pub alpha: f64,
    pub c: f64,
    pub samples: usize,
}

/// Fits `c (1+t)^-alpha` to each requested column.
pub fn fit_columns(cfg: &SimConfig, rows: &[DiagnosticsRow]) -> Result<Vec<FitRow>> {
    cfg.fit
        .columns
        .iter()
        .map(|col| {
            let series: Vec<(f64, f64)> = rows
                .iter()
                .map(|r| (r.t, r.column(col).expect("column validated at parse time")))
                .collect();
            let fit = fit_decay_exponent(&series, cfg.fit.t_a, cfg.fit.t_b)?;
            Ok(FitRow {
                column: col.clone(),
                alpha: fit.alpha,
                c: fit.c,
                samples: fit.samples,
            })
        })
        .collect()
}

pub fn command_fit_decay(cfg: &SimConfig, out: &mut impl Write) -> Result<()> {
    let rows = match &cfg.fit.input {
        Some(path) => read_diagnostics(&fs::read_to_string(path)?)?,
        None => match simulate_rows(cfg)? {
            (RunStatus::Completed, rows) => rows,
            (RunStatus::BlewUp { t }, _) => {
                return Err(Error::Fit(format!("run blew up at t = {t}")))
            }
            (RunStatus::SolverFailed { t }, _) => {
                return Err(Error::NonConvergence {
                    t,
                    iterations: 0,
                    residual: f64::NAN,
                })
            }
        },
    };
    writeln!(out, "column,t_a,t_b,alpha,c,samples")?;
    for f in fit_columns(cfg, &rows)? {
        writeln!(
            out,
            "{},{:.16e},{:.16e},{:.16e},{:.16e},{}",
            f.column, cfg.fit.t_a, cfg.fit.t_b, f.alpha, f.c, f.samples
        )?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub p: f64,
    pub q: f64,
    pub rho: f64,
    pub u0_amplitude: f64,
    pub status: RunStatus,
    pub max_w: f64,
    /// Decay exponent of the first `fit.columns` series; NaN when the fit fails.
    pub alpha: f64,
}

impl SweepRow {
    pub const CSV_HEADER: &'static str = "p,q,rho,u0_amplitude,status,max_W,alpha,blowup_time";

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{:.16e},{:.16e},{:.16e}",
            self.p,
            self.q,
            self.rho,
            self.u0_amplitude,
            self.status.label(),
            self.max_w,
            self.alpha,
            self.status.blowup_time()
        )
    }
}

/// All parameter combinations of the sweep, in sorted order.
pub fn sweep_combinations(cfg: &SimConfig) -> Vec<SimConfig> {
    let or = |v: &Vec<f64>, d: f64| if v.is_empty() { vec![d] } else { v.clone() };
    let s = &cfg.sweep;
    let mut keys = Vec::new();
    for &p in &or(&s.p, cfg.nonlinearity.p) {
        for &q in &or(&s.q, cfg.nonlinearity.q) {
            for &rho in &or(&s.rho, cfg.weight.rho) {
                for &a in &or(&s.u0_amplitude, cfg.init.u0_amplitude) {
                    keys.push([p, q, rho, a]);
                }
            }
        }
    }
    keys.sort_by(|x, y| {
        x.iter()
            .zip(y)
            .map(|(a, b)| a.total_cmp(b))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    keys.dedup();
    keys.into_iter()
        .map(|[p, q, rho, a]| {
            let mut c = cfg.clone();
            c.nonlinearity.p = p;
            c.nonlinearity.q = q;
            c.init.u0_amplitude = a;
            if rho != cfg.weight.rho {
                c.weight.rho = rho;
                c.weight.eps = epsilon_window(rho).ok().and_then(|w| w.midpoint());
            }
            c
        })
        .collect()
}

/// Runs every combination on `jobs` threads (all cores when `None`).
pub fn run_sweep(cfg: &SimConfig, jobs: Option<usize>) -> Result<Vec<SweepRow>> {
    let combos = sweep_combinations(cfg);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .map_err(|e| Error::config("jobs", e.to_string()))?;
    pool.install(|| {
        combos
            .par_iter()
            .map(|c| {
                let (status, rows) = simulate_rows(c)?;
                let max_w = rows.iter().map(|r| r.w).fold(0.0, f64::max);
                let alpha = match status {
                    RunStatus::Completed => fit_columns(c, &rows)
                        .ok()
                        .and_then(|f| f.first().map(|f| f.alpha))
                        .unwrap_or(f64::NAN),
                    _ => f64::NAN,
                };
                Ok(SweepRow {
                    p: c.nonlinearity.p,
                    q: c.nonlinearity.q,
                    rho: c.weight.rho,
                    u0_amplitude: c.init.u0_amplitude,
                    status,
                    max_w,
                    alpha,
                })
            })
            .collect()
    })
}

pub fn command_sweep(cfg: &SimConfig, jobs: Option<usize>, out: &mut impl Write) -> Result<()> {
    let rows = run_sweep(cfg, jobs)?;
    writeln!(out, "{}", SweepRow::CSV_HEADER)?;
    for r in rows {
        writeln!(out, "{}", r.to_csv())?;
    }
    out.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// entry point

#[derive(Debug, Parser)]
#[command(
    name = "sdwave",
    version,
    about = "Strongly damped wave equation on a polar annulus"
)]
pub struct Args {
    /// INI config file
    #[arg(long)]
    pub config: PathBuf,
    /// Override `mode.command`
    #[arg(long)]
    pub mode: Option<String>,
    /// Override `output.path`
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Sweep parallelism
    #[arg(long, env = "SDWAVE_JOBS")]
    pub jobs: Option<usize>,
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config { .. } => EXIT_INVALID_CONFIG,
        Error::NonConvergence { .. } => EXIT_NONCONVERGENCE,
        Error::BlowUp { .. } => EXIT_BLOWUP,
        _ => EXIT_FAILURE,
    }
}

fn load(args: &Args) -> Result<SimConfig> {
    let text = fs::read_to_string(&args.config)
        .map_err(|e| Error::config("--config", format!("{}: {e}", args.config.display())))?;
    let mut cfg = parse_config(&text)?;
    if let Some(m) = &args.mode {
        cfg.mode = m.parse()?;
    }
    if let Some(out) = &args.out {
        cfg.output.path = out.clone();
    }
    if args.jobs == Some(0) {
        return Err(Error::config("--jobs", "must be at least 1"));
    }
    Ok(cfg)
}

fn dispatch(cfg: &SimConfig, jobs: Option<usize>) -> Result<i32> {
    let mut out = create(&cfg.output.path)?;
    match cfg.mode {
        Mode::Simulate => Ok(match command_simulate(cfg, &mut out)? {
            RunStatus::Completed => EXIT_OK,
            RunStatus::BlewUp { t } => {
                eprintln!("blow-up detected at t = {t}");
                EXIT_BLOWUP
            }
            RunStatus::SolverFailed { t } => {
                eprintln!("linear solver failed at t = {t}");
                EXIT_NONCONVERGENCE
            }
        }),
        Mode::Mms => command_mms(cfg, &mut out).map(|_| EXIT_OK),
        Mode::CheckWeight => command_check_weight(cfg, &mut out).map(|fails| {
            if fails > 0 {
                eprintln!("{fails} lattice points violate a weight inequality");
                EXIT_FAILURE
            } else {
                EXIT_OK
            }
        }),
        Mode::CheckGn => command_check_gn(cfg, &mut out).map(|_| EXIT_OK),
        Mode::FitDecay => command_fit_decay(cfg, &mut out).map(|_| EXIT_OK),
        Mode::Sweep => command_sweep(cfg, jobs, &mut out).map(|_| EXIT_OK),
    }
}

/// Runs the command described by `args` and returns the process exit code.
pub fn main_with(args: &Args) -> i32 {
    let cfg = match load(args) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return exit_code(&e);
        }
    };
    let _ = io::stderr().write_all(format!("# effective config\n{}", emit_config(&cfg)).as_bytes());
    match dispatch(&cfg, args.jobs) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            // blow-up outside `simulate` is a plain failure
            match exit_code(&e) {
                EXIT_BLOWUP => EXIT_FAILURE,
                c => c,
            }
        }
    }
}
