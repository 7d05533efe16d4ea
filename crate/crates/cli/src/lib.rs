//! Command implementations behind the `fkdv` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use frobenius_kdv::dressing::{dress_loop, loop_potential, verify_normal_form};
use frobenius_kdv::error::Error;
use frobenius_kdv::flows::{integrate_flow, FlowGenerator, FlowOptions};
use frobenius_kdv::grid::Grid;
use frobenius_kdv::loops::{LoopCurve, LoopState};
use frobenius_kdv::models::{check_axioms, fixture, FixtureKind, FrobeniusModel};
use frobenius_kdv::reduction::{build_frame, FrameOptions};
use frobenius_kdv::report::{csv_f64, mat_json, render, vec_json};
use frobenius_kdv::suite::{run_suite, SuiteConfig, SuiteError};
use frobenius_kdv::vhs::{check_eqprfrob, check_isotropy, fundamental_solution, symbol_map_interior};
use frobenius_kdv::{par, report};

pub const EXIT_VERIFY: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "fkdv", version, about = "Dressing, flows and identity checks for semisimple Frobenius manifolds")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// List the built-in fixtures with their axiom residuals.
    Fixtures(Common),
    /// Canonical frame on the fixture grid.
    Reduce(Common),
    /// Loop dressing: S_k, h_k and residuals.
    Dress(Common),
    /// Integrate a loop flow and record the conserved integrals.
    Flow(Common),
    /// Fundamental solution and subspace-model reports.
    Vhs(Common),
    /// Run the full invariant suite; exit 1 on any failure.
    Verify(Common),
}

#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    #[arg(long)]
    pub fixture: Option<String>,
    /// JSON file mirroring the run configuration; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long = "out-dir")]
    pub out_dir: Option<PathBuf>,
    /// Dressing order.
    #[arg(long = "K")]
    pub order: Option<usize>,
    /// Loop resolution (power of two).
    #[arg(long = "N")]
    pub loop_points: Option<usize>,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub steps: Option<usize>,
    /// Flow generator term `j:d1,d2,...` for `hbar^-j diag(d)`; repeatable.
    #[arg(long = "b")]
    pub b: Vec<String>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub points: usize,
    /// Box corners; the fixture's declared domain when absent.
    pub lo: Option<Vec<f64>>,
    pub hi: Option<Vec<f64>>,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { points: 33, lo: None, hi: None }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct LoopConfig {
    /// Resolution for dressing and identity checks.
    pub points: usize,
    /// Resolution for time integration.
    pub flow_points: usize,
    /// Explicit curve; the fixture's default loop when absent.
    pub curve: Option<LoopCurve>,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self { points: 128, flow_points: 32, curve: None }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub fixture: String,
    pub grid: GridConfig,
    #[serde(rename = "loop")]
    pub loop_: LoopConfig,
    #[serde(rename = "K")]
    pub order: usize,
    #[serde(rename = "K_vhs")]
    pub vhs_depth: usize,
    /// Flow generator terms `j:d1,...`; `2:1,0,...` when empty.
    pub b: Vec<String>,
    pub dt: f64,
    pub steps: usize,
    /// Flow steps used by `verify`.
    pub verify_steps: usize,
    pub record_every: usize,
    pub fd_order: usize,
    /// Drift tolerance reported by `flow`.
    pub tol: f64,
    pub threads: Option<usize>,
    pub seed: u64,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            fixture: "qh_p1".into(),
            grid: GridConfig::default(),
            loop_: LoopConfig::default(),
            order: 4,
            vhs_depth: 4,
            b: Vec::new(),
            dt: 1e-3,
            steps: 200,
            verify_steps: 20,
            record_every: 10,
            fd_order: 6,
            tol: 1e-8,
            threads: None,
            seed: 7,
            out_dir: PathBuf::from("out"),
        }
    }
}

/// Failure of a command, mapped to an exit code.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Numeric { check: String, error: Error },
    Verify(String),
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Io(_) => EXIT_CONFIG,
            CliError::Numeric { .. } => EXIT_NUMERIC,
            CliError::Verify(_) => EXIT_VERIFY,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Numeric { check, error } => write!(f, "numerical failure in {check}: {error}"),
            CliError::Verify(m) => write!(f, "verification failed: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

fn numeric(check: &str) -> impl Fn(Error) -> CliError + '_ {
    move |error| if error.is_config() { CliError::Config(error.to_string()) } else { CliError::Numeric { check: check.to_string(), error } }
}

impl From<SuiteError> for CliError {
    fn from(e: SuiteError) -> Self {
        numeric(&e.check)(e.error)
    }
}

impl RunConfig {
    pub fn load(common: &Common) -> Result<Self, CliError> {
        let mut cfg = match &common.config {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
                serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
            }
            None => RunConfig::default(),
        };
        if let Some(v) = &common.fixture {
            cfg.fixture = v.clone();
        }
        if let Some(v) = &common.out_dir {
            cfg.out_dir = v.clone();
        }
        if let Some(v) = common.order {
            cfg.order = v;
        }
        if let Some(v) = common.loop_points {
            cfg.loop_.points = v;
            cfg.loop_.flow_points = v;
        }
        if let Some(v) = common.dt {
            cfg.dt = v;
        }
        if let Some(v) = common.steps {
            cfg.steps = v;
        }
        if !common.b.is_empty() {
            cfg.b = common.b.clone();
        }
        if let Some(v) = common.tol {
            cfg.tol = v;
        }
        if common.threads.is_some() {
            cfg.threads = common.threads;
        }
        if let Some(v) = common.seed {
            cfg.seed = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if !(self.tol > 0.0) || !(self.dt > 0.0) || !self.dt.is_finite() {
            return bad("tolerance and time step must be positive".into());
        }
        for p in [self.loop_.points, self.loop_.flow_points] {
            if !p.is_power_of_two() || p < 8 {
                return bad(format!("loop resolution {p} must be a power of two >= 8"));
            }
        }
        if self.order < 1 || self.vhs_depth < 1 {
            return bad("K and K_vhs must be at least 1".into());
        }
        if self.grid.points < self.fd_order + 1 {
            return bad(format!("grid needs at least {} points per axis", self.fd_order + 1));
        }
        if self.fd_order % 2 != 0 || self.fd_order == 0 {
            return bad("fd_order must be a positive even number".into());
        }
        if self.threads == Some(0) {
            return bad("threads must be positive".into());
        }
        let model = self.model()?;
        if let Some(c) = &self.loop_.curve {
            if c.dim() != model.n || c.harmonics.iter().any(|h| h.cos.len() != model.n || h.sin.len() != model.n) {
                return bad(format!("loop curve must have {} components", model.n));
            }
        }
        self.grid_for(&model)?;
        self.generator(model.n)?;
        Ok(())
    }

    pub fn model(&self) -> Result<FrobeniusModel, CliError> {
        fixture(&self.fixture).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Box from the config or the fixture's domain. Extents are only checked
    /// for shape; caustics inside the box are reported numerically.
    pub fn grid_for(&self, model: &FrobeniusModel) -> Result<Grid, CliError> {
        let lo = self.grid.lo.clone().unwrap_or_else(|| model.domain_lo.clone());
        let hi = self.grid.hi.clone().unwrap_or_else(|| model.domain_hi.clone());
        if lo.len() != model.n || hi.len() != model.n || lo.iter().zip(&hi).any(|(a, b)| !(a < b) || !a.is_finite() || !b.is_finite()) {
            return Err(CliError::Config(format!("grid box must have {} ordered finite extents", model.n)));
        }
        Grid::new(lo, hi, vec![self.grid.points; model.n]).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn generator(&self, n: usize) -> Result<FlowGenerator, CliError> {
        if self.b.is_empty() {
            let mut d = vec![0.0; n];
            d[0] = 1.0;
            return Ok(FlowGenerator::single(2, &d));
        }
        FlowGenerator::parse(&self.b, n).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn curve(&self, model: &FrobeniusModel) -> LoopCurve {
        self.loop_.curve.clone().unwrap_or_else(|| LoopCurve::default_for(model))
    }
}

struct Output {
    dir: PathBuf,
    files: Vec<String>,
}

impl Output {
    fn new(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
        Ok(Self { dir: dir.to_path_buf(), files: Vec::new() })
    }

    fn write(&mut self, name: &str, text: &str) -> Result<(), CliError> {
        let p = self.dir.join(name);
        fs::write(&p, text).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn json(&mut self, name: &str, v: &Value) -> Result<(), CliError> {
        self.write(name, &render(v))
    }
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("report types serialize")
}

fn csv_text(header: &[String], rows: &[Vec<String>]) -> Result<String, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(|e| CliError::Io(e.to_string()))?;
    for r in rows {
        w.write_record(r).map_err(|e| CliError::Io(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Io(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn model_json(m: &FrobeniusModel) -> Value {
    json!({
        "name": m.name,
        "n": m.n,
        "eta": mat_json(&m.eta),
        "unit": m.unit,
        "pencil": m.pencil,
        "domain": {"lo": m.domain_lo, "hi": m.domain_hi},
    })
}

pub fn cmd_fixtures(cfg: &RunConfig, out: &mut Vec<String>) -> Result<Value, CliError> {
    let mut listing = Vec::new();
    let kinds = [FixtureKind::TrivialDiag(1), FixtureKind::TrivialDiag(2), FixtureKind::TrivialDiag(3), FixtureKind::QhP1, FixtureKind::A2Poly];
    for kind in kinds {
        let m = FrobeniusModel::new(kind);
        let grid = m.domain_grid(9).map_err(|e| CliError::Config(e.to_string()))?;
        let ax = check_axioms(&m, &grid.points(), 1e-12);
        out.push(format!("{:<16} n={} axioms max residual {:.3e} {}", m.name, m.n, ax.unit.max(ax.commutativity).max(ax.symmetry).max(ax.frobenius), if ax.pass { "ok" } else { "FAIL" }));
        let mut v = model_json(&m);
        v["axioms"] = to_value(&ax);
        listing.push(v);
    }
    let _ = cfg;
    Ok(json!({"template": "trivial_diag(n)", "fixtures": listing}))
}

pub fn cmd_reduce(cfg: &RunConfig, out: &mut Vec<String>) -> Result<Value, CliError> {
    let model = cfg.model()?;
    let grid = cfg.grid_for(&model)?;
    let frame = build_frame(&model, &grid, grid.center_index(), &FrameOptions { fd_order: cfg.fd_order, ..Default::default() }).map_err(numeric("reduce"))?;
    out.push(format!("frame on {} points: offdiag {:.3e}, closedness {:.3e}, q antisymmetry {:.3e}", grid.len(), frame.residuals.offdiag, frame.residuals.closedness, frame.residuals.q_antisymmetry_interior));
    let points: Vec<Value> = (0..grid.len())
        .map(|p| {
            json!({
                "x": grid.point(p),
                "a": (0..model.n).map(|al| vec_json(&frame.a[al][p])).collect::<Vec<_>>(),
                "u": vec_json(&frame.u[p]),
                "eigenvalues": vec_json(&frame.eigen[p].values),
            })
        })
        .collect();
    Ok(json!({
        "fixture": model.name,
        "grid": to_value(&grid),
        "basepoint": frame.basepoint,
        "fd_order": frame.fd_order,
        "residuals": to_value(&frame.residuals),
        "points": points,
    }))
}

fn loop_state(cfg: &RunConfig, model: &FrobeniusModel, points: usize) -> Result<LoopState, CliError> {
    let st = LoopState::from_model(model, &cfg.curve(model), points).map_err(numeric("loop"))?;
    st.check_smooth().map_err(numeric("loop"))?;
    Ok(st)
}

pub fn cmd_dress(cfg: &RunConfig, out: &mut Vec<String>, files: &mut Vec<(String, String)>) -> Result<Value, CliError> {
    let model = cfg.model()?;
    let st = loop_state(cfg, &model, cfg.loop_.points)?;
    let d = dress_loop(&st, cfg.order).map_err(numeric("dress"))?;
    let nf = verify_normal_form(&loop_potential(&st, cfg.order), &d.t_full, &d.diff, cfg.order);
    out.push(format!("loop dressing K={} N={}: normal form {:.3e}, consistency {:.3e}", cfg.order, st.n_points(), nf.max_offdiag_through(cfg.order as i32 - 1), d.series.max_consistency()));
    let sp = st.spectral().map_err(numeric("dress"))?;
    let nodes = sp.nodes().to_vec();
    let n = st.dim();
    let mut header = vec!["s".to_string()];
    for k in -1..cfg.order as i32 - 1 {
        for j in 0..n {
            header.push(format!("h_{k}^{}_re", j + 1));
            header.push(format!("h_{k}^{}_im", j + 1));
        }
    }
    let rows: Vec<Vec<String>> = (0..nodes.len())
        .map(|p| {
            let mut r = vec![csv_f64(nodes[p])];
            for k in -1..cfg.order as i32 - 1 {
                for z in &d.h(k)[p] {
                    r.push(csv_f64(z.re));
                    r.push(csv_f64(z.im));
                }
            }
            r
        })
        .collect();
    files.push(("h.csv".into(), csv_text(&header, &rows)?));
    let s_fields: Vec<Value> = d.series.s.iter().map(|f| Value::Array(f.iter().map(mat_json).collect())).collect();
    Ok(json!({
        "fixture": model.name,
        "K": cfg.order,
        "N": st.n_points(),
        "residuals": to_value(&d.series.residuals),
        "warnings": d.series.warnings,
        "normal_form": to_value(&nf),
        "S": s_fields,
        "h": (-1..cfg.order as i32).map(|k| Value::Array(d.h(k).iter().map(|v| vec_json(v)).collect())).collect::<Vec<_>>(),
    }))
}

pub fn cmd_flow(cfg: &RunConfig, out: &mut Vec<String>, files: &mut Vec<(String, String)>) -> Result<Value, CliError> {
    let model = cfg.model()?;
    let st = loop_state(cfg, &model, cfg.loop_.flow_points)?;
    let b = cfg.generator(model.n)?;
    let order = cfg.order.max(b.m());
    let opts = FlowOptions { dt: cfg.dt, steps: cfg.steps, record_every: cfg.record_every, conserved_order: order.min(3).max(1) };
    let traj = integrate_flow(&st, &b, &opts).map_err(numeric("flow"))?;
    let n = model.n;
    let k_max = opts.conserved_order as i32 - 1;
    let mut header = vec!["t".to_string()];
    for k in -1..=k_max {
        for j in 0..n {
            header.push(format!("I_{k}^{}_re", j + 1));
            header.push(format!("I_{k}^{}_im", j + 1));
        }
    }
    header.push("drift".into());
    header.push("eigen_drift".into());
    let rows: Vec<Vec<String>> = traj
        .records
        .iter()
        .map(|r| {
            let mut row = vec![csv_f64(r.t)];
            for k in -1..=k_max {
                for j in 0..n {
                    let z = r.conserved.get(k, j);
                    row.push(csv_f64(z.re));
                    row.push(csv_f64(z.im));
                }
            }
            row.push(csv_f64(r.drift));
            row.push(csv_f64(r.eigen_drift));
            row
        })
        .collect();
    files.push(("flow.csv".into(), csv_text(&header, &rows)?));
    let pass = traj.max_drift() < cfg.tol;
    out.push(format!("flow b={:?} dt={} steps={}: max drift {:.3e}, eigenvalue drift {:.3e} ({})", cfg.b, cfg.dt, cfg.steps, traj.max_drift(), traj.max_eigen_drift(), if pass { "ok" } else { "above tolerance" }));
    Ok(json!({
        "fixture": model.name,
        "b": (1..=b.m()).map(|j| vec_json(b.coeff(j))).collect::<Vec<_>>(),
        "dt": cfg.dt,
        "steps": cfg.steps,
        "max_drift": traj.max_drift(),
        "max_eigen_drift": traj.max_eigen_drift(),
        "tol": cfg.tol,
        "pass": pass,
        "final_c": traj.final_state.c.iter().map(mat_json).collect::<Vec<_>>(),
    }))
}

pub fn cmd_vhs(cfg: &RunConfig, out: &mut Vec<String>) -> Result<Value, CliError> {
    let model = cfg.model()?;
    let grid = cfg.grid_for(&model)?;
    let fs = fundamental_solution(&model, &grid, cfg.vhs_depth).map_err(numeric("vhs"))?;
    let eq = check_eqprfrob(&fs, &model).map_err(numeric("vhs"))?;
    let sym = symbol_map_interior(&fs, &model).map_err(numeric("vhs"))?;
    let samples: Vec<usize> = grid.interior(cfg.fd_order / 2).into_iter().step_by(53).collect();
    let iso = check_isotropy(&fs, &samples).map_err(numeric("vhs"))?;
    out.push(format!(
        "fundamental solution K_vhs={}: residual {:.3e}, eqprfrob {:.3e}, symbol {:.3e}, isotropy {:.3e}",
        cfg.vhs_depth,
        fs.report.residual,
        eq.second_derivative.max(eq.pairing).max(eq.unit_derivative),
        sym.deviation,
        iso.below_n
    ));
    Ok(json!({
        "fixture": model.name,
        "K_vhs": cfg.vhs_depth,
        "fundamental": to_value(&fs.report),
        "eqprfrob": to_value(&eq),
        "symbol": to_value(&sym),
        "isotropy": to_value(&iso),
    }))
}

pub fn suite_config(cfg: &RunConfig, model: &FrobeniusModel) -> Result<SuiteConfig, CliError> {
    let mut s = SuiteConfig::for_model(model);
    s.grid_points = cfg.grid.points;
    s.loop_points = cfg.loop_.points;
    s.flow_points = cfg.loop_.flow_points;
    s.order = cfg.order;
    s.vhs_depth = cfg.vhs_depth;
    s.flow = cfg.generator(model.n)?;
    s.dt = cfg.dt;
    s.steps = cfg.verify_steps;
    s.fd_order = cfg.fd_order;
    Ok(s)
}

pub fn cmd_verify(cfg: &RunConfig, out: &mut Vec<String>) -> Result<(Value, bool), CliError> {
    let model = cfg.model()?;
    let rep = run_suite(&model, &suite_config(cfg, &model)?)?;
    for c in &rep.checks {
        out.push(format!("{} {:<32} {:.3e} (tol {:.0e})", if c.pass { "PASS" } else { "FAIL" }, c.name, c.value, c.tol));
    }
    Ok((to_value(&rep), rep.pass))
}

/// Run one command; returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let (name, common) = match &cli.command {
        Command::Fixtures(c) => ("fixtures", c),
        Command::Reduce(c) => ("reduce", c),
        Command::Dress(c) => ("dress", c),
        Command::Flow(c) => ("flow", c),
        Command::Vhs(c) => ("vhs", c),
        Command::Verify(c) => ("verify", c),
    };
    match execute(name, &cli.command, common) {
        Ok(lines) => {
            for l in lines {
                println!("{l}");
            }
            0
        }
        Err((lines, e)) => {
            for l in lines {
                println!("{l}");
            }
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn execute(name: &str, command: &Command, common: &Common) -> Result<Vec<String>, (Vec<String>, CliError)> {
    let start = Instant::now();
    let cfg = RunConfig::load(common).map_err(|e| (Vec::new(), e))?;
    if let Some(t) = cfg.threads {
        par::set_threads(t);
    }
    let mut output = Output::new(&cfg.out_dir).map_err(|e| (Vec::new(), e))?;
    let mut lines = Vec::new();
    let mut extra: Vec<(String, String)> = Vec::new();
    let mut verdict = None;
    let result = match command {
        Command::Fixtures(_) => cmd_fixtures(&cfg, &mut lines).map(|v| ("fixtures.json", v)),
        Command::Reduce(_) => cmd_reduce(&cfg, &mut lines).map(|v| ("frame.json", v)),
        Command::Dress(_) => cmd_dress(&cfg, &mut lines, &mut extra).map(|v| ("dressing.json", v)),
        Command::Flow(_) => cmd_flow(&cfg, &mut lines, &mut extra).map(|v| ("flow.json", v)),
        Command::Vhs(_) => cmd_vhs(&cfg, &mut lines).map(|v| ("vhs.json", v)),
        Command::Verify(_) => cmd_verify(&cfg, &mut lines).map(|(v, pass)| {
            verdict = Some(pass);
            ("verify.json", v)
        }),
    };
    let status = match &result {
        Ok(_) if verdict == Some(false) => "verification_failed".to_string(),
        Ok(_) => "ok".to_string(),
        Err(e) => format!("exit {}: {e}", e.exit_code()),
    };
    let written = match &result {
        Ok((file, v)) => {
            let mut w = || -> Result<(), CliError> {
                output.json(file, v)?;
                for (f, text) in &extra {
                    output.write(f, text)?;
                }
                Ok(())
            };
            w()
        }
        Err(_) => Ok(()),
    };
    let manifest = json!({
        "command": name,
        "config": to_value(&cfg),
        "versions": {"fkdv": env!("CARGO_PKG_VERSION"), "format": 1},
        "wall_time_s": start.elapsed().as_secs_f64(),
        "outputs": output.files,
        "status": status,
    });
    let _ = output.write("manifest.json", &report::render(&manifest));
    if let Err(e) = written {
        return Err((lines, e));
    }
    match result {
        Err(e) => Err((lines, e)),
        Ok(_) if verdict == Some(false) => {
            let failed: Vec<String> = lines.iter().filter(|l| l.starts_with("FAIL")).cloned().collect();
            Err((lines, CliError::Verify(failed.join("; "))))
        }
        Ok(_) => Ok(lines),
    }
}
