use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use geomhom::cell::{
    build_effective_table, solve_approx_corrector, solve_flatness, CorrectorMethod, CorrectorOptions,
    EffectiveHamiltonianTable, TableOptions,
};
use geomhom::config::{InitialData, OperatorConfig, ReferenceConfig, SweepConfig};
use geomhom::evolution::{evolve_effective, evolve_eps, evolve_radial, EvolveOptions};
use geomhom::grid::{BoundaryRule, BoxGrid, CurvatureScheme, Grid, PeriodicGrid};
use geomhom::operators::{check_coercivity, ForcingField, OperatorSpec, Perturbation};
use geomhom::oracles::{lambert_w, radial_phi_eps, vshape_effective};
use geomhom::rate::{emit_report, run_sweep};
use geomhom::GeomError;

#[derive(Parser, Debug)]
#[command(name = "geomhom", version, about = "Homogenization laboratory for geometric level-set equations")]
#[command(args_override_self = true)]
struct Cli {
    /// Worker threads (default: GEOMHOM_THREADS, else all cores).
    #[arg(long, global = true, env = "GEOMHOM_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Discounted corrector (or flatness run) for one slope p.
    Cell(CellArgs),
    /// Effective Hamiltonian table over M directions.
    Table(TableArgs),
    /// Evolve the ε-problem or the effective problem on a box.
    Evolve(EvolveArgs),
    /// Radial reduction of the cone example.
    Radial(RadialArgs),
    /// Closed-form reference values as CSV.
    Oracle(OracleArgs),
    /// Coercivity margin min(c² − (n−1)|Dc|) of a force field.
    Coercivity(CoercivityArgs),
    /// ε-sweep with error fit, driven by a JSON sweep config.
    Rate(RateArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum OpKind {
    Mcf,
    G,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PerturbKind {
    None,
    Sup,
    Inf,
}

#[derive(Args, Debug)]
struct OpArgs {
    #[arg(long, value_enum, default_value = "mcf")]
    op: OpKind,
    /// Force: builtin:const1, builtin:sin1, builtin:const:<K> or a field file.
    #[arg(long, default_value = "builtin:const1")]
    c: String,
    /// Markstein number (G-equation).
    #[arg(long, default_value_t = 0.1)]
    d: f64,
    /// Cellular flow intensity A (G-equation).
    #[arg(long = "amplitude", short = 'A', default_value_t = 0.0)]
    amplitude: f64,
    #[arg(long, value_enum, default_value = "none")]
    perturb: PerturbKind,
    #[arg(long, default_value_t = 0.0)]
    eta: f64,
}

impl OpArgs {
    fn config(&self) -> OperatorConfig {
        let perturbation = match self.perturb {
            PerturbKind::None => Perturbation::None,
            PerturbKind::Sup => Perturbation::Sup(self.eta),
            PerturbKind::Inf => Perturbation::Inf(self.eta),
        };
        match self.op {
            OpKind::Mcf => OperatorConfig::Mcf { force: self.c.clone(), perturbation },
            OpKind::G => OperatorConfig::G { d: self.d, amplitude: self.amplitude, perturbation },
        }
    }
}

#[derive(Args, Debug)]
struct SchemeArgs {
    #[arg(long, value_enum, default_value = "median")]
    curvature: CurvKind,
    /// Regularization of the compact curvature formula (default h).
    #[arg(long)]
    delta_g: Option<f64>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum CurvKind {
    Median,
    Compact,
}

impl SchemeArgs {
    fn scheme(&self) -> CurvatureScheme {
        match self.curvature {
            CurvKind::Median => CurvatureScheme::Median,
            CurvKind::Compact => CurvatureScheme::Compact { delta_g: self.delta_g },
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MethodKind {
    Newton,
    Explicit,
}

#[derive(Args, Debug)]
struct CellArgs {
    #[command(flatten)]
    op: OpArgs,
    #[command(flatten)]
    scheme: SchemeArgs,
    /// Slope p as "p1,p2".
    #[arg(long, value_parser = parse_pair, allow_hyphen_values = true)]
    p: [f64; 2],
    #[arg(long, default_value_t = 1e-2)]
    lambda: f64,
    /// Nodes per cell side.
    #[arg(long, default_value_t = 256)]
    n: usize,
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    #[arg(long, default_value_t = 400)]
    max_steps: usize,
    #[arg(long, value_enum, default_value = "newton")]
    method: MethodKind,
    /// Use the long-time flatness run instead of the corrector.
    #[arg(long)]
    flatness: bool,
    #[arg(long, default_value_t = 40.0)]
    horizon: f64,
    /// Write the corrector w as a grid document.
    #[arg(long)]
    out: Option<PathBuf>,
    /// JSON object of flags for this command.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TableArgs {
    #[command(flatten)]
    op: OpArgs,
    #[command(flatten)]
    scheme: SchemeArgs,
    /// Number of directions.
    #[arg(long, default_value_t = 64)]
    m: usize,
    #[arg(long, default_value_t = 1e-2)]
    lambda: f64,
    #[arg(long, default_value_t = 256)]
    n: usize,
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    #[arg(long, default_value_t = 40.0)]
    horizon: f64,
    /// Table file: reused when present and built for the same operator, else written.
    #[arg(long)]
    table: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum InitKind {
    Cone,
    VShape,
    Plane,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum BoundaryKind {
    Extrapolate,
    Clamp,
}

#[derive(Args, Debug)]
struct EvolveArgs {
    #[command(flatten)]
    op: OpArgs,
    #[command(flatten)]
    scheme: SchemeArgs,
    /// ε of the oscillatory problem (omit with --effective).
    #[arg(long)]
    eps: Option<f64>,
    /// Evolve the effective problem with the table given by --table.
    #[arg(long)]
    effective: bool,
    #[arg(long)]
    table: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "cone")]
    init: InitKind,
    /// Initial data file (overrides --init).
    #[arg(long)]
    init_file: Option<PathBuf>,
    #[arg(long, default_value_t = std::f64::consts::FRAC_PI_4)]
    alpha: f64,
    #[arg(long, value_delimiter = ',', default_value = "-1,1", allow_hyphen_values = true)]
    directions: Vec<f64>,
    #[arg(long, value_parser = parse_pair, default_value = "1,0", allow_hyphen_values = true)]
    slope: [f64; 2],
    /// Final time.
    #[arg(long)]
    t: f64,
    /// Output times t1,t2,...
    #[arg(long, value_delimiter = ',')]
    snap: Vec<f64>,
    /// Half-width of the region of interest; the box adds the buffer.
    #[arg(long, default_value_t = 0.5)]
    half_width: f64,
    /// Grid spacing (default ε/8, or 1/64 for --effective).
    #[arg(long)]
    h: Option<f64>,
    #[arg(long, value_enum, default_value = "extrapolate")]
    boundary: BoundaryKind,
    #[arg(long, default_value_t = 1.2)]
    buffer_margin: f64,
    /// Directory for snapshot documents.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RadialArgs {
    #[arg(long)]
    eps: f64,
    #[arg(long, default_value_t = 1.5)]
    r_max: f64,
    #[arg(long)]
    t: f64,
    /// Radial nodes.
    #[arg(long, default_value_t = 7500)]
    n: usize,
    #[arg(long, value_delimiter = ',')]
    snap: Vec<f64>,
    /// Radii to report (default: a few just outside r = t).
    #[arg(long, value_delimiter = ',')]
    at: Vec<f64>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Which {
    Lambertw,
    Radial,
    Vshape,
}

#[derive(Args, Debug)]
struct OracleArgs {
    #[arg(long, value_enum)]
    which: Which,
    /// lambertw: z values; radial: r,t,eps; vshape: x1,t,alpha (A = {-1,1} unless --directions).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    params: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "-1,1", allow_hyphen_values = true)]
    directions: Vec<f64>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CoercivityArgs {
    #[arg(long, default_value = "builtin:sin1")]
    c: String,
    /// Space dimension n in c² − (n−1)|Dc|.
    #[arg(long, default_value_t = 2)]
    n: usize,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RateArgs {
    /// Sweep configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory for report.json and report.csv.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Table file for a table reference (overrides the config's path).
    #[arg(long)]
    table: Option<PathBuf>,
}

fn parse_pair(s: &str) -> Result<[f64; 2], String> {
    let v: Vec<f64> =
        s.split(',').map(|x| x.trim().parse::<f64>()).collect::<Result<_, _>>().map_err(|e| e.to_string())?;
    match v[..] {
        [a, b] => Ok([a, b]),
        _ => Err(format!("expected two comma-separated numbers, got {s:?}")),
    }
}

/// Splices the flags of a `--config` JSON object in front of the command-line flags, which
/// therefore take precedence.
fn expand_config(argv: Vec<String>, sub: &str) -> Result<Vec<String>, GeomError> {
    let Some(pos) = argv.iter().position(|a| a == "--config") else { return Ok(argv) };
    let path = argv.get(pos + 1).ok_or_else(|| GeomError::Invalid("--config needs a path".into()))?;
    let v: Value = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    let Value::Object(map) = v else {
        return Err(GeomError::Invalid("command config must be a JSON object".into()));
    };
    let mut extra = Vec::new();
    for (k, v) in map {
        let flag = format!("--{}", k.replace('_', "-"));
        match v {
            Value::Bool(true) => extra.push(flag),
            Value::Bool(false) | Value::Null => {}
            Value::Array(items) => {
                let parts: Vec<String> = items.iter().map(scalar).collect();
                extra.push(flag);
                extra.push(parts.join(","));
            }
            other => {
                extra.push(flag);
                extra.push(scalar(&other));
            }
        }
    }
    let at = argv.iter().position(|a| a == sub).expect("subcommand present");
    let mut out: Vec<String> = argv[..=at].to_vec();
    out.extend(extra);
    out.extend(
        argv[at + 1..]
            .iter()
            .enumerate()
            .filter(|(i, _)| at + 1 + i != pos && at + 1 + i != pos + 1)
            .map(|(_, a)| a.clone()),
    );
    Ok(out)
}

fn scalar(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn print_json(v: &Value) {
    println!("{}", serde_json::to_string_pretty(v).expect("serializable"));
}

fn cmd_cell(a: &CellArgs) -> Result<(), GeomError> {
    let op = a.op.config();
    let spec = op.build()?;
    let grid = PeriodicGrid::new(a.n, spec.period())?;
    let echo = json!({
        "operator": op, "p": a.p, "lambda": a.lambda, "nodes": a.n, "tol": a.tol,
        "eta": spec.perturbation().eta(), "curvature": a.scheme.scheme(),
    });
    if a.flatness {
        let r = solve_flatness(&spec, a.p, a.horizon, grid, a.scheme.scheme())?;
        print_json(&json!({
            "input": echo, "horizon": a.horizon, "effective_estimate": r.estimate, "flat": r.flat,
            "warning": r.warning, "oscillation_half": r.oscillation_half, "oscillation_max": r.oscillation_max,
            "dt": r.dt, "steps": r.steps,
        }));
        return Ok(());
    }
    let opts = CorrectorOptions {
        tol: a.tol,
        max_steps: a.max_steps,
        method: match a.method {
            MethodKind::Newton => CorrectorMethod::Newton,
            MethodKind::Explicit => CorrectorMethod::Explicit,
        },
        curvature: a.scheme.scheme(),
    };
    let s = solve_approx_corrector(&spec, a.p, a.lambda, grid, &opts)?;
    if let Some(path) = &a.out {
        std::fs::write(path, serde_json::to_string(&s.w.to_doc())?)?;
    }
    if !s.converged {
        return Err(GeomError::NotConverged { residual: s.residual, tol: s.tol });
    }
    print_json(&json!({
        "input": echo, "method": s.method, "effective_estimate": s.effective_estimate,
        "effective_bracket": s.effective_bracket, "residual": s.residual, "converged": s.converged,
        "iterations": s.iterations, "amplitude": s.amplitude,
    }));
    Ok(())
}

fn load_matching_table(path: &Path, spec: &OperatorSpec) -> Result<Option<EffectiveHamiltonianTable>, GeomError> {
    if !path.exists() {
        return Ok(None);
    }
    let t = EffectiveHamiltonianTable::load(path)?;
    Ok((t.spec_hash == spec.content_hash()).then_some(t))
}

fn cmd_table(a: &TableArgs) -> Result<(), GeomError> {
    let spec = a.op.config().build()?;
    let (table, reused) = match load_matching_table(&a.table, &spec)? {
        Some(t) => (t, true),
        None => {
            let opts = TableOptions {
                corrector: CorrectorOptions { tol: a.tol, curvature: a.scheme.scheme(), ..Default::default() },
                horizon: a.horizon,
            };
            let t = build_effective_table(&spec, a.m, a.lambda, PeriodicGrid::new(a.n, spec.period())?, &opts)?;
            t.save(&a.table)?;
            (t, false)
        }
    };
    print_json(&json!({
        "table": a.table, "reused": reused, "directions": table.len(), "complete": table.is_complete(),
        "method": table.metadata.method, "lambda": table.metadata.lambda, "nodes": table.metadata.nodes,
        "min": table.values.iter().copied().fold(f64::INFINITY, f64::min),
        "max": table.values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    }));
    if !table.is_complete() {
        return Err(GeomError::NotConverged { residual: f64::NAN, tol: a.tol });
    }
    Ok(())
}

fn cmd_evolve(a: &EvolveArgs) -> Result<(), GeomError> {
    let spec = a.op.config().build()?;
    let initial = match (&a.init_file, a.init) {
        (Some(p), _) => InitialData::File { path: p.clone() },
        (None, InitKind::Cone) => InitialData::Cone,
        (None, InitKind::VShape) => InitialData::VShape { alpha: a.alpha, directions: a.directions.clone() },
        (None, InitKind::Plane) => InitialData::Plane { p: a.slope },
    };
    let boundary = match a.boundary {
        BoundaryKind::Extrapolate => BoundaryRule::ExtrapolateLinear,
        BoundaryKind::Clamp => BoundaryRule::Clamp,
    };
    let opts = EvolveOptions {
        snapshots: a.snap.clone(),
        curvature: a.scheme.scheme(),
        min_resolution: 8.0,
        buffer_margin: a.buffer_margin,
    };
    let res = if a.effective {
        let path = a.table.as_ref().ok_or_else(|| GeomError::Invalid("--effective needs --table".into()))?;
        let table = EffectiveHamiltonianTable::load(path)?;
        let h = a.h.unwrap_or(1.0 / 64.0);
        let buffer = a.buffer_margin * table.gradient_bound() * a.t;
        let grid = Grid::Box(BoxGrid::centered(a.half_width + buffer, h, boundary, buffer)?);
        evolve_effective(&table, &initial.sample(grid)?, a.t, &opts)?
    } else {
        let eps = a.eps.ok_or_else(|| GeomError::Invalid("evolve needs --eps or --effective".into()))?;
        let h = a.h.unwrap_or(eps / 8.0);
        let buffer = a.buffer_margin * spec.speed_bound() * a.t;
        let grid = Grid::Box(BoxGrid::centered(a.half_width + buffer, h, boundary, buffer)?);
        evolve_eps(&spec, eps, &initial.sample(grid)?, a.t, &opts)?
    };
    let mut files = Vec::new();
    if let Some(dir) = &a.out {
        std::fs::create_dir_all(dir)?;
        for (k, s) in res.snapshots.iter().enumerate() {
            let path = dir.join(format!("snap-{k:03}.json"));
            let doc = json!({"t": s.t, "grid": s.u.to_doc()});
            std::fs::write(&path, serde_json::to_string(&doc)?)?;
            files.push(path);
        }
    }
    print_json(&json!({
        "label": res.label, "dt": res.dt, "cfl": res.cfl,
        "times": res.snapshots.iter().map(|s| s.t).collect::<Vec<_>>(),
        "final": {"min": res.last().u.min(), "max": res.last().u.max()},
        "files": files,
    }));
    Ok(())
}

fn cmd_radial(a: &RadialArgs) -> Result<(), GeomError> {
    let res = evolve_radial(a.eps, a.r_max, a.t, a.n, &a.snap)?;
    let radii: Vec<f64> =
        if a.at.is_empty() { [4.0, 8.0, 16.0].iter().map(|k| a.t + k * res.h).collect() } else { a.at.clone() };
    println!("r,t,phi,closed_form");
    for (t, _) in res.snapshots.iter().skip(1) {
        for &r in &radii {
            let phi = res.query(r, *t)?;
            let exact = radial_phi_eps(r, *t, a.eps).map(|v| v.to_string()).unwrap_or_default();
            println!("{r},{t},{phi},{exact}");
        }
    }
    Ok(())
}

fn cmd_oracle(a: &OracleArgs) -> Result<(), GeomError> {
    match a.which {
        Which::Lambertw => {
            println!("z,w");
            for &z in &a.params {
                println!("{z},{}", lambert_w(z)?);
            }
        }
        Which::Radial => {
            let [r, t, eps] = a.params[..] else {
                return Err(GeomError::Invalid("radial oracle needs --params r,t,eps".into()));
            };
            println!("r,t,eps,phi");
            println!("{r},{t},{eps},{}", radial_phi_eps(r, t, eps)?);
        }
        Which::Vshape => {
            let [x, t, alpha] = a.params[..] else {
                return Err(GeomError::Invalid("vshape oracle needs --params x1,t,alpha".into()));
            };
            let set: Vec<Vec<f64>> = a.directions.iter().map(|d| vec![*d]).collect();
            println!("x,t,alpha,u");
            println!("{x},{t},{alpha},{}", vshape_effective(&[x], t, alpha, &set)?);
        }
    }
    Ok(())
}

fn cmd_coercivity(a: &CoercivityArgs) -> Result<(), GeomError> {
    let c = ForcingField::from_source(&a.c, 2)?;
    let delta = check_coercivity(&c, a.n);
    print_json(&json!({"c": a.c, "n": a.n, "delta_est": delta, "coercive": delta > 0.0}));
    Ok(())
}

fn cmd_rate(a: &RateArgs) -> Result<(), GeomError> {
    let mut cfg = SweepConfig::load(&a.config)?;
    if let Some(t) = &a.table {
        match &mut cfg.reference {
            ReferenceConfig::Table { path, .. } => *path = Some(t.clone()),
            ReferenceConfig::ClosedForm => {
                return Err(GeomError::Invalid("--table given but the sweep uses a closed-form reference".into()))
            }
        }
    }
    let report = run_sweep(&cfg)?;
    let (json_path, csv_path) = emit_report(&report, &a.out)?;
    print_json(&json!({
        "report": json_path, "csv": csv_path, "fit": report.fit, "monotone": report.monotone, "flags": report.flags,
    }));
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let mut argv: Vec<String> = std::env::args().collect();
    const SUBS: [&str; 6] = ["cell", "table", "evolve", "radial", "oracle", "coercivity"];
    if let Some(sub) = argv.iter().skip(1).find(|a| !a.starts_with('-')).filter(|a| SUBS.contains(&a.as_str())) {
        let sub = sub.clone();
        match expand_config(argv, &sub) {
            Ok(v) => argv = v,
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(2);
            }
        }
    }
    let cli = Cli::try_parse_from(&argv).unwrap_or_else(|e| e.exit());
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("could not size the thread pool: {e}");
        }
    }
    let result = match &cli.command {
        Command::Cell(a) => cmd_cell(a),
        Command::Table(a) => cmd_table(a),
        Command::Evolve(a) => cmd_evolve(a),
        Command::Radial(a) => cmd_radial(a),
        Command::Oracle(a) => cmd_oracle(a),
        Command::Coercivity(a) => cmd_coercivity(a),
        Command::Rate(a) => cmd_rate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is_numerical() => {
            print_json(&json!({"status": "not-converged", "error": e.to_string()}));
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
