use std::collections::BTreeMap;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use relaxctl_core::grid::{sup_norm_diff, EntropyMode};
use relaxctl_core::hjb;
use relaxctl_core::kernel::build_kernel;
use relaxctl_core::mdp::Mdp;
use relaxctl_core::problem::{builtin_problem, validate_assumptions};
use relaxctl_core::rates::{self, Abscissa};
use relaxctl_core::{sim, GridPair, PolicyField, ProblemSpec, ScalarField};

use crate::config::{ConfigError, EvalMode, PolicySource, RawConfig, RunConfig};
use crate::exec::{default_workers, Pool};
use crate::io::{self, fmt_f64, IoError};

#[derive(Parser, Debug)]
#[command(name = "relaxctl", version, about = "Entropy-regularized control lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Soft value iteration on the kernel MDP; writes V_h and its Gibbs policy.
    SolveMdp(Common),
    /// Exploratory HJB by policy iteration; writes V and its Gibbs policy.
    SolveHjb(Common),
    /// Classical HJB; writes v and the maximizing control.
    SolveClassical(Common),
    /// Evaluates an MDP, HJB or uniform policy in the discrete and/or continuous model.
    EvalPolicy(Common),
    /// Monte Carlo rollouts of a policy from `x0`.
    Simulate(Common),
    /// Error sweep over h and λ lists with log-log fits.
    Sweep(Common),
    /// Error to the classical value along λ = h^{1/2}.
    Schedule(Common),
    /// Instability trajectories and temperature-control fields.
    Appendix(Common),
    /// Prints the measured constants and assumption checks.
    Validate(Common),
}

#[derive(Args, Debug, Clone, Default)]
struct Common {
    /// Flat `key = value` config file.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Replays the config stored in a manifest.json.
    #[arg(long, value_name = "FILE")]
    manifest: Option<PathBuf>,
    /// Config override, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Problem parameter override, repeatable.
    #[arg(long = "param", value_name = "NAME=VALUE")]
    param: Vec<String>,
    #[arg(long)]
    problem: Option<String>,
    /// Time step; a list or halving range for `sweep` and `schedule`.
    #[arg(long, allow_hyphen_values = true)]
    h: Option<String>,
    /// Temperature; a list or halving range for `sweep`.
    #[arg(long, allow_hyphen_values = true)]
    lambda: Option<String>,
    /// State nodes per axis.
    #[arg(long)]
    nodes: Option<String>,
    /// Control quadrature nodes.
    #[arg(long)]
    controls: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    paths: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    x0: Option<String>,
    #[arg(long)]
    policy: Option<String>,
    #[arg(long)]
    mode: Option<String>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Allow writing into a non-empty output directory.
    #[arg(long)]
    force: bool,
    #[arg(long)]
    workers: Option<String>,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::SolveMdp(_) => "solve-mdp",
            Command::SolveHjb(_) => "solve-hjb",
            Command::SolveClassical(_) => "solve-classical",
            Command::EvalPolicy(_) => "eval-policy",
            Command::Simulate(_) => "simulate",
            Command::Sweep(_) => "sweep",
            Command::Schedule(_) => "schedule",
            Command::Appendix(_) => "appendix",
            Command::Validate(_) => "validate",
        }
    }

    fn common(&self) -> &Common {
        match self {
            Command::SolveMdp(c)
            | Command::SolveHjb(c)
            | Command::SolveClassical(c)
            | Command::EvalPolicy(c)
            | Command::Simulate(c)
            | Command::Sweep(c)
            | Command::Schedule(c)
            | Command::Appendix(c)
            | Command::Validate(c) => c,
        }
    }
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Io(#[from] IoError),
    #[error("{0}")]
    Core(#[from] relaxctl_core::Error),
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Check(String),
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) if e.is_solver_failure() => 2,
            CliError::Check(_) => 2,
            _ => 1,
        }
    }
}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// process exit code: 0 on success, 1 on user error, 2 on solver failure.
pub fn dispatch<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn merged_config(cmd: &Command) -> Result<RawConfig, CliError> {
    let c = cmd.common();
    let mut raw = RawConfig::default();
    if let Some(path) = &c.manifest {
        let manifest = io::read_json(path)?;
        let name = path.display().to_string();
        match manifest.get("command").and_then(Value::as_str) {
            Some(stored) if stored == cmd.name() => {}
            Some(stored) => {
                return Err(CliError::Usage(format!("{name} was written by `{stored}`, not `{}`", cmd.name())));
            }
            None => return Err(CliError::Usage(format!("{name}: missing `command`"))),
        }
        let entries = manifest
            .get("config")
            .and_then(Value::as_object)
            .ok_or_else(|| CliError::Usage(format!("{name}: missing `config` object")))?;
        for (k, v) in entries {
            let v = v
                .as_str()
                .ok_or_else(|| CliError::Usage(format!("{name}: config value of `{k}` is not a string")))?;
            raw.set(k, v)?;
        }
    }
    if let Some(path) = &c.config {
        let text = std::fs::read_to_string(path).map_err(|source| IoError::Fs {
            path: path.clone(),
            source,
        })?;
        raw.merge(&RawConfig::parse(&text, &path.display().to_string())?);
    }
    for pair in &c.set {
        raw.set_pair(pair, "")?;
    }
    for pair in &c.param {
        raw.set_pair(pair, "param.")?;
    }
    let lists = matches!(cmd, Command::Sweep(_) | Command::Schedule(_));
    let flags: [(&str, &Option<String>); 10] = [
        ("problem", &c.problem),
        (if lists { "h_list" } else { "h" }, &c.h),
        (if lists { "lambda_list" } else { "lambda" }, &c.lambda),
        ("nodes", &c.nodes),
        ("controls", &c.controls),
        ("seed", &c.seed),
        ("paths", &c.paths),
        ("x0", &c.x0),
        ("policy", &c.policy),
        ("mode", &c.mode),
    ];
    for (key, value) in flags {
        if let Some(v) = value {
            raw.set(key, v)?;
        }
    }
    if matches!(cmd, Command::Appendix(_)) && raw.get("h").is_none() {
        raw.set("h", "0.1")?;
    }
    if let Some(v) = &c.workers {
        raw.set("workers", v)?;
    }
    if let Some(out) = &c.out {
        raw.set("out", &out.display().to_string())?;
    }
    if c.force {
        raw.set("force", "true")?;
    }
    Ok(raw)
}

/// Output directory plus the names of files written into it, in order.
struct Outputs {
    dir: Option<PathBuf>,
    files: Vec<String>,
}

impl Outputs {
    fn path(&mut self, name: &str) -> Option<PathBuf> {
        let dir = self.dir.as_ref()?;
        self.files.push(name.to_string());
        Some(dir.join(name))
    }
}

/// Ordered `label -> value` rows for the stdout table and the manifest.
#[derive(Default)]
struct Summary {
    rows: Vec<(String, String)>,
}

impl Summary {
    fn num(&mut self, label: impl Into<String>, x: f64) {
        self.rows.push((label.into(), fmt_f64(x)));
    }

    fn int(&mut self, label: impl Into<String>, n: usize) {
        self.rows.push((label.into(), n.to_string()));
    }

    fn text(&mut self, label: impl Into<String>, s: impl Into<String>) {
        self.rows.push((label.into(), s.into()));
    }

    fn print(&self) {
        let width = self.rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
        for (k, v) in &self.rows {
            println!("{k:<width$}  {v}");
        }
    }
}

struct Ctx {
    cfg: RunConfig,
    pool: Pool,
    out: Outputs,
    summary: Summary,
}

fn run(cmd: &Command) -> Result<(), CliError> {
    let raw = merged_config(cmd)?;
    let cfg = RunConfig::from_raw(&raw)?;
    let workers = cfg.workers.unwrap_or_else(default_workers);
    let pool = Pool::new(workers).map_err(|e| CliError::Usage(format!("worker pool: {e}")))?;
    let dir = match (&cfg.out, cmd) {
        (Some(d), _) => Some(PathBuf::from(d)),
        (None, Command::Validate(_)) => None,
        (None, _) => Some(PathBuf::from(format!("relaxctl-out/{}", cmd.name()))),
    };
    if let Some(d) = &dir {
        io::prepare_out_dir(d, cfg.force)?;
    }
    let mut ctx = Ctx {
        cfg,
        pool,
        out: Outputs { dir, files: Vec::new() },
        summary: Summary::default(),
    };
    ctx.summary.text("command", cmd.name());
    ctx.summary.text("problem", ctx.cfg.problem.clone());
    let result = match cmd {
        Command::SolveMdp(_) => solve_mdp(&mut ctx),
        Command::SolveHjb(_) => solve_hjb(&mut ctx),
        Command::SolveClassical(_) => solve_classical(&mut ctx),
        Command::EvalPolicy(_) => eval_policy(&mut ctx),
        Command::Simulate(_) => simulate(&mut ctx),
        Command::Sweep(_) => sweep(&mut ctx),
        Command::Schedule(_) => schedule(&mut ctx),
        Command::Appendix(_) => appendix(&mut ctx),
        Command::Validate(_) => validate(&mut ctx),
    };
    ctx.summary.print();
    result?;
    write_manifest(&mut ctx, cmd.name())
}

fn write_manifest(ctx: &mut Ctx, command: &str) -> Result<(), CliError> {
    let Some(path) = ctx.out.path("manifest.json") else {
        return Ok(());
    };
    let mut constants = BTreeMap::new();
    if let Ok(grid) = ctx.cfg.spec.grids(ctx.cfg.nodes, ctx.cfg.controls) {
        if let Ok(rep) = validate_assumptions(&ctx.cfg.spec, &grid) {
            for (k, v) in rep.constants() {
                constants.insert(k.to_string(), Value::String(fmt_f64(v)));
            }
        }
    }
    let results: BTreeMap<String, String> = ctx.summary.rows.iter().cloned().collect();
    let outputs: Vec<&String> = ctx.out.files.iter().filter(|f| f.as_str() != "manifest.json").collect();
    let manifest = json!({
        "command": command,
        "config": ctx.cfg.resolved(),
        "constants": constants,
        "outputs": outputs,
        "results": results,
        "versions": {
            "relaxctl-lab": env!("CARGO_PKG_VERSION"),
            "relaxctl-core": relaxctl_core::VERSION,
        },
    });
    io::write_json(&path, &manifest)?;
    Ok(())
}

fn grids(cfg: &RunConfig) -> Result<GridPair, CliError> {
    Ok(cfg.spec.grids(cfg.nodes, cfg.controls)?)
}

/// Soft value iteration and Gibbs policy on the configured grid.
fn mdp_solution(ctx: &mut Ctx) -> Result<(ScalarField, PolicyField, ScalarField), CliError> {
    let cfg = &ctx.cfg;
    let params = cfg.solve_params()?;
    let grid = grids(cfg)?;
    let kernel = build_kernel(&cfg.spec, &params, &grid, &ctx.pool)?;
    let mdp = Mdp::new(&cfg.spec, &params, &kernel)?;
    let fp = mdp.solve_vh(&ctx.pool)?;
    let gibbs = mdp.gibbs_policy(&fp.value, &ctx.pool)?;
    ctx.summary.int("vi_iterations", fp.iterations);
    ctx.summary.num("vi_residual", fp.residual);
    ctx.summary.num("vi_last_increment", fp.last_increment);
    if cfg.dump_kernel {
        if let Some(path) = ctx.out.path("kernel.csv") {
            let header: Vec<String> = ["control", "from", "to", "p"].iter().map(|s| s.to_string()).collect();
            let rows: Vec<Vec<String>> = kernel
                .entries(cfg.kernel_threshold)
                .map(|(j, i, k, p)| vec![j.to_string(), i.to_string(), k.to_string(), fmt_f64(p)])
                .collect();
            io::write_csv(&path, &header, &rows)?;
        }
    }
    Ok((fp.value, gibbs.policy, gibbs.log_partition))
}

fn solve_mdp(ctx: &mut Ctx) -> Result<(), CliError> {
    let (value, policy, log_z) = mdp_solution(ctx)?;
    let params = ctx.cfg.solve_params()?;
    let grid = grids(&ctx.cfg)?;
    let r = ctx.cfg.spec.reward_sup(&grid)?;
    ctx.summary.num("sup_V_h", value.sup_norm());
    ctx.summary.num("bound_h_r_over_1_minus_gamma", params.step_h() * r / (1.0 - params.discount_gamma()));
    ctx.summary.num("sup_pi_h", policy.sup_norm());
    if let Some(p) = ctx.out.path("value.csv") {
        io::fields_csv(&p, &["V_h", "log_Z"], &[&value, &log_z])?;
    }
    if let Some(p) = ctx.out.path("policy.csv") {
        io::policy_csv(&p, &policy)?;
    }
    Ok(())
}

fn solve_hjb(ctx: &mut Ctx) -> Result<(), CliError> {
    let cfg = &ctx.cfg;
    let grid = grids(cfg)?;
    let sol = hjb::solve_exploratory_hjb(&cfg.spec, cfg.lambda, &grid, &cfg.hjb)?;
    let res = hjb::hjb_residual(&cfg.spec, cfg.lambda, &grid, &sol.value, cfg.stencil)?;
    ctx.summary.int("hjb_iterations", sol.iterations);
    ctx.summary.num("hjb_residual", sol.residual);
    ctx.summary.num("sup_V", sol.value.sup_norm());
    ctx.summary.num("sup_pi", sol.policy.sup_norm());
    if let Some(p) = ctx.out.path("value.csv") {
        io::fields_csv(&p, &["V", "residual"], &[&sol.value, &res])?;
    }
    if let Some(p) = ctx.out.path("policy.csv") {
        io::policy_csv(&p, &sol.policy)?;
    }
    Ok(())
}

fn solve_classical(ctx: &mut Ctx) -> Result<(), CliError> {
    let cfg = &ctx.cfg;
    let grid = grids(cfg)?;
    let sol = hjb::solve_classical_hjb(&cfg.spec, &grid, &cfg.hjb)?;
    let res = hjb::classical_residual(&cfg.spec, &grid, &sol.value, cfg.stencil)?;
    ctx.summary.int("howard_iterations", sol.iterations);
    ctx.summary.num("residual", sol.residual);
    ctx.summary.num("sup_v", sol.value.sup_norm());
    if let Some(p) = ctx.out.path("value.csv") {
        io::fields_csv(&p, &["v", "u_star", "residual"], &[&sol.value, &sol.control, &res])?;
    }
    Ok(())
}

fn chosen_policy(ctx: &mut Ctx) -> Result<PolicyField, CliError> {
    match ctx.cfg.policy {
        PolicySource::Mdp => Ok(mdp_solution(ctx)?.1),
        PolicySource::Hjb => {
            let grid = grids(&ctx.cfg)?;
            let sol = hjb::solve_exploratory_hjb(&ctx.cfg.spec, ctx.cfg.lambda, &grid, &ctx.cfg.hjb)?;
            ctx.summary.int("hjb_iterations", sol.iterations);
            Ok(sol.policy)
        }
        PolicySource::Uniform => {
            let grid = grids(&ctx.cfg)?;
            Ok(PolicyField::uniform(grid.state, grid.control))
        }
    }
}

fn eval_policy(ctx: &mut Ctx) -> Result<(), CliError> {
    let pi = chosen_policy(ctx)?;
    let cfg = &ctx.cfg;
    let grid = grids(cfg)?;
    let mut names = Vec::new();
    let mut fields = Vec::new();
    if matches!(cfg.mode, EvalMode::Discrete | EvalMode::Both) {
        let params = cfg.solve_params()?;
        let kernel = build_kernel(&cfg.spec, &params, &grid, &ctx.pool)?;
        let fp = Mdp::new(&cfg.spec, &params, &kernel)?.evaluate_policy(&pi, &ctx.pool)?;
        ctx.summary.int("discrete_iterations", fp.iterations);
        ctx.summary.num("sup_V_h_pi", fp.value.sup_norm());
        names.push("V_h_pi");
        fields.push(fp.value);
    }
    if matches!(cfg.mode, EvalMode::Continuous | EvalMode::Both) {
        let reg = hjb::evaluate_policy_continuous(&cfg.spec, cfg.lambda, &grid, &pi, true)?;
        let unreg = hjb::evaluate_policy_continuous(&cfg.spec, cfg.lambda, &grid, &pi, false)?;
        ctx.summary.num("sup_V_pi", reg.sup_norm());
        ctx.summary.num("sup_v_pi", unreg.sup_norm());
        names.extend(["V_pi", "v_pi"]);
        fields.extend([reg, unreg]);
    }
    let entropy = relaxctl_core::grid::entropy(&pi, EntropyMode::Safe)?;
    names.push("entropy");
    fields.push(entropy);
    if let Some(p) = ctx.out.path("value.csv") {
        let refs: Vec<&ScalarField> = fields.iter().collect();
        io::fields_csv(&p, &names, &refs)?;
    }
    if let Some(p) = ctx.out.path("policy.csv") {
        io::policy_csv(&p, &pi)?;
    }
    Ok(())
}

fn estimate_json(e: &sim::PathEstimate) -> Value {
    json!({
        "mean": fmt_f64(e.mean),
        "std_error": fmt_f64(e.std_error),
        "paths_used": e.paths_used,
        "tail_bound": fmt_f64(e.tail_bound),
        "horizon_t": fmt_f64(e.horizon_t),
    })
}

fn simulate(ctx: &mut Ctx) -> Result<(), CliError> {
    let pi = chosen_policy(ctx)?;
    let cfg = &ctx.cfg;
    let x0 = cfg.x0;
    let mut report = BTreeMap::new();
    if matches!(cfg.mode, EvalMode::Discrete | EvalMode::Both) {
        let params = cfg.solve_params()?;
        let e = sim::rollout_discrete(&cfg.spec, &params, &pi, x0, &cfg.rollout, &ctx.pool)?;
        ctx.summary.num("discrete_mean", e.mean);
        ctx.summary.num("discrete_std_error", e.std_error);
        ctx.summary.num("discrete_tail_bound", e.tail_bound);
        report.insert("discrete", estimate_json(&e));
    }
    if matches!(cfg.mode, EvalMode::Continuous | EvalMode::Both) {
        let e = sim::rollout_continuous(&cfg.spec, cfg.lambda, &pi, x0, &cfg.rollout, &ctx.pool)?;
        ctx.summary.num("continuous_mean", e.mean);
        ctx.summary.num("continuous_std_error", e.std_error);
        ctx.summary.num("continuous_tail_bound", e.tail_bound);
        report.insert("continuous", estimate_json(&e));
    }
    if let Some(p) = ctx.out.path("estimate.json") {
        io::write_json(&p, &json!(report))?;
    }
    if cfg.dump_paths > 0 {
        let params = cfg.solve_params()?;
        let points = sim::record_paths(&cfg.spec, &params, &pi, x0, &cfg.rollout, cfg.dump_paths)?;
        let dim = cfg.spec.dim();
        if let Some(p) = ctx.out.path("paths.csv") {
            let mut header = vec!["path".to_string(), "t".to_string()];
            header.extend((0..dim).map(|a| if dim == 1 { "x".to_string() } else { format!("x{a}") }));
            header.extend(["action".to_string(), "running_payoff".to_string()]);
            let rows: Vec<Vec<String>> = points
                .iter()
                .map(|q| {
                    let mut row = vec![q.path.to_string(), fmt_f64(q.t)];
                    row.extend((0..dim).map(|a| fmt_f64(q.state[a])));
                    row.extend([fmt_f64(q.action), fmt_f64(q.running_payoff)]);
                    row
                })
                .collect();
            io::write_csv(&p, &header, &rows)?;
        }
    }
    Ok(())
}

const RATE_COLUMNS: [&str; 24] = [
    "h",
    "lambda",
    "state_nodes",
    "control_nodes",
    "err_V_vs_Vh",
    "err_plugin_cont",
    "err_plugin_disc",
    "err_to_classical",
    "err_to_classical_unreg",
    "err_relaxed_to_classical",
    "err_plugin_vs_Vh",
    "plugin_cont_excess",
    "plugin_disc_excess",
    "tolerance",
    "plugin_ok",
    "triangle_ok",
    "pi_h_sup",
    "pi_sup",
    "pi_h_sup_scaled",
    "vi_iterations",
    "vi_residual",
    "hjb_iterations",
    "hjb_residual",
    "refinement_max_relative_change",
];

fn rate_row(r: &rates::ErrorRecord) -> Vec<String> {
    vec![
        fmt_f64(r.h),
        fmt_f64(r.lambda),
        r.state_nodes.to_string(),
        r.control_nodes.to_string(),
        fmt_f64(r.err_v_vs_vh),
        fmt_f64(r.err_plugin_cont),
        fmt_f64(r.err_plugin_disc),
        fmt_f64(r.err_to_classical),
        fmt_f64(r.err_to_classical_unreg),
        fmt_f64(r.err_relaxed_to_classical),
        fmt_f64(r.err_plugin_vs_vh),
        fmt_f64(r.plugin_cont_excess),
        fmt_f64(r.plugin_disc_excess),
        fmt_f64(r.tolerance),
        r.plugin_ok().to_string(),
        r.triangle_ok().to_string(),
        fmt_f64(r.pi_h_sup),
        fmt_f64(r.pi_sup),
        fmt_f64(r.pi_h_sup_scaled),
        r.vi_iterations.to_string(),
        fmt_f64(r.vi_residual),
        r.hjb_iterations.to_string(),
        fmt_f64(r.hjb_residual),
        r.refinement.map(|f| fmt_f64(f.max_relative_change)).unwrap_or_default(),
    ]
}

fn strings(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

fn missing_csv(out: &mut Outputs, missing: &[rates::MissingCell]) -> Result<(), CliError> {
    if missing.is_empty() {
        return Ok(());
    }
    if let Some(p) = out.path("missing.csv") {
        let rows: Vec<Vec<String>> = missing
            .iter()
            .map(|m| vec![fmt_f64(m.h), fmt_f64(m.lambda), m.cause.clone()])
            .collect();
        io::write_csv(&p, &strings(&["h", "lambda", "cause"]), &rows)?;
    }
    Ok(())
}

fn fit_json(f: &rates::LogLogFit) -> Value {
    json!({
        "slope": fmt_f64(f.slope),
        "intercept": fmt_f64(f.intercept),
        "r_squared": fmt_f64(f.r_squared),
    })
}

fn sweep(ctx: &mut Ctx) -> Result<(), CliError> {
    let cfg = &ctx.cfg;
    let report = rates::run_sweep(&cfg.spec, &cfg.h_list, &cfg.lambda_list, &cfg.sweep_config(), &ctx.pool)?;
    ctx.summary.int("cells", report.records.len());
    ctx.summary.int("missing", report.missing.len());
    ctx.summary.num("classical_residual", report.classical_residual);
    if let Some(p) = ctx.out.path("rates.csv") {
        let rows: Vec<Vec<String>> = report.records.iter().map(rate_row).collect();
        io::write_csv(&p, &strings(&RATE_COLUMNS), &rows)?;
    }
    missing_csv(&mut ctx.out, &report.missing)?;
    // every metric appears, with an empty list when no fit was possible
    let mut fits: BTreeMap<&str, Vec<Value>> = rates::METRICS.iter().map(|&m| (m, Vec::new())).collect();
    for f in &report.fits {
        let mut entry = fit_json(&f.fit);
        entry["against"] = json!(f.against.name());
        entry["fixed"] = json!(fmt_f64(f.fixed));
        entry["points"] = json!(f.points);
        fits.entry(f.metric).or_default().push(entry);
        let fixed_name = if matches!(f.against, Abscissa::H | Abscissa::HLogH) { "lambda" } else { "h" };
        ctx.summary.text(
            format!("{} vs {} ({fixed_name} = {})", f.metric, f.against.name(), fmt_f64(f.fixed)),
            format!("slope {:.4} R2 {:.4}", f.fit.slope, f.fit.r_squared),
        );
        let name = format!("{}_vs_{}_at_{}.dat", f.metric, f.against.name(), fmt_f64(f.fixed));
        if let Some(p) = ctx.out.path(&name) {
            let points: Vec<(f64, f64)> = report
                .records
                .iter()
                .filter(|r| if fixed_name == "lambda" { r.lambda == f.fixed } else { r.h == f.fixed })
                .filter_map(|r| Some((f.against.eval(r.h, r.lambda), r.metric(f.metric)?)))
                .collect();
            io::write_dat(&p, (f.against.name(), f.metric), &points)?;
        }
    }
    if let Some(p) = ctx.out.path("fits.json") {
        io::write_json(&p, &json!(fits))?;
    }
    Ok(())
}

fn schedule(ctx: &mut Ctx) -> Result<(), CliError> {
    let cfg = &ctx.cfg;
    let report = rates::schedule_eval(&cfg.spec, &cfg.h_list, &cfg.sweep_config(), &ctx.pool)?;
    for row in &report.rows {
        ctx.summary.num(format!("err_to_classical (h = {})", fmt_f64(row.h)), row.err_to_classical);
    }
    ctx.summary.text("strictly_decreasing", report.strictly_decreasing().to_string());
    if let Some(f) = &report.fit {
        ctx.summary.text("fit", format!("slope {:.4} R2 {:.4}", f.slope, f.r_squared));
    }
    if let Some(p) = ctx.out.path("schedule.csv") {
        let rows: Vec<Vec<String>> = report
            .rows
            .iter()
            .map(|r| vec![fmt_f64(r.h), fmt_f64(r.lambda), fmt_f64(r.err_to_classical), fmt_f64(r.err_to_classical_unreg)])
            .collect();
        io::write_csv(&p, &strings(&["h", "lambda", "err_to_classical", "err_to_classical_unreg"]), &rows)?;
    }
    missing_csv(&mut ctx.out, &report.missing)?;
    if let Some(p) = ctx.out.path("schedule.dat") {
        let pts: Vec<(f64, f64)> = report
            .rows
            .iter()
            .map(|r| (r.lambda * r.h.ln().abs(), r.err_to_classical))
            .collect();
        io::write_dat(&p, ("h_pow_half_abs_ln_h", "err_to_classical"), &pts)?;
    }
    if let Some(p) = ctx.out.path("schedule_fit.json") {
        let v = report.fit.as_ref().map(fit_json).unwrap_or(Value::Null);
        io::write_json(&p, &v)?;
    }
    Ok(())
}

fn appendix(ctx: &mut Ctx) -> Result<(), CliError> {
    let cfg = &ctx.cfg;
    // `h` is the instability period; problem parameters apply to whichever demo they name
    let h = cfg.h;
    let param_for = |name: &str| -> Vec<(String, f64)> {
        if cfg.problem == name {
            cfg.params.clone()
        } else {
            Vec::new()
        }
    };
    let mut inst_params = param_for("instability");
    inst_params.retain(|(k, _)| k != "h");
    inst_params.push(("h".to_string(), h));
    let inst = builtin_problem("instability", &inst_params)?;
    let demo = sim::trajectory_divergence_demo(&inst, cfg.t_end, cfg.samples_per_h)?;
    ctx.summary.num("instability_h", h);
    ctx.summary.text("Y(kh) = kh", demo.y_exact_at_decisions.to_string());
    ctx.summary.num("sup_abs_X", demo.sup_abs_x);
    ctx.summary.num("sup_abs_Y_minus_X", demo.sup_divergence);
    ctx.summary.num("abs_Y_minus_X_at_end", demo.divergence_at_end);
    if let Some(p) = ctx.out.path("trajectory.csv") {
        let rows: Vec<Vec<String>> = (0..demo.times.len())
            .map(|k| vec![fmt_f64(demo.times[k]), fmt_f64(demo.y[k]), fmt_f64(demo.x[k])])
            .collect();
        io::write_csv(&p, &strings(&["t", "Y", "X"]), &rows)?;
    }
    let temp = builtin_problem("temperature", &param_for("temperature"))?;
    temperature_fields(ctx, &temp)?;
    if !demo.y_exact_at_decisions {
        return Err(CliError::Check("sampled-data path left Y(kh) = kh".into()));
    }
    Ok(())
}

fn temperature_fields(ctx: &mut Ctx, spec: &ProblemSpec) -> Result<(), CliError> {
    let cfg = &ctx.cfg;
    let grid = spec.grids(cfg.nodes, cfg.controls)?;
    let classical = hjb::solve_classical_hjb(spec, &grid, &cfg.hjb)?;
    let relaxed = hjb::solve_exploratory_hjb(spec, cfg.lambda, &grid, &cfg.hjb)?;
    ctx.summary.num("temperature_classical_residual", classical.residual);
    ctx.summary.num("temperature_exploratory_residual", relaxed.residual);
    ctx.summary.num("temperature_gap", sup_norm_diff(&classical.value, &relaxed.value)?);
    if let Some(p) = ctx.out.path("temperature_classical.csv") {
        io::fields_csv(&p, &["v", "u_star"], &[&classical.value, &classical.control])?;
    }
    if let Some(p) = ctx.out.path("temperature_exploratory.csv") {
        io::fields_csv(&p, &["V"], &[&relaxed.value])?;
    }
    if let Some(p) = ctx.out.path("temperature_policy.csv") {
        io::policy_csv(&p, &relaxed.policy)?;
    }
    Ok(())
}

fn validate(ctx: &mut Ctx) -> Result<(), CliError> {
    let cfg = &ctx.cfg;
    let grid = grids(cfg)?;
    let rep = validate_assumptions(&cfg.spec, &grid)?;
    for (k, v) in rep.constants() {
        ctx.summary.num(k, v);
    }
    ctx.summary.text("controlled_diffusion", rep.controlled_diffusion.to_string());
    ctx.summary.num("sigma_gradient_sqrt_h", rep.sigma_gradient_sqrt_h(cfg.h));
    for c in &rep.checks {
        let verdict = if c.passed { "pass" } else { "FAIL" };
        ctx.summary.text(format!("check {}", c.name), format!("{verdict} ({})", c.detail));
    }
    ctx.summary.text("all_checks_pass", rep.passed().to_string());
    if let Some(p) = ctx.out.path("validate.json") {
        let checks: Vec<Value> = rep
            .checks
            .iter()
            .map(|c| json!({"name": c.name, "passed": c.passed, "detail": c.detail}))
            .collect();
        io::write_json(&p, &json!({ "checks": checks }))?;
    }
    Ok(())
}
