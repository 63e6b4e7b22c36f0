//! Subcommand implementations.

use std::path::Path;

use asep_core::bridges::{self, BridgeSpec};
use asep_core::config::{Config, ExperimentSection, ParamGroup};
use asep_core::ctmc::{self, gillespie_run, Budget};
use asep_core::experiments::{self, acceptance_grid, Verdict};
use asep_core::mpa::{self, config_from_index};
use asep_core::ratefn::{rate_closed, rate_variational, FiniteDimGrid};
use asep_core::report::{fmt_f64, write_output, RunRecord, Table};
use asep_core::scalar::total_variation;
use asep_core::twolayer::{self, ExactSampler, WindowSpec};
use asep_core::{AsepError, BoundaryRates, FanParams, NumericMode};
use clap::{Args, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::{Cli, Command, Failure, GlobalArgs, ParamArgs};

type CmdResult = std::result::Result<(), Failure>;

#[derive(Debug, Clone, Args, Serialize)]
pub struct StationaryArgs {
    /// System size.
    #[arg(long, env = "ASEP_N", default_value_t = 6)]
    pub n: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TwoLayerArgs {
    #[arg(long, env = "ASEP_N", default_value_t = 6)]
    pub n: usize,
    /// Total-variation tolerance in float mode.
    #[arg(long, env = "ASEP_TOL", default_value_t = 1e-9)]
    pub tol: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplerKind {
    /// Exact two-layer sampler.
    TwoLayer,
    /// Uniform Bernoulli bridge from (0, x) to (N, y).
    Bridge,
    /// Particle dynamics; reports site densities.
    Gillespie,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SampleArgs {
    #[arg(long, env = "ASEP_SAMPLER", value_enum, default_value_t = SamplerKind::TwoLayer)]
    pub sampler: SamplerKind,
    #[arg(long, env = "ASEP_N", default_value_t = 6)]
    pub n: usize,
    /// Number of samples (two-layer, bridge).
    #[arg(long, env = "ASEP_SAMPLES", default_value_t = 1000)]
    pub samples: usize,
    /// Bridge start height.
    #[arg(long, env = "ASEP_X", default_value_t = 0, allow_hyphen_values = true)]
    pub x: i64,
    /// Bridge end height (default x + N/2).
    #[arg(long, env = "ASEP_Y", allow_hyphen_values = true)]
    pub y: Option<i64>,
    /// Jumps for the Gillespie run (10% burn-in).
    #[arg(long, env = "ASEP_EVENTS", default_value_t = 1_000_000)]
    pub events: u64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct BridgesArgs {
    /// Random instances per inequality.
    #[arg(long, env = "ASEP_INSTANCES", default_value_t = 1000)]
    pub instances: usize,
    /// Largest path length.
    #[arg(long, env = "ASEP_MAX_N", default_value_t = 10)]
    pub max_n: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct RateArgs {
    /// Densities of line profiles as `start:stop:step`, e.g. `0.1:0.9:0.1`.
    #[arg(long, env = "ASEP_LINE_SLOPES", value_parser = parse_range)]
    pub line_slopes: Option<Slopes>,
    /// Also evaluate the variational form on a K x K grid.
    #[arg(long, env = "ASEP_K")]
    pub k: Option<usize>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct LdpArgs {
    #[arg(long, env = "ASEP_RHOS", value_delimiter = ',', default_values_t = [0.3, 0.5, 0.7])]
    pub rhos: Vec<f64>,
    #[arg(long, env = "ASEP_NS", value_delimiter = ',', default_values_t = [50, 100, 200, 400])]
    pub ns: Vec<usize>,
    #[arg(long, env = "ASEP_TOL", default_value_t = 0.05)]
    pub tol: f64,
    /// Columns of the finite-dimensional rate grid.
    #[arg(long, env = "ASEP_COLUMNS", default_value_t = FiniteDimGrid::default().columns)]
    pub columns: usize,
    /// Slope resolution of the finite-dimensional rate grid.
    #[arg(long, env = "ASEP_SLOPE_STEPS", default_value_t = FiniteDimGrid::default().slope_steps)]
    pub slope_steps: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ExperimentArgs {
    /// Experiment name; overrides `[experiment] name`. One of marginal,
    /// asymptotics, rate, ldp, boltzmann, separation, bridges.
    #[arg(long, env = "ASEP_NAME")]
    pub name: Option<String>,
    /// Grid size for the variational rate.
    #[arg(long, env = "ASEP_K", default_value_t = 200)]
    pub k: usize,
    /// Window height range at the right end, as `u,v`.
    #[arg(long, env = "ASEP_WINDOW", value_delimiter = ',', num_args = 2, default_values_t = [0.4, 0.6])]
    pub window: Vec<f64>,
    /// Separation distance.
    #[arg(long, env = "ASEP_R", default_value_t = 2)]
    pub r: usize,
    /// Allowed fraction of close sites.
    #[arg(long, env = "ASEP_EPS", default_value_t = 0.2)]
    pub eps: f64,
}

/// Evenly spaced values parsed from `start:stop:step`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Slopes(pub Vec<f64>);

fn parse_range(s: &str) -> std::result::Result<Slopes, String> {
    let parts: Vec<f64> = s
        .split(':')
        .map(|x| x.trim().parse::<f64>().map_err(|e| format!("`{x}`: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    let [start, stop, step] = parts[..] else {
        return Err("expected start:stop:step".into());
    };
    if !(step > 0.0) || stop < start {
        return Err("need step > 0 and stop >= start".into());
    }
    let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
    // Round to 12 decimals so that 0.1 + 4 * 0.1 prints as 0.5.
    Ok(Slopes((0..count).map(|i| ((start + i as f64 * step) * 1e12).round() / 1e12).collect()))
}

/// Inputs embedded in every JSON record.
#[derive(Serialize)]
struct Inputs<'a, A: Serialize> {
    fan: Option<FanParams>,
    rates: Option<BoundaryRates>,
    global: &'a GlobalArgs,
    args: &'a A,
    config: Option<&'a Config>,
}

struct Ctx {
    global: GlobalArgs,
    config: Option<Config>,
}

impl Ctx {
    fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.global.seed)
    }

    fn mode(&self) -> NumericMode {
        self.global.mode.numeric()
    }

    fn config_params(&self) -> Option<ParamGroup> {
        self.config.as_ref().and_then(|c| c.params)
    }

    /// Config parameters overridden by flags; unset values default to 0.
    fn params(&self, o: &ParamArgs) -> Result<FanParams, Failure> {
        let base = match self.config_params() {
            Some(g) => g.fan()?,
            None => FanParams::tasep(0.0, 0.0)?,
        };
        Ok(FanParams::new(
            o.a.unwrap_or(base.a),
            o.b.unwrap_or(base.b),
            o.c.unwrap_or(base.c),
            o.d.unwrap_or(base.d),
            o.q.unwrap_or(base.q),
        )?)
    }

    fn has_overrides(o: &ParamArgs) -> bool {
        [o.a, o.b, o.c, o.d, o.q].iter().any(Option::is_some)
    }

    /// Fan parameters in the fan region.
    fn fan(&self, o: &ParamArgs) -> Result<FanParams, Failure> {
        let p = self.params(o)?;
        p.require_fan()?;
        Ok(p)
    }

    /// Jump rates; taken verbatim from a rates config without overrides.
    fn rates(&self, o: &ParamArgs) -> Result<BoundaryRates, Failure> {
        match self.config_params() {
            Some(ParamGroup::Rates(r)) if !Self::has_overrides(o) => Ok(r),
            _ => Ok(self.params(o)?.from_fan()?),
        }
    }

    fn inputs<'a, A: Serialize>(&'a self, fan: Option<FanParams>, rates: Option<BoundaryRates>, args: &'a A) -> Inputs<'a, A> {
        Inputs { fan, rates, global: &self.global, args, config: self.config.as_ref() }
    }

    /// Writes `name.csv` and `name.json` (plus `name.dat` when asked) under
    /// `--out`, or prints the CSV to stdout.
    fn emit<I: Serialize, R: Serialize>(&self, name: &str, inputs: I, table: &Table, dat: bool, result: R) -> CmdResult {
        let Some(dir) = &self.global.out else {
            print!("{}", table.to_csv());
            return Ok(());
        };
        let record = RunRecord::new(name, self.global.seed, inputs, result).to_json()?;
        let mut files = vec![(format!("{name}.csv"), table.to_csv()), (format!("{name}.json"), record + "\n")];
        if dat {
            files.push((format!("{name}.dat"), table.to_dat()));
        }
        for (file, contents) in &files {
            write_output(dir, file, contents)?;
            println!("{}", Path::new(dir).join(file).display());
        }
        Ok(())
    }
}

fn judge(v: &Verdict) -> CmdResult {
    let tag = if v.passed { "PASS" } else { "FAIL" };
    eprintln!("{tag} {}: worst {} (tolerance {}); {}", v.experiment, fmt_f64(v.worst), fmt_f64(v.tolerance), v.note);
    if v.passed {
        Ok(())
    } else {
        Err(Failure { code: 5, message: format!("verdict failed for {}", v.experiment) })
    }
}

fn json<T: Serialize>(x: &T) -> Result<serde_json::Value, Failure> {
    serde_json::to_value(x).map_err(|e| Failure { code: 1, message: e.to_string() })
}

fn bits(idx: usize, n: usize) -> String {
    config_from_index(idx, n).iter().map(|&b| if b { '1' } else { '0' }).collect()
}

fn heights(h: &[i64]) -> String {
    h.iter().map(i64::to_string).collect::<Vec<_>>().join(" ")
}

pub fn dispatch(cli: Cli) -> CmdResult {
    if let Some(k) = cli.global.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build_global()
            .map_err(|e| Failure { code: 1, message: e.to_string() })?;
    }
    let config = cli.global.config.as_deref().map(Config::load).transpose()?;
    let ctx = Ctx { global: cli.global, config };
    match cli.command {
        Command::Stationary { params, args } => stationary(&ctx, &params, &args),
        Command::TwoLayer { params, args } => two_layer(&ctx, &params, &args),
        Command::Sample { params, args } => sample(&ctx, &params, &args),
        Command::Bridges { args } => bridge_suites(&ctx, &args),
        Command::RateFn { params, args } => rate_fn(&ctx, &params, &args),
        Command::LdpCheck { params, args } => ldp_check(&ctx, &params, &args),
        Command::Experiments { params, args } => run_experiment(&ctx, &params, &args),
    }
}

#[derive(Serialize)]
struct TableSummary {
    dim: usize,
    certified_error: f64,
    total: f64,
}

fn stationary(ctx: &Ctx, o: &ParamArgs, args: &StationaryArgs) -> CmdResult {
    let p = ctx.fan(o)?;
    let table = mpa::stationary_table(&p, args.n, ctx.mode())?;
    let mut t = Table::new(["config", "probability"]);
    for (i, x) in table.value.iter().enumerate() {
        t.push(vec![bits(i, args.n), fmt_f64(*x)]);
    }
    let summary = TableSummary { dim: table.dim, certified_error: table.certified_error, total: table.value.iter().sum() };
    ctx.emit("stationary", ctx.inputs(Some(p), None, args), &t, false, summary)
}

fn two_layer(ctx: &Ctx, o: &ParamArgs, args: &TwoLayerArgs) -> CmdResult {
    let p = ctx.fan(o)?;
    let report = experiments::run_marginal_grid(&[p], &[args.n], ctx.mode(), args.tol)?;
    let layer = twolayer::marginal_first_layer(&p, args.n, NumericMode::float())?.value;
    let table = mpa::stationary_table(&p, args.n, NumericMode::float())?.value;
    let mut t = Table::new(["config", "two_layer", "stationary", "difference"]);
    for (i, (x, y)) in layer.iter().zip(&table).enumerate() {
        t.push(vec![bits(i, args.n), fmt_f64(*x), fmt_f64(*y), fmt_f64(x - y)]);
    }
    ctx.emit("two-layer", ctx.inputs(Some(p), None, args), &t, false, &report)?;
    judge(&report.verdict)
}

#[derive(Serialize)]
struct DynamicsSummary {
    events: u64,
    total_time: f64,
    /// Distance of the empirical measure from the exact table, when both exist.
    tv_to_exact: Option<f64>,
}

fn sample(ctx: &Ctx, o: &ParamArgs, args: &SampleArgs) -> CmdResult {
    let mut rng = ctx.rng();
    let n = args.n;
    match args.sampler {
        SamplerKind::TwoLayer => {
            let p = ctx.fan(o)?;
            let sampler = ExactSampler::new(&p, n, ctx.mode().tol())?;
            let mut t = Table::new(["sample", "lambda1", "lambda2"]);
            for i in 0..args.samples {
                let cfg = sampler.sample(&mut rng);
                t.push(vec![i.to_string(), heights(&cfg.lambda1), heights(&cfg.lambda2)]);
            }
            ctx.emit("sample", ctx.inputs(Some(p), None, args), &t, false, sampler.dim())
        }
        SamplerKind::Bridge => {
            let spec = BridgeSpec::new(n, args.x, args.y.unwrap_or(args.x + n as i64 / 2));
            let mut t = Table::new(["sample", "path"]);
            for i in 0..args.samples {
                let path = bridges::sample_bridge(&spec, &mut rng)?;
                t.push(vec![i.to_string(), heights(&path.values)]);
            }
            let count = bridges::count_paths(&spec).to_string();
            ctx.emit("sample", ctx.inputs(None, None, args), &t, false, count)
        }
        SamplerKind::Gillespie => {
            let rates = ctx.rates(o)?;
            let stats = gillespie_run(&rates, n, Budget::events(args.events), &mut rng)?;
            let mut t = Table::new(["site", "density"]);
            for (i, d) in stats.site_densities().iter().enumerate() {
                t.push(vec![(i + 1).to_string(), fmt_f64(*d)]);
            }
            let exact = rates
                .to_fan()
                .ok()
                .filter(|p| p.require_fan().is_ok() && n <= ctmc::MAX_TABLE_N)
                .and_then(|p| mpa::stationary_table(&p, n, NumericMode::float()).ok());
            let tv_to_exact = exact.zip(stats.empirical_measure()).map(|(e, m)| total_variation(&m, &e.value));
            let summary = DynamicsSummary { events: stats.events, total_time: stats.total_time, tv_to_exact };
            ctx.emit("sample", ctx.inputs(None, Some(rates), args), &t, true, summary)
        }
    }
}

fn bridge_suites(ctx: &Ctx, args: &BridgesArgs) -> CmdResult {
    let r = experiments::run_bridge_suites(args.instances, args.max_n, ctx.global.seed)?;
    let mut t = Table::new(["suite", "instances", "violations"]);
    for (name, (k, v)) in [("two-path", r.two_path), ("fkg", r.fkg), ("hypergeometric", r.hypergeometric)] {
        t.push(vec![name.into(), k.to_string(), v.to_string()]);
    }
    ctx.emit("bridges", ctx.inputs(None, None, args), &t, false, &r)?;
    judge(&r.verdict)
}

fn rate_fn(ctx: &Ctx, o: &ParamArgs, args: &RateArgs) -> CmdResult {
    let p = ctx.fan(o)?;
    let inputs = ctx.inputs(Some(p), None, args);
    if let Some(Slopes(rhos)) = &args.line_slopes {
        let rows = experiments::rate_curve(p.a, p.b, rhos, args.k)?;
        return ctx.emit("rate-fn", inputs, &experiments::rate_table(&rows), true, &rows);
    }
    let profile = ctx
        .config
        .as_ref()
        .map(Config::profile)
        .transpose()?
        .flatten()
        .ok_or_else(|| Failure { code: 2, message: "rate-fn needs --line-slopes or a [profile] section".into() })?;
    let closed = rate_closed(&profile, p.a, p.b)?;
    let var = args.k.map(|k| rate_variational(&profile, p.a, p.b, k)).transpose()?;
    let opt = |x: Option<f64>| x.map(fmt_f64).unwrap_or_default();
    let mut t = Table::new(["i_closed", "i_variational", "gap"]);
    t.push(vec![fmt_f64(closed), opt(var.map(|v| v.value)), opt(var.map(|v| v.gap))]);
    ctx.emit("rate-fn", inputs, &t, false, (closed, var.map(|v| (v.value, v.gap, v.k))))
}

fn ldp_check(ctx: &Ctx, o: &ParamArgs, args: &LdpArgs) -> CmdResult {
    let p = ctx.fan(o)?;
    let grid = FiniteDimGrid { columns: args.columns, slope_steps: args.slope_steps };
    let rows = experiments::ldp_convergence(&p, &args.rhos, &args.ns, grid)?;
    let verdict = experiments::ldp_verdict(&rows, args.tol);
    ctx.emit("ldp-check", ctx.inputs(Some(p), None, args), &experiments::ldp_table(&rows), true, (&rows, &verdict))?;
    judge(&verdict)
}

#[derive(Serialize)]
struct Outcome<T: Serialize> {
    plan: ExperimentSection,
    rows: T,
    verdict: Verdict,
}

fn run_experiment(ctx: &Ctx, o: &ParamArgs, args: &ExperimentArgs) -> CmdResult {
    let mut plan = ctx.config.as_ref().and_then(|c| c.experiment.clone()).unwrap_or_default();
    if let Some(name) = &args.name {
        plan.name = name.clone();
    }
    if plan.name.is_empty() {
        return Err(Failure { code: 2, message: "experiments needs --name or an [experiment] section".into() });
    }
    let explicit_params = ctx.config_params().is_some() || Ctx::has_overrides(o);
    let name = format!("experiment-{}", plan.name);
    let ns = |d: &[usize]| plan.ns.clone().unwrap_or_else(|| d.to_vec());
    let rhos = |d: &[f64]| plan.rhos.clone().unwrap_or_else(|| d.to_vec());
    let tol = |d: f64| plan.tolerance.unwrap_or(d);
    let window = || -> Result<WindowSpec, Failure> { Ok(WindowSpec::endpoint(args.window[0], args.window[1])?) };
    let (table, verdict, rows): (Table, Verdict, serde_json::Value) = match plan.name.as_str() {
        "marginal" => {
            let grid = if explicit_params { vec![ctx.fan(o)?] } else { acceptance_grid() };
            let r = experiments::run_marginal_grid(&grid, &ns(&[1, 2, 3, 4, 5, 6, 7, 8]), ctx.mode(), tol(1e-9))?;
            let mut t = Table::new(["a", "b", "c", "d", "q", "n", "tv", "exact_zero"]);
            for row in &r.rows {
                let p = row.params;
                let exact = row.exact_zero.map(|z| z.to_string()).unwrap_or_default();
                t.push(vec![fmt_f64(p.a), fmt_f64(p.b), fmt_f64(p.c), fmt_f64(p.d), fmt_f64(p.q), row.n.to_string(), fmt_f64(row.tv), exact]);
            }
            (t, r.verdict, json(&r.rows)?)
        }
        "asymptotics" => {
            let p = ctx.fan(o)?;
            let tol = tol(0.02);
            let scan = mpa::asymptotic_log_z_scan(&p, &ns(&[125, 250, 500, 1000, 2000]), NumericMode::float().tol())?;
            let dev: Vec<f64> = scan.iter().map(|s| s.deviation.abs()).collect();
            let worst = dev.last().copied().unwrap_or(0.0);
            let decreasing = dev.windows(2).all(|w| w[1] < w[0]);
            let mut t = Table::new(["n", "deviation", "certified_error"]);
            for s in &scan {
                t.push(vec![s.n.to_string(), fmt_f64(s.deviation), fmt_f64(s.certified_error)]);
            }
            let verdict = Verdict {
                experiment: "partition asymptotics".into(),
                passed: worst <= tol && decreasing,
                worst,
                tolerance: tol,
                note: format!("deviation decreasing in N: {decreasing}"),
            };
            (t, verdict, json(&scan)?)
        }
        "rate" => {
            let p = ctx.fan(o)?;
            let tol = tol(5e-2);
            let r = experiments::rate_curve(p.a, p.b, &rhos(&[0.2, 0.3, 0.5, 0.7]), Some(args.k))?;
            let worst = r.iter().map(|x| (x.closed - x.variational.unwrap_or(f64::NAN)).abs()).fold(0.0, f64::max);
            let verdict = Verdict {
                experiment: "rate formula agreement".into(),
                passed: worst <= tol,
                worst,
                tolerance: tol,
                note: format!("K = {}", args.k),
            };
            (experiments::rate_table(&r), verdict, json(&r)?)
        }
        "ldp" => {
            let p = ctx.fan(o)?;
            let r = experiments::ldp_convergence(&p, &rhos(&[0.3, 0.5, 0.7]), &ns(&[50, 100, 200, 400]), FiniteDimGrid::default())?;
            let verdict = experiments::ldp_verdict(&r, tol(0.05));
            (experiments::ldp_table(&r), verdict, json(&r)?)
        }
        "boltzmann" => {
            let p = ctx.fan(o)?;
            let r = experiments::run_boltzmann_ratio(&p, &window()?, &ns(&[50, 300]), tol(0.05))?;
            let mut t = Table::new(["n", "log_ratio_per_n"]);
            for (n, v) in &r.rows {
                t.push(vec![n.to_string(), fmt_f64(*v)]);
            }
            (t, r.verdict.clone(), json(&r)?)
        }
        "separation" => {
            let p = ctx.fan(o)?;
            let seed = plan.seeds.as_ref().and_then(|s| s.first().copied()).unwrap_or(ctx.global.seed);
            let accepted = plan.samples.unwrap_or(10_000);
            let r = experiments::run_separation(p.a, p.b, args.r, args.eps, &window()?, &ns(&[50, 100, 200]), accepted, seed)?;
            let mut t = Table::new(["n", "estimate", "ci_low", "ci_high", "bound", "accepted", "proposals"]);
            for e in &r.rows {
                t.push(vec![
                    e.n.to_string(),
                    fmt_f64(e.estimate),
                    fmt_f64(e.ci_low),
                    fmt_f64(e.ci_high),
                    fmt_f64(e.bound),
                    e.accepted.to_string(),
                    e.proposals.to_string(),
                ]);
            }
            (t, r.verdict.clone(), json(&r)?)
        }
        "bridges" => {
            let max_n = ns(&[10]).into_iter().max().unwrap_or(10);
            let seed = plan.seeds.as_ref().and_then(|s| s.first().copied()).unwrap_or(ctx.global.seed);
            let r = experiments::run_bridge_suites(plan.samples.unwrap_or(1000) as usize, max_n, seed)?;
            let mut t = Table::new(["suite", "instances", "violations"]);
            for (name, (k, v)) in [("two-path", r.two_path), ("fkg", r.fkg), ("hypergeometric", r.hypergeometric)] {
                t.push(vec![name.into(), k.to_string(), v.to_string()]);
            }
            (t, r.verdict.clone(), json(&r)?)
        }
        other => return Err(AsepError::InvalidConfig(format!("unknown experiment `{other}`")).into()),
    };
    let params = if explicit_params { Some(ctx.params(o)?) } else { None };
    let outcome = Outcome { plan, rows, verdict: verdict.clone() };
    ctx.emit(&name, ctx.inputs(params, None, args), &table, true, &outcome)?;
    judge(&verdict)
}
