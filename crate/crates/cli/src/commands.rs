//! Subcommands. Every command turns its arguments and the session into a
//! deterministic JSON result; nothing here reads the clock.

use clap::{Args, Subcommand, ValueEnum};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use sadic::dioph::{
    flow_to_vwma, vwma_search, vwma_to_flow, w_search, wp_search, Estimate, ExponentKind,
    WSearchConfig, GRID,
};
use sadic::experiments::{
    dichotomy_experiment, good_check, qnd_experiment, BallSpec, CountPath, DichotomyConfig,
    GoodCheckConfig, LineFit, MeasureEstimate, QndConfig, Sublevel,
};
use sadic::flows::{gamma_estimate, FlowTime};
use sadic::geometry::{
    floor_condition_check, nonplanarity_check, Ball, FloorCheckConfig, FloorViolation, PolyMap,
};
use sadic::lattice::{
    apply_flow, delta_search, minkowski_search, LatticeDescription, PrimitiveModule,
};
use sadic::{content, PExact, PadicPoint, Prime};

use crate::config::SessionConfig;
use crate::report::{bigs, cnorm, content as content_json, estimate, float, pvec, rat, witness};
use crate::spec;

/// Failure classes, each with its own exit code.
#[derive(Debug)]
pub enum Failure {
    /// Malformed arguments or specs (exit 64).
    Usage(String),
    /// The precision or certification floor was reached (exit 2).
    Floor(String),
    /// Anything else (exit 1).
    Other(String),
}

impl From<sadic::Error> for Failure {
    fn from(e: sadic::Error) -> Self {
        match e {
            sadic::Error::PrecisionExhausted { .. } => Failure::Floor(e.to_string()),
            _ => Failure::Other(e.to_string()),
        }
    }
}

fn usage<T>(r: Result<T, String>) -> Result<T, Failure> {
    r.map_err(Failure::Usage)
}

/// What a command produced.
pub struct Outcome {
    pub anchor: String,
    /// `None` for a complete result, `Some(reason)` at a certification floor.
    pub floor: Option<String>,
    pub result: Value,
    /// Header and rows for `--format csv`.
    pub table: Option<Vec<Vec<String>>>,
}

impl Outcome {
    fn new(anchor: impl Into<String>, result: Value) -> Self {
        Outcome {
            anchor: anchor.into(),
            floor: None,
            result,
            table: None,
        }
    }

    fn floor_if(mut self, cond: bool, reason: &str) -> Self {
        if cond {
            self.floor = Some(reason.into());
        }
        self
    }

    fn with_table(mut self, t: Vec<Vec<String>>) -> Self {
        self.table = Some(t);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum KindArg {
    W,
    Wp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Args)]
pub struct BallArgs {
    /// Ball center in Z_p^d (comma-separated integers; default 0)
    #[arg(long)]
    pub center: Option<String>,
    /// Ball radius p^-r
    #[arg(long, default_value_t = 0)]
    pub radius: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Args)]
pub struct ExponentArgs {
    #[arg(long, value_enum, default_value_t = KindArg::W)]
    pub kind: KindArg,
    #[arg(long)]
    pub point: String,
    /// Height bound Q (`10000`, `1e4` or `2^40`)
    #[arg(long, default_value = "1e4")]
    pub q_max: String,
    /// Lower end of the height window (default sqrt Q)
    #[arg(long)]
    pub h_min: Option<String>,
    #[arg(long)]
    pub k_max: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Args)]
pub struct FlowArgs {
    #[arg(long)]
    pub point: String,
    /// Largest balanced scale
    #[arg(long, default_value_t = 8)]
    pub big_t: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Args)]
pub struct DeltaArgs {
    #[arg(long)]
    pub point: String,
    /// Flow time t0,t1,…,tn
    #[arg(long)]
    pub time: String,
    /// Only look for points of content <= this rational
    #[arg(long)]
    pub threshold: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Args)]
pub struct MinkowskiArgs {
    /// Random (p, n, t, y, module) trials at the session prime set {2,3,5}
    #[arg(long, conflicts_with = "point")]
    pub random_trials: Option<u32>,
    #[arg(long, requires = "time")]
    pub point: Option<String>,
    #[arg(long)]
    pub time: Option<String>,
    /// Module rows `a,b,c;d,e,f` (default: the full lattice)
    #[arg(long)]
    pub module: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Args)]
pub struct VwmaArgs {
    #[arg(long)]
    pub point: String,
    /// Bound on |q_i|
    #[arg(long, default_value_t = 1000)]
    pub bound: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Args)]
pub struct CorrespondArgs {
    #[arg(long)]
    pub point: String,
    /// q0,q1,…,qn (integers)
    #[arg(long, allow_hyphen_values = true)]
    pub witness: String,
    #[arg(long)]
    pub eps: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Args)]
pub struct QndArgs {
    #[arg(long)]
    pub map: String,
    #[command(flatten)]
    pub ball: BallArgs,
    /// Enlargement B -> p^-k B used for the doubling ratio
    #[arg(long, default_value_t = 0)]
    pub dilation: u32,
    /// Balanced scales s (time (s,…,s))
    #[arg(long, default_value = "2,3,4")]
    pub scales: String,
    /// Exponents e of the thresholds eps = p^-e
    #[arg(long, default_value = "1/2,1,3/2,2,5/2,3")]
    pub eps_exps: String,
    /// rho = p^-r
    #[arg(long, default_value = "0")]
    pub rho_exp: String,
    #[arg(long, default_value_t = 10_000)]
    pub samples: u64,
    #[arg(long, default_value_t = 20_000)]
    pub max_exact_cells: u64,
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    /// Skip the covolume-floor hypothesis check
    #[arg(long)]
    pub no_hypothesis: bool,
    #[arg(long, default_value_t = 1)]
    pub hypothesis_height: u32,
    #[arg(long, default_value_t = 40)]
    pub hypothesis_modules: usize,
    #[arg(long, default_value_t = 8)]
    pub hypothesis_points: usize,
    #[arg(long, default_value_t = 1.0)]
    pub c: f64,
    #[arg(long, default_value_t = 0.3)]
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Args)]
pub struct DichotomyArgs {
    #[arg(long)]
    pub map: String,
    #[command(flatten)]
    pub ball: BallArgs,
    #[arg(long, default_value = "0")]
    pub gamma: String,
    #[arg(long, default_value = "1/20")]
    pub gamma1: String,
    #[arg(long, default_value = "1/10")]
    pub gamma2: String,
    #[arg(long, default_value_t = 4)]
    pub big_t: u32,
    #[arg(long, default_value_t = 1000)]
    pub samples: u64,
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Args)]
pub struct SubspaceArgs {
    #[arg(long)]
    pub map: String,
    #[command(flatten)]
    pub ball: BallArgs,
    /// Rate d in the covolume floor p^{-j d t}
    #[arg(long, default_value = "1")]
    pub rate: String,
    #[arg(long, default_value_t = 3)]
    pub big_t: u32,
    /// Module ranks to test (default 1..=n+1)
    #[arg(long)]
    pub ranks: Option<String>,
    #[arg(long, default_value_t = 1)]
    pub height: u32,
    #[arg(long, default_value_t = 40)]
    pub max_modules: usize,
    #[arg(long, default_value_t = 8)]
    pub samples: usize,
    #[arg(long)]
    pub no_cross_check: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Args)]
pub struct GoodArgs {
    #[arg(long)]
    pub map: String,
    #[command(flatten)]
    pub ball: BallArgs,
    #[arg(long, default_value = "1")]
    pub c: String,
    #[arg(long)]
    pub alpha: String,
    /// Exponents m of eps = p^-m (`a..b` or a list)
    #[arg(long, default_value = "0..13")]
    pub eps_exps: String,
    /// Use the strict sublevel set |f| < eps
    #[arg(long)]
    pub strict: bool,
    #[arg(long, default_value_t = 10_000)]
    pub samples: u64,
    #[arg(long, default_value_t = 1 << 20)]
    pub tree_nodes: u64,
    #[arg(long, default_value_t = 1 << 20)]
    pub sup_nodes: u64,
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Subcommand)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum Cmd {
    /// Estimate w(y) or w_p(y) with a certified ladder of witnesses
    Exponent(ExponentArgs),
    /// Orbit trajectory of delta along balanced times and the gamma estimate
    Flow(FlowArgs),
    /// Certified delta(g_t u_y D^{n+1}) at one time
    Delta(DeltaArgs),
    /// Minkowski points in primitive modules
    Minkowski(MinkowskiArgs),
    /// Multiplicative approximations with |q_i| <= bound
    Vwma(VwmaArgs),
    /// Witness -> flow event -> witness
    Correspond(CorrespondArgs),
    /// Quantitative nondivergence along a map
    Qnd(QndArgs),
    /// Measure of the deep-cusp set along a map
    Dichotomy(DichotomyArgs),
    /// Nonplanarity and the covolume floor along a map
    SubspaceCheck(SubspaceArgs),
    /// (C, alpha)-good check of a map on a ball
    GoodCheck(GoodArgs),
}

impl Cmd {
    pub fn name(&self) -> &'static str {
        match self {
            Cmd::Exponent(_) => "exponent",
            Cmd::Flow(_) => "flow",
            Cmd::Delta(_) => "delta",
            Cmd::Minkowski(_) => "minkowski",
            Cmd::Vwma(_) => "vwma",
            Cmd::Correspond(_) => "correspond",
            Cmd::Qnd(_) => "qnd",
            Cmd::Dichotomy(_) => "dichotomy",
            Cmd::SubspaceCheck(_) => "subspace-check",
            Cmd::GoodCheck(_) => "good-check",
        }
    }

    pub fn run(&self, s: &SessionConfig) -> Result<Outcome, Failure> {
        match self {
            Cmd::Exponent(a) => exponent(a, s),
            Cmd::Flow(a) => flow(a, s),
            Cmd::Delta(a) => delta(a, s),
            Cmd::Minkowski(a) => minkowski(a, s),
            Cmd::Vwma(a) => vwma(a, s),
            Cmd::Correspond(a) => correspond(a, s),
            Cmd::Qnd(a) => qnd(a, s),
            Cmd::Dichotomy(a) => dichotomy(a, s),
            Cmd::SubspaceCheck(a) => subspace(a, s),
            Cmd::GoodCheck(a) => good(a, s),
        }
    }
}

// ---------------------------------------------------------------------------
// shared encoders

fn time_json(t: &FlowTime) -> Value {
    json!(t.coords())
}

fn parse_time(s: &str) -> Result<FlowTime, Failure> {
    let t = usage(spec::list(s, |x| {
        x.parse::<u32>()
            .map_err(|_| format!("bad time coordinate `{x}`"))
    }))?;
    Ok(FlowTime::new(t)?)
}

fn parse_ints(p: Prime, s: &str) -> Result<Vec<PExact>, Failure> {
    usage(spec::list(s, |x| {
        spec::integer(x).map(|b| PExact::from_int(p, b))
    }))
}

fn measure_json(m: &MeasureEstimate) -> Value {
    json!({
        "fraction": rat(&m.fraction),
        "hits": m.hits,
        "samples": m.samples,
        "undecided": m.undecided,
        "ci_low": float(m.ci_low),
        "ci_high": float(m.ci_high),
        "level": float(m.level),
        "seed": m.seed,
        "path": path_name(m.path),
    })
}

fn path_name(p: CountPath) -> &'static str {
    match p {
        CountPath::Exact => "exact",
        CountPath::Sampled => "sampled",
    }
}

fn fit_json(f: &Option<LineFit>) -> Value {
    match f {
        None => Value::Null,
        Some(f) => json!({
            "slope": float(f.slope),
            "intercept": float(f.intercept),
            "residual_rms": float(f.residual_rms),
            "points": f.points,
        }),
    }
}

fn ball(p: Prime, d: usize, a: &BallArgs) -> Result<Ball, Failure> {
    let center = match &a.center {
        None => PadicPoint::zero(p, d),
        Some(c) => {
            let v = parse_ints(p, c)?;
            if v.len() != d {
                return Err(Failure::Usage(format!(
                    "center has {} coordinates, map has {d} inputs",
                    v.len()
                )));
            }
            PadicPoint::exact(p, v)?
        }
    };
    Ok(Ball::new(center, a.radius)?)
}

fn map_and_ball(s: &SessionConfig, m: &str, b: &BallArgs) -> Result<(PolyMap, Ball), Failure> {
    let p = s.prime();
    let f = usage(spec::map(m, p))?;
    let ball = ball(p, f.input_dim(), b)?;
    Ok((f, ball))
}

fn rational(s: &str) -> Result<BigRational, Failure> {
    usage(spec::rational(s))
}

// ---------------------------------------------------------------------------
// exponent

fn exponent(a: &ExponentArgs, s: &SessionConfig) -> Result<Outcome, Failure> {
    let y = usage(spec::point(&a.point, s))?;
    let mut cfg = WSearchConfig::new(usage(spec::integer(&a.q_max))?);
    if let Some(h) = &a.h_min {
        cfg.h_min = usage(spec::integer(h))?;
    }
    if let Some(k) = a.k_max {
        cfg.k_max = k;
    }
    let r = match a.kind {
        KindArg::W => w_search(&y, &cfg)?,
        KindArg::Wp => wp_search(&y, &cfg)?,
    };
    let exact_zero = r.estimate == Estimate::Infinite;
    let ladder: Vec<Value> = r
        .ladder
        .iter()
        .map(|g| {
            json!({
                "level": g.level,
                "scale": g.scale,
                "used": g.used,
                "exponent_floor": g.exponent_floor.as_ref().map_or(Value::Null, rat),
                "witness": witness(&g.witness, r.grid),
            })
        })
        .collect();
    let mut table = vec![vec![
        "level",
        "scale",
        "sup_norm",
        "q_pnorm",
        "residual",
        "exponent_floor",
        "used",
        "q",
    ]
    .into_iter()
    .map(String::from)
    .collect::<Vec<_>>()];
    for g in &r.ladder {
        table.push(vec![
            g.level.to_string(),
            g.scale.to_string(),
            g.witness.sup_norm.to_string(),
            g.witness.q_pnorm.to_string(),
            g.witness.residual.value.to_string(),
            g.exponent_floor
                .as_ref()
                .map_or(String::new(), ToString::to_string),
            g.used.to_string(),
            g.witness
                .q
                .iter()
                .map(ToString::to_string)
                .collect::<Vec<_>>()
                .join(" "),
        ]);
    }
    let result = json!({
        "kind": match r.kind { ExponentKind::W => "w", ExponentKind::Wp => "wp", _ => "other" },
        "point": pvec(y.coords()),
        "precision": y.precision().digits(),
        "estimate": estimate(&r.estimate),
        "estimate_approx": float(r.estimate.to_f64()),
        "exact_zero": exact_zero,
        "grid": r.grid,
        "bounds": {
            "q_max": rat(&BigRational::from_integer(r.bounds.q_max.clone())),
            "h_min": rat(&BigRational::from_integer(r.bounds.h_min.clone())),
            "k_max": r.bounds.k_max,
        },
        "ladder": ladder,
    });
    Ok(Outcome::new(r.anchor(), result)
        .floor_if(
            r.estimate == Estimate::Undefined,
            "no certified witness above the precision floor",
        )
        .with_table(table))
}

// ---------------------------------------------------------------------------
// flow, delta

fn flow(a: &FlowArgs, s: &SessionConfig) -> Result<Outcome, Failure> {
    let y = usage(spec::point(&a.point, s))?;
    let p = y.prime();
    let g = gamma_estimate(&y, a.big_t, &s.budget())?;
    let mut table = vec![["total", "time", "delta", "exact", "rate"]
        .map(String::from)
        .to_vec()];
    let traj: Vec<Value> = g
        .trajectory
        .points
        .iter()
        .map(|t| {
            table.push(vec![
                t.time.total().to_string(),
                t.time
                    .coords()
                    .iter()
                    .map(ToString::to_string)
                    .collect::<Vec<_>>()
                    .join(" "),
                t.delta.to_string(),
                t.exact.to_string(),
                format!("{}", t.rate_f64(p)),
            ]);
            json!({
                "time": time_json(&t.time),
                "delta": rat(&t.delta),
                "exact": t.exact,
                "witness": pvec(&t.witness),
                "rate": float(t.rate_f64(p)),
            })
        })
        .collect();
    let inexact = g.trajectory.points.iter().any(|t| !t.exact);
    let result = json!({
        "point": pvec(y.coords()),
        "gamma": rat(&g.gamma),
        "gamma_approx": float(g.gamma_f64()),
        "grid_den": g.grid_den,
        "tail_start": g.tail_start,
        "trajectory": traj,
    });
    Ok(Outcome::new(ExponentKind::Gamma.anchor(), result)
        .floor_if(inexact, "some trajectory points are upper bounds only")
        .with_table(table))
}

fn delta(a: &DeltaArgs, s: &SessionConfig) -> Result<Outcome, Failure> {
    let y = usage(spec::point(&a.point, s))?;
    let p = y.prime();
    let t = parse_time(&a.time)?;
    let thr = a.threshold.as_deref().map(rational).transpose()?;
    let l = LatticeDescription::new(y, t)?;
    let c = delta_search(&l, &s.budget(), thr.as_ref())?;
    let exact = c.is_exact(p);
    let result = json!({
        "time": time_json(&l.t),
        "minimizer": c.minimizer.as_deref().map_or(Value::Null, pvec),
        "content": c.content.as_ref().map_or(Value::Null, |x| content_json(x, p)),
        "upper": c.upper(p).as_ref().map_or(Value::Null, rat),
        "lower_bound": rat(&c.lower_bound),
        "threshold": rat(&c.threshold),
        "heights": bigs(&c.heights),
        "nodes": c.nodes,
        "exhaustive": c.exhaustive,
        "exact": exact,
    });
    // a threshold query that proves "nothing below" is complete without a minimizer
    let complete = exact || (thr.is_some() && c.exhaustive && c.minimizer.is_none());
    Ok(Outcome::new(
        "delta(g_t u_y D^{n+1}) = min content over nonzero lattice points",
        result,
    )
    .floor_if(!complete, "delta not certified within budget and precision"))
}

// ---------------------------------------------------------------------------
// minkowski

fn minkowski_one(l: &LatticeDescription, d: &PrimitiveModule) -> Result<(bool, Value), Failure> {
    let p = l.prime();
    let mp = minkowski_search(l, d)?;
    let recomputed = content(&apply_flow(l, &mp.point)?)?;
    let holds = mp.point.iter().any(|x| !x.is_zero())
        && mp.point.iter().all(PExact::is_integer)
        && recomputed == mp.content
        && mp.content.certified()
        && mp.content_within_bound(p);
    let v = json!({
        "rank": mp.rank,
        "module": d.basis().iter().map(|r| pvec(r)).collect::<Vec<_>>(),
        "point": pvec(&mp.point),
        "content": content_json(&mp.content, p),
        "covolume_sq": rat(&mp.covolume.value_sq(p)),
        "covolume_certified": mp.covolume.certified(),
        "padic_covolume": cnorm(&mp.covolume.padic),
        "holds": holds,
    });
    Ok((holds, v))
}

fn random_module<R: Rng>(p: Prime, m: usize, j: usize, rng: &mut R) -> PrimitiveModule {
    loop {
        let rows: Vec<Vec<PExact>> = (0..j)
            .map(|_| {
                (0..m)
                    .map(|_| PExact::from_int(p, rng.gen_range(-3i64..=3)))
                    .collect()
            })
            .collect();
        if let Ok(d) = PrimitiveModule::saturation_of(p, &rows) {
            if d.rank() == j {
                return d;
            }
        }
    }
}

fn minkowski(a: &MinkowskiArgs, s: &SessionConfig) -> Result<Outcome, Failure> {
    let anchor = "Minkowski: x in Delta nonzero with c(g_t u_y x) <= cov(g_t u_y Delta)^(1/j)";
    if let Some(trials) = a.random_trials {
        let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
        let mut ok = 0;
        let mut rows = Vec::new();
        for i in 0..trials {
            let p = Prime::new([2, 3, 5][rng.gen_range(0..3)])?;
            let n = rng.gen_range(1..=3usize);
            let total = rng.gen_range(0..=6u32);
            let mut t = vec![0u32; n + 1];
            for _ in 0..total {
                t[rng.gen_range(0..=n)] += 1;
            }
            let y = PadicPoint::haar(p, n, s.precision, &mut rng);
            let l = LatticeDescription::new(y, FlowTime::new(t)?)?;
            let mut all = true;
            let mut cells = Vec::new();
            for j in 1..=n + 1 {
                let d = random_module(p, n + 1, j, &mut rng);
                let (h, v) = minkowski_one(&l, &d)?;
                all &= h;
                cells.push(v);
            }
            ok += all as u32;
            rows.push(json!({
                "trial": i,
                "p": p.get(),
                "point": pvec(l.y.coords()),
                "time": time_json(&l.t),
                "holds": all,
                "ranks": cells,
            }));
        }
        let result = json!({ "trials": trials, "holds": ok, "records": rows });
        if ok != trials {
            return Err(Failure::Other(format!(
                "Minkowski bound failed in {} of {trials} trials",
                trials - ok
            )));
        }
        return Ok(Outcome::new(anchor, result));
    }
    let (Some(pt), Some(t)) = (&a.point, &a.time) else {
        return Err(Failure::Usage(
            "minkowski needs --random-trials or --point with --time".into(),
        ));
    };
    let y = usage(spec::point(pt, s))?;
    let p = y.prime();
    let l = LatticeDescription::new(y, parse_time(t)?)?;
    let d = match &a.module {
        None => PrimitiveModule::full(p, l.rank()),
        Some(m) => {
            let rows = m
                .split(';')
                .map(|r| parse_ints(p, r))
                .collect::<Result<Vec<_>, _>>()?;
            PrimitiveModule::new(p, rows)?
        }
    };
    let (holds, v) = minkowski_one(&l, &d)?;
    if !holds {
        return Err(Failure::Other("Minkowski point failed verification".into()));
    }
    Ok(Outcome::new(anchor, v))
}

// ---------------------------------------------------------------------------
// vwma, correspond

fn vwma(a: &VwmaArgs, s: &SessionConfig) -> Result<Outcome, Failure> {
    let y = usage(spec::point(&a.point, s))?;
    let ws = vwma_search(&y, a.bound)?;
    let result = json!({
        "point": pvec(y.coords()),
        "bound": a.bound,
        "grid": GRID,
        "witnesses": ws.iter().map(|w| witness(w, GRID)).collect::<Vec<_>>(),
    });
    Ok(Outcome::new(ExponentKind::Multiplicative.anchor(), result))
}

fn correspond(a: &CorrespondArgs, s: &SessionConfig) -> Result<Outcome, Failure> {
    let y = usage(spec::point(&a.point, s))?;
    let p = y.prime();
    let q = parse_ints(p, &a.witness)?;
    if q.len() != y.dim() + 1 {
        return Err(Failure::Usage(format!(
            "witness needs {} entries (q0..qn)",
            y.dim() + 1
        )));
    }
    let eps = rational(&a.eps)?;
    let fw = vwma_to_flow(&y, &q, &eps)?;
    let forward = json!({
        "eps": rat(&fw.eps),
        "gamma": rat(&fw.gamma),
        "times": fw.times.iter().map(|t| json!({
            "base": rat(&t.base),
            "pi": rat(&t.pi),
            "frac": rat(&t.frac),
            "floor": t.floor(p),
            "approx": float(t.to_f64(p)),
        })).collect::<Vec<_>>(),
        "rounded": time_json(&fw.rounded),
        "content": rat(&fw.content),
        "gamma_rounded": rat(&fw.gamma_rounded),
        "within_rounding_slack": fw.within_rounding_slack,
        "degenerate": fw.degenerate,
    });
    let n1 = BigRational::from_integer(BigInt::from(y.dim() as u64 + 1));
    let gr = &fw.gamma_rounded;
    let reverse = if gr > &BigRational::zero() && gr * &n1 < BigRational::one() {
        let r = flow_to_vwma(&y, &fw.rounded, &q, gr)?;
        json!({
            "scaled": pvec(&r.scaled),
            "k": r.k,
            "m": r.m,
            "exponent_formula": r.exponent_formula.as_ref().map_or(Value::Null, rat),
            "eps_formula": r.eps_formula.as_ref().map_or(Value::Null, rat),
            "witness": witness(&r.witness, GRID),
            "eps_prime": r.eps_prime.as_ref().map_or(Value::Null, rat),
            "verified": r.verified,
        })
    } else {
        Value::Null
    };
    let result = json!({
        "point": pvec(y.coords()),
        "witness": pvec(&q),
        "forward": forward,
        "reverse": reverse,
    });
    Ok(Outcome::new(
        "VWMA witness <-> flow event c(g_t u_y q~) <= p^-gamma t",
        result,
    ))
}

// ---------------------------------------------------------------------------
// map experiments

fn qnd(a: &QndArgs, s: &SessionConfig) -> Result<Outcome, Failure> {
    let (f, b) = map_and_ball(s, &a.map, &a.ball)?;
    let p = s.prime();
    let cfg = QndConfig {
        scales: usage(spec::list(&a.scales, |x| {
            x.parse().map_err(|_| format!("bad scale `{x}`"))
        }))?,
        eps_exps: usage(spec::list(&a.eps_exps, spec::rational))?,
        rho_exp: rational(&a.rho_exp)?,
        samples: a.samples,
        max_exact_cells: a.max_exact_cells,
        level: a.level,
        seed: s.seed,
        require_hypothesis: !a.no_hypothesis,
        hypothesis_height: a.hypothesis_height,
        hypothesis_modules: a.hypothesis_modules,
        hypothesis_points: a.hypothesis_points,
        c: a.c,
        alpha: a.alpha,
        budget: s.budget(),
    };
    let spec = BallSpec {
        ball: b,
        dilation: a.dilation,
    };
    let r = qnd_experiment(&f, &spec, &cfg)?;
    let mut table = vec![[
        "total",
        "eps_exp",
        "fraction",
        "hits",
        "samples",
        "undecided",
        "rhs",
        "path",
    ]
    .map(String::from)
    .to_vec()];
    let rows: Vec<Value> = r
        .rows
        .iter()
        .map(|row| {
            let cells: Vec<Value> = row
                .cells
                .iter()
                .map(|c| {
                    table.push(vec![
                        row.time.total().to_string(),
                        c.eps_exp.to_string(),
                        c.estimate.fraction.to_string(),
                        c.estimate.hits.to_string(),
                        c.estimate.samples.to_string(),
                        c.estimate.undecided.to_string(),
                        format!("{}", c.rhs),
                        path_name(c.estimate.path).into(),
                    ]);
                    json!({ "eps_exp": rat(&c.eps_exp), "estimate": measure_json(&c.estimate), "rhs": float(c.rhs) })
                })
                .collect();
            json!({ "time": time_json(&row.time), "cells": cells, "fit": fit_json(&row.fit) })
        })
        .collect();
    let undecided: u64 = r
        .rows
        .iter()
        .flat_map(|x| &x.cells)
        .map(|c| c.estimate.undecided)
        .sum();
    let result = json!({
        "map": f.to_text(),
        "p": p.get(),
        "kernel": r.kernel.iter().map(|k| bigs(k)).collect::<Vec<_>>(),
        "hypothesis_failures": r.hypothesis_failures.iter().map(|h| json!({
            "time": time_json(&h.time),
            "basis": h.basis.iter().map(|k| bigs(k)).collect::<Vec<_>>(),
        })).collect::<Vec<_>>(),
        "rows": rows,
        "min_slope": r.min_slope().map_or(Value::Null, float),
        "max_residual": r.max_residual().map_or(Value::Null, float),
        "federer": rat(&r.federer),
        "besicovitch": r.besicovitch,
        "undecided": undecided,
    });
    Ok(Outcome::new(
        "mu{x in B : delta(g_t u_f(x) D^{n+1}) < eps} <= C (eps/rho)^alpha mu(B)",
        result,
    )
    .floor_if(
        undecided > 0,
        "some samples were undecided at this precision",
    )
    .with_table(table))
}

fn dichotomy(a: &DichotomyArgs, s: &SessionConfig) -> Result<Outcome, Failure> {
    let (f, b) = map_and_ball(s, &a.map, &a.ball)?;
    let cfg = DichotomyConfig {
        gamma: rational(&a.gamma)?,
        gamma1: rational(&a.gamma1)?,
        gamma2: rational(&a.gamma2)?,
        big_t: a.big_t,
        samples: a.samples,
        level: a.level,
        seed: s.seed,
        budget: s.budget(),
    };
    let r = dichotomy_experiment(&f, &b, &cfg)?;
    let undecided: u64 = r.rows.iter().map(|x| x.estimate.undecided).sum();
    let result = json!({
        "map": f.to_text(),
        "rows": r.rows.iter().map(|x| json!({
            "time": time_json(&x.time),
            "threshold_exp": rat(&x.threshold_exp),
            "estimate": measure_json(&x.estimate),
            "envelope": float(x.envelope),
        })).collect::<Vec<_>>(),
        "decay": fit_json(&r.decay),
        "partial_sum": float(r.partial_sum),
        "envelope_constant": float(r.envelope_constant),
        "undecided": undecided,
    });
    Ok(Outcome::new(
        "mu{x in B : delta(g_t u_f(x) D^{n+1}) < p^-gamma'' t} against p^-(gamma''-gamma') t",
        result,
    )
    .floor_if(
        undecided > 0,
        "some samples were undecided at this precision",
    ))
}

fn violation_json(v: &FloorViolation) -> Value {
    json!({
        "time": time_json(&v.time),
        "rank": v.rank,
        "basis": v.basis.iter().map(|k| bigs(k)).collect::<Vec<_>>(),
        "sup_cov_sq": v.sup_cov_sq.as_ref().map_or(Value::Null, rat),
        "floor_exp": rat(&v.floor_exp),
        "contains_kernel": v.contains_kernel,
    })
}

fn subspace(a: &SubspaceArgs, s: &SessionConfig) -> Result<Outcome, Failure> {
    let (f, b) = map_and_ball(s, &a.map, &a.ball)?;
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    let m = f.output_dim() + 1;
    let ranks = match &a.ranks {
        None => (1..=m).collect(),
        Some(r) => usage(spec::list(r, |x| {
            x.parse::<usize>().map_err(|_| format!("bad rank `{x}`"))
        }))?,
    };
    if ranks.iter().any(|&j| j == 0 || j > m) {
        return Err(Failure::Usage(format!("ranks must lie in 1..={m}")));
    }
    let np = nonplanarity_check(&f, &b, a.samples.max(m), s.precision, &mut rng)?;
    let cfg = FloorCheckConfig {
        rate: rational(&a.rate)?,
        big_t: a.big_t,
        ranks,
        height: a.height,
        max_modules: a.max_modules,
        samples: a.samples,
        n_digits: s.precision,
        cross_check: !a.no_cross_check,
    };
    let r = floor_condition_check(&f, &b, &cfg, &mut rng)?;
    let result = json!({
        "map": f.to_text(),
        "nonplanarity": {
            "full": np.full,
            "rank": np.rank,
            "expected": np.expected,
            "witnesses": np.witnesses.iter().map(|k| bigs(k)).collect::<Vec<_>>(),
            "samples": np.samples,
        },
        "floor": {
            "holds": r.holds(),
            "kernel": r.kernel.iter().map(|k| bigs(k)).collect::<Vec<_>>(),
            "times_checked": r.times_checked,
            "modules": r.modules.iter().map(|(j, c)| json!({ "rank": j, "count": c })).collect::<Vec<_>>(),
            "cells": r.cells,
            "uncertified_cells": r.uncertified_cells,
            "violations": r.violations.iter().map(violation_json).collect::<Vec<_>>(),
            "inconclusive": r.inconclusive.iter().map(violation_json).collect::<Vec<_>>(),
            "cross_checked": r.cross_checked,
            "cross_mismatches": r.cross_mismatches,
        },
    });
    if r.cross_mismatches > 0 {
        return Err(Failure::Other(format!(
            "{} dense cross-check mismatches",
            r.cross_mismatches
        )));
    }
    Ok(Outcome::new(
        "sup_{x in B} cov(g_t u_f(x) Delta) >= p^-j d t for primitive Delta of rank j",
        result,
    )
    .floor_if(
        !r.inconclusive.is_empty(),
        "some cells were not certified at this precision",
    ))
}

fn good(a: &GoodArgs, s: &SessionConfig) -> Result<Outcome, Failure> {
    let (f, b) = map_and_ball(s, &a.map, &a.ball)?;
    let cfg = GoodCheckConfig {
        c: rational(&a.c)?,
        alpha: rational(&a.alpha)?,
        eps_exps: usage(spec::int_range(&a.eps_exps))?,
        sublevel: if a.strict {
            Sublevel::Strict
        } else {
            Sublevel::NonStrict
        },
        samples: a.samples,
        max_nodes: a.tree_nodes,
        sup_nodes: a.sup_nodes,
        level: a.level,
        seed: s.seed,
    };
    let r = good_check(&f, &b, &cfg)?;
    let result = json!({
        "map": f.to_text(),
        "holds": r.holds(),
        "sup_val": r.sup_val,
        "gauss_val": r.gauss_val,
        "rows": r.rows.iter().map(|x| json!({
            "m": x.m,
            "estimate": measure_json(&x.estimate),
            "bound": float(x.bound),
            "violated": x.violated,
        })).collect::<Vec<_>>(),
    });
    Ok(Outcome::new(
        "mu{x in B : |f(x)| <= eps} <= C (eps/sup_B |f|)^alpha mu(B)",
        result,
    ))
}
