//! Seeded Monte Carlo and exact-count harnesses on `Z_p^d` with Haar measure:
//! sublevel sets of polynomials, nondivergence of `δ` along a curve, and the
//! per-time contraction fractions behind the dichotomy argument.
//!
//! Fractions are exact whenever the event is determined by finitely many
//! digits within budget; otherwise they are sampled and carry a
//! Clopper–Pearson interval.

use std::cmp::Ordering;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta, ContinuousCDF};

use crate::error::{Error, Result};
use crate::flows::{balanced_time, FlowTime};
use crate::geometry::{low_height_modules, rational_kernel, Ball, PolyMap};
use crate::lattice::{covolume, delta_search, DeltaBudget, LatticeDescription};
use crate::sarith::{cmp_p_power, PExact, PadicPoint};

/// A ball `B` and its enlargement `B̃` (radius `p^{-r+k}`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BallSpec {
    pub ball: Ball,
    pub dilation: u32,
}

impl BallSpec {
    pub fn enlarged(&self) -> Ball {
        Ball {
            center: self.ball.center.clone(),
            radius_exp: self.ball.radius_exp.saturating_sub(self.dilation),
        }
    }

    /// The doubling constant `μ(B̃)/μ(B)`.
    pub fn federer_ratio(&self) -> BigRational {
        self.enlarged().measure() / self.ball.measure()
    }
}

/// How a fraction was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CountPath {
    Exact,
    Sampled,
}

/// `μ(event ∩ B)/μ(B)`, exact or sampled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureEstimate {
    /// Samples, or cells (tree nodes for digit-tree counts) on the exact path.
    pub samples: u64,
    /// Event count; 0 for digit-tree counts, whose cells differ in measure.
    pub hits: u64,
    /// Samples whose outcome could not be decided (excluded from `hits`).
    pub undecided: u64,
    pub fraction: BigRational,
    pub ci_low: f64,
    pub ci_high: f64,
    pub level: f64,
    pub seed: u64,
    pub path: CountPath,
}

/// Exact two-sided binomial interval at confidence `level`.
pub fn clopper_pearson(hits: u64, n: u64, level: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let a = (1.0 - level) / 2.0;
    let (k, nf) = (hits as f64, n as f64);
    let lo = if hits == 0 {
        0.0
    } else {
        Beta::new(k, nf - k + 1.0).map_or(0.0, |b| b.inverse_cdf(a))
    };
    let hi = if hits == n {
        1.0
    } else {
        Beta::new(k + 1.0, nf - k).map_or(1.0, |b| b.inverse_cdf(1.0 - a))
    };
    (lo, hi)
}

impl MeasureEstimate {
    pub fn exact(fraction: BigRational, cells: u64, seed: u64) -> Self {
        let f = fraction.to_f64().unwrap_or(f64::NAN);
        MeasureEstimate {
            samples: cells,
            hits: 0,
            undecided: 0,
            fraction,
            ci_low: f,
            ci_high: f,
            level: 1.0,
            seed,
            path: CountPath::Exact,
        }
    }

    pub fn sampled(hits: u64, samples: u64, undecided: u64, level: f64, seed: u64) -> Self {
        let (ci_low, ci_high) = clopper_pearson(hits, samples, level);
        MeasureEstimate {
            samples,
            hits,
            undecided,
            fraction: BigRational::new(hits.into(), samples.max(1).into()),
            ci_low,
            ci_high,
            level,
            seed,
            path: CountPath::Sampled,
        }
    }

    pub fn to_f64(&self) -> f64 {
        self.fraction.to_f64().unwrap_or(f64::NAN)
    }
}

// ---------------------------------------------------------------------------
// digit-tree counting for polynomial sublevel sets

fn binom(n: u32, k: u32) -> BigInt {
    (0..k).fold(BigInt::one(), |acc, i| {
        acc * BigInt::from(n - i) / BigInt::from(i + 1)
    })
}

/// Taylor multi-indices `β ≠ 0` with `β_i <= maximal exponent of x_i`.
fn taylor_indices(f: &PolyMap) -> Vec<Vec<u32>> {
    let d = f.input_dim();
    let caps: Vec<u32> = (0..d)
        .map(|i| f.coords()[0].iter().map(|t| t.exps[i]).max().unwrap_or(0))
        .collect();
    let mut out = vec![vec![]];
    for &c in &caps {
        out = out
            .into_iter()
            .flat_map(|b| (0..=c).map(move |k| [b.clone(), vec![k]].concat()))
            .collect();
    }
    out.retain(|b| b.iter().any(|&k| k > 0));
    out
}

/// `∂^β f(x) / β!` for the scalar map `f`.
fn taylor_coeff(f: &PolyMap, beta: &[u32], x: &[BigInt]) -> PExact {
    let p = f.prime();
    f.coords()[0].iter().fold(PExact::zero(p), |acc, t| {
        if t.exps.iter().zip(beta).any(|(e, b)| b > e) {
            return acc;
        }
        let mut c = t.coef.clone();
        for ((&e, &b), xi) in t.exps.iter().zip(beta).zip(x) {
            c = &c
                * &PExact::from_int(
                    p,
                    binom(e, b) * num_traits::pow(xi.clone(), (e - b) as usize),
                );
        }
        &acc + &c
    })
}

struct Tree<'a> {
    f: &'a PolyMap,
    betas: Vec<Vec<u32>>,
    nodes: u64,
    max_nodes: u64,
}

impl Tree<'_> {
    /// `(v(f(x)), min_β v(T_β(x)) + J|β|)` on the subtree `x + p^J Z_p^d`.
    fn node(&mut self, x: &[BigInt], level: u32) -> (Option<i64>, Option<i64>) {
        self.nodes += 1;
        let p = self.f.prime();
        let xs: Vec<PExact> = x.iter().map(|v| PExact::from_int(p, v.clone())).collect();
        let v0 = self.f.eval_exact(&xs).expect("dimension checked")[0].valuation();
        let tau = self
            .betas
            .iter()
            .filter_map(|b| {
                let v = taylor_coeff(self.f, b, x).valuation()?;
                Some(v + level as i64 * b.iter().sum::<u32>() as i64)
            })
            .min();
        (v0, tau)
    }

    fn children(&self, x: &[BigInt], level: u32) -> Vec<Vec<BigInt>> {
        let p = self.f.prime();
        let step = p.pow(level);
        let mut out = vec![x.to_vec()];
        for i in 0..x.len() {
            out = out
                .into_iter()
                .flat_map(|v| {
                    (0..p.get()).map({
                        let step = step.clone();
                        move |a| {
                            let mut w = v.clone();
                            w[i] += &step * BigInt::from(a);
                            w
                        }
                    })
                })
                .collect();
        }
        out
    }

    /// Measure (relative to the node) of `{v(f) >= s}`; `None` past the budget.
    fn sublevel(&mut self, x: &[BigInt], level: u32, s: i64) -> Option<BigRational> {
        if self.nodes >= self.max_nodes {
            return None;
        }
        let (v0, tau) = self.node(x, level);
        let hit = v0.is_none_or(|v| v >= s);
        match (v0, tau) {
            (_, None) => return Some(BigRational::from_integer((hit as i64).into())),
            (_, Some(t)) if t >= s => return Some(BigRational::from_integer((hit as i64).into())),
            (Some(v), Some(t)) if v < t => return Some(BigRational::zero()),
            _ => {}
        }
        let kids = self.children(x, level);
        let w = BigRational::new(BigInt::one(), BigInt::from(kids.len()));
        let mut acc = BigRational::zero();
        for k in kids {
            acc += self.sublevel(&k, level + 1, s)? * &w;
        }
        Some(acc)
    }

    /// `min v(f)` over the subtree, breadth first so that shallow values
    /// prune deep branches. `false` past the budget.
    fn min_valuation(&mut self, x: &[BigInt], level: u32, best: &mut Option<i64>) -> bool {
        let mut queue = std::collections::VecDeque::from([(x.to_vec(), level)]);
        while let Some((x, level)) = queue.pop_front() {
            if self.nodes >= self.max_nodes {
                return false;
            }
            let (v0, tau) = self.node(&x, level);
            if let Some(v) = v0 {
                if best.is_none_or(|b| v < b) {
                    *best = Some(v);
                }
            }
            let Some(t) = tau else { continue };
            if v0.is_some_and(|v| v < t) {
                continue;
            }
            // everything below has valuation >= t
            if best.is_some_and(|b| b <= t) {
                continue;
            }
            for k in self.children(&x, level) {
                queue.push_back((k, level + 1));
            }
        }
        true
    }
}

fn check_scalar(f: &PolyMap, ball: &Ball) -> Result<()> {
    if f.output_dim() != 1 {
        return Err(Error::DimensionMismatch {
            expected: 1,
            found: f.output_dim(),
        });
    }
    if ball.dim() != f.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: f.input_dim(),
            found: ball.dim(),
        });
    }
    Ok(())
}

fn center_prefix(ball: &Ball) -> Vec<BigInt> {
    let m = ball.prime().pow(ball.radius_exp);
    ball.center
        .coords()
        .iter()
        .map(|c| num_integer::Integer::mod_floor(c.mantissa(), &m))
        .collect()
}

/// Exact Haar fraction of `{x ∈ B : v_p(f(x)) >= s}`, by digit-tree counting.
/// `None` when the tree exceeds `max_nodes`.
pub fn sublevel_fraction_exact(
    f: &PolyMap,
    ball: &Ball,
    s: i64,
    max_nodes: u64,
) -> Result<Option<(BigRational, u64)>> {
    check_scalar(f, ball)?;
    let mut tree = Tree {
        f,
        betas: taylor_indices(f),
        nodes: 0,
        max_nodes,
    };
    let r = tree.sublevel(&center_prefix(ball), ball.radius_exp, s);
    Ok(r.map(|x| (x, tree.nodes)))
}

/// Exact `min_{x ∈ B} v_p(f(x))`, i.e. `sup_B |f| = p^{-v}`; `Ok(None)` if
/// `f ≡ 0` and `Err(SearchFailed)` past the budget.
pub fn sup_valuation(f: &PolyMap, ball: &Ball, max_nodes: u64) -> Result<Option<i64>> {
    check_scalar(f, ball)?;
    let mut tree = Tree {
        f,
        betas: taylor_indices(f),
        nodes: 0,
        max_nodes,
    };
    let mut best = None;
    if !tree.min_valuation(&center_prefix(ball), ball.radius_exp, &mut best) {
        return Err(Error::SearchFailed(
            "sup sweep exceeded its node budget".into(),
        ));
    }
    Ok(best)
}

/// Gauss-norm bound: `sup_B |f| <= p^{-g}` with `g = min_β v(T_β(c)) + r|β|`.
pub fn gauss_valuation(f: &PolyMap, ball: &Ball) -> Result<Option<i64>> {
    check_scalar(f, ball)?;
    let c = center_prefix(ball);
    let r = ball.radius_exp as i64;
    let p = f.prime();
    let xs: Vec<PExact> = c.iter().map(|v| PExact::from_int(p, v.clone())).collect();
    let v0 = f.eval_exact(&xs)?[0].valuation();
    let rest = taylor_indices(f)
        .iter()
        .filter_map(|b| {
            Some(taylor_coeff(f, b, &c).valuation()? + r * b.iter().sum::<u32>() as i64)
        })
        .min();
    Ok(match (v0, rest) {
        (Some(a), Some(b)) => Some(a.min(b)),
        (a, b) => a.or(b),
    })
}

/// `|f| < ε` or `|f| <= ε`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sublevel {
    Strict,
    NonStrict,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GoodCheckConfig {
    pub c: BigRational,
    pub alpha: BigRational,
    /// `ε = p^{-m}` for each `m`.
    pub eps_exps: Vec<i64>,
    pub sublevel: Sublevel,
    pub samples: u64,
    /// Node budget of the exact-count path; past it the row is sampled.
    pub max_nodes: u64,
    /// Node budget of the exact sup search.
    pub sup_nodes: u64,
    pub level: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GoodRow {
    pub m: i64,
    pub estimate: MeasureEstimate,
    /// `C (ε / sup|f|)^α`.
    pub bound: f64,
    pub violated: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GoodCheckReport {
    /// `sup_B |f| = p^{-sup_val}` (exact).
    pub sup_val: i64,
    /// Gauss-norm bound on the sup, `p^{-gauss_val}`.
    pub gauss_val: i64,
    pub rows: Vec<GoodRow>,
}

impl GoodCheckReport {
    pub fn holds(&self) -> bool {
        self.rows.iter().all(|r| !r.violated)
    }
}

/// Compare sublevel fractions of `f` on `B` with `C (ε / sup_B |f|)^α`.
pub fn good_check(f: &PolyMap, ball: &Ball, cfg: &GoodCheckConfig) -> Result<GoodCheckReport> {
    check_scalar(f, ball)?;
    let p = f.prime();
    let gauss_val = gauss_valuation(f, ball)?
        .ok_or_else(|| Error::InvalidInput("f vanishes identically on the ball".into()))?;
    let sup_val = sup_valuation(f, ball, cfg.sup_nodes)?
        .ok_or_else(|| Error::InvalidInput("f vanishes identically on the ball".into()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut rows = Vec::new();
    for &m in &cfg.eps_exps {
        let s = match cfg.sublevel {
            Sublevel::Strict => m + 1,
            Sublevel::NonStrict => m,
        };
        // fraction <= C p^{-α (m - sup_val)}
        let k = BigRational::from_integer(BigInt::from(m - sup_val));
        let bound_exp = -(&cfg.alpha * &k);
        let bound = cfg.c.to_f64().unwrap_or(f64::NAN)
            * (p.get() as f64).powf(bound_exp.to_f64().unwrap_or(f64::NAN));
        let (estimate, violated) = match sublevel_fraction_exact(f, ball, s, cfg.max_nodes)? {
            Some((frac, nodes)) => {
                let v = if frac.is_zero() {
                    false
                } else {
                    cmp_p_power(p, &(&frac / &cfg.c), &bound_exp) == Ordering::Greater
                };
                (MeasureEstimate::exact(frac, nodes, cfg.seed), v)
            }
            None => {
                let e = f.denominator_exp() as i64;
                let digits = (s + e).max(1) as u32 + ball.radius_exp;
                let mut hits = 0;
                for _ in 0..cfg.samples {
                    let x = ball.sample(digits, &mut rng)?;
                    // v(f(x)) >= s is decided at this precision
                    let v = f.eval_exact(x.coords())?[0].valuation();
                    if v.is_none_or(|v| v >= s) {
                        hits += 1;
                    }
                }
                let est = MeasureEstimate::sampled(hits, cfg.samples, 0, cfg.level, cfg.seed);
                let v = est.ci_low > bound;
                (est, v)
            }
        };
        rows.push(GoodRow {
            m,
            estimate,
            bound,
            violated,
        });
    }
    Ok(GoodCheckReport {
        sup_val,
        gauss_val,
        rows,
    })
}

// ---------------------------------------------------------------------------
// log-log fits

/// Least-squares line through `(x, y)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub residual_rms: f64,
    pub points: usize,
}

pub fn fit_line(pts: &[(f64, f64)]) -> Option<LineFit> {
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = pts
        .iter()
        .map(|p| (p.1 - intercept - slope * p.0).powi(2))
        .sum();
    Some(LineFit {
        slope,
        intercept,
        residual_rms: (rss / n).sqrt(),
        points: pts.len(),
    })
}

// ---------------------------------------------------------------------------
// nondivergence along a curve

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QndConfig {
    /// Balanced times `(s, …, s)`.
    pub scales: Vec<u32>,
    /// `ε = p^{-e}` for each `e`.
    pub eps_exps: Vec<BigRational>,
    /// `ρ = p^{-rho_exp}`; every `ε` must be `<= ρ`.
    pub rho_exp: BigRational,
    pub samples: u64,
    /// Use exact counting when `p^{d N}` prefixes fit in this many cells.
    pub max_exact_cells: u64,
    pub level: f64,
    pub seed: u64,
    /// Abort if the covolume hypothesis fails on a sampled `Δ`.
    pub require_hypothesis: bool,
    pub hypothesis_height: u32,
    pub hypothesis_modules: usize,
    pub hypothesis_points: usize,
    /// Constants for the right-hand side: `m C (N_X D²)^m (ε/ρ)^α`.
    pub c: f64,
    pub alpha: f64,
    pub budget: DeltaBudget,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QndCell {
    pub eps_exp: BigRational,
    pub estimate: MeasureEstimate,
    pub rhs: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QndRow {
    pub time: FlowTime,
    pub cells: Vec<QndCell>,
    /// Fit of `ln fraction` against `ln ε` over nonzero fractions.
    pub fit: Option<LineFit>,
}

/// A sampled `Δ` for which `sup_x cov(h(x) Δ) < ρ^{rank Δ}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HypothesisFailure {
    pub time: FlowTime,
    pub basis: Vec<Vec<BigInt>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QndReport {
    pub kernel: Vec<Vec<BigInt>>,
    pub hypothesis_failures: Vec<HypothesisFailure>,
    pub rows: Vec<QndRow>,
    pub federer: BigRational,
    pub besicovitch: u64,
}

impl QndReport {
    /// Smallest fitted slope over rows that have a fit.
    pub fn min_slope(&self) -> Option<f64> {
        self.rows
            .iter()
            .filter_map(|r| r.fit.as_ref().map(|f| f.slope))
            .reduce(f64::min)
    }

    pub fn max_residual(&self) -> Option<f64> {
        self.rows
            .iter()
            .filter_map(|r| r.fit.as_ref().map(|f| f.residual_rms))
            .reduce(f64::max)
    }
}

/// Every point of `B` mod `p^N`, as integer approximants.
fn all_prefixes(ball: &Ball, n_digits: u32) -> Vec<PadicPoint> {
    let p = ball.prime();
    let free = n_digits - ball.radius_exp;
    let step = p.pow(ball.radius_exp);
    let count = p.pow(free);
    let c = center_prefix(ball);
    let mut out: Vec<Vec<BigInt>> = vec![vec![]];
    for ci in &c {
        let mut next = Vec::new();
        for v in &out {
            let mut z = BigInt::zero();
            while z < count {
                let mut w = v.clone();
                w.push(ci + &step * &z);
                next.push(w);
                z += 1;
            }
        }
        out = next;
    }
    out.into_iter()
        .map(|v| {
            PadicPoint::new(
                p,
                v.into_iter().map(|x| PExact::from_int(p, x)).collect(),
                n_digits,
            )
            .expect("positive precision")
        })
        .collect()
}

enum Verdict {
    Hit,
    Miss,
    Undecided,
}

/// Depth at which `x ↦ δ(g_t u_{f(x)} D^{n+1})` is constant on cells of `B`.
///
/// Normalized lattice points have `q ∈ Z^n` and `q0 + q·y ≡ 0 (mod p^T)` or
/// `‖q‖_p = 1`; moving `y` by `p^T Z_p^n` changes `q0 + q·y` by `p^T q·z`,
/// which leaves the p-part of every such content at 1. So `δ` only sees
/// `y mod p^T`, and `f(x) mod p^T` only sees `x mod p^{T+e}`.
fn cell_depth(f: &PolyMap, ball: &Ball, t: &FlowTime) -> u32 {
    t.total() + f.denominator_exp() + ball.radius_exp
}

/// `f` at the integer representative of `x`'s cell, exactly.
fn eval_cell(f: &PolyMap, x: &PadicPoint) -> Result<PadicPoint> {
    f.eval_point(&PadicPoint::exact(x.prime(), x.coords().to_vec())?)
}

/// `δ(g_t u_y D^{n+1}) < p^{-e}` for each `e`, decided exactly.
fn delta_verdicts(
    l: &LatticeDescription,
    eps_exps: &[BigRational],
    budget: &DeltaBudget,
) -> Result<Vec<Verdict>> {
    let p = l.prime();
    let cert = delta_search(l, budget, None)?;
    Ok(eps_exps
        .iter()
        .map(|e| {
            let ne = -e;
            if cert
                .upper(p)
                .is_some_and(|u| cmp_p_power(p, &u, &ne) == Ordering::Less)
            {
                Verdict::Hit
            } else if cert.exhaustive && cmp_p_power(p, &cert.lower_bound, &ne) != Ordering::Less {
                Verdict::Miss
            } else {
                Verdict::Undecided
            }
        })
        .collect())
}

/// Measure `{x ∈ B : δ(g_t u_{f(x)} D^{n+1}) < ε}` along a ladder of times and `ε`.
pub fn qnd_experiment(f: &PolyMap, spec: &BallSpec, cfg: &QndConfig) -> Result<QndReport> {
    let p = f.prime();
    let n = f.output_dim();
    let ball = &spec.ball;
    if ball.dim() != f.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: f.input_dim(),
            found: ball.dim(),
        });
    }
    if let Some(e) = cfg.eps_exps.iter().find(|e| **e < cfg.rho_exp) {
        return Err(Error::OutOfRange(format!("ε = p^-{e} exceeds ρ")));
    }
    let kernel = rational_kernel(f);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let d = ball.dim() as u32;

    // covolume hypothesis on low-height Δ
    let mut hypothesis_failures = Vec::new();
    let probe_digits = cfg
        .scales
        .iter()
        .map(|s| s * (n as u32 + 1))
        .max()
        .unwrap_or(1)
        + ball.radius_exp
        + 1;
    let probes = (0..cfg.hypothesis_points.max(1))
        .map(|_| {
            ball.sample(probe_digits, &mut rng)
                .and_then(|x| f.eval_point(&x))
        })
        .collect::<Result<Vec<_>>>()?;
    for &s in &cfg.scales {
        let t = balanced_time(s, n)?;
        for j in 1..=n {
            let floor = -(&cfg.rho_exp * BigInt::from(2 * j as u64));
            for delta in low_height_modules(
                p,
                n + 1,
                j,
                cfg.hypothesis_height,
                cfg.hypothesis_modules,
                &kernel,
            ) {
                let mut ok = false;
                for y in &probes {
                    let c = covolume(&LatticeDescription::new(y.clone(), t.clone())?, &delta)?;
                    if c.certified() && cmp_p_power(p, &c.value_sq(p), &floor) != Ordering::Less {
                        ok = true;
                        break;
                    }
                }
                if !ok {
                    let fail = HypothesisFailure {
                        time: t.clone(),
                        basis: delta.integer_basis(),
                    };
                    if cfg.require_hypothesis {
                        return Err(Error::VerificationFailed(format!(
                            "covolume hypothesis fails at t = {:?} for Δ = {:?}",
                            fail.time.coords(),
                            fail.basis
                        )));
                    }
                    hypothesis_failures.push(fail);
                }
            }
        }
    }

    let federer = spec.federer_ratio();
    let dmu = federer.to_f64().unwrap_or(f64::NAN);
    let m = (n + 1) as f64;
    let mut rows = Vec::new();
    for &s in &cfg.scales {
        let t = balanced_time(s, n)?;
        let digits = cell_depth(f, ball, &t);
        let free = (digits - ball.radius_exp) * d;
        let exact = p
            .pow(free)
            .to_u64()
            .is_some_and(|c| c <= cfg.max_exact_cells);
        let mut hits = vec![0u64; cfg.eps_exps.len()];
        let mut undecided = vec![0u64; cfg.eps_exps.len()];
        let xs: Box<dyn Iterator<Item = Result<PadicPoint>>> = if exact {
            Box::new(all_prefixes(ball, digits).into_iter().map(Ok))
        } else {
            let mut local =
                ChaCha8Rng::seed_from_u64(cfg.seed ^ (s as u64).wrapping_mul(0x9e37_79b9));
            let b = ball.clone();
            Box::new((0..cfg.samples).map(move |_| b.sample(digits, &mut local)))
        };
        let mut total = 0u64;
        for x in xs {
            let y = eval_cell(f, &x?)?;
            let l = LatticeDescription::new(y, t.clone())?;
            for (k, v) in delta_verdicts(&l, &cfg.eps_exps, &cfg.budget)?
                .into_iter()
                .enumerate()
            {
                match v {
                    Verdict::Hit => hits[k] += 1,
                    Verdict::Miss => {}
                    Verdict::Undecided => undecided[k] += 1,
                }
            }
            total += 1;
        }
        let cells: Vec<QndCell> = cfg
            .eps_exps
            .iter()
            .enumerate()
            .map(|(k, e)| {
                let estimate = if exact && undecided[k] == 0 {
                    MeasureEstimate {
                        hits: hits[k],
                        ..MeasureEstimate::exact(
                            BigRational::new(hits[k].into(), total.into()),
                            total,
                            cfg.seed,
                        )
                    }
                } else {
                    MeasureEstimate::sampled(hits[k], total, undecided[k], cfg.level, cfg.seed)
                };
                let ratio = (p.get() as f64).powf(-(e - &cfg.rho_exp).to_f64().unwrap_or(f64::NAN));
                let rhs = m * cfg.c * (dmu * dmu).powf(m) * ratio.powf(cfg.alpha);
                QndCell {
                    eps_exp: e.clone(),
                    estimate,
                    rhs,
                }
            })
            .collect();
        let ln_p = (p.get() as f64).ln();
        let pts: Vec<(f64, f64)> = cells
            .iter()
            .filter(|c| c.estimate.fraction.is_positive())
            .map(|c| {
                (
                    -c.eps_exp.to_f64().unwrap_or(f64::NAN) * ln_p,
                    c.estimate.to_f64().ln(),
                )
            })
            .collect();
        rows.push(QndRow {
            time: t,
            fit: fit_line(&pts),
            cells,
        });
    }
    Ok(QndReport {
        kernel,
        hypothesis_failures,
        rows,
        federer,
        besicovitch: 1,
    })
}

// ---------------------------------------------------------------------------
// dichotomy

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DichotomyConfig {
    pub gamma: BigRational,
    pub gamma1: BigRational,
    pub gamma2: BigRational,
    /// Balanced scales `s = 1..=big_t`.
    pub big_t: u32,
    pub samples: u64,
    pub level: f64,
    pub seed: u64,
    pub budget: DeltaBudget,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DichotomyRow {
    pub time: FlowTime,
    /// `t`-weighted threshold exponent `γ'' t`.
    pub threshold_exp: BigRational,
    pub estimate: MeasureEstimate,
    /// `p^{-(γ''-γ') t}` (the envelope up to its constant).
    pub envelope: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DichotomyReport {
    pub rows: Vec<DichotomyRow>,
    /// Fit of `ln fraction` against `t` (nonzero fractions).
    pub decay: Option<LineFit>,
    /// `Σ_t fraction_t`.
    pub partial_sum: f64,
    /// Smallest `C'` with `fraction_t <= C' envelope_t` for every `t`.
    pub envelope_constant: f64,
}

/// Fractions of `{x ∈ B : δ(g_t u_{f(x)} D^{n+1}) < p^{-γ'' t}}` along balanced
/// times, against the envelope `p^{-(γ''-γ') t}`.
pub fn dichotomy_experiment(
    f: &PolyMap,
    ball: &Ball,
    cfg: &DichotomyConfig,
) -> Result<DichotomyReport> {
    if !(cfg.gamma2 > cfg.gamma1 && cfg.gamma1 > cfg.gamma && !cfg.gamma.is_negative()) {
        return Err(Error::InvalidInput("need γ'' > γ' > γ >= 0".into()));
    }
    if cfg.big_t == 0 {
        return Err(Error::OutOfRange("T must be positive".into()));
    }
    let p = f.prime();
    let n = f.output_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut rows = Vec::new();
    for s in 1..=cfg.big_t {
        let t = balanced_time(s, n)?;
        let tt = BigRational::from_integer(BigInt::from(t.total()));
        let thr = &cfg.gamma2 * &tt;
        let digits = cell_depth(f, ball, &t);
        let (mut hits, mut undecided) = (0, 0);
        for _ in 0..cfg.samples {
            let y = eval_cell(f, &ball.sample(digits, &mut rng)?)?;
            let l = LatticeDescription::new(y, t.clone())?;
            match delta_verdicts(&l, std::slice::from_ref(&thr), &cfg.budget)?.remove(0) {
                Verdict::Hit => hits += 1,
                Verdict::Miss => {}
                Verdict::Undecided => undecided += 1,
            }
        }
        let gap = (&cfg.gamma2 - &cfg.gamma1) * &tt;
        let envelope = (p.get() as f64).powf(-gap.to_f64().unwrap_or(f64::NAN));
        let estimate = MeasureEstimate::sampled(hits, cfg.samples, undecided, cfg.level, cfg.seed);
        rows.push(DichotomyRow {
            time: t,
            threshold_exp: thr,
            estimate,
            envelope,
        });
    }
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.estimate.fraction.is_positive())
        .map(|r| (r.time.total() as f64, r.estimate.to_f64().ln()))
        .collect();
    let partial_sum = rows.iter().map(|r| r.estimate.to_f64()).sum();
    let envelope_constant = rows
        .iter()
        .map(|r| r.estimate.to_f64() / r.envelope)
        .fold(0.0, f64::max);
    Ok(DichotomyReport {
        decay: fit_line(&pts),
        rows,
        partial_sum,
        envelope_constant,
    })
}

// ---------------------------------------------------------------------------
// covering constants for Haar measure on Z_p^d

/// Largest number of balls of the family containing a common center.
pub fn multiplicity(balls: &[Ball]) -> usize {
    balls
        .iter()
        .map(|b| {
            let c: Vec<BigInt> = b
                .center
                .coords()
                .iter()
                .map(|x| x.mantissa().clone())
                .collect();
            balls.iter().filter(|o| o.contains(&c)).count()
        })
        .max()
        .unwrap_or(0)
}

/// Keep the maximal balls: in the ultrametric they are pairwise disjoint and
/// still cover every center.
pub fn disjoint_cover(balls: &[Ball]) -> Vec<Ball> {
    let mut sorted: Vec<&Ball> = balls.iter().collect();
    sorted.sort_by_key(|b| b.radius_exp);
    let mut out: Vec<Ball> = Vec::new();
    for b in sorted {
        let c = center_prefix(b);
        if !out.iter().any(|o| o.contains(&c)) {
            out.push(b.clone());
        }
    }
    out
}

/// `μ(B(x, p^k r)) / μ(B(x, r))`, exactly.
pub fn doubling_ratio(ball: &Ball, k: u32) -> BigRational {
    BallSpec {
        ball: ball.clone(),
        dilation: k,
    }
    .federer_ratio()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::moment_curve;
    use crate::sarith::{haar_integer, Prime};
    use crate::svec::int_vec;

    fn pr(n: u32) -> Prime {
        Prime::new(n).unwrap()
    }

    fn power(p: Prime, k: u32) -> PolyMap {
        PolyMap::parse(p, &format!("dims 1 1\n0 {k} 1 0\n")).unwrap()
    }

    #[test]
    fn delta_is_constant_on_cells() {
        use crate::flows::flow_times_up_to;
        use crate::lattice::delta_search;
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let budget = DeltaBudget::default();
        for &pp in &[2u32, 3] {
            let p = pr(pp);
            for n in 1..=2usize {
                for t in flow_times_up_to(n, 3) {
                    let pt = BigInt::from(p.pow(t.total()));
                    for _ in 0..3 {
                        let base: Vec<BigInt> =
                            (0..n).map(|_| haar_integer(p, 10, &mut rng)).collect();
                        let moved: Vec<BigInt> = base
                            .iter()
                            .map(|b| b + &pt * BigInt::from(rng.gen_range(0..50u32)))
                            .collect();
                        let d = |v: &[BigInt]| {
                            let y = PadicPoint::exact(
                                p,
                                v.iter().map(|x| PExact::from_int(p, x.clone())).collect(),
                            )
                            .unwrap();
                            let c = delta_search(
                                &LatticeDescription::new(y, t.clone()).unwrap(),
                                &budget,
                                None,
                            )
                            .unwrap();
                            assert!(c.is_exact(p));
                            c.upper(p)
                        };
                        assert_eq!(d(&base), d(&moved), "p={pp} t={:?}", t.coords());
                    }
                }
            }
        }
    }

    #[test]
    fn exact_sublevel_of_powers() {
        for &pp in &[2u32, 3] {
            let p = pr(pp);
            let ball = Ball::unit(p, 1);
            for k in 1..=4u32 {
                for m in 0..=12i64 {
                    let (non, _) = sublevel_fraction_exact(&power(p, k), &ball, m, 1 << 20)
                        .unwrap()
                        .unwrap();
                    let c = (m + k as i64 - 1) / k as i64;
                    assert_eq!(non, p.rpow(-c), "p={pp} k={k} m={m}");
                    let (strict, _) = sublevel_fraction_exact(&power(p, k), &ball, m + 1, 1 << 20)
                        .unwrap()
                        .unwrap();
                    assert_eq!(strict, p.rpow(-(m / k as i64 + 1)));
                }
            }
        }
    }

    #[test]
    fn exact_count_matches_brute_force() {
        let p = pr(3);
        // x^3 - x + 3 on Z_3 and on a smaller ball
        let f = PolyMap::parse(p, "dims 1 1\n0 3 1 0\n0 1 -1 0\n0 0 3 0\n").unwrap();
        for ball in [
            Ball::unit(p, 1),
            Ball::new(PadicPoint::new(p, int_vec(p, &[2]), 8).unwrap(), 1).unwrap(),
        ] {
            for s in 0..5i64 {
                let (frac, _) = sublevel_fraction_exact(&f, &ball, s, 1 << 20)
                    .unwrap()
                    .unwrap();
                let depth = 8u32;
                let modulus = p.pow(depth);
                let mut hits = 0u64;
                let mut total = 0u64;
                let mut x = BigInt::zero();
                while x < modulus {
                    if ball.contains(std::slice::from_ref(&x)) {
                        total += 1;
                        let v =
                            f.eval_exact(&[PExact::from_int(p, x.clone())]).unwrap()[0].valuation();
                        if v.is_none_or(|v| v >= s) {
                            hits += 1;
                        }
                    }
                    x += 1;
                }
                assert_eq!(frac, BigRational::new(hits.into(), total.into()), "s={s}");
            }
        }
    }

    #[test]
    fn sup_is_exact_where_gauss_is_not() {
        let p = pr(2);
        // x^2 - x vanishes mod 2 on Z_2 although its Gauss norm is 1
        let f = PolyMap::parse(p, "dims 1 1\n0 2 1 0\n0 1 -1 0\n").unwrap();
        let ball = Ball::unit(p, 1);
        assert_eq!(gauss_valuation(&f, &ball).unwrap(), Some(0));
        assert_eq!(sup_valuation(&f, &ball, 10_000).unwrap(), Some(1));
        let zero = PolyMap::parse(p, "dims 1 1\n0 1 0 0\n").unwrap();
        assert_eq!(sup_valuation(&zero, &ball, 100).unwrap(), None);
    }

    fn good_cfg(alpha: BigRational, eps: Vec<i64>) -> GoodCheckConfig {
        GoodCheckConfig {
            c: BigRational::one(),
            alpha,
            eps_exps: eps,
            sublevel: Sublevel::Strict,
            samples: 2000,
            max_nodes: 1 << 18,
            sup_nodes: 1 << 16,
            level: 0.99,
            seed: 3,
        }
    }

    #[test]
    fn good_check_examples() {
        let p = pr(3);
        let ball = Ball::unit(p, 1);
        let r = good_check(
            &power(p, 1),
            &ball,
            &good_cfg(BigRational::one(), (0..8).collect()),
        )
        .unwrap();
        assert!(r.holds());
        assert_eq!(r.sup_val, 0);
        let sq = power(p, 2);
        let half = BigRational::new(1.into(), 2.into());
        assert!(good_check(&sq, &ball, &good_cfg(half, (0..8).collect()))
            .unwrap()
            .holds());
        assert!(
            !good_check(&sq, &ball, &good_cfg(BigRational::one(), (0..8).collect()))
                .unwrap()
                .holds()
        );
        let one = PolyMap::parse(p, "dims 1 1\n0 0 1 0\n").unwrap();
        let r = good_check(&one, &ball, &good_cfg(BigRational::one(), (0..5).collect())).unwrap();
        assert!(r.rows.iter().all(|row| row.estimate.fraction.is_zero()));
        let zero = PolyMap::parse(p, "dims 1 1\n").unwrap();
        assert!(good_check(&zero, &ball, &good_cfg(BigRational::one(), vec![1])).is_err());
    }

    #[test]
    fn sampled_path_brackets_the_exact_value() {
        let p = pr(2);
        let ball = Ball::unit(p, 1);
        let mut cfg = good_cfg(BigRational::new(1.into(), 3.into()), vec![2, 5]);
        cfg.max_nodes = 1;
        cfg.samples = 4000;
        let r = good_check(&power(p, 3), &ball, &cfg).unwrap();
        for row in &r.rows {
            assert_eq!(row.estimate.path, CountPath::Sampled);
            let exact = p.rpow(-(row.m / 3 + 1)).to_f64().unwrap();
            assert!(row.estimate.ci_low <= exact && exact <= row.estimate.ci_high);
        }
        let again = good_check(&power(p, 3), &ball, &cfg).unwrap();
        assert_eq!(again.rows[0].estimate, r.rows[0].estimate);
    }

    #[test]
    fn clopper_pearson_basics() {
        let (lo, hi) = clopper_pearson(0, 10, 0.95);
        assert_eq!(lo, 0.0);
        assert!((hi - 0.3085).abs() < 1e-3);
        let (lo, hi) = clopper_pearson(5, 10, 0.95);
        assert!((lo - 0.1871).abs() < 1e-3 && (hi - 0.8129).abs() < 1e-3);
    }

    #[test]
    fn covers_have_multiplicity_one() {
        let p = pr(3);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let balls: Vec<Ball> = (0..60)
            .map(|i| {
                let c = vec![
                    PExact::from_int(p, haar_integer(p, 6, &mut rng)),
                    PExact::from_int(p, haar_integer(p, 6, &mut rng)),
                ];
                Ball::new(PadicPoint::new(p, c, 6).unwrap(), 1 + i % 4).unwrap()
            })
            .collect();
        let cover = disjoint_cover(&balls);
        assert_eq!(multiplicity(&cover), 1);
        for b in &balls {
            let c: Vec<BigInt> = b
                .center
                .coords()
                .iter()
                .map(|x| x.mantissa().clone())
                .collect();
            assert_eq!(cover.iter().filter(|o| o.contains(&c)).count(), 1);
        }
        assert!(multiplicity(&balls) >= 1);
    }

    #[test]
    fn haar_doubling_is_exact() {
        let p = pr(5);
        for d in 1..=3usize {
            let ball = Ball::new(PadicPoint::zero(p, d), 4).unwrap();
            for k in 0..=4u32 {
                assert_eq!(doubling_ratio(&ball, k), p.rpow((d as u32 * k) as i64));
            }
        }
    }

    fn qnd_cfg(scales: Vec<u32>, samples: u64, seed: u64) -> QndConfig {
        QndConfig {
            scales,
            eps_exps: (1..=6)
                .map(|j| BigRational::new(j.into(), 2.into()))
                .collect(),
            rho_exp: BigRational::zero(),
            samples,
            max_exact_cells: 1000,
            level: 0.95,
            seed,
            require_hypothesis: true,
            hypothesis_height: 1,
            hypothesis_modules: 30,
            hypothesis_points: 4,
            c: 1.0,
            alpha: 0.5,
            budget: DeltaBudget::default(),
        }
    }

    #[test]
    fn qnd_small_run_is_reproducible() {
        let p = pr(3);
        let f = moment_curve(p, 2).unwrap();
        let spec = BallSpec {
            ball: Ball::new(PadicPoint::zero(p, 1), 1).unwrap(),
            dilation: 1,
        };
        let a = qnd_experiment(&f, &spec, &qnd_cfg(vec![1, 2], 200, 7)).unwrap();
        let b = qnd_experiment(&f, &spec, &qnd_cfg(vec![1, 2], 200, 7)).unwrap();
        assert_eq!(serde_json_like(&a), serde_json_like(&b));
        assert_eq!(a.federer, BigRational::from_integer(3.into()));
        // s = 1: 27 prefixes fit the exact budget
        assert_eq!(a.rows[0].cells[0].estimate.path, CountPath::Exact);
        for row in &a.rows {
            // exact cell representatives decide every verdict
            assert!(row.cells.iter().all(|c| c.estimate.undecided == 0));
            let fr: Vec<&BigRational> = row.cells.iter().map(|c| &c.estimate.fraction).collect();
            assert!(fr.windows(2).all(|w| w[0] >= w[1]));
        }
    }

    fn serde_json_like(r: &QndReport) -> Vec<(u64, u64)> {
        r.rows
            .iter()
            .flat_map(|row| {
                row.cells
                    .iter()
                    .map(|c| (c.estimate.hits, c.estimate.samples))
            })
            .collect()
    }

    #[test]
    fn qnd_rejects_failed_hypothesis_on_degenerate_map() {
        let p = pr(3);
        let diag = PolyMap::parse(p, "dims 1 2\n0 1 1 0\n1 1 1 0\n").unwrap();
        let spec = BallSpec {
            ball: Ball::unit(p, 1),
            dilation: 0,
        };
        assert!(qnd_experiment(&diag, &spec, &qnd_cfg(vec![2], 50, 1)).is_err());
        let mut cfg = qnd_cfg(vec![2], 50, 1);
        cfg.require_hypothesis = false;
        let r = qnd_experiment(&diag, &spec, &cfg).unwrap();
        assert!(!r.hypothesis_failures.is_empty());
    }

    #[test]
    fn dichotomy_examples() {
        let p = pr(3);
        let f = moment_curve(p, 2).unwrap();
        let q = |a: i64, b: i64| BigRational::new(a.into(), b.into());
        let cfg = DichotomyConfig {
            gamma: q(0, 1),
            gamma1: q(1, 20),
            gamma2: q(1, 10),
            big_t: 1,
            samples: 100,
            level: 0.95,
            seed: 2,
            budget: DeltaBudget::default(),
        };
        let r = dichotomy_experiment(&f, &Ball::unit(p, 1), &cfg).unwrap();
        assert_eq!(r.rows.len(), 1);
        let mut bad = cfg.clone();
        bad.gamma2 = bad.gamma1.clone();
        assert!(dichotomy_experiment(&f, &Ball::unit(p, 1), &bad).is_err());
    }

    #[test]
    fn line_fit_recovers_a_line() {
        let pts: Vec<(f64, f64)> = (0..5).map(|i| (i as f64, 2.0 * i as f64 - 1.0)).collect();
        let f = fit_line(&pts).unwrap();
        assert!((f.slope - 2.0).abs() < 1e-12 && f.residual_rms < 1e-12);
        assert!(fit_line(&pts[..1]).is_none());
    }
}
