//! Diagonal flows `g_t` and contraction rates along orbits.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{delta_search, DeltaBudget, LatticeDescription};
use crate::sarith::{PExact, PadicPoint, Prime};

/// A flow time `t = (t_0, …, t_n) ∈ Z_+^{n+1}`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FlowTime(Vec<u32>);

impl FlowTime {
    pub fn new(t: Vec<u32>) -> Result<Self> {
        if t.is_empty() {
            return Err(Error::InvalidInput(
                "flow time needs at least one coordinate".into(),
            ));
        }
        Ok(FlowTime(t))
    }

    pub fn zero(n: usize) -> Self {
        FlowTime(vec![0; n + 1])
    }

    pub fn coords(&self) -> &[u32] {
        &self.0
    }

    pub fn get(&self, i: usize) -> u32 {
        self.0[i]
    }

    /// Number of coordinates, `n + 1`.
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// `t = Σ t_i`.
    pub fn total(&self) -> u32 {
        self.0.iter().sum()
    }

    pub fn max_coord(&self) -> u32 {
        self.0.iter().copied().max().unwrap_or(0)
    }
}

/// The balanced time `(s, …, s)` with `n + 1` entries.
pub fn balanced_time(s: u32, n: usize) -> Result<FlowTime> {
    if s == 0 {
        return Err(Error::OutOfRange("balanced time needs s >= 1".into()));
    }
    FlowTime::new(vec![s; n + 1])
}

/// One orbit sample: δ at time `t`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub time: FlowTime,
    /// Upper bound for δ (exact when `exact`).
    pub delta: BigRational,
    pub exact: bool,
    pub witness: Vec<PExact>,
}

impl TrajectoryPoint {
    /// `-log_p δ / t` for display.
    pub fn rate_f64(&self, p: Prime) -> f64 {
        let t = self.time.total() as f64;
        if self.delta.is_zero() {
            return f64::INFINITY;
        }
        -log_p_f64(p, &self.delta) / t
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trajectory {
    pub points: Vec<TrajectoryPoint>,
}

/// γ̂ with the data it was read off.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GammaEstimate {
    /// Exact lower-bound style estimate: the best rate on the tail window,
    /// rounded down to the grid `1/den`.
    pub gamma: BigRational,
    pub grid_den: u32,
    pub tail_start: usize,
    pub trajectory: Trajectory,
}

impl GammaEstimate {
    pub fn gamma_f64(&self) -> f64 {
        self.gamma.to_f64().unwrap_or(f64::NAN)
    }
}

pub(crate) fn log_p_f64(p: Prime, x: &BigRational) -> f64 {
    let (n, d) = (x.numer(), x.denom());
    (big_ln(n) - big_ln(d)) / (p.get() as f64).ln()
}

fn big_ln(x: &BigInt) -> f64 {
    let bits = x.bits();
    if bits < 1000 {
        return x.to_f64().unwrap().abs().ln();
    }
    let shift = bits - 900;
    let top: BigInt = x.abs() >> shift;
    top.to_f64().unwrap().ln() + shift as f64 * std::f64::consts::LN_2
}

/// Largest `c` on the grid `1/den` with `δ <= p^{-c t}`.
pub fn rate_on_grid(p: Prime, delta: &BigRational, t: u32, den: u32) -> BigRational {
    if t == 0 {
        return BigRational::zero();
    }
    if delta.is_zero() {
        return BigRational::new(BigInt::from(den), BigInt::from(den));
    }
    // δ ≤ p^{-k t / den}  ⇔  δ^den ≤ p^{-k t}; monotone in k
    let dp = num_traits::pow(delta.clone(), den as usize);
    let ok = |k: i64| dp <= p.rpow(-k * t as i64);
    // bracket: ok(lo) and !ok(hi)
    let (mut lo, mut hi) = if ok(0) { (0i64, 1i64) } else { (-1i64, 0i64) };
    while ok(hi) {
        lo = hi;
        hi *= 2;
    }
    while !ok(lo) {
        hi = lo;
        lo *= 2;
    }
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if ok(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    BigRational::new(BigInt::from(lo), BigInt::from(den))
}

/// δ along balanced times `s = 1..=T`; γ̂ is the best rate on the last half.
pub fn gamma_estimate(y: &PadicPoint, big_t: u32, budget: &DeltaBudget) -> Result<GammaEstimate> {
    if big_t == 0 {
        return Err(Error::OutOfRange("T must be >= 1".into()));
    }
    let n = y.dim();
    let p = y.prime();
    let need = big_t * (n as u32 + 1);
    if let Some(nd) = y.precision().digits() {
        if nd < need {
            return Err(Error::PrecisionExhausted {
                needed: need,
                available: nd,
            });
        }
    }
    let mut points = Vec::with_capacity(big_t as usize);
    for s in 1..=big_t {
        let time = balanced_time(s, n)?;
        let l = LatticeDescription::new(y.clone(), time.clone())?;
        let cert = delta_search(&l, budget, None)?;
        let delta = cert
            .upper(p)
            .ok_or_else(|| Error::SearchFailed("empty δ search".into()))?;
        points.push(TrajectoryPoint {
            time,
            exact: cert.is_exact(p),
            witness: cert.minimizer.clone().unwrap_or_default(),
            delta,
        });
    }
    let tail_start = points.len() / 2;
    let den = GAMMA_GRID;
    let gamma = points[tail_start..]
        .iter()
        .map(|pt| rate_on_grid(p, &pt.delta, pt.time.total(), den))
        .max()
        .unwrap();
    Ok(GammaEstimate {
        gamma,
        grid_den: den,
        tail_start,
        trajectory: Trajectory { points },
    })
}

/// Grid for reported rates.
pub const GAMMA_GRID: u32 = 1000;

/// A contraction event `δ(g_t u_y D^{n+1}) <= p^{-γ t}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContractionEvent {
    pub time: FlowTime,
    pub witness: Vec<PExact>,
    pub content: BigRational,
}

/// Evidence for the flow-side VWMA condition up to total time `T`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowConditionReport {
    pub gamma: BigRational,
    pub max_total: u32,
    pub times_checked: usize,
    pub events: Vec<ContractionEvent>,
}

impl FlowConditionReport {
    pub fn holds(&self) -> bool {
        !self.events.is_empty()
    }
}

/// All `t ∈ Z_+^{n+1}` with `1 <= Σ t_i <= T`, in graded lexicographic order.
pub fn flow_times_up_to(n: usize, big_t: u32) -> Vec<FlowTime> {
    fn rec(i: usize, m: usize, left: u32, cur: &mut Vec<u32>, out: &mut Vec<FlowTime>) {
        if i == m - 1 {
            cur.push(left);
            out.push(FlowTime(cur.clone()));
            cur.pop();
            return;
        }
        for v in (0..=left).rev() {
            cur.push(v);
            rec(i + 1, m, left - v, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    for tot in 1..=big_t {
        rec(0, n + 1, tot, &mut Vec::new(), &mut out);
    }
    out
}

/// Search flow times with `t <= T` for events `δ <= p^{-γ t}`.
///
/// Coordinates `1..n` are not symmetric once `y` is fixed, so every
/// composition is visited.
pub fn vwma_flow_condition(
    y: &PadicPoint,
    big_t: u32,
    gamma: &BigRational,
    budget: &DeltaBudget,
) -> Result<FlowConditionReport> {
    let n = y.dim();
    let p = y.prime();
    let lim = BigRational::new(BigInt::one(), BigInt::from(n as u64 + 1));
    if !gamma.is_positive() || *gamma >= lim {
        return Err(Error::OutOfRange(format!(
            "γ = {gamma} not in (0, 1/(n+1))"
        )));
    }
    let mut events = Vec::new();
    let times = flow_times_up_to(n, big_t);
    for time in &times {
        if let Some(nd) = y.precision().digits() {
            if time.total() > nd {
                return Err(Error::PrecisionExhausted {
                    needed: time.total(),
                    available: nd,
                });
            }
        }
        let l = LatticeDescription::new(y.clone(), time.clone())?;
        let r = -(gamma * BigInt::from(time.total()));
        // p^{ceil r} >= p^r keeps every event inside the search box
        let thr = p.rpow(r.ceil().to_integer().to_i64().unwrap_or(0));
        let cert = delta_search(&l, budget, Some(&thr))?;
        if let (Some(w), Some(c)) = (&cert.minimizer, &cert.content) {
            if c.le_p_power(p, &r) {
                events.push(ContractionEvent {
                    time: time.clone(),
                    witness: w.clone(),
                    content: c.upper(p),
                });
            }
        }
    }
    Ok(FlowConditionReport {
        gamma: gamma.clone(),
        max_total: big_t,
        times_checked: times.len(),
        events,
    })
}
