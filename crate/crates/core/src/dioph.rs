//! Diophantine exponents of `y ∈ Q_p^n`, witness searches, and the two-way
//! translation between multiplicative witnesses and contraction events.
//!
//! Exponents are logarithms of exact rationals, `ln(num)/ln(den) + offset`;
//! every comparison against a rational is decided by exact powering.

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flows::{rate_on_grid, FlowTime};
use crate::lattice::{apply_flow, LatticeDescription};
use crate::sarith::{dot_plus, CertifiedNorm, PExact, PNorm, PadicPoint, Prime};
use crate::svec::content;

/// Grid on which exponent estimates are reported (`k / GRID`).
pub const GRID: u32 = 1000;

/// `ln(num)/ln(den) + offset`, or `+∞` for exact-zero witnesses.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Exponent {
    Infinite,
    Finite {
        num: BigRational,
        den: BigRational,
        offset: BigRational,
    },
}

fn rpow(x: &BigRational, k: i64) -> BigRational {
    if k >= 0 {
        num_traits::pow(x.clone(), k as usize)
    } else {
        num_traits::pow(x.recip(), (-k) as usize)
    }
}

fn ln_rational(x: &BigRational) -> f64 {
    ln_big(x.numer()) - ln_big(x.denom())
}

fn ln_big(x: &BigInt) -> f64 {
    let bits = x.bits();
    if bits < 1000 {
        return x.to_f64().unwrap().abs().ln();
    }
    let shift = bits - 900;
    let top: BigInt = x.abs() >> shift;
    top.to_f64().unwrap().ln() + shift as f64 * std::f64::consts::LN_2
}

impl Exponent {
    /// `ln(num)/ln(den) + offset`; `den > 1`, `num > 0`.
    pub fn log_ratio(num: BigRational, den: BigRational, offset: BigRational) -> Result<Self> {
        if den <= BigRational::one() || !num.is_positive() {
            return Err(Error::OutOfRange(
                "log ratio needs num > 0 and den > 1".into(),
            ));
        }
        Ok(Exponent::Finite { num, den, offset })
    }

    pub fn is_infinite(&self) -> bool {
        matches!(self, Exponent::Infinite)
    }

    /// Exact test `self >= r`.
    pub fn ge(&self, r: &BigRational) -> bool {
        match self {
            Exponent::Infinite => true,
            Exponent::Finite { num, den, offset } => {
                // ln num / ln den >= s = a/b  ⇔  num^b >= den^a
                let s = r - offset;
                let a = s.numer().to_i64().expect("exponent numerator");
                let b = s.denom().to_i64().expect("exponent denominator");
                rpow(num, b) >= rpow(den, a)
            }
        }
    }

    /// Largest `k/g` with `self >= k/g`; `None` for `+∞` and for the
    /// vacuous placeholder.
    pub fn floor_on_grid(&self, g: u32) -> Option<BigRational> {
        if self.is_infinite() || self.is_vacuous() {
            return None;
        }
        let g64 = g as i64;
        let at = |k: i64| BigRational::new(BigInt::from(k), BigInt::from(g64));
        let mut k = (self.to_f64() * g as f64).floor() as i64;
        while !self.ge(&at(k)) {
            k -= 1;
        }
        while self.ge(&at(k + 1)) {
            k += 1;
        }
        Some(at(k))
    }

    /// Display only.
    pub fn to_f64(&self) -> f64 {
        match self {
            Exponent::Infinite => f64::INFINITY,
            Exponent::Finite { num, den, offset } => {
                ln_rational(num) / ln_rational(den) + offset.to_f64().unwrap_or(f64::NAN)
            }
        }
    }
}

/// `|x|_+`: `|x|_∞` if `x ≠ 0`, else 1.
pub fn abs_plus(x: &PExact) -> BigRational {
    if x.is_zero() {
        BigRational::one()
    } else {
        x.norm_inf()
    }
}

/// `Π_+(q̃) = Π_i |q_i|_+`.
pub fn pi_plus(q: &[PExact]) -> BigRational {
    q.iter()
        .map(abs_plus)
        .fold(BigRational::one(), |a, b| a * b)
}

/// Which inequality a witness is measured against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExponentKind {
    /// `|q0 + q·y|_p <= ‖q̃‖_∞^{-v}`
    W,
    /// `|q0 + q·y|_p < (‖q‖_p ‖q̃‖_∞)^{-v} ‖q̃‖_∞^{-1}`
    Wp,
    /// `|q0 + q·y|_p <= Π_+(q̃)^{-(1+ε)}`
    Multiplicative,
    Gamma,
}

impl ExponentKind {
    /// Anchor naming the defining inequality, written into reports.
    pub fn anchor(self) -> &'static str {
        match self {
            ExponentKind::W => "w(y): |q0+q.y|_p <= ||q~||_inf^-v",
            ExponentKind::Wp => "w_p(y): |q.y+q0|_p < (||q||_p ||q~||_inf)^-v ||q~||_inf^-1",
            ExponentKind::Multiplicative => "VWMA: |q0+q.y|_p <= Pi_+(q~)^-(1+eps)",
            ExponentKind::Gamma => "gamma(y): delta(g_t u_y D^{n+1}) <= p^-ct infinitely often",
        }
    }
}

/// An approximation vector with every quantity its exponent depends on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Witness {
    pub q: Vec<PExact>,
    pub integral: bool,
    pub sup_norm: BigRational,
    pub q_pnorm: PNorm,
    pub pi_plus: BigRational,
    pub residual: CertifiedNorm,
    pub kind: ExponentKind,
    pub exponent: Exponent,
}

impl Witness {
    /// Measure `q̃ = (q0, q)` against `y` for the given inequality.
    pub fn measure(y: &PadicPoint, q: Vec<PExact>, kind: ExponentKind) -> Result<Self> {
        if q.len() != y.dim() + 1 {
            return Err(Error::DimensionMismatch {
                expected: y.dim() + 1,
                found: q.len(),
            });
        }
        if q.iter().all(PExact::is_zero) {
            return Err(Error::InvalidInput("witness must be nonzero".into()));
        }
        let residual = dot_plus(&q[1..], y, &q[0])?;
        let sup_norm = q.iter().map(PExact::norm_inf).max().unwrap();
        let q_pnorm = q[1..]
            .iter()
            .map(PExact::norm_p)
            .max()
            .unwrap_or(PNorm::ZERO);
        let pi = pi_plus(&q);
        let integral = q.iter().all(PExact::is_integer);
        let exponent = exponent_of(y.prime(), kind, &residual, &sup_norm, q_pnorm, &pi)?;
        Ok(Witness {
            q,
            integral,
            sup_norm,
            q_pnorm,
            pi_plus: pi,
            residual,
            kind,
            exponent,
        })
    }

    /// Recompute the exponent from the attached quantities.
    pub fn recheck(&self, p: Prime) -> bool {
        exponent_of(
            p,
            self.kind,
            &self.residual,
            &self.sup_norm,
            self.q_pnorm,
            &self.pi_plus,
        )
        .is_ok_and(|e| e == self.exponent)
            && self.integral == self.q.iter().all(PExact::is_integer)
    }

    /// Residual certified and exactly zero.
    pub fn is_exact_zero(&self) -> bool {
        self.residual.certified && self.residual.value.is_zero()
    }

    /// The residual reached the precision floor.
    pub fn at_floor(&self) -> bool {
        !self.residual.certified
    }
}

/// Exponent implied by a (bound on the) residual. Uncertified residuals use
/// their bound, which still yields a valid lower estimate.
fn exponent_of(
    p: Prime,
    kind: ExponentKind,
    residual: &CertifiedNorm,
    sup: &BigRational,
    qp: PNorm,
    pi: &BigRational,
) -> Result<Exponent> {
    let Some(a) = residual.upper().exponent().map(|e| -e) else {
        return Ok(Exponent::Infinite);
    };
    let pa = p.rpow(a);
    let zero = BigRational::zero();
    let out = match kind {
        ExponentKind::W => Exponent::log_ratio(pa, sup.clone(), zero),
        ExponentKind::Wp => {
            let x = qp.to_rational(p) * sup;
            Exponent::log_ratio(pa / sup, x, zero)
        }
        ExponentKind::Multiplicative => Exponent::log_ratio(pa, pi.clone(), -BigRational::one()),
        ExponentKind::Gamma => Err(Error::InvalidInput("γ has no witness inequality".into())),
    };
    // size 1 makes the inequality vacuous: no exponent
    out.or_else(|e| match e {
        Error::OutOfRange(_) => Ok(Exponent::Finite {
            num: BigRational::one(),
            den: BigRational::one(),
            offset: BigRational::zero(),
        }),
        other => Err(other),
    })
}

impl Exponent {
    /// Witnesses of size 1 carry this placeholder (no information).
    pub fn is_vacuous(&self) -> bool {
        matches!(self, Exponent::Finite { den, .. } if den.is_one())
    }
}

// ---------------------------------------------------------------------------
// exact lattice reduction, used to find best approximations

fn gram_schmidt(b: &[Vec<BigInt>]) -> (Vec<BigRational>, Vec<Vec<BigRational>>) {
    let m = b.len();
    let dim = b[0].len();
    let mut bstar: Vec<Vec<BigRational>> = Vec::with_capacity(m);
    let mut bn = Vec::with_capacity(m);
    let mut mu = vec![vec![BigRational::zero(); m]; m];
    for i in 0..m {
        let mut v: Vec<BigRational> = b[i]
            .iter()
            .map(|x| BigRational::from_integer(x.clone()))
            .collect();
        for j in 0..i {
            let dot: BigRational = b[i]
                .iter()
                .zip(&bstar[j])
                .map(|(x, y)| BigRational::from_integer(x.clone()) * y)
                .fold(BigRational::zero(), |a, c| a + c);
            mu[i][j] = dot / &bn[j];
            for k in 0..dim {
                let d = &mu[i][j] * &bstar[j][k];
                v[k] -= d;
            }
        }
        let n2 = v
            .iter()
            .map(|x| x * x)
            .fold(BigRational::zero(), |a, c| a + c);
        bn.push(n2);
        bstar.push(v);
    }
    (bn, mu)
}

fn round_half(x: &BigRational) -> BigInt {
    (x + BigRational::new(1.into(), 2.into()))
        .floor()
        .to_integer()
}

/// LLL reduction with `δ = 3/4`, exact.
pub fn lll(mut b: Vec<Vec<BigInt>>) -> Vec<Vec<BigInt>> {
    let m = b.len();
    if m < 2 {
        return b;
    }
    let delta = BigRational::new(3.into(), 4.into());
    let mut k = 1;
    let (mut bn, mut mu) = gram_schmidt(&b);
    while k < m {
        for j in (0..k).rev() {
            let q = round_half(&mu[k][j]);
            if !q.is_zero() {
                let bj = b[j].clone();
                for (x, y) in b[k].iter_mut().zip(&bj) {
                    *x -= &q * y;
                }
                let r = gram_schmidt(&b);
                bn = r.0;
                mu = r.1;
            }
        }
        let lhs = &bn[k];
        let rhs = (&delta - &mu[k][k - 1] * &mu[k][k - 1]) * &bn[k - 1];
        if *lhs >= rhs {
            k += 1;
        } else {
            b.swap(k, k - 1);
            let r = gram_schmidt(&b);
            bn = r.0;
            mu = r.1;
            k = (k - 1).max(1);
        }
    }
    b
}

fn sup_of(v: &[BigInt]) -> BigInt {
    v.iter().map(|x| x.abs()).max().unwrap_or_default()
}

fn canonical_sign(mut v: Vec<BigInt>) -> Vec<BigInt> {
    if v.iter()
        .find(|x| !x.is_zero())
        .is_some_and(|x| x.is_negative())
    {
        for x in v.iter_mut() {
            *x = -x.clone();
        }
    }
    v
}

/// Shortest nonzero vector in the sup norm (ties: lexicographically least
/// after making the first nonzero entry positive).
pub fn shortest_sup_vector(basis: Vec<Vec<BigInt>>) -> Vec<BigInt> {
    let b = lll(basis);
    let m = b.len();
    let dim = b[0].len();
    let mut best = b
        .iter()
        .map(|v| canonical_sign(v.clone()))
        .min_by(|x, y| sup_of(x).cmp(&sup_of(y)).then_with(|| x.cmp(y)))
        .unwrap();
    let (bn, mu) = gram_schmidt(&b);
    let mut x = vec![BigInt::zero(); m];
    fp_rec(&b, &bn, &mu, m, dim, &mut x, BigRational::zero(), &mut best);
    best
}

#[allow(clippy::too_many_arguments)]
fn fp_rec(
    b: &[Vec<BigInt>],
    bn: &[BigRational],
    mu: &[Vec<BigRational>],
    level: usize,
    dim: usize,
    x: &mut Vec<BigInt>,
    partial: BigRational,
    best: &mut Vec<BigInt>,
) {
    let h = sup_of(best);
    let r2 = BigRational::from_integer(&h * &h * BigInt::from(dim as u64));
    if level == 0 {
        if x.iter().all(Zero::is_zero) {
            return;
        }
        let mut v = vec![BigInt::zero(); dim];
        for (xi, bi) in x.iter().zip(b) {
            for (vk, bk) in v.iter_mut().zip(bi) {
                *vk += xi * bk;
            }
        }
        let v = canonical_sign(v);
        let (hv, hb) = (sup_of(&v), sup_of(best));
        if hv < hb || (hv == hb && v < *best) {
            *best = v;
        }
        return;
    }
    let i = level - 1;
    let rem = &r2 - &partial;
    if rem.is_negative() {
        return;
    }
    let mut c = BigRational::zero();
    for j in i + 1..b.len() {
        c -= &mu[j][i] * BigRational::from_integer(x[j].clone());
    }
    // |x_i - c| <= sqrt(rem / B_i)
    let s = crate::sarith::floor_root(&(&rem / &bn[i]), 2) + BigInt::one();
    let lo = (&c - BigRational::from_integer(s.clone()))
        .ceil()
        .to_integer();
    let hi = (&c + BigRational::from_integer(s)).floor().to_integer();
    let mut xi = lo;
    while xi <= hi {
        let d = BigRational::from_integer(xi.clone()) - &c;
        let np = &partial + &d * &d * &bn[i];
        let h = sup_of(best);
        let r2 = BigRational::from_integer(&h * &h * BigInt::from(dim as u64));
        if np <= r2 {
            x[i] = xi.clone();
            fp_rec(b, bn, mu, i, dim, x, np, best);
        }
        xi += 1;
    }
    x[i] = BigInt::zero();
}

// ---------------------------------------------------------------------------
// exponent searches

/// Bounds for the `w` / `w_p` searches.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WSearchConfig {
    /// `‖q̃‖_∞ <= q_max`.
    pub q_max: BigInt,
    /// Rungs below this size are listed but not used in the estimate.
    pub h_min: BigInt,
    /// Largest congruence level for exact points.
    pub k_max: u32,
}

impl WSearchConfig {
    /// Estimate over the top scales `[√Q, Q]`.
    pub fn new(q_max: BigInt) -> Self {
        let h_min = q_max.sqrt().max(BigInt::from(2));
        WSearchConfig {
            q_max,
            h_min,
            k_max: 4096,
        }
    }
}

/// One rung of a witness ladder.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rung {
    /// Congruence level the witness was found at.
    pub level: u32,
    /// `floor(log2 size)`.
    pub scale: u64,
    pub witness: Witness,
    /// Grid floor of the exponent (`None` for `+∞` or vacuous rungs).
    pub exponent_floor: Option<BigRational>,
    pub used: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Estimate {
    Undefined,
    Infinite,
    Value(BigRational),
}

impl Estimate {
    pub fn value(&self) -> Option<&BigRational> {
        match self {
            Estimate::Value(v) => Some(v),
            _ => None,
        }
    }

    pub fn to_f64(&self) -> f64 {
        match self {
            Estimate::Undefined => f64::NAN,
            Estimate::Infinite => f64::INFINITY,
            Estimate::Value(v) => v.to_f64().unwrap_or(f64::NAN),
        }
    }

    /// Provably `>= r`.
    pub fn at_least(&self, r: &BigRational) -> bool {
        match self {
            Estimate::Undefined => false,
            Estimate::Infinite => true,
            Estimate::Value(v) => v >= r,
        }
    }
}

/// A lower-bound style exponent estimate and the ladder it was read from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExponentReport {
    pub kind: ExponentKind,
    pub estimate: Estimate,
    pub ladder: Vec<Rung>,
    pub bounds: WSearchConfig,
    pub grid: u32,
}

impl ExponentReport {
    pub fn anchor(&self) -> &'static str {
        self.kind.anchor()
    }
}

fn estimate_from(
    ladder: &mut [Rung],
    size_of: impl Fn(&Witness) -> BigRational,
    h_min: &BigInt,
) -> Estimate {
    let hm = BigRational::from_integer(h_min.clone());
    let mut best: Option<BigRational> = None;
    let mut best_idx = None;
    for (i, r) in ladder.iter().enumerate() {
        if r.witness.is_exact_zero() {
            for r in ladder.iter_mut() {
                r.used = false;
            }
            ladder[i].used = true;
            return Estimate::Infinite;
        }
        if r.witness.at_floor() || size_of(&r.witness) < hm {
            continue;
        }
        if let Some(f) = &r.exponent_floor {
            if best.as_ref().is_none_or(|b| f > b) {
                best = Some(f.clone());
                best_idx = Some(i);
            }
        }
    }
    match best_idx {
        Some(i) => {
            ladder[i].used = true;
            Estimate::Value(best.unwrap())
        }
        None => Estimate::Undefined,
    }
}

/// Basis of `{q̃ ∈ Z^{n+1} : q0 + q·y ≡ 0 (mod p^k)}` for `y ∈ Z_p^n`.
fn congruence_basis(p: Prime, y: &PadicPoint, k: u32) -> Vec<Vec<BigInt>> {
    let m = y.dim() + 1;
    let pk = p.pow(k);
    let mut rows = Vec::with_capacity(m);
    let mut first = vec![BigInt::zero(); m];
    first[0] = pk.clone();
    rows.push(first);
    for (i, yi) in y.coords().iter().enumerate() {
        let mut r = vec![BigInt::zero(); m];
        r[0] = -(yi.mantissa().mod_floor(&pk));
        r[i + 1] = BigInt::one();
        rows.push(r);
    }
    rows
}

fn to_pexact(p: Prime, v: &[BigInt]) -> Vec<PExact> {
    v.iter().map(|x| PExact::from_int(p, x.clone())).collect()
}

/// Best integer approximations by congruence level: for each level `k` the
/// sup-shortest `q̃` with `|q0 + q·y|_p <= p^{-k}`, until the size exceeds `Q`.
fn best_approximations(y: &PadicPoint, cfg: &WSearchConfig) -> Result<Vec<(u32, Vec<BigInt>)>> {
    let p = y.prime();
    if y.denominator_exp() != 0 {
        return Err(Error::InvalidInput(
            "exponent searches need y in Z_p^n".into(),
        ));
    }
    let k_lim = y.precision().digits().unwrap_or(cfg.k_max).min(cfg.k_max);
    let mut out: Vec<(u32, Vec<BigInt>)> = Vec::new();
    let mut k = 1;
    while k <= k_lim {
        let v = shortest_sup_vector(congruence_basis(p, y, k));
        if sup_of(&v) > cfg.q_max {
            break;
        }
        let q = to_pexact(p, &v);
        let res = dot_plus(&q[1..], y, &q[0])?;
        out.push((k, v));
        match res.value.exponent() {
            Some(e) if res.certified => k = (-e) as u32 + 1,
            // exact zero or precision floor: nothing deeper to see
            _ => break,
        }
    }
    Ok(out)
}

fn ladder_for(y: &PadicPoint, cfg: &WSearchConfig, kind: ExponentKind) -> Result<Vec<Rung>> {
    let p = y.prime();
    best_approximations(y, cfg)?
        .into_iter()
        .map(|(level, v)| {
            let w = Witness::measure(y, to_pexact(p, &v), kind)?;
            let scale = sup_of(&v).bits().saturating_sub(1);
            let exponent_floor = w.exponent.floor_on_grid(GRID);
            Ok(Rung {
                level,
                scale,
                witness: w,
                exponent_floor,
                used: false,
            })
        })
        .collect()
}

/// Estimate `w(y)` from best approximations with `‖q̃‖_∞ <= Q`.
pub fn w_search(y: &PadicPoint, cfg: &WSearchConfig) -> Result<ExponentReport> {
    let mut ladder = ladder_for(y, cfg, ExponentKind::W)?;
    let estimate = estimate_from(&mut ladder, |w| w.sup_norm.clone(), &cfg.h_min);
    Ok(ExponentReport {
        kind: ExponentKind::W,
        estimate,
        ladder,
        bounds: cfg.clone(),
        grid: GRID,
    })
}

/// Estimate `w_p(y)`. The defining inequality is invariant under `q̃ ↦ p^k q̃`,
/// so integer witnesses are complete; the scale is `‖q‖_p ‖q̃‖_∞`.
pub fn wp_search(y: &PadicPoint, cfg: &WSearchConfig) -> Result<ExponentReport> {
    let mut ladder = ladder_for(y, cfg, ExponentKind::Wp)?;
    let p = y.prime();
    let estimate = estimate_from(
        &mut ladder,
        move |w| w.q_pnorm.to_rational(p) * &w.sup_norm,
        &cfg.h_min,
    );
    Ok(ExponentReport {
        kind: ExponentKind::Wp,
        estimate,
        ladder,
        bounds: cfg.clone(),
        grid: GRID,
    })
}

/// Brute-force `w` ladder over all `q̃` with `‖q̃‖_∞ <= Q` (test oracle; tiny Q).
pub fn w_brute_force(y: &PadicPoint, q_max: i64, h_min: i64) -> Result<Estimate> {
    let p = y.prime();
    let m = y.dim() + 1;
    let mut best: Option<BigRational> = None;
    let mut x = vec![-q_max; m];
    loop {
        if x.iter().any(|&v| v != 0) && x.iter().map(|v| v.abs()).max().unwrap() >= h_min {
            let w = Witness::measure(
                y,
                x.iter().map(|&v| PExact::from_int(p, v)).collect(),
                ExponentKind::W,
            )?;
            if w.is_exact_zero() {
                return Ok(Estimate::Infinite);
            }
            if !w.at_floor() && !w.exponent.is_vacuous() {
                let f = w.exponent.floor_on_grid(GRID).unwrap();
                if best.as_ref().is_none_or(|b| &f > b) {
                    best = Some(f);
                }
            }
        }
        let mut i = 0;
        loop {
            if i == m {
                return Ok(best.map_or(Estimate::Undefined, Estimate::Value));
            }
            if x[i] < q_max {
                x[i] += 1;
                break;
            }
            x[i] = -q_max;
            i += 1;
        }
    }
}

/// `w_p = (n(1+γ) + γ) / (1 − (n+1)γ)`.
pub fn gamma_to_wp(gamma: &BigRational, n: usize) -> Result<BigRational> {
    let n1 = BigRational::from_integer(BigInt::from(n as u64 + 1));
    let nn = BigRational::from_integer(BigInt::from(n as u64));
    let one = BigRational::one();
    if gamma.is_negative() || gamma * &n1 >= one {
        return Err(Error::OutOfRange(format!(
            "γ = {gamma} not in [0, 1/(n+1))"
        )));
    }
    Ok((&nn * (&one + gamma) + gamma) / (&one - &n1 * gamma))
}

// ---------------------------------------------------------------------------
// multiplicative witnesses

/// `|r|_p <= Π^{-(1+ε)}` for the residual bound `p^{-a}` (`a = None`: zero).
pub fn vwma_inequality_holds(
    p: Prime,
    a: Option<i64>,
    pi: &BigRational,
    eps: &BigRational,
) -> bool {
    let Some(a) = a else { return true };
    // Π^{1+ε} <= p^a  ⇔  Π^{d+n} <= p^{a d}
    let (n, d) = (eps.numer().to_i64().unwrap(), eps.denom().to_i64().unwrap());
    rpow(pi, d + n) <= p.rpow(a * d)
}

fn residual_exponent(w: &Witness) -> Option<i64> {
    w.residual.upper().exponent().map(|e| -e)
}

/// Integer witnesses with `Π_+(q̃) <= bound` and `ε > 0`, sorted by `Π_+`.
///
/// For each `q` the companion `q0` runs over the least residues of `-q·y`
/// modulo increasing powers of `p`.
pub fn vwma_search(y: &PadicPoint, bound: u64) -> Result<Vec<Witness>> {
    let p = y.prime();
    if y.denominator_exp() != 0 {
        return Err(Error::InvalidInput(
            "exponent searches need y in Z_p^n".into(),
        ));
    }
    let n = y.dim();
    let prec = y.precision().digits();
    let modulus = prec.map(|nd| p.pow(nd));
    let ys: Vec<BigInt> = y.coords().iter().map(|c| c.mantissa().clone()).collect();
    let mut out = Vec::new();
    let mut q = vec![0i64; n];
    vwma_rec(
        p,
        y,
        &ys,
        modulus.as_ref(),
        bound,
        0,
        1,
        true,
        &mut q,
        &mut out,
    )?;
    out.sort_by(|a: &Witness, b: &Witness| {
        a.pi_plus.cmp(&b.pi_plus).then_with(|| {
            let ka: Vec<BigRational> = a.q.iter().map(PExact::to_rational).collect();
            let kb: Vec<BigRational> = b.q.iter().map(PExact::to_rational).collect();
            ka.cmp(&kb)
        })
    });
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn vwma_rec(
    p: Prime,
    y: &PadicPoint,
    ys: &[BigInt],
    modulus: Option<&BigInt>,
    bound: u64,
    i: usize,
    prod: u64,
    leading: bool,
    q: &mut Vec<i64>,
    out: &mut Vec<Witness>,
) -> Result<()> {
    if i == q.len() {
        if leading {
            return Ok(());
        }
        return vwma_leaf(p, y, ys, modulus, bound / prod, q, out);
    }
    let room = bound / prod;
    let lo: i64 = if leading { 0 } else { -(room as i64) };
    for v in lo..=room as i64 {
        let f = if v == 0 { 1 } else { v.unsigned_abs() };
        if prod * f > bound {
            continue;
        }
        q[i] = v;
        vwma_rec(
            p,
            y,
            ys,
            modulus,
            bound,
            i + 1,
            prod * f,
            leading && v == 0,
            q,
            out,
        )?;
    }
    q[i] = 0;
    Ok(())
}

fn vwma_leaf(
    p: Prime,
    y: &PadicPoint,
    ys: &[BigInt],
    modulus: Option<&BigInt>,
    room0: u64,
    q: &[i64],
    out: &mut Vec<Witness>,
) -> Result<()> {
    let mut res = BigInt::zero();
    for (qi, yi) in q.iter().zip(ys) {
        res += BigInt::from(*qi) * yi;
    }
    if let Some(m) = modulus {
        res = res.mod_floor(m);
    }
    let piq: u64 = q
        .iter()
        .map(|&x| if x == 0 { 1 } else { x.unsigned_abs() })
        .product();
    let room = BigInt::from(room0);
    let kmax = y.precision().digits().unwrap_or(4096);
    let mut k = 1u32;
    let mut last: Option<BigInt> = None;
    while k <= kmax {
        let pk = p.pow(k);
        let mut c = (-&res).mod_floor(&pk);
        if &c * 2 > pk {
            c -= &pk;
        }
        if c.abs() > room {
            break;
        }
        let s = &c + &res;
        let s = match modulus {
            Some(m) => s.mod_floor(m),
            None => s,
        };
        let val = if s.is_zero() {
            None
        } else {
            p.valuation(&s).map(|v| v as i64)
        };
        if last.as_ref() != Some(&c) {
            let pi = BigInt::from(piq) * c.abs().max(BigInt::one());
            let keep = match val {
                None => true,
                Some(a) => pi > BigInt::one() && p.pow(a as u32) > pi,
            };
            if keep {
                let mut v = vec![PExact::from_int(p, c.clone())];
                v.extend(q.iter().map(|&x| PExact::from_int(p, x)));
                let w = Witness::measure(y, v, ExponentKind::Multiplicative)?;
                if !w.exponent.is_vacuous() {
                    out.push(w);
                }
            }
            last = Some(c);
        }
        match val {
            Some(a) if (a as u32) < kmax => k = a as u32 + 1,
            _ => break,
        }
    }
    Ok(())
}

/// `log_p(base) + frac · log_p(pi)` kept symbolic.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogForm {
    pub base: BigRational,
    pub pi: BigRational,
    pub frac: BigRational,
}

impl LogForm {
    /// `p^k <= base · pi^frac`.
    fn p_pow_le(&self, p: Prime, k: i64) -> bool {
        let (u, v) = (
            self.frac.numer().to_i64().unwrap(),
            self.frac.denom().to_i64().unwrap(),
        );
        p.rpow(k * v) <= rpow(&self.base, v) * rpow(&self.pi, u)
    }

    /// Exact `floor`.
    pub fn floor(&self, p: Prime) -> i64 {
        let mut k = self.to_f64(p).floor() as i64;
        while !self.p_pow_le(p, k) {
            k -= 1;
        }
        while self.p_pow_le(p, k + 1) {
            k += 1;
        }
        k
    }

    pub fn to_f64(&self, p: Prime) -> f64 {
        let lp = (p.get() as f64).ln();
        (ln_rational(&self.base) + self.frac.to_f64().unwrap() * ln_rational(&self.pi)) / lp
    }
}

/// Output of the witness → flow direction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowFromWitness {
    pub eps: BigRational,
    /// `γ = ε / ((n+1)(1+ε))`.
    pub gamma: BigRational,
    /// `t_i = log_p|q_i|_+ + (ε/(n+1)) log_p Π_+`.
    pub times: Vec<LogForm>,
    pub rounded: FlowTime,
    /// `c(g_[t] u_y q̃)` (upper bound if uncertified).
    pub content: BigRational,
    /// Largest `γ'` on the grid with `content <= p^{-γ' t'}`.
    pub gamma_rounded: BigRational,
    /// `content <= p · Π_+^{-ε/(n+1)}`: rounding cost at most one factor `p`.
    pub within_rounding_slack: bool,
    pub degenerate: bool,
}

/// Convert a multiplicative witness into a contraction event at rounded time.
pub fn vwma_to_flow(y: &PadicPoint, q: &[PExact], eps: &BigRational) -> Result<FlowFromWitness> {
    let p = y.prime();
    let n = y.dim();
    if !eps.is_positive() {
        return Err(Error::OutOfRange("ε must be positive".into()));
    }
    let w = Witness::measure(y, q.to_vec(), ExponentKind::Multiplicative)?;
    if !w.integral {
        return Err(Error::InvalidInput("witness must be integral".into()));
    }
    if !vwma_inequality_holds(p, residual_exponent(&w), &w.pi_plus, eps) {
        return Err(Error::VerificationFailed(
            "witness does not satisfy the ε-inequality".into(),
        ));
    }
    let n1 = BigRational::from_integer(BigInt::from(n as u64 + 1));
    let one = BigRational::one();
    let gamma = eps / (&n1 * (&one + eps));
    let frac = eps / &n1;
    let times: Vec<LogForm> = q
        .iter()
        .map(|qi| LogForm {
            base: abs_plus(qi),
            pi: w.pi_plus.clone(),
            frac: frac.clone(),
        })
        .collect();
    let rounded: Vec<u32> = times.iter().map(|t| t.floor(p).max(0) as u32).collect();
    let rounded = FlowTime::new(rounded)?;
    let l = LatticeDescription::new(y.clone(), rounded.clone())?;
    let c = content(&apply_flow(&l, q)?)?.upper(p);
    let tp = rounded.total();
    let degenerate_pi = w.pi_plus.is_one();
    let gamma_rounded = if tp == 0 {
        BigRational::zero()
    } else {
        rate_on_grid(p, &c, tp, GRID)
    };
    // c <= p Π^{-u/v}  ⇔  c^v Π^u <= p^v
    let (u, v) = (
        frac.numer().to_i64().unwrap(),
        frac.denom().to_i64().unwrap(),
    );
    let within = rpow(&c, v) * rpow(&w.pi_plus, u) <= p.rpow(v);
    let degenerate = degenerate_pi || tp == 0 || !gamma_rounded.is_positive();
    Ok(FlowFromWitness {
        eps: eps.clone(),
        gamma,
        times,
        rounded,
        content: c,
        gamma_rounded,
        within_rounding_slack: within,
        degenerate,
    })
}

/// `(exponent, ε)` of the forward direction for counts `k`, `m`:
/// `(mγ + m − kγ)/(m(1 − kγ))` and `γ(m − k + mk)/(m(1 − kγ))`.
pub fn forward_formulas(
    gamma: &BigRational,
    k: usize,
    m: usize,
) -> Option<(BigRational, BigRational)> {
    let kk = BigRational::from_integer(BigInt::from(k as u64));
    let mm = BigRational::from_integer(BigInt::from(m as u64));
    let one = BigRational::one();
    let d = &mm * (&one - &kk * gamma);
    if m == 0 || !d.is_positive() {
        return None;
    }
    let expo = (&mm * gamma + &mm - &kk * gamma) / &d;
    let eps = gamma * (&mm - &kk + &mm * &kk) / &d;
    Some((expo, eps))
}

/// Output of the event → witness direction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WitnessFromFlow {
    /// `q̃' = ‖q‖_p q̃`.
    pub scaled: Vec<PExact>,
    pub k: usize,
    pub m: usize,
    pub exponent_formula: Option<BigRational>,
    pub eps_formula: Option<BigRational>,
    /// Final integral witness (`|q'_0|_p q̃'` when `q'_0 ∉ Z`).
    pub witness: Witness,
    /// Grid floor of the achieved ε (`None`: exact zero, every ε works).
    pub eps_prime: Option<BigRational>,
    pub verified: bool,
}

/// Turn a contraction event `c(g_t u_y q̃) <= p^{-γt}` into an integral
/// multiplicative witness.
pub fn flow_to_vwma(
    y: &PadicPoint,
    time: &FlowTime,
    q: &[PExact],
    gamma: &BigRational,
) -> Result<WitnessFromFlow> {
    let p = y.prime();
    let n = y.dim();
    let n1 = BigRational::from_integer(BigInt::from(n as u64 + 1));
    if !gamma.is_positive() || gamma * &n1 >= BigRational::one() {
        return Err(Error::OutOfRange(format!(
            "γ = {gamma} not in (0, 1/(n+1))"
        )));
    }
    let l = LatticeDescription::new(y.clone(), time.clone())?;
    let c = content(&apply_flow(&l, q)?)?;
    let tt = BigRational::from_integer(BigInt::from(time.total()));
    if !c.le_p_power(p, &-(gamma * &tt)) {
        return Err(Error::VerificationFailed(
            "not a contraction event at this γ".into(),
        ));
    }
    let Some(e) = q[1..]
        .iter()
        .map(PExact::norm_p)
        .max()
        .and_then(PNorm::exponent)
    else {
        return Err(Error::VerificationFailed("event with q = 0".into()));
    };
    let scaled: Vec<PExact> = q.iter().map(|x| x.mul_p_pow(e)).collect();
    let gt = gamma * &tt;
    let k = time
        .coords()
        .iter()
        .filter(|&&ti| BigRational::from_integer(BigInt::from(ti)) >= gt)
        .count();
    let m = scaled.iter().filter(|x| !x.is_zero()).count();
    let (exponent_formula, eps_formula) = match forward_formulas(gamma, k, m) {
        Some((a, b)) => (Some(a), Some(b)),
        None => (None, None),
    };
    let integral: Vec<PExact> = if scaled[0].is_integer() {
        scaled.clone()
    } else {
        let e0 = scaled[0].exp() as i64;
        scaled.iter().map(|x| x.mul_p_pow(e0)).collect()
    };
    let witness = Witness::measure(y, integral, ExponentKind::Multiplicative)?;
    let a = residual_exponent(&witness);
    let (eps_prime, verified) = if a.is_none() {
        (None, true)
    } else if witness.exponent.is_vacuous() {
        // Π_+ = 1: the inequality reads |r|_p <= 1
        let f = eps_formula.clone().unwrap_or_else(BigRational::zero);
        let ok = vwma_inequality_holds(p, a, &witness.pi_plus, &f);
        (Some(f), ok)
    } else {
        let f = witness.exponent.floor_on_grid(GRID).unwrap();
        let ok = f.is_positive() && vwma_inequality_holds(p, a, &witness.pi_plus, &f);
        (Some(f), ok)
    };
    Ok(WitnessFromFlow {
        scaled,
        k,
        m,
        exponent_formula,
        eps_formula,
        witness,
        eps_prime,
        verified,
    })
}

// ---------------------------------------------------------------------------
// Liouville-type points

/// Exponent rule `a_k` of a p-adic Liouville series `Σ_k p^{a_k}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LiouvilleRule {
    /// `a_k = b^k`, `k >= 1`.
    Power(u32),
    /// `a_k = k!`, `k >= 2`.
    Factorial,
    /// The zero coordinate.
    Zero,
}

impl LiouvilleRule {
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "0" {
            return Ok(LiouvilleRule::Zero);
        }
        if s == "k!" {
            return Ok(LiouvilleRule::Factorial);
        }
        if let Some(b) = s.strip_suffix("^k") {
            let b: u32 = b
                .parse()
                .map_err(|_| Error::InvalidInput(format!("bad rule {s}")))?;
            if b >= 2 {
                return Ok(LiouvilleRule::Power(b));
            }
        }
        Err(Error::InvalidInput(format!(
            "unknown Liouville rule {s:?} (use b^k, k!, 0)"
        )))
    }

    /// Exponents `a_1 < a_2 < …` below `limit`.
    pub fn exponents(self, limit: u64) -> Vec<u64> {
        let mut out = Vec::new();
        match self {
            LiouvilleRule::Zero => {}
            LiouvilleRule::Power(b) => {
                let mut a = b as u64;
                while a < limit {
                    out.push(a);
                    a *= b as u64;
                }
            }
            LiouvilleRule::Factorial => {
                let (mut a, mut k) = (2u64, 3u64);
                while a < limit {
                    out.push(a);
                    a *= k;
                    k += 1;
                }
            }
        }
        out
    }
}

impl std::fmt::Display for LiouvilleRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LiouvilleRule::Power(b) => write!(f, "{b}^k"),
            LiouvilleRule::Factorial => write!(f, "k!"),
            LiouvilleRule::Zero => write!(f, "0"),
        }
    }
}

/// `y_i = Σ_k p^{a_k}` for rule `i`, truncated at precision `N`.
pub fn liouville_point(p: Prime, rules: &[LiouvilleRule], n_digits: u32) -> Result<PadicPoint> {
    let coords = rules
        .iter()
        .map(|r| {
            let s: BigInt = r
                .exponents(n_digits as u64)
                .iter()
                .map(|&a| p.pow(a as u32))
                .sum();
            PExact::from_int(p, s)
        })
        .collect();
    PadicPoint::new(p, coords, n_digits)
}

/// Truncation witnesses `(−S_k e_0 + e_coord)` with `S_k = Σ_{j<=k} p^{a_j}`,
/// paired with the next exponent `a_{k+1}` (valuation of the residual).
pub fn liouville_witnesses(
    p: Prime,
    rule: LiouvilleRule,
    n: usize,
    coord: usize,
    n_digits: u32,
) -> Vec<(Vec<PExact>, u64)> {
    let a = rule.exponents(n_digits as u64);
    let mut out = Vec::new();
    let mut s = BigInt::zero();
    for k in 0..a.len().saturating_sub(1) {
        s += p.pow(a[k] as u32);
        let mut v = vec![PExact::zero(p); n + 1];
        v[0] = PExact::from_int(p, -s.clone());
        v[coord + 1] = PExact::one(p);
        out.push((v, a[k + 1]));
    }
    out
}
