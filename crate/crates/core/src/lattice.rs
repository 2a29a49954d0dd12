//! `Z[1/p]`-lattices `g_t u_y D^{n+1}` in `Q_S^{n+1}`.
//!
//! Lattices are never materialized: a point `q̃ ∈ D^{n+1}` is mapped through
//! the structured transform, whose p-place reading is
//! `(p^{-t}(q0 + q·y), q_1, …, q_n)` and whose ∞-place reading is
//! `(p^{-t_i} q_i)_i`.
//!
//! Scaling `q̃` by a power of `p` leaves content unchanged, so every lattice
//! point has a representative with `max(p^t|q0 + q·y|_p, ‖q‖_p) = 1`. Such a
//! representative has `q ∈ Z^n`, `q0 ∈ p^{-E} Z` (with `E` the denominator
//! exponent of `y`) and content equal to its ∞-part alone. Both searches
//! below enumerate these representatives.

use std::cmp::Ordering;

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flows::FlowTime;
use crate::sarith::{
    dot_error, floor_rational, CertifiedNorm, PExact, PadicPoint, Precision, Prime,
};
use crate::svec::{content, subsets, transform_dense, wedge, Content, SPoint};

/// The lattice `g_t u_y D^{n+1}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatticeDescription {
    pub y: PadicPoint,
    pub t: FlowTime,
}

impl LatticeDescription {
    pub fn new(y: PadicPoint, t: FlowTime) -> Result<Self> {
        if t.len() != y.dim() + 1 {
            return Err(Error::DimensionMismatch {
                expected: y.dim() + 1,
                found: t.len(),
            });
        }
        Ok(LatticeDescription { y, t })
    }

    pub fn prime(&self) -> Prime {
        self.y.prime()
    }

    /// Ambient rank `n + 1`.
    pub fn rank(&self) -> usize {
        self.t.len()
    }
}

/// Image of `q̃` under `g_t u_y`.
pub fn apply_flow(l: &LatticeDescription, q: &[PExact]) -> Result<SPoint> {
    let m = l.rank();
    if q.len() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            found: q.len(),
        });
    }
    let p = l.prime();
    let mut r = q[0].clone();
    for (qi, yi) in q[1..].iter().zip(l.y.coords()) {
        r = &r + &(qi * yi);
    }
    let mut padic = q.to_vec();
    padic[0] = r;
    let mut errs = vec![None; m];
    errs[0] = dot_error(&q[1..], &l.y);
    let inf_scale: Vec<i64> = l.t.coords().iter().map(|&ti| -(ti as i64)).collect();
    let mut p_scale = vec![0i64; m];
    p_scale[0] = -(l.t.total() as i64);
    SPoint::from_places(p, q.to_vec(), padic, errs)?.scaled(&inf_scale, &p_scale)
}

/// Dense matrices of `g_t u_y` at both places (with entry error bounds at p).
pub fn dense_matrices(
    l: &LatticeDescription,
) -> (Vec<Vec<PExact>>, Vec<Vec<PExact>>, Vec<Vec<Option<i64>>>) {
    let p = l.prime();
    let m = l.rank();
    let t = l.t.total() as i64;
    let mut a_inf = vec![vec![PExact::zero(p); m]; m];
    let mut a_p = vec![vec![PExact::zero(p); m]; m];
    let mut err = vec![vec![None; m]; m];
    for i in 0..m {
        a_inf[i][i] = PExact::p_power(p, -(l.t.get(i) as i64));
        if i > 0 {
            a_p[i][i] = PExact::one(p);
        }
    }
    a_p[0][0] = PExact::p_power(p, -t);
    for (j, yj) in l.y.coords().iter().enumerate() {
        a_p[0][j + 1] = yj.mul_p_pow(-t);
        if let Precision::Absolute(n) = l.y.precision() {
            err[0][j + 1] = Some(t - n as i64);
        }
    }
    (a_inf, a_p, err)
}

/// `g_t u_y q̃` through the dense matrix path (test cross-check only).
pub fn apply_dense(l: &LatticeDescription, q: &[PExact]) -> Result<SPoint> {
    let (a_inf, a_p, err) = dense_matrices(l);
    transform_dense(q, &a_inf, &a_p, &err)
}

// ---------------------------------------------------------------------------
// Integer linear algebra

fn ext_gcd(a: &BigInt, b: &BigInt) -> (BigInt, BigInt, BigInt) {
    let e = a.extended_gcd(b);
    (e.gcd, e.x, e.y)
}

/// Row Hermite normal form of an integer matrix (zero rows dropped).
pub fn hnf_rows(rows: &[Vec<BigInt>]) -> Vec<Vec<BigInt>> {
    let mut a: Vec<Vec<BigInt>> = rows.to_vec();
    let ncols = a.first().map_or(0, Vec::len);
    let mut r = 0;
    for c in 0..ncols {
        if r == a.len() {
            break;
        }
        for i in r + 1..a.len() {
            if a[i][c].is_zero() {
                continue;
            }
            let (g, s, t) = ext_gcd(&a[r][c], &a[i][c]);
            let u = &a[r][c] / &g;
            let v = &a[i][c] / &g;
            let (ra, ia) = (a[r].clone(), a[i].clone());
            for k in 0..ncols {
                a[r][k] = &s * &ra[k] + &t * &ia[k];
                a[i][k] = &u * &ia[k] - &v * &ra[k];
            }
        }
        if a[r][c].is_zero() {
            continue;
        }
        if a[r][c].is_negative() {
            for x in a[r].iter_mut() {
                *x = -x.clone();
            }
        }
        for i in 0..r {
            let f = a[i][c].div_floor(&a[r][c]);
            if !f.is_zero() {
                let row = a[r].clone();
                for k in 0..ncols {
                    a[i][k] -= &f * &row[k];
                }
            }
        }
        r += 1;
    }
    a.truncate(r);
    a
}

/// A Z-basis of `{v ∈ Z^m : A v = 0}`.
pub fn integer_kernel(a: &[Vec<BigInt>], m: usize) -> Vec<Vec<BigInt>> {
    let mut a: Vec<Vec<BigInt>> = a.to_vec();
    // columns of u, stored as rows
    let mut u: Vec<Vec<BigInt>> = (0..m)
        .map(|i| {
            (0..m)
                .map(|j| {
                    if i == j {
                        BigInt::one()
                    } else {
                        BigInt::zero()
                    }
                })
                .collect()
        })
        .collect();
    let mut col = 0;
    for i in 0..a.len() {
        if col == m {
            break;
        }
        for c in col + 1..m {
            if a[i][c].is_zero() {
                continue;
            }
            let (x, y) = (a[i][col].clone(), a[i][c].clone());
            let (g, s, t) = ext_gcd(&x, &y);
            let (xg, yg) = (&x / &g, &y / &g);
            for row in a.iter_mut() {
                let (p0, p1) = (row[col].clone(), row[c].clone());
                row[col] = &s * &p0 + &t * &p1;
                row[c] = &xg * &p1 - &yg * &p0;
            }
            let (c0, c1) = (u[col].clone(), u[c].clone());
            u[col] = c0
                .iter()
                .zip(&c1)
                .map(|(a0, a1)| &s * a0 + &t * a1)
                .collect();
            u[c] = c0
                .iter()
                .zip(&c1)
                .map(|(a0, a1)| &xg * a1 - &yg * a0)
                .collect();
        }
        if !a[i][col].is_zero() {
            col += 1;
        }
    }
    hnf_rows(&u[col..])
}

/// Row-space saturation `span_Q(rows) ∩ Z^m`, in Hermite form.
pub fn saturate(rows: &[Vec<BigInt>]) -> Vec<Vec<BigInt>> {
    let m = rows.first().map_or(0, Vec::len);
    let k = integer_kernel(rows, m);
    if k.is_empty() {
        let id: Vec<Vec<BigInt>> = (0..m)
            .map(|i| {
                (0..m)
                    .map(|j| {
                        if i == j {
                            BigInt::one()
                        } else {
                            BigInt::zero()
                        }
                    })
                    .collect()
            })
            .collect();
        return id;
    }
    integer_kernel(&k, m)
}

/// Rank over `Q`.
pub fn rank_q(rows: &[Vec<BigRational>]) -> usize {
    let mut a = rows.to_vec();
    let ncols = a.first().map_or(0, Vec::len);
    let mut r = 0;
    for c in 0..ncols {
        let Some(piv) = (r..a.len()).find(|&i| !a[i][c].is_zero()) else {
            continue;
        };
        a.swap(r, piv);
        for i in r + 1..a.len() {
            if a[i][c].is_zero() {
                continue;
            }
            let f = &a[i][c] / &a[r][c];
            for k in c..ncols {
                let d = &f * &a[r][k];
                a[i][k] -= d;
            }
        }
        r += 1;
    }
    r
}

fn int_det(rows: &[Vec<BigInt>]) -> BigInt {
    let k = rows.len();
    if k == 0 {
        return BigInt::one();
    }
    let mut acc = BigInt::zero();
    for c in 0..k {
        if rows[0][c].is_zero() {
            continue;
        }
        let minor: Vec<Vec<BigInt>> = rows[1..]
            .iter()
            .map(|r| {
                r.iter()
                    .enumerate()
                    .filter(|(i, _)| *i != c)
                    .map(|(_, x)| x.clone())
                    .collect()
            })
            .collect();
        let term = &rows[0][c] * int_det(&minor);
        if c % 2 == 0 {
            acc += term;
        } else {
            acc -= term;
        }
    }
    acc
}

/// Clear p-power denominators row by row.
fn clear_rows(rows: &[Vec<PExact>]) -> Vec<Vec<BigInt>> {
    rows.iter()
        .map(|r| {
            let e = r.iter().map(PExact::exp).max().unwrap_or(0) as i64;
            r.iter()
                .map(|x| x.mul_p_pow(e).mantissa().clone())
                .collect()
        })
        .collect()
}

/// A primitive rank-`j` submodule `Δ` of `D^m`, stored by a basis.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrimitiveModule {
    p: Prime,
    basis: Vec<Vec<PExact>>,
}

impl PrimitiveModule {
    /// Accepts `rows` if they are independent and span a primitive module.
    pub fn new(p: Prime, rows: Vec<Vec<PExact>>) -> Result<Self> {
        let Some(first) = rows.first() else {
            return Err(Error::InvalidInput(
                "a submodule needs at least one row".into(),
            ));
        };
        let m = first.len();
        if let Some(r) = rows.iter().find(|r| r.len() != m) {
            return Err(Error::DimensionMismatch {
                expected: m,
                found: r.len(),
            });
        }
        if rows.len() > m {
            return Err(Error::RankDeficient {
                rank: m,
                rows: rows.len(),
            });
        }
        let ints = clear_rows(&rows);
        let j = rows.len();
        let mut g = BigInt::zero();
        for s in subsets(m, j) {
            let minor: Vec<Vec<BigInt>> = ints
                .iter()
                .map(|r| s.iter().map(|&i| r[i].clone()).collect())
                .collect();
            g = g.gcd(&int_det(&minor));
        }
        if g.is_zero() {
            let rat: Vec<Vec<BigRational>> = rows
                .iter()
                .map(|r| r.iter().map(PExact::to_rational).collect())
                .collect();
            return Err(Error::RankDeficient {
                rank: rank_q(&rat),
                rows: j,
            });
        }
        let (_, unit) = p.split(&g);
        if !unit.abs().is_one() {
            return Err(Error::NotPrimitive {
                index: unit.abs().to_string(),
            });
        }
        Ok(PrimitiveModule { p, basis: rows })
    }

    /// The primitive module `D^m ∩ span(rows)`.
    pub fn saturation_of(p: Prime, rows: &[Vec<PExact>]) -> Result<Self> {
        let ints = clear_rows(rows);
        let rat: Vec<Vec<BigRational>> = rows
            .iter()
            .map(|r| r.iter().map(PExact::to_rational).collect())
            .collect();
        let rk = rank_q(&rat);
        if rk == 0 {
            return Err(Error::RankDeficient {
                rank: 0,
                rows: rows.len(),
            });
        }
        let sat = saturate(&ints);
        let basis = sat
            .into_iter()
            .map(|r| r.into_iter().map(|x| PExact::from_int(p, x)).collect())
            .collect();
        PrimitiveModule::new(p, basis)
    }

    /// `D^m` itself.
    pub fn full(p: Prime, m: usize) -> Self {
        let basis = (0..m)
            .map(|i| {
                (0..m)
                    .map(|j| PExact::from_int(p, (i == j) as i64))
                    .collect()
            })
            .collect();
        PrimitiveModule { p, basis }
    }

    pub fn rank(&self) -> usize {
        self.basis.len()
    }

    pub fn ambient(&self) -> usize {
        self.basis[0].len()
    }

    pub fn basis(&self) -> &[Vec<PExact>] {
        &self.basis
    }

    pub fn prime(&self) -> Prime {
        self.p
    }

    /// Integer basis of `Δ ∩ Z^m` in Hermite form.
    pub fn integer_basis(&self) -> Vec<Vec<BigInt>> {
        hnf_rows(&saturate(&clear_rows(&self.basis)))
    }
}

/// `cov(g Δ)`: Euclidean norm of the wedge at ∞ times its sup norm at p.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Covolume {
    /// Square of the ∞-factor.
    pub inf_sq: BigRational,
    pub padic: CertifiedNorm,
}

impl Covolume {
    pub fn certified(&self) -> bool {
        self.padic.certified
    }

    /// `cov²` on the approximant.
    pub fn value_sq(&self, p: Prime) -> BigRational {
        let n = self.padic.value.to_rational(p);
        &self.inf_sq * &n * &n
    }

    /// Upper bound for `cov²`.
    pub fn upper_sq(&self, p: Prime) -> BigRational {
        let n = self.padic.upper().to_rational(p);
        &self.inf_sq * &n * &n
    }

    pub fn to_f64(&self, p: Prime) -> f64 {
        self.value_sq(p).to_f64().unwrap_or(f64::NAN).sqrt()
    }

    /// Is `cov >= p^r` (on a certified value)?
    pub fn ge_p_power(&self, p: Prime, r: &BigRational) -> bool {
        crate::sarith::cmp_p_power(p, &self.value_sq(p), &(r * BigInt::from(2))) != Ordering::Less
    }
}

/// Covolume of `g_t u_y Δ`.
pub fn covolume(l: &LatticeDescription, delta: &PrimitiveModule) -> Result<Covolume> {
    if delta.ambient() != l.rank() {
        return Err(Error::DimensionMismatch {
            expected: l.rank(),
            found: delta.ambient(),
        });
    }
    let rows = delta
        .basis()
        .iter()
        .map(|b| apply_flow(l, b))
        .collect::<Result<Vec<_>>>()?;
    let w = wedge(&rows)?;
    Ok(Covolume {
        inf_sq: w.point.inf_norm_sq(),
        padic: w.point.padic_norm(),
    })
}

// ---------------------------------------------------------------------------
// delta search

/// Limits on the δ enumeration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeltaBudget {
    /// Cap on `|q_i|` for every coordinate.
    pub max_height: u64,
    /// Cap on enumerated `q ∈ Z^n`.
    pub max_nodes: u64,
}

impl Default for DeltaBudget {
    fn default() -> Self {
        DeltaBudget {
            max_height: 1 << 40,
            max_nodes: 50_000_000,
        }
    }
}

/// Result of a δ search.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeltaCertificate {
    /// Best lattice point found (a representative in `D^{n+1}`).
    pub minimizer: Option<Vec<PExact>>,
    /// Its content; an upper bound for δ.
    pub content: Option<Content>,
    /// Proven lower bound for δ (valid when `exhaustive`), or for
    /// `min(δ, threshold)` when a threshold query found nothing.
    pub lower_bound: BigRational,
    /// The search threshold `δ̂_0` the box started from.
    pub threshold: BigRational,
    /// Final per-coordinate height box `|q̃_i| <= heights[i]` (coordinate 0
    /// measured in units of `p^{-E}`).
    pub heights: Vec<BigInt>,
    pub nodes: u64,
    pub exhaustive: bool,
}

impl DeltaCertificate {
    /// Upper bound on δ from the minimizer.
    pub fn upper(&self, p: Prime) -> Option<BigRational> {
        self.content.as_ref().map(|c| c.upper(p))
    }

    /// δ known exactly.
    pub fn is_exact(&self, p: Prime) -> bool {
        self.exhaustive && self.upper(p).is_some_and(|u| u == self.lower_bound)
    }

    /// Proven: `δ < eps`.
    pub fn proves_below(&self, p: Prime, eps: &BigRational) -> bool {
        self.upper(p).is_some_and(|u| &u < eps)
    }

    /// Proven: `δ >= eps`.
    pub fn proves_at_least(&self, eps: &BigRational) -> bool {
        self.exhaustive && &self.lower_bound >= eps
    }
}

/// `c = m · p^e` with `m >= 0` (contents in units of `p^{-T}`).
#[derive(Debug, Clone, PartialEq, Eq)]
struct Scaled {
    m: BigInt,
    e: i64,
}

impl Scaled {
    fn cmp(&self, other: &Scaled, p: Prime) -> Ordering {
        match self.e.cmp(&other.e) {
            Ordering::Equal => self.m.cmp(&other.m),
            Ordering::Greater => (&self.m * p.pow((self.e - other.e) as u32)).cmp(&other.m),
            Ordering::Less => self.m.cmp(&(&other.m * p.pow((other.e - self.e) as u32))),
        }
    }

    fn rational(&self, p: Prime, unit: i64) -> BigRational {
        BigRational::from_integer(self.m.clone()) * p.rpow(self.e - unit)
    }
}

struct Candidate {
    a: BigInt,
    q: Vec<i64>,
    upper: Scaled,
}

struct DeltaSearch<'a> {
    p: Prime,
    n: usize,
    t: &'a FlowTime,
    total: u32,
    e: u32,
    // unit exponent: contents are m·p^{e_P - big_t}
    big_t: i64,
    yp: Vec<BigInt>,
    full_mod: Option<BigInt>,
    cong_mod: BigInt,
    prec: Option<u32>,
    threshold: BigRational,
    best: Option<Candidate>,
    lower: Option<Scaled>,
    bounds: Vec<i64>,
    bound0: BigInt,
    clipped: bool,
    budget: &'a DeltaBudget,
    nodes: u64,
    aborted: bool,
    coord_scale: Vec<BigInt>,
    a_scale: BigInt,
}

impl<'a> DeltaSearch<'a> {
    fn current_bound(&self) -> BigRational {
        match &self.best {
            Some(c) => {
                let b = c.upper.rational(self.p, self.big_t);
                if b < self.threshold {
                    b
                } else {
                    self.threshold.clone()
                }
            }
            None => self.threshold.clone(),
        }
    }

    fn refresh_bounds(&mut self) {
        let b = self.current_bound();
        let p = self.p;
        for i in 0..self.n {
            let h = floor_rational(&(&b * p.rpow(self.t.get(i + 1) as i64)));
            let cap = self.budget.max_height;
            self.bounds[i] = match h.to_u64() {
                Some(v) if v <= cap => v as i64,
                _ => {
                    self.clipped = true;
                    cap.min(i64::MAX as u64 / 4) as i64
                }
            };
        }
        self.bound0 = floor_rational(&(&b * p.rpow(self.t.get(0) as i64 + self.e as i64)));
    }

    fn consider(&mut self, a: BigInt, q: &[i64], s: BigInt) {
        if a.abs() > self.bound0 || (a.is_zero() && q.iter().all(|&x| x == 0)) {
            return;
        }
        let p = self.p;
        // ∞ part in units of p^{-T}
        let mut am = a.abs() * &self.a_scale;
        for (i, &qi) in q.iter().enumerate() {
            if qi != 0 {
                let v = BigInt::from(qi.unsigned_abs()) * &self.coord_scale[i];
                if v > am {
                    am = v;
                }
            }
        }
        // ‖q‖_p
        let qnorm = q
            .iter()
            .filter(|&&x| x != 0)
            .map(|&x| -(p.valuation(&BigInt::from(x)).unwrap_or(0) as i64))
            .max();
        // p^t |r|_p, r = s / p^E
        let t = self.total as i64;
        let e = self.e as i64;
        let (r_val, r_cert) = if s.is_zero() {
            match self.prec {
                Some(n) => (Some(t - n as i64), false),
                None => (None, true),
            }
        } else {
            (Some(t + e - p.valuation(&s).unwrap() as i64), true)
        };
        let upper_e = match (r_val, qnorm) {
            (Some(a), Some(b)) => Some(a.max(b)),
            (x, None) | (None, x) => x,
        };
        let Some(upper_e) = upper_e else { return };
        let lower_e = if r_cert { Some(upper_e) } else { qnorm };
        let upper = Scaled {
            m: am.clone(),
            e: upper_e,
        };
        let lower = match lower_e {
            Some(le) => Scaled { m: am, e: le },
            None => Scaled {
                m: BigInt::zero(),
                e: 0,
            },
        };
        if self
            .lower
            .as_ref()
            .is_none_or(|l| lower.cmp(l, p) == Ordering::Less)
        {
            self.lower = Some(lower);
        }
        let better = match &self.best {
            None => upper.rational(p, self.big_t) <= self.threshold,
            Some(b) => match upper.cmp(&b.upper, p) {
                Ordering::Less => true,
                Ordering::Greater => false,
                Ordering::Equal => canonical(p, &a, q, self.e) < canonical(p, &b.a, &b.q, self.e),
            },
        };
        if better {
            self.best = Some(Candidate {
                a,
                q: q.to_vec(),
                upper,
            });
            self.refresh_bounds();
        }
    }

    fn leaf(&mut self, q: &[i64], res: &BigInt) {
        self.nodes += 1;
        if self.nodes > self.budget.max_nodes {
            self.aborted = true;
            return;
        }
        if q.iter().enumerate().any(|(i, &x)| x.abs() > self.bounds[i]) {
            return;
        }
        let a0 = (-res).mod_floor(&self.cong_mod);
        let a1 = &a0 - &self.cong_mod;
        for a in [a0, a1] {
            let s = self.reduce(&a + res);
            self.consider(a, q, s);
        }
    }

    fn rec(&mut self, i: usize, q: &mut Vec<i64>, res: BigInt, leading: bool) {
        if self.aborted {
            return;
        }
        if i == self.n {
            if !leading {
                self.leaf(q, &res);
            }
            return;
        }
        let lo = if leading { 0 } else { -self.bounds[i] };
        let step = self.yp[i].clone();
        let mut v = lo;
        let mut r = self.reduce(&res + &step * BigInt::from(lo));
        while v <= self.bounds[i] && !self.aborted {
            q[i] = v;
            self.rec(i + 1, q, r.clone(), leading && v == 0);
            v += 1;
            r = self.reduce(r + &step);
        }
        q[i] = 0;
    }

    fn reduce(&self, x: BigInt) -> BigInt {
        match &self.full_mod {
            Some(m) => x.mod_floor(m),
            None => x,
        }
    }
}

/// Canonical integral representative: clear `p^E`, remove the p-part of the
/// gcd, make the first nonzero entry positive.
fn canonical(p: Prime, a: &BigInt, q: &[i64], _e: u32) -> Vec<BigInt> {
    let mut v: Vec<BigInt> = std::iter::once(a.clone())
        .chain(q.iter().map(|&x| BigInt::from(x)))
        .collect();
    let g = v.iter().fold(BigInt::zero(), |g, x| g.gcd(x));
    if !g.is_zero() {
        let (k, _) = p.split(&g);
        let pk = p.pow(k as u32);
        for x in v.iter_mut() {
            *x = &*x / &pk;
        }
    }
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

/// Certified shortest-content search for `δ(g_t u_y D^{n+1})`.
///
/// With `threshold = None` the search starts from `δ <= 1`; with
/// `Some(ρ)` it only looks for points of content `<= ρ` (membership queries).
pub fn delta_search(
    l: &LatticeDescription,
    budget: &DeltaBudget,
    threshold: Option<&BigRational>,
) -> Result<DeltaCertificate> {
    let p = l.prime();
    let n = l.y.dim();
    let total = l.t.total();
    let prec = l.y.precision().digits();
    if let Some(nd) = prec {
        if total > nd {
            return Err(Error::PrecisionExhausted {
                needed: total,
                available: nd,
            });
        }
    }
    let e = l.y.denominator_exp();
    let yp: Vec<BigInt> =
        l.y.coords()
            .iter()
            .map(|c| c.mul_p_pow(e as i64).mantissa().clone())
            .collect();
    let full_mod = prec.map(|nd| p.pow(nd + e));
    let yp = match &full_mod {
        Some(m) => yp.into_iter().map(|x| x.mod_floor(m)).collect(),
        None => yp,
    };
    let big_t = l.t.max_coord() as i64 + e as i64;
    let coord_scale = (1..=n)
        .map(|i| p.pow((big_t - l.t.get(i) as i64) as u32))
        .collect();
    let a_scale = p.pow((big_t - l.t.get(0) as i64 - e as i64) as u32);
    let one = BigRational::one();
    let thr = threshold.map_or(
        one.clone(),
        |x| if *x < one { x.clone() } else { one.clone() },
    );
    let mut s = DeltaSearch {
        p,
        n,
        t: &l.t,
        total,
        e,
        big_t,
        yp,
        full_mod,
        cong_mod: p.pow(total + e),
        prec,
        threshold: thr.clone(),
        best: None,
        lower: None,
        bounds: vec![0; n],
        bound0: BigInt::zero(),
        clipped: false,
        budget,
        nodes: 0,
        aborted: false,
        coord_scale,
        a_scale,
    };
    s.refresh_bounds();
    // q = 0: q0 = ±p^t
    let m0 = p.pow(total + e);
    s.consider(m0.clone(), &vec![0; n], m0);
    let mut q = vec![0i64; n];
    s.rec(0, &mut q, BigInt::zero(), true);

    let exhaustive = !s.aborted && !s.clipped;
    let floor = p.rpow(-(l.t.max_coord() as i64));
    let mut lower = match &s.lower {
        Some(lw) => lw.rational(p, big_t).min(thr.clone()),
        None => thr.clone(),
    };
    if lower < floor {
        lower = floor;
    }
    let heights = std::iter::once(s.bound0.clone())
        .chain(s.bounds.iter().map(|&b| BigInt::from(b)))
        .collect();
    let (minimizer, cont) = match &s.best {
        Some(c) => {
            let mut v = vec![PExact::canonicalize(p, c.a.clone(), e as i64)];
            v.extend(c.q.iter().map(|&x| PExact::from_int(p, x)));
            let image = apply_flow(l, &v)?;
            let cc = content(&image)?;
            if cc.upper(p) != c.upper.rational(p, big_t) {
                return Err(Error::VerificationFailed(
                    "structured content disagrees with the enumerator".into(),
                ));
            }
            (Some(v), Some(cc))
        }
        None => (None, None),
    };
    if let Some(c) = &cont {
        if c.upper(p) < lower {
            lower = c.upper(p);
        }
    }
    Ok(DeltaCertificate {
        minimizer,
        content: cont,
        lower_bound: lower,
        threshold: thr,
        heights,
        nodes: s.nodes,
        exhaustive,
    })
}

/// Brute-force δ over the full integer box `|q̃_i| <= p^{t_i}` (no pruning,
/// coordinate 0 last); requires `y ∈ Z_p^n`. Test oracle.
pub fn delta_brute_force(l: &LatticeDescription) -> Result<Option<BigRational>> {
    let p = l.prime();
    if l.y.denominator_exp() != 0 {
        return Err(Error::InvalidInput("brute force needs y in Z_p^n".into()));
    }
    let m = l.rank();
    let h: Vec<i64> = (0..m)
        .map(|i| {
            p.pow(l.t.get(i))
                .to_i64()
                .ok_or_else(|| Error::OutOfRange("box too large".into()))
        })
        .collect::<Result<_>>()?;
    let mut best: Option<BigRational> = None;
    let mut x = vec![0i64; m];
    let mut idx: Vec<i64> = h.iter().map(|&b| -b).collect();
    loop {
        // odometer with coordinate 0 varying slowest
        x.copy_from_slice(&idx);
        if x.iter().any(|&v| v != 0) {
            let v: Vec<PExact> = x.iter().map(|&c| PExact::from_int(p, c)).collect();
            let c = content(&apply_flow(l, &v)?)?;
            if !c.certified() {
                return Err(Error::PrecisionExhausted {
                    needed: l.t.total() + 1,
                    available: l.y.precision().digits().unwrap_or(0),
                });
            }
            let val = c.value(p);
            if best.as_ref().is_none_or(|b| &val < b) {
                best = Some(val);
            }
        }
        let mut k = m;
        loop {
            if k == 0 {
                return Ok(best);
            }
            k -= 1;
            if idx[k] < h[k] {
                idx[k] += 1;
                break;
            }
            idx[k] = -h[k];
        }
    }
}

// ---------------------------------------------------------------------------
// Minkowski search

/// A lattice point found inside the Minkowski box.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MinkowskiPoint {
    pub point: Vec<PExact>,
    pub content: Content,
    pub covolume: Covolume,
    pub rank: usize,
}

impl MinkowskiPoint {
    /// Exact check of `c(x)^j <= cov`.
    pub fn content_within_bound(&self, p: Prime) -> bool {
        let j = self.rank as i32;
        let c = self.content.upper(p);
        num_traits::pow(c, 2 * j as usize) <= self.covolume.upper_sq(p)
    }
}

/// Nonzero `x ∈ Δ` with `‖(g x)^∞‖_∞ <= cov(gΔ)^{1/j}` and `‖(g x)^p‖_p <= 1`.
pub fn minkowski_search(l: &LatticeDescription, delta: &PrimitiveModule) -> Result<MinkowskiPoint> {
    let p = l.prime();
    let cov = covolume(l, delta)?;
    if !cov.certified() {
        return Err(Error::PrecisionExhausted {
            needed: l.t.total() + 1,
            available: l.y.precision().digits().unwrap_or(0),
        });
    }
    let total = l.t.total();
    if let Some(nd) = l.y.precision().digits() {
        if total > nd {
            return Err(Error::PrecisionExhausted {
                needed: total,
                available: nd,
            });
        }
    }
    let m = l.rank();
    let j = delta.rank();
    let e = l.y.denominator_exp();
    // Δ' = diag(p^E, 1, …, 1) Δ, integer points
    let scaled: Vec<Vec<PExact>> = delta
        .basis()
        .iter()
        .map(|r| {
            let mut r = r.clone();
            r[0] = r[0].mul_p_pow(e as i64);
            r
        })
        .collect();
    let sat = PrimitiveModule::saturation_of(p, &scaled)?.integer_basis();
    let yp: Vec<BigInt> =
        l.y.coords()
            .iter()
            .map(|c| c.mul_p_pow(e as i64).mantissa().clone())
            .collect();
    let modulus = p.pow(total + e);
    // congruence sublattice x'_0 + x·Y' ≡ 0 (mod p^{t+E})
    let mut rows: Vec<Vec<BigInt>> = Vec::with_capacity(j + 1);
    for (k, b) in sat.iter().enumerate() {
        let mut lam = b[0].clone();
        for (bi, yi) in b[1..].iter().zip(&yp) {
            lam += bi * yi;
        }
        let mut row = vec![lam.mod_floor(&modulus)];
        row.extend((0..j).map(|i| BigInt::from((i == k) as i64)));
        rows.push(row);
    }
    let mut last = vec![modulus.clone()];
    last.extend((0..j).map(|_| BigInt::zero()));
    rows.push(last);
    let h = hnf_rows(&rows);
    let coeffs: Vec<Vec<BigInt>> = h[1..].iter().map(|r| r[1..].to_vec()).collect();
    let gamma: Vec<Vec<BigInt>> = coeffs
        .iter()
        .map(|c| {
            (0..m)
                .map(|col| c.iter().zip(&sat).map(|(ck, bk)| ck * &bk[col]).sum())
                .collect()
        })
        .collect();
    let gamma = hnf_rows(&gamma);
    if gamma.len() != j {
        return Err(Error::VerificationFailed(
            "congruence sublattice lost rank".into(),
        ));
    }
    // box: |x'_i| p^{-s_i} <= cov^{1/j}, s_0 = t_0 + E, s_i = t_i
    let cov_sq = cov.upper_sq(p);
    let shifts: Vec<i64> = (0..m)
        .map(|i| l.t.get(i) as i64 + if i == 0 { e as i64 } else { 0 })
        .collect();
    let bounds: Vec<BigInt> = shifts
        .iter()
        .map(|&s| {
            // largest b with (b p^{-s})^{2j} <= cov²
            let x = &cov_sq * p.rpow(2 * j as i64 * s);
            crate::sarith::floor_root(&x, 2 * j as u32)
        })
        .collect();
    let pivots: Vec<usize> = gamma
        .iter()
        .map(|r| r.iter().position(|x| !x.is_zero()).unwrap())
        .collect();
    let mut best: Option<(BigRational, Vec<BigInt>)> = None;
    let mut x = vec![BigInt::zero(); m];
    enumerate_box(p, &gamma, &pivots, &bounds, 0, &mut x, l, e, &mut best)?;
    let Some((_, xi)) = best else {
        return Err(Error::SearchFailed(
            "no lattice point in the Minkowski box".into(),
        ));
    };
    let mut point = vec![PExact::canonicalize(p, xi[0].clone(), e as i64)];
    point.extend(xi[1..].iter().map(|v| PExact::from_int(p, v.clone())));
    let c = content(&apply_flow(l, &point)?)?;
    let out = MinkowskiPoint {
        point,
        content: c,
        covolume: cov,
        rank: j,
    };
    if !out.content_within_bound(p) {
        return Err(Error::VerificationFailed(
            "Minkowski point exceeds cov^(1/j)".into(),
        ));
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn enumerate_box(
    p: Prime,
    gamma: &[Vec<BigInt>],
    pivots: &[usize],
    bounds: &[BigInt],
    k: usize,
    x: &mut Vec<BigInt>,
    l: &LatticeDescription,
    e: u32,
    best: &mut Option<(BigRational, Vec<BigInt>)>,
) -> Result<()> {
    let m = x.len();
    // columns fully determined by rows < k
    let det_upto = if k < pivots.len() { pivots[k] } else { m };
    let start = if k == 0 { 0 } else { pivots[k - 1] };
    for col in start..det_upto {
        if x[col].abs() > bounds[col] {
            return Ok(());
        }
    }
    if k == gamma.len() {
        // x and -x have equal content; keep the one with positive lead
        if x.iter()
            .find(|c| !c.is_zero())
            .is_none_or(|c| c.is_negative())
        {
            return Ok(());
        }
        let mut v = vec![PExact::canonicalize(p, x[0].clone(), e as i64)];
        v.extend(x[1..].iter().map(|c| PExact::from_int(p, c.clone())));
        let c = content(&apply_flow(l, &v)?)?;
        let val = c.upper(p);
        let better = match best {
            None => true,
            Some((b, bx)) => val < *b || (val == *b && *x < *bx),
        };
        if better {
            *best = Some((val, x.clone()));
        }
        return Ok(());
    }
    let piv = pivots[k];
    let h = &gamma[k][piv];
    // |x[piv] + c h| <= B
    let b = &bounds[piv];
    let lo = (-b - &x[piv]).div_ceil(h);
    let hi = (b - &x[piv]).div_floor(h);
    let mut c = lo;
    while c <= hi {
        for col in piv..m {
            x[col] += &c * &gamma[k][col];
        }
        enumerate_box(p, gamma, pivots, bounds, k + 1, x, l, e, best)?;
        for col in piv..m {
            x[col] -= &c * &gamma[k][col];
        }
        c += 1;
    }
    Ok(())
}

/// Is `q̃`'s image content at most `p^r`?
pub fn content_le_p_power(l: &LatticeDescription, q: &[PExact], r: &BigRational) -> Result<bool> {
    Ok(content(&apply_flow(l, q)?)?.le_p_power(l.prime(), r))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flows::balanced_time;
    use crate::svec::int_vec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn p(n: u32) -> Prime {
        Prime::new(n).unwrap()
    }

    fn rat(a: i64, b: i64) -> BigRational {
        BigRational::new(a.into(), b.into())
    }

    fn lat(y: PadicPoint, t: &[u32]) -> LatticeDescription {
        LatticeDescription::new(y, FlowTime::new(t.to_vec()).unwrap()).unwrap()
    }

    #[test]
    fn apply_flow_examples() {
        let q = p(3);
        let l = lat(PadicPoint::zero(q, 1), &[0, 0]);
        let c = content(&apply_flow(&l, &int_vec(q, &[1, 0])).unwrap()).unwrap();
        assert_eq!(c.value(q), rat(1, 1));

        let l = lat(PadicPoint::zero(q, 1), &[1, 1]);
        let x = apply_flow(&l, &int_vec(q, &[9, 1])).unwrap();
        let c = content(&x).unwrap();
        assert_eq!(c.padic.value, crate::sarith::PNorm::ONE);
        assert_eq!(c.inf, rat(3, 1));
        assert_eq!(c.value(q), rat(3, 1));

        let c = content(&apply_flow(&l, &int_vec(q, &[0, 0])).unwrap()).unwrap();
        assert_eq!(c.value(q), rat(0, 1));
    }

    #[test]
    fn e0_image_has_content_p_to_t_minus_t0() {
        let q = p(2);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let y = PadicPoint::haar(q, 2, 32, &mut rng);
            let t: Vec<u32> = (0..3).map(|_| rng.gen_range(0..4)).collect();
            let l = lat(y, &t);
            let c = content(&apply_flow(&l, &int_vec(q, &[1, 0, 0])).unwrap()).unwrap();
            let tot: u32 = t.iter().sum();
            assert_eq!(c.value(q), q.rpow(tot as i64 - t[0] as i64));
        }
    }

    #[test]
    fn dense_path_agrees() {
        let q = p(3);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..30 {
            let y = PadicPoint::haar(q, 2, 20, &mut rng);
            let t: Vec<u32> = (0..3).map(|_| rng.gen_range(0..3)).collect();
            let l = lat(y, &t);
            let v: Vec<i64> = (0..3).map(|_| rng.gen_range(-30..30)).collect();
            let a = content(&apply_flow(&l, &int_vec(q, &v)).unwrap()).unwrap();
            let b = content(&apply_dense(&l, &int_vec(q, &v)).unwrap()).unwrap();
            assert_eq!(a.inf, b.inf);
            assert_eq!(a.upper(q), b.upper(q));
        }
    }

    #[test]
    fn covolume_examples() {
        let q = p(3);
        let id = lat(PadicPoint::zero(q, 1), &[0, 0]);
        let d = PrimitiveModule::new(q, vec![int_vec(q, &[0, 1])]).unwrap();
        assert_eq!(covolume(&id, &d).unwrap().value_sq(q), rat(1, 1));
        let d2 = PrimitiveModule::new(q, vec![int_vec(q, &[1, 1]), int_vec(q, &[0, 1])]).unwrap();
        assert_eq!(covolume(&id, &d2).unwrap().value_sq(q), rat(1, 1));
        let l = lat(PadicPoint::zero(q, 1), &[1, 1]);
        assert_eq!(covolume(&l, &d).unwrap().value_sq(q), rat(1, 9));
        // the full module always has covolume 1
        assert_eq!(
            covolume(&l, &PrimitiveModule::full(q, 2))
                .unwrap()
                .value_sq(q),
            rat(1, 1)
        );
    }

    #[test]
    fn primitivity_is_checked() {
        let q = p(3);
        assert!(PrimitiveModule::new(q, vec![int_vec(q, &[3, 0])]).is_ok());
        assert!(PrimitiveModule::new(q, vec![int_vec(q, &[9, 3])]).is_ok());
        assert!(matches!(
            PrimitiveModule::new(q, vec![int_vec(q, &[2, 4])]),
            Err(Error::NotPrimitive { .. })
        ));
        assert!(matches!(
            PrimitiveModule::new(q, vec![int_vec(q, &[1, 2]), int_vec(q, &[2, 4])]),
            Err(Error::RankDeficient { .. })
        ));
        let s =
            PrimitiveModule::saturation_of(q, &[int_vec(q, &[2, 4, 6]), int_vec(q, &[0, 5, 5])])
                .unwrap();
        assert_eq!(s.rank(), 2);
        assert_eq!(
            s.integer_basis(),
            vec![int_rows(&[1, 0, 1]), int_rows(&[0, 1, 1])]
        );
    }

    fn int_rows(v: &[i64]) -> Vec<BigInt> {
        v.iter().map(|&x| BigInt::from(x)).collect()
    }

    #[test]
    fn integer_kernel_basis() {
        let a = vec![int_rows(&[2, 3, 5])];
        let k = integer_kernel(&a, 3);
        assert_eq!(k.len(), 2);
        for v in &k {
            let s: BigInt = v.iter().zip(&a[0]).map(|(x, y)| x * y).sum();
            assert!(s.is_zero());
        }
        // index 1: the kernel is saturated
        let sat = saturate(&k);
        assert_eq!(hnf_rows(&sat), hnf_rows(&k));
    }

    #[test]
    fn delta_examples() {
        let q = p(3);
        let l = lat(PadicPoint::zero(q, 1), &[0, 0]);
        let d = delta_search(&l, &DeltaBudget::default(), None).unwrap();
        assert!(d.is_exact(q));
        assert_eq!(d.upper(q).unwrap(), rat(1, 1));

        let l = lat(PadicPoint::zero(q, 1), &[1, 1]);
        let d = delta_search(&l, &DeltaBudget::default(), None).unwrap();
        let u = d.upper(q).unwrap();
        assert!(u <= rat(1, 3) && u >= rat(1, 9));
        assert!(d.is_exact(q));
    }

    #[test]
    fn delta_matches_brute_force_on_small_cells() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for &pr in &[2u32, 3] {
            let q = p(pr);
            for n in 1..=2usize {
                for _ in 0..6 {
                    let y = PadicPoint::haar(q, n, 12, &mut rng);
                    let t: Vec<u32> = (0..=n).map(|_| rng.gen_range(0..3)).collect();
                    if t.iter().sum::<u32>() > 4 {
                        continue;
                    }
                    let l = lat(y, &t);
                    let d = delta_search(&l, &DeltaBudget::default(), None).unwrap();
                    let b = delta_brute_force(&l).unwrap().unwrap();
                    assert!(d.is_exact(q), "{t:?}");
                    assert_eq!(d.upper(q).unwrap(), b, "p={pr} t={t:?}");
                }
            }
        }
    }

    #[test]
    fn threshold_queries() {
        let q = p(3);
        let l = lat(PadicPoint::zero(q, 1), &[2, 2]);
        let full = delta_search(&l, &DeltaBudget::default(), None).unwrap();
        let dv = full.upper(q).unwrap();
        let below = delta_search(&l, &DeltaBudget::default(), Some(&(&dv * rat(1, 2)))).unwrap();
        assert!(below.minimizer.is_none());
        assert!(below.exhaustive);
        assert!(!below.proves_below(q, &dv));
        let at = delta_search(&l, &DeltaBudget::default(), Some(&dv)).unwrap();
        assert_eq!(at.upper(q), Some(dv));
    }

    #[test]
    fn precision_is_checked() {
        let q = p(2);
        let y = PadicPoint::new(q, int_vec(q, &[1]), 3).unwrap();
        let l = lat(y, &[2, 2]);
        assert!(matches!(
            delta_search(&l, &DeltaBudget::default(), None),
            Err(Error::PrecisionExhausted {
                needed: 4,
                available: 3
            })
        ));
    }

    #[test]
    fn minkowski_examples() {
        let q = p(3);
        let id = lat(PadicPoint::zero(q, 1), &[0, 0]);
        let d = PrimitiveModule::new(q, vec![int_vec(q, &[0, 1])]).unwrap();
        let m = minkowski_search(&id, &d).unwrap();
        assert_eq!(m.point, int_vec(q, &[0, 1]));
        let m = minkowski_search(&id, &PrimitiveModule::full(q, 2)).unwrap();
        assert_eq!(m.content.value(q), rat(1, 1));
        let l = lat(PadicPoint::zero(q, 1), &[1, 1]);
        let m = minkowski_search(&l, &d).unwrap();
        assert_eq!(m.point, int_vec(q, &[0, 1]));
        assert_eq!(m.content.value(q), rat(1, 3));
    }

    #[test]
    fn minkowski_with_denominators() {
        let q = p(2);
        let y = PadicPoint::new(q, vec![PExact::canonicalize(q, 3.into(), 2)], 10).unwrap();
        let l = lat(y, &[1, 2]);
        for rows in [vec![int_vec(q, &[1, 0])], vec![int_vec(q, &[1, 3])]] {
            let d = PrimitiveModule::new(q, rows).unwrap();
            let m = minkowski_search(&l, &d).unwrap();
            assert!(m.content_within_bound(q));
        }
        let m = minkowski_search(&l, &PrimitiveModule::full(q, 2)).unwrap();
        assert!(m.content_within_bound(q));
        let bt = balanced_time(1, 1).unwrap();
        assert_eq!(bt.total(), 2);
    }
}
