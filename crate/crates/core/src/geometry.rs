//! Affine subspaces and polynomial maps into `Q_p^n`, nonplanarity, and a
//! bounded checker for the covolume floor `sup_x cov(g_t u_{f(x)} Δ) >= p^{-j d t}`.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flows::{flow_times_up_to, FlowTime};
use crate::lattice::{
    apply_dense, covolume, integer_kernel, rank_q, saturate, LatticeDescription, PrimitiveModule,
};
use crate::sarith::{cmp_p_power, haar_integer, PExact, PadicPoint, Precision, Prime};
use crate::svec::{subsets, wedge};

/// `x ↦ c + M x` with `M` an `n × d` matrix of rank `d`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AffineSubspace {
    p: Prime,
    offset: Vec<PExact>,
    matrix: Vec<Vec<PExact>>,
}

impl AffineSubspace {
    pub fn new(p: Prime, offset: Vec<PExact>, matrix: Vec<Vec<PExact>>) -> Result<Self> {
        let n = offset.len();
        if matrix.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: matrix.len(),
            });
        }
        let d = matrix.first().map_or(0, Vec::len);
        if let Some(r) = matrix.iter().find(|r| r.len() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: r.len(),
            });
        }
        let cols: Vec<Vec<BigRational>> = (0..d)
            .map(|j| matrix.iter().map(|r| r[j].to_rational()).collect())
            .collect();
        let rank = rank_q(&cols);
        if rank != d {
            return Err(Error::RankDeficient { rank, rows: d });
        }
        Ok(AffineSubspace { p, offset, matrix })
    }

    pub fn dim(&self) -> usize {
        self.matrix.first().map_or(0, Vec::len)
    }

    pub fn ambient(&self) -> usize {
        self.offset.len()
    }

    /// The parametrization as a degree-1 polynomial map.
    pub fn to_polymap(&self) -> PolyMap {
        let d = self.dim();
        let coords = self
            .offset
            .iter()
            .zip(&self.matrix)
            .map(|(c, row)| {
                let mut terms = vec![Term {
                    exps: vec![0; d],
                    coef: c.clone(),
                }];
                for (j, a) in row.iter().enumerate() {
                    let mut exps = vec![0; d];
                    exps[j] = 1;
                    terms.push(Term {
                        exps,
                        coef: a.clone(),
                    });
                }
                terms
            })
            .collect();
        PolyMap::new(self.p, d, coords).expect("well-formed by construction")
    }
}

/// `coef · x^exps`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Term {
    pub exps: Vec<u32>,
    pub coef: PExact,
}

/// Polynomial map `Q_p^d → Q_p^n` with `Z[1/p]` coefficients.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolyMap {
    p: Prime,
    d: usize,
    coords: Vec<Vec<Term>>,
}

fn pow_exact(x: &PExact, k: u32) -> PExact {
    let mut acc = PExact::one(x.prime());
    for _ in 0..k {
        acc = &acc * x;
    }
    acc
}

impl PolyMap {
    pub fn new(p: Prime, d: usize, coords: Vec<Vec<Term>>) -> Result<Self> {
        for t in coords.iter().flatten() {
            if t.exps.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: t.exps.len(),
                });
            }
            if t.coef.prime() != p {
                return Err(Error::PrimeMismatch(p.get(), t.coef.prime().get()));
            }
        }
        if coords.is_empty() {
            return Err(Error::InvalidInput(
                "a map needs at least one coordinate".into(),
            ));
        }
        Ok(PolyMap { p, d, coords })
    }

    pub fn prime(&self) -> Prime {
        self.p
    }

    /// Number of input variables.
    pub fn input_dim(&self) -> usize {
        self.d
    }

    /// Number of coordinates.
    pub fn output_dim(&self) -> usize {
        self.coords.len()
    }

    pub fn coords(&self) -> &[Vec<Term>] {
        &self.coords
    }

    pub fn degree(&self) -> u32 {
        self.coords
            .iter()
            .flatten()
            .filter(|t| !t.coef.is_zero())
            .map(|t| t.exps.iter().sum())
            .max()
            .unwrap_or(0)
    }

    /// Largest coefficient denominator exponent.
    pub fn denominator_exp(&self) -> u32 {
        self.coords
            .iter()
            .flatten()
            .map(|t| t.coef.exp())
            .max()
            .unwrap_or(0)
    }

    /// Exact value at a `Z[1/p]` point.
    pub fn eval_exact(&self, x: &[PExact]) -> Result<Vec<PExact>> {
        if x.len() != self.d {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                found: x.len(),
            });
        }
        Ok(self
            .coords
            .iter()
            .map(|terms| {
                terms.iter().fold(PExact::zero(self.p), |acc, t| {
                    let m = t
                        .exps
                        .iter()
                        .zip(x)
                        .fold(t.coef.clone(), |m, (&k, xi)| &m * &pow_exact(xi, k));
                    &acc + &m
                })
            })
            .collect())
    }

    /// Value at an approximated point of `Z_p^d`. Monomials preserve
    /// congruences mod `p^N`, so only the coefficient denominators cost digits.
    pub fn eval_point(&self, x: &PadicPoint) -> Result<PadicPoint> {
        if x.prime() != self.p {
            return Err(Error::PrimeMismatch(self.p.get(), x.prime().get()));
        }
        let vals = self.eval_exact(x.coords())?;
        match x.precision() {
            Precision::Exact => PadicPoint::exact(self.p, vals),
            Precision::Absolute(n) => {
                if x.denominator_exp() > 0 {
                    return Err(Error::InvalidInput(
                        "inexact points must lie in Z_p^d".into(),
                    ));
                }
                let e = self.denominator_exp();
                if n <= e {
                    return Err(Error::PrecisionExhausted {
                        needed: e + 1,
                        available: n,
                    });
                }
                PadicPoint::new(self.p, vals, n - e)
            }
        }
    }

    /// Parse the text format:
    ///
    /// ```text
    /// # comment
    /// dims <d> <n>
    /// <coord> <e_1,...,e_d> <mantissa> <exp>
    /// ```
    ///
    /// Each line adds `mantissa / p^exp · x^e` to coordinate `coord`.
    pub fn parse(p: Prime, text: &str) -> Result<Self> {
        let mut dims: Option<(usize, usize)> = None;
        let mut coords: Vec<Vec<Term>> = Vec::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = |what: &str| Error::InvalidInput(format!("line {}: {what}", no + 1));
            let f: Vec<&str> = line.split_whitespace().collect();
            if f[0] == "dims" {
                if f.len() != 3 || dims.is_some() {
                    return Err(bad("expected a single `dims <d> <n>` header"));
                }
                let d = f[1].parse().map_err(|_| bad("bad d"))?;
                let n: usize = f[2].parse().map_err(|_| bad("bad n"))?;
                dims = Some((d, n));
                coords = vec![Vec::new(); n];
                continue;
            }
            let Some((d, n)) = dims else {
                return Err(bad("term before `dims` header"));
            };
            if f.len() != 4 {
                return Err(bad("expected `<coord> <exps> <mantissa> <exp>`"));
            }
            let c: usize = f[0].parse().map_err(|_| bad("bad coordinate index"))?;
            if c >= n {
                return Err(bad("coordinate index out of range"));
            }
            let exps: Vec<u32> = if d == 0 {
                Vec::new()
            } else {
                f[1].split(',')
                    .map(|s| s.parse().map_err(|_| bad("bad exponent")))
                    .collect::<Result<_>>()?
            };
            if exps.len() != d {
                return Err(bad("exponent count does not match d"));
            }
            let m: BigInt = f[2].parse().map_err(|_| bad("bad mantissa"))?;
            let e: i64 = f[3].parse().map_err(|_| bad("bad denominator exponent"))?;
            coords[c].push(Term {
                exps,
                coef: PExact::canonicalize(p, m, e),
            });
        }
        let Some((d, _)) = dims else {
            return Err(Error::InvalidInput("missing `dims` header".into()));
        };
        PolyMap::new(p, d, coords)
    }

    /// Inverse of [`PolyMap::parse`].
    pub fn to_text(&self) -> String {
        let mut s = format!("dims {} {}\n", self.d, self.coords.len());
        for (i, terms) in self.coords.iter().enumerate() {
            for t in terms {
                let exps: Vec<String> = t.exps.iter().map(u32::to_string).collect();
                let _ = writeln!(
                    s,
                    "{i} {} {} {}",
                    exps.join(","),
                    t.coef.mantissa(),
                    t.coef.exp()
                );
            }
        }
        s
    }
}

/// `x ↦ (x, x², …, x^n)`.
pub fn moment_curve(p: Prime, n: usize) -> Result<PolyMap> {
    if n == 0 {
        return Err(Error::InvalidInput("moment curve needs n >= 1".into()));
    }
    let coords = (1..=n as u32)
        .map(|k| {
            vec![Term {
                exps: vec![k],
                coef: PExact::one(p),
            }]
        })
        .collect();
    PolyMap::new(p, 1, coords)
}

/// `B(center, p^{-r})` inside `Z_p^d`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ball {
    pub center: PadicPoint,
    pub radius_exp: u32,
}

impl Ball {
    pub fn new(center: PadicPoint, radius_exp: u32) -> Result<Self> {
        if center.denominator_exp() > 0 {
            return Err(Error::InvalidInput("ball centers must lie in Z_p^d".into()));
        }
        if let Some(n) = center.precision().digits() {
            if n < radius_exp {
                return Err(Error::PrecisionExhausted {
                    needed: radius_exp,
                    available: n,
                });
            }
        }
        Ok(Ball { center, radius_exp })
    }

    /// `Z_p^d`.
    pub fn unit(p: Prime, d: usize) -> Self {
        Ball {
            center: PadicPoint::zero(p, d),
            radius_exp: 0,
        }
    }

    pub fn prime(&self) -> Prime {
        self.center.prime()
    }

    pub fn dim(&self) -> usize {
        self.center.dim()
    }

    /// Haar measure `p^{-d r}`.
    pub fn measure(&self) -> BigRational {
        self.prime()
            .rpow(-((self.dim() as u32 * self.radius_exp) as i64))
    }

    /// Digits of the center below the radius.
    fn prefix(&self) -> Vec<BigInt> {
        let m = self.prime().pow(self.radius_exp);
        self.center
            .coords()
            .iter()
            .map(|c| num_integer::Integer::mod_floor(c.mantissa(), &m))
            .collect()
    }

    /// Haar-uniform point of the ball at precision `N`.
    pub fn sample<R: Rng + ?Sized>(&self, n_digits: u32, rng: &mut R) -> Result<PadicPoint> {
        if n_digits <= self.radius_exp {
            return Err(Error::PrecisionExhausted {
                needed: self.radius_exp + 1,
                available: n_digits,
            });
        }
        let p = self.prime();
        let scale = p.pow(self.radius_exp);
        let coords = self
            .prefix()
            .into_iter()
            .map(|c| {
                PExact::from_int(
                    p,
                    c + &scale * haar_integer(p, n_digits - self.radius_exp, rng),
                )
            })
            .collect();
        PadicPoint::new(p, coords, n_digits)
    }

    /// Is the integer point `x` in the ball?
    pub fn contains(&self, x: &[BigInt]) -> bool {
        let m = self.prime().pow(self.radius_exp);
        x.iter()
            .zip(self.prefix())
            .all(|(a, c)| num_integer::Integer::mod_floor(&(a - c), &m).is_zero())
    }
}

/// Integer basis of `{q̃ ∈ Z^{n+1} : q0 + q·f ≡ 0}` (identically in `x`).
pub fn rational_kernel(f: &PolyMap) -> Vec<Vec<BigInt>> {
    let p = f.prime();
    let mut monos: BTreeSet<Vec<u32>> = BTreeSet::new();
    monos.insert(vec![0; f.input_dim()]);
    for t in f.coords().iter().flatten() {
        monos.insert(t.exps.clone());
    }
    let m = f.output_dim() + 1;
    let rows: Vec<Vec<BigInt>> = monos
        .iter()
        .map(|mono| {
            let mut r = vec![PExact::zero(p); m];
            if mono.iter().all(|&e| e == 0) {
                r[0] = PExact::one(p);
            }
            for (i, terms) in f.coords().iter().enumerate() {
                for t in terms.iter().filter(|t| &t.exps == mono) {
                    r[i + 1] = &r[i + 1] + &t.coef;
                }
            }
            let e = r.iter().map(PExact::exp).max().unwrap_or(0) as i64;
            r.iter()
                .map(|x| x.mul_p_pow(e).mantissa().clone())
                .collect()
        })
        .collect();
    integer_kernel(&rows, m)
}

/// Outcome of a sampled nonplanarity test.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NonplanarityReport {
    /// Affine span of the samples is all of `Q_p^n`.
    pub full: bool,
    /// Rank of the `(1, f(x))` rows reached.
    pub rank: usize,
    pub expected: usize,
    /// Sample points that raised the rank.
    pub witnesses: Vec<Vec<BigInt>>,
    pub samples: usize,
}

/// Sample the ball at `n_digits` and test whether `(1, f(x))` reaches rank
/// `n + 1`. A deficient rank is evidence, not a proof, of planarity.
pub fn nonplanarity_check<R: Rng + ?Sized>(
    f: &PolyMap,
    ball: &Ball,
    samples: usize,
    n_digits: u32,
    rng: &mut R,
) -> Result<NonplanarityReport> {
    if ball.dim() != f.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: f.input_dim(),
            found: ball.dim(),
        });
    }
    let expected = f.output_dim() + 1;
    let mut rows: Vec<Vec<BigRational>> = Vec::new();
    let mut witnesses = Vec::new();
    for _ in 0..samples {
        if rows.len() == expected {
            break;
        }
        // a digit truncation is itself a point of the ball
        let x = ball.sample(n_digits, rng)?;
        let v = f.eval_exact(x.coords())?;
        let mut row = vec![BigRational::one()];
        row.extend(v.iter().map(PExact::to_rational));
        rows.push(row);
        if rank_q(&rows) < rows.len() {
            rows.pop();
        } else {
            witnesses.push(x.coords().iter().map(|c| c.mantissa().clone()).collect());
        }
    }
    Ok(NonplanarityReport {
        full: rows.len() == expected,
        rank: rows.len(),
        expected,
        witnesses,
        samples,
    })
}

/// Parameters of the covolume-floor checker.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FloorCheckConfig {
    /// The rate `d > 0` in the floor `p^{-j d t}`.
    pub rate: BigRational,
    /// Bound on the total flow time.
    pub big_t: u32,
    pub ranks: Vec<usize>,
    /// Entry bound for enumerated integral bases.
    pub height: u32,
    /// Cap on modules per rank.
    pub max_modules: usize,
    /// Points sampled from the ball for the sup.
    pub samples: usize,
    pub n_digits: u32,
    /// Also compute every first cell through the dense matrix path.
    pub cross_check: bool,
}

/// A `(t, Δ)` pair whose sampled sup fell below the floor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FloorViolation {
    pub time: FlowTime,
    pub rank: usize,
    pub basis: Vec<Vec<BigInt>>,
    /// Largest certified `cov²` seen.
    pub sup_cov_sq: Option<BigRational>,
    /// `-j d t`.
    pub floor_exp: BigRational,
    pub contains_kernel: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FloorCheckReport {
    pub kernel: Vec<Vec<BigInt>>,
    pub times_checked: usize,
    pub modules: Vec<(usize, usize)>,
    pub cells: u64,
    /// Cells `(x, t, Δ)` whose covolume was not certified.
    pub uncertified_cells: u64,
    pub violations: Vec<FloorViolation>,
    /// Below the floor on certified cells, but with uncertified ones present.
    pub inconclusive: Vec<FloorViolation>,
    pub cross_checked: u64,
    pub cross_mismatches: u64,
}

impl FloorCheckReport {
    pub fn holds(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Sign-normalized Plücker vector of an integer basis.
fn plucker_key(rows: &[Vec<BigInt>]) -> Vec<BigInt> {
    let m = rows[0].len();
    let mut key: Vec<BigInt> = subsets(m, rows.len())
        .iter()
        .map(|s| {
            let minor: Vec<Vec<BigRational>> = rows
                .iter()
                .map(|r| {
                    s.iter()
                        .map(|&i| BigRational::from_integer(r[i].clone()))
                        .collect()
                })
                .collect();
            rational_det(minor).to_integer()
        })
        .collect();
    if key
        .iter()
        .find(|x| !x.is_zero())
        .is_some_and(|x| x.is_negative())
    {
        key.iter_mut().for_each(|x| *x = -x.clone());
    }
    key
}

fn rational_det(mut a: Vec<Vec<BigRational>>) -> BigRational {
    let k = a.len();
    let mut det = BigRational::one();
    for c in 0..k {
        let Some(piv) = (c..k).find(|&i| !a[i][c].is_zero()) else {
            return BigRational::zero();
        };
        if piv != c {
            a.swap(piv, c);
            det = -det;
        }
        det *= a[c][c].clone();
        for i in c + 1..k {
            let f = &a[i][c] / &a[c][c];
            for j in c..k {
                let d = &f * &a[c][j];
                a[i][j] -= d;
            }
        }
    }
    det
}

/// Primitive rank-`j` submodules of `D^m` spanned by small integer vectors,
/// deduplicated by Plücker coordinates. `seed` vectors come first.
pub fn low_height_modules(
    p: Prime,
    m: usize,
    j: usize,
    height: u32,
    max_modules: usize,
    seed: &[Vec<BigInt>],
) -> Vec<PrimitiveModule> {
    let h = height as i64;
    let mut vecs: Vec<Vec<BigInt>> = seed.to_vec();
    let side = 2 * h + 1;
    for idx in 0..side.pow(m as u32) {
        let mut r = idx;
        let mut cur = vec![0i64; m];
        for c in cur.iter_mut().rev() {
            *c = r % side - h;
            r /= side;
        }
        if cur.iter().find(|&&x| x != 0).is_some_and(|&x| x > 0) {
            let v: Vec<BigInt> = cur.iter().map(|&x| BigInt::from(x)).collect();
            if !vecs.contains(&v) {
                vecs.push(v);
            }
        }
    }
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for s in subsets(vecs.len(), j) {
        if out.len() >= max_modules {
            break;
        }
        let rows: Vec<Vec<BigInt>> = s.iter().map(|&i| vecs[i].clone()).collect();
        let rat: Vec<Vec<BigRational>> = rows
            .iter()
            .map(|r| {
                r.iter()
                    .map(|x| BigRational::from_integer(x.clone()))
                    .collect()
            })
            .collect();
        if rank_q(&rat) < j {
            continue;
        }
        let sat = saturate(&rows);
        if !seen.insert(plucker_key(&sat)) {
            continue;
        }
        let basis = sat
            .into_iter()
            .map(|r| r.into_iter().map(|x| PExact::from_int(p, x)).collect())
            .collect();
        if let Ok(d) = PrimitiveModule::new(p, basis) {
            out.push(d);
        }
    }
    out
}

fn in_span(basis: &[Vec<BigInt>], v: &[BigInt]) -> bool {
    let mut rows: Vec<Vec<BigRational>> = basis
        .iter()
        .map(|r| {
            r.iter()
                .map(|x| BigRational::from_integer(x.clone()))
                .collect()
        })
        .collect();
    let k = rank_q(&rows);
    rows.push(
        v.iter()
            .map(|x| BigRational::from_integer(x.clone()))
            .collect(),
    );
    rank_q(&rows) == k
}

/// Bounded evidence for the covolume floor along `f` on `ball`.
pub fn floor_condition_check<R: Rng + ?Sized>(
    f: &PolyMap,
    ball: &Ball,
    cfg: &FloorCheckConfig,
    rng: &mut R,
) -> Result<FloorCheckReport> {
    if !cfg.rate.is_positive() {
        return Err(Error::InvalidInput("rate must be positive".into()));
    }
    let p = f.prime();
    let n = f.output_dim();
    let m = n + 1;
    if let Some(&j) = cfg.ranks.iter().find(|&&j| j == 0 || j > m) {
        return Err(Error::OutOfRange(format!("rank {j} outside 1..={m}")));
    }
    let kernel = rational_kernel(f);
    let points = (0..cfg.samples.max(1))
        .map(|_| {
            ball.sample(cfg.n_digits, rng)
                .and_then(|x| f.eval_point(&x))
        })
        .collect::<Result<Vec<_>>>()?;
    let times = flow_times_up_to(n, cfg.big_t);
    let mut report = FloorCheckReport {
        kernel: kernel.clone(),
        times_checked: times.len(),
        modules: Vec::new(),
        cells: 0,
        uncertified_cells: 0,
        violations: Vec::new(),
        inconclusive: Vec::new(),
        cross_checked: 0,
        cross_mismatches: 0,
    };
    let mut by_rank = Vec::new();
    for &j in &cfg.ranks {
        let mods = low_height_modules(p, m, j, cfg.height, cfg.max_modules, &kernel);
        report.modules.push((j, mods.len()));
        by_rank.push((j, mods));
    }
    for t in &times {
        for (j, mods) in &by_rank {
            let floor_exp = -(&cfg.rate * BigInt::from(*j as u64 * t.total() as u64));
            for d in mods {
                let mut best: Option<BigRational> = None;
                let mut uncertified = false;
                let mut ok = false;
                for (xi, y) in points.iter().enumerate() {
                    let l = LatticeDescription::new(y.clone(), t.clone())?;
                    let c = covolume(&l, d)?;
                    report.cells += 1;
                    if cfg.cross_check && xi == 0 {
                        let rows = d
                            .basis()
                            .iter()
                            .map(|b| apply_dense(&l, b))
                            .collect::<Result<Vec<_>>>()?;
                        let w = wedge(&rows)?;
                        report.cross_checked += 1;
                        if w.point.inf_norm_sq() != c.inf_sq
                            || w.point.padic_norm().value != c.padic.value
                        {
                            report.cross_mismatches += 1;
                        }
                    }
                    if !c.certified() {
                        report.uncertified_cells += 1;
                        uncertified = true;
                        continue;
                    }
                    let v = c.value_sq(p);
                    if cmp_p_power(p, &v, &(&floor_exp * BigInt::from(2)))
                        != std::cmp::Ordering::Less
                    {
                        ok = true;
                        break;
                    }
                    if best.as_ref().is_none_or(|b| &v > b) {
                        best = Some(v);
                    }
                }
                if ok {
                    continue;
                }
                let basis = d.integer_basis();
                let v = FloorViolation {
                    time: t.clone(),
                    rank: *j,
                    contains_kernel: kernel.iter().any(|k| in_span(&basis, k)),
                    basis,
                    sup_cov_sq: best,
                    floor_exp: floor_exp.clone(),
                };
                if uncertified {
                    report.inconclusive.push(v);
                } else {
                    report.violations.push(v);
                }
            }
        }
    }
    Ok(report)
}
