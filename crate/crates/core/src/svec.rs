//! Vectors of `Q_S^m = (Q_p × R)^m` with exact `Z[1/p]` coordinates.
//!
//! Each place keeps its own coordinate vector plus a lazy diagonal scaling by
//! powers of `p`; the p-adic coordinates may also carry an error bound when
//! they were computed from a truncated point.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sarith::{cmp_p_power, CertifiedNorm, PExact, PNorm, Prime};

/// A vector of `Q_S^m`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SPoint {
    p: Prime,
    inf: Vec<PExact>,
    inf_scale: Vec<i64>,
    padic: Vec<PExact>,
    padic_scale: Vec<i64>,
    /// `|true_i - padic_i|_p <= p^{err_i}` before scaling.
    padic_err: Vec<Option<i64>>,
}

/// Content of an [`SPoint`]: `‖x^∞‖_∞ · ‖x^p‖_p`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Content {
    pub inf: BigRational,
    pub padic: CertifiedNorm,
}

impl Content {
    /// Value computed on the approximant.
    pub fn value(&self, p: Prime) -> BigRational {
        &self.inf * self.padic.value.to_rational(p)
    }

    /// Proven upper bound for the true content.
    pub fn upper(&self, p: Prime) -> BigRational {
        &self.inf * self.padic.upper().to_rational(p)
    }

    pub fn certified(&self) -> bool {
        self.padic.certified
    }

    /// Is the true content provably `<= p^r`?
    pub fn le_p_power(&self, p: Prime, r: &BigRational) -> bool {
        cmp_p_power(p, &self.upper(p), r) != std::cmp::Ordering::Greater
    }
}

impl SPoint {
    /// The diagonal embedding of a `Z[1/p]` vector.
    pub fn diagonal(p: Prime, coords: Vec<PExact>) -> Self {
        let m = coords.len();
        SPoint {
            p,
            inf: coords.clone(),
            inf_scale: vec![0; m],
            padic: coords,
            padic_scale: vec![0; m],
            padic_err: vec![None; m],
        }
    }

    /// Independent readings at the two places.
    pub fn from_places(
        p: Prime,
        inf: Vec<PExact>,
        padic: Vec<PExact>,
        padic_err: Vec<Option<i64>>,
    ) -> Result<Self> {
        let m = inf.len();
        if padic.len() != m || padic_err.len() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                found: padic.len(),
            });
        }
        Ok(SPoint {
            p,
            inf,
            inf_scale: vec![0; m],
            padic,
            padic_scale: vec![0; m],
            padic_err,
        })
    }

    /// Multiply the ∞-reading of coordinate `i` by `p^{inf[i]}` and the
    /// p-reading by `p^{padic[i]}` (on top of existing scalings).
    pub fn scaled(mut self, inf: &[i64], padic: &[i64]) -> Result<Self> {
        let m = self.dim();
        if inf.len() != m || padic.len() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                found: inf.len(),
            });
        }
        for i in 0..m {
            self.inf_scale[i] += inf[i];
            self.padic_scale[i] += padic[i];
        }
        Ok(self)
    }

    pub fn prime(&self) -> Prime {
        self.p
    }

    pub fn dim(&self) -> usize {
        self.inf.len()
    }

    /// Materialized ∞-reading.
    pub fn inf_reading(&self) -> Vec<PExact> {
        self.inf
            .iter()
            .zip(&self.inf_scale)
            .map(|(c, &s)| c.mul_p_pow(s))
            .collect()
    }

    /// Materialized p-reading with error exponents after scaling.
    pub fn padic_reading(&self) -> (Vec<PExact>, Vec<Option<i64>>) {
        let coords = self
            .padic
            .iter()
            .zip(&self.padic_scale)
            .map(|(c, &s)| c.mul_p_pow(s))
            .collect();
        let errs = self
            .padic_err
            .iter()
            .zip(&self.padic_scale)
            .map(|(e, &s)| e.map(|k| k - s))
            .collect();
        (coords, errs)
    }

    /// `max_i |x_i^∞|`.
    pub fn inf_norm(&self) -> BigRational {
        self.inf_reading()
            .iter()
            .map(PExact::norm_inf)
            .max()
            .unwrap_or_else(BigRational::zero)
    }

    /// Squared Euclidean norm at ∞.
    pub fn inf_norm_sq(&self) -> BigRational {
        self.inf_reading()
            .iter()
            .map(|c| {
                let r = c.to_rational();
                &r * &r
            })
            .fold(BigRational::zero(), |a, b| a + b)
    }

    /// `max_i |x_i^p|_p`, certified against the coordinate error bounds.
    pub fn padic_norm(&self) -> CertifiedNorm {
        let (coords, errs) = self.padic_reading();
        CertifiedNorm::max_of(
            coords
                .iter()
                .zip(&errs)
                .map(|(c, &e)| CertifiedNorm::from_error(c, e)),
        )
    }

    pub fn is_zero(&self) -> bool {
        self.inf.iter().all(PExact::is_zero)
            && self
                .padic
                .iter()
                .zip(&self.padic_err)
                .all(|(c, e)| c.is_zero() && e.is_none())
    }
}

/// `c(x)`: the product over both places of the per-place sup norms.
pub fn content(x: &SPoint) -> Result<Content> {
    if x.dim() == 0 {
        return Err(Error::InvalidInput("content of an empty vector".into()));
    }
    Ok(Content {
        inf: x.inf_norm(),
        padic: x.padic_norm(),
    })
}

/// Lexicographic `j`-subsets of `{0, …, m-1}`.
pub fn subsets(m: usize, j: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, m: usize, j: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == j {
            out.push(cur.clone());
            return;
        }
        for i in start..m {
            if m - i < j - cur.len() {
                break;
            }
            cur.push(i);
            rec(i + 1, m, j, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, m, j, &mut Vec::new(), &mut out);
    out
}

/// Exact determinant of a square `Z[1/p]` matrix.
pub fn det(p: Prime, rows: &[Vec<PExact>]) -> PExact {
    let k = rows.len();
    if k == 0 {
        return PExact::one(p);
    }
    if k <= 4 {
        return laplace(p, rows, &(0..k).collect::<Vec<_>>());
    }
    // Gaussian elimination over Q; the result lies in Z[1/p].
    let mut a: Vec<Vec<BigRational>> = rows
        .iter()
        .map(|r| r.iter().map(PExact::to_rational).collect())
        .collect();
    let mut d = BigRational::one();
    for c in 0..k {
        let Some(piv) = (c..k).find(|&r| !a[r][c].is_zero()) else {
            return PExact::zero(p);
        };
        if piv != c {
            a.swap(piv, c);
            d = -d;
        }
        let pv = a[c][c].clone();
        d *= &pv;
        for r in c + 1..k {
            let f = &a[r][c] / &pv;
            if f.is_zero() {
                continue;
            }
            for cc in c..k {
                let t = &f * &a[c][cc];
                a[r][cc] -= t;
            }
        }
    }
    PExact::from_rational(p, &d).expect("determinant of Z[1/p] matrix")
}

fn laplace(p: Prime, rows: &[Vec<PExact>], cols: &[usize]) -> PExact {
    let depth = rows.len() - cols.len();
    if cols.len() == 1 {
        return rows[depth][cols[0]].clone();
    }
    let mut acc = PExact::zero(p);
    for (idx, &c) in cols.iter().enumerate() {
        let entry = &rows[depth][c];
        if entry.is_zero() {
            continue;
        }
        let rest: Vec<usize> = cols.iter().copied().filter(|&x| x != c).collect();
        let term = entry * &laplace(p, rows, &rest);
        acc = if idx % 2 == 0 {
            &acc + &term
        } else {
            &acc - &term
        };
    }
    acc
}

/// `∧^j` of `j` vectors: Plücker coordinates over lexicographic subsets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WedgeVector {
    pub degree: usize,
    pub subsets: Vec<Vec<usize>>,
    pub point: SPoint,
}

impl WedgeVector {
    pub fn is_zero(&self) -> bool {
        self.point.is_zero()
    }

    /// Coordinate `w_I` at the ∞ place.
    pub fn inf_coord(&self, subset: &[usize]) -> Option<PExact> {
        let idx = self.subsets.iter().position(|s| s == subset)?;
        Some(self.point.inf_reading()[idx].clone())
    }
}

/// Wedge product of `basis`; coordinates are the `j × j` minors at each place.
pub fn wedge(basis: &[SPoint]) -> Result<WedgeVector> {
    let Some(first) = basis.first() else {
        return Err(Error::InvalidInput("wedge of an empty family".into()));
    };
    let p = first.prime();
    let m = first.dim();
    let j = basis.len();
    if let Some(b) = basis.iter().find(|b| b.dim() != m) {
        return Err(Error::DimensionMismatch {
            expected: m,
            found: b.dim(),
        });
    }
    if j > m {
        return Err(Error::InvalidInput(format!("{j} vectors in dimension {m}")));
    }
    let inf_rows: Vec<Vec<PExact>> = basis.iter().map(SPoint::inf_reading).collect();
    let (p_rows, p_errs): (Vec<_>, Vec<_>) = basis.iter().map(SPoint::padic_reading).unzip();
    let subs = subsets(m, j);
    let mut inf = Vec::with_capacity(subs.len());
    let mut padic = Vec::with_capacity(subs.len());
    let mut errs = Vec::with_capacity(subs.len());
    for s in &subs {
        let pick = |rows: &[Vec<PExact>]| -> Vec<Vec<PExact>> {
            rows.iter()
                .map(|r| s.iter().map(|&i| r[i].clone()).collect())
                .collect()
        };
        inf.push(det(p, &pick(&inf_rows)));
        padic.push(det(p, &pick(&p_rows)));
        errs.push(minor_error(&p_rows, &p_errs, s));
    }
    Ok(WedgeVector {
        degree: j,
        subsets: subs,
        point: SPoint::from_places(p, inf, padic, errs)?,
    })
}

/// Ultrametric bound on the error of a minor whose entries carry errors:
/// `max_{k,i} err_{k,i} · Π_{l≠k} U_{l,i}` with `U_{l,i}` the largest
/// entry-or-error bound of row `l` off column `i`.
fn minor_error(rows: &[Vec<PExact>], errs: &[Vec<Option<i64>>], cols: &[usize]) -> Option<i64> {
    // every Leibniz term carrying the error at (k, i) takes its other
    // factors from columns other than i
    let upper = |l: usize, skip: usize| -> PNorm {
        cols.iter()
            .filter(|&&c| c != skip)
            .map(|&c| {
                rows[l][c]
                    .norm_p()
                    .max(errs[l][c].map_or(PNorm::ZERO, PNorm::pow))
            })
            .max()
            .unwrap_or(PNorm::ZERO)
    };
    let mut worst = PNorm::ZERO;
    for (k, e) in errs.iter().enumerate() {
        for &i in cols {
            let Some(eki) = e[i] else { continue };
            let mut term = PNorm::pow(eki);
            for l in (0..rows.len()).filter(|&l| l != k) {
                term = term.mul(upper(l, i));
            }
            worst = worst.max(term);
        }
    }
    worst.exponent()
}

/// Dense matrix action `x ↦ A x` at each place; `a_p_err[i][j]` bounds the
/// error of `A_p[i][j]`. Used to cross-check structured transforms.
pub fn transform_dense(
    x: &[PExact],
    a_inf: &[Vec<PExact>],
    a_p: &[Vec<PExact>],
    a_p_err: &[Vec<Option<i64>>],
) -> Result<SPoint> {
    let Some(first) = x.first() else {
        return Err(Error::InvalidInput("empty vector".into()));
    };
    let p = first.prime();
    let apply = |a: &[Vec<PExact>]| -> Result<Vec<PExact>> {
        a.iter()
            .map(|row| {
                if row.len() != x.len() {
                    return Err(Error::DimensionMismatch {
                        expected: x.len(),
                        found: row.len(),
                    });
                }
                Ok(row
                    .iter()
                    .zip(x)
                    .fold(PExact::zero(p), |acc, (r, v)| &acc + &(r * v)))
            })
            .collect()
    };
    let inf = apply(a_inf)?;
    let padic = apply(a_p)?;
    let errs = a_p_err
        .iter()
        .map(|row| {
            row.iter()
                .zip(x)
                .filter_map(|(e, v)| Some(e.as_ref()? + v.norm_p().exponent()?))
                .max()
        })
        .collect();
    SPoint::from_places(p, inf, padic, errs)
}

/// Integer vector helper.
pub fn int_vec(p: Prime, v: &[i64]) -> Vec<PExact> {
    v.iter()
        .map(|&x| PExact::from_int(p, BigInt::from(x)))
        .collect()
}

/// Is `‖x^∞‖_∞ ≤ bound` for the squared-Euclidean convention? Helper used by
/// covolume comparisons: `sqrt(a) <= b` with `b >= 0`.
pub fn sqrt_le(a: &BigRational, b: &BigRational) -> bool {
    !b.is_negative() && *a <= b * b
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p(n: u32) -> Prime {
        Prime::new(n).unwrap()
    }

    fn rat(a: i64, b: i64) -> BigRational {
        BigRational::new(a.into(), b.into())
    }

    #[test]
    fn content_examples() {
        let x = SPoint::diagonal(p(3), int_vec(p(3), &[1, 3]));
        let c = content(&x).unwrap();
        assert_eq!(c.inf, rat(3, 1));
        assert_eq!(c.padic.value, PNorm::ONE);
        assert_eq!(c.value(p(3)), rat(3, 1));

        let z = SPoint::diagonal(p(3), int_vec(p(3), &[0, 0]));
        assert_eq!(content(&z).unwrap().value(p(3)), rat(0, 1));

        let h = PExact::canonicalize(p(2), 1.into(), 1);
        let x = SPoint::diagonal(p(2), vec![h, PExact::from_int(p(2), 3)]);
        let c = content(&x).unwrap();
        assert_eq!(c.inf, rat(3, 1));
        assert_eq!(c.padic.value, PNorm::pow(1));
        assert_eq!(c.value(p(2)), rat(6, 1));
    }

    #[test]
    fn empty_content_is_an_error() {
        let x = SPoint::diagonal(p(2), vec![]);
        assert!(content(&x).is_err());
    }

    #[test]
    fn wedge_examples() {
        let q = p(5);
        let e = |v: &[i64]| SPoint::diagonal(q, int_vec(q, v));
        let w = wedge(&[e(&[1, 0, 0]), e(&[0, 1, 0])]).unwrap();
        assert_eq!(w.subsets, vec![vec![0, 1], vec![0, 2], vec![1, 2]]);
        assert_eq!(w.point.inf_reading(), int_vec(q, &[1, 0, 0]));

        let w = wedge(&[e(&[1, 0, 0]), e(&[1, 0, 0])]).unwrap();
        assert!(w.is_zero());

        let w = wedge(&[e(&[1, 2, 0]), e(&[0, 1, 5])]).unwrap();
        assert_eq!(w.point.inf_reading(), int_vec(q, &[1, 5, 10]));
        assert_eq!(w.point.padic_reading().0, int_vec(q, &[1, 5, 10]));
    }

    #[test]
    fn scaling_one_place_only() {
        let q = p(3);
        let x = SPoint::diagonal(q, int_vec(q, &[2, 7]));
        let c0 = content(&x).unwrap();
        let y = x.scaled(&[-2, -2], &[0, 0]).unwrap();
        let c1 = content(&y).unwrap();
        assert_eq!(c1.inf, c0.inf * rat(1, 9));
        assert_eq!(c1.padic, c0.padic);
    }

    #[test]
    fn minor_errors_propagate() {
        let q = p(3);
        let a = SPoint::from_places(
            q,
            int_vec(q, &[1, 0]),
            int_vec(q, &[0, 1]),
            vec![Some(-5), None],
        )
        .unwrap();
        let b = SPoint::diagonal(q, int_vec(q, &[0, 3]));
        let w = wedge(&[a, b]).unwrap();
        // minor = 0*3 - 1*0 = 0 at p; error <= 3^-5 * |3|_p = 3^-6
        let n = w.point.padic_norm();
        assert!(!n.certified);
        assert_eq!(n.bound, PNorm::pow(-6));
    }

    fn det_rational(m: &[Vec<i64>]) -> BigRational {
        let v: Vec<Vec<PExact>> = m.iter().map(|r| int_vec(p(7), r)).collect();
        det(p(7), &v).to_rational()
    }

    #[test]
    fn big_determinant_matches_laplace() {
        let m = vec![
            vec![2, 1, 0, 3, 1],
            vec![1, -1, 4, 0, 2],
            vec![0, 5, 1, 1, -3],
            vec![3, 0, 2, -2, 1],
            vec![1, 1, 1, 1, 1],
        ];
        let got = det_rational(&m);
        // expansion along the last row by 4x4 minors
        let mut acc = BigRational::zero();
        for c in 0..5 {
            let minor: Vec<Vec<i64>> = m[..4]
                .iter()
                .map(|r| {
                    r.iter()
                        .enumerate()
                        .filter(|(i, _)| *i != c)
                        .map(|(_, &x)| x)
                        .collect()
                })
                .collect();
            let s = if (4 + c) % 2 == 0 { 1 } else { -1 };
            acc += BigRational::from_integer((s * m[4][c]).into()) * det_rational(&minor);
        }
        assert_eq!(got, acc);
    }

    proptest! {
        #[test]
        fn grassmann_plucker_holds(a in proptest::collection::vec(-9i64..9, 4),
                                   b in proptest::collection::vec(-9i64..9, 4)) {
            let q = p(3);
            let w = wedge(&[SPoint::diagonal(q, int_vec(q, &a)), SPoint::diagonal(q, int_vec(q, &b))]).unwrap();
            let c: Vec<BigRational> = w.point.inf_reading().iter().map(PExact::to_rational).collect();
            // subsets: 01 02 03 12 13 23
            let rel = &c[0] * &c[5] - &c[1] * &c[4] + &c[2] * &c[3];
            prop_assert!(rel.is_zero());
            prop_assert_eq!(c.len(), 6);
        }

        #[test]
        fn unimodular_change_of_basis_keeps_content(
            a in proptest::collection::vec(-9i64..9, 3),
            b in proptest::collection::vec(-9i64..9, 3),
            k in -5i64..5, l in -5i64..5, swap in any::<bool>(),
        ) {
            let q = p(2);
            let sp = |v: &[i64]| SPoint::diagonal(q, int_vec(q, v));
            let w0 = wedge(&[sp(&a), sp(&b)]).unwrap();
            // (a, b) -> (a + k b, b) -> (a', b + l a')
            let a1: Vec<i64> = a.iter().zip(&b).map(|(x, y)| x + k * y).collect();
            let b1: Vec<i64> = b.iter().zip(&a1).map(|(y, x)| y + l * x).collect();
            let (r0, r1) = if swap { (b1, a1) } else { (a1, b1) };
            let w1 = wedge(&[sp(&r0), sp(&r1)]).unwrap();
            prop_assert_eq!(content(&w0.point).unwrap(), content(&w1.point).unwrap());
        }
    }

    #[test]
    fn unimodular_basis_of_full_space_has_content_one() {
        let q = p(3);
        let rows = [[1, 2, 3], [0, 1, 4], [0, 0, 1]];
        let basis: Vec<SPoint> = rows
            .iter()
            .map(|r| SPoint::diagonal(q, int_vec(q, r)))
            .collect();
        let w = wedge(&basis).unwrap();
        assert_eq!(content(&w.point).unwrap().value(q), BigRational::one());
    }
}
