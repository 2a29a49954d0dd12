//! Textual constructors for points, maps, rationals and lists.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use sadic::dioph::{liouville_point, LiouvilleRule};
use sadic::geometry::{moment_curve, PolyMap};
use sadic::{PExact, PadicPoint, Prime};

use crate::config::SessionConfig;

pub fn rational(s: &str) -> Result<BigRational, String> {
    let s = s.trim();
    let bad = || format!("not a rational: `{s}`");
    match s.split_once('/') {
        Some((a, b)) => {
            let a: BigInt = a.trim().parse().map_err(|_| bad())?;
            let b: BigInt = b.trim().parse().map_err(|_| bad())?;
            if b.is_zero() {
                return Err(bad());
            }
            Ok(BigRational::new(a, b))
        }
        None => Ok(BigRational::from_integer(s.parse().map_err(|_| bad())?)),
    }
}

/// `123`, `1e4` or `2^48`.
pub fn integer(s: &str) -> Result<BigInt, String> {
    let s = s.trim();
    let bad = || format!("not an integer: `{s}`");
    if let Some((m, e)) = s.split_once(['e', 'E']) {
        let m: BigInt = m.parse().map_err(|_| bad())?;
        let e: u32 = e.parse().map_err(|_| bad())?;
        return Ok(m * num_traits::pow(BigInt::from(10), e as usize));
    }
    if let Some((b, e)) = s.split_once('^') {
        let b: BigInt = b.parse().map_err(|_| bad())?;
        let e: u32 = e.parse().map_err(|_| bad())?;
        return Ok(num_traits::pow(b, e as usize));
    }
    s.parse().map_err(|_| bad())
}

pub fn list<T>(s: &str, f: impl Fn(&str) -> Result<T, String>) -> Result<Vec<T>, String> {
    s.split(',')
        .filter(|x| !x.trim().is_empty())
        .map(|x| f(x.trim()))
        .collect()
}

/// `a..b` (exclusive) or a comma list.
pub fn int_range(s: &str) -> Result<Vec<i64>, String> {
    if let Some((a, b)) = s.split_once("..") {
        let a: i64 = a.trim().parse().map_err(|_| format!("bad range `{s}`"))?;
        let b: i64 = b.trim().parse().map_err(|_| format!("bad range `{s}`"))?;
        return Ok((a..b).collect());
    }
    list(s, |x| {
        x.parse().map_err(|_| format!("not an integer: `{x}`"))
    })
}

pub fn to_pexact(p: Prime, r: &BigRational) -> Result<PExact, String> {
    PExact::from_rational(p, r).ok_or_else(|| format!("{r} is not in Z[1/{p}]"))
}

/// Point constructors:
/// `zero[:n]`, `literal:c1,c2,…` (rationals in `Z[1/p]`, exact),
/// `digits:d1,d2,…` (one digit string per coordinate, least significant first),
/// `haar:n[:seed]`, `liouville:rule[,rule…]` (rules `b^k`, `k!`, `0`) and
/// `curve:<map>@x1,x2,…`.
pub fn point(spec: &str, s: &SessionConfig) -> Result<PadicPoint, String> {
    let p = s.prime();
    let n_digits = s.precision;
    let (tag, rest) = spec.split_once(':').unwrap_or((spec, ""));
    let err = |e: sadic::Error| e.to_string();
    match tag {
        "zero" => {
            let n = if rest.is_empty() {
                s.n
            } else {
                rest.parse()
                    .map_err(|_| format!("bad dimension `{rest}`"))?
            };
            Ok(PadicPoint::zero(p, n))
        }
        "literal" => {
            let coords = list(rest, |x| rational(x).and_then(|r| to_pexact(p, &r)))?;
            if coords.is_empty() {
                return Err("literal point needs coordinates".into());
            }
            PadicPoint::exact(p, coords).map_err(err)
        }
        "digits" => {
            let digits: Vec<Vec<u32>> = list(rest, |x| {
                x.chars()
                    .map(|c| c.to_digit(36).ok_or_else(|| format!("bad digit `{c}`")))
                    .collect()
            })?;
            if digits.is_empty() {
                return Err("digit point needs coordinates".into());
            }
            if let Some(d) = digits.iter().find(|d| d.len() as u32 > n_digits) {
                return Err(format!(
                    "digit string of length {} exceeds N = {n_digits}",
                    d.len()
                ));
            }
            PadicPoint::from_digits(p, &digits).map_err(err)
        }
        "haar" => {
            let mut it = rest.split(':');
            let n: usize = it
                .next()
                .and_then(|x| x.parse().ok())
                .ok_or("haar needs `haar:n[:seed]`")?;
            let seed = match it.next() {
                Some(x) => x.parse().map_err(|_| format!("bad seed `{x}`"))?,
                None => s.seed,
            };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            Ok(PadicPoint::haar(p, n, n_digits, &mut rng))
        }
        "liouville" => {
            let rules = list(rest, |x| LiouvilleRule::parse(x).map_err(|e| e.to_string()))?;
            if rules.is_empty() {
                return Err("liouville needs at least one rule".into());
            }
            liouville_point(p, &rules, n_digits).map_err(err)
        }
        "curve" => {
            let (m, x) = rest
                .rsplit_once('@')
                .ok_or("curve needs `curve:<map>@x1,…`")?;
            let f = map(m, p)?;
            let xs = list(x, |v| rational(v).and_then(|r| to_pexact(p, &r)))?;
            let y = f.eval_exact(&xs).map_err(err)?;
            PadicPoint::exact(p, y).map_err(err)
        }
        _ => Err(format!("unknown point spec `{spec}`")),
    }
}

/// Map constructors: `moment:n`, `power:k` (scalar `x^k`), `diag:n`
/// (`x ↦ (x, …, x)`), `poly:<expr>[;<expr>…]` (univariate in `x`, e.g.
/// `x^2-x;1/2x^3`) and `file:path`.
pub fn map(spec: &str, p: Prime) -> Result<PolyMap, String> {
    let (tag, rest) = spec
        .split_once(':')
        .ok_or_else(|| format!("bad map spec `{spec}`"))?;
    let num = |x: &str| x.parse::<u32>().map_err(|_| format!("bad number `{x}`"));
    let err = |e: sadic::Error| e.to_string();
    match tag {
        "moment" => moment_curve(p, num(rest)? as usize).map_err(err),
        "power" => PolyMap::parse(p, &format!("dims 1 1\n0 {} 1 0\n", num(rest)?)).map_err(err),
        "diag" => {
            let n = num(rest)?;
            if n == 0 {
                return Err("diag needs n >= 1".into());
            }
            let mut text = format!("dims 1 {n}\n");
            for i in 0..n {
                text.push_str(&format!("{i} 1 1 0\n"));
            }
            PolyMap::parse(p, &text).map_err(err)
        }
        "poly" => {
            let mut text = String::new();
            let coords: Vec<&str> = rest.split(';').collect();
            text.push_str(&format!("dims 1 {}\n", coords.len()));
            for (i, c) in coords.iter().enumerate() {
                for (k, coef) in univariate(c)? {
                    let c = to_pexact(p, &coef)?;
                    text.push_str(&format!("{i} {k} {} {}\n", c.mantissa(), c.exp()));
                }
            }
            PolyMap::parse(p, &text).map_err(err)
        }
        "file" => {
            let text = std::fs::read_to_string(rest).map_err(|e| format!("{rest}: {e}"))?;
            PolyMap::parse(p, &text).map_err(err)
        }
        _ => Err(format!("unknown map spec `{spec}`")),
    }
}

/// Terms `(k, c)` of a polynomial like `3x^2 - x + 1/2`.
fn univariate(s: &str) -> Result<Vec<(u32, BigRational)>, String> {
    let s: String = s.chars().filter(|c| !c.is_whitespace()).collect();
    if s.is_empty() {
        return Err("empty polynomial".into());
    }
    let mut terms: Vec<String> = Vec::new();
    for (i, ch) in s.char_indices() {
        if (ch == '+' || ch == '-') && i > 0 && !s[..i].ends_with('^') {
            terms.push(String::new());
        }
        if terms.is_empty() {
            terms.push(String::new());
        }
        terms.last_mut().unwrap().push(ch);
    }
    let mut out: Vec<(u32, BigRational)> = Vec::new();
    for t in terms {
        let (neg, body) = match t.strip_prefix('-') {
            Some(b) => (true, b),
            None => (false, t.strip_prefix('+').unwrap_or(&t)),
        };
        let (coef, k) = match body.split_once('x') {
            None => (rational(body)?, 0),
            Some((c, e)) => {
                let c = c.strip_suffix('*').unwrap_or(c);
                let c = if c.is_empty() {
                    BigRational::one()
                } else {
                    rational(c)?
                };
                let k = match e {
                    "" => 1,
                    _ => e
                        .strip_prefix('^')
                        .and_then(|k| k.parse().ok())
                        .ok_or_else(|| format!("bad term `{t}`"))?,
                };
                (c, k)
            }
        };
        let coef = if neg { -coef } else { coef };
        match out.iter_mut().find(|(j, _)| *j == k) {
            Some((_, c)) => *c += coef,
            None => out.push((k, coef)),
        }
    }
    out.retain(|(_, c)| !c.is_zero());
    Ok(out)
}
