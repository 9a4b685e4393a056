//! Sparse multivariate polynomials with real coefficients.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;

use crate::error::{dim_err, Result};

/// Exponent vector of a monomial.
pub type Monomial = Vec<u32>;

pub fn monomial_degree(m: &[u32]) -> u32 {
    m.iter().sum()
}

/// Graded lexicographic order: lower total degree first, then larger
/// exponent of earlier variables first (`1, x, y, x^2, xy, y^2, ...`).
pub fn grlex_cmp(a: &[u32], b: &[u32]) -> Ordering {
    monomial_degree(a)
        .cmp(&monomial_degree(b))
        .then_with(|| b.cmp(a))
}

pub fn monomial_mul(a: &[u32], b: &[u32]) -> Monomial {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

/// Human-readable monomial such as `w0^2*w3`.
pub fn monomial_name(m: &[u32]) -> String {
    let parts: Vec<String> = m
        .iter()
        .enumerate()
        .filter(|(_, &e)| e > 0)
        .map(|(i, &e)| {
            if e == 1 {
                format!("w{i}")
            } else {
                format!("w{i}^{e}")
            }
        })
        .collect();
    if parts.is_empty() {
        "1".into()
    } else {
        parts.join("*")
    }
}

/// All monomials of total degree `<= degree` in the listed variables of an
/// `nvars`-variable ring, in graded lexicographic order.
pub fn monomial_basis(nvars: usize, vars: &[usize], degree: u32) -> Vec<Monomial> {
    let mut out = Vec::new();
    for d in 0..=degree {
        let mut cur = vec![0u32; nvars];
        fill(vars, 0, d, &mut cur, &mut out);
    }
    out
}

fn fill(vars: &[usize], pos: usize, remaining: u32, cur: &mut Monomial, out: &mut Vec<Monomial>) {
    if pos == vars.len() {
        if remaining == 0 {
            out.push(cur.clone());
        }
        return;
    }
    if pos + 1 == vars.len() {
        cur[vars[pos]] = remaining;
        out.push(cur.clone());
        cur[vars[pos]] = 0;
        return;
    }
    for e in (0..=remaining).rev() {
        cur[vars[pos]] = e;
        fill(vars, pos + 1, remaining - e, cur, out);
    }
    cur[vars[pos]] = 0;
}

#[derive(Clone, Debug, PartialEq)]
pub struct Polynomial {
    nvars: usize,
    terms: BTreeMap<Monomial, f64>,
}

impl Polynomial {
    pub fn zero(nvars: usize) -> Self {
        Self {
            nvars,
            terms: BTreeMap::new(),
        }
    }

    pub fn constant(nvars: usize, c: f64) -> Self {
        let mut p = Self::zero(nvars);
        p.add_term(vec![0; nvars], c);
        p
    }

    /// The coordinate polynomial `w_i`.
    pub fn var(nvars: usize, i: usize) -> Self {
        let mut m = vec![0; nvars];
        m[i] = 1;
        let mut p = Self::zero(nvars);
        p.add_term(m, 1.0);
        p
    }

    /// `c^T w + c0`.
    pub fn affine(coeffs: &[f64], c0: f64) -> Self {
        let n = coeffs.len();
        let mut p = Self::constant(n, c0);
        for (i, &c) in coeffs.iter().enumerate() {
            let mut m = vec![0; n];
            m[i] = 1;
            p.add_term(m, c);
        }
        p
    }

    pub fn from_terms(nvars: usize, terms: impl IntoIterator<Item = (Monomial, f64)>) -> Result<Self> {
        let mut p = Self::zero(nvars);
        for (m, c) in terms {
            if m.len() != nvars {
                return dim_err(format!("monomial has {} exponents, ring has {nvars}", m.len()));
            }
            p.add_term(m, c);
        }
        Ok(p)
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Monomial, f64)> {
        self.terms.iter().map(|(m, &c)| (m, c))
    }

    pub fn coeff(&self, m: &[u32]) -> f64 {
        self.terms.get(m).copied().unwrap_or(0.0)
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn is_empty(&self) -> bool {
        self.is_zero()
    }

    pub fn degree(&self) -> u32 {
        self.terms.keys().map(|m| monomial_degree(m)).max().unwrap_or(0)
    }

    /// Adds `c * m`, dropping the term if it cancels exactly.
    pub fn add_term(&mut self, m: Monomial, c: f64) {
        debug_assert_eq!(m.len(), self.nvars);
        if c == 0.0 {
            return;
        }
        let entry = self.terms.entry(m);
        match entry {
            std::collections::btree_map::Entry::Vacant(v) => {
                v.insert(c);
            }
            std::collections::btree_map::Entry::Occupied(mut o) => {
                let s = *o.get() + c;
                if s == 0.0 {
                    o.remove();
                } else {
                    *o.get_mut() = s;
                }
            }
        }
    }

    fn check_ring(&self, other: &Self) -> Result<()> {
        if self.nvars != other.nvars {
            return dim_err(format!(
                "polynomials live in rings of {} and {} variables",
                self.nvars, other.nvars
            ));
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_ring(other)?;
        let mut out = self.clone();
        for (m, &c) in &other.terms {
            out.add_term(m.clone(), c);
        }
        Ok(out)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.add(&other.scale(-1.0))
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.check_ring(other)?;
        let mut out = Self::zero(self.nvars);
        for (ma, &ca) in &self.terms {
            for (mb, &cb) in &other.terms {
                out.add_term(monomial_mul(ma, mb), ca * cb);
            }
        }
        Ok(out)
    }

    pub fn scale(&self, s: f64) -> Self {
        let mut out = Self::zero(self.nvars);
        for (m, &c) in &self.terms {
            out.add_term(m.clone(), c * s);
        }
        out
    }

    pub fn pow(&self, e: u32) -> Result<Self> {
        let mut out = Self::constant(self.nvars, 1.0);
        for _ in 0..e {
            out = out.mul(self)?;
        }
        Ok(out)
    }

    pub fn eval(&self, point: &[f64]) -> Result<f64> {
        if point.len() != self.nvars {
            return dim_err(format!("point has {} coordinates, ring has {}", point.len(), self.nvars));
        }
        Ok(self
            .terms
            .iter()
            .map(|(m, &c)| {
                c * m
                    .iter()
                    .zip(point)
                    .map(|(&e, &x)| x.powi(e as i32))
                    .product::<f64>()
            })
            .sum())
    }

    /// Replaces each variable `w_i` by the polynomial `images[i]`; all
    /// images must share one ring, which becomes the ring of the result.
    pub fn substitute(&self, images: &[Polynomial]) -> Result<Self> {
        if images.len() != self.nvars {
            return dim_err(format!("{} images for {} variables", images.len(), self.nvars));
        }
        let target = images.first().map(|p| p.nvars).unwrap_or(0);
        if images.iter().any(|p| p.nvars != target) {
            return dim_err("substitution images live in different rings");
        }
        let mut out = Self::zero(target);
        let mut power_cache: BTreeMap<(usize, u32), Polynomial> = BTreeMap::new();
        for (m, &c) in &self.terms {
            let mut term = Self::constant(target, c);
            for (i, &e) in m.iter().enumerate() {
                if e == 0 {
                    continue;
                }
                let pw = match power_cache.get(&(i, e)) {
                    Some(p) => p.clone(),
                    None => {
                        let p = images[i].pow(e)?;
                        power_cache.insert((i, e), p.clone());
                        p
                    }
                };
                term = term.mul(&pw)?;
            }
            out = out.add(&term)?;
        }
        Ok(out)
    }

    /// Substitution by affine images `w_i -> rows[i] . y + offsets[i]`.
    pub fn substitute_affine(&self, rows: &[Vec<f64>], offsets: &[f64]) -> Result<Self> {
        if rows.len() != offsets.len() {
            return dim_err("affine map rows and offsets differ in length");
        }
        let images: Vec<Polynomial> = rows
            .iter()
            .zip(offsets)
            .map(|(r, &o)| Polynomial::affine(r, o))
            .collect();
        self.substitute(&images)
    }

    /// Largest absolute coefficient difference.
    pub fn max_coeff_diff(&self, other: &Self) -> f64 {
        let mut keys: Vec<&Monomial> = self.terms.keys().chain(other.terms.keys()).collect();
        keys.sort();
        keys.dedup();
        keys.into_iter()
            .map(|m| (self.coeff(m) - other.coeff(m)).abs())
            .fold(0.0, f64::max)
    }
}

impl fmt::Display for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        let mut ms: Vec<&Monomial> = self.terms.keys().collect();
        ms.sort_by(|a, b| grlex_cmp(a, b));
        for (k, m) in ms.into_iter().enumerate() {
            let c = self.terms[m];
            if k > 0 {
                write!(f, " + ")?;
            }
            write!(f, "{c}*{}", monomial_name(m))?;
        }
        Ok(())
    }
}
