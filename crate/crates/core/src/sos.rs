//! Sum-of-squares constraints via Gram matrices.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{dim_err, Error, Result};
use crate::poly::{grlex_cmp, monomial_basis, monomial_mul, monomial_name, Monomial, Polynomial};
use crate::sdp::{BlockId, ConicProgram, LinExpr};

/// Polynomial whose coefficients are affine in decision variables.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamPoly {
    nvars: usize,
    terms: BTreeMap<Monomial, LinExpr>,
}

impl ParamPoly {
    pub fn zero(nvars: usize) -> Self {
        Self {
            nvars,
            terms: BTreeMap::new(),
        }
    }

    pub fn from_poly(p: &Polynomial) -> Self {
        let mut out = Self::zero(p.nvars());
        out.add_poly(p, 1.0);
        out
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    fn slot(&mut self, m: &Monomial) -> &mut LinExpr {
        self.terms.entry(m.clone()).or_default()
    }

    /// `self += s * p`.
    pub fn add_poly(&mut self, p: &Polynomial, s: f64) {
        assert_eq!(p.nvars(), self.nvars, "ring mismatch");
        for (m, c) in p.terms() {
            self.slot(m).add_constant(s * c);
        }
        self.prune();
    }

    /// `self += p * e` for a fixed polynomial and an affine expression.
    pub fn add_poly_times(&mut self, p: &Polynomial, e: &LinExpr) {
        assert_eq!(p.nvars(), self.nvars, "ring mismatch");
        for (m, c) in p.terms() {
            self.slot(m).add_scaled(e, c);
        }
        self.prune();
    }

    pub fn add(&mut self, other: &ParamPoly, s: f64) {
        assert_eq!(other.nvars, self.nvars, "ring mismatch");
        for (m, e) in &other.terms {
            self.slot(m).add_scaled(e, s);
        }
        self.prune();
    }

    fn prune(&mut self) {
        self.terms
            .retain(|_, e| !(e.terms.is_empty() && e.constant == 0.0));
    }

    pub fn coeff(&self, m: &[u32]) -> LinExpr {
        self.terms.get(m).cloned().unwrap_or_default()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Monomial, &LinExpr)> {
        self.terms.iter()
    }

    pub fn degree(&self) -> u32 {
        self.terms
            .keys()
            .map(|m| m.iter().sum())
            .max()
            .unwrap_or(0)
    }

    /// Variables with a nonzero exponent in some term.
    pub fn used_vars(&self) -> Vec<usize> {
        let mut s = BTreeSet::new();
        for m in self.terms.keys() {
            for (i, &e) in m.iter().enumerate() {
                if e > 0 {
                    s.insert(i);
                }
            }
        }
        s.into_iter().collect()
    }

    /// Fixes the decision variables.
    pub fn instantiate(&self, values: &[f64]) -> Polynomial {
        Polynomial::from_terms(
            self.nvars,
            self.terms.iter().map(|(m, e)| (m.clone(), e.eval(values))),
        )
        .expect("consistent ring")
    }
}

/// One coefficient-matching equation `sum w * Q[a][b] = coeff`.
#[derive(Clone, Debug)]
pub struct MatchRow {
    pub monomial: Monomial,
    pub pairs: Vec<(usize, usize, f64)>,
    pub coeff: LinExpr,
}

/// `p(w) = m(w)' Q m(w)` with `Q` psd, expressed as linear equations.
#[derive(Clone, Debug)]
pub struct SosConstraint {
    pub nvars: usize,
    /// Basis after pruning; indexes the Gram block.
    pub basis: Vec<Monomial>,
    /// Basis as requested, sorted.
    pub requested: Vec<Monomial>,
    /// Basis monomials removed because they cannot carry any weight.
    pub pruned: Vec<Monomial>,
    pub rows: Vec<MatchRow>,
    pub gram: Option<BlockId>,
}

/// Default basis: all monomials up to half the degree in the variables of `p`.
pub fn default_basis(p: &ParamPoly) -> Vec<Monomial> {
    monomial_basis(p.nvars, &p.used_vars(), p.degree().div_ceil(2))
}

pub fn compile_sos(p: &ParamPoly, basis: Option<Vec<Monomial>>) -> Result<SosConstraint> {
    let mut basis = basis.unwrap_or_else(|| default_basis(p));
    if basis.iter().any(|m| m.len() != p.nvars) {
        return dim_err("basis monomials do not match the polynomial ring");
    }
    basis.sort_by(|a, b| grlex_cmp(a, b));
    basis.dedup();
    let requested = basis.clone();

    // A basis element whose square can only be produced by itself, and whose
    // square has coefficient exactly zero, forces a zero Gram row.
    let mut pruned = Vec::new();
    loop {
        let mut counts: BTreeMap<Monomial, usize> = BTreeMap::new();
        for a in 0..basis.len() {
            for b in a..basis.len() {
                *counts.entry(monomial_mul(&basis[a], &basis[b])).or_insert(0) += 1;
            }
        }
        let drop = basis.iter().position(|m| {
            let sq = monomial_mul(m, m);
            counts[&sq] == 1 && !p.terms.contains_key(&sq)
        });
        match drop {
            Some(i) => pruned.push(basis.remove(i)),
            None => break,
        }
    }

    let mut products: BTreeMap<Monomial, Vec<(usize, usize, f64)>> = BTreeMap::new();
    for a in 0..basis.len() {
        for b in a..basis.len() {
            let w = if a == b { 1.0 } else { 2.0 };
            products
                .entry(monomial_mul(&basis[a], &basis[b]))
                .or_default()
                .push((a, b, w));
        }
    }
    let mut rows = Vec::new();
    for (m, e) in &p.terms {
        if !products.contains_key(m) {
            if e.terms.is_empty() {
                return Err(Error::UncoveredMonomial(monomial_name(m)));
            }
            rows.push(MatchRow {
                monomial: m.clone(),
                pairs: Vec::new(),
                coeff: e.clone(),
            });
        }
    }
    for (m, pairs) in products {
        rows.push(MatchRow {
            coeff: p.coeff(&m),
            monomial: m,
            pairs,
        });
    }
    rows.sort_by(|a, b| grlex_cmp(&a.monomial, &b.monomial));
    Ok(SosConstraint {
        nvars: p.nvars,
        basis,
        requested,
        pruned,
        rows,
        gram: None,
    })
}

impl SosConstraint {
    /// Declares the Gram block and the matching equalities in `prog`.
    pub fn emit(&mut self, prog: &mut ConicProgram, name: &str) -> BlockId {
        let g = prog.add_psd(name, self.basis.len());
        for row in &self.rows {
            let mut e = row.coeff.scaled(-1.0);
            for &(a, b, w) in &row.pairs {
                e.add_term(prog.var(g, a, b), w);
            }
            prog.add_equality(e, format!("{name}[{}]", monomial_name(&row.monomial)));
        }
        self.gram = Some(g);
        g
    }

    /// Gram matrix over the requested basis, zero on pruned monomials.
    pub fn full_gram(&self, gram: &DMatrix<f64>) -> DMatrix<f64> {
        let idx = self.active_indices();
        let n = self.requested.len();
        DMatrix::from_fn(n, n, |i, j| match (idx.iter().position(|&k| k == i), idx.iter().position(|&k| k == j)) {
            (Some(a), Some(b)) => gram[(a, b)],
            _ => 0.0,
        })
    }

    fn active_indices(&self) -> Vec<usize> {
        self.basis
            .iter()
            .map(|m| self.requested.iter().position(|r| r == m).expect("active subset"))
            .collect()
    }

    /// `m(w)' Q m(w)` as an explicit polynomial.
    pub fn gram_polynomial(&self, gram: &DMatrix<f64>) -> Polynomial {
        let mut p = Polynomial::zero(self.nvars);
        for a in 0..self.basis.len() {
            for b in 0..self.basis.len() {
                p.add_term(monomial_mul(&self.basis[a], &self.basis[b]), gram[(a, b)]);
            }
        }
        p
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SosReport {
    pub min_eigenvalue: f64,
    pub max_matching_residual: f64,
    pub min_sampled_value: f64,
    pub accepted: bool,
}

/// Post-checks a solved Gram matrix, given over either the pruned or the
/// requested basis; `values` fixes the decision variables appearing in the
/// coefficients. Samples are drawn uniformly from `[-radius, radius]^n`.
pub fn verify_sos_certificate(
    c: &SosConstraint,
    p: &ParamPoly,
    gram: &DMatrix<f64>,
    values: &[f64],
    samples: usize,
    radius: f64,
    seed: u64,
) -> SosReport {
    let n = c.basis.len();
    let full = c.requested.len();
    let mut max_res: f64 = 0.0;
    let shape_ok = gram.shape() == (n, n) || gram.shape() == (full, full);
    let finite = gram.iter().all(|v| v.is_finite());
    let (gram, min_eig) = if !shape_ok || !finite {
        (DMatrix::zeros(n, n), f64::NEG_INFINITY)
    } else {
        let sym = (gram + gram.transpose()) * 0.5;
        let min_eig = if sym.nrows() == 0 {
            f64::INFINITY
        } else {
            SymmetricEigen::new(sym.clone()).eigenvalues.min()
        };
        if sym.nrows() == n {
            (sym, min_eig)
        } else {
            // pruned rows must carry nothing
            let idx = c.active_indices();
            for i in 0..full {
                for j in 0..full {
                    if !idx.contains(&i) || !idx.contains(&j) {
                        max_res = max_res.max(sym[(i, j)].abs());
                    }
                }
            }
            (sym.select_rows(&idx).select_columns(&idx), min_eig)
        }
    };
    if min_eig.is_finite() || n == 0 {
        for row in &c.rows {
            let lhs: f64 = row.pairs.iter().map(|&(a, b, w)| w * gram[(a, b)]).sum();
            max_res = max_res.max((lhs - row.coeff.eval(values)).abs());
        }
    } else {
        max_res = f64::INFINITY;
    }
    let inst = p.instantiate(values);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut min_val = f64::INFINITY;
    for _ in 0..samples {
        let pt: Vec<f64> = (0..c.nvars).map(|_| rng.random_range(-radius..=radius)).collect();
        min_val = min_val.min(inst.eval(&pt).unwrap_or(f64::NAN));
    }
    SosReport {
        min_eigenvalue: min_eig,
        max_matching_residual: max_res,
        min_sampled_value: min_val,
        accepted: min_eig >= -1e-7 && max_res <= 1e-6,
    }
}
