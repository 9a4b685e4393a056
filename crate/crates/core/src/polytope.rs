//! Polytopes `{x : n_i'(x - center) + offset_i >= 0}` and the problem-sets file.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::sdp::{solve, ConicProgram, Settings, SolveStatus};

#[derive(Clone, Debug, PartialEq)]
pub struct Polytope {
    /// One facet normal per row.
    pub normals: DMatrix<f64>,
    pub center: DVector<f64>,
    pub offsets: DVector<f64>,
}

/// Result of minimizing a linear function over a polytope.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Support {
    Bounded(f64),
    Unbounded,
    Empty,
}

impl Polytope {
    pub fn new(normals: DMatrix<f64>, center: DVector<f64>, offsets: DVector<f64>) -> Result<Self> {
        if normals.ncols() != center.len() || normals.nrows() != offsets.len() {
            return dim_err(format!(
                "polytope with {}x{} normals, center of length {}, {} offsets",
                normals.nrows(),
                normals.ncols(),
                center.len(),
                offsets.len()
            ));
        }
        if normals.iter().chain(center.iter()).chain(offsets.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Invalid("polytope data must be finite".into()));
        }
        Ok(Self {
            normals,
            center,
            offsets,
        })
    }

    /// Unit offsets, as for the defining sets.
    pub fn with_unit_offsets(normals: DMatrix<f64>, center: DVector<f64>) -> Result<Self> {
        let m = normals.nrows();
        Self::new(normals, center, DVector::from_element(m, 1.0))
    }

    /// Axis-aligned box `|x_j - center_j| <= half_widths_j`.
    pub fn boxed(center: DVector<f64>, half_widths: &[f64]) -> Result<Self> {
        let n = center.len();
        if half_widths.len() != n {
            return dim_err("box half-widths do not match the center");
        }
        if half_widths.iter().any(|&h| !(h > 0.0)) {
            return Err(Error::Invalid("box half-widths must be positive".into()));
        }
        let mut normals = DMatrix::zeros(2 * n, n);
        for j in 0..n {
            normals[(2 * j, j)] = -1.0 / half_widths[j];
            normals[(2 * j + 1, j)] = 1.0 / half_widths[j];
        }
        Self::with_unit_offsets(normals, center)
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn n_facets(&self) -> usize {
        self.normals.nrows()
    }

    pub fn normal(&self, i: usize) -> DVector<f64> {
        self.normals.row(i).transpose()
    }

    /// Same normals and center with new offsets.
    pub fn with_offsets(&self, offsets: DVector<f64>) -> Result<Self> {
        Self::new(self.normals.clone(), self.center.clone(), offsets)
    }

    /// Facet values `n_i'(x - center) + offset_i`.
    pub fn slack(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.normals * (x - &self.center) + &self.offsets
    }

    pub fn contains_point(&self, x: &DVector<f64>, tol: f64) -> bool {
        x.len() == self.dim() && self.slack(x).iter().all(|&s| s >= -tol)
    }

    /// Minimum of `c'x` over the polytope, by linear programming.
    pub fn min_linear(&self, c: &DVector<f64>) -> Result<Support> {
        let n = self.dim();
        if c.len() != n {
            return dim_err("objective length does not match the polytope");
        }
        let m = self.n_facets();
        let mut p = ConicProgram::new();
        let x = p.add_free("x", n, 1);
        let s = p.add_nonneg("slack", m);
        for i in 0..m {
            let mut e = p.entry(s, i, 0).scaled(-1.0);
            let mut cst = self.offsets[i];
            for j in 0..n {
                e.add_term(p.var(x, j, 0), self.normals[(i, j)]);
                cst -= self.normals[(i, j)] * self.center[j];
            }
            e.add_constant(cst);
            p.add_equality(e, format!("facet {i}"));
        }
        let mut obj = crate::sdp::LinExpr::zero();
        for j in 0..n {
            obj.add_term(p.var(x, j, 0), c[j]);
        }
        p.set_objective(obj);
        let sol = solve(&p, &Settings::default());
        Ok(match sol.status {
            SolveStatus::Optimal | SolveStatus::AlmostOptimal => Support::Bounded(p.objective.eval(&sol.values)),
            SolveStatus::Unbounded => Support::Unbounded,
            SolveStatus::Infeasible => Support::Empty,
            SolveStatus::NumericalFailure => {
                return Err(Error::Invalid(format!("support LP failed: {}", sol.message)))
            }
        })
    }

    /// `self ⊆ other` up to `tol`, checked facet by facet of `other`.
    pub fn is_subset_of(&self, other: &Polytope, tol: f64) -> Result<bool> {
        if self.dim() != other.dim() {
            return dim_err("containment between polytopes of different dimension");
        }
        for i in 0..other.n_facets() {
            let d = other.normal(i);
            match self.min_linear(&d)? {
                Support::Bounded(v) => {
                    let slack = v - d.dot(&other.center) + other.offsets[i];
                    if slack < -tol {
                        return Ok(false);
                    }
                }
                Support::Unbounded => return Ok(false),
                Support::Empty => return Ok(true),
            }
        }
        Ok(true)
    }

    /// Axis-aligned bounding box, `None` if unbounded or empty.
    pub fn bounding_box(&self) -> Result<Option<Vec<(f64, f64)>>> {
        let n = self.dim();
        let mut out = Vec::with_capacity(n);
        for j in 0..n {
            let mut e = DVector::zeros(n);
            e[j] = 1.0;
            let lo = self.min_linear(&e)?;
            let hi = self.min_linear(&(-e))?;
            match (lo, hi) {
                (Support::Bounded(lo), Support::Bounded(hi)) => out.push((lo, -hi)),
                _ => return Ok(None),
            }
        }
        Ok(Some(out))
    }

    /// Uniform samples by rejection from the bounding box.
    pub fn sample(&self, count: usize, seed: u64) -> Result<Vec<DVector<f64>>> {
        let bx = self
            .bounding_box()?
            .ok_or_else(|| Error::Invalid("cannot sample an unbounded or empty polytope".into()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(count);
        let max_tries = 1000 * count.max(1);
        let mut tries = 0;
        while out.len() < count {
            tries += 1;
            if tries > max_tries {
                return Err(Error::Invalid("polytope is too thin to sample by rejection".into()));
            }
            let x = DVector::from_iterator(
                bx.len(),
                bx.iter().map(|&(lo, hi)| if hi > lo { rng.random_range(lo..=hi) } else { lo }),
            );
            if self.contains_point(&x, 0.0) {
                out.push(x);
            }
        }
        Ok(out)
    }

    fn from_file(f: PolytopeFile) -> Result<Self> {
        let n = f.center.len();
        let m = f.normals.len();
        if f.normals.iter().any(|r| r.len() != n) {
            return dim_err("every normal must have the length of the center");
        }
        let normals = DMatrix::from_fn(m, n, |i, j| f.normals[i][j]);
        let offsets = match f.offsets {
            Some(o) => DVector::from_vec(o),
            None => DVector::from_element(m, 1.0),
        };
        Self::new(normals, DVector::from_vec(f.center), offsets)
    }

    fn to_file(&self) -> PolytopeFile {
        PolytopeFile {
            normals: crate::linalg::matrix_to_rows(&self.normals),
            center: self.center.iter().copied().collect(),
            offsets: Some(self.offsets.iter().copied().collect()),
        }
    }
}

impl Serialize for Polytope {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_file().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Polytope {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let f = PolytopeFile::deserialize(d)?;
        Polytope::from_file(f).map_err(serde::de::Error::custom)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PolytopeFile {
    normals: Vec<Vec<f64>>,
    center: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    offsets: Option<Vec<f64>>,
}

/// Sets and horizon for the reachability and invariance modes.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSets {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_set: Option<Polytope>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub safe_set: Option<Polytope>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub invariant_set: Option<Polytope>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub multiplier_degree: Option<u32>,
}

impl ProblemSets {
    pub fn from_json_str(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
