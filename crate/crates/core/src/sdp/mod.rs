//! Conic program model with PSD, nonnegative and free variable blocks,
//! a solver contract, SDPA export and independent solution checking.

mod ipm;
mod sdpa;
mod verify;

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub use ipm::InteriorPointSolver;
pub use sdpa::{export_sdpa, import_sdpa, write_sdpa};
pub use verify::{verify_solution, ResidualReport, VerifyTolerances};

/// Cone of a variable block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BlockKind {
    /// Symmetric `n x n`, positive semidefinite.
    Psd { n: usize },
    /// Symmetric `n x n`, unconstrained.
    Symmetric { n: usize },
    /// Vector of length `n`, elementwise nonnegative.
    Nonneg { n: usize },
    /// Unconstrained `rows x cols` matrix.
    Free { rows: usize, cols: usize },
}

impl BlockKind {
    /// Number of scalar unknowns.
    pub fn scalar_len(&self) -> usize {
        match *self {
            BlockKind::Psd { n } | BlockKind::Symmetric { n } => n * (n + 1) / 2,
            BlockKind::Nonneg { n } => n,
            BlockKind::Free { rows, cols } => rows * cols,
        }
    }

    pub fn is_symmetric(&self) -> bool {
        matches!(self, BlockKind::Psd { .. } | BlockKind::Symmetric { .. })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub name: String,
    pub kind: BlockKind,
    /// Index of the first scalar of this block.
    pub offset: usize,
}

/// Handle to a declared block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BlockId(pub usize);

/// Position of `(i, j)`, `i >= j`, in the packed lower triangle
/// (column-major) of an `n x n` symmetric matrix.
pub fn packed_index(n: usize, i: usize, j: usize) -> usize {
    let (i, j) = if i >= j { (i, j) } else { (j, i) };
    // entries in the first j columns of the lower triangle
    j * n - j * j.saturating_sub(1) / 2 + (i - j)
}

/// Inverse of [`packed_index`].
pub fn packed_pos(n: usize, k: usize) -> (usize, usize) {
    let mut start = 0;
    for j in 0..n {
        let len = n - j;
        if k < start + len {
            return (j + (k - start), j);
        }
        start += len;
    }
    panic!("packed index {k} out of range for n = {n}");
}

/// Affine expression `sum coeff * var + constant` over scalar unknowns.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LinExpr {
    pub terms: BTreeMap<usize, f64>,
    pub constant: f64,
}

impl LinExpr {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn constant(c: f64) -> Self {
        Self {
            terms: BTreeMap::new(),
            constant: c,
        }
    }

    pub fn var(v: usize) -> Self {
        let mut e = Self::zero();
        e.add_term(v, 1.0);
        e
    }

    pub fn add_term(&mut self, v: usize, c: f64) {
        if c == 0.0 {
            return;
        }
        let slot = self.terms.entry(v).or_insert(0.0);
        *slot += c;
        if *slot == 0.0 {
            self.terms.remove(&v);
        }
    }

    pub fn add_constant(&mut self, c: f64) {
        self.constant += c;
    }

    pub fn add_scaled(&mut self, other: &LinExpr, s: f64) {
        if s == 0.0 {
            return;
        }
        for (&v, &c) in &other.terms {
            self.add_term(v, c * s);
        }
        self.constant += other.constant * s;
    }

    pub fn scaled(&self, s: f64) -> LinExpr {
        let mut e = LinExpr::zero();
        e.add_scaled(self, s);
        e
    }

    pub fn is_constant(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn eval(&self, values: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|(&v, &c)| c * values[v]).sum::<f64>()
    }
}

/// Equality `expr == 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Equality {
    pub expr: LinExpr,
    pub label: String,
}

/// `minimize objective` subject to equalities and block cone membership.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ConicProgram {
    blocks: Vec<Block>,
    n_scalars: usize,
    pub equalities: Vec<Equality>,
    pub objective: LinExpr,
    /// Free-form annotations, e.g. the strictness margin.
    pub metadata: BTreeMap<String, String>,
}

impl ConicProgram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_block(&mut self, name: impl Into<String>, kind: BlockKind) -> BlockId {
        let id = BlockId(self.blocks.len());
        self.blocks.push(Block {
            name: name.into(),
            kind,
            offset: self.n_scalars,
        });
        self.n_scalars += kind.scalar_len();
        id
    }

    pub fn add_psd(&mut self, name: impl Into<String>, n: usize) -> BlockId {
        self.add_block(name, BlockKind::Psd { n })
    }
    pub fn add_symmetric(&mut self, name: impl Into<String>, n: usize) -> BlockId {
        self.add_block(name, BlockKind::Symmetric { n })
    }
    pub fn add_nonneg(&mut self, name: impl Into<String>, n: usize) -> BlockId {
        self.add_block(name, BlockKind::Nonneg { n })
    }
    pub fn add_free(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> BlockId {
        self.add_block(name, BlockKind::Free { rows, cols })
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn block(&self, id: BlockId) -> &Block {
        &self.blocks[id.0]
    }

    pub fn find_block(&self, name: &str) -> Option<BlockId> {
        self.blocks.iter().position(|b| b.name == name).map(BlockId)
    }

    pub fn n_scalars(&self) -> usize {
        self.n_scalars
    }

    /// Scalar index of entry `(i, j)` of a matrix block (symmetric blocks
    /// share one unknown for `(i, j)` and `(j, i)`), or element `i` of a
    /// vector block when `j == 0`.
    pub fn var(&self, id: BlockId, i: usize, j: usize) -> usize {
        let b = &self.blocks[id.0];
        let local = match b.kind {
            BlockKind::Psd { n } | BlockKind::Symmetric { n } => {
                assert!(i < n && j < n, "entry ({i},{j}) outside {n}x{n} block {}", b.name);
                packed_index(n, i, j)
            }
            BlockKind::Nonneg { n } => {
                assert!(i < n && j == 0, "element {i} outside block {}", b.name);
                i
            }
            BlockKind::Free { rows, cols } => {
                assert!(i < rows && j < cols, "entry ({i},{j}) outside {rows}x{cols} block {}", b.name);
                i + j * rows
            }
        };
        b.offset + local
    }

    /// Expression for one entry of a block.
    pub fn entry(&self, id: BlockId, i: usize, j: usize) -> LinExpr {
        LinExpr::var(self.var(id, i, j))
    }

    pub fn add_equality(&mut self, expr: LinExpr, label: impl Into<String>) {
        self.equalities.push(Equality {
            expr,
            label: label.into(),
        });
    }

    pub fn set_objective(&mut self, obj: LinExpr) {
        self.objective = obj;
    }

    /// Block and local position of a scalar unknown.
    pub fn locate(&self, scalar: usize) -> (BlockId, usize) {
        let idx = self
            .blocks
            .partition_point(|b| b.offset <= scalar)
            .saturating_sub(1);
        (BlockId(idx), scalar - self.blocks[idx].offset)
    }

    /// Checks that every expression references declared unknowns.
    pub fn validate(&self) -> Result<(), String> {
        let n = self.n_scalars;
        let bad = |e: &LinExpr| e.terms.keys().any(|&v| v >= n) || !e.constant.is_finite() || e.terms.values().any(|c| !c.is_finite());
        if bad(&self.objective) {
            return Err("objective references an undeclared or non-finite term".into());
        }
        for eq in &self.equalities {
            if bad(&eq.expr) {
                return Err(format!("equality '{}' is malformed", eq.label));
            }
        }
        Ok(())
    }

    /// Entrywise values of a block as a matrix (vectors become columns).
    pub fn block_value(&self, id: BlockId, values: &[f64]) -> DMatrix<f64> {
        let b = &self.blocks[id.0];
        match b.kind {
            BlockKind::Psd { n } | BlockKind::Symmetric { n } => {
                DMatrix::from_fn(n, n, |i, j| values[b.offset + packed_index(n, i, j)])
            }
            BlockKind::Nonneg { n } => DMatrix::from_fn(n, 1, |i, _| values[b.offset + i]),
            BlockKind::Free { rows, cols } => {
                DMatrix::from_fn(rows, cols, |i, j| values[b.offset + i + j * rows])
            }
        }
    }
}

/// Solver outcome.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Optimal,
    /// A certificate of primal infeasibility was found.
    Infeasible,
    /// A certificate of dual infeasibility (unbounded objective) was found.
    Unbounded,
    /// Progress stalled at an iterate that meets only the reduced tolerances.
    AlmostOptimal,
    NumericalFailure,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Solution {
    pub status: SolveStatus,
    /// One value per scalar unknown of the program.
    pub values: Vec<f64>,
    pub primal_objective: f64,
    pub dual_objective: f64,
    pub iterations: usize,
    /// Relative primal and dual residuals and gap at termination.
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub gap: f64,
    pub message: String,
}

impl Solution {
    pub fn failed(n: usize, message: impl Into<String>) -> Self {
        Self {
            status: SolveStatus::NumericalFailure,
            values: vec![0.0; n],
            primal_objective: f64::NAN,
            dual_objective: f64::NAN,
            iterations: 0,
            primal_residual: f64::INFINITY,
            dual_residual: f64::INFINITY,
            gap: f64::INFINITY,
            message: message.into(),
        }
    }

    pub fn block(&self, p: &ConicProgram, id: BlockId) -> DMatrix<f64> {
        p.block_value(id, &self.values)
    }

    pub fn block_vector(&self, p: &ConicProgram, id: BlockId) -> DVector<f64> {
        let m = p.block_value(id, &self.values);
        DVector::from_iterator(m.len(), m.iter().copied())
    }

    pub fn scalar(&self, v: usize) -> f64 {
        self.values[v]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Settings {
    pub feas_tol: f64,
    pub gap_tol: f64,
    /// Looser feasibility and gap tolerance for `AlmostOptimal`.
    pub reduced_tol: f64,
    pub max_iter: usize,
    pub verbose: bool,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            feas_tol: 1e-8,
            gap_tol: 1e-8,
            reduced_tol: 1e-5,
            max_iter: 150,
            verbose: false,
        }
    }
}

/// Backend contract. Implementations must not share mutable state between
/// calls so programs can be solved concurrently.
pub trait ConicSolver: Send + Sync {
    fn name(&self) -> &str;
    fn solve(&self, program: &ConicProgram, settings: &Settings) -> Solution;
}

/// Solves with the built-in interior-point backend.
pub fn solve(program: &ConicProgram, settings: &Settings) -> Solution {
    InteriorPointSolver.solve(program, settings)
}
