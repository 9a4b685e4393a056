//! Lyapunov certificates for the closed loop, from data or from a known plant.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{check_excitation_with, OraclePlant, TrajectoryData, DEFAULT_RANK_TOL};
use crate::error::{dim_err, Error, Result};
use crate::linalg::{matrix_to_rows, min_sym_eigenvalue};
use crate::nn::{build_stacked, loop_transform, NeuralNetwork, TransformedForm};
use crate::sdp::{
    solve, verify_solution, BlockId, ConicProgram, LinExpr, ResidualReport, Settings, SolveStatus,
    VerifyTolerances,
};
use crate::sectors::SectorData;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    Feasibility,
    /// Minimize `trace(Q1)` subject to `Q1 >= I`.
    #[default]
    TraceMin,
    /// Maximize `trace(Q1)` subject to `Q1 <= I`.
    TraceMax,
}

impl FromStr for Objective {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "feasibility" => Ok(Self::Feasibility),
            "trace_min" | "trace-min" => Ok(Self::TraceMin),
            "trace_max" | "trace-max" => Ok(Self::TraceMax),
            _ => Err(Error::Invalid(format!(
                "unknown objective '{s}' (expected feasibility, trace_min or trace_max)"
            ))),
        }
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Feasibility => "feasibility",
            Self::TraceMin => "trace_min",
            Self::TraceMax => "trace_max",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Certified,
    /// The program had no acceptable solution. Not a proof of instability.
    NotCertified,
}

impl Verdict {
    pub fn is_certified(self) -> bool {
        self == Self::Certified
    }
}

#[derive(Clone, Debug)]
pub struct StabilityOptions {
    pub objective: Objective,
    /// Margin in `H >= eps I`; `None` uses `1e-6 * (1 + n_x)`.
    pub epsilon: Option<f64>,
    /// Largest tolerated affine offset of the transformed loop at the origin.
    pub bias_tol: f64,
    pub rank_tol: f64,
    pub settings: Settings,
    pub tolerances: VerifyTolerances,
}

impl Default for StabilityOptions {
    fn default() -> Self {
        Self {
            objective: Objective::default(),
            epsilon: None,
            bias_tol: 1e-9,
            rank_tol: DEFAULT_RANK_TOL,
            settings: Settings::default(),
            tolerances: VerifyTolerances::default(),
        }
    }
}

impl StabilityOptions {
    fn margin(&self, n_x: usize) -> f64 {
        self.epsilon.unwrap_or(1e-6 * (1.0 + n_x as f64))
    }
}

/// The assembled program with handles to its blocks.
#[derive(Clone, Debug)]
pub struct StabilityProgram {
    pub program: ConicProgram,
    pub q1: BlockId,
    pub q2: BlockId,
    pub l1: Option<BlockId>,
    pub l2: Option<BlockId>,
    pub h_shift: BlockId,
    pub epsilon: f64,
}

/// How the successor-state rows of `H` are expressed.
enum Successor<'a> {
    Data(&'a TrajectoryData),
    Model(&'a OraclePlant),
}

fn mat_times_var(p: &ConicProgram, m: &DMatrix<f64>, blk: BlockId, cols: usize, diag: bool) -> Vec<Vec<LinExpr>> {
    // (m * X)[r][c] for a matrix block X, or X = diag(x) when `diag`
    let mut out = vec![vec![LinExpr::zero(); cols]; m.nrows()];
    for (r, row) in out.iter_mut().enumerate() {
        for (c, e) in row.iter_mut().enumerate() {
            if diag {
                if m[(r, c)] != 0.0 {
                    e.add_term(p.var(blk, c, 0), m[(r, c)]);
                }
            } else {
                for k in 0..m.ncols() {
                    if m[(r, k)] != 0.0 {
                        e.add_term(p.var(blk, k, c), m[(r, k)]);
                    }
                }
            }
        }
    }
    out
}

fn build(tf: &TransformedForm, n_x: usize, succ: Successor<'_>, opts: &StabilityOptions) -> Result<StabilityProgram> {
    let nz = tf.n_active();
    let eps = opts.margin(n_x);
    let mut p = ConicProgram::new();
    let q1 = p.add_symmetric("Q1", n_x);
    let q2 = p.add_nonneg("Q2", nz);

    // successor rows (r3, r1) and (r3, r2)
    let (l1, l2, m31, m32) = match succ {
        Successor::Data(d) => {
            let k = d.samples();
            let l1 = p.add_free("L1", k, n_x);
            let l2 = p.add_free("L2", k, nz);
            let m31 = mat_times_var(&p, &d.x1, l1, n_x, false);
            let m32 = mat_times_var(&p, &d.x1, l2, nz, false);
            (Some(l1), Some(l2), m31, m32)
        }
        Successor::Model(g) => {
            let acl = &g.a + &g.b * &tf.nt_ux;
            let bz = &g.b * &tf.nt_uz;
            (
                None,
                None,
                mat_times_var(&p, &acl, q1, n_x, false),
                mat_times_var(&p, &bz, q2, nz, true),
            )
        }
    };
    let m41 = mat_times_var(&p, &tf.nt_vx, q1, n_x, false);
    let m42 = mat_times_var(&p, &tf.nt_vz, q2, nz, true);

    let n = 2 * (n_x + nz);
    let h_shift = p.add_psd("H_shift", n);
    let (r1, r2, r3, r4) = (0, n_x, n_x + nz, 2 * n_x + nz);
    let h_entry = |p: &ConicProgram, i: usize, j: usize| -> LinExpr {
        // lower triangle, i >= j
        let blk = |x: usize| match x {
            x if x < r2 => 0,
            x if x < r3 => 1,
            x if x < r4 => 2,
            _ => 3,
        };
        let (bi, bj) = (blk(i), blk(j));
        let off = [r1, r2, r3, r4];
        let (a, b) = (i - off[bi], j - off[bj]);
        match (bi, bj) {
            (0, 0) | (2, 2) => p.entry(q1, a, b),
            (1, 1) | (3, 3) if a == b => p.entry(q2, a, 0),
            (2, 0) => m31[a][b].clone(),
            (2, 1) => m32[a][b].clone(),
            (3, 0) => m41[a][b].clone(),
            (3, 1) => m42[a][b].clone(),
            _ => LinExpr::zero(),
        }
    };
    for j in 0..n {
        for i in j..n {
            let mut e = p.entry(h_shift, i, j);
            e.add_scaled(&h_entry(&p, i, j), -1.0);
            if i == j {
                e.add_constant(eps);
            }
            p.add_equality(e, format!("H[{i},{j}]"));
        }
    }

    if let Successor::Data(d) = succ {
        let (l1, l2) = (l1.expect("data path"), l2.expect("data path"));
        let u0l1 = mat_times_var(&p, &d.u0, l1, n_x, false);
        let x0l1 = mat_times_var(&p, &d.x0, l1, n_x, false);
        let nuxq1 = mat_times_var(&p, &tf.nt_ux, q1, n_x, false);
        for r in 0..d.n_u() {
            for c in 0..n_x {
                let mut e = nuxq1[r][c].clone();
                e.add_scaled(&u0l1[r][c], -1.0);
                p.add_equality(e, format!("U0 L1[{r},{c}]"));
            }
        }
        for r in 0..n_x {
            for c in 0..n_x {
                let mut e = p.entry(q1, r, c);
                e.add_scaled(&x0l1[r][c], -1.0);
                p.add_equality(e, format!("X0 L1[{r},{c}]"));
            }
        }
        let u0l2 = mat_times_var(&p, &d.u0, l2, nz, false);
        let x0l2 = mat_times_var(&p, &d.x0, l2, nz, false);
        let nuzq2 = mat_times_var(&p, &tf.nt_uz, q2, nz, true);
        for r in 0..d.n_u() {
            for c in 0..nz {
                let mut e = nuzq2[r][c].clone();
                e.add_scaled(&u0l2[r][c], -1.0);
                p.add_equality(e, format!("U0 L2[{r},{c}]"));
            }
        }
        for r in 0..n_x {
            for c in 0..nz {
                p.add_equality(x0l2[r][c].scaled(-1.0), format!("X0 L2[{r},{c}]"));
            }
        }
    }

    let mut trace = LinExpr::zero();
    for i in 0..n_x {
        trace.add_term(p.var(q1, i, i), 1.0);
    }
    match opts.objective {
        Objective::Feasibility | Objective::TraceMin => {
            let floor = p.add_psd("Q1_floor", n_x);
            for j in 0..n_x {
                for i in j..n_x {
                    let mut e = p.entry(floor, i, j);
                    e.add_scaled(&p.entry(q1, i, j), -1.0);
                    if i == j {
                        e.add_constant(1.0);
                    }
                    p.add_equality(e, format!("Q1_floor[{i},{j}]"));
                }
            }
            if opts.objective == Objective::TraceMin {
                p.set_objective(trace);
            }
        }
        Objective::TraceMax => {
            let ceil = p.add_psd("Q1_ceiling", n_x);
            for j in 0..n_x {
                for i in j..n_x {
                    let mut e = p.entry(ceil, i, j);
                    e.add_scaled(&p.entry(q1, i, j), 1.0);
                    if i == j {
                        e.add_constant(-1.0);
                    }
                    p.add_equality(e, format!("Q1_ceiling[{i},{j}]"));
                }
            }
            p.set_objective(trace.scaled(-1.0));
        }
    }
    p.metadata.insert("problem".into(), "stability".into());
    p.metadata.insert("objective".into(), opts.objective.to_string());
    p.metadata.insert("epsilon".into(), format!("{eps:e}"));

    Ok(StabilityProgram {
        program: p,
        q1,
        q2,
        l1,
        l2,
        h_shift,
        epsilon: eps,
    })
}

fn prepare(net: &NeuralNetwork, sectors: &SectorData, opts: &StabilityOptions) -> Result<TransformedForm> {
    sectors.validate(net.activation())?;
    let tf = loop_transform(&build_stacked(net), sectors)?;
    let bias = tf.equilibrium_bias();
    if !(bias <= opts.bias_tol) {
        return Err(Error::EquilibriumBias {
            bias,
            tol: opts.bias_tol,
        });
    }
    Ok(tf)
}

fn check_data(net: &NeuralNetwork, data: &TrajectoryData, rank_tol: f64) -> Result<()> {
    if data.n_x() != net.input_dim() || data.n_u() != net.output_dim() {
        return dim_err(format!(
            "data has n_x = {}, n_u = {}; controller maps {} -> {}",
            data.n_x(),
            data.n_u(),
            net.input_dim(),
            net.output_dim()
        ));
    }
    let rep = check_excitation_with(data, rank_tol);
    if !rep.representation_ok {
        return Err(Error::Excitation(rep.summary()));
    }
    Ok(())
}

/// Assembles the data-driven program without solving it.
pub fn stability_program(
    net: &NeuralNetwork,
    sectors: &SectorData,
    data: &TrajectoryData,
    opts: &StabilityOptions,
) -> Result<(StabilityProgram, TransformedForm)> {
    check_data(net, data, opts.rank_tol)?;
    let tf = prepare(net, sectors, opts)?;
    let sp = build(&tf, net.input_dim(), Successor::Data(data), opts)?;
    Ok((sp, tf))
}

/// Assembles the program for a known plant.
pub fn stability_program_model(
    net: &NeuralNetwork,
    sectors: &SectorData,
    plant: &OraclePlant,
    opts: &StabilityOptions,
) -> Result<(StabilityProgram, TransformedForm)> {
    if plant.n_x() != net.input_dim() || plant.n_u() != net.output_dim() {
        return dim_err("plant and controller dimensions differ");
    }
    let tf = prepare(net, sectors, opts)?;
    let sp = build(&tf, net.input_dim(), Successor::Model(plant), opts)?;
    Ok((sp, tf))
}

#[derive(Clone, Debug)]
pub struct StabilityCertificate {
    pub verdict: Verdict,
    pub q1: DMatrix<f64>,
    pub q2_diag: DVector<f64>,
    pub l1: Option<DMatrix<f64>>,
    pub l2: Option<DMatrix<f64>>,
    pub epsilon: f64,
    pub objective: Objective,
    pub objective_value: f64,
    pub solver_status: SolveStatus,
    pub solver_message: String,
    /// Program-level re-check of the solver output.
    pub residuals: ResidualReport,
    /// `min eig(H)` of `H` assembled from the extracted blocks.
    pub min_eig_h: f64,
    /// Largest residual of the data-consistency equalities (0 for the model path).
    pub consistency_residual: f64,
}

impl StabilityCertificate {
    /// `V(x) = x' Q1^{-1} x`.
    pub fn lyapunov(&self, x: &DVector<f64>) -> Result<f64> {
        let p = self
            .q1
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Invalid("Q1 is not positive definite".into()))?;
        Ok(x.dot(&p.solve(x)))
    }

    pub fn to_json_string(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Out<'a> {
            verdict: Verdict,
            #[serde(rename = "Q1")]
            q1: Vec<Vec<f64>>,
            #[serde(rename = "Q2_diag")]
            q2_diag: Vec<f64>,
            #[serde(rename = "L1", skip_serializing_if = "Option::is_none")]
            l1: Option<Vec<Vec<f64>>>,
            #[serde(rename = "L2", skip_serializing_if = "Option::is_none")]
            l2: Option<Vec<Vec<f64>>>,
            epsilon: f64,
            objective: Objective,
            objective_value: f64,
            solver_status: SolveStatus,
            residuals: Residuals<'a>,
        }
        #[derive(Serialize)]
        struct Residuals<'a> {
            program: &'a ResidualReport,
            min_eig_h: f64,
            consistency: f64,
        }
        let out = Out {
            verdict: self.verdict,
            q1: matrix_to_rows(&self.q1),
            q2_diag: self.q2_diag.iter().copied().collect(),
            l1: self.l1.as_ref().map(matrix_to_rows),
            l2: self.l2.as_ref().map(matrix_to_rows),
            epsilon: self.epsilon,
            objective: self.objective,
            objective_value: self.objective_value,
            solver_status: self.solver_status,
            residuals: Residuals {
                program: &self.residuals,
                min_eig_h: self.min_eig_h,
                consistency: self.consistency_residual,
            },
        };
        Ok(serde_json::to_string_pretty(&out)?)
    }
}

/// `H` from explicit blocks; `succ_x`, `succ_z` are the successor rows.
pub fn assemble_h(
    q1: &DMatrix<f64>,
    q2: &DVector<f64>,
    succ_x: &DMatrix<f64>,
    succ_z: &DMatrix<f64>,
    tf: &TransformedForm,
) -> DMatrix<f64> {
    let nx = q1.nrows();
    let nz = q2.len();
    let q2m = DMatrix::from_diagonal(q2);
    let n = 2 * (nx + nz);
    let mut h = DMatrix::zeros(n, n);
    let (r2, r3, r4) = (nx, nx + nz, 2 * nx + nz);
    h.view_mut((0, 0), (nx, nx)).copy_from(q1);
    h.view_mut((r2, r2), (nz, nz)).copy_from(&q2m);
    h.view_mut((r3, r3), (nx, nx)).copy_from(q1);
    h.view_mut((r4, r4), (nz, nz)).copy_from(&q2m);
    h.view_mut((r3, 0), (nx, nx)).copy_from(succ_x);
    h.view_mut((r3, r2), (nx, nz)).copy_from(succ_z);
    let vx = &tf.nt_vx * q1;
    let vz = &tf.nt_vz * &q2m;
    h.view_mut((r4, 0), (nz, nx)).copy_from(&vx);
    h.view_mut((r4, r2), (nz, nz)).copy_from(&vz);
    let lower = h.clone();
    for i in 0..n {
        for j in (i + 1)..n {
            h[(i, j)] = lower[(j, i)];
        }
    }
    h
}

fn rel_residual(lhs: &DMatrix<f64>, rhs: &DMatrix<f64>) -> f64 {
    let scale = 1.0 + rhs.amax();
    if lhs.is_empty() {
        0.0
    } else {
        (lhs - rhs).amax() / scale
    }
}

fn extract(
    sp: &StabilityProgram,
    tf: &TransformedForm,
    succ: Successor<'_>,
    opts: &StabilityOptions,
) -> StabilityCertificate {
    let p = &sp.program;
    let sol = solve(p, &opts.settings);
    let residuals = verify_solution(p, &sol.values, opts.tolerances);
    let q1 = sol.block(p, sp.q1);
    let q2 = sol.block_vector(p, sp.q2);
    let l1 = sp.l1.map(|b| sol.block(p, b));
    let l2 = sp.l2.map(|b| sol.block(p, b));
    let q2m = DMatrix::from_diagonal(&q2);
    let (succ_x, succ_z, consistency) = match succ {
        Successor::Data(d) => {
            let (l1, l2) = (l1.as_ref().expect("data path"), l2.as_ref().expect("data path"));
            let c = [
                rel_residual(&(&d.u0 * l1), &(&tf.nt_ux * &q1)),
                rel_residual(&(&d.x0 * l1), &q1),
                rel_residual(&(&d.u0 * l2), &(&tf.nt_uz * &q2m)),
                rel_residual(&(&d.x0 * l2), &DMatrix::zeros(d.n_x(), q2.len())),
            ]
            .into_iter()
            .fold(0.0, f64::max);
            (&d.x1 * l1, &d.x1 * l2, c)
        }
        Successor::Model(g) => (
            (&g.a + &g.b * &tf.nt_ux) * &q1,
            &g.b * &tf.nt_uz * &q2m,
            0.0,
        ),
    };
    let finite = sol.values.iter().all(|v| v.is_finite());
    let min_eig_h = if finite {
        min_sym_eigenvalue(&assemble_h(&q1, &q2, &succ_x, &succ_z, tf))
    } else {
        f64::NEG_INFINITY
    };
    let status_ok = !matches!(sol.status, SolveStatus::Infeasible | SolveStatus::Unbounded);
    let accepted = status_ok
        && residuals.pass
        && min_eig_h >= sp.epsilon - opts.tolerances.cone
        && consistency <= opts.tolerances.eq
        && q2.iter().all(|&v| v > 0.0);
    StabilityCertificate {
        verdict: if accepted {
            Verdict::Certified
        } else {
            Verdict::NotCertified
        },
        q1,
        q2_diag: q2,
        l1,
        l2,
        epsilon: sp.epsilon,
        objective: opts.objective,
        objective_value: sol.primal_objective,
        solver_status: sol.status,
        solver_message: sol.message,
        residuals,
        min_eig_h,
        consistency_residual: consistency,
    }
}

/// Data-driven stability check. An infeasible program yields a
/// `NotCertified` certificate, not an error.
pub fn verify_stability(
    net: &NeuralNetwork,
    sectors: &SectorData,
    data: &TrajectoryData,
    opts: &StabilityOptions,
) -> Result<StabilityCertificate> {
    with_fallback(opts, |o| {
        let (sp, tf) = stability_program(net, sectors, data, o)?;
        Ok(extract(&sp, &tf, Successor::Data(data), o))
    })
}

/// Same check with the plant known; the reference for the data path.
pub fn verify_stability_model(
    net: &NeuralNetwork,
    sectors: &SectorData,
    plant: &OraclePlant,
    opts: &StabilityOptions,
) -> Result<StabilityCertificate> {
    with_fallback(opts, |o| {
        let (sp, tf) = stability_program_model(net, sectors, plant, o)?;
        Ok(extract(&sp, &tf, Successor::Model(plant), o))
    })
}

/// The trace objectives can have an infimum that is only approached as the
/// multipliers grow without bound; the iterates then drift until the
/// re-check fails. Any feasible point certifies, so a rejected optimizing
/// solve is retried as a pure feasibility problem.
fn with_fallback(
    opts: &StabilityOptions,
    run: impl Fn(&StabilityOptions) -> Result<StabilityCertificate>,
) -> Result<StabilityCertificate> {
    let first = run(opts)?;
    let retry = first.verdict != Verdict::Certified
        && opts.objective != Objective::Feasibility
        && !matches!(first.solver_status, SolveStatus::Infeasible);
    if !retry {
        return Ok(first);
    }
    let feas = StabilityOptions {
        objective: Objective::Feasibility,
        ..opts.clone()
    };
    let mut second = run(&feas)?;
    if second.verdict != Verdict::Certified {
        return Ok(first);
    }
    second.solver_message = format!(
        "{} objective rejected ({}); certificate from the feasibility problem",
        opts.objective,
        first.solver_message
    );
    Ok(second)
}

/// Boundary of `{x : x' Q1^{-1} x <= 1}` in the coordinate plane `(i, j)`,
/// other coordinates held at zero, sampled at `points` angles.
pub fn roa_ellipsoid(q1: &DMatrix<f64>, plane: (usize, usize), points: usize) -> Result<Vec<[f64; 2]>> {
    let n = q1.nrows();
    let (i, j) = plane;
    if q1.ncols() != n || i >= n || j >= n || i == j {
        return dim_err(format!("plane ({i}, {j}) is not valid for a {n}x{n} matrix"));
    }
    let p = q1
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Invalid("Q1 is not positive definite".into()))?
        .inverse();
    let (a, b, c) = (p[(i, i)], 0.5 * (p[(i, j)] + p[(j, i)]), p[(j, j)]);
    Ok((0..points)
        .map(|k| {
            let t = 2.0 * std::f64::consts::PI * k as f64 / points as f64;
            let (s, co) = t.sin_cos();
            let r = 1.0 / (a * co * co + 2.0 * b * co * s + c * s * s).sqrt();
            [r * co, r * s]
        })
        .collect())
}

/// CSV with header `x_i,x_j` for a boundary polyline.
pub fn roa_csv(points: &[[f64; 2]], plane: (usize, usize)) -> String {
    let mut s = format!("x_{},x_{}\n", plane.0, plane.1);
    for p in points {
        s.push_str(&format!("{:e},{:e}\n", p[0], p[1]));
    }
    s
}
