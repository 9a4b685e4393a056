//! Polytopic reachable-set bounds, finite-horizon safety and set invariance.
//!
//! Each facet of each step is an independent SOS program in the stacked
//! variable `w = [x; w_phi]`: the facet's value at the successor state must
//! dominate a combination of the previous set's facets (weighted by SOS
//! multipliers) plus the activation sector constraints.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{check_excitation_with, OraclePlant, TrajectoryData, DEFAULT_RANK_TOL};
use crate::error::{dim_err, Error, Result};
use crate::linalg::matrix_to_rows;
use crate::nn::{build_stacked, NeuralNetwork, StackedForm};
use crate::poly::{monomial_basis, Polynomial};
use crate::polytope::Polytope;
use crate::sdp::{
    solve, verify_solution, BlockId, ConicProgram, LinExpr, ResidualReport, Settings, SolveStatus,
    VerifyTolerances,
};
use crate::sectors::SectorData;
use crate::sos::{compile_sos, verify_sos_certificate, ParamPoly, SosReport};

/// Where the successor map comes from.
#[derive(Clone, Copy, Debug)]
pub enum Dynamics<'a> {
    /// Unknown plant, represented by trajectory data.
    Data(&'a TrajectoryData),
    /// Known plant (reference path).
    Model(&'a OraclePlant),
}

impl Dynamics<'_> {
    fn dims(&self) -> (usize, usize) {
        match self {
            Dynamics::Data(d) => (d.n_x(), d.n_u()),
            Dynamics::Model(g) => (g.n_x(), g.n_u()),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ReachOptions {
    /// Degree of the SOS multipliers on the previous set's facets: 0 gives
    /// nonnegative scalars, 2 gives quadratics in the state.
    pub multiplier_degree: u32,
    pub settings: Settings,
    pub tolerances: VerifyTolerances,
    pub rank_tol: f64,
    /// Solve the facets of a step on separate threads.
    pub parallel: bool,
    /// Random points at which each accepted SOS polynomial is evaluated.
    pub sos_samples: usize,
}

impl Default for ReachOptions {
    fn default() -> Self {
        Self {
            multiplier_degree: 2,
            settings: Settings::default(),
            tolerances: VerifyTolerances::default(),
            rank_tol: DEFAULT_RANK_TOL,
            parallel: true,
            sos_samples: 200,
        }
    }
}

/// Multipliers for one previous-set facet.
#[derive(Clone, Debug, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Multiplier {
    Scalar(f64),
    /// Gram matrix over `[1, x_0, ..., x_{n-1}]`.
    Quadratic(Vec<Vec<f64>>),
}

#[derive(Clone, Debug, Serialize)]
pub struct FacetCertificate {
    pub facet: usize,
    /// Certified offset, `None` when the program gave no acceptable solution
    /// (the bound is unbounded in this direction).
    pub gamma: Option<f64>,
    pub solver_status: SolveStatus,
    pub lambda: Vec<f64>,
    pub multipliers: Vec<Multiplier>,
    pub gram: Vec<Vec<f64>>,
    /// `G1`, `G2`, `G3` on the data path.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data_maps: Option<[Vec<Vec<f64>>; 3]>,
    pub residuals: ResidualReport,
    pub sos: SosReport,
}

#[derive(Clone, Debug, Serialize)]
pub struct ReachStep {
    pub step: usize,
    pub facets: Vec<FacetCertificate>,
}

impl ReachStep {
    pub fn gammas(&self) -> Vec<Option<f64>> {
        self.facets.iter().map(|f| f.gamma).collect()
    }

    /// All facets bounded; the offsets of the outer bound.
    pub fn gamma_vector(&self) -> Option<DVector<f64>> {
        let g: Option<Vec<f64>> = self.gammas().into_iter().collect();
        g.map(DVector::from_vec)
    }

    fn within(&self, limits: &DVector<f64>) -> bool {
        self.facets
            .iter()
            .zip(limits.iter())
            .all(|(f, &lim)| f.gamma.is_some_and(|g| g <= lim))
    }
}

struct StepContext<'a> {
    stacked: StackedForm,
    sectors: &'a SectorData,
    dynamics: Dynamics<'a>,
    prev: &'a Polytope,
    template: &'a Polytope,
    opts: &'a ReachOptions,
    nvars: usize,
    n_x: usize,
}

fn data_rhs(st: &StackedForm, n_x: usize) -> [(DMatrix<f64>, DMatrix<f64>); 3] {
    let n_phi = st.n_phi();
    [
        (st.n_ux.clone(), DMatrix::identity(n_x, n_x)),
        (st.n_uw.clone(), DMatrix::zeros(n_x, n_phi)),
        (DMatrix::from_column_slice(st.n_u(), 1, st.b_u.as_slice()), DMatrix::zeros(n_x, 1)),
    ]
}

struct FacetProgram {
    program: ConicProgram,
    poly: ParamPoly,
    sos: crate::sos::SosConstraint,
    gamma: BlockId,
    lambda: BlockId,
    multipliers: Vec<BlockId>,
    maps: Option<[BlockId; 3]>,
}

impl StepContext<'_> {
    /// `n'(x - center) + offset` for facet `j` of `p`, as a polynomial in `w`.
    fn facet_poly(&self, p: &Polytope, j: usize) -> Polynomial {
        let mut coeffs = vec![0.0; self.nvars];
        let mut c0 = p.offsets[j];
        for k in 0..self.n_x {
            coeffs[k] = p.normals[(j, k)];
            c0 -= p.normals[(j, k)] * p.center[k];
        }
        Polynomial::affine(&coeffs, c0)
    }

    /// Sector form of neuron `n` in the stacked variables.
    fn sector_poly(&self, n: usize) -> Polynomial {
        let st = &self.stacked;
        let mut vc = vec![0.0; self.nvars];
        for k in 0..self.n_x {
            vc[k] = st.n_vx[(n, k)];
        }
        for m in 0..st.n_phi() {
            vc[self.n_x + m] = st.n_vw[(n, m)];
        }
        let dv = Polynomial::affine(&vc, st.b_v[n] - self.sectors.v_star[n]);
        let mut wc = vec![0.0; self.nvars];
        wc[self.n_x + n] = 1.0;
        let dw = Polynomial::affine(&wc, -self.sectors.w_star[n]);
        let (a, b) = (self.sectors.alpha[n], self.sectors.beta[n]);
        // 2 (dw - a dv)(b dv - dw)
        let left = dw.sub(&dv.scale(a)).expect("ring");
        let right = dv.scale(b).sub(&dw).expect("ring");
        left.mul(&right).expect("ring").scale(2.0)
    }

    fn build(&self, facet: usize) -> Result<FacetProgram> {
        let n_x = self.n_x;
        let n_phi = self.stacked.n_phi();
        let nv = self.nvars;
        let d = self.template.normal(facet);
        let mut prog = ConicProgram::new();
        let gamma = prog.add_free("gamma", 1, 1);
        let lambda = prog.add_nonneg("lambda", n_phi);
        let mut poly = ParamPoly::zero(nv);

        // successor facet value d'(x+ - center) + gamma
        let mut maps = None;
        match self.dynamics {
            Dynamics::Model(g) => {
                let st = &self.stacked;
                let lin_x = (&g.a + &g.b * &st.n_ux).transpose() * &d;
                let lin_w = (&g.b * &st.n_uw).transpose() * &d;
                let c0 = d.dot(&(&g.b * &st.b_u)) - d.dot(&self.template.center);
                let coeffs: Vec<f64> = lin_x.iter().chain(lin_w.iter()).copied().collect();
                poly.add_poly(&Polynomial::affine(&coeffs, c0), 1.0);
            }
            Dynamics::Data(data) => {
                let k = data.samples();
                let proj = data.x1.transpose() * &d;
                let g1 = prog.add_free("G1", k, n_x);
                let g2 = prog.add_free("G2", k, n_phi);
                let g3 = prog.add_free("G3", k, 1);
                for (blk, cols, first) in [(g1, n_x, 0), (g2, n_phi, n_x)] {
                    for c in 0..cols {
                        let mut e = LinExpr::zero();
                        for s in 0..k {
                            if proj[s] != 0.0 {
                                e.add_term(prog.var(blk, s, c), proj[s]);
                            }
                        }
                        poly.add_poly_times(&Polynomial::var(nv, first + c), &e);
                    }
                }
                let mut e = LinExpr::constant(-d.dot(&self.template.center));
                for s in 0..k {
                    if proj[s] != 0.0 {
                        e.add_term(prog.var(g3, s, 0), proj[s]);
                    }
                }
                poly.add_poly_times(&Polynomial::constant(nv, 1.0), &e);

                let reg = data.stacked_regressor();
                for (blk, (top, bottom), name) in [g1, g2, g3]
                    .into_iter()
                    .zip(data_rhs(&self.stacked, n_x))
                    .zip(["G1", "G2", "G3"])
                    .map(|((b, r), n)| (b, r, n))
                {
                    let rhs = crate::linalg::vstack(&top, &bottom);
                    for r in 0..rhs.nrows() {
                        for c in 0..rhs.ncols() {
                            let mut e = LinExpr::constant(-rhs[(r, c)]);
                            for s in 0..k {
                                if reg[(r, s)] != 0.0 {
                                    e.add_term(prog.var(blk, s, c), reg[(r, s)]);
                                }
                            }
                            prog.add_equality(e, format!("{name}[{r},{c}]"));
                        }
                    }
                }
                maps = Some([g1, g2, g3]);
            }
        }
        poly.add_poly_times(&Polynomial::constant(nv, 1.0), &prog.entry(gamma, 0, 0));

        // previous-set facets times SOS multipliers
        let mut multipliers = Vec::new();
        for j in 0..self.prev.n_facets() {
            let ell = self.facet_poly(self.prev, j);
            match self.opts.multiplier_degree {
                0 => {
                    let s = prog.add_nonneg(format!("sigma_{j}"), 1);
                    poly.add_poly_times(&ell, &prog.entry(s, 0, 0).scaled(-1.0));
                    multipliers.push(s);
                }
                2 => {
                    let s = prog.add_psd(format!("S_{j}"), n_x + 1);
                    let mono = |a: usize| {
                        if a == 0 {
                            Polynomial::constant(nv, 1.0)
                        } else {
                            Polynomial::var(nv, a - 1)
                        }
                    };
                    for b in 0..=n_x {
                        for a in b..=n_x {
                            let w = if a == b { 1.0 } else { 2.0 };
                            let term = mono(a).mul(&mono(b)).and_then(|m| m.mul(&ell))?;
                            poly.add_poly_times(&term, &prog.entry(s, a, b).scaled(-w));
                        }
                    }
                    multipliers.push(s);
                }
                deg => {
                    return Err(Error::Unsupported(format!(
                        "multiplier degree {deg} (use 0 or 2)"
                    )))
                }
            }
        }

        // sector constraints
        for n in 0..n_phi {
            poly.add_poly_times(&self.sector_poly(n), &prog.entry(lambda, n, 0).scaled(-1.0));
        }

        let basis = monomial_basis(nv, &(0..nv).collect::<Vec<_>>(), 1);
        let mut sos = compile_sos(&poly, Some(basis))?;
        sos.emit(&mut prog, "gram");
        prog.set_objective(prog.entry(gamma, 0, 0));
        prog.metadata.insert("problem".into(), "reach facet".into());
        prog.metadata.insert("facet".into(), facet.to_string());
        prog.metadata
            .insert("multiplier_degree".into(), self.opts.multiplier_degree.to_string());
        Ok(FacetProgram {
            program: prog,
            poly,
            sos,
            gamma,
            lambda,
            multipliers,
            maps,
        })
    }

    fn solve_facet(&self, facet: usize) -> Result<FacetCertificate> {
        let fp = self.build(facet)?;
        let p = &fp.program;
        let sol = solve(p, &self.opts.settings);
        let residuals = verify_solution(p, &sol.values, self.opts.tolerances);
        let gram_blk = fp.sos.gram.expect("emitted");
        let gram = sol.block(p, gram_blk);
        let sos = verify_sos_certificate(
            &fp.sos,
            &fp.poly,
            &gram,
            &sol.values,
            self.opts.sos_samples,
            1.0,
            facet as u64,
        );
        let status_ok = !matches!(sol.status, SolveStatus::Infeasible | SolveStatus::Unbounded);
        let accepted = status_ok && residuals.pass && sos.accepted;
        let g = sol.block(p, fp.gamma)[(0, 0)];
        let multipliers = fp
            .multipliers
            .iter()
            .map(|&b| {
                let m = sol.block(p, b);
                if self.opts.multiplier_degree == 0 {
                    Multiplier::Scalar(m[(0, 0)])
                } else {
                    Multiplier::Quadratic(matrix_to_rows(&m))
                }
            })
            .collect();
        Ok(FacetCertificate {
            facet,
            gamma: (accepted && g.is_finite()).then_some(g),
            solver_status: sol.status,
            lambda: sol.block_vector(p, fp.lambda).iter().copied().collect(),
            multipliers,
            gram: matrix_to_rows(&gram),
            data_maps: fp
                .maps
                .map(|[a, b, c]| [a, b, c].map(|blk| matrix_to_rows(&sol.block(p, blk)))),
            residuals,
            sos,
        })
    }
}

fn check_inputs(net: &NeuralNetwork, sectors: &SectorData, dynamics: Dynamics<'_>, rank_tol: f64) -> Result<()> {
    let (n_x, n_u) = dynamics.dims();
    if n_x != net.input_dim() || n_u != net.output_dim() {
        return dim_err(format!(
            "dynamics have n_x = {n_x}, n_u = {n_u}; controller maps {} -> {}",
            net.input_dim(),
            net.output_dim()
        ));
    }
    sectors.validate(net.activation())?;
    if sectors.len() != net.n_phi() {
        return dim_err("sector data does not match the neuron count");
    }
    if let Dynamics::Data(d) = dynamics {
        let rep = check_excitation_with(d, rank_tol);
        if !rep.representation_ok {
            return Err(Error::Excitation(rep.summary()));
        }
    }
    Ok(())
}

/// One reachability step: offsets of the tightest outer bound with the
/// template's normals around the image of `prev`.
pub fn reach_step(
    net: &NeuralNetwork,
    sectors: &SectorData,
    dynamics: Dynamics<'_>,
    prev: &Polytope,
    template: &Polytope,
    step: usize,
    opts: &ReachOptions,
) -> Result<ReachStep> {
    check_inputs(net, sectors, dynamics, opts.rank_tol)?;
    if prev.dim() != net.input_dim() || template.dim() != net.input_dim() {
        return dim_err("set dimension does not match the state dimension");
    }
    let ctx = StepContext {
        stacked: build_stacked(net),
        sectors,
        dynamics,
        prev,
        template,
        opts,
        nvars: net.input_dim() + net.n_phi(),
        n_x: net.input_dim(),
    };
    let m = template.n_facets();
    let facets: Vec<Result<FacetCertificate>> = if opts.parallel && m > 1 {
        std::thread::scope(|s| {
            let handles: Vec<_> = (0..m).map(|i| s.spawn({
                let ctx = &ctx;
                move || ctx.solve_facet(i)
            })).collect();
            handles
                .into_iter()
                .map(|h| h.join().unwrap_or_else(|_| Err(Error::Invalid("facet solver panicked".into()))))
                .collect()
        })
    } else {
        (0..m).map(|i| ctx.solve_facet(i)).collect()
    };
    Ok(ReachStep {
        step,
        facets: facets.into_iter().collect::<Result<_>>()?,
    })
}

/// The facet programs of one step, unsolved (for export).
pub fn step_programs(
    net: &NeuralNetwork,
    sectors: &SectorData,
    dynamics: Dynamics<'_>,
    prev: &Polytope,
    template: &Polytope,
    opts: &ReachOptions,
) -> Result<Vec<ConicProgram>> {
    check_inputs(net, sectors, dynamics, opts.rank_tol)?;
    if prev.dim() != net.input_dim() || template.dim() != net.input_dim() {
        return dim_err("set dimension does not match the state dimension");
    }
    let ctx = StepContext {
        stacked: build_stacked(net),
        sectors,
        dynamics,
        prev,
        template,
        opts,
        nvars: net.input_dim() + net.n_phi(),
        n_x: net.input_dim(),
    };
    (0..template.n_facets()).map(|i| ctx.build(i).map(|fp| fp.program)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SafetyVerdict {
    /// Every step's bound lies inside the safe set.
    Safe,
    NotCertified,
}

impl fmt::Display for SafetyVerdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Safe => "safe",
            Self::NotCertified => "not certified",
        })
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ReachResult {
    pub horizon: usize,
    pub multiplier_degree: u32,
    pub steps: Vec<ReachStep>,
    /// Largest `k` such that steps `1..=k` all lie inside the safe set.
    pub safe_through: usize,
    /// Step at which a facet had no acceptable solution, if any.
    pub unbounded_at: Option<usize>,
    pub verdict: SafetyVerdict,
}

impl ReachResult {
    /// `gamma[k][i]`, `None` for unbounded facets.
    pub fn gamma_table(&self) -> Vec<Vec<Option<f64>>> {
        self.steps.iter().map(|s| s.gammas()).collect()
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// CSV with one row per step and one column per facet.
    pub fn gamma_csv(&self) -> String {
        let m = self.steps.first().map_or(0, |s| s.facets.len());
        let mut s = String::from("step");
        for i in 0..m {
            s.push_str(&format!(",gamma_{i}"));
        }
        s.push('\n');
        for st in &self.steps {
            s.push_str(&st.step.to_string());
            for g in st.gammas() {
                match g {
                    Some(v) => s.push_str(&format!(",{v:e}")),
                    None => s.push_str(",inf"),
                }
            }
            s.push('\n');
        }
        s
    }
}

/// Finite-horizon safety: step 1 starts from `input_set`, later steps from
/// the previous bound; the bounds use the safe set's normals.
pub fn verify_safety(
    net: &NeuralNetwork,
    sectors: &SectorData,
    dynamics: Dynamics<'_>,
    input_set: &Polytope,
    safe_set: &Polytope,
    horizon: usize,
    opts: &ReachOptions,
) -> Result<ReachResult> {
    if horizon == 0 {
        return Err(Error::Invalid("horizon must be at least 1".into()));
    }
    if input_set.dim() != safe_set.dim() {
        return dim_err("input and safe sets have different dimensions");
    }
    if !input_set.is_subset_of(safe_set, 1e-9)? {
        return Err(Error::NotApplicable("the input set is not contained in the safe set".into()));
    }
    let mut steps: Vec<ReachStep> = Vec::new();
    let mut safe_through = 0;
    let mut still_safe = true;
    let mut unbounded_at = None;
    let mut prev = input_set.clone();
    for k in 1..=horizon {
        let st = reach_step(net, sectors, dynamics, &prev, safe_set, k, opts)?;
        let next = st.gamma_vector();
        still_safe &= st.within(&safe_set.offsets);
        if still_safe {
            safe_through = k;
        }
        steps.push(st);
        match next {
            Some(g) => prev = safe_set.with_offsets(g)?,
            None => {
                unbounded_at = Some(k);
                break;
            }
        }
    }
    Ok(ReachResult {
        horizon,
        multiplier_degree: opts.multiplier_degree,
        verdict: if safe_through == horizon {
            SafetyVerdict::Safe
        } else {
            SafetyVerdict::NotCertified
        },
        steps,
        safe_through,
        unbounded_at,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct InvarianceResult {
    pub invariant: bool,
    pub step: ReachStep,
}

impl InvarianceResult {
    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// One step from `set` onto its own facets; invariant when every offset
/// stays within the set's own.
pub fn verify_invariance(
    net: &NeuralNetwork,
    sectors: &SectorData,
    dynamics: Dynamics<'_>,
    set: &Polytope,
    opts: &ReachOptions,
) -> Result<InvarianceResult> {
    let step = reach_step(net, sectors, dynamics, set, set, 1, opts)?;
    Ok(InvarianceResult {
        invariant: step.within(&set.offsets),
        step,
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum InvarianceSafety {
    SafeForAllTime,
    NotCertified,
    NotApplicable(String),
}

/// Safety for all time from `input ⊆ invariant ⊆ safe` and invariance.
pub fn safety_via_invariance(
    input: &Polytope,
    invariant: &Polytope,
    safe: &Polytope,
    result: &InvarianceResult,
) -> Result<InvarianceSafety> {
    if !input.is_subset_of(invariant, 1e-9)? {
        return Ok(InvarianceSafety::NotApplicable(
            "the input set is not contained in the invariant set".into(),
        ));
    }
    if !invariant.is_subset_of(safe, 1e-9)? {
        return Ok(InvarianceSafety::NotApplicable(
            "the invariant set is not contained in the safe set".into(),
        ));
    }
    Ok(if result.invariant {
        InvarianceSafety::SafeForAllTime
    } else {
        InvarianceSafety::NotCertified
    })
}
