//! Homogeneous self-dual interior-point method for
//! `min c'x  s.t.  Gx + s = h, Ax = b, s in K` with `K` a product of a
//! nonnegative orthant and PSD cones (vectorized with `sqrt(2)` scaling of
//! off-diagonal entries).

use std::collections::BTreeMap;
use std::f64::consts::SQRT_2;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::{BlockKind, ConicProgram, ConicSolver, LinExpr, Settings, Solution, SolveStatus};

/// Built-in dense interior-point backend.
#[derive(Clone, Copy, Debug, Default)]
pub struct InteriorPointSolver;

impl ConicSolver for InteriorPointSolver {
    fn name(&self) -> &str {
        "hsd-ipm"
    }

    fn solve(&self, program: &ConicProgram, settings: &Settings) -> Solution {
        if let Err(e) = program.validate() {
            return Solution::failed(program.n_scalars(), e);
        }
        let pre = Presolved::build(program);
        let std = pre.standard_form(program);
        if std.n == 0 {
            return pre.trivial_solution(program, &std, settings);
        }
        let (red, basis, shift) = reduce(&std);
        let mut raw = if red.n == 0 {
            pinned(&red, settings)
        } else {
            hsd(&red, settings)
        };
        raw.x = shift + &basis * &raw.x;
        pre.finish(program, raw)
    }
}

// ---------------------------------------------------------------------------
// cone bookkeeping

#[derive(Clone, Debug)]
struct Cones {
    nl: usize,
    psd: Vec<usize>,
    starts: Vec<usize>,
    dim: usize,
}

impl Cones {
    fn new(nl: usize, psd: Vec<usize>) -> Self {
        let mut starts = Vec::with_capacity(psd.len());
        let mut off = nl;
        for &n in &psd {
            starts.push(off);
            off += n * (n + 1) / 2;
        }
        Self {
            nl,
            psd,
            starts,
            dim: off,
        }
    }

    /// Barrier degree.
    fn degree(&self) -> usize {
        self.nl + self.psd.iter().sum::<usize>()
    }

    fn identity(&self) -> DVector<f64> {
        let mut e = DVector::zeros(self.dim);
        for i in 0..self.nl {
            e[i] = 1.0;
        }
        for (k, &n) in self.psd.iter().enumerate() {
            for j in 0..n {
                e[self.starts[k] + super::packed_index(n, j, j)] = 1.0;
            }
        }
        e
    }

    fn mat(&self, v: &DVector<f64>, k: usize) -> DMatrix<f64> {
        let n = self.psd[k];
        let s = self.starts[k];
        let mut m = DMatrix::zeros(n, n);
        let mut idx = s;
        for j in 0..n {
            for i in j..n {
                let val = if i == j { v[idx] } else { v[idx] / SQRT_2 };
                m[(i, j)] = val;
                m[(j, i)] = val;
                idx += 1;
            }
        }
        m
    }

    fn put(&self, v: &mut DVector<f64>, k: usize, m: &DMatrix<f64>) {
        let n = self.psd[k];
        let mut idx = self.starts[k];
        for j in 0..n {
            for i in j..n {
                v[idx] = if i == j {
                    m[(i, i)]
                } else {
                    0.5 * (m[(i, j)] + m[(j, i)]) * SQRT_2
                };
                idx += 1;
            }
        }
    }

    /// `max_i -lambda_i(v)` over all cones; `-inf` for the empty cone.
    fn max_violation(&self, v: &DVector<f64>) -> f64 {
        let mut t = f64::NEG_INFINITY;
        for i in 0..self.nl {
            t = t.max(-v[i]);
        }
        for k in 0..self.psd.len() {
            if self.psd[k] == 0 {
                continue;
            }
            let m = self.mat(v, k);
            let ev = SymmetricEigen::new(m).eigenvalues;
            t = t.max(-ev.min());
        }
        t
    }

    /// Jordan product `u o v`.
    fn jordan(&self, u: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        let mut w = DVector::zeros(self.dim);
        for i in 0..self.nl {
            w[i] = u[i] * v[i];
        }
        for k in 0..self.psd.len() {
            let a = self.mat(u, k);
            let b = self.mat(v, k);
            let p = &a * &b;
            let sym = (&p + p.transpose()) * 0.5;
            self.put(&mut w, k, &sym);
        }
        w
    }
}

/// Nesterov-Todd scaling at a strictly feasible pair, with the scaled point
/// `lambda = W z = W^{-T} s` diagonal in every PSD block.
struct Scaling {
    d: DVector<f64>,
    r: Vec<DMatrix<f64>>,
    rinv: Vec<DMatrix<f64>>,
    /// Nonnegative part followed by the eigenvalues of each PSD block.
    lam_nl: DVector<f64>,
    lam_psd: Vec<DVector<f64>>,
}

fn psd_factor(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let sym = (m + m.transpose()) * 0.5;
    if let Some(ch) = sym.clone().cholesky() {
        return Some(ch.l());
    }
    let eig = SymmetricEigen::new(sym);
    let scale = eig.eigenvalues.amax().max(1e-300);
    let mut vecs = eig.eigenvectors;
    for (j, &l) in eig.eigenvalues.iter().enumerate() {
        let l = l.max(1e-15 * scale);
        if !l.is_finite() {
            return None;
        }
        vecs.column_mut(j).scale_mut(l.sqrt());
    }
    Some(vecs)
}

impl Scaling {
    fn compute(cones: &Cones, s: &DVector<f64>, z: &DVector<f64>) -> Option<Self> {
        let mut d = DVector::zeros(cones.nl);
        let mut lam_nl = DVector::zeros(cones.nl);
        for i in 0..cones.nl {
            if !(s[i] > 0.0 && z[i] > 0.0) {
                return None;
            }
            d[i] = (s[i] / z[i]).sqrt();
            lam_nl[i] = (s[i] * z[i]).sqrt();
        }
        let mut r = Vec::new();
        let mut rinv = Vec::new();
        let mut lam_psd = Vec::new();
        for k in 0..cones.psd.len() {
            let n = cones.psd[k];
            if n == 0 {
                r.push(DMatrix::zeros(0, 0));
                rinv.push(DMatrix::zeros(0, 0));
                lam_psd.push(DVector::zeros(0));
                continue;
            }
            let l1 = psd_factor(&cones.mat(s, k))?;
            let l2 = psd_factor(&cones.mat(z, k))?;
            let svd = (l2.transpose() * &l1).svd(true, true);
            let u = svd.u?;
            let vt = svd.v_t?;
            let lam = svd.singular_values;
            if lam.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
                return None;
            }
            let isq = lam.map(|l| 1.0 / l.sqrt());
            // R = L1 V diag(lam)^{-1/2},  R^{-1} = diag(lam)^{-1/2} U' L2'
            let rk = &l1 * vt.transpose() * DMatrix::from_diagonal(&isq);
            let rik = DMatrix::from_diagonal(&isq) * u.transpose() * l2.transpose();
            r.push(rk);
            rinv.push(rik);
            lam_psd.push(lam);
        }
        Some(Self {
            d,
            r,
            rinv,
            lam_nl,
            lam_psd,
        })
    }

    fn lambda(&self, cones: &Cones) -> DVector<f64> {
        let mut v = DVector::zeros(cones.dim);
        v.rows_mut(0, cones.nl).copy_from(&self.lam_nl);
        for (k, &n) in cones.psd.iter().enumerate() {
            for j in 0..n {
                v[cones.starts[k] + super::packed_index(n, j, j)] = self.lam_psd[k][j];
            }
        }
        v
    }

    fn congruence(cones: &Cones, u: &DVector<f64>, mats: &[DMatrix<f64>], transpose_left: bool) -> DVector<f64> {
        let mut w = u.clone();
        for k in 0..cones.psd.len() {
            if cones.psd[k] == 0 {
                continue;
            }
            let m = cones.mat(u, k);
            let t = &mats[k];
            let res = if transpose_left {
                t.transpose() * m * t
            } else {
                t * m * t.transpose()
            };
            cones.put(&mut w, k, &res);
        }
        w
    }

    /// `W u`
    fn w(&self, cones: &Cones, u: &DVector<f64>) -> DVector<f64> {
        let mut w = Self::congruence(cones, u, &self.r, true);
        for i in 0..cones.nl {
            w[i] = self.d[i] * u[i];
        }
        w
    }

    /// `W' u`
    fn wt(&self, cones: &Cones, u: &DVector<f64>) -> DVector<f64> {
        let mut w = Self::congruence(cones, u, &self.r, false);
        for i in 0..cones.nl {
            w[i] = self.d[i] * u[i];
        }
        w
    }

    /// `W^{-1} u`
    fn winv(&self, cones: &Cones, u: &DVector<f64>) -> DVector<f64> {
        let mut w = Self::congruence(cones, u, &self.rinv, true);
        for i in 0..cones.nl {
            w[i] = u[i] / self.d[i];
        }
        w
    }

    /// `W^{-T} u`
    fn wit(&self, cones: &Cones, u: &DVector<f64>) -> DVector<f64> {
        let mut w = Self::congruence(cones, u, &self.rinv, false);
        for i in 0..cones.nl {
            w[i] = u[i] / self.d[i];
        }
        w
    }

    /// Jordan division `lambda \ u`.
    fn lam_div(&self, cones: &Cones, u: &DVector<f64>) -> DVector<f64> {
        let mut w = u.clone();
        for i in 0..cones.nl {
            w[i] = u[i] / self.lam_nl[i];
        }
        for (k, &n) in cones.psd.iter().enumerate() {
            let lam = &self.lam_psd[k];
            let mut idx = cones.starts[k];
            for j in 0..n {
                for i in j..n {
                    w[idx] = u[idx] * 2.0 / (lam[i] + lam[j]);
                    idx += 1;
                }
            }
        }
        w
    }

    /// Largest step keeping `lambda + a * dv` in the cone.
    fn max_step(&self, cones: &Cones, dv: &DVector<f64>) -> f64 {
        let mut amax = f64::INFINITY;
        for i in 0..cones.nl {
            if dv[i] < 0.0 {
                amax = amax.min(-self.lam_nl[i] / dv[i]);
            }
        }
        for k in 0..cones.psd.len() {
            if cones.psd[k] == 0 {
                continue;
            }
            let isq = self.lam_psd[k].map(|l| 1.0 / l.sqrt());
            let m = cones.mat(dv, k);
            let scaled = DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)] * isq[i] * isq[j]);
            let emin = SymmetricEigen::new(scaled).eigenvalues.min();
            if emin < 0.0 {
                amax = amax.min(-1.0 / emin);
            }
        }
        amax
    }
}

// ---------------------------------------------------------------------------
// presolve: eliminate cone entries that occur in a single equality

enum Recon {
    Var(usize),
    Expr(LinExpr),
}

struct Presolved {
    /// Program scalar -> kept variable index.
    keep: BTreeMap<usize, usize>,
    /// Eliminated scalar -> expression over program scalars that are kept.
    elim: BTreeMap<usize, LinExpr>,
    used_rows: Vec<bool>,
    n_scalars: usize,
}

struct StandardForm {
    n: usize,
    c: DVector<f64>,
    c0: f64,
    a: DMatrix<f64>,
    b: DVector<f64>,
    g: DMatrix<f64>,
    h: DVector<f64>,
    cones: Cones,
}

impl Presolved {
    fn build(p: &ConicProgram) -> Self {
        let n_scalars = p.n_scalars();
        let mut is_cone = vec![false; n_scalars];
        for b in p.blocks() {
            if matches!(b.kind, BlockKind::Psd { .. } | BlockKind::Nonneg { .. }) {
                for v in b.offset..b.offset + b.kind.scalar_len() {
                    is_cone[v] = true;
                }
            }
        }
        let mut count = vec![0usize; n_scalars];
        for eq in &p.equalities {
            for &v in eq.expr.terms.keys() {
                count[v] += 1;
            }
        }
        let mut elim = BTreeMap::new();
        let mut used_rows = vec![false; p.equalities.len()];
        for (r, eq) in p.equalities.iter().enumerate() {
            let rowmax = eq.expr.terms.values().fold(0.0f64, |a, c| a.max(c.abs()));
            let pick = eq
                .expr
                .terms
                .iter()
                .filter(|(&v, c)| is_cone[v] && count[v] == 1 && c.abs() >= 1e-6 * rowmax)
                .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()).then(b.0.cmp(a.0)));
            if let Some((&v, &coef)) = pick {
                let mut rest = eq.expr.clone();
                rest.terms.remove(&v);
                elim.insert(v, rest.scaled(-1.0 / coef));
                used_rows[r] = true;
            }
        }
        let mut keep = BTreeMap::new();
        for v in 0..n_scalars {
            if !elim.contains_key(&v) {
                let k = keep.len();
                keep.insert(v, k);
            }
        }
        Self {
            keep,
            elim,
            used_rows,
            n_scalars,
        }
    }

    fn resolve(&self, v: usize) -> Recon {
        match self.elim.get(&v) {
            Some(e) => Recon::Expr(e.clone()),
            None => Recon::Var(self.keep[&v]),
        }
    }

    /// Adds `coef * scalar` into (row of) a dense target over kept variables,
    /// returning the constant contribution.
    fn accumulate(&self, v: usize, coef: f64, row: &mut [f64]) -> f64 {
        match self.resolve(v) {
            Recon::Var(k) => {
                row[k] += coef;
                0.0
            }
            Recon::Expr(e) => {
                for (&u, &c) in &e.terms {
                    row[self.keep[&u]] += coef * c;
                }
                coef * e.constant
            }
        }
    }

    fn standard_form(&self, p: &ConicProgram) -> StandardForm {
        let n = self.keep.len();
        let mut c = vec![0.0; n];
        let mut c0 = p.objective.constant;
        for (&v, &coef) in &p.objective.terms {
            c0 += self.accumulate(v, coef, &mut c);
        }

        let rows: Vec<usize> = (0..p.equalities.len()).filter(|&r| !self.used_rows[r]).collect();
        let m = rows.len();
        let mut a = DMatrix::zeros(m, n);
        let mut b = DVector::zeros(m);
        let mut buf = vec![0.0; n];
        for (i, &r) in rows.iter().enumerate() {
            buf.iter_mut().for_each(|x| *x = 0.0);
            let mut k0 = p.equalities[r].expr.constant;
            for (&v, &coef) in &p.equalities[r].expr.terms {
                k0 += self.accumulate(v, coef, &mut buf);
            }
            for (j, &x) in buf.iter().enumerate() {
                a[(i, j)] = x;
            }
            b[i] = -k0;
        }

        // cone layout: every nonnegative scalar first, then PSD blocks in order
        let mut nl = 0;
        let mut psd = Vec::new();
        for blk in p.blocks() {
            match blk.kind {
                BlockKind::Nonneg { n } => nl += n,
                BlockKind::Psd { n } => psd.push(n),
                _ => {}
            }
        }
        let cones = Cones::new(nl, psd);
        let mut cone_rows = Vec::new();
        let mut nl_pos = 0;
        let mut psd_idx = 0;
        for blk in p.blocks() {
            match blk.kind {
                BlockKind::Nonneg { n } => {
                    for i in 0..n {
                        cone_rows.push((blk.offset + i, nl_pos, 1.0));
                        nl_pos += 1;
                    }
                }
                BlockKind::Psd { n } => {
                    let start = cones.starts[psd_idx];
                    for k in 0..n * (n + 1) / 2 {
                        let (i, j) = super::packed_pos(n, k);
                        let sc = if i == j { 1.0 } else { SQRT_2 };
                        cone_rows.push((blk.offset + k, start + k, sc));
                    }
                    psd_idx += 1;
                }
                _ => {}
            }
        }
        let mut g = DMatrix::zeros(cones.dim, n);
        let mut h = DVector::zeros(cones.dim);
        for &(v, row, sc) in &cone_rows {
            buf.iter_mut().for_each(|x| *x = 0.0);
            let k0 = self.accumulate(v, 1.0, &mut buf);
            // s = sc * (k0 + buf . x) = h - G x
            h[row] = sc * k0;
            for (j, &x) in buf.iter().enumerate() {
                if x != 0.0 {
                    g[(row, j)] = -sc * x;
                }
            }
        }
        StandardForm {
            n,
            c: DVector::from_vec(c),
            c0,
            a,
            b,
            g,
            h,
            cones,
        }
    }

    fn values(&self, x: &DVector<f64>) -> Vec<f64> {
        let mut vals = vec![0.0; self.n_scalars];
        for (&v, &k) in &self.keep {
            vals[v] = x[k];
        }
        for (&v, e) in &self.elim {
            vals[v] = e.eval(&vals);
        }
        vals
    }

    fn trivial_solution(&self, p: &ConicProgram, sf: &StandardForm, settings: &Settings) -> Solution {
        let x = DVector::zeros(0);
        let values = self.values(&x);
        let eq_res = sf.b.amax();
        let cone_viol = sf.cones.max_violation(&sf.h).max(0.0);
        let ok = eq_res <= settings.feas_tol * (1.0 + sf.b.amax()) && cone_viol <= settings.feas_tol;
        let obj = p.objective.eval(&values);
        Solution {
            status: if ok {
                SolveStatus::Optimal
            } else {
                SolveStatus::Infeasible
            },
            values,
            primal_objective: obj,
            dual_objective: obj,
            iterations: 0,
            primal_residual: eq_res.max(cone_viol),
            dual_residual: 0.0,
            gap: 0.0,
            message: "no free variables after presolve".into(),
        }
    }

    fn finish(&self, p: &ConicProgram, raw: RawResult) -> Solution {
        let values = self.values(&raw.x);
        let obj = p.objective.eval(&values);
        Solution {
            status: raw.status,
            values,
            primal_objective: obj,
            dual_objective: raw.dual_objective + (obj - raw.primal_objective),
            iterations: raw.iterations,
            primal_residual: raw.pres,
            dual_residual: raw.dres,
            gap: raw.gap,
            message: raw.message,
        }
    }
}

// ---------------------------------------------------------------------------
// rank reduction: directions of x that no constraint or cost sees, and
// redundant equality rows, make the Newton system singular

/// Returns the reduced form, a basis `R` and a shift `x0` with
/// `x = x0 + R xi`. Equalities are eliminated when consistent.
fn reduce(sf: &StandardForm) -> (StandardForm, DMatrix<f64>, DVector<f64>) {
    let n = sf.n;
    let m = sf.a.nrows();
    let kdim = sf.cones.dim;
    let mut stacked = DMatrix::zeros(m + kdim + 1, n);
    stacked.view_mut((0, 0), (m, n)).copy_from(&sf.a);
    stacked.view_mut((m, 0), (kdim, n)).copy_from(&sf.g);
    stacked.row_mut(m + kdim).copy_from(&sf.c.transpose());
    // column scaling so that the rank decision is not fooled by units
    let scale = DVector::from_fn(n, |j, _| {
        let c = stacked.column(j).amax();
        if c > 0.0 {
            1.0 / c
        } else {
            1.0
        }
    });
    let mut scaled = stacked.clone();
    for j in 0..n {
        scaled.column_mut(j).scale_mut(scale[j]);
    }
    let svd = scaled.svd(false, true);
    let vt = svd.v_t.expect("requested");
    let smax = svd.singular_values.max();
    let tol = 1e-12 * smax * (m + kdim + 1).max(n) as f64;
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] > tol)
        .collect();
    let basis = if keep.len() == n || keep.is_empty() {
        DMatrix::identity(n, n)
    } else {
        // x = D V_r xi with D the column scaling
        let mut r = DMatrix::zeros(n, keep.len());
        for (k, &i) in keep.iter().enumerate() {
            for j in 0..n {
                r[(j, k)] = scale[j] * vt[(i, j)];
            }
        }
        r
    };
    let nr = basis.ncols();
    let a = &sf.a * &basis;
    let mut shift = DVector::zeros(n);
    let mut basis = basis;
    let mut red = StandardForm {
        n: nr,
        c: basis.transpose() * &sf.c,
        c0: sf.c0,
        a,
        b: sf.b.clone(),
        g: &sf.g * &basis,
        h: sf.h.clone(),
        cones: sf.cones.clone(),
    };
    if m > 0 && nr > 0 {
        // eliminate the equalities: xi = xi0 + N zeta with A xi0 = b.
        // Zero rows pad a wide A so the SVD returns a complete V.
        let rows = m.max(nr);
        let mut padded = DMatrix::zeros(rows, nr);
        padded.view_mut((0, 0), (m, nr)).copy_from(&red.a);
        let svd = padded.svd(true, true);
        let u = svd.u.as_ref().expect("requested");
        let vt = svd.v_t.as_ref().expect("requested");
        let smax = svd.singular_values.max();
        let tol = 1e-12 * smax.max(1e-300) * m.max(nr) as f64;
        let mut xi0 = DVector::zeros(nr);
        for i in 0..svd.singular_values.len() {
            let sv = svd.singular_values[i];
            if sv > tol {
                let coef = u.view((0, i), (m, 1)).dot(&red.b) / sv;
                xi0 += vt.row(i).transpose() * coef;
            }
        }
        let resid = &red.b - &red.a * &xi0;
        // an inconsistent system is kept so that infeasibility is reported
        if resid.amax() <= 1e-9 * (1.0 + red.b.amax()) {
            let null: Vec<usize> = (0..nr).filter(|&i| svd.singular_values[i] <= tol).collect();
            let nmat = DMatrix::from_fn(nr, null.len(), |i, k| vt[(null[k], i)]);
            shift = &basis * &xi0;
            red.c0 += red.c.dot(&xi0);
            red.h = &red.h - &red.g * &xi0;
            red.g = &red.g * &nmat;
            red.c = nmat.transpose() * &red.c;
            red.a = DMatrix::zeros(0, null.len());
            red.b = DVector::zeros(0);
            red.n = null.len();
            basis = &basis * &nmat;
        }
    }
    (red, basis, shift)
}

/// Outcome when the equalities leave no freedom: feasible iff the fixed
/// slack lies in the cone.
fn pinned(sf: &StandardForm, settings: &Settings) -> RawResult {
    let viol = sf.cones.max_violation(&sf.h).max(0.0);
    let eq = if !sf.b.is_empty() { sf.b.amax() } else { 0.0 };
    let ok = viol <= settings.feas_tol * (1.0 + sf.h.amax()) && eq <= settings.feas_tol;
    RawResult {
        status: if ok {
            SolveStatus::Optimal
        } else {
            SolveStatus::Infeasible
        },
        x: DVector::zeros(0),
        primal_objective: sf.c0,
        dual_objective: sf.c0,
        iterations: 0,
        pres: viol.max(eq),
        dres: 0.0,
        gap: 0.0,
        message: "solution fixed by the equalities".into(),
    }
}

// ---------------------------------------------------------------------------
// equilibration

struct Equilibration {
    d: DVector<f64>,
    e: DVector<f64>,
    f: DVector<f64>,
}

fn equilibrate(sf: &mut StandardForm) -> Equilibration {
    let (m, n, kdim) = (sf.a.nrows(), sf.n, sf.cones.dim);
    let mut d = DVector::from_element(n, 1.0);
    let mut e = DVector::from_element(m, 1.0);
    let mut f = DVector::from_element(kdim, 1.0);
    let clamp = |x: f64| if x > 0.0 && x.is_finite() { x.clamp(1e-4, 1e4) } else { 1.0 };
    for _ in 0..12 {
        // columns
        let mut cs = DVector::zeros(n);
        for j in 0..n {
            let na = if m > 0 { sf.a.column(j).amax() } else { 0.0 };
            let ng = if kdim > 0 { sf.g.column(j).amax() } else { 0.0 };
            cs[j] = 1.0 / clamp(na.max(ng)).sqrt();
        }
        // equality rows
        let mut rs = DVector::zeros(m);
        for i in 0..m {
            rs[i] = 1.0 / clamp(sf.a.row(i).amax()).sqrt();
        }
        // cone rows: one factor per PSD block keeps the cone invariant
        let mut fs = DVector::from_element(kdim, 1.0);
        for i in 0..sf.cones.nl {
            fs[i] = 1.0 / clamp(sf.g.row(i).amax()).sqrt();
        }
        for (k, &nb) in sf.cones.psd.iter().enumerate() {
            let start = sf.cones.starts[k];
            let len = nb * (nb + 1) / 2;
            if len == 0 {
                continue;
            }
            let mx = sf.g.rows(start, len).amax();
            let s = 1.0 / clamp(mx).sqrt();
            for r in start..start + len {
                fs[r] = s;
            }
        }
        for j in 0..n {
            sf.a.column_mut(j).scale_mut(cs[j]);
            sf.g.column_mut(j).scale_mut(cs[j]);
            sf.c[j] *= cs[j];
        }
        for i in 0..m {
            sf.a.row_mut(i).scale_mut(rs[i]);
            sf.b[i] *= rs[i];
        }
        for i in 0..kdim {
            sf.g.row_mut(i).scale_mut(fs[i]);
            sf.h[i] *= fs[i];
        }
        d.component_mul_assign(&cs);
        e.component_mul_assign(&rs);
        f.component_mul_assign(&fs);
    }
    Equilibration { d, e, f }
}

// ---------------------------------------------------------------------------
// the interior-point iteration

struct RawResult {
    status: SolveStatus,
    x: DVector<f64>,
    primal_objective: f64,
    dual_objective: f64,
    iterations: usize,
    pres: f64,
    dres: f64,
    gap: f64,
    message: String,
}

struct Kkt<'a> {
    sf: &'a StandardForm,
    scaling: Option<&'a Scaling>,
    /// `W^{-T} G`
    gh: DMatrix<f64>,
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

impl<'a> Kkt<'a> {
    fn new(sf: &'a StandardForm, scaling: Option<&'a Scaling>) -> Option<Self> {
        let n = sf.n;
        let m = sf.a.nrows();
        let mut gh = sf.g.clone();
        if let Some(w) = scaling {
            for j in 0..n {
                let col = sf.g.column(j).into_owned();
                if col.iter().all(|&v| v == 0.0) {
                    continue;
                }
                gh.set_column(j, &w.wit(&sf.cones, &col));
            }
        }
        let hmat = gh.transpose() * &gh;
        let diag_max = (0..n).map(|i| hmat[(i, i)]).fold(1.0f64, f64::max);
        let delta = 1e-14 * diag_max;
        let mut k = DMatrix::zeros(n + m, n + m);
        k.view_mut((0, 0), (n, n)).copy_from(&hmat);
        for i in 0..n {
            k[(i, i)] += delta;
        }
        if m > 0 {
            k.view_mut((n, 0), (m, n)).copy_from(&sf.a);
            k.view_mut((0, n), (n, m)).copy_from(&sf.a.transpose());
            for i in 0..m {
                k[(n + i, n + i)] = -delta;
            }
        }
        if k.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let lu = k.lu();
        Some(Self {
            sf,
            scaling,
            gh,
            lu,
        })
    }

    fn wit(&self, u: &DVector<f64>) -> DVector<f64> {
        match self.scaling {
            Some(w) => w.wit(&self.sf.cones, u),
            None => u.clone(),
        }
    }

    fn winv(&self, u: &DVector<f64>) -> DVector<f64> {
        match self.scaling {
            Some(w) => w.winv(&self.sf.cones, u),
            None => u.clone(),
        }
    }

    /// `[H A'; A 0] [x; y] = [r1 + Gh' r3s; r2]` with the regularized factor.
    fn reduced(
        &self,
        r1: &DVector<f64>,
        r2: &DVector<f64>,
        r3s: &DVector<f64>,
    ) -> Option<(DVector<f64>, DVector<f64>)> {
        let n = self.sf.n;
        let m = self.sf.a.nrows();
        let mut rhs = DVector::zeros(n + m);
        rhs.rows_mut(0, n).copy_from(&(r1 + self.gh.transpose() * r3s));
        rhs.rows_mut(n, m).copy_from(r2);
        let sol = self.lu.solve(&rhs)?;
        Some((sol.rows(0, n).into_owned(), sol.rows(n, m).into_owned()))
    }

    /// Solves `[0 A' G'; A 0 0; G 0 -W'W] [x; y; z] = [r1; r2; r3]`.
    fn solve(
        &self,
        r1: &DVector<f64>,
        r2: &DVector<f64>,
        r3: &DVector<f64>,
    ) -> Option<(DVector<f64>, DVector<f64>, DVector<f64>)> {
        let r3s = self.wit(r3);
        // reduced solve, refined against the residual of the full scaled
        // system so that forming G'G does not limit accuracy
        let (mut dx, mut dy) = self.reduced(r1, r2, &r3s)?;
        let mut dzs = &self.gh * &dx - &r3s;
        let mut best = f64::INFINITY;
        for _ in 0..6 {
            let e1 = r1 - self.sf.a.transpose() * &dy - self.gh.transpose() * &dzs;
            let e2 = r2 - &self.sf.a * &dx;
            let e3 = &r3s - (&self.gh * &dx - &dzs);
            let res = e1.amax().max(e2.amax()).max(e3.amax());
            if !(res < best) || res <= 1e-15 * (1.0 + r1.amax().max(r2.amax()).max(r3s.amax())) {
                break;
            }
            best = res;
            let (cx, cy) = self.reduced(&e1, &e2, &e3)?;
            dzs += &self.gh * &cx - &e3;
            dx += cx;
            dy += cy;
        }
        let dz = self.winv(&dzs);
        if dx.iter().chain(dy.iter()).chain(dz.iter()).any(|v| !v.is_finite()) {
            return None;
        }
        Some((dx, dy, dz))
    }
}

fn hsd(sf0: &StandardForm, settings: &Settings) -> RawResult {
    let mut sf = StandardForm {
        n: sf0.n,
        c: sf0.c.clone(),
        c0: sf0.c0,
        a: sf0.a.clone(),
        b: sf0.b.clone(),
        g: sf0.g.clone(),
        h: sf0.h.clone(),
        cones: sf0.cones.clone(),
    };
    let eq = equilibrate(&mut sf);
    let sf = &sf;
    let cones = &sf.cones;
    let n = sf.n;
    let m = sf.a.nrows();

    let norm_c = sf0.c.norm().max(1.0);
    let norm_b = sf0.b.norm().max(1.0);
    let norm_h = sf0.h.norm().max(1.0);
    let unscale = |v: &DVector<f64>, s: &DVector<f64>| v.component_div(s);

    let fail = |msg: &str, x: DVector<f64>, it: usize| RawResult {
        status: SolveStatus::NumericalFailure,
        x,
        primal_objective: f64::NAN,
        dual_objective: f64::NAN,
        iterations: it,
        pres: f64::INFINITY,
        dres: f64::INFINITY,
        gap: f64::INFINITY,
        message: msg.to_string(),
    };

    // starting point from the unscaled (W = I) KKT system
    let Some(kkt0) = Kkt::new(sf, None) else {
        return fail("non-finite problem data", DVector::zeros(n), 0);
    };
    let e = cones.identity();
    let Some((mut x, _, zp)) = kkt0.solve(&DVector::zeros(n), &sf.b, &sf.h) else {
        return fail("singular start system", DVector::zeros(n), 0);
    };
    let mut s = -zp;
    let Some((_, mut y, mut z)) = kkt0.solve(&(-&sf.c), &DVector::zeros(m), &DVector::zeros(cones.dim)) else {
        return fail("singular start system", DVector::zeros(n), 0);
    };
    let ts = cones.max_violation(&s);
    if cones.dim > 0 && ts >= -1e-8 * s.norm().max(1.0) {
        s += &e * (1.0 + ts);
    }
    let tz = cones.max_violation(&z);
    if cones.dim > 0 && tz >= -1e-8 * z.norm().max(1.0) {
        z += &e * (1.0 + tz);
    }
    let mut tau = 1.0;
    let mut kappa = 1.0;
    let nu = cones.degree() as f64;

    let mut last = (f64::INFINITY, f64::INFINITY, f64::INFINITY);
    let mut stalls = 0;
    // least-violating iterate seen, returned when progress stalls
    let mut best: Option<(f64, RawResult)> = None;
    let mut since_best = 0;
    for it in 0..=settings.max_iter {
        let rx = sf.a.transpose() * &y + sf.g.transpose() * &z + &sf.c * tau;
        let ry = &sf.a * &x - &sf.b * tau;
        let rz = &s + &sf.g * &x - &sf.h * tau;
        let cx = sf.c.dot(&x);
        let by = sf.b.dot(&y);
        let hz = sf.h.dot(&z);
        let rt = kappa + cx + by + hz;
        let sz = s.dot(&z);

        let pres = (unscale(&ry, &eq.e).norm() / norm_b).max(unscale(&rz, &eq.f).norm() / norm_h) / tau;
        let dres = rx.component_div(&eq.d).norm() / norm_c / tau;
        let pcost = cx / tau;
        let dcost = -(by + hz) / tau;
        let gap = sz / (tau * tau);
        let relgap = gap / pcost.abs().min(dcost.abs()).max(1.0);
        last = (pres, dres, gap);
        if settings.verbose {
            eprintln!(
                "{it:3} pcost {pcost:+.6e} dcost {dcost:+.6e} gap {gap:.1e} pres {pres:.1e} dres {dres:.1e} tau {tau:.1e} kappa {kappa:.1e}"
            );
        }
        if [pres, dres, gap, tau, kappa].iter().any(|v| !v.is_finite()) {
            return fail("non-finite iterate", x.component_mul(&eq.d) / tau.max(1e-300), it);
        }
        let score = pres.max(dres).max(relgap.min(gap));
        if best.as_ref().is_none_or(|b| score < b.0) {
            since_best = 0;
            best = Some((
                score,
                RawResult {
                    status: SolveStatus::NumericalFailure,
                    x: x.component_mul(&eq.d) / tau,
                    primal_objective: pcost + sf.c0,
                    dual_objective: dcost + sf.c0,
                    iterations: it,
                    pres,
                    dres,
                    gap,
                    message: "iteration limit or stalled progress".into(),
                },
            ));
        } else {
            since_best += 1;
            if since_best > 30 {
                break;
            }
        }
        if pres <= settings.feas_tol && dres <= settings.feas_tol && (relgap <= settings.gap_tol || gap <= settings.gap_tol) {
            return RawResult {
                status: SolveStatus::Optimal,
                x: x.component_mul(&eq.d) / tau,
                primal_objective: pcost + sf.c0,
                dual_objective: dcost + sf.c0,
                iterations: it,
                pres,
                dres,
                gap,
                message: "optimal".into(),
            };
        }
        if hz + by < 0.0 {
            let aty_gtz = sf.a.transpose() * &y + sf.g.transpose() * &z;
            let pinf = aty_gtz.component_div(&eq.d).norm() / norm_c / (-(hz + by));
            if pinf <= settings.feas_tol {
                return RawResult {
                    status: SolveStatus::Infeasible,
                    x: x.component_mul(&eq.d) / tau.max(1e-300),
                    primal_objective: f64::INFINITY,
                    dual_objective: f64::INFINITY,
                    iterations: it,
                    pres,
                    dres,
                    gap,
                    message: "primal infeasibility certificate".into(),
                };
            }
        }
        if cx < 0.0 {
            let ax = &sf.a * &x;
            let gxs = &sf.g * &x + &s;
            let dinf = (unscale(&ax, &eq.e).norm() / norm_b).max(unscale(&gxs, &eq.f).norm() / norm_h) / (-cx);
            if dinf <= settings.feas_tol {
                return RawResult {
                    status: SolveStatus::Unbounded,
                    x: x.component_mul(&eq.d) / tau.max(1e-300),
                    primal_objective: f64::NEG_INFINITY,
                    dual_objective: f64::NEG_INFINITY,
                    iterations: it,
                    pres,
                    dres,
                    gap,
                    message: "dual infeasibility certificate".into(),
                };
            }
        }
        if it == settings.max_iter {
            break;
        }

        let Some(w) = Scaling::compute(cones, &s, &z) else {
            return fail("iterate left the cone", x.component_mul(&eq.d) / tau, it);
        };
        let lam = w.lambda(cones);
        let mu = (sz + tau * kappa) / (nu + 1.0);
        let Some(kkt) = Kkt::new(sf, Some(&w)) else {
            return fail("non-finite Newton system", x.component_mul(&eq.d) / tau, it);
        };
        let Some((x1, y1, z1)) = kkt.solve(&(-&sf.c), &sf.b, &sf.h) else {
            return fail("singular Newton system", x.component_mul(&eq.d) / tau, it);
        };
        let denom = -kappa / tau + sf.c.dot(&x1) + sf.b.dot(&y1) + sf.h.dot(&z1);

        let lam_sq = cones.jordan(&lam, &lam);
        let direction = |eta: f64, smu: f64, dc: &DVector<f64>, dk: f64| {
            let t = w.lam_div(cones, &(&e * smu - &lam_sq - dc));
            let r3 = -&rz * eta - w.wt(cones, &t);
            let (x2, y2, z2) = kkt.solve(&(-&rx * eta), &(-&ry * eta), &r3)?;
            let num = -eta * rt - (smu - tau * kappa - dk) / tau - (sf.c.dot(&x2) + sf.b.dot(&y2) + sf.h.dot(&z2));
            let dtau = num / denom;
            let dx = x2 + &x1 * dtau;
            let dy = y2 + &y1 * dtau;
            let dz = z2 + &z1 * dtau;
            let dzs = w.w(cones, &dz);
            // ds from the primal row rather than from the scaled
            // complementarity row: keeps primal residuals contracting once
            // the scaling becomes badly conditioned
            let ds = -&rz * eta - &sf.g * &dx + &sf.h * dtau;
            let dss = w.wit(cones, &ds);
            let dkappa = (smu - tau * kappa - dk - kappa * dtau) / tau;
            Some((dx, dy, dz, ds, dtau, dkappa, dss, dzs))
        };
        let step = |dss: &DVector<f64>, dzs: &DVector<f64>, dtau: f64, dkappa: f64| {
            let mut a = w.max_step(cones, dss).min(w.max_step(cones, dzs));
            if dtau < 0.0 {
                a = a.min(-tau / dtau);
            }
            if dkappa < 0.0 {
                a = a.min(-kappa / dkappa);
            }
            a
        };

        let zero = DVector::zeros(cones.dim);
        let Some((_, _, _, _, dtau_a, dkappa_a, dss_a, dzs_a)) = direction(1.0, 0.0, &zero, 0.0) else {
            return fail("affine direction failed", x.component_mul(&eq.d) / tau, it);
        };
        let alpha_aff = step(&dss_a, &dzs_a, dtau_a, dkappa_a).min(1.0);
        let sigma = (1.0 - alpha_aff).powi(3);
        let dc = cones.jordan(&dss_a, &dzs_a);
        let dk = dtau_a * dkappa_a;
        let Some((dx, dy, dz, ds, dtau, dkappa, dss, dzs)) = direction(1.0 - sigma, sigma * mu, &dc, dk) else {
            return fail("combined direction failed", x.component_mul(&eq.d) / tau, it);
        };
        let alpha = (0.99 * step(&dss, &dzs, dtau, dkappa)).min(1.0);
        if alpha < 1e-12 {
            stalls += 1;
            if stalls > 3 {
                break;
            }
        } else {
            stalls = 0;
        }
        x += &dx * alpha;
        y += &dy * alpha;
        z += &dz * alpha;
        s += &ds * alpha;
        tau += dtau * alpha;
        kappa += dkappa * alpha;
    }
    if let Some((score, mut b)) = best {
        if score <= settings.reduced_tol {
            b.status = SolveStatus::AlmostOptimal;
            b.message = "stalled within reduced tolerances".into();
        }
        return b;
    }
    RawResult {
        status: SolveStatus::NumericalFailure,
        x: x.component_mul(&eq.d) / tau.max(1e-300),
        primal_objective: sf.c.dot(&x) / tau + sf.c0,
        dual_objective: -(sf.b.dot(&y) + sf.h.dot(&z)) / tau + sf.c0,
        iterations: settings.max_iter,
        pres: last.0,
        dres: last.1,
        gap: last.2,
        message: "iteration limit or stalled progress".into(),
    }
}

#[cfg(test)]
mod tests {
    use super::super::{solve, verify_solution, ConicProgram, LinExpr, Settings, SolveStatus, VerifyTolerances};
    use nalgebra::DMatrix;
    use proptest::prelude::*;

    fn near(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b}");
    }

    #[test]
    fn shifted_scalar_lower_bound() {
        // min x s.t. x - 3 = s, s >= 0 (1x1 PSD)
        let mut p = ConicProgram::new();
        let x = p.add_free("x", 1, 1);
        let s = p.add_psd("s", 1);
        let mut e = p.entry(x, 0, 0);
        e.add_term(p.var(s, 0, 0), -1.0);
        e.add_constant(-3.0);
        p.add_equality(e, "shift");
        p.set_objective(p.entry(x, 0, 0));
        let sol = solve(&p, &Settings::default());
        assert_eq!(sol.status, SolveStatus::Optimal);
        near(sol.values[p.var(x, 0, 0)], 3.0, 1e-7);
    }

    #[test]
    fn two_by_two_psd_boundary() {
        // max t with [[1, t], [t, 1]] >= 0
        let mut p = ConicProgram::new();
        let m = p.add_psd("M", 2);
        for i in 0..2 {
            let mut e = p.entry(m, i, i);
            e.add_constant(-1.0);
            p.add_equality(e, format!("diag{i}"));
        }
        p.set_objective(p.entry(m, 1, 0).scaled(-1.0));
        let sol = solve(&p, &Settings::default());
        assert_eq!(sol.status, SolveStatus::Optimal);
        near(sol.values[p.var(m, 1, 0)], 1.0, 1e-6);
        assert!(verify_solution(&p, &sol.values, VerifyTolerances::default()).pass);
    }

    #[test]
    fn small_lp() {
        // min x + 2y, x + y = 1, x, y >= 0
        let mut p = ConicProgram::new();
        let v = p.add_nonneg("v", 2);
        let mut e = LinExpr::constant(-1.0);
        e.add_term(p.var(v, 0, 0), 1.0);
        e.add_term(p.var(v, 1, 0), 1.0);
        p.add_equality(e, "sum");
        let mut obj = LinExpr::zero();
        obj.add_term(p.var(v, 0, 0), 1.0);
        obj.add_term(p.var(v, 1, 0), 2.0);
        p.set_objective(obj);
        let sol = solve(&p, &Settings::default());
        assert_eq!(sol.status, SolveStatus::Optimal);
        near(sol.primal_objective, 1.0, 1e-7);
    }

    #[test]
    fn infeasible_is_detected() {
        // s >= 0 and s + 1 = 0
        let mut p = ConicProgram::new();
        let s = p.add_nonneg("s", 1);
        let mut e = p.entry(s, 0, 0);
        e.add_constant(1.0);
        p.add_equality(e, "neg");
        let t = p.add_nonneg("t", 1);
        p.set_objective(p.entry(t, 0, 0));
        assert_eq!(solve(&p, &Settings::default()).status, SolveStatus::Infeasible);
    }

    #[test]
    fn psd_infeasible_is_detected() {
        // [[1, 2], [2, 1]] is not PSD
        let mut p = ConicProgram::new();
        let m = p.add_psd("M", 2);
        for (i, j, c) in [(0, 0, 1.0), (1, 1, 1.0), (1, 0, 2.0)] {
            let mut e = p.entry(m, i, j);
            e.add_constant(-c);
            p.add_equality(e, format!("m{i}{j}"));
        }
        let st = solve(&p, &Settings::default()).status;
        assert!(matches!(st, SolveStatus::Infeasible), "{st:?}");
    }

    #[test]
    fn unbounded_is_detected() {
        // min -s, s >= 0, t - s = 0, t >= 0
        let mut p = ConicProgram::new();
        let s = p.add_nonneg("s", 2);
        let mut e = p.entry(s, 0, 0);
        e.add_term(p.var(s, 1, 0), -1.0);
        p.add_equality(e, "tie");
        p.set_objective(p.entry(s, 0, 0).scaled(-1.0));
        assert_eq!(solve(&p, &Settings::default()).status, SolveStatus::Unbounded);
    }

    #[test]
    fn non_finite_data_never_panics() {
        let mut p = ConicProgram::new();
        let s = p.add_psd("s", 2);
        let mut e = p.entry(s, 0, 0);
        e.add_constant(f64::NAN);
        p.add_equality(e, "nan");
        let sol = solve(&p, &Settings::default());
        assert_ne!(sol.status, SolveStatus::Optimal);
    }

    #[test]
    fn constraint_free_program_is_trivial() {
        let mut p = ConicProgram::new();
        let s = p.add_psd("s", 3);
        p.set_objective(p.entry(s, 0, 0));
        let sol = solve(&p, &Settings::default());
        assert_eq!(sol.status, SolveStatus::Optimal);
        near(sol.primal_objective, 0.0, 1e-8);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        // min <C, X> s.t. trace(X) = 1, X >= 0 equals the smallest eigenvalue of C.
        #[test]
        fn wide_equalities_hold_after_elimination(seed in any::<u64>(), m in 1usize..8) {
            // free y with y_i = X_ii for a PSD X and a short, wide system A y = b
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let n = 12;
            let mut p = ConicProgram::new();
            let y = p.add_free("y", n, 1);
            let x = p.add_psd("X", n);
            let mut obj = LinExpr::zero();
            for i in 0..n {
                let mut e = LinExpr::zero();
                e.add_term(p.var(x, i, i), 1.0);
                e.add_term(p.var(y, i, 0), -1.0);
                p.add_equality(e, "diag");
                obj.add_term(p.var(y, i, 0), 1.0);
            }
            let target: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
            for _ in 0..m {
                let row: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
                let mut e = LinExpr::constant(-row.iter().zip(&target).map(|(a, t)| a * t).sum::<f64>());
                for (i, a) in row.iter().enumerate() {
                    e.add_term(p.var(y, i, 0), *a);
                }
                p.add_equality(e, "wide");
            }
            p.set_objective(obj);
            let sol = solve(&p, &Settings::default());
            prop_assert!(matches!(sol.status, SolveStatus::Optimal | SolveStatus::AlmostOptimal), "{:?}", sol.status);
            let rep = verify_solution(&p, &sol.values, VerifyTolerances::default());
            prop_assert!(rep.max_equality_residual <= 1e-7, "{}", rep.max_equality_residual);
        }

        #[test]
        fn trace_one_program_finds_min_eigenvalue(n in 2usize..6, entries in proptest::collection::vec(-1.0f64..1.0, 36)) {
            let a = DMatrix::from_fn(n, n, |i, j| entries[i * 6 + j]);
            let c = (&a + a.transpose()) * 0.5;
            let mut p = ConicProgram::new();
            let x = p.add_psd("X", n);
            let mut tr = LinExpr::constant(-1.0);
            let mut obj = LinExpr::zero();
            for i in 0..n {
                tr.add_term(p.var(x, i, i), 1.0);
                for j in 0..=i {
                    let w = if i == j { 1.0 } else { 2.0 };
                    obj.add_term(p.var(x, i, j), w * c[(i, j)]);
                }
            }
            p.add_equality(tr, "trace");
            p.set_objective(obj);
            let sol = solve(&p, &Settings::default());
            prop_assert_eq!(sol.status, SolveStatus::Optimal);
            let lmin = c.symmetric_eigenvalues().min();
            prop_assert!((sol.primal_objective - lmin).abs() < 1e-6, "{} vs {}", sol.primal_objective, lmin);
            prop_assert!(verify_solution(&p, &sol.values, VerifyTolerances::default()).pass);
        }
    }
}
