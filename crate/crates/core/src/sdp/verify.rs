//! Independent feasibility check of a candidate point.

use nalgebra::SymmetricEigen;
use serde::{Deserialize, Serialize};

use super::{BlockKind, ConicProgram};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyTolerances {
    /// Equalities must satisfy `|lhs - rhs| <= eq * (1 + |rhs|)`.
    pub eq: f64,
    /// PSD blocks and nonnegative entries must be `>= -cone`.
    pub cone: f64,
}

impl Default for VerifyTolerances {
    fn default() -> Self {
        Self { eq: 1e-6, cone: 1e-7 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ResidualReport {
    /// Largest scaled equality residual and the label where it occurs.
    pub max_equality_residual: f64,
    pub worst_equality: Option<String>,
    /// Smallest eigenvalue of each PSD block, by block name.
    pub min_eigenvalues: Vec<(String, f64)>,
    /// Smallest entry over all nonnegative blocks (`+inf` if none).
    pub min_nonneg: f64,
    pub objective: f64,
    pub pass: bool,
}

impl ResidualReport {
    pub fn min_eigenvalue(&self, block: &str) -> Option<f64> {
        self.min_eigenvalues
            .iter()
            .find(|(n, _)| n == block)
            .map(|&(_, v)| v)
    }
}

/// Recomputes equality residuals and cone membership of `values` from the
/// program description alone.
pub fn verify_solution(p: &ConicProgram, values: &[f64], tol: VerifyTolerances) -> ResidualReport {
    let finite = values.len() == p.n_scalars() && values.iter().all(|v| v.is_finite());
    let mut max_res: f64 = 0.0;
    let mut worst = None;
    if finite {
        for eq in &p.equalities {
            let rhs = -eq.expr.constant;
            let lhs: f64 = eq.expr.terms.iter().map(|(&v, &c)| c * values[v]).sum();
            let r = (lhs - rhs).abs() / (1.0 + rhs.abs());
            if r > max_res {
                max_res = r;
                worst = Some(eq.label.clone());
            }
        }
    }
    let mut mins = Vec::new();
    let mut min_nonneg = f64::INFINITY;
    let mut cone_ok = true;
    if finite {
        for (k, b) in p.blocks().iter().enumerate() {
            match b.kind {
                BlockKind::Psd { n } => {
                    let m = p.block_value(super::BlockId(k), values);
                    let e = if n == 0 {
                        f64::INFINITY
                    } else {
                        SymmetricEigen::new(m).eigenvalues.min()
                    };
                    cone_ok &= e >= -tol.cone;
                    mins.push((b.name.clone(), e));
                }
                BlockKind::Nonneg { n } => {
                    for i in 0..n {
                        min_nonneg = min_nonneg.min(values[b.offset + i]);
                    }
                }
                _ => {}
            }
        }
        cone_ok &= min_nonneg >= -tol.cone;
    }
    let objective = if finite {
        p.objective.eval(values)
    } else {
        f64::NAN
    };
    ResidualReport {
        max_equality_residual: if finite { max_res } else { f64::INFINITY },
        worst_equality: worst,
        min_eigenvalues: mins,
        min_nonneg,
        objective,
        pass: finite && cone_ok && max_res <= tol.eq,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> (ConicProgram, Vec<f64>) {
        // X psd 2x2 with X00 + X11 = 2, t >= 0 with t - X01 = 0
        let mut p = ConicProgram::new();
        let x = p.add_psd("X", 2);
        let t = p.add_nonneg("t", 1);
        let mut e = p.entry(x, 0, 0);
        e.add_term(p.var(x, 1, 1), 1.0);
        e.add_constant(-2.0);
        p.add_equality(e, "trace");
        let mut e2 = p.entry(t, 0, 0);
        e2.add_term(p.var(x, 0, 1), -1.0);
        p.add_equality(e2, "link");
        let mut vals = vec![0.0; p.n_scalars()];
        vals[p.var(x, 0, 0)] = 1.0;
        vals[p.var(x, 1, 1)] = 1.0;
        vals[p.var(x, 0, 1)] = 0.5;
        vals[p.var(t, 0, 0)] = 0.5;
        (p, vals)
    }

    #[test]
    fn feasible_point_passes() {
        let (p, v) = toy();
        let r = verify_solution(&p, &v, VerifyTolerances::default());
        assert!(r.pass, "{r:?}");
        assert!((r.min_eigenvalue("X").unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn perturbed_rhs_fails() {
        let (mut p, v) = toy();
        p.equalities[0].expr.constant += 1e-3;
        let r = verify_solution(&p, &v, VerifyTolerances::default());
        assert!(!r.pass);
        assert_eq!(r.worst_equality.as_deref(), Some("trace"));
    }

    #[test]
    fn indefinite_block_fails() {
        let (p, mut v) = toy();
        v[p.var(p.find_block("X").unwrap(), 0, 1)] = 1.5;
        v[p.var(p.find_block("t").unwrap(), 0, 0)] = 1.5;
        let r = verify_solution(&p, &v, VerifyTolerances::default());
        assert!(!r.pass);
    }

    #[test]
    fn non_finite_values_fail() {
        let (p, mut v) = toy();
        v[0] = f64::NAN;
        assert!(!verify_solution(&p, &v, VerifyTolerances::default()).pass);
    }
}
