//! Offset-sector bounds for activation functions and the associated
//! quadratic constraint.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use crate::error::{dim_err, Error, Result};
use crate::nn::{Activation, NeuralNetwork};

/// Absolute tolerance for `w* = phi(v*)`.
pub const CENTER_TOL: f64 = 1e-12;

/// Scalar sector `[alpha, beta]` around the point `(v*, w*)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sector {
    pub alpha: f64,
    pub beta: f64,
    pub v_star: f64,
    pub w_star: f64,
}

/// Globally valid sector for an activation kind.
pub fn default_sector(act: Activation) -> Result<Sector> {
    match act {
        Activation::Relu | Activation::Tanh => Ok(Sector {
            alpha: 0.0,
            beta: 1.0,
            v_star: 0.0,
            w_star: 0.0,
        }),
        Activation::Sigmoid => Ok(Sector {
            alpha: 0.0,
            beta: 0.25,
            v_star: 0.0,
            w_star: 0.5,
        }),
        Activation::LeakyRelu(s) if (0.0..=1.0).contains(&s) => Ok(Sector {
            alpha: s,
            beta: 1.0,
            v_star: 0.0,
            w_star: 0.0,
        }),
        Activation::LeakyRelu(s) => Err(Error::Unsupported(format!(
            "leaky ReLU slope {s} outside [0, 1] has no default sector"
        ))),
    }
}

/// Per-neuron sector parameters, stacked in network order.
#[derive(Clone, Debug, PartialEq)]
pub struct SectorData {
    pub alpha: DVector<f64>,
    pub beta: DVector<f64>,
    pub v_star: DVector<f64>,
    pub w_star: DVector<f64>,
    /// Optional preactivation bounds for local sectors. Stored but not used
    /// to tighten anything: sectors are always taken as globally valid.
    pub preactivation_bounds: Option<(DVector<f64>, DVector<f64>)>,
}

impl SectorData {
    pub fn from_parts(
        alpha: DVector<f64>,
        beta: DVector<f64>,
        v_star: DVector<f64>,
        w_star: DVector<f64>,
    ) -> Self {
        Self {
            alpha,
            beta,
            v_star,
            w_star,
            preactivation_bounds: None,
        }
    }

    pub fn uniform(n: usize, s: Sector) -> Self {
        Self::from_parts(
            DVector::from_element(n, s.alpha),
            DVector::from_element(n, s.beta),
            DVector::from_element(n, s.v_star),
            DVector::from_element(n, s.w_star),
        )
    }

    pub fn default_for(net: &NeuralNetwork) -> Result<Self> {
        Ok(Self::uniform(net.n_phi(), default_sector(net.activation())?))
    }

    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }

    pub(crate) fn check_ordered(&self) -> Result<()> {
        let n = self.len();
        if self.beta.len() != n || self.v_star.len() != n || self.w_star.len() != n {
            return dim_err("sector vectors have different lengths");
        }
        for i in 0..n {
            let (a, b) = (self.alpha[i], self.beta[i]);
            if !(a.is_finite() && b.is_finite() && a <= b) {
                return Err(Error::InvalidSector {
                    index: i,
                    alpha: a,
                    beta: b,
                });
            }
        }
        Ok(())
    }

    /// Checks ordering and that each center lies on the activation graph.
    pub fn validate(&self, act: Activation) -> Result<()> {
        self.check_ordered()?;
        for i in 0..self.len() {
            let expected = act.apply(self.v_star[i]);
            if (expected - self.w_star[i]).abs() > CENTER_TOL {
                return Err(Error::SectorCenter {
                    index: i,
                    w_star: self.w_star[i],
                    expected,
                });
            }
        }
        Ok(())
    }

    /// Merges a JSON override `{"alpha": [...], "beta": [...], "v_star": [...]}`
    /// over these values. Missing keys keep the current value; `w_star` is
    /// recomputed from `v_star`.
    pub fn apply_overrides_json(&mut self, json: &str, act: Activation) -> Result<()> {
        let o: SectorOverride = serde_json::from_str(json)?;
        let n = self.len();
        let take = |dst: &mut DVector<f64>, src: Option<Vec<f64>>, name: &str| -> Result<()> {
            if let Some(v) = src {
                if v.len() != n {
                    return dim_err(format!("override '{name}' has {} entries, expected {n}", v.len()));
                }
                *dst = DVector::from_vec(v);
            }
            Ok(())
        };
        take(&mut self.alpha, o.alpha, "alpha")?;
        take(&mut self.beta, o.beta, "beta")?;
        if o.v_star.is_some() {
            take(&mut self.v_star, o.v_star, "v_star")?;
            self.w_star = self.v_star.map(|v| act.apply(v));
        }
        self.validate(act)
    }

    pub fn apply_overrides_file(&mut self, path: impl AsRef<Path>, act: Activation) -> Result<()> {
        self.apply_overrides_json(&std::fs::read_to_string(path)?, act)
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SectorOverride {
    alpha: Option<Vec<f64>>,
    beta: Option<Vec<f64>>,
    v_star: Option<Vec<f64>>,
}

/// Quadratic-constraint matrix `M(lambda)` of size `2 n_phi` acting on
/// `[v - v*; w - w*]`; the form is nonnegative whenever `w = phi(v)`.
pub fn sector_quadratic_matrix(sectors: &SectorData, lambda: &DVector<f64>) -> Result<DMatrix<f64>> {
    let n = sectors.len();
    if lambda.len() != n {
        return dim_err(format!("multiplier has {} entries, expected {n}", lambda.len()));
    }
    if let Some(i) = lambda.iter().position(|&l| !(l >= 0.0)) {
        return Err(Error::NegativeMultiplier(i));
    }
    let mut m = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        let (a, b, l) = (sectors.alpha[i], sectors.beta[i], lambda[i]);
        m[(i, i)] = -2.0 * a * b * l;
        m[(i, n + i)] = (a + b) * l;
        m[(n + i, i)] = (a + b) * l;
        m[(n + i, n + i)] = -2.0 * l;
    }
    Ok(m)
}

/// Scalar sector form `(w - alpha v)(beta v - w)` scaled by 2, in deviation
/// coordinates; equals the quadratic form of `sector_quadratic_matrix` for
/// one neuron with unit multiplier.
pub fn sector_form(alpha: f64, beta: f64, dv: f64, dw: f64) -> f64 {
    // factored: vanishes exactly on both sector edges
    2.0 * (dw - alpha * dv) * (beta * dv - dw)
}
