//! Feed-forward controller model, its stacked isolation form and the
//! loop-transformed form used by the stability LMI.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::linalg::{matrix_to_rows, rows_to_matrix};
use crate::sectors::SectorData;

/// Elementwise activation shared by every hidden layer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
    LeakyRelu(f64),
}

impl Activation {
    pub fn apply(&self, v: f64) -> f64 {
        match *self {
            Activation::Relu => v.max(0.0),
            Activation::Tanh => v.tanh(),
            Activation::Sigmoid => 1.0 / (1.0 + (-v).exp()),
            Activation::LeakyRelu(slope) => {
                if v >= 0.0 {
                    v
                } else {
                    slope * v
                }
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
            Activation::LeakyRelu(_) => "leaky_relu",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub weight: DMatrix<f64>,
    pub bias: DVector<f64>,
}

impl Layer {
    pub fn new(weight: DMatrix<f64>, bias: DVector<f64>) -> Self {
        Self { weight, bias }
    }
}

/// Controller `u = W^{l+1} phi(... phi(W^1 x + b^1) ...) + b^{l+1}`.
///
/// The last layer is affine; every earlier layer is followed by the
/// activation. A single layer (`l = 0`) is a plain linear/affine gain.
#[derive(Clone, Debug, PartialEq)]
pub struct NeuralNetwork {
    layers: Vec<Layer>,
    activation: Activation,
}

/// Full evaluation trace of the controller.
#[derive(Clone, Debug)]
pub struct Forward {
    pub u: DVector<f64>,
    /// Stacked preactivations of all hidden neurons.
    pub v_phi: DVector<f64>,
    /// Stacked postactivations of all hidden neurons.
    pub w_phi: DVector<f64>,
}

impl NeuralNetwork {
    pub fn new(layers: Vec<Layer>, activation: Activation) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Invalid("network needs at least one layer".into()));
        }
        for (i, layer) in layers.iter().enumerate() {
            if layer.bias.len() != layer.weight.nrows() {
                return dim_err(format!(
                    "layer {}: bias has {} entries, weight has {} rows",
                    i + 1,
                    layer.bias.len(),
                    layer.weight.nrows()
                ));
            }
            if i > 0 && layer.weight.ncols() != layers[i - 1].weight.nrows() {
                return dim_err(format!(
                    "layer {}: expects {} inputs, previous layer has {} outputs",
                    i + 1,
                    layer.weight.ncols(),
                    layers[i - 1].weight.nrows()
                ));
            }
        }
        if let Activation::LeakyRelu(s) = activation {
            if !s.is_finite() {
                return Err(Error::Invalid("leaky slope must be finite".into()));
            }
        }
        Ok(Self { layers, activation })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").weight.nrows()
    }

    /// Number of hidden (activated) layers `l`.
    pub fn hidden_layers(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn hidden_sizes(&self) -> Vec<usize> {
        self.layers[..self.hidden_layers()]
            .iter()
            .map(|l| l.weight.nrows())
            .collect()
    }

    /// Total neuron count `n_phi`.
    pub fn n_phi(&self) -> usize {
        self.hidden_sizes().iter().sum()
    }

    /// Width of the signal feeding the output layer (`n_l`, or `n_x` when `l = 0`).
    pub fn last_hidden_dim(&self) -> usize {
        self.layers.last().expect("non-empty").weight.ncols()
    }

    pub fn output_layer(&self) -> &Layer {
        self.layers.last().expect("non-empty")
    }

    pub fn forward(&self, x: &DVector<f64>) -> Result<Forward> {
        if x.len() != self.input_dim() {
            return dim_err(format!(
                "state has {} entries, controller expects {}",
                x.len(),
                self.input_dim()
            ));
        }
        let n_phi = self.n_phi();
        let mut v_phi = DVector::zeros(n_phi);
        let mut w_phi = DVector::zeros(n_phi);
        let mut signal = x.clone();
        let mut offset = 0;
        for layer in &self.layers[..self.hidden_layers()] {
            let v = &layer.weight * &signal + &layer.bias;
            let w = v.map(|t| self.activation.apply(t));
            v_phi.rows_mut(offset, v.len()).copy_from(&v);
            w_phi.rows_mut(offset, w.len()).copy_from(&w);
            offset += v.len();
            signal = w;
        }
        let out = self.output_layer();
        let u = &out.weight * &signal + &out.bias;
        Ok(Forward { u, v_phi, w_phi })
    }

    /// Convenience wrapper returning only the control.
    pub fn control(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.forward(x)?.u)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let file: NetworkFile = serde_json::from_str(s)?;
        file.into_network()
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&NetworkFile::from_network(self))?)
    }
}

/// On-disk network description.
#[derive(Serialize, Deserialize)]
struct NetworkFile {
    layers: Vec<LayerFile>,
    activation: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    leaky_slope: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct LayerFile {
    #[serde(rename = "W")]
    w: Vec<Vec<f64>>,
    b: Vec<f64>,
}

impl NetworkFile {
    fn into_network(self) -> Result<NeuralNetwork> {
        let activation = match self.activation.to_ascii_lowercase().as_str() {
            "relu" => Activation::Relu,
            "tanh" => Activation::Tanh,
            "sigmoid" => Activation::Sigmoid,
            "leaky_relu" | "leakyrelu" => Activation::LeakyRelu(self.leaky_slope.unwrap_or(0.01)),
            other => return Err(Error::Unsupported(format!("activation '{other}'"))),
        };
        let mut layers = Vec::with_capacity(self.layers.len());
        for (i, l) in self.layers.into_iter().enumerate() {
            let w = rows_to_matrix(&l.w, 0)
                .ok_or_else(|| Error::Parse(format!("layer {}: ragged weight matrix", i + 1)))?;
            layers.push(Layer::new(w, DVector::from_vec(l.b)));
        }
        NeuralNetwork::new(layers, activation)
    }

    fn from_network(net: &NeuralNetwork) -> Self {
        let leaky_slope = match net.activation {
            Activation::LeakyRelu(s) => Some(s),
            _ => None,
        };
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| LayerFile {
                    w: matrix_to_rows(&l.weight),
                    b: l.bias.iter().copied().collect(),
                })
                .collect(),
            activation: net.activation.name().to_string(),
            leaky_slope,
        }
    }
}

/// `[u; v_phi] = N [x; w_phi] + [b_u; b_v]`.
#[derive(Clone, Debug)]
pub struct StackedForm {
    pub n_ux: DMatrix<f64>,
    pub n_uw: DMatrix<f64>,
    pub n_vx: DMatrix<f64>,
    pub n_vw: DMatrix<f64>,
    pub b_u: DVector<f64>,
    pub b_v: DVector<f64>,
    /// Hidden layer widths, in order.
    pub layer_sizes: Vec<usize>,
}

impl StackedForm {
    pub fn n_x(&self) -> usize {
        self.n_ux.ncols()
    }
    pub fn n_u(&self) -> usize {
        self.n_ux.nrows()
    }
    pub fn n_phi(&self) -> usize {
        self.n_vw.nrows()
    }

    /// Evaluates the linear part for a given neuron-output vector.
    pub fn eval(&self, x: &DVector<f64>, w_phi: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let u = &self.n_ux * x + &self.n_uw * w_phi + &self.b_u;
        let v = &self.n_vx * x + &self.n_vw * w_phi + &self.b_v;
        (u, v)
    }
}

pub fn build_stacked(net: &NeuralNetwork) -> StackedForm {
    let n_x = net.input_dim();
    let n_u = net.output_dim();
    let n_phi = net.n_phi();
    let l = net.hidden_layers();
    let sizes = net.hidden_sizes();
    let out = net.output_layer();

    let mut n_ux = DMatrix::zeros(n_u, n_x);
    let mut n_uw = DMatrix::zeros(n_u, n_phi);
    let mut n_vx = DMatrix::zeros(n_phi, n_x);
    let mut n_vw = DMatrix::zeros(n_phi, n_phi);
    let mut b_v = DVector::zeros(n_phi);

    if l == 0 {
        n_ux.copy_from(&out.weight);
    } else {
        let last_off = n_phi - sizes[l - 1];
        n_uw.view_mut((0, last_off), (n_u, sizes[l - 1]))
            .copy_from(&out.weight);
        let mut row = 0;
        let mut prev_col = 0;
        for (i, layer) in net.layers()[..l].iter().enumerate() {
            let n_i = sizes[i];
            if i == 0 {
                n_vx.view_mut((0, 0), (n_i, n_x)).copy_from(&layer.weight);
            } else {
                let n_prev = sizes[i - 1];
                n_vw.view_mut((row, prev_col), (n_i, n_prev))
                    .copy_from(&layer.weight);
                prev_col += n_prev;
            }
            b_v.rows_mut(row, n_i).copy_from(&layer.bias);
            row += n_i;
        }
    }

    StackedForm {
        n_ux,
        n_uw,
        n_vx,
        n_vw,
        b_u: out.bias.clone(),
        b_v,
        layer_sizes: sizes,
    }
}

/// Loop-transformed representation `[u; v~] = N~ [x; z] + offsets` where
/// `z = phi~(v~)` lies in the symmetric sector `|z_i| <= |v~_i|` and
/// `v~ = v_phi - v*`.
///
/// Neurons whose sector has zero width are affine; they are folded into the
/// linear part and excluded from `active`, so the `N~` blocks only carry
/// the remaining neurons.
#[derive(Clone, Debug)]
pub struct TransformedForm {
    pub nt_ux: DMatrix<f64>,
    pub nt_uz: DMatrix<f64>,
    pub nt_vx: DMatrix<f64>,
    pub nt_vz: DMatrix<f64>,
    pub c1: DMatrix<f64>,
    pub c2: DMatrix<f64>,
    pub c3: DMatrix<f64>,
    pub c4: DMatrix<f64>,
    /// `(I - C4)^{-1}` over all neurons.
    pub inv_i_minus_c4: DMatrix<f64>,
    /// Indices (into the stacked neurons) kept as nonlinear channels.
    pub active: Vec<usize>,
    /// Control offset at `x = 0, z = 0`.
    pub bias_u: DVector<f64>,
    /// `v~` offset at `x = 0, z = 0`, active neurons only.
    pub bias_v: DVector<f64>,
    mid: DVector<f64>,
    half: DVector<f64>,
    v_star: DVector<f64>,
    w_star: DVector<f64>,
}

impl TransformedForm {
    pub fn n_active(&self) -> usize {
        self.active.len()
    }

    /// Largest absolute affine offset left in the transformed loop; zero when
    /// `x = 0` is an equilibrium of the controller with `v = v*`, `w = w*`.
    pub fn equilibrium_bias(&self) -> f64 {
        self.bias_u
            .iter()
            .chain(self.bias_v.iter())
            .fold(0.0, |a, &b| a.max(b.abs()))
    }

    /// Normalized channel values for the active neurons, given the raw
    /// pre/postactivations of every neuron.
    pub fn normalize(&self, v_phi: &DVector<f64>, w_phi: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.active.len(),
            self.active.iter().map(|&i| {
                let dv = v_phi[i] - self.v_star[i];
                let dw = w_phi[i] - self.w_star[i];
                (dw - self.mid[i] * dv) / self.half[i]
            }),
        )
    }

    /// `v~` restricted to active neurons.
    pub fn shifted_preactivation(&self, v_phi: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.active.len(),
            self.active.iter().map(|&i| v_phi[i] - self.v_star[i]),
        )
    }

    /// Evaluates `[u; v~] = N~ [x; z] + offsets`.
    pub fn eval(&self, x: &DVector<f64>, z: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let u = &self.nt_ux * x + &self.nt_uz * z + &self.bias_u;
        let v = &self.nt_vx * x + &self.nt_vz * z + &self.bias_v;
        (u, v)
    }
}

/// Finite Neumann series for a nilpotent matrix: `sum_{k < order} M^k`.
pub fn nilpotent_inverse(m: &DMatrix<f64>, order: usize) -> DMatrix<f64> {
    let n = m.nrows();
    let mut acc = DMatrix::identity(n, n);
    let mut power = DMatrix::identity(n, n);
    for _ in 1..order.max(1) {
        power = &power * m;
        acc += &power;
    }
    acc
}

pub fn loop_transform(stacked: &StackedForm, sectors: &SectorData) -> Result<TransformedForm> {
    let n_phi = stacked.n_phi();
    if sectors.len() != n_phi {
        return dim_err(format!(
            "sector data covers {} neurons, network has {}",
            sectors.len(),
            n_phi
        ));
    }
    sectors.check_ordered()?;

    let mid = (&sectors.alpha + &sectors.beta) * 0.5;
    let half = (&sectors.beta - &sectors.alpha) * 0.5;
    let c1 = &stacked.n_uw * DMatrix::from_diagonal(&half);
    let c2 = &stacked.n_uw * DMatrix::from_diagonal(&mid);
    let c3 = &stacked.n_vw * DMatrix::from_diagonal(&half);
    let c4 = &stacked.n_vw * DMatrix::from_diagonal(&mid);

    // N_vw is strictly block lower triangular, so C4^l = 0.
    let order = stacked.layer_sizes.len().max(1);
    let inv = nilpotent_inverse(&c4, order);

    let full_ux = &stacked.n_ux + &c2 * &inv * &stacked.n_vx;
    let full_uz = &c1 + &c2 * &inv * &c3;
    let full_vx = &inv * &stacked.n_vx;
    let full_vz = &inv * &c3;

    let c_v = &stacked.n_vw * &sectors.w_star + &stacked.b_v - &sectors.v_star;
    let v0 = &inv * c_v;
    let u0 = &stacked.n_uw * &sectors.w_star + &stacked.b_u + &c2 * &v0;

    let active: Vec<usize> = (0..n_phi).filter(|&i| half[i] > 0.0).collect();
    let na = active.len();
    let n_x = stacked.n_x();
    let n_u = stacked.n_u();

    let nt_uz = DMatrix::from_fn(n_u, na, |r, c| full_uz[(r, active[c])]);
    let nt_vx = DMatrix::from_fn(na, n_x, |r, c| full_vx[(active[r], c)]);
    let nt_vz = DMatrix::from_fn(na, na, |r, c| full_vz[(active[r], active[c])]);
    let bias_v = DVector::from_iterator(na, active.iter().map(|&i| v0[i]));

    Ok(TransformedForm {
        nt_ux: full_ux,
        nt_uz,
        nt_vx,
        nt_vz,
        c1,
        c2,
        c3,
        c4,
        inv_i_minus_c4: inv,
        active,
        bias_u: u0,
        bias_v,
        mid,
        half,
        v_star: sectors.v_star.clone(),
        w_star: sectors.w_star.clone(),
    })
}
