//! Bundled example systems, data recipes and a deterministic controller
//! fit used by the command line and the end-to-end tests.

use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{collect, OraclePlant, TrajectoryData};
use crate::error::{dim_err, Error, Result};
use crate::nn::{Activation, Layer, NeuralNetwork};
use crate::polytope::{Polytope, ProblemSets};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Integrator {
    #[default]
    Euler,
    Rk4,
}

impl FromStr for Integrator {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euler" => Ok(Integrator::Euler),
            "rk4" => Ok(Integrator::Rk4),
            _ => Err(Error::Invalid(format!("unknown integrator {s:?} (euler, rk4)"))),
        }
    }
}

/// Damped pendulum `theta'' = 3g/(2l) sin(theta) - k theta' + 3/(m l^2) u`.
#[derive(Clone, Debug, PartialEq)]
pub struct PendulumExample {
    pub damping: f64,
    pub gravity: f64,
    pub length: f64,
    pub mass: f64,
    pub dt: f64,
    pub equilibrium: [f64; 2],
}

impl Default for PendulumExample {
    fn default() -> Self {
        Self {
            damping: 0.8,
            gravity: 10.0,
            length: 1.0,
            mass: 1.0,
            dt: 0.02,
            // the published operating point is 3.14, not pi
            #[allow(clippy::approx_constant)]
            equilibrium: [3.14, 0.0],
        }
    }
}

impl PendulumExample {
    fn input_gain(&self) -> f64 {
        3.0 / (self.mass * self.length * self.length)
    }

    fn stiffness(&self) -> f64 {
        1.5 * self.gravity / self.length
    }

    pub fn vector_field(&self, x: [f64; 2], u: f64) -> [f64; 2] {
        [
            x[1],
            self.stiffness() * x[0].sin() - self.damping * x[1] + self.input_gain() * u,
        ]
    }

    /// Torque holding the pendulum at rest at `equilibrium`. Zero only when
    /// the equilibrium angle is an exact multiple of pi.
    pub fn trim_input(&self) -> f64 {
        -self.stiffness() * self.equilibrium[0].sin() / self.input_gain()
    }

    pub fn step(&self, x: [f64; 2], u: f64, integrator: Integrator) -> [f64; 2] {
        let h = self.dt;
        let add = |a: [f64; 2], b: [f64; 2], s: f64| [a[0] + s * b[0], a[1] + s * b[1]];
        match integrator {
            Integrator::Euler => add(x, self.vector_field(x, u), h),
            Integrator::Rk4 => {
                let k1 = self.vector_field(x, u);
                let k2 = self.vector_field(add(x, k1, h / 2.0), u);
                let k3 = self.vector_field(add(x, k2, h / 2.0), u);
                let k4 = self.vector_field(add(x, k3, h), u);
                [
                    x[0] + h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
                    x[1] + h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
                ]
            }
        }
    }

    /// Forward-Euler discretization of the Jacobian at the equilibrium, in
    /// deviation coordinates.
    pub fn linearization(&self) -> OraclePlant {
        let h = self.dt;
        let a = DMatrix::from_row_slice(
            2,
            2,
            &[1.0, h, h * self.stiffness() * self.equilibrium[0].cos(), 1.0 - h * self.damping],
        );
        let b = DMatrix::from_row_slice(2, 1, &[0.0, h * self.input_gain()]);
        OraclePlant::new(a, b).expect("2x2 and 2x1")
    }
}

/// One rollout of `k` steps near the equilibrium: deviation torques in
/// [-0.01, 0.01] on top of the trim torque, angle within 0.01 and rate
/// within 0.01 of rest. Emitted in deviation coordinates.
pub fn pendulum_data(
    ex: &PendulumExample,
    k: usize,
    seed: u64,
    integrator: Integrator,
) -> Result<TrajectoryData> {
    if k == 0 {
        return Err(Error::Invalid("sample count must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let [t0, w0] = ex.equilibrium;
    let mut x = [
        t0 + rng.random_range(-0.01..=0.01),
        w0 + rng.random_range(-0.01..=0.01),
    ];
    let trim = ex.trim_input();
    let mut states = DMatrix::zeros(2, k + 1);
    let mut inputs = DMatrix::zeros(1, k);
    states[(0, 0)] = x[0] - t0;
    states[(1, 0)] = x[1] - w0;
    for j in 0..k {
        let du: f64 = rng.random_range(-0.01..=0.01);
        x = ex.step(x, trim + du, integrator);
        inputs[(0, j)] = du;
        states[(0, j + 1)] = x[0] - t0;
        states[(1, j + 1)] = x[1] - w0;
    }
    let mut d = TrajectoryData::from_rollout(&inputs, &states)?;
    d.provenance.insert("seed".into(), seed.to_string());
    d.provenance.insert("origin".into(), "pendulum rollout".into());
    d.provenance.insert(
        "integrator".into(),
        match integrator {
            Integrator::Euler => "euler",
            Integrator::Rk4 => "rk4",
        }
        .into(),
    );
    Ok(d)
}

/// Discrete LQR gain `K` (for `u = -K x`) by Riccati iteration.
pub fn dlqr(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if a.ncols() != n || b.nrows() != n || q.shape() != (n, n) || r.shape() != (b.ncols(), b.ncols()) {
        return dim_err("dlqr: inconsistent matrix shapes");
    }
    let mut p = q.clone();
    for _ in 0..100_000 {
        let btp = b.transpose() * &p;
        let s = r + &btp * b;
        let gain = s
            .lu()
            .solve(&(&btp * a))
            .ok_or_else(|| Error::Invalid("dlqr: singular input weighting".into()))?;
        let next = q + a.transpose() * &p * a - a.transpose() * &p * b * &gain;
        let next = (&next + next.transpose()) * 0.5;
        let diff = (&next - &p).amax();
        p = next;
        if !p.amax().is_finite() {
            break;
        }
        if diff <= 1e-12 * p.amax().max(1.0) {
            let btp = b.transpose() * &p;
            return (r + &btp * b)
                .lu()
                .solve(&(btp * a))
                .ok_or_else(|| Error::Invalid("dlqr: singular input weighting".into()));
        }
    }
    Err(Error::Invalid("dlqr: Riccati iteration did not converge (plant not stabilizable?)".into()))
}

/// Stabilizing gain used as the fit target: LQR with `Q = I`, `R = 10 I`.
pub fn example_gain(plant: &OraclePlant) -> Result<DMatrix<f64>> {
    let n = plant.n_x();
    let m = plant.n_u();
    dlqr(&plant.a, &plant.b, &DMatrix::identity(n, n), &(DMatrix::identity(m, m) * 10.0))
}

/// Largest tolerated grid error of [`fit_example_controller`].
pub const FIT_TOLERANCE: f64 = 1e-3;

/// Fits a bias-free one-hidden-layer tanh network to `u = -K x` on a grid
/// over `[-1, 1]^n`. Hidden neurons look along the gain rows with a small
/// seeded perturbation, scaled so tanh stays close to linear; the output
/// weights come from least squares. `hidden = 0` returns the gain itself as
/// a single linear layer.
pub fn fit_example_controller(plant: &OraclePlant, hidden: usize, seed: u64) -> Result<NeuralNetwork> {
    let gain = -example_gain(plant)?;
    let (n_u, n_x) = gain.shape();
    if hidden == 0 {
        return NeuralNetwork::new(vec![Layer::new(gain, DVector::zeros(n_u))], Activation::Tanh);
    }
    if hidden < n_u {
        return Err(Error::Invalid(format!(
            "hidden size {hidden} is below the input count {n_u}; use a larger hidden size"
        )));
    }
    let grid = state_grid(n_x);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w1 = DMatrix::zeros(hidden, n_x);
    for i in 0..hidden {
        let row = gain.row(i % n_u);
        let scale = row.norm().max(1e-12);
        for j in 0..n_x {
            let jitter: f64 = if i < n_u { 0.0 } else { rng.random_range(-1e-3..=1e-3) };
            w1[(i, j)] = row[j] + jitter * scale;
        }
    }
    // keep every preactivation within +-0.03 on the grid
    let vmax = grid.iter().map(|x| (&w1 * x).amax()).fold(0.0, f64::max).max(1e-300);
    w1 *= 0.03 / vmax;

    // one shared output weight per input channel, fitted by least squares;
    // equal positive weights keep the network close to a scaled copy of the
    // gain for every neuron, which is what makes it certifiable
    let mut w2 = DMatrix::zeros(n_u, hidden);
    for o in 0..n_u {
        let (mut num, mut den) = (0.0, 0.0);
        for x in &grid {
            let f: f64 = (o..hidden).step_by(n_u).map(|i| (w1.row(i) * x)[0].tanh()).sum();
            num += f * (gain.row(o) * x)[0];
            den += f * f;
        }
        let a = if den > 0.0 { num / den } else { 0.0 };
        for i in (o..hidden).step_by(n_u) {
            w2[(o, i)] = a;
        }
    }
    let net = NeuralNetwork::new(
        vec![
            Layer::new(w1, DVector::zeros(hidden)),
            Layer::new(w2, DVector::zeros(n_u)),
        ],
        Activation::Tanh,
    )?;
    let err = max_grid_error(&net, &gain)?;
    if err > FIT_TOLERANCE {
        return Err(Error::FitResidual {
            residual: err,
            tol: FIT_TOLERANCE,
        });
    }
    Ok(net)
}

fn state_grid(n: usize) -> Vec<DVector<f64>> {
    let per: usize = match n {
        0..=2 => 41,
        3 => 15,
        _ => 7,
    };
    let total = per.pow(n as u32);
    (0..total)
        .map(|mut idx| {
            DVector::from_fn(n, |_, _| {
                let k = idx % per;
                idx /= per;
                -1.0 + 2.0 * k as f64 / (per - 1) as f64
            })
        })
        .collect()
}

/// Max deviation between `net` and the linear law `u = gain x` on the fit grid.
pub fn max_grid_error(net: &NeuralNetwork, gain: &DMatrix<f64>) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for x in state_grid(gain.ncols()) {
        let u = net.control(&x)?;
        worst = worst.max((u - gain * &x).amax());
    }
    Ok(worst)
}

/// Closed-loop rollout `x_{t+1} = A x_t + B pi(x_t)`; returns `steps + 1` states.
pub fn simulate(plant: &OraclePlant, net: &NeuralNetwork, x0: &DVector<f64>, steps: usize) -> Result<Vec<DVector<f64>>> {
    let mut out = Vec::with_capacity(steps + 1);
    let mut x = x0.clone();
    out.push(x.clone());
    for _ in 0..steps {
        x = plant.step(&x, &net.control(&x)?);
        out.push(x.clone());
    }
    Ok(out)
}

/// A plant, a controller and optionally the sets of a safety problem.
#[derive(Clone, Debug)]
pub struct ExampleSystem {
    pub name: &'static str,
    pub description: &'static str,
    pub plant: OraclePlant,
    pub controller: NeuralNetwork,
    pub sets: ProblemSets,
    /// Box for random open-loop inputs when collecting data.
    pub input_box: Vec<(f64, f64)>,
    /// Box for the initial state of a collected rollout.
    pub init_box: Vec<(f64, f64)>,
}

pub const EXAMPLE_NAMES: [&str; 4] = ["contraction", "two-state", "vehicle", "pendulum"];

pub fn example(name: &str) -> Result<ExampleSystem> {
    match name {
        "contraction" => contraction_toy(),
        "two-state" => two_state_example(),
        "vehicle" => vehicle_example(),
        "pendulum" => pendulum_example(),
        _ => Err(Error::Invalid(format!(
            "unknown example {name:?} (one of {})",
            EXAMPLE_NAMES.join(", ")
        ))),
    }
}

impl ExampleSystem {
    /// Noiseless data for this example. The pendulum integrates its
    /// nonlinear model; the others roll out their linear plant.
    pub fn data(&self, k: usize, seed: u64, integrator: Integrator) -> Result<TrajectoryData> {
        if self.name == "pendulum" {
            return pendulum_data(&PendulumExample::default(), k, seed, integrator);
        }
        collect(&self.plant, k, &self.input_box, &self.init_box, seed)
    }
}

/// Strictly contracting 2-state plant with a fitted tanh controller.
pub fn contraction_toy() -> Result<ExampleSystem> {
    let plant = OraclePlant::new(
        DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.0, 0.4]),
        DMatrix::from_row_slice(2, 1, &[0.0, 0.5]),
    )?;
    let controller = fit_example_controller(&plant, 4, 1)?;
    Ok(ExampleSystem {
        name: "contraction",
        description: "contracting 2-state plant, 4-neuron tanh controller",
        plant,
        controller,
        sets: ProblemSets {
            input_set: Some(Polytope::boxed(DVector::zeros(2), &[0.5, 0.5])?),
            safe_set: Some(Polytope::boxed(DVector::zeros(2), &[1.0, 1.0])?),
            invariant_set: Some(Polytope::boxed(DVector::zeros(2), &[1.0, 1.0])?),
            horizon: Some(3),
            multiplier_degree: None,
        },
        input_box: vec![(-1.0, 1.0)],
        init_box: vec![(-1.0, 1.0); 2],
    })
}

/// Lightly damped 2-state plant under a 3-neuron ReLU controller, with a
/// small initial box and a larger safe box.
pub fn two_state_example() -> Result<ExampleSystem> {
    let plant = OraclePlant::new(
        DMatrix::from_row_slice(2, 2, &[0.9, 0.3, -0.2, 0.8]),
        DMatrix::from_row_slice(2, 1, &[0.0, 0.4]),
    )?;
    let controller = NeuralNetwork::new(
        vec![
            Layer::new(
                DMatrix::from_row_slice(3, 2, &[1.0, -0.5, 0.3, 0.8, -0.7, 0.2]),
                DVector::zeros(3),
            ),
            Layer::new(DMatrix::from_row_slice(1, 3, &[-0.4, 0.6, -0.3]), DVector::zeros(1)),
        ],
        Activation::Relu,
    )?;
    Ok(ExampleSystem {
        name: "two-state",
        description: "damped 2-state plant, 3-neuron ReLU controller",
        plant,
        controller,
        sets: ProblemSets {
            input_set: Some(Polytope::boxed(DVector::zeros(2), &[0.2, 0.2])?),
            safe_set: Some(Polytope::boxed(DVector::zeros(2), &[1.0, 1.0])?),
            invariant_set: Some(Polytope::boxed(DVector::zeros(2), &[1.0, 1.0])?),
            horizon: Some(3),
            multiplier_degree: None,
        },
        input_box: vec![(-1.0, 1.0)],
        init_box: vec![(-1.0, 1.0); 2],
    })
}

/// Lane-keeping lateral error model with state `[e, e', e_psi, e_psi']`
/// and front steering input, Euler-discretized at 10 ms. Constants are a
/// textbook mid-size sedan at 30 m/s. The controller is the LQR gain as a
/// single linear layer.
pub fn vehicle_plant() -> OraclePlant {
    let (m, iz, lf, lr, cf, cr, vx, dt) = (1573.0, 2873.0, 1.1, 1.58, 80_000.0, 80_000.0, 30.0, 0.01);
    let ac = [
        [0.0, 1.0, 0.0, 0.0],
        [
            0.0,
            -(2.0 * cf + 2.0 * cr) / (m * vx),
            (2.0 * cf + 2.0 * cr) / m,
            (-2.0 * cf * lf + 2.0 * cr * lr) / (m * vx),
        ],
        [0.0, 0.0, 0.0, 1.0],
        [
            0.0,
            -(2.0 * cf * lf - 2.0 * cr * lr) / (iz * vx),
            (2.0 * cf * lf - 2.0 * cr * lr) / iz,
            -(2.0 * cf * lf * lf + 2.0 * cr * lr * lr) / (iz * vx),
        ],
    ];
    let bc = [0.0, 2.0 * cf / m, 0.0, 2.0 * cf * lf / iz];
    let a = DMatrix::from_fn(4, 4, |i, j| f64::from(u8::from(i == j)) + dt * ac[i][j]);
    let b = DMatrix::from_fn(4, 1, |i, _| dt * bc[i]);
    OraclePlant::new(a, b).expect("4x4 and 4x1")
}

pub fn vehicle_example() -> Result<ExampleSystem> {
    let plant = vehicle_plant();
    let controller = fit_example_controller(&plant, 0, 0)?;
    Ok(ExampleSystem {
        name: "vehicle",
        description: "4-state lateral error model (bundled constants), linear LQR controller",
        plant,
        controller,
        sets: ProblemSets::default(),
        input_box: vec![(-0.1, 0.1)],
        init_box: vec![(-0.5, 0.5); 4],
    })
}

/// Pendulum near its resting point with a 16-neuron tanh controller fitted
/// to the linearization.
pub fn pendulum_example() -> Result<ExampleSystem> {
    let ex = PendulumExample::default();
    let plant = ex.linearization();
    let controller = fit_example_controller(&plant, 16, 7)?;
    Ok(ExampleSystem {
        name: "pendulum",
        description: "pendulum in deviation coordinates, 16-neuron tanh controller",
        plant,
        controller,
        sets: ProblemSets::default(),
        input_box: vec![(-0.01, 0.01)],
        init_box: vec![(-0.01, 0.01); 2],
    })
}
