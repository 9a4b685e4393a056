//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each
//! and exits non-zero if any failed.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use nncert::data::{collect_independent, OraclePlant, TrajectoryData};
use nncert::fixtures::{example, simulate, Integrator};
use nncert::nn::{Activation, Layer, NeuralNetwork};
use nncert::polytope::Polytope;
use nncert::poly::Polynomial;
use nncert::reach::{verify_invariance, verify_safety, Dynamics, ReachOptions, ReachResult, ReachStep, SafetyVerdict};
use nncert::sdp::{solve, verify_solution, Settings, VerifyTolerances};
use nncert::sectors::{default_sector, sector_form, SectorData};
use nncert::sos::{compile_sos, verify_sos_certificate, ParamPoly};
use nncert::stability::{stability_program, verify_stability, verify_stability_model, StabilityCertificate, StabilityOptions};
use nncert::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

/// Accepted results collected along the way for the post-verification check.
#[derive(Default)]
struct Accepted {
    stability: Vec<StabilityCertificate>,
    reach: Vec<ReachStep>,
    /// Certified stability instances for the simulation check.
    stable_loops: Vec<(OraclePlant, NeuralNetwork, DMatrix<f64>)>,
    /// Certified safety results with the loop they belong to.
    safe_loops: Vec<(OraclePlant, NeuralNetwork, Polytope, Polytope, ReachResult)>,
}

fn rand_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize, s: f64) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.random_range(-s..s))
}

fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    a.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Plant with a prescribed spectral radius and a bias-free controller.
fn random_loop(rng: &mut ChaCha8Rng, n_x: usize, n_u: usize, hidden: &[usize], act: Activation, radius: f64) -> (OraclePlant, NeuralNetwork) {
    let a0 = rand_matrix(rng, n_x, n_x, 1.0);
    let a = &a0 * (radius / spectral_radius(&a0).max(1e-9));
    let b = rand_matrix(rng, n_x, n_u, 1.0);
    let mut dims = vec![n_x];
    dims.extend_from_slice(hidden);
    dims.push(n_u);
    let layers = dims
        .windows(2)
        .map(|w| Layer::new(rand_matrix(rng, w[1], w[0], 0.5 / (w[0] as f64).sqrt()), DVector::zeros(w[1])))
        .collect();
    (OraclePlant::new(a, b).unwrap(), NeuralNetwork::new(layers, act).unwrap())
}

fn exciting_data(plant: &OraclePlant, extra: usize, seed: u64) -> TrajectoryData {
    collect_independent(
        plant,
        plant.n_x() + plant.n_u() + extra,
        &vec![(-1.0, 1.0); plant.n_u()],
        &vec![(-1.0, 1.0); plant.n_x()],
        seed,
    )
    .unwrap()
}

fn criterion_1(acc: &mut Accepted) -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let acts = [Activation::Tanh, Activation::Relu, Activation::LeakyRelu(0.2)];
    let (mut agree, mut certified, mut total) = (0, 0, 0);
    let mut mismatches = Vec::new();
    for inst in 0..24 {
        let n_x = 1 + inst % 4;
        let n_u = 1 + (inst / 4) % 2;
        let layers = 1 + inst % 2;
        let hidden: Vec<usize> = (0..layers).map(|_| rng.random_range(2..=16)).collect();
        let radius = rng.random_range(0.3..1.3);
        let (plant, net) = random_loop(&mut rng, n_x, n_u, &hidden, acts[inst % 3], radius);
        let data = exciting_data(&plant, inst % 5, 100 + inst as u64);
        let sectors = SectorData::default_for(&net).unwrap();
        let opts = StabilityOptions::default();
        let d = verify_stability(&net, &sectors, &data, &opts).unwrap();
        let m = verify_stability_model(&net, &sectors, &plant, &opts).unwrap();
        total += 1;
        if d.verdict == m.verdict {
            agree += 1;
        } else {
            mismatches.push(format!("#{inst} (data {:?}/{:?}, model {:?}/{:?})", d.verdict, d.solver_status, m.verdict, m.solver_status));
        }
        if d.verdict.is_certified() {
            certified += 1;
            let q1 = d.q1.clone();
            acc.stable_loops.push((plant.clone(), net.clone(), q1));
            acc.stability.push(d);
        }
        if m.verdict.is_certified() {
            acc.stability.push(m);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = agree == total && total >= 20 && secs <= 60.0;
    outcome(
        pass,
        format!(
            "{agree}/{total} verdicts agree ({certified} certified, {} not), {secs:.1} s{}",
            total - certified,
            if mismatches.is_empty() { String::new() } else { format!("; mismatches: {}", mismatches.join(", ")) }
        ),
    )
}

fn criterion_2(acc: &mut Accepted) -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let acts = [Activation::Relu, Activation::Tanh];
    let mut worst: f64 = 0.0;
    let mut compared = 0;
    let mut problems = Vec::new();
    let opts = ReachOptions::default();
    for inst in 0..10 {
        let n_x = 2 + inst % 2;
        let hidden = [rng.random_range(2..=4)];
        let radius = rng.random_range(0.4..0.9);
        let (plant, net) = random_loop(&mut rng, n_x, 1, &hidden, acts[inst % 2], radius);
        let data = exciting_data(&plant, 2, 500 + inst as u64);
        let sectors = SectorData::default_for(&net).unwrap();
        let input = Polytope::boxed(DVector::zeros(n_x), &vec![0.3; n_x]).unwrap();
        let safe = Polytope::boxed(DVector::zeros(n_x), &vec![2.0; n_x]).unwrap();
        let d = verify_safety(&net, &sectors, Dynamics::Data(&data), &input, &safe, 2, &opts).unwrap();
        let m = verify_safety(&net, &sectors, Dynamics::Model(&plant), &input, &safe, 2, &opts).unwrap();
        if d.steps.len() != m.steps.len() {
            problems.push(format!("#{inst}: {} vs {} steps", d.steps.len(), m.steps.len()));
            continue;
        }
        for (sd, sm) in d.steps.iter().zip(&m.steps) {
            for (gd, gm) in sd.gammas().iter().zip(sm.gammas()) {
                match (gd, gm) {
                    (Some(a), Some(b)) => {
                        worst = worst.max((a - b).abs());
                        compared += 1;
                    }
                    (None, None) => {}
                    _ => problems.push(format!("#{inst} step {}: bounded on one path only", sd.step)),
                }
            }
        }
        for s in d.steps.iter().chain(&m.steps) {
            acc.reach.push(s.clone());
        }
        if d.verdict == SafetyVerdict::Safe {
            acc.safe_loops.push((plant, net, input, safe, d));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = problems.is_empty() && worst <= 1e-5 && compared > 0 && secs <= 120.0;
    outcome(
        pass,
        format!(
            "10 instances, {compared} facet offsets, max |gamma_data - gamma_model| = {worst:.2e}, {secs:.1} s{}",
            if problems.is_empty() { String::new() } else { format!("; {}", problems.join(", ")) }
        ),
    )
}

/// Lyapunov decrease along simulated closed-loop trajectories.
fn lyapunov_violations(plant: &OraclePlant, net: &NeuralNetwork, q1: &DMatrix<f64>, trajectories: usize, seed: u64) -> usize {
    let p = q1.clone().try_inverse().unwrap();
    let v = |x: &DVector<f64>| x.dot(&(&p * x));
    let chol = q1.clone().cholesky().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = q1.nrows();
    let mut bad = 0;
    for _ in 0..trajectories {
        // Uniform direction on the boundary of 0.5 * E(P), scaled inward.
        let y = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let y = y.normalize() * (0.5 * rng.random_range(0.0..1.0f64).sqrt());
        let x0 = chol.l() * y;
        let traj = simulate(plant, net, &x0, 200).unwrap();
        for w in traj.windows(2) {
            let (a, b) = (v(&w[0]), v(&w[1]));
            let ok = if a > 1e-12 { b < a } else { b <= a + 1e-10 };
            if w[0].amax() > 0.0 && !ok {
                bad += 1;
                break;
            }
        }
    }
    bad
}

/// Monte-Carlo check of every step bound of a safety result.
fn safety_violations(plant: &OraclePlant, net: &NeuralNetwork, input: &Polytope, safe: &Polytope, res: &ReachResult, samples: usize, seed: u64) -> (usize, f64) {
    let mut bad = 0;
    let mut worst = f64::NEG_INFINITY;
    for x0 in input.sample(samples, seed).unwrap() {
        let traj = simulate(plant, net, &x0, res.steps.len()).unwrap();
        for (st, x) in res.steps.iter().zip(&traj[1..]) {
            // the bound set shares the template normals, offsets are gamma
            let bound = safe.with_offsets(st.gamma_vector().unwrap()).unwrap();
            let m = -bound.slack(x).min();
            worst = worst.max(m);
            if m > 1e-6 {
                bad += 1;
            }
        }
    }
    (bad, worst)
}

fn criterion_3(acc: &mut Accepted) -> Outcome {
    let start = Instant::now();
    let mut notes = Vec::new();
    let mut pass = true;

    // Safety: the bundled examples plus every safe instance from criterion 2.
    let opts = ReachOptions::default();
    let mut loops = std::mem::take(&mut acc.safe_loops);
    for name in ["two-state", "contraction"] {
        let ex = example(name).unwrap();
        let data = ex.data(6, 9, Integrator::Euler).unwrap();
        let (input, safe) = (ex.sets.input_set.clone().unwrap(), ex.sets.safe_set.clone().unwrap());
        let sectors = SectorData::default_for(&ex.controller).unwrap();
        let res = verify_safety(&ex.controller, &sectors, Dynamics::Data(&data), &input, &safe, 3, &opts).unwrap();
        if res.verdict != SafetyVerdict::Safe {
            pass = false;
            notes.push(format!("{name} safety not certified"));
            continue;
        }
        acc.reach.extend(res.steps.iter().cloned());
        loops.push((ex.plant, ex.controller, input, safe, res));
    }
    let mut safety_worst = f64::NEG_INFINITY;
    let mut safety_bad = 0;
    for (i, (plant, net, input, safe, res)) in loops.iter().enumerate() {
        let (bad, worst) = safety_violations(plant, net, input, safe, res, 100_000, 31 + i as u64);
        safety_bad += bad;
        safety_worst = safety_worst.max(worst);
    }
    notes.push(format!(
        "safety: {} results x 1e5 samples, {safety_bad} violations (max excess {safety_worst:.1e})",
        loops.len()
    ));
    pass &= safety_bad == 0 && !loops.is_empty();

    // Invariance: the contraction example's box.
    let ex = example("contraction").unwrap();
    let data = ex.data(6, 9, Integrator::Euler).unwrap();
    let set = ex.sets.invariant_set.clone().unwrap();
    let sectors = SectorData::default_for(&ex.controller).unwrap();
    let inv = verify_invariance(&ex.controller, &sectors, Dynamics::Data(&data), &set, &opts).unwrap();
    if inv.invariant {
        acc.reach.push(inv.step.clone());
        let bound = set.with_offsets(inv.step.gamma_vector().unwrap()).unwrap();
        let mut bad = 0;
        for x in set.sample(100_000, 5).unwrap() {
            let y = ex.plant.step(&x, &ex.controller.control(&x).unwrap());
            if !bound.contains_point(&y, 1e-6) || !set.contains_point(&y, 1e-6) {
                bad += 1;
            }
        }
        notes.push(format!("invariance: 1e5 samples, {bad} violations"));
        pass &= bad == 0;
    } else {
        pass = false;
        notes.push("contraction box not certified invariant".into());
    }

    // Stability: every certified loop from criterion 1.
    let mut lyap_bad = 0;
    for (i, (plant, net, q1)) in acc.stable_loops.iter().enumerate() {
        lyap_bad += lyapunov_violations(plant, net, q1, 1000, 70 + i as u64);
    }
    notes.push(format!(
        "Lyapunov: {} certified loops x 1e3 trajectories x 200 steps, {lyap_bad} with a non-decrease",
        acc.stable_loops.len()
    ));
    pass &= lyap_bad == 0 && !acc.stable_loops.is_empty();
    notes.push(format!("{:.1} s", start.elapsed().as_secs_f64()));
    outcome(pass, notes.join("; "))
}

fn criterion_4(acc: &mut Accepted) -> Outcome {
    let ex = example("vehicle").unwrap();
    let sectors = SectorData::default_for(&ex.controller).unwrap();
    let opts = StabilityOptions::default();
    let mut notes = Vec::new();
    let mut pass = true;
    for k in 1..5 {
        let data = ex.data(k, 3, Integrator::Euler).unwrap();
        match verify_stability(&ex.controller, &sectors, &data, &opts) {
            Err(Error::Excitation(_)) => {}
            other => {
                pass = false;
                notes.push(format!("K = {k} not rejected: {:?}", other.map(|c| c.verdict)));
            }
        }
    }
    let mut verdicts = Vec::new();
    for k in [5, 10, 55] {
        let data = ex.data(k, 3, Integrator::Euler).unwrap();
        let c = verify_stability(&ex.controller, &sectors, &data, &opts).unwrap();
        verdicts.push(c.verdict);
        if c.verdict.is_certified() {
            acc.stability.push(c);
        }
    }
    pass &= verdicts.iter().all(|v| v.is_certified());
    notes.insert(0, format!("K < 5 rejected by the rank gate; K = 5, 10, 55 -> {verdicts:?}"));
    outcome(pass, notes.join("; "))
}

fn box_vertices(center: &DVector<f64>, half: &[f64]) -> Vec<DVector<f64>> {
    let n = half.len();
    (0..1usize << n)
        .map(|mask| DVector::from_fn(n, |i, _| center[i] + if mask >> i & 1 == 1 { half[i] } else { -half[i] }))
        .collect()
}

fn criterion_5(acc: &mut Accepted) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    let mut count = 0;
    let mut problems = Vec::new();
    let opts = ReachOptions::default();
    for inst in 0..6 {
        let n_x = 2 + inst % 2;
        let a = rand_matrix(&mut rng, n_x, n_x, 0.8);
        // Alternate between B = 0 under a ReLU net and a zero controller.
        let (b, net) = if inst % 2 == 0 {
            let (_, net) = random_loop(&mut rng, n_x, 1, &[3], Activation::Relu, 0.5);
            (DMatrix::zeros(n_x, 1), net)
        } else {
            let net = NeuralNetwork::new(
                vec![
                    Layer::new(DMatrix::zeros(2, n_x), DVector::zeros(2)),
                    Layer::new(DMatrix::zeros(1, 2), DVector::zeros(1)),
                ],
                Activation::Tanh,
            )
            .unwrap();
            (rand_matrix(&mut rng, n_x, 1, 1.0), net)
        };
        let plant = OraclePlant::new(a.clone(), b).unwrap();
        let data = exciting_data(&plant, 1, 900 + inst as u64);
        let sectors = SectorData::default_for(&net).unwrap();
        let center = DVector::from_fn(n_x, |_, _| rng.random_range(-0.2..0.2));
        let half: Vec<f64> = (0..n_x).map(|_| rng.random_range(0.1..0.5)).collect();
        let input = Polytope::boxed(center.clone(), &half).unwrap();
        let reach = 5.0;
        let safe = Polytope::boxed(DVector::zeros(n_x), &vec![reach; n_x]).unwrap();
        for dynamics in [Dynamics::Data(&data), Dynamics::Model(&plant)] {
            let res = verify_safety(&net, &sectors, dynamics, &input, &safe, 2, &opts).unwrap();
            // Step k starts from the previous box-shaped bound.
            let (mut c, mut h) = (center.clone(), half.clone());
            for st in &res.steps {
                let verts: Vec<DVector<f64>> = box_vertices(&c, &h).iter().map(|v| &a * v).collect();
                let Some(g) = st.gamma_vector() else {
                    problems.push(format!("#{inst}: unbounded step {}", st.step));
                    break;
                };
                // gamma_i bounds -n_i'(x - center); its exact value is a vertex maximum
                for i in 0..safe.n_facets() {
                    let d = safe.normal(i);
                    let exact = verts.iter().map(|v| -d.dot(&(v - &safe.center))).fold(f64::NEG_INFINITY, f64::max);
                    worst = worst.max((g[i] - exact).abs());
                    count += 1;
                }
                acc.reach.push(st.clone());
                // Facet 2j caps x_j from above, facet 2j+1 from below.
                let bounds: Vec<(f64, f64)> = (0..n_x).map(|j| (-reach * g[2 * j + 1], reach * g[2 * j])).collect();
                c = DVector::from_fn(n_x, |j, _| 0.5 * (bounds[j].0 + bounds[j].1));
                h = (0..n_x).map(|j| 0.5 * (bounds[j].1 - bounds[j].0)).collect();
            }
        }
    }
    outcome(
        problems.is_empty() && worst <= 1e-5,
        format!(
            "{count} facet offsets (2- and 3-state, two steps, data and model) vs vertex enumeration: max error {worst:.2e}{}",
            if problems.is_empty() { String::new() } else { format!("; {}", problems.join(", ")) }
        ),
    )
}

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = f64::INFINITY;
    let acts = [Activation::Relu, Activation::Tanh, Activation::Sigmoid, Activation::LeakyRelu(0.1)];
    for act in acts {
        let s = default_sector(act).unwrap();
        for _ in 0..100_000 {
            let v = rng.random_range(-50.0..50.0);
            let lambda = rng.random_range(0.0..10.0);
            let q = lambda * sector_form(s.alpha, s.beta, v - s.v_star, act.apply(v) - s.w_star);
            worst = worst.min(q);
        }
    }
    outcome(
        worst >= -1e-12,
        format!("4 activations x 1e5 samples, smallest value {worst:.2e}"),
    )
}

fn criterion_7(acc: &Accepted) -> Outcome {
    let tol = VerifyTolerances::default();
    let mut notes = Vec::new();
    let mut pass = true;

    let mut bad = 0;
    for c in &acc.stability {
        let r = &c.residuals;
        let eig_ok = r.min_eigenvalues.iter().all(|(_, e)| *e >= -1e-7);
        if !(r.pass && r.max_equality_residual <= 1e-6 && eig_ok && r.min_nonneg >= -1e-7 && c.min_eig_h >= c.epsilon - 1e-7) {
            bad += 1;
        }
    }
    let mut facets = 0;
    for st in &acc.reach {
        for f in st.facets.iter().filter(|f| f.gamma.is_some()) {
            facets += 1;
            let eig_ok = f.residuals.min_eigenvalues.iter().all(|(_, e)| *e >= -1e-7);
            if !(f.residuals.pass && f.residuals.max_equality_residual <= 1e-6 && eig_ok && f.sos.accepted) {
                bad += 1;
            }
        }
    }
    notes.push(format!(
        "{} stability certificates and {facets} facet certificates re-checked, {bad} failures",
        acc.stability.len()
    ));
    pass &= bad == 0 && !acc.stability.is_empty() && facets > 0;

    // Injected faults on a solved stability program.
    let ex = example("contraction").unwrap();
    let data = ex.data(6, 1, Integrator::Euler).unwrap();
    let sectors = SectorData::default_for(&ex.controller).unwrap();
    let (sp, _) = stability_program(&ex.controller, &sectors, &data, &StabilityOptions::default()).unwrap();
    let sol = solve(&sp.program, &Settings::default());
    let clean = verify_solution(&sp.program, &sol.values, tol);
    let mut rejected = 0;
    let mut faults = 0;
    {
        let mut p = sp.program.clone();
        p.equalities[0].expr.add_constant(1e-3);
        faults += 1;
        rejected += usize::from(!verify_solution(&p, &sol.values, tol).pass);
    }
    {
        let mut v = sol.values.clone();
        let q = sp.program.var(sp.q1, 0, 0);
        v[q] = -1.0;
        faults += 1;
        rejected += usize::from(!verify_solution(&sp.program, &v, tol).pass);
    }
    {
        let mut v = sol.values.clone();
        v[0] = f64::NAN;
        faults += 1;
        rejected += usize::from(!verify_solution(&sp.program, &v, tol).pass);
    }
    // An SOS Gram matrix made indefinite.
    {
        let x = Polynomial::var(1, 0);
        let p = ParamPoly::from_poly(&x.mul(&x).unwrap());
        let c = compile_sos(&p, None).unwrap();
        let n = c.basis.len();
        let mut g = DMatrix::identity(n, n);
        g[(0, 0)] = -0.5;
        faults += 1;
        rejected += usize::from(!verify_sos_certificate(&c, &p, &g, &[], 100, 2.0, 1).accepted);
    }
    notes.push(format!(
        "clean solution {}, {rejected}/{faults} injected faults rejected",
        if clean.pass { "passes" } else { "FAILS" }
    ));
    pass &= clean.pass && rejected == faults;
    outcome(pass, notes.join("; "))
}

fn run_cli(args: &[&str], out: &Path) -> i32 {
    Command::new(env!("CARGO_BIN_EXE_nncert"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("NNCERT_SOLVER")
        .stdout(std::process::Stdio::null())
        .status()
        .expect("binary runs")
        .code()
        .unwrap_or(-1)
}

fn criterion_8() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let runs: [&[&str]; 4] = [
        &["--mode", "stability", "--example", "pendulum", "--seed", "3"],
        &["--mode", "safety", "--example", "two-state", "--seed", "3"],
        &["--mode", "invariance", "--example", "contraction", "--seed", "3"],
        &["--mode", "check-data", "--example", "vehicle", "--samples", "4"],
    ];
    let mut compared = 0;
    let mut diffs = Vec::new();
    for (i, args) in runs.iter().enumerate() {
        let (a, b) = (dir.path().join(format!("{i}a")), dir.path().join(format!("{i}b")));
        let (ca, cb) = (run_cli(args, &a), run_cli(args, &b));
        if ca != cb {
            diffs.push(format!("{}: exit {ca} vs {cb}", args[1]));
        }
        for entry in std::fs::read_dir(&a).unwrap() {
            let name = entry.unwrap().file_name();
            compared += 1;
            if std::fs::read(a.join(&name)).ok() != std::fs::read(b.join(&name)).ok() {
                diffs.push(format!("{}: {}", args[1], name.to_string_lossy()));
            }
        }
    }
    outcome(
        diffs.is_empty() && compared >= 10,
        format!(
            "{compared} files from 4 runs compared byte for byte{}",
            if diffs.is_empty() { String::new() } else { format!("; differ: {}", diffs.join(", ")) }
        ),
    )
}

fn main() {
    let mut acc = Accepted::default();
    let names = [
        "stability verdicts, data vs known plant",
        "reach offsets, data vs known plant",
        "soundness by simulation",
        "rank gate on the 4-state vehicle",
        "linear loops vs vertex enumeration",
        "sector form sampling",
        "certificate post-verification",
        "determinism of CLI outputs",
    ];
    let mut failed = 0;
    for (i, name) in names.iter().enumerate() {
        let r = catch_unwind(AssertUnwindSafe(|| match i {
            0 => criterion_1(&mut acc),
            1 => criterion_2(&mut acc),
            2 => criterion_3(&mut acc),
            3 => criterion_4(&mut acc),
            4 => criterion_5(&mut acc),
            5 => criterion_6(),
            6 => criterion_7(&acc),
            _ => criterion_8(),
        }))
        .unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        if !r.pass {
            failed += 1;
        }
        println!("criterion {} [{}] {}: {}", i + 1, if r.pass { "PASS" } else { "FAIL" }, name, r.detail);
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
