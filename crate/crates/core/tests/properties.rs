//! Randomized checks of structural identities across modules.

use nalgebra::{DMatrix, DVector};
use nncert::data::{check_excitation, collect_independent, recover_system, solve_consistency, OraclePlant, TrajectoryData};
use nncert::nn::{build_stacked, loop_transform, Activation, Layer, NeuralNetwork};
use nncert::poly::Polynomial;
use nncert::sdp::{solve, ConicProgram, Settings, SolveStatus};
use nncert::sectors::{sector_form, sector_quadratic_matrix, SectorData};
use nncert::sos::{compile_sos, verify_sos_certificate, ParamPoly};
use nncert::stability::roa_ellipsoid;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn activation(k: u8) -> Activation {
    match k % 4 {
        0 => Activation::Relu,
        1 => Activation::Tanh,
        2 => Activation::Sigmoid,
        _ => Activation::LeakyRelu(0.1),
    }
}

fn random_net(seed: u64, n_x: usize, n_u: usize, hidden: &[usize], act: Activation) -> NeuralNetwork {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dims = vec![n_x];
    dims.extend_from_slice(hidden);
    dims.push(n_u);
    let layers = dims
        .windows(2)
        .map(|w| {
            Layer::new(
                DMatrix::from_fn(w[1], w[0], |_, _| rng.random_range(-1.0..1.0)),
                DVector::from_fn(w[1], |_, _| rng.random_range(-0.5..0.5)),
            )
        })
        .collect();
    NeuralNetwork::new(layers, act).unwrap()
}

fn net_strategy() -> impl Strategy<Value = NeuralNetwork> {
    (any::<u64>(), 1usize..4, 1usize..3, proptest::collection::vec(1usize..5, 1..4), any::<u8>())
        .prop_map(|(seed, n_x, n_u, hidden, a)| random_net(seed, n_x, n_u, &hidden, activation(a)))
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize, r: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(-r..r))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn stacked_form_reproduces_forward_pass(net in net_strategy(), seed in any::<u64>()) {
        let st = build_stacked(&net);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..20 {
            let x = random_vec(&mut rng, net.input_dim(), 3.0);
            let f = net.forward(&x).unwrap();
            let (u, v) = st.eval(&x, &f.w_phi);
            let scale = 1.0 + f.u.amax().max(f.v_phi.amax());
            prop_assert!((&u - &f.u).amax() <= 1e-12 * scale);
            prop_assert!((&v - &f.v_phi).amax() <= 1e-12 * scale);
        }
    }

    #[test]
    fn interconnection_block_is_nilpotent(net in net_strategy()) {
        let st = build_stacked(&net);
        let tf = loop_transform(&st, &SectorData::default_for(&net).unwrap()).unwrap();
        let n = tf.c4.nrows();
        let mut p = DMatrix::identity(n, n);
        for _ in 0..net.hidden_layers() {
            p = &p * &tf.c4;
        }
        prop_assert!(p.iter().all(|&v| v == 0.0));
        let direct = (DMatrix::identity(n, n) - &tf.c4).try_inverse().unwrap();
        prop_assert!((&direct - &tf.inv_i_minus_c4).amax() <= 1e-12 * (1.0 + direct.amax()));
    }

    #[test]
    fn normalized_loop_reproduces_controller(net in net_strategy(), seed in any::<u64>()) {
        let st = build_stacked(&net);
        let sectors = SectorData::default_for(&net).unwrap();
        let tf = loop_transform(&st, &sectors).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..20 {
            let x = random_vec(&mut rng, net.input_dim(), 2.0);
            let f = net.forward(&x).unwrap();
            let z = tf.normalize(&f.v_phi, &f.w_phi);
            let (u, vt) = tf.eval(&x, &z);
            let scale = 1.0 + f.u.amax() + f.v_phi.amax();
            prop_assert!((&u - &f.u).amax() <= 1e-10 * scale);
            prop_assert!((&vt - &tf.shifted_preactivation(&f.v_phi)).amax() <= 1e-10 * scale);
            // |z_i| <= |v~_i| is the normalized sector.
            for (zi, vi) in z.iter().zip(vt.iter()) {
                prop_assert!(zi.abs() <= vi.abs() * (1.0 + 1e-12) + 1e-12);
            }
        }
    }

    #[test]
    fn sector_form_is_nonnegative_on_the_graph(a in any::<u8>(), lam in 0.0f64..10.0, v in -50.0f64..50.0) {
        let act = activation(a);
        let s = SectorData::uniform(1, nncert::sectors::default_sector(act).unwrap());
        let (dv, dw) = (v - s.v_star[0], act.apply(v) - s.w_star[0]);
        prop_assert!(lam * sector_form(s.alpha[0], s.beta[0], dv, dw) >= -1e-12);
        let m = sector_quadratic_matrix(&s, &DVector::from_element(1, lam)).unwrap();
        let y = DVector::from_vec(vec![dv, dw]);
        let q = (y.transpose() * &m * &y)[0];
        prop_assert!(q >= -1e-12 * (1.0 + lam * v * v));
    }

    #[test]
    fn appending_samples_never_lowers_rank(seed in any::<u64>(), k1 in 1usize..6, k2 in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let plant = OraclePlant::new(
            DMatrix::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0)),
            DMatrix::from_fn(3, 1, |_, _| rng.random_range(-1.0..1.0)),
        ).unwrap();
        let boxes = (vec![(-1.0, 1.0)], vec![(-1.0, 1.0); 3]);
        let mut a = collect_independent(&plant, k1, &boxes.0, &boxes.1, seed).unwrap();
        let b = collect_independent(&plant, k2, &boxes.0, &boxes.1, seed ^ 1).unwrap();
        let before = check_excitation(&a);
        a.append(&b).unwrap();
        let after = check_excitation(&a);
        prop_assert!(after.rank_regressor >= before.rank_regressor);
        prop_assert!(after.rank_successor >= before.rank_successor);
    }

    #[test]
    fn consistency_solution_maps_through_recovered_plant(seed in any::<u64>(), extra in 0usize..8, cols in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n_x, n_u) = (3, 2);
        let plant = OraclePlant::new(
            DMatrix::from_fn(n_x, n_x, |_, _| rng.random_range(-1.0..1.0)),
            DMatrix::from_fn(n_x, n_u, |_, _| rng.random_range(-1.0..1.0)),
        ).unwrap();
        let d = collect_independent(&plant, n_x + n_u + extra, &[(-1.0, 1.0); 2], &[(-1.0, 1.0); 3], seed).unwrap();
        let top = DMatrix::from_fn(n_u, cols, |_, _| rng.random_range(-1.0..1.0));
        let bottom = DMatrix::from_fn(n_x, cols, |_, _| rng.random_range(-1.0..1.0));
        let g = solve_consistency(&d, &top, &bottom).unwrap();
        let (bh, ah) = recover_system(&d).unwrap();
        let lhs = &d.x1 * &g;
        let rhs = &bh * &top + &ah * &bottom;
        prop_assert!((&lhs - &rhs).amax() <= 1e-8);
    }

    #[test]
    fn ellipse_points_lie_on_the_level_set(seed in any::<u64>(), n in 2usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let q1 = &a * a.transpose() + DMatrix::identity(n, n) * 0.1;
        let p = q1.clone().try_inverse().unwrap();
        let i = rng.random_range(0..n);
        let j = (i + 1 + rng.random_range(0..n - 1)) % n;
        for pt in roa_ellipsoid(&q1, (i, j), 64).unwrap() {
            let mut x = DVector::zeros(n);
            x[i] = pt[0];
            x[j] = pt[1];
            prop_assert!((x.dot(&(&p * &x)) - 1.0).abs() <= 1e-9);
        }
    }
}

/// Random sum of squares of affine forms in two variables.
fn random_sos(seed: u64) -> Polynomial {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = Polynomial::zero(2);
    for _ in 0..3 {
        let c: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();
        let f = Polynomial::affine(&c, rng.random_range(-1.0..1.0));
        p = p.add(&f.mul(&f).unwrap()).unwrap();
    }
    p
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn sos_gram_round_trip(seed in any::<u64>()) {
        let p = random_sos(seed);
        let pp = ParamPoly::from_poly(&p);
        let mut c = compile_sos(&pp, None).unwrap();
        let mut prog = ConicProgram::new();
        let g = c.emit(&mut prog, "gram");
        let sol = solve(&prog, &Settings::default());
        prop_assert_eq!(sol.status, SolveStatus::Optimal);
        let gram = sol.block(&prog, g);
        let back = c.gram_polynomial(&gram);
        for (m, coeff) in p.terms() {
            prop_assert!((back.coeff(m) - coeff).abs() <= 1e-9 * (1.0 + coeff.abs()), "{m:?}");
        }
        let rep = verify_sos_certificate(&c, &pp, &gram, &sol.values, 200, 3.0, seed);
        prop_assert!(rep.accepted, "{rep:?}");
        prop_assert!(rep.min_sampled_value >= -1e-9);
    }

    #[test]
    fn larger_basis_keeps_feasibility(seed in any::<u64>()) {
        let p = random_sos(seed);
        let pp = ParamPoly::from_poly(&p);
        let basis = nncert::poly::monomial_basis(2, &[0, 1], 2);
        let mut c = compile_sos(&pp, Some(basis)).unwrap();
        let mut prog = ConicProgram::new();
        c.emit(&mut prog, "gram");
        let st = solve(&prog, &Settings::default()).status;
        prop_assert!(matches!(st, SolveStatus::Optimal | SolveStatus::AlmostOptimal), "{st:?}");
    }
}

#[test]
fn trajectory_data_round_trips_through_csv() {
    let plant = OraclePlant::new(DMatrix::identity(2, 2) * 0.5, DMatrix::from_element(2, 1, 1.0)).unwrap();
    let d = collect_independent(&plant, 7, &[(-1.0, 1.0)], &[(-1.0, 1.0); 2], 9).unwrap();
    let mut buf = Vec::new();
    d.write_csv(&mut buf).unwrap();
    let back = TrajectoryData::from_csv_reader(buf.as_slice()).unwrap();
    assert_eq!(back.u0, d.u0);
    assert_eq!(back.x0, d.x0);
    assert_eq!(back.x1, d.x1);
}
