//! Trajectory data, excitation checks and the data-based representation
//! of the unknown plant.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::linalg::{matrix_to_rows, numerical_rank, pinv, rows_to_matrix, singular_values, vstack};

/// Relative singular-value threshold for numerical rank.
pub const DEFAULT_RANK_TOL: f64 = 1e-8;

/// Column-aligned samples `(u(k), x(k), x(k+1))`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryData {
    pub u0: DMatrix<f64>,
    pub x0: DMatrix<f64>,
    pub x1: DMatrix<f64>,
    /// Free-form metadata such as seeds or noise flags.
    pub provenance: BTreeMap<String, String>,
}

impl TrajectoryData {
    pub fn new(u0: DMatrix<f64>, x0: DMatrix<f64>, x1: DMatrix<f64>) -> Result<Self> {
        if u0.ncols() != x0.ncols() || x0.ncols() != x1.ncols() {
            return dim_err(format!(
                "column counts differ: U0 {}, X0 {}, X1 {}",
                u0.ncols(),
                x0.ncols(),
                x1.ncols()
            ));
        }
        if x0.nrows() != x1.nrows() {
            return dim_err(format!(
                "X0 has {} rows, X1 has {}",
                x0.nrows(),
                x1.nrows()
            ));
        }
        Ok(Self {
            u0,
            x0,
            x1,
            provenance: BTreeMap::new(),
        })
    }

    /// Builds data from one rollout: `states` has one more column than `inputs`.
    pub fn from_rollout(inputs: &DMatrix<f64>, states: &DMatrix<f64>) -> Result<Self> {
        let k = inputs.ncols();
        if states.ncols() != k + 1 {
            return dim_err(format!(
                "rollout with {k} inputs needs {} states, got {}",
                k + 1,
                states.ncols()
            ));
        }
        Self::new(
            inputs.clone(),
            states.columns(0, k).into_owned(),
            states.columns(1, k).into_owned(),
        )
    }

    pub fn samples(&self) -> usize {
        self.x0.ncols()
    }
    pub fn n_x(&self) -> usize {
        self.x0.nrows()
    }
    pub fn n_u(&self) -> usize {
        self.u0.nrows()
    }

    /// `[U0; X0]`.
    pub fn stacked_regressor(&self) -> DMatrix<f64> {
        vstack(&self.u0, &self.x0)
    }

    /// Appends the columns of `other`.
    pub fn append(&mut self, other: &TrajectoryData) -> Result<()> {
        if other.n_x() != self.n_x() || other.n_u() != self.n_u() {
            return dim_err("appended data has different dimensions");
        }
        let cat = |a: &DMatrix<f64>, b: &DMatrix<f64>| {
            let mut m = DMatrix::zeros(a.nrows(), a.ncols() + b.ncols());
            m.columns_mut(0, a.ncols()).copy_from(a);
            m.columns_mut(a.ncols(), b.ncols()).copy_from(b);
            m
        };
        self.u0 = cat(&self.u0, &other.u0);
        self.x0 = cat(&self.x0, &other.x0);
        self.x1 = cat(&self.x1, &other.x1);
        Ok(())
    }

    /// Adds uniform noise of the given amplitude to the state samples.
    /// Certificates computed from noisy data carry no guarantee.
    pub fn with_state_noise(&self, amplitude: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = self.clone();
        if amplitude > 0.0 {
            for v in out.x0.iter_mut().chain(out.x1.iter_mut()) {
                *v += rng.random_range(-amplitude..=amplitude);
            }
        }
        out.provenance
            .insert("state_noise".into(), format!("{amplitude:e}"));
        out
    }

    /// Reads the CSV format `u_*, x_*, x1_*` with one sample per row.
    pub fn from_csv_reader<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let mut cols: [Vec<usize>; 3] = Default::default();
        for (i, h) in headers.iter().enumerate() {
            let (group, idx) = if let Some(r) = h.strip_prefix("x1_") {
                (2, r)
            } else if let Some(r) = h.strip_prefix("x_") {
                (1, r)
            } else if let Some(r) = h.strip_prefix("u_") {
                (0, r)
            } else {
                return Err(Error::Parse(format!("unexpected CSV column '{h}'")));
            };
            let idx: usize = idx
                .parse()
                .map_err(|_| Error::Parse(format!("bad column index in '{h}'")))?;
            if idx != cols[group].len() {
                return Err(Error::Parse(format!("column '{h}' out of order")));
            }
            cols[group].push(i);
        }
        if cols[1].len() != cols[2].len() || cols[1].is_empty() {
            return Err(Error::Parse("need matching non-empty x_* and x1_* columns".into()));
        }
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let row = rec
                .iter()
                .map(|f| {
                    f.parse::<f64>()
                        .map_err(|_| Error::Parse(format!("not a number: '{f}'")))
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        let k = rows.len();
        let pick = |idx: &[usize]| DMatrix::from_fn(idx.len(), k, |r, c| rows[c][idx[r]]);
        Self::new(pick(&cols[0]), pick(&cols[1]), pick(&cols[2]))
    }

    pub fn from_csv_file(path: impl AsRef<Path>) -> Result<Self> {
        let mut d = Self::from_csv_reader(std::fs::File::open(path.as_ref())?)?;
        d.provenance
            .insert("source".into(), path.as_ref().display().to_string());
        Ok(d)
    }

    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = (0..self.n_u()).map(|i| format!("u_{i}")).collect();
        header.extend((0..self.n_x()).map(|i| format!("x_{i}")));
        header.extend((0..self.n_x()).map(|i| format!("x1_{i}")));
        w.write_record(&header)?;
        for c in 0..self.samples() {
            let row: Vec<String> = self
                .u0
                .column(c)
                .iter()
                .chain(self.x0.column(c).iter())
                .chain(self.x1.column(c).iter())
                .map(|v| format!("{v:e}"))
                .collect();
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_csv_file(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

/// Ground-truth plant used to generate data and as a test oracle.
#[derive(Clone, Debug, PartialEq)]
pub struct OraclePlant {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

#[derive(Serialize, Deserialize)]
struct PlantFile {
    #[serde(rename = "A")]
    a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    b: Vec<Vec<f64>>,
}

impl OraclePlant {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        if !a.is_square() || b.nrows() != a.nrows() {
            return dim_err(format!(
                "plant A is {}x{}, B is {}x{}",
                a.nrows(),
                a.ncols(),
                b.nrows(),
                b.ncols()
            ));
        }
        Ok(Self { a, b })
    }

    pub fn n_x(&self) -> usize {
        self.a.nrows()
    }
    pub fn n_u(&self) -> usize {
        self.b.ncols()
    }

    pub fn step(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        &self.a * x + &self.b * u
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let f: PlantFile = serde_json::from_str(s)?;
        let a = rows_to_matrix(&f.a, 0).ok_or_else(|| Error::Parse("ragged A".into()))?;
        let n_x = a.nrows();
        let b = rows_to_matrix(&f.b, 0).ok_or_else(|| Error::Parse("ragged B".into()))?;
        let b = if b.nrows() == 0 { DMatrix::zeros(n_x, 0) } else { b };
        Self::new(a, b)
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&PlantFile {
            a: matrix_to_rows(&self.a),
            b: matrix_to_rows(&self.b),
        })?)
    }
}

/// Rank diagnostics for the excitation conditions.
#[derive(Clone, Debug, Serialize)]
pub struct RankReport {
    pub rank_regressor: usize,
    pub required_regressor: usize,
    pub rank_successor: usize,
    pub required_successor: usize,
    pub singular_values_regressor: Vec<f64>,
    pub singular_values_successor: Vec<f64>,
    pub samples: usize,
    /// `[U0; X0]` has full row rank; this is what the verifiers need.
    pub representation_ok: bool,
    /// Both rank conditions hold.
    pub pass: bool,
}

impl RankReport {
    pub fn summary(&self) -> String {
        format!(
            "rank([U0;X0]) = {} (need {}), rank(X1) = {} (need {}), K = {}",
            self.rank_regressor,
            self.required_regressor,
            self.rank_successor,
            self.required_successor,
            self.samples
        )
    }
}

pub fn check_excitation(data: &TrajectoryData) -> RankReport {
    check_excitation_with(data, DEFAULT_RANK_TOL)
}

pub fn check_excitation_with(data: &TrajectoryData, rel_tol: f64) -> RankReport {
    let sv_r = singular_values(&data.stacked_regressor());
    let sv_s = singular_values(&data.x1);
    let rank_r = numerical_rank(&sv_r, rel_tol);
    let rank_s = numerical_rank(&sv_s, rel_tol);
    let req_r = data.n_u() + data.n_x();
    let req_s = data.n_x();
    RankReport {
        rank_regressor: rank_r,
        required_regressor: req_r,
        rank_successor: rank_s,
        required_successor: req_s,
        singular_values_regressor: sv_r,
        singular_values_successor: sv_s,
        samples: data.samples(),
        representation_ok: rank_r == req_r,
        pass: rank_r == req_r && rank_s == req_s,
    }
}

fn require_representation(data: &TrajectoryData) -> Result<RankReport> {
    let rep = check_excitation(data);
    if !rep.representation_ok {
        return Err(Error::Excitation(rep.summary()));
    }
    Ok(rep)
}

/// Samples a box uniformly; degenerate intervals give the endpoint.
pub(crate) fn sample_box(rng: &mut ChaCha8Rng, bx: &[(f64, f64)]) -> DVector<f64> {
    DVector::from_iterator(
        bx.len(),
        bx.iter().map(|&(lo, hi)| {
            if hi > lo {
                rng.random_range(lo..=hi)
            } else {
                lo
            }
        }),
    )
}

pub(crate) fn check_box(bx: &[(f64, f64)], n: usize, what: &str) -> Result<()> {
    if bx.len() != n {
        return dim_err(format!("{what} box has {} intervals, expected {n}", bx.len()));
    }
    if let Some(i) = bx.iter().position(|&(lo, hi)| !(lo <= hi)) {
        return Err(Error::Invalid(format!("{what} interval {i} is empty")));
    }
    Ok(())
}

/// Simulates one rollout of length `k` with uniformly random inputs.
pub fn collect(
    plant: &OraclePlant,
    k: usize,
    input_box: &[(f64, f64)],
    init_box: &[(f64, f64)],
    seed: u64,
) -> Result<TrajectoryData> {
    if k == 0 {
        return Err(Error::Invalid("sample count must be at least 1".into()));
    }
    check_box(input_box, plant.n_u(), "input")?;
    check_box(init_box, plant.n_x(), "initial state")?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut states = DMatrix::zeros(plant.n_x(), k + 1);
    let mut inputs = DMatrix::zeros(plant.n_u(), k);
    let mut x = sample_box(&mut rng, init_box);
    states.set_column(0, &x);
    for j in 0..k {
        let u = sample_box(&mut rng, input_box);
        x = plant.step(&x, &u);
        inputs.set_column(j, &u);
        states.set_column(j + 1, &x);
    }
    let mut d = TrajectoryData::from_rollout(&inputs, &states)?;
    d.provenance.insert("seed".into(), seed.to_string());
    d.provenance.insert("origin".into(), "single rollout".into());
    Ok(d)
}

/// Draws `k` independent one-step experiments.
pub fn collect_independent(
    plant: &OraclePlant,
    k: usize,
    input_box: &[(f64, f64)],
    init_box: &[(f64, f64)],
    seed: u64,
) -> Result<TrajectoryData> {
    if k == 0 {
        return Err(Error::Invalid("sample count must be at least 1".into()));
    }
    check_box(input_box, plant.n_u(), "input")?;
    check_box(init_box, plant.n_x(), "initial state")?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut u0 = DMatrix::zeros(plant.n_u(), k);
    let mut x0 = DMatrix::zeros(plant.n_x(), k);
    let mut x1 = DMatrix::zeros(plant.n_x(), k);
    for j in 0..k {
        let x = sample_box(&mut rng, init_box);
        let u = sample_box(&mut rng, input_box);
        x1.set_column(j, &plant.step(&x, &u));
        x0.set_column(j, &x);
        u0.set_column(j, &u);
    }
    let mut d = TrajectoryData::new(u0, x0, x1)?;
    d.provenance.insert("seed".into(), seed.to_string());
    d.provenance
        .insert("origin".into(), "independent experiments".into());
    Ok(d)
}

/// Least-squares plant estimate `[B^ A^] = X1 pinv([U0; X0])`.
/// Diagnostics only; certificates never use it.
pub fn recover_system(data: &TrajectoryData) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    require_representation(data)?;
    let ba = &data.x1 * pinv(&data.stacked_regressor(), DEFAULT_RANK_TOL);
    let n_u = data.n_u();
    let b = ba.columns(0, n_u).into_owned();
    let a = ba.columns(n_u, data.n_x()).into_owned();
    Ok((b, a))
}

/// Minimum-norm `G` with `[U0; X0] G = [top; bottom]`.
pub fn solve_consistency(
    data: &TrajectoryData,
    top: &DMatrix<f64>,
    bottom: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    if top.nrows() != data.n_u() || bottom.nrows() != data.n_x() || top.ncols() != bottom.ncols() {
        return dim_err(format!(
            "right-hand side is {}x{} over {}x{}, data has n_u = {}, n_x = {}",
            top.nrows(),
            top.ncols(),
            bottom.nrows(),
            bottom.ncols(),
            data.n_u(),
            data.n_x()
        ));
    }
    require_representation(data)?;
    let k = data.samples();
    if top.ncols() == 0 {
        return Ok(DMatrix::zeros(k, 0));
    }
    let reg = data.stacked_regressor();
    let rhs = vstack(top, bottom);
    let g = pinv(&reg, DEFAULT_RANK_TOL) * &rhs;
    let residual = (&reg * &g - &rhs).amax();
    let scale = 1.0 + rhs.amax();
    if residual > 1e-10 * scale * (1.0 + g.amax()) {
        return Err(Error::Inconsistent(residual));
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{any, prop_assert, prop_assert_eq, proptest, ProptestConfig};

    fn random_plant(rng: &mut ChaCha8Rng, n_x: usize, n_u: usize) -> OraclePlant {
        OraclePlant::new(
            DMatrix::from_fn(n_x, n_x, |_, _| rng.random_range(-1.0..1.0)),
            DMatrix::from_fn(n_x, n_u, |_, _| rng.random_range(-1.0..1.0)),
        )
        .unwrap()
    }

    fn unit_box(n: usize) -> Vec<(f64, f64)> {
        vec![(-1.0, 1.0); n]
    }

    #[test]
    fn too_few_columns_fail() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = random_plant(&mut rng, 3, 1);
        let d = collect(&p, 3, &unit_box(1), &unit_box(3), 2).unwrap();
        let r = check_excitation(&d);
        assert!(!r.pass && !r.representation_ok);
        assert!(r.rank_regressor <= 3);
    }

    #[test]
    fn unexcited_data_has_rank_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = random_plant(&mut rng, 2, 1);
        let d = collect(&p, 6, &[(0.0, 0.0)], &[(0.0, 0.0); 2], 0).unwrap();
        let r = check_excitation(&d);
        assert_eq!(r.rank_regressor, 0);
        assert!(!r.pass);
    }

    #[test]
    fn four_state_plant_with_five_samples_passes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = random_plant(&mut rng, 4, 1);
        let d = collect(&p, 5, &unit_box(1), &unit_box(4), 11).unwrap();
        assert!(check_excitation(&d).pass);
    }

    #[test]
    fn null_and_frozen_plants() {
        let p = OraclePlant::new(DMatrix::zeros(2, 2), DMatrix::zeros(2, 1)).unwrap();
        let d = collect(&p, 4, &unit_box(1), &unit_box(2), 5).unwrap();
        assert!(d.x1.iter().all(|&v| v == 0.0));
        let p = OraclePlant::new(DMatrix::identity(2, 2), DMatrix::zeros(2, 1)).unwrap();
        let d = collect(&p, 4, &unit_box(1), &unit_box(2), 5).unwrap();
        for c in 0..4 {
            assert_eq!(d.x1.column(c), d.x0.column(0));
        }
    }

    #[test]
    fn rollout_columns_chain() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = random_plant(&mut rng, 3, 2);
        let d = collect(&p, 8, &unit_box(2), &unit_box(3), 9).unwrap();
        for j in 0..7 {
            assert_eq!(d.x1.column(j), d.x0.column(j + 1));
        }
    }

    #[test]
    fn empty_box_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = random_plant(&mut rng, 2, 1);
        assert!(collect(&p, 3, &[(1.0, 0.0)], &unit_box(2), 0).is_err());
        assert!(collect(&p, 0, &unit_box(1), &unit_box(2), 0).is_err());
    }

    #[test]
    fn recovers_plant_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for (n_x, n_u, k) in [(2, 1, 3), (4, 1, 5), (3, 2, 12)] {
            let p = random_plant(&mut rng, n_x, n_u);
            let d = collect_independent(&p, k, &unit_box(n_u), &unit_box(n_x), 7).unwrap();
            let (b, a) = recover_system(&d).unwrap();
            let err = (&a - &p.a).norm() + (&b - &p.b).norm();
            assert!(err <= 1e-8, "err {err}");
            let resid = &d.x1 - &b * &d.u0 - &a * &d.x0;
            assert!(resid.amax() <= 1e-10);
        }
    }

    #[test]
    fn rank_deficient_recovery_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = random_plant(&mut rng, 3, 1);
        let d = collect(&p, 2, &unit_box(1), &unit_box(3), 0).unwrap();
        assert!(matches!(recover_system(&d), Err(Error::Excitation(_))));
    }

    #[test]
    fn consistency_matches_recovered_plant() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let p = random_plant(&mut rng, 3, 2);
        let d = collect(&p, 9, &unit_box(2), &unit_box(3), 1).unwrap();
        let g1 = solve_consistency(&d, &DMatrix::zeros(2, 3), &DMatrix::identity(3, 3)).unwrap();
        assert!((&d.x1 * &g1 - &p.a).amax() <= 1e-8);
        let w = DMatrix::from_fn(2, 4, |_, _| rng.random_range(-1.0..1.0));
        let g2 = solve_consistency(&d, &w, &DMatrix::zeros(3, 4)).unwrap();
        assert!((&d.x1 * &g2 - &p.b * &w).amax() <= 1e-8);
        let g0 = solve_consistency(&d, &DMatrix::zeros(2, 0), &DMatrix::zeros(3, 0)).unwrap();
        assert_eq!(g0.shape(), (9, 0));
    }

    #[test]
    fn csv_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p = random_plant(&mut rng, 2, 1);
        let d = collect(&p, 5, &unit_box(1), &unit_box(2), 3).unwrap();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("u_0,x_0,x_1,x1_0,x1_1"));
        let back = TrajectoryData::from_csv_reader(buf.as_slice()).unwrap();
        assert_eq!(back.u0, d.u0);
        assert_eq!(back.x0, d.x0);
        assert_eq!(back.x1, d.x1);
    }

    #[test]
    fn plant_json_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p = random_plant(&mut rng, 3, 2);
        let s = p.to_json_string().unwrap();
        assert_eq!(OraclePlant::from_json_str(&s).unwrap(), p);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]

        #[test]
        fn equal_seeds_are_bit_identical(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            let p = random_plant(&mut rng, 3, 1);
            let a = collect(&p, 6, &unit_box(1), &unit_box(3), seed).unwrap();
            let b = collect(&p, 6, &unit_box(1), &unit_box(3), seed).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn appending_never_lowers_rank(seed in any::<u64>(), k1 in 1usize..6, k2 in 1usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = random_plant(&mut rng, 3, 1);
            let mut a = collect(&p, k1, &unit_box(1), &unit_box(3), seed).unwrap();
            let b = collect(&p, k2, &unit_box(1), &unit_box(3), seed ^ 1).unwrap();
            let r0 = check_excitation(&a);
            a.append(&b).unwrap();
            let r1 = check_excitation(&a);
            prop_assert!(r1.rank_regressor >= r0.rank_regressor);
            prop_assert!(r1.rank_successor >= r0.rank_successor);
        }

        #[test]
        fn data_identity_holds(seed in any::<u64>(), m in 0usize..4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = random_plant(&mut rng, 3, 2);
            let d = collect_independent(&p, 8, &unit_box(2), &unit_box(3), seed).unwrap();
            let top = DMatrix::from_fn(2, m, |_, _| rng.random_range(-2.0..2.0));
            let bottom = DMatrix::from_fn(3, m, |_, _| rng.random_range(-2.0..2.0));
            let g = solve_consistency(&d, &top, &bottom).unwrap();
            let lhs = &d.x1 * g;
            let rhs = &p.b * &top + &p.a * &bottom;
            prop_assert!((lhs - rhs).amax() <= 1e-8);
        }
    }
}
