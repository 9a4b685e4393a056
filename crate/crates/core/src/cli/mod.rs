//! Command-line pipeline: configuration, input resolution, the five modes
//! and the files each one writes.
//!
//! [`run`] is what the binary calls, so a library caller with the same
//! [`RunConfig`] gets the same verdict and the same bytes on disk.

mod plot;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, ValueEnum};
use serde::Serialize;

use crate::data::{check_excitation, collect, OraclePlant, RankReport, TrajectoryData};
use crate::fixtures::{example, ExampleSystem, Integrator};
use crate::nn::NeuralNetwork;
use crate::polytope::{Polytope, ProblemSets};
use crate::reach::{
    safety_via_invariance, step_programs, verify_invariance, verify_safety, Dynamics,
    InvarianceResult, InvarianceSafety, ReachOptions, ReachResult, SafetyVerdict,
};
use crate::sdp::{write_sdpa, Settings};
use crate::sectors::SectorData;
use crate::stability::{
    roa_csv, roa_ellipsoid, stability_program, stability_program_model, verify_stability,
    verify_stability_model, Objective, StabilityCertificate, StabilityOptions,
};
use crate::{Error, Result};

pub const EXIT_CERTIFIED: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_NOT_CERTIFIED: i32 = 2;

/// Boundary points per ROA slice.
const ROA_POINTS: usize = 256;
/// Planes beyond this state dimension are not plotted (too many pairs).
const ROA_MAX_DIM: usize = 6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Stability,
    Safety,
    Invariance,
    Collect,
    CheckData,
}

impl Mode {
    fn name(self) -> &'static str {
        match self {
            Mode::Stability => "stability",
            Mode::Safety => "safety",
            Mode::Invariance => "invariance",
            Mode::Collect => "collect",
            Mode::CheckData => "check-data",
        }
    }
}

/// Everything a run needs. Parsed from the command line by the binary.
#[derive(Clone, Debug, Parser)]
#[command(
    name = "nncert",
    version,
    about = "Stability, safety and invariance certificates for NN-controlled systems from trajectory data",
    after_help = "Exit codes: 0 certified, 2 not certified, 1 usage or data error."
)]
pub struct RunConfig {
    #[arg(long, value_enum)]
    pub mode: Mode,

    /// Controller JSON.
    #[arg(long, value_name = "FILE")]
    pub nn: Option<PathBuf>,

    /// Trajectory CSV with columns u_*, x_*, x1_*.
    #[arg(long, value_name = "FILE")]
    pub data: Option<PathBuf>,

    /// Sets JSON (input_set, safe_set, invariant_set, horizon).
    #[arg(long, value_name = "FILE")]
    pub sets: Option<PathBuf>,

    /// Per-neuron sector overrides JSON.
    #[arg(long, value_name = "FILE")]
    pub sectors: Option<PathBuf>,

    /// Plant JSON `{a, b}`. Used by collect, or as the known model when no
    /// data is given.
    #[arg(long, value_name = "FILE")]
    pub plant: Option<PathBuf>,

    /// Bundled example supplying controller, plant, sets and data.
    #[arg(long, value_name = "NAME")]
    pub example: Option<String>,

    #[arg(long)]
    pub horizon: Option<usize>,

    #[arg(long, default_value = "trace-min", value_parser = parse_objective)]
    pub objective: Objective,

    /// Degree of the SOS multipliers in the reachability programs (0 or 2).
    #[arg(long)]
    pub mult_degree: Option<u32>,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Number of samples K when data is generated.
    #[arg(long)]
    pub samples: Option<usize>,

    /// Uniform state-noise amplitude added to the data. Exploratory only:
    /// the run is never reported as certified.
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,

    #[arg(long, default_value = "euler", value_parser = parse_integrator)]
    pub integrator: Integrator,

    #[arg(long, default_value = "nncert-out", value_name = "DIR")]
    pub out: PathBuf,

    /// Feasibility and gap tolerance of the interior-point solver.
    #[arg(long)]
    pub solver_tol: Option<f64>,

    /// Write the conic program(s) in SDPA sparse format. Reach modes use the
    /// path as a prefix and write one file per step and facet.
    #[arg(long, value_name = "FILE")]
    pub export_sdpa: Option<PathBuf>,

    #[arg(long, env = "NNCERT_SOLVER", default_value = "ipm", hide_env_values = true)]
    pub solver: String,
}

fn parse_objective(s: &str) -> std::result::Result<Objective, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_integrator(s: &str) -> std::result::Result<Integrator, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

impl RunConfig {
    /// Defaults for a mode; fields are public for everything else.
    pub fn new(mode: Mode, out: impl Into<PathBuf>) -> Self {
        Self {
            mode,
            nn: None,
            data: None,
            sets: None,
            sectors: None,
            plant: None,
            example: None,
            horizon: None,
            objective: Objective::default(),
            mult_degree: None,
            seed: 0,
            samples: None,
            noise: 0.0,
            integrator: Integrator::Euler,
            out: out.into(),
            solver_tol: None,
            export_sdpa: None,
            solver: "ipm".into(),
        }
    }

    fn settings(&self) -> Result<Settings> {
        if self.solver != "ipm" {
            return Err(Error::Unsupported(format!(
                "solver {:?} (only the embedded \"ipm\" is available)",
                self.solver
            )));
        }
        let mut s = Settings::default();
        if let Some(t) = self.solver_tol {
            if !(t > 0.0 && t < 1.0) {
                return Err(Error::Invalid(format!("solver tolerance {t} must lie in (0, 1)")));
            }
            s.feas_tol = t;
            s.gap_tol = t;
        }
        Ok(s)
    }
}

/// Library-level result of each mode.
#[derive(Clone, Debug)]
pub enum Report {
    Stability(Box<StabilityCertificate>),
    Safety(Box<ReachResult>),
    Invariance(Box<InvarianceResult>, Option<InvarianceSafety>),
    Collect(RankReport),
    CheckData(RankReport),
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub exit_code: i32,
    /// Short verdict word as written to verdict.json.
    pub verdict: String,
    pub summary: String,
    pub report: Report,
    /// Files written, relative to the output directory, in write order.
    pub files: Vec<String>,
}

/// Inputs after every file has been read and cross-checked.
struct Inputs {
    net: Option<NeuralNetwork>,
    sectors: Option<SectorData>,
    data: Option<TrajectoryData>,
    plant: Option<OraclePlant>,
    sets: ProblemSets,
    example: Option<ExampleSystem>,
    sources: BTreeMap<&'static str, String>,
}

impl Inputs {
    fn net(&self) -> Result<&NeuralNetwork> {
        self.net
            .as_ref()
            .ok_or_else(|| Error::Invalid("a controller is required (--nn or --example)".into()))
    }

    fn sectors(&self) -> &SectorData {
        self.sectors.as_ref().expect("set together with the controller")
    }

    fn dynamics(&self) -> Result<Dynamics<'_>> {
        match (&self.data, &self.plant) {
            (Some(d), _) => Ok(Dynamics::Data(d)),
            (None, Some(p)) => Ok(Dynamics::Model(p)),
            (None, None) => Err(Error::Invalid(
                "trajectory data or a plant is required (--data, --example or --plant)".into(),
            )),
        }
    }
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

fn default_samples(n_x: usize, n_u: usize) -> usize {
    (n_x + n_u).max(3) + 2
}

fn resolve(cfg: &RunConfig) -> Result<Inputs> {
    if !(cfg.noise >= 0.0 && cfg.noise.is_finite()) {
        return Err(Error::Invalid(format!("noise amplitude {} must be finite and >= 0", cfg.noise)));
    }
    let mut sources = BTreeMap::new();
    let example = cfg.example.as_deref().map(example).transpose()?;
    if let Some(ex) = &example {
        sources.insert("example", ex.name.to_string());
    }

    let net = match (&cfg.nn, &example) {
        (Some(p), _) => {
            sources.insert("nn", path_str(p));
            Some(NeuralNetwork::from_json_file(p).map_err(|e| in_file(p, e))?)
        }
        (None, Some(ex)) => Some(ex.controller.clone()),
        (None, None) => None,
    };
    let sectors = match &net {
        Some(n) => {
            let mut s = SectorData::default_for(n)?;
            if let Some(p) = &cfg.sectors {
                sources.insert("sectors", path_str(p));
                s.apply_overrides_file(p, n.activation()).map_err(|e| in_file(p, e))?;
            }
            Some(s)
        }
        None if cfg.sectors.is_some() => {
            return Err(Error::Invalid("--sectors needs a controller".into()));
        }
        None => None,
    };

    let plant = match (&cfg.plant, &example) {
        (Some(p), _) => {
            sources.insert("plant", path_str(p));
            Some(OraclePlant::from_json_file(p).map_err(|e| in_file(p, e))?)
        }
        (None, Some(ex)) => Some(ex.plant.clone()),
        (None, None) => None,
    };

    let mut data = match (&cfg.data, &example) {
        (Some(p), _) => {
            sources.insert("data", path_str(p));
            Some(TrajectoryData::from_csv_file(p).map_err(|e| in_file(p, e))?)
        }
        (None, Some(ex)) => {
            let k = cfg
                .samples
                .unwrap_or_else(|| default_samples(ex.plant.n_x(), ex.plant.n_u()));
            Some(ex.data(k, cfg.seed, cfg.integrator)?)
        }
        (None, None) if cfg.mode == Mode::Collect => match &plant {
            Some(p) => {
                let k = cfg.samples.unwrap_or_else(|| default_samples(p.n_x(), p.n_u()));
                Some(collect(p, k, &vec![(-1.0, 1.0); p.n_u()], &vec![(-1.0, 1.0); p.n_x()], cfg.seed)?)
            }
            None => None,
        },
        (None, None) => None,
    };
    if cfg.noise > 0.0 {
        data = data.map(|d| d.with_state_noise(cfg.noise, cfg.seed.wrapping_add(1)));
    }

    let mut sets = match (&cfg.sets, &example) {
        (Some(p), _) => {
            sources.insert("sets", path_str(p));
            ProblemSets::from_json_file(p).map_err(|e| in_file(p, e))?
        }
        (None, Some(ex)) => ex.sets.clone(),
        (None, None) => ProblemSets::default(),
    };
    if cfg.horizon.is_some() {
        sets.horizon = cfg.horizon;
    }
    if cfg.mult_degree.is_some() {
        sets.multiplier_degree = cfg.mult_degree;
    }

    if let Some(n) = &net {
        let dims = |nx: usize, nu: usize, what: &str| -> Result<()> {
            if nx != n.input_dim() || nu != n.output_dim() {
                return Err(Error::Dimension(format!(
                    "{what} has n_x = {nx}, n_u = {nu}; the controller maps {} states to {} inputs",
                    n.input_dim(),
                    n.output_dim()
                )));
            }
            Ok(())
        };
        if let Some(d) = &data {
            dims(d.n_x(), d.n_u(), "the data")?;
        }
        if let Some(p) = &plant {
            dims(p.n_x(), p.n_u(), "the plant")?;
        }
    }
    Ok(Inputs {
        net,
        sectors,
        data,
        plant,
        sets,
        example,
        sources,
    })
}

fn in_file(path: &Path, e: Error) -> Error {
    match e {
        Error::Io(io) => Error::Io(std::io::Error::new(io.kind(), format!("{}: {io}", path.display()))),
        Error::Json(j) => Error::Parse(format!("{}: {j}", path.display())),
        Error::Csv(c) => Error::Parse(format!("{}: {c}", path.display())),
        other => other,
    }
}

/// Single writer for the output directory.
struct OutDir {
    root: PathBuf,
    written: Vec<String>,
}

impl OutDir {
    fn create(root: &Path) -> Result<Self> {
        std::fs::create_dir_all(root)?;
        Ok(Self {
            root: root.to_path_buf(),
            written: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        std::fs::write(self.root.join(name), contents)?;
        self.written.push(name.to_string());
        Ok(())
    }
}

#[derive(Serialize)]
struct VerdictFile<'a> {
    mode: &'a str,
    verdict: &'a str,
    exit_code: i32,
    /// False when the data was perturbed with --noise.
    certifying: bool,
    summary: &'a str,
    inputs: &'a BTreeMap<&'static str, String>,
    settings: BTreeMap<&'static str, serde_json::Value>,
    metadata: Metadata,
}

#[derive(Serialize)]
struct Metadata {
    tool: &'static str,
    version: &'static str,
}

/// Runs the selected mode and writes its files under `cfg.out`.
pub fn run(cfg: &RunConfig) -> Result<RunOutcome> {
    let settings = cfg.settings()?;
    let inputs = resolve(cfg)?;
    let mut out = OutDir::create(&cfg.out)?;
    let mut report_txt = String::new();
    let (report, verdict, summary, mut exit_code) = match cfg.mode {
        Mode::Stability => stability(cfg, &inputs, settings.clone(), &mut out, &mut report_txt)?,
        Mode::Safety => safety(cfg, &inputs, settings.clone(), &mut out, &mut report_txt)?,
        Mode::Invariance => invariance(cfg, &inputs, settings.clone(), &mut out, &mut report_txt)?,
        Mode::Collect => collect_mode(&inputs, &mut out, &mut report_txt)?,
        Mode::CheckData => check_data(&inputs, &mut report_txt)?,
    };
    let certifying = cfg.noise == 0.0;
    let mut verdict = verdict;
    if !certifying && matches!(cfg.mode, Mode::Stability | Mode::Safety | Mode::Invariance) {
        exit_code = EXIT_NOT_CERTIFIED;
        verdict = format!("{verdict} (non-certifying: noisy data)");
        report_txt.push_str(
            "\nThe data was perturbed with --noise. Nothing above is a certificate.\n",
        );
    }

    let mut settings_json = BTreeMap::new();
    settings_json.insert("solver", serde_json::json!(cfg.solver));
    settings_json.insert("feas_tol", serde_json::json!(settings.feas_tol));
    settings_json.insert("gap_tol", serde_json::json!(settings.gap_tol));
    settings_json.insert("seed", serde_json::json!(cfg.seed));
    if cfg.noise > 0.0 {
        settings_json.insert("noise", serde_json::json!(cfg.noise));
    }
    match cfg.mode {
        Mode::Stability => {
            settings_json.insert("objective", serde_json::json!(cfg.objective.to_string()));
        }
        Mode::Safety | Mode::Invariance => {
            settings_json.insert("multiplier_degree", serde_json::json!(reach_options(&inputs, settings.clone()).multiplier_degree));
            if let Some(h) = inputs.sets.horizon.filter(|_| cfg.mode == Mode::Safety) {
                settings_json.insert("horizon", serde_json::json!(h));
            }
        }
        Mode::Collect | Mode::CheckData => {}
    }
    if let Some(d) = &inputs.data {
        settings_json.insert("samples", serde_json::json!(d.samples()));
    }
    let vf = VerdictFile {
        mode: cfg.mode.name(),
        verdict: &verdict,
        exit_code,
        certifying,
        summary: &summary,
        inputs: &inputs.sources,
        settings: settings_json,
        metadata: Metadata {
            tool: "nncert",
            version: env!("CARGO_PKG_VERSION"),
        },
    };
    out.write("report.txt", &report_txt)?;
    out.write("verdict.json", &(serde_json::to_string_pretty(&vf)? + "\n"))?;
    Ok(RunOutcome {
        exit_code,
        verdict,
        summary,
        report,
        files: out.written,
    })
}

type ModeResult = (Report, String, String, i32);

fn header(txt: &mut String, title: &str, inputs: &Inputs) {
    let _ = writeln!(txt, "nncert {title}");
    for (k, v) in &inputs.sources {
        let _ = writeln!(txt, "  {k}: {v}");
    }
    if let Some(d) = &inputs.data {
        let _ = writeln!(txt, "  samples: K = {} (n_x = {}, n_u = {})", d.samples(), d.n_x(), d.n_u());
    } else if inputs.plant.is_some() {
        let _ = writeln!(txt, "  dynamics: known plant (no data)");
    }
    txt.push('\n');
}

fn fmt_matrix(txt: &mut String, name: &str, m: &nalgebra::DMatrix<f64>) {
    let _ = writeln!(txt, "{name} =");
    for i in 0..m.nrows() {
        txt.push_str("  ");
        for j in 0..m.ncols() {
            let _ = write!(txt, "{:>14.6e}", m[(i, j)]);
        }
        txt.push('\n');
    }
}

fn stability(
    cfg: &RunConfig,
    inputs: &Inputs,
    settings: Settings,
    out: &mut OutDir,
    txt: &mut String,
) -> Result<ModeResult> {
    let net = inputs.net()?;
    let opts = StabilityOptions {
        objective: cfg.objective,
        settings,
        ..StabilityOptions::default()
    };
    let dynamics = inputs.dynamics()?;
    if let Some(path) = &cfg.export_sdpa {
        let (sp, _) = match dynamics {
            Dynamics::Data(d) => stability_program(net, inputs.sectors(), d, &opts)?,
            Dynamics::Model(p) => stability_program_model(net, inputs.sectors(), p, &opts)?,
        };
        write_program(path, &sp.program)?;
    }
    let cert = match dynamics {
        Dynamics::Data(d) => verify_stability(net, inputs.sectors(), d, &opts)?,
        Dynamics::Model(p) => verify_stability_model(net, inputs.sectors(), p, &opts)?,
    };
    out.write("certificate.json", &(cert.to_json_string()? + "\n"))?;

    header(txt, "stability", inputs);
    let certified = cert.verdict.is_certified();
    let _ = writeln!(txt, "verdict: {}", if certified { "certified" } else { "not certified" });
    let _ = writeln!(txt, "objective: {} = {:.6e}", cert.objective, cert.objective_value);
    let _ = writeln!(txt, "solver: {:?} ({})", cert.solver_status, cert.solver_message);
    let _ = writeln!(txt, "margin eps = {:.3e}, min eig(H) = {:.6e}", cert.epsilon, cert.min_eig_h);
    let _ = writeln!(
        txt,
        "max equality residual = {:.3e}, consistency residual = {:.3e}",
        cert.residuals.max_equality_residual, cert.consistency_residual
    );
    fmt_matrix(txt, "Q1", &cert.q1);

    let n = cert.q1.nrows();
    if certified && (2..=ROA_MAX_DIM).contains(&n) {
        let mut slices = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                let pts = roa_ellipsoid(&cert.q1, (i, j), ROA_POINTS)?;
                out.write(&format!("roa_{i}_{j}.csv"), &roa_csv(&pts, (i, j)))?;
                slices.push(((i, j), pts));
            }
        }
        out.write("roa.svg", &plot::roa_svg(&slices))?;
        let _ = writeln!(txt, "\nROA slices {{x : x' Q1^-1 x <= 1}} written for {} plane(s).", slices.len());
    }
    let summary = if certified {
        format!("stable: Q1 found with min eig(H) = {:.3e}", cert.min_eig_h)
    } else {
        format!("not certified: solver status {:?}", cert.solver_status)
    };
    let verdict = if certified { "certified" } else { "not_certified" };
    let code = if certified { EXIT_CERTIFIED } else { EXIT_NOT_CERTIFIED };
    Ok((Report::Stability(Box::new(cert)), verdict.into(), summary, code))
}

fn reach_options(inputs: &Inputs, settings: Settings) -> ReachOptions {
    let mut o = ReachOptions {
        settings,
        ..ReachOptions::default()
    };
    if let Some(d) = inputs.sets.multiplier_degree {
        o.multiplier_degree = d;
    }
    o
}

fn required<'a>(p: &'a Option<Polytope>, what: &str) -> Result<&'a Polytope> {
    p.as_ref()
        .ok_or_else(|| Error::Invalid(format!("the sets file has no {what}")))
}

fn export_reach(path: &Path, tag: &str, programs: Vec<crate::sdp::ConicProgram>) -> Result<()> {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "program".into());
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    for (i, p) in programs.iter().enumerate() {
        write_program(&dir.join(format!("{stem}_{tag}f{i}.dat-s")), p)?;
    }
    Ok(())
}

fn write_program(path: &Path, p: &crate::sdp::ConicProgram) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| in_file(dir, e.into()))?;
    }
    std::fs::write(path, write_sdpa(p)).map_err(|e| in_file(path, e.into()))
}

fn gamma_lines(txt: &mut String, gammas: &[Option<f64>], limits: &nalgebra::DVector<f64>) {
    for (i, (g, lim)) in gammas.iter().zip(limits.iter()).enumerate() {
        match g {
            Some(v) => {
                let ok = if *v <= *lim { "inside" } else { "OUTSIDE" };
                let _ = writeln!(txt, "  facet {i}: gamma = {v:.9e} (limit {lim:.6e}, {ok})");
            }
            None => {
                let _ = writeln!(txt, "  facet {i}: unbounded (limit {lim:.6e})");
            }
        }
    }
}

fn safety(
    cfg: &RunConfig,
    inputs: &Inputs,
    settings: Settings,
    out: &mut OutDir,
    txt: &mut String,
) -> Result<ModeResult> {
    let net = inputs.net()?;
    let input = required(&inputs.sets.input_set, "input_set")?;
    let safe = required(&inputs.sets.safe_set, "safe_set")?;
    let horizon = inputs
        .sets
        .horizon
        .ok_or_else(|| Error::Invalid("a horizon is required (--horizon or sets file)".into()))?;
    let opts = reach_options(inputs, settings);
    let dynamics = inputs.dynamics()?;
    let res = verify_safety(net, inputs.sectors(), dynamics, input, safe, horizon, &opts)?;
    if let Some(path) = &cfg.export_sdpa {
        let mut prev = input.clone();
        for st in &res.steps {
            let progs = step_programs(net, inputs.sectors(), dynamics, &prev, safe, &opts)?;
            export_reach(path, &format!("k{}_", st.step), progs)?;
            match st.gamma_vector() {
                Some(g) => prev = safe.with_offsets(g)?,
                None => break,
            }
        }
    }
    out.write("certificate.json", &(res.to_json_string()? + "\n"))?;
    out.write("gamma.csv", &res.gamma_csv())?;
    out.write("gamma.svg", &plot::gamma_svg(&res.gamma_table(), &safe.offsets))?;

    header(txt, "safety", inputs);
    let _ = writeln!(txt, "verdict: {}", res.verdict);
    let _ = writeln!(
        txt,
        "horizon T = {}, multiplier degree {}, safe through step {}",
        res.horizon, res.multiplier_degree, res.safe_through
    );
    for st in &res.steps {
        let _ = writeln!(txt, "step {}:", st.step);
        gamma_lines(txt, &st.gammas(), &safe.offsets);
    }
    if let Some(k) = res.unbounded_at {
        let _ = writeln!(txt, "no acceptable bound at step {k}; later steps were not computed");
    }
    let safe_v = res.verdict == SafetyVerdict::Safe;
    let summary = if safe_v {
        format!("safe for {} steps", res.horizon)
    } else {
        format!("not certified: bounds inside the safe set through step {} of {}", res.safe_through, res.horizon)
    };
    let verdict = if safe_v { "safe" } else { "not_certified" };
    let code = if safe_v { EXIT_CERTIFIED } else { EXIT_NOT_CERTIFIED };
    Ok((Report::Safety(Box::new(res)), verdict.into(), summary, code))
}

fn invariance(
    cfg: &RunConfig,
    inputs: &Inputs,
    settings: Settings,
    out: &mut OutDir,
    txt: &mut String,
) -> Result<ModeResult> {
    let net = inputs.net()?;
    let set = required(&inputs.sets.invariant_set, "invariant_set")?;
    let opts = reach_options(inputs, settings);
    let dynamics = inputs.dynamics()?;
    if let Some(path) = &cfg.export_sdpa {
        export_reach(path, "", step_programs(net, inputs.sectors(), dynamics, set, set, &opts)?)?;
    }
    let res = verify_invariance(net, inputs.sectors(), dynamics, set, &opts)?;
    let all_time = match (&inputs.sets.input_set, &inputs.sets.safe_set) {
        (Some(i), Some(s)) => Some(safety_via_invariance(i, set, s, &res)?),
        _ => None,
    };
    out.write("certificate.json", &(res.to_json_string()? + "\n"))?;
    let table = vec![res.step.gammas()];
    out.write("gamma.svg", &plot::gamma_svg(&table, &set.offsets))?;

    header(txt, "invariance", inputs);
    let _ = writeln!(txt, "verdict: {}", if res.invariant { "invariant" } else { "not certified" });
    let _ = writeln!(txt, "one step from the set onto its own facets:");
    gamma_lines(txt, &res.step.gammas(), &set.offsets);
    match &all_time {
        Some(InvarianceSafety::SafeForAllTime) => {
            let _ = writeln!(txt, "input set ⊆ invariant set ⊆ safe set: safe for all time");
        }
        Some(InvarianceSafety::NotCertified) => {
            let _ = writeln!(txt, "safety for all time: not certified");
        }
        Some(InvarianceSafety::NotApplicable(why)) => {
            let _ = writeln!(txt, "safety for all time: not applicable ({why})");
        }
        None => {}
    }
    let summary = match (res.invariant, &all_time) {
        (true, Some(InvarianceSafety::SafeForAllTime)) => "invariant; safe for all time".to_string(),
        (true, _) => "invariant".to_string(),
        (false, _) => "not certified: the one-step bound leaves the set".to_string(),
    };
    let verdict = if res.invariant { "invariant" } else { "not_certified" };
    let code = if res.invariant { EXIT_CERTIFIED } else { EXIT_NOT_CERTIFIED };
    Ok((Report::Invariance(Box::new(res), all_time), verdict.into(), summary, code))
}

fn rank_lines(txt: &mut String, r: &RankReport) {
    let _ = writeln!(txt, "{}", r.summary());
    let sv = |v: &[f64]| v.iter().map(|s| format!("{s:.3e}")).collect::<Vec<_>>().join(", ");
    let _ = writeln!(txt, "singular values of [U0;X0]: {}", sv(&r.singular_values_regressor));
    let _ = writeln!(txt, "singular values of X1: {}", sv(&r.singular_values_successor));
}

fn collect_mode(inputs: &Inputs, out: &mut OutDir, txt: &mut String) -> Result<ModeResult> {
    let data = inputs
        .data
        .as_ref()
        .ok_or_else(|| Error::Invalid("collect needs --example or --plant".into()))?;
    let mut buf = Vec::new();
    data.write_csv(&mut buf)?;
    out.write("data.csv", &String::from_utf8(buf).map_err(|e| Error::Parse(e.to_string()))?)?;
    if let Some(p) = &inputs.plant {
        out.write("plant.json", &(p.to_json_string()? + "\n"))?;
    }
    if let Some(ex) = &inputs.example {
        out.write("nn.json", &(ex.controller.to_json_string()? + "\n"))?;
        if ex.sets.input_set.is_some() || ex.sets.invariant_set.is_some() {
            out.write("sets.json", &(ex.sets.to_json_string()? + "\n"))?;
        }
    }
    let r = check_excitation(data);
    header(txt, "collect", inputs);
    if let Some(ex) = &inputs.example {
        let _ = writeln!(txt, "{}", ex.description);
    }
    rank_lines(txt, &r);
    let summary = format!("collected K = {} samples; {}", data.samples(), r.summary());
    Ok((Report::Collect(r), "collected".into(), summary, EXIT_CERTIFIED))
}

fn check_data(inputs: &Inputs, txt: &mut String) -> Result<ModeResult> {
    let data = inputs
        .data
        .as_ref()
        .ok_or_else(|| Error::Invalid("check-data needs --data or --example".into()))?;
    let r = check_excitation(data);
    header(txt, "check-data", inputs);
    rank_lines(txt, &r);
    let ok = r.representation_ok;
    let summary = if ok {
        format!("rank([U0;X0]) = {} = n_u + n_x", r.rank_regressor)
    } else {
        format!(
            "rank([U0;X0]) = {} < {} = n_u + n_x with K = {} samples; collect at least {} richer samples",
            r.rank_regressor, r.required_regressor, r.samples, r.required_regressor
        )
    };
    let _ = writeln!(txt, "\n{summary}");
    let (verdict, code) = if ok { ("pass", EXIT_CERTIFIED) } else { ("fail", EXIT_NOT_CERTIFIED) };
    Ok((Report::CheckData(r), verdict.into(), summary, code))
}

/// One-line JSON diagnostic for an error, as printed on stderr.
pub fn diagnostic(kind: &str, message: &str) -> String {
    serde_json::json!({ "error": { "kind": kind, "message": message } }).to_string()
}

/// Binary entry point: parses `args`, runs, prints a one-line summary and
/// returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cfg = match RunConfig::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return EXIT_CERTIFIED;
            }
            eprintln!("{}", diagnostic("usage", e.to_string().trim()));
            return EXIT_ERROR;
        }
    };
    match run(&cfg) {
        Ok(o) => {
            println!("{}: {}", o.verdict, o.summary);
            o.exit_code
        }
        Err(e) => {
            eprintln!("{}", diagnostic(e.kind(), &e.to_string()));
            EXIT_ERROR
        }
    }
}
