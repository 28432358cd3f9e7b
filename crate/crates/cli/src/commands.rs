use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ddrci::dataset::{build_data_matrices, build_lifted, DataMatrices, Trajectory};
use ddrci::sim::Experiment;
use ddrci::synthesis::{synthesize as run_synthesis, Algorithm, LmiVariant, RciSolution};
use ddrci::verify::verify_solution;
use ddrci::Error;
use rayon::prelude::*;
use serde_json::json;

use crate::config::{AlgorithmArg, LmiArg, Resolved, RunConfig};
use crate::{plot, CliError, Common};

/// Config, seed and hash after applying `RCI_SEED` and flag overrides.
pub struct Run {
    pub config: RunConfig,
    pub resolved: Resolved,
    pub hash: String,
}

impl Run {
    fn new(common: &Common, edit: impl FnOnce(&mut RunConfig)) -> Result<Self, CliError> {
        let mut config = RunConfig::load(common.config.as_deref())?;
        if let Ok(s) = std::env::var("RCI_SEED") {
            config.seed = s
                .trim()
                .parse()
                .map_err(|_| CliError::config(format!("RCI_SEED={s:?} is not an unsigned integer")))?;
        }
        if let Some(seed) = common.seed {
            config.seed = seed;
        }
        edit(&mut config);
        let resolved = config.resolve()?;
        let hash = config.hash();
        Ok(Self { config, resolved, hash })
    }

    fn seed(&self) -> u64 {
        self.config.seed
    }

    fn header(&self) -> Vec<String> {
        vec![format!("config_sha256: {}", self.hash), format!("seed: {}", self.seed())]
    }

    fn trajectory(&self) -> Result<Trajectory, CliError> {
        let model = self
            .resolved
            .model
            .as_ref()
            .ok_or_else(|| CliError::config("config has no system block to simulate"))?;
        let e = &self.config.experiment;
        let experiment = Experiment {
            model: model.clone(),
            dist: self.resolved.dist.clone(),
            horizon: e.horizon,
            input_amplitude: e.input_amplitude,
            x0: self.resolved.x0.clone(),
        };
        experiment.run(self.seed()).map_err(|e| CliError::config(e.to_string()))
    }

    /// Data from `flag`, the config path, or a fresh simulation.
    fn data(&self, flag: Option<PathBuf>) -> Result<(DataMatrices, String), CliError> {
        let (traj, origin) = match flag.or_else(|| self.config.paths.data.clone()) {
            Some(path) => {
                let text = read(&path)?;
                let traj = Trajectory::from_csv(&text)
                    .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
                (traj, path.display().to_string())
            }
            None => (self.trajectory()?, "generated".to_string()),
        };
        if traj.state_dim() != self.resolved.template.ncols() || traj.input_dim() != self.resolved.cons.g.ncols() {
            return Err(CliError::config(format!(
                "data has n = {}, m = {}; config expects n = {}, m = {}",
                traj.state_dim(),
                traj.input_dim(),
                self.resolved.template.ncols(),
                self.resolved.cons.g.ncols()
            )));
        }
        let data = build_data_matrices(&traj).map_err(|e| CliError::config(e.to_string()))?;
        Ok((data, origin))
    }

    fn synthesize(&self, data: &DataMatrices, p: &nalgebra::DMatrix<f64>, origin: &str) -> Result<RciSolution, CliError> {
        let r = &self.resolved;
        let mut sol = run_synthesis(data, &r.dist, &r.cons, p, &self.config.synthesis_options()).map_err(|e| match e {
            Error::SynthesisInfeasible(_) | Error::InfeasibleModelSet | Error::Solver(_) | Error::SingularW { .. } => {
                CliError::infeasible(e.to_string())
            }
            other => CliError::config(other.to_string()),
        })?;
        sol.meta.insert("config_sha256".into(), self.hash.clone());
        sol.meta.insert("seed".into(), self.seed().to_string());
        sol.meta.insert("data".into(), origin.to_string());
        Ok(sol)
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::config(format!("cannot create {}: {e}", dir.display())))?;
    }
    std::fs::write(path, text).map_err(|e| CliError::config(format!("cannot write {}: {e}", path.display())))
}

fn output(flag: Option<PathBuf>, configured: Option<PathBuf>, what: &str) -> Result<PathBuf, CliError> {
    flag.or(configured)
        .ok_or_else(|| CliError::config(format!("no output path for the {what}; pass --out or set it in the config")))
}

fn load_solution(path: &Path) -> Result<RciSolution, CliError> {
    RciSolution::from_json(&read(path)?).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}

fn summary(sol: &RciSolution) -> String {
    format!("status {:?}, volume {:.6}, K = {:?}", sol.status, sol.volume, sol.k.iter().collect::<Vec<_>>())
}

pub fn generate(common: &Common, out: Option<PathBuf>) -> Result<(), CliError> {
    let run = Run::new(common, |_| {})?;
    let path = output(out, run.config.paths.data.clone(), "trajectory")?;
    let traj = run.trajectory()?;
    write(&path, &traj.to_csv(&run.header()))?;
    println!("wrote {} ({} samples)", path.display(), traj.horizon());
    Ok(())
}

pub fn synthesize(
    common: &Common,
    data: Option<PathBuf>,
    out: Option<PathBuf>,
    algorithm: Option<AlgorithmArg>,
    lmi: Option<LmiArg>,
    iters: Option<usize>,
) -> Result<(), CliError> {
    let run = Run::new(common, |c| {
        if let Some(a) = algorithm {
            c.synthesis.algorithm = a;
        }
        if let Some(l) = lmi {
            c.synthesis.lmi = l;
        }
        if let Some(i) = iters {
            c.synthesis.iters = i;
        }
    })?;
    let path = output(out, run.config.paths.solution.clone(), "solution")?;
    let (data, origin) = run.data(data)?;
    let sol = run.synthesize(&data, &run.resolved.template, &origin)?;
    write(&path, &sol.to_json().map_err(|e| CliError::config(e.to_string()))?)?;
    for w in &sol.warnings {
        eprintln!("warning: {w}");
    }
    println!("wrote {}: {}", path.display(), summary(&sol));
    if sol.status != ddrci::sdp::SolveStatus::Optimal {
        return Err(CliError::infeasible(format!("solver finished with status {:?}", sol.status)));
    }
    Ok(())
}

pub fn verify(
    common: &Common,
    solution: Option<PathBuf>,
    data: Option<PathBuf>,
    out: Option<PathBuf>,
) -> Result<(), CliError> {
    let run = Run::new(common, |_| {})?;
    let sol_path = solution
        .or_else(|| run.config.paths.solution.clone())
        .ok_or_else(|| CliError::config("no solution file; pass --solution"))?;
    let sol = load_solution(&sol_path)?;
    let r = &run.resolved;
    if sol.p.ncols() != r.template.ncols() || sol.n.nrows() != r.cons.g.ncols() {
        return Err(CliError::config("solution dimensions do not match the config"));
    }
    let (data, origin) = run.data(data)?;
    let lift = build_lifted(&data, &r.dist).map_err(|e| CliError::verify(format!("feasible model set: {e}")))?;
    let report = verify_solution(&sol, &lift, &r.cons, &r.dist, r.model.as_ref(), &run.config.verify_options())
        .map_err(|e| CliError::verify(format!("verification could not run: {e}")))?;
    let failures = report.failures();
    let doc = json!({
        "config_sha256": run.hash,
        "seed": run.seed(),
        "solution": sol_path.display().to_string(),
        "data": origin,
        "pass": failures.is_empty(),
        "failures": failures,
        "report": report,
    });
    let text = serde_json::to_string_pretty(&doc).expect("report serializes");
    match out.or_else(|| run.config.paths.report_dir.as_ref().map(|d| d.join("verification.json"))) {
        Some(path) => {
            write(&path, &text)?;
            println!("wrote {}", path.display());
        }
        None => println!("{text}"),
    }
    if failures.is_empty() {
        println!("all checks passed");
        Ok(())
    } else {
        Err(CliError::verify(format!("failed checks: {}", failures.join(", "))))
    }
}

fn volume_table(run: &Run, rows: &[(String, RciSolution)]) -> String {
    let mut out = String::new();
    for h in run.header() {
        let _ = writeln!(out, "# {h}");
    }
    out.push_str("solution,complexity,algorithm,lmi,status,volume\n");
    for (name, s) in rows {
        let alg = match s.algorithm {
            Algorithm::OneStep => "one-step",
            Algorithm::Iterative => "iterative",
        };
        let lmi = match s.lmi_variant {
            LmiVariant::Theorem1 => "t1",
            LmiVariant::Theorem2 => "t2",
        };
        let _ = writeln!(out, "{name},{},{alg},{lmi},{:?},{:.17e}", s.p.nrows(), s.status, s.volume);
    }
    out
}

pub fn report(
    common: &Common,
    solutions: &[PathBuf],
    plot_path: Option<PathBuf>,
    csv: Option<PathBuf>,
    steps: usize,
) -> Result<(), CliError> {
    if solutions.is_empty() {
        return Err(CliError::config("no solution files given"));
    }
    let run = Run::new(common, |_| {})?;
    let loaded = solutions
        .iter()
        .map(|p| Ok((p.display().to_string(), load_solution(p)?)))
        .collect::<Result<Vec<_>, CliError>>()?;
    let report_dir = run.config.paths.report_dir.clone();
    let csv_path = csv
        .or_else(|| plot_path.as_ref().map(|p| p.with_extension("csv")))
        .or_else(|| report_dir.as_ref().map(|d| d.join("volumes.csv")))
        .ok_or_else(|| CliError::config("no output path; pass --plot or --csv"))?;
    write(&csv_path, &volume_table(&run, &loaded))?;
    println!("wrote {}", csv_path.display());
    if let Some(path) = plot_path {
        let r = &run.resolved;
        let model = r.model.as_ref().ok_or_else(|| CliError::config("plots need the system block for rollouts"))?;
        let layers = loaded
            .par_iter()
            .enumerate()
            .map(|(i, (_, s))| plot::Layer::build(s, model, &r.cons, &r.dist, steps, run.seed(), i))
            .collect::<Result<Vec<_>, _>>()?;
        let svg = plot::render(&layers, &r.cons, &run.header())?;
        write(&path, &svg)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

pub fn sweep(common: &Common, data: Option<PathBuf>, out_dir: Option<PathBuf>) -> Result<(), CliError> {
    let run = Run::new(common, |_| {})?;
    let dir = output(out_dir, run.config.paths.report_dir.clone(), "sweep")?;
    if run.resolved.sweep.is_empty() {
        return Err(CliError::config("sweep list is empty"));
    }
    let (data, origin) = run.data(data)?;
    let results: Vec<_> = run
        .resolved
        .sweep
        .par_iter()
        .map(|p| (p.nrows(), run.synthesize(&data, p, &origin)))
        .collect();
    let mut rows = Vec::new();
    let mut failed = Vec::new();
    for (np, res) in results {
        let name = format!("solution_p{np}.json");
        match res {
            Ok(sol) => {
                write(&dir.join(&name), &sol.to_json().map_err(|e| CliError::config(e.to_string()))?)?;
                println!("n_p = {np}: {}", summary(&sol));
                if sol.status != ddrci::sdp::SolveStatus::Optimal {
                    failed.push(np);
                }
                rows.push((name, sol));
            }
            Err(e) => {
                eprintln!("n_p = {np}: {}", e.msg);
                failed.push(np);
            }
        }
    }
    write(&dir.join("volumes.csv"), &volume_table(&run, &rows))?;
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::infeasible(format!("no optimal solution for n_p in {failed:?}")))
    }
}
