use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use meanfield::dynamics::check_growth_bounds;
use meanfield::lyapunov::MonotoneTolerance;
use meanfield::measures::fmt_f64;
use meanfield::{
    check_monotone, integrate_ensemble, lyap_value, mean_dynamics_matrix, quadratic_form, stability_probe,
    tangent_basis, IntegrationSettings, ProbeSettings,
};
use serde::Serialize;
use serde_json::json;

use crate::config::{ExperimentConfig, Format};
use crate::{CliError, RunArgs, EXIT_CRITERION_FAIL, EXIT_OK};

struct Run {
    config: ExperimentConfig,
    seed: u64,
    out: PathBuf,
    written: Vec<String>,
}

impl Run {
    fn start(args: &RunArgs) -> Result<Self, CliError> {
        let mut config = ExperimentConfig::load(&args.config)?;
        if let Some(seed) = args.seed {
            config.simulation.seed = seed;
        }
        if let Some(out) = &args.out {
            config.output.directory = out.clone();
        }
        let out = config.output.directory.clone();
        std::fs::create_dir_all(&out)
            .map_err(|e| CliError::Io(format!("cannot create {}: {e}", out.display())))?;
        Ok(Self { seed: config.simulation.seed, config, out, written: Vec::new() })
    }

    fn create(&mut self, name: &str) -> Result<BufWriter<File>, CliError> {
        let path = self.out.join(name);
        let file = File::create(&path).map_err(|e| io_error(&path, e))?;
        self.written.push(name.to_string());
        Ok(BufWriter::new(file))
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let path = self.out.join(name);
        let mut w = self.create(name)?;
        serde_json::to_writer_pretty(&mut w, value).map_err(|e| CliError::Io(e.to_string()))?;
        writeln!(w).and_then(|()| w.flush()).map_err(|e| io_error(&path, e))
    }

    fn wants(&self, format: Format) -> bool {
        self.config.output.formats.contains(&format)
    }

    fn finish(mut self, command: &str, extra: serde_json::Value) -> Result<(), CliError> {
        let timestamp = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        let manifest = json!({
            "command": command,
            "config": self.config,
            "seed": self.seed,
            "versions": {
                "meanfield": meanfield::VERSION,
                "meanfield-cli": env!("CARGO_PKG_VERSION"),
            },
            "files": self.written,
            "results": extra,
            "timestamp": timestamp,
        });
        self.write_json("manifest.json", &manifest)
    }
}

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

pub fn simulate(args: &RunArgs) -> Result<i32, CliError> {
    let mut run = Run::start(args)?;
    let cfg = &run.config;
    let spec_f = cfg.field()?;
    let m0 = cfg.initial_cloud(run.seed)?;
    let lyapunov = cfg.lyapunov_spec(run.seed)?;
    let sim = &cfg.simulation;
    let settings = IntegrationSettings::new(sim.t_final, sim.dt, sim.integrator).record_every(sim.record_every);

    let traj = integrate_ensemble(&spec_f, &m0, &settings)?;
    log::info!("integrated {} snapshots", traj.len());

    let descent = match (&lyapunov, &cfg.lyapunov) {
        (Some(spec), Some(lc)) => {
            let phi0 = lyap_value(spec, &m0)?;
            let tol = MonotoneTolerance { c1_factor: lc.tolerance_c1, c2_factor: lc.tolerance_c2 }
                .resolve(&spec_f, phi0, sim.dt, m0.len());
            Some(check_monotone(&traj, &spec_f, spec, tol)?)
        }
        _ => None,
    };
    let growth = check_growth_bounds(&traj, &spec_f)?;

    if run.wants(Format::Csv) {
        let extra: Vec<(&str, &[f64])> = descent.iter().map(|d| ("lyapunov", d.values.as_slice())).collect();
        traj.write_summary_csv(run.create("summary.csv")?, &extra)?;
        traj.write_csv(run.create("trajectory.csv")?)?;
    }
    if run.wants(Format::Json) {
        if let Some(d) = &descent {
            run.write_json("descent.json", d)?;
        }
        run.write_json("growth.json", &growth)?;
    }

    let results = json!({
        "snapshots": traj.len(),
        "descent_passed": descent.as_ref().map(|d| d.passed),
        "growth_passed": growth.passed,
    });
    println!(
        "simulate: {} snapshots to t = {}{}",
        traj.len(),
        traj.duration(),
        descent.as_ref().map(|d| format!(", lyapunov descent {}", verdict(d.passed))).unwrap_or_default()
    );
    run.finish("simulate", results)?;
    Ok(EXIT_OK)
}

pub fn probe(args: &RunArgs) -> Result<i32, CliError> {
    let mut run = Run::start(args)?;
    let cfg = &run.config;
    let probe = cfg
        .probe
        .clone()
        .ok_or_else(|| CliError::Config("probe command needs a probe block".into()))?;
    let spec_f = cfg.field()?;
    let m_hat = cfg.equilibrium(run.seed)?;
    let sim = &cfg.simulation;
    let mut settings = ProbeSettings::new(probe.epsilon, probe.delta, probe.samples, sim.t_final, sim.dt, run.seed)
        .eval_every(probe.eval_every);
    settings.method = sim.integrator;

    let report = stability_probe(&spec_f, &m_hat, &settings)?;
    println!(
        "probe: sup W2 = {} over {} samples, escaped = {} ({} samples)",
        fmt_f64(report.sup_w2),
        probe.samples,
        report.escaped,
        report.escaped_count
    );
    run.write_json("probe.json", &report)?;
    let results = json!({ "escaped": report.escaped, "sup_w2": report.sup_w2 });
    run.finish("probe", results)?;
    Ok(EXIT_OK)
}

pub fn criterion(args: &RunArgs) -> Result<i32, CliError> {
    let mut run = Run::start(args)?;
    let cfg = &run.config;
    let (a, b) = cfg.linear_parts()?;
    let m_hat = cfg.equilibrium(run.seed)?;
    let (degree, tol) = cfg.criterion.as_ref().map(|c| (c.basis_degree, c.tol)).unwrap_or((2, None));
    let basis = tangent_basis(cfg.dim(), degree)?;
    let report = quadratic_form(&a, &b, &m_hat, &basis, tol)?;
    let mean = mean_dynamics_matrix(&a, &b)?;

    println!(
        "criterion: max eigenvalue {} (tol {}), verdict {}",
        fmt_f64(report.max_eigenvalue),
        fmt_f64(report.tol),
        verdict(report.passed)
    );
    let passed = report.passed;
    run.write_json("criterion.json", &json!({ "quadratic_form": report, "mean_dynamics": mean }))?;
    run.finish("criterion", json!({ "passed": passed }))?;
    Ok(if passed { EXIT_OK } else { EXIT_CRITERION_FAIL })
}

fn verdict(passed: bool) -> &'static str {
    if passed {
        "pass"
    } else {
        "fail"
    }
}
