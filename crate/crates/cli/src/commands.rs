use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use log::{info, warn};

use owlset::data::{read_covariates, read_rows_from_path, validate_dataset, MissingPropensity, TrialDataset};
use owlset::evaluate::{empirical_value, empirical_weighted_outcome, tune, write_score_table, TuneGrid};
use owlset::kernel::KernelChoice;
use owlset::recommend::{fit_propensity, method_registry, transform_outcome, write_predictions, FittedRule, Method, MethodConfig};
use owlset::simulate::{run_study, write_points_csv, write_study_csv, ScenarioSpec, STUDY_METHODS};

use crate::artifact::{Artifact, Tuning};
use crate::config::{parse_noise, Resolved, Shared, SimFlags};
use crate::CliError;

fn output(path: Option<&Path>) -> Result<Box<dyn Write>, CliError> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).map_err(|e| CliError::data(format!("cannot create {}: {e}", p.display())))?,
        )),
        None => Box::new(BufWriter::new(std::io::stdout())),
    })
}

fn method_setup(r: &Resolved) -> Result<(Box<dyn Method>, MethodConfig), CliError> {
    let method = method_registry().build(&r.method).map_err(CliError::config_from)?;
    let cfg = MethodConfig {
        c: r.c,
        loss: r.loss.clone(),
        kernel: KernelChoice::parse(&r.kernel).map_err(CliError::config_from)?,
        lambda: r.lambda,
        delta: r.delta,
        solver: r.solver.clone(),
        ..MethodConfig::default()
    };
    method.loss(&cfg).map_err(CliError::config_from)?;
    if let Some(s) = &cfg.solver {
        owlset::solver::solver_registry().build(s).map_err(CliError::config_from)?;
    }
    Ok((method, cfg))
}

/// Reads and validates a dataset, then resolves propensities and the
/// optional outcome transform.
fn load_dataset(path: &Path, r: &Resolved) -> Result<TrialDataset, CliError> {
    let rows = read_rows_from_path(path)?;
    let missing = match r.propensity.as_str() {
        "column" => MissingPropensity::Reject,
        _ => MissingPropensity::Uniform,
    };
    let mut ds = validate_dataset(&rows, r.k, missing)?;
    let n = ds.n();
    match r.propensity.as_str() {
        "uniform" => ds = ds.with_propensities(vec![1.0 / ds.k() as f64; n])?,
        "fit-logistic" => {
            let model = fit_propensity(ds.features(), ds.treatments(), ds.k())?;
            let props = (0..n)
                .map(|i| model.weight_denominator(ds.x(i), ds.treatment(i)))
                .collect::<owlset::error::Result<Vec<_>>>()?;
            ds = ds.with_propensities(props)?;
        }
        _ => {}
    }
    if r.transform_outcome {
        let y = transform_outcome(ds.outcomes(), ds.features())?;
        ds = ds.with_outcomes(y)?;
    }
    info!("loaded {} rows, p = {}, k = {}", ds.n(), ds.p(), ds.k());
    Ok(ds)
}

fn warn_unconverged(rule: &FittedRule) {
    if let Some(rep) = rule.solver_report().filter(|r| !r.converged) {
        warn!("{} stopped at its iteration limit after {} iterations; the model may be inaccurate", rep.solver, rep.iterations);
    }
}

pub fn fit(data: PathBuf, out: PathBuf, shared: Shared) -> Result<(), CliError> {
    let r = Resolved::from_shared(shared, Some(data.clone()))?;
    let (method, cfg) = method_setup(&r)?;
    let ds = load_dataset(&data, &r)?;
    let rule = method.fit(&ds, &cfg)?;
    if let Some(rep) = rule.solver_report() {
        info!(
            "{} finished: objective {} after {} iterations (converged: {})",
            rep.solver, rep.objective, rep.iterations, rep.converged
        );
    }
    warn_unconverged(&rule);
    Artifact::new(&rule, r, None).write(&out)
}

pub fn tune_cmd(data: PathBuf, out: PathBuf, scores: Option<PathBuf>, shared: Shared) -> Result<(), CliError> {
    let r = Resolved::from_shared(shared, Some(data.clone()))?;
    let (method, cfg) = method_setup(&r)?;
    let ds = load_dataset(&data, &r)?;
    let grid = TuneGrid {
        lambdas: r.lambda_grid.clone(),
        deltas: r.delta_grid.clone(),
        folds: r.fold_mode(),
    };
    let res = tune(&ds, method.as_ref(), &cfg, &grid, r.seed)?;
    info!("selected lambda {} delta {:?}", res.lambda, res.delta);
    warn_unconverged(&res.rule);
    if let Some(path) = scores {
        write_score_table(&res.scores, output(Some(&path))?)?;
    }
    let tuning = Tuning {
        lambda: res.lambda,
        delta: res.delta,
        mode: res.mode.label(),
    };
    let mut resolved = r;
    resolved.lambda = res.lambda;
    if let Some(d) = res.delta {
        resolved.delta = d;
    }
    Artifact::new(&res.rule, resolved, Some(tuning)).write(&out)
}

pub fn predict(model: PathBuf, data: PathBuf, out: Option<PathBuf>, delta: Option<f64>) -> Result<(), CliError> {
    let art = Artifact::read(&model)?;
    let mut rule = art.rule()?;
    if let Some(d) = delta {
        if art.method != "one-step" {
            return Err(CliError::config("--delta applies only to one-step models"));
        }
        rule = rule.with_delta(d);
    }
    let file = File::open(&data).map_err(|e| CliError::data(format!("cannot read {}: {e}", data.display())))?;
    let x = read_covariates(std::io::BufReader::new(file))?;
    if x.ncols() != art.p() {
        return Err(CliError::data(format!(
            "data has {} covariates, model expects {}",
            x.ncols(),
            art.p()
        )));
    }
    let mut header = vec![
        format!("model: {}", model.display()),
        format!("method: {}", art.method),
        format!("c: {}", art.c),
    ];
    if let owlset::recommend::FittedRule::OneStep { delta, .. } = &rule {
        header.push(format!("delta: {delta}"));
    }
    header.push(format!(
        "config: {}",
        serde_json::to_string(&art.config).map_err(|e| CliError::numerical(e.to_string()))?
    ));
    let mut w = output(out.as_deref())?;
    write_predictions(&mut w, &rule, &x, &header)?;
    w.flush().map_err(|e| CliError::data(e.to_string()))
}

pub fn evaluate(model: PathBuf, data: PathBuf, out: Option<PathBuf>, shared: Shared) -> Result<(), CliError> {
    let art = Artifact::read(&model)?;
    let rule = art.rule()?;
    let mut r = Resolved::from_shared(shared, Some(data.clone()))?;
    r.method = art.method.clone();
    let ds = load_dataset(&data, &r)?;
    if ds.p() != art.p() {
        return Err(CliError::data(format!("data has {} covariates, model expects {}", ds.p(), art.p())));
    }
    let scores = rule.scores_batch(ds.features())?;
    let itr: Vec<usize> = scores.iter().map(|s| rule.itr_from_scores(s)).collect();
    let sets = scores
        .iter()
        .map(|s| rule.recommend_from_scores(s))
        .collect::<owlset::error::Result<Vec<_>>>()?;
    let value = empirical_value(&ds, &itr)?;
    let weighted = empirical_weighted_outcome(&ds, &sets, art.c)?;
    let mut w = output(out.as_deref())?;
    let io = |e: std::io::Error| CliError::data(e.to_string());
    writeln!(w, "# model: {}", model.display()).map_err(io)?;
    writeln!(w, "# data: {}", data.display()).map_err(io)?;
    writeln!(w, "# propensity: {}", r.propensity).map_err(io)?;
    writeln!(w, "# transform_outcome: {}", r.transform_outcome).map_err(io)?;
    writeln!(w, "metric,value").map_err(io)?;
    writeln!(w, "rows,{}", ds.n()).map_err(io)?;
    writeln!(w, "empirical_value,{value}").map_err(io)?;
    writeln!(w, "empirical_weighted_outcome,{weighted}").map_err(io)?;
    w.flush().map_err(io)
}

pub fn simulate(out: Option<PathBuf>, points: Option<PathBuf>, shared: Shared, sim: SimFlags) -> Result<(), CliError> {
    if shared.method.is_some() || shared.lambda.is_some() || shared.delta.is_some() {
        return Err(CliError::config("simulate tunes every method; use --methods and the grid options"));
    }
    let example = sim.example.unwrap_or(1);
    let mut spec = ScenarioSpec::new(example, sim.p.unwrap_or(5));
    if let Some(v) = sim.n_train {
        spec.n_train = v;
    }
    if let Some(v) = sim.n_test {
        spec.n_test = v;
    }
    if let Some(v) = sim.reps {
        spec.replications = v;
    }
    if let Some(v) = shared.seed {
        spec.seed = v;
    }
    if let Some(v) = shared.c {
        spec.c = v;
    }
    if let Some(v) = &sim.noise_convention {
        spec.noise = parse_noise(v)?;
    }
    if let Some(v) = &shared.folds {
        spec.folds = crate::config::parse_folds(v)?;
    }
    if let Some(g) = &shared.lambda_grid {
        spec.lambdas = Some(crate::config::parse_lambda_grid(g)?);
    }
    if let Some(g) = &shared.delta_grid {
        spec.deltas = crate::config::parse_delta_grid(g)?;
    }
    spec.two_step_kernel = sim.two_step_kernel.or(spec.two_step_kernel);
    spec.one_step_kernel = sim.one_step_kernel.or(spec.one_step_kernel);
    if let Some(v) = sim.plugin_kernel {
        spec.plugin_kernel = v;
    }
    if let Some(v) = sim.max_sweeps {
        spec.max_sweeps = v;
    }
    spec.validate().map_err(CliError::config_from)?;
    for token in [spec.two_step_kernel(), spec.one_step_kernel(), spec.plugin_kernel.clone()] {
        KernelChoice::parse(&token).map_err(CliError::config_from)?;
    }
    let methods: Vec<String> = match &sim.methods {
        Some(m) => m.split(',').map(|s| s.trim().to_string()).collect(),
        None => STUDY_METHODS.iter().map(|s| s.to_string()).collect(),
    };
    let names: Vec<&str> = methods.iter().map(String::as_str).collect();
    if let Some(bad) = names.iter().find(|m| !STUDY_METHODS.contains(m)) {
        return Err(CliError::config(format!(
            "unknown study method '{bad}' (known: {})",
            STUDY_METHODS.join(", ")
        )));
    }
    let report = run_study(&spec, &names)?;
    if let Some(path) = points {
        write_points_csv(&report, output(Some(&path))?)?;
    }
    let mut w = output(out.as_deref())?;
    write_study_csv(&report, &mut w)?;
    w.flush().map_err(|e| CliError::data(e.to_string()))
}
