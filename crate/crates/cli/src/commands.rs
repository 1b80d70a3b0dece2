use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use qpflow::activation::{beta_for_spin, beta_table, fit_beta, ActivationCurve, BetaFit};
use qpflow::dataset::{Dataset, SampleRecord, ScalerKind, ScalerPair};
use qpflow::grid::{builtin_4bus, load_network, NetworkModel};
use qpflow::nn::{
    epoch_log_csv, load_model, mape, save_model, train, Hyperparams, LayerTopology, MLPParams,
    OptimizerKind, TrainReport, TrainingSet,
};
use qpflow::par::Execution;
use qpflow::powerflow::{self, PowerFlowSolution};
use qpflow::qsim::{transfer_curve, CollisionParams, TransferConfig};
use qpflow::Error;

use crate::config::{
    parse_mode, parse_scaler, usage, ActivationSettings, DatasetSettings, EvaluateSettings,
    FileConfig, HyperSettings, Resolved, SolveSettings, SweepSettings, TrainSettings,
    DEFAULT_OUT_DIR, DEFAULT_SEED,
};
use crate::{ActivationCommand, Cli, Command};

struct Ctx {
    seed: u64,
    out_dir: PathBuf,
    exec: Execution,
}

impl Ctx {
    fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    fn write(&self, name: &str, contents: &str) -> anyhow::Result<PathBuf> {
        std::fs::create_dir_all(&self.out_dir).map_err(|e| Error::io(&self.out_dir, e))?;
        let path = self.path(name);
        std::fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    fn write_json(&self, name: &str, value: &impl Serialize) -> anyhow::Result<PathBuf> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, &text)
    }

    fn snapshot<T: Serialize>(
        &self,
        command: &str,
        settings: &T,
        hyperparams: Option<&Hyperparams>,
    ) -> anyhow::Result<()> {
        let resolved = Resolved {
            command,
            seed: self.seed,
            out_dir: &self.out_dir,
            settings,
            hyperparams,
        };
        self.write_json(
            &format!("resolved_{}.json", command.replace(' ', "_")),
            &resolved,
        )?;
        Ok(())
    }
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    let file = FileConfig::load(cli.config.as_deref())?;
    let ctx = Ctx {
        seed: cli.seed.or(file.seed()?).unwrap_or(DEFAULT_SEED),
        out_dir: cli
            .out_dir
            .or_else(|| file.out_dir())
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR)),
        exec: if cli.serial {
            Execution::Serial
        } else {
            Execution::Parallel
        },
    };
    match cli.command {
        Command::Solve(a) => {
            let mut s: SolveSettings = file.section("solve")?;
            if a.network.is_some() {
                s.network = a.network;
            }
            if let Some(t) = a.tol {
                s.options.tol = t;
            }
            if let Some(m) = a.max_iter {
                s.options.max_iter = m;
            }
            if a.from_records {
                s.options.flat_start = false;
            }
            cmd_solve(&ctx, &s)
        }
        Command::Dataset(a) => {
            let mut s: DatasetSettings = file.section("dataset")?;
            if a.network.is_some() {
                s.network = a.network;
            }
            if let Some(n) = a.n {
                s.n = n;
            }
            if let Some(r) = a.range {
                if r.len() != 2 {
                    return Err(usage("--range takes two values, `low,high`"));
                }
                s.generate.range = qpflow::dataset::LoadRange::new(r[0], r[1])?;
            }
            if let Some(r) = a.split {
                s.generate.split_ratio = r;
            }
            if let Some(k) = &a.scaler {
                s.scaler = parse_scaler(k)?;
            }
            s.generate.coupled |= a.coupled;
            s.generate.perturb_all_loads |= a.perturb_all_loads;
            cmd_dataset(&ctx, &s)
        }
        Command::Activation(ActivationCommand::Simulate(a)) => {
            let mut s: ActivationSettings = file.section("activation")?;
            if let Some(v) = a.spin {
                s.spins = v;
            }
            if let Some(v) = a.g {
                s.g = v;
            }
            if let Some(v) = a.tau {
                s.tau = v;
            }
            if let Some(v) = a.gamma {
                s.gamma = v;
            }
            if let Some(v) = a.points {
                s.n_points = v;
            }
            if let Some(v) = a.collisions {
                s.n_collisions = v;
            }
            if let Some(m) = &a.mode {
                s.mode = parse_mode(m)?;
            }
            s.random_schedule |= a.random_schedule;
            cmd_activation_simulate(&ctx, &s)
        }
        Command::Activation(ActivationCommand::Fit(a)) => cmd_activation_fit(&ctx, &a.curve),
        Command::Train(a) => {
            let mut s: TrainSettings = file.section("train")?;
            if a.dataset.is_some() {
                s.dataset = a.dataset;
            }
            if a.beta.is_some() {
                s.beta = a.beta;
                s.spin = None;
            }
            if a.spin.is_some() {
                s.spin = a.spin;
                s.beta = None;
            }
            s.hyper.apply_args(&a.hyper)?;
            cmd_train(&ctx, s)
        }
        Command::Evaluate(a) => {
            let mut s: EvaluateSettings = file.section("evaluate")?;
            if a.model.is_some() {
                s.model = a.model;
            }
            if a.dataset.is_some() {
                s.dataset = a.dataset;
            }
            if let Some(v) = a.split {
                s.split = v;
            }
            cmd_evaluate(&ctx, &s)
        }
        Command::Sweep(a) => {
            let mut s: SweepSettings = file.section("sweep")?;
            if a.dataset.is_some() {
                s.dataset = a.dataset;
            }
            if let Some(v) = a.betas {
                s.betas = v;
            }
            if let Some(v) = a.optimizers {
                s.optimizers = v;
            }
            if let Some(v) = a.seeds {
                s.seeds = v;
            }
            s.hyper.apply_args(&a.hyper)?;
            cmd_sweep(&ctx, &s)
        }
    }
}

fn network(path: Option<&Path>) -> anyhow::Result<NetworkModel> {
    Ok(match path {
        Some(p) => load_network(p)?,
        None => builtin_4bus(),
    })
}

fn solution_table(sol: &PowerFlowSolution) -> String {
    let mut t = String::from("bus    |V| (pu)   delta (deg)      P (pu)      Q (pu)\n");
    for b in sol.document().buses {
        writeln!(
            t,
            "{:>3}  {:>10.6}  {:>12.6}  {:>10.6}  {:>10.6}",
            b.bus, b.v_mag_pu, b.delta_deg, b.p_pu, b.q_pu
        )
        .unwrap();
    }
    write!(
        t,
        "converged in {} iterations, mismatch {:.3e}, losses {:.6} pu",
        sol.iterations,
        sol.final_mismatch(),
        sol.total_loss()
    )
    .unwrap();
    t
}

fn cmd_solve(ctx: &Ctx, s: &SolveSettings) -> anyhow::Result<()> {
    ctx.snapshot("solve", s, None)?;
    let net = network(s.network.as_deref())?;
    let sol = match powerflow::solve(&net, &s.options) {
        Ok(sol) => sol,
        Err(Error::NotConverged {
            iterations,
            last,
            history,
        }) => {
            eprintln!("mismatch history: {history:?}");
            return Err(Error::NotConverged {
                iterations,
                last,
                history,
            }
            .into());
        }
        Err(e) => return Err(e.into()),
    };
    ctx.write_json("solution.json", &sol.document())?;
    ctx.write("solution.csv", &sol.to_csv())?;
    println!("{}", solution_table(&sol));
    Ok(())
}

fn subset(ds: &Dataset, samples: Vec<SampleRecord>) -> Dataset {
    Dataset {
        samples,
        meta: ds.meta.clone(),
    }
}

fn cmd_dataset(ctx: &Ctx, s: &DatasetSettings) -> anyhow::Result<()> {
    ctx.snapshot("dataset", s, None)?;
    let net = network(s.network.as_deref())?;
    let mut ds = qpflow::dataset::generate(&net, s.n, ctx.seed, &s.generate, ctx.exec)?;
    let (train, test) = ds.split(ctx.seed)?;
    ds.meta.scalers = Some(ScalerPair::fit(&train, s.scaler)?);
    ds.save(&ctx.out_dir, "dataset")?;
    subset(&ds, train.clone()).save(&ctx.out_dir, "train")?;
    subset(&ds, test.clone()).save(&ctx.out_dir, "test")?;
    println!(
        "{} of {} samples converged; train {} / test {}; written to {}",
        ds.meta.n_converged,
        ds.meta.n_requested,
        train.len(),
        test.len(),
        ctx.out_dir.display()
    );
    Ok(())
}

fn spin_tag(spin: qpflow::qsim::Spin) -> String {
    spin.to_string().replace('/', "_")
}

fn cmd_activation_simulate(ctx: &Ctx, s: &ActivationSettings) -> anyhow::Result<()> {
    if s.spins.is_empty() {
        return Err(usage("no spin numbers given"));
    }
    ctx.snapshot("activation simulate", s, None)?;
    let config = TransferConfig {
        g: s.g,
        params: CollisionParams {
            tau: s.tau,
            n_collisions: s.n_collisions,
            gamma: s.gamma,
            mode: s.mode,
        },
        n_points: s.n_points,
        seed: s.random_schedule.then_some(ctx.seed),
    };
    let table = beta_table();
    let mut summary = String::from("spin,beta_fit,rss,beta_table,unconverged_points\n");
    println!("spin   beta_fit     rss          beta_table  unconverged");
    let mut fits: Vec<BetaFit> = Vec::new();
    for &spin in &s.spins {
        let curve = transfer_curve(spin, &config, ctx.exec)?;
        let fit = fit_beta(&curve.activation_curve())?;
        let tag = spin_tag(spin);
        ctx.write(&format!("activation_{tag}.csv"), &curve.to_csv())?;
        ctx.write_json(&format!("beta_fit_{tag}.json"), &fit)?;
        let unconverged = curve.points.iter().filter(|p| !p.converged).count();
        let tabulated = table.get(&spin).map_or(String::new(), |b| b.to_string());
        writeln!(
            summary,
            "{spin},{},{},{tabulated},{unconverged}",
            fit.beta, fit.rss
        )
        .unwrap();
        println!(
            "{:<5}  {:<11.6}  {:<11.4e}  {:<10}  {unconverged}",
            spin.to_string(),
            fit.beta,
            fit.rss,
            tabulated
        );
        fits.push(fit);
    }
    ctx.write("beta_summary.csv", &summary)?;
    if fits.len() > 1 {
        let increasing = fits.windows(2).all(|w| w[1].beta > w[0].beta);
        println!("beta strictly increasing in listed order: {increasing}");
    }
    Ok(())
}

#[derive(Serialize)]
struct FitSettings<'a> {
    curve: &'a Path,
}

fn cmd_activation_fit(ctx: &Ctx, curve_path: &Path) -> anyhow::Result<()> {
    ctx.snapshot("activation fit", &FitSettings { curve: curve_path }, None)?;
    let curve = ActivationCurve::load_csv(curve_path)?;
    let fit = fit_beta(&curve)?;
    ctx.write_json("beta_fit.json", &fit)?;
    println!(
        "beta = {} (rss {:.4e}, {} points)",
        fit.beta, fit.rss, fit.n_points
    );
    Ok(())
}

/// A dataset loaded from disk and split as at generation time.
struct Prepared {
    dataset: Dataset,
    train: Vec<SampleRecord>,
    test: Vec<SampleRecord>,
}

fn prepare(path: Option<&Path>) -> anyhow::Result<Prepared> {
    let path = path.ok_or_else(|| usage("a dataset file is required (--dataset)"))?;
    let dataset = Dataset::load(path)?;
    let (train, test) = dataset.split(dataset.meta.seed)?;
    if train.is_empty() {
        return Err(Error::Validation("training split is empty".into()).into());
    }
    Ok(Prepared {
        dataset,
        train,
        test,
    })
}

fn scaler_kind(requested: Option<ScalerKind>, ds: &Dataset) -> ScalerKind {
    requested
        .or_else(|| ds.meta.scalers.as_ref().map(|p| p.input.kind))
        .unwrap_or_default()
}

/// MAPE in physical units: predictions are mapped back through the target
/// scaler and compared with the raw targets.
fn physical_mape(
    params: &MLPParams,
    topology: &LayerTopology,
    scalers: Option<&ScalerPair>,
    samples: &[SampleRecord],
    exec: Execution,
) -> anyhow::Result<Vec<f64>> {
    let raw = qpflow::dataset::raw_set(samples);
    let (inputs, invert): (Vec<Vec<f64>>, Option<&ScalerPair>) = match scalers {
        Some(sc) => (sc.input.apply(&raw.inputs)?, Some(sc)),
        None => (raw.inputs.clone(), None),
    };
    let set = TrainingSet {
        inputs,
        targets: raw.targets.clone(),
    };
    let mut preds = set.predictions(params, topology, exec)?;
    if let Some(sc) = invert {
        preds = sc.target.invert(&preds)?;
    }
    Ok(mape(&preds, &raw.targets)?)
}

fn mape_csv(names: &[String], values: &[f64]) -> String {
    let mut s = String::from("output,mape_percent\n");
    for (n, v) in names.iter().zip(values) {
        writeln!(s, "{n},{v}").unwrap();
    }
    s
}

fn resolve_train_hyper(s: &mut TrainSettings, seed: u64) -> anyhow::Result<Hyperparams> {
    match (s.beta, s.spin) {
        (Some(_), Some(_)) => return Err(usage("give either beta or spin, not both")),
        (Some(b), None) => s.hyper.set("beta", b.into()),
        (None, Some(spin)) => s.hyper.set("beta", beta_for_spin(spin)?.into()),
        (None, None) => {}
    }
    s.hyper.resolve(seed)
}

fn cmd_train(ctx: &Ctx, mut s: TrainSettings) -> anyhow::Result<()> {
    let hyper = resolve_train_hyper(&mut s, ctx.seed)?;
    ctx.snapshot("train", &s, Some(&hyper))?;
    let p = prepare(s.dataset.as_deref())?;
    let scalers = ScalerPair::fit(&p.train, scaler_kind(s.hyper.scaler, &p.dataset))?;
    let tr = scalers.apply(&p.train)?;
    let te = (!p.test.is_empty())
        .then(|| scalers.apply(&p.test))
        .transpose()?;
    let topology = hyper.topology(scalers.input.width(), scalers.target.width())?;
    let (params, mut report) = train(&tr, te.as_ref(), &topology, &hyper, ctx.exec)?;
    if let Some(te) = &te {
        report.test_mse = Some(te.mse(&params, &topology, ctx.exec)?);
        report.test_mape = Some(physical_mape(
            &params,
            &topology,
            Some(&scalers),
            &p.test,
            ctx.exec,
        )?);
    }
    save_model(&params, &topology, Some(&scalers), ctx.path("model.json"))?;
    ctx.write("epoch_log.csv", &epoch_log_csv(&report))?;
    ctx.write_json("train_report.json", &report)?;
    print_report(&report, &p.dataset.meta.target_names);
    if let Some(m) = &report.test_mape {
        ctx.write("mape.csv", &mape_csv(&p.dataset.meta.target_names, m))?;
    }
    Ok(())
}

fn print_report(report: &TrainReport, names: &[String]) {
    println!(
        "{} beta={} seed={}: train MSE {:.6e} -> {:.6e} over {} epochs ({:.2} s)",
        report.optimizer,
        report.beta,
        report.seed,
        report.initial_train_mse,
        report.final_train_mse(),
        report.train_mse.len(),
        report.wall_time_s
    );
    if let Some(m) = report.test_mse {
        println!("test MSE {m:.6e}");
    }
    if let Some(mape) = &report.test_mape {
        println!("output        MAPE (%)");
        for (n, v) in names.iter().zip(mape) {
            println!("{n:<12}  {v:.6}");
        }
    }
}

#[derive(Serialize)]
struct Evaluation {
    split: String,
    n_samples: usize,
    mse: f64,
    mape: Vec<(String, f64)>,
}

fn cmd_evaluate(ctx: &Ctx, s: &EvaluateSettings) -> anyhow::Result<()> {
    ctx.snapshot("evaluate", s, None)?;
    let model_path = s
        .model
        .as_deref()
        .ok_or_else(|| usage("a model file is required (--model)"))?;
    let model = load_model(model_path)?;
    let p = prepare(s.dataset.as_deref())?;
    let samples = match s.split.as_str() {
        "train" => p.train,
        "test" => p.test,
        "all" => p.dataset.samples.clone(),
        other => {
            return Err(usage(format!(
                "split must be train, test or all, got `{other}`"
            )))
        }
    };
    if samples.is_empty() {
        return Err(Error::Validation(format!("{} split is empty", s.split)).into());
    }
    let set = match &model.scalers {
        Some(sc) => sc.apply(&samples)?,
        None => qpflow::dataset::raw_set(&samples),
    };
    let mse = set.mse(&model.params, &model.topology, ctx.exec)?;
    let mape = physical_mape(
        &model.params,
        &model.topology,
        model.scalers.as_ref(),
        &samples,
        ctx.exec,
    )?;
    let names = &p.dataset.meta.target_names;
    let eval = Evaluation {
        split: s.split.clone(),
        n_samples: samples.len(),
        mse,
        mape: names.iter().cloned().zip(mape.iter().copied()).collect(),
    };
    ctx.write_json("evaluation.json", &eval)?;
    ctx.write("evaluation_mape.csv", &mape_csv(names, &mape))?;
    println!("{} split, {} samples: MSE {mse:e}", s.split, samples.len());
    println!("output        MAPE (%)");
    for (n, v) in names.iter().zip(&mape) {
        println!("{n:<12}  {v:.6}");
    }
    Ok(())
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

struct SweepRun {
    beta: f64,
    optimizer: OptimizerKind,
    seed: u64,
    report: TrainReport,
}

fn cmd_sweep(ctx: &Ctx, s: &SweepSettings) -> anyhow::Result<()> {
    if s.betas.is_empty() || s.optimizers.is_empty() || s.seeds.is_empty() {
        return Err(usage("sweep needs at least one beta, optimizer and seed"));
    }
    let optimizers = s
        .optimizers
        .iter()
        .map(|o| o.parse::<OptimizerKind>())
        .collect::<Result<Vec<_>, _>>()?;
    let mut grid = Vec::new();
    for &beta in &s.betas {
        for &opt in &optimizers {
            for &seed in &s.seeds {
                let mut h: HyperSettings = s.hyper.clone();
                h.set("beta", beta.into());
                h.set("optimizer", serde_json::to_value(opt)?);
                grid.push((beta, opt, h.resolve(seed)?));
            }
        }
    }
    ctx.snapshot("sweep", s, None)?;
    let p = prepare(s.dataset.as_deref())?;
    let scalers = ScalerPair::fit(&p.train, scaler_kind(s.hyper.scaler, &p.dataset))?;
    let tr = scalers.apply(&p.train)?;
    let te = (!p.test.is_empty())
        .then(|| scalers.apply(&p.test))
        .transpose()?;
    let topology_for = |h: &Hyperparams| h.topology(scalers.input.width(), scalers.target.width());
    // runs fan out; each run is serial inside and keyed by its grid index
    let runs = ctx
        .exec
        .try_map(grid.len(), |i| -> anyhow::Result<SweepRun> {
            let (beta, optimizer, h) = &grid[i];
            let topo = topology_for(h)?;
            let (params, mut report) = train(&tr, None, &topo, h, Execution::Serial)?;
            if let Some(te) = &te {
                report.test_mse = Some(te.mse(&params, &topo, Execution::Serial)?);
            }
            Ok(SweepRun {
                beta: *beta,
                optimizer: *optimizer,
                seed: h.seed,
                report,
            })
        })?;

    let mut runs_csv = String::from("beta,optimizer,seed,initial_mse,final_mse,test_mse\n");
    let mut epochs_csv = String::from("beta,optimizer,seed,epoch,train_mse\n");
    for r in &runs {
        let test = r.report.test_mse.map_or(String::new(), |m| m.to_string());
        writeln!(
            runs_csv,
            "{},{},{},{},{},{test}",
            r.beta,
            r.optimizer,
            r.seed,
            r.report.initial_train_mse,
            r.report.final_train_mse()
        )
        .unwrap();
        for (e, m) in r.report.train_mse.iter().enumerate() {
            writeln!(
                epochs_csv,
                "{},{},{},{},{m}",
                r.beta,
                r.optimizer,
                r.seed,
                e + 1
            )
            .unwrap();
        }
    }
    let mut summary = String::from("beta");
    for o in &optimizers {
        write!(summary, ",median_final_mse_{o}").unwrap();
    }
    summary.push('\n');
    print!("beta    ");
    for o in &optimizers {
        print!("  {:>14}", format!("median {o}"));
    }
    println!();
    for &beta in &s.betas {
        write!(summary, "{beta}").unwrap();
        print!("{beta:<8}");
        for &o in &optimizers {
            let mut finals: Vec<f64> = runs
                .iter()
                .filter(|r| r.beta == beta && r.optimizer == o)
                .map(|r| r.report.final_train_mse())
                .collect();
            let m = median(&mut finals);
            write!(summary, ",{m}").unwrap();
            print!("  {m:>14.6e}");
        }
        summary.push('\n');
        println!();
    }
    ctx.write("sweep_runs.csv", &runs_csv)?;
    ctx.write("sweep_epochs.csv", &epochs_csv)?;
    ctx.write("sweep_summary.csv", &summary)?;
    Ok(())
}
