mod args;

use std::path::Path;

use anyhow::{bail, Context, Result};
use clap::error::ErrorKind;
use clap::{ArgMatches, CommandFactory, FromArgMatches};
use fedhealth::client::{dump_feature_extractors, evaluate_rmse, write_feature_csv};
use fedhealth::data::{gen_synthetic_cyclic, partition_clients, write_cyclic_csv, write_engine_csv, write_rul_file};
use fedhealth::orchestrator::{
    load_checkpoint, prepare_data, read_metrics_csv, run_experiment, synthetic_engines, Algo, ExperimentConfig, Task,
};
use fedhealth::Error;

use args::{Cli, Command, ConfigArgs, DumpArgs, EvalArgs, Split};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let matches = Cli::command().get_matches();
    let cli = Cli::from_arg_matches(&matches).unwrap_or_else(|e| e.exit());
    if let Err(e) = dispatch(&cli, &matches) {
        let mut msg = e.to_string();
        for cause in e.chain().skip(1).map(|c| c.to_string()) {
            if !msg.contains(&cause) {
                msg = format!("{msg}: {cause}");
            }
        }
        eprintln!("error: {msg}");
        std::process::exit(1);
    }
}

fn usage_error(msg: impl std::fmt::Display) -> ! {
    Cli::command().error(ErrorKind::ValueValidation, msg).exit()
}

/// Config file, then global flags, then subcommand flags; bad values are usage errors.
fn build_config(cli: &Cli, top: &ArgMatches, sub: &ArgMatches, flags: &ConfigArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    cli.apply(top, &mut cfg);
    cli.apply(sub, &mut cfg);
    flags.apply(sub, &mut cfg);
    if let Err(Error::Config(msg)) = cfg.validate() {
        usage_error(msg);
    }
    Ok(cfg)
}

fn dispatch(cli: &Cli, top: &ArgMatches) -> Result<()> {
    let (_, sub) = top.subcommand().expect("subcommand is required");
    match &cli.command {
        Command::Synth(a) => cmd_synth(&build_config(cli, top, sub, &a.config)?),
        Command::Run(a) => cmd_run(&build_config(cli, top, sub, &a.config)?),
        Command::Eval(a) => cmd_eval(build_config(cli, top, sub, &a.config)?, a),
        Command::DumpFeatures(a) => cmd_dump_features(build_config(cli, top, sub, &a.config)?, a),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn cmd_synth(cfg: &ExperimentConfig) -> Result<()> {
    create_dir(&cfg.out_dir)?;
    match cfg.task {
        Task::Cyclic => {
            let clients = gen_synthetic_cyclic(&cfg.synthetic())?;
            println!("client  cycles  capacity(first -> last)  cycle length");
            for (j, records) in clients.iter().enumerate() {
                let path = cfg.out_dir.join(format!("client_{j}.csv"));
                write_cyclic_csv(&path, records)?;
                let (first, last) = (&records[0], &records[records.len() - 1]);
                let lens = records.iter().map(|r| r.len());
                println!(
                    "{j:>6}  {:>6}  {:>8.4} -> {:<8.4}      {}..{}",
                    records.len(),
                    first.capacity,
                    last.capacity,
                    lens.clone().min().unwrap_or(0),
                    lens.max().unwrap_or(0)
                );
            }
            println!("wrote {} client files to {}", clients.len(), cfg.out_dir.display());
        }
        Task::Noncyclic => {
            let (train, test) = synthetic_engines(cfg)?;
            write_engine_csv(cfg.out_dir.join("train.csv"), &train)?;
            write_engine_csv(cfg.out_dir.join("test.csv"), &test)?;
            write_rul_file(cfg.out_dir.join("rul.csv"), &test)?;
            let parts = partition_clients(&train, cfg.partition, &cfg.boundaries, cfg.seed)?;
            println!("client  engines  lifespan");
            for (j, part) in parts.iter().enumerate() {
                let lives = part.iter().map(|e| e.lifespan);
                println!(
                    "{j:>6}  {:>7}  {}..{}",
                    part.len(),
                    lives.clone().min().unwrap_or(0),
                    lives.max().unwrap_or(0)
                );
            }
            println!(
                "wrote {} training and {} test engines to {}",
                train.len(),
                test.len(),
                cfg.out_dir.display()
            );
        }
    }
    Ok(())
}

fn cmd_run(cfg: &ExperimentConfig) -> Result<()> {
    let out = run_experiment(cfg)?;
    println!("round  fed_rmse    hidden  imp");
    for r in &out.records {
        let imp = r.mean_imp().map_or("-".to_string(), |v| format!("{:.1}%", 100.0 * v));
        println!("{:>5}  {:<10.6}  {:>6}  {imp}", r.round, r.fed_rmse, r.hidden_size);
    }
    if let Some(best) = fedhealth::orchestrator::best_round(&out.records) {
        println!("best round {} (rmse {:.6})", out.records[best].round, out.records[best].fed_rmse);
    }
    println!("metrics: {}", out.metrics_path.display());
    println!("checkpoint: {}", out.checkpoint_path.display());
    Ok(())
}

fn cmd_eval(mut cfg: ExperimentConfig, a: &EvalArgs) -> Result<()> {
    let ckpt = load_checkpoint(&a.checkpoint)?;
    cfg.task = ckpt.task;
    let data = prepare_data(&cfg)?;
    let meta = ckpt.model.meta;
    if (meta.d_in, meta.seq_len) != (data.meta.d_in, data.meta.seq_len) {
        bail!(Error::ShapeMismatch(format!(
            "checkpoint expects {} features x {} steps, data has {} x {}",
            meta.d_in, meta.seq_len, data.meta.d_in, data.meta.seq_len
        )));
    }
    let rmse = data
        .clients
        .iter()
        .map(|c| evaluate_rmse(&ckpt.model, &c.test))
        .collect::<fedhealth::Result<Vec<_>>>()?;
    let baseline = match &a.baseline {
        Some(path) => {
            let records = read_metrics_csv(path)?;
            let rec = records
                .iter()
                .find(|r| r.algo == Algo::Local)
                .or(records.first())
                .with_context(|| format!("{} has no rows", path.display()))?;
            if rec.client_rmse.len() != rmse.len() {
                bail!(
                    "baseline has {} clients, data has {}",
                    rec.client_rmse.len(),
                    rmse.len()
                );
            }
            Some(rec.client_rmse.clone())
        }
        None => None,
    };
    match &baseline {
        Some(_) => println!("client  rmse        imp"),
        None => println!("client  rmse"),
    }
    for (j, r) in rmse.iter().enumerate() {
        match &baseline {
            Some(b) => println!(
                "{j:>6}  {r:<10.6}  {:.1}%",
                100.0 * fedhealth::orchestrator::improvement(b[j], *r)
            ),
            None => println!("{j:>6}  {r:.6}"),
        }
    }
    println!("  mean  {:.6}", rmse.iter().sum::<f64>() / rmse.len() as f64);
    Ok(())
}

fn cmd_dump_features(mut cfg: ExperimentConfig, a: &DumpArgs) -> Result<()> {
    let ckpt = load_checkpoint(&a.checkpoint)?;
    cfg.task = ckpt.task;
    let data = prepare_data(&cfg)?;
    let Some(client) = data.clients.get(a.client) else {
        bail!("client {} out of range: data has {} clients", a.client, data.clients.len());
    };
    let windows = match a.split {
        Split::Train => &client.train.samples,
        Split::Test => &client.test.samples,
    };
    let neurons = &a.neurons.0;
    let acts = dump_feature_extractors(&ckpt.model, windows, neurons)?;
    let path = a.output.clone().unwrap_or_else(|| cfg.out_dir.join("features.csv"));
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    write_feature_csv(&path, &acts, neurons)?;
    println!("wrote {} windows x {} neurons to {}", acts.rows(), neurons.len(), path.display());
    Ok(())
}
