use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use anyhow::Context;
use clap::ArgMatches;
use dodge_rl::agents::TrainState;
use dodge_rl::arena::TrajectoryRecorder;
use dodge_rl::config::{RunConfig, CONFIG_ECHO_FILE};
use dodge_rl::distrib::{
    load_snapshot, run_local, run_manager, run_worker, Generator, Learner, ManagerOptions,
    WorkerSettings, TRAIN_LOG_FILE,
};
use dodge_rl::metrics::{build_holdout, evaluate_network, evaluate_network_observed, EvalOptions};
use dodge_rl::nncore::{gradient_check_suite, Network};
use dodge_rl::NetworkF32;

use crate::{load_config, Failure, EXIT_CHECK_FAILED};

const GRADCHECK_TOLERANCE: f64 = 1e-4;

fn validated(m: &ArgMatches) -> Result<RunConfig, Failure> {
    let cfg = load_config(m)?;
    cfg.validate().map_err(Failure::config)?;
    Ok(cfg)
}

/// Creates the run directory, refusing one that already holds a training log,
/// and writes the effective configuration into it.
fn prepare_run_dir(cfg: &RunConfig) -> Result<PathBuf, Failure> {
    let dir = PathBuf::from(&cfg.run_dir);
    if dir.join(TRAIN_LOG_FILE).exists() {
        return Err(Failure::config(anyhow::anyhow!(
            "{} already holds a training run; pick another --run-dir",
            dir.display()
        )));
    }
    fs::create_dir_all(&dir)
        .with_context(|| format!("creating {}", dir.display()))
        .map_err(Failure::runtime)?;
    fs::write(dir.join(CONFIG_ECHO_FILE), cfg.to_text()).map_err(Failure::runtime)?;
    Ok(dir)
}

fn new_learner(cfg: &RunConfig, dir: &Path) -> Result<Learner, Failure> {
    let holdout = build_holdout(&cfg.arena(), cfg.holdout_size, cfg.seed).map_err(Failure::runtime)?;
    holdout.save(dir).map_err(Failure::runtime)?;
    let net = Network::new(&cfg.layer_specs(), cfg.agent.head(), cfg.seed).map_err(Failure::config)?;
    let ts = TrainState::new(cfg.agent, net, cfg.train_config()).map_err(Failure::config)?;
    Learner::new(ts, cfg.learner_settings(Some(dir.to_path_buf())), Some(holdout)).map_err(Failure::runtime)
}

fn generator(cfg: &RunConfig, worker_id: u32) -> Generator {
    Generator::new(
        worker_id,
        cfg.seed,
        cfg.arena(),
        cfg.epsilon_schedule(),
        cfg.train_episode_cap,
    )
}

fn eval_options(cfg: &RunConfig) -> EvalOptions {
    let mut opts = EvalOptions::new(cfg.eval_level, cfg.eval_episodes, cfg.seed, cfg.eval_greedy);
    opts.arena = cfg.arena();
    opts
}

fn write_report(net: &NetworkF32, cfg: &RunConfig, out: &Path) -> Result<(), Failure> {
    let report = evaluate_network(net, &eval_options(cfg)).map_err(Failure::runtime)?;
    fs::write(out, report.to_csv()).map_err(Failure::runtime)?;
    println!("{}", report.summary());
    Ok(())
}

pub fn train(m: &ArgMatches) -> Result<(), Failure> {
    let cfg = validated(m)?;
    let dir = prepare_run_dir(&cfg)?;
    let mut learner = new_learner(&cfg, &dir)?;
    let mut generators: Vec<Generator> = (0..cfg.workers).map(|w| generator(&cfg, w)).collect();
    log::info!(
        "training {} for {} steps in {}",
        cfg.agent,
        cfg.total_training_steps,
        dir.display()
    );
    let every = (cfg.snapshot_every_uploads.max(1)) * 4;
    run_local(&mut learner, &mut generators, cfg.samples_per_upload, None, |l, o| {
        if let Some(row) = &o.log_row {
            if l.uploads % every == 0 {
                log::info!(
                    "step {} uploads {} loss {:.5} mean max Q {:.4}",
                    row.step,
                    row.uploads,
                    row.mean_loss,
                    row.mean_max_q
                );
            }
        }
    })
    .map_err(Failure::runtime)?;
    write_report(&learner.train.online, &cfg, &dir.join("eval.csv"))
}

pub fn manager(m: &ArgMatches) -> Result<(), Failure> {
    let cfg = validated(m)?;
    let dir = prepare_run_dir(&cfg)?;
    let mut learner = new_learner(&cfg, &dir)?;
    let listener = TcpListener::bind(&cfg.listen_addr)
        .with_context(|| format!("binding {}", cfg.listen_addr))
        .map_err(Failure::runtime)?;
    log::info!("manager listening on {}", listener.local_addr().map_err(Failure::runtime)?);
    let stop = Arc::new(AtomicBool::new(false));
    let flag = stop.clone();
    ctrlc::set_handler(move || flag.store(true, Ordering::Relaxed))
        .context("installing signal handler")
        .map_err(Failure::runtime)?;
    let summary = run_manager(listener, &mut learner, ManagerOptions::default(), stop).map_err(Failure::runtime)?;
    println!(
        "uploads {}  steps {}  periodic snapshots {}  final snapshot {}",
        summary.uploads,
        summary.steps,
        summary.snapshots_saved,
        summary
            .final_snapshot
            .as_ref()
            .map_or("none".to_string(), |p| p.display().to_string())
    );
    Ok(())
}

pub fn worker(m: &ArgMatches) -> Result<(), Failure> {
    let cfg = validated(m)?;
    let settings = WorkerSettings {
        manager_addr: cfg.manager_addr.clone(),
        samples_per_upload: cfg.samples_per_upload,
        backoff: cfg.backoff(),
        max_uploads: None,
    };
    let mut g = generator(&cfg, cfg.worker_id);
    match run_worker(&settings, &mut g) {
        Ok(s) => {
            log::info!("worker {} done after {} uploads", cfg.worker_id, s.uploads);
            Ok(())
        }
        Err(e) => Err(Failure::runtime(e)),
    }
}

fn in_run_dir(cfg: &RunConfig, path: &str) -> PathBuf {
    let p = PathBuf::from(path);
    if p.is_absolute() {
        p
    } else {
        Path::new(&cfg.run_dir).join(p)
    }
}

pub fn eval(m: &ArgMatches) -> Result<(), Failure> {
    let mut cfg = load_config(m)?;
    if let Some(v) = m.get_one::<String>("level") {
        cfg.set_from_cli("eval_level", v).map_err(Failure::config)?;
    }
    if let Some(v) = m.get_one::<String>("episodes") {
        cfg.set_from_cli("eval_episodes", v).map_err(Failure::config)?;
    }
    if m.get_flag("greedy") {
        cfg.eval_greedy = true;
    }
    cfg.validate().map_err(Failure::config)?;
    let path = m.get_one::<String>("snapshot").expect("required");
    let (net, kind, step) = load_snapshot(Path::new(path))
        .with_context(|| format!("loading {path}"))
        .map_err(Failure::runtime)?;
    log::info!("{kind} model at step {step}");
    fs::create_dir_all(&cfg.run_dir).map_err(Failure::runtime)?;
    let opts = eval_options(&cfg);

    let report = match m.get_one::<String>("record") {
        Some(rec) => {
            let rec_path = in_run_dir(&cfg, rec);
            let file = File::create(&rec_path)
                .with_context(|| format!("creating {}", rec_path.display()))
                .map_err(Failure::runtime)?;
            let mut recorder = TrajectoryRecorder::new(BufWriter::new(file)).map_err(Failure::runtime)?;
            let mut write_err = None;
            let report = evaluate_network_observed(&net, &opts, |episode, st, action, out| {
                if episode == 0 && write_err.is_none() {
                    if let Err(e) = recorder.record(st, action, out) {
                        write_err = Some(e);
                    }
                }
            })
            .map_err(Failure::runtime)?;
            if let Some(e) = write_err {
                return Err(Failure::runtime(e));
            }
            recorder.into_inner().flush().map_err(Failure::runtime)?;
            report
        }
        None => evaluate_network(&net, &opts).map_err(Failure::runtime)?,
    };
    let out = match m.get_one::<String>("out") {
        Some(o) => in_run_dir(&cfg, o),
        None => Path::new(&cfg.run_dir).join("eval.csv"),
    };
    fs::write(&out, report.to_csv()).map_err(Failure::runtime)?;
    println!("{}", report.summary());
    Ok(())
}

pub fn gradcheck(m: &ArgMatches) -> Result<(), Failure> {
    let seed = *m.get_one::<u64>("seed").unwrap();
    let count = *m.get_one::<usize>("networks").unwrap();
    let corrupt = m.get_flag("corrupt-backward");
    let report = gradient_check_suite(seed, count, corrupt).map_err(Failure::runtime)?;
    for (head, r) in &report.per_head {
        println!(
            "{:<12} max relative error {:.3e}  ({} parameters checked, {} at ReLU kinks skipped)",
            format!("{head:?}"),
            r.max_relative_error,
            r.checked,
            r.skipped_kinks
        );
    }
    let worst = report.max_relative_error();
    println!("networks {}  max relative error {:.3e}", report.networks, worst);
    if worst < GRADCHECK_TOLERANCE {
        println!("PASS (< {GRADCHECK_TOLERANCE:e})");
        Ok(())
    } else {
        println!("FAIL (>= {GRADCHECK_TOLERANCE:e})");
        Err(Failure {
            code: EXIT_CHECK_FAILED,
            error: anyhow::anyhow!("gradient check failed: {worst:.3e} >= {GRADCHECK_TOLERANCE:e}"),
        })
    }
}
