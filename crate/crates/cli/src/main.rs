use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Arg, ArgAction, ArgMatches, Command};
use dive_core::graphdata::{load_dataset, save_dataset};
use dive_core::harness::gradcheck::run_suite;
use dive_core::harness::{
    evaluate, load_collection, run_experiment, run_sweep, ExperimentConfig, HarnessError, SweepAxis, KEYS,
};
use dive_core::motifgen::gen_dataset_with;

fn with_config_flags(cmd: Command) -> Command {
    let cmd = cmd.arg(
        Arg::new("config").long("config").value_name("FILE").help("key = value file; flags override it"),
    );
    KEYS.iter().fold(cmd, |cmd, (key, help)| {
        cmd.arg(Arg::new(*key).long(*key).value_name("VALUE").help(*help))
    })
}

fn cli() -> Command {
    Command::new("dive")
        .about("Diverse subgraph-mask collections for shifted graph classification")
        .subcommand_required(true)
        .arg_required_else_help(true)
        .subcommand(
            with_config_flags(Command::new("generate").about("Generate a synthetic motif dataset"))
                .arg(Arg::new("out").long("out").value_name("FILE").required(true).help("dataset file to write")),
        )
        .subcommand(
            Command::new("validate")
                .about("Check a dataset file")
                .arg(Arg::new("file").required(true).value_name("FILE")),
        )
        .subcommand(with_config_flags(Command::new("train").about("Train and evaluate (one or more trials)")))
        .subcommand(
            with_config_flags(Command::new("eval").about("Evaluate a saved checkpoint"))
                .arg(Arg::new("checkpoint").long("checkpoint").value_name("FILE").required(true))
                .arg(Arg::new("split").long("split").value_name("NAME").default_value("test")),
        )
        .subcommand(
            with_config_flags(Command::new("sweep").about("Run one experiment per value of a sweep axis"))
                .arg(
                    Arg::new("axis")
                        .long("axis")
                        .value_name("AXIS")
                        .required(true)
                        .help("lambda or collection_size"),
                )
                .arg(
                    Arg::new("values")
                        .long("values")
                        .value_name("LIST")
                        .required(true)
                        .help("comma-separated axis values"),
                ),
        )
        .subcommand(
            Command::new("gradcheck")
                .about("Compare backward gradients with central finite differences")
                .arg(Arg::new("seed").long("seed").default_value("0").value_parser(clap::value_parser!(u64)))
                .arg(Arg::new("hidden").long("hidden").default_value("4").value_parser(clap::value_parser!(usize)))
                .arg(Arg::new("tol").long("tol").default_value("1e-4").value_parser(clap::value_parser!(f64)))
                .arg(Arg::new("verbose").long("verbose").short('v').action(ArgAction::SetTrue)),
        )
}

/// Defaults, then the config file, then `DIVE_*` variables, then flags.
fn resolve_config(m: &ArgMatches) -> Result<ExperimentConfig, HarnessError> {
    let mut cfg = ExperimentConfig::default();
    if let Some(path) = m.get_one::<String>("config") {
        cfg.apply_file(&PathBuf::from(path))?;
    }
    cfg.apply_env(std::env::vars())?;
    for (key, _) in KEYS {
        if let Some(v) = m.get_one::<String>(key) {
            cfg.set(key, v)?;
        }
    }
    Ok(cfg)
}

fn run(m: &ArgMatches) -> Result<(), HarnessError> {
    match m.subcommand() {
        Some(("generate", sub)) => {
            let cfg = resolve_config(sub)?;
            let (ds, manifest) = gen_dataset_with(&cfg.gen, cfg.exec()).map_err(|e| HarnessError::Config(e.to_string()))?;
            let out = sub.get_one::<String>("out").expect("required");
            save_dataset(&ds, out).map_err(|e| HarnessError::Data { stage: "generate", msg: e.to_string() })?;
            println!("{}", serde_json::to_string_pretty(&manifest).expect("manifest serializes"));
        }
        Some(("validate", sub)) => {
            let file = sub.get_one::<String>("file").expect("required");
            let ds = load_dataset(file).map_err(|e| HarnessError::Data { stage: "validate", msg: e.to_string() })?;
            println!("ok: {} graphs, task {:?}", ds.graphs.len(), ds.task);
            for (name, idx) in &ds.splits {
                println!("  {name}: {}", idx.len());
            }
        }
        Some(("train", sub)) => {
            let cfg = resolve_config(sub)?;
            let res = run_experiment(&cfg)?;
            println!("results in {} ({:.1}s)", res.dir.display(), res.runtime_secs);
            println!("dataset sha256 {}", res.dataset_sha256);
            for r in &res.aggregate {
                println!("{:7} {:9} mean {:.4} std {:.4} (n={})", r.split, r.quantity, r.mean, r.std, r.n);
            }
        }
        Some(("eval", sub)) => {
            let cfg = resolve_config(sub)?;
            let path = cfg.dataset.clone().ok_or_else(|| HarnessError::Config("eval needs --dataset".into()))?;
            let ds = load_dataset(&path).map_err(|e| HarnessError::Data { stage: "eval", msg: e.to_string() })?;
            let ckpt = PathBuf::from(sub.get_one::<String>("checkpoint").expect("required"));
            let coll = load_collection(&cfg, &ds, &ckpt)?;
            let split = sub.get_one::<String>("split").expect("default");
            let records = evaluate(&coll, &ds, split, cfg.exec()).map_err(|e| HarnessError::Failed {
                stage: "eval",
                msg: e.to_string(),
            })?;
            for r in records {
                println!("{}", serde_json::to_string(&r).expect("record serializes"));
            }
        }
        Some(("sweep", sub)) => {
            let cfg = resolve_config(sub)?;
            let axis: SweepAxis = sub.get_one::<String>("axis").expect("required").parse()?;
            let values: Vec<String> =
                sub.get_one::<String>("values").expect("required").split(',').map(str::to_string).collect();
            for r in run_sweep(&cfg, axis, &values)? {
                println!(
                    "{}={:6} {} {:.4} ± {:.4}  mask_f1 {}  ({:.1}s)",
                    r.axis,
                    r.value,
                    r.metric,
                    r.mean,
                    r.std,
                    r.mask_f1_mean.map_or("-".into(), |f| format!("{f:.4}")),
                    r.runtime_secs
                );
            }
        }
        Some(("gradcheck", sub)) => {
            let seed = *sub.get_one::<u64>("seed").expect("default");
            let hidden = *sub.get_one::<usize>("hidden").expect("default");
            let tol = *sub.get_one::<f64>("tol").expect("default");
            let results = run_suite(seed, hidden).map_err(|e| HarnessError::Failed { stage: "gradcheck", msg: e.to_string() })?;
            let mut failed = 0;
            for r in &results {
                let ok = r.max_rel_error < tol;
                failed += usize::from(!ok);
                if !ok || sub.get_flag("verbose") {
                    println!("{} {:40} {:.3e} ({} coords)", if ok { "pass" } else { "FAIL" }, r.name, r.max_rel_error, r.coords);
                }
            }
            println!("{} checks, {} failed (tolerance {tol:e})", results.len(), failed);
            if failed > 0 {
                return Err(HarnessError::Numeric { stage: "gradcheck", msg: format!("{failed} checks above tolerance") });
            }
        }
        _ => unreachable!("subcommand required"),
    }
    Ok(())
}

fn main() -> ExitCode {
    let matches = cli().get_matches();
    match run(&matches) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cli_is_well_formed() {
        cli().debug_assert();
    }

    #[test]
    fn flags_override_config_values() {
        let m = cli().get_matches_from(["dive", "train", "--lambda", "0.3", "--seed", "4"]);
        let (_, sub) = m.subcommand().unwrap();
        let cfg = resolve_config(sub).unwrap();
        assert_eq!(cfg.lambda, 0.3);
        assert_eq!(cfg.seed, Some(4));
    }
}
