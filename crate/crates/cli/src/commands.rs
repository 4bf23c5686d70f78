use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use hcan::config::{Components, RunConfig};
use hcan::hierlabel::write_partition_table;
use hcan::pipeline::{
    evaluate as score, evaluate_with, load_csv, train_with, Metrics, Prepared, Snapshot, Split, Trained, EPOCH_LOG_HEADER,
};
use hcan::{Error, Result};

use crate::Common;

#[derive(Debug, Serialize)]
struct Summary<'a> {
    config_hash: String,
    seed: u64,
    epochs_run: usize,
    best_epoch: usize,
    parameters: usize,
    val: Metrics,
    test: Metrics,
    config: &'a RunConfig,
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let path = common
        .config
        .as_ref()
        .ok_or_else(|| Error::Usage("--config PATH is required for this command".into()))?;
    let mut cfg = RunConfig::load(path)?;
    apply_overrides(&mut cfg, common);
    cfg.validate()?;
    Ok(cfg)
}

fn apply_overrides(cfg: &mut RunConfig, common: &Common) {
    if let Some(seed) = common.seed {
        cfg.train.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.output.dir = out.clone();
    }
}

fn config_hash(cfg: &RunConfig) -> String {
    format!("{:x}", Sha256::digest(cfg.to_toml().as_bytes()))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })
}

fn out_dir(dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.to_path_buf(), source: e })?;
    Ok(dir.to_path_buf())
}

fn run(cfg: &RunConfig, prep: &Prepared, label: &str) -> Result<(Trained, Metrics, String)> {
    let mut log = format!("{EPOCH_LOG_HEADER}\n");
    let trained = train_with(cfg, &prep.train, &prep.val, |e| {
        eprintln!(
            "[{label}] epoch {:>3}  loss {:.6}  mse {:.6}  val_mse {:.6}  val_mae {:.6}",
            e.epoch, e.train.total, e.train.mse, e.val.mse, e.val.mae
        );
        log.push_str(&e.csv_row());
        log.push('\n');
    })?;
    let test = score(&trained.model, &trained.params, &prep.test, cfg.train.batch_size)?;
    Ok((trained, test, log))
}

pub fn train(common: &Common) -> Result<()> {
    let cfg = load_config(common)?;
    let series = load_csv(&cfg.data.path)?;
    let prep = Prepared::new(&cfg, &series)?;
    let dir = out_dir(&cfg.output.dir)?;
    let (trained, test, log) = run(&cfg, &prep, cfg.ablation.label())?;

    let snap = Snapshot::new(cfg.clone(), prep.columns.clone(), prep.norm.clone(), prep.partitions.clone(), &trained);
    snap.save(&dir.join("snapshot.json"))?;
    write(&dir.join("epoch_log.csv"), log)?;
    write(&dir.join("config.toml"), cfg.to_toml())?;
    let summary = Summary {
        config_hash: config_hash(&cfg),
        seed: cfg.train.seed,
        epochs_run: trained.log.len(),
        best_epoch: trained.best_epoch,
        parameters: trained.params.count(),
        val: trained.best_val,
        test,
        config: &cfg,
    };
    write(&dir.join("summary.json"), serde_json::to_string_pretty(&summary).expect("serializable"))?;
    println!("test mse={:?} mae={:?}", test.mse, test.mae);
    Ok(())
}

pub fn evaluate(common: &Common, snapshot: &Path, split: &str) -> Result<()> {
    let split: Split = split.parse()?;
    let snap = Snapshot::load(snapshot)?;
    let mut cfg = match &common.config {
        Some(_) => {
            let cfg = load_config(common)?;
            snap.check_config(&cfg)?;
            cfg
        }
        None => snap.config.clone(),
    };
    apply_overrides(&mut cfg, common);
    let series = load_csv(&cfg.data.path)?;
    let prep = Prepared::with_fitted(&cfg, &series, snap.norm.clone(), snap.partitions.clone())?;
    if prep.columns != snap.columns {
        return Err(Error::Compatibility(format!(
            "data columns {:?} differ from snapshot columns {:?}",
            prep.columns, snap.columns
        )));
    }
    let set = prep.split(split);

    let mut csv = String::from("window,step");
    for prefix in ["pred", "true"] {
        for c in &prep.columns {
            let _ = write!(csv, ",{prefix}_{c}");
        }
    }
    csv.push('\n');
    let m = evaluate_with(&snap.model, &snap.params, set, cfg.train.batch_size, |batch, pred| {
        let (d, t) = (pred.shape()[1], pred.shape()[2]);
        for (b, start) in batch.starts.iter().enumerate() {
            for step in 0..t {
                let _ = write!(csv, "{start},{step}");
                for src in [pred.data(), batch.y.data()] {
                    for c in 0..d {
                        let _ = write!(csv, ",{:?}", src[(b * d + c) * t + step]);
                    }
                }
                csv.push('\n');
            }
        }
    })?;
    let name = format!("predictions_{}.csv", format!("{split:?}").to_lowercase());
    let path = match &common.out {
        Some(dir) => out_dir(dir)?.join(name),
        None => snapshot.parent().unwrap_or(Path::new(".")).join(name),
    };
    write(&path, csv)?;
    println!("mse={:?} mae={:?}", m.mse, m.mae);
    Ok(())
}

pub fn ablate(common: &Common) -> Result<()> {
    let cfg = load_config(common)?;
    let series = load_csv(&cfg.data.path)?;
    let prep = Prepared::new(&cfg, &series)?;
    let dir = out_dir(&cfg.output.dir)?;
    let mut csv = String::from("row,components,best_epoch,val_mse,test_mse,test_mae\n");
    let mut mses = Vec::new();
    for n in 0..Components::ROWS {
        let mut row_cfg = cfg.clone();
        row_cfg.ablation = Components::chain(n);
        let (trained, test, _) = run(&row_cfg, &prep, row_cfg.ablation.label())?;
        let _ = writeln!(
            csv,
            "{n},{},{},{:?},{:?},{:?}",
            row_cfg.ablation.label(),
            trained.best_epoch,
            trained.best_val.mse,
            test.mse,
            test.mae
        );
        println!("{n} {:<11} test mse={:.6} mae={:.6}", row_cfg.ablation.label(), test.mse, test.mae);
        mses.push(test.mse);
    }
    write(&dir.join("ablation.csv"), csv)?;
    let rises: Vec<usize> = (1..mses.len()).filter(|&i| mses[i] > mses[i - 1]).collect();
    if rises.is_empty() {
        println!("trend: test MSE is non-increasing along the component chain");
    } else {
        println!("trend: test MSE rises at rows {rises:?} (observational, not enforced)");
    }
    Ok(())
}

pub fn inspect_partition(common: &Common, snapshot: Option<&Path>) -> Result<()> {
    let (cfg, prep) = match snapshot {
        Some(path) => {
            let snap = Snapshot::load(path)?;
            let mut cfg = snap.config.clone();
            apply_overrides(&mut cfg, common);
            let series = load_csv(&cfg.data.path)?;
            let prep = Prepared::with_fitted(&cfg, &series, snap.norm.clone(), snap.partitions.clone())?;
            (cfg, prep)
        }
        None => {
            let cfg = load_config(common)?;
            let series = load_csv(&cfg.data.path)?;
            let prep = Prepared::new(&cfg, &series)?;
            (cfg, prep)
        }
    };
    let mut text = write_partition_table(&prep.partitions);
    // histograms over the training rows, without lookback context
    text.push_str("# histogram\tlevel\tchannel\tcounts\n");
    let train_rows = prep.train.values();
    let d = prep.columns.len();
    for p in &prep.partitions {
        for c in 0..d {
            let col: Vec<f64> = train_rows.iter().skip(c).step_by(d).copied().collect();
            let h = p.histogram(c, &col)?;
            let _ = writeln!(text, "# histogram\t{}\t{}\t{h:?}", p.level, prep.columns[c]);
        }
    }
    print!("{text}");
    if common.out.is_some() {
        let dir = out_dir(&cfg.output.dir)?;
        write(&dir.join("partitions.tsv"), text)?;
    }
    Ok(())
}
