use std::fs;
use std::path::{Path, PathBuf};

use rankloss::data::{items_to_jsonl, load_items, load_jsonl, records_to_jsonl, synth_generate, write_atomic, SynthConfig};
use rankloss::eval::sweeps::{self, SweepConfig};
use rankloss::eval::{evaluate_run, Qrels};
use rankloss::losses::LossKind;
use rankloss::trainer::{load_checkpoint, save_checkpoint, train, GradCheckConfig, TrainConfig, Validation};
use rankloss::{Error, Result};

use crate::config::{apply, read_kv, Overrides};
use crate::manifest::ManifestBuilder;
use crate::{EvalArgs, SweepArgs, SweepKind, SynthArgs, TrainArgs};

pub const CORPUS_FILE: &str = "corpus.jsonl";
pub const QUERIES_FILE: &str = "queries.jsonl";
pub const VAL_QUERIES_FILE: &str = "val_queries.jsonl";
pub const RECORDS_FILE: &str = "records.jsonl";
pub const QRELS_FILE: &str = "qrels.txt";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const TRAIN_LOG_FILE: &str = "train_log.jsonl";
pub const RUN_FILE: &str = "run.trec";
pub const METRICS_FILE: &str = "metrics.csv";

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })
}

/// Config file entries first, then `--set` pairs, then dedicated flags.
fn layered(config: Option<&Path>, sets: &Overrides, flags: Overrides) -> Result<Overrides> {
    let mut out = match config {
        Some(p) => read_kv(p)?,
        None => Vec::new(),
    };
    out.extend(sets.iter().cloned());
    out.extend(flags);
    Ok(out)
}

fn flag<T: ToString>(out: &mut Overrides, key: &str, value: &Option<T>) {
    if let Some(v) = value {
        out.push((key.to_owned(), v.to_string()));
    }
}

fn write_text(manifest: &mut ManifestBuilder, name: &str, path: PathBuf, text: &str) -> Result<()> {
    write_atomic(&path, text.as_bytes())?;
    manifest.output(name, &path);
    Ok(())
}

pub fn synth(args: &SynthArgs) -> Result<()> {
    let mut flags = Vec::new();
    flag(&mut flags, "seed", &args.seed);
    flag(&mut flags, "queries", &args.queries);
    flag(&mut flags, "topics", &args.topics);
    flag(&mut flags, "hard_negatives", &args.hard_negs);
    if let Some(levels) = &args.levels {
        flags.push(("levels".into(), format!("[{levels}]")));
    }
    let cfg: SynthConfig = apply(&SynthConfig::default(), &layered(args.config.as_deref(), &args.set, flags)?)?;
    let mut manifest = ManifestBuilder::start("synth");
    manifest.config(cfg.seed, &cfg);
    let data = synth_generate(&cfg)?;

    let out = &args.out;
    create_dir(out)?;
    write_text(&mut manifest, "corpus", out.join(CORPUS_FILE), &items_to_jsonl(&data.corpus))?;
    write_text(&mut manifest, "queries", out.join(QUERIES_FILE), &items_to_jsonl(&data.queries))?;
    write_text(&mut manifest, "val_queries", out.join(VAL_QUERIES_FILE), &items_to_jsonl(&data.val_queries))?;
    write_text(&mut manifest, "records", out.join(RECORDS_FILE), &records_to_jsonl(&data.records))?;
    write_text(&mut manifest, "qrels", out.join(QRELS_FILE), &data.qrels.to_trec())?;
    manifest.write(out)?;
    println!(
        "wrote {} records, {} documents, {} test queries to {}",
        data.records.len(),
        data.corpus.len(),
        data.queries.len(),
        out.display()
    );
    Ok(())
}

pub fn train_cmd(args: &TrainArgs) -> Result<()> {
    let mut flags = Vec::new();
    flag(&mut flags, "loss", &args.loss);
    flag(&mut flags, "epochs", &args.epochs);
    flag(&mut flags, "batch", &args.batch);
    flag(&mut flags, "hard_negatives", &args.hard_negs);
    flag(&mut flags, "base_lr", &args.lr);
    flag(&mut flags, "beta_lr_multiplier", &args.beta_lr_mult);
    flag(&mut flags, "alpha", &args.alpha);
    flag(&mut flags, "seed", &args.seed);
    let cfg: TrainConfig = apply(&TrainConfig::default(), &layered(args.config.as_deref(), &args.set, flags)?)?;
    cfg.validate()?;

    let mut manifest = ManifestBuilder::start("train");
    manifest.config(cfg.seed, &cfg);
    let records_path = if args.data.is_dir() {
        args.data.join(RECORDS_FILE)
    } else {
        args.data.clone()
    };
    manifest.input("records", &records_path);
    let records = load_jsonl(&records_path)?;

    let validation = if args.validate {
        let dir = if args.data.is_dir() {
            args.data.as_path()
        } else {
            args.data.parent().unwrap_or(Path::new("."))
        };
        manifest.input("val_queries", &dir.join(VAL_QUERIES_FILE));
        manifest.input("corpus", &dir.join(CORPUS_FILE));
        manifest.input("qrels", &dir.join(QRELS_FILE));
        Some(Validation {
            queries: load_items(dir.join(VAL_QUERIES_FILE))?,
            corpus: load_items(dir.join(CORPUS_FILE))?,
            qrels: Qrels::load(dir.join(QRELS_FILE))?,
            k: 10,
        })
    } else {
        None
    };

    println!(
        "training {} on {} records: batch {}, {} hard negatives, peak lr {:.5}",
        cfg.loss,
        records.len(),
        cfg.batch,
        cfg.hard_negatives,
        cfg.peak_lr()
    );
    let outcome = train(&records, &cfg, validation.as_ref())?;
    let mut log = String::new();
    for e in &outcome.epochs {
        let val = e.val_ndcg.map(|v| format!(" val_ndcg@10 {v:.4}")).unwrap_or_default();
        println!(
            "epoch {} steps {} loss {:.6} lr {:.6} beta {:.4}{val}",
            e.epoch, e.steps, e.mean_loss, e.lr, e.beta
        );
        log.push_str(&serde_json::to_string(e).expect("log serializes"));
        log.push('\n');
    }
    if let Some(best) = outcome.best_epoch {
        println!("kept epoch {best} by validation nDCG@10");
    }

    create_dir(&args.out)?;
    let ckpt = args.out.join(CHECKPOINT_FILE);
    save_checkpoint(&ckpt, &outcome.params)?;
    manifest.output("checkpoint", &ckpt);
    write_text(&mut manifest, "log", args.out.join(TRAIN_LOG_FILE), &log)?;
    manifest.write(&args.out)?;
    println!("checkpoint written to {}", ckpt.display());
    Ok(())
}

pub fn eval_cmd(args: &EvalArgs) -> Result<()> {
    let mut manifest = ManifestBuilder::start("eval");
    manifest.config(0, &serde_json::json!({ "k": args.k, "tag": args.tag }));
    manifest.input("checkpoint", &args.checkpoint);
    manifest.input("queries", &args.queries);
    manifest.input("corpus", &args.corpus);
    manifest.input("qrels", &args.qrels);

    let qrels = Qrels::load(&args.qrels)?;
    let params = load_checkpoint(&args.checkpoint)?;
    let queries = load_items(&args.queries)?;
    let corpus = load_items(&args.corpus)?;
    let (row, run) = evaluate_run(&params, &queries, &corpus, &qrels, args.k)?;

    println!(
        "ndcg@{} {:.6} ({} of {} queries evaluated, {} skipped, judged coverage {:.3})",
        row.k, row.ndcg, row.evaluated, row.queries, row.skipped, row.judged_coverage
    );

    create_dir(&args.out)?;
    write_text(&mut manifest, "run", args.out.join(RUN_FILE), &run.to_trec(&args.tag))?;

    let metrics = args.metrics.clone().unwrap_or_else(|| args.out.join(METRICS_FILE));
    let mut csv = match fs::read_to_string(&metrics) {
        Ok(text) => text,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            "checkpoint,k,ndcg,evaluated,skipped,queries,judged_coverage\n".to_owned()
        }
        Err(source) => return Err(Error::Io { path: metrics, source }),
    };
    csv.push_str(&format!(
        "{},{},{},{},{},{},{}\n",
        args.checkpoint.display(),
        row.k,
        row.ndcg,
        row.evaluated,
        row.skipped,
        row.queries,
        row.judged_coverage
    ));
    write_text(&mut manifest, "metrics", metrics, &csv)?;
    manifest.write(&args.out)
}

fn parse_list<T: std::str::FromStr>(raw: &str, what: &str) -> Result<Vec<T>> {
    raw.split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| Error::ConfigInvalid(format!("bad {what} `{s}`")))
        })
        .collect()
}

fn parse_batch_grid(raw: &str) -> Result<Vec<(usize, usize)>> {
    raw.split(',')
        .map(|cell| {
            let (k, b) = cell
                .trim()
                .split_once('x')
                .ok_or_else(|| Error::ConfigInvalid(format!("grid cell `{cell}` is not KxB")))?;
            let num = |s: &str| {
                s.parse::<usize>()
                    .map_err(|_| Error::ConfigInvalid(format!("bad grid cell `{cell}`")))
            };
            Ok((num(k)?, num(b)?))
        })
        .collect()
}

pub fn sweep_cmd(args: &SweepArgs) -> Result<()> {
    let out = &args.out;
    let mut manifest = ManifestBuilder::start(&format!("sweep {}", args.kind.name()));

    if args.kind == SweepKind::Gradcheck {
        let cfg = GradCheckConfig::default();
        manifest.config(cfg.seed, &cfg);
        let rows = sweeps::sweep_gradcheck(&cfg)?;
        println!("{:<14} {:>14} {:>14}", "loss", "max rel err", "max abs err");
        for r in &rows {
            println!("{:<14} {:>14.3e} {:>14.3e}", r.loss.name(), r.max_rel_error, r.max_abs_error);
        }
        create_dir(out)?;
        write_text(&mut manifest, "csv", out.join("gradcheck.csv"), &sweeps::gradcheck_csv(&rows))?;
        return manifest.write(out);
    }

    let base = match args.kind {
        SweepKind::Noise => SweepConfig::noise_preset(),
        SweepKind::Cutoff => SweepConfig::cutoff_preset(),
        SweepKind::Batchgrid => SweepConfig::batch_grid_preset(),
        SweepKind::Biaslr => SweepConfig::bias_lr_preset(),
        SweepKind::Gradcheck => unreachable!(),
    };
    let mut flags = Vec::new();
    flag(&mut flags, "jobs", &args.jobs);
    flag(&mut flags, "seeds", &args.seeds);
    let cfg: SweepConfig = apply(&base, &layered(args.config.as_deref(), &args.set, flags)?)?;
    let grid = args.grid.as_deref();

    let csv = match args.kind {
        SweepKind::Noise => {
            let ps = grid.map(|g| parse_list(g, "noise probability")).transpose()?;
            let ps = ps.unwrap_or_else(|| sweeps::DEFAULT_NOISE_GRID.to_vec());
            manifest.config(cfg.first_seed, &serde_json::json!({ "sweep": cfg, "grid": ps }));
            let rows = sweeps::sweep_noise(&cfg, &ps)?;
            for loss in [LossKind::InfoNce, LossKind::Bixse] {
                println!("{:<8} degradation {:.4}", loss.name(), sweeps::noise_degradation(&rows, loss));
            }
            sweeps::noise_csv(&rows, cfg.k)
        }
        SweepKind::Cutoff => {
            let cs = grid.map(|g| parse_list(g, "cutoff")).transpose()?;
            let cs = cs.unwrap_or_else(|| sweeps::DEFAULT_CUTOFF_GRID.to_vec());
            manifest.config(cfg.first_seed, &serde_json::json!({ "sweep": cfg, "grid": cs }));
            let rows = sweeps::sweep_cutoff(&cfg, &cs)?;
            for loss in [LossKind::InfoNce, LossKind::Bixse] {
                let med = sweeps::cutoff_medians(&rows, loss);
                let cells: Vec<String> = med.iter().map(|(c, m)| format!("{c}:{m:.4}")).collect();
                println!("{:<8} {}", loss.name(), cells.join(" "));
            }
            sweeps::cutoff_csv(&rows, cfg.k)
        }
        SweepKind::Batchgrid => {
            let cells = grid.map(parse_batch_grid).transpose()?;
            let cells = cells.unwrap_or_else(|| sweeps::DEFAULT_BATCH_GRID.to_vec());
            let losses = match &args.losses {
                Some(l) => parse_list::<LossKind>(l, "loss")?,
                None => vec![LossKind::Bixse, LossKind::PairwiseBce, LossKind::LambdaNdcg2],
            };
            manifest.config(
                cfg.first_seed,
                &serde_json::json!({ "sweep": cfg, "grid": cells, "losses": losses }),
            );
            let rows = sweeps::sweep_batch_grid(&cfg, &losses, &cells)?;
            for &loss in &losses {
                let med = sweeps::batch_grid_medians(&rows, loss);
                let cells: Vec<String> = med.iter().map(|((k, b), m)| format!("({k},{b}):{m:.4}")).collect();
                println!("{:<14} {}", loss.name(), cells.join(" "));
            }
            sweeps::batch_grid_csv(&rows, cfg.k)
        }
        SweepKind::Biaslr => {
            let ms = grid.map(|g| parse_list(g, "multiplier")).transpose()?;
            let ms = ms.unwrap_or_else(|| sweeps::DEFAULT_BIAS_LR_GRID.to_vec());
            manifest.config(cfg.first_seed, &serde_json::json!({ "sweep": cfg, "grid": ms }));
            let rows = sweeps::sweep_bias_lr(&cfg, &ms)?;
            for &m in &ms {
                let v: Vec<f64> = rows.iter().filter(|r| r.multiplier == m).map(|r| r.ndcg).collect();
                let b: Vec<f64> = rows.iter().filter(|r| r.multiplier == m).map(|r| r.beta).collect();
                println!(
                    "beta lr x{m:<8} median ndcg@{} {:.4} median beta {:.3}",
                    cfg.k,
                    sweeps::median(&v),
                    sweeps::median(&b)
                );
            }
            sweeps::bias_lr_csv(&rows, cfg.k)
        }
        SweepKind::Gradcheck => unreachable!(),
    };
    create_dir(out)?;
    write_text(&mut manifest, "csv", out.join(format!("{}.csv", args.kind.name())), &csv)?;
    manifest.write(out)
}
