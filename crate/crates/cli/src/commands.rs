use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::ArgMatches;
use misdetect::augment::{Augmenter, SynonymTable};
use misdetect::checkpoint::Checkpoint;
use misdetect::config::TrainConfig;
use misdetect::datagen::{builtin_synonyms, generate_corpus, split, CorpusSpec};
use misdetect::gradcheck::{check_model, ModelCheck};
use misdetect::harness::{cross_domain_eval, evaluate, run_ablation, run_augment_comparison};
use misdetect::text::{read_records, write_records, RawRecord, Vocab};
use misdetect::trainer::{load_stopwords, load_synonyms, tokenize_record, Dataset};
use misdetect::Error;
use serde_json::json;

use crate::Failure;

type CmdResult = Result<(), Failure>;

pub struct Context {
    command: String,
    argv: Vec<String>,
    started: Instant,
}

impl Context {
    pub fn new(command: &str, argv: &[String]) -> Self {
        Self {
            command: command.to_owned(),
            argv: argv.to_vec(),
            started: Instant::now(),
        }
    }

    /// Records what was run, with which settings and build, and how long it took.
    fn manifest(&self, path: &Path, cfg: Option<&TrainConfig>, seed: u64, outputs: &[PathBuf]) -> CmdResult {
        let m = json!({
            "command": self.command,
            "argv": self.argv,
            "seed": seed,
            "config": cfg.map(TrainConfig::to_text),
            "version": env!("CARGO_PKG_VERSION"),
            "git_describe": env!("MISDETECT_GIT_DESCRIBE"),
            "wall_time_secs": self.started.elapsed().as_secs_f64(),
            "outputs": outputs.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
        });
        write(path, &(serde_json::to_string_pretty(&m).expect("serializable") + "\n"))
    }
}

fn io_err(path: &Path, source: std::io::Error) -> Failure {
    Failure::Lib(Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write(path: &Path, contents: &str) -> CmdResult {
    fs::write(path, contents).map_err(|e| io_err(path, e))
}

fn out_dir(m: &ArgMatches) -> Result<PathBuf, Failure> {
    let dir = PathBuf::from(m.get_one::<String>("out").expect("required"));
    fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    Ok(dir)
}

/// Parent-directory creation for a single output file.
fn out_file(m: &ArgMatches) -> Result<PathBuf, Failure> {
    let path = PathBuf::from(m.get_one::<String>("out").expect("required"));
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    Ok(path)
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Defaults, then the config file, then per-key flags.
fn load_config(m: &ArgMatches) -> Result<TrainConfig, Failure> {
    let mut cfg = match m.get_one::<String>("config") {
        Some(p) => TrainConfig::load(Path::new(p))?,
        None => TrainConfig::default(),
    };
    for (key, _) in TrainConfig::KEYS {
        if let Some(v) = m.get_one::<String>(key) {
            cfg.set(key, v)
                .map_err(|msg| Failure::Usage(format!("--{}: {msg}", key.replace('_', "-"))))?;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_corpus(m: &ArgMatches) -> Result<Vec<RawRecord>, Failure> {
    match m.get_one::<String>("data") {
        Some(p) => Ok(read_records(Path::new(p))?),
        None => {
            let name = m.get_one::<String>("spec").expect("has default");
            Ok(generate_corpus(&CorpusSpec::builtin(name)?)?)
        }
    }
}

fn prepare(records: &[RawRecord], cfg: &TrainConfig) -> Result<(Dataset, SynonymTable), Failure> {
    let splits = split(records, cfg.ratios(), cfg.seed)?;
    Ok((Dataset::build(&splits, cfg)?, load_synonyms(cfg)?))
}

pub fn gen(ctx: &Context, m: &ArgMatches) -> CmdResult {
    let mut spec = CorpusSpec::builtin(m.get_one::<String>("spec").expect("has default"))?;
    if let Some(&n) = m.get_one::<usize>("n") {
        spec.n_examples = n;
    }
    if let Some(&s) = m.get_one::<u64>("seed") {
        spec.seed = s;
    }
    if let Some(&c) = m.get_one::<f64>("cue-strength") {
        spec.cue_strength = c;
    }
    if let Some(&c) = m.get_one::<f64>("noise-rate") {
        spec.noise_rate = c;
    }
    if let Some(&c) = m.get_one::<f64>("stance-fraction") {
        spec.stance_fraction = c;
    }
    let corpus = generate_corpus(&spec)?;
    let out = out_file(m)?;
    write_records(&out, &corpus)?;
    let mut outputs = vec![out.clone()];
    if let Some(p) = m.get_one::<String>("synonyms-out") {
        let p = PathBuf::from(p);
        write(&p, &builtin_synonyms().to_text())?;
        outputs.push(p);
    }
    ctx.manifest(&sibling(&out, ".manifest.json"), None, spec.seed, &outputs)?;
    println!("wrote {} records to {}", corpus.len(), out.display());
    Ok(())
}

pub fn augment(ctx: &Context, m: &ArgMatches) -> CmdResult {
    let cfg = load_config(m)?;
    let records = read_records(Path::new(m.get_one::<String>("data").expect("required")))?;
    let stopwords = load_stopwords(&cfg)?;
    let tokens: Vec<Vec<String>> = records.iter().map(|r| tokenize_record(r, &stopwords)).collect();
    let vocab = Vocab::build(tokens.iter().map(Vec::as_slice), cfg.min_count);
    let augmenter = Augmenter::new(
        cfg.augment_config(),
        load_synonyms(&cfg)?,
        vocab.content_tokens().to_vec(),
    )?;
    let mut text = String::new();
    for (i, (r, t)) in records.iter().zip(&tokens).enumerate() {
        let (a, b) = augmenter.views_for(t, 0, i as u64)?;
        let line = json!({ "id": r.id, "view1": a.join(" "), "view2": b.join(" ") });
        text.push_str(&line.to_string());
        text.push('\n');
    }
    let out = out_file(m)?;
    write(&out, &text)?;
    ctx.manifest(
        &sibling(&out, ".manifest.json"),
        Some(&cfg),
        cfg.seed,
        std::slice::from_ref(&out),
    )?;
    println!("wrote views for {} records to {}", records.len(), out.display());
    Ok(())
}

pub fn train(ctx: &Context, m: &ArgMatches) -> CmdResult {
    let cfg = load_config(m)?;
    let records = read_records(Path::new(m.get_one::<String>("data").expect("required")))?;
    let dir = out_dir(m)?;
    let (data, synonyms) = prepare(&records, &cfg)?;
    let outcome = match misdetect::trainer::train(&data, &cfg, &synonyms) {
        Ok(o) => o,
        Err(Error::Diverged { epoch, msg, last_good }) => {
            let path = dir.join("last_good.ckpt");
            last_good.save(&path)?;
            return Err(Failure::Lib(Error::Diverged {
                epoch,
                msg: format!("{msg}; last good checkpoint saved to {}", path.display()),
                last_good,
            }));
        }
        Err(e) => return Err(e.into()),
    };
    let ckpt = dir.join("checkpoint.ckpt");
    let report = dir.join("report.jsonl");
    outcome.checkpoint.save(&ckpt)?;
    write(&report, &outcome.report.to_jsonl())?;
    ctx.manifest(&dir.join("manifest.json"), Some(&cfg), cfg.seed, &[ckpt, report])?;
    let t = outcome.report.test;
    println!(
        "best epoch {} of {}; test f1 {:.4} accuracy {:.4} precision {:.4} recall {:.4}",
        outcome.report.best_epoch, outcome.report.joint_epochs_run, t.f1, t.accuracy, t.precision, t.recall
    );
    Ok(())
}

pub fn eval(ctx: &Context, m: &ArgMatches) -> CmdResult {
    let ck = Checkpoint::load(Path::new(m.get_one::<String>("checkpoint").expect("required")))?;
    let records = read_records(Path::new(m.get_one::<String>("data").expect("required")))?;
    let dir = out_dir(m)?;
    let metrics = evaluate(&ck, &records)?;
    let path = dir.join("metrics.json");
    write(
        &path,
        &(serde_json::to_string_pretty(&metrics).expect("serializable") + "\n"),
    )?;
    ctx.manifest(&dir.join("manifest.json"), Some(&ck.config), ck.config.seed, &[path])?;
    println!(
        "f1 {:.4} accuracy {:.4} precision {:.4} recall {:.4} (n = {})",
        metrics.f1,
        metrics.accuracy,
        metrics.precision,
        metrics.recall,
        metrics.total()
    );
    Ok(())
}

pub fn ablate(ctx: &Context, m: &ArgMatches) -> CmdResult {
    let cfg = load_config(m)?;
    let runs = *m.get_one::<usize>("runs").expect("has default");
    let dir = out_dir(m)?;
    let (data, synonyms) = prepare(&load_corpus(m)?, &cfg)?;
    let table = run_ablation(&data, &cfg, &synonyms, runs)?;
    let (txt, jsonl) = (dir.join("ablation.txt"), dir.join("ablation.jsonl"));
    write(&txt, &table.render())?;
    write(&jsonl, &table.to_jsonl())?;
    ctx.manifest(&dir.join("manifest.json"), Some(&cfg), cfg.seed, &[txt, jsonl])?;
    print!("{}", table.render());
    Ok(())
}

pub fn augcompare(ctx: &Context, m: &ArgMatches) -> CmdResult {
    let cfg = load_config(m)?;
    let dir = out_dir(m)?;
    let (data, synonyms) = prepare(&load_corpus(m)?, &cfg)?;
    let table = run_augment_comparison(&data, &cfg, &synonyms)?;
    let (txt, jsonl) = (dir.join("augment.txt"), dir.join("augment.jsonl"));
    write(&txt, &table.render())?;
    write(&jsonl, &table.to_jsonl())?;
    ctx.manifest(&dir.join("manifest.json"), Some(&cfg), cfg.seed, &[txt, jsonl])?;
    print!("{}", table.render());
    Ok(())
}

pub fn crossdomain(ctx: &Context, m: &ArgMatches) -> CmdResult {
    let cfg = load_config(m)?;
    let dir = out_dir(m)?;
    let corpora: Vec<(String, Vec<RawRecord>)> = match m.get_many::<String>("data") {
        Some(files) => files
            .map(|f| {
                let recs = read_records(Path::new(f))?;
                let name = recs.first().map(|r| r.domain.clone()).ok_or(Error::EmptyDataset)?;
                Ok((name, recs))
            })
            .collect::<misdetect::Result<_>>()?,
        None => m
            .get_one::<String>("domains")
            .expect("has default")
            .split(',')
            .map(|name| {
                let spec = CorpusSpec::builtin(name.trim())?;
                Ok((spec.domain.clone(), generate_corpus(&spec)?))
            })
            .collect::<misdetect::Result<_>>()?,
    };
    let mut checkpoints = Vec::new();
    let mut tests = Vec::new();
    let mut outputs = Vec::new();
    for (name, records) in &corpora {
        let splits = split(records, cfg.ratios(), cfg.seed)?;
        let data = Dataset::build(&splits, &cfg)?;
        log::info!("cross-domain: training on {name}");
        let outcome = misdetect::trainer::train(&data, &cfg, &load_synonyms(&cfg)?)?;
        let path = dir.join(format!("{name}.ckpt"));
        outcome.checkpoint.save(&path)?;
        outputs.push(path);
        checkpoints.push((name.clone(), outcome.checkpoint));
        tests.push((name.clone(), splits.test));
    }
    let matrix = cross_domain_eval(&checkpoints, &tests)?;
    let (csv, txt, jsonl) = (
        dir.join("transfer.csv"),
        dir.join("transfer.txt"),
        dir.join("transfer.jsonl"),
    );
    write(&csv, &matrix.to_csv())?;
    write(&txt, &matrix.render())?;
    write(&jsonl, &(serde_json::to_string(&matrix).expect("serializable") + "\n"))?;
    outputs.extend([csv, txt, jsonl]);
    ctx.manifest(&dir.join("manifest.json"), Some(&cfg), cfg.seed, &outputs)?;
    print!("{}", matrix.render());
    Ok(())
}

pub fn gradcheck(ctx: &Context, m: &ArgMatches) -> CmdResult {
    let text_arg = |key: &str| m.get_one::<String>(key).expect("has default");
    let opts = ModelCheck {
        width: *m.get_one("width").expect("has default"),
        seq_len: *m.get_one("seq-len").expect("has default"),
        batch: *m.get_one("batch").expect("has default"),
        vocab_size: *m.get_one("vocab-size").expect("has default"),
        tau: *m.get_one("tau").expect("has default"),
        lambda: *m.get_one("lambda").expect("has default"),
        gate: text_arg("gate")
            .parse()
            .map_err(|e: Error| Failure::Usage(format!("--gate: {e}")))?,
        infonce: text_arg("infonce")
            .parse()
            .map_err(|e: Error| Failure::Usage(format!("--infonce: {e}")))?,
        seed: *m.get_one("seed").expect("has default"),
        step: *m.get_one("step").expect("has default"),
    };
    let tolerance: f64 = *m.get_one("tolerance").expect("has default");
    if opts.batch < 2 || opts.vocab_size < 3 || opts.width == 0 || !opts.width.is_multiple_of(2) || opts.seq_len == 0 {
        return Err(Failure::Usage(
            "need batch ≥ 2, vocab-size ≥ 3, a positive even width and seq-len ≥ 1".into(),
        ));
    }
    let report = check_model(&opts)?;
    let line = report
        .iter()
        .map(|r| format!("{}: {:.3e}", r.group, r.max_rel_err))
        .collect::<Vec<_>>()
        .join(", ");
    let text = format!(
        "gradcheck width={} seq_len={} batch={} vocab_size={} tau={} lambda={} gate={} infonce={} seed={} step={:e}\n{line}\n",
        opts.width,
        opts.seq_len,
        opts.batch,
        opts.vocab_size,
        opts.tau,
        opts.lambda,
        opts.gate,
        opts.infonce,
        opts.seed,
        opts.step
    );
    print!("{text}");
    if let Some(dir) = m.get_one::<String>("out") {
        let dir = PathBuf::from(dir);
        fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
        let path = dir.join("gradcheck.txt");
        write(&path, &text)?;
        ctx.manifest(&dir.join("manifest.json"), None, opts.seed, &[path])?;
    }
    let worst = report.iter().max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err));
    match worst {
        Some(w) if w.max_rel_err > tolerance || !w.max_rel_err.is_finite() => Err(Failure::Tolerance(format!(
            "{} max relative error {:.3e} exceeds {tolerance:e} (worst parameter {})",
            w.group, w.max_rel_err, w.worst_param
        ))),
        _ => Ok(()),
    }
}
