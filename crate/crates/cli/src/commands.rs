use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use nse_core::data::{gen_synthetic, tokenize, write_labeled, write_pairs, SynthData, SynthSpec, SynthTask};
use nse_core::introspect::{build_graph, dump_memory_states, emit_dot};
use nse_core::nse::{EncodeOptions, Trace};
use nse_core::train::{evaluate, train_epoch, EpochRecord, MetricsLog, Precision, TrainConfig};
use nse_core::{Graph, ParameterSet, Real};

use crate::setup::{with_task, Setup, Task, TaskData};
use crate::{EvalArgs, SynthArgs, TraceArgs, TrainArgs, TranslateArgs, Usage};

const CHECKPOINT: &str = "model.ckpt";

/// Runs `$body` with `$t` bound to the scalar type for `$p`.
macro_rules! with_precision {
    ($p:expr, $t:ident => $body:expr) => {
        match $p {
            Precision::F32 => {
                type $t = f32;
                $body
            }
            Precision::F64 => {
                type $t = f64;
                $body
            }
        }
    };
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if !path.is_file() {
        return Err(Usage(format!("{what} `{}` does not exist", path.display())).into());
    }
    Ok(())
}

/// Splits a checkpoint argument into (run directory, checkpoint file).
fn checkpoint_paths(arg: &Path) -> Result<(PathBuf, PathBuf)> {
    let file = if arg.is_dir() { arg.join(CHECKPOINT) } else { arg.to_path_buf() };
    require_file(&file, "checkpoint")?;
    let dir = file.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((dir, file))
}

fn train_config(setup: &Setup, precision: Option<Precision>) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::from_kv(&setup.kv)?;
    if let Some(p) = precision {
        cfg.precision = p;
    }
    Ok(cfg)
}

pub fn train(args: TrainArgs) -> Result<()> {
    require_file(&args.config, "config")?;
    let mut setup = Setup::from_config(&args.config, &[])?;
    if let Some(seed) = args.seed {
        setup.kv.set("seed", seed);
    }
    if let Some(p) = args.precision {
        setup.kv.set("precision", if p == Precision::F64 { "f64" } else { "f32" });
    }
    let cfg = train_config(&setup, None)?;
    let train_path = setup.path("train").ok_or_else(|| Usage("the config has no `train` data".into()))?;
    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    setup.save(&args.out)?;
    with_precision!(cfg.precision, T => {
        let mut params = ParameterSet::<T>::new();
        let task = setup.build(&cfg, &mut params)?;
        with_task!(&task, |t| fit_and_log(t, &setup, &mut params, &cfg, &train_path, &args.out))
    })
}

fn fit_and_log<T: Real, O: TaskData<T>>(
    task: &O,
    setup: &Setup,
    params: &mut ParameterSet<T>,
    cfg: &TrainConfig,
    train_path: &Path,
    out: &Path,
) -> Result<()> {
    let train = task.examples(setup, &setup.read(train_path)?)?;
    let dev = match setup.path("dev") {
        Some(p) => Some(task.examples(setup, &setup.read(&p)?)?),
        None => None,
    };
    let keep_all = setup.kv.get_or("keep_checkpoints", false)?;
    let mut log = MetricsLog::create(out.join("metrics.csv"))?;
    eprintln!("training on {} examples, {} parameters", train.len(), params.num_scalars());
    for epoch in 0..cfg.epochs {
        let m = train_epoch(task, params, &train, cfg, epoch)?;
        let dev_m = dev.as_deref().map(|d| evaluate(task, params, d)).transpose()?;
        let eval_m = if cfg.eval_train { Some(evaluate(task, params, &train)?) } else { None };
        let rec = EpochRecord {
            epoch: epoch + 1,
            train_loss: m.loss,
            train_acc: m.accuracy,
            dev_loss: dev_m.map(|d| d.loss),
            dev_acc: dev_m.map(|d| d.accuracy),
            train_acc_eval: eval_m.map(|d| d.accuracy),
        };
        log.append(&rec)?;
        params.save(out.join(CHECKPOINT))?;
        if keep_all {
            params.save(out.join(format!("epoch-{}.ckpt", epoch + 1)))?;
        }
        eprintln!("epoch {}: {}", epoch + 1, rec.to_csv());
    }
    Ok(())
}

/// Rebuilds the model a run directory describes and loads its weights.
fn restore<T: Real>(dir: &Path, file: &Path, setup: &Setup, cfg: &TrainConfig) -> Result<(Task, ParameterSet<T>)> {
    let mut params = ParameterSet::<T>::new();
    let task = setup.build(cfg, &mut params)?;
    params
        .load(file)
        .with_context(|| format!("loading {} for the model in {}", file.display(), dir.display()))?;
    Ok((task, params))
}

pub fn eval(args: EvalArgs) -> Result<()> {
    let (dir, file) = checkpoint_paths(&args.checkpoint)?;
    let setup = Setup::from_run_dir(&dir)?;
    let cfg = train_config(&setup, args.precision)?;
    let data = match &args.data {
        Some(p) => {
            require_file(p, "data file")?;
            p.clone()
        }
        None => setup
            .path("dev")
            .or_else(|| setup.path("train"))
            .ok_or_else(|| Usage("no --data given and the run has no data paths".into()))?,
    };
    let records = setup.read(&data)?;
    let report = with_precision!(cfg.precision, T => {
        let (task, params) = restore::<T>(&dir, &file, &setup, &cfg)?;
        with_task!(&task, |t| eval_report(t, &task, &setup, &params, &records, args.trace)?)
    });
    print!("{}", report.0);
    if let Some(out) = &args.out {
        std::fs::create_dir_all(out)?;
        std::fs::write(out.join("eval.txt"), &report.0)?;
        if let Some(traces) = report.1 {
            std::fs::write(out.join("traces.txt"), traces)?;
        }
    }
    Ok(())
}

fn eval_report<T: Real, O: TaskData<T>>(
    t: &O,
    task: &Task,
    setup: &Setup,
    params: &ParameterSet<T>,
    records: &crate::setup::Records,
    trace: bool,
) -> Result<(String, Option<String>)> {
    let data = t.examples(setup, records)?;
    let m = evaluate(t, params, &data)?;
    let mut text = String::new();
    writeln!(text, "examples\t{}", data.len())?;
    writeln!(text, "loss\t{:.6}", m.loss)?;
    writeln!(text, "accuracy\t{:.6}", m.accuracy)?;
    for (name, v) in t.extra_metrics(params, &data)? {
        writeln!(text, "{name}\t{v:.6}")?;
    }
    let traces = if trace {
        let mut all = String::new();
        for ex in &data {
            let ids = t.traced_tokens(ex);
            let labels = setup.vocab.decode(ids)?.into_iter().map(str::to_string).collect();
            all.push_str(&trace_ids(task, params, ids, labels)?.to_text());
        }
        Some(all)
    } else {
        None
    };
    Ok((text, traces))
}

/// Encodes `ids` with the task's memory encoder, recording key vectors.
fn trace_ids<T: Real>(task: &Task, params: &ParameterSet<T>, ids: &[usize], labels: Vec<String>) -> Result<Trace> {
    let (embed, encoder) = task.traced_encoder()?;
    let mut g = Graph::with_params(params);
    let xs = embed.lookup(&mut g, ids)?;
    let enc = encoder.encode_sequence(&mut g, &xs, vec![], &EncodeOptions::traced(Some(labels)))?;
    Ok(enc.trace.expect("tracing was requested"))
}

pub fn trace(args: TraceArgs) -> Result<()> {
    let tokens = tokenize(&args.text, false);
    if tokens.is_empty() {
        return Err(Usage("--text is empty".into()).into());
    }
    let (setup, checkpoint) = match (&args.checkpoint, &args.config) {
        (Some(c), _) => {
            let (dir, file) = checkpoint_paths(c)?;
            (Setup::from_run_dir(&dir)?, Some((dir, file)))
        }
        (None, Some(cfg)) => {
            require_file(cfg, "config")?;
            let mut s = Setup::from_config(cfg, &tokens)?;
            if let Some(seed) = args.seed {
                s.kv.set("init_seed", seed);
            }
            (s, None)
        }
        (None, None) => unreachable!("clap requires one of --checkpoint/--config"),
    };
    let tokens = if setup.kv.get_or("lowercase", false)? { tokenize(&args.text, true) } else { tokens };
    let cfg = train_config(&setup, args.precision)?;
    let ids = setup.vocab.encode(&tokens);
    let trace = with_precision!(cfg.precision, T => {
        let (task, params) = match &checkpoint {
            Some((dir, file)) => restore::<T>(dir, file, &setup, &cfg)?,
            None => {
                let mut p = ParameterSet::<T>::new();
                (setup.build(&cfg, &mut p)?, p)
            }
        };
        trace_ids(&task, &params, &ids, tokens.clone())?
    });
    let graph = build_graph(&trace, args.self_mask)?;
    let table = dump_memory_states(&trace)?;
    std::fs::create_dir_all(&args.out)?;
    std::fs::write(args.out.join("trace.txt"), trace.to_text())?;
    std::fs::write(args.out.join("graph.dot"), emit_dot(&graph))?;
    std::fs::write(args.out.join("memory.txt"), table.to_text())?;
    println!("{} steps traced to {}", trace.len(), args.out.display());
    Ok(())
}

pub fn translate(args: TranslateArgs) -> Result<()> {
    let (dir, file) = checkpoint_paths(&args.checkpoint)?;
    require_file(&args.input, "input file")?;
    let setup = Setup::from_run_dir(&dir)?;
    let cfg = train_config(&setup, args.precision)?;
    let lower = setup.kv.get_or("lowercase", false)?;
    let text = std::fs::read_to_string(&args.input)?;
    let sources: Vec<Vec<String>> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| tokenize(l.rsplit('\t').next().unwrap_or(l), lower))
        .collect();
    let (lines, traces) = with_precision!(cfg.precision, T => {
        let (task, params) = restore::<T>(&dir, &file, &setup, &cfg)?;
        let Task::Seq2Seq(s2s) = &task else {
            bail!("translate needs a seq2seq checkpoint, this run is a `{}` task", setup.kv.get("task").unwrap_or("?"));
        };
        let mut lines = String::new();
        let mut traces = String::new();
        for src in &sources {
            let ids = setup.vocab.encode(src);
            let mut g = Graph::with_params(&params);
            let out = s2s.translate(&mut g, &ids, args.max_len.unwrap_or(2 * ids.len() + 2))?;
            let words: Vec<&str> = setup
                .vocab
                .decode(&out)?
                .into_iter()
                .filter(|&w| w != nse_core::data::EOS)
                .collect();
            writeln!(lines, "{}", words.join(" "))?;
            if args.trace {
                traces.push_str(&trace_ids(&task, &params, &ids, src.clone())?.to_text());
            }
        }
        (lines, traces)
    });
    std::fs::write(&args.out, lines).with_context(|| format!("writing {}", args.out.display()))?;
    if args.trace {
        let mut path = args.out.clone().into_os_string();
        path.push(".trace");
        std::fs::write(path, traces)?;
    }
    eprintln!("translated {} sentences", sources.len());
    Ok(())
}

pub fn synth(args: SynthArgs) -> Result<()> {
    let task: SynthTask = args.task.parse().map_err(|e: nse_core::Error| Usage(e.to_string()))?;
    let (vocab, min, max) = match task {
        SynthTask::AssociativeRecall => (30, 1, 6),
        _ => (20, 1, 8),
    };
    let spec = SynthSpec::new(
        task,
        args.n,
        args.vocab.unwrap_or(vocab),
        args.min_len.unwrap_or(min),
        args.max_len.unwrap_or(max),
        args.seed,
    );
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    match gen_synthetic(&spec)? {
        SynthData::Sequences(s) => write_labeled(&args.out, &s.iter().map(|e| e.to_labeled()).collect::<Vec<_>>())?,
        SynthData::Pairs(p) => write_pairs(&args.out, &p)?,
    }
    eprintln!("wrote {} examples to {}", args.n, args.out.display());
    Ok(())
}
