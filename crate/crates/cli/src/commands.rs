use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use serde_json::{json, Value};

use hlgt::config::{Precision, TrainConfig};
use hlgt::data::{generate_synthetic, load_dataset, parse_line, write_dataset, ConstantTable, Problem, Strictness};
use hlgt::graph::{graph_stats, line_to_dot, to_dot, to_json, GraphStats};
use hlgt::model::{Instance, Model};
use hlgt::numeric::{ParamStore, Tape};
use hlgt::train::{
    evaluate, load_checkpoint, predict, prepare, run_gradcheck, save_checkpoint, thread_pool, train_with,
    GradcheckOptions,
};

use crate::{EvalArgs, GenerateArgs, GradcheckArgs, GraphArgs, PrecisionArg, SolveArgs, TrainArgs};

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create output directory {}", dir.display()))
}

fn create_file(path: &Path) -> Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn write_json(path: &Path, value: &Value) -> Result<()> {
    let mut w = create_file(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

/// Loads a dataset, skipping invalid records with a warning.
fn load_problems(path: &Path, constants: &ConstantTable) -> Result<Vec<Problem>> {
    let report = load_dataset(path, constants, Strictness::Lenient)?;
    if !report.errors.is_empty() {
        log::warn!("{}: skipped {} invalid record(s)", path.display(), report.errors.len());
    }
    if report.problems.is_empty() && !report.errors.is_empty() {
        bail!("{}: no valid problems ({})", path.display(), report.errors[0]);
    }
    Ok(report.problems)
}

fn restore(path: &Path) -> Result<(TrainConfig, Model, ParamStore)> {
    let cp = load_checkpoint(path).with_context(|| format!("cannot load checkpoint {}", path.display()))?;
    let (model, store) = cp.restore()?;
    Ok((cp.meta.config, model, store))
}

pub fn train(a: TrainArgs) -> Result<ExitCode> {
    let mut cfg = TrainConfig::load(&a.config).with_context(|| format!("config {}", a.config.display()))?;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    if let Some(p) = a.precision {
        cfg.precision = match p {
            PrecisionArg::F32 => Precision::F32,
            PrecisionArg::F64 => Precision::F64,
        };
    }
    for flag in &a.ablate {
        cfg.ablate.parse_flag(flag.flag())?;
    }
    cfg.validate()?;
    let constants = cfg.constant_table()?;
    let train_set = load_problems(&a.train, &constants)?;
    let valid_set = match &a.valid {
        Some(p) => load_problems(p, &constants)?,
        None => Vec::new(),
    };
    create_dir(&a.out)?;
    write_json(&a.out.join("config.json"), &serde_json::to_value(&cfg)?)?;

    let metrics_path = a.out.join("metrics.jsonl");
    let mut metrics = create_file(&metrics_path)?;
    let mut write_error: Option<io::Error> = None;
    let outcome = train_with(&cfg, &train_set, &valid_set, |m, _, _| {
        let line = serde_json::to_string(m).expect("metrics serialize");
        match writeln!(metrics, "{line}").and_then(|_| metrics.flush()) {
            Ok(()) => true,
            Err(e) => {
                write_error = Some(e);
                false
            }
        }
    })?;
    if let Some(e) = write_error {
        return Err(e).with_context(|| format!("cannot write {}", metrics_path.display()));
    }
    save_checkpoint(&a.out.join("last.ckpt"), &outcome.last)?;
    save_checkpoint(&a.out.join("best.ckpt"), &outcome.best)?;
    if let Some(m) = outcome.metrics.last() {
        println!("{}", serde_json::to_string(m)?);
    }
    Ok(ExitCode::SUCCESS)
}

pub fn eval(a: EvalArgs) -> Result<ExitCode> {
    let (cfg, model, store) = restore(&a.checkpoint)?;
    let problems = load_problems(&a.test, &model.constants)?;
    let insts = prepare(&model, &problems)?;
    let pool = thread_pool()?;
    let (m, preds) = pool.install(|| evaluate(&model, &store, &insts, a.beam, cfg.answer_tolerance))?;
    let out = json!({
        "problems": m.problems,
        "beam": a.beam,
        "expression_accuracy": m.expression_accuracy,
        "answer_accuracy": m.answer_accuracy,
        "comparison_accuracy": m.comparison_accuracy,
        "comparison_pairs": m.comparison_pairs,
    });
    println!("{}", serde_json::to_string(&out)?);
    if let Some(dir) = &a.out {
        create_dir(dir)?;
        write_json(&dir.join("eval.json"), &out)?;
        let mut w = create_file(&dir.join("predictions.jsonl"))?;
        for p in &preds {
            writeln!(w, "{}", serde_json::to_string(p)?)?;
        }
        w.flush()?;
    }
    Ok(ExitCode::SUCCESS)
}

pub fn solve(a: SolveArgs) -> Result<ExitCode> {
    let (cfg, model, store) = restore(&a.checkpoint)?;
    let text = fs::read_to_string(&a.test).with_context(|| format!("cannot read {}", a.test.display()))?;
    let mut sink: Box<dyn Write> = match &a.out {
        Some(dir) => {
            create_dir(dir)?;
            Box::new(create_file(&dir.join("predictions.jsonl"))?)
        }
        None => Box::new(BufWriter::new(io::stdout().lock())),
    };
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record = parse_line(line, &model.constants)
            .and_then(|p| model.instance(&p))
            .and_then(|inst| predict(&model, &store, &inst, a.beam, cfg.answer_tolerance));
        let value = match record {
            Ok(p) => {
                let mut v = serde_json::to_value(p)?;
                v["line"] = json!(i + 1);
                v
            }
            Err(e) => json!({ "line": i + 1, "error": e.to_string() }),
        };
        writeln!(sink, "{}", serde_json::to_string(&value)?)?;
    }
    sink.flush()?;
    Ok(ExitCode::SUCCESS)
}

/// File-name-safe form of a problem id, unique within `taken`.
fn file_stem(id: &str, taken: &mut BTreeSet<String>) -> String {
    let mut base: String = id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    if base.is_empty() {
        base.push_str("problem");
    }
    let mut stem = base.clone();
    let mut k = 1;
    while !taken.insert(stem.clone()) {
        stem = format!("{base}_{k}");
        k += 1;
    }
    stem
}

fn attention_trace(model: &Model, store: &ParamStore, inst: &Instance) -> Result<Value> {
    let mut tape = Tape::inference();
    let enc = model.encoder.encode(&mut tape, store, inst)?;
    let token = |node: usize| inst.problem.tokens[inst.graph.nodes[node].token_index].clone();
    let rows = |v: Option<&hlgt::numeric::Var>| -> Vec<Vec<f64>> {
        match v {
            Some(v) => {
                let t = tape.value(*v);
                (0..t.rows()).map(|r| t.row_slice(r).to_vec()).collect()
            }
            None => Vec::new(),
        }
    };
    let mut layers = Vec::new();
    for l in 0..enc.origin_attention.len() {
        let origin = rows(enc.origin_attention[l].as_ref());
        let line = rows(enc.line_attention.get(l).and_then(Option::as_ref));
        let origin: Vec<Value> = inst
            .graph
            .edges
            .iter()
            .zip(origin)
            .map(|(e, w)| json!({"src": e.src, "dst": e.dst, "src_token": token(e.src), "dst_token": token(e.dst), "type": e.kind.name(), "weights": w}))
            .collect();
        let line: Vec<Value> = inst
            .line
            .edges
            .iter()
            .zip(line)
            .map(|(e, w)| json!({"from": e.from, "to": e.to, "shared": e.shared, "shared_token": token(e.shared), "weights": w}))
            .collect();
        layers.push(json!({"layer": l, "origin": origin, "line": line}));
    }
    Ok(json!({"id": inst.problem.id, "heads": model.config.heads, "layers": layers}))
}

pub fn graph(a: GraphArgs) -> Result<ExitCode> {
    let trace = match &a.checkpoint {
        Some(p) => Some(restore(p)?),
        None => None,
    };
    let constants = match &trace {
        Some((_, m, _)) => m.constants.clone(),
        None => ConstantTable::default(),
    };
    let problems = load_problems(&a.test, &constants)?;
    create_dir(&a.out)?;
    let mut taken = BTreeSet::new();
    let mut total = GraphStats::default();
    let mut index = Vec::new();
    for p in &problems {
        let stem = file_stem(&p.id, &mut taken);
        let g = hlgt::graph::build_hetero_graph(p);
        let l = hlgt::graph::to_line_graph(&g);
        fs::write(a.out.join(format!("{stem}.dot")), to_dot(p, &g))?;
        fs::write(a.out.join(format!("{stem}.line.dot")), line_to_dot(p, &g, &l))?;
        write_json(&a.out.join(format!("{stem}.json")), &to_json(p, &g, &l))?;
        if let Some((_, model, store)) = &trace {
            let inst = model.instance(p)?;
            write_json(&a.out.join(format!("{stem}.attention.json")), &attention_trace(model, store, &inst)?)?;
        }
        total.merge(&graph_stats(&g));
        index.push(json!({"id": p.id, "file": stem, "nodes": g.nodes.len(), "edges": g.edges.len(), "line_edges": l.edges.len()}));
    }
    write_json(&a.out.join("stats.json"), &json!({"problems": index, "totals": total}))?;
    println!("wrote graphs of {} problem(s) to {}", problems.len(), a.out.display());
    Ok(ExitCode::SUCCESS)
}

pub fn gradcheck(a: GradcheckArgs) -> Result<ExitCode> {
    let opts = GradcheckOptions {
        seed: a.seed,
        flip_sign_of: a.flip_sign,
        ..GradcheckOptions::default()
    };
    let report = run_gradcheck(&opts)?;
    println!("{report}");
    if let Some(dir) = &a.out {
        create_dir(dir)?;
        write_json(&dir.join("gradcheck.json"), &serde_json::to_value(&report)?)?;
    }
    if report.passed {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!(
            "gradcheck failed: worst offender {} (relative error {:.3e}, tolerance {:.0e})",
            report.worst, report.max_rel_error, report.tolerance
        );
        Ok(ExitCode::FAILURE)
    }
}

pub fn generate(a: GenerateArgs) -> Result<ExitCode> {
    create_dir(&a.out)?;
    let path: PathBuf = a.out.join("synthetic.jsonl");
    write_dataset(&path, &generate_synthetic(a.seed, a.count))?;
    println!("wrote {} problem(s) to {}", a.count, path.display());
    Ok(ExitCode::SUCCESS)
}
