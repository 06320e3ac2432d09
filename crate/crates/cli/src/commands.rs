use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use cqd::answer::co::co_answer;
use cqd::eval::{
    beam_grid, co_grid, evaluate, random_baseline, select_config, write_query_log, Method, MetricReport, MethodTable, Selection,
};
use cqd::model::train::{link_prediction_hits, train, write_log_csv, TrainConfig};
use cqd::model::{load_model, save_model, CalibrationKind};
use cqd::querygen::{read_jsonl, sample_queries, sample_queries_up_to, write_jsonl, QueryRecord, QueryType};
use cqd::synthetic::{generate, SyntheticConfig};
use cqd::{beam_answer, explain, parse_query, to_dnf, BeamConfig, CalibrationParams, CoConfig, KnowledgeGraph, Model, Split};
use serde::Serialize;

use crate::{AnswerArgs, Cli, Cmd, EvaluateArgs, FormatArg, GenerateArgs, MethodArg, MethodArgs, SplitArg, SynthArgs, TrainArgs};

pub fn run(cli: &Cli, resolved: &str) -> Result<()> {
    let root = cli.data_root.as_deref();
    match &cli.command {
        Cmd::Train(a) => cmd_train(a, root, resolved),
        Cmd::GenerateQueries(a) => cmd_generate(a, root, resolved),
        Cmd::Answer(a) => cmd_answer(a, a.explain, root, resolved),
        Cmd::Explain(a) => cmd_answer(a, true, root, resolved),
        Cmd::Evaluate(a) => cmd_evaluate(a, root, resolved),
        Cmd::SynthKg(a) => cmd_synth(a, resolved),
    }
}

/// Relative input paths live under the data root when one is set.
fn input(root: Option<&Path>, p: &Path) -> PathBuf {
    match root {
        Some(r) if p.is_relative() => r.join(p),
        _ => p.to_path_buf(),
    }
}

/// Named TSV triples, or the id-mapped layout when `entity2id.txt` is present.
fn load_kg(root: Option<&Path>, dir: &Path) -> Result<KnowledgeGraph> {
    let dir = input(root, dir);
    let kg = if dir.join("entity2id.txt").exists() {
        KnowledgeGraph::load_id_mapped(&dir)
    } else {
        KnowledgeGraph::load_dir(&dir)
    };
    kg.with_context(|| format!("loading graph from {}", dir.display()))
}

fn write_config(dir: &Path, name: &str, resolved: &str) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(format!("{name}.config"));
    fs::write(&path, resolved).with_context(|| format!("writing {}", path.display()))
}

fn cmd_train(a: &TrainArgs, root: Option<&Path>, resolved: &str) -> Result<()> {
    let kg = load_kg(root, &a.data)?;
    for split in Split::ALL {
        let c = kg.counts(split);
        println!("{:<5} {:>8} triples ({} with reciprocals)", split.name(), c.raw, c.with_reciprocals);
    }
    let mut cells = Vec::new();
    for &rank in &a.rank {
        for &batch_size in &a.batch_size {
            for &reg_coeff in &a.reg {
                let cfg = TrainConfig {
                    scorer: a.scorer,
                    rank,
                    batch_size,
                    reg_coeff,
                    learning_rate: a.lr,
                    epochs: a.epochs,
                    seed: a.seed,
                    init_scale: a.init_scale,
                    patience: (a.patience > 0).then_some(a.patience),
                    target_valid_h3: a.target_valid_h3,
                    calibration: CalibrationParams {
                        kind: a.calibration,
                        temperature: a.temperature,
                    },
                    ..TrainConfig::default()
                };
                cfg.validate(a.strict_grid)?;
                cells.push(cfg);
            }
        }
    }
    write_config(&a.out, "train", resolved)?;
    println!("{:>6}  {:>6}  {:>8}  {:>9}  {:>10}", "rank", "batch", "reg", "valid H@3", "best epoch");
    let mut grid_csv = String::from("rank,batch_size,reg,valid_h3,best_epoch\n");
    let mut best: Option<(f64, cqd::TrainReport)> = None;
    for cfg in &cells {
        let report = train::<f64>(&kg, cfg)?;
        let h3 = report.valid_h3.unwrap_or(0.0);
        let shown = report.valid_h3.map_or("-".to_string(), |h| format!("{h:.4}"));
        println!(
            "{:>6}  {:>6}  {:>8}  {:>9}  {:>10}",
            cfg.rank, cfg.batch_size, cfg.reg_coeff, shown, report.best_epoch
        );
        grid_csv.push_str(&format!("{},{},{},{shown},{}\n", cfg.rank, cfg.batch_size, cfg.reg_coeff, report.best_epoch));
        if best.as_ref().is_none_or(|(b, _)| h3 > *b) {
            best = Some((h3, report));
        }
    }
    let (_, report) = best.context("empty hyperparameter grid")?;
    let ckpt = a.out.join("model.ckpt");
    save_model(&report.model, &ckpt)?;
    write_log_csv(&a.out.join("train_log.csv"), &report.log)?;
    fs::write(a.out.join("grid.csv"), grid_csv)?;
    let test_h3 = link_prediction_hits(&report.model, &kg, Split::Test, 3);
    println!(
        "best: rank {} -> {} (test 1p H@3 {})",
        report.model.rank(),
        ckpt.display(),
        test_h3.map_or("-".into(), |h| format!("{h:.4}"))
    );
    Ok(())
}

fn cmd_generate(a: &GenerateArgs, root: Option<&Path>, resolved: &str) -> Result<()> {
    let kg = load_kg(root, &a.data)?;
    let split = match a.split {
        SplitArg::Valid => Split::Valid,
        SplitArg::Test => Split::Test,
    };
    write_config(&a.out, "generate-queries", resolved)?;
    for &t in &a.types {
        let records = if a.allow_fewer {
            sample_queries_up_to(&kg, t, a.count, a.seed, split)?
        } else {
            sample_queries(&kg, t, a.count, a.seed, split)?
        };
        let path = a.out.join(format!("{}_{t}.jsonl", split.name()));
        write_jsonl(&path, &records)?;
        println!("{t}: {} queries -> {}", records.len(), path.display());
    }
    Ok(())
}

fn beam_config(s: &MethodArgs) -> BeamConfig {
    BeamConfig {
        beam_width: s.beam_width,
        tnorm: s.tnorm,
        max_states: s.max_states,
    }
}

fn co_config(s: &MethodArgs) -> CoConfig {
    let mut cfg = CoConfig {
        max_iters: s.co_iters,
        tnorm: s.tnorm,
        init_seed: s.co_seed,
        num_restarts: s.co_restarts,
        ..CoConfig::default()
    };
    cfg.adam.lr = s.co_lr;
    cfg
}

fn cmd_answer(a: &AnswerArgs, with_explanation: bool, root: Option<&Path>, resolved: &str) -> Result<()> {
    let kg = load_kg(root, &a.data)?;
    let vocab = kg.vocab();
    let mut model: Model = load_model(&input(root, &a.model)).with_context(|| format!("loading {}", a.model.display()))?;
    if model.num_entities() != vocab.num_entities() || model.num_relations() != vocab.num_relations() {
        bail!(
            "model has {} entities and {} relations, graph has {} and {}",
            model.num_entities(),
            model.num_relations(),
            vocab.num_entities(),
            vocab.num_relations()
        );
    }
    if let Some(t) = a.temperature {
        model.set_calibration(CalibrationParams::logistic(t))?;
    }
    let query = match parse_query(&a.query, vocab) {
        Ok(q) => q,
        Err(e) => match e.caret(&a.query) {
            Some(c) => bail!("{e}\n{c}"),
            None => bail!("{e}"),
        },
    };
    let dnf = to_dnf(&query)?;
    let ranking = match a.method {
        MethodArg::Beam => beam_answer(&model, &dnf, &beam_config(&a.settings))?,
        MethodArg::Co => co_answer(&model, &dnf, &co_config(&a.settings))?.ranking,
        MethodArg::Random => bail!("random scoring is only available in `evaluate`"),
    };
    let gold = a
        .gold
        .iter()
        .map(|name| vocab.entity_id(name).with_context(|| format!("unknown gold entity `{name}`")))
        .collect::<Result<BTreeSet<_>>>()?;
    let gold = (!a.gold.is_empty()).then_some(&gold);
    let ex = explain(&ranking, a.top, gold);
    let text = match (a.format, with_explanation) {
        (FormatArg::Json, _) => serde_json::to_string_pretty(&ex.to_json(vocab))? + "\n",
        (FormatArg::Text, true) => ex.to_text(vocab),
        (FormatArg::Text, false) => {
            let mut out = String::new();
            for row in &ex.rows {
                out.push_str(&format!("{:>4}  {:.6}  {}", row.rank, row.score, vocab.entity_name(row.entity)));
                match row.correct {
                    Some(true) => out.push_str("  correct"),
                    Some(false) | None => {}
                }
                out.push('\n');
            }
            out
        }
    };
    print!("{text}");
    if let Some(dir) = &a.out {
        write_config(dir, "answer", resolved)?;
        let ext = if a.format == FormatArg::Json { "json" } else { "txt" };
        fs::write(dir.join(format!("answer.{ext}")), &text)?;
    }
    Ok(())
}

fn read_queries(root: Option<&Path>, paths: &[PathBuf]) -> Result<Vec<QueryRecord>> {
    let mut files = Vec::new();
    for p in paths {
        let p = input(root, p);
        if p.is_dir() {
            let mut inner: Vec<PathBuf> = fs::read_dir(&p)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x == "jsonl"))
                .collect();
            inner.sort();
            files.extend(inner);
        } else {
            files.push(p);
        }
    }
    let mut out = Vec::new();
    for f in files {
        out.extend(read_jsonl(&f)?);
    }
    Ok(out)
}

/// Per-structure choice of calibration and method.
#[derive(Serialize)]
struct Choice {
    #[serde(rename = "type")]
    query_type: QueryType,
    calibration: CalibrationKind,
    method: Method,
    valid_h3: f64,
}

#[derive(Serialize)]
struct SelectionFile {
    chosen: Vec<Choice>,
    grids: Vec<(CalibrationKind, Selection)>,
}

fn with_calibration(model: &Model, kind: CalibrationKind) -> Result<Model> {
    let mut m = model.clone();
    let temperature = model.calibration().temperature;
    m.set_calibration(CalibrationParams { kind, temperature })?;
    Ok(m)
}

fn cmd_evaluate(a: &EvaluateArgs, root: Option<&Path>, resolved: &str) -> Result<()> {
    let kg = load_kg(root, &a.data)?;
    let model: Model = load_model(&input(root, &a.model)).with_context(|| format!("loading {}", a.model.display()))?;
    let num_base = kg.vocab().num_base_relations();
    let test = read_queries(root, &a.test)?;
    if test.is_empty() {
        bail!("no test queries found");
    }
    if a.calibrations.is_empty() {
        bail!("--calibrations needs at least one kind");
    }
    let valid = read_queries(root, &a.valid)?;
    write_config(&a.out, "evaluate", resolved)?;
    let models: Vec<(CalibrationKind, Model)> = a
        .calibrations
        .iter()
        .map(|&k| Ok((k, with_calibration(&model, k)?)))
        .collect::<Result<_>>()?;
    let mut reports = Vec::new();
    for &m in &a.methods {
        let (label, grid) = match m {
            MethodArg::Beam => ("beam", beam_grid(&a.tnorms, &a.beam_widths)),
            MethodArg::Co => ("co", co_grid(&a.tnorms, &co_config(&a.settings))),
            MethodArg::Random => ("random", vec![Method::Random { seed: a.random_seed }]),
        };
        // calibration index and method per structure
        let mut plan: BTreeMap<QueryType, (usize, Method)> = BTreeMap::new();
        let fallback = match m {
            MethodArg::Beam => Method::Beam(beam_config(&a.settings)),
            MethodArg::Co => Method::Co(co_config(&a.settings)),
            MethodArg::Random => grid[0],
        };
        if !valid.is_empty() && m != MethodArg::Random {
            let mut grids = Vec::new();
            let mut chosen: BTreeMap<QueryType, Choice> = BTreeMap::new();
            for (ki, (kind, mk)) in models.iter().enumerate() {
                let sel = select_config(mk, &valid, &grid, num_base)?;
                for (&t, &method) in &sel.table.per_type {
                    let h3 = sel
                        .grid
                        .iter()
                        .find(|c| c.query_type == t && c.method == method)
                        .map_or(0.0, |c| c.h3);
                    if chosen.get(&t).is_none_or(|c| h3 > c.valid_h3) {
                        plan.insert(t, (ki, method));
                        chosen.insert(
                            t,
                            Choice {
                                query_type: t,
                                calibration: *kind,
                                method,
                                valid_h3: h3,
                            },
                        );
                    }
                }
                grids.push((*kind, sel));
            }
            let file = SelectionFile {
                chosen: chosen.into_values().collect(),
                grids,
            };
            fs::write(a.out.join(format!("selection_{label}.json")), serde_json::to_string_pretty(&file)?)?;
        }
        let mut logs = Vec::new();
        for (ki, (_, mk)) in models.iter().enumerate() {
            let mut table = MethodTable::uniform(fallback);
            let mut idx = Vec::new();
            let mut subset = Vec::new();
            for (i, r) in test.iter().enumerate() {
                let (k, method) = plan.get(&r.query_type).copied().unwrap_or((0, fallback));
                if k == ki {
                    table.per_type.insert(r.query_type, method);
                    idx.push(i);
                    subset.push(r.clone());
                }
            }
            if subset.is_empty() {
                continue;
            }
            let (_, part) = evaluate(mk, &subset, &table, num_base, "")?;
            logs.extend(part.into_iter().map(|mut l| {
                l.index = idx[l.index];
                l
            }));
        }
        logs.sort_by_key(|l| l.index);
        let name = fallback.family();
        let report = MetricReport::from_logs(name, &logs);
        report.write_csv(&a.out.join(format!("{label}.csv")))?;
        write_query_log(&a.out.join(format!("{label}_queries.jsonl")), &logs)?;
        for t in &report.types {
            log::info!("{name} {}: {} ({} queries)", t.query_type, t.method, t.count);
        }
        reports.push(report);
    }
    let refs: Vec<&MetricReport> = reports.iter().collect();
    let mut md = MetricReport::markdown(&refs);
    let baseline = random_baseline(&test, kg.num_entities(), 3);
    md.push_str("\nExpected H@3 of a uniformly random ranking\n\n| Type | H@3 |\n|---|---|\n");
    for (t, h) in &baseline {
        md.push_str(&format!("| {t} | {h:.4} |\n"));
    }
    fs::write(a.out.join("report.md"), &md)?;
    print!("{md}");
    Ok(())
}

fn cmd_synth(a: &SynthArgs, resolved: &str) -> Result<()> {
    let cfg = SyntheticConfig {
        num_clusters: a.clusters,
        cluster_size: a.cluster_size,
        holdout: a.holdout,
        seed: a.seed,
        ..SyntheticConfig::default()
    };
    let kg = generate(&cfg)?;
    kg.save_dir(&a.out)?;
    write_config(&a.out, "synth-kg", resolved)?;
    println!(
        "{} entities, {} base relations, {} train / {} valid / {} test triples -> {}",
        kg.num_entities(),
        kg.vocab().num_base_relations(),
        kg.base_triples(Split::Train).len(),
        kg.base_triples(Split::Valid).len(),
        kg.base_triples(Split::Test).len(),
        a.out.display()
    );
    Ok(())
}
