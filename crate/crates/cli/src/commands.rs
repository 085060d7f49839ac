use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::Args;
use nextaction::baselines::{Baseline, BaselineKind, SyllabusMap};
use nextaction::eval::{self, EvalReport, PredictionStream};
use nextaction::ingest::{self, filter_cohort, Corpus, MalformedPolicy, Vocabulary};
use nextaction::lstm::{self, checkpoint, CellKind, TrainConfig};
use nextaction::ngram::{self, NGramTable};
use nextaction::synth::{self, SynthConfig};

use crate::artifacts::{stem, with_suffix, write_once, write_report};
use crate::settings::Settings;
use crate::{CohortArgs, Common};

#[derive(Debug, Clone, Args)]
pub struct LstmArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub data: CohortArgs,
    /// Stacked layers (1-3); comma-separated with `--grid`.
    #[arg(long)]
    pub layers: Option<String>,
    /// Hidden units per layer; comma-separated with `--grid`.
    #[arg(long)]
    pub nodes: Option<String>,
    /// Learning rate; comma-separated with `--grid`.
    #[arg(long)]
    pub lr: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Context length of a training window.
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub emb_dim: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    /// `lstm` or `rnn`.
    #[arg(long)]
    pub cell: Option<String>,
    /// Start each window from the state left by the preceding actions.
    #[arg(long)]
    pub carry_state: bool,
    #[arg(long)]
    pub folds: Option<usize>,
    /// Cross-validate every layers x nodes x lr combination.
    #[arg(long)]
    pub grid: bool,
    /// `LAYERS:LR` combination to leave out of the grid; repeatable.
    #[arg(long)]
    pub skip: Vec<String>,
    /// Train on the whole cohort and save the network here.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

fn setup(common: &Common) -> Result<Settings> {
    if let Some(n) = common.workers {
        if n == 0 {
            bail!("--workers must be at least 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring worker threads")?;
    }
    Settings::load(common.config.as_deref())
}

fn warn_unused(s: &Settings) {
    for k in s.unused() {
        eprintln!("warning: config key {k} is not used by this command");
    }
}

fn read_text(s: &mut Settings, name: &str, path: &Path) -> Result<String> {
    let bytes = s.checksum(name, path)?;
    String::from_utf8(bytes).with_context(|| format!("{} is not UTF-8", path.display()))
}

fn load_cohort(s: &mut Settings, data: &CohortArgs, default_cohort: &str) -> Result<Corpus> {
    let bytes = s.checksum("corpus", &data.corpus)?;
    let corpus = Corpus::from_bytes(&bytes, &data.corpus)?;
    let cohort: String = s.get("cohort", data.cohort.clone(), default_cohort.to_string())?;
    let certified = match cohort.as_str() {
        "certified" => true,
        "uncertified" => false,
        other => bail!("--cohort must be certified or uncertified, got {other:?}"),
    };
    let min_actions = s.get("min_actions", data.min_actions, 30usize)?;
    let out = filter_cohort(&corpus, certified, min_actions)?;
    if out.sequences.is_empty() {
        bail!("no {cohort} student has {min_actions} or more actions");
    }
    s.record("cohort.students", out.sequences.len());
    s.record("cohort.actions", out.total_actions());
    Ok(out)
}

fn plan(s: &mut Settings, corpus: &Corpus, folds: Option<usize>, seed: u64) -> Result<eval::FoldPlan> {
    let k = s.get("folds", folds, 5usize)?;
    Ok(eval::make_folds(&corpus.student_ids(), k, seed)?)
}

fn publish(
    s: &Settings,
    out_dir: &Path,
    prefix: &str,
    mut report: EvalReport,
    predictions: Option<&PredictionStream>,
) -> Result<PathBuf> {
    report.metadata.extend(s.metadata());
    let stem = write_report(out_dir, prefix, &report, predictions)?;
    println!(
        "{}: cv_accuracy {:.4} (micro {:.4}, folds {:?})",
        report.model,
        report.cv_accuracy,
        report.micro_accuracy(),
        report
            .per_fold_accuracy
            .iter()
            .map(|a| format!("{a:.4}"))
            .collect::<Vec<_>>()
    );
    println!("report: {}", with_suffix(&stem, ".json").display());
    Ok(stem)
}

pub fn synth(common: &Common) -> Result<()> {
    setup(common)?;
    let mut cfg = SynthConfig::default();
    if let Some(p) = &common.config {
        cfg.apply(&nextaction::kv::read(p)?)?;
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    let files = synth::generate(&cfg)?;
    synth::write_files(&files, &common.out_dir)?;
    let cfg_path = common.out_dir.join("synth.cfg");
    std::fs::write(&cfg_path, cfg.to_kv()).with_context(|| format!("writing {}", cfg_path.display()))?;
    let oracle = synth::oracle_accuracy(&cfg.kernel(true)?, 2000, cfg.seed)?;
    println!(
        "wrote events.tsv, roster.tsv, syllabus.txt, synth.cfg to {}",
        common.out_dir.display()
    );
    println!(
        "certified Bayes-optimal accuracy {:.4} +- {:.4}",
        oracle.accuracy, oracle.std_error
    );
    Ok(())
}

pub fn ingest(common: &Common, log: &Path, roster: &Path, min_count: Option<u64>, strict: bool) -> Result<()> {
    let mut s = setup(common)?;
    let min_count = s.get("min_count", min_count, 40u64)?;
    let strict = s.switch("strict", strict)?;
    let log_text = read_text(&mut s, "log", log)?;
    let roster_text = read_text(&mut s, "roster", roster)?;
    let policy = if strict { MalformedPolicy::Abort } else { MalformedPolicy::Skip };
    let out = ingest::ingest(&log_text, &roster_text, min_count, policy)?;
    warn_unused(&s);

    std::fs::create_dir_all(&common.out_dir)?;
    let corpus_path = common.out_dir.join("corpus.nact");
    out.corpus.write(&corpus_path)?;
    let vocab_path = common.out_dir.join("vocab.tsv");
    std::fs::write(&vocab_path, out.vocabulary.to_text())?;
    let certified = out.corpus.sequences.iter().filter(|q| q.certified).count();
    let st = &out.stats;
    let summary = serde_json::json!({
        "metadata": s.metadata(),
        "malformed_records": out.malformed,
        "events": st.events,
        "dropped_token_events": st.dropped_token_events,
        "dropped_students": st.dropped_students,
        "unrostered_students": st.unrostered_students,
        "retained_actions": st.retained_actions,
        "vocab_size": out.vocabulary.len(),
        "students": out.corpus.sequences.len(),
        "certified_students": certified,
    });
    let summary_path = common.out_dir.join("ingest.json");
    std::fs::write(&summary_path, serde_json::to_string_pretty(&summary)? + "\n")?;
    println!(
        "{} events, {} malformed skipped, V = {}, {} students ({certified} certified), {} actions",
        st.events,
        out.malformed,
        out.vocabulary.len(),
        out.corpus.sequences.len(),
        st.retained_actions
    );
    println!("wrote {} and {}", corpus_path.display(), vocab_path.display());
    Ok(())
}

pub fn ngram(
    common: &Common,
    data: &CohortArgs,
    max_order: Option<usize>,
    folds: Option<usize>,
    sweep: bool,
    save_model: Option<&Path>,
) -> Result<()> {
    let mut s = setup(common)?;
    s.record("command", "ngram");
    let seed = s.get("seed", common.seed, 1u64)?;
    let max_order = s.get("max_order", max_order, 3usize)?;
    if max_order < 1 {
        bail!("--max-order must be at least 1");
    }
    let sweep = s.switch("sweep", sweep)?;
    let corpus = load_cohort(&mut s, data, "certified")?;
    let plan = plan(&mut s, &corpus, folds, seed)?;
    warn_unused(&s);

    if sweep {
        let orders: Vec<usize> = (1..=max_order).collect();
        let mut table = String::from("order,cv_accuracy\n");
        for (order, report) in orders.iter().zip(ngram::sweep_orders(&corpus, &orders, &plan)?) {
            table.push_str(&format!("{order},{}\n", report.cv_accuracy));
            publish(&s, &common.out_dir, &format!("ngram{order}"), report, None)?;
        }
        let path = with_suffix(&stem(&common.out_dir, "sweep", table.as_bytes()), ".csv");
        write_once(&path, table.as_bytes())?;
        println!("sweep: {}", path.display());
    }
    let run = ngram::cross_validate(&corpus, max_order, &plan)?;
    if let Some(usage) = &run.report.backoff_usage {
        let shown: Vec<String> = usage.iter().map(|u| format!("{u:.4}")).collect();
        println!("order usage (1..={max_order}): {}", shown.join(" "));
    }
    publish(&s, &common.out_dir, &format!("ngram{max_order}"), run.report, Some(&run.predictions))?;
    if let Some(path) = save_model {
        let table = ngram::fit(&corpus, max_order)?;
        std::fs::write(path, table.to_text()).with_context(|| format!("writing {}", path.display()))?;
        println!("model: {}", path.display());
    }
    Ok(())
}

fn parse_skip(spec: &str) -> Result<(usize, f64)> {
    let (l, r) = spec
        .split_once(':')
        .ok_or_else(|| anyhow!("--skip expects LAYERS:LR, got {spec:?}"))?;
    Ok((l.trim().parse()?, r.trim().parse()?))
}

pub fn lstm(args: &LstmArgs) -> Result<()> {
    let common = &args.common;
    let mut s = setup(common)?;
    s.record("command", "lstm");
    let seed = s.get("seed", common.seed, 1u64)?;
    let layers: Vec<usize> = s.list("layers", args.layers.clone(), "1")?;
    let nodes: Vec<usize> = s.list("nodes", args.nodes.clone(), "64")?;
    let rates: Vec<f64> = s.list("lr", args.lr.clone(), "0.01")?;
    let grid = s.switch("grid", args.grid)?;
    if !grid && (layers.len() > 1 || nodes.len() > 1 || rates.len() > 1) {
        bail!("lists of layers, nodes or lr need --grid");
    }
    let cell: CellKind = s.get("cell", args.cell.clone(), "lstm".to_string())?.parse()?;
    let base = TrainConfig {
        learning_rate: rates[0],
        layers: layers[0],
        hidden_size: nodes[0],
        epochs: s.get("epochs", args.epochs, 10usize)?,
        window: s.get("window", args.window, 10usize)?,
        dropout: s.get("dropout", args.dropout, 0.2f64)?,
        emb_dim: s.get("emb_dim", args.emb_dim, 64usize)?,
        batch_size: s.get("batch", args.batch, 32usize)?,
        carry_state: s.switch("carry_state", args.carry_state)?,
        cell,
        seed,
        ..TrainConfig::default()
    };
    base.validate()?;
    let corpus = load_cohort(&mut s, &args.data, "certified")?;
    let plan = plan(&mut s, &corpus, args.folds, seed)?;
    warn_unused(&s);

    let final_cfg = if grid {
        let skips = args.skip.iter().map(|x| parse_skip(x)).collect::<Result<Vec<_>>>()?;
        s.record("skip", args.skip.join(";"));
        let points = lstm::grid(&layers, &nodes, &rates);
        let rows = lstm::grid_search(
            &corpus,
            &base,
            &points,
            |p| skips.iter().any(|&(l, r)| p.layers == l && p.learning_rate == r),
            &plan,
        )?;
        let best = rows.first().ok_or_else(|| anyhow!("every grid point was skipped"))?.point;
        let mut csv = String::from("layers,nodes,lr,cv_accuracy");
        for f in 0..plan.k {
            csv.push_str(&format!(",fold{f}"));
        }
        csv.push('\n');
        for r in &rows {
            csv.push_str(&format!(
                "{},{},{},{}",
                r.point.layers, r.point.hidden_size, r.point.learning_rate, r.cv_accuracy
            ));
            for a in &r.per_fold_accuracy {
                csv.push_str(&format!(",{a}"));
            }
            csv.push('\n');
            println!(
                "layers {} nodes {} lr {}: cv_accuracy {:.4}",
                r.point.layers, r.point.hidden_size, r.point.learning_rate, r.cv_accuracy
            );
        }
        let doc = serde_json::json!({
            "metadata": s.metadata(),
            "rows": rows.iter().map(|r| serde_json::json!({
                "layers": r.point.layers,
                "nodes": r.point.hidden_size,
                "lr": r.point.learning_rate,
                "cv_accuracy": r.cv_accuracy,
                "per_fold_accuracy": r.per_fold_accuracy,
            })).collect::<Vec<_>>(),
        });
        let json = serde_json::to_string_pretty(&doc)? + "\n";
        std::fs::create_dir_all(&common.out_dir)?;
        let st = stem(&common.out_dir, "grid", json.as_bytes());
        write_once(&with_suffix(&st, ".json"), json.as_bytes())?;
        write_once(&with_suffix(&st, ".csv"), csv.as_bytes())?;
        println!("grid: {}", with_suffix(&st, ".csv").display());
        TrainConfig {
            layers: best.layers,
            hidden_size: best.hidden_size,
            learning_rate: best.learning_rate,
            ..base
        }
    } else {
        let run = lstm::cross_validate(&corpus, &base, &plan)?;
        let st = publish(&s, &common.out_dir, "lstm", run.report, Some(&run.predictions))?;
        for (fold, m) in run.models.iter().enumerate() {
            write_once(
                &with_suffix(&st, &format!(".fold{fold}.curve.csv")),
                lstm::train::curve_csv(&m.curve).as_bytes(),
            )?;
        }
        base
    };

    if let Some(path) = &args.checkpoint {
        let refs: Vec<&ingest::StudentSequence> = corpus.sequences.iter().collect();
        let trained = lstm::train_with_holdout(&refs, corpus.vocab_size, &final_cfg)?;
        let digest = checkpoint::save(&trained.network, path)?;
        let curve = with_suffix(path, ".curve.csv");
        std::fs::write(&curve, lstm::train::curve_csv(&trained.curve))?;
        println!("checkpoint: {} (sha256 {digest})", path.display());
    }
    Ok(())
}

pub fn baseline(
    common: &Common,
    data: &CohortArgs,
    kind: &str,
    syllabus: Option<&Path>,
    vocab: Option<&Path>,
    folds: Option<usize>,
) -> Result<()> {
    let mut s = setup(common)?;
    s.record("command", "baseline");
    let seed = s.get("seed", common.seed, 1u64)?;
    let kind: BaselineKind = kind.parse()?;
    s.record("kind", kind.name());
    let corpus = load_cohort(&mut s, data, "certified")?;
    let syllabus = match (kind, syllabus) {
        (BaselineKind::Repeat, None) => SyllabusMap::from_items(vec![], 0),
        (_, None) => bail!("the {} baseline needs --syllabus", kind.name()),
        (_, Some(path)) => {
            let vocab_path = match vocab {
                Some(v) => v.to_path_buf(),
                None => data.corpus.with_file_name("vocab.tsv"),
            };
            let vocab_text = read_text(&mut s, "vocab", &vocab_path)?;
            let vocabulary = Vocabulary::from_text(&vocab_text, &vocab_path)?;
            if vocabulary.len() != corpus.vocab_size {
                bail!("vocabulary has {} tokens but the corpus has V = {}", vocabulary.len(), corpus.vocab_size);
            }
            let text = read_text(&mut s, "syllabus", path)?;
            let map = SyllabusMap::from_text(&text, &vocabulary)?;
            s.record("syllabus.coverage", map.coverage());
            s.record("syllabus.unmatched", map.unmatched());
            map
        }
    };
    let plan = plan(&mut s, &corpus, folds, seed)?;
    warn_unused(&s);
    let model = Baseline { kind, syllabus };
    let run = eval::cross_validate(kind.name(), |_, _| Ok(model.clone()), &corpus, &plan)?;
    let prefix = format!("baseline-{}", kind.name().replace('+', "-"));
    publish(&s, &common.out_dir, &prefix, run.report, Some(&run.predictions))?;
    Ok(())
}

pub fn eval(common: &Common, data: &CohortArgs, model: &Path) -> Result<()> {
    let mut s = setup(common)?;
    s.record("command", "eval");
    let bytes = s.checksum("model", model)?;
    let corpus = load_cohort(&mut s, data, "uncertified")?;
    warn_unused(&s);
    let check_v = |v: usize| {
        if v != corpus.vocab_size {
            bail!("model has V = {v} but the corpus has V = {}", corpus.vocab_size);
        }
        Ok(())
    };
    if checkpoint::is_checkpoint(&bytes) {
        let net = checkpoint::load(model)?;
        check_v(net.shape.vocab_size)?;
        let (report, stream) = eval::transfer_eval(net.shape.cell.name(), &net, &corpus)?;
        publish(&s, &common.out_dir, "eval", report, Some(&stream))?;
    } else {
        let text = std::str::from_utf8(&bytes).map_err(|_| anyhow!("{} is not a model file", model.display()))?;
        if !text.starts_with("#NGRAM") {
            bail!("{} is neither an n-gram table nor a checkpoint", model.display());
        }
        let table = NGramTable::from_text(text, model)?;
        check_v(table.vocab_size())?;
        let name = format!("{}-gram", table.max_order());
        let (mut report, stream) = eval::transfer_eval(&name, &table, &corpus)?;
        report.backoff_usage = Some(ngram::backoff_usage(&table, &corpus)?);
        publish(&s, &common.out_dir, "eval", report, Some(&stream))?;
    }
    Ok(())
}

pub fn agree(common: &Common, a: &Path, b: &Path) -> Result<()> {
    let mut s = setup(common)?;
    s.record("command", "agree");
    let ta = read_text(&mut s, "a", a)?;
    let tb = read_text(&mut s, "b", b)?;
    warn_unused(&s);
    let sa = PredictionStream::from_text(&ta, a)?;
    let sb = PredictionStream::from_text(&tb, b)?;
    let t = eval::stream_agreement(&sa, &sb)?;
    println!("{:<12}{:>14}{:>14}", "", "B correct", "B incorrect");
    println!("{:<12}{:>14}{:>14}", "A correct", t.both_correct, t.a_correct_b_incorrect);
    println!("{:<12}{:>14}{:>14}", "A incorrect", t.a_incorrect_b_correct, t.both_incorrect);
    let doc = serde_json::json!({ "metadata": s.metadata(), "table": t, "total": t.total() });
    let json = serde_json::to_string_pretty(&doc)? + "\n";
    std::fs::create_dir_all(&common.out_dir)?;
    let path = with_suffix(&stem(&common.out_dir, "agree", json.as_bytes()), ".json");
    write_once(&path, json.as_bytes())?;
    println!("table: {}", path.display());
    Ok(())
}
