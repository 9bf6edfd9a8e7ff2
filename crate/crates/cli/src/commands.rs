use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{anyhow, bail, ensure, Context, Result};
use relent::evaluator::{prf_at, RunStats};
use relent::pairgen::{generate_pairs_parallel, write_pairs};
use relent::{
    annotate_silver, classify_batch, evaluate, load_tacred, stratified_partition, strip_labels, tune_threshold,
    Backend, Dataset, DevScore, InferenceConfig, NorelMode, Prediction, RelationSchema,
};
use relent_service::{nli_router, router, AppState, Persistence};
use serde::{Deserialize, Serialize};

use crate::backend_uri::BackendOptions;
use crate::manifest::{sidecar, RunManifest};
use crate::{
    BackendArgs, ClassifyArgs, Command, EvalArgs, InferenceArgs, NorelModeArg, PairsArgs, SchemaArg, ServeArgs,
    SilverArgs, SplitArgs, TuneArgs,
};

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Classify(a) => classify(a),
        Command::Tune(a) => tune(a),
        Command::Eval(a) => eval(a),
        Command::Split(a) => split(a),
        Command::Pairs(a) => pairs(a),
        Command::Silver(a) => silver(a),
        Command::Serve(a) => serve(a),
    }
}

fn load_schema(arg: &SchemaArg) -> Result<RelationSchema> {
    match &arg.schema {
        Some(p) => Ok(RelationSchema::load(p)?),
        None => Ok(RelationSchema::tacred()),
    }
}

fn load_data(path: &Path, schema: &RelationSchema) -> Result<Dataset> {
    Ok(load_tacred(path, schema.negative_label())?)
}

fn backend(args: &BackendArgs) -> Result<Arc<dyn Backend>> {
    let opts = BackendOptions {
        strict_fixture: args.strict_fixture,
        batch_size: args.batch_size as usize,
        timeout: Duration::from_secs(args.timeout_secs),
        concurrency: args.concurrency as usize,
    };
    args.backend.clone().resolved().build(&opts)
}

fn inference_config(backend: Arc<dyn Backend>, b: &BackendArgs, i: &InferenceArgs) -> InferenceConfig {
    InferenceConfig::new(backend)
        .with_threshold(i.threshold)
        .with_norel_mode(match i.norel_mode {
            NorelModeArg::Threshold => NorelMode::Threshold,
            NorelModeArg::Template => NorelMode::Template,
        })
        .with_batch_size(b.batch_size as usize)
        .with_workers(i.workers as usize)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("cannot write {}", path.display()))?,
    ))
}

/// One line of a predictions file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: String,
    pub label: String,
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_relation: Option<BTreeMap<String, f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub norel_score: Option<f64>,
}

impl PredictionRecord {
    fn of(p: &Prediction, verbose: bool) -> Self {
        PredictionRecord {
            id: p.example_id.clone(),
            label: p.label.clone(),
            score: p.score,
            per_relation: verbose.then(|| p.per_relation.iter().map(|(l, s)| (l.clone(), s.score)).collect()),
            norel_score: p.norel_score,
        }
    }
}

fn read_predictions(path: &Path) -> Result<Vec<PredictionRecord>> {
    let file = File::open(path).with_context(|| format!("cannot read {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).with_context(|| format!("{} line {}", path.display(), i + 1))?,
        );
    }
    Ok(out)
}

fn classify(a: ClassifyArgs) -> Result<()> {
    let schema = load_schema(&a.schema)?;
    let data = load_data(&a.data, &schema)?;
    let backend = backend(&a.backend)?;
    let describe = backend.describe();
    let config = inference_config(backend, &a.backend, &a.inference);
    let predictions = classify_batch(data.examples(), &schema, &config)?;

    let mut w = create(&a.out)?;
    for p in &predictions {
        serde_json::to_writer(&mut w, &PredictionRecord::of(p, a.per_relation))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    let positives = predictions.iter().filter(|p| !p.is_negative(schema.negative_label())).count();
    RunManifest::new("classify", &a)
        .schema(a.schema.schema.as_deref())?
        .input(&a.data)?
        .backend(describe)
        .output(&a.out)
        .write_beside(&a.out)?;
    println!("{} examples, {positives} predicted positive", predictions.len());
    Ok(())
}

/// The threshold rule applied after the fact to a threshold-mode prediction.
fn label_at<'a>(p: &'a Prediction, threshold: f64, negative_label: &'a str) -> &'a str {
    match p.best_positive() {
        Some((label, score)) if score >= threshold => label,
        _ => negative_label,
    }
}

#[derive(Debug, Serialize)]
struct TuneRun {
    seed: u64,
    dev_examples: usize,
    threshold: f64,
    dev_f1: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    test_f1: Option<f64>,
}

#[derive(Debug, Serialize)]
struct TuneReport {
    runs: Vec<TuneRun>,
    threshold: RunStats,
    dev_f1: RunStats,
    #[serde(skip_serializing_if = "Option::is_none")]
    test_f1: Option<RunStats>,
}

fn gold_of<'a>(data: &'a Dataset, what: &str) -> Result<Vec<&'a str>> {
    data.examples()
        .iter()
        .map(|e| e.gold().ok_or_else(|| anyhow!("{what} example `{}` has no gold label", e.id())))
        .collect()
}

fn tune(a: TuneArgs) -> Result<()> {
    ensure!(
        a.fraction > 0.0 && a.fraction <= 1.0,
        "--fraction must be in (0, 1], got {}",
        a.fraction
    );
    ensure!(
        a.curve_step > 0.0 && a.curve_step <= 1.0,
        "--curve-step must be in (0, 1], got {}",
        a.curve_step
    );
    let schema = load_schema(&a.schema)?;
    let neg = schema.negative_label().to_string();
    let dev = load_data(&a.dev, &schema)?;
    let dev_gold = gold_of(&dev, "dev")?;
    let backend = backend(&a.backend)?;
    let describe = backend.describe();
    let config = InferenceConfig::new(backend)
        .with_batch_size(a.backend.batch_size as usize)
        .with_workers(a.workers as usize);

    let dev_preds = classify_batch(dev.examples(), &schema, &config)?;
    let dev_scores: HashMap<&str, DevScore> = dev
        .examples()
        .iter()
        .zip(&dev_preds)
        .zip(&dev_gold)
        .map(|((e, p), g)| (e.id(), p.dev_score(g, &neg)))
        .collect();
    let test = match &a.test {
        Some(path) => {
            let data = load_data(path, &schema)?;
            let preds = classify_batch(data.examples(), &schema, &config)?;
            Some((data, preds))
        }
        None => None,
    };

    let steps = (1.0 / a.curve_step).round() as usize;
    let grid: Vec<f64> = (0..=steps).map(|k| (k as f64 * a.curve_step).min(1.0)).collect();
    let mut curve: Vec<Vec<f64>> = vec![Vec::new(); grid.len()];
    let mut runs = Vec::new();
    for r in 0..a.runs {
        let seed = a.seed + r;
        let sample = if a.fraction < 1.0 {
            stratified_partition(&dev, a.fraction, seed)?.0
        } else {
            dev.clone()
        };
        let scores: Vec<DevScore> = sample.examples().iter().map(|e| dev_scores[e.id()]).collect();
        let choice = tune_threshold(&scores)?;
        for (k, t) in grid.iter().enumerate() {
            curve[k].push(prf_at(&scores, *t).f1);
        }
        let test_f1 = match &test {
            Some((data, preds)) => {
                let gold = gold_of(data, "test")?;
                let pred: Vec<&str> = preds.iter().map(|p| label_at(p, choice.threshold, &neg)).collect();
                Some(evaluate(&gold, &pred, &neg)?.f1)
            }
            None => None,
        };
        runs.push(TuneRun {
            seed,
            dev_examples: scores.len(),
            threshold: choice.threshold,
            dev_f1: choice.f1,
            test_f1,
        });
    }
    let stats = |f: &dyn Fn(&TuneRun) -> Option<f64>| RunStats::of(&runs.iter().filter_map(f).collect::<Vec<_>>());
    let report = TuneReport {
        threshold: stats(&|r| Some(r.threshold)).expect("at least one run"),
        dev_f1: stats(&|r| Some(r.dev_f1)).expect("at least one run"),
        test_f1: stats(&|r| r.test_f1),
        runs,
    };
    serde_json::to_writer_pretty(create(&a.out)?, &report)?;

    let mut manifest = RunManifest::new("tune", &a)
        .schema(a.schema.schema.as_deref())?
        .input(&a.dev)?
        .seed(a.seed)
        .backend(describe)
        .output(&a.out);
    if let Some(t) = &a.test {
        manifest = manifest.input(t)?;
    }
    if let Some(path) = &a.curve {
        let mut w = csv::Writer::from_path(path).with_context(|| format!("cannot write {}", path.display()))?;
        w.write_record(["threshold", "mean_f1", "std_err", "runs"])?;
        for (t, values) in grid.iter().zip(&curve) {
            let s = RunStats::of(values).expect("one value per run");
            w.write_record([t.to_string(), s.mean.to_string(), s.std_err.to_string(), s.n.to_string()])?;
        }
        w.flush()?;
        manifest = manifest.output(path);
    }
    manifest.write_beside(&a.out)?;

    print!(
        "threshold {:.4} (± {:.4}), dev F1 {:.2}",
        report.threshold.mean,
        report.threshold.std_err,
        100.0 * report.dev_f1.mean
    );
    match report.test_f1 {
        Some(t) => println!(", test F1 {:.2} (± {:.2})", 100.0 * t.mean, 100.0 * t.std_err),
        None => println!(),
    }
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let gold_data = load_tacred(&a.gold, &a.negative_label)?;
    let preds = read_predictions(&a.pred)?;
    let by_id: HashMap<&str, &str> = preds.iter().map(|p| (p.id.as_str(), p.label.as_str())).collect();
    ensure!(
        by_id.len() == preds.len(),
        "{} holds duplicate example ids",
        a.pred.display()
    );
    let mut gold = Vec::with_capacity(gold_data.len());
    let mut pred = Vec::with_capacity(gold_data.len());
    for e in gold_data.examples() {
        let g = e.gold().ok_or_else(|| anyhow!("gold example `{}` has no label", e.id()))?;
        let p = by_id
            .get(e.id())
            .ok_or_else(|| anyhow!("no prediction for example `{}`", e.id()))?;
        gold.push(g);
        pred.push(*p);
    }
    if preds.len() != gold.len() {
        bail!("{} predictions for {} gold examples", preds.len(), gold.len());
    }
    let report = evaluate(&gold, &pred, &a.negative_label)?;
    serde_json::to_writer_pretty(create(&a.out)?, &report)?;
    let mut manifest = RunManifest::new("eval", &a)
        .input(&a.gold)?
        .input(&a.pred)?
        .output(&a.out);
    if let Some(path) = &a.confusion {
        std::fs::write(path, report.confusion.to_csv()).with_context(|| format!("cannot write {}", path.display()))?;
        manifest = manifest.output(path);
    }
    manifest.write_beside(&a.out)?;
    println!("{report}");
    Ok(())
}

fn split(a: SplitArgs) -> Result<()> {
    let neg = relent::dataset::TACRED_NEGATIVE;
    let data = load_tacred(&a.data, neg)?;
    let (sample, rest) = stratified_partition(&data, a.fraction, a.seed)?;
    let sample = if a.strip_labels { strip_labels(&sample) } else { sample };
    sample.write_tacred(&a.out, neg)?;
    let mut manifest = RunManifest::new("split", &a)
        .input(&a.data)?
        .seed(a.seed)
        .output(&a.out);
    if let Some(path) = &a.rest {
        rest.write_tacred(path, neg)?;
        manifest = manifest.output(path);
    }
    manifest.write_beside(&a.out)?;
    println!(
        "{} examples: {} positive, {} negative, {} unlabeled",
        sample.len(),
        sample.positives(neg),
        sample.negatives(neg),
        sample.examples().iter().filter(|e| e.gold().is_none()).count()
    );
    Ok(())
}

fn pairs(a: PairsArgs) -> Result<()> {
    let schema = load_schema(&a.schema)?;
    let data = load_data(&a.data, &schema)?;
    let records = generate_pairs_parallel(&data, &schema, a.seed, a.norel_template, a.workers as usize)?;
    let mut w = create(&a.out)?;
    write_pairs(&mut w, &records)?;
    w.flush()?;
    RunManifest::new("pairs", &a)
        .schema(a.schema.schema.as_deref())?
        .input(&a.data)?
        .seed(a.seed)
        .output(&a.out)
        .write_beside(&a.out)?;
    println!("{} pairs from {} examples", records.len(), data.len());
    Ok(())
}

fn silver(a: SilverArgs) -> Result<()> {
    let schema = load_schema(&a.schema)?;
    let data = load_data(&a.data, &schema)?;
    let backend = backend(&a.backend)?;
    let describe = backend.describe();
    let config = inference_config(backend, &a.backend, &a.inference);
    let out = annotate_silver(&data, &schema, &config)?;
    out.dataset.write_tacred(&a.out, schema.negative_label())?;
    let labels = sidecar(&a.out, "labels.json");
    serde_json::to_writer_pretty(create(&labels)?, &out.label_distribution)?;
    RunManifest::new("silver", &a)
        .schema(a.schema.schema.as_deref())?
        .input(&a.data)?
        .backend(describe)
        .output(&a.out)
        .output(&labels)
        .write_beside(&a.out)?;
    println!(
        "{} examples labeled, {} positive",
        out.dataset.len(),
        out.dataset.positives(schema.negative_label())
    );
    Ok(())
}

fn serve(a: ServeArgs) -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let schema = match &a.schema {
        Some(p) => RelationSchema::load(p)?,
        None => RelationSchema::tacred(),
    };
    let backend = backend(&a.backend)?;
    let config = inference_config(backend.clone(), &a.backend, &a.inference);
    config.validate(&schema)?;
    let persistence = a.schema.as_ref().map(Persistence::beside).unwrap_or_default();
    let state = AppState::new(schema, config, persistence)?;
    let app = router(state).merge(nli_router(backend));
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind((a.host.as_str(), a.port))
            .await
            .with_context(|| format!("cannot bind {}:{}", a.host, a.port))?;
        eprintln!("listening on http://{}", listener.local_addr()?);
        axum::serve(listener, app).await?;
        Ok(())
    })
}
