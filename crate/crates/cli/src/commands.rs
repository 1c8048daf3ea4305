use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use graphlink::baselines::devicegraph_track;
use graphlink::dataset::{load_records, sample_labels_random, sample_labels_single_domain, save_records, RecordFormat};
use graphlink::eval::{compute_metrics, evaluate, per_group_size_breakdown, threshold_sweep, Confusion, MetricsReport};
use graphlink::linker::rank_device;
use graphlink::synthetic::generate_synthetic;
use graphlink::{build_graph, BrowsingRecord, GroundTruth, IncrementalLinker, LabeledPairs, Prediction};
use serde::Serialize;
use serde_json::json;

use crate::config::{LabelSource, Method, RunConfig};
use crate::{CliError, Format};

fn out_dir(cfg: &RunConfig) -> Result<&Path, CliError> {
    fs::create_dir_all(&cfg.out)?;
    Ok(&cfg.out)
}

/// Prefix a load failure with the file it came from.
fn at(path: &Path) -> impl Fn(graphlink::Error) -> CliError + '_ {
    move |e| match CliError::from(e) {
        CliError::Data(m) if !m.starts_with(&*path.to_string_lossy()) => CliError::Data(format!("{}: {m}", path.display())),
        other => other,
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// Everything needed to rerun the command with identical output.
fn write_manifest(cfg: &RunConfig, command: &str) -> Result<(), CliError> {
    let manifest = json!({
        "command": command,
        "graphlink_version": graphlink::VERSION,
        "cli_version": env!("CARGO_PKG_VERSION"),
        "threads": rayon::current_num_threads(),
        "seeds": {
            "run": cfg.seed,
            "synthetic": cfg.synthetic.seed,
            "linker": cfg.linker.rng_seed,
            "perturb": cfg.perturb.as_ref().map(|p| p.seed),
        },
        "config": cfg,
    });
    write_json(&out_dir(cfg)?.join("manifest.json"), &manifest)
}

/// Records from the configured file, or generated from `cfg.synthetic`.
fn load_dataset(cfg: &RunConfig) -> Result<(Vec<BrowsingRecord>, Option<GroundTruth>), CliError> {
    match &cfg.records {
        Some(path) => {
            let records = load_records(path, RecordFormat::from_path(path)).map_err(at(path))?;
            let truth = match &cfg.truth {
                Some(p) => Some(GroundTruth::load(p).map_err(at(p))?),
                None => None,
            };
            Ok((records, truth))
        }
        None => {
            let (records, truth) = generate_synthetic(&cfg.synthetic)?;
            Ok((records, Some(truth)))
        }
    }
}

fn require_truth(cfg: &RunConfig) -> Result<GroundTruth, CliError> {
    let path = cfg
        .truth
        .as_ref()
        .ok_or_else(|| CliError::Config("a ground truth file is required (--truth)".into()))?;
    GroundTruth::load(path).map_err(at(path))
}

/// Labeled pairs and the devices left out of them.
fn labels_for(
    cfg: &RunConfig,
    records: &[BrowsingRecord],
    truth: Option<&GroundTruth>,
) -> Result<Option<(LabeledPairs, BTreeSet<String>)>, CliError> {
    if cfg.supervised == LabelSource::Off {
        return Ok(None);
    }
    let truth = truth.ok_or_else(|| CliError::Config("supervised runs need ground truth for labels".into()))?;
    match &cfg.supervised {
        LabelSource::Off => unreachable!(),
        LabelSource::Random(f) => {
            let split = sample_labels_random(truth, *f, cfg.seed)?;
            Ok(Some((split.labels, split.held_out)))
        }
        LabelSource::Domain(d) => {
            let labels = sample_labels_single_domain(records, truth, d);
            let labeled: BTreeSet<&str> = labels.pairs.iter().flat_map(|(a, b)| [a.as_str(), b.as_str()]).collect();
            let held_out = truth
                .iter()
                .map(|(dev, _)| dev)
                .filter(|dev| !labeled.contains(dev))
                .map(str::to_string)
                .collect();
            Ok(Some((labels, held_out)))
        }
    }
}

pub fn gen(cfg: &RunConfig, format: Format) -> Result<(), CliError> {
    let (records, truth) = generate_synthetic(&cfg.synthetic)?;
    let dir = out_dir(cfg)?;
    let (name, format) = match format {
        Format::Jsonl => ("records.jsonl", RecordFormat::Jsonl),
        Format::Csv => ("records.csv", RecordFormat::Csv),
    };
    save_records(dir.join(name), &records, format)?;
    truth.save(dir.join("truth.jsonl"))?;
    write_manifest(cfg, "gen")
}

pub fn track(cfg: &RunConfig) -> Result<(), CliError> {
    let (mut records, truth) = load_dataset(cfg)?;
    if let Some(p) = &cfg.perturb {
        records = p.apply(&records)?;
    }
    cfg.method.check_records(&records)?;
    let labels = labels_for(cfg, &records, truth.as_ref())?;

    let start = Instant::now();
    let (prediction, summary) = match cfg.method {
        Method::DeviceGraph => {
            let pred = devicegraph_track(&records, cfg.seed);
            (pred, json!({}))
        }
        _ => {
            let out = graphlink::track(&records, &cfg.linker, labels.as_ref().map(|l| &l.0))?;
            let summary = json!({
                "similarity_edges": out.similarity.edge_count(),
                "thresholds": out.thresholds,
                "threshold_fallbacks": out.fallbacks,
            });
            (out.prediction, summary)
        }
    };
    let elapsed = start.elapsed().as_secs_f64();

    let dir = out_dir(cfg)?;
    prediction.save(dir.join("prediction.jsonl"))?;
    let devices = prediction.device_count();
    write_json(
        &dir.join("timing.json"),
        &json!({
            "devices": devices,
            "total_seconds": elapsed,
            "per_device_ms": if devices == 0 { 0.0 } else { 1e3 * elapsed / devices as f64 },
            "threads": rayon::current_num_threads(),
        }),
    )?;
    let mut summary = summary;
    summary["method"] = json!(cfg.method.to_string());
    summary["groups"] = json!(prediction.groups.len());
    summary["no_match"] = json!(prediction.no_match.len());
    write_json(&dir.join("summary.json"), &summary)?;
    if let Some((labels, held_out)) = &labels {
        labels.save(dir.join("labels.jsonl"))?;
        write_json(&dir.join("held_out.json"), held_out)?;
    }
    if cfg.records.is_none() {
        if let Some(t) = &truth {
            t.save(dir.join("truth.jsonl"))?;
        }
    }
    write_manifest(cfg, "track")
}

pub fn eval_counts(cfg: &RunConfig, counts: &[u64]) -> Result<(), CliError> {
    let [tp, fp, tn, fn_] = counts else {
        return Err(CliError::Config(format!("--counts takes tp,fp,tn,fn, got {} values", counts.len())));
    };
    let confusion = Confusion::new(*tp, *fp, *tn, *fn_);
    let report = MetricsReport {
        metrics: compute_metrics(&confusion)?,
        confusion,
    };
    write_json(&out_dir(cfg)?.join("metrics.json"), &report)?;
    write_manifest(cfg, "eval")
}

pub fn eval(cfg: &RunConfig, pred: &Path, held_out: Option<&Path>, breakdown: bool) -> Result<(), CliError> {
    let truth = require_truth(cfg)?;
    let mut prediction = Prediction::load(pred).map_err(at(pred))?;
    if let Some(path) = held_out {
        let keep: BTreeSet<String> = serde_json::from_reader(File::open(path)?)?;
        prediction = prediction.restrict_to(&keep);
    }
    let report = evaluate(&prediction, &truth, cfg.match_mode)?;
    let dir = out_dir(cfg)?;
    write_json(&dir.join("metrics.json"), &report)?;
    if breakdown {
        let strata = per_group_size_breakdown(&prediction, &truth, cfg.match_mode)?;
        write_json(&dir.join("breakdown.json"), &strata)?;
    }
    write_manifest(cfg, "eval")
}

pub fn eval_sweep(cfg: &RunConfig, thresholds: &[f64]) -> Result<(), CliError> {
    if cfg.method == Method::DeviceGraph {
        return Err(CliError::Config("devicegraph has no threshold to sweep".into()));
    }
    let truth = require_truth(cfg)?;
    let path = cfg
        .records
        .as_ref()
        .ok_or_else(|| CliError::Config("a sweep needs --records".into()))?;
    let records = load_records(path, RecordFormat::from_path(path)).map_err(at(path))?;
    cfg.method.check_records(&records)?;
    let sweep = threshold_sweep(&records, &cfg.linker, thresholds, &truth, cfg.match_mode)?;
    let dir = out_dir(cfg)?;
    sweep.write_jsonl(File::create(dir.join("sweep.jsonl"))?)?;
    sweep.write_csv(File::create(dir.join("sweep.csv"))?)?;
    sweep.write_gaps_csv(File::create(dir.join("gaps.csv"))?)?;
    write_manifest(cfg, "eval")
}

pub fn perturb(cfg: &RunConfig) -> Result<(), CliError> {
    let (records, truth) = load_dataset(cfg)?;
    let p = cfg.perturb.as_ref().expect("set by the caller");
    let perturbed = p.apply(&records)?;
    let dir = out_dir(cfg)?;
    save_records(dir.join("records.jsonl"), &perturbed, RecordFormat::Jsonl)?;
    if let Some(t) = truth {
        t.save(dir.join("truth.jsonl"))?;
    }
    write_manifest(cfg, "perturb")
}

/// Group records by device, in first-seen order.
fn by_device(records: Vec<BrowsingRecord>) -> Vec<Vec<BrowsingRecord>> {
    let mut out: Vec<Vec<BrowsingRecord>> = Vec::new();
    for r in records {
        match out.last_mut() {
            Some(last) if last[0].device_id == r.device_id => last.push(r),
            _ => out.push(vec![r]),
        }
    }
    out
}

pub fn bench(cfg: &RunConfig) -> Result<(), CliError> {
    if cfg.method == Method::DeviceGraph {
        return Err(CliError::Config("bench measures incremental linking, which devicegraph lacks".into()));
    }
    if cfg.bench.ladder.is_empty() || cfg.bench.new_devices == 0 {
        return Err(CliError::Config("bench needs a non-empty ladder and at least one new device".into()));
    }
    let kinds: Vec<_> = cfg.linker.variant.components().concat();
    let mut rows = Vec::new();
    for &n_users in &cfg.bench.ladder {
        let synthetic = graphlink::synthetic::SyntheticConfig {
            n_users,
            ..cfg.synthetic.clone()
        };
        let (mut records, truth) = generate_synthetic(&synthetic)?;
        records.sort_by(|a, b| a.device_id.cmp(&b.device_id));
        let edges = build_graph(&records, &kinds)?.edge_count();
        let mut devices = by_device(records);
        if devices.len() <= cfg.bench.new_devices {
            return Err(CliError::Config(format!(
                "{n_users} users give {} devices, not more than new_devices = {}",
                devices.len(),
                cfg.bench.new_devices
            )));
        }
        let n_devices = devices.len();
        let incoming = devices.split_off(n_devices - cfg.bench.new_devices);
        let base: Vec<BrowsingRecord> = devices.concat();
        let labels = labels_for(cfg, &base, Some(&truth))?;
        let mut linker = IncrementalLinker::new(&base, cfg.linker.clone(), labels.as_ref().map(|l| &l.0))?;
        let start = Instant::now();
        for d in &incoming {
            linker.link_incoming_device(d)?;
        }
        let per_device_ms = 1e3 * start.elapsed().as_secs_f64() / incoming.len() as f64;
        rows.push((n_devices, edges, per_device_ms));
    }
    let dir = out_dir(cfg)?;
    let mut w = BufWriter::new(File::create(dir.join("bench.csv"))?);
    writeln!(w, "n_devices,edges,per_device_ms")?;
    for (n, e, ms) in rows {
        writeln!(w, "{n},{e},{ms:.4}")?;
    }
    w.flush()?;
    write_manifest(cfg, "bench")
}

#[derive(Serialize)]
struct Scored<'a> {
    device_id: &'a str,
    score: f64,
}

pub fn rwwr_debug(cfg: &RunConfig, device: &str, top: usize) -> Result<(), CliError> {
    if cfg.method == Method::DeviceGraph {
        return Err(CliError::Config("devicegraph does not score device pairs".into()));
    }
    let (records, _) = load_dataset(cfg)?;
    let mut components = Vec::new();
    for kinds in cfg.linker.variant.components() {
        let g = build_graph(&records, &kinds)?;
        let pos = g
            .device_position(device)
            .ok_or_else(|| CliError::Data(format!("unknown device {device:?}")))?;
        let list = rank_device(&g, &cfg.linker, pos, top)?;
        let scores: Vec<Scored> = list
            .entries
            .iter()
            .map(|c| Scored {
                device_id: g.device_id(c.device),
                score: c.score,
            })
            .collect();
        components.push(json!({
            "kinds": kinds.iter().map(|k| k.as_str()).collect::<Vec<_>>(),
            "scores": scores,
        }));
    }
    let report = json!({
        "device_id": device,
        "method": cfg.method.to_string(),
        "components": components,
    });
    println!("{}", serde_json::to_string_pretty(&report)?);
    write_json(&out_dir(cfg)?.join("rwwr_debug.json"), &report)?;
    write_manifest(cfg, "rwwr-debug")
}
