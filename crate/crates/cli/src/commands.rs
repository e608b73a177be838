use std::io::Write as _;
use std::path::{Path, PathBuf};

use eeginterp::attribution::{attribute as attribute_map, channel_contribution, random_baseline_map, save_maps, ContributionMap, Method, MethodSpec};
use eeginterp::evaluation::{aggregate, evaluate_map, summary_table, EvalConfig, SampleRecord};
use eeginterp::models::{compute_batch_stats, init_weights, predict, EegNetConfig, InterpretableCnnConfig, EEGNET};
use eeginterp::rng::derive_seed;
use eeginterp::synth::{generate_dataset, load_dataset, load_layout, split_leave_one_subject_out, Dataset, EEGSample, ElectrodeLayout, SynthConfig};
use eeginterp::train::{train as train_net, TrainConfig};
use eeginterp::viz::{generate_report, process, render_sample_view, render_topomap, PipelineConfig, ReportContext};
use eeginterp::weights::{load_weights, save_weights, Architecture};
use eeginterp::{BatchStats, NetworkSpec};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{check_model, parse_methods, RunConfig};
use crate::{AttributeArgs, CliError, EvaluateArgs, RenderArgs, ReportArgs, Source, SynthArgs, TrainArgs};

fn required(flag: &Option<PathBuf>, file: &Option<PathBuf>, name: &str) -> Result<PathBuf, CliError> {
    flag.clone().or_else(|| file.clone()).ok_or_else(|| {
        CliError::Usage(format!("--{name} is required (or paths.{name} in the config file)"))
    })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
    }
    std::fs::write(path, bytes).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.{suffix}"))
}

pub fn synth(a: &SynthArgs) -> Result<(), CliError> {
    let mut cfg = SynthConfig::two_class_demo(a.seed);
    cfg.subjects = a.subjects;
    cfg.samples_per_class = a.samples_per_class;
    cfg.length = a.length;
    for class in &mut cfg.classes {
        for f in &mut class.features {
            f.amplitude *= a.feature_scale;
        }
    }
    let ds = generate_dataset(&cfg)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
    }
    eeginterp::synth::save_dataset(&ds, &a.out)?;
    println!(
        "wrote {} samples ({} subjects, {} classes, [{}, {}]) to {}",
        ds.samples.len(),
        cfg.subjects,
        ds.classes(),
        ds.channels(),
        ds.length,
        a.out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct TrainRecord<'a> {
    model: &'a str,
    config: &'a TrainConfig,
    train_samples: usize,
    epochs: &'a [eeginterp::train::EpochStats],
    holdout_subject: Option<u32>,
    holdout_accuracy: Option<f64>,
}

fn accuracy(net: &NetworkSpec<f32>, ds: &Dataset) -> Result<f64, CliError> {
    let stats = compute_batch_stats(net, &ds.inputs())?;
    let correct = ds
        .samples
        .par_iter()
        .map(|s| Ok(usize::from(predict(net, &s.data, &stats)?.0 == s.label)))
        .collect::<eeginterp::Result<Vec<usize>>>()?
        .into_iter()
        .sum::<usize>();
    Ok(correct as f64 / ds.samples.len() as f64)
}

pub fn train(cfg: &RunConfig, a: &TrainArgs) -> Result<(), CliError> {
    let ds_path = required(&a.dataset, &cfg.paths.dataset, "dataset")?;
    let model = a.model.clone().or_else(|| cfg.model.clone()).unwrap_or_else(|| "interpretable_cnn".into());
    check_model(&model)?;
    let mut tc = cfg.train.clone();
    if let Some(v) = a.epochs {
        tc.epochs = v;
    }
    if let Some(v) = a.batch_size {
        tc.batch_size = v;
    }
    if let Some(v) = a.learning_rate {
        tc.learning_rate = v;
    }
    if let Some(v) = &a.class_weights {
        tc.class_weights = v.clone();
    }
    if let Some(v) = a.seed {
        tc.seed = v;
    }
    let ds = load_dataset(&ds_path)?;
    let (train_set, test_set) = match a.holdout {
        Some(s) => {
            let (tr, te) = split_leave_one_subject_out(&ds, s)?;
            (tr, Some(te))
        }
        None => (ds, None),
    };
    let arch = if model == EEGNET {
        Architecture::Eegnet(EegNetConfig::default())
    } else {
        Architecture::InterpretableCnn(InterpretableCnnConfig::default())
    };
    let mut net = arch.build(train_set.channels(), train_set.length, train_set.classes())?;
    init_weights(&mut net, tc.seed);
    let (net, history) = train_net(&net, &train_set.inputs(), &train_set.labels(), &tc)?;
    save_weights(&net, &a.out)?;
    let holdout_accuracy = test_set.as_ref().map(|t| accuracy(&net, t)).transpose()?;
    let record = TrainRecord {
        model: &model,
        config: &tc,
        train_samples: train_set.samples.len(),
        epochs: &history.epochs,
        holdout_subject: a.holdout,
        holdout_accuracy,
    };
    let json = serde_json::to_string_pretty(&record).expect("history serializes");
    write_file(&sibling(&a.out, "history.json"), json.as_bytes())?;
    if let Some(last) = history.epochs.last() {
        println!("final epoch: loss {:.4}, train accuracy {:.3}", last.loss, last.accuracy);
    }
    if let Some(acc) = holdout_accuracy {
        println!("held-out subject accuracy {acc:.3}");
    }
    Ok(())
}

struct Loaded {
    ds: Dataset,
    net: NetworkSpec<f32>,
    stats: BatchStats<f32>,
    chosen: Vec<usize>,
}

impl Loaded {
    fn samples(&self) -> Vec<&EEGSample> {
        self.chosen.iter().map(|&i| &self.ds.samples[i]).collect()
    }
}

/// Batch statistics come from the whole selection pool (the subject, or the
/// full dataset); `--samples` and `--limit` only narrow what is processed.
fn load_source(cfg: &RunConfig, s: &Source) -> Result<Loaded, CliError> {
    let ds_path = required(&s.dataset, &cfg.paths.dataset, "dataset")?;
    let w_path = required(&s.weights, &cfg.paths.weights, "weights")?;
    let ds = load_dataset(&ds_path)?;
    let net = load_weights(&w_path)?;
    if net.input_channels != ds.channels() || net.input_length != ds.length || net.classes != ds.classes() {
        return Err(CliError::Data(format!(
            "{} expects [{}, {}] inputs with {} classes but {} holds [{}, {}] with {} classes",
            w_path.display(),
            net.input_channels,
            net.input_length,
            net.classes,
            ds_path.display(),
            ds.channels(),
            ds.length,
            ds.classes()
        )));
    }
    let pool: Vec<usize> = (0..ds.samples.len())
        .filter(|&i| s.subject.is_none_or(|subj| ds.samples[i].subject == subj))
        .collect();
    if pool.is_empty() {
        return Err(eeginterp::Error::UnknownSubject(s.subject.unwrap_or_default()).into());
    }
    let batch: Vec<_> = pool.iter().map(|&i| ds.samples[i].data.clone()).collect();
    let stats = compute_batch_stats(&net, &batch)?;
    let mut chosen = match &s.samples {
        Some(ids) => ids
            .iter()
            .map(|id| {
                pool.iter()
                    .copied()
                    .find(|&i| ds.samples[i].id == *id)
                    .ok_or_else(|| CliError::Usage(format!("sample id {id} is not in the selection")))
            })
            .collect::<Result<Vec<_>, _>>()?,
        None => pool,
    };
    if let Some(l) = s.limit {
        chosen.truncate(l);
    }
    Ok(Loaded { ds, net, stats, chosen })
}

fn methods(cfg: &RunConfig, flag: &Option<Vec<String>>) -> Result<Vec<Method>, CliError> {
    let names: Vec<String> = flag
        .clone()
        .or_else(|| cfg.methods.clone())
        .unwrap_or_else(|| Method::NAMES.iter().map(|s| s.to_string()).collect());
    parse_methods(&names, &cfg.method.resolve())
}

fn compute_map(l: &Loaded, s: &EEGSample, m: Method) -> eeginterp::Result<ContributionMap<f32>> {
    attribute_map(&l.net, &s.data, &l.stats, &MethodSpec::from(m), None)
}

pub fn attribute(cfg: &RunConfig, a: &AttributeArgs) -> Result<(), CliError> {
    let ms = methods(cfg, &a.methods)?;
    let l = load_source(cfg, &a.source)?;
    let per_sample = l
        .samples()
        .par_iter()
        .map(|s| ms.iter().map(|&m| Ok((s.id, compute_map(&l, s, m)?))).collect())
        .collect::<eeginterp::Result<Vec<Vec<_>>>>()?;
    let maps: Vec<_> = per_sample.into_iter().flatten().collect();
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
    }
    save_maps(&maps, &a.out)?;
    println!("wrote {} maps to {}", maps.len(), a.out.display());
    Ok(())
}

fn eval_config(cfg: &RunConfig, fractions: &Option<Vec<f64>>, trials: Option<usize>, seed: u64) -> EvalConfig {
    EvalConfig {
        fractions: fractions.clone().unwrap_or_else(|| cfg.metrics.fractions.clone()),
        trials: trials.unwrap_or(cfg.metrics.trials),
        seed,
        channel_deletion: cfg.metrics.channel_deletion,
    }
}

fn evaluate_sample(l: &Loaded, s: &EEGSample, ms: &[Method], base: &EvalConfig) -> eeginterp::Result<Vec<SampleRecord>> {
    let ecfg = EvalConfig {
        seed: derive_seed(&[base.seed, s.id as u64]),
        ..base.clone()
    };
    let mut out = Vec::with_capacity(ms.len() + 1);
    let mut target = 0;
    for &m in ms {
        let map = compute_map(l, s, m)?;
        target = map.target_class;
        out.push(evaluate_map(&l.net, &s.data, &l.stats, &map, s.id, &ecfg)?);
    }
    let mut random = random_baseline_map(l.net.input_channels, l.net.input_length, ecfg.seed);
    random.target_class = if ms.is_empty() {
        predict(&l.net, &s.data, &l.stats)?.0
    } else {
        target
    };
    out.push(evaluate_map(&l.net, &s.data, &l.stats, &random, s.id, &ecfg)?);
    Ok(out)
}

pub fn evaluate(cfg: &RunConfig, a: &EvaluateArgs) -> Result<(), CliError> {
    let ms = methods(cfg, &a.methods)?;
    let base = eval_config(cfg, &a.fractions, a.trials, a.seed);
    let l = load_source(cfg, &a.source)?;
    let threads = a.jobs.unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Usage(format!("--jobs: {e}")))?;
    let samples = l.samples();
    let records: Vec<SampleRecord> = pool
        .install(|| {
            samples
                .par_iter()
                .map(|s| evaluate_sample(&l, s, &ms, &base))
                .collect::<eeginterp::Result<Vec<_>>>()
        })?
        .into_iter()
        .flatten()
        .collect();
    let mut lines = Vec::new();
    for r in &records {
        serde_json::to_writer(&mut lines, r).expect("record serializes");
        lines.push(b'\n');
    }
    write_file(&a.out, &lines)?;
    let summary = aggregate(&records)?;
    let table = summary_table(&summary);
    write_file(&sibling(&a.out, "summary.txt"), table.as_bytes())?;
    let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    write_file(&sibling(&a.out, "summary.json"), json.as_bytes())?;
    let mut stdout = std::io::stdout().lock();
    let _ = stdout.write_all(table.as_bytes());
    Ok(())
}

fn pipeline(cfg: &RunConfig, st: Option<f64>, ct: Option<f64>, w: Option<usize>) -> PipelineConfig {
    PipelineConfig {
        sample_threshold: st.unwrap_or(cfg.pipeline.sample_threshold),
        channel_threshold: ct.unwrap_or(cfg.pipeline.channel_threshold),
        smoothing_window: w.unwrap_or(cfg.pipeline.smoothing_window),
    }
}

fn output_dir(flag: &Option<PathBuf>, cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let dir = flag.clone().or_else(|| cfg.paths.output_dir.clone()).unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
    Ok(dir)
}

fn header(l: &Loaded, s: &EEGSample) -> eeginterp::Result<String> {
    let (class, probs) = predict(&l.net, &s.data, &l.stats)?;
    let ps: Vec<String> = probs.iter().map(|p| format!("{p:.3}")).collect();
    Ok(format!(
        "sample {} | subject {} | true label {} | predicted {class} | probabilities {}",
        s.id,
        s.subject,
        s.label,
        ps.join(" ")
    ))
}

pub fn render(cfg: &RunConfig, a: &RenderArgs) -> Result<(), CliError> {
    let ms = methods(cfg, &a.methods)?;
    let pipe = pipeline(cfg, a.sample_threshold, a.channel_threshold, a.window);
    let l = load_source(cfg, &a.source)?;
    pipe.validate(l.ds.length)?;
    let layout = match a.layout.clone().or_else(|| cfg.paths.layout.clone()) {
        Some(p) => load_layout(&p)?,
        None => ElectrodeLayout::default_30(),
    };
    let layout = layout.select(&l.ds.channel_names).map_err(|e| CliError::Data(format!("layout: {e}")))?;
    let dir = output_dir(&a.out_dir, cfg)?;
    let jobs: Vec<(&EEGSample, Method)> = l.samples().into_iter().flat_map(|s| ms.iter().map(move |&m| (s, m))).collect();
    let files = jobs
        .par_iter()
        .map(|&(s, m)| {
            let map = compute_map(&l, s, m)?;
            let processed = process(&map, &channel_contribution(&map), &pipe)?;
            let head = format!("{} | {}", header(&l, s)?, m.label());
            let view = render_sample_view(&s.data, &processed, &l.ds.channel_names, &head)?;
            let topo = render_topomap(&processed.channel, &layout, &head)?;
            Ok([
                (dir.join(format!("{}_{}.svg", s.id, m.name())), view),
                (dir.join(format!("{}_{}_topomap.svg", s.id, m.name())), topo),
            ])
        })
        .collect::<eeginterp::Result<Vec<_>>>()?;
    for (path, body) in files.iter().flatten() {
        write_file(path, body.as_bytes())?;
    }
    println!("wrote {} files to {}", files.len() * 2, dir.display());
    Ok(())
}

pub fn report(cfg: &RunConfig, a: &ReportArgs) -> Result<(), CliError> {
    let ms = methods(cfg, &a.methods)?;
    let pipe = pipeline(cfg, a.sample_threshold, a.channel_threshold, a.window);
    let ecfg = eval_config(cfg, &a.fractions, a.trials, a.seed);
    let l = load_source(cfg, &a.source)?;
    pipe.validate(l.ds.length)?;
    let dir = output_dir(&a.out_dir, cfg)?;
    let jobs: Vec<(&EEGSample, Method)> = l.samples().into_iter().flat_map(|s| ms.iter().map(move |&m| (s, m))).collect();
    let reports = jobs
        .par_iter()
        .map(|&(s, m)| {
            let map = compute_map(&l, s, m)?;
            let processed = process(&map, &channel_contribution(&map), &pipe)?;
            let ctx = ReportContext {
                sample_id: s.id.to_string(),
                subject: Some(s.subject),
                true_label: Some(s.label),
                model: &l.net.name,
                channel_names: &l.ds.channel_names,
            };
            let sample_cfg = EvalConfig {
                seed: derive_seed(&[ecfg.seed, s.id as u64]),
                ..ecfg.clone()
            };
            let r = generate_report(&l.net, &l.stats, &s.data, &map, &processed, &pipe, &sample_cfg, &ctx)?;
            Ok((dir.join(format!("{}_{}.txt", s.id, m.name())), format!("{}\n{}", r.header(), r.to_text())))
        })
        .collect::<eeginterp::Result<Vec<_>>>()?;
    for (path, text) in &reports {
        write_file(path, text.as_bytes())?;
    }
    println!("wrote {} reports to {}", reports.len(), dir.display());
    Ok(())
}
