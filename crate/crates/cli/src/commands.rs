use crate::config;
use crate::manifest::{manifest_path, ManifestBuilder};
use crate::{
    BuildDatasetArgs, Cli, Command, CompareArgs, DenoiseArgs, DetectArgs, EvalArgs, EvalCommand, InjectArgs, Preset,
    ScreenArgs, SplitChoice, SweepArgs, SynthArgs, TrainCommand, TrainDetectorArgs, TrainReconstructorArgs,
};
use cleanctg::baselines::ArConfig;
use cleanctg::detector::DetectorConfig;
use cleanctg::io::{read_dataset_jsonl, read_signal_csv, write_dataset_jsonl, write_masks_jsonl, write_signal_csv};
use cleanctg::noise::{ClassMap, InjectionConfig};
use cleanctg::pipeline::{self, CohortConfig, Model, ModelConfig, SweepConfig};
use cleanctg::reconstructor::ReconstructorConfig;
use cleanctg::screen::{self, ScreenCriteria};
use cleanctg::signal::{normalize, FhrSignal, Segment10, SEGMENT10_LEN};
use cleanctg::synth::{self, SynthConfig};
use cleanctg::training::{self, Dataset, EpochLog, TrainConfig};
use cleanctg::{Error, Result};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

pub fn run(cli: &Cli) -> Result<()> {
    let c = &cli.common;
    match &cli.command {
        Command::Synth(a) => synth_cmd(c, a),
        Command::Inject(a) => inject_cmd(c, a),
        Command::BuildDataset(a) => build_dataset_cmd(c, a),
        Command::Train(TrainCommand::Detector(a)) => train_detector_cmd(c, a),
        Command::Train(TrainCommand::Reconstructor(a)) => train_reconstructor_cmd(c, a),
        Command::Detect(a) => detect_cmd(c, a),
        Command::Denoise(a) => denoise_cmd(c, a),
        Command::Eval(EvalCommand::Detect(a)) => eval_cmd(c, a, false),
        Command::Eval(EvalCommand::Reconstruct(a)) => eval_cmd(c, a, true),
        Command::Sweep(a) => sweep_cmd(c, a),
        Command::Screen(a) => screen_cmd(c, a),
        Command::Compare(a) => compare_cmd(c, a),
    }
}

/// Applies `--config` to the command's default config.
fn resolve<T: Serialize + DeserializeOwned>(c: &crate::Common, base: T) -> Result<T> {
    match &c.config {
        Some(spec) => config::apply(&base, &config::parse_overrides(spec)?),
        None => Ok(base),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn write_json(path: &Path, v: &impl Serialize) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, v)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn write_text(path: &Path, s: &str) -> Result<()> {
    let mut w = create(path)?;
    w.write_all(s.as_bytes())?;
    w.flush()?;
    Ok(())
}

/// Reads a trace CSV and brings it to 1 Hz.
fn read_trace(path: &Path) -> Result<FhrSignal> {
    let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let s = read_signal_csv(BufReader::new(File::open(path)?), &id)?;
    if s.rate_hz() == 4 {
        s.downsample()
    } else {
        Ok(s)
    }
}

fn read_dataset(path: &Path) -> Result<Dataset> {
    read_dataset_jsonl(BufReader::new(File::open(path)?))
}

fn load_model(path: &Path) -> Result<Model> {
    if !path.exists() {
        return Err(Error::Io(std::io::Error::new(std::io::ErrorKind::NotFound, format!("{} not found", path.display()))));
    }
    Model::load(path)
}

#[derive(Serialize, Deserialize)]
struct SynthCmdConfig {
    synth: SynthConfig,
    seed: u64,
}

fn synth_cmd(c: &crate::Common, a: &SynthArgs) -> Result<()> {
    let cfg = resolve(c, SynthCmdConfig { synth: SynthConfig::default(), seed: c.seed })?;
    let mut m = ManifestBuilder::new("synth", &cfg, cfg.seed)?;
    let s = synth::trace(a.minutes * 60, !a.non_reactive, &cfg.synth, cfg.seed)?;
    write_signal_csv(create(&a.out)?, s.samples(), 1)?;
    m.output(&a.out).finish(&manifest_path(&a.out))
}

#[derive(Serialize, Deserialize)]
struct InjectCmdConfig {
    injection: InjectionConfig,
}

fn inject_cmd(c: &crate::Common, a: &InjectArgs) -> Result<()> {
    let cfg = resolve(c, InjectCmdConfig { injection: InjectionConfig::default().with_seed(c.seed) })?;
    cfg.injection.validate()?;
    let mut m = ManifestBuilder::new("inject", &cfg, cfg.injection.seed)?;
    let signal = read_trace(&a.input)?;
    let (corrupted, lines) = pipeline::inject_trace(&signal, &cfg.injection)?;
    write_signal_csv(create(&a.out)?, &corrupted, 1)?;
    write_masks_jsonl(create(&a.masks)?, &lines)?;
    m.input(&a.input).output(&a.out).output(&a.masks).finish(&manifest_path(&a.out))
}

#[derive(Serialize, Deserialize)]
struct BuildDatasetConfig {
    injection: InjectionConfig,
    synth: SynthConfig,
}

fn clean_segments_of(signal: &FhrSignal) -> Result<Vec<Segment10>> {
    Ok(signal
        .segment()?
        .into_iter()
        .filter(|s| s.values().iter().all(Option::is_some))
        .collect())
}

fn build_dataset_cmd(c: &crate::Common, a: &BuildDatasetArgs) -> Result<()> {
    let cfg = resolve(
        c,
        BuildDatasetConfig { injection: InjectionConfig::default().with_seed(c.seed), synth: SynthConfig::default() },
    )?;
    let mut m = ManifestBuilder::new("build-dataset", &cfg, cfg.injection.seed)?;
    let mut segs = Vec::new();
    for p in &a.inputs {
        segs.extend(clean_segments_of(&read_trace(p)?)?);
        m.input(p);
    }
    segs.extend(synth::clean_segments(a.synthetic, &cfg.synth, cfg.injection.seed));
    if segs.is_empty() {
        return Err(Error::Precondition("no clean 10-minute segments in the inputs".into()));
    }
    let ds = training::build_dataset(&segs, &cfg.injection)?;
    write_dataset_jsonl(create(&a.out)?, &ds)?;
    m.output(&a.out).finish(&manifest_path(&a.out))
}

#[derive(Serialize, Deserialize)]
struct TrainDetectorConfig {
    detector: DetectorConfig,
    reconstructor: ReconstructorConfig,
    train: TrainConfig,
}

fn epoch_csv(history: &[EpochLog]) -> String {
    let mut s = String::from("epoch,steps,train_loss,val_loss,val_metric\n");
    let f = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for e in history {
        s += &format!("{},{},{},{},{}\n", e.epoch, e.steps, e.train_loss, f(e.val_loss), f(e.val_metric));
    }
    s
}

#[derive(Serialize)]
struct TrainReport<R: Serialize> {
    best_epoch: usize,
    epochs: usize,
    steps: usize,
    final_train_loss: Option<f64>,
    parents: [usize; 3],
    test: R,
}

fn train_detector_cmd(c: &crate::Common, a: &TrainDetectorArgs) -> Result<()> {
    let mc = match a.preset {
        Preset::Desk => ModelConfig::desk(),
        Preset::Full => ModelConfig::default(),
        Preset::Tiny => ModelConfig { detector: DetectorConfig::tiny(), reconstructor: ReconstructorConfig::tiny() },
    };
    let cfg = resolve(
        c,
        TrainDetectorConfig {
            detector: mc.detector,
            reconstructor: mc.reconstructor,
            train: TrainConfig { seed: c.seed, ..TrainConfig::default() },
        },
    )?;
    let mut m = ManifestBuilder::new("train detector", &cfg, cfg.train.seed)?;
    let ds = read_dataset(&a.dataset)?;
    let split = ds.split(&cfg.train);
    let out = training::train_stage1(&ds, &split, &cfg.detector, &cfg.train)?;
    let model = Model {
        config: ModelConfig { detector: cfg.detector.clone(), reconstructor: cfg.reconstructor.clone() },
        state: out.state,
        split: Some(split.clone()),
    };
    let test = if split.test.is_empty() { None } else { Some(pipeline::evaluate_detection(&model, &ds, &split.test)?) };
    finish_training(&mut m, a.run_dir.as_path(), &a.dataset, &cfg, &model, &out.history, out.best_epoch, out.step_losses.len(), &split, test)
}

#[allow(clippy::too_many_arguments)]
fn finish_training<R: Serialize>(
    m: &mut ManifestBuilder,
    dir: &Path,
    dataset: &Path,
    cfg: &impl Serialize,
    model: &Model,
    history: &[EpochLog],
    best_epoch: usize,
    steps: usize,
    split: &training::Split,
    test: R,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let ckpt = dir.join("model.ckpt");
    write_json(&dir.join("config.json"), cfg)?;
    write_text(&dir.join("metrics.csv"), &epoch_csv(history))?;
    model.save(&ckpt)?;
    let report = TrainReport {
        best_epoch,
        epochs: history.len(),
        steps,
        final_train_loss: history.last().map(|e| e.train_loss),
        parents: [split.train.len(), split.val.len(), split.test.len()],
        test,
    };
    write_json(&dir.join("report.json"), &report)?;
    m.input(dataset)
        .output(&dir.join("config.json"))
        .output(&dir.join("metrics.csv"))
        .output(&ckpt)
        .output(&dir.join("report.json"))
        .finish(&dir.join("manifest.json"))
}

#[derive(Serialize, Deserialize)]
struct TrainReconstructorConfig {
    reconstructor: ReconstructorConfig,
    train: TrainConfig,
}

fn train_reconstructor_cmd(c: &crate::Common, a: &TrainReconstructorArgs) -> Result<()> {
    let base = load_model(&a.model)?;
    let cfg = resolve(
        c,
        TrainReconstructorConfig {
            reconstructor: base.config.reconstructor.clone(),
            train: TrainConfig { seed: c.seed, ..TrainConfig::default() },
        },
    )?;
    let mut m = ManifestBuilder::new("train reconstructor", &cfg, cfg.train.seed)?;
    m.input(&a.model);
    let ds = read_dataset(&a.dataset)?;
    let split = match &base.split {
        Some(s) if s.train.iter().chain(&s.val).chain(&s.test).all(|&p| p < ds.parents.len()) => s.clone(),
        _ => ds.split(&cfg.train),
    };
    let det = base.state.extract_group(cleanctg::detector::GROUP);
    let out = training::train_stage2(&ds, &split, &det, &base.config.detector, &cfg.reconstructor, &cfg.train)?;
    let mut state = det;
    state.merge(out.state)?;
    let model = Model {
        config: ModelConfig { detector: base.config.detector.clone(), reconstructor: cfg.reconstructor.clone() },
        state,
        split: Some(split.clone()),
    };
    let test = if split.test.is_empty() {
        None
    } else {
        Some(pipeline::evaluate_reconstruction(&model, &ds, &split.test, &ArConfig::default())?)
    };
    finish_training(&mut m, a.run_dir.as_path(), &a.dataset, &cfg, &model, &out.history, out.best_epoch, out.step_losses.len(), &split, test)
}

#[derive(Serialize)]
struct DetectSlice {
    segment: usize,
    minute: usize,
    probs: ClassMap<f64>,
    gates: ClassMap<bool>,
}

fn detect_cmd(_c: &crate::Common, a: &DetectArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let mut m = ManifestBuilder::new("detect", &model.config, 0)?;
    let signal = read_trace(&a.input)?;
    let segs: Vec<_> = signal.samples().chunks_exact(SEGMENT10_LEN).collect();
    let rows = segs
        .par_iter()
        .enumerate()
        .map(|(k, raw)| {
            let dets = model.detect_parent(&normalize(raw))?;
            Ok(dets
                .into_iter()
                .enumerate()
                .map(|(minute, d)| DetectSlice {
                    segment: k,
                    minute,
                    probs: ClassMap::from_array(d.result.probs),
                    gates: ClassMap::from_array(d.result.gates),
                })
                .collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>>>()?;
    let rows: Vec<DetectSlice> = rows.into_iter().flatten().collect();
    write_json(&a.out, &rows)?;
    m.input(&a.model).input(&a.input).output(&a.out).finish(&manifest_path(&a.out))
}

fn denoise_cmd(_c: &crate::Common, a: &DenoiseArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let mut m = ManifestBuilder::new("denoise", &model.config, 0)?;
    let signal = read_trace(&a.input)?;
    let out = model.denoise_trace(&signal)?;
    write_signal_csv(create(&a.out)?, &out.samples, 1)?;
    m.input(&a.model).input(&a.input).output(&a.out);
    if let Some(r) = &a.report {
        write_json(r, &out.segments)?;
        m.output(r);
    }
    m.finish(&manifest_path(&a.out))
}

#[derive(Serialize, Deserialize)]
struct EvalConfig {
    ar: ArConfig,
}

fn eval_cmd(c: &crate::Common, a: &EvalArgs, reconstruct: bool) -> Result<()> {
    let cfg = resolve(c, EvalConfig { ar: ArConfig::default() })?;
    let model = load_model(&a.model)?;
    let ds = read_dataset(&a.dataset)?;
    let parents: Vec<usize> = match (a.split, &model.split) {
        (SplitChoice::All, _) => (0..ds.parents.len()).collect(),
        (_, None) => return Err(Error::Precondition("model carries no split; use --split all".into())),
        (SplitChoice::Test, Some(s)) => s.test.clone(),
        (SplitChoice::Val, Some(s)) => s.val.clone(),
        (SplitChoice::Train, Some(s)) => s.train.clone(),
    };
    if parents.is_empty() || parents.iter().any(|&p| p >= ds.parents.len()) {
        return Err(Error::Shape("split does not fit this dataset".into()));
    }
    let name = if reconstruct { "eval reconstruct" } else { "eval detect" };
    let mut m = ManifestBuilder::new(name, &cfg, 0)?;
    if reconstruct {
        write_json(&a.out, &pipeline::evaluate_reconstruction(&model, &ds, &parents, &cfg.ar)?)?;
    } else {
        write_json(&a.out, &pipeline::evaluate_detection(&model, &ds, &parents)?)?;
    }
    m.input(&a.model).input(&a.dataset).output(&a.out).finish(&manifest_path(&a.out))
}

#[derive(Serialize, Deserialize)]
struct SweepCmdConfig {
    sweep: SweepConfig,
    ar: ArConfig,
    synth: SynthConfig,
}

fn sweep_cmd(c: &crate::Common, a: &SweepArgs) -> Result<()> {
    let cfg = resolve(
        c,
        SweepCmdConfig {
            sweep: SweepConfig { seed: c.seed, ..SweepConfig::default() },
            ar: ArConfig::default(),
            synth: SynthConfig::default(),
        },
    )?;
    let mut m = ManifestBuilder::new("sweep", &cfg, cfg.sweep.seed)?;
    let model = match &a.model {
        Some(p) => {
            m.input(p);
            Some(load_model(p)?)
        }
        None => None,
    };
    let clean = match &a.dataset {
        Some(p) => {
            m.input(p);
            let ds = read_dataset(p)?;
            ds.parents
                .iter()
                .map(|p| Segment10::from_bpm(&p.record.clean, p.id.clone(), 0))
                .collect::<Result<Vec<_>>>()?
        }
        None => synth::clean_segments(a.segments, &cfg.synth, cfg.sweep.seed),
    };
    let report = pipeline::length_sweep(model.as_ref(), &clean, &cfg.sweep, &cfg.ar)?;
    write_text(&a.out, &report.to_csv())?;
    let summary = a.out.with_extension("json");
    write_json(&summary, &report)?;
    m.output(&a.out).output(&summary).finish(&manifest_path(&a.out))
}

#[derive(Serialize, Deserialize)]
struct ScreenCmdConfig {
    criteria: ScreenCriteria,
}

fn screen_cmd(c: &crate::Common, a: &ScreenArgs) -> Result<()> {
    let cfg = resolve(c, ScreenCmdConfig { criteria: ScreenCriteria::default() })?;
    cfg.criteria.validate()?;
    let mut m = ManifestBuilder::new("screen", &cfg, 0)?;
    let signal = read_trace(&a.input)?;
    let d = screen::time_to_decision(signal.samples(), &cfg.criteria)?;
    write_json(&a.out, &d)?;
    m.input(&a.input).output(&a.out).finish(&manifest_path(&a.out))
}

#[derive(Serialize, Deserialize)]
struct CompareConfig {
    cohort: CohortConfig,
    criteria: ScreenCriteria,
}

fn compare_cmd(c: &crate::Common, a: &CompareArgs) -> Result<()> {
    let cfg = resolve(c, CompareConfig { cohort: CohortConfig { seed: c.seed, ..CohortConfig::default() }, criteria: ScreenCriteria::default() })?;
    cfg.criteria.validate()?;
    let mut m = ManifestBuilder::new("compare", &cfg, cfg.cohort.seed)?;
    match (&a.clean, &a.corrupted, &a.denoised) {
        (Some(cl), Some(co), Some(de)) => {
            let [x, y, z] = [cl, co, de].map(|p| read_trace(p));
            let rec = screen::paired_comparison(x?.samples(), y?.samples(), z?.samples(), &cfg.criteria)?;
            write_json(&a.out, &rec)?;
            m.input(cl).input(co).input(de);
        }
        (None, None, None) => {
            let path = a
                .model
                .as_ref()
                .ok_or_else(|| Error::Precondition("cohort mode needs --model (or give --clean/--corrupted/--denoised)".into()))?;
            let model = load_model(path)?;
            m.input(path);
            let (records, summary) = pipeline::screen_cohort(&model, &cfg.cohort, &cfg.criteria)?;
            write_text(&a.out, &summary.to_csv())?;
            if let Some(r) = &a.records {
                let mut w = create(r)?;
                for rec in &records {
                    serde_json::to_writer(&mut w, rec)?;
                    writeln!(w)?;
                }
                w.flush()?;
                m.output(r);
            }
        }
        _ => return Err(Error::Precondition("file mode needs all of --clean, --corrupted and --denoised".into())),
    }
    m.output(&a.out).finish(&manifest_path(&a.out))
}
