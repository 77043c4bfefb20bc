use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use lassl::config::{ConfigFile, Recipe, Settings};
use lassl::eval::{self, SpectrumReport, SubgroupReport};
use lassl::experiment::{self, TEST_STREAM};
use lassl::numeric::write_atomic;
use lassl::synthdata::{generate, Dataset};
use lassl::trainer::{Checkpoint, RunLog, RunSummary, Trainer};
use lassl::{Error, Result};

pub struct Options {
    pub config: Option<PathBuf>,
    pub recipe: Option<String>,
    pub threads: Option<usize>,
}

const GEN_KEYS: &[&str] = &["n", "aligned_ratio", "data_seed"];
const PRETRAIN_KEYS: &[&str] = &["mode", "epochs", "seeds"];
const PROBE_KEYS: &[&str] = &["test_n"];

pub const MANIFEST: &str = "run.json";
pub const CHECKPOINT: &str = "checkpoint.bin";
pub const RUNLOG: &str = "runlog.csv";
pub const SUMMARY: &str = "summary.json";
pub const PROBE_JSON: &str = "probe.json";
pub const PROBE_CSV: &str = "probe.csv";
pub const SPECTRUM_JSON: &str = "spectrum.json";
pub const SPECTRUM_CSV: &str = "spectrum.csv";
pub const SPECTRUM_SVG: &str = "spectrum.svg";

fn settings(opts: &Options, required: &[&str]) -> Result<Settings> {
    let file = match &opts.config {
        Some(path) => ConfigFile::read(path)?,
        None => ConfigFile::default(),
    };
    file.require(required)?;
    let recipe = opts.recipe.as_deref().map(Recipe::parse).transpose()?;
    let mut s = Settings::resolve(&file, recipe)?;
    if let Some(t) = opts.threads {
        s.experiment.train.threads = t.max(1);
    }
    Ok(s)
}

fn output_dir(flag: Option<PathBuf>, fallback: Option<PathBuf>) -> Result<PathBuf> {
    let dir = flag
        .or(fallback)
        .ok_or_else(|| Error::Config("no output directory: pass --out, set LASSL_OUTPUT_DIR, or set output_dir".into()))?;
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    text.push('\n');
    Ok(write_atomic(path, text.as_bytes())?)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

pub fn seed_dir(run: &Path, seed: u64) -> PathBuf {
    run.join(format!("seed-{seed}"))
}

pub fn gen_data(opts: &Options, out: &Path) -> Result<()> {
    let s = settings(opts, GEN_KEYS)?;
    if let Some(dir) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let data = generate(&s.experiment.generator)?;
    data.write(out)?;
    eprintln!("wrote {} examples to {}", data.len(), out.display());
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub seeds: Vec<u64>,
    pub mode: String,
    pub data: PathBuf,
    pub settings: Settings,
}

pub fn pretrain(opts: &Options, data_path: &Path, out: Option<PathBuf>) -> Result<()> {
    let s = settings(opts, PRETRAIN_KEYS)?;
    let dir = output_dir(out, s.output_dir.clone())?;
    let data = Dataset::read(data_path)?;
    for &seed in &s.seeds {
        let cfg = s.train_for(seed);
        let started = Instant::now();
        let mut trainer = Trainer::new(&data, cfg.clone())?;
        while !trainer.is_finished() {
            let r = trainer.run_epoch()?;
            eprintln!(
                "seed {seed} epoch {:>4} loss {:.4} gap {:+.4} lr {:.4}",
                r.epoch,
                r.loss,
                r.gap(),
                r.lr
            );
        }
        let sd = seed_dir(&dir, seed);
        fs::create_dir_all(&sd)?;
        trainer.checkpoint().write(&sd.join(CHECKPOINT))?;
        write_atomic(&sd.join(RUNLOG), trainer.log().to_csv().as_bytes())?;
        write_json(&sd.join(SUMMARY), &RunSummary::new(trainer.log(), &cfg, started))?;
    }
    let manifest = Manifest {
        seeds: s.seeds.clone(),
        mode: s.experiment.train.mode.as_str().to_string(),
        data: data_path.to_path_buf(),
        settings: s,
    };
    write_json(&dir.join(MANIFEST), &manifest)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ConfoundReport {
    pub confound: String,
    pub report: SubgroupReport,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ProbeOutput {
    pub converged: bool,
    pub iterations: usize,
    pub final_loss: f64,
    pub test_n: usize,
    pub reports: Vec<ConfoundReport>,
}

fn parent_dir(path: &Path) -> Option<PathBuf> {
    path.parent().map(|p| if p.as_os_str().is_empty() { PathBuf::from(".") } else { p.to_path_buf() })
}

pub fn probe(opts: &Options, ckpt_path: &Path, data_path: &Path, out: Option<PathBuf>) -> Result<()> {
    let s = settings(opts, PROBE_KEYS)?;
    let dir = output_dir(out, parent_dir(ckpt_path))?;
    let ckpt = Checkpoint::read(ckpt_path)?;
    let train = Dataset::read(data_path)?;
    let test = generate(&train.config().balanced_split(s.experiment.test_n, TEST_STREAM))?;
    let ev = experiment::evaluate(&ckpt.params, &train, &test, &s.experiment.probe)?;
    if !ev.probe.converged {
        eprintln!(
            "warning: probe stopped after {} iterations without reaching tolerance {}",
            ev.probe.iterations, s.experiment.probe.tolerance
        );
    }
    let reports: Vec<ConfoundReport> = ev
        .reports
        .into_iter()
        .enumerate()
        .map(|(j, report)| ConfoundReport { confound: train.config().confounds[j].attribute.name.clone(), report })
        .collect();
    let mut csv = format!("confound,{}\n", eval::metrics::REPORT_HEADER);
    for r in &reports {
        for line in r.report.to_csv().lines().skip(1) {
            csv.push_str(&format!("{},{line}\n", r.confound));
        }
    }
    write_atomic(&dir.join(PROBE_CSV), csv.as_bytes())?;
    let output = ProbeOutput {
        converged: ev.probe.converged,
        iterations: ev.probe.iterations,
        final_loss: ev.probe.final_loss,
        test_n: s.experiment.test_n,
        reports,
    };
    write_json(&dir.join(PROBE_JSON), &output)
}

pub fn spectra(ckpt_path: &Path, data_path: &Path, out: Option<PathBuf>, svg: bool) -> Result<()> {
    let dir = output_dir(out, parent_dir(ckpt_path))?;
    let ckpt = Checkpoint::read(ckpt_path)?;
    let data = Dataset::read(data_path)?;
    let report = eval::spectrum(&eval::extract(&ckpt.params, &data)?)?;
    let mut csv = String::from("index,singular_value,normalized\n");
    for (i, (s, v)) in report.singular_values.iter().zip(&report.normalized).enumerate() {
        csv.push_str(&format!("{},{s},{v}\n", i + 1));
    }
    write_atomic(&dir.join(SPECTRUM_CSV), csv.as_bytes())?;
    write_json(&dir.join(SPECTRUM_JSON), &report)?;
    if svg {
        let chart = crate::svg::line_chart(
            "Normalized singular values",
            "index",
            "σ / σ₁",
            &[("representation", report.normalized.clone())],
        );
        write_atomic(&dir.join(SPECTRUM_SVG), chart.as_bytes())?;
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct SubgroupDelta {
    confound: String,
    group: String,
    accuracy_a: f64,
    accuracy_b: f64,
    delta: f64,
}

#[derive(Debug, Serialize)]
struct SeedComparison {
    seed: u64,
    accuracy: Vec<SubgroupDelta>,
    gap_a: f64,
    gap_b: f64,
    gap_delta: f64,
    tail_mass_a: f64,
    tail_mass_b: f64,
    tail_mass_delta: f64,
}

#[derive(Debug, Serialize)]
struct MeanDelta {
    confound: String,
    group: String,
    delta: f64,
}

#[derive(Debug, Serialize)]
struct Comparison {
    run_a: PathBuf,
    run_b: PathBuf,
    mode_a: String,
    mode_b: String,
    seeds: Vec<u64>,
    per_seed: Vec<SeedComparison>,
    mean_accuracy_delta: Vec<MeanDelta>,
    mean_gap_delta: f64,
    mean_tail_mass_delta: f64,
}

struct SeedArtifacts {
    probe: ProbeOutput,
    gap: f64,
    tail_mass: f64,
}

fn load_seed(run: &Path, seed: u64) -> Result<SeedArtifacts> {
    let dir = seed_dir(run, seed);
    let log_path = dir.join(RUNLOG);
    let text = fs::read_to_string(&log_path).map_err(|e| Error::Format(format!("{}: {e}", log_path.display())))?;
    let log = RunLog::from_csv(&text)?;
    let gap = log.last().ok_or_else(|| Error::Format(format!("{} has no epochs", log_path.display())))?.gap();
    let probe: ProbeOutput = read_json(&dir.join(PROBE_JSON))?;
    let spectrum: SpectrumReport = read_json(&dir.join(SPECTRUM_JSON))?;
    Ok(SeedArtifacts { probe, gap, tail_mass: spectrum.tail_mass })
}

pub fn compare(run_a: &Path, run_b: &Path, out: Option<PathBuf>) -> Result<()> {
    let ma: Manifest = read_json(&run_a.join(MANIFEST))?;
    let mb: Manifest = read_json(&run_b.join(MANIFEST))?;
    if ma.seeds != mb.seeds {
        return Err(Error::Config(format!("seed lists differ: {:?} vs {:?}", ma.seeds, mb.seeds)));
    }
    let dir = output_dir(out, None)?;
    let mut per_seed = Vec::new();
    for &seed in &ma.seeds {
        let a = load_seed(run_a, seed)?;
        let b = load_seed(run_b, seed)?;
        let mut accuracy = Vec::new();
        for (ra, rb) in a.probe.reports.iter().zip(&b.probe.reports) {
            if ra.confound != rb.confound {
                return Err(Error::Consistency(format!("confounds differ: {} vs {}", ra.confound, rb.confound)));
            }
            for ga in &ra.report.groups {
                let gb = rb
                    .report
                    .get(&ga.group)
                    .ok_or_else(|| Error::Consistency(format!("run B lacks subgroup {}", ga.group)))?;
                accuracy.push(SubgroupDelta {
                    confound: ra.confound.clone(),
                    group: ga.group.clone(),
                    accuracy_a: ga.accuracy,
                    accuracy_b: gb.accuracy,
                    delta: gb.accuracy - ga.accuracy,
                });
            }
        }
        per_seed.push(SeedComparison {
            seed,
            accuracy,
            gap_a: a.gap,
            gap_b: b.gap,
            gap_delta: b.gap - a.gap,
            tail_mass_a: a.tail_mass,
            tail_mass_b: b.tail_mass,
            tail_mass_delta: b.tail_mass - a.tail_mass,
        });
    }
    let count = per_seed.len() as f64;
    let mean_accuracy_delta = per_seed[0]
        .accuracy
        .iter()
        .enumerate()
        .map(|(i, d)| MeanDelta {
            confound: d.confound.clone(),
            group: d.group.clone(),
            delta: per_seed.iter().map(|s| s.accuracy[i].delta).sum::<f64>() / count,
        })
        .collect();
    let comparison = Comparison {
        run_a: run_a.to_path_buf(),
        run_b: run_b.to_path_buf(),
        mode_a: ma.mode,
        mode_b: mb.mode,
        seeds: ma.seeds,
        mean_gap_delta: per_seed.iter().map(|s| s.gap_delta).sum::<f64>() / count,
        mean_tail_mass_delta: per_seed.iter().map(|s| s.tail_mass_delta).sum::<f64>() / count,
        per_seed,
        mean_accuracy_delta,
    };
    write_json(&dir.join("comparison.json"), &comparison)
}
