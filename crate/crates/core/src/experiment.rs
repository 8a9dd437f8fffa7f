//! Batches of simulated trials and the metrics computed from their traces.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_xoshiro::SplitMix64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::error::{Error, Result};
use crate::session::{run_trial, TrialConfig, TrialMode, TrialOutcome, DEFAULT_MAX_TICKS};
use crate::sim::TeacherScript;
use crate::teacher::{MentalState, Mismatch, Observation, TaskHypothesis, NUM_TASKS};
use crate::trace::{read_trace_file, write_trace, TraceRecord};

#[derive(Debug, Clone, PartialEq)]
pub struct BatchSpec {
    pub trials: u32,
    pub seed: u64,
    /// Fixed true task; sampled uniformly per trial when absent.
    pub task: Option<TaskHypothesis>,
    /// Template for forced and suppressed ticks. Its task is used when
    /// `task` is absent; its seed and parameters are replaced.
    pub scenario: Option<TeacherScript>,
    pub config: Config,
    /// The simulated teacher's parameters relative to the robot's model.
    pub mismatch: Mismatch,
    pub max_ticks: u32,
}

impl BatchSpec {
    pub fn new(trials: u32, seed: u64) -> Self {
        BatchSpec {
            trials,
            seed,
            task: None,
            scenario: None,
            config: Config::default(),
            mismatch: Mismatch::default(),
            max_ticks: DEFAULT_MAX_TICKS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::InvalidParams("a batch needs at least one trial".into()));
        }
        self.config.validate()?;
        self.config.teacher.mismatched(&self.mismatch).validate()?;
        if let Some(s) = &self.scenario {
            s.validate()?;
        }
        Ok(())
    }

    /// Seeds of trial `k`: one for the teacher and one for the task draw.
    /// Trial `k` only depends on the batch seed and `k`, not on the batch
    /// size.
    pub fn trial_seeds(&self, k: u32) -> (u64, u64) {
        let mut rng = SplitMix64::seed_from_u64(self.seed);
        for _ in 0..2 * k as u64 {
            rng.next_u64();
        }
        (rng.next_u64(), rng.next_u64())
    }

    pub fn trial_id(k: u32) -> String {
        format!("trial-{k:04}")
    }

    /// The trial configuration of trial `k`.
    pub fn trial(&self, k: u32) -> TrialConfig {
        let (seed, task_seed) = self.trial_seeds(k);
        let true_task = self
            .task
            .or(self.scenario.as_ref().map(|s| s.true_task))
            .unwrap_or_else(|| {
                TaskHypothesis::from_index(ChaCha8Rng::seed_from_u64(task_seed).random_range(0..NUM_TASKS))
            });
        let mut script = self
            .scenario
            .clone()
            .unwrap_or_else(|| TeacherScript::new(true_task, self.config.teacher, seed));
        script.true_task = true_task;
        script.params = self.config.teacher.mismatched(&self.mismatch);
        script.seed = seed;
        let mut cfg = TrialConfig::simulated(Self::trial_id(k), script);
        cfg.teacher_params = self.config.teacher;
        cfg.mode = TrialMode::Fast;
        cfg.planner = self.config.planner;
        cfg.max_ticks = self.max_ticks;
        cfg
    }
}

/// One row of `trials.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub trial_id: String,
    pub seed: u64,
    pub true_task: String,
    pub inferred_task: Option<String>,
    pub correct: Option<bool>,
    pub ticks_to_final: Option<u32>,
    pub seconds_to_final: Option<f64>,
    pub presses: usize,
    pub injected_mistakes: usize,
    pub entropy_at_final: Option<f64>,
}

/// Task as `mov-wrt-dist`, the form used in CSV cells.
pub fn task_label(h: TaskHypothesis) -> String {
    format!("{}-{}-{}", h.mov, h.wrt, h.dist.get())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub trials: usize,
    pub declared: usize,
    pub correct: usize,
    /// Correct over all trials; undeclared trials count as wrong.
    pub accuracy: f64,
    pub accuracy_among_declared: Option<f64>,
    pub median_seconds_to_final: Option<f64>,
    pub mean_seconds_to_final: Option<f64>,
    pub max_entropy_at_final: Option<f64>,
    /// Counts of seconds-to-final in 10 s bins starting at zero.
    pub seconds_histogram: Vec<usize>,
    pub failed: Vec<String>,
}

pub const HISTOGRAM_BIN_SECONDS: f64 = 10.0;

#[derive(Debug)]
pub struct BatchResult {
    /// Successful trials in trial order.
    pub outcomes: Vec<(u32, TrialOutcome)>,
    pub rows: Vec<TrialRow>,
    pub failed: Vec<(String, Error)>,
    pub tick_seconds: f64,
}

impl BatchResult {
    pub fn summary(&self) -> BatchSummary {
        let trials = self.rows.len() + self.failed.len();
        let declared = self.rows.iter().filter(|r| r.inferred_task.is_some()).count();
        let correct = self.rows.iter().filter(|r| r.correct == Some(true)).count();
        let mut secs: Vec<f64> = self.rows.iter().filter_map(|r| r.seconds_to_final).collect();
        secs.sort_by(f64::total_cmp);
        let mut histogram = Vec::new();
        for s in &secs {
            let bin = (s / HISTOGRAM_BIN_SECONDS) as usize;
            if histogram.len() <= bin {
                histogram.resize(bin + 1, 0);
            }
            histogram[bin] += 1;
        }
        BatchSummary {
            trials,
            declared,
            correct,
            accuracy: if trials == 0 {
                0.0
            } else {
                correct as f64 / trials as f64
            },
            accuracy_among_declared: (declared > 0).then(|| correct as f64 / declared as f64),
            median_seconds_to_final: median(&secs),
            mean_seconds_to_final: (!secs.is_empty()).then(|| secs.iter().sum::<f64>() / secs.len() as f64),
            max_entropy_at_final: self.rows.iter().filter_map(|r| r.entropy_at_final).reduce(f64::max),
            seconds_histogram: histogram,
            failed: self.failed.iter().map(|(id, _)| id.clone()).collect(),
        }
    }

    /// Writes `trials.csv`, `entropy.csv`, `summary.json` and one JSONL
    /// trace per trial under `traces/`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let traces = dir.join("traces");
        fs::create_dir_all(&traces)?;
        let mut csv = csv::Writer::from_path(dir.join("trials.csv")).map_err(csv_error)?;
        for row in &self.rows {
            csv.serialize(row).map_err(csv_error)?;
        }
        csv.flush()?;
        let mut ent = csv::Writer::from_path(dir.join("entropy.csv")).map_err(csv_error)?;
        ent.write_record(["trial_id", "tick", "seconds", "entropy"])
            .map_err(csv_error)?;
        for (_, out) in &self.outcomes {
            for r in &out.trace {
                ent.write_record([
                    out.trial_id.clone(),
                    r.tick.to_string(),
                    (r.tick as f64 * self.tick_seconds).to_string(),
                    r.belief.entropy.to_string(),
                ])
                .map_err(csv_error)?;
            }
            let file = fs::File::create(traces.join(format!("{}.jsonl", out.trial_id)))?;
            write_trace(&out.trace, std::io::BufWriter::new(file))?;
        }
        ent.flush()?;
        let summary = serde_json::to_string_pretty(&self.summary())?;
        fs::write(dir.join("summary.json"), summary + "\n")?;
        Ok(())
    }
}

fn csv_error(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

fn median(sorted: &[f64]) -> Option<f64> {
    let n = sorted.len();
    match n {
        0 => None,
        _ if n % 2 == 1 => Some(sorted[n / 2]),
        _ => Some((sorted[n / 2 - 1] + sorted[n / 2]) / 2.0),
    }
}

fn row(k: u32, cfg: &TrialConfig, out: &TrialOutcome, tick_seconds: f64) -> TrialRow {
    let crate::session::TeacherKind::Simulated(script) = &cfg.teacher else {
        unreachable!("batches are simulated");
    };
    let last = out.trace.last().map_or(0, |r| r.tick);
    TrialRow {
        trial_id: BatchSpec::trial_id(k),
        seed: script.seed,
        true_task: task_label(script.true_task),
        inferred_task: out.final_task.map(task_label),
        correct: out.correct,
        ticks_to_final: out.ticks_to_final,
        seconds_to_final: out.seconds_to_final(tick_seconds),
        presses: out.presses(),
        injected_mistakes: script.forced_presses.iter().filter(|t| **t >= 1 && **t <= last).count(),
        entropy_at_final: out.entropy_at_final,
    }
}

/// Runs every trial of `spec`, in parallel across trials. Failed trials
/// are collected rather than stopping the batch.
pub fn run_batch(spec: &BatchSpec) -> Result<BatchResult> {
    spec.validate()?;
    let tick_seconds = spec.config.teacher.tick_seconds;
    let results: Vec<(u32, TrialConfig, Result<TrialOutcome>)> = (0..spec.trials)
        .into_par_iter()
        .map(|k| {
            let cfg = spec.trial(k);
            let out = run_trial(&cfg);
            (k, cfg, out)
        })
        .collect();
    let mut batch = BatchResult {
        outcomes: Vec::new(),
        rows: Vec::new(),
        failed: Vec::new(),
        tick_seconds,
    };
    for (k, cfg, out) in results {
        match out {
            Ok(out) => {
                batch.rows.push(row(k, &cfg, &out, tick_seconds));
                batch.outcomes.push((k, out));
            }
            Err(e) => batch.failed.push((BatchSpec::trial_id(k), e)),
        }
    }
    Ok(batch)
}

/// Runs a batch and writes its outputs to `out`. Outputs of successful
/// trials are written even when some trials fail; the failures are then
/// reported as [`Error::PartialBatch`].
pub fn cmd_simulate(spec: &BatchSpec, out: &Path) -> Result<BatchSummary> {
    let batch = run_batch(spec)?;
    batch.write(out)?;
    let summary = batch.summary();
    if !summary.failed.is_empty() {
        return Err(Error::PartialBatch { failed: summary.failed });
    }
    Ok(summary)
}

/// Press-time and end-of-trial posterior of the true label, averaged over
/// the presses with that label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelStats {
    pub presses: usize,
    pub mean_at_press: f64,
    pub mean_at_end: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub trials: usize,
    /// Presses the filter absorbed, i.e. made before the robot committed.
    pub presses: usize,
    pub labels: BTreeMap<String, LabelStats>,
    /// Mean task entropy per tick over the trials still running at that
    /// tick.
    pub mean_entropy: Vec<f64>,
}

/// Posterior of the true label of every absorbed press in one labeled
/// trace, as (label, at press, at end).
pub fn press_label_posteriors(trace: &[TraceRecord]) -> Result<Vec<(MentalState, f64, f64)>> {
    let Some(last) = trace.last() else {
        return Ok(Vec::new());
    };
    let mut out = Vec::new();
    for r in trace {
        if r.observation != Observation::Spacebar || r.belief.tick != r.tick {
            continue;
        }
        let truth = r
            .truth
            .ok_or_else(|| Error::MissingTruth(format!("press at tick {} has no label", r.tick)))?;
        let find = |snap: &crate::belief::BeliefSnapshot| {
            snap.press_posteriors
                .iter()
                .find(|p| p.tick == r.tick)
                .map(|p| p.p(truth.mental))
                .ok_or(Error::UnknownPress(r.tick))
        };
        out.push((truth.mental, find(&r.belief)?, find(&last.belief)?));
    }
    Ok(out)
}

/// Aggregates labeled traces into a report.
pub fn analyze(traces: &[Vec<TraceRecord>]) -> Result<AnalysisReport> {
    let mut sums: BTreeMap<String, (usize, f64, f64)> = BTreeMap::new();
    let mut presses = 0;
    let mut entropy: Vec<(f64, usize)> = Vec::new();
    for trace in traces {
        if trace.iter().any(|r| r.truth.is_none()) {
            let tick = trace.iter().find(|r| r.truth.is_none()).map_or(0, |r| r.tick);
            return Err(Error::MissingTruth(format!("record at tick {tick} has no label")));
        }
        for (label, at_press, at_end) in press_label_posteriors(trace)? {
            let e = sums.entry(label.as_str().to_string()).or_default();
            e.0 += 1;
            e.1 += at_press;
            e.2 += at_end;
            presses += 1;
        }
        for (i, r) in trace.iter().enumerate() {
            if entropy.len() <= i {
                entropy.push((0.0, 0));
            }
            entropy[i].0 += r.belief.entropy;
            entropy[i].1 += 1;
        }
    }
    Ok(AnalysisReport {
        trials: traces.len(),
        presses,
        labels: sums
            .into_iter()
            .map(|(k, (n, p, e))| {
                (
                    k,
                    LabelStats {
                        presses: n,
                        mean_at_press: p / n as f64,
                        mean_at_end: e / n as f64,
                    },
                )
            })
            .collect(),
        mean_entropy: entropy.into_iter().map(|(s, n)| s / n as f64).collect(),
    })
}

/// Trace files of a batch directory (its `traces/` subdirectory when
/// present), sorted by name.
pub fn trace_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let sub = dir.join("traces");
    let dir = if sub.is_dir() { sub } else { dir.to_path_buf() };
    let mut files: Vec<PathBuf> = fs::read_dir(&dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    files.sort();
    Ok(files)
}

/// Analyzes every trace in `dir` and writes the report as JSON.
pub fn cmd_analyze(dir: &Path, report: &Path) -> Result<AnalysisReport> {
    let traces = trace_files(dir)?
        .iter()
        .map(|p| read_trace_file(p))
        .collect::<Result<Vec<_>>>()?;
    let out = analyze(&traces)?;
    fs::write(report, serde_json::to_string_pretty(&out)? + "\n")?;
    Ok(out)
}
