//! Experiment engine behind the CLI: dataset files, replicated training runs,
//! evaluation sweeps, programmed machines and metrics persistence.

pub mod config;

pub use config::{DataConfig, ExperimentConfig, ModelKind, Seeds, TrainCell, OUT_ENV};

use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baseline::{init_baseline, BaselineParams};
use crate::checkpoint::{Checkpoint, Model};
use crate::error::{Error, Result};
use crate::grammar::{pda_accepts, sample_dataset, sample_length_set, Dataset, LabeledString, PdaSpec};
use crate::learning::StraightThrough;
use crate::model::{classify, forward_sequence, init_params, size_state_count, ForwardOptions, Mode, ModelOrder, ModelParams};
use crate::par::{derive_seed, Exec};
use crate::programming::{hint_mask_with, insert_hints, program_full, quantized_census, required_state_count, HintLevel, Layout, STRENGTH};
use crate::protocols::{two_stage_incremental, RunMetrics, TrainSetup, Trainable};
use crate::stack::ReadNoise;

pub const TRAIN_FILE: &str = "train.txt";
pub const VALID_FILE: &str = "valid.txt";
pub const TEST_FILE: &str = "test.txt";

pub fn length_file(length: usize) -> String {
    format!("test_len{length}.txt")
}

/// Train, validation and test splits plus the long evaluation sets.
#[derive(Debug, Clone)]
pub struct DataBundle {
    pub train: Dataset,
    pub valid: Dataset,
    pub test: Dataset,
    pub long: Vec<(usize, Dataset)>,
}

pub fn generate_data(cfg: &ExperimentConfig) -> Result<DataBundle> {
    cfg.validate()?;
    let pda = cfg.grammar.pda();
    let d = &cfg.data;
    let all = sample_dataset(&pda, d.positives, d.negatives, d.len_min, d.len_max, cfg.seeds.data)?;
    let mut parts = all.split(&[d.train_frac, d.valid_frac, 1.0 - d.train_frac - d.valid_frac]).into_iter();
    let (train, valid, test) = (parts.next().unwrap(), parts.next().unwrap(), parts.next().unwrap());
    let long = cfg
        .eval_lengths
        .iter()
        .map(|&n| Ok((n, sample_length_set(&pda, cfg.eval_count, n, derive_seed(cfg.seeds.data, n as u64))?)))
        .collect::<Result<_>>()?;
    Ok(DataBundle { train, valid, test, long })
}

impl DataBundle {
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut files = vec![(dir.join(TRAIN_FILE), &self.train), (dir.join(VALID_FILE), &self.valid), (dir.join(TEST_FILE), &self.test)];
        for (n, set) in &self.long {
            files.push((dir.join(length_file(*n)), set));
        }
        for (path, set) in &files {
            set.write(path)?;
        }
        Ok(files.into_iter().map(|(p, _)| p).collect())
    }

    /// Reads the three splits and every `test_len*.txt` in `dir`.
    pub fn read(dir: &Path) -> Result<Self> {
        let load = |name: &str| {
            let path = dir.join(name);
            if !path.exists() {
                return Err(Error::NotFound(format!("dataset file {}", path.display())));
            }
            Dataset::read(&path)
        };
        let mut long = Vec::new();
        let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        for entry in entries {
            let entry = entry.map_err(|e| Error::io(dir, e))?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if let Some(n) = name.strip_prefix("test_len").and_then(|r| r.strip_suffix(".txt")).and_then(|n| n.parse().ok()) {
                long.push((n, Dataset::read(entry.path())?));
            }
        }
        long.sort_by_key(|(n, _)| *n);
        Ok(Self { train: load(TRAIN_FILE)?, valid: load(VALID_FILE)?, test: load(TEST_FILE)?, long })
    }
}

/// Untrained model for replicate `r`, hints inserted.
pub fn build_model(cfg: &ExperimentConfig, pda: &PdaSpec, r: usize) -> Result<Model> {
    let seed = derive_seed(cfg.seeds.model, r as u64);
    let l = pda.alphabet().len();
    match cfg.model() {
        ModelKind::Baseline(kind) => Ok(Model::Baseline(init_baseline(kind, cfg.hidden, l, seed)?)),
        ModelKind::Nspda(order) => {
            let j = match cfg.state_count {
                Some(j) => j,
                None => {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5157);
                    let sized = size_state_count(order, pda.num_states(), &mut rng);
                    if cfg.hints == HintLevel::None { sized } else { sized.max(required_state_count(pda, order)?) }
                }
            };
            let mut p = init_params(order, j, l, seed)?;
            if cfg.hints != HintLevel::None {
                p = insert_hints(&p, pda, cfg.hints, STRENGTH)?;
            }
            Ok(Model::Nspda(p))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthError {
    /// 0 for the in-distribution test split.
    pub length: usize,
    pub count: usize,
    pub error_pct: f64,
}

/// One finished replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateResult {
    pub replicate: usize,
    pub model: String,
    pub grammar: String,
    pub hints: HintLevel,
    pub converged: bool,
    pub epochs_to_convergence: Option<usize>,
    pub characters_to_convergence: Option<u64>,
    pub total_epochs: usize,
    pub total_characters: u64,
    pub train_error_pct: f64,
    pub test_errors: Vec<LengthError>,
}

/// ŷ > 0.5 for each sample, seeded per sample so any `exec` gives the same answer.
pub fn predictions(model: &Model, samples: &[LabeledString], seed: u64, noise: ReadNoise, exec: Exec) -> Result<Vec<bool>> {
    exec.map(samples, |i, s| {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, i as u64));
        match model {
            Model::Nspda(p) => classify(p, &s.tokens, noise, &mut rng),
            Model::Baseline(p) => p.classify(&s.tokens),
        }
    })
    .into_iter()
    .collect()
}

/// 100 × misclassified / total. An empty set is an error.
pub fn error_pct(model: &Model, set: &Dataset, seed: u64, exec: Exec) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::Input(format!("evaluation set for {} is empty", set.grammar)));
    }
    let pred = predictions(model, &set.samples, seed, ReadNoise::Random, exec)?;
    let wrong = pred.iter().zip(&set.samples).filter(|(p, s)| **p != s.label).count();
    Ok(100.0 * wrong as f64 / set.len() as f64)
}

/// Error on the test split (length 0) and on every long set.
pub fn evaluate(model: &Model, data: &DataBundle, seed: u64, exec: Exec) -> Result<Vec<LengthError>> {
    let mut out = vec![LengthError { length: 0, count: data.test.len(), error_pct: error_pct(model, &data.test, seed, exec)? }];
    for (n, set) in &data.long {
        out.push(LengthError { length: *n, count: set.len(), error_pct: error_pct(model, set, derive_seed(seed, *n as u64), exec)? });
    }
    Ok(out)
}

fn train_with<M: Trainable>(model: &mut M, data: &DataBundle, setup: &TrainSetup<'_>) -> Result<RunMetrics> {
    two_stage_incremental(model, &data.train, &data.valid.samples, setup)
}

/// Trains replicate `r` in place and returns its metrics.
pub fn train_model(cfg: &ExperimentConfig, pda: &PdaSpec, model: &mut Model, data: &DataBundle, r: usize) -> Result<RunMetrics> {
    let mut optimizer = cfg.optimizer.clone();
    optimizer.seed = derive_seed(cfg.seeds.train, r as u64);
    let mut noise = cfg.noise;
    noise.seed = derive_seed(cfg.seeds.train ^ 0x004E_015E, r as u64);
    let mut setup = TrainSetup::new(optimizer, cfg.curriculum, noise);
    setup.k = cfg.k;
    let order = match model {
        Model::Nspda(p) => p.order,
        Model::Baseline(_) => ModelOrder::Third,
    };
    let layout = (cfg.hints != HintLevel::None).then(|| Layout::new(pda, order)).transpose()?;
    let level = cfg.hints;
    let hinter = |t: &[usize]| match &layout {
        Some(l) => hint_mask_with(&l.machine, level, t),
        None => vec![false; t.len()],
    };
    setup.hinter = Some(&hinter);
    match model {
        Model::Baseline(p) => train_with::<BaselineParams>(p, data, &setup),
        Model::Nspda(p) => match cfg.cell {
            TrainCell::Smooth => train_with::<ModelParams>(p, data, &setup),
            TrainCell::Ste | TrainCell::SteSmooth => {
                let forward = if cfg.cell == TrainCell::Ste { Mode::Quantized } else { Mode::Smooth };
                let mut cell = StraightThrough::new(p.clone(), forward);
                let metrics = train_with(&mut cell, data, &setup)?;
                *p = cell.into_inner();
                Ok(metrics)
            }
        },
    }
}

/// Paths written for one replicate.
pub fn replicate_dir(out: &Path, r: usize) -> PathBuf {
    out.join(format!("replicate_{r}"))
}

/// Builds, trains, evaluates and (when `out` is given) persists replicate `r`.
pub fn run_replicate(cfg: &ExperimentConfig, data: &DataBundle, r: usize, out: Option<&Path>) -> Result<(Checkpoint, RunMetrics, ReplicateResult)> {
    let pda = cfg.grammar.pda();
    let mut model = build_model(cfg, &pda, r)?;
    let metrics = train_model(cfg, &pda, &mut model, data, r)?;
    let eval_seed = derive_seed(cfg.seeds.train ^ 0xE7A1, r as u64);
    let train_error_pct = error_pct(&model, &data.train, eval_seed, Exec::Sequential)?;
    let test_errors = evaluate(&model, data, eval_seed, Exec::Sequential)?;
    let result = ReplicateResult {
        replicate: r,
        model: cfg.model().to_string(),
        grammar: cfg.grammar.to_string(),
        hints: cfg.hints,
        converged: metrics.converged,
        epochs_to_convergence: metrics.epochs_to_convergence,
        characters_to_convergence: metrics.characters_to_convergence,
        total_epochs: metrics.total_epochs,
        total_characters: metrics.total_characters,
        train_error_pct,
        test_errors,
    };
    let ck = Checkpoint::new(model, derive_seed(cfg.seeds.model, r as u64))
        .with_meta("grammar", cfg.grammar)
        .with_meta("hint_level", cfg.hints)
        .with_meta("replicate", r)
        .with_meta("model", cfg.model());
    if let Some(out) = out {
        let dir = replicate_dir(out, r);
        ck.write(&dir.join("checkpoint.json"))?;
        write_metrics(&dir.join("metrics.jsonl"), &metrics)?;
        write_json(&dir.join("result.json"), &result)?;
    }
    Ok((ck, metrics, result))
}

/// All replicates over `exec`; aggregate files go to `out`.
pub fn run_experiment(cfg: &ExperimentConfig, data: &DataBundle, exec: Exec, out: Option<&Path>) -> Result<Vec<ReplicateResult>> {
    cfg.validate()?;
    if let Some(out) = out {
        std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        std::fs::write(out.join("config.txt"), cfg.to_text()).map_err(|e| Error::io(out, e))?;
    }
    let results: Vec<ReplicateResult> = exec
        .map_range(cfg.replicates, |r| run_replicate(cfg, data, r, out).map(|(_, _, res)| res))
        .into_iter()
        .collect::<Result<_>>()?;
    if let Some(out) = out {
        write_aggregate(&out.join("summary.csv"), &results)?;
    }
    Ok(results)
}

/// One JSON object per epoch.
pub fn write_metrics(path: &Path, metrics: &RunMetrics) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
    for rec in &metrics.epochs {
        let line = serde_json::to_string(rec).expect("epoch record serializes");
        writeln!(f, "{line}").map_err(|e| Error::io(path, e))?;
    }
    f.flush().map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Mean over replicates of each column; `None` entries (never converged) are skipped.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub replicates: usize,
    pub converged: usize,
    pub mean_train_error: f64,
    pub mean_test_errors: Vec<(usize, f64)>,
    pub mean_epochs: Option<f64>,
    pub mean_characters: Option<f64>,
}

fn mean(v: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (s, n) = v.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

pub fn aggregate(results: &[ReplicateResult]) -> Aggregate {
    let lengths: Vec<usize> = results.first().map(|r| r.test_errors.iter().map(|e| e.length).collect()).unwrap_or_default();
    Aggregate {
        replicates: results.len(),
        converged: results.iter().filter(|r| r.converged).count(),
        mean_train_error: mean(results.iter().map(|r| r.train_error_pct)).unwrap_or(f64::NAN),
        mean_test_errors: lengths
            .iter()
            .enumerate()
            .map(|(i, &n)| (n, mean(results.iter().map(|r| r.test_errors[i].error_pct)).unwrap_or(f64::NAN)))
            .collect(),
        mean_epochs: mean(results.iter().filter_map(|r| r.epochs_to_convergence.map(|e| e as f64))),
        mean_characters: mean(results.iter().filter_map(|r| r.characters_to_convergence.map(|c| c as f64))),
    }
}

fn opt_cell<T: ToString>(v: Option<T>) -> String {
    v.map_or(String::new(), |x| x.to_string())
}

/// Per-replicate rows followed by a `mean` row.
pub fn write_aggregate(path: &Path, results: &[ReplicateResult]) -> Result<()> {
    let csv_err = |e: csv::Error| Error::Format(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    let lengths: Vec<usize> = results.first().map(|r| r.test_errors.iter().map(|e| e.length).collect()).unwrap_or_default();
    let mut header: Vec<String> =
        ["replicate", "model", "grammar", "hints", "converged", "epochs_to_convergence", "characters_to_convergence", "train_error_pct"]
            .map(String::from)
            .to_vec();
    header.extend(lengths.iter().map(|&n| if n == 0 { "test_error_pct".into() } else { format!("test_error_pct_len{n}") }));
    w.write_record(&header).map_err(csv_err)?;
    for r in results {
        let mut row = vec![
            r.replicate.to_string(),
            r.model.clone(),
            r.grammar.clone(),
            r.hints.to_string(),
            r.converged.to_string(),
            opt_cell(r.epochs_to_convergence),
            opt_cell(r.characters_to_convergence),
            r.train_error_pct.to_string(),
        ];
        row.extend(r.test_errors.iter().map(|e| e.error_pct.to_string()));
        w.write_record(&row).map_err(csv_err)?;
    }
    if let Some(first) = results.first() {
        let agg = aggregate(results);
        let mut row = vec![
            "mean".to_string(),
            first.model.clone(),
            first.grammar.clone(),
            first.hints.to_string(),
            agg.converged.to_string(),
            opt_cell(agg.mean_epochs),
            opt_cell(agg.mean_characters),
            agg.mean_train_error.to_string(),
        ];
        row.extend(agg.mean_test_errors.iter().map(|(_, e)| e.to_string()));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Per-step stack and state lines of a quantized run.
pub fn trace(params: &ModelParams, tokens: &[usize], noise: ReadNoise, seed: u64) -> Result<Vec<String>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let opts = ForwardOptions { trace: true, ..ForwardOptions::quantized(noise) };
    let fwd = forward_sequence(params, tokens, &vec![1; tokens.len()], opts, &mut rng)?;
    Ok(fwd.trace)
}

/// Fully programmed machine with the minimum state count unless `j` is given.
pub fn program(pda: &PdaSpec, order: ModelOrder, j: Option<usize>) -> Result<ModelParams> {
    let need = required_state_count(pda, order)?;
    let j = j.unwrap_or(need);
    program_full(pda, order, j, STRENGTH)
}

/// "W_s: n0 zeros, n1 ones; W_a: ..." summary of the quantized tensors.
pub fn census_line(params: &ModelParams) -> String {
    let c = quantized_census(params);
    format!("W_s {{0: {}, 1: {}}}  W_a {{-1: {}, 0: {}, +1: {}}}", c[0], c[1], c[2], c[3], c[4])
}

/// Every string over the alphabet with length in `1..=max_len`, in
/// shortlex order.
pub fn all_strings(l: usize, max_len: usize) -> impl Iterator<Item = Vec<usize>> {
    (1..=max_len).flat_map(move |n| {
        (0..l.pow(n as u32)).map(move |mut code| {
            let mut s = vec![0; n];
            for t in s.iter_mut().rev() {
                *t = code % l;
                code /= l;
            }
            s
        })
    })
}

/// Disagreements with the PDA oracle over all strings up to `max_len`, under
/// each read-noise setting in `noises`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Agreement {
    pub checked: u64,
    pub mismatches: u64,
}

pub fn exhaustive_agreement(params: &ModelParams, pda: &PdaSpec, max_len: usize, noises: &[ReadNoise], exec: Exec) -> Result<Agreement> {
    let l = pda.alphabet().len();
    let lengths: Vec<usize> = (1..=max_len).collect();
    let per_len = exec.map(&lengths, |_, &n| -> Result<Agreement> {
        let mut a = Agreement { checked: 0, mismatches: 0 };
        let mut rng = ChaCha8Rng::seed_from_u64(n as u64);
        for s in all_strings(l, n).filter(|s| s.len() == n) {
            let truth = pda_accepts(pda, &s)?;
            for &noise in noises {
                a.checked += 1;
                if classify(params, &s, noise, &mut rng)? != truth {
                    a.mismatches += 1;
                }
            }
        }
        Ok(a)
    });
    per_len.into_iter().try_fold(Agreement { checked: 0, mismatches: 0 }, |acc, a| {
        let a = a?;
        Ok(Agreement { checked: acc.checked + a.checked, mismatches: acc.mismatches + a.mismatches })
    })
}

/// Disagreements with the dataset labels over `set`.
pub fn set_agreement(params: &ModelParams, set: &Dataset, noises: &[ReadNoise], seed: u64, exec: Exec) -> Result<Agreement> {
    let model = Model::Nspda(params.clone());
    let mut a = Agreement { checked: 0, mismatches: 0 };
    for (i, &noise) in noises.iter().enumerate() {
        let pred = predictions(&model, &set.samples, derive_seed(seed, i as u64), noise, exec)?;
        a.checked += pred.len() as u64;
        a.mismatches += pred.iter().zip(&set.samples).filter(|(p, s)| **p != s.label).count() as u64;
    }
    Ok(a)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::Grammar;

    fn small_cfg() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.data.positives = 30;
        cfg.data.negatives = 30;
        cfg.data.len_max = 10;
        cfg.eval_lengths = vec![16];
        cfg.eval_count = 20;
        cfg.curriculum.ntr = 6;
        cfg
    }

    #[test]
    fn enumeration_is_shortlex() {
        let all: Vec<Vec<usize>> = all_strings(2, 2).collect();
        assert_eq!(all, vec![vec![0], vec![1], vec![0, 0], vec![0, 1], vec![1, 0], vec![1, 1]]);
        assert_eq!(all_strings(3, 4).count(), 3 + 9 + 27 + 81);
    }

    #[test]
    fn data_round_trip_through_files() {
        let cfg = small_cfg();
        let data = generate_data(&cfg).unwrap();
        assert_eq!(data.train.len() + data.valid.len() + data.test.len(), 60);
        let dir = tempfile::tempdir().unwrap();
        let files = data.write(dir.path()).unwrap();
        assert_eq!(files.len(), 4);
        let back = DataBundle::read(dir.path()).unwrap();
        assert_eq!(back.train.samples, data.train.samples);
        assert_eq!(back.long[0].0, 16);
        assert_eq!(back.long[0].1.samples, data.long[0].1.samples);
    }

    #[test]
    fn empty_evaluation_set_is_an_error() {
        let p = program(&Grammar::Anbn.pda(), ModelOrder::Third, None).unwrap();
        let empty = Dataset::new("anbn", 0, Grammar::Anbn.alphabet(), Vec::new());
        assert!(error_pct(&Model::Nspda(p), &empty, 0, Exec::Sequential).is_err());
    }

    #[test]
    fn programmed_anbn_has_zero_error() {
        let cfg = small_cfg();
        let data = generate_data(&cfg).unwrap();
        let m = Model::Nspda(program(&Grammar::Anbn.pda(), ModelOrder::Third, None).unwrap());
        for e in evaluate(&m, &data, 3, Exec::Parallel).unwrap() {
            assert_eq!(e.error_pct, 0.0, "length {}", e.length);
        }
    }

    #[test]
    fn zero_cap_run_writes_files() {
        let mut cfg = small_cfg();
        cfg.curriculum.stage1_cap = 0;
        cfg.curriculum.stage2_cap = 0;
        cfg.curriculum.global_cap = 0;
        cfg.replicates = 2;
        let data = generate_data(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let res = run_experiment(&cfg, &data, Exec::Sequential, Some(dir.path())).unwrap();
        assert_eq!(res.len(), 2);
        assert!(dir.path().join("summary.csv").exists());
        let ck = Checkpoint::read(&replicate_dir(dir.path(), 1).join("checkpoint.json")).unwrap();
        assert_eq!(ck.meta("replicate"), Some("1"));
        let text = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.lines().last().unwrap().starts_with("mean,"));
    }
}
