//! `nspda`: dataset generation, training, evaluation, programming and
//! gradient checks from the command line.
//!
//! Every failure prints one line `error[<kind>]: <message>` on stderr and
//! exits with 2 (usage), 3 (missing input), 4 (bad checkpoint),
//! 5 (verification failure) or 1 (anything else).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nspda::checkpoint::{Checkpoint, Model};
use nspda::gradcheck::{fd_check, rtrl_check, uoro_check};
use nspda::grammar::{sample_length_set, Dataset, Grammar};
use nspda::harness::{self, DataBundle, ExperimentConfig};
use nspda::learning::{Algorithm, DEFAULT_WINDOW};
use nspda::model::ModelOrder;
use nspda::par::Exec;
use nspda::stack::ReadNoise;

struct Failure {
    code: u8,
    kind: &'static str,
    message: String,
}

impl Failure {
    fn usage(e: impl ToString) -> Self {
        Self { code: 2, kind: "usage", message: e.to_string() }
    }
    fn missing(e: impl ToString) -> Self {
        Self { code: 3, kind: "missing-input", message: e.to_string() }
    }
    fn checkpoint(e: impl ToString) -> Self {
        Self { code: 4, kind: "checkpoint", message: e.to_string() }
    }
    fn verification(e: impl ToString) -> Self {
        Self { code: 5, kind: "verification", message: e.to_string() }
    }
    fn runtime(e: impl ToString) -> Self {
        Self { code: 1, kind: "runtime", message: e.to_string() }
    }
}

type CliResult = Result<(), Failure>;

#[derive(Parser)]
#[command(name = "nspda", version, about = "Neural state pushdown automata experiments")]
struct Cli {
    /// Run batch work on one thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write train/valid/test splits and long evaluation sets.
    GenData(GenDataArgs),
    /// Train replicates and write checkpoints and metrics.
    Train(TrainArgs),
    /// Classification error of a checkpoint per evaluation set.
    Eval(EvalArgs),
    /// Compile a builtin grammar into network weights.
    Program(ProgramArgs),
    /// Finite-difference, RTRL and UORO gradient suites.
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Clone, Default)]
struct ConfigArgs {
    /// key = value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key, e.g. --set noise.np=0.1 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    #[arg(long)]
    grammar: Option<String>,
    /// nspda, rnn or rnn2.
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    order: Option<String>,
    #[arg(long)]
    hints: Option<String>,
    #[arg(long)]
    algo: Option<String>,
    /// 2il, il or standard.
    #[arg(long)]
    mode: Option<String>,
    /// Global epoch cap (stage caps are clipped to it).
    #[arg(long)]
    epochs_cap: Option<usize>,
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    noise: Option<bool>,
    #[arg(long)]
    pos: Option<usize>,
    #[arg(long)]
    neg: Option<usize>,
    /// Length range lo:hi.
    #[arg(long)]
    len: Option<String>,
    /// Comma-separated evaluation lengths.
    #[arg(long)]
    eval_lengths: Option<String>,
    #[arg(long)]
    eval_count: Option<usize>,
    /// Output directory (NSPDA_OUT takes precedence over the config file, flags over both).
    #[arg(long)]
    out: Option<PathBuf>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<ExperimentConfig, Failure> {
        let mut cfg = ExperimentConfig::default();
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path).map_err(|e| Failure::missing(format!("{}: {e}", path.display())))?;
            cfg.apply_text(&text).map_err(Failure::usage)?;
        }
        cfg.apply_env();
        let mut pairs: Vec<(&str, String)> = Vec::new();
        let mut opt = |k: &'static str, v: Option<String>| {
            if let Some(v) = v {
                pairs.push((k, v));
            }
        };
        opt("grammar", self.grammar.clone());
        opt("model.kind", self.model.clone());
        opt("model.order", self.order.clone());
        opt("model.hints", self.hints.clone());
        opt("opt.algo", self.algo.clone());
        opt("curriculum.mode", self.mode.clone());
        opt("replicates", self.replicates.map(|v| v.to_string()));
        opt("noise.enabled", self.noise.map(|v| v.to_string()));
        opt("data.pos", self.pos.map(|v| v.to_string()));
        opt("data.neg", self.neg.map(|v| v.to_string()));
        opt("data.len", self.len.clone());
        opt("eval.lengths", self.eval_lengths.clone());
        opt("eval.count", self.eval_count.map(|v| v.to_string()));
        if let Some(s) = self.seed {
            for k in ["seed.data", "seed.model", "seed.train"] {
                pairs.push((k, s.to_string()));
            }
        }
        for (k, v) in pairs {
            cfg.set(k, &v).map_err(Failure::usage)?;
        }
        if let Some(cap) = self.epochs_cap {
            cfg.curriculum.global_cap = cap;
            cfg.curriculum.stage1_cap = cfg.curriculum.stage1_cap.min(cap);
            cfg.curriculum.stage2_cap = cfg.curriculum.stage2_cap.min(cap);
        }
        for kv in &self.sets {
            let (k, v) = kv.split_once('=').ok_or_else(|| Failure::usage(format!("--set expects KEY=VALUE, got {kv:?}")))?;
            cfg.set(k.trim(), v).map_err(Failure::usage)?;
        }
        if let Some(out) = &self.out {
            cfg.out = out.clone();
        }
        cfg.validate().map_err(Failure::usage)?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct GenDataArgs {
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Directory written by gen-data.
    #[arg(long)]
    data: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset directory (test split and long sets) or a single dataset file.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Fresh balanced sets at these lengths (comma-separated).
    #[arg(long)]
    lengths: Option<String>,
    #[arg(long, default_value_t = 10_000)]
    count: usize,
    /// Grammar for fresh sets when the checkpoint does not name one.
    #[arg(long)]
    grammar: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Print the per-step stack trace of this string (symbols separated by spaces).
    #[arg(long)]
    trace: Option<String>,
}

#[derive(Args)]
struct ProgramArgs {
    #[arg(long)]
    grammar: String,
    #[arg(long, default_value = "third")]
    order: String,
    /// State neurons; defaults to the minimum the construction needs.
    #[arg(long)]
    j: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    /// Check against the PDA on every string up to this length.
    #[arg(long)]
    verify: Option<usize>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 20)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// bptt or tbptt for the finite-difference suite.
    #[arg(long, default_value = "bptt")]
    algo: String,
    #[arg(long, default_value_t = DEFAULT_WINDOW)]
    window: usize,
    /// Monte-Carlo samples for the UORO suite; 0 skips it.
    #[arg(long, default_value_t = 10_000)]
    uoro_samples: usize,
}

fn exec(sequential: bool) -> Exec {
    if sequential {
        Exec::Sequential
    } else {
        Exec::Parallel
    }
}

fn gen_data(args: &GenDataArgs) -> CliResult {
    let cfg = args.config.resolve()?;
    let data = harness::generate_data(&cfg).map_err(Failure::usage)?;
    let files = data.write(&cfg.out).map_err(Failure::runtime)?;
    for f in files {
        println!("{}", f.display());
    }
    Ok(())
}

fn read_data(dir: &Path) -> Result<DataBundle, Failure> {
    if !dir.is_dir() {
        return Err(Failure::missing(format!("dataset directory {} does not exist", dir.display())));
    }
    DataBundle::read(dir).map_err(Failure::missing)
}

fn train(args: &TrainArgs, ex: Exec) -> CliResult {
    let cfg = args.config.resolve()?;
    let data = read_data(&args.data)?;
    if data.train.grammar != cfg.grammar.name() {
        return Err(Failure::usage(format!("dataset is {} but config grammar is {}", data.train.grammar, cfg.grammar)));
    }
    let results = harness::run_experiment(&cfg, &data, ex, Some(&cfg.out)).map_err(Failure::runtime)?;
    for r in &results {
        let tests: Vec<String> = r.test_errors.iter().map(|e| format!("len{}={:.2}%", e.length, e.error_pct)).collect();
        println!(
            "replicate {} converged={} epochs={} chars={} train={:.2}% {}",
            r.replicate,
            r.converged,
            r.total_epochs,
            r.characters_to_convergence.map_or("-".into(), |c| c.to_string()),
            r.train_error_pct,
            tests.join(" ")
        );
    }
    println!("{}", cfg.out.join("summary.csv").display());
    Ok(())
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint, Failure> {
    if !path.exists() {
        return Err(Failure::missing(format!("checkpoint {} does not exist", path.display())));
    }
    Checkpoint::read(path).map_err(Failure::checkpoint)
}

fn eval(args: &EvalArgs, ex: Exec) -> CliResult {
    let ck = load_checkpoint(&args.checkpoint)?;
    let grammar_name = args.grammar.as_deref().or(ck.meta("grammar"));
    let grammar: Option<Grammar> = grammar_name.map(|g| g.parse()).transpose().map_err(Failure::usage)?;
    if let Some(g) = grammar {
        if g.alphabet().len() != ck.model.alphabet_len() {
            return Err(Failure::checkpoint(format!("checkpoint alphabet size {} does not match {g}", ck.model.alphabet_len())));
        }
    }
    if let Some(s) = &args.trace {
        let Model::Nspda(p) = &ck.model else {
            return Err(Failure::usage("--trace needs an nspda checkpoint"));
        };
        let g = grammar.ok_or_else(|| Failure::usage("--trace needs --grammar"))?;
        let tokens = g.alphabet().parse_tokens(s).map_err(Failure::usage)?;
        for line in harness::trace(p, &tokens, ReadNoise::Midpoint, args.seed).map_err(Failure::runtime)? {
            println!("{line}");
        }
    }
    let mut sets: Vec<(String, Dataset)> = Vec::new();
    if let Some(path) = &args.data {
        if path.is_dir() {
            let data = read_data(path)?;
            sets.push(("test".into(), data.test));
            sets.extend(data.long.into_iter().map(|(n, d)| (format!("len{n}"), d)));
        } else if path.exists() {
            sets.push((path.display().to_string(), Dataset::read(path).map_err(Failure::missing)?));
        } else {
            return Err(Failure::missing(format!("{} does not exist", path.display())));
        }
    }
    if let Some(list) = &args.lengths {
        let g = grammar.ok_or_else(|| Failure::usage("--lengths needs --grammar or a checkpoint with grammar metadata"))?;
        for n in list.split(',') {
            let n: usize = n.trim().parse().map_err(|_| Failure::usage(format!("bad length {n:?}")))?;
            let set = sample_length_set(&g.pda(), args.count, n, args.seed.wrapping_add(n as u64)).map_err(Failure::usage)?;
            sets.push((format!("len{n}"), set));
        }
    }
    if sets.is_empty() && args.trace.is_none() {
        return Err(Failure::usage("nothing to evaluate: pass --data, --lengths or --trace"));
    }
    if !sets.is_empty() {
        println!("set\tcount\terror_pct");
    }
    for (i, (name, set)) in sets.iter().enumerate() {
        let err = harness::error_pct(&ck.model, set, args.seed.wrapping_add(i as u64), ex).map_err(Failure::usage)?;
        println!("{name}\t{}\t{err:.4}", set.len());
    }
    Ok(())
}

fn program(args: &ProgramArgs, ex: Exec) -> CliResult {
    let grammar: Grammar = args.grammar.parse().map_err(Failure::usage)?;
    let order: ModelOrder = args.order.parse().map_err(Failure::usage)?;
    let pda = grammar.pda();
    if order == ModelOrder::Second {
        log::info!("second order: split state units per entering input");
        eprintln!("note: second-order construction splits each state per entering input");
    }
    let p = harness::program(&pda, order, args.j).map_err(Failure::usage)?;
    println!("J={} L={} order={order}", p.j, p.l);
    println!("{}", harness::census_line(&p));
    Checkpoint::new(Model::Nspda(p.clone()), 0)
        .with_meta("grammar", grammar)
        .with_meta("hint_level", "full")
        .with_meta("order", order)
        .write(&args.out)
        .map_err(Failure::runtime)?;
    println!("{}", args.out.display());
    if let Some(n) = args.verify {
        let a = harness::exhaustive_agreement(&p, &pda, n, &[ReadNoise::Midpoint, ReadNoise::Low, ReadNoise::High], ex)
            .map_err(Failure::runtime)?;
        println!("verified {} classifications up to length {n}: {} mismatches", a.checked, a.mismatches);
        if a.mismatches > 0 {
            return Err(Failure::verification(format!("{} of {} classifications disagree with the PDA", a.mismatches, a.checked)));
        }
    }
    Ok(())
}

fn gradcheck(args: &GradcheckArgs, ex: Exec) -> CliResult {
    let algo: Algorithm = args.algo.parse().map_err(Failure::usage)?;
    if !matches!(algo, Algorithm::Bptt | Algorithm::Tbptt) {
        return Err(Failure::usage("--algo must be bptt or tbptt"));
    }
    if args.trials == 0 {
        return Err(Failure::usage("--trials must be >= 1"));
    }
    let fd = fd_check(args.trials, args.seed, algo, args.window, ex).map_err(Failure::runtime)?;
    println!("{}", fd.line());
    let rt = rtrl_check(args.trials, args.seed, ex).map_err(Failure::runtime)?;
    println!("{}", rt.line());
    let mut ok = fd.passed && rt.passed;
    if args.uoro_samples > 1 {
        let u = uoro_check(args.uoro_samples, args.seed, ex).map_err(Failure::runtime)?;
        println!("{}", u.line());
        ok &= u.passed;
    }
    if ok {
        Ok(())
    } else {
        Err(Failure::verification("gradient suite failed"))
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if e.use_stderr() => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("error[usage]: {first}");
            return ExitCode::from(2);
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
    };
    let ex = exec(cli.sequential);
    let result = match &cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train(a, ex),
        Command::Eval(a) => eval(a, ex),
        Command::Program(a) => program(a, ex),
        Command::Gradcheck(a) => gradcheck(a, ex),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let one_line = f.message.replace('\n', " ");
            eprintln!("error[{}]: {one_line}", f.kind);
            ExitCode::from(f.code)
        }
    }
}
