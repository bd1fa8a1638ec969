//! Command-line front end of the federated SAR backdoor-defense simulator.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::Rng;

use sarfl::aggregation::AggregatorKind;
use sarfl::datasim::{export_dataset, generate_chip};
use sarfl::defense::DefenseParams;
use sarfl::harness::{
    ablation_variants, random_spd, run_experiment, verify_contraction, ExperimentConfig,
};
use sarfl::numerics::{
    dwt2_haar, idwt2_haar, kl_divergence, percentile, sample_speckle, Grid2D, RngStream, StreamId,
};
use sarfl::Result;

#[derive(Parser)]
#[command(
    name = "sarfl",
    about = "Deterministic simulator of federated SAR target recognition under backdoor attack"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a single experiment from a config file.
    Simulate(SimulateArgs),
    /// Run a grid of experiments over defense/attack parameters.
    Sweep(SweepArgs),
    /// Run the full defense and each single-mechanism ablation.
    Ablate(AblateArgs),
    /// Run the contraction check and the numeric property suite.
    Verify(VerifyArgs),
    /// Generate the configured dataset and dump it as JSON lines.
    ExportData(ExportArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// TOML experiment configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for metrics files.
    #[arg(long, default_value = "runs/simulate")]
    output: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    rounds: Option<usize>,
    /// fedavg | krum | median | nadafd
    #[arg(long)]
    aggregator: Option<String>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "runs/sweep")]
    output: PathBuf,
    /// Wavelet depths J, comma separated.
    #[arg(long, value_delimiter = ',')]
    levels: Vec<usize>,
    /// Injection strengths xi.
    #[arg(long, value_delimiter = ',')]
    xi: Vec<f64>,
    /// Pruning percentiles (90|95|98).
    #[arg(long, value_delimiter = ',')]
    tau: Vec<u8>,
    /// Dirichlet concentrations.
    #[arg(long, value_delimiter = ',')]
    alpha: Vec<f64>,
    /// Malicious-client fractions; ids 0..floor(f*N) become malicious.
    #[arg(long, value_delimiter = ',')]
    malicious_ratio: Vec<f64>,
    /// Local poisoning ratios.
    #[arg(long, value_delimiter = ',')]
    poison_ratio: Vec<f64>,
    /// Seeds to repeat each cell over.
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "runs/ablate")]
    output: PathBuf,
}

#[derive(Args)]
struct VerifyArgs {
    /// Number of random SPD quadratics for the contraction check.
    #[arg(long, default_value_t = 10)]
    spd_trials: usize,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "dataset.jsonl")]
    output: PathBuf,
    /// train | test
    #[arg(long, default_value = "train")]
    split: String,
}

fn load_config(path: &Option<PathBuf>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::from_toml_file(p),
        None => Ok(ExperimentConfig::default()),
    }
}

fn parse_aggregator(name: &str) -> Result<AggregatorKind> {
    match name {
        "fedavg" => Ok(AggregatorKind::Fedavg),
        "krum" => Ok(AggregatorKind::Krum),
        "median" => Ok(AggregatorKind::Median),
        "nadafd" => Ok(AggregatorKind::Nadafd),
        other => Err(sarfl::SimError::Config(format!(
            "unknown aggregator '{other}' (expected fedavg|krum|median|nadafd)"
        ))),
    }
}

fn simulate(args: &SimulateArgs) -> Result<()> {
    let mut cfg = load_config(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(rounds) = args.rounds {
        cfg.rounds = rounds;
    }
    if let Some(agg) = &args.aggregator {
        cfg.aggregator = parse_aggregator(agg)?;
    }
    let result = run_experiment(&cfg, Some(&args.output))?;
    let s = &result.summary;
    println!(
        "{}: acc {:.4}  asr {:.4}  macro-f1 {:.4}  auc-ra {:.4}  ({} rounds, outputs in {})",
        s.aggregator,
        s.final_acc,
        s.final_asr,
        s.final_macro_f1,
        s.auc_ra,
        s.rounds,
        args.output.display()
    );
    Ok(())
}

fn sweep(args: &SweepArgs) -> Result<()> {
    let base = load_config(&args.config)?;
    let or_default = |values: &[usize], fallback: usize| -> Vec<usize> {
        if values.is_empty() {
            vec![fallback]
        } else {
            values.to_vec()
        }
    };
    let levels = or_default(&args.levels, base.defense.wavelet_levels);
    let xis = if args.xi.is_empty() {
        vec![base.defense.xi]
    } else {
        args.xi.clone()
    };
    let taus = if args.tau.is_empty() {
        vec![base.defense.tau_percentile]
    } else {
        args.tau.clone()
    };
    let alphas = if args.alpha.is_empty() {
        vec![base.dataset.alpha]
    } else {
        args.alpha.clone()
    };
    let mal_default =
        base.attack.malicious_clients.len() as f64 / base.clients as f64;
    let malicious = if args.malicious_ratio.is_empty() {
        vec![mal_default]
    } else {
        args.malicious_ratio.clone()
    };
    let poisons = if args.poison_ratio.is_empty() {
        vec![base.attack.poison_ratio]
    } else {
        args.poison_ratio.clone()
    };
    let seeds = if args.seeds.is_empty() {
        vec![base.seed]
    } else {
        args.seeds.clone()
    };

    let mut cells = 0;
    for &j in &levels {
        for &xi in &xis {
            for &tau in &taus {
                for &alpha in &alphas {
                    for &mal in &malicious {
                        for &poison in &poisons {
                            for &seed in &seeds {
                                let mut cfg = base.clone();
                                cfg.defense.wavelet_levels = j;
                                cfg.defense.xi = xi;
                                cfg.defense.tau_percentile = tau;
                                cfg.dataset.alpha = alpha;
                                cfg.attack.malicious_clients =
                                    (0..(mal * cfg.clients as f64).floor() as usize).collect();
                                cfg.attack.poison_ratio = poison;
                                cfg.seed = seed;
                                let name = format!(
                                    "J{j}_xi{xi:.3}_tau{tau}_alpha{alpha:.2}_mal{mal:.2}_poison{poison:.2}_seed{seed}"
                                );
                                let dir = args.output.join(&name);
                                let result = run_experiment(&cfg, Some(&dir))?;
                                println!(
                                    "{name}: acc {:.4} asr {:.4}",
                                    result.summary.final_acc, result.summary.final_asr
                                );
                                cells += 1;
                            }
                        }
                    }
                }
            }
        }
    }
    println!("swept {cells} cells into {}", args.output.display());
    Ok(())
}

fn ablate(args: &AblateArgs) -> Result<()> {
    let base = load_config(&args.config)?;
    for (name, cfg) in ablation_variants(&base) {
        let dir = args.output.join(name);
        let result = run_experiment(&cfg, Some(&dir))?;
        println!(
            "{name:>8}: acc {:.4}  asr {:.4}",
            result.summary.final_acc, result.summary.final_asr
        );
    }
    Ok(())
}

struct Gate {
    failed: bool,
}

impl Gate {
    fn check(&mut self, name: &str, ok: bool, detail: String) {
        if ok {
            println!("PASS {name} ({detail})");
        } else {
            println!("FAIL {name} ({detail})");
            self.failed = true;
        }
    }
}

fn verify(args: &VerifyArgs) -> Result<bool> {
    let mut gate = Gate { failed: false };

    // wavelet exactness: perfect reconstruction and Parseval on random grids
    let mut rng = RngStream::new(2024, StreamId::Aux { tag: 20, index: 0 });
    let mut worst_pr = 0.0f64;
    let mut worst_parseval = 0.0f64;
    for _ in 0..100 {
        let grid = Grid2D::from_fn(32, 32, |_, _| rng.gen_range(-1.0..1.0));
        let pyramid = dwt2_haar(&grid, 3)?;
        let back = idwt2_haar(&pyramid);
        let pr = grid
            .values()
            .iter()
            .zip(back.values())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        worst_pr = worst_pr.max(pr);
        let rel = (pyramid.energy() - grid.energy()).abs() / grid.energy();
        worst_parseval = worst_parseval.max(rel);
    }
    gate.check(
        "wavelet-exactness",
        worst_pr < 1e-9 && worst_parseval < 1e-9,
        format!("max reconstruction {worst_pr:.2e}, max parseval rel {worst_parseval:.2e}"),
    );

    // gamma speckle moments
    for (i, looks) in [1.0, 2.0, 4.0, 8.0].into_iter().enumerate() {
        let mut rng = RngStream::new(2024, StreamId::Aux { tag: 21, index: i });
        let field = sample_speckle(1000, 1000, looks, &mut rng)?;
        let mean = field.mean();
        let var = field
            .values()
            .iter()
            .map(|v| (v - mean) * (v - mean))
            .sum::<f64>()
            / field.values().len() as f64;
        gate.check(
            &format!("gamma-moments-L{looks}"),
            (mean - 1.0).abs() < 5e-3 && (var - 1.0 / looks).abs() < 5e-2 / looks,
            format!("mean {mean:.5}, var {var:.5}"),
        );
    }

    // divergence and percentile spot values
    let kl_zero = kl_divergence(&[0.3, 0.7], &[0.3, 0.7]).abs() < 1e-7;
    let kl_ln2 = (kl_divergence(&[1.0, 0.0], &[0.5, 0.5]) - std::f64::consts::LN_2).abs() < 1e-4;
    let pct = (percentile(&[0.1, 0.2, 5.0], 95.0) - 4.52).abs() < 1e-9;
    gate.check(
        "divergence-and-percentile",
        kl_zero && kl_ln2 && pct,
        "KL identity, KL point-mass, P95 interpolation".into(),
    );

    // contraction: exact identity case plus random SPD quadratics
    let identity: Vec<Vec<f64>> = (0..4)
        .map(|i| (0..4).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    let targets = vec![vec![1.0, -2.0, 0.5, 3.0]; 5];
    let report = verify_contraction(
        0.25,
        &targets,
        &identity,
        1.0,
        1.0,
        &[4.0, 4.0, 4.0, 4.0],
        30,
    )?;
    let exact = report
        .ratios
        .iter()
        .all(|r| (r - 0.5625).abs() < 1e-9);
    gate.check(
        "contraction-identity",
        report.pass && exact,
        format!("rho {:.4}, measured 0.5625", report.rho),
    );
    let mut all_pass = true;
    for trial in 0..args.spd_trials {
        let mut rng = RngStream::new(2024, StreamId::Aux { tag: 22, index: trial });
        let dim = 3 + trial % 4;
        let mu = 0.4 + 0.1 * (trial % 3) as f64;
        let smoothness = 2.0 + 0.5 * (trial % 5) as f64;
        let a = random_spd(dim, mu, smoothness, &mut rng);
        let targets: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..dim).map(|_| rng.gen_range(-3.0..3.0)).collect())
            .collect();
        let start: Vec<f64> = (0..dim).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let report = verify_contraction(
            1.0 / (4.0 * smoothness),
            &targets,
            &a,
            mu,
            smoothness,
            &start,
            40,
        )?;
        all_pass &= report.pass;
    }
    gate.check(
        "contraction-random-spd",
        all_pass,
        format!("{} random quadratics at eta = 1/(4L)", args.spd_trials),
    );

    // defense parameter envelope
    gate.check(
        "defense-defaults",
        DefenseParams::default().validate().is_ok(),
        "default parameter set".into(),
    );

    Ok(!gate.failed)
}

fn export(args: &ExportArgs) -> Result<()> {
    let cfg = load_config(&args.config)?;
    let d = &cfg.dataset;
    let (stream, per_class) = match args.split.as_str() {
        "train" => (StreamId::TrainData, d.train_per_class),
        "test" => (StreamId::TestData, d.test_per_class),
        other => {
            return Err(sarfl::SimError::Config(format!(
                "unknown split '{other}' (expected train|test)"
            )))
        }
    };
    let mut rng = RngStream::new(cfg.seed, stream);
    let mut chips = Vec::with_capacity(d.classes * per_class);
    for class in 0..d.classes {
        for _ in 0..per_class {
            chips.push(generate_chip(class, d.classes, d.chip_size, d.looks, &mut rng)?);
        }
    }
    if let Some(parent) = args.output.parent() {
        if parent != Path::new("") {
            std::fs::create_dir_all(parent)?;
        }
    }
    let file = std::fs::File::create(&args.output)?;
    export_dataset(&chips, std::io::BufWriter::new(file))?;
    println!("wrote {} chips to {}", chips.len(), args.output.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Simulate(args) => simulate(args).map(|_| true),
        Command::Sweep(args) => sweep(args).map(|_| true),
        Command::Ablate(args) => ablate(args).map(|_| true),
        Command::Verify(args) => verify(args),
        Command::ExportData(args) => export(args).map(|_| true),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
