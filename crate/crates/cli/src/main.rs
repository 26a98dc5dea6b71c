mod config;

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use ssimadv::data::{load_mnist_dir, Split};
use ssimadv::model::{load_checkpoint, save_checkpoint, train_with_log, Architecture};
use ssimadv::report::{read_outcomes_csv, write_tail_csv};
use ssimadv::{
    run_campaign, AttackKind, CampaignConfig, ConstraintThresholds, EnetConfig, EvalReport, Network, PgdConfig,
    SsimAttackConfig, TrainConfig,
};

use config::Options;

#[derive(Debug, Parser)]
#[command(name = "ssimadv", version, about = "SSIM-constrained adversarial attacks and their evaluation")]
struct Cli {
    /// TOML file whose keys mirror the long flags.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Adversarially train a classifier on the training split.
    Train(Options),
    /// Attack the test split and write outcomes.csv, tail_curve.csv and images.
    Attack(Options),
    /// Re-summarize an existing outcomes.csv.
    Report(Options),
    /// Run the invariant suites.
    Selftest(Options),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            let invalid = e.chain().any(|c| matches!(c.downcast_ref::<ssimadv::Error>(), Some(ssimadv::Error::Config(_))));
            ExitCode::from(if invalid { 2 } else { 1 })
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    let file = match &cli.config {
        Some(path) => Options::from_file(path)?,
        None => Options::default(),
    };
    match cli.command {
        Command::Train(o) => train(o.or(file)),
        Command::Attack(o) => attack(o.or(file)),
        Command::Report(o) => report(o.or(file)),
        Command::Selftest(o) => selftest(o.or(file)),
    }
}

fn invalid(msg: impl Into<String>) -> anyhow::Error {
    ssimadv::Error::config(msg).into()
}

fn train(o: Options) -> anyhow::Result<ExitCode> {
    let cfg = TrainConfig {
        epochs: o.epochs.unwrap_or(TrainConfig::default().epochs),
        pgd_epsilon: o.epsilon.unwrap_or(0.3),
        pgd_steps: o.pgd_steps.unwrap_or(10),
        learning_rate: o.lr.unwrap_or(TrainConfig::default().learning_rate),
        warmup_epochs: o.warmup.unwrap_or(0),
        seed: o.seed(),
        ..TrainConfig::default()
    };
    cfg.validate()?;
    let arch: Architecture = o.arch.as_deref().unwrap_or("desk").parse()?;
    let mut data = load_mnist_dir(o.data(), Split::Train).with_context(|| format!("loading {}", o.data().display()))?;
    if let Some(n) = o.limit {
        data = data.truncated(n);
    }
    let shape = data.shape().ok_or_else(|| invalid("training set is empty"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(o.seed());
    let net = Network::with_architecture(arch, shape, data.classes(), &mut rng)?;
    let net = train_with_log(net, &data, &cfg, |s| {
        println!("epoch {:>3}  loss {:.4}  clean accuracy {:.4}", s.epoch, s.mean_loss, s.clean_accuracy)
    })?;
    let path = o.model();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    save_checkpoint(&net, &path).with_context(|| format!("writing {}", path.display()))?;
    println!("wrote {}", path.display());
    Ok(ExitCode::SUCCESS)
}

fn campaign_config(o: &Options) -> anyhow::Result<CampaignConfig> {
    let attacks = match &o.attacks {
        Some(list) => AttackKind::parse_list(list)?,
        None => AttackKind::ALL.to_vec(),
    };
    let thresholds = ConstraintThresholds::new(o.zeta1.unwrap_or(0.9), o.zeta2.unwrap_or(0.9))?;
    let pgd = PgdConfig::new(o.epsilon.unwrap_or(0.3), o.pgd_steps.unwrap_or(10));
    let mut enet = EnetConfig::default();
    let mut ssim = SsimAttackConfig { thresholds, ..SsimAttackConfig::default() };
    if let Some(lr) = o.dual_lr {
        ssim.dual.learning_rate = lr;
    }
    if let Some(k) = o.search_steps {
        enet.search_steps = k;
        ssim.search_steps = k;
    }
    if let Some(t) = o.iters {
        enet.iterations = t;
        ssim.iterations = t;
    }
    ssim.enet = enet;
    let cfg = CampaignConfig { attacks, pgd, enet, ssim, limit: o.limit, seed: o.seed() };
    cfg.pgd.validate()?;
    cfg.ssim.validate()?;
    Ok(cfg)
}

fn attack(o: Options) -> anyhow::Result<ExitCode> {
    let cfg = campaign_config(&o)?;
    let model_path = o.model();
    let net = load_checkpoint(&model_path).with_context(|| format!("loading model {}", model_path.display()))?;
    let data = load_mnist_dir(o.data(), Split::Test).with_context(|| format!("loading {}", o.data().display()))?;
    let campaign = run_campaign(&net, &data, &cfg)?;
    let out = o.out();
    ssimadv::report::emit_report(&campaign, &out).with_context(|| format!("writing report to {}", out.display()))?;
    print!("{}", campaign.report);
    println!("wrote {}", out.join("outcomes.csv").display());
    Ok(ExitCode::SUCCESS)
}

fn report(o: Options) -> anyhow::Result<ExitCode> {
    let out = o.out();
    let path = out.join("outcomes.csv");
    let records = read_outcomes_csv(File::open(&path).with_context(|| format!("opening {}", path.display()))?)?;
    let summary = match &o.attacks {
        Some(list) => ssimadv::report::summarize(&records, &AttackKind::parse_list(list)?),
        None => EvalReport::from_records(&records),
    };
    write_tail_csv(&summary, BufWriter::new(File::create(out.join("tail_curve.csv"))?))?;
    print!("{summary}");
    Ok(ExitCode::SUCCESS)
}

fn selftest(o: Options) -> anyhow::Result<ExitCode> {
    let checks = ssimadv::selftest::run_all(o.seed())?;
    for c in &checks {
        println!("{} {} ({} cases): {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.cases, c.detail);
    }
    if checks.iter().all(|c| c.passed) {
        Ok(ExitCode::SUCCESS)
    } else {
        bail!("{} of {} suites failed", checks.iter().filter(|c| !c.passed).count(), checks.len())
    }
}
