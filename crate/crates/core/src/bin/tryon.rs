use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tryon_core::adversarial::AdvMode;
use tryon_core::dataset::layout::{load_all, save_rgb};
use tryon_core::dataset::{generate_synthetic, GarmentCategory, PairEntry, Resolution, SampleRecord, SplitKind, SplitSpec};
use tryon_core::metrics::{EvalMode, SeededConvBackend};
use tryon_core::pipeline::{
    ablate, evaluate, evaluate_protocol, multi_garment, train_stage, tryon_once, Bundle, Config, NoProbe, RunDir,
    TrainOptions, TrainStage,
};
use tryon_core::{Error, Result};

#[derive(Parser)]
#[command(name = "tryon", version, about = "Multi-category virtual try-on")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML file with `[profiles.<name>]` tables.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Profile to resolve (default: the file's `profile` key, else `base`).
    #[arg(long, global = true)]
    profile: Option<String>,
    /// Run directory (default: $TRYON_HOME/runs/<run-name>).
    #[arg(long, global = true)]
    run_dir: Option<PathBuf>,
    #[arg(long, global = true, default_value = "default")]
    run_name: String,
}

impl Common {
    fn config(&self) -> Result<Config> {
        match &self.config {
            Some(path) => Config::from_file(path, self.profile.as_deref()),
            None => Config::builtin(self.profile.as_deref().unwrap_or("base")),
        }
    }

    fn run(&self) -> RunDir {
        match &self.run_dir {
            Some(d) => RunDir::new(d),
            None => RunDir::named(&self.run_name),
        }
    }
}

#[derive(Args)]
struct Train {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    data: PathBuf,
    /// Continue from this stage's checkpoint.
    #[arg(long)]
    resume: bool,
    /// Override the stage's iteration count.
    #[arg(long)]
    iters: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic corpus in the dataset layout.
    GenData {
        #[arg(long)]
        out: PathBuf,
        /// Items per category.
        #[arg(long, default_value_t = 6)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 64)]
        height: usize,
        #[arg(long, default_value_t = 48)]
        width: usize,
    },
    TrainWarp(Train),
    TrainParse(Train),
    TrainTryon {
        #[command(flatten)]
        train: Train,
        #[arg(long, default_value = "psad")]
        disc: AdvMode,
    },
    /// Print the per-category metric table for the test split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// paired, unpaired, or protocol (paired SSIM with unpaired FID/KID/IS).
        #[arg(long, default_value = "protocol")]
        mode: String,
        #[arg(long, default_value = "psad")]
        disc: AdvMode,
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Dress one model in one garment.
    Tryon {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// Item id of the model photo.
        #[arg(long)]
        model: String,
        /// Item id whose garment image is used.
        #[arg(long)]
        garment: String,
        #[arg(long)]
        category: GarmentCategory,
        #[arg(long, default_value = "psad")]
        disc: AdvMode,
        #[arg(long)]
        out: PathBuf,
    },
    /// Upper-body then lower-body garment on one model.
    TryonMulti {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: String,
        #[arg(long)]
        upper: String,
        #[arg(long)]
        lower: String,
        #[arg(long, default_value = "psad")]
        disc: AdvMode,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the try-on stage once per discriminator and compare.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "none,binary,patch,psad")]
        modes: Vec<AdvMode>,
        #[arg(long)]
        json: Option<PathBuf>,
    },
}

fn write_json(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })
}

fn train(t: &Train, stage: TrainStage, mode: AdvMode) -> Result<()> {
    let cfg = t.common.config()?;
    let records = load_all(&t.data, SplitKind::Train, cfg.resolution, None)?;
    let out = train_stage(&cfg, &records, &t.common.run(), stage, mode, &TrainOptions { resume: t.resume, iterations: t.iters })?;
    if let Some(last) = out.last() {
        println!("{stage}: {} steps, final total loss {:.6}, checkpoint {}", out.history.len(), last.total, out.dir.display());
    } else {
        println!("{stage}: already at the requested iteration, checkpoint {}", out.dir.display());
    }
    Ok(())
}

fn test_split(data: &Path, res: Resolution) -> Result<(Vec<SampleRecord>, Vec<PairEntry>)> {
    let entries = SplitSpec::from_root(data)?.test;
    let records = load_all(data, SplitKind::Test, res, None)?;
    Ok((records, entries))
}

fn find(records: &[SampleRecord], id: &str, category: Option<GarmentCategory>) -> Result<SampleRecord> {
    records
        .iter()
        .find(|r| r.item_id == id && category.is_none_or(|c| c == r.category))
        .cloned()
        .ok_or_else(|| Error::Argument(format!("no item `{id}` in the dataset")))
}

fn all_records(data: &Path, res: Resolution) -> Result<Vec<SampleRecord>> {
    let mut v = load_all(data, SplitKind::Test, res, None)?;
    v.extend(load_all(data, SplitKind::Train, res, None)?);
    Ok(v)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { out, n, seed, height, width } => {
            let res = Resolution::new(height, width);
            generate_synthetic(n, res, seed, &out)?;
            println!("wrote {} items per category at {res} to {}", n, out.display());
        }
        Command::TrainWarp(t) => train(&t, TrainStage::Warp, AdvMode::None)?,
        Command::TrainParse(t) => train(&t, TrainStage::Parse, AdvMode::None)?,
        Command::TrainTryon { train: t, disc } => train(&t, TrainStage::Tryon, disc)?,
        Command::Eval { common, data, mode, disc, json } => {
            let bundle = Bundle::load(&common.run(), disc)?;
            let (records, entries) = test_split(&data, bundle.config.resolution)?;
            let backend = SeededConvBackend::default();
            let seed = bundle.config.seed;
            let report = match mode.as_str() {
                "protocol" => evaluate_protocol(&bundle, &records, &entries, &backend, seed)?,
                m => evaluate(&bundle, &records, &entries, m.parse::<EvalMode>()?, &backend, seed)?,
            };
            print!("{report}");
            if let Some(p) = json {
                write_json(&p, &report.to_json()?)?;
            }
        }
        Command::Tryon { common, data, model, garment, category, disc, out } => {
            let bundle = Bundle::load(&common.run(), disc)?;
            let records = all_records(&data, bundle.config.resolution)?;
            let person = find(&records, &model, None)?;
            let g = find(&records, &garment, Some(category))?;
            let result = tryon_once(&bundle, &person, &g.garment_image, category, &mut NoProbe)?;
            save_rgb(&out, &result.image)?;
            println!("wrote {}", out.display());
        }
        Command::TryonMulti { common, data, model, upper, lower, disc, out } => {
            let bundle = Bundle::load(&common.run(), disc)?;
            let records = all_records(&data, bundle.config.resolution)?;
            let person = find(&records, &model, None)?;
            let u = find(&records, &upper, Some(GarmentCategory::UpperBody))?;
            let l = find(&records, &lower, Some(GarmentCategory::LowerBody))?;
            let result = multi_garment(
                &bundle,
                &person,
                (&u.garment_image, GarmentCategory::UpperBody),
                (&l.garment_image, GarmentCategory::LowerBody),
                &mut NoProbe,
            )?;
            save_rgb(&out, &result.lower.image)?;
            println!("wrote {}", out.display());
        }
        Command::Ablate { common, data, modes, json } => {
            let cfg = common.config()?;
            let train = load_all(&data, SplitKind::Train, cfg.resolution, None)?;
            let (test, entries) = test_split(&data, cfg.resolution)?;
            let backend = SeededConvBackend::default();
            let outcome = ablate(&cfg, &train, &test, &entries, &common.run(), &modes, &backend)?;
            print!("{}", outcome.comparison);
            if let Some(p) = json {
                write_json(&p, &outcome.comparison.to_json()?)?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
