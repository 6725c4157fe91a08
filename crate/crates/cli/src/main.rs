use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgGroup, Parser, Subcommand};
use simvit::audit::{run_audit, Scope};
use simvit::io::{load_weights, read_ppm, save_weights, RunConfig, WeightFile};
use simvit::training::{evaluate, gen_toy_dataset, random_image, train_toy, ToyDataset, TrainOptions};
use simvit::{build_model, describe, preset_config, Model32, ModelConfig, Tensor32, Variant};

const TOY_SAMPLES: usize = 256;
const TOY_CLASSES: usize = 10;

#[derive(Parser)]
#[command(
    name = "simvit",
    version,
    about = "Hierarchical vision transformer with central sliding-window attention"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Per-stage parameter and MAC table.
    #[command(group(ArgGroup::new("model").required(true).args(["variant", "config"])))]
    Describe {
        #[arg(long)]
        variant: Option<Variant>,
        /// TOML run configuration (variant, ablation overrides or a stage table).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 224)]
        res: usize,
        #[arg(long, default_value_t = 1000)]
        classes: usize,
    },
    /// Finite-difference audit of analytic gradients.
    Gradcheck {
        #[arg(long, default_value = "all")]
        scope: Scope,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Feature pyramid and logits for one image, or accuracy on the toy set.
    #[command(group(ArgGroup::new("input").required(true).args(["image", "random", "toy_seed"])))]
    Forward {
        #[arg(long)]
        variant: Variant,
        #[arg(long)]
        image: Option<PathBuf>,
        /// Use a seeded uniform-noise image of side `--res`.
        #[arg(long)]
        random: bool,
        /// Classify the whole toy dataset generated from this seed.
        #[arg(long)]
        toy_seed: Option<u64>,
        #[arg(long, default_value_t = 224)]
        res: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        weights: Option<PathBuf>,
        /// Defaults to the head width stored in `--weights`, else 1000.
        #[arg(long)]
        classes: Option<usize>,
    },
    /// Structural invariant suite.
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Fits the toy grating dataset and writes the weights.
    TrainToy {
        #[arg(long, default_value = "micro-reduced")]
        variant: Variant,
        #[arg(long, default_value_t = 50)]
        epochs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 32)]
        batch: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train accuracy of saved weights on the toy dataset.
    EvalToy {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "micro-reduced")]
        variant: Variant,
    },
}

enum Outcome {
    Pass,
    CheckFailed,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(Outcome::Pass) => ExitCode::SUCCESS,
        Ok(Outcome::CheckFailed) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn run(cmd: Command) -> simvit::Result<Outcome> {
    match cmd {
        Command::Describe {
            variant,
            config,
            res,
            classes,
        } => {
            let cfg = match (variant, config) {
                (_, Some(path)) => RunConfig::load(path)?.to_model_config()?,
                (Some(v), None) => preset_config(v, classes),
                (None, None) => unreachable!("clap requires one of them"),
            };
            print!("{}", describe(&cfg, res, res)?);
            Ok(Outcome::Pass)
        }
        Command::Gradcheck { scope, seed } => {
            let cases = run_audit(scope, seed)?;
            let failed = cases.iter().filter(|c| !c.report.pass).count();
            for c in &cases {
                println!("{c}");
                if !c.report.pass {
                    print!("{}", c.report);
                }
            }
            println!("gradcheck {scope}: {} cases, {failed} failed", cases.len());
            Ok(if failed == 0 {
                Outcome::Pass
            } else {
                Outcome::CheckFailed
            })
        }
        Command::Forward {
            variant,
            image,
            random,
            toy_seed,
            res,
            seed,
            weights,
            classes,
        } => {
            let classes = match (classes, &weights) {
                (Some(c), _) => c,
                (None, Some(path)) => stored_classes(path)?,
                (None, None) => 1000,
            };
            let model = load_or_build(&preset_config(variant, classes), weights.as_deref(), seed)?;
            if let Some(s) = toy_seed {
                let data = gen_toy_dataset::<f32>(s, TOY_SAMPLES, classes)?;
                println!("accuracy {:.4}", evaluate(&model, &data)?);
                return Ok(Outcome::Pass);
            }
            let x: Tensor32 = match image {
                Some(path) => read_ppm(path)?,
                None => {
                    debug_assert!(random);
                    random_image(seed, res, res)
                }
            };
            let pyramid = model.forward_features(&x)?;
            for (i, m) in pyramid.maps.iter().enumerate() {
                let s = m.shape();
                println!(
                    "F{} {}x{}x{} mean {:.6} std {:.6}",
                    i + 1,
                    s[0],
                    s[1],
                    s[2],
                    m.mean(),
                    m.std()
                );
            }
            let logits = model.forward_classify(&x)?;
            println!("logits {} argmax {}", logits.len(), simvit::training::argmax(&logits));
            let vals: Vec<String> = logits.data().iter().map(|v| format!("{v:.6}")).collect();
            println!("{}", vals.join(" "));
            Ok(Outcome::Pass)
        }
        Command::Verify { seed } => {
            let checks = simvit::verify::run_all(seed)?;
            let failed = checks.iter().filter(|c| !c.pass).count();
            for c in &checks {
                println!("{c}");
            }
            println!("verify: {} checks, {failed} failed", checks.len());
            Ok(if failed == 0 {
                Outcome::Pass
            } else {
                Outcome::CheckFailed
            })
        }
        Command::TrainToy {
            variant,
            epochs,
            seed,
            batch,
            out,
        } => {
            let data = toy(seed)?;
            let mut model = build_model::<f32>(&preset_config(variant, TOY_CLASSES), seed)?;
            let opts = TrainOptions {
                epochs,
                batch,
                seed,
                ..TrainOptions::default()
            };
            train_toy(&mut model, &data, opts, |s| println!("{s}"))?;
            save_weights(&model, &out)?;
            println!("saved {} tensors to {}", model.store.len(), out.display());
            Ok(Outcome::Pass)
        }
        Command::EvalToy { weights, seed, variant } => {
            let model = load_or_build(&preset_config(variant, TOY_CLASSES), Some(&weights), 0)?;
            println!("accuracy {:.4}", evaluate(&model, &toy(seed)?)?);
            Ok(Outcome::Pass)
        }
    }
}

fn toy(seed: u64) -> simvit::Result<ToyDataset<f32>> {
    let data = gen_toy_dataset(seed, TOY_SAMPLES, TOY_CLASSES)?;
    println!("dataset seed {seed} checksum {}", data.checksum());
    Ok(data)
}

fn load_or_build(cfg: &ModelConfig, weights: Option<&Path>, seed: u64) -> simvit::Result<Model32> {
    match weights {
        Some(path) => load_weights(path, cfg),
        None => build_model(cfg, seed),
    }
}

/// Output width of the classifier stored in a weight file.
fn stored_classes(path: &Path) -> simvit::Result<usize> {
    let file = WeightFile::decode(&std::fs::read(path)?)?;
    file.entries
        .iter()
        .find(|e| e.name == "head.fc.bias")
        .map(|e| e.shape[0])
        .ok_or_else(|| simvit::Error::Config(format!("{} has no head.fc.bias tensor", path.display())))
}
