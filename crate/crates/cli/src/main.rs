//! `clipmontage` command-line entry point.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
//! failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use clipmontage::config::ExperimentConfig;
use clipmontage::pipeline::Pipeline;
use clipmontage::textprep::TruncationSide;
use clipmontage::zeroshot::{Aggregation, TemplateMode};
use clipmontage::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "clipmontage", version, about = "CT montage / report contrastive pipeline")]
struct Cli {
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct Overrides {
    /// Experiment config (TOML); defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed applied to every stage.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    run_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    context_length: Option<usize>,
    /// `left` or `right`.
    #[arg(long, global = true)]
    truncation_side: Option<String>,
    /// `class_dependent` (cd) or `class_independent` (ci).
    #[arg(long, global = true)]
    template_mode: Option<String>,
    /// `mean_prob` or `mean_embed`.
    #[arg(long, global = true)]
    aggregation: Option<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic corpus to <run_dir>/data.
    GenSynth,
    /// Sample montages for every manifest entry.
    Preprocess,
    /// Assign patients to train/test.
    Split,
    /// Build the vocabulary from training reports.
    BuildVocab,
    /// Train the dual encoder.
    Train,
    /// Embed test montages, test reports and prompts.
    Embed,
    /// Zero-shot evaluation from EMB files.
    EvalZeroshot {
        /// Image embeddings (default: <run_dir>/embeddings/test_images.emb).
        #[arg(long)]
        images: Option<PathBuf>,
        /// Prompt embeddings keyed by prompt text.
        #[arg(long)]
        prompts: Option<PathBuf>,
    },
    /// Token frequency table over prepared reports.
    Wordfreq {
        /// Phrase whose tokens are excluded (repeatable).
        #[arg(long)]
        exclude: Vec<String>,
        /// Also exclude the class names.
        #[arg(long)]
        exclude_classes: bool,
        /// Rows printed to stdout.
        #[arg(long, default_value_t = 20)]
        top: usize,
    },
    /// Sweep context length x truncation side x template mode.
    Ablate {
        /// Comma-separated context lengths.
        #[arg(long, value_delimiter = ',')]
        context_lengths: Option<Vec<usize>>,
        /// Comma-separated truncation sides.
        #[arg(long, value_delimiter = ',')]
        sides: Option<Vec<String>>,
    },
    /// gen-synth, preprocess, split, build-vocab, train, embed, eval-zeroshot.
    Run,
}

fn effective_config(o: &Overrides) -> Result<ExperimentConfig> {
    let mut cfg = match &o.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = o.seed {
        cfg.apply_seed(seed);
    }
    if let Some(d) = &o.run_dir {
        cfg.paths.run_dir = d.clone();
    }
    if let Some(c) = o.context_length {
        cfg.text.context_length = c;
    }
    if let Some(s) = &o.truncation_side {
        cfg.text.truncation_side = s.parse()?;
    }
    if let Some(m) = &o.template_mode {
        let mode: TemplateMode = m.parse()?;
        cfg.templates.mode = mode;
        cfg.ablation.modes = vec![mode];
    }
    if let Some(a) = &o.aggregation {
        cfg.templates.aggregation = a.parse::<Aggregation>()?;
    }
    Ok(cfg)
}

fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var("CLIPMONTAGE_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("CLIPMONTAGE_THREADS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(e.to_string()))
}

fn run(cli: Cli) -> Result<()> {
    configure_threads()?;
    let mut cfg = effective_config(&cli.overrides)?;
    match &cli.command {
        Command::EvalZeroshot { images, prompts } => {
            if images.is_some() {
                cfg.paths.image_embeddings = images.clone();
            }
            if prompts.is_some() {
                cfg.paths.prompt_embeddings = prompts.clone();
            }
        }
        Command::Ablate {
            context_lengths,
            sides,
        } => {
            if let Some(c) = context_lengths {
                cfg.ablation.context_lengths = c.clone();
            }
            if let Some(s) = sides {
                cfg.ablation.truncation_sides = s
                    .iter()
                    .map(|x| x.parse::<TruncationSide>())
                    .collect::<Result<_>>()?;
            }
        }
        _ => {}
    }
    let p = Pipeline::new(cfg)?;
    p.echo_config()?;
    match cli.command {
        Command::GenSynth => {
            let m = p.gen_synth()?;
            println!("wrote {} patients to {}", m.entries.len(), p.layout.data_dir().display());
        }
        Command::Preprocess => println!("wrote {} montages", p.preprocess()?),
        Command::Split => {
            let m = p.split()?;
            let n = |s| m.entries_in(s).count();
            use clipmontage::corpusio::Split;
            println!("train {} / test {}", n(Split::Train), n(Split::Test));
        }
        Command::BuildVocab => println!("vocabulary size {}", p.build_vocab()?.len()),
        Command::Train => {
            let h = p.train()?;
            if let Some(last) = h.last() {
                println!("epochs {} final loss {:.6} tau {:.6}", h.len(), last.loss.total, last.tau);
            }
        }
        Command::Embed => println!("embedded {} test patients", p.embed()?),
        Command::EvalZeroshot { .. } => print!("{}", p.eval_zeroshot()?.to_table()),
        Command::Wordfreq {
            mut exclude,
            exclude_classes,
            top,
        } => {
            if exclude_classes {
                exclude.extend(p.config.templates.class_names());
            }
            for (t, c) in p.wordfreq(&exclude)?.iter().take(top) {
                println!("{t}\t{c}");
            }
        }
        Command::Ablate { .. } => print!("{}", p.ablate()?.to_markdown()),
        Command::Run => {
            p.gen_synth()?;
            p.preprocess()?;
            p.split()?;
            p.build_vocab()?;
            p.train()?;
            p.embed()?;
            print!("{}", p.eval_zeroshot()?.to_table());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
