mod chat;
mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use kgdial::Error;

#[derive(Parser, Debug)]
#[command(name = "kgdial", version, about = "Knowledge-grounded dialogue: detect, select, generate")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// JSON pipeline configuration; missing fields take their defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the training seed (and the corpus seed where relevant).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory; a config snapshot is written here.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a synthetic knowledge base with labelled dialogues.
    GenCorpus {
        #[arg(long, default_value_t = 64)]
        dialogues: usize,
        #[arg(long, default_value_t = 4)]
        entities_per_domain: usize,
        #[arg(long, default_value_t = 4)]
        docs_per_entity: usize,
    },
    /// Train the models of one subtask and save their checkpoints.
    Train {
        #[arg(value_enum)]
        subtask: Subtask,
    },
    /// Knowledge-seeking turn detection over the configured logs.
    Detect,
    /// Knowledge selection over knowledge-seeking dialogues.
    Select,
    /// Response generation from the gold snippet of each labelled dialogue.
    Generate,
    /// Score every subtask against the labels.
    Eval,
    /// Write augmented dialogues built from the knowledge base.
    Augment {
        #[arg(long, default_value_t = 100)]
        per_entity: usize,
        #[arg(long, default_value_t = 0.8)]
        shift_prob: f64,
    },
    /// Gated detect, select, generate over every dialogue.
    Pipeline,
    /// Interactive session on stdin.
    Chat {
        /// Print the detection flag, the selected snippet and candidate scores.
        #[arg(long)]
        verbose: bool,
    },
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subtask {
    Detect,
    Select,
    Generate,
}

pub const EXIT_USAGE: u8 = 1;
pub const EXIT_DATA: u8 = 2;
pub const EXIT_MODEL: u8 = 3;

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidConfig(_) => EXIT_USAGE,
        Error::Io { .. }
        | Error::Parse { .. }
        | Error::DuplicateSnippet(_)
        | Error::Integrity(_)
        | Error::Alignment { .. }
        | Error::EmptyKnowledgeBase
        | Error::LengthMismatch { .. }
        | Error::Unlabeled(_)
        | Error::Json(_) => EXIT_DATA,
        _ => EXIT_MODEL,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
