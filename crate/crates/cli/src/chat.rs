use std::io::{BufRead, Write};

use kgdial::corpus::{DialogueLog, KnowledgeBase, Turn};
use kgdial::pipeline::{run_dialogue, PipelineConfig, PipelineModels};
use kgdial::{Error, Result};

pub const HELP: &str = "commands: /reset clears the dialogue, /quit leaves, /help shows this; anything else is a user turn";

fn io(e: std::io::Error) -> Error {
    Error::Io {
        path: "<stdio>".into(),
        source: e,
    }
}

/// Reads user turns line by line and answers each with the pipeline.
pub fn repl<R: BufRead, W: Write>(
    models: &PipelineModels,
    cfg: &PipelineConfig,
    kb: &KnowledgeBase,
    verbose: bool,
    input: R,
    mut out: W,
) -> Result<()> {
    let mut turns: Vec<Turn> = Vec::new();
    writeln!(out, "{HELP}").map_err(io)?;
    for line in input.lines() {
        let line = line.map_err(io)?;
        let text = line.trim();
        if text.is_empty() {
            continue;
        }
        if text.starts_with('/') {
            match text {
                "/quit" => return Ok(()),
                "/reset" => {
                    turns.clear();
                    writeln!(out, "[dialogue cleared]").map_err(io)?;
                }
                _ => writeln!(out, "{HELP}").map_err(io)?,
            }
            continue;
        }

        turns.push(Turn::user(text));
        let dialogue = DialogueLog::new(turns.clone(), None)?;
        let record = match run_dialogue(models, cfg, kb, &dialogue) {
            Ok(r) => r,
            Err(e) => {
                writeln!(out, "[error: {e}]").map_err(io)?;
                continue;
            }
        };
        if verbose {
            writeln!(out, "[target: {}]", record.target).map_err(io)?;
            if let Some(key) = record.knowledge.as_ref().and_then(|k| k.first()) {
                let answer = kb.get(key).map_or("", |s| s.answer.as_str());
                writeln!(out, "[knowledge: {key} {answer}]").map_err(io)?;
            }
            for c in record.candidates.iter().flatten() {
                writeln!(
                    out,
                    "[s_total {:.4} s_nll {:.4} s_bert {:.4} s_jwd {:.4}] {}",
                    c.s_total, c.s_nll, c.s_bert, c.s_jwd, c.text
                )
                .map_err(io)?;
            }
        }
        match record.response {
            Some(response) => {
                writeln!(out, "system: {response}").map_err(io)?;
                turns.push(Turn::system(response));
            }
            None => writeln!(out, "system: (no knowledge needed for this turn)").map_err(io)?,
        }
    }
    Ok(())
}
