use std::fs;
use std::path::Path;

use kgdial::corpus::{generate_synthetic_corpus, load_knowledge_base, load_logs, write_corpus, DialogueLog, KnowledgeBase, SyntheticSpec};
use kgdial::detection::{detect, evaluate_detection, format_detection_input};
use kgdial::evalmetrics::MetricReport;
use kgdial::generation::ResponsePart;
use kgdial::neural::{MiniModel, TrainReport};
use kgdial::pipeline::{
    evaluate, load_detector, run_pipeline, train_detect_model, train_generator_model, train_rank_model,
    train_three_step_model, GenerationModels, PipelineConfig, PipelineModels, SelectionMode, SelectionModels, DETECT,
    GENERATE, GREETING, RANK, THREE_STEP,
};
use kgdial::selection::{augment_dialogues, evaluate_selection};
use kgdial::textsim::tokenize;
use kgdial::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::{Cli, Command, Subtask};

pub fn resolve_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.common.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.common.seed {
        cfg.train.seed = seed;
    }
    if let Some(out) = &cli.common.out {
        cfg.paths.output = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn mkdir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn load_data(cfg: &PipelineConfig, need_labels: bool) -> Result<(KnowledgeBase, Vec<DialogueLog>)> {
    let kb = load_knowledge_base(&cfg.paths.knowledge)?;
    let labels = match &cfg.paths.labels {
        Some(p) if need_labels || p.exists() => Some(p.as_path()),
        _ => None,
    };
    if need_labels && labels.is_none() {
        return Err(Error::Integrity("this command needs a labels file".into()));
    }
    let dialogues = load_logs(&cfg.paths.logs, labels)?;
    for d in &dialogues {
        d.validate_against(&kb)?;
    }
    Ok((kb, dialogues))
}

fn save(cfg: &PipelineConfig, name: &str, model: &MiniModel, report: &TrainReport) -> Result<()> {
    mkdir(&cfg.paths.checkpoints)?;
    let path = cfg.checkpoint(name);
    model.save(&path)?;
    write_json(&cfg.paths.output.join(format!("train-{name}.json")), report)?;
    println!(
        "{name}: {} steps, loss {:.4} -> {:.4}, saved {}",
        report.steps,
        report.initial(),
        report.last(),
        path.display()
    );
    Ok(())
}

fn train(cfg: &PipelineConfig, subtask: Subtask) -> Result<()> {
    let (kb, dialogues) = load_data(cfg, true)?;
    match subtask {
        Subtask::Detect => {
            let (m, r) = train_detect_model(cfg, &kb, &dialogues)?;
            save(cfg, DETECT, &m, &r)
        }
        Subtask::Select => {
            if cfg.selection != SelectionMode::ThreeStep {
                let (m, r) = train_rank_model(cfg, &kb, &dialogues)?;
                save(cfg, RANK, &m, &r)?;
            }
            if cfg.selection != SelectionMode::Rank {
                let (m, r) = train_three_step_model(cfg, &kb, &dialogues)?;
                save(cfg, THREE_STEP, &m, &r)?;
            }
            Ok(())
        }
        Subtask::Generate => {
            if cfg.srg {
                let (m, r) = train_generator_model(cfg, &kb, &dialogues, ResponsePart::Knowledge, true)?;
                save(cfg, GENERATE, &m, &r)?;
                let (m, r) = train_generator_model(cfg, &kb, &dialogues, ResponsePart::Greeting, false)?;
                save(cfg, GREETING, &m, &r)
            } else {
                let (m, r) = train_generator_model(cfg, &kb, &dialogues, ResponsePart::Full, cfg.decode.copy)?;
                save(cfg, GENERATE, &m, &r)
            }
        }
    }
}

/// Dialogues the later subtasks run on: labelled knowledge-seeking ones,
/// or all of them when unlabelled.
fn seeking(d: &DialogueLog) -> bool {
    d.target().unwrap_or(true)
}

pub fn run(cli: Cli) -> Result<()> {
    let cfg = resolve_config(&cli)?;
    let out = cfg.paths.output.clone();
    mkdir(&out)?;
    cfg.save(out.join("config.json"))?;

    match cli.command {
        Command::GenCorpus {
            dialogues,
            entities_per_domain,
            docs_per_entity,
        } => {
            let mut spec = SyntheticSpec {
                entities_per_domain,
                docs_per_entity,
                n_dialogues: dialogues,
                ..SyntheticSpec::default()
            };
            if let Some(seed) = cli.common.seed {
                spec.seed = seed;
            }
            let (kb, logs) = generate_synthetic_corpus(&spec)?;
            write_corpus(&out, &kb, &logs)?;
            println!("wrote {} snippets and {} dialogues to {}", kb.total(), logs.len(), out.display());
        }
        Command::Train { subtask } => train(&cfg, subtask)?,
        Command::Detect => {
            let (kb, dialogues) = load_data(&cfg, false)?;
            let model = load_detector(&cfg)?;
            let mut records = Vec::with_capacity(dialogues.len());
            for d in &dialogues {
                records.push(detect(&model, &format_detection_input(d, &kb, &cfg.retrieval))?);
            }
            write_json(&out.join("detect.json"), &records)?;
            if dialogues.iter().all(|d| d.target().is_some()) {
                let prf = evaluate_detection(&model, &dialogues, &kb, &cfg.retrieval)?;
                println!("precision {:.4} recall {:.4} f1 {:.4}", prf.precision, prf.recall, prf.f1);
            }
        }
        Command::Select => {
            let (kb, dialogues) = load_data(&cfg, false)?;
            let models = SelectionModels::load(&cfg)?;
            let mut records = Vec::with_capacity(dialogues.len());
            let (mut preds, mut golds) = (Vec::new(), Vec::new());
            for d in &dialogues {
                if !seeking(d) {
                    records.push(None);
                    continue;
                }
                let sel = models.select(&cfg, d, &kb)?;
                records.push(Some(sel.output()));
                if let Some(gold) = d.gold_knowledge() {
                    golds.push(gold.clone());
                    preds.push(sel);
                }
            }
            write_json(&out.join("select.json"), &records)?;
            if !golds.is_empty() {
                let eval = evaluate_selection(&preds, &golds)?;
                let m = &eval.metrics;
                println!(
                    "mrr@5 {:.4} r@1 {:.4} r@5 {:.4}",
                    m.mrr_at_5.unwrap_or(0.0),
                    m.recall_at_1.unwrap_or(0.0),
                    m.recall_at_5.unwrap_or(0.0)
                );
            }
        }
        Command::Generate => {
            let (kb, dialogues) = load_data(&cfg, true)?;
            let models = GenerationModels::load(&cfg)?;
            let mut records = Vec::with_capacity(dialogues.len());
            let mut pairs = Vec::new();
            for d in &dialogues {
                let Some(key) = d.gold_knowledge() else {
                    records.push(None);
                    continue;
                };
                let snippet = kb
                    .get(key)
                    .ok_or_else(|| Error::Integrity(format!("gold {key} not in knowledge base")))?;
                let gen = models.generate(&cfg, d, &snippet.answer)?;
                if let Some(reference) = d.gold_response() {
                    pairs.push((tokenize(&gen.response).tokens, tokenize(reference).tokens));
                }
                records.push(Some(gen));
            }
            write_json(&out.join("generate.json"), &records)?;
            if !pairs.is_empty() {
                let m = MetricReport::default().with_text(&pairs);
                println!("bleu-4 {:.4} rouge-l {:.4}", m.bleu_4.unwrap_or(0.0), m.rouge_l.unwrap_or(0.0));
            }
        }
        Command::Eval => {
            let (kb, dialogues) = load_data(&cfg, true)?;
            let models = PipelineModels::load(&cfg)?;
            let report = evaluate(&models, &cfg, &kb, &dialogues)?;
            write_json(&out.join("eval.json"), &report)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Augment { per_entity, shift_prob } => {
            if !(0.0..=1.0).contains(&shift_prob) {
                return Err(Error::InvalidConfig(format!("shift_prob {shift_prob} outside [0, 1]")));
            }
            let kb = load_knowledge_base(&cfg.paths.knowledge)?;
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
            let dialogues = augment_dialogues(&kb, per_entity, shift_prob, &mut rng)?;
            write_corpus(&out, &kb, &dialogues)?;
            println!("wrote {} augmented dialogues to {}", dialogues.len(), out.display());
        }
        Command::Pipeline => {
            let (kb, dialogues) = load_data(&cfg, false)?;
            let models = PipelineModels::load(&cfg)?;
            let records = run_pipeline(&models, &cfg, &kb, &dialogues)?;
            write_json(&out.join("pipeline.json"), &records)?;
            let seeking = records.iter().filter(|r| r.target).count();
            println!("{} dialogues, {seeking} knowledge-seeking", records.len());
        }
        Command::Chat { verbose } => {
            let kb = load_knowledge_base(&cfg.paths.knowledge)?;
            let models = PipelineModels::load(&cfg)?;
            let stdin = std::io::stdin();
            crate::chat::repl(&models, &cfg, &kb, verbose, stdin.lock(), std::io::stdout().lock())?;
        }
    }
    Ok(())
}
