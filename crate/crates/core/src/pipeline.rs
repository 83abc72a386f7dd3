//! End-to-end configuration, training, checkpoints, and the gated
//! detect → select → generate run.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{DialogueLog, KnowledgeBase, KnowledgeKey};
use crate::detection::{self, detect, format_detection_input, train_detection, DETECTION_DOMAINS};
use crate::evalmetrics::MetricReport;
use crate::generation::{
    generate, generation_inputs, train_generator, CandidateScore, DecodeConfig, GenerationConfig, GenerationInput,
    LossWeights, RerankWeights, ResponsePart,
};
use crate::neural::{build_vocab, AdamConfig, MiniModel, ModelConfig, TrainConfig, TrainReport, Vocab};
use crate::retrieval::RetrievalConfig;
use crate::selection::{
    ensemble_select, evaluate_selection, three_step_select, train_rank, train_three_step, RankScorer, SelectionEval,
    SelectionResult, ThreeStepScorer,
};
use crate::textsim::tokenize;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    pub knowledge: PathBuf,
    pub logs: PathBuf,
    pub labels: Option<PathBuf>,
    pub checkpoints: PathBuf,
    pub output: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            knowledge: "data/knowledge.json".into(),
            logs: "data/logs.json".into(),
            labels: Some("data/labels.json".into()),
            checkpoints: "checkpoints".into(),
            output: "out".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSettings {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub d_ff: usize,
    pub max_seq: usize,
    pub latent_k: usize,
    /// Words seen fewer times stay out of the vocabulary (and can only be
    /// produced by copying).
    pub vocab_min_freq: usize,
}

impl Default for ModelSettings {
    fn default() -> Self {
        let m = ModelConfig::default();
        Self {
            d_model: m.d_model,
            n_heads: m.n_heads,
            n_layers: m.n_layers,
            d_ff: m.d_ff,
            max_seq: m.max_seq,
            latent_k: m.latent_k,
            vocab_min_freq: 1,
        }
    }
}

impl ModelSettings {
    pub fn model_config(&self, seed: u64) -> ModelConfig {
        ModelConfig {
            d_model: self.d_model,
            n_heads: self.n_heads,
            n_layers: self.n_layers,
            d_ff: self.d_ff,
            max_seq: self.max_seq,
            latent_k: self.latent_k,
            init_seed: seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSettings {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub grad_accum: usize,
    pub max_steps: Option<usize>,
    pub clip_norm: Option<f64>,
    /// Negative samples per positive for the ranking and cascade heads.
    pub negatives: usize,
    pub seed: u64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            lr: 6.25e-5,
            batch_size: 8,
            epochs: 10,
            grad_accum: 1,
            max_steps: None,
            clip_norm: AdamConfig::default().clip_norm,
            negatives: 5,
            seed: 0,
        }
    }
}

impl TrainSettings {
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            optimizer: AdamConfig {
                lr: self.lr,
                clip_norm: self.clip_norm,
                ..AdamConfig::default()
            },
            batch_size: self.batch_size,
            grad_accum: self.grad_accum,
            epochs: self.epochs,
            max_steps: self.max_steps,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionMode {
    Rank,
    ThreeStep,
    #[default]
    Ensemble,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub paths: Paths,
    pub retrieval: RetrievalConfig,
    pub model: ModelSettings,
    pub train: TrainSettings,
    pub selection: SelectionMode,
    /// Separate knowledge and greeting generators.
    pub srg: bool,
    pub decode: DecodeConfig,
    pub loss: LossWeights,
    pub rerank: RerankWeights,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            paths: Paths::default(),
            retrieval: RetrievalConfig::default(),
            model: ModelSettings::default(),
            train: TrainSettings::default(),
            selection: SelectionMode::default(),
            srg: true,
            decode: DecodeConfig::default(),
            loss: LossWeights::default(),
            rerank: RerankWeights::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.retrieval.validate()?;
        self.model.model_config(0).validate()?;
        if self.decode.groups == 0 || self.decode.beams == 0 || self.decode.max_len == 0 {
            return Err(Error::InvalidConfig("groups, beams and max_len must be positive".into()));
        }
        if self.decode.max_len >= self.model.max_seq {
            return Err(Error::InvalidConfig(format!(
                "max_len {} must be below max_seq {}",
                self.decode.max_len, self.model.max_seq
            )));
        }
        let weights = [
            self.loss.nll,
            self.loss.bow,
            self.loss.kld,
            self.loss.norm,
            self.rerank.nll,
            self.rerank.bert,
            self.rerank.jwd,
        ];
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidConfig("loss and rerank weights must be finite and non-negative".into()));
        }
        if !(self.train.lr > 0.0) || self.train.batch_size == 0 || self.train.grad_accum == 0 {
            return Err(Error::InvalidConfig("lr, batch_size and grad_accum must be positive".into()));
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| Error::parse(path, &e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn generation(&self) -> GenerationConfig {
        GenerationConfig {
            decode: self.decode.clone(),
            loss: self.loss,
            rerank: self.rerank,
        }
    }

    pub fn checkpoint(&self, name: &str) -> PathBuf {
        self.paths.checkpoints.join(format!("{name}.json"))
    }
}

/// Vocabulary over the knowledge base, the dialogues, and their gold
/// responses. Detection domain tags are always included.
pub fn pipeline_vocab(kb: &KnowledgeBase, dialogues: &[DialogueLog], min_freq: usize) -> Vocab {
    let mut texts: Vec<String> = Vec::new();
    for s in kb.snippets() {
        texts.push(s.domain.clone());
        texts.push(s.display_entity().to_string());
        texts.push(s.question.clone());
        texts.push(s.answer.clone());
    }
    for d in dialogues {
        texts.extend(d.turns.iter().map(|t| t.text.clone()));
        texts.extend(d.gold_response().map(String::from));
    }
    for _ in 0..min_freq.max(1) {
        texts.extend(DETECTION_DOMAINS.iter().map(|d| d.to_string()));
    }
    build_vocab(&texts, min_freq)
}

fn fresh_model(cfg: &PipelineConfig, vocab: Vocab) -> Result<MiniModel> {
    MiniModel::new(cfg.model.model_config(cfg.train.seed), vocab)
}

pub fn train_detect_model(cfg: &PipelineConfig, kb: &KnowledgeBase, dialogues: &[DialogueLog]) -> Result<(MiniModel, TrainReport)> {
    let mut m = fresh_model(cfg, pipeline_vocab(kb, dialogues, cfg.model.vocab_min_freq))?;
    let report = train_detection(&mut m, dialogues, kb, &cfg.retrieval, &cfg.train.train_config())?;
    Ok((m, report))
}

pub fn train_rank_model(cfg: &PipelineConfig, kb: &KnowledgeBase, dialogues: &[DialogueLog]) -> Result<(MiniModel, TrainReport)> {
    let mut m = fresh_model(cfg, pipeline_vocab(kb, dialogues, cfg.model.vocab_min_freq))?;
    let report = train_rank(&mut m, dialogues, kb, &cfg.retrieval, &cfg.train.train_config(), cfg.train.negatives)?;
    Ok((m, report))
}

pub fn train_three_step_model(
    cfg: &PipelineConfig,
    kb: &KnowledgeBase,
    dialogues: &[DialogueLog],
) -> Result<(MiniModel, TrainReport)> {
    let mut m = fresh_model(cfg, pipeline_vocab(kb, dialogues, cfg.model.vocab_min_freq))?;
    let report = train_three_step(&mut m, dialogues, kb, &cfg.train.train_config(), cfg.train.negatives)?;
    Ok((m, report))
}

/// Trains one generator on `part` of the gold responses.
pub fn train_generator_model(
    cfg: &PipelineConfig,
    kb: &KnowledgeBase,
    dialogues: &[DialogueLog],
    part: ResponsePart,
    copy: bool,
) -> Result<(MiniModel, TrainReport)> {
    let mut m = fresh_model(cfg, pipeline_vocab(kb, dialogues, cfg.model.vocab_min_freq))?;
    let inputs = generation_inputs(dialogues, kb, part)?;
    if inputs.is_empty() {
        return Err(Error::Integrity("no knowledge-seeking dialogues with gold responses".into()));
    }
    let report = train_generator(&mut m, &inputs, copy, &cfg.loss, &cfg.train.train_config())?;
    Ok((m, report))
}

pub const DETECT: &str = "detect";
pub const RANK: &str = "select-rank";
pub const THREE_STEP: &str = "select-three-step";
pub const GENERATE: &str = "generate";
pub const GREETING: &str = "generate-greeting";

fn load_checkpoint(cfg: &PipelineConfig, name: &str, subtask: &'static str) -> Result<MiniModel> {
    let path = cfg.checkpoint(name);
    if !path.exists() {
        return Err(Error::MissingCheckpoint { subtask, path });
    }
    MiniModel::load(&path, None)
}

pub fn load_detector(cfg: &PipelineConfig) -> Result<MiniModel> {
    load_checkpoint(cfg, DETECT, "detect")
}

/// The selection models the configured mode needs.
#[derive(Debug, Clone)]
pub struct SelectionModels {
    pub rank: Option<MiniModel>,
    pub three_step: Option<MiniModel>,
}

impl SelectionModels {
    pub fn load(cfg: &PipelineConfig) -> Result<Self> {
        let needs_rank = cfg.selection != SelectionMode::ThreeStep;
        let needs_three = cfg.selection != SelectionMode::Rank;
        Ok(Self {
            rank: needs_rank.then(|| load_checkpoint(cfg, RANK, "select")).transpose()?,
            three_step: needs_three.then(|| load_checkpoint(cfg, THREE_STEP, "select")).transpose()?,
        })
    }

    pub fn select(&self, cfg: &PipelineConfig, dialogue: &DialogueLog, kb: &KnowledgeBase) -> Result<SelectionResult> {
        let missing = |what: &str| Error::Contract(format!("{what} selection model not loaded"));
        match cfg.selection {
            SelectionMode::Rank => {
                let m = self.rank.as_ref().ok_or_else(|| missing("ranking"))?;
                RankScorer::new(m, dialogue, kb, &cfg.retrieval).selection()
            }
            SelectionMode::ThreeStep => three_step_select(self.three_step.as_ref().ok_or_else(|| missing("cascade"))?, dialogue, kb),
            SelectionMode::Ensemble => {
                let r = self.rank.as_ref().ok_or_else(|| missing("ranking"))?;
                let t = self.three_step.as_ref().ok_or_else(|| missing("cascade"))?;
                let a = RankScorer::new(r, dialogue, kb, &cfg.retrieval);
                let b = ThreeStepScorer { model: t, dialogue, kb };
                Ok(ensemble_select(&a, &b, kb)?.selection)
            }
        }
    }
}

/// The response generator, plus the greeting generator when `srg` is on.
#[derive(Debug, Clone)]
pub struct GenerationModels {
    pub generator: MiniModel,
    pub greeting: Option<MiniModel>,
}

impl GenerationModels {
    pub fn load(cfg: &PipelineConfig) -> Result<Self> {
        Ok(Self {
            generator: load_checkpoint(cfg, GENERATE, "generate")?,
            greeting: cfg.srg.then(|| load_checkpoint(cfg, GREETING, "generate")).transpose()?,
        })
    }

    pub fn generate(
        &self,
        cfg: &PipelineConfig,
        dialogue: &DialogueLog,
        answer: &str,
    ) -> Result<crate::generation::GenerationOutput> {
        let input = GenerationInput::from_dialogue(dialogue, answer, None);
        let greeting = if cfg.srg { self.greeting.as_ref() } else { None };
        generate(&self.generator, greeting, &input, answer, &cfg.generation())
    }
}

/// Every model the configured pipeline needs.
#[derive(Debug, Clone)]
pub struct PipelineModels {
    pub detect: MiniModel,
    pub selection: SelectionModels,
    pub generation: GenerationModels,
}

impl PipelineModels {
    /// Loads the checkpoints under `cfg.paths.checkpoints`; the first
    /// missing one is reported with its subtask.
    pub fn load(cfg: &PipelineConfig) -> Result<Self> {
        Ok(Self {
            detect: load_detector(cfg)?,
            selection: SelectionModels::load(cfg)?,
            generation: GenerationModels::load(cfg)?,
        })
    }

    pub fn select(&self, cfg: &PipelineConfig, dialogue: &DialogueLog, kb: &KnowledgeBase) -> Result<SelectionResult> {
        self.selection.select(cfg, dialogue, kb)
    }

    pub fn generate(
        &self,
        cfg: &PipelineConfig,
        dialogue: &DialogueLog,
        answer: &str,
    ) -> Result<crate::generation::GenerationOutput> {
        self.generation.generate(cfg, dialogue, answer)
    }
}

/// One dialogue's output. A non-knowledge-seeking turn carries `target`
/// only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineRecord {
    pub target: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub knowledge: Option<Vec<KnowledgeKey>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub scores: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub response: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub candidates: Option<Vec<CandidateScore>>,
}

pub fn run_dialogue(
    models: &PipelineModels,
    cfg: &PipelineConfig,
    kb: &KnowledgeBase,
    dialogue: &DialogueLog,
) -> Result<PipelineRecord> {
    let det = detect(&models.detect, &format_detection_input(dialogue, kb, &cfg.retrieval))?;
    if !det.target {
        return Ok(PipelineRecord {
            target: false,
            knowledge: None,
            scores: None,
            response: None,
            candidates: None,
        });
    }
    let sel = models.select(cfg, dialogue, kb)?;
    let gen = models.generate(cfg, dialogue, &sel.chosen.answer)?;
    let top = sel.output();
    Ok(PipelineRecord {
        target: true,
        knowledge: Some(top.knowledge),
        scores: Some(top.scores),
        response: Some(gen.response),
        candidates: Some(gen.candidates),
    })
}

pub fn run_pipeline(
    models: &PipelineModels,
    cfg: &PipelineConfig,
    kb: &KnowledgeBase,
    dialogues: &[DialogueLog],
) -> Result<Vec<PipelineRecord>> {
    dialogues.iter().map(|d| run_dialogue(models, cfg, kb, d)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub detection: MetricReport,
    /// Over knowledge-seeking dialogues.
    pub selection: SelectionEval,
    /// Over knowledge-seeking dialogues, generating from the gold snippet.
    pub generation: MetricReport,
}

/// Scores each subtask in isolation on labelled dialogues.
pub fn evaluate(
    models: &PipelineModels,
    cfg: &PipelineConfig,
    kb: &KnowledgeBase,
    dialogues: &[DialogueLog],
) -> Result<EvalReport> {
    let prf = detection::evaluate_detection(&models.detect, dialogues, kb, &cfg.retrieval)?;
    let mut preds = Vec::new();
    let mut golds = Vec::new();
    let mut pairs = Vec::new();
    for d in dialogues {
        let (Some(true), Some(gold)) = (d.target(), d.gold_knowledge()) else {
            continue;
        };
        preds.push(models.select(cfg, d, kb)?);
        golds.push(gold.clone());
        if let Some(reference) = d.gold_response() {
            let snippet = kb
                .get(gold)
                .ok_or_else(|| Error::Integrity(format!("gold {gold} not in knowledge base")))?;
            let out = models.generate(cfg, d, &snippet.answer)?;
            pairs.push((tokenize(&out.response).tokens, tokenize(reference).tokens));
        }
    }
    Ok(EvalReport {
        detection: MetricReport::default().with_prf(prf),
        selection: evaluate_selection(&preds, &golds)?,
        generation: MetricReport::default().with_text(&pairs),
    })
}
