//! The `hybrid` command line.
//!
//! Exit codes: 0 success, 1 validation or usage error, 2 I/O error.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::json;

use crate::corpus::{pack_sequences, read_records, write_records_to, CorpusError, PackItem, DEFAULT_PACK_CAPACITY};
use crate::delay::{apply_delay, invert_delay, DelayGrid};
use crate::dialog::{ContextConfig, TurnRecord};
use crate::duplex::{run, DetectorSuite, TableSuite, TraceRecord};
use crate::interleaver::{check_schedule, deinterleave, interleave, HybridRecord, InterleaveConfig};
use crate::loss::{build_response_mask, hybrid_nll, LossMask, PositionPrediction};
use crate::metrics::{format_report, metric_report, DtwNormalization, MetricRecord};
use crate::model::encode::encode;
use crate::model::{
    generate, grad_check, load_checkpoint, save_checkpoint, Decode, Limits, ModelConfig, ModelError, Optimizer,
    Parameters, StageConfig, Trainable, Trainer,
};
use crate::synthetic::{
    build_example, group_dialogs, overfit_vocab, speaker_table, synthesize, DialogSample, SpeakerRecord, SyntheticConfig,
};
use crate::token_space::VocabSpec;

#[derive(Debug)]
pub enum CliError {
    Invalid(String),
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Invalid(_) => 1,
            CliError::Io(_) => 2,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Invalid(m) | CliError::Io(m) => m,
        }
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        if e.is_io() {
            CliError::Io(e.to_string())
        } else {
            CliError::Invalid(e.to_string())
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Io(m) => CliError::Io(m),
            other => CliError::Invalid(other.to_string()),
        }
    }
}

fn invalid(e: impl std::fmt::Display) -> CliError {
    CliError::Invalid(e.to_string())
}

type CliResult = Result<(), CliError>;

#[derive(Debug, Parser)]
#[command(name = "hybrid", version, about = "Interleaved text/audio token toolkit")]
struct Cli {
    /// Seed for every stochastic step.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Interleave text id lists and frame lists into hybrid records.
    Interleave(InterleaveArgs),
    /// Split hybrid records back into text and frame files.
    Deinterleave(DeinterleaveArgs),
    /// Shift frame lists into delay grids.
    Delay(DelayArgs),
    /// Recover frame lists from delay grids.
    Undelay(DelayArgs),
    /// Score hybrid records against prediction dumps.
    Loss(LossArgs),
    /// Pack records into fixed-capacity sequences.
    Pack(PackArgs),
    /// Write the synthetic dialog corpus and speaker table.
    Synth(SynthArgs),
    /// Train the toy model; writes a checkpoint and a loss curve.
    TrainToy(TrainArgs),
    /// Decode responses for prompt dialogs.
    Generate(GenerateArgs),
    /// Compare analytic and finite-difference gradients.
    Gradcheck(GradcheckArgs),
    /// Replay a duplex event trace and print the action log.
    DuplexSim(DuplexArgs),
    /// Aggregate paired metric records into a report.
    Metrics(MetricsArgs),
}

#[derive(Debug, Args)]
struct Schedule {
    /// Text tokens per block.
    #[arg(long)]
    n: usize,
    /// Audio frames per block.
    #[arg(long)]
    m: usize,
}

impl Schedule {
    fn config(&self) -> Result<InterleaveConfig, CliError> {
        InterleaveConfig::new(self.n, self.m).map_err(invalid)
    }
}

#[derive(Debug, Args)]
struct InterleaveArgs {
    /// Line-delimited text id lists.
    #[arg(long)]
    text: PathBuf,
    /// Line-delimited frame lists, one sequence per line.
    #[arg(long)]
    frames: PathBuf,
    #[command(flatten)]
    schedule: Schedule,
    /// Vocabulary (or model) config used to validate ids.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output file (stdout when absent).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct DeinterleaveArgs {
    /// Hybrid records.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    text_out: PathBuf,
    #[arg(long)]
    frames_out: PathBuf,
}

#[derive(Debug, Args)]
struct DelayArgs {
    /// Frame lists (delay) or grids (undelay).
    #[arg(long)]
    input: PathBuf,
    /// Vocabulary config providing the pad ids (delay only).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MaskKind {
    /// Score every position.
    All,
    /// Score assistant-response content only.
    Response,
}

#[derive(Debug, Args)]
struct LossArgs {
    #[arg(long)]
    records: PathBuf,
    /// One line per record: the list of per-position predictions.
    #[arg(long)]
    predictions: PathBuf,
    #[arg(long)]
    config: PathBuf,
    #[arg(long, value_enum, default_value_t = MaskKind::All)]
    mask: MaskKind,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PackArgs {
    /// Records with `id` and `length`.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = DEFAULT_PACK_CAPACITY)]
    capacity: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    corpus_out: PathBuf,
    #[arg(long)]
    speakers_out: PathBuf,
    #[arg(long, default_value_t = 16)]
    prompts: usize,
    #[arg(long, default_value_t = 2)]
    voices: usize,
    #[arg(long, default_value_t = 8)]
    frames: usize,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum TrainableKind {
    AdapterOnly,
    AdapterBackbone,
    All,
}

#[derive(Debug, Args)]
struct SpeakerArgs {
    /// Speaker table (`id`, `vector` per line).
    #[arg(long)]
    speakers: Option<PathBuf>,
    /// Leave speaker vectors out of the context.
    #[arg(long)]
    no_speakers: bool,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Model config (TOML). Defaults to the tiny overfit model.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dialog transcript; the synthetic set is used when absent.
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[command(flatten)]
    speakers: SpeakerArgs,
    #[command(flatten)]
    schedule: Schedule,
    /// Continue from these weights instead of a fresh initialization.
    #[arg(long)]
    init: Option<PathBuf>,
    #[arg(long, default_value_t = 2000)]
    steps: usize,
    #[arg(long, default_value_t = 0.3)]
    lr: f64,
    #[arg(long, default_value_t = 8)]
    batch_size: usize,
    #[arg(long, value_enum, default_value_t = OptimizerKind::Sgd)]
    optimizer: OptimizerKind,
    #[arg(long, value_enum, default_value_t = TrainableKind::All)]
    trainable: TrainableKind,
    #[arg(long)]
    checkpoint_out: PathBuf,
    /// Tab-separated `step loss` file.
    #[arg(long)]
    curve_out: PathBuf,
}

#[derive(Debug, Args)]
struct GenerateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Prompt dialogs; a trailing assistant turn only selects the voice.
    /// The synthetic set is used when absent.
    #[arg(long)]
    prompts: Option<PathBuf>,
    #[command(flatten)]
    speakers: SpeakerArgs,
    /// Agent voice id overriding the prompts' choice.
    #[arg(long)]
    agent: Option<String>,
    #[command(flatten)]
    schedule: Schedule,
    /// Sample with this temperature instead of greedy decoding.
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long, default_value_t = 64)]
    max_text: usize,
    #[arg(long, default_value_t = 128)]
    max_frames: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    /// Model config (TOML). Defaults to 2 layers, width 32, 4 codebooks.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 1e-5)]
    epsilon: f64,
    #[arg(long, default_value_t = 256)]
    coords: usize,
    /// Exit with status 1 when the worst relative error exceeds this.
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
}

#[derive(Debug, Args)]
struct DuplexArgs {
    /// Event trace (`kind`, `segment`, `payload?` per line).
    #[arg(long)]
    trace: PathBuf,
    /// Detector tables (JSON) used for payloads missing from the trace.
    #[arg(long)]
    suite: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum DtwNormKind {
    None,
    PathLength,
}

#[derive(Debug, Args)]
struct MetricsArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum, default_value_t = DtwNormKind::None)]
    dtw_norm: DtwNormKind,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, bytes: &[u8]) -> CliResult {
    std::fs::write(path, bytes).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn emit(out: &Option<PathBuf>, stdout: &mut dyn Write, bytes: &[u8]) -> CliResult {
    match out {
        Some(path) => write_file(path, bytes),
        None => stdout.write_all(bytes).map_err(|e| CliError::Io(e.to_string())),
    }
}

fn jsonl<T: Serialize>(records: &[T]) -> Vec<u8> {
    let mut buf = Vec::new();
    write_records_to(&mut buf, records).expect("writing to memory");
    buf
}

fn load<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, CliError> {
    Ok(read_records(path)?)
}

/// Accepts a vocabulary file or a model file with a `[vocab]` table.
fn load_vocab(path: &Path) -> Result<VocabSpec, CliError> {
    let text = read_text(path)?;
    match VocabSpec::from_toml(&text) {
        Ok(v) => Ok(v),
        Err(vocab_err) => match ModelConfig::from_toml(&text) {
            Ok(cfg) => Ok(cfg.vocab),
            Err(_) => Err(invalid(format!("{}: {vocab_err}", path.display()))),
        },
    }
}

fn default_model_config(seed: u64) -> ModelConfig {
    let mut cfg = ModelConfig::tiny(overfit_vocab());
    cfg.seed = seed;
    cfg
}

fn load_model_config(path: &Option<PathBuf>, seed: u64) -> Result<ModelConfig, CliError> {
    let mut cfg = match path {
        Some(p) => ModelConfig::from_toml(&read_text(p)?)?,
        None => default_model_config(seed),
    };
    cfg.seed = seed;
    Ok(cfg)
}

/// Dialogs and speakers from files, or the synthetic set.
fn dialogs(
    corpus: &Option<PathBuf>,
    prompts_only: bool,
    speakers: &SpeakerArgs,
    vocab: &VocabSpec,
    seed: u64,
) -> Result<(Vec<DialogSample>, BTreeMap<String, Vec<f64>>), CliError> {
    let synth = || synthesize(&SyntheticConfig { seed, ..Default::default() }, vocab);
    let samples = match corpus {
        Some(path) => {
            let records: Vec<TurnRecord> = load(path)?;
            group_dialogs(&records, prompts_only)?
        }
        None => synth().0,
    };
    let table: Vec<SpeakerRecord> = match (&speakers.speakers, corpus) {
        (Some(path), _) => load(path)?,
        (None, None) => synth().1,
        (None, Some(_)) => Vec::new(),
    };
    Ok((samples, speaker_table(&table)))
}

fn context_config(speakers: &SpeakerArgs, max_seq: usize) -> ContextConfig {
    ContextConfig { inject_speakers: !speakers.no_speakers, max_seq, reserve: 0, system_prompt: false }
}

fn cmd_interleave(a: &InterleaveArgs, stdout: &mut dyn Write) -> CliResult {
    let cfg = a.schedule.config()?;
    let texts: Vec<Vec<u32>> = load(&a.text)?;
    let frames: Vec<Vec<Vec<u32>>> = load(&a.frames)?;
    if texts.len() != frames.len() {
        return Err(invalid(format!("{} text lines but {} frame lines", texts.len(), frames.len())));
    }
    let vocab = a.config.as_deref().map(load_vocab).transpose()?;
    let mut out = Vec::with_capacity(texts.len());
    for (line, (t, f)) in texts.iter().zip(&frames).enumerate() {
        let seq = interleave(t, f, cfg);
        if let Some(v) = &vocab {
            for tok in &seq.items {
                v.check_token(tok).map_err(|e| invalid(format!("line {}: {e}", line + 1)))?;
            }
        }
        out.push(HybridRecord::from_seq(&seq, cfg));
    }
    emit(&a.out, stdout, &jsonl(&out))
}

fn cmd_deinterleave(a: &DeinterleaveArgs) -> CliResult {
    let records: Vec<HybridRecord> = load(&a.input)?;
    let mut texts = Vec::with_capacity(records.len());
    let mut frames = Vec::with_capacity(records.len());
    for (line, rec) in records.iter().enumerate() {
        let at = |e: &dyn std::fmt::Display| invalid(format!("line {}: {e}", line + 1));
        let seq = rec.to_seq().map_err(|e| at(&e))?;
        check_schedule(&seq, rec.config().map_err(|e| at(&e))?).map_err(|e| at(&e))?;
        let (t, f) = deinterleave(&seq);
        texts.push(t);
        frames.push(f);
    }
    write_file(&a.text_out, &jsonl(&texts))?;
    write_file(&a.frames_out, &jsonl(&frames))
}

fn cmd_delay(a: &DelayArgs, stdout: &mut dyn Write) -> CliResult {
    let path = a.config.as_ref().ok_or_else(|| invalid("delay needs --config for the pad ids"))?;
    let vocab = load_vocab(path)?;
    let frames: Vec<Vec<Vec<u32>>> = load(&a.input)?;
    let grids = frames
        .iter()
        .enumerate()
        .map(|(line, f)| apply_delay(f, &vocab.pad_audio_id).map_err(|e| invalid(format!("line {}: {e}", line + 1))))
        .collect::<Result<Vec<_>, _>>()?;
    emit(&a.out, stdout, &jsonl(&grids))
}

fn cmd_undelay(a: &DelayArgs, stdout: &mut dyn Write) -> CliResult {
    let grids: Vec<DelayGrid> = load(&a.input)?;
    let frames = grids
        .iter()
        .enumerate()
        .map(|(line, g)| invert_delay(g).map_err(|e| invalid(format!("line {}: {e}", line + 1))))
        .collect::<Result<Vec<_>, _>>()?;
    emit(&a.out, stdout, &jsonl(&frames))
}

fn cmd_loss(a: &LossArgs, stdout: &mut dyn Write) -> CliResult {
    let vocab = load_vocab(&a.config)?;
    let records: Vec<HybridRecord> = load(&a.records)?;
    let preds: Vec<Vec<PositionPrediction>> = load(&a.predictions)?;
    if records.len() != preds.len() {
        return Err(invalid(format!("{} records but {} prediction lines", records.len(), preds.len())));
    }
    let mut report = String::from("record\ttotal\tscored\tmean\n");
    let (mut total, mut scored) = (0.0, 0);
    for (line, (rec, pred)) in records.iter().zip(&preds).enumerate() {
        let at = |e: &dyn std::fmt::Display| invalid(format!("record {}: {e}", line + 1));
        let seq = rec.to_seq().map_err(|e| at(&e))?;
        let mask = match a.mask {
            MaskKind::All => LossMask::all(seq.len()),
            MaskKind::Response => build_response_mask(&seq, &vocab).map_err(|e| at(&e))?,
        };
        let r = hybrid_nll(pred, &seq, &mask, &vocab).map_err(|e| at(&e))?;
        report.push_str(&format!("{}\t{:.12}\t{}\t{:.12}\n", line + 1, r.total, r.scored, r.mean()));
        total += r.total;
        scored += r.scored;
    }
    let mean = if scored == 0 { 0.0 } else { total / scored as f64 };
    report.push_str(&format!("all\t{total:.12}\t{scored}\t{mean:.12}\n"));
    emit(&a.out, stdout, report.as_bytes())
}

fn cmd_pack(a: &PackArgs, stdout: &mut dyn Write) -> CliResult {
    let items: Vec<PackItem> = load(&a.input)?;
    let packs = pack_sequences(&items, a.capacity)?;
    emit(&a.out, stdout, &jsonl(&packs))
}

fn cmd_synth(a: &SynthArgs, seed: u64) -> CliResult {
    let cfg = SyntheticConfig { prompts: a.prompts, voices: a.voices, frames: a.frames, seed, ..Default::default() };
    if cfg.prompts == 0 || cfg.voices == 0 {
        return Err(invalid("prompts and voices must be at least 1"));
    }
    let (samples, speakers) = synthesize(&cfg, &overfit_vocab());
    let records: Vec<TurnRecord> = samples.iter().flat_map(DialogSample::to_records).collect();
    write_file(&a.corpus_out, &jsonl(&records))?;
    write_file(&a.speakers_out, &jsonl(&speakers))
}

fn cmd_train(a: &TrainArgs, seed: u64, stdout: &mut dyn Write) -> CliResult {
    let params = match &a.init {
        Some(path) => load_checkpoint(path)?,
        None => Parameters::init(&load_model_config(&a.config, seed)?),
    };
    let cfg = a.schedule.config()?;
    let vocab = params.config.vocab.clone();
    let (samples, speakers) = dialogs(&a.corpus, false, &a.speakers, &vocab, seed)?;
    let ccfg = context_config(&a.speakers, params.config.max_seq);
    let data = samples
        .iter()
        .map(|s| {
            let ex = build_example(s, &speakers, &vocab, ccfg).map_err(|e| invalid(format!("dialog {}: {e}", s.id)))?;
            let enc = encode(&ex, &vocab, cfg)?;
            if enc.len() > params.config.max_seq {
                return Err(invalid(format!("dialog {}: {} positions exceed max_seq {}", s.id, enc.len(), params.config.max_seq)));
            }
            Ok(enc)
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let stage = StageConfig {
        trainable: match a.trainable {
            TrainableKind::AdapterOnly => Trainable::AdapterOnly,
            TrainableKind::AdapterBackbone => Trainable::AdapterBackbone,
            TrainableKind::All => Trainable::All,
        },
        lr: a.lr,
        steps: a.steps,
        batch_size: a.batch_size,
        optimizer: match a.optimizer {
            OptimizerKind::Sgd => Optimizer::Sgd,
            OptimizerKind::Adam => Optimizer::adam(),
        },
    };
    let mut trainer = Trainer::new(params, stage)?;
    let curve = trainer.fit(&data, seed, |_| {})?;
    save_checkpoint(&a.checkpoint_out, &trainer.params)?;
    let mut tsv = String::from("step\tloss\n");
    for (i, l) in curve.iter().enumerate() {
        tsv.push_str(&format!("{}\t{l:.9}\n", i + 1));
    }
    write_file(&a.curve_out, tsv.as_bytes())?;
    let last = curve.last().copied().unwrap_or(f64::NAN);
    writeln!(stdout, "trained {} steps on {} dialogs; final loss {last:.6}", curve.len(), data.len())
        .map_err(|e| CliError::Io(e.to_string()))
}

fn cmd_generate(a: &GenerateArgs, seed: u64, stdout: &mut dyn Write) -> CliResult {
    let params = load_checkpoint(&a.checkpoint)?;
    let cfg = a.schedule.config()?;
    let vocab = params.config.vocab.clone();
    let (samples, speakers) = dialogs(&a.prompts, true, &a.speakers, &vocab, seed)?;
    let ccfg = context_config(&a.speakers, params.config.max_seq);
    let decode = match a.temperature {
        Some(tau) => Decode::Temperature { tau, seed },
        None => Decode::Greedy,
    };
    let limits = Limits { max_text: a.max_text, max_frames: a.max_frames };
    let mut out = Vec::with_capacity(samples.len());
    for s in &samples {
        let mut s = s.clone();
        if let Some(agent) = &a.agent {
            s.response.speaker_ref = Some(agent.clone());
        }
        let ex = build_example(&s, &speakers, &vocab, ccfg).map_err(|e| invalid(format!("dialog {}: {e}", s.id)))?;
        let g = generate(&params, &ex.context, cfg, decode, limits)?;
        let mut rec = g.to_record(cfg);
        rec.extra.insert("dialog".into(), json!(s.id));
        out.push(rec);
    }
    emit(&a.out, stdout, &jsonl(&out))
}

fn cmd_gradcheck(a: &GradcheckArgs, seed: u64, stdout: &mut dyn Write) -> CliResult {
    let mut mcfg = load_model_config(&a.config, seed)?;
    if a.config.is_none() {
        mcfg.init_std = 0.1;
    }
    let params = Parameters::init(&mcfg);
    let vocab = params.config.vocab.clone();
    let cfg = InterleaveConfig::new(2, 6).map_err(invalid)?;
    let synth = SyntheticConfig { prompts: 2, voices: 1, frames: 4, speaker_dim: mcfg.speaker_dim, seed, ..Default::default() };
    let (samples, speakers) = synthesize(&synth, &vocab);
    let ccfg = ContextConfig { inject_speakers: true, max_seq: mcfg.max_seq, reserve: 0, system_prompt: false };
    let batch = samples
        .iter()
        .map(|s| encode(&build_example(s, &speaker_table(&speakers), &vocab, ccfg)?, &vocab, cfg))
        .collect::<Result<Vec<_>, ModelError>>()?;
    let r = grad_check(&params, &batch, cfg, a.epsilon, a.coords, seed)?;
    let worst = r.worst.as_ref().map_or("-".to_string(), |(i, name)| format!("{name}[{i}]"));
    writeln!(
        stdout,
        "max_rel_error\t{:.3e}\ncoordinates\t{}\nworst\t{worst}\nanalytic\t{:.12e}\nnumeric\t{:.12e}",
        r.max_rel_error, r.coordinates, r.worst_analytic, r.worst_numeric
    )
    .map_err(|e| CliError::Io(e.to_string()))?;
    if r.max_rel_error >= a.tolerance {
        return Err(invalid(format!("relative error {:.3e} exceeds tolerance {:.1e}", r.max_rel_error, a.tolerance)));
    }
    Ok(())
}

fn cmd_duplex(a: &DuplexArgs, stdout: &mut dyn Write) -> CliResult {
    let trace: Vec<TraceRecord> = load(&a.trace)?;
    let table: TableSuite = match &a.suite {
        Some(path) => serde_json::from_str(&read_text(path)?).map_err(|e| invalid(format!("{}: {e}", path.display())))?,
        None => TableSuite::default(),
    };
    let outcome = run(&trace, &DetectorSuite::from_table(&table)).map_err(invalid)?;
    emit(&a.out, stdout, &jsonl(&outcome.log))
}

fn cmd_metrics(a: &MetricsArgs, stdout: &mut dyn Write) -> CliResult {
    let records: Vec<MetricRecord> = load(&a.input)?;
    let norm = match a.dtw_norm {
        DtwNormKind::None => DtwNormalization::None,
        DtwNormKind::PathLength => DtwNormalization::PathLength,
    };
    let rows = metric_report(&records, norm).map_err(invalid)?;
    emit(&a.out, stdout, format_report(&rows).as_bytes())
}

fn dispatch(cli: &Cli, stdout: &mut dyn Write) -> CliResult {
    let seed = cli.seed;
    match &cli.command {
        Command::Interleave(a) => cmd_interleave(a, stdout),
        Command::Deinterleave(a) => cmd_deinterleave(a),
        Command::Delay(a) => cmd_delay(a, stdout),
        Command::Undelay(a) => cmd_undelay(a, stdout),
        Command::Loss(a) => cmd_loss(a, stdout),
        Command::Pack(a) => cmd_pack(a, stdout),
        Command::Synth(a) => cmd_synth(a, seed),
        Command::TrainToy(a) => cmd_train(a, seed, stdout),
        Command::Generate(a) => cmd_generate(a, seed, stdout),
        Command::Gradcheck(a) => cmd_gradcheck(a, seed, stdout),
        Command::DuplexSim(a) => cmd_duplex(a, stdout),
        Command::Metrics(a) => cmd_metrics(a, stdout),
    }
}

/// Parses `args` (including the program name), runs the command, and
/// returns the exit code.
pub fn run_cli<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = stdout.write_all(text.as_bytes());
                    0
                }
                _ => {
                    let _ = stderr.write_all(text.as_bytes());
                    1
                }
            };
        }
    };
    match dispatch(&cli, stdout) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {}", e.message());
            e.exit_code()
        }
    }
}
