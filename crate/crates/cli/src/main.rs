//! `bpdec`: pretraining, export, finetuning and analysis from the shell.
//!
//! Exit status: 0 on success, 1 on a usage error, 2 when the command itself fails.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use rand::Rng as _;

use bpdec_core::analysis::{attn_heatmap, flops_estimate, HeadSelect, HeatmapRequest, Phase};
use bpdec_core::bpdec::{pretrain_forward_loss, StepRngs};
use bpdec_core::config::{Config, ModelConfig};
use bpdec_core::data::{
    apply_mlm_masking, encode_corpus, mask_stats, read_corpus, synthetic, MaskedBatch, MaskingPolicy, Vocab, CLS, PAD,
    SEP,
};
use bpdec_core::rng::substream;
use bpdec_core::tensor::{finite_diff_check, DType};
use bpdec_core::train::{
    evaluate_cloze, export_encoder, finetune_classify, init_params, run_pretrain, Checkpoint, FinetuneTaskSpec,
    Objective, RunOutput, Trainer,
};
use bpdec_core::transformer::{Forward, ParamScope, Stack};
use bpdec_core::Error;

#[derive(Parser)]
#[command(name = "bpdec", version, about = "Encoder pretraining with a discardable decoder")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Pretrain from a corpus; writes metrics.txt, vocab.txt and checkpoints into --out.
    Pretrain(PretrainArgs),
    /// Finetune an encoder-only checkpoint on a `label<TAB>text` file.
    Finetune(FinetuneArgs),
    /// Drop the decoder and pretraining head from a checkpoint.
    ExportEncoder(ExportArgs),
    /// Top-1 accuracy of masked-token prediction on held-out text.
    EvalCloze(ClozeArgs),
    /// Analytic FLOP report for a config.
    Flops(FlopsArgs),
    /// Finite-difference check of the full pretraining loss.
    Gradcheck(GradcheckArgs),
    /// Empirical selection and replacement rates of the masking policy.
    MaskStats(MaskStatsArgs),
    /// Attention weights of one layer as CSV.
    AttnDump(AttnDumpArgs),
    /// Write the synthetic Markov corpus or the marker classification task.
    GenCorpus(GenCorpusArgs),
    /// Print a built-in config preset.
    Preset(PresetArgs),
}

#[derive(Args)]
struct PretrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// One training sequence per line.
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, value_enum, default_value_t = ObjectiveArg::Bpdec)]
    objective: ObjectiveArg,
    /// Continue from a checkpoint of an earlier run on the same corpus.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Override the configured step count.
    #[arg(long)]
    steps: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ObjectiveArg {
    Bpdec,
    Baseline,
}

#[derive(Args)]
struct FinetuneArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    /// `label<TAB>text` per line.
    #[arg(long)]
    task: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory for report.txt and the finetuned checkpoint.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    dev_frac: Option<f64>,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Output checkpoint file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ClozeArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct FlopsArgs {
    #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
    config: Option<PathBuf>,
    #[arg(long)]
    preset: Option<String>,
    #[arg(long, default_value = "pretrain")]
    phase: String,
    /// Defaults to the config's max_seq_len.
    #[arg(long)]
    seq_len: Option<usize>,
    /// Also write the report to this file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-4)]
    threshold: f64,
    #[arg(long, default_value_t = 1e-5)]
    step: f64,
    /// Refuse models larger than this many scalars (each costs two forwards).
    #[arg(long, default_value_t = 50_000)]
    max_scalars: usize,
}

#[derive(Args)]
struct MaskStatsArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 100_000)]
    tokens: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AttnDumpArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    /// Input text, whitespace tokenized.
    #[arg(long)]
    line: String,
    #[arg(long, value_enum, default_value_t = StackArg::Decoder)]
    stack: StackArg,
    /// 1-based; defaults to the last layer of the stack.
    #[arg(long)]
    layer: Option<usize>,
    /// 0-based head index, or `avg`.
    #[arg(long, default_value = "avg")]
    head: String,
    /// Keep the encoder's blocking in the decoder.
    #[arg(long)]
    no_gua: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// CSV output file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum StackArg {
    Encoder,
    Decoder,
}

#[derive(Args)]
struct GenCorpusArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 50_000)]
    lines: usize,
    /// Write the marker task for this symbol index instead of plain text.
    #[arg(long)]
    marker: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PresetArgs {
    /// tiny, desk, base-h256, base or large.
    name: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn preset(name: &str) -> Result<ModelConfig, Error> {
    Ok(match name {
        "tiny" => ModelConfig::tiny(),
        "desk" => ModelConfig::desk(),
        "base-h256" => ModelConfig::base_h256(),
        "base" => ModelConfig::base(),
        "large" => ModelConfig::large(),
        _ => {
            return Err(Error::InvalidRequest(format!(
                "unknown preset {name:?}; expected tiny, desk, base-h256, base or large"
            )))
        }
    })
}

fn load_config(path: Option<&Path>) -> Result<Config, Error> {
    match path {
        Some(p) => Config::load(p),
        None => Ok(Config::for_model(ModelConfig::desk())),
    }
}

fn write_or_print(text: &str, out: Option<&Path>) -> Result<(), Error> {
    print!("{text}");
    if let Some(p) = out {
        std::fs::write(p, text)?;
    }
    Ok(())
}

fn pretrain(a: PretrainArgs) -> Result<(), Error> {
    let lines = read_corpus(&a.corpus)?;
    let objective = match a.objective {
        ObjectiveArg::Bpdec => Objective::Bpdec,
        ObjectiveArg::Baseline => Objective::Baseline,
    };
    let out = RunOutput::new(&a.out)?;
    let mut trainer = match &a.resume {
        Some(path) => {
            let ckpt = Checkpoint::load(path)?;
            let vocab = Vocab::build(lines.iter().map(String::as_str), ckpt.config.model.vocab_size)?;
            let (seqs, _) = encode_corpus(lines.iter().map(String::as_str), &vocab, ckpt.config.train.seq_len)?;
            vocab.save(out.dir.join("vocab.txt"))?;
            info!("resuming from step {}", ckpt.step);
            Trainer::resume(ckpt, seqs, objective)?
        }
        None => {
            let mut config = load_config(a.config.as_deref())?;
            if let Some(s) = a.steps {
                config.train.steps = s;
            }
            let vocab = Vocab::build(lines.iter().map(String::as_str), config.model.vocab_size)?;
            let (seqs, truncated) = encode_corpus(lines.iter().map(String::as_str), &vocab, config.train.seq_len)?;
            if truncated > 0 {
                info!("{truncated} lines truncated to seq_len {}", config.train.seq_len);
            }
            vocab.save(out.dir.join("vocab.txt"))?;
            Trainer::new(config, seqs, a.seed, objective)?
        }
    };
    info!("training to step {}", trainer.config().train.steps);
    let records = run_pretrain(&mut trainer, Some(&out))?;
    match records.last() {
        Some(r) => println!("{r}"),
        None => println!("already at step {}", trainer.step_count()),
    }
    println!("checkpoint: {}", out.final_checkpoint().display());
    Ok(())
}

fn read_task(path: &Path) -> Result<Vec<(usize, String)>, Error> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let (label, body) = l
                .split_once('\t')
                .ok_or_else(|| Error::InvalidTask(format!("line {}: expected label<TAB>text", i + 1)))?;
            let label = label
                .trim()
                .parse()
                .map_err(|_| Error::InvalidTask(format!("line {}: bad label {label:?}", i + 1)))?;
            Ok((label, body.to_string()))
        })
        .collect()
}

fn finetune(a: FinetuneArgs) -> Result<(), Error> {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let vocab = Vocab::load(&a.vocab)?;
    let examples = read_task(&a.task)?;
    let defaults = FinetuneTaskSpec::default();
    let spec = FinetuneTaskSpec {
        num_labels: examples.iter().map(|e| e.0 + 1).max().unwrap_or(2).max(2),
        epochs: a.epochs.unwrap_or(defaults.epochs),
        learning_rate: a.learning_rate.unwrap_or(defaults.learning_rate),
        batch_size: a.batch_size.unwrap_or(defaults.batch_size),
        seq_len: ckpt.config.train.seq_len,
        dev_frac: a.dev_frac.unwrap_or(defaults.dev_frac),
    };
    let r = finetune_classify(&ckpt, &vocab, &examples, &spec, a.seed)?;
    let report = format!(
        "dev_accuracy={:.6}\ndev_examples={}\nsignature={}\n",
        r.dev_accuracy,
        r.dev_examples,
        r.signature.digest()
    );
    print!("{report}");
    if let Some(dir) = a.out {
        std::fs::create_dir_all(&dir)?;
        std::fs::write(dir.join("report.txt"), &report)?;
        let tuned = Checkpoint {
            params: r.params,
            adam: None,
            rngs: Default::default(),
            stream: None,
            ..ckpt
        };
        tuned.save(dir.join("finetuned.ckpt"))?;
    }
    Ok(())
}

fn export(a: ExportArgs) -> Result<(), Error> {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let exported = export_encoder(&ckpt)?;
    exported.save(&a.out)?;
    println!(
        "exported {} tensors ({} scalars) to {}",
        exported.params.len(),
        exported.params.num_scalars(),
        a.out.display()
    );
    Ok(())
}

fn cloze(a: ClozeArgs) -> Result<(), Error> {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let vocab = Vocab::load(&a.vocab)?;
    let lines = read_corpus(&a.corpus)?;
    let (seqs, _) = encode_corpus(lines.iter().map(String::as_str), &vocab, ckpt.config.train.seq_len)?;
    let r = evaluate_cloze(&ckpt, &seqs, a.seed)?;
    println!("masked={} correct={} accuracy={:.6}", r.masked, r.correct, r.accuracy());
    Ok(())
}

fn flops(a: FlopsArgs) -> Result<(), Error> {
    let model = match (&a.config, &a.preset) {
        (Some(p), _) => Config::load(p)?.model,
        (None, Some(name)) => preset(name)?,
        (None, None) => unreachable!("clap requires one of them"),
    };
    let phase: Phase = a.phase.parse()?;
    let report = flops_estimate(&model, phase, a.seq_len.unwrap_or(model.max_seq_len));
    write_or_print(&report.to_text(), a.out.as_deref())
}

/// A small corrupted batch over the config's vocabulary for the gradient check.
fn gradcheck_batch(model: &ModelConfig, seq_len: usize, seed: u64) -> Result<MaskedBatch, Error> {
    let mut data = substream(seed, "data");
    let mut masking = substream(seed, "masking");
    let policy = MaskingPolicy {
        select_rate: 0.4,
        ..Default::default()
    };
    let rows = (0..2)
        .map(|b| {
            let words = seq_len - 2 - b;
            let mut ids = vec![CLS];
            ids.extend((0..words).map(|_| rand_word(&mut data, model.vocab_size)));
            ids.push(SEP);
            ids.resize(seq_len, PAD);
            apply_mlm_masking(&ids, model.vocab_size, &policy, &mut masking)
        })
        .collect::<Result<Vec<_>, _>>()?;
    MaskedBatch::from_rows(&rows)
}

fn rand_word(rng: &mut bpdec_core::rng::Rng, vocab_size: usize) -> usize {
    rng.random_range(bpdec_core::data::NUM_RESERVED..vocab_size)
}

fn gradcheck(a: GradcheckArgs) -> Result<bool, Error> {
    let mut config = Config::load(&a.config)?;
    config.model.precision = DType::F64;
    let model = config.model;
    let params = init_params(&model, ParamScope::Full, a.seed)?;
    if params.num_scalars() > a.max_scalars {
        return Err(Error::InvalidRequest(format!(
            "model has {} scalars, above --max-scalars {}",
            params.num_scalars(),
            a.max_scalars
        )));
    }
    let seq_len = model.max_seq_len.clamp(4, 8);
    let batch = gradcheck_batch(&model, seq_len, a.seed)?;
    let report = finite_diff_check(
        |store, g| {
            let mut fwd = Forward::new(g, store, &model, seq_len);
            pretrain_forward_loss(&mut fwd, &batch, &mut StepRngs::new(a.seed)).map(|(l, _)| l)
        },
        &params,
        a.step,
    )?;
    println!("checked={}", report.checked);
    println!("max_rel_error={:e}", report.max_rel_error);
    for o in &report.worst {
        println!("worst {o:?}");
    }
    let pass = report.passes(a.threshold);
    println!("threshold={:e} result={}", a.threshold, if pass { "PASS" } else { "FAIL" });
    Ok(pass)
}

fn mask_stats_cmd(a: MaskStatsArgs) -> Result<(), Error> {
    let config = load_config(a.config.as_deref())?;
    let lines = read_corpus(&a.corpus)?;
    let vocab = Vocab::build(lines.iter().map(String::as_str), config.model.vocab_size)?;
    let (seqs, _) = encode_corpus(lines.iter().map(String::as_str), &vocab, config.train.seq_len)?;
    let r = mask_stats(&seqs, vocab.len(), &MaskingPolicy::default(), a.seed, a.tokens)?;
    write_or_print(&r.to_text(), a.out.as_deref())
}

fn attn_dump(a: AttnDumpArgs) -> Result<(), Error> {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let vocab = Vocab::load(&a.vocab)?;
    let stack = match a.stack {
        StackArg::Encoder => Stack::Encoder,
        StackArg::Decoder => Stack::Decoder,
    };
    let depth = match stack {
        Stack::Encoder => ckpt.config.model.encoder_layers,
        Stack::Decoder => ckpt.config.model.decoder_layers,
    };
    let head = match a.head.as_str() {
        "avg" => HeadSelect::Average,
        h => HeadSelect::Head(
            h.parse()
                .map_err(|_| Error::InvalidRequest(format!("--head must be a number or avg, got {h:?}")))?,
        ),
    };
    let req = HeatmapRequest {
        stack,
        layer: a.layer.unwrap_or(depth),
        head,
        apply_gua: !a.no_gua,
        seed: a.seed,
    };
    let dump = attn_heatmap(&ckpt, &vocab, &a.line, &req)?;
    dump.write_csv(&a.out)?;
    println!("wrote {} layer {} to {}", stack.name(), req.layer, a.out.display());
    Ok(())
}

fn gen_corpus(a: GenCorpusArgs) -> Result<(), Error> {
    let text = match a.marker {
        Some(m) => {
            if m >= synthetic::SYMBOLS {
                return Err(Error::InvalidRequest(format!("marker must be below {}", synthetic::SYMBOLS)));
            }
            synthetic::marker_task(a.seed, a.lines, m)
                .into_iter()
                .map(|(l, t)| format!("{l}\t{t}\n"))
                .collect::<String>()
        }
        None => synthetic::markov_corpus(a.seed, a.lines)
            .into_iter()
            .map(|l| l + "\n")
            .collect(),
    };
    std::fs::write(&a.out, text)?;
    Ok(())
}

fn preset_cmd(a: PresetArgs) -> Result<(), Error> {
    let config = Config::for_model(preset(&a.name)?);
    write_or_print(&config.to_text(), a.out.as_deref())
}

fn run(cli: Cli) -> Result<bool, Error> {
    match cli.command {
        Command::Pretrain(a) => pretrain(a),
        Command::Finetune(a) => finetune(a),
        Command::ExportEncoder(a) => export(a),
        Command::EvalCloze(a) => cloze(a),
        Command::Flops(a) => flops(a),
        Command::Gradcheck(a) => return gradcheck(a),
        Command::MaskStats(a) => mask_stats_cmd(a),
        Command::AttnDump(a) => attn_dump(a),
        Command::GenCorpus(a) => gen_corpus(a),
        Command::Preset(a) => preset_cmd(a),
    }
    .map(|()| true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("BPDEC_LOG_LEVEL", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
