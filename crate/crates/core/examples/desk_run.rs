//! Desk-scale pretraining on the synthetic Markov corpus.
//!
//! `cargo run --release -p bpdec-core --example desk_run -- [bpdec|baseline] [steps]`

use bpdec_core::config::{Config, ModelConfig};
use bpdec_core::data::{encode_corpus, synthetic, Vocab};
use bpdec_core::train::{evaluate_cloze, loss_windows, run_pretrain, Objective, Trainer};

fn main() -> bpdec_core::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let objective = match args.get(1).map(String::as_str) {
        Some("baseline") => Objective::Baseline,
        _ => Objective::Bpdec,
    };
    let steps: u64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(2000);
    let lines = synthetic::markov_corpus(1, 50_000);
    let heldout = synthetic::markov_corpus(2, 500);
    let mut config = Config::for_model(ModelConfig::desk());
    config.train.steps = steps;
    let vocab = Vocab::build(lines.iter().map(String::as_str), config.model.vocab_size)?;
    let seq_len = config.train.seq_len;
    let (seqs, _) = encode_corpus(lines.iter().map(String::as_str), &vocab, seq_len)?;
    let (held, _) = encode_corpus(heldout.iter().map(String::as_str), &vocab, seq_len)?;
    let t0 = std::time::Instant::now();
    let mut trainer = Trainer::new(config, seqs, 7, objective)?;
    let records = run_pretrain(&mut trainer, None)?;
    for r in records.iter().step_by((steps as usize / 20).max(1)) {
        println!("{r}");
    }
    let window = 100.min(records.len());
    let (first, last) = loss_windows(&records, window).unwrap();
    let cloze = evaluate_cloze(&trainer.checkpoint(), &held, 99)?;
    println!(
        "{:?}: {:.1}s first={first:.4} last={last:.4} ratio={:.3} cloze={:.4}",
        objective,
        t0.elapsed().as_secs_f64(),
        last / first,
        cloze.accuracy()
    );
    Ok(())
}
