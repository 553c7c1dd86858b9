//! Generates the ambiguous toy translation corpus and writes it to a directory.
//!
//! ```text
//! cargo run --example toy_corpus -- /tmp/toy
//! ```

use std::path::PathBuf;

use hardgate::datagen::{generate_corpus, make_batches, ToyGrammar, DEFAULT_MAX_TOKENS};

fn main() -> hardgate::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("hardgate-toy"));

    let grammar = ToyGrammar::with_ambiguity(50, 0.7, 4, 12, 0)?;
    println!("source s0 prefers its top target with p = {:.2}", grammar.top_probability(0));

    let corpus = generate_corpus(&grammar, 5000, 0)?;
    println!(
        "{} train / {} valid / {} test pairs, {} vocabulary entries",
        corpus.train.len(),
        corpus.valid.len(),
        corpus.test.len(),
        corpus.vocab.len()
    );
    for pair in corpus.train.iter().take(3) {
        println!("  {}  =>  {}", pair.source.join(" "), pair.target.join(" "));
    }

    let set = make_batches(&corpus.train, &corpus.vocab, DEFAULT_MAX_TOKENS, 0)?;
    println!("{} batches, {} tokens, {} pairs skipped", set.batches.len(), set.num_tokens(), set.skipped);

    corpus.write_dir(&out)?;
    println!("wrote {}", out.display());
    Ok(())
}
