//! Message embeddings: tokenization, TF-IDF weights, weighted keyword
//! averages and nearest-keyword lookup.
//!
//! `cargo run --example text_embed`

use shmm::text::{embed_message, nearest_keywords, parse_keyword_table, tokenize, IdfVariant};

const VECTORS: &str = "\
coffee 0.9 0.1 0.0 0.0
latte 0.8 0.3 0.0 0.1
beach 0.0 0.9 0.4 0.0
surf 0.1 0.7 0.7 0.0
lakers 0.0 0.0 0.2 0.98
game 0.1 0.0 0.3 0.9
";

fn main() -> shmm::Result<()> {
    let mut table = parse_keyword_table(VECTORS.as_bytes(), "inline")?;
    let messages = [
        "Morning #coffee and a latte @barista http://t.co/x",
        "Surf's up at the beach!",
        "Lakers game tonight, who's watching the game?",
        "just landed",
    ];
    let tokens: Vec<Vec<String>> = messages.iter().map(|m| tokenize(m)).collect();
    table.fit_idf(&tokens, IdfVariant::Smooth)?;
    for word in table.vocabulary() {
        println!("idf({word}) = {:.4}", table.idf_of(word).unwrap());
    }
    for (message, toks) in messages.iter().zip(&tokens) {
        println!("\n{message:?}\n  tokens: {toks:?}");
        match embed_message(toks, &table) {
            Ok(e) => {
                let near: Vec<String> = nearest_keywords(&e, &table, 2)?
                    .into_iter()
                    .map(|(w, c)| format!("{w} ({c:.3})"))
                    .collect();
                println!("  embedding: {e:.3?}\n  nearest: {}", near.join(", "));
            }
            Err(err) => println!("  dropped: {err}"),
        }
    }
    Ok(())
}
