//! Builds a subword vocabulary from a few sentences and shows how text is
//! split, encoded to a fixed length and decoded again.
//!
//! cargo run --example tokenize -- "some text to tokenize"

use misinfo::tokenizer::{build_vocab, encode};

const CORPUS: [&str; 6] = [
    "Breaking: police confirm two hostages released from the cafe",
    "Unconfirmed reports of a second gunman near parliament",
    "Officials deny the claim that the airport was closed",
    "Hostages seen leaving the building, police say",
    "Reports of gunfire near the war memorial are false",
    "The airport remains open according to officials",
];

fn main() -> misinfo::Result<()> {
    let text = std::env::args().nth(1).unwrap_or_else(|| "Police deny reports of hostages at the airport".into());
    let vocab = build_vocab(&CORPUS, 400, 1, true)?;
    println!("vocabulary: {} entries", vocab.len());

    let ids = vocab.tokenize(&text);
    let pieces: Vec<&str> = ids.iter().map(|&i| vocab.token(i).unwrap_or("?")).collect();
    println!("pieces: {}", pieces.join(" "));

    let seq = encode(&text, &vocab, 16)?;
    println!("ids:    {:?}", seq.ids);
    println!("mask:   {:?}", seq.attention_mask);
    println!("decoded: {}", vocab.decode(&ids));
    Ok(())
}
