//! Splits a long source file into budget-sized slices and flags the ones
//! that mention cryptography.

use camtax::corpus::{slice_program, CryptoKeywordSet, ProgramUnit};

fn main() {
    let mut source = String::new();
    for i in 0..400 {
        source.push_str(&format!("def helper_{i}(x):\n    return x * {i}\n"));
    }
    source.push_str("from Crypto.Cipher import AES\ncipher = AES.new(key, AES.MODE_ECB)\n");
    let unit = ProgramUnit::new("long.py", source);
    let slices = slice_program(&unit, 1000, &CryptoKeywordSet::default());
    for s in &slices {
        println!("{} ~{} tokens crypto={}", s.key(), s.est_tokens, s.crypto_relevant);
    }
    let joined: String = slices.iter().map(|s| s.text.as_str()).collect();
    assert_eq!(joined, unit.source);
}
