#![no_main]

use libfuzzer_sys::fuzz_target;
use sidetune::data::{vocab, Expr};

// Bytes are read as token ids; every accepted sequence must re-tokenise to itself.
fuzz_target!(|data: &[u8]| {
    let tokens: Vec<usize> = data.iter().map(|&b| b as usize % (vocab::vocab_size() + 2)).collect();
    if let Ok(expr) = Expr::parse(&tokens) {
        assert_eq!(expr.tokens(), tokens);
        let text = vocab::decode(&tokens).expect("parsed tokens decode");
        assert_eq!(vocab::encode(&text).expect("decoded text encodes"), tokens);
    }
});
