//! Regenerates the sample treebanks committed under data/. The files are
//! fully determined by the seeds below, so rerunning this reproduces them
//! byte for byte.

use std::path::Path;

use headsel::corpus::write_conll_file;
use headsel::synth::{generate, toy, SynthConfig};

fn main() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data");
    std::fs::create_dir_all(&dir).expect("create data directory");
    let sized = |sentences, seed| generate(&SynthConfig { sentences, seed, ..SynthConfig::default() });
    let sets = [
        ("train.conll", sized(1000, 11)),
        ("dev.conll", sized(100, 12)),
        ("test.conll", sized(60, 13)),
        ("toy.conll", toy(50, 7)),
    ];
    for (name, treebank) in sets {
        let path = dir.join(name);
        write_conll_file(&treebank, &path).expect("write treebank");
        println!("{} sentences -> {}", treebank.len(), path.display());
    }
}
