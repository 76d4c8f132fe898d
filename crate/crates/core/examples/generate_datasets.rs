//! Writes Spurious-Motif and BA datasets to disk and reads them back.

use nodenas::synth::{load_dataset, spurious_base_kind, DatasetSpec, Family, GeneratorSpec, Split, BASE_NAMES, MOTIF_NAMES};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args().nth(1).unwrap_or_else(|| std::env::temp_dir().join("nodenas-data").display().to_string());
    let specs = [
        DatasetSpec {
            name: "spurious_motif_b0.9".into(),
            train: GeneratorSpec::new(Family::SpuriousMotif { bias: 0.9, split: Split::Train }, 0).with_count(500),
            test: Some(GeneratorSpec::new(Family::SpuriousMotif { bias: 0.9, split: Split::Test }, 1).with_count(300)),
        },
        DatasetSpec {
            name: "ba_partition".into(),
            train: GeneratorSpec::new(Family::Ba { n: 300, m: 3 }, 0).with_random_features(32),
            test: Some(GeneratorSpec::new(Family::Ba { n: 1000, m: 3 }, 1).with_random_features(32)),
        },
    ];
    for spec in &specs {
        let dir = spec.write(std::path::Path::new(&out))?;
        let train = load_dataset(&dir.join("train.jsonl"))?;
        println!("{}: {} train graphs, feature dim {}", dir.display(), train.len(), train[0].feature_dim());
        if matches!(spec.train.family, Family::SpuriousMotif { .. }) {
            let mut table = [[0usize; 3]; 3];
            for g in &train {
                table[g.label().unwrap()][spurious_base_kind(g).unwrap()] += 1;
            }
            println!("  motif \\ base  {}", BASE_NAMES.join("  "));
            for (m, row) in table.iter().enumerate() {
                println!("  {:<12} {:?}", MOTIF_NAMES[m], row);
            }
        }
    }
    Ok(())
}
