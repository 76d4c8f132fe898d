//! Spurious-Motif graph classification under distribution shift: node-specific
//! search against the graph-level baseline.
//!
//! Usage: `motif_classification [seed] [epochs]`

use nodenas::heads::Task;
use nodenas::model::{ModelConfig, SearchMode};
use nodenas::synth::{Family, GeneratorSpec, Split};
use nodenas::trainer::{train, EvalSet, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(0);
    let epochs: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(60);
    let train_graphs =
        GeneratorSpec::new(Family::SpuriousMotif { bias: 0.9, split: Split::Train }, seed).with_count(500).generate()?;
    let test =
        GeneratorSpec::new(Family::SpuriousMotif { bias: 0.9, split: Split::Test }, seed + 1000).with_count(300).generate()?;
    let evals = [EvalSet::new("spurious_motif", "test", test)];
    for mode in [SearchMode::Mnnas, SearchMode::NodenasSingleDim, SearchMode::GraphLevelNas] {
        let mut model = ModelConfig::new(12, 32, 3, 2);
        model.mode = mode;
        let mut config = TrainConfig::new(Task::GraphClassification { num_classes: 3 }, model, epochs);
        config.batch_size = 32;
        config.seed = seed;
        config.eval_every = 10;
        let run = train(&config, &train_graphs, &evals)?.report;
        let curve: Vec<String> = run
            .metrics
            .iter()
            .filter(|m| m.dataset == "spurious_motif" && m.metric == "accuracy")
            .map(|m| format!("{:.3}", m.value))
            .collect();
        println!(
            "{:<20} params {:>6}  train acc {:.3}  test acc {:.3}  (every 10 epochs: {})  {:.1}s",
            mode.name(),
            run.num_parameters,
            run.final_metric("train", "train", "accuracy").unwrap_or(f64::NAN),
            run.final_metric("spurious_motif", "test", "accuracy").unwrap_or(f64::NAN),
            curve.join(" "),
            run.wall_clock_seconds
        );
    }
    Ok(())
}
