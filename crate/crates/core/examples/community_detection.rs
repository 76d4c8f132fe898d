//! Community detection on a planted three-block graph by soft modularity.

use nodenas::heads::Task;
use nodenas::model::ModelConfig;
use nodenas::synth::{Family, GeneratorSpec};
use nodenas::trainer::{train, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seeds: Vec<u64> = std::env::args().skip(1).filter_map(|s| s.parse().ok()).collect();
    let seeds = if seeds.is_empty() { vec![0] } else { seeds };
    for seed in seeds {
        let spec = GeneratorSpec::new(Family::Sbm { sizes: vec![50; 3], p_in: 0.3, p_out: 0.02 }, seed)
            .with_random_features(8);
        let graph = spec.generate_graph()?;
        let task = Task::community_detection();
        let mut config = TrainConfig::new(task, ModelConfig::new(spec.feature_dim(), 16, task.output_dim(), 2), 200);
        config.seed = seed;
        config.eval_every = 50;
        let out = train(&config, &[graph], &[])?;
        for e in out.report.epochs.iter().step_by(50) {
            println!("seed {seed} epoch {:>3} loss {:.4}", e.epoch, e.loss);
        }
        let q = out.report.final_metric("train", "train", "modularity").unwrap_or(f64::NAN);
        let used = out.report.final_metric("train", "train", "clusters_used").unwrap_or(f64::NAN);
        println!("seed {seed}: modularity {q:.4} clusters used {used}  ({:.1}s)", out.report.wall_clock_seconds);
    }
    Ok(())
}
