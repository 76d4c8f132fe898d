//! Degree-group operation preferences of a trained inverse-partition model,
//! written as CSV (degree group 0 holds the highest-degree nodes).

use nodenas::heads::Task;
use nodenas::model::ModelConfig;
use nodenas::synth::{Family, GeneratorSpec};
use nodenas::trainer::{explain, train, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let graph = GeneratorSpec::new(Family::Ba { n: 300, m: 3 }, seed).with_random_features(32).generate_graph()?;
    let task = Task::inverse_partition();
    let model_config = ModelConfig::new(graph.feature_dim(), 16, task.output_dim(), 2);

    let untrained = nodenas::model::Mnnas::new(model_config.clone(), &mut nodenas::seeding::stream(seed, nodenas::seeding::INIT))?;
    println!("untrained:");
    explain(&untrained, std::slice::from_ref(&graph))?.write_csv(std::io::stdout())?;

    let mut config = TrainConfig::new(task, model_config, 200);
    config.seed = seed;
    config.eval_every = 200;
    config.resample_features = 32;
    let run = train(&config, std::slice::from_ref(&graph), &[])?;
    let test = GeneratorSpec::new(Family::Ba { n: 1000, m: 3 }, seed + 100).with_random_features(32).generate()?;
    let table = explain(&run.model, &test)?;
    println!("\ntrained, evaluated on BA(1000, 3):");
    table.write_csv(std::io::stdout())?;
    let names: Vec<&str> = table.top_ops().iter().map(|&i| table.op_names[i].as_str()).collect();
    println!("\ntop-1 per degree group: {names:?}");
    Ok(())
}
