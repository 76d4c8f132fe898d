//! Degree statistics and assortativity across the synthetic graph families.

use nodenas::graph::{assortativity_edge_pearson, assortativity_excess, compute_degree_stats, degree_histogram};
use nodenas::synth::{Family, GeneratorSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let families = [
        Family::Ba { n: 1000, m: 2 },
        Family::Er { n: 1000, p: 0.01 },
        Family::Rr { n: 1000, d: 10 },
        Family::Nw { n: 1000, k: 4, p: 0.1 },
        Family::Sbm { sizes: vec![50; 3], p_in: 0.3, p_out: 0.02 },
    ];
    println!("{:<6} {:>6} {:>7} {:>8} {:>9} {:>10} {:>10} {:>7}", "family", "nodes", "edges", "mean_d", "mean_d2", "gamma_ex", "gamma_e12", "alpha");
    for family in families {
        let name = family.name();
        let g = GeneratorSpec::new(family, 7).generate_graph()?;
        let stats = compute_degree_stats(&g)?;
        let excess = assortativity_excess(&g)?;
        let pearson = assortativity_edge_pearson(&g)?;
        let hist = degree_histogram(&g)?;
        let gamma = |a: nodenas::graph::Assortativity| {
            if a.degenerate { "degen".to_string() } else { format!("{:.4}", a.value) }
        };
        println!(
            "{:<6} {:>6} {:>7} {:>8.3} {:>9.3} {:>10} {:>10} {:>7.3}",
            name,
            g.num_nodes(),
            g.num_edges(),
            stats.mean_degree,
            stats.mean_square_degree,
            gamma(excess),
            gamma(pearson),
            hist.power_law_alpha
        );
    }
    Ok(())
}
