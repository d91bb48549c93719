//! Greedy-Random and Brute-Force placement on one generated scene, judged
//! by the stability oracle and three-view IoU.
//!
//! cargo run --release --example baselines -- [template] [sigma]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stackforge::baselines::{brute_force_place, greedy_place, BruteForceConfig, GreedyConfig};
use stackforge::datagen::{generate_lineage, DatagenConfig};
use stackforge::geometry::{shapes_from_counts, three_view_iou};
use stackforge::stability::{is_stable, StabilityParams};
use stackforge::Stack;

fn report(name: &str, s: &Stack, reference: &Stack) {
    let (stable, settled) = is_stable(s, &StabilityParams::default());
    let iou = three_view_iou(&settled, reference);
    println!(
        "{name:8} stable={stable:5} IoU front {:.3} side {:.3} top {:.3}",
        iou.front, iou.side, iou.top
    );
    for b in &s.blocks {
        println!(
            "    {:15} x {:6.2} z {:5.2}",
            b.shape.name(),
            b.pose.translation.x,
            b.pose.translation.z
        );
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let template: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(3);
    let sigma: f64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(0.6);

    let record = generate_lineage(template, 0, &DatagenConfig::default()).remove(0);
    let reference = record.stack();
    let shapes = shapes_from_counts(record.counts);
    println!("scene {} with counts {:?}", record.id, record.counts);

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let greedy = greedy_place(
        &record.silhouette_front,
        &shapes,
        &GreedyConfig { sigma },
        &mut rng,
    );
    report("greedy", &greedy, &reference);
    let brute = brute_force_place(
        &record.silhouette_front,
        &shapes,
        &BruteForceConfig::default(),
        &mut rng,
    );
    report("brute", &brute, &reference);
    Ok(())
}
