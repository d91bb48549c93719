//! Run the stability oracle on a few hand-built stacks: settle, then the
//! static-equilibrium LP.
//!
//! cargo run --example stability

use stackforge::stability::classify;
use stackforge::{BlockInstance, BlockShape, Stack};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cube = |x, z| BlockInstance::at(BlockShape::Cube, x, 0.0, z);
    let rect = |x, z| BlockInstance::at(BlockShape::Rectangle, x, 0.0, z);
    let cases = [
        ("cube on the ground", Stack::new(vec![cube(0.0, 1.0)])),
        (
            "rectangle centered on a cube",
            Stack::new(vec![cube(0.0, 1.0), rect(0.0, 3.0)]),
        ),
        (
            "rectangle 1.5 off center",
            Stack::new(vec![cube(0.0, 1.0), rect(1.5, 3.0)]),
        ),
        (
            "arch over two cubes",
            Stack::new(vec![cube(-1.0, 1.0), cube(1.0, 1.0), rect(0.0, 3.0)]),
        ),
        (
            "cube hovering a layer up",
            Stack::new(vec![cube(0.0, 1.0), cube(3.0, 5.0)]),
        ),
        (
            "leaning tower",
            Stack::new(vec![cube(0.0, 1.0), cube(0.8, 3.0), cube(1.6, 5.0)]),
        ),
    ];
    for (name, stack) in cases {
        let v = classify(&stack)?;
        let drops: Vec<String> = v
            .settle_displacements
            .iter()
            .map(|d| format!("{d:.2}"))
            .collect();
        println!(
            "{name:32} stable={:5} fell={:?} equilibrium={:?} drops=[{}]",
            v.stable,
            v.fell_indices,
            v.equilibrium,
            drops.join(", ")
        );
    }
    Ok(())
}
