//! Local attention over a window of recent frames.
//!
//! Each query position attends to a `λ × λ` neighbourhood in every buffered
//! frame; a feature that moved by one cell is still found.
//!
//! ```bash
//! cargo run --example local_window
//! ```

use chromaprop::featex::FeatureGrid;
use chromaprop::localattn::{local_attention, RingBuffer};
use chromaprop::Real;

fn main() -> anyhow::Result<()> {
    let (h, w) = (6, 6);
    // A single bright key at (2, 2) carrying the value (1, -1).
    let spot = |cy: usize, cx: usize| {
        FeatureGrid::from_fn(h, w, 2, move |y, x, _| if (y, x) == (cy, cx) { 4.0 } else { 0.0 })
    };
    let value = |cy: usize, cx: usize| {
        FeatureGrid::from_fn(h, w, 2, move |y, x, c| match ((y, x) == (cy, cx), c) {
            (true, 0) => 1.0,
            (true, _) => -1.0,
            _ => 0.0,
        })
    };

    let mut ring = RingBuffer::new(2, 2)?;
    let cold = local_attention(&spot(2, 3), &ring, 3, 1.0)?;
    println!("empty buffer: cold start = {}", cold.cold_start);

    ring.push(spot(2, 2), value(2, 2), 1)?;
    // The spot moved one cell right; a 3x3 window still covers its old place.
    let q = spot(2, 3);
    for lambda in [1, 3] {
        let la = local_attention(&q, &ring, lambda, (2.0 as Real).sqrt())?;
        println!("λ = {lambda}: value at (2,3) = {:?}", la.grid.at(2, 3));
    }

    ring.push(spot(2, 3), value(2, 3), 2)?;
    ring.push(spot(2, 4), value(2, 4), 3)?;
    println!(
        "buffer holds frames {:?} after {} evictions",
        ring.frames().collect::<Vec<_>>(),
        ring.evicted()
    );
    Ok(())
}
