//! The key/value memory bank on its own: strided insertion, usage tracking
//! and compaction of the oldest short-term frames into long-term columns.
//!
//! ```bash
//! cargo run --example memory_compaction
//! ```

use chromaprop::featex::FeatureGrid;
use chromaprop::membank::{BankConfig, MemoryBank};
use chromaprop::Real;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> anyhow::Result<()> {
    let (h, w, ck, cv) = (4, 4, 3, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut grid = |c: usize| FeatureGrid::from_fn(h, w, c, |_, _, _| rng.random_range(-1.0..1.0));

    // Insert every 2nd frame; once 4 short-term frames are held, fold the
    // oldest 2 into their 6 most used columns.
    let cfg = BankConfig {
        gamma: 2,
        ne: 2,
        ns: Some(4),
        m: 6,
        ..BankConfig::default()
    };
    let mut bank = MemoryBank::init_with_exemplar(&grid(ck), &grid(cv), cfg)?;
    println!("frame  exemplar  longterm  shortterm  total  event");
    for i in 1..=16 {
        let (k, v) = (grid(ck), grid(cv));
        let readout = bank.readout(&k, false)?;
        let report = bank.observe_frame(&k, &v, i, None)?;
        let c = bank.column_count();
        let event = match (&report.compaction, report.inserted) {
            (Some(r), _) => format!("compacted: kept {:?}", r.promoted),
            (None, true) => "inserted".to_string(),
            (None, false) => String::new(),
        };
        println!(
            "{i:5}  {:8}  {:8}  {:9}  {:5}  {event}  (read {} columns)",
            c.exemplar, c.longterm, c.shortterm, c.total, readout.columns_used
        );
    }

    let usage = bank.normalized_usage(bank.last_frame() + 1);
    let mut top: Vec<(usize, Real)> = usage.row(0).iter().copied().enumerate().collect();
    top.sort_by(|a, b| b.1.total_cmp(&a.1));
    println!("most used columns (index, usage per frame): {:?}", &top[..4]);
    println!("peak columns {}, compactions {}", bank.peak_columns(), bank.compactions());
    Ok(())
}
