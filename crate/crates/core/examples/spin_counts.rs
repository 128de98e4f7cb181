//! Spin counts of direct encodings versus the decomposition pipeline.

use smtj_ising::bench::{bundled_data_dir, spin_count_report, BUNDLED_INSTANCES};
use smtj_ising::tsplib;

fn main() -> smtj_ising::Result<()> {
    let mut entries = Vec::new();
    for name in BUNDLED_INSTANCES {
        let path = bundled_data_dir().join(format!("{name}.tsp"));
        let text = std::fs::read_to_string(&path).expect("bundled instance");
        entries.push(tsplib::read_dimension(&text)?);
    }
    for row in spin_count_report(&entries, 81) {
        println!(
            "{:<10} N={:<4} direct {:>6} pipeline {:>3}",
            row.name, row.cities, row.conventional, row.ours
        );
    }
    Ok(())
}
