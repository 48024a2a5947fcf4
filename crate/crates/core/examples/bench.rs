//! Repeats the failure search K times per strategy and prints the
//! episodes-to-failure table.
//!
//!     cargo run --release --example bench -- target/run "" 5

#[path = "common/mod.rs"]
mod common;

use rarefail::report;

fn main() {
    common::init_logging();
    let run = common::open_run();
    let k = std::env::args()
        .nth(3)
        .map(|s| s.parse().unwrap())
        .unwrap_or(run.config().search.k_failures);
    let table = run.bench(k).unwrap();
    print!("{}", report::bench_markdown(&table));
    println!("wrote {}", run.dir().path().display());
}
