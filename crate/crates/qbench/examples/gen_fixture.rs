//! Writes a synthetic market into a data directory.
//!
//! `cargo run --example gen_fixture -- <dir> [seed] [bj,sz,sh tickers] [days]`
//!
//! e.g. `gen_fixture data 7 10,20,20 500` gives 50 tickers over 500 trading days.

use qbench::core::fixture::{generate_store, FixtureConfig};

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let Some(dir) = args.first() else {
        eprintln!("usage: gen_fixture <dir> [seed] [bj,sz,sh] [days]");
        std::process::exit(1);
    };
    let mut cfg = FixtureConfig::default();
    if let Some(s) = args.get(1) {
        cfg.seed = s.parse().expect("seed must be an integer");
    }
    if let Some(t) = args.get(2) {
        let n: Vec<usize> = t.split(',').map(|x| x.parse().expect("ticker counts must be integers")).collect();
        cfg.tickers = n.try_into().expect("need three ticker counts");
    }
    if let Some(d) = args.get(3) {
        cfg.days = d.parse().expect("days must be an integer");
    }
    let store = generate_store(&cfg);
    qbench::ingest::write_dir(&store, std::path::Path::new(dir)).unwrap_or_else(|e| {
        eprintln!("error: {e}");
        std::process::exit(2);
    });
    println!("wrote {} rows to {dir}", store.row_count());
}
