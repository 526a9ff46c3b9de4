//! Runs a TOML configuration the same way the command-line tool does.
//!
//!     cargo run --release --example run_config -- examples/configs/sliding_pump.toml

use std::path::PathBuf;

use piezo::config::parse_config;
use piezo::run::run;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| {
        PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("examples/configs/sliding_pump.toml")
    });
    let cfg = parse_config(&std::fs::read_to_string(&path)?)?;
    let out = run(&cfg)?;
    for (name, a) in &out.report.analyses {
        println!("{name}: {}", if a.pass { "pass" } else { "FAIL" });
        for c in &a.checks {
            println!("  {:<32} {:>12.4e} {}", c.name, c.value, if c.pass { "ok" } else { "failed" });
        }
    }
    out.write(&cfg.out)?;
    println!("wrote {} tables to {}", out.tables.len(), cfg.out.display());
    Ok(())
}
