//! Finite-difference audit of every analytic gradient (losses, curves, full pipeline).
//!
//! Usage: cargo run --example gradcheck [SEED]

use curvelight::audit::{gradient_audit, AuditOptions};

fn main() -> curvelight::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let checks = gradient_audit(&AuditOptions { seed, ..Default::default() })?;
    for c in &checks {
        println!(
            "{:<28} {:.2e} over {} coordinates ({} skipped at kinks)",
            c.name, c.report.max_rel_error, c.report.compared, c.report.skipped
        );
    }
    let ok = checks.iter().all(|c| c.passed());
    println!("{}", if ok { "all gradients agree" } else { "MISMATCH" });
    std::process::exit(if ok { 0 } else { 1 });
}
