//! Runs the numeric oracle suite programmatically and demonstrates that a
//! deliberately broken update is caught.
//!
//! ```bash
//! cargo run --release --example oracle_suite
//! ```

use unfold_restore::oracle::{verify_suite, Fault};

fn main() -> unfold_restore::Result<()> {
    println!("== clean build ==");
    let mut all = true;
    for check in verify_suite(Fault::None)? {
        all &= check.pass;
        println!(
            "{:<24} {} — {}",
            check.name,
            if check.pass { "PASS" } else { "FAIL" },
            check.detail
        );
    }
    assert!(all, "a clean build must pass the whole suite");

    println!("\n== with the z-off-by-eps fault injected ==");
    for check in verify_suite(Fault::ZOffByEps)? {
        if !check.pass {
            println!("caught: {:<10} — {}", check.name, check.detail);
        }
    }
    Ok(())
}
