//! Finite-difference gradient checks for every tape op and the full
//! training objectives.
//!
//! cargo run --release --example gradcheck

use decentrl::diagnostics;

fn main() -> decentrl::Result<()> {
    let mut checks = diagnostics::op_checks(0)?;
    checks.extend(diagnostics::model_checks(0)?);
    print!("{}", diagnostics::table(&checks));
    let failed = checks.iter().filter(|c| !c.passed()).count();
    println!("{} checks, {failed} failed", checks.len());
    if failed > 0 {
        std::process::exit(1);
    }
    Ok(())
}
