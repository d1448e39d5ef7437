//! Finite-difference check of every network and objective in f64.
//!
//!     cargo run --release --example gradient_check

use tacoforge::nn::GradCheckOptions;
use tacoforge::selfcheck::{gradient_suite, require_pass};

fn main() -> tacoforge::Result<()> {
    let entries = gradient_suite(&GradCheckOptions::default())?;
    for e in &entries {
        println!("{:<40} max rel err {:.2e}  ({} coords, {} kinks skipped)", e.name, e.max_rel_error, e.checked, e.skipped_kinks);
    }
    println!("worst {:.2e}", require_pass(&entries)?);
    Ok(())
}
