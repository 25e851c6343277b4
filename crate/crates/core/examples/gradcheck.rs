//! Finite-difference check of every analytic backward pass and of the full
//! model.
//!
//!     cargo run --release --example gradcheck -- [seed]

use std::time::Instant;

use twostream::gradcheck::{check_all, check_model};

fn main() -> twostream::Result<()> {
    let seed = std::env::args().nth(1).map_or(1, |s| s.parse().expect("seed"));
    let start = Instant::now();
    for r in check_all(seed)? {
        println!("{:<20} {:3} cases  max rel err {:.2e}", r.op, r.cases, r.max_rel_err);
    }
    let m = check_model(seed, 200)?;
    println!("{:<20} {:3} coords max rel err {:.2e}", m.op, m.cases, m.max_rel_err);
    println!("elapsed {:.1?}", start.elapsed());
    Ok(())
}
