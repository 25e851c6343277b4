//! Time dense and separable fusion at a few kernel sizes and scale counts,
//! with the oracle residual alongside.
//!
//!     cargo run --release --example bench_fusion

use twostream::bench::{run_bench, write_csv, BenchCase};
use twostream::fusion::KernelMode;

fn main() -> twostream::Result<()> {
    let mut cases = Vec::new();
    for (mode, n, scales) in [
        (KernelMode::Dense, 17, 1),
        (KernelMode::Separable, 17, 1),
        (KernelMode::Dense, 5, 4),
        (KernelMode::Separable, 5, 4),
    ] {
        cases.push(BenchCase {
            parallel: scales > 1,
            ..BenchCase::new(mode, n, 64, scales)?
        });
    }
    let results = run_bench(&cases, 0)?;
    write_csv(std::io::stdout().lock(), &results)?;
    for r in &results {
        println!(
            "{:<28} kernel values {:>9}  working set {:>8} KiB",
            r.case.name(),
            r.total_kernel_values,
            r.working_set_bytes / 1024
        );
    }
    Ok(())
}
