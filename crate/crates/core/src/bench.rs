//! Dense vs separable fusion benchmarks.
//!
//! Every case is first checked against the dense-expanded oracle; a case
//! whose residual exceeds [`RESIDUAL_TOL`] gets no timing.

use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{
    fuse_pyramid, fuse_pyramid_parallel, kernel_param_count, ContentPyramid, DenseKernelField, FusionConfig,
    KernelField, KernelMode, MaskField, SeparableKernelField,
};
use crate::rng::{rand_uniform, randn, split_seed, SeededRng};
use crate::tensor::Real;

pub const RESIDUAL_TOL: f64 = 1e-5;
pub const CSV_HEADER: &str = "case,n,S,mode,params_per_pixel,median_ns,min_ns,residual";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchCase {
    pub mode: KernelMode,
    pub n: usize,
    /// One resolution per scale, coarsest first.
    pub resolutions: Vec<usize>,
    /// Content channels at every scale.
    pub width: usize,
    pub repetitions: usize,
    pub warmup: usize,
    /// Also time the one-thread-per-scale path.
    pub parallel: bool,
}

impl BenchCase {
    /// `scales` resolutions halving down from `size`.
    pub fn new(mode: KernelMode, n: usize, size: usize, scales: usize) -> Result<Self> {
        if scales == 0 || size >> (scales - 1) == 0 {
            return Err(Error::invalid(format!("cannot fit {scales} scales below size {size}")));
        }
        let resolutions = (0..scales).rev().map(|s| size >> s).collect();
        let case = BenchCase {
            mode,
            n,
            resolutions,
            width: 8,
            repetitions: 5,
            warmup: 1,
            parallel: false,
        };
        case.validate()?;
        Ok(case)
    }

    pub fn validate(&self) -> Result<()> {
        if self.repetitions < 3 {
            return Err(Error::invalid(format!(
                "repetitions must be >= 3, got {}",
                self.repetitions
            )));
        }
        if self.warmup < 1 {
            return Err(Error::invalid("warmup must be >= 1"));
        }
        if self.width == 0 {
            return Err(Error::invalid("width must be positive"));
        }
        self.fusion_config().map(|_| ())
    }

    pub fn scales(&self) -> usize {
        self.resolutions.len()
    }

    pub fn name(&self) -> String {
        let res: Vec<String> = self.resolutions.iter().map(|r| r.to_string()).collect();
        format!("{}-n{}-{}", self.mode, self.n, res.join("x"))
    }

    fn fusion_config(&self) -> Result<FusionConfig> {
        FusionConfig::new(self.n, self.resolutions.clone(), vec![self.width; self.scales()])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub median_ns: u64,
    pub min_ns: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchResult {
    pub case: BenchCase,
    pub params_per_pixel: u64,
    pub total_kernel_values: u64,
    /// Bytes of content, kernels, masks and outputs for one fused frame.
    pub working_set_bytes: u64,
    /// Relative L2 distance between the separable and dense-expanded paths.
    pub residual: f64,
    /// `None` when the residual check failed.
    pub timing: Option<Timing>,
    pub parallel_timing: Option<Timing>,
}

impl BenchResult {
    pub fn passed(&self) -> bool {
        self.residual < RESIDUAL_TOL
    }

    /// CSV rows; the parallel timing, when present, is a second row whose
    /// case name ends in `+par`.
    pub fn csv_rows(&self) -> Vec<String> {
        let row = |name: String, t: Option<Timing>| {
            let (med, min) = t.map_or((String::new(), String::new()), |t| {
                (t.median_ns.to_string(), t.min_ns.to_string())
            });
            format!(
                "{},{},{},{},{},{},{},{:.3e}",
                name,
                self.case.n,
                self.case.scales(),
                self.case.mode,
                self.params_per_pixel,
                med,
                min,
                self.residual
            )
        };
        let mut rows = vec![row(self.case.name(), self.timing)];
        if let Some(t) = self.parallel_timing {
            rows.push(row(format!("{}+par", self.case.name()), Some(t)));
        }
        rows
    }
}

struct Inputs<T> {
    pyramid: ContentPyramid<T>,
    separable: Vec<KernelField<T>>,
    dense: Vec<KernelField<T>>,
    masks: Vec<MaskField<T>>,
}

fn inputs<T: Real>(case: &BenchCase, rng: &mut SeededRng) -> Result<Inputs<T>> {
    let (n, d) = (case.n, case.width);
    let mut maps = Vec::new();
    let (mut separable, mut dense, mut masks) = (Vec::new(), Vec::new(), Vec::new());
    for &l in &case.resolutions {
        maps.push(randn(rng, &[d, l, l])?);
        let field = SeparableKernelField::new(
            randn::<T>(rng, &[n, l, l])?.scale(T::of(0.5)),
            randn::<T>(rng, &[n, l, l])?.scale(T::of(0.5)),
        )?;
        dense.push(KernelField::Dense(field.to_dense()));
        separable.push(KernelField::Separable(field));
        masks.push(MaskField::new(rand_uniform(rng, &[l, l], 0.0, 1.0)?)?);
    }
    Ok(Inputs {
        pyramid: ContentPyramid::new(maps)?,
        separable,
        dense,
        masks,
    })
}

fn relative_l2(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    let den: f64 = b.iter().map(|y| y * y).sum();
    if den == 0.0 {
        num.sqrt()
    } else {
        (num / den).sqrt()
    }
}

/// Residual between the separable path and the dense-expanded oracle on the
/// timed inputs.
fn residual(cfg: &FusionConfig, inp: &Inputs<f32>) -> Result<f64> {
    let fast = fuse_pyramid(cfg, &inp.pyramid, &inp.separable, &inp.masks)?;
    let cast = |k: &KernelField<f32>| -> Result<KernelField<f64>> {
        match k {
            KernelField::Dense(d) => Ok(KernelField::Dense(DenseKernelField::new(d.weights().cast())?)),
            KernelField::Separable(_) => Err(Error::invalid("oracle expects dense fields")),
        }
    };
    let pyramid = ContentPyramid::new(inp.pyramid.maps().iter().map(|m| m.cast()).collect())?;
    let dense = inp.dense.iter().map(cast).collect::<Result<Vec<_>>>()?;
    let masks = inp
        .masks
        .iter()
        .map(|m| MaskField::new(m.values().cast()))
        .collect::<Result<Vec<_>>>()?;
    let oracle = fuse_pyramid(cfg, &pyramid, &dense, &masks)?;
    let a: Vec<f64> = fast
        .maps()
        .iter()
        .flat_map(|m| m.data().iter().map(|v| v.f64()))
        .collect();
    let b: Vec<f64> = oracle.maps().iter().flat_map(|m| m.data().to_vec()).collect();
    Ok(relative_l2(&a, &b))
}

fn time(case: &BenchCase, mut f: impl FnMut() -> Result<()>) -> Result<Timing> {
    for _ in 0..case.warmup {
        f()?;
    }
    let mut ns = Vec::with_capacity(case.repetitions);
    for _ in 0..case.repetitions {
        let t0 = Instant::now();
        f()?;
        ns.push(t0.elapsed().as_nanos() as u64);
    }
    ns.sort_unstable();
    Ok(Timing {
        median_ns: ns[ns.len() / 2],
        min_ns: ns[0],
    })
}

/// Verify then time one case. Inputs depend only on `seed`.
pub fn run_case(case: &BenchCase, seed: u64) -> Result<BenchResult> {
    case.validate()?;
    let cfg = case.fusion_config()?;
    let inp = inputs::<f32>(case, &mut SeededRng::new(seed))?;
    let counts = kernel_param_count(case.n, &case.resolutions, case.mode);
    let d = case.width as u64;
    let pixels: u64 = case.resolutions.iter().map(|&l| (l * l) as u64).sum();
    let working_set_bytes = 4 * (counts.total + pixels * (2 * d + 1));
    let residual = residual(&cfg, &inp)?;
    let mut result = BenchResult {
        case: case.clone(),
        params_per_pixel: counts.per_pixel,
        total_kernel_values: counts.total,
        working_set_bytes,
        residual,
        timing: None,
        parallel_timing: None,
    };
    if !result.passed() {
        return Ok(result);
    }
    let kernels = match case.mode {
        KernelMode::Dense => &inp.dense,
        KernelMode::Separable => &inp.separable,
    };
    result.timing = Some(time(case, || {
        fuse_pyramid(&cfg, &inp.pyramid, kernels, &inp.masks).map(|_| ())
    })?);
    if case.parallel {
        result.parallel_timing = Some(time(case, || {
            fuse_pyramid_parallel(&cfg, &inp.pyramid, kernels, &inp.masks).map(|_| ())
        })?);
    }
    Ok(result)
}

/// Run every case with a per-case seed derived from `seed`.
pub fn run_bench(cases: &[BenchCase], seed: u64) -> Result<Vec<BenchResult>> {
    cases
        .iter()
        .enumerate()
        .map(|(i, c)| run_case(c, split_seed(seed, i as u64)))
        .collect()
}

pub fn write_csv(mut w: impl Write, results: &[BenchResult]) -> std::io::Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for r in results {
        for row in r.csv_rows() {
            writeln!(w, "{row}")?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(mode: KernelMode, n: usize) -> BenchCase {
        BenchCase {
            repetitions: 3,
            ..BenchCase::new(mode, n, 16, 2).unwrap()
        }
    }

    #[test]
    fn cases_validate() {
        let c = BenchCase::new(KernelMode::Separable, 5, 64, 4).unwrap();
        assert_eq!(c.resolutions, vec![8, 16, 32, 64]);
        assert_eq!(c.name(), "separable-n5-8x16x32x64");
        assert!(BenchCase {
            repetitions: 2,
            ..c.clone()
        }
        .validate()
        .is_err());
        assert!(BenchCase { warmup: 0, ..c.clone() }.validate().is_err());
        assert!(BenchCase::new(KernelMode::Dense, 4, 64, 1).is_err());
        assert!(BenchCase::new(KernelMode::Dense, 3, 4, 4).is_err());
    }

    #[test]
    fn csv_has_one_row_per_case() {
        let cases = [small(KernelMode::Dense, 5), small(KernelMode::Separable, 3)];
        let results = run_bench(&cases, 1).unwrap();
        let mut buf = Vec::new();
        write_csv(&mut buf, &results).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("dense-n5-8x16,5,2,dense,25,"));
        assert!(lines[2].starts_with("separable-n3-8x16,3,2,separable,6,"));
        for r in &results {
            assert!(r.residual < RESIDUAL_TOL);
            assert!(r.timing.unwrap().min_ns <= r.timing.unwrap().median_ns);
        }
    }

    #[test]
    fn parallel_path_adds_a_row() {
        let case = BenchCase {
            parallel: true,
            ..small(KernelMode::Separable, 3)
        };
        let r = run_case(&case, 0).unwrap();
        assert_eq!(r.csv_rows().len(), 2);
        assert!(r.csv_rows()[1].starts_with("separable-n3-8x16+par,"));
    }

    #[test]
    fn failed_check_has_no_timing() {
        let case = small(KernelMode::Separable, 3);
        let mut r = run_case(&case, 0).unwrap();
        r.residual = 1.0;
        r.timing = None;
        assert!(!r.passed());
        assert!(r.csv_rows()[0].contains(",,,"));
    }

    #[test]
    fn same_seed_same_residual() {
        let case = small(KernelMode::Dense, 3);
        assert_eq!(
            run_case(&case, 4).unwrap().residual,
            run_case(&case, 4).unwrap().residual
        );
    }
}
