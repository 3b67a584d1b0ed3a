//! Coarse-grained parallelism: many independent evaluations of one kernel,
//! each on a private arena, run serially or across a worker pool.

use std::io;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::kernel::{Evaluator, InterpError, KernelProgram, Named};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Serial,
    Parallel,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Serial => "serial",
            Mode::Parallel => "parallel",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "serial" => Ok(Mode::Serial),
            "parallel" => Ok(Mode::Parallel),
            _ => Err(format!("unknown mode `{s}`")),
        }
    }
}

#[derive(Debug, Error)]
pub enum BatchError {
    #[error("a batch needs at least one input set")]
    Empty,
    #[error("worker count must be at least 1")]
    NoWorkers,
    #[error("input set {index}: {source}")]
    Input { index: usize, source: InterpError },
    #[error("could not start worker pool: {0}")]
    Pool(String),
}

pub struct BatchRequest<'a> {
    pub program: &'a KernelProgram,
    pub inputs: Vec<Named>,
    pub workers: usize,
    pub mode: Mode,
    /// Also time copying inputs into and outputs out of the arenas.
    pub io_sim: bool,
}

#[derive(Clone, Debug)]
pub struct BatchResult {
    pub outputs: Vec<Named>,
    /// Seconds spent computing, marshaling excluded.
    pub wall_time: f64,
    /// Seconds per item, serial mode only.
    pub per_item_time: Option<Vec<f64>>,
    /// Seconds spent marshaling, when `io_sim` was requested.
    pub io_time: Option<f64>,
    /// More workers than physical cores were requested.
    pub oversubscribed: bool,
}

pub fn physical_cores() -> usize {
    num_cpus::get_physical().max(1)
}

/// Evaluators with inputs loaded, ready to be timed repeatedly.
struct Prepared<'a> {
    evals: Vec<Evaluator<'a>>,
}

impl<'a> Prepared<'a> {
    fn new(program: &'a KernelProgram, inputs: &[Named]) -> Result<Self, BatchError> {
        if inputs.is_empty() {
            return Err(BatchError::Empty);
        }
        let evals = inputs
            .iter()
            .enumerate()
            .map(|(index, inp)| {
                let mut ev = Evaluator::new(program);
                ev.set_inputs(inp).map_err(|source| BatchError::Input { index, source })?;
                Ok(ev)
            })
            .collect::<Result<Vec<_>, BatchError>>()?;
        Ok(Prepared { evals })
    }

    /// Compute-only wall time in seconds, plus per-item times when serial.
    fn run(&mut self, mode: Mode, pool: Option<&rayon::ThreadPool>) -> Result<(f64, Option<Vec<f64>>), BatchError> {
        let fail = |index: usize, source: InterpError| BatchError::Input { index, source };
        match (mode, pool) {
            (Mode::Parallel, Some(pool)) => {
                use rayon::prelude::*;
                let start = Instant::now();
                let res: Result<(), BatchError> = pool.install(|| {
                    self.evals.par_iter_mut().enumerate().try_for_each(|(k, ev)| ev.run().map_err(|e| fail(k, e)))
                });
                let t = start.elapsed().as_secs_f64();
                res.map(|_| (t, None))
            }
            _ => {
                let mut per_item = Vec::with_capacity(self.evals.len());
                let start = Instant::now();
                for (k, ev) in self.evals.iter_mut().enumerate() {
                    let t0 = Instant::now();
                    ev.run().map_err(|e| fail(k, e))?;
                    per_item.push(t0.elapsed().as_secs_f64());
                }
                Ok((start.elapsed().as_secs_f64(), Some(per_item)))
            }
        }
    }

    /// Simulated marshaling: reload every input set and copy every output out.
    fn marshal(&mut self, inputs: &[Named]) -> Result<(f64, Vec<Named>), BatchError> {
        let start = Instant::now();
        for (index, (ev, inp)) in self.evals.iter_mut().zip(inputs).enumerate() {
            ev.set_inputs(inp).map_err(|source| BatchError::Input { index, source })?;
        }
        let outs: Vec<Named> = self.evals.iter().map(Evaluator::outputs).collect();
        Ok((start.elapsed().as_secs_f64(), outs))
    }
}

fn pool(workers: usize) -> Result<rayon::ThreadPool, BatchError> {
    rayon::ThreadPoolBuilder::new().num_threads(workers).build().map_err(|e| BatchError::Pool(e.to_string()))
}

/// Evaluate every input set once. Outputs are in input order and do not
/// depend on the mode or worker count.
pub fn run_batch(request: BatchRequest) -> Result<BatchResult, BatchError> {
    if request.workers == 0 {
        return Err(BatchError::NoWorkers);
    }
    let mut prepared = Prepared::new(request.program, &request.inputs)?;
    let pool = match request.mode {
        Mode::Parallel => Some(pool(request.workers)?),
        Mode::Serial => None,
    };
    let (wall_time, per_item_time) = prepared.run(request.mode, pool.as_ref())?;
    let (io_time, outputs) = if request.io_sim {
        // the second pass reloads the same inputs; arenas are overwritten in place
        let (t, _) = prepared.marshal(&request.inputs)?;
        (Some(t), prepared.evals.iter().map(Evaluator::outputs).collect())
    } else {
        (None, prepared.evals.iter().map(Evaluator::outputs).collect())
    };
    Ok(BatchResult {
        outputs,
        wall_time,
        per_item_time,
        io_time,
        oversubscribed: request.mode == Mode::Parallel && request.workers > physical_cores(),
    })
}

/// `n` input sets for `program`, uniform in `[-1, 1]` (external forces
/// scaled down), reproducible from `seed`.
pub fn random_inputs(program: &KernelProgram, n: usize, seed: u64) -> Vec<Named> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            program
                .inputs
                .iter()
                .map(|seg| {
                    let scale = if seg.name == "fext" { 0.1 } else { 1.0 };
                    let v = (0..seg.len).map(|_| scale * rng.gen_range(-1.0..=1.0)).collect();
                    (seg.name.clone(), v)
                })
                .collect()
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct SweepConfig {
    pub ns: Vec<usize>,
    pub mode: Mode,
    pub workers: usize,
    pub reps: usize,
    pub warmup: usize,
    pub seed: u64,
    pub io_sim: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub n: usize,
    pub mode: Mode,
    pub workers: usize,
    pub mean_us: f64,
    pub std_us: f64,
    pub reps: usize,
    pub io_us: Option<f64>,
    pub oversubscribed: bool,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Mean and sample standard deviation of batch wall time for each `N`,
/// after `warmup` untimed runs. Inputs for batch size `N` are drawn from
/// `seed + N`, so serial and parallel sweeps see the same data.
pub fn sweep(program: &KernelProgram, cfg: &SweepConfig) -> Result<Vec<SweepRow>, BatchError> {
    if cfg.workers == 0 {
        return Err(BatchError::NoWorkers);
    }
    let reps = cfg.reps.max(1);
    let pool = match cfg.mode {
        Mode::Parallel => Some(pool(cfg.workers)?),
        Mode::Serial => None,
    };
    let mut rows = Vec::with_capacity(cfg.ns.len());
    for &n in &cfg.ns {
        let inputs = random_inputs(program, n, cfg.seed.wrapping_add(n as u64));
        let mut prepared = Prepared::new(program, &inputs)?;
        for _ in 0..cfg.warmup {
            prepared.run(cfg.mode, pool.as_ref())?;
        }
        let mut times = Vec::with_capacity(reps);
        let mut io = Vec::new();
        for _ in 0..reps {
            times.push(prepared.run(cfg.mode, pool.as_ref())?.0 * 1e6);
            if cfg.io_sim {
                io.push(prepared.marshal(&inputs)?.0 * 1e6);
            }
        }
        let (mean_us, std_us) = mean_std(&times);
        rows.push(SweepRow {
            n,
            mode: cfg.mode,
            workers: if cfg.mode == Mode::Serial { 1 } else { cfg.workers },
            mean_us,
            std_us,
            reps,
            io_us: cfg.io_sim.then(|| mean_std(&io).0),
            oversubscribed: cfg.mode == Mode::Parallel && cfg.workers > physical_cores(),
        });
    }
    Ok(rows)
}

/// One row of an exported latency table.
#[derive(Clone, Debug, PartialEq)]
pub struct LatencyRow {
    pub algorithm: String,
    pub model: String,
    pub n: usize,
    pub mode: Mode,
    pub workers: usize,
    pub mean_us: f64,
    pub std_us: f64,
    pub reps: usize,
    pub speedup: Option<f64>,
    pub io_us: Option<f64>,
}

pub const CSV_COLUMNS: [&str; 8] = ["algorithm", "model", "N", "mode", "workers", "mean_us", "std_us", "reps"];

#[derive(Debug, Error)]
pub enum CsvError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("missing column `{0}`")]
    MissingColumn(&'static str),
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("row {row}: bad `{column}` value `{value}`")]
    Field { row: usize, column: String, value: String },
}

/// Write rows with the standard columns, plus `speedup` and `io_us` when
/// any row carries them.
pub fn write_csv<W: io::Write>(rows: &[LatencyRow], out: W) -> Result<(), CsvError> {
    let with_speedup = rows.iter().any(|r| r.speedup.is_some());
    let with_io = rows.iter().any(|r| r.io_us.is_some());
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<&str> = CSV_COLUMNS.to_vec();
    if with_speedup {
        header.push("speedup");
    }
    if with_io {
        header.push("io_us");
    }
    w.write_record(&header)?;
    let opt = |x: Option<f64>, digits: usize| x.map_or_else(String::new, |v| format!("{v:.digits$}"));
    for r in rows {
        let mut rec = vec![
            r.algorithm.clone(),
            r.model.clone(),
            r.n.to_string(),
            r.mode.name().to_string(),
            r.workers.to_string(),
            format!("{:.3}", r.mean_us),
            format!("{:.3}", r.std_us),
            r.reps.to_string(),
        ];
        if with_speedup {
            rec.push(opt(r.speedup, 4));
        }
        if with_io {
            rec.push(opt(r.io_us, 3));
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Parse a latency table written by [`write_csv`].
pub fn read_csv(text: &str) -> Result<Vec<LatencyRow>, CsvError> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    for h in &header {
        if !CSV_COLUMNS.contains(&h.as_str()) && h != "speedup" && h != "io_us" {
            return Err(CsvError::UnknownColumn(h.clone()));
        }
    }
    let col = |name: &'static str| header.iter().position(|h| h == name);
    let mut idx = [0usize; 8];
    for (k, name) in CSV_COLUMNS.iter().enumerate() {
        idx[k] = col(name).ok_or(CsvError::MissingColumn(name))?;
    }
    let (speedup, io_us) = (col("speedup"), col("io_us"));
    let mut rows = Vec::new();
    for (row, rec) in r.records().enumerate() {
        let rec = rec?;
        let field = |k: usize| rec.get(k).unwrap_or("");
        let bad = |column: &str, value: &str| CsvError::Field { row: row + 1, column: column.into(), value: value.into() };
        let count = |k: usize, name: &str, min: usize| -> Result<usize, CsvError> {
            let v = field(k);
            v.parse::<usize>().ok().filter(|&x| x >= min).ok_or_else(|| bad(name, v))
        };
        let number = |k: usize, name: &str| -> Result<f64, CsvError> {
            let v = field(k);
            v.parse::<f64>().ok().filter(|x| x.is_finite() && *x >= 0.0).ok_or_else(|| bad(name, v))
        };
        let optional = |k: Option<usize>, name: &str| -> Result<Option<f64>, CsvError> {
            match k {
                Some(k) if !field(k).is_empty() => number(k, name).map(Some),
                _ => Ok(None),
            }
        };
        let mode_text = field(idx[3]);
        rows.push(LatencyRow {
            algorithm: field(idx[0]).to_string(),
            model: field(idx[1]).to_string(),
            n: count(idx[2], "N", 1)?,
            mode: mode_text.parse().map_err(|_| bad("mode", mode_text))?,
            workers: count(idx[4], "workers", 1)?,
            mean_us: number(idx[5], "mean_us")?,
            std_us: number(idx[6], "std_us")?,
            reps: count(idx[7], "reps", 1)?,
            speedup: optional(speedup, "speedup")?,
            io_us: optional(io_us, "io_us")?,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(n: usize, mode: Mode, speedup: Option<f64>, io_us: Option<f64>) -> LatencyRow {
        LatencyRow {
            algorithm: "gradFD".into(),
            model: "chain7".into(),
            n,
            mode,
            workers: 4,
            mean_us: 12.5,
            std_us: 0.25,
            reps: 10,
            speedup,
            io_us,
        }
    }

    #[test]
    fn csv_round_trips_with_and_without_optional_columns() {
        for (s, io) in [(None, None), (Some(1.5), None), (Some(2.0), Some(3.25))] {
            let rows = vec![row(16, Mode::Serial, s, io), row(256, Mode::Parallel, s, io)];
            let mut buf = Vec::new();
            write_csv(&rows, &mut buf).unwrap();
            let text = String::from_utf8(buf).unwrap();
            assert_eq!(text.lines().next().unwrap().split(',').count(), 8 + s.is_some() as usize + io.is_some() as usize);
            assert_eq!(read_csv(&text).unwrap(), rows);
        }
    }

    #[test]
    fn malformed_tables_are_rejected() {
        let head = CSV_COLUMNS.join(",");
        assert!(matches!(read_csv("algorithm,model\n"), Err(CsvError::MissingColumn("N"))));
        assert!(read_csv(&format!("{head},extra\n")).is_err());
        assert!(read_csv(&format!("{head}\nID,m,0,serial,1,1,0,1\n")).is_err());
        assert!(read_csv(&format!("{head}\nID,m,4,sideways,1,1,0,1\n")).is_err());
        assert!(read_csv(&format!("{head}\nID,m,4,serial,1,NaN,0,1\n")).is_err());
        assert_eq!(read_csv(&format!("{head}\nID,m,4,serial,1,1.5,0,1\n")).unwrap().len(), 1);
    }

    #[test]
    fn mean_and_sample_deviation() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(mean_std(&[7.0]), (7.0, 0.0));
    }
}
