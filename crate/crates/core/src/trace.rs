//! Recorded simulation samples and their CSV form.

use std::fs::File;
use std::io::{self, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::network::NetworkTopology;
use crate::plant::{PlantInputs, PlantState, StateLayout};

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("bad value `{value}` in column `{column}` at row {row}")]
    Parse {
        row: usize,
        column: String,
        value: String,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub t: f64,
    /// Number of integrator steps taken before this sample.
    pub step: u64,
    pub plant: PlantState,
    pub x_c: Vec<f64>,
    pub z_c: Vec<f64>,
    pub inputs: PlantInputs,
    /// Largest node mass-balance residual (both layers).
    pub mass_residual: f64,
    /// Largest `|V_sh + V_sc - capacity|` over tanks.
    pub capacity_error: f64,
    /// Input channels changed by saturation.
    pub clamped: usize,
}

impl Sample {
    pub fn row(&self) -> Vec<f64> {
        let mut row = vec![self.t];
        self.plant.pack_into(&mut row);
        row.extend_from_slice(&self.x_c);
        row.extend_from_slice(&self.z_c);
        row.extend_from_slice(&self.inputs.p_p);
        row.extend_from_slice(&self.inputs.flows.q_p);
        row.extend_from_slice(&self.inputs.flows.q_st);
        row.extend_from_slice(&self.inputs.p_c);
        row.extend_from_slice(&self.inputs.flows.q_c);
        row.extend_from_slice(&self.inputs.flows.q_s);
        row.extend_from_slice(&self.inputs.flows.q_r);
        row.push(self.mass_residual);
        row.push(self.capacity_error);
        row.push(self.clamped as f64);
        row.push(self.step as f64);
        row
    }
}

/// Column schema for a topology; fixed order matching [`Sample::row`].
pub fn trace_columns(topology: &NetworkTopology) -> Vec<String> {
    let layout = StateLayout::of(topology);
    let n_p = topology.n_producers();
    let n_c = topology.n_consumers();
    let mut cols = vec!["t".to_string()];
    cols.extend(layout.names(topology));
    let per = |prefix: &'static str, n: usize| (1..=n).map(move |i| format!("{prefix}_{i}"));
    cols.extend(per("x_c", n_c));
    cols.extend(per("z_c", n_c));
    cols.extend(per("P_p", n_p));
    cols.extend(per("q_p", n_p));
    cols.extend(per("q_st", n_p));
    cols.extend(per("P_c", n_c));
    cols.extend(per("q_c", n_c));
    for layer in ["s", "r"] {
        cols.extend(topology.edges().iter().map(|e| format!("q_{layer}_{}", e.id)));
    }
    cols.extend(
        ["mass_residual", "capacity_error", "clamped", "step"]
            .iter()
            .map(|s| s.to_string()),
    );
    cols
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationTrace {
    pub columns: Vec<String>,
    pub samples: Vec<Sample>,
    /// Nominal step size the trace was produced with.
    pub dt: f64,
}

impl SimulationTrace {
    pub fn new(topology: &NetworkTopology, dt: f64) -> Self {
        SimulationTrace {
            columns: trace_columns(topology),
            samples: Vec::new(),
            dt,
        }
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        self.samples.iter().map(|s| s.t)
    }

    pub fn last(&self) -> Option<&Sample> {
        self.samples.last()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }
}

/// A CSV trace read back from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl TraceTable {
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[k]).collect())
    }
}

pub fn write_trace_to<W: Write>(trace: &SimulationTrace, out: W) -> Result<(), TraceError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(&trace.columns)?;
    for s in &trace.samples {
        // `Display` for f64 prints the shortest representation that parses
        // back to the same bits.
        w.write_record(s.row().iter().map(|v| v.to_string()))?;
    }
    w.flush().map_err(|source| TraceError::Io {
        path: "<writer>".into(),
        source,
    })?;
    Ok(())
}

pub fn write_trace(trace: &SimulationTrace, path: &Path) -> Result<(), TraceError> {
    let file = File::create(path).map_err(|source| TraceError::Io {
        path: path.display().to_string(),
        source,
    })?;
    write_trace_to(trace, file)
}

pub fn read_trace_from<R: Read>(input: R) -> Result<TraceTable, TraceError> {
    let mut r = csv::Reader::from_reader(input);
    let columns: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for (row, rec) in r.records().enumerate() {
        let rec = rec?;
        let values = rec
            .iter()
            .enumerate()
            .map(|(k, v)| {
                v.parse::<f64>().map_err(|_| TraceError::Parse {
                    row,
                    column: columns.get(k).cloned().unwrap_or_default(),
                    value: v.to_string(),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(values);
    }
    Ok(TraceTable { columns, rows })
}

pub fn read_trace(path: &Path) -> Result<TraceTable, TraceError> {
    let file = File::open(path).map_err(|source| TraceError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_trace_from(file)
}

/// Whitespace-separated columns with a `#` header, for gnuplot.
pub fn write_gnuplot_data<W: Write>(trace: &SimulationTrace, mut out: W) -> io::Result<()> {
    writeln!(out, "# {}", trace.columns.join(" "))?;
    for s in &trace.samples {
        let row: Vec<String> = s.row().iter().map(|v| v.to_string()).collect();
        writeln!(out, "{}", row.join(" "))?;
    }
    Ok(())
}
