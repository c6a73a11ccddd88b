//! The IP×time attack-frequency matrix and its derived series.
//!
//! `w_i(t)` counts the attacks on victim IP `i` during time bin `t` of
//! width `delta_t`. Bins are half-open `[start, end)`, so every record
//! belongs to exactly one bin. Coarse-graining maps counts to integer
//! states `X(t)` = nearest integer of `log10 w(t)`, with empty bins at
//! the ground state `X = -1`.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::FlowRecord;
use crate::IpRange;

/// Dense IP×bin grid of attack counts.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackMatrix {
    delta_t: f64,
    t0: f64,
    n_ips: usize,
    n_bins: usize,
    counts: Vec<u32>,
}

impl AttackMatrix {
    pub fn zeros(delta_t: f64, t0: f64, n_ips: usize, n_bins: usize) -> Self {
        AttackMatrix { delta_t, t0, n_ips, n_bins, counts: vec![0; n_ips * n_bins] }
    }

    pub fn delta_t(&self) -> f64 {
        self.delta_t
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn n_ips(&self) -> usize {
        self.n_ips
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    /// Counts for a 1-based IP index.
    pub fn row(&self, ip: u32) -> &[u32] {
        let i = (ip - 1) as usize;
        &self.counts[i * self.n_bins..(i + 1) * self.n_bins]
    }

    pub fn count(&self, ip: u32, bin: usize) -> u32 {
        self.row(ip)[bin]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| c as u64).sum()
    }

    pub fn full_range(&self) -> IpRange {
        IpRange::new(1, self.n_ips as u32)
    }
}

/// What to do with records falling outside the binning window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutOfRange {
    /// Fail on the first offending record (default).
    Reject,
    /// Drop offending records, reporting how many.
    Drop,
}

#[derive(Debug, Clone)]
pub struct Binned {
    pub matrix: AttackMatrix,
    pub dropped: usize,
}

/// Bin records into an [`AttackMatrix`]. When `n_bins` is `None` the bin
/// count is derived from the latest record, so the final record falls in the
/// last bin.
pub fn bin_attacks(
    records: &[FlowRecord],
    delta_t: f64,
    ip_count: usize,
    t0: f64,
    n_bins: Option<usize>,
    policy: OutOfRange,
) -> Result<Binned> {
    if !(delta_t > 0.0) || !delta_t.is_finite() {
        return Err(Error::validation("delta_t must be positive"));
    }
    if ip_count == 0 {
        return Err(Error::validation("ip_count must be >= 1"));
    }
    for r in records {
        if r.ip as usize > ip_count {
            return Err(Error::validation(format!(
                "record ip {} exceeds ip_count {}",
                r.ip, ip_count
            )));
        }
    }
    let n_bins = match n_bins {
        Some(n) => n,
        None => records
            .iter()
            .filter(|r| r.t >= t0)
            .map(|r| ((r.t - t0) / delta_t).floor() as usize + 1)
            .max()
            .unwrap_or(0),
    };
    let mut matrix = AttackMatrix::zeros(delta_t, t0, ip_count, n_bins);
    let mut dropped = 0usize;
    for r in records {
        let offset = r.t - t0;
        let bin = if offset >= 0.0 { (offset / delta_t).floor() as usize } else { usize::MAX };
        if offset < 0.0 || bin >= n_bins {
            match policy {
                OutOfRange::Reject => {
                    return Err(Error::validation(format!(
                        "record (ip {}, t {}) outside binning window [{}, {})",
                        r.ip,
                        r.t,
                        t0,
                        t0 + n_bins as f64 * delta_t
                    )))
                }
                OutOfRange::Drop => {
                    dropped += 1;
                    continue;
                }
            }
        }
        matrix.counts[(r.ip - 1) as usize * n_bins + bin] += 1;
    }
    Ok(Binned { matrix, dropped })
}

/// Coarse-grain one count: nearest integer of `log10 w`, half away from
/// zero; `w = 0` maps through `w = 0.1` to the ground state `-1`.
pub fn coarse_grain_count(w: u32) -> i32 {
    if w == 0 {
        -1
    } else {
        (w as f64).log10().round() as i32
    }
}

/// Per-IP sequence of coarse-grained states.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StateSequence {
    pub ip: u32,
    pub delta_t: f64,
    pub states: Vec<i32>,
}

/// Coarse-grain every row of the matrix.
pub fn coarse_grain(matrix: &AttackMatrix) -> Vec<StateSequence> {
    (1..=matrix.n_ips as u32)
        .map(|ip| StateSequence {
            ip,
            delta_t: matrix.delta_t,
            states: matrix.row(ip).iter().map(|&w| coarse_grain_count(w)).collect(),
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct Rebinned {
    pub matrix: AttackMatrix,
    /// Records in the trailing partial bin group, discarded by the rebin.
    pub dropped_records: u64,
    pub dropped_bins: usize,
}

/// Sum consecutive groups of `factor` bins into one. The trailing partial
/// group is dropped and its record count reported.
pub fn rebin(matrix: &AttackMatrix, factor: usize) -> Result<Rebinned> {
    if factor == 0 {
        return Err(Error::validation("rebin factor must be >= 1"));
    }
    let groups = matrix.n_bins / factor;
    let dropped_bins = matrix.n_bins - groups * factor;
    let mut out = AttackMatrix::zeros(matrix.delta_t * factor as f64, matrix.t0, matrix.n_ips, groups);
    let mut dropped_records = 0u64;
    for ip in 0..matrix.n_ips {
        let src = &matrix.counts[ip * matrix.n_bins..(ip + 1) * matrix.n_bins];
        let dst = &mut out.counts[ip * groups..(ip + 1) * groups];
        for (g, chunk) in src.chunks_exact(factor).take(groups).enumerate() {
            dst[g] = chunk.iter().sum();
        }
        dropped_records += src[groups * factor..].iter().map(|&c| c as u64).sum::<u64>();
    }
    Ok(Rebinned { matrix: out, dropped_records, dropped_bins })
}

/// Equal-length sections of one state sequence; the trailing remainder is
/// discarded.
#[derive(Debug, Clone)]
pub struct SectionSet {
    pub ip: u32,
    pub h_hours: f64,
    pub section_len: usize,
    pub sections: Vec<Vec<i32>>,
    pub dropped_states: usize,
}

/// Split a sequence into sections of `h` hours each (`floor(h*3600/delta_t)`
/// states per section).
pub fn section_split(seq: &StateSequence, h_hours: f64) -> Result<SectionSet> {
    if !(h_hours > 0.0) || !h_hours.is_finite() {
        return Err(Error::validation("section length h must be positive"));
    }
    let section_len = (h_hours * 3600.0 / seq.delta_t).floor() as usize;
    if section_len == 0 {
        return Err(Error::validation(format!(
            "section length {h_hours} h holds no state at delta_t {}",
            seq.delta_t
        )));
    }
    let n_sections = seq.states.len() / section_len;
    let sections = (0..n_sections)
        .map(|s| seq.states[s * section_len..(s + 1) * section_len].to_vec())
        .collect();
    Ok(SectionSet {
        ip: seq.ip,
        h_hours,
        section_len,
        sections,
        dropped_states: seq.states.len() - n_sections * section_len,
    })
}

/// CSV export, rows = IPs, columns = bins.
pub fn write_matrix_csv<W: Write>(matrix: &AttackMatrix, w: &mut W) -> std::io::Result<()> {
    write!(w, "ip")?;
    for b in 0..matrix.n_bins {
        write!(w, ",b{b}")?;
    }
    writeln!(w)?;
    for ip in 1..=matrix.n_ips as u32 {
        write!(w, "{ip}")?;
        for &c in matrix.row(ip) {
            write!(w, ",{c}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// State sequences as CSV of integers, rows = IPs.
pub fn write_states_csv<W: Write>(seqs: &[StateSequence], w: &mut W) -> std::io::Result<()> {
    writeln!(w, "ip,states...")?;
    for s in seqs {
        write!(w, "{}", s.ip)?;
        for x in &s.states {
            write!(w, ",{x}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

const MATRIX_MAGIC: &[u8; 4] = b"AFMX";
const MATRIX_VERSION: u32 = 1;

/// Compact binary form: magic, version, header {delta_t, t0, n_ips, n_bins},
/// then row-major u32 little-endian counts.
pub fn write_matrix_bin<W: Write>(matrix: &AttackMatrix, w: &mut W) -> std::io::Result<()> {
    w.write_all(MATRIX_MAGIC)?;
    w.write_all(&MATRIX_VERSION.to_le_bytes())?;
    w.write_all(&matrix.delta_t.to_le_bytes())?;
    w.write_all(&matrix.t0.to_le_bytes())?;
    w.write_all(&(matrix.n_ips as u64).to_le_bytes())?;
    w.write_all(&(matrix.n_bins as u64).to_le_bytes())?;
    for &c in &matrix.counts {
        w.write_all(&c.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_matrix_bin<R: Read>(r: &mut R) -> Result<AttackMatrix> {
    fn bad(msg: &str) -> Error {
        Error::validation(format!("matrix file: {msg}"))
    }
    let mut magic = [0u8; 4];
    let mut u32buf = [0u8; 4];
    let mut u64buf = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
    if &magic != MATRIX_MAGIC {
        return Err(bad("bad magic"));
    }
    r.read_exact(&mut u32buf).map_err(|_| bad("truncated header"))?;
    if u32::from_le_bytes(u32buf) != MATRIX_VERSION {
        return Err(bad("unsupported version"));
    }
    r.read_exact(&mut u64buf).map_err(|_| bad("truncated header"))?;
    let delta_t = f64::from_le_bytes(u64buf);
    r.read_exact(&mut u64buf).map_err(|_| bad("truncated header"))?;
    let t0 = f64::from_le_bytes(u64buf);
    r.read_exact(&mut u64buf).map_err(|_| bad("truncated header"))?;
    let n_ips = u64::from_le_bytes(u64buf) as usize;
    r.read_exact(&mut u64buf).map_err(|_| bad("truncated header"))?;
    let n_bins = u64::from_le_bytes(u64buf) as usize;
    let cells = n_ips
        .checked_mul(n_bins)
        .ok_or_else(|| bad("dimensions overflow"))?;
    let mut counts = vec![0u32; cells];
    for c in counts.iter_mut() {
        r.read_exact(&mut u32buf).map_err(|_| bad("truncated counts"))?;
        *c = u32::from_le_bytes(u32buf);
    }
    Ok(AttackMatrix { delta_t, t0, n_ips, n_bins, counts })
}

pub fn write_matrix_file(matrix: &AttackMatrix, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_matrix_bin(matrix, &mut w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_matrix_file(path: &Path) -> Result<AttackMatrix> {
    let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_matrix_bin(&mut file)
}
