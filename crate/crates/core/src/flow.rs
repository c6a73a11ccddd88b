//! Flow-record ingestion and sessionization.
//!
//! The canonical input is a text file with one attack record per line,
//! `ip_index<sep>timestamp`, where the separator is a comma or whitespace
//! and lines starting with `#` are comments. Raw packet events can be
//! aggregated into flows with the usual timeout/lifetime rules before
//! analysis.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One attack event: a victim IP index (1-based, consecutive) and a
/// timestamp in seconds. Timestamps keep microsecond precision.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowRecord {
    pub ip: u32,
    pub t: f64,
}

impl FlowRecord {
    pub fn new(ip: u32, t: f64) -> Self {
        FlowRecord { ip, t }
    }
}

/// A raw packet arrival, prior to flow aggregation. Same shape as a
/// flow record; the distinction is semantic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PacketEvent {
    pub ip: u32,
    pub t: f64,
}

/// Timeout/lifetime rules for grouping packets into flows.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SessionizeParams {
    /// A flow expires after this many seconds without a new packet.
    pub flow_timeout: f64,
    /// A flow expires this many seconds after its first packet.
    pub flow_lifetime: f64,
}

impl SessionizeParams {
    pub fn new(flow_timeout: f64, flow_lifetime: f64) -> Result<Self> {
        let p = SessionizeParams { flow_timeout, flow_lifetime };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.flow_timeout > 0.0) || !self.flow_timeout.is_finite() {
            return Err(Error::validation("flow_timeout must be positive"));
        }
        if !(self.flow_timeout <= self.flow_lifetime) || !self.flow_lifetime.is_finite() {
            return Err(Error::validation("flow_lifetime must be >= flow_timeout"));
        }
        Ok(())
    }
}

impl Default for SessionizeParams {
    fn default() -> Self {
        SessionizeParams { flow_timeout: 60.0, flow_lifetime: 300.0 }
    }
}

fn parse_line(line_no: usize, line: &str) -> Result<Option<FlowRecord>> {
    let trimmed = line.trim();
    if trimmed.is_empty() || trimmed.starts_with('#') {
        return Ok(None);
    }
    // Canonical CSV header, accepted so parse round-trips serialize.
    if trimmed == "ip,t" {
        return Ok(None);
    }
    let mut fields = trimmed.split(|c: char| c == ',' || c.is_whitespace()).filter(|s| !s.is_empty());
    let (ip_str, t_str) = match (fields.next(), fields.next(), fields.next()) {
        (Some(a), Some(b), None) => (a, b),
        _ => {
            return Err(Error::Parse {
                line: line_no,
                reason: format!("expected two fields `ip timestamp`, got {trimmed:?}"),
            })
        }
    };
    let ip: u32 = ip_str.parse().map_err(|_| {
        Error::validation(format!("line {line_no}: ip_index {ip_str:?} is not a positive integer"))
    })?;
    if ip < 1 {
        return Err(Error::validation(format!("line {line_no}: ip_index must be >= 1")));
    }
    let t: f64 = t_str.parse().map_err(|_| {
        Error::Parse { line: line_no, reason: format!("timestamp {t_str:?} is not a number") }
    })?;
    if !t.is_finite() || t < 0.0 {
        return Err(Error::validation(format!("line {line_no}: timestamp must be finite and >= 0")));
    }
    Ok(Some(FlowRecord { ip, t }))
}

/// Parse flow records from a text stream. Records are returned sorted by
/// timestamp (stable, so simultaneous attacks keep their input order and
/// duplicates survive).
pub fn parse_flow_records<R: BufRead>(reader: R) -> Result<Vec<FlowRecord>> {
    let mut records = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::Parse { line: idx + 1, reason: e.to_string() })?;
        if let Some(rec) = parse_line(idx + 1, &line)? {
            records.push(rec);
        }
    }
    records.sort_by(|a, b| a.t.total_cmp(&b.t));
    Ok(records)
}

/// Parse flow records from a file path.
pub fn read_flow_file(path: &Path) -> Result<Vec<FlowRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_flow_records(BufReader::new(file))
}

/// Write records in the canonical CSV form (`ip,t` header, microsecond
/// timestamp precision).
pub fn write_flow_csv<W: Write>(records: &[FlowRecord], writer: &mut W) -> std::io::Result<()> {
    writeln!(writer, "ip,t")?;
    for r in records {
        writeln!(writer, "{},{:.6}", r.ip, r.t)?;
    }
    Ok(())
}

pub fn write_flow_file(records: &[FlowRecord], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_flow_csv(records, &mut w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Basic shape of an ingested record list.
#[derive(Debug, Clone, Serialize)]
pub struct SpanSummary {
    pub records: usize,
    pub distinct_ips: usize,
    pub max_ip: u32,
    pub t_min: f64,
    pub t_max: f64,
    pub duration: f64,
}

pub fn span_summary(records: &[FlowRecord]) -> SpanSummary {
    let mut ips: Vec<u32> = records.iter().map(|r| r.ip).collect();
    ips.sort_unstable();
    ips.dedup();
    let t_min = records.first().map(|r| r.t).unwrap_or(0.0);
    let t_max = records.last().map(|r| r.t).unwrap_or(0.0);
    SpanSummary {
        records: records.len(),
        distinct_ips: ips.len(),
        max_ip: ips.last().copied().unwrap_or(0),
        t_min,
        t_max,
        duration: t_max - t_min,
    }
}

/// Group packet events into flows. A packet joins the current flow iff its
/// gap from the previous packet is within `flow_timeout` AND its offset from
/// the flow's first packet is within `flow_lifetime` (both boundaries
/// inclusive). Each flow emits one record at its first packet's time.
///
/// The lifetime is anchored at the flow's first packet. Input order does not
/// matter; events are sorted internally per IP.
pub fn sessionize(events: &[PacketEvent], params: &SessionizeParams) -> Result<Vec<FlowRecord>> {
    params.validate()?;
    for e in events {
        if e.ip < 1 {
            return Err(Error::validation("packet ip_index must be >= 1"));
        }
        if !e.t.is_finite() || e.t < 0.0 {
            return Err(Error::validation("packet timestamp must be finite and >= 0"));
        }
    }
    let mut by_ip: std::collections::BTreeMap<u32, Vec<f64>> = std::collections::BTreeMap::new();
    for e in events {
        by_ip.entry(e.ip).or_default().push(e.t);
    }
    let mut flows = Vec::new();
    for (ip, mut ts) in by_ip {
        ts.sort_by(|a, b| a.total_cmp(b));
        let mut flow_start: Option<f64> = None;
        let mut last_t = 0.0;
        for t in ts {
            match flow_start {
                Some(start) if t - last_t <= params.flow_timeout && t - start <= params.flow_lifetime => {
                    last_t = t;
                }
                _ => {
                    flows.push(FlowRecord { ip, t });
                    flow_start = Some(t);
                    last_t = t;
                }
            }
        }
    }
    flows.sort_by(|a, b| a.t.total_cmp(&b.t).then(a.ip.cmp(&b.ip)));
    Ok(flows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Cursor;

    #[test]
    fn parse_sorts_by_timestamp() {
        let recs = parse_flow_records(Cursor::new("3, 12.5\n1, 4.0")).unwrap();
        assert_eq!(recs, vec![FlowRecord::new(1, 4.0), FlowRecord::new(3, 12.5)]);
    }

    #[test]
    fn parse_empty_input() {
        let recs = parse_flow_records(Cursor::new("")).unwrap();
        assert!(recs.is_empty());
    }

    #[test]
    fn parse_accepts_whitespace_comments_and_header() {
        let recs = parse_flow_records(Cursor::new("# comment\nip,t\n2 1.5\n\n4\t3.25")).unwrap();
        assert_eq!(recs, vec![FlowRecord::new(2, 1.5), FlowRecord::new(4, 3.25)]);
    }

    #[test]
    fn parse_preserves_simultaneous_duplicates() {
        let recs = parse_flow_records(Cursor::new("5, 1.0\n5, 1.0\n2, 1.0")).unwrap();
        assert_eq!(recs.len(), 3);
        assert_eq!(recs[0].ip, 5);
        assert_eq!(recs[2].ip, 2);
    }

    #[test]
    fn parse_rejects_malformed_line_with_line_number() {
        let err = parse_flow_records(Cursor::new("1, 2.0\nbogus")).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn parse_rejects_bad_ip_and_negative_time() {
        assert!(matches!(
            parse_flow_records(Cursor::new("0, 2.0")),
            Err(Error::Validation(_))
        ));
        assert!(matches!(
            parse_flow_records(Cursor::new("1.5, 2.0")),
            Err(Error::Validation(_))
        ));
        assert!(matches!(
            parse_flow_records(Cursor::new("1, -2.0")),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn span_summary_counts_distinct_ips() {
        let recs = vec![
            FlowRecord::new(1, 0.0),
            FlowRecord::new(3, 10.0),
            FlowRecord::new(3, 1_555_200.0),
        ];
        let s = span_summary(&recs);
        assert_eq!(s.distinct_ips, 2);
        assert_eq!(s.records, 3);
        assert!((s.duration - 1_555_200.0).abs() < 1e-9);
    }

    #[test]
    fn sessionize_splits_on_timeout() {
        let events: Vec<PacketEvent> =
            [0.0, 30.0, 100.0].iter().map(|&t| PacketEvent { ip: 1, t }).collect();
        let flows = sessionize(&events, &SessionizeParams::default()).unwrap();
        assert_eq!(flows, vec![FlowRecord::new(1, 0.0), FlowRecord::new(1, 100.0)]);
    }

    #[test]
    fn sessionize_splits_on_lifetime() {
        // Steps of 50 s stay within the timeout, so only the 300 s lifetime
        // (inclusive, anchored at the first packet) forces a new flow.
        let events: Vec<PacketEvent> =
            (0..=8).map(|k| PacketEvent { ip: 7, t: 50.0 * k as f64 }).collect();
        let flows = sessionize(&events, &SessionizeParams::default()).unwrap();
        assert_eq!(flows, vec![FlowRecord::new(7, 0.0), FlowRecord::new(7, 350.0)]);
    }

    #[test]
    fn sessionize_single_packet() {
        let flows =
            sessionize(&[PacketEvent { ip: 2, t: 42.5 }], &SessionizeParams::default()).unwrap();
        assert_eq!(flows, vec![FlowRecord::new(2, 42.5)]);
    }

    #[test]
    fn sessionize_boundary_gap_is_included() {
        let events: Vec<PacketEvent> =
            [0.0, 60.0, 120.0].iter().map(|&t| PacketEvent { ip: 1, t }).collect();
        let flows = sessionize(&events, &SessionizeParams::default()).unwrap();
        assert_eq!(flows.len(), 1, "gap of exactly flow_timeout stays in the flow");
    }

    #[test]
    fn sessionize_rejects_bad_params() {
        assert!(SessionizeParams::new(0.0, 300.0).is_err());
        assert!(SessionizeParams::new(60.0, 30.0).is_err());
        assert!(SessionizeParams::new(60.0, 60.0).is_ok());
    }

    proptest! {
        #[test]
        fn sessionize_is_order_invariant(
            mut ts in proptest::collection::vec((1u32..4, 0u32..100_000), 1..200)
        ) {
            let events: Vec<PacketEvent> = ts
                .iter()
                .map(|&(ip, t)| PacketEvent { ip, t: t as f64 / 10.0 })
                .collect();
            let base = sessionize(&events, &SessionizeParams::default()).unwrap();
            ts.reverse();
            let events_rev: Vec<PacketEvent> = ts
                .iter()
                .map(|&(ip, t)| PacketEvent { ip, t: t as f64 / 10.0 })
                .collect();
            let rev = sessionize(&events_rev, &SessionizeParams::default()).unwrap();
            prop_assert_eq!(base, rev);
        }

        #[test]
        fn flow_count_bounded_by_packets(
            ts in proptest::collection::vec(0u32..10_000, 1..100)
        ) {
            let events: Vec<PacketEvent> =
                ts.iter().map(|&t| PacketEvent { ip: 1, t: t as f64 }).collect();
            let params = SessionizeParams::default();
            let flows = sessionize(&events, &params).unwrap();
            prop_assert!(flows.len() <= events.len());

            let mut sorted: Vec<f64> = events.iter().map(|e| e.t).collect();
            sorted.sort_by(|a, b| a.total_cmp(b));
            sorted.dedup();
            let all_gaps_exceed = sorted.windows(2).all(|w| w[1] - w[0] > params.flow_timeout);
            if all_gaps_exceed {
                prop_assert_eq!(flows.len(), sorted.len());
            }
        }

        #[test]
        fn parse_serialize_roundtrip(
            recs in proptest::collection::vec((1u32..500, 0u64..1_000_000_000), 0..100)
        ) {
            // Timestamps on the microsecond grid survive the text round trip.
            let mut records: Vec<FlowRecord> = recs
                .iter()
                .map(|&(ip, us)| FlowRecord { ip, t: us as f64 / 1e6 })
                .collect();
            records.sort_by(|a, b| a.t.total_cmp(&b.t));
            let mut buf = Vec::new();
            write_flow_csv(&records, &mut buf).unwrap();
            let parsed = parse_flow_records(Cursor::new(buf)).unwrap();
            prop_assert_eq!(records, parsed);
        }
    }
}
