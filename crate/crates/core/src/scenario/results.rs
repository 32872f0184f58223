//! CSV tables and FlexONC gain tables.
//!
//! runs.csv has one row per (protocol, ber, seed) with `flow = all`; flows.csv breaks each run
//! down per flow. Gains are always computed from parsed runs.csv rows, so recomputing them from
//! the file reproduces gains.csv exactly.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use crate::coding::Protocol;
use crate::error::ResultsError;
use crate::scenario::sweep::SweepResult;
use crate::sim::throughput;

pub const RUNS_HEADER: [&str; 12] = [
    "scenario",
    "protocol",
    "ber",
    "seed",
    "flow",
    "delivered_bytes",
    "throughput_bps",
    "tx_total",
    "tx_coded",
    "retx",
    "dups",
    "helper_fwds",
];

pub const FLOWS_HEADER: [&str; 12] = [
    "scenario",
    "protocol",
    "ber",
    "seed",
    "flow",
    "src",
    "dst",
    "generated",
    "delivered",
    "delivered_bytes",
    "throughput_bps",
    "app_duplicates",
];

pub const SUMMARY_HEADER: [&str; 7] = [
    "scenario",
    "protocol",
    "ber",
    "seeds",
    "mean_bps",
    "std_bps",
    "dups_mean",
];

pub const GAINS_HEADER: [&str; 4] = ["scenario", "ber", "base", "gain_pct"];

/// Rendered in place of a gain whose baseline throughput is zero.
pub const UNDEFINED_GAIN: &str = "—";

#[derive(Clone, Debug, PartialEq)]
pub struct RunRow {
    pub scenario: String,
    pub protocol: Protocol,
    pub ber: f64,
    pub seed: u64,
    pub flow: String,
    pub delivered_bytes: u64,
    pub throughput_bps: f64,
    pub tx_total: u64,
    pub tx_coded: u64,
    pub retx: u64,
    /// Duplicates suppressed at forwarders and destinations.
    pub dups: u64,
    pub helper_fwds: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub scenario: String,
    pub protocol: Protocol,
    pub ber: f64,
    pub seeds: usize,
    pub mean_bps: f64,
    /// Sample standard deviation; 0 for a single seed.
    pub std_bps: f64,
    pub dups_mean: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GainRow {
    pub scenario: String,
    pub ber: f64,
    pub base: Protocol,
    /// `None` when the baseline delivered nothing.
    pub gain_pct: Option<f64>,
}

/// Millibit resolution keeps the CSV readable; the rounded value is what every table uses.
fn round_bps(x: f64) -> f64 {
    (x * 1e3).round() / 1e3
}

impl SweepResult {
    pub fn run_rows(&self) -> Vec<RunRow> {
        self.cells
            .iter()
            .map(|c| {
                let m = &c.metrics;
                RunRow {
                    scenario: self.scenario.clone(),
                    protocol: c.cell.protocol,
                    ber: c.cell.ber,
                    seed: c.cell.seed,
                    flow: "all".into(),
                    delivered_bytes: m.flows.iter().map(|f| f.delivered_bytes).sum(),
                    throughput_bps: round_bps(throughput(m, m.duration).aggregate),
                    tx_total: m.tx_total,
                    tx_coded: m.tx_coded,
                    retx: m.retransmissions,
                    dups: m.duplicates_suppressed,
                    helper_fwds: m.helper_forwards,
                }
            })
            .collect()
    }

    pub fn write_flows_csv<W: Write>(&self, w: W) -> Result<(), ResultsError> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(FLOWS_HEADER)?;
        for c in &self.cells {
            let tp = throughput(&c.metrics, c.metrics.duration);
            for (f, bps) in c.metrics.flows.iter().zip(&tp.per_flow) {
                out.write_record([
                    self.scenario.clone(),
                    c.cell.protocol.name().to_string(),
                    c.cell.ber.to_string(),
                    c.cell.seed.to_string(),
                    f.flow.0.to_string(),
                    f.src.0.to_string(),
                    f.dst.0.to_string(),
                    f.generated.to_string(),
                    f.delivered.to_string(),
                    f.delivered_bytes.to_string(),
                    round_bps(*bps).to_string(),
                    f.duplicate_deliveries.to_string(),
                ])?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

pub fn write_runs_csv<W: Write>(rows: &[RunRow], w: W) -> Result<(), ResultsError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(RUNS_HEADER)?;
    for r in rows {
        out.write_record([
            r.scenario.clone(),
            r.protocol.name().to_string(),
            r.ber.to_string(),
            r.seed.to_string(),
            r.flow.clone(),
            r.delivered_bytes.to_string(),
            r.throughput_bps.to_string(),
            r.tx_total.to_string(),
            r.tx_coded.to_string(),
            r.retx.to_string(),
            r.dups.to_string(),
            r.helper_fwds.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_runs_csv<R: Read>(r: R) -> Result<Vec<RunRow>, ResultsError> {
    let mut rdr = csv::Reader::from_reader(r);
    let header = rdr.headers()?.clone();
    if header.iter().ne(RUNS_HEADER.iter().copied()) {
        return Err(ResultsError::BadRow {
            row: 0,
            msg: format!("header must be `{}`", RUNS_HEADER.join(",")),
        });
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        let bad = |col: &str, e: String| ResultsError::BadRow {
            row,
            msg: format!("{col}: {e}"),
        };
        let int = |k: usize| {
            rec[k]
                .parse::<u64>()
                .map_err(|e| bad(RUNS_HEADER[k], e.to_string()))
        };
        let float = |k: usize| {
            rec[k]
                .parse::<f64>()
                .map_err(|e| bad(RUNS_HEADER[k], e.to_string()))
        };
        rows.push(RunRow {
            scenario: rec[0].to_string(),
            protocol: rec[1].parse().map_err(|e| bad("protocol", e))?,
            ber: float(2)?,
            seed: int(3)?,
            flow: rec[4].to_string(),
            delivered_bytes: int(5)?,
            throughput_bps: float(6)?,
            tx_total: int(7)?,
            tx_coded: int(8)?,
            retx: int(9)?,
            dups: int(10)?,
            helper_fwds: int(11)?,
        });
    }
    Ok(rows)
}

/// Aggregate rows grouped by (scenario, protocol, ber), in first-appearance order of scenarios
/// and ascending protocol and BER.
fn groups(rows: &[RunRow]) -> Vec<(String, Protocol, f64, Vec<&RunRow>)> {
    let mut scenarios: Vec<&str> = Vec::new();
    for r in rows.iter().filter(|r| r.flow == "all") {
        if !scenarios.contains(&r.scenario.as_str()) {
            scenarios.push(&r.scenario);
        }
    }
    let mut out = Vec::new();
    for s in scenarios {
        let mut by: BTreeMap<(Protocol, u64), Vec<&RunRow>> = BTreeMap::new();
        for r in rows.iter().filter(|r| r.flow == "all" && r.scenario == s) {
            by.entry((r.protocol, ber_key(r.ber))).or_default().push(r);
        }
        for ((p, _), rs) in by {
            out.push((s.to_string(), p, rs[0].ber, rs));
        }
    }
    out
}

/// Order-preserving key for non-negative BERs.
fn ber_key(ber: f64) -> u64 {
    ber.to_bits()
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

pub fn summarize(rows: &[RunRow]) -> Vec<SummaryRow> {
    groups(rows)
        .into_iter()
        .map(|(scenario, protocol, ber, rs)| {
            let tp: Vec<f64> = rs.iter().map(|r| r.throughput_bps).collect();
            let dups: Vec<f64> = rs.iter().map(|r| r.dups as f64).collect();
            SummaryRow {
                scenario,
                protocol,
                ber,
                seeds: rs.len(),
                mean_bps: mean(&tp),
                std_bps: sample_std(&tp),
                dups_mean: mean(&dups),
            }
        })
        .collect()
}

pub fn write_summary_csv<W: Write>(rows: &[SummaryRow], w: W) -> Result<(), ResultsError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(SUMMARY_HEADER)?;
    for r in rows {
        out.write_record([
            r.scenario.clone(),
            r.protocol.name().to_string(),
            r.ber.to_string(),
            r.seeds.to_string(),
            format!("{:.3}", r.mean_bps),
            format!("{:.3}", r.std_bps),
            format!("{:.1}", r.dups_mean),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// FlexONC's gain over each baseline: (T_flexonc - T_base) / T_base in percent, per BER, from
/// seed-mean throughputs. Every BER with a FlexONC cell needs a cell for every baseline.
pub fn gain_table(rows: &[RunRow], baselines: &[Protocol]) -> Result<Vec<GainRow>, ResultsError> {
    let summary = summarize(rows);
    let cell = |scenario: &str, p: Protocol, ber: f64| {
        summary
            .iter()
            .find(|s| s.scenario == scenario && s.protocol == p && s.ber == ber)
            .map(|s| s.mean_bps)
    };
    let mut out = Vec::new();
    for flex in summary.iter().filter(|s| s.protocol == Protocol::FlexOnc) {
        for &base in baselines.iter().filter(|b| **b != Protocol::FlexOnc) {
            let tb = cell(&flex.scenario, base, flex.ber).ok_or_else(|| ResultsError::MissingCell {
                scenario: flex.scenario.clone(),
                protocol: base.name().to_string(),
                ber: flex.ber,
            })?;
            out.push(GainRow {
                scenario: flex.scenario.clone(),
                ber: flex.ber,
                base,
                gain_pct: (tb > 0.0).then(|| (flex.mean_bps - tb) / tb * 100.0),
            });
        }
    }
    Ok(out)
}

/// Baselines present in `rows`, most recent protocol first (BEND, COPE, PLAIN).
pub fn baselines_in(rows: &[RunRow]) -> Vec<Protocol> {
    let mut v: Vec<Protocol> = Protocol::ALL
        .into_iter()
        .filter(|p| *p != Protocol::FlexOnc && rows.iter().any(|r| r.protocol == *p))
        .collect();
    v.reverse();
    v
}

pub fn format_gain(g: Option<f64>) -> String {
    match g {
        Some(v) => format!("{v:.2}"),
        None => UNDEFINED_GAIN.to_string(),
    }
}

pub fn write_gains_csv<W: Write>(rows: &[GainRow], w: W) -> Result<(), ResultsError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(GAINS_HEADER)?;
    for r in rows {
        out.write_record([
            r.scenario.clone(),
            r.ber.to_string(),
            r.base.name().to_string(),
            format_gain(r.gain_pct),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// One line per BER with a column per baseline, e.g.
/// `2e-4  bend +48.6%  cope +147.8%  plain +182.3%`.
pub fn render_gain_table(rows: &[GainRow]) -> String {
    let mut bases: Vec<Protocol> = Vec::new();
    for r in rows {
        if !bases.contains(&r.base) {
            bases.push(r.base);
        }
    }
    let mut text = String::new();
    let mut last: Option<(&str, f64)> = None;
    for r in rows {
        if last != Some((r.scenario.as_str(), r.ber)) {
            if last.is_some() {
                text.push('\n');
            }
            text += &format!("{:<12} ber {:<8e}", r.scenario, r.ber);
            last = Some((r.scenario.as_str(), r.ber));
        }
        let g = match r.gain_pct {
            Some(v) => format!("{v:+.1}%"),
            None => UNDEFINED_GAIN.to_string(),
        };
        text += &format!("  {:>7} {:>8}", r.base.name(), g);
    }
    if !text.is_empty() {
        text.push('\n');
    }
    text
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(p: Protocol, ber: f64, seed: u64, tp: f64) -> RunRow {
        RunRow {
            scenario: "s".into(),
            protocol: p,
            ber,
            seed,
            flow: "all".into(),
            delivered_bytes: (tp / 8.0) as u64,
            throughput_bps: tp,
            tx_total: 1,
            tx_coded: 0,
            retx: 0,
            dups: 2,
            helper_fwds: 0,
        }
    }

    #[test]
    fn runs_csv_round_trips() {
        let rows = vec![
            row(Protocol::Plain, 2e-6, 1, 1234.567),
            row(Protocol::FlexOnc, 0.0, 9, 0.1),
        ];
        let mut buf = Vec::new();
        write_runs_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("scenario,protocol,ber,seed,flow,delivered_bytes,throughput_bps,"));
        assert_eq!(read_runs_csv(&buf[..]).unwrap(), rows);
    }

    #[test]
    fn gains_follow_definition() {
        let rows = vec![
            row(Protocol::Bend, 1e-4, 1, 100.0),
            row(Protocol::Bend, 1e-4, 2, 300.0),
            row(Protocol::FlexOnc, 1e-4, 1, 250.0),
            row(Protocol::FlexOnc, 1e-4, 2, 350.0),
            row(Protocol::Plain, 1e-4, 1, 0.0),
        ];
        let g = gain_table(&rows, &[Protocol::Bend, Protocol::Plain]).unwrap();
        assert_eq!(g.len(), 2);
        assert_eq!(g[0].gain_pct, Some(50.0));
        assert_eq!(g[1].gain_pct, None);
        assert_eq!(format_gain(g[1].gain_pct), "—");
    }

    #[test]
    fn equal_throughput_is_zero_gain() {
        let rows = vec![
            row(Protocol::Cope, 0.0, 1, 77.0),
            row(Protocol::FlexOnc, 0.0, 1, 77.0),
        ];
        let g = gain_table(&rows, &[Protocol::Cope]).unwrap();
        assert_eq!(g[0].gain_pct, Some(0.0));
    }

    #[test]
    fn missing_baseline_is_an_error() {
        let rows = vec![
            row(Protocol::FlexOnc, 0.0, 1, 77.0),
            row(Protocol::Cope, 1e-4, 1, 77.0),
        ];
        let err = gain_table(&rows, &[Protocol::Cope]).unwrap_err();
        assert!(matches!(err, ResultsError::MissingCell { ref protocol, .. } if protocol == "cope"));
    }

    #[test]
    fn summary_mean_and_sample_std() {
        let rows = vec![
            row(Protocol::Plain, 0.0, 1, 2.0),
            row(Protocol::Plain, 0.0, 2, 4.0),
        ];
        let s = summarize(&rows);
        assert_eq!(s.len(), 1);
        assert_eq!((s[0].mean_bps, s[0].seeds), (3.0, 2));
        assert!((s[0].std_bps - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn bad_rows_are_reported() {
        let text = format!("{}\ns,plain,x,1,all,0,0,0,0,0,0,0\n", RUNS_HEADER.join(","));
        assert!(matches!(
            read_runs_csv(text.as_bytes()).unwrap_err(),
            ResultsError::BadRow { row: 1, .. }
        ));
        assert!(read_runs_csv("a,b\n".as_bytes()).is_err());
    }

    #[test]
    fn baselines_newest_first() {
        let rows = vec![
            row(Protocol::Plain, 0.0, 1, 1.0),
            row(Protocol::Bend, 0.0, 1, 1.0),
        ];
        assert_eq!(baselines_in(&rows), vec![Protocol::Bend, Protocol::Plain]);
    }
}
