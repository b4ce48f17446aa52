use std::io::Write;

use serde::Serialize;

use super::buffer::SlotInfo;
use crate::error::{Error, Result};

/// Writes one CSV row per occupied slot.
pub fn write_slot_csv<W: Write>(slots: &[SlotInfo], out: &mut W) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for s in slots {
        w.serialize(s)?;
    }
    if slots.is_empty() {
        w.write_record(SlotInfo::COLUMNS)?;
    }
    w.flush()
}

/// Parses the output of [`write_slot_csv`].
pub fn read_slot_csv(text: &str) -> Result<Vec<SlotInfo>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header = r.headers().map_err(|e| Error::Format(format!("replay dump: {e}")))?;
    if header.iter().ne(SlotInfo::COLUMNS) {
        return Err(Error::Format("replay dump has an unexpected header".into()));
    }
    r.deserialize()
        .map(|row| row.map_err(|e| Error::Format(format!("replay dump: {e}"))))
        .collect()
}

/// Distribution of visit counts over occupied slots.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct VisitSummary {
    pub slots: usize,
    pub mean_visits: f64,
    pub std_visits: f64,
    /// Standard deviation over mean; 0 when nothing was visited.
    pub cv_visits: f64,
    pub min_visits: u64,
    pub max_visits: u64,
    pub unvisited: usize,
    /// Slots that have seen at least as many draws as there are occupied slots.
    pub swept: usize,
    /// Swept slots that were never drawn.
    pub unvisited_swept: usize,
    /// `histogram[0]` counts zero visits, `histogram[k]` visits in `[2^(k-1), 2^k)`.
    pub histogram: Vec<usize>,
    /// `(visits, importance factor)` per slot.
    pub scatter: Vec<(u64, f64)>,
}

impl VisitSummary {
    pub fn from_slots(slots: &[SlotInfo]) -> Self {
        let n = slots.len();
        if n == 0 {
            return Self::default();
        }
        let visits: Vec<f64> = slots.iter().map(|s| s.visits as f64).collect();
        let mean = visits.iter().sum::<f64>() / n as f64;
        let var = visits.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        let std = var.sqrt();
        let mut histogram = Vec::new();
        for s in slots {
            let bucket = (u64::BITS - s.visits.leading_zeros()) as usize;
            if histogram.len() <= bucket {
                histogram.resize(bucket + 1, 0);
            }
            histogram[bucket] += 1;
        }
        let swept: Vec<&SlotInfo> = slots.iter().filter(|s| s.draws_since_insert >= n as u64).collect();
        Self {
            slots: n,
            mean_visits: mean,
            std_visits: std,
            cv_visits: if mean > 0.0 { std / mean } else { 0.0 },
            min_visits: slots.iter().map(|s| s.visits).min().unwrap_or(0),
            max_visits: slots.iter().map(|s| s.visits).max().unwrap_or(0),
            unvisited: slots.iter().filter(|s| s.visits == 0).count(),
            swept: swept.len(),
            unvisited_swept: swept.iter().filter(|s| s.visits == 0).count(),
            histogram,
            scatter: slots.iter().map(|s| (s.visits, s.factor)).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn slot(i: usize, visits: u64, draws: u64) -> SlotInfo {
        SlotInfo {
            slot: i,
            episode_id: 100 + i as u64,
            t_gen: i as u64,
            visits,
            priority: 0.25 * i as f64,
            factor: 1.0 / (1.0 + i as f64),
            external_return: -3.5,
            length: 7,
            draws_since_insert: draws,
        }
    }

    #[test]
    fn csv_round_trip() {
        let slots: Vec<SlotInfo> = (0..5).map(|i| slot(i, i as u64 * 3, 40)).collect();
        let mut out = Vec::new();
        write_slot_csv(&slots, &mut out).unwrap();
        assert_eq!(read_slot_csv(std::str::from_utf8(&out).unwrap()).unwrap(), slots);
    }

    #[test]
    fn malformed_dump_is_a_format_error() {
        assert!(matches!(read_slot_csv("a,b\n1,2"), Err(Error::Format(_))));
        let bad = format!("{}\n0,1,2,x,0,0,0,1,0\n", SlotInfo::COLUMNS.join(","));
        assert!(matches!(read_slot_csv(&bad), Err(Error::Format(_))));
    }

    #[test]
    fn empty_table_keeps_its_header() {
        let mut out = Vec::new();
        write_slot_csv(&[], &mut out).unwrap();
        assert!(read_slot_csv(std::str::from_utf8(&out).unwrap()).unwrap().is_empty());
    }

    #[test]
    fn summary_statistics() {
        let slots = vec![slot(0, 0, 10), slot(1, 1, 10), slot(2, 3, 2), slot(3, 4, 10)];
        let s = VisitSummary::from_slots(&slots);
        assert_eq!(s.slots, 4);
        assert_eq!(s.mean_visits, 2.0);
        assert!((s.std_visits - 2.5f64.sqrt()).abs() < 1e-12);
        assert!((s.cv_visits - 2.5f64.sqrt() / 2.0).abs() < 1e-12);
        assert_eq!((s.min_visits, s.max_visits), (0, 4));
        assert_eq!(s.unvisited, 1);
        assert_eq!(s.swept, 3);
        assert_eq!(s.unvisited_swept, 1);
        assert_eq!(s.histogram, vec![1, 1, 1, 1]);
        assert_eq!(s.scatter[3], (4, 0.25));
    }

    #[test]
    fn uniform_visits_have_zero_spread() {
        let slots: Vec<SlotInfo> = (0..6).map(|i| slot(i, 5, 100)).collect();
        let s = VisitSummary::from_slots(&slots);
        assert_eq!(s.cv_visits, 0.0);
        assert_eq!(s.unvisited_swept, 0);
        assert_eq!(VisitSummary::from_slots(&[]), VisitSummary::default());
    }
}
