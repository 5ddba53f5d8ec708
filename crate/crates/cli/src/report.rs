//! CSV outputs. Numbers use Rust's shortest round-trip formatting, so equal
//! values always produce equal bytes.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{Context, Result};
use fedembed::eval::RetrievalResult;
use fedembed::federation::{EpochMetrics, EpochRecord};

pub const HISTORY_HEADER: &str = "epoch,client,loss_c,loss_e,loss_r,selected,rank1,map,wall_ms";
pub const COMPARISON_HEADER: &str = "method,rank1,rank5,rank10,map";
pub const EVAL_HEADER: &str = "rank1,rank5,rank10,map";

/// One row per (epoch, client). `rank1`/`map` are empty on epochs without
/// an evaluation and repeated on every client row otherwise.
pub fn history_csv(history: &[EpochRecord], wall_clock: bool) -> String {
    let mut out = format!("{HISTORY_HEADER}\n");
    for r in history {
        let (rank1, map) = match r.metrics {
            Some(EpochMetrics { rank1, map }) => (rank1.to_string(), map.to_string()),
            None => (String::new(), String::new()),
        };
        let wall = if wall_clock { r.wall_ms } else { 0 };
        for (client, l) in r.losses.iter().enumerate() {
            let selected = r.selected.contains(&client) as u8;
            writeln!(
                out,
                "{},{client},{},{},{},{selected},{rank1},{map},{wall}",
                r.epoch, l.classification, l.expert, l.regularisation
            )
            .unwrap();
        }
    }
    out
}

fn metrics_fields(r: &RetrievalResult) -> String {
    format!("{},{},{},{}", r.rank1, r.rank5, r.rank10, r.map)
}

pub fn eval_csv(r: &RetrievalResult) -> String {
    format!("{EVAL_HEADER}\n{}\n", metrics_fields(r))
}

pub fn comparison_csv(rows: &[(String, RetrievalResult)]) -> String {
    let mut out = format!("{COMPARISON_HEADER}\n");
    for (name, r) in rows {
        writeln!(out, "{name},{}", metrics_fields(r)).unwrap();
    }
    out
}

/// Fixed-width table for the terminal.
pub fn comparison_table(rows: &[(String, RetrievalResult)]) -> String {
    let mut out = format!("{:<24} {:>8} {:>8} {:>8} {:>8}\n", "method", "rank-1", "rank-5", "rank-10", "mAP");
    for (name, r) in rows {
        writeln!(
            out,
            "{name:<24} {:>8.2} {:>8.2} {:>8.2} {:>8.2}",
            100.0 * r.rank1,
            100.0 * r.rank5,
            100.0 * r.rank10,
            100.0 * r.map
        )
        .unwrap();
    }
    out
}

pub fn write(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}
