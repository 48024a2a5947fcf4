//! Bench tables: raw CSV rows and a min/avg/max markdown summary.

use crate::error::{Error, Result};
use crate::search::{BenchTable, Strategy};

/// Column order of the summary table.
pub const COLUMN_ORDER: [Strategy; 4] = [Strategy::Vmc, Strategy::Avf, Strategy::Gmm, Strategy::Hybrid];

/// One CSV row per search; `failing_x` components are `;`-separated.
pub fn bench_csv(table: &BenchTable) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Config {
        path: "bench.csv".into(),
        message: e.to_string(),
    };
    w.write_record(["strategy", "search_index", "episodes_used", "censored", "failing_x"])
        .map_err(csv_err)?;
    for r in &table.rows {
        let x = r
            .failing_x
            .as_ref()
            .map(|x| x.0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(";"))
            .unwrap_or_default();
        w.write_record([
            r.strategy.as_str().to_string(),
            r.search_index.to_string(),
            r.episodes_used.to_string(),
            r.censored.to_string(),
            x,
        ])
        .map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Config {
        path: "bench.csv".into(),
        message: e.to_string(),
    })?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn fmt_avg(v: f64) -> String {
    if v.fract() == 0.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.1}")
    }
}

/// Min/avg/max episodes-to-failure per strategy, columns in [`COLUMN_ORDER`].
/// Censored searches count at the budget and are footnoted.
pub fn bench_markdown(table: &BenchTable) -> String {
    let present: Vec<Strategy> = COLUMN_ORDER
        .iter()
        .copied()
        .filter(|s| table.summary(*s).is_some())
        .collect();
    let mut out = String::new();
    out.push_str("| Episodes to failure |");
    for s in &present {
        out.push_str(&format!(" {} |", s.heading()));
    }
    out.push_str("\n|---|");
    out.push_str(&"---:|".repeat(present.len()));
    out.push('\n');
    let summaries: Vec<_> = present.iter().map(|s| table.summary(*s).expect("present")).collect();
    let rows: [(&str, Vec<String>); 3] = [
        ("Min", summaries.iter().map(|s| s.min.to_string()).collect()),
        ("Avg", summaries.iter().map(|s| fmt_avg(s.avg)).collect()),
        ("Max", summaries.iter().map(|s| s.max.to_string()).collect()),
    ];
    for (label, cells) in rows {
        out.push_str(&format!("| {label} |"));
        for c in cells {
            out.push_str(&format!(" {c} |"));
        }
        out.push('\n');
    }
    let censored: Vec<String> = present
        .iter()
        .zip(&summaries)
        .filter(|(_, s)| s.censored > 0)
        .map(|(st, s)| format!("{} {} of {}", st.heading(), s.censored, s.count))
        .collect();
    if !censored.is_empty() {
        out.push_str(&format!(
            "\nCensored (budget exhausted, counted at the budget): {}.\n",
            censored.join(", ")
        ));
    }
    out
}
