//! Breakdown tables and text Gantt charts over completed timelines.

use std::fmt::Write as _;

use thiserror::Error;

use crate::model::{breakdown, Breakdown, JobId, ModelError, Timeline};
use crate::time::Millis;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub const CSV_HEADER: [&str; 10] = [
    "job_id",
    "attach_device_s",
    "launch_machine_s",
    "prepare_task_s",
    "launch_task_s",
    "run_task_s",
    "detach_device_s",
    "destroy_machine_s",
    "makespan_s",
    "overhead_fraction",
];

fn secs(value: Millis) -> String {
    format!("{:.3}", value.as_secs_f64())
}

/// Renders the per-job breakdown table: one row per job in the given order,
/// durations in seconds at millisecond precision, RFC 4180 quoting.
pub fn breakdown_csv(rows: &[(JobId, Timeline)]) -> Result<String, ReportError> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record(CSV_HEADER)?;
    for (job_id, timeline) in rows {
        let b: Breakdown = breakdown(timeline)?;
        writer.write_record([
            job_id.as_str(),
            &secs(b.attach_device),
            &secs(b.launch_machine),
            &secs(b.prepare_task),
            &secs(b.launch_task),
            &secs(b.run_task),
            &secs(b.detach_device),
            &secs(b.destroy_machine),
            &secs(b.makespan),
            &format!("{:.6}", b.overhead_fraction),
        ])?;
    }
    let bytes = writer.into_inner().expect("vec writer never fails");
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

const GANTT_GLYPHS: [(&str, char); 7] = [
    ("attach_device", 'A'),
    ("launch_machine", 'M'),
    ("prepare_task", 'P'),
    ("launch_task", 'L'),
    ("run_task", 'R'),
    ("detach_device", 'D'),
    ("destroy_machine", 'X'),
];

/// Renders a fixed-width text chart, one row per slice, one glyph per time
/// bucket keyed by the phase active at the bucket's midpoint. Buckets before
/// the slice starts show `.`, buckets after it ends are blank.
pub fn gantt(rows: &[(JobId, Timeline)], width: usize) -> String {
    let width = width.max(10);
    let mut out = String::new();
    let span_end = rows
        .iter()
        .map(|(_, t)| t.destroy_machine.end_s)
        .max()
        .unwrap_or(Millis::ZERO);
    let label_width = rows
        .iter()
        .map(|(id, _)| id.as_str().len())
        .max()
        .unwrap_or(0)
        .max(8);
    writeln!(
        out,
        "time 0 .. {} s, {} buckets of {:.3} s",
        span_end,
        width,
        if span_end.is_zero() {
            0.0
        } else {
            span_end.as_secs_f64() / width as f64
        }
    )
    .unwrap();
    let legend = GANTT_GLYPHS
        .iter()
        .map(|(name, glyph)| format!("{glyph}={name}"))
        .collect::<Vec<_>>()
        .join(" ");
    writeln!(out, "legend: {legend} .=queued").unwrap();
    for (id, timeline) in rows {
        let mut bar = String::with_capacity(width);
        if span_end.is_zero() {
            // degenerate chart: no time elapsed anywhere
            bar.push_str(&" ".repeat(width));
        } else {
            let total_ms = span_end.as_ms() as f64;
            for bucket in 0..width {
                let midpoint = Millis::from_ms(
                    ((bucket as f64 + 0.5) / width as f64 * total_ms) as u64,
                );
                bar.push(glyph_at(timeline, midpoint));
            }
        }
        writeln!(out, "{:<label_width$} |{bar}|", id.as_str()).unwrap();
    }
    out
}

fn glyph_at(timeline: &Timeline, at: Millis) -> char {
    if at < timeline.attach_device.start_s {
        return '.';
    }
    for ((_, glyph), (_, interval)) in GANTT_GLYPHS.iter().zip(timeline.intervals()) {
        if at >= interval.start_s && at < interval.end_s {
            return *glyph;
        }
    }
    ' '
}
