use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{ClusterSpec, Schedule, Task};
use crate::graph::{DataflowGraph, OpKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceUsage {
    pub device: usize,
    pub busy_ms: f64,
    pub busy_fraction: f64,
    pub intervals: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkUsage {
    pub src: usize,
    pub dst: usize,
    pub busy_ms: f64,
    pub busy_fraction: f64,
    pub intervals: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilizationReport {
    pub makespan_ms: f64,
    pub devices: Vec<DeviceUsage>,
    pub links: Vec<LinkUsage>,
}

/// Length of the union of `intervals`.
fn covered(intervals: &[[f64; 2]]) -> f64 {
    let mut sorted = intervals.to_vec();
    sorted.sort_by(|a, b| a[0].total_cmp(&b[0]));
    let mut total = 0.0;
    let mut cur: Option<[f64; 2]> = None;
    for iv in sorted {
        cur = match cur {
            Some(c) if iv[0] <= c[1] => Some([c[0], c[1].max(iv[1])]),
            Some(c) => {
                total += c[1] - c[0];
                Some(iv)
            }
            None => Some(iv),
        };
    }
    total + cur.map_or(0.0, |c| c[1] - c[0])
}

fn fraction(busy: f64, makespan: f64) -> f64 {
    if makespan > 0.0 {
        busy / makespan
    } else {
        0.0
    }
}

/// Fraction of `[0, makespan]` each device spends executing, plus the
/// transfer timeline of every link that carried data.
pub fn utilization_report(schedule: &Schedule, cluster: &ClusterSpec) -> UtilizationReport {
    let mut dev: Vec<Vec<[f64; 2]>> = vec![Vec::new(); cluster.device_count()];
    let mut links: BTreeMap<(usize, usize), Vec<[f64; 2]>> = BTreeMap::new();
    for (task, b, e) in schedule.intervals() {
        match task {
            Task::Exec { device, .. } => dev[device].push([b, e]),
            Task::Transfer { src, dst, .. } => links.entry((src, dst)).or_default().push([b, e]),
        }
    }
    let m = schedule.makespan_ms;
    UtilizationReport {
        makespan_ms: m,
        devices: dev
            .into_iter()
            .enumerate()
            .map(|(device, intervals)| {
                let busy_ms = covered(&intervals);
                DeviceUsage {
                    device,
                    busy_ms,
                    busy_fraction: fraction(busy_ms, m),
                    intervals,
                }
            })
            .collect(),
        links: links
            .into_iter()
            .map(|((src, dst), intervals)| {
                let busy_ms = covered(&intervals);
                LinkUsage {
                    src,
                    dst,
                    busy_ms,
                    busy_fraction: fraction(busy_ms, m),
                    intervals,
                }
            })
            .collect(),
    }
}

fn color(kind: OpKind) -> &'static str {
    match kind {
        OpKind::Matmul => "#4e79a7",
        OpKind::Add => "#59a14f",
        OpKind::Elemwise => "#76b7b2",
        OpKind::Reduction => "#edc948",
        OpKind::Formation | OpKind::Other | OpKind::Input => "#b07aa1",
    }
}

/// Gantt chart: one row per device, then one per active link in
/// `(src, dst)` order. Execs are colored by op kind, transfers in red.
pub fn gantt_svg(graph: &DataflowGraph, schedule: &Schedule, cluster: &ClusterSpec) -> String {
    const LEFT: f64 = 90.0;
    const WIDTH: f64 = 900.0;
    const ROW: f64 = 24.0;
    const TOP: f64 = 30.0;

    let report = utilization_report(schedule, cluster);
    let mut rows: Vec<String> = (0..cluster.device_count()).map(|d| format!("gpu{d}")).collect();
    let link_row: BTreeMap<(usize, usize), usize> = report
        .links
        .iter()
        .enumerate()
        .map(|(i, l)| ((l.src, l.dst), cluster.device_count() + i))
        .collect();
    rows.extend(report.links.iter().map(|l| format!("gpu{}→gpu{}", l.src, l.dst)));

    let span = schedule.makespan_ms.max(f64::MIN_POSITIVE);
    let x = |t: f64| LEFT + t / span * WIDTH;
    let height = TOP + rows.len() as f64 * ROW + 30.0;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{:.0}" height="{height:.0}" font-family="sans-serif" font-size="11">"#,
        LEFT + WIDTH + 20.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="{LEFT}" y="16">makespan {:.3} ms</text>"#,
        schedule.makespan_ms
    );
    for (i, name) in rows.iter().enumerate() {
        let y = TOP + i as f64 * ROW;
        let _ = writeln!(svg, r##"<rect x="{LEFT}" y="{y}" width="{WIDTH}" height="{}" fill="#f4f4f4"/>"##, ROW - 4.0);
        let _ = writeln!(svg, r#"<text x="4" y="{}">{name}</text>"#, y + ROW / 2.0 + 2.0);
    }
    for (task, b, e) in schedule.intervals() {
        let (row, fill) = match task {
            Task::Exec { vertex, device } => (device, color(graph.vertex(vertex).op_kind)),
            Task::Transfer { src, dst, .. } => (link_row[&(src, dst)], "#e15759"),
        };
        let y = TOP + row as f64 * ROW;
        let w = (x(e) - x(b)).max(0.5);
        let _ = writeln!(
            svg,
            r#"<rect x="{:.2}" y="{y}" width="{w:.2}" height="{}" fill="{fill}" stroke="white" stroke-width="0.5"><title>{task} [{b:.3}, {e:.3}]</title></rect>"#,
            x(b),
            ROW - 4.0
        );
    }
    let axis_y = TOP + rows.len() as f64 * ROW + 4.0;
    for k in 0..=5 {
        let t = span * k as f64 / 5.0;
        let _ = writeln!(svg, r#"<text x="{:.1}" y="{}" text-anchor="middle">{t:.2}</text>"#, x(t), axis_y + 12.0);
    }
    svg.push_str("</svg>\n");
    svg
}
