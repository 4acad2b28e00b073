//! PNG figures for benchmark reports.

use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use plotters::prelude::*;
use plotters::style::{register_font, FontStyle};

use super::metrics::roc_curve;
use super::run::{BenchReport, ScoreRecord};
use crate::error::{Error, Result};

/// Reads one score out of a record.
type Metric = fn(&ScoreRecord) -> f64;

const FONT_CANDIDATES: [&str; 4] = [
    "/usr/share/fonts/truetype/dejavu/DejaVuSans.ttf",
    "/usr/share/fonts/dejavu/DejaVuSans.ttf",
    "/usr/share/fonts/TTF/DejaVuSans.ttf",
    "/Library/Fonts/Arial.ttf",
];

const SIZE: (u32, u32) = (800, 600);

/// Register a system font as `sans-serif`; `PLOT_FONT` overrides the
/// search list.
fn ensure_font() -> Result<()> {
    static FONT: OnceLock<std::result::Result<(), String>> = OnceLock::new();
    FONT.get_or_init(|| {
        let candidates: Vec<PathBuf> = std::env::var_os("PLOT_FONT")
            .map(PathBuf::from)
            .into_iter()
            .chain(FONT_CANDIDATES.iter().map(PathBuf::from))
            .collect();
        for path in &candidates {
            if let Ok(bytes) = std::fs::read(path) {
                let bytes: &'static [u8] = Box::leak(bytes.into_boxed_slice());
                if register_font("sans-serif", FontStyle::Normal, bytes).is_ok() {
                    return Ok(());
                }
            }
        }
        Err("no usable TrueType font found; set PLOT_FONT".to_string())
    })
    .clone()
    .map_err(Error::Plot)
}

fn plot_err<E: std::fmt::Display>(e: E) -> Error {
    Error::Plot(e.to_string())
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(v), hi.max(v))
        });
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let pad = ((hi - lo) * 0.05).max(1e-9);
    (lo - pad, hi + pad)
}

const REAL: RGBColor = RGBColor(31, 119, 180);
const FAKE: RGBColor = RGBColor(214, 39, 40);

pub fn plot_roc(report: &BenchReport, path: &Path) -> Result<()> {
    ensure_font()?;
    let root = BitMapBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption("ROC (forged = positive)", ("sans-serif", 24))
        .margin(15)
        .x_label_area_size(40)
        .y_label_area_size(50)
        .build_cartesian_2d(0f64..1f64, 0f64..1f64)
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .x_desc("false positive rate")
        .y_desc("true positive rate")
        .draw()
        .map_err(plot_err)?;
    let series: [(&str, Metric, f64, RGBColor); 3] = [
        ("A", |r| r.value, report.pooled.ratio, BLACK),
        ("d1", |r| r.d1, report.pooled.d1, REAL),
        ("d2", |r| r.d2, report.pooled.d2, FAKE),
    ];
    for (name, f, auc, color) in series {
        let real: Vec<f64> = report.clips.iter().filter(|c| c.genuine).map(f).collect();
        let fake: Vec<f64> = report.clips.iter().filter(|c| !c.genuine).map(f).collect();
        chart
            .draw_series(LineSeries::new(
                roc_curve(&real, &fake),
                color.stroke_width(2),
            ))
            .map_err(plot_err)?
            .label(format!("{name} (AUC {auc:.3})"))
            .legend(move |(x, y)| PathElement::new([(x, y), (x + 20, y)], color.stroke_width(2)));
    }
    chart
        .draw_series(LineSeries::new([(0.0, 0.0), (1.0, 1.0)], BLACK.mix(0.3)))
        .map_err(plot_err)?;
    chart
        .configure_series_labels()
        .position(SeriesLabelPosition::LowerRight)
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(plot_err)?;
    root.present().map_err(plot_err)
}

/// Real and forged score histograms for d1, d2 and A side by side.
pub fn plot_histograms(report: &BenchReport, path: &Path) -> Result<()> {
    ensure_font()?;
    let root = BitMapBackend::new(path, (1500, 500)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let panels = root.split_evenly((1, 3));
    let series: [(&str, Metric, f64); 3] = [
        ("d1", |r| r.d1, report.pooled.d1),
        ("d2", |r| r.d2, report.pooled.d2),
        ("A = d2 / d1", |r| r.value, report.pooled.ratio),
    ];
    const BINS: usize = 20;
    for (panel, (name, f, auc)) in panels.iter().zip(series) {
        let (lo, hi) = bounds(report.clips.iter().map(f));
        let width = (hi - lo) / BINS as f64;
        let count = |genuine: bool| {
            let mut bins = [0usize; BINS];
            for c in report.clips.iter().filter(|c| c.genuine == genuine) {
                let b = (((f(c) - lo) / width) as usize).min(BINS - 1);
                bins[b] += 1;
            }
            bins
        };
        let (real, fake) = (count(true), count(false));
        let top = real.iter().chain(&fake).copied().max().unwrap_or(1).max(1);
        let mut chart = ChartBuilder::on(panel)
            .caption(format!("{name} (AUC {auc:.3})"), ("sans-serif", 22))
            .margin(10)
            .x_label_area_size(35)
            .y_label_area_size(40)
            .build_cartesian_2d(lo..hi, 0usize..top + 1)
            .map_err(plot_err)?;
        chart
            .configure_mesh()
            .x_labels(5)
            .x_label_formatter(&|v| format!("{v:.3}"))
            .draw()
            .map_err(plot_err)?;
        for (bins, color, label) in [(real, REAL, "real"), (fake, FAKE, "fake")] {
            chart
                .draw_series(
                    bins.iter()
                        .enumerate()
                        .filter(|(_, n)| **n > 0)
                        .map(|(i, &n)| {
                            let x0 = lo + i as f64 * width;
                            Rectangle::new([(x0, 0), (x0 + width, n)], color.mix(0.45).filled())
                        }),
                )
                .map_err(plot_err)?
                .label(label)
                .legend(move |(x, y)| {
                    Rectangle::new([(x, y - 5), (x + 12, y + 5)], color.filled())
                });
        }
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()
            .map_err(plot_err)?;
    }
    root.present().map_err(plot_err)
}

/// Per-subject smoothed score series of one genuine and one forged clip,
/// with their means dotted.
pub fn plot_temporal(report: &BenchReport, path: &Path) -> Result<()> {
    let mut picked: Vec<&ScoreRecord> = Vec::new();
    for s in &report.subjects {
        for genuine in [true, false] {
            if let Some(c) = report
                .clips
                .iter()
                .find(|c| c.subject == s.subject && c.genuine == genuine)
            {
                picked.push(c);
            }
        }
    }
    plot_traces(&picked, path)
}

/// Smoothed score series, one panel per subject.
pub fn plot_traces(records: &[&ScoreRecord], path: &Path) -> Result<()> {
    ensure_font()?;
    let mut subjects: Vec<&str> = records.iter().map(|r| r.subject.as_str()).collect();
    subjects.dedup();
    let rows = subjects.len().max(1);
    let root = BitMapBackend::new(path, (900, 250 * rows as u32)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let panels = root.split_evenly((rows, 1));
    for (panel, subject) in panels.iter().zip(&subjects) {
        let traces: Vec<&ScoreRecord> = records
            .iter()
            .copied()
            .filter(|r| r.subject == *subject)
            .collect();
        let len = traces.iter().map(|c| c.frames.len()).max().unwrap_or(1);
        let (lo, hi) = bounds(traces.iter().flat_map(|c| c.frames.iter().copied()));
        let mut chart = ChartBuilder::on(panel)
            .caption(*subject, ("sans-serif", 20))
            .margin(10)
            .x_label_area_size(30)
            .y_label_area_size(55)
            .build_cartesian_2d(0usize..len.max(2) - 1, lo..hi)
            .map_err(plot_err)?;
        chart
            .configure_mesh()
            .x_desc("frame")
            .y_label_formatter(&|v| format!("{v:.3}"))
            .draw()
            .map_err(plot_err)?;
        for (i, c) in traces.into_iter().enumerate() {
            let color = match (c.genuine, i) {
                (true, 0..=1) => REAL.to_rgba(),
                (false, 0..=1) => FAKE.to_rgba(),
                _ => Palette99::pick(i).to_rgba(),
            };
            let label = if c.genuine { "real" } else { "fake" };
            chart
                .draw_series(LineSeries::new(
                    c.frames.iter().enumerate().map(|(i, &v)| (i, v)),
                    color.stroke_width(2),
                ))
                .map_err(plot_err)?
                .label(format!("{label} {}", c.clip_id))
                .legend(move |(x, y)| {
                    PathElement::new([(x, y), (x + 20, y)], color.stroke_width(2))
                });
            chart
                .draw_series(
                    (0..len)
                        .step_by(2)
                        .map(|i| Circle::new((i, c.frame_mean), 1, color.filled())),
                )
                .map_err(plot_err)?;
        }
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()
            .map_err(plot_err)?;
    }
    root.present().map_err(plot_err)
}

/// AUC against severity, one line per perturbation kind.
pub fn plot_severity(report: &BenchReport, path: &Path) -> Result<()> {
    ensure_font()?;
    let root = BitMapBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let (lo, _) = bounds(report.sweep.iter().map(|r| r.auc));
    let top = report
        .sweep
        .iter()
        .map(|r| r.severity as u32)
        .max()
        .unwrap_or(5)
        .max(1);
    let mut chart = ChartBuilder::on(&root)
        .caption("AUC under feature corruption", ("sans-serif", 24))
        .margin(15)
        .x_label_area_size(40)
        .y_label_area_size(50)
        .build_cartesian_2d(0u32..top, lo.min(0.5)..1.0)
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .x_desc("severity")
        .y_desc("AUC")
        .draw()
        .map_err(plot_err)?;
    let mut kinds: Vec<_> = report.sweep.iter().map(|r| r.kind).collect();
    kinds.dedup();
    for (i, kind) in kinds.into_iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        let points: Vec<(u32, f64)> = report
            .sweep
            .iter()
            .filter(|r| r.kind == kind)
            .map(|r| (r.severity as u32, r.auc))
            .collect();
        chart
            .draw_series(LineSeries::new(points.clone(), color.stroke_width(2)))
            .map_err(plot_err)?
            .label(kind.name())
            .legend(move |(x, y)| PathElement::new([(x, y), (x + 20, y)], color.stroke_width(2)));
        chart
            .draw_series(
                points
                    .into_iter()
                    .map(|p| Circle::new(p, 3, color.filled())),
            )
            .map_err(plot_err)?;
    }
    chart
        .configure_series_labels()
        .position(SeriesLabelPosition::LowerLeft)
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(plot_err)?;
    root.present().map_err(plot_err)
}

/// Every figure the report supports, written into `dir`.
pub fn plot_report(report: &BenchReport, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    let mut emit = |name: &str, f: fn(&BenchReport, &Path) -> Result<()>| -> Result<()> {
        let path = dir.join(name);
        f(report, &path)?;
        written.push(path);
        Ok(())
    };
    emit("roc.png", plot_roc)?;
    emit("histograms.png", plot_histograms)?;
    emit("temporal.png", plot_temporal)?;
    if !report.sweep.is_empty() {
        emit("severity.png", plot_severity)?;
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::run::{run_benchmark, BenchConfig, OracleAuthenticator, PerturbationPlan};
    use crate::bench::split::{build_evaluation_split, SplitConfig};
    use crate::bench::PerturbKind;
    use crate::synthdata::SynthConfig;

    #[test]
    fn figures_are_written() {
        let synth = SynthConfig {
            personas: 3,
            seq_len: 12,
            ..SynthConfig::default()
        };
        let cfg = BenchConfig {
            split: SplitConfig {
                subjects: 2,
                validation_clips: 2,
                genuine_test_clips: 2,
                forged_test_clips: 2,
                ..SplitConfig::default()
            },
            perturbations: PerturbationPlan {
                kinds: vec![PerturbKind::AudioNoise],
                severities: vec![0, 3],
                seed: 1,
            },
            ..BenchConfig::default()
        };
        let split = build_evaluation_split(&synth, &cfg.split, 4).unwrap();
        let (report, _) = run_benchmark(&split, &OracleAuthenticator, &cfg, |_| {}).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let files = plot_report(&report, dir.path()).unwrap();
        assert_eq!(files.len(), 4);
        for f in files {
            let bytes = std::fs::read(&f).unwrap();
            assert_eq!(&bytes[1..4], b"PNG", "{}", f.display());
        }
    }
}
