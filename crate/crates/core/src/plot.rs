//! Plot files for a finished run: phase-A upper-arm irradiance and power,
//! SM capacitor voltages, AC currents against their references, and
//! circulating currents.
//!
//! The output format follows the file extension (`svg` or `png`). Text is
//! rendered with a system TrueType font; set `MMCPV_FONT` to a `.ttf` path
//! when none of the usual locations has one.

use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use plotters::coord::Shift;
use plotters::prelude::*;
use plotters::style::{register_font, FontStyle};

use crate::engine::{SimResult, TraceRecord};
use crate::error::{Error, Result};
use crate::grid::Phase;

const SIZE: (u32, u32) = (1024, 640);

const FONT_CANDIDATES: [&str; 6] = [
    "/usr/share/fonts/truetype/dejavu/DejaVuSans.ttf",
    "/usr/share/fonts/TTF/DejaVuSans.ttf",
    "/usr/share/fonts/dejavu/DejaVuSans.ttf",
    "/usr/share/fonts/truetype/liberation/LiberationSans-Regular.ttf",
    "/System/Library/Fonts/Supplemental/Arial.ttf",
    "C:\\Windows\\Fonts\\arial.ttf",
];

#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Figure {
    pub stem: &'static str,
    pub title: String,
    pub y_label: String,
    pub series: Vec<Series>,
    /// Right-hand axis label and the series plotted against it.
    pub secondary: Option<(String, Vec<Series>)>,
}

impl Figure {
    pub fn series(&self, name: &str) -> Option<&Series> {
        self.series
            .iter()
            .chain(self.secondary.iter().flat_map(|(_, s)| s.iter()))
            .find(|s| s.name == name)
    }
}

/// The four figure data sets, in output order.
pub fn figures(result: &SimResult) -> Result<Vec<Figure>> {
    trace_figures(&result.trace)
}

pub fn trace_figures(trace: &[TraceRecord]) -> Result<Vec<Figure>> {
    let Some(first) = trace.first() else {
        return Err(Error::InvalidInput("cannot plot an empty trace".into()));
    };
    let n = first.legs[0].n();
    let series = |name: String, f: &dyn Fn(&TraceRecord) -> f64| Series {
        name,
        points: trace.iter().map(|r| (r.t, f(r))).collect(),
    };

    let irradiance = (0..n)
        .map(|j| series(format!("G u{}", j + 1), &|r| r.legs[0].irradiance[j]))
        .collect();
    let power = (0..n)
        .map(|j| series(format!("P u{}", j + 1), &|r| r.legs[0].p_pv[j]))
        .collect();
    let voltages = (0..2 * n)
        .map(|j| {
            let label = if j < n { format!("u{}", j + 1) } else { format!("l{}", j - n + 1) };
            series(format!("v_c {label}"), &|r| r.legs[0].v_c[j])
        })
        .collect();
    let mut currents = Vec::new();
    for p in Phase::ALL {
        let k = p.index();
        currents.push(series(format!("i_{}", p.label()), &|r| r.legs[k].i_ac));
        currents.push(series(format!("i_{}_ref", p.label()), &|r| r.legs[k].i_ref));
    }
    let circulating = Phase::ALL
        .iter()
        .map(|p| series(format!("i_z_{}", p.label()), &|r| r.legs[p.index()].i_z))
        .collect();

    Ok(vec![
        Figure {
            stem: "sm_power",
            title: "Phase A upper arm: irradiance and power".into(),
            y_label: "irradiance (W/m²)".into(),
            series: irradiance,
            secondary: Some(("power (W)".into(), power)),
        },
        Figure {
            stem: "sm_voltages",
            title: "Phase A SM capacitor voltages".into(),
            y_label: "voltage (V)".into(),
            series: voltages,
            secondary: None,
        },
        Figure {
            stem: "ac_current",
            title: "AC currents and references".into(),
            y_label: "current (A)".into(),
            series: currents,
            secondary: None,
        },
        Figure {
            stem: "circulating_current",
            title: "Circulating currents".into(),
            y_label: "current (A)".into(),
            series: circulating,
            secondary: None,
        },
    ])
}

/// Writes the four figures into `dir` as `<stem>.<extension>`.
pub fn emit_plots(result: &SimResult, dir: &Path, extension: &str) -> Result<Vec<PathBuf>> {
    emit_trace_plots(&result.trace, dir, extension)
}

pub fn emit_trace_plots(trace: &[TraceRecord], dir: &Path, extension: &str) -> Result<Vec<PathBuf>> {
    let figs = trace_figures(trace)?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::with_capacity(figs.len());
    for fig in &figs {
        let path = dir.join(format!("{}.{}", fig.stem, extension));
        render(fig, &path)?;
        paths.push(path);
    }
    Ok(paths)
}

pub fn render(figure: &Figure, path: &Path) -> Result<()> {
    ensure_font().map_err(|message| Error::Format {
        path: path.into(),
        message,
    })?;
    let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
    let outcome = match ext.as_deref() {
        Some("svg") => draw(SVGBackend::new(path, SIZE).into_drawing_area(), figure),
        Some("png") => draw(BitMapBackend::new(path, SIZE).into_drawing_area(), figure),
        _ => Err(format!("unsupported plot format {:?}, use .svg or .png", ext.unwrap_or_default())),
    };
    outcome.map_err(|message| match std::fs::metadata(path.parent().unwrap_or(Path::new("."))) {
        Err(e) => Error::io(path, e),
        Ok(_) => Error::Format {
            path: path.into(),
            message,
        },
    })
}

fn ensure_font() -> std::result::Result<(), String> {
    static REGISTERED: OnceLock<bool> = OnceLock::new();
    let ok = *REGISTERED.get_or_init(|| {
        let from_env = std::env::var_os("MMCPV_FONT").map(PathBuf::from);
        from_env
            .into_iter()
            .chain(FONT_CANDIDATES.iter().map(PathBuf::from))
            .filter_map(|p| std::fs::read(p).ok())
            .any(|bytes| {
                let bytes: &'static [u8] = Box::leak(bytes.into_boxed_slice());
                register_font("sans-serif", FontStyle::Normal, bytes).is_ok()
            })
    });
    if ok {
        Ok(())
    } else {
        Err("no TrueType font found; set MMCPV_FONT to a .ttf file".into())
    }
}

fn bounds<'a>(series: impl Iterator<Item = &'a Series>) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &(_, y) in series.flat_map(|s| s.points.iter()) {
        if y.is_finite() {
            lo = lo.min(y);
            hi = hi.max(y);
        }
    }
    if lo > hi {
        return (-1.0, 1.0);
    }
    let pad = if hi > lo { 0.05 * (hi - lo) } else { 1.0 };
    (lo - pad, hi + pad)
}

fn draw<DB: DrawingBackend>(root: DrawingArea<DB, Shift>, fig: &Figure) -> std::result::Result<(), String> {
    let err = |e: DrawingAreaErrorKind<DB::ErrorType>| e.to_string();
    root.fill(&WHITE).map_err(err)?;

    let points = fig.series.iter().flat_map(|s| s.points.iter());
    let x0 = points.clone().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let x1 = points.map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    let (x0, x1) = if x1 > x0 { (x0, x1) } else { (x0, x0 + 1e-3) };
    let (y0, y1) = bounds(fig.series.iter());

    let mut builder = ChartBuilder::on(&root);
    builder
        .caption(&fig.title, ("sans-serif", 22))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(70);
    let style = |k: usize, width: u32| Palette99::pick(k).stroke_width(width);
    let legend = |style: ShapeStyle| move |(x, y): (i32, i32)| PathElement::new(vec![(x, y), (x + 16, y)], style);

    match &fig.secondary {
        None => {
            let mut chart = builder.build_cartesian_2d(x0..x1, y0..y1).map_err(err)?;
            chart
                .configure_mesh()
                .x_desc("time (s)")
                .y_desc(fig.y_label.as_str())
                .draw()
                .map_err(err)?;
            for (k, s) in fig.series.iter().enumerate() {
                chart
                    .draw_series(LineSeries::new(s.points.iter().copied(), style(k, 2)))
                    .map_err(err)?
                    .label(s.name.as_str())
                    .legend(legend(style(k, 2)));
            }
            chart
                .configure_series_labels()
                .background_style(WHITE.mix(0.8))
                .border_style(BLACK)
                .draw()
                .map_err(err)?;
        }
        Some((label, secondary)) => {
            let (s0, s1) = bounds(secondary.iter());
            let mut chart = builder
                .right_y_label_area_size(70)
                .build_cartesian_2d(x0..x1, y0..y1)
                .map_err(err)?
                .set_secondary_coord(x0..x1, s0..s1);
            chart
                .configure_mesh()
                .x_desc("time (s)")
                .y_desc(fig.y_label.as_str())
                .draw()
                .map_err(err)?;
            chart.configure_secondary_axes().y_desc(label.as_str()).draw().map_err(err)?;
            for (k, s) in fig.series.iter().enumerate() {
                chart
                    .draw_series(LineSeries::new(s.points.iter().copied(), style(k, 2)))
                    .map_err(err)?
                    .label(s.name.as_str())
                    .legend(legend(style(k, 2)));
            }
            let offset = fig.series.len();
            for (k, s) in secondary.iter().enumerate() {
                chart
                    .draw_secondary_series(LineSeries::new(s.points.iter().copied(), style(offset + k, 1)))
                    .map_err(err)?
                    .label(s.name.as_str())
                    .legend(legend(style(offset + k, 1)));
            }
            chart
                .configure_series_labels()
                .background_style(WHITE.mix(0.8))
                .border_style(BLACK)
                .draw()
                .map_err(err)?;
        }
    }
    root.present().map_err(err)
}
