//! Static SVG charts.

use plotters::prelude::*;

const PALETTE: [RGBColor; 6] = [RGBColor(31, 119, 180), RGBColor(255, 127, 14), RGBColor(44, 160, 44), RGBColor(214, 39, 40), RGBColor(148, 103, 189), RGBColor(140, 86, 75)];
const SIZE: (u32, u32) = (640, 420);

fn colour(k: usize) -> RGBColor {
    PALETTE[k % PALETTE.len()]
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Style {
    Line,
    Points,
}

#[derive(Clone, Debug)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    pub style: Style,
    pub colour: usize,
}

impl Series {
    pub fn line(label: impl Into<String>, points: Vec<(f64, f64)>, colour: usize) -> Self {
        Series { label: label.into(), points, style: Style::Line, colour }
    }
    pub fn points(label: impl Into<String>, points: Vec<(f64, f64)>, colour: usize) -> Self {
        Series { label: label.into(), points, style: Style::Points, colour }
    }
}

/// Shaded `[lo, hi]` region against `x`.
#[derive(Clone, Debug)]
pub struct Band {
    pub label: String,
    pub points: Vec<(f64, f64, f64)>,
    pub colour: usize,
}

#[derive(Clone, Debug, Default)]
pub struct XyPlot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    pub bands: Vec<Band>,
}

fn range(values: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    let (lo, hi) = values.filter(|v| v.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return None;
    }
    let pad = if hi > lo { 0.05 * (hi - lo) } else { 0.5 * lo.abs().max(1e-12) };
    Some((lo - pad, hi + pad))
}

fn finite(p: &(f64, f64)) -> bool {
    p.0.is_finite() && p.1.is_finite()
}

impl XyPlot {
    pub fn new(title: impl Into<String>, x_label: impl Into<String>, y_label: impl Into<String>) -> Self {
        XyPlot { title: title.into(), x_label: x_label.into(), y_label: y_label.into(), ..Default::default() }
    }

    pub fn render(&self) -> Result<String, String> {
        let xs = self.series.iter().flat_map(|s| s.points.iter().map(|p| p.0)).chain(self.bands.iter().flat_map(|b| b.points.iter().map(|p| p.0)));
        let ys = self.series.iter().flat_map(|s| s.points.iter().map(|p| p.1)).chain(self.bands.iter().flat_map(|b| b.points.iter().flat_map(|p| [p.1, p.2])));
        let (Some(xr), Some(yr)) = (range(xs), range(ys)) else {
            return Err("no finite data".into());
        };
        let mut out = String::new();
        {
            let root = SVGBackend::with_string(&mut out, SIZE).into_drawing_area();
            let e = |e: DrawingAreaErrorKind<std::io::Error>| e.to_string();
            root.fill(&WHITE).map_err(e)?;
            let mut chart = ChartBuilder::on(&root)
                .caption(&self.title, ("sans-serif", 18))
                .margin(12)
                .x_label_area_size(40)
                .y_label_area_size(70)
                .build_cartesian_2d(xr.0..xr.1, yr.0..yr.1)
                .map_err(e)?;
            chart.configure_mesh().x_desc(&self.x_label).y_desc(&self.y_label).light_line_style(WHITE.mix(0.0)).draw().map_err(e)?;
            for b in &self.bands {
                let c = colour(b.colour);
                let mut poly: Vec<(f64, f64)> = b.points.iter().filter(|p| p.1.is_finite() && p.2.is_finite()).map(|p| (p.0, p.1)).collect();
                poly.extend(b.points.iter().rev().filter(|p| p.1.is_finite() && p.2.is_finite()).map(|p| (p.0, p.2)));
                chart
                    .draw_series(std::iter::once(Polygon::new(poly, c.mix(0.2).filled())))
                    .map_err(e)?
                    .label(b.label.clone())
                    .legend(move |(x, y)| Rectangle::new([(x, y - 4), (x + 14, y + 4)], c.mix(0.3).filled()));
            }
            for s in &self.series {
                let c = colour(s.colour);
                let pts: Vec<(f64, f64)> = s.points.iter().copied().filter(finite).collect();
                let anno = match s.style {
                    Style::Line => chart.draw_series(LineSeries::new(pts, c.stroke_width(2))).map_err(e)?,
                    Style::Points => chart.draw_series(pts.into_iter().map(|p| Circle::new(p, 3, c.filled()))).map_err(e)?,
                };
                if !s.label.is_empty() {
                    match s.style {
                        Style::Line => anno.label(s.label.clone()).legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 14, y)], c.stroke_width(2))),
                        Style::Points => anno.label(s.label.clone()).legend(move |(x, y)| Circle::new((x + 7, y), 3, c.filled())),
                    };
                }
            }
            if self.series.iter().any(|s| !s.label.is_empty()) || !self.bands.is_empty() {
                chart.configure_series_labels().background_style(WHITE.mix(0.8)).border_style(BLACK).draw().map_err(e)?;
            }
            root.present().map_err(e)?;
        }
        Ok(out)
    }
}

/// Colour map of `values` (row-major, `ny` rows of `nx`) over the given
/// axis ranges; `NaN` cells are left blank.
#[allow(clippy::too_many_arguments)]
pub fn heatmap(title: &str, x_label: &str, y_label: &str, xr: (f64, f64), yr: (f64, f64), nx: usize, ny: usize, values: &[f64]) -> Result<String, String> {
    let (lo, hi) = range(values.iter().copied()).ok_or("no finite data")?;
    let mut out = String::new();
    {
        let root = SVGBackend::with_string(&mut out, (560, 520)).into_drawing_area();
        let e = |e: DrawingAreaErrorKind<std::io::Error>| e.to_string();
        root.fill(&WHITE).map_err(e)?;
        let mut chart = ChartBuilder::on(&root).caption(title, ("sans-serif", 18)).margin(12).x_label_area_size(40).y_label_area_size(60).build_cartesian_2d(xr.0..xr.1, yr.0..yr.1).map_err(e)?;
        chart.configure_mesh().x_desc(x_label).y_desc(y_label).disable_mesh().draw().map_err(e)?;
        let (dx, dy) = ((xr.1 - xr.0) / nx as f64, (yr.1 - yr.0) / ny as f64);
        let cells = (0..ny).flat_map(|r| (0..nx).map(move |c| (r, c))).filter_map(|(r, c)| {
            let v = values[r * nx + c];
            v.is_finite().then(|| {
                let u = ((v - lo) / (hi - lo).max(1e-300)).clamp(0.0, 1.0);
                let col = RGBColor((68.0 + 185.0 * u) as u8, (1.0 + 230.0 * u) as u8, (84.0 - 48.0 * u) as u8);
                let x0 = xr.0 + c as f64 * dx;
                let y0 = yr.0 + r as f64 * dy;
                Rectangle::new([(x0, y0), (x0 + dx, y0 + dy)], col.filled())
            })
        });
        chart.draw_series(cells).map_err(e)?;
        root.present().map_err(e)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_lines_points_and_bands() {
        let mut p = XyPlot::new("t", "x", "y");
        p.series.push(Series::line("a", vec![(0.0, 1.0), (1.0, 2.0)], 0));
        p.series.push(Series::points("b", vec![(0.5, f64::NAN), (0.5, 1.5)], 1));
        p.bands.push(Band { label: "band".into(), points: vec![(0.0, 0.8, 1.2), (1.0, 1.8, 2.2)], colour: 0 });
        let svg = p.render().unwrap();
        assert!(svg.starts_with("<svg") && svg.contains("band"));
        assert!(XyPlot::new("e", "x", "y").render().is_err());
        let h = heatmap("h", "x", "y", (0.0, 1.0), (0.0, 1.0), 2, 2, &[1.0, 2.0, f64::NAN, 4.0]).unwrap();
        assert!(h.matches("<rect").count() >= 3);
    }
}
