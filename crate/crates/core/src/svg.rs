//! Standalone SVG panels: demonstrations, sampled paths and per-mode
//! marginal bands, plotted as the first action dimension against time.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::eval::MarginalReport;
use crate::trajectory::Trajectory;

/// A shaded region between `lo` and `hi` with a center line, over `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct Band {
    pub t: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub center: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Figure {
    pub title: String,
    pub demos: Vec<Trajectory>,
    pub samples: Vec<Trajectory>,
    pub bands: Vec<Band>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Style {
    pub width: f64,
    pub height: f64,
    /// At most this many demos and samples are drawn each.
    pub max_paths: usize,
}

impl Default for Style {
    fn default() -> Self {
        Style { width: 480.0, height: 320.0, max_paths: 200 }
    }
}

const BAND_COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let j = pos.ceil() as usize;
    sorted[i] + (pos - i as f64) * (sorted[j] - sorted[i])
}

/// One band per mode label: the 10–90% quantile range and the mean of the
/// samples carrying that label, at every time of `grid`. Labels with no
/// samples are skipped.
pub fn mode_bands<S>(samples: &[Trajectory], grid: &[f64], num_modes: usize, split: S) -> Result<Vec<Band>>
where
    S: Fn(&Trajectory) -> usize,
{
    let mut groups: Vec<Vec<&Trajectory>> = vec![Vec::new(); num_modes];
    for s in samples {
        if let Some(g) = groups.get_mut(split(s)) {
            g.push(s);
        }
    }
    let mut bands = Vec::new();
    for g in groups.into_iter().filter(|g| !g.is_empty()) {
        let mut band = Band { t: grid.to_vec(), lo: vec![], hi: vec![], center: vec![] };
        for &t in grid {
            let mut v = g.iter().map(|s| Ok(s.eval(t)?[0])).collect::<Result<Vec<f64>>>()?;
            v.sort_by(f64::total_cmp);
            band.lo.push(quantile(&v, 0.1));
            band.hi.push(quantile(&v, 0.9));
            band.center.push(v.iter().sum::<f64>() / v.len() as f64);
        }
        bands.push(band);
    }
    Ok(bands)
}

/// A band of sample mean ± one standard deviation for the first dimension
/// of a marginal report.
pub fn report_band(rep: &MarginalReport) -> Band {
    let m: Vec<f64> = rep.sample_mean.iter().map(|v| v[0]).collect();
    let s: Vec<f64> = rep.sample_std.iter().map(|v| v[0]).collect();
    Band {
        t: rep.grid.clone(),
        lo: m.iter().zip(&s).map(|(m, s)| m - s).collect(),
        hi: m.iter().zip(&s).map(|(m, s)| m + s).collect(),
        center: m,
    }
}

struct Frame {
    w: f64,
    h: f64,
    y0: f64,
    y1: f64,
}

const MARGIN: f64 = 36.0;

impl Frame {
    fn x(&self, t: f64) -> f64 {
        MARGIN + t * (self.w - 2.0 * MARGIN)
    }

    fn y(&self, a: f64) -> f64 {
        let u = (a - self.y0) / (self.y1 - self.y0);
        self.h - MARGIN - u * (self.h - 2.0 * MARGIN)
    }

    fn points(&self, pts: impl Iterator<Item = (f64, f64)>) -> String {
        let mut s = String::new();
        for (i, (t, a)) in pts.enumerate() {
            if i > 0 {
                s.push(' ');
            }
            let _ = write!(s, "{:.2},{:.2}", self.x(t), self.y(a));
        }
        s
    }
}

fn traj_points(tr: &Trajectory) -> impl Iterator<Item = (f64, f64)> + '_ {
    let h = tr.spacing();
    tr.waypoints().enumerate().map(move |(i, w)| (i as f64 * h, w[0]))
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Renders the figure. Output depends only on the inputs.
pub fn render_figure(fig: &Figure, style: &Style) -> Result<String> {
    if fig.demos.is_empty() && fig.samples.is_empty() && fig.bands.is_empty() {
        return Err(Error::Empty("figure has nothing to draw"));
    }
    let values = fig
        .demos
        .iter()
        .chain(&fig.samples)
        .flat_map(|t| traj_points(t).map(|(_, a)| a).collect::<Vec<_>>())
        .chain(fig.bands.iter().flat_map(|b| b.lo.iter().chain(&b.hi).copied()))
        .filter(|v| v.is_finite());
    let (mut y0, mut y1) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !(y0.is_finite() && y1.is_finite()) {
        return Err(Error::NonFinite("figure data"));
    }
    if y1 - y0 < 1e-9 {
        y0 -= 0.5;
        y1 += 0.5;
    }
    let pad = 0.05 * (y1 - y0);
    let fr = Frame { w: style.width, h: style.height, y0: y0 - pad, y1: y1 + pad };

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#,
        w = style.width,
        h = style.height
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="20" font-family="sans-serif" font-size="13" text-anchor="middle">{}</text>"#,
        style.width / 2.0,
        escape(&fig.title)
    );
    // axes: t along x, action along y
    let _ = writeln!(
        s,
        r#"<line class="axis" x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="black"/>"#,
        fr.x(0.0),
        fr.h - MARGIN,
        fr.x(1.0),
        fr.h - MARGIN
    );
    let _ = writeln!(
        s,
        r#"<line class="axis" x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="black"/>"#,
        fr.x(0.0),
        MARGIN,
        fr.x(0.0),
        fr.h - MARGIN
    );
    if fr.y0 < 0.0 && fr.y1 > 0.0 {
        let _ = writeln!(
            s,
            r##"<line class="zero" x1="{:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#bbbbbb" stroke-dasharray="4 3"/>"##,
            fr.x(0.0),
            fr.x(1.0),
            y = fr.y(0.0)
        );
    }
    for (i, b) in fig.bands.iter().enumerate() {
        let color = BAND_COLORS[i % BAND_COLORS.len()];
        let upper = b.t.iter().copied().zip(b.hi.iter().copied());
        let lower = b.t.iter().copied().zip(b.lo.iter().copied()).rev();
        let _ = writeln!(
            s,
            r#"<polygon class="band" points="{}" fill="{color}" fill-opacity="0.25" stroke="none"/>"#,
            fr.points(upper.chain(lower))
        );
        let _ = writeln!(
            s,
            r#"<polyline class="band-center" points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
            fr.points(b.t.iter().copied().zip(b.center.iter().copied()))
        );
    }
    for d in fig.demos.iter().take(style.max_paths) {
        let _ = writeln!(
            s,
            r##"<polyline class="demo" points="{}" fill="none" stroke="#333333" stroke-width="1" stroke-opacity="0.5"/>"##,
            fr.points(traj_points(d))
        );
    }
    for smp in fig.samples.iter().take(style.max_paths) {
        let mut d = String::new();
        for (i, (t, a)) in traj_points(smp).enumerate() {
            let _ = write!(d, "{}{:.2},{:.2}", if i == 0 { "M" } else { " L" }, fr.x(t), fr.y(a));
        }
        let _ = writeln!(
            s,
            r##"<path class="sample" d="{d}" fill="none" stroke="#ff7f0e" stroke-width="0.8" stroke-opacity="0.6"/>"##
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::{sign_at_end, uniform_grid};

    fn line(c: f64) -> Trajectory {
        Trajectory::from_fn(9, 1, |t| vec![c * t]).unwrap()
    }

    #[test]
    fn deterministic_and_structural() {
        let fig = Figure { title: "x".into(), demos: vec![line(1.0), line(-1.0)], samples: vec![line(0.5)], bands: vec![] };
        let a = render_figure(&fig, &Style::default()).unwrap();
        let b = render_figure(&fig, &Style::default()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.matches("<path").count(), 1);
        assert_eq!(a.matches(r#"class="demo""#).count(), 2);
        assert!(render_figure(&Figure::default(), &Style::default()).is_err());
    }

    #[test]
    fn bimodal_bands_split_by_sign() {
        let samples: Vec<_> = [0.7, 0.8, 0.9, -0.7, -0.8].iter().map(|&c| line(c)).collect();
        let bands = mode_bands(&samples, &uniform_grid(5), 2, sign_at_end).unwrap();
        assert_eq!(bands.len(), 2);
        assert!(bands[0].center[4] > 0.0 && bands[1].center[4] < 0.0);
    }
}
