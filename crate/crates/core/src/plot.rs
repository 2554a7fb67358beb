//! Minimal SVG line plots with min/max bands, used for the compression-size
//! sweep. No drawing dependencies; the output is a plain polyline-and-
//! polygon document.

/// One plotted series: a mean line with a min..max band.
#[derive(Debug, Clone)]
pub struct BandSeries {
    pub name: String,
    /// Any SVG color, e.g. "#1f77b4".
    pub color: String,
    pub xs: Vec<f64>,
    pub mins: Vec<f64>,
    pub means: Vec<f64>,
    pub maxs: Vec<f64>,
}

const W: f64 = 640.0;
const H: f64 = 420.0;
const ML: f64 = 64.0; // left margin
const MR: f64 = 24.0;
const MT: f64 = 40.0;
const MB: f64 = 52.0;

pub fn band_plot_svg(title: &str, x_label: &str, y_label: &str, series: &[BandSeries]) -> String {
    let mut xmin = f64::INFINITY;
    let mut xmax = f64::NEG_INFINITY;
    let mut ymin = f64::INFINITY;
    let mut ymax = f64::NEG_INFINITY;
    for s in series {
        for &x in &s.xs {
            xmin = xmin.min(x);
            xmax = xmax.max(x);
        }
        for v in s.mins.iter().chain(&s.maxs).chain(&s.means) {
            ymin = ymin.min(*v);
            ymax = ymax.max(*v);
        }
    }
    if !xmin.is_finite() || xmin == xmax {
        xmin -= 0.5;
        xmax += 0.5;
    }
    if !ymin.is_finite() || ymin == ymax {
        ymin -= 0.5;
        ymax += 0.5;
    }
    let ypad = 0.05 * (ymax - ymin);
    let (ymin, ymax) = (ymin - ypad, ymax + ypad);

    let sx = move |x: f64| ML + (x - xmin) / (xmax - xmin) * (W - ML - MR);
    let sy = move |y: f64| H - MB - (y - ymin) / (ymax - ymin) * (H - MT - MB);

    let mut out = String::new();
    out.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" \
         viewBox=\"0 0 {W} {H}\" font-family=\"sans-serif\" font-size=\"12\">\n"
    ));
    out.push_str(&format!(
        "<rect x=\"0\" y=\"0\" width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n"
    ));
    out.push_str(&format!(
        "<text x=\"{:.2}\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">{}</text>\n",
        (ML + W - MR) / 2.0,
        xml_escape(title)
    ));

    // axes and ticks
    out.push_str(&format!(
        "<line x1=\"{ML}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"black\"/>\n",
        H - MB,
        W - MR,
        H - MB
    ));
    out.push_str(&format!(
        "<line x1=\"{ML}\" y1=\"{MT}\" x2=\"{ML}\" y2=\"{:.2}\" stroke=\"black\"/>\n",
        H - MB
    ));
    for t in 0..=4 {
        let fx = xmin + (xmax - xmin) * t as f64 / 4.0;
        let px = sx(fx);
        out.push_str(&format!(
            "<line x1=\"{px:.2}\" y1=\"{:.2}\" x2=\"{px:.2}\" y2=\"{:.2}\" stroke=\"black\"/>\n",
            H - MB,
            H - MB + 5.0
        ));
        out.push_str(&format!(
            "<text x=\"{px:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{}</text>\n",
            H - MB + 18.0,
            fmt_tick(fx)
        ));
        let fy = ymin + (ymax - ymin) * t as f64 / 4.0;
        let py = sy(fy);
        out.push_str(&format!(
            "<line x1=\"{:.2}\" y1=\"{py:.2}\" x2=\"{ML}\" y2=\"{py:.2}\" stroke=\"black\"/>\n",
            ML - 5.0
        ));
        out.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\">{}</text>\n",
            ML - 8.0,
            py + 4.0,
            fmt_tick(fy)
        ));
    }
    out.push_str(&format!(
        "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{}</text>\n",
        (ML + W - MR) / 2.0,
        H - 14.0,
        xml_escape(x_label)
    ));
    out.push_str(&format!(
        "<text x=\"16\" y=\"{:.2}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {:.2})\">{}</text>\n",
        (MT + H - MB) / 2.0,
        (MT + H - MB) / 2.0,
        xml_escape(y_label)
    ));

    for (si, s) in series.iter().enumerate() {
        // band polygon: maxs forward, mins backward
        let mut pts = String::new();
        for (x, y) in s.xs.iter().zip(&s.maxs) {
            pts.push_str(&format!("{:.2},{:.2} ", sx(*x), sy(*y)));
        }
        for (x, y) in s.xs.iter().rev().zip(s.mins.iter().rev()) {
            pts.push_str(&format!("{:.2},{:.2} ", sx(*x), sy(*y)));
        }
        out.push_str(&format!(
            "<polygon points=\"{}\" fill=\"{}\" opacity=\"0.18\" stroke=\"none\"/>\n",
            pts.trim_end(),
            s.color
        ));
        let line: Vec<String> = s
            .xs
            .iter()
            .zip(&s.means)
            .map(|(x, y)| format!("{:.2},{:.2}", sx(*x), sy(*y)))
            .collect();
        out.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"2\"/>\n",
            line.join(" "),
            s.color
        ));
        for (x, y) in s.xs.iter().zip(&s.means) {
            out.push_str(&format!(
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"{}\"/>\n",
                sx(*x),
                sy(*y),
                s.color
            ));
        }
        // legend entry
        let ly = MT + 16.0 * si as f64;
        out.push_str(&format!(
            "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"12\" height=\"12\" fill=\"{}\"/>\n",
            W - MR - 130.0,
            ly,
            s.color
        ));
        out.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\">{}</text>\n",
            W - MR - 112.0,
            ly + 10.0,
            xml_escape(&s.name)
        ));
    }
    out.push_str("</svg>\n");
    out
}

fn fmt_tick(v: f64) -> String {
    if v == v.trunc() && v.abs() < 1e6 {
        format!("{}", v as i64)
    } else {
        format!("{v:.2}")
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn svg_is_well_formed_and_deterministic() {
        let series = vec![BandSeries {
            name: "dropout".into(),
            color: "#1f77b4".into(),
            xs: vec![1.0, 2.0, 4.0],
            mins: vec![0.5, 0.6, 0.7],
            means: vec![0.6, 0.7, 0.8],
            maxs: vec![0.7, 0.8, 0.9],
        }];
        let a = band_plot_svg("auc vs r", "r", "auc", &series);
        let b = band_plot_svg("auc vs r", "r", "auc", &series);
        assert_eq!(a, b);
        assert!(a.starts_with("<svg"));
        assert!(a.ends_with("</svg>\n"));
        assert!(a.contains("polygon"));
        assert!(a.contains("polyline"));
    }

    #[test]
    fn svg_handles_degenerate_extent() {
        let series = vec![BandSeries {
            name: "s".into(),
            color: "red".into(),
            xs: vec![2.0],
            mins: vec![0.5],
            means: vec![0.5],
            maxs: vec![0.5],
        }];
        let svg = band_plot_svg("t", "x", "y", &series);
        assert!(!svg.contains("NaN"));
    }
}
