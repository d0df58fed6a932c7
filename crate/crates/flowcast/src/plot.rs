//! Minimal SVG rendering for the report stage: an equity-vs-benchmark line
//! chart and a rolling-accuracy histogram. Output is deterministic text with
//! no external assets.

use std::fmt::Write;

const WIDTH: f64 = 860.0;
const HEIGHT: f64 = 420.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 20.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 50.0;

fn plot_width() -> f64 {
    WIDTH - MARGIN_LEFT - MARGIN_RIGHT
}

fn plot_height() -> f64 {
    HEIGHT - MARGIN_TOP - MARGIN_BOTTOM
}

fn header(title: &str) -> String {
    format!(
        concat!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" ",
            "viewBox=\"0 0 {w} {h}\" font-family=\"sans-serif\">\n",
            "<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n",
            "<text x=\"{cx}\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">{title}</text>\n"
        ),
        w = WIDTH,
        h = HEIGHT,
        cx = WIDTH / 2.0,
        title = title
    )
}

fn axes() -> String {
    format!(
        concat!(
            "<line x1=\"{l}\" y1=\"{t}\" x2=\"{l}\" y2=\"{b}\" stroke=\"black\"/>\n",
            "<line x1=\"{l}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n"
        ),
        l = MARGIN_LEFT,
        t = MARGIN_TOP,
        b = HEIGHT - MARGIN_BOTTOM,
        r = WIDTH - MARGIN_RIGHT
    )
}

fn polyline(points: &[(f64, f64)], color: &str) -> String {
    let mut path = String::new();
    for (x, y) in points {
        let _ = write!(path, "{:.2},{:.2} ", x, y);
    }
    format!(
        "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
        path.trim_end()
    )
}

/// Equity curves on a shared bar axis. Series are (name, values); all series
/// must share the length of `bars`.
pub fn render_equity_chart(
    title: &str,
    bars: &[usize],
    series: &[(&str, &[f64])],
) -> Option<String> {
    if bars.is_empty() || series.is_empty() || series.iter().any(|(_, v)| v.len() != bars.len()) {
        return None;
    }
    let values = series.iter().flat_map(|(_, v)| v.iter().copied());
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !(lo.is_finite() && hi.is_finite()) {
        return None;
    }
    if hi - lo < 1e-12 {
        hi = lo + 1.0; // flat curves still render on a visible scale
    }
    let x_lo = bars[0] as f64;
    let x_hi = *bars.last().unwrap() as f64;
    let x_span = (x_hi - x_lo).max(1.0);
    let to_x = |b: usize| MARGIN_LEFT + (b as f64 - x_lo) / x_span * plot_width();
    let to_y = |v: f64| MARGIN_TOP + (hi - v) / (hi - lo) * plot_height();

    let mut svg = header(title);
    svg.push_str(&axes());
    let colors = ["#1f6fb2", "#c25b1e", "#3a8f4d", "#8447a8"];
    for (i, (name, vals)) in series.iter().enumerate() {
        let color = colors[i % colors.len()];
        let points: Vec<(f64, f64)> =
            bars.iter().zip(*vals).map(|(&b, &v)| (to_x(b), to_y(v))).collect();
        svg.push_str(&polyline(&points, color));
        let ly = MARGIN_TOP + 16.0 * i as f64;
        let _ = write!(
            svg,
            concat!(
                "<rect x=\"{x}\" y=\"{y}\" width=\"12\" height=\"3\" fill=\"{c}\"/>\n",
                "<text x=\"{tx}\" y=\"{ty}\" font-size=\"12\">{name}</text>\n"
            ),
            x = MARGIN_LEFT + 10.0,
            y = ly,
            c = color,
            tx = MARGIN_LEFT + 28.0,
            ty = ly + 5.0,
            name = name
        );
    }
    // y extremes and x extremes as tick labels
    let _ = write!(
        svg,
        concat!(
            "<text x=\"{lx}\" y=\"{ty}\" text-anchor=\"end\" font-size=\"11\">{hi:.4}</text>\n",
            "<text x=\"{lx}\" y=\"{by}\" text-anchor=\"end\" font-size=\"11\">{lo:.4}</text>\n",
            "<text x=\"{bx0}\" y=\"{xy}\" font-size=\"11\">{x0}</text>\n",
            "<text x=\"{bx1}\" y=\"{xy}\" text-anchor=\"end\" font-size=\"11\">{x1}</text>\n",
            "<text x=\"{cx}\" y=\"{xy}\" text-anchor=\"middle\" font-size=\"12\">bar index</text>\n"
        ),
        lx = MARGIN_LEFT - 6.0,
        ty = MARGIN_TOP + 4.0,
        by = HEIGHT - MARGIN_BOTTOM,
        hi = hi,
        lo = lo,
        bx0 = MARGIN_LEFT,
        bx1 = WIDTH - MARGIN_RIGHT,
        xy = HEIGHT - MARGIN_BOTTOM + 18.0,
        x0 = bars[0],
        x1 = bars.last().unwrap(),
        cx = MARGIN_LEFT + plot_width() / 2.0
    );
    svg.push_str("</svg>\n");
    Some(svg)
}

/// Histogram of (bin_low, count) pairs with uniform bin width.
pub fn render_histogram(title: &str, bins: &[(f64, usize)], x_label: &str) -> Option<String> {
    if bins.is_empty() {
        return None;
    }
    let peak = bins.iter().map(|&(_, c)| c).max().unwrap_or(0).max(1);
    let bar_w = plot_width() / bins.len() as f64;
    let mut svg = header(title);
    svg.push_str(&axes());
    for (i, &(lo, count)) in bins.iter().enumerate() {
        let h = count as f64 / peak as f64 * plot_height();
        let x = MARGIN_LEFT + i as f64 * bar_w;
        let y = HEIGHT - MARGIN_BOTTOM - h;
        let _ = write!(
            svg,
            "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"#1f6fb2\" stroke=\"white\"/>\n",
            x,
            y,
            (bar_w - 1.0).max(1.0),
            h
        );
        if i % (bins.len() / 10).max(1) == 0 {
            let _ = write!(
                svg,
                "<text x=\"{:.2}\" y=\"{}\" font-size=\"10\">{:.2}</text>\n",
                x,
                HEIGHT - MARGIN_BOTTOM + 14.0,
                lo
            );
        }
    }
    let _ = write!(
        svg,
        concat!(
            "<text x=\"{lx}\" y=\"{ty}\" text-anchor=\"end\" font-size=\"11\">{peak}</text>\n",
            "<text x=\"{lx}\" y=\"{by}\" text-anchor=\"end\" font-size=\"11\">0</text>\n",
            "<text x=\"{cx}\" y=\"{xy}\" text-anchor=\"middle\" font-size=\"12\">{label}</text>\n"
        ),
        lx = MARGIN_LEFT - 6.0,
        ty = MARGIN_TOP + 4.0,
        by = HEIGHT - MARGIN_BOTTOM,
        peak = peak,
        cx = MARGIN_LEFT + plot_width() / 2.0,
        xy = HEIGHT - MARGIN_BOTTOM + 32.0,
        label = x_label
    );
    svg.push_str("</svg>\n");
    Some(svg)
}
