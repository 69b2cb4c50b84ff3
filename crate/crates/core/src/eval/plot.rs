use std::fmt::Write;

use super::ExperimentReport;

const WIDTH: f64 = 480.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 56.0;
const COLORS: [&str; 6] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"];

fn header(s: &mut String, title: &str) {
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn axes(s: &mut String, x_label: &str, y_label: &str) {
    let (x0, y0, x1, y1) = (MARGIN, HEIGHT - MARGIN, WIDTH - MARGIN / 2.0, MARGIN / 1.5);
    let _ = writeln!(
        s,
        r#"<path d="M{x0} {y1} L{x0} {y0} L{x1} {y0}" fill="none" stroke="black"/>"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        (x0 + x1) / 2.0,
        HEIGHT - 14.0,
        escape(x_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        escape(y_label)
    );
}

fn plot_x(v: f64) -> f64 {
    MARGIN + v * (WIDTH - 1.5 * MARGIN)
}

fn plot_y(v: f64) -> f64 {
    HEIGHT - MARGIN - v * (HEIGHT - MARGIN - MARGIN / 1.5)
}

/// Mean empirical coverage against nominal confidence `1 - eps_g`, one line
/// per copula, with the identity line dashed.
pub fn validity_svg(report: &ExperimentReport) -> String {
    let mut s = String::new();
    header(&mut s, "Validity");
    axes(&mut s, "nominal confidence 1 - eps", "empirical coverage");
    for t in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">{t}</text>"#,
            plot_x(t),
            HEIGHT - MARGIN + 16.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end">{t}</text>"#,
            MARGIN - 6.0,
            plot_y(t) + 4.0
        );
    }
    let _ = writeln!(
        s,
        r##"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="#888" stroke-dasharray="4 4"/>"##,
        plot_x(0.0),
        plot_y(0.0),
        plot_x(1.0),
        plot_y(1.0)
    );
    let grid = &report.settings.epsilon_grid;
    for (i, c) in report.summary.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let points: Vec<String> = grid
            .iter()
            .zip(&c.mean_coverage)
            .map(|(e, cov)| format!("{:.2},{:.2}", plot_x(1.0 - e), plot_y(*cov)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
            points.join(" ")
        );
        let ly = MARGIN + 18.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
            MARGIN + 12.0,
            MARGIN + 32.0,
            MARGIN + 38.0,
            ly + 4.0,
            c.copula.as_str()
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Box plots of the per-test-point box volumes at the reference level.
pub fn volume_boxplot_svg(report: &ExperimentReport) -> String {
    let mut s = String::new();
    header(&mut s, "Box volume at eps = 0.1");
    axes(&mut s, "copula", "volume");
    let stats: Vec<_> = report
        .summary
        .iter()
        .filter_map(|c| c.volume_box.map(|b| (c.copula.as_str(), b)))
        .collect();
    let top = stats
        .iter()
        .map(|(_, b)| b.whisker_high)
        .fold(0.0f64, f64::max);
    let top = if top > 0.0 { top * 1.05 } else { 1.0 };
    let scale = |v: f64| plot_y(v / top);
    for t in [0.0, 0.5, 1.0] {
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end">{:.3}</text>"#,
            MARGIN - 6.0,
            plot_y(t) + 4.0,
            t * top
        );
    }
    let slot = 1.0 / stats.len().max(1) as f64;
    for (i, (name, b)) in stats.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let cx = plot_x(slot * (i as f64 + 0.5));
        let half = 0.25 * slot * (WIDTH - 1.5 * MARGIN);
        let _ = writeln!(
            s,
            r#"<line x1="{cx}" y1="{}" x2="{cx}" y2="{}" stroke="black"/>"#,
            scale(b.whisker_low),
            scale(b.whisker_high)
        );
        let _ = writeln!(
            s,
            r#"<rect x="{}" y="{}" width="{}" height="{}" fill="{color}" fill-opacity="0.5" stroke="black"/>"#,
            cx - half,
            scale(b.q3),
            2.0 * half,
            (scale(b.q1) - scale(b.q3)).max(0.0)
        );
        let _ = writeln!(
            s,
            r#"<line x1="{}" y1="{m}" x2="{}" y2="{m}" stroke="black" stroke-width="2"/>"#,
            cx - half,
            cx + half,
            m = scale(b.median)
        );
        let _ = writeln!(
            s,
            r#"<text x="{cx}" y="{}" text-anchor="middle">{name}</text>"#,
            HEIGHT - MARGIN + 16.0
        );
    }
    s.push_str("</svg>\n");
    s
}
