use std::fmt::Write as _;

const WIDTH: f64 = 480.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 56.0;
const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

/// Static line plot on the unit square, one series per week.
pub fn plot(title: &str, x_label: &str, y_label: &str, series: &[(usize, Vec<(f64, f64)>)]) -> String {
    let pw = WIDTH - 2.0 * MARGIN;
    let ph = HEIGHT - 2.0 * MARGIN;
    let px = |x: f64| MARGIN + x.clamp(0.0, 1.0) * pw;
    let py = |y: f64| HEIGHT - MARGIN - y.clamp(0.0, 1.0) * ph;
    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    )
    .unwrap();
    writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
    writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#, WIDTH / 2.0, title).unwrap();
    writeln!(s, r#"<rect x="{MARGIN}" y="{MARGIN}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#).unwrap();
    for k in 0..=4 {
        let v = k as f64 / 4.0;
        writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, px(v), HEIGHT - MARGIN + 16.0, v).unwrap();
        writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#, MARGIN - 6.0, py(v) + 4.0, v).unwrap();
    }
    writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, WIDTH / 2.0, HEIGHT - 14.0, x_label).unwrap();
    writeln!(s, r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#, HEIGHT / 2.0, HEIGHT / 2.0, y_label).unwrap();
    for (i, (week, pts)) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let path: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
        writeln!(s, r#"<polyline fill="none" stroke="{}" stroke-width="1.5" points="{}"/>"#, color, path.join(" ")).unwrap();
        let ly = MARGIN + 16.0 + 16.0 * i as f64;
        writeln!(s, r#"<text x="{:.1}" y="{:.1}" fill="{}">week {}</text>"#, WIDTH - MARGIN - 60.0, ly, color, week).unwrap();
    }
    s.push_str("</svg>\n");
    s
}
