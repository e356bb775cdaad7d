//! Minimal vector canvas rendered both as SVG and as a raster PNG.
//! Text only appears in the SVG; the PNG carries the marks.

use std::fmt::Write as _;

use image::{Rgb, RgbImage};

pub type Color = [u8; 3];

pub const PALETTE: [Color; 8] = [
    [31, 119, 180],
    [214, 39, 40],
    [44, 160, 44],
    [255, 127, 14],
    [148, 103, 189],
    [140, 86, 75],
    [227, 119, 194],
    [127, 127, 127],
];

pub const BLACK: Color = [0, 0, 0];
pub const GRID: Color = [220, 220, 220];

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Anchor {
    Start,
    Middle,
    End,
}

#[derive(Clone, Debug, PartialEq)]
enum Item {
    Rect { x: f64, y: f64, w: f64, h: f64, fill: Color, class: &'static str },
    Line { a: (f64, f64), b: (f64, f64), stroke: Color, width: f64, class: &'static str },
    Polyline { pts: Vec<(f64, f64)>, stroke: Color, class: &'static str },
    Circle { c: (f64, f64), r: f64, fill: Color, class: &'static str },
    Cross { c: (f64, f64), r: f64, stroke: Color, class: &'static str },
    Text { at: (f64, f64), text: String, size: f64, anchor: Anchor, rotate: bool },
}

#[derive(Clone, Debug)]
pub struct Canvas {
    pub width: u32,
    pub height: u32,
    items: Vec<Item>,
}

fn hex(c: Color) -> String {
    format!("#{:02x}{:02x}{:02x}", c[0], c[1], c[2])
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

impl Canvas {
    pub fn new(width: u32, height: u32) -> Self {
        Self { width, height, items: Vec::new() }
    }

    pub fn rect(&mut self, x: f64, y: f64, w: f64, h: f64, fill: Color, class: &'static str) {
        self.items.push(Item::Rect { x, y, w, h, fill, class });
    }

    pub fn line(&mut self, a: (f64, f64), b: (f64, f64), stroke: Color, width: f64, class: &'static str) {
        self.items.push(Item::Line { a, b, stroke, width, class });
    }

    pub fn polyline(&mut self, pts: Vec<(f64, f64)>, stroke: Color, class: &'static str) {
        self.items.push(Item::Polyline { pts, stroke, class });
    }

    pub fn circle(&mut self, c: (f64, f64), r: f64, fill: Color, class: &'static str) {
        self.items.push(Item::Circle { c, r, fill, class });
    }

    pub fn cross(&mut self, c: (f64, f64), r: f64, stroke: Color, class: &'static str) {
        self.items.push(Item::Cross { c, r, stroke, class });
    }

    pub fn text(&mut self, at: (f64, f64), text: impl Into<String>, size: f64, anchor: Anchor) {
        self.items.push(Item::Text { at, text: text.into(), size, anchor, rotate: false });
    }

    /// Text rotated 90° counter-clockwise around its anchor.
    pub fn vtext(&mut self, at: (f64, f64), text: impl Into<String>, size: f64) {
        self.items.push(Item::Text { at, text: text.into(), size, anchor: Anchor::Middle, rotate: true });
    }

    pub fn to_svg(&self) -> String {
        let mut s = format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\" font-family=\"sans-serif\">\n<rect width=\"{w}\" height=\"{h}\" fill=\"#ffffff\"/>\n",
            w = self.width,
            h = self.height
        );
        for item in &self.items {
            match item {
                Item::Rect { x, y, w, h, fill, class } => {
                    let _ = writeln!(
                        s,
                        "<rect class=\"{class}\" x=\"{x:.2}\" y=\"{y:.2}\" width=\"{w:.2}\" height=\"{h:.2}\" fill=\"{}\"/>",
                        hex(*fill)
                    );
                }
                Item::Line { a, b, stroke, width, class } => {
                    let _ = writeln!(
                        s,
                        "<line class=\"{class}\" x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"{}\" stroke-width=\"{width}\"/>",
                        a.0,
                        a.1,
                        b.0,
                        b.1,
                        hex(*stroke)
                    );
                }
                Item::Polyline { pts, stroke, class } => {
                    let p: Vec<String> = pts.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
                    let _ = writeln!(
                        s,
                        "<polyline class=\"{class}\" points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\"/>",
                        p.join(" "),
                        hex(*stroke)
                    );
                }
                Item::Circle { c, r, fill, class } => {
                    let _ = writeln!(
                        s,
                        "<circle class=\"{class}\" cx=\"{:.2}\" cy=\"{:.2}\" r=\"{r}\" fill=\"{}\"/>",
                        c.0,
                        c.1,
                        hex(*fill)
                    );
                }
                Item::Cross { c, r, stroke, class } => {
                    let _ = writeln!(
                        s,
                        "<path class=\"{class}\" d=\"M{:.2},{:.2} L{:.2},{:.2} M{:.2},{:.2} L{:.2},{:.2}\" stroke=\"{}\" stroke-width=\"1.5\" fill=\"none\"/>",
                        c.0 - r,
                        c.1 - r,
                        c.0 + r,
                        c.1 + r,
                        c.0 - r,
                        c.1 + r,
                        c.0 + r,
                        c.1 - r,
                        hex(*stroke)
                    );
                }
                Item::Text { at, text, size, anchor, rotate } => {
                    let a = match anchor {
                        Anchor::Start => "start",
                        Anchor::Middle => "middle",
                        Anchor::End => "end",
                    };
                    let tr = if *rotate {
                        format!(" transform=\"rotate(-90 {:.2} {:.2})\"", at.0, at.1)
                    } else {
                        String::new()
                    };
                    let _ = writeln!(
                        s,
                        "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"{size}\" text-anchor=\"{a}\"{tr}>{}</text>",
                        at.0,
                        at.1,
                        escape(text)
                    );
                }
            }
        }
        s.push_str("</svg>\n");
        s
    }

    pub fn to_png(&self) -> RgbImage {
        let mut img = RgbImage::from_pixel(self.width, self.height, Rgb([255, 255, 255]));
        for item in &self.items {
            match item {
                Item::Rect { x, y, w, h, fill, .. } => fill_rect(&mut img, *x, *y, *w, *h, *fill),
                Item::Line { a, b, stroke, width, .. } => draw_line(&mut img, *a, *b, *width, *stroke),
                Item::Polyline { pts, stroke, .. } => {
                    for w in pts.windows(2) {
                        draw_line(&mut img, w[0], w[1], 1.5, *stroke);
                    }
                }
                Item::Circle { c, r, fill, .. } => fill_disk(&mut img, *c, *r, *fill),
                Item::Cross { c, r, stroke, .. } => {
                    draw_line(&mut img, (c.0 - r, c.1 - r), (c.0 + r, c.1 + r), 1.5, *stroke);
                    draw_line(&mut img, (c.0 - r, c.1 + r), (c.0 + r, c.1 - r), 1.5, *stroke);
                }
                Item::Text { .. } => {}
            }
        }
        img
    }
}

fn put(img: &mut RgbImage, x: i64, y: i64, c: Color) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, Rgb(c));
    }
}

fn fill_rect(img: &mut RgbImage, x: f64, y: f64, w: f64, h: f64, c: Color) {
    let (x0, x1) = (x.min(x + w).round() as i64, x.max(x + w).round() as i64);
    let (y0, y1) = (y.min(y + h).round() as i64, y.max(y + h).round() as i64);
    for py in y0..y1 {
        for px in x0..x1 {
            put(img, px, py, c);
        }
    }
}

fn fill_disk(img: &mut RgbImage, c: (f64, f64), r: f64, col: Color) {
    let (x0, x1) = ((c.0 - r).floor() as i64, (c.0 + r).ceil() as i64);
    let (y0, y1) = ((c.1 - r).floor() as i64, (c.1 + r).ceil() as i64);
    for py in y0..=y1 {
        for px in x0..=x1 {
            let (dx, dy) = (px as f64 + 0.5 - c.0, py as f64 + 0.5 - c.1);
            if dx * dx + dy * dy <= r * r {
                put(img, px, py, col);
            }
        }
    }
}

fn draw_line(img: &mut RgbImage, a: (f64, f64), b: (f64, f64), width: f64, c: Color) {
    let len = ((b.0 - a.0).powi(2) + (b.1 - a.1).powi(2)).sqrt();
    let steps = (len * 2.0).ceil().max(1.0) as usize;
    let r = (width / 2.0).max(0.5);
    for i in 0..=steps {
        let t = i as f64 / steps as f64;
        let p = (a.0 + (b.0 - a.0) * t, a.1 + (b.1 - a.1) * t);
        if r <= 0.75 {
            put(img, p.0.floor() as i64, p.1.floor() as i64, c);
        } else {
            fill_disk(img, p, r, c);
        }
    }
}

/// Maps data coordinates into a plot rectangle.
#[derive(Clone, Copy, Debug)]
pub struct Axes {
    pub left: f64,
    pub top: f64,
    pub width: f64,
    pub height: f64,
    pub x: (f64, f64),
    pub y: (f64, f64),
}

impl Axes {
    pub fn px(&self, x: f64) -> f64 {
        let span = self.x.1 - self.x.0;
        self.left + if span == 0.0 { 0.5 } else { (x - self.x.0) / span } * self.width
    }

    pub fn py(&self, y: f64) -> f64 {
        let span = self.y.1 - self.y.0;
        self.top + self.height - if span == 0.0 { 0.5 } else { (y - self.y.0) / span } * self.height
    }

    /// Frame, horizontal grid and five labelled y ticks.
    pub fn frame(&self, c: &mut Canvas, y_label: &str) {
        for i in 0..=4 {
            let v = self.y.0 + (self.y.1 - self.y.0) * i as f64 / 4.0;
            let y = self.py(v);
            c.line((self.left, y), (self.left + self.width, y), GRID, 1.0, "grid");
            c.line((self.left - 4.0, y), (self.left, y), BLACK, 1.0, "ytick");
            c.text((self.left - 6.0, y + 4.0), format_tick(v), 10.0, Anchor::End);
        }
        let (l, t, r, b) = (self.left, self.top, self.left + self.width, self.top + self.height);
        c.line((l, b), (r, b), BLACK, 1.0, "axis");
        c.line((l, t), (l, b), BLACK, 1.0, "axis");
        c.vtext((l - 46.0, t + self.height / 2.0), y_label, 11.0);
    }

    /// One tick per `(position, label)` along the bottom edge.
    pub fn x_ticks(&self, c: &mut Canvas, ticks: &[(f64, String)], rotate: bool) {
        let b = self.top + self.height;
        for (x, label) in ticks {
            let px = self.px(*x);
            c.line((px, b), (px, b + 4.0), BLACK, 1.0, "xtick");
            if rotate {
                c.items.push(Item::Text {
                    at: (px + 3.0, b + 8.0),
                    text: label.clone(),
                    size: 9.0,
                    anchor: Anchor::End,
                    rotate: true,
                });
            } else {
                c.text((px, b + 16.0), label.clone(), 10.0, Anchor::Middle);
            }
        }
    }
}

pub fn format_tick(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() >= 1e4 || v.abs() < 1e-2 {
        format!("{v:.1e}")
    } else {
        format!("{v:.2}")
    }
}

/// `(lo, hi)` of the values padded by 5%; a degenerate range is widened.
pub fn padded_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in values.filter(|v| v.is_finite()) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        let pad = lo.abs().max(1.0) * 0.5;
        return (lo - pad, hi + pad);
    }
    let pad = (hi - lo) * 0.05;
    (lo - pad, hi + pad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn svg_and_png_agree_on_marks() {
        let mut c = Canvas::new(40, 30);
        c.rect(0.0, 0.0, 10.0, 10.0, [255, 0, 0], "bar");
        c.cross((30.0, 20.0), 3.0, [0, 0, 255], "outlier");
        let svg = c.to_svg();
        assert_eq!(svg.matches("class=\"bar\"").count(), 1);
        assert_eq!(svg.matches("class=\"outlier\"").count(), 1);
        let png = c.to_png();
        assert_eq!(png.get_pixel(5, 5).0, [255, 0, 0]);
        assert_eq!(png.get_pixel(30, 20).0, [0, 0, 255]);
        assert_eq!(png.get_pixel(20, 5).0, [255, 255, 255]);
    }

    #[test]
    fn axes_map_corners() {
        let a = Axes { left: 10.0, top: 5.0, width: 100.0, height: 50.0, x: (0.0, 1.0), y: (0.0, 2.0) };
        assert_eq!((a.px(0.0), a.py(0.0)), (10.0, 55.0));
        assert_eq!((a.px(1.0), a.py(2.0)), (110.0, 5.0));
    }
}
