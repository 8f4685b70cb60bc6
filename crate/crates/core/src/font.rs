//! Embedded bitmap faces shared by the sample generator and the recognizer.

use std::sync::LazyLock;

use serde::{Deserialize, Serialize};

use crate::image::{Rect, RasterImage};

/// The 62 printable labels: upper case, lower case, digits.
pub const ALPHABET: &str = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789";

pub fn in_alphabet(c: char) -> bool {
    c.is_ascii_alphanumeric()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FontId {
    /// The public-domain 8x8 PC-style face from `font8x8`.
    Block8,
    /// A 5x8 face with one-pixel strokes and descenders in the last row.
    Slim5,
}

impl FontId {
    pub const ALL: [FontId; 2] = [FontId::Block8, FontId::Slim5];

    pub fn name(self) -> &'static str {
        match self {
            FontId::Block8 => "block8",
            FontId::Slim5 => "slim5",
        }
    }

    pub fn face(self) -> &'static BitmapFont {
        match self {
            FontId::Block8 => &BLOCK8,
            FontId::Slim5 => &SLIM5,
        }
    }
}

/// Monochrome face; each glyph is `cell_h` row masks, bit 0 the leftmost pixel.
pub struct BitmapFont {
    pub cell_w: usize,
    pub cell_h: usize,
    glyphs: Vec<(char, Vec<u8>)>,
}

impl BitmapFont {
    pub fn glyph(&self, c: char) -> Option<&[u8]> {
        self.glyphs.iter().find(|(g, _)| *g == c).map(|(_, rows)| rows.as_slice())
    }

    /// Width in pixels of a cell rendered `height_px` tall.
    pub fn cell_width_px(&self, height_px: usize) -> usize {
        ((self.cell_w * height_px) as f64 / self.cell_h as f64).round().max(1.0) as usize
    }
}

/// A glyph rendered into its full cell, with the tight ink bounding box.
#[derive(Clone, Debug)]
pub struct GlyphMask {
    pub width: usize,
    pub height: usize,
    pub ink: Vec<bool>,
    pub ink_box: Rect,
}

impl GlyphMask {
    pub fn is_ink(&self, x: usize, y: usize) -> bool {
        self.ink[y * self.width + x]
    }

    /// Tight crop of the ink as a 0/1 image.
    pub fn ink_image(&self) -> RasterImage {
        let b = self.ink_box;
        RasterImage::from_fn(b.w, b.h, |x, y| if self.is_ink(b.x + x, b.y + y) { 1.0 } else { 0.0 })
    }
}

/// Renders `c` with a cell `height_px` tall by nearest-neighbour scaling.
pub fn render_glyph(font: FontId, c: char, height_px: usize) -> Option<GlyphMask> {
    let face = font.face();
    let rows = face.glyph(c)?;
    let height = height_px.max(1);
    let width = face.cell_width_px(height);
    let mut ink = vec![false; width * height];
    let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
    for y in 0..height {
        let fy = y * face.cell_h / height;
        for x in 0..width {
            let fx = x * face.cell_w / width;
            if rows[fy] >> fx & 1 == 1 {
                ink[y * width + x] = true;
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x);
                y1 = y1.max(y);
            }
        }
    }
    if x0 == usize::MAX {
        return None;
    }
    Some(GlyphMask {
        width,
        height,
        ink,
        ink_box: Rect::new(x0, y0, x1 - x0 + 1, y1 - y0 + 1),
    })
}

static BLOCK8: LazyLock<BitmapFont> = LazyLock::new(|| BitmapFont {
    cell_w: 8,
    cell_h: 8,
    glyphs: ALPHABET
        .chars()
        .map(|c| (c, font8x8::legacy::BASIC_LEGACY[c as usize].to_vec()))
        .collect(),
});

static SLIM5: LazyLock<BitmapFont> = LazyLock::new(|| {
    let glyphs = SLIM5_ART
        .iter()
        .map(|(c, art)| {
            let rows: Vec<u8> = art
                .iter()
                .map(|row| {
                    row.bytes()
                        .enumerate()
                        .filter(|(_, b)| *b == b'#')
                        .fold(0u8, |m, (i, _)| m | 1 << i)
                })
                .collect();
            (*c, rows)
        })
        .collect();
    BitmapFont {
        cell_w: 6,
        cell_h: 8,
        glyphs,
    }
});

#[rustfmt::skip]
const SLIM5_ART: [(char, [&str; 8]); 62] = [
    ('A', [".###.", "#...#", "#...#", "#####", "#...#", "#...#", "#...#", "....."]),
    ('B', ["####.", "#...#", "#...#", "####.", "#...#", "#...#", "####.", "....."]),
    ('C', [".###.", "#...#", "#....", "#....", "#....", "#...#", ".###.", "....."]),
    ('D', ["###..", "#..#.", "#...#", "#...#", "#...#", "#..#.", "###..", "....."]),
    ('E', ["#####", "#....", "#....", "####.", "#....", "#....", "#####", "....."]),
    ('F', ["#####", "#....", "#....", "####.", "#....", "#....", "#....", "....."]),
    ('G', [".###.", "#...#", "#....", "#.###", "#...#", "#...#", ".####", "....."]),
    ('H', ["#...#", "#...#", "#...#", "#####", "#...#", "#...#", "#...#", "....."]),
    ('I', [".###.", "..#..", "..#..", "..#..", "..#..", "..#..", ".###.", "....."]),
    ('J', ["..###", "...#.", "...#.", "...#.", "...#.", "#..#.", ".##..", "....."]),
    ('K', ["#...#", "#..#.", "#.#..", "##...", "#.#..", "#..#.", "#...#", "....."]),
    ('L', ["#....", "#....", "#....", "#....", "#....", "#....", "#####", "....."]),
    ('M', ["#...#", "##.##", "#.#.#", "#.#.#", "#...#", "#...#", "#...#", "....."]),
    ('N', ["#...#", "#...#", "##..#", "#.#.#", "#..##", "#...#", "#...#", "....."]),
    ('O', [".###.", "#...#", "#...#", "#...#", "#...#", "#...#", ".###.", "....."]),
    ('P', ["####.", "#...#", "#...#", "####.", "#....", "#....", "#....", "....."]),
    ('Q', [".###.", "#...#", "#...#", "#...#", "#.#.#", "#..#.", ".##.#", "....."]),
    ('R', ["####.", "#...#", "#...#", "####.", "#.#..", "#..#.", "#...#", "....."]),
    ('S', [".####", "#....", "#....", ".###.", "....#", "....#", "####.", "....."]),
    ('T', ["#####", "..#..", "..#..", "..#..", "..#..", "..#..", "..#..", "....."]),
    ('U', ["#...#", "#...#", "#...#", "#...#", "#...#", "#...#", ".###.", "....."]),
    ('V', ["#...#", "#...#", "#...#", "#...#", "#...#", ".#.#.", "..#..", "....."]),
    ('W', ["#...#", "#...#", "#...#", "#.#.#", "#.#.#", "#.#.#", ".#.#.", "....."]),
    ('X', ["#...#", "#...#", ".#.#.", "..#..", ".#.#.", "#...#", "#...#", "....."]),
    ('Y', ["#...#", "#...#", ".#.#.", "..#..", "..#..", "..#..", "..#..", "....."]),
    ('Z', ["#####", "....#", "...#.", "..#..", ".#...", "#....", "#####", "....."]),
    ('a', [".....", ".....", ".###.", "....#", ".####", "#...#", ".####", "....."]),
    ('b', ["#....", "#....", "#.##.", "##..#", "#...#", "#...#", "####.", "....."]),
    ('c', [".....", ".....", ".###.", "#....", "#....", "#...#", ".###.", "....."]),
    ('d', ["....#", "....#", ".##.#", "#..##", "#...#", "#...#", ".####", "....."]),
    ('e', [".....", ".....", ".###.", "#...#", "#####", "#....", ".###.", "....."]),
    ('f', ["..##.", ".#..#", ".#...", "###..", ".#...", ".#...", ".#...", "....."]),
    ('g', [".....", ".....", ".####", "#...#", "#...#", ".####", "....#", ".###."]),
    ('h', ["#....", "#....", "#.##.", "##..#", "#...#", "#...#", "#...#", "....."]),
    ('i', ["..#..", ".....", ".##..", "..#..", "..#..", "..#..", ".###.", "....."]),
    ('j', ["...#.", ".....", "..##.", "...#.", "...#.", "...#.", "#..#.", ".##.."]),
    ('k', ["#....", "#....", "#..#.", "#.#..", "##...", "#.#..", "#..#.", "....."]),
    ('l', [".##..", "..#..", "..#..", "..#..", "..#..", "..#..", ".###.", "....."]),
    ('m', [".....", ".....", "##.#.", "#.#.#", "#.#.#", "#...#", "#...#", "....."]),
    ('n', [".....", ".....", "#.##.", "##..#", "#...#", "#...#", "#...#", "....."]),
    ('o', [".....", ".....", ".###.", "#...#", "#...#", "#...#", ".###.", "....."]),
    ('p', [".....", ".....", "####.", "#...#", "#...#", "####.", "#....", "#...."]),
    ('q', [".....", ".....", ".####", "#...#", "#...#", ".####", "....#", "....#"]),
    ('r', [".....", ".....", "#.##.", "##..#", "#....", "#....", "#....", "....."]),
    ('s', [".....", ".....", ".####", "#....", ".###.", "....#", "####.", "....."]),
    ('t', [".#...", ".#...", "###..", ".#...", ".#...", ".#..#", "..##.", "....."]),
    ('u', [".....", ".....", "#...#", "#...#", "#...#", "#..##", ".##.#", "....."]),
    ('v', [".....", ".....", "#...#", "#...#", "#...#", ".#.#.", "..#..", "....."]),
    ('w', [".....", ".....", "#...#", "#...#", "#.#.#", "#.#.#", ".#.#.", "....."]),
    ('x', [".....", ".....", "#...#", ".#.#.", "..#..", ".#.#.", "#...#", "....."]),
    ('y', [".....", ".....", "#...#", "#...#", "#...#", ".####", "....#", ".###."]),
    ('z', [".....", ".....", "#####", "...#.", "..#..", ".#...", "#####", "....."]),
    ('0', [".###.", "#...#", "#..##", "#.#.#", "##..#", "#...#", ".###.", "....."]),
    ('1', ["..#..", ".##..", "..#..", "..#..", "..#..", "..#..", ".###.", "....."]),
    ('2', [".###.", "#...#", "....#", "...#.", "..#..", ".#...", "#####", "....."]),
    ('3', ["#####", "...#.", "..#..", "...#.", "....#", "#...#", ".###.", "....."]),
    ('4', ["...#.", "..##.", ".#.#.", "#..#.", "#####", "...#.", "...#.", "....."]),
    ('5', ["#####", "#....", "####.", "....#", "....#", "#...#", ".###.", "....."]),
    ('6', ["..##.", ".#...", "#....", "####.", "#...#", "#...#", ".###.", "....."]),
    ('7', ["#####", "....#", "...#.", "..#..", ".#...", ".#...", ".#...", "....."]),
    ('8', [".###.", "#...#", "#...#", ".###.", "#...#", "#...#", ".###.", "....."]),
    ('9', [".###.", "#...#", "#...#", ".####", "....#", "...#.", ".##..", "....."]),
];
