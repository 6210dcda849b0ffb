//! FAST corner detection (16-point Bresenham circle segment test).
//!
//! A pixel is a corner when at least `arc_length` contiguous pixels on the
//! radius-3 circle around it are all brighter than `center + threshold` or
//! all darker than `center - threshold`. Contiguity wraps around the circle.
//! Pixels within radius 3 of the frame border are excluded.

use crate::error::{Error, Result};

use super::Frame;

/// A detected corner location.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Corner {
    pub x: usize,
    pub y: usize,
}

/// The 16 circle offsets, clockwise from 12 o'clock.
pub const CIRCLE: [(i32, i32); 16] = [
    (0, -3),
    (1, -3),
    (2, -2),
    (3, -1),
    (3, 0),
    (3, 1),
    (2, 2),
    (1, 3),
    (0, 3),
    (-1, 3),
    (-2, 2),
    (-3, 1),
    (-3, 0),
    (-3, -1),
    (-2, -2),
    (-1, -3),
];

/// Longest circular run of `true` in a 16-flag ring.
fn max_circular_run(flags: &[bool; 16]) -> usize {
    if flags.iter().all(|&f| f) {
        return 16;
    }
    let mut best = 0;
    let mut run = 0;
    // Doubling the ring handles wraparound; the all-true case is gone.
    for i in 0..32 {
        if flags[i % 16] {
            run += 1;
            best = best.max(run);
        } else {
            run = 0;
        }
    }
    best.min(16)
}

/// Runs the segment test over every interior pixel and returns all corners
/// in row-major order.
pub fn fast_corners(frame: &Frame, threshold: u8, arc_length: usize) -> Result<Vec<Corner>> {
    if threshold == 0 {
        return Err(Error::argument("FAST threshold must be > 0"));
    }
    if arc_length == 0 || arc_length > 16 {
        return Err(Error::argument("arc_length must lie in 1..=16"));
    }
    let (w, h) = (frame.width(), frame.height());
    let mut corners = Vec::new();
    let t = threshold as i32;
    for y in 3..h - 3 {
        for x in 3..w - 3 {
            let center = frame.get(x, y) as i32;
            let hi = center + t;
            let lo = center - t;

            // Compass-point pre-test: a run of >= 9 must contain at least
            // two of the four points at offsets 0, 4, 8, 12. Only safe for
            // the FAST-9 family.
            if arc_length >= 9 {
                let mut brighter = 0;
                let mut darker = 0;
                for &idx in &[0usize, 4, 8, 12] {
                    let (dx, dy) = CIRCLE[idx];
                    let v = frame.get((x as i32 + dx) as usize, (y as i32 + dy) as usize) as i32;
                    if v > hi {
                        brighter += 1;
                    } else if v < lo {
                        darker += 1;
                    }
                }
                if brighter < 2 && darker < 2 {
                    continue;
                }
            }

            let mut bright = [false; 16];
            let mut dark = [false; 16];
            for (i, &(dx, dy)) in CIRCLE.iter().enumerate() {
                let v = frame.get((x as i32 + dx) as usize, (y as i32 + dy) as usize) as i32;
                bright[i] = v > hi;
                dark[i] = v < lo;
            }
            if max_circular_run(&bright) >= arc_length || max_circular_run(&dark) >= arc_length {
                corners.push(Corner { x, y });
            }
        }
    }
    Ok(corners)
}
