//! Independent reference implementations used as test oracles. Each one
//! takes the slow, obvious route: cell enumeration for overlap scores and
//! exhaustive search for two-way partitions.

#![allow(dead_code)]

use aba_core::model::{LabelGridImage, LabelId, LabelRegistry};
use rand::Rng;

pub const GRID: usize = 8;

/// Labels of the random oracle images; `bg` is the background.
pub fn oracle_registry() -> LabelRegistry {
    LabelRegistry::new(["bg", "a", "b", "c", "d"])
}

/// Random 8×8 image over labels 0..=4, with extra background so segments
/// vary in size and some labels are absent.
pub fn random_image(rng: &mut impl Rng) -> LabelGridImage {
    let density: f64 = rng.random_range(0.2..0.9);
    let cells = (0..GRID * GRID)
        .map(|_| {
            if rng.random::<f64>() < density {
                LabelId(rng.random_range(1..=4))
            } else {
                LabelId(0)
            }
        })
        .collect();
    LabelGridImage::from_cells(GRID, GRID, cells).unwrap()
}

/// How a clause moves the OOD segment before scoring.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Shift {
    None,
    Left,
    Right,
    Top,
    Base,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Clause {
    pub shift: Shift,
    pub ood: u16,
    pub id: u16,
}

impl Clause {
    pub fn text(&self, registry: &LabelRegistry) -> String {
        let o = registry.name(LabelId(self.ood)).unwrap();
        let i = registry.name(LabelId(self.id)).unwrap();
        match self.shift {
            Shift::None => format!("match {o} with {i}"),
            Shift::Left => format!("align-edge left {o} {i}"),
            Shift::Right => format!("align-edge right {o} {i}"),
            Shift::Top => format!("align-vert top {o} {i}"),
            Shift::Base => format!("align-vert base {o} {i}"),
        }
    }
}

pub fn random_clause(rng: &mut impl Rng) -> Clause {
    let shift = match rng.random_range(0..5) {
        0 => Shift::None,
        1 => Shift::Left,
        2 => Shift::Right,
        3 => Shift::Top,
        _ => Shift::Base,
    };
    Clause {
        shift,
        ood: rng.random_range(1..=4),
        id: rng.random_range(1..=4),
    }
}

fn has(image: &LabelGridImage, label: u16, r: i32, c: i32) -> bool {
    (0..GRID as i32).contains(&r)
        && (0..GRID as i32).contains(&c)
        && image.get(r as usize, c as usize) == LabelId(label)
}

/// (min row, max row, min col, max col) of a label, by scanning every cell.
fn extent(image: &LabelGridImage, label: u16) -> Option<(i32, i32, i32, i32)> {
    let mut e: Option<(i32, i32, i32, i32)> = None;
    for r in 0..GRID as i32 {
        for c in 0..GRID as i32 {
            if has(image, label, r, c) {
                e = Some(match e {
                    None => (r, r, c, c),
                    Some((t, b, l, rt)) => (t.min(r), b.max(r), l.min(c), rt.max(c)),
                });
            }
        }
    }
    e
}

/// IoU of the cells labelled `a` in `x`, moved by (dr, dc), against the
/// cells labelled `b` in `y`, counted over a window wide enough to hold any
/// shifted cell.
pub fn shifted_iou(
    x: &LabelGridImage,
    a: u16,
    y: &LabelGridImage,
    b: u16,
    dr: i32,
    dc: i32,
) -> f64 {
    let n = GRID as i32;
    let (mut inter, mut union) = (0u32, 0u32);
    for r in -2 * n..3 * n {
        for c in -2 * n..3 * n {
            let in_x = has(x, a, r - dr, c - dc);
            let in_y = has(y, b, r, c);
            inter += u32::from(in_x && in_y);
            union += u32::from(in_x || in_y);
        }
    }
    if union == 0 {
        0.0
    } else {
        f64::from(inter) / f64::from(union)
    }
}

/// Summed overlap of every clause whose two labels are both present.
pub fn alignment_oracle(ood: &LabelGridImage, id: &LabelGridImage, clauses: &[Clause]) -> f64 {
    let mut total = 0.0;
    for cl in clauses {
        let (Some(eo), Some(ei)) = (extent(ood, cl.ood), extent(id, cl.id)) else {
            continue;
        };
        let (dr, dc) = match cl.shift {
            Shift::None => (0, 0),
            Shift::Left => (0, ei.2 - eo.2),
            Shift::Right => (0, ei.3 - eo.3),
            Shift::Top => (ei.0 - eo.0, 0),
            Shift::Base => (ei.1 - eo.1, 0),
        };
        total += shifted_iou(ood, cl.ood, id, cl.id, dr, dc);
    }
    total
}

fn sse(points: &[Vec<f64>], members: &[usize]) -> f64 {
    if members.is_empty() {
        return 0.0;
    }
    let dim = points[0].len();
    let mut mean = vec![0.0; dim];
    for &i in members {
        for (m, v) in mean.iter_mut().zip(&points[i]) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= members.len() as f64;
    }
    members
        .iter()
        .map(|&i| {
            points[i]
                .iter()
                .zip(&mean)
                .map(|(v, m)| (v - m) * (v - m))
                .sum::<f64>()
        })
        .sum()
}

/// Smallest within-cluster sum of squares over every split into two
/// non-empty groups, and one split achieving it (as a membership mask).
pub fn best_bipartition(points: &[Vec<f64>]) -> (f64, u32) {
    let n = points.len();
    assert!((2..=16).contains(&n));
    let mut best = (f64::INFINITY, 0);
    // Point 0 always sits in group 0, so each split is visited once.
    for mask in 1u32..(1 << (n - 1)) {
        let mask = mask << 1;
        let (g1, g0): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| mask & (1 << i) != 0);
        let cost = sse(points, &g0) + sse(points, &g1);
        if cost < best.0 {
            best = (cost, mask);
        }
    }
    best
}

/// Within-cluster sum of squares of a labelling, recomputed from scratch.
pub fn labelling_cost(points: &[Vec<f64>], labels: &[usize]) -> f64 {
    let k = labels.iter().copied().max().unwrap_or(0) + 1;
    (0..k)
        .map(|c| {
            let members: Vec<usize> = (0..points.len()).filter(|&i| labels[i] == c).collect();
            sse(points, &members)
        })
        .sum()
}

/// Shannon entropy in nats from probabilities, written out directly.
pub fn entropy_oracle(counts: &[usize]) -> f64 {
    let n: usize = counts.iter().sum();
    let mut h = 0.0;
    for &c in counts {
        if c > 0 {
            let p = c as f64 / n as f64;
            h -= p * p.ln();
        }
    }
    h
}
