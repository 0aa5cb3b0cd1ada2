//! Desk-scale 8×8 digit images and their class-incremental pixel-sequence
//! stream.
//!
//! Images are synthesized from fixed glyph templates with seeded jitter
//! (sub-cell shifts, intensity scaling, additive noise), so no external
//! dataset download is needed. Raw pixel values live in 0..=16 like the
//! classic low-resolution digit corpora; [`build_digit_stream`] rescales
//! them to [0, 1].

use crate::data::{PixelPermutation, SequenceBatch, Subtask, SubtaskStream};
use crate::error::{Error, Result};
use crate::numcore::Rng;

const SIDE: usize = 8;
const PIXELS: usize = SIDE * SIDE;
const MAX_VALUE: f64 = 16.0;

// Glyphs are drawn for mutual distinctness rather than typographic
// fidelity: reconstruction-based gating needs every digit pair to occupy
// clearly different pixel sets.
#[rustfmt::skip]
const GLYPHS: [[&str; 8]; 10] = [
    [
        "..####..",
        ".#....#.",
        "#......#",
        "#......#",
        "#......#",
        "#......#",
        ".#....#.",
        "..####..",
    ],
    [
        "...#....",
        "..##....",
        ".###....",
        "...#....",
        "...#....",
        "...#....",
        "...#....",
        ".#####..",
    ],
    [
        ".#####..",
        "#.....#.",
        "......#.",
        ".....#..",
        "...##...",
        "..#.....",
        ".#......",
        "#######.",
    ],
    [
        "######..",
        ".....#..",
        "....#...",
        "..###...",
        ".....#..",
        "......#.",
        "#.....#.",
        ".#####..",
    ],
    [
        "....#...",
        "...##...",
        "..#.#...",
        ".#..#...",
        "#...#...",
        "#######.",
        "....#...",
        "....#...",
    ],
    [
        "#######.",
        "#.......",
        "#.......",
        "######..",
        "......#.",
        ".......#",
        "#.....#.",
        ".#####..",
    ],
    [
        "..###...",
        ".#......",
        "#.......",
        "#.####..",
        "##....#.",
        "#......#",
        ".#....#.",
        "..####..",
    ],
    [
        "#######.",
        "......#.",
        ".....#..",
        "....#...",
        "...#....",
        "..#.....",
        "..#.....",
        "..#.....",
    ],
    [
        ".#####..",
        "#.....#.",
        "#.....#.",
        ".#####..",
        "#.....#.",
        "#.....#.",
        "#.....#.",
        ".#####..",
    ],
    [
        "..####..",
        ".#....#.",
        "#......#",
        ".######.",
        "......#.",
        "......#.",
        ".....#..",
        "..###...",
    ],
];

/// A set of 8×8 grayscale digit images with class labels 0–9.
#[derive(Clone, Debug)]
pub struct DigitSource {
    /// Row-major 8×8 images, values in 0..=16.
    pub images: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

fn glyph_pixels(digit: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(PIXELS);
    for row in GLYPHS[digit] {
        for ch in row.chars() {
            out.push(if ch == '#' { MAX_VALUE } else { 0.0 });
        }
    }
    out
}

/// Generates `per_class` jittered samples of each digit 0–9.
pub fn generate_digits(rng: &Rng, per_class: usize) -> DigitSource {
    let mut images = Vec::with_capacity(per_class * 10);
    let mut labels = Vec::with_capacity(per_class * 10);
    for digit in 0..10 {
        let template = glyph_pixels(digit);
        let mut class_rng = rng.derive(4200 + digit as u64);
        for _ in 0..per_class {
            // Whole-image intensity jitter plus per-pixel noise. Spatial
            // shifts would make each class multimodal, which starves the
            // gating autoencoders at this resolution.
            let intensity = class_rng.range(0.75, 1.0);
            let mut img = template.clone();
            for v in img.iter_mut() {
                let noisy = *v * intensity + MAX_VALUE * 0.03 * class_rng.normal();
                *v = noisy.clamp(0.0, MAX_VALUE);
            }
            images.push(img);
            labels.push(digit);
        }
    }
    DigitSource { images, labels }
}

/// Options for turning a [`DigitSource`] into a subtask stream.
#[derive(Clone, Debug)]
pub struct DigitStreamConfig {
    /// Every class must supply at least this many images.
    pub min_per_class: usize,
    /// Seed of the pixel permutation shared by all subtasks.
    pub permutation_seed: u64,
    /// Seed for the train/val/test split shuffles.
    pub split_seed: u64,
}

impl Default for DigitStreamConfig {
    fn default() -> Self {
        DigitStreamConfig {
            min_per_class: 20,
            permutation_seed: 1,
            split_seed: 2,
        }
    }
}

/// Builds the class-incremental pixel-sequence stream: images flattened to
/// T=64 scalar sequences, shuffled by one fixed permutation, classes paired
/// into subtasks (0,1), (2,3), …, each split 70/15/15.
pub fn build_digit_stream(source: &DigitSource, cfg: &DigitStreamConfig) -> Result<SubtaskStream> {
    if source.images.len() != source.labels.len() {
        return Err(Error::validation("digit source images/labels mismatch"));
    }
    let max_class = source.labels.iter().copied().max().unwrap_or(0);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); max_class + 1];
    for (i, &label) in source.labels.iter().enumerate() {
        if source.images[i].len() != PIXELS {
            return Err(Error::validation(format!(
                "image {i} has {} pixels, expected {PIXELS}",
                source.images[i].len()
            )));
        }
        by_class[label].push(i);
    }
    let present: Vec<usize> = (0..by_class.len())
        .filter(|&c| !by_class[c].is_empty())
        .collect();
    if present.len() < 2 {
        return Err(Error::validation("digit stream needs at least 2 classes"));
    }
    for &c in &present {
        if by_class[c].len() < cfg.min_per_class {
            return Err(Error::validation(format!(
                "class {c} has {} examples, fewer than min_per_class={}",
                by_class[c].len(),
                cfg.min_per_class
            )));
        }
    }

    let permutation = PixelPermutation::new(cfg.permutation_seed, PIXELS);
    let split_root = Rng::new(cfg.split_seed);
    let mut subtasks = Vec::new();
    for (subtask_id, pair) in present.chunks(2).enumerate() {
        if pair.len() < 2 {
            break; // trailing unpaired class is dropped
        }
        // Which class of the pair maps to within-subtask label 0 is drawn
        // per subtask, so label semantics cannot transfer between subtasks.
        // original_classes records the assignment: index == local label.
        let mut order_rng = split_root.derive(9000 + subtask_id as u64);
        let pair: Vec<usize> = if order_rng.index(2) == 1 {
            vec![pair[1], pair[0]]
        } else {
            pair.to_vec()
        };
        // per-class stratified 70/15/15 split
        let mut split_sets: [Vec<(usize, usize)>; 3] = [Vec::new(), Vec::new(), Vec::new()];
        for (local_label, &class) in pair.iter().enumerate() {
            let mut idx = by_class[class].clone();
            let mut rng = split_root.derive((subtask_id * 2 + local_label) as u64);
            rng.shuffle(&mut idx);
            let n = idx.len();
            let n_train = (n as f64 * 0.70).floor() as usize;
            let n_val = (n as f64 * 0.15).floor() as usize;
            for (pos, &img) in idx.iter().enumerate() {
                let bucket = if pos < n_train {
                    0
                } else if pos < n_train + n_val {
                    1
                } else {
                    2
                };
                split_sets[bucket].push((img, local_label));
            }
        }
        let make_split = |members: &[(usize, usize)]| -> Result<SequenceBatch> {
            let mut data = Vec::with_capacity(members.len() * PIXELS);
            let mut labels = Vec::with_capacity(members.len());
            for &(img, local_label) in members {
                let scaled: Vec<f64> = source.images[img]
                    .iter()
                    .map(|&v| (v / MAX_VALUE) as f32 as f64)
                    .collect();
                data.extend(permutation.apply(&scaled, 1)?);
                labels.push(local_label);
            }
            SequenceBatch::new(PIXELS, 1, 2, data, labels)
        };
        let train = make_split(&split_sets[0])?;
        let val = make_split(&split_sets[1])?;
        let test = make_split(&split_sets[2])?;
        subtasks.push(Subtask {
            id: subtask_id,
            original_classes: pair.to_vec(),
            train,
            val,
            test,
        });
    }
    SubtaskStream::new(subtasks, cfg.permutation_seed)
}
