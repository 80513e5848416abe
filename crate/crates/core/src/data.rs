//! Synthetic sequences of glyphs translating on a zero background.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::DataError;
use crate::image::Image;
use crate::scene::ObservedSequence;

const GLYPH_X: [[u8; 5]; 5] = [
    [1, 0, 0, 0, 1],
    [0, 1, 0, 1, 0],
    [0, 0, 1, 0, 0],
    [0, 1, 0, 1, 0],
    [1, 0, 0, 0, 1],
];

const GLYPH_O: [[u8; 5]; 5] = [
    [0, 1, 1, 1, 0],
    [1, 0, 0, 0, 1],
    [1, 0, 0, 0, 1],
    [1, 0, 0, 0, 1],
    [0, 1, 1, 1, 0],
];

const GLYPH_Y: [[u8; 5]; 5] = [
    [1, 0, 0, 0, 1],
    [0, 1, 0, 1, 0],
    [0, 0, 1, 0, 0],
    [0, 0, 1, 0, 0],
    [0, 0, 1, 0, 0],
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Glyph {
    X,
    O,
    Y,
    /// Rows of intensities in `[0, 1]`; nonzero entries form the support.
    Custom(Vec<Vec<f64>>),
}

impl Glyph {
    pub fn bitmap(&self) -> Vec<Vec<f64>> {
        let fixed = |g: &[[u8; 5]; 5]| g.iter().map(|r| r.iter().map(|v| *v as f64).collect()).collect();
        match self {
            Glyph::X => fixed(&GLYPH_X),
            Glyph::O => fixed(&GLYPH_O),
            Glyph::Y => fixed(&GLYPH_Y),
            Glyph::Custom(rows) => rows.clone(),
        }
    }

    pub fn name(&self) -> String {
        match self {
            Glyph::X => "X".into(),
            Glyph::O => "O".into(),
            Glyph::Y => "Y".into(),
            Glyph::Custom(_) => "custom".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub glyph: Glyph,
    /// Top-left corner of the bitmap at frame 0, `(row, col)`.
    pub start: (i64, i64),
    /// Displacement per frame in pixels, `(d_row, d_col)`.
    pub step: (i64, i64),
    #[serde(default = "one")]
    pub intensity: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    /// Number of frames, `N + 1`.
    pub frames: usize,
    pub objects: Vec<SceneObject>,
}

impl SceneSpec {
    /// "X" moving right and "O" moving down, one pixel per frame, 15x15, 8 frames.
    pub fn orthogonal() -> Self {
        Self {
            height: 15,
            width: 15,
            frames: 8,
            objects: vec![
                SceneObject {
                    glyph: Glyph::X,
                    start: (2, 2),
                    step: (0, 1),
                    intensity: 1.0,
                },
                SceneObject {
                    glyph: Glyph::O,
                    start: (3, 10),
                    step: (1, 0),
                    intensity: 1.0,
                },
            ],
        }
    }

    /// Both glyphs moving right.
    pub fn parallel() -> Self {
        Self {
            height: 15,
            width: 15,
            frames: 8,
            objects: vec![
                SceneObject {
                    glyph: Glyph::X,
                    start: (1, 1),
                    step: (0, 1),
                    intensity: 1.0,
                },
                SceneObject {
                    glyph: Glyph::O,
                    start: (8, 2),
                    step: (0, 1),
                    intensity: 1.0,
                },
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectTruth {
    pub glyph: String,
    /// Top-left corner per frame.
    pub positions: Vec<(i64, i64)>,
    /// Displacement from frame 0 per frame, in pixels `(d_row, d_col)`.
    pub displacements: Vec<(i64, i64)>,
    /// Support of the object in frame 0, row-major.
    pub mask: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub objects: Vec<ObjectTruth>,
}

/// Support pixels of `object` at frame `i` as `(row, col, value)`.
fn placed(object: &SceneObject, frame: usize) -> Vec<(i64, i64, f64)> {
    let (r0, c0) = (
        object.start.0 + object.step.0 * frame as i64,
        object.start.1 + object.step.1 * frame as i64,
    );
    let mut out = Vec::new();
    for (dr, row) in object.glyph.bitmap().iter().enumerate() {
        for (dc, v) in row.iter().enumerate() {
            if *v > 0.0 {
                out.push((r0 + dr as i64, c0 + dc as i64, v * object.intensity));
            }
        }
    }
    out
}

fn validate_object(index: usize, object: &SceneObject) -> Result<(), DataError> {
    let bad = |reason: String| DataError::BadObject { object: index, reason };
    if !(object.intensity > 0.0 && object.intensity <= 1.0) {
        return Err(bad(format!("intensity {} outside (0, 1]", object.intensity)));
    }
    let bitmap = object.glyph.bitmap();
    if bitmap.iter().flatten().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(bad("bitmap values must lie in [0, 1]".into()));
    }
    if !bitmap.iter().flatten().any(|v| *v > 0.0) {
        return Err(bad("bitmap has no foreground pixels".into()));
    }
    Ok(())
}

/// Renders every frame of `spec`, rejecting any frame where an object leaves
/// the image or two objects share a pixel.
pub fn generate_sequence(spec: &SceneSpec) -> Result<(ObservedSequence, GroundTruth), DataError> {
    if spec.frames < 2 {
        return Err(DataError::TooFewFrames(spec.frames));
    }
    if spec.height < 2 || spec.width < 2 {
        return Err(DataError::BadDims {
            height: spec.height,
            width: spec.width,
        });
    }
    for (i, o) in spec.objects.iter().enumerate() {
        validate_object(i, o)?;
    }

    let (h, w) = (spec.height as i64, spec.width as i64);
    let mut frames = Vec::with_capacity(spec.frames);
    for f in 0..spec.frames {
        let mut owner: Vec<Option<usize>> = vec![None; spec.height * spec.width];
        let mut image = Image::zeros(spec.height, spec.width);
        for (oi, object) in spec.objects.iter().enumerate() {
            for (r, c, v) in placed(object, f) {
                if r < 0 || c < 0 || r >= h || c >= w {
                    return Err(DataError::OutOfBounds { frame: f, object: oi });
                }
                let idx = (r * w + c) as usize;
                if let Some(first) = owner[idx] {
                    if first != oi {
                        return Err(DataError::Overlap {
                            frame: f,
                            first,
                            second: oi,
                        });
                    }
                }
                owner[idx] = Some(oi);
                image.data_mut()[idx] = v;
            }
        }
        frames.push(image);
    }

    let objects = spec
        .objects
        .iter()
        .map(|o| {
            let positions: Vec<(i64, i64)> = (0..spec.frames)
                .map(|f| (o.start.0 + o.step.0 * f as i64, o.start.1 + o.step.1 * f as i64))
                .collect();
            let displacements = positions.iter().map(|p| (p.0 - o.start.0, p.1 - o.start.1)).collect();
            let mut mask = vec![false; spec.height * spec.width];
            for (r, c, _) in placed(o, 0) {
                mask[(r * w + c) as usize] = true;
            }
            ObjectTruth {
                glyph: o.glyph.name(),
                positions,
                displacements,
                mask,
            }
        })
        .collect();

    let seq = ObservedSequence::new(frames).map_err(|e| DataError::BadObject {
        object: 0,
        reason: format!("{e}"),
    })?;
    Ok((seq, GroundTruth { objects }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obj(glyph: Glyph, start: (i64, i64), step: (i64, i64)) -> SceneObject {
        SceneObject {
            glyph,
            start,
            step,
            intensity: 1.0,
        }
    }

    #[test]
    fn static_glyph_repeats() {
        let spec = SceneSpec {
            height: 9,
            width: 9,
            frames: 4,
            objects: vec![obj(Glyph::Y, (2, 2), (0, 0))],
        };
        let (seq, _) = generate_sequence(&spec).unwrap();
        assert_eq!(seq.frames().len(), 4);
        for f in seq.frames() {
            assert_eq!(f, seq.first());
        }
    }

    #[test]
    fn x_moves_one_column_per_frame() {
        let spec = SceneSpec {
            height: 15,
            width: 15,
            frames: 8,
            objects: vec![obj(Glyph::X, (2, 2), (0, 1))],
        };
        let (seq, truth) = generate_sequence(&spec).unwrap();
        for (i, f) in seq.frames().iter().enumerate() {
            // top-left stroke of the X sits at (2, 2 + i)
            assert_eq!(f.get(2, 2 + i), 1.0);
            assert_eq!(f.get(2, 6 + i), 1.0);
            assert_eq!(f.get(4, 4 + i), 1.0);
            assert_eq!(f.data().iter().filter(|v| **v > 0.0).count(), 9);
        }
        assert_eq!(truth.objects[0].displacements[7], (0, 7));
    }

    #[test]
    fn literal_corner_placement_leaves_the_frame() {
        // "O" with its corner at row 9 runs off a 15-row image by frame 2
        let spec = SceneSpec {
            height: 15,
            width: 15,
            frames: 8,
            objects: vec![obj(Glyph::X, (2, 2), (0, 1)), obj(Glyph::O, (9, 3), (1, 0))],
        };
        assert_eq!(
            generate_sequence(&spec).unwrap_err(),
            DataError::OutOfBounds { frame: 2, object: 1 }
        );
    }

    #[test]
    fn colliding_trajectories_rejected() {
        let spec = SceneSpec {
            height: 15,
            width: 15,
            frames: 8,
            objects: vec![obj(Glyph::X, (5, 0), (0, 1)), obj(Glyph::O, (5, 10), (0, -1))],
        };
        match generate_sequence(&spec).unwrap_err() {
            DataError::Overlap { frame, first, second } => {
                assert_eq!((first, second), (0, 1));
                assert!(frame > 0 && frame < 8);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn default_scenes_are_valid_and_disjoint() {
        for spec in [SceneSpec::orthogonal(), SceneSpec::parallel()] {
            let (seq, truth) = generate_sequence(&spec).unwrap();
            assert_eq!(seq.frames().len(), 8);
            let support: Vec<bool> = seq.first().support(0.0);
            let union: Vec<bool> = (0..support.len())
                .map(|i| truth.objects.iter().any(|o| o.mask[i]))
                .collect();
            assert_eq!(support, union);
        }
    }

    #[test]
    fn object_validation() {
        let mut spec = SceneSpec::orthogonal();
        spec.objects[0].intensity = 0.0;
        assert!(matches!(generate_sequence(&spec), Err(DataError::BadObject { object: 0, .. })));
        let mut spec = SceneSpec::orthogonal();
        spec.frames = 1;
        assert_eq!(generate_sequence(&spec).unwrap_err(), DataError::TooFewFrames(1));
    }
}
