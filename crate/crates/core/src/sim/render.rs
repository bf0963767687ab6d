//! Egocentric rasteriser and the matching visibility oracle.
//!
//! The top `VIEW_ROWS` rows show the cone ahead of the agent; the bottom band encodes
//! the agent's pose and the held object, so every successful action alters some pixel.

use crate::model::{BoundingBox, Frame, ObjectRef};

use super::{Location, ObjectState, Simulator, WorldState};

const WALL: [u8; 3] = [40, 40, 48];
const FLOOR: [u8; 3] = [96, 84, 73];
const BAND_ROWS: u32 = 8;
const POSE_COLS: u32 = 48;
/// Vertical centre of object boxes within the view area.
const CENTER_ROW: i64 = 28;

/// An object in the agent's view with the box the renderer draws for it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VisibleObject {
    pub object: ObjectRef,
    pub bbox: BoundingBox,
    pub depth: u32,
    pub lateral: i32,
}

/// Stable colour per class; the blue channel carries the mutable state flags.
pub fn object_color(object: &ObjectRef, state: &ObjectState) -> [u8; 3] {
    let h = object
        .name
        .bytes()
        .fold(0x811c_9dc5u32, |h, b| (h ^ u32::from(b)).wrapping_mul(0x0100_0193));
    let r = 64 + (h % 192) as u8;
    let g = 64 + ((h >> 8) % 192) as u8;
    [r, g, state.flag_bits() * 4]
}

impl Simulator {
    fn view_rows(&self) -> u32 {
        self.config.raster_height.saturating_sub(BAND_ROWS)
    }

    /// Box for a cone cell at `depth` with lateral offset `dx`, clipped to the view.
    pub fn cell_box(&self, depth: u32, dx: i32) -> Option<BoundingBox> {
        let w = i64::from(self.config.raster_width);
        let view = i64::from(self.view_rows());
        let size = (f64::from(self.config.raster_height) / f64::from(depth + 1)).round() as i64;
        let cx = (w as f64 / 2.0 + f64::from(dx) * w as f64 / 3.0).round() as i64;
        let cy = CENTER_ROW * view / 56;
        let x0 = (cx - size / 2).clamp(0, w);
        let x1 = (cx - size / 2 + size).clamp(0, w);
        let y0 = (cy - size / 2).clamp(0, view);
        let y1 = (cy - size / 2 + size).clamp(0, view);
        BoundingBox::new(x0 as u32, y0 as u32, x1 as u32, y1 as u32).ok()
    }

    /// Visible objects in draw order: far to near, sides before centre, each
    /// receptacle before its contents.
    pub fn visible_objects(&self, state: &WorldState) -> Vec<VisibleObject> {
        let mut out = Vec::new();
        for depth in (1..=self.config.cone_depth).rev() {
            for dx in [-1, 1, 0] {
                let cell = state.agent.offset(depth as i32, dx);
                if !state.in_bounds(cell.0, cell.1) {
                    continue;
                }
                let Some(occupant) = state.occupant(cell) else {
                    continue;
                };
                let Some(bbox) = self.cell_box(depth, dx) else {
                    continue;
                };
                out.push(VisibleObject {
                    object: occupant.clone(),
                    bbox,
                    depth,
                    lateral: dx,
                });
                let os = &state.objects[occupant];
                if os.class_flags.openable && !os.is_open {
                    continue;
                }
                let contents = state.contents(occupant);
                let n = contents.len() as u32;
                let half = bbox.height() / 2;
                for (i, obj) in contents.into_iter().enumerate() {
                    let i = i as u32;
                    let x0 = bbox.x_min + i * bbox.width() / n;
                    let x1 = bbox.x_min + (i + 1) * bbox.width() / n;
                    if let Ok(b) = BoundingBox::new(x0, bbox.y_min, x1, bbox.y_min + half.max(1)) {
                        out.push(VisibleObject {
                            object: obj.clone(),
                            bbox: b,
                            depth,
                            lateral: dx,
                        });
                    }
                }
            }
        }
        out
    }

    pub fn render(&self, state: &WorldState) -> Frame {
        let (w, h) = (self.config.raster_width, self.config.raster_height);
        let view = self.view_rows();
        let mut px = vec![0u8; (3 * w * h) as usize];
        let mut fill = |b: &BoundingBox, c: [u8; 3]| {
            for y in b.y_min..b.y_max {
                for x in b.x_min..b.x_max {
                    let i = 3 * (y * w + x) as usize;
                    px[i..i + 3].copy_from_slice(&c);
                }
            }
        };
        if view > 0 {
            let mid = view / 2;
            if let Ok(b) = BoundingBox::new(0, 0, w, mid.max(1)) {
                fill(&b, WALL);
            }
            if let Ok(b) = BoundingBox::new(0, mid, w, view) {
                fill(&b, FLOOR);
            }
        }
        for v in self.visible_objects(state) {
            fill(&v.bbox, object_color(&v.object, &state.objects[&v.object]));
        }
        let pose = [
            state.agent.x as u8,
            state.agent.y as u8,
            64 * state.agent.heading.index() + 1,
        ];
        let pose_cols = POSE_COLS.min(w);
        if let Ok(b) = BoundingBox::new(0, view, pose_cols, h) {
            fill(&b, pose);
        }
        let held = match &state.hand {
            Some(o) => {
                let s = &state.objects[o];
                debug_assert_eq!(s.location, Location::Hand);
                object_color(o, s)
            }
            None => [0, 0, 0],
        };
        if let Ok(b) = BoundingBox::new(pose_cols, view, w, h) {
            fill(&b, held);
        }
        Frame::from_pixels(w, h, px).expect("raster size matches")
    }
}
