//! Seeded synthetic scenes with ground truth: rooms on a grid, furniture
//! boxes with known relations, a trajectory through every room and depth
//! maps rendered by ray casting, so the full geometry pipeline runs on them.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::backend::{FrameTruth, ObjectTruth, RelationTruth, SceneTruth, VisibleObject};
use crate::episode::{Episode, Keyframe};
use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, DepthMap, PixelMask, Pose};
use crate::ids::FrameId;
use crate::math::Vec3;

pub const ROOM_SIZE: f64 = 4.0;
pub const WALL_THICKNESS: f64 = 0.1;
pub const WALL_HEIGHT: f64 = 2.5;
pub const DOOR_WIDTH: f64 = 0.8;
pub const LINTEL_BOTTOM: f64 = 2.1;
pub const SLOTS_PER_ROOM: usize = 4;
/// Fewest pixels for an object to count as visible in a frame.
pub const MIN_VISIBLE_PIXELS: usize = 20;
pub const EMBEDDING_DIM: usize = 32;
const ATTEMPTS: u64 = 32;

const COLORS: [&str; 8] = ["red", "blue", "green", "yellow", "white", "black", "orange", "purple"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SceneSpec {
    pub rooms: usize,
    pub objects_per_room: usize,
    pub seed: u64,
}

impl SceneSpec {
    pub fn new(rooms: usize, objects_per_room: usize, seed: u64) -> Self {
        SceneSpec {
            rooms,
            objects_per_room,
            seed,
        }
    }
}

/// Axis-aligned box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn new(min: Vec3, max: Vec3) -> Self {
        Aabb { min, max }
    }

    fn centered(center: Vec3, size: [f64; 3], z0: f64) -> Self {
        Aabb {
            min: Vec3::new(center.x - size[0] / 2.0, center.y - size[1] / 2.0, z0),
            max: Vec3::new(center.x + size[0] / 2.0, center.y + size[1] / 2.0, z0 + size[2]),
        }
    }

    pub fn contains_box(&self, o: &Aabb) -> bool {
        self.min.x <= o.min.x
            && self.min.y <= o.min.y
            && self.min.z <= o.min.z
            && o.max.x <= self.max.x
            && o.max.y <= self.max.y
            && o.max.z <= self.max.z
    }

    fn footprint_within(&self, o: &Aabb) -> bool {
        o.min.x <= self.min.x && o.min.y <= self.min.y && self.max.x <= o.max.x && self.max.y <= o.max.y
    }

    /// Nearest positive ray parameter at which `origin + t * dir` enters
    /// the box (slab method).
    pub fn ray_hit(&self, origin: Vec3, dir: Vec3) -> Option<f64> {
        let mut t0 = f64::NEG_INFINITY;
        let mut t1 = f64::INFINITY;
        for (o, d, lo, hi) in [
            (origin.x, dir.x, self.min.x, self.max.x),
            (origin.y, dir.y, self.min.y, self.max.y),
            (origin.z, dir.z, self.min.z, self.max.z),
        ] {
            if d == 0.0 {
                if o < lo || o > hi {
                    return None;
                }
                continue;
            }
            let (a, b) = ((lo - o) / d, (hi - o) / d);
            let (a, b) = if a < b { (a, b) } else { (b, a) };
            t0 = t0.max(a);
            t1 = t1.min(b);
        }
        (t0 <= t1 && t0 > 0.0).then_some(t0)
    }
}

/// Renderable solid, optionally part of a ground-truth object.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Solid {
    pub aabb: Aabb,
    pub owner: Option<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoomLayout {
    pub room_id: u32,
    pub center: Vec3,
    pub min: Vec3,
    pub max: Vec3,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticQuestion {
    pub question: String,
    pub answer: String,
    pub category: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub spec: SceneSpec,
    pub rooms: Vec<RoomLayout>,
    pub solids: Vec<Solid>,
    pub truth: SceneTruth,
    pub episode: Episode,
    pub questions: Vec<SyntheticQuestion>,
}

impl SyntheticScene {
    pub fn object_box(&self, id: u32) -> Option<Aabb> {
        self.truth
            .object(id)
            .map(|o| Aabb::new(Vec3::from(o.min), Vec3::from(o.max)))
    }
}

#[derive(Clone, Copy)]
enum Mount {
    /// Centred on the base's top face.
    OnTop,
    /// Standing on the floor inside an open container.
    Inside,
    /// On the base's face pointing at the room centre, along y.
    FrontFace { z0: f64 },
    /// On the base's face pointing at the room centre, along x.
    SideFace { z0: f64 },
}

struct Dependent {
    class: &'static str,
    size: [f64; 3],
    mount: Mount,
    /// Tagged relation; geometric ones are derived.
    tag: Option<&'static str>,
}

struct Template {
    class: &'static str,
    size: [f64; 3],
    open: bool,
    dependent: Option<Dependent>,
}

const fn single(class: &'static str, size: [f64; 3]) -> Template {
    Template {
        class,
        size,
        open: false,
        dependent: None,
    }
}

fn templates() -> Vec<Template> {
    let pair = |class, size, open, d: Dependent| Template {
        class,
        size,
        open,
        dependent: Some(d),
    };
    vec![
        pair("table", [1.0, 0.8, 0.75], false, Dependent { class: "cup", size: [0.15, 0.15, 0.15], mount: Mount::OnTop, tag: None }),
        pair("desk", [1.0, 0.6, 0.75], false, Dependent { class: "monitor", size: [0.5, 0.15, 0.4], mount: Mount::OnTop, tag: None }),
        pair("bin", [0.5, 0.5, 0.55], true, Dependent { class: "bottle", size: [0.2, 0.2, 0.4], mount: Mount::Inside, tag: None }),
        pair("dresser", [0.8, 0.5, 0.9], false, Dependent { class: "drawer", size: [0.5, 0.12, 0.25], mount: Mount::FrontFace { z0: 0.45 }, tag: Some("subpart_of") }),
        pair("wardrobe", [0.6, 0.6, 1.1], false, Dependent { class: "clock", size: [0.1, 0.3, 0.3], mount: Mount::SideFace { z0: 0.6 }, tag: Some("attached_to") }),
        pair("shelf", [0.8, 0.4, 0.9], false, Dependent { class: "box", size: [0.3, 0.3, 0.2], mount: Mount::OnTop, tag: None }),
        single("chair", [0.5, 0.5, 0.9]),
        single("sofa", [1.0, 0.8, 0.8]),
        single("plant", [0.4, 0.4, 0.8]),
        single("stove", [0.6, 0.6, 0.9]),
        single("refrigerator", [0.7, 0.7, 1.1]),
        single("bed", [1.0, 1.0, 0.5]),
        single("toilet", [0.4, 0.6, 0.6]),
    ]
}

/// Every object class the generator can produce.
pub fn object_classes() -> Vec<&'static str> {
    let mut out = Vec::new();
    for t in templates() {
        out.push(t.class);
        if let Some(d) = &t.dependent {
            out.push(d.class);
        }
    }
    out
}

/// The 160x120 camera used for every synthetic frame.
pub fn synthetic_intrinsics() -> CameraIntrinsics {
    CameraIntrinsics {
        fx: 70.0,
        fy: 70.0,
        cx: 80.0,
        cy: 60.0,
        width: 160,
        height: 120,
    }
}

struct Placed {
    class: &'static str,
    room: u32,
    aabb: Aabb,
    solids: Vec<Aabb>,
    tag: Option<(&'static str, usize)>,
}

fn grid_shape(rooms: usize) -> usize {
    let mut cols = 1;
    while cols * cols < rooms {
        cols += 1;
    }
    cols
}

fn layout_rooms(n: usize) -> Vec<RoomLayout> {
    let cols = grid_shape(n);
    (0..n)
        .map(|r| {
            let (c, row) = ((r % cols) as f64, (r / cols) as f64);
            let min = Vec3::new(c * ROOM_SIZE, row * ROOM_SIZE, 0.0);
            let max = Vec3::new(min.x + ROOM_SIZE, min.y + ROOM_SIZE, WALL_HEIGHT);
            RoomLayout {
                room_id: r as u32,
                center: Vec3::new(min.x + ROOM_SIZE / 2.0, min.y + ROOM_SIZE / 2.0, 0.0),
                min,
                max,
            }
        })
        .collect()
}

/// Floor slab and walls; shared walls get a doorway with a lintel.
fn structure(n: usize) -> Vec<Aabb> {
    let cols = grid_shape(n);
    let rows = n.div_ceil(cols);
    let exists = |c: i64, r: i64| c >= 0 && r >= 0 && (c as usize) < cols && ((r as usize) * cols + c as usize) < n;
    let h = WALL_THICKNESS / 2.0;
    let mut out = vec![Aabb::new(
        Vec3::new(-0.5, -0.5, -0.1),
        Vec3::new(cols as f64 * ROOM_SIZE + 0.5, rows as f64 * ROOM_SIZE + 0.5, 0.0),
    )];
    // Wall along one grid segment; `along_x` says which axis it spans.
    let mut wall = |fixed: f64, lo: f64, hi: f64, along_x: bool, door: bool| {
        let mk = |a: f64, b: f64, z0: f64, z1: f64| {
            if along_x {
                Aabb::new(Vec3::new(a, fixed - h, z0), Vec3::new(b, fixed + h, z1))
            } else {
                Aabb::new(Vec3::new(fixed - h, a, z0), Vec3::new(fixed + h, b, z1))
            }
        };
        if door {
            let mid = (lo + hi) / 2.0;
            let (d0, d1) = (mid - DOOR_WIDTH / 2.0, mid + DOOR_WIDTH / 2.0);
            out.push(mk(lo - h, d0, 0.0, WALL_HEIGHT));
            out.push(mk(d1, hi + h, 0.0, WALL_HEIGHT));
            out.push(mk(d0, d1, LINTEL_BOTTOM, WALL_HEIGHT));
        } else {
            out.push(mk(lo - h, hi + h, 0.0, WALL_HEIGHT));
        }
    };
    for r in 0..=rows as i64 {
        for c in 0..cols as i64 {
            let (below, above) = (exists(c, r - 1), exists(c, r));
            if below || above {
                let x0 = c as f64 * ROOM_SIZE;
                wall(r as f64 * ROOM_SIZE, x0, x0 + ROOM_SIZE, true, below && above);
            }
        }
    }
    for c in 0..=cols as i64 {
        for r in 0..rows as i64 {
            let (left, right) = (exists(c - 1, r), exists(c, r));
            if left || right {
                let y0 = r as f64 * ROOM_SIZE;
                wall(c as f64 * ROOM_SIZE, y0, y0 + ROOM_SIZE, false, left && right);
            }
        }
    }
    out
}

/// Template indices for one room: exactly `n` objects in at most
/// [`SLOTS_PER_ROOM`] slots.
fn pick_groups(
    n: usize,
    pairs: &mut Vec<usize>,
    singles: &mut Vec<usize>,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    let mut remaining = n;
    let mut slots = SLOTS_PER_ROOM;
    while remaining > 0 {
        if slots == 0 {
            return Err(Error::contract(format!("{n} objects do not fit in {SLOTS_PER_ROOM} slots")));
        }
        let pair_ok = remaining >= 2 && !pairs.is_empty();
        let single_ok = !singles.is_empty() && remaining - 1 <= 2 * (slots - 1);
        let use_pair = match (pair_ok, single_ok) {
            (true, true) => rng.gen_bool(0.5),
            (true, false) => true,
            (false, true) => false,
            (false, false) => {
                return Err(Error::contract("scene needs more objects than there are distinct classes"));
            }
        };
        let pool = if use_pair { &mut *pairs } else { &mut *singles };
        let i = rng.gen_range(0..pool.len());
        out.push(pool.remove(i));
        remaining -= if use_pair { 2 } else { 1 };
        slots -= 1;
    }
    Ok(out)
}

fn place_room(room: &RoomLayout, groups: &[usize], tpl: &[Template], rng: &mut ChaCha8Rng) -> Vec<Placed> {
    let mut offsets = [(-1.0, -1.0), (1.0, -1.0), (-1.0, 1.0), (1.0, 1.0)];
    offsets.shuffle(rng);
    let mut out = Vec::new();
    for (g, (dx, dy)) in groups.iter().zip(offsets) {
        let t = &tpl[*g];
        let center = Vec3::new(
            room.center.x + dx + rng.gen_range(-0.1..=0.1),
            room.center.y + dy + rng.gen_range(-0.1..=0.1),
            0.0,
        );
        let base = Aabb::centered(center, t.size, 0.0);
        let solids = if t.open {
            let w = 0.02;
            let (a, b) = (base.min, base.max);
            vec![
                Aabb::new(a, Vec3::new(b.x, b.y, a.z + w)),
                Aabb::new(a, Vec3::new(a.x + w, b.y, b.z)),
                Aabb::new(Vec3::new(b.x - w, a.y, a.z), b),
                Aabb::new(a, Vec3::new(b.x, a.y + w, b.z)),
                Aabb::new(Vec3::new(a.x, b.y - w, a.z), b),
            ]
        } else {
            vec![base]
        };
        let base_index = out.len();
        out.push(Placed {
            class: t.class,
            room: room.room_id,
            aabb: base,
            solids,
            tag: None,
        });
        if let Some(d) = &t.dependent {
            let aabb = match d.mount {
                Mount::OnTop => {
                    let c = Vec3::new(
                        center.x + rng.gen_range(-0.1..=0.1),
                        center.y + rng.gen_range(-0.05..=0.05),
                        0.0,
                    );
                    Aabb::centered(c, d.size, base.max.z)
                }
                Mount::Inside => Aabb::centered(center, d.size, base.min.z + 0.02),
                Mount::FrontFace { z0 } => {
                    // Face towards the room centre.
                    let y = if dy > 0.0 { base.min.y - d.size[1] / 2.0 } else { base.max.y + d.size[1] / 2.0 };
                    Aabb::centered(Vec3::new(center.x, y, 0.0), d.size, z0)
                }
                Mount::SideFace { z0 } => {
                    let x = if dx > 0.0 { base.min.x - d.size[0] / 2.0 } else { base.max.x + d.size[0] / 2.0 };
                    Aabb::centered(Vec3::new(x, center.y, 0.0), d.size, z0)
                }
            };
            out.push(Placed {
                class: d.class,
                room: room.room_id,
                aabb,
                solids: vec![aabb],
                tag: d.tag.map(|r| (r, base_index)),
            });
        }
    }
    out
}

/// Relations implied by geometry and template tags.
fn derive_relations(objects: &[Placed]) -> Vec<RelationTruth> {
    const EPS: f64 = 1e-9;
    let mut out = Vec::new();
    for (i, a) in objects.iter().enumerate() {
        if let Some((rel, base)) = a.tag {
            out.push(RelationTruth {
                subject: i as u32,
                object: base as u32,
                relation: rel.to_string(),
            });
        }
        for (j, b) in objects.iter().enumerate() {
            if i == j {
                continue;
            }
            if b.aabb.contains_box(&a.aabb) {
                out.push(RelationTruth {
                    subject: i as u32,
                    object: j as u32,
                    relation: "contained_in".into(),
                });
            } else if (a.aabb.min.z - b.aabb.max.z).abs() < EPS && a.aabb.footprint_within(&b.aabb) {
                out.push(RelationTruth {
                    subject: i as u32,
                    object: j as u32,
                    relation: "on_top_of".into(),
                });
            }
        }
    }
    out.sort();
    out
}

/// World-frame viewing ray through integer pixel `(u, v)`, scaled so that
/// the ray parameter equals camera depth.
pub fn pixel_ray(intr: &CameraIntrinsics, pose: &Pose, u: u32, v: u32) -> Vec3 {
    let d = Vec3::new((u as f64 - intr.cx) / intr.fx, (v as f64 - intr.cy) / intr.fy, 1.0);
    pose.rotation.mul_vec(d)
}

/// Depth and owning object of every pixel.
pub fn render(solids: &[Solid], intr: &CameraIntrinsics, pose: &Pose) -> (DepthMap, Vec<Option<u32>>) {
    let (w, h) = (intr.width, intr.height);
    let mut depth = DepthMap::zeros(w, h);
    let mut ids = vec![None; (w * h) as usize];
    for v in 0..h {
        for u in 0..w {
            let dir = pixel_ray(intr, pose, u, v);
            let mut best: Option<(f64, Option<u32>)> = None;
            for s in solids {
                if let Some(t) = s.aabb.ray_hit(pose.translation, dir) {
                    if best.is_none_or(|(b, _)| t < b) {
                        best = Some((t, s.owner));
                    }
                }
            }
            if let Some((t, owner)) = best {
                depth.set(u, v, t as f32);
                ids[(v * w + u) as usize] = owner;
            }
        }
    }
    (depth, ids)
}

fn trajectory(rooms: &[RoomLayout]) -> Result<Vec<Pose>> {
    let mut out = Vec::new();
    let inset = 0.4;
    for r in rooms {
        let c = r.center;
        out.push(Pose::look_at(Vec3::new(c.x, c.y, 2.4), Vec3::new(c.x, c.y, 0.0))?);
        for (ex, ey) in [(r.min.x + inset, r.min.y + inset), (r.max.x - inset, r.max.y - inset)] {
            out.push(Pose::look_at(Vec3::new(ex, ey, 1.6), Vec3::new(c.x, c.y, 0.3))?);
        }
    }
    Ok(out)
}

fn visibility(frame_id: FrameId, ids: &[Option<u32>], intr: &CameraIntrinsics) -> Result<FrameTruth> {
    let mut pixels: BTreeMap<u32, Vec<(u32, u32)>> = BTreeMap::new();
    for v in 0..intr.height {
        for u in 0..intr.width {
            if let Some(o) = ids[(v * intr.width + u) as usize] {
                pixels.entry(o).or_default().push((u, v));
            }
        }
    }
    let mut visible = Vec::new();
    for (object_id, px) in pixels {
        if px.len() < MIN_VISIBLE_PIXELS {
            continue;
        }
        let mask = PixelMask::from_pixels(intr.width, intr.height, &px)?;
        let bbox = mask.bbox().ok_or_else(|| Error::invariant("visible object without a box"))?;
        visible.push(VisibleObject {
            object_id,
            bbox,
            pixels: px.len(),
            mask: mask.to_runs(),
        });
    }
    Ok(FrameTruth {
        frame_id,
        width: intr.width,
        height: intr.height,
        visible,
    })
}

fn basis(dim: usize, i: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    v[i] = 1.0;
    v
}

/// Every object is seen somewhere, and every related pair is seen together
/// in its room's overhead frame (the frame edge discovery runs on).
fn observable(truth: &SceneTruth) -> bool {
    let seen = |f: &FrameTruth, id: u32| f.visible.iter().any(|v| v.object_id == id);
    let all_seen = truth.objects.iter().all(|o| truth.frames.iter().any(|f| seen(f, o.id)));
    let pairs_seen = truth.relations.iter().all(|r| {
        let room = truth.object(r.subject).map_or(0, |o| o.room);
        truth
            .frames
            .get(3 * room as usize)
            .is_some_and(|f| seen(f, r.subject) && seen(f, r.object))
    });
    all_seen && pairs_seen
}

/// Generates a scene; `seed` fixes every random choice.
///
/// Placements whose objects or relations would be unobservable from the
/// fixed trajectory are redrawn from a seed-derived stream.
pub fn generate_scene(spec: &SceneSpec) -> Result<SyntheticScene> {
    if spec.rooms == 0 {
        return Err(Error::contract("a scene needs at least one room"));
    }
    if spec.objects_per_room > 2 * SLOTS_PER_ROOM {
        return Err(Error::contract(format!(
            "{} objects overflow a room of {SLOTS_PER_ROOM} slots",
            spec.objects_per_room
        )));
    }
    if spec.rooms * spec.objects_per_room > object_classes().len() {
        return Err(Error::contract(format!(
            "{} objects exceed the {} distinct classes",
            spec.rooms * spec.objects_per_room,
            object_classes().len()
        )));
    }
    for attempt in 0..ATTEMPTS {
        let scene = generate_attempt(spec, spec.seed.wrapping_mul(ATTEMPTS).wrapping_add(attempt))?;
        if observable(&scene.truth) {
            return Ok(scene);
        }
    }
    Err(Error::Other(format!(
        "no observable placement for {spec:?} in {ATTEMPTS} attempts"
    )))
}

fn generate_attempt(spec: &SceneSpec, stream: u64) -> Result<SyntheticScene> {
    let mut rng = ChaCha8Rng::seed_from_u64(stream);
    let tpl = templates();
    let rooms = layout_rooms(spec.rooms);
    let mut pairs: Vec<usize> = (0..tpl.len()).filter(|i| tpl[*i].dependent.is_some()).collect();
    let mut singles: Vec<usize> = (0..tpl.len()).filter(|i| tpl[*i].dependent.is_none()).collect();

    let mut placed = Vec::new();
    for room in &rooms {
        let groups = pick_groups(spec.objects_per_room, &mut pairs, &mut singles, &mut rng)?;
        placed.extend(place_room(room, &groups, &tpl, &mut rng));
    }

    let classes = object_classes();
    let mut visual_perm: Vec<usize> = (0..EMBEDDING_DIM).collect();
    let mut language_perm = visual_perm.clone();
    visual_perm.shuffle(&mut rng);
    language_perm.shuffle(&mut rng);
    let objects: Vec<ObjectTruth> = placed
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let c = classes.iter().position(|k| *k == p.class).unwrap_or(0);
            ObjectTruth {
                id: i as u32,
                class: p.class.to_string(),
                color: COLORS[rng.gen_range(0..COLORS.len())].to_string(),
                room: p.room,
                min: p.aabb.min.to_array(),
                max: p.aabb.max.to_array(),
                visual: basis(EMBEDDING_DIM, visual_perm[c]),
                language: basis(EMBEDDING_DIM, language_perm[c]),
            }
        })
        .collect();
    let relations = derive_relations(&placed);

    let mut solids: Vec<Solid> = structure(spec.rooms)
        .into_iter()
        .map(|aabb| Solid { aabb, owner: None })
        .collect();
    for (i, p) in placed.iter().enumerate() {
        solids.extend(p.solids.iter().map(|aabb| Solid {
            aabb: *aabb,
            owner: Some(i as u32),
        }));
    }

    let scene_id = format!("synth-{}r{}o-{}", spec.rooms, spec.objects_per_room, spec.seed);
    let intr = synthetic_intrinsics();
    let mut frames = Vec::new();
    let mut frame_truth = Vec::new();
    for (i, pose) in trajectory(&rooms)?.into_iter().enumerate() {
        let id = FrameId(i as u32);
        let (depth, ids) = render(&solids, &intr, &pose);
        frame_truth.push(visibility(id, &ids, &intr)?);
        frames.push(Keyframe {
            id,
            image: format!("synthetic://{scene_id}/{i:04}.png"),
            depth,
            intrinsics: intr,
            pose,
            timestamp: i as f64,
        });
    }

    let mut questions: Vec<SyntheticQuestion> = objects
        .iter()
        .map(|o| SyntheticQuestion {
            question: crate::backend::OracleQuestion::color(&o.class),
            answer: o.color.clone(),
            category: "attribute".into(),
        })
        .collect();
    for r in &relations {
        let (s, o) = (&objects[r.subject as usize], &objects[r.object as usize]);
        if let Some(q) = crate::backend::OracleQuestion::relation(&s.class, &r.relation) {
            questions.push(SyntheticQuestion {
                question: q,
                answer: o.class.clone(),
                category: "spatial".into(),
            });
        }
    }

    Ok(SyntheticScene {
        spec: *spec,
        rooms,
        solids,
        truth: SceneTruth {
            scene_id: scene_id.clone(),
            objects,
            relations,
            frames: frame_truth,
        },
        episode: Episode::new(scene_id, 1, frames)?,
        questions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::backproject;

    #[test]
    fn same_seed_same_scene() {
        let spec = SceneSpec::new(1, 3, 42);
        assert_eq!(generate_scene(&spec).unwrap(), generate_scene(&spec).unwrap());
    }

    #[test]
    fn overflow_is_rejected() {
        assert!(generate_scene(&SceneSpec::new(1, 9, 0)).is_err());
        assert!(generate_scene(&SceneSpec::new(4, 6, 0)).is_err());
        assert!(generate_scene(&SceneSpec::new(0, 1, 0)).is_err());
    }

    #[test]
    fn cup_on_table_yields_on_top_of() {
        let placed = vec![
            Placed {
                class: "table",
                room: 0,
                aabb: Aabb::centered(Vec3::new(2.0, 2.0, 0.0), [1.0, 0.8, 0.75], 0.0),
                solids: vec![],
                tag: None,
            },
            Placed {
                class: "cup",
                room: 0,
                aabb: Aabb::centered(Vec3::new(2.1, 2.0, 0.0), [0.15, 0.15, 0.15], 0.75),
                solids: vec![],
                tag: None,
            },
        ];
        let rel = derive_relations(&placed);
        assert_eq!(
            rel,
            vec![RelationTruth {
                subject: 1,
                object: 0,
                relation: "on_top_of".into()
            }]
        );
    }

    #[test]
    fn ray_box_depth_matches_analytic_intersection() {
        // Camera 3 m above a box whose top face is at z = 1: straight down
        // the optical axis the depth is 2; off-axis it is still the z-gap
        // because depth is measured along the optical axis.
        let intr = synthetic_intrinsics();
        let pose = Pose::look_at(Vec3::new(0.0, 0.0, 3.0), Vec3::new(0.0, 0.0, 0.0)).unwrap();
        let solids = [Solid {
            aabb: Aabb::new(Vec3::new(-5.0, -5.0, 0.0), Vec3::new(5.0, 5.0, 1.0)),
            owner: Some(0),
        }];
        let (depth, ids) = render(&solids, &intr, &pose);
        assert_eq!(depth.get(80, 60), 2.0);
        assert_eq!(depth.get(10, 100), 2.0);
        assert_eq!(ids[0], Some(0));

        // Oblique: eye at origin looking along +x at a wall x = 4. Pixel
        // column u has ray x-component 1, so depth is 4 for every pixel.
        let pose = Pose::look_at(Vec3::new(0.0, 0.0, 1.0), Vec3::new(1.0, 0.0, 1.0)).unwrap();
        let solids = [Solid {
            aabb: Aabb::new(Vec3::new(4.0, -10.0, -10.0), Vec3::new(5.0, 10.0, 10.0)),
            owner: None,
        }];
        let (depth, _) = render(&solids, &intr, &pose);
        for (u, v) in [(0, 0), (159, 119), (80, 60), (33, 71)] {
            assert!((depth.get(u, v) as f64 - 4.0).abs() < 1e-6);
        }
    }

    #[test]
    fn backprojected_masks_land_on_their_boxes() {
        let scene = generate_scene(&SceneSpec::new(2, 4, 3)).unwrap();
        let (mut total, mut near) = (0usize, 0usize);
        for (frame, ft) in scene.episode.frames.iter().zip(&scene.truth.frames) {
            for vis in &ft.visible {
                let mask = PixelMask::from_runs(ft.width, ft.height, &vis.mask).unwrap();
                let cloud = backproject(&frame.depth, &mask, &frame.intrinsics, &frame.pose).unwrap();
                let o = scene.truth.object(vis.object_id).unwrap();
                for p in &cloud.points {
                    total += 1;
                    let d = [
                        (o.min[0] - p.x).max(p.x - o.max[0]).max(0.0),
                        (o.min[1] - p.y).max(p.y - o.max[1]).max(0.0),
                        (o.min[2] - p.z).max(p.z - o.max[2]).max(0.0),
                    ];
                    if libm::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]) <= 0.02 {
                        near += 1;
                    }
                }
            }
        }
        assert!(total > 0);
        assert!(near as f64 >= 0.99 * total as f64, "{near}/{total}");
    }

    #[test]
    fn every_room_is_visited() {
        let scene = generate_scene(&SceneSpec::new(3, 2, 5)).unwrap();
        assert_eq!(scene.episode.frames.len(), 9);
        for (r, room) in scene.rooms.iter().enumerate() {
            let p = scene.episode.frames[3 * r].pose.translation;
            assert!(p.x > room.min.x && p.x < room.max.x && p.y > room.min.y && p.y < room.max.y);
        }
    }
}
