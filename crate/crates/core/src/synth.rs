//! Deterministic synthetic scenes with ground truth.
//!
//! A scene is a background, a list of textured actors moving at integer
//! velocities (optionally casting soft shadows) and static occluders drawn on
//! top. Ground truth is the bounding box of each actor's visible pixels.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::eval::GroundTruthEntry;
use crate::imaging::{tight_box, ColorFrame};

pub const PRESETS: [&str; 5] = ["fragmentation", "opposite_cross", "same_direction_pair", "shadow_walker", "static_occluder"];

const TEXTURE_CELL: i64 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Rect,
    Ellipse,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Background {
    Flat { level: u8 },
    /// Vertical stripes alternating every `period` columns.
    Stripes { period: u32, low: u8, high: u8 },
    /// Fixed per-pixel texture around `level`.
    Noise { level: u8, amplitude: u8, seed: u64 },
}

/// Horizontal band of actor rows rendered at a fixed level.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Band {
    pub offset: u32,
    pub height: u32,
    pub level: u8,
}

/// Shadow cast on the background under the actor's bounding rectangle
/// shifted by `(dx, dy)`. Inside it the background is multiplied by
/// `attenuation`; the factor ramps linearly back to 1 over `soft` pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Shadow {
    pub dx: i32,
    pub dy: i32,
    pub attenuation: f64,
    pub soft: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Actor {
    pub shape: Shape,
    pub width: u32,
    pub height: u32,
    /// Top-left corner at frame `appear`.
    pub start: (i32, i32),
    pub velocity: (i32, i32),
    /// First frame in which the actor exists.
    pub appear: u32,
    pub level: u8,
    pub texture_amplitude: u8,
    pub texture_seed: u64,
    pub band: Option<Band>,
    pub shadow: Option<Shadow>,
}

impl Actor {
    pub fn rect(width: u32, height: u32, start: (i32, i32), velocity: (i32, i32)) -> Self {
        Self {
            shape: Shape::Rect,
            width,
            height,
            start,
            velocity,
            appear: 0,
            level: 40,
            texture_amplitude: 0,
            texture_seed: 0,
            band: None,
            shadow: None,
        }
    }

    /// Top-left corner at frame `t`, if the actor exists then.
    pub fn position(&self, t: u32) -> Option<(i64, i64)> {
        let dt = i64::from(t.checked_sub(self.appear)?);
        Some((
            i64::from(self.start.0) + dt * i64::from(self.velocity.0),
            i64::from(self.start.1) + dt * i64::from(self.velocity.1),
        ))
    }

    fn covers_local(&self, lx: i64, ly: i64) -> bool {
        let (w, h) = (i64::from(self.width), i64::from(self.height));
        if lx < 0 || ly < 0 || lx >= w || ly >= h {
            return false;
        }
        match self.shape {
            Shape::Rect => true,
            Shape::Ellipse => {
                let nx = (lx as f64 + 0.5 - w as f64 / 2.0) / (w as f64 / 2.0);
                let ny = (ly as f64 + 0.5 - h as f64 / 2.0) / (h as f64 / 2.0);
                nx * nx + ny * ny <= 1.0
            }
        }
    }

    fn texture(&self) -> Vec<i32> {
        let cols = (i64::from(self.width) + TEXTURE_CELL - 1) / TEXTURE_CELL;
        let rows = (i64::from(self.height) + TEXTURE_CELL - 1) / TEXTURE_CELL;
        let amp = i32::from(self.texture_amplitude);
        let mut rng = ChaCha8Rng::seed_from_u64(self.texture_seed);
        (0..cols * rows).map(|_| rng.random_range(-amp..=amp)).collect()
    }
}

/// A static rectangle drawn over everything else.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Occluder {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
    pub level: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneScript {
    pub width: u32,
    pub height: u32,
    pub length: u32,
    /// Seed of the per-frame sensor noise.
    pub seed: u64,
    /// Per-pixel sensor noise is uniform in `[-noise, noise]`.
    pub noise: u8,
    pub background: Background,
    pub actors: Vec<Actor>,
    pub occluders: Vec<Occluder>,
}

impl SceneScript {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 || self.length == 0 {
            return Err(Error::Config("scene width, height and length must be positive".into()));
        }
        if let Background::Stripes { period: 0, .. } = self.background {
            return Err(Error::Config("stripe period must be positive".into()));
        }
        for (i, a) in self.actors.iter().enumerate() {
            if a.width == 0 || a.height == 0 {
                return Err(Error::Config(format!("actor {i} has an empty size")));
            }
            if let Some(s) = a.shadow {
                if !(0.0..=1.0).contains(&s.attenuation) {
                    return Err(Error::Config(format!("actor {i} shadow attenuation must lie in [0, 1]")));
                }
            }
            let in_frame = (0..self.length).filter(|&t| self.actor_in_frame(a, t)).count();
            if in_frame < 2 {
                return Err(Error::Config(format!("actor {i} is in frame for fewer than 2 frames")));
            }
        }
        Ok(())
    }

    fn actor_in_frame(&self, a: &Actor, t: u32) -> bool {
        a.position(t).is_some_and(|(x, y)| {
            x < i64::from(self.width) && y < i64::from(self.height) && x + i64::from(a.width) > 0 && y + i64::from(a.height) > 0
        })
    }

    fn background_level(&self, x: u32, y: u32) -> f64 {
        match self.background {
            Background::Flat { level } => f64::from(level),
            Background::Stripes { period, low, high } => f64::from(if (x / period).is_multiple_of(2) { low } else { high }),
            Background::Noise { level, amplitude, seed } => {
                // cheap stateless hash so any pixel can be evaluated alone
                let mut h = seed ^ (u64::from(x) << 32 | u64::from(y)).wrapping_mul(0x9E37_79B9_7F4A_7C15);
                h ^= h >> 31;
                h = h.wrapping_mul(0xBF58_476D_1CE4_E5B9);
                h ^= h >> 29;
                let span = 2 * u64::from(amplitude) + 1;
                f64::from(level) + (h % span) as f64 - f64::from(amplitude)
            }
        }
    }

    /// Renders frame `t` and the ground truth of every visible actor.
    pub fn render_frame(&self, t: u32) -> (ColorFrame, Vec<GroundTruthEntry>) {
        let (w, h) = (self.width as usize, self.height as usize);
        let mut value: Vec<f64> = (0..h)
            .flat_map(|y| (0..w).map(move |x| (x as u32, y as u32)))
            .map(|(x, y)| self.background_level(x, y))
            .collect();

        for a in &self.actors {
            let (Some(s), Some((ax, ay))) = (a.shadow, a.position(t)) else { continue };
            let (x0, y0) = (ax + i64::from(s.dx), ay + i64::from(s.dy));
            let (x1, y1) = (x0 + i64::from(a.width) - 1, y0 + i64::from(a.height) - 1);
            for y in 0..h as i64 {
                for x in 0..w as i64 {
                    let d = (x0 - x).max(x - x1).max(y0 - y).max(y - y1).max(0) as f64;
                    let ramp = if s.soft == 0 {
                        if d > 0.0 {
                            1.0
                        } else {
                            0.0
                        }
                    } else {
                        (d / f64::from(s.soft)).min(1.0)
                    };
                    value[y as usize * w + x as usize] *= s.attenuation + (1.0 - s.attenuation) * ramp;
                }
            }
        }

        let mut owner: Vec<Option<usize>> = vec![None; w * h];
        for (i, a) in self.actors.iter().enumerate() {
            let Some((ax, ay)) = a.position(t) else { continue };
            let texture = a.texture();
            let cols = (i64::from(a.width) + TEXTURE_CELL - 1) / TEXTURE_CELL;
            for ly in 0..i64::from(a.height) {
                for lx in 0..i64::from(a.width) {
                    let (x, y) = (ax + lx, ay + ly);
                    if x < 0 || y < 0 || x >= w as i64 || y >= h as i64 || !a.covers_local(lx, ly) {
                        continue;
                    }
                    let in_band = a.band.is_some_and(|b| ly >= i64::from(b.offset) && ly < i64::from(b.offset + b.height));
                    let v = match a.band {
                        Some(b) if in_band => f64::from(b.level),
                        _ => f64::from(a.level) + f64::from(texture[((ly / TEXTURE_CELL) * cols + lx / TEXTURE_CELL) as usize]),
                    };
                    let idx = y as usize * w + x as usize;
                    value[idx] = v;
                    owner[idx] = Some(i);
                }
            }
        }

        for o in &self.occluders {
            for y in o.y..(o.y + o.h).min(self.height) {
                for x in o.x..(o.x + o.w).min(self.width) {
                    let idx = y as usize * w + x as usize;
                    value[idx] = f64::from(o.level);
                    owner[idx] = None;
                }
            }
        }

        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ u64::from(t).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let noise = i32::from(self.noise);
        let mut frame = ColorFrame::filled(w, h, [0, 0, 0]);
        for (idx, v) in value.iter().enumerate() {
            let n = if noise > 0 { rng.random_range(-noise..=noise) } else { 0 };
            let g = (v.round() as i32 + n).clamp(0, 255) as u8;
            frame.set(idx % w, idx / w, [g, g, g]);
        }

        let mut visible: Vec<Vec<(u32, u32)>> = vec![Vec::new(); self.actors.len()];
        for (idx, o) in owner.iter().enumerate() {
            if let Some(i) = o {
                visible[*i].push(((idx % w) as u32, (idx / w) as u32));
            }
        }
        let gt = visible
            .iter()
            .enumerate()
            .filter_map(|(i, px)| {
                tight_box(px).map(|bbox| GroundTruthEntry {
                    frame_index: u64::from(t),
                    object_id: i as u64 + 1,
                    bbox,
                    class_label: "actor".into(),
                })
            })
            .collect();
        (frame, gt)
    }

    /// Renders every frame; ground truth is ordered by frame then actor.
    pub fn render(&self) -> Result<(Vec<ColorFrame>, Vec<GroundTruthEntry>)> {
        self.validate()?;
        let rendered: Vec<_> = (0..self.length).into_par_iter().map(|t| self.render_frame(t)).collect();
        let mut frames = Vec::with_capacity(rendered.len());
        let mut gt = Vec::new();
        for (f, g) in rendered {
            frames.push(f);
            gt.extend(g);
        }
        Ok((frames, gt))
    }

    /// Key-value text form, one `key = value` per line.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "width = {}", self.width);
        let _ = writeln!(s, "height = {}", self.height);
        let _ = writeln!(s, "length = {}", self.length);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "noise = {}", self.noise);
        let bg = match self.background {
            Background::Flat { level } => format!("flat {level}"),
            Background::Stripes { period, low, high } => format!("stripes {period} {low} {high}"),
            Background::Noise { level, amplitude, seed } => format!("noise {level} {amplitude} {seed}"),
        };
        let _ = writeln!(s, "background = {bg}");
        for a in &self.actors {
            let shape = match a.shape {
                Shape::Rect => "rect",
                Shape::Ellipse => "ellipse",
            };
            let _ = write!(
                s,
                "actor = shape={shape} size={}x{} start={},{} velocity={},{} appear={} level={} texture={} texture_seed={}",
                a.width, a.height, a.start.0, a.start.1, a.velocity.0, a.velocity.1, a.appear, a.level, a.texture_amplitude, a.texture_seed
            );
            if let Some(b) = a.band {
                let _ = write!(s, " band={},{},{}", b.offset, b.height, b.level);
            }
            if let Some(sh) = a.shadow {
                let _ = write!(s, " shadow={},{},{},{}", sh.dx, sh.dy, sh.attenuation, sh.soft);
            }
            s.push('\n');
        }
        for o in &self.occluders {
            let _ = writeln!(s, "occluder = {},{},{},{},{}", o.x, o.y, o.w, o.h, o.level);
        }
        s
    }

    /// Parses the key-value text form; `origin` only labels error messages.
    pub fn parse(text: &str, origin: &Path) -> Result<SceneScript> {
        let err = |line: usize, message: String| Error::Parse {
            path: origin.to_path_buf(),
            line: line as u64,
            message,
        };
        let mut script = SceneScript {
            width: 0,
            height: 0,
            length: 0,
            seed: 0,
            noise: 0,
            background: Background::Flat { level: 110 },
            actors: Vec::new(),
            occluders: Vec::new(),
        };
        for (n, raw) in text.lines().enumerate() {
            let line_no = n + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| err(line_no, format!("expected `key = value`, found `{line}`")))?;
            let bad = |what: &str| err(line_no, format!("invalid {what} `{value}`"));
            match key {
                "width" => script.width = value.parse().map_err(|_| bad("width"))?,
                "height" => script.height = value.parse().map_err(|_| bad("height"))?,
                "length" => script.length = value.parse().map_err(|_| bad("length"))?,
                "seed" => script.seed = value.parse().map_err(|_| bad("seed"))?,
                "noise" => script.noise = value.parse().map_err(|_| bad("noise"))?,
                "background" => script.background = parse_background(value).ok_or_else(|| bad("background"))?,
                "actor" => script.actors.push(parse_actor(value).map_err(|m| err(line_no, m))?),
                "occluder" => {
                    let v: Vec<u32> = numbers(value).ok_or_else(|| bad("occluder"))?;
                    let [x, y, w, h, level] = v[..] else { return Err(bad("occluder")) };
                    let level = u8::try_from(level).map_err(|_| bad("occluder level"))?;
                    script.occluders.push(Occluder { x, y, w, h, level });
                }
                other => return Err(err(line_no, format!("unknown key `{other}`"))),
            }
        }
        script.validate().map_err(|e| err(0, e.to_string()))?;
        Ok(script)
    }

    pub fn load(path: &Path) -> Result<SceneScript> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }
}

fn numbers<T: std::str::FromStr>(s: &str) -> Option<Vec<T>> {
    s.split(',').map(|p| p.trim().parse().ok()).collect()
}

fn parse_background(value: &str) -> Option<Background> {
    let parts: Vec<&str> = value.split_whitespace().collect();
    match parts.as_slice() {
        ["flat", level] => Some(Background::Flat { level: level.parse().ok()? }),
        ["stripes", period, low, high] => Some(Background::Stripes {
            period: period.parse().ok()?,
            low: low.parse().ok()?,
            high: high.parse().ok()?,
        }),
        ["noise", level, amplitude, seed] => Some(Background::Noise {
            level: level.parse().ok()?,
            amplitude: amplitude.parse().ok()?,
            seed: seed.parse().ok()?,
        }),
        _ => None,
    }
}

fn parse_actor(value: &str) -> std::result::Result<Actor, String> {
    let mut actor = Actor::rect(1, 1, (0, 0), (0, 0));
    let mut sized = false;
    for item in value.split_whitespace() {
        let (k, v) = item.split_once('=').ok_or_else(|| format!("expected `name=value`, found `{item}`"))?;
        let bad = || format!("invalid actor {k} `{v}`");
        match k {
            "shape" => {
                actor.shape = match v {
                    "rect" => Shape::Rect,
                    "ellipse" => Shape::Ellipse,
                    _ => return Err(bad()),
                }
            }
            "size" => {
                let (w, h) = v.split_once('x').ok_or_else(bad)?;
                actor.width = w.parse().map_err(|_| bad())?;
                actor.height = h.parse().map_err(|_| bad())?;
                sized = true;
            }
            "start" | "velocity" => {
                let p: Vec<i32> = numbers(v).ok_or_else(bad)?;
                let [a, b] = p[..] else { return Err(bad()) };
                if k == "start" {
                    actor.start = (a, b);
                } else {
                    actor.velocity = (a, b);
                }
            }
            "appear" => actor.appear = v.parse().map_err(|_| bad())?,
            "level" => actor.level = v.parse().map_err(|_| bad())?,
            "texture" => actor.texture_amplitude = v.parse().map_err(|_| bad())?,
            "texture_seed" => actor.texture_seed = v.parse().map_err(|_| bad())?,
            "band" => {
                let p: Vec<u32> = numbers(v).ok_or_else(bad)?;
                let [offset, height, level] = p[..] else { return Err(bad()) };
                actor.band = Some(Band {
                    offset,
                    height,
                    level: u8::try_from(level).map_err(|_| bad())?,
                });
            }
            "shadow" => {
                let p: Vec<&str> = v.split(',').collect();
                let [dx, dy, att, soft] = p[..] else { return Err(bad()) };
                actor.shadow = Some(Shadow {
                    dx: dx.parse().map_err(|_| bad())?,
                    dy: dy.parse().map_err(|_| bad())?,
                    attenuation: att.parse().map_err(|_| bad())?,
                    soft: soft.parse().map_err(|_| bad())?,
                });
            }
            _ => return Err(format!("unknown actor attribute `{k}`")),
        }
    }
    if !sized {
        return Err("actor needs a size".into());
    }
    Ok(actor)
}

fn scene(length: u32, seed: u64, background: Background, actors: Vec<Actor>) -> SceneScript {
    SceneScript {
        width: 160,
        height: 120,
        length,
        seed,
        noise: 2,
        background,
        actors,
        occluders: Vec::new(),
    }
}

fn textured(mut a: Actor, appear: u32, level: u8, seed: u64) -> Actor {
    a.appear = appear;
    a.level = level;
    a.texture_amplitude = 6;
    a.texture_seed = seed;
    a
}

/// Canned scenes, one per failure mode of plain background subtraction.
pub fn preset(name: &str) -> Result<SceneScript> {
    let ground = |seed| Background::Noise {
        level: 110,
        amplitude: 10,
        seed,
    };
    let script = match name {
        // a low-contrast band across the body cuts the raw blob in two
        "fragmentation" => {
            let mut a = textured(Actor::rect(28, 40, (-20, 40), (3, 0)), 30, 40, 11);
            a.band = Some(Band {
                offset: 18,
                height: 1,
                level: 108,
            });
            scene(80, 1, ground(101), vec![a])
        }
        // two actors crossing in opposite directions with a small vertical overlap
        "opposite_cross" => scene(
            80,
            2,
            ground(102),
            vec![
                textured(Actor::rect(40, 20, (-30, 46), (4, 0)), 30, 40, 21),
                textured(Actor::rect(40, 20, (150, 62), (-4, 0)), 30, 60, 22),
            ],
        ),
        // two actors close together whose shadows fuse them into one blob
        "same_direction_pair" => {
            let shadow = Some(Shadow {
                dx: 4,
                dy: 2,
                attenuation: 0.75,
                soft: 5,
            });
            let mut a = textured(Actor::rect(36, 20, (-70, 50), (3, 0)), 30, 40, 31);
            let mut b = textured(Actor::rect(36, 20, (-30, 50), (3, 0)), 30, 45, 32);
            a.shadow = shadow;
            b.shadow = shadow;
            scene(80, 3, ground(103), vec![a, b])
        }
        // an actor dragging a large soft shadow
        "shadow_walker" => {
            let mut a = textured(Actor::rect(16, 36, (-10, 30), (2, 0)), 30, 30, 41);
            a.shadow = Some(Shadow {
                dx: 6,
                dy: 6,
                attenuation: 0.5,
                soft: 10,
            });
            scene(80, 4, ground(104), vec![a])
        }
        // a thin static pole in front of a textured background cuts the actor
        "static_occluder" => {
            let mut s = scene(
                80,
                5,
                Background::Stripes {
                    period: 12,
                    low: 100,
                    high: 125,
                },
                vec![textured(Actor::rect(28, 40, (-20, 40), (3, 0)), 30, 30, 51)],
            );
            s.occluders.push(Occluder {
                x: 80,
                y: 0,
                w: 1,
                h: 120,
                level: 200,
            });
            s
        }
        _ => {
            return Err(Error::UnknownPreset {
                name: name.to_string(),
                available: PRESETS.join(", "),
            })
        }
    };
    Ok(script)
}
