use std::collections::BTreeSet;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::vocab::{indices_of, ComboSplit, Kind, CATEGORIES, COLORS, ROOMS};
use super::DatasetError;
use crate::graph::{
    Articulation, Edge, Node, NodeId, Relation, RobotGraph, SceneGraph, ATTR_ARTICULATION, ATTR_COLOR, ATTR_PICKABLE,
    ATTR_STATE, ATTR_SURFACE, STATE_CLOSED, STATE_OPEN,
};

pub const MIN_OBJECTS: usize = 30;
pub const MAX_OBJECTS: usize = 70;
/// Furniture per room and items per furniture are capped so the robot graph
/// (robot, near set, held object) stays well inside the action head.
pub const MAX_FURNITURE_PER_ROOM: usize = 15;
pub const MAX_ITEMS_PER_FURNITURE: usize = 6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    /// Furniture plus items; floor and rooms come on top.
    pub objects_per_scene: usize,
    pub rooms_min: usize,
    pub rooms_max: usize,
    /// Share of objects that are articulated containers.
    pub articulated_fraction: f64,
    /// Probability that a container starts open.
    pub open_fraction: f64,
    /// Share of objects that are furniture (surfaces and containers).
    pub furniture_fraction: f64,
    pub combos: ComboSplit,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            objects_per_scene: MAX_OBJECTS,
            rooms_min: 2,
            rooms_max: 5,
            articulated_fraction: 0.1,
            open_fraction: 0.3,
            furniture_fraction: 0.35,
            combos: ComboSplit::Seen,
        }
    }
}

struct Counts {
    rooms: usize,
    containers: usize,
    surfaces: usize,
    items: usize,
}

impl SceneConfig {
    pub fn validate(&self) -> Result<(), DatasetError> {
        let bad = |m: String| Err(DatasetError::ConfigInfeasible(m));
        if !(MIN_OBJECTS..=MAX_OBJECTS).contains(&self.objects_per_scene) {
            return bad(format!(
                "objects_per_scene {} outside {MIN_OBJECTS}..={MAX_OBJECTS}",
                self.objects_per_scene
            ));
        }
        if self.rooms_min == 0 || self.rooms_min > self.rooms_max || self.rooms_max > ROOMS.len() {
            return bad(format!(
                "room range {}..={} must lie in 1..={}",
                self.rooms_min,
                self.rooms_max,
                ROOMS.len()
            ));
        }
        if self.objects_per_scene < self.rooms_max + 1 {
            return bad("objects_per_scene must exceed the room count".into());
        }
        for (name, v) in [
            ("articulated_fraction", self.articulated_fraction),
            ("open_fraction", self.open_fraction),
            ("furniture_fraction", self.furniture_fraction),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} {v} outside [0, 1]"));
            }
        }
        Ok(())
    }

    fn counts(&self, rooms: usize) -> Result<Counts, DatasetError> {
        let n = self.objects_per_scene;
        let furniture = ((n as f64 * self.furniture_fraction).round() as usize).max(rooms + 1);
        let containers = ((n as f64 * self.articulated_fraction).round() as usize).min(furniture.saturating_sub(2));
        let surfaces = furniture - containers;
        let items = n.saturating_sub(furniture);
        let infeasible = |m: String| Err(DatasetError::ConfigInfeasible(m));
        if furniture > n || items == 0 {
            return infeasible(format!("{n} objects leave no room for items"));
        }
        if furniture > rooms * MAX_FURNITURE_PER_ROOM {
            return infeasible(format!("{furniture} furniture pieces do not fit in {rooms} rooms"));
        }
        if items > furniture * MAX_ITEMS_PER_FURNITURE {
            return infeasible(format!("{items} items do not fit on {furniture} furniture pieces"));
        }
        if surfaces < 2 {
            return infeasible("at least two surfaces are required".into());
        }
        Ok(Counts {
            rooms,
            containers,
            surfaces,
            items,
        })
    }
}

/// Draws distinct (category, color) pairs for one kind of object.
struct Namer {
    used: BTreeSet<(usize, usize)>,
    combos: ComboSplit,
}

impl Namer {
    fn draw(&mut self, pool: &[usize], rng: &mut impl Rng) -> Result<(usize, usize), DatasetError> {
        let mut options: Vec<(usize, usize)> = Vec::new();
        for &cat in pool {
            for color in 0..COLORS.len() {
                if self.combos.allows(cat, color) && !self.used.contains(&(cat, color)) {
                    options.push((cat, color));
                }
            }
        }
        // Pick the category first so frequent categories are not favoured by
        // how many colors they have left.
        let cats: BTreeSet<usize> = options.iter().map(|o| o.0).collect();
        let cats: Vec<usize> = cats.into_iter().collect();
        let cat = *cats
            .choose(rng)
            .ok_or_else(|| DatasetError::ConfigInfeasible("ran out of color/category combinations".into()))?;
        let colors: Vec<usize> = options.iter().filter(|o| o.0 == cat).map(|o| o.1).collect();
        let color = *colors.choose(rng).expect("category has a free color");
        self.used.insert((cat, color));
        Ok((cat, color))
    }
}

fn place(
    slots: &mut [usize],
    cap: usize,
    count: usize,
    rng: &mut impl Rng,
) -> Result<Vec<usize>, DatasetError> {
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let open: Vec<usize> = (0..slots.len()).filter(|&i| slots[i] < cap).collect();
        let &i = open
            .choose(rng)
            .ok_or_else(|| DatasetError::ConfigInfeasible("no free slot".into()))?;
        slots[i] += 1;
        out.push(i);
    }
    Ok(out)
}

/// Samples a floor / rooms / furniture / items forest and the initial robot
/// graph (robot only: empty gripper, near nothing).
pub fn sample_scene(cfg: &SceneConfig, rng: &mut impl Rng) -> Result<(SceneGraph, RobotGraph), DatasetError> {
    cfg.validate()?;
    let rooms = rng.random_range(cfg.rooms_min..=cfg.rooms_max);
    let c = cfg.counts(rooms)?;

    let mut nodes = vec![Node::new(0, "floor")];
    let mut edges = Vec::new();
    let mut room_names: Vec<&str> = ROOMS.to_vec();
    room_names.shuffle(rng);
    for (i, name) in room_names.iter().take(c.rooms).enumerate() {
        nodes.push(Node::new(i + 1, *name));
        edges.push(Edge::new(i + 1, 0, Relation::On));
    }

    let mut namer = Namer {
        used: BTreeSet::new(),
        combos: cfg.combos,
    };
    let surface_pool = indices_of(|k| k == Kind::Surface);
    let container_pool = indices_of(|k| matches!(k, Kind::Container(_)));
    let item_pool = indices_of(|k| k == Kind::Item);

    // Every room gets one piece first, the rest go anywhere with space.
    let furniture = c.surfaces + c.containers;
    let mut per_room = vec![0usize; c.rooms];
    let mut room_of: Vec<usize> = (0..c.rooms).collect();
    per_room.iter_mut().for_each(|x| *x = 1);
    room_of.extend(place(&mut per_room, MAX_FURNITURE_PER_ROOM, furniture - c.rooms, rng)?);
    room_of.shuffle(rng);

    let mut next: NodeId = c.rooms + 1;
    let mut furniture_ids: Vec<(NodeId, bool)> = Vec::with_capacity(furniture);
    for (k, &room) in room_of.iter().enumerate() {
        let is_container = k < c.containers;
        let pool = if is_container { &container_pool } else { &surface_pool };
        let (cat, color) = namer.draw(pool, rng)?;
        let (name, kind) = CATEGORIES[cat];
        let mut node = Node::new(next, name)
            .with_attr(ATTR_COLOR, COLORS[color])
            .with_attr(ATTR_SURFACE, "true");
        if let Kind::Container(art) = kind {
            let state = if rng.random_bool(cfg.open_fraction) {
                STATE_OPEN
            } else {
                STATE_CLOSED
            };
            node = node
                .with_attr(ATTR_ARTICULATION, art.as_str())
                .with_attr(ATTR_STATE, state);
        }
        debug_assert!(is_container == (node.articulation() != Articulation::None));
        nodes.push(node);
        edges.push(Edge::new(next, room + 1, Relation::In));
        furniture_ids.push((next, is_container));
        next += 1;
    }

    let mut load = vec![0usize; furniture];
    for f in place(&mut load, MAX_ITEMS_PER_FURNITURE, c.items, rng)? {
        let (cat, color) = namer.draw(&item_pool, rng)?;
        let (parent, in_container) = furniture_ids[f];
        nodes.push(
            Node::new(next, CATEGORIES[cat].0)
                .with_attr(ATTR_COLOR, COLORS[color])
                .with_attr(ATTR_PICKABLE, "true"),
        );
        let rel = if in_container { Relation::In } else { Relation::On };
        edges.push(Edge::new(next, parent, rel));
        next += 1;
    }

    Ok((SceneGraph::new(nodes, edges), RobotGraph::initial()))
}
