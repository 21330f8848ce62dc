use crate::graph::Articulation;

pub const ROOMS: &[&str] = &[
    "kitchen",
    "dining room",
    "living room",
    "bedroom",
    "bathroom",
    "office",
    "laundry room",
    "hallway",
];

pub const COLORS: &[&str] = &[
    "red", "blue", "green", "yellow", "white", "black", "purple", "orange", "pink", "brown", "gray", "silver",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    /// Furniture with a surface.
    Surface,
    /// Articulated furniture that holds objects inside.
    Container(Articulation),
    /// Pickable object.
    Item,
}

pub const CATEGORIES: &[(&str, Kind)] = &[
    ("table", Kind::Surface),
    ("dining table", Kind::Surface),
    ("kitchen table", Kind::Surface),
    ("desk", Kind::Surface),
    ("shelf", Kind::Surface),
    ("display shelves", Kind::Surface),
    ("counter", Kind::Surface),
    ("nightstand", Kind::Surface),
    ("coffee table", Kind::Surface),
    ("side table", Kind::Surface),
    ("bench", Kind::Surface),
    ("fridge", Kind::Container(Articulation::Revolute)),
    ("cabinet", Kind::Container(Articulation::Revolute)),
    ("wardrobe", Kind::Container(Articulation::Revolute)),
    ("microwave", Kind::Container(Articulation::Revolute)),
    ("drawer", Kind::Container(Articulation::Longitudinal)),
    ("dresser", Kind::Container(Articulation::Longitudinal)),
    ("filing cabinet", Kind::Container(Articulation::Longitudinal)),
    ("tool chest", Kind::Container(Articulation::Longitudinal)),
    ("teacup", Kind::Item),
    ("cup", Kind::Item),
    ("mug", Kind::Item),
    ("glass", Kind::Item),
    ("plate", Kind::Item),
    ("bowl", Kind::Item),
    ("spoon", Kind::Item),
    ("fork", Kind::Item),
    ("bottle", Kind::Item),
    ("apple", Kind::Item),
    ("banana", Kind::Item),
    ("lemon", Kind::Item),
    ("pen", Kind::Item),
    ("pencil", Kind::Item),
    ("book", Kind::Item),
    ("notebook", Kind::Item),
    ("remote", Kind::Item),
    ("phone", Kind::Item),
    ("laptop", Kind::Item),
    ("keys", Kind::Item),
    ("wallet", Kind::Item),
    ("towel", Kind::Item),
    ("vase", Kind::Item),
    ("candle", Kind::Item),
    ("box", Kind::Item),
    ("toy car", Kind::Item),
    ("scissors", Kind::Item),
    ("sponge", Kind::Item),
    ("soap", Kind::Item),
    ("toothbrush", Kind::Item),
    ("hat", Kind::Item),
];

/// Which color/category combinations a scene may use. Combinations with
/// `(category index + color index) % 4 == 0` are held out of `Seen` scenes
/// and are the only ones `Unseen` scenes use.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComboSplit {
    #[default]
    Seen,
    Unseen,
    Any,
}

pub fn is_unseen_combo(category: usize, color: usize) -> bool {
    (category + color) % 4 == 0
}

impl ComboSplit {
    pub fn allows(self, category: usize, color: usize) -> bool {
        match self {
            ComboSplit::Any => true,
            ComboSplit::Seen => !is_unseen_combo(category, color),
            ComboSplit::Unseen => is_unseen_combo(category, color),
        }
    }
}

pub fn indices_of(pred: impl Fn(Kind) -> bool) -> Vec<usize> {
    CATEGORIES
        .iter()
        .enumerate()
        .filter(|(_, (_, k))| pred(*k))
        .map(|(i, _)| i)
        .collect()
}
