use serde::{Deserialize, Serialize};

/// The eight binary tongue attributes, in label order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Attribute {
    Pale,
    TipSideRed,
    RedSpot,
    Ecchymosis,
    Crack,
    ToothMark,
    FurThick,
    FurYellow,
}

pub const ATTRIBUTE_COUNT: usize = 8;

/// Column names, in label order.
pub const ATTRIBUTE_NAMES: [&str; ATTRIBUTE_COUNT] = [
    "pale",
    "tipsidered",
    "redspot",
    "ecchymosis",
    "crack",
    "toothmark",
    "furthick",
    "furyellow",
];

/// Colour classes predicted by the whole-tongue branch.
pub const COLOR_NAMES: [&str; 4] = ["white", "yellow", "black", "red"];

impl Attribute {
    pub const ALL: [Attribute; ATTRIBUTE_COUNT] = [
        Attribute::Pale,
        Attribute::TipSideRed,
        Attribute::RedSpot,
        Attribute::Ecchymosis,
        Attribute::Crack,
        Attribute::ToothMark,
        Attribute::FurThick,
        Attribute::FurYellow,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        ATTRIBUTE_NAMES[self.index()]
    }

    pub fn from_name(name: &str) -> Option<Self> {
        ATTRIBUTE_NAMES
            .iter()
            .position(|n| n.eq_ignore_ascii_case(name))
            .map(|i| Self::ALL[i])
    }
}

/// One sample's attribute labels.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AttributeVector(pub [bool; ATTRIBUTE_COUNT]);

impl AttributeVector {
    pub fn new(bits: [bool; ATTRIBUTE_COUNT]) -> Self {
        Self(bits)
    }

    /// Bit `j` of `mask` is attribute `j`.
    pub fn from_mask(mask: u8) -> Self {
        Self(std::array::from_fn(|j| mask >> j & 1 == 1))
    }

    pub fn mask(&self) -> u8 {
        self.0
            .iter()
            .enumerate()
            .fold(0, |m, (j, &b)| m | (b as u8) << j)
    }

    pub fn with(attrs: &[Attribute]) -> Self {
        let mut v = Self::default();
        for &a in attrs {
            v.set(a, true);
        }
        v
    }

    pub fn get(&self, a: Attribute) -> bool {
        self.0[a.index()]
    }

    pub fn set(&mut self, a: Attribute, on: bool) {
        self.0[a.index()] = on;
    }

    pub fn bits(&self) -> &[bool; ATTRIBUTE_COUNT] {
        &self.0
    }

    pub fn count(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }
}

/// Auxiliary targets for the whole-tongue heads.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuxLabels {
    /// white, yellow, black, red
    pub color: [bool; 4],
    pub fur: bool,
}

/// How the fur-presence target is derived.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FurRule {
    /// Also count red spots as fur-bearing.
    pub include_redspot: bool,
}

pub fn derive_color_labels(t: &AttributeVector) -> [bool; 4] {
    use Attribute::*;
    [
        t.get(Pale) || t.get(FurThick),
        t.get(FurYellow),
        t.get(Ecchymosis),
        t.get(TipSideRed) || t.get(RedSpot),
    ]
}

pub fn derive_fur_label(t: &AttributeVector, rule: FurRule) -> bool {
    use Attribute::*;
    t.get(FurThick) || t.get(FurYellow) || (rule.include_redspot && t.get(RedSpot))
}

pub fn aux_labels(t: &AttributeVector, rule: FurRule) -> AuxLabels {
    AuxLabels {
        color: derive_color_labels(t),
        fur: derive_fur_label(t, rule),
    }
}
