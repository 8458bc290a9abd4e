//! ASCII map format and validated grid geometry.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::MapError;

/// A cell coordinate. `y = 0` is the top row.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Pos {
    pub x: i32,
    pub y: i32,
}

impl Pos {
    pub const fn new(x: i32, y: i32) -> Self {
        Self { x, y }
    }

    pub fn offset(self, dx: i32, dy: i32) -> Self {
        Self::new(self.x + dx, self.y + dy)
    }
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.x, self.y)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CellKind {
    Floor,
    Wall,
    Lever,
    Trap,
    Treasure,
    GoalRegion,
    /// Key spot for MoveBox task variant 1, 2 or 3.
    KeySpot(u8),
    ChannelGate,
    BoxStart,
    /// Agent 0 is `r`, agent 1 is `b`.
    AgentStart(usize),
}

impl CellKind {
    pub fn from_char(c: char) -> Option<Self> {
        Some(match c {
            '#' => Self::Wall,
            '.' => Self::Floor,
            'L' => Self::Lever,
            'P' => Self::Trap,
            'T' => Self::Treasure,
            'G' => Self::GoalRegion,
            '1' => Self::KeySpot(1),
            '2' => Self::KeySpot(2),
            '3' => Self::KeySpot(3),
            'C' => Self::ChannelGate,
            'B' => Self::BoxStart,
            'r' => Self::AgentStart(0),
            'b' => Self::AgentStart(1),
            _ => return None,
        })
    }

    pub fn to_char(self) -> char {
        match self {
            Self::Wall => '#',
            Self::Floor => '.',
            Self::Lever => 'L',
            Self::Trap => 'P',
            Self::Treasure => 'T',
            Self::GoalRegion => 'G',
            Self::KeySpot(k) => char::from(b'0' + k),
            Self::ChannelGate => 'C',
            Self::BoxStart => 'B',
            Self::AgentStart(0) => 'r',
            Self::AgentStart(_) => 'b',
        }
    }
}

/// Inclusive rectangle as written in the `[regions]` section.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub min: Pos,
    pub max: Pos,
}

impl Rect {
    pub fn cells(&self) -> impl Iterator<Item = Pos> + '_ {
        (self.min.y..=self.max.y)
            .flat_map(move |y| (self.min.x..=self.max.x).map(move |x| Pos::new(x, y)))
    }
}

/// A named set of cells with O(1) membership.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Region {
    cells: BTreeSet<Pos>,
    mask: Vec<bool>,
    width: i32,
}

impl Region {
    fn new(cells: BTreeSet<Pos>, width: i32, height: i32) -> Self {
        let mut mask = vec![false; (width * height) as usize];
        for p in &cells {
            mask[(p.y * width + p.x) as usize] = true;
        }
        Self { cells, mask, width }
    }

    pub fn contains(&self, p: Pos) -> bool {
        p.x >= 0
            && p.y >= 0
            && p.x < self.width
            && self
                .mask
                .get((p.y * self.width + p.x) as usize)
                .copied()
                .unwrap_or(false)
    }

    pub fn cells(&self) -> &BTreeSet<Pos> {
        &self.cells
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }
}

/// Validated map geometry.
///
/// Besides the regions declared in the `[regions]` section, every map exposes
/// derived regions named after the special cells it contains: `lever`, `trap`,
/// `treasure`, `goal`, `channel`, `key1`..`key3`. A declared region with the
/// same name takes precedence.
#[derive(Clone, Debug)]
pub struct GridMap {
    width: i32,
    height: i32,
    cells: Vec<CellKind>,
    declared: Vec<(String, Rect)>,
    regions: BTreeMap<String, Region>,
    agent_starts: [Pos; 2],
    box_start: Option<Pos>,
    gate_of: Vec<Option<usize>>,
    gate_count: usize,
}

impl GridMap {
    /// Parses and validates map text.
    pub fn parse(text: &str) -> Result<Self, MapError> {
        let mut rows: Vec<(usize, &str)> = Vec::new();
        let mut region_lines: Vec<(usize, &str)> = Vec::new();
        let mut in_regions = false;
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.trim_end();
            if in_regions {
                region_lines.push((line_no, line));
            } else if line.trim() == "[regions]" {
                in_regions = true;
            } else if !line.trim().is_empty() {
                rows.push((line_no, line.trim_start()));
            }
        }
        if rows.is_empty() {
            return Err(MapError::Parse {
                line: 1,
                column: 1,
                message: "map has no rows".into(),
            });
        }
        let width = rows[0].1.chars().count();
        let mut cells = Vec::with_capacity(width * rows.len());
        for &(line_no, row) in &rows {
            let n = row.chars().count();
            if n != width {
                return Err(MapError::Parse {
                    line: line_no,
                    column: n.min(width) + 1,
                    message: format!("row has {n} cells, expected {width}"),
                });
            }
            for (col, c) in row.chars().enumerate() {
                let kind = CellKind::from_char(c).ok_or_else(|| MapError::Parse {
                    line: line_no,
                    column: col + 1,
                    message: format!("unknown cell character {c:?}"),
                })?;
                cells.push(kind);
            }
        }

        let mut declared = Vec::new();
        for (line_no, line) in region_lines {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            declared.push(parse_region_line(line_no, line)?);
        }

        Self::from_parts(width as i32, rows.len() as i32, cells, declared)
    }

    pub fn from_parts(
        width: i32,
        height: i32,
        cells: Vec<CellKind>,
        declared: Vec<(String, Rect)>,
    ) -> Result<Self, MapError> {
        let invalid = |m: String| Err(MapError::Validation(m));
        if width <= 0 || height <= 0 || cells.len() != (width * height) as usize {
            return invalid("cell array does not match the map dimensions".into());
        }
        let at = |p: Pos| cells[(p.y * width + p.x) as usize];
        let all = || (0..height).flat_map(move |y| (0..width).map(move |x| Pos::new(x, y)));

        let mut starts: [Vec<Pos>; 2] = [Vec::new(), Vec::new()];
        let mut boxes = Vec::new();
        for p in all() {
            match at(p) {
                CellKind::AgentStart(i) => starts[i].push(p),
                CellKind::BoxStart => boxes.push(p),
                _ => {}
            }
        }
        if starts[0].len() + starts[1].len() != 2 || starts[0].len() != 1 {
            return invalid(format!(
                "exactly 2 AgentStart cells required (one 'r', one 'b'), found {} 'r' and {} 'b'",
                starts[0].len(),
                starts[1].len()
            ));
        }
        if boxes.len() > 1 {
            return invalid(format!("at most 1 BoxStart cell allowed, found {}", boxes.len()));
        }

        // Gate components, 4-connected.
        let idx = |p: Pos| (p.y * width + p.x) as usize;
        let in_bounds = |p: Pos| p.x >= 0 && p.y >= 0 && p.x < width && p.y < height;
        let neighbours = |p: Pos| [p.offset(0, -1), p.offset(0, 1), p.offset(-1, 0), p.offset(1, 0)];
        let mut gate_of = vec![None; cells.len()];
        let mut gate_count = 0;
        for p in all() {
            if at(p) != CellKind::ChannelGate || gate_of[idx(p)].is_some() {
                continue;
            }
            let mut queue = VecDeque::from([p]);
            gate_of[idx(p)] = Some(gate_count);
            while let Some(q) = queue.pop_front() {
                for n in neighbours(q) {
                    if in_bounds(n) && at(n) == CellKind::ChannelGate && gate_of[idx(n)].is_none() {
                        gate_of[idx(n)] = Some(gate_count);
                        queue.push_back(n);
                    }
                }
            }
            gate_count += 1;
        }

        // Passable components with every gate closed.
        let mut component = vec![None; cells.len()];
        let mut comp_count = 0;
        for p in all() {
            if matches!(at(p), CellKind::Wall | CellKind::ChannelGate) || component[idx(p)].is_some() {
                continue;
            }
            let mut queue = VecDeque::from([p]);
            component[idx(p)] = Some(comp_count);
            while let Some(q) = queue.pop_front() {
                for n in neighbours(q) {
                    if in_bounds(n)
                        && !matches!(at(n), CellKind::Wall | CellKind::ChannelGate)
                        && component[idx(n)].is_none()
                    {
                        component[idx(n)] = Some(comp_count);
                        queue.push_back(n);
                    }
                }
            }
            comp_count += 1;
        }
        for gate in 0..gate_count {
            let mut sides = BTreeSet::new();
            for p in all().filter(|&p| gate_of[idx(p)] == Some(gate)) {
                for n in neighbours(p) {
                    if in_bounds(n) {
                        if let Some(c) = component[idx(n)] {
                            sides.insert(c);
                        }
                    }
                }
            }
            if sides.len() != 2 {
                return invalid(format!(
                    "channel gate {gate} must separate exactly two regions, touches {}",
                    sides.len()
                ));
            }
        }

        let mut regions = BTreeMap::new();
        let derived = |f: &dyn Fn(CellKind) -> bool| -> BTreeSet<Pos> { all().filter(|&p| f(at(p))).collect() };
        let mut derived_regions: Vec<(String, BTreeSet<Pos>)> = vec![
            ("lever".into(), derived(&|k| k == CellKind::Lever)),
            ("trap".into(), derived(&|k| k == CellKind::Trap)),
            ("treasure".into(), derived(&|k| k == CellKind::Treasure)),
            ("goal".into(), derived(&|k| k == CellKind::GoalRegion)),
            ("channel".into(), derived(&|k| k == CellKind::ChannelGate)),
        ];
        for k in 1..=3u8 {
            derived_regions.push((format!("key{k}"), derived(&|c| c == CellKind::KeySpot(k))));
        }
        for (name, set) in derived_regions {
            if !set.is_empty() {
                regions.insert(name, Region::new(set, width, height));
            }
        }
        let mut seen = BTreeSet::new();
        for (name, rect) in &declared {
            if !seen.insert(name.clone()) {
                return invalid(format!("region {name:?} declared twice"));
            }
            if rect.min.x > rect.max.x || rect.min.y > rect.max.y {
                return invalid(format!("region {name:?} is empty"));
            }
            let set: BTreeSet<Pos> = rect.cells().collect();
            if let Some(p) = set.iter().find(|&&p| !in_bounds(p)) {
                return invalid(format!("region {name:?} has out-of-bounds cell {p}"));
            }
            if let Some(p) = set.iter().find(|&&p| at(p) == CellKind::Wall) {
                return invalid(format!("region {name:?} contains wall cell {p}"));
            }
            regions.insert(name.clone(), Region::new(set, width, height));
        }

        Ok(Self {
            width,
            height,
            cells,
            declared,
            regions,
            agent_starts: [starts[0][0], starts[1][0]],
            box_start: boxes.first().copied(),
            gate_of,
            gate_count,
        })
    }

    /// Serializes back to map text. `parse(to_text())` reproduces the map.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for y in 0..self.height {
            for x in 0..self.width {
                out.push(self.cell(Pos::new(x, y)).to_char());
            }
            out.push('\n');
        }
        if !self.declared.is_empty() {
            out.push_str("[regions]\n");
            for (name, r) in &self.declared {
                out.push_str(&format!(
                    "{name}: ({},{})-({},{})\n",
                    r.min.x, r.min.y, r.max.x, r.max.y
                ));
            }
        }
        out
    }

    pub fn width(&self) -> i32 {
        self.width
    }

    pub fn height(&self) -> i32 {
        self.height
    }

    pub fn in_bounds(&self, p: Pos) -> bool {
        p.x >= 0 && p.y >= 0 && p.x < self.width && p.y < self.height
    }

    /// Cell kind at `p`; out-of-bounds reads as wall.
    pub fn cell(&self, p: Pos) -> CellKind {
        if self.in_bounds(p) {
            self.cells[(p.y * self.width + p.x) as usize]
        } else {
            CellKind::Wall
        }
    }

    pub fn gate_at(&self, p: Pos) -> Option<usize> {
        if self.in_bounds(p) {
            self.gate_of[(p.y * self.width + p.x) as usize]
        } else {
            None
        }
    }

    pub fn gate_count(&self) -> usize {
        self.gate_count
    }

    pub fn agent_starts(&self) -> [Pos; 2] {
        self.agent_starts
    }

    pub fn box_start(&self) -> Option<Pos> {
        self.box_start
    }

    pub fn region(&self, name: &str) -> Option<&Region> {
        self.regions.get(name)
    }

    pub fn regions(&self) -> &BTreeMap<String, Region> {
        &self.regions
    }

    pub fn declared_regions(&self) -> &[(String, Rect)] {
        &self.declared
    }

    pub fn cells_of(&self, kind: CellKind) -> Vec<Pos> {
        (0..self.height)
            .flat_map(|y| (0..self.width).map(move |x| Pos::new(x, y)))
            .filter(|&p| self.cell(p) == kind)
            .collect()
    }

    pub fn key_spot(&self, key: u8) -> Option<Pos> {
        self.cells_of(CellKind::KeySpot(key)).first().copied()
    }
}

fn parse_region_line(line_no: usize, line: &str) -> Result<(String, Rect), MapError> {
    let err = |column: usize, message: &str| MapError::Parse {
        line: line_no,
        column,
        message: message.to_string(),
    };
    let colon = line.find(':').ok_or_else(|| err(1, "expected `name: (x1,y1)-(x2,y2)`"))?;
    let name = line[..colon].trim();
    if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
        return Err(err(1, "region name must be a non-empty identifier"));
    }
    let body: String = line[colon + 1..].chars().filter(|c| !c.is_whitespace()).collect();
    let (a, b) = body
        .split_once(")-(")
        .ok_or_else(|| err(colon + 2, "expected `(x1,y1)-(x2,y2)`"))?;
    let coord = |s: &str| -> Result<Pos, MapError> {
        let s = s.trim_start_matches('(').trim_end_matches(')');
        let (x, y) = s
            .split_once(',')
            .ok_or_else(|| err(colon + 2, "coordinate must be `x,y`"))?;
        let parse = |v: &str| v.parse::<i32>().map_err(|_| err(colon + 2, "coordinate is not an integer"));
        Ok(Pos::new(parse(x)?, parse(y)?))
    };
    Ok((name.to_string(), Rect { min: coord(a)?, max: coord(b)? }))
}
