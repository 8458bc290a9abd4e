//! Maps and knowledge trees shipped with the crate, addressable as
//! `builtin:<file>`.

pub const FINDTREASURE_MAP: &str = include_str!("../assets/findtreasure.map");
pub const FINDTREASURE_TREE: &str = include_str!("../assets/findtreasure.tree");
pub const MOVEBOX_KEYS_MAP: &str = include_str!("../assets/movebox_keys.map");
pub const MOVEBOX_TREE: &str = include_str!("../assets/movebox.tree");
pub const MOVEBOX_TASK0_MAP: &str = include_str!("../assets/movebox_task0.map");
pub const MOVEBOX_TASK0_TREE: &str = include_str!("../assets/movebox_task0.tree");

pub const BUILTIN_PREFIX: &str = "builtin:";

const ALL: [(&str, &str); 6] = [
    ("findtreasure.map", FINDTREASURE_MAP),
    ("findtreasure.tree", FINDTREASURE_TREE),
    ("movebox_keys.map", MOVEBOX_KEYS_MAP),
    ("movebox.tree", MOVEBOX_TREE),
    ("movebox_task0.map", MOVEBOX_TASK0_MAP),
    ("movebox_task0.tree", MOVEBOX_TASK0_TREE),
];

/// Contents of a shipped file by name, with or without the `builtin:` prefix.
pub fn builtin(name: &str) -> Option<&'static str> {
    let name = name.strip_prefix(BUILTIN_PREFIX).unwrap_or(name);
    ALL.iter().find(|(n, _)| *n == name).map(|(_, text)| *text)
}

pub fn names() -> impl Iterator<Item = &'static str> {
    ALL.iter().map(|(n, _)| *n)
}
